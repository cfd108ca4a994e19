//! Core of the hearth home-network privacy gateway.
//!
//! Packets are reduced to header-level [`flowcap::FlowRecord`]s, destinations are
//! enriched with owning organisation and jurisdiction by the [`resolver`], and the
//! resulting flows feed per-company [`exposure`] models. The [`guard`] compiles
//! human-level block directives to IP match sets, [`tutor`] schedules curriculum
//! content, and the [`store`] keeps everything durable and redactable.
//! [`household::Household`] ties the pieces together behind the deployment
//! [`stage`] gates.

pub mod events;
pub mod exposure;
pub mod fixture_a;
pub mod flowcap;
pub mod guard;
pub mod household;
pub mod resolver;
pub mod stage;
pub mod store;
pub mod synth;
pub mod time;
pub mod tutor;

pub use household::{Household, HouseholdConfig, HouseholdError};
pub use stage::{Feature, Stage, StageConfig};
pub use time::{Clock, ManualClock, SystemClock, TimeWindow};
