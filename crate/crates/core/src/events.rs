//! Sequenced household events for push consumers.
//!
//! Every event gets the next sequence number under one lock, is kept in a
//! bounded backlog for resuming consumers, and is handed to each listener in
//! sequence order. Listeners run under that lock and must not block.

use std::collections::VecDeque;
use std::net::IpAddr;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::exposure::ExposureBucket;
use crate::flowcap::Device;
use crate::guard::FirewallDirective;
use crate::resolver::CompanyRecord;
use crate::stage::StageConfig;
use crate::store::RedactionRequest;

pub const DEFAULT_BACKLOG: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// A storage bucket was created or grew; carries its new totals.
    Bucket {
        bucket: ExposureBucket,
        created: bool,
    },
    /// A destination address was attributed for the first time this run.
    Resolved {
        ip: IpAddr,
        company: CompanyRecord,
    },
    Ruleset {
        version: u64,
        entries: usize,
        inert: usize,
    },
    CurriculumDue {
        modules: Vec<String>,
    },
    Stage {
        config: StageConfig,
    },
    Directive {
        directive: FirewallDirective,
    },
    Device {
        device: Device,
    },
    Redaction {
        request: RedactionRequest,
    },
}

impl Event {
    /// Name used for the SSE `event:` field.
    pub fn name(&self) -> &'static str {
        match self {
            Event::Bucket { .. } => "bucket",
            Event::Resolved { .. } => "resolved",
            Event::Ruleset { .. } => "ruleset",
            Event::CurriculumDue { .. } => "curriculum_due",
            Event::Stage { .. } => "stage",
            Event::Directive { .. } => "directive",
            Event::Device { .. } => "device",
            Event::Redaction { .. } => "redaction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequenced {
    pub seq: u64,
    pub event: Event,
}

/// Backlog answer for a resuming consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct Resume {
    pub events: Vec<Sequenced>,
    /// False when events after the resume point were already evicted.
    pub complete: bool,
}

type Listener = Box<dyn Fn(&Sequenced) + Send + Sync>;

struct Inner {
    next_seq: u64,
    backlog: VecDeque<Sequenced>,
    listeners: Vec<Listener>,
}

pub struct EventLog {
    capacity: usize,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock();
        f.debug_struct("EventLog")
            .field("next_seq", &inner.next_seq)
            .field("backlog", &inner.backlog.len())
            .finish()
    }
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new(DEFAULT_BACKLOG)
    }
}

impl EventLog {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::new(Inner {
                next_seq: 1,
                backlog: VecDeque::new(),
                listeners: Vec::new(),
            }),
        }
    }

    pub fn publish(&self, event: Event) -> u64 {
        let mut inner = self.inner.lock();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let item = Sequenced { seq, event };
        for l in &inner.listeners {
            l(&item);
        }
        if inner.backlog.len() == self.capacity {
            inner.backlog.pop_front();
        }
        inner.backlog.push_back(item);
        seq
    }

    /// Registers a listener and returns the backlog after `after` in the same
    /// critical section, so nothing falls between the two.
    pub fn subscribe(&self, after: u64, listener: Listener) -> Resume {
        let mut inner = self.inner.lock();
        inner.listeners.push(listener);
        Self::resume_locked(&inner, after)
    }

    /// Events with sequence numbers above `after`.
    pub fn since(&self, after: u64) -> Resume {
        Self::resume_locked(&self.inner.lock(), after)
    }

    fn resume_locked(inner: &Inner, after: u64) -> Resume {
        let oldest = inner.backlog.front().map_or(inner.next_seq, |e| e.seq);
        Resume {
            complete: after + 1 >= oldest,
            events: inner.backlog.iter().filter(|e| e.seq > after).cloned().collect(),
        }
    }

    /// Sequence number of the latest event, 0 if none.
    pub fn last_seq(&self) -> u64 {
        self.inner.lock().next_seq - 1
    }

    /// Removes every listener (used on shutdown).
    pub fn clear_listeners(&self) {
        self.inner.lock().listeners.clear();
    }
}
