//! One household: every module wired together behind the stage gates.
//!
//! Writes funnel through a single write lock around the store and the mutable
//! registries; the resolver, enforcer and event log synchronise themselves.
//! Destination lookups happen before the write lock is taken, so a slow
//! provider never stalls readers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::Read;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::{Event, EventLog};
use crate::exposure::{
    compare_periods, AddOutcome, ExposureBucket, ExposureError, ExposureProfile, PeriodComparison, SeriesFilter,
    SeriesPoint, StatsReport,
};
use crate::flowcap::{
    ingest_pcap, Device, DeviceError, DeviceId, DeviceMapEntry, FlowIngest, FlowRecord, IngestError, IngestSummary,
    PacketSource, Salt, DEFAULT_COALESCE_WINDOW_MS,
};
use crate::guard::{
    preview_impact, suggest_similar, BlockImpactPreview, Blocklist, CompanyScope, CompiledRuleSet, DeviceScope,
    DirectiveExport, DirectiveId, DirectiveState, EnforcementAdapter, Enforcer, FirewallDirective, Guard, GuardError,
    ScopeContext, SimulatedAdapter, Suggestion, Verdict,
};
use crate::resolver::{CompanyRecord, FixtureError, HomeRegion, OwnershipSnapshot, Provider, Resolver, ResolverConfig};
use crate::stage::{Feature, Stage, StageConfig, StageError, StageGateError};
use crate::store::{
    FlowQuery, ImportSummary, RedactionRequest, RedactionScope, Store, StoreConfig, StoreError, StoredFlow,
    DEFAULT_RETENTION_MS,
};
use crate::time::{Clock, SystemClock, TimeWindow, DAY_MS};
use crate::tutor::{render, ContextData, Curriculum, CurriculumModule, RenderedModule, TutorError};

const META_STAGE: &str = "stage";
const META_GUARD: &str = "guard";
const META_CURRICULUM: &str = "curriculum";
const META_FIXTURES: &str = "fixtures_path";
const INGEST_BATCH: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum HouseholdError {
    #[error(transparent)]
    StageGate(StageGateError),
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    /// Storage is full or an adapter refused; retrying later may help.
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Internal(String),
}

impl HouseholdError {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.to_owned(),
            message: message.into(),
        }
    }

    /// Stable machine-readable class.
    pub fn code(&self) -> &'static str {
        match self {
            Self::StageGate(_) => "stage_gate",
            Self::Validation { .. } => "validation",
            Self::NotFound(_) => "not_found",
            Self::Conflict(_) => "conflict",
            Self::Unavailable(_) => "unavailable",
            Self::Internal(_) => "internal",
        }
    }
}

impl From<StageGateError> for HouseholdError {
    fn from(e: StageGateError) -> Self {
        Self::StageGate(e)
    }
}

impl From<StageError> for HouseholdError {
    fn from(e: StageError) -> Self {
        match e {
            StageError::InvalidStage(_) => Self::validation("stage", e.to_string()),
            StageError::Regression { .. } => Self::Conflict(e.to_string()),
        }
    }
}

impl From<GuardError> for HouseholdError {
    fn from(e: GuardError) -> Self {
        match e {
            GuardError::StageGate(g) => Self::StageGate(g),
            GuardError::Validation { field, message } => Self::validation(field, message),
            GuardError::UnknownDirective(_) | GuardError::UnknownBlocklist(_) => Self::NotFound(e.to_string()),
            GuardError::EmptyBlocklist(_) => Self::validation("blocklist", e.to_string()),
            GuardError::Conflict(m) => Self::Conflict(m),
            GuardError::Adapter(a) => Self::Unavailable(a.to_string()),
        }
    }
}

impl From<TutorError> for HouseholdError {
    fn from(e: TutorError) -> Self {
        match e {
            TutorError::UnknownModule(_) => Self::NotFound(e.to_string()),
            TutorError::NotDue { .. } => Self::Conflict(e.to_string()),
            _ => Self::Internal(e.to_string()),
        }
    }
}

impl From<ExposureError> for HouseholdError {
    fn from(e: ExposureError) -> Self {
        match e {
            ExposureError::BadWidth { .. } | ExposureError::TooManyPoints(_) => {
                Self::validation("width_ms", e.to_string())
            }
            ExposureError::BadTopN => Self::validation("top_n", e.to_string()),
            _ => Self::Internal(e.to_string()),
        }
    }
}

impl From<StoreError> for HouseholdError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Full { .. } => Self::Unavailable(e.to_string()),
            StoreError::Duplicate(_) | StoreError::Redacted(_) => Self::Conflict(e.to_string()),
            StoreError::InvalidScope(m) => Self::validation("scope", m),
            StoreError::BadRetention(_) => Self::validation("max_age_ms", e.to_string()),
            StoreError::Import(m) => Self::validation("body", m),
            StoreError::Exposure(x) => x.into(),
            _ => Self::Internal(e.to_string()),
        }
    }
}

impl From<DeviceError> for HouseholdError {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::Unknown(_) => Self::NotFound(e.to_string()),
            DeviceError::Conflict { .. } => Self::Conflict(e.to_string()),
            _ => Self::validation("name", e.to_string()),
        }
    }
}

impl From<IngestError> for HouseholdError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => Self::NotFound(e.to_string()),
            IngestError::Corrupt { .. } | IngestError::InvalidWindow(_) => Self::validation("capture", e.to_string()),
            IngestError::Device(d) => d.into(),
            IngestError::Source(_) => Self::Unavailable(e.to_string()),
        }
    }
}

impl From<FixtureError> for HouseholdError {
    fn from(e: FixtureError) -> Self {
        match e {
            FixtureError::Io { .. } => Self::NotFound(e.to_string()),
            FixtureError::Invalid(_) => Self::validation("fixtures", e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HouseholdConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub fixtures_path: Option<PathBuf>,
    pub curriculum_dir: Option<PathBuf>,
    pub home_region: HomeRegion,
    /// Forces the stage at startup, moving backwards if needed.
    pub stage: Option<Stage>,
    pub store: StoreConfig,
    pub resolver: ResolverConfig,
    pub retention_ms: i64,
    pub coalesce_window_ms: i64,
}

impl Default for HouseholdConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            fixtures_path: None,
            curriculum_dir: None,
            home_region: HomeRegion::default(),
            stage: None,
            store: StoreConfig::default(),
            resolver: ResolverConfig::default(),
            retention_ms: DEFAULT_RETENTION_MS,
            coalesce_window_ms: DEFAULT_COALESCE_WINDOW_MS,
        }
    }
}

/// Runtime collaborators that are not plain configuration.
pub struct HouseholdDeps {
    pub salt: Salt,
    pub clock: Arc<dyn Clock>,
    pub provider: Option<Arc<dyn Provider>>,
    pub adapter: Arc<dyn EnforcementAdapter>,
}

impl HouseholdDeps {
    /// System clock, no provider, simulated enforcement.
    pub fn new(salt: Salt) -> Self {
        Self {
            salt,
            clock: Arc::new(SystemClock),
            provider: None,
            adapter: Arc::new(SimulatedAdapter::new()),
        }
    }
}

/// Replay pacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pace {
    AsFastAsPossible,
    /// Capture time runs this many times faster than wall time.
    Speed(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    #[serde(flatten)]
    pub ingest: IngestSummary,
    /// Flows written to the store.
    pub stored: u64,
    /// Flows already stored by an earlier replay of the same capture.
    pub duplicates: u64,
    /// Flows refused because they fall in a just-redacted scope.
    pub refused: u64,
}

/// A directive under construction, for previews before creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveDraft {
    pub device_scope: DeviceScope,
    pub company_scope: CompanyScope,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct GuardState {
    directives: Vec<FirewallDirective>,
    blocklists: Vec<Blocklist>,
    last_version: u64,
}

struct Inner {
    store: Store,
    registry: crate::flowcap::DeviceRegistry,
    guard: Guard,
    curriculum: Curriculum,
    stage: StageConfig,
}

pub struct Household {
    config: HouseholdConfig,
    clock: Arc<dyn Clock>,
    resolver: Resolver,
    enforcer: Enforcer,
    adapter: Arc<dyn EnforcementAdapter>,
    events: EventLog,
    inner: RwLock<Inner>,
    announced: Mutex<HashSet<IpAddr>>,
    last_due: Mutex<Vec<String>>,
    last_sweep_ms: Mutex<i64>,
}

impl std::fmt::Debug for Household {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Household")
            .field("config", &self.config)
            .field("events", &self.events)
            .finish_non_exhaustive()
    }
}

impl Household {
    pub fn open(config: HouseholdConfig, deps: HouseholdDeps) -> Result<Self, HouseholdError> {
        let now = deps.clock.now_ms();
        let store = match &config.data_dir {
            Some(dir) => Store::open(dir, config.store)?,
            None => Store::in_memory(config.store),
        };
        let mut stage: StageConfig = store.meta(META_STAGE).unwrap_or_else(|| StageConfig::new(now));
        if let Some(forced) = config.stage {
            stage.transition(forced, now, true)?;
        }
        let registry = crate::flowcap::DeviceRegistry::with_devices(deps.salt, store.devices().cloned());
        let mut guard = Guard::new();
        if let Some(g) = store.meta::<GuardState>(META_GUARD) {
            guard.restore(g.directives, g.blocklists, g.last_version);
        }
        let mut curriculum = match &config.curriculum_dir {
            Some(dir) => Curriculum::load_dir(dir)?,
            None => Curriculum::sample(),
        };
        if let Some(done) = store.meta::<BTreeMap<String, i64>>(META_CURRICULUM) {
            for (id, at) in done {
                curriculum.restore_completion(&id, at);
            }
        }
        let resolver = Resolver::new(config.resolver, deps.provider);
        let fixtures = config
            .fixtures_path
            .clone()
            .or_else(|| store.meta::<PathBuf>(META_FIXTURES));
        if let Some(path) = &fixtures {
            resolver.load_fixtures(path)?;
        }
        let household = Self {
            config,
            clock: deps.clock,
            resolver,
            enforcer: Enforcer::new(),
            adapter: deps.adapter,
            events: EventLog::default(),
            inner: RwLock::new(Inner {
                store,
                registry,
                guard,
                curriculum,
                stage,
            }),
            announced: Mutex::new(HashSet::new()),
            last_due: Mutex::new(Vec::new()),
            last_sweep_ms: Mutex::new(i64::MIN),
        };
        {
            let mut inner = household.inner.write();
            let stage = inner.stage.clone();
            inner.store.put_meta(META_STAGE, &stage)?;
            household.reapply_locked(&mut inner)?;
        }
        Ok(household)
    }

    pub fn config(&self) -> &HouseholdConfig {
        &self.config
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn resolver(&self) -> &Resolver {
        &self.resolver
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    // ---- ingest ----

    /// Resolves, stores and buckets a batch of flows. Returns the summary
    /// counters for stored, duplicate and refused flows.
    pub fn ingest_flows(&self, flows: Vec<FlowRecord>) -> Result<ReplaySummary, HouseholdError> {
        let now = self.now_ms();
        let resolved: Vec<(FlowRecord, CompanyRecord)> = flows
            .into_iter()
            .map(|f| {
                let c = self.resolver.resolve(f.dst_ip, now);
                (f, c)
            })
            .collect();
        let mut summary = ReplaySummary::default();
        let mut inner = self.inner.write();
        for (flow, company) in resolved {
            if self.announced.lock().insert(flow.dst_ip) {
                self.events.publish(Event::Resolved {
                    ip: flow.dst_ip,
                    company: company.clone(),
                });
            }
            inner.store.put_company(company.clone())?;
            match inner.store.persist_flow(StoredFlow::new(flow, &company), now) {
                Ok(AddOutcome::Bucketed { bucket, created }) => {
                    summary.stored += 1;
                    self.events.publish(Event::Bucket { bucket, created });
                }
                Ok(AddOutcome::Skipped(_)) => summary.stored += 1,
                Err(StoreError::Duplicate(_)) => summary.duplicates += 1,
                Err(StoreError::Redacted(_)) => summary.refused += 1,
                Err(e) => {
                    inner.store.flush()?;
                    return Err(e.into());
                }
            }
        }
        inner.store.flush()?;
        let stale = self.enforcer.current().resolver_generation != self.resolver.generation();
        if stale && inner.guard.directives().any(FirewallDirective::is_enabled) {
            self.reapply_locked(&mut inner)?;
        }
        Ok(summary)
    }

    fn sync_devices(&self, devices: impl Iterator<Item = Device>) -> Result<(), HouseholdError> {
        let mut inner = self.inner.write();
        for d in devices {
            if inner.store.device(&d.device_id) != Some(&d) {
                inner.registry.upsert(d.clone());
                inner.store.put_device(d.clone())?;
                self.events.publish(Event::Device { device: d });
            }
        }
        inner.store.flush()?;
        Ok(())
    }

    /// Drains an ingest pipeline into the store. Stops early when `stop` is set.
    pub fn run_ingest<S: PacketSource>(
        &self,
        mut ingest: FlowIngest<S>,
        pace: Pace,
        stop: Option<&AtomicBool>,
    ) -> Result<ReplaySummary, HouseholdError> {
        let mut total = ReplaySummary::default();
        let started = Instant::now();
        let mut first_ts: Option<i64> = None;
        let mut batch = Vec::with_capacity(INGEST_BATCH);
        let mut known: HashSet<DeviceId> = self
            .inner
            .read()
            .registry
            .devices()
            .map(|d| d.device_id.clone())
            .collect();
        loop {
            if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
                break;
            }
            let next = ingest.next();
            let done = next.is_none();
            if let Some(item) = next {
                let flow = item?;
                if let Pace::Speed(speed) = pace {
                    let first = *first_ts.get_or_insert(flow.window_start_ms);
                    let due = Duration::from_secs_f64((flow.window_start_ms - first) as f64 / 1000.0 / speed);
                    if let Some(wait) = due.checked_sub(started.elapsed()) {
                        self.flush_batch(&mut batch, &mut ingest, &mut known, &mut total)?;
                        std::thread::sleep(wait);
                    }
                }
                batch.push(flow);
            }
            if batch.len() >= INGEST_BATCH
                || (done && !batch.is_empty())
                || (pace != Pace::AsFastAsPossible && !batch.is_empty())
            {
                self.flush_batch(&mut batch, &mut ingest, &mut known, &mut total)?;
            }
            if done {
                break;
            }
        }
        self.flush_batch(&mut batch, &mut ingest, &mut known, &mut total)?;
        let (registry, ingest_summary) = ingest.into_parts();
        self.sync_devices(registry.devices().cloned())?;
        total.ingest = ingest_summary;
        Ok(total)
    }

    fn flush_batch<S: PacketSource>(
        &self,
        batch: &mut Vec<FlowRecord>,
        ingest: &mut FlowIngest<S>,
        known: &mut HashSet<DeviceId>,
        total: &mut ReplaySummary,
    ) -> Result<(), HouseholdError> {
        if batch.is_empty() {
            return Ok(());
        }
        let fresh: Vec<Device> = batch
            .iter()
            .filter(|f| known.insert(f.device_id.clone()))
            .filter_map(|f| ingest.registry().get(&f.device_id).cloned())
            .collect();
        if !fresh.is_empty() {
            self.sync_devices(fresh.into_iter())?;
        }
        let s = self.ingest_flows(std::mem::take(batch))?;
        total.stored += s.stored;
        total.duplicates += s.duplicates;
        total.refused += s.refused;
        Ok(())
    }

    /// Replays a capture file. Flow ids derive from the file's content hash,
    /// so replaying the same capture twice stores nothing new.
    pub fn replay_pcap(
        &self,
        path: &Path,
        device_map: &[DeviceMapEntry],
        pace: Pace,
    ) -> Result<ReplaySummary, HouseholdError> {
        let session = content_hash(path)?;
        let registry = self.inner.read().registry.clone();
        let ingest = ingest_pcap(path, device_map, registry, self.config.coalesce_window_ms, &session)?;
        self.run_ingest(ingest, pace, None)
    }

    /// Captures from a LAN interface until `stop` is set. Needs CAP_NET_RAW.
    pub fn capture_live(&self, interface: &str, stop: &AtomicBool) -> Result<ReplaySummary, HouseholdError> {
        let source = crate::flowcap::live::RawSocketSource::open(interface)?;
        let registry = self.inner.read().registry.clone();
        let session = format!("live-{interface}-{}", self.now_ms());
        let ingest = FlowIngest::new(
            source,
            registry,
            crate::flowcap::Coalescer::new(self.config.coalesce_window_ms, session),
        );
        self.run_ingest(ingest, Pace::AsFastAsPossible, Some(stop))
    }

    // ---- devices and companies ----

    pub fn devices(&self) -> Vec<Device> {
        self.inner.read().store.devices().cloned().collect()
    }

    pub fn device_names(&self) -> BTreeMap<DeviceId, String> {
        self.inner
            .read()
            .store
            .devices()
            .map(|d| (d.device_id.clone(), d.friendly_name.clone()))
            .collect()
    }

    pub fn rename_device(&self, id: &DeviceId, name: &str) -> Result<Device, HouseholdError> {
        let mut inner = self.inner.write();
        let device = inner.registry.rename(id, name)?;
        inner.store.put_device(device.clone())?;
        inner.store.flush()?;
        self.events.publish(Event::Device { device: device.clone() });
        Ok(device)
    }

    /// Companies seen in stored traffic, by name.
    pub fn companies(&self) -> Vec<CompanyRecord> {
        self.inner.read().store.companies().cloned().collect()
    }

    pub fn load_fixtures(&self, path: &Path) -> Result<usize, HouseholdError> {
        let n = self.resolver.load_fixtures(path)?;
        let mut inner = self.inner.write();
        inner.store.put_meta(META_FIXTURES, &path)?;
        self.announced.lock().clear();
        self.reapply_locked(&mut inner)?;
        Ok(n)
    }

    // ---- stage ----

    pub fn stage(&self) -> StageConfig {
        self.inner.read().stage.clone()
    }

    /// Moves the household to `target`. Callers check the admin credential.
    pub fn set_stage(&self, target: Stage, allow_regression: bool) -> Result<StageConfig, HouseholdError> {
        let now = self.now_ms();
        let config = {
            let mut inner = self.inner.write();
            let mut next = inner.stage.clone();
            next.transition(target, now, allow_regression)?;
            inner.store.put_meta(META_STAGE, &next)?;
            inner.stage = next.clone();
            next
        };
        self.events.publish(Event::Stage { config: config.clone() });
        self.check_due(now);
        Ok(config)
    }

    // ---- exposure reads ----

    pub fn buckets(&self, filter: &SeriesFilter, window: &TimeWindow) -> Vec<ExposureBucket> {
        self.inner.read().store.exposure().buckets(filter, window)
    }

    pub fn timeseries(
        &self,
        filter: &SeriesFilter,
        window: &TimeWindow,
        width_ms: i64,
    ) -> Result<Vec<SeriesPoint>, HouseholdError> {
        Ok(self
            .inner
            .read()
            .store
            .exposure()
            .timeseries(filter, window, width_ms)?)
    }

    pub fn profile(&self, filter: &SeriesFilter, window: &TimeWindow) -> ExposureProfile {
        self.inner.read().store.exposure().profile_filtered(filter, window)
    }

    pub fn stats_report(
        &self,
        window: &TimeWindow,
        top_n: u32,
        home: Option<&HomeRegion>,
    ) -> Result<StatsReport, HouseholdError> {
        let home = home.unwrap_or(&self.config.home_region);
        Ok(self.inner.read().store.exposure().stats_report(window, top_n, home)?)
    }

    pub fn compare_periods(&self, a: &TimeWindow, b: &TimeWindow, filter: &SeriesFilter) -> PeriodComparison {
        compare_periods(self.inner.read().store.exposure(), a, b, filter)
    }

    pub fn flows(&self, q: &FlowQuery) -> Vec<StoredFlow> {
        self.inner.read().store.query_flows(q)
    }

    pub fn export_flows(&self, q: &FlowQuery, out: impl std::io::Write) -> Result<u64, HouseholdError> {
        self.inner
            .read()
            .store
            .export_flows(q, out)
            .map_err(|e| HouseholdError::Internal(e.to_string()))
    }

    pub fn import_flows(&self, input: impl std::io::BufRead) -> Result<ImportSummary, HouseholdError> {
        let now = self.now_ms();
        Ok(self.inner.write().store.import_flows(input, now)?)
    }

    // ---- directives ----

    fn with_scope_ctx<T>(inner: &Inner, snapshot: &OwnershipSnapshot, f: impl FnOnce(&ScopeContext<'_>) -> T) -> T {
        let devices: BTreeMap<DeviceId, String> = inner
            .store
            .devices()
            .map(|d| (d.device_id.clone(), d.friendly_name.clone()))
            .collect();
        let observed: BTreeSet<String> = inner.store.companies().map(|c| c.name.clone()).collect();
        f(&ScopeContext {
            devices: &devices,
            snapshot,
            observed_companies: &observed,
        })
    }

    fn persist_guard(inner: &mut Inner) -> Result<(), HouseholdError> {
        let state = GuardState {
            directives: inner.guard.directives().cloned().collect(),
            blocklists: inner.guard.blocklists().values().cloned().collect(),
            last_version: inner.guard.last_version(),
        };
        inner.store.put_meta(META_GUARD, &state)?;
        Ok(())
    }

    /// Compiles enabled directives and installs them. On adapter failure the
    /// previous rule set stays in force and the version counter still moves on,
    /// so versions are never reused.
    fn reapply_locked(&self, inner: &mut Inner) -> Result<CompiledRuleSet, HouseholdError> {
        let snapshot = self.resolver.snapshot();
        let rules = inner.guard.compile(&snapshot, self.now_ms());
        Self::persist_guard(inner)?;
        self.enforcer
            .apply(rules.clone(), self.adapter.as_ref())
            .map_err(|e| HouseholdError::Unavailable(e.to_string()))?;
        self.events.publish(Event::Ruleset {
            version: rules.version,
            entries: rules.entries.len(),
            inert: rules.inert.len(),
        });
        Ok(rules)
    }

    pub fn directives(&self) -> Vec<FirewallDirective> {
        self.inner.read().guard.directives().cloned().collect()
    }

    pub fn directive(&self, id: &DirectiveId) -> Result<FirewallDirective, HouseholdError> {
        Ok(self.inner.read().guard.directive(id)?.clone())
    }

    pub fn blocklists(&self) -> Vec<Blocklist> {
        self.inner.read().guard.blocklists().values().cloned().collect()
    }

    pub fn create_directive(&self, draft: DirectiveDraft) -> Result<FirewallDirective, HouseholdError> {
        let now = self.now_ms();
        let snapshot = self.resolver.snapshot();
        let mut inner = self.inner.write();
        let stage = inner.stage.clone();
        let mut guard = inner.guard.clone();
        let d = Self::with_scope_ctx(&inner, &snapshot, |ctx| {
            guard.create(draft.device_scope, draft.company_scope, &stage, ctx, now)
        })?;
        inner.guard = guard;
        Self::persist_guard(&mut inner)?;
        self.events.publish(Event::Directive { directive: d.clone() });
        Ok(d)
    }

    /// Arms or disarms a directive. The change only sticks if the new rule
    /// set installs; otherwise the directive keeps its previous state.
    pub fn set_directive_state(
        &self,
        id: &DirectiveId,
        state: DirectiveState,
    ) -> Result<(FirewallDirective, u64), HouseholdError> {
        let mut inner = self.inner.write();
        let stage = inner.stage.clone();
        let before = inner.guard.clone();
        let d = inner.guard.set_state(id, state, &stage)?;
        match self.reapply_locked(&mut inner) {
            Ok(rules) => {
                self.events.publish(Event::Directive { directive: d.clone() });
                Ok((d, rules.version))
            }
            Err(e) => {
                let version = inner.guard.last_version();
                inner.guard = before;
                inner.guard.restore([], [], version);
                Self::persist_guard(&mut inner)?;
                Err(e)
            }
        }
    }

    pub fn put_blocklist(&self, list: Blocklist) -> Result<Blocklist, HouseholdError> {
        let mut inner = self.inner.write();
        let stage = inner.stage.clone();
        let list = inner.guard.put_blocklist(list, &stage)?;
        self.reapply_locked(&mut inner)?;
        Ok(list)
    }

    pub fn set_blocklist_enabled(&self, id: &str, enabled: bool) -> Result<Blocklist, HouseholdError> {
        let mut inner = self.inner.write();
        let stage = inner.stage.clone();
        let list = inner.guard.set_blocklist_enabled(id, enabled, &stage)?;
        self.reapply_locked(&mut inner)?;
        Ok(list)
    }

    /// What a directive (existing or draft) would have blocked in `window`.
    pub fn preview(
        &self,
        target: Result<&DirectiveId, &DirectiveDraft>,
        window: &TimeWindow,
    ) -> Result<BlockImpactPreview, HouseholdError> {
        let snapshot = self.resolver.snapshot();
        let inner = self.inner.read();
        inner.stage.require(Feature::Controls)?;
        let directive = match target {
            Ok(id) => inner.guard.directive(id)?.clone(),
            Err(draft) => {
                let mut probe = inner.guard.clone();
                let stage = StageConfig::at(Stage::Controls, 0);
                let mut d = Self::with_scope_ctx(&inner, &snapshot, |ctx| {
                    probe.create(draft.device_scope.clone(), draft.company_scope.clone(), &stage, ctx, 0)
                })?;
                d.id = DirectiveId("draft".to_owned());
                d
            }
        };
        let flows = inner.store.query_flows(&FlowQuery {
            window: Some(*window),
            ..Default::default()
        });
        Ok(preview_impact(
            &directive,
            window,
            &snapshot,
            inner.guard.blocklists(),
            flows.iter().map(|f| (&f.record, f.company.as_str())),
        ))
    }

    pub fn suggestions(&self, id: &DirectiveId) -> Result<Vec<Suggestion>, HouseholdError> {
        let snapshot = self.resolver.snapshot();
        let inner = self.inner.read();
        inner.stage.require(Feature::Controls)?;
        let d = inner.guard.directive(id)?;
        let blocked = inner.guard.blocked_companies(&d.device_scope, &snapshot);
        Ok(suggest_similar(
            d,
            &snapshot,
            inner.store.exposure(),
            &blocked,
            self.now_ms(),
        ))
    }

    pub fn ruleset(&self) -> Arc<CompiledRuleSet> {
        self.enforcer.current()
    }

    pub fn decide(&self, flow: &FlowRecord) -> (Verdict, u64) {
        self.enforcer.decide(flow)
    }

    pub fn export_directives(&self) -> DirectiveExport {
        self.inner.read().guard.export()
    }

    pub fn import_directives(&self, export: DirectiveExport) -> Result<Vec<FirewallDirective>, HouseholdError> {
        let snapshot = self.resolver.snapshot();
        let mut inner = self.inner.write();
        let stage = inner.stage.clone();
        let mut guard = inner.guard.clone();
        let imported = Self::with_scope_ctx(&inner, &snapshot, |ctx| guard.import(export, &stage, ctx))?;
        inner.guard = guard;
        Self::persist_guard(&mut inner)?;
        for d in &imported {
            self.events.publish(Event::Directive { directive: d.clone() });
        }
        Ok(imported)
    }

    // ---- curriculum ----

    pub fn curriculum_modules(&self) -> Vec<CurriculumModule> {
        self.inner.read().curriculum.modules().cloned().collect()
    }

    pub fn curriculum_due(&self) -> Vec<String> {
        let inner = self.inner.read();
        inner.curriculum.due(&inner.stage, self.now_ms())
    }

    /// Context for slots over the trailing `lookback_ms` (all time if `None`).
    pub fn curriculum_context(&self, window: &TimeWindow) -> ContextData {
        let inner = self.inner.read();
        let names: BTreeMap<DeviceId, String> = inner
            .store
            .devices()
            .map(|d| (d.device_id.clone(), d.friendly_name.clone()))
            .collect();
        ContextData::gather(
            *window,
            inner.store.flows().map(|f| &f.record),
            &names,
            inner.store.exposure(),
        )
    }

    pub fn render_module(&self, id: &str, window: &TimeWindow) -> Result<RenderedModule, HouseholdError> {
        let module = {
            let inner = self.inner.read();
            inner.stage.require(Feature::Curriculum)?;
            inner.curriculum.get(id)?.clone()
        };
        Ok(render(&module, &self.curriculum_context(window))?)
    }

    pub fn complete_module(&self, id: &str) -> Result<CurriculumModule, HouseholdError> {
        let now = self.now_ms();
        let module = {
            let mut inner = self.inner.write();
            inner.stage.require(Feature::Curriculum)?;
            let stage = inner.stage.clone();
            let m = inner.curriculum.mark_complete(id, &stage, now)?;
            let done: BTreeMap<String, i64> = inner
                .curriculum
                .modules()
                .filter_map(|m| m.completed_at_ms.map(|t| (m.id.clone(), t)))
                .collect();
            inner.store.put_meta(META_CURRICULUM, &done)?;
            m
        };
        self.check_due(now);
        Ok(module)
    }

    fn check_due(&self, now: i64) {
        let due = {
            let inner = self.inner.read();
            inner.curriculum.due(&inner.stage, now)
        };
        let mut last = self.last_due.lock();
        if *last != due {
            *last = due.clone();
            self.events.publish(Event::CurriculumDue { modules: due });
        }
    }

    // ---- redaction and retention ----

    /// Removes everything in scope from storage, buckets, device records and
    /// resolver memory of addresses only the removed flows referenced.
    pub fn redact(&self, scope: RedactionScope) -> Result<RedactionRequest, HouseholdError> {
        let now = self.now_ms();
        let request = {
            let mut inner = self.inner.write();
            let width = inner.store.exposure().storage_width_ms();
            let touched: BTreeSet<IpAddr> = inner
                .store
                .flows()
                .filter(|f| scope.covers(f, width))
                .map(|f| f.record.dst_ip)
                .collect();
            let request = inner.store.redact(scope.clone(), now, now)?;
            if let RedactionScope::Device { device_id } = &scope {
                inner.registry.remove(device_id);
            }
            let still: HashSet<IpAddr> = inner.store.flows().map(|f| f.record.dst_ip).collect();
            let orphaned: Vec<IpAddr> = touched.into_iter().filter(|ip| !still.contains(ip)).collect();
            self.resolver.purge_addresses(&orphaned);
            let mut announced = self.announced.lock();
            for ip in &orphaned {
                announced.remove(ip);
            }
            request
        };
        self.events.publish(Event::Redaction {
            request: request.clone(),
        });
        Ok(request)
    }

    pub fn audit_log(&self) -> Vec<RedactionRequest> {
        self.inner.read().store.audit_log().to_vec()
    }

    pub fn retention_sweep(&self) -> Result<u64, HouseholdError> {
        let now = self.now_ms();
        *self.last_sweep_ms.lock() = now;
        Ok(self
            .inner
            .write()
            .store
            .retention_sweep(self.config.retention_ms, now)?)
    }

    /// Periodic housekeeping: curriculum-due notices and a daily sweep.
    pub fn tick(&self) -> Result<(), HouseholdError> {
        let now = self.now_ms();
        self.check_due(now);
        let last = *self.last_sweep_ms.lock();
        if last == i64::MIN || now - last >= DAY_MS {
            self.retention_sweep()?;
        }
        Ok(())
    }
}

fn content_hash(path: &Path) -> Result<String, HouseholdError> {
    let io = |e: std::io::Error| {
        HouseholdError::from(IngestError::Io {
            path: path.display().to_string(),
            source: e,
        })
    };
    let mut f = File::open(path).map_err(io)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("pcap-{}", hex::encode(&h.finalize()[..8])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::tests::flow;
    use crate::resolver::FixtureDb;
    use crate::time::ManualClock;

    const FIXTURE: &str = "\
198.51.100.0/24\tAcme\t-\tUS\tNONE
203.0.113.0/24\tBeta\t-\tDE\tNONE
";

    fn household(stage: Stage) -> Household {
        let deps = HouseholdDeps {
            clock: Arc::new(ManualClock::new(10 * DAY_MS)),
            ..HouseholdDeps::new(Salt::new(b"test".to_vec()).unwrap())
        };
        let h = Household::open(
            HouseholdConfig {
                stage: Some(stage),
                ..Default::default()
            },
            deps,
        )
        .unwrap();
        h.resolver.set_fixtures(FixtureDb::parse(FIXTURE).unwrap());
        let mut inner = h.inner.write();
        for d in ["d1", "d2"] {
            inner
                .store
                .put_device(Device {
                    device_id: d.into(),
                    friendly_name: format!("{d}-name"),
                    first_seen_ms: 0,
                    last_seen_ms: 0,
                })
                .unwrap();
        }
        drop(inner);
        h
    }

    #[test]
    fn ingest_emits_bucket_events_and_dedupes() {
        let h = household(Stage::Display);
        let flows = vec![
            flow("1", "d1", "198.51.100.1", 0, 10),
            flow("2", "d2", "203.0.113.1", 0, 20),
        ];
        let s = h.ingest_flows(flows.clone()).unwrap();
        assert_eq!((s.stored, s.duplicates), (2, 0));
        assert_eq!(h.ingest_flows(flows).unwrap().duplicates, 2);
        let created = h
            .events()
            .since(0)
            .events
            .iter()
            .filter(|e| matches!(e.event, Event::Bucket { created: true, .. }))
            .count();
        assert_eq!(created, 2);
        assert_eq!(h.companies().len(), 2);
    }

    #[test]
    fn controls_need_stage_three() {
        let h = household(Stage::Curriculum);
        let draft = DirectiveDraft {
            device_scope: DeviceScope::All,
            company_scope: CompanyScope::Company { name: "Acme".into() },
        };
        assert!(matches!(
            h.create_directive(draft.clone()),
            Err(HouseholdError::StageGate(_))
        ));
        h.set_stage(Stage::Controls, false).unwrap();
        let d = h.create_directive(draft).unwrap();
        assert_eq!(d.state, DirectiveState::Disabled);
        let (_, v) = h.set_directive_state(&d.id, DirectiveState::Enabled).unwrap();
        assert_eq!(h.ruleset().version, v);
        assert_eq!(h.decide(&flow("x", "d1", "198.51.100.9", 0, 1)).0, Verdict::Block);
    }

    #[test]
    fn failed_install_leaves_directive_disarmed() {
        let sim = Arc::new(SimulatedAdapter::new());
        let deps = HouseholdDeps {
            adapter: sim.clone(),
            ..HouseholdDeps::new(Salt::new(b"t".to_vec()).unwrap())
        };
        let h = Household::open(
            HouseholdConfig {
                stage: Some(Stage::Controls),
                ..Default::default()
            },
            deps,
        )
        .unwrap();
        h.resolver.set_fixtures(FixtureDb::parse(FIXTURE).unwrap());
        let d = h
            .create_directive(DirectiveDraft {
                device_scope: DeviceScope::All,
                company_scope: CompanyScope::Company { name: "Acme".into() },
            })
            .unwrap();
        let before = h.ruleset().version;
        sim.fail_next_install();
        assert!(matches!(
            h.set_directive_state(&d.id, DirectiveState::Enabled),
            Err(HouseholdError::Unavailable(_))
        ));
        assert_eq!(h.directive(&d.id).unwrap().state, DirectiveState::Disabled);
        assert_eq!(h.ruleset().version, before);
        let (_, v) = h.set_directive_state(&d.id, DirectiveState::Enabled).unwrap();
        assert!(v > before + 1, "versions are never reused");
    }

    #[test]
    fn redaction_purges_resolver_memory_and_devices() {
        let h = household(Stage::Display);
        h.ingest_flows(vec![
            flow("1", "d1", "198.51.100.1", 0, 10),
            flow("2", "d2", "203.0.113.1", 0, 20),
        ])
        .unwrap();
        let r = h.redact(RedactionScope::Device { device_id: "d1".into() }).unwrap();
        assert_eq!(r.flows_removed, 1);
        assert!(h.devices().iter().all(|d| d.device_id.as_str() != "d1"));
        assert_eq!(h.audit_log().len(), 1);
        assert!(h
            .flows(&FlowQuery {
                device: Some("d1".into()),
                ..Default::default()
            })
            .is_empty());
    }

    #[test]
    fn curriculum_gating_and_completion() {
        let h = household(Stage::Display);
        assert!(h.curriculum_due().is_empty());
        assert!(matches!(
            h.render_module("internet-basics", &TimeWindow::all()),
            Err(HouseholdError::StageGate(_))
        ));
        h.set_stage(Stage::Curriculum, false).unwrap();
        assert_eq!(h.curriculum_due(), ["internet-basics"]);
        let r = h.render_module("internet-basics", &TimeWindow::all()).unwrap();
        assert!(!r.body.contains("{{"));
        h.complete_module("internet-basics").unwrap();
        assert!(h.curriculum_due().is_empty());
        assert!(matches!(
            h.complete_module("taking-control"),
            Err(HouseholdError::Conflict(_))
        ));
    }

    #[test]
    fn state_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let open = || {
            let deps = HouseholdDeps::new(Salt::new(b"s".to_vec()).unwrap());
            Household::open(
                HouseholdConfig {
                    data_dir: Some(dir.path().to_owned()),
                    ..Default::default()
                },
                deps,
            )
            .unwrap()
        };
        {
            let h = open();
            h.set_stage(Stage::Controls, false).unwrap();
            h.ingest_flows(vec![flow("1", "d1", "198.51.100.1", 0, 10)]).unwrap();
        }
        let h = open();
        assert_eq!(h.stage().stage(), Stage::Controls);
        assert_eq!(h.flows(&FlowQuery::default()).len(), 1);
    }
}
