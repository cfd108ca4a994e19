//! Per-device, per-company exposure over time.
//!
//! Flows are folded into fixed-width storage buckets keyed by
//! `(bucket_start, device, company)`. Every view (time series, aggregate
//! profile, report statistics) is computed from those buckets, so their totals
//! agree exactly.

mod export;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowcap::{DeviceId, Direction, FlowId, FlowRecord, Locality};
use crate::resolver::{CompanyRecord, Jurisdiction};
use crate::time::{align_down, TimeWindow, MINUTE_MS};

pub use export::{profile_csv, report_csv, ExportError};
pub use report::{compare_periods, Change, PeriodComparison, StatsReport};

pub const STORAGE_WIDTH_MS: i64 = MINUTE_MS;
/// Upper bound on points in one time-series response.
pub const MAX_SERIES_POINTS: i64 = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExposureError {
    #[error("flow {0} was already added")]
    Duplicate(FlowId),
    #[error("bucket width {requested} ms is not a positive multiple of the storage width {storage} ms")]
    BadWidth { requested: i64, storage: i64 },
    #[error("series would have {0} points; narrow the window or widen the buckets")]
    TooManyPoints(i64),
    #[error("top_n must be at least 1")]
    BadTopN,
    #[error("bucket start {start} is not aligned to {width} ms")]
    Misaligned { start: i64, width: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureBucket {
    pub bucket_start_ms: i64,
    pub bucket_width_ms: i64,
    pub device_id: DeviceId,
    pub company: String,
    pub jurisdiction: Jurisdiction,
    pub byte_count: u64,
    pub packet_count: u64,
    /// Distinct remote addresses behind this bucket.
    #[serde(default)]
    pub destinations: BTreeSet<IpAddr>,
}

/// Why a flow produced no bucket update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Local,
    Inbound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AddOutcome {
    Bucketed { bucket: ExposureBucket, created: bool },
    Skipped(SkipReason),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesFilter {
    #[serde(default)]
    pub device: Option<DeviceId>,
    #[serde(default)]
    pub company: Option<String>,
}

impl SeriesFilter {
    pub fn matches(&self, device: &DeviceId, company: &str) -> bool {
        self.device.as_ref().is_none_or(|d| d == device) && self.company.as_deref().is_none_or(|c| c == company)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub bucket_start_ms: i64,
    pub byte_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub device_id: DeviceId,
    pub company: String,
    pub jurisdiction: Jurisdiction,
    pub byte_count: u64,
    pub packet_count: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureProfile {
    pub window: TimeWindow,
    pub total_bytes: u64,
    pub total_packets: u64,
    pub rows: Vec<ProfileRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct BucketKey {
    start: i64,
    device: DeviceId,
    company: String,
}

#[derive(Debug, Clone)]
struct Cell {
    jurisdiction: Jurisdiction,
    bytes: u64,
    packets: u64,
    destinations: BTreeSet<IpAddr>,
}

/// What a redaction removes from the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BucketScope {
    Device(DeviceId),
    Company(String),
    /// Buckets whose start lies in the window.
    Starts(TimeWindow),
}

#[derive(Debug, Clone)]
pub struct ExposureModel {
    width_ms: i64,
    include_inbound: bool,
    cells: BTreeMap<BucketKey, Cell>,
    seen: HashSet<FlowId>,
}

impl Default for ExposureModel {
    fn default() -> Self {
        Self::new(STORAGE_WIDTH_MS, false)
    }
}

impl ExposureModel {
    pub fn new(width_ms: i64, include_inbound: bool) -> Self {
        assert!(width_ms > 0, "storage width must be positive");
        Self {
            width_ms,
            include_inbound,
            cells: BTreeMap::new(),
            seen: HashSet::new(),
        }
    }

    pub fn storage_width_ms(&self) -> i64 {
        self.width_ms
    }

    pub fn include_inbound(&self) -> bool {
        self.include_inbound
    }

    pub fn bucket_count(&self) -> usize {
        self.cells.len()
    }

    pub fn has_seen(&self, id: &FlowId) -> bool {
        self.seen.contains(id)
    }

    /// Whether a flow would contribute to buckets under this model's policy.
    pub fn counts(&self, record: &FlowRecord) -> bool {
        record.locality == Locality::External && (self.include_inbound || record.direction == Direction::Outbound)
    }

    pub fn add_flow(&mut self, record: &FlowRecord, company: &CompanyRecord) -> Result<AddOutcome, ExposureError> {
        if self.seen.contains(&record.id) {
            return Err(ExposureError::Duplicate(record.id.clone()));
        }
        self.seen.insert(record.id.clone());
        if record.locality == Locality::Local {
            return Ok(AddOutcome::Skipped(SkipReason::Local));
        }
        if record.direction == Direction::Inbound && !self.include_inbound {
            return Ok(AddOutcome::Skipped(SkipReason::Inbound));
        }
        let key = BucketKey {
            start: align_down(record.window_start_ms, self.width_ms),
            device: record.device_id.clone(),
            company: company.name.clone(),
        };
        let created = !self.cells.contains_key(&key);
        let cell = self.cells.entry(key.clone()).or_insert_with(|| Cell {
            jurisdiction: company.jurisdiction.clone(),
            bytes: 0,
            packets: 0,
            destinations: BTreeSet::new(),
        });
        cell.bytes += record.byte_count;
        cell.packets += record.packet_count;
        cell.destinations.insert(record.dst_ip);
        Ok(AddOutcome::Bucketed {
            bucket: Self::to_bucket(self.width_ms, &key, cell),
            created,
        })
    }

    /// Merges a previously exported bucket (used when reloading storage).
    pub fn restore_bucket(&mut self, b: &ExposureBucket) -> Result<(), ExposureError> {
        if b.bucket_width_ms != self.width_ms || b.bucket_start_ms.rem_euclid(self.width_ms) != 0 {
            return Err(ExposureError::Misaligned {
                start: b.bucket_start_ms,
                width: self.width_ms,
            });
        }
        let key = BucketKey {
            start: b.bucket_start_ms,
            device: b.device_id.clone(),
            company: b.company.clone(),
        };
        let cell = self.cells.entry(key).or_insert_with(|| Cell {
            jurisdiction: b.jurisdiction.clone(),
            bytes: 0,
            packets: 0,
            destinations: BTreeSet::new(),
        });
        cell.bytes += b.byte_count;
        cell.packets += b.packet_count;
        cell.destinations.extend(b.destinations.iter().copied());
        Ok(())
    }

    /// Marks flow ids as consumed without bucketing (reload path).
    pub fn restore_seen(&mut self, ids: impl IntoIterator<Item = FlowId>) {
        self.seen.extend(ids);
    }

    pub fn seen_ids(&self) -> impl Iterator<Item = &FlowId> {
        self.seen.iter()
    }

    /// Every bucket, in key order.
    pub fn all_buckets(&self) -> Vec<ExposureBucket> {
        self.cells
            .iter()
            .map(|(k, c)| Self::to_bucket(self.width_ms, k, c))
            .collect()
    }

    /// Removes every bucket in scope; returns the removed buckets.
    pub fn remove(&mut self, scope: &BucketScope) -> Vec<ExposureBucket> {
        let doomed: Vec<BucketKey> = self
            .cells
            .keys()
            .filter(|k| match scope {
                BucketScope::Device(d) => &k.device == d,
                BucketScope::Company(c) => &k.company == c,
                BucketScope::Starts(w) => w.contains(k.start),
            })
            .cloned()
            .collect();
        doomed
            .into_iter()
            .map(|k| {
                let cell = self.cells.remove(&k).expect("key collected above");
                Self::to_bucket(self.width_ms, &k, &cell)
            })
            .collect()
    }

    fn to_bucket(width_ms: i64, key: &BucketKey, cell: &Cell) -> ExposureBucket {
        ExposureBucket {
            bucket_start_ms: key.start,
            bucket_width_ms: width_ms,
            device_id: key.device.clone(),
            company: key.company.clone(),
            jurisdiction: cell.jurisdiction.clone(),
            byte_count: cell.bytes,
            packet_count: cell.packets,
            destinations: cell.destinations.clone(),
        }
    }

    fn in_window<'a>(&'a self, window: &'a TimeWindow) -> impl Iterator<Item = (&'a BucketKey, &'a Cell)> + 'a {
        let lo = BucketKey {
            start: window.start_ms,
            device: DeviceId(String::new()),
            company: String::new(),
        };
        self.cells.range(lo..).take_while(move |(k, _)| k.start < window.end_ms)
    }

    /// Storage buckets whose start lies in `window`, in key order.
    pub fn buckets(&self, filter: &SeriesFilter, window: &TimeWindow) -> Vec<ExposureBucket> {
        self.in_window(window)
            .filter(|(k, _)| filter.matches(&k.device, &k.company))
            .map(|(k, c)| Self::to_bucket(self.width_ms, k, c))
            .collect()
    }

    /// Earliest bucket start to one past the latest bucket end.
    pub fn extent(&self) -> Option<TimeWindow> {
        let first = self.cells.keys().next()?.start;
        let last = self.cells.keys().map(|k| k.start).max()?;
        TimeWindow::new(first, last + self.width_ms).ok()
    }

    /// Byte series at `width_ms`, covering `window` with zero-filled gaps.
    /// Point `t` sums storage buckets starting in `[t, t + width)` that also
    /// start inside the window.
    pub fn timeseries(
        &self,
        filter: &SeriesFilter,
        window: &TimeWindow,
        width_ms: i64,
    ) -> Result<Vec<SeriesPoint>, ExposureError> {
        if width_ms <= 0 || width_ms % self.width_ms != 0 {
            return Err(ExposureError::BadWidth {
                requested: width_ms,
                storage: self.width_ms,
            });
        }
        let first = align_down(window.start_ms, width_ms);
        let last = align_down(window.end_ms - 1, width_ms);
        let n = (last - first) / width_ms + 1;
        if n > MAX_SERIES_POINTS {
            return Err(ExposureError::TooManyPoints(n));
        }
        let mut points: Vec<SeriesPoint> = (0..n)
            .map(|i| SeriesPoint {
                bucket_start_ms: first + i * width_ms,
                byte_count: 0,
            })
            .collect();
        for (k, c) in self.in_window(window) {
            if filter.matches(&k.device, &k.company) {
                let idx = ((align_down(k.start, width_ms) - first) / width_ms) as usize;
                points[idx].byte_count += c.bytes;
            }
        }
        Ok(points)
    }

    pub fn profile(&self, window: &TimeWindow) -> ExposureProfile {
        self.profile_filtered(&SeriesFilter::default(), window)
    }

    pub fn profile_filtered(&self, filter: &SeriesFilter, window: &TimeWindow) -> ExposureProfile {
        let mut acc: BTreeMap<(DeviceId, String), (Jurisdiction, u64, u64)> = BTreeMap::new();
        for (k, c) in self.in_window(window) {
            if !filter.matches(&k.device, &k.company) {
                continue;
            }
            let e = acc
                .entry((k.device.clone(), k.company.clone()))
                .or_insert_with(|| (c.jurisdiction.clone(), 0, 0));
            e.1 += c.bytes;
            e.2 += c.packets;
        }
        let total_bytes: u64 = acc.values().map(|v| v.1).sum();
        let total_packets: u64 = acc.values().map(|v| v.2).sum();
        let mut rows: Vec<ProfileRow> = acc
            .into_iter()
            .map(|((device_id, company), (jurisdiction, b, p))| ProfileRow {
                device_id,
                company,
                jurisdiction,
                byte_count: b,
                packet_count: p,
                share: share(b, total_bytes),
            })
            .collect();
        rows.sort_by(|a, b| {
            b.byte_count
                .cmp(&a.byte_count)
                .then_with(|| a.company.cmp(&b.company))
                .then_with(|| a.device_id.cmp(&b.device_id))
        });
        ExposureProfile {
            window: *window,
            total_bytes,
            total_packets,
            rows,
        }
    }

    /// Per-company totals in the window: (company, jurisdiction, bytes, packets).
    pub fn company_totals(&self, filter: &SeriesFilter, window: &TimeWindow) -> Vec<(String, Jurisdiction, u64, u64)> {
        let mut acc: BTreeMap<String, (Jurisdiction, u64, u64)> = BTreeMap::new();
        for (k, c) in self.in_window(window) {
            if filter.matches(&k.device, &k.company) {
                let e = acc
                    .entry(k.company.clone())
                    .or_insert_with(|| (c.jurisdiction.clone(), 0, 0));
                e.1 += c.bytes;
                e.2 += c.packets;
            }
        }
        let mut out: Vec<_> = acc.into_iter().map(|(n, (j, b, p))| (n, j, b, p)).collect();
        out.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        out
    }

    pub fn total_bytes(&self, filter: &SeriesFilter, window: &TimeWindow) -> u64 {
        self.in_window(window)
            .filter(|(k, _)| filter.matches(&k.device, &k.company))
            .map(|(_, c)| c.bytes)
            .sum()
    }
}

/// `part / total`, or 0 when the total is 0.
pub fn share(part: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        part as f64 / total as f64
    }
}
