use std::fs::OpenOptions;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Store, StoreError, StoredFlow, Tombstone, AUDIT_FILE};
use crate::exposure::BucketScope;
use crate::flowcap::DeviceId;
use crate::time::{align_down, TimeWindow};

/// What a redaction removes. Time ranges widen to whole storage buckets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RedactionScope {
    Device { device_id: DeviceId },
    Company { name: String },
    Range { start_ms: i64, end_ms: i64 },
}

impl RedactionScope {
    pub fn validate(&self) -> Result<(), StoreError> {
        match self {
            Self::Device { device_id } if device_id.as_str().trim().is_empty() => {
                Err(StoreError::InvalidScope("device_id is empty".into()))
            }
            Self::Company { name } if name.trim().is_empty() => {
                Err(StoreError::InvalidScope("company name is empty".into()))
            }
            Self::Range { start_ms, end_ms } if start_ms >= end_ms => Err(StoreError::InvalidScope(format!(
                "range start {start_ms} is not before end {end_ms}"
            ))),
            _ => Ok(()),
        }
    }

    /// The bucket-aligned window a range scope actually removes.
    pub fn expanded_window(&self, width_ms: i64) -> Option<TimeWindow> {
        match self {
            Self::Range { start_ms, end_ms } => {
                let start = align_down(*start_ms, width_ms);
                let end = align_down(end_ms.saturating_sub(1), width_ms).saturating_add(width_ms);
                Some(TimeWindow {
                    start_ms: start,
                    end_ms: end,
                })
            }
            _ => None,
        }
    }

    pub fn covers(&self, f: &StoredFlow, width_ms: i64) -> bool {
        match self {
            Self::Device { device_id } => &f.record.device_id == device_id,
            Self::Company { name } => &f.company == name,
            Self::Range { .. } => self
                .expanded_window(width_ms)
                .is_some_and(|w| w.contains(f.record.window_start_ms)),
        }
    }

    fn bucket_scope(&self, width_ms: i64) -> BucketScope {
        match self {
            Self::Device { device_id } => BucketScope::Device(device_id.clone()),
            Self::Company { name } => BucketScope::Company(name.clone()),
            Self::Range { .. } => BucketScope::Starts(self.expanded_window(width_ms).expect("range scopes expand")),
        }
    }

    /// Human description for the audit log; never includes removed data.
    pub fn describe(&self) -> String {
        match self {
            Self::Device { device_id } => format!("device {device_id}"),
            Self::Company { name } => format!("company {name}"),
            Self::Range { start_ms, end_ms } => format!("time range [{start_ms}, {end_ms}) ms"),
        }
    }
}

/// An executed redaction, as kept in the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionRequest {
    pub id: u64,
    pub scope: RedactionScope,
    pub description: String,
    pub requested_at_ms: i64,
    pub executed_at_ms: Option<i64>,
    /// Flow rows plus bucket rows removed.
    pub rows_removed: u64,
    pub flows_removed: u64,
    pub buckets_removed: u64,
}

impl Store {
    /// Removes everything in `scope` in one step: raw flows, exposure buckets,
    /// and for device scopes the device record itself. The journal is
    /// rewritten without the removed rows before this returns. Writes into the
    /// scope are refused for the configured grace period, so an ingest batch
    /// already in flight cannot resurrect redacted data.
    pub fn redact(
        &mut self,
        scope: RedactionScope,
        requested_at_ms: i64,
        now_ms: i64,
    ) -> Result<RedactionRequest, StoreError> {
        scope.validate()?;
        let width = self.state.exposure.storage_width_ms();
        let mut state = self.state.clone();
        let before = state.flows.len();
        state.flows.retain(|f| !scope.covers(f, width));
        let flows_removed = (before - state.flows.len()) as u64;
        state.ids = state.flows.iter().map(|f| f.record.id.clone()).collect();
        let buckets_removed = state.exposure.remove(&scope.bucket_scope(width)).len() as u64;
        if let RedactionScope::Device { device_id } = &scope {
            state.devices.remove(device_id);
        }
        state.tombstones.retain(|t| t.until_ms > now_ms);
        state.tombstones.push(Tombstone {
            scope: scope.clone(),
            until_ms: now_ms.saturating_add(self.config.redaction_grace_ms),
        });
        self.commit(state, now_ms)?;

        let request = RedactionRequest {
            id: self.audit.last().map_or(1, |r| r.id + 1),
            description: scope.describe(),
            scope,
            requested_at_ms,
            executed_at_ms: Some(now_ms),
            rows_removed: flows_removed + buckets_removed,
            flows_removed,
            buckets_removed,
        };
        if let Some(files) = &self.files {
            let path = files.dir.join(AUDIT_FILE);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(StoreError::io(&path))?;
            let mut line = serde_json::to_vec(&request).map_err(|e| StoreError::io(&path)(e.into()))?;
            line.push(b'\n');
            f.write_all(&line).map_err(StoreError::io(&path))?;
            f.sync_all().map_err(StoreError::io(&path))?;
        }
        self.audit.push(request.clone());
        Ok(request)
    }

    /// Executed redactions, oldest first.
    pub fn audit_log(&self) -> &[RedactionRequest] {
        &self.audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::SeriesFilter;
    use crate::store::tests::stored;
    use crate::store::{FlowQuery, StoreConfig};
    use crate::time::MINUTE_MS;

    fn fill(s: &mut Store) {
        for (i, (d, co, t)) in [
            ("d1", "A", 0),
            ("d2", "A", MINUTE_MS),
            ("d1", "B", 2 * MINUTE_MS),
            ("d2", "B", 3 * MINUTE_MS),
        ]
        .iter()
        .enumerate()
        {
            s.persist_flow(stored(&i.to_string(), d, "1.1.1.1", *t, 10 * (i as u64 + 1), co), 0)
                .unwrap();
        }
    }

    #[test]
    fn device_redaction_is_complete() {
        let mut s = Store::in_memory(StoreConfig::default());
        fill(&mut s);
        let r = s
            .redact(RedactionScope::Device { device_id: "d1".into() }, 5, 6)
            .unwrap();
        assert_eq!((r.flows_removed, r.buckets_removed, r.rows_removed), (2, 2, 4));
        let q = FlowQuery {
            device: Some("d1".into()),
            ..Default::default()
        };
        assert!(s.query_flows(&q).is_empty());
        assert!(s.exposure().all_buckets().iter().all(|b| b.device_id.as_str() != "d1"));
        assert_eq!(s.audit_log().len(), 1);
    }

    #[test]
    fn absent_company_still_audited() {
        let mut s = Store::in_memory(StoreConfig::default());
        fill(&mut s);
        let r = s
            .redact(RedactionScope::Company { name: "Nobody".into() }, 0, 0)
            .unwrap();
        assert_eq!(r.rows_removed, 0);
        assert_eq!(s.audit_log(), [r]);
    }

    #[test]
    fn range_widens_to_buckets_and_matches_oracle() {
        let mut s = Store::in_memory(StoreConfig::default());
        fill(&mut s);
        let all = s.query_flows(&FlowQuery::default());
        // 30 s into bucket 1 through 10 s into bucket 2 removes buckets 1 and 2.
        let scope = RedactionScope::Range {
            start_ms: MINUTE_MS + 30_000,
            end_ms: 2 * MINUTE_MS + 10_000,
        };
        s.redact(scope, 0, 0).unwrap();
        let expect: u64 = all
            .iter()
            .filter(|f| !(MINUTE_MS..3 * MINUTE_MS).contains(&f.record.window_start_ms))
            .map(|f| f.record.byte_count)
            .sum();
        assert_eq!(
            s.exposure().total_bytes(&SeriesFilter::default(), &TimeWindow::all()),
            expect
        );
        assert_eq!(s.flow_count(), 2);
    }

    #[test]
    fn grace_period_refuses_late_writes() {
        let mut s = Store::in_memory(StoreConfig::default());
        s.redact(RedactionScope::Device { device_id: "d1".into() }, 0, 1_000)
            .unwrap();
        assert!(matches!(
            s.persist_flow(stored("late", "d1", "1.1.1.1", 0, 1, "A"), 2_000),
            Err(StoreError::Redacted(_))
        ));
        s.persist_flow(stored("other", "d2", "1.1.1.1", 0, 1, "A"), 2_000)
            .unwrap();
        let after = 1_000 + s.config().redaction_grace_ms;
        s.persist_flow(stored("later", "d1", "1.1.1.1", 0, 1, "A"), after)
            .unwrap();
    }

    #[test]
    fn invalid_scopes() {
        let mut s = Store::in_memory(StoreConfig::default());
        for scope in [
            RedactionScope::Device { device_id: "".into() },
            RedactionScope::Company { name: " ".into() },
            RedactionScope::Range { start_ms: 5, end_ms: 5 },
        ] {
            assert!(matches!(s.redact(scope, 0, 0), Err(StoreError::InvalidScope(_))));
        }
        assert!(s.audit_log().is_empty());
    }

    #[test]
    fn redaction_reaches_disk_and_audit_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path(), StoreConfig::default()).unwrap();
            fill(&mut s);
            s.redact(RedactionScope::Company { name: "A".into() }, 0, 0).unwrap();
            s.redact(RedactionScope::Company { name: "B".into() }, 1, 1).unwrap();
        }
        let journal = std::fs::read_to_string(dir.path().join(super::super::JOURNAL_FILE)).unwrap();
        assert!(!journal.contains("\"company\":\"A\""));
        let s = Store::open(dir.path(), StoreConfig::default()).unwrap();
        assert_eq!(s.flow_count(), 0);
        let ids: Vec<u64> = s.audit_log().iter().map(|r| r.id).collect();
        assert_eq!(ids, [1, 2]);
        // The tombstone survives a restart.
        assert_eq!(s.tombstones().len(), 2);
    }
}
