//! Flow dump: a header line then one [`StoredFlow`] per line.
//!
//! ```text
//! {"schema":"hearth-flows","version":1}
//! {"id":"...","device_id":"...","dst_ip":"93.184.216.34",...,"company":"Example","jurisdiction":"US"}
//! ```
//!
//! Importing a dump into an empty store and exporting again reproduces the
//! dump byte for byte.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{FlowQuery, Store, StoreError, StoredFlow};

pub const FLOW_EXPORT_SCHEMA: &str = "hearth-flows";
pub const FLOW_EXPORT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub imported: u64,
    /// Flows already present, left untouched.
    pub duplicates: u64,
}

impl Store {
    /// Writes matching flows in storage order.
    pub fn export_flows(&self, q: &FlowQuery, mut out: impl Write) -> std::io::Result<u64> {
        let header = Header {
            schema: FLOW_EXPORT_SCHEMA.into(),
            version: FLOW_EXPORT_VERSION,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let mut n = 0;
        for f in self.flows().filter(|f| q.matches(f)) {
            serde_json::to_writer(&mut out, f)?;
            out.write_all(b"\n")?;
            n += 1;
        }
        Ok(n)
    }

    /// Reads a dump. The whole input is parsed before anything is stored, so
    /// a malformed dump changes nothing.
    pub fn import_flows(&mut self, input: impl BufRead, now_ms: i64) -> Result<ImportSummary, StoreError> {
        let mut lines = input.lines().enumerate();
        let bad = |line: usize, msg: String| StoreError::Import(format!("line {line}: {msg}"));
        let (_, first) = lines.next().ok_or_else(|| StoreError::Import("empty input".into()))?;
        let first = first.map_err(|e| bad(1, e.to_string()))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if header.schema != FLOW_EXPORT_SCHEMA || header.version != FLOW_EXPORT_VERSION {
            return Err(bad(
                1,
                format!(
                    "expected {FLOW_EXPORT_SCHEMA} version {FLOW_EXPORT_VERSION}, got {} version {}",
                    header.schema, header.version
                ),
            ));
        }
        let mut flows = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: StoredFlow = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            flows.push(f);
        }
        let mut summary = ImportSummary::default();
        for f in flows {
            match self.persist_flow(f, now_ms) {
                Ok(_) => summary.imported += 1,
                Err(StoreError::Duplicate(_)) => summary.duplicates += 1,
                Err(e) => {
                    self.flush()?;
                    return Err(e);
                }
            }
        }
        self.flush()?;
        Ok(summary)
    }
}
