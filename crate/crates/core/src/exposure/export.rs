use thiserror::Error;

use super::{ExposureProfile, StatsReport};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv output was not UTF-8")]
    Utf8,
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ExportError> {
    let bytes = w.into_inner().map_err(|e| ExportError::Csv(e.into_error().into()))?;
    String::from_utf8(bytes).map_err(|_| ExportError::Utf8)
}

/// Columns: `device,company,jurisdiction,bytes,packets,share`.
pub fn profile_csv(profile: &ExposureProfile) -> Result<String, ExportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["device", "company", "jurisdiction", "bytes", "packets", "share"])?;
    for r in &profile.rows {
        w.write_record([
            r.device_id.as_str(),
            &r.company,
            r.jurisdiction.as_str(),
            &r.byte_count.to_string(),
            &r.packet_count.to_string(),
            &r.share.to_string(),
        ])?;
    }
    finish(w)
}

/// One header row of report field names, one data row.
pub fn report_csv(report: &StatsReport) -> Result<String, ExportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(report)?;
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::tests::{company, flow};
    use crate::exposure::ExposureModel;
    use crate::resolver::HomeRegion;
    use crate::time::TimeWindow;

    #[test]
    fn profile_columns() {
        let mut m = ExposureModel::default();
        m.add_flow(&flow("a", "dev1", "1.1.1.1", 0, 600), &company("Acme, Inc", "US"))
            .unwrap();
        let csv = profile_csv(&m.profile(&TimeWindow::all())).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("device,company,jurisdiction,bytes,packets,share"));
        assert_eq!(lines.next(), Some("dev1,\"Acme, Inc\",US,600,1,1"));
    }

    #[test]
    fn report_header_matches_field_names() {
        let m = ExposureModel::default();
        let r = m.stats_report(&TimeWindow::all(), 3, &HomeRegion::eu()).unwrap();
        let csv = report_csv(&r).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "total_packets,total_bytes,distinct_devices,distinct_companies,distinct_jurisdictions,\
distinct_destinations,top_n,top_n_bytes,top_n_share,out_of_region_bytes,out_of_region_share"
        );
        let json = serde_json::to_value(&r).unwrap();
        for field in header.split(',') {
            assert!(json.get(field).is_some(), "{field}");
        }
    }
}
