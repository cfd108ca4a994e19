use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{share, ExposureError, ExposureModel, SeriesFilter};
use crate::resolver::HomeRegion;
use crate::time::{TimeWindow, DAY_MS};

/// Headline statistics over a window.
///
/// Jurisdiction counts and the out-of-region numerator only consider
/// companies with a known jurisdiction; traffic to `??` companies still
/// counts towards totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total_packets: u64,
    pub total_bytes: u64,
    pub distinct_devices: u64,
    pub distinct_companies: u64,
    pub distinct_jurisdictions: u64,
    pub distinct_destinations: u64,
    pub top_n: u32,
    pub top_n_bytes: u64,
    pub top_n_share: f64,
    pub out_of_region_bytes: u64,
    pub out_of_region_share: f64,
}

impl ExposureModel {
    pub fn stats_report(
        &self,
        window: &TimeWindow,
        top_n: u32,
        home_region: &HomeRegion,
    ) -> Result<StatsReport, ExposureError> {
        if top_n == 0 {
            return Err(ExposureError::BadTopN);
        }
        let filter = SeriesFilter::default();
        let buckets = self.buckets(&filter, window);
        let devices: BTreeSet<_> = buckets.iter().map(|b| &b.device_id).collect();
        let destinations: BTreeSet<_> = buckets.iter().flat_map(|b| &b.destinations).collect();
        let total_packets = buckets.iter().map(|b| b.packet_count).sum();

        let companies = self.company_totals(&filter, window);
        let total_bytes: u64 = companies.iter().map(|c| c.2).sum();
        let jurisdictions: BTreeSet<_> = companies.iter().filter(|c| !c.1.is_unknown()).map(|c| &c.1).collect();
        let top_n_bytes = companies.iter().take(top_n as usize).map(|c| c.2).sum();
        let out_of_region_bytes = companies
            .iter()
            .filter(|c| !c.1.is_unknown() && !home_region.contains(&c.1))
            .map(|c| c.2)
            .sum();

        Ok(StatsReport {
            total_packets,
            total_bytes,
            distinct_devices: devices.len() as u64,
            distinct_companies: companies.len() as u64,
            distinct_jurisdictions: jurisdictions.len() as u64,
            distinct_destinations: destinations.len() as u64,
            top_n,
            top_n_bytes,
            top_n_share: share(top_n_bytes, total_bytes),
            out_of_region_bytes,
            out_of_region_share: share(out_of_region_bytes, total_bytes),
        })
    }
}

/// Relative change in average daily bytes. Serialises as a number, or as the
/// string `"new"` when the earlier period had no traffic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Change {
    Ratio(f64),
    New,
}

impl Serialize for Change {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Change::Ratio(r) => s.serialize_f64(*r),
            Change::New => s.serialize_str("new"),
        }
    }
}

impl<'de> Deserialize<'de> for Change {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(n) => Ok(Change::Ratio(n)),
            Repr::Text(t) if t == "new" => Ok(Change::New),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unexpected change {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodComparison {
    pub window_a: TimeWindow,
    pub window_b: TimeWindow,
    pub bytes_a: u64,
    pub bytes_b: u64,
    pub avg_daily_bytes_a: f64,
    pub avg_daily_bytes_b: f64,
    pub change: Change,
}

/// `(avg_daily_b - avg_daily_a) / avg_daily_a`.
///
/// Computed as one division of exact integers,
/// `(bytes_b * dur_a - bytes_a * dur_b) / (bytes_a * dur_b)`, so the result is
/// the correctly rounded value of the true ratio.
pub fn compare_periods(
    model: &ExposureModel,
    window_a: &TimeWindow,
    window_b: &TimeWindow,
    filter: &SeriesFilter,
) -> PeriodComparison {
    let bytes_a = model.total_bytes(filter, window_a);
    let bytes_b = model.total_bytes(filter, window_b);
    let (dur_a, dur_b) = (window_a.duration_ms() as i128, window_b.duration_ms() as i128);
    let change = match (bytes_a, bytes_b) {
        (0, 0) => Change::Ratio(0.0),
        (0, _) => Change::New,
        (a, b) => {
            let num = b as i128 * dur_a - a as i128 * dur_b;
            let den = a as i128 * dur_b;
            Change::Ratio(ratio(num, den))
        }
    };
    let daily = |bytes: u64, dur: i128| bytes as f64 * DAY_MS as f64 / dur as f64;
    PeriodComparison {
        window_a: *window_a,
        window_b: *window_b,
        bytes_a,
        bytes_b,
        avg_daily_bytes_a: daily(bytes_a, dur_a),
        avg_daily_bytes_b: daily(bytes_b, dur_b),
        change,
    }
}

/// `num / den` for integers too large for exact f64 conversion: reduce first.
fn ratio(num: i128, den: i128) -> f64 {
    let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i128;
    (num / g) as f64 / (den / g) as f64
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
