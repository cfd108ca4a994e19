//! Plain-text tables. Everything shown comes straight from API payloads.

use std::io::IsTerminal;

use hearth_core::exposure::StatsReport;
use hearth_core::flowcap::Device;

pub struct Style {
    bold: bool,
}

impl Style {
    /// Bold labels on a terminal unless `NO_COLOR` is set to anything.
    pub fn detect() -> Self {
        let no_color = std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty());
        Self {
            bold: !no_color && std::io::stdout().is_terminal(),
        }
    }

    fn label(&self, s: &str, width: usize) -> String {
        let padded = format!("{s:<width$}");
        if self.bold {
            format!("\x1b[1m{padded}\x1b[0m")
        } else {
            padded
        }
    }
}

pub fn percent(share: f64) -> String {
    format!("{:.1}%", share * 100.0)
}

pub fn report(style: &Style, r: &StatsReport, home_region: Option<&str>) -> String {
    let top = format!("Top-{} share", r.top_n);
    let away = match home_region {
        Some(h) => format!("Outside {h}"),
        None => "Out of region".to_owned(),
    };
    let rows = [
        ("Packets", r.total_packets.to_string()),
        ("Bytes", r.total_bytes.to_string()),
        ("Devices", r.distinct_devices.to_string()),
        ("Companies", r.distinct_companies.to_string()),
        ("Jurisdictions", r.distinct_jurisdictions.to_string()),
        ("Destinations", r.distinct_destinations.to_string()),
        (
            top.as_str(),
            format!("{} ({} bytes)", percent(r.top_n_share), r.top_n_bytes),
        ),
        (
            away.as_str(),
            format!("{} ({} bytes)", percent(r.out_of_region_share), r.out_of_region_bytes),
        ),
    ];
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0) + 2;
    rows.iter()
        .map(|(l, v)| format!("{}{v}\n", style.label(l, width)))
        .collect()
}

pub fn devices(style: &Style, devices: &[Device]) -> String {
    if devices.is_empty() {
        return "no devices seen yet\n".to_owned();
    }
    let id_w = devices.iter().map(|d| d.device_id.0.len()).max().unwrap_or(0).max(9) + 2;
    let mut out = format!("{}{}\n", style.label("DEVICE ID", id_w), style.label("NAME", 0));
    for d in devices {
        out.push_str(&format!("{:<id_w$}{}\n", d.device_id.0, d.friendly_name));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentages_have_one_decimal() {
        assert_eq!(percent(0.74), "74.0%");
        assert_eq!(percent(0.5404), "54.0%");
        assert_eq!(percent(1.0), "100.0%");
        assert_eq!(percent(0.0), "0.0%");
    }

    #[test]
    fn plain_style_has_no_escapes() {
        let s = Style { bold: false };
        let r = StatsReport {
            total_packets: 1,
            total_bytes: 10,
            distinct_devices: 1,
            distinct_companies: 1,
            distinct_jurisdictions: 1,
            distinct_destinations: 1,
            top_n: 3,
            top_n_bytes: 10,
            top_n_share: 1.0,
            out_of_region_bytes: 0,
            out_of_region_share: 0.0,
        };
        let table = report(&s, &r, Some("EU"));
        assert!(!table.contains('\x1b'));
        assert!(table.contains("Top-3 share"));
        assert!(table.contains("Outside EU"));
    }
}
