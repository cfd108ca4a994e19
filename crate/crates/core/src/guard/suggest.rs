//! "If you blocked X you might want to block Y."
//!
//! The heuristic, in full:
//! 1. Only directives naming a single company get suggestions.
//! 2. Other members of that company's corporate group come first.
//! 3. Then companies in the same (known) jurisdiction that the directive's
//!    devices also sent traffic to during the last seven days.
//! 4. Within each tier, more bytes from the directive's devices over those
//!    seven days ranks higher; ties go alphabetically.
//! 5. Companies already blocked for those devices are never suggested.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CompanyScope, DeviceScope, FirewallDirective};
use crate::exposure::{ExposureModel, SeriesFilter};
use crate::resolver::{Jurisdiction, OwnershipSnapshot};
use crate::time::{TimeWindow, DAY_MS};

pub const SUGGEST_LOOKBACK_MS: i64 = 7 * DAY_MS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionReason {
    GroupSibling,
    SameJurisdiction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub company: String,
    pub reason: SuggestionReason,
    pub jurisdiction: Jurisdiction,
    /// Bytes from the directive's devices over the lookback window.
    pub bytes: u64,
}

pub fn suggest_similar(
    directive: &FirewallDirective,
    snapshot: &OwnershipSnapshot,
    exposure: &ExposureModel,
    blocked: &BTreeSet<String>,
    now_ms: i64,
) -> Vec<Suggestion> {
    let CompanyScope::Company { name: target } = &directive.company_scope else {
        return Vec::new();
    };
    let filter = SeriesFilter {
        device: match &directive.device_scope {
            DeviceScope::All => None,
            DeviceScope::Device { device_id } => Some(device_id.clone()),
        },
        company: None,
    };
    let window = TimeWindow::trailing(now_ms, SUGGEST_LOOKBACK_MS);
    let traffic = exposure.company_totals(&filter, &window);
    let bytes_of = |name: &str| traffic.iter().find(|t| t.0 == name).map_or(0, |t| t.2);
    let jurisdiction_of = |name: &str| {
        snapshot
            .company(name)
            .map(|c| c.jurisdiction.clone())
            .or_else(|| traffic.iter().find(|t| t.0 == name).map(|t| t.1.clone()))
            .unwrap_or_else(Jurisdiction::unknown)
    };
    let excluded = |name: &str| name == target || blocked.contains(name);

    let mut siblings: Vec<Suggestion> = match snapshot.corporate_group(target) {
        Ok(group) if group.known => snapshot
            .group_members(&group.root)
            .into_iter()
            .filter(|m| !excluded(m))
            .map(|m| Suggestion {
                bytes: bytes_of(&m),
                jurisdiction: jurisdiction_of(&m),
                company: m,
                reason: SuggestionReason::GroupSibling,
            })
            .collect(),
        _ => Vec::new(),
    };
    rank(&mut siblings);

    let home = jurisdiction_of(target);
    let mut peers: Vec<Suggestion> = if home.is_unknown() {
        Vec::new()
    } else {
        traffic
            .iter()
            .filter(|t| t.2 > 0 && t.1 == home && !excluded(&t.0))
            .filter(|t| !siblings.iter().any(|s| s.company == t.0))
            .map(|t| Suggestion {
                company: t.0.clone(),
                reason: SuggestionReason::SameJurisdiction,
                jurisdiction: t.1.clone(),
                bytes: t.2,
            })
            .collect()
    };
    rank(&mut peers);

    siblings.extend(peers);
    siblings
}

fn rank(list: &mut [Suggestion]) {
    list.sort_by(|a, b| b.bytes.cmp(&a.bytes).then_with(|| a.company.cmp(&b.company)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::tests::{company, flow};
    use crate::guard::DirectiveState;
    use crate::resolver::FixtureDb;

    const FIXTURE: &str = "\
157.240.0.0/16\tFacebook\t-\tUS\tNONE
31.13.64.0/18\tInstagram\tFacebook\tUS\tNONE
31.13.128.0/18\tWhatsApp\tFacebook\tUS\tNONE
198.51.100.0/24\tLoner\t-\tNZ\tNONE
203.0.113.0/25\tPeerBig\t-\tUS\tNONE
203.0.113.128/25\tPeerSmall\t-\tUS\tNONE
";

    fn directive(target: &str) -> FirewallDirective {
        FirewallDirective {
            id: "dir-1".into(),
            device_scope: DeviceScope::Device { device_id: "d".into() },
            company_scope: CompanyScope::Company { name: target.into() },
            state: DirectiveState::Disabled,
            created_at_ms: 0,
            label: String::new(),
        }
    }

    fn setup() -> (OwnershipSnapshot, ExposureModel) {
        let snap = OwnershipSnapshot::from_fixtures(FixtureDb::parse(FIXTURE).unwrap());
        let mut m = ExposureModel::default();
        let now = 10 * DAY_MS;
        m.add_flow(
            &flow("1", "d", "203.0.113.1", now - DAY_MS, 500),
            &company("PeerBig", "US"),
        )
        .unwrap();
        m.add_flow(
            &flow("2", "d", "203.0.113.200", now - DAY_MS, 300),
            &company("PeerSmall", "US"),
        )
        .unwrap();
        m.add_flow(
            &flow("3", "d", "31.13.64.1", now - DAY_MS, 50),
            &company("Instagram", "US"),
        )
        .unwrap();
        // Another device's traffic and stale traffic do not count.
        m.add_flow(
            &flow("4", "e", "203.0.113.2", now - DAY_MS, 9_000),
            &company("PeerSmall", "US"),
        )
        .unwrap();
        m.add_flow(
            &flow("5", "d", "203.0.113.3", now - 9 * DAY_MS, 9_000),
            &company("PeerSmall", "US"),
        )
        .unwrap();
        (snap, m)
    }

    #[test]
    fn siblings_first_then_ranked_peers() {
        let (snap, m) = setup();
        let s = suggest_similar(&directive("Instagram"), &snap, &m, &BTreeSet::new(), 10 * DAY_MS);
        let names: Vec<_> = s.iter().map(|s| s.company.as_str()).collect();
        assert_eq!(names, ["Facebook", "WhatsApp", "PeerBig", "PeerSmall"]);
        assert_eq!(s[0].reason, SuggestionReason::GroupSibling);
        assert_eq!(s[2].bytes, 500);
        assert_eq!(s[3].bytes, 300);
    }

    #[test]
    fn already_blocked_and_groupless() {
        let (snap, m) = setup();
        let blocked = BTreeSet::from(["Facebook".to_owned(), "PeerBig".to_owned()]);
        let s = suggest_similar(&directive("WhatsApp"), &snap, &m, &blocked, 10 * DAY_MS);
        let names: Vec<_> = s.iter().map(|s| s.company.as_str()).collect();
        assert_eq!(names, ["Instagram", "PeerSmall"]);
        assert!(suggest_similar(&directive("Loner"), &snap, &m, &BTreeSet::new(), 10 * DAY_MS).is_empty());
    }
}
