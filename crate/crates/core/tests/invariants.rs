//! Property tests for exposure and firewall invariants, each against a naive
//! oracle that shares no code with the model under test.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{IpAddr, Ipv4Addr};

use hearth_core::exposure::{ExposureModel, SeriesFilter};
use hearth_core::flowcap::{DeviceId, Direction, Encryption, FlowId, FlowRecord, Locality, Transport};
use hearth_core::guard::{
    compile, decide, CompanyScope, DeviceScope, DirectiveId, DirectiveState, FirewallDirective, Verdict,
};
use hearth_core::resolver::{CompanyRecord, FixtureDb, HomeRegion, OwnershipSnapshot, RecordSource, ThreatStatus};
use hearth_core::time::MINUTE_MS;
use hearth_core::TimeWindow;
use proptest::prelude::*;

const COMPANIES: [(&str, &str); 6] = [
    ("Acme", "US"),
    ("Bolt", "DE"),
    ("Crane", "US"),
    ("Dune", "FR"),
    ("Ember", "??"),
    ("Fjord", "NO"),
];
const DEVICES: [&str; 3] = ["d0", "d1", "d2"];

#[derive(Debug, Clone)]
struct Gen {
    device: usize,
    company: usize,
    minute: i64,
    offset_ms: i64,
    bytes: u64,
    inbound: bool,
    local: bool,
}

fn arb_flow() -> impl Strategy<Value = Gen> {
    (
        0..3usize,
        0..6usize,
        0..180i64,
        0..MINUTE_MS,
        1..5_000u64,
        prop::bool::weighted(0.1),
        prop::bool::weighted(0.1),
    )
        .prop_map(|(device, company, minute, offset_ms, bytes, inbound, local)| Gen {
            device,
            company,
            minute,
            offset_ms,
            bytes,
            inbound,
            local,
        })
}

fn record(i: usize, g: &Gen) -> (FlowRecord, CompanyRecord) {
    let (name, j) = COMPANIES[g.company];
    let flow = FlowRecord {
        id: FlowId(format!("f{i}")),
        device_id: DeviceId(DEVICES[g.device].into()),
        dst_ip: IpAddr::V4(Ipv4Addr::new(203, 0, 113, g.company as u8 + 1)),
        dst_port: 443,
        transport: Transport::Tcp,
        window_start_ms: g.minute * MINUTE_MS + g.offset_ms,
        byte_count: g.bytes,
        packet_count: 1 + g.bytes / 1000,
        direction: if g.inbound {
            Direction::Inbound
        } else {
            Direction::Outbound
        },
        locality: if g.local { Locality::Local } else { Locality::External },
        encryption: Encryption::Encrypted,
    };
    let company = CompanyRecord {
        name: name.into(),
        parent: None,
        jurisdiction: j.parse().unwrap(),
        threat: ThreatStatus::None,
        source: RecordSource::Fixture,
        resolved_at_ms: 0,
        ttl_ms: i64::MAX,
    };
    (flow, company)
}

fn model(flows: &[Gen]) -> ExposureModel {
    let mut m = ExposureModel::new(MINUTE_MS, false);
    for (i, g) in flows.iter().enumerate() {
        let (f, c) = record(i, g);
        m.add_flow(&f, &c).unwrap();
    }
    m
}

/// Outbound external flows whose minute bucket starts inside `[lo, hi)`.
fn counted(flows: &[Gen], lo: i64, hi: i64) -> impl Iterator<Item = &Gen> {
    flows
        .iter()
        .filter(move |g| !g.inbound && !g.local && (lo..hi).contains(&(g.minute * MINUTE_MS)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn profile_report_and_series_agree_with_a_full_scan(
        flows in prop::collection::vec(arb_flow(), 0..1500),
        lo_min in 0..180i64,
        len_min in 1..200i64,
        top_n in 1..8u32,
        k in 1..30i64,
    ) {
        let m = model(&flows);
        let (lo, hi) = (lo_min * MINUTE_MS, (lo_min + len_min) * MINUTE_MS);
        let window = TimeWindow::new(lo, hi).unwrap();

        let mut cells: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        let mut per_company: BTreeMap<&str, u64> = BTreeMap::new();
        for g in counted(&flows, lo, hi) {
            *cells.entry((DEVICES[g.device], COMPANIES[g.company].0)).or_default() += g.bytes;
            *per_company.entry(COMPANIES[g.company].0).or_default() += g.bytes;
        }
        let total: u64 = cells.values().sum();

        let profile = m.profile(&window);
        let rows: BTreeMap<(&str, &str), u64> =
            profile.rows.iter().map(|r| ((r.device_id.0.as_str(), r.company.as_str()), r.byte_count)).collect();
        prop_assert_eq!(&rows, &cells);
        prop_assert_eq!(profile.total_bytes, total);
        if total > 0 {
            let shares: f64 = profile.rows.iter().map(|r| r.share).sum();
            prop_assert!((shares - 1.0).abs() <= 1e-9, "shares sum to {}", shares);
        }

        let fine = m.timeseries(&SeriesFilter::default(), &window, MINUTE_MS).unwrap();
        let coarse = m.timeseries(&SeriesFilter::default(), &window, k * MINUTE_MS).unwrap();
        prop_assert_eq!(fine.iter().map(|p| p.byte_count).sum::<u64>(), total);
        prop_assert_eq!(coarse.iter().map(|p| p.byte_count).sum::<u64>(), total);
        for p in &coarse {
            let inside: u64 = fine
                .iter()
                .filter(|f| (p.bucket_start_ms..p.bucket_start_ms + k * MINUTE_MS).contains(&f.bucket_start_ms))
                .map(|f| f.byte_count)
                .sum();
            prop_assert_eq!(p.byte_count, inside);
        }

        let home = HomeRegion::eu();
        let r = m.stats_report(&window, top_n, &home).unwrap();
        let mut sorted: Vec<u64> = per_company.values().copied().collect();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let top: u64 = sorted.iter().take(top_n as usize).sum();
        let eu = ["DE", "FR"];
        let away: u64 = counted(&flows, lo, hi)
            .filter(|g| { let j = COMPANIES[g.company].1; j != "??" && !eu.contains(&j) })
            .map(|g| g.bytes)
            .sum();
        prop_assert_eq!(r.total_bytes, total);
        prop_assert_eq!(r.top_n_bytes, top);
        prop_assert_eq!(r.out_of_region_bytes, away);
        prop_assert_eq!(r.distinct_companies, per_company.len() as u64);

        // Top-N share never shrinks as N grows and saturates at 1.
        let mut last = 0.0;
        for n in 1..=7u32 {
            let s = m.stats_report(&window, n, &home).unwrap().top_n_share;
            prop_assert!(s >= last);
            if total > 0 && n as usize >= per_company.len() {
                prop_assert_eq!(s, 1.0);
            }
            last = s;
        }
    }
}

// ---- firewall ----

const FIXTURES: &str = "\
45.0.0.0/8\tRoot\t-\tUS\tNONE
45.1.0.0/16\tKid\tRoot\tUS\tNONE
45.1.2.0/24\tOther\t-\tDE\tNONE
45.1.2.128/25\tKid\tRoot\tUS\tNONE
45.9.0.0/16\tLone\t-\tFR\tNONE
";
const NAMES: [&str; 4] = ["Root", "Kid", "Other", "Lone"];

fn snapshot() -> OwnershipSnapshot {
    OwnershipSnapshot::from_fixtures(FixtureDb::parse(FIXTURES).unwrap())
}

fn arb_directive() -> impl Strategy<Value = FirewallDirective> {
    (0..5usize, 0..4usize, any::<bool>(), any::<bool>(), any::<u16>()).prop_map(|(dev, name, group, on, id)| {
        FirewallDirective {
            id: DirectiveId(format!("d{id:05}")),
            device_scope: if dev == 4 {
                DeviceScope::All
            } else {
                DeviceScope::Device {
                    device_id: DeviceId(format!("dev{dev}")),
                }
            },
            company_scope: if group {
                CompanyScope::Group {
                    root: NAMES[name].into(),
                }
            } else {
                CompanyScope::Company {
                    name: NAMES[name].into(),
                }
            },
            state: if on {
                DirectiveState::Enabled
            } else {
                DirectiveState::Disabled
            },
            created_at_ms: 0,
            label: String::new(),
        }
    })
}

fn probe(dev: usize, ip: u32) -> FlowRecord {
    FlowRecord {
        id: FlowId("p".into()),
        device_id: DeviceId(format!("dev{dev}")),
        dst_ip: IpAddr::V4(Ipv4Addr::from(0x2d00_0000 | (ip & 0x00ff_ffff))),
        dst_port: 443,
        transport: Transport::Tcp,
        window_start_ms: 0,
        byte_count: 1,
        packet_count: 1,
        direction: Direction::Outbound,
        locality: Locality::External,
        encryption: Encryption::Encrypted,
    }
}

fn verdicts(directives: &[FirewallDirective], probes: &[(usize, u32)]) -> Vec<Verdict> {
    let rules = compile(directives, &snapshot(), &BTreeMap::new(), 1, 0);
    probes.iter().map(|&(d, ip)| decide(&probe(d, ip), &rules)).collect()
}

fn arb_probes() -> impl Strategy<Value = Vec<(usize, u32)>> {
    let near = prop_oneof![
        Just(0x0001_0200u32),
        Just(0x0001_0280),
        Just(0x0001_0000),
        Just(0x0009_0000),
        Just(0)
    ];
    prop::collection::vec(
        (
            0..4usize,
            (near, 0..256u32)
                .prop_map(|(b, o)| b | o)
                .boxed()
                .prop_union(any::<u32>().boxed()),
        ),
        1..200,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn adding_a_directive_never_unblocks(
        base in prop::collection::vec(arb_directive(), 0..12),
        extra in arb_directive(),
        probes in arb_probes(),
    ) {
        let before = verdicts(&base, &probes);
        let mut more = base.clone();
        more.push(extra);
        let after = verdicts(&more, &probes);
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(!(*b == Verdict::Block && *a == Verdict::Allow));
        }
    }

    #[test]
    fn disabled_directives_are_inert(
        base in prop::collection::vec(arb_directive(), 0..12),
        extra in arb_directive(),
        probes in arb_probes(),
    ) {
        let before = verdicts(&base, &probes);
        let mut more = base.clone();
        more.push(FirewallDirective { state: DirectiveState::Disabled, ..extra });
        prop_assert_eq!(before, verdicts(&more, &probes));
    }
}

#[test]
fn group_scope_follows_longest_prefix_ownership() {
    let group = FirewallDirective {
        id: DirectiveId("g".into()),
        device_scope: DeviceScope::All,
        company_scope: CompanyScope::Group { root: "Root".into() },
        state: DirectiveState::Enabled,
        created_at_ms: 0,
        label: String::new(),
    };
    let members: BTreeSet<&str> = ["Root", "Kid"].into();
    let db = FixtureDb::parse(FIXTURES).unwrap();
    // Every address in 45.1.2.0/24 plus a stride over the rest of 45/8.
    let addrs = (0x0001_0200..0x0001_0300u32).chain((0..0x0100_0000).step_by(4099));
    let v = verdicts(
        std::slice::from_ref(&group),
        &addrs.clone().map(|a| (0, a)).collect::<Vec<_>>(),
    );
    for (a, verdict) in addrs.zip(v) {
        let ip = IpAddr::V4(Ipv4Addr::from(0x2d00_0000 | a));
        let owner = db.lookup(ip).map(|e| e.company.name.as_str());
        let expected = owner.is_some_and(|o| members.contains(o));
        assert_eq!(verdict == Verdict::Block, expected, "{ip} owned by {owner:?}");
    }
}
