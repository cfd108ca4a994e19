//! Fixture-A: a small constructed household used by tests, demos and docs.
//!
//! Two devices send 100 packets of 1000 wire bytes each to six companies,
//! 40/20/14/10/9/7 packets to A..F, all outbound over six hours. A and C are
//! in the US, B/D/E/F in EU member states, so with an EU home region the top
//! three companies carry 74% of bytes and 54% leave the region. The capture
//! also holds a few local and inbound packets, which are stored as flows but
//! never reach the exposure buckets.

use std::io::{self, Write};

use crate::synth::{PcapWriter, SynthPacket};

pub const FIXTURES_TSV: &str = include_str!("../assets/fixtures/fixture-a.tsv");
pub const DEVICE_MAP: &str = include_str!("../assets/fixtures/fixture-a.devices");
pub const SAMPLE_FIXTURES_TSV: &str = include_str!("../assets/fixtures/sample.tsv");

pub const PHONE_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x01];
pub const TV_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x02];
pub const PHONE_NAME: &str = "Sam's iPhone";
pub const TV_NAME: &str = "Living room TV";
pub const PACKET_BYTES: u32 = 1000;
/// 2025-03-03T00:00:00Z.
pub const START_MS: i64 = 1_740_960_000_000;
pub const STEP_MS: i64 = 97_000;

/// (company, jurisdiction, outbound bytes).
pub const COMPANY_BYTES: [(&str, &str, u64); 6] = [
    ("A", "US", 40_000),
    ("B", "DE", 20_000),
    ("C", "US", 14_000),
    ("D", "FR", 10_000),
    ("E", "IE", 9_000),
    ("F", "NL", 7_000),
];
pub const OUTBOUND_BYTES: u64 = 100_000;

struct Stream {
    mac: [u8; 6],
    src: &'static str,
    dst: &'static str,
    port: u16,
    packets: u32,
    inbound: bool,
}

const PHONE_IP: &str = "192.168.1.21";
const TV_IP: &str = "192.168.1.22";

const STREAMS: [Stream; 11] = [
    Stream {
        mac: PHONE_MAC,
        src: PHONE_IP,
        dst: "198.51.100.10",
        port: 443,
        packets: 25,
        inbound: false,
    },
    Stream {
        mac: TV_MAC,
        src: TV_IP,
        dst: "198.51.100.11",
        port: 443,
        packets: 15,
        inbound: false,
    },
    Stream {
        mac: PHONE_MAC,
        src: PHONE_IP,
        dst: "198.51.100.40",
        port: 443,
        packets: 12,
        inbound: false,
    },
    Stream {
        mac: TV_MAC,
        src: TV_IP,
        dst: "198.51.100.41",
        port: 80,
        packets: 8,
        inbound: false,
    },
    Stream {
        mac: TV_MAC,
        src: TV_IP,
        dst: "198.51.100.70",
        port: 443,
        packets: 14,
        inbound: false,
    },
    Stream {
        mac: PHONE_MAC,
        src: PHONE_IP,
        dst: "198.51.100.100",
        port: 443,
        packets: 10,
        inbound: false,
    },
    Stream {
        mac: TV_MAC,
        src: TV_IP,
        dst: "198.51.100.130",
        port: 8443,
        packets: 9,
        inbound: false,
    },
    Stream {
        mac: PHONE_MAC,
        src: PHONE_IP,
        dst: "198.51.100.170",
        port: 443,
        packets: 7,
        inbound: false,
    },
    // Local printer traffic and unsolicited inbound packets from an address
    // outside every fixture: stored, not bucketed.
    Stream {
        mac: PHONE_MAC,
        src: PHONE_IP,
        dst: "192.168.1.50",
        port: 631,
        packets: 5,
        inbound: false,
    },
    Stream {
        mac: PHONE_MAC,
        src: PHONE_IP,
        dst: "203.0.113.9",
        port: 443,
        packets: 3,
        inbound: true,
    },
    Stream {
        mac: TV_MAC,
        src: TV_IP,
        dst: "203.0.113.9",
        port: 443,
        packets: 2,
        inbound: true,
    },
];

/// Every packet, round-robin across streams, one every [`STEP_MS`].
pub fn packets() -> Vec<SynthPacket> {
    let mut left: Vec<u32> = STREAMS.iter().map(|s| s.packets).collect();
    let mut out = Vec::new();
    while left.iter().any(|n| *n > 0) {
        for (s, n) in STREAMS.iter().zip(left.iter_mut()) {
            if *n == 0 {
                continue;
            }
            *n -= 1;
            let ts = START_MS + out.len() as i64 * STEP_MS;
            let mut p = SynthPacket::tcp(s.mac, s.src, s.dst, 50_000, s.port, ts, PACKET_BYTES);
            if s.inbound {
                p = SynthPacket {
                    src_mac: crate::synth::GATEWAY_MAC,
                    dst_mac: s.mac,
                    src_ip: p.dst_ip,
                    dst_ip: p.src_ip,
                    src_port: p.dst_port,
                    dst_port: p.src_port,
                    ..p
                };
            }
            out.push(p);
        }
    }
    out
}

/// Total wire bytes of every packet in the capture.
pub fn capture_bytes() -> u64 {
    packets().iter().map(|p| p.wire_len as u64).sum()
}

pub fn write_pcap(out: impl Write) -> io::Result<()> {
    let mut w = PcapWriter::new(out)?;
    for p in packets() {
        w.write_packet(&p)?;
    }
    w.into_inner().flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcap::parse_device_map;
    use crate::resolver::FixtureDb;

    #[test]
    fn assets_parse() {
        let db = FixtureDb::parse(FIXTURES_TSV).unwrap();
        assert_eq!(db.len(), 6);
        FixtureDb::parse(SAMPLE_FIXTURES_TSV).unwrap();
        assert_eq!(parse_device_map(DEVICE_MAP).unwrap().len(), 2);
    }

    #[test]
    fn outbound_bytes_per_company() {
        let db = FixtureDb::parse(FIXTURES_TSV).unwrap();
        let mut per: std::collections::BTreeMap<String, u64> = Default::default();
        for p in packets().iter().filter(|p| p.src_mac != crate::synth::GATEWAY_MAC) {
            if let Some(e) = db.lookup(p.dst_ip) {
                *per.entry(e.company.name.clone()).or_default() += p.wire_len as u64;
            }
        }
        for (name, _, bytes) in COMPANY_BYTES {
            assert_eq!(per[name], bytes, "{name}");
        }
        assert_eq!(per.values().sum::<u64>(), OUTBOUND_BYTES);
    }
}
