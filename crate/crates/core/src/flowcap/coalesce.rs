use std::collections::{BTreeMap, HashMap};
use std::net::IpAddr;

use sha2::{Digest, Sha256};

use super::{classify_encryption, locality_of, DeviceId, Direction, FlowId, FlowRecord, RawPacketHeader, Transport};
use crate::time::{align_down, MINUTE_MS};

pub const DEFAULT_COALESCE_WINDOW_MS: i64 = MINUTE_MS;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct FlowKey {
    device_id: DeviceId,
    remote: IpAddr,
    port: u16,
    transport: Transport,
    direction: Direction,
}

#[derive(Debug, Default, Clone, Copy)]
struct Totals {
    bytes: u64,
    packets: u64,
}

/// Merges packets into per-window flow records.
///
/// Windows are aligned to multiples of the window width. A window is emitted
/// once a packet arrives more than `grace_windows` windows after it, so mild
/// reordering is absorbed. A packet whose window was already emitted is
/// folded into the earliest window still open, which keeps output ordered and
/// every packet counted at the cost of a shifted timestamp.
#[derive(Debug)]
pub struct Coalescer {
    window_ms: i64,
    grace_windows: i64,
    session: String,
    open: BTreeMap<i64, HashMap<FlowKey, Totals>>,
    emitted_through: Option<i64>,
    late_packets: u64,
}

impl Coalescer {
    /// `session` namespaces record ids so separate ingest runs never collide.
    pub fn new(window_ms: i64, session: impl Into<String>) -> Self {
        assert!(window_ms > 0, "coalesce window must be positive");
        Self {
            window_ms,
            grace_windows: 1,
            session: session.into(),
            open: BTreeMap::new(),
            emitted_through: None,
            late_packets: 0,
        }
    }

    pub fn with_grace_windows(mut self, grace: i64) -> Self {
        self.grace_windows = grace.max(0);
        self
    }

    pub fn window_ms(&self) -> i64 {
        self.window_ms
    }

    /// Packets that arrived after their own window had been emitted.
    pub fn late_packets(&self) -> u64 {
        self.late_packets
    }

    /// Adds a packet already attributed to `device_id`; returns any records
    /// whose windows closed as a result.
    pub fn push(&mut self, device_id: DeviceId, pkt: &RawPacketHeader) -> Vec<FlowRecord> {
        let (_, remote, port, direction) = pkt.orient();
        let mut window = align_down(pkt.timestamp_ms, self.window_ms);
        if let Some(done) = self.emitted_through {
            if window <= done {
                window = done + self.window_ms;
                self.late_packets += 1;
            }
        }
        let key = FlowKey {
            device_id,
            remote,
            port,
            transport: pkt.transport,
            direction,
        };
        let totals = self.open.entry(window).or_default().entry(key).or_default();
        totals.bytes += pkt.byte_len;
        totals.packets += 1;

        let newest = *self.open.keys().next_back().expect("just inserted");
        self.flush_before(newest - self.grace_windows * self.window_ms)
    }

    /// Emits every open window starting before `t_ms`.
    pub fn flush_before(&mut self, t_ms: i64) -> Vec<FlowRecord> {
        let mut out = Vec::new();
        while let Some((&start, _)) = self.open.first_key_value() {
            if start >= t_ms {
                break;
            }
            let (start, flows) = self.open.pop_first().expect("checked non-empty");
            self.emit_window(start, flows, &mut out);
        }
        out
    }

    /// Emits everything still open.
    pub fn finish(&mut self) -> Vec<FlowRecord> {
        self.flush_before(i64::MAX)
    }

    fn emit_window(&mut self, start: i64, flows: HashMap<FlowKey, Totals>, out: &mut Vec<FlowRecord>) {
        let mut flows: Vec<_> = flows.into_iter().collect();
        flows.sort_by(|a, b| a.0.cmp(&b.0));
        for (key, totals) in flows {
            out.push(FlowRecord {
                id: self.flow_id(&key, start),
                encryption: classify_encryption(key.port, key.transport),
                locality: locality_of(key.remote),
                device_id: key.device_id,
                dst_ip: key.remote,
                dst_port: key.port,
                transport: key.transport,
                window_start_ms: start,
                byte_count: totals.bytes,
                packet_count: totals.packets,
                direction: key.direction,
            });
        }
        self.emitted_through = Some(self.emitted_through.map_or(start, |d| d.max(start)));
    }

    fn flow_id(&self, key: &FlowKey, window_start: i64) -> FlowId {
        let mut h = Sha256::new();
        h.update(self.session.as_bytes());
        h.update([0]);
        h.update(key.device_id.0.as_bytes());
        h.update([0]);
        h.update(key.remote.to_string().as_bytes());
        h.update(key.port.to_be_bytes());
        h.update([key.transport as u8, key.direction as u8]);
        h.update(window_start.to_be_bytes());
        FlowId(hex::encode(&h.finalize()[..16]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcap::{Encryption, Locality, MacAddr};

    fn pkt(ts: i64, dst: &str, port: u16, len: u64) -> RawPacketHeader {
        RawPacketHeader {
            timestamp_ms: ts,
            src_mac: MacAddr([2, 0, 0, 0, 0, 1]),
            dst_mac: MacAddr([2, 0, 0, 0, 0, 0xfe]),
            src_ip: "192.168.1.5".parse().unwrap(),
            dst_ip: dst.parse().unwrap(),
            src_port: 50_000,
            dst_port: port,
            transport: Transport::Tcp,
            byte_len: len,
        }
    }

    fn dev() -> DeviceId {
        DeviceId("d1".into())
    }

    #[test]
    fn same_tuple_within_window_merges() {
        let mut c = Coalescer::new(60_000, "t");
        let mut out = Vec::new();
        for (ts, len) in [(1_000, 100), (2_000, 200), (59_000, 300)] {
            out.extend(c.push(dev(), &pkt(ts, "93.184.216.34", 443, len)));
        }
        out.extend(c.finish());
        assert_eq!(out.len(), 1);
        let r = &out[0];
        assert_eq!((r.byte_count, r.packet_count), (600, 3));
        assert_eq!(r.window_start_ms, 0);
        assert_eq!(r.encryption, Encryption::Encrypted);
        assert_eq!(r.locality, Locality::External);
        assert_eq!(r.direction, Direction::Outbound);
    }

    #[test]
    fn windows_close_after_grace() {
        let mut c = Coalescer::new(60_000, "t");
        assert!(c.push(dev(), &pkt(1_000, "1.1.1.1", 443, 100)).is_empty());
        assert!(c.push(dev(), &pkt(61_000, "1.1.1.1", 443, 100)).is_empty());
        let closed = c.push(dev(), &pkt(121_000, "1.1.1.1", 443, 100));
        assert_eq!(closed.len(), 1);
        assert_eq!(closed[0].window_start_ms, 0);
    }

    #[test]
    fn late_packets_are_kept_and_order_preserved() {
        let mut c = Coalescer::new(60_000, "t").with_grace_windows(0);
        let mut out = Vec::new();
        out.extend(c.push(dev(), &pkt(130_000, "1.1.1.1", 443, 100)));
        out.extend(c.push(dev(), &pkt(200_000, "1.1.1.1", 443, 100)));
        // window 120_000 is already emitted; this packet belongs to 60_000.
        out.extend(c.push(dev(), &pkt(70_000, "1.1.1.1", 443, 50)));
        out.extend(c.finish());
        assert_eq!(c.late_packets(), 1);
        assert_eq!(out.iter().map(|r| r.byte_count).sum::<u64>(), 250);
        assert!(out.windows(2).all(|w| w[0].window_start_ms <= w[1].window_start_ms));
    }

    #[test]
    fn inbound_packets_key_on_remote_endpoint() {
        let mut c = Coalescer::new(60_000, "t");
        let mut inbound = pkt(1_000, "192.168.1.5", 50_000, 100);
        inbound.src_ip = "93.184.216.34".parse().unwrap();
        inbound.src_port = 443;
        c.push(dev(), &inbound);
        let out = c.finish();
        assert_eq!(out[0].direction, Direction::Inbound);
        assert_eq!(out[0].dst_ip, "93.184.216.34".parse::<IpAddr>().unwrap());
        assert_eq!(out[0].dst_port, 443);
    }

    #[test]
    fn ids_are_unique_per_session() {
        let mut a = Coalescer::new(60_000, "a");
        let mut b = Coalescer::new(60_000, "b");
        a.push(dev(), &pkt(1_000, "1.1.1.1", 443, 100));
        b.push(dev(), &pkt(1_000, "1.1.1.1", 443, 100));
        let (ra, rb) = (a.finish(), b.finish());
        assert_ne!(ra[0].id, rb[0].id);
    }
}
