//! Synthetic capture generation for demos, replay tests and benchmarks.
//!
//! Frames carry real Ethernet/IP/transport headers but no payload: the record
//! length on the wire (`orig_len`) is preserved while only headers are
//! captured, as a header-only capture with a small snaplen would do.

use std::io::{self, Write};
use std::net::IpAddr;

use etherparse::{EtherType, Ethernet2Header, IpNumber, Ipv4Header, Ipv6Header, TcpHeader, UdpHeader};

use crate::flowcap::Transport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPacket {
    pub timestamp_ms: i64,
    pub src_mac: [u8; 6],
    pub dst_mac: [u8; 6],
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub transport: Transport,
    /// Full length on the wire, including the Ethernet header.
    pub wire_len: u32,
}

/// MAC used as the gateway side of every synthetic conversation.
pub const GATEWAY_MAC: [u8; 6] = [0x02, 0xfe, 0, 0, 0, 0x01];

impl SynthPacket {
    #[allow(clippy::too_many_arguments)]
    pub fn tcp(
        src_mac: [u8; 6],
        src_ip: &str,
        dst_ip: &str,
        src_port: u16,
        dst_port: u16,
        timestamp_ms: i64,
        wire_len: u32,
    ) -> Self {
        Self {
            timestamp_ms,
            src_mac,
            dst_mac: GATEWAY_MAC,
            src_ip: src_ip.parse().expect("valid source ip"),
            dst_ip: dst_ip.parse().expect("valid destination ip"),
            src_port,
            dst_port,
            transport: Transport::Tcp,
            wire_len,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn udp(
        src_mac: [u8; 6],
        src_ip: &str,
        dst_ip: &str,
        src_port: u16,
        dst_port: u16,
        timestamp_ms: i64,
        wire_len: u32,
    ) -> Self {
        Self {
            transport: Transport::Udp,
            ..Self::tcp(src_mac, src_ip, dst_ip, src_port, dst_port, timestamp_ms, wire_len)
        }
    }

    /// Smallest wire length that fits this packet's headers.
    pub fn header_len(&self) -> u32 {
        let ip = if self.src_ip.is_ipv4() { 20 } else { 40 };
        let transport = match self.transport {
            Transport::Tcp => 20,
            Transport::Udp => 8,
            Transport::Other => 0,
        };
        14 + ip + transport
    }
}

/// Header bytes of `pkt`, with IP/UDP lengths consistent with `wire_len`.
pub fn ethernet_frame(pkt: &SynthPacket) -> Vec<u8> {
    let wire_len = pkt.wire_len.max(pkt.header_len());
    let mut out = Vec::with_capacity(pkt.header_len() as usize);
    let ether_type = if pkt.src_ip.is_ipv4() {
        EtherType::IPV4
    } else {
        EtherType::IPV6
    };
    Ethernet2Header {
        source: pkt.src_mac,
        destination: pkt.dst_mac,
        ether_type,
    }
    .write(&mut out)
    .expect("vec write");
    let protocol = match pkt.transport {
        Transport::Tcp => IpNumber::TCP,
        Transport::Udp => IpNumber::UDP,
        Transport::Other => IpNumber::IPV6_NO_NEXT_HEADER,
    };
    match (pkt.src_ip, pkt.dst_ip) {
        (IpAddr::V4(src), IpAddr::V4(dst)) => {
            let payload = (wire_len - 14 - 20) as u16;
            let mut ip = Ipv4Header::new(payload, 64, protocol, src.octets(), dst.octets()).expect("payload fits");
            ip.header_checksum = ip.calc_header_checksum();
            ip.write(&mut out).expect("vec write");
        }
        (IpAddr::V6(src), IpAddr::V6(dst)) => {
            Ipv6Header {
                traffic_class: 0,
                flow_label: Default::default(),
                payload_length: (wire_len - 14 - 40) as u16,
                next_header: protocol,
                hop_limit: 64,
                source: src.octets(),
                destination: dst.octets(),
            }
            .write(&mut out)
            .expect("vec write");
        }
        _ => panic!("mixed address families in synthetic packet"),
    }
    let ip_len = if pkt.src_ip.is_ipv4() { 20 } else { 40 };
    match pkt.transport {
        Transport::Tcp => {
            TcpHeader::new(pkt.src_port, pkt.dst_port, 1, 1024)
                .write(&mut out)
                .expect("vec write");
        }
        Transport::Udp => {
            let len = (wire_len - 14 - ip_len) as u16;
            UdpHeader {
                source_port: pkt.src_port,
                destination_port: pkt.dst_port,
                length: len,
                checksum: 0,
            }
            .write(&mut out)
            .expect("vec write");
        }
        Transport::Other => {}
    }
    out
}

/// Writes a classic (microsecond, little-endian) pcap file.
pub struct PcapWriter<W: Write> {
    out: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        out.write_all(&0xa1b2_c3d4u32.to_le_bytes())?;
        out.write_all(&2u16.to_le_bytes())?;
        out.write_all(&4u16.to_le_bytes())?;
        out.write_all(&0i32.to_le_bytes())?;
        out.write_all(&0u32.to_le_bytes())?;
        out.write_all(&65_535u32.to_le_bytes())?;
        out.write_all(&1u32.to_le_bytes())?; // LINKTYPE_ETHERNET
        Ok(Self { out })
    }

    pub fn write_packet(&mut self, pkt: &SynthPacket) -> io::Result<()> {
        let data = ethernet_frame(pkt);
        self.write_raw(pkt.timestamp_ms, &data, pkt.wire_len.max(data.len() as u32))
    }

    pub fn write_raw(&mut self, timestamp_ms: i64, data: &[u8], orig_len: u32) -> io::Result<()> {
        let secs = timestamp_ms.div_euclid(1_000) as u32;
        let usecs = (timestamp_ms.rem_euclid(1_000) * 1_000) as u32;
        self.out.write_all(&secs.to_le_bytes())?;
        self.out.write_all(&usecs.to_le_bytes())?;
        self.out.write_all(&(data.len() as u32).to_le_bytes())?;
        self.out.write_all(&orig_len.to_le_bytes())?;
        self.out.write_all(data)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Writes a single-section, single-interface pcapng file (microsecond timestamps).
pub struct PcapNgWriter<W: Write> {
    out: W,
}

impl<W: Write> PcapNgWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        // Section header block.
        let mut shb = Vec::new();
        shb.extend_from_slice(&0x1a2b_3c4du32.to_le_bytes());
        shb.extend_from_slice(&1u16.to_le_bytes());
        shb.extend_from_slice(&0u16.to_le_bytes());
        shb.extend_from_slice(&(-1i64).to_le_bytes());
        write_block(&mut out, 0x0a0d_0d0a, &shb)?;
        // Interface description block, Ethernet, default (microsecond) resolution.
        let mut idb = Vec::new();
        idb.extend_from_slice(&1u16.to_le_bytes());
        idb.extend_from_slice(&0u16.to_le_bytes());
        idb.extend_from_slice(&65_535u32.to_le_bytes());
        write_block(&mut out, 0x0000_0001, &idb)?;
        Ok(Self { out })
    }

    pub fn write_packet(&mut self, pkt: &SynthPacket) -> io::Result<()> {
        let data = ethernet_frame(pkt);
        let ts = (pkt.timestamp_ms as u64) * 1_000;
        let mut epb = Vec::new();
        epb.extend_from_slice(&0u32.to_le_bytes());
        epb.extend_from_slice(&((ts >> 32) as u32).to_le_bytes());
        epb.extend_from_slice(&(ts as u32).to_le_bytes());
        epb.extend_from_slice(&(data.len() as u32).to_le_bytes());
        epb.extend_from_slice(&pkt.wire_len.max(data.len() as u32).to_le_bytes());
        epb.extend_from_slice(&data);
        while epb.len() % 4 != 0 {
            epb.push(0);
        }
        write_block(&mut self.out, 0x0000_0006, &epb)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn write_block<W: Write>(out: &mut W, block_type: u32, body: &[u8]) -> io::Result<()> {
    let total = (body.len() + 12) as u32;
    out.write_all(&block_type.to_le_bytes())?;
    out.write_all(&total.to_le_bytes())?;
    out.write_all(body)?;
    out.write_all(&total.to_le_bytes())
}

/// Deterministic household traffic generator (xorshift, no external RNG).
///
/// Produces `packets` packets spread over `devices` devices and the given
/// external destinations, in nondecreasing timestamp order.
pub struct TrafficGenerator {
    state: u64,
    pub start_ms: i64,
    pub span_ms: i64,
    pub devices: Vec<[u8; 6]>,
    pub destinations: Vec<IpAddr>,
    pub ports: Vec<u16>,
}

impl TrafficGenerator {
    pub fn new(seed: u64, start_ms: i64, span_ms: i64) -> Self {
        Self {
            state: seed.max(1),
            start_ms,
            span_ms,
            devices: Vec::new(),
            destinations: Vec::new(),
            ports: vec![443, 80, 8443, 1883],
        }
    }

    fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.state = x;
        x
    }

    fn index(&mut self, len: usize) -> usize {
        (self.next_u64() % len as u64) as usize
    }

    /// Packet number `i` of `total`.
    pub fn packet(&mut self, i: u64, total: u64) -> SynthPacket {
        let ts = self.start_ms + (i as i128 * self.span_ms as i128 / total.max(1) as i128) as i64;
        let i = self.index(self.devices.len());
        let mac = self.devices[i];
        let i = self.index(self.destinations.len());
        let dst = self.destinations[i];
        let i = self.index(self.ports.len());
        let port = self.ports[i];
        let src_ip: IpAddr = match dst {
            IpAddr::V4(_) => format!("192.168.1.{}", 10 + mac[5]).parse().unwrap(),
            IpAddr::V6(_) => format!("fd00::{:x}", 10 + mac[5] as u16).parse().unwrap(),
        };
        let transport = if port == 1883 || self.next_u64() % 8 != 0 {
            Transport::Tcp
        } else {
            Transport::Udp
        };
        let wire_len = 80 + (self.next_u64() % 1_400) as u32;
        SynthPacket {
            timestamp_ms: ts,
            src_mac: mac,
            dst_mac: GATEWAY_MAC,
            src_ip,
            dst_ip: dst,
            src_port: 40_000 + (self.next_u64() % 16) as u16,
            dst_port: port,
            transport,
            wire_len,
        }
    }
}
