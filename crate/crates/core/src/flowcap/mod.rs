//! Header-level capture: packets in, coalesced flow records out.
//!
//! Only link, network and transport headers are ever decoded. Packets are
//! attributed to a household device (by a salted hash of the device MAC),
//! oriented so that the remote endpoint is always the record's destination,
//! and merged per coalescing window.

mod coalesce;
mod decode;
mod device;
mod ingest;
#[cfg(target_os = "linux")]
pub mod live;
mod source;

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use coalesce::{Coalescer, DEFAULT_COALESCE_WINDOW_MS};
pub use decode::{decode_frame, DecodeOutcome};
pub use device::{
    device_id, parse_device_map, Device, DeviceError, DeviceMapEntry, DeviceMapError, DeviceRegistry, Salt,
    UNRECOGNISED_PREFIX,
};
pub use ingest::{ingest_pcap, FlowIngest, IngestError, IngestSummary};
pub use source::{CapturedFrame, LinkType, PacketSource, PcapFileSource};

/// Opaque device identifier: hex of a salted MAC hash.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub String);

impl DeviceId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DeviceId {
    fn from(value: &str) -> Self {
        DeviceId(value.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub String);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FlowId {
    fn from(value: &str) -> Self {
        FlowId(value.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid MAC address {0:?}")]
pub struct MacParseError(pub String);

impl FromStr for MacAddr {
    type Err = MacParseError;

    /// Accepts `aa:bb:cc:dd:ee:ff` and `aa-bb-cc-dd-ee-ff`, any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MacParseError(s.to_owned());
        let parts: Vec<&str> = s.trim().split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(err());
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(err());
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| err())?;
        }
        Ok(MacAddr(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Transport {
    Tcp,
    Udp,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Outbound,
    Inbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Locality {
    External,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Encryption {
    Encrypted,
    Plaintext,
    Unknown,
}

/// The header fields kept from one captured packet.
///
/// `dst_mac` and `src_port` are kept so inbound packets can be attributed to
/// the receiving device and keyed on the remote port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacketHeader {
    pub timestamp_ms: i64,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub transport: Transport,
    /// Length of the packet on the wire, from the link header down.
    pub byte_len: u64,
}

impl RawPacketHeader {
    /// Smallest wire length that can carry this packet's IP and transport headers.
    pub fn min_len(&self) -> u64 {
        let ip = match self.dst_ip {
            IpAddr::V4(_) => 20,
            IpAddr::V6(_) => 40,
        };
        let transport = match self.transport {
            Transport::Tcp => 20,
            Transport::Udp => 8,
            Transport::Other => 0,
        };
        ip + transport
    }

    pub fn is_valid(&self) -> bool {
        self.timestamp_ms > 0 && self.byte_len >= self.min_len()
    }

    /// Device MAC, remote endpoint, remote port and direction.
    ///
    /// A packet from an external source to a local address is inbound and
    /// belongs to the receiving device; everything else is outbound from the
    /// sender.
    pub fn orient(&self) -> (MacAddr, IpAddr, u16, Direction) {
        if !is_local(self.src_ip) && is_local(self.dst_ip) {
            (self.dst_mac, self.src_ip, self.src_port, Direction::Inbound)
        } else {
            (self.src_mac, self.dst_ip, self.dst_port, Direction::Outbound)
        }
    }
}

/// One coalesced, unidirectional, header-level flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub id: FlowId,
    pub device_id: DeviceId,
    /// Remote endpoint address (the destination for outbound traffic).
    pub dst_ip: IpAddr,
    pub dst_port: u16,
    pub transport: Transport,
    pub window_start_ms: i64,
    pub byte_count: u64,
    pub packet_count: u64,
    pub direction: Direction,
    pub locality: Locality,
    pub encryption: Encryption,
}

/// Port heuristic; payloads are never inspected.
pub fn classify_encryption(dst_port: u16, transport: Transport) -> Encryption {
    match (dst_port, transport) {
        (443 | 853 | 8443, Transport::Tcp) => Encryption::Encrypted,
        (80 | 53, _) => Encryption::Plaintext,
        _ => Encryption::Unknown,
    }
}

/// True for destinations that never leave the home network: RFC 1918 and
/// IPv6 unique-local space, link-local, loopback, multicast, broadcast and
/// the unspecified address.
pub fn is_local(ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => {
            v4.is_private()
                || v4.is_link_local()
                || v4.is_loopback()
                || v4.is_multicast()
                || v4.is_broadcast()
                || v4.is_unspecified()
        }
        IpAddr::V6(v6) => {
            let first = v6.segments()[0];
            v6.is_loopback()
                || v6.is_unspecified()
                || v6.is_multicast()
                || (first & 0xfe00) == 0xfc00
                || (first & 0xffc0) == 0xfe80
                || v6.to_ipv4_mapped().is_some_and(|v4| is_local(IpAddr::V4(v4)))
        }
    }
}

pub fn locality_of(ip: IpAddr) -> Locality {
    if is_local(ip) {
        Locality::Local
    } else {
        Locality::External
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::net::{Ipv4Addr, Ipv6Addr};

    #[test]
    fn encryption_rules() {
        assert_eq!(classify_encryption(443, Transport::Tcp), Encryption::Encrypted);
        assert_eq!(classify_encryption(853, Transport::Tcp), Encryption::Encrypted);
        assert_eq!(classify_encryption(8443, Transport::Tcp), Encryption::Encrypted);
        assert_eq!(classify_encryption(80, Transport::Tcp), Encryption::Plaintext);
        assert_eq!(classify_encryption(53, Transport::Udp), Encryption::Plaintext);
        assert_eq!(classify_encryption(1234, Transport::Udp), Encryption::Unknown);
        assert_eq!(classify_encryption(443, Transport::Udp), Encryption::Unknown);
    }

    #[test]
    fn private_destination_is_local() {
        assert_eq!(locality_of("192.168.1.10".parse().unwrap()), Locality::Local);
        assert_eq!(locality_of("93.184.216.34".parse().unwrap()), Locality::External);
        assert_eq!(locality_of("fe80::1".parse().unwrap()), Locality::Local);
        assert_eq!(locality_of("2606:4700::1".parse().unwrap()), Locality::External);
    }

    #[test]
    fn mac_round_trips_through_text() {
        let mac: MacAddr = "AA-bb-0c-dd-ee-01".parse().unwrap();
        assert_eq!(mac.to_string(), "aa:bb:0c:dd:ee:01");
        assert!("aa:bb:cc".parse::<MacAddr>().is_err());
        assert!("aa:bb:cc:dd:ee:zz".parse::<MacAddr>().is_err());
    }

    /// Range table written out as integer bounds, independent of std's helpers.
    fn v4_local_oracle(ip: Ipv4Addr) -> bool {
        let x = u32::from(ip);
        let ranges: [(u32, u32); 8] = [
            (0x0A00_0000, 0x0AFF_FFFF), // 10/8
            (0xAC10_0000, 0xAC1F_FFFF), // 172.16/12
            (0xC0A8_0000, 0xC0A8_FFFF), // 192.168/16
            (0xA9FE_0000, 0xA9FE_FFFF), // 169.254/16
            (0x7F00_0000, 0x7FFF_FFFF), // 127/8
            (0xE000_0000, 0xEFFF_FFFF), // 224/4
            (0xFFFF_FFFF, 0xFFFF_FFFF),
            (0, 0),
        ];
        ranges.iter().any(|(lo, hi)| *lo <= x && x <= *hi)
    }

    fn v6_local_oracle(ip: Ipv6Addr) -> bool {
        let x = u128::from(ip);
        let in_prefix = |net: u128, len: u32| (x ^ net) >> (128 - len) == 0;
        x == 1
            || x == 0
            || in_prefix(0xff00 << 112, 8)
            || in_prefix(0xfc00 << 112, 7)
            || in_prefix(0xfe80 << 112, 10)
            || (in_prefix(0xffff << 32, 96) && v4_local_oracle(Ipv4Addr::from(x as u32)))
    }

    proptest! {
        #[test]
        fn locality_matches_range_oracle_v4(raw in any::<u32>()) {
            let ip = Ipv4Addr::from(raw);
            prop_assert_eq!(is_local(IpAddr::V4(ip)), v4_local_oracle(ip));
        }

        #[test]
        fn locality_matches_range_oracle_v4_near_boundaries(
            base in prop::sample::select(vec![0x0A00_0000u32, 0xAC10_0000, 0xC0A8_0000, 0xA9FE_0000, 0x7F00_0000, 0xE000_0000]),
            delta in -70_000i64..70_000,
        ) {
            let ip = Ipv4Addr::from((base as i64 + delta).clamp(0, u32::MAX as i64) as u32);
            prop_assert_eq!(is_local(IpAddr::V4(ip)), v4_local_oracle(ip));
        }

        #[test]
        fn locality_matches_range_oracle_v6(raw in any::<u128>(), top in prop::sample::select(vec![0u16, 0xfc00, 0xfd12, 0xfe80, 0xfebf, 0xfec0, 0xff02, 0x2001])) {
            let ip = Ipv6Addr::from((raw & !(0xffffu128 << 112)) | ((top as u128) << 112));
            prop_assert_eq!(is_local(IpAddr::V6(ip)), v6_local_oracle(ip));
        }
    }
}
