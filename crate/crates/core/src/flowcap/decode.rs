use etherparse::{LaxNetSlice, LaxSlicedPacket, LinkSlice, TransportSlice};

use super::source::{CapturedFrame, LinkType};
use super::{MacAddr, RawPacketHeader, Transport};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeOutcome {
    Packet(RawPacketHeader),
    /// Frames without a usable IP header (ARP, truncated, unsupported link).
    Skipped(&'static str),
}

/// Pulls the header fields out of a captured frame. Payload bytes are never read.
pub fn decode_frame(frame: &CapturedFrame) -> DecodeOutcome {
    if frame.link != LinkType::Ethernet {
        return DecodeOutcome::Skipped("unsupported link type");
    }
    let Ok(sliced) = LaxSlicedPacket::from_ethernet(&frame.data) else {
        return DecodeOutcome::Skipped("truncated ethernet header");
    };
    let Some(LinkSlice::Ethernet2(eth)) = &sliced.link else {
        return DecodeOutcome::Skipped("no ethernet header");
    };
    let (src_mac, dst_mac) = (MacAddr(eth.source()), MacAddr(eth.destination()));
    let (src_ip, dst_ip) = match &sliced.net {
        Some(LaxNetSlice::Ipv4(v4)) => (v4.header().source_addr().into(), v4.header().destination_addr().into()),
        Some(LaxNetSlice::Ipv6(v6)) => (v6.header().source_addr().into(), v6.header().destination_addr().into()),
        _ => return DecodeOutcome::Skipped("no IP header"),
    };
    let (transport, src_port, dst_port) = match &sliced.transport {
        Some(TransportSlice::Tcp(tcp)) => (Transport::Tcp, tcp.source_port(), tcp.destination_port()),
        Some(TransportSlice::Udp(udp)) => (Transport::Udp, udp.source_port(), udp.destination_port()),
        _ => (Transport::Other, 0, 0),
    };
    let header = RawPacketHeader {
        timestamp_ms: frame.timestamp_ms,
        src_mac,
        dst_mac,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        transport,
        byte_len: frame.orig_len.max(frame.data.len() as u64),
    };
    if !header.is_valid() {
        return DecodeOutcome::Skipped("implausible length or timestamp");
    }
    DecodeOutcome::Packet(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{ethernet_frame, SynthPacket};

    fn frame(data: Vec<u8>, orig_len: u64) -> CapturedFrame {
        CapturedFrame {
            timestamp_ms: 1_000,
            link: LinkType::Ethernet,
            orig_len,
            data,
            offset: 0,
        }
    }

    #[test]
    fn decodes_tcp_over_ipv4() {
        let pkt = SynthPacket::tcp(
            [2, 0, 0, 0, 0, 1],
            "192.168.1.5",
            "93.184.216.34",
            50000,
            443,
            1_000,
            300,
        );
        let data = ethernet_frame(&pkt);
        let DecodeOutcome::Packet(h) = decode_frame(&frame(data, 300)) else {
            panic!("expected packet");
        };
        assert_eq!(h.dst_port, 443);
        assert_eq!(h.transport, Transport::Tcp);
        assert_eq!(h.byte_len, 300);
        assert_eq!(h.src_mac, MacAddr([2, 0, 0, 0, 0, 1]));
    }

    #[test]
    fn decodes_udp_over_ipv6() {
        let pkt = SynthPacket::udp([2, 0, 0, 0, 0, 1], "fd00::5", "2606:4700::1111", 40000, 53, 1_000, 120);
        let DecodeOutcome::Packet(h) = decode_frame(&frame(ethernet_frame(&pkt), 120)) else {
            panic!("expected packet");
        };
        assert_eq!((h.transport, h.dst_port), (Transport::Udp, 53));
    }

    #[test]
    fn non_ip_frames_are_skipped() {
        let mut data = vec![0u8; 14];
        data[12] = 0x08;
        data[13] = 0x06; // ARP
        data.extend_from_slice(&[0u8; 28]);
        assert!(matches!(decode_frame(&frame(data, 42)), DecodeOutcome::Skipped(_)));
        assert!(matches!(
            decode_frame(&frame(vec![1, 2, 3], 3)),
            DecodeOutcome::Skipped(_)
        ));
    }
}
