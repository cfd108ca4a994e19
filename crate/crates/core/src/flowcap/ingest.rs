use std::collections::VecDeque;
use std::path::Path;

use thiserror::Error;

use super::coalesce::Coalescer;
use super::decode::{decode_frame, DecodeOutcome};
use super::device::{DeviceError, DeviceMapEntry, DeviceRegistry};
use super::source::{PacketSource, PcapFileSource};
use super::FlowRecord;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt capture at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("coalesce window must be positive, got {0} ms")]
    InvalidWindow(i64),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("capture source failed: {0}")]
    Source(String),
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IngestSummary {
    /// Packets with a usable IP header.
    pub packets: u64,
    /// Wire bytes of those packets.
    pub bytes: u64,
    /// Frames dropped for lack of an IP header.
    pub skipped: u64,
    pub flows: u64,
    pub late_packets: u64,
}

/// Streaming packet-to-flow pipeline over any [`PacketSource`].
///
/// Yields records in nondecreasing `window_start_ms` order. A source error is
/// reported after every record built from the packets read before it.
pub struct FlowIngest<S> {
    source: S,
    registry: DeviceRegistry,
    coalescer: Coalescer,
    pending: VecDeque<FlowRecord>,
    error: Option<IngestError>,
    done: bool,
    summary: IngestSummary,
}

impl<S: PacketSource> FlowIngest<S> {
    pub fn new(source: S, registry: DeviceRegistry, coalescer: Coalescer) -> Self {
        Self {
            source,
            registry,
            coalescer,
            pending: VecDeque::new(),
            error: None,
            done: false,
            summary: IngestSummary::default(),
        }
    }

    pub fn summary(&self) -> IngestSummary {
        IngestSummary {
            late_packets: self.coalescer.late_packets(),
            ..self.summary
        }
    }

    pub fn registry(&self) -> &DeviceRegistry {
        &self.registry
    }

    /// Gives back the device registry, including auto-registered devices.
    pub fn into_parts(self) -> (DeviceRegistry, IngestSummary) {
        let summary = self.summary();
        (self.registry, summary)
    }

    fn pump(&mut self) {
        match self.source.next_frame() {
            Ok(Some(frame)) => match decode_frame(&frame) {
                DecodeOutcome::Packet(pkt) => {
                    self.summary.packets += 1;
                    self.summary.bytes += pkt.byte_len;
                    let (mac, ..) = pkt.orient();
                    let device = self.registry.observe(mac, pkt.timestamp_ms);
                    self.pending.extend(self.coalescer.push(device, &pkt));
                }
                DecodeOutcome::Skipped(_) => self.summary.skipped += 1,
            },
            Ok(None) => {
                self.done = true;
                self.pending.extend(self.coalescer.finish());
            }
            Err(e) => {
                self.done = true;
                self.error = Some(e);
                self.pending.extend(self.coalescer.finish());
            }
        }
    }
}

impl<S: PacketSource> Iterator for FlowIngest<S> {
    type Item = Result<FlowRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(record) = self.pending.pop_front() {
                self.summary.flows += 1;
                return Some(Ok(record));
            }
            if self.done {
                return self.error.take().map(Err);
            }
            self.pump();
        }
    }
}

/// Opens a pcap/pcapng file for flow extraction. Device map entries are
/// registered first; unknown hardware is auto-registered as it appears.
pub fn ingest_pcap(
    path: &Path,
    device_map: &[DeviceMapEntry],
    mut registry: DeviceRegistry,
    coalesce_window_ms: i64,
    session: &str,
) -> Result<FlowIngest<PcapFileSource>, IngestError> {
    if coalesce_window_ms <= 0 {
        return Err(IngestError::InvalidWindow(coalesce_window_ms));
    }
    for entry in device_map {
        registry.register(entry.mac, &entry.name)?;
    }
    let source = PcapFileSource::open(path)?;
    Ok(FlowIngest::new(
        source,
        registry,
        Coalescer::new(coalesce_window_ms, session),
    ))
}
