//! Packet sources: capture files today, raw sockets on Linux.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use pcap_parser::pcapng::Block;
use pcap_parser::traits::PcapReaderIterator;
use pcap_parser::{create_reader, Linktype, PcapBlockOwned, PcapError};

use super::ingest::IngestError;

/// Link layers the decoder understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkType {
    Ethernet,
    Unsupported(i32),
}

impl From<Linktype> for LinkType {
    fn from(value: Linktype) -> Self {
        if value == Linktype::ETHERNET {
            LinkType::Ethernet
        } else {
            LinkType::Unsupported(value.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct CapturedFrame {
    pub timestamp_ms: i64,
    pub link: LinkType,
    /// Length on the wire, which may exceed `data.len()` under a snaplen.
    pub orig_len: u64,
    pub data: Vec<u8>,
    /// Byte offset of the record within its source, for diagnostics.
    pub offset: u64,
}

pub trait PacketSource {
    /// Next frame, or `None` at end of input.
    fn next_frame(&mut self) -> Result<Option<CapturedFrame>, IngestError>;
}

struct Interface {
    link: LinkType,
    units_per_sec: u64,
    ts_offset: u64,
}

/// Reads pcap or pcapng files; the format is probed from the first block.
pub struct PcapFileSource {
    reader: Option<Box<dyn PcapReaderIterator + Send>>,
    legacy_link: LinkType,
    legacy_nanos: bool,
    interfaces: Vec<Interface>,
}

const READ_BUFFER: usize = 1 << 16;
const MAX_BUFFER: usize = 1 << 24;

impl PcapFileSource {
    pub fn open(path: &Path) -> Result<Self, IngestError> {
        let file = File::open(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = match create_reader(READ_BUFFER, BufReader::new(file)) {
            Ok(r) => Some(r),
            // A zero-length file holds no packets.
            Err(PcapError::Eof) => None,
            Err(e) => {
                return Err(IngestError::Corrupt {
                    offset: 0,
                    reason: format!("not a pcap or pcapng file: {e:?}"),
                })
            }
        };
        Ok(Self {
            reader,
            legacy_link: LinkType::Ethernet,
            legacy_nanos: false,
            interfaces: Vec::new(),
        })
    }
}

fn corrupt(offset: usize, reason: impl Into<String>) -> IngestError {
    IngestError::Corrupt {
        offset: offset as u64,
        reason: reason.into(),
    }
}

impl PacketSource for PcapFileSource {
    fn next_frame(&mut self) -> Result<Option<CapturedFrame>, IngestError> {
        let Some(reader) = self.reader.as_mut() else {
            return Ok(None);
        };
        loop {
            let offset = reader.consumed();
            let (len, frame) = match reader.next() {
                Ok((len, block)) => {
                    let frame = match block {
                        PcapBlockOwned::LegacyHeader(hdr) => {
                            self.legacy_link = hdr.network.into();
                            self.legacy_nanos = hdr.is_nanosecond_precision();
                            None
                        }
                        PcapBlockOwned::Legacy(b) => {
                            let sub_ms = if self.legacy_nanos {
                                b.ts_usec as i64 / 1_000_000
                            } else {
                                b.ts_usec as i64 / 1_000
                            };
                            Some(CapturedFrame {
                                timestamp_ms: b.ts_sec as i64 * 1_000 + sub_ms,
                                link: self.legacy_link,
                                orig_len: b.origlen as u64,
                                data: b.data[..(b.caplen as usize).min(b.data.len())].to_vec(),
                                offset: offset as u64,
                            })
                        }
                        PcapBlockOwned::NG(Block::SectionHeader(_)) => {
                            self.interfaces.clear();
                            None
                        }
                        PcapBlockOwned::NG(Block::InterfaceDescription(idb)) => {
                            let units_per_sec = idb
                                .ts_resolution()
                                .ok_or_else(|| corrupt(offset, "invalid interface timestamp resolution"))?;
                            self.interfaces.push(Interface {
                                link: idb.linktype.into(),
                                units_per_sec,
                                ts_offset: idb.ts_offset().max(0) as u64,
                            });
                            None
                        }
                        PcapBlockOwned::NG(Block::EnhancedPacket(epb)) => {
                            let iface = self.interfaces.get(epb.if_id as usize).ok_or_else(|| {
                                corrupt(offset, format!("packet references unknown interface {}", epb.if_id))
                            })?;
                            let (secs, frac) = epb.decode_ts(iface.ts_offset, iface.units_per_sec);
                            let frac_ms = (frac as u128 * 1_000 / iface.units_per_sec as u128) as i64;
                            Some(CapturedFrame {
                                timestamp_ms: secs as i64 * 1_000 + frac_ms,
                                link: iface.link,
                                orig_len: epb.origlen as u64,
                                data: epb.data[..(epb.caplen as usize).min(epb.data.len())].to_vec(),
                                offset: offset as u64,
                            })
                        }
                        PcapBlockOwned::NG(Block::SimplePacket(_)) => {
                            // Simple packet blocks carry no timestamp; they cannot be bucketed.
                            return Err(corrupt(offset, "simple packet blocks carry no timestamp"));
                        }
                        PcapBlockOwned::NG(_) => None,
                    };
                    (len, frame)
                }
                Err(PcapError::Eof) => return Ok(None),
                Err(PcapError::Incomplete(_)) => {
                    reader
                        .refill()
                        .map_err(|e| corrupt(offset, format!("read failed: {e:?}")))?;
                    continue;
                }
                Err(PcapError::BufferTooSmall) => {
                    let size = reader.data().len().max(READ_BUFFER) * 2;
                    if size > MAX_BUFFER || !reader.grow(size) {
                        return Err(corrupt(offset, "record larger than 16 MiB"));
                    }
                    reader
                        .refill()
                        .map_err(|e| corrupt(offset, format!("read failed: {e:?}")))?;
                    continue;
                }
                Err(PcapError::UnexpectedEof) => return Err(corrupt(offset, "truncated record at end of file")),
                Err(e) => return Err(corrupt(offset, format!("{e:?}"))),
            };
            reader.consume(len);
            if let Some(frame) = frame {
                return Ok(Some(frame));
            }
        }
    }
}
