//! Live capture from a Linux `AF_PACKET` socket.
//!
//! Address semantics: devices are identified by the Ethernet addresses seen on
//! the capture interface. Run the capture on the LAN-facing side of the
//! gateway (the hotspot bridge, not the NAT'd uplink), otherwise every packet
//! carries the router's MAC and the household collapses into one device.
//! Only the first [`SNAP_LEN`] bytes of each frame are copied out of the
//! kernel; the wire length is recovered with `MSG_TRUNC`. Needs
//! `CAP_NET_RAW`.

use std::ffi::CString;
use std::io;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::time::Duration;

use super::ingest::IngestError;
use super::source::{CapturedFrame, LinkType, PacketSource};
use crate::time::{Clock, SystemClock};

/// Enough for Ethernet + VLAN + IPv6 + TCP with options.
pub const SNAP_LEN: usize = 128;

pub struct RawSocketSource {
    fd: OwnedFd,
    buf: Vec<u8>,
    frames: u64,
}

fn os_err(context: &str) -> IngestError {
    IngestError::Source(format!("{context}: {}", io::Error::last_os_error()))
}

impl RawSocketSource {
    pub fn open(interface: &str) -> Result<Self, IngestError> {
        let name =
            CString::new(interface).map_err(|_| IngestError::Source(format!("bad interface name {interface:?}")))?;
        let protocol = (libc::ETH_P_ALL as u16).to_be();
        // SAFETY: plain socket(2) call; the returned descriptor is checked and owned below.
        let raw = unsafe { libc::socket(libc::AF_PACKET, libc::SOCK_RAW, protocol as i32) };
        if raw < 0 {
            return Err(os_err("socket(AF_PACKET)"));
        }
        // SAFETY: `raw` is a freshly created, valid descriptor that nothing else owns.
        let fd = unsafe { OwnedFd::from_raw_fd(raw) };
        // SAFETY: `name` is a valid NUL-terminated string.
        let ifindex = unsafe { libc::if_nametoindex(name.as_ptr()) };
        if ifindex == 0 {
            return Err(os_err(&format!("unknown interface {interface}")));
        }
        // SAFETY: sockaddr_ll is plain old data; zeroed is a valid starting value.
        let mut addr: libc::sockaddr_ll = unsafe { std::mem::zeroed() };
        addr.sll_family = libc::AF_PACKET as u16;
        addr.sll_protocol = protocol;
        addr.sll_ifindex = ifindex as i32;
        // SAFETY: addr points to a properly sized sockaddr_ll for the duration of the call.
        let rc = unsafe {
            libc::bind(
                fd.as_raw_fd(),
                &addr as *const libc::sockaddr_ll as *const libc::sockaddr,
                std::mem::size_of::<libc::sockaddr_ll>() as u32,
            )
        };
        if rc < 0 {
            return Err(os_err("bind"));
        }
        Ok(Self {
            fd,
            buf: vec![0; SNAP_LEN],
            frames: 0,
        })
    }

    /// Waits up to `timeout` for a frame; `Ok(None)` means the wait timed out.
    pub fn next_frame_timeout(&mut self, timeout: Duration) -> Result<Option<CapturedFrame>, IngestError> {
        let tv = libc::timeval {
            tv_sec: timeout.as_secs() as libc::time_t,
            tv_usec: timeout.subsec_micros() as libc::suseconds_t,
        };
        // SAFETY: tv is a valid timeval living across the call.
        let rc = unsafe {
            libc::setsockopt(
                self.fd.as_raw_fd(),
                libc::SOL_SOCKET,
                libc::SO_RCVTIMEO,
                &tv as *const libc::timeval as *const libc::c_void,
                std::mem::size_of::<libc::timeval>() as u32,
            )
        };
        if rc < 0 {
            return Err(os_err("setsockopt(SO_RCVTIMEO)"));
        }
        self.recv()
    }

    fn recv(&mut self) -> Result<Option<CapturedFrame>, IngestError> {
        // SAFETY: buf is valid for writes of buf.len() bytes.
        let n = unsafe {
            libc::recv(
                self.fd.as_raw_fd(),
                self.buf.as_mut_ptr() as *mut libc::c_void,
                self.buf.len(),
                libc::MSG_TRUNC,
            )
        };
        if n < 0 {
            let err = io::Error::last_os_error();
            return match err.kind() {
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted => Ok(None),
                _ => Err(IngestError::Source(format!("recv: {err}"))),
            };
        }
        let wire_len = n as usize;
        let captured = wire_len.min(self.buf.len());
        self.frames += 1;
        Ok(Some(CapturedFrame {
            timestamp_ms: SystemClock.now_ms(),
            link: LinkType::Ethernet,
            orig_len: wire_len as u64,
            data: self.buf[..captured].to_vec(),
            offset: self.frames,
        }))
    }
}

impl PacketSource for RawSocketSource {
    /// Blocks until a frame arrives. Live sources never end on their own.
    fn next_frame(&mut self) -> Result<Option<CapturedFrame>, IngestError> {
        loop {
            if let Some(frame) = self.next_frame_timeout(Duration::from_secs(3600))? {
                return Ok(Some(frame));
            }
        }
    }
}
