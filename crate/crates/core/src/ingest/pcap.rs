//! Classic libpcap file format (not pcapng).
//!
//! A 24-byte global header (magic, version 2.4, zone, sigfigs, snaplen,
//! linktype) followed by records of a 16-byte header (`ts_sec`, `ts_usec`,
//! `incl_len`, `orig_len`) and `incl_len` bytes of frame data. Byte order is
//! given by the magic number.

use std::fs;
use std::path::Path;

use thiserror::Error;

const MAGIC_MICROS: u32 = 0xA1B2_C3D4;
const MAGIC_NANOS: u32 = 0xA1B2_3C4D;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
pub const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("malformed pcap header: {0}")]
    MalformedHeader(String),
    #[error("file too short for a pcap global header ({0} bytes)")]
    TruncatedFile(usize),
    #[error("unsupported link type {0} (only Ethernet is accepted)")]
    LinkTypeUnsupported(u32),
    #[error("captured length {captured} exceeds original length {original}")]
    InvalidRecord { captured: usize, original: u32 },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One captured frame as stored in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub timestamp_micros: i64,
    pub captured: Vec<u8>,
    pub original_length: u32,
}

impl RawPacket {
    /// A fully captured frame (`original_length == captured.len()`).
    pub fn new(timestamp_micros: i64, captured: Vec<u8>) -> Self {
        let original_length = captured.len() as u32;
        Self {
            timestamp_micros,
            captured,
            original_length,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PcapCapture {
    pub packets: Vec<RawPacket>,
    /// Trailing records cut off by the end of the file; they are dropped.
    pub truncated_records: usize,
}

pub fn read_pcap(path: &Path) -> Result<PcapCapture, PcapError> {
    let bytes = fs::read(path).map_err(|source| PcapError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    read_pcap_bytes(&bytes)
}

pub fn read_pcap_bytes(bytes: &[u8]) -> Result<PcapCapture, PcapError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::TruncatedFile(bytes.len()));
    }
    let magic_le = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let magic_be = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let (little, nanos) = match (magic_le, magic_be) {
        (MAGIC_MICROS, _) => (true, false),
        (MAGIC_NANOS, _) => (true, true),
        (_, MAGIC_MICROS) => (false, false),
        (_, MAGIC_NANOS) => (false, true),
        _ => {
            return Err(PcapError::MalformedHeader(format!(
                "bad magic {magic_le:#010x}"
            )))
        }
    };
    let u16_at = |o: usize| {
        let b: [u8; 2] = bytes[o..o + 2].try_into().unwrap();
        if little {
            u16::from_le_bytes(b)
        } else {
            u16::from_be_bytes(b)
        }
    };
    let u32_at = |o: usize| {
        let b: [u8; 4] = bytes[o..o + 4].try_into().unwrap();
        if little {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        }
    };
    let major = u16_at(4);
    if major != 2 {
        return Err(PcapError::MalformedHeader(format!("version {major}.{}", u16_at(6))));
    }
    let linktype = u32_at(20);
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::LinkTypeUnsupported(linktype));
    }

    let mut capture = PcapCapture::default();
    let mut pos = GLOBAL_HEADER_LEN;
    while pos < bytes.len() {
        if bytes.len() - pos < RECORD_HEADER_LEN {
            capture.truncated_records += 1;
            break;
        }
        let ts_sec = u32_at(pos) as i64;
        let ts_frac = u32_at(pos + 4) as i64;
        let incl = u32_at(pos + 8) as usize;
        let orig = u32_at(pos + 12);
        pos += RECORD_HEADER_LEN;
        if incl > bytes.len() - pos {
            capture.truncated_records += 1;
            break;
        }
        if incl as u64 > orig as u64 {
            return Err(PcapError::InvalidRecord {
                captured: incl,
                original: orig,
            });
        }
        let micros = if nanos { ts_frac / 1000 } else { ts_frac };
        capture.packets.push(RawPacket {
            timestamp_micros: ts_sec * 1_000_000 + micros,
            captured: bytes[pos..pos + incl].to_vec(),
            original_length: orig,
        });
        pos += incl;
    }
    Ok(capture)
}

/// Serializes packets as a little-endian, microsecond, Ethernet pcap.
pub fn write_pcap_bytes(packets: &[RawPacket]) -> Vec<u8> {
    let total: usize = packets.iter().map(|p| RECORD_HEADER_LEN + p.captured.len()).sum();
    let mut out = Vec::with_capacity(GLOBAL_HEADER_LEN + total);
    out.extend_from_slice(&MAGIC_MICROS.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&65_535u32.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for p in packets {
        let sec = p.timestamp_micros.div_euclid(1_000_000);
        let usec = p.timestamp_micros.rem_euclid(1_000_000);
        out.extend_from_slice(&(sec as u32).to_le_bytes());
        out.extend_from_slice(&(usec as u32).to_le_bytes());
        out.extend_from_slice(&(p.captured.len() as u32).to_le_bytes());
        out.extend_from_slice(&p.original_length.max(p.captured.len() as u32).to_le_bytes());
        out.extend_from_slice(&p.captured);
    }
    out
}

pub fn write_pcap(packets: &[RawPacket], path: &Path) -> Result<(), PcapError> {
    fs::write(path, write_pcap_bytes(packets)).map_err(|source| PcapError::IoFailure {
        path: path.display().to_string(),
        source,
    })
}
