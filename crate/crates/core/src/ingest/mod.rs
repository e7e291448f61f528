//! Classic pcap I/O and layered frame decoding.

pub mod frame;
mod packet;
mod pcap;

pub use packet::{
    detect_app_protocols, parse_packet, AppProtocol, LinkLayer, NetworkLayer, ParsedPacket,
    Transport,
};
pub use pcap::{
    read_pcap, read_pcap_bytes, write_pcap, write_pcap_bytes, PcapCapture, PcapError, RawPacket,
};
