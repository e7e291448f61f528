//! Per-packet 23-feature vectors and the fingerprint matrix built from them.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::ingest::{AppProtocol, LinkLayer, NetworkLayer, ParsedPacket, Transport};

pub const FEATURE_COUNT: usize = 23;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "arp",
    "llc",
    "ip",
    "icmp",
    "icmpv6",
    "eapol",
    "tcp",
    "udp",
    "http",
    "https",
    "dhcp",
    "bootp",
    "ssdp",
    "dns",
    "mdns",
    "ntp",
    "ip_padding",
    "ip_router_alert",
    "size",
    "raw_data",
    "dest_ip_counter",
    "src_port_class",
    "dst_port_class",
];

const APP_FEATURES: [(AppProtocol, usize); 8] = [
    (AppProtocol::Http, 8),
    (AppProtocol::Https, 9),
    (AppProtocol::Dhcp, 10),
    (AppProtocol::Bootp, 11),
    (AppProtocol::Ssdp, 12),
    (AppProtocol::Dns, 13),
    (AppProtocol::Mdns, 14),
    (AppProtocol::Ntp, 15),
];

/// One fingerprint column; values are indexed as in [`FEATURE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct PacketFeatures(pub [u32; FEATURE_COUNT]);

impl PacketFeatures {
    pub fn get(&self, name: &str) -> Option<u32> {
        FEATURE_NAMES.iter().position(|&n| n == name).map(|i| self.0[i])
    }
}

/// 0: no port, 1: 0–1023, 2: 1024–49151, 3: 49152–65535.
pub fn port_class(port: Option<u16>) -> u32 {
    match port {
        None => 0,
        Some(0..=1023) => 1,
        Some(1024..=49151) => 2,
        Some(_) => 3,
    }
}

/// Feature vector of one packet; `dest_ip_counter` is supplied by the caller.
pub fn packet_features(p: &ParsedPacket, dest_ip_counter: u32) -> PacketFeatures {
    let mut f = [0u32; FEATURE_COUNT];
    f[0] = (p.link == LinkLayer::Arp) as u32;
    f[1] = (p.link == LinkLayer::Llc) as u32;
    f[2] = (p.network != NetworkLayer::None) as u32;
    f[3] = p.is_icmp as u32;
    f[4] = p.is_icmpv6 as u32;
    f[5] = p.is_eapol as u32;
    f[6] = (p.transport == Transport::Tcp) as u32;
    f[7] = (p.transport == Transport::Udp) as u32;
    for (proto, i) in APP_FEATURES {
        f[i] = p.app_protocols.contains(&proto) as u32;
    }
    f[16] = p.ip_padding as u32;
    f[17] = p.ip_router_alert as u32;
    f[18] = p.size as u32;
    f[19] = !p.payload.is_empty() as u32;
    f[20] = dest_ip_counter;
    f[21] = port_class(p.src_port);
    f[22] = port_class(p.dst_port);
    PacketFeatures(f)
}

/// The feature matrix of a capture, one column per packet, with
/// consecutive identical columns collapsed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fingerprint {
    pub columns: Vec<PacketFeatures>,
    pub label: Option<String>,
}

pub fn extract_fingerprint(packets: &[ParsedPacket]) -> Fingerprint {
    let mut destinations: HashSet<IpAddr> = HashSet::new();
    let mut columns: Vec<PacketFeatures> = Vec::with_capacity(packets.len());
    for p in packets {
        if let Some(dst) = p.dst_ip {
            destinations.insert(dst);
        }
        let column = packet_features(p, destinations.len() as u32);
        if columns.last() != Some(&column) {
            columns.push(column);
        }
    }
    Fingerprint { columns, label: None }
}

/// First `max_packets` columns concatenated, zero-filled to full width.
pub fn flatten_fingerprint(fp: &Fingerprint, max_packets: usize) -> Vec<f64> {
    assert!(max_packets > 0, "max_packets must be positive");
    let mut out = vec![0.0; FEATURE_COUNT * max_packets];
    for (c, column) in fp.columns.iter().take(max_packets).enumerate() {
        for (i, &v) in column.0.iter().enumerate() {
            out[c * FEATURE_COUNT + i] = v as f64;
        }
    }
    out
}

/// Inverse of [`flatten_fingerprint`]: always `len / 23` columns, padding kept.
pub fn unflatten_fingerprint(values: &[f64]) -> Fingerprint {
    let columns = values
        .chunks_exact(FEATURE_COUNT)
        .map(|chunk| {
            let mut f = [0u32; FEATURE_COUNT];
            for (dst, &v) in f.iter_mut().zip(chunk) {
                *dst = v as u32;
            }
            PacketFeatures(f)
        })
        .collect();
    Fingerprint { columns, label: None }
}

/// Header line with the feature names, then one row per column.
pub fn fingerprint_csv(fp: &Fingerprint) -> String {
    let mut out = FEATURE_NAMES.join(",");
    out.push('\n');
    for column in &fp.columns {
        let row: Vec<String> = column.0.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::frame;
    use crate::ingest::{parse_packet, RawPacket};
    use proptest::prelude::*;
    use std::net::Ipv4Addr;

    const MAC: [u8; 6] = [2, 0, 0, 0, 0, 1];

    fn dns(ts: i64, dst: u8) -> ParsedPacket {
        let f = frame::udp_frame(MAC, [2; 6], (Ipv4Addr::new(10, 0, 0, 5), 1024), (Ipv4Addr::new(10, 0, 0, dst), 53), b"abc");
        parse_packet(&RawPacket::new(ts, f))
    }

    #[test]
    fn dns_column() {
        let fp = extract_fingerprint(&[dns(0, 1)]);
        let c = fp.columns[0];
        for name in ["udp", "dns", "ip", "raw_data"] {
            assert_eq!(c.get(name), Some(1), "{name}");
        }
        for name in ["arp", "llc", "tcp", "http", "https", "dhcp", "bootp", "ssdp", "mdns", "ntp", "icmp"] {
            assert_eq!(c.get(name), Some(0), "{name}");
        }
        assert_eq!(c.get("dst_port_class"), Some(1));
        assert_eq!(c.get("src_port_class"), Some(2));
        assert_eq!(c.get("size"), Some(14 + 20 + 8 + 3));
        assert_eq!(c.get("dest_ip_counter"), Some(1));
    }

    #[test]
    fn consecutive_duplicates_collapse() {
        assert_eq!(extract_fingerprint(&[dns(0, 1), dns(1, 1)]).columns.len(), 1);
        let fp = extract_fingerprint(&[dns(0, 1), dns(1, 2), dns(2, 3)]);
        assert_eq!(fp.columns.last().unwrap().get("dest_ip_counter"), Some(3));
        assert!(extract_fingerprint(&[]).columns.is_empty());
    }

    #[test]
    fn port_classes() {
        assert_eq!(port_class(None), 0);
        assert_eq!(port_class(Some(1023)), 1);
        assert_eq!(port_class(Some(1024)), 2);
        assert_eq!(port_class(Some(49151)), 2);
        assert_eq!(port_class(Some(49152)), 3);
    }

    #[test]
    fn flatten_width() {
        assert_eq!(flatten_fingerprint(&Fingerprint::default(), 32), vec![0.0; 736]);
        let fp = Fingerprint { columns: (0..40).map(|i| PacketFeatures([i; 23])).collect(), label: None };
        let flat = flatten_fingerprint(&fp, 32);
        assert_eq!(flat.len(), 736);
        assert_eq!(flat[735], 31.0);
    }

    #[test]
    fn csv_shape() {
        let csv = fingerprint_csv(&extract_fingerprint(&[dns(0, 1), dns(1, 2)]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(',').count() == 23));
    }

    proptest! {
        #[test]
        fn unflatten_inverts_flatten(cols in prop::collection::vec(prop::array::uniform23(0u32..2000), 0..50), max in 1usize..40) {
            let fp = Fingerprint { columns: cols.into_iter().map(PacketFeatures).collect(), label: None };
            let back = unflatten_fingerprint(&flatten_fingerprint(&fp, max));
            let mut expected: Vec<PacketFeatures> = fp.columns.iter().take(max).copied().collect();
            expected.resize(max, PacketFeatures::default());
            prop_assert_eq!(back.columns, expected);
        }

        #[test]
        fn extraction_is_prefix_stable(dsts in prop::collection::vec(1u8..5, 0..30), k in 0usize..30) {
            let packets: Vec<ParsedPacket> = dsts.iter().enumerate().map(|(i, &d)| dns(i as i64, d)).collect();
            let k = k.min(packets.len());
            let full = extract_fingerprint(&packets);
            let prefix = extract_fingerprint(&packets[..k]);
            prop_assert!(prefix.columns.len() <= full.columns.len());
            prop_assert_eq!(&full.columns[..prefix.columns.len()], &prefix.columns[..]);
            prop_assert!(prefix.columns.windows(2).all(|w| w[0] != w[1]));
        }
    }
}
