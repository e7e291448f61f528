//! Layered decoding of Ethernet frames down to the application payload.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use super::RawPacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkLayer {
    Ethernet,
    /// Ethernet frame carrying ARP (ethertype 0x0806).
    Arp,
    /// 802.3 frame whose type field is a length (≤ 1500), i.e. LLC.
    Llc,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkLayer {
    Ipv4,
    Ipv6,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transport {
    Tcp,
    Udp,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AppProtocol {
    Http,
    Https,
    Dhcp,
    Bootp,
    Ssdp,
    Dns,
    Mdns,
    Ntp,
}

/// A decoded frame. `raw` keeps the original bytes so the frame can be
/// rewritten (sanitized) and re-exported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub raw: RawPacket,
    pub link: LinkLayer,
    pub network: NetworkLayer,
    pub is_icmp: bool,
    pub is_icmpv6: bool,
    pub is_eapol: bool,
    pub src_mac: Option<[u8; 6]>,
    pub dst_mac: Option<[u8; 6]>,
    pub src_ip: Option<IpAddr>,
    pub dst_ip: Option<IpAddr>,
    pub transport: Transport,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub app_protocols: BTreeSet<AppProtocol>,
    pub ip_padding: bool,
    pub ip_router_alert: bool,
    /// Application-layer bytes above TCP/UDP; empty otherwise.
    pub payload: Vec<u8>,
    /// Offset of `payload` inside `raw.captured`.
    pub payload_offset: usize,
    /// Offset of the IP header inside `raw.captured`, when present.
    pub ip_offset: Option<usize>,
    /// Original wire length.
    pub size: usize,
}

impl ParsedPacket {
    pub fn timestamp_micros(&self) -> i64 {
        self.raw.timestamp_micros
    }

    pub fn has_ip(&self) -> bool {
        self.network != NetworkLayer::None
    }
}

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_ARP: u16 = 0x0806;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_IPV6: u16 = 0x86DD;
const ETHERTYPE_EAPOL: u16 = 0x888E;

const DHCP_MAGIC_COOKIE: [u8; 4] = [0x63, 0x82, 0x53, 0x63];
const DHCP_COOKIE_OFFSET: usize = 236;

/// Decodes a raw frame. Never fails: anything that cannot be decoded leaves
/// the corresponding layers at `Other`/`None`.
pub fn parse_packet(raw: &RawPacket) -> ParsedPacket {
    let mut p = ParsedPacket {
        raw: raw.clone(),
        link: LinkLayer::Other,
        network: NetworkLayer::None,
        is_icmp: false,
        is_icmpv6: false,
        is_eapol: false,
        src_mac: None,
        dst_mac: None,
        src_ip: None,
        dst_ip: None,
        transport: Transport::None,
        src_port: None,
        dst_port: None,
        app_protocols: BTreeSet::new(),
        ip_padding: false,
        ip_router_alert: false,
        payload: Vec::new(),
        payload_offset: raw.captured.len(),
        ip_offset: None,
        size: raw.original_length.max(raw.captured.len() as u32) as usize,
    };
    let f = &raw.captured;
    if f.len() < 14 {
        return p;
    }
    p.dst_mac = Some(f[0..6].try_into().unwrap());
    p.src_mac = Some(f[6..12].try_into().unwrap());
    let mut offset = 12;
    let mut ethertype = be16(f, offset);
    if ethertype == ETHERTYPE_VLAN && f.len() >= 18 {
        offset += 4;
        ethertype = be16(f, offset);
    }
    offset += 2;
    if ethertype <= 1500 {
        p.link = LinkLayer::Llc;
        return p;
    }
    p.link = LinkLayer::Ethernet;
    match ethertype {
        ETHERTYPE_ARP => p.link = LinkLayer::Arp,
        ETHERTYPE_EAPOL => p.is_eapol = true,
        ETHERTYPE_IPV4 => parse_ipv4(&mut p, offset),
        ETHERTYPE_IPV6 => parse_ipv6(&mut p, offset),
        _ => {}
    }
    if p.transport != Transport::None {
        p.app_protocols = detect_app_protocols(
            p.transport,
            p.src_port.unwrap_or(0),
            p.dst_port.unwrap_or(0),
            &p.payload,
        );
    }
    p
}

fn be16(f: &[u8], o: usize) -> u16 {
    u16::from_be_bytes([f[o], f[o + 1]])
}

fn parse_ipv4(p: &mut ParsedPacket, offset: usize) {
    let f = &p.raw.captured;
    if f.len() < offset + 20 || f[offset] >> 4 != 4 {
        return;
    }
    let ihl = (f[offset] & 0x0F) as usize * 4;
    if ihl < 20 || f.len() < offset + ihl {
        return;
    }
    p.network = NetworkLayer::Ipv4;
    p.ip_offset = Some(offset);
    let total_len = be16(f, offset + 2) as usize;
    let end = if total_len >= ihl {
        (offset + total_len).min(f.len())
    } else {
        f.len()
    };
    let proto = f[offset + 9];
    p.src_ip = Some(IpAddr::V4(Ipv4Addr::new(
        f[offset + 12],
        f[offset + 13],
        f[offset + 14],
        f[offset + 15],
    )));
    p.dst_ip = Some(IpAddr::V4(Ipv4Addr::new(
        f[offset + 16],
        f[offset + 17],
        f[offset + 18],
        f[offset + 19],
    )));
    let (padding, alert) = ipv4_options(&f[offset + 20..offset + ihl]);
    p.ip_padding = padding;
    p.ip_router_alert = alert;
    let fragment_offset = be16(f, offset + 6) & 0x1FFF;
    if fragment_offset != 0 {
        return;
    }
    transport(p, proto, offset + ihl, end);
}

/// Returns `(padding, router_alert)` for an IPv4 options area.
fn ipv4_options(opts: &[u8]) -> (bool, bool) {
    let (mut padding, mut alert) = (false, false);
    let mut i = 0;
    while i < opts.len() {
        match opts[i] {
            0 => {
                padding = true;
                break;
            }
            1 => {
                padding = true;
                i += 1;
            }
            kind => {
                if kind == 148 {
                    alert = true;
                }
                let len = opts.get(i + 1).copied().unwrap_or(0) as usize;
                if len < 2 {
                    break;
                }
                i += len;
            }
        }
    }
    (padding, alert)
}

fn parse_ipv6(p: &mut ParsedPacket, offset: usize) {
    let f = &p.raw.captured;
    if f.len() < offset + 40 || f[offset] >> 4 != 6 {
        return;
    }
    p.network = NetworkLayer::Ipv6;
    p.ip_offset = Some(offset);
    let payload_len = be16(f, offset + 4) as usize;
    let end = (offset + 40 + payload_len).min(f.len());
    let src: [u8; 16] = f[offset + 8..offset + 24].try_into().unwrap();
    let dst: [u8; 16] = f[offset + 24..offset + 40].try_into().unwrap();
    p.src_ip = Some(IpAddr::V6(Ipv6Addr::from(src)));
    p.dst_ip = Some(IpAddr::V6(Ipv6Addr::from(dst)));
    let mut next = f[offset + 6];
    let mut pos = offset + 40;
    // Walk extension headers: hop-by-hop 0, routing 43, fragment 44, destination options 60.
    loop {
        match next {
            0 | 43 | 60 => {
                if pos + 2 > end {
                    return;
                }
                let len = (f[pos + 1] as usize + 1) * 8;
                if pos + len > end {
                    return;
                }
                if next == 0 {
                    let (padding, alert) = ipv6_options(&f[pos + 2..pos + len]);
                    p.ip_padding |= padding;
                    p.ip_router_alert |= alert;
                }
                next = f[pos];
                pos += len;
            }
            44 => {
                if pos + 8 > end {
                    return;
                }
                let frag_offset = be16(f, pos + 2) >> 3;
                next = f[pos];
                pos += 8;
                if frag_offset != 0 {
                    return;
                }
            }
            _ => break,
        }
    }
    transport(p, next, pos, end);
}

fn ipv6_options(opts: &[u8]) -> (bool, bool) {
    let (mut padding, mut alert) = (false, false);
    let mut i = 0;
    while i < opts.len() {
        match opts[i] {
            0 => {
                padding = true;
                i += 1;
            }
            kind => {
                if kind == 1 {
                    padding = true;
                }
                if kind == 5 {
                    alert = true;
                }
                let len = opts.get(i + 1).copied().unwrap_or(0) as usize;
                i += 2 + len;
            }
        }
    }
    (padding, alert)
}

fn transport(p: &mut ParsedPacket, proto: u8, start: usize, end: usize) {
    let f = &p.raw.captured;
    match proto {
        1 => p.is_icmp = true,
        58 => p.is_icmpv6 = true,
        6 => {
            if end < start + 20 {
                return;
            }
            let data_offset = (f[start + 12] >> 4) as usize * 4;
            if data_offset < 20 || start + data_offset > end {
                return;
            }
            p.transport = Transport::Tcp;
            p.src_port = Some(be16(f, start));
            p.dst_port = Some(be16(f, start + 2));
            p.payload_offset = start + data_offset;
            p.payload = f[start + data_offset..end].to_vec();
        }
        17 => {
            if end < start + 8 {
                return;
            }
            p.transport = Transport::Udp;
            p.src_port = Some(be16(f, start));
            p.dst_port = Some(be16(f, start + 2));
            let udp_len = be16(f, start + 4) as usize;
            let udp_end = if udp_len >= 8 {
                (start + udp_len).min(end)
            } else {
                end
            };
            p.payload_offset = start + 8;
            p.payload = f[start + 8..udp_end].to_vec();
        }
        _ => {}
    }
}

/// Port-based application protocol detection; a rule matches on either port.
pub fn detect_app_protocols(
    transport: Transport,
    src_port: u16,
    dst_port: u16,
    payload: &[u8],
) -> BTreeSet<AppProtocol> {
    let mut set = BTreeSet::new();
    if transport == Transport::None {
        return set;
    }
    let either = |ports: &[u16]| ports.contains(&src_port) || ports.contains(&dst_port);
    if either(&[80, 8080]) {
        set.insert(AppProtocol::Http);
    }
    if either(&[443]) {
        set.insert(AppProtocol::Https);
    }
    if either(&[67, 68]) {
        set.insert(AppProtocol::Bootp);
        if payload.get(DHCP_COOKIE_OFFSET..DHCP_COOKIE_OFFSET + 4) == Some(&DHCP_MAGIC_COOKIE[..]) {
            set.insert(AppProtocol::Dhcp);
        }
    }
    if either(&[1900]) {
        set.insert(AppProtocol::Ssdp);
    }
    if either(&[53]) {
        set.insert(AppProtocol::Dns);
    }
    if either(&[5353]) {
        set.insert(AppProtocol::Mdns);
    }
    if either(&[123]) {
        set.insert(AppProtocol::Ntp);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RawPacket;
    use proptest::prelude::*;

    #[test]
    fn garbage_frame_degrades() {
        let p = parse_packet(&RawPacket::new(0, vec![0xFF; 10]));
        assert_eq!(p.link, LinkLayer::Other);
        assert_eq!(p.network, NetworkLayer::None);
        assert_eq!(p.transport, Transport::None);
        assert_eq!(p.size, 10);
        assert!(p.payload.is_empty());
    }

    #[test]
    fn port_table() {
        use AppProtocol::*;
        let d = |t, s, p| detect_app_protocols(t, s, p, b"");
        assert_eq!(d(Transport::Udp, 40000, 5353), [Mdns].into());
        assert_eq!(d(Transport::Tcp, 443, 50000), [Https].into());
        assert_eq!(d(Transport::Tcp, 8080, 50000), [Http].into());
        assert_eq!(d(Transport::Udp, 123, 123), [Ntp].into());
        assert!(detect_app_protocols(Transport::Tcp, 49152, 49153, b"xyz").is_empty());
        assert!(d(Transport::None, 53, 53).is_empty());
    }

    #[test]
    fn bootp_vs_dhcp() {
        use AppProtocol::*;
        let mut payload = vec![0u8; 300];
        assert_eq!(detect_app_protocols(Transport::Udp, 68, 67, &payload), [Bootp].into());
        payload[236..240].copy_from_slice(&DHCP_MAGIC_COOKIE);
        assert_eq!(detect_app_protocols(Transport::Udp, 68, 67, &payload), [Bootp, Dhcp].into());
    }

    proptest! {
        #[test]
        fn parse_is_total(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
            let p = parse_packet(&RawPacket::new(0, bytes.clone()));
            prop_assert_eq!(p.size, bytes.len());
            prop_assert_eq!(p.src_port.is_some(), p.transport != Transport::None);
        }

        #[test]
        fn parse_is_total_on_ip_frames(tail in prop::collection::vec(any::<u8>(), 0..120), v6 in any::<bool>()) {
            let mut frame = vec![0u8; 12];
            frame.extend_from_slice(if v6 { &[0x86, 0xDD] } else { &[0x08, 0x00] });
            frame.push(if v6 { 0x60 } else { 0x4F });
            frame.extend_from_slice(&tail);
            let p = parse_packet(&RawPacket::new(0, frame));
            prop_assert_eq!(p.src_port.is_some(), p.transport != Transport::None);
        }
    }
}
