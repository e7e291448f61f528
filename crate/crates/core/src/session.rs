//! Identifier sanitization, packet filtering and bidirectional session assembly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::frame::ipv4_checksum;
use crate::ingest::{parse_packet, LinkLayer, NetworkLayer, ParsedPacket, RawPacket, Transport};

/// Number of payload bytes used as model input.
pub const SESSION_BYTE_LIMIT: usize = 784;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub addr: IpAddr,
    pub port: u16,
}

/// Direction-independent identity of a TCP or UDP conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionKey {
    /// The smaller endpoint.
    pub a: Endpoint,
    pub b: Endpoint,
    pub transport: Transport,
}

impl SessionKey {
    /// `None` for packets without an IP address pair and TCP/UDP ports.
    pub fn of(packet: &ParsedPacket) -> Option<Self> {
        if packet.transport == Transport::None {
            return None;
        }
        let src = Endpoint { addr: packet.src_ip?, port: packet.src_port? };
        let dst = Endpoint { addr: packet.dst_ip?, port: packet.dst_port? };
        let (a, b) = if src <= dst { (src, dst) } else { (dst, src) };
        Some(Self { a, b, transport: packet.transport })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub key: SessionKey,
    pub packets: Vec<ParsedPacket>,
    pub label: Option<String>,
    pub setup_id: String,
}

impl Session {
    pub fn payload_len(&self) -> usize {
        self.packets.iter().map(|p| p.payload.len()).sum()
    }
}

/// Original-to-replacement identifier maps produced by [`sanitize`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SanitizerMap {
    pub address_map: BTreeMap<IpAddr, IpAddr>,
    pub mac_map: BTreeMap<[u8; 6], [u8; 6]>,
    pub seed: u64,
}

impl SanitizerMap {
    /// Two whitespace-separated columns, original then replacement.
    pub fn to_audit_text(&self) -> String {
        let mut out = String::new();
        for (from, to) in &self.mac_map {
            let _ = writeln!(out, "{}\t{}", format_mac(from), format_mac(to));
        }
        for (from, to) in &self.address_map {
            let _ = writeln!(out, "{from}\t{to}");
        }
        out
    }

    pub fn write_audit(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_audit_text())
    }
}

fn format_mac(mac: &[u8; 6]) -> String {
    mac.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(":")
}

/// Broadcast, multicast, unspecified and loopback addresses identify nobody and
/// carry protocol meaning (e.g. SSDP's 239.255.255.250), so they are kept.
fn keeps_ip(addr: &IpAddr) -> bool {
    match addr {
        IpAddr::V4(a) => a.is_broadcast() || a.is_multicast() || a.is_unspecified() || a.is_loopback(),
        IpAddr::V6(a) => a.is_multicast() || a.is_unspecified() || a.is_loopback(),
    }
}

fn keeps_mac(mac: &[u8; 6]) -> bool {
    mac[0] & 1 == 1 || *mac == [0; 6]
}

struct Randomizer {
    rng: ChaCha8Rng,
    map: SanitizerMap,
    used_ips: HashSet<IpAddr>,
    used_macs: HashSet<[u8; 6]>,
}

impl Randomizer {
    fn ip(&mut self, addr: IpAddr) {
        if keeps_ip(&addr) || self.map.address_map.contains_key(&addr) {
            return;
        }
        let replacement = loop {
            let candidate = match addr {
                IpAddr::V4(_) => {
                    let host: u32 = self.rng.gen_range(1..0x00FF_FFFF);
                    IpAddr::V4(Ipv4Addr::from(0x0A00_0000 | host))
                }
                IpAddr::V6(_) => {
                    let mut octets: [u8; 16] = self.rng.gen();
                    octets[0] = 0xFD;
                    IpAddr::V6(Ipv6Addr::from(octets))
                }
            };
            if self.used_ips.insert(candidate) {
                break candidate;
            }
        };
        self.map.address_map.insert(addr, replacement);
    }

    fn mac(&mut self, mac: [u8; 6]) {
        if keeps_mac(&mac) || self.map.mac_map.contains_key(&mac) {
            return;
        }
        let replacement = loop {
            let mut candidate: [u8; 6] = self.rng.gen();
            // locally administered, unicast
            candidate[0] = (candidate[0] | 0x02) & !0x01;
            if self.used_macs.insert(candidate) {
                break candidate;
            }
        };
        self.map.mac_map.insert(mac, replacement);
    }
}

fn ethernet_header_len(frame: &[u8]) -> usize {
    if frame.len() >= 18 && frame[12..14] == [0x81, 0x00] {
        18
    } else {
        14
    }
}

/// ARP sender/target addresses for Ethernet/IPv4 ARP: (offset, is_mac) pairs.
fn arp_fields(frame: &[u8]) -> Vec<(usize, bool)> {
    let o = ethernet_header_len(frame);
    if frame.len() < o + 28 || frame[o + 4] != 6 || frame[o + 5] != 4 {
        return Vec::new();
    }
    vec![(o + 8, true), (o + 14, false), (o + 18, true), (o + 24, false)]
}

fn ip_fields(p: &ParsedPacket) -> Vec<(usize, usize)> {
    match (p.network, p.ip_offset) {
        (NetworkLayer::Ipv4, Some(o)) => vec![(o + 12, 4), (o + 16, 4)],
        (NetworkLayer::Ipv6, Some(o)) => vec![(o + 8, 16), (o + 24, 16)],
        _ => Vec::new(),
    }
}

fn ip_from_bytes(bytes: &[u8]) -> IpAddr {
    match bytes.len() {
        4 => IpAddr::V4(Ipv4Addr::new(bytes[0], bytes[1], bytes[2], bytes[3])),
        _ => IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(bytes).unwrap())),
    }
}

fn ip_octets(addr: &IpAddr) -> Vec<u8> {
    match addr {
        IpAddr::V4(a) => a.octets().to_vec(),
        IpAddr::V6(a) => a.octets().to_vec(),
    }
}

/// Replaces MAC and IP identifiers with random but consistent substitutes.
///
/// Header fields (Ethernet, ARP, IP) are rewritten in place; in the
/// application payload every byte substring equal to a header address seen in
/// the capture is replaced as well. The IPv4 header checksum is recomputed;
/// transport checksums are left untouched. Replacement order follows first
/// appearance, so the result is a pure function of `(packets, seed)`.
pub fn sanitize(packets: &[ParsedPacket], seed: u64) -> (Vec<ParsedPacket>, SanitizerMap) {
    let mut r = Randomizer {
        rng: ChaCha8Rng::seed_from_u64(seed),
        map: SanitizerMap { seed, ..Default::default() },
        used_ips: HashSet::new(),
        used_macs: HashSet::new(),
    };
    for p in packets {
        let f = &p.raw.captured;
        for mac in [p.dst_mac, p.src_mac].into_iter().flatten() {
            r.mac(mac);
        }
        if p.link == LinkLayer::Arp {
            for (o, is_mac) in arp_fields(f) {
                if is_mac {
                    r.mac(f[o..o + 6].try_into().unwrap());
                } else {
                    r.ip(ip_from_bytes(&f[o..o + 4]));
                }
            }
        }
        for addr in [p.src_ip, p.dst_ip].into_iter().flatten() {
            r.ip(addr);
        }
    }
    let map = r.map;

    let mut patterns: Vec<(Vec<u8>, Vec<u8>)> = map
        .address_map
        .iter()
        .map(|(from, to)| (ip_octets(from), ip_octets(to)))
        .collect();
    // Longer (IPv6) patterns first so an embedded IPv4-looking run inside a
    // v6 address is not rewritten separately.
    patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));

    let out = packets
        .iter()
        .map(|p| {
            let mut f = p.raw.captured.clone();
            let mac_at = |f: &mut Vec<u8>, o: usize| {
                let mac: [u8; 6] = f[o..o + 6].try_into().unwrap();
                if let Some(to) = map.mac_map.get(&mac) {
                    f[o..o + 6].copy_from_slice(to);
                }
            };
            if p.dst_mac.is_some() {
                mac_at(&mut f, 0);
                mac_at(&mut f, 6);
            }
            if p.link == LinkLayer::Arp {
                for (o, is_mac) in arp_fields(&p.raw.captured) {
                    if is_mac {
                        mac_at(&mut f, o);
                    } else if let Some(to) = map.address_map.get(&ip_from_bytes(&f[o..o + 4])) {
                        f[o..o + 4].copy_from_slice(&ip_octets(to));
                    }
                }
            }
            for (o, len) in ip_fields(p) {
                if let Some(to) = map.address_map.get(&ip_from_bytes(&f[o..o + len])) {
                    f[o..o + len].copy_from_slice(&ip_octets(to));
                }
            }
            replace_substrings(&mut f[p.payload_offset..], &patterns);
            if let (NetworkLayer::Ipv4, Some(o)) = (p.network, p.ip_offset) {
                let ihl = ((f[o] & 0x0F) as usize) * 4;
                f[o + 10] = 0;
                f[o + 11] = 0;
                let sum = ipv4_checksum(&f[o..o + ihl]);
                f[o + 10..o + 12].copy_from_slice(&sum.to_be_bytes());
            }
            parse_packet(&RawPacket {
                timestamp_micros: p.raw.timestamp_micros,
                captured: f,
                original_length: p.raw.original_length,
            })
        })
        .collect();
    (out, map)
}

/// Single left-to-right scan; replaced bytes are never rescanned.
fn replace_substrings(bytes: &mut [u8], patterns: &[(Vec<u8>, Vec<u8>)]) {
    let mut i = 0;
    'scan: while i < bytes.len() {
        for (from, to) in patterns {
            if bytes[i..].starts_with(from) {
                bytes[i..i + from.len()].copy_from_slice(to);
                i += from.len();
                continue 'scan;
            }
        }
        i += 1;
    }
}

/// Drops packets that carry neither payload bytes nor an application protocol.
pub fn filter_packets(packets: &[ParsedPacket]) -> Vec<ParsedPacket> {
    packets
        .iter()
        .filter(|p| !(p.payload.is_empty() && p.app_protocols.is_empty()))
        .cloned()
        .collect()
}

/// Groups TCP/UDP packets by canonical key; sessions are ordered by their
/// first packet. Other packets are ignored.
pub fn assemble_sessions(packets: &[ParsedPacket]) -> Vec<Session> {
    let mut index: HashMap<SessionKey, usize> = HashMap::new();
    let mut sessions: Vec<Session> = Vec::new();
    for p in packets {
        let Some(key) = SessionKey::of(p) else { continue };
        let i = *index.entry(key).or_insert_with(|| {
            sessions.push(Session { key, packets: Vec::new(), label: None, setup_id: String::new() });
            sessions.len() - 1
        });
        sessions[i].packets.push(p.clone());
    }
    // Stable sort keeps file order among packets with equal timestamps.
    for s in &mut sessions {
        s.packets.sort_by_key(|p| p.timestamp_micros());
    }
    sessions.sort_by_key(|s| s.packets[0].timestamp_micros());
    sessions
}

/// Removes sessions without any payload bytes.
pub fn drop_empty_sessions(sessions: Vec<Session>) -> Vec<Session> {
    sessions.into_iter().filter(|s| s.payload_len() > 0).collect()
}

/// Keeps the first session of each distinct concatenated payload stream.
pub fn dedup_sessions(sessions: Vec<Session>) -> Vec<Session> {
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    sessions
        .into_iter()
        .filter(|s| seen.insert(payload_stream(&s.packets, usize::MAX)))
        .collect()
}

/// Concatenated payloads in packet order, cut at `limit` bytes.
pub fn payload_stream(packets: &[ParsedPacket], limit: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for p in packets {
        if out.len() >= limit {
            break;
        }
        let take = (limit - out.len()).min(p.payload.len());
        out.extend_from_slice(&p.payload[..take]);
    }
    out
}

pub fn session_bytes(session: &Session, limit: usize) -> Vec<u8> {
    assert!(limit > 0, "limit must be positive");
    payload_stream(&session.packets, limit)
}
