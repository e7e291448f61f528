//! Synthetic device-setup traffic: one pcap per (device type, setup run)
//! plus a manifest.
//!
//! Every setup opens with a burst of identical SSDP discovery requests that
//! is the same for all devices, followed by device sessions whose protocols
//! follow the profile's mix and whose first payload carries the profile
//! motif.

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::frame::{self, TCP_ACK, TCP_FIN, TCP_PSH, TCP_SYN};
use crate::ingest::{write_pcap, PcapError, RawPacket};
use crate::representation::{write_manifest, ManifestEntry, RepresentationError};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("profile {0}: protocol weights must be non-negative with a positive sum")]
    BadWeights(String),
    #[error("profile {0}: motif must be 4 to 16 bytes")]
    BadMotif(String),
    #[error("need at least 2 profiles, got {0}")]
    TooFewProfiles(usize),
    #[error("duplicate profile name {0}")]
    DuplicateName(String),
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error(transparent)]
    Manifest(#[from] RepresentationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SynthProtocol {
    Dhcp,
    Dns,
    Http,
    Ntp,
    Ssdp,
    Mdns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    /// Manufacturer string used in host names and agent headers.
    pub vendor: String,
    pub protocol_mix: Vec<(SynthProtocol, f64)>,
    pub motif: Vec<u8>,
    /// Sessions per setup: mean and half-width of a uniform spread.
    pub sessions: (f64, f64),
    /// Payload bytes per session: mean and half-width.
    pub session_bytes: (f64, f64),
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let sum: f64 = self.protocol_mix.iter().map(|(_, w)| w).sum();
        if self.protocol_mix.iter().any(|(_, w)| !(*w >= 0.0)) || !(sum > 0.0) {
            return Err(SynthError::BadWeights(self.name.clone()));
        }
        if !(4..=16).contains(&self.motif.len()) {
            return Err(SynthError::BadMotif(self.name.clone()));
        }
        Ok(())
    }

    /// Protocols with positive weight, heaviest first.
    fn emission_order(&self) -> Vec<SynthProtocol> {
        let mut mix: Vec<(SynthProtocol, f64)> = self.protocol_mix.iter().copied().filter(|(_, w)| *w > 0.0).collect();
        mix.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        mix.into_iter().map(|(p, _)| p).collect()
    }

    fn pick_protocol(&self, rng: &mut ChaCha8Rng) -> SynthProtocol {
        let sum: f64 = self.protocol_mix.iter().map(|(_, w)| w).sum();
        let mut x = rng.gen::<f64>() * sum;
        for &(p, w) in &self.protocol_mix {
            if x < w {
                return p;
            }
            x -= w;
        }
        self.emission_order()[0]
    }
}

fn profile(
    name: &str,
    vendor: &str,
    mix: &[(SynthProtocol, f64)],
    motif: &str,
    sessions: (f64, f64),
    bytes: (f64, f64),
) -> DeviceProfile {
    DeviceProfile {
        name: name.into(),
        vendor: vendor.into(),
        protocol_mix: mix.to_vec(),
        motif: motif.as_bytes().to_vec(),
        sessions,
        session_bytes: bytes,
    }
}

/// Eight profiles; the two camera models and the two plug models are
/// near-identical pairs from one manufacturer each.
pub fn default_profiles() -> Vec<DeviceProfile> {
    use SynthProtocol::*;
    vec![
        profile("AcmeCamera", "acme", &[(Http, 4.0), (Dns, 3.0), (Ntp, 1.0), (Ssdp, 1.0)], "ACMcam-7f", (9.0, 3.0), (420.0, 150.0)),
        profile("AcmeCameraPro", "acme", &[(Http, 4.0), (Dns, 3.0), (Ntp, 1.5), (Ssdp, 1.0)], "ACMcam-P9x", (10.0, 3.0), (460.0, 150.0)),
        profile("NovaPlug", "nova", &[(Dhcp, 1.0), (Dns, 3.0), (Ntp, 2.0), (Mdns, 2.0)], "nv-plug1", (7.0, 2.0), (220.0, 80.0)),
        profile("NovaPlugMini", "nova", &[(Dhcp, 1.0), (Dns, 3.0), (Ntp, 2.0), (Mdns, 1.5)], "nv-plugM2", (7.0, 2.0), (240.0, 80.0)),
        profile("LumoBridge", "lumo", &[(Ssdp, 3.0), (Http, 3.0), (Mdns, 2.0), (Dns, 1.0)], "LUMO-hub", (12.0, 3.0), (520.0, 200.0)),
        profile("AriaScale", "fitco", &[(Dns, 2.0), (Http, 2.0), (Ntp, 1.0)], "ARIA-sc", (6.0, 2.0), (300.0, 120.0)),
        profile("EdiSwitch", "edimo", &[(Dhcp, 1.0), (Http, 3.0), (Dns, 2.0)], "EDI-sw", (8.0, 2.0), (360.0, 120.0)),
        profile("TempoSensor", "tempo", &[(Mdns, 3.0), (Ssdp, 2.0), (Dns, 1.0)], "tmp-sens", (6.0, 2.0), (260.0, 100.0)),
    ]
}

const SSDP_GROUP: Ipv4Addr = Ipv4Addr::new(239, 255, 255, 250);
const MDNS_GROUP: Ipv4Addr = Ipv4Addr::new(224, 0, 0, 251);
const SSDP_MAC: [u8; 6] = [0x01, 0x00, 0x5e, 0x7f, 0xff, 0xfa];
const MDNS_MAC: [u8; 6] = [0x01, 0x00, 0x5e, 0x00, 0x00, 0xfb];
const BROADCAST_MAC: [u8; 6] = [0xff; 6];
const GATEWAY_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 1);
const GATEWAY_MAC: [u8; 6] = [0x00, 0x11, 0x22, 0x33, 0x44, 0x01];

const DISCOVERY: &[u8] =
    b"M-SEARCH * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nMAN: \"ssdp:discover\"\r\nMX: 2\r\nST: ssdp:all\r\n\r\n";

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn hex(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap()).collect()
}

fn dns_name(labels: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for l in labels {
        out.push(l.len() as u8);
        out.extend_from_slice(l);
    }
    out.push(0);
    out
}

struct Setup<'a> {
    profile: &'a DeviceProfile,
    rng: ChaCha8Rng,
    packets: Vec<RawPacket>,
    time: i64,
    mac: [u8; 6],
    ip: Ipv4Addr,
    cloud: Ipv4Addr,
}

impl Setup<'_> {
    fn push(&mut self, frame: Vec<u8>) {
        self.time += self.rng.gen_range(200..4000);
        self.packets.push(RawPacket::new(self.time, frame));
    }

    fn ephemeral(&mut self) -> u16 {
        self.rng.gen_range(49152..65535)
    }

    fn udp_out(&mut self, dst_mac: [u8; 6], src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), payload: &[u8]) {
        let f = frame::udp_frame(self.mac, dst_mac, src, dst, payload);
        self.push(f);
    }

    fn udp_in(&mut self, src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), payload: &[u8]) {
        let f = frame::udp_frame(GATEWAY_MAC, self.mac, src, dst, payload);
        self.push(f);
    }

    fn discovery_burst(&mut self) {
        let k = self.rng.gen_range(4..=10);
        let port = self.ephemeral();
        for _ in 0..k {
            self.udp_out(SSDP_MAC, (self.ip, port), (SSDP_GROUP, 1900), DISCOVERY);
        }
    }

    fn arp(&mut self) {
        let body = frame::arp(1, self.mac, self.ip, [0; 6], GATEWAY_IP);
        let f = frame::ethernet(BROADCAST_MAC, self.mac, 0x0806, &body);
        self.push(f);
    }

    fn target_bytes(&mut self) -> usize {
        let (mean, spread) = self.profile.session_bytes;
        (mean + spread * self.rng.gen_range(-1.0..1.0)).max(32.0) as usize
    }

    fn session(&mut self, protocol: SynthProtocol) {
        let target = self.target_bytes();
        match protocol {
            SynthProtocol::Dhcp => self.dhcp(target),
            SynthProtocol::Dns => self.dns(target),
            SynthProtocol::Http => self.http(target),
            SynthProtocol::Ntp => self.ntp(target),
            SynthProtocol::Ssdp => self.ssdp(target),
            SynthProtocol::Mdns => self.mdns(target),
        }
    }

    fn dhcp(&mut self, target: usize) {
        let xid: [u8; 4] = self.rng.gen();
        let mut sent = 0;
        for message_type in [1u8, 3].into_iter().cycle() {
            let mut b = vec![1, 1, 6, 0];
            b.extend_from_slice(&xid);
            b.extend_from_slice(&[0; 20]);
            b.extend_from_slice(&self.mac);
            b.extend_from_slice(&[0; 10 + 64 + 128]);
            b.extend_from_slice(&[99, 130, 83, 99, 53, 1, message_type]);
            b.extend_from_slice(&[12, self.profile.motif.len() as u8]);
            b.extend_from_slice(&self.profile.motif);
            let vendor = self.profile.vendor.as_bytes();
            b.extend_from_slice(&[60, vendor.len() as u8]);
            b.extend_from_slice(vendor);
            let params: Vec<u8> = (0..4).map(|i| (fnv(vendor) >> (8 * i)) as u8 % 60 + 1).collect();
            b.extend_from_slice(&[55, params.len() as u8]);
            b.extend_from_slice(&params);
            b.push(255);
            sent += b.len();
            self.udp_out(BROADCAST_MAC, (Ipv4Addr::UNSPECIFIED, 68), (Ipv4Addr::BROADCAST, 67), &b);
            if sent >= target {
                break;
            }
        }
    }

    fn dns(&mut self, target: usize) {
        let port = self.ephemeral();
        let motif = self.profile.motif.clone();
        let vendor = self.profile.vendor.clone();
        let mut sent = 0;
        while sent < target {
            let id: [u8; 2] = self.rng.gen();
            let name = dns_name(&[&motif, b"cloud", vendor.as_bytes(), b"net"]);
            let mut q = id.to_vec();
            q.extend_from_slice(&[0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0]);
            q.extend_from_slice(&name);
            q.extend_from_slice(&[0, 1, 0, 1]);
            let mut r = id.to_vec();
            r.extend_from_slice(&[0x81, 0x80, 0, 1, 0, 1, 0, 0, 0, 0]);
            r.extend_from_slice(&name);
            r.extend_from_slice(&[0, 1, 0, 1, 0xc0, 0x0c, 0, 1, 0, 1]);
            r.extend_from_slice(&self.rng.gen_range(60u32..3600).to_be_bytes());
            r.extend_from_slice(&[0, 4]);
            r.extend_from_slice(&self.cloud.octets());
            sent += q.len() + r.len();
            self.udp_out(GATEWAY_MAC, (self.ip, port), (GATEWAY_IP, 53), &q);
            self.udp_in((GATEWAY_IP, 53), (self.ip, port), &r);
        }
    }

    fn http(&mut self, target: usize) {
        let port = self.ephemeral();
        let (dev, srv) = ((self.ip, port), (self.cloud, 80));
        let (mut seq, mut ack): (u32, u32) = (self.rng.gen(), self.rng.gen());
        let (m, g) = (self.mac, GATEWAY_MAC);
        let f = frame::tcp_frame(m, g, dev, srv, seq, 0, TCP_SYN, &[]);
        self.push(f);
        let f = frame::tcp_frame(g, m, srv, dev, ack, seq.wrapping_add(1), TCP_SYN | TCP_ACK, &[]);
        self.push(f);
        seq = seq.wrapping_add(1);
        ack = ack.wrapping_add(1);
        let f = frame::tcp_frame(m, g, dev, srv, seq, ack, TCP_ACK, &[]);
        self.push(f);

        let motif = String::from_utf8_lossy(&self.profile.motif).into_owned();
        let vendor = self.profile.vendor.clone();
        let agent = format!("{}/{}.{}", self.profile.name, fnv(self.profile.name.as_bytes()) % 5 + 1, fnv(motif.as_bytes()) % 10);
        let mut sent = 0;
        while sent < target {
            let nonce = hex(&mut self.rng, 16);
            let request = format!(
                "GET /{motif}/status?n={nonce} HTTP/1.1\r\nHost: cloud.{vendor}.net\r\nUser-Agent: {agent}\r\n\r\n"
            );
            let pad_len = target.saturating_sub(sent + request.len() + 80).min(400);
            let token = hex(&mut self.rng, 12);
            let body = format!("{{\"id\":\"{motif}\",\"token\":\"{token}\",\"pad\":\"{}\"}}", "0".repeat(pad_len));
            let response = format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n{body}", body.len());
            let f = frame::tcp_frame(m, g, dev, srv, seq, ack, TCP_PSH | TCP_ACK, request.as_bytes());
            self.push(f);
            seq = seq.wrapping_add(request.len() as u32);
            let f = frame::tcp_frame(g, m, srv, dev, ack, seq, TCP_PSH | TCP_ACK, response.as_bytes());
            self.push(f);
            ack = ack.wrapping_add(response.len() as u32);
            sent += request.len() + response.len();
        }
        let f = frame::tcp_frame(m, g, dev, srv, seq, ack, TCP_FIN | TCP_ACK, &[]);
        self.push(f);
    }

    fn ntp(&mut self, target: usize) {
        let port = self.ephemeral();
        let style = fnv(self.profile.name.as_bytes());
        let mut sent = 0;
        while sent < target {
            let mut q = vec![0u8; 48];
            q[0] = if style % 2 == 0 { 0x23 } else { 0x1b };
            q[2] = 6 + (style >> 8) as u8 % 5;
            q[3] = 0xe9 + (style >> 16) as u8 % 8;
            q[12..12 + self.profile.motif.len()].copy_from_slice(&self.profile.motif);
            let transmit: [u8; 8] = self.rng.gen();
            q[40..48].copy_from_slice(&transmit);
            let mut r = vec![0u8; 48];
            r[0] = (q[0] & 0x38) | 4;
            r[1] = 2;
            r[12..16].copy_from_slice(&GATEWAY_IP.octets());
            r[24..32].copy_from_slice(&transmit);
            let stamps: [u8; 16] = self.rng.gen();
            r[32..48].copy_from_slice(&stamps);
            sent += 96;
            self.udp_out(GATEWAY_MAC, (self.ip, port), (GATEWAY_IP, 123), &q);
            self.udp_in((GATEWAY_IP, 123), (self.ip, port), &r);
        }
    }

    fn ssdp(&mut self, target: usize) {
        let port = self.ephemeral();
        let motif = String::from_utf8_lossy(&self.profile.motif).into_owned();
        let mut sent = 0;
        while sent < target {
            let uuid = hex(&mut self.rng, 32);
            let msg = format!(
                "NOTIFY * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nNT: urn:{motif}:device:1\r\nNTS: ssdp:alive\r\nUSN: uuid:{uuid}\r\nSERVER: {} UPnP/1.0\r\n\r\n",
                self.profile.vendor
            );
            sent += msg.len();
            self.udp_out(SSDP_MAC, (self.ip, port), (SSDP_GROUP, 1900), msg.as_bytes());
        }
    }

    fn mdns(&mut self, target: usize) {
        let port = self.ephemeral();
        let motif = self.profile.motif.clone();
        let vendor = self.profile.vendor.clone();
        let mut sent = 0;
        while sent < target {
            let instance = hex(&mut self.rng, 8);
            let service = format!("_{vendor}");
            let mut m = vec![0, 0, 0x84, 0, 0, 0, 0, 1, 0, 0, 0, 0];
            m.extend_from_slice(&dns_name(&[&motif, instance.as_bytes(), service.as_bytes(), b"_tcp", b"local"]));
            m.extend_from_slice(&[0, 16, 0x80, 1, 0, 0, 0x11, 0x94]);
            let txt = format!("id={}", String::from_utf8_lossy(&motif));
            m.extend_from_slice(&(txt.len() as u16 + 1).to_be_bytes());
            m.push(txt.len() as u8);
            m.extend_from_slice(txt.as_bytes());
            sent += m.len();
            self.udp_out(MDNS_MAC, (self.ip, port), (MDNS_GROUP, 5353), &m);
        }
    }
}

/// Packets of one setup run; deterministic in (profile, setup index, seed).
pub fn generate_setup(profile: &DeviceProfile, device_index: usize, setup: usize, seed: u64) -> Vec<RawPacket> {
    let mix = seed ^ fnv(profile.name.as_bytes()) ^ ((device_index as u64) << 40) ^ (setup as u64).wrapping_mul(0x9e3779b97f4a7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let oui = fnv(profile.vendor.as_bytes()).to_be_bytes();
    let mac = [oui[0] & 0xfc, oui[1], oui[2], rng.gen(), rng.gen(), rng.gen()];
    let ip = Ipv4Addr::new(192, 168, 1, rng.gen_range(2..250));
    let cloud = Ipv4Addr::from((0x3400_0000u32 | (fnv(profile.vendor.as_bytes()) as u32 & 0x00ff_ffff)).to_be_bytes());
    let time = 1_500_000_000_000_000 + setup as i64 * 3_600_000_000;
    let mut s = Setup { profile, rng, packets: Vec::new(), time, mac, ip, cloud };
    s.discovery_burst();
    s.arp();
    let (mean, spread) = profile.sessions;
    let n = (mean + spread * s.rng.gen_range(-1.0..1.0)).round().max(1.0) as usize;
    let mut plan: Vec<SynthProtocol> = (0..n).map(|_| profile.pick_protocol(&mut s.rng)).collect();
    let order = profile.emission_order();
    plan.sort_by_key(|p| order.iter().position(|q| q == p));
    for p in plan {
        s.session(p);
    }
    s.packets
}

/// Writes `<out>/<device>/setup_<NN>.pcap` for every profile and setup,
/// plus `<out>/manifest.json` with paths relative to `out`.
pub fn generate_corpus(
    profiles: &[DeviceProfile],
    setups_per_device: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<ManifestEntry>, SynthError> {
    if profiles.len() < 2 {
        return Err(SynthError::TooFewProfiles(profiles.len()));
    }
    let mut names = std::collections::BTreeSet::new();
    for p in profiles {
        p.validate()?;
        if !names.insert(&p.name) {
            return Err(SynthError::DuplicateName(p.name.clone()));
        }
    }
    let mut entries = Vec::new();
    for (d, p) in profiles.iter().enumerate() {
        std::fs::create_dir_all(out.join(&p.name))?;
        for s in 0..setups_per_device {
            let rel = PathBuf::from(&p.name).join(format!("setup_{s:02}.pcap"));
            write_pcap(&generate_setup(p, d, s, seed), &out.join(&rel))?;
            entries.push(ManifestEntry { pcap_path: rel, device_type: p.name.clone(), setup_id: format!("{}-{s:02}", p.name) });
        }
    }
    write_manifest(&out.join("manifest.json"), &entries)?;
    Ok(entries)
}
