//! Flow plausibility rules and the aggregate compliance score.
//!
//! Twenty lightweight predicates flag semantically or physically
//! implausible flow records: transport/port mismatches, impossible
//! byte/packet ratios, broadcast-protocol traffic sent to unicast
//! addresses, and so on. The score is the violation mass over the active
//! rules; rules whose inputs are absent from the data or the
//! configuration are reported as skipped and excluded from the
//! denominator rather than silently counted as passing.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::ingest::{TraceDataset, TraceKind, TraceRecord};

#[derive(Debug, Error)]
pub enum ComplianceError {
    #[error("compliance rules are defined for flow traces, got {found}")]
    WrongKind { found: TraceKind },
    #[error("cannot score an empty dataset")]
    EmptyDataset,
}

/// One of the twenty plausibility rules, identified by a stable number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleId(u8);

impl RuleId {
    pub const COUNT: usize = 20;

    pub fn new(id: u8) -> Option<RuleId> {
        (1..=Self::COUNT as u8).contains(&id).then_some(RuleId(id))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = RuleId> {
        (1..=Self::COUNT as u8).map(RuleId)
    }

    pub fn description(self) -> &'static str {
        match self.0 {
            1 => "TCP on a port reserved for UDP services (53, 137, 138, 5353, 1900, 67, 3544, 8612, 3702, 123)",
            2 => "UDP on a port associated with TCP services (80, 443, 8000, 25, 993, 587, 445, 84, 8088, 8080)",
            3 => "destination port 0 on non-ICMP/IGMP traffic",
            4 => "ICMP flow reporting outgoing bytes",
            5 => "ICMP flow reporting outgoing packets",
            6 => "IGMP flow reporting bytes in either direction",
            7 => "NetBIOS/SSDP port (137, 138, 1900) with incoming bytes",
            8 => "NetBIOS/SSDP port (137, 138, 1900) with incoming packets",
            9 => "NetBIOS/SSDP port (137, 138, 1900) sent to a non-broadcast address",
            10 => "private 192.168.* destination on an external service port (80, 443, 8000, 25, 587)",
            11 => "external destination on a local-only service port (993, 67)",
            12 => "port-53 flow not directed at a configured DNS server",
            13 => "port-5353 flow not directed at a multicast DNS group",
            14 => "non-TCP flow carrying TCP flags",
            15 => "incoming bytes below the minimum frame size (bytes < 42 x packets)",
            16 => "outgoing bytes below the minimum frame size (bytes < 42 x packets)",
            17 => "incoming bytes above the maximum frame size (bytes > 65535 x packets)",
            18 => "outgoing bytes above the maximum frame size (bytes > 65535 x packets)",
            19 => "negative or malformed duration",
            20 => "duration inconsistent with the packet count (zero duration with several packets, or positive duration with at most one)",
            _ => unreachable!("rule ids are 1..=20"),
        }
    }
}

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rule {}", self.0)
    }
}

/// Deployment context for the rules that need it.
#[derive(Debug, Clone)]
pub struct RuleConfig {
    /// Destinations accepted for port-53 traffic. The DNS rule is skipped
    /// entirely when this is unset; an empty set means no destination is
    /// acceptable.
    pub dns_servers: Option<HashSet<String>>,
    /// Group addresses accepted for port-5353 traffic.
    pub mdns_groups: HashSet<String>,
}

impl Default for RuleConfig {
    fn default() -> RuleConfig {
        RuleConfig {
            dns_servers: None,
            mdns_groups: ["224.0.0.251", "ff02::fb"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

const UDP_ONLY_PORTS: [u16; 10] = [53, 137, 138, 5353, 1900, 67, 3544, 8612, 3702, 123];
const TCP_ONLY_PORTS: [u16; 10] = [80, 443, 8000, 25, 993, 587, 445, 84, 8088, 8080];
const NETBIOS_SSDP_PORTS: [u16; 3] = [137, 138, 1900];
const PRIVATE_SERVICE_PORTS: [u16; 5] = [80, 443, 8000, 25, 587];
const LOCAL_ONLY_PORTS: [u16; 2] = [993, 67];
const MIN_BYTES_PER_PACKET: u64 = 42;
const MAX_BYTES_PER_PACKET: u64 = 65_535;

fn is_private(ip: &str) -> bool {
    ip.starts_with("192.168.")
}

fn is_broadcast(ip: &str) -> bool {
    ip.ends_with(".255")
}

/// Evaluates every rule against one flow record. Pure and total: rules
/// whose inputs are absent (no flags on the record, no DNS server list)
/// simply do not fire here; dataset-level skip reporting happens in
/// [`dkc_score`].
pub fn check_record(r: &TraceRecord, cfg: &RuleConfig) -> BTreeSet<RuleId> {
    let tcp = r.protocol.eq_ignore_ascii_case("TCP");
    let udp = r.protocol.eq_ignore_ascii_case("UDP");
    let icmp = r.protocol.eq_ignore_ascii_case("ICMP");
    let igmp = r.protocol.eq_ignore_ascii_case("IGMP");
    let netbios_ssdp = NETBIOS_SSDP_PORTS.contains(&r.dst_port);
    let packets = r.packets_total();

    let mut v = BTreeSet::new();
    let mut flag = |id: u8, hit: bool| {
        if hit {
            v.insert(RuleId(id));
        }
    };

    flag(1, tcp && UDP_ONLY_PORTS.contains(&r.dst_port));
    flag(2, udp && TCP_ONLY_PORTS.contains(&r.dst_port));
    flag(3, r.dst_port == 0 && !icmp && !igmp);
    flag(4, icmp && r.bytes_out > 0);
    flag(5, icmp && r.packets_out > 0);
    flag(6, igmp && (r.bytes_in > 0 || r.bytes_out > 0));
    flag(7, netbios_ssdp && r.bytes_in > 0);
    flag(8, netbios_ssdp && r.packets_in > 0);
    flag(9, netbios_ssdp && !is_broadcast(&r.dst_ip));
    flag(
        10,
        is_private(&r.dst_ip) && PRIVATE_SERVICE_PORTS.contains(&r.dst_port),
    );
    flag(
        11,
        !is_private(&r.dst_ip) && LOCAL_ONLY_PORTS.contains(&r.dst_port),
    );
    if let Some(dns) = &cfg.dns_servers {
        flag(12, r.dst_port == 53 && !dns.contains(&r.dst_ip));
    }
    flag(13, r.dst_port == 5353 && !cfg.mdns_groups.contains(&r.dst_ip));
    flag(
        14,
        !tcp && r.tcp_flags.as_deref().is_some_and(|f| !f.is_empty()),
    );
    // The frame-size rules compare an average packet size, so each needs
    // both quantities present: a zero-byte or zero-packet direction is
    // judged by the protocol and consistency rules instead.
    flag(
        15,
        r.bytes_in > 0 && r.bytes_in < MIN_BYTES_PER_PACKET * r.packets_in,
    );
    flag(
        16,
        r.bytes_out > 0 && r.bytes_out < MIN_BYTES_PER_PACKET * r.packets_out,
    );
    flag(
        17,
        r.packets_in > 0 && r.bytes_in > MAX_BYTES_PER_PACKET * r.packets_in,
    );
    flag(
        18,
        r.packets_out > 0 && r.bytes_out > MAX_BYTES_PER_PACKET * r.packets_out,
    );
    flag(19, r.duration < 0.0 || !r.duration.is_finite());
    flag(
        20,
        (r.duration == 0.0 && packets > 1) || (r.duration > 0.0 && packets <= 1),
    );
    v
}

#[derive(Debug, Clone)]
pub struct ViolationReport {
    /// Violated rules per record, parallel to the dataset order.
    pub per_record: Vec<BTreeSet<RuleId>>,
    /// Violation counts per rule over the whole dataset.
    pub per_rule: BTreeMap<RuleId, usize>,
    /// Rules that were evaluated against this dataset.
    pub active: BTreeSet<RuleId>,
    /// Rules excluded because their inputs are absent: the DNS rule
    /// without a server list, the flag rule when no record carries flags.
    pub skipped: BTreeSet<RuleId>,
    /// Violation mass: total violations / (records x active rules).
    pub score: f64,
}

pub fn dkc_score(
    ds: &TraceDataset,
    cfg: &RuleConfig,
) -> Result<ViolationReport, ComplianceError> {
    if ds.kind != TraceKind::Flow {
        return Err(ComplianceError::WrongKind { found: ds.kind });
    }
    if ds.records.is_empty() {
        return Err(ComplianceError::EmptyDataset);
    }

    let mut skipped = BTreeSet::new();
    if cfg.dns_servers.is_none() {
        skipped.insert(RuleId(12));
    }
    if !ds.records.iter().any(|r| r.tcp_flags.is_some()) {
        skipped.insert(RuleId(14));
    }
    let active: BTreeSet<RuleId> = RuleId::all().filter(|r| !skipped.contains(r)).collect();

    let per_record: Vec<BTreeSet<RuleId>> = ds
        .records
        .iter()
        .map(|r| check_record(r, cfg))
        .collect();
    let mut per_rule: BTreeMap<RuleId, usize> =
        RuleId::all().map(|r| (r, 0)).collect();
    let mut total = 0usize;
    for set in &per_record {
        total += set.len();
        for rule in set {
            *per_rule.get_mut(rule).unwrap() += 1;
        }
    }
    let score = total as f64 / (ds.records.len() * active.len()) as f64;
    Ok(ViolationReport {
        per_record,
        per_rule,
        active,
        skipped,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Passes every predicate: UDP to an external unicast address on an
    /// unremarkable port, frame sizes on the 42-byte boundary, duration
    /// and packet counts consistent, flags field present but empty.
    fn clean_record() -> TraceRecord {
        TraceRecord {
            timestamp: 1_704_067_200.0,
            src_ip: "192.168.1.5".into(),
            dst_ip: "10.0.0.9".into(),
            protocol: "UDP".into(),
            src_port: 55555,
            dst_port: 12345,
            bytes_in: 4200,
            bytes_out: 4200,
            packets_in: 100,
            packets_out: 100,
            duration: 1.5,
            tcp_flags: Some(String::new()),
        }
    }

    fn test_cfg() -> RuleConfig {
        RuleConfig {
            dns_servers: Some(["10.0.0.53".to_string()].into_iter().collect()),
            ..RuleConfig::default()
        }
    }

    /// A record violating exactly the given rule under `test_cfg`.
    fn isolated(id: u8) -> TraceRecord {
        let mut r = clean_record();
        match id {
            1 => {
                r.protocol = "TCP".into();
                r.dst_port = 53;
                r.dst_ip = "10.0.0.53".into();
            }
            2 => r.dst_port = 80,
            3 => r.dst_port = 0,
            4 => {
                r.protocol = "ICMP".into();
                r.bytes_out = 100;
                r.packets_out = 0;
            }
            5 => {
                r.protocol = "ICMP".into();
                r.packets_out = 3;
                r.bytes_out = 0;
            }
            6 => r.protocol = "IGMP".into(),
            7 => {
                r.dst_port = 137;
                r.dst_ip = "10.0.0.255".into();
                r.packets_in = 0;
            }
            8 => {
                r.dst_port = 138;
                r.dst_ip = "10.0.0.255".into();
                r.bytes_in = 0;
                r.packets_in = 3;
            }
            9 => {
                r.dst_port = 1900;
                r.bytes_in = 0;
                r.packets_in = 0;
            }
            10 => {
                r.protocol = "TCP".into();
                r.dst_ip = "192.168.1.9".into();
                r.dst_port = 443;
            }
            11 => r.dst_port = 67,
            12 => r.dst_port = 53,
            13 => r.dst_port = 5353,
            14 => r.tcp_flags = Some(".AP.SF".into()),
            15 => r.bytes_in = 100,
            16 => r.bytes_out = 100,
            17 => r.bytes_in = 7_000_000,
            18 => r.bytes_out = 7_000_000,
            19 => r.duration = -1.0,
            20 => r.duration = 0.0,
            _ => unreachable!(),
        }
        r
    }

    #[test]
    fn the_clean_record_violates_nothing() {
        assert!(check_record(&clean_record(), &test_cfg()).is_empty());
    }

    #[test]
    fn each_rule_fires_alone_on_its_isolation_record() {
        let cfg = test_cfg();
        for id in 1..=20u8 {
            let got = check_record(&isolated(id), &cfg);
            let want: BTreeSet<RuleId> = [RuleId::new(id).unwrap()].into();
            assert_eq!(got, want, "rule {id} record hit {got:?}");
        }
    }

    #[test]
    fn isolation_dataset_scores_one_violation_per_record() {
        let ds = TraceDataset::new(TraceKind::Flow, (1..=20).map(isolated).collect());
        let report = dkc_score(&ds, &test_cfg()).unwrap();
        assert!(report.skipped.is_empty());
        assert_eq!(report.active.len(), 20);
        assert!(report.per_rule.values().all(|c| *c == 1));
        assert_eq!(report.score, 20.0 / (20.0 * 20.0));
    }

    #[test]
    fn single_violation_in_a_single_record_scores_one_twentieth() {
        let ds = TraceDataset::new(TraceKind::Flow, vec![isolated(2)]);
        let report = dkc_score(&ds, &test_cfg()).unwrap();
        assert_eq!(report.score, 0.05);
    }

    #[test]
    fn unconfigured_rules_are_skipped_not_passed() {
        // no DNS servers configured, no flags field anywhere
        let mut r = clean_record();
        r.tcp_flags = None;
        r.dst_port = 53; // would violate rule 12 if it were active
        let mut other = clean_record();
        other.tcp_flags = None;
        other.dst_port = 80; // rule 2
        let ds = TraceDataset::new(TraceKind::Flow, vec![r, other]);
        let report = dkc_score(&ds, &RuleConfig::default()).unwrap();
        let skipped: Vec<u8> = report.skipped.iter().map(|r| r.id()).collect();
        assert_eq!(skipped, vec![12, 14]);
        assert_eq!(report.active.len(), 18);
        assert_eq!(report.per_rule[&RuleId::new(12).unwrap()], 0);
        assert_eq!(report.score, 1.0 / (2.0 * 18.0));
    }

    #[test]
    fn score_is_invariant_under_record_permutation() {
        let records: Vec<TraceRecord> = (1..=20).map(isolated).collect();
        let mut reversed = records.clone();
        reversed.reverse();
        let a = dkc_score(&TraceDataset::new(TraceKind::Flow, records), &test_cfg()).unwrap();
        let b = dkc_score(&TraceDataset::new(TraceKind::Flow, reversed), &test_cfg()).unwrap();
        assert_eq!(a.score, b.score);
        assert_eq!(a.per_rule, b.per_rule);
    }

    #[test]
    fn packet_traces_and_empty_data_are_rejected() {
        let packets = TraceDataset::new(TraceKind::Packet, vec![clean_record()]);
        assert!(matches!(
            dkc_score(&packets, &test_cfg()),
            Err(ComplianceError::WrongKind { .. })
        ));
        let empty = TraceDataset::new(TraceKind::Flow, vec![]);
        assert!(matches!(
            dkc_score(&empty, &test_cfg()),
            Err(ComplianceError::EmptyDataset)
        ));
    }

    #[test]
    fn scores_stay_in_the_unit_interval_on_arbitrary_records() {
        let mut rng = StdRng::seed_from_u64(31);
        let protos = ["TCP", "UDP", "ICMP", "IGMP", "GRE"];
        let ips = ["192.168.0.4", "10.1.2.3", "8.8.8.8", "224.0.0.251", "172.16.4.255"];
        let records: Vec<TraceRecord> = (0..500)
            .map(|i| TraceRecord {
                timestamp: 1_704_067_200.0 + i as f64,
                src_ip: ips[rng.random_range(0..ips.len())].into(),
                dst_ip: ips[rng.random_range(0..ips.len())].into(),
                protocol: protos[rng.random_range(0..protos.len())].into(),
                src_port: rng.random_range(0..1024),
                dst_port: rng.random_range(0..6000),
                bytes_in: rng.random_range(0..100_000),
                bytes_out: rng.random_range(0..100_000),
                packets_in: rng.random_range(0..50),
                packets_out: rng.random_range(0..50),
                duration: rng.random_range(-1.0..10.0),
                tcp_flags: if rng.random_range(0..3) == 0 {
                    Some(".A..S.".into())
                } else {
                    None
                },
            })
            .collect();
        let ds = TraceDataset::new(TraceKind::Flow, records);
        let report = dkc_score(&ds, &test_cfg()).unwrap();
        assert!((0.0..=1.0).contains(&report.score));
        for set in &report.per_record {
            assert!(set.iter().all(|r| report.active.contains(r)));
        }
        let total: usize = report.per_rule.values().sum();
        assert_eq!(
            total,
            report.per_record.iter().map(BTreeSet::len).sum::<usize>()
        );
    }

    #[test]
    fn rule_catalog_is_complete() {
        assert_eq!(RuleId::all().count(), 20);
        assert!(RuleId::new(0).is_none());
        assert!(RuleId::new(21).is_none());
        for rule in RuleId::all() {
            assert!(!rule.description().is_empty());
        }
    }
}
