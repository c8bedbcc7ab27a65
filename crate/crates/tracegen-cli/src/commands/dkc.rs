use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use tracegen_core::compliance::{dkc_score, RuleConfig, RuleId};
use tracegen_core::ingest::format_float;

use super::{load_trace, KindArg};
use crate::errors::{data, usage, CliError};
use crate::output::{atomic_write, RunStamp};

#[derive(clap::Args)]
pub struct DkcArgs {
    /// Flow trace to score (omit with --catalog)
    pub data: Option<PathBuf>,
    /// Print the rule catalog and exit
    #[arg(long)]
    pub catalog: bool,
    #[arg(long, value_enum, default_value_t = KindArg::Flow)]
    pub kind: KindArg,
    /// Addresses treated as DNS servers; enables the DNS-destination rule
    #[arg(long, value_delimiter = ',')]
    pub dns_servers: Vec<String>,
    /// Multicast-DNS group addresses (defaults to 224.0.0.251 and ff02::fb)
    #[arg(long, value_delimiter = ',')]
    pub mdns_groups: Vec<String>,
    /// Per-record violation listing
    #[arg(long, default_value = "violations.csv")]
    pub out: PathBuf,
}

pub fn run(args: DkcArgs) -> Result<(), CliError> {
    if args.catalog {
        for id in RuleId::all() {
            println!("{:>2}  {}", id.id(), id.description());
        }
        return Ok(());
    }
    let Some(path) = &args.data else {
        return Err(usage("provide a trace to score, or --catalog"));
    };
    let ds = load_trace(path, args.kind.to_kind())?;

    let mut rule_cfg = RuleConfig::default();
    if !args.dns_servers.is_empty() {
        rule_cfg.dns_servers = Some(args.dns_servers.iter().cloned().collect::<HashSet<_>>());
    }
    if !args.mdns_groups.is_empty() {
        rule_cfg.mdns_groups = args.mdns_groups.iter().cloned().collect();
    }
    let report = dkc_score(&ds, &rule_cfg).map_err(data)?;

    let mut stamp = RunStamp::new("dkc");
    stamp.push("data", path.display());
    if !args.dns_servers.is_empty() {
        stamp.push("dns_servers", args.dns_servers.join(","));
    }
    if !args.mdns_groups.is_empty() {
        stamp.push("mdns_groups", args.mdns_groups.join(","));
    }

    let mut csv = stamp.header();
    csv.push_str("record_index,rule_ids\n");
    for (i, rules) in report.per_record.iter().enumerate() {
        if rules.is_empty() {
            continue;
        }
        let ids: Vec<String> = rules.iter().map(|r| r.id().to_string()).collect();
        let _ = writeln!(csv, "{i},{}", ids.join(";"));
    }
    atomic_write(&args.out, csv.as_bytes())?;

    println!(
        "score {} over {} records, {} active rules",
        format_float(report.score),
        ds.len(),
        report.active.len()
    );
    if !report.skipped.is_empty() {
        let ids: Vec<String> = report.skipped.iter().map(|r| r.id().to_string()).collect();
        println!("skipped rules: {}", ids.join(", "));
    }
    for (rule, count) in &report.per_rule {
        if *count > 0 {
            println!("{:>6}  rule {:>2}  {}", count, rule.id(), rule.description());
        }
    }
    println!("violations -> {}", args.out.display());
    Ok(())
}
