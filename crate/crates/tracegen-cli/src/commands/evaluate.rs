use std::fmt::Write as _;
use std::path::PathBuf;

use tracegen_core::ingest::{format_float, TraceDataset};
use tracegen_core::metrics::{
    evaluate, inter_arrivals, qq_points, seasonal_histograms, MetricReport,
};

use super::plot::{host_pair_table, write_charts};
use super::{load_trace, KindArg};
use crate::errors::{data, CliError};
use crate::output::{atomic_write, RunStamp};

#[derive(clap::Args)]
pub struct EvaluateArgs {
    /// Reference trace
    pub real: PathBuf,
    /// Trace under evaluation
    pub synth: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Flow)]
    pub kind: KindArg,
    /// Report directory: report.txt, metrics.kv, diagnostic CSVs
    #[arg(long, default_value = "eval")]
    pub out_dir: PathBuf,
    /// Also render the SVG charts
    #[arg(long)]
    pub plots: bool,
    /// Quantile count for the Q-Q diagnostics
    #[arg(long, default_value_t = 99)]
    pub quantiles: usize,
}

/// Flat key/value view of the report, in stable order.
fn report_rows(report: &MetricReport) -> Vec<(String, String)> {
    let mut rows = vec![
        ("real_records".to_string(), report.real_records.to_string()),
        ("synth_records".to_string(), report.synth_records.to_string()),
    ];
    for (field, v) in &report.jsd {
        rows.push((format!("jsd.{field}"), format_float(*v)));
    }
    for (feature, v) in &report.emd {
        rows.push((format!("emd.{feature}"), format_float(*v)));
    }
    rows.push(("pcd".to_string(), format_float(report.pcd)));
    rows.push(("cmd".to_string(), format_float(report.cmd)));
    rows.push(("density".to_string(), format_float(report.density)));
    rows.push(("coverage".to_string(), format_float(report.coverage)));
    rows.push((
        "membership_disclosure".to_string(),
        format_float(report.membership_disclosure),
    ));
    rows.push(("knn_k".to_string(), report.knn_k.to_string()));
    rows.push((
        "quadratic_sample.real".to_string(),
        report.quadratic_sample.0.to_string(),
    ));
    rows.push((
        "quadratic_sample.synth".to_string(),
        report.quadratic_sample.1.to_string(),
    ));
    rows
}

fn table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  value", "metric");
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}

fn qq_csv(real: &[f64], synth: &[f64], n: usize, stamp: &RunStamp) -> Option<String> {
    let points = qq_points(real, synth, n).ok()?;
    let mut out = stamp.header();
    out.push_str("p,real,synth\n");
    for (j, (a, b)) in points.iter().enumerate() {
        let p = (j + 1) as f64 / (n + 1) as f64;
        let _ = writeln!(out, "{},{},{}", format_float(p), format_float(*a), format_float(*b));
    }
    Some(out)
}

fn seasonal_csvs(real: &TraceDataset, synth: &TraceDataset, stamp: &RunStamp) -> (String, String) {
    let (rh, rd) = seasonal_histograms(real);
    let (sh, sd) = seasonal_histograms(synth);
    let frac = |c: u64, total: u64| format_float(c as f64 / (total as f64).max(1.0));
    let (rt, st) = (rh.iter().sum::<u64>(), sh.iter().sum::<u64>());

    let mut hourly = stamp.header();
    hourly.push_str("hour,real_count,synth_count,real_frac,synth_frac\n");
    for h in 0..24 {
        let _ = writeln!(
            hourly,
            "{h},{},{},{},{}",
            rh[h],
            sh[h],
            frac(rh[h], rt),
            frac(sh[h], st)
        );
    }

    const NAMES: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
    let mut weekday = stamp.header();
    weekday.push_str("weekday,name,real_count,synth_count,real_frac,synth_frac\n");
    for d in 0..7 {
        let _ = writeln!(
            weekday,
            "{d},{},{},{},{},{}",
            NAMES[d],
            rd[d],
            sd[d],
            frac(rd[d], rt),
            frac(sd[d], st)
        );
    }
    (hourly, weekday)
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let kind = args.kind.to_kind();
    let real = load_trace(&args.real, kind)?;
    let synth = load_trace(&args.synth, kind)?;
    let report = evaluate(&real, &synth).map_err(data)?;

    let mut stamp = RunStamp::new("evaluate");
    stamp.push("real", args.real.display());
    stamp.push("synth", args.synth.display());
    stamp.push("kind", kind);
    stamp.push("quantiles", args.quantiles);

    let rows = report_rows(&report);
    let table_text = table(&rows);
    print!("{table_text}");

    let dir = &args.out_dir;
    atomic_write(
        &dir.join("report.txt"),
        format!("{}{}", stamp.header(), table_text).as_bytes(),
    )?;
    let mut kv = stamp.header();
    for (k, v) in &rows {
        let _ = writeln!(kv, "{k} = {v}");
    }
    atomic_write(&dir.join("metrics.kv"), kv.as_bytes())?;

    let real_tau = inter_arrivals(&real);
    let synth_tau = inter_arrivals(&synth);
    if let Some(csv) = qq_csv(&real_tau, &synth_tau, args.quantiles, &stamp) {
        atomic_write(&dir.join("qq_inter_arrival.csv"), csv.as_bytes())?;
    }
    let sizes = |ds: &TraceDataset| -> Vec<f64> {
        ds.records.iter().map(|r| r.size() as f64).collect()
    };
    if let Some(csv) = qq_csv(&sizes(&real), &sizes(&synth), args.quantiles, &stamp) {
        atomic_write(&dir.join("qq_size.csv"), csv.as_bytes())?;
    }
    let durations = |ds: &TraceDataset| -> Vec<f64> {
        ds.records.iter().map(|r| r.duration).collect()
    };
    if let Some(csv) = qq_csv(&durations(&real), &durations(&synth), args.quantiles, &stamp) {
        atomic_write(&dir.join("qq_duration.csv"), csv.as_bytes())?;
    }

    let (hourly, weekday) = seasonal_csvs(&real, &synth, &stamp);
    atomic_write(&dir.join("hourly.csv"), hourly.as_bytes())?;
    atomic_write(&dir.join("weekday.csv"), weekday.as_bytes())?;

    let mut pairs_csv = stamp.header();
    pairs_csv.push_str("src_ip,dst_ip,real_frac,synth_frac\n");
    for (s, d, r, q) in host_pair_table(&real, &synth, 10) {
        let _ = writeln!(pairs_csv, "{s},{d},{},{}", format_float(r), format_float(q));
    }
    atomic_write(&dir.join("host_pairs.csv"), pairs_csv.as_bytes())?;

    if args.plots {
        for path in write_charts(&real, &synth, dir, args.quantiles)? {
            println!("wrote {}", path.display());
        }
    }
    println!("report -> {}", dir.display());
    Ok(())
}
