use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tracegen_core::ingest::TraceDataset;
use tracegen_core::metrics::{host_pair_distribution, inter_arrivals, qq_points, seasonal_histograms};

use super::{load_trace, KindArg};
use crate::errors::CliError;
use crate::output::atomic_write;
use crate::svg;

#[derive(clap::Args)]
pub struct PlotArgs {
    pub real: PathBuf,
    pub synth: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Flow)]
    pub kind: KindArg,
    #[arg(long, default_value = "plots")]
    pub out_dir: PathBuf,
    /// Quantile count for the Q-Q chart
    #[arg(long, default_value_t = 99)]
    pub quantiles: usize,
}

const WEEKDAY_NAMES: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];

fn fractions(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let total = (total as f64).max(1.0);
    counts.iter().map(|c| *c as f64 / total).collect()
}

/// Union of the two top-`top_n` host-pair lists with both sides'
/// fractions, ordered by the real fraction.
pub fn host_pair_table(
    real: &TraceDataset,
    synth: &TraceDataset,
    top_n: usize,
) -> Vec<(String, String, f64, f64)> {
    let full = |ds: &TraceDataset| -> BTreeMap<(String, String), f64> {
        host_pair_distribution(ds, usize::MAX).into_iter().collect()
    };
    let real_full = full(real);
    let synth_full = full(synth);
    let mut pairs: Vec<(String, String)> = host_pair_distribution(real, top_n)
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    for (p, _) in host_pair_distribution(synth, top_n) {
        if !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    let mut rows: Vec<(String, String, f64, f64)> = pairs
        .into_iter()
        .map(|(s, d)| {
            let key = (s.clone(), d.clone());
            let r = real_full.get(&key).copied().unwrap_or(0.0);
            let q = synth_full.get(&key).copied().unwrap_or(0.0);
            (s, d, r, q)
        })
        .collect();
    rows.sort_by(|a, b| b.2.total_cmp(&a.2).then(b.3.total_cmp(&a.3)));
    rows
}

/// Renders the four diagnostic charts into `dir`, returning the paths.
pub fn write_charts(
    real: &TraceDataset,
    synth: &TraceDataset,
    dir: &Path,
    quantiles: usize,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    let mut emit = |name: &str, content: String| -> Result<(), CliError> {
        let path = dir.join(name);
        atomic_write(&path, content.as_bytes())?;
        written.push(path);
        Ok(())
    };

    let real_tau = inter_arrivals(real);
    let synth_tau = inter_arrivals(synth);
    if let Ok(points) = qq_points(&real_tau, &synth_tau, quantiles) {
        emit(
            "qq_inter_arrival.svg",
            svg::qq_scatter(
                "Inter-arrival quantiles",
                "real (s)",
                "synthetic (s)",
                &points,
            ),
        )?;
    }

    let (real_hours, real_days) = seasonal_histograms(real);
    let (synth_hours, synth_days) = seasonal_histograms(synth);
    let hour_labels: Vec<String> = (0..24).map(|h| format!("{h:02}")).collect();
    emit(
        "hourly.svg",
        svg::grouped_bars(
            "Events by hour of day",
            "fraction of events",
            &hour_labels,
            &fractions(&real_hours),
            &fractions(&synth_hours),
        ),
    )?;
    let day_labels: Vec<String> = WEEKDAY_NAMES.iter().map(|d| d.to_string()).collect();
    emit(
        "weekday.svg",
        svg::grouped_bars(
            "Events by weekday",
            "fraction of events",
            &day_labels,
            &fractions(&real_days),
            &fractions(&synth_days),
        ),
    )?;

    let table = host_pair_table(real, synth, 10);
    let labels: Vec<String> = table.iter().map(|(s, d, _, _)| format!("{s}->{d}")).collect();
    let real_frac: Vec<f64> = table.iter().map(|r| r.2).collect();
    let synth_frac: Vec<f64> = table.iter().map(|r| r.3).collect();
    emit(
        "host_pairs.svg",
        svg::grouped_bars(
            "Top host pairs",
            "fraction of events",
            &labels,
            &real_frac,
            &synth_frac,
        ),
    )?;
    Ok(written)
}

pub fn run(args: PlotArgs) -> Result<(), CliError> {
    let kind = args.kind.to_kind();
    let real = load_trace(&args.real, kind)?;
    let synth = load_trace(&args.synth, kind)?;
    let written = write_charts(&real, &synth, &args.out_dir, args.quantiles)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
