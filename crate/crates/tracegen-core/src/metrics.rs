//! Fidelity, diversity and disclosure metrics, plus the diagnostic
//! exports (quantile pairs, seasonal histograms, host-pair ranking).
//!
//! Distribution distances treat both datasets as empirical samples:
//! divergences for the categorical fields, transport distance for the
//! numeric ones, matrix distances for the pairwise dependency structure,
//! and nearest-neighbor estimates for how densely and broadly the
//! synthetic sample populates the real one's support. All of them are 0
//! (coverage 1) when the two inputs are identical.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ingest::{hour_of_day, weekday_of, TraceDataset, TraceRecord, EPS_TAU};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric input must not be empty")]
    EmptyInput,
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("need at least {need} points, have {have}")]
    TooFewPoints { need: usize, have: usize },
    #[error("datasets are of different kinds")]
    KindMismatch,
}

/// Neighbor count for the density and coverage estimates.
pub const DEFAULT_KNN_K: usize = 5;

/// The quadratic metrics (density, coverage, membership disclosure) are
/// estimated on an evenly strided subsample past this many records.
pub const QUADRATIC_SAMPLE_CAP: usize = 4000;

const CATEGORICAL_FIELDS: [&str; 5] = ["src_ip", "dst_ip", "protocol", "src_port", "dst_port"];

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub real_records: usize,
    pub synth_records: usize,
    /// Divergence per categorical field, in bits.
    pub jsd: BTreeMap<String, f64>,
    /// Transport distance per numeric feature.
    pub emd: BTreeMap<String, f64>,
    pub pcd: f64,
    pub cmd: f64,
    pub density: f64,
    pub coverage: f64,
    pub membership_disclosure: f64,
    /// Neighbor count the density/coverage estimates used.
    pub knn_k: usize,
    /// Records per side actually used for the quadratic metrics.
    pub quadratic_sample: (usize, usize),
}

/// Jensen-Shannon divergence between two empirical categorical
/// distributions, base-2 logs, over the union of observed values.
pub fn jsd<T: Ord>(p_samples: &[T], q_samples: &[T]) -> Result<f64, MetricError> {
    if p_samples.is_empty() || q_samples.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    fn freq<T: Ord>(xs: &[T]) -> BTreeMap<&T, f64> {
        let mut m: BTreeMap<&T, f64> = BTreeMap::new();
        for x in xs {
            *m.entry(x).or_insert(0.0) += 1.0;
        }
        let n = xs.len() as f64;
        m.values_mut().for_each(|v| *v /= n);
        m
    }
    let p = freq(p_samples);
    let q = freq(q_samples);
    let mut keys: BTreeSet<&T> = p.keys().copied().collect();
    keys.extend(q.keys().copied());
    let mut d = 0.0;
    for k in keys {
        let pi = p.get(k).copied().unwrap_or(0.0);
        let qi = q.get(k).copied().unwrap_or(0.0);
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            d += 0.5 * pi * (pi / m).log2();
        }
        if qi > 0.0 {
            d += 0.5 * qi * (qi / m).log2();
        }
    }
    Ok(d)
}

/// 1-D Wasserstein-1 distance between two samples: the integral of the
/// absolute quantile-function difference, computed exactly by walking the
/// merged probability breakpoints of the two sorted samples.
pub fn emd_1d(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as u64, ys.len() as u64);
    let (mut i, mut j) = (0u64, 0u64);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < n && j < m {
        // breakpoint comparison in integers keeps ties exact
        let a = (i + 1) * m;
        let b = (j + 1) * n;
        let next = if a <= b {
            (i + 1) as f64 / n as f64
        } else {
            (j + 1) as f64 / m as f64
        };
        acc += (xs[i as usize] - ys[j as usize]).abs() * (next - u);
        u = next;
        if a <= b {
            i += 1;
        }
        if b <= a {
            j += 1;
        }
    }
    Ok(acc)
}

/// ln-transformed numeric features of one record sequence: inter-arrival,
/// total bytes, duration. The first record's inter-arrival is the floor
/// value, mirroring the training encoding.
fn ln_numeric_rows(records: &[TraceRecord]) -> Vec<[f64; 3]> {
    let mut prev: Option<f64> = None;
    records
        .iter()
        .map(|r| {
            let tau = match prev {
                None => EPS_TAU,
                Some(p) => (r.timestamp - p).max(EPS_TAU),
            };
            prev = Some(r.timestamp);
            [
                tau.ln(),
                (1.0 + r.size() as f64).ln(),
                (1.0 + r.duration.max(0.0)).ln(),
            ]
        })
        .collect()
}

/// Pearson correlation of the three ln-numeric features. A constant
/// column keeps its unit diagonal but zero off-diagonal entries, so
/// degenerate variance never produces NaN.
fn correlation3(rows: &[[f64; 3]]) -> [[f64; 3]; 3] {
    let n = rows.len() as f64;
    let mut mean = [0.0; 3];
    for r in rows {
        for c in 0..3 {
            mean[c] += r[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = [[0.0; 3]; 3];
    for r in rows {
        for a in 0..3 {
            for b in 0..3 {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    let std: Vec<f64> = (0..3).map(|c| (cov[c][c] / n).sqrt()).collect();
    let mut corr = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            corr[a][b] = if a == b {
                1.0
            } else if std[a] < 1e-12 || std[b] < 1e-12 {
                0.0
            } else {
                cov[a][b] / (n * std[a] * std[b])
            };
        }
    }
    corr
}

/// Frobenius norm of the difference between the two datasets' numeric
/// correlation matrices.
pub fn pcd(real: &TraceDataset, synth: &TraceDataset) -> Result<f64, MetricError> {
    if real.records.len() < 2 || synth.records.len() < 2 {
        return Err(MetricError::InsufficientData(
            "correlation needs at least two records per side".into(),
        ));
    }
    let a = correlation3(&ln_numeric_rows(&real.records));
    let b = correlation3(&ln_numeric_rows(&synth.records));
    let mut sq = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = a[i][j] - b[i][j];
            sq += d * d;
        }
    }
    Ok(sq.sqrt())
}

fn field_values(records: &[TraceRecord], f: usize) -> Vec<String> {
    records
        .iter()
        .map(|r| match f {
            0 => r.src_ip.clone(),
            1 => r.dst_ip.clone(),
            2 => r.protocol.clone(),
            3 => r.src_port.to_string(),
            4 => r.dst_port.to_string(),
            _ => unreachable!(),
        })
        .collect()
}

/// Mean over the ten unordered categorical column pairs of the L1
/// distance between the two joint empirical distributions.
pub fn cmd(real: &TraceDataset, synth: &TraceDataset) -> Result<f64, MetricError> {
    if real.records.is_empty() || synth.records.is_empty() {
        return Err(MetricError::InsufficientData(
            "joint tables need at least one record per side".into(),
        ));
    }
    let real_cols: Vec<Vec<String>> = (0..5).map(|f| field_values(&real.records, f)).collect();
    let synth_cols: Vec<Vec<String>> = (0..5).map(|f| field_values(&synth.records, f)).collect();
    fn joint<'a>(a: &'a [String], b: &'a [String]) -> BTreeMap<(&'a str, &'a str), f64> {
        let mut m: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for (x, y) in a.iter().zip(b) {
            *m.entry((x, y)).or_insert(0.0) += 1.0;
        }
        let n = a.len() as f64;
        m.values_mut().for_each(|v| *v /= n);
        m
    }
    let mut total = 0.0;
    let mut pairs = 0.0;
    for a in 0..5 {
        for b in (a + 1)..5 {
            let p = joint(&real_cols[a], &real_cols[b]);
            let q = joint(&synth_cols[a], &synth_cols[b]);
            let mut cells: BTreeSet<(&str, &str)> = p.keys().copied().collect();
            cells.extend(q.keys().copied());
            let mut l1 = 0.0;
            for cell in cells {
                l1 += (p.get(&cell).copied().unwrap_or(0.0)
                    - q.get(&cell).copied().unwrap_or(0.0))
                .abs();
            }
            total += l1;
            pairs += 1.0;
        }
    }
    Ok(total / pairs)
}

/// k-NN manifold estimates on arbitrary point clouds. Each synthetic
/// point gets a ball reaching its k-th nearest synthetic neighbor
/// (excluding itself); density is the mean over real points of the number
/// of balls containing them over k, coverage the fraction of real points
/// inside at least one ball.
pub fn density_coverage_points(
    real: &[Vec<f64>],
    synth: &[Vec<f64>],
    k: usize,
) -> Result<(f64, f64), MetricError> {
    if k == 0 {
        return Err(MetricError::TooFewPoints { need: 1, have: 0 });
    }
    if synth.len() < k + 1 {
        return Err(MetricError::TooFewPoints {
            need: k + 1,
            have: synth.len(),
        });
    }
    if real.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let d2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let radii_sq: Vec<f64> = synth
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut dists: Vec<f64> = synth
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, t)| d2(s, t))
                .collect();
            let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect();
    let mut density_sum = 0.0;
    let mut covered = 0usize;
    for x in real {
        let mut inside = 0usize;
        for (s, r2) in synth.iter().zip(&radii_sq) {
            if d2(x, s) <= *r2 {
                inside += 1;
            }
        }
        density_sum += inside as f64 / k as f64;
        covered += usize::from(inside > 0);
    }
    Ok((
        density_sum / real.len() as f64,
        covered as f64 / real.len() as f64,
    ))
}

/// Embeds records in a shared space: ln-numerics standardized by the
/// real sample's statistics, categorical fields one-hot over the union
/// of observed values.
fn embed_records(real: &[TraceRecord], synth: &[TraceRecord]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let real_num = ln_numeric_rows(real);
    let synth_num = ln_numeric_rows(synth);
    let n = real_num.len() as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for r in &real_num {
        for c in 0..3 {
            mean[c] += r[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for r in &real_num {
        for c in 0..3 {
            std[c] += (r[c] - mean[c]) * (r[c] - mean[c]);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt().max(1e-9);
    }

    let mut universes: Vec<BTreeMap<String, usize>> = Vec::with_capacity(5);
    for f in 0..5 {
        let mut u: BTreeMap<String, usize> = BTreeMap::new();
        for v in field_values(real, f).into_iter().chain(field_values(synth, f)) {
            let next = u.len();
            u.entry(v).or_insert(next);
        }
        universes.push(u);
    }
    let onehot_dim: usize = universes.iter().map(BTreeMap::len).sum();

    let embed = |records: &[TraceRecord], nums: &[[f64; 3]]| -> Vec<Vec<f64>> {
        records
            .iter()
            .zip(nums)
            .map(|(r, num)| {
                let mut v = Vec::with_capacity(3 + onehot_dim);
                for c in 0..3 {
                    v.push((num[c] - mean[c]) / std[c]);
                }
                let mut offset = 3;
                for (f, u) in universes.iter().enumerate() {
                    let val = match f {
                        0 => r.src_ip.clone(),
                        1 => r.dst_ip.clone(),
                        2 => r.protocol.clone(),
                        3 => r.src_port.to_string(),
                        _ => r.dst_port.to_string(),
                    };
                    let mut hot = vec![0.0; u.len()];
                    hot[u[&val]] = 1.0;
                    v.extend_from_slice(&hot);
                    offset += u.len();
                }
                debug_assert_eq!(v.len(), offset);
                v
            })
            .collect()
    };
    (embed(real, &real_num), embed(synth, &synth_num))
}

/// Density and coverage of a synthetic dataset against a real one.
pub fn density_coverage(
    real: &TraceDataset,
    synth: &TraceDataset,
    k: usize,
) -> Result<(f64, f64), MetricError> {
    let (re, se) = embed_records(&real.records, &synth.records);
    density_coverage_points(&re, &se, k)
}

/// Per-record discretization for the disclosure metric: categorical
/// fields verbatim, numeric fields as decile indices of the training
/// sample's distribution.
fn discretize(
    records: &[TraceRecord],
    bounds: &[[f64; 9]; 5],
    codes: &[BTreeMap<String, u32>; 5],
) -> Vec<[u32; 10]> {
    let bucket = |v: f64, b: &[f64; 9]| -> u32 { b.iter().filter(|x| v > **x).count() as u32 };
    records
        .iter()
        .map(|r| {
            let cat = |f: usize, v: &str| codes[f].get(v).copied().unwrap_or(u32::MAX);
            [
                cat(0, &r.src_ip),
                cat(1, &r.dst_ip),
                cat(2, &r.protocol),
                cat(3, &r.src_port.to_string()),
                cat(4, &r.dst_port.to_string()),
                bucket(r.bytes_in as f64, &bounds[0]),
                bucket(r.bytes_out as f64, &bounds[1]),
                bucket(r.packets_in as f64, &bounds[2]),
                bucket(r.packets_out as f64, &bounds[3]),
                bucket(r.duration, &bounds[4]),
            ]
        })
        .collect()
}

fn decile_bounds(mut values: Vec<f64>) -> [f64; 9] {
    values.sort_by(f64::total_cmp);
    let mut b = [0.0; 9];
    for (i, slot) in b.iter_mut().enumerate() {
        *slot = quantile_sorted(&values, (i + 1) as f64 / 10.0);
    }
    b
}

/// Mean over synthetic records of the minimum Hamming distance, over ten
/// discretized fields, to any training record. 0 means every synthetic
/// record is an exact (discretized) copy of a training record.
pub fn membership_disclosure(
    synth: &TraceDataset,
    train: &TraceDataset,
) -> Result<f64, MetricError> {
    if synth.records.is_empty() || train.records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let bounds = [
        decile_bounds(train.records.iter().map(|r| r.bytes_in as f64).collect()),
        decile_bounds(train.records.iter().map(|r| r.bytes_out as f64).collect()),
        decile_bounds(train.records.iter().map(|r| r.packets_in as f64).collect()),
        decile_bounds(train.records.iter().map(|r| r.packets_out as f64).collect()),
        decile_bounds(train.records.iter().map(|r| r.duration).collect()),
    ];
    let mut codes: [BTreeMap<String, u32>; 5] = Default::default();
    for f in 0..5 {
        for v in field_values(&train.records, f) {
            let next = codes[f].len() as u32;
            codes[f].entry(v).or_insert(next);
        }
    }
    let train_rows = discretize(&train.records, &bounds, &codes);
    let synth_rows = discretize(&synth.records, &bounds, &codes);
    let mut total = 0u64;
    for s in &synth_rows {
        let mut best = 10u64;
        for t in &train_rows {
            let d = s.iter().zip(t).filter(|(a, b)| a != b).count() as u64;
            if d < best {
                best = d;
                if best == 0 {
                    break;
                }
            }
        }
        total += best;
    }
    Ok(total as f64 / synth_rows.len() as f64)
}

/// Linear-interpolation quantile of a sorted sample at probability `p`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Matched empirical quantiles of two samples at `n_quantiles` evenly
/// spaced probabilities in (0, 1).
pub fn qq_points(
    real: &[f64],
    synth: &[f64],
    n_quantiles: usize,
) -> Result<Vec<(f64, f64)>, MetricError> {
    if real.is_empty() || synth.is_empty() || n_quantiles == 0 {
        return Err(MetricError::EmptyInput);
    }
    let mut r = real.to_vec();
    let mut s = synth.to_vec();
    r.sort_by(f64::total_cmp);
    s.sort_by(f64::total_cmp);
    Ok((1..=n_quantiles)
        .map(|j| {
            let p = j as f64 / (n_quantiles + 1) as f64;
            (quantile_sorted(&r, p), quantile_sorted(&s, p))
        })
        .collect())
}

/// Event counts by hour of day and by weekday (Monday first), UTC.
pub fn seasonal_histograms(ds: &TraceDataset) -> ([u64; 24], [u64; 7]) {
    let mut hours = [0u64; 24];
    let mut weekdays = [0u64; 7];
    for r in &ds.records {
        hours[hour_of_day(r.timestamp)] += 1;
        weekdays[weekday_of(r.timestamp)] += 1;
    }
    (hours, weekdays)
}

/// The `top_n` most frequent source/destination pairs with their fraction
/// of all records; count ties are broken lexicographically.
pub fn host_pair_distribution(
    ds: &TraceDataset,
    top_n: usize,
) -> Vec<((String, String), f64)> {
    let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for r in &ds.records {
        *counts
            .entry((r.src_ip.as_str(), r.dst_ip.as_str()))
            .or_insert(0) += 1;
    }
    let total = ds.records.len() as f64;
    let mut ranked: Vec<((&str, &str), u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(top_n)
        .map(|((s, d), c)| ((s.to_string(), d.to_string()), c as f64 / total))
        .collect()
}

/// Inter-arrival times of consecutive records; length is one less than
/// the record count.
pub fn inter_arrivals(ds: &TraceDataset) -> Vec<f64> {
    ds.records
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .collect()
}

fn stride_sample(records: &[TraceRecord], cap: usize) -> Vec<TraceRecord> {
    if records.len() <= cap {
        return records.to_vec();
    }
    let stride = records.len().div_ceil(cap);
    records.iter().step_by(stride).cloned().collect()
}

/// Runs the full metric battery of one synthetic dataset against a real
/// one. The quadratic metrics run on an evenly strided subsample once
/// either side exceeds [`QUADRATIC_SAMPLE_CAP`]; call the individual
/// metric functions directly for exact values on large data.
pub fn evaluate(real: &TraceDataset, synth: &TraceDataset) -> Result<MetricReport, MetricError> {
    if real.kind != synth.kind {
        return Err(MetricError::KindMismatch);
    }
    if real.records.len() < 2 || synth.records.len() < 2 {
        return Err(MetricError::InsufficientData(
            "evaluation needs at least two records per side".into(),
        ));
    }

    let mut jsd_map = BTreeMap::new();
    for (f, name) in CATEGORICAL_FIELDS.iter().enumerate() {
        let rv = field_values(&real.records, f);
        let sv = field_values(&synth.records, f);
        jsd_map.insert(name.to_string(), jsd(&rv, &sv)?);
    }

    let hour = |ds: &TraceDataset| -> Vec<f64> {
        ds.records
            .iter()
            .map(|r| hour_of_day(r.timestamp) as f64)
            .collect()
    };
    let weekday = |ds: &TraceDataset| -> Vec<f64> {
        ds.records
            .iter()
            .map(|r| weekday_of(r.timestamp) as f64)
            .collect()
    };
    let durations = |ds: &TraceDataset| -> Vec<f64> {
        ds.records.iter().map(|r| r.duration).collect()
    };
    let sizes = |ds: &TraceDataset| -> Vec<f64> {
        ds.records.iter().map(|r| r.size() as f64).collect()
    };
    let mut emd_map = BTreeMap::new();
    emd_map.insert(
        "inter_arrival".to_string(),
        emd_1d(&inter_arrivals(real), &inter_arrivals(synth))?,
    );
    emd_map.insert("hour_of_day".to_string(), emd_1d(&hour(real), &hour(synth))?);
    emd_map.insert(
        "weekday".to_string(),
        emd_1d(&weekday(real), &weekday(synth))?,
    );
    emd_map.insert(
        "duration".to_string(),
        emd_1d(&durations(real), &durations(synth))?,
    );
    emd_map.insert("size".to_string(), emd_1d(&sizes(real), &sizes(synth))?);

    let pcd_v = pcd(real, synth)?;
    let cmd_v = cmd(real, synth)?;

    let real_sub = TraceDataset::new(real.kind, stride_sample(&real.records, QUADRATIC_SAMPLE_CAP));
    let synth_sub =
        TraceDataset::new(synth.kind, stride_sample(&synth.records, QUADRATIC_SAMPLE_CAP));
    // tiny synthetic samples get a smaller neighbor count instead of an error
    let k = DEFAULT_KNN_K.min(synth_sub.records.len() - 1);
    let (density, coverage) = density_coverage(&real_sub, &synth_sub, k)?;
    let md = membership_disclosure(&synth_sub, &real_sub)?;

    Ok(MetricReport {
        real_records: real.records.len(),
        synth_records: synth.records.len(),
        jsd: jsd_map,
        emd: emd_map,
        pcd: pcd_v,
        cmd: cmd_v,
        density,
        coverage,
        membership_disclosure: md,
        knn_k: k,
        quadratic_sample: (real_sub.records.len(), synth_sub.records.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TraceKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn record(
        timestamp: f64,
        src_ip: &str,
        dst_ip: &str,
        protocol: &str,
        src_port: u16,
        dst_port: u16,
        bytes: (u64, u64),
        packets: (u64, u64),
        duration: f64,
    ) -> TraceRecord {
        TraceRecord {
            timestamp,
            src_ip: src_ip.into(),
            dst_ip: dst_ip.into(),
            protocol: protocol.into(),
            src_port,
            dst_port,
            bytes_in: bytes.0,
            bytes_out: bytes.1,
            packets_in: packets.0,
            packets_out: packets.1,
            duration,
            tcp_flags: None,
        }
    }

    /// Varied little dataset: three host pairs, two protocols, a spread
    /// of sizes and gaps.
    fn sample_dataset(n: usize) -> TraceDataset {
        let pairs = [
            ("192.168.1.10", "10.0.0.1", "TCP", 44123u16, 443u16),
            ("192.168.1.11", "10.0.0.2", "UDP", 51000, 53),
            ("192.168.1.10", "10.0.0.3", "TCP", 44124, 80),
        ];
        let records = (0..n)
            .map(|i| {
                let (s, d, proto, sp, dp) = pairs[i % 3];
                record(
                    1_700_000_000.0 + i as f64 * 1.375 + (i % 5) as f64 * 0.01,
                    s,
                    d,
                    proto,
                    sp,
                    dp,
                    (200 + (i as u64 % 17) * 90, 100 + (i as u64 % 7) * 55),
                    (2 + i as u64 % 5, 1 + i as u64 % 3),
                    0.05 + (i % 11) as f64 * 0.3,
                )
            })
            .collect();
        TraceDataset::new(TraceKind::Flow, records)
    }

    fn random_sample(rng: &mut ChaCha12Rng, n: usize, alphabet: &[&str]) -> Vec<String> {
        (0..n)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string())
            .collect()
    }

    #[test]
    fn jsd_of_identical_samples_is_zero() {
        let xs = vec!["a", "b", "b", "c", "c", "c"];
        assert_eq!(jsd(&xs, &xs).unwrap(), 0.0);
    }

    #[test]
    fn jsd_of_disjoint_singletons_is_one_bit() {
        let p = vec!["x"; 4];
        let q = vec!["y"; 3];
        assert_eq!(jsd(&p, &q).unwrap(), 1.0);
    }

    #[test]
    fn jsd_matches_a_frozen_hand_case() {
        // p: a,a,a,b,b,c  q: a,b,b,b,c,c,d,d
        let p = vec!["a", "a", "a", "b", "b", "c"];
        let q = vec!["a", "b", "b", "b", "c", "c", "d", "d"];
        let d = jsd(&p, &q).unwrap();
        assert!((d - 0.21883394466391509).abs() < 1e-15, "jsd {d}");
    }

    #[test]
    fn jsd_is_symmetric_and_bounded_on_random_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let m = rng.random_range(1..40);
            let p = random_sample(&mut rng, n, &["a", "b", "c", "d", "e"]);
            let q = random_sample(&mut rng, m, &["c", "d", "e", "f"]);
            let ab = jsd(&p, &q).unwrap();
            let ba = jsd(&q, &p).unwrap();
            assert!((ab - ba).abs() < 1e-15);
            assert!((0.0..=1.0 + 1e-12).contains(&ab), "out of range: {ab}");
        }
    }

    /// Exact optimal transport between two 1-D empirical measures by
    /// northwest-corner flows on integer masses: each x point carries m
    /// units, each y point n units, out of n*m total.
    fn transport_cost(x: &[f64], y: &[f64]) -> f64 {
        let mut xs = x.to_vec();
        let mut ys = y.to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let (n, m) = (xs.len() as u64, ys.len() as u64);
        let (mut i, mut j) = (0usize, 0usize);
        let (mut rx, mut ry) = (m, n);
        let mut cost = 0.0;
        while i < xs.len() && j < ys.len() {
            let f = rx.min(ry);
            cost += f as f64 * (xs[i] - ys[j]).abs();
            rx -= f;
            ry -= f;
            if rx == 0 {
                i += 1;
                rx = m;
            }
            if ry == 0 {
                j += 1;
                ry = n;
            }
        }
        cost / (n * m) as f64
    }

    #[test]
    fn emd_of_identical_samples_is_zero() {
        let xs = vec![3.0, 1.0, 4.0, 1.5, 9.0];
        assert_eq!(emd_1d(&xs, &xs).unwrap(), 0.0);
    }

    #[test]
    fn emd_of_a_translation_is_the_shift() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..64).map(|_| rng.random_range(-4.0..4.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + 2.5).collect();
        let d = emd_1d(&xs, &ys).unwrap();
        assert!((d - 2.5).abs() < 1e-12, "emd {d}");
    }

    #[test]
    fn emd_between_matched_uniform_grids_is_half() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let d = emd_1d(&xs, &ys).unwrap();
        assert!((d - 0.5).abs() < 1e-12, "emd {d}");
    }

    #[test]
    fn emd_matches_exact_transport_on_random_unequal_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..40 {
            let n = rng.random_range(1..30);
            let m = rng.random_range(1..30);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let ys: Vec<f64> = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
            let got = emd_1d(&xs, &ys).unwrap();
            let want = transport_cost(&xs, &ys);
            assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        }
    }

    #[test]
    fn emd_satisfies_the_triangle_inequality() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..30 {
            let draw = |rng: &mut ChaCha12Rng| -> Vec<f64> {
                let n = rng.random_range(1..25);
                (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
            };
            let (x, y, z) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let xz = emd_1d(&x, &z).unwrap();
            let xy = emd_1d(&x, &y).unwrap();
            let yz = emd_1d(&y, &z).unwrap();
            assert!(xz <= xy + yz + 1e-9, "{xz} > {xy} + {yz}");
        }
    }

    #[test]
    fn pcd_of_a_dataset_with_itself_is_zero() {
        let ds = sample_dataset(40);
        assert_eq!(pcd(&ds, &ds).unwrap(), 0.0);
    }

    #[test]
    fn pcd_matches_a_frozen_hand_case() {
        let real = TraceDataset::new(
            TraceKind::Flow,
            vec![
                record(100.0, "a", "b", "TCP", 1, 2, (500, 0), (1, 1), 0.25),
                record(101.5, "a", "b", "TCP", 1, 2, (900, 0), (1, 1), 0.10),
                record(101.9, "a", "b", "TCP", 1, 2, (120, 0), (1, 1), 1.70),
                record(104.0, "a", "b", "TCP", 1, 2, (4000, 0), (1, 1), 0.02),
                record(104.1, "a", "b", "TCP", 1, 2, (650, 0), (1, 1), 0.90),
                record(107.3, "a", "b", "TCP", 1, 2, (75, 0), (1, 1), 0.40),
            ],
        );
        let synth = TraceDataset::new(
            TraceKind::Flow,
            vec![
                record(200.0, "a", "b", "TCP", 1, 2, (480, 0), (1, 1), 0.30),
                record(200.3, "a", "b", "TCP", 1, 2, (2500, 0), (1, 1), 0.05),
                record(202.8, "a", "b", "TCP", 1, 2, (310, 0), (1, 1), 2.10),
                record(203.2, "a", "b", "TCP", 1, 2, (900, 0), (1, 1), 0.01),
                record(206.9, "a", "b", "TCP", 1, 2, (66, 0), (1, 1), 1.30),
                record(207.0, "a", "b", "TCP", 1, 2, (1400, 0), (1, 1), 0.70),
            ],
        );
        let d = pcd(&real, &synth).unwrap();
        assert!((d - 0.49007897216138818).abs() < 1e-12, "pcd {d}");
    }

    #[test]
    fn pcd_stays_finite_when_a_column_is_constant() {
        let flat = TraceDataset::new(
            TraceKind::Flow,
            (0..10)
                .map(|i| record(i as f64, "a", "b", "TCP", 1, 2, (100, 0), (1, 1), 0.5))
                .collect(),
        );
        let d = pcd(&flat, &sample_dataset(10)).unwrap();
        assert!(d.is_finite());
        assert_eq!(pcd(&flat, &flat).unwrap(), 0.0);
    }

    #[test]
    fn cmd_of_a_dataset_with_itself_is_zero() {
        let ds = sample_dataset(30);
        assert_eq!(cmd(&ds, &ds).unwrap(), 0.0);
    }

    #[test]
    fn cmd_of_fully_disjoint_datasets_is_two() {
        let a = TraceDataset::new(
            TraceKind::Flow,
            (0..3)
                .map(|i| record(i as f64, "10.0.0.1", "10.0.0.2", "TCP", 80, 443, (1, 1), (1, 1), 0.1))
                .collect(),
        );
        let b = TraceDataset::new(
            TraceKind::Flow,
            (0..4)
                .map(|i| {
                    record(i as f64, "192.168.0.1", "192.168.0.9", "UDP", 53, 5353, (1, 1), (1, 1), 0.1)
                })
                .collect(),
        );
        assert_eq!(cmd(&a, &b).unwrap(), 2.0);
    }

    /// Rebuilds one column pair's L1 distance from scratch: collect the
    /// distinct cells by sorting, then count each side with a linear scan.
    fn pair_l1(a: &[(String, String)], b: &[(String, String)]) -> f64 {
        let mut cells: Vec<&(String, String)> = a.iter().chain(b).collect();
        cells.sort();
        cells.dedup();
        cells
            .into_iter()
            .map(|c| {
                let pa = a.iter().filter(|x| *x == c).count() as f64 / a.len() as f64;
                let pb = b.iter().filter(|x| *x == c).count() as f64 / b.len() as f64;
                (pa - pb).abs()
            })
            .sum()
    }

    #[test]
    fn cmd_matches_a_scan_based_reference() {
        let real = sample_dataset(21);
        let synth = {
            let mut ds = sample_dataset(17);
            ds.records[3].protocol = "ICMP".into();
            ds.records[5].dst_port = 8080;
            ds.records[8].src_ip = "192.168.1.77".into();
            ds
        };
        let mut total = 0.0;
        for a in 0..5usize {
            for b in (a + 1)..5 {
                let col = |ds: &TraceDataset, f: usize| field_values(&ds.records, f);
                let ra: Vec<(String, String)> = col(&real, a)
                    .into_iter()
                    .zip(col(&real, b))
                    .collect();
                let sa: Vec<(String, String)> = col(&synth, a)
                    .into_iter()
                    .zip(col(&synth, b))
                    .collect();
                total += pair_l1(&ra, &sa);
            }
        }
        let want = total / 10.0;
        let got = cmd(&real, &synth).unwrap();
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");
    }

    /// Full-sort k-NN reference for density and coverage.
    fn dc_reference(real: &[Vec<f64>], synth: &[Vec<f64>], k: usize) -> (f64, f64) {
        let d2 = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let radii: Vec<f64> = synth
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let mut ds: Vec<f64> = synth
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != j)
                    .map(|(_, t)| d2(s, t))
                    .collect();
                ds.sort_by(f64::total_cmp);
                ds[k - 1]
            })
            .collect();
        let mut density = 0.0;
        let mut covered = 0;
        for x in real {
            let inside = synth
                .iter()
                .zip(&radii)
                .filter(|(s, r2)| d2(x, s) <= **r2)
                .count();
            density += inside as f64 / k as f64;
            if inside > 0 {
                covered += 1;
            }
        }
        (density / real.len() as f64, covered as f64 / real.len() as f64)
    }

    #[test]
    fn identical_point_clouds_have_full_coverage() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (density, coverage) = density_coverage_points(&pts, &pts, 5).unwrap();
        assert_eq!(coverage, 1.0);
        assert!(density >= 1.0 / 5.0);
    }

    #[test]
    fn distant_synthetic_points_cover_nothing() {
        let real: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.01, 0.0]).collect();
        let synth: Vec<Vec<f64>> = (0..20).map(|i| vec![1e6 + i as f64 * 0.01, 0.0]).collect();
        let (density, coverage) = density_coverage_points(&real, &synth, 5).unwrap();
        assert_eq!(density, 0.0);
        assert_eq!(coverage, 0.0);
    }

    #[test]
    fn density_and_coverage_match_the_full_sort_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for _ in 0..10 {
            let cloud = |rng: &mut ChaCha12Rng, center: f64, n: usize| -> Vec<Vec<f64>> {
                (0..n)
                    .map(|_| (0..3).map(|_| center + rng.random_range(-1.0..1.0)).collect())
                    .collect()
            };
            let real = cloud(&mut rng, 0.0, 50);
            let synth = cloud(&mut rng, 0.3, 50);
            let (d, c) = density_coverage_points(&real, &synth, 5).unwrap();
            let (dr, cr) = dc_reference(&real, &synth, 5);
            assert_eq!(d, dr);
            assert_eq!(c, cr);
            assert!(c >= 0.8, "overlapping clouds should mostly cover: {c}");
        }
    }

    #[test]
    fn too_small_synthetic_sample_is_rejected() {
        let pts: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        match density_coverage_points(&pts, &pts, 5) {
            Err(MetricError::TooFewPoints { need: 6, have: 4 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn disclosure_of_the_training_set_itself_is_zero() {
        let ds = sample_dataset(35);
        assert_eq!(membership_disclosure(&ds, &ds).unwrap(), 0.0);
    }

    #[test]
    fn disclosure_is_ten_when_every_field_differs() {
        let train = TraceDataset::new(
            TraceKind::Flow,
            (0..6)
                .map(|i| record(i as f64, "a", "b", "TCP", 1, 2, (10, 10), (1, 1), 0.5))
                .collect(),
        );
        let synth = TraceDataset::new(
            TraceKind::Flow,
            (0..4)
                .map(|i| {
                    record(
                        i as f64,
                        "x",
                        "y",
                        "UDP",
                        9,
                        8,
                        (1_000_000_000, 2_000_000_000),
                        (500_000, 600_000),
                        1e9,
                    )
                })
                .collect(),
        );
        assert_eq!(membership_disclosure(&synth, &train).unwrap(), 10.0);
    }

    /// Binary-search bucketing and a no-early-exit double loop: the
    /// independent disclosure reference.
    fn md_reference(synth: &TraceDataset, train: &TraceDataset) -> f64 {
        let numeric = |r: &TraceRecord| -> [f64; 5] {
            [
                r.bytes_in as f64,
                r.bytes_out as f64,
                r.packets_in as f64,
                r.packets_out as f64,
                r.duration,
            ]
        };
        let bounds: Vec<[f64; 9]> = (0..5)
            .map(|c| decile_bounds(train.records.iter().map(|r| numeric(r)[c]).collect()))
            .collect();
        let key = |r: &TraceRecord| -> Vec<String> {
            let mut k = vec![
                r.src_ip.clone(),
                r.dst_ip.clone(),
                r.protocol.clone(),
                r.src_port.to_string(),
                r.dst_port.to_string(),
            ];
            for (c, b) in bounds.iter().enumerate() {
                let v = numeric(r)[c];
                k.push(b.partition_point(|x| v > *x).to_string());
            }
            k
        };
        let train_keys: Vec<Vec<String>> = train.records.iter().map(key).collect();
        let mut total = 0usize;
        for s in &synth.records {
            let sk = key(s);
            let best = train_keys
                .iter()
                .map(|tk| sk.iter().zip(tk).filter(|(a, b)| a != b).count())
                .min()
                .unwrap();
            total += best;
        }
        total as f64 / synth.records.len() as f64
    }

    #[test]
    fn disclosure_matches_the_binary_search_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..5 {
            let randomized = |rng: &mut ChaCha12Rng, n: usize| -> TraceDataset {
                let ips = ["h1", "h2", "h3"];
                let records = (0..n)
                    .map(|i| {
                        record(
                            i as f64,
                            ips[rng.random_range(0..3)],
                            ips[rng.random_range(0..3)],
                            if rng.random_bool(0.5) { "TCP" } else { "UDP" },
                            rng.random_range(1..4),
                            rng.random_range(1..4),
                            (rng.random_range(0..5000), rng.random_range(0..5000)),
                            (rng.random_range(0..50), rng.random_range(0..50)),
                            rng.random_range(0.0..10.0),
                        )
                    })
                    .collect();
                TraceDataset::new(TraceKind::Flow, records)
            };
            let train = randomized(&mut rng, 25);
            let synth = randomized(&mut rng, 25);
            let got = membership_disclosure(&synth, &train).unwrap();
            let want = md_reference(&synth, &train);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn qq_points_of_identical_samples_sit_on_the_diagonal() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..100.0)).collect();
        for (a, b) in qq_points(&xs, &xs, 9).unwrap() {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn qq_points_of_a_doubled_sample_have_slope_two() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..33).map(|_| rng.random_range(0.0..8.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        for (a, b) in qq_points(&xs, &ys, 7).unwrap() {
            assert!((b - 2.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn nine_sample_quantiles_are_exact_order_statistics() {
        // n = 9, p = 1/4, 2/4, 3/4 land exactly on sorted indices 2, 4, 6
        let xs = vec![5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0, 4.0, 6.0];
        let ys: Vec<f64> = xs.iter().map(|x| x * 10.0).collect();
        let pts = qq_points(&xs, &ys, 3).unwrap();
        assert_eq!(pts, vec![(3.0, 30.0), (5.0, 50.0), (7.0, 70.0)]);
    }

    #[test]
    fn seasonal_histograms_land_in_the_right_buckets() {
        // 2024-01-01 is a Monday; 10:00 UTC plus a few minutes
        let base = 1_704_103_200.0;
        let ds = TraceDataset::new(
            TraceKind::Flow,
            (0..12)
                .map(|i| record(base + i as f64 * 60.0, "a", "b", "TCP", 1, 2, (1, 1), (1, 1), 0.1))
                .collect(),
        );
        let (hours, weekdays) = seasonal_histograms(&ds);
        assert_eq!(hours[10], 12);
        assert_eq!(hours.iter().sum::<u64>(), 12);
        assert_eq!(weekdays[0], 12);
        assert_eq!(weekdays.iter().sum::<u64>(), 12);
    }

    #[test]
    fn a_uniform_week_fills_every_weekday_equally() {
        // one event every 6 hours for exactly 7 days
        let base = 1_704_067_200.0;
        let ds = TraceDataset::new(
            TraceKind::Flow,
            (0..28)
                .map(|i| {
                    record(base + i as f64 * 21_600.0, "a", "b", "TCP", 1, 2, (1, 1), (1, 1), 0.1)
                })
                .collect(),
        );
        let (hours, weekdays) = seasonal_histograms(&ds);
        assert_eq!(weekdays, [4; 7]);
        assert_eq!(hours.iter().sum::<u64>(), 28);
    }

    #[test]
    fn host_pairs_rank_by_count_then_name() {
        let mk = |s: &str, d: &str, i: usize| {
            record(i as f64, s, d, "TCP", 1, 2, (1, 1), (1, 1), 0.1)
        };
        let ds = TraceDataset::new(
            TraceKind::Flow,
            vec![
                mk("a", "x", 0),
                mk("a", "x", 1),
                mk("a", "x", 2),
                mk("b", "y", 3),
                mk("b", "y", 4),
                mk("c", "z", 5),
            ],
        );
        let top = host_pair_distribution(&ds, 2);
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].0, ("a".to_string(), "x".to_string()));
        assert_eq!(top[0].1, 0.5);
        assert_eq!(top[1].0, ("b".to_string(), "y".to_string()));
        assert!((top[1].1 - 2.0 / 6.0).abs() < 1e-15);

        let all = host_pair_distribution(&ds, 10);
        assert_eq!(all.len(), 3);
        assert_eq!(all[2].0, ("c".to_string(), "z".to_string()));

        // tie between (b,y) and (c,z) resolves lexicographically
        let tied = TraceDataset::new(
            TraceKind::Flow,
            vec![mk("c", "z", 0), mk("b", "y", 1)],
        );
        let r = host_pair_distribution(&tied, 2);
        assert_eq!(r[0].0, ("b".to_string(), "y".to_string()));
    }

    #[test]
    fn evaluating_a_dataset_against_itself_is_exact() {
        let ds = sample_dataset(60);
        let report = evaluate(&ds, &ds).unwrap();
        for (field, v) in &report.jsd {
            assert_eq!(*v, 0.0, "jsd[{field}]");
        }
        for (feature, v) in &report.emd {
            assert_eq!(*v, 0.0, "emd[{feature}]");
        }
        assert_eq!(report.pcd, 0.0);
        assert_eq!(report.cmd, 0.0);
        assert_eq!(report.coverage, 1.0);
        assert_eq!(report.membership_disclosure, 0.0);
        assert_eq!(report.real_records, 60);
        assert_eq!(report.synth_records, 60);
        assert_eq!(report.quadratic_sample, (60, 60));
        assert_eq!(report.knn_k, DEFAULT_KNN_K);
    }

    #[test]
    fn evaluation_subsamples_the_quadratic_metrics_past_the_cap() {
        let ds = sample_dataset(9_000);
        let report = evaluate(&ds, &ds).unwrap();
        assert_eq!(report.quadratic_sample, (3_000, 3_000));
        assert_eq!(report.coverage, 1.0);
        assert_eq!(report.membership_disclosure, 0.0);
        assert_eq!(report.emd["inter_arrival"], 0.0);
    }

    #[test]
    fn evaluation_rejects_mismatched_kinds() {
        let flow = sample_dataset(10);
        let mut packet = sample_dataset(10);
        packet.kind = TraceKind::Packet;
        assert!(matches!(
            evaluate(&flow, &packet),
            Err(MetricError::KindMismatch)
        ));
    }

    #[test]
    fn evaluation_shrinks_the_neighbor_count_for_tiny_inputs() {
        let ds = sample_dataset(3);
        let report = evaluate(&ds, &ds).unwrap();
        assert_eq!(report.knn_k, 2);
        assert_eq!(report.coverage, 1.0);
    }

    #[test]
    fn report_keys_cover_the_modelled_fields() {
        let report = evaluate(&sample_dataset(12), &sample_dataset(12)).unwrap();
        let jsd_keys: Vec<&str> = report.jsd.keys().map(String::as_str).collect();
        assert_eq!(
            jsd_keys,
            vec!["dst_ip", "dst_port", "protocol", "src_ip", "src_port"]
        );
        let emd_keys: Vec<&str> = report.emd.keys().map(String::as_str).collect();
        assert_eq!(
            emd_keys,
            vec!["duration", "hour_of_day", "inter_arrival", "size", "weekday"]
        );
    }

    proptest! {
        #[test]
        fn emd_is_symmetric_and_nonnegative(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..40),
            ys in proptest::collection::vec(-50.0f64..50.0, 1..40),
        ) {
            let ab = emd_1d(&xs, &ys).unwrap();
            let ba = emd_1d(&ys, &xs).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn jsd_never_leaves_the_unit_interval(
            p in proptest::collection::vec(0u8..6, 1..50),
            q in proptest::collection::vec(0u8..6, 1..50),
        ) {
            let d = jsd(&p, &q).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert!(d <= 1.0 + 1e-12);
        }
    }
}
