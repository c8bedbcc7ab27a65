//! Recurrent history encoder, time features, and event embedding.
//!
//! A single gated recurrence layer (LSTM) summarizes the event history
//! into a fixed-length hidden vector. Weights are packed row-major with
//! the four gates stacked in the order input, forget, cell, output, so a
//! step is two matrix-vector products. The module also owns the seasonal
//! metadata features and the assembly of encoder input vectors from
//! encoded events.

use crate::ingest::{weekday_of, EncodedEvent};
use crate::linalg::{matvec_add, matvec_t_add, outer_add};

/// Length of [`metadata_vector`] without extras: sin/cos hour, sin/cos
/// weekday, one-hot weekday.
pub const METADATA_DIM: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

/// Zero state. The hidden dimension must be at least 1.
pub fn init_state(h: usize) -> HistoryState {
    assert!(h >= 1, "hidden dimension must be >= 1");
    HistoryState {
        hidden: vec![0.0; h],
        cell: vec![0.0; h],
    }
}

/// LSTM weights viewed over external storage. `w_x` is `(4H x In)`,
/// `w_h` is `(4H x H)`, `b` is `4H`; gate rows are stacked
/// input/forget/cell/output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_x: &'a [f64],
    pub w_h: &'a [f64],
    pub b: &'a [f64],
}

pub struct LstmGrads<'a> {
    pub w_x: &'a mut [f64],
    pub w_h: &'a mut [f64],
    pub b: &'a mut [f64],
}

/// Everything the backward pass needs about one step.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One recurrence step; the input state is untouched.
pub fn step(w: &LstmWeights, state: &HistoryState, x: &[f64]) -> HistoryState {
    step_cached(w, state, x).0
}

pub fn step_cached(w: &LstmWeights, state: &HistoryState, x: &[f64]) -> (HistoryState, StepCache) {
    let h = w.hidden;
    assert_eq!(x.len(), w.input_dim, "encoder input width mismatch");
    assert_eq!(state.hidden.len(), h);
    assert_eq!(state.cell.len(), h);

    let mut a = w.b.to_vec();
    matvec_add(w.w_x, x, &mut a, 4 * h, w.input_dim);
    matvec_add(w.w_h, &state.hidden, &mut a, 4 * h, h);

    let mut i = vec![0.0; h];
    let mut f = vec![0.0; h];
    let mut g = vec![0.0; h];
    let mut o = vec![0.0; h];
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        i[j] = sigmoid(a[j]);
        f[j] = sigmoid(a[h + j]);
        g[j] = a[2 * h + j].tanh();
        o[j] = sigmoid(a[3 * h + j]);
        c[j] = f[j] * state.cell[j] + i[j] * g[j];
        tanh_c[j] = c[j].tanh();
        hidden[j] = o[j] * tanh_c[j];
    }
    let new_state = HistoryState { hidden, cell: c };
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: state.hidden.clone(),
        c_prev: state.cell.clone(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    (new_state, cache)
}

/// Backward through one step. `dh`/`dc` are the incoming gradients at the
/// step's outputs; gradients are accumulated into `grads` and `dx`, and
/// the returned pair is (dh_prev, dc_prev) for the step before.
pub fn step_backward(
    w: &LstmWeights,
    cache: &StepCache,
    dh: &[f64],
    dc_in: &[f64],
    grads: &mut LstmGrads,
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let h = w.hidden;
    let mut da = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for j in 0..h {
        let dc = dc_in[j] + dh[j] * cache.o[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
        let d_o = dh[j] * cache.tanh_c[j];
        let d_i = dc * cache.g[j];
        let d_g = dc * cache.i[j];
        let d_f = dc * cache.c_prev[j];
        da[j] = d_i * cache.i[j] * (1.0 - cache.i[j]);
        da[h + j] = d_f * cache.f[j] * (1.0 - cache.f[j]);
        da[2 * h + j] = d_g * (1.0 - cache.g[j] * cache.g[j]);
        da[3 * h + j] = d_o * cache.o[j] * (1.0 - cache.o[j]);
        dc_prev[j] = dc * cache.f[j];
    }
    outer_add(grads.w_x, &da, &cache.x, 4 * h, w.input_dim);
    outer_add(grads.w_h, &da, &cache.h_prev, 4 * h, h);
    for (gb, d) in grads.b.iter_mut().zip(&da) {
        *gb += d;
    }
    matvec_t_add(w.w_x, &da, dx, 4 * h, w.input_dim);
    let mut dh_prev = vec![0.0; h];
    matvec_t_add(w.w_h, &da, &mut dh_prev, 4 * h, h);
    (dh_prev, dc_prev)
}

/// Seasonal features of a timestamp: sin/cos of the hour-of-day angle,
/// sin/cos of the weekday angle, a one-hot weekday, then any extra
/// conditioning values appended verbatim.
pub fn metadata_vector(t: f64, extras: &[f64]) -> Vec<f64> {
    let hour_frac = t.rem_euclid(86_400.0) / 3_600.0;
    let wd = weekday_of(t);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = Vec::with_capacity(METADATA_DIM + extras.len());
    y.push((two_pi * hour_frac / 24.0).sin());
    y.push((two_pi * hour_frac / 24.0).cos());
    y.push((two_pi * wd as f64 / 7.0).sin());
    y.push((two_pi * wd as f64 / 7.0).cos());
    let mut onehot = [0.0; 7];
    onehot[wd] = 1.0;
    y.extend_from_slice(&onehot);
    y.extend_from_slice(extras);
    y
}

/// Standardization statistics for the numeric encoder inputs, fitted on
/// the training set and stored in checkpoints. Stdevs are floored so
/// constant features scale to zero instead of dividing by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub lntau_mean: f64,
    pub lntau_std: f64,
    pub log_size_mean: f64,
    pub log_size_std: f64,
    pub log_duration_mean: f64,
    pub log_duration_std: f64,
}

const STD_FLOOR: f64 = 1e-6;

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl FeatureScaler {
    pub fn fit(events: &[EncodedEvent]) -> FeatureScaler {
        let (lntau_mean, lntau_std) = mean_std(events.iter().map(|e| e.tau.ln()));
        let (log_size_mean, log_size_std) = mean_std(events.iter().map(|e| e.log_size));
        let (log_duration_mean, log_duration_std) =
            mean_std(events.iter().map(|e| e.log_duration));
        FeatureScaler {
            lntau_mean,
            lntau_std,
            log_size_mean,
            log_size_std,
            log_duration_mean,
            log_duration_std,
        }
    }

    pub fn scale_lntau(&self, ln_tau: f64) -> f64 {
        (ln_tau - self.lntau_mean) / self.lntau_std
    }

    pub fn scale_log_size(&self, log_size: f64) -> f64 {
        (log_size - self.log_size_mean) / self.log_size_std
    }

    pub fn scale_log_duration(&self, log_duration: f64) -> f64 {
        (log_duration - self.log_duration_mean) / self.log_duration_std
    }
}

/// One embedding table viewed over external storage, `rows x dim`
/// row-major. A `dim` of zero is legal and contributes nothing.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingTable<'a> {
    pub rows: usize,
    pub dim: usize,
    pub data: &'a [f64],
}

impl<'a> EmbeddingTable<'a> {
    pub fn row(&self, idx: usize) -> &'a [f64] {
        assert!(idx < self.rows, "embedding index {idx} out of range {}", self.rows);
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Which fields feed the encoder and through which tables.
#[derive(Debug, Clone, Copy, Default)]
pub struct EventTables<'a> {
    pub src_ip: Option<EmbeddingTable<'a>>,
    pub dst_ip: Option<EmbeddingTable<'a>>,
    pub protocol: Option<EmbeddingTable<'a>>,
    pub src_port: Option<EmbeddingTable<'a>>,
    pub dst_port: Option<EmbeddingTable<'a>>,
    pub use_lntau: bool,
    pub use_log_size: bool,
    pub use_log_duration: bool,
}

impl<'a> EventTables<'a> {
    pub fn embed_dim(&self) -> usize {
        let table = |t: &Option<EmbeddingTable>| t.map_or(0, |t| t.dim);
        table(&self.src_ip)
            + table(&self.dst_ip)
            + table(&self.protocol)
            + table(&self.src_port)
            + table(&self.dst_port)
            + usize::from(self.use_lntau)
            + usize::from(self.use_log_size)
            + usize::from(self.use_log_duration)
            + METADATA_DIM
    }
}

/// Encoder input for one event: field embeddings, standardized numeric
/// features, then the event's seasonal features.
pub fn embed_event(ev: &EncodedEvent, tables: &EventTables, scaler: &FeatureScaler) -> Vec<f64> {
    let mut x = Vec::with_capacity(tables.embed_dim());
    for (table, idx) in [
        (&tables.src_ip, ev.src_ip),
        (&tables.dst_ip, ev.dst_ip),
        (&tables.protocol, ev.protocol),
        (&tables.src_port, ev.src_port),
        (&tables.dst_port, ev.dst_port),
    ] {
        if let Some(t) = table {
            x.extend_from_slice(t.row(idx));
        }
    }
    if tables.use_lntau {
        x.push(scaler.scale_lntau(ev.tau.ln()));
    }
    if tables.use_log_size {
        x.push(scaler.scale_log_size(ev.log_size));
    }
    if tables.use_log_duration {
        x.push(scaler.scale_log_duration(ev.log_duration));
    }
    x.extend_from_slice(&ev.seasonal);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_weights(rng: &mut ChaCha12Rng, input: usize, hidden: usize, scale: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut v = |n: usize| -> Vec<f64> {
            (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()
        };
        (v(4 * hidden * input), v(4 * hidden * hidden), v(4 * hidden))
    }

    #[test]
    fn init_state_is_zero() {
        let s = init_state(4);
        assert_eq!(s.hidden, vec![0.0; 4]);
        assert_eq!(s.cell, vec![0.0; 4]);
        assert_eq!(init_state(1).hidden.len(), 1);
    }

    #[test]
    #[should_panic]
    fn zero_hidden_dim_is_rejected() {
        init_state(0);
    }

    #[test]
    fn zero_weights_fix_the_zero_state() {
        let (wx, wh, b) = (vec![0.0; 4 * 3 * 2], vec![0.0; 4 * 3 * 3], vec![0.0; 12]);
        let w = LstmWeights {
            input_dim: 2,
            hidden: 3,
            w_x: &wx,
            w_h: &wh,
            b: &b,
        };
        let mut s = init_state(3);
        for x in [[5.0, -3.0], [100.0, 0.0]] {
            s = step(&w, &s, &x);
            assert_eq!(s.hidden, vec![0.0; 3]);
        }
    }

    #[test]
    fn step_is_deterministic_and_pure() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (wx, wh, b) = random_weights(&mut rng, 3, 4, 0.5);
        let w = LstmWeights {
            input_dim: 3,
            hidden: 4,
            w_x: &wx,
            w_h: &wh,
            b: &b,
        };
        let xs: Vec<[f64; 3]> = (0..5)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let run = |w: &LstmWeights| {
            let mut s = init_state(4);
            for x in &xs {
                s = step(w, &s, x);
            }
            s
        };
        let s0 = init_state(4);
        let once = step(&w, &s0, &xs[0]);
        assert_eq!(s0, init_state(4), "input state must not change");
        let _ = once;
        assert_eq!(run(&w), run(&w));
    }

    /// Scalar reference: per-element formulas, independent weight
    /// indexing, no shared helper code.
    fn reference_step(
        wx: &[f64],
        wh: &[f64],
        b: &[f64],
        input: usize,
        hidden: usize,
        h_prev: &[f64],
        c_prev: &[f64],
        x: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |gate: usize, j: usize| -> f64 {
            let row = gate * hidden + j;
            let mut a = b[row];
            for (col, xv) in x.iter().enumerate() {
                a += wx[row * input + col] * xv;
            }
            for (col, hv) in h_prev.iter().enumerate() {
                a += wh[row * hidden + col] * hv;
            }
            a
        };
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        for j in 0..hidden {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sig(pre(3, j));
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        (h, c)
    }

    #[test]
    fn five_step_sequence_matches_scalar_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (wx, wh, b) = random_weights(&mut rng, 4, 3, 0.8);
        let w = LstmWeights {
            input_dim: 4,
            hidden: 3,
            w_x: &wx,
            w_h: &wh,
            b: &b,
        };
        let mut s = init_state(3);
        let mut ref_h = vec![0.0; 3];
        let mut ref_c = vec![0.0; 3];
        for _ in 0..5 {
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            s = step(&w, &s, &x);
            let (h2, c2) = reference_step(&wx, &wh, &b, 4, 3, &ref_h, &ref_c, &x);
            ref_h = h2;
            ref_c = c2;
        }
        for j in 0..3 {
            assert!((s.hidden[j] - ref_h[j]).abs() < 1e-10);
            assert!((s.cell[j] - ref_c[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn hidden_norm_stays_bounded_over_long_runs() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let (wx, wh, b) = random_weights(&mut rng, 6, 8, 0.1);
        let w = LstmWeights {
            input_dim: 6,
            hidden: 8,
            w_x: &wx,
            w_h: &wh,
            b: &b,
        };
        let mut s = init_state(8);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            s = step(&w, &s, &x);
            let max = s.hidden.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max <= 1.0, "|h|inf = {max}");
        }
    }

    #[test]
    fn step_backward_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (input, hidden) = (3usize, 4usize);
        let (wx, wh, b) = random_weights(&mut rng, input, hidden, 0.7);
        let x: Vec<f64> = (0..input).map(|_| rng.random::<f64>() - 0.5).collect();
        let h_prev: Vec<f64> = (0..hidden).map(|_| rng.random::<f64>() - 0.5).collect();
        let c_prev: Vec<f64> = (0..hidden).map(|_| rng.random::<f64>() - 0.5).collect();
        // random linear functional of (h, c) so the scalar loss exercises
        // both outputs
        let alpha: Vec<f64> = (0..hidden).map(|_| rng.random::<f64>() - 0.5).collect();
        let beta: Vec<f64> = (0..hidden).map(|_| rng.random::<f64>() - 0.5).collect();

        let loss = |wx: &[f64], wh: &[f64], b: &[f64], x: &[f64], hp: &[f64], cp: &[f64]| {
            let w = LstmWeights {
                input_dim: input,
                hidden,
                w_x: wx,
                w_h: wh,
                b,
            };
            let s = step(
                &w,
                &HistoryState {
                    hidden: hp.to_vec(),
                    cell: cp.to_vec(),
                },
                x,
            );
            let mut l = 0.0;
            for j in 0..hidden {
                l += alpha[j] * s.hidden[j] + beta[j] * s.cell[j];
            }
            l
        };

        let w = LstmWeights {
            input_dim: input,
            hidden,
            w_x: &wx,
            w_h: &wh,
            b: &b,
        };
        let (_, cache) = step_cached(
            &w,
            &HistoryState {
                hidden: h_prev.clone(),
                cell: c_prev.clone(),
            },
            &x,
        );
        let mut gwx = vec![0.0; wx.len()];
        let mut gwh = vec![0.0; wh.len()];
        let mut gb = vec![0.0; b.len()];
        let mut dx = vec![0.0; input];
        let mut grads = LstmGrads {
            w_x: &mut gwx,
            w_h: &mut gwh,
            b: &mut gb,
        };
        let (dh_prev, dc_prev) = step_backward(&w, &cache, &alpha, &beta, &mut grads, &mut dx);

        let h_fd = 1e-6;
        let mut worst = 0.0f64;
        {
            let mut check = |analytic: &[f64], base: &[f64], which: usize| {
                for i in 0..base.len() {
                    let mut plus = base.to_vec();
                    let mut minus = base.to_vec();
                    plus[i] += h_fd;
                    minus[i] -= h_fd;
                    let eval = |alt: &[f64]| {
                        let sel = |j: usize, arr: &[f64]| if j == which { alt.to_vec() } else { arr.to_vec() };
                        loss(&sel(0, &wx), &sel(1, &wh), &sel(2, &b), &sel(3, &x), &sel(4, &h_prev), &sel(5, &c_prev))
                    };
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h_fd);
                    let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
                    worst = worst.max((fd - analytic[i]).abs() / denom);
                }
            };
            check(&gwx, &wx, 0);
            check(&gwh, &wh, 1);
            check(&gb, &b, 2);
            check(&dx, &x, 3);
            check(&dh_prev, &h_prev, 4);
            check(&dc_prev, &c_prev, 5);
        }
        // 1e-5 leaves headroom over central-difference roundoff on
        // near-zero coordinates
        assert!(worst < 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn metadata_vector_phases_and_periodicity() {
        // 2024-01-01T00:00:00Z, a Monday at midnight
        let monday = 1_704_067_200.0;
        let y = metadata_vector(monday, &[]);
        assert_eq!(y.len(), METADATA_DIM);
        assert!(y[0].abs() < 1e-12); // sin hour
        assert!((y[1] - 1.0).abs() < 1e-12); // cos hour
        assert!(y[2].abs() < 1e-12); // sin weekday (0)
        assert!((y[3] - 1.0).abs() < 1e-12);
        assert_eq!(&y[4..11], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // 06:00 quarter phase
        let y6 = metadata_vector(monday + 6.0 * 3600.0, &[]);
        assert!((y6[0] - 1.0).abs() < 1e-12);
        assert!(y6[1].abs() < 1e-12);
        // exact weekly periodicity
        let t = monday + 123_456.789;
        assert_eq!(metadata_vector(t, &[]), metadata_vector(t + 7.0 * 86_400.0, &[]));
        // extras appended verbatim
        let ye = metadata_vector(t, &[9.0, -2.0]);
        assert_eq!(ye.len(), METADATA_DIM + 2);
        assert_eq!(&ye[11..], &[9.0, -2.0]);
    }

    fn toy_event(src: usize) -> EncodedEvent {
        EncodedEvent {
            tau: 2.0,
            timestamp: 1_704_067_200.0,
            src_ip: src,
            dst_ip: 1,
            protocol: 0,
            src_port: 0,
            dst_port: 1,
            log_size: 3.0,
            log_duration: -1.0,
            seasonal: metadata_vector(1_704_067_200.0, &[]),
        }
    }

    fn unit_scaler() -> FeatureScaler {
        FeatureScaler {
            lntau_mean: 0.0,
            lntau_std: 1.0,
            log_size_mean: 0.0,
            log_size_std: 1.0,
            log_duration_mean: 0.0,
            log_duration_std: 1.0,
        }
    }

    #[test]
    fn embed_event_layout_and_locality() {
        let src_data = vec![1.0, 2.0, 10.0, 20.0, 100.0, 200.0];
        let dst_data = vec![0.5, 0.6, 0.7];
        let tables = EventTables {
            src_ip: Some(EmbeddingTable {
                rows: 3,
                dim: 2,
                data: &src_data,
            }),
            dst_ip: Some(EmbeddingTable {
                rows: 3,
                dim: 1,
                data: &dst_data,
            }),
            protocol: None,
            src_port: None,
            dst_port: None,
            use_lntau: true,
            use_log_size: true,
            use_log_duration: false,
        };
        let scaler = unit_scaler();
        let a = embed_event(&toy_event(0), &tables, &scaler);
        let b = embed_event(&toy_event(2), &tables, &scaler);
        assert_eq!(a.len(), tables.embed_dim());
        assert_eq!(a.len(), 2 + 1 + 2 + METADATA_DIM);
        assert_eq!(&a[..2], &[1.0, 2.0]);
        assert_eq!(&b[..2], &[100.0, 200.0]);
        // identical except for the src_ip slice
        assert_eq!(&a[2..], &b[2..]);
        assert_eq!(a[3], 2.0f64.ln()); // scaled ln tau with unit scaler
        assert_eq!(a[4], 3.0); // log_size passthrough
    }

    #[test]
    fn zero_dim_tables_contribute_nothing() {
        let tables = EventTables {
            src_ip: Some(EmbeddingTable {
                rows: 3,
                dim: 0,
                data: &[],
            }),
            ..Default::default()
        };
        let x = embed_event(&toy_event(1), &tables, &unit_scaler());
        assert_eq!(x.len(), METADATA_DIM);
    }

    #[test]
    fn scaler_fit_standardizes_and_floors() {
        let mut evs = vec![toy_event(0), toy_event(1)];
        evs[0].tau = 1.0;
        evs[1].tau = std::f64::consts::E.powi(2);
        evs[0].log_size = 5.0;
        evs[1].log_size = 5.0; // constant feature
        let s = FeatureScaler::fit(&evs);
        assert!((s.lntau_mean - 1.0).abs() < 1e-12);
        assert!((s.lntau_std - 1.0).abs() < 1e-12);
        assert_eq!(s.log_size_std, 1e-6);
        assert_eq!(s.scale_log_size(5.0), 0.0);
        assert!((s.scale_lntau(0.0) + 1.0).abs() < 1e-12);
    }
}
