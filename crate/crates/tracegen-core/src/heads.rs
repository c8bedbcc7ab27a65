//! Categorical output heads and conditioning-context assembly.
//!
//! Two head shapes exist: the source-IP head is linear → tanh → linear,
//! everything else is a single linear map. Softmax is never materialized
//! in the loss path; `categorical_nll` works on raw logits through
//! log-sum-exp. Conditioning (dst on src, ports on protocol, ...) is the
//! concatenation of already-sampled field embeddings onto the context.

use rand::Rng;

use crate::linalg::{log_sum_exp, matvec_add, matvec_t_add, outer_add, softmax_inplace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Stochastic,
    Argmax,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stochastic" => Ok(SamplingMode::Stochastic),
            "argmax" => Ok(SamplingMode::Argmax),
            other => Err(format!("unknown sampling mode `{other}`")),
        }
    }
}

/// Optional first layer of the two-layer head shape.
#[derive(Debug, Clone, Copy)]
pub struct HiddenLayer<'a> {
    pub dim: usize,
    /// `(dim x input_dim)` row-major.
    pub w: &'a [f64],
    pub b: &'a [f64],
}

/// A categorical head over external parameter storage. With `hidden`
/// set, logits = W2 tanh(W1 c + b1) + b2; otherwise logits = W c + b.
#[derive(Debug, Clone, Copy)]
pub struct CategoricalHead<'a> {
    pub input_dim: usize,
    pub vocab: usize,
    pub hidden: Option<HiddenLayer<'a>>,
    /// Output layer, `(vocab x D)` where D is `hidden.dim` or `input_dim`.
    pub w: &'a [f64],
    pub b: &'a [f64],
}

pub struct CategoricalHeadGrads<'a> {
    pub hidden_w: Option<&'a mut [f64]>,
    pub hidden_b: Option<&'a mut [f64]>,
    pub w: &'a mut [f64],
    pub b: &'a mut [f64],
}

impl<'a> CategoricalHead<'a> {
    pub fn logits(&self, c: &[f64]) -> Vec<f64> {
        self.logits_cached(c).0
    }

    /// Returns (logits, tanh activations) — the activations are needed by
    /// [`CategoricalHead::backward`] for the two-layer shape.
    pub fn logits_cached(&self, c: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        assert_eq!(c.len(), self.input_dim, "head input width mismatch");
        match self.hidden {
            None => {
                let mut out = self.b.to_vec();
                matvec_add(self.w, c, &mut out, self.vocab, self.input_dim);
                (out, None)
            }
            Some(hl) => {
                let mut t = hl.b.to_vec();
                matvec_add(hl.w, c, &mut t, hl.dim, self.input_dim);
                for v in t.iter_mut() {
                    *v = v.tanh();
                }
                let mut out = self.b.to_vec();
                matvec_add(self.w, &t, &mut out, self.vocab, hl.dim);
                (out, Some(t))
            }
        }
    }

    /// Accumulates parameter gradients and the context gradient given
    /// dLoss/dlogits.
    pub fn backward(
        &self,
        c: &[f64],
        tanh_cache: Option<&[f64]>,
        d_logits: &[f64],
        grads: &mut CategoricalHeadGrads,
        dc: &mut [f64],
    ) {
        match self.hidden {
            None => {
                outer_add(grads.w, d_logits, c, self.vocab, self.input_dim);
                for (gb, d) in grads.b.iter_mut().zip(d_logits) {
                    *gb += d;
                }
                matvec_t_add(self.w, d_logits, dc, self.vocab, self.input_dim);
            }
            Some(hl) => {
                let t = tanh_cache.expect("two-layer head backward needs the tanh cache");
                outer_add(grads.w, d_logits, t, self.vocab, hl.dim);
                for (gb, d) in grads.b.iter_mut().zip(d_logits) {
                    *gb += d;
                }
                let mut dt = vec![0.0; hl.dim];
                matvec_t_add(self.w, d_logits, &mut dt, self.vocab, hl.dim);
                for (dv, tv) in dt.iter_mut().zip(t) {
                    *dv *= 1.0 - tv * tv;
                }
                let hw = grads.hidden_w.as_deref_mut().expect("missing hidden grads");
                outer_add(hw, &dt, c, hl.dim, self.input_dim);
                let hb = grads.hidden_b.as_deref_mut().expect("missing hidden grads");
                for (gb, d) in hb.iter_mut().zip(&dt) {
                    *gb += d;
                }
                matvec_t_add(hl.w, &dt, dc, hl.dim, self.input_dim);
            }
        }
    }
}

/// −log softmax(logits)[target], via log-sum-exp.
pub fn categorical_nll(logits: &[f64], target: usize) -> f64 {
    assert!(target < logits.len(), "target {target} out of range {}", logits.len());
    log_sum_exp(logits) - logits[target]
}

/// dNLL/dlogits = softmax(logits) − onehot(target).
pub fn categorical_nll_backward(logits: &[f64], target: usize) -> Vec<f64> {
    let mut d = logits.to_vec();
    softmax_inplace(&mut d);
    d[target] -= 1.0;
    d
}

/// Argmax mode returns the smallest index among maximal logits;
/// stochastic mode draws from softmax(logits). Logits of `-inf` are never
/// selected (unless every logit is `-inf`).
pub fn categorical_sample<R: Rng>(logits: &[f64], rng: &mut R, mode: SamplingMode) -> usize {
    assert!(!logits.is_empty());
    match mode {
        SamplingMode::Argmax => {
            let mut best = 0;
            for (i, v) in logits.iter().enumerate().skip(1) {
                if *v > logits[best] {
                    best = i;
                }
            }
            best
        }
        SamplingMode::Stochastic => {
            let mut p = logits.to_vec();
            softmax_inplace(&mut p);
            let mut u = rng.random::<f64>();
            let mut last = p.len() - 1;
            for (i, w) in p.iter().enumerate() {
                u -= w;
                if u < 0.0 {
                    return i;
                }
                last = i;
            }
            last
        }
    }
}

/// `[c ‖ conditions...]` in the given order.
pub fn conditional_context(c: &[f64], conditions: &[&[f64]]) -> Vec<f64> {
    let extra: usize = conditions.iter().map(|s| s.len()).sum();
    let mut out = Vec::with_capacity(c.len() + extra);
    out.extend_from_slice(c);
    for cond in conditions {
        out.extend_from_slice(cond);
    }
    out
}
