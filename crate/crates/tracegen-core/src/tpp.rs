//! Log-normal mixture over inter-arrival times.
//!
//! The density conditioned on a context vector `c` is
//!
//! ```text
//! p(tau) = sum_k omega_k * 1/(tau * sigma_k * sqrt(2 pi))
//!                * exp(-(ln tau - mu_k)^2 / (2 sigma_k^2))
//! omega = softmax(V_omega c + b_omega)
//! sigma = exp(V_sigma c + b_sigma)        (clamped to [1e-6, 1e6])
//! mu    = V_mu c + b_mu
//! ```
//!
//! Log-space evaluation throughout: softmax and the mixture sum use
//! max-subtraction, so extreme logits and tiny component densities stay
//! finite. Gradients are hand-derived; `nll_backward` returns derivatives
//! with respect to the pre-activations (softmax input, exp input) so the
//! chain rule to weights is a plain outer product.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{log_sum_exp, matvec_add, matvec_t_add, outer_add};

#[derive(Debug, Error, PartialEq)]
pub enum TppError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch length mismatch: {taus} inter-arrivals vs {params} parameter sets")]
    LengthMismatch { taus: usize, params: usize },
}

pub const SIGMA_MIN: f64 = 1e-6;
pub const SIGMA_MAX: f64 = 1e6;
const LN_2PI: f64 = 1.8378770664093453;

/// Mixture parameters for one event, after the affine maps and
/// activations. `log_omega` and `a_sigma` are kept because the backward
/// pass needs them (stable log weights, and the clamp test on sigma).
#[derive(Debug, Clone)]
pub struct MixtureParams {
    pub omega: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub log_omega: Vec<f64>,
    /// Pre-exponential sigma activations.
    pub a_sigma: Vec<f64>,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.omega.len()
    }

    /// Builds parameters directly from activation values; the affine-map
    /// path is [`MixtureHead::params`].
    pub fn from_activations(a_omega: &[f64], mu: Vec<f64>, a_sigma: Vec<f64>) -> MixtureParams {
        let k = a_omega.len();
        assert_eq!(mu.len(), k);
        assert_eq!(a_sigma.len(), k);
        let m = a_omega.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = a_omega.iter().map(|a| a - m).collect();
        let lse = log_sum_exp(&shifted);
        let log_omega: Vec<f64> = shifted.iter().map(|s| s - lse).collect();
        let omega: Vec<f64> = log_omega.iter().map(|l| l.exp()).collect();
        let sigma: Vec<f64> = a_sigma
            .iter()
            .map(|a| a.exp().clamp(SIGMA_MIN, SIGMA_MAX))
            .collect();
        MixtureParams {
            omega,
            mu,
            sigma,
            log_omega,
            a_sigma,
        }
    }
}

/// The affine maps from a context vector to mixture activations, viewed
/// over externally owned storage. `v_*` are row-major `(k x ctx_dim)`.
#[derive(Debug, Clone, Copy)]
pub struct MixtureHead<'a> {
    pub k: usize,
    pub ctx_dim: usize,
    pub v_omega: &'a [f64],
    pub b_omega: &'a [f64],
    pub v_mu: &'a [f64],
    pub b_mu: &'a [f64],
    pub v_sigma: &'a [f64],
    pub b_sigma: &'a [f64],
}

/// Gradient accumulators matching [`MixtureHead`], plus the context
/// gradient. All slices are accumulated into, never overwritten.
pub struct MixtureHeadGrads<'a> {
    pub v_omega: &'a mut [f64],
    pub b_omega: &'a mut [f64],
    pub v_mu: &'a mut [f64],
    pub b_mu: &'a mut [f64],
    pub v_sigma: &'a mut [f64],
    pub b_sigma: &'a mut [f64],
}

impl<'a> MixtureHead<'a> {
    /// omega, mu, sigma for one context.
    pub fn params(&self, ctx: &[f64]) -> MixtureParams {
        assert_eq!(ctx.len(), self.ctx_dim);
        let mut a_omega = self.b_omega.to_vec();
        matvec_add(self.v_omega, ctx, &mut a_omega, self.k, self.ctx_dim);
        let mut mu = self.b_mu.to_vec();
        matvec_add(self.v_mu, ctx, &mut mu, self.k, self.ctx_dim);
        let mut a_sigma = self.b_sigma.to_vec();
        matvec_add(self.v_sigma, ctx, &mut a_sigma, self.k, self.ctx_dim);
        MixtureParams::from_activations(&a_omega, mu, a_sigma)
    }
}

/// ln p(tau) under the mixture. `tau` must be positive.
pub fn log_density(params: &MixtureParams, tau: f64) -> f64 {
    assert!(tau > 0.0, "inter-arrival must be positive, got {tau}");
    let z = tau.ln();
    let mut terms = Vec::with_capacity(params.k());
    for k in 0..params.k() {
        let q = (z - params.mu[k]) / params.sigma[k];
        terms.push(params.log_omega[k] - z - params.sigma[k].ln() - 0.5 * LN_2PI - 0.5 * q * q);
    }
    log_sum_exp(&terms)
}

/// NLL of a single inter-arrival.
pub fn nll_one(params: &MixtureParams, tau: f64) -> f64 {
    -log_density(params, tau)
}

/// Mean NLL over a batch: −(1/N)·Σ log_density(τ_i, p_i). The mean (not
/// the sum) keeps learning rates comparable across batch sizes.
pub fn nll(taus: &[f64], params: &[MixtureParams]) -> Result<f64, TppError> {
    if taus.is_empty() {
        return Err(TppError::EmptyBatch);
    }
    if taus.len() != params.len() {
        return Err(TppError::LengthMismatch {
            taus: taus.len(),
            params: params.len(),
        });
    }
    let total: f64 = taus
        .iter()
        .zip(params)
        .map(|(t, p)| nll_one(p, *t))
        .sum();
    Ok(total / taus.len() as f64)
}

/// Draws one inter-arrival: component by weight, then a log-normal draw.
pub fn sample<R: Rng>(params: &MixtureParams, rng: &mut R) -> f64 {
    let mut u = rng.random::<f64>();
    let mut z = params.k() - 1;
    for (k, w) in params.omega.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            z = k;
            break;
        }
    }
    let eps: f64 = StandardNormal.sample(rng);
    (params.mu[z] + params.sigma[z] * eps).exp()
}

/// Gradients of `nll(params, tau)` with respect to the activations:
/// softmax input for omega, the exp input for sigma, and mu directly.
#[derive(Debug, Clone)]
pub struct ActivationGrads {
    pub a_omega: Vec<f64>,
    pub mu: Vec<f64>,
    pub a_sigma: Vec<f64>,
}

/// With responsibilities `r_k = omega_k f_k / sum_j omega_j f_j`:
///
/// ```text
/// dNLL/da_omega_k = omega_k - r_k
/// dNLL/dmu_k      = -r_k (ln tau - mu_k) / sigma_k^2
/// dNLL/da_sigma_k =  r_k (1 - ((ln tau - mu_k)/sigma_k)^2)   (0 if clamped)
/// ```
pub fn nll_backward(params: &MixtureParams, tau: f64) -> ActivationGrads {
    let k = params.k();
    let z = tau.ln();
    let mut log_terms = Vec::with_capacity(k);
    for i in 0..k {
        let q = (z - params.mu[i]) / params.sigma[i];
        log_terms.push(params.log_omega[i] - params.sigma[i].ln() - 0.5 * q * q);
    }
    // the shared -z - ln sqrt(2 pi) cancels in the responsibilities
    let lse = log_sum_exp(&log_terms);
    let r: Vec<f64> = if lse.is_finite() {
        log_terms.iter().map(|t| (t - lse).exp()).collect()
    } else {
        // every component underflowed; spread the gradient evenly rather
        // than emitting NaNs
        vec![1.0 / k as f64; k]
    };
    let mut g = ActivationGrads {
        a_omega: vec![0.0; k],
        mu: vec![0.0; k],
        a_sigma: vec![0.0; k],
    };
    let ln_min = SIGMA_MIN.ln();
    let ln_max = SIGMA_MAX.ln();
    for i in 0..k {
        let q = (z - params.mu[i]) / params.sigma[i];
        g.a_omega[i] = params.omega[i] - r[i];
        g.mu[i] = -r[i] * q / params.sigma[i];
        let clamped = params.a_sigma[i] < ln_min || params.a_sigma[i] > ln_max;
        g.a_sigma[i] = if clamped { 0.0 } else { r[i] * (1.0 - q * q) };
    }
    g
}

/// Full backward through the affine maps: accumulates weight and bias
/// gradients and the context gradient, returns the NLL.
pub fn grad_nll(
    head: &MixtureHead,
    ctx: &[f64],
    params: &MixtureParams,
    tau: f64,
    grads: &mut MixtureHeadGrads,
    dctx: &mut [f64],
) -> f64 {
    let act = nll_backward(params, tau);
    let (k, d) = (head.k, head.ctx_dim);
    outer_add(grads.v_omega, &act.a_omega, ctx, k, d);
    outer_add(grads.v_mu, &act.mu, ctx, k, d);
    outer_add(grads.v_sigma, &act.a_sigma, ctx, k, d);
    for i in 0..k {
        grads.b_omega[i] += act.a_omega[i];
        grads.b_mu[i] += act.mu[i];
        grads.b_sigma[i] += act.a_sigma[i];
    }
    matvec_t_add(head.v_omega, &act.a_omega, dctx, k, d);
    matvec_t_add(head.v_mu, &act.mu, dctx, k, d);
    matvec_t_add(head.v_sigma, &act.a_sigma, dctx, k, d);
    nll_one(params, tau)
}
