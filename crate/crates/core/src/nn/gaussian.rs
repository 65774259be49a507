//! Diagonal Gaussian policy output with optional tanh squashing.
//!
//! A network emits `2·d` columns per row: the first `d` are means, the last `d`
//! are raw log standard deviations which are clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.

use ndarray::{s, Array1, Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Squashed actions are kept strictly inside (−1, 1).
pub const ACTION_LIMIT: f64 = 1.0 - 1e-9;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 − tanh²u)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    /// False where the raw log-std was clamped; no gradient flows there.
    in_range: Array2<bool>,
}

/// A reparameterized, tanh-squashed sample.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub action: Array2<f64>,
    pub log_prob: Array1<f64>,
    noise: Array2<f64>,
    pre_tanh: Array2<f64>,
}

impl GaussianHead {
    pub fn from_raw(raw: &Array2<f64>, action_dim: usize) -> Result<Self> {
        if raw.ncols() != 2 * action_dim {
            return Err(Error::shape("gaussian head", 2 * action_dim, raw.ncols()));
        }
        let mean = raw.slice(s![.., ..action_dim]).to_owned();
        let raw_log_std = raw.slice(s![.., action_dim..]);
        let in_range = raw_log_std.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(GaussianHead {
            mean,
            log_std,
            in_range,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.mean.ncols()
    }

    /// `tanh(mean)`, the evaluation-time action.
    pub fn deterministic(&self) -> Array2<f64> {
        self.mean.mapv(|m| m.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT))
    }

    /// `clip(mean, −1, 1)`, the evaluation-time action of an unsquashed policy.
    pub fn clipped_mean(&self) -> Array2<f64> {
        self.mean.mapv(|m| m.clamp(-1.0, 1.0))
    }

    /// Reparameterized sample `a = tanh(μ + σ·ξ)` with its log-density including
    /// the tanh change-of-variables correction.
    pub fn sample(&self, noise: &Array2<f64>) -> Result<SquashedSample> {
        if noise.dim() != self.mean.dim() {
            return Err(Error::shape("gaussian noise", self.mean.len(), noise.len()));
        }
        let mut pre_tanh = Array2::zeros(self.mean.raw_dim());
        Zip::from(&mut pre_tanh)
            .and(&self.mean)
            .and(&self.log_std)
            .and(noise)
            .for_each(|u, &m, &l, &xi| *u = m + l.exp() * xi);
        let action = pre_tanh.mapv(|u| u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT));
        let mut log_prob = Array1::zeros(self.mean.nrows());
        for (b, lp) in log_prob.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..self.action_dim() {
                let xi = noise[[b, j]];
                let u = pre_tanh[[b, j]];
                acc += -0.5 * xi * xi - self.log_std[[b, j]] - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            }
            *lp = acc;
        }
        Ok(SquashedSample {
            action,
            log_prob,
            noise: noise.clone(),
            pre_tanh,
        })
    }

    /// Gradient with respect to the raw `[mean | log_std]` network output of
    /// `Σ_b d_action[b]·a_b + d_log_prob[b]·log π(a_b)`, holding the noise fixed.
    pub fn sample_backward(
        &self,
        sample: &SquashedSample,
        d_action: &Array2<f64>,
        d_log_prob: &Array1<f64>,
    ) -> Result<Array2<f64>> {
        let d = self.action_dim();
        if d_action.dim() != self.mean.dim() {
            return Err(Error::shape("action gradient", self.mean.len(), d_action.len()));
        }
        if d_log_prob.len() != self.mean.nrows() {
            return Err(Error::shape("log-prob gradient", self.mean.nrows(), d_log_prob.len()));
        }
        let mut d_raw = Array2::zeros((self.mean.nrows(), 2 * d));
        for b in 0..self.mean.nrows() {
            for j in 0..d {
                let t = sample.pre_tanh[[b, j]].tanh();
                let sigma_xi = self.log_std[[b, j]].exp() * sample.noise[[b, j]];
                let da_du = 1.0 - t * t;
                let g_mean = d_action[[b, j]] * da_du + d_log_prob[b] * 2.0 * t;
                let g_log_std = d_action[[b, j]] * da_du * sigma_xi
                    + d_log_prob[b] * (-1.0 + 2.0 * t * sigma_xi);
                d_raw[[b, j]] = g_mean;
                d_raw[[b, d + j]] = if self.in_range[[b, j]] { g_log_std } else { 0.0 };
            }
        }
        Ok(d_raw)
    }

    /// Negative log-likelihood of `target` under the unsquashed Gaussian, per row,
    /// together with its gradient with respect to the raw network output.
    pub fn nll(&self, target: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        if target.dim() != self.mean.dim() {
            return Err(Error::shape("nll target", self.mean.len(), target.len()));
        }
        let d = self.action_dim();
        let mut nll = Array1::zeros(self.mean.nrows());
        let mut d_raw = Array2::zeros((self.mean.nrows(), 2 * d));
        for b in 0..self.mean.nrows() {
            for j in 0..d {
                let l = self.log_std[[b, j]];
                let z = (target[[b, j]] - self.mean[[b, j]]) * (-l).exp();
                nll[b] += 0.5 * z * z + l + HALF_LN_2PI;
                d_raw[[b, j]] = -z * (-l).exp();
                d_raw[[b, d + j]] = if self.in_range[[b, j]] { 1.0 - z * z } else { 0.0 };
            }
        }
        Ok((nll, d_raw))
    }
}
