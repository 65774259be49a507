//! Learned forward and reverse dynamics.
//!
//! Both models work in standardized state space: states are z-scored with the
//! dataset statistics before they reach a network, and predictions come back in
//! the same units. Regression targets are additionally z-scored per output
//! dimension with statistics taken from the training split.

mod ensemble;
mod reverse;

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ensemble::{DynamicsEnsemble, PredictMode, TrainingReport};
pub use reverse::{ReverseConfig, ReverseDynamicsModel, ReverseReport};

use crate::env::{Normalizer, OfflineDataset};
use crate::error::{Error, Result};
use crate::nn::fit::FitSettings;
use crate::nn::Activation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub ensemble_size: usize,
    pub elite_count: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Evaluation rounds without improvement before stopping.
    pub patience: usize,
    /// Relative decrease of the validation loss that counts as improvement.
    pub min_improvement: f64,
    pub val_fraction: f64,
    pub min_log_var: f64,
    pub max_log_var: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            ensemble_size: 7,
            elite_count: 5,
            hidden: vec![200; 4],
            batch_size: 256,
            // 1e-3 leaves the NLL curve spiky once log-variances approach the floor
            lr: 1e-4,
            max_epochs: 200,
            patience: 5,
            min_improvement: 1e-3,
            val_fraction: 0.1,
            min_log_var: -10.0,
            max_log_var: 0.5,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("dynamics: {m}")));
        if self.ensemble_size == 0 || self.elite_count == 0 || self.elite_count > self.ensemble_size {
            return bad("need 0 < elite_count <= ensemble_size");
        }
        if self.hidden.iter().any(|&h| h == 0) || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("hidden widths, batch_size and max_epochs must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(self.min_log_var < self.max_log_var) {
            return bad("min_log_var must be below max_log_var");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }

    pub(crate) fn activation(&self) -> Activation {
        Activation::Tanh
    }

    pub(crate) fn fit_settings(&self) -> FitSettings {
        FitSettings {
            batch_size: self.batch_size,
            lr: self.lr,
            max_epochs: self.max_epochs,
            patience: Some(self.patience),
            min_improvement: self.min_improvement,
        }
    }
}

/// Seeded train/validation split of `0..n`. Both sides are nonempty when `n ≥ 2`.
pub(crate) fn split_indices<R: Rng + ?Sized>(n: usize, val_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if n < 2 {
        return (idx.clone(), idx);
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Regression arrays shared by the forward and reverse models: network inputs,
/// raw targets, and the dataset normalizer.
pub(crate) struct Regression {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

/// `[s_std, a] → [s'_std − s_std, r]`
pub(crate) fn forward_regression(ds: &OfflineDataset) -> Regression {
    let s = ds.standardized_states();
    let s_next = ds.standardized_next_states();
    regression(&s, &ds.actions, &(&s_next - &s), &ds.rewards)
}

/// `[s'_std, a] → [s_std − s'_std, r]`
pub(crate) fn reverse_regression(ds: &OfflineDataset) -> Regression {
    let s = ds.standardized_states();
    let s_next = ds.standardized_next_states();
    regression(&s_next, &ds.actions, &(&s - &s_next), &ds.rewards)
}

fn regression(x: &Array2<f64>, a: &Array2<f64>, delta: &Array2<f64>, r: &Array1<f64>) -> Regression {
    let n = x.nrows();
    let (sd, ad) = (x.ncols(), a.ncols());
    let mut inputs = Array2::zeros((n, sd + ad));
    inputs.slice_mut(s![.., ..sd]).assign(x);
    inputs.slice_mut(s![.., sd..]).assign(a);
    let mut targets = Array2::zeros((n, sd + 1));
    targets.slice_mut(s![.., ..sd]).assign(delta);
    targets.column_mut(sd).assign(r);
    Regression { inputs, targets }
}

pub(crate) fn rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

pub(crate) fn join_input(s: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
    if s.nrows() != a.nrows() {
        return Err(Error::shape("state/action batch", s.nrows(), a.nrows()));
    }
    let (sd, ad) = (s.ncols(), a.ncols());
    let mut out = Array2::zeros((s.nrows(), sd + ad));
    out.slice_mut(s![.., ..sd]).assign(s);
    out.slice_mut(s![.., sd..]).assign(a);
    Ok(out)
}

/// Root-mean-square error over every element.
pub fn rmse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let diff = pred - target;
    (diff.mapv(|d| d * d).sum() / diff.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct NormalizerRecord {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl From<&Normalizer> for NormalizerRecord {
    fn from(n: &Normalizer) -> Self {
        NormalizerRecord {
            mean: n.mean.to_vec(),
            std: n.std.to_vec(),
        }
    }
}

impl From<NormalizerRecord> for Normalizer {
    fn from(r: NormalizerRecord) -> Self {
        Normalizer {
            mean: Array1::from(r.mean),
            std: Array1::from(r.std),
        }
    }
}

pub(crate) fn write_manifest<T: Serialize>(dir: &Path, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub(crate) fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_is_disjoint_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, val) = split_indices(100, 0.1, &mut rng);
        assert_eq!(val.len(), 10);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn default_config_is_valid() {
        DynamicsConfig::default().validate().unwrap();
        let bad = DynamicsConfig {
            elite_count: 8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
