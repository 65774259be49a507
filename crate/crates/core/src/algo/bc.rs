use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::train::Policy;
use crate::dynamics::NormalizerRecord;
use crate::env::{clip_action, Action, Normalizer, OfflineDataset, State};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_net, save_net};
use crate::nn::fit::{fit, FitSettings};
use crate::nn::{Activation, GaussianHead, Mlp};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            hidden: vec![256, 256],
            batch_size: 256,
            lr: 1e-3,
            epochs: 100,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) || self.batch_size == 0 || self.epochs == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(
                "bc: hidden widths, batch_size, epochs and lr must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    /// Mean per-sample negative log-likelihood per epoch.
    pub curve: Vec<f64>,
}

/// Gaussian behavior-cloning policy over standardized states. The Gaussian is
/// not squashed; evaluation uses the clipped mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BcPolicy {
    pub net: Mlp,
    pub state_stats: Normalizer,
}

impl BcPolicy {
    pub fn action_dim(&self) -> usize {
        self.net.out_dim() / 2
    }

    /// Means for standardized states.
    pub fn mean(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        let raw = self.net.forward(states.view())?;
        Ok(GaussianHead::from_raw(&raw, self.action_dim())?.mean)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_net(&self.net, &dir.join("bc.net"))?;
        crate::dynamics::write_manifest(dir, &NormalizerRecord::from(&self.state_stats))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let stats: NormalizerRecord = crate::dynamics::read_manifest(dir)?;
        let net = load_net(&dir.join("bc.net"))?;
        if net.in_dim() != stats.mean.len() || net.out_dim() % 2 != 0 {
            return Err(Error::Format("bc network dims disagree with manifest".into()));
        }
        Ok(BcPolicy {
            net,
            state_stats: stats.into(),
        })
    }
}

impl Policy for BcPolicy {
    fn act(&self, s: &State) -> Result<Action> {
        let z = self.state_stats.standardize_one(s);
        let x = Array2::from_shape_vec((1, z.len()), z).map_err(|_| Error::shape("bc state", s.len(), s.len()))?;
        let m = self.mean(&x)?;
        Ok(clip_action(m.row(0).as_slice().expect("row of a standard-layout array")))
    }
}

fn nll_loss(action_dim: usize) -> impl Fn(&Array2<f64>, ArrayView2<f64>) -> (f64, Array2<f64>) {
    move |out, target| match GaussianHead::from_raw(out, action_dim).and_then(|h| h.nll(target)) {
        Ok((nll, d_raw)) => {
            let b = out.nrows() as f64;
            (nll.sum() / b, d_raw / b)
        }
        Err(_) => (f64::NAN, out.clone()),
    }
}

/// Maximum-likelihood Gaussian regression of dataset actions on standardized states.
pub fn bc_train(dataset: &OfflineDataset, config: &BcConfig, seed: u64) -> Result<(BcPolicy, BcReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("behavior cloning needs a nonempty dataset".into()));
    }
    let ad = dataset.action_dim();
    let mut dims = vec![dataset.state_dim()];
    dims.extend(&config.hidden);
    dims.push(2 * ad);
    let mut net = Mlp::new(&dims, Activation::Relu, &mut stream_rng(seed, "bc-init"))?;
    let settings = FitSettings {
        batch_size: config.batch_size,
        lr: config.lr,
        max_epochs: config.epochs,
        patience: None,
        min_improvement: 0.0,
    };
    let outcome = fit(
        &mut net,
        &dataset.standardized_states(),
        &dataset.actions,
        &settings,
        &mut stream_rng(seed, "bc-train"),
        "behavior cloning",
        &nll_loss(ad),
        None,
    )?;
    Ok((
        BcPolicy {
            net,
            state_stats: dataset.state_stats.clone(),
        },
        BcReport { curve: outcome.curve },
    ))
}
