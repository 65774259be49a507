use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::ReverseBuffer;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_net, save_net};
use crate::nn::fit::{fit, FitSettings};
use crate::nn::{Activation, Mlp};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorPolicyConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a relative drop of `min_improvement` in buffer MSE before stopping.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for AnchorPolicyConfig {
    fn default() -> Self {
        AnchorPolicyConfig {
            hidden: vec![100, 100],
            batch_size: 256,
            lr: 1e-3,
            max_epochs: 300,
            patience: 10,
            min_improvement: 1e-3,
        }
    }
}

impl AnchorPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) || self.batch_size == 0 || self.max_epochs == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("anchor policy: sizes and lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPolicyReport {
    pub curve: Vec<f64>,
    /// Mean squared action error per component over the whole buffer.
    pub final_mse: f64,
}

/// Deterministic `standardized state → action` map with a tanh output.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSeekingPolicy {
    net: Mlp,
}

impl AnchorSeekingPolicy {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = vec![state_dim];
        dims.extend(hidden);
        dims.push(action_dim);
        let net = Mlp::new(&dims, Activation::Relu, &mut stream_rng(seed, "anchor-policy-init"))?;
        Ok(AnchorSeekingPolicy { net })
    }

    pub fn from_net(net: Mlp) -> Self {
        AnchorSeekingPolicy { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn act_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.net.forward(states)?.mapv(f64::tanh))
    }

    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward_one(s)?.into_iter().map(f64::tanh).collect())
    }

    /// Regresses buffer actions on buffer states (`π̃(s_{t−i}) → a_{t−i}`).
    pub fn train(buffer: &ReverseBuffer, config: &AnchorPolicyConfig, seed: u64) -> Result<(Self, AnchorPolicyReport)> {
        config.validate()?;
        if buffer.is_empty() {
            return Err(Error::InvalidConfig("anchor policy needs a nonempty reverse buffer".into()));
        }
        let mut policy = Self::new(buffer.state_dim(), buffer.action_dim(), &config.hidden, seed)?;
        let settings = FitSettings {
            batch_size: config.batch_size,
            lr: config.lr,
            max_epochs: config.max_epochs,
            patience: Some(config.patience),
            min_improvement: config.min_improvement,
        };
        let x = &buffer.states;
        let y = &buffer.actions;
        let mut full_mse = |net: &Mlp| -> Result<f64> { Ok(tanh_mse(&net.forward(x.view())?, y.view()).0) };
        let loss = |out: &Array2<f64>, z: ArrayView2<f64>| tanh_mse(out, z);
        let outcome = fit(
            &mut policy.net,
            x,
            y,
            &settings,
            &mut stream_rng(seed, "anchor-policy-train"),
            "anchor policy",
            &loss,
            Some(&mut full_mse),
        )?;
        let final_mse = outcome.best;
        Ok((
            policy,
            AnchorPolicyReport {
                curve: outcome.curve,
                final_mse,
            },
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_net(&self.net, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_net(load_net(path)?))
    }
}

/// Elementwise-mean squared error of `tanh(out)` against `target`, with the
/// gradient taken with respect to the pre-tanh output.
fn tanh_mse(out: &Array2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = out.len().max(1) as f64;
    let y = out.mapv(f64::tanh);
    let diff = &y - &target;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let grad = ndarray::Zip::from(&diff).and(&y).map_collect(|&d, &t| 2.0 * d * (1.0 - t * t) / n);
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_parameters;
    use crate::nn::GradCheckOptions;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn single_pair_buffer(s: Vec<f64>, a: Vec<f64>, copies: usize) -> ReverseBuffer {
        let n = copies;
        let sd = s.len();
        let ad = a.len();
        let states = Array2::from_shape_fn((n, sd), |(_, j)| s[j]);
        ReverseBuffer {
            next_states: states.clone(),
            states,
            actions: Array2::from_shape_fn((n, ad), |(_, j)| a[j]),
            rewards: Array1::zeros(n),
            steps: vec![1; n],
            discarded: 0,
        }
    }

    #[test]
    fn single_pair_is_fit() {
        let buf = single_pair_buffer(vec![0.3, -1.2, 0.5, 0.0], vec![0.6, -0.35], 32);
        let cfg = AnchorPolicyConfig {
            batch_size: 32,
            max_epochs: 2000,
            patience: 2000,
            ..Default::default()
        };
        let (p, rep) = AnchorSeekingPolicy::train(&buf, &cfg, 0).unwrap();
        let a = p.act(&[0.3, -1.2, 0.5, 0.0]).unwrap();
        assert!((a[0] - 0.6).abs() < 1e-3 && (a[1] + 0.35).abs() < 1e-3, "{a:?} mse {}", rep.final_mse);
    }

    #[test]
    fn training_is_deterministic() {
        let buf = single_pair_buffer(vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.5], 8);
        let cfg = AnchorPolicyConfig {
            max_epochs: 5,
            ..Default::default()
        };
        let (a, _) = AnchorSeekingPolicy::train(&buf, &cfg, 4).unwrap();
        let (b, _) = AnchorSeekingPolicy::train(&buf, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tanh_mse_gradient() {
        let policy = AnchorSeekingPolicy::new(4, 2, &[8, 8], 1).unwrap();
        let x = array![[0.1, -0.3, 0.7, 1.0], [-1.0, 0.2, 0.0, 0.4]];
        let y = array![[0.5, -0.2], [0.1, 0.9]];
        let tape = policy.net().forward_tape(x.view()).unwrap();
        let (_, g) = tanh_mse(tape.output(), y.view());
        let (grads, _) = policy.net().backward(&tape, g.view()).unwrap();
        let mut net = policy.net().clone();
        let err = check_parameters(
            &mut net,
            &grads,
            |n: &Mlp| tanh_mse(&n.forward(x.view()).unwrap(), y.view()).0,
            &GradCheckOptions::default(),
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = AnchorSeekingPolicy::new(4, 2, &[100, 100], 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchor.net");
        p.save(&path).unwrap();
        assert_eq!(AnchorSeekingPolicy::load(&path).unwrap(), p);
    }

    proptest! {
        #[test]
        fn actions_are_bounded(s in prop::collection::vec(-50.0f64..50.0, 4), seed in 0u64..20) {
            let p = AnchorSeekingPolicy::new(4, 2, &[16, 16], seed).unwrap();
            for a in p.act(&s).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }
    }
}
