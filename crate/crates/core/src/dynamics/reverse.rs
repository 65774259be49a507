use std::path::Path;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{
    join_input, read_manifest, reverse_regression, rows, split_indices, write_manifest,
    NormalizerRecord,
};
use crate::env::{Normalizer, OfflineDataset};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_net, save_net};
use crate::nn::fit::{fit, mse_loss, FitSettings};
use crate::nn::{Activation, Mlp};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReverseConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_improvement: f64,
    pub val_fraction: f64,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        ReverseConfig {
            hidden: vec![200; 4],
            batch_size: 256,
            lr: 1e-3,
            max_epochs: 200,
            patience: 5,
            min_improvement: 1e-3,
            val_fraction: 0.1,
        }
    }
}

impl ReverseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig(
                "reverse: hidden widths, batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("reverse: bad val_fraction or lr".into()));
        }
        Ok(())
    }
}

/// Deterministic predecessor model `(s'_std, a) → (s_std, r)`.
///
/// The network regresses the z-scored residual `s − s'` and the reward; the
/// prediction adds the residual back onto `s'`, so the loss is still the squared
/// distance between the predicted and the true predecessor state.
#[derive(Debug, Clone)]
pub struct ReverseDynamicsModel {
    net: Mlp,
    target_stats: Normalizer,
    state_dim: usize,
    action_dim: usize,
    trained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseReport {
    pub curve: Vec<f64>,
    /// Held-out MSE of the predecessor state, standardized units, averaged over dimensions.
    pub heldout_state_mse: f64,
    pub val_indices: Vec<usize>,
}

impl ReverseDynamicsModel {
    pub fn train(dataset: &OfflineDataset, config: &ReverseConfig, seed: u64) -> Result<(Self, ReverseReport)> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        let data = reverse_regression(dataset);
        let (train_idx, val_idx) =
            split_indices(dataset.len(), config.val_fraction, &mut stream_rng(seed, "reverse-split"));
        let target_stats = Normalizer::fit(&rows(&data.targets, &train_idx))?;
        let train_x = rows(&data.inputs, &train_idx);
        let train_z = target_stats.standardize(&rows(&data.targets, &train_idx));
        let val_x = rows(&data.inputs, &val_idx);
        let val_z = target_stats.standardize(&rows(&data.targets, &val_idx));

        let sd = dataset.state_dim();
        let ad = dataset.action_dim();
        let mut dims = vec![sd + ad];
        dims.extend(&config.hidden);
        dims.push(sd + 1);
        let mut rng = stream_rng(seed, "reverse-model");
        let mut net = Mlp::new(&dims, Activation::Tanh, &mut rng)?;
        let settings = FitSettings {
            batch_size: config.batch_size,
            lr: config.lr,
            max_epochs: config.max_epochs,
            patience: Some(config.patience),
            min_improvement: config.min_improvement,
        };
        let mut validate = |n: &Mlp| -> Result<f64> {
            let out = n.forward(val_x.view())?;
            Ok(mse_loss(&out, val_z.view()).0)
        };
        let outcome = fit(
            &mut net,
            &train_x,
            &train_z,
            &settings,
            &mut rng,
            "reverse model",
            &mse_loss,
            Some(&mut validate),
        )?;
        let model = ReverseDynamicsModel {
            net,
            target_stats,
            state_dim: sd,
            action_dim: ad,
            trained: true,
        };
        let s_std = dataset.standardized_states();
        let s_next_std = dataset.standardized_next_states();
        let (pred, _) = model.predict_batch(
            &rows(&s_next_std, &val_idx),
            &rows(&dataset.actions, &val_idx),
        )?;
        let diff = &pred - &rows(&s_std, &val_idx);
        let heldout_state_mse = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
        Ok((
            model,
            ReverseReport {
                curve: outcome.curve,
                heldout_state_mse,
                val_indices: val_idx,
            },
        ))
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Predecessor states and rewards for a batch of standardized successor states.
    pub fn predict_batch(&self, s_next: &Array2<f64>, a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if !self.trained {
            return Err(Error::Untrained("reverse dynamics model"));
        }
        if s_next.ncols() != self.state_dim {
            return Err(Error::shape("reverse state", self.state_dim, s_next.ncols()));
        }
        if a.ncols() != self.action_dim {
            return Err(Error::shape("reverse action", self.action_dim, a.ncols()));
        }
        let z = self.net.forward(join_input(s_next, a)?.view())?;
        let raw = z * &self.target_stats.std + &self.target_stats.mean;
        let s = s_next + &raw.slice(s![.., ..self.state_dim]);
        Ok((s, raw.column(self.state_dim).to_owned()))
    }

    pub fn predict_reverse(&self, s_next: &[f64], a: &[f64]) -> Result<(Vec<f64>, f64)> {
        let sb = Array2::from_shape_vec((1, s_next.len()), s_next.to_vec())
            .map_err(|_| Error::shape("reverse state", self.state_dim, s_next.len()))?;
        let ab = Array2::from_shape_vec((1, a.len()), a.to_vec())
            .map_err(|_| Error::shape("reverse action", self.action_dim, a.len()))?;
        let (s, r) = self.predict_batch(&sb, &ab)?;
        Ok((s.row(0).to_vec(), r[0]))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        if !self.trained {
            return Err(Error::Untrained("reverse dynamics model"));
        }
        std::fs::create_dir_all(dir)?;
        save_net(&self.net, &dir.join("reverse.net"))?;
        write_manifest(
            dir,
            &ReverseManifest {
                target_stats: (&self.target_stats).into(),
                state_dim: self.state_dim,
                action_dim: self.action_dim,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: ReverseManifest = read_manifest(dir)?;
        let net = load_net(&dir.join("reverse.net"))?;
        if net.in_dim() != m.state_dim + m.action_dim || net.out_dim() != m.state_dim + 1 {
            return Err(Error::Format("reverse network dims disagree with manifest".into()));
        }
        Ok(ReverseDynamicsModel {
            net,
            target_stats: m.target_stats.into(),
            state_dim: m.state_dim,
            action_dim: m.action_dim,
            trained: true,
        })
    }

    #[cfg(test)]
    pub(crate) fn untrained_for_tests(state_dim: usize, action_dim: usize) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        ReverseDynamicsModel {
            net: Mlp::new(&[state_dim + action_dim, state_dim + 1], Activation::Linear, &mut rng)
                .expect("valid dims"),
            target_stats: Normalizer::identity(state_dim + 1),
            state_dim,
            action_dim,
            trained: false,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ReverseManifest {
    target_stats: NormalizerRecord,
    state_dim: usize,
    action_dim: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_dataset, PointMass2D, Tier, Transition};

    fn small() -> ReverseConfig {
        ReverseConfig {
            hidden: vec![32, 32],
            batch_size: 64,
            max_epochs: 60,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_follow_dataset() {
        let ds = generate_dataset(&PointMass2D::default(), Tier::Medium, 1, 0).unwrap();
        let cfg = ReverseConfig {
            max_epochs: 1,
            ..small()
        };
        let (m, _) = ReverseDynamicsModel::train(&ds, &cfg, 0).unwrap();
        assert_eq!(m.net().in_dim(), 6);
        assert_eq!(m.net().out_dim(), 5);
    }

    #[test]
    fn repeated_transition_is_fit() {
        let t = Transition {
            s: vec![0.4, 0.1, -0.2, 0.3],
            a: vec![-0.5, 0.9],
            r: -2.0,
            s_next: vec![0.41, 0.12, -0.21, 0.33],
            done: false,
        };
        let ds = OfflineDataset::from_transitions(&vec![t.clone(); 64], Tier::Expert, None).unwrap();
        let (m, _) = ReverseDynamicsModel::train(&ds, &small(), 2).unwrap();
        let s_next = ds.state_stats.standardize_one(&t.s_next);
        let (s, r) = m.predict_reverse(&s_next, &t.a).unwrap();
        for (p, w) in ds.state_stats.unstandardize_one(&s).iter().zip(&t.s) {
            assert!((p - w).abs() < 1e-3, "{p} vs {w}");
        }
        assert!((r - t.r).abs() < 1e-3);
    }

    #[test]
    fn prediction_is_deterministic() {
        let ds = generate_dataset(&PointMass2D::default(), Tier::Medium, 2, 0).unwrap();
        let cfg = ReverseConfig {
            max_epochs: 3,
            ..small()
        };
        let (m, _) = ReverseDynamicsModel::train(&ds, &cfg, 0).unwrap();
        let a = m.predict_reverse(&[0.1, 0.2, 0.3, 0.4], &[0.5, -0.5]).unwrap();
        let b = m.predict_reverse(&[0.1, 0.2, 0.3, 0.4], &[0.5, -0.5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_model_is_rejected() {
        let m = ReverseDynamicsModel::untrained_for_tests(4, 2);
        assert!(matches!(
            m.predict_reverse(&[0.0; 4], &[0.0; 2]),
            Err(Error::Untrained(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = generate_dataset(&PointMass2D::default(), Tier::Medium, 1, 0).unwrap();
        let cfg = ReverseConfig {
            max_epochs: 1,
            ..small()
        };
        let (m, _) = ReverseDynamicsModel::train(&ds, &cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = ReverseDynamicsModel::load(dir.path()).unwrap();
        assert_eq!(back.net(), m.net());
    }
}
