use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    forward_regression, join_input, read_manifest, rows, split_indices, write_manifest,
    DynamicsConfig, NormalizerRecord,
};
use crate::env::{Normalizer, OfflineDataset};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_net, save_net};
use crate::nn::fit::fit;
use crate::nn::Mlp;
use crate::seeding::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictMode {
    /// Average of the elite means; deterministic.
    Mean,
    /// Uniformly chosen elite, one Gaussian draw.
    Sample,
}

/// Ensemble of Gaussian forward models `(s_std, a) → (Δs_std, r)`.
#[derive(Debug, Clone)]
pub struct DynamicsEnsemble {
    members: Vec<Mlp>,
    elites: Vec<usize>,
    target_stats: Normalizer,
    min_log_var: f64,
    max_log_var: f64,
    state_dim: usize,
    action_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean training NLL per epoch, one curve per member.
    pub member_nll: Vec<Vec<f64>>,
    /// Best validation MSE per member (normalized target units).
    pub member_val_mse: Vec<f64>,
    pub val_indices: Vec<usize>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Lowest-loss `k` indices, ties broken by index.
pub(crate) fn select_elites(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

impl DynamicsEnsemble {
    fn out_dim(&self) -> usize {
        self.state_dim + 1
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.members
    }

    pub fn elites(&self) -> &[usize] {
        &self.elites
    }

    pub fn is_trained(&self) -> bool {
        !self.elites.is_empty()
    }

    /// Soft-clamped log-variance and its derivative with respect to the raw output.
    fn log_var(&self, raw: f64) -> (f64, f64) {
        let upper = self.max_log_var - softplus(self.max_log_var - raw);
        let lv = self.min_log_var + softplus(upper - self.min_log_var);
        // the outer softplus overshoots `max` by at most e^(min−max); clip it
        if lv > self.max_log_var {
            return (self.max_log_var, 0.0);
        }
        let d = sigmoid(upper - self.min_log_var) * sigmoid(self.max_log_var - raw);
        (lv, d)
    }

    /// Raw member output split into normalized means and log-variances.
    fn split_output(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let d = self.out_dim();
        let mean = out.slice(s![.., ..d]).to_owned();
        let log_var = out.slice(s![.., d..]).mapv(|v| self.log_var(v).0);
        (mean, log_var)
    }

    /// Gaussian NLL (mean over the batch) and its gradient with respect to the raw output.
    fn nll(&self, out: &Array2<f64>, z: ArrayView2<f64>) -> (f64, Array2<f64>) {
        let d = self.out_dim();
        let b = out.nrows() as f64;
        let mut grad = Array2::zeros(out.raw_dim());
        let mut loss = 0.0;
        for i in 0..out.nrows() {
            for j in 0..d {
                let (lv, dlv) = self.log_var(out[[i, d + j]]);
                let err = out[[i, j]] - z[[i, j]];
                let inv_var = (-lv).exp();
                loss += 0.5 * (err * err * inv_var + lv);
                grad[[i, j]] = err * inv_var / b;
                grad[[i, d + j]] = 0.5 * (1.0 - err * err * inv_var) * dlv / b;
            }
        }
        (loss / b, grad)
    }

    fn normalized_mse(&self, member: &Mlp, inputs: &Array2<f64>, z: &Array2<f64>) -> Result<f64> {
        let out = member.forward(inputs.view())?;
        let mean = out.slice(s![.., ..self.out_dim()]);
        let diff = &mean - z;
        Ok(diff.mapv(|v| v * v).mean().unwrap_or(0.0))
    }

    /// Validation MSE of every member's mean prediction on raw targets.
    pub fn score_members(&self, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<Vec<f64>> {
        let z = self.target_stats.standardize(targets);
        self.members
            .iter()
            .map(|m| self.normalized_mse(m, inputs, &z))
            .collect()
    }

    /// Trains every member on Gaussian NLL with early stopping and keeps the
    /// `elite_count` members with the lowest validation MSE.
    pub fn train(dataset: &OfflineDataset, config: &DynamicsConfig, seed: u64) -> Result<(Self, TrainingReport)> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        let data = forward_regression(dataset);
        let (train_idx, val_idx) =
            split_indices(dataset.len(), config.val_fraction, &mut stream_rng(seed, "dynamics-split"));
        let train_x = rows(&data.inputs, &train_idx);
        let val_x = rows(&data.inputs, &val_idx);
        let target_stats = Normalizer::fit(&rows(&data.targets, &train_idx))?;
        let train_z = target_stats.standardize(&rows(&data.targets, &train_idx));
        let val_z = target_stats.standardize(&rows(&data.targets, &val_idx));

        let sd = dataset.state_dim();
        let ad = dataset.action_dim();
        let mut dims = vec![sd + ad];
        dims.extend(&config.hidden);
        dims.push(2 * (sd + 1));

        let mut ensemble = DynamicsEnsemble {
            members: Vec::with_capacity(config.ensemble_size),
            elites: Vec::new(),
            target_stats,
            min_log_var: config.min_log_var,
            max_log_var: config.max_log_var,
            state_dim: sd,
            action_dim: ad,
        };
        let mut member_nll = Vec::new();
        let mut member_val_mse = Vec::new();
        for k in 0..config.ensemble_size {
            let mut rng = stream_rng(seed, &format!("dynamics-member-{k}"));
            let mut net = Mlp::new(&dims, config.activation(), &mut rng)?;
            let (curve, best) = ensemble.fit_member(&mut net, &train_x, &train_z, &val_x, &val_z, config, &mut rng, k)?;
            ensemble.members.push(net);
            member_nll.push(curve);
            member_val_mse.push(best);
        }
        let scores = ensemble
            .members
            .iter()
            .map(|m| ensemble.normalized_mse(m, &val_x, &val_z))
            .collect::<Result<Vec<_>>>()?;
        ensemble.elites = select_elites(&scores, config.elite_count);
        Ok((
            ensemble,
            TrainingReport {
                member_nll,
                member_val_mse,
                val_indices: val_idx,
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn fit_member<R: Rng>(
        &self,
        net: &mut Mlp,
        train_x: &Array2<f64>,
        train_z: &Array2<f64>,
        val_x: &Array2<f64>,
        val_z: &Array2<f64>,
        config: &DynamicsConfig,
        rng: &mut R,
        member: usize,
    ) -> Result<(Vec<f64>, f64)> {
        let settings = config.fit_settings();
        let loss = |out: &Array2<f64>, z: ArrayView2<f64>| self.nll(out, z);
        let mut validate = |n: &Mlp| self.normalized_mse(n, val_x, val_z);
        let outcome = fit(
            net,
            train_x,
            train_z,
            &settings,
            rng,
            &format!("dynamics member {member}"),
            &loss,
            Some(&mut validate),
        )?;
        Ok((outcome.curve, outcome.best))
    }

    fn check_batch(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<()> {
        if !self.is_trained() {
            return Err(Error::Untrained("dynamics ensemble"));
        }
        if s.ncols() != self.state_dim {
            return Err(Error::shape("dynamics state", self.state_dim, s.ncols()));
        }
        if a.ncols() != self.action_dim {
            return Err(Error::shape("dynamics action", self.action_dim, a.ncols()));
        }
        Ok(())
    }

    /// Elite-mean prediction for a batch of standardized states.
    /// Returns `(s'_std, r)`.
    pub fn predict_mean(&self, s: &Array2<f64>, a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(s, a)?;
        let x = join_input(s, a)?;
        let mut acc = Array2::<f64>::zeros((s.nrows(), self.out_dim()));
        for &e in &self.elites {
            let out = self.members[e].forward(x.view())?;
            acc += &out.slice(s![.., ..self.out_dim()]);
        }
        acc /= self.elites.len() as f64;
        Ok(self.decode(s, &acc))
    }

    /// Draws one prediction per row from a uniformly chosen elite.
    pub fn predict_sample<R: Rng + ?Sized>(
        &self,
        s: &Array2<f64>,
        a: &Array2<f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(s, a)?;
        let x = join_input(s, a)?;
        let member = self.elites[rng.random_range(0..self.elites.len())];
        let out = self.members[member].forward(x.view())?;
        let (mean, log_var) = self.split_output(&out);
        let mut z = mean;
        z.zip_mut_with(&log_var, |m, &lv| {
            let eps: f64 = rng.sample(StandardNormal);
            *m += (0.5 * lv).exp() * eps;
        });
        Ok(self.decode(s, &z))
    }

    /// Single-state convenience wrapper.
    pub fn predict_forward<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        a: &[f64],
        mode: PredictMode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let sb = Array2::from_shape_vec((1, s.len()), s.to_vec())
            .map_err(|_| Error::shape("dynamics state", self.state_dim, s.len()))?;
        let ab = Array2::from_shape_vec((1, a.len()), a.to_vec())
            .map_err(|_| Error::shape("dynamics action", self.action_dim, a.len()))?;
        let (next, r) = match mode {
            PredictMode::Mean => self.predict_mean(&sb, &ab)?,
            PredictMode::Sample => self.predict_sample(&sb, &ab, rng)?,
        };
        Ok((next.row(0).to_vec(), r[0]))
    }

    /// Normalized target → `(s + Δs, r)`.
    fn decode(&self, s: &Array2<f64>, z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let raw = z * &self.target_stats.std + &self.target_stats.mean;
        let next = s + &raw.slice(s![.., ..self.state_dim]);
        let r = raw.column(self.state_dim).to_owned();
        (next, r)
    }

    /// Predictive standard deviation at the log-variance floor, per output
    /// dimension `(Δs_std.., r)`.
    pub fn min_std(&self) -> Array1<f64> {
        self.target_stats.std.mapv(|s| s * (0.5 * self.min_log_var).exp())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, m) in self.members.iter().enumerate() {
            save_net(m, &dir.join(format!("member_{k}.net")))?;
        }
        write_manifest(
            dir,
            &EnsembleManifest {
                member_count: self.members.len(),
                elites: self.elites.clone(),
                target_stats: (&self.target_stats).into(),
                min_log_var: self.min_log_var,
                max_log_var: self.max_log_var,
                state_dim: self.state_dim,
                action_dim: self.action_dim,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: EnsembleManifest = read_manifest(dir)?;
        let members = (0..m.member_count)
            .map(|k| load_net(&dir.join(format!("member_{k}.net"))))
            .collect::<Result<Vec<_>>>()?;
        if m.elites.iter().any(|&e| e >= members.len()) {
            return Err(Error::Format("elite index out of range".into()));
        }
        Ok(DynamicsEnsemble {
            members,
            elites: m.elites,
            target_stats: m.target_stats.into(),
            min_log_var: m.min_log_var,
            max_log_var: m.max_log_var,
            state_dim: m.state_dim,
            action_dim: m.action_dim,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    member_count: usize,
    elites: Vec<usize>,
    target_stats: NormalizerRecord,
    min_log_var: f64,
    max_log_var: f64,
    state_dim: usize,
    action_dim: usize,
}
