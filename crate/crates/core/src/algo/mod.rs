//! Offline RL: behavior cloning and a conservative SAC (CQL-style critic
//! penalty) over plain or bilinear approximators.

mod bc;
mod cql;
pub(crate) mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bc::{bc_train, BcConfig, BcPolicy, BcReport};
pub use cql::{
    cql_critic_loss, cql_critic_loss_with_noise, sac_actor_loss, temperature_loss, ActorLoss, BaseAlgorithm, CqlNoise,
    CqlSac, CriticLoss, StepMetrics,
};
pub use train::{
    evaluate_policy, read_metrics_csv, train_offline, write_metrics_csv, ActorPolicy, EpochMetrics, EvalSetup, Policy,
    TrainOutput, METRIC_COLUMNS,
};

use crate::anchor::{DecomposedBatch, DecompositionCache};
use crate::bilinear::{ApproxConfig, ApproxKind};
use crate::env::OfflineDataset;
use crate::error::{Error, Result};
use crate::nn::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseAlgoConfig {
    pub gamma: f64,
    pub tau: f64,
    pub alpha_cql: f64,
    /// Entropy target for temperature tuning; `None` means `−|A|`.
    pub target_entropy: Option<f64>,
    pub initial_temperature: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    /// Uniform actions and policy actions (each) per state in the conservative penalty.
    pub cql_action_samples: usize,
    pub eval_episodes: usize,
    /// Layer normalization in the hidden layers. Accepted for config
    /// compatibility; only `false` is supported.
    pub layer_norm: bool,
    pub approx: ApproxConfig,
}

impl Default for BaseAlgoConfig {
    fn default() -> Self {
        BaseAlgoConfig {
            gamma: 0.99,
            tau: 5e-3,
            alpha_cql: 5.0,
            target_entropy: None,
            initial_temperature: 1.0,
            batch_size: 256,
            actor_lr: 1e-4,
            critic_lr: 3e-4,
            temperature_lr: 1e-2,
            steps_per_epoch: 1000,
            epochs: 10,
            cql_action_samples: 10,
            eval_episodes: 10,
            layer_norm: false,
            approx: ApproxConfig::default(),
        }
    }
}

impl BaseAlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("base algorithm: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} not in (0, 1]", self.tau));
        }
        if !(self.alpha_cql >= 0.0) {
            return bad(format!("alpha_cql {} must be >= 0", self.alpha_cql));
        }
        if !(self.initial_temperature > 0.0) {
            return bad("initial_temperature must be positive".into());
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.epochs == 0 || self.eval_episodes == 0 {
            return bad("batch_size, steps_per_epoch, epochs and eval_episodes must be positive".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.temperature_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.layer_norm {
            return bad("layer_norm = true is not supported".into());
        }
        self.approx.bilinear.validate()
    }

    pub fn target_entropy(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }
}

/// Which approximator and anchor mechanism a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain MLP actor and critic.
    Alone,
    /// Bilinear heads with heuristic dataset anchors.
    CocoaNoAnchorSeeking,
    /// Bilinear heads with anchor-seeking rollouts.
    Cocoa,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Alone, Variant::CocoaNoAnchorSeeking, Variant::Cocoa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Alone => "alone",
            Variant::CocoaNoAnchorSeeking => "cocoa_no_anchor_seeking",
            Variant::Cocoa => "cocoa",
        }
    }

    /// Column label in comparison reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Alone => "Alone",
            Variant::CocoaNoAnchorSeeking => "+COCOA (w/o A.S.)",
            Variant::Cocoa => "+COCOA",
        }
    }

    pub fn approx_kind(self) -> ApproxKind {
        match self {
            Variant::Alone => ApproxKind::Plain,
            _ => ApproxKind::Bilinear,
        }
    }

    pub fn uses_anchor_seeking(self) -> bool {
        self == Variant::Cocoa
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantSelector {
    pub variant: Variant,
    /// Anchor-seeking rollout length h.
    pub horizon: usize,
    /// Heuristic candidate count N.
    pub heuristic_candidates: usize,
}

impl Default for VariantSelector {
    fn default() -> Self {
        VariantSelector {
            variant: Variant::Cocoa,
            horizon: 1,
            heuristic_candidates: 30,
        }
    }
}

/// A minibatch in standardized state space, with decompositions when the
/// variant uses bilinear heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
    pub decomposition: Option<DecomposedBatch>,
    pub next_decomposition: Option<DecomposedBatch>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
}

/// Standardized dataset arrays plus optional cached decompositions, ready for
/// minibatch sampling.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
    pub decompositions: Option<DecompositionCache>,
}

impl TrainingData {
    pub fn new(dataset: &OfflineDataset, decompositions: Option<DecompositionCache>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidConfig("training needs a nonempty dataset".into()));
        }
        if let Some(c) = &decompositions {
            if c.states.len() != dataset.len() || c.next_states.len() != dataset.len() {
                return Err(Error::shape("decomposition cache rows", dataset.len(), c.states.len()));
            }
        }
        Ok(TrainingData {
            states: dataset.standardized_states(),
            actions: dataset.actions.clone(),
            rewards: dataset.rewards.clone(),
            next_states: dataset.standardized_next_states(),
            dones: dataset.dones.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect(),
            decompositions,
        })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            states: self.states.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            rewards: self.rewards.select(Axis(0), idx),
            next_states: self.next_states.select(Axis(0), idx),
            dones: self.dones.select(Axis(0), idx),
            decomposition: self.decompositions.as_ref().map(|c| c.states.select(idx)),
            next_decomposition: self.decompositions.as_ref().map(|c| c.next_states.select(idx)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Batch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        self.batch(&idx)
    }
}

/// `target ← (1 − τ)·target + τ·online`.
pub fn soft_update<T, O>(target: &mut T, online: &O, tau: f64) -> Result<()>
where
    T: Parameters + ?Sized,
    O: Parameters + ?Sized,
{
    let src = online.param_slices();
    let mut dst = target.param_slices_mut();
    if src.len() != dst.len() {
        return Err(Error::shape("soft update tensor count", dst.len(), src.len()));
    }
    for (d, s) in dst.iter().zip(&src) {
        if d.len() != s.len() {
            return Err(Error::shape("soft update tensor", d.len(), s.len()));
        }
    }
    for (d, s) in dst.iter_mut().zip(&src) {
        if tau == 1.0 {
            d.copy_from_slice(s);
        } else {
            for (t, &o) in d.iter_mut().zip(s.iter()) {
                *t = (1.0 - tau) * *t + tau * o;
            }
        }
    }
    Ok(())
}

/// Log of the entropy temperature, tuned by gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTemperature {
    pub value: [f64; 1],
}

impl LogTemperature {
    pub fn new(temperature: f64) -> Self {
        LogTemperature {
            value: [temperature.ln()],
        }
    }

    pub fn temperature(&self) -> f64 {
        self.value[0].exp()
    }
}

impl Parameters for LogTemperature {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.value]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.value]
    }
}
