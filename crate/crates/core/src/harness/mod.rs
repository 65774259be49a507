//! Configuration, the staged pipeline with hash-keyed stage caching, the
//! ablation driver and plot-data emission.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! reference-seed<d>/                      score reference
//! <tier>/data-seed<d>/                    offline dataset
//! <tier>/pretrain-seed<p>/<stage>/        dynamics, reverse model, reverse buffer, anchor policy
//! <tier>/<variant>/seed<s>/train/         metrics.csv, actor/, critic/
//! <tier>/<variant>/seed<s>/manifest.json  run manifest
//! ablation/                               ablation.csv, summary.csv, summary.txt
//! curves/                                 per-run learning curves
//! ```
//!
//! Every stage directory carries a `stage.json` with the stage hash; a stage is
//! skipped when the recorded hash matches and its artifacts exist.

mod ablation;
mod pipeline;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use ablation::{emit_plots_data, format_summary, run_ablation, AblationCell, AblationReport, SummaryRow};
pub use pipeline::{
    load_trained_policy, run_dir, run_pipeline, run_stages, FailureRecord, RunManifest, Stage, StageRecord, TrainedPolicy,
};

use crate::algo::{BaseAlgoConfig, BcConfig, VariantSelector};
use crate::anchor::{AnchorPolicyConfig, ReversePolicyConfig};
use crate::dynamics::{DynamicsConfig, ReverseConfig};
use crate::env::{PointMass2D, Tier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub episodes: usize,
    /// Datasets are fixed across training seeds, as with published benchmark data.
    pub seed: u64,
    pub reference_random_episodes: usize,
    /// Seed for the dynamics/anchor pretraining stages. Unset: the run seed.
    pub pretrain_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            episodes: 50,
            seed: 0,
            reference_random_episodes: 100,
            pretrain_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Tier of a single pipeline run.
    pub tier: Tier,
    /// Seed of a single pipeline run.
    pub seed: u64,
    /// Tiers and seeds swept by the ablation driver.
    pub tiers: Vec<Tier>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub env: PointMass2D,
    pub data: DataConfig,
    pub dynamics: DynamicsConfig,
    pub reverse: ReverseConfig,
    pub reverse_policy: ReversePolicyConfig,
    pub anchor_policy: AnchorPolicyConfig,
    pub variant: VariantSelector,
    pub algo: BaseAlgoConfig,
    pub bc: BcConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tier: Tier::Medium,
            seed: 0,
            tiers: vec![Tier::Medium],
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs"),
            env: PointMass2D::default(),
            data: DataConfig::default(),
            dynamics: DynamicsConfig::default(),
            reverse: ReverseConfig::default(),
            reverse_policy: ReversePolicyConfig::default(),
            anchor_policy: AnchorPolicyConfig::default(),
            variant: VariantSelector::default(),
            algo: BaseAlgoConfig::default(),
            bc: BcConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Full dump with every default filled in.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.tiers.is_empty() {
            return bad("tiers must list at least one tier");
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed");
        }
        if self.data.episodes == 0 || self.data.reference_random_episodes == 0 {
            return bad("data.episodes and data.reference_random_episodes must be positive");
        }
        if self.variant.heuristic_candidates == 0 {
            return bad("variant.heuristic_candidates must be positive");
        }
        if self.env.horizon == 0 || !(self.env.dt > 0.0) || !(self.env.bound > 0.0) {
            return bad("env: horizon, dt and bound must be positive");
        }
        self.dynamics.validate()?;
        self.reverse.validate()?;
        self.reverse_policy.validate()?;
        self.anchor_policy.validate()?;
        self.algo.validate()?;
        self.bc.validate()
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    pub fn pretrain_seed(&self, run_seed: u64) -> u64 {
        self.data.pretrain_seed.unwrap_or(run_seed)
    }
}

pub(crate) fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize to JSON");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = PipelineConfig::default();
        assert_eq!(a.hash(), PipelineConfig::default().hash());
        let mut changed = vec![a.clone(); 5];
        changed[0].seed = 1;
        changed[1].algo.alpha_cql = 4.0;
        changed[2].reverse_policy.scale = 0.7;
        changed[3].variant.horizon = 2;
        changed[4].env.goal[1] = 2.5;
        for c in &changed {
            assert_ne!(c.hash(), a.hash());
        }
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c = PipelineConfig::from_toml("seed = 4\n[algo]\nepochs = 3\n[variant]\nvariant = \"alone\"\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.algo.epochs, 3);
        assert_eq!(c.algo.alpha_cql, 5.0);
        assert_eq!(c.variant.variant, crate::algo::Variant::Alone);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::from_toml("[algo]\ngamma = 1.0\n").is_err());
        assert!(PipelineConfig::from_toml("seeds = []\n").is_err());
        assert!(PipelineConfig::from_toml("[algo]\nlayer_norm = true\n").is_err());
        assert!(PipelineConfig::from_toml("unknown_key = 1\n").is_err());
    }
}
