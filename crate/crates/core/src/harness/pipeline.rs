use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{hash_json, PipelineConfig};
use crate::algo::{
    evaluate_policy, train_offline, write_metrics_csv, ActorPolicy, EvalSetup, Variant, VariantSelector,
};
use crate::anchor::{generate_reverse_buffer, AnchorMechanism, AnchorSeekingPolicy, ReverseBuffer};
use crate::bilinear::Actor;
use crate::dynamics::{DynamicsEnsemble, ReverseDynamicsModel};
use crate::env::{generate_dataset, normalized_score, OfflineDataset, ScoreReference, Tier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Data,
    Reference,
    Dynamics,
    Reverse,
    ReverseBuffer,
    AnchorPolicy,
    Train,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Data,
        Stage::Reference,
        Stage::Dynamics,
        Stage::Reverse,
        Stage::ReverseBuffer,
        Stage::AnchorPolicy,
        Stage::Train,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Reference => "reference",
            Stage::Dynamics => "dynamics",
            Stage::Reverse => "reverse",
            Stage::ReverseBuffer => "reverse-buffer",
            Stage::AnchorPolicy => "anchor-policy",
            Stage::Train => "train",
        }
    }

    fn deps(self, variant: Variant) -> Vec<Stage> {
        match self {
            Stage::Data | Stage::Reference => vec![],
            Stage::Dynamics | Stage::Reverse => vec![Stage::Data],
            Stage::ReverseBuffer => vec![Stage::Data, Stage::Reverse],
            Stage::AnchorPolicy => vec![Stage::ReverseBuffer],
            Stage::Train if variant.uses_anchor_seeking() => {
                vec![Stage::Data, Stage::Reference, Stage::Dynamics, Stage::AnchorPolicy]
            }
            Stage::Train => vec![Stage::Data, Stage::Reference],
        }
    }

    /// `targets` plus everything they depend on, in execution order.
    pub fn closure(targets: &[Stage], variant: Variant) -> Vec<Stage> {
        let mut needed = std::collections::BTreeSet::new();
        let mut stack = targets.to_vec();
        while let Some(s) = stack.pop() {
            if needed.insert(s) {
                stack.extend(s.deps(variant));
            }
        }
        needed.into_iter().collect()
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub hash: String,
    pub dir: PathBuf,
    /// True when the outputs of an earlier run were reused.
    pub reused: bool,
    /// Wall-clock seconds of the run that produced the outputs.
    pub seconds: f64,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tier: Tier,
    pub variant: Variant,
    pub seed: u64,
    pub version: String,
    pub stages: Vec<StageRecord>,
    pub failure: Option<FailureRecord>,
    pub metrics: Option<PathBuf>,
    pub final_normalized_score: Option<f64>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("manifest.json")
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let p = Self::path(run_dir);
        let text = fs::read_to_string(&p).map_err(|_| Error::MissingArtifact(p.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Turns a recorded failure into an error.
    pub fn ok(&self) -> Result<&Self> {
        match &self.failure {
            None => Ok(self),
            Some(f) => Err(Error::Divergence(format!("stage {} failed ({}): {}", f.stage, f.kind, f.message))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StageMeta {
    stage: Stage,
    hash: String,
    seconds: f64,
    artifacts: Vec<String>,
}

/// Where each stage of one (tier, variant, seed) run lives.
pub(crate) struct Layout {
    root: PathBuf,
    tier: Tier,
    variant: Variant,
    seed: u64,
    data_seed: u64,
    pretrain_seed: u64,
}

impl Layout {
    pub(crate) fn new(config: &PipelineConfig) -> Self {
        Layout {
            root: config.out_dir.clone(),
            tier: config.tier,
            variant: config.variant.variant,
            seed: config.seed,
            data_seed: config.data.seed,
            pretrain_seed: config.pretrain_seed(config.seed),
        }
    }

    pub(crate) fn run_dir(&self) -> PathBuf {
        self.root
            .join(self.tier.name())
            .join(self.variant.name())
            .join(format!("seed{}", self.seed))
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        let tier = self.root.join(self.tier.name());
        match stage {
            Stage::Data => tier.join(format!("data-seed{}", self.data_seed)),
            Stage::Reference => self.root.join(format!("reference-seed{}", self.data_seed)),
            Stage::Train => self.run_dir().join("train"),
            s => tier.join(format!("pretrain-seed{}", self.pretrain_seed)).join(s.name()),
        }
    }
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    layout: Layout,
    hashes: std::collections::BTreeMap<Stage, String>,
}

impl Runner<'_> {
    fn variant(&self) -> Variant {
        self.config.variant.variant
    }

    fn stage_hash(&self, stage: Stage) -> String {
        let c = self.config;
        let (seed, inputs) = match stage {
            Stage::Data => (c.data.seed, json!({"env": c.env, "tier": c.tier, "episodes": c.data.episodes})),
            Stage::Reference => (
                c.data.seed,
                json!({"env": c.env, "random_episodes": c.data.reference_random_episodes}),
            ),
            Stage::Dynamics => (self.layout.pretrain_seed, json!(c.dynamics)),
            Stage::Reverse => (self.layout.pretrain_seed, json!(c.reverse)),
            Stage::ReverseBuffer => (self.layout.pretrain_seed, json!(c.reverse_policy)),
            Stage::AnchorPolicy => (self.layout.pretrain_seed, json!(c.anchor_policy)),
            Stage::Train => (
                c.seed,
                json!({"env": c.env, "variant": self.selector(), "algo": c.algo}),
            ),
        };
        let upstream: Vec<&String> = stage.deps(self.variant()).iter().map(|d| &self.hashes[d]).collect();
        hash_json(&json!({"stage": stage, "seed": seed, "inputs": inputs, "upstream": upstream}))
    }

    /// Only the fields the chosen variant actually reads.
    fn selector(&self) -> serde_json::Value {
        let v: &VariantSelector = &self.config.variant;
        match v.variant {
            Variant::Alone => json!({"variant": v.variant}),
            Variant::Cocoa => json!({"variant": v.variant, "horizon": v.horizon}),
            Variant::CocoaNoAnchorSeeking => json!({"variant": v.variant, "candidates": v.heuristic_candidates}),
        }
    }

    fn cached(&self, dir: &Path, hash: &str) -> Option<StageMeta> {
        let text = fs::read_to_string(dir.join("stage.json")).ok()?;
        let meta: StageMeta = serde_json::from_str(&text).ok()?;
        (meta.hash == hash && meta.artifacts.iter().all(|a| artifact_present(&dir.join(a)))).then_some(meta)
    }

    fn dataset(&self) -> Result<OfflineDataset> {
        OfflineDataset::load(&self.layout.stage_dir(Stage::Data).join("dataset.cocoadat"))
    }

    fn execute(&self, stage: Stage, dir: &Path) -> Result<Vec<String>> {
        let c = self.config;
        let pseed = self.layout.pretrain_seed;
        let dir_of = |s: Stage| self.layout.stage_dir(s);
        match stage {
            Stage::Data => {
                let ds = generate_dataset(&c.env, c.tier, c.data.episodes, c.data.seed)?;
                ds.save(&dir.join("dataset.cocoadat"))?;
                ds.write_csv(&mut std::io::BufWriter::new(fs::File::create(dir.join("dataset.csv"))?))?;
                Ok(vec!["dataset.cocoadat".into(), "dataset.csv".into()])
            }
            Stage::Reference => {
                let r = ScoreReference::measure(&c.env, c.data.reference_random_episodes, c.data.seed)?;
                write_json(&dir.join("reference.json"), &r)?;
                Ok(vec!["reference.json".into()])
            }
            Stage::Dynamics => {
                let (ens, report) = DynamicsEnsemble::train(&self.dataset()?, &c.dynamics, pseed)?;
                ens.save(&dir.join("model"))?;
                write_json(
                    &dir.join("report.json"),
                    &json!({"member_val_mse": report.member_val_mse, "epochs": report.member_nll.iter().map(Vec::len).collect::<Vec<_>>()}),
                )?;
                Ok(vec!["model".into(), "report.json".into()])
            }
            Stage::Reverse => {
                let (model, report) = ReverseDynamicsModel::train(&self.dataset()?, &c.reverse, pseed)?;
                model.save(&dir.join("model"))?;
                write_json(
                    &dir.join("report.json"),
                    &json!({"heldout_state_mse": report.heldout_state_mse, "curve": report.curve}),
                )?;
                Ok(vec!["model".into(), "report.json".into()])
            }
            Stage::ReverseBuffer => {
                let model = ReverseDynamicsModel::load(&dir_of(Stage::Reverse).join("model"))?;
                let buffer = generate_reverse_buffer(&self.dataset()?, &model, &c.reverse_policy, pseed)?;
                buffer.save(&dir.join("buffer.cocoadat"))?;
                Ok(vec!["buffer.cocoadat".into()])
            }
            Stage::AnchorPolicy => {
                let buffer = ReverseBuffer::load(&dir_of(Stage::ReverseBuffer).join("buffer.cocoadat"))?;
                let (policy, report) = AnchorSeekingPolicy::train(&buffer, &c.anchor_policy, pseed)?;
                policy.save(&dir.join("anchor_policy.net"))?;
                write_json(
                    &dir.join("report.json"),
                    &json!({"final_mse": report.final_mse, "curve": report.curve}),
                )?;
                Ok(vec!["anchor_policy.net".into(), "report.json".into()])
            }
            Stage::Train => {
                let ds = self.dataset()?;
                let reference = read_reference(&dir_of(Stage::Reference))?;
                let mechanism = mechanism(self.config, &self.layout, &ds)?;
                let setup = EvalSetup {
                    env: c.env,
                    reference,
                    checkpoint_dir: Some(dir.join("last-good")),
                };
                let out = train_offline(&ds, self.variant(), mechanism.as_ref(), &c.algo, c.seed, &setup)?;
                write_metrics_csv(fs::File::create(dir.join("metrics.csv"))?, &out.metrics)?;
                out.actor.save(&dir.join("actor"))?;
                out.critic.save(&dir.join("critic"))?;
                Ok(vec!["metrics.csv".into(), "actor".into(), "critic".into()])
            }
        }
    }
}

fn artifact_present(p: &Path) -> bool {
    match fs::metadata(p) {
        Ok(m) if m.is_dir() => fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false),
        Ok(m) => m.len() > 0,
        Err(_) => false,
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

fn read_reference(dir: &Path) -> Result<ScoreReference> {
    let text = fs::read_to_string(dir.join("reference.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

fn mechanism(config: &PipelineConfig, layout: &Layout, ds: &OfflineDataset) -> Result<Option<AnchorMechanism>> {
    Ok(match config.variant.variant {
        Variant::Alone => None,
        Variant::Cocoa => Some(AnchorMechanism::Seeking {
            policy: Arc::new(AnchorSeekingPolicy::load(
                &layout.stage_dir(Stage::AnchorPolicy).join("anchor_policy.net"),
            )?),
            ensemble: Arc::new(DynamicsEnsemble::load(&layout.stage_dir(Stage::Dynamics).join("model"))?),
            horizon: config.variant.horizon,
        }),
        Variant::CocoaNoAnchorSeeking => Some(AnchorMechanism::Heuristic {
            states: Arc::new(ds.standardized_states()),
            candidates: config.variant.heuristic_candidates,
            seed: config.seed,
        }),
    })
}

/// Runs `targets` and their dependencies for the configured tier, variant and
/// seed, reusing stage outputs whose hash matches. A failing stage is recorded
/// in the manifest and stops the run; the manifest is written either way.
pub fn run_stages(config: &PipelineConfig, targets: &[Stage]) -> Result<RunManifest> {
    config.validate()?;
    let started = Instant::now();
    let mut runner = Runner {
        config,
        layout: Layout::new(config),
        hashes: Default::default(),
    };
    let mut manifest = RunManifest {
        config_hash: config.hash(),
        tier: config.tier,
        variant: config.variant.variant,
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        stages: Vec::new(),
        failure: None,
        metrics: None,
        final_normalized_score: None,
        total_seconds: 0.0,
    };
    for stage in Stage::closure(targets, config.variant.variant) {
        let hash = runner.stage_hash(stage);
        runner.hashes.insert(stage, hash.clone());
        let dir = runner.layout.stage_dir(stage);
        let (meta, reused) = match runner.cached(&dir, &hash) {
            Some(meta) => (meta, true),
            None => {
                let t = Instant::now();
                let result = fs::create_dir_all(&dir)
                    .map_err(Error::from)
                    .and_then(|_| fs::remove_file(dir.join("stage.json")).or_else(ignore_missing))
                    .and_then(|_| runner.execute(stage, &dir));
                match result {
                    Ok(artifacts) => {
                        let meta = StageMeta {
                            stage,
                            hash: hash.clone(),
                            seconds: t.elapsed().as_secs_f64(),
                            artifacts,
                        };
                        write_json(&dir.join("stage.json"), &meta)?;
                        (meta, false)
                    }
                    Err(e) => {
                        manifest.failure = Some(FailureRecord {
                            stage,
                            kind: e.kind().into(),
                            message: e.to_string(),
                        });
                        break;
                    }
                }
            }
        };
        manifest.stages.push(StageRecord {
            stage,
            hash,
            artifacts: meta.artifacts.iter().map(|a| dir.join(a)).collect(),
            dir,
            reused,
            seconds: meta.seconds,
        });
    }
    if manifest.failure.is_none() {
        if let Some(train) = manifest.stage(Stage::Train) {
            let path = train.dir.join("metrics.csv");
            let rows = crate::algo::read_metrics_csv(&path)?;
            manifest.final_normalized_score = rows.last().map(|r| r.normalized_score);
            manifest.metrics = Some(path);
        }
    }
    manifest.total_seconds = started.elapsed().as_secs_f64();
    let run_dir = runner.layout.run_dir();
    fs::create_dir_all(&run_dir)?;
    write_json(&RunManifest::path(&run_dir), &manifest)?;
    Ok(manifest)
}

fn ignore_missing(e: std::io::Error) -> Result<()> {
    if e.kind() == std::io::ErrorKind::NotFound {
        Ok(())
    } else {
        Err(e.into())
    }
}

/// Directory holding the manifest and training outputs of the configured run.
pub fn run_dir(config: &PipelineConfig) -> PathBuf {
    Layout::new(config).run_dir()
}

/// Every stage the configured variant needs, ending with policy training.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    run_stages(config, &[Stage::Train])
}

/// A trained actor with everything needed to evaluate it.
pub struct TrainedPolicy {
    pub actor: Actor,
    pub mechanism: Option<AnchorMechanism>,
    pub dataset: OfflineDataset,
    pub reference: ScoreReference,
}

impl TrainedPolicy {
    /// `(mean return, normalized score)` over `episodes` deterministic episodes.
    pub fn evaluate(&self, env: &crate::env::PointMass2D, episodes: usize) -> Result<(f64, f64)> {
        let policy = ActorPolicy {
            actor: &self.actor,
            state_stats: &self.dataset.state_stats,
            mechanism: self.mechanism.as_ref(),
        };
        let j = evaluate_policy(&policy, env, episodes)?;
        Ok((j, normalized_score(j, &self.reference)?))
    }
}

/// Loads the outputs of a finished [`run_pipeline`] for `config`.
pub fn load_trained_policy(config: &PipelineConfig) -> Result<TrainedPolicy> {
    let layout = Layout::new(config);
    let train = layout.stage_dir(Stage::Train);
    if !artifact_present(&train.join("actor")) {
        return Err(Error::MissingArtifact(format!("{} (run the train stage first)", train.join("actor").display())));
    }
    let dataset = OfflineDataset::load(&layout.stage_dir(Stage::Data).join("dataset.cocoadat"))?;
    let actor = Actor::load(&train.join("actor"), dataset.state_dim(), dataset.action_dim())?;
    Ok(TrainedPolicy {
        actor,
        mechanism: mechanism(config, &layout, &dataset)?,
        reference: read_reference(&layout.stage_dir(Stage::Reference))?,
        dataset,
    })
}
