use std::io::Write;
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BaseAlgoConfig, BaseAlgorithm, CqlSac, TrainingData, Variant};
use crate::anchor::{AnchorMechanism, DecompositionCache};
use crate::bilinear::{Actor, ApproxKind, Critic};
use crate::env::{clip_action, normalized_score, Action, Normalizer, OfflineDataset, PointMass2D, ScoreReference, State};
use crate::error::{Error, Result};
use crate::seeding::stream_rng;

/// A deterministic controller over raw environment states.
pub trait Policy {
    fn act(&self, s: &State) -> Result<Action>;
}

impl<F: Fn(&State) -> Result<Action>> Policy for F {
    fn act(&self, s: &State) -> Result<Action> {
        self(s)
    }
}

/// An actor evaluated through its variant's decomposition: states are
/// standardized, decomposed (bilinear kinds only), and mapped to `tanh(mean)`.
pub struct ActorPolicy<'a> {
    pub actor: &'a Actor,
    pub state_stats: &'a Normalizer,
    pub mechanism: Option<&'a AnchorMechanism>,
}

impl Policy for ActorPolicy<'_> {
    fn act(&self, s: &State) -> Result<Action> {
        let z = self.state_stats.standardize_one(s);
        let x = Array2::from_shape_vec((1, z.len()), z).map_err(|_| Error::shape("policy state", s.len(), s.len()))?;
        let decomposition = match (self.actor.kind(), self.mechanism) {
            (ApproxKind::Plain, _) => None,
            (ApproxKind::Bilinear, Some(m)) => Some(m.decompose_batch(&x)?),
            (ApproxKind::Bilinear, None) => {
                return Err(Error::InvalidConfig("bilinear actor evaluated without an anchor mechanism".into()))
            }
        };
        let a = self.actor.act_deterministic(&x, decomposition.as_ref())?;
        Ok(clip_action(a.row(0).as_slice().expect("row of a standard-layout array")))
    }
}

/// Mean undiscounted return over `n_episodes` episodes from the fixed start.
pub fn evaluate_policy(policy: &dyn Policy, env: &PointMass2D, n_episodes: usize) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be at least 1".into()));
    }
    // averaged as offsets from the first episode so identical returns stay exact
    let first = env.rollout(env.start(), |s, _| policy.act(s))?;
    let mut offset = 0.0;
    for _ in 1..n_episodes {
        offset += env.rollout(env.start(), |s, _| policy.act(s))? - first;
    }
    Ok(first + offset / n_episodes as f64)
}

pub const METRIC_COLUMNS: [&str; 7] = [
    "epoch",
    "actor_loss",
    "critic_loss",
    "cql_penalty",
    "mean_q",
    "eval_return",
    "normalized_score",
];

/// One metric-log row. Losses and Q statistics are averaged over the epoch's
/// gradient steps; the evaluation columns refer to the policy at epoch end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub cql_penalty: f64,
    pub mean_q: f64,
    pub eval_return: f64,
    pub normalized_score: f64,
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[EpochMetrics]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(METRIC_COLUMNS).map_err(csv_error)?;
    for r in rows {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &std::path::Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
    if header != METRIC_COLUMNS {
        return Err(Error::Format(format!("{}: unexpected metric header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Environment, score scale and failure checkpointing for a training run.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub env: PointMass2D,
    pub reference: ScoreReference,
    /// Where the last good actor is written if training aborts.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub actor: Actor,
    pub critic: Critic,
    pub metrics: Vec<EpochMetrics>,
}

fn check_mechanism(variant: Variant, mechanism: Option<&AnchorMechanism>) -> Result<()> {
    let ok = matches!(
        (variant, mechanism),
        (Variant::Alone, None)
            | (Variant::Cocoa, Some(AnchorMechanism::Seeking { .. }))
            | (Variant::CocoaNoAnchorSeeking, Some(AnchorMechanism::Heuristic { .. }))
    );
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "variant {variant} needs {}",
            match variant {
                Variant::Alone => "no anchor mechanism",
                Variant::Cocoa => "an anchor-seeking mechanism",
                Variant::CocoaNoAnchorSeeking => "a heuristic anchor mechanism",
            }
        )))
    }
}

/// Conservative SAC on `dataset` with the variant's approximator and anchors.
///
/// Decompositions of every dataset state are computed once up front; the anchor
/// models are frozen, so this equals per-minibatch recomputation.
pub fn train_offline(
    dataset: &OfflineDataset,
    variant: Variant,
    mechanism: Option<&AnchorMechanism>,
    config: &BaseAlgoConfig,
    seed: u64,
    eval: &EvalSetup,
) -> Result<TrainOutput> {
    config.validate()?;
    check_mechanism(variant, mechanism)?;
    let cache = mechanism.map(|m| DecompositionCache::build(m, dataset)).transpose()?;
    let data = TrainingData::new(dataset, cache)?;
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    let kind = variant.approx_kind();
    let actor = Actor::new(kind, sd, ad, &config.approx, &mut stream_rng(seed, "actor-init"))?;
    let critic = Critic::new(kind, sd, ad, &config.approx, &mut stream_rng(seed, "critic-init"))?;
    let mut algo = CqlSac::new(actor, critic, config)?;
    let mut rng = stream_rng(seed, "offline-train");
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let last_good = algo.actor.clone();
        let result = (|| -> Result<EpochMetrics> {
            let mut sums = [0.0; 4];
            for _ in 0..config.steps_per_epoch {
                let batch = data.sample(config.batch_size, &mut rng);
                let m = algo.update(&batch, &mut rng)?;
                for (acc, v) in sums.iter_mut().zip([m.actor_loss, m.critic_loss, m.cql_penalty, m.mean_q]) {
                    *acc += v;
                }
            }
            let n = config.steps_per_epoch as f64;
            let policy = ActorPolicy {
                actor: &algo.actor,
                state_stats: &dataset.state_stats,
                mechanism,
            };
            let eval_return = evaluate_policy(&policy, &eval.env, config.eval_episodes)?;
            Ok(EpochMetrics {
                epoch: epoch + 1,
                actor_loss: sums[0] / n,
                critic_loss: sums[1] / n,
                cql_penalty: sums[2] / n,
                mean_q: sums[3] / n,
                eval_return,
                normalized_score: normalized_score(eval_return, &eval.reference)?,
            })
        })();
        match result {
            Ok(m) => metrics.push(m),
            Err(e) => {
                if let Some(dir) = &eval.checkpoint_dir {
                    last_good.save(dir)?;
                }
                return Err(match e {
                    Error::NonFinite(msg) => Error::Divergence(format!("epoch {}: {msg}", epoch + 1)),
                    other => other,
                });
            }
        }
    }
    Ok(TrainOutput {
        actor: algo.actor,
        critic: algo.critic,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::anchor_call_count;
    use crate::bilinear::{ApproxConfig, BilinearConfig};
    use crate::env::{expert_action, generate_dataset, Tier};
    use std::sync::Arc;

    fn reference(env: &PointMass2D) -> ScoreReference {
        ScoreReference::measure(env, 5, 0).unwrap()
    }

    fn tiny() -> BaseAlgoConfig {
        BaseAlgoConfig {
            batch_size: 16,
            steps_per_epoch: 5,
            epochs: 2,
            eval_episodes: 2,
            cql_action_samples: 2,
            approx: ApproxConfig {
                hidden: vec![8],
                bilinear: BilinearConfig {
                    k: 2,
                    m: 3,
                    embed_hidden: vec![6],
                    post_hidden: vec![5],
                },
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_action_return_has_closed_form() {
        let env = PointMass2D::default();
        let zero = |_: &State| -> Result<Action> { Ok([0.0, 0.0]) };
        let j = evaluate_policy(&zero, &env, 1).unwrap();
        // the mass never moves from the origin
        let want = -(env.goal[0].hypot(env.goal[1])) * env.horizon as f64;
        assert!((j - want).abs() < 1e-9, "{j} vs {want}");
    }

    #[test]
    fn episode_count_does_not_change_deterministic_return() {
        let env = PointMass2D::default();
        let pd = |s: &State| -> Result<Action> { Ok(expert_action(&env, s)) };
        assert_eq!(
            evaluate_policy(&pd, &env, 1).unwrap(),
            evaluate_policy(&pd, &env, 10).unwrap()
        );
    }

    #[test]
    fn expert_wrapper_reproduces_reference() {
        let env = PointMass2D::default();
        let pd = |s: &State| -> Result<Action> { Ok(expert_action(&env, s)) };
        assert_eq!(evaluate_policy(&pd, &env, 3).unwrap(), reference(&env).j_expert);
    }

    #[test]
    fn runs_are_bitwise_reproducible_and_alone_skips_anchors() {
        let env = PointMass2D::default();
        let ds = generate_dataset(&env, Tier::Medium, 2, 0).unwrap();
        let setup = EvalSetup {
            env,
            reference: reference(&env),
            checkpoint_dir: None,
        };
        let before = anchor_call_count();
        let a = train_offline(&ds, Variant::Alone, None, &tiny(), 3, &setup).unwrap();
        assert_eq!(anchor_call_count(), before);
        let b = train_offline(&ds, Variant::Alone, None, &tiny(), 3, &setup).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_metrics_csv(&mut ca, &a.metrics).unwrap();
        write_metrics_csv(&mut cb, &b.metrics).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.metrics.len(), 2);
    }

    #[test]
    fn heuristic_variant_trains_and_evaluates() {
        let env = PointMass2D::default();
        let ds = generate_dataset(&env, Tier::Medium, 2, 0).unwrap();
        let mech = AnchorMechanism::Heuristic {
            states: Arc::new(ds.standardized_states()),
            candidates: 5,
            seed: 0,
        };
        let setup = EvalSetup {
            env,
            reference: reference(&env),
            checkpoint_dir: None,
        };
        let out = train_offline(&ds, Variant::CocoaNoAnchorSeeking, Some(&mech), &tiny(), 0, &setup).unwrap();
        assert!(out.metrics.iter().all(|m| m.eval_return.is_finite()));
        assert_eq!(out.actor.kind(), ApproxKind::Bilinear);
    }

    #[test]
    fn mechanism_must_match_variant() {
        let env = PointMass2D::default();
        let ds = generate_dataset(&env, Tier::Medium, 1, 0).unwrap();
        let setup = EvalSetup {
            env,
            reference: reference(&env),
            checkpoint_dir: None,
        };
        let mech = AnchorMechanism::Heuristic {
            states: Arc::new(ds.standardized_states()),
            candidates: 5,
            seed: 0,
        };
        for (v, m) in [
            (Variant::Alone, Some(&mech)),
            (Variant::Cocoa, Some(&mech)),
            (Variant::CocoaNoAnchorSeeking, None),
        ] {
            assert!(matches!(
                train_offline(&ds, v, m, &tiny(), 0, &setup),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn divergence_aborts_with_checkpoint() {
        let env = PointMass2D::default();
        let mut ds = generate_dataset(&env, Tier::Medium, 1, 0).unwrap();
        ds.rewards.fill(f64::NAN);
        let dir = tempfile::tempdir().unwrap();
        let setup = EvalSetup {
            env,
            reference: reference(&env),
            checkpoint_dir: Some(dir.path().to_path_buf()),
        };
        let err = train_offline(&ds, Variant::Alone, None, &tiny(), 0, &setup).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
        Actor::load(dir.path(), 4, 2).unwrap();
    }

    #[test]
    fn metric_csv_round_trip() {
        let rows: Vec<EpochMetrics> = (1..=3)
            .map(|e| EpochMetrics {
                epoch: e,
                actor_loss: 0.5 * e as f64,
                critic_loss: 1.25,
                cql_penalty: -0.1,
                mean_q: -30.0,
                eval_return: -120.5,
                normalized_score: 42.0 + e as f64,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(std::fs::File::create(&path).unwrap(), &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRIC_COLUMNS.join(","));
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == METRIC_COLUMNS.len()));
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }
}
