//! Statistical and model-level properties that need real training runs, plus
//! property-based checks of environment and scoring invariants.

use std::sync::OnceLock;

use ndarray::{concatenate, Array1, Array2, Axis};
use proptest::prelude::*;

use cocoa::algo::{BaseAlgoConfig, BaseAlgorithm, CqlSac, TrainingData};
use cocoa::bilinear::{Actor, ApproxKind, Critic};
use cocoa::dynamics::{DynamicsConfig, DynamicsEnsemble, ReverseConfig, ReverseDynamicsModel, TrainingReport};
use cocoa::env::{generate_dataset, normalized_score, Normalizer, OfflineDataset, PointMass2D, ScoreReference, Tier};
use cocoa::seeding::stream_rng;

struct Models {
    train: OfflineDataset,
    /// Fresh episodes never seen in training, standardized with the training statistics.
    fresh: OfflineDataset,
    ensemble: DynamicsEnsemble,
    report: TrainingReport,
    reverse: ReverseDynamicsModel,
}

fn models() -> &'static Models {
    static MODELS: OnceLock<Models> = OnceLock::new();
    MODELS.get_or_init(|| {
        let env = PointMass2D::default();
        let train = generate_dataset(&env, Tier::Medium, 50, 0).unwrap();
        let mut fresh = generate_dataset(&env, Tier::Medium, 10, 1).unwrap();
        fresh.state_stats = train.state_stats.clone();
        let (ensemble, report) = DynamicsEnsemble::train(&train, &DynamicsConfig::default(), 0).unwrap();
        let (reverse, _) = ReverseDynamicsModel::train(&train, &ReverseConfig::default(), 0).unwrap();
        Models {
            train,
            fresh,
            ensemble,
            report,
            reverse,
        }
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn row_norms(diff: &Array2<f64>) -> Vec<f64> {
    diff.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

fn rmse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let d = a - b;
    (d.mapv(|x| x * x).sum() / d.len() as f64).sqrt()
}

#[test]
fn tiers_are_return_ordered() {
    let env = PointMass2D::default();
    let mean = |tier| {
        generate_dataset(&env, tier, 100, 7)
            .unwrap()
            .mean_episode_return(env.horizon)
    };
    let (random, medium, expert) = (mean(Tier::Random), mean(Tier::Medium), mean(Tier::Expert));
    assert!(random < medium && medium < expert, "{random} {medium} {expert}");
}

#[test]
fn ensemble_nll_decreases() {
    for (k, curve) in models().report.member_nll.iter().enumerate() {
        assert!(curve.len() >= 2, "member {k} trained for {} epochs", curve.len());
        // short curves (early stopping) get a window that still leaves two points
        let w = 10.min(curve.len() / 2);
        let smooth: Vec<f64> = curve.windows(w).map(|c| c.iter().sum::<f64>() / w as f64).collect();
        let first = smooth[0];
        let last = *smooth.last().unwrap();
        assert!(last < first, "member {k}: smoothed NLL {first} -> {last}");
        // a rise may not exceed 1% of the total drop
        let slack = 0.01 * (first - last);
        for (i, pair) in smooth.windows(2).enumerate() {
            assert!(pair[1] <= pair[0] + slack, "member {k} rises at {i}: {} -> {}", pair[0], pair[1]);
        }
    }
}

#[test]
fn rescoring_members_reproduces_elites() {
    let m = models();
    let ds = &m.train;
    let s = ds.standardized_states();
    let s_next = ds.standardized_next_states();
    let inputs = concatenate![Axis(1), s, ds.actions];
    let targets = concatenate![Axis(1), &s_next - &s, ds.rewards.clone().insert_axis(Axis(1))];
    let idx = &m.report.val_indices;
    let scores = m
        .ensemble
        .score_members(&inputs.select(Axis(0), idx), &targets.select(Axis(0), idx))
        .unwrap();
    for (a, b) in scores.iter().zip(&m.report.member_val_mse) {
        assert!((a - b).abs() <= 1e-12 * b.max(1e-12), "{a} vs {b}");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(m.ensemble.elites().len());
    assert_eq!(order, m.ensemble.elites());
}

#[test]
fn fresh_forward_error_is_within_twice_validation_error() {
    let m = models();
    let state_rmse = |ds: &OfflineDataset, idx: &[usize]| {
        let s = ds.standardized_states().select(Axis(0), idx);
        let a = ds.actions.select(Axis(0), idx);
        let (pred, _) = m.ensemble.predict_mean(&s, &a).unwrap();
        rmse(&pred, &ds.standardized_next_states().select(Axis(0), idx))
    };
    let val = state_rmse(&m.train, &m.report.val_indices);
    let all: Vec<usize> = (0..m.fresh.len()).collect();
    assert_eq!(all.len(), 1000);
    let fresh = state_rmse(&m.fresh, &all);
    assert!(fresh <= 2.0 * val, "fresh {fresh} vs validation {val}");
}

#[test]
fn reverse_model_recovers_fresh_predecessors() {
    let m = models();
    let ds = &m.fresh;
    let s = ds.standardized_states();
    let (pred, r) = m.reverse.predict_batch(&ds.standardized_next_states(), &ds.actions).unwrap();
    let state_err = median(row_norms(&(&pred - &s)));
    let reward_err = median((&r - &ds.rewards).mapv(f64::abs).to_vec());
    assert!(state_err < 0.05, "state {state_err}");
    assert!(reward_err < 0.05, "reward {reward_err}");
}

#[test]
fn reverse_undoes_forward() {
    let m = models();
    let ds = &m.fresh;
    let s = ds.standardized_states();
    let (s_next, _) = m.ensemble.predict_mean(&s, &ds.actions).unwrap();
    let (back, _) = m.reverse.predict_batch(&s_next, &ds.actions).unwrap();
    let err = median(row_norms(&(&back - &s)));
    assert!(err < 0.1, "{err}");
}

#[test]
fn temperature_tuning_reaches_entropy_target() {
    let env = PointMass2D::default();
    let ds = generate_dataset(&env, Tier::Medium, 50, 0).unwrap();
    let cfg = BaseAlgoConfig::default();
    let data = TrainingData::new(&ds, None).unwrap();
    let actor = Actor::new(ApproxKind::Plain, 4, 2, &cfg.approx, &mut stream_rng(0, "actor-init")).unwrap();
    let critic = Critic::new(ApproxKind::Plain, 4, 2, &cfg.approx, &mut stream_rng(0, "critic-init")).unwrap();
    let mut algo = CqlSac::new(actor, critic, &cfg).unwrap();
    let mut rng = stream_rng(0, "offline-train");
    let (steps, window) = (1500, 250);
    let mut tail = Vec::with_capacity(window);
    for step in 0..steps {
        let m = algo.update(&data.sample(cfg.batch_size, &mut rng), &mut rng).unwrap();
        if step >= steps - window {
            tail.push(m.entropy);
        }
    }
    let entropy = tail.iter().sum::<f64>() / window as f64;
    let target = cfg.target_entropy(2);
    assert!((entropy - target).abs() <= 0.5, "entropy {entropy}, target {target}");
}

fn state() -> impl Strategy<Value = [f64; 4]> {
    [-5.0..5.0f64, -5.0..5.0f64, -3.0..3.0f64, -3.0..3.0f64]
}

proptest! {
    #[test]
    fn env_step_stays_in_bounds(s in state(), a in [-4.0..4.0f64, -4.0..4.0f64]) {
        let env = PointMass2D::default();
        let (next, r) = env.step(&s, &a).unwrap();
        prop_assert!(next.iter().all(|v| v.is_finite()) && r.is_finite());
        prop_assert!(next[0].abs() <= env.bound && next[1].abs() <= env.bound);
        prop_assert!(r <= 0.0);
        let clipped = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
        prop_assert_eq!(env.step(&s, &clipped).unwrap(), (next, r));
    }

    #[test]
    fn score_is_affine_in_return(j1 in -500.0..0.0f64, j2 in -500.0..0.0f64, lo in -500.0..-300.0f64, gap in 1.0..300.0f64) {
        let reference = ScoreReference { j_random: lo, j_expert: lo + gap };
        let s1 = normalized_score(j1, &reference).unwrap();
        let s2 = normalized_score(j2, &reference).unwrap();
        prop_assert!(((s1 - s2) - 100.0 * (j1 - j2) / gap).abs() <= 1e-9 * (1.0 + s1.abs() + s2.abs()));
        prop_assert_eq!(j1 < j2, s1 < s2);
    }

    #[test]
    fn normalizer_round_trips(rows in prop::collection::vec([-10.0..10.0f64, -1e-3..1e-3f64], 1..20)) {
        let data = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        let stats = Normalizer::fit(&data).unwrap();
        prop_assert!(stats.std.iter().all(|&s| s > 0.0));
        for r in &rows {
            let back = stats.unstandardize_one(&stats.standardize_one(r));
            for (x, y) in back.iter().zip(r) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
        let z = stats.standardize(&data);
        let mean: Array1<f64> = z.mean_axis(Axis(0)).unwrap();
        prop_assert!(mean.iter().all(|m| m.abs() < 1e-6));
    }
}
