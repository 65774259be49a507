use std::sync::Arc;

use ndarray::{Array2, Axis};

use super::{anchor_seeking_rollout_batch, exact_split, heuristic_select_anchor, AnchorSeekingPolicy};
use crate::dynamics::DynamicsEnsemble;
use crate::env::OfflineDataset;
use crate::error::{Error, Result};

/// Row-aligned anchors and deltas for a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedBatch {
    pub anchor: Array2<f64>,
    pub delta: Array2<f64>,
}

impl DecomposedBatch {
    pub fn from_anchors(states: &Array2<f64>, mut anchor: Array2<f64>) -> Self {
        let mut delta = Array2::zeros(states.raw_dim());
        ndarray::Zip::from(&mut anchor)
            .and(&mut delta)
            .and(states)
            .for_each(|a, d, &s| (*a, *d) = exact_split(s, *a));
        DecomposedBatch { anchor, delta }
    }

    pub fn len(&self) -> usize {
        self.anchor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.nrows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> DecomposedBatch {
        DecomposedBatch {
            anchor: self.anchor.select(Axis(0), idx),
            delta: self.delta.select(Axis(0), idx),
        }
    }
}

/// How a variant turns states into `(anchor, delta)` pairs.
#[derive(Debug, Clone)]
pub enum AnchorMechanism {
    /// Anchor-seeking rollouts of length `horizon` through the forward ensemble.
    Seeking {
        policy: Arc<AnchorSeekingPolicy>,
        ensemble: Arc<DynamicsEnsemble>,
        horizon: usize,
    },
    /// Heuristic selection among `candidates` dataset states. The draw for each
    /// query is seeded from `seed` and the query's bit pattern, so the result is
    /// a pure function of the state.
    Heuristic {
        states: Arc<Array2<f64>>,
        candidates: usize,
        seed: u64,
    },
}

impl AnchorMechanism {
    pub fn decompose_batch(&self, states: &Array2<f64>) -> Result<DecomposedBatch> {
        let anchors = match self {
            AnchorMechanism::Seeking {
                policy,
                ensemble,
                horizon,
            } => anchor_seeking_rollout_batch(states, policy, ensemble, *horizon)?,
            AnchorMechanism::Heuristic {
                states: data,
                candidates,
                seed,
            } => {
                if states.ncols() != data.ncols() {
                    return Err(Error::shape("heuristic anchor state", data.ncols(), states.ncols()));
                }
                let mut out = Array2::zeros(states.raw_dim());
                for (i, row) in states.rows().into_iter().enumerate() {
                    let query_seed = row.iter().fold(*seed, |h, v| splitmix64(h ^ v.to_bits()));
                    let k = heuristic_select_anchor(row, data.view(), *candidates, query_seed)?;
                    out.row_mut(i).assign(&data.row(k));
                }
                out
            }
        };
        Ok(DecomposedBatch::from_anchors(states, anchors))
    }

    pub fn decompose_one(&self, s: &[f64]) -> Result<super::Decomposition> {
        let batch = Array2::from_shape_vec((1, s.len()), s.to_vec())
            .map_err(|_| Error::shape("decompose state", s.len(), s.len()))?;
        let d = self.decompose_batch(&batch)?;
        Ok(super::Decomposition {
            anchor: d.anchor.row(0).to_vec(),
            delta: d.delta.row(0).to_vec(),
        })
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Decompositions of every dataset state and successor state, computed once.
///
/// The models behind an [`AnchorMechanism`] are frozen during policy training,
/// so per-minibatch recomputation would return the same rows; the cache only
/// saves the work.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionCache {
    pub states: DecomposedBatch,
    pub next_states: DecomposedBatch,
}

impl DecompositionCache {
    pub fn build(mechanism: &AnchorMechanism, dataset: &OfflineDataset) -> Result<Self> {
        const CHUNK: usize = 1024;
        let build = |rows: &Array2<f64>| -> Result<DecomposedBatch> {
            let mut anchor = Array2::zeros(rows.raw_dim());
            let mut delta = Array2::zeros(rows.raw_dim());
            for start in (0..rows.nrows()).step_by(CHUNK) {
                let end = (start + CHUNK).min(rows.nrows());
                let part = mechanism.decompose_batch(&rows.slice(ndarray::s![start..end, ..]).to_owned())?;
                anchor.slice_mut(ndarray::s![start..end, ..]).assign(&part.anchor);
                delta.slice_mut(ndarray::s![start..end, ..]).assign(&part.delta);
            }
            Ok(DecomposedBatch { anchor, delta })
        };
        Ok(DecompositionCache {
            states: build(&dataset.standardized_states())?,
            next_states: build(&dataset.standardized_next_states())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::{anchor_call_count, anchor_seeking_rollout, decompose};
    use crate::dynamics::DynamicsConfig;
    use crate::env::{generate_dataset, PointMass2D, Tier};

    fn fixture() -> (OfflineDataset, AnchorMechanism) {
        let ds = generate_dataset(&PointMass2D::default(), Tier::Medium, 2, 0).unwrap();
        let cfg = DynamicsConfig {
            ensemble_size: 2,
            elite_count: 2,
            hidden: vec![16],
            max_epochs: 2,
            ..Default::default()
        };
        let (ens, _) = DynamicsEnsemble::train(&ds, &cfg, 0).unwrap();
        let policy = AnchorSeekingPolicy::new(4, 2, &[8, 8], 0).unwrap();
        let mech = AnchorMechanism::Seeking {
            policy: Arc::new(policy),
            ensemble: Arc::new(ens),
            horizon: 2,
        };
        (ds, mech)
    }

    fn parts(m: &AnchorMechanism) -> (&AnchorSeekingPolicy, &DynamicsEnsemble) {
        match m {
            AnchorMechanism::Seeking { policy, ensemble, .. } => (policy, ensemble),
            _ => unreachable!(),
        }
    }

    #[test]
    fn zero_horizon_is_identity() {
        let (ds, mech) = fixture();
        let (p, e) = parts(&mech);
        let s = ds.standardized_states().row(3).to_vec();
        assert_eq!(anchor_seeking_rollout(&s, p, e, 0).unwrap(), s);
        let d = decompose(&s, p, e, 0).unwrap();
        assert_eq!(d.anchor, s);
        assert!(d.delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decomposition_reconstructs_and_repeats() {
        let (ds, mech) = fixture();
        let (p, e) = parts(&mech);
        let states = ds.standardized_states();
        for i in (0..states.nrows()).step_by(17) {
            let s = states.row(i).to_vec();
            let d = decompose(&s, p, e, 2).unwrap();
            for ((r, x), a) in d.reconstruct().iter().zip(&s).zip(&d.anchor) {
                assert!((r - x).abs() <= 2.0 * f64::EPSILON * x.abs().max(a.abs()), "{r} vs {x}");
            }
            assert_eq!(decompose(&s, p, e, 2).unwrap(), d);
        }
    }

    #[test]
    fn batch_rows_match_single_calls() {
        let (ds, mech) = fixture();
        let states = ds.standardized_states();
        let batch = mech.decompose_batch(&states).unwrap();
        for i in (0..states.nrows()).step_by(23) {
            let one = mech.decompose_one(&states.row(i).to_vec()).unwrap();
            assert_eq!(one.anchor, batch.anchor.row(i).to_vec());
            assert_eq!(one.delta, batch.delta.row(i).to_vec());
        }
    }

    #[test]
    fn cache_equals_uncached_path() {
        let (ds, mech) = fixture();
        let heuristic = AnchorMechanism::Heuristic {
            states: Arc::new(ds.standardized_states()),
            candidates: 5,
            seed: 3,
        };
        for m in [&mech, &heuristic] {
            let cache = DecompositionCache::build(m, &ds).unwrap();
            let idx = [0, 7, 42, 199];
            let direct = m.decompose_batch(&ds.standardized_next_states().select(Axis(0), &idx)).unwrap();
            assert_eq!(cache.next_states.select(&idx), direct);
            let direct = m.decompose_batch(&ds.standardized_states().select(Axis(0), &idx)).unwrap();
            assert_eq!(cache.states.select(&idx), direct);
        }
    }

    #[test]
    fn heuristic_anchors_are_dataset_states() {
        let (ds, _) = fixture();
        let states = ds.standardized_states();
        let m = AnchorMechanism::Heuristic {
            states: Arc::new(states.clone()),
            candidates: 4,
            seed: 0,
        };
        let queries = states.select(Axis(0), &[1, 2, 3]) + 0.25;
        let d = m.decompose_batch(&queries).unwrap();
        // anchors are dataset rows up to the ulp-level nudge that makes
        // anchor + delta reproduce the query exactly
        for a in d.anchor.rows() {
            assert!(states
                .rows()
                .into_iter()
                .any(|r| r.iter().zip(a.iter()).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))));
        }
    }

    #[test]
    fn calls_are_counted_per_state() {
        let (ds, mech) = fixture();
        let before = anchor_call_count();
        mech.decompose_batch(&ds.standardized_states().select(Axis(0), &[0, 1, 2])).unwrap();
        assert_eq!(anchor_call_count() - before, 3);
    }
}
