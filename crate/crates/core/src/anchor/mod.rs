//! Anchors: states a short model rollout away from a query state, used to split
//! the query into `(anchor, delta)` for the bilinear heads.
//!
//! Everything here lives in standardized state space. The pieces are
//!
//! - the random divergent reverse policy and reverse-buffer generation,
//! - the anchor-seeking policy trained on that buffer,
//! - anchor-seeking rollouts through the forward ensemble and [`decompose`],
//! - the heuristic (dataset-pair) anchor selection used as an ablation.

mod buffer;
mod heuristic;
mod mechanism;
mod policy;
mod seeking;

use std::cell::Cell;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use buffer::{generate_reverse_buffer, reverse_policy_action, ReverseBuffer};
pub use heuristic::{heuristic_argmin, heuristic_select_anchor, HeuristicAnchorConfig};
pub use mechanism::{AnchorMechanism, DecomposedBatch, DecompositionCache};
pub use policy::{AnchorPolicyConfig, AnchorPolicyReport, AnchorSeekingPolicy};
pub use seeking::{anchor_seeking_rollout, anchor_seeking_rollout_batch, decompose};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReversePolicyConfig {
    /// φ: shrink factor applied to the base action.
    pub scale: f64,
    /// σ: standard deviation of the per-step action noise.
    pub noise: f64,
    /// h: reverse rollout length.
    pub horizon: usize,
    /// e: number of reverse rollouts. Pipelines usually set 100 per dataset episode.
    pub rollouts: usize,
}

impl Default for ReversePolicyConfig {
    fn default() -> Self {
        ReversePolicyConfig {
            scale: 0.8,
            noise: 0.1,
            horizon: 1,
            rollouts: 5000,
        }
    }
}

impl ReversePolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::InvalidConfig(format!("reverse policy scale {} not in (0, 1]", self.scale)));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidConfig(format!("reverse policy noise {} must be >= 0", self.noise)));
        }
        if self.horizon == 0 || self.rollouts == 0 {
            return Err(Error::InvalidConfig("reverse horizon and rollouts must be positive".into()));
        }
        Ok(())
    }
}

/// A state split into anchor and delta: `anchor + delta == state`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub anchor: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Decomposition {
    /// `delta = s − anchor`, computed so that `anchor + delta` reproduces `s`.
    ///
    /// Floating-point subtraction does not always round-trip, so when
    /// `anchor + (s − anchor) != s` the anchor is nudged to `s − delta`, which
    /// keeps it within an ulp of the rollout result while making the identity exact.
    pub fn new(s: &[f64], anchor: Vec<f64>) -> Decomposition {
        let mut anchor = anchor;
        let mut delta = vec![0.0; s.len()];
        for i in 0..s.len() {
            let (a, d) = exact_split(s[i], anchor[i]);
            anchor[i] = a;
            delta[i] = d;
        }
        Decomposition { anchor, delta }
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        self.anchor.iter().zip(&self.delta).map(|(a, d)| a + d).collect()
    }
}

/// Splits `s` into `(a', d)` with `a'` within a few ulps of the anchor `a`.
///
/// Whenever some nearby `a'` admits an exact `a' + d == s` it is used. When
/// `|s|` is far below `|a|` no such pair exists in binary floating point (the
/// sum's grid is coarser than `s`'s); the anchor is then kept and `d = s − a`,
/// so the identity holds to within one rounding of the larger operand.
pub(crate) fn exact_split(s: f64, a: f64) -> (f64, f64) {
    let d0 = s - a;
    if a + d0 == s {
        return (a, d0);
    }
    for d in [d0, d0.next_up(), d0.next_down()] {
        let mut a2 = s - d;
        for _ in 0..4 {
            if a2 + d == s {
                return (a2, d);
            }
            a2 = if a2 + d < s { a2.next_up() } else { a2.next_down() };
        }
    }
    (a, d0)
}

thread_local! {
    static CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of anchor computations (rollouts or heuristic selections, one per
/// state) performed on the current thread. Used to verify that variants without
/// anchors never reach this module.
pub fn anchor_call_count() -> usize {
    CALLS.with(|c| c.get())
}

pub(crate) fn count_calls(n: usize) {
    CALLS.with(|c| c.set(c.get() + n));
}

/// Euclidean distance from each row of `points` to its nearest row of `reference`.
pub fn nearest_neighbor_distances(points: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<Vec<f64>> {
    if points.ncols() != reference.ncols() {
        return Err(Error::shape("nearest-neighbor dim", reference.ncols(), points.ncols()));
    }
    if reference.nrows() == 0 {
        return Err(Error::InvalidConfig("nearest-neighbor reference set is empty".into()));
    }
    let dists = points
        .rows()
        .into_iter()
        .map(|p| {
            reference
                .rows()
                .into_iter()
                .map(|q| p.iter().zip(q.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    Ok(dists)
}
