use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::count_calls;
use crate::error::{Error, Result};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicAnchorConfig {
    /// N: number of candidate anchors (and of pairwise-pool states).
    pub candidates: usize,
}

impl Default for HeuristicAnchorConfig {
    fn default() -> Self {
        HeuristicAnchorConfig { candidates: 30 }
    }
}

/// Index of the candidate whose delta `s − c_n` is closest to some in-pool
/// delta `p_i − p_j` (`i ≠ j`). Ties go to the lowest index. With fewer than two
/// pool states there are no pool deltas and the first candidate is returned.
pub fn heuristic_argmin(s: ArrayView1<f64>, candidates: ArrayView2<f64>, pool: ArrayView2<f64>) -> usize {
    let d = s.len();
    let mut pair_deltas = Vec::with_capacity(pool.nrows() * pool.nrows().saturating_sub(1) * d);
    for i in 0..pool.nrows() {
        for j in 0..pool.nrows() {
            if i != j {
                pair_deltas.extend((0..d).map(|k| pool[[i, k]] - pool[[j, k]]));
            }
        }
    }
    if pair_deltas.is_empty() {
        return 0;
    }
    let mut best = (f64::INFINITY, 0);
    let mut delta = vec![0.0; d];
    for n in 0..candidates.nrows() {
        for k in 0..d {
            delta[k] = s[k] - candidates[[n, k]];
        }
        let closest = pair_deltas
            .chunks_exact(d)
            .map(|p| p.iter().zip(&delta).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if closest < best.0 {
            best = (closest, n);
        }
    }
    best.1
}

/// Draws `n` candidates and `n` pool states (distinct dataset rows) with `seed`
/// and returns the dataset index of the chosen anchor.
pub fn heuristic_select_anchor(s: ArrayView1<f64>, states: ArrayView2<f64>, n: usize, seed: u64) -> Result<usize> {
    if n == 0 || 2 * n > states.nrows() {
        return Err(Error::InvalidConfig(format!(
            "heuristic anchors need 1 <= N and 2N <= {} dataset states, got N = {n}",
            states.nrows()
        )));
    }
    if s.len() != states.ncols() {
        return Err(Error::shape("heuristic anchor state", states.ncols(), s.len()));
    }
    count_calls(1);
    let picked = sample(&mut stream_rng(seed, "heuristic-anchor"), states.nrows(), 2 * n).into_vec();
    let candidates = states.select(ndarray::Axis(0), &picked[..n]);
    let pool = states.select(ndarray::Axis(0), &picked[n..]);
    Ok(picked[heuristic_argmin(s, candidates.view(), pool.view())])
}
