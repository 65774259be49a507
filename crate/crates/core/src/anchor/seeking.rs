use ndarray::Array2;

use super::{count_calls, AnchorSeekingPolicy, Decomposition};
use crate::dynamics::DynamicsEnsemble;
use crate::error::{Error, Result};

/// Rolls every row of `states` forward `h` steps with `s ← T̂(s, π̃(s))`, using
/// the elite-mean forward prediction. Deterministic given the models.
pub fn anchor_seeking_rollout_batch(
    states: &Array2<f64>,
    policy: &AnchorSeekingPolicy,
    ensemble: &DynamicsEnsemble,
    h: usize,
) -> Result<Array2<f64>> {
    if states.ncols() != policy.state_dim() {
        return Err(Error::shape("anchor rollout state", policy.state_dim(), states.ncols()));
    }
    count_calls(states.nrows());
    let mut s = states.clone();
    for step in 0..h {
        let a = policy.act_batch(s.view())?;
        let (next, _) = ensemble.predict_mean(&s, &a)?;
        if let Some(i) = next.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!(
                "anchor rollout step {}: start {:?}, state {:?}, action {:?} → {:?}",
                step + 1,
                states.row(i).to_vec(),
                s.row(i).to_vec(),
                a.row(i).to_vec(),
                next.row(i).to_vec()
            )));
        }
        s = next;
    }
    Ok(s)
}

pub fn anchor_seeking_rollout(
    s: &[f64],
    policy: &AnchorSeekingPolicy,
    ensemble: &DynamicsEnsemble,
    h: usize,
) -> Result<Vec<f64>> {
    let batch = Array2::from_shape_vec((1, s.len()), s.to_vec())
        .map_err(|_| Error::shape("anchor rollout state", policy.state_dim(), s.len()))?;
    Ok(anchor_seeking_rollout_batch(&batch, policy, ensemble, h)?.row(0).to_vec())
}

/// `s̃ = rollout(s)`, `Δs = s − s̃`.
pub fn decompose(
    s: &[f64],
    policy: &AnchorSeekingPolicy,
    ensemble: &DynamicsEnsemble,
    h: usize,
) -> Result<Decomposition> {
    let anchor = anchor_seeking_rollout(s, policy, ensemble, h)?;
    Ok(Decomposition::new(s, anchor))
}
