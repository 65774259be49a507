use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

/// `(px, py, vx, vy)`
pub type State = [f64; STATE_DIM];
/// `(ax, ay)`, each in `[−1, 1]`
pub type Action = [f64; ACTION_DIM];

/// Damped 2-D point mass driven toward a fixed goal.
///
/// `v' = c·v + a·dt`, `p' = clip(p + v'·dt, −bound, bound)`, `r = −‖p' − g‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointMass2D {
    pub goal: [f64; 2],
    pub dt: f64,
    pub damping: f64,
    pub bound: f64,
    pub horizon: usize,
}

impl Default for PointMass2D {
    fn default() -> Self {
        PointMass2D {
            goal: [3.0, 3.0],
            dt: 0.05,
            damping: 0.95,
            bound: 5.0,
            horizon: 100,
        }
    }
}

pub fn clip_action(a: &[f64]) -> Action {
    [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]
}

impl PointMass2D {
    /// Evaluation start state.
    pub fn start(&self) -> State {
        [0.0; STATE_DIM]
    }

    pub fn reward(&self, s_next: &State) -> f64 {
        let dx = s_next[0] - self.goal[0];
        let dy = s_next[1] - self.goal[1];
        -(dx * dx + dy * dy).sqrt()
    }

    /// One deterministic transition; out-of-range actions are clipped.
    pub fn step(&self, s: &State, a: &[f64]) -> Result<(State, f64)> {
        if a.len() != ACTION_DIM {
            return Err(Error::shape("env action", ACTION_DIM, a.len()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("env state {s:?}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("env action {a:?}")));
        }
        let a = clip_action(a);
        let vx = self.damping * s[2] + a[0] * self.dt;
        let vy = self.damping * s[3] + a[1] * self.dt;
        let px = (s[0] + vx * self.dt).clamp(-self.bound, self.bound);
        let py = (s[1] + vy * self.dt).clamp(-self.bound, self.bound);
        let next = [px, py, vx, vy];
        Ok((next, self.reward(&next)))
    }

    /// Undiscounted return of a full-horizon episode.
    pub fn rollout<F>(&self, start: State, mut policy: F) -> Result<f64>
    where
        F: FnMut(&State, usize) -> Result<Action>,
    {
        let mut s = start;
        let mut ret = 0.0;
        for t in 0..self.horizon {
            let a = policy(&s, t)?;
            let (next, r) = self.step(&s, &a)?;
            ret += r;
            s = next;
        }
        Ok(ret)
    }
}
