use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::behavior::{behavior_policy, Controller};
use super::point_mass::PointMass2D;
use crate::error::{Error, Result};

/// Reference returns defining the 0–100 score scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReference {
    pub j_random: f64,
    pub j_expert: f64,
}

impl ScoreReference {
    /// Random controller: mean over `random_episodes` seeded episodes from the
    /// evaluation start. Expert controller: its single deterministic episode.
    pub fn measure(env: &PointMass2D, random_episodes: usize, seed: u64) -> Result<Self> {
        if random_episodes == 0 {
            return Err(Error::InvalidConfig("random_episodes must be at least 1".into()));
        }
        let j_expert = controller_return(env, Controller::Expert, seed)?;
        let mut total = 0.0;
        for i in 0..random_episodes as u64 {
            total += controller_return(env, Controller::Random, seed.wrapping_add(i))?;
        }
        let reference = ScoreReference {
            j_random: total / random_episodes as f64,
            j_expert,
        };
        reference.validate()?;
        Ok(reference)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j_expert > self.j_random) || !self.j_random.is_finite() || !self.j_expert.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "degenerate score reference: expert {} must exceed random {}",
                self.j_expert, self.j_random
            )));
        }
        Ok(())
    }
}

/// Undiscounted return of one behavior-controller episode from the evaluation start.
pub fn controller_return(env: &PointMass2D, controller: Controller, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    env.rollout(env.start(), |s, _| Ok(behavior_policy(controller, env, s, &mut rng)))
}

/// `100·(J − J_random)/(J_expert − J_random)`.
pub fn normalized_score(j: f64, reference: &ScoreReference) -> Result<f64> {
    reference.validate()?;
    Ok(100.0 * (j - reference.j_random) / (reference.j_expert - reference.j_random))
}
