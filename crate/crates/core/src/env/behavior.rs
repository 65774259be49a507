use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::point_mass::{clip_action, Action, PointMass2D, State};
use crate::error::Error;

pub const EXPERT_KP: f64 = 1.0;
pub const EXPERT_KD: f64 = 0.6;
pub const MEDIUM_NOISE: f64 = 0.3;
pub const MEDIUM_EXPERT_PROB: f64 = 0.5;
/// Fraction of random episodes mixed into the medium-replay tier.
pub const REPLAY_RANDOM_FRACTION: f64 = 0.3;

/// Dataset quality tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Random,
    Medium,
    MediumReplay,
    MediumExpert,
    Expert,
}

impl Tier {
    pub const ALL: [Tier; 5] = [
        Tier::Random,
        Tier::Medium,
        Tier::MediumReplay,
        Tier::MediumExpert,
        Tier::Expert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Random => "random",
            Tier::Medium => "medium",
            Tier::MediumReplay => "medium-replay",
            Tier::MediumExpert => "medium-expert",
            Tier::Expert => "expert",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Tier> {
        Tier::ALL.get(tag as usize).copied()
    }

    /// Controller used for episode `index` of a dataset of this tier.
    pub fn episode_controller(self, index: u64) -> Controller {
        match self {
            Tier::Random => Controller::Random,
            Tier::Medium => Controller::Medium,
            Tier::Expert => Controller::Expert,
            Tier::MediumExpert => {
                if index % 2 == 0 {
                    Controller::Medium
                } else {
                    Controller::Expert
                }
            }
            Tier::MediumReplay => {
                if ((index % 10) as f64) < REPLAY_RANDOM_FRACTION * 10.0 {
                    Controller::Random
                } else {
                    Controller::Medium
                }
            }
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown tier {s:?}")))
    }
}

/// Behavior controllers of graded quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    Random,
    Medium,
    Expert,
}

pub fn expert_action(env: &PointMass2D, s: &State) -> Action {
    clip_action(&[
        EXPERT_KP * (env.goal[0] - s[0]) - EXPERT_KD * s[2],
        EXPERT_KP * (env.goal[1] - s[1]) - EXPERT_KD * s[3],
    ])
}

pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
}

pub fn behavior_policy<R: Rng + ?Sized>(
    controller: Controller,
    env: &PointMass2D,
    s: &State,
    rng: &mut R,
) -> Action {
    match controller {
        Controller::Random => random_action(rng),
        Controller::Expert => expert_action(env, s),
        Controller::Medium => {
            if rng.random_bool(MEDIUM_EXPERT_PROB) {
                let noise = Normal::new(0.0, MEDIUM_NOISE).expect("valid std");
                let a = expert_action(env, s);
                clip_action(&[a[0] + noise.sample(rng), a[1] + noise.sample(rng)])
            } else {
                random_action(rng)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expert_at_goal_is_idle() {
        let env = PointMass2D::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = behavior_policy(Controller::Expert, &env, &[3.0, 3.0, 0.0, 0.0], &mut rng);
        assert_eq!(a, [0.0, 0.0]);
    }

    #[test]
    fn random_actions_are_centered() {
        let env = PointMass2D::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let a = behavior_policy(Controller::Random, &env, &[0.0; 4], &mut rng);
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            sum[0] += a[0];
            sum[1] += a[1];
        }
        assert!((sum[0] / n as f64).abs() < 0.05);
        assert!((sum[1] / n as f64).abs() < 0.05);
    }

    #[test]
    fn tier_names_round_trip() {
        for t in Tier::ALL {
            assert_eq!(t.name().parse::<Tier>().unwrap(), t);
            assert_eq!(Tier::from_tag(t.tag()), Some(t));
        }
        assert!("medium_expert".parse::<Tier>().is_err());
    }

    #[test]
    fn mixed_tier_episode_split() {
        let expert = (0..100)
            .filter(|&i| Tier::MediumExpert.episode_controller(i) == Controller::Expert)
            .count();
        assert_eq!(expert, 50);
        let random = (0..100)
            .filter(|&i| Tier::MediumReplay.episode_controller(i) == Controller::Random)
            .count();
        assert_eq!(random, 30);
    }
}
