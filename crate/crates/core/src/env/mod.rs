//! Point-mass environment, behavior tiers, offline datasets and the score scale.

mod behavior;
mod dataset;
mod point_mass;
mod score;

pub use behavior::{
    behavior_policy, expert_action, random_action, Controller, Tier, EXPERT_KD, EXPERT_KP,
    MEDIUM_EXPERT_PROB, MEDIUM_NOISE, REPLAY_RANDOM_FRACTION,
};
pub(crate) use dataset::{read_header, read_record, write_header, write_record};
pub use dataset::{
    generate_dataset, Normalizer, OfflineDataset, Transition, DATA_MAGIC, DATA_VERSION,
    REVERSE_BUFFER_TAG, START_NOISE, STD_FLOOR,
};
pub use point_mass::{clip_action, Action, PointMass2D, State, ACTION_DIM, STATE_DIM};
pub use score::{controller_return, normalized_score, ScoreReference};
