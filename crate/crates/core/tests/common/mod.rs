#![allow(dead_code)]

use std::path::Path;

use cocoa::bilinear::{ApproxConfig, BilinearConfig};
use cocoa::harness::PipelineConfig;

/// A pipeline config small enough to run every stage in well under a second.
pub fn tiny_config(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.out_dir = out.to_path_buf();
    c.seeds = vec![0, 1];
    c.data.episodes = 3;
    c.data.reference_random_episodes = 5;
    c.dynamics.ensemble_size = 2;
    c.dynamics.elite_count = 1;
    c.dynamics.hidden = vec![16];
    c.dynamics.max_epochs = 3;
    c.reverse.hidden = vec![16];
    c.reverse.max_epochs = 3;
    c.reverse_policy.rollouts = 100;
    c.anchor_policy.hidden = vec![8];
    c.anchor_policy.max_epochs = 3;
    c.algo.epochs = 3;
    c.algo.steps_per_epoch = 4;
    c.algo.batch_size = 16;
    c.algo.cql_action_samples = 2;
    c.algo.eval_episodes = 2;
    c.algo.approx = ApproxConfig {
        hidden: vec![8],
        bilinear: BilinearConfig {
            k: 2,
            m: 3,
            embed_hidden: vec![6],
            post_hidden: vec![5],
        },
    };
    c
}
