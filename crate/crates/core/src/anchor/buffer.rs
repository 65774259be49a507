use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ReversePolicyConfig;
use crate::binio::expect_eof;
use crate::dynamics::ReverseDynamicsModel;
use crate::env::{read_header, read_record, write_header, write_record, OfflineDataset, Transition, REVERSE_BUFFER_TAG};
use crate::error::{Error, Result};
use crate::seeding::stream_rng;

/// One random divergent reverse action: `clip(φ·a0 + ε, −1, 1)`, `ε ~ N(0, σ²)`.
pub fn reverse_policy_action<R: Rng + ?Sized>(a0: &[f64], rng: &mut R, cfg: &ReversePolicyConfig) -> Vec<f64> {
    a0.iter()
        .map(|&a| {
            let eps = if cfg.noise > 0.0 {
                Normal::new(0.0, cfg.noise).expect("validated noise").sample(rng)
            } else {
                0.0
            };
            (cfg.scale * a + eps).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Reverse-rollout transitions in standardized state space. Row `k` moves from
/// `states[k]` (the predicted predecessor) to `next_states[k]` under `actions[k]`,
/// `steps[k]` reverse steps away from the dataset state the rollout started at.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseBuffer {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub steps: Vec<usize>,
    /// Rollouts thrown away because a prediction was non-finite.
    pub discarded: usize,
}

impl ReverseBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    fn from_rows(rows: Vec<(Transition, usize)>, sd: usize, ad: usize, discarded: usize) -> Result<Self> {
        let n = rows.len();
        let mut states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        let mut rewards = Array1::zeros(n);
        let mut next_states = Array2::zeros((n, sd));
        let mut steps = Vec::with_capacity(n);
        for (i, (t, step)) in rows.into_iter().enumerate() {
            if t.s.len() != sd || t.s_next.len() != sd {
                return Err(Error::shape("reverse buffer state", sd, t.s.len()));
            }
            if t.a.len() != ad {
                return Err(Error::shape("reverse buffer action", ad, t.a.len()));
            }
            states.row_mut(i).assign(&Array1::from(t.s));
            actions.row_mut(i).assign(&Array1::from(t.a));
            rewards[i] = t.r;
            next_states.row_mut(i).assign(&Array1::from(t.s_next));
            steps.push(step);
        }
        Ok(ReverseBuffer {
            states,
            actions,
            rewards,
            next_states,
            steps,
            discarded,
        })
    }

    /// States at reverse step `i` (1-based).
    pub fn states_at_step(&self, step: usize) -> Array2<f64> {
        let idx: Vec<usize> = (0..self.len()).filter(|&k| self.steps[k] == step).collect();
        self.states.select(ndarray::Axis(0), &idx)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, self.state_dim(), self.action_dim(), self.len(), REVERSE_BUFFER_TAG)?;
        for k in 0..self.len() {
            let t = Transition {
                s: self.states.row(k).to_vec(),
                a: self.actions.row(k).to_vec(),
                r: self.rewards[k],
                s_next: self.next_states.row(k).to_vec(),
                done: false,
            };
            write_record(w, &t, Some(self.steps[k]))?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let header = read_header(r)?;
        if header.tag != REVERSE_BUFFER_TAG {
            return Err(Error::Format(format!("tag {} is not a reverse buffer", header.tag)));
        }
        let rows = (0..header.count)
            .map(|_| {
                read_record(r, header.state_dim, header.action_dim, true)
                    .map(|(t, step)| (t, step.expect("step field requested")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows, header.state_dim, header.action_dim, 0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let buf = Self::read(&mut r)?;
        expect_eof(&mut r)?;
        Ok(buf)
    }
}

/// Rolls the reverse model `h` steps back from `e` sampled dataset states.
///
/// Each rollout picks a dataset transition, starts from its standardized state
/// and keeps that transition's action as the base action `a0`. Rollouts that hit
/// a non-finite prediction are discarded and redrawn.
pub fn generate_reverse_buffer(
    dataset: &OfflineDataset,
    model: &ReverseDynamicsModel,
    cfg: &ReversePolicyConfig,
    seed: u64,
) -> Result<ReverseBuffer> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("reverse buffer needs a nonempty dataset".into()));
    }
    let states = dataset.standardized_states();
    let mut rng = stream_rng(seed, "reverse-buffer");
    let max_attempts = cfg.rollouts.saturating_mul(100);
    let mut rows = Vec::with_capacity(cfg.rollouts * cfg.horizon);
    let (mut done, mut discarded) = (0, 0);
    while done < cfg.rollouts {
        if done + discarded >= max_attempts {
            return Err(Error::Divergence(format!(
                "reverse rollouts: {discarded} of {} attempts produced non-finite states",
                done + discarded
            )));
        }
        let k = rng.random_range(0..dataset.len());
        let a0 = dataset.actions.row(k).to_vec();
        let mut s = states.row(k).to_vec();
        let mut rollout = Vec::with_capacity(cfg.horizon);
        for step in 1..=cfg.horizon {
            let a = reverse_policy_action(&a0, &mut rng, cfg);
            let (prev, r) = model.predict_reverse(&s, &a)?;
            if !r.is_finite() || prev.iter().any(|v| !v.is_finite()) {
                break;
            }
            rollout.push((
                Transition {
                    s: prev.clone(),
                    a,
                    r,
                    s_next: s,
                    done: false,
                },
                step,
            ));
            s = prev;
        }
        if rollout.len() == cfg.horizon {
            rows.extend(rollout);
            done += 1;
        } else {
            discarded += 1;
        }
    }
    ReverseBuffer::from_rows(rows, dataset.state_dim(), dataset.action_dim(), discarded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ReverseConfig;
    use crate::env::{generate_dataset, PointMass2D, Tier};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (OfflineDataset, ReverseDynamicsModel) {
        let ds = generate_dataset(&PointMass2D::default(), Tier::Medium, 2, 0).unwrap();
        let cfg = ReverseConfig {
            hidden: vec![16],
            max_epochs: 2,
            ..Default::default()
        };
        let (m, _) = ReverseDynamicsModel::train(&ds, &cfg, 0).unwrap();
        (ds, m)
    }

    #[test]
    fn noiseless_action_is_scaled() {
        let cfg = ReversePolicyConfig {
            noise: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(reverse_policy_action(&[1.0, -0.5], &mut rng, &cfg), vec![0.8, -0.4]);
        let unit = ReversePolicyConfig { scale: 1.0, ..cfg };
        assert_eq!(reverse_policy_action(&[0.3, -0.7], &mut rng, &unit), vec![0.3, -0.7]);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let cfg = ReversePolicyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a0 = [0.5, -0.25];
        let n = 10_000;
        for dim in 0..2 {
            let mut rng_d = ChaCha8Rng::seed_from_u64(dim as u64);
            let xs: Vec<f64> = (0..n).map(|_| reverse_policy_action(&a0, &mut rng_d, &cfg)[dim]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!((std - 0.1).abs() < 0.01, "dim {dim}: {std}");
            assert!((mean - 0.8 * a0[dim]).abs() < 0.01);
        }
        let a = reverse_policy_action(&[1.0, 1.0], &mut rng, &ReversePolicyConfig { scale: 1.0, noise: 5.0, ..cfg });
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn buffer_size_is_rollouts_times_horizon() {
        let (ds, m) = fixture();
        for (e, h) in [(1, 1), (5, 3)] {
            let cfg = ReversePolicyConfig {
                rollouts: e,
                horizon: h,
                ..Default::default()
            };
            let buf = generate_reverse_buffer(&ds, &m, &cfg, 0).unwrap();
            assert_eq!(buf.len(), e * h);
            assert!(buf.steps.iter().all(|&i| (1..=h).contains(&i)));
        }
    }

    #[test]
    fn rollouts_chain_backwards() {
        let (ds, m) = fixture();
        let cfg = ReversePolicyConfig {
            rollouts: 4,
            horizon: 3,
            ..Default::default()
        };
        let buf = generate_reverse_buffer(&ds, &m, &cfg, 7).unwrap();
        let states = ds.standardized_states();
        for r in 0..4 {
            let base = 3 * r;
            assert!(states.rows().into_iter().any(|row| row == buf.next_states.row(base)));
            for i in 1..3 {
                assert_eq!(buf.next_states.row(base + i), buf.states.row(base + i - 1));
            }
        }
    }

    #[test]
    fn serialization_round_trip() {
        let (ds, m) = fixture();
        let cfg = ReversePolicyConfig {
            rollouts: 6,
            horizon: 2,
            ..Default::default()
        };
        let buf = generate_reverse_buffer(&ds, &m, &cfg, 3).unwrap();
        let mut bytes = Vec::new();
        buf.write(&mut bytes).unwrap();
        assert_eq!(bytes[28], REVERSE_BUFFER_TAG);
        assert_eq!(bytes.len(), 29 + 12 * (2 * 4 + 2 + 3) * 8);
        let back = ReverseBuffer::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, buf);
        let mut ds_bytes = Vec::new();
        ds.write(&mut ds_bytes).unwrap();
        assert!(ReverseBuffer::read(&mut ds_bytes.as_slice()).is_err());
    }
}
