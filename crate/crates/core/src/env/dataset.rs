//! Offline transition datasets and their `COCOADAT` serialization.
//!
//! Binary layout (little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic | `b"COCOADAT"` |
//! | version | u32 (currently 1) |
//! | state_dim | u32 |
//! | action_dim | u32 |
//! | transition count | u64 |
//! | tier tag | u8 (0 random … 4 expert, 255 reverse buffer) |
//! | records | `count` × (`s`, `a`, `r`, `s'`, `done`, [`step`]) as f64 |
//!
//! `done` is stored as 0.0 / 1.0. The trailing `step` field exists only in
//! reverse-buffer files. The generator seed is not part of the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;

use super::behavior::{behavior_policy, Tier};
use super::point_mass::{PointMass2D, State, ACTION_DIM, STATE_DIM};
use crate::binio::*;
use crate::error::{Error, Result};

pub const DATA_MAGIC: &[u8; 8] = b"COCOADAT";
pub const DATA_VERSION: u32 = 1;
pub const REVERSE_BUFFER_TAG: u8 = 255;
/// Standard deviations are floored at this value.
pub const STD_FLOOR: f64 = 1e-6;
/// Training episodes start uniformly within this distance of the origin.
pub const START_NOISE: f64 = 0.5;

/// A single `(s, a, r, s', done)` tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Per-dimension z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Normalizer {
    pub fn fit(rows: &Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::InvalidConfig("cannot fit normalizer on zero rows".into()));
        }
        let mean = rows.mean_axis(Axis(0)).expect("nonempty");
        let std = rows.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
        Ok(Normalizer { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, rows: &Array2<f64>) -> Array2<f64> {
        (rows - &self.mean) / &self.std
    }

    pub fn standardize_one(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn unstandardize_one(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
    pub state_stats: Normalizer,
    pub tier: Tier,
    /// `None` when loaded from a file.
    pub seed: Option<u64>,
}

impl OfflineDataset {
    pub fn from_transitions(transitions: &[Transition], tier: Tier, seed: Option<u64>) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::InvalidConfig("dataset must contain at least one transition".into()))?;
        let (sd, ad) = (first.s.len(), first.a.len());
        let n = transitions.len();
        let mut states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        let mut next_states = Array2::zeros((n, sd));
        let mut rewards = Array1::zeros(n);
        let mut dones = Vec::with_capacity(n);
        for (i, t) in transitions.iter().enumerate() {
            if t.s.len() != sd || t.s_next.len() != sd {
                return Err(Error::shape("transition state", sd, t.s.len().max(t.s_next.len())));
            }
            if t.a.len() != ad {
                return Err(Error::shape("transition action", ad, t.a.len()));
            }
            let finite = t.s.iter().chain(&t.a).chain(&t.s_next).all(|v| v.is_finite()) && t.r.is_finite();
            if !finite {
                return Err(Error::NonFinite(format!("transition {i}")));
            }
            if t.a.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfig(format!("transition {i} action outside [-1, 1]")));
            }
            states.row_mut(i).assign(&ArrayView1::from(&t.s));
            actions.row_mut(i).assign(&ArrayView1::from(&t.a));
            next_states.row_mut(i).assign(&ArrayView1::from(&t.s_next));
            rewards[i] = t.r;
            dones.push(t.done);
        }
        let state_stats = Normalizer::fit(&states)?;
        Ok(OfflineDataset {
            states,
            actions,
            rewards,
            next_states,
            dones,
            state_stats,
            tier,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            s: self.states.row(i).to_vec(),
            a: self.actions.row(i).to_vec(),
            r: self.rewards[i],
            s_next: self.next_states.row(i).to_vec(),
            done: self.dones[i],
        }
    }

    pub fn standardized_states(&self) -> Array2<f64> {
        self.state_stats.standardize(&self.states)
    }

    pub fn standardized_next_states(&self) -> Array2<f64> {
        self.state_stats.standardize(&self.next_states)
    }

    /// Mean undiscounted return per `horizon`-step episode.
    pub fn mean_episode_return(&self, horizon: usize) -> f64 {
        self.rewards.sum() / (self.len() as f64 / horizon as f64)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, self.state_dim(), self.action_dim(), self.len(), self.tier.tag())?;
        for i in 0..self.len() {
            write_record(w, &self.transition(i), None)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let header = read_header(r)?;
        let tier = Tier::from_tag(header.tag)
            .ok_or_else(|| Error::Format(format!("tier tag {} is not a dataset tier", header.tag)))?;
        let records = (0..header.count)
            .map(|_| read_record(r, header.state_dim, header.action_dim, false).map(|(t, _)| t))
            .collect::<Result<Vec<_>>>()?;
        Self::from_transitions(&records, tier, None)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let ds = Self::read(&mut r)?;
        expect_eof(&mut r)?;
        Ok(ds)
    }

    /// One transition per row with a header line.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header: Vec<String> = Vec::new();
        header.extend((0..self.state_dim()).map(|i| format!("s{i}")));
        header.extend((0..self.action_dim()).map(|i| format!("a{i}")));
        header.push("r".into());
        header.extend((0..self.state_dim()).map(|i| format!("next_s{i}")));
        header.push("done".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let t = self.transition(i);
            let mut fields: Vec<String> = Vec::new();
            fields.extend(t.s.iter().map(|v| v.to_string()));
            fields.extend(t.a.iter().map(|v| v.to_string()));
            fields.push(t.r.to_string());
            fields.extend(t.s_next.iter().map(|v| v.to_string()));
            fields.push((t.done as u8).to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

pub(crate) struct Header {
    pub state_dim: usize,
    pub action_dim: usize,
    pub count: u64,
    pub tag: u8,
}

pub(crate) fn write_header<W: Write>(w: &mut W, sd: usize, ad: usize, count: usize, tag: u8) -> Result<()> {
    write_magic(w, DATA_MAGIC)?;
    write_u32(w, DATA_VERSION)?;
    write_u32(w, sd as u32)?;
    write_u32(w, ad as u32)?;
    write_u64(w, count as u64)?;
    write_u8(w, tag)
}

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    expect_magic(r, DATA_MAGIC)?;
    let version = read_u32(r)?;
    if version != DATA_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    Ok(Header {
        state_dim: read_u32(r)? as usize,
        action_dim: read_u32(r)? as usize,
        count: read_u64(r)?,
        tag: read_u8(r)?,
    })
}

pub(crate) fn write_record<W: Write>(w: &mut W, t: &Transition, step: Option<usize>) -> Result<()> {
    write_f64s(w, &t.s)?;
    write_f64s(w, &t.a)?;
    write_f64s(w, &[t.r])?;
    write_f64s(w, &t.s_next)?;
    write_f64s(w, &[if t.done { 1.0 } else { 0.0 }])?;
    if let Some(step) = step {
        write_f64s(w, &[step as f64])?;
    }
    Ok(())
}

pub(crate) fn read_record<R: Read>(
    r: &mut R,
    sd: usize,
    ad: usize,
    with_step: bool,
) -> Result<(Transition, Option<usize>)> {
    let n = 2 * sd + ad + 2 + with_step as usize;
    let v = read_f64s(r, n)?;
    let done = match v[2 * sd + ad + 1] {
        x if x == 0.0 => false,
        x if x == 1.0 => true,
        x => return Err(Error::Format(format!("done flag {x} is not 0 or 1"))),
    };
    let t = Transition {
        s: v[..sd].to_vec(),
        a: v[sd..sd + ad].to_vec(),
        r: v[sd + ad],
        s_next: v[sd + ad + 1..2 * sd + ad + 1].to_vec(),
        done,
    };
    let step = with_step.then(|| v[n - 1] as usize);
    Ok((t, step))
}

fn episode(env: &PointMass2D, tier: Tier, index: u64, seed: u64) -> Result<Vec<Transition>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index));
    let controller = tier.episode_controller(index);
    let mut s: State = [
        rng.random_range(-START_NOISE..=START_NOISE),
        rng.random_range(-START_NOISE..=START_NOISE),
        0.0,
        0.0,
    ];
    let mut out = Vec::with_capacity(env.horizon);
    for _ in 0..env.horizon {
        let a = behavior_policy(controller, env, &s, &mut rng);
        let (next, r) = env.step(&s, &a)?;
        out.push(Transition {
            s: s.to_vec(),
            a: a.to_vec(),
            r,
            s_next: next.to_vec(),
            // time-limit truncation, bootstrapping continues
            done: false,
        });
        s = next;
    }
    Ok(out)
}

/// Rolls out `n_episodes` full-horizon episodes of the tier's behavior mix.
/// Episode `i` draws from its own generator seeded with `seed + i`.
pub fn generate_dataset(env: &PointMass2D, tier: Tier, n_episodes: usize, seed: u64) -> Result<OfflineDataset> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be at least 1".into()));
    }
    let mut transitions = Vec::with_capacity(n_episodes * env.horizon);
    for i in 0..n_episodes as u64 {
        transitions.extend(episode(env, tier, i, seed)?);
    }
    debug_assert_eq!(transitions[0].s.len(), STATE_DIM);
    debug_assert_eq!(transitions[0].a.len(), ACTION_DIM);
    OfflineDataset::from_transitions(&transitions, tier, Some(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_episode_has_horizon_transitions() {
        let ds = generate_dataset(&PointMass2D::default(), Tier::Medium, 1, 3).unwrap();
        assert_eq!(ds.len(), 100);
        assert!(ds.dones.iter().all(|d| !d));
    }

    #[test]
    fn zero_episodes_rejected() {
        assert!(generate_dataset(&PointMass2D::default(), Tier::Medium, 0, 3).is_err());
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let env = PointMass2D::default();
        let a = generate_dataset(&env, Tier::MediumReplay, 5, 11).unwrap();
        let b = generate_dataset(&env, Tier::MediumReplay, 5, 11).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write(&mut ba).unwrap();
        b.write(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = generate_dataset(&env, Tier::MediumReplay, 5, 12).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn episodes_are_order_independent() {
        // episode i of an n-episode dataset equals episode i of a longer one
        let env = PointMass2D::default();
        let short = generate_dataset(&env, Tier::Medium, 2, 5).unwrap();
        let long = generate_dataset(&env, Tier::Medium, 4, 5).unwrap();
        assert_eq!(short.states, long.states.slice(ndarray::s![..200, ..]));
    }

    #[test]
    fn std_is_floored() {
        let t = Transition {
            s: vec![1.0, 2.0],
            a: vec![0.0],
            r: 0.0,
            s_next: vec![1.0, 2.0],
            done: false,
        };
        let ds = OfflineDataset::from_transitions(&[t.clone(), t], Tier::Expert, None).unwrap();
        assert!(ds.state_stats.std.iter().all(|&s| s >= STD_FLOOR));
    }

    #[test]
    fn binary_header_layout_and_round_trip() {
        let ds = generate_dataset(&PointMass2D::default(), Tier::Expert, 1, 0).unwrap();
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"COCOADAT");
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 100);
        assert_eq!(buf[28], Tier::Expert.tag());
        assert_eq!(buf.len(), 29 + 100 * 8 * (4 + 2 + 1 + 4 + 1));
        let back = OfflineDataset::read(&mut buf.as_slice()).unwrap();
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(buf, again);
        assert_eq!(back.states, ds.states);
        assert_eq!(back.seed, None);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let ds = generate_dataset(&PointMass2D::default(), Tier::Random, 1, 0).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "s0,s1,s2,s3,a0,a1,r,next_s0,next_s1,next_s2,next_s3,done"
        );
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[..4], ds.states.row(0).to_vec()[..]);
        assert_eq!(text.lines().count(), 101);
    }
}
