//! Synthetic check that a bilinear head extrapolates to unseen combinations of
//! anchor and delta where a parameter-matched MLP does not.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BilinearConfig, BilinearHead};
use crate::dynamics::join_input;
use crate::error::{Error, Result};
use crate::nn::fit::mse_loss;
use crate::nn::{Activation, Adam, AdamConfig, Mlp, Parameters};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OocSplit {
    /// Train on three sign-quadrants of `(x̃₀, d₀)`, test on the held-out one.
    OutOfCombination,
    /// Train and test drawn from the same distribution.
    InDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OocProbeConfig {
    /// Dimension of both the anchor and the delta.
    pub dim: usize,
    /// Width of the hidden factors `g` and `h` of the target.
    pub target_rank: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Standard deviation of the noise added to training labels; test labels are clean.
    pub label_noise: f64,
    /// Entries of the target's inner weight matrices are uniform in `±target_scale`.
    pub target_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub bilinear: BilinearConfig,
}

impl Default for OocProbeConfig {
    fn default() -> Self {
        OocProbeConfig {
            dim: 2,
            target_rank: 3,
            train_size: 1500,
            test_size: 500,
            label_noise: 0.05,
            target_scale: 1.5,
            epochs: 300,
            batch_size: 64,
            lr: 1e-3,
            bilinear: BilinearConfig {
                k: 4,
                m: 8,
                embed_hidden: vec![32, 32],
                post_hidden: vec![16],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OocProbeResult {
    pub bilinear_test_mse: f64,
    pub mlp_test_mse: f64,
    pub bilinear_train_mse: f64,
    pub mlp_train_mse: f64,
    pub bilinear_params: usize,
    pub mlp_params: usize,
}

impl OocProbeResult {
    pub fn ratio(&self) -> f64 {
        self.bilinear_test_mse / self.mlp_test_mse
    }
}

/// Target `f(x̃, d) = ⟨g(d), h(x̃)⟩` with `g = tanh(A·d + a)`, `h = tanh(B·x̃ + b)`.
struct Target {
    a: Array2<f64>,
    a_bias: Array1<f64>,
    b: Array2<f64>,
    b_bias: Array1<f64>,
}

impl Target {
    fn new<R: Rng + ?Sized>(dim: usize, rank: usize, scale: f64, rng: &mut R) -> Target {
        let mut m = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-scale..scale));
        let a = m(rank, dim);
        let b = m(rank, dim);
        let mut v = |n| Array1::from_shape_fn(n, |_| rng.random_range(-0.5..0.5));
        let a_bias = v(rank);
        let b_bias = v(rank);
        Target { a, a_bias, b, b_bias }
    }

    fn eval(&self, anchor: &Array2<f64>, delta: &Array2<f64>) -> Array1<f64> {
        let g = (delta.dot(&self.a.t()) + &self.a_bias).mapv(f64::tanh);
        let h = (anchor.dot(&self.b.t()) + &self.b_bias).mapv(f64::tanh);
        (g * h).sum_axis(Axis(1))
    }
}

struct Split {
    anchor: Array2<f64>,
    delta: Array2<f64>,
    y: Array2<f64>,
}

fn draw<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    keep: impl Fn(f64, f64) -> bool,
    target: &Target,
    noise: f64,
    rng: &mut R,
) -> Split {
    let mut anchor = Array2::zeros((n, dim));
    let mut delta = Array2::zeros((n, dim));
    let mut filled = 0;
    while filled < n {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if keep(x[0], d[0]) {
            anchor.row_mut(filled).assign(&Array1::from(x));
            delta.row_mut(filled).assign(&Array1::from(d));
            filled += 1;
        }
    }
    let clean = target.eval(&anchor, &delta);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
    let y = clean.mapv(|v| if noise > 0.0 { v + normal.sample(rng) } else { v });
    Split {
        anchor,
        delta,
        y: y.insert_axis(Axis(1)),
    }
}

/// Hidden width `w` of a `2·dim → w → w → 1` MLP whose parameter count is closest to `budget`.
fn matched_width(input: usize, budget: usize) -> usize {
    let count = |w: usize| w * w + (input + 3) * w + 1;
    (1..=4096).min_by_key(|&w| count(w).abs_diff(budget)).expect("nonempty range")
}

trait Model: Parameters {
    type Grads: Parameters;
    fn predict(&self, s: &Split, rows: Option<&[usize]>) -> Result<Array2<f64>>;
    fn loss_and_grads(&self, s: &Split, rows: &[usize]) -> Result<(f64, Self::Grads)>;
}

impl Model for BilinearHead {
    type Grads = super::BilinearGrads;

    fn predict(&self, s: &Split, rows: Option<&[usize]>) -> Result<Array2<f64>> {
        match rows {
            Some(r) => self.forward(s.delta.select(Axis(0), r).view(), s.anchor.select(Axis(0), r).view()),
            None => self.forward(s.delta.view(), s.anchor.view()),
        }
    }

    fn loss_and_grads(&self, s: &Split, rows: &[usize]) -> Result<(f64, Self::Grads)> {
        let (u, v) = (s.delta.select(Axis(0), rows), s.anchor.select(Axis(0), rows));
        let tape = self.forward_tape(u.view(), v.view())?;
        let (loss, g) = mse_loss(tape.output(), s.y.select(Axis(0), rows).view());
        Ok((loss, self.backward(&tape, g.view())?.0))
    }
}

impl Model for Mlp {
    type Grads = crate::nn::MlpGrads;

    fn predict(&self, s: &Split, rows: Option<&[usize]>) -> Result<Array2<f64>> {
        let x = join_input(&s.delta, &s.anchor)?;
        match rows {
            Some(r) => self.forward(x.select(Axis(0), r).view()),
            None => self.forward(x.view()),
        }
    }

    fn loss_and_grads(&self, s: &Split, rows: &[usize]) -> Result<(f64, Self::Grads)> {
        let x = join_input(&s.delta.select(Axis(0), rows), &s.anchor.select(Axis(0), rows))?;
        let tape = self.forward_tape(x.view())?;
        let (loss, g) = mse_loss(tape.output(), s.y.select(Axis(0), rows).view());
        Ok((loss, self.backward(&tape, g.view())?.0))
    }
}

fn train<M: Model, R: Rng + ?Sized>(model: &mut M, data: &Split, cfg: &OocProbeConfig, rng: &mut R) -> Result<()> {
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..data.y.nrows()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = model.loss_and_grads(data, chunk)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("ooc probe epoch {epoch}: loss {loss}")));
            }
            adam.step(model, &grads)?;
        }
    }
    Ok(())
}

fn mse<M: Model>(model: &M, data: &Split) -> Result<f64> {
    let pred = model.predict(data, None)?;
    Ok((&pred - &data.y).mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// Trains a bilinear head on `(u = d, v = x̃)` and a parameter-matched MLP on
/// `[d, x̃]`. Training labels carry noise; test errors are against the clean target.
pub fn ooc_generalization_probe(config: &OocProbeConfig, split: OocSplit, seed: u64) -> Result<OocProbeResult> {
    if config.dim == 0 || config.train_size == 0 || config.test_size == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig("ooc probe sizes must be positive".into()));
    }
    let mut rng = stream_rng(seed, "ooc-probe-data");
    let target = Target::new(config.dim, config.target_rank, config.target_scale, &mut rng);
    let held_out = |x0: f64, d0: f64| x0 > 0.0 && d0 > 0.0;
    let (train_set, test_set) = match split {
        OocSplit::OutOfCombination => (
            draw(config.train_size, config.dim, |x, d| !held_out(x, d), &target, config.label_noise, &mut rng),
            draw(config.test_size, config.dim, held_out, &target, 0.0, &mut rng),
        ),
        OocSplit::InDistribution => (
            draw(config.train_size, config.dim, |_, _| true, &target, config.label_noise, &mut rng),
            draw(config.test_size, config.dim, |_, _| true, &target, 0.0, &mut rng),
        ),
    };

    let mut init = stream_rng(seed, "ooc-probe-init");
    let mut head = BilinearHead::new(config.dim, config.dim, 1, &config.bilinear, Activation::Tanh, &mut init)?;
    let width = matched_width(2 * config.dim, head.param_count());
    let mut mlp = Mlp::new(&[2 * config.dim, width, width, 1], Activation::Tanh, &mut init)?;

    train(&mut head, &train_set, config, &mut stream_rng(seed, "ooc-probe-bilinear"))?;
    train(&mut mlp, &train_set, config, &mut stream_rng(seed, "ooc-probe-mlp"))?;
    Ok(OocProbeResult {
        bilinear_test_mse: mse(&head, &test_set)?,
        mlp_test_mse: mse(&mlp, &test_set)?,
        bilinear_train_mse: mse(&head, &train_set)?,
        mlp_train_mse: mse(&mlp, &train_set)?,
        bilinear_params: head.param_count(),
        mlp_params: mlp.param_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matched_width_hits_budget() {
        let cfg = OocProbeConfig::default();
        let head = BilinearHead::new(
            2,
            2,
            1,
            &cfg.bilinear,
            Activation::Tanh,
            &mut stream_rng(0, "t"),
        )
        .unwrap();
        let w = matched_width(4, head.param_count());
        let mlp_params = w * w + 7 * w + 1;
        let gap = mlp_params.abs_diff(head.param_count()) as f64 / head.param_count() as f64;
        assert!(gap < 0.05, "{mlp_params} vs {}", head.param_count());
    }

    #[test]
    fn splits_respect_quadrants() {
        let mut rng = stream_rng(0, "t");
        let target = Target::new(2, 3, 1.5, &mut rng);
        let test = draw(200, 2, |x, d| x > 0.0 && d > 0.0, &target, 0.0, &mut rng);
        assert!(test.anchor.column(0).iter().all(|&x| x > 0.0));
        assert!(test.delta.column(0).iter().all(|&d| d > 0.0));
        let clean = target.eval(&test.anchor, &test.delta);
        assert_eq!(clean, test.y.column(0).to_owned());
    }
}
