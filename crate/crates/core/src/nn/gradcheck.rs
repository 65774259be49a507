//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mlp, Parameters};
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;
/// Denominator floor: below this combined magnitude the relative error
/// degrades gracefully into an absolute one.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Upper bound on parameter entries probed; larger models are subsampled.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: DEFAULT_EPS,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` (laid out like `model`'s parameters) against central
/// differences of `objective`. Returns the worst relative error.
pub fn check_parameters<M, G, F>(
    model: &mut M,
    analytic: &G,
    objective: F,
    opts: &GradCheckOptions,
) -> f64
where
    M: Parameters + ?Sized,
    G: Parameters + ?Sized,
    F: Fn(&M) -> f64,
{
    let analytic: Vec<Vec<f64>> = analytic.param_slices().iter().map(|s| s.to_vec()).collect();
    let mut entries: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(t, s)| (0..s.len()).map(move |i| (t, i)))
        .collect();
    if let Some(limit) = opts.max_entries {
        if entries.len() > limit {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked: Vec<usize> = sample(&mut rng, entries.len(), limit).into_vec();
            picked.sort_unstable();
            entries = picked.into_iter().map(|k| entries[k]).collect();
        }
    }
    let mut worst = 0.0f64;
    for (t, i) in entries {
        let original = model.param_slices()[t][i];
        model.param_slices_mut()[t][i] = original + opts.eps;
        let plus = objective(model);
        model.param_slices_mut()[t][i] = original - opts.eps;
        let minus = objective(model);
        model.param_slices_mut()[t][i] = original;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        worst = worst.max(relative_error(analytic[t][i], numeric));
    }
    worst
}

/// Same as [`check_parameters`] for a plain input vector.
pub fn check_input<F>(x: &[f64], analytic: &[f64], objective: F, eps: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = objective(&probe);
        probe[i] = x[i] - eps;
        let minus = objective(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * eps)));
    }
    worst
}

/// Fixed, non-degenerate upstream weighting used to reduce a vector output to a scalar.
pub fn probe_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + j as f64) / n as f64
        })
        .collect()
}

/// Checks [`Mlp::backward`] against central differences for both the
/// parameters and the input at `x`.
pub fn gradient_check(net: &Mlp, x: &[f64], tolerance: f64) -> Result<GradCheck> {
    gradient_check_with(net, x, tolerance, &GradCheckOptions::default())
}

pub fn gradient_check_with(
    net: &Mlp,
    x: &[f64],
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheck> {
    let upstream = probe_weights(net.out_dim());
    let objective = |n: &Mlp, x: &[f64]| -> f64 {
        n.forward_one(x)
            .expect("shape checked above")
            .iter()
            .zip(&upstream)
            .map(|(y, w)| y * w)
            .sum()
    };
    let (grads, dx) = net.backward_one(x, &upstream)?;
    let mut probe = net.clone();
    let param_err = check_parameters(&mut probe, &grads, |n| objective(n, x), opts);
    let input_err = check_input(x, &dx, |xs| objective(net, xs), opts.eps);
    Ok(GradCheck {
        max_rel_error: param_err.max(input_err),
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::Rng;

    fn inputs(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn linear_net_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 2], Activation::Linear, &mut rng).unwrap();
        let x = inputs(&mut rng, 3);
        let check = gradient_check(&net, &x, 1e-9).unwrap();
        assert!(check.passed(), "{}", check.max_rel_error);
    }

    #[test]
    fn tanh_net_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Mlp::new(&[4, 8, 8, 3], Activation::Tanh, &mut rng).unwrap();
        let x = inputs(&mut rng, 4);
        let check = gradient_check(&net, &x, 1e-4).unwrap();
        assert!(check.passed(), "{}", check.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Mlp::new(&[4, 8, 3], Activation::Tanh, &mut rng).unwrap();
        let x = inputs(&mut rng, 4);
        let upstream = probe_weights(3);
        let (mut grads, _) = net.backward_one(&x, &upstream).unwrap();
        let (t, i) = {
            let slices = grads.param_slices();
            let mut best = (0, 0, 0.0f64);
            for (t, s) in slices.iter().enumerate() {
                for (i, v) in s.iter().enumerate() {
                    if v.abs() > best.2 {
                        best = (t, i, v.abs());
                    }
                }
            }
            (best.0, best.1)
        };
        grads.param_slices_mut()[t][i] *= 2.0;
        let mut probe = net.clone();
        let err = check_parameters(
            &mut probe,
            &grads,
            |n| {
                n.forward_one(&x)
                    .unwrap()
                    .iter()
                    .zip(&upstream)
                    .map(|(y, w)| y * w)
                    .sum()
            },
            &GradCheckOptions::default(),
        );
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn subsampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[3, 32, 32, 2], Activation::Relu, &mut rng).unwrap();
        let x = inputs(&mut rng, 3);
        let opts = GradCheckOptions {
            max_entries: Some(50),
            ..Default::default()
        };
        let a = gradient_check_with(&net, &x, 1e-4, &opts).unwrap();
        let b = gradient_check_with(&net, &x, 1e-4, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.passed());
    }
}
