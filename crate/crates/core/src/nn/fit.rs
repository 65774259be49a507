//! Minibatch supervised fitting with early stopping.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{Adam, AdamConfig, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; `None` trains for `max_epochs`.
    pub patience: Option<usize>,
    pub min_improvement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
    /// Best validation loss (or final training loss without validation).
    pub best: f64,
}

/// `(mean loss, gradient w.r.t. the network output)` for one minibatch.
pub type LossFn<'a> = dyn Fn(&Array2<f64>, ArrayView2<f64>) -> (f64, Array2<f64>) + 'a;

/// Trains `net` on `(x, z)` pairs. With a validation closure, parameters are
/// restored to the best validation epoch on return.
pub fn fit<R: Rng + ?Sized>(
    net: &mut Mlp,
    x: &Array2<f64>,
    z: &Array2<f64>,
    settings: &FitSettings,
    rng: &mut R,
    label: &str,
    loss: &LossFn<'_>,
    mut validate: Option<&mut dyn FnMut(&Mlp) -> Result<f64>>,
) -> Result<FitOutcome> {
    if x.nrows() == 0 || x.nrows() != z.nrows() {
        return Err(Error::shape("fit rows", x.nrows(), z.nrows()));
    }
    let mut adam = Adam::new(AdamConfig::with_lr(settings.lr));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut best = match validate.as_mut() {
        Some(v) => v(net)?,
        None => f64::INFINITY,
    };
    let mut best_net = net.clone();
    let mut stale = 0;
    let mut curve = Vec::new();
    for epoch in 0..settings.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let zb = z.select(Axis(0), chunk);
            let tape = net.forward_tape(xb.view())?;
            let (l, grad) = loss(tape.output(), zb.view());
            if !l.is_finite() {
                return Err(Error::Divergence(format!("{label} epoch {epoch}: loss is {l}")));
            }
            total += l * chunk.len() as f64;
            let (grads, _) = net.backward(&tape, grad.view())?;
            adam.step(net, &grads)?;
        }
        let epoch_loss = total / order.len() as f64;
        curve.push(epoch_loss);
        let Some(v) = validate.as_mut() else {
            best = epoch_loss;
            continue;
        };
        let val = v(net)?;
        if !val.is_finite() {
            return Err(Error::Divergence(format!("{label} epoch {epoch}: validation loss is {val}")));
        }
        if val < best * (1.0 - settings.min_improvement) {
            best = val;
            best_net = net.clone();
            stale = 0;
        } else {
            stale += 1;
            if settings.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    if validate.is_some() {
        *net = best_net;
    }
    Ok(FitOutcome { curve, best })
}

/// Mean squared error over the batch, summed over output dimensions.
pub fn mse_loss(out: &Array2<f64>, z: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let b = out.nrows() as f64;
    let diff = out - &z;
    let loss = diff.mapv(|d| d * d).sum() / b;
    (loss, diff * (2.0 / b))
}
