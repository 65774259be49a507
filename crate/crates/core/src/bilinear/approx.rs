use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BilinearConfig, BilinearGrads, BilinearHead, BilinearTape};
use crate::anchor::DecomposedBatch;
use crate::dynamics::join_input;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_net, save_net};
use crate::nn::{Activation, Mlp, MlpGrads, Parameters, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxKind {
    /// MLP over the raw state (and action).
    Plain,
    /// Bilinear head over `(Δs, s̃)` (each with the action appended for critics).
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproxConfig {
    /// Hidden widths of the plain MLP backbone.
    pub hidden: Vec<usize>,
    pub bilinear: BilinearConfig,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            hidden: vec![100, 100],
            bilinear: BilinearConfig::default(),
        }
    }
}

/// Function approximator used by actors and critics.
#[derive(Debug, Clone, PartialEq)]
pub enum Approximator {
    Plain(Mlp),
    Bilinear(BilinearHead),
}

/// Inputs in the layout an [`Approximator`] expects.
#[derive(Debug, Clone, PartialEq)]
pub enum ApproxInput {
    Plain(Array2<f64>),
    Pair { u: Array2<f64>, v: Array2<f64> },
}

#[derive(Debug, Clone)]
pub enum ApproxTape {
    Plain(Tape),
    Bilinear(BilinearTape),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApproxGrads {
    Plain(MlpGrads),
    Bilinear(BilinearGrads),
}

impl ApproxTape {
    pub fn output(&self) -> &Array2<f64> {
        match self {
            ApproxTape::Plain(t) => t.output(),
            ApproxTape::Bilinear(t) => t.output(),
        }
    }
}

impl ApproxInput {
    /// `s` for plain approximators, `(Δs, s̃)` for bilinear ones. An optional
    /// action block is appended to every part.
    pub fn build(
        kind: ApproxKind,
        states: &Array2<f64>,
        actions: Option<&Array2<f64>>,
        decomposition: Option<&DecomposedBatch>,
    ) -> Result<ApproxInput> {
        let with_action = |x: &Array2<f64>| match actions {
            Some(a) => join_input(x, a),
            None => Ok(x.clone()),
        };
        match kind {
            ApproxKind::Plain => Ok(ApproxInput::Plain(with_action(states)?)),
            ApproxKind::Bilinear => {
                let d = decomposition
                    .ok_or_else(|| Error::InvalidConfig("bilinear approximator needs a decomposition".into()))?;
                if d.len() != states.nrows() {
                    return Err(Error::shape("decomposition rows", states.nrows(), d.len()));
                }
                Ok(ApproxInput::Pair {
                    u: with_action(&d.delta)?,
                    v: with_action(&d.anchor)?,
                })
            }
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            ApproxInput::Plain(x) => x.nrows(),
            ApproxInput::Pair { u, .. } => u.nrows(),
        }
    }

    /// Gradient with respect to the trailing `action_dim` columns, summed over
    /// every part the action was appended to.
    pub fn trailing_columns(&self, action_dim: usize) -> Array2<f64> {
        let tail = |x: &Array2<f64>| x.slice(s![.., x.ncols() - action_dim..]).to_owned();
        match self {
            ApproxInput::Plain(x) => tail(x),
            ApproxInput::Pair { u, v } => tail(u) + tail(v),
        }
    }
}

impl Approximator {
    /// `state_dim` is the width of `s` (and of `Δs`, `s̃`); `extra_dim` is the
    /// width of the appended action block (0 for actors).
    pub fn new<R: Rng + ?Sized>(
        kind: ApproxKind,
        state_dim: usize,
        extra_dim: usize,
        out_dim: usize,
        config: &ApproxConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let input = state_dim + extra_dim;
        match kind {
            ApproxKind::Plain => {
                let mut dims = vec![input];
                dims.extend(&config.hidden);
                dims.push(out_dim);
                Ok(Approximator::Plain(Mlp::new(&dims, Activation::Relu, rng)?))
            }
            ApproxKind::Bilinear => Ok(Approximator::Bilinear(BilinearHead::new(
                input,
                input,
                out_dim,
                &config.bilinear,
                Activation::Relu,
                rng,
            )?)),
        }
    }

    pub fn kind(&self) -> ApproxKind {
        match self {
            Approximator::Plain(_) => ApproxKind::Plain,
            Approximator::Bilinear(_) => ApproxKind::Bilinear,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Approximator::Plain(n) => n.out_dim(),
            Approximator::Bilinear(h) => h.out_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Approximator::Plain(n) => n.param_count(),
            Approximator::Bilinear(h) => h.param_count(),
        }
    }

    pub fn forward_tape(&self, input: &ApproxInput) -> Result<ApproxTape> {
        match (self, input) {
            (Approximator::Plain(n), ApproxInput::Plain(x)) => Ok(ApproxTape::Plain(n.forward_tape(x.view())?)),
            (Approximator::Bilinear(h), ApproxInput::Pair { u, v }) => {
                Ok(ApproxTape::Bilinear(h.forward_tape(u.view(), v.view())?))
            }
            _ => Err(Error::InvalidConfig("approximator and input layouts differ".into())),
        }
    }

    pub fn forward(&self, input: &ApproxInput) -> Result<Array2<f64>> {
        match (self, input) {
            (Approximator::Plain(n), ApproxInput::Plain(x)) => n.forward(x.view()),
            (Approximator::Bilinear(h), ApproxInput::Pair { u, v }) => h.forward(u.view(), v.view()),
            _ => Err(Error::InvalidConfig("approximator and input layouts differ".into())),
        }
    }

    /// Parameter gradients and input gradients (in the input's layout).
    pub fn backward(&self, tape: &ApproxTape, upstream: &Array2<f64>) -> Result<(ApproxGrads, ApproxInput)> {
        match (self, tape) {
            (Approximator::Plain(n), ApproxTape::Plain(t)) => {
                let (g, dx) = n.backward(t, upstream.view())?;
                Ok((ApproxGrads::Plain(g), ApproxInput::Plain(dx)))
            }
            (Approximator::Bilinear(h), ApproxTape::Bilinear(t)) => {
                let (g, du, dv) = h.backward(t, upstream.view())?;
                Ok((ApproxGrads::Bilinear(g), ApproxInput::Pair { u: du, v: dv }))
            }
            _ => Err(Error::InvalidConfig("approximator and tape layouts differ".into())),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        match self {
            Approximator::Plain(n) => save_net(n, &dir.join("plain.net")),
            Approximator::Bilinear(h) => h.save(&dir.join("bilinear")),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let plain = dir.join("plain.net");
        if plain.exists() {
            return Ok(Approximator::Plain(load_net(&plain)?));
        }
        let bilinear = dir.join("bilinear");
        if bilinear.is_dir() {
            return Ok(Approximator::Bilinear(BilinearHead::load(&bilinear)?));
        }
        Err(Error::MissingArtifact(format!("no approximator checkpoint in {}", dir.display())))
    }
}

impl Parameters for Approximator {
    fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Approximator::Plain(n) => n.param_slices(),
            Approximator::Bilinear(h) => h.param_slices(),
        }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Approximator::Plain(n) => n.param_slices_mut(),
            Approximator::Bilinear(h) => h.param_slices_mut(),
        }
    }
}

impl Parameters for ApproxGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            ApproxGrads::Plain(g) => g.param_slices(),
            ApproxGrads::Bilinear(g) => g.param_slices(),
        }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ApproxGrads::Plain(g) => g.param_slices_mut(),
            ApproxGrads::Bilinear(g) => g.param_slices_mut(),
        }
    }
}
