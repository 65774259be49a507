use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{ApproxConfig, ApproxGrads, ApproxInput, ApproxKind, ApproxTape, Approximator};
use crate::anchor::DecomposedBatch;
use crate::error::{Error, Result};
use crate::nn::{GaussianHead, Parameters};

/// Gaussian policy over `s` (plain) or `(Δs, s̃)` (bilinear). The network emits
/// `[mean | log_std]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Approximator,
    state_dim: usize,
    action_dim: usize,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        kind: ApproxKind,
        state_dim: usize,
        action_dim: usize,
        config: &ApproxConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Actor {
            net: Approximator::new(kind, state_dim, 0, 2 * action_dim, config, rng)?,
            state_dim,
            action_dim,
        })
    }

    pub fn kind(&self) -> ApproxKind {
        self.net.kind()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input(&self, states: &Array2<f64>, decomposition: Option<&DecomposedBatch>) -> Result<ApproxInput> {
        ApproxInput::build(self.kind(), states, None, decomposition)
    }

    pub fn forward(&self, input: &ApproxInput) -> Result<(GaussianHead, ApproxTape)> {
        let tape = self.net.forward_tape(input)?;
        let head = GaussianHead::from_raw(tape.output(), self.action_dim)?;
        Ok((head, tape))
    }

    /// `tanh(mean)`.
    pub fn act_deterministic(&self, states: &Array2<f64>, decomposition: Option<&DecomposedBatch>) -> Result<Array2<f64>> {
        let raw = self.net.forward(&self.input(states, decomposition)?)?;
        Ok(GaussianHead::from_raw(&raw, self.action_dim)?.deterministic())
    }

    pub fn backward(&self, tape: &ApproxTape, d_raw: &Array2<f64>) -> Result<ApproxGrads> {
        Ok(self.net.backward(tape, d_raw)?.0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.net.save(dir)
    }

    pub fn load(dir: &Path, state_dim: usize, action_dim: usize) -> Result<Self> {
        let net = Approximator::load(dir)?;
        if net.out_dim() != 2 * action_dim {
            return Err(Error::shape("actor output", 2 * action_dim, net.out_dim()));
        }
        Ok(Actor {
            net,
            state_dim,
            action_dim,
        })
    }
}

impl Parameters for Actor {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.net.param_slices()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.param_slices_mut()
    }
}

/// Twin Q-functions with independent parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub q1: Approximator,
    pub q2: Approximator,
    state_dim: usize,
    action_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticGrads {
    pub q1: ApproxGrads,
    pub q2: ApproxGrads,
}

pub struct CriticTapes {
    pub q1: ApproxTape,
    pub q2: ApproxTape,
}

impl CriticTapes {
    pub fn values(&self) -> (Array1<f64>, Array1<f64>) {
        (column(self.q1.output()), column(self.q2.output()))
    }
}

fn column(out: &Array2<f64>) -> Array1<f64> {
    out.column(0).to_owned()
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        kind: ApproxKind,
        state_dim: usize,
        action_dim: usize,
        config: &ApproxConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Critic {
            q1: Approximator::new(kind, state_dim, action_dim, 1, config, rng)?,
            q2: Approximator::new(kind, state_dim, action_dim, 1, config, rng)?,
            state_dim,
            action_dim,
        })
    }

    pub fn kind(&self) -> ApproxKind {
        self.q1.kind()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn input(
        &self,
        states: &Array2<f64>,
        actions: &Array2<f64>,
        decomposition: Option<&DecomposedBatch>,
    ) -> Result<ApproxInput> {
        if actions.ncols() != self.action_dim {
            return Err(Error::shape("critic action", self.action_dim, actions.ncols()));
        }
        ApproxInput::build(self.kind(), states, Some(actions), decomposition)
    }

    pub fn forward(&self, input: &ApproxInput) -> Result<CriticTapes> {
        Ok(CriticTapes {
            q1: self.q1.forward_tape(input)?,
            q2: self.q2.forward_tape(input)?,
        })
    }

    pub fn q_values(&self, input: &ApproxInput) -> Result<(Array1<f64>, Array1<f64>)> {
        Ok((column(&self.q1.forward(input)?), column(&self.q2.forward(input)?)))
    }

    /// Elementwise minimum of the twins, used for bootstrapped targets.
    pub fn min_q(&self, input: &ApproxInput) -> Result<Array1<f64>> {
        let (a, b) = self.q_values(input)?;
        Ok(ndarray::Zip::from(&a).and(&b).map_collect(|&x, &y| x.min(y)))
    }

    /// Gradients of `Σ_b dq1[b]·Q1_b + dq2[b]·Q2_b`, plus its gradient with
    /// respect to the actions.
    pub fn backward(&self, tapes: &CriticTapes, dq1: &Array1<f64>, dq2: &Array1<f64>) -> Result<(CriticGrads, Array2<f64>)> {
        let (g1, dx1) = self.q1.backward(&tapes.q1, &dq1.clone().insert_axis(Axis(1)))?;
        let (g2, dx2) = self.q2.backward(&tapes.q2, &dq2.clone().insert_axis(Axis(1)))?;
        let da = dx1.trailing_columns(self.action_dim) + dx2.trailing_columns(self.action_dim);
        Ok((CriticGrads { q1: g1, q2: g2 }, da))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.q1.save(&dir.join("q1"))?;
        self.q2.save(&dir.join("q2"))
    }

    pub fn load(dir: &Path, state_dim: usize, action_dim: usize) -> Result<Self> {
        let q1 = Approximator::load(&dir.join("q1"))?;
        let q2 = Approximator::load(&dir.join("q2"))?;
        if q1.kind() != q2.kind() || q1.out_dim() != 1 || q2.out_dim() != 1 {
            return Err(Error::Format("critic twins disagree".into()));
        }
        Ok(Critic {
            q1,
            q2,
            state_dim,
            action_dim,
        })
    }
}

impl Parameters for Critic {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.q1.param_slices();
        v.extend(self.q2.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.q1.param_slices_mut();
        v.extend(self.q2.param_slices_mut());
        v
    }
}

impl Parameters for CriticGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.q1.param_slices();
        v.extend(self.q2.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.q1.param_slices_mut();
        v.extend(self.q2.param_slices_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::BilinearConfig;
    use crate::nn::gradcheck::{check_input, check_parameters, probe_weights};
    use crate::nn::GradCheckOptions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> ApproxConfig {
        ApproxConfig {
            hidden: vec![12, 10],
            bilinear: BilinearConfig {
                k: 4,
                m: 6,
                embed_hidden: vec![9, 8],
                post_hidden: vec![10, 7],
            },
        }
    }

    fn decomposed(states: &Array2<f64>, rng: &mut ChaCha8Rng) -> DecomposedBatch {
        let anchor = states.mapv(|v| v + rng.random_range(-0.5..0.5));
        DecomposedBatch::from_anchors(states, anchor)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn actor_full_path_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [ApproxKind::Plain, ApproxKind::Bilinear] {
            for seed in 0..20 {
                let actor = Actor::new(kind, 4, 2, &config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let s = random(1, 4, &mut rng);
                let d = decomposed(&s, &mut rng);
                let noise = random(1, 2, &mut rng);
                let wa = Array2::from_shape_vec((1, 2), probe_weights(2)).unwrap();
                let wl = Array1::from(vec![0.7]);
                // objective: weighted sampled action plus weighted log-prob
                let objective = |a: &Actor| -> f64 {
                    let (head, _) = a.forward(&a.input(&s, Some(&d)).unwrap()).unwrap();
                    let smp = head.sample(&noise).unwrap();
                    (&smp.action * &wa).sum() + (&smp.log_prob * &wl).sum()
                };
                let input = actor.input(&s, Some(&d)).unwrap();
                let (head, tape) = actor.forward(&input).unwrap();
                let smp = head.sample(&noise).unwrap();
                let d_raw = head.sample_backward(&smp, &wa, &wl).unwrap();
                let grads = actor.backward(&tape, &d_raw).unwrap();
                let mut probe = actor.clone();
                let err = check_parameters(&mut probe, &grads, objective, &GradCheckOptions::default());
                assert!(err < 1e-4, "{kind:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn critic_action_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [ApproxKind::Plain, ApproxKind::Bilinear] {
            for seed in 0..20 {
                let critic = Critic::new(kind, 4, 2, &config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let s = random(1, 4, &mut rng);
                let d = decomposed(&s, &mut rng);
                let a = random(1, 2, &mut rng);
                let q = |c: &Critic, a: &Array2<f64>| -> f64 {
                    let (q1, q2) = c.q_values(&c.input(&s, a, Some(&d)).unwrap()).unwrap();
                    0.6 * q1[0] - 0.3 * q2[0]
                };
                let tapes = critic.forward(&critic.input(&s, &a, Some(&d)).unwrap()).unwrap();
                let (grads, da) = critic
                    .backward(&tapes, &Array1::from(vec![0.6]), &Array1::from(vec![-0.3]))
                    .unwrap();
                let ea = check_input(
                    a.as_slice().unwrap(),
                    da.as_slice().unwrap(),
                    |x| q(&critic, &Array2::from_shape_vec((1, 2), x.to_vec()).unwrap()),
                    1e-5,
                );
                let mut probe = critic.clone();
                let ep = check_parameters(&mut probe, &grads, |c| q(c, &a), &GradCheckOptions::default());
                assert!(ea < 1e-4 && ep < 1e-4, "{kind:?} seed {seed}: action {ea} params {ep}");
            }
        }
    }

    #[test]
    fn identical_twins_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut critic = Critic::new(ApproxKind::Bilinear, 4, 2, &config(), &mut rng).unwrap();
        critic.q2 = critic.q1.clone();
        let s = random(5, 4, &mut rng);
        let d = decomposed(&s, &mut rng);
        let a = random(5, 2, &mut rng);
        let (q1, q2) = critic.q_values(&critic.input(&s, &a, Some(&d)).unwrap()).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn zeroed_phi2_makes_q_independent_of_delta_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut critic = Critic::new(ApproxKind::Bilinear, 4, 2, &config(), &mut rng).unwrap();
        let Approximator::Bilinear(h) = &mut critic.q1 else { unreachable!() };
        for l in h.phi2.layers_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let post_zero = h.post.forward_one(&[0.0; 6]).unwrap()[0];
        let s = random(3, 4, &mut rng);
        let d = decomposed(&s, &mut rng);
        let a = random(3, 2, &mut rng);
        let (q1, _) = critic.q_values(&critic.input(&s, &a, Some(&d)).unwrap()).unwrap();
        assert!(q1.iter().all(|&q| q == post_zero));
    }

    #[test]
    fn zero_delta_ignores_phi1_weights_when_biases_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut actor = Actor::new(ApproxKind::Bilinear, 4, 2, &config(), &mut rng).unwrap();
        let Approximator::Bilinear(h) = &mut actor.net else { unreachable!() };
        for l in h.phi1.layers_mut() {
            l.bias.fill(0.0);
        }
        let s = random(2, 4, &mut rng);
        let d = DecomposedBatch::from_anchors(&s, s.clone());
        assert!(d.delta.iter().all(|&v| v == 0.0));
        let before = actor.act_deterministic(&s, Some(&d)).unwrap();
        let Approximator::Bilinear(h) = &mut actor.net else { unreachable!() };
        h.phi1.layers_mut().last_mut().unwrap().weights.row_mut(0).fill(3.0);
        let after = actor.act_deterministic(&s, Some(&d)).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn outputs_are_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = Actor::new(ApproxKind::Bilinear, 4, 2, &config(), &mut rng).unwrap();
        let s = random(8, 4, &mut rng) * 10.0;
        let d = decomposed(&s, &mut rng);
        let a = actor.act_deterministic(&s, Some(&d)).unwrap();
        assert_eq!(a, actor.act_deterministic(&s, Some(&d)).unwrap());
        assert!(a.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn bilinear_without_decomposition_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let actor = Actor::new(ApproxKind::Bilinear, 4, 2, &config(), &mut rng).unwrap();
        assert!(actor.act_deterministic(&random(1, 4, &mut rng), None).is_err());
    }

    #[test]
    fn checkpoints_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dir = tempfile::tempdir().unwrap();
        for kind in [ApproxKind::Plain, ApproxKind::Bilinear] {
            let actor = Actor::new(kind, 4, 2, &config(), &mut rng).unwrap();
            let critic = Critic::new(kind, 4, 2, &config(), &mut rng).unwrap();
            let sub = dir.path().join(format!("{kind:?}"));
            actor.save(&sub.join("actor")).unwrap();
            critic.save(&sub.join("critic")).unwrap();
            assert_eq!(Actor::load(&sub.join("actor"), 4, 2).unwrap(), actor);
            assert_eq!(Critic::load(&sub.join("critic"), 4, 2).unwrap(), critic);
        }
    }
}
