use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{soft_update, BaseAlgoConfig, Batch, LogTemperature};
use crate::bilinear::{Actor, ApproxGrads, Critic, CriticGrads};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Parameters};
use crate::seeding::StreamRng;

/// Random draws consumed by one critic-loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CqlNoise {
    /// Standard-normal noise for next-state policy actions, `B × |A|`.
    pub next: Array2<f64>,
    /// Uniform actions in `[−1, 1]`, `B·n × |A|` (row `b·n + j`).
    pub uniform: Array2<f64>,
    /// Standard-normal noise for current-state policy actions, `B·n × |A|`.
    pub policy: Array2<f64>,
}

impl CqlNoise {
    pub fn draw<R: Rng + ?Sized>(batch: usize, action_dim: usize, samples: usize, rng: &mut R) -> CqlNoise {
        let next = Array2::from_shape_simple_fn((batch, action_dim), || rng.sample(StandardNormal));
        let uniform = Array2::from_shape_simple_fn((batch * samples, action_dim), || rng.random_range(-1.0..=1.0));
        let policy = Array2::from_shape_simple_fn((batch * samples, action_dim), || rng.sample(StandardNormal));
        CqlNoise { next, uniform, policy }
    }
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    pub td_loss: f64,
    /// Summed over both twins, before scaling by `α_cql`.
    pub penalty: f64,
    pub mean_q: f64,
    pub grads: CriticGrads,
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub mean_log_prob: f64,
    pub grads: ApproxGrads,
}

fn add_into<A: Parameters + ?Sized, B: Parameters + ?Sized>(acc: &mut A, other: &B) {
    for (a, b) in acc.param_slices_mut().into_iter().zip(other.param_slices()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn ensure_finite(what: &str, v: f64, batch: &Batch) -> Result<()> {
    if v.is_finite() {
        return Ok(());
    }
    let r = &batch.rewards;
    Err(Error::NonFinite(format!(
        "{what} is {v} (batch of {}, reward range [{}, {}], |s|max {})",
        batch.len(),
        r.iter().cloned().fold(f64::INFINITY, f64::min),
        r.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        batch.states.iter().map(|x| x.abs()).fold(0.0, f64::max),
    )))
}

/// `log(mean(exp(x)))`, stable; exactly `c` when every entry equals `c`.
fn log_mean_exp(x: ndarray::ArrayView1<f64>) -> (f64, Array1<f64>) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = x.mapv(|v| (v - m).exp());
    let total = e.sum();
    (m + (total / x.len() as f64).ln(), e / total)
}

/// Clipped double-Q TD loss with an entropy-regularized SAC target plus
/// `α_cql · Σ_twins mean_b[logmeanexp_j Q(s_b, a_j) − Q(s_b, a_b)]`, where the
/// `a_j` are `n` uniform actions and `n` current-policy actions per state.
pub fn cql_critic_loss<R: Rng + ?Sized>(
    batch: &Batch,
    critic: &Critic,
    target_critic: &Critic,
    actor: &Actor,
    temperature: f64,
    config: &BaseAlgoConfig,
    rng: &mut R,
) -> Result<CriticLoss> {
    let noise = CqlNoise::draw(batch.len(), actor.action_dim(), config.cql_action_samples, rng);
    cql_critic_loss_with_noise(batch, critic, target_critic, actor, temperature, config, &noise)
}

pub fn cql_critic_loss_with_noise(
    batch: &Batch,
    critic: &Critic,
    target_critic: &Critic,
    actor: &Actor,
    temperature: f64,
    config: &BaseAlgoConfig,
    noise: &CqlNoise,
) -> Result<CriticLoss> {
    let b = batch.len();
    let n = config.cql_action_samples;
    let bf = b as f64;

    // bootstrapped target, no gradient
    let (next_head, _) = actor.forward(&actor.input(&batch.next_states, batch.next_decomposition.as_ref())?)?;
    let next = next_head.sample(&noise.next)?;
    let target_q = target_critic.min_q(&target_critic.input(
        &batch.next_states,
        &next.action,
        batch.next_decomposition.as_ref(),
    )?)?;
    let y = &batch.rewards
        + &((1.0 - &batch.dones) * config.gamma * (&target_q - &(temperature * &next.log_prob)));

    let tapes = critic.forward(&critic.input(&batch.states, &batch.actions, batch.decomposition.as_ref())?)?;
    let (q1, q2) = tapes.values();
    let e1 = &q1 - &y;
    let e2 = &q2 - &y;
    let td_loss = e1.mapv(|v| v * v).sum() / bf + e2.mapv(|v| v * v).sum() / bf;
    let mut dq1 = e1 * (2.0 / bf);
    let mut dq2 = e2 * (2.0 / bf);
    ensure_finite("critic TD loss", td_loss, batch)?;

    let mut penalty = 0.0;
    let mut cql_grads = None;
    if n > 0 {
        // rows b·2n + j: j < n uniform, j ≥ n policy
        let rep: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, 2 * n)).collect();
        let states_rep = batch.states.select(Axis(0), &rep);
        let dec_rep = batch.decomposition.as_ref().map(|d| d.select(&rep));
        let policy_rows: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, n)).collect();
        let raw = actor.net.forward(&actor.input(&batch.states, batch.decomposition.as_ref())?)?;
        let head = crate::nn::GaussianHead::from_raw(&raw.select(Axis(0), &policy_rows), actor.action_dim())?;
        let policy_actions = head.sample(&noise.policy)?.action;
        let mut actions_rep = Array2::zeros((b * 2 * n, actor.action_dim()));
        for i in 0..b {
            for j in 0..n {
                actions_rep.row_mut(i * 2 * n + j).assign(&noise.uniform.row(i * n + j));
                actions_rep.row_mut(i * 2 * n + n + j).assign(&policy_actions.row(i * n + j));
            }
        }
        let cql_tapes = critic.forward(&critic.input(&states_rep, &actions_rep, dec_rep.as_ref())?)?;
        let (c1, c2) = cql_tapes.values();
        let mut w1 = Array1::zeros(b * 2 * n);
        let mut w2 = Array1::zeros(b * 2 * n);
        let (mut p1, mut p2) = (0.0, 0.0);
        for i in 0..b {
            let rows = i * 2 * n..(i + 1) * 2 * n;
            let (l1, s1) = log_mean_exp(c1.slice(ndarray::s![rows.clone()]));
            let (l2, s2) = log_mean_exp(c2.slice(ndarray::s![rows.clone()]));
            p1 += l1 - q1[i];
            p2 += l2 - q2[i];
            w1.slice_mut(ndarray::s![rows.clone()]).assign(&(s1 / bf));
            w2.slice_mut(ndarray::s![rows]).assign(&(s2 / bf));
        }
        penalty = p1 / bf + p2 / bf;
        ensure_finite("conservative penalty", penalty, batch)?;
        if config.alpha_cql != 0.0 {
            let a = config.alpha_cql;
            dq1 -= a / bf;
            dq2 -= a / bf;
            cql_grads = Some(critic.backward(&cql_tapes, &(w1 * a), &(w2 * a))?.0);
        }
    }
    let loss = td_loss + config.alpha_cql * penalty;
    let (mut grads, _) = critic.backward(&tapes, &dq1, &dq2)?;
    if let Some(g) = cql_grads {
        add_into(&mut grads, &g);
    }
    Ok(CriticLoss {
        loss,
        td_loss,
        penalty,
        mean_q: q1.mean().unwrap_or(0.0),
        grads,
    })
}

/// `mean_b[temperature·log π(a_b|s_b) − min_twin Q(s_b, a_b)]` with
/// reparameterized `a_b ~ π(·|s_b)` driven by `noise`.
pub fn sac_actor_loss(
    batch: &Batch,
    actor: &Actor,
    critic: &Critic,
    temperature: f64,
    noise: &Array2<f64>,
) -> Result<ActorLoss> {
    let bf = batch.len() as f64;
    let (head, tape) = actor.forward(&actor.input(&batch.states, batch.decomposition.as_ref())?)?;
    let smp = head.sample(noise)?;
    let tapes = critic.forward(&critic.input(&batch.states, &smp.action, batch.decomposition.as_ref())?)?;
    let (q1, q2) = tapes.values();
    let mut dq1 = Array1::zeros(batch.len());
    let mut dq2 = Array1::zeros(batch.len());
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let q = if q1[i] <= q2[i] {
            dq1[i] = -1.0 / bf;
            q1[i]
        } else {
            dq2[i] = -1.0 / bf;
            q2[i]
        };
        loss += temperature * smp.log_prob[i] - q;
    }
    let loss = loss / bf;
    ensure_finite("actor loss", loss, batch)?;
    let (_, d_action) = critic.backward(&tapes, &dq1, &dq2)?;
    let d_log_prob = Array1::from_elem(batch.len(), temperature / bf);
    let d_raw = head.sample_backward(&smp, &d_action, &d_log_prob)?;
    Ok(ActorLoss {
        loss,
        mean_log_prob: smp.log_prob.mean().unwrap_or(0.0),
        grads: actor.backward(&tape, &d_raw)?,
    })
}

/// `−log α · (mean log π + target)` and its derivative in `log α`.
pub fn temperature_loss(log_temp: &LogTemperature, mean_log_prob: f64, target_entropy: f64) -> (f64, f64) {
    let g = -(mean_log_prob + target_entropy);
    (log_temp.value[0] * g, g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub cql_penalty: f64,
    pub mean_q: f64,
    pub temperature: f64,
    /// `−mean log π` of the sampled actions.
    pub entropy: f64,
}

/// Extension point for base offline algorithms operating on (possibly
/// decomposed) minibatches. Only the conservative SAC is provided.
pub trait BaseAlgorithm {
    fn name(&self) -> &'static str;
    fn update(&mut self, batch: &Batch, rng: &mut StreamRng) -> Result<StepMetrics>;
    fn actor(&self) -> &Actor;
}

/// Conservative SAC: twin critics with target copies, auto-tuned temperature.
#[derive(Debug, Clone)]
pub struct CqlSac {
    pub actor: Actor,
    pub critic: Critic,
    pub target_critic: Critic,
    pub log_temperature: LogTemperature,
    actor_opt: Adam,
    critic_opt: Adam,
    temperature_opt: Adam,
    config: BaseAlgoConfig,
    target_entropy: f64,
}

impl CqlSac {
    pub fn new(actor: Actor, critic: Critic, config: &BaseAlgoConfig) -> Result<Self> {
        config.validate()?;
        let target_entropy = config.target_entropy(actor.action_dim());
        Ok(CqlSac {
            target_critic: critic.clone(),
            actor,
            critic,
            log_temperature: LogTemperature::new(config.initial_temperature),
            actor_opt: Adam::new(AdamConfig::with_lr(config.actor_lr)),
            critic_opt: Adam::new(AdamConfig::with_lr(config.critic_lr)),
            temperature_opt: Adam::new(AdamConfig::with_lr(config.temperature_lr)),
            config: config.clone(),
            target_entropy,
        })
    }
}

impl BaseAlgorithm for CqlSac {
    fn name(&self) -> &'static str {
        "cql"
    }

    fn update(&mut self, batch: &Batch, rng: &mut StreamRng) -> Result<StepMetrics> {
        let temperature = self.log_temperature.temperature();
        let critic_loss = cql_critic_loss(
            batch,
            &self.critic,
            &self.target_critic,
            &self.actor,
            temperature,
            &self.config,
            rng,
        )?;
        self.critic_opt.step(&mut self.critic, &critic_loss.grads)?;

        let noise = Array2::from_shape_simple_fn((batch.len(), self.actor.action_dim()), || rng.sample(StandardNormal));
        let actor_loss = sac_actor_loss(batch, &self.actor, &self.critic, temperature, &noise)?;
        self.actor_opt.step(&mut self.actor, &actor_loss.grads)?;

        let (_, g) = temperature_loss(&self.log_temperature, actor_loss.mean_log_prob, self.target_entropy);
        self.temperature_opt.step(&mut self.log_temperature, &LogTemperature { value: [g] })?;

        soft_update(&mut self.target_critic, &self.critic, self.config.tau)?;
        Ok(StepMetrics {
            actor_loss: actor_loss.loss,
            critic_loss: critic_loss.loss,
            cql_penalty: critic_loss.penalty,
            mean_q: critic_loss.mean_q,
            temperature,
            entropy: -actor_loss.mean_log_prob,
        })
    }

    fn actor(&self) -> &Actor {
        &self.actor
    }
}
