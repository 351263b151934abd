//! Deterministic actor-critic with replay, target networks and clipped
//! Gaussian exploration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::policy::nn::{Activation, Adam, Mlp};
use crate::policy::replay::{Experience, ReplayBuffer};
use crate::policy::rollout::{CurvePoint, PolicyParams, RlEnv, POLICY_VERSION};
use crate::seeding::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OffPolicyConfig {
    pub total_steps: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch: usize,
    /// Target-network mixing rate.
    pub tau: f64,
    pub gamma: f64,
    /// Exploration noise at the start and end of training, normalized units.
    pub noise_start: f64,
    pub noise_end: f64,
    /// Uniformly random steps before learning starts.
    pub warmup: usize,
    pub buffer: usize,
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for OffPolicyConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch: 64,
            tau: 0.005,
            gamma: 0.95,
            noise_start: 0.2,
            noise_end: 0.02,
            warmup: 1_000,
            buffer: 100_000,
            reward_scale: 0.01,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl OffPolicyConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.total_steps > 0
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && self.batch > 0
            && (0.0..=1.0).contains(&self.tau)
            && (0.0..=1.0).contains(&self.gamma)
            && self.noise_start >= 0.0
            && self.noise_end >= 0.0
            && self.buffer > 0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid off-policy configuration {self:?}")))
        }
    }
}

/// Trained parameters, or the last finite ones when training aborted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
    /// Diagnostics when a loss or weight became non-finite.
    pub aborted: Option<String>,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

fn concat(s: &[f64], a: &[f64; 2]) -> Vec<f64> {
    let mut v = s.to_vec();
    v.extend_from_slice(a);
    v
}

/// Trains on a single environment instance; fully determined by the seed.
pub fn train_offpolicy<E: RlEnv>(env: &mut E, config: &OffPolicyConfig) -> Result<TrainReport> {
    config.validate()?;
    let dim = env.obs_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut actor = Mlp::new(&sizes(dim, &config.hidden, 2), Activation::Relu, Activation::Tanh, &mut rng)?;
    // start near the zero action
    for w in &mut actor.layers.last_mut().expect("non-empty").weights {
        *w *= 0.1;
    }
    let mut critic = Mlp::new(&sizes(dim + 2, &config.hidden, 1), Activation::Relu, Activation::Identity, &mut rng)?;
    let mut actor_target = actor.clone();
    let mut critic_target = critic.clone();
    let mut actor_opt = Adam::new(actor.num_params(), config.actor_lr);
    let mut critic_opt = Adam::new(critic.num_params(), config.critic_lr);
    let mut buffer = ReplayBuffer::new(config.buffer);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let snapshot = |actor: &Mlp, critic: &Mlp, steps: usize| PolicyParams {
        version: POLICY_VERSION,
        algorithm: "offpolicy".into(),
        actor: actor.clone(),
        critic: Some(critic.clone()),
        log_std: None,
        seed: config.seed,
        steps,
    };
    let mut last_good = snapshot(&actor, &critic, 0);
    let mut curve = Vec::new();
    let mut episode = 0u64;
    let mut state = env.reset(derive_seed(config.seed, &[episode]))?;
    let mut ep_reward = 0.0;
    let mut critic_grad = vec![0.0; critic.num_params()];
    let mut actor_grad = vec![0.0; actor.num_params()];
    let mut scratch = vec![0.0; critic.num_params()];

    for t in 0..config.total_steps {
        let action = if t < config.warmup {
            [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]
        } else {
            let frac = t as f64 / config.total_steps as f64;
            let sigma = config.noise_start + (config.noise_end - config.noise_start) * frac;
            let mu = actor.forward(&state)?;
            [
                (mu[0] + sigma * unit.sample(&mut rng)).clamp(-1.0, 1.0),
                (mu[1] + sigma * unit.sample(&mut rng)).clamp(-1.0, 1.0),
            ]
        };
        let tr = env.step(action)?;
        ep_reward += tr.reward;
        buffer.push(Experience {
            state: state.clone(),
            action,
            reward: tr.reward * config.reward_scale,
            next: tr.next.clone(),
            done: tr.done,
        });
        if tr.done {
            curve.push(CurvePoint { step: t + 1, episode_reward: ep_reward, success: tr.success });
            if actor.is_finite() && critic.is_finite() {
                last_good = snapshot(&actor, &critic, t + 1);
            }
            episode += 1;
            ep_reward = 0.0;
            state = env.reset(derive_seed(config.seed, &[episode]))?;
        } else {
            state = tr.next;
        }

        if t + 1 < config.warmup || buffer.len() < config.batch {
            continue;
        }
        let batch = buffer.sample(config.batch, &mut rng);
        let scale = 1.0 / batch.len() as f64;

        critic_grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for e in &batch {
            let y = if e.done {
                e.reward
            } else {
                let a2 = actor_target.forward(&e.next)?;
                let q2 = critic_target.forward(&concat(&e.next, &[a2[0], a2[1]]))?[0];
                e.reward + config.gamma * q2
            };
            let tr = critic.forward_trace(&concat(&e.state, &e.action))?;
            let err = tr.output()[0] - y;
            loss += err * err * scale;
            critic.backward(&tr, &[err * scale], &mut critic_grad)?;
        }
        critic_opt.step(&mut critic, &critic_grad);

        actor_grad.iter_mut().for_each(|g| *g = 0.0);
        for e in &batch {
            let ta = actor.forward_trace(&e.state)?;
            let a = [ta.output()[0], ta.output()[1]];
            let tc = critic.forward_trace(&concat(&e.state, &a))?;
            let dq = critic.backward(&tc, &[1.0], &mut scratch)?;
            // ascend Q: descend −Q
            actor.backward(&ta, &[-dq[dim] * scale, -dq[dim + 1] * scale], &mut actor_grad)?;
        }
        actor_opt.step(&mut actor, &actor_grad);
        actor_target.soft_update(&actor, config.tau);
        critic_target.soft_update(&critic, config.tau);

        if !loss.is_finite() || !actor.is_finite() || !critic.is_finite() {
            let msg = format!("critic loss {loss} at step {t} (episode {episode}); returning weights from step {}", last_good.steps);
            log::error!("{msg}");
            return Ok(TrainReport { params: last_good, curve, aborted: Some(msg) });
        }
    }
    Ok(TrainReport { params: snapshot(&actor, &critic, config.total_steps), curve, aborted: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::rollout::BanditEnv;

    #[test]
    fn bandit_converges_to_target() {
        let target = [0.4, -0.6];
        let mut env = BanditEnv { target };
        let cfg = OffPolicyConfig { total_steps: 10_000, reward_scale: 1.0, warmup: 500, ..OffPolicyConfig::default() };
        let rep = train_offpolicy(&mut env, &cfg).unwrap();
        assert!(rep.aborted.is_none());
        let a = rep.params.act_normalized(&[0.0; 8]).unwrap();
        // 1e-3 m in action units of 1 cm
        assert!((a[0] - target[0]).abs() < 0.1 && (a[1] - target[1]).abs() < 0.1, "{a:?}");
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = OffPolicyConfig { total_steps: 600, warmup: 100, reward_scale: 1.0, ..OffPolicyConfig::default() };
        let a = train_offpolicy(&mut BanditEnv { target: [0.1, 0.2] }, &cfg).unwrap();
        let b = train_offpolicy(&mut BanditEnv { target: [0.1, 0.2] }, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_returns_last_good() {
        let cfg = OffPolicyConfig { total_steps: 300, warmup: 10, critic_lr: 1e300, reward_scale: 1e300, ..OffPolicyConfig::default() };
        let rep = train_offpolicy(&mut BanditEnv { target: [0.1, 0.2] }, &cfg).unwrap();
        assert!(rep.aborted.is_some());
        assert!(rep.params.actor.is_finite());
    }
}
