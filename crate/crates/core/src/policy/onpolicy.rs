//! Stochastic policy gradient with a clipped surrogate objective.
//!
//! The policy is a diagonal Gaussian around the tanh-squashed actor output
//! with a state-independent log standard deviation. Samples are clipped to
//! the action box when executed; log-probabilities use the unclipped sample.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::policy::nn::{Activation, Adam, Mlp};
use crate::policy::offpolicy::TrainReport;
use crate::policy::rollout::{CurvePoint, PolicyParams, RlEnv, POLICY_VERSION};
use crate::seeding::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnPolicyConfig {
    pub total_steps: usize,
    pub lr: f64,
    /// Environment steps per update.
    pub rollout: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub init_std: f64,
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for OnPolicyConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            lr: 3e-4,
            rollout: 1024,
            epochs: 10,
            minibatch: 64,
            clip: 0.2,
            gamma: 0.95,
            lambda: 0.95,
            init_std: 0.3,
            reward_scale: 0.01,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl OnPolicyConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.total_steps > 0
            && self.lr > 0.0
            && self.rollout > 0
            && self.minibatch > 0
            && self.clip > 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.lambda)
            && self.init_std > 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid on-policy configuration {self:?}")))
        }
    }
}

struct Sample {
    state: Vec<f64>,
    raw_action: [f64; 2],
    log_prob: f64,
    advantage: f64,
    ret: f64,
}

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_prob(mu: &[f64], log_std: &[f64], a: &[f64; 2]) -> f64 {
    (0..2)
        .map(|k| {
            let z = (a[k] - mu[k]) / log_std[k].exp();
            -0.5 * z * z - log_std[k] - LOG_SQRT_2PI
        })
        .sum()
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Trains on a single environment instance; fully determined by the seed.
pub fn train_onpolicy<E: RlEnv>(env: &mut E, config: &OnPolicyConfig) -> Result<TrainReport> {
    config.validate()?;
    let dim = env.obs_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut actor = Mlp::new(&sizes(dim, &config.hidden, 2), Activation::Tanh, Activation::Tanh, &mut rng)?;
    for w in &mut actor.layers.last_mut().expect("non-empty").weights {
        *w *= 0.1;
    }
    let mut value = Mlp::new(&sizes(dim, &config.hidden, 1), Activation::Tanh, Activation::Identity, &mut rng)?;
    let mut log_std = vec![config.init_std.ln(); 2];
    let mut actor_opt = Adam::new(actor.num_params(), config.lr);
    let mut std_opt = Adam::new(2, config.lr);
    let mut value_opt = Adam::new(value.num_params(), config.lr);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let snapshot = |actor: &Mlp, value: &Mlp, log_std: &[f64], steps: usize| PolicyParams {
        version: POLICY_VERSION,
        algorithm: "onpolicy".into(),
        actor: actor.clone(),
        critic: Some(value.clone()),
        log_std: Some(log_std.to_vec()),
        seed: config.seed,
        steps,
    };
    let mut last_good = snapshot(&actor, &value, &log_std, 0);
    let mut curve = Vec::new();
    let mut episode = 0u64;
    let mut state = env.reset(derive_seed(config.seed, &[episode]))?;
    let mut ep_reward = 0.0;
    let mut t = 0;

    while t < config.total_steps {
        // collect
        let n = config.rollout.min(config.total_steps - t);
        let mut states = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut logps = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n + 1);
        for _ in 0..n {
            let mu = actor.forward(&state)?;
            let raw = [
                mu[0] + log_std[0].exp() * unit.sample(&mut rng),
                mu[1] + log_std[1].exp() * unit.sample(&mut rng),
            ];
            let tr = env.step([raw[0].clamp(-1.0, 1.0), raw[1].clamp(-1.0, 1.0)])?;
            t += 1;
            ep_reward += tr.reward;
            values.push(value.forward(&state)?[0]);
            logps.push(log_prob(&mu, &log_std, &raw));
            states.push(std::mem::take(&mut state));
            actions.push(raw);
            rewards.push(tr.reward * config.reward_scale);
            dones.push(tr.done);
            if tr.done {
                curve.push(CurvePoint { step: t, episode_reward: ep_reward, success: tr.success });
                if actor.is_finite() && value.is_finite() && log_std.iter().all(|x| x.is_finite()) {
                    last_good = snapshot(&actor, &value, &log_std, t);
                }
                episode += 1;
                ep_reward = 0.0;
                state = env.reset(derive_seed(config.seed, &[episode]))?;
            } else {
                state = tr.next;
            }
        }
        values.push(value.forward(&state)?[0]);

        // generalized advantage estimates, cut at episode ends
        let mut adv = vec![0.0; n];
        let mut acc = 0.0;
        for i in (0..n).rev() {
            let next_v = if dones[i] { 0.0 } else { values[i + 1] };
            let delta = rewards[i] + config.gamma * next_v - values[i];
            acc = delta + if dones[i] { 0.0 } else { config.gamma * config.lambda * acc };
            adv[i] = acc;
        }
        let mean = adv.iter().sum::<f64>() / n as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-8);
        let samples: Vec<Sample> = (0..n)
            .map(|i| Sample {
                state: std::mem::take(&mut states[i]),
                raw_action: actions[i],
                log_prob: logps[i],
                advantage: (adv[i] - mean) / std,
                ret: adv[i] + values[i],
            })
            .collect();

        // update
        let mut order: Vec<usize> = (0..n).collect();
        let mut a_grad = vec![0.0; actor.num_params()];
        let mut v_grad = vec![0.0; value.num_params()];
        let mut last_loss = 0.0;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch) {
                a_grad.iter_mut().for_each(|g| *g = 0.0);
                v_grad.iter_mut().for_each(|g| *g = 0.0);
                let mut s_grad = [0.0; 2];
                let scale = 1.0 / chunk.len() as f64;
                last_loss = 0.0;
                for &i in chunk {
                    let s = &samples[i];
                    let ta = actor.forward_trace(&s.state)?;
                    let mu = ta.output();
                    let lp = log_prob(mu, &log_std, &s.raw_action);
                    let ratio = (lp - s.log_prob).exp();
                    let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip);
                    let surrogate = (ratio * s.advantage).min(clipped * s.advantage);
                    last_loss -= surrogate * scale;
                    // gradient flows only through the unclipped branch
                    let active = ratio * s.advantage <= clipped * s.advantage;
                    if active {
                        let dlp = -ratio * s.advantage * scale;
                        let mut g_mu = [0.0; 2];
                        for k in 0..2 {
                            let var = (2.0 * log_std[k]).exp();
                            let d = s.raw_action[k] - mu[k];
                            g_mu[k] = dlp * d / var;
                            s_grad[k] += dlp * (d * d / var - 1.0);
                        }
                        actor.backward(&ta, &g_mu, &mut a_grad)?;
                    }
                    let tv = value.forward_trace(&s.state)?;
                    let err = tv.output()[0] - s.ret;
                    last_loss += 0.5 * err * err * scale;
                    value.backward(&tv, &[err * scale], &mut v_grad)?;
                }
                actor_opt.step(&mut actor, &a_grad);
                std_opt.step_slice(&mut log_std, &s_grad);
                value_opt.step(&mut value, &v_grad);
            }
        }
        if !last_loss.is_finite() || !actor.is_finite() || !value.is_finite() || !log_std.iter().all(|x| x.is_finite()) {
            let msg = format!("loss {last_loss} after {t} steps (episode {episode}); returning weights from step {}", last_good.steps);
            log::error!("{msg}");
            return Ok(TrainReport { params: last_good, curve, aborted: Some(msg) });
        }
    }
    Ok(TrainReport { params: snapshot(&actor, &value, &log_std, t), curve, aborted: None })
}
