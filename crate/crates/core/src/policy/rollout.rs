//! Environment and controller interfaces shared by the trainers and the
//! evaluation campaigns.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::insertion_env::{Action, Env, EnvConfig, Outcome, ACTION_BOUND};
use crate::percept::{Observation, PixelPos};
use crate::policy::baseline::vs_baseline;
use crate::policy::features::{featurize, FEATURE_DIM};
use crate::policy::nn::{Activation, Mlp};

/// Serialization version of [`PolicyParams`].
pub const POLICY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub next: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Episodic environment over feature vectors and normalized 2D actions.
pub trait RlEnv {
    fn obs_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    /// `action` lies in [−1, 1]².
    fn step(&mut self, action: [f64; 2]) -> Result<Transition>;
}

/// Insertion environment seen through the compact features.
#[derive(Clone, Debug)]
pub struct InsertionTask {
    pub env: Env,
    prev_c: Option<PixelPos>,
}

impl InsertionTask {
    pub fn new(config: EnvConfig) -> Result<Self> {
        Ok(Self { env: Env::new(config)?, prev_c: None })
    }

    fn encode(&mut self, obs: &Observation) -> Vec<f64> {
        let f = featurize(obs, self.prev_c);
        if obs.poke_com.is_some() {
            self.prev_c = obs.poke_com;
        }
        f.0.to_vec()
    }
}

impl RlEnv for InsertionTask {
    fn obs_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.prev_c = None;
        let obs = self.env.reset(seed)?;
        Ok(self.encode(&obs))
    }

    fn step(&mut self, action: [f64; 2]) -> Result<Transition> {
        let r = self.env.step(Action::new(action[0] * ACTION_BOUND, action[1] * ACTION_BOUND))?;
        Ok(Transition {
            next: self.encode(&r.obs),
            reward: r.reward,
            done: r.done,
            success: r.outcome.outcome == Outcome::Success,
        })
    }
}

/// One-step task rewarding closeness to a fixed action, `−|a − a*|₁`.
#[derive(Clone, Debug)]
pub struct BanditEnv {
    pub target: [f64; 2],
}

impl RlEnv for BanditEnv {
    fn obs_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
        Ok(vec![0.0; FEATURE_DIM])
    }

    fn step(&mut self, a: [f64; 2]) -> Result<Transition> {
        let d = (a[0] - self.target[0]).abs() + (a[1] - self.target[1]).abs();
        Ok(Transition { next: vec![0.0; FEATURE_DIM], reward: -d, done: true, success: d < 0.1 })
    }
}

/// One learning-curve entry per finished episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub episode_reward: f64,
    pub success: bool,
}

/// Mean episode reward of the first and last `fraction` of a curve.
pub fn curve_ends(curve: &[CurvePoint], fraction: f64) -> Option<(f64, f64)> {
    let k = ((curve.len() as f64 * fraction).ceil() as usize).max(1);
    if curve.len() < 2 * k {
        return None;
    }
    let mean = |s: &[CurvePoint]| s.iter().map(|p| p.episode_reward).sum::<f64>() / s.len() as f64;
    Some((mean(&curve[..k]), mean(&curve[curve.len() - k..])))
}

/// Trained policy with its networks and provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub version: u32,
    pub algorithm: String,
    /// Features to the mean action through a tanh output layer.
    pub actor: Mlp,
    pub critic: Option<Mlp>,
    pub log_std: Option<Vec<f64>>,
    pub seed: u64,
    pub steps: usize,
}

impl PolicyParams {
    /// Deterministic normalized action; within [−1, 1]² for any weights.
    pub fn act_normalized(&self, features: &[f64]) -> Result<[f64; 2]> {
        let y = self.actor.forward(features)?;
        Ok([y[0], y[1]])
    }

    pub fn act(&self, features: &[f64]) -> Result<Action> {
        let a = self.act_normalized(features)?;
        Ok(Action::new(a[0] * ACTION_BOUND, a[1] * ACTION_BOUND))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(File::create(path)?, self).map_err(|e| Error::Io(e.into()))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        let p: Self = serde_json::from_reader(f).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if p.version != POLICY_VERSION {
            return Err(Error::Config(format!("policy version {} (expected {POLICY_VERSION})", p.version)));
        }
        if p.actor.input_size() != FEATURE_DIM || p.actor.output_size() != 2 || p.actor.output != Activation::Tanh {
            return Err(invalid("policy actor must map 8 features to 2 tanh-squashed actions"));
        }
        Ok(p)
    }
}

/// Closed-loop insertion controller.
pub trait Controller {
    fn name(&self) -> String;
    /// Clears per-episode memory.
    fn begin(&mut self);
    fn act(&mut self, obs: &Observation, mm_per_px: f64) -> Result<Action>;
}

#[derive(Clone, Debug)]
pub struct PolicyController {
    pub params: PolicyParams,
    prev_c: Option<PixelPos>,
}

impl PolicyController {
    pub fn new(params: PolicyParams) -> Self {
        Self { params, prev_c: None }
    }
}

impl Controller for PolicyController {
    fn name(&self) -> String {
        self.params.algorithm.clone()
    }

    fn begin(&mut self) {
        self.prev_c = None;
    }

    fn act(&mut self, obs: &Observation, _mm_per_px: f64) -> Result<Action> {
        let f = featurize(obs, self.prev_c);
        if obs.poke_com.is_some() {
            self.prev_c = obs.poke_com;
        }
        self.params.act(&f.0)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VsController;

impl Controller for VsController {
    fn name(&self) -> String {
        "vs".into()
    }

    fn begin(&mut self) {}

    fn act(&mut self, obs: &Observation, mm_per_px: f64) -> Result<Action> {
        Ok(vs_baseline(obs, mm_per_px).0)
    }
}
