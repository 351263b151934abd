//! Goal-conditioned insertion environment.
//!
//! Every step retracts the held tip off the gel, translates it in the gel
//! plane, pokes again and classifies the resulting eyelet image. Commanded
//! displacements are expressed in the nominal gel frame; the executed
//! motion passes through an actuation model with a per-episode in-plane yaw
//! and scale mismatch plus small additive noise.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::percept::{observe, Mask, Observation, PixelPos};
use crate::scene::{
    approach_orientation, new_world, uniform_disk, Pose, Region, WorldConfig, WorldState, GEL_SIZE, MAX_NOISE_BOUND,
};
use crate::tactile::{indentation_force, EyeletImprint, SensorSpec, TactileImage};

/// Largest commanded displacement per axis, metres.
pub const ACTION_BOUND: f64 = 0.01;
/// Terminal reward magnitude.
pub const TERMINAL_REWARD: f64 = 100.0;
/// Number of sampled eyelet pixels.
pub const EYELET_SAMPLES: usize = 500;
/// Pixel threshold at the reference resolution.
pub const REFERENCE_PIXEL_THRESHOLD: f64 = 500.0;
/// Reference resolution of the pixel threshold.
pub const REFERENCE_RESOLUTION: (usize, usize) = (1600, 1200);
/// Steps allowed before a step-limit failure.
pub const STEP_CAP: usize = 5;
/// Commanded indentation of a poke.
pub const POKE_DEPTH: f64 = 1.5e-3;
/// Retraction height above the gel between pokes.
pub const RETRACT_HEIGHT: f64 = 2e-3;
/// Minimum distance of the reset tip from the gel border.
pub const GEL_INSET: f64 = 1e-3;
/// Tail length left below the grip in a reset.
pub const RESET_TAIL: f64 = 0.02;
/// Height above the eyelet at which the reset tail is settled.
const HOVER_HEIGHT: f64 = 0.01;
const MAX_PLACEMENT_DRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub du: f64,
    pub dv: f64,
}

impl Action {
    /// Clips both components to `±ACTION_BOUND`; non-finite values become 0.
    pub fn new(du: f64, dv: f64) -> Self {
        let clip = |x: f64| if x.is_finite() { x.clamp(-ACTION_BOUND, ACTION_BOUND) } else { 0.0 };
        Self { du: clip(du), dv: clip(dv) }
    }

    pub fn zero() -> Self {
        Self { du: 0.0, dv: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub r_terminal: f64,
    pub n: usize,
    pub image_diag: f64,
    pub pixel_threshold: usize,
    pub step_cap: usize,
}

impl RewardSpec {
    pub fn for_sensor(sensor: &SensorSpec) -> Self {
        Self {
            r_terminal: TERMINAL_REWARD,
            n: EYELET_SAMPLES,
            image_diag: sensor.diagonal_px(),
            pixel_threshold: pixel_threshold(sensor.width_px, sensor.height_px),
            step_cap: STEP_CAP,
        }
    }
}

/// Bump pixel threshold scaled by image area from the reference resolution.
pub fn pixel_threshold(width: usize, height: usize) -> usize {
    let (rw, rh) = REFERENCE_RESOLUTION;
    (REFERENCE_PIXEL_THRESHOLD * (width * height) as f64 / (rw * rh) as f64).round() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    FailTooFewPixels,
    FailStepLimit,
    Running,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub outcome: Outcome,
    pub steps_taken: usize,
    /// In-plane distance of the tip from the slot center, metres.
    pub final_offset: f64,
}

/// Outcome from bump size, bump pixels inside the eyelet and step count.
pub fn classify_counts(bump_count: usize, bump_in_hole: usize, steps: usize, spec: &RewardSpec) -> Outcome {
    if bump_count < spec.pixel_threshold {
        Outcome::FailTooFewPixels
    } else if 2 * bump_in_hole > bump_count {
        Outcome::Success
    } else if steps > spec.step_cap {
        Outcome::FailStepLimit
    } else {
        Outcome::Running
    }
}

/// Outcome from the bump and eyelet masks of one image.
pub fn classify_outcome(bump: Option<&Mask>, hole: Option<&Mask>, steps: usize, spec: &RewardSpec) -> Outcome {
    let count = bump.map_or(0, |b| b.pixel_count);
    let inside = match (bump, hole) {
        (Some(b), Some(h)) => b.intersection_count(h),
        _ => 0,
    };
    classify_counts(count, inside, steps, spec)
}

/// Step reward: ±`r_terminal` on terminal outcomes, otherwise the negated
/// mean pixel distance from the poke point to the sampled eyelet pixels
/// over the image diagonal. A running step without a bump scores −1.
pub fn compute_reward(obs: &Observation, outcome: Outcome, spec: &RewardSpec) -> f64 {
    match outcome {
        Outcome::Success => spec.r_terminal,
        Outcome::FailTooFewPixels | Outcome::FailStepLimit => -spec.r_terminal,
        Outcome::Running => match obs.poke_com {
            Some(c) if !obs.eyelet_pixels.is_empty() => {
                let sum: f64 = obs
                    .eyelet_pixels
                    .iter()
                    .map(|&(r, col)| (r as f64 - c.row).hypot(col as f64 - c.col))
                    .sum();
                -(sum / obs.eyelet_pixels.len() as f64) / spec.image_diag
            }
            _ => -1.0,
        },
    }
}

/// Mismatch between commanded and executed in-plane motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Actuation {
    /// Mean yaw of the executed motion relative to the command, degrees.
    pub yaw_bias_deg: f64,
    /// Half width of the uniform per-episode yaw jitter, degrees.
    pub yaw_jitter_deg: f64,
    /// Range of the per-episode motion gain.
    pub gain_range: (f64, f64),
    /// Standard deviation of additive per-step motion noise, metres.
    pub noise_sigma: f64,
}

impl Default for Actuation {
    fn default() -> Self {
        Self { yaw_bias_deg: 30.0, yaw_jitter_deg: 5.0, gain_range: (1.0, 1.2), noise_sigma: 5e-5 }
    }
}

impl Actuation {
    /// Executed motion equals the command.
    pub fn ideal() -> Self {
        Self { yaw_bias_deg: 0.0, yaw_jitter_deg: 0.0, gain_range: (1.0, 1.0), noise_sigma: 0.0 }
    }

    /// Per-episode yaw (radians) and gain.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let yaw = (self.yaw_bias_deg + self.yaw_jitter_deg * (2.0 * rng.gen::<f64>() - 1.0)).to_radians();
        let (lo, hi) = self.gain_range;
        (yaw, if hi > lo { rng.gen_range(lo..=hi) } else { lo })
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.gain_range;
        let ok = self.yaw_bias_deg.is_finite()
            && self.yaw_jitter_deg >= 0.0
            && lo > 0.0
            && hi >= lo
            && hi.is_finite()
            && self.noise_sigma >= 0.0
            && self.noise_sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid actuation model {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub needle: usize,
    pub thread: usize,
    pub angle: f64,
    /// Radius bound of the reset placement error.
    pub noise_bound: f64,
    pub sensor: SensorSpec,
    /// Young's modulus multiplier of the thread.
    pub stiffness_scale: f64,
    pub actuation: Actuation,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            needle: 2,
            thread: 2,
            angle: 60.0,
            noise_bound: MAX_NOISE_BOUND,
            sensor: SensorSpec::default(),
            stiffness_scale: 1.0,
            actuation: Actuation::default(),
        }
    }
}

impl EnvConfig {
    pub fn world_config(&self, seed: u64) -> WorldConfig {
        WorldConfig { thread: self.thread, needle: self.needle, angle: self.angle, seed, noise_bound: 0.0, ..WorldConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_NOISE_BOUND).contains(&self.noise_bound) {
            return Err(Error::Config(format!("noise bound {} outside [0, 0.03]", self.noise_bound)));
        }
        if !(self.stiffness_scale > 0.0 && self.stiffness_scale.is_finite()) {
            return Err(Error::Config("stiffness scale must be positive".into()));
        }
        self.sensor.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.actuation.validate()
    }
}

/// Per-step result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: EpisodeOutcome,
    /// Executed in-plane displacement in the true gel frame.
    pub executed: (f64, f64),
}

/// Insertion environment; one instance per worker.
#[derive(Clone, Debug)]
pub struct Env {
    pub config: EnvConfig,
    pub spec: RewardSpec,
    world: Option<WorldState>,
    imprint: Option<EyeletImprint>,
    rng: ChaCha8Rng,
    yaw: f64,
    gain: f64,
    steps: usize,
    outcome: Outcome,
    last_obs: Option<Observation>,
    last_image: Option<TactileImage>,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let spec = RewardSpec::for_sensor(&config.sensor);
        Ok(Self {
            config,
            spec,
            world: None,
            imprint: None,
            rng: ChaCha8Rng::seed_from_u64(0),
            yaw: 0.0,
            gain: 1.0,
            steps: 0,
            outcome: Outcome::Running,
            last_obs: None,
            last_image: None,
        })
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.world.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn last_observation(&self) -> Option<&Observation> {
        self.last_obs.as_ref()
    }

    /// Eyelet image of the latest poke.
    pub fn last_image(&self) -> Option<&TactileImage> {
        self.last_image.as_ref()
    }

    /// Builds a world from `seed`, grasps a 20 mm tail, places the tip over
    /// the gel at a random in-plane error from the eyelet center and pokes.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut world = new_world(&self.config.world_config(seed))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
        let limit = world.thread.rest_length() - 0.5 * world.footprint;
        world.glide_along_thread((limit - RESET_TAIL).max(0.0))?;
        world.close_grip(crate::tail_finding::sample_tilt(&mut rng))?;
        if self.config.stiffness_scale != 1.0 {
            let m = world.material().scaled_stiffness(self.config.stiffness_scale);
            world.thread.set_material(m);
            if let Some(t) = world.tail.as_mut() {
                t.set_material(m);
            }
        }
        world.brake_engaged = false;

        let eyelet = world.eyelet_pose;
        let orientation = approach_orientation(&eyelet);
        let hover = eyelet.position + eyelet.z_axis() * HOVER_HEIGHT;
        world.move_gripper_to(&Pose::new(hover, orientation), true)?;
        world.settle_tail()?;

        let center = world.gel_coords(&eyelet.position);
        let half = 0.5 * GEL_SIZE - GEL_INSET;
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_DRAWS {
            let (du, dv) = uniform_disk(self.config.noise_bound, &mut rng);
            let (u, v) = (center.x + du, center.y + dv);
            if u.abs() <= half && v.abs() <= half {
                placed = Some((u, v));
                break;
            }
        }
        let (u, v) = placed.ok_or_else(|| Error::Planning("no reset placement over the gel".into()))?;
        let tip = world.gel_coords(&world.tip());
        self.translate_gel(&mut world, Vector3::new(u - tip.x, v - tip.y, RETRACT_HEIGHT - tip.z))?;

        (self.yaw, self.gain) = self.config.actuation.draw(&mut rng);
        self.imprint = Some(EyeletImprint::new(&world, &self.config.sensor)?);
        self.rng = rng;
        self.steps = 0;
        self.outcome = Outcome::Running;
        self.world = Some(world);
        let obs = self.poke()?;
        self.last_obs = Some(obs.clone());
        Ok(obs)
    }

    /// Starts an episode from a prepared world whose gripper already holds
    /// the tail over the gel, as after a planned approach.
    pub fn start_from(&mut self, mut world: WorldState, seed: u64) -> Result<Observation> {
        if !world.grip_closed {
            return Err(Error::InvalidState("insertion needs a grasped tail".into()));
        }
        world.brake_engaged = false;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
        (self.yaw, self.gain) = self.config.actuation.draw(&mut rng);
        let tip = world.gel_coords(&world.tip());
        self.translate_gel(&mut world, Vector3::new(0.0, 0.0, RETRACT_HEIGHT - tip.z))?;
        self.imprint = Some(EyeletImprint::new(&world, &self.config.sensor)?);
        self.rng = rng;
        self.steps = 0;
        self.outcome = Outcome::Running;
        self.world = Some(world);
        let obs = self.poke()?;
        self.last_obs = Some(obs.clone());
        Ok(obs)
    }

    /// Moves the gripper by a gel-frame displacement.
    fn translate_gel(&self, world: &mut WorldState, d: Vector3<f64>) -> Result<()> {
        let g = world.gel_pose;
        let w = g.x_axis() * d.x + g.y_axis() * d.y + g.z_axis() * d.z;
        world.move_gripper(&Isometry3::from_parts(Translation3::from(w), UnitQuaternion::identity()), true)?;
        Ok(())
    }

    /// Lowers the tip from above the gel until it indents the gel by the
    /// poke depth or rests on the needle plate, then images the gel.
    fn poke(&mut self) -> Result<Observation> {
        let world = self.world.as_mut().ok_or_else(|| Error::InvalidState("environment not reset".into()))?;
        let tip = world.gel_coords(&world.tip());
        let region = world.eyelet_layout().region(tip.x, tip.y);
        let stop = if region == Region::Rim { world.needle.plate_thickness } else { -POKE_DEPTH };
        let g = world.gel_pose;
        let d = g.z_axis() * (stop - tip.z);
        world.move_gripper(&Isometry3::from_parts(Translation3::from(d), UnitQuaternion::identity()), true)?;
        let force = indentation_force(POKE_DEPTH, world.material().thickness, self.config.sensor.gel_young_modulus);
        let imprint = self.imprint.as_ref().expect("imprint built with the world");
        let img = imprint.render(world, force, &mut self.rng)?;
        let obs = observe(&img, self.spec.n, &mut self.rng)?;
        self.last_image = Some(img);
        Ok(obs)
    }

    /// Retract, translate by the executed form of `action`, poke, classify.
    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.world.is_none() {
            return Err(Error::InvalidState("environment not reset".into()));
        }
        if self.outcome.is_terminal() {
            return Err(Error::InvalidState(format!("episode already ended with {:?}", self.outcome)));
        }
        let a = Action::new(action.du, action.dv);
        let (s, c) = self.yaw.sin_cos();
        let mut ex = Vector2::new(c * a.du - s * a.dv, s * a.du + c * a.dv) * self.gain;
        let sigma = self.config.actuation.noise_sigma;
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
            ex += Vector2::new(n.sample(&mut self.rng), n.sample(&mut self.rng));
        }
        let mut world = self.world.take().expect("checked above");
        let tip = world.gel_coords(&world.tip());
        let res = self.translate_gel(&mut world, Vector3::new(ex.x, ex.y, RETRACT_HEIGHT - tip.z));
        self.world = Some(world);
        res?;
        let obs = self.poke()?;
        self.steps += 1;
        self.outcome = classify_counts(obs.bump_count, obs.bump_in_hole, self.steps, &self.spec);
        let reward = compute_reward(&obs, self.outcome, &self.spec);
        self.last_obs = Some(obs.clone());
        Ok(StepResult {
            obs,
            reward,
            done: self.outcome.is_terminal(),
            outcome: EpisodeOutcome { outcome: self.outcome, steps_taken: self.steps, final_offset: self.tip_offset() },
            executed: (ex.x, ex.y),
        })
    }

    /// In-plane distance of the tip from the slot center.
    pub fn tip_offset(&self) -> f64 {
        self.world.as_ref().map_or(f64::NAN, |w| {
            let t = w.gel_coords(&w.tip());
            let (cu, cv) = w.eyelet_layout().slot_center;
            (t.x - cu).hypot(t.y - cv)
        })
    }

    /// Tip position in gel coordinates (u, v, height).
    pub fn tip_gel_coords(&self) -> Option<Vector3<f64>> {
        self.world.as_ref().map(|w| w.gel_coords(&w.tip()))
    }

    /// Pixel position of a gel point in the eyelet image.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<PixelPos> {
        self.imprint.as_ref().map(|i| {
            let (col, row) = i.pixel_of(u, v);
            PixelPos { row, col }
        })
    }
}
