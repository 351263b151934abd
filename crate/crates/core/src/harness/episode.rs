//! Single-episode runners and their records.

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::insertion_env::{Env, EnvConfig, Outcome};
use crate::percept::Observation;
use crate::policy::Controller;
use crate::scene::{approach_orientation, estimate_eyelet_pose, new_world, plan_approach, Pose, WorldConfig};
use crate::seeding::derive_seed;
use crate::tail_finding::{sample_tilt, trace_to_offset, trace_to_tip, TipModel, TraceResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub commanded: (f64, f64),
    pub executed: (f64, f64),
    pub reward: f64,
    pub bump_count: usize,
    pub bump_in_hole: usize,
    /// Tip distance from the slot center after the step, m.
    pub tip_offset: f64,
}

/// Final state of an episode, including failures of stages before
/// insertion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordOutcome {
    Success,
    FailTooFewPixels,
    FailStepLimit,
    StageError { stage: String, message: String },
}

impl RecordOutcome {
    fn from_outcome(o: Outcome) -> Self {
        match o {
            Outcome::Success => Self::Success,
            Outcome::FailTooFewPixels => Self::FailTooFewPixels,
            Outcome::FailStepLimit | Outcome::Running => Self::FailStepLimit,
        }
    }

    fn stage(stage: &str, e: Error) -> Self {
        Self::StageError { stage: stage.into(), message: e.to_string() }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Self::Success)
    }
}

/// Approach stage of a full pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproachLog {
    pub true_thread_length: f64,
    pub trace: TraceResult,
    /// Estimated tip position at the planned pose.
    pub tip_estimate: Vector3<f64>,
    pub tip_in_range: bool,
    /// Distance between the estimated and settled tip, m.
    pub tip_error: f64,
    pub injected_error: Vector3<f64>,
    pub approach: Pose,
}

/// Everything recorded about one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub needle: usize,
    pub thread: usize,
    pub angle: f64,
    pub episode: usize,
    pub seed: u64,
    pub controller: String,
    pub approach: Option<ApproachLog>,
    /// Tip distance from the slot center at the first poke, m.
    pub initial_offset: f64,
    pub steps: Vec<StepLog>,
    pub outcome: RecordOutcome,
    pub steps_taken: usize,
    pub final_offset: f64,
}

impl EpisodeRecord {
    fn new(cfg: &EnvConfig, episode: usize, seed: u64, controller: &dyn Controller) -> Self {
        Self {
            needle: cfg.needle,
            thread: cfg.thread,
            angle: cfg.angle,
            episode,
            seed,
            controller: controller.name(),
            approach: None,
            initial_offset: f64::NAN,
            steps: Vec::new(),
            outcome: RecordOutcome::FailStepLimit,
            steps_taken: 0,
            final_offset: f64::NAN,
        }
    }
}

/// Drives an already started environment to a terminal outcome.
fn drive(
    env: &mut Env,
    first: Observation,
    controller: &mut dyn Controller,
    record: &mut EpisodeRecord,
    image_dir: Option<&Path>,
) -> Result<()> {
    let mm = env.config.sensor.mm_per_px();
    let dump = |env: &Env, step: usize| -> Result<()> {
        if let (Some(dir), Some(img)) = (image_dir, env.last_image()) {
            let name = format!("n{}_t{}_a{}_e{:04}_s{step}.pgm", record.needle, record.thread, record.angle, record.episode);
            img.save_pgm(&dir.join(name))?;
        }
        Ok(())
    };
    record.initial_offset = env.tip_offset();
    dump(env, 0)?;
    controller.begin();
    let mut obs = first;
    loop {
        let a = controller.act(&obs, mm)?;
        let r = env.step(a)?;
        record.steps.push(StepLog {
            commanded: (a.du, a.dv),
            executed: r.executed,
            reward: r.reward,
            bump_count: r.obs.bump_count,
            bump_in_hole: r.obs.bump_in_hole,
            tip_offset: r.outcome.final_offset,
        });
        dump(env, r.outcome.steps_taken)?;
        if r.done {
            record.outcome = RecordOutcome::from_outcome(r.outcome.outcome);
            record.steps_taken = r.outcome.steps_taken;
            record.final_offset = r.outcome.final_offset;
            return Ok(());
        }
        obs = r.obs;
    }
}

/// Insertion-only episode from a randomized reset.
pub fn run_insertion(
    config: &EnvConfig,
    controller: &mut dyn Controller,
    episode: usize,
    seed: u64,
    image_dir: Option<&Path>,
) -> EpisodeRecord {
    let mut record = EpisodeRecord::new(config, episode, seed, controller);
    let result = Env::new(config.clone()).and_then(|mut env| {
        let obs = env.reset(seed)?;
        drive(&mut env, obs, controller, &mut record, image_dir)
    });
    if let Err(e) = result {
        record.outcome = RecordOutcome::stage("insertion", e);
    }
    record
}

/// Trace twice, estimate the tip, plan the approach and run insertion.
///
/// `config.noise_bound` is the calibration error of the eyelet estimate.
/// Stage failures end up in the record's outcome.
pub fn run_full_pipeline(
    config: &EnvConfig,
    tip_model: &TipModel,
    tail_target: f64,
    controller: &mut dyn Controller,
    episode: usize,
    seed: u64,
    image_dir: Option<&Path>,
) -> EpisodeRecord {
    let mut record = EpisodeRecord::new(config, episode, seed, controller);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let sensor = config.sensor;
    let wcfg = WorldConfig {
        thread: config.thread,
        needle: config.needle,
        angle: config.angle,
        seed,
        noise_bound: config.noise_bound,
        ..WorldConfig::default()
    };
    let mut world = match new_world(&wcfg) {
        Ok(w) => w,
        Err(e) => {
            record.outcome = RecordOutcome::stage("world", e);
            return record;
        }
    };
    let true_length = world.thread_length();

    let trace = trace_to_tip(&mut world, &sensor, &mut rng).and_then(|first| {
        let tilt = sample_tilt(&mut rng);
        trace_to_offset(&mut world, &sensor, &first, tail_target, tilt, &mut rng)
    });
    let trace = match trace {
        Ok(t) => t,
        Err(e) => {
            record.outcome = RecordOutcome::stage("trace", e);
            return record;
        }
    };

    let approach = (|| -> Result<ApproachLog> {
        if config.stiffness_scale != 1.0 {
            let m = world.material().scaled_stiffness(config.stiffness_scale);
            world.thread.set_material(m);
            if let Some(t) = world.tail.as_mut() {
                t.set_material(m);
            }
        }
        // the spool pays out thread during the approach
        world.brake_engaged = false;
        let estimate = estimate_eyelet_pose(&world, config.noise_bound, &mut rng)?;
        let orientation = approach_orientation(&estimate.pose);
        // The offset depends weakly on position; two passes settle it.
        let mut pose = Pose::new(world.gripper_pose.position, orientation);
        let mut offset = Vector3::zeros();
        for _ in 0..2 {
            offset = tip_model.predict_offset(trace.l_tail, trace.theta, &pose)?;
            pose = plan_approach(&offset, &estimate)?;
        }
        world.move_gripper_to(&pose, true)?;
        world.settle_tail()?;
        let tip_estimate = pose.position + offset;
        Ok(ApproachLog {
            true_thread_length: true_length,
            trace,
            tip_estimate,
            tip_in_range: tip_model.in_range(trace.l_tail, trace.theta, &pose),
            tip_error: (world.tip() - tip_estimate).norm(),
            injected_error: estimate.injected_error,
            approach: pose,
        })
    })();
    match approach {
        Ok(a) => record.approach = Some(a),
        Err(e) => {
            record.outcome = RecordOutcome::stage("approach", e);
            return record;
        }
    }

    let result = Env::new(config.clone()).and_then(|mut env| {
        let obs = env.start_from(world, seed)?;
        drive(&mut env, obs, controller, &mut record, image_dir)
    });
    if let Err(e) = result {
        record.outcome = RecordOutcome::stage("insertion", e);
    }
    record
}
