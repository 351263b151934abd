//! Two-run tail-end finding and the learned tip-offset regressor.
//!
//! The first run slides the open grip down the braked thread until the
//! thread end shows up in the finger image at the sensor center row; the
//! traversal plus the visible remainder is the thread length. The second run
//! stops short of that by the requested tail length and closes the grip. A
//! small network then maps the tail length, its in-grip angle and the grasp
//! pose to the offset of the tip from the grasp point.

use std::f64::consts::TAU;
use std::fs::File;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlo_sim::{
    new_clamped_tail, settle, MaterialSpec, ParticleChain, StepParams, DEFAULT_DAMPING, DEFAULT_SPACING, GRAVITY,
};
use crate::error::{invalid, Error, Result};
use crate::percept::{entry_border, find, line_endpoint, line_orientation, residual_length, segment, Border, Label};
use crate::policy::nn::{Activation, Adam, Mlp};
use crate::scene::{grip_orientation, Pose, WorldState, TAIL_SETTLE_SPEED, TAIL_SETTLE_STEPS};
use crate::seeding::derive_seed;
use crate::tactile::{render_grip_chains, render_grip_image, SensorSpec, TactileImage};

/// Glide increment of the first run.
pub const TRACE_STEP: f64 = 5e-3;
/// Longest first-run traversal before giving up.
pub const MAX_TRACE_TRAVEL: f64 = 1.0;
/// Endpoint distance from the center row accepted as a stop, pixels.
pub const CENTER_TOLERANCE_PX: f64 = 2.0;
/// Corrective glides allowed once the endpoint is visible.
const MAX_CORRECTIONS: usize = 8;
/// Default tail length left below the grip.
pub const DEFAULT_TAIL_TARGET: f64 = 0.02;
/// Range of tail lengths in the tip dataset.
pub const TAIL_RANGE: (f64, f64) = (0.005, 0.04);
/// Bound of the in-grip tilt, degrees.
pub const TILT_RANGE_DEG: f64 = 8.0;
/// Range of the grip axis angle from straight down in the tip dataset, degrees.
pub const AXIS_RANGE_DEG: (f64, f64) = (30.0, 95.0);
/// Default hidden layer widths of the tip model.
pub const TIP_HIDDEN: [usize; 3] = [16, 32, 32];
/// Serialization version of [`TipModel`].
pub const TIP_MODEL_VERSION: u32 = 1;
/// Redraws allowed per dataset sample.
const MAX_REDRAWS: u64 = 20;
/// Number of tip model inputs.
pub const TIP_INPUTS: usize = 8;

/// Result of the first run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstRun {
    pub d1: f64,
    pub l_thread: f64,
    /// Endpoint row at the stop.
    pub endpoint_row: f64,
    pub renders: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub d1: f64,
    pub d2: f64,
    pub l_thread: f64,
    pub l_tail: f64,
    /// In-grip thread angle, degrees in [0, 180).
    pub theta: f64,
    pub p_tac: Pose,
}

/// Slides the open grip from the beginning point until the thread end sits
/// at the sensor center row.
pub fn trace_to_tip<R: Rng + ?Sized>(world: &mut WorldState, sensor: &SensorSpec, rng: &mut R) -> Result<FirstRun> {
    sensor.validate()?;
    if world.grip_closed || !world.brake_engaged {
        return Err(Error::InvalidState("tracing needs an open grip and an engaged brake".into()));
    }
    world.reset_glide()?;
    let pitch = sensor.m_per_px();
    let center = 0.5 * (sensor.height_px as f64 - 1.0);
    // the endpoint must first show below the center row
    let step = TRACE_STEP.min(0.5 * sensor.fov_v - 2.0 * CENTER_TOLERANCE_PX * pitch);
    let mut renders = 0;
    let mut corrections = 0;
    loop {
        let img = render_grip_image(world, sensor, rng)?;
        renders += 1;
        if let Some((row, residual)) = visible_end(&img)? {
            let off = row - center;
            if off.abs() <= CENTER_TOLERANCE_PX {
                return Ok(FirstRun { d1: world.traversed, l_thread: world.traversed + residual, endpoint_row: row, renders });
            }
            if off < 0.0 || corrections == MAX_CORRECTIONS {
                return Err(Error::TraceFailure(format!(
                    "endpoint at row {row:.1} cannot be brought to center row {center:.1}"
                )));
            }
            corrections += 1;
            world.glide_along_thread(off * pitch)?;
            continue;
        }
        if world.traversed >= MAX_TRACE_TRAVEL {
            return Err(Error::TraceFailure(format!("no endpoint within {MAX_TRACE_TRAVEL} m of travel")));
        }
        let before = world.traversed;
        let g = world.glide_along_thread(step)?;
        if g.clipped && g.traversed == before {
            return Err(Error::TraceFailure(format!("thread end reached at {before:.4} m without a visible endpoint")));
        }
    }
}

/// Endpoint row and visible remainder of a line entering from the top.
fn visible_end(img: &TactileImage) -> Result<Option<(f64, f64)>> {
    let masks = segment(img, &[Label::Line]);
    let Some(line) = find(&masks, Label::Line) else { return Ok(None) };
    if entry_border(line) != Some(Border::Top) {
        return Ok(None);
    }
    let Some(end) = line_endpoint(line) else { return Ok(None) };
    Ok(Some((end.row, residual_length(line, img.mm_per_px)?)))
}

/// Second run: glides `d1 − l_tail_target` from the beginning point and
/// closes the grip with in-grip tilt `tilt` (radians).
pub fn trace_to_offset<R: Rng + ?Sized>(
    world: &mut WorldState,
    sensor: &SensorSpec,
    first: &FirstRun,
    l_tail_target: f64,
    tilt: f64,
    rng: &mut R,
) -> Result<TraceResult> {
    if !(l_tail_target > 0.0 && l_tail_target < first.d1) {
        return Err(invalid(format!("tail target {l_tail_target} outside (0, d1 = {})", first.d1)));
    }
    world.reset_glide()?;
    world.glide_along_thread(first.d1 - l_tail_target)?;
    let d2 = world.traversed;
    world.close_grip(tilt)?;
    let img = render_grip_image(world, sensor, rng)?;
    Ok(TraceResult {
        d1: first.d1,
        d2,
        l_thread: first.l_thread,
        l_tail: first.d1 - d2,
        theta: grip_theta(&img)?,
        p_tac: world.gripper_pose,
    })
}

/// In-grip thread angle from a finger image, degrees in [0, 180).
pub fn grip_theta(img: &TactileImage) -> Result<f64> {
    let masks = segment(img, &[Label::Line]);
    let line = find(&masks, Label::Line).ok_or_else(|| Error::InsufficientExtent("no thread line in grip image".into()))?;
    let a = line_orientation(line)?;
    Ok(if a < 0.0 { a + 180.0 } else { a })
}

/// Uniform in-grip tilt within the configured bound, radians.
pub fn sample_tilt<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    TILT_RANGE_DEG.to_radians() * (2.0 * rng.gen::<f64>() - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TipSample {
    pub l_tail: f64,
    pub theta: f64,
    pub p_tac: Pose,
    /// Settled tip minus grasp position.
    pub offset_true: Vector3<f64>,
    /// Unit direction of the tail before it sags.
    pub free_direction: Vector3<f64>,
}

impl TipSample {
    /// Tip displacement perpendicular to the unloaded tail direction.
    pub fn droop(&self) -> f64 {
        let d = self.free_direction;
        (self.offset_true - d * self.offset_true.dot(&d)).norm()
    }
}

/// Grasps a straight tail of length `l_tail` with tilt `tilt` at `p_tac`,
/// reads the in-grip angle and lets the tail settle.
///
/// Returns `None` when the settle does not converge.
pub fn grasped_tail_sample<R: Rng + ?Sized>(
    material: MaterialSpec,
    sensor: &SensorSpec,
    l_tail: f64,
    tilt: f64,
    p_tac: Pose,
    rng: &mut R,
) -> Result<Option<TipSample>> {
    if !(l_tail >= 0.0) {
        return Err(invalid(format!("tail length {l_tail} must be non-negative")));
    }
    let grip = p_tac.position;
    let dir = p_tac.orientation * Vector3::new(-tilt.sin(), 0.0, tilt.cos());
    let lead_len = sensor.fov_v;
    let lead_n = ((lead_len / DEFAULT_SPACING).ceil() as usize).max(2);
    let lead_pts = (0..=lead_n).map(|i| grip - dir * (lead_len * (1.0 - i as f64 / lead_n as f64))).collect();
    let lead = ParticleChain::from_positions(lead_pts, material, lead_len / lead_n as f64, DEFAULT_DAMPING)?;
    if l_tail == 0.0 {
        let img = render_grip_chains(&[&lead], &p_tac, sensor, rng)?;
        return Ok(Some(TipSample {
            l_tail,
            theta: grip_theta(&img)?,
            p_tac,
            offset_true: Vector3::zeros(),
            free_direction: dir,
        }));
    }
    let mut tail = new_clamped_tail(grip, dir, l_tail, material, DEFAULT_SPACING, DEFAULT_DAMPING)?;
    let img = render_grip_chains(&[&lead, &tail], &p_tac, sensor, rng)?;
    let theta = grip_theta(&img)?;
    let out = settle(&mut tail, &[], &StepParams::default(), TAIL_SETTLE_SPEED, TAIL_SETTLE_STEPS)?;
    if !out.converged {
        return Ok(None);
    }
    Ok(Some(TipSample { l_tail, theta, p_tac, offset_true: tail.tip() - grip, free_direction: dir }))
}

/// Grip axis at `beta` from straight down and azimuth `phi`, radians.
pub fn grip_axis(beta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(beta.sin() * phi.cos(), beta.sin() * phi.sin(), -beta.cos())
}

fn random_sample(material: MaterialSpec, sensor: &SensorSpec, seed: u64) -> Result<Option<TipSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = rng.gen_range(TAIL_RANGE.0..=TAIL_RANGE.1);
    let tilt = sample_tilt(&mut rng);
    let beta = rng.gen_range(AXIS_RANGE_DEG.0..=AXIS_RANGE_DEG.1).to_radians();
    let phi = TAU * rng.gen::<f64>();
    let pos = Vector3::new(rng.gen_range(0.35..0.55), rng.gen_range(0.05..0.25), rng.gen_range(0.10..0.30));
    let pose = Pose::new(pos, grip_orientation(&grip_axis(beta, phi))?);
    grasped_tail_sample(material, sensor, l, tilt, pose, &mut rng)
}

/// Tip dataset of `count` random grasps, collected in parallel with one
/// derived seed per sample. Unsettled samples are redrawn.
pub fn collect_tip_dataset(count: usize, material: MaterialSpec, sensor: &SensorSpec, seed: u64) -> Result<Vec<TipSample>> {
    if count == 0 {
        return Err(invalid("tip dataset needs at least one sample"));
    }
    material.validate()?;
    sensor.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..MAX_REDRAWS {
                if let Some(s) = random_sample(material, sensor, derive_seed(seed, &[i, attempt]))? {
                    return Ok(s);
                }
                log::warn!("tip sample {i} attempt {attempt} did not settle, redrawing");
            }
            Err(Error::NumericFailure { step: TAIL_SETTLE_STEPS, detail: format!("tip sample {i} never settled") })
        })
        .collect()
}

/// Model inputs: tail length, in-grip angle, grasp position and grip axis.
pub fn tip_features(l_tail: f64, theta: f64, p_tac: &Pose) -> [f64; TIP_INPUTS] {
    let p = p_tac.position;
    let z = p_tac.z_axis();
    [l_tail, theta, p.x, p.y, p.z, z.x, z.y, z.z]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TipTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TipTrainConfig {
    fn default() -> Self {
        Self { hidden: TIP_HIDDEN.to_vec(), epochs: 600, batch: 32, lr: 3e-3, train_fraction: 0.8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub lr: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub final_loss: f64,
}

/// Tip-offset regressor with per-dimension input and output scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TipModel {
    pub version: u32,
    pub net: Mlp,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
    pub meta: Option<TrainingMeta>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TipEstimate {
    pub position: Vector3<f64>,
    /// False when an input lies outside the range seen in training.
    pub in_range: bool,
}

impl TipModel {
    /// Model predicting the zero offset everywhere.
    pub fn zero() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sizes = vec![TIP_INPUTS];
        sizes.extend_from_slice(&TIP_HIDDEN);
        sizes.push(3);
        let mut net = Mlp::new(&sizes, Activation::Tanh, Activation::Identity, &mut rng).expect("valid sizes");
        let zeros = vec![0.0; net.num_params()];
        net.set_params(&zeros).expect("matching length");
        Self {
            version: TIP_MODEL_VERSION,
            net,
            input_mean: vec![0.0; TIP_INPUTS],
            input_std: vec![1.0; TIP_INPUTS],
            input_min: vec![f64::MIN; TIP_INPUTS],
            input_max: vec![f64::MAX; TIP_INPUTS],
            output_mean: vec![0.0; 3],
            output_std: vec![1.0; 3],
            meta: None,
        }
    }

    fn normalize(&self, x: &[f64; TIP_INPUTS]) -> Vec<f64> {
        x.iter().zip(&self.input_mean).zip(&self.input_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// Predicted tip offset from the grasp point, metres.
    pub fn predict_offset(&self, l_tail: f64, theta: f64, p_tac: &Pose) -> Result<Vector3<f64>> {
        let y = self.net.forward(&self.normalize(&tip_features(l_tail, theta, p_tac)))?;
        Ok(Vector3::from_iterator((0..3).map(|k| y[k] * self.output_std[k] + self.output_mean[k])))
    }

    pub fn in_range(&self, l_tail: f64, theta: f64, p_tac: &Pose) -> bool {
        tip_features(l_tail, theta, p_tac)
            .iter()
            .zip(self.input_min.iter().zip(&self.input_max))
            .all(|(v, (lo, hi))| (lo..=hi).contains(&v))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = File::create(path)?;
        serde_json::to_writer(f, self).map_err(|e| Error::Io(e.into()))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        let m: Self = serde_json::from_reader(f).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.version != TIP_MODEL_VERSION {
            return Err(Error::Config(format!("tip model version {} (expected {TIP_MODEL_VERSION})", m.version)));
        }
        Ok(m)
    }
}

/// Tip position from the model: predicted offset plus the grasp position.
pub fn estimate_tip(model: &TipModel, l_tail: f64, theta: f64, p_tac: &Pose) -> Result<TipEstimate> {
    let offset = model.predict_offset(l_tail, theta, p_tac)?;
    Ok(TipEstimate { position: p_tac.position + offset, in_range: model.in_range(l_tail, theta, p_tac) })
}

fn mean_std(rows: &[Vec<f64>], dim: usize, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let std = (0..dim)
        .map(|k| (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt().max(floor))
        .collect();
    (mean, std)
}

/// Mean Euclidean error of `model` over `samples`, metres.
pub fn mean_distance_error(model: &TipModel, samples: &[TipSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("no samples to evaluate"));
    }
    let mut total = 0.0;
    for s in samples {
        total += (model.predict_offset(s.l_tail, s.theta, &s.p_tac)? - s.offset_true).norm();
    }
    Ok(total / samples.len() as f64)
}

/// Fits the tip model on the leading `train_fraction` of `dataset` by
/// minibatch Adam on squared normalized offset error and reports the mean
/// distance error on the rest.
pub fn train_tip_model(dataset: &[TipSample], config: &TipTrainConfig) -> Result<(TipModel, f64)> {
    if dataset.len() < 100 {
        return Err(invalid(format!("tip dataset of {} samples; at least 100 needed", dataset.len())));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) || config.batch == 0 || !(config.lr > 0.0) {
        return Err(invalid("train fraction must lie in (0, 1), batch and rate must be positive"));
    }
    let n_train = ((dataset.len() as f64 * config.train_fraction).round() as usize).clamp(1, dataset.len() - 1);
    let (train, test) = dataset.split_at(n_train);

    let inputs: Vec<Vec<f64>> = train.iter().map(|s| tip_features(s.l_tail, s.theta, &s.p_tac).to_vec()).collect();
    let targets: Vec<Vec<f64>> = train.iter().map(|s| s.offset_true.iter().copied().collect()).collect();
    let (input_mean, input_std) = mean_std(&inputs, TIP_INPUTS, 1e-9);
    let (output_mean, output_std) = mean_std(&targets, 3, 1e-4);
    let input_min = (0..TIP_INPUTS).map(|k| inputs.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min)).collect();
    let input_max = (0..TIP_INPUTS).map(|k| inputs.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sizes = vec![TIP_INPUTS];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(3);
    let net = Mlp::new(&sizes, Activation::Tanh, Activation::Identity, &mut rng)?;
    let mut model = TipModel {
        version: TIP_MODEL_VERSION,
        net,
        input_mean,
        input_std,
        input_min,
        input_max,
        output_mean,
        output_std,
        meta: None,
    };
    let x: Vec<Vec<f64>> = inputs
        .iter()
        .map(|r| r.iter().zip(&model.input_mean).zip(&model.input_std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let t: Vec<Vec<f64>> = targets
        .iter()
        .map(|r| r.iter().zip(&model.output_mean).zip(&model.output_std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let mut opt = Adam::new(model.net.num_params(), config.lr);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut grad = vec![0.0; model.net.num_params()];
    let mut last_loss = f64::NAN;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let tr = model.net.forward_trace(&x[i])?;
                let err: Vec<f64> = tr.output().iter().zip(&t[i]).map(|(y, z)| (y - z) * scale).collect();
                epoch_loss += tr.output().iter().zip(&t[i]).map(|(y, z)| (y - z).powi(2)).sum::<f64>();
                model.net.backward(&tr, &err, &mut grad)?;
            }
            opt.step(&mut model.net, &grad);
        }
        last_loss = epoch_loss / n_train as f64;
        if !last_loss.is_finite() || !model.net.is_finite() {
            return Err(Error::TrainingFailure(format!(
                "tip model loss became {last_loss} at epoch {epoch} (lr {}, batch {})",
                config.lr, config.batch
            )));
        }
    }
    model.meta = Some(TrainingMeta {
        epochs: config.epochs,
        lr: config.lr,
        train_size: n_train,
        test_size: test.len(),
        seed: config.seed,
        final_loss: last_loss,
    });
    let err = mean_distance_error(&model, test)?;
    Ok((model, err))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroopEstimate {
    pub droop: f64,
    /// False outside the small-deflection regime, droop ≥ 0.2·length.
    pub applicable: bool,
}

/// Tip deflection of a horizontal cantilever under its own weight,
/// `qL⁴/(8EI)` with `q = ρAg`.
pub fn cantilever_droop_oracle(length: f64, material: &MaterialSpec) -> DroopEstimate {
    let q = material.weight_per_length(GRAVITY);
    let droop = q * length.powi(4) / (8.0 * material.bending_stiffness());
    DroopEstimate { droop, applicable: droop < 0.2 * length }
}

/// Flat CSV row of a [`TipSample`].
#[derive(Debug, Serialize, Deserialize)]
struct TipRow {
    l_tail: f64,
    theta: f64,
    px: f64,
    py: f64,
    pz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    ox: f64,
    oy: f64,
    oz: f64,
    dx: f64,
    dy: f64,
    dz: f64,
}

/// Header of the tip dataset CSV.
pub const TIP_CSV_HEADER: &str = "l_tail,theta,px,py,pz,qw,qx,qy,qz,ox,oy,oz,dx,dy,dz";

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("tip dataset csv: {other:?}")),
    }
}

/// Writes one row per sample: tail length (m), angle (deg), grasp position
/// (m) and quaternion, true offset (m), unloaded tail direction.
pub fn write_tip_csv(path: &Path, samples: &[TipSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for s in samples {
        let (p, q) = (s.p_tac.position, s.p_tac.orientation.quaternion());
        w.serialize(TipRow {
            l_tail: s.l_tail,
            theta: s.theta,
            px: p.x,
            py: p.y,
            pz: p.z,
            qw: q.w,
            qx: q.i,
            qy: q.j,
            qz: q.k,
            ox: s.offset_true.x,
            oy: s.offset_true.y,
            oz: s.offset_true.z,
            dx: s.free_direction.x,
            dy: s.free_direction.y,
            dz: s.free_direction.z,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tip_csv(path: &Path) -> Result<Vec<TipSample>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize::<TipRow>()
        .map(|row| {
            let row = row.map_err(csv_error)?;
            let q = nalgebra::Quaternion::new(row.qw, row.qx, row.qy, row.qz);
            Ok(TipSample {
                l_tail: row.l_tail,
                theta: row.theta,
                p_tac: Pose::new(Vector3::new(row.px, row.py, row.pz), UnitQuaternion::new_unchecked(q)),
                offset_true: Vector3::new(row.ox, row.oy, row.oz),
                free_direction: Vector3::new(row.dx, row.dy, row.dz),
            })
        })
        .collect()
}
