//! World state for one episode: spool and brake, gripper, thread, needle
//! plate and the gel patch behind it.
//!
//! Frames: world z points up and the robot base sits at the origin. Every
//! planar frame (gel, plate, estimate) uses local x = u, local y = v and
//! local z = outward normal toward the robot. The gripper's local z is the
//! grip axis, pointing from the grip toward the tail end; its finger sensors
//! image the local x–z plane.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dlo_sim::{
    new_chain, new_clamped_tail, settle, CollisionPlane, MaterialSpec, ParticleChain, RectHole, SettleOutcome,
    StepParams, DEFAULT_DAMPING, DEFAULT_SPACING,
};
use crate::error::{invalid, Error, Result};

/// Side of the square gel patch behind the needle plate.
pub const GEL_SIZE: f64 = 0.015;
/// Solid needle material left on each side of the slot.
pub const RIM_WIDTH: f64 = 0.8e-3;
/// Length of the needle shank carrying the slot.
pub const SHANK_LENGTH: f64 = 0.04;
/// Needle plate thickness.
pub const PLATE_THICKNESS: f64 = 1e-3;
/// Beginning point of every tracing run, below the spool center.
pub const BEGINNING_DROP: f64 = 0.02;
/// Stand-off of the planned tip from the gel surface.
pub const APPROACH_DISTANCE: f64 = 0.01;
/// Half side of the reachable workspace cube around the base.
pub const WORKSPACE_HALF: f64 = 0.5;
/// Largest supported calibration noise bound.
pub const MAX_NOISE_BOUND: f64 = 0.03;
/// Mount angles of the needle stand.
pub const MOUNT_ANGLES: [f64; 3] = [45.0, 60.0, 90.0];

const SLOT_OFFSET_RANGE: f64 = 1.5e-3;
const SLOT_ROLL_RANGE_DEG: f64 = 10.0;
const BASE_REGION: f64 = 0.2;
pub(crate) const TAIL_SETTLE_SPEED: f64 = 1e-6;
pub(crate) const TAIL_SETTLE_STEPS: usize = 5_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    /// Pose whose local x, y, z axes are the given world directions.
    pub fn from_axes(position: Vector3<f64>, x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
        Self::new(position, UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    /// `self ∘ other`: `other` expressed in this pose's frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn inverse(&self) -> Pose {
        Pose::from_isometry(&self.to_isometry().inverse())
    }

    pub fn transform_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * local + self.position
    }

    pub fn x_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::x()
    }

    pub fn y_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::y()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite()) && self.orientation.coords.iter().all(|c| c.is_finite())
    }

    pub fn quaternion_norm_ok(&self) -> bool {
        (self.orientation.coords.norm() - 1.0).abs() <= 1e-9
    }
}

/// Needle eyelet: `slot_width` is the narrow clearance, `slot_height` the
/// long one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub slot_width: f64,
    pub slot_height: f64,
    pub plate_thickness: f64,
    /// Degrees between the plate and the horizontal.
    pub mount_angle: f64,
}

impl NeedleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.slot_width > 0.0 && self.slot_height > 0.0 && self.plate_thickness > 0.0) {
            return Err(invalid("needle dimensions must be positive"));
        }
        if !(45.0..=90.0).contains(&self.mount_angle) {
            return Err(invalid(format!("mount angle {} outside [45, 90]", self.mount_angle)));
        }
        Ok(())
    }

    /// Width of the needle shank around the slot.
    pub fn shank_width(&self) -> f64 {
        self.slot_width + 2.0 * RIM_WIDTH
    }
}

/// Needle catalog, indices 1 to 3.
pub fn needle_spec(index: usize, mount_angle: f64) -> Result<NeedleSpec> {
    let (w, h) = match index {
        1 => (0.6e-3, 7.5e-3),
        2 => (1.6e-3, 15e-3),
        3 => (2.4e-3, 9e-3),
        _ => return Err(Error::Config(format!("needle index {index} outside 1..=3"))),
    };
    let spec = NeedleSpec { slot_width: w, slot_height: h, plate_thickness: PLATE_THICKNESS, mount_angle };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

/// Thread catalog, indices 1 to 4: metal, nylon, glass fiber, nylon.
pub fn thread_material(index: usize) -> Result<MaterialSpec> {
    let (e, rho, t) = match index {
        1 => (50e9, 7850.0, 0.2e-3),
        2 => (8.3e9, 1150.0, 0.5e-3),
        3 => (90e9, 2550.0, 1e-3),
        4 => (8.3e9, 1150.0, 2e-3),
        _ => return Err(Error::Config(format!("thread index {index} outside 1..=4"))),
    };
    MaterialSpec::new(e, rho, t)
}

/// Threads too thick for a needle's clearance.
pub fn is_excluded(needle: usize, thread: usize) -> bool {
    matches!((needle, thread), (1, 3) | (1, 4) | (2, 4))
}

/// Where a point on the gel lies relative to the needle imprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    OffGel,
    /// Solid needle material pressed on the gel.
    Rim,
    /// Inside the eyelet clearance.
    Slot,
    /// Gel not covered by the needle.
    Gel,
}

/// Needle imprint geometry in the gel frame (metres).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeletLayout {
    pub slot_center: (f64, f64),
    /// Radians from the gel v axis to the slot's long axis.
    pub roll: f64,
    pub slot_width: f64,
    pub slot_height: f64,
    pub rim_width: f64,
    pub gel_half: f64,
}

impl EyeletLayout {
    /// Coordinates across and along the slot, relative to its center.
    pub fn slot_coords(&self, u: f64, v: f64) -> (f64, f64) {
        let (du, dv) = (u - self.slot_center.0, v - self.slot_center.1);
        let (s, c) = self.roll.sin_cos();
        (c * du + s * dv, -s * du + c * dv)
    }

    pub fn region(&self, u: f64, v: f64) -> Region {
        if u.abs() > self.gel_half || v.abs() > self.gel_half {
            return Region::OffGel;
        }
        let (a, b) = self.slot_coords(u, v);
        if a.abs() <= 0.5 * self.slot_width && b.abs() <= 0.5 * self.slot_height {
            Region::Slot
        } else if a.abs() <= 0.5 * self.slot_width + self.rim_width {
            Region::Rim
        } else {
            Region::Gel
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub thread: usize,
    pub needle: usize,
    pub angle: f64,
    pub seed: u64,
    pub noise_bound: f64,
    pub thread_length: f64,
    pub spacing: f64,
    /// Length of the finger-sensor footprint along the thread.
    pub footprint: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            thread: 2,
            needle: 2,
            angle: 60.0,
            seed: 0,
            noise_bound: MAX_NOISE_BOUND,
            thread_length: 0.14,
            spacing: DEFAULT_SPACING,
            footprint: 0.015,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldState {
    /// The whole thread while the grip is open; the lead from the spool to
    /// the grip point once it closes.
    pub thread: ParticleChain,
    /// Clamped free end below a closed grip.
    pub tail: Option<ParticleChain>,
    pub gripper_pose: Pose,
    pub grip_closed: bool,
    pub spool_pose: Pose,
    pub brake_engaged: bool,
    pub needle: NeedleSpec,
    pub needle_pose: Pose,
    pub needle_plate: CollisionPlane,
    pub eyelet_gel: CollisionPlane,
    /// Gel surface frame at the patch center; also the eyelet sensor frame.
    pub gel_pose: Pose,
    /// Eyelet center projected onto the gel surface, gel orientation.
    pub eyelet_pose: Pose,
    pub marker_pose: Pose,
    /// Fixed transform from the marker to the eyelet center.
    pub marker_to_gel: Isometry3<f64>,
    pub rng_seed: u64,
    pub footprint: f64,
    /// Glide distance since the beginning point.
    pub traversed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeletEstimate {
    pub pose: Pose,
    pub injected_error: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveOutcome {
    pub clipped: bool,
    pub added_particles: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlideOutcome {
    pub traversed: f64,
    pub clipped: bool,
}

/// Builds a world for `config`, randomising the base support placement and
/// the slot placement inside the gel from `config.seed`.
pub fn new_world(config: &WorldConfig) -> Result<WorldState> {
    let material = thread_material(config.thread)?;
    let needle = needle_spec(config.needle, config.angle)?;
    if !(0.0..=MAX_NOISE_BOUND).contains(&config.noise_bound) {
        return Err(Error::Config(format!("noise bound {} outside [0, 0.03]", config.noise_bound)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let spool = Vector3::new(0.3, -0.1, 0.5);
    let spool_pose = Pose::new(spool, UnitQuaternion::identity());
    let begin = beginning_point(&spool_pose);
    let mut thread = new_chain(config.thread_length, material, config.spacing, DEFAULT_DAMPING)?;
    for p in &mut thread.positions {
        *p += begin;
    }
    thread.pin(0);
    settle(&mut thread, &[], &StepParams::default(), 1e-6, 2_000)?;

    let gripper_pose = Pose::from_axes(
        begin - Vector3::z() * (0.5 * config.footprint),
        Vector3::x(),
        -Vector3::y(),
        -Vector3::z(),
    );

    let base = Vector3::new(
        0.45 + BASE_REGION * (rng.gen::<f64>() - 0.5),
        0.15 + BASE_REGION * (rng.gen::<f64>() - 0.5),
        0.05,
    );
    let a = config.angle.to_radians();
    let normal = Vector3::new(-a.sin(), 0.0, a.cos());
    let gel_u = -Vector3::y();
    let gel_v = normal.cross(&gel_u);
    let gel_center = base + Vector3::z() * 0.12;
    let gel_pose = Pose::from_axes(gel_center, gel_u, gel_v, normal);
    let eyelet_gel = CollisionPlane::new(gel_center, normal, gel_u, GEL_SIZE, GEL_SIZE)?;

    let ou = SLOT_OFFSET_RANGE * (2.0 * rng.gen::<f64>() - 1.0);
    let ov = SLOT_OFFSET_RANGE * (2.0 * rng.gen::<f64>() - 1.0);
    let roll = SLOT_ROLL_RANGE_DEG.to_radians() * (2.0 * rng.gen::<f64>() - 1.0);
    let (s, c) = roll.sin_cos();
    // across-slot axis is the gel u axis rolled toward v
    let across = gel_u * c + gel_v * s;
    let along = normal.cross(&across);
    let eyelet_center = gel_center + gel_u * ou + gel_v * ov;
    let slot_center = eyelet_center + normal * needle.plate_thickness;
    let needle_pose = Pose::from_axes(slot_center, across, along, normal);
    let needle_plate = CollisionPlane::new(slot_center, normal, across, needle.shank_width(), SHANK_LENGTH)?
        .with_hole(RectHole { center: (0.0, 0.0), width: needle.slot_width, height: needle.slot_height })?;
    let eyelet_pose = Pose::new(eyelet_center, gel_pose.orientation);

    let marker_pose = Pose::from_axes(gel_center - gel_v * 0.08, gel_u, gel_v, normal);
    let marker_to_gel = marker_pose.to_isometry().inverse() * eyelet_pose.to_isometry();

    Ok(WorldState {
        thread,
        tail: None,
        gripper_pose,
        grip_closed: false,
        spool_pose,
        brake_engaged: true,
        needle,
        needle_pose,
        needle_plate,
        eyelet_gel,
        gel_pose,
        eyelet_pose,
        marker_pose,
        marker_to_gel,
        rng_seed: config.seed,
        footprint: config.footprint,
        traversed: 0.0,
    })
}

pub fn beginning_point(spool: &Pose) -> Vector3<f64> {
    spool.position - Vector3::z() * BEGINNING_DROP
}

/// Gripper orientation whose grip axis is `axis` and whose finger-plane x
/// axis is horizontal, `axis × z`.
pub fn grip_orientation(axis: &Vector3<f64>) -> Result<UnitQuaternion<f64>> {
    let z = axis.try_normalize(1e-12).ok_or_else(|| invalid("grip axis must be non-zero"))?;
    let x = z
        .cross(&Vector3::z())
        .try_normalize(1e-6)
        .ok_or_else(|| invalid("grip axis too close to vertical for a horizontal finger plane"))?;
    Ok(Pose::from_axes(Vector3::zeros(), x, z.cross(&x), z).orientation)
}

impl WorldState {
    pub fn beginning_point(&self) -> Vector3<f64> {
        beginning_point(&self.spool_pose)
    }

    /// Direction of the straightened thread below the beginning point.
    pub fn thread_axis(&self) -> Vector3<f64> {
        (self.thread.positions[1] - self.thread.positions[0]).normalize()
    }

    /// Rest length of lead plus tail.
    pub fn thread_length(&self) -> f64 {
        self.thread.rest_length() + self.tail.as_ref().map_or(0.0, |t| t.rest_length() - t.rest_spacing)
    }

    pub fn material(&self) -> MaterialSpec {
        self.thread.material
    }

    /// Free length below a closed grip, zero without a tail.
    pub fn free_tail_length(&self) -> f64 {
        self.tail.as_ref().map_or(0.0, |t| t.rest_length() - t.rest_spacing)
    }

    /// Thread end point: the tail tip under a closed grip, else the chain end.
    pub fn tip(&self) -> Vector3<f64> {
        self.tail.as_ref().map_or_else(|| self.thread.tip(), |t| t.tip())
    }

    /// Needle imprint geometry in the gel frame.
    pub fn eyelet_layout(&self) -> EyeletLayout {
        let inv = self.gel_pose.inverse();
        let c = inv.transform_point(&self.needle_pose.position);
        let across = self.gel_pose.orientation.inverse() * self.needle_pose.x_axis();
        EyeletLayout {
            slot_center: (c.x, c.y),
            roll: across.y.atan2(across.x),
            slot_width: self.needle.slot_width,
            slot_height: self.needle.slot_height,
            rim_width: RIM_WIDTH,
            gel_half: 0.5 * GEL_SIZE,
        }
    }

    /// Eyelet center from the marker and its fixed transform.
    pub fn eyelet_from_marker(&self) -> Pose {
        Pose::from_isometry(&(self.marker_pose.to_isometry() * self.marker_to_gel))
    }

    /// Closes the sliding grip at its current place on the straightened
    /// thread.
    ///
    /// The thread is split at the grip center into a straight lead pinned at
    /// both ends and a clamped tail of the exact remaining length. `tilt`
    /// (radians) rotates the gripper about its finger normal relative to the
    /// thread, as when the thread seats slightly askew between the fingers.
    pub fn close_grip(&mut self, tilt: f64) -> Result<()> {
        if self.grip_closed {
            return Err(Error::InvalidState("grip already closed".into()));
        }
        if !tilt.is_finite() {
            return Err(invalid("grip tilt must be finite"));
        }
        let begin = self.beginning_point();
        let axis = self.thread_axis();
        let length = self.thread.rest_length();
        let at = (self.traversed + 0.5 * self.footprint).min(length);
        let grip = begin + axis * at;
        let material = self.thread.material;
        let damping = self.thread.damping;

        let lead_segments = ((at / self.thread.rest_spacing) - 1e-9).ceil().max(1.0) as usize;
        let lead_spacing = at / lead_segments as f64;
        let positions = (0..=lead_segments).map(|i| begin + axis * (i as f64 * lead_spacing)).collect();
        let mut lead = ParticleChain::from_positions(positions, material, lead_spacing, damping)?;
        lead.pin(0);
        lead.pin(lead_segments);

        let free = length - at;
        self.tail = if free > 1e-6 {
            Some(new_clamped_tail(grip, axis, free, material, self.thread.rest_spacing, damping)?)
        } else {
            None
        };
        self.thread = lead;
        let tilt_rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), tilt);
        self.gripper_pose = Pose::new(grip, self.gripper_pose.orientation * tilt_rot);
        self.grip_closed = true;
        Ok(())
    }

    /// Lets the free tail hang under gravity until it is at rest.
    pub fn settle_tail(&mut self) -> Result<SettleOutcome> {
        match self.tail.as_mut() {
            Some(t) => settle(t, &[], &StepParams::default(), TAIL_SETTLE_SPEED, TAIL_SETTLE_STEPS),
            None => Ok(SettleOutcome { converged: true, steps: 0 }),
        }
    }

    /// Applies a world-frame rigid motion to the gripper.
    ///
    /// With a closed grip the grip point and the clamped tail follow rigidly.
    /// A braked spool clips the translation where the lead between spool and
    /// grip would exceed its rest length; with payout allowed the spool adds
    /// lead particles instead. The lead is kept straight.
    pub fn move_gripper(&mut self, delta: &Isometry3<f64>, payout_allowed: bool) -> Result<MoveOutcome> {
        let finite = delta.translation.vector.iter().all(|c| c.is_finite())
            && delta.rotation.coords.iter().all(|c| c.is_finite());
        if !finite {
            return Err(invalid("gripper motion must be finite"));
        }
        let start = self.gripper_pose.position;
        let mut target = delta * self.gripper_pose.to_isometry();
        let mut outcome = MoveOutcome { clipped: false, added_particles: 0 };

        if self.grip_closed {
            let g = self.thread.len() - 1;
            let anchor = self.thread.positions[0];
            let grip_target = target.translation.vector;
            // a lead already stretched past rest length is not pulled further
            let taut = self.thread.rest_length().max((start - anchor).norm());
            let reach = (grip_target - anchor).norm();
            if reach > taut + 1e-12 {
                if self.brake_engaged || !payout_allowed {
                    let t = taut_fraction(&anchor, &start, &grip_target, taut);
                    target.translation.vector = start + (grip_target - start) * t;
                    outcome.clipped = true;
                } else {
                    let extra = ((reach - taut) / self.thread.rest_spacing - 1e-9).ceil() as usize;
                    self.pay_out(extra);
                    outcome.added_particles = extra;
                }
            }
            let grip_new = target.translation.vector;
            let rot = target.rotation * self.gripper_pose.orientation.inverse();
            if let Some(tail) = self.tail.as_mut() {
                for p in &mut tail.positions {
                    *p = grip_new + rot * (*p - start);
                }
                for v in &mut tail.velocities {
                    *v = Vector3::zeros();
                }
            }
            let g = g + outcome.added_particles;
            for i in 1..=g {
                self.thread.positions[i] = anchor + (grip_new - anchor) * (i as f64 / g as f64);
            }
        }
        self.gripper_pose = Pose::from_isometry(&target);
        Ok(outcome)
    }

    /// Moves the gripper to `pose` as one rigid motion.
    pub fn move_gripper_to(&mut self, pose: &Pose, payout_allowed: bool) -> Result<MoveOutcome> {
        let delta = pose.to_isometry() * self.gripper_pose.to_isometry().inverse();
        self.move_gripper(&delta, payout_allowed)
    }

    /// Inserts `count` lead particles right after the spool anchor.
    fn pay_out(&mut self, count: usize) {
        let w = 1.0 / self.thread.particle_mass();
        let anchor = self.thread.positions[0];
        for _ in 0..count {
            self.thread.positions.insert(1, anchor);
            self.thread.velocities.insert(1, Vector3::zeros());
            self.thread.inverse_masses.insert(1, w);
        }
    }

    /// Slides the open grip `step` metres down the straightened thread.
    ///
    /// The footprint spans `[traversed, traversed + footprint]` below the
    /// beginning point; the glide stops once the grip center would pass the
    /// thread end.
    pub fn glide_along_thread(&mut self, step: f64) -> Result<GlideOutcome> {
        if self.grip_closed {
            return Err(Error::InvalidState("gliding needs an open, sliding grip".into()));
        }
        if !self.brake_engaged {
            return Err(Error::InvalidState("gliding needs the spool brake engaged".into()));
        }
        if !(step >= 0.0) || !step.is_finite() {
            return Err(invalid(format!("glide step {step} must be finite and non-negative")));
        }
        let limit = self.thread.rest_length() - 0.5 * self.footprint;
        let mut next = self.traversed + step;
        let clipped = next >= limit;
        if clipped {
            next = limit.max(self.traversed);
        }
        self.set_glide(next);
        Ok(GlideOutcome { traversed: self.traversed, clipped })
    }

    /// Returns the open grip to the beginning point.
    pub fn reset_glide(&mut self) -> Result<()> {
        if self.grip_closed {
            return Err(Error::InvalidState("cannot slide a closed grip".into()));
        }
        self.set_glide(0.0);
        Ok(())
    }

    fn set_glide(&mut self, traversed: f64) {
        self.traversed = traversed;
        let axis = self.thread_axis();
        self.gripper_pose.position = self.beginning_point() + axis * (traversed + 0.5 * self.footprint);
    }

    /// Gel-frame (u, v, height above the surface) of a world point.
    pub fn gel_coords(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.gel_pose.inverse().transform_point(p)
    }
}

/// Largest fraction of the straight motion from `from` to `to` that keeps
/// the point within `radius` of `anchor`.
fn taut_fraction(anchor: &Vector3<f64>, from: &Vector3<f64>, to: &Vector3<f64>, radius: f64) -> f64 {
    let d = to - from;
    let f = from - anchor;
    let a = d.norm_squared();
    if a == 0.0 {
        return 0.0;
    }
    let b = 2.0 * f.dot(&d);
    let c = f.norm_squared() - radius * radius;
    if c >= 0.0 {
        return 0.0;
    }
    ((-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)).clamp(0.0, 1.0)
}

/// Samples the marker-based eyelet estimate with a uniform in-plane error of
/// radius at most `noise_bound`.
pub fn estimate_eyelet_pose<R: Rng + ?Sized>(world: &WorldState, noise_bound: f64, rng: &mut R) -> Result<EyeletEstimate> {
    if !(0.0..=MAX_NOISE_BOUND).contains(&noise_bound) {
        return Err(invalid(format!("noise bound {noise_bound} outside [0, 0.03]")));
    }
    let truth = world.eyelet_from_marker();
    let (du, dv) = uniform_disk(noise_bound, rng);
    let err = truth.x_axis() * du + truth.y_axis() * dv;
    Ok(EyeletEstimate { pose: Pose::new(truth.position + err, truth.orientation), injected_error: err })
}

/// Uniform sample from a disk of radius `r` centered at the origin.
pub fn uniform_disk<R: Rng + ?Sized>(r: f64, rng: &mut R) -> (f64, f64) {
    let rho = r * rng.gen::<f64>().sqrt();
    let phi = std::f64::consts::TAU * rng.gen::<f64>();
    (rho * phi.cos(), rho * phi.sin())
}

/// Orientation that points the grip axis against the gel normal with the
/// finger plane spanned by the gel u axis.
pub fn approach_orientation(eyelet: &Pose) -> UnitQuaternion<f64> {
    let u = eyelet.x_axis();
    let v = eyelet.y_axis();
    let n = eyelet.z_axis();
    Pose::from_axes(Vector3::zeros(), u, -v, -n).orientation
}

/// Tip target of the approach: on the estimated gel normal through the
/// estimated eyelet center, `APPROACH_DISTANCE` off the surface.
pub fn approach_target(eyelet: &EyeletEstimate) -> Vector3<f64> {
    eyelet.pose.position + eyelet.pose.z_axis() * APPROACH_DISTANCE
}

/// Gripper pose in the approach orientation that puts the estimated tip on
/// the approach target.
///
/// `tip_offset` is the estimated world-frame tip position relative to the
/// gripper while it holds the approach orientation.
pub fn plan_approach(tip_offset: &Vector3<f64>, eyelet: &EyeletEstimate) -> Result<Pose> {
    if !eyelet.pose.is_finite() || !tip_offset.iter().all(|c| c.is_finite()) {
        return Err(invalid("approach inputs must be finite"));
    }
    let position = approach_target(eyelet) - tip_offset;
    if position.iter().any(|c| c.abs() > WORKSPACE_HALF) {
        return Err(Error::Planning(format!("approach pose {position:?} outside the workspace")));
    }
    Ok(Pose::new(position, approach_orientation(&eyelet.pose)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> WorldState {
        new_world(&WorldConfig { seed: 7, ..WorldConfig::default() }).unwrap()
    }

    fn grasped(at: f64) -> WorldState {
        let mut w = world();
        w.glide_along_thread(at).unwrap();
        w.close_grip(0.0).unwrap();
        w
    }

    #[test]
    fn catalogs() {
        assert_eq!(needle_spec(2, 60.0).unwrap().slot_height, 15e-3);
        assert!(needle_spec(4, 60.0).is_err());
        assert!(needle_spec(1, 30.0).is_err());
        assert_eq!(thread_material(3).unwrap().young_modulus, 90e9);
        assert!(thread_material(0).is_err());
        assert!(is_excluded(1, 3) && is_excluded(1, 4) && is_excluded(2, 4));
        assert!(!is_excluded(3, 4) && !is_excluded(2, 3));
    }

    #[test]
    fn world_geometry_invariants() {
        let w = world();
        assert_eq!(w.eyelet_gel.extent_u, GEL_SIZE);
        assert_eq!(w.eyelet_gel.extent_v, GEL_SIZE);
        let l = w.eyelet_layout();
        assert!(l.slot_center.0.abs() <= SLOT_OFFSET_RANGE && l.slot_center.1.abs() <= SLOT_OFFSET_RANGE);
        assert!(l.roll.abs() <= SLOT_ROLL_RANGE_DEG.to_radians() + 1e-12);
        assert_eq!(l.region(l.slot_center.0, l.slot_center.1), Region::Slot);
        assert_eq!(l.region(0.5 * GEL_SIZE + 1e-4, 0.0), Region::OffGel);
        for pose in [w.gripper_pose, w.gel_pose, w.needle_pose, w.marker_pose, w.eyelet_pose] {
            assert!(pose.quaternion_norm_ok());
        }
        // plate parallel to the gel, one thickness in front
        let d = w.eyelet_gel.signed_distance(&w.needle_pose.position);
        assert!((d - PLATE_THICKNESS).abs() < 1e-12);
        assert!(w.eyelet_gel.signed_distance(&w.eyelet_pose.position).abs() < 1e-12);
        let e = w.gel_coords(&w.eyelet_pose.position);
        assert!((e.x - l.slot_center.0).abs() < 1e-12 && (e.y - l.slot_center.1).abs() < 1e-12);
    }

    #[test]
    fn layout_matches_plate_collision_geometry() {
        let w = world();
        let l = w.eyelet_layout();
        let n = w.gel_pose.z_axis();
        for i in -10..=10 {
            for j in -10..=10 {
                let (u, v) = (i as f64 * 7e-4, j as f64 * 7e-4);
                let p = w.gel_pose.transform_point(&Vector3::new(u, v, 0.0)) + n * PLATE_THICKNESS;
                let (pu, pv) = w.needle_plate.plane_coords(&p);
                let solid = w.needle_plate.within_extents(pu, pv) && !w.needle_plate.in_hole(pu, pv);
                match l.region(u, v) {
                    Region::Rim => assert!(solid),
                    Region::Slot => assert!(w.needle_plate.in_hole(pu, pv)),
                    Region::Gel => assert!(!w.needle_plate.within_extents(pu, pv)),
                    Region::OffGel => {}
                }
            }
        }
    }

    #[test]
    fn zero_noise_estimate_is_exact() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = estimate_eyelet_pose(&w, 0.0, &mut rng).unwrap();
        assert!((e.pose.position - w.eyelet_pose.position).norm() < 1e-12);
        assert!(e.pose.orientation.angle_to(&w.eyelet_pose.orientation) < 1e-12);
        assert!(e.injected_error.norm() == 0.0);
        assert!(estimate_eyelet_pose(&w, 0.031, &mut rng).is_err());
    }

    #[test]
    fn injected_error_is_in_plane_and_bounded() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = w.gel_pose.z_axis();
        let mut mean = 0.0;
        let mut max: f64 = 0.0;
        for _ in 0..1000 {
            let e = estimate_eyelet_pose(&w, 0.03, &mut rng).unwrap();
            assert!(e.injected_error.dot(&n).abs() < 1e-12);
            max = max.max(e.injected_error.norm());
            mean += e.injected_error.norm() / 1000.0;
        }
        assert!(max <= 0.03);
        assert!((mean - 0.02).abs() < 0.05 * 0.02, "mean {mean}");
    }

    #[test]
    fn axis_aligned_approach() {
        let eyelet = EyeletEstimate { pose: Pose::identity(), injected_error: Vector3::zeros() };
        let offset = Vector3::new(0.001, 0.0, -0.02);
        let g = plan_approach(&offset, &eyelet).unwrap();
        assert!((g.position + offset - Vector3::new(0.0, 0.0, 0.01)).norm() < 1e-12);
        assert!((g.z_axis() + Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn tilted_approach_keeps_standoff() {
        let w = new_world(&WorldConfig { angle: 60.0, seed: 3, ..WorldConfig::default() }).unwrap();
        let eyelet = EyeletEstimate { pose: w.eyelet_pose, injected_error: Vector3::zeros() };
        let offset = approach_orientation(&w.eyelet_pose) * Vector3::new(0.0, 0.0, 0.02);
        let g = plan_approach(&offset, &eyelet).unwrap();
        let tip = g.position + offset;
        let n = w.gel_pose.z_axis();
        assert!(((tip - w.eyelet_pose.position).dot(&n) - 0.01).abs() < 1e-9);
        let p = w.gel_coords(&tip);
        let l = w.eyelet_layout();
        assert!((p.x - l.slot_center.0).abs() < 1e-6 && (p.y - l.slot_center.1).abs() < 1e-6);
    }

    #[test]
    fn approach_orientation_follows_grip_convention() {
        for angle in MOUNT_ANGLES {
            let w = new_world(&WorldConfig { angle, ..WorldConfig::default() }).unwrap();
            let a = approach_orientation(&w.eyelet_pose);
            let b = grip_orientation(&(-w.gel_pose.z_axis())).unwrap();
            assert!(a.angle_to(&b) < 1e-9, "angle {angle}");
        }
        assert!(grip_orientation(&-Vector3::z()).is_err());
    }

    #[test]
    fn unreachable_approach_is_rejected() {
        let far = Pose::new(Vector3::new(2.0, 0.0, 0.0), UnitQuaternion::identity());
        let eyelet = EyeletEstimate { pose: far, injected_error: Vector3::zeros() };
        assert!(matches!(plan_approach(&Vector3::zeros(), &eyelet), Err(Error::Planning(_))));
    }

    #[test]
    fn glide_clips_at_tip() {
        let mut w = world();
        let first = w.glide_along_thread(0.01).unwrap();
        assert!((first.traversed - 0.01).abs() < 1e-15 && !first.clipped);
        let mut last = first.traversed;
        loop {
            let g = w.glide_along_thread(0.01).unwrap();
            assert!(g.traversed >= last);
            last = g.traversed;
            if g.clipped {
                assert!(g.traversed + 0.5 * w.footprint >= 0.14 - 1e-12);
                break;
            }
            assert!(g.traversed + 0.5 * w.footprint < 0.14);
        }
        w.close_grip(0.0).unwrap();
        assert!(w.glide_along_thread(0.01).is_err());
    }

    #[test]
    fn braked_glide_is_required() {
        let mut w = world();
        w.brake_engaged = false;
        assert!(matches!(w.glide_along_thread(0.01), Err(Error::InvalidState(_))));
    }

    #[test]
    fn closing_splits_lead_and_tail() {
        let w = grasped(0.1);
        let at = 0.1 + 0.5 * w.footprint;
        assert!((w.thread.rest_length() - at).abs() < 1e-12);
        assert!((w.free_tail_length() - (0.14 - at)).abs() < 1e-12);
        assert!((w.thread_length() - 0.14).abs() < 1e-12);
        assert!((w.thread.tip() - w.gripper_pose.position).norm() < 1e-12);
        let tail = w.tail.as_ref().unwrap();
        assert!((tail.positions[1] - w.gripper_pose.position).norm() < 1e-12);
        assert!((w.tip() - (w.beginning_point() - Vector3::z() * 0.14)).norm() < 1e-9);
    }

    #[test]
    fn tilt_rotates_gripper_about_finger_normal() {
        let mut w = world();
        w.glide_along_thread(0.1).unwrap();
        let before = w.gripper_pose;
        w.close_grip(0.1).unwrap();
        assert!((w.gripper_pose.y_axis() - before.y_axis()).norm() < 1e-12);
        assert!((w.gripper_pose.z_axis().angle(&before.z_axis()) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn braked_spool_clips_at_taut_length() {
        let mut w = grasped(0.05);
        let taut = w.thread.rest_length();
        let out = w.move_gripper(&Isometry3::translation(0.0, 0.0, 0.0), false).unwrap();
        assert!(!out.clipped);
        let before = w.thread.len();
        let out = w.move_gripper(&Isometry3::translation(0.03, 0.0, -0.05), false).unwrap();
        assert!(out.clipped);
        let reach = (w.gripper_pose.position - w.thread.positions[0]).norm();
        assert!((reach - taut).abs() <= w.thread.rest_spacing);
        assert_eq!(w.thread.len(), before);
    }

    #[test]
    fn slack_motion_is_not_clipped() {
        let mut w = grasped(0.05);
        let start = w.gripper_pose.position;
        let tip = w.tip();
        let out = w.move_gripper(&Isometry3::translation(0.01, 0.0, 0.02), false).unwrap();
        assert!(!out.clipped);
        let shift = Vector3::new(0.01, 0.0, 0.02);
        assert!((w.gripper_pose.position - start - shift).norm() < 1e-15);
        assert!((w.tip() - tip - shift).norm() < 1e-15);
    }

    #[test]
    fn payout_extends_chain() {
        let mut w = grasped(0.05);
        w.brake_engaged = false;
        let before = w.thread.len();
        let s = w.thread.rest_spacing;
        let out = w.move_gripper(&Isometry3::translation(0.0, 0.0, -0.02), true).unwrap();
        assert_eq!(out.added_particles, (0.02 / s).ceil() as usize);
        assert_eq!(w.thread.len(), before + out.added_particles);
        assert!(!out.clipped);
    }

    #[test]
    fn brake_keeps_rest_length() {
        let mut w = grasped(0.05);
        let total = w.thread_length();
        for d in [[0.02, 0.0, -0.1], [0.0, 0.05, 0.0], [-0.1, 0.0, 0.03]] {
            w.move_gripper(&Isometry3::translation(d[0], d[1], d[2]), false).unwrap();
            assert_eq!(w.thread_length(), total);
        }
    }

    #[test]
    fn rotation_carries_tail_rigidly() {
        let mut w = grasped(0.1);
        let target = Pose::new(Vector3::new(0.35, -0.05, 0.4), grip_orientation(&Vector3::x()).unwrap());
        w.move_gripper_to(&target, false).unwrap();
        assert!(w.gripper_pose.orientation.angle_to(&target.orientation) < 1e-12);
        let tip = w.tip() - w.gripper_pose.position;
        assert!((tip.normalize() - Vector3::x()).norm() < 1e-9);
        assert!((tip.norm() - w.free_tail_length()).abs() < 1e-9);
    }

    #[test]
    fn worlds_are_deterministic() {
        let a = new_world(&WorldConfig { seed: 11, ..WorldConfig::default() }).unwrap();
        let b = new_world(&WorldConfig { seed: 11, ..WorldConfig::default() }).unwrap();
        assert_eq!(a.needle_pose, b.needle_pose);
        assert_eq!(a.thread.positions, b.thread.positions);
        let c = new_world(&WorldConfig { seed: 12, ..WorldConfig::default() }).unwrap();
        assert_ne!(a.needle_pose, c.needle_pose);
    }
}
