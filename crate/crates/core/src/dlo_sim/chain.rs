use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::material::MaterialSpec;
use crate::error::{invalid, Result};

/// Multiplier on the beam-equivalent bend compliance s³/(9·E·I).
///
/// Calibrated so that a clamped 20 mm tail of the stiffest thread at the
/// default 7 mm spacing droops to 0.86 of the analytic self-weight
/// cantilever deflection.
pub const BEND_CALIBRATION: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleChain {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    /// 1/kg; zero pins the particle.
    pub inverse_masses: Vec<f64>,
    pub rest_spacing: f64,
    /// m/N.
    pub stretch_compliance: f64,
    /// Compliance of the centroid bending constraint, m/N.
    pub bend_compliance: f64,
    pub damping: f64,
    pub material: MaterialSpec,
    /// Number of solver steps applied so far.
    pub steps: u64,
}

/// Straight vertical chain hanging down from the origin with zero velocity.
///
/// The chain has `ceil(length/spacing) + 1` particles at exactly `spacing`.
pub fn new_chain(
    length: f64,
    material: MaterialSpec,
    spacing: f64,
    damping: f64,
) -> Result<ParticleChain> {
    if !(length > 0.0) || !(spacing > 0.0) {
        return Err(invalid(format!("length {length} and spacing {spacing} must be positive")));
    }
    if length < 2.0 * spacing * (1.0 - 1e-12) {
        return Err(invalid(format!("length {length} shorter than two spacings {spacing}")));
    }
    // tolerate representation error when length is an exact multiple
    let segments = ((length / spacing) - 1e-9).ceil().max(1.0) as usize;
    let positions = (0..=segments)
        .map(|i| Vector3::new(0.0, 0.0, -(i as f64) * spacing))
        .collect();
    ParticleChain::from_positions(positions, material, spacing, damping)
}

/// Minimum number of free segments in a clamped tail.
pub const MIN_TAIL_SEGMENTS: usize = 3;

/// A tail of `length` protruding from a clamp at `grip` along `direction`.
///
/// The clamp pins two particles, a ghost one spacing behind the grip and the
/// grip particle itself, which fixes both position and slope. The free part
/// has `max(3, ceil(length / max_spacing))` equal segments, so the tip is the
/// last particle.
pub fn new_clamped_tail(
    grip: Vector3<f64>,
    direction: Vector3<f64>,
    length: f64,
    material: MaterialSpec,
    max_spacing: f64,
    damping: f64,
) -> Result<ParticleChain> {
    if !(length > 0.0) || !(max_spacing > 0.0) {
        return Err(invalid(format!("tail length {length} and spacing {max_spacing} must be positive")));
    }
    let norm = direction.norm();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(invalid("tail direction must be a non-zero vector"));
    }
    let dir = direction / norm;
    let segments = ((length / max_spacing) - 1e-9).ceil().max(MIN_TAIL_SEGMENTS as f64) as usize;
    let spacing = length / segments as f64;
    let positions = (-1..=segments as i64).map(|i| grip + dir * (i as f64 * spacing)).collect();
    let mut chain = ParticleChain::from_positions(positions, material, spacing, damping)?;
    chain.pin(0);
    chain.pin(1);
    Ok(chain)
}

impl ParticleChain {
    /// Builds a chain through the given points; masses and compliances are
    /// derived from the material and `spacing`.
    pub fn from_positions(
        positions: Vec<Vector3<f64>>,
        material: MaterialSpec,
        spacing: f64,
        damping: f64,
    ) -> Result<Self> {
        if positions.len() < 2 {
            return Err(invalid("a chain needs at least two particles"));
        }
        if !(spacing > 0.0) {
            return Err(invalid("spacing must be positive"));
        }
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(invalid(format!("damping {damping} outside (0, 1]")));
        }
        material.validate()?;
        let mass = material.density * material.area() * spacing;
        let n = positions.len();
        Ok(Self {
            velocities: vec![Vector3::zeros(); n],
            inverse_masses: vec![1.0 / mass; n],
            rest_spacing: spacing,
            stretch_compliance: stretch_compliance(&material, spacing),
            bend_compliance: bend_compliance(&material, spacing),
            damping,
            material,
            positions,
            steps: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn particle_mass(&self) -> f64 {
        self.material.density * self.material.area() * self.rest_spacing
    }

    pub fn pin(&mut self, index: usize) {
        self.inverse_masses[index] = 0.0;
        self.velocities[index] = Vector3::zeros();
    }

    pub fn is_pinned(&self, index: usize) -> bool {
        self.inverse_masses[index] == 0.0
    }

    /// Total rest length along the chain.
    pub fn rest_length(&self) -> f64 {
        (self.len() - 1) as f64 * self.rest_spacing
    }

    pub fn tip(&self) -> Vector3<f64> {
        *self.positions.last().expect("chain is never empty")
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities
            .iter()
            .zip(&self.inverse_masses)
            .filter(|(_, &w)| w > 0.0)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max)
    }

    /// Largest |C|/rest over stretch constraints whose endpoints are both free.
    pub fn max_free_stretch_residual(&self) -> f64 {
        (0..self.len() - 1)
            .filter(|&i| !self.is_pinned(i) && !self.is_pinned(i + 1))
            .map(|i| {
                ((self.positions[i] - self.positions[i + 1]).norm() - self.rest_spacing).abs()
                    / self.rest_spacing
            })
            .fold(0.0, f64::max)
    }

    /// Replaces the material, recomputing masses of free particles and both
    /// compliances.
    pub fn set_material(&mut self, material: MaterialSpec) {
        let w = 1.0 / (material.density * material.area() * self.rest_spacing);
        for inv in &mut self.inverse_masses {
            if *inv > 0.0 {
                *inv = w;
            }
        }
        self.stretch_compliance = stretch_compliance(&material, self.rest_spacing);
        self.bend_compliance = bend_compliance(&material, self.rest_spacing);
        self.material = material;
    }
}

fn stretch_compliance(material: &MaterialSpec, spacing: f64) -> f64 {
    spacing / (material.young_modulus * material.area())
}

fn bend_compliance(material: &MaterialSpec, spacing: f64) -> f64 {
    BEND_CALIBRATION * spacing.powi(3) / (9.0 * material.bending_stiffness())
}
