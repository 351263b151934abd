use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Elastic and geometric description of a thread with circular cross-section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    /// Young's modulus, Pa.
    pub young_modulus: f64,
    /// Density, kg/m³.
    pub density: f64,
    /// Cross-section diameter, m.
    pub thickness: f64,
}

impl MaterialSpec {
    pub const MIN_THICKNESS: f64 = 1e-4;
    pub const MAX_THICKNESS: f64 = 5e-3;

    pub fn new(young_modulus: f64, density: f64, thickness: f64) -> Result<Self> {
        let m = Self { young_modulus, density, thickness };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0 && self.density > 0.0 && self.thickness > 0.0) {
            return Err(invalid(format!("material fields must be positive: {self:?}")));
        }
        if !(Self::MIN_THICKNESS..=Self::MAX_THICKNESS).contains(&self.thickness) {
            return Err(invalid(format!(
                "thickness {} m outside supported range [{}, {}]",
                self.thickness,
                Self::MIN_THICKNESS,
                Self::MAX_THICKNESS
            )));
        }
        Ok(())
    }

    /// Cross-section area, m².
    pub fn area(&self) -> f64 {
        let r = 0.5 * self.thickness;
        PI * r * r
    }

    /// Second moment of area, m⁴.
    pub fn second_moment(&self) -> f64 {
        PI * self.thickness.powi(4) / 64.0
    }

    /// Bending stiffness E·I, N·m².
    pub fn bending_stiffness(&self) -> f64 {
        self.young_modulus * self.second_moment()
    }

    /// Weight per unit length ρ·A·g, N/m.
    pub fn weight_per_length(&self, gravity: f64) -> f64 {
        self.density * self.area() * gravity
    }

    /// Same material with Young's modulus multiplied by `factor`.
    pub fn scaled_stiffness(&self, factor: f64) -> Self {
        Self { young_modulus: self.young_modulus * factor, ..*self }
    }
}

/// Euler critical load of a clamped-free column, π²EI/(4L²).
///
/// A poke leaves a gel imprint only if the indentation force stays below
/// this load for the free tail.
pub fn buckling_load(material: &MaterialSpec, free_length: f64) -> f64 {
    debug_assert!(free_length > 0.0);
    PI * PI * material.bending_stiffness() / (4.0 * free_length * free_length)
}
