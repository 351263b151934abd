use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned rectangular cutout in plane coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectHole {
    /// (u, v) of the hole centre, m.
    pub center: (f64, f64),
    /// Extent along u, m.
    pub width: f64,
    /// Extent along v, m.
    pub height: f64,
}

impl RectHole {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        (u - self.center.0).abs() <= 0.5 * self.width
            && (v - self.center.1).abs() <= 0.5 * self.height
    }
}

/// Finite one-sided plane; particles are kept on the side the normal points to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionPlane {
    pub origin: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// In-plane u axis, orthogonal to `normal`. v = normal × u.
    pub u_axis: Vector3<f64>,
    pub extent_u: f64,
    pub extent_v: f64,
    pub holes: Vec<RectHole>,
}

impl CollisionPlane {
    pub fn new(
        origin: Vector3<f64>,
        normal: Vector3<f64>,
        u_hint: Vector3<f64>,
        extent_u: f64,
        extent_v: f64,
    ) -> Result<Self> {
        let n = Unit::try_new(normal, 1e-12).ok_or_else(|| invalid("degenerate plane normal"))?;
        let u = u_hint - n.into_inner() * u_hint.dot(&n);
        let u = Unit::try_new(u, 1e-12).ok_or_else(|| invalid("u hint parallel to normal"))?;
        if !(extent_u > 0.0 && extent_v > 0.0) {
            return Err(invalid("plane extents must be positive"));
        }
        Ok(Self {
            origin,
            normal: n.into_inner(),
            u_axis: u.into_inner(),
            extent_u,
            extent_v,
            holes: Vec::new(),
        })
    }

    pub fn with_hole(mut self, hole: RectHole) -> Result<Self> {
        let (cu, cv) = hole.center;
        let inside = (cu.abs() + 0.5 * hole.width) <= 0.5 * self.extent_u + 1e-12
            && (cv.abs() + 0.5 * hole.height) <= 0.5 * self.extent_v + 1e-12;
        if !inside || hole.width <= 0.0 || hole.height <= 0.0 {
            return Err(invalid(format!("hole {hole:?} does not fit the plane extents")));
        }
        self.holes.push(hole);
        Ok(self)
    }

    pub fn v_axis(&self) -> Vector3<f64> {
        self.normal.cross(&self.u_axis)
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.origin).dot(&self.normal)
    }

    /// In-plane coordinates (u, v) of the projection of `p`.
    pub fn plane_coords(&self, p: &Vector3<f64>) -> (f64, f64) {
        let d = p - self.origin;
        (d.dot(&self.u_axis), d.dot(&self.v_axis()))
    }

    pub fn point_at(&self, u: f64, v: f64) -> Vector3<f64> {
        self.origin + self.u_axis * u + self.v_axis() * v
    }

    pub fn within_extents(&self, u: f64, v: f64) -> bool {
        u.abs() <= 0.5 * self.extent_u && v.abs() <= 0.5 * self.extent_v
    }

    pub fn in_hole(&self, u: f64, v: f64) -> bool {
        self.holes.iter().any(|h| h.contains(u, v))
    }

    /// True when the projection of `p` lies on solid material.
    pub fn is_solid_at(&self, p: &Vector3<f64>) -> bool {
        let (u, v) = self.plane_coords(p);
        self.within_extents(u, v) && !self.in_hole(u, v)
    }

    /// Projects `p` back onto the surface when it has penetrated solid
    /// material. Returns whether a projection happened.
    pub fn project(&self, p: &mut Vector3<f64>) -> bool {
        let d = self.signed_distance(p);
        if d < 0.0 && self.is_solid_at(p) {
            *p -= self.normal * d;
            true
        } else {
            false
        }
    }
}
