use nalgebra::Vector3;

/// Offset applied to a coincident particle pair before evaluating the
/// constraint gradient.
const COINCIDENT_NUDGE: f64 = 1e-9;

/// Position corrections and multiplier increment from one constraint
/// projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceCorrection {
    pub dxi: Vector3<f64>,
    pub dxj: Vector3<f64>,
    pub dlambda: f64,
}

/// One XPBD projection of `C = |xi - xj| - rest`.
///
/// `compliance` is the raw compliance α; the time-step scaled
/// α̃ = α/dt² enters the multiplier update
/// `Δλ = (-C - α̃·λ) / (wi + wj + α̃)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_distance_constraint(
    xi: &Vector3<f64>,
    xj: &Vector3<f64>,
    wi: f64,
    wj: f64,
    rest: f64,
    compliance: f64,
    lambda: f64,
    dt: f64,
) -> DistanceCorrection {
    let mut d = xi - xj;
    let mut len = d.norm();
    if len == 0.0 {
        d = Vector3::new(COINCIDENT_NUDGE, 0.0, 0.0);
        len = COINCIDENT_NUDGE;
    }
    let n = d / len;
    let c = len - rest;
    let alpha = compliance / (dt * dt);
    let denom = wi + wj + alpha;
    if denom <= 0.0 {
        return DistanceCorrection { dxi: Vector3::zeros(), dxj: Vector3::zeros(), dlambda: 0.0 };
    }
    let dlambda = (-c - alpha * lambda) / denom;
    DistanceCorrection { dxi: n * (wi * dlambda), dxj: n * (-wj * dlambda), dlambda }
}

/// One XPBD projection of the centroid bending constraint on a triple.
///
/// `C = |x1 - (x0 + x1 + x2)/3|` with a straight rest shape. Returns the
/// corrections for the three particles and the multiplier increment; an
/// exactly straight triple is already satisfied.
pub fn solve_bend_constraint(
    x: [&Vector3<f64>; 3],
    w: [f64; 3],
    compliance: f64,
    lambda: f64,
    dt: f64,
) -> Option<([Vector3<f64>; 3], f64)> {
    let centroid = (x[0] + x[1] + x[2]) / 3.0;
    let d = x[1] - centroid;
    let len = d.norm();
    if len < 1e-15 {
        return None;
    }
    let n = d / len;
    let alpha = compliance / (dt * dt);
    let denom = (w[0] + w[2]) / 9.0 + 4.0 * w[1] / 9.0 + alpha;
    if denom <= 0.0 {
        return None;
    }
    let dlambda = (-len - alpha * lambda) / denom;
    let g0 = -n / 3.0;
    let g1 = n * (2.0 / 3.0);
    Some(([g0 * (w[0] * dlambda), g1 * (w[1] * dlambda), g0 * (w[2] * dlambda)], dlambda))
}
