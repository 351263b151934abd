use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::chain::ParticleChain;
use super::collision::CollisionPlane;
use super::GRAVITY;
use crate::error::{invalid, Error, Result};

/// Tolerance under which a particle counts as starting a step in front of a
/// plane.
const FRONT_SIDE_SLACK: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub dt: f64,
    pub iterations: usize,
    pub gravity: Vector3<f64>,
}

impl Default for StepParams {
    fn default() -> Self {
        Self { dt: 0.005, iterations: 20, gravity: Vector3::new(0.0, 0.0, -GRAVITY) }
    }
}

impl StepParams {
    pub fn zero_gravity() -> Self {
        Self { gravity: Vector3::zeros(), ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.02) {
            return Err(invalid(format!("dt {} outside (0, 0.02]", self.dt)));
        }
        if self.iterations == 0 {
            return Err(invalid("at least one solver iteration is required"));
        }
        Ok(())
    }
}

/// Advances the chain by one XPBD step.
///
/// Each solver iteration is a Newton step on the implicit-Euler system: it
/// linearises every stretch, bend and active contact constraint and solves
/// for all multiplier increments at once,
/// `(J·W·Jᵀ + α̃)·Δλ = -C - α̃·λ + J·r`, where `r = x - x̃ - W·Jᵀ·λ` is the
/// drift of the positions from the inertial prediction. The system is
/// factorised with a banded Cholesky.
///
/// Contact is one-sided: a particle is kept in front of a plane only if it
/// started the step in front of it, so particles that passed through a hole
/// are not pulled back. Contact rows join the solve while they push and a
/// closing projection pass removes any remaining penetration.
pub fn step(chain: &mut ParticleChain, planes: &[CollisionPlane], params: &StepParams) -> Result<()> {
    params.validate()?;
    let n = chain.len();
    let dt = params.dt;
    let prev = chain.positions.clone();

    let front: Vec<Vec<bool>> = planes
        .iter()
        .map(|pl| prev.iter().map(|p| pl.signed_distance(p) >= -FRONT_SIDE_SLACK).collect())
        .collect();

    for i in 0..n {
        if chain.inverse_masses[i] > 0.0 {
            chain.velocities[i] += params.gravity * dt;
            chain.positions[i] += chain.velocities[i] * dt;
        }
    }

    let predicted = chain.positions.clone();
    let mut system = ConstraintSystem::new(chain, planes.len());
    for _ in 0..params.iterations {
        system.update_contacts(chain, planes, &front);
        system.iterate(chain, planes, &predicted, dt);
    }
    let mut contact = system.contact_flags(n);
    project_contacts(chain, planes, &front, &mut contact);

    for i in 0..n {
        if chain.inverse_masses[i] == 0.0 {
            chain.positions[i] = prev[i];
            chain.velocities[i] = Vector3::zeros();
            continue;
        }
        let mut v = (chain.positions[i] - prev[i]) / dt;
        if let Some(k) = contact[i] {
            // keep only the normal component at a contact
            let normal = planes[k].normal;
            v = normal * v.dot(&normal);
        }
        chain.velocities[i] = v * chain.damping;
    }
    chain.steps += 1;

    if chain.positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::NumericFailure {
            step: chain.steps as usize,
            detail: "non-finite particle position".into(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Kind {
    Stretch,
    /// Component of the bend deviation vector along one world axis.
    Bend(usize),
    /// Signed distance of one particle to one plane.
    Contact(usize),
}

#[derive(Clone, Copy)]
struct Row {
    kind: Kind,
    first: usize,
    alpha: f64,
    /// Index into the multiplier store.
    slot: usize,
}

impl Row {
    fn particles(&self) -> std::ops::Range<usize> {
        match self.kind {
            Kind::Stretch => self.first..self.first + 2,
            Kind::Bend(_) => self.first..self.first + 3,
            Kind::Contact(_) => self.first..self.first + 1,
        }
    }
}

/// Constraint rows of one chain with their accumulated multipliers.
///
/// Stretch and bend rows are fixed for the step. Contact rows form an active
/// set that is revised before every iteration.
struct ConstraintSystem {
    base: Vec<Row>,
    /// Multipliers of base rows followed by one slot per (plane, particle).
    lambda: Vec<f64>,
    active: Vec<bool>,
    n: usize,
}

impl ConstraintSystem {
    fn new(chain: &ParticleChain, planes: usize) -> Self {
        let n = chain.len();
        let free = |range: std::ops::Range<usize>| range.clone().any(|i| chain.inverse_masses[i] > 0.0);
        let mut base = Vec::with_capacity(4 * n);
        for i in 0..n - 1 {
            if free(i..i + 2) {
                base.push(Row { kind: Kind::Stretch, first: i, alpha: chain.stretch_compliance, slot: base.len() });
            }
            if i + 2 < n && free(i..i + 3) {
                for axis in 0..3 {
                    base.push(Row { kind: Kind::Bend(axis), first: i, alpha: chain.bend_compliance, slot: base.len() });
                }
            }
        }
        let m = base.len();
        Self { base, lambda: vec![0.0; m + planes * n], active: vec![false; planes * n], n }
    }

    fn contact_slot(&self, plane: usize, particle: usize) -> usize {
        self.base.len() + plane * self.n + particle
    }

    /// Activates penetrating particles and releases contacts that pull.
    fn update_contacts(&mut self, chain: &ParticleChain, planes: &[CollisionPlane], front: &[Vec<bool>]) {
        for (k, pl) in planes.iter().enumerate() {
            for i in 0..self.n {
                let a = k * self.n + i;
                let slot = self.base.len() + a;
                if chain.inverse_masses[i] == 0.0 || !front[k][i] {
                    continue;
                }
                let p = &chain.positions[i];
                if self.active[a] {
                    if self.lambda[slot] < 0.0 || !pl.is_solid_at(p) {
                        self.active[a] = false;
                        self.lambda[slot] = 0.0;
                    }
                } else if pl.signed_distance(p) < 0.0 && pl.is_solid_at(p) {
                    self.active[a] = true;
                }
            }
        }
    }

    fn contact_flags(&self, n: usize) -> Vec<Option<usize>> {
        let mut flags = vec![None; n];
        for (a, &on) in self.active.iter().enumerate() {
            if on {
                flags[a % n] = Some(a / n);
            }
        }
        flags
    }

    /// Base rows interleaved with active contact rows, ordered by particle.
    fn rows(&self) -> Vec<Row> {
        let mut contacts: Vec<Row> = self
            .active
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(a, _)| {
                let (plane, particle) = (a / self.n, a % self.n);
                Row { kind: Kind::Contact(plane), first: particle, alpha: 0.0, slot: self.contact_slot(plane, particle) }
            })
            .collect();
        if contacts.is_empty() {
            return self.base.clone();
        }
        contacts.sort_by_key(|r| r.first);
        let mut rows = Vec::with_capacity(self.base.len() + contacts.len());
        let mut c = contacts.into_iter().peekable();
        for row in &self.base {
            while let Some(next) = c.peek() {
                if next.first > row.first {
                    break;
                }
                rows.push(*next);
                c.next();
            }
            rows.push(*row);
        }
        rows.extend(c);
        rows
    }

    /// Value and per-particle gradients of one row.
    fn evaluate(row: &Row, x: &[Vector3<f64>], planes: &[CollisionPlane]) -> (f64, [Vector3<f64>; 3]) {
        let i = row.first;
        match row.kind {
            Kind::Stretch => {
                let mut d = x[i] - x[i + 1];
                let mut len = d.norm();
                if len == 0.0 {
                    d = Vector3::new(1e-9, 0.0, 0.0);
                    len = 1e-9;
                }
                let n = d / len;
                (len, [n, -n, Vector3::zeros()])
            }
            Kind::Bend(axis) => {
                let d = (x[i + 1] * 2.0 - x[i] - x[i + 2]) / 3.0;
                let mut e = Vector3::zeros();
                e[axis] = 1.0;
                (d[axis], [-e / 3.0, e * (2.0 / 3.0), -e / 3.0])
            }
            Kind::Contact(k) => {
                let pl = &planes[k];
                (pl.signed_distance(&x[i]), [pl.normal, Vector3::zeros(), Vector3::zeros()])
            }
        }
    }

    fn iterate(&mut self, chain: &mut ParticleChain, planes: &[CollisionPlane], predicted: &[Vector3<f64>], dt: f64) {
        let rows = self.rows();
        let m = rows.len();
        if m == 0 {
            return;
        }
        let n = chain.len();
        let w = &chain.inverse_masses;
        let x = &chain.positions;
        let grads: Vec<_> = rows.iter().map(|row| Self::evaluate(row, x, planes)).collect();

        let mut drift: Vec<Vector3<f64>> = (0..n)
            .map(|i| if w[i] > 0.0 { x[i] - predicted[i] } else { Vector3::zeros() })
            .collect();
        for (k, row) in rows.iter().enumerate() {
            for p in row.particles() {
                drift[p] -= grads[k].1[p - row.first] * (w[p] * self.lambda[row.slot]);
            }
        }

        let mut rhs = vec![0.0; m];
        for (k, row) in rows.iter().enumerate() {
            let (value, g) = &grads[k];
            let c = match row.kind {
                Kind::Stretch => value - chain.rest_spacing,
                Kind::Bend(_) | Kind::Contact(_) => *value,
            };
            let alpha = row.alpha / (dt * dt);
            let mut r = -c - alpha * self.lambda[row.slot];
            for p in row.particles() {
                r += g[p - row.first].dot(&drift[p]);
            }
            rhs[k] = r;
        }

        let mut bandwidth = 0;
        for k in 0..m {
            let end = rows[k].particles().end;
            for (l, rl) in rows.iter().enumerate().skip(k + 1) {
                if rl.first >= end {
                    break;
                }
                bandwidth = bandwidth.max(l - k);
            }
        }
        let mut a = BandMatrix::new(m, bandwidth);
        for k in 0..m {
            let rk = rows[k];
            for l in k..(k + bandwidth + 1).min(m) {
                let rl = rows[l];
                let mut sum = 0.0;
                for p in rk.particles() {
                    if rl.particles().contains(&p) && w[p] > 0.0 {
                        sum += w[p] * grads[k].1[p - rk.first].dot(&grads[l].1[p - rl.first]);
                    }
                }
                if k == l {
                    sum += rk.alpha / (dt * dt);
                }
                a.set(k, l, sum);
            }
        }
        if !a.cholesky_solve(&mut rhs) {
            return;
        }
        for p in 0..n {
            chain.positions[p] -= drift[p];
        }
        for (k, row) in rows.iter().enumerate() {
            self.lambda[row.slot] += rhs[k];
            for p in row.particles() {
                if w[p] > 0.0 {
                    chain.positions[p] += grads[k].1[p - row.first] * (w[p] * rhs[k]);
                }
            }
        }
    }
}

/// Symmetric positive definite matrix stored as its upper band.
struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn new(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j >= i && j - i <= self.bw);
        i * (self.bw + 1) + (j - i)
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    /// In-place UᵀU factorisation followed by two triangular solves.
    /// Returns false when the matrix is not positive definite.
    fn cholesky_solve(&mut self, rhs: &mut [f64]) -> bool {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut d = self.get(i, i);
            for k in lo..i {
                let u = self.get(k, i);
                d -= u * u;
            }
            if !(d > 0.0) {
                return false;
            }
            let d = d.sqrt();
            self.set(i, i, d);
            for j in i + 1..(i + bw + 1).min(n) {
                let mut s = self.get(i, j);
                for k in j.saturating_sub(bw).max(lo)..i {
                    s -= self.get(k, i) * self.get(k, j);
                }
                self.set(i, j, s / d);
            }
        }
        // Uᵀ y = rhs
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.get(k, i) * rhs[k];
            }
            rhs[i] = s / self.get(i, i);
        }
        // U x = y
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for j in i + 1..(i + bw + 1).min(n) {
                s -= self.get(i, j) * rhs[j];
            }
            rhs[i] = s / self.get(i, i);
        }
        true
    }
}

/// Pushes particles back to the front of the planes they started in front
/// of and records which plane holds them.
fn project_contacts(
    chain: &mut ParticleChain,
    planes: &[CollisionPlane],
    front: &[Vec<bool>],
    contact: &mut [Option<usize>],
) {
    for (k, (pl, active)) in planes.iter().zip(front).enumerate() {
        for i in 0..chain.len() {
            if chain.inverse_masses[i] > 0.0 && active[i] && pl.project(&mut chain.positions[i]) {
                contact[i] = Some(k);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettleOutcome {
    pub converged: bool,
    pub steps: usize,
}

/// Steps until the fastest free particle is slower than `tol` (m/s).
///
/// Running out of `max_steps` is reported through `converged = false`.
pub fn settle(
    chain: &mut ParticleChain,
    planes: &[CollisionPlane],
    params: &StepParams,
    tol: f64,
    max_steps: usize,
) -> Result<SettleOutcome> {
    if !(tol > 0.0) {
        return Err(invalid("settle tolerance must be positive"));
    }
    for k in 1..=max_steps {
        step(chain, planes, params)?;
        if chain.max_speed() < tol {
            return Ok(SettleOutcome { converged: true, steps: k });
        }
    }
    Ok(SettleOutcome { converged: false, steps: max_steps })
}
