//! Synthetic gel-sensor images.
//!
//! Intensities are normalised indentation depth in `[0, 1]`. Two sensor
//! planes exist: the finger sensor of the gripper, imaging the gripper's
//! local x–z plane with the grip axis running down the rows, and the eyelet
//! sensor behind the needle plate, imaging the gel's u–v plane with u along
//! the columns and v up the image.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dlo_sim::{buckling_load, ParticleChain};
use crate::error::{invalid, Result};
use crate::scene::{EyeletLayout, Pose, Region, WorldState};

/// Indentation depth at which the intensity saturates.
pub const SATURATION_DEPTH: f64 = 2e-3;
/// Bump radius per unit indentation depth.
pub const BUMP_RADIUS_RATIO: f64 = 0.4;
/// Prefactor of the indentation force model.
pub const HERTZ_PREFACTOR: f64 = 0.25;
/// Intensity of a thread line pressed between the fingers.
pub const GRIP_LINE_INTENSITY: f64 = 0.8;
/// Intensity of the needle body pressed on the gel.
pub const RIM_INTENSITY: f64 = 0.3;
/// Intensity of the gel framed by the eyelet clearance.
pub const SLOT_INTENSITY: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub width_px: usize,
    pub height_px: usize,
    /// Field of view along the columns, m.
    pub fov_u: f64,
    /// Field of view along the rows, m.
    pub fov_v: f64,
    pub gel_young_modulus: f64,
    pub noise_sigma: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self { width_px: 400, height_px: 300, fov_u: 0.02, fov_v: 0.015, gel_young_modulus: 0.123e6, noise_sigma: 0.01 }
    }
}

impl SensorSpec {
    /// The real sensor's native resolution.
    pub fn full_resolution() -> Self {
        Self { width_px: 1600, height_px: 1200, ..Self::default() }
    }

    pub fn with_resolution(self, width_px: usize, height_px: usize) -> Self {
        Self { width_px, height_px, ..self }
    }

    pub fn noise_free(self) -> Self {
        Self { noise_sigma: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(invalid("sensor resolution must be positive"));
        }
        if !(self.fov_u > 0.0 && self.fov_v > 0.0 && self.gel_young_modulus > 0.0) {
            return Err(invalid("sensor field of view and gel modulus must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise sigma must be non-negative"));
        }
        let (a, b) = (self.fov_u / self.width_px as f64, self.fov_v / self.height_px as f64);
        if (a - b).abs() > 0.01 * a.max(b) {
            return Err(invalid(format!("pixel pitch differs across axes: {a} vs {b} m")));
        }
        Ok(())
    }

    /// Pixel pitch in metres.
    pub fn m_per_px(&self) -> f64 {
        self.fov_u / self.width_px as f64
    }

    pub fn mm_per_px(&self) -> f64 {
        1e3 * self.m_per_px()
    }

    /// Image diagonal in pixels.
    pub fn diagonal_px(&self) -> f64 {
        (self.width_px as f64).hypot(self.height_px as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TactileImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities.
    pub data: Vec<f64>,
    pub mm_per_px: f64,
    pub frame: Pose,
}

impl TactileImage {
    pub fn blank(width: usize, height: usize, mm_per_px: f64, frame: Pose) -> Self {
        Self { width, height, data: vec![0.0; width * height], mm_per_px, frame }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// 8-bit grey levels, row-major.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Binary portable graymap.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_gray8())?;
        Ok(())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(file))
    }
}

/// Normalised intensity of an indentation `depth` (m).
pub fn indentation_intensity(depth: f64) -> f64 {
    (depth / SATURATION_DEPTH).clamp(0.0, 1.0)
}

/// Axial force needed to indent the gel by `depth` with a thread end of
/// diameter `thickness`: `k·E·depth^1.5·sqrt(thickness/2)`.
pub fn indentation_force(depth: f64, thickness: f64, gel_young_modulus: f64) -> f64 {
    HERTZ_PREFACTOR * gel_young_modulus * depth.max(0.0).powf(1.5) * (0.5 * thickness).sqrt()
}

/// True when the free tail can push `force` into the gel without buckling.
pub fn supports_indentation(world: &WorldState, force: f64) -> bool {
    let free = world.free_tail_length();
    free <= 0.0 || force <= buckling_load(&world.material(), free)
}

/// Metric position of pixel centers in a sensor plane.
#[derive(Clone, Copy, Debug)]
struct PixelGrid {
    pitch: f64,
    half_u: f64,
    half_v: f64,
}

impl PixelGrid {
    fn new(sensor: &SensorSpec) -> Self {
        Self { pitch: sensor.m_per_px(), half_u: 0.5 * sensor.fov_u, half_v: 0.5 * sensor.fov_v }
    }

    fn col_x(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.pitch - self.half_u
    }

    fn row_offset(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.pitch - self.half_v
    }

    /// Continuous column of a metric coordinate.
    fn col_of(&self, x: f64) -> f64 {
        (x + self.half_u) / self.pitch - 0.5
    }

    fn row_of(&self, y: f64) -> f64 {
        (y + self.half_v) / self.pitch - 0.5
    }
}

/// Finger-sensor image of the thread held or slid through the gripper.
pub fn render_grip_image<R: Rng + ?Sized>(world: &WorldState, sensor: &SensorSpec, rng: &mut R) -> Result<TactileImage> {
    let mut chains = vec![&world.thread];
    if let Some(t) = world.tail.as_ref() {
        chains.push(t);
    }
    render_grip_chains(&chains, &world.gripper_pose, sensor, rng)
}

/// Finger-sensor image of the given chains for a gripper at `gripper`.
///
/// Segments whose midpoint lies more than one thickness off the finger plane
/// are not between the fingers and leave no imprint. Lines have flat ends,
/// so the last set row sits at the thread end.
pub fn render_grip_chains<R: Rng + ?Sized>(
    chains: &[&ParticleChain],
    gripper: &Pose,
    sensor: &SensorSpec,
    rng: &mut R,
) -> Result<TactileImage> {
    sensor.validate()?;
    let grid = PixelGrid::new(sensor);
    let mut img = TactileImage::blank(sensor.width_px, sensor.height_px, sensor.mm_per_px(), *gripper);
    let inv = gripper.inverse();
    for chain in chains {
        let hw = 0.5 * chain.material.thickness;
        let local: Vec<_> = chain.positions.iter().map(|p| inv.transform_point(p)).collect();
        for pair in local.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if (0.5 * (a.y + b.y)).abs() > 2.0 * hw {
                continue;
            }
            draw_flat_segment(&mut img, &grid, (a.x, a.z), (b.x, b.z), hw, GRIP_LINE_INTENSITY);
        }
    }
    finish(&mut img, sensor, rng)?;
    Ok(img)
}

/// Sets pixels whose centers lie within `hw` of the segment and between its
/// end normals. Rows follow the second coordinate.
fn draw_flat_segment(img: &mut TactileImage, grid: &PixelGrid, a: (f64, f64), b: (f64, f64), hw: f64, value: f64) {
    let d = (b.0 - a.0, b.1 - a.1);
    let len2 = d.0 * d.0 + d.1 * d.1;
    if len2 == 0.0 {
        return;
    }
    let c0 = (grid.col_of(a.0.min(b.0) - hw).floor().max(0.0)) as usize;
    let c1 = grid.col_of(a.0.max(b.0) + hw).ceil().min(img.width as f64 - 1.0);
    let r0 = (grid.row_of(a.1.min(b.1) - hw).floor().max(0.0)) as usize;
    let r1 = grid.row_of(a.1.max(b.1) + hw).ceil().min(img.height as f64 - 1.0);
    if c1 < 0.0 || r1 < 0.0 {
        return;
    }
    for row in r0..=r1 as usize {
        let y = grid.row_offset(row);
        for col in c0..=c1 as usize {
            let x = grid.col_x(col);
            let (px, py) = (x - a.0, y - a.1);
            let t = (px * d.0 + py * d.1) / len2;
            if !(0.0..=1.0).contains(&t) {
                continue;
            }
            let cross = (px * d.1 - py * d.0).abs() / len2.sqrt();
            if cross <= hw {
                let i = row * img.width + col;
                img.data[i] = img.data[i].max(value);
            }
        }
    }
}

/// Static needle imprint on the eyelet sensor, computed once per scene.
#[derive(Clone, Debug)]
pub struct EyeletImprint {
    sensor: SensorSpec,
    grid: PixelGrid,
    layout: EyeletLayout,
    regions: Vec<Region>,
    base: Vec<f64>,
    frame: Pose,
}

impl EyeletImprint {
    pub fn new(world: &WorldState, sensor: &SensorSpec) -> Result<Self> {
        sensor.validate()?;
        let grid = PixelGrid::new(sensor);
        let layout = world.eyelet_layout();
        let mut regions = Vec::with_capacity(sensor.width_px * sensor.height_px);
        for row in 0..sensor.height_px {
            let v = -grid.row_offset(row);
            for col in 0..sensor.width_px {
                regions.push(layout.region(grid.col_x(col), v));
            }
        }
        let base = regions
            .iter()
            .map(|r| match r {
                Region::Rim => RIM_INTENSITY,
                Region::Slot => SLOT_INTENSITY,
                Region::Gel | Region::OffGel => 0.0,
            })
            .collect();
        Ok(Self { sensor: *sensor, grid, layout, regions, base, frame: world.gel_pose })
    }

    pub fn layout(&self) -> &EyeletLayout {
        &self.layout
    }

    pub fn region_at(&self, row: usize, col: usize) -> Region {
        self.regions[row * self.sensor.width_px + col]
    }

    /// Continuous pixel position (col, row) of gel coordinates (u, v).
    pub fn pixel_of(&self, u: f64, v: f64) -> (f64, f64) {
        (self.grid.col_of(u), self.grid.row_of(-v))
    }

    /// Gel coordinates (u, v) of a pixel center.
    pub fn uv_of(&self, row: usize, col: usize) -> (f64, f64) {
        (self.grid.col_x(col), -self.grid.row_offset(row))
    }

    /// Noise-free image before smoothing: needle imprint plus an optional
    /// bump of indentation `depth` at gel point `(u, v)`.
    fn raw(&self, bump: Option<((f64, f64), f64)>) -> TactileImage {
        let s = &self.sensor;
        let mut img = TactileImage { width: s.width_px, height: s.height_px, data: self.base.clone(), mm_per_px: s.mm_per_px(), frame: self.frame };
        if let Some(((u, v), depth)) = bump {
            let region = self.layout.region(u, v);
            let radius = BUMP_RADIUS_RATIO * depth;
            let value = indentation_intensity(depth);
            let (cc, cr) = self.pixel_of(u, v);
            let rp = radius / self.grid.pitch;
            let c0 = (cc - rp).floor().max(0.0) as usize;
            let r0 = (cr - rp).floor().max(0.0) as usize;
            let c1 = (cc + rp).ceil().min(s.width_px as f64 - 1.0);
            let r1 = (cr + rp).ceil().min(s.height_px as f64 - 1.0);
            if c1 >= 0.0 && r1 >= 0.0 {
                for row in r0..=r1 as usize {
                    for col in c0..=c1 as usize {
                        let (pu, pv) = self.uv_of(row, col);
                        let i = row * s.width_px + col;
                        if (pu - u).hypot(pv - v) <= radius && self.regions[i] == region {
                            img.data[i] = img.data[i].max(value);
                        }
                    }
                }
            }
        }
        img
    }

    /// Eyelet-sensor image for the current tip state.
    ///
    /// A bump appears where the tip indents exposed gel or gel inside the
    /// clearance, provided the free tail carries `poke_force` without
    /// buckling. It is confined to the region the tip is in.
    pub fn render<R: Rng + ?Sized>(&self, world: &WorldState, poke_force: f64, rng: &mut R) -> Result<TactileImage> {
        let bump = tip_contact(world).filter(|_| supports_indentation(world, poke_force));
        let mut img = self.raw(bump);
        finish(&mut img, &self.sensor, rng)?;
        Ok(img)
    }

    /// Noise-free, unsmoothed bump pixels for a contact, as ground truth.
    pub fn bump_pixels(&self, uv: (f64, f64), depth: f64) -> Vec<(usize, usize)> {
        let bare = self.raw(None);
        let with = self.raw(Some((uv, depth)));
        (0..with.data.len())
            .filter(|&i| with.data[i] != bare.data[i])
            .map(|i| (i / with.width, i % with.width))
            .collect()
    }

    /// Pixels inside the eyelet clearance, as ground truth.
    pub fn slot_pixels(&self) -> Vec<(usize, usize)> {
        (0..self.regions.len())
            .filter(|&i| self.regions[i] == Region::Slot)
            .map(|i| (i / self.sensor.width_px, i % self.sensor.width_px))
            .collect()
    }
}

/// Gel point and depth where the tip indents the gel, if it does.
///
/// Tips over the needle body press on the plate, not the gel; tips off the
/// patch touch nothing.
pub fn tip_contact(world: &WorldState) -> Option<((f64, f64), f64)> {
    let local = world.gel_coords(&world.tip());
    let depth = -local.z;
    if depth <= 0.0 {
        return None;
    }
    match world.eyelet_layout().region(local.x, local.y) {
        Region::Slot | Region::Gel => Some(((local.x, local.y), depth)),
        Region::Rim | Region::OffGel => None,
    }
}

/// Eyelet-sensor image of the needle imprint and, when the tip indents the
/// gel and the tail withstands `poke_force`, the poke bump.
pub fn render_eyelet_image<R: Rng + ?Sized>(
    world: &WorldState,
    sensor: &SensorSpec,
    poke_force: f64,
    rng: &mut R,
) -> Result<TactileImage> {
    EyeletImprint::new(world, sensor)?.render(world, poke_force, rng)
}

/// One-pixel binomial smoothing, additive noise and clamping.
fn finish<R: Rng + ?Sized>(img: &mut TactileImage, sensor: &SensorSpec, rng: &mut R) -> Result<()> {
    smooth(img);
    if sensor.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, sensor.noise_sigma).map_err(|e| invalid(e.to_string()))?;
        for x in &mut img.data {
            *x += normal.sample(rng);
        }
    }
    for x in &mut img.data {
        *x = x.clamp(0.0, 1.0);
    }
    Ok(())
}

/// Separable [1 2 1]/4 filter with replicated borders.
fn smooth(img: &mut TactileImage) {
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        let row = &img.data[r * w..(r + 1) * w];
        for c in 0..w {
            let l = row[c.saturating_sub(1)];
            let rr = row[(c + 1).min(w - 1)];
            tmp[r * w + c] = 0.25 * l + 0.5 * row[c] + 0.25 * rr;
        }
    }
    for r in 0..h {
        let up = r.saturating_sub(1);
        let down = (r + 1).min(h - 1);
        for c in 0..w {
            img.data[r * w + c] = 0.25 * tmp[up * w + c] + 0.5 * tmp[r * w + c] + 0.25 * tmp[down * w + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlo_sim::MaterialSpec;
    use crate::scene::{new_world, WorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn line_rows(img: &TactileImage, col: usize) -> Vec<usize> {
        (0..img.height).filter(|&r| img.get(r, col) > 0.4).collect()
    }

    #[test]
    fn pitch_and_force_hand_values() {
        let s = SensorSpec::default();
        assert!((s.mm_per_px() - 0.05).abs() < 1e-12);
        assert!((SensorSpec::full_resolution().mm_per_px() - 0.0125).abs() < 1e-12);
        assert!(s.with_resolution(400, 200).validate().is_err());
        // 0.25 * 0.123e6 * (1.5e-3)^1.5 * sqrt(1e-4)
        let f = indentation_force(1.5e-3, 0.2e-3, 0.123e6);
        assert!((f - 0.25 * 0.123e6 * 5.809475019311125e-5 * 0.01).abs() < 1e-15);
        assert_eq!(indentation_intensity(1.5e-3), 0.75);
        assert_eq!(indentation_intensity(5e-3), 1.0);
    }

    #[test]
    fn full_crossing_line_spans_image() {
        let mut w = new_world(&WorldConfig::default()).unwrap();
        w.glide_along_thread(0.05).unwrap();
        let s = SensorSpec::default().noise_free();
        let img = render_grip_image(&w, &s, &mut rng()).unwrap();
        let rows = line_rows(&img, s.width_px / 2);
        assert_eq!(rows.first(), Some(&0));
        assert_eq!(rows.last(), Some(&(s.height_px - 1)));
    }

    #[test]
    fn line_ends_at_tip_row() {
        let mut w = new_world(&WorldConfig::default()).unwrap();
        w.glide_along_thread(0.13).unwrap();
        let s = SensorSpec::default().noise_free();
        let img = render_grip_image(&w, &s, &mut rng()).unwrap();
        let tip_from_entry = w.thread_length() - w.traversed;
        let expected = tip_from_entry / s.m_per_px();
        let last = *line_rows(&img, s.width_px / 2).last().unwrap() as f64;
        assert!((last - expected).abs() <= 2.0, "last {last} expected {expected}");
    }

    #[test]
    fn line_width_matches_thickness() {
        let mut w = new_world(&WorldConfig { thread: 1, ..WorldConfig::default() }).unwrap();
        w.glide_along_thread(0.05).unwrap();
        let s = SensorSpec::full_resolution().noise_free();
        let img = render_grip_image(&w, &s, &mut rng()).unwrap();
        let row = s.height_px / 2;
        let width = (0..s.width_px).filter(|&c| img.get(row, c) > 0.4).count();
        assert!((width as i64 - 16).abs() <= 2, "width {width}");
    }

    #[test]
    fn empty_footprint_is_background() {
        let mut w = new_world(&WorldConfig::default()).unwrap();
        w.gripper_pose.position.x += 0.05;
        let img = render_grip_image(&w, &SensorSpec::default().noise_free(), &mut rng()).unwrap();
        assert_eq!(img.max(), 0.0);
    }

    fn poked(thread: usize, tail: f64, uv: (f64, f64), depth: f64) -> WorldState {
        let mut w = new_world(&WorldConfig { thread, seed: 9, ..WorldConfig::default() }).unwrap();
        w.glide_along_thread(w.thread.rest_length() - tail - 0.5 * w.footprint).unwrap();
        w.close_grip(0.0).unwrap();
        w.brake_engaged = false;
        let target = w.gel_pose.transform_point(&nalgebra::Vector3::new(uv.0, uv.1, -depth));
        let tip = w.tip();
        w.move_gripper(&nalgebra::Isometry3::translation(target.x - tip.x, target.y - tip.y, target.z - tip.z), true)
            .unwrap();
        w
    }

    fn count_above(img: &TactileImage, t: f64) -> usize {
        img.data.iter().filter(|&&x| x > t).count()
    }

    #[test]
    fn no_contact_shows_needle_only() {
        let w = new_world(&WorldConfig::default()).unwrap();
        let s = SensorSpec::default().noise_free();
        let img = render_eyelet_image(&w, &s, 1.0, &mut rng()).unwrap();
        assert!(img.max() <= RIM_INTENSITY + 1e-12);
        assert!(count_above(&img, 0.1) > 0);
    }

    #[test]
    fn stiff_thread_leaves_bump() {
        let w = poked(3, 0.01, (0.005, 0.005), 1.5e-3);
        let s = SensorSpec::default().noise_free();
        let force = indentation_force(1.5e-3, w.material().thickness, s.gel_young_modulus);
        assert!(force <= buckling_load(&w.material(), 0.01));
        let img = render_eyelet_image(&w, &s, force, &mut rng()).unwrap();
        let bump = count_above(&img, 0.5);
        assert!(bump >= 31, "bump {bump}");
    }

    #[test]
    fn soft_thread_leaves_no_bump() {
        let mut w = poked(3, 0.01, (0.005, 0.005), 1.5e-3);
        let soft = MaterialSpec { young_modulus: 1.0, ..w.material() };
        w.thread.material = soft;
        let s = SensorSpec::default().noise_free();
        let force = indentation_force(1.5e-3, soft.thickness, s.gel_young_modulus);
        let img = render_eyelet_image(&w, &s, force, &mut rng()).unwrap();
        assert!(img.max() <= RIM_INTENSITY + 1e-12);
    }

    #[test]
    fn bump_is_centered_on_contact() {
        let w = poked(3, 0.01, (-0.004, 0.003), 1.5e-3);
        let s = SensorSpec::default().noise_free();
        let imprint = EyeletImprint::new(&w, &s).unwrap();
        let img = imprint.render(&w, 0.0, &mut rng()).unwrap();
        let (mut n, mut sr, mut sc) = (0.0, 0.0, 0.0);
        for r in 0..img.height {
            for c in 0..img.width {
                if img.get(r, c) > 0.5 {
                    n += 1.0;
                    sr += r as f64;
                    sc += c as f64;
                }
            }
        }
        let (cc, cr) = imprint.pixel_of(-0.004, 0.003);
        assert!((sc / n - cc).abs() <= 1.0 && (sr / n - cr).abs() <= 1.0);
    }

    #[test]
    fn rim_blocks_the_bump() {
        let base = new_world(&WorldConfig { thread: 3, seed: 9, ..WorldConfig::default() }).unwrap();
        let l = base.eyelet_layout();
        let off = 0.5 * l.slot_width + 0.5 * l.rim_width;
        let (s, c) = l.roll.sin_cos();
        let uv = (l.slot_center.0 + c * off, l.slot_center.1 + s * off);
        let w = poked(3, 0.01, uv, 1.5e-3);
        assert_eq!(tip_contact(&w), None);
    }

    #[test]
    fn noise_free_render_is_bit_identical_and_bounded() {
        let w = poked(2, 0.02, (0.0, 0.0), 1.5e-3);
        let s = SensorSpec::default().noise_free();
        let a = render_eyelet_image(&w, &s, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = render_eyelet_image(&w, &s, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        let noisy = render_eyelet_image(&w, &SensorSpec { noise_sigma: 0.2, ..s }, 0.0, &mut rng()).unwrap();
        assert!(noisy.data.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn pgm_header() {
        let img = TactileImage::blank(4, 3, 0.05, Pose::identity());
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(buf.len(), 11 + 12);
    }
}
