//! Masks and features from tactile images.
//!
//! Segmentation is classical: raised imprints (lines, bumps) come from an
//! adaptive threshold, the eyelet clearance from an intensity band, and each
//! connected component is labelled by its shape. Pixel coordinates are
//! `(row, col)` with row 0 at the top; "up" in the image is decreasing row.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tactile::TactileImage;

/// Components smaller than this are noise.
pub const MIN_COMPONENT_PX: usize = 5;
/// Elongation above which a component is a line.
pub const LINE_ELONGATION: f64 = 2.5;
/// Compactness above which a non-line component is a bump.
pub const BUMP_COMPACTNESS: f64 = 0.6;
/// Lowest threshold for raised imprints.
pub const MIN_RAISED_THRESHOLD: f64 = 0.4;
/// Intensity band of the gel inside the eyelet clearance.
pub const HOLE_BAND: (f64, f64) = (0.08, 0.22);
/// Minimum occupied columns (or rows, for steep lines) for a line fit.
pub const MIN_LINE_EXTENT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Line,
    Bump,
    Hole,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelPos {
    pub row: f64,
    pub col: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
    pub label: Label,
    pub pixel_count: usize,
}

impl Mask {
    pub fn empty(width: usize, height: usize, label: Label) -> Self {
        Self { width, height, bits: vec![false; width * height], label, pixel_count: 0 }
    }

    pub fn from_pixels(width: usize, height: usize, label: Label, pixels: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::empty(width, height, label);
        for &(r, c) in pixels {
            if r >= height || c >= width {
                return Err(invalid(format!("pixel ({r}, {c}) outside {width}x{height}")));
            }
            m.insert(r, c);
        }
        Ok(m)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn insert(&mut self, row: usize, col: usize) {
        let i = row * self.width + col;
        if !self.bits[i] {
            self.bits[i] = true;
            self.pixel_count += 1;
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + Clone + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i / w, i % w))
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    pub fn union(&self, other: &Mask) -> Mask {
        let bits: Vec<bool> = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect();
        let pixel_count = bits.iter().filter(|&&b| b).count();
        Mask { width: self.width, height: self.height, bits, label: self.label, pixel_count }
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.pixel_count + other.pixel_count - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        let mut out = Mask::empty(self.width, self.height, self.label);
        for (r, c) in self.pixels() {
            for rr in r.saturating_sub(radius)..=(r + radius).min(self.height - 1) {
                for cc in c.saturating_sub(radius)..=(c + radius).min(self.width - 1) {
                    out.insert(rr, cc);
                }
            }
        }
        out
    }

    /// Chebyshev erosion by `radius`; pixels near the image border survive
    /// when their in-image neighbourhood is set.
    pub fn erode(&self, radius: usize) -> Mask {
        let mut out = Mask::empty(self.width, self.height, self.label);
        for (r, c) in self.pixels() {
            let full = (r.saturating_sub(radius)..=(r + radius).min(self.height - 1))
                .all(|rr| (c.saturating_sub(radius)..=(c + radius).min(self.width - 1)).all(|cc| self.contains(rr, cc)));
            if full {
                out.insert(r, c);
            }
        }
        out
    }

    pub fn moments(&self) -> Option<Moments> {
        Moments::of(self.pixels(), self.pixel_count)
    }
}

/// First and second moments of a pixel set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub com: PixelPos,
    pub cov_rr: f64,
    pub cov_rc: f64,
    pub cov_cc: f64,
}

impl Moments {
    fn of(pixels: impl Iterator<Item = (usize, usize)> + Clone, count: usize) -> Option<Self> {
        if count == 0 {
            return None;
        }
        let (sr, sc) = pixels.clone().fold((0u64, 0u64), |(a, b), (r, c)| (a + r as u64, b + c as u64));
        let n = count as f64;
        let com = PixelPos { row: sr as f64 / n, col: sc as f64 / n };
        let (mut rr, mut rc, mut cc) = (0.0, 0.0, 0.0);
        for (r, c) in pixels {
            let (dr, dc) = (r as f64 - com.row, c as f64 - com.col);
            rr += dr * dr;
            rc += dr * dc;
            cc += dc * dc;
        }
        Some(Self { count, com, cov_rr: rr / n, cov_rc: rc / n, cov_cc: cc / n })
    }

    /// Eigenvalues of the covariance, largest first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let tr = self.cov_rr + self.cov_cc;
        let det = self.cov_rr * self.cov_cc - self.cov_rc * self.cov_rc;
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        (0.5 * tr + disc, (0.5 * tr - disc).max(0.0))
    }

    /// Principal-axis angle in degrees against the column axis with image
    /// v pointing up, in (−90, 90].
    pub fn axis_angle(&self) -> f64 {
        // x = col, y = -row
        let rad = 0.5 * (-2.0 * self.cov_rc).atan2(self.cov_cc - self.cov_rr);
        wrap_angle(rad.to_degrees())
    }

    /// Unit principal direction as (d_row, d_col).
    pub fn axis(&self) -> (f64, f64) {
        let a = self.axis_angle().to_radians();
        (-a.sin(), a.cos())
    }

    /// sqrt(major/minor variance); pixel quantisation floors the minor one.
    pub fn elongation(&self) -> f64 {
        let (l1, l2) = self.eigenvalues();
        (l1.max(1.0 / 12.0) / l2.max(1.0 / 12.0)).sqrt()
    }

    /// Half extents of the uniform rectangle with the same second moments.
    pub fn half_extents(&self) -> (f64, f64) {
        let (l1, l2) = self.eigenvalues();
        ((3.0 * l1).sqrt(), (3.0 * l2).sqrt())
    }
}

/// Wraps degrees into (−90, 90].
pub fn wrap_angle(deg: f64) -> f64 {
    let mut a = deg % 180.0;
    if a <= -90.0 {
        a += 180.0;
    } else if a > 90.0 {
        a -= 180.0;
    }
    a
}

/// 8-connected components of `bits`, each as a pixel list in scan order.
pub fn connected_components(width: usize, height: usize, bits: &[bool]) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; bits.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / width, i % width);
            comp.push((r, c));
            for rr in r.saturating_sub(1)..=(r + 1).min(height - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(width - 1) {
                    let j = rr * width + cc;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// 4πA/P² with P from the 4-neighbour boundary edge count scaled by π/4.
fn compactness(mask: &Mask) -> f64 {
    let mut edges = 0usize;
    for (r, c) in mask.pixels() {
        let nbrs = [
            r.checked_sub(1).map(|rr| (rr, c)),
            (r + 1 < mask.height).then_some((r + 1, c)),
            c.checked_sub(1).map(|cc| (r, cc)),
            (c + 1 < mask.width).then_some((r, c + 1)),
        ];
        edges += nbrs.iter().filter(|n| n.map_or(true, |(rr, cc)| !mask.contains(rr, cc))).count();
    }
    let p = edges as f64 * std::f64::consts::FRAC_PI_4;
    4.0 * std::f64::consts::PI * mask.pixel_count as f64 / (p * p)
}

fn classify_shape(mask: &Mask) -> Option<Label> {
    let m = mask.moments()?;
    if m.elongation() > LINE_ELONGATION {
        Some(Label::Line)
    } else if compactness(mask) > BUMP_COMPACTNESS {
        Some(Label::Bump)
    } else {
        None
    }
}

/// Threshold for raised imprints: halfway between background and peak, but
/// never below `MIN_RAISED_THRESHOLD`.
fn raised_threshold(image: &TactileImage) -> f64 {
    let mut v = image.data.clone();
    let mid = v.len() / 2;
    let (_, bg, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let bg = *bg;
    (bg + 0.5 * (image.max() - bg)).max(MIN_RAISED_THRESHOLD)
}

/// Labelled masks found in `image`, at most one per requested label.
///
/// Lines and bumps are the largest raised component of that shape. The hole
/// is the largest opened component of the clearance intensity band, so it
/// never includes bump pixels.
pub fn segment(image: &TactileImage, expected: &[Label]) -> Vec<Mask> {
    let (w, h) = (image.width, image.height);
    let mut out: Vec<Mask> = Vec::new();
    let wants = |l: Label| expected.contains(&l);

    if wants(Label::Line) || wants(Label::Bump) {
        let t = raised_threshold(image);
        let bits: Vec<bool> = image.data.iter().map(|&x| x > t).collect();
        let mut best: [Option<Mask>; 2] = [None, None];
        for comp in connected_components(w, h, &bits) {
            if comp.len() < MIN_COMPONENT_PX {
                continue;
            }
            let mut m = Mask::from_pixels(w, h, Label::Line, &comp).expect("component pixels in bounds");
            let Some(label) = classify_shape(&m) else { continue };
            m.label = label;
            let slot = usize::from(label == Label::Bump);
            if wants(label) && best[slot].as_ref().map_or(true, |b| m.pixel_count > b.pixel_count) {
                best[slot] = Some(m);
            }
        }
        out.extend(best.into_iter().flatten());
    }

    if wants(Label::Hole) {
        let bits: Vec<bool> = image.data.iter().map(|&x| (HOLE_BAND.0..=HOLE_BAND.1).contains(&x)).collect();
        let band = Mask { width: w, height: h, pixel_count: bits.iter().filter(|&&b| b).count(), bits, label: Label::Hole };
        let opened = band.erode(1).dilate(1);
        let opened = Mask { bits: opened.bits.iter().zip(&band.bits).map(|(&a, &b)| a && b).collect(), ..opened };
        let largest = connected_components(w, h, &opened.bits).into_iter().max_by_key(|c| c.len());
        if let Some(comp) = largest.filter(|c| c.len() >= MIN_COMPONENT_PX) {
            out.push(Mask::from_pixels(w, h, Label::Hole, &comp).expect("component pixels in bounds"));
        }
    }
    out
}

/// Mask with `label` from a segmentation result.
pub fn find(masks: &[Mask], label: Label) -> Option<&Mask> {
    masks.iter().find(|m| m.label == label)
}

/// Area of the eyelet clearance: the hole plus a bump lying in it.
///
/// The hole mask excludes bump pixels, so a bump poked through the clearance
/// is merged back when it touches the hole within two pixels.
pub fn hole_footprint(hole: &Mask, bump: Option<&Mask>) -> Mask {
    match bump {
        Some(b) if b.intersection_count(&hole.dilate(2)) > 0 => {
            let mut m = hole.union(b);
            m.label = Label::Hole;
            m
        }
        _ => hole.clone(),
    }
}

/// Center of mass of the set pixels, summed in integers.
pub fn mask_com(mask: &Mask) -> Result<PixelPos> {
    mask.moments().map(|m| m.com).ok_or_else(|| invalid("center of mass of an empty mask"))
}

/// `n` pixels drawn uniformly with replacement from the mask.
pub fn sample_eyelet_pixels<R: Rng + ?Sized>(mask: &Mask, n: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if mask.pixel_count == 0 {
        return Err(invalid("cannot sample pixels from an empty mask"));
    }
    let pixels: Vec<_> = mask.pixels().collect();
    Ok((0..n).map(|_| pixels[rng.gen_range(0..pixels.len())]).collect())
}

/// Least-squares inclination of a line mask in degrees, (−90, 90].
///
/// Shallow lines are fitted through their bottom contour, the lowest set
/// pixel of each column. Steep lines have no usable bottom contour and are
/// fitted through the mean column of each row.
pub fn line_orientation(mask: &Mask) -> Result<f64> {
    let m = mask.moments().ok_or_else(|| Error::InsufficientExtent("empty line mask".into()))?;
    let (w, h) = (mask.width, mask.height);
    if m.axis_angle().abs() <= 45.0 {
        let mut pts = Vec::new();
        for c in 0..w {
            if let Some(r) = (0..h).rev().find(|&r| mask.contains(r, c)) {
                pts.push((c as f64, (h - 1 - r) as f64));
            }
        }
        if pts.len() < MIN_LINE_EXTENT {
            return Err(Error::InsufficientExtent(format!("line spans {} columns", pts.len())));
        }
        Ok(wrap_angle(fit_slope(&pts).atan().to_degrees()))
    } else {
        let mut pts = Vec::new();
        for r in 0..h {
            let cols: Vec<usize> = (0..w).filter(|&c| mask.contains(r, c)).collect();
            if !cols.is_empty() {
                let mean = cols.iter().sum::<usize>() as f64 / cols.len() as f64;
                pts.push(((h - 1 - r) as f64, mean));
            }
        }
        if pts.len() < MIN_LINE_EXTENT {
            return Err(Error::InsufficientExtent(format!("line spans {} rows", pts.len())));
        }
        // col = a·v + b, so the direction is (a, 1)
        let a = fit_slope(&pts);
        Ok(wrap_angle(1f64.atan2(a).to_degrees()))
    }
}

/// Slope of the least-squares fit y = a·x + b.
fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Border {
    Top,
    Bottom,
    Left,
    Right,
}

/// Pixels of the mask on each image border.
fn border_contacts(mask: &Mask) -> [(Border, usize); 4] {
    let (w, h) = (mask.width, mask.height);
    [
        (Border::Top, (0..w).filter(|&c| mask.contains(0, c)).count()),
        (Border::Bottom, (0..w).filter(|&c| mask.contains(h - 1, c)).count()),
        (Border::Left, (0..h).filter(|&r| mask.contains(r, 0)).count()),
        (Border::Right, (0..h).filter(|&r| mask.contains(r, w - 1)).count()),
    ]
}

/// Border the line enters from, or `None` when it crosses the image between
/// opposite borders or touches no border at all.
pub fn entry_border(mask: &Mask) -> Option<Border> {
    let b = border_contacts(mask);
    let touches = |x: Border| b.iter().any(|&(y, n)| y == x && n > 0);
    if (touches(Border::Top) && touches(Border::Bottom)) || (touches(Border::Left) && touches(Border::Right)) {
        return None;
    }
    b.iter().filter(|(_, n)| *n > 0).max_by_key(|(_, n)| *n).map(|(x, _)| *x)
}

/// Unit direction (d_row, d_col) pointing away from `border`.
fn inward(border: Border) -> (f64, f64) {
    match border {
        Border::Top => (1.0, 0.0),
        Border::Bottom => (-1.0, 0.0),
        Border::Left => (0.0, 1.0),
        Border::Right => (0.0, -1.0),
    }
}

/// Principal axis oriented away from the entry border.
fn inward_axis(m: &Moments, border: Border) -> (f64, f64) {
    let (ar, ac) = m.axis();
    let (ir, ic) = inward(border);
    if ar * ir + ac * ic < 0.0 {
        (-ar, -ac)
    } else {
        (ar, ac)
    }
}

/// Set pixel of a line farthest from its single entry border along the
/// principal axis; `None` while the line still crosses the image.
pub fn line_endpoint(mask: &Mask) -> Option<PixelPos> {
    let m = mask.moments()?;
    let border = entry_border(mask)?;
    let (dr, dc) = inward_axis(&m, border);
    mask.pixels()
        .map(|(r, c)| (r as f64 * dr + c as f64 * dc, r, c))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, r, c)| PixelPos { row: r as f64, col: c as f64 })
}

/// Visible thread length from the entry border to the endpoint along the
/// principal axis, in metres.
pub fn residual_length(mask: &Mask, mm_per_px: f64) -> Result<f64> {
    let end = line_endpoint(mask).ok_or_else(|| invalid("line has no visible endpoint"))?;
    let m = mask.moments().expect("endpoint implies a non-empty mask");
    let border = entry_border(mask).expect("endpoint implies an entry border");
    let (dr, dc) = inward_axis(&m, border);
    // distance to the border line, measured along the axis
    let (gap, cos) = match border {
        Border::Top => (end.row, dr),
        Border::Bottom => ((mask.height - 1) as f64 - end.row, -dr),
        Border::Left => (end.col, dc),
        Border::Right => ((mask.width - 1) as f64 - end.col, -dc),
    };
    let px = if cos > 1e-9 { gap / cos } else { 0.0 };
    Ok(px * mm_per_px * 1e-3)
}

/// Summary of the eyelet footprint used for features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeletSummary {
    pub com: PixelPos,
    /// Principal-axis angle, degrees in (−90, 90].
    pub angle: f64,
    /// Major and minor half extents, pixels.
    pub half_extents: (f64, f64),
}

/// What the insertion policy and reward see after one poke.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Center of mass c of the bump mask.
    pub poke_com: Option<PixelPos>,
    /// C_eye: pixels sampled from the eyelet footprint.
    pub eyelet_pixels: Vec<(usize, usize)>,
    pub n: usize,
    /// Image diagonal l in pixels.
    pub image_diag: f64,
    pub width: usize,
    pub height: usize,
    pub eyelet: Option<EyeletSummary>,
    pub bump_count: usize,
    /// Bump pixels inside the eyelet footprint.
    pub bump_in_hole: usize,
}

/// Segments an eyelet image and builds the observation with `n` eyelet
/// samples.
pub fn observe<R: Rng + ?Sized>(image: &TactileImage, n: usize, rng: &mut R) -> Result<Observation> {
    let masks = segment(image, &[Label::Bump, Label::Hole]);
    let bump = find(&masks, Label::Bump);
    let hole = find(&masks, Label::Hole);
    let footprint = hole.map(|h| hole_footprint(h, bump));
    let eyelet_pixels = match footprint.as_ref() {
        Some(f) => sample_eyelet_pixels(f, n, rng)?,
        None => Vec::new(),
    };
    let eyelet = footprint.as_ref().and_then(|f| f.moments()).map(|m| EyeletSummary {
        com: m.com,
        angle: m.axis_angle(),
        half_extents: m.half_extents(),
    });
    Ok(Observation {
        poke_com: bump.map(mask_com).transpose()?,
        eyelet_pixels,
        n,
        image_diag: (image.width as f64).hypot(image.height as f64),
        width: image.width,
        height: image.height,
        eyelet,
        bump_count: bump.map_or(0, |b| b.pixel_count),
        bump_in_hole: match (bump, footprint.as_ref()) {
            (Some(b), Some(f)) => b.intersection_count(f),
            _ => 0,
        },
    })
}
