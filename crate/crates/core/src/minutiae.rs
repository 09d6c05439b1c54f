//! Minutia data model, interchange format, ROI masking, and a baseline
//! automatic extractor.
//!
//! The extractor is a conventional skeleton pipeline: local ridge orientation
//! from the structure tensor, smoothing along the ridge flow, adaptive
//! binarization (ridges are the dark phase), Zhang-Suen thinning, and
//! crossing-number detection on the skeleton. It is intentionally simple and
//! deterministic; gallery prints may instead ship precomputed minutiae
//! sidecar files.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::segment::RoiPolygon;

/// Minutia type letter used in the text format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MinutiaType {
    Ending,
    Bifurcation,
    Unknown,
}

impl MinutiaType {
    pub fn letter(self) -> char {
        match self {
            MinutiaType::Ending => 'E',
            MinutiaType::Bifurcation => 'B',
            MinutiaType::Unknown => 'U',
        }
    }

    pub fn from_letter(c: &str) -> Option<Self> {
        match c {
            "E" => Some(MinutiaType::Ending),
            "B" => Some(MinutiaType::Bifurcation),
            "U" => Some(MinutiaType::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for MinutiaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// One minutia: position in pixels, direction in degrees [0, 360) measured
/// from +x toward +y in image coordinates, and type.
///
/// Coordinates are non-negative in stored files; transformed copies may
/// leave the positive quadrant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    pub orientation: f64,
    pub mtype: MinutiaType,
}

impl Minutia {
    fn key(&self) -> (u64, u64, u64, MinutiaType) {
        (self.x.to_bits(), self.y.to_bits(), self.orientation.to_bits(), self.mtype)
    }
}

/// Labeled collection of minutiae; no two entries share the exact
/// (x, y, orientation, type) quadruple.
#[derive(Debug, Clone, PartialEq)]
pub struct MinutiaSet {
    pub id: String,
    points: Vec<Minutia>,
}

impl MinutiaSet {
    pub fn new(id: impl Into<String>, points: Vec<Minutia>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, m) in points.iter().enumerate() {
            if !(0.0..360.0).contains(&m.orientation) {
                return Err(Error::InvalidArgument(format!(
                    "minutia {i}: orientation {} outside [0, 360)",
                    m.orientation
                )));
            }
            if !seen.insert(m.key()) {
                return Err(Error::InvalidArgument(format!("minutia {i} duplicates an earlier one")));
            }
        }
        Ok(Self {
            id: id.into(),
            points,
        })
    }

    pub fn points(&self) -> &[Minutia] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Parse the text interchange format: one "x y orientation type" record per
/// line, '#' comment lines and blank lines ignored.
pub fn load_minutiae(path: &Path) -> Result<MinutiaSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut points = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(path, idx + 1, "record must be \"x y orientation type\""));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad {what} value {s:?}")))
        };
        let x = num(fields[0], "x")?;
        let y = num(fields[1], "y")?;
        let orientation = num(fields[2], "orientation")?;
        if x < 0.0 || y < 0.0 {
            return Err(Error::parse(path, idx + 1, "coordinates must be non-negative"));
        }
        if !(0.0..360.0).contains(&orientation) {
            return Err(Error::parse(path, idx + 1, format!("orientation {orientation} outside [0, 360)")));
        }
        let mtype = MinutiaType::from_letter(fields[3])
            .ok_or_else(|| Error::parse(path, idx + 1, format!("unknown type {:?}", fields[3])))?;
        let m = Minutia {
            x,
            y,
            orientation,
            mtype,
        };
        if !seen.insert(m.key()) {
            return Err(Error::parse(path, idx + 1, "duplicate minutia"));
        }
        points.push(m);
    }
    Ok(MinutiaSet { id, points })
}

pub fn save_minutiae(set: &MinutiaSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    for m in &set.points {
        out.push_str(&format!("{} {} {} {}\n", m.x, m.y, m.orientation, m.mtype));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Keep only the minutiae inside (or on the boundary of) the ROI.
pub fn mask_by_roi(set: &MinutiaSet, roi: &RoiPolygon) -> MinutiaSet {
    MinutiaSet {
        id: set.id.clone(),
        points: set.points.iter().copied().filter(|m| roi.contains(m.x, m.y)).collect(),
    }
}

// ---------------------------------------------------------------------------
// baseline extractor

const BORDER_MARGIN: usize = 8;
const SUPPRESS_RADIUS: f64 = 5.0;

struct Field {
    /// Ridge-flow angle in radians, one per pixel.
    flow: Vec<f64>,
}

/// Structure-tensor ridge flow: dominant gradient direction rotated 90 deg.
fn orientation_field(img: &GrayImage) -> Field {
    let (w, h) = (img.width(), img.height());
    let v = img.to_f64();
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            gx[y * w + x] = (v[y * w + x + 1] - v[y * w + x - 1]) / 2.0;
            gy[y * w + x] = (v[(y + 1) * w + x] - v[(y - 1) * w + x]) / 2.0;
        }
    }
    let mut flow = vec![0.0f64; w * h];
    let r = 3i64;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut jxx = 0.0;
            let mut jxy = 0.0;
            let mut jyy = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let nx = (x + dx).clamp(0, w as i64 - 1) as usize;
                    let ny = (y + dy).clamp(0, h as i64 - 1) as usize;
                    let (a, b) = (gx[ny * w + nx], gy[ny * w + nx]);
                    jxx += a * a;
                    jxy += a * b;
                    jyy += b * b;
                }
            }
            let grad_angle = 0.5 * (2.0 * jxy).atan2(jxx - jyy);
            flow[(y as usize) * w + x as usize] = grad_angle + std::f64::consts::FRAC_PI_2;
        }
    }
    Field { flow }
}

fn bilinear(v: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    v[y0 * w + x0] * (1.0 - fx) * (1.0 - fy)
        + v[y0 * w + x1] * fx * (1.0 - fy)
        + v[y1 * w + x0] * (1.0 - fx) * fy
        + v[y1 * w + x1] * fx * fy
}

/// Average each pixel with neighbors sampled along the local ridge flow.
fn oriented_smooth(img: &GrayImage, field: &Field) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let v = img.to_f64();
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let a = field.flow[y * w + x];
            let (dx, dy) = (a.cos(), a.sin());
            let mut sum = 0.0;
            for t in -3..=3 {
                sum += bilinear(&v, w, h, x as f64 + t as f64 * dx, y as f64 + t as f64 * dy);
            }
            out[y * w + x] = sum / 7.0;
        }
    }
    out
}

/// Ridge mask: pixel darker than its local mean by a small offset.
fn adaptive_binarize(values: &[f64], w: usize, h: usize) -> Vec<bool> {
    // integral image for box means
    let mut integral = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + x + 1] = values[y * w + x]
                + integral[y * (w + 1) + x + 1]
                + integral[(y + 1) * (w + 1) + x]
                - integral[y * (w + 1) + x];
        }
    }
    let r = 8i64;
    let mut mask = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let x0 = (x - r).max(0) as usize;
            let y0 = (y - r).max(0) as usize;
            let x1 = ((x + r + 1).min(w as i64)) as usize;
            let y1 = ((y + r + 1).min(h as i64)) as usize;
            let area = ((x1 - x0) * (y1 - y0)) as f64;
            let sum = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            let mean = sum / area;
            mask[(y as usize) * w + x as usize] = values[(y as usize) * w + x as usize] <= mean - 2.0;
        }
    }
    mask
}

/// Zhang-Suen thinning to a 1-px skeleton.
fn thin(mask: &mut [bool], w: usize, h: usize) {
    let idx = |x: usize, y: usize| y * w + x;
    loop {
        let mut changed = false;
        for phase in 0..2 {
            let mut kill = Vec::new();
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    if !mask[idx(x, y)] {
                        continue;
                    }
                    let p = [
                        mask[idx(x, y - 1)],     // p2 N
                        mask[idx(x + 1, y - 1)], // p3 NE
                        mask[idx(x + 1, y)],     // p4 E
                        mask[idx(x + 1, y + 1)], // p5 SE
                        mask[idx(x, y + 1)],     // p6 S
                        mask[idx(x - 1, y + 1)], // p7 SW
                        mask[idx(x - 1, y)],     // p8 W
                        mask[idx(x - 1, y - 1)], // p9 NW
                    ];
                    let b: usize = p.iter().map(|&v| v as usize).sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (c1, c2) = if phase == 0 {
                        (p[0] && p[2] && p[4], p[2] && p[4] && p[6]) // N*E*S, E*S*W
                    } else {
                        (p[0] && p[2] && p[6], p[0] && p[4] && p[6]) // N*E*W, N*S*W
                    };
                    if !c1 && !c2 {
                        kill.push(idx(x, y));
                    }
                }
            }
            if !kill.is_empty() {
                changed = true;
                for i in kill {
                    mask[i] = false;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Rutovitz crossing number of a skeleton pixel: transitions around the ring.
fn crossing_number(mask: &[bool], w: usize, x: usize, y: usize) -> usize {
    let ring = [
        mask[(y - 1) * w + x],
        mask[(y - 1) * w + x + 1],
        mask[y * w + x + 1],
        mask[(y + 1) * w + x + 1],
        mask[(y + 1) * w + x],
        mask[(y + 1) * w + x - 1],
        mask[y * w + x - 1],
        mask[(y - 1) * w + x - 1],
    ];
    (0..8).filter(|&i| !ring[i] && ring[(i + 1) % 8]).count()
}

/// Walk up to `steps` along the skeleton away from an ending; returns the
/// direction from the ending into the ridge, in degrees [0, 360).
fn ending_direction(mask: &[bool], w: usize, h: usize, x0: usize, y0: usize, steps: usize) -> f64 {
    let neighbors = |x: usize, y: usize| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && mask[(ny as usize) * w + nx as usize] {
                    out.push((nx as usize, ny as usize));
                }
            }
        }
        out
    };
    let mut prev = (x0, y0);
    let mut cur = match neighbors(x0, y0).first() {
        Some(&n) => n,
        None => return 0.0,
    };
    for _ in 1..steps {
        let next: Vec<_> = neighbors(cur.0, cur.1).into_iter().filter(|&n| n != prev).collect();
        if next.len() != 1 {
            break; // branch or dead end: stop walking
        }
        prev = cur;
        cur = next[0];
    }
    let deg = (cur.1 as f64 - y0 as f64).atan2(cur.0 as f64 - x0 as f64).to_degrees();
    deg.rem_euclid(360.0)
}

/// Detect endings and bifurcations on the thinned ridge map.
///
/// Restricted to `roi` when given; detections closer than a suppression
/// radius to an earlier one are dropped; dark phase = ridge. Deterministic.
pub fn extract_minutiae(img: &GrayImage, roi: Option<&RoiPolygon>, id: &str) -> MinutiaSet {
    let (w, h) = (img.width(), img.height());
    if w < 2 * BORDER_MARGIN + 1 || h < 2 * BORDER_MARGIN + 1 {
        return MinutiaSet {
            id: id.to_string(),
            points: Vec::new(),
        };
    }
    let field = orientation_field(img);
    let smoothed = oriented_smooth(img, &field);
    let mut mask = adaptive_binarize(&smoothed, w, h);
    thin(&mut mask, w, h);

    let mut points: Vec<Minutia> = Vec::new();
    for y in BORDER_MARGIN..h - BORDER_MARGIN {
        for x in BORDER_MARGIN..w - BORDER_MARGIN {
            if !mask[y * w + x] {
                continue;
            }
            let cn = crossing_number(&mask, w, x, y);
            let mtype = match cn {
                1 => MinutiaType::Ending,
                3 => MinutiaType::Bifurcation,
                _ => continue,
            };
            let (fx, fy) = (x as f64, y as f64);
            if let Some(poly) = roi {
                if !poly.contains(fx, fy) {
                    continue;
                }
            }
            if points
                .iter()
                .any(|m| (m.x - fx).powi(2) + (m.y - fy).powi(2) < SUPPRESS_RADIUS * SUPPRESS_RADIUS)
            {
                continue;
            }
            let orientation = match mtype {
                MinutiaType::Ending => ending_direction(&mask, w, h, x, y, 5),
                _ => field.flow[y * w + x].to_degrees().rem_euclid(180.0),
            };
            points.push(Minutia {
                x: fx,
                y: fy,
                orientation,
                mtype,
            });
        }
    }
    MinutiaSet {
        id: id.to_string(),
        points,
    }
}
