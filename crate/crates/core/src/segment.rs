//! Self-learned ROI segmentation.
//!
//! Every patch of the latent is sparse-coded against the image's own learned
//! dictionary. Patches whose strongest coefficient lands on a ridge-valley
//! atom vote for their whole block in a per-pixel map; the map is min-max
//! normalized, thresholded by Otsu's rule, cleaned by morphology, and the
//! convex hull of the surviving foreground becomes the polygonal ROI.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::atoms::{classify_atoms, labels_from_analyses, AtomAnalysis, AtomIdConfig};
use crate::dict::{learn_dictionary, omp_encode, Dictionary, TrainConfig};
use crate::error::{Error, Result};
use crate::image::{normalize_patch, patches_at, GrayImage, PatchGrid};

/// Per-pixel count of ridge-valley patch votes.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMap {
    width: usize,
    height: usize,
    counts: Vec<u32>,
}

impl VoteMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            counts: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Min-max normalization to [0, 1]. A constant map collapses to all-1
    /// when non-zero and all-0 when empty.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let min = self.counts.iter().copied().min().unwrap_or(0);
        if max == min {
            let v = if max > 0 { 1.0 } else { 0.0 };
            return vec![v; self.counts.len()];
        }
        let span = (max - min) as f64;
        self.counts.iter().map(|&c| (c - min) as f64 / span).collect()
    }

    /// Rescale counts onto 0-255 for a debug dump (max count maps to 255).
    pub fn to_gray(&self) -> GrayImage {
        let max = self.max_count();
        let pixels: Vec<u8> = if max == 0 {
            vec![0; self.counts.len()]
        } else {
            self.counts
                .iter()
                .map(|&c| ((c as f64 / max as f64) * 255.0).round() as u8)
                .collect()
        };
        GrayImage::new(self.width, self.height, pixels).expect("dimensions match counts")
    }
}

/// Per-pixel boolean foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Convex ROI polygon over pixel-corner coordinates, counter-clockwise
/// (positive shoelace area with x right, y down treated as plain Cartesian
/// axes). Empty polygon = empty ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPolygon {
    vertices: Vec<(i64, i64)>,
}

impl RoiPolygon {
    pub fn empty() -> Self {
        Self { vertices: Vec::new() }
    }

    /// Build from vertices, validating convexity, orientation, and count.
    pub fn new(vertices: Vec<(i64, i64)>) -> Result<Self> {
        if vertices.is_empty() {
            return Ok(Self::empty());
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "polygon needs 0 or >= 3 vertices, got {}",
                vertices.len()
            )));
        }
        let n = vertices.len();
        for i in 0..n {
            let o = vertices[i];
            let a = vertices[(i + 1) % n];
            let b = vertices[(i + 2) % n];
            let cross = (a.0 - o.0) * (b.1 - a.1) - (a.1 - o.1) * (b.0 - a.0);
            if cross < 0 {
                return Err(Error::InvalidArgument(
                    "polygon vertices must be convex and counter-clockwise".into(),
                ));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[(i64, i64)] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace area.
    pub fn area(&self) -> f64 {
        if self.vertices.len() < 3 {
            return 0.0;
        }
        let mut twice = 0i64;
        let n = self.vertices.len();
        for i in 0..n {
            let (x0, y0) = self.vertices[i];
            let (x1, y1) = self.vertices[(i + 1) % n];
            twice += x0 * y1 - x1 * y0;
        }
        twice.abs() as f64 / 2.0
    }

    /// Point-in-polygon with points on an edge counting as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            let (ax, ay) = self.vertices[i];
            let (bx, by) = self.vertices[(i + 1) % n];
            let cross = (bx - ax) as f64 * (y - ay as f64) - (by - ay) as f64 * (x - ax as f64);
            if cross < -1e-9 {
                return false;
            }
        }
        true
    }
}

/// End-to-end segmentation parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SegmentConfig {
    /// Patch side w; atoms are w*w vectors.
    pub patch_size: usize,
    /// Grid stride in pixels.
    pub stride: usize,
    pub train: TrainConfig,
    pub atoms: AtomIdConfig,
    /// Side of the square structuring element for closing/opening (odd).
    pub morph_element: usize,
    /// Components smaller than this many pixels are discarded.
    pub min_component_area: usize,
    /// Hull every foreground component instead of only the largest.
    pub hull_of_all: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            stride: 8,
            train: TrainConfig::default(),
            atoms: AtomIdConfig::default(),
            morph_element: 5,
            min_component_area: 2048,
            hull_of_all: false,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 {
            return Err(Error::Config("patch size and stride must be positive".into()));
        }
        if self.morph_element == 0 || self.morph_element % 2 == 0 {
            return Err(Error::Config("morphology element side must be odd".into()));
        }
        self.train.validate()?;
        self.atoms.validate()
    }
}

/// Everything the segmentation pipeline produced, for inspection and dumps.
#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub roi: RoiPolygon,
    pub vote_map: VoteMap,
    pub mask: BinaryMask,
    pub dictionary: Dictionary,
    pub analyses: Vec<AtomAnalysis>,
}

/// Accumulate ridge-valley votes: every patch is coded, and when its
/// strongest coefficient belongs to a ridge-valley atom the patch's whole
/// block is incremented by one.
pub fn build_vote_map(
    img: &GrayImage,
    dict: &Dictionary,
    grid: &PatchGrid,
    sparsity: usize,
) -> Result<VoteMap> {
    if !dict.is_fully_labeled() {
        return Err(Error::UnlabeledDictionary);
    }
    let patches = patches_at(img, grid);
    let votes: Vec<Option<(usize, usize)>> = patches
        .par_iter()
        .map(|p| {
            let code = omp_encode(dict, &normalize_patch(p), sparsity)?;
            Ok(match code.dominant_atom() {
                Some(k) if dict.is_ridge_valley(k) => Some(p.origin),
                _ => None,
            })
        })
        .collect::<Result<_>>()?;

    let w = grid.patch_size();
    let mut map = VoteMap::zeros(img.width(), img.height());
    for (x0, y0) in votes.into_iter().flatten() {
        for y in y0..y0 + w {
            for x in x0..x0 + w {
                map.counts[y * map.width + x] += 1;
            }
        }
    }
    Ok(map)
}

/// Otsu's threshold over 256 equal bins on values in [0, 1].
///
/// Foreground is `value >= threshold`. Ties in between-class variance break
/// toward the lowest threshold; a constant input returns that constant (the
/// whole map becomes foreground and morphology decides what survives).
pub fn otsu_threshold(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "threshold needs at least one value");
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return min;
    }

    let mut hist = [0usize; 256];
    for &v in values {
        let bin = (v * 255.0).round().clamp(0.0, 255.0) as usize;
        hist[bin] += 1;
    }
    let total = values.len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();

    let mut best_t = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut below_n = 0.0;
    let mut below_sum = 0.0;
    for t in 0..256 {
        // classes: bins < t vs bins >= t
        let w0 = below_n / total;
        let w1 = 1.0 - w0;
        if w0 > 0.0 && w1 > 0.0 {
            let mu0 = below_sum / below_n;
            let mu1 = (total_sum - below_sum) / (total - below_n);
            let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
            if var > best_var {
                best_var = var;
                best_t = t;
            }
        }
        below_n += hist[t] as f64;
        below_sum += t as f64 * hist[t] as f64;
    }
    best_t as f64 / 255.0
}

/// Apply the foreground rule `value >= threshold`.
pub fn binarize(width: usize, height: usize, values: &[f64], threshold: f64) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    for (i, &v) in values.iter().enumerate() {
        mask.bits[i] = v >= threshold;
    }
    mask
}

fn dilate(mask: &BinaryMask, radius: i64) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width, mask.height);
    let (w, h) = (mask.width as i64, mask.height as i64);
    for y in 0..h {
        for x in 0..w {
            'scan: for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h && mask.get(nx as usize, ny as usize) {
                        out.set(x as usize, y as usize, true);
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

fn erode(mask: &BinaryMask, radius: i64) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width, mask.height);
    let (w, h) = (mask.width as i64, mask.height as i64);
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            'scan: for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h || !mask.get(nx as usize, ny as usize) {
                        all = false;
                        break 'scan;
                    }
                }
            }
            out.set(x as usize, y as usize, all);
        }
    }
    out
}

/// Fill holes: any background region not 4-connected to the border becomes
/// foreground.
fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut outside = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for x in 0..w {
        for y in [0, h - 1] {
            if !mask.get(x, y) && !outside[y * w + x] {
                outside[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    for y in 0..h {
        for x in [0, w - 1] {
            if !mask.get(x, y) && !outside[y * w + x] {
                outside[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        let neighbors = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbors {
            if nx < w && ny < h && !mask.get(nx, ny) && !outside[ny * w + nx] {
                outside[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        }
    }
    let mut out = mask.clone();
    for i in 0..w * h {
        if !out.bits[i] && !outside[i] {
            out.bits[i] = true;
        }
    }
    out
}

/// Label 8-connected foreground components; returns per-pixel component index
/// (usize::MAX for background) and component sizes in scan-order of discovery.
fn components(mask: &BinaryMask) -> (Vec<usize>, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || labels[y * w + x] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            sizes.push(0);
            labels[y * w + x] = id;
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                sizes[id] += 1;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let nx = cx as i64 + dx;
                        let ny = cy as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && labels[ny * w + nx] == usize::MAX {
                            labels[ny * w + nx] = id;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    (labels, sizes)
}

/// Closing, opening, hole filling, then removal of components below
/// `min_area` pixels, in that order.
pub fn morph_cleanup(mask: &BinaryMask, element: usize, min_area: usize) -> BinaryMask {
    let radius = (element / 2) as i64;
    let closed = erode(&dilate(mask, radius), radius);
    let opened = dilate(&erode(&closed, radius), radius);
    let filled = fill_holes(&opened);

    let (labels, sizes) = components(&filled);
    let mut out = filled.clone();
    for (i, &l) in labels.iter().enumerate() {
        if l != usize::MAX && sizes[l] < min_area {
            out.bits[i] = false;
        }
    }
    out
}

/// Monotone-chain convex hull, counter-clockwise, collinear points dropped.
fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Hull the largest foreground component (or all of them) into the ROI.
///
/// Pixels contribute their four corners, so the polygon covers the full pixel
/// area of the component and any non-empty result has at least three
/// vertices.
pub fn roi_polygon(mask: &BinaryMask, hull_of_all: bool) -> RoiPolygon {
    let (labels, sizes) = components(mask);
    if sizes.is_empty() {
        return RoiPolygon::empty();
    }
    let keep: Vec<bool> = if hull_of_all {
        vec![true; sizes.len()]
    } else {
        let largest = (0..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i)).unwrap();
        (0..sizes.len()).map(|i| i == largest).collect()
    };

    let (w, h) = (mask.width, mask.height);
    let mut corners: Vec<(i64, i64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == usize::MAX || !keep[l] {
                continue;
            }
            // only boundary pixels can contribute hull vertices
            let interior = x > 0
                && y > 0
                && x + 1 < w
                && y + 1 < h
                && mask.get(x - 1, y)
                && mask.get(x + 1, y)
                && mask.get(x, y - 1)
                && mask.get(x, y + 1);
            if interior {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            corners.extend([(xi, yi), (xi + 1, yi), (xi, yi + 1), (xi + 1, yi + 1)]);
        }
    }
    RoiPolygon {
        vertices: convex_hull(corners),
    }
}

/// Full pipeline: learn the image's dictionary, label its atoms, vote, and
/// extract the ROI polygon. Deterministic for a fixed seed.
pub fn segment(img: &GrayImage, cfg: &SegmentConfig) -> Result<SegmentOutput> {
    cfg.validate()?;
    let grid = PatchGrid::build(img, cfg.patch_size, cfg.stride)?;
    let patches: Vec<_> = patches_at(img, &grid).iter().map(normalize_patch).collect();

    let (mut dictionary, _) = learn_dictionary(&patches, &cfg.train)?;
    let analyses = classify_atoms(&dictionary, &cfg.atoms)?;
    dictionary.set_labels(labels_from_analyses(&analyses))?;

    let vote_map = build_vote_map(img, &dictionary, &grid, cfg.train.sparsity)?;
    if vote_map.max_count() == 0 {
        // nothing voted: empty ROI rather than an all-foreground degenerate map
        return Ok(SegmentOutput {
            roi: RoiPolygon::empty(),
            vote_map,
            mask: BinaryMask::new(img.width(), img.height()),
            dictionary,
            analyses,
        });
    }

    let values = vote_map.normalized();
    let threshold = otsu_threshold(&values);
    let raw_mask = binarize(img.width(), img.height(), &values, threshold);
    let mask = morph_cleanup(&raw_mask, cfg.morph_element, cfg.min_component_area);
    let roi = roi_polygon(&mask, cfg.hull_of_all);

    Ok(SegmentOutput {
        roi,
        vote_map,
        mask,
        dictionary,
        analyses,
    })
}

/// Write the ROI as text: "ROI <n>" then n "x y" vertex lines.
pub fn save_roi(roi: &RoiPolygon, path: &Path) -> Result<()> {
    let mut out = format!("ROI {}\n", roi.vertices.len());
    for (x, y) in &roi.vertices {
        out.push_str(&format!("{x} {y}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_roi(path: &Path) -> Result<RoiPolygon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing ROI header"))?;
    let count: usize = header
        .strip_prefix("ROI ")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| Error::parse(path, 1, "header must be \"ROI <count>\""))?;

    let mut vertices = Vec::with_capacity(count);
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |s: Option<&str>| -> Option<i64> { s.and_then(|v| v.parse().ok()) };
        match (parse(it.next()), parse(it.next()), it.next()) {
            (Some(x), Some(y), None) => vertices.push((x, y)),
            _ => return Err(Error::parse(path, idx + 1, "vertex line must be \"x y\"")),
        }
    }
    if vertices.len() != count {
        return Err(Error::parse(
            path,
            1,
            format!("header promises {count} vertices, file holds {}", vertices.len()),
        ));
    }
    RoiPolygon::new(vertices)
}
