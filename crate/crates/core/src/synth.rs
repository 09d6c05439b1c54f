//! Deterministic synthetic latent generator.
//!
//! Renders sinusoidal ridge fields inside a polygonal region, composites
//! structured noise (lines, glyph-like stamps, speckle) and Gaussian blur,
//! and emits ground truth alongside the image: the region mask, the planted
//! minutiae, and an echo of the generating description. A companion helper
//! plants a known affine transform between two minutiae sets so matcher
//! recovery can be scored against truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gamatch::{apply_transform, AffineParams, GaConfig};
use crate::image::GrayImage;
use crate::minutiae::{Minutia, MinutiaSet, MinutiaType};
use crate::segment::{BinaryMask, RoiPolygon};

const BACKGROUND: f64 = 225.0;
const RIDGE_MEAN: f64 = 127.5;
const RIDGE_AMPLITUDE: f64 = 100.0;
const INK: f64 = 30.0;

/// Direction of the ridge wave vector (the across-ridge axis), in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OrientationField {
    /// One direction everywhere.
    Constant { degrees: f64 },
    /// Direction varying linearly with position: degrees + dx*x + dy*y.
    Linear { degrees: f64, dx: f64, dy: f64 },
}

impl OrientationField {
    /// Wave direction at a pixel, in radians.
    pub fn angle_at(&self, x: f64, y: f64) -> f64 {
        match *self {
            OrientationField::Constant { degrees } => degrees.to_radians(),
            OrientationField::Linear { degrees, dx, dy } => (degrees + dx * x + dy * y).to_radians(),
        }
    }
}

/// Structured-noise layers composited over the rendered ridges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Straight dark lines, 1-3 px thick.
    pub lines: usize,
    /// Glyph-like rectangle stamps with internal strokes.
    pub glyphs: usize,
    /// Fraction of pixels hit by salt-and-pepper speckle, in [0, 1).
    pub speckle: f64,
    /// Isotropic Gaussian blur sigma in pixels; keep <= 2 for realistic
    /// degradation, larger values are for stress tests.
    pub blur_sigma: f64,
    /// Allow line/glyph/speckle placement on top of the ridge region.
    /// Off by default: noise then lands outside (best effort).
    pub overlap: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            lines: 0,
            glyphs: 0,
            speckle: 0.0,
            blur_sigma: 0.0,
            overlap: false,
        }
    }
}

/// One planted minutia in config form; `kind` is "E", "B" or "U".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecMinutia {
    pub x: f64,
    pub y: f64,
    pub orientation: f64,
    pub kind: String,
}

/// Full description of one synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    /// Convex counter-clockwise ridge region; empty means no ridges at all.
    #[serde(default)]
    pub region: Vec<(i64, i64)>,
    /// Ridge period in pixels; must sit in the accepted ridge band when a
    /// ridge region exists.
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_orientation")]
    pub orientation: OrientationField,
    /// Ground-truth minutiae; all must lie inside the ridge region.
    #[serde(default)]
    pub minutiae: Vec<SpecMinutia>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_period() -> f64 {
    8.0
}

fn default_orientation() -> OrientationField {
    OrientationField::Constant { degrees: 0.0 }
}

/// Ridge-period band the atom classifier accepts; generated in-band ridges
/// must stay inside it so downstream stages agree with the ground truth.
pub const RIDGE_PERIOD_BAND: (f64, f64) = (5.3, 12.8);

impl SynthSpec {
    /// Validate the description and build the region polygon.
    pub fn validate(&self) -> Result<RoiPolygon> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        let roi = RoiPolygon::new(self.region.clone())?;
        if !roi.is_empty() && !(RIDGE_PERIOD_BAND.0..=RIDGE_PERIOD_BAND.1).contains(&self.period) {
            return Err(Error::Config(format!(
                "ridge period {} outside the accepted band [{}, {}]",
                self.period, RIDGE_PERIOD_BAND.0, RIDGE_PERIOD_BAND.1
            )));
        }
        if !(0.0..1.0).contains(&self.noise.speckle) {
            return Err(Error::Config("speckle fraction must be in [0, 1)".into()));
        }
        if self.noise.blur_sigma < 0.0 {
            return Err(Error::Config("blur sigma must be non-negative".into()));
        }
        for (i, m) in self.minutiae.iter().enumerate() {
            MinutiaType::from_letter(&m.kind)
                .ok_or_else(|| Error::Config(format!("minutia {i}: unknown kind {:?}", m.kind)))?;
            if !roi.contains(m.x, m.y) {
                return Err(Error::Config(format!(
                    "minutia {i} at ({}, {}) lies outside the ridge region",
                    m.x, m.y
                )));
            }
        }
        Ok(roi)
    }
}

/// Parse a description from config-file text.
pub fn parse_spec(text: &str) -> Result<SynthSpec> {
    let spec: SynthSpec =
        toml::from_str(text).map_err(|e| Error::Config(format!("bad synth spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

/// Load a description from a config file.
pub fn load_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SynthSpec = toml::from_str(&text)
        .map_err(|e| Error::format("synth spec", path, e.message().to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Serialize a description back to config-file text (the "spec echo").
pub fn spec_to_text(spec: &SynthSpec) -> String {
    toml::to_string(spec).expect("synth spec serializes")
}

/// Rendered image plus everything needed to score downstream stages.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub image: GrayImage,
    /// True exactly on pixels inside the ridge polygon.
    pub mask: BinaryMask,
    pub minutiae: MinutiaSet,
    /// Echo of the generating description.
    pub spec: SynthSpec,
}

fn stamp(canvas: &mut [f64], w: usize, h: usize, x: i64, y: i64, thickness: i64, value: f64) {
    for dy in 0..thickness {
        for dx in 0..thickness {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                canvas[py as usize * w + px as usize] = value;
            }
        }
    }
}

fn draw_line(canvas: &mut [f64], w: usize, h: usize, a: (f64, f64), b: (f64, f64), thickness: i64) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize + 1;
    for i in 0..steps {
        let t = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
        let x = (a.0 + t * (b.0 - a.0)).round() as i64;
        let y = (a.1 + t * (b.1 - a.1)).round() as i64;
        stamp(canvas, w, h, x, y, thickness, INK);
    }
}

/// Sample a point, preferring locations off the ridge region unless overlap
/// is allowed. Gives up after a bounded number of rejections.
fn sample_point(rng: &mut ChaCha8Rng, w: usize, h: usize, roi: &RoiPolygon, overlap: bool) -> (f64, f64) {
    let mut p = (0.0, 0.0);
    for _ in 0..64 {
        p = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        if overlap || roi.is_empty() || !roi.contains(p.0, p.1) {
            return p;
        }
    }
    p
}

fn gaussian_blur(canvas: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return canvas.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let clamp_x = |x: i64| x.clamp(0, w as i64 - 1) as usize;
    let clamp_y = |y: i64| y.clamp(0, h as i64 - 1) as usize;
    let mut horizontal = vec![0.0; canvas.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * canvas[y * w + clamp_x(x as i64 + i as i64 - radius)];
            }
            horizontal[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; canvas.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * horizontal[clamp_y(y as i64 + i as i64 - radius) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Render the image described by `spec` along with its ground truth.
///
/// Ridges are dark on a light background: inside the region the intensity is
/// `127.5 - 100*cos(2*pi/period * (x*cos(phi) + y*sin(phi)))` with `phi` the
/// local wave direction. Noise layers composite in a fixed order (lines,
/// glyphs, speckle) before the blur, all driven by one seeded generator, so
/// the output is byte-identical for identical descriptions.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    let roi = spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut canvas = vec![BACKGROUND; w * h];
    let mut mask = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if roi.contains(x as f64, y as f64) {
                mask.set(x, y, true);
                let phi = spec.orientation.angle_at(x as f64, y as f64);
                let phase = 2.0 * std::f64::consts::PI / spec.period
                    * (x as f64 * phi.cos() + y as f64 * phi.sin());
                canvas[y * w + x] = RIDGE_MEAN - RIDGE_AMPLITUDE * phase.cos();
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.noise.lines {
        let a = sample_point(&mut rng, w, h, &roi, spec.noise.overlap);
        let b = sample_point(&mut rng, w, h, &roi, spec.noise.overlap);
        let thickness = rng.gen_range(1..=3);
        draw_line(&mut canvas, w, h, a, b, thickness);
    }
    for _ in 0..spec.noise.glyphs {
        let c = sample_point(&mut rng, w, h, &roi, spec.noise.overlap);
        // Box sides are parallel line pairs, so their spacing reads as a
        // texture period; keep it above the ridge band or the stamps would
        // imitate the very pattern they are meant to contrast with.
        let gw = rng.gen_range(14..=20) as f64;
        let gh = rng.gen_range(14..=20) as f64;
        let (x0, y0) = (c.0 - gw / 2.0, c.1 - gh / 2.0);
        let (x1, y1) = (c.0 + gw / 2.0, c.1 + gh / 2.0);
        draw_line(&mut canvas, w, h, (x0, y0), (x1, y0), 1);
        draw_line(&mut canvas, w, h, (x1, y0), (x1, y1), 1);
        draw_line(&mut canvas, w, h, (x1, y1), (x0, y1), 1);
        draw_line(&mut canvas, w, h, (x0, y1), (x0, y0), 1);
        // internal strokes at arbitrary angles, like handwriting fragments;
        // parallel or axis-locked strokes would form periodic gratings that
        // no real text exhibits
        let strokes = rng.gen_range(2..=4);
        for _ in 0..strokes {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let len = rng.gen_range(6.0..=gw.max(gh));
            let (mx, my) = (rng.gen_range(x0..x1), rng.gen_range(y0..y1));
            let (dx, dy) = (angle.cos() * len / 2.0, angle.sin() * len / 2.0);
            draw_line(&mut canvas, w, h, (mx - dx, my - dy), (mx + dx, my + dy), 1);
        }
    }
    let speckle_count = (spec.noise.speckle * (w * h) as f64).round() as usize;
    for _ in 0..speckle_count {
        let p = sample_point(&mut rng, w, h, &roi, spec.noise.overlap);
        let v = if rng.gen_bool(0.5) { 0.0 } else { 255.0 };
        canvas[p.1 as usize * w + p.0 as usize] = v;
    }

    let blurred = gaussian_blur(&canvas, w, h, spec.noise.blur_sigma);
    let pixels: Vec<u8> = blurred.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let image = GrayImage::new(w, h, pixels)?;

    let points = spec
        .minutiae
        .iter()
        .map(|m| Minutia {
            x: m.x,
            y: m.y,
            orientation: m.orientation,
            mtype: MinutiaType::from_letter(&m.kind).expect("validated kind"),
        })
        .collect();
    let minutiae = MinutiaSet::new("synth", points)?;
    Ok(SynthOutput {
        image,
        mask,
        minutiae,
        spec: spec.clone(),
    })
}

/// A gallery/latent set pair related by a known transform.
#[derive(Debug, Clone)]
pub struct PlantedPair {
    /// The untouched base set (the "rolled print" side).
    pub gallery: MinutiaSet,
    /// Transformed survivors plus clutter (the "latent" side).
    pub latent: MinutiaSet,
    /// The transform that was applied.
    pub transform: AffineParams,
    /// (gallery index, latent index) for every surviving point.
    pub pairs: Vec<(usize, usize)>,
}

/// Apply a known transform to `base` and degrade the result: jitter every
/// survivor's position by an isotropic Gaussian, drop a fixed fraction of
/// points (rounded to a count), and append `clutter` unrelated points near
/// the transformed cloud. The returned pair list is the surviving
/// ground-truth correspondence.
pub fn plant_transformed_pair(
    base: &MinutiaSet,
    t0: &AffineParams,
    jitter_sigma: f64,
    dropout: f64,
    clutter: usize,
    seed: u64,
) -> Result<PlantedPair> {
    if base.is_empty() {
        return Err(Error::InvalidArgument("base set is empty".into()));
    }
    let cfg = GaConfig::default();
    if !cfg.theta_range.contains(t0.theta)
        || !cfg.scale_range.contains(t0.s)
        || !cfg.tx_range.contains(t0.tx)
        || !cfg.ty_range.contains(t0.ty)
    {
        return Err(Error::InvalidArgument(format!(
            "transform {t0:?} outside the matcher's search ranges"
        )));
    }
    let max_jitter = cfg.delta_d / 3.0;
    if !(0.0..=max_jitter).contains(&jitter_sigma) {
        return Err(Error::InvalidArgument(format!(
            "jitter sigma must be in [0, {max_jitter}], got {jitter_sigma}"
        )));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidArgument("dropout must be in [0, 1)".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = base.len();
    let drop_count = (n as f64 * dropout).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut survivors: Vec<usize> = order[drop_count..].to_vec();
    survivors.sort_unstable();

    let mut latent_points = Vec::with_capacity(survivors.len() + clutter);
    let mut pairs = Vec::with_capacity(survivors.len());
    for (j, &i) in survivors.iter().enumerate() {
        let mut m = apply_transform(t0, &base.points()[i]);
        let (jx, jy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        m.x += jitter_sigma * jx;
        m.y += jitter_sigma * jy;
        latent_points.push(m);
        pairs.push((i, j));
    }

    // Clutter lands in (and just around) the transformed cloud's bounding
    // box so it competes with genuine points instead of being trivially far.
    let cloud: Vec<Minutia> = base.points().iter().map(|m| apply_transform(t0, m)).collect();
    let min_x = cloud.iter().map(|m| m.x).fold(f64::INFINITY, f64::min) - 40.0;
    let max_x = cloud.iter().map(|m| m.x).fold(f64::NEG_INFINITY, f64::max) + 40.0;
    let min_y = cloud.iter().map(|m| m.y).fold(f64::INFINITY, f64::min) - 40.0;
    let max_y = cloud.iter().map(|m| m.y).fold(f64::NEG_INFINITY, f64::max) + 40.0;
    for _ in 0..clutter {
        latent_points.push(Minutia {
            x: rng.gen_range(min_x..max_x),
            y: rng.gen_range(min_y..max_y),
            orientation: rng.gen_range(0.0..360.0),
            mtype: if rng.gen_bool(0.5) {
                MinutiaType::Ending
            } else {
                MinutiaType::Bifurcation
            },
        });
    }

    let latent = MinutiaSet::new(format!("{}-latent", base.id), latent_points)?;
    Ok(PlantedPair {
        gallery: base.clone(),
        latent,
        transform: *t0,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::{AtomIdConfig, RealPatch};
    use crate::gamatch::{fitness, run_ga_restarts};
    use crate::image::encode_pgm;

    fn rect(w: i64, h: i64) -> Vec<(i64, i64)> {
        vec![(0, 0), (w, 0), (w, h), (0, h)]
    }

    fn patch_at(img: &GrayImage, x0: usize, y0: usize, size: usize) -> RealPatch {
        let mut values = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                values.push(img.get(x0 + x, y0 + y) as f64);
            }
        }
        RealPatch::new(size, values).unwrap()
    }

    fn measured_period(img: &GrayImage, x0: usize, y0: usize) -> f64 {
        let patch = patch_at(img, x0, y0, 32);
        let band = AtomIdConfig::default().broad_period;
        let peak = super::super::atoms::dominant_frequency(&patch, band).expect("spectral peak");
        32.0 / peak.radial()
    }

    #[test]
    fn full_field_ridges_carry_the_requested_period() {
        for degrees in [0.0, 90.0] {
            let spec = SynthSpec {
                width: 128,
                height: 128,
                region: rect(128, 128),
                period: 8.0,
                orientation: OrientationField::Constant { degrees },
                minutiae: Vec::new(),
                noise: NoiseSpec::default(),
                seed: 1,
            };
            let out = generate(&spec).unwrap();
            for y0 in [8, 48, 88] {
                for x0 in [8, 48, 88] {
                    let p = measured_period(&out.image, x0, y0);
                    assert!(
                        (p - 8.0).abs() <= 0.5,
                        "patch at ({x0}, {y0}), wave {degrees} deg: period {p}"
                    );
                }
            }
        }
    }

    #[test]
    fn linearly_varying_orientation_still_renders_ridges() {
        let spec = SynthSpec {
            width: 128,
            height: 128,
            region: rect(128, 128),
            period: 8.0,
            orientation: OrientationField::Linear {
                degrees: 0.0,
                dx: 0.2,
                dy: 0.0,
            },
            minutiae: Vec::new(),
            noise: NoiseSpec::default(),
            seed: 1,
        };
        let out = generate(&spec).unwrap();
        // local contrast should still swing across the full sinusoid range
        let patch = patch_at(&out.image, 48, 48, 32);
        let lo = patch.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = patch.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo < 60.0 && hi > 195.0, "contrast range [{lo}, {hi}]");
    }

    #[test]
    fn region_mask_matches_rendered_support() {
        let spec = SynthSpec {
            width: 96,
            height: 96,
            region: rect(48, 96),
            period: 8.0,
            orientation: OrientationField::Constant { degrees: 0.0 },
            minutiae: Vec::new(),
            noise: NoiseSpec::default(),
            seed: 3,
        };
        let out = generate(&spec).unwrap();
        for y in 0..96 {
            for x in 0..96 {
                if !out.mask.get(x, y) {
                    assert_eq!(out.image.get(x, y), BACKGROUND as u8, "pixel ({x}, {y})");
                }
            }
        }
        // interior patches inside the masked half keep the planted period
        let p = measured_period(&out.image, 4, 32);
        assert!((p - 8.0).abs() <= 0.5, "period {p}");
    }

    #[test]
    fn empty_region_yields_noise_only() {
        let spec = SynthSpec {
            width: 96,
            height: 96,
            region: Vec::new(),
            period: 8.0,
            orientation: OrientationField::Constant { degrees: 0.0 },
            minutiae: Vec::new(),
            noise: NoiseSpec {
                lines: 4,
                glyphs: 2,
                speckle: 0.01,
                blur_sigma: 0.8,
                overlap: false,
            },
            seed: 5,
        };
        let out = generate(&spec).unwrap();
        assert_eq!(out.mask.count_true(), 0);
        assert!(out.minutiae.is_empty());
        let dark = out.image.pixels().iter().filter(|&&v| v < 120).count();
        assert!(dark > 20, "noise should leave dark marks, found {dark}");
    }

    #[test]
    fn same_seed_reproduces_identical_bytes() {
        let spec = SynthSpec {
            width: 96,
            height: 64,
            region: rect(48, 64),
            period: 9.0,
            orientation: OrientationField::Linear {
                degrees: 30.0,
                dx: 0.1,
                dy: -0.05,
            },
            minutiae: vec![SpecMinutia {
                x: 20.0,
                y: 30.0,
                orientation: 45.0,
                kind: "E".into(),
            }],
            noise: NoiseSpec {
                lines: 3,
                glyphs: 2,
                speckle: 0.02,
                blur_sigma: 1.0,
                overlap: false,
            },
            seed: 11,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(encode_pgm(&a.image), encode_pgm(&b.image));
        assert_eq!(a.minutiae, b.minutiae);
        for y in 0..64 {
            for x in 0..96 {
                assert_eq!(a.mask.get(x, y), b.mask.get(x, y));
            }
        }
        assert_eq!(spec_to_text(&a.spec), spec_to_text(&b.spec));
    }

    #[test]
    fn spec_round_trips_through_config_text() {
        let spec = SynthSpec {
            width: 128,
            height: 96,
            region: rect(64, 96),
            period: 7.5,
            orientation: OrientationField::Linear {
                degrees: 15.0,
                dx: 0.05,
                dy: 0.0,
            },
            minutiae: vec![SpecMinutia {
                x: 10.0,
                y: 20.0,
                orientation: 90.0,
                kind: "B".into(),
            }],
            noise: NoiseSpec {
                lines: 2,
                glyphs: 1,
                speckle: 0.01,
                blur_sigma: 1.5,
                overlap: true,
            },
            seed: 42,
        };
        let text = spec_to_text(&spec);
        let parsed = parse_spec(&text).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn spec_text_accepts_defaults_for_missing_fields() {
        let spec = parse_spec("width = 64\nheight = 64\n").unwrap();
        assert!(spec.region.is_empty());
        assert_eq!(spec.period, 8.0);
        assert_eq!(spec.noise, NoiseSpec::default());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = SynthSpec {
            width: 64,
            height: 64,
            region: rect(64, 64),
            period: 4.0,
            orientation: OrientationField::Constant { degrees: 0.0 },
            minutiae: Vec::new(),
            noise: NoiseSpec::default(),
            seed: 0,
        };
        assert!(generate(&spec).is_err(), "out-of-band period with ridges");

        spec.region = Vec::new();
        assert!(generate(&spec).is_ok(), "period is moot without a region");

        spec.region = rect(64, 64);
        spec.period = 8.0;
        spec.minutiae = vec![SpecMinutia {
            x: 500.0,
            y: 500.0,
            orientation: 0.0,
            kind: "E".into(),
        }];
        assert!(generate(&spec).is_err(), "minutia outside region");

        spec.minutiae[0] = SpecMinutia {
            x: 10.0,
            y: 10.0,
            orientation: 0.0,
            kind: "Q".into(),
        };
        assert!(generate(&spec).is_err(), "unknown minutia kind");

        spec.minutiae.clear();
        spec.noise.speckle = 1.5;
        assert!(generate(&spec).is_err(), "speckle fraction out of range");
    }

    fn centered_cloud(seed: u64, n: usize) -> MinutiaSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| Minutia {
                x: rng.gen_range(-150.0..150.0),
                y: rng.gen_range(-150.0..150.0),
                orientation: rng.gen_range(0.0..360.0),
                mtype: if rng.gen_bool(0.5) {
                    MinutiaType::Ending
                } else {
                    MinutiaType::Bifurcation
                },
            })
            .collect();
        MinutiaSet::new("base", points).unwrap()
    }

    #[test]
    fn clean_planted_pair_scores_full_fitness_at_truth() {
        let base = centered_cloud(1, 20);
        let t0 = AffineParams {
            theta: 30.0,
            s: 1.1,
            tx: 40.0,
            ty: -60.0,
        };
        let planted = plant_transformed_pair(&base, &t0, 0.0, 0.0, 0, 7).unwrap();
        assert_eq!(planted.pairs.len(), 20);
        assert_eq!(planted.latent.len(), 20);
        let score = fitness(&t0, &planted.gallery, &planted.latent, &GaConfig::default());
        assert_eq!(score, 20);
    }

    #[test]
    fn dropout_removes_an_exact_count() {
        let base = centered_cloud(2, 30);
        let t0 = AffineParams {
            theta: 10.0,
            s: 1.0,
            tx: 0.0,
            ty: 0.0,
        };
        let planted = plant_transformed_pair(&base, &t0, 0.0, 0.3, 0, 3).unwrap();
        assert_eq!(planted.pairs.len(), 21);
        assert_eq!(planted.latent.len(), 21);

        let with_clutter = plant_transformed_pair(&base, &t0, 0.0, 0.3, 4, 3).unwrap();
        assert_eq!(with_clutter.pairs.len(), 21);
        assert_eq!(with_clutter.latent.len(), 25);
    }

    #[test]
    fn planted_pairs_index_surviving_points() {
        let base = centered_cloud(3, 25);
        let t0 = AffineParams {
            theta: 300.0,
            s: 0.9,
            tx: -30.0,
            ty: 25.0,
        };
        let planted = plant_transformed_pair(&base, &t0, 2.0, 0.2, 5, 9).unwrap();
        assert_eq!(planted.pairs.len(), 20);
        for &(i, j) in &planted.pairs {
            let expect = apply_transform(&t0, &base.points()[i]);
            let got = planted.latent.points()[j];
            let d = ((expect.x - got.x).powi(2) + (expect.y - got.y).powi(2)).sqrt();
            assert!(d <= 10.0, "pair ({i}, {j}) drifted {d}");
            assert_eq!(expect.orientation, got.orientation);
            assert_eq!(expect.mtype, got.mtype);
        }
    }

    #[test]
    fn planted_pair_is_deterministic_and_validated() {
        let base = centered_cloud(4, 12);
        let t0 = AffineParams {
            theta: 45.0,
            s: 1.0,
            tx: 10.0,
            ty: 10.0,
        };
        let a = plant_transformed_pair(&base, &t0, 1.0, 0.25, 3, 5).unwrap();
        let b = plant_transformed_pair(&base, &t0, 1.0, 0.25, 3, 5).unwrap();
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.pairs, b.pairs);

        let wild = AffineParams {
            theta: 45.0,
            s: 2.0,
            tx: 10.0,
            ty: 10.0,
        };
        assert!(plant_transformed_pair(&base, &wild, 0.0, 0.0, 0, 5).is_err());
        assert!(plant_transformed_pair(&base, &t0, 9.0, 0.0, 0, 5).is_err());
        assert!(plant_transformed_pair(&base, &t0, 0.0, 1.0, 0, 5).is_err());
        let empty = MinutiaSet::new("e", Vec::new()).unwrap();
        assert!(plant_transformed_pair(&empty, &t0, 0.0, 0.0, 0, 5).is_err());
    }

    #[test]
    fn matcher_recovers_planted_pairs() {
        for seed in [31u64, 32] {
            let base = centered_cloud(seed, 30);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let t0 = AffineParams {
                theta: rng.gen_range(0.0..360.0),
                s: rng.gen_range(0.85..1.15),
                tx: rng.gen_range(-80.0..80.0),
                ty: rng.gen_range(-80.0..80.0),
            };
            let planted = plant_transformed_pair(&base, &t0, 3.0, 0.2, 10, seed).unwrap();
            let surviving = planted.pairs.len();
            let target = (surviving * 9).div_ceil(10);
            let cfg = GaConfig {
                max_generations: 600,
                stall_generations: 300,
                seed,
                ..GaConfig::default()
            };
            let result = run_ga_restarts(&planted.gallery, &planted.latent, &cfg, 6, Some(target)).unwrap();
            assert!(
                result.score >= target,
                "seed {seed}: score {} < target {target} (surviving {surviving})",
                result.score
            );
        }
    }
}
