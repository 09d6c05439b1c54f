//! Ridge-valley atom identification.
//!
//! Each learned atom is reshaped to its patch, analyzed in the frequency
//! domain for a dominant in-band tone, compared against the idealized
//! sinusoid rebuilt from that tone, and accepted as "ridge-valley" only when
//! the correlation and the measured ridge period are both plausible. Either
//! criterion alone misfires (noise atoms can correlate with some tone;
//! texture atoms can have an in-range period), so both must hold at once.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dict::{AtomLabel, Dictionary};
use crate::error::{Error, Result};

/// Square patch of real values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPatch {
    size: usize,
    values: Vec<f64>,
}

impl RealPatch {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size == 0 || values.len() != size * size {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {size}x{size} patch",
                values.len()
            )));
        }
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.size + x]
    }

    /// Bilinear sample at real coordinates; None outside the valid support.
    fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let last = (self.size - 1) as f64;
        if x < 0.0 || y < 0.0 || x > last || y > last {
            return None;
        }
        let x0 = x.floor().min(last - 1.0).max(0.0);
        let y0 = y.floor().min(last - 1.0).max(0.0);
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as usize, y0 as usize);
        let v00 = self.get(x0, y0);
        let v10 = self.get(x0 + 1, y0);
        let v01 = self.get(x0, y0 + 1);
        let v11 = self.get(x0 + 1, y0 + 1);
        Some(v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy)
    }
}

/// Dominant spectral tone of an atom patch.
///
/// `u` and `v` are signed frequency bins along x and y on the canonical
/// half-plane (v > 0, or v = 0 and u > 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPeak {
    pub u: i32,
    pub v: i32,
    pub magnitude: f64,
    pub phase: f64,
}

impl SpectralPeak {
    /// Radial frequency in bins.
    pub fn radial(&self) -> f64 {
        ((self.u * self.u + self.v * self.v) as f64).sqrt()
    }
}

/// Analysis result for one atom.
#[derive(Debug, Clone)]
pub struct AtomAnalysis {
    pub atom_index: usize,
    /// Across-ridge (wave-vector) direction, radians in [0, pi). 0 if no peak.
    pub orientation: f64,
    /// Ridge period in pixels; 0 if no spectral peak exists.
    pub period: f64,
    /// Best normalized cross-correlation against the rebuilt tone, in [-1, 1].
    pub xcorr: f64,
    pub is_ridge_valley: bool,
}

/// Thresholds for the ridge-valley decision.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AtomIdConfig {
    /// Minimum correlation between atom and rebuilt tone.
    pub xcorr_threshold: f64,
    /// Candidate ridge-period band (pixels) used for the spectral bandpass.
    pub broad_period: (f64, f64),
    /// Accepted ridge-period band (pixels) for the final decision.
    pub valid_period: (f64, f64),
}

impl Default for AtomIdConfig {
    fn default() -> Self {
        Self {
            xcorr_threshold: 0.6,
            broad_period: (3.0, 20.0),
            valid_period: (5.3, 12.8),
        }
    }
}

impl AtomIdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xcorr_threshold > 0.0 && self.xcorr_threshold < 1.0) {
            return Err(Error::Config("xcorr threshold must lie in (0, 1)".into()));
        }
        if !(0.0 < self.broad_period.0 && self.broad_period.0 < self.broad_period.1) {
            return Err(Error::Config("broad period range must be positive and ordered".into()));
        }
        if self.valid_period.0 < self.broad_period.0 || self.valid_period.1 > self.broad_period.1 {
            return Err(Error::Config("valid period range must lie within the broad range".into()));
        }
        Ok(())
    }
}

/// Reshape dictionary column `k` into its square patch (row-major raster).
pub fn atom_to_patch(dict: &Dictionary, k: usize) -> Result<RealPatch> {
    if k >= dict.atom_count() {
        return Err(Error::InvalidArgument(format!(
            "atom index {k} out of range for {} atoms",
            dict.atom_count()
        )));
    }
    let dim = dict.atom_dim();
    let w = (dim as f64).sqrt().round() as usize;
    if w * w != dim {
        return Err(Error::InvalidArgument(format!(
            "atom dimension {dim} is not a perfect square"
        )));
    }
    RealPatch::new(w, dict.atom(k).to_vec())
}

/// Forward 2-D DFT, row-major: result[v * w + u] is the bin with x-frequency
/// u and y-frequency v.
fn dft2(patch: &RealPatch) -> Vec<Complex<f64>> {
    let w = patch.size();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(w);
    let mut data: Vec<Complex<f64>> = patch.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in data.chunks_exact_mut(w) {
        fft.process(row);
    }
    let mut cols = vec![Complex::new(0.0, 0.0); w * w];
    for y in 0..w {
        for x in 0..w {
            cols[x * w + y] = data[y * w + x];
        }
    }
    for col in cols.chunks_exact_mut(w) {
        fft.process(col);
    }
    for y in 0..w {
        for x in 0..w {
            data[y * w + x] = cols[x * w + y];
        }
    }
    data
}

fn signed_bin(idx: usize, w: usize) -> i32 {
    if idx <= w / 2 {
        idx as i32
    } else {
        idx as i32 - w as i32
    }
}

/// Find the strongest spectral pair inside the period bandpass.
///
/// Only bins whose radial frequency r satisfies w/period_max <= r <=
/// w/period_min are considered, on the canonical half-plane so each conjugate
/// pair is seen once. Ties break toward the lower radial frequency, then the
/// lower angle. Returns None when nothing in-band rises above 1e-9.
pub fn dominant_frequency(patch: &RealPatch, broad_period: (f64, f64)) -> Option<SpectralPeak> {
    let w = patch.size();
    let spectrum = dft2(patch);
    let r_min = w as f64 / broad_period.1;
    let r_max = w as f64 / broad_period.0;

    let mut best: Option<(f64, f64, f64, SpectralPeak)> = None; // (mag, r, angle, peak)
    for vi in 0..w {
        for ui in 0..w {
            let u = signed_bin(ui, w);
            let v = signed_bin(vi, w);
            if !(v > 0 || (v == 0 && u > 0)) {
                continue;
            }
            let r = ((u * u + v * v) as f64).sqrt();
            if r < r_min || r > r_max {
                continue;
            }
            let c = spectrum[vi * w + ui];
            let mag = c.norm();
            if mag < 1e-9 {
                continue;
            }
            let angle = (v as f64).atan2(u as f64);
            let better = match &best {
                None => true,
                Some((bmag, br, bangle, _)) => {
                    mag > *bmag
                        || (mag == *bmag && (r < *br || (r == *br && angle < *bangle)))
                }
            };
            if better {
                best = Some((
                    mag,
                    r,
                    angle,
                    SpectralPeak {
                        u,
                        v,
                        magnitude: mag,
                        phase: c.arg(),
                    },
                ));
            }
        }
    }
    best.map(|(_, _, _, p)| p)
}

/// Across-ridge direction of the wave vector, normalized to [0, pi).
pub fn atom_orientation(peak_u: i32, peak_v: i32) -> Result<f64> {
    if peak_u == 0 && peak_v == 0 {
        return Err(Error::InvalidArgument("zero frequency has no orientation".into()));
    }
    let mut o = (peak_v as f64).atan2(peak_u as f64);
    if o < 0.0 {
        o += std::f64::consts::PI;
    }
    if o >= std::f64::consts::PI {
        o -= std::f64::consts::PI;
    }
    Ok(o)
}

/// Rebuild the pure tone carried by the detected conjugate pair.
///
/// Equivalent to zeroing every other spectral bin and inverting the DFT; the
/// pair collapses analytically to a single real cosine.
pub fn reconstruct_pattern(peak: &SpectralPeak, w: usize) -> RealPatch {
    let scale = 2.0 * peak.magnitude / (w * w) as f64;
    let step = 2.0 * std::f64::consts::PI / w as f64;
    let mut values = Vec::with_capacity(w * w);
    for y in 0..w {
        for x in 0..w {
            let arg = step * (peak.u as f64 * x as f64 + peak.v as f64 * y as f64) + peak.phase;
            values.push(scale * arg.cos());
        }
    }
    RealPatch { size: w, values }
}

/// Normalized cross-correlation of `p` against `u`, maximized over integer
/// offsets in [-w/2, w/2]^2.
///
/// Per offset, the sums run over the overlap region; `p` is centered on its
/// overlap mean while `u` is centered on its global mean. A zero-variance
/// overlap contributes 0.
pub fn xcorr_peak(p: &RealPatch, u: &RealPatch) -> Result<f64> {
    if p.size() != u.size() {
        return Err(Error::InvalidArgument(format!(
            "patch sizes {} and {} differ",
            p.size(),
            u.size()
        )));
    }
    let w = p.size() as i64;
    let u_mean: f64 = u.values().iter().sum::<f64>() / (w * w) as f64;
    let half = w / 2;

    let mut best = f64::NEG_INFINITY;
    for b in -half..=half {
        let y0 = 0.max(b);
        let y1 = w.min(w + b);
        for a in -half..=half {
            let x0 = 0.max(a);
            let x1 = w.min(w + a);

            let mut p_sum = 0.0;
            let mut n = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    p_sum += p.get(x as usize, y as usize);
                    n += 1.0;
                }
            }
            if n == 0.0 {
                continue;
            }
            let p_mean = p_sum / n;

            let mut num = 0.0;
            let mut p_var = 0.0;
            let mut u_var = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let alpha = p.get(x as usize, y as usize) - p_mean;
                    let beta = u.get((x - a) as usize, (y - b) as usize) - u_mean;
                    num += alpha * beta;
                    p_var += alpha * alpha;
                    u_var += beta * beta;
                }
            }
            let den = (p_var * u_var).sqrt();
            let val = if den < 1e-12 { 0.0 } else { num / den };
            if val > best {
                best = val;
            }
        }
    }
    Ok(best)
}

/// Ridge period from peak spacing of the tone sampled along its across-ridge
/// direction through the patch center.
///
/// Unit-spaced bilinear samples on t in [-w/2, w/2]; peaks are strict 3-point
/// local maxima. With fewer than two peaks the spectral estimate `fallback`
/// (w / radial bin) is returned instead.
pub fn ridge_period(u: &RealPatch, orientation: f64, fallback: f64) -> f64 {
    let w = u.size();
    let c = (w as f64 - 1.0) / 2.0;
    let (dx, dy) = (orientation.cos(), orientation.sin());
    let half = (w / 2) as i64;

    let mut wave: Vec<(f64, f64)> = Vec::new(); // (t, value)
    for t in -half..=half {
        let t = t as f64;
        if let Some(v) = u.sample(c + t * dx, c + t * dy) {
            wave.push((t, v));
        }
    }

    let mut peaks: Vec<f64> = Vec::new();
    for i in 1..wave.len().saturating_sub(1) {
        if wave[i].1 > wave[i - 1].1 && wave[i].1 > wave[i + 1].1 {
            peaks.push(wave[i].0);
        }
    }
    if peaks.len() < 2 {
        return fallback;
    }
    let gaps: f64 = peaks.windows(2).map(|p| p[1] - p[0]).sum();
    gaps / (peaks.len() - 1) as f64
}

/// Run the full analysis on every atom and label each one.
pub fn classify_atoms(dict: &Dictionary, cfg: &AtomIdConfig) -> Result<Vec<AtomAnalysis>> {
    cfg.validate()?;
    let dim = dict.atom_dim();
    let w = (dim as f64).sqrt().round() as usize;
    if w * w != dim {
        return Err(Error::InvalidArgument(format!(
            "atom dimension {dim} is not a perfect square"
        )));
    }

    (0..dict.atom_count())
        .into_par_iter()
        .map(|k| {
            let patch = atom_to_patch(dict, k)?;
            let Some(peak) = dominant_frequency(&patch, cfg.broad_period) else {
                return Ok(AtomAnalysis {
                    atom_index: k,
                    orientation: 0.0,
                    period: 0.0,
                    xcorr: 0.0,
                    is_ridge_valley: false,
                });
            };
            let orientation = atom_orientation(peak.u, peak.v)?;
            let pattern = reconstruct_pattern(&peak, w);
            let xcorr = xcorr_peak(&patch, &pattern)?.clamp(-1.0, 1.0);
            let period = ridge_period(&pattern, orientation, w as f64 / peak.radial());
            let is_ridge_valley =
                xcorr >= cfg.xcorr_threshold && period >= cfg.valid_period.0 && period <= cfg.valid_period.1;
            Ok(AtomAnalysis {
                atom_index: k,
                orientation,
                period,
                xcorr,
                is_ridge_valley,
            })
        })
        .collect()
}

/// Labels in atom order, for attaching to the dictionary.
pub fn labels_from_analyses(analyses: &[AtomAnalysis]) -> Vec<AtomLabel> {
    analyses
        .iter()
        .map(|a| {
            if a.is_ridge_valley {
                AtomLabel::RidgeValley
            } else {
                AtomLabel::NonRidgeValley
            }
        })
        .collect()
}

/// Tab-separated diagnostic dump, one line per atom.
pub fn diagnostic_tsv(analyses: &[AtomAnalysis]) -> String {
    let mut out = String::from("# atom\txcorr\tperiod\torientation\tlabel\n");
    for a in analyses {
        let label = if a.is_ridge_valley { "ridge-valley" } else { "other" };
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            a.atom_index, a.xcorr, a.period, a.orientation, label
        ));
    }
    out
}
