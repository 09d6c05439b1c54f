//! Segmentation-quality metrics computed through minutiae.
//!
//! Segmentation is judged by what it does to minutiae extraction: how many
//! ground-truth minutiae survive inside the ROI (preservation) and how many
//! spurious detections the ROI admits relative to the whole image
//! (false acceptance), summarized by a two-point area-under-curve value.

use std::fmt::Write as _;

use crate::minutiae::MinutiaSet;

/// Tolerances deciding when two independently produced minutiae are "the
/// same point". Types are ignored: ground truth may not carry them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalTolerance {
    pub delta_d: f64,
    pub delta_o: f64,
}

impl Default for EvalTolerance {
    fn default() -> Self {
        Self {
            delta_d: 15.0,
            delta_o: 20.0,
        }
    }
}

fn circular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

/// Size of a greedy one-to-one correspondence between two sets: candidate
/// pairs within both tolerances are consumed by ascending distance (ties:
/// ascending angle difference, then index). Symmetric in the count.
pub fn set_intersection(a: &MinutiaSet, b: &MinutiaSet, tol: &EvalTolerance) -> usize {
    let mut candidates: Vec<(f64, f64, usize, usize)> = Vec::new();
    for (i, p) in a.points().iter().enumerate() {
        for (j, q) in b.points().iter().enumerate() {
            let ed2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
            if ed2 > tol.delta_d * tol.delta_d {
                continue;
            }
            let eo = circular_diff(p.orientation, q.orientation);
            if eo > tol.delta_o {
                continue;
            }
            candidates.push((ed2, eo, i, j));
        }
    }
    candidates.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.cmp(&y.2))
            .then(x.3.cmp(&y.3))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut count = 0;
    for (_, _, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            count += 1;
        }
    }
    count
}

/// Inputs for one image: ground truth, whole-image extraction, and
/// ROI-restricted extraction.
#[derive(Debug, Clone)]
pub struct MinutiaeEvalInput {
    pub ground_truth: MinutiaSet,
    pub whole_image: MinutiaSet,
    pub roi: MinutiaSet,
    pub tol: EvalTolerance,
}

/// Per-image metrics; a metric is `None` when its denominator was zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SegEvalResult {
    pub gmpr: Option<f64>,
    pub fmar: Option<f64>,
    pub auc: Option<f64>,
    /// Notes about clamped out-of-range ratios.
    pub warnings: Vec<String>,
}

/// Preservation / acceptance summary: (gmpr + 1 - fmar) / 2, the area under
/// the two-point operating curve.
pub fn auc_two_point(gmpr: f64, fmar: f64) -> f64 {
    (gmpr + 1.0 - fmar) / 2.0
}

fn clamp_ratio(name: &str, num: f64, den: f64, warnings: &mut Vec<String>) -> f64 {
    let v = num / den;
    if v > 1.0 {
        warnings.push(format!("{name} {v:.4} exceeds 1 ({num}/{den}); clamped"));
        1.0
    } else {
        v
    }
}

/// Genuine-preservation and false-acceptance rates of ROI-restricted
/// extraction, relative to whole-image extraction, measured against ground
/// truth. A zero denominator leaves the metric undefined.
pub fn gmpr_fmar(input: &MinutiaeEvalInput) -> SegEvalResult {
    let gt_whole = set_intersection(&input.ground_truth, &input.whole_image, &input.tol);
    let gt_roi = set_intersection(&input.ground_truth, &input.roi, &input.tol);
    let mut warnings = Vec::new();

    let gmpr = if gt_whole == 0 {
        None
    } else {
        Some(clamp_ratio("gmpr", gt_roi as f64, gt_whole as f64, &mut warnings))
    };

    let false_roi = input.roi.len() - gt_roi;
    let false_whole = input.whole_image.len() - gt_whole;
    let fmar = if false_whole == 0 {
        None
    } else {
        Some(clamp_ratio("fmar", false_roi as f64, false_whole as f64, &mut warnings))
    };

    let auc = match (gmpr, fmar) {
        (Some(g), Some(f)) => Some(auc_two_point(g, f)),
        _ => None,
    };
    SegEvalResult {
        gmpr,
        fmar,
        auc,
        warnings,
    }
}

/// How undefined per-image metrics enter batch means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UndefinedMode {
    /// Skip undefined values; the mean is over defined images only.
    Exclude,
    /// Count undefined values as zero.
    ZeroFill,
}

/// Batch means per metric, with the number of undefined values encountered.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub images: usize,
    pub mean_gmpr: Option<f64>,
    pub mean_fmar: Option<f64>,
    pub mean_auc: Option<f64>,
    pub undefined_gmpr: usize,
    pub undefined_fmar: usize,
    pub undefined_auc: usize,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>, mode: UndefinedMode, undefined: &mut usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => {
                *undefined += 1;
                if mode == UndefinedMode::ZeroFill {
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Arithmetic means across images, per metric.
pub fn batch_summary(results: &[SegEvalResult], mode: UndefinedMode) -> BatchSummary {
    let mut summary = BatchSummary {
        images: results.len(),
        mean_gmpr: None,
        mean_fmar: None,
        mean_auc: None,
        undefined_gmpr: 0,
        undefined_fmar: 0,
        undefined_auc: 0,
    };
    summary.mean_gmpr = mean_of(results.iter().map(|r| r.gmpr), mode, &mut summary.undefined_gmpr);
    summary.mean_fmar = mean_of(results.iter().map(|r| r.fmar), mode, &mut summary.undefined_fmar);
    summary.mean_auc = mean_of(results.iter().map(|r| r.auc), mode, &mut summary.undefined_auc);
    summary
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => String::new(),
    }
}

/// CSV with one row per image and a trailing mean row.
pub fn batch_csv(rows: &[(String, SegEvalResult)], mode: UndefinedMode) -> String {
    let mut out = String::from("id,gmpr,fmar,auc,gmpr_defined,fmar_defined,auc_defined\n");
    for (id, r) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            id,
            cell(r.gmpr),
            cell(r.fmar),
            cell(r.auc),
            r.gmpr.is_some(),
            r.fmar.is_some(),
            r.auc.is_some()
        )
        .unwrap();
    }
    let results: Vec<SegEvalResult> = rows.iter().map(|(_, r)| r.clone()).collect();
    let s = batch_summary(&results, mode);
    // the trailing columns stay parallel to the header: defined-value counts
    writeln!(
        out,
        "mean,{},{},{},{},{},{}",
        cell(s.mean_gmpr),
        cell(s.mean_fmar),
        cell(s.mean_auc),
        s.images - s.undefined_gmpr,
        s.images - s.undefined_fmar,
        s.images - s.undefined_auc
    )
    .unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minutiae::{Minutia, MinutiaType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(x: f64, y: f64, o: f64, t: MinutiaType) -> Minutia {
        Minutia {
            x,
            y,
            orientation: o,
            mtype: t,
        }
    }

    fn set(id: &str, pts: Vec<Minutia>) -> MinutiaSet {
        MinutiaSet::new(id, pts).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> MinutiaSet {
        let pts = (0..n)
            .map(|_| {
                m(
                    rng.gen_range(0.0..400.0),
                    rng.gen_range(0.0..400.0),
                    rng.gen_range(0.0..360.0),
                    MinutiaType::Ending,
                )
            })
            .collect();
        set("r", pts)
    }

    #[test]
    fn identical_sets_intersect_fully() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_set(&mut rng, 9);
        assert_eq!(set_intersection(&a, &a, &EvalTolerance::default()), 9);
    }

    #[test]
    fn far_sets_do_not_intersect() {
        let a = set("a", vec![m(0.0, 0.0, 0.0, MinutiaType::Ending)]);
        let b = set("b", vec![m(500.0, 500.0, 0.0, MinutiaType::Ending)]);
        assert_eq!(set_intersection(&a, &b, &EvalTolerance::default()), 0);
    }

    #[test]
    fn intersection_ignores_types() {
        let a = set("a", vec![m(10.0, 10.0, 90.0, MinutiaType::Ending)]);
        let b = set("b", vec![m(11.0, 10.0, 95.0, MinutiaType::Bifurcation)]);
        assert_eq!(set_intersection(&a, &b, &EvalTolerance::default()), 1);
    }

    /// Exhaustive maximum one-to-one matching over tolerance-feasible pairs.
    fn max_matching(a: &MinutiaSet, b: &MinutiaSet, tol: &EvalTolerance) -> usize {
        let mut edges = Vec::new();
        for (i, p) in a.points().iter().enumerate() {
            for (j, q) in b.points().iter().enumerate() {
                let ed = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
                if ed <= tol.delta_d && circular_diff(p.orientation, q.orientation) <= tol.delta_o {
                    edges.push((i, j));
                }
            }
        }
        fn recurse(edges: &[(usize, usize)], i: usize, n: usize, used: &mut Vec<bool>) -> usize {
            if i == n {
                return 0;
            }
            let mut best = recurse(edges, i + 1, n, used);
            for &(ei, ej) in edges {
                if ei == i && !used[ej] {
                    used[ej] = true;
                    best = best.max(1 + recurse(edges, i + 1, n, used));
                    used[ej] = false;
                }
            }
            best
        }
        let mut used = vec![false; b.len()];
        recurse(&edges, 0, a.len(), &mut used)
    }

    #[test]
    fn jittered_sets_match_completely_and_optimally() {
        let tol = EvalTolerance::default();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, 5);
            let jittered: Vec<Minutia> = a
                .points()
                .iter()
                .map(|p| {
                    m(
                        p.x + rng.gen_range(-tol.delta_d / 2.0..tol.delta_d / 2.0) / 2f64.sqrt(),
                        p.y + rng.gen_range(-tol.delta_d / 2.0..tol.delta_d / 2.0) / 2f64.sqrt(),
                        (p.orientation + rng.gen_range(-5.0..5.0)).rem_euclid(360.0),
                        p.mtype,
                    )
                })
                .collect();
            let b = set("b", jittered);
            let got = set_intersection(&a, &b, &tol);
            assert_eq!(got, 5, "seed {seed}");
            assert_eq!(got, max_matching(&a, &b, &tol), "seed {seed}");
        }
    }

    #[test]
    fn intersection_count_is_symmetric() {
        let tol = EvalTolerance::default();
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (na, nb) = (rng.gen_range(0..8), rng.gen_range(0..8));
            let a = random_set(&mut rng, na);
            let b = random_set(&mut rng, nb);
            assert_eq!(
                set_intersection(&a, &b, &tol),
                set_intersection(&b, &a, &tol),
                "seed {seed}"
            );
        }
    }

    fn eval(gt: &MinutiaSet, whole: &MinutiaSet, roi: &MinutiaSet) -> SegEvalResult {
        gmpr_fmar(&MinutiaeEvalInput {
            ground_truth: gt.clone(),
            whole_image: whole.clone(),
            roi: roi.clone(),
            tol: EvalTolerance::default(),
        })
    }

    #[test]
    fn roi_equal_to_whole_image_scores_half_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = random_set(&mut rng, 6);
        // whole-image extraction: the truth plus two spurious detections
        let mut pts = gt.points().to_vec();
        pts.push(m(390.0, 5.0, 10.0, MinutiaType::Ending));
        pts.push(m(5.0, 390.0, 200.0, MinutiaType::Ending));
        let whole = set("w", pts);
        let r = eval(&gt, &whole, &whole);
        assert_eq!(r.gmpr, Some(1.0));
        assert_eq!(r.fmar, Some(1.0));
        assert_eq!(r.auc, Some(0.5));
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn empty_roi_set_scores_zero_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = random_set(&mut rng, 6);
        let mut pts = gt.points().to_vec();
        pts.push(m(390.0, 5.0, 10.0, MinutiaType::Ending));
        let whole = set("w", pts);
        let empty = MinutiaSet::new("roi", Vec::new()).unwrap();
        let r = eval(&gt, &whole, &empty);
        assert_eq!(r.gmpr, Some(0.0));
        assert_eq!(r.fmar, Some(0.0));
        assert_eq!(r.auc, Some(0.5));
    }

    #[test]
    fn zero_denominators_leave_metrics_undefined() {
        let gt = set("gt", vec![m(10.0, 10.0, 0.0, MinutiaType::Ending)]);
        // whole-image extraction found nothing: both denominators are zero
        let whole = MinutiaSet::new("w", Vec::new()).unwrap();
        let roi = MinutiaSet::new("r", Vec::new()).unwrap();
        let r = eval(&gt, &whole, &roi);
        assert_eq!(r.gmpr, None);
        assert_eq!(r.fmar, None);
        assert_eq!(r.auc, None);

        // whole-image extraction is exactly the truth: no false detections,
        // so the false-acceptance denominator is zero while gmpr is defined
        let r = eval(&gt, &gt, &gt);
        assert_eq!(r.gmpr, Some(1.0));
        assert_eq!(r.fmar, None);
        assert_eq!(r.auc, None);
    }

    #[test]
    fn ratios_above_one_are_clamped_with_warning() {
        // the ROI run recovers a truth minutia the whole-image run missed
        let gt = set(
            "gt",
            vec![m(10.0, 10.0, 0.0, MinutiaType::Ending), m(100.0, 100.0, 90.0, MinutiaType::Ending)],
        );
        let whole = set(
            "w",
            vec![m(10.0, 10.0, 0.0, MinutiaType::Ending), m(300.0, 300.0, 45.0, MinutiaType::Ending)],
        );
        let roi = gt.clone();
        let r = eval(&gt, &whole, &roi);
        assert_eq!(r.gmpr, Some(1.0));
        assert_eq!(r.warnings.len(), 1, "warnings: {:?}", r.warnings);
        assert!(r.warnings[0].contains("gmpr"));
    }

    #[test]
    fn auc_reproduces_reference_points() {
        assert_eq!(auc_two_point(1.0, 1.0), 0.5);
        assert!((auc_two_point(1.0, 0.3167) - 0.8416).abs() <= 1e-4);
        assert!((auc_two_point(0.25, 0.0667) - 0.5916).abs() <= 1e-4);
        assert_eq!(auc_two_point(1.0, 0.0), 1.0);
    }

    #[test]
    fn auc_invariant_holds_for_defined_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (ng, nw, nr) = (rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(0..8));
            let gt = random_set(&mut rng, ng);
            let whole = random_set(&mut rng, nw);
            let roi = random_set(&mut rng, nr);
            let r = eval(&gt, &whole, &roi);
            if let (Some(g), Some(f), Some(a)) = (r.gmpr, r.fmar, r.auc) {
                assert_eq!(a, (g + 1.0 - f) / 2.0);
                assert!((0.0..=1.0).contains(&g));
                assert!((0.0..=1.0).contains(&f));
            }
        }
    }

    fn result(g: Option<f64>, f: Option<f64>) -> SegEvalResult {
        SegEvalResult {
            gmpr: g,
            fmar: f,
            auc: match (g, f) {
                (Some(g), Some(f)) => Some(auc_two_point(g, f)),
                _ => None,
            },
            warnings: Vec::new(),
        }
    }

    #[test]
    fn batch_means_average_defined_values() {
        let single = batch_summary(&[result(Some(0.8), Some(0.2))], UndefinedMode::Exclude);
        assert_eq!(single.mean_gmpr, Some(0.8));
        assert_eq!(single.mean_fmar, Some(0.2));
        assert_eq!(single.mean_auc, Some(0.8));

        let two = batch_summary(
            &[result(Some(0.4), Some(0.2)), result(Some(1.0), Some(0.4))],
            UndefinedMode::Exclude,
        );
        assert_eq!(two.mean_auc, Some(0.7));
    }

    #[test]
    fn batch_modes_treat_undefined_differently() {
        let results = [result(Some(1.0), Some(0.5)), result(None, Some(0.5))];
        let excl = batch_summary(&results, UndefinedMode::Exclude);
        assert_eq!(excl.mean_gmpr, Some(1.0));
        assert_eq!(excl.undefined_gmpr, 1);
        let fill = batch_summary(&results, UndefinedMode::ZeroFill);
        assert_eq!(fill.mean_gmpr, Some(0.5));
        assert_eq!(fill.undefined_gmpr, 1);

        let all_undef = batch_summary(&[result(None, None)], UndefinedMode::Exclude);
        assert_eq!(all_undef.mean_gmpr, None);
    }

    #[test]
    fn csv_has_per_image_rows_and_mean() {
        let rows = vec![
            ("img1".to_string(), result(Some(1.0), Some(0.5))),
            ("img2".to_string(), result(None, Some(0.5))),
        ];
        let csv = batch_csv(&rows, UndefinedMode::Exclude);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "id,gmpr,fmar,auc,gmpr_defined,fmar_defined,auc_defined");
        assert_eq!(lines[1], "img1,1.0000,0.5000,0.7500,true,true,true");
        assert_eq!(lines[2], "img2,,0.5000,,false,true,false");
        assert_eq!(lines[3], "mean,1.0000,0.5000,0.7500,1,2,1");
    }
}
