//! Global minutiae alignment by genetic search over an affine transform.
//!
//! A gallery set C is aligned to a latent set L by a four-gene chromosome
//! (rotation, scale, translation). Fitness of a candidate transform is the
//! number of one-to-one minutia pairs it produces under distance, angle, and
//! type criteria; the best transform's pair count is the match score.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::minutiae::{Minutia, MinutiaSet, MinutiaType};

/// Affine alignment parameters: rotate by `theta` degrees about the origin,
/// scale by `s`, then translate by `(tx, ty)` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub theta: f64,
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

/// Inclusive parameter range one gene is sampled from (and confined to).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

/// Genetic-search settings. Defaults: population 400, crossover 0.2,
/// mutation 0.05, pairing tolerances 15 px / 20 degrees, rotation
/// [0, 359] degrees, scale [0.8, 1.2], translation [-400, 400] px.
#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub max_generations: usize,
    pub stall_generations: usize,
    /// Pairing distance tolerance, pixels.
    pub delta_d: f64,
    /// Pairing orientation tolerance, degrees.
    pub delta_o: f64,
    pub seed: u64,
    pub theta_range: ParamRange,
    pub scale_range: ParamRange,
    pub tx_range: ParamRange,
    pub ty_range: ParamRange,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 400,
            crossover_prob: 0.2,
            mutation_prob: 0.05,
            max_generations: 200,
            stall_generations: 30,
            delta_d: 15.0,
            delta_o: 20.0,
            seed: 0,
            theta_range: ParamRange::new(0.0, 359.0),
            scale_range: ParamRange::new(0.8, 1.2),
            tx_range: ParamRange::new(-400.0, 400.0),
            ty_range: ParamRange::new(-400.0, 400.0),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::InvalidArgument("population must be at least 2".into()));
        }
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.delta_d <= 0.0 || self.delta_o <= 0.0 {
            return Err(Error::InvalidArgument("pairing tolerances must be positive".into()));
        }
        if self.max_generations == 0 || self.stall_generations == 0 {
            return Err(Error::InvalidArgument("generation limits must be positive".into()));
        }
        for (name, r) in [
            ("theta", self.theta_range),
            ("scale", self.scale_range),
            ("tx", self.tx_range),
            ("ty", self.ty_range),
        ] {
            if !(r.min <= r.max) || !r.min.is_finite() || !r.max.is_finite() {
                return Err(Error::InvalidArgument(format!("bad {name} range [{}, {}]", r.min, r.max)));
            }
        }
        Ok(())
    }

    fn ranges(&self) -> [ParamRange; 4] {
        [self.theta_range, self.scale_range, self.tx_range, self.ty_range]
    }

    fn in_ranges(&self, t: &AffineParams) -> bool {
        self.theta_range.contains(t.theta)
            && self.scale_range.contains(t.s)
            && self.tx_range.contains(t.tx)
            && self.ty_range.contains(t.ty)
    }
}

/// Outcome of one alignment search.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Number of paired minutiae under the best transform.
    pub score: usize,
    pub transform: AffineParams,
    /// (index in C, index in L) pairs, one-to-one on both sides.
    pub pairs: Vec<(usize, usize)>,
    /// Best fitness after each generation; non-decreasing.
    pub fitness_history: Vec<usize>,
}

/// Transform one minutia: coordinates rotate/scale/translate, the direction
/// gains the rotation angle (mod 360), the type is unchanged.
pub fn apply_transform(t: &AffineParams, m: &Minutia) -> Minutia {
    let rad = t.theta.to_radians();
    let (sin, cos) = rad.sin_cos();
    Minutia {
        x: t.s * (m.x * cos - m.y * sin) + t.tx,
        y: t.s * (m.x * sin + m.y * cos) + t.ty,
        orientation: (m.orientation + t.theta).rem_euclid(360.0),
        mtype: m.mtype,
    }
}

fn circular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

fn types_compatible(a: MinutiaType, b: MinutiaType) -> bool {
    a == b || a == MinutiaType::Unknown || b == MinutiaType::Unknown
}

/// Pair transformed gallery minutiae with latent minutiae.
///
/// A candidate pair must be within `delta_d` pixels, within `delta_o`
/// degrees of direction (circularly), and type-compatible (unknown matches
/// anything). Candidates are consumed greedily by ascending distance
/// (ties: ascending angle difference, then index), one-to-one on both sides.
pub fn pair_and_count(
    transformed: &[Minutia],
    latent: &[Minutia],
    delta_d: f64,
    delta_o: f64,
) -> (usize, Vec<(usize, usize)>) {
    struct Candidate {
        /// Squared distance; sorts identically to the distance itself.
        ed2: f64,
        eo: f64,
        ci: usize,
        lj: usize,
    }
    let dd2 = delta_d * delta_d;
    let mut candidates = Vec::new();
    for (ci, c) in transformed.iter().enumerate() {
        for (lj, l) in latent.iter().enumerate() {
            let ed2 = (c.x - l.x).powi(2) + (c.y - l.y).powi(2);
            if ed2 > dd2 || !types_compatible(c.mtype, l.mtype) {
                continue;
            }
            let eo = circular_diff(c.orientation, l.orientation);
            if eo > delta_o {
                continue;
            }
            candidates.push(Candidate { ed2, eo, ci, lj });
        }
    }
    candidates.sort_by(|a, b| {
        a.ed2
            .total_cmp(&b.ed2)
            .then(a.eo.total_cmp(&b.eo))
            .then(a.ci.cmp(&b.ci))
            .then(a.lj.cmp(&b.lj))
    });
    let mut used_c = vec![false; transformed.len()];
    let mut used_l = vec![false; latent.len()];
    let mut pairs = Vec::new();
    for cand in candidates {
        if used_c[cand.ci] || used_l[cand.lj] {
            continue;
        }
        used_c[cand.ci] = true;
        used_l[cand.lj] = true;
        pairs.push((cand.ci, cand.lj));
    }
    (pairs.len(), pairs)
}

/// Paired-minutiae count of `gallery` aligned to `latent` by `t`.
pub fn fitness(t: &AffineParams, gallery: &MinutiaSet, latent: &MinutiaSet, cfg: &GaConfig) -> usize {
    let transformed: Vec<Minutia> = gallery.points().iter().map(|m| apply_transform(t, m)).collect();
    pair_and_count(&transformed, latent.points(), cfg.delta_d, cfg.delta_o).0
}

fn from_genes(g: [f64; 4]) -> AffineParams {
    AffineParams {
        theta: g[0],
        s: g[1],
        tx: g[2],
        ty: g[3],
    }
}

/// Cumulative roulette wheel over weights `fitness + 1` (the shift keeps a
/// uniform wheel when every fitness is zero).
struct Wheel {
    cumulative: Vec<f64>,
}

impl Wheel {
    fn new(fitnesses: &[usize]) -> Self {
        let mut cumulative = Vec::with_capacity(fitnesses.len());
        let mut total = 0.0;
        for &f in fitnesses {
            total += (f + 1) as f64;
            cumulative.push(total);
        }
        Self { cumulative }
    }

    fn spin(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("wheel is non-empty");
        let ball = rng.gen_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= ball).min(self.cumulative.len() - 1)
    }
}

/// Swap the segment between two distinct cut points chosen among the five
/// gene boundaries (before, between, and after the four genes).
fn crossover(a: &mut [f64; 4], b: &mut [f64; 4], rng: &mut impl Rng) {
    let c1 = rng.gen_range(0..5);
    let mut c2 = rng.gen_range(0..5);
    while c2 == c1 {
        c2 = rng.gen_range(0..5);
    }
    let (lo, hi) = (c1.min(c2), c1.max(c2));
    for k in lo..hi {
        std::mem::swap(&mut a[k], &mut b[k]);
    }
}

/// Estimate the transform aligning `gallery` to `latent` and the resulting
/// paired-minutiae score.
///
/// Seeded-deterministic: the population evolves by roulette selection on
/// shifted fitness, two-point crossover, uniform per-gene mutation within
/// range, and single-best elitism (earliest individual on ties), stopping at
/// the generation cap or after a fixed number of stalled generations.
pub fn run_ga(gallery: &MinutiaSet, latent: &MinutiaSet, cfg: &GaConfig) -> Result<MatchResult> {
    cfg.validate()?;
    if gallery.is_empty() || latent.is_empty() {
        return Err(Error::InvalidArgument("both minutiae sets must be non-empty".into()));
    }
    let ranges = cfg.ranges();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut population: Vec<[f64; 4]> = (0..cfg.population)
        .map(|_| {
            [
                ranges[0].sample(&mut rng),
                ranges[1].sample(&mut rng),
                ranges[2].sample(&mut rng),
                ranges[3].sample(&mut rng),
            ]
        })
        .collect();

    let evaluate = |pop: &[[f64; 4]]| -> Vec<usize> {
        pop.par_iter()
            .map(|g| fitness(&from_genes(*g), gallery, latent, cfg))
            .collect()
    };

    let mut best_genes = population[0];
    let mut best_fitness = 0usize;
    let mut have_best = false;
    let mut history = Vec::new();
    let mut stall = 0usize;

    for _generation in 0..cfg.max_generations {
        let fitnesses = evaluate(&population);
        let (gen_best_idx, &gen_best_fit) = fitnesses
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("population is non-empty");
        if !have_best || gen_best_fit > best_fitness {
            if have_best && gen_best_fit > best_fitness {
                stall = 0;
            }
            best_fitness = gen_best_fit;
            best_genes = population[gen_best_idx];
            have_best = true;
        } else {
            stall += 1;
        }
        history.push(best_fitness);
        if stall >= cfg.stall_generations {
            break;
        }

        // fresh stream per generation: parallel fitness evaluation above never
        // touches the RNG, so thread scheduling cannot perturb the sequence
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let wheel = Wheel::new(&fitnesses);
        let mut next = Vec::with_capacity(cfg.population);
        next.push(best_genes); // elite
        while next.len() < cfg.population {
            let mut a = population[wheel.spin(&mut rng)];
            let mut b = population[wheel.spin(&mut rng)];
            if rng.gen_bool(cfg.crossover_prob) {
                crossover(&mut a, &mut b, &mut rng);
            }
            for child in [&mut a, &mut b] {
                for (k, range) in ranges.iter().enumerate() {
                    if rng.gen_bool(cfg.mutation_prob) {
                        child[k] = range.sample(&mut rng);
                    }
                }
            }
            next.push(a);
            if next.len() < cfg.population {
                next.push(b);
            }
        }
        population = next;
    }

    let transform = from_genes(best_genes);
    let transformed: Vec<Minutia> = gallery.points().iter().map(|m| apply_transform(&transform, m)).collect();
    let (score, pairs) = pair_and_count(&transformed, latent.points(), cfg.delta_d, cfg.delta_o);
    debug_assert!(cfg.in_ranges(&transform));
    Ok(MatchResult {
        score,
        transform,
        pairs,
        fitness_history: history,
    })
}

/// Derive an independent stream seed from a base seed and a salt
/// (splitmix64 finalizer).
pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean pairing distance of a result's pairs under its transform; tighter
/// alignments score lower. Empty pairings rank last.
fn mean_pair_distance(r: &MatchResult, gallery: &MinutiaSet, latent: &MinutiaSet) -> f64 {
    if r.pairs.is_empty() {
        return f64::INFINITY;
    }
    let total: f64 = r
        .pairs
        .iter()
        .map(|&(ci, lj)| {
            let c = apply_transform(&r.transform, &gallery.points()[ci]);
            let l = latent.points()[lj];
            ((c.x - l.x).powi(2) + (c.y - l.y).powi(2)).sqrt()
        })
        .sum();
    total / r.pairs.len() as f64
}

/// Best of several independent searches with derived seeds.
///
/// A single population tends to commit to its early front-runner, so
/// independent restarts are the reliable way to spend a larger search
/// budget. Results are ranked by score, then by mean pairing distance
/// (a tighter alignment wins ties), then by earliest restart. When
/// `early_stop_score` is reached the remaining restarts are skipped.
pub fn run_ga_restarts(
    gallery: &MinutiaSet,
    latent: &MinutiaSet,
    cfg: &GaConfig,
    restarts: usize,
    early_stop_score: Option<usize>,
) -> Result<MatchResult> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let mut best: Option<(MatchResult, f64)> = None;
    for k in 0..restarts {
        let run_cfg = GaConfig {
            seed: derive_seed(cfg.seed, k as u64),
            ..cfg.clone()
        };
        let r = run_ga(gallery, latent, &run_cfg)?;
        let d = mean_pair_distance(&r, gallery, latent);
        let better = match &best {
            None => true,
            Some((b, bd)) => r.score > b.score || (r.score == b.score && d < *bd),
        };
        if better {
            best = Some((r, d));
        }
        if let Some(target) = early_stop_score {
            if best.as_ref().is_some_and(|(b, _)| b.score >= target) {
                break;
            }
        }
    }
    Ok(best.expect("at least one restart ran").0)
}

/// Line-oriented text form: "score N", "transform theta s tx ty", then one
/// "ci lj" line per pair.
pub fn match_result_to_text(r: &MatchResult) -> String {
    let mut out = String::new();
    writeln!(out, "score {}", r.score).unwrap();
    writeln!(
        out,
        "transform {} {} {} {}",
        r.transform.theta, r.transform.s, r.transform.tx, r.transform.ty
    )
    .unwrap();
    for &(ci, lj) in &r.pairs {
        writeln!(out, "{ci} {lj}").unwrap();
    }
    out
}

/// CSV of the per-generation best fitness, for plotting convergence.
pub fn fitness_history_csv(r: &MatchResult) -> String {
    let mut out = String::from("generation,best_fitness\n");
    for (g, f) in r.fitness_history.iter().enumerate() {
        writeln!(out, "{g},{f}").unwrap();
    }
    out
}
