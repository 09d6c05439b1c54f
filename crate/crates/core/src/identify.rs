//! Gallery search and identification statistics.
//!
//! A latent query is matched against a subset of gallery prints; candidates
//! are ranked by match score. Repeated randomized-subset trials aggregate
//! into penetration-rate and cumulative-match-characteristic statistics,
//! optionally broken down by a per-latent quality category.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gamatch::{derive_seed, run_ga_restarts, GaConfig};
use crate::minutiae::{load_minutiae, MinutiaSet};

/// FNV-1a hash of a string, used to derive per-entry RNG seeds that do not
/// depend on iteration order.
fn fnv1a(text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Gallery of enrolled prints with unique ids, kept sorted by id.
#[derive(Debug, Clone)]
pub struct Gallery {
    entries: Vec<(String, MinutiaSet)>,
}

impl Gallery {
    pub fn new(mut entries: Vec<(String, MinutiaSet)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArgument(format!("duplicate gallery id {:?}", w[0].0)));
            }
        }
        Ok(Self { entries })
    }

    /// Load every `.min` file in a directory; the file stem is the id.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for item in listing {
            let item = item.map_err(|e| Error::io(dir, e))?;
            let path = item.path();
            if path.extension().and_then(|e| e.to_str()) != Some("min") {
                continue;
            }
            let set = load_minutiae(&path)?;
            entries.push((set.id.clone(), set));
        }
        if entries.is_empty() {
            return Err(Error::InvalidArgument(format!("no .min files in {}", dir.display())));
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(String, MinutiaSet)] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&MinutiaSet> {
        self.entries
            .binary_search_by(|(eid, _)| eid.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Candidates for one query, sorted by descending score (ties: id ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    pub query_id: String,
    pub ranked: Vec<(String, usize)>,
}

/// Randomized-subset experiment plan: each (latent, trial) cell samples
/// `subset_size - 1` non-mates plus the mate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub subset_size: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for TrialPlan {
    fn default() -> Self {
        Self {
            subset_size: 50,
            trials: 10,
            seed: 0,
        }
    }
}

impl TrialPlan {
    pub fn validate(&self) -> Result<()> {
        if self.subset_size < 2 {
            return Err(Error::InvalidArgument("subset size must be at least 2".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trial count must be positive".into()));
        }
        Ok(())
    }
}

/// Match one latent against every subset entry and rank by score.
///
/// Each entry's search is seeded from the base seed, the query id, and the
/// entry id, so results do not depend on subset order or parallel schedule.
pub fn search(
    latent: &MinutiaSet,
    subset: &[(String, MinutiaSet)],
    cfg: &GaConfig,
    restarts: usize,
) -> Result<CandidateList> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("gallery subset is empty".into()));
    }
    let mut seen = HashSet::new();
    for (id, _) in subset {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate subset id {id:?}")));
        }
    }
    let scored: Vec<Result<(String, usize)>> = subset
        .par_iter()
        .map(|(id, entry)| {
            let entry_cfg = GaConfig {
                seed: derive_seed(cfg.seed, fnv1a(&format!("{}\u{0}{}", latent.id, id))),
                ..cfg.clone()
            };
            let ceiling = entry.len().min(latent.len());
            let result = run_ga_restarts(entry, latent, &entry_cfg, restarts, Some(ceiling))?;
            Ok((id.clone(), result.score))
        })
        .collect();
    let mut ranked = scored.into_iter().collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(CandidateList {
        query_id: latent.id.clone(),
        ranked,
    })
}

/// The mate's 1-based rank as a percentage of the list length.
pub fn penetration_rate(list: &CandidateList, mate_id: &str) -> Result<f64> {
    let rank = list
        .ranked
        .iter()
        .position(|(id, _)| id == mate_id)
        .ok_or_else(|| Error::NotFound(format!("mate {mate_id:?} not in candidate list")))?
        + 1;
    Ok(rank as f64 / list.ranked.len() as f64 * 100.0)
}

/// The evaluation grid for identification curves: 1%, then 5% steps to 100%.
pub fn default_checkpoints() -> Vec<f64> {
    let mut cps = vec![1.0];
    cps.extend((1..=20).map(|k| k as f64 * 5.0));
    cps
}

/// One (latent, trial) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RankRecord {
    pub latent_id: String,
    pub category: Option<String>,
    pub trial: usize,
    pub mate_rank: usize,
    pub subset_size: usize,
}

impl RankRecord {
    pub fn penetration(&self) -> f64 {
        self.mate_rank as f64 / self.subset_size as f64 * 100.0
    }
}

/// Identification rate against allowed list depth: for each checkpoint
/// percentage, the fraction of records whose mate rank is within
/// ceil(pct × subset size).
pub fn cmc(records: &[RankRecord], checkpoints: &[f64]) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no rank records".into()));
    }
    Ok(checkpoints
        .iter()
        .map(|&pct| {
            let hits = records
                .iter()
                .filter(|r| {
                    let depth = (pct / 100.0 * r.subset_size as f64).ceil() as usize;
                    r.mate_rank <= depth
                })
                .count();
            (pct, hits as f64 / records.len() as f64)
        })
        .collect())
}

/// One latent query: its minutiae, its true mate, and an optional quality
/// category for the per-category breakdown.
#[derive(Debug, Clone)]
pub struct LatentQuery {
    pub minutiae: MinutiaSet,
    pub mate_id: String,
    pub category: Option<String>,
}

/// Aggregated outcome of a randomized-subset identification experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub cells: Vec<RankRecord>,
    pub mean_penetration: f64,
    /// (category, mean penetration) for categorized latents, sorted by name.
    pub per_category: Vec<(String, f64)>,
    pub cmc: Vec<(f64, f64)>,
}

/// Sample `count` distinct indices from `pool` by partial Fisher-Yates.
fn sample_without_replacement(pool: &mut Vec<usize>, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    for i in 0..count {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool[..count].to_vec()
}

/// Run the full randomized-subset protocol: per trial and latent, match
/// against the mate plus freshly sampled non-mates, then aggregate.
pub fn run_trials(
    latents: &[LatentQuery],
    gallery: &Gallery,
    plan: &TrialPlan,
    cfg: &GaConfig,
    restarts: usize,
) -> Result<TrialReport> {
    plan.validate()?;
    if latents.is_empty() {
        return Err(Error::InvalidArgument("no latent queries".into()));
    }
    if gallery.len() < plan.subset_size {
        return Err(Error::Config(format!(
            "gallery has {} entries but the plan needs subsets of {}",
            gallery.len(),
            plan.subset_size
        )));
    }
    for q in latents {
        if gallery.get(&q.mate_id).is_none() {
            return Err(Error::Config(format!(
                "latent {:?} names mate {:?} which is not in the gallery",
                q.minutiae.id, q.mate_id
            )));
        }
    }

    let mut cells = Vec::with_capacity(plan.trials * latents.len());
    for trial in 0..plan.trials {
        for q in latents {
            let mate_idx = gallery
                .entries
                .binary_search_by(|(id, _)| id.as_str().cmp(&q.mate_id))
                .expect("mate id checked above");
            let cell_seed = derive_seed(derive_seed(plan.seed, fnv1a(&q.minutiae.id)), trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
            let mut pool: Vec<usize> = (0..gallery.len()).filter(|&i| i != mate_idx).collect();
            let mut subset_idx = sample_without_replacement(&mut pool, plan.subset_size - 1, &mut rng);
            subset_idx.push(mate_idx);
            let subset: Vec<(String, MinutiaSet)> =
                subset_idx.iter().map(|&i| gallery.entries[i].clone()).collect();
            debug_assert_eq!(subset.len(), plan.subset_size);

            let list = search(&q.minutiae, &subset, cfg, restarts)?;
            let mate_rank = list
                .ranked
                .iter()
                .position(|(id, _)| *id == q.mate_id)
                .expect("mate is in the subset by construction")
                + 1;
            cells.push(RankRecord {
                latent_id: q.minutiae.id.clone(),
                category: q.category.clone(),
                trial,
                mate_rank,
                subset_size: plan.subset_size,
            });
        }
    }

    let mean_penetration = cells.iter().map(RankRecord::penetration).sum::<f64>() / cells.len() as f64;
    let mut by_category: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for cell in &cells {
        if let Some(cat) = &cell.category {
            by_category.entry(cat.clone()).or_default().push(cell.penetration());
        }
    }
    let per_category = by_category
        .into_iter()
        .map(|(cat, vals)| {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (cat, mean)
        })
        .collect();
    let curve = cmc(&cells, &default_checkpoints())?;
    Ok(TrialReport {
        cells,
        mean_penetration,
        per_category,
        cmc: curve,
    })
}

/// Per-cell CSV: one row per (latent, trial) with the mate's rank.
pub fn report_cells_csv(report: &TrialReport) -> String {
    let mut out = String::from("latent,category,trial,mate_rank,subset_size,penetration_pct\n");
    for c in &report.cells {
        writeln!(
            out,
            "{},{},{},{},{},{:.4}",
            c.latent_id,
            c.category.as_deref().unwrap_or(""),
            c.trial,
            c.mate_rank,
            c.subset_size,
            c.penetration()
        )
        .unwrap();
    }
    out
}

/// Human-readable summary block: mean penetration, per-category means, and
/// the identification-rate curve.
pub fn report_summary(report: &TrialReport) -> String {
    let mut out = String::new();
    writeln!(out, "mean_penetration_pct {:.4}", report.mean_penetration).unwrap();
    for (cat, mean) in &report.per_category {
        writeln!(out, "category {cat} mean_penetration_pct {mean:.4}").unwrap();
    }
    for (pct, frac) in &report.cmc {
        writeln!(out, "cmc {pct} {frac:.4}").unwrap();
    }
    out
}

/// One parsed manifest line naming a latent query.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub mate_id: String,
    pub category: Option<String>,
}

/// Parse the query manifest: one line per latent,
/// "latent <id> <path> mate=<gallery-id> [category=good|bad|ugly]",
/// with '#' comments and blank lines ignored.
pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 || fields.len() > 5 || fields[0] != "latent" {
            return Err(Error::parse(
                path,
                idx + 1,
                "expected \"latent <id> <path> mate=<id> [category=...]\"",
            ));
        }
        let id = fields[1].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::parse(path, idx + 1, format!("duplicate latent id {id:?}")));
        }
        let mate_id = fields[3]
            .strip_prefix("mate=")
            .ok_or_else(|| Error::parse(path, idx + 1, "fourth field must be mate=<id>"))?
            .to_string();
        if mate_id.is_empty() {
            return Err(Error::parse(path, idx + 1, "mate id is empty"));
        }
        let category = match fields.get(4) {
            None => None,
            Some(f) => {
                let cat = f
                    .strip_prefix("category=")
                    .ok_or_else(|| Error::parse(path, idx + 1, "fifth field must be category=<name>"))?;
                if !matches!(cat, "good" | "bad" | "ugly") {
                    return Err(Error::parse(path, idx + 1, format!("unknown category {cat:?}")));
                }
                Some(cat.to_string())
            }
        };
        entries.push(ManifestEntry {
            id,
            path: PathBuf::from(fields[2]),
            mate_id,
            category,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamatch::{apply_transform, AffineParams};
    use crate::minutiae::{Minutia, MinutiaType};

    fn random_set(rng: &mut ChaCha8Rng, id: &str, n: usize, half: f64) -> MinutiaSet {
        let pts = (0..n)
            .map(|_| {
                let t = if rng.gen_bool(0.5) { MinutiaType::Ending } else { MinutiaType::Bifurcation };
                Minutia {
                    x: rng.gen_range(-half..half),
                    y: rng.gen_range(-half..half),
                    orientation: rng.gen_range(0.0..360.0),
                    mtype: t,
                }
            })
            .collect();
        MinutiaSet::new(id, pts).unwrap()
    }

    fn quick_cfg(seed: u64) -> GaConfig {
        GaConfig {
            seed,
            max_generations: 300,
            stall_generations: 120,
            ..GaConfig::default()
        }
    }

    #[test]
    fn gallery_rejects_duplicate_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_set(&mut rng, "a", 3, 50.0);
        let entries = vec![("p1".to_string(), a.clone()), ("p1".to_string(), a)];
        assert!(Gallery::new(entries).is_err());
    }

    #[test]
    fn gallery_loads_min_files_sorted() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.min"), "1 2 30 E\n").unwrap();
        fs::write(dir.path().join("a.min"), "5 6 70 B\n8 9 10 E\n").unwrap();
        fs::write(dir.path().join("ignore.txt"), "not minutiae").unwrap();
        let g = Gallery::from_dir(dir.path()).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.entries()[0].0, "a");
        assert_eq!(g.entries()[1].0, "b");
        assert_eq!(g.get("a").unwrap().len(), 2);
        assert!(g.get("zzz").is_none());

        let empty = tempfile::tempdir().unwrap();
        assert!(Gallery::from_dir(empty.path()).is_err());
    }

    #[test]
    fn search_ranks_exact_clone_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = random_set(&mut rng, "mate", 12, 150.0);
        let mut latent = target.clone();
        latent.id = "query".into();
        let subset = vec![
            ("mate".to_string(), target),
            ("imp1".to_string(), random_set(&mut rng, "imp1", 12, 150.0)),
            ("imp2".to_string(), random_set(&mut rng, "imp2", 12, 150.0)),
        ];
        let cl = search(&latent, &subset, &quick_cfg(5), 4).unwrap();
        assert_eq!(cl.query_id, "query");
        assert_eq!(cl.ranked[0].0, "mate");
        assert_eq!(cl.ranked[0].1, 12, "clone must pair every minutia");
    }

    #[test]
    fn search_with_single_entry_ranks_it_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let only = random_set(&mut rng, "only", 8, 100.0);
        let latent = random_set(&mut rng, "q", 8, 100.0);
        let cl = search(&latent, &[("only".to_string(), only)], &quick_cfg(1), 2).unwrap();
        assert_eq!(cl.ranked.len(), 1);
        assert_eq!(cl.ranked[0].0, "only");
    }

    #[test]
    fn search_breaks_score_ties_by_id() {
        // a lone far-away latent point pairs with nothing, so every entry
        // scores zero and the order must be alphabetical
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let latent = MinutiaSet::new(
            "q",
            vec![Minutia {
                x: 10_000.0,
                y: 10_000.0,
                orientation: 0.0,
                mtype: MinutiaType::Ending,
            }],
        )
        .unwrap();
        let subset = vec![
            ("zeta".to_string(), random_set(&mut rng, "zeta", 5, 50.0)),
            ("alpha".to_string(), random_set(&mut rng, "alpha", 5, 50.0)),
            ("mid".to_string(), random_set(&mut rng, "mid", 5, 50.0)),
        ];
        let cl = search(&latent, &subset, &quick_cfg(0), 1).unwrap();
        let ids: Vec<&str> = cl.ranked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["alpha", "mid", "zeta"]);
        assert!(cl.ranked.iter().all(|&(_, s)| s == 0));
    }

    #[test]
    fn search_rejects_bad_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let latent = random_set(&mut rng, "q", 4, 50.0);
        assert!(search(&latent, &[], &quick_cfg(0), 1).is_err());
        let dup = random_set(&mut rng, "d", 4, 50.0);
        let subset = vec![("d".to_string(), dup.clone()), ("d".to_string(), dup)];
        assert!(search(&latent, &subset, &quick_cfg(0), 1).is_err());
    }

    #[test]
    fn penetration_matches_worked_examples() {
        let ranked: Vec<(String, usize)> = (1..=50).map(|i| (format!("p{i:02}"), 100 - i)).collect();
        let cl = CandidateList {
            query_id: "q".into(),
            ranked,
        };
        assert_eq!(penetration_rate(&cl, "p05").unwrap(), 10.0);
        assert_eq!(penetration_rate(&cl, "p01").unwrap(), 2.0);
        assert_eq!(penetration_rate(&cl, "p50").unwrap(), 100.0);
        assert!(matches!(penetration_rate(&cl, "absent"), Err(Error::NotFound(_))));
    }

    #[test]
    fn cmc_is_a_step_function_for_one_record() {
        let records = vec![RankRecord {
            latent_id: "q".into(),
            category: None,
            trial: 0,
            mate_rank: 5,
            subset_size: 50,
        }];
        let curve = cmc(&records, &default_checkpoints()).unwrap();
        for &(pct, frac) in &curve {
            let expected = if pct >= 10.0 { 1.0 } else { 0.0 };
            assert_eq!(frac, expected, "at {pct}%");
        }
        assert_eq!(curve.last().unwrap(), &(100.0, 1.0));
    }

    #[test]
    fn cmc_is_monotone_and_terminal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let records: Vec<RankRecord> = (0..40)
            .map(|i| RankRecord {
                latent_id: format!("q{i}"),
                category: None,
                trial: 0,
                mate_rank: rng.gen_range(1..=20),
                subset_size: 20,
            })
            .collect();
        let curve = cmc(&records, &default_checkpoints()).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert_eq!(curve.last().unwrap().1, 1.0);
        assert!(cmc(&[], &default_checkpoints()).is_err());

        let mean_pen = records.iter().map(RankRecord::penetration).sum::<f64>() / records.len() as f64;
        let direct: f64 = records
            .iter()
            .map(|r| r.mate_rank as f64 / r.subset_size as f64 * 100.0)
            .sum::<f64>()
            / records.len() as f64;
        assert!((mean_pen - direct).abs() < 1e-12);
    }

    /// Tiny planted world: the mate is the latent's source, impostors are
    /// random clouds.
    fn planted_world(seed: u64, impostors: usize) -> (Vec<LatentQuery>, Gallery) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mate = random_set(&mut rng, "mate", 14, 150.0);
        let t0 = AffineParams {
            theta: rng.gen_range(0.0..=359.0),
            s: rng.gen_range(0.8..=1.2),
            tx: rng.gen_range(-200.0..=200.0),
            ty: rng.gen_range(-200.0..=200.0),
        };
        let latent = MinutiaSet::new(
            "latent0",
            mate.points().iter().map(|p| apply_transform(&t0, p)).collect(),
        )
        .unwrap();
        let mut entries = vec![("mate".to_string(), mate)];
        for i in 0..impostors {
            let id = format!("imp{i:02}");
            entries.push((id.clone(), random_set(&mut rng, &id, 14, 150.0)));
        }
        let gallery = Gallery::new(entries).unwrap();
        let queries = vec![LatentQuery {
            minutiae: latent,
            mate_id: "mate".into(),
            category: Some("good".into()),
        }];
        (queries, gallery)
    }

    #[test]
    fn run_trials_is_deterministic_with_valid_subsets() {
        let (queries, gallery) = planted_world(7, 5);
        let plan = TrialPlan {
            subset_size: 3,
            trials: 2,
            seed: 11,
        };
        let a = run_trials(&queries, &gallery, &plan, &quick_cfg(2), 2).unwrap();
        let b = run_trials(&queries, &gallery, &plan, &quick_cfg(2), 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 2);
        for cell in &a.cells {
            assert_eq!(cell.subset_size, 3);
            assert!(cell.mate_rank >= 1 && cell.mate_rank <= 3);
        }
        for w in a.cmc.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert_eq!(a.cmc.last().unwrap().1, 1.0);
        assert_eq!(a.per_category.len(), 1);
        assert_eq!(a.per_category[0].0, "good");
    }

    #[test]
    fn run_trials_two_print_gallery_gives_half_penetration() {
        let (queries, gallery) = planted_world(8, 1);
        let plan = TrialPlan {
            subset_size: 2,
            trials: 1,
            seed: 0,
        };
        let cfg = GaConfig {
            max_generations: 600,
            stall_generations: 300,
            ..quick_cfg(3)
        };
        let report = run_trials(&queries, &gallery, &plan, &cfg, 6).unwrap();
        assert_eq!(report.cells[0].mate_rank, 1, "clone-like latent must win rank 1 of 2");
        assert_eq!(report.mean_penetration, 50.0);
    }

    #[test]
    fn run_trials_rejects_bad_plans() {
        let (queries, gallery) = planted_world(9, 3);
        let cfg = quick_cfg(0);
        let bad_plan = TrialPlan {
            subset_size: 1,
            trials: 1,
            seed: 0,
        };
        assert!(run_trials(&queries, &gallery, &bad_plan, &cfg, 1).is_err());
        let too_big = TrialPlan {
            subset_size: 10,
            trials: 1,
            seed: 0,
        };
        assert!(matches!(run_trials(&queries, &gallery, &too_big, &cfg, 1), Err(Error::Config(_))));
        let mut orphan = queries.clone();
        orphan[0].mate_id = "missing".into();
        let plan = TrialPlan {
            subset_size: 2,
            trials: 1,
            seed: 0,
        };
        assert!(matches!(run_trials(&orphan, &gallery, &plan, &cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn planted_gallery_ranks_mate_first() {
        for seed in [21u64, 22] {
            let (queries, gallery) = planted_world(seed, 49);
            let subset: Vec<(String, MinutiaSet)> = gallery.entries().to_vec();
            let cl = search(&queries[0].minutiae, &subset, &quick_cfg(seed), 2).unwrap();
            assert_eq!(cl.ranked[0].0, "mate", "seed {seed}: top candidate was {:?}", cl.ranked[0]);
            assert_eq!(penetration_rate(&cl, "mate").unwrap(), 2.0);
        }
    }

    #[test]
    fn report_formats() {
        let report = TrialReport {
            cells: vec![RankRecord {
                latent_id: "q1".into(),
                category: Some("bad".into()),
                trial: 0,
                mate_rank: 1,
                subset_size: 2,
            }],
            mean_penetration: 50.0,
            per_category: vec![("bad".into(), 50.0)],
            cmc: vec![(1.0, 0.0), (100.0, 1.0)],
        };
        let csv = report_cells_csv(&report);
        assert_eq!(
            csv,
            "latent,category,trial,mate_rank,subset_size,penetration_pct\nq1,bad,0,1,2,50.0000\n"
        );
        let summary = report_summary(&report);
        assert!(summary.starts_with("mean_penetration_pct 50.0000\n"));
        assert!(summary.contains("category bad mean_penetration_pct 50.0000\n"));
        assert!(summary.ends_with("cmc 1 0.0000\ncmc 100 1.0000\n"));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.txt");
        fs::write(
            &path,
            "# queries\nlatent q1 lat/q1.min mate=p3 category=good\nlatent q2 lat/q2.min mate=p9\n",
        )
        .unwrap();
        let entries = parse_manifest(&path).unwrap();
        assert_eq!(
            entries,
            vec![
                ManifestEntry {
                    id: "q1".into(),
                    path: PathBuf::from("lat/q1.min"),
                    mate_id: "p3".into(),
                    category: Some("good".into()),
                },
                ManifestEntry {
                    id: "q2".into(),
                    path: PathBuf::from("lat/q2.min"),
                    mate_id: "p9".into(),
                    category: None,
                },
            ]
        );

        for (content, line) in [
            ("query q1 a.min mate=p1\n", 1),
            ("latent q1 a.min p1\n", 1),
            ("latent q1 a.min mate=\n", 1),
            ("latent q1 a.min mate=p1 category=great\n", 1),
            ("latent q1 a.min mate=p1\nlatent q1 b.min mate=p2\n", 2),
            ("latent q1 a.min mate=p1 category=good extra\n", 1),
        ] {
            fs::write(&path, content).unwrap();
            let err = parse_manifest(&path).unwrap_err();
            assert!(err.to_string().contains(&format!(":{line}")), "{content:?} -> {err}");
        }
    }
}
