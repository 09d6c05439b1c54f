//! Layered run configuration.
//!
//! Every knob starts at its compiled default, a TOML config file may
//! override any subset, and command-line flags override the file. The
//! `--seed` flag (or top-level `seed` key) feeds every randomized stage at
//! once; a stage-specific seed in the file wins over the top-level key.

use serde::Deserialize;
use std::path::Path;

use latmatch_core::evaluate::EvalTolerance;
use latmatch_core::gamatch::{GaConfig, ParamRange};
use latmatch_core::identify::TrialPlan;
use latmatch_core::segment::SegmentConfig;
use latmatch_core::{Error, Result};

/// Fully resolved configuration for one command invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Master seed echoed into reports.
    pub seed: u64,
    /// Worker-pool cap; None leaves the library default.
    pub threads: Option<usize>,
    /// Segmentation pipeline (embeds dictionary training and atom
    /// classification parameters).
    pub segment: SegmentConfig,
    pub ga: GaConfig,
    /// Independent matcher starts per comparison.
    pub restarts: usize,
    pub plan: TrialPlan,
    pub eval_tol: EvalTolerance,
    /// Count undefined per-image metrics as zero in batch means.
    pub eval_zero_fill: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            segment: SegmentConfig::default(),
            ga: GaConfig::default(),
            restarts: 4,
            plan: TrialPlan::default(),
            eval_tol: EvalTolerance::default(),
            eval_zero_fill: false,
        }
    }
}

impl RunConfig {
    /// Check every embedded config against its own invariants.
    pub fn validate(&self) -> Result<()> {
        self.segment.validate()?;
        self.ga.validate()?;
        self.plan.validate()?;
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.eval_tol.delta_d <= 0.0 || self.eval_tol.delta_o <= 0.0 {
            return Err(Error::Config("evaluation tolerances must be positive".into()));
        }
        Ok(())
    }
}

fn range(pair: (f64, f64)) -> ParamRange {
    ParamRange {
        min: pair.0,
        max: pair.1,
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    atom_count: Option<usize>,
    sparsity: Option<usize>,
    epochs: Option<usize>,
    lambda: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomsSection {
    xcorr_threshold: Option<f64>,
    broad_period: Option<(f64, f64)>,
    valid_period: Option<(f64, f64)>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentSection {
    patch_size: Option<usize>,
    stride: Option<usize>,
    morph_element: Option<usize>,
    min_component_area: Option<usize>,
    hull_of_all: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaSection {
    population: Option<usize>,
    crossover_prob: Option<f64>,
    mutation_prob: Option<f64>,
    max_generations: Option<usize>,
    stall_generations: Option<usize>,
    delta_d: Option<f64>,
    delta_o: Option<f64>,
    seed: Option<u64>,
    theta_range: Option<(f64, f64)>,
    scale_range: Option<(f64, f64)>,
    tx_range: Option<(f64, f64)>,
    ty_range: Option<(f64, f64)>,
    restarts: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentifySection {
    subset_size: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    delta_d: Option<f64>,
    delta_o: Option<f64>,
    zero_fill: Option<bool>,
}

/// On-disk shape of the config file; every key optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    atoms: AtomsSection,
    #[serde(default)]
    segment: SegmentSection,
    #[serde(default)]
    ga: GaSection,
    #[serde(default)]
    identify: IdentifySection,
    #[serde(default)]
    eval: EvalSection,
}

macro_rules! take {
    ($section:expr, $target:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $section.$field {
            $target.$field = v;
        })+
    };
}

fn apply_file(cfg: &mut RunConfig, file: FileConfig) {
    if let Some(seed) = file.seed {
        set_master_seed(cfg, seed);
    }
    if file.threads.is_some() {
        cfg.threads = file.threads;
    }

    take!(file.train, cfg.segment.train; atom_count, sparsity, epochs, lambda, seed);
    take!(file.atoms, cfg.segment.atoms; xcorr_threshold, broad_period, valid_period);
    take!(file.segment, cfg.segment; patch_size, stride, morph_element, min_component_area, hull_of_all);

    take!(
        file.ga, cfg.ga;
        population, crossover_prob, mutation_prob, max_generations,
        stall_generations, delta_d, delta_o, seed,
    );
    if let Some(r) = file.ga.theta_range {
        cfg.ga.theta_range = range(r);
    }
    if let Some(r) = file.ga.scale_range {
        cfg.ga.scale_range = range(r);
    }
    if let Some(r) = file.ga.tx_range {
        cfg.ga.tx_range = range(r);
    }
    if let Some(r) = file.ga.ty_range {
        cfg.ga.ty_range = range(r);
    }
    if let Some(r) = file.ga.restarts {
        cfg.restarts = r;
    }

    take!(file.identify, cfg.plan; subset_size, trials, seed);
    take!(file.eval, cfg.eval_tol; delta_d, delta_o);
    if let Some(z) = file.eval.zero_fill {
        cfg.eval_zero_fill = z;
    }
}

/// Point every randomized stage at one seed.
fn set_master_seed(cfg: &mut RunConfig, seed: u64) {
    cfg.seed = seed;
    cfg.segment.train.seed = seed;
    cfg.ga.seed = seed;
    cfg.plan.seed = seed;
}

/// Build the effective configuration: defaults, then the optional file,
/// then the global flags.
pub fn resolve(
    config_path: Option<&Path>,
    seed_flag: Option<u64>,
    threads_flag: Option<usize>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: FileConfig =
            toml::from_str(&text).map_err(|e| Error::format("config", path, e.message().to_string()))?;
        apply_file(&mut cfg, file);
    }
    if let Some(seed) = seed_flag {
        set_master_seed(&mut cfg, seed);
    }
    if threads_flag.is_some() {
        cfg.threads = threads_flag;
    }
    cfg.validate()?;
    Ok(cfg)
}
