//! `latmatch` — batch front end for the latent-print toolkit.
//!
//! Subcommands cover each pipeline stage: synthetic data generation,
//! dictionary learning, ridge-area segmentation, pairwise matching,
//! gallery identification, and segmentation scoring. Every randomized
//! stage is seeded explicitly, so identical invocations produce identical
//! bytes, regardless of the worker-thread count.

mod config;

use clap::{Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use config::RunConfig;
use latmatch_core::dict::{learn_dictionary, save_dictionary};
use latmatch_core::evaluate::{
    batch_csv, gmpr_fmar, MinutiaeEvalInput, SegEvalResult, UndefinedMode,
};
use latmatch_core::gamatch::{fitness_history_csv, match_result_to_text, run_ga_restarts};
use latmatch_core::identify::{parse_manifest, report_cells_csv, report_summary, Gallery, LatentQuery};
use latmatch_core::atoms;
use latmatch_core::image::{load_image, normalize_patch, patches_at, save_pgm, GrayImage, PatchGrid};
use latmatch_core::minutiae::{load_minutiae, save_minutiae};
use latmatch_core::segment::{save_roi, segment, BinaryMask};
use latmatch_core::synth::{generate, load_spec, spec_to_text};
use latmatch_core::{Error, Result};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (formats: pgm 1, minutiae 1, roi 1, dictionary 1, synth-spec 1, report 1)"
);

#[derive(Parser)]
#[command(name = "latmatch", version = VERSION, about = "Latent fingerprint matching toolkit", disable_version_flag = true)]
struct Cli {
    /// Print version and file-format revisions.
    #[arg(long, short = 'V', action = clap::ArgAction::Version)]
    version: Option<bool>,
    /// Layered TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for every randomized stage.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for parallel stages (results never depend on this).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic ridge image plus its ground truth.
    Synth {
        /// Image description (TOML).
        spec: PathBuf,
        /// Output directory for image, mask, minutiae, and spec echo.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Learn a patch dictionary from an image and label its atoms.
    LearnDict {
        image: PathBuf,
        /// Where to store the learned dictionary.
        #[arg(long)]
        out_dict: PathBuf,
        /// Optional per-atom classification report.
        #[arg(long)]
        atom_report: Option<PathBuf>,
    },
    /// Find the ridge region of an image and write its ROI polygon.
    Segment {
        image: PathBuf,
        #[arg(long)]
        out_roi: PathBuf,
        /// Dump the learned dictionary.
        #[arg(long)]
        dump_dict: Option<PathBuf>,
        /// Dump the per-atom classification report.
        #[arg(long)]
        dump_atoms: Option<PathBuf>,
        /// Dump the ridge-vote map as a PGM.
        #[arg(long)]
        dump_votes: Option<PathBuf>,
        /// Dump the post-morphology foreground mask as a PGM.
        #[arg(long)]
        dump_mask: Option<PathBuf>,
    },
    /// Align a latent minutiae file against one gallery file.
    Match {
        latent: PathBuf,
        gallery: PathBuf,
        /// Independent matcher starts (best result wins).
        #[arg(long)]
        restarts: Option<usize>,
        /// Write the best run's fitness history as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Rank gallery subsets for every latent in a manifest.
    Identify {
        /// Lines: "latent <id> <path> mate=<id> [category=...]".
        manifest: PathBuf,
        /// Directory of gallery minutiae files (*.min).
        gallery_dir: PathBuf,
        /// Per-cell CSV report destination.
        #[arg(long)]
        out_report: PathBuf,
        /// Gallery subset size per trial.
        #[arg(long)]
        subset_size: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Score a segmentation through its effect on minutiae.
    EvalSeg {
        /// Ground-truth, whole-image, and ROI minutiae files.
        #[arg(value_name = "MIN", num_args = 3, required_unless_present = "manifest", conflicts_with = "manifest")]
        sets: Vec<PathBuf>,
        /// Batch mode; lines: "<id> <truth> <whole> <roi>".
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Count undefined per-image metrics as zero in the batch means.
        #[arg(long)]
        zero_fill: bool,
        /// Pairing distance tolerance, pixels.
        #[arg(long)]
        delta_d: Option<f64>,
        /// Pairing orientation tolerance, degrees.
        #[arg(long)]
        delta_o: Option<f64>,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests land here too; only real usage
            // errors exit nonzero
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 1 = bad usage or configuration, 2 = unreadable or malformed inputs,
/// 3 = internal failure.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => 1,
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Parse { .. }
        | Error::UnsupportedDepth { .. }
        | Error::NotFound(_) => 2,
        _ => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = config::resolve(cli.config.as_deref(), cli.seed, cli.threads)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth { spec, out_dir } => cmd_synth(&cfg, cli.seed, &spec, &out_dir),
        Command::LearnDict {
            image,
            out_dict,
            atom_report,
        } => cmd_learn_dict(&cfg, &image, &out_dict, atom_report.as_deref()),
        Command::Segment {
            image,
            out_roi,
            dump_dict,
            dump_atoms,
            dump_votes,
            dump_mask,
        } => cmd_segment(
            &cfg,
            &image,
            &out_roi,
            dump_dict.as_deref(),
            dump_atoms.as_deref(),
            dump_votes.as_deref(),
            dump_mask.as_deref(),
        ),
        Command::Match {
            latent,
            gallery,
            restarts,
            history,
        } => cmd_match(&cfg, &latent, &gallery, restarts, history.as_deref()),
        Command::Identify {
            manifest,
            gallery_dir,
            out_report,
            subset_size,
            trials,
            restarts,
        } => cmd_identify(&cfg, &manifest, &gallery_dir, &out_report, subset_size, trials, restarts),
        Command::EvalSeg {
            sets,
            manifest,
            out,
            zero_fill,
            delta_d,
            delta_o,
        } => cmd_eval_seg(&cfg, &sets, manifest.as_deref(), out.as_deref(), zero_fill, delta_d, delta_o),
    }
}

/// "# key value" lines prepended to every textual report.
fn header(command: &str, cfg: &RunConfig, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    writeln!(out, "# command {command}").unwrap();
    writeln!(out, "# seed {}", cfg.seed).unwrap();
    for (k, v) in extra {
        writeln!(out, "# {k} {v}").unwrap();
    }
    out
}

fn ga_params(cfg: &RunConfig, restarts: usize) -> Vec<(&'static str, String)> {
    let ga = &cfg.ga;
    vec![
        ("population", ga.population.to_string()),
        ("crossover_prob", ga.crossover_prob.to_string()),
        ("mutation_prob", ga.mutation_prob.to_string()),
        ("max_generations", ga.max_generations.to_string()),
        ("stall_generations", ga.stall_generations.to_string()),
        ("delta_d", ga.delta_d.to_string()),
        ("delta_o", ga.delta_o.to_string()),
        ("restarts", restarts.to_string()),
    ]
}

fn dict_params(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    let seg = &cfg.segment;
    vec![
        ("patch_size", seg.patch_size.to_string()),
        ("stride", seg.stride.to_string()),
        ("atom_count", seg.train.atom_count.to_string()),
        ("sparsity", seg.train.sparsity.to_string()),
        ("epochs", seg.train.epochs.to_string()),
        ("xcorr_threshold", seg.atoms.xcorr_threshold.to_string()),
        (
            "valid_period",
            format!("{} {}", seg.atoms.valid_period.0, seg.atoms.valid_period.1),
        ),
    ]
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mask_to_gray(mask: &BinaryMask) -> GrayImage {
    let mut img = GrayImage::zeros(mask.width(), mask.height());
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                img.set(x, y, 255);
            }
        }
    }
    img
}

fn cmd_synth(cfg: &RunConfig, seed_flag: Option<u64>, spec_path: &Path, out_dir: &Path) -> Result<()> {
    let mut spec = load_spec(spec_path)?;
    // the spec file carries its own seed; only an explicit flag beats it
    if let Some(seed) = seed_flag {
        spec.seed = seed;
    }
    let stem = spec_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("no file stem in {}", spec_path.display())))?;
    let out = generate(&spec)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let image_path = out_dir.join(format!("{stem}.pgm"));
    let mask_path = out_dir.join(format!("{stem}-mask.pgm"));
    let min_path = out_dir.join(format!("{stem}.min"));
    let echo_path = out_dir.join(format!("{stem}-spec.toml"));
    save_pgm(&out.image, &image_path)?;
    save_pgm(&mask_to_gray(&out.mask), &mask_path)?;
    save_minutiae(&out.minutiae, &min_path)?;
    write_text(&echo_path, &spec_to_text(&out.spec))?;

    let extra = [
        ("generation_seed", out.spec.seed.to_string()),
        ("spec", spec_path.display().to_string()),
        ("image", image_path.display().to_string()),
        ("mask", mask_path.display().to_string()),
        ("minutiae", min_path.display().to_string()),
        ("spec_echo", echo_path.display().to_string()),
    ];
    print!("{}", header("synth", cfg, &extra));
    println!("size {}x{}", out.image.width(), out.image.height());
    println!("ridge_pixels {}", out.mask.count_true());
    println!("minutiae {}", out.minutiae.len());
    Ok(())
}

fn atom_report_text(analyses: &[atoms::AtomAnalysis]) -> String {
    let mut out = String::from("atom orientation_deg period_px xcorr ridge_valley\n");
    for a in analyses {
        writeln!(
            out,
            "{} {:.2} {:.3} {:.4} {}",
            a.atom_index,
            a.orientation.to_degrees(),
            a.period,
            a.xcorr,
            a.is_ridge_valley
        )
        .unwrap();
    }
    out
}

fn cmd_learn_dict(cfg: &RunConfig, image_path: &Path, out_dict: &Path, atom_report: Option<&Path>) -> Result<()> {
    let img = load_image(image_path)?;
    let grid = PatchGrid::build(&img, cfg.segment.patch_size, cfg.segment.stride)?;
    let patches: Vec<_> = patches_at(&img, &grid).iter().map(normalize_patch).collect();
    let (mut dict, stats) = learn_dictionary(&patches, &cfg.segment.train)?;
    let analyses = atoms::classify_atoms(&dict, &cfg.segment.atoms)?;
    dict.set_labels(atoms::labels_from_analyses(&analyses))?;
    save_dictionary(&dict, out_dict)?;
    if let Some(path) = atom_report {
        write_text(path, &atom_report_text(&analyses))?;
    }

    let mut extra = dict_params(cfg);
    extra.push(("image", image_path.display().to_string()));
    extra.push(("dictionary", out_dict.display().to_string()));
    print!("{}", header("learn-dict", cfg, &extra));
    println!("patches {}", patches.len());
    println!("initial_error {:.6}", stats.initial_error);
    for (i, e) in stats.epoch_errors.iter().enumerate() {
        println!("epoch_error {} {:.6}", i + 1, e);
    }
    let ridge = analyses.iter().filter(|a| a.is_ridge_valley).count();
    println!("ridge_valley_atoms {ridge}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_segment(
    cfg: &RunConfig,
    image_path: &Path,
    out_roi: &Path,
    dump_dict: Option<&Path>,
    dump_atoms: Option<&Path>,
    dump_votes: Option<&Path>,
    dump_mask: Option<&Path>,
) -> Result<()> {
    let img = load_image(image_path)?;
    let output = segment(&img, &cfg.segment)?;
    save_roi(&output.roi, out_roi)?;
    if let Some(path) = dump_dict {
        save_dictionary(&output.dictionary, path)?;
    }
    if let Some(path) = dump_atoms {
        write_text(path, &atom_report_text(&output.analyses))?;
    }
    if let Some(path) = dump_votes {
        save_pgm(&output.vote_map.to_gray(), path)?;
    }
    if let Some(path) = dump_mask {
        save_pgm(&mask_to_gray(&output.mask), path)?;
    }

    let mut extra = dict_params(cfg);
    extra.push(("morph_element", cfg.segment.morph_element.to_string()));
    extra.push(("min_component_area", cfg.segment.min_component_area.to_string()));
    extra.push(("image", image_path.display().to_string()));
    extra.push(("roi", out_roi.display().to_string()));
    print!("{}", header("segment", cfg, &extra));
    println!("roi_vertices {}", output.roi.vertices().len());
    println!("roi_area {:.1}", output.roi.area());
    println!("mask_pixels {}", output.mask.count_true());
    Ok(())
}

fn cmd_match(
    cfg: &RunConfig,
    latent_path: &Path,
    gallery_path: &Path,
    restarts: Option<usize>,
    history: Option<&Path>,
) -> Result<()> {
    let latent = load_minutiae(latent_path)?;
    let gallery = load_minutiae(gallery_path)?;
    let restarts = restarts.unwrap_or(cfg.restarts);
    // the score can never exceed the smaller set, so stop there
    let ceiling = latent.len().min(gallery.len());
    let result = run_ga_restarts(&gallery, &latent, &cfg.ga, restarts, Some(ceiling))?;
    if let Some(path) = history {
        write_text(path, &fitness_history_csv(&result))?;
    }

    let mut extra = ga_params(cfg, restarts);
    extra.push(("latent", latent_path.display().to_string()));
    extra.push(("gallery", gallery_path.display().to_string()));
    print!("{}", header("match", cfg, &extra));
    print!("{}", match_result_to_text(&result));
    Ok(())
}

fn cmd_identify(
    cfg: &RunConfig,
    manifest_path: &Path,
    gallery_dir: &Path,
    out_report: &Path,
    subset_size: Option<usize>,
    trials: Option<usize>,
    restarts: Option<usize>,
) -> Result<()> {
    let mut plan = cfg.plan.clone();
    if let Some(r) = subset_size {
        plan.subset_size = r;
    }
    if let Some(t) = trials {
        plan.trials = t;
    }
    plan.validate()?;
    let restarts = restarts.unwrap_or(cfg.restarts);

    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut queries = Vec::new();
    for entry in parse_manifest(manifest_path)? {
        let path = base.join(&entry.path);
        let mut set = load_minutiae(&path)?;
        set.id = entry.id;
        queries.push(LatentQuery {
            minutiae: set,
            mate_id: entry.mate_id,
            category: entry.category,
        });
    }
    let gallery = Gallery::from_dir(gallery_dir)?;
    let report = latmatch_core::identify::run_trials(&queries, &gallery, &plan, &cfg.ga, restarts)?;

    let mut extra = ga_params(cfg, restarts);
    extra.push(("subset_size", plan.subset_size.to_string()));
    extra.push(("trials", plan.trials.to_string()));
    extra.push(("manifest", manifest_path.display().to_string()));
    extra.push(("gallery_dir", gallery_dir.display().to_string()));
    let head = header("identify", cfg, &extra);

    write_text(out_report, &format!("{head}{}", report_cells_csv(&report)))?;
    print!("{head}");
    print!("{}", report_summary(&report));
    Ok(())
}

/// Batch manifest for segmentation scoring: "<id> <truth> <whole> <roi>".
fn parse_eval_manifest(path: &Path) -> Result<Vec<(String, PathBuf, PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 fields (id truth whole roi), got {}", fields.len()),
            ));
        }
        rows.push((
            fields[0].to_string(),
            PathBuf::from(fields[1]),
            PathBuf::from(fields[2]),
            PathBuf::from(fields[3]),
        ));
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 1, "manifest lists no images"));
    }
    Ok(rows)
}

fn cmd_eval_seg(
    cfg: &RunConfig,
    sets: &[PathBuf],
    manifest: Option<&Path>,
    out: Option<&Path>,
    zero_fill: bool,
    delta_d: Option<f64>,
    delta_o: Option<f64>,
) -> Result<()> {
    let mut tol = cfg.eval_tol;
    if let Some(d) = delta_d {
        tol.delta_d = d;
    }
    if let Some(o) = delta_o {
        tol.delta_o = o;
    }
    if tol.delta_d <= 0.0 || tol.delta_o <= 0.0 {
        return Err(Error::Config("evaluation tolerances must be positive".into()));
    }
    let mode = if zero_fill || cfg.eval_zero_fill {
        UndefinedMode::ZeroFill
    } else {
        UndefinedMode::Exclude
    };

    let triples: Vec<(String, PathBuf, PathBuf, PathBuf)> = match manifest {
        Some(m) => {
            let base = m.parent().unwrap_or(Path::new(".")).to_path_buf();
            parse_eval_manifest(m)?
                .into_iter()
                .map(|(id, t, w, r)| (id, base.join(t), base.join(w), base.join(r)))
                .collect()
        }
        None => {
            let id = sets[0]
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::InvalidArgument(format!("no file stem in {}", sets[0].display())))?;
            vec![(id.to_string(), sets[0].clone(), sets[1].clone(), sets[2].clone())]
        }
    };

    let mut rows: Vec<(String, SegEvalResult)> = Vec::with_capacity(triples.len());
    for (id, truth, whole, roi) in &triples {
        let input = MinutiaeEvalInput {
            ground_truth: load_minutiae(truth)?,
            whole_image: load_minutiae(whole)?,
            roi: load_minutiae(roi)?,
            tol,
        };
        let result = gmpr_fmar(&input);
        for w in &result.warnings {
            eprintln!("warning: {id}: {w}");
        }
        rows.push((id.clone(), result));
    }

    let extra = [
        ("delta_d", tol.delta_d.to_string()),
        ("delta_o", tol.delta_o.to_string()),
        (
            "undefined_mode",
            match mode {
                UndefinedMode::Exclude => "exclude".to_string(),
                UndefinedMode::ZeroFill => "zero-fill".to_string(),
            },
        ),
    ];
    let text = format!("{}{}", header("eval-seg", cfg, &extra), batch_csv(&rows, mode));
    match out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
