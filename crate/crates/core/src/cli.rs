//! Command-line front end. Every subcommand writes a JSON report with a schema
//! name and version; `--no-timestamp` makes the bytes depend on inputs only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::{read_bundle, validate_bundle, write_bundle, Diagnostic, MANIFEST_FILE};
use crate::convert::convert_motion;
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_loss, GradCheckReport, LossId, DEFAULT_SAMPLES, DEFAULT_STEP, DEFAULT_TOL};
use crate::loss::{total_loss, LossConfig, LossReport, LossWeights};
use crate::metrics::{evaluate_sequence, AlignMode, EvalConfig, EvalReport, DEFAULT_MOTION_THETA, DEFAULT_TAU_THRESHOLD};
use crate::sequence::MotionRepr;
use crate::synth::{export_bundle, SceneConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DEGENERATE_ALIGNMENT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fourdkit", version, about = "4D scene geometry toolkit: simulate, evaluate, convert, check")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "FOURDKIT_THREADS")]
    pub threads: Option<usize>,

    /// Leave the generation time out of reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene and write its ground truth as a bundle.
    Simulate {
        /// Scene description (TOML).
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Re-express a bundle's motion in another parameterization.
    Convert {
        bundle: PathBuf,
        /// Expected source representation; checked against the manifest.
        #[arg(long)]
        from: Option<MotionRepr>,
        #[arg(long)]
        to: MotionRepr,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every training loss term.
    Loss {
        pred: PathBuf,
        gt: PathBuf,
        /// Comma-separated `name=value` weight overrides, e.g. `pm=1,scale=0.5`.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long, default_value_t = DEFAULT_MOTION_THETA)]
        mask_theta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        /// `all` or one loss name.
        #[arg(long, default_value = "all")]
        loss: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a bundle's storage invariants.
    Validate {
        bundle: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A bundle, or a directory of bundles matched to ground truth by name.
    pub pred: PathBuf,
    /// Ground truth, laid out like `pred`.
    pub gt: PathBuf,
    /// Global scale alignment: `median`, `median_depth` or `none`.
    #[arg(long, default_value = "median")]
    pub align: AlignMode,
    /// Comma-separated APD thresholds in meters.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 0.5, 1.0])]
    pub thresholds: Vec<f64>,
    /// Scene-flow inlier threshold in meters.
    #[arg(long, default_value_t = DEFAULT_TAU_THRESHOLD)]
    pub tau: f64,
    /// Flow magnitude (meters) above which a ground-truth pixel counts as dynamic.
    #[arg(long, default_value_t = DEFAULT_MOTION_THETA)]
    pub mask_theta: f64,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also print a plain-text table to stdout.
    #[arg(long)]
    pub table: bool,
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let stamp = !cli.no_timestamp;
    pool.install(|| dispatch(cli.command, stamp))
}

fn dispatch(command: Command, stamp: bool) -> Result<i32> {
    match command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::Eval(args) => cmd_eval(&args, stamp),
        Command::Convert { bundle, from, to, out } => cmd_convert(&bundle, from, to, &out),
        Command::Loss {
            pred,
            gt,
            weights,
            mask_theta,
            out,
        } => cmd_loss(&pred, &gt, weights.as_deref(), mask_theta, out.as_deref(), stamp),
        Command::Gradcheck {
            loss,
            seed,
            tol,
            step,
            samples,
            out,
        } => cmd_gradcheck(&loss, seed, tol, step, samples, out.as_deref(), stamp),
        Command::Validate { bundle, out } => cmd_validate(&bundle, out.as_deref(), stamp),
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    text.push('\n');
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<i32> {
    let mut cfg = SceneConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let m = export_bundle(&cfg, out)?;
    eprintln!("wrote {} views of {}x{} to {}", m.num_views, m.width, m.height, out.display());
    Ok(EXIT_OK)
}

/// `(name, dir)` of every bundle under `dir`: the directory itself when it holds
/// a manifest, otherwise each subdirectory that does, sorted by name.
pub fn discover_bundles(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if dir.join(MANIFEST_FILE).is_file() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        return Ok(vec![(name, dir.to_path_buf())]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.join(MANIFEST_FILE).is_file() {
            found.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    if found.is_empty() {
        return Err(Error::MissingFile(dir.join(MANIFEST_FILE)));
    }
    found.sort();
    Ok(found)
}

fn pair_bundles(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let p = discover_bundles(pred)?;
    let g = discover_bundles(gt)?;
    if p.len() == 1 && g.len() == 1 && pred.join(MANIFEST_FILE).is_file() {
        let (name, gdir) = g.into_iter().next().expect("one");
        return Ok(vec![(name, p[0].1.clone(), gdir)]);
    }
    if p.iter().map(|x| &x.0).ne(g.iter().map(|x| &x.0)) {
        return Err(Error::InvalidConfig(format!(
            "prediction and ground-truth sequence names differ: {:?} vs {:?}",
            p.iter().map(|x| &x.0).collect::<Vec<_>>(),
            g.iter().map(|x| &x.0).collect::<Vec<_>>()
        )));
    }
    Ok(p.into_iter().zip(g).map(|((n, pd), (_, gd))| (n, pd, gd)).collect())
}

pub fn cmd_eval(args: &EvalArgs, stamp: bool) -> Result<i32> {
    let cfg = EvalConfig {
        apd_thresholds: args.thresholds.clone(),
        tau_threshold: args.tau,
        align: args.align,
        motion_theta: args.mask_theta,
    };
    cfg.validate()?;
    let pairs = pair_bundles(&args.pred, &args.gt)?;
    let results: Vec<Result<_>> = pairs
        .par_iter()
        .map(|(name, pd, gd)| {
            let pred = read_bundle(pd)?;
            let gt = read_bundle(gd)?;
            evaluate_sequence(name, &pred, &gt, &cfg)
        })
        .collect();
    let mut sequences = Vec::with_capacity(results.len());
    for (r, (name, ..)) in results.into_iter().zip(&pairs) {
        match r {
            Ok(s) => sequences.push(s),
            Err(Error::DegenerateAlignment) => {
                eprintln!("error: {name}: {}", Error::DegenerateAlignment);
                return Ok(EXIT_DEGENERATE_ALIGNMENT);
            }
            Err(e) => return Err(e),
        }
    }
    let mut report = EvalReport::new(cfg, sequences);
    if stamp {
        report.generated_at = Some(timestamp());
    }
    emit(&report, args.out.as_deref())?;
    if args.table {
        print!("{}", render_table(&report));
    }
    Ok(EXIT_OK)
}

/// Plain-text rendering of an evaluation report.
pub fn render_table(report: &EvalReport) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>10} {:>8} {:>10} {:>8} {:>8} {:>8}",
        "sequence", "epe_pts", "apd", "epe_flow", "tau", "abs_rel", "d<1.25"
    );
    for r in &report.sequences {
        let _ = writeln!(
            s,
            "{:<20} {:>10} {:>8} {:>10} {:>8} {:>8} {:>8}",
            r.name,
            cell(r.epe_points),
            cell(r.apd),
            cell(r.epe_flow),
            cell(r.tau),
            cell(Some(r.abs_rel)),
            cell(Some(r.delta_125))
        );
    }
    let a = &report.aggregate;
    let _ = writeln!(
        s,
        "{:<20} {:>10} {:>8} {:>10} {:>8} {:>8} {:>8}",
        "mean",
        cell(a.epe_points),
        cell(a.apd),
        cell(a.epe_flow),
        cell(a.tau),
        cell(a.abs_rel),
        cell(a.delta_125)
    );
    s
}

pub fn cmd_convert(bundle: &Path, from: Option<MotionRepr>, to: MotionRepr, out: &Path) -> Result<i32> {
    let seq = read_bundle(bundle)?;
    if let Some(f) = from {
        if f != seq.motion_repr {
            return Err(Error::InvalidConfig(format!(
                "--from {f} but the bundle stores `{}`",
                seq.motion_repr
            )));
        }
    }
    write_bundle(&convert_motion(&seq, to)?, out)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct LossFile<'a> {
    schema: &'static str,
    schema_version: u32,
    config: &'a LossConfig,
    report: &'a LossReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
}

pub fn cmd_loss(
    pred: &Path,
    gt: &Path,
    weights: Option<&str>,
    mask_theta: f64,
    out: Option<&Path>,
    stamp: bool,
) -> Result<i32> {
    let cfg = LossConfig {
        weights: weights.map(LossWeights::parse).transpose()?.unwrap_or_default(),
        motion_theta: mask_theta,
        ..LossConfig::default()
    };
    let report = total_loss(&read_bundle(pred)?, &read_bundle(gt)?, &cfg)?;
    emit(
        &LossFile {
            schema: "fourdkit.loss",
            schema_version: 1,
            config: &cfg,
            report: &report,
            generated_at: stamp.then(timestamp),
        },
        out,
    )?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct GradCheckFile {
    schema: &'static str,
    schema_version: u32,
    seed: u64,
    pass: bool,
    results: Vec<GradCheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
}

pub fn cmd_gradcheck(
    loss: &str,
    seed: u64,
    tol: f64,
    step: f64,
    samples: usize,
    out: Option<&Path>,
    stamp: bool,
) -> Result<i32> {
    if !(tol > 0.0 && step > 0.0) || samples == 0 {
        return Err(Error::InvalidConfig("tol, step and samples must be positive".into()));
    }
    let ids: Vec<LossId> = if loss == "all" {
        LossId::ALL.to_vec()
    } else {
        vec![loss.parse()?]
    };
    let results: Vec<GradCheckReport> = ids
        .par_iter()
        .map(|&id| grad_check_loss(id, seed, samples, step, tol))
        .collect();
    let pass = results.iter().all(|r| r.pass);
    for r in &results {
        eprintln!(
            "{:<12} {}  max rel err {:.3e} over {} samples",
            r.loss,
            if r.pass { "pass" } else { "FAIL" },
            r.max_rel_error,
            r.samples
        );
    }
    emit(
        &GradCheckFile {
            schema: "fourdkit.gradcheck",
            schema_version: 1,
            seed,
            pass,
            results,
            generated_at: stamp.then(timestamp),
        },
        out,
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_FAILURE })
}

#[derive(Debug, Serialize)]
struct ValidateFile<'a> {
    schema: &'static str,
    schema_version: u32,
    valid: bool,
    diagnostics: &'a [Diagnostic],
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
}

pub fn cmd_validate(bundle: &Path, out: Option<&Path>, stamp: bool) -> Result<i32> {
    let diagnostics = validate_bundle(bundle);
    for d in &diagnostics {
        eprintln!(
            "view {:?} {} {:?}: {} pixel(s), first at {:?}",
            d.view, d.grid, d.kind, d.count, d.first
        );
    }
    emit(
        &ValidateFile {
            schema: "fourdkit.validate",
            schema_version: 1,
            valid: diagnostics.is_empty(),
            diagnostics: &diagnostics,
            generated_at: stamp.then(timestamp),
        },
        out,
    )?;
    Ok(if diagnostics.is_empty() { EXIT_OK } else { EXIT_FAILURE })
}
