use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cfdetect_harness::config::{Algorithm, ExperimentSpec};
use cfdetect_harness::dataset::Dataset;
use cfdetect_harness::experiment::{detect, generate_trial, trial_seed};
use cfdetect_harness::selftest::{run_all, SuiteSizes};
use cfdetect_harness::sweep::{equal_error_sweep, expand, save_summary, SweepRow};
use clap::{Args, Parser, Subcommand};

/// Activity detection for cell-free massive random access: simulation,
/// detection and ROC benchmarks.
#[derive(Parser)]
#[command(name = "cfdetect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Master seed, replacing the one in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative-change stopping tolerance for the solvers.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Iteration cap for the solvers.
    #[arg(long)]
    max_iters: Option<usize>,
}

impl Overrides {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(seed) = self.seed {
            spec.system.seed = seed;
            spec.run.master_seed = Some(seed);
        }
        if let Some(tol) = self.rel_tol {
            spec.algorithm.solver.rel_tol = tol;
            spec.algorithm.cov.rel_tol = tol;
        }
        if let Some(iters) = self.max_iters {
            spec.algorithm.solver.max_outer_iters = iters;
            spec.algorithm.cov.max_sweeps = iters;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw one trial and write it as a dataset directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score every user of a dataset; writes `user,score` rows.
    Detect {
        #[arg(long, value_enum)]
        algo: Algorithm,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Solver settings; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write an `active` column deciding `score > rho`.
        #[arg(long)]
        rho: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Monte Carlo ROC run. Writes the ROC curve to `--out` (one file per
    /// value when the configuration sweeps a parameter, named
    /// `<stem>_<param><value>.csv`) and the equal-error summary to
    /// `<stem>.summary.csv`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        algo: Option<Algorithm>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the special-function and solver-update oracle suites.
    Selftest {
        /// Use the full acceptance sizes instead of the quick ones.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_spec(path: &Path, overrides: &Overrides) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    overrides.apply(&mut spec);
    spec.validate()?;
    Ok(spec)
}

fn simulate(config: &Path, out: &Path, overrides: &Overrides) -> Result<()> {
    let spec = load_spec(config, overrides)?;
    let trial = generate_trial(&spec, 0)?;
    Dataset::from_trial(&trial, &spec.perturbation).save(out)?;
    let active = trial.truth().iter().filter(|&&a| a).count();
    eprintln!(
        "wrote {} ({active} of {} users active)",
        out.display(),
        trial.truth().len()
    );
    Ok(())
}

fn run_detect(
    algo: Algorithm,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    rho: Option<f64>,
    overrides: &Overrides,
) -> Result<()> {
    let dataset = Dataset::load(data)?;
    let mut spec = match config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::desk(algo),
    };
    spec.algorithm.name = algo;
    overrides.apply(&mut spec);
    spec.algorithm.solver.validate()?;
    let seed = match overrides.seed {
        Some(master) => trial_seed(master, dataset.meta.trial.index),
        None => dataset.meta.trial_seed(),
    };
    let detection = detect(
        &spec.algorithm,
        &dataset.signals,
        &dataset.pilots,
        &dataset.knowledge(),
        seed,
    )
    .with_context(|| format!("{algo} detector failed on {}", data.display()))?;
    if !detection.converged {
        eprintln!(
            "warning: {algo} stopped at the iteration cap ({})",
            detection.iterations
        );
    }
    let mut w = csv::Writer::from_path(out).with_context(|| format!("cannot write {}", out.display()))?;
    match rho {
        Some(_) => w.write_record(["user", "score", "active"])?,
        None => w.write_record(["user", "score"])?,
    }
    for (n, s) in detection.scores.iter().enumerate() {
        let mut row = vec![n.to_string(), s.to_string()];
        if let Some(rho) = rho {
            row.push(u8::from(*s > rho).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn run_sweep(
    config: &Path,
    algo: Option<Algorithm>,
    trials: Option<usize>,
    out: &Path,
    overrides: &Overrides,
) -> Result<()> {
    let mut spec = load_spec(config, overrides)?;
    if let Some(algo) = algo {
        spec.algorithm.name = algo;
    }
    if let Some(trials) = trials {
        spec.run.trials = trials;
    }
    spec.validate()?;
    let paths: Vec<PathBuf> = match &spec.run.sweep {
        Some(s) => s
            .values
            .iter()
            .map(|v| with_suffix(out, &format!("_{}{v}.csv", s.param)))
            .collect(),
        None => vec![out.to_path_buf()],
    };
    let points = equal_error_sweep(&expand(&spec)?)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for (point, path) in points.iter().zip(&paths) {
        for f in &point.trials.failures {
            eprintln!("trial {} aborted: {}", f.index, f.message);
        }
        match &point.summary.roc {
            Some(roc) => roc.save(path)?,
            None => eprintln!("{}: no ROC (truth has no active or no inactive user)", point.row.param),
        }
        eprintln!(
            "{}: equal error {:.4} ± {:.4} over {} trials ({} aborted), converged {:.1}%",
            point.row.param,
            point.row.equal_error,
            point.row.ci95,
            point.trials.records.len(),
            point.trials.failures.len(),
            100.0 * point.trials.converged_share()
        );
        rows.push(point.row.clone());
    }
    save_summary(&rows, &with_suffix(out, ".summary.csv"))?;
    Ok(())
}

fn selftest(full: bool, seed: u64) -> Result<()> {
    let sizes = if full { SuiteSizes::full() } else { SuiteSizes::quick() };
    let checks = run_all(&sizes, seed);
    let mut failed = 0;
    for c in &checks {
        println!("{} {}", if c.passed() { "PASS" } else { "FAIL" }, c.summary());
        for f in &c.failures {
            println!("    {f}");
        }
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        bail!("{failed} of {} suites failed", checks.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out, overrides } => simulate(config, out, overrides),
        Command::Detect {
            algo,
            data,
            out,
            config,
            rho,
            overrides,
        } => run_detect(*algo, data, out, config.as_deref(), *rho, overrides),
        Command::Sweep {
            config,
            algo,
            trials,
            out,
            overrides,
        } => run_sweep(config, *algo, *trials, out, overrides),
        Command::Selftest { full, seed } => selftest(*full, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
