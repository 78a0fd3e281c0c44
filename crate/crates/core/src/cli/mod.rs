//! Command-line front end.

pub mod config;
pub mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{analyze_grid, estimate_point, GridReport, MAX_BOOTSTRAP_FAILURE_RATE};
use crate::qubit::GridPoint;
use crate::sim::{run_experiment, NoiseConfig};
use config::{parse_points, GridSpec, RunConfig};
use files::{Header, Staged, SweepRow, SweepSummary};

#[derive(Debug, Parser)]
#[command(name = "ctxsd", version, about = "Contextual advantage in minimum-error state discrimination")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the theoretical quantities on the grid.
    Grid(Common),
    /// Simulate the experiment and write raw counts.
    Simulate(Common),
    /// Run the full analysis on a counts file.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Counts file; defaults to `<out>/counts.csv`.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Simulate and analyze one point for a range of depolarizing strengths.
    SweepDepolarizing(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `noise.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Explicit grid, `"theta,alpha;theta,alpha"`.
    #[arg(long)]
    pub points: Option<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Common {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.noise.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(points) = &self.points {
            cfg.grid = GridSpec::Points(parse_points(points)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run() -> anyhow::Result<ExitCode> {
    run_with(Cli::parse())
}

pub fn run_with(cli: Cli) -> anyhow::Result<ExitCode> {
    let common = match &cli.command {
        Command::Grid(c) | Command::Simulate(c) | Command::SweepDepolarizing(c) => c,
        Command::Analyze { common, .. } => common,
    };
    let cfg = common.resolve()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        anyhow::ensure!(n > 0, "--workers must be positive");
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building worker pool")?;
    pool.install(|| match &cli.command {
        Command::Grid(_) => grid(&cfg),
        Command::Simulate(_) => simulate(&cfg),
        Command::Analyze { counts, .. } => {
            let path = counts
                .clone()
                .unwrap_or_else(|| cfg.output_dir.join("counts.csv"));
            analyze(&cfg, &path)
        }
        Command::SweepDepolarizing(_) => sweep(&cfg),
    })
}

fn finish(staged: Staged) -> anyhow::Result<()> {
    for path in staged.commit()? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn grid(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let header = Header::new(cfg);
    let mut staged = Staged::default();
    staged.add(
        cfg.output_dir.join("grid.csv"),
        files::grid_csv(&header, &cfg.grid.points())?,
    );
    finish(staged)?;
    Ok(ExitCode::SUCCESS)
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let header = Header::new(cfg);
    let tables = run_experiment(&cfg.grid.points(), &cfg.noise)?;
    let mut staged = Staged::default();
    staged.add(cfg.output_dir.join("counts.csv"), files::counts_csv(&header, &tables));
    finish(staged)?;
    Ok(ExitCode::SUCCESS)
}

/// Analysis outputs for a report, keyed by file name.
pub fn report_files(header: &Header, report: &GridReport) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![
        ("points.csv".to_string(), files::points_csv(header, report)),
        ("summary.json".to_string(), files::summary_json(header, report)),
        (
            "heatmap_ds_exp.csv".to_string(),
            files::heatmap_csv(header, report, |p| p.ds_exp),
        ),
        (
            "heatmap_ds_theory.csv".to_string(),
            files::heatmap_csv(header, report, |p| p.ds_theory),
        ),
    ];
    for &alpha in &header.config.slices {
        out.push((files::slice_file_name(alpha), files::slice_csv(header, report, alpha)));
    }
    out
}

pub fn analyze(cfg: &RunConfig, counts: &Path) -> anyhow::Result<ExitCode> {
    let (counts_header, tables) = files::read_counts(counts)?;
    // The noise model (detector calibration, seed) belongs to the data.
    let mut cfg = cfg.clone();
    cfg.noise = counts_header.config.noise;
    cfg.grid = GridSpec::Points(tables.iter().map(|t| [t.point.theta, t.point.alpha]).collect());
    let header = Header::new(&cfg);

    let report = analyze_grid(&tables, cfg.bootstrap, cfg.noise.seed, cfg.k_sigma);
    let mut staged = Staged::default();
    for (name, bytes) in report_files(&header, &report) {
        staged.add(cfg.output_dir.join(name), bytes);
    }
    finish(staged)?;

    for f in &report.failures {
        eprintln!("point {} failed: {}", f.point, f.error);
    }
    if let Some(fid) = &report.fidelity {
        println!("fidelity {:.4} ({} points excluded)", fid.f, fid.excluded.len());
    }
    println!("mean mixture weight {:.4}", report.mean_mixture_weight);
    if report.failure_rate() > MAX_BOOTSTRAP_FAILURE_RATE {
        eprintln!(
            "{} of {} points failed",
            report.failures.len(),
            report.failures.len() + report.points.len()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

/// Depolarizing strength at which Δs_exp first crosses zero, by linear
/// interpolation between neighbouring sweep points.
pub fn crossing(rows: &[(f64, f64)]) -> Option<f64> {
    if let Some(&(p, ds)) = rows.first() {
        if ds <= 0.0 {
            return Some(p);
        }
    }
    rows.windows(2).find_map(|w| {
        let ((p0, d0), (p1, d1)) = (w[0], w[1]);
        (d0 > 0.0 && d1 <= 0.0).then(|| p0 + (p1 - p0) * d0 / (d0 - d1))
    })
}

pub fn sweep_rows(cfg: &RunConfig) -> anyhow::Result<Vec<SweepRow>> {
    let [theta, alpha] = cfg.sweep.point;
    let point = GridPoint::checked(theta, alpha)?;
    cfg.sweep
        .p
        .par_iter()
        .map(|&p| {
            let noise = NoiseConfig {
                depolarizing_p: p,
                ..cfg.noise
            };
            let table = run_experiment(&[point], &noise)?.remove(0);
            let estimate = estimate_point(&table, cfg.bootstrap, noise.seed, cfg.k_sigma)
                .with_context(|| format!("sweep p = {p}"))?;
            Ok(SweepRow { p, estimate })
        })
        .collect()
}

pub fn sweep(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let header = Header::new(cfg);
    let rows = sweep_rows(cfg)?;
    let ds: Vec<(f64, f64)> = rows.iter().map(|r| (r.p, r.estimate.ds_exp)).collect();
    let summary = SweepSummary {
        format_version: header.format_version,
        config: cfg.clone(),
        theta: cfg.sweep.point[0],
        alpha: cfg.sweep.point[1],
        monotone_nonincreasing: ds.windows(2).all(|w| w[1].1 <= w[0].1),
        p_star: crossing(&ds),
    };
    let mut staged = Staged::default();
    staged.add(cfg.output_dir.join("sweep.csv"), files::sweep_csv(&header, &rows));
    staged.add(cfg.output_dir.join("sweep.json"), files::sweep_json(&header, &summary));
    finish(staged)?;
    match summary.p_star {
        Some(p) => println!("advantage vanishes at p ~ {p:.3}"),
        None => println!("advantage persists over the whole sweep"),
    }
    Ok(ExitCode::SUCCESS)
}
