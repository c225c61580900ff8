//! Command-line driver: one subcommand per pipeline stage plus the
//! composite run. Flags override the corresponding config keys.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diskzeta::config::RunConfig;
use diskzeta::orbitdb;
use diskzeta::pipeline::{self, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "diskzeta")]
#[command(about = "Dirichlet series laboratory for planar disk billiards")]
struct Cli {
    /// Path to the run configuration file.
    #[arg(long, global = true, default_value = "run.cfg")]
    config: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Output directory (overrides [output] dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Maximum reflections per itinerary (overrides [sweep] m_max).
    #[arg(long, global = true)]
    m_max: Option<usize>,

    /// Truncation horizon (overrides [sweep] x_max).
    #[arg(long, global = true)]
    x_max: Option<f64>,

    /// Frequency grouping tolerance (overrides [sweep] group_tol).
    #[arg(long, global = true)]
    group_tol: Option<f64>,

    /// Solver gradient tolerance (overrides [sweep] solver_tol).
    #[arg(long, global = true)]
    solver_tol: Option<f64>,

    /// Counting-band epsilon (overrides [analysis] eps).
    #[arg(long, global = true)]
    eps: Option<f64>,

    /// Gap exponent delta (overrides [analysis] delta).
    #[arg(long, global = true)]
    delta: Option<f64>,

    /// Tail exponent gamma (overrides [analysis] gamma).
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Gap constant C (overrides [analysis] c_gap).
    #[arg(long, global = true)]
    c_gap: Option<f64>,

    /// Largest denominator for the rational-dependence probe.
    #[arg(long, global = true)]
    q_max: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check disjointness and the eclipse condition; write validation.json.
    Validate,
    /// Enumerate and solve every itinerary; write orbits.db.
    Sweep,
    /// Assemble the spectrum from orbits.db; write spectrum.csv/json.
    Spectrum,
    /// Entropy, abscissas, band and window diagnostics; write analysis.json.
    Analyze,
    /// Run the non-entirety scanners; write criteria.json and intervals.csv.
    Criteria,
    /// Evaluate the bump probe against the ray measure.
    Probe {
        /// Bump center.
        #[arg(long)]
        ell: Option<f64>,
        /// Bump width scale (support radius 1/m_scale).
        #[arg(long)]
        m_scale: Option<f64>,
    },
    /// Rebuild all derived reports from a cached orbits.db.
    Report,
    /// Full cold run: validate through criteria plus the report bundle.
    Pipeline,
}

fn apply_overrides(cfg: &mut RunConfig, ov: &Overrides) {
    if let Some(dir) = &ov.out_dir {
        cfg.output.dir = dir.clone();
    }
    if let Some(v) = ov.m_max {
        cfg.sweep.m_max = v;
    }
    if let Some(v) = ov.x_max {
        cfg.sweep.x_max = Some(v);
    }
    if let Some(v) = ov.group_tol {
        cfg.sweep.group_tol = Some(v);
    }
    if let Some(v) = ov.solver_tol {
        cfg.sweep.solver_tol = v;
    }
    if let Some(v) = ov.eps {
        cfg.analysis.eps = v;
    }
    if let Some(v) = ov.delta {
        cfg.analysis.delta = Some(v);
    }
    if let Some(v) = ov.gamma {
        cfg.analysis.gamma = Some(v);
    }
    if let Some(v) = ov.c_gap {
        cfg.analysis.c_gap = v;
    }
    if let Some(v) = ov.q_max {
        cfg.analysis.q_max = v;
    }
}

fn load_db(
    cfg: &RunConfig,
    config: &diskzeta::Configuration,
) -> Result<orbitdb::OrbitDatabase, PipelineError> {
    let path = cfg.output.dir.join("orbits.db");
    Ok(orbitdb::load_orbits(&path, config, &cfg.hash())?)
}

fn write_text(dir: &std::path::Path, name: &str, body: &str) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    std::fs::write(dir.join(name), body).map_err(|source| PipelineError::Io {
        path: dir.join(name),
        source,
    })
}

fn write_json<T: serde::Serialize>(
    dir: &std::path::Path,
    name: &str,
    value: &T,
) -> Result<(), PipelineError> {
    let mut body = serde_json::to_string_pretty(value).expect("serialize");
    body.push('\n');
    write_text(dir, name, &body)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = RunConfig::from_path(&cli.config)?;
    apply_overrides(&mut cfg, &cli.overrides);
    let out = cfg.output.dir.clone();

    match cli.command {
        Command::Validate => {
            let (config, report) = pipeline::stage_validate(&cfg)?;
            write_json(&out, "validation.json", &report)?;
            println!(
                "geometry ok: {} disks, d0 = {:.6}, min clearance = {:.6}",
                config.len(),
                config.d0(),
                report.min_clearance
            );
        }
        Command::Sweep => {
            let (config, _) = pipeline::stage_validate(&cfg)?;
            let db = pipeline::stage_sweep(&cfg, &config)?;
            write_text(&out, "orbits.db", &orbitdb::render_orbits(&db))?;
            println!(
                "solved {} itineraries ({} primitive), horizon {:.6}",
                db.records.len(),
                db.primitives().count(),
                db.horizon
            );
        }
        Command::Spectrum => {
            let (config, _) = pipeline::stage_validate(&cfg)?;
            let db = load_db(&cfg, &config)?;
            let spectrum = pipeline::stage_spectrum(&cfg, &config, &db)?;
            write_text(&out, "spectrum.csv", &pipeline::spectrum_csv(&spectrum))?;
            write_json(&out, "spectrum.json", &spectrum)?;
            println!("{} spectral lines up to {:.6}", spectrum.len(), spectrum.x_max());
        }
        Command::Analyze => {
            let (config, _) = pipeline::stage_validate(&cfg)?;
            let db = load_db(&cfg, &config)?;
            let spectrum = pipeline::stage_spectrum(&cfg, &config, &db)?;
            let report = pipeline::stage_analyze(&cfg, &db, &spectrum)?;
            write_json(&out, "analysis.json", &report)?;
            write_text(
                &out,
                "diagnostics.csv",
                &pipeline::diagnostics_csv(&spectrum, &report),
            )?;
            println!(
                "h = {:.6}, sigma_a = {:.6}, sigma_c = {:.6}",
                report.h.h, report.sigma_a.value, report.sigma_c.value
            );
        }
        Command::Criteria => {
            let (config, _) = pipeline::stage_validate(&cfg)?;
            let db = load_db(&cfg, &config)?;
            let spectrum = pipeline::stage_spectrum(&cfg, &config, &db)?;
            let analysis = pipeline::stage_analyze(&cfg, &db, &spectrum)?;
            let report = pipeline::stage_criteria(&cfg, &config, &db, &spectrum, &analysis)?;
            write_json(&out, "criteria.json", &report)?;
            write_text(
                &out,
                "intervals.csv",
                &pipeline::intervals_csv(&report.cluster_scans),
            )?;
            println!(
                "{} gap-and-tail witnesses, {} cluster windows",
                report.witnesses.count,
                report.cluster_scans.len()
            );
        }
        Command::Probe { ell, m_scale } => {
            let (config, _) = pipeline::stage_validate(&cfg)?;
            let db = load_db(&cfg, &config)?;
            let value = pipeline::run_probe(&cfg, &config, &db, ell, m_scale)?;
            println!("{value:.16e}");
        }
        Command::Report => {
            let (config, validation) = pipeline::stage_validate(&cfg)?;
            let db = load_db(&cfg, &config)?;
            let spectrum = pipeline::stage_spectrum(&cfg, &config, &db)?;
            let analysis = pipeline::stage_analyze(&cfg, &db, &spectrum)?;
            let criteria = pipeline::stage_criteria(&cfg, &config, &db, &spectrum, &analysis)?;
            let artifacts = pipeline::PipelineArtifacts {
                config,
                validation,
                db,
                spectrum,
                analysis,
                criteria,
            };
            let summary = pipeline::write_outputs(&cfg, &artifacts, &out)?;
            println!("report bundle written to {}", summary.out_dir.display());
        }
        Command::Pipeline => {
            let summary = pipeline::run_pipeline(&cfg)?;
            println!(
                "pipeline complete: {} itineraries, {} lines, h = {:.6}; outputs in {}",
                summary.n_words,
                summary.n_lines,
                summary.h,
                summary.out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error in stage {}: {e}", e.stage());
            ExitCode::FAILURE
        }
    }
}
