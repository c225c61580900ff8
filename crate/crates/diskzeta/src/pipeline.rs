//! End-to-end orchestration: validate geometry, sweep itineraries into a
//! solved orbit database, assemble the spectrum, run the analysis and
//! criteria scanners, and write deterministic CSV/JSON reports. Identical
//! configuration and binary give byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    self, AbscissaEstimate, AnalysisError, BandCheck, EtaEval, HEstimate, SigmaCEstimate,
    WindowCount,
};
use crate::config::{ConfigError, RunConfig};
use crate::criteria::{
    self, BohrOutcome, ClassifyOutcome, ClusterCount, ClusterInterval, ConditionLOutcome,
    CriteriaError, CriteriaParams, LiminfTail, RationalIndependenceReport, TripleSeparationScan,
    WitnessScan,
};
use crate::geometry::{Configuration, Disk, GeometryError, ValidationReport};
use crate::linearization::{
    det_id_minus_power, fit_det_bounds, poincare_map, trace_power, DetBoundsFit,
    LinearizationError,
};
use crate::orbit::{locate_orbit, SolverError};
use crate::orbitdb::{self, DbError, OrbitDatabase, OrbitRecord};
use crate::spectrum::{build_spectrum, probe_fd, PrimitiveRay, ProbeParams, Spectrum, SpectrumError};
use crate::symbolic::{enumerate_words, SymbolicError, Word};
use crate::vec2::Vec2;

/// Environment variable controlling the sweep worker count; the only
/// environment input the pipeline reads.
pub const WORKERS_ENV: &str = "DISKZETA_WORKERS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[geometry] {0}")]
    Geometry(#[from] GeometryError),
    #[error("[geometry] eclipse validation failed (min clearance {0})")]
    NonEclipse(f64),
    #[error("[geometry] {0}")]
    Config(#[from] ConfigError),
    #[error("[sweep] {0}")]
    Symbolic(#[from] SymbolicError),
    #[error("[sweep] {0}")]
    Solver(#[from] SolverError),
    #[error("[sweep] x_max = {requested} exceeds the enumeration horizon {horizon}")]
    HorizonExceeded { requested: f64, horizon: f64 },
    #[error("[sweep] repetition monodromy for {word} disagrees with the primitive power ({got} vs {expected})")]
    RepetitionMismatch {
        word: Word,
        got: f64,
        expected: f64,
    },
    #[error("[linearize] {0}")]
    Linearization(#[from] LinearizationError),
    #[error("[spectrum] {0}")]
    Spectrum(#[from] SpectrumError),
    #[error("[spectrum] probe parameters missing: pass --ell/--m-scale or a [probe] section")]
    ProbeParamsMissing,
    #[error("[analysis] {0}")]
    Analysis(#[from] AnalysisError),
    #[error("[criteria] {0}")]
    Criteria(#[from] CriteriaError),
    #[error("[orbitdb] {0}")]
    Db(#[from] DbError),
    #[error("[io] {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Stage attribution for exit reporting.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Geometry(_) | PipelineError::NonEclipse(_) | PipelineError::Config(_) => {
                "geometry"
            }
            PipelineError::Symbolic(_)
            | PipelineError::Solver(_)
            | PipelineError::HorizonExceeded { .. }
            | PipelineError::RepetitionMismatch { .. } => "sweep",
            PipelineError::Linearization(_) => "linearize",
            PipelineError::Spectrum(_) | PipelineError::ProbeParamsMissing => "spectrum",
            PipelineError::Analysis(_) => "analysis",
            PipelineError::Criteria(_) => "criteria",
            PipelineError::Db(_) => "orbitdb",
            PipelineError::Io { .. } => "io",
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Stage: geometry.
// ---------------------------------------------------------------------------

pub fn stage_validate(
    cfg: &RunConfig,
) -> Result<(Configuration, ValidationReport), PipelineError> {
    let disks: Vec<Disk> = cfg
        .disks
        .iter()
        .map(|&(x, y, r)| Disk::new(Vec2::new(x, y), r))
        .collect();
    let config = Configuration::new(disks)?;
    let report = crate::geometry::validate_non_eclipse(&config);
    if !report.pass {
        return Err(PipelineError::NonEclipse(report.min_clearance));
    }
    Ok((config, report))
}

// ---------------------------------------------------------------------------
// Stage: sweep (enumerate + solve + linearize).
// ---------------------------------------------------------------------------

fn worker_count() -> usize {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        if let Ok(n) = v.parse::<usize>() {
            return n.clamp(1, 64);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1)
}

/// Effective truncation horizon: just under (m_max + 1) d0, which no ray
/// outside the enumerated itineraries can undercut.
pub fn default_horizon(m_max: usize, d0: f64) -> f64 {
    (m_max as f64 + 1.0) * d0 * (1.0 - 1e-12) - 1e-9 * d0
}

/// Solves every admissible itinerary with m <= m_max over a deterministic
/// worker pool and attaches monodromy data. Repetition records keep their
/// own solved geometry but take trace and |det(Id-P)| from the primitive's
/// matrix power, cross-checked against the directly composed product.
pub fn stage_sweep(
    cfg: &RunConfig,
    config: &Configuration,
) -> Result<OrbitDatabase, PipelineError> {
    let d0 = config.d0();
    let horizon = default_horizon(cfg.sweep.m_max, d0);
    let x_max = match cfg.sweep.x_max {
        Some(x) if x > horizon => {
            return Err(PipelineError::HorizonExceeded {
                requested: x,
                horizon,
            })
        }
        Some(x) => x,
        None => horizon,
    };
    let words = enumerate_words(config.len() as u8, cfg.sweep.m_max)?;
    let tol = cfg.sweep.solver_tol;

    let workers = worker_count().min(words.len().max(1));
    let chunk = words.len().div_ceil(workers);
    let mut solved: Vec<Option<Result<OrbitRecord, PipelineError>>> = Vec::new();
    solved.resize_with(words.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, piece) in words.chunks(chunk).enumerate() {
            let base = w * chunk;
            handles.push(scope.spawn(move || {
                let mut out = Vec::with_capacity(piece.len());
                for word in piece {
                    out.push(solve_record(config, word, tol));
                }
                (base, out)
            }));
        }
        for handle in handles {
            let (base, results) = handle.join().expect("sweep worker panicked");
            for (offset, res) in results.into_iter().enumerate() {
                solved[base + offset] = Some(res);
            }
        }
    });

    let mut records = Vec::with_capacity(words.len());
    for slot in solved {
        records.push(slot.expect("all chunks processed")?);
    }

    // Repetition records inherit the primitive matrix power.
    let primitive_trace: std::collections::BTreeMap<Word, f64> = records
        .iter()
        .filter(|r| r.word.is_primitive())
        .map(|r| (r.word.clone(), r.trace))
        .collect();
    for r in &mut records {
        let decomp = r.word.primitive_decomposition();
        if decomp.repetition > 1 {
            let base = primitive_trace
                .get(&decomp.primitive)
                .expect("primitive of an enumerated repetition is enumerated");
            let expected = trace_power(*base, decomp.repetition);
            if (r.trace - expected).abs() > 1e-8 * expected.abs().max(1.0) {
                return Err(PipelineError::RepetitionMismatch {
                    word: r.word.clone(),
                    got: r.trace,
                    expected,
                });
            }
            r.trace = expected;
            r.det_id_minus = det_id_minus_power(*base, decomp.repetition);
        }
    }

    Ok(OrbitDatabase {
        config_hash: cfg.hash(),
        horizon: x_max,
        records,
    })
}

fn solve_record(
    config: &Configuration,
    word: &Word,
    tol: f64,
) -> Result<OrbitRecord, PipelineError> {
    let orbit = locate_orbit(config, word, tol)?;
    let mono = poincare_map(config, &orbit)?;
    Ok(OrbitRecord {
        word: word.clone(),
        m: orbit.m(),
        tau: orbit.tau,
        tau_primitive: orbit.tau_primitive,
        angles: orbit.angles,
        trace: mono.trace,
        det_id_minus: mono.det_id_minus,
        residual: orbit.residual_norm,
    })
}

// ---------------------------------------------------------------------------
// Stage: spectrum.
// ---------------------------------------------------------------------------

pub fn primitive_rays(db: &OrbitDatabase) -> Vec<PrimitiveRay> {
    db.primitives()
        .map(|r| PrimitiveRay {
            word: r.word.clone(),
            tau_primitive: r.tau_primitive,
            m: r.m,
            trace: r.trace,
        })
        .collect()
}

pub fn stage_spectrum(
    cfg: &RunConfig,
    config: &Configuration,
    db: &OrbitDatabase,
) -> Result<Spectrum, PipelineError> {
    let group_tol = cfg.sweep.group_tol.unwrap_or(1e-9 * config.d0());
    Ok(build_spectrum(&primitive_rays(db), db.horizon, group_tol)?)
}

// ---------------------------------------------------------------------------
// Stage: analysis.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RelationCheck {
    pub sigma_c: f64,
    pub sigma_a: f64,
    pub h: f64,
    /// Combined fit uncertainty: entropy CI, both proxy spreads, and the
    /// finite-truncation term log(2N)/lambda_mid.
    pub slack: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummabilityDiag {
    pub k: u32,
    pub s_re: f64,
    /// Typical mean at the end of the u grid.
    pub final_value: f64,
    /// Relative drift over the last quarter of the grid.
    pub drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KuniyedaDiag {
    pub k: u32,
    pub u: f64,
    pub log_abs_rk_over_u_pow_k: f64,
    pub log_abs_rk_over_u: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub config_hash: String,
    pub n_records: usize,
    pub n_primitives: usize,
    pub n_lines: usize,
    pub horizon: f64,
    pub h: HEstimate,
    pub det_fit: DetBoundsFit,
    pub envelope_violations: usize,
    pub sigma_a: AbscissaEstimate,
    pub sigma_c: SigmaCEstimate,
    pub relation: RelationCheck,
    pub band: BandCheck,
    pub eta_sample: Option<EtaSample>,
    pub lemma31: Vec<WindowCount>,
    pub summability: Vec<SummabilityDiag>,
    pub kuniyeda: Vec<KuniyedaDiag>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaSample {
    pub s_re: f64,
    pub eval: EtaEval,
}

pub fn stage_analyze(
    cfg: &RunConfig,
    db: &OrbitDatabase,
    spectrum: &Spectrum,
) -> Result<AnalysisReport, PipelineError> {
    let primitive_lengths = db.primitive_lengths();
    let h = analysis::estimate_h(&primitive_lengths)?;

    let entries: Vec<(Word, f64, f64)> = db
        .records
        .iter()
        .map(|r| (r.word.clone(), r.tau, r.det_id_minus))
        .collect();
    let det_fit = fit_det_bounds(&entries)?;
    let envelope_violations = entries
        .iter()
        .filter(|(_, tau, det)| !det_fit.envelope_holds(*tau, *det))
        .count();

    let sigma_a = analysis::estimate_sigma_a(spectrum)?;
    let sigma_c = analysis::estimate_sigma_c(spectrum, Some((&h, &det_fit)))?;
    let n = spectrum.len();
    let lambda_mid = spectrum.lambda(n / 2);
    let slack = h.ci + sigma_a.spread + sigma_c.spread + (2.0 * (n as f64 + 1.0)).ln() / lambda_mid;
    let relation = RelationCheck {
        sigma_c: sigma_c.value,
        sigma_a: sigma_a.value,
        h: h.h,
        slack,
        ok: sigma_c.value >= sigma_a.value - h.h - slack,
    };

    // Ray lengths with repetitions for the counting band.
    let mut ray_lengths = Vec::new();
    for r in db.primitives() {
        let mut k = 1u32;
        while k as f64 * r.tau_primitive <= db.horizon {
            ray_lengths.push(k as f64 * r.tau_primitive);
            k += 1;
        }
    }
    let band = analysis::counting_band_check(&ray_lengths, h.h, cfg.analysis.eps, db.horizon);

    // Sample evaluation of the series comfortably inside the tail-bound
    // validity region.
    let s_re = h.h + analysis::BAND_EPS - det_fit.d1 / 2.0 + 1.0;
    let eta_sample = analysis::eval_eta(spectrum, Complex64::new(s_re, 0.0), &h, &det_fit)
        .ok()
        .map(|eval| EtaSample { s_re, eval });

    // Window counts at the configured scan bases.
    let eps = cfg.analysis.eps.min(0.49);
    let eta = cfg
        .analysis
        .eta
        .unwrap_or(eps / (24.0 * (1.0 + eps)));
    let mut lemma31 = Vec::new();
    for b in resolve_b_windows(cfg, spectrum) {
        if b + eps <= db.horizon {
            lemma31.push(analysis::window_count(
                &primitive_lengths,
                db.horizon,
                b,
                eps,
                eta,
                &h,
                band.onset,
            )?);
        }
    }

    // Typical-mean convergence diagnostics at a real evaluation point in
    // the summable range.
    let u_grid: Vec<f64> = (1..=64)
        .map(|i| spectrum.lambda(0) + (db.horizon * 4.0 - spectrum.lambda(0)) * i as f64 / 64.0)
        .collect();
    let mut summability = Vec::new();
    for k in [1u32, 2] {
        let sweep = analysis::typical_mean_sweep(spectrum, k, Complex64::new(s_re, 0.0), &u_grid);
        let last = sweep.last().unwrap().1.re;
        let quarter = &sweep[(sweep.len() * 3) / 4..];
        let (lo, hi) = quarter.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, v| {
            (acc.0.min(v.1.re), acc.1.max(v.1.re))
        });
        summability.push(SummabilityDiag {
            k,
            s_re,
            final_value: last,
            drift: (hi - lo).abs() / last.abs().max(1e-300),
        });
    }

    // Remainder diagnostics under both printed normalizations.
    let mut kuniyeda = Vec::new();
    for k in [1u32, 2] {
        for frac in [0.25, 0.5, 0.75] {
            let u = spectrum.lambda(0) + frac * (spectrum.lambda(n - 1) - spectrum.lambda(0));
            let rk = analysis::remainder_rk(spectrum, u, k);
            if !rk.empty && rk.value != 0.0 {
                kuniyeda.push(KuniyedaDiag {
                    k,
                    u,
                    log_abs_rk_over_u_pow_k: rk.value.abs().ln() / u.powi(k as i32),
                    log_abs_rk_over_u: rk.value.abs().ln() / u,
                });
            }
        }
    }

    Ok(AnalysisReport {
        config_hash: db.config_hash.clone(),
        n_records: db.records.len(),
        n_primitives: primitive_lengths.len(),
        n_lines: spectrum.len(),
        horizon: db.horizon,
        h,
        det_fit,
        envelope_violations,
        sigma_a,
        sigma_c,
        relation,
        band,
        eta_sample,
        lemma31,
        summability,
        kuniyeda,
    })
}

fn resolve_b_windows(cfg: &RunConfig, spectrum: &Spectrum) -> Vec<f64> {
    if let Some(ws) = &cfg.analysis.b_windows {
        return ws.clone();
    }
    if spectrum.is_empty() {
        return Vec::new();
    }
    let x = spectrum.x_max();
    let lambda_min = spectrum.lambda(0);
    [0.6 * x, 0.75 * x]
        .into_iter()
        .map(|b| (b * 10.0).round() / 10.0)
        .filter(|&b| b >= lambda_min && b + 1.0 <= x)
        .collect()
}

// ---------------------------------------------------------------------------
// Stage: criteria.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ClusterScan {
    pub b: f64,
    pub intervals: Vec<ClusterInterval>,
    pub census: Option<ClusterCount>,
    pub classifications: Vec<ClassifyOutcome>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriteriaReport {
    pub config_hash: String,
    pub params: CriteriaParams,
    pub param_flags: Vec<String>,
    pub gamma_exceeds_neg_sigma_c: bool,
    pub bohr: BohrOutcome,
    pub witnesses: WitnessScan,
    /// Scan of the shifted series when the convergence abscissa proxy is
    /// nonnegative.
    pub shifted_witnesses: Option<WitnessScan>,
    pub liminf: LiminfTail,
    pub cluster_scans: Vec<ClusterScan>,
    pub condition_l: ConditionLOutcome,
    pub triple_separation: TripleSeparationScan,
    pub rational_independence: RationalIndependenceReport,
    pub band_onset: Option<f64>,
}

pub fn stage_criteria(
    cfg: &RunConfig,
    config: &Configuration,
    db: &OrbitDatabase,
    spectrum: &Spectrum,
    analysis_report: &AnalysisReport,
) -> Result<CriteriaReport, PipelineError> {
    let h = analysis_report.h.h;
    let sigma_c = analysis_report.sigma_c.value;
    let delta = cfg.analysis.delta.unwrap_or(h + 2.5);
    let gamma = cfg
        .analysis
        .gamma
        .unwrap_or_else(|| (analysis_report.det_fit.d2 / 2.0 + 2.0).max(10.0 * sigma_c.abs()));
    let params = CriteriaParams {
        delta,
        gamma,
        c_gap: cfg.analysis.c_gap,
    };

    let bohr = criteria::check_bohr(spectrum)?;
    let witnesses = criteria::find_gap_tail_witnesses(spectrum, params);
    let shifted_witnesses = if sigma_c >= 0.0 {
        let shifted = spectrum.shifted(sigma_c + 1.0);
        Some(criteria::find_gap_tail_witnesses(&shifted, params))
    } else {
        None
    };
    let liminf = criteria::liminf_tail_exponent(spectrum);

    let mut cluster_scans = Vec::new();
    for b in resolve_b_windows(cfg, spectrum) {
        match criteria::build_cluster_intervals(spectrum, delta, b) {
            Ok(intervals) => {
                let census = criteria::count_cluster_sets(spectrum, cfg.analysis.eps, delta, b).ok();
                let classifications = intervals
                    .iter()
                    .map(|iv| criteria::classify_interval(spectrum, iv, gamma))
                    .collect();
                cluster_scans.push(ClusterScan {
                    b,
                    intervals,
                    census,
                    classifications,
                    skipped: None,
                });
            }
            Err(e) => cluster_scans.push(ClusterScan {
                b,
                intervals: Vec::new(),
                census: None,
                classifications: Vec::new(),
                skipped: Some(e.to_string()),
            }),
        }
    }

    let condition_l = criteria::check_condition_l(spectrum, config.d0(), &analysis_report.det_fit);
    let triple_separation =
        criteria::triple_separation_scan(spectrum, delta, cfg.analysis.c_gap, Some(&condition_l));
    let primitive_lengths = db.primitive_lengths();
    let rational_independence = criteria::rational_independence_test(
        &primitive_lengths,
        cfg.analysis.q_max,
        cfg.analysis.tol_rational,
    )?;

    Ok(CriteriaReport {
        config_hash: db.config_hash.clone(),
        params,
        param_flags: params.flags(h),
        gamma_exceeds_neg_sigma_c: gamma > -sigma_c,
        bohr,
        witnesses,
        shifted_witnesses,
        liminf,
        cluster_scans,
        condition_l,
        triple_separation,
        rational_independence,
        band_onset: analysis_report.band.onset,
    })
}

// ---------------------------------------------------------------------------
// Exports.
// ---------------------------------------------------------------------------

pub fn spectrum_csv(spectrum: &Spectrum) -> String {
    let mut out = String::from("lambda,a,n_contributors\n");
    for line in spectrum.lines() {
        writeln!(
            out,
            "{:.16e},{:.16e},{}",
            line.lambda,
            line.a,
            line.contributors.len()
        )
        .unwrap();
    }
    out
}

pub fn intervals_csv(scans: &[ClusterScan]) -> String {
    let mut out = String::from(
        "b,k_center,p,q,lo_index,hi_index,lo,hi,left_gap,right_gap,block_sum,eq41_ok\n",
    );
    let opt = |v: Option<f64>| v.map(|g| format!("{g:.16e}")).unwrap_or_default();
    for scan in scans {
        for iv in &scan.intervals {
            writeln!(
                out,
                "{:.16e},{},{},{},{},{},{:.16e},{:.16e},{},{},{:.16e},{}",
                scan.b,
                iv.k_center,
                iv.p,
                iv.q,
                iv.lo_index,
                iv.hi_index,
                iv.lo,
                iv.hi,
                opt(iv.left_gap),
                opt(iv.right_gap),
                iv.block_sum,
                iv.eq41_ok
            )
            .unwrap();
        }
    }
    out
}

/// u-grid diagnostic sweeps for external plotting.
pub fn diagnostics_csv(spectrum: &Spectrum, report: &AnalysisReport) -> String {
    let mut out = String::from("kind,k,s_re,u,value_re,value_im\n");
    let n = spectrum.len();
    let u_grid: Vec<f64> = (1..=64)
        .map(|i| {
            spectrum.lambda(0)
                + (report.horizon * 4.0 - spectrum.lambda(0)) * i as f64 / 64.0
        })
        .collect();
    for k in [0u32, 1, 2] {
        let sweep = analysis::typical_mean_sweep(
            spectrum,
            k,
            Complex64::new(report.eta_sample.as_ref().map(|e| e.s_re).unwrap_or(1.0), 0.0),
            &u_grid,
        );
        for (u, v) in sweep {
            writeln!(
                out,
                "typical_mean,{k},{:.16e},{u:.16e},{:.16e},{:.16e}",
                report.eta_sample.as_ref().map(|e| e.s_re).unwrap_or(1.0),
                v.re,
                v.im
            )
            .unwrap();
        }
    }
    for k in [1u32, 2] {
        for i in 0..=32 {
            let u = spectrum.lambda(0)
                + (spectrum.lambda(n - 1) - spectrum.lambda(0)) * i as f64 / 33.0;
            let rk = analysis::remainder_rk(spectrum, u, k);
            writeln!(out, "remainder,{k},0,{u:.16e},{:.16e},0", rk.value).unwrap();
        }
    }
    for (lambda, proxy) in &report.sigma_a.proxies {
        writeln!(out, "sigma_a_proxy,0,0,{lambda:.16e},{proxy:.16e},0").unwrap();
    }
    for (lambda, proxy) in &report.sigma_c.proxies {
        writeln!(out, "sigma_c_proxy,0,0,{lambda:.16e},{proxy:.16e},0").unwrap();
    }
    out
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Composite runs.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub config_hash: String,
    pub out_dir: PathBuf,
    pub n_words: usize,
    pub n_primitives: usize,
    pub n_lines: usize,
    pub horizon: f64,
    pub h: f64,
    pub sigma_a: f64,
    pub sigma_c: f64,
    pub witness_count: usize,
    pub files: Vec<String>,
}

#[derive(Debug)]
pub struct PipelineArtifacts {
    pub config: Configuration,
    pub validation: ValidationReport,
    pub db: OrbitDatabase,
    pub spectrum: Spectrum,
    pub analysis: AnalysisReport,
    pub criteria: CriteriaReport,
}

/// Cold full run: all stages from the configuration alone.
pub fn run_stages(cfg: &RunConfig) -> Result<PipelineArtifacts, PipelineError> {
    let (config, validation) = stage_validate(cfg)?;
    let db = stage_sweep(cfg, &config)?;
    let spectrum = stage_spectrum(cfg, &config, &db)?;
    let analysis = stage_analyze(cfg, &db, &spectrum)?;
    let criteria = stage_criteria(cfg, &config, &db, &spectrum, &analysis)?;
    Ok(PipelineArtifacts {
        config,
        validation,
        db,
        spectrum,
        analysis,
        criteria,
    })
}

/// Writes the full report bundle for precomputed artifacts and returns the
/// summary.
pub fn write_outputs(
    cfg: &RunConfig,
    artifacts: &PipelineArtifacts,
    out_dir: &Path,
) -> Result<PipelineSummary, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let files = vec![
        "validation.json".to_string(),
        "orbits.db".to_string(),
        "spectrum.csv".to_string(),
        "spectrum.json".to_string(),
        "analysis.json".to_string(),
        "diagnostics.csv".to_string(),
        "criteria.json".to_string(),
        "intervals.csv".to_string(),
        "report.json".to_string(),
    ];
    write_file(&out_dir.join("validation.json"), &to_json(&artifacts.validation))?;
    orbitdb::save_orbits(&artifacts.db, &out_dir.join("orbits.db"))?;
    write_file(&out_dir.join("spectrum.csv"), &spectrum_csv(&artifacts.spectrum))?;
    write_file(&out_dir.join("spectrum.json"), &to_json(&artifacts.spectrum))?;
    write_file(&out_dir.join("analysis.json"), &to_json(&artifacts.analysis))?;
    write_file(
        &out_dir.join("diagnostics.csv"),
        &diagnostics_csv(&artifacts.spectrum, &artifacts.analysis),
    )?;
    write_file(&out_dir.join("criteria.json"), &to_json(&artifacts.criteria))?;
    write_file(
        &out_dir.join("intervals.csv"),
        &intervals_csv(&artifacts.criteria.cluster_scans),
    )?;
    let summary = PipelineSummary {
        config_hash: cfg.hash(),
        out_dir: out_dir.to_path_buf(),
        n_words: artifacts.db.records.len(),
        n_primitives: artifacts.db.primitives().count(),
        n_lines: artifacts.spectrum.len(),
        horizon: artifacts.db.horizon,
        h: artifacts.analysis.h.h,
        sigma_a: artifacts.analysis.sigma_a.value,
        sigma_c: artifacts.analysis.sigma_c.value,
        witness_count: artifacts.criteria.witnesses.count,
        files,
    };
    write_file(&out_dir.join("report.json"), &to_json(&summary))?;
    Ok(summary)
}

/// validate -> enumerate -> solve -> linearize -> spectrum -> analysis ->
/// criteria, then the full report bundle.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineSummary, PipelineError> {
    let artifacts = run_stages(cfg)?;
    write_outputs(cfg, &artifacts, &cfg.output.dir)
}

/// Probe evaluation from a prebuilt database.
pub fn run_probe(
    cfg: &RunConfig,
    config: &Configuration,
    db: &OrbitDatabase,
    ell: Option<f64>,
    m_scale: Option<f64>,
) -> Result<f64, PipelineError> {
    let ell = ell.or(cfg.probe.ell).ok_or(PipelineError::ProbeParamsMissing)?;
    let m_scale = m_scale
        .or(cfg.probe.m_scale)
        .ok_or(PipelineError::ProbeParamsMissing)?;
    Ok(probe_fd(
        &primitive_rays(db),
        db.horizon,
        ProbeParams { ell, m_scale },
        config.d0(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cfg(m_max: usize) -> RunConfig {
        let text = format!(
            "[geometry]\n\
             disk 0.0 0.0 1.0\n\
             disk 6.0 0.0 1.0\n\
             disk 3.0 5.196152422706632 1.0\n\
             [sweep]\n\
             m_max = {m_max}\n"
        );
        RunConfig::parse(&text).unwrap()
    }

    #[test]
    fn sweep_solves_every_class() {
        let cfg = sample_cfg(6);
        let (config, _) = stage_validate(&cfg).unwrap();
        let db = stage_sweep(&cfg, &config).unwrap();
        // Classes of lengths 2..6 over three symbols: 3+2+6+6+14.
        assert_eq!(db.records.len(), 31);
        assert_eq!(db.primitives().count(), 23);
        for r in &db.records {
            assert!(r.residual <= cfg.sweep.solver_tol);
            assert!(r.tau >= r.m as f64 * config.d0() - 1e-9);
        }
    }

    #[test]
    fn invalid_geometry_fails_in_the_geometry_stage() {
        let text = "[geometry]\ndisk 0 0 1\ndisk 2.2 0 1\ndisk 1.1 1.905 1\n";
        let cfg = RunConfig::parse(text).unwrap();
        let err = run_stages(&cfg).unwrap_err();
        assert_eq!(err.stage(), "geometry");
    }

    #[test]
    fn repetition_records_match_primitive_powers() {
        let cfg = sample_cfg(4);
        let (config, _) = stage_validate(&cfg).unwrap();
        let db = stage_sweep(&cfg, &config).unwrap();
        let twelve = db
            .records
            .iter()
            .find(|r| r.word.to_string() == "12")
            .unwrap();
        let doubled = db
            .records
            .iter()
            .find(|r| r.word.to_string() == "1212")
            .unwrap();
        assert_eq!(doubled.trace, trace_power(twelve.trace, 2));
    }

    #[test]
    fn probe_requires_parameters() {
        let cfg = sample_cfg(3);
        let (config, _) = stage_validate(&cfg).unwrap();
        let db = stage_sweep(&cfg, &config).unwrap();
        let err = run_probe(&cfg, &config, &db, None, None).unwrap_err();
        assert!(matches!(err, PipelineError::ProbeParamsMissing));
        let v = run_probe(&cfg, &config, &db, Some(8.0), Some(10.0)).unwrap();
        assert!((v - (24.0 / 96.0_f64.sqrt()) * 1f64.exp()).abs() < 1e-9);
    }
}
