//! Non-entirety criteria as spectrum scanners: gap-and-tail witnesses, the
//! Bohr gap condition, the liminf tail exponent, clustering-interval
//! construction and census over unit windows, interval classification, the
//! coefficient lower-bound condition, double-sided gap scans, and a
//! continued-fraction probe of rational dependence among primitive lengths.

use serde::Serialize;
use thiserror::Error;

use crate::analysis::suffix_sums;
use crate::linearization::DetBoundsFit;
use crate::spectrum::Spectrum;

#[derive(Debug, Error)]
pub enum CriteriaError {
    #[error("need at least {need} spectrum lines, got {got}")]
    InsufficientLines { need: usize, got: usize },
    #[error("spectrum [{lambda_min}, {x_max}] does not cover the window [{b}, {b_plus_one}]")]
    Coverage {
        lambda_min: f64,
        x_max: f64,
        b: f64,
        b_plus_one: f64,
    },
    #[error("parameter out of range: {0}")]
    Params(String),
}

/// Scan parameters: gap exponent delta, tail exponent gamma, gap constant C.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriteriaParams {
    pub delta: f64,
    pub gamma: f64,
    pub c_gap: f64,
}

impl CriteriaParams {
    /// Hypothesis checks against the fitted entropy; violations are flags,
    /// not errors, because the scans stay well defined.
    pub fn flags(&self, h: f64) -> Vec<String> {
        let mut flags = Vec::new();
        if self.delta <= h + 1.0 {
            flags.push(format!(
                "delta = {} does not exceed h + 1 = {}",
                self.delta,
                h + 1.0
            ));
        }
        if self.delta <= h + 2.0 {
            flags.push(format!(
                "delta = {} does not exceed h + 2 = {} required by the clustering scans",
                self.delta,
                h + 2.0
            ));
        }
        flags
    }
}

// ---------------------------------------------------------------------------
// Gap-and-tail witnesses and the Bohr condition.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct WitnessScan {
    pub params: CriteriaParams,
    /// Zero-based line indices m with a left gap >= C e^{-delta lambda_m}
    /// and |tail_m| >= e^{-gamma lambda_m}.
    pub witnesses: Vec<usize>,
    pub count: usize,
    pub x_max: f64,
}

/// Every index whose left gap and tail sum clear the exponential
/// thresholds; the gap test accepts equality, the liminf-style tail test
/// accepts equality as well.
pub fn find_gap_tail_witnesses(spec: &Spectrum, params: CriteriaParams) -> WitnessScan {
    let tails = suffix_sums(spec);
    let mut witnesses = Vec::new();
    for m in 1..spec.len() {
        let gap = spec.lambda(m) - spec.lambda(m - 1);
        let gap_ok = gap >= params.c_gap * (-params.delta * spec.lambda(m)).exp();
        let tail_ok = tails[m].value().abs() >= (-params.gamma * spec.lambda(m)).exp();
        if gap_ok && tail_ok {
            witnesses.push(m);
        }
    }
    let count = witnesses.len();
    WitnessScan {
        params,
        witnesses,
        count,
        x_max: spec.x_max(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum BohrOutcome {
    /// Smallest decay rate ell >= 0 with companion constant C1 such that
    /// every observed gap satisfies gap_n >= C1 e^{-ell lambda_n}.
    Fit {
        ell: f64,
        c1: f64,
        tightest_index: usize,
        tightest_gap: f64,
    },
    /// A gap at or below the grouping tolerance: duplicate frequencies.
    Refuted { index: usize, gap: f64 },
}

pub fn check_bohr(spec: &Spectrum) -> Result<BohrOutcome, CriteriaError> {
    if spec.len() < 2 {
        return Err(CriteriaError::InsufficientLines {
            need: 2,
            got: spec.len(),
        });
    }
    let mut gaps = Vec::with_capacity(spec.len() - 1);
    for n in 0..spec.len() - 1 {
        let gap = spec.lambda(n + 1) - spec.lambda(n);
        if gap <= spec.group_tol() {
            return Ok(BohrOutcome::Refuted { index: n, gap });
        }
        gaps.push((spec.lambda(n), gap));
    }
    // Least-squares decay rate of log gap against lambda, clamped at zero.
    let n = gaps.len() as f64;
    let mx = gaps.iter().map(|g| g.0).sum::<f64>() / n;
    let my = gaps.iter().map(|g| g.1.ln()).sum::<f64>() / n;
    let sxx: f64 = gaps.iter().map(|g| (g.0 - mx) * (g.0 - mx)).sum();
    let sxy: f64 = gaps.iter().map(|g| (g.0 - mx) * (g.1.ln() - my)).sum();
    let ell = if sxx > 0.0 { (-sxy / sxx).max(0.0) } else { 0.0 };
    let (tightest_index, c1) = gaps
        .iter()
        .enumerate()
        .map(|(i, g)| (i, g.1 * (ell * g.0).exp()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty gaps");
    Ok(BohrOutcome::Fit {
        ell,
        c1,
        tightest_index,
        tightest_gap: gaps[tightest_index].1,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LiminfTail {
    /// (lambda_m, log|T_m| / lambda_m) over indices with nonzero tails.
    pub proxies: Vec<(f64, f64)>,
    /// Minimum over the upper half of the nonzero-tail indices.
    pub min_top_half: f64,
    pub skipped_zero_tails: Vec<usize>,
}

/// Proxy for the liminf of log|tail_m| / lambda_m; bounded below across
/// growing truncations supports a finite liminf.
pub fn liminf_tail_exponent(spec: &Spectrum) -> LiminfTail {
    let tails = suffix_sums(spec);
    let mut proxies = Vec::new();
    let mut skipped = Vec::new();
    let mut eligible = Vec::new();
    for m in 0..spec.len() {
        let t = tails[m].value();
        if t == 0.0 {
            skipped.push(m);
        } else {
            eligible.push(m);
            proxies.push((spec.lambda(m), t.abs().ln() / spec.lambda(m)));
        }
    }
    let top = &eligible[eligible.len() / 2..];
    let min_top_half = top
        .iter()
        .map(|&m| tails[m].value().abs().ln() / spec.lambda(m))
        .fold(f64::INFINITY, f64::min);
    LiminfTail {
        proxies,
        min_top_half,
        skipped_zero_tails: skipped,
    }
}

// ---------------------------------------------------------------------------
// Clustering intervals.
// ---------------------------------------------------------------------------

/// One maximal block of frequencies whose internal gaps all fall under
/// e^{-delta b}, bounded by larger gaps (or the spectrum edge) either side.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterInterval {
    /// Zero-based index of the seed that produced the interval.
    pub k_center: usize,
    pub p: usize,
    pub q: usize,
    pub lo_index: usize,
    pub hi_index: usize,
    pub lo: f64,
    pub hi: f64,
    /// Gap to the previous frequency; None when the block abuts the edge.
    pub left_gap: Option<f64>,
    pub right_gap: Option<f64>,
    /// Coefficient sum over the block.
    pub block_sum: f64,
    /// Interval length under e^{-b}, as the construction requires past its
    /// onset; checked, not assumed.
    pub eq41_ok: bool,
}

fn coverage_check(spec: &Spectrum, b: f64) -> Result<(), CriteriaError> {
    if spec.is_empty() || spec.lambda(0) > b || spec.x_max() < b + 1.0 {
        return Err(CriteriaError::Coverage {
            lambda_min: if spec.is_empty() {
                f64::NAN
            } else {
                spec.lambda(0)
            },
            x_max: spec.x_max(),
            b,
            b_plus_one: b + 1.0,
        });
    }
    Ok(())
}

/// Builds the deduplicated clustering intervals seeded from every
/// frequency in [b + e^{-b}, b + 1 - e^{-b}]: greedy extension while the
/// neighbor gap stays strictly under e^{-delta b}.
pub fn build_cluster_intervals(
    spec: &Spectrum,
    delta: f64,
    b: f64,
) -> Result<Vec<ClusterInterval>, CriteriaError> {
    coverage_check(spec, b)?;
    let thr = (-delta * b).exp();
    let edge = (-b).exp();
    let tails = suffix_sums(spec);
    let n = spec.len();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for k in 0..n {
        let lambda = spec.lambda(k);
        if lambda < b + edge || lambda > b + 1.0 - edge {
            continue;
        }
        let mut hi = k;
        while hi + 1 < n && spec.lambda(hi + 1) - spec.lambda(hi) < thr {
            hi += 1;
        }
        let mut lo = k;
        while lo > 0 && spec.lambda(lo) - spec.lambda(lo - 1) < thr {
            lo -= 1;
        }
        if !seen.insert((lo, hi)) {
            continue;
        }
        out.push(ClusterInterval {
            k_center: k,
            p: k - lo,
            q: hi - k,
            lo_index: lo,
            hi_index: hi,
            lo: spec.lambda(lo),
            hi: spec.lambda(hi),
            left_gap: (lo > 0).then(|| spec.lambda(lo) - spec.lambda(lo - 1)),
            right_gap: (hi + 1 < n).then(|| spec.lambda(hi + 1) - spec.lambda(hi)),
            block_sum: tails[lo].sub(tails[hi + 1]).value(),
            eq41_ok: spec.lambda(hi) - spec.lambda(lo) < edge,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterCount {
    pub eps: f64,
    pub delta: f64,
    pub b: f64,
    /// Number of interval-plus-right-gap sets with gap in [e^{-delta b}, eps).
    pub m_count: usize,
    /// Non-asymptotic lower bound (1 - 2 eps - 2 e^{-b}) / (eps + e^{-b}).
    pub bound_exact: f64,
    /// The asymptotic form 1/eps - 2.
    pub bound_asymptotic: f64,
    /// bound_asymptotic - bound_exact, the finite-b correction.
    pub slack: f64,
    pub pass: bool,
}

/// Census of clustering sets whose right gap is at least the clustering
/// threshold but below eps, against the covering lower bound.
pub fn count_cluster_sets(
    spec: &Spectrum,
    eps: f64,
    delta: f64,
    b: f64,
) -> Result<ClusterCount, CriteriaError> {
    if eps <= (-b).exp() {
        return Err(CriteriaError::Params(format!(
            "eps = {eps} must exceed e^-b = {}",
            (-b).exp()
        )));
    }
    let intervals = build_cluster_intervals(spec, delta, b)?;
    let m_count = intervals
        .iter()
        .filter(|iv| iv.right_gap.map(|g| g < eps).unwrap_or(false))
        .count();
    let eb = (-b).exp();
    let bound_exact = (1.0 - 2.0 * eps - 2.0 * eb) / (eps + eb);
    let bound_asymptotic = 1.0 / eps - 2.0;
    Ok(ClusterCount {
        eps,
        delta,
        b,
        m_count,
        bound_exact,
        bound_asymptotic,
        slack: bound_asymptotic - bound_exact,
        pass: m_count as f64 >= bound_exact,
    })
}

// ---------------------------------------------------------------------------
// Interval classification.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LeftLabel {
    /// |tail at k-p| >= e^{-gamma lambda_{k-p}}.
    I,
    II,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RightLabel {
    /// |tail at k+q| >= e^{-gamma lambda_{k+q}}.
    III,
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WitnessSide {
    /// [lambda_{k-p-1}, lambda_{k-p}] carries the gap-and-tail pair.
    Left,
    /// [lambda_{k+q}, lambda_{k+q+1}] carries it.
    Right,
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessInterval {
    pub side: WitnessSide,
    pub lo_index: usize,
    pub hi_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub enum ClassifyOutcome {
    Classified {
        left: LeftLabel,
        right: RightLabel,
        witness: Option<WitnessInterval>,
        /// Fires when the supplied block sum contradicts the triangle
        /// bound implied by small tails on both sides.
        data_inconsistent: bool,
    },
    /// Interval touches the spectrum edge: truncation, not mathematics.
    Indeterminate { reason: String },
}

/// Case classification of one clustering interval at tail exponent gamma,
/// with the implied gap-and-tail witness where one exists.
pub fn classify_interval(spec: &Spectrum, iv: &ClusterInterval, gamma: f64) -> ClassifyOutcome {
    let n = spec.len();
    if iv.lo_index == 0 || iv.hi_index + 1 >= n {
        return ClassifyOutcome::Indeterminate {
            reason: format!(
                "interval [{}, {}] abuts the spectrum edge",
                iv.lo_index, iv.hi_index
            ),
        };
    }
    let tails = suffix_sums(spec);
    let lambda_lo = spec.lambda(iv.lo_index);
    let lambda_hi = spec.lambda(iv.hi_index);
    let thr_lo = (-gamma * lambda_lo).exp();
    let thr_hi = (-gamma * lambda_hi).exp();
    let tail_lo = tails[iv.lo_index].value().abs();
    let tail_hi = tails[iv.hi_index].value().abs();

    let left = if tail_lo >= thr_lo { LeftLabel::I } else { LeftLabel::II };
    let right = if tail_hi >= thr_hi {
        RightLabel::III
    } else {
        RightLabel::IV
    };

    let witness = match left {
        LeftLabel::I => Some(WitnessInterval {
            side: WitnessSide::Left,
            lo_index: iv.lo_index - 1,
            hi_index: iv.lo_index,
        }),
        LeftLabel::II if iv.block_sum.abs() >= 2.0 * thr_lo => Some(WitnessInterval {
            side: WitnessSide::Right,
            lo_index: iv.hi_index,
            hi_index: iv.hi_index + 1,
        }),
        LeftLabel::II => None,
    };

    // Small tails at both k-p and beyond the block cap the block sum by
    // the triangle inequality; a larger supplied block sum means the
    // interval data and the spectrum disagree.
    let mut data_inconsistent = false;
    if left == LeftLabel::II {
        let lambda_next = spec.lambda(iv.hi_index + 1);
        let tail_next = tails[iv.hi_index + 1].value().abs();
        let thr_next = (-gamma * lambda_next).exp();
        if tail_next < thr_next {
            let cap = thr_lo + thr_next;
            if iv.block_sum.abs() > cap * (1.0 + 1e-12) {
                data_inconsistent = true;
            }
        }
    }

    ClassifyOutcome::Classified {
        left,
        right,
        witness,
        data_inconsistent,
    }
}

// ---------------------------------------------------------------------------
// Coefficient lower bound (condition on |a_n|).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ConditionLFit {
    pub c1: f64,
    pub c2: f64,
    /// Zero-based index from which the bound holds through the truncation.
    pub n0: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateCheck {
    /// c1 = d0, c2 = d2 / 2.
    pub c1: f64,
    pub c2: f64,
    pub single_contributor_lines: usize,
    /// Single-contributor lines violating the candidate bound.
    pub violations: Vec<usize>,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub enum ConditionLOutcome {
    Fit {
        candidate: CandidateCheck,
        empirical: ConditionLFit,
    },
    /// Exact cancellations: lines with a_n = 0.
    Refuted { zero_lines: Vec<usize> },
}

/// Tests the concrete candidate (c1 = d0, c2 = d2/2) on single-contributor
/// lines and fits the empirical lower envelope over all lines.
pub fn check_condition_l(spec: &Spectrum, d0: f64, fit: &DetBoundsFit) -> ConditionLOutcome {
    let zero_lines: Vec<usize> = (0..spec.len()).filter(|&n| spec.a(n) == 0.0).collect();
    if !zero_lines.is_empty() {
        return ConditionLOutcome::Refuted { zero_lines };
    }

    let c1 = d0;
    let c2 = fit.d2 / 2.0;
    let mut violations = Vec::new();
    let mut single = 0usize;
    for (n, line) in spec.lines().iter().enumerate() {
        if line.contributors.len() == 1 {
            single += 1;
            if line.a.abs() < c1 * (-c2 * line.lambda).exp() {
                violations.push(n);
            }
        }
    }
    let candidate = CandidateCheck {
        c1,
        c2,
        single_contributor_lines: single,
        holds: violations.is_empty(),
        violations,
    };

    // Empirical lower envelope of log|a| against lambda: steepest
    // decreasing hull edge gives c2, tight intercept gives c1.
    let pts: Vec<(f64, f64)> = spec
        .lines()
        .iter()
        .map(|l| (l.lambda, l.a.abs().ln()))
        .collect();
    let mut hull: Vec<usize> = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        while hull.len() >= 2 {
            let a = pts[hull[hull.len() - 2]];
            let b = pts[hull[hull.len() - 1]];
            if (b.1 - a.1) * (p.0 - a.0) >= (p.1 - a.1) * (b.0 - a.0) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut min_slope = f64::INFINITY;
    for w in hull.windows(2) {
        let a = pts[w[0]];
        let b = pts[w[1]];
        min_slope = min_slope.min((b.1 - a.1) / (b.0 - a.0));
    }
    let c2_emp = if min_slope.is_finite() { (-min_slope).max(0.0) } else { 0.0 };
    let log_c1 = pts
        .iter()
        .map(|&(l, y)| y + c2_emp * l)
        .fold(f64::INFINITY, f64::min);
    ConditionLOutcome::Fit {
        candidate,
        empirical: ConditionLFit {
            c1: log_c1.exp(),
            c2: c2_emp,
            n0: 0,
        },
    }
}

// ---------------------------------------------------------------------------
// Double-sided separation scan.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TripleSeparationScan {
    pub delta: f64,
    pub c_gap: f64,
    /// Interior indices whose gaps to both neighbors exceed the threshold
    /// strictly.
    pub witnesses: Vec<usize>,
    /// Whether the coefficient lower bound held, when it was checked.
    pub condition_l_holds: Option<bool>,
}

pub fn triple_separation_scan(
    spec: &Spectrum,
    delta: f64,
    c_gap: f64,
    condition_l: Option<&ConditionLOutcome>,
) -> TripleSeparationScan {
    let mut witnesses = Vec::new();
    for m in 1..spec.len().saturating_sub(1) {
        let left = spec.lambda(m) - spec.lambda(m - 1);
        let right = spec.lambda(m + 1) - spec.lambda(m);
        if left > c_gap * (-delta * spec.lambda(m)).exp()
            && right > c_gap * (-delta * spec.lambda(m + 1)).exp()
        {
            witnesses.push(m);
        }
    }
    let condition_l_holds = condition_l.map(|o| match o {
        ConditionLOutcome::Fit { candidate, .. } => candidate.holds,
        ConditionLOutcome::Refuted { .. } => false,
    });
    TripleSeparationScan {
        delta,
        c_gap,
        witnesses,
        condition_l_holds,
    }
}

// ---------------------------------------------------------------------------
// Rational independence probe.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PairResonance {
    pub i: usize,
    pub j: usize,
    /// Larger length over smaller length.
    pub ratio: f64,
    pub p: u64,
    pub q: u64,
    pub distance: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RationalIndependenceReport {
    pub q_max: u64,
    pub tol: f64,
    pub pairs: Vec<PairResonance>,
    /// Index into pairs of the closest observed resonance.
    pub strongest: Option<usize>,
    pub any_flagged: bool,
}

/// Closest rational p/q to x with q <= q_max, by continued-fraction
/// convergents plus the capped semiconvergent at the cutoff.
fn best_rational(x: f64, q_max: u64) -> (u64, u64) {
    assert!(x > 0.0 && x.is_finite());
    let (mut p2, mut q2) = (1u64, 0u64); // h_{k-2}, k_{k-2}
    let (mut p1, mut q1) = (x.floor() as u64, 1u64); // h_{k-1}, k_{k-1}
    let mut frac = x - x.floor();
    for _ in 0..64 {
        if frac <= 0.0 {
            break;
        }
        let inv = 1.0 / frac;
        let a = inv.floor();
        if !a.is_finite() || a >= u64::MAX as f64 / 2.0 {
            break;
        }
        let a = a as u64;
        let (Some(pn_mul), Some(qn_mul)) = (a.checked_mul(p1), a.checked_mul(q1)) else {
            break;
        };
        let (p, q) = (pn_mul + p2, qn_mul + q2);
        if q > q_max {
            // Largest admissible semiconvergent coefficient.
            let a_cap = (q_max - q2) / q1;
            if a_cap >= 1 {
                let (ps, qs) = (a_cap * p1 + p2, a_cap * q1 + q2);
                let d_semi = (x - ps as f64 / qs as f64).abs();
                let d_conv = (x - p1 as f64 / q1 as f64).abs();
                if d_semi < d_conv {
                    return (ps, qs);
                }
            }
            return (p1, q1);
        }
        (p2, q2) = (p1, q1);
        (p1, q1) = (p, q);
        frac = inv - a as f64;
    }
    (p1, q1)
}

/// Flags length pairs whose ratio sits within tol of a rational with
/// denominator at most q_max.
pub fn rational_independence_test(
    primitive_lengths: &[f64],
    q_max: u64,
    tol: f64,
) -> Result<RationalIndependenceReport, CriteriaError> {
    if primitive_lengths.len() < 2 {
        return Err(CriteriaError::InsufficientLines {
            need: 2,
            got: primitive_lengths.len(),
        });
    }
    let mut pairs = Vec::new();
    for i in 0..primitive_lengths.len() {
        for j in (i + 1)..primitive_lengths.len() {
            let (lo, hi) = if primitive_lengths[i] <= primitive_lengths[j] {
                (primitive_lengths[i], primitive_lengths[j])
            } else {
                (primitive_lengths[j], primitive_lengths[i])
            };
            let ratio = hi / lo;
            let (p, q) = best_rational(ratio, q_max);
            let distance = (ratio - p as f64 / q as f64).abs();
            pairs.push(PairResonance {
                i,
                j,
                ratio,
                p,
                q,
                distance,
                flagged: distance <= tol,
            });
        }
    }
    let strongest = pairs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
        .map(|(idx, _)| idx);
    let any_flagged = pairs.iter().any(|p| p.flagged);
    Ok(RationalIndependenceReport {
        q_max,
        tol,
        pairs,
        strongest,
        any_flagged,
    })
}
