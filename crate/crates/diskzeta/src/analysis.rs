//! Series-theoretic quantities of the assembled spectrum: entropy of the
//! length counting function, abscissas of absolute and plain convergence,
//! tail sums, power remainders, typical means, and the primitive-count
//! window bound.
//!
//! Every limsup/liminf statement is reported as a finite proxy sequence
//! plus a scalar summary; the asymptotic statements cannot be decided from
//! truncated data, so each estimate carries its trace for inspection.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::linearization::DetBoundsFit;
use crate::spectrum::Spectrum;
use crate::sum::{Dd, Kahan};

/// Margin used wherever a geometric tail needs a counting exponent:
/// matches the epsilon of the two-sided counting band check.
pub const BAND_EPS: f64 = 0.3;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {need} data points, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("all coefficients vanish; abscissa undefined")]
    AllZeroCoefficients,
    #[error("entropy fit produced a non-positive slope {0}")]
    DegenerateEntropy(f64),
    #[error("Re s = {re_s} is below the tail-bound validity margin {min}")]
    Domain { re_s: f64, min: f64 },
    #[error("window parameter out of range: {0}")]
    WindowParams(String),
    #[error("window [{lo}, {hi}] exceeds orbit coverage horizon {horizon}")]
    WindowCoverage { lo: f64, hi: f64, horizon: f64 },
}

// ---------------------------------------------------------------------------
// Entropy of the primitive length counting function.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct HEstimate {
    pub h: f64,
    /// Fitted intercept of log N(x) + log(h x) = h x + c.
    pub c: f64,
    pub fit_range: (f64, f64),
    pub rms_residual: f64,
    pub slope_stderr: f64,
    /// Reported confidence radius on h.
    pub ci: f64,
    pub n_points: usize,
}

/// Fits the counting model N(x) ~ e^{h x} / (h x) to the primitive lengths
/// by iterating h in log N(x) + log(h x) = h x + c.
pub fn estimate_h(primitive_lengths: &[f64]) -> Result<HEstimate, AnalysisError> {
    if primitive_lengths.len() < 50 {
        return Err(AnalysisError::InsufficientData {
            need: 50,
            got: primitive_lengths.len(),
        });
    }
    let mut xs: Vec<f64> = primitive_lengths.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let start = (n / 4).max(9);
    let pts: Vec<(f64, f64)> = (start..n).map(|i| (xs[i], ((i + 1) as f64).ln())).collect();

    let slope = |data: &[(f64, f64)]| -> (f64, f64, f64, f64) {
        let n = data.len() as f64;
        let mx = data.iter().map(|p| p.0).sum::<f64>() / n;
        let my = data.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = data.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = data.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let b = sxy / sxx;
        let a = my - b * mx;
        let ss_res: f64 = data.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
        let stderr = if n > 2.0 { (ss_res / (n - 2.0) / sxx).sqrt() } else { 0.0 };
        (b, a, (ss_res / n).sqrt(), stderr)
    };

    let (mut h, _, _, _) = slope(&pts);
    if !(h > 0.0) {
        return Err(AnalysisError::DegenerateEntropy(h));
    }
    let mut c = 0.0;
    let mut rms = 0.0;
    let mut stderr = 0.0;
    for _ in 0..100 {
        let adjusted: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, y + (h * x).ln())).collect();
        let (h2, c2, rms2, se2) = slope(&adjusted);
        if !(h2 > 0.0) {
            return Err(AnalysisError::DegenerateEntropy(h2));
        }
        let delta = (h2 - h).abs();
        h = h2;
        c = c2;
        rms = rms2;
        stderr = se2;
        if delta < 1e-12 {
            break;
        }
    }
    Ok(HEstimate {
        h,
        c,
        fit_range: (pts[0].0, pts[pts.len() - 1].0),
        rms_residual: rms,
        slope_stderr: stderr,
        ci: (2.0 * stderr).max(1e-6),
        n_points: pts.len(),
    })
}

// ---------------------------------------------------------------------------
// Tail machinery.
// ---------------------------------------------------------------------------

/// Double-double suffix sums of the coefficients; entry N is zero.
pub(crate) fn suffix_sums(spec: &Spectrum) -> Vec<Dd> {
    let n = spec.len();
    let mut out = vec![Dd::ZERO; n + 1];
    for m in (0..n).rev() {
        out[m] = out[m + 1].add_f64(spec.a(m));
    }
    out
}

/// Exact partial tail sum over the truncated spectrum, from line index m
/// (zero-based) to the end, with compensated accumulation.
pub fn tail_sum(spec: &Spectrum, m: usize) -> f64 {
    let mut acc = Dd::ZERO;
    for i in (m..spec.len()).rev() {
        acc = acc.add_f64(spec.a(i));
    }
    acc.value()
}

/// Suffix sums of |a_n|.
fn suffix_abs_sums(spec: &Spectrum) -> Vec<Dd> {
    let n = spec.len();
    let mut out = vec![Dd::ZERO; n + 1];
    for m in (0..n).rev() {
        out[m] = out[m + 1].add_f64(spec.a(m).abs());
    }
    out
}

// ---------------------------------------------------------------------------
// Abscissas.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AbscissaBranch {
    /// Partial sums of |a_n| keep growing: slope of log A(x).
    Divergent,
    /// Absolute tails decay: anchored slope of log of the absolute tail.
    Convergent,
}

#[derive(Debug, Clone, Serialize)]
pub struct AbscissaEstimate {
    pub value: f64,
    pub branch: AbscissaBranch,
    /// Proxy sequence (lambda_m, proxy value) over the scan window.
    pub proxies: Vec<(f64, f64)>,
    /// Max minus min of the proxy sequence; feeds the relation slack.
    pub spread: f64,
    /// Too few lines for a meaningful window.
    pub degenerate_window: bool,
}

/// Abscissa of absolute convergence, as a finite-truncation proxy.
///
/// If the |a_n| partial sums still grow at the end of the spectrum the
/// series is treated as absolutely divergent and the estimate is the late
/// growth slope of log A; otherwise it is the anchored decay slope of the
/// absolute tails (both are exactly invariant under rescaling all a_n).
pub fn estimate_sigma_a(spec: &Spectrum) -> Result<AbscissaEstimate, AnalysisError> {
    let n = spec.len();
    if n == 0 || spec.lines().iter().all(|l| l.a == 0.0) {
        return Err(AnalysisError::AllZeroCoefficients);
    }
    let degenerate_window = n < 20;

    let abs_tails = suffix_abs_sums(spec);
    let eligible: Vec<usize> = (0..n).filter(|&m| abs_tails[m].value() > 0.0).collect();
    if eligible.is_empty() {
        return Err(AnalysisError::AllZeroCoefficients);
    }
    let half = &eligible[eligible.len() / 2..];

    // Decide the branch from the absolute tails over the upper half.
    let conv_proxy_max = half
        .iter()
        .map(|&m| abs_tails[m].value().ln() / spec.lambda(m))
        .fold(f64::NEG_INFINITY, f64::max);

    if conv_proxy_max > 0.0 {
        // Divergent branch: growth slopes of the |a| partial sums between
        // the window and the end of the spectrum.
        let mut prefix = Kahan::new();
        let mut log_a = vec![0.0; n];
        for m in 0..n {
            prefix.add(spec.a(m).abs());
            log_a[m] = prefix.value().ln();
        }
        let last = *eligible.last().unwrap();
        let window: Vec<usize> = eligible
            .iter()
            .copied()
            .filter(|&m| m >= eligible[eligible.len() / 4] && m <= eligible[3 * eligible.len() / 4])
            .collect();
        let mut proxies = Vec::new();
        for &m in &window {
            if spec.lambda(last) - spec.lambda(m) > 0.0 {
                let slope = (log_a[last] - log_a[m]) / (spec.lambda(last) - spec.lambda(m));
                proxies.push((spec.lambda(m), slope));
            }
        }
        if proxies.is_empty() {
            proxies.push((spec.lambda(last), 0.0));
        }
        let value = proxies.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let min = proxies.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        Ok(AbscissaEstimate {
            value,
            branch: AbscissaBranch::Divergent,
            spread: value - min,
            proxies,
            degenerate_window,
        })
    } else {
        // Convergent branch: anchored decay slope of the absolute tails.
        let anchor = half[0];
        let mut proxies = Vec::new();
        for &m in &half[1..] {
            let dl = spec.lambda(m) - spec.lambda(anchor);
            if dl > 0.0 {
                let slope =
                    (abs_tails[m].value().ln() - abs_tails[anchor].value().ln()) / dl;
                proxies.push((spec.lambda(m), slope));
            }
        }
        if proxies.is_empty() {
            proxies.push((spec.lambda(anchor), 0.0));
        }
        let value = proxies.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let min = proxies.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        Ok(AbscissaEstimate {
            value,
            branch: AbscissaBranch::Convergent,
            spread: value - min,
            proxies,
            degenerate_window,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaCEstimate {
    pub value: f64,
    /// Proxy sequence (lambda_m, log|T_m| / lambda_m).
    pub proxies: Vec<(f64, f64)>,
    /// Indices whose tail vanished exactly and were skipped.
    pub skipped_zero_tails: Vec<usize>,
    /// The representation behind this proxy assumes sigma_c < 0.
    pub valid: bool,
    /// Bound on the effect of series truncation, when the envelope fit and
    /// entropy allow one.
    pub truncation_bias: Option<f64>,
    pub spread: f64,
    pub degenerate_window: bool,
}

/// Convergence-abscissa proxy: max over the upper half of the spectrum of
/// log |tail_m| / lambda_m.
pub fn estimate_sigma_c(
    spec: &Spectrum,
    context: Option<(&HEstimate, &DetBoundsFit)>,
) -> Result<SigmaCEstimate, AnalysisError> {
    let n = spec.len();
    if n == 0 || spec.lines().iter().all(|l| l.a == 0.0) {
        return Err(AnalysisError::AllZeroCoefficients);
    }
    let tails = suffix_sums(spec);
    let mut skipped = Vec::new();
    let eligible: Vec<usize> = (0..n)
        .filter(|&m| {
            if tails[m].value() == 0.0 {
                skipped.push(m);
                false
            } else {
                true
            }
        })
        .collect();
    if eligible.is_empty() {
        return Err(AnalysisError::AllZeroCoefficients);
    }
    let window = &eligible[eligible.len() / 2..];
    let proxies: Vec<(f64, f64)> = window
        .iter()
        .map(|&m| (spec.lambda(m), tails[m].value().abs().ln() / spec.lambda(m)))
        .collect();
    let value = proxies.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let min = proxies.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);

    let truncation_bias = context.and_then(|(h, fit)| {
        let beta = fit.d1 / 2.0 - h.h - BAND_EPS;
        if beta > 0.0 {
            let x = spec.x_max();
            Some((x / beta + 1.0 / (beta * beta)) * (-beta * x).exp() / fit.c1.sqrt())
        } else {
            None
        }
    });

    Ok(SigmaCEstimate {
        value,
        proxies,
        skipped_zero_tails: skipped,
        valid: value < 0.0,
        truncation_bias,
        spread: value - min,
        degenerate_window: n < 20,
    })
}

// ---------------------------------------------------------------------------
// Remainders and typical means.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RkValue {
    pub value: f64,
    /// Set when u cleared the whole truncated spectrum.
    pub empty: bool,
}

/// Power remainder R^k(u): sum over lambda_n > u of a_n (lambda_n - u)^k.
pub fn remainder_rk(spec: &Spectrum, u: f64, k: u32) -> RkValue {
    let n = spec.len();
    if n == 0 || u >= spec.lambda(n - 1) {
        return RkValue {
            value: 0.0,
            empty: true,
        };
    }
    let mut acc = Dd::ZERO;
    for i in (0..n).rev() {
        let lambda = spec.lambda(i);
        if lambda <= u {
            break;
        }
        acc = acc.add_f64(spec.a(i) * (lambda - u).powi(k as i32));
    }
    RkValue {
        value: acc.value(),
        empty: false,
    }
}

/// Typical mean C^k(u)/u^k = u^{-k} * sum over lambda_n < u of
/// (u - lambda_n)^k a_n e^{-lambda_n s}.
pub fn typical_mean(spec: &Spectrum, u: f64, k: u32, s: Complex64) -> Complex64 {
    let mut re = Dd::ZERO;
    let mut im = Dd::ZERO;
    for line in spec.lines() {
        if line.lambda >= u {
            break;
        }
        let weight = (u - line.lambda).powi(k as i32) * line.a;
        let phase = (-s * line.lambda).exp();
        re = re.add_f64(weight * phase.re);
        im = im.add_f64(weight * phase.im);
    }
    let scale = u.powi(k as i32);
    Complex64::new(re.value() / scale, im.value() / scale)
}

/// Typical-mean sweep over a u grid, for summability inspection.
pub fn typical_mean_sweep(
    spec: &Spectrum,
    k: u32,
    s: Complex64,
    u_grid: &[f64],
) -> Vec<(f64, Complex64)> {
    u_grid
        .iter()
        .map(|&u| (u, typical_mean(spec, u, k, s)))
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EtaEval {
    pub re: f64,
    pub im: f64,
    /// Geometric bound on the truncated part of the series.
    pub tail_bound: f64,
}

impl EtaEval {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// Partial sum of the series at s over all truncated lines, with a tail
/// bound assembled from the counting growth and the envelope fit: each
/// missing ray weighs at most x e^{-d1 x / 2} / sqrt(C1) against a ray
/// count within the epsilon-band of e^{h x}.
pub fn eval_eta(
    spec: &Spectrum,
    s: Complex64,
    h: &HEstimate,
    fit: &DetBoundsFit,
) -> Result<EtaEval, AnalysisError> {
    let beta = s.re + fit.d1 / 2.0 - h.h - BAND_EPS;
    if beta <= 0.0 {
        return Err(AnalysisError::Domain {
            re_s: s.re,
            min: h.h + BAND_EPS - fit.d1 / 2.0,
        });
    }
    let mut re = Dd::ZERO;
    let mut im = Dd::ZERO;
    for line in spec.lines() {
        let phase = (-s * line.lambda).exp();
        re = re.add_f64(line.a * phase.re);
        im = im.add_f64(line.a * phase.im);
    }
    let x = spec.x_max();
    let tail_bound = (x / beta + 1.0 / (beta * beta)) * (-beta * x).exp() / fit.c1.sqrt();
    Ok(EtaEval {
        re: re.value(),
        im: im.value(),
        tail_bound,
    })
}

// ---------------------------------------------------------------------------
// Counting-band check and primitive window counts.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BandCheck {
    pub eps: f64,
    /// Smallest length from which the band holds through the horizon.
    pub onset: Option<f64>,
    pub horizon: f64,
}

/// Two-sided counting band e^{(h-eps)x} <= N(x) <= e^{(h+eps)x} on the ray
/// lengths (repetitions included), checked segment by segment of the
/// counting staircase up to the coverage horizon.
pub fn counting_band_check(ray_lengths: &[f64], h: f64, eps: f64, horizon: f64) -> BandCheck {
    let mut taus: Vec<f64> = ray_lengths.iter().copied().filter(|&t| t <= horizon).collect();
    taus.sort_by(f64::total_cmp);
    let n = taus.len();
    let mut onset = None;
    // Walk segments [tau_i, next) from the right; the band must hold on
    // every later segment for an onset to count.
    let mut all_later_ok = true;
    for i in (0..n).rev() {
        let count = (i + 1) as f64;
        let right = if i + 1 < n { taus[i + 1] } else { horizon };
        let upper_ok = count <= ((h + eps) * taus[i]).exp();
        let lower_ok = count >= ((h - eps) * right.max(taus[i])).exp();
        if all_later_ok && upper_ok && lower_ok {
            onset = Some(taus[i]);
        } else {
            all_later_ok = false;
        }
    }
    BandCheck {
        eps,
        onset,
        horizon,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WindowVerdict {
    Pass,
    Fail,
    /// Window sits below the fitted asymptotic onset.
    OutOfRange,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowCount {
    pub alpha: f64,
    pub eps: f64,
    pub eta: f64,
    pub count: usize,
    /// eps (1 - eta) e^{alpha h} / (3 (alpha + eps)).
    pub bound: f64,
    pub effective_onset: f64,
    pub verdict: WindowVerdict,
}

/// Counts primitive lengths in [alpha, alpha + eps] against the asymptotic
/// lower bound; windows below the onset are labeled out of range rather
/// than failed.
pub fn window_count(
    primitive_lengths: &[f64],
    horizon: f64,
    alpha: f64,
    eps: f64,
    eta: f64,
    h: &HEstimate,
    band_onset: Option<f64>,
) -> Result<WindowCount, AnalysisError> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(AnalysisError::WindowParams(format!(
            "eps must lie in (0, 1/2), got {eps}"
        )));
    }
    let eta_max = eps / (12.0 * (1.0 + eps));
    if !(eta > 0.0 && eta < eta_max) {
        return Err(AnalysisError::WindowParams(format!(
            "eta must lie in (0, {eta_max}), got {eta}"
        )));
    }
    if alpha + eps > horizon {
        return Err(AnalysisError::WindowCoverage {
            lo: alpha,
            hi: alpha + eps,
            horizon,
        });
    }
    let count = primitive_lengths
        .iter()
        .filter(|&&t| t >= alpha && t <= alpha + eps)
        .count();
    let bound = eps * (1.0 - eta) * (alpha * h.h).exp() / (3.0 * (alpha + eps));
    let effective_onset = band_onset
        .unwrap_or(f64::INFINITY)
        .max(3.0 / h.h)
        .max(1.0);
    let verdict = if alpha < effective_onset {
        WindowVerdict::OutOfRange
    } else if count as f64 > bound {
        WindowVerdict::Pass
    } else {
        WindowVerdict::Fail
    };
    Ok(WindowCount {
        alpha,
        eps,
        eta,
        count,
        bound,
        effective_onset,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec_from(pairs: &[(f64, f64)]) -> Spectrum {
        Spectrum::from_pairs(pairs, pairs.last().unwrap().0 + 1.0, 0.0).unwrap()
    }

    /// Lengths whose counting staircase inverts N(x) = e^x / x.
    fn synthetic_lengths(n: usize) -> Vec<f64> {
        (3..n + 3)
            .map(|i| {
                let target = (i as f64).ln();
                let mut x = 2.0f64;
                for _ in 0..200 {
                    x = target + x.ln();
                }
                x
            })
            .collect()
    }

    #[test]
    fn entropy_fit_recovers_unit_rate() {
        let est = estimate_h(&synthetic_lengths(1500)).unwrap();
        assert!((est.h - 1.0).abs() < 0.05, "h = {}", est.h);
    }

    #[test]
    fn entropy_fit_is_stable_under_doubling() {
        let long = synthetic_lengths(1600);
        let est_full = estimate_h(&long).unwrap();
        let est_half = estimate_h(&long[..800]).unwrap();
        assert!(
            (est_full.h - est_half.h).abs() < est_full.ci + est_half.ci + 0.01,
            "full {} half {}",
            est_full.h,
            est_half.h
        );
    }

    #[test]
    fn entropy_needs_enough_orbits() {
        let err = estimate_h(&synthetic_lengths(20)).unwrap_err();
        assert!(matches!(err, AnalysisError::InsufficientData { .. }));
    }

    #[test]
    fn sigma_a_divergent_synthetic() {
        let sigma = 0.5;
        let pairs: Vec<(f64, f64)> = (1..=200)
            .map(|n| (n as f64, (sigma * n as f64).exp()))
            .collect();
        let est = estimate_sigma_a(&spec_from(&pairs)).unwrap();
        assert_eq!(est.branch, AbscissaBranch::Divergent);
        assert!((est.value - sigma).abs() < 0.05, "value {}", est.value);
    }

    #[test]
    fn sigma_a_convergent_synthetic() {
        let sigma = -0.5;
        let pairs: Vec<(f64, f64)> = (1..=200)
            .map(|n| (n as f64, (sigma * n as f64).exp()))
            .collect();
        let est = estimate_sigma_a(&spec_from(&pairs)).unwrap();
        assert_eq!(est.branch, AbscissaBranch::Convergent);
        assert!((est.value - sigma).abs() < 0.05, "value {}", est.value);
    }

    #[test]
    fn sigma_a_scale_invariant() {
        let pairs: Vec<(f64, f64)> = (1..=100)
            .map(|n| (n as f64, (-0.7 * n as f64).exp() * if n % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let scaled: Vec<(f64, f64)> = pairs.iter().map(|&(l, a)| (l, 10.0 * a)).collect();
        let e1 = estimate_sigma_a(&spec_from(&pairs)).unwrap();
        let e2 = estimate_sigma_a(&spec_from(&scaled)).unwrap();
        assert_abs_diff_eq!(e1.value, e2.value, epsilon = 1e-12);
    }

    #[test]
    fn sigma_a_single_line_flagged() {
        let est = estimate_sigma_a(&spec_from(&[(3.0, 2.0)])).unwrap();
        assert!(est.degenerate_window);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn sigma_a_all_zero_is_undefined() {
        let err = estimate_sigma_a(&spec_from(&[(1.0, 0.0), (2.0, 0.0)])).unwrap_err();
        assert!(matches!(err, AnalysisError::AllZeroCoefficients));
    }

    #[test]
    fn sigma_c_alternating_geometric() {
        let pairs: Vec<(f64, f64)> = (1..=200)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                (n as f64, sign * (-(n as f64)).exp())
            })
            .collect();
        let est = estimate_sigma_c(&spec_from(&pairs), None).unwrap();
        assert!((est.value + 1.0).abs() < 0.05, "value {}", est.value);
        assert!(est.valid);
    }

    #[test]
    fn sigma_c_positive_coefficients_track_sigma_a() {
        let pairs: Vec<(f64, f64)> = (1..=200)
            .map(|n| (n as f64, (-0.4 * n as f64).exp()))
            .collect();
        let spec = spec_from(&pairs);
        let sa = estimate_sigma_a(&spec).unwrap();
        let sc = estimate_sigma_c(&spec, None).unwrap();
        assert!((sa.value - sc.value).abs() < 0.05);
    }

    #[test]
    fn sigma_c_ignores_appended_zero_lines() {
        let pairs: Vec<(f64, f64)> = (1..=60)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                (n as f64, sign * (-0.8 * n as f64).exp())
            })
            .collect();
        let mut padded = pairs.clone();
        padded.push((61.0, 0.0));
        padded.push((62.0, 0.0));
        let e1 = estimate_sigma_c(&spec_from(&pairs), None).unwrap();
        let e2 = estimate_sigma_c(&spec_from(&padded), None).unwrap();
        assert_abs_diff_eq!(e1.value, e2.value, epsilon = 1e-15);
        assert_eq!(e2.skipped_zero_tails, vec![60, 61]);
    }

    #[test]
    fn tails_telescope_exactly() {
        let pairs: Vec<(f64, f64)> = (1..=80)
            .map(|n| {
                let sign = if n % 3 == 0 { -1.0 } else { 1.0 };
                (n as f64 * 0.37, sign * (-0.05 * n as f64).exp())
            })
            .collect();
        let spec = spec_from(&pairs);
        for m in 0..spec.len() - 1 {
            let diff = tail_sum(&spec, m) - tail_sum(&spec, m + 1);
            let scale = spec.a(m).abs().max(tail_sum(&spec, m).abs()).max(1e-300);
            assert!(
                (diff - spec.a(m)).abs() <= 1e-15 * scale,
                "m = {m}: diff {diff} vs a {}",
                spec.a(m)
            );
        }
        assert_abs_diff_eq!(tail_sum(&spec, spec.len() - 1), spec.a(spec.len() - 1), epsilon = 0.0);
    }

    #[test]
    fn remainder_single_line() {
        let spec = spec_from(&[(5.0, 3.0)]);
        let r = remainder_rk(&spec, 4.0, 1);
        assert!(!r.empty);
        assert_abs_diff_eq!(r.value, 3.0 * 1.0, epsilon = 1e-15);
        let r = remainder_rk(&spec, 5.0, 1);
        assert!(r.empty);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn remainder_slope_jump_is_the_coefficient() {
        // dR/du jumps by +a_m across lambda_m for k = 1.
        let spec = spec_from(&[(1.0, 0.4), (2.0, -0.7), (3.0, 0.2)]);
        let h = 1e-6;
        let slope_left = (remainder_rk(&spec, 2.0 - h, 1).value
            - remainder_rk(&spec, 2.0 - 2.0 * h, 1).value)
            / h;
        let slope_right = (remainder_rk(&spec, 2.0 + 2.0 * h, 1).value
            - remainder_rk(&spec, 2.0 + h, 1).value)
            / h;
        assert_abs_diff_eq!(slope_right - slope_left, spec.a(1), epsilon = 1e-6);
    }

    #[test]
    fn section3_telescoping_identity_fixed_case() {
        let spec = spec_from(&[(1.0, 0.3), (2.0, -0.9), (3.1, 0.5), (4.0, 0.2), (5.5, -0.1)]);
        // u' < lambda_2 < u < lambda_3 with lambda_1 < u'.
        let (u_prime, u) = (2.9, 3.4);
        let m = 2usize; // 0-based index of lambda = 3.1
        let lhs = remainder_rk(&spec, u_prime, 1).value - remainder_rk(&spec, u, 1).value;
        let t: f64 = (m + 1..spec.len()).map(|i| spec.a(i)).sum();
        let rhs = spec.a(m) * (spec.lambda(m) - u_prime) + (u - u_prime) * t;
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn typical_mean_reduces_to_partial_sum_at_k0() {
        let spec = spec_from(&[(1.0, 0.5), (2.0, -0.25), (4.0, 1.5)]);
        let s = Complex64::new(0.3, -0.2);
        let direct: Complex64 = spec
            .lines()
            .iter()
            .filter(|l| l.lambda < 3.0)
            .map(|l| l.a * (-s * l.lambda).exp())
            .sum();
        let tm = typical_mean(&spec, 3.0, 0, s);
        assert_abs_diff_eq!((tm - direct).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn typical_mean_balanced_first_moment_is_exact() {
        // Coefficients engineered so sum a_n lambda_n = 0: C^1(u)/u is then
        // exactly the full sum for every u past the last frequency.
        let spec = spec_from(&[(1.0, 1.0), (2.0, 1.0), (4.0, -0.75)]);
        let total = 1.0 + 1.0 - 0.75;
        for u in [5.0, 50.0, 5e3] {
            let tm = typical_mean(&spec, u, 1, Complex64::new(0.0, 0.0));
            assert_abs_diff_eq!(tm.re, total, epsilon = 1e-12);
            assert_abs_diff_eq!(tm.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn typical_mean_converges_at_the_moment_rate() {
        let pairs: Vec<(f64, f64)> = (1..=30).map(|n| (n as f64, 0.5f64.powi(n))).collect();
        let spec = spec_from(&pairs);
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let moment: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        let u = 1e7;
        let tm = typical_mean(&spec, u, 1, Complex64::new(0.0, 0.0));
        assert_abs_diff_eq!(tm.re, total - moment / u, epsilon = 1e-12);
        assert!((tm.re - total).abs() < 1e-6);
    }

    #[test]
    fn window_count_examples() {
        let h = HEstimate {
            h: 1.0,
            c: 0.0,
            fit_range: (0.0, 10.0),
            rms_residual: 0.0,
            slope_stderr: 0.0,
            ci: 1e-6,
            n_points: 100,
        };
        // Empty window far below the first length.
        let wc = window_count(&[8.0, 8.0, 8.0, 12.8], 20.0, 2.0, 0.3, 0.01, &h, Some(8.0)).unwrap();
        assert_eq!(wc.count, 0);
        assert_eq!(wc.verdict, WindowVerdict::OutOfRange);
        // Window straddling the bounce lengths counts all three rays.
        let wc = window_count(&[8.0, 8.0, 8.0, 12.8], 20.0, 7.9, 0.3, 0.01, &h, Some(3.0)).unwrap();
        assert_eq!(wc.count, 3);
        // Widening never decreases the count.
        let narrow =
            window_count(&[8.0, 8.0, 8.0, 12.8], 20.0, 7.95, 0.08, 0.005, &h, Some(3.0)).unwrap();
        assert!(wc.count >= narrow.count);
        // Parameter validation.
        assert!(window_count(&[8.0], 20.0, 1.0, 0.6, 0.01, &h, None).is_err());
        assert!(window_count(&[8.0], 20.0, 1.0, 0.3, 0.1, &h, None).is_err());
        assert!(window_count(&[8.0], 10.0, 9.9, 0.3, 0.01, &h, None).is_err());
    }

    #[test]
    fn band_check_on_clean_exponential_counts() {
        let lengths = synthetic_lengths(400);
        let horizon = *lengths.last().unwrap();
        let band = counting_band_check(&lengths, 1.0, 0.3, horizon);
        // The 1/x factor pushes e^x/x under the lower band until e^{0.3x}
        // clears x, so the onset lands near x = 6.1 here.
        let onset = band.onset.expect("band should hold somewhere");
        assert!(onset < horizon * 0.8, "onset {onset} horizon {horizon}");
    }
}
