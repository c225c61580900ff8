//! Assembles the Dirichlet-series data (λ_n, a_n) from the orbit database:
//! every primitive ray contributes one term per repetition inside the
//! truncation horizon, equal lengths merge into one spectral line, and the
//! bump-probe functional pairs the raw ray measure against a smooth test
//! function.

use serde::Serialize;
use thiserror::Error;

use crate::linearization::det_id_minus_power;
use crate::sum::kahan_sum;
use crate::symbolic::Word;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("spectrum lines must be strictly increasing in lambda (index {0})")]
    NotIncreasing(usize),
    #[error("non-finite term for word {word} repetition {repetition}")]
    NonFiniteTerm { word: Word, repetition: u32 },
    #[error("probe support [{lo}, {hi}] exceeds orbit coverage horizon {horizon}")]
    ProbeCoverage { lo: f64, hi: f64, horizon: f64 },
    #[error("probe center ell = {ell} below the minimal separation d0 = {d0}")]
    ProbeCenterTooSmall { ell: f64, d0: f64 },
    #[error("probe width scale m_scale = {m_scale} below max(1, 1/d0) = {min}")]
    ProbeScaleTooSmall { m_scale: f64, min: f64 },
}

/// One ray's contribution to a spectral line.
#[derive(Debug, Clone, Serialize)]
pub struct Contributor {
    /// Primitive itinerary.
    pub word: Word,
    pub repetition: u32,
    /// (-1)^m tau_primitive / |det(Id - P)|^{1/2}.
    pub term: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumLine {
    pub lambda: f64,
    pub a: f64,
    pub contributors: Vec<Contributor>,
}

/// Two terms closer than 10x the grouping tolerance but not merged.
#[derive(Debug, Clone, Serialize)]
pub struct GroupingWarning {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    lines: Vec<SpectrumLine>,
    x_max: f64,
    group_tol: f64,
    warnings: Vec<GroupingWarning>,
}

impl Spectrum {
    /// Wraps precomputed lines; frequencies must be strictly increasing.
    pub fn from_lines(
        lines: Vec<SpectrumLine>,
        x_max: f64,
        group_tol: f64,
    ) -> Result<Spectrum, SpectrumError> {
        for (i, pair) in lines.windows(2).enumerate() {
            if !(pair[1].lambda > pair[0].lambda) {
                return Err(SpectrumError::NotIncreasing(i + 1));
            }
        }
        Ok(Spectrum {
            lines,
            x_max,
            group_tol,
            warnings: Vec::new(),
        })
    }

    /// Synthetic spectrum from bare (lambda, a) pairs.
    pub fn from_pairs(
        pairs: &[(f64, f64)],
        x_max: f64,
        group_tol: f64,
    ) -> Result<Spectrum, SpectrumError> {
        let lines = pairs
            .iter()
            .map(|&(lambda, a)| SpectrumLine {
                lambda,
                a,
                contributors: Vec::new(),
            })
            .collect();
        Spectrum::from_lines(lines, x_max, group_tol)
    }

    pub fn lines(&self) -> &[SpectrumLine] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn group_tol(&self) -> f64 {
        self.group_tol
    }

    pub fn warnings(&self) -> &[GroupingWarning] {
        &self.warnings
    }

    pub fn lambda(&self, n: usize) -> f64 {
        self.lines[n].lambda
    }

    pub fn a(&self, n: usize) -> f64 {
        self.lines[n].a
    }

    /// Same frequencies with coefficients a_n e^{-lambda_n shift}; moves a
    /// series with nonnegative convergence abscissa into the negative
    /// regime before scanning.
    pub fn shifted(&self, shift: f64) -> Spectrum {
        let lines = self
            .lines
            .iter()
            .map(|l| SpectrumLine {
                lambda: l.lambda,
                a: l.a * (-l.lambda * shift).exp(),
                contributors: l.contributors.clone(),
            })
            .collect();
        Spectrum {
            lines,
            x_max: self.x_max,
            group_tol: self.group_tol,
            warnings: self.warnings.clone(),
        }
    }
}

/// Everything build_spectrum needs from one solved primitive orbit.
#[derive(Debug, Clone)]
pub struct PrimitiveRay {
    pub word: Word,
    pub tau_primitive: f64,
    /// Reflections of the primitive itinerary.
    pub m: usize,
    /// Trace of the primitive monodromy; repetitions take matrix powers
    /// through the unit-determinant trace recurrence.
    pub trace: f64,
}

impl PrimitiveRay {
    /// Signed series term of the k-th repetition.
    pub fn term(&self, k: u32) -> f64 {
        let det = det_id_minus_power(self.trace, k);
        let sign = if (self.m as u32 * k) % 2 == 0 { 1.0 } else { -1.0 };
        sign * self.tau_primitive / det.sqrt()
    }
}

/// Builds the grouped spectrum from primitive rays: one term per (primitive,
/// repetition) with k * tau_primitive <= x_max, terms within group_tol of
/// each other merged into a line at their |term|-weighted mean length.
pub fn build_spectrum(
    primitives: &[PrimitiveRay],
    x_max: f64,
    group_tol: f64,
) -> Result<Spectrum, SpectrumError> {
    let mut terms: Vec<(f64, Contributor)> = Vec::new();
    for p in primitives {
        let mut k = 1u32;
        while k as f64 * p.tau_primitive <= x_max {
            let term = p.term(k);
            if !term.is_finite() {
                return Err(SpectrumError::NonFiniteTerm {
                    word: p.word.clone(),
                    repetition: k,
                });
            }
            terms.push((
                k as f64 * p.tau_primitive,
                Contributor {
                    word: p.word.clone(),
                    repetition: k,
                    term,
                },
            ));
            k += 1;
        }
    }
    terms.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.word.cmp(&b.1.word))
            .then(a.1.repetition.cmp(&b.1.repetition))
    });

    let flush = |group: &mut Vec<(f64, Contributor)>, lines: &mut Vec<SpectrumLine>| {
        if group.is_empty() {
            return;
        }
        let wsum: f64 = group.iter().map(|(_, c)| c.term.abs()).sum();
        let lambda = if wsum > 0.0 {
            group.iter().map(|(t, c)| t * c.term.abs()).sum::<f64>() / wsum
        } else {
            group.iter().map(|(t, _)| t).sum::<f64>() / group.len() as f64
        };
        let a = kahan_sum(group.iter().map(|(_, c)| c.term));
        lines.push(SpectrumLine {
            lambda,
            a,
            contributors: group.drain(..).map(|(_, c)| c).collect(),
        });
    };

    let mut lines: Vec<SpectrumLine> = Vec::new();
    let mut warnings = Vec::new();
    let mut group: Vec<(f64, Contributor)> = Vec::new();
    for (tau, contrib) in terms {
        if let Some((last_tau, _)) = group.last() {
            let gap = tau - last_tau;
            if gap <= group_tol {
                group.push((tau, contrib));
                continue;
            }
            if gap <= 10.0 * group_tol {
                warnings.push(GroupingWarning {
                    lambda_lo: *last_tau,
                    lambda_hi: tau,
                    gap,
                });
            }
        }
        flush(&mut group, &mut lines);
        group.push((tau, contrib));
    }
    flush(&mut group, &mut lines);

    let mut spectrum = Spectrum::from_lines(lines, x_max, group_tol)?;
    spectrum.warnings = warnings;
    Ok(spectrum)
}

/// Test-function parameters for the ray-measure probe: the bump is centered
/// at `ell` and supported on [ell - 1/m_scale, ell + 1/m_scale].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeParams {
    pub ell: f64,
    pub m_scale: f64,
}

impl ProbeParams {
    pub fn validate(&self, d0: f64) -> Result<(), SpectrumError> {
        if self.ell < d0 {
            return Err(SpectrumError::ProbeCenterTooSmall { ell: self.ell, d0 });
        }
        let min = 1.0f64.max(1.0 / d0);
        if self.m_scale < min {
            return Err(SpectrumError::ProbeScaleTooSmall {
                m_scale: self.m_scale,
                min,
            });
        }
        Ok(())
    }
}

/// The fixed even bump: e^2 exp(-1/(1-t^2)) on (-1, 1), zero outside.
/// Exceeds 1 on [-1/2, 1/2]; rho(0) = e.
pub fn bump(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (2.0 - 1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Pairs the ray measure against the scaled bump centered at params.ell:
/// the sum over rays (with repetitions) of term * rho(m_scale (tau - ell)).
pub fn probe_fd(
    primitives: &[PrimitiveRay],
    horizon: f64,
    params: ProbeParams,
    d0: f64,
) -> Result<f64, SpectrumError> {
    params.validate(d0)?;
    let lo = params.ell - 1.0 / params.m_scale;
    let hi = params.ell + 1.0 / params.m_scale;
    if hi > horizon {
        return Err(SpectrumError::ProbeCoverage { lo, hi, horizon });
    }
    let mut acc = crate::sum::Kahan::new();
    for p in primitives {
        let mut k = 1u32;
        while k as f64 * p.tau_primitive <= hi {
            let tau = k as f64 * p.tau_primitive;
            if tau >= lo {
                let weight = bump(params.m_scale * (tau - params.ell));
                if weight != 0.0 {
                    acc.add(p.term(k) * weight);
                }
            }
            k += 1;
        }
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::equilateral_config;
    use crate::linearization::poincare_map;
    use crate::orbit::locate_orbit;
    use crate::symbolic::enumerate_words;
    use approx::assert_abs_diff_eq;

    fn equilateral_primitives(m_max: usize) -> (Vec<PrimitiveRay>, f64) {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let words = enumerate_words(3, m_max).unwrap();
        let mut prims = Vec::new();
        for w in words {
            if !w.is_primitive() {
                continue;
            }
            let orbit = locate_orbit(&config, &w, 1e-12).unwrap();
            let mono = poincare_map(&config, &orbit).unwrap();
            prims.push(PrimitiveRay {
                word: w,
                tau_primitive: orbit.tau_primitive,
                m: orbit.m(),
                trace: mono.trace,
            });
        }
        (prims, config.d0())
    }

    #[test]
    fn single_line_at_the_bounce_length() {
        let (prims, _) = equilateral_primitives(3);
        let spec = build_spectrum(&prims, 9.0, 4e-9).unwrap();
        assert_eq!(spec.len(), 1);
        let line = &spec.lines()[0];
        assert_abs_diff_eq!(line.lambda, 8.0, epsilon = 1e-9);
        assert_eq!(line.contributors.len(), 3);
        // Three two-bounce rays, each 8/sqrt(96), positive sign.
        assert_abs_diff_eq!(line.a, 24.0 / 96.0_f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(line.a, 6.0_f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn triangle_line_enters_negative() {
        let (prims, _) = equilateral_primitives(3);
        let spec = build_spectrum(&prims, 13.0, 4e-9).unwrap();
        assert_eq!(spec.len(), 2);
        let line = &spec.lines()[1];
        assert_abs_diff_eq!(line.lambda, 3.0 * (6.0 - 3.0_f64.sqrt()), epsilon = 1e-9);
        assert_eq!(line.contributors.len(), 2);
        assert!(line.a < 0.0, "odd reflection count flips the sign");
    }

    #[test]
    fn truncation_threshold_is_inclusive() {
        let (prims, _) = equilateral_primitives(3);
        let spec = build_spectrum(&prims, 8.0 - 1e-6, 4e-9).unwrap();
        assert!(spec.is_empty());
        let spec = build_spectrum(&prims, 8.0, 4e-9).unwrap();
        assert_eq!(spec.len(), 1);
    }

    #[test]
    fn repetitions_inherit_matrix_powers() {
        let (prims, _) = equilateral_primitives(3);
        let spec = build_spectrum(&prims, 17.0, 4e-9).unwrap();
        // Lines: 8 (three 2-bounce rays), 12.80 (123 and 132), 16 (the
        // doubled 2-bounce rays).
        assert_eq!(spec.len(), 3);
        let doubled = &spec.lines()[2];
        assert_abs_diff_eq!(doubled.lambda, 16.0, epsilon = 1e-9);
        assert!(doubled.contributors.iter().all(|c| c.repetition == 2));
        // Even total reflection count: positive sign again.
        assert!(doubled.a > 0.0);
    }

    #[test]
    fn line_coefficient_bounded_by_contributor_mass() {
        let (prims, _) = equilateral_primitives(5);
        let spec = build_spectrum(&prims, 22.0, 4e-9).unwrap();
        for line in spec.lines() {
            let mass: f64 = line.contributors.iter().map(|c| c.term.abs()).sum();
            assert!(line.a.abs() <= mass + 1e-15);
        }
    }

    #[test]
    fn probe_on_empty_support_is_zero() {
        let (prims, d0) = equilateral_primitives(3);
        let v = probe_fd(
            &prims,
            12.0,
            ProbeParams {
                ell: 10.0,
                m_scale: 10.0,
            },
            d0,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn probe_at_the_bounce_line() {
        let (prims, d0) = equilateral_primitives(3);
        let v = probe_fd(
            &prims,
            12.0,
            ProbeParams {
                ell: 8.0,
                m_scale: 10.0,
            },
            d0,
        )
        .unwrap();
        let expect = (24.0 / 96.0_f64.sqrt()) * 1.0_f64.exp();
        assert_abs_diff_eq!(v, expect, epsilon = 1e-9);
    }

    #[test]
    fn probe_coverage_is_enforced() {
        let (prims, d0) = equilateral_primitives(3);
        let err = probe_fd(
            &prims,
            12.0,
            ProbeParams {
                ell: 11.9,
                m_scale: 5.0,
            },
            d0,
        )
        .unwrap_err();
        assert!(matches!(err, SpectrumError::ProbeCoverage { .. }));
    }

    #[test]
    fn bump_shape_constraints() {
        assert_abs_diff_eq!(bump(0.0), 1.0_f64.exp(), epsilon = 1e-15);
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(-1.5), 0.0);
        for i in 0..=50 {
            let t = i as f64 / 100.0;
            assert!(bump(t) > 1.0, "rho({t}) must exceed 1 inside [-1/2, 1/2]");
            assert_abs_diff_eq!(bump(t), bump(-t), epsilon = 0.0);
        }
    }

    #[test]
    fn from_lines_rejects_non_increasing() {
        let err = Spectrum::from_pairs(&[(1.0, 1.0), (1.0, 2.0)], 2.0, 0.0).unwrap_err();
        assert!(matches!(err, SpectrumError::NotIncreasing(1)));
    }
}
