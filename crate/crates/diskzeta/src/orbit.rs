//! Locates the unique periodic ray carrying a given itinerary by driving the
//! polygonal length functional L(theta_1..theta_m) to a critical point over
//! the boundary angles, then certifies the reflection law, non-grazing
//! incidence, and freedom from occlusion by third disks.

use thiserror::Error;

use crate::geometry::{point_segment_distance, Configuration};
use crate::symbolic::Word;
use crate::vec2::Vec2;

/// Incidence cosines below this are numerically suspicious geometry.
pub const GRAZING_COS: f64 = 1e-8;
/// Gradient norm at which the solve hands over from sweeps to Newton.
const SWITCH_TOL: f64 = 1e-4;
/// Combined iteration cap (sweeps plus Newton steps).
const MAX_ITER: usize = 200;

pub const DEFAULT_SOLVER_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("word {word} references disk {symbol} but configuration has {r} disks")]
    SymbolOutOfRange { word: Word, symbol: u8, r: usize },
    #[error("solver did not converge for word {word}: residual {residual} after {iters} iterations")]
    NotConverged {
        word: Word,
        residual: f64,
        iters: usize,
    },
    #[error("grazing incidence for word {word} at reflection {index} (cos angle {cosine})")]
    Grazing {
        word: Word,
        index: usize,
        cosine: f64,
    },
    #[error("segment {segment} of word {word} is occluded by disk {disk} (clearance {clearance})")]
    Occluded {
        word: Word,
        segment: usize,
        disk: usize,
        clearance: f64,
    },
}

/// One oriented periodic ray: itinerary, reflection points, period data and
/// solver diagnostics.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub word: Word,
    pub points: Vec<Vec2>,
    /// Boundary angle on each disk, radians.
    pub angles: Vec<f64>,
    /// Period tau (full polygonal length).
    pub tau: f64,
    /// Primitive period tau / repetition count.
    pub tau_primitive: f64,
    /// cos of the incidence angle at each reflection, in (0, 1].
    pub incidence_cosines: Vec<f64>,
    /// Reflection-law residual norm at the accepted solution.
    pub residual_norm: f64,
}

impl PeriodicOrbit {
    pub fn m(&self) -> usize {
        self.word.len()
    }

    /// Repetition count of the itinerary.
    pub fn repetition(&self) -> u32 {
        self.word.primitive_decomposition().repetition
    }
}

/// Cyclic polygonal length of a reflection-point sequence.
pub fn orbit_length(points: &[Vec2]) -> f64 {
    let m = points.len();
    (0..m).map(|i| (points[(i + 1) % m] - points[i]).norm()).sum()
}

/// Tangential derivative of the total length with respect to each boundary
/// angle; identically zero exactly at billiard orbits.
pub fn reflection_residual(config: &Configuration, points: &[Vec2], word: &Word) -> Vec<f64> {
    let m = points.len();
    let disks = config.disks();
    let mut res = Vec::with_capacity(m);
    for i in 0..m {
        let disk = &disks[(word.symbols()[i] - 1) as usize];
        let n = (points[i] - disk.center) * (1.0 / disk.radius);
        let tangent = n.perp() * disk.radius;
        let u_in = (points[i] - points[(i + m - 1) % m]).normalized();
        let u_out = (points[(i + 1) % m] - points[i]).normalized();
        res.push(tangent.dot(u_in - u_out));
    }
    res
}

struct LengthProblem<'a> {
    centers: Vec<Vec2>,
    radii: Vec<f64>,
    config: &'a Configuration,
}

impl<'a> LengthProblem<'a> {
    fn new(config: &'a Configuration, word: &Word) -> Result<Self, SolverError> {
        let disks = config.disks();
        let mut centers = Vec::with_capacity(word.len());
        let mut radii = Vec::with_capacity(word.len());
        for &s in word.symbols() {
            let idx = (s - 1) as usize;
            if idx >= disks.len() {
                return Err(SolverError::SymbolOutOfRange {
                    word: word.clone(),
                    symbol: s,
                    r: disks.len(),
                });
            }
            centers.push(disks[idx].center);
            radii.push(disks[idx].radius);
        }
        Ok(LengthProblem {
            centers,
            radii,
            config,
        })
    }

    fn m(&self) -> usize {
        self.centers.len()
    }

    fn point(&self, i: usize, theta: f64) -> Vec2 {
        self.centers[i] + Vec2::from_angle(theta) * self.radii[i]
    }

    fn points(&self, angles: &[f64]) -> Vec<Vec2> {
        angles.iter().enumerate().map(|(i, &t)| self.point(i, t)).collect()
    }

    fn length(&self, angles: &[f64]) -> f64 {
        orbit_length(&self.points(angles))
    }

    fn gradient(&self, angles: &[f64]) -> Vec<f64> {
        let m = self.m();
        let pts = self.points(angles);
        let mut g = vec![0.0; m];
        for i in 0..m {
            let n = Vec2::from_angle(angles[i]);
            let tangent = n.perp() * self.radii[i];
            let u_in = (pts[i] - pts[(i + m - 1) % m]).normalized();
            let u_out = (pts[(i + 1) % m] - pts[i]).normalized();
            g[i] = tangent.dot(u_in - u_out);
        }
        g
    }

    /// Dense Hessian of the length functional, assembled edge by edge.
    fn hessian(&self, angles: &[f64]) -> Vec<f64> {
        let m = self.m();
        let pts = self.points(angles);
        let mut h = vec![0.0; m * m];
        for i in 0..m {
            let j = (i + 1) % m;
            let e = pts[j] - pts[i];
            let len = e.norm();
            let u = e * (1.0 / len);
            let ni = Vec2::from_angle(angles[i]);
            let nj = Vec2::from_angle(angles[j]);
            let ti = ni.perp() * self.radii[i];
            let tj = nj.perp() * self.radii[j];
            let uti = u.dot(ti);
            let utj = u.dot(tj);
            h[i * m + i] += (ti.dot(ti) - uti * uti) / len + self.radii[i] * u.dot(ni);
            h[j * m + j] += (tj.dot(tj) - utj * utj) / len - self.radii[j] * u.dot(nj);
            let cross = (-ti.dot(tj) + uti * utj) / len;
            h[i * m + j] += cross;
            h[j * m + i] += cross;
        }
        h
    }

    /// Diagonal Hessian entry from the two edges incident to point i.
    ///
    /// With v the unit vector from point i to either neighbor, each edge
    /// contributes (|T|^2 - (v.T)^2)/len + a_i (v.n_i).
    fn local_curvature(&self, angles: &[f64], i: usize) -> f64 {
        let m = self.m();
        let pi = self.point(i, angles[i]);
        let ni = Vec2::from_angle(angles[i]);
        let ti = ni.perp() * self.radii[i];
        let mut total = 0.0;
        for neighbor in [(i + m - 1) % m, (i + 1) % m] {
            let d = self.point(neighbor, angles[neighbor]) - pi;
            let len = d.norm();
            let v = d * (1.0 / len);
            let vti = v.dot(ti);
            total += (ti.dot(ti) - vti * vti) / len + self.radii[i] * v.dot(ni);
        }
        total
    }
}

/// Gaussian elimination with partial pivoting for the small dense Newton
/// systems (m <= a few dozen).
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            if factor != 0.0 {
                for k in col..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in (row + 1)..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    Some(x)
}

fn grad_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Deterministic initial guess: each reflection point aimed at the midpoint
/// of the previous and next disk centers.
fn initial_angles(problem: &LengthProblem<'_>) -> Vec<f64> {
    let m = problem.m();
    (0..m)
        .map(|i| {
            let prev = problem.centers[(i + m - 1) % m];
            let next = problem.centers[(i + 1) % m];
            let target = (prev + next) * 0.5;
            let dir = target - problem.centers[i];
            if dir.norm() > 1e-12 {
                dir.angle()
            } else {
                (next - problem.centers[i]).angle()
            }
        })
        .collect()
}

/// Finds the periodic ray with itinerary `word`, to gradient norm `tol`.
///
/// Two-phase solve: cyclic coordinate descent (globally stable) down to
/// 1e-4, then damped Newton for the quadratic tail. Deterministic for a
/// given (config, word).
pub fn locate_orbit(
    config: &Configuration,
    word: &Word,
    tol: f64,
) -> Result<PeriodicOrbit, SolverError> {
    let problem = LengthProblem::new(config, word)?;
    let m = problem.m();
    let mut angles = initial_angles(&problem);
    let mut iters = 0usize;

    // Phase 1: coordinate sweeps with clamped 1D Newton steps and
    // backtracking on the local two-segment length.
    let mut g = problem.gradient(&angles);
    while grad_norm(&g) >= SWITCH_TOL && iters < MAX_ITER * 3 / 5 {
        for i in 0..m {
            let gi = problem.gradient(&angles)[i];
            let hi = problem.local_curvature(&angles, i);
            let mut step = if hi.abs() > 1e-12 { -gi / hi } else { -gi.signum() * 0.1 };
            step = step.clamp(-0.5, 0.5);
            let before = problem.length(&angles);
            let mut accepted = false;
            for _ in 0..25 {
                let mut trial = angles.clone();
                trial[i] += step;
                if problem.length(&trial) < before {
                    angles = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // Already at the 1D minimum to rounding.
                continue;
            }
        }
        iters += 1;
        g = problem.gradient(&angles);
    }

    // Phase 2: damped Newton on the gradient.
    let mut gnorm = grad_norm(&g);
    while gnorm >= tol && iters < MAX_ITER {
        let h = problem.hessian(&angles);
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let Some(mut step) = solve_dense(h, rhs) else {
            break;
        };
        let maxstep = step.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        if maxstep > 0.5 {
            let scale = 0.5 / maxstep;
            for s in &mut step {
                *s *= scale;
            }
        }
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = angles
                .iter()
                .zip(&step)
                .map(|(t, s)| t + lambda * s)
                .collect();
            let tg = problem.gradient(&trial);
            if grad_norm(&tg) < gnorm {
                angles = trial;
                g = tg;
                gnorm = grad_norm(&g);
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        iters += 1;
        if !improved {
            break;
        }
    }

    if gnorm >= tol {
        return Err(SolverError::NotConverged {
            word: word.clone(),
            residual: gnorm,
            iters,
        });
    }

    certify(config, &problem, word, angles, gnorm)
}

/// Reconstructs and certifies an orbit from stored boundary angles: points
/// are rebuilt on the named disks, the reflection residual is recomputed,
/// and the grazing/occlusion checks rerun. The residual is reported, not
/// thresholded; persistence validation applies its own bound.
pub fn rebuild_orbit(
    config: &Configuration,
    word: &Word,
    angles: &[f64],
) -> Result<PeriodicOrbit, SolverError> {
    let problem = LengthProblem::new(config, word)?;
    let g = problem.gradient(angles);
    certify(config, &problem, word, angles.to_vec(), grad_norm(&g))
}

fn certify(
    config: &Configuration,
    problem: &LengthProblem<'_>,
    word: &Word,
    angles: Vec<f64>,
    residual_norm: f64,
) -> Result<PeriodicOrbit, SolverError> {
    let m = problem.m();
    let pts = problem.points(&angles);
    let disks = config.disks();

    let mut incidence = Vec::with_capacity(m);
    for i in 0..m {
        let n = Vec2::from_angle(angles[i]);
        let u_out = (pts[(i + 1) % m] - pts[i]).normalized();
        let u_in = (pts[i] - pts[(i + m - 1) % m]).normalized();
        let cos_out = u_out.dot(n);
        let cos_in = -u_in.dot(n);
        let cosine = cos_out.min(cos_in);
        if cosine < GRAZING_COS {
            return Err(SolverError::Grazing {
                word: word.clone(),
                index: i,
                cosine,
            });
        }
        incidence.push(cos_out);
    }

    for i in 0..m {
        let j = (i + 1) % m;
        let si = (word.symbols()[i] - 1) as usize;
        let sj = (word.symbols()[j] - 1) as usize;
        for (dk, disk) in disks.iter().enumerate() {
            if dk == si || dk == sj {
                continue;
            }
            let clearance = point_segment_distance(disk.center, pts[i], pts[j]) - disk.radius;
            if clearance <= 0.0 {
                return Err(SolverError::Occluded {
                    word: word.clone(),
                    segment: i,
                    disk: dk,
                    clearance,
                });
            }
        }
    }

    let tau = orbit_length(&pts);
    let repetition = word.primitive_decomposition().repetition;
    Ok(PeriodicOrbit {
        word: word.clone(),
        points: pts,
        angles,
        tau,
        tau_primitive: tau / repetition as f64,
        incidence_cosines: incidence,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::equilateral_config;
    use approx::assert_abs_diff_eq;
    use std::str::FromStr;

    fn word(s: &str) -> Word {
        Word::from_str(s).unwrap()
    }

    #[test]
    fn diametral_bounce_orbit() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let orbit = locate_orbit(&config, &word("12"), 1e-12).unwrap();
        assert_abs_diff_eq!(orbit.tau, 8.0, epsilon = 1e-10);
        // Points on the line of centers.
        for p in &orbit.points {
            assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-10);
        }
        assert!(orbit.residual_norm <= 1e-12);
        assert_eq!(orbit.repetition(), 1);
    }

    #[test]
    fn triangle_orbit_length() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let orbit = locate_orbit(&config, &word("123"), 1e-12).unwrap();
        let expect = 3.0 * (6.0 - 3.0_f64.sqrt());
        assert_abs_diff_eq!(orbit.tau, expect, epsilon = 1e-10);
        // Reflection points displaced by the radius toward the centroid.
        let centroid = Vec2::new(3.0, 3.0 * 3.0_f64.sqrt() / 3.0);
        for (i, p) in orbit.points.iter().enumerate() {
            let c = config.disks()[(orbit.word.symbols()[i] - 1) as usize].center;
            let expect_p = c + (centroid - c).normalized();
            assert_abs_diff_eq!((expect_p - *p).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn analytic_triangle_points_have_tiny_residual() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let centroid = Vec2::new(3.0, 3.0_f64.sqrt());
        let w = word("123");
        let pts: Vec<Vec2> = w
            .symbols()
            .iter()
            .map(|&s| {
                let c = config.disks()[(s - 1) as usize].center;
                c + (centroid - c).normalized()
            })
            .collect();
        let res = reflection_residual(&config, &pts, &w);
        let norm = res.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 1e-12, "residual {norm}");
        assert_abs_diff_eq!(orbit_length(&pts), 3.0 * (6.0 - 3.0_f64.sqrt()), epsilon = 1e-12);
    }

    #[test]
    fn perturbed_points_are_not_critical() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let orbit = locate_orbit(&config, &word("12"), 1e-12).unwrap();
        let mut angles = orbit.angles.clone();
        angles[0] += 1e-3;
        let pts: Vec<Vec2> = angles
            .iter()
            .enumerate()
            .map(|(i, &t)| config.disks()[(orbit.word.symbols()[i] - 1) as usize].boundary_point(t))
            .collect();
        let res = reflection_residual(&config, &pts, &orbit.word);
        let norm = res.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 1e-5);
    }

    #[test]
    fn polygonal_lengths() {
        let square = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        assert_abs_diff_eq!(orbit_length(&square), 4.0, epsilon = 1e-15);
        let pair = vec![Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0)];
        assert_abs_diff_eq!(orbit_length(&pair), 8.0, epsilon = 1e-15);
    }

    #[test]
    fn repeated_word_doubles_tau() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let single = locate_orbit(&config, &word("12"), 1e-12).unwrap();
        let double = locate_orbit(&config, &word("1212"), 1e-12).unwrap();
        assert_abs_diff_eq!(double.tau, 2.0 * single.tau, epsilon = 1e-9);
        assert_abs_diff_eq!(double.tau_primitive, single.tau, epsilon = 1e-9);
        assert_eq!(double.repetition(), 2);
    }

    #[test]
    fn reversed_word_same_tau() {
        let config = Configuration::new(vec![
            crate::geometry::Disk::new(Vec2::new(0.0, 0.0), 1.0),
            crate::geometry::Disk::new(Vec2::new(6.3, 0.1), 0.9),
            crate::geometry::Disk::new(Vec2::new(2.8, 5.9), 1.1),
        ])
        .unwrap();
        let fwd = locate_orbit(&config, &word("123"), 1e-12).unwrap();
        let rev = locate_orbit(&config, &word("132"), 1e-12).unwrap();
        assert_abs_diff_eq!(fwd.tau, rev.tau, epsilon = 1e-9);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let w = word("1213");
        let problem = LengthProblem::new(&config, &w).unwrap();
        let angles = vec![0.3, -2.8, 1.9, 0.7];
        let g = problem.gradient(&angles);
        let h = problem.hessian(&angles);
        let m = angles.len();
        let step = 1e-6;
        for i in 0..m {
            let mut up = angles.clone();
            let mut dn = angles.clone();
            up[i] += step;
            dn[i] -= step;
            let fd_g = (problem.length(&up) - problem.length(&dn)) / (2.0 * step);
            assert_abs_diff_eq!(g[i], fd_g, epsilon = 1e-7);
            let gu = problem.gradient(&up);
            let gd = problem.gradient(&dn);
            for j in 0..m {
                let fd_h = (gu[j] - gd[j]) / (2.0 * step);
                assert_abs_diff_eq!(h[j * m + i], fd_h, epsilon = 1e-6);
            }
            assert_abs_diff_eq!(
                problem.local_curvature(&angles, i),
                h[i * m + i],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn tau_at_least_m_d0() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        for s in ["12", "123", "1213", "1232", "12123"] {
            let orbit = locate_orbit(&config, &word(s), 1e-12).unwrap();
            assert!(orbit.tau >= orbit.m() as f64 * config.d0() - 1e-9);
        }
    }
}
