//! Disk configurations in the plane and the standing hypotheses: pairwise
//! disjointness, at least three obstacles, and the no-eclipse condition
//! (no disk meets the convex hull of any other two).

use serde::Serialize;
use thiserror::Error;

use crate::vec2::Vec2;

/// Any clearance below `REL_DEGENERATE * d0` is treated as numerically
/// degenerate: downstream orbit solving assumes a uniform eclipse margin.
pub const REL_DEGENERATE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("configuration needs at least 3 disks, got {0}")]
    TooFewDisks(usize),
    #[error("disk {0} has non-positive or non-finite radius {1}")]
    BadRadius(usize, f64),
    #[error("disk {0} has non-finite center")]
    BadCenter(usize),
    #[error("disks {i} and {j} overlap or touch (boundary gap {gap})")]
    Overlap { i: usize, j: usize, gap: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Disk {
    pub center: Vec2,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Vec2, radius: f64) -> Disk {
        Disk { center, radius }
    }

    /// Boundary point at angle `theta` (measured from the disk center).
    pub fn boundary_point(&self, theta: f64) -> Vec2 {
        self.center + Vec2::from_angle(theta) * self.radius
    }

    pub fn curvature(&self) -> f64 {
        1.0 / self.radius
    }
}

/// Signed clearance of one obstacle from the convex hull of two others.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TripleClearance {
    /// Disk kept outside the hull.
    pub k: usize,
    /// Hull pair.
    pub i: usize,
    pub j: usize,
    /// dist(D_k, hull(D_i ∪ D_j)); negative on eclipse.
    pub clearance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub triples: Vec<TripleClearance>,
    pub min_clearance: f64,
    /// Absolute threshold below which a positive clearance is still rejected.
    pub degenerate_threshold: f64,
    /// True iff every clearance exceeds the degeneracy threshold.
    pub pass: bool,
    /// Positive clearances that fell under the threshold.
    pub degenerate: bool,
}

/// A validated obstacle system: disjoint disks, r >= 3, with its minimal
/// boundary separation and eclipse status computed on construction.
#[derive(Debug, Clone)]
pub struct Configuration {
    disks: Vec<Disk>,
    d0: f64,
    non_eclipse_ok: bool,
}

impl Configuration {
    pub fn new(disks: Vec<Disk>) -> Result<Configuration, GeometryError> {
        if disks.len() < 3 {
            return Err(GeometryError::TooFewDisks(disks.len()));
        }
        for (idx, d) in disks.iter().enumerate() {
            if !(d.radius > 0.0) || !d.radius.is_finite() {
                return Err(GeometryError::BadRadius(idx, d.radius));
            }
            if !d.center.is_finite() {
                return Err(GeometryError::BadCenter(idx));
            }
        }
        let d0 = pairwise_min_gap(&disks)?;
        let report = non_eclipse_report(&disks, d0);
        Ok(Configuration {
            disks,
            d0,
            non_eclipse_ok: report.pass,
        })
    }

    pub fn disks(&self) -> &[Disk] {
        &self.disks
    }

    pub fn len(&self) -> usize {
        self.disks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disks.is_empty()
    }

    /// Minimal pairwise boundary distance d0.
    pub fn d0(&self) -> f64 {
        self.d0
    }

    pub fn non_eclipse_ok(&self) -> bool {
        self.non_eclipse_ok
    }
}

/// Minimum over pairs of (|c_k - c_m| - r_k - r_m); errors if any pair
/// touches or overlaps.
fn pairwise_min_gap(disks: &[Disk]) -> Result<f64, GeometryError> {
    let mut d0 = f64::INFINITY;
    for i in 0..disks.len() {
        for j in (i + 1)..disks.len() {
            let gap = (disks[i].center - disks[j].center).norm() - disks[i].radius - disks[j].radius;
            if gap <= 0.0 {
                return Err(GeometryError::Overlap { i, j, gap });
            }
            d0 = d0.min(gap);
        }
    }
    Ok(d0)
}

/// Minimal pairwise boundary distance of a validated configuration.
pub fn min_separation(config: &Configuration) -> f64 {
    pairwise_min_gap(config.disks()).expect("configuration was validated disjoint")
}

/// Per-triple eclipse clearances for a validated configuration.
pub fn validate_non_eclipse(config: &Configuration) -> ValidationReport {
    non_eclipse_report(config.disks(), config.d0)
}

fn non_eclipse_report(disks: &[Disk], d0: f64) -> ValidationReport {
    let mut triples = Vec::new();
    let mut min_clearance = f64::INFINITY;
    for k in 0..disks.len() {
        for i in 0..disks.len() {
            for j in (i + 1)..disks.len() {
                if i == k || j == k {
                    continue;
                }
                let clearance = hull_clearance(&disks[k], &disks[i], &disks[j]);
                min_clearance = min_clearance.min(clearance);
                triples.push(TripleClearance { k, i, j, clearance });
            }
        }
    }
    let degenerate_threshold = REL_DEGENERATE * d0;
    let pass = min_clearance >= degenerate_threshold;
    let degenerate = !pass && min_clearance > 0.0;
    ValidationReport {
        triples,
        min_clearance,
        degenerate_threshold,
        pass,
        degenerate,
    }
}

/// Signed distance from disk `k` to the convex hull of disks `i` and `j`.
///
/// The hull is the union over t in [0, 1] of disks centered on the segment
/// [c_i, c_j] with linearly interpolated radius, so the clearance is the
/// minimum over t of |c_k - c(t)| - r(t) - r_k. That objective is convex in
/// t; the interior critical point solves a quadratic.
pub fn hull_clearance(k: &Disk, i: &Disk, j: &Disk) -> f64 {
    let u = j.center - i.center;
    let w = k.center - i.center;
    let dr = j.radius - i.radius;
    let aa = u.norm_squared();
    let b = w.dot(u);

    let f = |t: f64| (w - u * t).norm() - (i.radius + t * dr) - k.radius;

    let mut best = f(0.0).min(f(1.0));
    if aa > 0.0 {
        // Critical t of |w - t u| - t dr: (t aa - b) = dr |w - t u|.
        // Squaring gives t^2 aa (aa - dr^2) - 2 b (aa - dr^2) t + (b^2 - dr^2 |w|^2) = 0.
        let s = aa - dr * dr;
        // Disjoint hull pair implies |u| > r_i + r_j >= |dr|, so s > 0.
        if s > 0.0 {
            let disc = (b / aa) * (b / aa) - (b * b - dr * dr * w.norm_squared()) / (aa * s);
            if disc >= 0.0 {
                let root = disc.sqrt();
                for t in [b / aa - root, b / aa + root] {
                    // Keep the root of the unsquared equation.
                    if (t * aa - b) * dr >= 0.0 {
                        let tc = t.clamp(0.0, 1.0);
                        best = best.min(f(tc));
                    }
                }
            } else if dr == 0.0 {
                best = best.min(f((b / aa).clamp(0.0, 1.0)));
            }
        }
    }
    best
}

/// Distance from point `p` to the segment [a, b].
pub(crate) fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let u = b - a;
    let denom = u.norm_squared();
    let t = if denom > 0.0 {
        ((p - a).dot(u) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + u * t)).norm()
}

/// Three unit-radius disks at the vertices of an equilateral triangle of
/// side `side`. The standard symmetric pinball table used throughout the
/// tests; passes the eclipse check iff side > 4/sqrt(3).
pub fn equilateral_config(side: f64, radius: f64) -> Result<Configuration, GeometryError> {
    let h = side * 3.0_f64.sqrt() / 2.0;
    Configuration::new(vec![
        Disk::new(Vec2::new(0.0, 0.0), radius),
        Disk::new(Vec2::new(side, 0.0), radius),
        Disk::new(Vec2::new(side / 2.0, h), radius),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent clearance oracle: dense sampling of the hull family in t
    /// with ternary refinement of the best bracket (the objective is convex).
    fn clearance_oracle(k: &Disk, i: &Disk, j: &Disk) -> f64 {
        let f = |t: f64| {
            let c = i.center + (j.center - i.center) * t;
            let r = i.radius + (j.radius - i.radius) * t;
            (k.center - c).norm() - r - k.radius
        };
        let n = 4096;
        let mut best_t = 0.0;
        let mut best = f64::INFINITY;
        for s in 0..=n {
            let t = s as f64 / n as f64;
            let v = f(t);
            if v < best {
                best = v;
                best_t = t;
            }
        }
        let mut lo = (best_t - 1.0 / n as f64).max(0.0);
        let mut hi = (best_t + 1.0 / n as f64).min(1.0);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) <= f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0))
    }

    #[test]
    fn equilateral_side_six_clearances() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let report = validate_non_eclipse(&config);
        assert!(report.pass);
        let expect = 6.0 * 3.0_f64.sqrt() / 2.0 - 2.0;
        for t in &report.triples {
            assert_abs_diff_eq!(t.clearance, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn equilateral_tight_side_fails() {
        // 2.2 * sqrt(3)/2 - 2 < 0; threshold is side = 4/sqrt(3).
        let config = equilateral_config(2.2, 1.0).unwrap();
        let report = validate_non_eclipse(&config);
        assert!(!report.pass);
        assert!(report.min_clearance < 0.0);
        assert!(!config.non_eclipse_ok());
    }

    #[test]
    fn two_disks_rejected() {
        let err = Configuration::new(vec![
            Disk::new(Vec2::new(0.0, 0.0), 1.0),
            Disk::new(Vec2::new(5.0, 0.0), 1.0),
        ])
        .unwrap_err();
        assert!(matches!(err, GeometryError::TooFewDisks(2)));
    }

    #[test]
    fn min_separation_values() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        assert_abs_diff_eq!(min_separation(&config), 4.0, epsilon = 1e-12);

        let config = Configuration::new(vec![
            Disk::new(Vec2::new(0.0, 0.0), 1.0),
            Disk::new(Vec2::new(5.0, 0.0), 1.0),
            Disk::new(Vec2::new(0.0, 12.0), 1.0),
        ])
        .unwrap();
        assert_abs_diff_eq!(min_separation(&config), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn touching_disks_rejected() {
        let err = Configuration::new(vec![
            Disk::new(Vec2::new(0.0, 0.0), 1.0),
            Disk::new(Vec2::new(2.0, 0.0), 1.0),
            Disk::new(Vec2::new(0.0, 9.0), 1.0),
        ])
        .unwrap_err();
        assert!(matches!(err, GeometryError::Overlap { i: 0, j: 1, .. }));
    }

    #[test]
    fn clearance_matches_sampling_oracle() {
        // Mixed radii and asymmetric placements, including an eclipsing one.
        let cases = vec![
            (
                Disk::new(Vec2::new(1.0, 4.0), 0.5),
                Disk::new(Vec2::new(0.0, 0.0), 1.0),
                Disk::new(Vec2::new(7.0, 0.5), 2.0),
            ),
            (
                Disk::new(Vec2::new(3.0, 0.4), 0.7),
                Disk::new(Vec2::new(0.0, 0.0), 1.2),
                Disk::new(Vec2::new(8.0, -0.3), 0.4),
            ),
            (
                Disk::new(Vec2::new(-2.0, 1.0), 1.0),
                Disk::new(Vec2::new(0.0, 0.0), 1.0),
                Disk::new(Vec2::new(6.0, 0.0), 1.0),
            ),
        ];
        for (k, i, j) in cases {
            let closed = hull_clearance(&k, &i, &j);
            let sampled = clearance_oracle(&k, &i, &j);
            assert_abs_diff_eq!(closed, sampled, epsilon = 1e-9);
        }
    }

    #[test]
    fn clearance_scales_under_dilation() {
        let scale = 3.7;
        let base = [
            Disk::new(Vec2::new(0.3, 4.1), 0.6),
            Disk::new(Vec2::new(0.0, 0.0), 1.0),
            Disk::new(Vec2::new(6.5, 0.2), 1.4),
        ];
        let scaled: Vec<Disk> = base
            .iter()
            .map(|d| Disk::new(d.center * scale, d.radius * scale))
            .collect();
        let c0 = hull_clearance(&base[0], &base[1], &base[2]);
        let c1 = hull_clearance(&scaled[0], &scaled[1], &scaled[2]);
        assert_abs_diff_eq!(c1, scale * c0, epsilon = 1e-10);
    }

    #[test]
    fn validation_permutation_invariant() {
        let config = Configuration::new(vec![
            Disk::new(Vec2::new(0.0, 0.0), 1.0),
            Disk::new(Vec2::new(7.0, 0.0), 1.3),
            Disk::new(Vec2::new(2.0, 6.0), 0.8),
            Disk::new(Vec2::new(9.0, 6.0), 1.1),
        ])
        .unwrap();
        let base = validate_non_eclipse(&config);
        let permuted = Configuration::new(vec![
            config.disks()[2],
            config.disks()[0],
            config.disks()[3],
            config.disks()[1],
        ])
        .unwrap();
        let other = validate_non_eclipse(&permuted);
        assert_eq!(base.pass, other.pass);
        assert_abs_diff_eq!(base.min_clearance, other.min_clearance, epsilon = 1e-12);
    }
}
