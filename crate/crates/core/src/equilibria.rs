//! Maxwell ring relative equilibrium and the satellite equilibria around it.

use std::f64::consts::PI;
use std::fmt;

use log::debug;
use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{BodySystem, Mechanics, SatelliteSystem, COLLISION_TOL};
use crate::error::{Error, Result};

/// Angular tolerance for ray membership.
pub const RAY_TOL: f64 = 1e-8;
/// Equilibria with `|D|` at or below this are treated as degenerate.
pub const DEGENERATE_DET: f64 = 1e-8;
/// Distance under which two polished points are the same equilibrium.
pub const DEDUP_DIST: f64 = 1e-6;
/// Gradient norm required of a polished equilibrium.
pub const POLISH_TOL: f64 = 1e-10;

/// Regular n-gon of unit masses around a central mass `mu`, rotating rigidly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingConfiguration {
    pub n: usize,
    pub mu: f64,
    pub s1: f64,
    pub omega: f64,
    /// `positions[0]` is the center, `positions[j] = (cos j zeta, sin j zeta)`.
    pub positions: Vec<[f64; 2]>,
    pub masses: Vec<f64>,
}

/// `s1 = (1/4) sum_{j=1}^{n-1} 1 / sin(j zeta / 2)`.
pub fn ring_sum(n: usize) -> f64 {
    let zeta = 2.0 * PI / n as f64;
    0.25 * (1..n).map(|j| 1.0 / (j as f64 * zeta / 2.0).sin()).sum::<f64>()
}

/// Builds the Maxwell ring with `omega = mu + s1`.
pub fn maxwell_ring(n: usize, mu: f64) -> Result<RingConfiguration> {
    if n < 2 {
        return Err(Error::Argument(format!("ring needs n >= 2, got {n}")));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::Argument(format!("central mass {mu} must be finite and >= 0")));
    }
    let zeta = 2.0 * PI / n as f64;
    let s1 = ring_sum(n);
    let mut positions = vec![[0.0, 0.0]];
    positions.extend((1..=n).map(|j| {
        let a = j as f64 * zeta;
        [a.cos(), a.sin()]
    }));
    let mut masses = vec![mu];
    masses.extend(std::iter::repeat_n(1.0, n));
    Ok(RingConfiguration {
        n,
        mu,
        s1,
        omega: mu + s1,
        positions,
        masses,
    })
}

impl RingConfiguration {
    pub fn zeta(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn body_system(&self) -> BodySystem {
        BodySystem::new(self.masses.clone(), self.omega).expect("ring masses are valid")
    }

    /// Configuration vector of length `3(n+1)` with all `z = 0`.
    pub fn state_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * (self.n + 1),
            self.positions.iter().flat_map(|p| [p[0], p[1], 0.0]),
        )
    }

    /// Satellite problem over the ring in units where the frame speed is one.
    ///
    /// Time is rescaled by `sqrt(omega)`, which leaves lengths unchanged and
    /// divides every primary mass by `omega`. A massless center is omitted.
    pub fn satellite_system(&self) -> SatelliteSystem {
        let mut anchors = Vec::new();
        let mut masses = Vec::new();
        for (p, &m) in self.positions.iter().zip(&self.masses) {
            if m > 0.0 {
                anchors.push(*p);
                masses.push(m / self.omega);
            }
        }
        SatelliteSystem::new(anchors, masses).expect("ring anchors are distinct")
    }

    /// Time scale between ring units and the unit-speed satellite units.
    pub fn satellite_time_scale(&self) -> f64 {
        self.omega.sqrt()
    }
}

/// Largest violation of the relative-equilibrium relations.
pub fn ring_residual(cfg: &RingConfiguration) -> f64 {
    let a = &cfg.positions;
    let mut worst = 0.0f64;
    for j in 0..a.len() {
        let mut r = Vector2::new(cfg.omega * a[j][0], cfg.omega * a[j][1]);
        for i in 0..a.len() {
            if i == j {
                continue;
            }
            let d = Vector2::new(a[j][0] - a[i][0], a[j][1] - a[i][1]);
            let n = d.norm();
            r -= d * (cfg.masses[i] / (n * n * n));
        }
        worst = worst.max(r.norm());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquilibriumLabel {
    /// Outer point on a ray through a body.
    R1,
    /// Inner point on a ray through a body.
    R2,
    /// Minimum outside the ring on a ray bisecting two bodies.
    R3,
    /// Any other on-ray orbit (the small-`mu` interior orbits).
    Extra,
    Other,
}

impl fmt::Display for EquilibriumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::R1 => "r1",
            Self::R2 => "r2",
            Self::R3 => "r3",
            Self::Extra => "extra",
            Self::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumPoint {
    pub coords: [f64; 2],
    /// Trace of the planar Hessian.
    pub trace: f64,
    /// Determinant of the planar Hessian.
    pub det: f64,
    pub morse_index: usize,
    pub label: EquilibriumLabel,
    pub orbit_id: usize,
}

impl EquilibriumPoint {
    pub fn position(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.coords[0], self.coords[1], 0.0])
    }

    pub fn is_degenerate(&self) -> bool {
        self.det.abs() <= DEGENERATE_DET
    }

    pub fn radius(&self) -> f64 {
        self.coords[0].hypot(self.coords[1])
    }
}

/// Polar seed grid for the equilibrium search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchGrid {
    pub angular: usize,
    pub radial: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            angular: 360,
            radial: 60,
            r_min: 0.1,
            r_max: 3.0,
        }
    }
}

fn planar_parts(sys: &SatelliteSystem, p: Vector2<f64>) -> Result<(Vector2<f64>, Matrix2<f64>)> {
    let x = DVector::from_vec(vec![p[0], p[1], 0.0]);
    let g = sys.gradient(&x)?;
    let h = sys.hessian(&x)?;
    Ok((
        Vector2::new(g[0], g[1]),
        Matrix2::new(h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]),
    ))
}

/// Damped Newton on the planar gradient.
fn polish(sys: &SatelliteSystem, seed: Vector2<f64>) -> Option<Vector2<f64>> {
    let mut p = seed;
    for _ in 0..80 {
        let (g, h) = planar_parts(sys, p).ok()?;
        if g.norm() < 1e-14 {
            break;
        }
        let mut step = h.lu().solve(&(-g))?;
        let x = DVector::from_vec(vec![p[0], p[1], 0.0]);
        let limit = 0.5 * sys.min_separation(&x);
        if step.norm() > limit {
            step *= limit / step.norm();
        }
        p += step;
        if p.norm() > 1e3 {
            return None;
        }
    }
    let (g, _) = planar_parts(sys, p).ok()?;
    let x = DVector::from_vec(vec![p[0], p[1], 0.0]);
    (g.norm() < POLISH_TOL && sys.min_separation(&x) > 1e3 * COLLISION_TOL).then_some(p)
}

fn ray_offset(angle: f64, period: f64) -> f64 {
    let r = angle.rem_euclid(period);
    r.min(period - r)
}

/// Fills trace, determinant, index and geometric label of a critical point.
pub fn classify_equilibrium(p: [f64; 2], cfg: &RingConfiguration) -> Result<EquilibriumPoint> {
    let sys = cfg.satellite_system();
    let (g, h) = planar_parts(&sys, Vector2::new(p[0], p[1]))?;
    if g.norm() > 1e-8 {
        return Err(Error::Precondition(format!(
            "gradient norm {:.3e} at ({}, {}) is not small",
            g.norm(),
            p[0],
            p[1]
        )));
    }
    let trace = h.trace();
    let det = h.determinant();
    let morse_index = if det < 0.0 {
        1
    } else if trace > 0.0 {
        0
    } else {
        2
    };
    let radius = p[0].hypot(p[1]);
    let zeta = cfg.zeta();
    let angle = p[1].atan2(p[0]);
    let on_body_ray = ray_offset(angle, zeta) < RAY_TOL;
    let on_bisector = ray_offset(angle - zeta / 2.0, zeta) < RAY_TOL;
    let label = if det.abs() <= DEGENERATE_DET || radius < RAY_TOL {
        EquilibriumLabel::Other
    } else if on_body_ray {
        if radius > 1.0 {
            EquilibriumLabel::R1
        } else {
            EquilibriumLabel::R2
        }
    } else if on_bisector {
        if radius > 1.0 && morse_index == 0 {
            EquilibriumLabel::R3
        } else {
            EquilibriumLabel::Extra
        }
    } else {
        EquilibriumLabel::Other
    };
    Ok(EquilibriumPoint {
        coords: p,
        trace,
        det,
        morse_index,
        label,
        orbit_id: 0,
    })
}

fn rotate(p: Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * p[0] - s * p[1], s * p[0] + c * p[1])
}

/// Representative of the Z_n orbit with polar angle in `[0, zeta)`.
fn normalize(p: Vector2<f64>, zeta: f64) -> Vector2<f64> {
    if p.norm() < DEDUP_DIST {
        return Vector2::zeros();
    }
    let angle = p[1].atan2(p[0]);
    let k = (angle / zeta).floor();
    let mut q = rotate(p, -k * zeta);
    // points on the cut may land just below zeta
    if q[1].atan2(q[0]) > zeta - RAY_TOL {
        q = rotate(q, -zeta);
    }
    q
}

/// Critical points of the planar satellite potential over the ring, grouped
/// into Z_n orbits and labeled.
pub fn find_satellite_equilibria(cfg: &RingConfiguration, grid: &SearchGrid) -> Result<Vec<EquilibriumPoint>> {
    if grid.angular == 0 || grid.radial == 0 || !(grid.r_min > 0.0) || !(grid.r_max > grid.r_min) {
        return Err(Error::Argument(format!("empty search grid {grid:?}")));
    }
    let sys = cfg.satellite_system();
    let zeta = cfg.zeta();
    let mut reps: Vec<Vector2<f64>> = Vec::new();
    for a in 0..grid.angular {
        let theta = 2.0 * PI * a as f64 / grid.angular as f64;
        for r in 0..grid.radial {
            let rad = if grid.radial == 1 {
                grid.r_min
            } else {
                grid.r_min + (grid.r_max - grid.r_min) * r as f64 / (grid.radial - 1) as f64
            };
            let seed = Vector2::new(rad * theta.cos(), rad * theta.sin());
            let Some(p) = polish(&sys, seed) else {
                debug!("seed ({:.4}, {:.4}) did not converge", seed[0], seed[1]);
                continue;
            };
            let q = normalize(p, zeta);
            if reps.iter().all(|r| (r - q).norm() > DEDUP_DIST) {
                reps.push(q);
            }
        }
    }
    if reps.is_empty() {
        return Err(Error::Search("no equilibrium converged".into()));
    }
    reps.sort_by(|a, b| {
        (a.norm(), a[1].atan2(a[0]))
            .partial_cmp(&(b.norm(), b[1].atan2(b[0])))
            .unwrap()
    });
    let mut out = Vec::new();
    for (orbit_id, rep) in reps.iter().enumerate() {
        let mut members: Vec<Vector2<f64>> = Vec::new();
        for j in 0..cfg.n {
            let guess = rotate(*rep, j as f64 * zeta);
            let p = polish(&sys, guess).unwrap_or(guess);
            if members.iter().all(|m| (m - p).norm() > DEDUP_DIST) {
                members.push(p);
            }
        }
        for p in members {
            let mut eq = classify_equilibrium([p[0], p[1]], cfg)?;
            eq.orbit_id = orbit_id;
            out.push(eq);
        }
    }
    Ok(out)
}

/// Polishes a single planar seed; `None` if Newton fails.
pub fn polish_equilibrium(cfg: &RingConfiguration, seed: [f64; 2]) -> Option<[f64; 2]> {
    polish(&cfg.satellite_system(), Vector2::new(seed[0], seed[1])).map(|p| [p[0], p[1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    /// Printed complex form of s1, summed directly.
    fn direct_s1(n: usize) -> f64 {
        let zeta = 2.0 * PI / n as f64;
        (1..n)
            .map(|j| {
                let w = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, j as f64 * zeta);
                w / w.norm().powi(3)
            })
            .sum::<Complex64>()
            .re
    }

    #[test]
    fn s1_examples() {
        assert!((maxwell_ring(2, 3.0).unwrap().s1 - 0.25).abs() < 1e-15);
        assert!((maxwell_ring(3, 0.0).unwrap().s1 - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((maxwell_ring(4, 1.0).unwrap().s1 - (1.0 + 2.0 * 2f64.sqrt()) / 4.0).abs() < 1e-15);
        for n in 2..12 {
            assert!((ring_sum(n) - direct_s1(n)).abs() < 1e-14);
        }
    }

    #[test]
    fn ring_rejects_small_n() {
        assert!(matches!(maxwell_ring(1, 1.0), Err(Error::Argument(_))));
        assert!(maxwell_ring(3, -1.0).is_err());
    }

    #[test]
    fn residual_examples() {
        let cfg = maxwell_ring(2, 0.0).unwrap();
        assert!((cfg.omega - 0.25).abs() < 1e-15);
        assert!(ring_residual(&cfg) < 1e-10);
        let mut off = maxwell_ring(5, 2.0).unwrap();
        assert!(ring_residual(&off) < 1e-10);
        off.omega += 0.1;
        assert!(ring_residual(&off) >= 0.09);
    }

    #[test]
    fn satellite_rescaling_divides_masses() {
        let cfg = maxwell_ring(3, 2.0).unwrap();
        let sat = cfg.satellite_system();
        assert_eq!(sat.anchors().len(), 4);
        assert!((sat.masses()[0] - 2.0 / cfg.omega).abs() < 1e-15);
        assert_eq!(maxwell_ring(3, 0.0).unwrap().satellite_system().anchors().len(), 3);
    }

    #[test]
    fn classify_rejects_non_critical_point() {
        let cfg = maxwell_ring(3, 2.0).unwrap();
        assert!(matches!(classify_equilibrium([2.5, 0.3], &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn normalization_is_rotation_invariant() {
        let zeta = 2.0 * PI / 5.0;
        let p = Vector2::new(0.7, 0.3);
        for j in 0..5 {
            let q = normalize(rotate(p, j as f64 * zeta), zeta);
            assert!((q - normalize(p, zeta)).norm() < 1e-12);
        }
    }
}
