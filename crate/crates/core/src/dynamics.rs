//! Potentials, gradients, Hessians and rotating-frame vector fields.
//!
//! Coordinates are grouped in blocks of three, `(u_x, u_y, z)`, one block per
//! body. The satellite has a single block; the n-body system has `n + 1`
//! blocks with the central body first.
//!
//! Both systems are written as
//!
//! ```text
//! nu^2 M x'' + 2 nu c M diag(J,0) x' = grad V(x)
//! ```
//!
//! with `J = [[0,-1],[1,0]]`, `M` the diagonal mass matrix and `c` the frame
//! speed entering the Coriolis term (`1` for the satellite, `sqrt(omega)` for
//! the n-body system). `nu` is the time rescaling `t -> t/nu`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Separation below which a configuration counts as a collision.
pub const COLLISION_TOL: f64 = 1e-9;

/// Applies `diag(J, 0)` blockwise, `J (a, b) = (-b, a)`.
pub fn apply_j(v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for b in 0..v.len() / 3 {
        out[3 * b] = -v[3 * b + 1];
        out[3 * b + 1] = v[3 * b];
    }
    out
}

/// Infinitesimal generator of the planar rotation action, `diag(-J, 0)`.
pub fn rotation_generator(x: &DVector<f64>) -> DVector<f64> {
    -apply_j(x)
}

/// Real matrix of `diag(J, 0)` acting on `blocks` bodies.
pub fn j_matrix(blocks: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(3 * blocks, 3 * blocks);
    for b in 0..blocks {
        m[(3 * b, 3 * b + 1)] = -1.0;
        m[(3 * b + 1, 3 * b)] = 1.0;
    }
    m
}

fn block(x: &DVector<f64>, b: usize) -> Vector3<f64> {
    Vector3::new(x[3 * b], x[3 * b + 1], x[3 * b + 2])
}

fn pair_hessian(d: &Vector3<f64>, r: f64, scale: f64) -> Matrix3<f64> {
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    (d * d.transpose() * (3.0 / r5) - Matrix3::identity() / r3) * scale
}

/// A conservative mechanical system in a rotating frame.
pub trait Mechanics: Sync {
    /// Number of coordinate blocks of size three.
    fn blocks(&self) -> usize;

    fn dim(&self) -> usize {
        3 * self.blocks()
    }

    /// Diagonal of the mass matrix, one entry per coordinate.
    fn coordinate_masses(&self) -> DVector<f64>;

    /// Frame speed multiplying the Coriolis term.
    fn coriolis_speed(&self) -> f64;

    /// Smallest distance to the collision set.
    fn min_separation(&self, x: &DVector<f64>) -> f64;

    fn potential(&self, x: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// `M^{-1} grad V`, well defined also for massless bodies.
    fn specific_force(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Whether the planar rotation generator is a symmetry of the potential.
    fn rotation_invariant(&self) -> bool;

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn check_collision(&self, x: &DVector<f64>) -> Result<()> {
        self.check_dim(x)?;
        let d = self.min_separation(x);
        if d < COLLISION_TOL {
            return Err(Error::Collision { distance: d });
        }
        Ok(())
    }
}

/// Phase-space state; position and velocity have equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl State {
    pub fn new(position: DVector<f64>, velocity: DVector<f64>) -> Result<Self> {
        if position.len() != velocity.len() {
            return Err(Error::Dimension {
                expected: position.len(),
                found: velocity.len(),
            });
        }
        Ok(Self { position, velocity })
    }

    pub fn at_rest(position: DVector<f64>) -> Self {
        let n = position.len();
        Self {
            position,
            velocity: DVector::zeros(n),
        }
    }
}

/// Massless satellite moving among fixed primaries in the unit-speed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteSystem {
    anchors: Vec<[f64; 2]>,
    masses: Vec<f64>,
}

impl SatelliteSystem {
    pub fn new(anchors: Vec<[f64; 2]>, masses: Vec<f64>) -> Result<Self> {
        if anchors.len() != masses.len() || anchors.is_empty() {
            return Err(Error::Argument(format!(
                "{} anchors for {} masses",
                anchors.len(),
                masses.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0)) {
            return Err(Error::Argument(format!("mass {m} is not positive")));
        }
        for i in 0..anchors.len() {
            for j in 0..i {
                let d = (anchors[i][0] - anchors[j][0]).hypot(anchors[i][1] - anchors[j][1]);
                if d < COLLISION_TOL {
                    return Err(Error::Argument(format!("anchors {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { anchors, masses })
    }

    pub fn anchors(&self) -> &[[f64; 2]] {
        &self.anchors
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    fn offsets(&self, p: &DVector<f64>) -> impl Iterator<Item = (Vector3<f64>, f64, f64)> + '_ {
        let p = Vector3::new(p[0], p[1], p[2]);
        self.anchors.iter().zip(&self.masses).map(move |(a, &m)| {
            let d = p - Vector3::new(a[0], a[1], 0.0);
            (d, d.norm(), m)
        })
    }

    /// Sum of `m_j / r_j^3`, the squared spatial frequency at a planar point.
    pub fn vertical_stiffness(&self, p: &DVector<f64>) -> Result<f64> {
        self.check_collision(p)?;
        Ok(self.offsets(p).map(|(_, r, m)| m / (r * r * r)).sum())
    }
}

impl Mechanics for SatelliteSystem {
    fn blocks(&self) -> usize {
        1
    }

    fn coordinate_masses(&self) -> DVector<f64> {
        DVector::from_element(3, 1.0)
    }

    fn coriolis_speed(&self) -> f64 {
        1.0
    }

    fn min_separation(&self, x: &DVector<f64>) -> f64 {
        self.offsets(x).map(|(_, r, _)| r).fold(f64::INFINITY, f64::min)
    }

    /// `V(u, z) = |u|^2 / 2 + sum_j m_j / |(u, z) - (a_j, 0)|`.
    fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_collision(x)?;
        let centrifugal = 0.5 * (x[0] * x[0] + x[1] * x[1]);
        Ok(centrifugal + self.offsets(x).map(|(_, r, m)| m / r).sum::<f64>())
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_collision(x)?;
        let mut g = Vector3::new(x[0], x[1], 0.0);
        for (d, r, m) in self.offsets(x) {
            g -= d * (m / (r * r * r));
        }
        Ok(DVector::from_column_slice(g.as_slice()))
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_collision(x)?;
        let mut h = Matrix3::zeros();
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        for (d, r, m) in self.offsets(x) {
            h += pair_hessian(&d, r, m);
        }
        // symmetrize bitwise; the pair terms are symmetric up to rounding order
        let h = (h + h.transpose()) * 0.5;
        Ok(DMatrix::from_fn(3, 3, |i, j| h[(i, j)]))
    }

    fn specific_force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.gradient(x)
    }

    fn rotation_invariant(&self) -> bool {
        false
    }
}

/// The full (n+1)-body system in a frame rotating at speed `sqrt(omega)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodySystem {
    masses: Vec<f64>,
    omega: f64,
}

impl BodySystem {
    /// `masses[0]` is the central body (may be zero), `masses[1..]` the ring.
    pub fn new(masses: Vec<f64>, omega: f64) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::Argument("need a central body and at least one more".into()));
        }
        if !(masses[0] >= 0.0) {
            return Err(Error::Argument(format!("central mass {} is negative", masses[0])));
        }
        if let Some(m) = masses[1..].iter().find(|m| !(**m > 0.0)) {
            return Err(Error::Argument(format!("mass {m} is not positive")));
        }
        if !(omega > 0.0) {
            return Err(Error::Argument(format!("frame speed {omega} is not positive")));
        }
        Ok(Self { masses, omega })
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Number of ring bodies.
    pub fn n(&self) -> usize {
        self.masses.len() - 1
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nb = self.masses.len();
        (0..nb).flat_map(move |i| (i + 1..nb).map(move |j| (i, j)))
    }

    /// Total linear momentum `sum_j m_j v_j` of a velocity field.
    pub fn momentum(&self, v: &DVector<f64>) -> Vector3<f64> {
        (0..self.masses.len()).fold(Vector3::zeros(), |acc, j| acc + block(v, j) * self.masses[j])
    }
}

impl Mechanics for BodySystem {
    fn blocks(&self) -> usize {
        self.masses.len()
    }

    fn coordinate_masses(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.masses.iter().flat_map(|&m| [m, m, m]))
    }

    fn coriolis_speed(&self) -> f64 {
        self.omega.sqrt()
    }

    fn min_separation(&self, x: &DVector<f64>) -> f64 {
        self.pairs()
            .map(|(i, j)| (block(x, i) - block(x, j)).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// `U(x) = omega sum_j m_j |u_j|^2 / 2 + sum_{i<j} m_i m_j / |x_i - x_j|`.
    fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_collision(x)?;
        let m = &self.masses;
        let centrifugal: f64 = (0..m.len())
            .map(|j| 0.5 * self.omega * m[j] * (x[3 * j].powi(2) + x[3 * j + 1].powi(2)))
            .sum();
        let gravity: f64 = self
            .pairs()
            .map(|(i, j)| m[i] * m[j] / (block(x, i) - block(x, j)).norm())
            .sum();
        Ok(centrifugal + gravity)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = self.specific_force(x)?;
        for (j, &m) in self.masses.iter().enumerate() {
            for c in 0..3 {
                g[3 * j + c] *= m;
            }
        }
        Ok(g)
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_collision(x)?;
        let m = &self.masses;
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for j in 0..m.len() {
            h[(3 * j, 3 * j)] = self.omega * m[j];
            h[(3 * j + 1, 3 * j + 1)] = self.omega * m[j];
        }
        for (i, j) in self.pairs() {
            let dij = block(x, i) - block(x, j);
            let b = pair_hessian(&dij, dij.norm(), m[i] * m[j]);
            let b = (b + b.transpose()) * 0.5;
            for r in 0..3 {
                for c in 0..3 {
                    h[(3 * i + r, 3 * i + c)] += b[(r, c)];
                    h[(3 * j + r, 3 * j + c)] += b[(r, c)];
                    h[(3 * i + r, 3 * j + c)] -= b[(r, c)];
                    h[(3 * j + r, 3 * i + c)] -= b[(r, c)];
                }
            }
        }
        Ok(h)
    }

    fn specific_force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_collision(x)?;
        let m = &self.masses;
        let mut a = DVector::zeros(self.dim());
        for j in 0..m.len() {
            a[3 * j] = self.omega * x[3 * j];
            a[3 * j + 1] = self.omega * x[3 * j + 1];
        }
        for (i, j) in self.pairs() {
            let d = block(x, i) - block(x, j);
            let r = d.norm();
            let f = d / (r * r * r);
            for c in 0..3 {
                a[3 * i + c] -= m[j] * f[c];
                a[3 * j + c] += m[i] * f[c];
            }
        }
        Ok(a)
    }

    fn rotation_invariant(&self) -> bool {
        true
    }
}

/// First-order field of the time-rescaled equations: returns `(x', x'')`.
pub fn field<S: Mechanics + ?Sized>(sys: &S, s: &State, nu: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    sys.check_dim(&s.velocity)?;
    let force = sys.specific_force(&s.position)?;
    let coriolis = apply_j(&s.velocity) * (2.0 * sys.coriolis_speed() / nu);
    Ok((s.velocity.clone(), force / (nu * nu) - coriolis))
}

pub fn satellite_field(sys: &SatelliteSystem, s: &State, nu: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    field(sys, s, nu)
}

pub fn nbody_field(sys: &BodySystem, s: &State, nu: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    field(sys, s, nu)
}

/// `E = -nu^2 |x'|_M^2 / 2 + V(x)`.
pub fn energy<S: Mechanics + ?Sized>(sys: &S, s: &State, nu: f64) -> Result<f64> {
    let m = sys.coordinate_masses();
    let kinetic: f64 = s.velocity.iter().zip(m.iter()).map(|(v, m)| m * v * v).sum();
    Ok(-0.5 * nu * nu * kinetic + sys.potential(&s.position)?)
}

/// Momentum conjugate to the rotation generator `A_1 = diag(-J, 0)`:
/// `nu^2 <M x', A_1 x> - nu c |u|_M^2`. Conserved for rotation-invariant systems.
pub fn angular_momentum<S: Mechanics + ?Sized>(sys: &S, s: &State, nu: f64) -> f64 {
    let m = sys.coordinate_masses();
    let gen = rotation_generator(&s.position);
    let mut kinetic = 0.0;
    let mut planar = 0.0;
    for i in 0..s.position.len() {
        kinetic += m[i] * s.velocity[i] * gen[i];
        if i % 3 != 2 {
            planar += m[i] * s.position[i] * s.position[i];
        }
    }
    nu * nu * kinetic - nu * sys.coriolis_speed() * planar
}
