//! Fourier-Galerkin continuation of symmetric periodic orbits.
//!
//! Unknowns are the packed real coefficients of a [`FourierLoop`]
//! restricted to the fixed subspace of an isotropy group, the frequency `nu`
//! and one multiplier per continuous symmetry (time shift, and frame rotation
//! for the n-body system). Phase and rotation pins make the system square.

use std::f64::consts::PI;
use std::sync::Arc;

use log::{debug, info};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{BodySystem, Mechanics, SatelliteSystem, COLLISION_TOL};
use crate::error::{Error, Result};
use crate::fourier::FourierLoop;
use crate::spectral::{orthogonal_complement, BifurcationEvent, SpectralBlock};
use crate::symmetry::{fixed_subspace_projector, symmetry_residual, FixedSubspace, IsotropyLabel};

pub const DEFAULT_ORDER_SATELLITE: usize = 16;
pub const DEFAULT_ORDER_BODIES: usize = 12;
pub const CORRECTOR_TOL: f64 = 1e-10;
pub const MAX_NEWTON: usize = 25;
pub const MAX_RETRIES: usize = 4;
pub const SPECTRAL_TAIL_TOL: f64 = 1e-8;
pub const MAX_ORDER: usize = 40;

/// Quadrature points used for the nonlinear modes.
pub fn quadrature_points(order: usize) -> usize {
    4 * (2 * order + 1)
}

fn packed_re(dim: usize, l: usize, c: usize) -> usize {
    if l == 0 {
        c
    } else {
        dim * (2 * l - 1) + c
    }
}

fn packed_im(dim: usize, l: usize, c: usize) -> usize {
    dim * (2 * l) + c
}

fn grid(q: usize) -> impl Iterator<Item = (usize, f64)> {
    (0..q).map(move |k| (k, 2.0 * PI * k as f64 / q as f64))
}

fn min_separation_on_grid<S: Mechanics + ?Sized>(sys: &S, lp: &FourierLoop, q: usize) -> f64 {
    grid(q)
        .map(|(_, t)| sys.min_separation(&lp.evaluate(t)))
        .fold(f64::INFINITY, f64::min)
}

fn check_loop<S: Mechanics + ?Sized>(sys: &S, lp: &FourierLoop) -> Result<()> {
    if lp.dim() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            found: lp.dim(),
        });
    }
    if !(lp.nu > 0.0) {
        return Err(Error::Argument(format!("frequency must be positive, got {}", lp.nu)));
    }
    let sep = min_separation_on_grid(sys, lp, quadrature_points(lp.order()));
    if sep < 10.0 * COLLISION_TOL {
        return Err(Error::Collision { distance: sep });
    }
    Ok(())
}

/// Modes `l = 0..=L` of `f(x) = nu^2 M x'' + ... `, written as
/// `l^2 nu^2 M x_l - 2 i l nu c M J x_l + g_l` with `g_l` the modes of
/// `grad V(x(t))`. Zero exactly at truncated solutions of the rescaled
/// equations.
pub fn fourier_residual<S: Mechanics + ?Sized>(sys: &S, lp: &FourierLoop) -> Result<FourierLoop> {
    check_loop(sys, lp)?;
    let d = lp.dim();
    let order = lp.order();
    let q = quadrature_points(order);
    let m = sys.coordinate_masses();
    let c = sys.coriolis_speed();
    let mut g = vec![DVector::<Complex64>::zeros(d); order + 1];
    for (_, t) in grid(q) {
        let grad = sys.gradient(&lp.evaluate(t))?;
        for (l, gl) in g.iter_mut().enumerate() {
            let e = Complex64::from_polar(1.0 / q as f64, -(l as f64) * t);
            for i in 0..d {
                gl[i] += e * grad[i];
            }
        }
    }
    let mut out = FourierLoop::zeros(d, order, lp.nu);
    for (l, gl) in g.into_iter().enumerate() {
        let x = lp.mode(l as i64);
        let s = l as f64 * lp.nu;
        let jx = crate::dynamics::apply_j(&x.map(|z| z.re)).map(|r| Complex64::new(r, 0.0))
            + crate::dynamics::apply_j(&x.map(|z| z.im)).map(|r| Complex64::new(0.0, r));
        let mut f = gl;
        for i in 0..d {
            f[i] += m[i] * (x[i] * (s * s) - Complex64::new(0.0, 2.0 * s * c) * jx[i]);
        }
        out.set_mode(l, &f)?;
    }
    Ok(out)
}

/// Jacobian of the packed residual with respect to the packed coefficients,
/// and its derivative with respect to `nu`.
fn residual_jacobian<S: Mechanics + ?Sized>(sys: &S, lp: &FourierLoop) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = lp.dim();
    let order = lp.order();
    let parts = 2 * order + 1;
    let n = d * parts;
    let q = quadrature_points(order);
    let m = sys.coordinate_masses();
    let c = sys.coriolis_speed();
    let nu = lp.nu;
    // jac = sum_t rho_t gamma_t^T (x) H_t, assembled as one product per row
    // coordinate: rows (p1, i) = Rho * W_i with W_i[t, (p2, j)] = gamma_t[p2] H_t[i, j]
    let mut rho = DMatrix::zeros(parts, q);
    let mut w = vec![DMatrix::zeros(q, n); d];
    let mut gamma = vec![0.0; parts];
    for (k, t) in grid(q) {
        let h = sys.hessian(&lp.evaluate(t))?;
        rho[(0, k)] = 1.0 / q as f64;
        gamma[0] = 1.0;
        for l in 1..=order {
            let (s, co) = (l as f64 * t).sin_cos();
            rho[(2 * l - 1, k)] = co / q as f64;
            rho[(2 * l, k)] = -s / q as f64;
            gamma[2 * l - 1] = 2.0 * co;
            gamma[2 * l] = -2.0 * s;
        }
        for (i, wi) in w.iter_mut().enumerate() {
            for (p2, g) in gamma.iter().enumerate() {
                for j in 0..d {
                    wi[(k, d * p2 + j)] = g * h[(i, j)];
                }
            }
        }
    }
    let mut jac = DMatrix::zeros(n, n);
    for (i, wi) in w.iter().enumerate() {
        let rows = &rho * wi;
        for p1 in 0..parts {
            jac.row_mut(d * p1 + i).copy_from(&rows.row(p1));
        }
    }
    let mut dnu = DVector::zeros(n);
    for l in 1..=order {
        let lf = l as f64;
        for b in 0..d / 3 {
            for k in 0..3 {
                let i = 3 * b + k;
                let (re, im) = (packed_re(d, l, i), packed_im(d, l, i));
                let p = lf * lf * nu * nu * m[i];
                jac[(re, re)] += p;
                jac[(im, im)] += p;
                let (a, bb) = (lp.coeff(l, i).re, lp.coeff(l, i).im);
                dnu[re] += 2.0 * lf * lf * nu * m[i] * a;
                dnu[im] += 2.0 * lf * lf * nu * m[i] * bb;
            }
            // -2 i l nu c M J (a + i b) = q J b - i q J a, with J (x, y) = (-y, x)
            let (ix, iy) = (3 * b, 3 * b + 1);
            let q = 2.0 * lf * nu * c * m[ix];
            jac[(packed_re(d, l, ix), packed_im(d, l, iy))] -= q;
            jac[(packed_re(d, l, iy), packed_im(d, l, ix))] += q;
            jac[(packed_im(d, l, ix), packed_re(d, l, iy))] += q;
            jac[(packed_im(d, l, iy), packed_re(d, l, ix))] -= q;
            let qn = 2.0 * lf * c * m[ix];
            let (ax, bx) = (lp.coeff(l, ix).re, lp.coeff(l, ix).im);
            let (ay, by) = (lp.coeff(l, iy).re, lp.coeff(l, iy).im);
            dnu[packed_re(d, l, ix)] += -qn * by;
            dnu[packed_re(d, l, iy)] += qn * bx;
            dnu[packed_im(d, l, ix)] += qn * ay;
            dnu[packed_im(d, l, iy)] += -qn * ax;
        }
    }
    Ok((jac, dnu))
}

fn packed_derivative_matrix(dim: usize, order: usize) -> DMatrix<f64> {
    let n = dim * (2 * order + 1);
    let mut dm = DMatrix::zeros(n, n);
    for l in 1..=order {
        for c in 0..dim {
            // (i l)(a + i b) = -l b + i l a
            dm[(packed_re(dim, l, c), packed_im(dim, l, c))] = -(l as f64);
            dm[(packed_im(dim, l, c), packed_re(dim, l, c))] = l as f64;
        }
    }
    dm
}

fn packed_rotation_matrix(dim: usize, order: usize) -> DMatrix<f64> {
    let n = dim * (2 * order + 1);
    let mut r = DMatrix::zeros(n, n);
    for p in 0..2 * order + 1 {
        for b in 0..dim / 3 {
            // -J (a, b) = (b, -a)
            r[(dim * p + 3 * b, dim * p + 3 * b + 1)] = 1.0;
            r[(dim * p + 3 * b + 1, dim * p + 3 * b)] = -1.0;
        }
    }
    r
}

/// A periodic-orbit problem restricted to one isotropy class.
pub struct PeriodicProblem {
    system: Arc<dyn Mechanics + Send>,
    pub order: usize,
    pub label: IsotropyLabel,
    subspace: FixedSubspace,
    derivative: DMatrix<f64>,
    rotation: Option<DMatrix<f64>>,
    rotation_pin: Option<usize>,
    /// Known equilibria, used to detect a return of the branch.
    pub equilibria: Vec<DVector<f64>>,
}

impl PeriodicProblem {
    pub fn satellite(sys: SatelliteSystem, order: usize, label: IsotropyLabel) -> Result<Self> {
        if label.ring_k().is_some() {
            return Err(Error::Argument(format!("label {label} needs the n-body system")));
        }
        Self::build(Arc::new(sys), order, label, None)
    }

    /// The n-body problem; the rotation pin fixes the mean `y` of the last
    /// ring body. A massless central body is not supported.
    pub fn bodies(sys: BodySystem, order: usize, label: IsotropyLabel) -> Result<Self> {
        if sys.masses().iter().any(|&m| m <= 0.0) {
            return Err(Error::Precondition("continuation needs positive masses".into()));
        }
        let pin = 3 * sys.n() + 1;
        Self::build(Arc::new(sys), order, label, Some(pin))
    }

    fn build(system: Arc<dyn Mechanics + Send>, order: usize, label: IsotropyLabel, rotation_pin: Option<usize>) -> Result<Self> {
        if order == 0 {
            return Err(Error::Argument("truncation order must be positive".into()));
        }
        let dim = system.dim();
        let subspace = fixed_subspace_projector(label, order, dim)?;
        let rotation = rotation_pin.map(|_| packed_rotation_matrix(dim, order));
        Ok(Self {
            derivative: packed_derivative_matrix(dim, order),
            system,
            order,
            label,
            subspace,
            rotation,
            rotation_pin,
            equilibria: Vec::new(),
        })
    }

    pub fn system(&self) -> &dyn Mechanics {
        self.system.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn subspace(&self) -> &FixedSubspace {
        &self.subspace
    }

    pub fn multiplier_count(&self) -> usize {
        1 + self.rotation.is_some() as usize
    }

    /// Same problem at another truncation order.
    pub fn with_order(&self, order: usize) -> Result<Self> {
        let mut p = Self::build(Arc::clone(&self.system), order, self.label, self.rotation_pin)?;
        p.equilibria = self.equilibria.clone();
        Ok(p)
    }

    fn reduce(&self, v: &DVector<f64>) -> DVector<f64> {
        self.subspace.basis.transpose() * v
    }

    fn expand(&self, y: &DVector<f64>, nu: f64) -> FourierLoop {
        let v = &self.subspace.basis * y;
        FourierLoop::from_real(self.dim(), self.order, nu, &v).expect("layout")
    }

    /// Packed unit functional for the phase pin: `Im` of the largest mode-1
    /// component whose pin survives the restriction to the fixed subspace,
    /// falling back to higher modes.
    fn phase_pin(&self, lp: &FourierLoop) -> Result<(usize, usize, usize)> {
        let d = self.dim();
        let mut candidates: Vec<(usize, usize, f64)> = (1..=self.order)
            .flat_map(|l| (0..d).map(move |c| (l, c)))
            .map(|(l, c)| (l, c, lp.coeff(l, c).norm()))
            .filter(|x| x.2 > 1e-14)
            .collect();
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.2.partial_cmp(&a.2).unwrap()));
        for (l, c, _) in candidates {
            let idx = packed_im(d, l, c);
            if self.subspace.basis.row(idx).norm() > 0.1 {
                return Ok((idx, l, c));
            }
        }
        Err(Error::Degenerate("no admissible phase pin: loop is (nearly) a group-fixed point".into()))
    }

    /// Augmented residual `[B^T (f + l0 x' + l1 A1 x); pins]`.
    pub fn augmented_residual(&self, lp: &FourierLoop, lambda: &[f64], phase_pin: usize) -> Result<DVector<f64>> {
        let f = fourier_residual(self.system(), lp)?.to_real();
        let x = lp.to_real();
        let mut g = f + &self.derivative * &x * lambda[0];
        if let Some(r) = &self.rotation {
            g += r * &x * lambda[1];
        }
        let mut out = self.reduce(&g).as_slice().to_vec();
        out.push(x[phase_pin]);
        if let Some(p) = self.rotation_pin {
            out.push(x[p]);
        }
        Ok(DVector::from_vec(out))
    }

    fn jacobian(&self, lp: &FourierLoop, lambda: &[f64], phase_pin: usize) -> Result<DMatrix<f64>> {
        let (mut jx, dnu) = residual_jacobian(self.system(), lp)?;
        let x = lp.to_real();
        jx += &self.derivative * lambda[0];
        let mut lam_cols = vec![&self.derivative * &x];
        if let Some(r) = &self.rotation {
            jx += r * lambda[1];
            lam_cols.push(r * &x);
        }
        let b = &self.subspace.basis;
        let rk = b.ncols();
        let nm = lam_cols.len();
        let rows = rk + 1 + self.rotation_pin.is_some() as usize;
        let cols = rk + 1 + nm;
        let mut jac = DMatrix::zeros(rows, cols);
        jac.view_mut((0, 0), (rk, rk)).copy_from(&(b.transpose() * jx * b));
        jac.view_mut((0, rk), (rk, 1)).copy_from(&(b.transpose() * dnu));
        for (i, col) in lam_cols.iter().enumerate() {
            jac.view_mut((0, rk + 1 + i), (rk, 1)).copy_from(&(b.transpose() * col));
        }
        jac.view_mut((rk, 0), (1, rk)).copy_from(&b.row(phase_pin));
        if let Some(p) = self.rotation_pin {
            jac.view_mut((rk + 1, 0), (1, rk)).copy_from(&b.row(p));
        }
        Ok(jac)
    }

    fn pack(&self, lp: &FourierLoop, lambda: &[f64]) -> DVector<f64> {
        let y = self.reduce(&lp.to_real());
        let mut z = y.as_slice().to_vec();
        z.push(lp.nu);
        z.extend_from_slice(lambda);
        DVector::from_vec(z)
    }

    fn unpack(&self, z: &DVector<f64>) -> (FourierLoop, Vec<f64>) {
        let rk = self.subspace.rank();
        let y = z.rows(0, rk).into_owned();
        let lp = self.expand(&y, z[rk]);
        (lp, z.rows(rk + 1, z.len() - rk - 1).iter().copied().collect())
    }

    /// Newton on the augmented system plus the arclength row
    /// `<z - z_pred, t> = 0` over the `(y, nu)` components.
    fn correct(&self, z_pred: &DVector<f64>, tangent: &DVector<f64>, phase_pin: usize) -> Result<(DVector<f64>, usize)> {
        let rk = self.subspace.rank();
        let mut z = z_pred.clone();
        for it in 0..MAX_NEWTON {
            let (lp, lambda) = self.unpack(&z);
            let mut f = self.augmented_residual(&lp, &lambda, phase_pin)?.as_slice().to_vec();
            let arc: f64 = (0..=rk).map(|i| (z[i] - z_pred[i]) * tangent[i]).sum();
            f.push(arc);
            let f = DVector::from_vec(f);
            let norm = f.amax();
            if norm < CORRECTOR_TOL && it > 0 {
                return Ok((z, it));
            }
            let j = self.jacobian(&lp, &lambda, phase_pin)?;
            let mut full = DMatrix::zeros(j.nrows() + 1, j.ncols());
            full.view_mut((0, 0), (j.nrows(), j.ncols())).copy_from(&j);
            for i in 0..=rk {
                full[(j.nrows(), i)] = tangent[i];
            }
            let step = full
                .lu()
                .solve(&(-&f))
                .ok_or_else(|| Error::NoConvergence("singular augmented Jacobian".into()))?;
            if !step.iter().all(|x| x.is_finite()) {
                return Err(Error::NoConvergence("non-finite Newton step".into()));
            }
            z += &step;
            if step.amax() < 1e-14 && norm < 10.0 * CORRECTOR_TOL {
                return Ok((z, it + 1));
            }
        }
        let (lp, lambda) = self.unpack(&z);
        let res = self.augmented_residual(&lp, &lambda, phase_pin)?.amax();
        if res < CORRECTOR_TOL {
            return Ok((z, MAX_NEWTON));
        }
        Err(Error::NoConvergence(format!("residual {res:.3e} after {MAX_NEWTON} iterations")))
    }

    /// Re-corrects a loop at fixed `nu` (no arclength row; `nu` is pinned
    /// instead). Used for truncation studies.
    pub fn correct_at_fixed_nu(&self, lp: &FourierLoop) -> Result<BranchPoint> {
        let (pin, _, _) = self.phase_pin(lp)?;
        let lambda = vec![0.0; self.multiplier_count()];
        let z0 = self.pack(lp, &lambda);
        let rk = self.subspace.rank();
        let mut t = DVector::zeros(z0.len());
        t[rk] = 1.0;
        let (z, _) = self.correct(&z0, &t, pin)?;
        self.point(&z, pin, 0.0)
    }

    fn point(&self, z: &DVector<f64>, phase_pin: usize, arclength: f64) -> Result<BranchPoint> {
        let (lp, lambda) = self.unpack(z);
        let residual = self.augmented_residual(&lp, &lambda, phase_pin)?.amax();
        Ok(BranchPoint {
            nu: lp.nu,
            lambda,
            arclength,
            residual,
            amplitude: lp.amplitude(),
            symmetry_residual: symmetry_residual(&lp, self.label)?,
            phase_pin,
            coefficients: lp,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPoint {
    pub coefficients: FourierLoop,
    pub nu: f64,
    /// Recovered multipliers `(lambda_0[, lambda_1])`.
    pub lambda: Vec<f64>,
    pub arclength: f64,
    pub residual: f64,
    pub amplitude: f64,
    pub symmetry_residual: f64,
    #[serde(skip)]
    phase_pin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxSteps,
    NormBlowup,
    PeriodBlowup,
    CollisionApproach,
    EquilibriumReturn,
    CorrectorFailure,
    TruncationLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Branch {
    pub origin: BifurcationEvent,
    pub epsilon: f64,
    pub points: Vec<BranchPoint>,
    pub termination: Option<Termination>,
    #[serde(skip)]
    seed: DVector<f64>,
    #[serde(skip)]
    origin_state: DVector<f64>,
}

impl Branch {
    /// Unit secant from the equilibrium to the first corrected point in
    /// `(y, nu)` coordinates.
    pub fn initial_tangent(&self) -> DVector<f64> {
        let z1 = &self.seed;
        let t = z1 - &self.origin_state;
        let t = t.rows(0, t.len()).into_owned();
        let n = t.norm();
        t / n
    }
}

/// Unit null vector of the event's block at `nu0` (deflated), lifted to the
/// full coordinates of the block's system.
pub fn kernel_vector(block: &SpectralBlock, nu0: f64) -> DVector<Complex64> {
    let m = block.matrix(nu0, 1);
    let q = orthogonal_complement(&block.deflation(nu0), m.nrows());
    let r = q.adjoint() * &m * &q;
    let eig = SymmetricEigen::new((&r + r.adjoint()) * Complex64::new(0.5, 0.0));
    let i = eig.eigenvalues.iamin();
    let w = &q * eig.eigenvectors.column(i);
    &block.basis * w
}

/// Predictor `x_eq + eps v` (mode 1, `v` in unweighted coordinates) projected
/// into the fixed subspace and corrected at fixed amplitude.
pub fn branch_from_event(
    problem: &PeriodicProblem,
    event: &BifurcationEvent,
    block: &SpectralBlock,
    equilibrium: &DVector<f64>,
    inv_sqrt_mass: &DVector<f64>,
    epsilon: f64,
) -> Result<Branch> {
    if event.eta == 0 {
        return Err(Error::Argument("event has no index jump".into()));
    }
    if !(1e-4..=1e-2).contains(&epsilon) {
        return Err(Error::Argument(format!("initial amplitude {epsilon} outside [1e-4, 1e-2]")));
    }
    if event.label != problem.label {
        return Err(Error::Argument(format!("event class {} differs from problem class {}", event.label, problem.label)));
    }
    let mut v = kernel_vector(block, event.nu0);
    for (x, s) in v.iter_mut().zip(inv_sqrt_mass.iter()) {
        *x *= *s;
    }
    let i = v.icamax();
    let phase = Complex64::from_polar(1.0, -v[i].arg());
    v *= phase / Complex64::new(v.norm(), 0.0);

    let base = FourierLoop::constant(equilibrium, problem.order, event.nu0);
    let origin_state = problem.pack(&base, &vec![0.0; problem.multiplier_count()]);
    let mut eps = epsilon;
    let mut last = Error::NoConvergence("no attempt".into());
    for attempt in 0..=MAX_RETRIES {
        let mut lp = base.clone();
        lp.set_mode(1, &(v.clone() * Complex64::new(eps, 0.0)))?;
        let lp = problem.subspace.project(&lp);
        let z_pred = problem.pack(&lp, &vec![0.0; problem.multiplier_count()]);
        let rk = problem.subspace.rank();
        let mut t = &z_pred - &origin_state;
        t.rows_mut(rk + 1, t.len() - rk - 1).fill(0.0);
        let tn = t.norm();
        if tn < 1e-14 {
            return Err(Error::Degenerate("kernel vector vanishes in the fixed subspace".into()));
        }
        t /= tn;
        let pin = match problem.phase_pin(&lp) {
            Ok((pin, _, _)) => pin,
            Err(e) => return Err(e),
        };
        match problem.correct(&z_pred, &t, pin) {
            Ok((z, its)) => {
                debug!("initial point corrected in {its} iterations (eps = {eps})");
                let arc = (&z - &origin_state).rows(0, rk + 1).norm();
                let point = problem.point(&z, pin, arc)?;
                return Ok(Branch {
                    origin: event.clone(),
                    epsilon: eps,
                    points: vec![point],
                    termination: None,
                    seed: z,
                    origin_state,
                });
            }
            Err(e) => {
                debug!("attempt {attempt} failed: {e}");
                last = e;
                eps *= 0.5;
            }
        }
    }
    Err(last)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub h_min: f64,
    pub h_max: f64,
    pub h_init: f64,
    /// Largest accepted [`spectral_tail`]. Beyond it the truncation order
    /// grows by half, up to `max_order`, after which the step is halved.
    pub tail_tol: f64,
    pub max_order: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            h_min: 1e-5,
            h_max: 0.1,
            h_init: 0.01,
            tail_tol: SPECTRAL_TAIL_TOL,
            max_order: MAX_ORDER,
        }
    }
}

/// Norm of the top three Fourier modes, a proxy for truncation error.
pub fn spectral_tail(lp: &FourierLoop) -> f64 {
    let top = lp.order();
    (top.saturating_sub(2).max(1)..=top)
        .map(|l| lp.mode(l as i64).norm_squared())
        .sum::<f64>()
        .sqrt()
}

fn termination_of(problem: &PeriodicProblem, p: &BranchPoint, origin: &BifurcationEvent) -> Option<Termination> {
    if p.coefficients.norm() > 1e3 {
        return Some(Termination::NormBlowup);
    }
    if !(p.nu > 0.0) || 2.0 * PI / p.nu > 1e3 {
        return Some(Termination::PeriodBlowup);
    }
    let sep = min_separation_on_grid(problem.system(), &p.coefficients, quadrature_points(problem.order));
    if sep < 10.0 * COLLISION_TOL {
        return Some(Termination::CollisionApproach);
    }
    if p.amplitude < 1e-3 {
        let mean = p.coefficients.mean();
        for eq in &problem.equilibria {
            let near = (&mean - eq).norm() < 1e-3;
            let same_start = (p.nu - origin.nu0).abs() < 1e-3;
            if near && !same_start {
                return Some(Termination::EquilibriumReturn);
            }
        }
    }
    None
}

fn repack(from: &PeriodicProblem, to: &PeriodicProblem, z: &DVector<f64>) -> DVector<f64> {
    let (lp, lambda) = from.unpack(z);
    to.pack(&lp.with_order(to.order), &lambda)
}

/// Pseudo-arclength continuation with a secant predictor. The truncation
/// order of later points may exceed `problem.order`.
pub fn continue_branch(problem: &PeriodicProblem, mut branch: Branch, max_steps: usize, control: StepControl) -> Branch {
    let mut grown: Option<PeriodicProblem> = None;
    let mut prev = branch.origin_state.clone();
    let mut cur = branch.seed.clone();
    let mut h = control.h_init.clamp(control.h_min, control.h_max);
    let mut pin = branch.points.last().map(|p| p.phase_pin).unwrap_or(0);
    let mut steps = 0;
    while steps < max_steps {
        let pb = grown.as_ref().unwrap_or(problem);
        let rk = pb.subspace.rank();
        let mut secant = &cur - &prev;
        secant.rows_mut(rk + 1, secant.len() - rk - 1).fill(0.0);
        let sn = secant.norm();
        if sn == 0.0 {
            branch.termination = Some(Termination::CorrectorFailure);
            return branch;
        }
        let t = secant / sn;
        let mut pred = &cur + &t * h;
        pred.rows_mut(rk + 1, pred.len() - rk - 1).copy_from(&cur.rows(rk + 1, cur.len() - rk - 1));
        match pb.correct(&pred, &t, pin) {
            Ok((z, its)) => {
                let ds = (&z - &cur).rows(0, rk + 1).norm();
                let arc = branch.points.last().map(|p| p.arclength).unwrap_or(0.0) + ds;
                let point = match pb.point(&z, pin, arc) {
                    Ok(p) => p,
                    Err(Error::Collision { .. }) => {
                        branch.termination = Some(Termination::CollisionApproach);
                        return branch;
                    }
                    Err(_) => {
                        branch.termination = Some(Termination::CorrectorFailure);
                        return branch;
                    }
                };
                if spectral_tail(&point.coefficients) > control.tail_tol {
                    if pb.order < control.max_order {
                        let order = (pb.order + pb.order.div_ceil(2)).min(control.max_order);
                        let next = match pb.with_order(order) {
                            Ok(p) => p,
                            Err(_) => {
                                branch.termination = Some(Termination::CorrectorFailure);
                                return branch;
                            }
                        };
                        debug!("truncation order raised to {order}");
                        prev = repack(pb, &next, &prev);
                        cur = repack(pb, &next, &cur);
                        let last = &branch.points.last().expect("seed point").coefficients;
                        pin = match next.phase_pin(&last.with_order(order)) {
                            Ok((p, _, _)) => p,
                            Err(_) => {
                                branch.termination = Some(Termination::CorrectorFailure);
                                return branch;
                            }
                        };
                        grown = Some(next);
                        continue;
                    }
                    h *= 0.5;
                    debug!("step under-resolved at the order cap; h = {h:.3e}");
                    if h < control.h_min {
                        branch.termination = Some(Termination::TruncationLimit);
                        return branch;
                    }
                    continue;
                }
                let stop = termination_of(pb, &point, &branch.origin);
                // keep the pin on a well-conditioned component
                if let Ok((p, _, _)) = pb.phase_pin(&point.coefficients) {
                    if p != pin && point.coefficients.to_real()[p].abs() < 1e-12 {
                        pin = p;
                    }
                }
                branch.points.push(point);
                prev = cur;
                cur = z;
                steps += 1;
                if its <= 4 {
                    h = (2.0 * h).min(control.h_max);
                }
                if let Some(t) = stop {
                    branch.termination = Some(t);
                    return branch;
                }
            }
            Err(Error::Collision { .. }) => {
                branch.termination = Some(Termination::CollisionApproach);
                return branch;
            }
            Err(e) => {
                h *= 0.5;
                debug!("step rejected ({e}); h = {h:.3e}");
                if h < control.h_min {
                    branch.termination = Some(Termination::CorrectorFailure);
                    return branch;
                }
            }
        }
    }
    info!("branch completed {steps} steps");
    branch.termination = Some(Termination::MaxSteps);
    branch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{satellite_blocks, scan_bifurcations, ScanOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_primary() -> (SatelliteSystem, DVector<f64>) {
        let sys = SatelliteSystem::new(vec![[1.0, 0.0]], vec![1.0]).unwrap();
        // collinear equilibrium beyond the primary: x - 1/(x-1)^2 = 0
        let mut x = 1.5;
        for _ in 0..50 {
            let f = x - 1.0 / (x - 1.0f64).powi(2);
            let df = 1.0 + 2.0 / (x - 1.0f64).powi(3);
            x -= f / df;
        }
        (sys, DVector::from_vec(vec![x, 0.0, 0.0]))
    }

    fn random_loop(rng: &mut ChaCha8Rng, center: &DVector<f64>, order: usize, scale: f64) -> FourierLoop {
        let mut lp = FourierLoop::constant(center, order, rng.random_range(0.5..2.0));
        for l in 1..=order {
            let decay = scale / (l * l) as f64;
            let v = DVector::from_fn(center.len(), |_, _| {
                Complex64::new(rng.random_range(-decay..decay), rng.random_range(-decay..decay))
            });
            lp.set_mode(l, &v).unwrap();
        }
        lp
    }

    #[test]
    fn equilibrium_loop_has_zero_residual() {
        let (sys, x0) = one_primary();
        let lp = FourierLoop::constant(&x0, 6, 1.3);
        let f = fourier_residual(&sys, &lp).unwrap();
        assert!(f.norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (sys, x0) = one_primary();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lp = random_loop(&mut rng, &x0, 3, 0.05);
        let (jac, dnu) = residual_jacobian(&sys, &lp).unwrap();
        let v = lp.to_real();
        let h = 1e-6;
        for i in 0..v.len() {
            let mut a = v.clone();
            let mut b = v.clone();
            a[i] += h;
            b[i] -= h;
            let fa = fourier_residual(&sys, &FourierLoop::from_real(3, 3, lp.nu, &a).unwrap()).unwrap().to_real();
            let fb = fourier_residual(&sys, &FourierLoop::from_real(3, 3, lp.nu, &b).unwrap()).unwrap().to_real();
            let col = (fa - fb) / (2.0 * h);
            assert!((col - jac.column(i)).amax() < 1e-6, "column {i}");
        }
        let mut up = lp.clone();
        up.nu += h;
        let mut dn = lp.clone();
        dn.nu -= h;
        let fd = (fourier_residual(&sys, &up).unwrap().to_real() - fourier_residual(&sys, &dn).unwrap().to_real()) / (2.0 * h);
        assert!((fd - dnu).amax() < 1e-6);
    }

    #[test]
    fn orthogonality_to_time_shift() {
        let (sys, x0) = one_primary();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let lp = random_loop(&mut rng, &x0, 8, 0.05);
            let f = fourier_residual(&sys, &lp).unwrap();
            assert!(f.inner(&lp.differentiate()).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_perturbation_is_second_order() {
        let (sys, x0) = one_primary();
        let [_, spatial] = satellite_blocks(&sys, &x0).unwrap();
        let nu0 = sys.vertical_stiffness(&x0).unwrap().sqrt();
        let v = kernel_vector(&spatial, nu0);
        let mut norms = Vec::new();
        for eps in [1e-3, 1e-6] {
            let mut lp = FourierLoop::constant(&x0, 4, nu0);
            lp.set_mode(1, &(v.clone() * Complex64::new(eps, 0.0))).unwrap();
            norms.push(fourier_residual(&sys, &lp).unwrap().norm());
        }
        assert!(norms[1] < 1e-10);
        assert!(norms[0] / norms[1] > 1e5, "{norms:?}");
    }

    #[test]
    fn equilibrium_pin_is_degenerate() {
        let (sys, x0) = one_primary();
        let problem = PeriodicProblem::satellite(sys, 4, IsotropyLabel::EightZ2).unwrap();
        let lp = FourierLoop::constant(&x0, 4, 1.0);
        assert!(matches!(problem.phase_pin(&lp), Err(Error::Degenerate(_))));
    }

    #[test]
    fn eight_branch_from_single_primary() {
        let (sys, x0) = one_primary();
        let [_, spatial] = satellite_blocks(&sys, &x0).unwrap();
        let events = scan_bifurcations(&spatial, &ScanOptions::up_to(4.0)).unwrap();
        assert_eq!(events.len(), 1);
        let problem = PeriodicProblem::satellite(sys, 8, IsotropyLabel::EightZ2).unwrap();
        let ones = DVector::from_element(3, 1.0);
        let branch = branch_from_event(&problem, &events[0], &spatial, &x0, &ones, 1e-3).unwrap();
        let p = &branch.points[0];
        assert!(p.residual < 1e-10);
        assert!(p.symmetry_residual < 1e-10);
        assert!(p.lambda[0].abs() < 1e-8);
        let branch = continue_branch(&problem, branch, 5, StepControl::default());
        assert_eq!(branch.points.len(), 6, "{:?}", branch.termination);
        for w in branch.points.windows(2) {
            assert!(w[1].arclength > w[0].arclength);
        }
    }
}
