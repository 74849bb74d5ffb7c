//! Independent oracles: fixed-step integration, conservation drift, closure
//! of periodic orbits, finite-difference derivatives and dense-versus-block
//! spectral checks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{angular_momentum, energy, field, Mechanics, State, COLLISION_TOL};
use crate::equilibria::{ring_residual, RingConfiguration};
use crate::error::{Error, Result};
use crate::fourier::FourierLoop;
use crate::spectral::{morse_index, ring_blocks, ring_mode_matrix};
use crate::symmetry::{action_matrix, ring_commutator, GroupElement};

pub const DT_CHECK: f64 = 1e-3;
pub const DT_CLOSURE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrationReport {
    /// `(t, x)` at roughly evenly spaced times, at most a few hundred.
    #[serde(skip)]
    pub samples: Vec<(f64, State)>,
    pub final_state: Vec<f64>,
    pub energy_drift: f64,
    pub momentum_drift: f64,
    pub collided: bool,
    pub time: f64,
    pub dt: f64,
    pub steps: usize,
}

impl IntegrationReport {
    pub fn final_state(&self) -> State {
        let d = self.final_state.len() / 2;
        State {
            position: DVector::from_column_slice(&self.final_state[..d]),
            velocity: DVector::from_column_slice(&self.final_state[d..]),
        }
    }
}

fn rk4_step<S: Mechanics + ?Sized>(sys: &S, s: &State, nu: f64, dt: f64) -> Result<State> {
    let eval = |x: &State| field(sys, x, nu);
    let shift = |x: &State, k: &(DVector<f64>, DVector<f64>), h: f64| State {
        position: &x.position + &k.0 * h,
        velocity: &x.velocity + &k.1 * h,
    };
    let k1 = eval(s)?;
    let k2 = eval(&shift(s, &k1, 0.5 * dt))?;
    let k3 = eval(&shift(s, &k2, 0.5 * dt))?;
    let k4 = eval(&shift(s, &k3, dt))?;
    Ok(State {
        position: &s.position + (&k1.0 + &k2.0 * 2.0 + &k3.0 * 2.0 + &k4.0) * (dt / 6.0),
        velocity: &s.velocity + (&k1.1 + &k2.1 * 2.0 + &k3.1 * 2.0 + &k4.1) * (dt / 6.0),
    })
}

/// Fixed-step RK4 on the time-rescaled system over `[0, t_end]`. The last
/// step is shortened to land on `t_end`. Stops early, with `collided` set,
/// when bodies come within `10 * COLLISION_TOL`.
pub fn integrate<S: Mechanics + ?Sized>(sys: &S, s0: &State, nu: f64, t_end: f64, dt: f64) -> Result<IntegrationReport> {
    if !(dt > 0.0) || !(t_end >= 0.0) || !(nu > 0.0) {
        return Err(Error::Argument(format!("need dt > 0, t >= 0, nu > 0; got {dt}, {t_end}, {nu}")));
    }
    sys.check_collision(&s0.position)?;
    sys.check_dim(&s0.velocity)?;
    let steps = (t_end / dt).ceil() as usize;
    let every = (steps / 256).max(1);
    let e0 = energy(sys, s0, nu)?;
    let l0 = angular_momentum(sys, s0, nu);
    let mut s = s0.clone();
    let mut t = 0.0;
    let mut samples = vec![(0.0, s0.clone())];
    let (mut de, mut dl) = (0.0f64, 0.0f64);
    let mut collided = false;
    let mut done = 0;
    for i in 0..steps {
        let h = if i + 1 == steps { t_end - t } else { dt };
        s = rk4_step(sys, &s, nu, h)?;
        t = if i + 1 == steps { t_end } else { t + h };
        done += 1;
        if sys.min_separation(&s.position) < 10.0 * COLLISION_TOL {
            collided = true;
            break;
        }
        de = de.max((energy(sys, &s, nu)? - e0).abs());
        dl = dl.max((angular_momentum(sys, &s, nu) - l0).abs());
        if (i + 1) % every == 0 {
            samples.push((t, s.clone()));
        }
    }
    let mut final_state = s.position.as_slice().to_vec();
    final_state.extend_from_slice(s.velocity.as_slice());
    Ok(IntegrationReport {
        samples,
        final_state,
        energy_drift: de,
        momentum_drift: dl,
        collided,
        time: t,
        dt,
        steps: done,
    })
}

fn rotate_state(s: &[f64], theta: f64) -> Vec<f64> {
    let g = GroupElement::rotation(theta);
    let d = s.len() / 2;
    let p = crate::symmetry::act_state(&g, &DVector::from_column_slice(&s[..d])).expect("blocks of three");
    let v = crate::symmetry::act_state(&g, &DVector::from_column_slice(&s[d..])).expect("blocks of three");
    p.iter().chain(v.iter()).copied().collect()
}

/// Distance between the state after one period `2 pi` and the initial state.
/// For rotation-invariant systems the final state is first rotated by the
/// planar angle that best matches the start.
pub fn closure_error<S: Mechanics + ?Sized>(lp: &FourierLoop, sys: &S, dt: f64) -> Result<f64> {
    let s0 = State::new(lp.evaluate(0.0), lp.derivative(0.0))?;
    let rep = integrate(sys, &s0, lp.nu, 2.0 * PI, dt)?;
    if rep.collided {
        return Err(Error::Collision {
            distance: sys.min_separation(&rep.final_state().position),
        });
    }
    let start: Vec<f64> = s0.position.iter().chain(s0.velocity.iter()).copied().collect();
    let mut end = rep.final_state.clone();
    if sys.rotation_invariant() {
        // planar Procrustes: maximize sum <R(theta) e, s>
        let (mut cross, mut dot) = (0.0, 0.0);
        for b in 0..start.len() / 3 {
            let (ex, ey) = (end[3 * b], end[3 * b + 1]);
            let (sx, sy) = (start[3 * b], start[3 * b + 1]);
            dot += ex * sx + ey * sy;
            cross += ex * sy - ey * sx;
        }
        // act_state rotates by e^{-J theta}, i.e. clockwise
        end = rotate_state(&end, -cross.atan2(dot));
    }
    Ok(start.iter().zip(&end).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn finite_difference<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let f0 = f(x)?;
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for i in 0..x.len() {
        let mut a = x.clone();
        let mut b = x.clone();
        a[i] += h;
        b[i] -= h;
        jac.set_column(i, &((f(&a)? - f(&b)?) / (2.0 * h)));
    }
    Ok(jac)
}

/// `max |A - B| / max(1, max |B|)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn sorted_eigenvalues(m: DMatrix<Complex64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Largest pointwise distance between two sorted spectra of equal size.
pub fn multiset_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Dense versus block spectra and Morse indices of the ring mode matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockComparison {
    pub nu: f64,
    pub spectrum_distance: f64,
    pub dense_index: usize,
    pub block_index: usize,
}

pub fn compare_blocks(cfg: &RingConfiguration, nus: &[f64]) -> Result<Vec<BlockComparison>> {
    let blocks = ring_blocks(cfg)?;
    nus.iter()
        .map(|&nu| {
            let dense = ring_mode_matrix(cfg, nu, 1)?;
            let want = sorted_eigenvalues(dense.clone());
            let mut got: Vec<f64> = blocks.iter().flat_map(|b| sorted_eigenvalues(b.matrix(nu, 1))).collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let dense_index = morse_index(&dense, &[])?;
            let block_index = blocks
                .iter()
                .map(|b| morse_index(&b.matrix(nu, 1), &[]))
                .sum::<Result<usize>>()?;
            Ok(BlockComparison {
                nu,
                spectrum_distance: multiset_distance(&want, &got),
                dense_index,
                block_index,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_configuration(rng: &mut ChaCha8Rng, center: &DVector<f64>, spread: f64) -> DVector<f64> {
    center.map(|x| x + rng.random_range(-spread..spread))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub seed: u64,
    /// Random frequencies for the dense-versus-block comparison.
    pub samples: usize,
    /// Integrator step for the energy check.
    pub dt: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 25,
            dt: DT_CHECK,
        }
    }
}

/// Runs the oracle checks on the ring configuration and on `hessian`
/// (normally the n-body Hessian at the ring; pass a modified matrix to test
/// the detectors).
pub fn oracle_suite_with(cfg: &RingConfiguration, hessian: &DMatrix<f64>, opts: &OracleOptions) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sys = cfg.body_system();
    let x0 = cfg.state_vector();
    let mut checks = vec![Check::below("ring_residual", ring_residual(cfg), 1e-10)];
    checks.push(Check::below("gradient_at_ring", sys.gradient(&x0)?.amax(), 1e-10));

    let (mut grad_err, mut hess_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = random_configuration(&mut rng, &x0, 0.1);
        let fd_grad = finite_difference(|y| Ok(DVector::from_element(1, sys.potential(y)?)), &x, 1e-5)?;
        grad_err = grad_err.max(relative_error(&fd_grad.transpose(), &DMatrix::from_column_slice(x.len(), 1, sys.gradient(&x)?.as_slice())));
        let fd_hess = finite_difference(|y| sys.gradient(y), &x, 1e-5)?;
        hess_err = hess_err.max(relative_error(&fd_hess, &sys.hessian(&x)?));
    }
    checks.push(Check::below("gradient_vs_finite_difference", grad_err, 1e-5));
    checks.push(Check::below("hessian_vs_finite_difference", hess_err, 1e-5));

    let d = x0.len();
    let mut commutator = 0.0f64;
    let gens = [
        GroupElement::ring_generator(cfg.n, 0),
        GroupElement::reflection(),
    ];
    for g in gens {
        let p = action_matrix(&g, d)?;
        commutator = commutator.max((p.transpose() * hessian * &p - hessian).amax());
    }
    let hc = hessian.map(|x| Complex64::new(x, 0.0));
    commutator = commutator.max(ring_commutator(&hc, cfg.n)?);
    checks.push(Check::below("equivariance_commutator", commutator, 1e-10 * hessian.amax().max(1.0)));

    let nus: Vec<f64> = (0..opts.samples).map(|_| rng.random_range(0.05..4.0)).collect();
    let comparisons = compare_blocks(cfg, &nus)?;
    let spectrum = comparisons.iter().map(|c| c.spectrum_distance).fold(0.0, f64::max);
    let index_mismatch = comparisons.iter().filter(|c| c.dense_index != c.block_index).count();
    checks.push(Check::below("block_spectrum_distance", spectrum, 1e-9));
    checks.push(Check::below("block_index_mismatches", index_mismatch as f64, 0.5));

    let kick = DVector::from_fn(d, |_, _| rng.random_range(-0.01..0.01));
    let s0 = State::new(x0.clone(), kick)?;
    let rep = integrate(&sys, &s0, 1.0, 2.0 * PI, opts.dt)?;
    checks.push(Check::below("energy_drift", rep.energy_drift, 1e-8));
    checks.push(Check::below("momentum_drift", rep.momentum_drift, 1e-8));
    Ok(OracleReport { checks })
}

pub fn oracle_suite(cfg: &RingConfiguration, opts: &OracleOptions) -> Result<OracleReport> {
    let h = cfg.body_system().hessian(&cfg.state_vector())?;
    oracle_suite_with(cfg, &h, opts)
}
