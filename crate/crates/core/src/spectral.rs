//! Hermitian mode blocks, Morse indices, frequency scans, resonance flags,
//! `mu_k` thresholds and linear stability of the ring.
//!
//! Ring blocks are written in mass-weighted coordinates `y = M^{1/2} x`, so
//! the mode-`l` matrix reads `(l nu)^2 I - 2 i l nu c J + M^{-1/2} H M^{-1/2}`.
//! This is congruent to the unweighted form and has the same Morse index.

use std::fmt;

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{j_matrix, Mechanics, SatelliteSystem};
use crate::equilibria::{maxwell_ring, EquilibriumPoint, RingConfiguration};
use crate::error::{Error, Result};
use crate::symmetry::{dft_block_diagonalize, BlockKind, IsotropyLabel};

/// Eigenvalues within this distance of zero signal a crossing.
pub const ZERO_EIG: f64 = 1e-10;
pub const BISECTION_TOL: f64 = 1e-10;
pub const COARSE_STEP: f64 = 1e-3;
/// Harmonics inspected by the resonance check.
pub const RESONANCE_HARMONICS: usize = 5;
/// Half-width of the frequency window in which another singular block
/// makes an event resonant.
pub const RESONANCE_WINDOW: f64 = 1e-6;
const HERMITIAN_TOL: f64 = 1e-12;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn complex(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    a.map(|x| Complex64::new(x, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "block", rename_all = "snake_case")]
pub enum BlockId {
    /// `V_0`: planar satellite coordinates.
    SatellitePlanar,
    /// `V_1`: vertical satellite coordinate.
    SatelliteSpatial,
    Ring { k: usize, kind: BlockKind },
}

impl BlockId {
    pub fn label(&self) -> IsotropyLabel {
        match *self {
            Self::SatellitePlanar => IsotropyLabel::PlanarZ2,
            Self::SatelliteSpatial => IsotropyLabel::EightZ2,
            Self::Ring {
                k,
                kind: BlockKind::Planar,
            } => IsotropyLabel::PlanarZnk(k),
            Self::Ring { k, .. } => IsotropyLabel::SpatialZnk(k),
        }
    }

    pub fn is_spatial(&self) -> bool {
        self.label().is_spatial()
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SatellitePlanar => write!(f, "V0"),
            Self::SatelliteSpatial => write!(f, "V1"),
            Self::Ring { k, kind } => write!(f, "{kind}_k{k}"),
        }
    }
}

/// `nu -> (l nu)^2 I + l nu G + H` restricted to one isotypic component.
#[derive(Debug, Clone)]
pub struct SpectralBlock {
    pub id: BlockId,
    pub hessian: DMatrix<Complex64>,
    /// Hermitian gyroscopic part `-2 i c J`.
    pub gyro: DMatrix<Complex64>,
    /// Translation modes; eigenvectors for every `nu`, always deflated.
    pub translations: Vec<DVector<Complex64>>,
    /// Rotation generator at the ring; a kernel vector at `nu = 0` only.
    pub rotation: Option<DVector<Complex64>>,
    /// Columns spanning the block inside the full (weighted) space.
    pub basis: DMatrix<Complex64>,
}

impl SpectralBlock {
    pub fn size(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn matrix(&self, nu: f64, l: usize) -> DMatrix<Complex64> {
        let s = l as f64 * nu;
        let mut m = &self.hessian + &self.gyro * Complex64::new(s, 0.0);
        for i in 0..m.nrows() {
            m[(i, i)] += s * s;
        }
        m
    }

    pub fn deflation(&self, nu: f64) -> Vec<DVector<Complex64>> {
        let mut v = self.translations.clone();
        if nu == 0.0 {
            v.extend(self.rotation.iter().cloned());
        }
        v
    }

    pub fn index(&self, nu: f64, l: usize) -> Result<usize> {
        morse_index(&self.matrix(nu, l), &self.deflation(nu))
    }

    /// Count of strictly negative deflated eigenvalues, without the
    /// crossing guard; used inside refinement brackets.
    fn sign_index(&self, nu: f64) -> usize {
        self.eigenvalues(nu, 1).iter().filter(|&&x| x < 0.0).count()
    }

    /// Eigenvalues after deflation.
    pub fn eigenvalues(&self, nu: f64, l: usize) -> Vec<f64> {
        deflated_eigenvalues(&self.matrix(nu, l), &self.deflation(nu))
    }

    /// Determinant after deflation (real for a Hermitian block).
    pub fn determinant(&self, nu: f64) -> f64 {
        deflated_matrix(&self.matrix(nu, 1), &self.deflation(nu)).determinant().re
    }
}

/// Orthonormal bases of `span(vs)` and of its orthogonal complement in `C^d`.
pub fn orthonormal_split(vs: &[DVector<Complex64>], d: usize) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let mut basis: Vec<DVector<Complex64>> = Vec::new();
    let add = |v: DVector<Complex64>, basis: &mut Vec<DVector<Complex64>>| -> bool {
        let mut w = v;
        for _ in 0..2 {
            for b in basis.iter() {
                let c = b.dotc(&w);
                w -= b * c;
            }
        }
        let n = w.norm();
        if n > 1e-8 {
            basis.push(w / Complex64::new(n, 0.0));
            true
        } else {
            false
        }
    };
    for v in vs {
        add(v.clone(), &mut basis);
    }
    let fixed = basis.len();
    for i in 0..d {
        if basis.len() == d {
            break;
        }
        let mut e = DVector::zeros(d);
        e[i] = Complex64::new(1.0, 0.0);
        add(e, &mut basis);
    }
    let span = if fixed == 0 {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&basis[..fixed])
    };
    (span, DMatrix::from_columns(&basis[fixed..]))
}

/// Orthonormal basis of the orthogonal complement of `vs` in `C^d`.
pub fn orthogonal_complement(vs: &[DVector<Complex64>], d: usize) -> DMatrix<Complex64> {
    orthonormal_split(vs, d).1
}

fn deflated_matrix(m: &DMatrix<Complex64>, deflation: &[DVector<Complex64>]) -> DMatrix<Complex64> {
    if deflation.is_empty() {
        return m.clone();
    }
    let q = orthogonal_complement(deflation, m.nrows());
    let r = q.adjoint() * m * &q;
    (&r + r.adjoint()) * Complex64::new(0.5, 0.0)
}

fn deflated_eigenvalues(m: &DMatrix<Complex64>, deflation: &[DVector<Complex64>]) -> Vec<f64> {
    let r = deflated_matrix(m, deflation);
    if r.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(r).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Number of eigenvalues below `-ZERO_EIG` after projecting out `deflation`.
pub fn morse_index(m: &DMatrix<Complex64>, deflation: &[DVector<Complex64>]) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let asym = (m - m.adjoint()).norm();
    if asym > HERMITIAN_TOL * m.norm().max(1.0) {
        return Err(Error::Argument(format!("matrix is not Hermitian: {asym:.3e}")));
    }
    let ev = deflated_eigenvalues(m, deflation);
    if let Some(z) = ev.iter().find(|x| x.abs() <= ZERO_EIG) {
        return Err(Error::AtCrossing { eigenvalue: *z });
    }
    Ok(ev.iter().filter(|&&x| x < -ZERO_EIG).count())
}

/// Splits the satellite mode matrix at an equilibrium into `V_0` and `V_1`.
pub fn satellite_blocks(sys: &SatelliteSystem, position: &DVector<f64>) -> Result<[SpectralBlock; 2]> {
    let h = sys.hessian(position)?;
    let coupling = h[(0, 2)].abs().max(h[(1, 2)].abs());
    if coupling > HERMITIAN_TOL * h.norm().max(1.0) {
        return Err(Error::Precondition(format!(
            "point is off the plane: planar-vertical coupling {coupling:.3e}"
        )));
    }
    let planar = complex(&h.view((0, 0), (2, 2)).into_owned());
    let mut gyro = DMatrix::zeros(2, 2);
    gyro[(0, 1)] = 2.0 * I;
    gyro[(1, 0)] = -2.0 * I;
    let basis = |cols: &[usize]| {
        let mut b = DMatrix::zeros(3, cols.len());
        for (c, &r) in cols.iter().enumerate() {
            b[(r, c)] = Complex64::new(1.0, 0.0);
        }
        b
    };
    Ok([
        SpectralBlock {
            id: BlockId::SatellitePlanar,
            hessian: planar,
            gyro: gyro * Complex64::new(sys.coriolis_speed(), 0.0),
            translations: Vec::new(),
            rotation: None,
            basis: basis(&[0, 1]),
        },
        SpectralBlock {
            id: BlockId::SatelliteSpatial,
            hessian: DMatrix::from_element(1, 1, Complex64::new(h[(2, 2)], 0.0)),
            gyro: DMatrix::zeros(1, 1),
            translations: Vec::new(),
            rotation: None,
            basis: basis(&[2]),
        },
    ])
}

pub fn satellite_blocks_at(eq: &EquilibriumPoint, cfg: &RingConfiguration) -> Result<[SpectralBlock; 2]> {
    satellite_blocks(&cfg.satellite_system(), &eq.position())
}

/// Default scan bound `2 sqrt(max |lambda(H)|) + 1`.
pub fn default_nu_max(hessian: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(hessian.clone()).eigenvalues;
    2.0 * ev.amax().sqrt() + 1.0
}

/// Mass-weighted Hessian at the ring and the square roots of the masses.
/// A massless center enters through its specific (per unit mass) Hessian.
pub fn weighted_hessian(cfg: &RingConfiguration) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let x = cfg.state_vector();
    let h = cfg.body_system().hessian(&x)?;
    let d = x.len();
    let mut sq = DVector::from_fn(d, |i, _| cfg.masses[i / 3].sqrt());
    let mut hs = h.clone();
    if cfg.mu == 0.0 {
        let mut unit = cfg.masses.clone();
        unit[0] = 1.0;
        let center = crate::dynamics::BodySystem::new(unit, cfg.omega)?.hessian(&x)?;
        for i in 0..3 {
            sq[i] = 1.0;
            for j in 0..3 {
                hs[(i, j)] = center[(i, j)];
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            let w = if cfg.mu == 0.0 && (i < 3 || j < 3) { 1.0 } else { sq[i] * sq[j] };
            hs[(i, j)] /= w;
        }
    }
    let hs = (&hs + hs.transpose()) * 0.5;
    if cfg.mu == 0.0 {
        sq.rows_mut(0, 3).fill(0.0);
    }
    Ok((hs, sq))
}

/// Dense weighted mode-`l` matrix at the ring.
pub fn ring_mode_matrix(cfg: &RingConfiguration, nu: f64, l: usize) -> Result<DMatrix<Complex64>> {
    let (hs, _) = weighted_hessian(cfg)?;
    let s = l as f64 * nu;
    let d = hs.nrows();
    let gyro = complex(&j_matrix(d / 3)) * (-2.0 * I * cfg.omega.sqrt() * s);
    Ok(complex(&hs) + gyro + DMatrix::identity(d, d) * Complex64::new(s * s, 0.0))
}

fn ring_structural(cfg: &RingConfiguration, sq: &DVector<f64>) -> (Vec<DVector<Complex64>>, DVector<Complex64>) {
    let d = sq.len();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let shapes = [[h, 0.0, 0.0, h, 0.0, 0.0], [h, 0.0, 0.0, -h, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]];
    let mut translations = Vec::new();
    for s in shapes {
        let v = DVector::from_fn(d, |i, _| Complex64::new(s[2 * (i % 3)], s[2 * (i % 3) + 1]) * sq[i]);
        let n = v.norm();
        translations.push(v / Complex64::new(n, 0.0));
    }
    let mut rot = DVector::zeros(d);
    for (b, a) in cfg.positions.iter().enumerate() {
        rot[3 * b] = Complex64::new(a[1] * sq[3 * b], 0.0);
        rot[3 * b + 1] = Complex64::new(-a[0] * sq[3 * b], 0.0);
    }
    let n = rot.norm();
    (translations, rot / Complex64::new(n, 0.0))
}

/// The `2n` isotypic blocks of the ring mode matrices.
pub fn ring_blocks(cfg: &RingConfiguration) -> Result<Vec<SpectralBlock>> {
    let (hs, sq) = weighted_hessian(cfg)?;
    let dec = dft_block_diagonalize(&complex(&hs), cfg.n)?;
    let gyro_full = complex(&j_matrix(cfg.n + 1)) * (-2.0 * I * cfg.omega.sqrt());
    let (translations, rotation) = ring_structural(cfg, &sq);
    let mut out = Vec::new();
    for b in dec.blocks {
        if b.kind == BlockKind::Mixed {
            return Err(Error::Degenerate(format!(
                "planar and vertical coordinates couple in component k = {}",
                b.k
            )));
        }
        let project = |v: &DVector<Complex64>| {
            let p = b.basis.adjoint() * v;
            (p.norm() > 0.5).then_some(p)
        };
        let gyro = b.basis.adjoint() * &gyro_full * &b.basis;
        out.push(SpectralBlock {
            id: BlockId::Ring { k: b.k, kind: b.kind },
            hessian: b.matrix.clone(),
            gyro: (&gyro + gyro.adjoint()) * Complex64::new(0.5, 0.0),
            translations: translations.iter().filter_map(project).collect(),
            rotation: project(&rotation),
            basis: b.basis,
        });
    }
    Ok(out)
}

/// A frequency at which the Morse index of one block jumps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationEvent {
    pub nu0: f64,
    pub block: BlockId,
    pub label: IsotropyLabel,
    /// `index(right) - index(left)`.
    pub eta: i64,
    pub resonant: bool,
    pub width: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub nu_min: f64,
    pub nu_max: f64,
    pub step: f64,
    pub tol: f64,
    pub harmonics: usize,
}

impl ScanOptions {
    pub fn up_to(nu_max: f64) -> Self {
        Self {
            nu_min: 0.0,
            nu_max,
            step: COARSE_STEP,
            tol: BISECTION_TOL,
            harmonics: RESONANCE_HARMONICS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.tol > 0.0) || !(self.nu_min >= 0.0) || !(self.nu_max > self.nu_min) {
            return Err(Error::Argument(format!("invalid scan options {self:?}")));
        }
        Ok(())
    }
}

/// Index at `nu`, nudging off exact crossings.
fn index_near(block: &SpectralBlock, nu: f64, nudge: f64) -> Result<usize> {
    let mut x = nu;
    for _ in 0..8 {
        match block.index(x, 1) {
            Err(Error::AtCrossing { .. }) => x += nudge,
            other => return other,
        }
    }
    block.index(x, 1)
}

fn refine(
    block: &SpectralBlock,
    (lo, ilo): (f64, usize),
    (hi, ihi): (f64, usize),
    tol: f64,
    out: &mut Vec<BifurcationEvent>,
) -> Result<()> {
    if ilo == ihi {
        return Ok(());
    }
    if hi - lo <= tol {
        out.push(BifurcationEvent {
            nu0: 0.5 * (lo + hi),
            block: block.id,
            label: block.id.label(),
            eta: ihi as i64 - ilo as i64,
            resonant: false,
            width: hi - lo,
            left: lo,
            right: hi,
        });
        return Ok(());
    }
    let mid = 0.5 * (lo + hi);
    let imid = block.sign_index(mid);
    refine(block, (lo, ilo), (mid, imid), tol, out)?;
    refine(block, (mid, imid), (hi, ihi), tol, out)
}

/// Index jumps of one block on the coarse grid of `(nu_min, nu_max]`,
/// refined by bisection. Only self-resonances (harmonics `l >= 2`) are
/// flagged; see [`scan_blocks`] for cross-block resonances.
pub fn scan_bifurcations(block: &SpectralBlock, opts: &ScanOptions) -> Result<Vec<BifurcationEvent>> {
    opts.validate()?;
    let cells = ((opts.nu_max - opts.nu_min) / opts.step).ceil() as usize;
    let node = |i: usize| (opts.nu_min + i as f64 * opts.step).min(opts.nu_max);
    let mut events = Vec::new();
    let mut prev = (node(1), index_near(block, node(1), 1e-3 * opts.step)?);
    for i in 2..=cells {
        let nu = node(i);
        let cur = (nu, index_near(block, nu, -1e-3 * opts.step)?);
        refine(block, prev, cur, opts.tol, &mut events)?;
        prev = cur;
    }
    flag_resonances(&mut events, std::slice::from_ref(block), opts.harmonics);
    Ok(events)
}

fn singular_near(block: &SpectralBlock, nu: f64, l: usize) -> bool {
    let at = |x: f64| block.index(x, l);
    match (at(nu - RESONANCE_WINDOW), at(nu + RESONANCE_WINDOW)) {
        (Ok(a), Ok(b)) => a != b,
        _ => true,
    }
}

/// Marks events where another block at mode 1, or any block at a harmonic
/// `2 <= l <= harmonics`, is singular near `nu0`.
pub fn flag_resonances(events: &mut [BifurcationEvent], blocks: &[SpectralBlock], harmonics: usize) {
    for ev in events.iter_mut() {
        ev.resonant = blocks.iter().any(|b| {
            (1..=harmonics.max(1)).any(|l| !(l == 1 && b.id == ev.block) && singular_near(b, ev.nu0, l))
        });
        if ev.resonant {
            debug!("resonant event in {} at nu = {}", ev.block, ev.nu0);
        }
    }
}

/// Scans every block and flags resonances across all of them.
pub fn scan_blocks(blocks: &[SpectralBlock], opts: &ScanOptions) -> Result<Vec<BifurcationEvent>> {
    let mut events = Vec::new();
    for b in blocks {
        events.extend(scan_bifurcations(b, opts)?);
    }
    flag_resonances(&mut events, blocks, opts.harmonics);
    Ok(events)
}

/// Predicted number of planar events from trace and determinant.
pub fn planar_criterion(trace: f64, det: f64) -> Result<usize> {
    if det.abs() <= crate::equilibria::DEGENERATE_DET {
        return Err(Error::Degenerate(format!("determinant {det:.3e} is too small to classify")));
    }
    let bound = (2.0 - trace / 2.0).powi(2);
    Ok(if det < 0.0 {
        1
    } else if det < bound {
        2
    } else {
        0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    /// Sign change of the planar block determinant at `nu = 0`.
    MuK,
    /// Change of the scanned event count of a block between grid masses.
    EventPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRecord {
    pub kind: ThresholdKind,
    pub k: usize,
    pub mu: f64,
    pub bracket: [f64; 2],
    /// Evidence on either side: determinants or event counts.
    pub left: f64,
    pub right: f64,
}

/// Masses sampled by threshold searches: logarithmic near zero plus linear.
pub fn mu_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let start = if lo > 0.0 { lo } else { 1e-6 };
    let mut mus: Vec<f64> = Vec::with_capacity(2 * points);
    let (a, b) = (start.ln(), hi.ln());
    for i in 0..points {
        let t = i as f64 / (points - 1) as f64;
        mus.push((a + t * (b - a)).exp());
        mus.push(start + t * (hi - start));
    }
    mus.sort_by(|x, y| x.partial_cmp(y).unwrap());
    mus.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * y.abs());
    mus
}

fn planar_det(n: usize, k: usize, mu: f64) -> Result<f64> {
    let cfg = maxwell_ring(n, mu)?;
    let blocks = ring_blocks(&cfg)?;
    let b = blocks
        .iter()
        .find(|b| b.id == BlockId::Ring { k, kind: BlockKind::Planar })
        .ok_or_else(|| Error::Search(format!("no planar block for k = {k}")))?;
    Ok(b.determinant(0.0))
}

/// Masses in `(lo, hi]` at which the planar block `k` at `nu = 0` changes
/// determinant sign. An empty list means none was found.
pub fn find_mu_k(n: usize, k: usize, range: (f64, f64)) -> Result<Vec<ThresholdRecord>> {
    if n < 2 || k == 0 || k >= n {
        return Err(Error::Argument(format!("need 1 <= k <= n - 1, got n = {n}, k = {k}")));
    }
    if !(range.1 > range.0) || range.0 < 0.0 {
        return Err(Error::Argument(format!("empty mass range {range:?}")));
    }
    let mus = mu_grid(range.0, range.1, 400);
    let dets = mus.iter().map(|&m| planar_det(n, k, m)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for i in 1..mus.len() {
        if dets[i - 1].signum() == dets[i].signum() {
            continue;
        }
        let (mut lo, mut hi, dlo) = (mus[i - 1], mus[i], dets[i - 1]);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if planar_det(n, k, mid)?.signum() == dlo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(ThresholdRecord {
            kind: ThresholdKind::MuK,
            k,
            mu: 0.5 * (lo + hi),
            bracket: [lo, hi],
            left: dets[i - 1],
            right: dets[i],
        });
    }
    Ok(out)
}

/// Event counts per block over a mass grid, for bifurcation diagrams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    pub k: usize,
    pub kind: BlockKind,
    pub nu0: f64,
    pub eta: i64,
}

pub fn mu_sweep(n: usize, mus: &[f64], opts: &ScanOptions) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &mu in mus {
        let cfg = maxwell_ring(n, mu)?;
        for b in ring_blocks(&cfg)? {
            let BlockId::Ring { k, kind } = b.id else { continue };
            for ev in scan_bifurcations(&b, opts)? {
                rows.push(SweepRow {
                    mu,
                    k,
                    kind,
                    nu0: ev.nu0,
                    eta: ev.eta,
                });
            }
        }
    }
    Ok(rows)
}

/// Masses between consecutive sweep points where a block's event count
/// changes; the empirical stand-in for thresholds not given in closed form.
pub fn event_pattern_thresholds(rows: &[SweepRow], mus: &[f64], k: usize, kind: BlockKind) -> Vec<ThresholdRecord> {
    let count = |mu: f64| rows.iter().filter(|r| r.mu == mu && r.k == k && r.kind == kind).count() as f64;
    mus.windows(2)
        .filter_map(|w| {
            let (a, b) = (count(w[0]), count(w[1]));
            (a != b).then(|| ThresholdRecord {
                kind: ThresholdKind::EventPattern,
                k,
                mu: 0.5 * (w[0] + w[1]),
                bracket: [w[0], w[1]],
                left: a,
                right: b,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Eigenvalues of the first-order linearization with the structural
    /// (translation and rotation) subspace removed.
    pub eigenvalues: Vec<Complex64>,
    /// Eigenvalues on the structural subspace.
    pub structural: Vec<Complex64>,
    pub max_real: f64,
    pub marginally_stable: bool,
}

/// Spectrum of `y'' + 2 sqrt(omega) J y' = H_s y` at the ring (`nu = 1`).
/// A massless center is left out.
pub fn linear_stability(cfg: &RingConfiguration) -> Result<StabilityReport> {
    let (hs_full, sq_full) = weighted_hessian(cfg)?;
    let skip = if cfg.mu == 0.0 { 3 } else { 0 };
    let d = hs_full.nrows() - skip;
    let hs = hs_full.view((skip, skip), (d, d)).into_owned();
    let sq = sq_full.rows(skip, d).into_owned();
    let g = j_matrix(d / 3) * (2.0 * cfg.omega.sqrt());
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    a.view_mut((0, d), (d, d)).fill_with_identity();
    a.view_mut((d, 0), (d, d)).copy_from(&hs);
    a.view_mut((d, d), (d, d)).copy_from(&(-&g));

    let pad = |top: &DVector<f64>, bottom: &DVector<f64>| {
        let mut v = DVector::zeros(2 * d);
        v.rows_mut(0, d).copy_from(top);
        v.rows_mut(d, d).copy_from(bottom);
        v
    };
    let zero = DVector::zeros(d);
    let mut structural = Vec::new();
    for c in 0..3 {
        let e = DVector::from_fn(d, |i, _| if i % 3 == c { sq[i] } else { 0.0 });
        structural.push(pad(&e, &zero));
        structural.push(pad(&zero, &e));
    }
    let mut rot = DVector::zeros(d);
    for b in 0..d / 3 {
        let p = cfg.positions[b + skip / 3];
        rot[3 * b] = p[1] * sq[3 * b];
        rot[3 * b + 1] = -p[0] * sq[3 * b];
    }
    let lift = hs
        .clone()
        .svd(true, true)
        .solve(&(&g * &rot), 1e-12)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    structural.push(pad(&rot, &zero));
    structural.push(pad(&lift, &rot));

    let s = structural.len();
    let cs: Vec<DVector<Complex64>> = structural.iter().map(|v| v.map(|x| Complex64::new(x, 0.0))).collect();
    let (span, range) = orthonormal_split(&cs, 2 * d);
    let (span, range) = (span.map(|z| z.re), range.map(|z| z.re));
    if span.ncols() != s {
        return Err(Error::Degenerate(format!("structural subspace has rank {} < {s}", span.ncols())));
    }
    let q = DMatrix::from_columns(
        &span
            .column_iter()
            .chain(range.column_iter())
            .map(|c| c.into_owned())
            .collect::<Vec<_>>(),
    );
    let b = q.transpose() * &a * &q;
    let inner = b.view((s, s), (2 * d - s, 2 * d - s)).into_owned();
    let head = b.view((0, 0), (s, s)).into_owned();
    let sort = |mut v: Vec<Complex64>| {
        v.sort_by(|x, y| (x.re, x.im).partial_cmp(&(y.re, y.im)).unwrap());
        v
    };
    let eigenvalues = sort(inner.complex_eigenvalues().iter().copied().collect());
    let structural = sort(head.complex_eigenvalues().iter().copied().collect());
    let max_real = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport {
        eigenvalues,
        structural,
        max_real,
        marginally_stable: max_real < 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{find_satellite_equilibria, SearchGrid};

    fn diag(v: &[f64]) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|&x| Complex64::new(x, 0.0))))
    }

    #[test]
    fn morse_index_examples() {
        assert_eq!(morse_index(&diag(&[1.0, 1.0, 1.0]), &[]).unwrap(), 0);
        assert_eq!(morse_index(&diag(&[-1.0, -1.0, -1.0]), &[]).unwrap(), 3);
        assert_eq!(morse_index(&diag(&[-1.0, 2.0]), &[]).unwrap(), 1);
        assert!(matches!(
            morse_index(&diag(&[0.0, 2.0]), &[]),
            Err(Error::AtCrossing { .. })
        ));
        let e0 = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert_eq!(morse_index(&diag(&[0.0, -2.0]), &[e0]).unwrap(), 1);
        let mut bad = diag(&[1.0, 1.0]);
        bad[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(morse_index(&bad, &[]).is_err());
    }

    #[test]
    fn criterion_examples() {
        assert_eq!(planar_criterion(4.0, -1.0).unwrap(), 1);
        assert_eq!(planar_criterion(1.0, 1.0).unwrap(), 2);
        assert_eq!(planar_criterion(0.0, 5.0).unwrap(), 0);
        assert!(planar_criterion(1.0, 1e-9).is_err());
    }

    fn one_primary() -> SatelliteSystem {
        SatelliteSystem::new(vec![[1.0, 0.0]], vec![1.0]).unwrap()
    }

    #[test]
    fn satellite_block_properties() {
        let sys = one_primary();
        let p = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let [planar, spatial] = satellite_blocks(&sys, &p).unwrap();
        let h = sys.hessian(&p).unwrap();
        assert_eq!(planar.matrix(0.0, 1)[(0, 0)].re, h[(0, 0)]);
        assert_eq!(spatial.matrix(0.0, 1)[(0, 0)].re, -1.0);
        let m = planar.matrix(0.7, 1);
        assert!((&m - m.adjoint()).norm() < 1e-15);
        assert_eq!(planar.index(100.0, 1).unwrap(), 0);
        assert_eq!(spatial.index(100.0, 1).unwrap(), 0);
        // the spatial entry vanishes at nu^2 = sum m / r^3 = 1
        assert!(spatial.matrix(1.0, 1)[(0, 0)].norm() < 1e-15);
        let events = scan_bifurcations(&spatial, &ScanOptions::up_to(3.0)).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].nu0 - 1.0).abs() < 1e-9);
        assert_eq!(events[0].eta, -1);
        assert_eq!(events[0].label, IsotropyLabel::EightZ2);
    }

    #[test]
    fn planar_scans_agree_with_criterion_n2() {
        let cfg = maxwell_ring(2, 0.0).unwrap();
        let eqs = find_satellite_equilibria(&cfg, &SearchGrid::default()).unwrap();
        let sys = cfg.satellite_system();
        for eq in &eqs {
            let [planar, _] = satellite_blocks_at(eq, &cfg).unwrap();
            let nu_max = default_nu_max(&sys.hessian(&eq.position()).unwrap());
            let got = scan_bifurcations(&planar, &ScanOptions::up_to(nu_max)).unwrap().len();
            assert_eq!(got, planar_criterion(eq.trace, eq.det).unwrap(), "{eq:?}");
        }
    }

    #[test]
    fn ring_blocks_match_dense_spectrum() {
        let cfg = maxwell_ring(3, 1.0).unwrap();
        let blocks = ring_blocks(&cfg).unwrap();
        assert_eq!(blocks.len(), 6);
        for nu in [0.0, 0.7, 2.3] {
            let dense = ring_mode_matrix(&cfg, nu, 1).unwrap();
            let mut want: Vec<f64> = SymmetricEigen::new(dense).eigenvalues.iter().copied().collect();
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut got: Vec<f64> = blocks
                .iter()
                .flat_map(|b| SymmetricEigen::new(b.matrix(nu, 1)).eigenvalues.iter().copied().collect::<Vec<_>>())
                .collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in want.iter().zip(&got) {
                assert!((a - b).abs() < 1e-9, "nu = {nu}");
            }
            for b in &blocks {
                let m = b.matrix(nu, 1);
                assert!((&m - m.adjoint()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_lives_in_trivial_planar_block() {
        let cfg = maxwell_ring(5, 2.0).unwrap();
        let blocks = ring_blocks(&cfg).unwrap();
        let with_rot: Vec<BlockId> = blocks.iter().filter(|b| b.rotation.is_some()).map(|b| b.id).collect();
        assert_eq!(with_rot, vec![BlockId::Ring { k: 5, kind: BlockKind::Planar }]);
        let b = &blocks.iter().find(|b| b.rotation.is_some()).unwrap();
        let rot = b.rotation.as_ref().unwrap();
        assert!((b.matrix(0.0, 1) * rot).norm() < 1e-12);
        for b in &blocks {
            for t in &b.translations {
                let m = b.matrix(0.9, 1);
                let mt = &m * t;
                let lambda = t.dotc(&mt);
                assert!((mt - t * lambda).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_blocks_at_rest_match_zz_hessian() {
        let cfg = maxwell_ring(4, 0.5).unwrap();
        let (hs, _) = weighted_hessian(&cfg).unwrap();
        let idx: Vec<usize> = (0..hs.nrows()).filter(|i| i % 3 == 2).collect();
        let zz = DMatrix::from_fn(idx.len(), idx.len(), |i, j| hs[(idx[i], idx[j])]);
        let mut want: Vec<f64> = SymmetricEigen::new(zz).eigenvalues.iter().copied().collect();
        let mut got: Vec<f64> = ring_blocks(&cfg)
            .unwrap()
            .iter()
            .filter(|b| b.id.is_spatial())
            .flat_map(|b| SymmetricEigen::new(b.matrix(0.0, 1)).eigenvalues.iter().copied().collect::<Vec<_>>())
            .collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(want.len(), got.len());
        for (a, b) in want.iter().zip(&got) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mu_k_conjugate_pairs() {
        let n = 4;
        let a = find_mu_k(n, 1, (0.0, 50.0)).unwrap();
        let b = find_mu_k(n, 3, (0.0, 50.0)).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.mu - y.mu).abs() < 1e-8);
        }
        assert!(find_mu_k(n, 0, (0.0, 1.0)).is_err());
        assert!(find_mu_k(n, 4, (0.0, 1.0)).is_err());
    }

    #[test]
    fn stability_examples() {
        let stable = linear_stability(&maxwell_ring(7, 1000.0).unwrap()).unwrap();
        assert!(stable.marginally_stable, "{}", stable.max_real);
        let unstable = linear_stability(&maxwell_ring(7, 0.01).unwrap()).unwrap();
        assert!(unstable.max_real > 1e-3);
        // Hamiltonian spectrum: closed under negation
        for z in &unstable.eigenvalues {
            let partner = unstable.eigenvalues.iter().map(|w| (w + z).norm()).fold(f64::INFINITY, f64::min);
            assert!(partner < 1e-9, "{z}");
        }
    }

    #[test]
    fn massless_center_stability_runs() {
        let r = linear_stability(&maxwell_ring(3, 0.0).unwrap()).unwrap();
        assert_eq!(r.eigenvalues.len() + r.structural.len(), 18);
    }
}
