//! The group `(Z_2 x Z_n x SO(2)) x S^1`, its actions on configurations and
//! loops, isotypic block-diagonalization and symmetry predicates.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibria::RingConfiguration;
use crate::error::{Error, Result};
pub use crate::fourier::FourierLoop;

/// Points of the time grid used by [`symmetry_residual`].
pub const RESIDUAL_GRID: usize = 256;
/// Relative tolerance of the equivariance check before block extraction.
pub const EQUIVARIANCE_TOL: f64 = 1e-10;
/// Relative threshold below which off-block entries count as zero.
pub const ZERO_PATTERN_TOL: f64 = 1e-9;

/// `(kappa, gamma, theta, phi)`: z-reflection, cyclic shift `j -> j + shift`,
/// planar rotation and time phase. The group is abelian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement {
    pub kappa: bool,
    pub shift: usize,
    pub theta: f64,
    pub phi: f64,
}

impl GroupElement {
    pub const IDENTITY: Self = Self {
        kappa: false,
        shift: 0,
        theta: 0.0,
        phi: 0.0,
    };

    pub fn reflection() -> Self {
        Self {
            kappa: true,
            ..Self::IDENTITY
        }
    }

    pub fn phase(phi: f64) -> Self {
        Self {
            phi,
            ..Self::IDENTITY
        }
    }

    pub fn rotation(theta: f64) -> Self {
        Self {
            theta,
            ..Self::IDENTITY
        }
    }

    /// Generator `(zeta, zeta, -k zeta)` of the ring isotropy group.
    pub fn ring_generator(n: usize, k: usize) -> Self {
        let zeta = 2.0 * PI / n as f64;
        Self {
            kappa: false,
            shift: 1,
            theta: zeta,
            phi: -(k as f64) * zeta,
        }
    }

    pub fn compose(&self, other: &Self, n: usize) -> Self {
        Self {
            kappa: self.kappa ^ other.kappa,
            shift: (self.shift + other.shift) % n.max(1),
            theta: self.theta + other.theta,
            phi: self.phi + other.phi,
        }
    }
}

fn rotate_block(x: &mut [f64], theta: f64, kappa: bool) {
    // e^{-J theta} with J = [[0,-1],[1,0]]
    let (s, c) = theta.sin_cos();
    let (a, b) = (x[0], x[1]);
    x[0] = c * a + s * b;
    x[1] = -s * a + c * b;
    if kappa {
        x[2] = -x[2];
    }
}

/// Spatial action on a configuration of `dim / 3` blocks. A single block is
/// the satellite, for which permutations act trivially; otherwise block 0 is
/// the central body and blocks `1..=n` the ring.
pub fn act_state(g: &GroupElement, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() % 3 != 0 || x.is_empty() {
        return Err(Error::Dimension {
            expected: 3 * (x.len() / 3).max(1),
            found: x.len(),
        });
    }
    let blocks = x.len() / 3;
    let mut out = x.clone();
    if blocks > 1 {
        let n = blocks - 1;
        for j in 1..=n {
            let src = (j - 1 + g.shift) % n + 1;
            for c in 0..3 {
                out[3 * j + c] = x[3 * src + c];
            }
        }
    }
    for b in 0..blocks {
        rotate_block(&mut out.as_mut_slice()[3 * b..3 * b + 3], g.theta, g.kappa);
    }
    Ok(out)
}

fn act_complex(g: &GroupElement, v: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let re = act_state(g, &v.map(|c| c.re))?;
    let im = act_state(g, &v.map(|c| c.im))?;
    Ok(DVector::from_fn(v.len(), |i, _| Complex64::new(re[i], im[i])))
}

/// Action on loops: spatial action on every mode times `e^{i l phi}`.
pub fn act_loop(g: &GroupElement, lp: &FourierLoop) -> Result<FourierLoop> {
    let mut out = lp.clone();
    for l in 0..=lp.order() {
        let phase = Complex64::from_polar(1.0, l as f64 * g.phi);
        let moved = act_complex(g, &lp.mode(l as i64))? * phase;
        out.set_mode(l, &moved)?;
    }
    Ok(out)
}

/// Matrix of the spatial action of `g` on `dim` coordinates.
pub fn action_matrix(g: &GroupElement, dim: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        m.set_column(i, &act_state(g, &e)?);
    }
    Ok(m)
}

/// Isotropy classes of bifurcating orbits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "class", content = "k")]
pub enum IsotropyLabel {
    /// `<(kappa, 0)>`: planar loops.
    PlanarZ2,
    /// `<(kappa, pi)>`: eight loops.
    EightZ2,
    /// `Z_n(k) x <kappa>`: planar ring loops.
    PlanarZnk(usize),
    /// `Z_n(k) x <(kappa, pi)>`: spatial ring loops.
    SpatialZnk(usize),
}

impl fmt::Display for IsotropyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PlanarZ2 => write!(f, "planar"),
            Self::EightZ2 => write!(f, "eight"),
            Self::PlanarZnk(k) => write!(f, "planar_k{k}"),
            Self::SpatialZnk(k) => write!(f, "spatial_k{k}"),
        }
    }
}

impl IsotropyLabel {
    pub fn ring_k(&self) -> Option<usize> {
        match self {
            Self::PlanarZnk(k) | Self::SpatialZnk(k) => Some(*k),
            _ => None,
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, Self::EightZ2 | Self::SpatialZnk(_))
    }

    pub fn is_hip_hop(&self, n: usize) -> bool {
        matches!(self, Self::SpatialZnk(k) if 2 * k == n)
    }

    pub fn is_oscillating_ring(&self, n: usize) -> bool {
        matches!(self, Self::SpatialZnk(k) if *k == n)
    }

    fn check(&self, dim: usize) -> Result<usize> {
        let blocks = dim / 3;
        let n = blocks.saturating_sub(1);
        if let Some(k) = self.ring_k() {
            if blocks < 3 || k == 0 || k > n {
                return Err(Error::Argument(format!("label {self} needs a ring with k <= n, got n = {n}")));
            }
        }
        Ok(n)
    }

    /// Generators of the isotropy group acting on `dim` coordinates.
    pub fn generators(&self, dim: usize) -> Result<Vec<GroupElement>> {
        let n = self.check(dim)?;
        let planar_reflection = GroupElement::reflection();
        let eight = GroupElement {
            kappa: true,
            phi: PI,
            ..GroupElement::IDENTITY
        };
        Ok(match *self {
            Self::PlanarZ2 => vec![planar_reflection],
            Self::EightZ2 => vec![eight],
            Self::PlanarZnk(k) => vec![GroupElement::ring_generator(n, k), planar_reflection],
            Self::SpatialZnk(k) => vec![GroupElement::ring_generator(n, k), eight],
        })
    }

    /// All elements of the (finite) isotropy group.
    pub fn elements(&self, dim: usize) -> Result<Vec<GroupElement>> {
        let n = self.check(dim)?;
        let gens = self.generators(dim)?;
        let reflection = *gens.last().expect("every label has a reflection generator");
        let mut out = Vec::new();
        let cyclic = if gens.len() == 2 { n } else { 1 };
        let mut g = GroupElement::IDENTITY;
        for _ in 0..cyclic {
            out.push(g);
            out.push(g.compose(&reflection, n));
            if gens.len() == 2 {
                g = g.compose(&gens[0], n);
            }
        }
        Ok(out)
    }
}

/// Largest deviation `|x(t) - (g x)(t)|` over the time grid and generators.
pub fn symmetry_residual(lp: &FourierLoop, label: IsotropyLabel) -> Result<f64> {
    let gens = label.generators(lp.dim())?;
    let mut worst = 0.0f64;
    for k in 0..RESIDUAL_GRID {
        let t = 2.0 * PI * k as f64 / RESIDUAL_GRID as f64;
        let x = lp.evaluate(t);
        for g in &gens {
            let moved = act_state(g, &lp.evaluate(t + g.phi))?;
            worst = worst.max((x.clone() - moved).amax());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Choreography {
    /// `Omega = 1 - k sqrt(omega) / nu`.
    pub omega_ratio: f64,
    pub is_choreography: bool,
}

/// Whether a ring loop in class `Z_n(k)` is a choreography in fixed axes.
pub fn choreography_indicator(lp: &FourierLoop, k: usize, cfg: &RingConfiguration) -> Result<Choreography> {
    let label = IsotropyLabel::PlanarZnk(k);
    let res = symmetry_residual(lp, label).or_else(|_| symmetry_residual(lp, IsotropyLabel::SpatialZnk(k)))?;
    let spatial = symmetry_residual(lp, IsotropyLabel::SpatialZnk(k)).unwrap_or(f64::INFINITY);
    if res.min(spatial) > 1e-6 {
        return Err(Error::Precondition(format!(
            "loop is not in class Z_n({k}): residual {:.3e}",
            res.min(spatial)
        )));
    }
    Ok(choreography_from_frequency(lp.nu, k, cfg))
}

pub fn choreography_from_frequency(nu: f64, k: usize, cfg: &RingConfiguration) -> Choreography {
    let omega_ratio = 1.0 - k as f64 * cfg.omega.sqrt() / nu;
    let n = cfg.n as f64;
    let nearest = (omega_ratio / n).round() * n;
    Choreography {
        omega_ratio,
        is_choreography: (omega_ratio - nearest).abs() < 1e-8,
    }
}

/// Orthogonal projector onto the loops fixed by an isotropy group, with an
/// orthonormal basis of its range, in the packed real coordinates of
/// [`FourierLoop::to_real`].
#[derive(Debug, Clone)]
pub struct FixedSubspace {
    pub label: IsotropyLabel,
    pub dim: usize,
    pub order: usize,
    pub projector: DMatrix<f64>,
    pub basis: DMatrix<f64>,
}

impl FixedSubspace {
    pub fn project(&self, lp: &FourierLoop) -> FourierLoop {
        let v = &self.projector * lp.to_real();
        FourierLoop::from_real(self.dim, self.order, lp.nu, &v).expect("same layout")
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

pub fn fixed_subspace_projector(label: IsotropyLabel, order: usize, dim: usize) -> Result<FixedSubspace> {
    let elements = label.elements(dim)?;
    let len = dim * (2 * order + 1);
    let mut projector = DMatrix::zeros(len, len);
    for i in 0..len {
        let mut e = DVector::zeros(len);
        e[i] = 1.0;
        let lp = FourierLoop::from_real(dim, order, 1.0, &e)?;
        let mut col = DVector::zeros(len);
        for g in &elements {
            col += act_loop(g, &lp)?.to_real();
        }
        projector.set_column(i, &(col / elements.len() as f64));
    }
    let projector = (&projector + projector.transpose()) * 0.5;
    let eig = SymmetricEigen::new(projector.clone());
    let keep: Vec<usize> = (0..len).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let mut basis = DMatrix::zeros(len, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(i));
    }
    Ok(FixedSubspace {
        label,
        dim,
        order,
        projector,
        basis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Planar,
    Spatial,
    /// Planar and spatial coordinates did not decouple.
    Mixed,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Planar => "planar",
            Self::Spatial => "spatial",
            Self::Mixed => "mixed",
        })
    }
}

/// Orthonormal basis vectors of one isotypic component.
#[derive(Debug, Clone)]
pub struct IsotypicBasis {
    pub k: usize,
    pub kind: BlockKind,
    /// Columns are basis vectors in `C^{3(n+1)}`.
    pub vectors: DMatrix<Complex64>,
    /// Which columns are supported on the central body.
    pub center_columns: Vec<usize>,
}

/// Isotypic decomposition of `C^{3(n+1)}` under the generator
/// `x_j -> e^{-J zeta} x_{j+1}` (eigenvalue `e^{i k zeta}` on component `k`),
/// split by the reflection `kappa`.
///
/// Ring vectors are `x_j = c^{j-1} w / sqrt(n)` with `w` an eigenvector of the
/// frame twist (eigenvalue `r`) and `c r = e^{i k zeta}`; the center carries
/// `w` itself when `r = e^{i k zeta}`.
pub fn isotypic_bases(n: usize) -> Vec<IsotypicBasis> {
    let zeta = 2.0 * PI / n as f64;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let twists = [
        (Complex64::from_polar(1.0, zeta), [Complex64::new(h, 0.0), Complex64::new(0.0, h), Complex64::new(0.0, 0.0)], BlockKind::Planar),
        (Complex64::from_polar(1.0, -zeta), [Complex64::new(h, 0.0), Complex64::new(0.0, -h), Complex64::new(0.0, 0.0)], BlockKind::Planar),
        (Complex64::new(1.0, 0.0), [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)], BlockKind::Spatial),
    ];
    let d = 3 * (n + 1);
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = Vec::new();
    for kind in [BlockKind::Planar, BlockKind::Spatial] {
        for k in 1..=n {
            let lambda = Complex64::from_polar(1.0, k as f64 * zeta);
            let mut cols: Vec<DVector<Complex64>> = Vec::new();
            let mut center_columns = Vec::new();
            for (r, w, wk) in twists.iter().filter(|t| t.2 == kind) {
                let c = lambda / r;
                let mut v = DVector::zeros(d);
                let mut p = Complex64::new(1.0, 0.0);
                for j in 1..=n {
                    for q in 0..3 {
                        v[3 * j + q] = p * w[q] * scale;
                    }
                    p *= c;
                }
                cols.push(v);
                if (r - lambda).norm() < 1e-12 {
                    let mut v = DVector::zeros(d);
                    for q in 0..3 {
                        v[q] = w[q];
                    }
                    center_columns.push(cols.len());
                    cols.push(v);
                }
                debug_assert_eq!(*wk, kind);
            }
            out.push(IsotypicBasis {
                k,
                kind,
                vectors: DMatrix::from_columns(&cols),
                center_columns,
            });
        }
    }
    out
}

/// One Hermitian block of a block-diagonalized matrix.
#[derive(Debug, Clone)]
pub struct IsotypicBlock {
    pub k: usize,
    pub kind: BlockKind,
    pub matrix: DMatrix<Complex64>,
    pub basis: DMatrix<Complex64>,
    /// Rows of `matrix` belonging to the central body.
    pub center_rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    pub n: usize,
    pub blocks: Vec<IsotypicBlock>,
    /// Largest entry discarded outside the blocks.
    pub off_block: f64,
    /// Commutator norm of the input with the ring generator.
    pub commutator: f64,
}

impl BlockDecomposition {
    /// Union of block spectra.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .blocks
            .iter()
            .flat_map(|b| SymmetricEigen::new(b.matrix.clone()).eigenvalues.iter().copied().collect::<Vec<_>>())
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }
}

/// Norm of `P^T A P - A` for the ring generator `P`.
pub fn ring_commutator(a: &DMatrix<Complex64>, n: usize) -> Result<f64> {
    let d = 3 * (n + 1);
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::Dimension {
            expected: d,
            found: a.nrows(),
        });
    }
    let p = action_matrix(&GroupElement::ring_generator(n, 0), d)?.map(|x| Complex64::new(x, 0.0));
    Ok((p.transpose() * a * &p - a).norm())
}

/// Conjugates a Z_n-equivariant Hermitian matrix into isotypic blocks.
pub fn dft_block_diagonalize(a: &DMatrix<Complex64>, n: usize) -> Result<BlockDecomposition> {
    if n < 2 {
        return Err(Error::Argument(format!("ring needs n >= 2, got {n}")));
    }
    let scale = a.norm().max(1.0);
    let commutator = ring_commutator(a, n)?;
    if commutator > EQUIVARIANCE_TOL * scale {
        return Err(Error::NotEquivariant { norm: commutator });
    }
    let bases = isotypic_bases(n);
    let u = DMatrix::from_columns(
        &bases
            .iter()
            .flat_map(|b| b.vectors.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    );
    let full = u.adjoint() * a * &u;
    let offsets: Vec<usize> = bases
        .iter()
        .scan(0, |acc, b| {
            let o = *acc;
            *acc += b.vectors.ncols();
            Some(o)
        })
        .collect();
    let owner: Vec<usize> = bases
        .iter()
        .enumerate()
        .flat_map(|(i, b)| std::iter::repeat_n(i, b.vectors.ncols()))
        .collect();
    // entries coupling different k must vanish; planar/spatial coupling
    // within one k decides whether that k splits
    let mut off_block = 0.0f64;
    let mut kappa_coupling = vec![0.0f64; n + 1];
    for i in 0..full.nrows() {
        for j in 0..full.ncols() {
            let (bi, bj) = (&bases[owner[i]], &bases[owner[j]]);
            if bi.k != bj.k {
                off_block = off_block.max(full[(i, j)].norm());
            } else if bi.kind != bj.kind {
                kappa_coupling[bi.k] = kappa_coupling[bi.k].max(full[(i, j)].norm());
            }
        }
    }
    if off_block > ZERO_PATTERN_TOL * scale {
        return Err(Error::NotEquivariant { norm: off_block });
    }
    let mut blocks = Vec::new();
    let mut merged: Vec<IsotypicBlock> = Vec::new();
    for (bi, b) in bases.iter().enumerate() {
        let s = b.vectors.ncols();
        let o = offsets[bi];
        let block = IsotypicBlock {
            k: b.k,
            kind: b.kind,
            matrix: full.view((o, o), (s, s)).into_owned(),
            basis: b.vectors.clone(),
            center_rows: b.center_columns.clone(),
        };
        if kappa_coupling[b.k] > ZERO_PATTERN_TOL * scale {
            merged.push(block);
        } else {
            blocks.push(block);
        }
    }
    for k in 1..=n {
        let parts: Vec<&IsotypicBlock> = merged.iter().filter(|b| b.k == k).collect();
        if parts.is_empty() {
            continue;
        }
        let mut cols = Vec::new();
        let mut center_rows = Vec::new();
        for p in &parts {
            for &r in &p.center_rows {
                center_rows.push(cols.len() + r);
            }
            cols.extend(p.basis.column_iter().map(|c| c.into_owned()));
        }
        let basis = DMatrix::from_columns(&cols);
        blocks.push(IsotypicBlock {
            k,
            kind: BlockKind::Mixed,
            matrix: basis.adjoint() * a * &basis,
            basis,
            center_rows,
        });
    }
    for b in &mut blocks {
        let m = b.matrix.clone();
        b.matrix = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    }
    Ok(BlockDecomposition {
        n,
        blocks,
        off_block,
        commutator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::maxwell_ring;
    use crate::dynamics::Mechanics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real_to_complex(a: &DMatrix<f64>) -> DMatrix<Complex64> {
        a.map(|x| Complex64::new(x, 0.0))
    }

    #[test]
    fn reflection_flips_z() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let y = act_state(&GroupElement::reflection(), &x).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, -3.0]);
    }

    #[test]
    fn ring_is_fixed_by_generator() {
        for n in 2..8 {
            let cfg = maxwell_ring(n, 0.7).unwrap();
            let x = cfg.state_vector();
            let y = act_state(&GroupElement::ring_generator(n, 0), &x).unwrap();
            assert!((x - y).amax() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn action_is_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        for _ in 0..20 {
            let x = DVector::from_fn(3 * (n + 1), |_, _| rng.random_range(-1.0..1.0));
            let mut g = || GroupElement {
                kappa: rng.random_bool(0.5),
                shift: rng.random_range(0..n),
                theta: rng.random_range(-3.0..3.0),
                phi: 0.0,
            };
            let (a, b) = (g(), g());
            let lhs = act_state(&a.compose(&b, n), &x).unwrap();
            let rhs = act_state(&a, &act_state(&b, &x).unwrap()).unwrap();
            assert!((lhs - rhs).amax() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(act_state(&GroupElement::IDENTITY, &DVector::zeros(4)).is_err());
        let lp = FourierLoop::zeros(3, 2, 1.0);
        assert!(symmetry_residual(&lp, IsotropyLabel::SpatialZnk(1)).is_err());
    }

    fn random_loop(rng: &mut ChaCha8Rng, dim: usize, order: usize) -> FourierLoop {
        let v = DVector::from_fn(dim * (2 * order + 1), |_, _| rng.random_range(-1.0..1.0));
        FourierLoop::from_real(dim, order, 1.0, &v).unwrap()
    }

    #[test]
    fn loop_phase_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lp = random_loop(&mut rng, 3, 4);
        let full = act_loop(&GroupElement::phase(2.0 * PI), &lp).unwrap();
        assert!((full.to_real() - lp.to_real()).amax() < 1e-14);

        let mut single = FourierLoop::zeros(3, 2, 1.0);
        single.set_mode(1, &lp.mode(1)).unwrap();
        let half = act_loop(&GroupElement::phase(PI), &single).unwrap();
        assert!((half.to_real() + single.to_real()).amax() < 1e-15);

        let g = GroupElement {
            kappa: true,
            shift: 0,
            theta: 0.4,
            phi: 1.1,
        };
        assert!((act_loop(&g, &lp).unwrap().norm() - lp.norm()).abs() < 1e-14);
    }

    #[test]
    fn residual_of_planar_and_eight_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut lp = random_loop(&mut rng, 3, 5);
        for l in 0..=5 {
            *lp.coeff_mut(l, 2) = Complex64::new(0.0, 0.0);
        }
        assert_eq!(symmetry_residual(&lp, IsotropyLabel::PlanarZ2).unwrap(), 0.0);

        let mut eight = random_loop(&mut rng, 3, 6);
        for l in 0..=6 {
            for c in 0..3 {
                let spatial = c == 2;
                if (l % 2 == 1) != spatial {
                    *eight.coeff_mut(l, c) = Complex64::new(0.0, 0.0);
                }
            }
        }
        let r = symmetry_residual(&eight, IsotropyLabel::EightZ2).unwrap();
        assert!(r < 1e-13, "{r}");
        assert!(symmetry_residual(&lp, IsotropyLabel::EightZ2).unwrap() > 1e-3);
    }

    #[test]
    fn ring_loop_built_from_one_body_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 4;
        let dim = 3 * (n + 1);
        for label in [IsotropyLabel::SpatialZnk(1), IsotropyLabel::PlanarZnk(3), IsotropyLabel::SpatialZnk(4)] {
            let sub = fixed_subspace_projector(label, 3, dim).unwrap();
            let lp = sub.project(&random_loop(&mut rng, dim, 3));
            assert!(lp.norm() > 0.1);
            assert!(symmetry_residual(&lp, label).unwrap() < 1e-14, "{label}");
        }
    }

    #[test]
    fn projector_properties() {
        let sub = fixed_subspace_projector(IsotropyLabel::PlanarZ2, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let lp = sub.project(&random_loop(&mut rng, 3, 3));
        for l in 0..=3 {
            assert_eq!(lp.coeff(l, 2), Complex64::new(0.0, 0.0));
        }
        let eight = fixed_subspace_projector(IsotropyLabel::EightZ2, 4, 3).unwrap();
        let lp = eight.project(&random_loop(&mut rng, 3, 4));
        for l in 0..=4 {
            for c in 0..3 {
                let kept = (l % 2 == 1) == (c == 2);
                assert_eq!(lp.coeff(l, c).norm() > 0.0, kept, "l = {l}, c = {c}");
            }
        }
        for label in [IsotropyLabel::SpatialZnk(2), IsotropyLabel::PlanarZnk(1)] {
            let sub = fixed_subspace_projector(label, 2, 15).unwrap();
            let p = &sub.projector;
            assert!((p * p - p).amax() < 1e-12);
            assert!((p - p.transpose()).amax() < 1e-12);
            let q = &sub.basis;
            assert!((q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols())).amax() < 1e-12);
        }
    }

    #[test]
    fn choreography_examples() {
        let cfg = maxwell_ring(3, 0.0).unwrap();
        let k = 1;
        let root = cfg.omega.sqrt();
        assert!(choreography_from_frequency(k as f64 * root, k, &cfg).is_choreography);
        let c = choreography_from_frequency(k as f64 * root / (1.0 - 3.0), k, &cfg);
        assert!((c.omega_ratio - 3.0).abs() < 1e-12 && c.is_choreography);
        assert!(!choreography_from_frequency(std::f64::consts::E, k, &cfg).is_choreography);
    }

    #[test]
    fn circulant_blocks() {
        let n = 3;
        let d = 3 * (n + 1);
        let mut a = DMatrix::zeros(d, d);
        for i in 1..=n {
            for j in 1..=n {
                let v = if i == j { 2.0 } else { -1.0 };
                for c in 0..3 {
                    a[(3 * i + c, 3 * j + c)] = v;
                }
            }
        }
        let dec = dft_block_diagonalize(&real_to_complex(&a), n).unwrap();
        let mut spatial: Vec<f64> = dec
            .blocks
            .iter()
            .filter(|b| b.kind == BlockKind::Spatial)
            .flat_map(|b| {
                // drop the decoupled central row
                (0..b.matrix.nrows())
                    .filter(|r| !b.center_rows.contains(r))
                    .map(|r| b.matrix[(r, r)].re)
                    .collect::<Vec<_>>()
            })
            .collect();
        spatial.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(spatial.len(), 3);
        assert!(spatial[0].abs() < 1e-14);
        assert!((spatial[1] - 3.0).abs() < 1e-14 && (spatial[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn identity_blocks_are_identity() {
        let n = 4;
        let d = 3 * (n + 1);
        let dec = dft_block_diagonalize(&DMatrix::identity(d, d), n).unwrap();
        assert_eq!(dec.blocks.len(), 2 * n);
        for b in &dec.blocks {
            let s = b.matrix.nrows();
            assert!((&b.matrix - DMatrix::<Complex64>::identity(s, s)).norm() < 1e-14);
        }
        let total: usize = dec.blocks.iter().map(|b| b.matrix.nrows()).sum();
        assert_eq!(total, d);
    }

    #[test]
    fn ring_hessian_spectrum_preserved() {
        let cfg = maxwell_ring(4, 1.0).unwrap();
        let h = cfg.body_system().hessian(&cfg.state_vector()).unwrap();
        let dense = SymmetricEigen::new(h.clone()).eigenvalues;
        let mut dense: Vec<f64> = dense.iter().copied().collect();
        dense.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let dec = dft_block_diagonalize(&real_to_complex(&h), 4).unwrap();
        let blocks = dec.eigenvalues();
        assert_eq!(dense.len(), blocks.len());
        for (a, b) in dense.iter().zip(&blocks) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(dec.blocks.iter().all(|b| b.kind != BlockKind::Mixed));
    }

    #[test]
    fn non_equivariant_input_rejected() {
        let cfg = maxwell_ring(3, 1.0).unwrap();
        let mut h = cfg.body_system().hessian(&cfg.state_vector()).unwrap();
        h[(4, 7)] += 1e-3;
        h[(7, 4)] += 1e-3;
        assert!(matches!(
            dft_block_diagonalize(&real_to_complex(&h), 3),
            Err(Error::NotEquivariant { .. })
        ));
    }
}
