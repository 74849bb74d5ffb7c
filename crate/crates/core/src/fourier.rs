//! Truncated Fourier representation of real periodic loops.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real loop `x(t) = sum_{|l| <= L} x_l e^{i l t}` with `x_{-l} = conj(x_l)`.
///
/// Only modes `l >= 0` are stored, so the reality condition holds exactly;
/// `x_0` is kept real.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierLoop {
    dim: usize,
    order: usize,
    modes: Vec<Vec<Complex64>>,
    pub nu: f64,
}

impl FourierLoop {
    pub fn zeros(dim: usize, order: usize, nu: f64) -> Self {
        Self {
            dim,
            order,
            modes: vec![vec![Complex64::new(0.0, 0.0); dim]; order + 1],
            nu,
        }
    }

    /// Constant loop sitting at `x`.
    pub fn constant(x: &DVector<f64>, order: usize, nu: f64) -> Self {
        let mut out = Self::zeros(x.len(), order, nu);
        for (c, v) in out.modes[0].iter_mut().zip(x.iter()) {
            *c = Complex64::new(*v, 0.0);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Mode `l` for `|l| <= L`; negative modes are conjugates.
    pub fn mode(&self, l: i64) -> DVector<Complex64> {
        let m = &self.modes[l.unsigned_abs() as usize];
        if l >= 0 {
            DVector::from_column_slice(m)
        } else {
            DVector::from_iterator(self.dim, m.iter().map(|c| c.conj()))
        }
    }

    /// Sets mode `l >= 0`; the imaginary part of mode zero is dropped.
    pub fn set_mode(&mut self, l: usize, v: &DVector<Complex64>) -> Result<()> {
        if l > self.order {
            return Err(Error::Argument(format!("mode {l} above truncation {}", self.order)));
        }
        if v.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: v.len(),
            });
        }
        for (c, x) in self.modes[l].iter_mut().zip(v.iter()) {
            *c = if l == 0 { Complex64::new(x.re, 0.0) } else { *x };
        }
        Ok(())
    }

    pub(crate) fn coeff(&self, l: usize, c: usize) -> Complex64 {
        self.modes[l][c]
    }

    #[cfg(test)]
    pub(crate) fn coeff_mut(&mut self, l: usize, c: usize) -> &mut Complex64 {
        &mut self.modes[l][c]
    }

    pub fn evaluate(&self, t: f64) -> DVector<f64> {
        let mut x = DVector::from_iterator(self.dim, self.modes[0].iter().map(|c| c.re));
        for l in 1..=self.order {
            let e = Complex64::from_polar(2.0, l as f64 * t);
            for (xc, c) in x.iter_mut().zip(&self.modes[l]) {
                *xc += (c * e).re;
            }
        }
        x
    }

    /// `dx/dt` in the rescaled time.
    pub fn derivative(&self, t: f64) -> DVector<f64> {
        self.differentiate().evaluate(t)
    }

    /// Loop of `x'`, coefficients `i l x_l`.
    pub fn differentiate(&self) -> Self {
        let mut out = self.clone();
        for l in 0..=self.order {
            let f = Complex64::new(0.0, l as f64);
            out.modes[l].iter_mut().for_each(|c| *c *= f);
        }
        out
    }

    /// `sqrt(sum_{|l| <= L} |x_l|^2)`.
    pub fn norm(&self) -> f64 {
        let mut s: f64 = self.modes[0].iter().map(|c| c.norm_sqr()).sum();
        for l in 1..=self.order {
            s += 2.0 * self.modes[l].iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
        s.sqrt()
    }

    /// Mean position `x_0`.
    pub fn mean(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim, self.modes[0].iter().map(|c| c.re))
    }

    /// Norm of the non-constant part.
    pub fn amplitude(&self) -> f64 {
        let mut tmp = self.clone();
        tmp.modes[0].iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        tmp.norm()
    }

    /// Length of the packed real vector, `dim (2L + 1)`.
    pub fn real_len(&self) -> usize {
        self.dim * (2 * self.order + 1)
    }

    /// Packs `[Re x_0, Re x_1, Im x_1, ..., Re x_L, Im x_L]`.
    pub fn to_real(&self) -> DVector<f64> {
        let d = self.dim;
        let mut v = DVector::zeros(self.real_len());
        for c in 0..d {
            v[c] = self.modes[0][c].re;
        }
        for l in 1..=self.order {
            let base = d * (2 * l - 1);
            for c in 0..d {
                v[base + c] = self.modes[l][c].re;
                v[base + d + c] = self.modes[l][c].im;
            }
        }
        v
    }

    pub fn from_real(dim: usize, order: usize, nu: f64, v: &DVector<f64>) -> Result<Self> {
        let mut out = Self::zeros(dim, order, nu);
        if v.len() != out.real_len() {
            return Err(Error::Dimension {
                expected: out.real_len(),
                found: v.len(),
            });
        }
        for c in 0..dim {
            out.modes[0][c] = Complex64::new(v[c], 0.0);
        }
        for l in 1..=order {
            let base = dim * (2 * l - 1);
            for c in 0..dim {
                out.modes[l][c] = Complex64::new(v[base + c], v[base + dim + c]);
            }
        }
        Ok(out)
    }

    /// Same loop at a different truncation (padding with zeros or cutting).
    pub fn with_order(&self, order: usize) -> Self {
        let mut out = Self::zeros(self.dim, order, self.nu);
        for l in 0..=order.min(self.order) {
            out.modes[l] = self.modes[l].clone();
        }
        out
    }

    /// Samples `x(t_q)` at `q` equispaced points in `[0, 2 pi)` as columns.
    pub fn sample(&self, q: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, q);
        for k in 0..q {
            let t = 2.0 * PI * k as f64 / q as f64;
            out.set_column(k, &self.evaluate(t));
        }
        out
    }

    /// Sum of squared coefficient magnitudes weighted as the `L^2` inner
    /// product over one period, normalized by `2 pi`.
    pub fn inner(&self, other: &Self) -> f64 {
        let mut s: f64 = (0..self.dim).map(|c| (self.modes[0][c] * other.modes[0][c].conj()).re).sum();
        for l in 1..=self.order.min(other.order) {
            s += 2.0
                * (0..self.dim)
                    .map(|c| (self.modes[l][c] * other.modes[l][c].conj()).re)
                    .sum::<f64>();
        }
        s
    }
}

/// Inner product of packed real vectors matching [`FourierLoop::inner`].
pub fn packed_weights(dim: usize, order: usize) -> DVector<f64> {
    DVector::from_fn(dim * (2 * order + 1), |i, _| if i < dim { 1.0 } else { 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_is_real_and_matches_modes() {
        let mut lp = FourierLoop::zeros(2, 2, 1.0);
        lp.set_mode(0, &DVector::from_vec(vec![Complex64::new(1.0, 5.0), Complex64::new(0.0, 0.0)]))
            .unwrap();
        lp.set_mode(1, &DVector::from_vec(vec![Complex64::new(0.5, 0.0), Complex64::new(0.0, -0.5)]))
            .unwrap();
        // x(t) = (1 + cos t, sin t)
        for t in [0.0, 0.3, 2.0] {
            let x = lp.evaluate(t);
            assert!((x[0] - (1.0 + t.cos())).abs() < 1e-15);
            assert!((x[1] - t.sin()).abs() < 1e-15);
            let v = lp.derivative(t);
            assert!((v[0] + t.sin()).abs() < 1e-15);
            assert!((v[1] - t.cos()).abs() < 1e-15);
        }
        assert_eq!(lp.mode(-1)[1], Complex64::new(0.0, 0.5));
    }

    #[test]
    fn packing_round_trip() {
        let v = DVector::from_fn(3 * 7, |i, _| (i as f64).sin());
        let lp = FourierLoop::from_real(3, 3, 1.2, &v).unwrap();
        assert_eq!(lp.to_real(), v);
        let w = packed_weights(3, 3);
        assert!((lp.norm().powi(2) - v.component_mul(&v).dot(&w)).abs() < 1e-12);
    }

    #[test]
    fn truncation_change() {
        let v = DVector::from_fn(3 * 5, |i, _| i as f64);
        let lp = FourierLoop::from_real(3, 2, 1.0, &v).unwrap();
        let up = lp.with_order(4);
        assert_eq!(up.with_order(2), lp);
        assert_eq!(up.norm(), lp.norm());
    }
}
