//! Small real-matrix helpers shared by the measurement and tracking code.
//!
//! Measurement vectors mix radians with seconds, so covariances span many
//! orders of magnitude. Inversions go through a diagonally equilibrated
//! Cholesky factorization.

use nalgebra::{DMatrix, DVector};

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Cholesky factor of `D A D` with `D = diag(1/sqrt(a_ii))`, kept with `D`.
pub struct ScaledCholesky {
    scale: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl ScaledCholesky {
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        Self::with_tolerance(a, 1e-9)
    }

    /// Rejects matrices whose smallest equilibrated Cholesky pivot falls
    /// below `rel_pivot` times the largest.
    pub fn with_tolerance(a: &DMatrix<f64>, rel_pivot: f64) -> Option<Self> {
        let n = a.nrows();
        if n != a.ncols() || n == 0 {
            return None;
        }
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let d = a[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (a[(i, j)] + a[(j, i)]) * scale[i] * scale[j]
        });
        let chol = scaled.cholesky()?;
        // Reject numerically indefinite matrices whose pivots collapsed.
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            lo = lo.min(l[(i, i)].abs());
            hi = hi.max(l[(i, i)].abs());
        }
        if !(lo > rel_pivot * hi) {
            return None;
        }
        Some(Self { scale, chol })
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.scale.len();
        let inv = self.chol.inverse();
        symmetrize(&DMatrix::from_fn(n, n, |i, j| {
            inv[(i, j)] * self.scale[i] * self.scale[j]
        }))
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let scaled = b.component_mul(&self.scale);
        self.chol.solve(&scaled).component_mul(&self.scale)
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        b.dot(&self.solve(b))
    }

    /// `L n` with `L Lᵀ = A`; maps standard normal draws to `N(0, A)`.
    pub fn correlate(&self, n: &DVector<f64>) -> DVector<f64> {
        (self.chol.l_dirty().lower_triangle() * n).component_div(&self.scale)
    }

    pub fn ln_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        let mut s = 0.0;
        for i in 0..self.scale.len() {
            s += 2.0 * l[(i, i)].ln() - 2.0 * self.scale[i].ln();
        }
        s
    }
}

/// Inverse of a symmetric positive-definite matrix, or `None`.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    ScaledCholesky::new(a).map(|c| c.inverse())
}

pub fn is_spd(a: &DMatrix<f64>) -> bool {
    let asym = (a - a.transpose()).amax();
    asym <= 1e-9 * a.amax().max(f64::MIN_POSITIVE) && ScaledCholesky::new(a).is_some()
}

/// `ln N(x; m, P)`.
pub fn gaussian_ln_pdf(x: &DVector<f64>, m: &DVector<f64>, p: &DMatrix<f64>) -> Option<f64> {
    let c = ScaledCholesky::new(p)?;
    let d = x - m;
    let n = x.len() as f64;
    Some(-0.5 * (c.quad_form(&d) + c.ln_det() + n * (2.0 * std::f64::consts::PI).ln()))
}
