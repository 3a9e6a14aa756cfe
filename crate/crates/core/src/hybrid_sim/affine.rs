use nalgebra::{DMatrix, DVector};

use super::HybridSystem;
use crate::error::{check_dim, Result};

/// A hybrid system with affine flow `ẋ = A x + c`, guard `h = gᵀx + h₀` and
/// reset `Δ(x) = R x + r`. Every sensitivity of it is known in closed form,
/// which makes it the reference case for saltation and return-map code.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHybrid {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DVector<f64>,
    pub h0: f64,
    pub r: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineHybrid {
    /// Unit drift along `s` with the guard at `s = 1`, reset
    /// `(s, a, b) → (0, ka·a, kb·b)`: the return map is `diag(ka, kb)`.
    pub fn contracting(ka: f64, kb: f64) -> Self {
        Self {
            a: DMatrix::zeros(3, 3),
            c: DVector::from_vec(vec![1.0, 0.0, 0.0]),
            g: DVector::from_vec(vec![-1.0, 0.0, 0.0]),
            h0: 1.0,
            r: DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, ka, kb])),
            offset: DVector::zeros(3),
        }
    }

    /// Constant flow `c`, guard `x₀ = 1`, identity reset.
    pub fn identity_reset(c: DVector<f64>) -> Self {
        let n = c.len();
        let mut g = DVector::zeros(n);
        g[0] = -1.0;
        Self { a: DMatrix::zeros(n, n), c, g, h0: 1.0, r: DMatrix::identity(n, n), offset: DVector::zeros(n) }
    }
}

impl HybridSystem for AffineHybrid {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn flow(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.dim(), x.len())?;
        Ok(&self.a * x + &self.c)
    }

    fn guard(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("state", self.dim(), x.len())?;
        Ok(self.g.dot(x) + self.h0)
    }

    fn guard_gradient(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.g.clone())
    }

    fn reset(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.dim(), x.len())?;
        Ok(&self.r * x + &self.offset)
    }
}
