//! Built-in example problems on `[0, 1]` with unit terminal weight.

use crate::riccati::{ProblemError, RiccatiProblem};
use crate::symlin::{GenMatrix, SymMatrix};
use crate::timepath::TimeGrid;

/// Two states, two controls:
///
/// ```text
/// dx₁ = (a₁x₁ + u₂) dt + (x₂ + u₁) dw
/// dx₂ = (a₂x₂ - u₁) dt + (x₁ + u₂) dw
/// ```
///
/// with control weights `r₁, r₂`, no state weight and `G = I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation2d {
    pub a1: f64,
    pub a2: f64,
    pub r1: f64,
    pub r2: f64,
}

impl Default for Rotation2d {
    fn default() -> Self {
        Self {
            a1: 1.0,
            a2: 0.0,
            r1: -0.02,
            r2: -0.02,
        }
    }
}

impl Rotation2d {
    pub fn problem(&self, n_steps: usize) -> Result<RiccatiProblem, ProblemError> {
        RiccatiProblem::constant(
            TimeGrid::new(1.0, n_steps)?,
            GenMatrix::diag(&[self.a1, self.a2]),
            GenMatrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]])?,
            GenMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])?,
            GenMatrix::identity(2),
            SymMatrix::diag(&[self.r1, self.r2]),
            SymMatrix::zeros(2),
            SymMatrix::identity(2),
        )
    }
}

/// `dx = (ax + bu) dt + (cx + u) dw` with weights `r, q` and `g = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalar1d {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
}

impl Default for Scalar1d {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.5,
            c: 0.0,
            q: -0.5,
            r: -0.1,
        }
    }
}

impl Scalar1d {
    /// The constant-coefficient special case `a = c = q = 0`, `b = 1`.
    pub fn constant(r: f64) -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            c: 0.0,
            q: 0.0,
            r,
        }
    }

    pub fn problem(&self, n_steps: usize) -> Result<RiccatiProblem, ProblemError> {
        let s = GenMatrix::scalar;
        RiccatiProblem::constant(
            TimeGrid::new(1.0, n_steps)?,
            s(self.a),
            s(self.b),
            s(self.c),
            s(1.0),
            SymMatrix::scalar(self.r),
            SymMatrix::scalar(self.q),
            SymMatrix::scalar(1.0),
        )
    }
}
