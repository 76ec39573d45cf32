//! Indefinite matrix Riccati differential equations.
//!
//! * [`symlin`]: dense symmetric kernel (Jacobi eigenvalues, Cholesky solves)
//! * [`timepath`]: time grids and sampled matrix-valued paths
//! * [`linode`]: backward RK4 for linear Lyapunov-type and scalar ODEs
//! * [`riccati`]: the quasi-linearization solver and its building blocks
//! * [`certify`]: sufficient solvability certificates
//! * [`lqmc`]: Monte Carlo verification through the stochastic LQ problem
//! * [`demos`]: built-in example problems

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod demos;
pub mod linode;
pub mod lqmc;
pub mod riccati;
pub mod symlin;
pub mod timepath;

pub use riccati::{
    quasilinearize, FailureKind, RiccatiProblem, RiccatiSolution, SolveFailure, SolverOptions,
};
pub use symlin::{GenMatrix, SymMatrix};
pub use timepath::{GenPath, Interpolation, MatrixPath, ScalarPath, SymPath, TimeGrid};
