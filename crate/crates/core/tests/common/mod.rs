//! Random instance generators shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riccati_core::symlin::symmetrize;
use riccati_core::{GenMatrix, MatrixPath, RiccatiProblem, SymMatrix, TimeGrid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gen(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> GenMatrix {
    GenMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn sym(rng: &mut impl Rng, dim: usize, scale: f64) -> SymMatrix {
    let m = gen(rng, dim, dim, scale);
    SymMatrix::from_upper(dim, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)))
}

/// `XᵀX + shift·I` with `X` uniform in `[-scale, scale]`.
pub fn psd(rng: &mut impl Rng, dim: usize, scale: f64, shift: f64) -> SymMatrix {
    let x = gen(rng, dim, dim, scale);
    symmetrize(&x.tr_matmul(&x)).unwrap().shift(shift)
}

/// Identity plus a small perturbation: well conditioned.
pub fn well_conditioned(rng: &mut impl Rng, dim: usize) -> GenMatrix {
    &GenMatrix::identity(dim) + &gen(rng, dim, dim, 0.3 / dim as f64)
}

/// Random problem with `R ≥ 4I`, so the constraint holds with room to spare
/// whenever `P` stays moderate. `Q` and `G` are PSD when `psd_qg`, else
/// small indefinite. Coefficients vary linearly in time.
pub fn solvable_problem(
    rng: &mut impl Rng,
    dim: usize,
    n_steps: usize,
    psd_qg: bool,
) -> RiccatiProblem {
    let grid = TimeGrid::new(1.0, n_steps).unwrap();
    let lin = |rng: &mut ChaCha8Rng, s: f64| {
        let (m0, m1) = (gen(rng, dim, dim, s), gen(rng, dim, dim, 0.5 * s));
        MatrixPath::from_fn(grid, move |t| &m0 + &m1.scale(t))
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    let a = lin(&mut local, 0.6);
    let b = lin(&mut local, 0.6);
    let c = lin(&mut local, 0.3);
    let d0 = well_conditioned(&mut local, dim);
    let d = MatrixPath::from_constant(d0, grid);
    let r0 = psd(&mut local, dim, 0.5, 4.0);
    let r = MatrixPath::from_constant(r0, grid);
    let (q0, g) = if psd_qg {
        (
            psd(&mut local, dim, 0.5, 0.0),
            psd(&mut local, dim, 0.7, 0.0),
        )
    } else {
        (sym(&mut local, dim, 0.3), sym(&mut local, dim, 0.3))
    };
    let q = MatrixPath::from_constant(q0, grid);
    RiccatiProblem::new(a, b, c, d, r, q, g).unwrap()
}

/// Scalar constant-coefficient problem with `a = c = q = 0`, `b = d = g = 1`, `T = 1`.
pub fn constant_example(r: f64, n_steps: usize) -> RiccatiProblem {
    let s = GenMatrix::scalar;
    RiccatiProblem::constant(
        TimeGrid::new(1.0, n_steps).unwrap(),
        s(0.0),
        s(1.0),
        s(0.0),
        s(1.0),
        SymMatrix::scalar(r),
        SymMatrix::scalar(0.0),
        SymMatrix::scalar(1.0),
    )
    .unwrap()
}

/// Solution of `ln P - r/P = t - (1 + r)` by bisection on `P ∈ (0, 1]`.
/// Valid while `P + r > 0`.
pub fn implicit_oracle(r: f64, t: f64) -> f64 {
    let f = |p: f64| p.ln() - r / p - (t - (1.0 + r));
    let (mut lo, mut hi) = (1e-12_f64.max(-r), 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root of `ln x = x - 2` in `(0, 1)`.
pub fn frontier_oracle() -> f64 {
    let (mut lo, mut hi) = (0.01_f64, 0.5_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid.ln() - mid + 2.0 > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn sup_diff(a: &[SymMatrix], b: &[SymMatrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).max_abs())
        .fold(0.0, f64::max)
}

pub fn min_eig_diff(a: &[SymMatrix], b: &[SymMatrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).min_eigenvalue())
        .fold(f64::INFINITY, f64::min)
}
