//! Backward RK4 integrators for the two linear ODE shapes used by the solver
//! and the certificates:
//!
//! ```text
//! Ṗ + ÂᵀP + PÂ + ĈᵀPĈ + Q̂ = 0,   P(T) = G
//! φ̇ + λφ + f = 0,               φ(T) = φ_T
//! ```
//!
//! Both are integrated on the coefficients' grid with the classical
//! four-stage scheme, substepping intervals that are stiff for it. For
//! [`LyapunovData`] the half-node coefficients come from the paths'
//! interpolants; the Riccati solver supplies its own.

use crate::symlin::{symmetrize, GenMatrix, SymMatrix};
use crate::timepath::{
    GenPath, Interpolation, MatrixPath, PathError, ScalarPath, SymPath, TimeGrid,
};

/// Closed-loop data `(Â, Ĉ, Q̂, G)` of a Lyapunov-type matrix ODE.
#[derive(Debug, Clone)]
pub struct LyapunovData {
    a_hat: GenPath,
    c_hat: GenPath,
    q_hat: SymPath,
    terminal: SymMatrix,
}

impl LyapunovData {
    pub fn new(
        a_hat: GenPath,
        c_hat: GenPath,
        q_hat: SymPath,
        terminal: SymMatrix,
    ) -> Result<Self, PathError> {
        let grid = *a_hat.grid();
        if *c_hat.grid() != grid || *q_hat.grid() != grid {
            return Err(PathError::InvalidGrid(
                "Lyapunov coefficients on different grids".into(),
            ));
        }
        let d = terminal.dim();
        let square = |m: &GenMatrix| m.rows() == d && m.cols() == d;
        if !square(a_hat.first()) || !square(c_hat.first()) || q_hat.first().dim() != d {
            return Err(PathError::ShapeMismatch { index: 0 });
        }
        Ok(Self {
            a_hat,
            c_hat,
            q_hat,
            terminal,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.a_hat.grid()
    }

    pub fn dim(&self) -> usize {
        self.terminal.dim()
    }
}

/// `ÂᵀP + PÂ + ĈᵀPĈ + Q̂`.
pub(crate) fn lyapunov_rhs(
    a: &GenMatrix,
    c: &GenMatrix,
    q: &SymMatrix,
    p: &GenMatrix,
) -> GenMatrix {
    let atp = a.tr_matmul(p);
    let ctpc = c.tr_matmul(&p.matmul(c));
    let mut out = &atp + &atp.transpose();
    out = &out + &ctpc;
    &out + q.as_gen()
}

/// `(Â, Ĉ, Q̂)` at one time.
pub(crate) type Coefficients = (GenMatrix, GenMatrix, SymMatrix);

/// Upper bound on the norm of `P ↦ ÂᵀP + PÂ + ĈᵀPĈ`.
fn operator_bound((a, c, _): &Coefficients) -> f64 {
    2.0 * a.frobenius() + c.frobenius().powi(2)
}

/// One classical RK4 step of length `h` from `hi` (later time) to `lo`.
fn lyapunov_rk4(
    p0: &GenMatrix,
    h: f64,
    hi: &Coefficients,
    mid: &Coefficients,
    lo: &Coefficients,
) -> GenMatrix {
    let f = |(a, c, q): &Coefficients, p: &GenMatrix| lyapunov_rhs(a, c, q, p);
    let k1 = f(hi, p0);
    let k2 = f(mid, &(p0 + &k1.scale(0.5 * h)));
    let k3 = f(mid, &(p0 + &k2.scale(0.5 * h)));
    let k4 = f(lo, &(p0 + &k3.scale(h)));
    let incr = &(&k1 + &k4) + &(&k2 + &k3).scale(2.0);
    p0 + &incr.scale(h / 6.0)
}

/// Coefficients of a Lyapunov ODE at the nodes and inside the intervals of
/// its grid.
pub(crate) trait CoefficientSource {
    fn grid(&self) -> &TimeGrid;
    fn terminal(&self) -> &SymMatrix;
    fn node(&self, k: usize) -> Coefficients;
    /// At fraction `s ∈ (0, 1)` of interval `k`.
    fn inside(&self, k: usize, s: f64) -> Coefficients;
}

impl CoefficientSource for LyapunovData {
    fn grid(&self) -> &TimeGrid {
        self.a_hat.grid()
    }

    fn terminal(&self) -> &SymMatrix {
        &self.terminal
    }

    fn node(&self, k: usize) -> Coefficients {
        (
            self.a_hat.at(k).clone(),
            self.c_hat.at(k).clone(),
            self.q_hat.at(k).clone(),
        )
    }

    fn inside(&self, k: usize, s: f64) -> Coefficients {
        if s == 0.5 {
            return (
                self.a_hat.midpoint(k),
                self.c_hat.midpoint(k),
                self.q_hat.midpoint(k),
            );
        }
        let t = self.grid().node(k) + s * self.grid().step();
        let get = "time inside the grid";
        (
            self.a_hat.eval(t).expect(get),
            self.c_hat.eval(t).expect(get),
            self.q_hat.eval(t).expect(get),
        )
    }
}

/// Integrates the Lyapunov ODE backward from `T` down to node `first`.
/// Returns the samples for nodes `first..=n`, in increasing time order.
///
/// Intervals where `h` times the operator bound exceeds [`STIFF_LIMIT`] are
/// split into equal substeps.
pub(crate) fn integrate_lyapunov(src: &impl CoefficientSource, first: usize) -> Vec<SymMatrix> {
    let grid = *src.grid();
    let n = grid.n_steps();
    let h = grid.step();

    let mut out = Vec::with_capacity(n + 1 - first);
    let mut p = src.terminal().clone();
    out.push(p.clone());
    let mut hi = src.node(n);
    for k in (first..n).rev() {
        let mid = src.inside(k, 0.5);
        let lo = src.node(k);
        let bound = operator_bound(&hi)
            .max(operator_bound(&mid))
            .max(operator_bound(&lo));
        let m = (h * bound / STIFF_LIMIT).ceil().max(1.0);
        let next = if m <= 1.0 || !m.is_finite() {
            lyapunov_rk4(p.as_gen(), h, &hi, &mid, &lo)
        } else {
            let m = m as usize;
            let sub = h / m as f64;
            let frac = 1.0 / m as f64;
            let mut q = p.as_gen().clone();
            let mut sub_hi = hi.clone();
            for j in (0..m).rev() {
                let sub_lo = if j == 0 {
                    lo.clone()
                } else {
                    src.inside(k, j as f64 * frac)
                };
                let sub_mid = src.inside(k, (j as f64 + 0.5) * frac);
                q = lyapunov_rk4(&q, sub, &sub_hi, &sub_mid, &sub_lo);
                sub_hi = sub_lo;
            }
            q
        };
        p = symmetrize(&next).expect("square by construction");
        out.push(p.clone());
        hi = lo;
    }
    out.reverse();
    out
}

/// Solves `Ṗ + ÂᵀP + PÂ + ĈᵀPĈ + Q̂ = 0`, `P(T) = G` on the data's grid.
pub fn solve_lyapunov_backward(data: &LyapunovData) -> SymPath {
    let samples = integrate_lyapunov(data, 0);
    MatrixPath::new(*data.grid(), samples, Interpolation::Linear).expect("one sample per node")
}

/// Largest `|λ|·h` (or operator bound times `h`) taken in one RK4 step; the
/// stability interval of classical RK4 on the negative axis ends near 2.78.
const STIFF_LIMIT: f64 = 1.0;

/// Solves `φ̇ + λφ + f = 0`, `φ(T) = terminal` on `lambda`'s grid.
///
/// Intervals where `|λ|·h` exceeds a stability limit are split into equal
/// substeps, with coefficients taken from the paths' interpolants.
pub fn solve_scalar_backward(
    lambda: &ScalarPath,
    forcing: &ScalarPath,
    terminal: f64,
) -> Result<ScalarPath, PathError> {
    let grid = *lambda.grid();
    if *forcing.grid() != grid {
        return Err(PathError::InvalidGrid(
            "lambda and forcing on different grids".into(),
        ));
    }
    let n = grid.n_steps();
    let h = grid.step();
    let rhs = |l: f64, f: f64, phi: f64| l * phi + f;
    let rk4 =
        |phi: f64, h: f64, (l1, f1): (f64, f64), (lm, fm): (f64, f64), (l0, f0): (f64, f64)| {
            let k1 = rhs(l1, f1, phi);
            let k2 = rhs(lm, fm, phi + 0.5 * h * k1);
            let k3 = rhs(lm, fm, phi + 0.5 * h * k2);
            let k4 = rhs(l0, f0, phi + h * k3);
            phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        };

    let mut out = vec![0.0; n + 1];
    out[n] = terminal;
    let mut phi = terminal;
    for k in (0..n).rev() {
        let (l1, f1) = (*lambda.at(k + 1), *forcing.at(k + 1));
        let (l0, f0) = (*lambda.at(k), *forcing.at(k));
        let stiffness = h * l0.abs().max(l1.abs()).max(lambda.midpoint(k).abs());
        let m = (stiffness / STIFF_LIMIT).ceil().max(1.0) as usize;
        if m == 1 || !stiffness.is_finite() {
            let mid = (lambda.midpoint(k), forcing.midpoint(k));
            phi = rk4(phi, h, (l1, f1), mid, (l0, f0));
        } else {
            let sub = h / m as f64;
            let (t0, t1) = (grid.node(k), grid.node(k + 1));
            let at = |t: f64| -> Result<(f64, f64), PathError> {
                Ok((lambda.eval(t)?, forcing.eval(t)?))
            };
            let mut hi = (l1, f1);
            for j in (0..m).rev() {
                let lo = if j == 0 {
                    (l0, f0)
                } else {
                    at(t0 + j as f64 * sub)?
                };
                let mid = at((t0 + (j as f64 + 0.5) * sub).min(t1))?;
                phi = rk4(phi, sub, hi, mid, lo);
                hi = lo;
            }
        }
        out[k] = phi;
    }
    MatrixPath::new(grid, out, Interpolation::Linear)
}
