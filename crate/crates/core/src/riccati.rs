//! Indefinite matrix Riccati differential equation
//!
//! ```text
//! Ṗ + AᵀP + PA + CᵀPC + Q = (PB + CᵀPD)(R + DᵀPD)⁻¹(PB + CᵀPD)ᵀ,
//! P(T) = G,   R + DᵀPD > 0 on [0, T]
//! ```
//!
//! solved by quasi-linearization: starting from `P₀ = 0`, each iterate solves
//! the linear equation obtained by freezing the feedback `Ψ(Pₙ₋₁)`,
//!
//! ```text
//! Ṗₙ + Φ(Pₙ, Ψ(Pₙ₋₁)) + Q + Ψ(Pₙ₋₁)ᵀ R Ψ(Pₙ₋₁) = 0,   Pₙ(T) = G,
//! Φ(P, U) = (A + BU)ᵀP + P(A + BU) + (C + DU)ᵀP(C + DU),
//! Ψ(P)    = -(R + DᵀPD)⁻¹(BᵀP + DᵀPC).
//! ```
//!
//! When the equation is solvable the iterates decrease monotonically to the
//! solution while keeping `R + DᵀPₙD` uniformly positive; losing either
//! property means there is no solution.

use std::fmt;

use thiserror::Error;

use crate::linode::{integrate_lyapunov, lyapunov_rhs, CoefficientSource, Coefficients};
use crate::symlin::{solve_definite, symmetrize, Cholesky, GenMatrix, LinalgError, SymMatrix};
use crate::timepath::{
    GenPath, Interpolation, MatrixPath, PathError, ScalarPath, SymPath, TimeGrid,
};

/// Relative threshold on `det(DᵀD)` below which `D` is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("D is singular at t = {at_time}")]
    SingularD { at_time: f64 },
}

/// System data `(A, B, C, D)`, cost weights `(R, Q, G)` and the grid they
/// share.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiProblem {
    grid: TimeGrid,
    a: GenPath,
    b: GenPath,
    c: GenPath,
    d: GenPath,
    r: SymPath,
    q: SymPath,
    g: SymMatrix,
}

/// Coefficients frozen at one time.
#[derive(Debug, Clone)]
pub struct SystemAt {
    pub a: GenMatrix,
    pub b: GenMatrix,
    pub c: GenMatrix,
    pub d: GenMatrix,
    pub r: SymMatrix,
    pub q: SymMatrix,
}

#[derive(Clone, Copy)]
struct View<'a> {
    a: &'a GenMatrix,
    b: &'a GenMatrix,
    c: &'a GenMatrix,
    d: &'a GenMatrix,
    r: &'a SymMatrix,
    q: &'a SymMatrix,
}

impl RiccatiProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: GenPath,
        b: GenPath,
        c: GenPath,
        d: GenPath,
        r: SymPath,
        q: SymPath,
        g: SymMatrix,
    ) -> Result<Self, ProblemError> {
        let grid = *a.grid();
        let dim = g.dim();
        for (name, p) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if *p.grid() != grid {
                return Err(ProblemError::Dimension(format!(
                    "{name} is on a different grid"
                )));
            }
            let m = p.first();
            if m.rows() != dim || m.cols() != dim {
                return Err(ProblemError::Dimension(format!(
                    "{name} is {}x{}, expected {dim}x{dim}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for (name, p) in [("R", &r), ("Q", &q)] {
            if *p.grid() != grid {
                return Err(ProblemError::Dimension(format!(
                    "{name} is on a different grid"
                )));
            }
            if p.first().dim() != dim {
                return Err(ProblemError::Dimension(format!(
                    "{name} is {0}x{0}, expected {dim}x{dim}",
                    p.first().dim()
                )));
            }
        }
        Ok(Self {
            grid,
            a,
            b,
            c,
            d,
            r,
            q,
            g,
        })
    }

    /// Problem with time-invariant coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        grid: TimeGrid,
        a: GenMatrix,
        b: GenMatrix,
        c: GenMatrix,
        d: GenMatrix,
        r: SymMatrix,
        q: SymMatrix,
        g: SymMatrix,
    ) -> Result<Self, ProblemError> {
        Self::new(
            MatrixPath::from_constant(a, grid),
            MatrixPath::from_constant(b, grid),
            MatrixPath::from_constant(c, grid),
            MatrixPath::from_constant(d, grid),
            MatrixPath::from_constant(r, grid),
            MatrixPath::from_constant(q, grid),
            g,
        )
    }

    /// Same system data, different cost weights.
    pub fn with_weights(&self, r: SymPath, q: SymPath, g: SymMatrix) -> Result<Self, ProblemError> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
            r,
            q,
            g,
        )
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn a(&self) -> &GenPath {
        &self.a
    }
    pub fn b(&self) -> &GenPath {
        &self.b
    }
    pub fn c(&self) -> &GenPath {
        &self.c
    }
    pub fn d(&self) -> &GenPath {
        &self.d
    }
    pub fn r(&self) -> &SymPath {
        &self.r
    }
    pub fn q(&self) -> &SymPath {
        &self.q
    }
    pub fn g(&self) -> &SymMatrix {
        &self.g
    }

    pub fn at_time(&self, t: f64) -> Result<SystemAt, PathError> {
        Ok(SystemAt {
            a: self.a.eval(t)?,
            b: self.b.eval(t)?,
            c: self.c.eval(t)?,
            d: self.d.eval(t)?,
            r: self.r.eval(t)?,
            q: self.q.eval(t)?,
        })
    }

    fn node(&self, k: usize) -> View<'_> {
        View {
            a: self.a.at(k),
            b: self.b.at(k),
            c: self.c.at(k),
            d: self.d.at(k),
            r: self.r.at(k),
            q: self.q.at(k),
        }
    }

    fn max_norm_r(&self) -> f64 {
        self.r
            .samples()
            .iter()
            .map(SymMatrix::max_abs)
            .fold(0.0, f64::max)
    }

    fn max_norm_q(&self) -> f64 {
        self.q
            .samples()
            .iter()
            .map(SymMatrix::max_abs)
            .fold(0.0, f64::max)
    }
}

impl SystemAt {
    fn view(&self) -> View<'_> {
        View {
            a: &self.a,
            b: &self.b,
            c: &self.c,
            d: &self.d,
            r: &self.r,
            q: &self.q,
        }
    }
}

impl View<'_> {
    /// `R + DᵀPD`.
    fn gap_matrix(&self, p: &SymMatrix) -> SymMatrix {
        self.r + &p.congruence(self.d)
    }

    /// `BᵀP + DᵀPC`.
    fn feedback_numerator(&self, p: &SymMatrix) -> GenMatrix {
        let pg = p.as_gen();
        &self.b.tr_matmul(pg) + &self.d.tr_matmul(&pg.matmul(self.c))
    }

    fn feedback(&self, p: &SymMatrix) -> Result<GenMatrix, LinalgError> {
        let x = solve_definite(&self.gap_matrix(p), &self.feedback_numerator(p))?;
        Ok(-&x)
    }

    fn phi_form(&self, p: &SymMatrix, u: &GenMatrix) -> SymMatrix {
        let a_cl = self.a + &self.b.matmul(u);
        let c_cl = self.c + &self.d.matmul(u);
        let atp = a_cl.tr_matmul(p.as_gen());
        let sum = &(&atp + &atp.transpose()) + p.congruence(&c_cl).as_gen();
        symmetrize(&sum).expect("square")
    }

    /// Riccati residual at a point given a derivative estimate.
    fn riccati_residual(&self, p: &SymMatrix, p_dot: &GenMatrix) -> Result<f64, LinalgError> {
        let pg = p.as_gen();
        let atp = self.a.tr_matmul(pg);
        let lin = &(&(&atp + &atp.transpose()) + p.congruence(self.c).as_gen()) + self.q.as_gen();
        // S = PB + CᵀPD, quadratic term S (R + DᵀPD)⁻¹ Sᵀ
        let st = self.feedback_numerator(p);
        let x = solve_definite(&self.gap_matrix(p), &st)?;
        let quad = st.tr_matmul(&x);
        Ok((&(p_dot + &lin) - &quad).max_abs())
    }
}

/// `Ψ(P) = -(R + DᵀPD)⁻¹(BᵀP + DᵀPC)` at time `t`.
pub fn feedback(p: &SymMatrix, t: f64, prob: &RiccatiProblem) -> Result<GenMatrix, ProblemError> {
    Ok(prob.at_time(t)?.view().feedback(p)?)
}

/// `Φ(P, U) = (A + BU)ᵀP + P(A + BU) + (C + DU)ᵀP(C + DU)` at time `t`.
pub fn phi_form(
    p: &SymMatrix,
    u: &GenMatrix,
    t: f64,
    prob: &RiccatiProblem,
) -> Result<SymMatrix, ProblemError> {
    Ok(prob.at_time(t)?.view().phi_form(p, u))
}

/// Max-entry norm of the defect in the completion-of-squares identity
///
/// ```text
/// Φ(P,U) + UᵀRU - Φ(P,Ψ) - ΨᵀRΨ = (U - Ψ)ᵀ(R + DᵀPD)(U - Ψ),   Ψ = Ψ(P).
/// ```
pub fn completion_identity_residual(
    p: &SymMatrix,
    u: &GenMatrix,
    t: f64,
    prob: &RiccatiProblem,
) -> Result<f64, ProblemError> {
    let sys = prob.at_time(t)?;
    let v = sys.view();
    let psi = v.feedback(p)?;
    let lhs =
        &(&v.phi_form(p, u) + &v.r.congruence(u)) - &(&v.phi_form(p, &psi) + &v.r.congruence(&psi));
    let rhs = v.gap_matrix(p).congruence(&(u - &psi));
    Ok((&lhs - &rhs).max_abs())
}

/// Sup over interior nodes of the Riccati residual, with `Ṗ` from central
/// differences on the grid.
pub fn residual(p: &SymPath, prob: &RiccatiProblem) -> Result<f64, ProblemError> {
    if p.grid() != prob.grid() {
        return Err(ProblemError::Dimension(
            "solution and problem on different grids".into(),
        ));
    }
    let h = prob.grid.step();
    let mut worst: f64 = 0.0;
    for k in 1..prob.grid.n_steps() {
        let p_dot = (p.at(k + 1).as_gen() - p.at(k - 1).as_gen()).scale(0.5 / h);
        worst = worst.max(prob.node(k).riccati_residual(p.at(k), &p_dot)?);
    }
    Ok(worst)
}

/// Change of control variable `v = D·u`: returns the equivalent problem
/// with `D = I`, `B' = B D⁻¹`, `R' = D⁻ᵀ R D⁻¹`. The Riccati solution is
/// unchanged.
pub fn normalize_d(prob: &RiccatiProblem) -> Result<RiccatiProblem, ProblemError> {
    let grid = prob.grid;
    let dim = prob.dim();
    let mut b = Vec::with_capacity(grid.n_nodes());
    let mut r = Vec::with_capacity(grid.n_nodes());
    for k in 0..grid.n_nodes() {
        let d = prob.d.at(k);
        let d_inv = invert_d(d).ok_or(ProblemError::SingularD {
            at_time: grid.node(k),
        })?;
        b.push(prob.b.at(k).matmul(&d_inv));
        r.push(prob.r.at(k).congruence(&d_inv));
    }
    RiccatiProblem::new(
        prob.a.clone(),
        MatrixPath::new(grid, b, prob.b.interpolation())?,
        prob.c.clone(),
        MatrixPath::from_constant(GenMatrix::identity(dim), grid),
        MatrixPath::new(grid, r, prob.r.interpolation())?,
        prob.q.clone(),
        prob.g.clone(),
    )
}

/// `D⁻¹` via `(DᵀD)⁻¹Dᵀ`, or `None` when `det(DᵀD)` is negligible.
pub(crate) fn invert_d(d: &GenMatrix) -> Option<GenMatrix> {
    let dtd = symmetrize(&d.tr_matmul(d)).ok()?;
    if !dtd_is_regular(&dtd) {
        return None;
    }
    Cholesky::factor(&dtd).ok()?.solve(&d.transpose()).ok()
}

/// `det(DᵀD) > SINGULAR_TOL · max|DᵀD|^d`, with the determinant read off the
/// Cholesky pivots.
pub(crate) fn dtd_is_regular(dtd: &SymMatrix) -> bool {
    let scale = dtd.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return false;
    }
    let normalized = dtd.scale(1.0 / scale);
    let Ok(ch) = Cholesky::factor(&normalized) else {
        return false;
    };
    ch.determinant() > SINGULAR_TOL
}

/// Knobs for [`quasilinearize`]. `None` fields take the problem-relative
/// defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on `sup_t |Pₙ - Pₙ₋₁|`; default `1e-9·(1 + |G|)`.
    pub conv_tol: Option<f64>,
    pub max_iter: usize,
    /// Allowed increase `λ_max(Pₙ - Pₙ₋₁)` between iterates.
    pub mono_tol: f64,
    /// Floor for `λ_min(R + DᵀPD)`; default `1e-8·(1 + max|R|)`.
    pub delta_floor: Option<f64>,
    /// Iterates below `-unbounded_floor` are declared unbounded; default
    /// `1e6·(1 + |G| + T·max|Q|)`.
    pub unbounded_floor: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            conv_tol: None,
            max_iter: 200,
            mono_tol: 1e-7,
            delta_floor: None,
            unbounded_floor: None,
        }
    }
}

/// [`SolverOptions`] resolved against a concrete problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub conv_tol: f64,
    pub max_iter: usize,
    pub mono_tol: f64,
    pub delta_floor: f64,
    pub unbounded_floor: f64,
}

impl SolverOptions {
    pub fn resolve(&self, prob: &RiccatiProblem) -> Tolerances {
        let g = prob.g.max_abs();
        Tolerances {
            conv_tol: self.conv_tol.unwrap_or(1e-9 * (1.0 + g)),
            max_iter: self.max_iter,
            mono_tol: self.mono_tol,
            delta_floor: self.delta_floor.unwrap_or(1e-8 * (1.0 + prob.max_norm_r())),
            unbounded_floor: self
                .unbounded_floor
                .unwrap_or(1e6 * (1.0 + g + prob.grid.horizon() * prob.max_norm_q())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: SymPath,
    /// `Ψ(P(t))`, the optimal feedback gain.
    pub gain: GenPath,
    /// `λ_min(R + DᵀPD)` at each node.
    pub gap: ScalarPath,
    pub iterations: usize,
    pub sup_residual: f64,
    /// `sup_t |Pₙ - Pₙ₋₁|` for every iterate.
    pub iterate_history_norms: Vec<f64>,
    /// `sup_t λ_max(Pₙ - Pₙ₋₁)` for every iterate from the second on.
    pub max_increases: Vec<f64>,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    ConstraintLoss,
    NoDecrease,
    MaxIterations,
    UnboundedBelow,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ConstraintLoss => "ConstraintLoss",
            Self::NoDecrease => "NoDecrease",
            Self::MaxIterations => "MaxIterations",
            Self::UnboundedBelow => "UnboundedBelow",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at iteration {at_iteration}{}: {diagnostics}", at_time.map(|t| format!(" (t = {t})")).unwrap_or_default())]
pub struct SolveFailure {
    pub kind: FailureKind,
    pub at_time: Option<f64>,
    pub at_iteration: usize,
    pub diagnostics: String,
}

/// Runs the quasi-linearization iteration to convergence.
///
/// When an iterate violates `R + DᵀPₙD ≥ δ` the equation has no solution on
/// the whole horizon. The iteration then continues on the nodes after the
/// latest violation, which converges to the solution on the largest interval
/// where it exists; the reported `at_time` is the node where that solution
/// breaks the constraint.
pub fn quasilinearize(
    prob: &RiccatiProblem,
    opts: &SolverOptions,
) -> Result<RiccatiSolution, SolveFailure> {
    let tol = opts.resolve(prob);
    let grid = prob.grid;
    let n = grid.n_steps();
    let dim = prob.dim();

    let fail = |kind, at_time, at_iteration, diagnostics: String| SolveFailure {
        kind,
        at_time,
        at_iteration,
        diagnostics,
    };

    // first node of the window the iteration currently runs on
    let mut start = 0usize;
    let mut loss_node: Option<usize> = None;
    let mut prev: Vec<SymMatrix> = vec![SymMatrix::zeros(dim); n + 1];
    let mut rates: Vec<GenMatrix> = vec![GenMatrix::zeros(dim, dim); n + 1];
    let mut history = Vec::new();
    let mut increases = Vec::new();

    for iter in 1..=tol.max_iter {
        // gains Ψ(Pₙ₋₁) at the nodes and interval midpoints; Ψ(P₀) = Ψ(0) = 0
        let mut gains = vec![GenMatrix::zeros(dim, dim); n + 1];
        let mut mid_gains = vec![GenMatrix::zeros(dim, dim); n];
        if iter > 1 {
            for k in start..=n {
                gains[k] = prob.node(k).feedback(&prev[k]).map_err(|e| {
                    fail(
                        FailureKind::ConstraintLoss,
                        Some(grid.node(k)),
                        iter,
                        format!("feedback of iterate {} undefined: {e}", iter - 1),
                    )
                })?;
            }
            for (k, u) in mid_gains.iter_mut().enumerate().skip(start) {
                *u = midpoint_gain(prob, &prev, &rates, &gains, k);
            }
        }
        let closed = ClosedLoop {
            prob,
            gains: &gains,
            mid_gains: &mid_gains,
        };
        let window = integrate_lyapunov(&closed, start);
        let mut cur = prev.clone();
        for (k, pk) in (start..=n).zip(window) {
            cur[k] = pk;
        }
        // Ṗ of this iterate at the nodes, for the next midpoint gains
        for k in start..=n {
            let (a, c, q) = closed.node(k);
            rates[k] = -&lyapunov_rhs(&a, &c, &q, cur[k].as_gen());
        }

        if let Some(k) = (start..=n).rev().find(|&k| !cur[k].is_finite()) {
            return Err(fail(
                FailureKind::UnboundedBelow,
                Some(grid.node(k)),
                iter,
                "iterate is not finite".into(),
            ));
        }

        // constraint R + DᵀPₙD ≥ δ; shrink the window past the latest violation
        let violation = (start..=n)
            .rev()
            .find(|&k| prob.node(k).gap_matrix(&cur[k]).min_eigenvalue() < tol.delta_floor);
        if let Some(k) = violation {
            if k + 1 >= n {
                return Err(fail(
                    FailureKind::ConstraintLoss,
                    Some(grid.node(k)),
                    iter,
                    format!(
                        "R + DᵀPD falls below {:e} next to the terminal time",
                        tol.delta_floor
                    ),
                ));
            }
            loss_node = Some(k);
            start = k + 1;
        }

        if let Some((k, lo)) = (start..=n)
            .map(|k| (k, cur[k].min_eigenvalue()))
            .find(|&(_, lo)| lo < -tol.unbounded_floor)
        {
            return Err(fail(
                FailureKind::UnboundedBelow,
                Some(grid.node(k)),
                iter,
                format!("λ_min(P) = {lo:e} below -{:e}", tol.unbounded_floor),
            ));
        }

        let change = (start..=n)
            .map(|k| (cur[k].as_gen() - prev[k].as_gen()).max_abs())
            .fold(0.0, f64::max);
        history.push(change);

        if iter >= 2 {
            let (k_worst, increase) = (start..=n)
                .map(|k| (k, (&cur[k] - &prev[k]).max_eigenvalue()))
                .fold((start, f64::NEG_INFINITY), |best, x| {
                    if x.1 > best.1 {
                        x
                    } else {
                        best
                    }
                });
            increases.push(increase);
            if increase > tol.mono_tol {
                let message = format!("λ_max(Pₙ - Pₙ₋₁) = {increase:e} exceeds {:e}", tol.mono_tol);
                // once an iterate has lost the constraint the equation has no
                // solution on the horizon; the window only localizes the loss
                return Err(match loss_node {
                    Some(k) => fail(
                        FailureKind::ConstraintLoss,
                        Some(grid.node(k)),
                        iter,
                        format!(
                            "{message} while localizing the loss at t = {}",
                            grid.node(k)
                        ),
                    ),
                    None => fail(
                        FailureKind::NoDecrease,
                        Some(grid.node(k_worst)),
                        iter,
                        message,
                    ),
                });
            }
        }

        prev = cur;

        if change < tol.conv_tol && violation.is_none() {
            if let Some(k) = loss_node {
                return Err(fail(
                    FailureKind::ConstraintLoss,
                    Some(grid.node(k)),
                    iter,
                    format!(
                        "iteration converged on [{}, {}] only; R + DᵀPD < {:e} at t = {}",
                        grid.node(start),
                        grid.horizon(),
                        tol.delta_floor,
                        grid.node(k)
                    ),
                ));
            }
            return Ok(finish(prob, prev, iter, history, increases, tol));
        }
    }

    match loss_node {
        Some(k) => Err(fail(
            FailureKind::ConstraintLoss,
            Some(grid.node(k)),
            tol.max_iter,
            "iteration limit reached after losing the constraint".into(),
        )),
        None => Err(fail(
            FailureKind::MaxIterations,
            None,
            tol.max_iter,
            format!(
                "last change {:e}",
                history.last().copied().unwrap_or(f64::NAN)
            ),
        )),
    }
}

/// The Lyapunov ODE of one iteration: the problem data closed with a gain
/// path. Between nodes the gain is the quadratic through its values at the
/// two nodes and the midpoint, and the data come from the problem's own
/// interpolants, so `Q̂ = Q + KᵀRK` and `Ĉ = C + DK` always share one gain.
struct ClosedLoop<'a> {
    prob: &'a RiccatiProblem,
    gains: &'a [GenMatrix],
    mid_gains: &'a [GenMatrix],
}

fn close(v: View<'_>, u: &GenMatrix) -> Coefficients {
    (
        v.a + &v.b.matmul(u),
        v.c + &v.d.matmul(u),
        v.q + &v.r.congruence(u),
    )
}

impl CoefficientSource for ClosedLoop<'_> {
    fn grid(&self) -> &TimeGrid {
        &self.prob.grid
    }

    fn terminal(&self) -> &SymMatrix {
        &self.prob.g
    }

    fn node(&self, k: usize) -> Coefficients {
        close(self.prob.node(k), &self.gains[k])
    }

    fn inside(&self, k: usize, s: f64) -> Coefficients {
        let grid = &self.prob.grid;
        let t = grid.node(k) + s * grid.step();
        let sys = self.prob.at_time(t).expect("time inside the grid");
        let (w0, wm, w1) = (
            2.0 * (s - 0.5) * (s - 1.0),
            -4.0 * s * (s - 1.0),
            2.0 * s * (s - 0.5),
        );
        let u = &(&self.gains[k].scale(w0) + &self.mid_gains[k].scale(wm))
            + &self.gains[k + 1].scale(w1);
        close(sys.view(), &u)
    }
}

/// Gain at the midpoint of interval `k` from the cubic Hermite midpoint value
/// of the previous iterate. Where that value overshoots (P not smooth on the
/// scale of a step, next to a loss of the constraint) the nodal gains are
/// averaged instead.
fn midpoint_gain(
    prob: &RiccatiProblem,
    prev: &[SymMatrix],
    rates: &[GenMatrix],
    gains: &[GenMatrix],
    k: usize,
) -> GenMatrix {
    let grid = &prob.grid;
    let h = grid.step();
    let t = 0.5 * (grid.node(k) + grid.node(k + 1));
    let sys = prob.at_time(t).expect("midpoint inside the grid");
    let p_mid = &(prev[k].as_gen() + prev[k + 1].as_gen()).scale(0.5)
        + &(&rates[k] - &rates[k + 1]).scale(0.125 * h);
    let p_mid = symmetrize(&p_mid).expect("square");
    let node_gap = |j: usize| prob.node(j).gap_matrix(&prev[j]).min_eigenvalue();
    let floor = 0.5 * node_gap(k).min(node_gap(k + 1));
    let view = sys.view();
    if view.gap_matrix(&p_mid).min_eigenvalue() >= floor {
        if let Ok(u) = view.feedback(&p_mid) {
            return u;
        }
    }
    (&gains[k] + &gains[k + 1]).scale(0.5)
}

fn finish(
    prob: &RiccatiProblem,
    samples: Vec<SymMatrix>,
    iterations: usize,
    iterate_history_norms: Vec<f64>,
    max_increases: Vec<f64>,
    tolerances: Tolerances,
) -> RiccatiSolution {
    let grid = prob.grid;
    let p = MatrixPath::new(grid, samples, Interpolation::Linear).expect("node count");
    let gain = MatrixPath::new(
        grid,
        (0..grid.n_nodes())
            .map(|k| prob.node(k).feedback(p.at(k)).expect("gap checked"))
            .collect(),
        Interpolation::Linear,
    )
    .expect("node count");
    let gap = MatrixPath::new(
        grid,
        (0..grid.n_nodes())
            .map(|k| prob.node(k).gap_matrix(p.at(k)).min_eigenvalue())
            .collect(),
        Interpolation::Linear,
    )
    .expect("node count");
    let sup_residual = residual(&p, prob).expect("gap checked");
    RiccatiSolution {
        p,
        gain,
        gap,
        iterations,
        sup_residual,
        iterate_history_norms,
        max_increases,
        tolerances,
    }
}

impl RiccatiSolution {
    /// `max_t |P(t)|`.
    pub fn max_norm(&self) -> f64 {
        self.p
            .samples()
            .iter()
            .map(SymMatrix::max_abs)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(n: usize, r: f64) -> RiccatiProblem {
        let g = TimeGrid::new(1.0, n).unwrap();
        let s = GenMatrix::scalar;
        RiccatiProblem::constant(
            g,
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

    fn trivial_problem(n: usize, dim: usize) -> RiccatiProblem {
        let g = TimeGrid::new(1.0, n).unwrap();
        let z = GenMatrix::zeros(dim, dim);
        RiccatiProblem::constant(
            g,
            z.clone(),
            z.clone(),
            z,
            GenMatrix::identity(dim),
            SymMatrix::identity(dim),
            SymMatrix::zeros(dim),
            SymMatrix::identity(dim),
        )
        .unwrap()
    }

    /// Root of `ln P - r/P = t - (1 + r)` on `P > -r` by bisection.
    fn scalar_oracle(r: f64, t: f64) -> f64 {
        let f = |p: f64| p.ln() - r / p - (t - 1.0 - r);
        let (mut lo, mut hi) = (-r + 1e-15, 10.0);
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

    #[test]
    fn feedback_examples() {
        let prob = trivial_problem(10, 2);
        let p = SymMatrix::from_upper(2, |i, j| if i == j { 2.0 } else { 0.3 });
        assert_eq!(feedback(&p, 0.4, &prob).unwrap(), GenMatrix::zeros(2, 2));

        let scalar = scalar_problem(10, -0.1);
        let psi = feedback(&SymMatrix::scalar(1.0), 1.0, &scalar).unwrap();
        assert!((psi.get(0, 0) + 1.0 / 0.9).abs() < 1e-14);

        let psi0 = feedback(&SymMatrix::scalar(0.0), 0.2, &scalar_problem(10, 0.5)).unwrap();
        assert_eq!(psi0.get(0, 0), 0.0);
    }

    #[test]
    fn feedback_reports_constraint_violation() {
        let scalar = scalar_problem(10, -0.1);
        let err = feedback(&SymMatrix::scalar(0.05), 0.0, &scalar).unwrap_err();
        assert!(matches!(
            err,
            ProblemError::Linalg(LinalgError::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            feedback(&SymMatrix::scalar(1.0), 1.5, &scalar),
            Err(ProblemError::Path(PathError::OutOfDomain { .. }))
        ));
    }

    #[test]
    fn phi_form_reductions() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let a = GenMatrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.1]]).unwrap();
        let c = GenMatrix::from_rows(&[vec![0.0, 1.0], vec![0.3, -0.4]]).unwrap();
        let prob = RiccatiProblem::constant(
            g,
            a.clone(),
            GenMatrix::identity(2),
            c.clone(),
            GenMatrix::identity(2),
            SymMatrix::identity(2),
            SymMatrix::zeros(2),
            SymMatrix::identity(2),
        )
        .unwrap();
        let u = GenMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(
            phi_form(&SymMatrix::zeros(2), &u, 0.5, &prob).unwrap(),
            SymMatrix::zeros(2)
        );

        let p = SymMatrix::from_upper(2, |i, j| 1.0 + (i + 2 * j) as f64);
        let got = phi_form(&p, &GenMatrix::zeros(2, 2), 0.5, &prob).unwrap();
        let pg = p.as_gen();
        let want =
            &(&a.transpose().matmul(pg) + &pg.matmul(&a)) + &c.transpose().matmul(pg).matmul(&c);
        assert!((got.as_gen() - &want).max_abs() < 1e-13);
    }

    #[test]
    fn trivial_problem_converges_in_two_iterations() {
        let prob = trivial_problem(50, 2);
        let sol = quasilinearize(&prob, &SolverOptions::default()).unwrap();
        assert_eq!(sol.iterations, 2);
        assert!(sol.p.samples().iter().all(|p| *p == SymMatrix::identity(2)));
        assert!(sol.gap.samples().iter().all(|&g| (g - 2.0).abs() < 1e-14));
        assert!(sol.sup_residual <= 1e-8);
        assert_eq!(residual(&sol.p, &prob).unwrap(), sol.sup_residual);
    }

    #[test]
    fn scalar_indefinite_problem_matches_oracle() {
        let prob = scalar_problem(1000, -0.1);
        let sol = quasilinearize(&prob, &SolverOptions::default()).unwrap();
        let want = scalar_oracle(-0.1, 0.0);
        assert!((want - 0.2870).abs() < 1e-3, "oracle {want}");
        assert!((sol.p.first().get(0, 0) - want).abs() < 2e-3);
        assert!(sol.gap.min_value() > 0.0);
        assert_eq!(*sol.p.last(), SymMatrix::scalar(1.0));
        // interior nodes against the oracle
        for k in [250, 500, 750] {
            let t = prob.grid().node(k);
            assert!((sol.p.at(k).get(0, 0) - scalar_oracle(-0.1, t)).abs() < 1e-4);
        }
        assert!(sol.sup_residual <= 1e-3 * sol.max_norm());
    }

    #[test]
    fn perturbed_solution_has_larger_residual() {
        let prob = scalar_problem(1000, -0.1);
        let sol = quasilinearize(&prob, &SolverOptions::default()).unwrap();
        let bumped = sol.p.map(|p| p.shift(0.01));
        let r = residual(&bumped, &prob).unwrap();
        assert!(r > 10.0 * sol.sup_residual, "{r} vs {}", sol.sup_residual);
    }

    #[test]
    fn constraint_loss_time() {
        let prob = scalar_problem(1000, -0.2);
        let err = quasilinearize(&prob, &SolverOptions::default()).unwrap_err();
        assert_eq!(err.kind, FailureKind::ConstraintLoss, "{err}");
        let want = (0.2f64).ln() + 2.0 - 0.2;
        assert!((want - 0.191).abs() < 1e-3);
        let t = err.at_time.unwrap();
        assert!((t - want).abs() < 5e-3, "reported {t}, expected {want}");
    }

    #[test]
    fn zero_weights_fail() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let prob = RiccatiProblem::constant(
            g,
            GenMatrix::scalar(0.3),
            GenMatrix::scalar(1.0),
            GenMatrix::scalar(0.2),
            GenMatrix::scalar(1.0),
            SymMatrix::scalar(0.0),
            SymMatrix::scalar(0.0),
            SymMatrix::scalar(0.0),
        )
        .unwrap();
        let err = quasilinearize(&prob, &SolverOptions::default()).unwrap_err();
        assert_eq!(err.kind, FailureKind::ConstraintLoss);
    }

    #[test]
    fn max_iterations_is_reported() {
        let prob = scalar_problem(200, -0.1);
        let opts = SolverOptions {
            max_iter: 2,
            ..SolverOptions::default()
        };
        let err = quasilinearize(&prob, &opts).unwrap_err();
        assert_eq!(err.kind, FailureKind::MaxIterations);
        assert_eq!(err.at_iteration, 2);
    }

    #[test]
    fn unbounded_floor_is_enforced() {
        // Q strongly negative drives P far below zero
        let g = TimeGrid::new(1.0, 100).unwrap();
        let prob = RiccatiProblem::constant(
            g,
            GenMatrix::scalar(0.0),
            GenMatrix::scalar(0.0),
            GenMatrix::scalar(0.0),
            GenMatrix::scalar(0.0),
            SymMatrix::scalar(1.0),
            SymMatrix::scalar(-5.0),
            SymMatrix::scalar(1.0),
        )
        .unwrap();
        let opts = SolverOptions {
            unbounded_floor: Some(1.0),
            ..SolverOptions::default()
        };
        let err = quasilinearize(&prob, &opts).unwrap_err();
        assert_eq!(err.kind, FailureKind::UnboundedBelow);
        // without the tight floor this is a well-posed problem: P(t) = 1 - 5(t - 1)... = 1 + 5(1 - t)·(-1)
        let sol = quasilinearize(&prob, &SolverOptions::default()).unwrap();
        assert!((sol.p.first().get(0, 0) - (1.0 - 5.0)).abs() < 1e-12);
    }

    #[test]
    fn normalize_identity_d_is_noop() {
        let prob = trivial_problem(20, 2);
        assert_eq!(normalize_d(&prob).unwrap(), prob);
    }

    #[test]
    fn normalize_scalar_d() {
        let g = TimeGrid::new(1.0, 400).unwrap();
        let s = GenMatrix::scalar;
        let prob = RiccatiProblem::constant(
            g,
            s(0.2),
            s(1.0),
            s(0.3),
            s(2.0),
            SymMatrix::scalar(0.5),
            SymMatrix::scalar(0.1),
            SymMatrix::scalar(1.0),
        )
        .unwrap();
        let norm = normalize_d(&prob).unwrap();
        assert_eq!(norm.r().first().get(0, 0), 0.125);
        assert_eq!(norm.b().first().get(0, 0), 0.5);
        assert_eq!(norm.d().first().get(0, 0), 1.0);
        let p1 = quasilinearize(&prob, &SolverOptions::default()).unwrap();
        let p2 = quasilinearize(&norm, &SolverOptions::default()).unwrap();
        let tol = p1.tolerances.conv_tol;
        for (x, y) in p1.p.samples().iter().zip(p2.p.samples()) {
            assert!((x.get(0, 0) - y.get(0, 0)).abs() <= tol);
        }
    }

    #[test]
    fn normalize_rejects_singular_d() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let d = MatrixPath::from_fn(g, |t| GenMatrix::scalar(t - 0.5));
        let prob = RiccatiProblem::new(
            MatrixPath::from_constant(GenMatrix::scalar(0.0), g),
            MatrixPath::from_constant(GenMatrix::scalar(1.0), g),
            MatrixPath::from_constant(GenMatrix::scalar(0.0), g),
            d,
            MatrixPath::from_constant(SymMatrix::scalar(1.0), g),
            MatrixPath::from_constant(SymMatrix::scalar(0.0), g),
            SymMatrix::scalar(1.0),
        )
        .unwrap();
        assert_eq!(
            normalize_d(&prob).unwrap_err(),
            ProblemError::SingularD { at_time: 0.5 }
        );
    }

    #[test]
    fn problem_dimension_checks() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let err = RiccatiProblem::constant(
            g,
            GenMatrix::zeros(2, 2),
            GenMatrix::zeros(2, 2),
            GenMatrix::zeros(2, 2),
            GenMatrix::identity(3),
            SymMatrix::identity(2),
            SymMatrix::zeros(2),
            SymMatrix::identity(2),
        )
        .unwrap_err();
        assert!(matches!(err, ProblemError::Dimension(_)));
    }
}
