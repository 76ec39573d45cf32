//! Sufficient conditions for solvability.
//!
//! The scalar certificate: for `α ∈ (0, 1)` let
//!
//! ```text
//! λ_α = λ_min(Aᵀ + A + CᵀC - (1-α)⁻¹ (B + CᵀD)(DᵀD)⁻¹(Bᵀ + DᵀC)),
//! φ̇_α + λ_α φ_α + α λ_min(Q) = 0,   φ_α(T) = α λ_min(G).
//! ```
//!
//! If `D` is invertible, `G > 0`, `φ_α > 0` and `R ≥ -φ_α DᵀD` on `[0, T]`,
//! the Riccati equation has a solution, and `P ≥ α⁻¹ φ_α I` when `D = I`.
//! [`certify_general`] checks the matrix-valued version of the same
//! argument for a caller-supplied `R_α`.

use rayon::prelude::*;
use thiserror::Error;

use crate::linode::solve_scalar_backward;
use crate::riccati::{dtd_is_regular, RiccatiProblem, RiccatiSolution};
use crate::symlin::{solve_definite, symmetrize, GenMatrix, SymMatrix};
use crate::timepath::{Interpolation, MatrixPath, PathError, ScalarPath, SymPath};

/// Truncation of the open interval `(0, 1)` used by [`alpha_scan`].
pub const ALPHA_LO: f64 = 1e-3;
pub const ALPHA_HI: f64 = 1.0 - 1e-3;
/// Width at which the golden-section refinement stops.
pub const ALPHA_REFINE_TOL: f64 = 1e-6;
/// Tolerance of [`lower_bound_check`].
pub const LOWER_BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("D is singular at t = {at_time}")]
    SingularD { at_time: f64 },
    #[error("alpha = {0} is outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("problem is not D-normalized (D != I at t = {at_time})")]
    NotNormalized { at_time: f64 },
    #[error("scaling factor must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("alpha scan needs at least 8 coarse points, got {0}")]
    CoarseGridTooSmall(usize),
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    PhiNotPositive,
    MarginNegative,
    DNotInvertible,
    GNotPositive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Certified => "Certified",
            Self::PhiNotPositive => "PhiNotPositive",
            Self::MarginNegative => "MarginNegative",
            Self::DNotInvertible => "DNotInvertible",
            Self::GNotPositive => "GNotPositive",
        }
    }
}

/// Outcome of the scalar certificate for one `α`.
///
/// `margin` is `min_t λ_min(R + φ_α DᵀD)`; it is `-∞` when the verdict was
/// reached before `φ_α` could be computed.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub alpha: f64,
    pub lambda_path: Option<ScalarPath>,
    pub phi_path: Option<ScalarPath>,
    pub margin: f64,
    pub verdict: Verdict,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

fn check_alpha(alpha: f64) -> Result<(), CertifyError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CertifyError::AlphaOutOfRange(alpha))
    }
}

/// Per-node pieces of the `λ_α` matrix: `Aᵀ + A + CᵀC` and
/// `(B + CᵀD)(DᵀD)⁻¹(Bᵀ + DᵀC)`.
struct LambdaParts {
    base: Vec<SymMatrix>,
    cross: Vec<SymMatrix>,
}

impl LambdaParts {
    fn new(prob: &RiccatiProblem) -> Result<Self, CertifyError> {
        let grid = prob.grid();
        let mut base = Vec::with_capacity(grid.n_nodes());
        let mut cross = Vec::with_capacity(grid.n_nodes());
        for k in 0..grid.n_nodes() {
            let (a, b, c, d) = (
                prob.a().at(k),
                prob.b().at(k),
                prob.c().at(k),
                prob.d().at(k),
            );
            let dtd = symmetrize(&d.tr_matmul(d)).expect("square");
            if !dtd_is_regular(&dtd) {
                return Err(CertifyError::SingularD {
                    at_time: grid.node(k),
                });
            }
            // S = Bᵀ + DᵀC, cross = Sᵀ (DᵀD)⁻¹ S
            let s = &b.transpose() + &d.tr_matmul(c);
            let x = solve_definite(&dtd, &s).map_err(|_| CertifyError::SingularD {
                at_time: grid.node(k),
            })?;
            cross.push(symmetrize(&s.tr_matmul(&x)).expect("square"));
            base.push(symmetrize(&(&(a + &a.transpose()) + &c.tr_matmul(c))).expect("square"));
        }
        Ok(Self { base, cross })
    }

    fn lambda(&self, prob: &RiccatiProblem, alpha: f64) -> ScalarPath {
        let w = 1.0 / (1.0 - alpha);
        let samples = self
            .base
            .iter()
            .zip(&self.cross)
            .map(|(b, c)| (b - &c.scale(w)).min_eigenvalue())
            .collect();
        MatrixPath::new(*prob.grid(), samples, Interpolation::Linear).expect("node count")
    }
}

/// `λ_α(t)` on the problem's grid.
pub fn lambda_alpha(prob: &RiccatiProblem, alpha: f64) -> Result<ScalarPath, CertifyError> {
    check_alpha(alpha)?;
    Ok(LambdaParts::new(prob)?.lambda(prob, alpha))
}

fn phi_from_lambda(prob: &RiccatiProblem, lambda: &ScalarPath, alpha: f64) -> ScalarPath {
    let forcing = prob.q().map(|q| alpha * q.min_eigenvalue());
    solve_scalar_backward(lambda, &forcing, alpha * prob.g().min_eigenvalue()).expect("same grid")
}

/// `φ_α(t)`, the backward solution of the certificate ODE.
pub fn phi_alpha(prob: &RiccatiProblem, alpha: f64) -> Result<ScalarPath, CertifyError> {
    let lambda = lambda_alpha(prob, alpha)?;
    Ok(phi_from_lambda(prob, &lambda, alpha))
}

/// `min_t λ_min(R + φ DᵀD)`.
fn margin_of(prob: &RiccatiProblem, phi: &ScalarPath) -> f64 {
    (0..prob.grid().n_nodes())
        .map(|k| {
            let d = prob.d().at(k);
            let dtd = symmetrize(&d.tr_matmul(d)).expect("square");
            (prob.r().at(k) + &dtd.scale(*phi.at(k))).min_eigenvalue()
        })
        .fold(f64::INFINITY, f64::min)
}

fn certify_with(prob: &RiccatiProblem, parts: &LambdaParts, alpha: f64) -> Certificate {
    let lambda = parts.lambda(prob, alpha);
    let phi = phi_from_lambda(prob, &lambda, alpha);
    let margin = margin_of(prob, &phi);
    let margin = if margin.is_nan() {
        f64::NEG_INFINITY
    } else {
        margin
    };
    let verdict = if !phi.samples().iter().all(|v| v.is_finite() && *v > 0.0) {
        Verdict::PhiNotPositive
    } else if margin < 0.0 {
        Verdict::MarginNegative
    } else {
        Verdict::Certified
    };
    Certificate {
        alpha,
        lambda_path: Some(lambda),
        phi_path: Some(phi),
        margin,
        verdict,
    }
}

/// Screens the parts of the certificate that do not depend on `α`.
fn precheck(prob: &RiccatiProblem, alpha: f64) -> Result<LambdaParts, Certificate> {
    let rejected = |verdict| Certificate {
        alpha,
        lambda_path: None,
        phi_path: None,
        margin: f64::NEG_INFINITY,
        verdict,
    };
    if prob.g().min_eigenvalue() <= 0.0 {
        return Err(rejected(Verdict::GNotPositive));
    }
    LambdaParts::new(prob).map_err(|_| rejected(Verdict::DNotInvertible))
}

/// Evaluates the scalar certificate at one `α`. Every failure mode is a
/// verdict; only an `α` outside `(0, 1)` is an error.
pub fn certify_scalar(prob: &RiccatiProblem, alpha: f64) -> Result<Certificate, CertifyError> {
    check_alpha(alpha)?;
    Ok(match precheck(prob, alpha) {
        Ok(parts) => certify_with(prob, &parts, alpha),
        Err(cert) => cert,
    })
}

fn score(cert: &Certificate) -> f64 {
    match cert.verdict {
        Verdict::Certified | Verdict::MarginNegative => cert.margin,
        _ => f64::NEG_INFINITY,
    }
}

/// Searches `α ∈ [ALPHA_LO, ALPHA_HI]` for the largest certificate margin:
/// a uniform coarse grid of `n_coarse` points, then golden-section
/// refinement around the best coarse point. The margin is not known to be
/// unimodal in `α`; the coarse pass keeps the refinement away from local
/// traps it can see.
pub fn alpha_scan(
    prob: &RiccatiProblem,
    n_coarse: usize,
) -> Result<(f64, Certificate), CertifyError> {
    if n_coarse < 8 {
        return Err(CertifyError::CoarseGridTooSmall(n_coarse));
    }
    let parts = match precheck(prob, 0.5) {
        Ok(p) => p,
        Err(cert) => return Ok((cert.alpha, cert)),
    };
    let step = (ALPHA_HI - ALPHA_LO) / (n_coarse - 1) as f64;
    let alphas: Vec<f64> = (0..n_coarse).map(|i| ALPHA_LO + i as f64 * step).collect();
    let coarse: Vec<Certificate> = alphas
        .par_iter()
        .map(|&a| certify_with(prob, &parts, a))
        .collect();

    let best_i = (0..n_coarse).fold(0, |b, i| {
        if score(&coarse[i]) > score(&coarse[b]) {
            i
        } else {
            b
        }
    });
    if score(&coarse[best_i]) == f64::NEG_INFINITY {
        let cert = coarse.into_iter().nth(best_i).expect("non-empty");
        return Ok((cert.alpha, cert));
    }

    let mut lo = alphas[best_i.saturating_sub(1)];
    let mut hi = alphas[(best_i + 1).min(n_coarse - 1)];
    let f = |a: f64| score(&certify_with(prob, &parts, a));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > ALPHA_REFINE_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let refined = certify_with(prob, &parts, 0.5 * (lo + hi));
    let best = if score(&refined) >= score(&coarse[best_i]) {
        refined
    } else {
        coarse.into_iter().nth(best_i).expect("non-empty")
    };
    Ok((best.alpha, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneralVerdict {
    Certified,
    /// `R_α > 0` fails somewhere.
    NotPositive,
    /// `R_α(T) ≤ αG` fails.
    TerminalExceeded,
    /// The differential inequality on `R_α` fails somewhere.
    DissipationViolated,
    /// `R + R_α ≥ 0` fails somewhere.
    NotDominated,
}

/// Outcome of [`certify_general`]. Margins are the exact minimal
/// eigenvalues of the respective conditions; the verdict allows `slack`.
#[derive(Debug, Clone)]
pub struct GeneralCertificate {
    pub alpha: f64,
    pub positivity_margin: f64,
    pub terminal_margin: f64,
    pub dissipation_margin: f64,
    pub domination_margin: f64,
    pub slack: f64,
    pub verdict: GeneralVerdict,
}

/// Checks a matrix certificate `R_α` (with its derivative supplied by the
/// caller) on a problem with `D = I`:
///
/// ```text
/// R_α > 0,  R_α(T) ≤ αG,  R + R_α ≥ 0,
/// Ṙ_α + AᵀR_α + R_αA + CᵀR_αC + αQ - (1-α)⁻¹(R_αB + CᵀR_α)R_α⁻¹(R_αB + CᵀR_α)ᵀ ≥ 0.
/// ```
pub fn certify_general(
    prob: &RiccatiProblem,
    r_alpha: &SymPath,
    r_alpha_dot: &SymPath,
    alpha: f64,
) -> Result<GeneralCertificate, CertifyError> {
    check_alpha(alpha)?;
    let grid = *prob.grid();
    let dim = prob.dim();
    if *r_alpha.grid() != grid || *r_alpha_dot.grid() != grid {
        return Err(CertifyError::DimensionMismatch(
            "certificate paths on a different grid".into(),
        ));
    }
    if r_alpha.first().dim() != dim || r_alpha_dot.first().dim() != dim {
        return Err(CertifyError::DimensionMismatch(format!(
            "certificate must be {dim}x{dim}"
        )));
    }
    let identity = GenMatrix::identity(dim);
    if let Some(k) = (0..grid.n_nodes()).find(|&k| (prob.d().at(k) - &identity).max_abs() > 1e-12) {
        return Err(CertifyError::NotNormalized {
            at_time: grid.node(k),
        });
    }

    let norm = |xs: &[GenMatrix]| xs.iter().map(GenMatrix::max_abs).fold(0.0, f64::max);
    let snorm = |xs: &[SymMatrix]| xs.iter().map(SymMatrix::max_abs).fold(0.0, f64::max);
    let data_norm = [
        norm(prob.a().samples()),
        norm(prob.b().samples()),
        norm(prob.c().samples()),
        snorm(prob.q().samples()),
        snorm(prob.r().samples()),
        snorm(r_alpha.samples()),
        snorm(r_alpha_dot.samples()),
        prob.g().max_abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let slack = 1e-9 * (1.0 + data_norm);

    let mut positivity = f64::INFINITY;
    let mut dissipation = f64::INFINITY;
    let mut domination = f64::INFINITY;
    for k in 0..grid.n_nodes() {
        let ra = r_alpha.at(k);
        positivity = positivity.min(ra.min_eigenvalue());
        domination = domination.min((prob.r().at(k) + ra).min_eigenvalue());

        let (a, b, c, q) = (
            prob.a().at(k),
            prob.b().at(k),
            prob.c().at(k),
            prob.q().at(k),
        );
        let rg = ra.as_gen();
        let atr = a.tr_matmul(rg);
        let linear = &(&(&(r_alpha_dot.at(k).as_gen() + &atr) + &atr.transpose())
            + ra.congruence(c).as_gen())
            + q.scale(alpha).as_gen();
        // M = R_αB + CᵀR_α; quadratic term M R_α⁻¹ Mᵀ
        let m = &rg.matmul(b) + &c.tr_matmul(rg);
        let lhs = match solve_definite(ra, &m.transpose()) {
            Ok(x) => {
                let quad = m.matmul(&x).scale(1.0 / (1.0 - alpha));
                symmetrize(&(&linear - &quad))
                    .expect("square")
                    .min_eigenvalue()
            }
            Err(_) => f64::NEG_INFINITY,
        };
        dissipation = dissipation.min(lhs);
    }
    let terminal = (&prob.g().scale(alpha) - r_alpha.last()).min_eigenvalue();

    let verdict = if !(positivity > 0.0) {
        GeneralVerdict::NotPositive
    } else if terminal < -slack {
        GeneralVerdict::TerminalExceeded
    } else if dissipation < -slack {
        GeneralVerdict::DissipationViolated
    } else if domination < -slack {
        GeneralVerdict::NotDominated
    } else {
        GeneralVerdict::Certified
    };
    Ok(GeneralCertificate {
        alpha,
        positivity_margin: positivity,
        terminal_margin: terminal,
        dissipation_margin: dissipation,
        domination_margin: domination,
        slack,
        verdict,
    })
}

/// `R_α = φ_α I` together with its derivative `-(λ_α φ_α + α λ_min(Q)) I`,
/// the certificate the scalar test is a special case of.
pub fn scalar_certificate_paths(
    prob: &RiccatiProblem,
    cert: &Certificate,
) -> Option<(SymPath, SymPath)> {
    let (lambda, phi) = (cert.lambda_path.as_ref()?, cert.phi_path.as_ref()?);
    let dim = prob.dim();
    let r_alpha = phi.map(|&p| SymMatrix::identity(dim).scale(p));
    let samples = (0..prob.grid().n_nodes())
        .map(|k| {
            let rate = -(lambda.at(k) * phi.at(k) + cert.alpha * prob.q().at(k).min_eigenvalue());
            SymMatrix::identity(dim).scale(rate)
        })
        .collect();
    let r_dot = MatrixPath::new(*prob.grid(), samples, Interpolation::Linear).ok()?;
    Some((r_alpha, r_dot))
}

/// `min_t λ_min(P(t) - α⁻¹ R_α(t))`.
pub fn lower_bound_margin(sol: &RiccatiSolution, r_alpha: &SymPath, alpha: f64) -> f64 {
    sol.p
        .samples()
        .iter()
        .zip(r_alpha.samples())
        .map(|(p, ra)| (p - &ra.scale(1.0 / alpha)).min_eigenvalue())
        .fold(f64::INFINITY, f64::min)
}

/// Whether `P ≥ α⁻¹ R_α` holds at every node, up to [`LOWER_BOUND_TOL`].
pub fn lower_bound_check(sol: &RiccatiSolution, r_alpha: &SymPath, alpha: f64) -> bool {
    lower_bound_margin(sol, r_alpha, alpha) >= -LOWER_BOUND_TOL
}

/// The cost weights `(R, Q, G)` of a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub r: SymPath,
    pub q: SymPath,
    pub g: SymMatrix,
}

impl CostWeights {
    pub fn of(prob: &RiccatiProblem) -> Self {
        Self {
            r: prob.r().clone(),
            q: prob.q().clone(),
            g: prob.g().clone(),
        }
    }

    pub fn zero(prob: &RiccatiProblem) -> Self {
        let dim = prob.dim();
        Self {
            r: MatrixPath::from_constant(SymMatrix::zeros(dim), *prob.grid()),
            q: MatrixPath::from_constant(SymMatrix::zeros(dim), *prob.grid()),
            g: SymMatrix::zeros(dim),
        }
    }

    /// `prob` with its weights replaced by these.
    pub fn apply(&self, prob: &RiccatiProblem) -> Result<RiccatiProblem, CertifyError> {
        prob.with_weights(self.r.clone(), self.q.clone(), self.g.clone())
            .map_err(|e| CertifyError::DimensionMismatch(e.to_string()))
    }
}

/// `(λR, λQ, λG)` for `λ > 0`.
pub fn scale_weights(w: &CostWeights, lam: f64) -> Result<CostWeights, CertifyError> {
    if !(lam > 0.0) {
        return Err(CertifyError::NonPositiveLambda(lam));
    }
    Ok(CostWeights {
        r: w.r.map(|m| m.scale(lam)),
        q: w.q.map(|m| m.scale(lam)),
        g: w.g.scale(lam),
    })
}

fn add_paths(x: &SymPath, y: &SymPath) -> Result<SymPath, CertifyError> {
    if x.grid() != y.grid() || x.first().dim() != y.first().dim() {
        return Err(CertifyError::DimensionMismatch(
            "weight paths differ in grid or size".into(),
        ));
    }
    let samples = x
        .samples()
        .iter()
        .zip(y.samples())
        .map(|(a, b)| a + b)
        .collect();
    Ok(MatrixPath::new(*x.grid(), samples, x.interpolation())?)
}

/// `(R₁ + R₂, Q₁ + Q₂, G₁ + G₂)`.
pub fn add_weights(w1: &CostWeights, w2: &CostWeights) -> Result<CostWeights, CertifyError> {
    if w1.g.dim() != w2.g.dim() {
        return Err(CertifyError::DimensionMismatch(
            "terminal weights differ in size".into(),
        ));
    }
    Ok(CostWeights {
        r: add_paths(&w1.r, &w2.r)?,
        q: add_paths(&w1.q, &w2.q)?,
        g: &w1.g + &w2.g,
    })
}
