//! Monte Carlo check of a Riccati solution through its control problem.
//!
//! The state follows `dx = (Ax + Bu) dt + (Cx + Du) dw` with a scalar
//! Wiener process and linear feedback `u = K(t) x`. Paths are simulated by
//! Euler–Maruyama and the cost
//! `E[∫ (uᵀRu + xᵀQx) dt + x(T)ᵀG x(T)]` is estimated with a left-endpoint
//! rule. For the optimal gain the estimate should match `x₀ᵀP(0)x₀`.
//!
//! Reproducibility: path `p` draws from `ChaCha8Rng::seed_from_u64(seed)`
//! switched to stream `p`, and standard normals come from the Box–Muller
//! transform, both outputs used in order (`u₁` is mapped to `(0, 1]` as
//! `1 - U`). Per-path costs are reduced in index order, so results do not
//! depend on the number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::riccati::{RiccatiProblem, RiccatiSolution};
use crate::symlin::{GenMatrix, SymMatrix};
use crate::timepath::{GenPath, PathError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("n_paths must be at least 1")]
    NoPaths,
    #[error("n_steps_sim = {got} is below the problem grid's {grid} steps")]
    TooFewSteps { got: usize, grid: usize },
    #[error("x0 has length {got}, problem dimension is {dim}")]
    InitialState { got: usize, dim: usize },
    #[error("gain is {rows}x{cols}, expected {dim}x{dim}")]
    GainShape {
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps_sim: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
}

impl SimConfig {
    fn validate(&self, prob: &RiccatiProblem) -> Result<(), SimError> {
        if self.n_paths == 0 {
            return Err(SimError::NoPaths);
        }
        let grid = prob.grid().n_steps();
        if self.n_steps_sim < grid {
            return Err(SimError::TooFewSteps {
                got: self.n_steps_sim,
                grid,
            });
        }
        if self.x0.len() != prob.dim() {
            return Err(SimError::InitialState {
                got: self.x0.len(),
                dim: prob.dim(),
            });
        }
        Ok(())
    }
}

/// Sample mean of the per-path cost and its standard error
/// (sample standard deviation over `√n`; infinite for a single path).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl CostEstimate {
    fn from_costs(costs: &[f64]) -> Self {
        let n = costs.len();
        let mean = costs.iter().sum::<f64>() / n as f64;
        let std_error = if n < 2 {
            f64::INFINITY
        } else {
            let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self {
            mean,
            std_error,
            n_paths: n,
        }
    }
}

/// Standard normals by Box–Muller from one ChaCha8 stream.
struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self { rng, spare: None }
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// Closed-loop coefficients at the left end of each simulation step.
struct Plan {
    dt: f64,
    /// `A + BK`
    drift: Vec<GenMatrix>,
    /// `C + DK`
    diffusion: Vec<GenMatrix>,
    /// `Q + KᵀRK`
    running: Vec<SymMatrix>,
    terminal: SymMatrix,
}

impl Plan {
    fn new(
        prob: &RiccatiProblem,
        gain: &GenPath,
        extra: Option<&GenPath>,
        n_steps: usize,
    ) -> Result<Self, SimError> {
        let dim = prob.dim();
        for k in std::iter::once(gain).chain(extra) {
            let m = k.first();
            if m.rows() != dim || m.cols() != dim {
                return Err(SimError::GainShape {
                    rows: m.rows(),
                    cols: m.cols(),
                    dim,
                });
            }
        }
        let horizon = prob.grid().horizon();
        let dt = horizon / n_steps as f64;
        let mut drift = Vec::with_capacity(n_steps);
        let mut diffusion = Vec::with_capacity(n_steps);
        let mut running = Vec::with_capacity(n_steps);
        for j in 0..n_steps {
            let t = j as f64 * dt;
            let sys = prob.at_time(t)?;
            let mut k = gain.eval(t)?;
            if let Some(p) = extra {
                k = &k + &p.eval(t)?;
            }
            drift.push(&sys.a + &sys.b.matmul(&k));
            diffusion.push(&sys.c + &sys.d.matmul(&k));
            running.push(&sys.q + &sys.r.congruence(&k));
        }
        Ok(Self {
            dt,
            drift,
            diffusion,
            running,
            terminal: prob.g().clone(),
        })
    }

    fn n_steps(&self) -> usize {
        self.drift.len()
    }
}

fn quad(m: &SymMatrix, x: &[f64]) -> f64 {
    let d = x.len();
    let a = m.as_gen().as_slice();
    let mut acc = 0.0;
    for i in 0..d {
        let row: f64 = a[i * d..(i + 1) * d]
            .iter()
            .zip(x)
            .map(|(m, x)| m * x)
            .sum();
        acc += x[i] * row;
    }
    acc
}

fn mat_vec(m: &GenMatrix, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (o, row) in out.iter_mut().zip(m.as_slice().chunks_exact(d)) {
        *o = row.iter().zip(x).map(|(m, x)| m * x).sum();
    }
}

/// State and scratch space for one path.
struct Walker {
    x: Vec<f64>,
    drift: Vec<f64>,
    noise: Vec<f64>,
    cost: f64,
}

impl Walker {
    fn new(x0: &[f64]) -> Self {
        Self {
            x: x0.to_vec(),
            drift: vec![0.0; x0.len()],
            noise: vec![0.0; x0.len()],
            cost: 0.0,
        }
    }

    /// One Euler–Maruyama step with the left-endpoint running cost.
    fn step(&mut self, plan: &Plan, j: usize, dw: f64) {
        self.cost += quad(&plan.running[j], &self.x) * plan.dt;
        mat_vec(&plan.drift[j], &self.x, &mut self.drift);
        mat_vec(&plan.diffusion[j], &self.x, &mut self.noise);
        for ((xi, fi), gi) in self.x.iter_mut().zip(&self.drift).zip(&self.noise) {
            *xi += fi * plan.dt + gi * dw;
        }
    }

    fn total(&self, plan: &Plan) -> f64 {
        self.cost + quad(&plan.terminal, &self.x)
    }
}

fn path_cost(plan: &Plan, x0: &[f64], seed: u64, path: usize) -> f64 {
    let mut normals = NormalStream::new(seed, path as u64);
    let sqrt_dt = plan.dt.sqrt();
    let mut w = Walker::new(x0);
    for j in 0..plan.n_steps() {
        w.step(plan, j, sqrt_dt * normals.next());
    }
    w.total(plan)
}

/// Simulates `coarse` (n steps) and `fine` (2n steps) on shared noise: each
/// coarse increment is the sum of the two fine increments it covers.
fn coupled_path_costs(
    coarse: &Plan,
    fine: &Plan,
    x0: &[f64],
    seed: u64,
    path: usize,
) -> (f64, f64) {
    let mut normals = NormalStream::new(seed, path as u64);
    let sqrt_h = fine.dt.sqrt();
    let (mut wc, mut wf) = (Walker::new(x0), Walker::new(x0));
    for j in 0..coarse.n_steps() {
        let dw1 = sqrt_h * normals.next();
        let dw2 = sqrt_h * normals.next();
        wf.step(fine, 2 * j, dw1);
        wf.step(fine, 2 * j + 1, dw2);
        wc.step(coarse, j, dw1 + dw2);
    }
    (wc.total(coarse), wf.total(fine))
}

fn run(plan: &Plan, cfg: &SimConfig) -> Vec<f64> {
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| path_cost(plan, &cfg.x0, cfg.seed, p))
        .collect()
}

/// Estimates the cost of the feedback `u = gain(t) x`.
pub fn simulate_cost(
    prob: &RiccatiProblem,
    gain: &GenPath,
    cfg: &SimConfig,
) -> Result<CostEstimate, SimError> {
    cfg.validate(prob)?;
    let plan = Plan::new(prob, gain, None, cfg.n_steps_sim)?;
    Ok(CostEstimate::from_costs(&run(&plan, cfg)))
}

/// Per-path costs, in path order. Exposed for diagnostics and tests.
pub fn simulate_path_costs(
    prob: &RiccatiProblem,
    gain: &GenPath,
    cfg: &SimConfig,
) -> Result<Vec<f64>, SimError> {
    cfg.validate(prob)?;
    let plan = Plan::new(prob, gain, None, cfg.n_steps_sim)?;
    Ok(run(&plan, cfg))
}

/// Time-step bias allowance `2·|J(Δt) - J(Δt/2)|`, where `Δt` is the
/// configured simulation step. With a weak first-order scheme the bias is
/// `C·Δt + o(Δt)`, and the coupled difference estimates `C·Δt/2`.
pub fn discretization_allowance(
    prob: &RiccatiProblem,
    gain: &GenPath,
    cfg: &SimConfig,
) -> Result<f64, SimError> {
    cfg.validate(prob)?;
    let coarse = Plan::new(prob, gain, None, cfg.n_steps_sim)?;
    let fine = Plan::new(prob, gain, None, 2 * cfg.n_steps_sim)?;
    let diffs: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let (c, f) = coupled_path_costs(&coarse, &fine, &cfg.x0, cfg.seed, p);
            c - f
        })
        .collect();
    Ok(2.0 * (diffs.iter().sum::<f64>() / diffs.len() as f64).abs())
}

/// Comparison of the optimal gain against one perturbed gain.
#[derive(Debug, Clone)]
pub struct PerturbationResult {
    pub estimate: CostEstimate,
    /// Mean of per-path `J(perturbed) - J(optimal)`.
    pub delta_mean: f64,
    pub delta_std_error: f64,
    /// `√(se_opt² + se_pert²)`.
    pub pooled_std_error: f64,
    /// `J(optimal) ≤ J(perturbed) + 3·pooled_std_error`.
    pub not_beaten: bool,
    /// `delta_mean > 3·delta_std_error`: the paired test sees the perturbed
    /// gain as strictly worse.
    pub strictly_worse: bool,
}

#[derive(Debug, Clone)]
pub struct OptimalityReport {
    pub optimal: CostEstimate,
    /// `x₀ᵀP(0)x₀`.
    pub predicted: f64,
    pub allowance: f64,
    /// `|J(optimal) - predicted| ≤ 4·std_error + allowance`.
    pub cost_matches: bool,
    pub perturbations: Vec<PerturbationResult>,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.cost_matches && self.perturbations.iter().all(|p| p.not_beaten)
    }
}

/// Estimates the cost of the solution's gain and of `gain + δK` for each
/// perturbation, all with the same seed so path `p` sees the same noise
/// under every gain.
pub fn verify_optimality(
    prob: &RiccatiProblem,
    sol: &RiccatiSolution,
    cfg: &SimConfig,
    perturbations: &[GenPath],
) -> Result<OptimalityReport, SimError> {
    cfg.validate(prob)?;
    let plan = Plan::new(prob, &sol.gain, None, cfg.n_steps_sim)?;
    let base = run(&plan, cfg);
    let optimal = CostEstimate::from_costs(&base);
    let predicted = quad(sol.p.first(), &cfg.x0);
    let allowance = discretization_allowance(prob, &sol.gain, cfg)?;
    let cost_matches = (optimal.mean - predicted).abs() <= 4.0 * optimal.std_error + allowance;

    let mut results = Vec::with_capacity(perturbations.len());
    for delta in perturbations {
        let pplan = Plan::new(prob, &sol.gain, Some(delta), cfg.n_steps_sim)?;
        let costs = run(&pplan, cfg);
        let estimate = CostEstimate::from_costs(&costs);
        let diffs: Vec<f64> = costs.iter().zip(&base).map(|(p, o)| p - o).collect();
        let paired = CostEstimate::from_costs(&diffs);
        let pooled = optimal.std_error.hypot(estimate.std_error);
        results.push(PerturbationResult {
            estimate,
            delta_mean: paired.mean,
            delta_std_error: paired.std_error,
            pooled_std_error: pooled,
            not_beaten: optimal.mean <= estimate.mean + 3.0 * pooled,
            strictly_worse: paired.mean > 3.0 * paired.std_error,
        });
    }
    Ok(OptimalityReport {
        optimal,
        predicted,
        allowance,
        cost_matches,
        perturbations: results,
    })
}

/// Constant perturbation `δK ≡ m` on the problem's grid.
pub fn constant_perturbation(prob: &RiccatiProblem, m: GenMatrix) -> GenPath {
    crate::timepath::MatrixPath::from_constant(m, *prob.grid())
}
