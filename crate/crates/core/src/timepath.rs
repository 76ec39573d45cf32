//! Time-varying matrices sampled on a shared uniform grid over `[0, T]`.

use thiserror::Error;

use crate::symlin::{GenMatrix, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("time {t} lies outside [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },
    #[error("sample {index} has a different shape from sample 0")]
    ShapeMismatch { index: usize },
}

/// How a path is evaluated between two grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Linear,
    /// Value of the nearest node at or to the left of `t`.
    ConstantLeft,
}

/// Uniform grid `t_k = k·T/n` for `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

/// Where a time falls on a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    Node(usize),
    /// Strictly between node `k` and `k + 1`, at fraction `w ∈ (0, 1)`.
    Between(usize, f64),
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, PathError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(PathError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_steps < 2 {
            return Err(PathError::InvalidGrid(format!(
                "need at least 2 steps, got {n_steps}"
            )));
        }
        Ok(Self { horizon, n_steps })
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Node time `t_k`; `t_n` is exactly the horizon.
    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.node(k))
    }

    pub fn locate(&self, t: f64) -> Result<Position, PathError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(PathError::OutOfDomain {
                t,
                horizon: self.horizon,
            });
        }
        let n = self.n_steps;
        if t == self.horizon {
            return Ok(Position::Node(n));
        }
        let mut k = ((t / self.horizon) * n as f64).floor() as usize;
        k = k.min(n - 1);
        while k > 0 && self.node(k) > t {
            k -= 1;
        }
        while k + 1 < n && self.node(k + 1) <= t {
            k += 1;
        }
        let lo = self.node(k);
        if lo == t {
            return Ok(Position::Node(k));
        }
        let hi = self.node(k + 1);
        if hi == t {
            return Ok(Position::Node(k + 1));
        }
        Ok(Position::Between(k, (t - lo) / (hi - lo)))
    }
}

/// Values a [`MatrixPath`] can carry.
pub trait PathValue: Clone + Send + Sync {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self;
    fn same_shape(&self, other: &Self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn scale(&self, s: f64) -> Self;
}

impl PathValue for f64 {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        a + w * (b - a)
    }
    fn same_shape(&self, _: &Self) -> bool {
        true
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
}

impl PathValue for GenMatrix {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        GenMatrix::from_fn(a.rows(), a.cols(), |i, j| {
            let (x, y) = (a.get(i, j), b.get(i, j));
            x + w * (y - x)
        })
    }
    fn same_shape(&self, other: &Self) -> bool {
        self.rows() == other.rows() && self.cols() == other.cols()
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn scale(&self, s: f64) -> Self {
        GenMatrix::scale(self, s)
    }
}

impl PathValue for SymMatrix {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        SymMatrix::from_upper(a.dim(), |i, j| {
            let (x, y) = (a.get(i, j), b.get(i, j));
            x + w * (y - x)
        })
    }
    fn same_shape(&self, other: &Self) -> bool {
        self.dim() == other.dim()
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn scale(&self, s: f64) -> Self {
        SymMatrix::scale(self, s)
    }
}

/// A function of time stored as one sample per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath<V> {
    grid: TimeGrid,
    samples: Vec<V>,
    interpolation: Interpolation,
}

pub type SymPath = MatrixPath<SymMatrix>;
pub type GenPath = MatrixPath<GenMatrix>;
pub type ScalarPath = MatrixPath<f64>;

impl<V: PathValue> MatrixPath<V> {
    pub fn new(
        grid: TimeGrid,
        samples: Vec<V>,
        interpolation: Interpolation,
    ) -> Result<Self, PathError> {
        if samples.len() != grid.n_nodes() {
            return Err(PathError::SampleCount {
                expected: grid.n_nodes(),
                got: samples.len(),
            });
        }
        if let Some(index) = samples.iter().position(|s| !s.same_shape(&samples[0])) {
            return Err(PathError::ShapeMismatch { index });
        }
        Ok(Self {
            grid,
            samples,
            interpolation,
        })
    }

    pub fn from_constant(value: V, grid: TimeGrid) -> Self {
        Self {
            grid,
            samples: vec![value; grid.n_nodes()],
            interpolation: Interpolation::Linear,
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: TimeGrid, f: impl FnMut(f64) -> V) -> Self {
        Self {
            grid,
            samples: grid.nodes().map(f).collect(),
            interpolation: Interpolation::Linear,
        }
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    #[inline]
    pub fn samples(&self) -> &[V] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<V> {
        self.samples
    }

    /// Sample at node `k`.
    #[inline]
    pub fn at(&self, k: usize) -> &V {
        &self.samples[k]
    }

    pub fn first(&self) -> &V {
        &self.samples[0]
    }

    pub fn last(&self) -> &V {
        &self.samples[self.samples.len() - 1]
    }

    pub fn eval(&self, t: f64) -> Result<V, PathError> {
        Ok(match self.grid.locate(t)? {
            Position::Node(k) => self.samples[k].clone(),
            Position::Between(k, w) => self.between(k, w),
        })
    }

    /// Value halfway between node `k` and node `k + 1`.
    pub fn midpoint(&self, k: usize) -> V {
        self.between(k, 0.5)
    }

    fn between(&self, k: usize, w: f64) -> V {
        match self.interpolation {
            Interpolation::Linear => V::lerp(&self.samples[k], &self.samples[k + 1], w),
            Interpolation::ConstantLeft => self.samples[k].clone(),
        }
    }

    pub fn map<W: PathValue>(&self, f: impl FnMut(&V) -> W) -> MatrixPath<W> {
        MatrixPath {
            grid: self.grid,
            samples: self.samples.iter().map(f).collect(),
            interpolation: self.interpolation,
        }
    }

    /// Trapezoidal integral over `[0, T]`.
    pub fn quadrature(&self) -> V {
        let h = self.grid.step();
        let n = self.samples.len();
        let mut acc = self.samples[0].add(&self.samples[n - 1]).scale(0.5);
        for s in &self.samples[1..n - 1] {
            acc = acc.add(s);
        }
        acc.scale(h)
    }
}

impl ScalarPath {
    pub fn min_value(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
