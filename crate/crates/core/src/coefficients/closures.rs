//! Closure-backed coefficients for programmatic registration.

use std::sync::Arc;

use super::{Dispersion, InteractionKernel, PairwiseCoefficients, PathAccess, ReducedDrift};
use crate::error::Result;
use crate::measure::LawSource;

/// `σ ≡ M` for a fixed `d × d₁` matrix.
#[derive(Debug, Clone)]
pub struct ConstantDispersion {
    dim: usize,
    noise_dim: usize,
    matrix: Vec<f64>,
}

impl ConstantDispersion {
    pub fn new(dim: usize, noise_dim: usize, matrix: Vec<f64>) -> Self {
        assert_eq!(matrix.len(), dim * noise_dim, "dispersion matrix shape");
        Self { dim, noise_dim, matrix }
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = s;
        }
        Self::new(dim, dim, m)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
}

impl Dispersion for ConstantDispersion {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn eval(&self, _t: f64, _path: &dyn PathAccess, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.matrix);
        Ok(())
    }

    fn descriptor(&self) -> String {
        format!("constant{:?}", self.matrix)
    }
}

type DispFn = dyn Fn(f64, &dyn PathAccess, &mut [f64]) -> Result<()> + Send + Sync;

pub struct FnDispersion {
    dim: usize,
    noise_dim: usize,
    name: String,
    f: Arc<DispFn>,
}

impl FnDispersion {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        name: impl Into<String>,
        f: impl Fn(f64, &dyn PathAccess, &mut [f64]) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            noise_dim,
            name: name.into(),
            f: Arc::new(f),
        }
    }
}

impl Dispersion for FnDispersion {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn eval(&self, t: f64, path: &dyn PathAccess, out: &mut [f64]) -> Result<()> {
        (self.f)(t, path, out)
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }
}

type ReducedFn = dyn Fn(f64, &dyn PathAccess, &dyn LawSource, &mut [f64]) -> Result<()> + Send + Sync;

pub struct FnReducedDrift {
    noise_dim: usize,
    f: Arc<ReducedFn>,
}

impl FnReducedDrift {
    pub fn new(
        noise_dim: usize,
        f: impl Fn(f64, &dyn PathAccess, &dyn LawSource, &mut [f64]) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        Self {
            noise_dim,
            f: Arc::new(f),
        }
    }
}

impl ReducedDrift for FnReducedDrift {
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn eval(&self, t: f64, path: &dyn PathAccess, laws: &dyn LawSource, out: &mut [f64]) -> Result<()> {
        (self.f)(t, path, laws, out)
    }
}

type KernelFn = dyn Fn(f64, f64, &dyn PathAccess, &[f64], &mut [f64]) + Send + Sync;

/// `β̃(t, s, x, y)` from a closure; no separable form.
pub struct FnKernel {
    noise_dim: usize,
    f: Arc<KernelFn>,
}

impl FnKernel {
    pub fn new(
        noise_dim: usize,
        f: impl Fn(f64, f64, &dyn PathAccess, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            noise_dim,
            f: Arc::new(f),
        }
    }
}

impl InteractionKernel for FnKernel {
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn eval(&self, t: f64, s: f64, path: &dyn PathAccess, y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(t, s, path, y, out);
        Ok(())
    }
}

type PairFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;

/// `b(t, x, y)` and `σ(t, x, y)` from closures; no separable form.
pub struct FnPairwise {
    dim: usize,
    noise_dim: usize,
    drift: Arc<PairFn>,
    dispersion: Arc<PairFn>,
}

impl FnPairwise {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        dispersion: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            noise_dim,
            drift: Arc::new(drift),
            dispersion: Arc::new(dispersion),
        }
    }
}

impl PairwiseCoefficients for FnPairwise {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, y, out)
    }

    fn dispersion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.dispersion)(t, x, y, out)
    }
}
