//! Interacting-particle Euler–Maruyama with delay segments.
//!
//! Each particle `i` follows
//! `X_{t+dt} = X_t + b(t, X, μ_t) dt + σ(t, X) √dt ξ`, where `μ` is the
//! empirical law of the whole system. All particles step from the same
//! frozen flow, and the new slice is appended only after every particle has
//! moved. The noise `ξ` for `(particle, step)` comes from a fixed position of
//! a counter-based stream, so results do not depend on the thread count.

mod ensemble;
mod init;

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::Serialize;

pub use ensemble::{integrability_report, EnsemblePath, IntegrabilityReport, ParticleEnsemble, Provenance};
pub use init::InitialLaw;

use crate::coefficients::{CoefficientSet, PathAccess};
use crate::error::{Error, Result};
use crate::measure::{bin_uniform, empirical_from_particles, slice_index, LawRef, LawSource};
use crate::rng::{NoiseStreams, ParticleNoise, NORMALS_PER_DRAW};
use crate::stats::vector_mean;

/// Particles per parallel work unit.
const STEP_BLOCK: usize = 512;

/// How `μ_t` is presented to the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawEstimator {
    /// The empirical measure of the particles.
    Atoms,
    /// The empirical measure binned on cells of this width (origin 0),
    /// with mass placed at cell centers.
    Grid { cell_width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub delay: f64,
    pub seed: u64,
    pub estimator: LawEstimator,
    /// Keep every `record_stride`-th step (and always the last one).
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(n: usize, dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            n,
            dt,
            horizon,
            delay: 0.0,
            seed,
            estimator: LawEstimator::Atoms,
            record_stride: 1,
        }
    }

    pub fn with_delay(mut self, delay: f64) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_estimator(mut self, estimator: LawEstimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    /// Number of steps on `[0, T]`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Grid points strictly before 0 needed to cover `[-τ, 0]`.
    pub fn history(&self) -> usize {
        if self.delay == 0.0 {
            0
        } else {
            (self.delay / self.dt - 1e-9).ceil() as usize
        }
    }

    /// Checks the configuration against `coeffs`; returns warnings.
    pub fn validate(&self, coeffs: &CoefficientSet) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.n == 0 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("T must be positive, got {}", self.horizon)));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!("T / dt = {ratio} is not an integer")));
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::Config(format!("tau must be nonnegative, got {}", self.delay)));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record stride must be at least 1".into()));
        }
        if coeffs.delay() > self.delay + 1e-12 {
            return Err(Error::Config(format!(
                "coefficients look back {} but tau = {}",
                coeffs.delay(),
                self.delay
            )));
        }
        if coeffs.noise_dim() > NORMALS_PER_DRAW {
            return Err(Error::Config(format!(
                "noise dimension {} exceeds {NORMALS_PER_DRAW}",
                coeffs.noise_dim()
            )));
        }
        if let LawEstimator::Grid { cell_width } = self.estimator {
            if !(cell_width > 0.0 && cell_width.is_finite()) {
                return Err(Error::Config(format!(
                    "estimator cell width must be positive, got {cell_width}"
                )));
            }
        }
        let lag = self.delay / self.dt;
        if self.delay > 0.0 && (lag - lag.round()).abs() > 1e-9 * lag.max(1.0) {
            warnings.push(format!(
                "tau / dt = {lag} is not an integer; delayed laws resolve to the grid slice at or below t + s"
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone)]
struct Binned {
    positions: Vec<f64>,
    weights: Vec<f64>,
    mean: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Slice {
    step: i64,
    positions: Vec<f64>,
    mean: Vec<f64>,
    binned: Option<Binned>,
}

/// The recent history of a particle system: enough slices to serve the
/// longest delay, newest last.
#[derive(Debug, Clone)]
pub struct SystemState {
    dim: usize,
    n: usize,
    dt: f64,
    estimator: LawEstimator,
    capacity: usize,
    ring: VecDeque<Slice>,
}

impl SystemState {
    /// State at step 0 from `history.len()` slices at steps
    /// `-(len - 1), ..., 0`, each holding `n * dim` positions.
    pub fn from_history(dim: usize, dt: f64, estimator: LawEstimator, history: Vec<Vec<f64>>) -> Result<Self> {
        if history.is_empty() || history[0].is_empty() {
            return Err(Error::Empty("initial history"));
        }
        let len = history[0].len();
        if dim == 0 || !len.is_multiple_of(dim) || history.iter().any(|h| h.len() != len) {
            return Err(Error::Dimension {
                expected: len,
                got: history.iter().map(|h| h.len()).find(|&l| l != len).unwrap_or(0),
                context: "history slice",
            });
        }
        let capacity = history.len();
        let mut s = Self {
            dim,
            n: len / dim,
            dt,
            estimator,
            capacity,
            ring: VecDeque::with_capacity(capacity + 1),
        };
        let first = -(capacity as i64 - 1);
        for (k, positions) in history.into_iter().enumerate() {
            s.push_at(first + k as i64, positions)?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> i64 {
        self.ring.back().unwrap().step
    }

    pub fn time(&self) -> f64 {
        self.step_index() as f64 * self.dt
    }

    pub fn positions(&self) -> &[f64] {
        &self.ring.back().unwrap().positions
    }

    pub fn mean(&self) -> &[f64] {
        &self.ring.back().unwrap().mean
    }

    pub fn particle(&self, i: usize) -> ParticlePath<'_> {
        ParticlePath { state: self, i }
    }

    fn push_at(&mut self, step: i64, positions: Vec<f64>) -> Result<()> {
        let mean = vector_mean(&positions, self.dim);
        let binned = match self.estimator {
            LawEstimator::Atoms => None,
            LawEstimator::Grid { cell_width } => {
                let mu = empirical_from_particles(self.dim, &positions, None)?;
                let atoms = bin_uniform(&mu, 0.0, cell_width)?.to_atoms();
                Some(Binned {
                    mean: atoms.first_moment(),
                    positions: atoms.positions().to_vec(),
                    weights: atoms.weights().to_vec(),
                })
            }
        };
        self.ring.push_back(Slice {
            step,
            positions,
            mean,
            binned,
        });
        while self.ring.len() > self.capacity {
            self.ring.pop_front();
        }
        Ok(())
    }

    fn push(&mut self, positions: Vec<f64>) -> Result<()> {
        let step = self.step_index() + 1;
        self.push_at(step, positions)
    }

    fn index_at(&self, time: f64) -> Result<usize> {
        slice_index(self.ring.len(), |k| self.ring[k].step as f64 * self.dt, time)
    }
}

impl LawSource for SystemState {
    fn law_at(&self, time: f64) -> Result<LawRef<'_>> {
        let s = &self.ring[self.index_at(time)?];
        Ok(match &s.binned {
            None => LawRef {
                dim: self.dim,
                positions: &s.positions,
                weights: None,
                mean: Some(&s.mean),
            },
            Some(b) => LawRef {
                dim: self.dim,
                positions: &b.positions,
                weights: Some(&b.weights),
                mean: Some(&b.mean),
            },
        })
    }
}

/// Path of one particle inside a [`SystemState`].
#[derive(Debug, Clone, Copy)]
pub struct ParticlePath<'a> {
    state: &'a SystemState,
    i: usize,
}

impl PathAccess for ParticlePath<'_> {
    fn time(&self) -> f64 {
        self.state.time()
    }

    fn current(&self) -> &[f64] {
        let d = self.state.dim;
        &self.state.positions()[self.i * d..(self.i + 1) * d]
    }

    fn at(&self, time: f64) -> Result<&[f64]> {
        let d = self.state.dim;
        let s = &self.state.ring[self.state.index_at(time)?];
        Ok(&s.positions[self.i * d..(self.i + 1) * d])
    }
}

/// One synchronous Euler–Maruyama step from `state` with standard normal
/// `noise` (`n × d₁`, particle-major). Returns the new positions.
pub fn step(coeffs: &CoefficientSet, state: &SystemState, noise: &[f64]) -> Result<Vec<f64>> {
    let mut next = vec![0.0; state.n * state.dim];
    let mut acc = vec![0.0; 2 * state.n];
    step_into(coeffs, state, noise, &mut next, &mut acc)?;
    Ok(next)
}

/// As [`step`], also adding `|b| dt` and `|σ|²_F dt` per particle to `acc`.
fn step_into(
    coeffs: &CoefficientSet,
    state: &SystemState,
    noise: &[f64],
    next: &mut [f64],
    acc: &mut [f64],
) -> Result<()> {
    let (d, d1, n) = (state.dim, coeffs.noise_dim(), state.n);
    if coeffs.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: coeffs.dim(),
            context: "coefficient dimension vs state",
        });
    }
    if noise.len() != n * d1 {
        return Err(Error::Dimension {
            expected: n * d1,
            got: noise.len(),
            context: "noise slab",
        });
    }
    let t = state.time();
    let dt = state.dt;
    let sqrt_dt = dt.sqrt();
    let cache = coeffs.prepare(t, state)?;
    let cur = state.positions();
    next.par_chunks_mut(STEP_BLOCK * d)
        .zip(acc.par_chunks_mut(STEP_BLOCK * 2))
        .enumerate()
        .try_for_each(|(blk, (out, acc))| -> Result<()> {
            let mut scratch = coeffs.scratch();
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * d1];
            for (k, (o, a)) in out.chunks_mut(d).zip(acc.chunks_mut(2)).enumerate() {
                let i = blk * STEP_BLOCK + k;
                coeffs.evaluate(t, &state.particle(i), state, &cache, &mut scratch, &mut b, &mut s, None)?;
                let x = &cur[i * d..(i + 1) * d];
                let z = &noise[i * d1..(i + 1) * d1];
                for r in 0..d {
                    let sz: f64 = s[r * d1..(r + 1) * d1].iter().zip(z).map(|(m, zi)| m * zi).sum();
                    o[r] = x[r] + b[r] * dt + sqrt_dt * sz;
                }
                a[0] += crate::linalg::norm(&b) * dt;
                a[1] += s.iter().map(|v| v * v).sum::<f64>() * dt;
            }
            Ok(())
        })?;
    if let Some(p) = next.par_chunks(d).position_first(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged {
            particle: p,
            step: state.step_index() as usize,
        });
    }
    Ok(())
}

/// A running particle simulation. Most callers want [`simulate`]; stepping
/// by hand lets two systems advance in lockstep.
pub struct Simulation<'c> {
    coeffs: &'c CoefficientSet,
    cfg: SimConfig,
    state: SystemState,
    noise: Vec<ParticleNoise>,
    slab: Vec<f64>,
    integrals: Vec<f64>,
    record: ensemble::Recorder,
}

impl<'c> Simulation<'c> {
    pub fn new(coeffs: &'c CoefficientSet, init: &InitialLaw, cfg: &SimConfig) -> Result<Self> {
        let warnings = cfg.validate(coeffs)?;
        init.validate()?;
        let d = coeffs.dim();
        if init.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: init.dim(),
                context: "initial law dimension",
            });
        }
        let streams = NoiseStreams::new(cfg.seed);
        let hist = cfg.history();
        let paths: Vec<Vec<f64>> = (0..cfg.n as u64)
            .into_par_iter()
            .map(|p| init.sample_path(&streams, p, hist))
            .collect::<Result<_>>()?;
        let mut history = vec![vec![0.0; cfg.n * d]; hist + 1];
        for (p, path) in paths.iter().enumerate() {
            for (k, slice) in history.iter_mut().enumerate() {
                slice[p * d..(p + 1) * d].copy_from_slice(&path[k * d..(k + 1) * d]);
            }
        }
        let state = SystemState::from_history(d, cfg.dt, cfg.estimator, history)?;
        let mut record = ensemble::Recorder::new(coeffs, init, cfg, warnings);
        for s in &state.ring {
            record.push(s.step, &s.positions, &s.mean);
        }
        let noise = (0..cfg.n as u64).into_par_iter().map(|p| streams.particle(p)).collect();
        Ok(Self {
            coeffs,
            cfg: cfg.clone(),
            state,
            noise,
            slab: vec![0.0; cfg.n * coeffs.noise_dim()],
            integrals: vec![0.0; 2 * cfg.n],
            record,
        })
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        self.coeffs
    }

    pub fn is_done(&self) -> bool {
        self.state.step_index() as usize >= self.cfg.steps()
    }

    /// Advances one step.
    pub fn advance(&mut self) -> Result<()> {
        let d1 = self.coeffs.noise_dim();
        self.slab
            .par_chunks_mut(d1.max(1))
            .zip(self.noise.par_iter_mut())
            .for_each(|(z, r)| {
                r.next_draw().fill_normals(z);
            });
        let mut next = vec![0.0; self.cfg.n * self.state.dim];
        step_into(self.coeffs, &self.state, &self.slab, &mut next, &mut self.integrals)?;
        self.state.push(next)?;
        let k = self.state.step_index();
        if (k as usize).is_multiple_of(self.cfg.record_stride) || k as usize == self.cfg.steps() {
            let s = self.state.ring.back().unwrap();
            self.record.push(k, &s.positions, &s.mean);
        }
        Ok(())
    }

    pub fn finish(self) -> ParticleEnsemble {
        self.record.finish(self.integrals)
    }
}

/// Runs the particle system on `[0, T]` from `init`.
pub fn simulate(coeffs: &CoefficientSet, init: &InitialLaw, cfg: &SimConfig) -> Result<ParticleEnsemble> {
    let mut sim = Simulation::new(coeffs, init, cfg)?;
    while !sim.is_done() {
        sim.advance()?;
    }
    Ok(sim.finish())
}
