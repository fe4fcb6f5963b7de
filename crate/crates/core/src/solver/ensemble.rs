use std::io::Write;

use serde::Serialize;

use super::{InitialLaw, LawEstimator, SimConfig};
use crate::coefficients::{CoefficientSet, PathAccess};
use crate::error::Result;
use crate::measure::{bin_uniform, empirical_from_particles, slice_index, FlowSlice, LawRef, LawSource, MeasureFlow};
use crate::stats::mean_var;

/// Where the randomness of a run came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    /// Stream layout: ChaCha8 keyed by the seed, stream id = particle index,
    /// block 0 for the initial sample and block `k + 1` for step `k`.
    pub streams: String,
    pub initial_law: String,
    pub dispersion: String,
}

pub(super) struct Recorder {
    dim: usize,
    noise_dim: usize,
    cfg: SimConfig,
    provenance: Provenance,
    warnings: Vec<String>,
    steps: Vec<i64>,
    positions: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
}

impl Recorder {
    pub(super) fn new(coeffs: &CoefficientSet, init: &InitialLaw, cfg: &SimConfig, warnings: Vec<String>) -> Self {
        Self {
            dim: coeffs.dim(),
            noise_dim: coeffs.noise_dim(),
            cfg: cfg.clone(),
            provenance: Provenance {
                seed: cfg.seed,
                streams: "chacha8(seed); stream = particle; block 0 initial, block k+1 step k".into(),
                initial_law: init.descriptor(),
                dispersion: coeffs.dispersion_descriptor(),
            },
            warnings,
            steps: Vec::new(),
            positions: Vec::new(),
            means: Vec::new(),
        }
    }

    pub(super) fn push(&mut self, step: i64, positions: &[f64], mean: &[f64]) {
        self.steps.push(step);
        self.positions.push(positions.to_vec());
        self.means.push(mean.to_vec());
    }

    pub(super) fn finish(self, integrals: Vec<f64>) -> ParticleEnsemble {
        let dt = self.cfg.dt;
        ParticleEnsemble {
            dim: self.dim,
            noise_dim: self.noise_dim,
            times: self.steps.iter().map(|&k| k as f64 * dt).collect(),
            steps: self.steps,
            positions: self.positions,
            means: self.means,
            integrals,
            cfg: self.cfg,
            provenance: self.provenance,
            warnings: self.warnings,
        }
    }
}

/// Recorded particle paths on `[-τ, T]`.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    dim: usize,
    noise_dim: usize,
    cfg: SimConfig,
    steps: Vec<i64>,
    times: Vec<f64>,
    positions: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
    /// `[∫|b| ds, ∫|σ|² ds]` over `[0, T]` per particle.
    integrals: Vec<f64>,
    provenance: Provenance,
    warnings: Vec<String>,
}

impl ParticleEnsemble {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn n(&self) -> usize {
        self.cfg.n
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    pub fn horizon(&self) -> f64 {
        self.cfg.horizon
    }

    pub fn delay(&self) -> f64 {
        self.cfg.delay
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Recorded times, increasing; the first `history + 1` cover `[-τ, 0]`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> &[i64] {
        &self.steps
    }

    pub fn recorded_len(&self) -> usize {
        self.times.len()
    }

    /// Flat positions (`n × d`) of recorded slice `k`.
    pub fn positions(&self, k: usize) -> &[f64] {
        &self.positions[k]
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k]
    }

    pub fn final_positions(&self) -> &[f64] {
        self.positions.last().unwrap()
    }

    /// Last recorded slice at or below `time`.
    pub fn index_at_or_below(&self, time: f64) -> Option<usize> {
        slice_index(self.times.len(), |k| self.times[k], time).ok()
    }

    /// The recorded slice at `time` (up to rounding), if any.
    pub fn index_of(&self, time: f64) -> Option<usize> {
        self.index_at_or_below(time)
            .filter(|&k| (self.times[k] - time).abs() <= 1e-9 * (1.0 + time.abs()))
    }

    /// Path of `particle` seen at recorded slice `k`.
    pub fn particle_path(&self, particle: usize, k: usize) -> EnsemblePath<'_> {
        EnsemblePath { ens: self, particle, k }
    }

    /// Empirical laws at every recorded time; binned when the run used the
    /// grid estimator.
    pub fn flow(&self) -> Result<MeasureFlow> {
        let slices = self
            .times
            .iter()
            .zip(&self.positions)
            .map(|(&t, p)| {
                let mu = empirical_from_particles(self.dim, p, None)?;
                Ok(match self.cfg.estimator {
                    LawEstimator::Atoms => FlowSlice::discrete(t, mu),
                    LawEstimator::Grid { cell_width } => FlowSlice::grid(t, bin_uniform(&mu, 0.0, cell_width)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(self.cfg.delay, self.cfg.horizon, slices)
    }

    /// `t,particle,x0,...` for every recorded time and every
    /// `particle_stride`-th particle.
    pub fn write_trajectories_csv(&self, out: &mut impl Write, particle_stride: usize) -> Result<()> {
        let d = self.dim;
        let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        writeln!(out, "t,particle,{}", header.join(","))?;
        for (t, pos) in self.times.iter().zip(&self.positions) {
            for p in (0..self.n()).step_by(particle_stride.max(1)) {
                let x: Vec<String> = pos[p * d..(p + 1) * d].iter().map(|v| v.to_string()).collect();
                writeln!(out, "{t},{p},{}", x.join(","))?;
            }
        }
        Ok(())
    }

    /// `t,mean_x0,...,var_x0,...` per recorded time (unbiased variance).
    pub fn write_summary_csv(&self, out: &mut impl Write) -> Result<()> {
        let d = self.dim;
        let m: Vec<String> = (0..d).map(|i| format!("mean_x{i}")).collect();
        let v: Vec<String> = (0..d).map(|i| format!("var_x{i}")).collect();
        writeln!(out, "t,{},{}", m.join(","), v.join(","))?;
        for k in 0..self.recorded_len() {
            let (means, vars) = self.moments(k);
            let cols: Vec<String> = means.iter().chain(&vars).map(|x| x.to_string()).collect();
            writeln!(out, "{},{}", self.times[k], cols.join(","))?;
        }
        Ok(())
    }

    /// Componentwise sample mean and unbiased variance of slice `k`.
    pub fn moments(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut means = Vec::with_capacity(d);
        let mut vars = Vec::with_capacity(d);
        for i in 0..d {
            let col: Vec<f64> = self.positions[k].iter().skip(i).step_by(d).copied().collect();
            let (m, v) = mean_var(&col);
            means.push(m);
            vars.push(v);
        }
        (means, vars)
    }

    pub(crate) fn raw_integrals(&self) -> &[f64] {
        &self.integrals
    }
}

impl LawSource for ParticleEnsemble {
    /// The raw empirical law of the recorded slice at or below `time`.
    fn law_at(&self, time: f64) -> Result<LawRef<'_>> {
        let k = slice_index(self.times.len(), |k| self.times[k], time)?;
        Ok(LawRef {
            dim: self.dim,
            positions: &self.positions[k],
            weights: None,
            mean: Some(&self.means[k]),
        })
    }
}

/// One particle's recorded path, current at slice `k`.
#[derive(Debug, Clone, Copy)]
pub struct EnsemblePath<'a> {
    ens: &'a ParticleEnsemble,
    particle: usize,
    k: usize,
}

impl PathAccess for EnsemblePath<'_> {
    fn time(&self) -> f64 {
        self.ens.times[self.k]
    }

    fn current(&self) -> &[f64] {
        let d = self.ens.dim;
        &self.ens.positions[self.k][self.particle * d..(self.particle + 1) * d]
    }

    fn at(&self, time: f64) -> Result<&[f64]> {
        let d = self.ens.dim;
        let j = slice_index(self.k + 1, |j| self.ens.times[j], time)?;
        Ok(&self.ens.positions[j][self.particle * d..(self.particle + 1) * d])
    }
}

/// Per-particle `∫₀ᵀ |b| ds` and `∫₀ᵀ |σ|² ds` as left-point sums on the
/// step grid, accumulated while simulating.
#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityReport {
    pub threshold: f64,
    pub max_drift: f64,
    pub max_drift_particle: usize,
    pub max_dispersion: f64,
    pub max_dispersion_particle: usize,
    /// Particles with a non-finite integral or one above the threshold.
    pub flagged: Vec<usize>,
    pub pass: bool,
    #[serde(skip)]
    pub drift: Vec<f64>,
    #[serde(skip)]
    pub dispersion: Vec<f64>,
}

pub fn integrability_report(ensemble: &ParticleEnsemble, threshold: f64) -> IntegrabilityReport {
    let raw = ensemble.raw_integrals();
    let drift: Vec<f64> = raw.iter().step_by(2).copied().collect();
    let dispersion: Vec<f64> = raw.iter().skip(1).step_by(2).copied().collect();
    let (max_drift_particle, max_drift) = argmax(&drift);
    let (max_dispersion_particle, max_dispersion) = argmax(&dispersion);
    let flagged: Vec<usize> = (0..drift.len())
        .filter(|&p| {
            let (a, b) = (drift[p], dispersion[p]);
            !(a.is_finite() && b.is_finite()) || a > threshold || b > threshold
        })
        .collect();
    IntegrabilityReport {
        threshold,
        max_drift,
        max_drift_particle,
        max_dispersion,
        max_dispersion_particle,
        pass: flagged.is_empty(),
        flagged,
        drift,
        dispersion,
    }
}

/// Lowest index of the largest value; NaN counts as `+∞`.
fn argmax(v: &[f64]) -> (usize, f64) {
    let key = |x: f64| if x.is_nan() { f64::INFINITY } else { x };
    let mut best = (0, v.first().copied().unwrap_or(0.0));
    for (i, &x) in v.iter().enumerate().skip(1) {
        if key(x) > key(best.1) {
            best = (i, x);
        }
    }
    best
}
