//! Lyapunov certificates: generator margins, the moment bound monitor and
//! the four conditions for delayed interaction drifts.

mod functions;

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

pub use functions::{FnLyapunov, LyapunovFunction, RadialLyapunov, RadialProfile, ScaledLyapunov};

use crate::coefficients::checks::{
    smallest_constant, MarginReport, MarginTable, SampleDomain, SampleLocation, SamplePoint,
};
use crate::coefficients::{DelayedInteractionDrift, Dispersion, PairwiseMeanFieldSpec, PointPath};
use crate::error::{Error, Result};
use crate::linalg::{dot, mat_vec, norm, trace_sandwich};
use crate::measure::{TimeWeight, WeightFunction};
use crate::solver::ParticleEnsemble;

type AuxFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type PathFn = dyn Fn(f64, &dyn crate::coefficients::PathAccess) -> f64 + Send + Sync;

/// Increasing positive modulus `g`; only the identity is built in and the
/// divergence of `∫_{0+} du / g(u)` is taken on trust.
#[derive(Clone)]
pub enum Modulus {
    Identity,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Modulus {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Modulus::Identity => u,
            Modulus::Custom(g) => g(u),
        }
    }
}

#[derive(Clone)]
pub struct LyapunovCertificate {
    pub v: Arc<dyn LyapunovFunction>,
    pub c: f64,
    /// `φ_t`
    pub weight: TimeWeight,
    /// `η(t, y)`
    pub eta: Arc<AuxFn>,
    /// `ψ(t, x)`; unused by the checks here, kept for reporting.
    pub psi: Option<Arc<PathFn>>,
    pub modulus: Modulus,
}

impl LyapunovCertificate {
    /// `φ ≡ 1`, `η ≡ 1`, identity modulus.
    pub fn new(v: Arc<dyn LyapunovFunction>, c: f64) -> Self {
        Self {
            v,
            c,
            weight: WeightFunction::unit().into(),
            eta: Arc::new(|_, _| 1.0),
            psi: None,
            modulus: Modulus::Identity,
        }
    }

    pub fn with_weight(mut self, w: impl Into<TimeWeight>) -> Self {
        self.weight = w.into();
        self
    }

    pub fn with_eta(mut self, eta: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.eta = Arc::new(eta);
        self
    }

    /// Polynomial case: `φ = 1 + |y|^{α/2}`, `η = 1 + |y|^{α/4}` and `V`
    /// matching `1 + |y|^α` outside the unit ball.
    pub fn polynomial_case(alpha: f64, c: f64) -> Self {
        Self::new(Arc::new(RadialLyapunov::polynomial(alpha)), c)
            .with_weight(WeightFunction::polynomial(alpha / 2.0))
            .with_eta(move |_, y| 1.0 + norm(y).powf(alpha / 4.0))
    }

    /// Exponential case: `φ = exp(α|y|^p / 2)`, `η = exp(α|y|^p / 4)` and
    /// `V` matching `exp(α|y|^p)` outside the unit ball.
    pub fn exponential_case(alpha: f64, p: f64, c: f64) -> Self {
        Self::new(Arc::new(RadialLyapunov::exponential(alpha, p)), c)
            .with_weight(WeightFunction::exponential(alpha / 2.0, p))
            .with_eta(move |_, y| (alpha / 4.0 * norm(y).powf(p)).exp())
    }

    pub fn describe(&self) -> String {
        format!("V={}, C={}", self.v.descriptor(), self.c)
    }
}

/// `∂_t V + ⟨∇V, b⟩ + ½ tr(σᵀ D²V σ)` at `x`, and `V(t, x)`.
fn generator_terms(
    v: &dyn LyapunovFunction,
    t: f64,
    x: &[f64],
    b: &[f64],
    sigma: &[f64],
    d1: usize,
) -> Result<(f64, f64)> {
    let d = x.len();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    v.gradient(t, x, &mut g);
    v.hessian(t, x, &mut h);
    let dt = v.time_derivative(t, x);
    if !dt.is_finite() || g.iter().chain(&h).any(|z| !z.is_finite()) {
        return Err(Error::non_finite("Lyapunov derivative", format!("t={t}, x={x:?}")));
    }
    let val = v.value(t, x);
    Ok((dt + dot(&g, b) + 0.5 * trace_sandwich(sigma, d, d1, &h), val))
}

/// Generator terms at every sample: `coeffs` fills `b` (length `d`) and `σ`
/// (`d × d1`) at the sample, the margin is evaluated at `x`.
pub fn generator_table<F>(v: &dyn LyapunovFunction, d1: usize, samples: &SampleDomain, coeffs: F) -> Result<MarginTable>
where
    F: Fn(&SamplePoint<'_>, &mut [f64], &mut [f64]) -> Result<()> + Sync,
{
    let d = samples.dim();
    let terms: Vec<(f64, f64)> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let p = samples.point(i);
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * d1];
            coeffs(&p, &mut b, &mut s)?;
            generator_terms(v, p.t, p.x, &b, &s, d1)
        })
        .collect::<Result<_>>()?;
    Ok(MarginTable {
        label: "generator".into(),
        a: terms.iter().map(|t| t.0).collect(),
        w: terms.iter().map(|t| t.1).collect(),
        strict: false,
    })
}

/// Worst `∂_tV + ⟨∇V, b⟩ + ½tr(σᵀD²Vσ) − C V` over the samples; passes
/// iff it is `≤ 0`.
pub fn generator_margin<F>(
    cert: &LyapunovCertificate,
    d1: usize,
    samples: &SampleDomain,
    coeffs: F,
) -> Result<MarginReport>
where
    F: Fn(&SamplePoint<'_>, &mut [f64], &mut [f64]) -> Result<()> + Sync,
{
    if samples.is_empty() {
        return Err(Error::Empty("generator samples"));
    }
    let table = generator_table(cert.v.as_ref(), d1, samples, coeffs)?;
    Ok(table.report(cert.c, |i| samples.location(i)))
}

/// [`generator_margin`] for `b(t, x, y)` and `σ(t, x, y)` of a pairwise spec.
pub fn generator_margin_pairwise(
    cert: &LyapunovCertificate,
    spec: &PairwiseMeanFieldSpec,
    samples: &SampleDomain,
) -> Result<MarginReport> {
    generator_margin(cert, spec.noise_dim(), samples, |p, b, s| {
        spec.drift(p.t, p.x, p.y, b);
        spec.dispersion(p.t, p.x, p.y, s);
        Ok(())
    })
}

/// Smallest `C` for which the pairwise generator margin passes.
pub fn smallest_generator_constant(
    v: &dyn LyapunovFunction,
    spec: &PairwiseMeanFieldSpec,
    samples: &SampleDomain,
) -> Result<Option<f64>> {
    let table = generator_table(v, spec.noise_dim(), samples, |p, b, s| {
        spec.drift(p.t, p.x, p.y, b);
        spec.dispersion(p.t, p.x, p.y, s);
        Ok(())
    })?;
    Ok(smallest_constant(&[&table]))
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitorRow {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub bound: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitorReport {
    pub c: f64,
    pub initial_mean: f64,
    pub dt_slack: f64,
    pub rows: Vec<MonitorRow>,
    pub first_flag: Option<f64>,
    pub pass: bool,
}

/// Default coefficient of the `dt`-proportional discretization slack.
pub const DEFAULT_DT_SLACK: f64 = 1.0;

/// Mean and standard error of `V(t, X_t)` at every recorded time `t ≥ 0`,
/// flagged where `mean − 3 SE > e^{Ct} E V(ξ_0) (1 + κ dt)`.
pub fn monitor_expectation(ensemble: &ParticleEnsemble, cert: &LyapunovCertificate) -> MonitorReport {
    monitor_expectation_with_slack(ensemble, cert, DEFAULT_DT_SLACK)
}

pub fn monitor_expectation_with_slack(
    ensemble: &ParticleEnsemble,
    cert: &LyapunovCertificate,
    kappa: f64,
) -> MonitorReport {
    let v = cert.v.as_ref();
    let zero = ensemble.index_at_or_below(0.0).expect("ensemble covers t = 0");
    let (initial_mean, _) = mean_se(v, 0.0, ensemble.positions(zero), ensemble.dim());
    let dt = ensemble.dt();
    let rows: Vec<MonitorRow> = (zero..ensemble.recorded_len())
        .map(|k| {
            let t = ensemble.times()[k];
            let (mean, se) = mean_se(v, t, ensemble.positions(k), ensemble.dim());
            let bound = (cert.c * t).exp() * initial_mean * (1.0 + kappa * dt);
            MonitorRow {
                t,
                mean,
                se,
                bound,
                flagged: mean - 3.0 * se > bound,
            }
        })
        .collect();
    let first_flag = rows.iter().find(|r| r.flagged).map(|r| r.t);
    MonitorReport {
        c: cert.c,
        initial_mean,
        dt_slack: kappa,
        pass: first_flag.is_none(),
        first_flag,
        rows,
    }
}

/// Mean and standard error of `V` over a particle slice. Identical values
/// give their common value and zero error exactly.
fn mean_se(v: &dyn LyapunovFunction, t: f64, pos: &[f64], d: usize) -> (f64, f64) {
    let vals: Vec<f64> = pos.par_chunks(d).map(|y| v.value(t, y)).collect();
    let n = vals.len() as f64;
    let first = vals[0];
    if vals.iter().all(|&x| x == first) {
        return (first, 0.0);
    }
    let (mean, var) = crate::stats::mean_var(&vals);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct InitialMoment {
    pub mean: f64,
    pub finite: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionsReport {
    pub constant: f64,
    pub generator: MarginReport,
    pub kernel_growth: MarginReport,
    pub auxiliary_growth: MarginReport,
    pub initial_moment: InitialMoment,
    /// Smallest `C` passing the three margins together on the same samples.
    pub smallest_constant: Option<f64>,
    pub pass: bool,
}

/// The four conditions for a delayed interaction drift, with paths sampled
/// as constant paths at the sample point `x`.
pub fn check_c_conditions(
    interaction: &DelayedInteractionDrift,
    sigma: &dyn Dispersion,
    cert: &LyapunovCertificate,
    samples: &SampleDomain,
    initial: &[f64],
) -> Result<ConditionsReport> {
    let (d, d1) = (sigma.dim(), sigma.noise_dim());
    if samples.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: samples.dim(),
            context: "sample domain",
        });
    }
    let kernel = interaction.kernel();
    // generator margin with β = σ β̃ in place of b
    let c1 = generator_table(cert.v.as_ref(), d1, samples, |p, b, s| {
        let path = PointPath { time: p.t, x: p.x };
        sigma.eval(p.t, &path, s)?;
        let mut r = vec![0.0; d1];
        kernel.eval(p.t, p.s, &path, p.y, &mut r)?;
        mat_vec(s, d, d1, &r, b);
        Ok(())
    })?;
    // kernel growth
    let c2_terms: Vec<(f64, f64)> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let p = samples.point(i);
            let path = PointPath { time: p.t, x: p.x };
            let mut r = vec![0.0; d1];
            kernel.eval(p.t, p.s, &path, p.y, &mut r)?;
            let ts = p.t + p.s;
            Ok((norm(&r), cert.weight.eval(ts, p.y) * (cert.eta)(ts, p.x)))
        })
        .collect::<Result<_>>()?;
    let c2 = MarginTable {
        label: "kernel growth".into(),
        a: c2_terms.iter().map(|t| t.0).collect(),
        w: c2_terms.iter().map(|t| t.1).collect(),
        strict: false,
    };
    // auxiliary growth over times × y-points
    let ny = samples.ys.len();
    let c3_terms: Vec<(f64, f64)> = (0..samples.times.len() * ny)
        .into_par_iter()
        .map(|i| {
            let t = samples.times[i / ny];
            let y = &samples.ys[i % ny];
            let e = (cert.eta)(t, y);
            let f = cert.weight.eval(t, y);
            (e.powi(4) + f * f, cert.v.value(t, y))
        })
        .collect();
    let c3 = MarginTable {
        label: "auxiliary growth".into(),
        a: c3_terms.iter().map(|t| t.0).collect(),
        w: c3_terms.iter().map(|t| t.1).collect(),
        strict: false,
    };
    let c3_locate = |i: usize| SampleLocation {
        index: i,
        t: samples.times[i / ny],
        s: 0.0,
        x: Vec::new(),
        y: samples.ys[i % ny].clone(),
    };
    // initial moment
    let vals: Vec<f64> = initial.chunks(d).map(|y| cert.v.value(0.0, y)).collect();
    let mean = if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let c4 = InitialMoment {
        mean,
        finite: mean.is_finite(),
        samples: vals.len(),
    };
    let c = cert.c;
    let smallest = smallest_constant(&[&c1, &c2, &c3]);
    let r1 = c1.report(c, |i| samples.location(i));
    let r2 = c2.report(c, |i| samples.location(i));
    let r3 = c3.report(c, c3_locate);
    let pass = r1.pass && r2.pass && r3.pass && c4.finite;
    Ok(ConditionsReport {
        constant: c,
        generator: MarginReport {
            label: "generator".into(),
            ..r1
        },
        kernel_growth: r2,
        auxiliary_growth: r3,
        initial_moment: c4,
        smallest_constant: smallest,
        pass,
    })
}
