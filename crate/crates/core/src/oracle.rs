//! Exact mean path of the scalar equation `dX = E h(X_t) dt + dW`, `X_0 ~ μ₀`.
//!
//! The solution is `X_t = X_0 + g(t) + W_t` where `g' = φ_h(t, g)`, `g(0) = 0`
//! and `φ_h(t, x) = E h(X_0 + x + W_t)`. Gaussian expectations are computed
//! by Gauss–Hermite quadrature for continuous `h` and by Gauss–Legendre
//! panels split at the jumps for piecewise continuous `h`; the order is
//! doubled from 64 until two successive orders agree.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use gauss_quad::{GaussHermite, GaussLegendre};
use serde::Serialize;

use crate::coefficients::{CoefficientSet, PairwiseCoefficients};
use crate::error::{Error, Result};
use crate::solver::{InitialLaw, ParticleEnsemble};

pub const DEFAULT_ORDER: usize = 64;
pub const MAX_ORDER: usize = 1024;
pub const AGREEMENT: f64 = 1e-8;

const LEVELS: usize = 5;

/// Standard normal nodes and weights (weights sum to 1).
fn hermite(level: usize) -> &'static [(f64, f64)] {
    static RULES: [OnceLock<Vec<(f64, f64)>>; LEVELS] = [const { OnceLock::new() }; LEVELS];
    RULES[level].get_or_init(|| {
        let rule = GaussHermite::new(DEFAULT_ORDER << level).expect("hermite rule");
        rule.as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x * 2f64.sqrt(), w / PI.sqrt()))
            .collect()
    })
}

fn legendre(level: usize) -> &'static GaussLegendre {
    static RULES: [OnceLock<GaussLegendre>; LEVELS] = [const { OnceLock::new() }; LEVELS];
    RULES[level].get_or_init(|| GaussLegendre::new(DEFAULT_ORDER << level).expect("legendre rule"))
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A drift profile `h: ℝ → ℝ` with `|h(x)| ≤ C e^{x²/2T}`.
#[derive(Clone)]
pub struct ScalarH {
    pub name: String,
    f: Arc<ScalarFn>,
    /// Points where `h` may jump; continuous elsewhere.
    pub breakpoints: Vec<f64>,
    pub growth_c: f64,
    /// `+∞` for bounded `h`.
    pub growth_t: f64,
}

impl fmt::Debug for ScalarH {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarH")
            .field("name", &self.name)
            .field("breakpoints", &self.breakpoints)
            .field("growth_c", &self.growth_c)
            .field("growth_t", &self.growth_t)
            .finish()
    }
}

impl ScalarH {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        growth_c: f64,
        growth_t: f64,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            breakpoints: Vec::new(),
            growth_c,
            growth_t,
        }
    }

    pub fn with_breakpoints(mut self, mut points: Vec<f64>) -> Self {
        points.sort_by(f64::total_cmp);
        points.dedup();
        self.breakpoints = points;
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// Named profiles: `zero`, `constant` (`c`), `identity`, `sign`, `sin`,
    /// and `gauss-growth` (`c·exp(x²/2T)` with `T = growth_t`).
    pub fn catalog(name: &str, c: f64, growth_t: f64) -> Result<Self> {
        let inf = f64::INFINITY;
        Ok(match name {
            "zero" => ScalarH::new("zero", |_| 0.0, 0.0, inf),
            "constant" => ScalarH::new(format!("constant({c})"), move |_| c, c.abs(), inf),
            "identity" => {
                // max |x| e^{-x²/2T} = (T/e)^{1/2}
                let t = if growth_t.is_finite() { growth_t } else { 100.0 };
                ScalarH::new("identity", |x| x, (t / std::f64::consts::E).sqrt(), t)
            }
            "sign" => ScalarH::new("sign", crate::coefficients::catalog::sign, 1.0, inf).with_breakpoints(vec![0.0]),
            "sin" => ScalarH::new("sin", f64::sin, 1.0, inf),
            "gauss-growth" => {
                if !(growth_t > 0.0 && growth_t.is_finite()) {
                    return Err(Error::invalid("gauss-growth needs a finite growth T > 0"));
                }
                ScalarH::new(
                    format!("gauss-growth(c={c}, T={growth_t})"),
                    move |x| c * (x * x / (2.0 * growth_t)).exp(),
                    c.abs(),
                    growth_t,
                )
            }
            other => return Err(Error::invalid(format!("unknown h profile '{other}'"))),
        })
    }

    /// `Σ a_j h_j`, continuous except at the union of the breakpoints.
    pub fn combination(terms: &[(f64, ScalarH)]) -> Self {
        let parts: Vec<(f64, ScalarH)> = terms.to_vec();
        let name = parts
            .iter()
            .map(|(a, h)| format!("{a}*{}", h.name))
            .collect::<Vec<_>>()
            .join("+");
        let growth_c = parts.iter().map(|(a, h)| a.abs() * h.growth_c).sum();
        let growth_t = parts.iter().map(|(_, h)| h.growth_t).fold(f64::INFINITY, f64::min);
        let breaks = parts.iter().flat_map(|(_, h)| h.breakpoints.clone()).collect();
        ScalarH::new(
            name,
            move |x| parts.iter().map(|(a, h)| a * h.eval(x)).sum(),
            growth_c,
            growth_t,
        )
        .with_breakpoints(breaks)
    }

    /// Largest `|h(x)| − C e^{x²/2T}` over `xs`; nonpositive when the
    /// declared bound holds there.
    pub fn growth_margin(&self, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| {
                let bound = if self.growth_t.is_finite() {
                    self.growth_c * (x * x / (2.0 * self.growth_t)).exp()
                } else {
                    self.growth_c
                };
                self.eval(x).abs() - bound
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `μ₀ = Σ_k w_k N(m_k, s_k²)`; `s_k = 0` gives a Dirac mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl GaussianMixture {
    pub fn dirac(x: f64) -> Self {
        Self::gaussian(x, 0.0)
    }

    pub fn gaussian(mean: f64, sd: f64) -> Self {
        Self {
            weights: vec![1.0],
            means: vec![mean],
            sds: vec![sd],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.sds.len() != k {
            return Err(Error::invalid(
                "mixture weights, means and sds must have equal nonzero length",
            ));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mixture weights must be positive and sum to 1"));
        }
        if self.means.iter().any(|m| !m.is_finite()) || self.sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("mixture means must be finite and sds nonnegative"));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    /// The matching initial law of the particle system.
    pub fn initial_law(&self) -> InitialLaw {
        if self.weights.len() == 1 && self.sds[0] == 0.0 {
            InitialLaw::ConstantPoint(vec![self.means[0]])
        } else if self.weights.len() == 1 {
            InitialLaw::Gaussian {
                mean: vec![self.means[0]],
                sd: vec![self.sds[0]],
            }
        } else {
            InitialLaw::Mixture {
                weights: self.weights.clone(),
                means: self.means.iter().map(|m| vec![*m]).collect(),
                sds: self.sds.iter().map(|s| vec![*s]).collect(),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScalarLawProblem {
    pub h: ScalarH,
    pub mu0: GaussianMixture,
    pub t_end: f64,
}

impl ScalarLawProblem {
    pub fn new(h: ScalarH, mu0: GaussianMixture, t_end: f64) -> Result<Self> {
        mu0.validate()?;
        if !(t_end > 0.0 && t_end < h.growth_t) {
            return Err(Error::invalid(format!(
                "horizon {t_end} must lie in (0, {}) for the growth bound of {}",
                h.growth_t, h.name
            )));
        }
        Ok(Self { h, mu0, t_end })
    }
}

/// `E h(mean + sd Z)`, `Z ~ N(0, 1)`, with order doubling.
pub fn gaussian_expectation(h: &ScalarH, mean: f64, sd: f64) -> Result<f64> {
    if sd == 0.0 {
        return finite(h.eval(mean), mean, sd);
    }
    let mut prev = expectation_at(h, mean, sd, 0)?;
    for level in 1..LEVELS {
        let next = expectation_at(h, mean, sd, level)?;
        if (next - prev).abs() <= AGREEMENT {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Quadrature(format!(
        "Gaussian expectation of {} at mean {mean}, sd {sd} did not settle by order {MAX_ORDER}",
        h.name
    )))
}

fn finite(v: f64, mean: f64, sd: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::non_finite(
            "Gaussian expectation",
            format!("mean {mean}, sd {sd}"),
        ))
    }
}

fn expectation_at(h: &ScalarH, mean: f64, sd: f64, level: usize) -> Result<f64> {
    // Hermite nodes reach far enough to overflow profiles with Gaussian growth
    let v = if h.breakpoints.is_empty() && !h.growth_t.is_finite() {
        hermite(level)
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|&(z, w)| w * h.eval(mean + sd * z))
            .sum()
    } else {
        // integrand ≤ C' exp(b z − a z²/2) under the growth bound
        let a = if h.growth_t.is_finite() {
            1.0 - sd * sd / h.growth_t
        } else {
            1.0
        };
        if !(a > 0.0) {
            return Err(Error::Quadrature(format!(
                "variance {} reaches the growth bound of {}",
                sd * sd,
                h.name
            )));
        }
        let b = if h.growth_t.is_finite() {
            mean.abs() * sd / h.growth_t
        } else {
            0.0
        };
        let zmax = b / a + 12.0 / a.sqrt();
        let mut cuts = vec![-zmax];
        cuts.extend(h.breakpoints.iter().map(|p| (p - mean) / sd).filter(|z| z.abs() < zmax));
        cuts.push(zmax);
        let rule = legendre(level);
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        cuts.windows(2)
            .map(|w| rule.integrate(w[0], w[1], |z| h.eval(mean + sd * z) * pdf(z)))
            .sum()
    };
    finite(v, mean, sd)
}

fn check_time(problem: &ScalarLawProblem, t: f64) -> Result<()> {
    if !(t > 0.0 && t < problem.h.growth_t) {
        return Err(Error::invalid(format!(
            "φ_h needs 0 < t < {}, got t = {t}",
            problem.h.growth_t
        )));
    }
    Ok(())
}

/// `φ_h(t, x) = ∫∫ h(x₀ + x + w) N(0, t)(dw) μ₀(dx₀)`; each mixture
/// component and the noise combine into one Gaussian.
pub fn phi_h(problem: &ScalarLawProblem, t: f64, x: f64) -> Result<f64> {
    check_time(problem, t)?;
    phi_unchecked(problem, t, x)
}

fn phi_unchecked(problem: &ScalarLawProblem, t: f64, x: f64) -> Result<f64> {
    let mu = &problem.mu0;
    let mut acc = 0.0;
    for k in 0..mu.weights.len() {
        let sd = (mu.sds[k] * mu.sds[k] + t).sqrt();
        acc += mu.weights[k] * gaussian_expectation(&problem.h, x + mu.means[k], sd)?;
    }
    Ok(acc)
}

/// `φ_h` as an iterated integral: outer quadrature over each component of
/// `μ₀`, inner over the noise. With `shifted` the inner integral is
/// `∫ h(x₀ + w) N(x, t)(dw)` instead of `∫ h(x₀ + x + w) N(0, t)(dw)`.
pub fn phi_h_nested(problem: &ScalarLawProblem, t: f64, x: f64, shifted: bool) -> Result<f64> {
    check_time(problem, t)?;
    let h = &problem.h;
    let st = t.sqrt();
    let inner = |x0: f64| -> Result<f64> {
        if shifted {
            let g = ScalarH {
                name: format!("{}(x0+.)", h.name),
                f: {
                    let f = h.f.clone();
                    Arc::new(move |w| f(x0 + w))
                },
                breakpoints: h.breakpoints.iter().map(|p| p - x0).collect(),
                growth_c: h.growth_c
                    * if h.growth_t.is_finite() {
                        (x0 * x0 / h.growth_t).exp()
                    } else {
                        1.0
                    },
                growth_t: h.growth_t / 2.0,
            };
            gaussian_expectation(&g, x, st)
        } else {
            gaussian_expectation(h, x0 + x, st)
        }
    };
    let mu = &problem.mu0;
    let mut acc = 0.0;
    for k in 0..mu.weights.len() {
        let (m, s) = (mu.means[k], mu.sds[k]);
        let v = if s == 0.0 {
            inner(m)?
        } else {
            let outer = |level: usize| -> Result<f64> {
                hermite(level)
                    .iter()
                    .filter(|(_, w)| *w > 0.0)
                    .map(|&(z, w)| Ok(w * inner(m + s * z)?))
                    .sum()
            };
            let mut prev = outer(0)?;
            let mut settled = None;
            for level in 1..LEVELS {
                let next = outer(level)?;
                if (next - prev).abs() <= AGREEMENT {
                    settled = Some(next);
                    break;
                }
                prev = next;
            }
            settled.ok_or_else(|| Error::Quadrature(format!("outer quadrature over component {k} did not settle")))?
        };
        acc += mu.weights[k] * v;
    }
    Ok(acc)
}

/// `g` on the grid `k dt`, `k = 0..=round(T_end / dt)`.
#[derive(Debug, Clone, Serialize)]
pub struct GPath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Whether the first step used `g(dt) = dt φ_h(dt, 0)`.
    pub bootstrapped: bool,
}

impl GPath {
    /// `g` at a grid time.
    pub fn at(&self, t: f64) -> Option<f64> {
        let k = (t / self.dt).round();
        ((k * self.dt - t).abs() <= 1e-9 * (1.0 + t.abs()) && k >= 0.0)
            .then(|| self.values.get(k as usize).copied())
            .flatten()
    }
}

/// Classical RK4 for `g' = φ_h(t, g)`, `g(0) = 0`. For continuous `h` the
/// right side at `t = 0` is the limit `E_{μ₀} h(x₀ + x)`; when `h` has
/// jumps the first step is `g(dt) = dt φ_h(dt, 0)`.
pub fn solve_g(problem: &ScalarLawProblem, dt: f64) -> Result<GPath> {
    if !(dt > 0.0) || dt > problem.t_end {
        return Err(Error::invalid(format!("time step {dt} must lie in (0, T_end]")));
    }
    let steps = (problem.t_end / dt).round() as usize;
    let f = |t: f64, g: f64| -> Result<f64> {
        let v = phi_unchecked(problem, t, g)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::non_finite("φ_h", format!("t = {t}, g = {g}")))
        }
    };
    let bootstrapped = !problem.h.breakpoints.is_empty();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(0.0);
    let mut start = 0;
    if bootstrapped {
        values.push(dt * f(dt, 0.0)?);
        start = 1;
    }
    for k in start..steps {
        let (t, g) = (k as f64 * dt, values[k]);
        let k1 = f(t, g)?;
        let k2 = f(t + 0.5 * dt, g + 0.5 * dt * k1)?;
        let k3 = f(t + 0.5 * dt, g + 0.5 * dt * k2)?;
        let k4 = f(t + dt, g + dt * k3)?;
        values.push(g + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    Ok(GPath {
        dt,
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        values,
        bootstrapped,
    })
}

/// Pairwise mean-field coefficients `b(t, x, y) = h(y)`, `σ ≡ 1`.
pub struct HPairwise {
    pub h: ScalarH,
}

impl PairwiseCoefficients for HPairwise {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, _x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = self.h.eval(y[0]);
    }

    fn dispersion(&self, _t: f64, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn feature_count(&self) -> Option<usize> {
        Some(1)
    }

    fn features(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        out[0] = self.h.eval(y[0]);
    }

    fn drift_from_features(&self, _t: f64, _x: &[f64], mean: &[f64], out: &mut [f64]) {
        out[0] = mean[0];
    }

    fn dispersion_from_features(&self, _t: f64, _x: &[f64], _mean: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn descriptor(&self) -> String {
        format!("mean-field-h({})", self.h.name)
    }

    fn dispersion_descriptor(&self) -> String {
        "scaled-identity(dim=1, s=1)".into()
    }
}

/// The particle system whose mean the oracle predicts.
pub fn particle_coefficients(problem: &ScalarLawProblem) -> CoefficientSet {
    CoefficientSet::pairwise(HPairwise { h: problem.h.clone() })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub t: f64,
    pub g: f64,
    pub mean: f64,
    pub se: f64,
    pub predicted: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub dt: f64,
    pub bootstrapped: bool,
    pub sup_error: f64,
    pub sup_error_time: f64,
    pub max_se: f64,
    /// `3 max SE + bias_slack · dt`.
    pub bound: f64,
    pub pass: bool,
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    /// `t,g,mean,se,bound` per recorded time.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "t,g,mean,se,bound")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.t, r.g, r.mean, r.se, self.bound)?;
        }
        Ok(())
    }
}

/// Compares the ensemble mean with `mean(μ₀) + g(t)` at every recorded
/// time in `[0, T_end]`.
pub fn oracle_compare(
    problem: &ScalarLawProblem,
    ensemble: &ParticleEnsemble,
    bias_slack: f64,
) -> Result<OracleReport> {
    if (ensemble.horizon() - problem.t_end).abs() > 1e-9 * (1.0 + problem.t_end) {
        return Err(Error::invalid(format!(
            "ensemble horizon {} differs from the oracle horizon {}",
            ensemble.horizon(),
            problem.t_end
        )));
    }
    if ensemble.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: ensemble.dim(),
            context: "oracle ensemble",
        });
    }
    let expected_law = problem.mu0.initial_law().descriptor();
    if ensemble.provenance().initial_law != expected_law {
        return Err(Error::invalid(format!(
            "ensemble initial law {} does not match {expected_law}",
            ensemble.provenance().initial_law
        )));
    }
    let dt = ensemble.dt();
    let g = solve_g(problem, dt)?;
    let m0 = problem.mu0.mean();
    let start = ensemble.index_of(0.0).expect("recorded ensembles contain t = 0");
    let n = ensemble.n() as f64;
    let mut rows = Vec::new();
    for k in start..ensemble.recorded_len() {
        let t = ensemble.times()[k];
        let gt = g
            .at(t)
            .ok_or_else(|| Error::invalid(format!("recorded time {t} is off the oracle grid")))?;
        let (means, vars) = ensemble.moments(k);
        let predicted = m0 + gt;
        rows.push(OracleRow {
            t,
            g: gt,
            mean: means[0],
            se: (vars[0] / n).sqrt(),
            predicted,
            error: (means[0] - predicted).abs(),
        });
    }
    let (sup_error, sup_error_time) =
        rows.iter().fold(
            (0.0f64, 0.0),
            |acc, r| {
                if r.error > acc.0 {
                    (r.error, r.t)
                } else {
                    acc
                }
            },
        );
    let max_se = rows.iter().map(|r| r.se).fold(0.0, f64::max);
    let bound = 3.0 * max_se + bias_slack * dt;
    Ok(OracleReport {
        dt,
        bootstrapped: g.bootstrapped,
        sup_error,
        sup_error_time,
        max_se,
        bound,
        pass: sup_error <= bound,
        rows,
    })
}
