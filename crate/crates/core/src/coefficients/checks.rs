//! Sampled checks of the growth and non-degeneracy hypotheses.
//!
//! Every margin is affine in the constant `C` (`a − C·w` with `w > 0`), so
//! the per-sample terms are computed once and both the fixed-`C` verdict and
//! the smallest passing `C` are read off the cached table.

use rayon::prelude::*;
use serde::Serialize;

use super::PairwiseMeanFieldSpec;
use crate::error::{Error, Result};
use crate::linalg::{dot, mat_t_vec, min_symmetric_eigenvalue, norm, outer_gram, reduce_drift};
use crate::lyapunov::LyapunovCertificate;

/// Inclusive grid `lo, lo + h, ..., hi` built as `lo + k h`.
pub fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && hi >= lo, "axis needs step > 0 and hi >= lo");
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// All points of `axis^dim`, last coordinate fastest.
pub fn cube_points(dim: usize, axis: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(dim)];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Tensor sample set over `(t, s, x, y)`; index order is lexicographic with
/// `y` fastest.
#[derive(Debug, Clone)]
pub struct SampleDomain {
    pub times: Vec<f64>,
    pub lags: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SamplePoint<'a> {
    pub t: f64,
    pub s: f64,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleLocation {
    pub index: usize,
    pub t: f64,
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SampleDomain {
    pub fn new(times: Vec<f64>, lags: Vec<f64>, xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || lags.is_empty() || xs.is_empty() || ys.is_empty() {
            return Err(Error::Empty("sample domain"));
        }
        let d = xs[0].len();
        if xs.iter().chain(&ys).any(|p| p.len() != d) {
            return Err(Error::invalid("sample points have inconsistent dimensions"));
        }
        Ok(Self { times, lags, xs, ys })
    }

    /// `x` and `y` both ranging over the cube `[lo, hi]^dim` with spacing `step`,
    /// at the single time `t = 0` and lag `s = 0`.
    pub fn cube(dim: usize, lo: f64, hi: f64, step: f64) -> Self {
        let pts = cube_points(dim, &axis(lo, hi, step));
        Self {
            times: vec![0.0],
            lags: vec![0.0],
            xs: pts.clone(),
            ys: pts,
        }
    }

    pub fn with_times(mut self, times: Vec<f64>) -> Self {
        self.times = times;
        self
    }

    pub fn with_lags(mut self, lags: Vec<f64>) -> Self {
        self.lags = lags;
        self
    }

    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }

    pub fn len(&self) -> usize {
        self.times.len() * self.lags.len() * self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, idx: usize) -> SamplePoint<'_> {
        let ny = self.ys.len();
        let nx = self.xs.len();
        let ns = self.lags.len();
        let y = idx % ny;
        let x = (idx / ny) % nx;
        let s = (idx / (ny * nx)) % ns;
        let t = idx / (ny * nx * ns);
        SamplePoint {
            t: self.times[t],
            s: self.lags[s],
            x: &self.xs[x],
            y: &self.ys[y],
        }
    }

    pub fn location(&self, idx: usize) -> SampleLocation {
        let p = self.point(idx);
        SampleLocation {
            index: idx,
            t: p.t,
            s: p.s,
            x: p.x.to_vec(),
            y: p.y.to_vec(),
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "{} times x {} lags x {} x-points x {} y-points (d={})",
            self.times.len(),
            self.lags.len(),
            self.xs.len(),
            self.ys.len(),
            self.dim()
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginReport {
    pub label: String,
    /// Largest sampled margin; positive means violated.
    pub worst: f64,
    pub argmax: Option<SampleLocation>,
    pub pass: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    /// The constant the margins were evaluated at; `None` if a search found
    /// no passing value.
    pub constant: Option<f64>,
    pub margins: Vec<MarginReport>,
    pub pass: bool,
    pub domain: String,
}

/// Index of the largest value; NaN counts as `+∞`, ties go to the lowest index.
pub fn deterministic_argmax(values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Per-sample terms of a margin `a − C·w`.
#[derive(Debug, Clone)]
pub struct MarginTable {
    pub label: String,
    pub a: Vec<f64>,
    pub w: Vec<f64>,
    /// Pass requires `< 0` instead of `≤ 0`.
    pub strict: bool,
}

impl MarginTable {
    pub fn values(&self, c: f64) -> Vec<f64> {
        self.a.iter().zip(&self.w).map(|(a, w)| a - c * w).collect()
    }

    pub fn passes(&self, c: f64) -> bool {
        self.a.iter().zip(&self.w).all(|(a, w)| {
            let m = a - c * w;
            if self.strict {
                m < 0.0
            } else {
                m <= 0.0
            }
        })
    }

    pub fn report(&self, c: f64, locate: impl Fn(usize) -> SampleLocation) -> MarginReport {
        let vals = self.values(c);
        let best = deterministic_argmax(&vals);
        MarginReport {
            label: self.label.clone(),
            worst: best.map_or(f64::NEG_INFINITY, |b| b.1),
            argmax: best.map(|(i, _)| locate(i)),
            pass: self.passes(c),
            samples: vals.len(),
        }
    }
}

/// Smallest `C > 0` with every table passing, by bracketing and bisection
/// to relative tolerance `1e-6`. `None` if no `C ≤ 1e12` passes.
pub fn smallest_constant(tables: &[&MarginTable]) -> Option<f64> {
    let pass = |c: f64| tables.iter().all(|t| t.passes(c));
    let mut hi = 1.0;
    while !pass(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return None;
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if pass(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Either a caller-supplied constant or a search for the smallest one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstantChoice {
    Fixed(f64),
    Search,
}

pub(crate) fn resolve(
    choice: ConstantChoice,
    tables: &[&MarginTable],
    locate: impl Fn(usize) -> SampleLocation + Copy,
    domain: String,
) -> Result<CheckReport> {
    let constant = match choice {
        ConstantChoice::Fixed(c) => {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("constant C must be positive, got {c}")));
            }
            Some(c)
        }
        ConstantChoice::Search => smallest_constant(tables),
    };
    let c = constant.unwrap_or(1e12);
    let margins: Vec<MarginReport> = tables.iter().map(|t| t.report(c, locate)).collect();
    let pass = constant.is_some() && margins.iter().all(|m| m.pass);
    Ok(CheckReport {
        constant,
        margins,
        pass,
        domain,
    })
}

struct PointTerms {
    /// `|x|²(2⟨x, b⟩ + |σ|²)`
    drift_part: f64,
    /// `|σᵀ x|²`
    sigma_x: f64,
    /// `|b̃|`, infinite when `b` leaves the range of `σ`
    reduced: f64,
    xn: f64,
    yn: f64,
}

fn point_terms(spec: &PairwiseMeanFieldSpec, t: f64, x: &[f64], y: &[f64]) -> PointTerms {
    let (d, d1) = (spec.dim(), spec.noise_dim());
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d1];
    spec.drift(t, x, y, &mut b);
    spec.dispersion(t, x, y, &mut s);
    let x2 = dot(x, x);
    let drift_part = x2 * (2.0 * dot(x, &b) + dot(&s, &s));
    let mut stx = vec![0.0; d1];
    mat_t_vec(&s, d, d1, x, &mut stx);
    let mut r = vec![0.0; d1];
    let reduced = if reduce_drift(&s, d, d1, &b, &mut r) {
        norm(&r)
    } else {
        f64::INFINITY
    };
    PointTerms {
        drift_part,
        sigma_x: dot(&stx, &stx),
        reduced,
        xn: x2.sqrt(),
        yn: norm(y),
    }
}

fn validate_common(q: f64, alpha: f64, domain: &SampleDomain, spec: &PairwiseMeanFieldSpec) -> Result<()> {
    if !(q > 2.0) {
        return Err(Error::invalid(format!("q must exceed 2, got {q}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
    }
    if domain.dim() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: domain.dim(),
            context: "sample domain",
        });
    }
    Ok(())
}

/// Polynomial growth case: margins
/// `|x|²(2⟨x,b⟩+|σ|²) + (α−2)|σᵀx|² − C(1+|x|⁴)` and
/// `|b̃| − C(1+|y|^{α/2})(1+|x|^{α/4})` with `b̃` the least-squares
/// solution of `σ b̃ = b`.
pub fn check_polynomial_case(
    spec: &PairwiseMeanFieldSpec,
    alpha: f64,
    q: f64,
    c: ConstantChoice,
    domain: &SampleDomain,
) -> Result<CheckReport> {
    validate_common(q, alpha, domain, spec)?;
    let terms: Vec<(f64, f64, f64, f64)> = (0..domain.len())
        .into_par_iter()
        .map(|i| {
            let p = domain.point(i);
            let k = point_terms(spec, p.t, p.x, p.y);
            (
                k.drift_part + (alpha - 2.0) * k.sigma_x,
                1.0 + k.xn.powi(4),
                k.reduced,
                (1.0 + k.yn.powf(alpha / 2.0)) * (1.0 + k.xn.powf(alpha / 4.0)),
            )
        })
        .collect();
    let (generator, growth) = split_tables(&terms, "generator", "reduced-drift growth");
    resolve(c, &[&generator, &growth], |i| domain.location(i), domain.describe())
}

/// Exponential growth case with `p ∈ [1, 2]`: margins
/// `|x|²(2⟨x,b⟩+|σ|²) + (αp|x|^p+p−2)|σᵀx|² − C(1+|x|^{4−p})` and
/// `|b̃| − C exp(α|y|^p/2 + α|x|^p/4)`.
pub fn check_exponential_case(
    spec: &PairwiseMeanFieldSpec,
    alpha: f64,
    p: f64,
    q: f64,
    c: ConstantChoice,
    domain: &SampleDomain,
) -> Result<CheckReport> {
    validate_common(q, alpha, domain, spec)?;
    if !(alpha > 0.0) {
        return Err(Error::invalid("case 2 needs alpha > 0"));
    }
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid(format!("case 2 needs p in [1, 2], got {p}")));
    }
    let terms: Vec<(f64, f64, f64, f64)> = (0..domain.len())
        .into_par_iter()
        .map(|i| {
            let pt = domain.point(i);
            let k = point_terms(spec, pt.t, pt.x, pt.y);
            let xp = k.xn.powf(p);
            (
                k.drift_part + (alpha * p * xp + p - 2.0) * k.sigma_x,
                1.0 + k.xn.powf(4.0 - p),
                k.reduced,
                (alpha * k.yn.powf(p) / 2.0 + alpha * xp / 4.0).exp(),
            )
        })
        .collect();
    let (generator, growth) = split_tables(&terms, "generator", "reduced-drift growth");
    resolve(c, &[&generator, &growth], |i| domain.location(i), domain.describe())
}

fn split_tables(terms: &[(f64, f64, f64, f64)], l1: &str, l2: &str) -> (MarginTable, MarginTable) {
    let t1 = MarginTable {
        label: l1.into(),
        a: terms.iter().map(|t| t.0).collect(),
        w: terms.iter().map(|t| t.1).collect(),
        strict: false,
    };
    let t2 = MarginTable {
        label: l2.into(),
        a: terms.iter().map(|t| t.2).collect(),
        w: terms.iter().map(|t| t.3).collect(),
        strict: false,
    };
    (t1, t2)
}

/// Worst `|b|^q + |σ|^q − V(x)V(y)`; passes iff every margin is `< 0`.
pub fn check_h_growth(
    spec: &PairwiseMeanFieldSpec,
    cert: &LyapunovCertificate,
    q: f64,
    domain: &SampleDomain,
) -> Result<MarginReport> {
    if !(q > 2.0) {
        return Err(Error::invalid(format!("q must exceed 2, got {q}")));
    }
    let (d, d1) = (spec.dim(), spec.noise_dim());
    let a: Vec<f64> = (0..domain.len())
        .into_par_iter()
        .map(|i| {
            let p = domain.point(i);
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * d1];
            spec.drift(p.t, p.x, p.y, &mut b);
            spec.dispersion(p.t, p.x, p.y, &mut s);
            norm(&b).powf(q) + norm(&s).powf(q) - cert.v.value(p.t, p.x) * cert.v.value(p.t, p.y)
        })
        .collect();
    let table = MarginTable {
        label: "H growth".into(),
        w: vec![0.0; a.len()],
        a,
        strict: true,
    };
    Ok(table.report(0.0, |i| domain.location(i)))
}

#[derive(Debug, Clone, Serialize)]
pub struct NondegeneracyReport {
    /// Smallest eigenvalue of `σσᵀ` over the samples.
    pub min_eigenvalue: f64,
    pub argmin: SampleLocation,
    pub pass: bool,
    pub samples: usize,
}

/// Minimum over sampled `(t, x, y)` with `|x|, |y| ≤ R` of the smallest
/// eigenvalue of `σσᵀ`.
pub fn check_nondegeneracy(
    spec: &PairwiseMeanFieldSpec,
    radius: f64,
    times: &[f64],
    axis_points: &[f64],
) -> Result<NondegeneracyReport> {
    let (d, d1) = (spec.dim(), spec.noise_dim());
    let pts: Vec<Vec<f64>> = cube_points(d, axis_points)
        .into_iter()
        .filter(|p| norm(p) <= radius)
        .collect();
    if times.is_empty() || pts.is_empty() {
        return Err(Error::Empty("non-degeneracy sample grid"));
    }
    let domain = SampleDomain::new(times.to_vec(), vec![0.0], pts.clone(), pts)?;
    let vals: Vec<Result<f64>> = (0..domain.len())
        .into_par_iter()
        .map(|i| {
            let p = domain.point(i);
            let mut s = vec![0.0; d * d1];
            spec.dispersion(p.t, p.x, p.y, &mut s);
            if let Some(k) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::non_finite(
                    "dispersion entry",
                    format!("entry {k} at t={}, x={:?}, y={:?}", p.t, p.x, p.y),
                ));
            }
            Ok(min_symmetric_eigenvalue(&outer_gram(&s, d, d1), d))
        })
        .collect();
    let vals = vals.into_iter().collect::<Result<Vec<f64>>>()?;
    let neg: Vec<f64> = vals.iter().map(|v| -v).collect();
    let (i, m) = deterministic_argmax(&neg).expect("nonempty");
    let min = -m;
    Ok(NondegeneracyReport {
        min_eigenvalue: min,
        argmin: domain.location(i),
        pass: min > 0.0,
        samples: vals.len(),
    })
}
