use std::sync::Arc;

use crate::linalg::dot;

/// `V(t, y)` with its spatial gradient and Hessian (row-major `d × d`).
pub trait LyapunovFunction: Send + Sync {
    fn value(&self, t: f64, y: &[f64]) -> f64;
    fn gradient(&self, t: f64, y: &[f64], out: &mut [f64]);
    fn hessian(&self, t: f64, y: &[f64], out: &mut [f64]);
    fn time_derivative(&self, _t: f64, _y: &[f64]) -> f64 {
        0.0
    }
    fn descriptor(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialProfile {
    /// `1 + |y|^α`
    Polynomial { alpha: f64 },
    /// `exp(α |y|^p)`
    Exponential { alpha: f64, p: f64 },
}

impl RadialProfile {
    /// `(h, h', h'')` of the profile as a function of `s = |y|²`, for `s ≥ 1`.
    fn outer(&self, s: f64) -> (f64, f64, f64) {
        match *self {
            RadialProfile::Polynomial { alpha } => {
                let k = alpha / 2.0;
                let h = 1.0 + s.powf(k);
                let h1 = k * s.powf(k - 1.0);
                let h2 = k * (k - 1.0) * s.powf(k - 2.0);
                (h, h1, h2)
            }
            RadialProfile::Exponential { alpha, p } => {
                let k = p / 2.0;
                let h = (alpha * s.powf(k)).exp();
                let g1 = alpha * k * s.powf(k - 1.0);
                let g2 = alpha * k * (k - 1.0) * s.powf(k - 2.0);
                (h, g1 * h, (g2 + g1 * g1) * h)
            }
        }
    }
}

/// Radial `V(y) = h(|y|²)` equal to the closed-form profile for `|y| ≥ 1`
/// and, inside the unit ball, to the quadratic in `|y|²` that matches value,
/// first and second derivative at `|y| = 1`. The result is `C²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialLyapunov {
    profile: RadialProfile,
    /// inner quadratic `a + b s + c s²`
    a: f64,
    b: f64,
    c: f64,
}

impl RadialLyapunov {
    pub fn new(profile: RadialProfile) -> Self {
        let (h, h1, h2) = profile.outer(1.0);
        let c = h2 / 2.0;
        let b = h1 - 2.0 * c;
        let a = h - b - c;
        Self { profile, a, b, c }
    }

    /// Equals `1 + |y|^α` for `|y| ≥ 1`.
    pub fn polynomial(alpha: f64) -> Self {
        assert!(alpha >= 0.0, "polynomial Lyapunov function needs alpha >= 0");
        Self::new(RadialProfile::Polynomial { alpha })
    }

    /// Equals `exp(α |y|^p)` for `|y| ≥ 1`.
    pub fn exponential(alpha: f64, p: f64) -> Self {
        assert!(
            alpha >= 0.0 && (0.0..=2.0).contains(&p),
            "exponential Lyapunov function needs alpha >= 0, p in [0, 2]"
        );
        Self::new(RadialProfile::Exponential { alpha, p })
    }

    /// `1 + |y|²` everywhere.
    pub fn quadratic() -> Self {
        Self::polynomial(2.0)
    }

    pub fn profile(&self) -> RadialProfile {
        self.profile
    }

    fn h(&self, s: f64) -> (f64, f64, f64) {
        if s >= 1.0 {
            self.profile.outer(s)
        } else {
            (
                self.a + s * (self.b + s * self.c),
                self.b + 2.0 * self.c * s,
                2.0 * self.c,
            )
        }
    }
}

impl LyapunovFunction for RadialLyapunov {
    fn value(&self, _t: f64, y: &[f64]) -> f64 {
        self.h(dot(y, y)).0
    }

    fn gradient(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        let (_, h1, _) = self.h(dot(y, y));
        for (o, v) in out.iter_mut().zip(y) {
            *o = 2.0 * h1 * v;
        }
    }

    fn hessian(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        let d = y.len();
        let (_, h1, h2) = self.h(dot(y, y));
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 2.0 * h1 } else { 0.0 };
                out[i * d + j] = delta + 4.0 * h2 * y[i] * y[j];
            }
        }
    }

    fn descriptor(&self) -> String {
        match self.profile {
            RadialProfile::Polynomial { alpha } => format!("poly:{alpha}"),
            RadialProfile::Exponential { alpha, p } => format!("exp:{alpha}:{p}"),
        }
    }
}

/// `λ V`.
#[derive(Clone)]
pub struct ScaledLyapunov {
    pub inner: Arc<dyn LyapunovFunction>,
    pub lambda: f64,
}

impl LyapunovFunction for ScaledLyapunov {
    fn value(&self, t: f64, y: &[f64]) -> f64 {
        self.lambda * self.inner.value(t, y)
    }

    fn gradient(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.inner.gradient(t, y, out);
        out.iter_mut().for_each(|v| *v *= self.lambda);
    }

    fn hessian(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.inner.hessian(t, y, out);
        out.iter_mut().for_each(|v| *v *= self.lambda);
    }

    fn time_derivative(&self, t: f64, y: &[f64]) -> f64 {
        self.lambda * self.inner.time_derivative(t, y)
    }

    fn descriptor(&self) -> String {
        format!("{} * {}", self.lambda, self.inner.descriptor())
    }
}

type ValueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type VecFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Closure-backed `V` with explicit derivatives.
#[derive(Clone)]
pub struct FnLyapunov {
    name: String,
    value: Arc<ValueFn>,
    gradient: Arc<VecFn>,
    hessian: Arc<VecFn>,
    time_derivative: Option<Arc<ValueFn>>,
}

impl FnLyapunov {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        hessian: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
            time_derivative: None,
        }
    }

    pub fn with_time_derivative(mut self, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.time_derivative = Some(Arc::new(f));
        self
    }
}

impl LyapunovFunction for FnLyapunov {
    fn value(&self, t: f64, y: &[f64]) -> f64 {
        (self.value)(t, y)
    }

    fn gradient(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.gradient)(t, y, out)
    }

    fn hessian(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.hessian)(t, y, out)
    }

    fn time_derivative(&self, t: f64, y: &[f64]) -> f64 {
        self.time_derivative.as_ref().map_or(0.0, |f| f(t, y))
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }
}
