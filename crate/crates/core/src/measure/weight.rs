use std::fmt;
use std::sync::Arc;

use crate::linalg::norm;

type WeightFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Strictly positive continuous weight φ used by the weighted total variation.
#[derive(Clone)]
pub enum WeightFunction {
    /// `1 + |y|^alpha`
    Polynomial {
        alpha: f64,
    },
    /// `exp(alpha |y|^p)`
    Exponential {
        alpha: f64,
        p: f64,
    },
    Custom(Arc<WeightFn>),
}

impl WeightFunction {
    pub fn polynomial(alpha: f64) -> Self {
        assert!(alpha >= 0.0 && alpha.is_finite(), "polynomial weight needs alpha >= 0");
        WeightFunction::Polynomial { alpha }
    }

    pub fn exponential(alpha: f64, p: f64) -> Self {
        assert!(alpha >= 0.0 && alpha.is_finite(), "exponential weight needs alpha >= 0");
        assert!((0.0..=2.0).contains(&p), "exponential weight needs p in [0, 2]");
        WeightFunction::Exponential { alpha, p }
    }

    /// φ ≡ 1, i.e. the plain total variation.
    pub fn unit() -> Self {
        WeightFunction::Custom(Arc::new(|_| 1.0))
    }

    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        WeightFunction::Custom(Arc::new(f))
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            WeightFunction::Polynomial { alpha } => 1.0 + norm(y).powf(*alpha),
            WeightFunction::Exponential { alpha, p } => (alpha * norm(y).powf(*p)).exp(),
            WeightFunction::Custom(f) => f(y),
        }
    }

    /// `|∇φ(y)|`; central differences for custom weights.
    pub fn gradient_norm(&self, y: &[f64]) -> f64 {
        let r = norm(y);
        match self {
            WeightFunction::Polynomial { alpha } => {
                if *alpha == 0.0 || (r == 0.0 && *alpha >= 1.0) {
                    0.0
                } else {
                    alpha * r.powf(alpha - 1.0)
                }
            }
            WeightFunction::Exponential { alpha, p } => {
                if *alpha == 0.0 || *p == 0.0 || (r == 0.0 && *p >= 1.0) {
                    0.0
                } else {
                    alpha * p * r.powf(p - 1.0) * (alpha * r.powf(*p)).exp()
                }
            }
            WeightFunction::Custom(f) => {
                let mut probe = y.to_vec();
                let mut sq = 0.0;
                for i in 0..y.len() {
                    let h = 1e-6 * (1.0 + y[i].abs());
                    probe[i] = y[i] + h;
                    let up = f(&probe);
                    probe[i] = y[i] - h;
                    let down = f(&probe);
                    probe[i] = y[i];
                    sq += ((up - down) / (2.0 * h)).powi(2);
                }
                sq.sqrt()
            }
        }
    }

    /// Parses `poly:ALPHA`, `exp:ALPHA:P` or `unit`.
    pub fn parse(s: &str) -> Option<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["unit"] => Some(Self::unit()),
            ["poly", a] => {
                let alpha: f64 = a.parse().ok()?;
                (alpha >= 0.0).then(|| Self::polynomial(alpha))
            }
            ["exp", a, p] => {
                let alpha: f64 = a.parse().ok()?;
                let p: f64 = p.parse().ok()?;
                (alpha >= 0.0 && (0.0..=2.0).contains(&p)).then(|| Self::exponential(alpha, p))
            }
            _ => None,
        }
    }
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFunction::Polynomial { alpha } => write!(f, "poly:{alpha}"),
            WeightFunction::Exponential { alpha, p } => write!(f, "exp:{alpha}:{p}"),
            WeightFunction::Custom(_) => write!(f, "custom"),
        }
    }
}

/// Time-indexed weight family φ_t.
#[derive(Clone)]
pub enum TimeWeight {
    Static(WeightFunction),
    Family(Arc<dyn Fn(f64) -> WeightFunction + Send + Sync>),
}

impl TimeWeight {
    pub fn at(&self, t: f64) -> WeightFunction {
        match self {
            TimeWeight::Static(w) => w.clone(),
            TimeWeight::Family(f) => f(t),
        }
    }

    pub fn eval(&self, t: f64, y: &[f64]) -> f64 {
        match self {
            TimeWeight::Static(w) => w.eval(y),
            TimeWeight::Family(f) => f(t).eval(y),
        }
    }
}

impl From<WeightFunction> for TimeWeight {
    fn from(w: WeightFunction) -> Self {
        TimeWeight::Static(w)
    }
}
