//! Built-in coefficients addressable by name.
//!
//! Pairwise entries act componentwise with `σ = s·I`:
//!
//! | name               | `b(t, x, y)`   |
//! |--------------------|----------------|
//! | `zero`             | `0` (and `σ = 0`) |
//! | `constant`         | `c`            |
//! | `linear-meanfield` | `θ (y − x)`    |
//! | `cubic`            | `θ x³`         |
//! | `sign`             | `sign(y)`      |
//! | `sin-product`      | `sin(x y)`     |
//! | `OU-attraction`    | `−θ x + c`     |
//!
//! `delayed-mean` is the delayed form with `β̃(t, s, x, y) = y`, `κ = δ_{−τ}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    CoefficientSet, ConstantDispersion, DelayedInteractionDrift, Dispersion, InteractionKernel, PairwiseCoefficients,
    PairwiseMeanFieldSpec, PathAccess,
};
use crate::error::{Error, Result};
use crate::linalg::reduce_drift;

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogParams {
    pub dim: usize,
    pub theta: f64,
    pub sigma: f64,
    pub c: f64,
    pub tau: f64,
}

impl Default for CatalogParams {
    fn default() -> Self {
        Self {
            dim: 1,
            theta: 1.0,
            sigma: 1.0,
            c: 0.0,
            tau: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairwiseKind {
    Zero,
    Constant,
    LinearMeanField,
    Cubic,
    Sign,
    SinProduct,
    OuAttraction,
}

impl PairwiseKind {
    pub fn name(self) -> &'static str {
        match self {
            PairwiseKind::Zero => "zero",
            PairwiseKind::Constant => "constant",
            PairwiseKind::LinearMeanField => "linear-meanfield",
            PairwiseKind::Cubic => "cubic",
            PairwiseKind::Sign => "sign",
            PairwiseKind::SinProduct => "sin-product",
            PairwiseKind::OuAttraction => "OU-attraction",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        let kinds = [
            PairwiseKind::Zero,
            PairwiseKind::Constant,
            PairwiseKind::LinearMeanField,
            PairwiseKind::Cubic,
            PairwiseKind::Sign,
            PairwiseKind::SinProduct,
            PairwiseKind::OuAttraction,
        ];
        kinds.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone)]
pub struct CatalogPairwise {
    pub kind: PairwiseKind,
    pub dim: usize,
    pub theta: f64,
    pub sigma: f64,
    pub c: f64,
}

impl CatalogPairwise {
    pub fn new(kind: PairwiseKind, p: &CatalogParams) -> Self {
        Self {
            kind,
            dim: p.dim,
            theta: p.theta,
            sigma: if kind == PairwiseKind::Zero { 0.0 } else { p.sigma },
            c: p.c,
        }
    }

    fn fill_sigma(&self, out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = self.sigma;
        }
    }
}

impl PairwiseCoefficients for CatalogPairwise {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = match self.kind {
                PairwiseKind::Zero => 0.0,
                PairwiseKind::Constant => self.c,
                PairwiseKind::LinearMeanField => self.theta * (y[i] - x[i]),
                PairwiseKind::Cubic => self.theta * x[i].powi(3),
                PairwiseKind::Sign => sign(y[i]),
                PairwiseKind::SinProduct => (x[i] * y[i]).sin(),
                PairwiseKind::OuAttraction => -self.theta * x[i] + self.c,
            };
        }
    }

    fn dispersion(&self, _t: f64, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        self.fill_sigma(out);
    }

    fn feature_count(&self) -> Option<usize> {
        match self.kind {
            PairwiseKind::LinearMeanField | PairwiseKind::Sign => Some(self.dim),
            PairwiseKind::SinProduct => None,
            _ => Some(0),
        }
    }

    fn features(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        match self.kind {
            PairwiseKind::LinearMeanField => out.copy_from_slice(y),
            PairwiseKind::Sign => {
                for (o, v) in out.iter_mut().zip(y) {
                    *o = sign(*v);
                }
            }
            _ => {}
        }
    }

    fn drift_from_features(&self, t: f64, x: &[f64], mean: &[f64], out: &mut [f64]) {
        match self.kind {
            PairwiseKind::LinearMeanField => {
                for i in 0..self.dim {
                    out[i] = self.theta * (mean[i] - x[i]);
                }
            }
            PairwiseKind::Sign => out.copy_from_slice(mean),
            // y-independent entries
            _ => self.drift(t, x, x, out),
        }
    }

    fn dispersion_from_features(&self, _t: f64, _x: &[f64], _mean: &[f64], out: &mut [f64]) {
        self.fill_sigma(out);
    }

    fn descriptor(&self) -> String {
        format!(
            "{}(dim={}, theta={}, sigma={}, c={})",
            self.kind.name(),
            self.dim,
            self.theta,
            self.sigma,
            self.c
        )
    }

    fn dispersion_descriptor(&self) -> String {
        format!("scaled-identity(dim={}, s={})", self.dim, self.sigma)
    }
}

/// `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `β̃(t, s, x, y) = y`, separable with the identity features.
#[derive(Debug, Clone)]
pub struct IdentityKernel {
    pub dim: usize,
}

impl InteractionKernel for IdentityKernel {
    fn noise_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _t: f64, _s: f64, _path: &dyn PathAccess, y: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(y);
        Ok(())
    }

    fn feature_count(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn features(&self, _t: f64, _s: f64, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }

    fn from_features(&self, _t: f64, _s: f64, _path: &dyn PathAccess, mean: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(mean);
        Ok(())
    }

    fn descriptor(&self) -> String {
        "identity".into()
    }
}

/// A pairwise spec whose dispersion does not depend on `y`, viewed as a
/// delayed interaction with `κ = δ_0` and `β̃ = σ⁺ b`. The dispersion is
/// read at `y = 0`.
struct PairwiseKernel(PairwiseMeanFieldSpec);

impl InteractionKernel for PairwiseKernel {
    fn noise_dim(&self) -> usize {
        self.0.noise_dim()
    }

    fn eval(&self, t: f64, _s: f64, path: &dyn PathAccess, y: &[f64], out: &mut [f64]) -> Result<()> {
        let (d, d1) = (self.0.dim(), self.0.noise_dim());
        let x = path.current();
        let mut b = vec![0.0; d];
        let mut m = vec![0.0; d * d1];
        self.0.drift(t, x, y, &mut b);
        self.0.dispersion(t, x, &vec![0.0; d], &mut m);
        if !reduce_drift(&m, d, d1, &b, out) {
            out.fill(f64::INFINITY);
        }
        Ok(())
    }

    fn descriptor(&self) -> String {
        format!("reduced {}", self.0.descriptor())
    }
}

struct PairwiseDispersion(PairwiseMeanFieldSpec);

impl Dispersion for PairwiseDispersion {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn noise_dim(&self) -> usize {
        self.0.noise_dim()
    }

    fn eval(&self, t: f64, path: &dyn PathAccess, out: &mut [f64]) -> Result<()> {
        let x = path.current();
        self.0.dispersion(t, x, &vec![0.0; x.len()], out);
        Ok(())
    }

    fn descriptor(&self) -> String {
        self.0.dispersion_descriptor()
    }
}

/// Delayed-interaction view of a pairwise spec with `y`-independent `σ`.
/// Drifts outside the range of `σ` yield an infinite kernel value.
pub fn pairwise_as_interaction(spec: &PairwiseMeanFieldSpec) -> Result<(DelayedInteractionDrift, Arc<dyn Dispersion>)> {
    let drift = DelayedInteractionDrift::dirac(Arc::new(PairwiseKernel(spec.clone())), 0.0, 0.0)?;
    Ok((drift, Arc::new(PairwiseDispersion(spec.clone()))))
}

pub fn pairwise(name: &str, p: &CatalogParams) -> Result<PairwiseMeanFieldSpec> {
    let kind =
        PairwiseKind::parse(name).ok_or_else(|| Error::Config(format!("unknown pairwise coefficient '{name}'")))?;
    if p.dim == 0 || p.dim > 3 {
        return Err(Error::Config(format!(
            "coefficients.dim must be 1, 2 or 3, got {}",
            p.dim
        )));
    }
    Ok(PairwiseMeanFieldSpec::new(CatalogPairwise::new(kind, p)))
}

type Builder = Arc<dyn Fn(&CatalogParams) -> Result<CoefficientSet> + Send + Sync>;

/// Name → coefficient-set constructor; starts with the built-in catalog.
#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<String, Builder>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Registry {
    pub fn builtin() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        for kind in [
            PairwiseKind::Zero,
            PairwiseKind::Constant,
            PairwiseKind::LinearMeanField,
            PairwiseKind::Cubic,
            PairwiseKind::Sign,
            PairwiseKind::SinProduct,
            PairwiseKind::OuAttraction,
        ] {
            r.register(kind.name(), move |p| {
                Ok(CoefficientSet::Pairwise(pairwise(kind.name(), p)?))
            });
        }
        r.register("delayed-mean", |p| {
            let drift = DelayedInteractionDrift::dirac(Arc::new(IdentityKernel { dim: p.dim }), -p.tau, p.tau)?;
            CoefficientSet::delayed(drift, Arc::new(ConstantDispersion::scaled_identity(p.dim, p.sigma)))
        });
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        build: impl Fn(&CatalogParams) -> Result<CoefficientSet> + Send + Sync + 'static,
    ) {
        self.entries.insert(name.to_ascii_lowercase(), Arc::new(build));
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn build(&self, name: &str, p: &CatalogParams) -> Result<CoefficientSet> {
        let b = self
            .entries
            .get(&name.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown coefficients.name '{name}'")))?;
        b(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{eval_pairwise_mean_field, PointPath};
    use crate::measure::LawRef;

    #[test]
    fn features_reproduce_direct_sums() {
        let ys: Vec<f64> = (0..40).map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.31).collect();
        for name in ["zero", "constant", "linear-meanfield", "cubic", "sign", "OU-attraction"] {
            for dim in [1usize, 2] {
                let p = CatalogParams {
                    dim,
                    theta: 0.7,
                    sigma: 1.3,
                    c: 0.4,
                    tau: 0.0,
                };
                let spec = pairwise(name, &p).unwrap();
                let pos = &ys[..(ys.len() / dim) * dim];
                let x: Vec<f64> = (0..dim).map(|i| 0.9 - i as f64).collect();
                let (b, s) = eval_pairwise_mean_field(&spec, 0.3, &x, pos).unwrap();
                let f = spec.feature_count().unwrap();
                let law = LawRef {
                    dim,
                    positions: pos,
                    weights: None,
                    mean: None,
                };
                let mut mean = vec![0.0; f];
                let mut buf = vec![0.0; f];
                for j in 0..law.len() {
                    spec.features(0.3, law.atom(j), &mut buf);
                    for (m, v) in mean.iter_mut().zip(&buf) {
                        *m += v / law.len() as f64;
                    }
                }
                let mut bf = vec![0.0; dim];
                let mut sf = vec![0.0; dim * dim];
                spec.drift_from_features(0.3, &x, &mean, &mut bf);
                spec.dispersion_from_features(0.3, &x, &mean, &mut sf);
                for (a, c) in b.iter().zip(&bf) {
                    assert!((a - c).abs() < 1e-13, "{name} d={dim}: {b:?} vs {bf:?}");
                }
                for (a, c) in s.iter().zip(&sf) {
                    assert!((a - c).abs() < 1e-13, "{name} d={dim}: {s:?} vs {sf:?}");
                }
            }
        }
    }

    #[test]
    fn registry_lookup() {
        let r = Registry::builtin();
        assert!(r.build("ou-attraction", &CatalogParams::default()).is_ok());
        assert!(r.build("nope", &CatalogParams::default()).is_err());
        let d = r
            .build(
                "delayed-mean",
                &CatalogParams {
                    tau: 0.1,
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(d.delay(), 0.1);
    }

    #[test]
    fn interaction_view_of_ou() {
        let p = CatalogParams {
            sigma: 2.0,
            ..Default::default()
        };
        let (drift, disp) = pairwise_as_interaction(&pairwise("OU-attraction", &p).unwrap()).unwrap();
        let mut out = [0.0];
        drift
            .kernel()
            .eval(0.0, 0.0, &PointPath { time: 0.0, x: &[3.0] }, &[1.0], &mut out)
            .unwrap();
        assert_eq!(out[0], -1.5);
        let mut s = [0.0];
        disp.eval(0.0, &PointPath { time: 0.0, x: &[3.0] }, &mut s).unwrap();
        assert_eq!(s[0], 2.0);
    }
}
