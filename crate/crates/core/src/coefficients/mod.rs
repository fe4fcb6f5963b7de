//! Coefficient specifications in three structural forms.
//!
//! * [`FactoredDriftSpec`]: `b(t, x, μ) = σ(t, x) · b̃(t, x, μ)` for a path
//!   dependent dispersion and a law dependent reduced drift.
//! * [`DelayedInteractionDrift`]: `b̃(t, x, μ) = ∫∫ β̃(t, s, x, y) μ_{t+s}(dy) κ(ds)`
//!   with `κ` a finite atom list on `[-τ, 0]`.
//! * [`PairwiseMeanFieldSpec`]: `b(t, x, μ) = ∫ b(t, x, y) μ_t(dy)` and likewise
//!   for `σ`.
//!
//! Paths are read through [`PathAccess`] and laws through [`LawSource`], so
//! the same coefficient objects serve the solver, the checkers and the
//! stability estimators.
//!
//! Kernels may declare a separable form (a finite feature vector whose law
//! average determines the interaction exactly). The solver then averages
//! features once per step instead of summing over all particle pairs.

pub mod catalog;
pub mod checks;
mod closures;

use std::sync::Arc;

use rayon::prelude::*;

pub use closures::{ConstantDispersion, FnDispersion, FnKernel, FnPairwise, FnReducedDrift};

use crate::error::{Error, Result};
use crate::linalg::{mat_vec, reduce_drift};
use crate::measure::{LawRef, LawSource};

/// A path `x` on `[-τ, t]` seen at its current time `t`.
pub trait PathAccess {
    fn time(&self) -> f64;
    fn current(&self) -> &[f64];
    /// `x_s` for `s ≤ t`; resolves to the nearest stored point at or below `s`.
    fn at(&self, time: f64) -> Result<&[f64]>;
}

/// A constant path sitting at `x`.
#[derive(Debug, Clone, Copy)]
pub struct PointPath<'a> {
    pub time: f64,
    pub x: &'a [f64],
}

impl PathAccess for PointPath<'_> {
    fn time(&self) -> f64 {
        self.time
    }

    fn current(&self) -> &[f64] {
        self.x
    }

    fn at(&self, _time: f64) -> Result<&[f64]> {
        Ok(self.x)
    }
}

/// A path given by its values on an increasing time grid; the last grid
/// point is the current time.
#[derive(Debug, Clone)]
pub struct SampledPath {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(dim: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Empty("path time grid"));
        }
        if values.len() != times.len() * dim {
            return Err(Error::Dimension {
                expected: times.len() * dim,
                got: values.len(),
                context: "path values",
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("path time grid must be strictly increasing"));
        }
        Ok(Self { dim, times, values })
    }
}

impl PathAccess for SampledPath {
    fn time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn current(&self) -> &[f64] {
        let n = self.times.len();
        &self.values[(n - 1) * self.dim..]
    }

    fn at(&self, time: f64) -> Result<&[f64]> {
        let i = crate::measure::slice_index(self.times.len(), |i| self.times[i], time)?;
        Ok(&self.values[i * self.dim..(i + 1) * self.dim])
    }
}

/// `σ(t, x)` with values in `ℝ^{d×d₁}`, written row-major.
pub trait Dispersion: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn eval(&self, t: f64, path: &dyn PathAccess, out: &mut [f64]) -> Result<()>;
    /// Identifies the map; two dispersions with equal descriptors are
    /// treated as the same coefficient.
    fn descriptor(&self) -> String;
    /// Whether `σ(t, x)` depends on `x` only through `x|[-τ, t]`.
    fn adapted(&self) -> bool {
        true
    }
}

/// `b̃(t, x, μ)` with values in `ℝ^{d₁}`.
pub trait ReducedDrift: Send + Sync {
    fn noise_dim(&self) -> usize;
    fn eval(&self, t: f64, path: &dyn PathAccess, laws: &dyn LawSource, out: &mut [f64]) -> Result<()>;
    fn descriptor(&self) -> String {
        "custom".into()
    }
}

/// `β̃(t, s, x, y)` with values in `ℝ^{d₁}`.
pub trait InteractionKernel: Send + Sync {
    fn noise_dim(&self) -> usize;
    fn eval(&self, t: f64, s: f64, path: &dyn PathAccess, y: &[f64], out: &mut [f64]) -> Result<()>;
    /// `Some(k)` when `β̃(t, s, x, ·)` is affine in a `k`-vector of
    /// features `f(t, s, y)`, so that its law average only needs `∫ f dμ`.
    fn feature_count(&self) -> Option<usize> {
        None
    }
    fn features(&self, _t: f64, _s: f64, _y: &[f64], _out: &mut [f64]) {}
    fn from_features(&self, _t: f64, _s: f64, _path: &dyn PathAccess, _mean: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::invalid("kernel has no separable form"))
    }
    fn descriptor(&self) -> String {
        "custom".into()
    }
}

/// `b(t, x, y)` in `ℝ^d` and `σ(t, x, y)` in `ℝ^{d×d₁}`.
pub trait PairwiseCoefficients: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]);
    fn dispersion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]);
    /// Separable form, as for [`InteractionKernel::feature_count`]. Both
    /// `b` and `σ` must be affine in the same features.
    fn feature_count(&self) -> Option<usize> {
        None
    }
    fn features(&self, _t: f64, _y: &[f64], _out: &mut [f64]) {}
    fn drift_from_features(&self, _t: f64, _x: &[f64], _mean: &[f64], _out: &mut [f64]) {}
    fn dispersion_from_features(&self, _t: f64, _x: &[f64], _mean: &[f64], _out: &mut [f64]) {}
    fn descriptor(&self) -> String {
        "custom".into()
    }
    fn dispersion_descriptor(&self) -> String {
        self.descriptor()
    }
}

#[derive(Clone)]
pub struct FactoredDriftSpec {
    pub reduced: Arc<dyn ReducedDrift>,
    pub dispersion: Arc<dyn Dispersion>,
}

impl FactoredDriftSpec {
    pub fn new(reduced: Arc<dyn ReducedDrift>, dispersion: Arc<dyn Dispersion>) -> Result<Self> {
        if reduced.noise_dim() != dispersion.noise_dim() {
            return Err(Error::Dimension {
                expected: dispersion.noise_dim(),
                got: reduced.noise_dim(),
                context: "reduced drift vs dispersion columns",
            });
        }
        Ok(Self { reduced, dispersion })
    }

    /// `b = σ · b̃`, composed on every call.
    pub fn drift(&self, t: f64, path: &dyn PathAccess, laws: &dyn LawSource) -> Result<Vec<f64>> {
        let (d, d1) = (self.dispersion.dim(), self.dispersion.noise_dim());
        let mut sigma = vec![0.0; d * d1];
        let mut r = vec![0.0; d1];
        self.dispersion.eval(t, path, &mut sigma)?;
        self.reduced.eval(t, path, laws, &mut r)?;
        let mut b = vec![0.0; d];
        mat_vec(&sigma, d, d1, &r, &mut b);
        Ok(b)
    }
}

/// `κ` as atoms `(s, weight)` together with the interaction kernel.
#[derive(Clone)]
pub struct DelayedInteractionDrift {
    kernel: Arc<dyn InteractionKernel>,
    atoms: Vec<(f64, f64)>,
    delay: f64,
}

impl DelayedInteractionDrift {
    pub fn new(kernel: Arc<dyn InteractionKernel>, atoms: Vec<(f64, f64)>, delay: f64) -> Result<Self> {
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(Error::invalid("delay must be finite and nonnegative"));
        }
        if atoms.is_empty() {
            return Err(Error::Empty("delay measure atoms"));
        }
        let mut total = 0.0;
        for &(s, w) in &atoms {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("delay measure weight {w} is negative")));
            }
            if !(s <= 0.0 && s >= -delay - 1e-12) {
                return Err(Error::invalid(format!("delay measure atom {s} outside [-{delay}, 0]")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("delay measure weights sum to {total}, not 1")));
        }
        Ok(Self { kernel, atoms, delay })
    }

    /// `κ = δ_s`.
    pub fn dirac(kernel: Arc<dyn InteractionKernel>, s: f64, delay: f64) -> Result<Self> {
        Self::new(kernel, vec![(s, 1.0)], delay)
    }

    pub fn kernel(&self) -> &Arc<dyn InteractionKernel> {
        &self.kernel
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn noise_dim(&self) -> usize {
        self.kernel.noise_dim()
    }
}

#[derive(Clone)]
pub struct PairwiseMeanFieldSpec(pub Arc<dyn PairwiseCoefficients>);

impl PairwiseMeanFieldSpec {
    pub fn new(inner: impl PairwiseCoefficients + 'static) -> Self {
        Self(Arc::new(inner))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.0.noise_dim()
    }
}

impl std::ops::Deref for PairwiseMeanFieldSpec {
    type Target = dyn PairwiseCoefficients;

    fn deref(&self) -> &Self::Target {
        self.0.as_ref()
    }
}

#[derive(Clone)]
pub enum CoefficientSet {
    Factored(FactoredDriftSpec),
    Delayed {
        drift: DelayedInteractionDrift,
        dispersion: Arc<dyn Dispersion>,
    },
    Pairwise(PairwiseMeanFieldSpec),
}

/// Law averages computed once per step: one entry per `κ` atom for the
/// delayed form, a single entry for the pairwise form. `None` marks kernels
/// without a separable form.
#[derive(Debug, Clone, Default)]
pub struct StepCache {
    features: Vec<Option<Vec<f64>>>,
}

/// Per-thread buffers for [`CoefficientSet::evaluate`].
#[derive(Debug, Clone)]
pub struct Scratch {
    r: Vec<f64>,
    tmp: Vec<f64>,
    b: Vec<f64>,
    m: Vec<f64>,
}

impl CoefficientSet {
    pub fn delayed(drift: DelayedInteractionDrift, dispersion: Arc<dyn Dispersion>) -> Result<Self> {
        if drift.noise_dim() != dispersion.noise_dim() {
            return Err(Error::Dimension {
                expected: dispersion.noise_dim(),
                got: drift.noise_dim(),
                context: "interaction kernel vs dispersion columns",
            });
        }
        Ok(CoefficientSet::Delayed { drift, dispersion })
    }

    pub fn pairwise(p: impl PairwiseCoefficients + 'static) -> Self {
        CoefficientSet::Pairwise(PairwiseMeanFieldSpec::new(p))
    }

    pub fn dim(&self) -> usize {
        match self {
            CoefficientSet::Factored(f) => f.dispersion.dim(),
            CoefficientSet::Delayed { dispersion, .. } => dispersion.dim(),
            CoefficientSet::Pairwise(p) => p.dim(),
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            CoefficientSet::Factored(f) => f.dispersion.noise_dim(),
            CoefficientSet::Delayed { dispersion, .. } => dispersion.noise_dim(),
            CoefficientSet::Pairwise(p) => p.noise_dim(),
        }
    }

    /// Largest lag the drift looks back; zero unless delayed.
    pub fn delay(&self) -> f64 {
        match self {
            CoefficientSet::Delayed { drift, .. } => drift.delay(),
            _ => 0.0,
        }
    }

    pub fn dispersion_descriptor(&self) -> String {
        match self {
            CoefficientSet::Factored(f) => f.dispersion.descriptor(),
            CoefficientSet::Delayed { dispersion, .. } => dispersion.descriptor(),
            CoefficientSet::Pairwise(p) => p.dispersion_descriptor(),
        }
    }

    pub fn scratch(&self) -> Scratch {
        let (d, d1) = (self.dim(), self.noise_dim());
        let f = match self {
            CoefficientSet::Delayed { drift, .. } => drift.kernel.feature_count().unwrap_or(0),
            CoefficientSet::Pairwise(p) => p.feature_count().unwrap_or(0),
            CoefficientSet::Factored(_) => 0,
        };
        let w = d.max(d1).max(f);
        Scratch {
            r: vec![0.0; w],
            tmp: vec![0.0; w],
            b: vec![0.0; w],
            m: vec![0.0; d * d1],
        }
    }

    /// Per-step law averages of separable kernels at time `t`.
    pub fn prepare(&self, t: f64, laws: &dyn LawSource) -> Result<StepCache> {
        let features = match self {
            CoefficientSet::Factored(_) => Vec::new(),
            CoefficientSet::Delayed { drift, .. } => {
                let k = &drift.kernel;
                match k.feature_count() {
                    None => vec![None; drift.atoms.len()],
                    Some(f) => drift
                        .atoms
                        .iter()
                        .map(|&(s, _)| {
                            let law = laws.law_at(t + s)?;
                            Ok(Some(feature_mean(&law, f, |y, out| k.features(t, s, y, out))))
                        })
                        .collect::<Result<_>>()?,
                }
            }
            CoefficientSet::Pairwise(p) => match p.feature_count() {
                None => vec![None],
                Some(f) => {
                    let law = laws.law_at(t)?;
                    vec![Some(feature_mean(&law, f, |y, out| p.features(t, y, out)))]
                }
            },
        };
        Ok(StepCache { features })
    }

    /// Effective drift `b(t, x, μ)` and dispersion at one path, and
    /// optionally the reduced drift `b̃` with `b = σ b̃`.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        &self,
        t: f64,
        path: &dyn PathAccess,
        laws: &dyn LawSource,
        cache: &StepCache,
        scratch: &mut Scratch,
        drift: &mut [f64],
        disp: &mut [f64],
        reduced: Option<&mut [f64]>,
    ) -> Result<()> {
        let (d, d1) = (self.dim(), self.noise_dim());
        match self {
            CoefficientSet::Factored(f) => {
                f.dispersion.eval(t, path, disp)?;
                let r = &mut scratch.r[..d1];
                f.reduced.eval(t, path, laws, r)?;
                mat_vec(disp, d, d1, r, drift);
                if let Some(out) = reduced {
                    out.copy_from_slice(r);
                }
            }
            CoefficientSet::Delayed {
                drift: spec,
                dispersion,
            } => {
                dispersion.eval(t, path, disp)?;
                let r = &mut scratch.r[..d1];
                r.fill(0.0);
                let tmp = &mut scratch.tmp[..d1];
                for (k, &(s, w)) in spec.atoms.iter().enumerate() {
                    match cache.features.get(k).and_then(|f| f.as_deref()) {
                        Some(mean) => spec.kernel.from_features(t, s, path, mean, tmp)?,
                        None => kernel_average(
                            spec.kernel.as_ref(),
                            t,
                            s,
                            path,
                            &laws.law_at(t + s)?,
                            tmp,
                            &mut scratch.b,
                        )?,
                    }
                    for (ri, vi) in r.iter_mut().zip(tmp.iter()) {
                        *ri += w * vi;
                    }
                }
                mat_vec(disp, d, d1, r, drift);
                if let Some(out) = reduced {
                    out.copy_from_slice(r);
                }
            }
            CoefficientSet::Pairwise(p) => {
                let x = path.current();
                match cache.features.first().and_then(|f| f.as_deref()) {
                    Some(mean) => {
                        p.drift_from_features(t, x, mean, drift);
                        p.dispersion_from_features(t, x, mean, disp);
                    }
                    None => {
                        let law = laws.law_at(t)?;
                        pairwise_average(p, t, x, &law, drift, disp, &mut scratch.b, &mut scratch.m);
                    }
                }
                if let Some(out) = reduced {
                    if !reduce_drift(disp, d, d1, drift, out) {
                        return Err(Error::invalid(format!(
                            "drift {drift:?} at t={t}, x={x:?} is not in the range of the dispersion"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reduced drift `b̃` at a single path; convenience over [`Self::evaluate`].
    pub fn reduced_drift(&self, t: f64, path: &dyn PathAccess, laws: &dyn LawSource) -> Result<Vec<f64>> {
        let cache = self.prepare(t, laws)?;
        let mut scratch = self.scratch();
        let (d, d1) = (self.dim(), self.noise_dim());
        let (mut b, mut s, mut r) = (vec![0.0; d], vec![0.0; d * d1], vec![0.0; d1]);
        self.evaluate(t, path, laws, &cache, &mut scratch, &mut b, &mut s, Some(&mut r))?;
        Ok(r)
    }
}

/// Chunk size of deterministic parallel reductions over particles.
pub(crate) const REDUCE_CHUNK: usize = 4096;

/// `Σ_j w_j f(y_j)`; partial sums over fixed chunks keep the result
/// independent of the thread count.
fn feature_mean(law: &LawRef<'_>, f: usize, feat: impl Fn(&[f64], &mut [f64]) + Sync) -> Vec<f64> {
    if f == 0 {
        return Vec::new();
    }
    let n = law.len();
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; f];
            let mut buf = vec![0.0; f];
            for j in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n) {
                feat(law.atom(j), &mut buf);
                let w = law.weight(j);
                for (a, v) in acc.iter_mut().zip(&buf) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; f];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn kernel_average(
    kernel: &dyn InteractionKernel,
    t: f64,
    s: f64,
    path: &dyn PathAccess,
    law: &LawRef<'_>,
    out: &mut [f64],
    buf: &mut [f64],
) -> Result<()> {
    let d1 = out.len();
    out.fill(0.0);
    let buf = &mut buf[..d1];
    for j in 0..law.len() {
        kernel.eval(t, s, path, law.atom(j), buf)?;
        let w = law.weight(j);
        for (o, v) in out.iter_mut().zip(buf.iter()) {
            *o += w * v;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pairwise_average(
    p: &PairwiseMeanFieldSpec,
    t: f64,
    x: &[f64],
    law: &LawRef<'_>,
    drift: &mut [f64],
    disp: &mut [f64],
    bbuf: &mut [f64],
    mbuf: &mut [f64],
) {
    drift.fill(0.0);
    disp.fill(0.0);
    let bbuf = &mut bbuf[..drift.len()];
    for j in 0..law.len() {
        let y = law.atom(j);
        let w = law.weight(j);
        p.drift(t, x, y, bbuf);
        p.dispersion(t, x, y, mbuf);
        for (o, v) in drift.iter_mut().zip(bbuf.iter()) {
            *o += w * v;
        }
        for (o, v) in disp.iter_mut().zip(mbuf.iter()) {
            *o += w * v;
        }
    }
}

/// `σ(t, x) · Σ_s κ(s) ∫ β̃(t, s, x, y) μ_{t+s}(dy)`, always by direct
/// summation over the atoms of each law.
pub fn eval_drift_interaction(
    spec: &DelayedInteractionDrift,
    sigma: &dyn Dispersion,
    t: f64,
    path: &dyn PathAccess,
    flow: &dyn LawSource,
) -> Result<Vec<f64>> {
    let (d, d1) = (sigma.dim(), sigma.noise_dim());
    if spec.noise_dim() != d1 {
        return Err(Error::Dimension {
            expected: d1,
            got: spec.noise_dim(),
            context: "interaction kernel vs dispersion columns",
        });
    }
    let mut acc = vec![0.0; d1];
    let mut tmp = vec![0.0; d1];
    let mut buf = vec![0.0; d1];
    for &(s, w) in &spec.atoms {
        let law = flow.law_at(t + s)?;
        kernel_average(spec.kernel.as_ref(), t, s, path, &law, &mut tmp, &mut buf)?;
        for (a, v) in acc.iter_mut().zip(&tmp) {
            *a += w * v;
        }
    }
    let mut m = vec![0.0; d * d1];
    sigma.eval(t, path, &mut m)?;
    let mut b = vec![0.0; d];
    mat_vec(&m, d, d1, &acc, &mut b);
    Ok(b)
}

/// Arithmetic means of `b(t, x, y_j)` and `σ(t, x, y_j)` over the ensemble
/// (flat positions, `d` components each), by direct summation.
pub fn eval_pairwise_mean_field(
    spec: &PairwiseMeanFieldSpec,
    t: f64,
    x: &[f64],
    positions: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, d1) = (spec.dim(), spec.noise_dim());
    if positions.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    if !positions.len().is_multiple_of(d) || x.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: x.len(),
            context: "pairwise evaluation point",
        });
    }
    let law = LawRef {
        dim: d,
        positions,
        weights: None,
        mean: None,
    };
    let (mut b, mut s) = (vec![0.0; d], vec![0.0; d * d1]);
    let (mut bb, mut mb) = (vec![0.0; d], vec![0.0; d * d1]);
    pairwise_average(spec, t, x, &law, &mut b, &mut s, &mut bb, &mut mb);
    Ok((b, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{DiscreteSignedMeasure, FlowSlice, MeasureFlow};

    fn flow_1d(slices: &[(f64, &[f64])], delay: f64, horizon: f64) -> MeasureFlow {
        let s = slices
            .iter()
            .map(|(t, xs)| FlowSlice::discrete(*t, crate::measure::empirical_from_particles(1, xs, None).unwrap()))
            .collect();
        MeasureFlow::new(delay, horizon, s).unwrap()
    }

    fn identity_kernel() -> Arc<dyn InteractionKernel> {
        Arc::new(FnKernel::new(1, |_, _, _, y, out| out.copy_from_slice(y)))
    }

    #[test]
    fn zero_kernel_gives_zero_drift() {
        let k: Arc<dyn InteractionKernel> = Arc::new(FnKernel::new(1, |_, _, _, _, out| out.fill(0.0)));
        let spec = DelayedInteractionDrift::dirac(k, 0.0, 0.0).unwrap();
        let flow = flow_1d(&[(0.0, &[1.0, 2.0]), (1.0, &[3.0])], 0.0, 1.0);
        let b = eval_drift_interaction(
            &spec,
            &ConstantDispersion::identity(1),
            0.5,
            &PointPath { time: 0.5, x: &[0.0] },
            &flow,
        )
        .unwrap();
        assert_eq!(b, vec![0.0]);
    }

    #[test]
    fn dirac_at_zero_reads_the_current_mean() {
        let spec = DelayedInteractionDrift::dirac(identity_kernel(), 0.0, 0.0).unwrap();
        let flow = flow_1d(&[(0.0, &[0.0]), (0.5, &[1.0, 2.0, 3.0])], 0.0, 0.5);
        let b = eval_drift_interaction(
            &spec,
            &ConstantDispersion::identity(1),
            0.5,
            &PointPath { time: 0.5, x: &[7.0] },
            &flow,
        )
        .unwrap();
        assert!((b[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_atom_delay_measure_matches_double_sum() {
        let tau = 0.25;
        let now = [0.5, 1.5, -0.25, 4.0];
        let past = [-1.0, 0.75, 2.5];
        let spec = DelayedInteractionDrift::new(identity_kernel(), vec![(0.0, 0.5), (-tau, 0.5)], tau).unwrap();
        let flow = flow_1d(&[(-0.25, &past), (0.0, &now), (0.25, &[9.0])], tau, 0.25);
        let b = eval_drift_interaction(
            &spec,
            &ConstantDispersion::identity(1),
            0.0,
            &PointPath { time: 0.0, x: &[0.0] },
            &flow,
        )
        .unwrap();
        // brute force: Σ_s κ_s Σ_j y_j / n_s
        let mut oracle = 0.0;
        for (w, ys) in [(0.5, &now[..]), (0.5, &past[..])] {
            for y in ys {
                oracle += w * y / ys.len() as f64;
            }
        }
        assert!((b[0] - oracle).abs() < 1e-15);
        let m0 = now.iter().sum::<f64>() / 4.0;
        let m1 = past.iter().sum::<f64>() / 3.0;
        assert!((b[0] - 0.5 * (m0 + m1)).abs() < 1e-15);
    }

    #[test]
    fn missing_slice_names_the_time() {
        let spec = DelayedInteractionDrift::dirac(identity_kernel(), -0.5, 0.5).unwrap();
        let flow = flow_1d(&[(0.0, &[0.0]), (1.0, &[0.0])], 0.0, 1.0);
        let err = eval_drift_interaction(
            &spec,
            &ConstantDispersion::identity(1),
            0.25,
            &PointPath { time: 0.25, x: &[0.0] },
            &flow,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::MissingSlice { time, .. } if (time + 0.25).abs() < 1e-15),
            "{err}"
        );
    }

    #[test]
    fn delay_measure_validation() {
        assert!(DelayedInteractionDrift::new(identity_kernel(), vec![(0.0, 0.7)], 0.0).is_err());
        assert!(DelayedInteractionDrift::new(identity_kernel(), vec![(-0.2, 1.0)], 0.1).is_err());
        assert!(DelayedInteractionDrift::new(identity_kernel(), vec![(0.0, 1.5), (0.0, -0.5)], 0.0).is_err());
    }

    #[test]
    fn interaction_is_linear_in_the_flow() {
        let spec = DelayedInteractionDrift::dirac(
            Arc::new(FnKernel::new(1, |_, _, p, y, out| {
                out[0] = (p.current()[0] * y[0]).sin() + y[0] * y[0]
            })),
            0.0,
            0.0,
        )
        .unwrap();
        let mu = [0.3, -1.2, 2.2];
        let nu = [1.7, 0.1];
        let mix: Vec<(Vec<f64>, f64)> = mu
            .iter()
            .map(|y| (vec![*y], 0.5 / 3.0))
            .chain(nu.iter().map(|y| (vec![*y], 0.25)))
            .collect();
        let slice = |m: DiscreteSignedMeasure| {
            MeasureFlow::new(
                0.0,
                1.0,
                vec![FlowSlice::discrete(0.0, m.clone()), FlowSlice::discrete(1.0, m)],
            )
            .unwrap()
        };
        let fm = slice(crate::measure::empirical_from_particles(1, &mu, None).unwrap());
        let fn_ = slice(crate::measure::empirical_from_particles(1, &nu, None).unwrap());
        let fmix = slice(DiscreteSignedMeasure::from_atoms(1, &mix).unwrap());
        let sigma = ConstantDispersion::identity(1);
        let path = PointPath { time: 0.5, x: &[0.8] };
        let a = eval_drift_interaction(&spec, &sigma, 0.5, &path, &fm).unwrap()[0];
        let b = eval_drift_interaction(&spec, &sigma, 0.5, &path, &fn_).unwrap()[0];
        let c = eval_drift_interaction(&spec, &sigma, 0.5, &path, &fmix).unwrap()[0];
        assert!((c - 0.5 * (a + b)).abs() < 1e-14);
    }

    #[test]
    fn pairwise_examples() {
        let spec = PairwiseMeanFieldSpec::new(FnPairwise::new(
            1,
            1,
            |_, x, y, out| out[0] = x[0] - y[0],
            |_, _, _, out| out[0] = 0.7,
        ));
        let ys = [1.0, 2.0, 6.0];
        let (b, s) = eval_pairwise_mean_field(&spec, 0.0, &[0.5], &ys).unwrap();
        assert!((b[0] - (0.5 - 3.0)).abs() < 1e-15);
        assert_eq!(s, vec![0.7]);
        assert!(matches!(
            eval_pairwise_mean_field(&spec, 0.0, &[0.5], &[]),
            Err(Error::Empty(_))
        ));
        // single member equals the pointwise value
        let (b1, _) = eval_pairwise_mean_field(&spec, 0.0, &[0.5], &[2.0]).unwrap();
        assert_eq!(b1, vec![-1.5]);
    }

    #[test]
    fn factored_identity_composition() {
        let r: Arc<dyn ReducedDrift> = Arc::new(FnReducedDrift::new(2, |_, p, laws, out| {
            let m = laws.law_at(p.time())?.mean();
            out[0] = m[0] - p.current()[0];
            out[1] = 3.0;
            Ok(())
        }));
        let f = FactoredDriftSpec::new(r.clone(), Arc::new(ConstantDispersion::identity(2))).unwrap();
        let flow = MeasureFlow::new(
            0.0,
            1.0,
            vec![
                FlowSlice::discrete(0.0, DiscreteSignedMeasure::dirac(&[1.0, 1.0])),
                FlowSlice::discrete(1.0, DiscreteSignedMeasure::dirac(&[2.0, 2.0])),
            ],
        )
        .unwrap();
        let path = PointPath {
            time: 1.0,
            x: &[0.5, 0.0],
        };
        let b = f.drift(1.0, &path, &flow).unwrap();
        let mut rt = vec![0.0; 2];
        r.eval(1.0, &path, &flow, &mut rt).unwrap();
        assert_eq!(b, rt);
        assert_eq!(b, vec![1.5, 3.0]);
    }
}
