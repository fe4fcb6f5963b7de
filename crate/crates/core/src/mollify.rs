//! Cutoff-and-convolution approximations of measurable coefficients.
//!
//! For a map `f(t, z)` on `ℝ^D` (typically `z = (x, y)` with `D = 2d`),
//! `f_{n,r}(t, z) = ψ(z/n)^k ∫ f(t, z + u) r^D ρ(r u) du` with a radial
//! cutoff `ψ` (1 on the unit ball, 0 outside radius 2) and a unit-mass
//! bump `ρ` supported in the unit ball. The drift uses `k = 2`, the
//! dispersion `k = 1`.

use std::sync::{Arc, OnceLock};

use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{PairwiseCoefficients, PairwiseMeanFieldSpec};
use crate::error::{Error, Result};

/// Default number of bump quadrature points per axis.
pub const DEFAULT_POINTS: usize = 21;

/// `r_n = 10 n`.
pub fn default_sharpness(n: usize) -> f64 {
    10.0 * n as f64
}

/// Unnormalized one-dimensional profile `exp(1 − 1/(1 − s²))` on `|s| < 1`.
pub fn bump_profile(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp()
    }
}

fn legendre() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(96).expect("legendre rule"))
}

fn profile_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| legendre().integrate(-1.0, 1.0, bump_profile))
}

/// Radial cutoff: 1 for `|z| ≤ 1`, 0 for `|z| ≥ 2`, and in between the
/// normalized integral of the bump profile, so that it is smooth.
pub fn cutoff(z: &[f64]) -> f64 {
    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        // s runs from 1 at r = 1 down to -1 at r = 2
        let s = 3.0 - 2.0 * r;
        (legendre().integrate(-1.0, s, bump_profile) / profile_mass()).clamp(0.0, 1.0)
    }
}

/// A map `(t, z ∈ ℝ^D) → ℝ^k`.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn eval(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()>;
}

type FieldFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub struct FnField {
    dim: usize,
    out_dim: usize,
    f: Arc<FieldFn>,
}

impl FnField {
    pub fn new(dim: usize, out_dim: usize, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            out_dim,
            f: Arc::new(f),
        }
    }
}

impl Field for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn eval(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(t, z, out);
        Ok(())
    }
}

/// `b(t, x, y)` of a pairwise specification as a field of `z = (x, y)`.
pub fn pairwise_drift_field(spec: &PairwiseMeanFieldSpec) -> FnField {
    let s = spec.clone();
    let d = spec.dim();
    FnField::new(2 * d, d, move |t, z, out| s.drift(t, &z[..d], &z[d..], out))
}

/// `σ(t, x, y)` (row-major) as a field of `z = (x, y)`.
pub fn pairwise_dispersion_field(spec: &PairwiseMeanFieldSpec) -> FnField {
    let s = spec.clone();
    let (d, d1) = (spec.dim(), spec.noise_dim());
    FnField::new(2 * d, d * d1, move |t, z, out| s.dispersion(t, &z[..d], &z[d..], out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MollifierSpec {
    /// Dimension `D` of the argument `z`.
    pub dim: usize,
    /// Cutoff scale: the result vanishes for `|z| ≥ 2n`.
    pub n: usize,
    /// Bump sharpness: the bump is supported in the ball of radius `1/r`.
    pub r: f64,
    /// Quadrature points per axis over the bump support.
    pub points: usize,
}

impl MollifierSpec {
    pub fn new(dim: usize, n: usize, r: f64) -> Self {
        Self {
            dim,
            n,
            r,
            points: DEFAULT_POINTS,
        }
    }

    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n == 0 || !(self.r > 0.0 && self.r.is_finite()) || self.points < 2 {
            return Err(Error::invalid(format!("bad mollifier spec {self:?}")));
        }
        Ok(())
    }

    /// Radius of the bump support, `1/r`.
    pub fn support_radius(&self) -> f64 {
        1.0 / self.r
    }
}

/// Tensor-grid nodes in the unit ball with weights `∝ ρ(u)`, normalized to
/// unit sum.
#[derive(Debug, Clone)]
pub struct BumpQuadrature {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl BumpQuadrature {
    pub fn new(dim: usize, points: usize) -> Self {
        let h = 2.0 / (points - 1) as f64;
        let axis: Vec<f64> = (0..points).map(|i| -1.0 + i as f64 * h).collect();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            let u: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            let w = bump_profile(u.iter().map(|v| v * v).sum::<f64>().sqrt());
            if w > 0.0 {
                nodes.extend_from_slice(&u);
                weights.push(w);
            }
            // odometer over the tensor grid
            let mut a = 0;
            while a < dim {
                idx[a] += 1;
                if idx[a] < points {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == dim {
                break;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { dim, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }
}

/// A mollified field; pure and reentrant.
#[derive(Clone)]
pub struct Mollified {
    f: Arc<dyn Field>,
    spec: MollifierSpec,
    power: u32,
    quad: Arc<BumpQuadrature>,
}

impl Mollified {
    pub fn spec(&self) -> &MollifierSpec {
        &self.spec
    }

    pub fn quadrature(&self) -> &BumpQuadrature {
        &self.quad
    }
}

/// `ψ(z/n)^power · (f * ρ_r)(z)` with `power` 1 (dispersion) or 2 (drift).
pub fn mollify_coefficient(f: Arc<dyn Field>, spec: &MollifierSpec, power: u32) -> Result<Mollified> {
    spec.validate()?;
    if f.dim() != spec.dim {
        return Err(Error::Dimension {
            expected: spec.dim,
            got: f.dim(),
            context: "mollified field argument",
        });
    }
    if !(power == 1 || power == 2) {
        return Err(Error::invalid(format!("cutoff power must be 1 or 2, got {power}")));
    }
    Ok(Mollified {
        f,
        quad: Arc::new(BumpQuadrature::new(spec.dim, spec.points)),
        spec: spec.clone(),
        power,
    })
}

impl Field for Mollified {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn out_dim(&self) -> usize {
        self.f.out_dim()
    }

    fn eval(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        let n = self.spec.n as f64;
        let scaled: Vec<f64> = z.iter().map(|v| v / n).collect();
        let psi = cutoff(&scaled);
        if psi == 0.0 {
            return Ok(());
        }
        let k = self.out_dim();
        let mut p = vec![0.0; z.len()];
        let mut buf = vec![0.0; k];
        for (i, &w) in self.quad.weights.iter().enumerate() {
            for ((pj, zj), uj) in p.iter_mut().zip(z).zip(self.quad.node(i)) {
                *pj = zj + uj / self.spec.r;
            }
            self.f.eval(t, &p, &mut buf)?;
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(
                    format!("coefficient value {buf:?}"),
                    format!("t={t}, z={p:?}"),
                ));
            }
            for (o, v) in out.iter_mut().zip(&buf) {
                *o += w * v;
            }
        }
        let factor = psi.powi(self.power as i32);
        out.iter_mut().for_each(|v| *v *= factor);
        Ok(())
    }
}

/// The pair `(b_{n,r}, σ_{n,r})` as a pairwise specification. Evaluation
/// failures surface as NaN entries.
pub struct MollifiedPairwise {
    d: usize,
    d1: usize,
    drift: Mollified,
    dispersion: Mollified,
}

impl MollifiedPairwise {
    pub fn new(spec: &PairwiseMeanFieldSpec, n: usize, r: f64, points: usize) -> Result<Self> {
        let (d, d1) = (spec.dim(), spec.noise_dim());
        let m = MollifierSpec::new(2 * d, n, r).with_points(points);
        Ok(Self {
            d,
            d1,
            drift: mollify_coefficient(Arc::new(pairwise_drift_field(spec)), &m, 2)?,
            dispersion: mollify_coefficient(Arc::new(pairwise_dispersion_field(spec)), &m, 1)?,
        })
    }
}

impl PairwiseCoefficients for MollifiedPairwise {
    fn dim(&self) -> usize {
        self.d
    }

    fn noise_dim(&self) -> usize {
        self.d1
    }

    fn drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let z: Vec<f64> = x.iter().chain(y).copied().collect();
        if self.drift.eval(t, &z, out).is_err() {
            out.fill(f64::NAN);
        }
    }

    fn dispersion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let z: Vec<f64> = x.iter().chain(y).copied().collect();
        if self.dispersion.eval(t, &z, out).is_err() {
            out.fill(f64::NAN);
        }
    }

    fn descriptor(&self) -> String {
        format!("mollified(n={}, r={})", self.drift.spec.n, self.drift.spec.r)
    }
}

/// Points of a product of balls: `z` is split into blocks of `block` axes
/// and every block must satisfy `|z_block| ≤ radius`. With `midpoint` the
/// axis grid consists of cell centers, otherwise of `points` equispaced
/// values including both ends.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallGrid {
    pub dim: usize,
    pub block: usize,
    pub radius: f64,
    pub points: usize,
}

impl BallGrid {
    pub fn new(dim: usize, block: usize, radius: f64, points: usize) -> Self {
        Self {
            dim,
            block,
            radius,
            points,
        }
    }

    fn axis(&self, midpoint: bool) -> Vec<f64> {
        let (r, m) = (self.radius, self.points);
        if midpoint {
            let h = 2.0 * r / m as f64;
            (0..m).map(|i| -r + (i as f64 + 0.5) * h).collect()
        } else if m == 1 {
            vec![0.0]
        } else {
            let h = 2.0 * r / (m - 1) as f64;
            (0..m).map(|i| -r + i as f64 * h).collect()
        }
    }

    fn inside(&self, z: &[f64]) -> bool {
        let r2 = self.radius * self.radius * (1.0 + 1e-12);
        z.chunks(self.block.max(1))
            .all(|b| b.iter().map(|v| v * v).sum::<f64>() <= r2)
    }

    /// Flat list of grid points inside the ball product.
    pub fn points(&self, midpoint: bool) -> Vec<f64> {
        let axis = self.axis(midpoint);
        let total = axis.len().pow(self.dim as u32);
        let mut out = Vec::new();
        let mut z = vec![0.0; self.dim];
        for mut idx in 0..total {
            for v in z.iter_mut() {
                *v = axis[idx % axis.len()];
                idx /= axis.len();
            }
            if self.inside(&z) {
                out.extend_from_slice(&z);
            }
        }
        out
    }

    /// Volume of one midpoint cell.
    pub fn cell_volume(&self) -> f64 {
        (2.0 * self.radius / self.points as f64).powi(self.dim as i32)
    }
}

fn check_pair(f: &dyn Field, g: &dyn Field, grid: &BallGrid) -> Result<()> {
    if f.dim() != grid.dim || g.dim() != grid.dim || f.out_dim() != g.out_dim() {
        return Err(Error::Dimension {
            expected: grid.dim,
            got: if f.dim() != grid.dim { f.dim() } else { g.dim() },
            context: "fields compared on a ball grid",
        });
    }
    Ok(())
}

/// `max |f − g|` over the grid points (ends included) at time `t`.
pub fn sup_distance_on_ball(f: &dyn Field, g: &dyn Field, t: f64, grid: &BallGrid) -> Result<f64> {
    check_pair(f, g, grid)?;
    let pts = grid.points(false);
    let k = f.out_dim();
    let worst: Vec<f64> = pts
        .par_chunks(grid.dim)
        .map(|z| -> Result<f64> {
            let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
            f.eval(t, z, &mut a)?;
            g.eval(t, z, &mut b)?;
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// `(Σ |f − g|^p · cell volume)^{1/p}` over a midpoint grid of
/// `[0, T] × ball product`, with `time_points` cells in time. `|·|` is the
/// Euclidean norm of the output.
pub fn lp_distance_on_ball(
    f: &dyn Field,
    g: &dyn Field,
    p: f64,
    horizon: f64,
    time_points: usize,
    grid: &BallGrid,
) -> Result<f64> {
    check_pair(f, g, grid)?;
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("exponent p must be at least 1, got {p}")));
    }
    if !(horizon > 0.0) || time_points == 0 {
        return Err(Error::invalid("time grid needs T > 0 and at least one cell"));
    }
    let pts = grid.points(true);
    let k = f.out_dim();
    let ht = horizon / time_points as f64;
    let vol = grid.cell_volume() * ht;
    let mut total = 0.0;
    for j in 0..time_points {
        let t = (j as f64 + 0.5) * ht;
        let parts: Vec<f64> = pts
            .par_chunks(grid.dim)
            .map(|z| -> Result<f64> {
                let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
                f.eval(t, z, &mut a)?;
                g.eval(t, z, &mut b)?;
                Ok(a.iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
                    .powf(p))
            })
            .collect::<Result<_>>()?;
        total += crate::stats::chunked_sum(&parts);
    }
    Ok((total * vol).powf(1.0 / p))
}

/// One row of a section through a field: `z(s) = from + s (to − from)`.
#[derive(Debug, Clone, Serialize)]
pub struct SectionRow {
    pub s: f64,
    pub point: Vec<f64>,
    pub raw: Vec<f64>,
    pub mollified: Vec<f64>,
}

/// Raw and mollified values at `count` equispaced points on a segment.
pub fn section(
    raw: &dyn Field,
    mollified: &dyn Field,
    t: f64,
    from: &[f64],
    to: &[f64],
    count: usize,
) -> Result<Vec<SectionRow>> {
    if from.len() != raw.dim() || to.len() != raw.dim() {
        return Err(Error::Dimension {
            expected: raw.dim(),
            got: from.len(),
            context: "section end point",
        });
    }
    let k = raw.out_dim();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            let point: Vec<f64> = from.iter().zip(to).map(|(a, b)| a + s * (b - a)).collect();
            let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
            raw.eval(t, &point, &mut a)?;
            mollified.eval(t, &point, &mut b)?;
            Ok(SectionRow {
                s,
                point,
                raw: a,
                mollified: b,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sign_field() -> Arc<dyn Field> {
        Arc::new(FnField::new(1, 1, |_, z, o| {
            o[0] = if z[0] > 0.0 {
                1.0
            } else if z[0] < 0.0 {
                -1.0
            } else {
                0.0
            }
        }))
    }

    #[test]
    fn cutoff_is_exact_on_and_off_the_annulus() {
        assert_eq!(cutoff(&[0.0, 1.0]), 1.0);
        assert_eq!(cutoff(&[0.6, 0.8]), 1.0);
        assert_eq!(cutoff(&[2.0, 0.0]), 0.0);
        assert_eq!(cutoff(&[3.0]), 0.0);
        let mid = cutoff(&[1.5]);
        assert!((mid - 0.5).abs() < 1e-12, "{mid}");
        let mut prev = 1.0;
        for i in 0..=100 {
            let v = cutoff(&[1.0 + i as f64 / 100.0]);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn quadrature_weights_have_unit_mass() {
        for dim in 1..=3 {
            let q = BumpQuadrature::new(dim, DEFAULT_POINTS);
            assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!(q.weights().iter().all(|w| *w > 0.0));
        }
        // discrete normalization agrees with the exact one-dimensional mass
        let q = BumpQuadrature::new(1, 201);
        let raw: f64 = (0..201).map(|i| bump_profile(-1.0 + i as f64 * 0.01)).sum::<f64>() * 0.01;
        assert!((raw - profile_mass()).abs() < 1e-8, "{raw} vs {}", profile_mass());
        assert_eq!(q.len(), 199);
    }

    #[test]
    fn constants_are_reproduced_inside_the_cutoff() {
        let f: Arc<dyn Field> = Arc::new(FnField::new(2, 1, |_, _, o| o[0] = 3.5));
        let m = mollify_coefficient(f, &MollifierSpec::new(2, 3, 10.0), 2).unwrap();
        let mut o = [0.0];
        m.eval(0.0, &[1.0, -2.0], &mut o).unwrap();
        assert!((o[0] - 3.5).abs() < 1e-14);
        m.eval(0.0, &[6.0, 0.0], &mut o).unwrap();
        assert_eq!(o[0], 0.0);
    }

    #[test]
    fn odd_integrand_vanishes_at_zero() {
        let m = mollify_coefficient(sign_field(), &MollifierSpec::new(1, 1, 10.0), 2).unwrap();
        let mut o = [1.0];
        m.eval(0.0, &[0.0], &mut o).unwrap();
        assert!(o[0].abs() < 1e-15);
    }

    #[test]
    fn sign_near_the_jump_matches_fine_quadrature() {
        // ∫ sign(0.05 + u) 10 ρ(10 u) du by a 10⁴-point trapezoid rule,
        // computed independently with normalized exp(1 − 1/(1 − s²))
        let oracle = 0.754_065_426_4;
        let coarse = mollify_coefficient(sign_field(), &MollifierSpec::new(1, 1, 10.0), 2).unwrap();
        let fine = mollify_coefficient(sign_field(), &MollifierSpec::new(1, 1, 10.0).with_points(4001), 2).unwrap();
        let mut o = [0.0];
        coarse.eval(0.0, &[0.05], &mut o).unwrap();
        assert!((o[0] - oracle).abs() < 2e-3, "{}", o[0]);
        fine.eval(0.0, &[0.05], &mut o).unwrap();
        assert!((o[0] - oracle).abs() < 1e-7, "{}", o[0]);
    }

    #[test]
    fn non_finite_values_name_the_point() {
        let f: Arc<dyn Field> = Arc::new(FnField::new(1, 1, |_, z, o| o[0] = 1.0 / z[0]));
        let m = mollify_coefficient(f, &MollifierSpec::new(1, 1, 10.0), 1).unwrap();
        let err = m.eval(0.0, &[0.0], &mut [0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn distances_on_trivial_pairs() {
        let zero: Arc<dyn Field> = Arc::new(FnField::new(2, 1, |_, _, o| o[0] = 0.0));
        let c: Arc<dyn Field> = Arc::new(FnField::new(2, 1, |_, _, o| o[0] = -0.75));
        let g = BallGrid::new(2, 1, 0.5, 10);
        assert_eq!(
            sup_distance_on_ball(zero.as_ref(), zero.as_ref(), 0.0, &g).unwrap(),
            0.0
        );
        assert_eq!(sup_distance_on_ball(zero.as_ref(), c.as_ref(), 0.0, &g).unwrap(), 0.75);
        assert_eq!(
            lp_distance_on_ball(c.as_ref(), c.as_ref(), 6.0, 1.0, 3, &g).unwrap(),
            0.0
        );
        // unit total volume: [0, 1] × [−½, ½]²
        let lp = lp_distance_on_ball(zero.as_ref(), c.as_ref(), 6.0, 1.0, 3, &g).unwrap();
        assert!((lp - 0.75).abs() < 1e-14, "{lp}");
    }

    #[test]
    fn ball_product_grid_keeps_blocks_inside() {
        let g = BallGrid::new(2, 2, 1.0, 5);
        let pts = g.points(false);
        // corners of [−1, 1]² are outside the unit disc
        assert_eq!(pts.len() / 2, 25 - 4 - 8);
    }
}
