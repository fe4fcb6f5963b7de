//! Stochastic exponentials and the empirical weighted-TV stability check.
//!
//! For two drifts `b_i = σ b̃_i` sharing `σ`, the laws of the solutions at
//! time `t` satisfy
//!
//! ```text
//! ‖μ¹_t − μ²_t‖_φ ≤ Σ_i E_i[φ(X_t) ∫₀ᵗ |b̃₁ − b̃₂|² ds]
//!                 + Σ_i (E_i[φ²(X_t)])^{1/2} (E_i[∫₀ᵗ |b̃₁ − b̃₂|² ds])^{1/2}.
//! ```
//!
//! [`tv_stability_check`] simulates both particle systems in lockstep and
//! compares a binned plug-in estimate of the left side with the right side.

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{CoefficientSet, PathAccess};
use crate::error::{Error, Result};
use crate::measure::{bin_uniform, empirical_from_particles, weighted_tv, WeightFunction};
use crate::rng::NoiseStreams;
use crate::solver::{InitialLaw, ParticleEnsemble, SimConfig, Simulation};
use crate::stats::{chunked_sum, mean_se, mean_var};

/// `ln(f64::MAX)`; larger log-likelihoods overflow.
const LOG_MAX: f64 = 709.782_712_893_384;

/// `M_k = exp(Σ_{j<k} b̃_j·ΔW_j − ½ Σ_{j<k} |b̃_j|² dt)` along one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikelihoodPath {
    pub dt: f64,
    /// `ln M_k` for `k = 0..=steps`; `ln M_0 = 0`.
    pub log_m: Vec<f64>,
    /// Per-step log integrands `b̃_j·ΔW_j − ½|b̃_j|² dt`.
    pub log_increments: Vec<f64>,
}

impl LikelihoodPath {
    pub fn steps(&self) -> usize {
        self.log_increments.len()
    }

    pub fn m(&self, k: usize) -> f64 {
        self.log_m[k].exp()
    }

    pub fn terminal(&self) -> f64 {
        self.m(self.steps())
    }
}

fn check_aligned(b: &[f64], dw: &[f64], d1: usize) -> Result<usize> {
    if d1 == 0 || b.len() != dw.len() || !b.len().is_multiple_of(d1) {
        return Err(Error::Dimension {
            expected: b.len(),
            got: dw.len(),
            context: "drift values vs noise increments",
        });
    }
    Ok(b.len() / d1)
}

/// Builds `M` from per-step reduced drifts `b` and Brownian increments `dw`
/// (both `steps × d₁`, step-major).
pub fn stochastic_exponential(b: &[f64], dw: &[f64], d1: usize, dt: f64) -> Result<LikelihoodPath> {
    let steps = check_aligned(b, dw, d1)?;
    let mut log_m = Vec::with_capacity(steps + 1);
    let mut log_increments = Vec::with_capacity(steps);
    let mut acc = 0.0;
    log_m.push(0.0);
    for k in 0..steps {
        let (bk, wk) = (&b[k * d1..(k + 1) * d1], &dw[k * d1..(k + 1) * d1]);
        let inc = bk.iter().zip(wk).map(|(x, w)| x * w).sum::<f64>() - 0.5 * bk.iter().map(|x| x * x).sum::<f64>() * dt;
        acc += inc;
        if !acc.is_finite() || acc > LOG_MAX {
            return Err(Error::Overflow {
                step: k,
                log_value: acc,
            });
        }
        log_increments.push(inc);
        log_m.push(acc);
    }
    Ok(LikelihoodPath {
        dt,
        log_m,
        log_increments,
    })
}

/// `ln M` at the end of the path, from the two sums taken separately.
pub fn log_likelihood_batch(b: &[f64], dw: &[f64], d1: usize, dt: f64) -> Result<f64> {
    check_aligned(b, dw, d1)?;
    let stochastic: f64 = b.iter().zip(dw).map(|(x, w)| x * w).sum();
    let quadratic: f64 = b.iter().map(|x| x * x).sum();
    Ok(stochastic - 0.5 * quadratic * dt)
}

/// `N_k = |Σ_{j<k} (b̃₁ − b̃₂)·ΔW_j − ½ Σ_{j<k} (|b̃₁|² − |b̃₂|²) dt|`.
pub fn difference_functional(b1: &[f64], b2: &[f64], dw: &[f64], d1: usize, dt: f64) -> Result<Vec<f64>> {
    let steps = check_aligned(b1, dw, d1)?;
    check_aligned(b2, dw, d1)?;
    let mut out = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..steps {
        let r = k * d1..(k + 1) * d1;
        let (x, y, w) = (&b1[r.clone()], &b2[r.clone()], &dw[r]);
        acc += x.iter().zip(y).zip(w).map(|((a, b), w)| (a - b) * w).sum::<f64>()
            - 0.5 * x.iter().zip(y).map(|(a, b)| a * a - b * b).sum::<f64>() * dt;
        out.push(acc.abs());
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleRow {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub mean: f64,
    pub se: f64,
    /// `(mean − 1) / SE`.
    pub z: f64,
    pub pass: bool,
    pub rows: Vec<MartingaleRow>,
}

/// Monte Carlo check of `E M_T = 1` for a reduced drift `b̃(t, W_t)` driven
/// by seeded Brownian paths (path `p` reads stream `p`, step `k` block
/// `k + 1`). Rows are recorded every `record_stride` steps.
pub fn martingale_check(
    drift: &(dyn Fn(f64, &[f64], &mut [f64]) + Sync),
    d1: usize,
    paths: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    record_stride: usize,
) -> Result<MartingaleReport> {
    if paths < 2 || !(dt > 0.0) || !(horizon > 0.0) || record_stride == 0 || d1 == 0 || d1 > 8 {
        return Err(Error::invalid(
            "martingale check needs ≥ 2 paths, dt, T > 0, stride ≥ 1 and 1 ≤ d₁ ≤ 8",
        ));
    }
    let steps = (horizon / dt).round() as usize;
    let marks: Vec<usize> = (0..=steps).filter(|k| k % record_stride == 0 || *k == steps).collect();
    let streams = NoiseStreams::new(seed);
    let sqrt_dt = dt.sqrt();
    let per_path: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let mut noise = streams.particle(p);
            let mut w = vec![0.0; d1];
            let mut b = vec![0.0; steps * d1];
            let mut dw = vec![0.0; steps * d1];
            let mut z = vec![0.0; d1];
            for k in 0..steps {
                drift(k as f64 * dt, &w, &mut b[k * d1..(k + 1) * d1]);
                noise.next_draw().fill_normals(&mut z);
                for i in 0..d1 {
                    dw[k * d1 + i] = sqrt_dt * z[i];
                    w[i] += dw[k * d1 + i];
                }
            }
            let path = stochastic_exponential(&b, &dw, d1, dt)?;
            Ok(marks.iter().map(|&k| path.m(k)).collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<MartingaleRow> = marks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let col: Vec<f64> = per_path.iter().map(|v| v[j]).collect();
            let (mean, se) = mean_se(&col);
            MartingaleRow {
                t: k as f64 * dt,
                mean,
                se,
            }
        })
        .collect();
    let last = rows.last().unwrap().clone();
    let z = if last.se > 0.0 {
        (last.mean - 1.0) / last.se
    } else {
        0.0
    };
    Ok(MartingaleReport {
        paths,
        dt,
        horizon,
        seed,
        mean: last.mean,
        se: last.se,
        z,
        pass: (last.mean - 1.0).abs() <= 3.0 * last.se,
        rows,
    })
}

impl MartingaleReport {
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "t,mean_m,se")?;
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.t, r.mean, r.se)?;
        }
        Ok(())
    }
}

/// One side's contribution: `E[φ I] + (E φ²)^{1/2} (E I)^{1/2}` with its
/// delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhsTerm {
    pub phi_integral: f64,
    pub phi_squared: f64,
    pub integral: f64,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhsEstimate {
    pub value: f64,
    pub se: f64,
    pub terms: [RhsTerm; 2],
}

/// `phi[p] = φ(X_t)` and `integral[p] = ∫₀ᵗ |b̃₁ − b̃₂|² ds` per particle.
fn rhs_term(phi: &[f64], integral: &[f64]) -> RhsTerm {
    let n = phi.len() as f64;
    let a: Vec<f64> = phi.iter().zip(integral).map(|(f, i)| f * i).collect();
    let b: Vec<f64> = phi.iter().map(|f| f * f).collect();
    let (ma, _) = mean_var(&a);
    let (mb, _) = mean_var(&b);
    let (mc, _) = mean_var(integral);
    let value = ma + mb.sqrt() * mc.sqrt();
    // gradient of A + sqrt(B C) at the means
    let (gb, gc) = if mb > 0.0 && mc > 0.0 {
        (0.5 * (mc / mb).sqrt(), 0.5 * (mb / mc).sqrt())
    } else {
        (0.0, 0.0)
    };
    let lin: Vec<f64> = (0..phi.len()).map(|p| a[p] + gb * b[p] + gc * integral[p]).collect();
    let (_, var) = mean_var(&lin);
    RhsTerm {
        phi_integral: ma,
        phi_squared: mb,
        integral: mc,
        value,
        se: (var / n).sqrt(),
    }
}

fn combine(t1: RhsTerm, t2: RhsTerm) -> RhsEstimate {
    RhsEstimate {
        value: t1.value + t2.value,
        se: (t1.se * t1.se + t2.se * t2.se).sqrt(),
        terms: [t1, t2],
    }
}

/// A reduced drift that depends on the path only.
pub type PathDrift<'a> = &'a (dyn Fn(f64, &dyn PathAccess, &mut [f64]) -> Result<()> + Sync);

/// Right side of the stability inequality at time `t` from two recorded
/// ensembles. The time integrals are left-point sums over each
/// ensemble's recorded grid on `[0, t)`; `t` must be a recorded time.
pub fn tv_stability_rhs(
    ensembles: [&ParticleEnsemble; 2],
    d1: usize,
    b1: PathDrift<'_>,
    b2: PathDrift<'_>,
    phi: &WeightFunction,
    t: f64,
) -> Result<RhsEstimate> {
    let terms = ensembles
        .iter()
        .map(|e| {
            let end = e.index_of(t).ok_or(Error::MissingSlice {
                time: t,
                start: e.times()[0],
                end: *e.times().last().unwrap(),
            })?;
            let start = e.index_of(0.0).expect("recorded ensembles contain t = 0");
            let d = e.dim();
            let integral: Vec<f64> = (0..e.n())
                .into_par_iter()
                .map(|p| -> Result<f64> {
                    let (mut u, mut v) = (vec![0.0; d1], vec![0.0; d1]);
                    let mut acc = 0.0;
                    for k in start..end {
                        let s = e.times()[k];
                        let path = e.particle_path(p, k);
                        b1(s, &path, &mut u)?;
                        b2(s, &path, &mut v)?;
                        acc += sq_dist(&u, &v) * (e.times()[k + 1] - s);
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            let phis: Vec<f64> = e.positions(end).chunks(d).map(|y| phi.eval(y)).collect();
            Ok(rhs_term(&phis, &integral))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(terms[0], terms[1]))
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Plug-in estimate of `‖μ¹ − μ²‖_φ` after binning both empirical laws on
/// the same grid (origin 0), with a standard error from per-cell binomial
/// variances and the binning slack
/// `(w/2) Σ_i E_i|∇φ| + Σ_k φ(c_k) sd_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LhsEstimate {
    pub value: f64,
    pub se: f64,
    pub binning_slack: f64,
}

pub fn binned_tv_difference(
    x1: &[f64],
    x2: &[f64],
    dim: usize,
    phi: &WeightFunction,
    cell_width: f64,
) -> Result<LhsEstimate> {
    let m1 = bin_uniform(&empirical_from_particles(dim, x1, None)?, 0.0, cell_width)?;
    let m2 = bin_uniform(&empirical_from_particles(dim, x2, None)?, 0.0, cell_width)?;
    let diff = m1.minus(&m2)?;
    let value = weighted_tv(&diff, phi)?;
    let (n1, n2) = ((x1.len() / dim) as f64, (x2.len() / dim) as f64);
    let mut var = 0.0;
    let mut noise_bias = 0.0;
    let mut keys: Vec<Vec<i64>> = m1.cells().map(|(k, _)| k.to_vec()).collect();
    keys.extend(m2.cells().map(|(k, _)| k.to_vec()));
    keys.sort();
    keys.dedup();
    for k in &keys {
        let (p1, p2) = (m1.mass(k), m2.mass(k));
        let sd2 = p1 * (1.0 - p1) / n1 + p2 * (1.0 - p2) / n2;
        let f = phi.eval(&m1.cell_center(k));
        var += f * f * sd2;
        noise_bias += f * sd2.sqrt();
    }
    let grad = |x: &[f64]| -> f64 {
        let g: Vec<f64> = x.chunks(dim).map(|y| phi.gradient_norm(y)).collect();
        chunked_sum(&g) / g.len() as f64
    };
    Ok(LhsEstimate {
        value,
        se: var.sqrt(),
        binning_slack: 0.5 * cell_width * (grad(x1) + grad(x2)) + noise_bias,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub t: f64,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub binning_slack: f64,
    /// `RHS + 3 (SE_L + SE_R) + binning slack`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub cell_width: f64,
    pub seeds: [u64; 2],
    pub weight: String,
    pub rows: Vec<StabilityRow>,
    pub pass: bool,
}

impl StabilityReport {
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "t,lhs,lhs_se,rhs,rhs_se,binning_slack,bound,pass")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.t, r.lhs, r.lhs_se, r.rhs, r.rhs_se, r.binning_slack, r.bound, r.pass
            )?;
        }
        Ok(())
    }
}

/// Seed of the second system when only one is given.
pub fn companion_seed(seed: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs both particle systems (seeds `seeds[0]`, `seeds[1]`) from `init`
/// in lockstep and compares both sides of the stability inequality at
/// each time in `times`. `b̃_j` is evaluated with the law of system `j`.
#[allow(clippy::too_many_arguments)]
pub fn tv_stability_check(
    coeffs: [&CoefficientSet; 2],
    init: &InitialLaw,
    cfg: &SimConfig,
    seeds: [u64; 2],
    phi: &WeightFunction,
    times: &[f64],
    cell_width: f64,
) -> Result<StabilityReport> {
    let [c1, c2] = coeffs;
    if c1.dispersion_descriptor() != c2.dispersion_descriptor() {
        return Err(Error::invalid(format!(
            "stability check needs a shared dispersion, got '{}' and '{}'",
            c1.dispersion_descriptor(),
            c2.dispersion_descriptor()
        )));
    }
    if c1.dim() != c2.dim() || c1.noise_dim() != c2.noise_dim() {
        return Err(Error::Dimension {
            expected: c1.dim(),
            got: c2.dim(),
            context: "coefficient sets of the stability check",
        });
    }
    if !(cell_width > 0.0) {
        return Err(Error::invalid("cell width must be positive"));
    }
    let steps = cfg.steps();
    let mut marks: Vec<(usize, f64)> = Vec::new();
    for &t in times {
        let k = (t / cfg.dt).round();
        if !(t > 0.0) || (k * cfg.dt - t).abs() > 1e-9 * (1.0 + t) || k as usize > steps {
            return Err(Error::invalid(format!("check time {t} is not a step time in (0, T]")));
        }
        marks.push((k as usize, t));
    }
    marks.sort_by_key(|a| a.0);
    let (d, d1, n) = (c1.dim(), c1.noise_dim(), cfg.n);
    let last = marks.last().map_or(0, |m| m.0);
    let sub = |seed| {
        let mut c = cfg.clone();
        c.seed = seed;
        c.record_stride = steps.max(1);
        c
    };
    let mut sims = [
        Simulation::new(c1, init, &sub(seeds[0]))?,
        Simulation::new(c2, init, &sub(seeds[1]))?,
    ];
    let mut integrals = [vec![0.0; n], vec![0.0; n]];
    let mut rows = Vec::new();
    let mut next_mark = 0;
    for k in 0..last {
        let t = k as f64 * cfg.dt;
        let (s1, s2) = (sims[0].state(), sims[1].state());
        let caches = [c1.prepare(t, s1)?, c2.prepare(t, s2)?];
        for (i, acc) in integrals.iter_mut().enumerate() {
            let own = sims[i].state();
            acc.par_iter_mut().enumerate().try_for_each_init(
                || {
                    (
                        c1.scratch(),
                        c2.scratch(),
                        vec![0.0; d],
                        vec![0.0; d * d1],
                        vec![0.0; d1],
                        vec![0.0; d1],
                    )
                },
                |(sc1, sc2, b, s, u, v), (p, a)| -> Result<()> {
                    let path = own.particle(p);
                    c1.evaluate(t, &path, s1, &caches[0], sc1, b, s, Some(u))?;
                    c2.evaluate(t, &path, s2, &caches[1], sc2, b, s, Some(v))?;
                    *a += sq_dist(u, v) * cfg.dt;
                    Ok(())
                },
            )?;
        }
        for sim in sims.iter_mut() {
            sim.advance()?;
        }
        while next_mark < marks.len() && marks[next_mark].0 == k + 1 {
            let t = marks[next_mark].1;
            let x = [sims[0].state().positions(), sims[1].state().positions()];
            let terms: Vec<RhsTerm> = (0..2)
                .map(|i| {
                    let phis: Vec<f64> = x[i].chunks(d).map(|y| phi.eval(y)).collect();
                    rhs_term(&phis, &integrals[i])
                })
                .collect();
            let rhs = combine(terms[0], terms[1]);
            let lhs = binned_tv_difference(x[0], x[1], d, phi, cell_width)?;
            let bound = rhs.value + 3.0 * (lhs.se + rhs.se) + lhs.binning_slack;
            rows.push(StabilityRow {
                t,
                lhs: lhs.value,
                lhs_se: lhs.se,
                rhs: rhs.value,
                rhs_se: rhs.se,
                binning_slack: lhs.binning_slack,
                bound,
                pass: lhs.value <= bound,
            });
            next_mark += 1;
        }
    }
    Ok(StabilityReport {
        cell_width,
        seeds,
        weight: format!("{phi:?}"),
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}
