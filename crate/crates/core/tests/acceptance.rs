//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs 3, 4 and 6 go through the `mvlab` binary so that
//! criterion 10 can repeat them with a different thread count.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mvlab::coefficients::catalog::{pairwise, pairwise_as_interaction, CatalogParams, Registry};
use mvlab::coefficients::checks::{check_polynomial_case, ConstantChoice, SampleDomain};
use mvlab::girsanov::{companion_seed, tv_stability_check};
use mvlab::lyapunov::{
    check_c_conditions, monitor_expectation, smallest_generator_constant, LyapunovCertificate, RadialLyapunov,
};
use mvlab::measure::{hahn_split, weighted_tv, DiscreteSignedMeasure, WeightFunction};
use mvlab::mollify::{
    lp_distance_on_ball, mollify_coefficient, pairwise_drift_field, sup_distance_on_ball, BallGrid, Field, FnField,
    MollifierSpec,
};
use mvlab::solver::{simulate, InitialLaw, SimConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

type Check = Result<(bool, String), String>;

struct Suite {
    work: tempfile::TempDir,
    failures: usize,
}

impl Suite {
    fn criterion(&mut self, no: usize, title: &str, budget_s: u64, body: impl FnOnce(&Path) -> Check) {
        let start = Instant::now();
        let outcome = body(self.work.path());
        let elapsed = start.elapsed();
        let in_time = elapsed < Duration::from_secs(budget_s);
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            self.failures += 1;
        }
        println!(
            "criterion {no:>2} [{}] {title}: {detail} ({:.1}s, budget {budget_s}s{})",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- CLI runs

const RUN3: &str = "h.name=sign\nmu0.weights=1\nmu0.means=1\nmu0.sds=0\nN=50000\ndt=0.001\nT=1\nrecord_stride=10\nbias_slack=1\nseed=3\n";
const RUN4: &str =
    "coefficients.name=linear-meanfield\ncoefficients.theta=1\ncoefficients.sigma=1\ninit.kind=point\ninit.mean=0\n\
N=100000\ndt=0.001\nT=1\nrecord_stride=100\noutput.particle_stride=1000\nseed=4\n";
const RUN6: &str = "mode=martingale\nmartingale.c=0.5\nN=100000\ndt=0.001\nT=1\nrecord_stride=100\nseed=6\n";

fn cli(work: &Path, name: &str, sub: &str, cfg: &str, threads: usize) -> Result<(i32, PathBuf), String> {
    let cfg_path = work.join(format!("{name}.cfg"));
    fs::write(&cfg_path, cfg).map_err(err)?;
    let out = work.join(format!("{name}-t{threads}"));
    let status = Command::new(env!("CARGO_BIN_EXE_mvlab"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .arg("--threads")
        .arg(threads.to_string())
        .output()
        .map_err(err)?;
    let code = status.status.code().ok_or("killed by signal")?;
    if code == 2 {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    Ok((code, out))
}

fn report(dir: &Path) -> Result<Value, String> {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).map_err(err)?).map_err(err)
}

fn num(v: &Value, path: &[&str]) -> Result<f64, String> {
    let mut cur = v;
    for p in path {
        cur = cur.get(p).ok_or_else(|| format!("missing {}", path.join(".")))?;
    }
    cur.as_f64()
        .ok_or_else(|| format!("{} is not a number", path.join(".")))
}

fn csvs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).map_err(err)? {
        let p = e.map_err(err)?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            files.push((
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).map_err(err)?,
            ));
        }
    }
    files.sort();
    Ok(files)
}

// ---------------------------------------------------------------- criteria

fn random_measure(rng: &mut StdRng) -> DiscreteSignedMeasure {
    let dim = rng.gen_range(1..=3);
    let atoms: Vec<(Vec<f64>, f64)> = (0..rng.gen_range(0..=50))
        .map(|_| {
            // a coarse lattice makes coinciding atoms common
            let x = (0..dim).map(|_| rng.gen_range(-4i32..=4) as f64 * 0.75).collect();
            (x, rng.gen_range(-3.0..3.0))
        })
        .collect();
    DiscreteSignedMeasure::from_atoms(dim, &atoms).unwrap()
}

fn brute_norm(mu: &DiscreteSignedMeasure, phi: impl Fn(&[f64]) -> f64) -> f64 {
    let mut merged: HashMap<Vec<u64>, (Vec<f64>, f64)> = HashMap::new();
    for (x, w) in mu.atoms() {
        merged
            .entry(x.iter().map(|v| v.to_bits()).collect())
            .or_insert_with(|| (x.to_vec(), 0.0))
            .1 += w;
    }
    merged.values().map(|(x, w)| phi(x) * w.abs()).sum()
}

fn c1_weighted_tv(_: &Path) -> Check {
    let mut rng = StdRng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut hahn_exact = true;
    for _ in 0..100 {
        let mu = random_measure(&mut rng);
        let sq = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let cases: [(WeightFunction, Box<dyn Fn(&[f64]) -> f64>); 2] = [
            (WeightFunction::polynomial(2.0), Box::new(move |x| 1.0 + sq(x))),
            (
                WeightFunction::exponential(0.5, 1.0),
                Box::new(move |x| (0.5 * sq(x).sqrt()).exp()),
            ),
        ];
        for (phi, oracle) in &cases {
            let got = weighted_tv(&mu, phi).map_err(err)?;
            let want = brute_norm(&mu, oracle);
            worst = worst.max((got - want).abs() / want.max(f64::MIN_POSITIVE));
        }
        let (pos, neg) = hahn_split(&mu);
        hahn_exact &= pos.minus(&neg).map_err(err)?.canonical() == mu.canonical();
    }
    Ok((
        worst <= 1e-12 && hahn_exact,
        format!("max relative error {worst:.2e}, Hahn recombination exact: {hahn_exact}"),
    ))
}

fn c2_lsc(_: &Path) -> Check {
    let phi = WeightFunction::polynomial(2.0);
    let limit = weighted_tv(&DiscreteSignedMeasure::dirac(&[0.0]), &phi).map_err(err)?;
    let (mut tail_a, mut tail_b) = (f64::INFINITY, f64::INFINITY);
    for n in 1..=10_000 {
        let nf = n as f64;
        let a = weighted_tv(&DiscreteSignedMeasure::dirac(&[1.0 / nf]), &phi).map_err(err)?;
        let escape =
            DiscreteSignedMeasure::from_atoms(1, &[(vec![0.0], 1.0 - 1.0 / nf), (vec![nf], 1.0 / nf)]).map_err(err)?;
        let b = weighted_tv(&escape, &phi).map_err(err)?;
        if n > 5_000 {
            tail_a = tail_a.min(a);
            tail_b = tail_b.min(b);
        }
    }
    let ok = limit <= tail_a + 1e-12 && limit <= tail_b + 1e-12;
    Ok((
        ok,
        format!("limit {limit}, tail minima {tail_a:.12} (δ_1/n) and {tail_b:.1} (mass escape)"),
    ))
}

fn c3_oracle(work: &Path) -> Check {
    let (code, out) = cli(work, "run3", "oracle", RUN3, 1)?;
    let r = report(&out)?;
    let sup = num(&r, &["report", "sup_error"])?;
    let bound = num(&r, &["report", "bound"])?;
    let ok = code == 0 && sup <= bound;
    Ok((
        ok,
        format!("sup |mean − (1+g)| = {sup:.4} vs 3·max SE + dt = {bound:.4}"),
    ))
}

fn c4_ou_variance(work: &Path) -> Check {
    let (code, out) = cli(work, "run4", "simulate", RUN4, 1)?;
    let r = report(&out)?;
    let var = r["report"]["final_variance"][0]
        .as_f64()
        .ok_or("missing final variance")?;
    let exact = (1.0 - (-2.0f64).exp()) / 2.0;
    // the particle law is Gaussian, so Var(sample variance) = 2σ⁴/(N − 1)
    let se = exact * (2.0 / (100_000.0 - 1.0f64)).sqrt();
    let ok = code == 0 && (var - exact).abs() <= 3.0 * se;
    Ok((ok, format!("Var(X_T) = {var:.5} vs {exact:.5} ± 3·{se:.5}")))
}

fn ou(theta: f64) -> CatalogParams {
    CatalogParams {
        theta,
        ..CatalogParams::default()
    }
}

fn c5_lyapunov(_: &Path) -> Check {
    let v = RadialLyapunov::quadratic();
    let spec = pairwise("OU-attraction", &ou(1.0)).map_err(err)?;
    let c = smallest_generator_constant(&v, &spec, &SampleDomain::cube(1, -5.0, 5.0, 0.1))
        .map_err(err)?
        .ok_or("no generator constant found")?;
    let origin = InitialLaw::ConstantPoint(vec![0.0]);
    let stable = Registry::builtin().build("OU-attraction", &ou(1.0)).map_err(err)?;
    let ens = simulate(
        &stable,
        &origin,
        &SimConfig::new(100_000, 0.001, 1.0, 5).with_record_stride(10),
    )
    .map_err(err)?;
    let good = monitor_expectation(&ens, &LyapunovCertificate::new(Arc::new(v), c));
    let unstable = Registry::builtin().build("OU-attraction", &ou(-1.0)).map_err(err)?;
    let ens = simulate(
        &unstable,
        &origin,
        &SimConfig::new(10_000, 0.001, 1.0, 5).with_record_stride(10),
    )
    .map_err(err)?;
    let bad = monitor_expectation(
        &ens,
        &LyapunovCertificate::new(Arc::new(RadialLyapunov::quadratic()), 0.0),
    );
    let flagged_early = bad.first_flag.is_some_and(|t| t <= 0.5);
    Ok((
        good.pass && flagged_early,
        format!(
            "certified C = {c:.4}, OU flags: {}, b=+x first flag at t = {:?}",
            !good.pass, bad.first_flag
        ),
    ))
}

fn c6_martingale(work: &Path) -> Check {
    let (code, out) = cli(work, "run6", "stability", RUN6, 1)?;
    let r = report(&out)?;
    let mean = num(&r, &["report", "mean"])?;
    let se = num(&r, &["report", "se"])?;
    let ok = code == 0 && (mean - 1.0).abs() <= 3.0 * se;
    Ok((ok, format!("E M_T = {mean:.5} ± {se:.5}")))
}

/// `∫ (1 + y²) |N(0, v)(y) − N(m, v)(y)| dy` by composite Simpson.
fn gaussian_tv(m: f64, v: f64) -> f64 {
    let pdf = |y: f64, mu: f64| (-(y - mu) * (y - mu) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let f = |y: f64| (1.0 + y * y) * (pdf(y, 0.0) - pdf(y, m)).abs();
    let (a, b, n) = (-12.0, 12.0, 240_000);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn c7_stability(_: &Path) -> Check {
    let registry = Registry::builtin();
    let b1 = registry.build("OU-attraction", &ou(1.0)).map_err(err)?;
    let b2 = registry
        .build("OU-attraction", &CatalogParams { c: 0.2, ..ou(1.0) })
        .map_err(err)?;
    let times = [0.25, 0.5, 1.0];
    let r = tv_stability_check(
        [&b1, &b2],
        &InitialLaw::ConstantPoint(vec![0.0]),
        &SimConfig::new(100_000, 0.001, 1.0, 7),
        [7, companion_seed(7)],
        &WeightFunction::polynomial(2.0),
        &times,
        0.05,
    )
    .map_err(err)?;
    let mut ok = r.pass;
    let mut parts = Vec::new();
    for row in &r.rows {
        let oracle = gaussian_tv(0.2 * (1.0 - (-row.t).exp()), (1.0 - (-2.0 * row.t).exp()) / 2.0);
        let agree = (row.lhs - oracle).abs() <= row.binning_slack + 3.0 * row.lhs_se;
        ok &= agree && row.pass;
        parts.push(format!(
            "t={}: LHS {:.4} (oracle {:.4}, slack {:.4}) ≤ bound {:.4}",
            row.t, row.lhs, oracle, row.binning_slack, row.bound
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c8_mollify(_: &Path) -> Check {
    let sign: Arc<dyn Field> = Arc::new(pairwise_drift_field(
        &pairwise("sign", &CatalogParams::default()).map_err(err)?,
    ));
    let ball = BallGrid::new(2, 1, 1.0, 400);
    let mut lp = Vec::new();
    for r in [5.0, 10.0, 20.0, 40.0] {
        let m = mollify_coefficient(sign.clone(), &MollifierSpec::new(2, 2, r), 2).map_err(err)?;
        lp.push(lp_distance_on_ball(sign.as_ref(), &m, 6.0, 1.0, 1, &ball).map_err(err)?);
    }
    let decreasing = lp.windows(2).all(|w| w[1] < w[0]);
    let id: Arc<dyn Field> = Arc::new(FnField::new(1, 1, |_, z, o| o[0] = z[0]));
    let line = BallGrid::new(1, 1, 1.0, 201);
    let mut within = true;
    let mut worst = 0.0f64;
    for r in [5.0, 10.0, 20.0, 40.0] {
        let spec = MollifierSpec::new(1, 2, r);
        let m = mollify_coefficient(id.clone(), &spec, 2).map_err(err)?;
        let d = sup_distance_on_ball(id.as_ref(), &m, 0.0, &line).map_err(err)?;
        within &= d <= spec.support_radius() / r;
        worst = worst.max(d);
    }
    let lp_text: Vec<String> = lp.iter().map(|v| format!("{v:.4}")).collect();
    Ok((
        decreasing && within,
        format!("L6 distances {}; identity sup error {worst:.1e}", lp_text.join(" > ")),
    ))
}

fn c9_certificates(_: &Path) -> Check {
    let grid = SampleDomain::cube(1, -5.0, 5.0, 0.1);
    let ou_spec = pairwise("OU-attraction", &ou(1.0)).map_err(err)?;
    let good = check_polynomial_case(&ou_spec, 2.0, 3.0, ConstantChoice::Search, &grid).map_err(err)?;
    let c = good.constant.ok_or("no constant found")?;
    let at_edge = |x: &[f64]| x.iter().any(|v| (v.abs() - 5.0).abs() < 1e-9);
    let cubic = pairwise("cubic", &CatalogParams::default()).map_err(err)?;
    let bad = check_polynomial_case(&cubic, 2.0, 3.0, ConstantChoice::Fixed(2.0), &grid).map_err(err)?;
    let bad_ok = !bad.pass
        && bad
            .margins
            .iter()
            .all(|m| m.worst > 0.0 && m.argmax.as_ref().is_some_and(|a| at_edge(&a.x) || at_edge(&a.y)));
    let (drift, sigma) = pairwise_as_interaction(&ou_spec).map_err(err)?;
    // η⁴ grows like |y|⁴ while V only like |y|²
    let cert = LyapunovCertificate::polynomial_case(2.0, 2.0).with_eta(|_, y| 1.0 + y[0].abs());
    let cond = check_c_conditions(&drift, sigma.as_ref(), &cert, &grid, &[0.0]).map_err(err)?;
    let aux = &cond.auxiliary_growth;
    let eta_ok = !cond.pass && aux.worst > 0.0 && aux.argmax.as_ref().is_some_and(|a| at_edge(&a.y));
    Ok((
        good.pass && c <= 2.0 && bad_ok && eta_ok,
        format!(
            "OU smallest C = {c:.4}; cubic worst margins {:?}; η mismatch worst {:.1} at y = {:?}",
            bad.margins.iter().map(|m| m.worst).collect::<Vec<_>>(),
            aux.worst,
            aux.argmax.as_ref().map(|a| a.y.clone())
        ),
    ))
}

fn c10_determinism(work: &Path) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, sub, cfg) in [
        ("run3", "oracle", RUN3),
        ("run4", "simulate", RUN4),
        ("run6", "stability", RUN6),
    ] {
        let one = work.join(format!("{name}-t1"));
        if !one.exists() {
            cli(work, name, sub, cfg, 1)?;
        }
        let (_, many) = cli(work, name, sub, cfg, 8)?;
        let (a, b) = (csvs(&one)?, csvs(&many)?);
        let same = !a.is_empty() && a == b;
        ok &= same;
        parts.push(format!(
            "{name}: {} CSVs {}",
            a.len(),
            if same { "identical" } else { "differ" }
        ));
    }
    Ok((ok, parts.join(", ")))
}

fn main() {
    let mut suite = Suite {
        work: tempfile::tempdir().expect("temporary directory"),
        failures: 0,
    };
    suite.criterion(1, "weighted TV exactness", 1, c1_weighted_tv);
    suite.criterion(2, "lower semicontinuity probes", 1, c2_lsc);
    suite.criterion(3, "sign drift oracle equivalence", 60, c3_oracle);
    suite.criterion(4, "mean-field OU variance", 90, c4_ou_variance);
    suite.criterion(5, "Lyapunov a priori bound", 90, c5_lyapunov);
    suite.criterion(6, "likelihood martingale", 30, c6_martingale);
    suite.criterion(7, "TV stability inequality", 180, c7_stability);
    suite.criterion(8, "mollification convergence", 30, c8_mollify);
    suite.criterion(9, "certificate checkers", 10, c9_certificates);
    suite.criterion(10, "thread-count determinism", 600, c10_determinism);
    if suite.failures > 0 {
        println!("{} criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
