//! Command-line experiment runner.
//!
//! Every run reads a flat config, writes `report.json`, one or more CSV
//! series and `config.resolved` (the full resolved configuration, which can
//! be passed back as `--config` to reproduce the run) into the output
//! directory. Exit codes: 0 success, 1 failed check or failed run, 2 usage
//! or configuration error.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::coefficients::catalog::{pairwise_as_interaction, CatalogParams, Registry};
use crate::coefficients::checks::{check_exponential_case, check_polynomial_case, ConstantChoice, SampleDomain};
use crate::coefficients::{CoefficientSet, PairwiseMeanFieldSpec};
use crate::config::{render, Config, Resolver};
use crate::error::{Error, Result};
use crate::girsanov::{companion_seed, martingale_check, tv_stability_check};
use crate::lyapunov::{
    check_c_conditions, generator_margin_pairwise, monitor_expectation, smallest_generator_constant,
    LyapunovCertificate, LyapunovFunction, RadialLyapunov,
};
use crate::measure::WeightFunction;
use crate::mollify::{
    default_sharpness, lp_distance_on_ball, mollify_coefficient, pairwise_dispersion_field, pairwise_drift_field,
    section, sup_distance_on_ball, BallGrid, Field, MollifierSpec, DEFAULT_POINTS,
};
use crate::oracle::{oracle_compare, particle_coefficients, GaussianMixture, ScalarH, ScalarLawProblem};
use crate::solver::{integrability_report, simulate, InitialLaw, LawEstimator, SimConfig};

pub const ARTIFACT_VERSION: &str = concat!("mvlab ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "mvlab", version, about = "Particle experiments for law-dependent SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides output.path.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate a particle system from the coefficient catalog.
    Simulate,
    /// Compare a mean-field simulation with the exact mean path.
    Oracle,
    /// Weighted-TV stability check or martingale check.
    Stability,
    /// Generator or growth-case margins of a Lyapunov certificate.
    CheckCertificate,
    /// The four conditions for a delayed interaction drift.
    CheckConditions,
    /// Sections and distances of a mollified coefficient.
    MollifyInspect,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Oracle => "oracle",
            Command::Stability => "stability",
            Command::CheckCertificate => "check-certificate",
            Command::CheckConditions => "check-conditions",
            Command::MollifyInspect => "mollify-inspect",
        }
    }
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension { .. } | Error::Io(_) | Error::Json(_) => {
            exit::USAGE
        }
        _ => exit::CHECK_FAILED,
    }
}

/// Parses the process arguments and runs; returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    run(&cli)
}

pub fn run(cli: &Cli) -> i32 {
    let go = || -> Result<bool> {
        let path = cli
            .common
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Config::parse(&text)?;
        if let Some(s) = cli.common.seed {
            cfg.set("seed", s);
        }
        if let Some(o) = &cli.common.out {
            cfg.set("output.path", o.display());
        }
        match cli.common.threads {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::Config(format!("cannot build a pool of {n} threads: {e}")))?;
                pool.install(|| execute(cli.command, &cfg))
            }
            None => execute(cli.command, &cfg),
        }
    };
    match go() {
        Ok(true) => exit::OK,
        Ok(false) => exit::CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one subcommand on a parsed config; `Ok(pass)`.
pub fn execute(command: Command, cfg: &Config) -> Result<bool> {
    let r = Resolver::new(cfg);
    match command {
        Command::Simulate => run_simulate(&r),
        Command::Oracle => run_oracle(&r),
        Command::Stability => run_stability(&r),
        Command::CheckCertificate => run_check_certificate(&r),
        Command::CheckConditions => run_check_conditions(&r),
        Command::MollifyInspect => run_mollify_inspect(&r),
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    artifact_version: &'static str,
    subcommand: &'static str,
    seed: Option<u64>,
    config: &'a BTreeMap<String, String>,
    pass: bool,
    verdicts: BTreeMap<&'static str, bool>,
    report: T,
}

struct Output {
    dir: PathBuf,
    command: Command,
    resolved: BTreeMap<String, String>,
}

impl Output {
    fn new(r: &Resolver<'_>, command: Command) -> Result<Self> {
        let dir: String = r.or("output.path", "out".to_string())?;
        r.or("seed", 0u64)?;
        let resolved = r.finish(command.name())?;
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir)?;
        let out = Self { dir, command, resolved };
        let header = format!("{ARTIFACT_VERSION} {}", command.name());
        fs::write(out.path("config.resolved"), render(&header, &out.resolved))?;
        Ok(out)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn csv(&self, name: &str, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(self.path(name))?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn report<T: Serialize>(&self, verdicts: &[(&'static str, bool)], report: T) -> Result<bool> {
        let pass = verdicts.iter().all(|v| v.1);
        let env = Envelope {
            artifact_version: ARTIFACT_VERSION,
            subcommand: self.command.name(),
            seed: self.resolved.get("seed").and_then(|s| s.parse().ok()),
            config: &self.resolved,
            pass,
            verdicts: verdicts.iter().copied().collect(),
            report,
        };
        let text = serde_json::to_string_pretty(&env)?;
        fs::write(self.path("report.json"), text + "\n")?;
        Ok(pass)
    }
}

fn catalog_params(r: &Resolver<'_>, prefix: &str, base: &CatalogParams) -> Result<CatalogParams> {
    Ok(CatalogParams {
        dim: r.or(&format!("{prefix}.dim"), base.dim)?,
        theta: r.or(&format!("{prefix}.theta"), base.theta)?,
        sigma: r.or(&format!("{prefix}.sigma"), base.sigma)?,
        c: r.or(&format!("{prefix}.c"), base.c)?,
        tau: base.tau,
    })
}

fn coefficients(r: &Resolver<'_>) -> Result<(String, CatalogParams, CoefficientSet)> {
    let name: String = r.required("coefficients.name")?;
    let base = CatalogParams {
        tau: r.or("tau", 0.0)?,
        ..CatalogParams::default()
    };
    let p = catalog_params(r, "coefficients", &base)?;
    let set = Registry::builtin().build(&name, &p)?;
    Ok((name, p, set))
}

fn pairwise_spec(name: &str, set: CoefficientSet) -> Result<PairwiseMeanFieldSpec> {
    match set {
        CoefficientSet::Pairwise(s) => Ok(s),
        _ => Err(Error::Config(format!(
            "coefficients.name '{name}' is not a pairwise mean-field entry"
        ))),
    }
}

fn initial_law(r: &Resolver<'_>, dim: usize) -> Result<InitialLaw> {
    let kind: String = r.or("init.kind", "point".to_string())?;
    let zeros = vec![0.0; dim];
    let law = match kind.as_str() {
        "point" => InitialLaw::ConstantPoint(r.list_or("init.mean", &zeros)?),
        "gaussian" => InitialLaw::Gaussian {
            mean: r.list_or("init.mean", &zeros)?,
            sd: r.list_or("init.sd", &vec![1.0; dim])?,
        },
        "mixture" => InitialLaw::Mixture {
            weights: r.list_or("init.weights", &[1.0])?,
            means: r.groups_or("init.means", std::slice::from_ref(&zeros))?,
            sds: r.groups_or("init.sds", &[vec![1.0; dim]])?,
        },
        other => {
            return Err(Error::Config(format!(
                "init.kind must be point, gaussian or mixture, got '{other}'"
            )))
        }
    };
    law.validate().map_err(|e| Error::Config(format!("init.*: {e}")))?;
    if law.dim() != dim {
        return Err(Error::Config(format!(
            "init.* has dimension {}, coefficients need {dim}",
            law.dim()
        )));
    }
    Ok(law)
}

fn sim_config(r: &Resolver<'_>) -> Result<SimConfig> {
    let n: usize = r.required("N")?;
    let dt: f64 = r.required("dt")?;
    let horizon: f64 = r.required("T")?;
    let seed: u64 = r.or("seed", 0)?;
    let estimator: String = r.or("estimator", "atoms".to_string())?;
    let estimator = match estimator.as_str() {
        "atoms" => LawEstimator::Atoms,
        "grid" => LawEstimator::Grid {
            cell_width: r.required("estimator.cell_width")?,
        },
        other => return Err(Error::Config(format!("estimator must be atoms or grid, got '{other}'"))),
    };
    Ok(SimConfig::new(n, dt, horizon, seed)
        .with_delay(r.or("tau", 0.0)?)
        .with_estimator(estimator)
        .with_record_stride(r.or("record_stride", 1)?))
}

fn weight(r: &Resolver<'_>, key: &str, default: &str) -> Result<WeightFunction> {
    let s: String = r.or(key, default.to_string())?;
    WeightFunction::parse(&s)
        .ok_or_else(|| Error::Config(format!("key '{key}': expected unit, poly:A or exp:A:P, got '{s}'")))
}

fn lyapunov_function(r: &Resolver<'_>, key: &str) -> Result<RadialLyapunov> {
    let s: String = r.or(key, "poly:2".to_string())?;
    let parts: Vec<&str> = s.split(':').collect();
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::Config(format!("key '{key}': bad number '{v}'")))
    };
    match parts.as_slice() {
        ["poly", a] => Ok(RadialLyapunov::polynomial(num(a)?)),
        ["exp", a, p] => Ok(RadialLyapunov::exponential(num(a)?, num(p)?)),
        _ => Err(Error::Config(format!(
            "key '{key}': expected poly:A or exp:A:P, got '{s}'"
        ))),
    }
}

fn sample_domain(r: &Resolver<'_>, dim: usize) -> Result<SampleDomain> {
    let lo: f64 = r.or("grid.lo", -5.0)?;
    let hi: f64 = r.or("grid.hi", 5.0)?;
    let step: f64 = r.or("grid.step", 0.1)?;
    if !(hi >= lo && step > 0.0) {
        return Err(Error::Config(
            "grid.* needs grid.lo <= grid.hi and grid.step > 0".into(),
        ));
    }
    Ok(SampleDomain::cube(dim, lo, hi, step)
        .with_times(r.list_or("grid.times", &[0.0])?)
        .with_lags(r.list_or("grid.lags", &[0.0])?))
}

/// Trajectories, summary moments, integrability and an optional moment
/// bound monitor (`monitor.V`, `monitor.C`).
fn run_simulate(r: &Resolver<'_>) -> Result<bool> {
    let (_, p, coeffs) = coefficients(r)?;
    let init = initial_law(r, p.dim)?;
    let cfg = sim_config(r)?;
    let particle_stride: usize = r.or("output.particle_stride", 1)?;
    let threshold: f64 = r.or("integrability.threshold", 1e6)?;
    let monitor = if r.has("monitor.V") || r.has("monitor.C") {
        let v = lyapunov_function(r, "monitor.V")?;
        Some(LyapunovCertificate::new(Arc::new(v), r.required("monitor.C")?))
    } else {
        None
    };
    let out = Output::new(r, Command::Simulate)?;
    let ens = simulate(&coeffs, &init, &cfg)?;
    out.csv("trajectories.csv", |w| ens.write_trajectories_csv(w, particle_stride))?;
    out.csv("summary.csv", |w| ens.write_summary_csv(w))?;
    let integ = integrability_report(&ens, threshold);
    let mon = monitor.as_ref().map(|c| monitor_expectation(&ens, c));
    if let Some(m) = &mon {
        out.csv("monitor.csv", |w| {
            writeln!(w, "t,mean,se,bound,flagged")?;
            for row in &m.rows {
                writeln!(w, "{},{},{},{},{}", row.t, row.mean, row.se, row.bound, row.flagged)?;
            }
            Ok(())
        })?;
    }
    let last = ens.recorded_len() - 1;
    let (mean, var) = ens.moments(last);
    let mut verdicts = vec![("integrability", integ.pass)];
    if let Some(m) = &mon {
        verdicts.push(("moment_bound", m.pass));
    }
    out.report(
        &verdicts,
        serde_json::json!({
            "provenance": ens.provenance(),
            "warnings": ens.warnings(),
            "final_time": ens.times()[last],
            "final_mean": mean,
            "final_variance": var,
            "integrability": integ,
            "monitor": mon,
        }),
    )
}

fn run_oracle(r: &Resolver<'_>) -> Result<bool> {
    let name: String = r.or("h.name", "sign".to_string())?;
    let h = ScalarH::catalog(&name, r.or("h.c", 1.0)?, r.or("h.growth_T", f64::INFINITY)?)
        .map_err(|e| Error::Config(format!("h.*: {e}")))?;
    let mu0 = GaussianMixture {
        weights: r.list_or("mu0.weights", &[1.0])?,
        means: r.list_or("mu0.means", &[0.0])?,
        sds: r.list_or("mu0.sds", &[0.0])?,
    };
    let cfg = sim_config(r)?;
    let slack: f64 = r.or("bias_slack", 1.0)?;
    let problem =
        ScalarLawProblem::new(h, mu0, cfg.horizon).map_err(|e| Error::Config(format!("oracle problem: {e}")))?;
    let out = Output::new(r, Command::Oracle)?;
    let coeffs = particle_coefficients(&problem);
    let ens = simulate(&coeffs, &problem.mu0.initial_law(), &cfg)?;
    let report = oracle_compare(&problem, &ens, slack)?;
    out.csv("oracle.csv", |w| report.write_csv(w))?;
    out.report(&[("oracle", report.pass)], &report)
}

fn run_stability(r: &Resolver<'_>) -> Result<bool> {
    let mode: String = r.or("mode", "inequality".to_string())?;
    match mode.as_str() {
        "inequality" => run_inequality(r),
        "martingale" => run_martingale(r),
        other => Err(Error::Config(format!(
            "mode must be inequality or martingale, got '{other}'"
        ))),
    }
}

fn run_inequality(r: &Resolver<'_>) -> Result<bool> {
    let (name1, p1, c1) = coefficients(r)?;
    let name2: String = r.or("coefficients2.name", name1)?;
    let p2 = catalog_params(r, "coefficients2", &p1)?;
    let c2 = Registry::builtin().build(&name2, &p2)?;
    let init = initial_law(r, p1.dim)?;
    let cfg = sim_config(r)?;
    let seed2: u64 = r.or("seed2", companion_seed(cfg.seed))?;
    let phi = weight(r, "weight", "poly:2")?;
    let times = r.list_or("times", &[cfg.horizon])?;
    let cell: f64 = r.or("cell_width", 0.05)?;
    let out = Output::new(r, Command::Stability)?;
    let report = tv_stability_check([&c1, &c2], &init, &cfg, [cfg.seed, seed2], &phi, &times, cell)?;
    out.csv("stability.csv", |w| report.write_csv(w))?;
    out.report(&[("stability", report.pass)], &report)
}

fn run_martingale(r: &Resolver<'_>) -> Result<bool> {
    let c = r.list_or("martingale.c", &[0.5])?;
    let paths: usize = r.required("N")?;
    let dt: f64 = r.required("dt")?;
    let horizon: f64 = r.required("T")?;
    let seed: u64 = r.or("seed", 0)?;
    let stride: usize = r.or("record_stride", 100)?;
    let out = Output::new(r, Command::Stability)?;
    let d1 = c.len();
    let drift = move |_t: f64, _w: &[f64], o: &mut [f64]| o.copy_from_slice(&c);
    let report = martingale_check(&drift, d1, paths, dt, horizon, seed, stride)?;
    out.csv("martingale.csv", |w| report.write_csv(w))?;
    out.report(&[("martingale", report.pass)], &report)
}

fn run_check_certificate(r: &Resolver<'_>) -> Result<bool> {
    let (name, p, set) = coefficients(r)?;
    let spec = pairwise_spec(&name, set)?;
    let kind: String = r.or("certificate.kind", "generator".to_string())?;
    let constant: String = r.or("certificate.C", "search".to_string())?;
    let choice = match constant.as_str() {
        "search" => ConstantChoice::Search,
        v => ConstantChoice::Fixed(
            v.parse()
                .map_err(|_| Error::Config(format!("certificate.C must be a number or search, got '{v}'")))?,
        ),
    };
    match kind.as_str() {
        "generator" => {
            let v = lyapunov_function(r, "certificate.V")?;
            let dom = sample_domain(r, p.dim)?;
            let out = Output::new(r, Command::CheckCertificate)?;
            let c = match choice {
                ConstantChoice::Fixed(c) => Some(c),
                ConstantChoice::Search => smallest_generator_constant(&v, &spec, &dom)?,
            };
            let report = c
                .map(|c| generator_margin_pairwise(&LyapunovCertificate::new(Arc::new(v), c), &spec, &dom))
                .transpose()?;
            let pass = report.as_ref().is_some_and(|m| m.pass);
            out.report(
                &[("generator", pass)],
                serde_json::json!({
                    "lyapunov": v.descriptor(),
                    "constant": c,
                    "domain": dom.describe(),
                    "margins": report.into_iter().collect::<Vec<_>>(),
                }),
            )
        }
        "polynomial" | "exponential" => {
            let alpha: f64 = r.or("certificate.alpha", 2.0)?;
            let q: f64 = r.or("certificate.q", 3.0)?;
            let pexp: f64 = if kind == "exponential" {
                r.or("certificate.p", 1.0)?
            } else {
                0.0
            };
            let dom = sample_domain(r, p.dim)?;
            let out = Output::new(r, Command::CheckCertificate)?;
            let report = if kind == "polynomial" {
                check_polynomial_case(&spec, alpha, q, choice, &dom)?
            } else {
                check_exponential_case(&spec, alpha, pexp, q, choice, &dom)?
            };
            out.report(&[("growth_case", report.pass)], &report)
        }
        other => Err(Error::Config(format!(
            "certificate.kind must be generator, polynomial or exponential, got '{other}'"
        ))),
    }
}

fn run_check_conditions(r: &Resolver<'_>) -> Result<bool> {
    let (_, p, set) = coefficients(r)?;
    let (drift, sigma) = match set {
        CoefficientSet::Delayed { drift, dispersion } => (drift, dispersion),
        CoefficientSet::Pairwise(s) => pairwise_as_interaction(&s)?,
        CoefficientSet::Factored(_) => return Err(Error::Config("check-conditions needs an interaction drift".into())),
    };
    let case: String = r.or("certificate.case", "polynomial".to_string())?;
    let alpha: f64 = r.or("certificate.alpha", 2.0)?;
    let c: f64 = r.or("certificate.C", 1.0)?;
    let cert = match case.as_str() {
        "polynomial" => LyapunovCertificate::polynomial_case(alpha, c),
        "exponential" => LyapunovCertificate::exponential_case(alpha, r.or("certificate.p", 1.0)?, c),
        other => {
            return Err(Error::Config(format!(
                "certificate.case must be polynomial or exponential, got '{other}'"
            )))
        }
    };
    let dom = sample_domain(r, p.dim)?;
    let init = initial_law(r, p.dim)?;
    let samples: usize = r.or("initial.samples", 1000)?;
    let seed: u64 = r.or("seed", 0)?;
    let out = Output::new(r, Command::CheckConditions)?;
    let streams = crate::rng::NoiseStreams::new(seed);
    let mut initial = Vec::with_capacity(samples * p.dim);
    for i in 0..samples as u64 {
        let path = init.sample_path(&streams, i, 0)?;
        initial.extend_from_slice(&path);
    }
    let report = check_c_conditions(&drift, sigma.as_ref(), &cert, &dom, &initial)?;
    out.report(&[("conditions", report.pass)], &report)
}

fn run_mollify_inspect(r: &Resolver<'_>) -> Result<bool> {
    let (name, p, set) = coefficients(r)?;
    let spec = pairwise_spec(&name, set)?;
    let d = p.dim;
    let component: String = r.or("mollify.component", "drift".to_string())?;
    let (raw, power): (Arc<dyn Field>, u32) = match component.as_str() {
        "drift" => (Arc::new(pairwise_drift_field(&spec)), 2),
        "dispersion" => (Arc::new(pairwise_dispersion_field(&spec)), 1),
        other => {
            return Err(Error::Config(format!(
                "mollify.component must be drift or dispersion, got '{other}'"
            )))
        }
    };
    let n: usize = r.or("mollify.n", 2)?;
    let sharp: f64 = r.or("mollify.r", default_sharpness(n))?;
    let points: usize = r.or("mollify.points", DEFAULT_POINTS)?;
    let m = MollifierSpec::new(2 * d, n, sharp).with_points(points);
    m.validate().map_err(|e| Error::Config(format!("mollify.*: {e}")))?;
    let t: f64 = r.or("section.t", 0.0)?;
    let from = r.list_or("section.from", &vec![-2.0; 2 * d])?;
    let to = r.list_or("section.to", &vec![2.0; 2 * d])?;
    let count: usize = r.or("section.count", 201)?;
    let radius: f64 = r.or("distance.radius", 1.0)?;
    let grid_points: usize = r.or("distance.points", 41)?;
    let lp: f64 = r.or("distance.p", 6.0)?;
    let horizon: f64 = r.or("distance.T", 1.0)?;
    let time_points: usize = r.or("distance.time_points", 1)?;
    if from.len() != 2 * d || to.len() != 2 * d {
        return Err(Error::Config(format!(
            "section.from and section.to need {} values (x then y)",
            2 * d
        )));
    }
    let out = Output::new(r, Command::MollifyInspect)?;
    let moll = mollify_coefficient(raw.clone(), &m, power)?;
    let rows = section(raw.as_ref(), &moll, t, &from, &to, count)?;
    let k = raw.out_dim();
    out.csv("section.csv", |w| {
        let z: Vec<String> = (0..2 * d).map(|i| format!("z{i}")).collect();
        let a: Vec<String> = (0..k).map(|i| format!("raw{i}")).collect();
        let b: Vec<String> = (0..k).map(|i| format!("mollified{i}")).collect();
        writeln!(w, "s,{},{},{}", z.join(","), a.join(","), b.join(","))?;
        for row in &rows {
            let vals: Vec<String> = row
                .point
                .iter()
                .chain(&row.raw)
                .chain(&row.mollified)
                .map(|v| v.to_string())
                .collect();
            writeln!(w, "{},{}", row.s, vals.join(","))?;
        }
        Ok(())
    })?;
    let grid = BallGrid::new(2 * d, d, radius, grid_points);
    let sup = sup_distance_on_ball(raw.as_ref(), &moll, t, &grid)?;
    let lpd = lp_distance_on_ball(raw.as_ref(), &moll, lp, horizon, time_points, &grid)?;
    let finite = sup.is_finite() && lpd.is_finite();
    out.report(
        &[("finite", finite)],
        serde_json::json!({
            "mollifier": m,
            "support_radius": m.support_radius(),
            "component": component,
            "grid": grid,
            "sup_distance": sup,
            "lp_exponent": lp,
            "lp_distance": lpd,
            "section_points": rows.len(),
        }),
    )
}
