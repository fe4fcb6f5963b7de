use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvlab"))
}

fn run(dir: &Path, sub: &str, cfg: &str, extra: &[&str]) -> (i32, PathBuf) {
    let cfg_path = dir.join(format!("{sub}.cfg"));
    fs::write(&cfg_path, cfg).unwrap();
    let out = dir.join(format!("out-{sub}-{}", extra.join("_").replace('-', "")));
    let status = bin()
        .arg(sub)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    (status.status.code().unwrap(), out)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn assert_schema(sub: &str, instance: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("schemas/{sub}.schema.json"));
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    if let Err(errors) = compiled.validate(instance) {
        let msgs: Vec<String> = errors.map(|e| format!("{e} at {}", e.instance_path)).collect();
        panic!("{sub} report violates schema: {msgs:?}");
    };
}

const SIMULATE: &str = "coefficients.name=OU-attraction\nN=64\ndt=0.01\nT=0.2\nmonitor.V=poly:2\nmonitor.C=2\n";

#[test]
fn zero_coefficients_keep_particles_still() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "coefficients.name=zero\ninit.kind=gaussian\nN=5\ndt=0.1\nT=0.5\n";
    let (code, out) = run(dir.path(), "simulate", cfg, &[]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let mut first: Vec<Vec<String>> = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<String> = line.split(',').map(str::to_string).collect();
        let particle: usize = cols[1].parse().unwrap();
        if first.len() <= particle {
            first.push(cols[2..].to_vec());
        } else {
            assert_eq!(first[particle], cols[2..].to_vec(), "particle {particle} moved");
        }
    }
    assert_eq!(first.len(), 5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, "simulate", SIMULATE, &[]).0, 0);
    assert_eq!(
        run(d, "simulate", "coefficients.name=zero\ndt=0.1\nT=1\n", &[]).0,
        2,
        "missing N"
    );
    assert_eq!(
        run(d, "simulate", &format!("{SIMULATE}bogus=3\n"), &[]).0,
        2,
        "unknown key"
    );
    assert_eq!(
        run(d, "simulate", "coefficients.name=no-such\nN=2\ndt=0.1\nT=1\n", &[]).0,
        2
    );
    assert_eq!(run(d, "simulate", "N=2\nN=3\n", &[]).0, 2, "duplicate key");

    // Repelling drift b(x)=x cannot satisfy the generator inequality with C=0.
    let repel = "coefficients.name=OU-attraction\ncoefficients.theta=-1\ncertificate.kind=generator\ncertificate.C=0\n";
    let (code, out) = run(d, "check-certificate", repel, &[]);
    assert_eq!(code, 1);
    let r = report(&out);
    assert_eq!(r["pass"], Value::Bool(false));
    assert!(r["report"]["margins"][0]["worst"].as_f64().unwrap() > 0.0);

    let code = bin().arg("frobnicate").output().unwrap().status.code().unwrap();
    assert_eq!(code, 2);
}

#[test]
fn reports_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: &[(&str, &str)] = &[
        ("simulate", SIMULATE),
        ("oracle", "N=400\ndt=0.01\nT=0.5\nmu0.weights=1\nmu0.means=1\nmu0.sds=0\nbias_slack=3\n"),
        (
            "stability",
            "coefficients.name=OU-attraction\ncoefficients2.name=OU-attraction\ncoefficients2.c=0.2\nN=200\ndt=0.01\nT=0.3\n",
        ),
        ("check-certificate", "coefficients.name=OU-attraction\ncertificate.kind=generator\ncertificate.C=search\n"),
        (
            "check-conditions",
            "coefficients.name=linear-meanfield\ncertificate.case=polynomial\ncertificate.alpha=2\ngrid.step=0.5\n",
        ),
        ("mollify-inspect", "coefficients.name=sign\nsection.from=-1,0\nsection.to=1,0\nsection.count=11\n"),
    ];
    for (sub, cfg) in cases {
        let (code, out) = run(d, sub, cfg, &[]);
        assert!(code == 0 || code == 1, "{sub} exited {code}");
        let r = report(&out);
        assert_eq!(r["subcommand"], Value::String(sub.to_string()));
        assert_eq!(r["pass"].as_bool().unwrap(), code == 0, "{sub}");
        assert_schema(sub, &r);
    }
    let (code, out) = run(d, "stability", "mode=martingale\nN=100\ndt=0.01\nT=0.2\n", &[]);
    assert_eq!(code, 0);
    assert_schema("stability", &report(&out));
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, first) = run(d, "simulate", SIMULATE, &["--seed", "11"]);
    assert_eq!(code, 0);
    let resolved = fs::read_to_string(first.join("config.resolved")).unwrap();
    assert!(resolved.contains("seed=11"));
    assert!(resolved.contains("output.particle_stride=1"));

    let again = d.join("again");
    let status = bin()
        .arg("simulate")
        .arg("--config")
        .arg(first.join("config.resolved"))
        .arg("--out")
        .arg(&again)
        .status()
        .unwrap();
    assert!(status.success());
    let (a, b) = (csv_files(&first), csv_files(&again));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, one) = run(d, "simulate", SIMULATE, &["--threads", "1"]);
    let (_, many) = run(d, "simulate", SIMULATE, &["--threads", "6"]);
    assert_eq!(csv_files(&one), csv_files(&many));
}
