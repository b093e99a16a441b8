use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_charlab"));
    c.env_remove("CHARLAB_SEED");
    c
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(config: &Path, out: &Path) -> Output {
    bin()
        .args(["run", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap()
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn without_timing(mut v: serde_json::Value) -> String {
    v["timing_ms"] = serde_json::Value::Null;
    serde_json::to_string(&v).unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn gaussian_run_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&example("sd_gaussian.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let r = report(dir.path());
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["conclusion"], "consistent_with_theorem");
    assert_eq!(r["elimination"]["passed"], true);
    assert!(r["artifacts"].as_array().unwrap().iter().any(|a| a == "lemma1.csv"));
}

#[test]
fn uniform_run_is_consistent_by_contrapositive() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&example("sd_uniform.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert_eq!(report(dir.path())["fields"][0]["verdict"], "not_polynomial");
}

#[test]
fn injected_fault_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&example("fault_injection.toml"), dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("eliminate_q"));
}

#[test]
fn failed_heyde_condition_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&example("heyde_fail.toml"), dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    assert_eq!(report(dir.path())["preconditions"]["ok"], false);
}

#[test]
fn singular_operator_is_an_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&example("singular.toml"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("A_1"), "{}", text(&o));
}

#[test]
fn schema_errors_exit_one_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "seed = 1\ntheorem = \"sd\"\nn = 2\nd = 1\ncomponents = [{ family = \"gaussian\" }]\n[grid]\nrayz = 3\n",
    )
    .unwrap();
    let o = run(&cfg, dir.path());
    assert_eq!(o.status.code(), Some(1));
    let t = text(&o);
    assert!(t.contains("rayz") && t.contains("line"), "{t}");
}

#[test]
fn seed_can_be_overridden_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("CHARLAB_SEED", "424242")
        .args(["run", example("sample_mean.toml").to_str().unwrap(), "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let r = report(dir.path());
    assert_eq!(r["seed"], 424242);
    assert_eq!(r["config"]["seed"], 424242);
}

#[test]
fn json_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"seed": 4, "theorem": "heyde", "n": 2, "d": 1,
            "components": [{"family": "gaussian"}],
            "operators": {"a": [1.0, 1.0], "b": [1.0, 2.0]}}"#,
    )
    .unwrap();
    let o = run(&cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
}

#[test]
fn verify_algebra_passes_and_catches_faults() {
    let ok = bin().arg("verify-algebra").output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok));
    assert!(text(&ok).contains("sd_elimination"));

    let bad = bin()
        .args(["verify-algebra", "--inject-fault", "annihilate_r"])
        .output()
        .unwrap();
    assert_ne!(bad.status.code(), Some(0));
    assert!(text(&bad).contains("at stage annihilate_r"), "{}", text(&bad));
}

#[test]
fn dump_field_writes_a_zero_residual_for_gaussians() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("l1.csv");
    let o = bin()
        .args(["dump-field", example("sd_gaussian.toml").to_str().unwrap(), "--equation", "lemma1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let re = headers.iter().position(|h| h == "residual_re").unwrap();
    let im = headers.iter().position(|h| h == "residual_im").unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let v: f64 = rec[re].parse::<f64>().unwrap().hypot(rec[im].parse().unwrap());
        assert!(v <= 1e-10, "residual {v}");
        rows += 1;
    }
    assert!(rows > 100);
}

#[test]
fn floor_outside_the_unit_interval_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text_cfg = fs::read_to_string(example("sd_gaussian.toml")).unwrap() + "\n[grid]\nfloor = 1.5\n";
    fs::write(&cfg, text_cfg).unwrap();
    let o = bin()
        .args(["dump-field", cfg.to_str().unwrap(), "--equation", "lemma1", "--out"])
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("grid.floor"));
}

#[test]
fn bundled_examples_are_reproducible() {
    let expected = [
        ("sd_gaussian.toml", 0),
        ("sd_uniform.toml", 0),
        ("heyde.toml", 0),
        ("heyde_fail.toml", 3),
        ("thm3.toml", 0),
        ("sample_mean.toml", 0),
        ("singular.toml", 1),
        ("fault_injection.toml", 2),
    ];
    for (name, code) in expected {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (oa, ob) = (run(&example(name), a.path()), run(&example(name), b.path()));
        assert_eq!(oa.status.code(), Some(code), "{name}: {}", text(&oa));
        assert_eq!(ob.status.code(), Some(code), "{name}");
        if code == 1 {
            continue;
        }
        assert_eq!(without_timing(report(a.path())), without_timing(report(b.path())), "{name}");
    }
}
