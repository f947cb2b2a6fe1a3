use std::path::{Path, PathBuf};

use adasub::cli::{main_with, CSV_HEADER, EXIT_CHECKS, EXIT_CONFIG, EXIT_OK, OUT_DIR_ENV};

const SMALL: &str = r#"
seed = 3
trials = 2
n = 80

[population]
kind = "bernoulli"
p = 0.3

[mechanism]
kind = "sq"

[analyst]
kind = "fixed"
rounds = 4
tau = 0.2
delta = 0.1
queries = [{ kind = "indicator", value = 1 }, { kind = "threshold", at = 0 }]
"#;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn adasub(args: &[&str]) -> Out {
    let (mut so, mut se) = (Vec::new(), Vec::new());
    let argv = std::iter::once("adasub").chain(args.iter().copied());
    let code = main_with(argv, &mut so, &mut se);
    Out {
        code,
        stdout: String::from_utf8(so).unwrap(),
        stderr: String::from_utf8(se).unwrap(),
    }
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let csv = dir.path().join("out/report.csv");
    let o = adasub(&["run", s(&cfg), "--out", s(&csv)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(lines.count(), 2 * (4 + 2));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["trials"], 2);
    assert_eq!(summary["plan"]["n"], 80);
    assert!(o.stdout.contains("within bound"));
}

#[test]
fn numbers_use_twelve_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let csv = dir.path().join("r.csv");
    assert_eq!(adasub(&["run", s(&cfg), "--out", s(&csv)]).code, EXIT_OK);
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    for rec in reader.records() {
        let rec = rec.unwrap();
        for field in [4, 5, 6, 7, 8, 10] {
            let v = &rec[field];
            let digits = v.trim_start_matches('-').replace('.', "");
            let significant = digits.trim_start_matches('0').len();
            assert!(significant <= 12, "{v}");
            assert!(!v.contains('e'), "{v}");
            assert!(v.parse::<f64>().is_ok());
        }
        assert!(matches!(&rec[9], "true" | "false"));
    }
}

#[test]
fn seed_override_changes_values_not_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    assert_eq!(adasub(&["run", s(&cfg), "--out", s(&a)]).code, EXIT_OK);
    assert_eq!(adasub(&["run", s(&cfg), "--out", s(&b), "--seed", "4"]).code, EXIT_OK);
    assert_eq!(adasub(&["run", s(&cfg), "--out", s(&c), "--threads", "1"]).code, EXIT_OK);
    let read = |p: &Path| std::fs::read_to_string(p).unwrap();
    let (ta, tb) = (read(&a), read(&b));
    assert_ne!(ta, tb);
    assert_eq!(ta, read(&c));
    let key = |t: &str| -> Vec<String> {
        t.lines().map(|l| l.split(',').take(4).collect::<Vec<_>>().join(",")).collect()
    };
    assert_eq!(key(&ta), key(&tb));
}

#[test]
fn unknown_mechanism_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &SMALL.replace("kind = \"sq\"", "kind = \"oracle\""));
    let o = adasub(&["run", s(&cfg), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(o.code, EXIT_CONFIG);
    assert!(o.stderr.contains("mechanism.kind"), "{}", o.stderr);
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("unknown_key.toml", SMALL.replace("p = 0.3", "p = 0.3\nbias = 1")),
        ("tau.toml", SMALL.replace("tau = 0.2", "tau = 1.0")),
        ("trials.toml", SMALL.replace("trials = 2", "trials = 0")),
        ("syntax.toml", SMALL.replace("seed = 3", "seed = ")),
    ] {
        let cfg = write_config(dir.path(), name, &text);
        let o = adasub(&["run", s(&cfg), "--out", s(&dir.path().join("x.csv"))]);
        assert_eq!(o.code, EXIT_CONFIG, "{name}: {}", o.stderr);
    }
    assert_eq!(adasub(&["run", "/nonexistent/config.toml"]).code, EXIT_CONFIG);
    assert_eq!(adasub(&["frobnicate"]).code, EXIT_CONFIG);
}

#[test]
fn failed_checks_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let strict = format!("{SMALL}\n[checks]\nmax_bias = 0.0\n");
    let cfg = write_config(dir.path(), "strict.toml", &strict);
    let o = adasub(&["run", s(&cfg), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(o.code, EXIT_CHECKS);
    assert!(o.stdout.contains("FAIL"));
    assert!(dir.path().join("x.csv").exists());
}

#[test]
fn default_output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "envrun.toml", SMALL);
    let target = dir.path().join("reports");
    std::env::set_var(OUT_DIR_ENV, &target);
    let o = adasub(&["run", s(&cfg)]);
    std::env::remove_var(OUT_DIR_ENV);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(target.join("envrun.csv").exists());
    assert!(target.join("envrun.summary.json").exists());
}

#[test]
fn verify_suites() {
    let o = adasub(&["verify", "chi2-stability", "--trials", "1000"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stdout);
    assert!(o.stdout.starts_with("PASS chi2-stability: 1000 instances, 0 failed"));
    let o = adasub(&["verify", "var-contraction-linear-equality"]);
    assert_eq!(o.code, EXIT_OK);
    let worst: f64 = o.stdout.split("worst ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(worst <= 1e-10);
    let o = adasub(&["verify", "unknown"]);
    assert_eq!(o.code, EXIT_CONFIG);
    assert!(o.stderr.contains("suite"));
}

#[test]
fn params_tables() {
    let o = adasub(&["params", "sq", "--n", "15000", "--rounds", "1000", "--tau", "0.1", "--delta", "0.1"]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stdout.contains("votes (k)        8478"), "{}", o.stdout);
    assert!(o.stdout.contains("epsilon          0.000199715484904"));
    assert_eq!(
        adasub(&["params", "sq", "--n", "100", "--rounds", "10", "--tau", "1", "--delta", "0.1"]).code,
        EXIT_CONFIG
    );
    let o = adasub(&["params", "median", "--rounds", "100", "--range", "1024", "--delta", "0.05", "--c-m", "8"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.contains("groups (k)       85"), "{}", o.stdout);
    let o = adasub(&["params", "median", "--rounds", "100", "--range", "1024", "--delta", "0.05"]);
    assert!(o.stdout.contains("groups (k)       530"), "{}", o.stdout);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            adasub::cli::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
