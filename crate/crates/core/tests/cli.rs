use std::path::Path;
use std::process::{Command, Output};

fn opslab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opslab"))
        .args(args)
        .current_dir(dir)
        .env_remove("OPSLAB_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = opslab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

const SMALL_SWEEP: &str = r#"
[env]
kind = "gridworld"
width = 3
height = 3
horizon = 4
slip = 0.1
start = [0, 0]
rewards = { kind = "goal", x = 2, y = 2, value = 1.0 }

[candidates.grid]
learning_rates = [0.001]
class_sizes = [256, 512]
alphas = [0.0, 1.0]
iterations = [10]

[methods]
list = ["ibes", "fqe", "tde"]

[sweep]
n = [20, 40]
seeds = 2
random_repeats = 200

[output]
dir = "sweep_out"
walltime = false
"#;

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        ok(
            dir,
            &[
                "gen-env",
                "--kind",
                "gridworld",
                "--width",
                "3",
                "--height",
                "3",
                "--H",
                "4",
            ],
        );
        ok(
            dir,
            &[
                "train-candidates",
                "--mdp",
                "mdp.json",
                "--out",
                "cands.json",
                "--seed",
                "4",
            ],
        );
        ok(
            dir,
            &[
                "gen-data",
                "--mdp",
                "mdp.json",
                "--candidates",
                "cands.json",
                "--n",
                "50",
                "--out",
                "d.jsonl",
            ],
        );
        let line = ok(
            dir,
            &[
                "select",
                "--mdp",
                "mdp.json",
                "--candidates",
                "cands.json",
                "--data",
                "d.jsonl",
                "--method",
                "fqe+ibes",
                "--out",
                "r.json",
            ],
        );
        assert!(line.starts_with("fqe+ibes: chosen"));
        ok(
            dir,
            &[
                "reduction-demo",
                "--mdp",
                "mdp.json",
                "--eps",
                "0.2",
                "--out",
                "trace.csv",
            ],
        );
    }
    for f in ["mdp.json", "cands.json", "d.jsonl", "r.json", "trace.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs between runs");
    }
    ok(
        a.path(),
        &[
            "train-candidates",
            "--mdp",
            "mdp.json",
            "--out",
            "cands.json",
            "--seed",
            "4",
        ],
    );
    assert_eq!(read(a.path(), "cands.json"), read(b.path(), "cands.json"));
    let trace = String::from_utf8(read(a.path(), "trace.csv")).unwrap();
    assert!(trace.starts_with("call,r,chosen,lower,upper\n"));
}

#[test]
fn seed_comes_from_flag_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-env", "--kind", "random", "--states", "3", "--H", "3"]);
    let run = |env: Option<&str>, flag: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_opslab"));
        c.current_dir(d).env_remove("OPSLAB_SEED");
        if let Some(v) = env {
            c.env("OPSLAB_SEED", v);
        }
        c.args([
            "gen-data", "--mdp", "mdp.json", "--regime", "uniform", "--n", "20", "--out", out,
        ]);
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        assert!(c.status().unwrap().success());
        std::fs::read(d.join(out)).unwrap()
    };
    let default = run(None, None, "a.jsonl");
    let zero = run(None, Some("0"), "b.jsonl");
    let env7 = run(Some("7"), None, "c.jsonl");
    let flag7 = run(Some("3"), Some("7"), "e.jsonl");
    assert_eq!(default, zero);
    assert_ne!(default, env7);
    assert_eq!(env7, flag7);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["gen-env", "--kind", "tree-hard", "--A", "2", "--H", "2", "--out", "t"],
    );
    assert!(d.join("t/mdp1.json").exists() && d.join("t/mdp2.json").exists());
    let bad_method = opslab(
        d,
        &[
            "select",
            "--mdp",
            "t/mdp1.json",
            "--candidates",
            "x",
            "--data",
            "y",
            "--method",
            "magic",
        ],
    );
    assert_eq!(bad_method.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_method.stderr).contains("valid methods"));
    let missing = opslab(d, &["train-candidates", "--mdp", "nope.json", "--out", "c.json"]);
    assert_eq!(missing.status.code(), Some(3));
    std::fs::write(d.join("bad.toml"), "[env]\nkind = \"gridworld\"\nbogus = 1\n").unwrap();
    assert_eq!(opslab(d, &["sweep", "--config", "bad.toml"]).status.code(), Some(2));
    let bad_eps = opslab(d, &["gen-env", "--kind", "tree-hard", "--eps", "0.5"]);
    assert_eq!(bad_eps.status.code(), Some(2));
}

#[test]
fn sweep_resumes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("sweep.toml"), SMALL_SWEEP).unwrap();
    let first = ok(d, &["sweep", "--config", "sweep.toml", "--jobs", "2"]);
    assert!(first.contains("16 rows (4 cells computed)"), "{first}");
    let csv = read(d, "sweep_out/results.csv");
    let again = ok(d, &["sweep", "--config", "sweep.toml"]);
    assert!(again.contains("(0 cells computed)"));
    assert_eq!(read(d, "sweep_out/results.csv"), csv);

    let serial = tempfile::tempdir().unwrap();
    std::fs::write(serial.path().join("sweep.toml"), SMALL_SWEEP).unwrap();
    ok(serial.path(), &["sweep", "--config", "sweep.toml", "--jobs", "1"]);
    let mut a: Vec<String> = String::from_utf8(csv).unwrap().lines().map(String::from).collect();
    let mut b: Vec<String> = String::from_utf8(read(serial.path(), "sweep_out/results.csv"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);

    let listing = ok(d, &["report", "--csv", "sweep_out/results.csv", "--out", "rep"]);
    assert!(listing.contains("summary.json") && listing.contains(".svg"));
    let summary: serde_json::Value = serde_json::from_slice(&read(d, "rep/summary.json")).unwrap();
    assert_eq!(summary["groups"].as_array().unwrap().len(), 2 * 4);
}
