use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SEQMOBO: &str = env!("CARGO_BIN_EXE_seqmobo");
const ECHO: &str = env!("CARGO_BIN_EXE_echo-oracle");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn seqmobo(args: &[&str]) -> Output {
    Command::new(SEQMOBO).args(args).output().expect("seqmobo binary")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, method: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"
method = "{method}"
seed = 4
budget = 30
n_init = 10
{extra}
[space]
parental = "QVQLVESGGGLVQ"
max_mutations = 3
allowed = {{ "1" = "AILV", "4" = "STQ", "7" = "ADE", "9" = "YWF", "12" = "KRQ" }}

[ga]
population_size = 10
generations = 3

[acquisition]
mc_samples = 16

[[oracles]]
name = "echo"
kind = "external"
direction = "maximize"
command = ["{ECHO}", "--name", "echo", "--score", "composition"]

[[oracles]]
name = "pwm"
kind = "random-pwm"
direction = "minimize"
seed = 3
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "boat-ehvi", "");
    let out_dir = dir.path().join("out");
    let out = seqmobo(&["run", p(&cfg), "-o", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.snapshot", "runlog.csv", "front.csv", "hv_trace.csv", "entropy_trace.csv", "diagnostics.csv"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let runlog = std::fs::read_to_string(out_dir.join("runlog.csv")).unwrap();
    assert_eq!(runlog.lines().count(), 31);
}

#[test]
fn misspelled_method_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "random", "");
    let out = seqmobo(&["run", p(&cfg), "method=\"methd\"", "-o", p(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("methd"));
}

#[test]
fn budget_override_sets_the_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "random", "");
    let out_dir = dir.path().join("out");
    let out = seqmobo(&["run", p(&cfg), "budget=200", "-o", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runlog = std::fs::read_to_string(out_dir.join("runlog.csv")).unwrap();
    assert_eq!(runlog.lines().count(), 201);
}

#[test]
fn zero_budget_exits_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "random", "");
    let out = seqmobo(&["run", p(&cfg), "budget=0", "-o", p(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn enumerate_counts_the_toy_space() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqmobo(&["enumerate", p(&configs().join("toy.toml")), "-o", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("space_count.txt")).unwrap().trim(), "5");
    let front = std::fs::read_to_string(dir.path().join("ground_truth_front.csv")).unwrap();
    // only ACDE is dominated (by ACDW)
    for s in ["ACDY", "KCDE", "ACDW", "ACDF"] {
        assert!(front.contains(s), "{front}");
    }
    assert!(!front.contains("ACDE"));
}

#[test]
fn enumerate_refuses_external_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "random", "");
    let out = seqmobo(&["enumerate", p(&cfg), "-o", p(&dir.path().join("gt"))]);
    assert_eq!(out.status.code(), Some(3));
}

fn oracle_check(mode: &str) -> (Option<i32>, String) {
    let out = seqmobo(&["oracle-check", "--", ECHO, "--mode", mode]);
    (out.status.code(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn oracle_check_accepts_a_conforming_oracle() {
    let (code, text) = oracle_check("ok");
    assert_eq!(code, Some(0), "{text}");
    for check in ["handshake", "alignment", "id-order", "determinism", "latency"] {
        assert!(text.contains(&format!("PASS external {check}")), "{text}");
    }
}

#[test]
fn oracle_check_reports_misalignment() {
    let (code, text) = oracle_check("misaligned");
    assert_eq!(code, Some(3));
    assert!(text.contains("FAIL external alignment"), "{text}");
}

#[test]
fn oracle_check_reports_nondeterminism() {
    let (code, text) = oracle_check("nondeterministic");
    assert_eq!(code, Some(3));
    assert!(text.contains("FAIL external determinism"), "{text}");
}

#[test]
fn benchmark_writes_one_directory_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "random",
        "[benchmark]\nmethods = [\"random\", \"ga-sum\"]\nseeds = [0, 1]\nthreads = 2\n",
    );
    let out_dir = dir.path().join("bench");
    let out = seqmobo(&["benchmark", p(&cfg), "-o", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs: Vec<_> = std::fs::read_dir(out_dir.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 4);
    for f in ["hv_mean_se.csv", "entropy_hv_scatter.csv", "summary.txt"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn report_regenerates_derived_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "nsga2", "");
    let out_dir = dir.path().join("out");
    assert!(seqmobo(&["run", p(&cfg), "-o", p(&out_dir)]).status.success());
    let original = std::fs::read(out_dir.join("hv_trace.csv")).unwrap();
    for f in ["front.csv", "hv_trace.csv", "entropy_trace.csv"] {
        std::fs::remove_file(out_dir.join(f)).unwrap();
    }
    let out = seqmobo(&["report", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(out_dir.join("hv_trace.csv")).unwrap(), original);
    assert!(out_dir.join("front.csv").is_file() && out_dir.join("entropy_trace.csv").is_file());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "boat-qehvi", "q = 2");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(seqmobo(&["run", p(&cfg), "-o", p(&a)]).status.success());
    assert!(seqmobo(&["run", p(&cfg), "-o", p(&b)]).status.success());
    for f in ["runlog.csv", "front.csv", "hv_trace.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
