//! CSV outputs of runs and benchmarks. Every file is written to a
//! temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use csv::{QuoteStyle, ReaderBuilder, WriterBuilder};

use crate::benchmark::BenchmarkReport;
use crate::engine::{entropy_trace, front_indices, hv_trace, resolve_reference};
use crate::error::{Error, Result};
use crate::oracle::{Direction, GroundTruth};
use crate::config::ReferenceSpec;
use crate::pareto::{lex_cmp, ScoreVector};
use crate::runlog::{Evaluation, Phase, RunLog};
use crate::seqspace::Sequence;

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const RUNLOG: &str = "runlog.csv";
pub const FRONT: &str = "front.csv";
pub const HV_TRACE: &str = "hv_trace.csv";
pub const ENTROPY_TRACE: &str = "entropy_trace.csv";
pub const DIAGNOSTICS: &str = "diagnostics.csv";

const DEFAULT_WINDOW: usize = 100;

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = WriterBuilder::new().quote_style(QuoteStyle::Necessary).from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Run-log text. Sequences are always quoted; scores are in the
/// maximization convention (minimized objectives negated).
pub fn runlog_csv(evaluations: &[Evaluation], k: usize) -> String {
    let mut out = String::from("call_index,sequence,phase,iteration");
    for d in 1..=k {
        out.push_str(&format!(",score_{d}"));
    }
    out.push('\n');
    for e in evaluations {
        out.push_str(&format!("{},{},{},{}", e.call_index, quoted(e.sequence.as_str()), e.phase, e.iteration));
        for v in e.scores.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_runlog(path: &Path) -> Result<Vec<Evaluation>> {
    let text = fs::read_to_string(path)?;
    parse_runlog(&text)
}

pub fn parse_runlog(text: &str) -> Result<Vec<Evaluation>> {
    let mut r = ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_error)?.clone();
    let expected = ["call_index", "sequence", "phase", "iteration"];
    if header.len() < 5 || header.iter().take(4).ne(expected) {
        return Err(Error::config("runlog.csv header must start with call_index,sequence,phase,iteration"));
    }
    let k = header.len() - 4;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let bad = |what: &str| Error::config(format!("runlog.csv row {}: bad {what}", line + 2));
        if rec.len() != k + 4 {
            return Err(bad("field count"));
        }
        let scores: Vec<f64> =
            (4..4 + k).map(|i| rec[i].parse::<f64>().map_err(|_| bad("score"))).collect::<Result<_>>()?;
        out.push(Evaluation {
            call_index: rec[0].parse().map_err(|_| bad("call_index"))?,
            sequence: Sequence::parse(&rec[1])?,
            phase: rec[2].parse::<Phase>()?,
            iteration: rec[3].parse().map_err(|_| bad("iteration"))?,
            scores: ScoreVector(scores),
        });
    }
    Ok(out)
}

fn score_header(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|d| format!("{prefix}_{d}")).collect()
}

pub fn front_csv(evaluations: &[Evaluation], k: usize) -> Result<Vec<u8>> {
    let mut header = vec!["call_index".to_string(), "sequence".to_string()];
    header.extend(score_header("score", k));
    let rows: Vec<Vec<String>> = front_indices(evaluations)
        .into_iter()
        .map(|i| {
            let e = &evaluations[i];
            let mut row = vec![e.call_index.to_string(), e.sequence.to_string()];
            row.extend(e.scores.iter().map(|v| v.to_string()));
            row
        })
        .collect();
    quote_sequences(csv_bytes(&header, &rows)?, 1)
}

/// Rewrites column `col` of plain CSV rows with explicit quotes. Sequences
/// never contain separators, so a split on `,` is exact.
fn quote_sequences(bytes: Vec<u8>, col: usize) -> Result<Vec<u8>> {
    let text = String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut out = String::with_capacity(text.len());
    for (n, line) in text.lines().enumerate() {
        if n == 0 {
            out.push_str(line);
        } else {
            let fields: Vec<String> = line
                .split(',')
                .enumerate()
                .map(|(i, f)| if i == col { quoted(f) } else { f.to_string() })
                .collect();
            out.push_str(&fields.join(","));
        }
        out.push('\n');
    }
    Ok(out.into_bytes())
}

pub fn hv_trace_csv(evaluations: &[Evaluation], reference: Option<&ScoreVector>) -> Result<Vec<u8>> {
    let header: Vec<String> = ["oracle_calls", "iteration", "phase", "hypervolume"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = match reference {
        Some(r) => hv_trace(evaluations, r)?
            .into_iter()
            .map(|p| vec![p.oracle_calls.to_string(), p.iteration.to_string(), p.phase.to_string(), p.hypervolume.to_string()])
            .collect(),
        None => Vec::new(),
    };
    csv_bytes(&header, &rows)
}

pub fn entropy_trace_csv(evaluations: &[Evaluation], window: usize) -> Result<Vec<u8>> {
    let header: Vec<String> = ["oracle_calls", "cumulative_entropy", "windowed_entropy"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = entropy_trace(evaluations, window)?
        .into_iter()
        .map(|p| vec![p.oracle_calls.to_string(), p.cumulative.to_string(), p.windowed.to_string()])
        .collect();
    csv_bytes(&header, &rows)
}

pub fn diagnostics_csv(log: &RunLog) -> Result<Vec<u8>> {
    let k = log.objective_names.len();
    let mut header = vec!["iteration".to_string(), "n_train".to_string()];
    for p in ["lml", "signal_variance", "noise_variance", "jitter"] {
        header.extend(score_header(p, k));
    }
    header.push("acquisition_value".into());
    header.push("ga_seconds".into());
    let rows: Vec<Vec<String>> = log
        .diagnostics
        .iter()
        .map(|d| {
            let mut row = vec![d.iteration.to_string(), d.n_train.to_string()];
            row.extend(d.lml.iter().map(|v| v.to_string()));
            row.extend(d.hyperparams.iter().map(|h| h.signal_variance.to_string()));
            row.extend(d.hyperparams.iter().map(|h| h.noise_variance.to_string()));
            row.extend(d.hyperparams.iter().map(|h| h.jitter.to_string()));
            row.push(d.acquisition_value.to_string());
            row.push(d.ga_seconds.to_string());
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Writes every file of a run directory.
pub fn write_run_dir(dir: &Path, log: &RunLog, window: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let k = log.objective_names.len();
    write_atomic(&dir.join(CONFIG_SNAPSHOT), log.config_snapshot.as_bytes())?;
    write_atomic(&dir.join(RUNLOG), runlog_csv(&log.evaluations, k).as_bytes())?;
    write_atomic(&dir.join(DIAGNOSTICS), &diagnostics_csv(log)?)?;
    write_derived(dir, &log.evaluations, k, log.reference.as_ref(), window)
}

fn write_derived(
    dir: &Path,
    evaluations: &[Evaluation],
    k: usize,
    reference: Option<&ScoreVector>,
    window: usize,
) -> Result<()> {
    write_atomic(&dir.join(FRONT), &front_csv(evaluations, k)?)?;
    write_atomic(&dir.join(HV_TRACE), &hv_trace_csv(evaluations, reference)?)?;
    write_atomic(&dir.join(ENTROPY_TRACE), &entropy_trace_csv(evaluations, window)?)?;
    Ok(())
}

/// Settings a report needs from a configuration snapshot, read leniently
/// so that snapshots of other versions still work.
struct SnapshotHints {
    reference: Option<Vec<f64>>,
    directions: Option<Vec<Direction>>,
    window: Option<usize>,
}

fn snapshot_hints(text: &str) -> SnapshotHints {
    let table: toml::Table = match toml::from_str(text) {
        Ok(t) => t,
        Err(_) => return SnapshotHints { reference: None, directions: None, window: None },
    };
    let reference = table
        .get("reference")
        .and_then(|v| v.as_array())
        .and_then(|a| a.iter().map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64))).collect());
    let directions = table.get("oracles").and_then(|v| v.as_array()).and_then(|a| {
        a.iter()
            .map(|o| match o.get("direction").and_then(|d| d.as_str()) {
                Some("maximize") => Some(Direction::Maximize),
                Some("minimize") => Some(Direction::Minimize),
                _ => None,
            })
            .collect()
    });
    let window = table.get("entropy_window").and_then(|v| v.as_integer()).and_then(|w| usize::try_from(w).ok());
    SnapshotHints { reference, directions, window }
}

/// Regenerates `front.csv`, `hv_trace.csv` and `entropy_trace.csv` from
/// `runlog.csv`. The reference and entropy window come from
/// `config.snapshot` when it holds them; otherwise the reference is the
/// automatic one over the `init` rows and the window is 100.
pub fn regenerate(dir: &Path) -> Result<()> {
    let evaluations = read_runlog(&dir.join(RUNLOG))?;
    let k = evaluations.first().map_or(0, |e| e.scores.len());
    let hints = fs::read_to_string(dir.join(CONFIG_SNAPSHOT))
        .map(|t| snapshot_hints(&t))
        .unwrap_or(SnapshotHints { reference: None, directions: None, window: None });
    let reference = match hints.reference.filter(|r| r.len() == k) {
        Some(r) => {
            let dirs = hints.directions.filter(|d| d.len() == k).unwrap_or(vec![Direction::Maximize; k]);
            Some(resolve_reference(&ReferenceSpec::Fixed(r), &dirs, &[])?)
        }
        None => {
            let init: Vec<&ScoreVector> =
                evaluations.iter().filter(|e| e.phase == Phase::Init).map(|e| &e.scores).collect();
            let pool: Vec<&ScoreVector> =
                if init.is_empty() { evaluations.iter().map(|e| &e.scores).collect() } else { init };
            if pool.is_empty() {
                None
            } else {
                Some(resolve_reference(&ReferenceSpec::default(), &vec![Direction::Maximize; k], &pool.into_iter().cloned().collect::<Vec<_>>())?)
            }
        }
    };
    write_derived(dir, &evaluations, k, reference.as_ref(), hints.window.unwrap_or(DEFAULT_WINDOW))
}

/// File-system-safe directory name of an arm label.
pub fn arm_dir_name(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn run_dir(out: &Path, arm: &str, seed: u64) -> PathBuf {
    out.join("runs").join(format!("{}-seed{seed}", arm_dir_name(arm)))
}

/// Writes every run directory and the aggregate files of a benchmark.
pub fn write_benchmark(out: &Path, report: &BenchmarkReport) -> Result<()> {
    fs::create_dir_all(out)?;
    for r in &report.runs {
        let mut log = r.output.log.clone();
        log.reference = Some(report.reference.clone());
        write_run_dir(&run_dir(out, &r.arm, r.seed), &log, r.config.entropy_window)?;
    }
    let header: Vec<String> = ["method", "oracle_calls", "mean", "se", "n"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for arm in &report.arms {
        for p in report.curve(arm) {
            rows.push(vec![arm.clone(), p.oracle_calls.to_string(), p.mean.to_string(), p.se.to_string(), p.n.to_string()]);
        }
    }
    write_atomic(&out.join("hv_mean_se.csv"), &csv_bytes(&header, &rows)?)?;

    let header: Vec<String> =
        ["method", "seed", "cumulative_entropy", "final_hypervolume", "ground_truth_fraction"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = report
        .runs
        .iter()
        .map(|r| {
            vec![
                r.arm.clone(),
                r.seed.to_string(),
                r.final_entropy.map_or(String::new(), |v| v.to_string()),
                r.final_hv().map_or(String::new(), |v| v.to_string()),
                report.fraction(r).map_or(String::new(), |v| v.to_string()),
            ]
        })
        .collect();
    write_atomic(&out.join("entropy_hv_scatter.csv"), &csv_bytes(&header, &rows)?)?;
    write_atomic(&out.join("summary.txt"), report.summary_text().as_bytes())?;
    if let Some(gt) = &report.ground_truth {
        write_ground_truth(out, gt)?;
    }
    Ok(())
}

/// `ground_truth_front.csv`, `ground_truth_hv.txt` and `space_count.txt`.
pub fn write_ground_truth(out: &Path, gt: &GroundTruth) -> Result<()> {
    let k = gt.front.reference().len();
    let mut order: Vec<usize> = (0..gt.front_sequences.len()).collect();
    let members = gt.front.members();
    order.sort_by(|&a, &b| lex_cmp(&members[b].1, &members[a].1).then(gt.front_sequences[a].cmp(&gt.front_sequences[b])));
    let mut header = vec!["sequence".to_string()];
    header.extend(score_header("score", k));
    let rows: Vec<Vec<String>> = order
        .into_iter()
        .map(|i| {
            let mut row = vec![gt.front_sequences[i].to_string()];
            row.extend(members[i].1.iter().map(|v| v.to_string()));
            row
        })
        .collect();
    write_atomic(&out.join("ground_truth_front.csv"), &quote_sequences(csv_bytes(&header, &rows)?, 0)?)?;
    write_atomic(&out.join("ground_truth_hv.txt"), format!("{}\n", gt.hypervolume()).as_bytes())?;
    write_atomic(&out.join("space_count.txt"), format!("{}\n", gt.count).as_bytes())?;
    Ok(())
}
