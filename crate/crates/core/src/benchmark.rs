//! Methods × seeds benchmark runs and their aggregation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{Method, MethodArm, ReferenceSpec, RunConfig};
use crate::engine::{entropy_trace, hv_trace, resolve_reference, run, RunOutput};
use crate::error::{Error, Result};
use crate::oracle::{brute_force_front, build_oracles, GroundTruth};
use crate::pareto::ScoreVector;
use crate::runlog::Phase;
use crate::seqspace::DEFAULT_ENUMERATION_CAP;

/// One (arm, seed) run of a benchmark.
#[derive(Debug)]
pub struct ArmRun {
    pub arm: String,
    pub method: Method,
    pub seed: u64,
    pub config: RunConfig,
    pub output: RunOutput,
    /// Hypervolume after each call under the shared reference.
    pub hv: Vec<f64>,
    pub final_entropy: Option<f64>,
}

impl ArmRun {
    pub fn final_hv(&self) -> Option<f64> {
        self.hv.last().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub oracle_calls: usize,
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub failed: usize,
    pub final_mean: f64,
    pub final_se: f64,
    pub entropy_mean: f64,
    pub fraction_mean: Option<f64>,
    /// Final mean hypervolume is below that of the `random` arm.
    pub below_random: bool,
}

#[derive(Debug)]
pub struct BenchmarkReport {
    pub reference: ScoreVector,
    pub arms: Vec<String>,
    pub runs: Vec<ArmRun>,
    pub ground_truth: Option<GroundTruth>,
}

/// Sample mean and standard error (sample std / √n; 0 for one value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl BenchmarkReport {
    pub fn runs_of<'a>(&'a self, arm: &'a str) -> impl Iterator<Item = &'a ArmRun> + 'a {
        self.runs.iter().filter(move |r| r.arm == arm)
    }

    pub fn first_error(&self) -> Option<&Error> {
        self.runs.iter().find_map(|r| r.output.error.as_ref())
    }

    /// Mean ± standard error of hypervolume at every call count, over the
    /// runs of `arm` that reached it.
    pub fn curve(&self, arm: &str) -> Vec<CurvePoint> {
        let traces: Vec<&Vec<f64>> = self.runs_of(arm).map(|r| &r.hv).collect();
        let longest = traces.iter().map(|t| t.len()).max().unwrap_or(0);
        (0..longest)
            .map(|c| {
                let values: Vec<f64> = traces.iter().filter_map(|t| t.get(c).copied()).collect();
                let (mean, se) = mean_se(&values);
                CurvePoint { oracle_calls: c + 1, mean, se, n: values.len() }
            })
            .collect()
    }

    pub fn fraction(&self, run: &ArmRun) -> Option<f64> {
        let gt = self.ground_truth.as_ref()?.hypervolume();
        let hv = run.final_hv()?;
        (gt > 0.0).then(|| hv / gt)
    }

    pub fn summaries(&self) -> Vec<ArmSummary> {
        let mut out: Vec<ArmSummary> = self
            .arms
            .iter()
            .map(|arm| {
                let runs: Vec<&ArmRun> = self.runs_of(arm).collect();
                let finals: Vec<f64> = runs.iter().filter_map(|r| r.final_hv()).collect();
                let (final_mean, final_se) = mean_se(&finals);
                let entropies: Vec<f64> = runs.iter().filter_map(|r| r.final_entropy).collect();
                let fractions: Vec<f64> = runs.iter().filter_map(|r| self.fraction(r)).collect();
                ArmSummary {
                    arm: arm.clone(),
                    runs: runs.len(),
                    failed: runs.iter().filter(|r| r.output.error.is_some()).count(),
                    final_mean,
                    final_se,
                    entropy_mean: mean_se(&entropies).0,
                    fraction_mean: (!fractions.is_empty()).then(|| mean_se(&fractions).0),
                    below_random: false,
                }
            })
            .collect();
        let random = out.iter().find(|s| s.arm == Method::Random.to_string()).map(|s| s.final_mean);
        if let Some(r) = random {
            for s in &mut out {
                s.below_random = s.final_mean < r;
            }
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut text = String::new();
        let refs: Vec<String> = self.reference.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("reference: [{}]\n", refs.join(", ")));
        if let Some(gt) = &self.ground_truth {
            text.push_str(&format!(
                "ground truth: {} sequences, {} front members, hypervolume {}\n",
                gt.count,
                gt.front.len(),
                gt.hypervolume()
            ));
        }
        for s in self.summaries() {
            text.push_str(&format!(
                "{}: runs {} failed {} final_hv {:.6} ± {:.6} entropy {:.4}",
                s.arm, s.runs, s.failed, s.final_mean, s.final_se, s.entropy_mean
            ));
            if let Some(f) = s.fraction_mean {
                text.push_str(&format!(" ground_truth_fraction {f:.4}"));
            }
            if s.below_random {
                text.push_str(" BELOW-RANDOM");
            }
            text.push('\n');
        }
        text
    }
}

/// Configuration of one benchmark run.
pub fn arm_config(base: &RunConfig, arm: &MethodArm, seed: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.method = arm.method;
    if arm.q.is_some() {
        cfg.q = arm.q;
    }
    cfg.seed = seed;
    cfg.benchmark = None;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every arm × seed of `cfg.benchmark`, `threads` at a time, and
/// evaluates all of them against one reference: the configured one, or
/// the automatic reference over the union of every run's initial scores.
pub fn benchmark(cfg: &RunConfig) -> Result<BenchmarkReport> {
    let section = cfg.benchmark.clone().unwrap_or_default();
    let arms = cfg.benchmark_arms()?;
    let mut jobs = Vec::new();
    for arm in &arms {
        for &seed in &section.seeds {
            jobs.push((arm.clone(), seed, arm_config(cfg, arm, seed)?));
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(usize, RunOutput)>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let threads = section.threads.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (arm, seed, job_cfg) = &jobs[i];
                log::info!("benchmark run {} seed {}", arm.label, seed);
                let out = run(job_cfg);
                results.lock().expect("results lock")[i] = Some((i, out));
            });
        }
    });
    let outputs: Vec<RunOutput> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran").1)
        .collect();

    let directions: Vec<_> = cfg.oracles.iter().map(|o| o.direction).collect();
    let reference = match &cfg.reference {
        ReferenceSpec::Fixed(_) => resolve_reference(&cfg.reference, &directions, &[])?,
        ReferenceSpec::Auto(_) => {
            let init: Vec<ScoreVector> = outputs
                .iter()
                .flat_map(|o| o.log.evaluations.iter().filter(|e| e.phase == Phase::Init).map(|e| e.scores.clone()))
                .collect();
            if init.is_empty() {
                return Err(outputs.into_iter().find_map(|o| o.error).unwrap_or(Error::config("no run produced scores")));
            }
            resolve_reference(&cfg.reference, &directions, &init)?
        }
    };

    let ground_truth = if section.ground_truth {
        let space = cfg.build_space()?;
        let mut oracles = build_oracles(&cfg.oracles, &space, &cfg.base_dir)?;
        Some(brute_force_front(&space, &mut oracles, &reference, DEFAULT_ENUMERATION_CAP)?)
    } else {
        None
    };

    let mut runs = Vec::with_capacity(jobs.len());
    for ((arm, seed, job_cfg), output) in jobs.into_iter().zip(outputs) {
        let hv = hv_trace(&output.log.evaluations, &reference)?.into_iter().map(|p| p.hypervolume).collect();
        let final_entropy = entropy_trace(&output.log.evaluations, cfg.entropy_window)?.last().map(|p| p.cumulative);
        runs.push(ArmRun { arm: arm.label, method: arm.method, seed, config: job_cfg, output, hv, final_entropy });
    }
    Ok(BenchmarkReport { reference, arms: arms.into_iter().map(|a| a.label).collect(), runs, ground_truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const CFG: &str = r#"
method = "random"
budget = 30
n_init = 10
[space]
parental = "ACDEF"
max_mutations = 2
allowed = { "0" = "AKLM", "1" = "CRST", "2" = "DEQW", "4" = "FYWL" }
[benchmark]
methods = ["random", "nsga2"]
seeds = [1, 2]
ground_truth = true
threads = 2
[ga]
population_size = 10
[[oracles]]
name = "a"
kind = "random-pwm"
direction = "maximize"
seed = 1
[[oracles]]
name = "b"
kind = "random-pwm"
direction = "maximize"
seed = 2
"#;

    #[test]
    fn mean_se_definition() {
        let (m, s) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn aggregates_runs() {
        let cfg = RunConfig::from_toml_str(CFG, &[], Path::new(".")).unwrap();
        let report = benchmark(&cfg).unwrap();
        assert_eq!(report.runs.len(), 4);
        assert!(report.first_error().is_none());
        let curve = report.curve("nsga2");
        assert_eq!(curve.len(), 30);
        let at10: Vec<f64> = report.runs_of("nsga2").map(|r| r.hv[9]).collect();
        assert_eq!(curve[9].mean, (at10[0] + at10[1]) / 2.0);
        for r in &report.runs {
            let f = report.fraction(r).unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&f), "{f}");
        }
        assert!(report.summary_text().contains("ground truth: 67 sequences"));
    }
}
