use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqmobo::config::RunConfig;
use seqmobo::engine::{front_indices, hv_trace, run};
use seqmobo::oracle::{brute_force_front, build_oracles};
use seqmobo::pareto::non_dominated_sort;
use seqmobo::runlog::Phase;
use seqmobo::seqspace::{enumerate_space, Sequence};

const SPACE: &str = r#"
[space]
parental = "ACDEFGHIK"
max_mutations = 3
allowed = { "0" = "AML", "2" = "DQW", "4" = "FYV", "6" = "HRE", "8" = "KST" }
"#;

/// Additive scores where one letter per position is best for both
/// objectives; the optimum is the 3-mutant `MCQEYGHIK`.
fn dominant_tables() -> (String, String) {
    let cfg = RunConfig::from_toml_str(&format!("method = \"random\"\nbudget = 1\nn_init = 1\n{SPACE}\n{}", oracle_stub()), &[], Path::new(".")).unwrap();
    let space = cfg.build_space().unwrap();
    let best: [(usize, u8); 5] = [(0, b'M'), (2, b'Q'), (4, b'Y'), (6, b'G'), (8, b'K')];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut weights = vec![std::collections::HashMap::new(); 2];
    for w in weights.iter_mut() {
        for pos in space.positions() {
            for &r in &pos.allowed {
                let bonus = if best.contains(&(pos.index, r)) { 1.0 } else { 0.0 };
                w.insert((pos.index, r), rng.gen_range(0.0..0.5) + bonus);
            }
        }
    }
    let tables: Vec<String> = weights
        .iter()
        .map(|w| {
            let entries: Vec<String> = enumerate_space(&space, 10_000)
                .unwrap()
                .map(|s| {
                    let v: f64 = space.positions().iter().map(|p| w[&(p.index, s.residues()[p.index])]).sum();
                    format!("{} = {v}", s.as_str())
                })
                .collect();
            format!("{{ {} }}", entries.join(", "))
        })
        .collect();
    (tables[0].clone(), tables[1].clone())
}

fn oracle_stub() -> &'static str {
    "[[oracles]]\nname = \"a\"\nkind = \"random-pwm\"\ndirection = \"maximize\"\nseed = 1\n"
}

#[test]
fn ehvi_finds_a_dominant_optimum() {
    let (ta, tb) = dominant_tables();
    let text = format!(
        r#"
method = "boat-ehvi"
seed = 2
budget = 40
n_init = 10
{SPACE}
[ga]
population_size = 24
generations = 8
[[oracles]]
name = "a"
kind = "lookup"
direction = "maximize"
table = {ta}
[[oracles]]
name = "b"
kind = "lookup"
direction = "maximize"
table = {tb}
"#
    );
    let cfg = RunConfig::from_toml_str(&text, &[], Path::new(".")).unwrap();
    let space = cfg.build_space().unwrap();
    let log = run(&cfg).into_result().unwrap();
    let reference = log.reference.clone().unwrap();
    let mut oracles = build_oracles(&cfg.oracles, &space, &cfg.base_dir).unwrap();
    let gt = brute_force_front(&space, &mut oracles, &reference, 10_000).unwrap();
    assert_eq!(gt.front_sequences, vec![Sequence::parse("MCQEYGHIK").unwrap()]);

    let found = log.evaluations.iter().position(|e| e.sequence.as_str() == "MCQEYGHIK");
    let found = found.expect("optimum was never proposed");
    assert!(log.evaluations[found].phase == Phase::Bo);
    let trace = hv_trace(&log.evaluations, &reference).unwrap();
    for p in &trace[found..] {
        assert_eq!(p.hypervolume, gt.hypervolume());
    }
    assert!(trace[found - 1].hypervolume < gt.hypervolume());
}

fn pwm_config(extra: &str) -> RunConfig {
    let text = format!(
        r#"
method = "boat-qehvi"
seed = 3
q = 4
{extra}
[space]
parental = "QVQLVESGGGLVQPGGSLRLSCAASGFTFS"
max_mutations = 3
allowed = {{ "5" = "ESQD", "10" = "LIVM", "16" = "SRKT", "19" = "LIMV", "26" = "FYWL", "27" = "TSAG", "28" = "FLIV", "29" = "SDEK" }}
[ga]
population_size = 8
generations = 2
[acquisition]
mc_samples = 4
[surrogate]
max_evaluations = 4
[[oracles]]
name = "affinity"
kind = "random-pwm"
direction = "maximize"
seed = 101
[[oracles]]
name = "stability"
kind = "random-pwm"
direction = "maximize"
seed = 202
correlate_with = "affinity"
correlation = -0.8
"#
    );
    RunConfig::from_toml_str(&text, &[], Path::new(".")).unwrap()
}

#[test]
fn budget_equal_to_init_runs_no_iterations() {
    let cfg = pwm_config("budget = 20\nn_init = 20");
    let log = run(&cfg).into_result().unwrap();
    assert_eq!(log.len(), 20);
    assert_eq!(log.iterations(Phase::Bo), 0);
    assert!(log.evaluations.iter().all(|e| e.phase == Phase::Init));
    let scores = log.scores();
    let mut expected = non_dominated_sort(&scores)[0].clone();
    let mut got = front_indices(&log.evaluations);
    expected.sort_unstable();
    got.sort_unstable();
    assert_eq!(got, expected);
}

#[test]
fn batch_iterations_with_init_inside_the_budget() {
    let cfg = pwm_config("budget = 1000\nn_init = 100");
    let log = run(&cfg).into_result().unwrap();
    assert_eq!(log.len(), 1000);
    assert_eq!(log.iterations(Phase::Bo), 225);
    assert!(log.evaluations.iter().filter(|e| e.phase == Phase::Bo).count() == 900);
}

#[test]
fn batch_iterations_with_init_outside_the_budget() {
    let cfg = pwm_config("budget = 1000\nn_init = 100\ncount_init_in_budget = false");
    let log = run(&cfg).into_result().unwrap();
    assert_eq!(log.len(), 1100);
    assert_eq!(log.iterations(Phase::Bo), 250);
    for t in 1..=250 {
        assert_eq!(log.evaluations.iter().filter(|e| e.iteration == t && e.phase == Phase::Bo).count(), 4);
    }
}
