//! Genetic optimization over sequences and sequence batches, plus the
//! GA-sum and NSGA-II baselines that run directly against the oracles.

use std::collections::HashSet;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::OracleBank;
use crate::pareto::{crowding_distance, non_dominated_sort, ScoreVector};
use crate::runlog::Phase;
use crate::seqspace::{mutate, single_point_crossover, MutationSpace, Sequence, UniformSampler};

const STALL_SAMPLER_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_prob: f64,
    pub batch_crossover_rate: f64,
    pub init_perturb_prob: f64,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 50,
            generations: 20,
            tournament_size: 3,
            crossover_rate: 0.7,
            mutation_prob: 0.15,
            batch_crossover_rate: 0.7,
            init_perturb_prob: 0.05,
            elitism: 1,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("crossover_rate", self.crossover_rate),
            ("mutation_prob", self.mutation_prob),
            ("batch_crossover_rate", self.batch_crossover_rate),
            ("init_perturb_prob", self.init_perturb_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("ga.{name} = {p} is not a probability")));
            }
        }
        for (name, v) in [
            ("population_size", self.population_size),
            ("generations", self.generations),
            ("tournament_size", self.tournament_size),
        ] {
            if v == 0 {
                return Err(Error::config(format!("ga.{name} must be at least 1")));
            }
        }
        if self.elitism >= self.population_size {
            return Err(Error::config("ga.elitism must be smaller than ga.population_size"));
        }
        Ok(())
    }
}

/// Result of a genetic optimization.
#[derive(Clone, Debug)]
pub struct GaOutcome<T> {
    /// Highest-fitness individual over every evaluation.
    pub best: T,
    pub best_fitness: f64,
    pub population: Vec<(T, f64)>,
    /// Best fitness seen so far, after initialization and each generation.
    pub best_history: Vec<f64>,
    pub evaluations: usize,
}

/// Evaluated sequences the initial population is drawn from, with sampling
/// weights.
#[derive(Clone, Debug)]
pub struct SeedPool {
    sequences: Vec<Sequence>,
    weights: Vec<f64>,
}

impl SeedPool {
    pub fn uniform(sequences: Vec<Sequence>) -> Self {
        let weights = vec![1.0; sequences.len()];
        SeedPool { sequences, weights }
    }

    pub fn weighted(sequences: Vec<Sequence>, weights: Vec<f64>) -> Result<Self> {
        if sequences.len() != weights.len() {
            return Err(Error::LengthMismatch { expected: sequences.len(), found: weights.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::config("seed pool weights must be non-negative with a positive entry"));
        }
        Ok(SeedPool { sequences, weights })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    fn sampler(&self) -> Result<WeightedIndex<f64>> {
        if self.sequences.is_empty() {
            return Err(Error::config("seed pool is empty"));
        }
        WeightedIndex::new(&self.weights).map_err(|e| Error::config(format!("seed pool weights: {e}")))
    }
}

fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn tournament<R: Rng + ?Sized>(fitness: &[f64], size: usize, rng: &mut R) -> usize {
    let mut best = rng.gen_range(0..fitness.len());
    for _ in 1..size {
        let c = rng.gen_range(0..fitness.len());
        if fitness[c] > fitness[best] {
            best = c;
        }
    }
    best
}

/// Indices of the `n` fittest individuals, ties broken by position.
fn top_indices(fitness: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));
    order.truncate(n);
    order
}

type Init<'a, T, R> = dyn FnMut(&mut R) -> Result<T> + 'a;
type Vary<'a, T, R> = dyn FnMut(&T, &T, &mut R) -> Result<(T, T)> + 'a;

fn run_ga<T: Clone, R: Rng + ?Sized>(
    cfg: &GaConfig,
    init: &mut Init<'_, T, R>,
    vary: &mut Vary<'_, T, R>,
    fitness: &mut dyn FnMut(&[T]) -> Result<Vec<f64>>,
    rng: &mut R,
) -> Result<GaOutcome<T>> {
    cfg.validate()?;
    let mut population: Vec<T> = (0..cfg.population_size).map(|_| init(rng)).collect::<Result<_>>()?;
    let mut scores: Vec<f64> = fitness(&population)?.into_iter().map(clean).collect();
    if scores.len() != population.len() {
        return Err(Error::LengthMismatch { expected: population.len(), found: scores.len() });
    }
    let mut evaluations = population.len();
    let first = top_indices(&scores, 1)[0];
    let mut best = (population[first].clone(), scores[first]);
    let mut history = vec![best.1];

    for _ in 0..cfg.generations {
        let elites = top_indices(&scores, cfg.elitism);
        let n_offspring = cfg.population_size - elites.len();
        let mut offspring = Vec::with_capacity(n_offspring + 1);
        while offspring.len() < n_offspring {
            let a = tournament(&scores, cfg.tournament_size, rng);
            let b = tournament(&scores, cfg.tournament_size, rng);
            let (c1, c2) = vary(&population[a], &population[b], rng)?;
            offspring.push(c1);
            if offspring.len() < n_offspring {
                offspring.push(c2);
            }
        }
        let offspring_scores: Vec<f64> = fitness(&offspring)?.into_iter().map(clean).collect();
        if offspring_scores.len() != offspring.len() {
            return Err(Error::LengthMismatch { expected: offspring.len(), found: offspring_scores.len() });
        }
        evaluations += offspring.len();
        let mut next: Vec<T> = elites.iter().map(|&i| population[i].clone()).collect();
        let mut next_scores: Vec<f64> = elites.iter().map(|&i| scores[i]).collect();
        next.extend(offspring);
        next_scores.extend(offspring_scores);
        population = next;
        scores = next_scores;
        let top = top_indices(&scores, 1)[0];
        if scores[top] > best.1 {
            best = (population[top].clone(), scores[top]);
        }
        history.push(best.1);
    }
    Ok(GaOutcome {
        best: best.0,
        best_fitness: best.1,
        population: population.into_iter().zip(scores).collect(),
        best_history: history,
        evaluations,
    })
}

fn vary_sequences<R: Rng + ?Sized>(
    a: &Sequence,
    b: &Sequence,
    space: &MutationSpace,
    cfg: &GaConfig,
    rng: &mut R,
) -> Result<(Sequence, Sequence)> {
    let (c1, c2) = if rng.gen_bool(cfg.crossover_rate) {
        single_point_crossover(a, b, space, rng)?
    } else {
        (a.clone(), b.clone())
    };
    Ok((mutate(&c1, space, cfg.mutation_prob, rng)?, mutate(&c2, space, cfg.mutation_prob, rng)?))
}

fn seed_one<R: Rng + ?Sized>(
    pool: &SeedPool,
    picker: &WeightedIndex<f64>,
    space: &MutationSpace,
    cfg: &GaConfig,
    rng: &mut R,
) -> Result<Sequence> {
    let s = &pool.sequences[picker.sample(rng)];
    mutate(s, space, cfg.init_perturb_prob, rng)
}

/// Maximizes a sequence fitness. The fitness closure receives a whole
/// generation at a time and returns one value per individual; `-∞` marks
/// an individual to avoid.
pub fn ga_optimize<R: Rng + ?Sized>(
    fitness: &mut dyn FnMut(&[Sequence]) -> Result<Vec<f64>>,
    space: &MutationSpace,
    cfg: &GaConfig,
    seed_pool: &SeedPool,
    rng: &mut R,
) -> Result<GaOutcome<Sequence>> {
    let picker = seed_pool.sampler()?;
    let mut init = |rng: &mut R| seed_one(seed_pool, &picker, space, cfg, rng);
    let mut vary = |a: &Sequence, b: &Sequence, rng: &mut R| vary_sequences(a, b, space, cfg, rng);
    run_ga(cfg, &mut init, &mut vary, fitness, rng)
}

/// Maximizes a fitness over batches of `q` sequences. Batch crossover swaps
/// the members after a random cut between two parent batches and applies
/// sequence crossover slot by slot; with `q = 1` the operators and random
/// stream are exactly those of [`ga_optimize`].
pub fn ga_batch_optimize<R: Rng + ?Sized>(
    fitness: &mut dyn FnMut(&[Vec<Sequence>]) -> Result<Vec<f64>>,
    space: &MutationSpace,
    cfg: &GaConfig,
    q: usize,
    seed_pool: &SeedPool,
    rng: &mut R,
) -> Result<GaOutcome<Vec<Sequence>>> {
    if q == 0 {
        return Err(Error::config("batch size q must be at least 1"));
    }
    let picker = seed_pool.sampler()?;
    let mut init = |rng: &mut R| (0..q).map(|_| seed_one(seed_pool, &picker, space, cfg, rng)).collect();
    let mut vary = |a: &Vec<Sequence>, b: &Vec<Sequence>, rng: &mut R| -> Result<(Vec<Sequence>, Vec<Sequence>)> {
        if q == 1 {
            let (c1, c2) = vary_sequences(&a[0], &b[0], space, cfg, rng)?;
            return Ok((vec![c1], vec![c2]));
        }
        let (mut c1, mut c2) = (a.clone(), b.clone());
        if rng.gen_bool(cfg.batch_crossover_rate) {
            let cut = rng.gen_range(1..q);
            for j in cut..q {
                std::mem::swap(&mut c1[j], &mut c2[j]);
            }
            for j in 0..q {
                if rng.gen_bool(cfg.crossover_rate) {
                    let (x, y) = single_point_crossover(&c1[j], &c2[j], space, rng)?;
                    c1[j] = x;
                    c2[j] = y;
                }
            }
        }
        for s in c1.iter_mut().chain(c2.iter_mut()) {
            *s = mutate(s, space, cfg.mutation_prob, rng)?;
        }
        Ok((c1, c2))
    };
    run_ga(cfg, &mut init, &mut vary, fitness, rng)
}

/// Summary of a baseline run; the evaluations themselves live in the bank.
#[derive(Clone, Debug, Default)]
pub struct BaselineOutcome {
    pub generations: usize,
    /// Random sequences injected because a generation proposed nothing new.
    pub injected: usize,
    pub final_population: Vec<Sequence>,
}

/// Replaces part of a generation with unscored random feasible sequences
/// when every offspring is already scored. Returns the number injected, or
/// `None` when no unscored sequence could be found.
fn inject_fresh<R: Rng + ?Sized>(
    offspring: &mut [Sequence],
    bank: &OracleBank,
    sampler: &UniformSampler,
    space: &MutationSpace,
    rng: &mut R,
) -> Option<usize> {
    if !bank.novel(offspring).is_empty() {
        return Some(0);
    }
    let want = (offspring.len() / 10).max(1);
    let mut fresh: Vec<Sequence> = Vec::new();
    for _ in 0..STALL_SAMPLER_ATTEMPTS {
        if fresh.len() == want {
            break;
        }
        if let Some(s) = sampler.sample(space, rng, STALL_SAMPLER_ATTEMPTS) {
            if !bank.is_scored(&s) && !fresh.contains(&s) {
                fresh.push(s);
            }
        }
    }
    if fresh.is_empty() {
        return None;
    }
    let n = fresh.len();
    let start = offspring.len() - n;
    for (slot, s) in offspring[start..].iter_mut().zip(fresh) {
        *slot = s;
    }
    Some(n)
}

/// Scores `candidates` in order, dropping novel ones that do not fit in
/// the remaining budget.
fn score_within_budget(bank: &mut OracleBank, candidates: Vec<Sequence>) -> Result<Vec<(Sequence, ScoreVector)>> {
    let mut room = bank.remaining();
    let mut seen = HashSet::new();
    let kept: Vec<Sequence> = candidates
        .into_iter()
        .filter(|s| {
            if bank.is_scored(s) || seen.contains(s) {
                return true;
            }
            if room == 0 {
                return false;
            }
            room -= 1;
            seen.insert(s.clone());
            true
        })
        .collect();
    let scores = bank.score(&kept)?;
    Ok(kept.into_iter().zip(scores).collect())
}

fn normalized_sum(scores: &[ScoreVector], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    scores
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .map(|(d, v)| if hi[d] > lo[d] { (v - lo[d]) / (hi[d] - lo[d]) } else { 0.0 })
                .sum()
        })
        .collect()
}

fn running_bounds(bank: &OracleBank) -> (Vec<f64>, Vec<f64>) {
    let k = bank.n_objectives();
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for c in bank.call_log() {
        for d in 0..k {
            lo[d] = lo[d].min(c.scores[d]);
            hi[d] = hi[d].max(c.scores[d]);
        }
    }
    (lo, hi)
}

/// GA whose fitness is the sum of objectives normalized by the running
/// minimum and maximum over every evaluation so far. Starts from the
/// already-scored `initial` sequences and stops when the budget is spent.
pub fn ga_sum_baseline<R: Rng + ?Sized>(
    bank: &mut OracleBank,
    space: &MutationSpace,
    cfg: &GaConfig,
    initial: &[Sequence],
    rng: &mut R,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    if initial.is_empty() {
        return Err(Error::config("baseline needs at least one initial sequence"));
    }
    let sampler = UniformSampler::new(space);
    let mut population: Vec<Sequence> = initial.to_vec();
    let mut outcome = BaselineOutcome::default();
    while bank.remaining() > 0 {
        outcome.generations += 1;
        bank.set_phase(Phase::Baseline, outcome.generations);
        let scores = bank.score(&population)?;
        let (lo, hi) = running_bounds(bank);
        let fitness = normalized_sum(&scores, &lo, &hi);
        let elites = top_indices(&fitness, cfg.elitism);
        let n_offspring = cfg.population_size - elites.len();
        let mut offspring = Vec::with_capacity(n_offspring + 1);
        while offspring.len() < n_offspring {
            let a = tournament(&fitness, cfg.tournament_size, rng);
            let b = tournament(&fitness, cfg.tournament_size, rng);
            let (c1, c2) = vary_sequences(&population[a], &population[b], space, cfg, rng)?;
            offspring.push(c1);
            if offspring.len() < n_offspring {
                offspring.push(c2);
            }
        }
        match inject_fresh(&mut offspring, bank, &sampler, space, rng) {
            Some(n) => outcome.injected += n,
            None => break,
        }
        let scored = score_within_budget(bank, offspring)?;
        let mut next: Vec<Sequence> = elites.iter().map(|&i| population[i].clone()).collect();
        next.extend(scored.into_iter().map(|(s, _)| s));
        population = next;
    }
    outcome.final_population = population;
    Ok(outcome)
}

/// Rank (0 = first front) and crowding distance of every point.
pub fn rank_and_crowding(scores: &[ScoreVector]) -> (Vec<usize>, Vec<f64>) {
    let mut rank = vec![0; scores.len()];
    let mut crowd = vec![0.0; scores.len()];
    for (r, front) in non_dominated_sort(scores).into_iter().enumerate() {
        let members: Vec<&ScoreVector> = front.iter().map(|&i| &scores[i]).collect();
        let distances = crowding_distance(&members);
        for (&i, d) in front.iter().zip(distances) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    (rank, crowd)
}

/// NSGA-II environmental selection: whole fronts by rank, the last one by
/// descending crowding distance. Returns the selected indices.
pub fn environmental_selection(scores: &[ScoreVector], n: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(n);
    for front in non_dominated_sort(scores) {
        if chosen.len() + front.len() <= n {
            chosen.extend(front);
            if chosen.len() == n {
                break;
            }
            continue;
        }
        let members: Vec<&ScoreVector> = front.iter().map(|&i| &scores[i]).collect();
        let distances = crowding_distance(&members);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]));
        chosen.extend(order.into_iter().take(n - chosen.len()).map(|j| front[j]));
        break;
    }
    chosen
}

fn crowded_tournament<R: Rng + ?Sized>(rank: &[usize], crowd: &[f64], rng: &mut R) -> usize {
    let a = rng.gen_range(0..rank.len());
    let b = rng.gen_range(0..rank.len());
    if rank[b] < rank[a] || (rank[b] == rank[a] && crowd[b] > crowd[a]) {
        b
    } else {
        a
    }
}

/// NSGA-II over the oracles, starting from the already-scored `initial`
/// sequences and stopping when the budget is spent.
pub fn nsga2<R: Rng + ?Sized>(
    bank: &mut OracleBank,
    space: &MutationSpace,
    cfg: &GaConfig,
    initial: &[Sequence],
    rng: &mut R,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    if initial.is_empty() {
        return Err(Error::config("baseline needs at least one initial sequence"));
    }
    let sampler = UniformSampler::new(space);
    let scores = bank.score(initial)?;
    let keep = environmental_selection(&scores, cfg.population_size.min(initial.len()));
    let mut population: Vec<Sequence> = keep.iter().map(|&i| initial[i].clone()).collect();
    let mut outcome = BaselineOutcome::default();
    while bank.remaining() > 0 {
        outcome.generations += 1;
        bank.set_phase(Phase::Baseline, outcome.generations);
        let scores = bank.score(&population)?;
        let (rank, crowd) = rank_and_crowding(&scores);
        let mut offspring = Vec::with_capacity(cfg.population_size + 1);
        while offspring.len() < cfg.population_size {
            let a = crowded_tournament(&rank, &crowd, rng);
            let b = crowded_tournament(&rank, &crowd, rng);
            let (c1, c2) = vary_sequences(&population[a], &population[b], space, cfg, rng)?;
            offspring.push(c1);
            if offspring.len() < cfg.population_size {
                offspring.push(c2);
            }
        }
        match inject_fresh(&mut offspring, bank, &sampler, space, rng) {
            Some(n) => outcome.injected += n,
            None => break,
        }
        let scored = score_within_budget(bank, offspring)?;
        let mut seen: HashSet<Sequence> = HashSet::new();
        let mut union: Vec<Sequence> = Vec::new();
        for s in population.into_iter().chain(scored.into_iter().map(|(s, _)| s)) {
            if seen.insert(s.clone()) {
                union.push(s);
            }
        }
        let union_scores = bank.score(&union)?;
        let keep = environmental_selection(&union_scores, cfg.population_size);
        population = keep.into_iter().map(|i| union[i].clone()).collect();
    }
    outcome.final_population = population;
    Ok(outcome)
}
