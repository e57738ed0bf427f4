//! The optimization loop: initialization, surrogate fitting, acquisition
//! maximization and scoring, plus the baselines and derived traces.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{
    ehvi_at, log_ei_at, qehvi_mc, qnehvi_mc, AcquisitionContext, AcquisitionKind, BaseSamples, NoisyBaseline,
};
use crate::config::{EncoderKind, Method, ReferenceSpec, RunConfig};
use crate::encoding::{BagOfNgrams, BlosumTable, Embedding, Encoder, ExternalEmbeddings};
use crate::error::{Error, Result};
use crate::evolve::{ga_batch_optimize, ga_optimize, ga_sum_baseline, nsga2, SeedPool};
use crate::oracle::{build_oracles, Direction, Oracle, OracleBank};
use crate::pareto::{default_reference, lex_cmp, non_dominated_sort, pareto_indices, shannon_entropy, ParetoState, ScoreVector};
use crate::runlog::{Evaluation, IterationDiagnostics, Phase, RunLog};
use crate::seqspace::{sample_initial, MutationSpace, Sequence, UniformSampler};
use crate::surrogate::{Query, SurrogateModel};

const FRESH_ATTEMPTS: usize = 1000;
const RANDOM_CHUNK: usize = 64;

/// A finished or interrupted run. `log` is valid in both cases.
#[derive(Debug)]
pub struct RunOutput {
    pub log: RunLog,
    pub error: Option<Error>,
}

impl RunOutput {
    pub fn into_result(self) -> Result<RunLog> {
        match self.error {
            None => Ok(self.log),
            Some(e) => Err(e),
        }
    }
}

pub fn build_encoder(cfg: &RunConfig, space: &MutationSpace) -> Result<Encoder> {
    Ok(match cfg.encoder {
        EncoderKind::Onehot => Encoder::OneHot,
        EncoderKind::Blosum => Encoder::Blosum(BlosumTable::blosum45()),
        EncoderKind::Bag => Encoder::Bag(BagOfNgrams::for_space(space, cfg.ngram)?),
        EncoderKind::ExternalFile => {
            let path = cfg.embeddings_file.as_ref().ok_or_else(|| Error::config("missing embeddings_file"))?;
            Encoder::External(ExternalEmbeddings::load(&cfg.resolve_path(path))?)
        }
    })
}

/// Reference point in the maximization convention. A fixed reference is
/// written in oracle units, so minimized entries are negated.
pub fn resolve_reference(
    spec: &ReferenceSpec,
    directions: &[Direction],
    initial_scores: &[ScoreVector],
) -> Result<ScoreVector> {
    match spec.fixed() {
        Some(r) => {
            if r.len() != directions.len() {
                return Err(Error::WrongObjectiveCount { expected: directions.len(), found: r.len() });
            }
            Ok(r.iter()
                .zip(directions)
                .map(|(v, d)| if *d == Direction::Minimize { -v } else { *v })
                .collect::<Vec<f64>>()
                .into())
        }
        None => default_reference(initial_scores),
    }
}

/// The same reference in oracle units.
pub fn reference_in_oracle_units(reference: &[f64], directions: &[Direction]) -> Vec<f64> {
    reference.iter().zip(directions).map(|(v, d)| if *d == Direction::Minimize { -v } else { *v }).collect()
}

/// The reference a run of `cfg` resolves: the fixed one, or the automatic
/// one over the initial sequences drawn from the run's seed.
pub fn run_reference(cfg: &RunConfig, space: &MutationSpace, oracles: &mut [Box<dyn Oracle>]) -> Result<ScoreVector> {
    let directions: Vec<Direction> = oracles.iter().map(|o| o.direction()).collect();
    if cfg.reference.fixed().is_some() {
        return resolve_reference(&cfg.reference, &directions, &[]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = sample_initial(space, cfg.n_init, cfg.init_max_mut, &mut rng)?;
    let mut scores = vec![Vec::with_capacity(oracles.len()); initial.len()];
    for (o, d) in oracles.iter_mut().zip(&directions) {
        let sign = if *d == Direction::Minimize { -1.0 } else { 1.0 };
        for (row, v) in scores.iter_mut().zip(o.score_batch(&initial)?) {
            row.push(sign * v);
        }
    }
    let scores: Vec<ScoreVector> = scores.into_iter().map(ScoreVector).collect();
    resolve_reference(&cfg.reference, &directions, &scores)
}

/// Runs a configuration with oracles built from its `[[oracles]]` entries.
pub fn run(cfg: &RunConfig) -> RunOutput {
    run_with_replay(cfg, HashMap::new())
}

/// Like [`run`], with raw scores of an interrupted earlier run to reuse.
pub fn run_with_replay(cfg: &RunConfig, replay: HashMap<Sequence, Vec<f64>>) -> RunOutput {
    let prepared = cfg.build_space().and_then(|space| {
        let oracles = build_oracles(&cfg.oracles, &space, &cfg.base_dir)?;
        Ok((space, oracles))
    });
    match prepared {
        Ok((space, oracles)) => run_with(cfg, &space, oracles, replay),
        Err(e) => RunOutput { log: empty_log(cfg, Vec::new()), error: Some(e) },
    }
}

fn empty_log(cfg: &RunConfig, names: Vec<String>) -> RunLog {
    RunLog {
        seed: cfg.seed,
        objective_names: if names.is_empty() { cfg.oracles.iter().map(|o| o.name.clone()).collect() } else { names },
        config_snapshot: cfg.snapshot(),
        ..RunLog::default()
    }
}

/// Runs a configuration against the given space and oracles.
pub fn run_with(
    cfg: &RunConfig,
    space: &MutationSpace,
    oracles: Vec<Box<dyn Oracle>>,
    replay: HashMap<Sequence, Vec<f64>>,
) -> RunOutput {
    let names: Vec<String> = oracles.iter().map(|o| o.name().to_string()).collect();
    let mut log = empty_log(cfg, names);
    if let Err(e) = cfg.validate() {
        return RunOutput { log, error: Some(e) };
    }
    if oracles.len() != cfg.oracles.len() {
        let e = Error::WrongObjectiveCount { expected: cfg.oracles.len(), found: oracles.len() };
        return RunOutput { log, error: Some(e) };
    }
    if cfg.budget == 0 {
        return RunOutput { log, error: None };
    }
    let bank = OracleBank::new(oracles, cfg.bank_budget()).with_replay(replay);
    let mut engine = match build_encoder(cfg, space) {
        Ok(encoder) => Engine {
            cfg,
            space,
            encoder,
            bank,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            embeddings: HashMap::new(),
            reference: None,
            diagnostics: Vec::new(),
        },
        Err(e) => return RunOutput { log, error: Some(e) },
    };
    let result = engine.execute();
    log.evaluations = engine.bank.evaluations();
    log.diagnostics = std::mem::take(&mut engine.diagnostics);
    if let Some(r) = &engine.reference {
        let mut snap = cfg.clone();
        snap.reference = ReferenceSpec::Fixed(reference_in_oracle_units(r, &engine.bank.directions()));
        log.config_snapshot = snap.snapshot();
        log.reference = Some(r.clone());
    }
    let error = result.err();
    log.aborted = error.as_ref().map(|e| e.to_string());
    RunOutput { log, error }
}

struct Engine<'a> {
    cfg: &'a RunConfig,
    space: &'a MutationSpace,
    encoder: Encoder,
    bank: OracleBank,
    rng: ChaCha8Rng,
    embeddings: HashMap<Sequence, Embedding>,
    reference: Option<ScoreVector>,
    diagnostics: Vec<IterationDiagnostics>,
}

impl Engine<'_> {
    fn execute(&mut self) -> Result<()> {
        let initial = sample_initial(self.space, self.cfg.n_init, self.cfg.init_max_mut, &mut self.rng)?;
        self.bank.set_phase(Phase::Init, 0);
        let init_scores = self.bank.score(&initial)?;
        self.reference = Some(resolve_reference(&self.cfg.reference, &self.bank.directions(), &init_scores)?);
        let ga = self.cfg.ga_config();
        match self.cfg.method {
            Method::GaSum => {
                ga_sum_baseline(&mut self.bank, self.space, &ga, &initial, &mut self.rng)?;
            }
            Method::Nsga2 => {
                nsga2(&mut self.bank, self.space, &ga, &initial, &mut self.rng)?;
            }
            Method::Random => self.random_search()?,
            _ => {
                let mut t = 0;
                while self.bank.remaining() > 0 {
                    t += 1;
                    self.bo_step(t)?;
                }
            }
        }
        Ok(())
    }

    fn random_search(&mut self) -> Result<()> {
        let sampler = UniformSampler::new(self.space);
        let mut t = 0;
        while self.bank.remaining() > 0 {
            t += 1;
            let want = self.bank.remaining().min(RANDOM_CHUNK);
            let batch = self.fresh_sequences(&sampler, want, &HashSet::new())?;
            self.bank.set_phase(Phase::Baseline, t);
            self.bank.score(&batch)?;
        }
        Ok(())
    }

    /// `n` distinct unscored feasible sequences outside `exclude`.
    fn fresh_sequences(
        &mut self,
        sampler: &UniformSampler,
        n: usize,
        exclude: &HashSet<Sequence>,
    ) -> Result<Vec<Sequence>> {
        let mut out: Vec<Sequence> = Vec::with_capacity(n);
        let mut misses = 0;
        while out.len() < n {
            let s = sampler.sample(self.space, &mut self.rng, FRESH_ATTEMPTS).ok_or(Error::SpaceExhausted)?;
            if self.bank.is_scored(&s) || exclude.contains(&s) || out.contains(&s) {
                misses += 1;
                if misses > FRESH_ATTEMPTS * n.max(1) {
                    return Err(Error::SpaceExhausted);
                }
                continue;
            }
            out.push(s);
        }
        Ok(out)
    }

    fn embed(&mut self, seqs: &[Sequence]) -> Result<Vec<Embedding>> {
        seqs.iter()
            .map(|s| {
                if let Some(e) = self.embeddings.get(s) {
                    return Ok(e.clone());
                }
                let e = self.encoder.encode(s)?;
                self.embeddings.insert(s.clone(), e.clone());
                Ok(e)
            })
            .collect()
    }

    fn bo_step(&mut self, t: usize) -> Result<()> {
        let k = self.bank.n_objectives();
        let q = self.cfg.effective_q().min(self.bank.remaining());
        let records = self.bank.call_log();
        let seqs: Vec<Sequence> = records.iter().map(|r| r.sequence.clone()).collect();
        let scores: Vec<Vec<f64>> = records.iter().map(|r| r.scores.to_vec()).collect();
        let targets: Vec<Vec<f64>> = (0..k).map(|d| scores.iter().map(|s| s[d]).collect()).collect();
        let x = self.embed(&seqs)?;
        let model = SurrogateModel::fit(&x, &targets, &self.cfg.fit_config())?;
        let reference = self.reference.clone().expect("reference resolved after initialization");
        let kind = self.cfg.method.acquisition(k).expect("Bayesian-optimization method");
        let mc = self.cfg.acquisition.mc_samples;
        let ctx = AcquisitionContext::new(&scores, reference.to_vec(), mc, self.rng.gen())?;
        let base = BaseSamples::new(mc, q, k, self.rng.gen());

        let front: HashSet<usize> = pareto_indices(&scores).into_iter().collect();
        let weights = (0..seqs.len()).map(|i| if front.contains(&i) { self.cfg.front_weight } else { 1.0 }).collect();
        let pool = SeedPool::weighted(seqs.clone(), weights)?;
        let ga = self.cfg.ga_config();
        let start = Instant::now();

        let mut queries = QueryCache::new(&model, &self.encoder, &mut self.embeddings);
        let bank = &self.bank;
        let (proposal, value) = if self.cfg.method.is_batch() {
            let baseline = if kind == AcquisitionKind::Qnehvi {
                let observed = baseline_points(&scores, self.cfg.acquisition.nehvi_baseline);
                let qs = observed.into_iter().map(|i| model.training_query(i)).collect();
                Some(NoisyBaseline::new(&model, qs, reference.to_vec(), mc, self.rng.gen())?)
            } else {
                None
            };
            let mut memo: HashMap<Vec<Sequence>, f64> = HashMap::new();
            let mut fitness = |batches: &[Vec<Sequence>]| -> Result<Vec<f64>> {
                let wanted: Vec<Sequence> =
                    batches.iter().flatten().filter(|s| !bank.is_scored(s)).cloned().collect();
                queries.prepare(&wanted)?;
                batches
                    .iter()
                    .map(|b| {
                        if let Some(v) = memo.get(b) {
                            return Ok(*v);
                        }
                        let v = if b.iter().any(|s| bank.is_scored(s)) {
                            f64::NEG_INFINITY
                        } else {
                            let members: Vec<&Query> = b.iter().map(|s| queries.get(s)).collect();
                            match &baseline {
                                Some(nb) => qnehvi_mc(&model, &members, nb, &base)?.value,
                                None => qehvi_mc(&model, &members, &ctx, &base)?.value,
                            }
                        };
                        memo.insert(b.clone(), v);
                        Ok(v)
                    })
                    .collect()
            };
            let out = ga_batch_optimize(&mut fitness, self.space, &ga, q, &pool, &mut self.rng)?;
            (out.best, out.best_fitness)
        } else {
            let best_observed = scores.iter().map(|s| s[0]).fold(f64::NEG_INFINITY, f64::max);
            let mut memo: HashMap<Sequence, f64> = HashMap::new();
            let mut fitness = |gen: &[Sequence]| -> Result<Vec<f64>> {
                let wanted: Vec<Sequence> = gen.iter().filter(|s| !bank.is_scored(s)).cloned().collect();
                queries.prepare(&wanted)?;
                gen.iter()
                    .map(|s| {
                        if let Some(v) = memo.get(s) {
                            return Ok(*v);
                        }
                        let v = if bank.is_scored(s) {
                            f64::NEG_INFINITY
                        } else {
                            let qs = queries.get(s);
                            match kind {
                                AcquisitionKind::Logei => log_ei_at(&model, qs, best_observed),
                                AcquisitionKind::Ehvi => ehvi_at(&model, qs, &ctx)?,
                                _ => qehvi_mc(&model, &[qs], &ctx, &base)?.value,
                            }
                        };
                        memo.insert(s.clone(), v);
                        Ok(v)
                    })
                    .collect()
            };
            let out = ga_optimize(&mut fitness, self.space, &ga, &pool, &mut self.rng)?;
            (vec![out.best], out.best_fitness)
        };
        let ga_seconds = start.elapsed().as_secs_f64();

        // Already-scored or repeated proposals are swapped for random
        // unscored sequences so every step spends its full batch.
        let mut batch: Vec<Sequence> = Vec::with_capacity(q);
        let mut seen = HashSet::new();
        for s in proposal {
            if !self.bank.is_scored(&s) && seen.insert(s.clone()) {
                batch.push(s);
            }
        }
        if batch.len() < q {
            let sampler = UniformSampler::new(self.space);
            let extra = self.fresh_sequences(&sampler, q - batch.len(), &seen)?;
            batch.extend(extra);
        }

        self.diagnostics.push(IterationDiagnostics {
            iteration: t,
            n_train: seqs.len(),
            lml: (0..k).map(|d| model.fitted_lml(d)).collect(),
            hyperparams: (0..k).map(|d| model.hyperparams(d)).collect(),
            acquisition_value: value,
            ga_seconds,
        });
        log::debug!("iteration {t}: {} training points, acquisition {value:.4e}, GA {ga_seconds:.2} s", seqs.len());
        self.bank.set_phase(Phase::Bo, t);
        self.bank.score(&batch)?;
        Ok(())
    }
}

/// Projections of candidate sequences, computed a generation at a time.
struct QueryCache<'m> {
    model: &'m SurrogateModel,
    encoder: &'m Encoder,
    embeddings: &'m mut HashMap<Sequence, Embedding>,
    queries: HashMap<Sequence, Query>,
}

impl<'m> QueryCache<'m> {
    fn new(model: &'m SurrogateModel, encoder: &'m Encoder, embeddings: &'m mut HashMap<Sequence, Embedding>) -> Self {
        QueryCache { model, encoder, embeddings, queries: HashMap::new() }
    }

    fn prepare(&mut self, seqs: &[Sequence]) -> Result<()> {
        let mut missing: Vec<Sequence> = Vec::new();
        for s in seqs {
            if !self.queries.contains_key(s) && !missing.contains(s) {
                missing.push(s.clone());
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let mut emb = Vec::with_capacity(missing.len());
        for s in &missing {
            let e = match self.embeddings.get(s) {
                Some(e) => e.clone(),
                None => {
                    let e = self.encoder.encode(s)?;
                    self.embeddings.insert(s.clone(), e.clone());
                    e
                }
            };
            emb.push(e);
        }
        for (s, q) in missing.into_iter().zip(self.model.prepare(&emb)?) {
            self.queries.insert(s, q);
        }
        Ok(())
    }

    fn get(&self, s: &Sequence) -> &Query {
        &self.queries[s]
    }
}

/// Observed points the noisy acquisition conditions on: whole
/// non-dominated fronts in rank order, up to `cap` points.
fn baseline_points(scores: &[Vec<f64>], cap: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for front in non_dominated_sort(scores) {
        if out.len() >= cap {
            break;
        }
        let room = cap - out.len();
        out.extend(front.into_iter().take(room));
    }
    out
}

/// Hypervolume after each oracle call.
#[derive(Clone, Debug, PartialEq)]
pub struct HvPoint {
    pub oracle_calls: usize,
    pub iteration: usize,
    pub phase: Phase,
    pub hypervolume: f64,
}

pub fn hv_trace(evaluations: &[Evaluation], reference: &ScoreVector) -> Result<Vec<HvPoint>> {
    let mut state = ParetoState::new(reference.clone())?;
    evaluations
        .iter()
        .map(|e| {
            state.update(e.call_index, e.scores.clone())?;
            Ok(HvPoint {
                oracle_calls: e.call_index,
                iteration: e.iteration,
                phase: e.phase,
                hypervolume: state.hypervolume(),
            })
        })
        .collect()
}

/// Sequence diversity at a checkpoint: over every sequence scored so far
/// and over the most recent window.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyPoint {
    pub oracle_calls: usize,
    pub cumulative: f64,
    pub windowed: f64,
}

/// Entropy at every multiple of `window` calls and at the final call.
pub fn entropy_trace(evaluations: &[Evaluation], window: usize) -> Result<Vec<EntropyPoint>> {
    if window == 0 {
        return Err(Error::config("entropy window must be at least 1"));
    }
    let seqs: Vec<Sequence> = evaluations.iter().map(|e| e.sequence.clone()).collect();
    let n = seqs.len();
    let mut checkpoints: Vec<usize> = (1..=n / window).map(|i| i * window).collect();
    if n > 0 && n % window != 0 {
        checkpoints.push(n);
    }
    checkpoints
        .into_iter()
        .map(|c| {
            Ok(EntropyPoint {
                oracle_calls: c,
                cumulative: shannon_entropy(&seqs[..c])?,
                windowed: shannon_entropy(&seqs[c.saturating_sub(window)..c])?,
            })
        })
        .collect()
}

/// Indices of the observed Pareto front, ordered by descending scores.
pub fn front_indices(evaluations: &[Evaluation]) -> Vec<usize> {
    let scores: Vec<&ScoreVector> = evaluations.iter().map(|e| &e.scores).collect();
    let mut idx = pareto_indices(&scores);
    idx.sort_by(|&a, &b| lex_cmp(&scores[b], &scores[a]).then(a.cmp(&b)));
    idx
}
