//! Scoring oracles, the budgeted cache in front of them, and the external
//! process protocol.
//!
//! External oracles speak JSON lines over stdio. The child greets with
//! `{"type":"hello","name":..,"direction":"maximize"|"minimize"}`, answers
//! `{"type":"score","id":n,"sequences":[..]}` with
//! `{"type":"scores","id":n,"values":[..]}`, and is told `{"type":"bye"}`
//! before its stdin closes.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::{hypervolume, non_dominated_sort, ParetoState, ScoreVector};
use crate::runlog::{Evaluation, Phase};
use crate::seqspace::{enumerate_space, residue_index, MutationSpace, Sequence, AMINO_ACIDS};

/// Sequences per request sent to an external oracle.
pub const EXTERNAL_BATCH: usize = 64;
const STDERR_TAIL: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Maximize => "maximize",
            Direction::Minimize => "minimize",
        })
    }
}

/// A black-box scorer of sequences.
pub trait Oracle: Send {
    fn name(&self) -> &str;
    fn direction(&self) -> Direction;
    /// One raw score per sequence, in the oracle's own direction.
    fn score_batch(&mut self, sequences: &[Sequence]) -> Result<Vec<f64>>;
    fn is_external(&self) -> bool {
        false
    }
}

/// Explicit sequence-to-score map.
#[derive(Clone, Debug)]
pub struct LookupTable {
    name: String,
    direction: Direction,
    table: HashMap<Sequence, f64>,
}

impl LookupTable {
    pub fn new(name: impl Into<String>, direction: Direction, table: HashMap<Sequence, f64>) -> Self {
        LookupTable { name: name.into(), direction, table }
    }

    /// Parses `sequence<TAB or space>score` lines; blank lines and `#`
    /// comments are skipped.
    pub fn parse_table(text: &str) -> Result<HashMap<Sequence, f64>> {
        let mut table = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(seq), Some(score), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::config(format!("lookup table line {}: expected `sequence score`", lineno + 1)));
            };
            let score: f64 = score
                .parse()
                .map_err(|_| Error::config(format!("lookup table line {}: bad score {score:?}", lineno + 1)))?;
            table.insert(Sequence::parse(seq)?, score);
        }
        Ok(table)
    }
}

impl Oracle for LookupTable {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn score_batch(&mut self, sequences: &[Sequence]) -> Result<Vec<f64>> {
        sequences
            .iter()
            .map(|s| {
                self.table.get(s).copied().ok_or_else(|| Error::OracleFailure {
                    oracle: self.name.clone(),
                    message: format!("sequence {s} is not in the lookup table"),
                })
            })
            .collect()
    }
}

/// Per-position letter weights; `None` marks an undefined weight.
pub type PwmWeights = Vec<[Option<f64>; 20]>;

/// `Σ_p w_p[s[p]]`.
pub fn pwm_score(seq: &Sequence, weights: &PwmWeights) -> Result<f64> {
    if seq.len() != weights.len() {
        return Err(Error::LengthMismatch { expected: weights.len(), found: seq.len() });
    }
    let mut total = 0.0;
    for (p, &r) in seq.residues().iter().enumerate() {
        let idx = residue_index(r).ok_or(Error::InvalidResidue { index: p, found: r as char })?;
        total += weights[p][idx].ok_or(Error::MissingWeight { position: p, residue: r as char })?;
    }
    Ok(total)
}

/// Additive position-weight-matrix score.
#[derive(Clone, Debug)]
pub struct Pwm {
    name: String,
    direction: Direction,
    weights: PwmWeights,
}

impl Pwm {
    pub fn new(name: impl Into<String>, direction: Direction, weights: PwmWeights) -> Self {
        Pwm { name: name.into(), direction, weights }
    }

    /// Random weights over a space: zero for parental residues, independent
    /// `N(0, scale²)` for every alternative at editable positions.
    pub fn random(name: impl Into<String>, direction: Direction, space: &MutationSpace, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = parental_weights(space);
        for pos in space.positions() {
            for &a in &pos.alternatives {
                let z: f64 = StandardNormal.sample(&mut rng);
                weights[pos.index][residue_index(a).expect("validated residue")] = Some(scale * z);
            }
        }
        Pwm::new(name, direction, weights)
    }

    /// Weights correlated with `base`: `ρ·w + sqrt(1 − ρ²)·scale·z` for every
    /// alternative residue.
    pub fn correlated(
        name: impl Into<String>,
        direction: Direction,
        space: &MutationSpace,
        base: &Pwm,
        correlation: f64,
        scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(-1.0..=1.0).contains(&correlation) {
            return Err(Error::config(format!("correlation {correlation} is outside [-1, 1]")));
        }
        if base.weights.len() != space.len() {
            return Err(Error::LengthMismatch { expected: space.len(), found: base.weights.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = parental_weights(space);
        let residual = (1.0 - correlation * correlation).sqrt();
        for pos in space.positions() {
            for &a in &pos.alternatives {
                let idx = residue_index(a).expect("validated residue");
                let w = base.weights[pos.index][idx]
                    .ok_or(Error::MissingWeight { position: pos.index, residue: a as char })?;
                let z: f64 = StandardNormal.sample(&mut rng);
                weights[pos.index][idx] = Some(correlation * w + residual * scale * z);
            }
        }
        Ok(Pwm::new(name, direction, weights))
    }

    pub fn weights(&self) -> &PwmWeights {
        &self.weights
    }
}

fn parental_weights(space: &MutationSpace) -> PwmWeights {
    space
        .parental()
        .residues()
        .iter()
        .map(|&r| {
            let mut row = [None; 20];
            row[residue_index(r).expect("validated residue")] = Some(0.0);
            row
        })
        .collect()
}

impl Oracle for Pwm {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn score_batch(&mut self, sequences: &[Sequence]) -> Result<Vec<f64>> {
        sequences.iter().map(|s| pwm_score(s, &self.weights)).collect()
    }
}

/// Negative Hamming distance to a target over a set of positions.
#[derive(Clone, Debug)]
pub struct MotifDistance {
    name: String,
    direction: Direction,
    target: Sequence,
    positions: Vec<usize>,
}

impl MotifDistance {
    pub fn new(name: impl Into<String>, direction: Direction, target: Sequence, positions: Vec<usize>) -> Result<Self> {
        if let Some(&p) = positions.iter().find(|&&p| p >= target.len()) {
            return Err(Error::config(format!("motif distance position {p} is outside the target")));
        }
        Ok(MotifDistance { name: name.into(), direction, target, positions })
    }
}

impl Oracle for MotifDistance {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn score_batch(&mut self, sequences: &[Sequence]) -> Result<Vec<f64>> {
        sequences
            .iter()
            .map(|s| {
                if s.len() != self.target.len() {
                    return Err(Error::LengthMismatch { expected: self.target.len(), found: s.len() });
                }
                let (a, b) = (s.residues(), self.target.residues());
                Ok(-(self.positions.iter().filter(|&&p| a[p] != b[p]).count() as f64))
            })
            .collect()
    }
}

/// How an oracle is built, as written in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub name: String,
    /// `lookup`, `pwm`, `random-pwm`, `motif-distance` or `external`.
    pub kind: String,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<HashMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_file: Option<PathBuf>,
    /// Position (0-based, as a string key) to residue-letter weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<HashMap<String, HashMap<String, f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlate_with: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_timeout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_timeout: Option<f64>,
}

impl OracleSpec {
    /// A spec of the given kind with every optional field empty.
    pub fn new(name: impl Into<String>, kind: impl Into<String>, direction: Direction) -> Self {
        OracleSpec {
            name: name.into(),
            kind: kind.into(),
            direction,
            table: None,
            table_file: None,
            weights: None,
            seed: None,
            scale: None,
            correlate_with: None,
            correlation: None,
            target: None,
            command: None,
            workdir: None,
            startup_timeout: None,
            request_timeout: None,
        }
    }

    fn present_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut add = |set: bool, name: &'static str| {
            if set {
                out.push(name)
            }
        };
        add(self.table.is_some(), "table");
        add(self.table_file.is_some(), "table_file");
        add(self.weights.is_some(), "weights");
        add(self.seed.is_some(), "seed");
        add(self.scale.is_some(), "scale");
        add(self.correlate_with.is_some(), "correlate_with");
        add(self.correlation.is_some(), "correlation");
        add(self.target.is_some(), "target");
        add(self.command.is_some(), "command");
        add(self.workdir.is_some(), "workdir");
        add(self.startup_timeout.is_some(), "startup_timeout");
        add(self.request_timeout.is_some(), "request_timeout");
        out
    }

    /// Rejects fields that do not belong to the oracle kind.
    pub fn validate(&self) -> Result<()> {
        let allowed: &[&str] = match self.kind.as_str() {
            "lookup" => &["table", "table_file"],
            "pwm" => &["weights"],
            "random-pwm" => &["seed", "scale", "correlate_with", "correlation"],
            "motif-distance" => &["target"],
            "external" => &["command", "workdir", "startup_timeout", "request_timeout"],
            other => {
                return Err(Error::config(format!(
                    "oracle {:?}: unknown kind {other:?} (expected lookup, pwm, random-pwm, motif-distance or external)",
                    self.name
                )))
            }
        };
        if let Some(f) = self.present_fields().into_iter().find(|f| !allowed.contains(f)) {
            return Err(Error::config(format!("oracle {:?}: key `{f}` is not valid for kind {}", self.name, self.kind)));
        }
        if self.kind == "lookup" && self.table.is_some() == self.table_file.is_some() {
            return Err(Error::config(format!("oracle {:?}: set exactly one of `table` or `table_file`", self.name)));
        }
        if self.kind == "motif-distance" && self.target.is_none() {
            return Err(Error::config(format!("oracle {:?}: `target` is required", self.name)));
        }
        if self.kind == "external" && self.command.as_ref().map_or(true, |c| c.is_empty()) {
            return Err(Error::config(format!("oracle {:?}: `command` must be a non-empty list", self.name)));
        }
        if self.correlation.is_some() != self.correlate_with.is_some() {
            return Err(Error::config(format!(
                "oracle {:?}: `correlation` and `correlate_with` go together",
                self.name
            )));
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds every oracle of a configuration. Relative paths resolve against
/// `base_dir`; `random-pwm` oracles may correlate with an earlier one.
pub fn build_oracles(specs: &[OracleSpec], space: &MutationSpace, base_dir: &Path) -> Result<Vec<Box<dyn Oracle>>> {
    let mut pwms: HashMap<String, Pwm> = HashMap::new();
    let mut out: Vec<Box<dyn Oracle>> = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        if specs[..i].iter().any(|s| s.name == spec.name) {
            return Err(Error::config(format!("duplicate oracle name {:?}", spec.name)));
        }
        let oracle: Box<dyn Oracle> = match spec.kind.as_str() {
            "lookup" => {
                let table = match (&spec.table, &spec.table_file) {
                    (Some(t), _) => t
                        .iter()
                        .map(|(s, v)| Ok((Sequence::parse(s)?, *v)))
                        .collect::<Result<HashMap<_, _>>>()?,
                    (None, Some(path)) => {
                        LookupTable::parse_table(&std::fs::read_to_string(resolve(base_dir, path))?)?
                    }
                    (None, None) => unreachable!("validated"),
                };
                Box::new(LookupTable::new(&spec.name, spec.direction, table))
            }
            "pwm" => {
                let mut weights = parental_weights(space);
                for (pos, letters) in spec.weights.iter().flatten() {
                    let p: usize = pos
                        .parse()
                        .map_err(|_| Error::config(format!("oracle {:?}: bad position key {pos:?}", spec.name)))?;
                    if p >= space.len() {
                        return Err(Error::config(format!("oracle {:?}: position {p} out of range", spec.name)));
                    }
                    for (letter, w) in letters {
                        let b = letter.as_bytes();
                        let idx = (b.len() == 1).then(|| residue_index(b[0])).flatten().ok_or_else(|| {
                            Error::config(format!("oracle {:?}: bad residue key {letter:?}", spec.name))
                        })?;
                        weights[p][idx] = Some(*w);
                    }
                }
                let pwm = Pwm::new(&spec.name, spec.direction, weights);
                pwms.insert(spec.name.clone(), pwm.clone());
                Box::new(pwm)
            }
            "random-pwm" => {
                let seed = spec.seed.unwrap_or(i as u64);
                let scale = spec.scale.unwrap_or(1.0);
                let pwm = match &spec.correlate_with {
                    Some(other) => {
                        let base = pwms.get(other).ok_or_else(|| {
                            Error::config(format!(
                                "oracle {:?}: correlate_with {other:?} must name an earlier pwm oracle",
                                spec.name
                            ))
                        })?;
                        Pwm::correlated(
                            &spec.name,
                            spec.direction,
                            space,
                            base,
                            spec.correlation.unwrap_or(0.0),
                            scale,
                            seed,
                        )?
                    }
                    None => Pwm::random(&spec.name, spec.direction, space, scale, seed),
                };
                pwms.insert(spec.name.clone(), pwm.clone());
                Box::new(pwm)
            }
            "motif-distance" => {
                let target = Sequence::parse(spec.target.as_deref().unwrap_or_default())?;
                Box::new(MotifDistance::new(&spec.name, spec.direction, target, space.editable_indices())?)
            }
            "external" => Box::new(ExternalOracle::spawn(spec, base_dir)?),
            _ => unreachable!("validated"),
        };
        out.push(oracle);
    }
    Ok(out)
}

/// One novel sequence as scored by the bank.
#[derive(Clone, Debug, PartialEq)]
pub struct CallRecord {
    pub call_index: usize,
    pub sequence: Sequence,
    /// Scores as returned by each oracle.
    pub raw: Vec<f64>,
    /// Scores with minimized objectives negated.
    pub scores: ScoreVector,
    pub phase: Phase,
    pub iteration: usize,
}

/// The oracles of a run behind a cache and a call budget. One call is one
/// novel sequence scored on every objective.
pub struct OracleBank {
    oracles: Vec<Box<dyn Oracle>>,
    cache: HashMap<Sequence, ScoreVector>,
    replay: HashMap<Sequence, Vec<f64>>,
    initial_budget: usize,
    remaining: usize,
    call_log: Vec<CallRecord>,
    phase: Phase,
    iteration: usize,
    wall_time: Vec<Duration>,
}

impl OracleBank {
    pub fn new(oracles: Vec<Box<dyn Oracle>>, budget: usize) -> Self {
        let n = oracles.len();
        OracleBank {
            oracles,
            cache: HashMap::new(),
            replay: HashMap::new(),
            initial_budget: budget,
            remaining: budget,
            call_log: Vec::new(),
            phase: Phase::Init,
            iteration: 0,
            wall_time: vec![Duration::ZERO; n],
        }
    }

    /// Raw scores from an earlier, interrupted run of the same configuration.
    /// A novel sequence found here is charged to the budget as usual but
    /// its scores are taken from the replay instead of the oracles.
    pub fn with_replay(mut self, replay: HashMap<Sequence, Vec<f64>>) -> Self {
        self.replay = replay;
        self
    }

    pub fn n_objectives(&self) -> usize {
        self.oracles.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.oracles.iter().map(|o| o.name().to_string()).collect()
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.oracles.iter().map(|o| o.direction()).collect()
    }

    pub fn initial_budget(&self) -> usize {
        self.initial_budget
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    pub fn calls(&self) -> usize {
        self.call_log.len()
    }

    pub fn call_log(&self) -> &[CallRecord] {
        &self.call_log
    }

    /// Cumulative time spent inside each oracle.
    pub fn wall_time(&self) -> &[Duration] {
        &self.wall_time
    }

    pub fn set_phase(&mut self, phase: Phase, iteration: usize) {
        self.phase = phase;
        self.iteration = iteration;
    }

    pub fn cached(&self, seq: &Sequence) -> Option<&ScoreVector> {
        self.cache.get(seq)
    }

    pub fn is_scored(&self, seq: &Sequence) -> bool {
        self.cache.contains_key(seq)
    }

    /// Distinct sequences of `sequences` absent from the cache, in first
    /// occurrence order.
    pub fn novel(&self, sequences: &[Sequence]) -> Vec<Sequence> {
        let mut seen = std::collections::HashSet::new();
        sequences
            .iter()
            .filter(|s| !self.cache.contains_key(*s) && seen.insert((*s).clone()))
            .cloned()
            .collect()
    }

    /// Scores every sequence. Cached sequences cost nothing; novel ones cost
    /// one call each and the whole request fails before any oracle runs if
    /// the budget cannot cover it.
    pub fn score(&mut self, sequences: &[Sequence]) -> Result<Vec<ScoreVector>> {
        let novel = self.novel(sequences);
        if novel.len() > self.remaining {
            return Err(Error::BudgetExhausted { requested: novel.len(), remaining: self.remaining });
        }
        if !novel.is_empty() {
            let fresh: Vec<Sequence> = novel.iter().filter(|s| !self.replay.contains_key(*s)).cloned().collect();
            let mut fresh_raw: Vec<Vec<f64>> = vec![Vec::with_capacity(self.oracles.len()); fresh.len()];
            if !fresh.is_empty() {
                for (o, oracle) in self.oracles.iter_mut().enumerate() {
                    let start = Instant::now();
                    let values = oracle.score_batch(&fresh)?;
                    self.wall_time[o] += start.elapsed();
                    if values.len() != fresh.len() {
                        return Err(Error::OracleFailure {
                            oracle: oracle.name().to_string(),
                            message: format!("returned {} scores for {} sequences", values.len(), fresh.len()),
                        });
                    }
                    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                        return Err(Error::OracleFailure {
                            oracle: oracle.name().to_string(),
                            message: format!("returned non-finite score {v}"),
                        });
                    }
                    for (row, v) in fresh_raw.iter_mut().zip(values) {
                        row.push(v);
                    }
                }
            }
            let mut fresh_iter = fresh_raw.into_iter();
            for seq in novel {
                let raw = match self.replay.get(&seq) {
                    Some(r) if r.len() == self.oracles.len() => r.clone(),
                    Some(_) => {
                        return Err(Error::config(format!("replayed scores for {seq} have the wrong width")));
                    }
                    None => fresh_iter.next().expect("one row per fresh sequence"),
                };
                let scores: ScoreVector = raw
                    .iter()
                    .zip(&self.oracles)
                    .map(|(v, o)| match o.direction() {
                        Direction::Maximize => *v,
                        Direction::Minimize => -*v,
                    })
                    .collect::<Vec<f64>>()
                    .into();
                self.remaining -= 1;
                self.cache.insert(seq.clone(), scores.clone());
                self.call_log.push(CallRecord {
                    call_index: self.call_log.len() + 1,
                    sequence: seq,
                    raw,
                    scores,
                    phase: self.phase,
                    iteration: self.iteration,
                });
            }
        }
        Ok(sequences.iter().map(|s| self.cache[s].clone()).collect())
    }

    /// The call log as run-log evaluations.
    pub fn evaluations(&self) -> Vec<Evaluation> {
        self.call_log
            .iter()
            .map(|c| Evaluation {
                call_index: c.call_index,
                sequence: c.sequence.clone(),
                phase: c.phase,
                iteration: c.iteration,
                scores: c.scores.clone(),
            })
            .collect()
    }

    pub fn oracles_mut(&mut self) -> &mut [Box<dyn Oracle>] {
        &mut self.oracles
    }
}

/// Exhaustive ground truth over an enumerable space.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub front: ParetoState,
    /// Sequences of the front, aligned with `front.members()`.
    pub front_sequences: Vec<Sequence>,
    pub count: u128,
}

impl GroundTruth {
    pub fn hypervolume(&self) -> f64 {
        self.front.hypervolume()
    }

    /// Hypervolume of the exact front at another reference point.
    pub fn hypervolume_at(&self, reference: &[f64]) -> Result<f64> {
        hypervolume(&self.front.scores(), reference)
    }
}

/// Scores every sequence of the space and streams the scores through a
/// front update. External oracles are refused.
pub fn brute_force_front(
    space: &MutationSpace,
    oracles: &mut [Box<dyn Oracle>],
    reference: &ScoreVector,
    cap: u128,
) -> Result<GroundTruth> {
    if let Some(o) = oracles.iter().find(|o| o.is_external()) {
        return Err(Error::ExternalOracleRefused(o.name().to_string()));
    }
    if reference.len() != oracles.len() {
        return Err(Error::WrongObjectiveCount { expected: oracles.len(), found: reference.len() });
    }
    let mut iter = enumerate_space(space, cap)?;
    let mut front = ParetoState::new(reference.clone())?;
    let mut ids: Vec<Sequence> = Vec::new();
    let mut count: u128 = 0;
    const CHUNK: usize = 4096;
    loop {
        let chunk: Vec<Sequence> = iter.by_ref().take(CHUNK).collect();
        if chunk.is_empty() {
            break;
        }
        let mut columns = Vec::with_capacity(oracles.len());
        for o in oracles.iter_mut() {
            let sign = if o.direction() == Direction::Minimize { -1.0 } else { 1.0 };
            columns.push(o.score_batch(&chunk)?.into_iter().map(|v| sign * v).collect::<Vec<f64>>());
        }
        for (i, seq) in chunk.into_iter().enumerate() {
            let score: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            let id = ids.len();
            ids.push(seq);
            front.update(id, ScoreVector(score))?;
            count += 1;
        }
        // Drop sequences that can no longer matter to keep memory flat.
        if ids.len() > 1 << 20 {
            let keep: HashMap<usize, usize> = front.members().iter().enumerate().map(|(j, (id, _))| (*id, j)).collect();
            let mut kept = vec![None; keep.len()];
            for (id, j) in &keep {
                kept[*j] = Some(ids[*id].clone());
            }
            let mut rebuilt = ParetoState::new(reference.clone())?;
            ids = kept.into_iter().map(|s| s.expect("member")).collect();
            for (j, (_, score)) in front.members().iter().enumerate() {
                rebuilt.update(j, score.clone())?;
            }
            front = rebuilt;
        }
    }
    let front_sequences = front.members().iter().map(|(id, _)| ids[*id].clone()).collect();
    Ok(GroundTruth { front, front_sequences, count })
}

/// Indices of the first non-dominated front of a full score table; used
/// to cross-check streamed fronts.
pub fn table_front(scores: &[ScoreVector]) -> Vec<usize> {
    non_dominated_sort(scores).into_iter().next().unwrap_or_default()
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ChildMessage {
    Hello { name: String, direction: Direction },
    Scores { id: u64, values: Vec<f64> },
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum EngineMessage<'a> {
    Score { id: u64, sequences: Vec<&'a str> },
    Bye,
}

/// A scoring process speaking the JSON-lines protocol.
pub struct ExternalOracle {
    name: String,
    announced_name: String,
    direction: Direction,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    stderr: Arc<Mutex<VecDeque<String>>>,
    next_id: u64,
    request_timeout: Duration,
}

impl ExternalOracle {
    /// Launches the command of an `external` spec and completes the hello
    /// handshake.
    pub fn spawn(spec: &OracleSpec, base_dir: &Path) -> Result<Self> {
        let command = spec.command.clone().unwrap_or_default();
        let name = spec.name.clone();
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::config(format!("oracle {name:?}: empty command")))?;
        let workdir = spec.workdir.as_ref().map_or_else(|| base_dir.to_path_buf(), |w| resolve(base_dir, w));
        let mut child = Command::new(program)
            .args(args)
            .current_dir(&workdir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::SpawnFailure { oracle: name.clone(), message: format!("{program}: {e}") })?;

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let stderr = Arc::new(Mutex::new(VecDeque::new()));
        let stderr_pipe = child.stderr.take().expect("piped stderr");
        let tail = Arc::clone(&stderr);
        thread::spawn(move || {
            for line in BufReader::new(stderr_pipe).lines().map_while(|l| l.ok()) {
                let mut t = tail.lock().expect("stderr lock");
                if t.len() == STDERR_TAIL {
                    t.pop_front();
                }
                t.push_back(line);
            }
        });

        let stdin = child.stdin.take();
        let mut oracle = ExternalOracle {
            name: name.clone(),
            announced_name: String::new(),
            direction: spec.direction,
            child,
            stdin,
            lines,
            stderr,
            next_id: 1,
            request_timeout: Duration::from_secs_f64(spec.request_timeout.unwrap_or(120.0)),
        };
        let startup = spec.startup_timeout.unwrap_or(10.0);
        let line = match oracle.lines.recv_timeout(Duration::from_secs_f64(startup)) {
            Ok(l) => l,
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::HandshakeTimeout { oracle: name, seconds: startup });
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::SpawnFailure {
                    oracle: name,
                    message: format!("exited before the handshake{}", oracle.stderr_suffix()),
                });
            }
        };
        match serde_json::from_str::<ChildMessage>(&line) {
            Ok(ChildMessage::Hello { name: announced, direction }) => {
                if direction != spec.direction {
                    return Err(oracle.violation("direction", &line));
                }
                oracle.announced_name = announced;
            }
            _ => return Err(oracle.violation("handshake", &line)),
        }
        Ok(oracle)
    }

    /// Name the child announced in its handshake.
    pub fn announced_name(&self) -> &str {
        &self.announced_name
    }

    fn stderr_suffix(&self) -> String {
        let tail = self.stderr.lock().expect("stderr lock");
        if tail.is_empty() {
            String::new()
        } else {
            format!("; stderr: {}", tail.iter().cloned().collect::<Vec<_>>().join(" | "))
        }
    }

    fn violation(&self, reason: &str, line: &str) -> Error {
        Error::ProtocolViolation { oracle: self.name.clone(), reason: reason.to_string(), line: line.to_string() }
    }

    fn failure(&mut self, what: &str) -> Error {
        // Give the stderr reader a moment to drain a dying child.
        let deadline = Instant::now() + Duration::from_millis(200);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                break;
            }
            thread::sleep(Duration::from_millis(10));
        }
        thread::sleep(Duration::from_millis(20));
        Error::OracleFailure { oracle: self.name.clone(), message: format!("{what}{}", self.stderr_suffix()) }
    }

    fn request(&mut self, sequences: &[Sequence]) -> Result<Vec<f64>> {
        let id = self.next_id;
        self.next_id += 1;
        let msg = EngineMessage::Score { id, sequences: sequences.iter().map(|s| s.as_str()).collect() };
        let text = serde_json::to_string(&msg).expect("serializable request");
        let written = match self.stdin.as_mut() {
            Some(stdin) => writeln!(stdin, "{text}").and_then(|_| stdin.flush()),
            None => Err(std::io::Error::new(std::io::ErrorKind::BrokenPipe, "stdin closed")),
        };
        if let Err(e) = written {
            return Err(self.failure(&format!("could not send request {id}: {e}")));
        }
        let line = match self.lines.recv_timeout(self.request_timeout) {
            Ok(l) => l,
            Err(RecvTimeoutError::Timeout) => {
                return Err(self.failure(&format!("no response to request {id} within {:?}", self.request_timeout)));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.failure(&format!("exited while handling request {id}")));
            }
        };
        match serde_json::from_str::<ChildMessage>(&line) {
            Ok(ChildMessage::Scores { id: got, values }) => {
                if got != id {
                    return Err(self.violation("id-order", &line));
                }
                if values.len() != sequences.len() {
                    return Err(self.violation("alignment", &line));
                }
                Ok(values)
            }
            _ => Err(self.violation("malformed", &line)),
        }
    }

    /// Sends `bye`, closes stdin and reaps the child.
    pub fn shutdown(&mut self) {
        if let Some(mut stdin) = self.stdin.take() {
            let bye = serde_json::to_string(&EngineMessage::Bye).expect("serializable");
            let _ = writeln!(stdin, "{bye}").and_then(|_| stdin.flush());
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => break,
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Oracle for ExternalOracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn score_batch(&mut self, sequences: &[Sequence]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(sequences.len());
        for chunk in sequences.chunks(EXTERNAL_BATCH) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }

    fn is_external(&self) -> bool {
        true
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Outcome of one conformance check of an external oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub check: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs the conformance checks: handshake, alignment, id ordering,
/// determinism across two identical requests, and latency.
pub fn check_external(spec: &OracleSpec, base_dir: &Path, batch: &[Sequence], max_latency: Duration) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut push = |check: &'static str, passed: bool, detail: String| out.push(CheckOutcome { check, passed, detail });
    let mut oracle = match ExternalOracle::spawn(spec, base_dir) {
        Ok(o) => {
            push("handshake", true, format!("hello from {:?}", o.announced_name()));
            o
        }
        Err(e) => {
            push("handshake", false, e.to_string());
            return out;
        }
    };
    let mut replies = Vec::new();
    for _ in 0..2 {
        let start = Instant::now();
        match oracle.score_batch(batch) {
            Ok(v) => replies.push((v, start.elapsed())),
            Err(Error::ProtocolViolation { reason, line, .. }) => {
                let check = match reason.as_str() {
                    "alignment" => "alignment",
                    "id-order" => "id-order",
                    _ => "protocol",
                };
                push(check, false, format!("offending line: {line}"));
                return out;
            }
            Err(e) => {
                push("response", false, e.to_string());
                return out;
            }
        }
    }
    push("alignment", true, format!("{} values for {} sequences", replies[0].0.len(), batch.len()));
    push("id-order", true, "responses echoed request ids in order".to_string());
    let same = replies[0].0.iter().zip(&replies[1].0).all(|(a, b)| a.to_bits() == b.to_bits());
    push(
        "determinism",
        same,
        if same {
            "identical scores on repeat".to_string()
        } else {
            format!("first {:?} second {:?}", replies[0].0, replies[1].0)
        },
    );
    let worst = replies.iter().map(|r| r.1).max().unwrap_or_default();
    push("latency", worst <= max_latency, format!("slowest request {:.3} s", worst.as_secs_f64()));
    oracle.shutdown();
    out
}

/// A canned batch for conformance checks: parental-free random strings of
/// the given length.
pub fn canned_batch(len: usize) -> Vec<Sequence> {
    (0..4)
        .map(|i| {
            let residues = (0..len).map(|p| AMINO_ACIDS[(p * 7 + i * 3) % 20]).collect::<Vec<u8>>();
            Sequence::parse(std::str::from_utf8(&residues).expect("ascii")).expect("valid residues")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::seqspace::LiabilityRules;

    fn space() -> MutationSpace {
        let mut allowed = BTreeMap::new();
        allowed.insert(0, b"ACD".to_vec());
        allowed.insert(2, b"KLM".to_vec());
        MutationSpace::new(Sequence::parse("AGK").unwrap(), allowed, 2, LiabilityRules::none()).unwrap()
    }

    fn seq(s: &str) -> Sequence {
        Sequence::parse(s).unwrap()
    }

    fn lookup(direction: Direction) -> Box<dyn Oracle> {
        let table = [("AGK", 1.0), ("CGK", 3.5), ("DGK", 2.0), ("AGL", 0.5), ("AGM", 0.0)]
            .into_iter()
            .map(|(s, v)| (seq(s), v))
            .collect();
        Box::new(LookupTable::new("t", direction, table))
    }

    #[test]
    fn cache_hits_are_free() {
        let mut bank = OracleBank::new(vec![lookup(Direction::Maximize)], 3);
        let a = bank.score(&[seq("CGK")]).unwrap();
        let b = bank.score(&[seq("CGK")]).unwrap();
        assert_eq!(a, b);
        assert_eq!(bank.remaining(), 2);
        assert_eq!(bank.call_log().len(), bank.initial_budget() - bank.remaining());
    }

    #[test]
    fn budget_is_all_or_nothing() {
        let mut bank = OracleBank::new(vec![lookup(Direction::Maximize)], 1);
        let err = bank.score(&[seq("CGK"), seq("DGK")]).unwrap_err();
        assert!(matches!(err, Error::BudgetExhausted { requested: 2, remaining: 1 }));
        assert_eq!(bank.remaining(), 1);
        assert!(bank.call_log().is_empty());
    }

    #[test]
    fn minimized_scores_are_negated() {
        let mut bank = OracleBank::new(vec![lookup(Direction::Minimize)], 5);
        let s = bank.score(&[seq("CGK")]).unwrap();
        assert_eq!(s[0].0, vec![-3.5]);
        assert_eq!(bank.call_log()[0].raw, vec![3.5]);
    }

    #[test]
    fn duplicates_within_a_request_cost_once() {
        let mut bank = OracleBank::new(vec![lookup(Direction::Maximize)], 5);
        bank.score(&[seq("CGK"), seq("CGK"), seq("AGK")]).unwrap();
        assert_eq!(bank.calls(), 2);
    }

    #[test]
    fn replay_skips_oracles_but_charges_budget() {
        let mut replay = HashMap::new();
        replay.insert(seq("MMM"), vec![9.0]);
        let mut bank = OracleBank::new(vec![lookup(Direction::Maximize)], 5).with_replay(replay);
        let s = bank.score(&[seq("MMM"), seq("AGK")]).unwrap();
        assert_eq!((s[0].0[0], s[1].0[0]), (9.0, 1.0));
        assert_eq!(bank.remaining(), 3);
    }

    #[test]
    fn pwm_examples() {
        let sp = space();
        let zero: PwmWeights = vec![[Some(0.0); 20]; 3];
        assert_eq!(pwm_score(&seq("CGM"), &zero).unwrap(), 0.0);
        let parental_only = parental_weights(&sp);
        assert!(matches!(pwm_score(&seq("CGK"), &parental_only), Err(Error::MissingWeight { position: 0, residue: 'C' })));
        let mut best = parental_weights(&sp);
        for pos in sp.positions() {
            for &a in &pos.alternatives {
                best[pos.index][residue_index(a).unwrap()] = Some(-1.0);
            }
        }
        let all: Vec<Sequence> = enumerate_space(&sp, 1000).unwrap().collect();
        let scores: Vec<f64> = all.iter().map(|s| pwm_score(s, &best).unwrap()).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let argmax: Vec<&Sequence> = all.iter().zip(&scores).filter(|(_, v)| **v == top).map(|(s, _)| s).collect();
        assert_eq!(argmax, vec![sp.parental()]);
    }

    #[test]
    fn correlated_pwm_respects_correlation_bounds() {
        let sp = space();
        let a = Pwm::random("a", Direction::Maximize, &sp, 1.0, 3);
        let b = Pwm::correlated("b", Direction::Maximize, &sp, &a, 1.0, 1.0, 4).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert!(Pwm::correlated("c", Direction::Maximize, &sp, &a, 1.5, 1.0, 4).is_err());
    }

    #[test]
    fn motif_distance_counts_editable_mismatches() {
        let mut o = MotifDistance::new("m", Direction::Maximize, seq("CGL"), vec![0, 2]).unwrap();
        assert_eq!(o.score_batch(&[seq("AGK"), seq("CGL"), seq("CGK")]).unwrap(), vec![-2.0, 0.0, -1.0]);
    }

    #[test]
    fn brute_force_matches_hand_front() {
        let mut allowed = BTreeMap::new();
        allowed.insert(0, b"ACD".to_vec());
        allowed.insert(2, b"KLM".to_vec());
        let sp = MutationSpace::new(seq("AGK"), allowed, 1, LiabilityRules::none()).unwrap();
        let table: HashMap<Sequence, f64> =
            [("AGK", 1.0), ("CGK", 3.0), ("DGK", 2.0), ("AGL", 0.5), ("AGM", 0.0)].into_iter().map(|(s, v)| (seq(s), v)).collect();
        let inverse: HashMap<Sequence, f64> =
            [("AGK", 1.0), ("CGK", 0.0), ("DGK", 2.0), ("AGL", 3.0), ("AGM", 0.0)].into_iter().map(|(s, v)| (seq(s), v)).collect();
        let mut oracles: Vec<Box<dyn Oracle>> = vec![
            Box::new(LookupTable::new("a", Direction::Maximize, table)),
            Box::new(LookupTable::new("b", Direction::Maximize, inverse)),
        ];
        let truth = brute_force_front(&sp, &mut oracles, &ScoreVector(vec![-1.0, -1.0]), 1000).unwrap();
        assert_eq!(truth.count, 5);
        let mut front: Vec<String> = truth.front_sequences.iter().map(|s| s.to_string()).collect();
        front.sort();
        assert_eq!(front, vec!["AGL", "CGK", "DGK"]);
    }

    #[test]
    fn spec_validation_names_stray_keys() {
        let mut spec = OracleSpec::new("x", "pwm", Direction::Maximize);
        spec.seed = Some(1);
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("seed"), "{msg}");
        assert!(OracleSpec::new("x", "nope", Direction::Maximize).validate().is_err());
    }
}
