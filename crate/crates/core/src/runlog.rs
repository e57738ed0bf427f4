//! The append-only record of oracle calls that every report is derived from.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::ScoreVector;
use crate::seqspace::Sequence;
use crate::surrogate::GpHyperparams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Bo,
    Baseline,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Init => "init",
            Phase::Bo => "bo",
            Phase::Baseline => "baseline",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Phase::Init),
            "bo" => Ok(Phase::Bo),
            "baseline" => Ok(Phase::Baseline),
            other => Err(Error::config(format!("unknown phase {other:?}"))),
        }
    }
}

/// One oracle call: a novel sequence scored on every objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// 1-based position in the call order.
    pub call_index: usize,
    pub sequence: Sequence,
    pub phase: Phase,
    /// Optimization step that proposed the sequence; 0 for initialization.
    pub iteration: usize,
    /// Scores in the maximization convention.
    pub scores: ScoreVector,
}

/// Surrogate and acquisition state of one Bayesian-optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub n_train: usize,
    pub lml: Vec<f64>,
    pub hyperparams: Vec<GpHyperparams>,
    pub acquisition_value: f64,
    pub ga_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub evaluations: Vec<Evaluation>,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub seed: u64,
    pub objective_names: Vec<String>,
    pub config_snapshot: String,
    /// Hypervolume reference in the maximization convention, once resolved.
    pub reference: Option<ScoreVector>,
    /// Set when the run stopped early; the message of the error.
    pub aborted: Option<String>,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.evaluations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evaluations.is_empty()
    }

    pub fn sequences(&self) -> Vec<Sequence> {
        self.evaluations.iter().map(|e| e.sequence.clone()).collect()
    }

    pub fn scores(&self) -> Vec<ScoreVector> {
        self.evaluations.iter().map(|e| e.scores.clone()).collect()
    }

    pub fn n_objectives(&self) -> usize {
        self.evaluations.first().map_or(self.objective_names.len(), |e| e.scores.len())
    }

    /// Number of distinct optimization steps that scored at least one sequence.
    pub fn iterations(&self, phase: Phase) -> usize {
        let mut steps: Vec<usize> =
            self.evaluations.iter().filter(|e| e.phase == phase).map(|e| e.iteration).collect();
        steps.dedup();
        steps.len()
    }
}
