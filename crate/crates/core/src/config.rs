//! Run configuration: a strict TOML schema with dotted `key=value`
//! overrides.
//!
//! ```toml
//! method = "boat-ehvi"
//! seed = 7
//! budget = 500
//! n_init = 100
//! reference = [-3.0, -3.0]   # or "auto"
//!
//! [space]
//! parental = "ACDEFGHK"
//! max_mutations = 3
//! liabilities = ["Nx[ST]"]
//! allowed = { "0" = "AKLM", "1" = "CDEF" }
//!
//! [[oracles]]
//! name = "affinity"
//! kind = "random-pwm"
//! direction = "maximize"
//! seed = 1
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionKind;
use crate::error::{Error, Result};
use crate::evolve::GaConfig;
use crate::oracle::OracleSpec;
use crate::seqspace::{LiabilityRules, MutationSpace, Sequence};
use crate::surrogate::FitConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BoatEhvi,
    BoatQehvi,
    BoatQnehvi,
    BoatLogei,
    GaSum,
    Nsga2,
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::BoatEhvi,
        Method::BoatQehvi,
        Method::BoatQnehvi,
        Method::BoatLogei,
        Method::GaSum,
        Method::Nsga2,
        Method::Random,
    ];

    pub fn is_bo(self) -> bool {
        matches!(self, Method::BoatEhvi | Method::BoatQehvi | Method::BoatQnehvi | Method::BoatLogei)
    }

    pub fn is_batch(self) -> bool {
        matches!(self, Method::BoatQehvi | Method::BoatQnehvi)
    }

    /// Acquisition used with `k` objectives; `None` for non-BO methods.
    pub fn acquisition(self, k: usize) -> Option<AcquisitionKind> {
        match self {
            Method::BoatLogei => Some(AcquisitionKind::Logei),
            Method::BoatEhvi => Some(match k {
                1 => AcquisitionKind::Logei,
                2 => AcquisitionKind::Ehvi,
                _ => AcquisitionKind::Qehvi,
            }),
            Method::BoatQehvi => Some(AcquisitionKind::Qehvi),
            Method::BoatQnehvi => Some(AcquisitionKind::Qnehvi),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::BoatEhvi => "boat-ehvi",
            Method::BoatQehvi => "boat-qehvi",
            Method::BoatQnehvi => "boat-qnehvi",
            Method::BoatLogei => "boat-logei",
            Method::GaSum => "ga-sum",
            Method::Nsga2 => "nsga2",
            Method::Random => "random",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Onehot,
    Blosum,
    Bag,
    ExternalFile,
}

/// Fixed reference point or `"auto"` (initial minimum minus 10%).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSpec {
    Auto(String),
    Fixed(Vec<f64>),
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::Auto("auto".to_string())
    }
}

impl ReferenceSpec {
    pub fn fixed(&self) -> Option<&[f64]> {
        match self {
            ReferenceSpec::Fixed(v) => Some(v),
            ReferenceSpec::Auto(_) => None,
        }
    }
}

/// Mutation space as written in a configuration or space file. Positions
/// are 0-based; `liabilities` defaults to the N-glycosylation motif.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub parental: String,
    pub max_mutations: usize,
    pub allowed: BTreeMap<String, String>,
    #[serde(default = "default_liabilities")]
    pub liabilities: Vec<String>,
}

fn default_liabilities() -> Vec<String> {
    LiabilityRules::glycosylation().specs()
}

impl SpaceConfig {
    pub fn build(&self) -> Result<MutationSpace> {
        let parental = Sequence::parse(&self.parental)?;
        let mut allowed = BTreeMap::new();
        for (key, letters) in &self.allowed {
            let pos: usize = key
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("space.allowed: position key {key:?} is not an integer")))?;
            allowed.insert(pos, letters.trim().as_bytes().to_vec());
        }
        MutationSpace::new(parental, allowed, self.max_mutations, LiabilityRules::parse(&self.liabilities)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read space file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("space file {}: {}", path.display(), e.message())))
    }

    pub fn from_space(space: &MutationSpace) -> Self {
        SpaceConfig {
            parental: space.parental().to_string(),
            max_mutations: space.max_mutations(),
            allowed: space
                .positions()
                .iter()
                .map(|p| (p.index.to_string(), String::from_utf8_lossy(&p.allowed).into_owned()))
                .collect(),
            liabilities: space.liabilities().specs(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tournament_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossover_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_crossover_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_perturb_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elitism: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_evaluations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub mc_samples: usize,
    /// Largest number of observed points the noisy variant conditions on.
    pub nehvi_baseline: usize,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        AcquisitionSection { mc_samples: 128, nehvi_baseline: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Method names, optionally with a batch size: `boat-qehvi:q=8`.
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub ground_truth: bool,
    pub threads: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection { methods: Vec::new(), seeds: vec![0], ground_truth: false, threads: 1 }
    }
}

/// One benchmark arm: a method and an optional batch-size override.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodArm {
    pub label: String,
    pub method: Method,
    pub q: Option<usize>,
}

impl FromStr for MethodArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (s, None),
        };
        let method: Method = name.trim().parse()?;
        let q = match rest {
            None => None,
            Some(r) => {
                let v = r
                    .trim()
                    .strip_prefix("q=")
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| Error::config(format!("benchmark method {s:?}: expected `name:q=<int>`")))?;
                Some(v)
            }
        };
        Ok(MethodArm { label: s.trim().to_string(), method, q })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_init_max_mut")]
    pub init_max_mut: usize,
    #[serde(default = "default_true")]
    pub count_init_in_budget: bool,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
    #[serde(default = "default_ngram")]
    pub ngram: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_file: Option<PathBuf>,
    #[serde(default)]
    pub reference: ReferenceSpec,
    /// Seed-pool weight of current front members relative to other
    /// evaluated sequences.
    #[serde(default = "default_front_weight")]
    pub front_weight: f64,
    #[serde(default = "default_window")]
    pub entropy_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceConfig>,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSection>,
    pub oracles: Vec<OracleSpec>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_budget() -> usize {
    1000
}
fn default_n_init() -> usize {
    100
}
fn default_init_max_mut() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_encoder() -> EncoderKind {
    EncoderKind::Onehot
}
fn default_ngram() -> usize {
    5
}
fn default_front_weight() -> f64 {
    3.0
}
fn default_window() -> usize {
    100
}

/// Sets `path` (dot separated) in a TOML table, creating tables on the way.
fn set_dotted(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override key {path:?} is malformed")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {path:?}: {part:?} is not a table")))?;
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("override {path:?} does not address a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is read as a TOML literal when possible
/// and as a bare string otherwise.
pub fn parse_override(text: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {text:?} is not of the form key=value")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

impl RunConfig {
    /// Parses configuration text, applying overrides before validation.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut root: toml::Value = toml::from_str::<toml::Table>(text)
            .map(toml::Value::Table)
            .map_err(|e| Error::config(e.message().to_string()))?;
        for o in overrides {
            let (key, value) = parse_override(o)?;
            set_dotted(&mut root, &key, value)?;
        }
        let mut cfg: RunConfig = root.try_into().map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, overrides, &base)
    }

    /// Configuration text that reproduces this run.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn space_config(&self) -> Result<SpaceConfig> {
        match (&self.space, &self.space_file) {
            (Some(s), None) => Ok(s.clone()),
            (None, Some(f)) => SpaceConfig::load(&self.resolve_path(f)),
            _ => Err(Error::config("set exactly one of `space` or `space_file`")),
        }
    }

    pub fn build_space(&self) -> Result<MutationSpace> {
        self.space_config()?.build()
    }

    /// Batch size actually used: 1 for every method but the batch ones.
    pub fn effective_q(&self) -> usize {
        if self.method.is_batch() {
            self.q.unwrap_or(4)
        } else {
            1
        }
    }

    /// GA settings with the per-method default mutation probability
    /// (0.1 for batch EHVI, 0.15 otherwise).
    pub fn ga_config(&self) -> GaConfig {
        let d = GaConfig::default();
        let g = &self.ga;
        let mutation_default = if self.method == Method::BoatQehvi { 0.1 } else { d.mutation_prob };
        GaConfig {
            population_size: g.population_size.unwrap_or(d.population_size),
            generations: g.generations.unwrap_or(d.generations),
            tournament_size: g.tournament_size.unwrap_or(d.tournament_size),
            crossover_rate: g.crossover_rate.unwrap_or(d.crossover_rate),
            mutation_prob: g.mutation_prob.unwrap_or(mutation_default),
            batch_crossover_rate: g.batch_crossover_rate.unwrap_or(d.batch_crossover_rate),
            init_perturb_prob: g.init_perturb_prob.unwrap_or(d.init_perturb_prob),
            elitism: g.elitism.unwrap_or(d.elitism),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        let d = FitConfig::default();
        let s = &self.surrogate;
        FitConfig {
            signal_variance: s.signal_variance,
            noise_variance: s.noise_variance,
            jitter: s.jitter.unwrap_or(d.jitter),
            max_evaluations: s.max_evaluations.unwrap_or(d.max_evaluations),
            ..d
        }
    }

    /// Total oracle calls the bank may spend.
    pub fn bank_budget(&self) -> usize {
        if self.count_init_in_budget {
            self.budget
        } else {
            self.budget + self.n_init
        }
    }

    pub fn benchmark_arms(&self) -> Result<Vec<MethodArm>> {
        let section = self.benchmark.clone().unwrap_or_default();
        if section.methods.is_empty() {
            return Ok(vec![MethodArm { label: self.method.to_string(), method: self.method, q: None }]);
        }
        section.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.oracles.len();
        if k == 0 {
            return Err(Error::config("at least one oracle is required"));
        }
        if k > 4 {
            return Err(Error::config(format!("at most 4 objectives are supported, got {k}")));
        }
        let mut names = HashSet::new();
        for o in &self.oracles {
            o.validate()?;
            if !names.insert(&o.name) {
                return Err(Error::config(format!("duplicate oracle name {:?}", o.name)));
            }
        }
        if self.method == Method::BoatLogei && k != 1 {
            return Err(Error::config("boat-logei needs exactly one objective"));
        }
        if self.count_init_in_budget && self.budget > 0 && self.budget < self.n_init {
            return Err(Error::config(format!("budget {} is smaller than n_init {}", self.budget, self.n_init)));
        }
        if self.n_init == 0 {
            return Err(Error::config("n_init must be at least 1"));
        }
        if self.method.is_bo() && self.n_init < 2 {
            return Err(Error::config("Bayesian optimization needs n_init of at least 2"));
        }
        if self.init_max_mut == 0 && self.n_init > 1 {
            return Err(Error::config("init_max_mut must be at least 1"));
        }
        if let Some(q) = self.q {
            if q == 0 {
                return Err(Error::config("q must be at least 1"));
            }
        }
        if let ReferenceSpec::Auto(s) = &self.reference {
            if s != "auto" {
                return Err(Error::config(format!("reference must be \"auto\" or a list of numbers, got {s:?}")));
            }
        }
        if let Some(r) = self.reference.fixed() {
            if r.len() != k {
                return Err(Error::config(format!("reference has {} entries for {k} objectives", r.len())));
            }
        }
        if self.encoder == EncoderKind::ExternalFile && self.embeddings_file.is_none() {
            return Err(Error::config("encoder external-file needs `embeddings_file`"));
        }
        if self.ngram == 0 {
            return Err(Error::config("ngram must be at least 1"));
        }
        if !(self.front_weight > 0.0) {
            return Err(Error::config("front_weight must be positive"));
        }
        if self.entropy_window == 0 {
            return Err(Error::config("entropy_window must be at least 1"));
        }
        if self.acquisition.mc_samples == 0 {
            return Err(Error::config("acquisition.mc_samples must be at least 1"));
        }
        if self.space.is_some() == self.space_file.is_some() {
            return Err(Error::config("set exactly one of `space` or `space_file`"));
        }
        let ga = self.ga_config();
        ga.validate()?;
        if self.method == Method::Nsga2 && self.budget > 0 && self.budget < 2 * ga.population_size {
            return Err(Error::config("nsga2 needs a budget of at least twice the population size"));
        }
        if self.method == Method::GaSum && self.budget > 0 && self.budget < ga.population_size {
            return Err(Error::config("ga-sum needs a budget of at least the population size"));
        }
        self.fit_config();
        if let Some(b) = &self.benchmark {
            for m in &b.methods {
                m.parse::<MethodArm>()?;
            }
            if b.seeds.is_empty() {
                return Err(Error::config("benchmark.seeds must not be empty"));
            }
        }
        Ok(())
    }
}
