//! Experiment configuration, read from a TOML file.
//!
//! Relative paths resolve against the directory holding the config file.

use std::fmt;
use std::path::{Path, PathBuf};

use offeval_core::debias::OptimizerConfig;
use offeval_core::recommend::CosineVariant;
use offeval_core::simulate::SimulationConfig;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Invalid, missing or unreadable configuration; the CLI exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error<T>(message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(message.into()))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Interaction log to evaluate; defaults to `<out>/log.csv`.
    pub log: Option<PathBuf>,
    /// Output directory; defaults to `out` in the working directory. A `--out`
    /// flag replaces it verbatim.
    pub out: Option<PathBuf>,
}

/// Number of optimized weights: a count or every deviating item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PValue {
    Count(usize),
    All,
}

impl PValue {
    pub fn as_usize(self) -> usize {
        match self {
            PValue::Count(p) => p,
            PValue::All => usize::MAX,
        }
    }
}

impl fmt::Display for PValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PValue::Count(p) => write!(f, "{p}"),
            PValue::All => f.write_str("all"),
        }
    }
}

impl std::str::FromStr for PValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(PValue::All),
            _ => match s.parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("p must be a positive integer or \"all\", got `{s}`")),
                Ok(p) => Ok(PValue::Count(p)),
            },
        }
    }
}

impl Serialize for PValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Count(n) => n.to_string(),
            Raw::Word(w) => w,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// An item given either by external name or by number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemRef {
    Id(u64),
    Name(String),
}

impl fmt::Display for ItemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ItemRef::Id(i) => write!(f, "{i}"),
            ItemRef::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RecommenderKind {
    Constant {
        items: Vec<ItemRef>,
        #[serde(default)]
        exclude_profile: bool,
    },
    Cosine {
        #[serde(default)]
        variant: CosineVariant,
    },
    Naive,
    /// Constant list of the `n` items most added by campaigns in `[from, to]`.
    MostRecommended { from: f64, to: f64, n: usize },
    /// Constant list of the `n` most held items at `at` that no campaign added
    /// in `[from, to]`.
    FrequentUnrecommended {
        at: f64,
        from: f64,
        to: f64,
        n: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RecommenderEntry {
    pub name: String,
    #[serde(flatten)]
    pub kind: RecommenderKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Stochastic,
    Exhaustive,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Stochastic => "stochastic",
            Method::Exhaustive => "exhaustive",
        })
    }
}

fn default_n_draws() -> u64 {
    20_000
}

fn default_k() -> usize {
    offeval_core::protocol::DEFAULT_K
}

fn default_p_values() -> Vec<PValue> {
    vec![
        PValue::Count(5),
        PValue::Count(10),
        PValue::Count(20),
        PValue::All,
    ]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Reference date of the item marginal.
    pub t0: f64,
    pub times: Vec<f64>,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_n_draws")]
    pub n_draws: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Weighted rows per listed `p`; empty for classical rows only.
    #[serde(default = "default_p_values")]
    pub p_values: Vec<PValue>,
    pub recommenders: Vec<RecommenderEntry>,
}

/// Optimizer settings; `p` comes from `evaluation.p_values`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iters: usize,
    pub initial_step: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            max_iters: d.max_iters,
            initial_step: d.initial_step,
            armijo: d.armijo,
            backtrack: d.backtrack,
            max_backtracks: d.max_backtracks,
            rel_tol: d.rel_tol,
            grad_tol: d.grad_tol,
        }
    }
}

impl OptimizerSection {
    pub fn with_p(&self, p: PValue) -> OptimizerConfig {
        OptimizerConfig {
            p: p.as_usize(),
            max_iters: self.max_iters,
            initial_step: self.initial_step,
            armijo: self.armijo,
            backtrack: self.backtrack,
            max_backtracks: self.max_backtracks,
            rel_tol: self.rel_tol,
            grad_tol: self.grad_tol,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebiasSection {
    /// Snapshot date whose weights are optimized; defaults to the last
    /// evaluation time.
    pub t1: Option<f64>,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    pub simulation: Option<SimulationConfig>,
    pub evaluation: Option<EvaluationSection>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub debias: DebiasSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(skip)]
    out_override: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| ConfigError(format!("invalid config file {}: {e}", path.display())))?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        if let Some(sim) = &mut cfg.simulation {
            sim.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(sim) = &mut self.simulation {
            sim.seed = seed;
        }
        self
    }

    pub fn with_out(mut self, out: PathBuf) -> Self {
        self.out_override = Some(out);
        self
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if let Some(sim) = &self.simulation {
            sim.validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        if let Some(ev) = &self.evaluation {
            if ev.times.is_empty() {
                return config_error("evaluation.times must not be empty");
            }
            if ev.times.windows(2).any(|w| w[0] > w[1]) {
                return config_error("evaluation.times must be sorted");
            }
            if ev.times[0] < ev.t0 {
                return config_error("evaluation.t0 must not exceed the first evaluation time");
            }
            if ev.k == 0 {
                return config_error("evaluation.k must be positive");
            }
            if ev.method == Method::Stochastic && ev.n_draws == 0 {
                return config_error("evaluation.n_draws must be positive");
            }
            let mut names = std::collections::HashSet::new();
            for r in &ev.recommenders {
                if !names.insert(r.name.as_str()) {
                    return config_error(format!("duplicate recommender name `{}`", r.name));
                }
            }
        }
        self.optimizer
            .with_p(PValue::Count(1))
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if self.paths.log.is_some() && self.log_path() == self.out_dir() {
            return config_error("paths.log and paths.out must differ");
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        if let Some(p) = &self.out_override {
            return p.clone();
        }
        match &self.paths.out {
            Some(p) => self.resolve(p),
            None => PathBuf::from("out"),
        }
    }

    pub fn log_path(&self) -> PathBuf {
        match &self.paths.log {
            Some(p) => self.resolve(p),
            None => self.out_dir().join("log.csv"),
        }
    }

    pub fn simulation(&self) -> Result<&SimulationConfig, ConfigError> {
        self.simulation
            .as_ref()
            .ok_or_else(|| ConfigError("config has no [simulation] section".into()))
    }

    pub fn evaluation(&self) -> Result<&EvaluationSection, ConfigError> {
        self.evaluation
            .as_ref()
            .ok_or_else(|| ConfigError("config has no [evaluation] section".into()))
    }

    /// Date of the debiased snapshot.
    pub fn t1(&self) -> Result<f64, ConfigError> {
        match self.debias.t1 {
            Some(t) => Ok(t),
            None => Ok(*self.evaluation()?.times.last().expect("validated non-empty")),
        }
    }
}
