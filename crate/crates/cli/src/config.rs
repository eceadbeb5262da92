use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use localcal::bundle::FitOptions;
use localcal::calib::TrainConfig;
use localcal::detector::{EnsembleRule, ScorerKind};
use localcal::dmap::BinPartition;
use localcal::features::{DEFAULT_CLUSTERS, DEFAULT_PCA_DIM, DEFAULT_TOP_K};
use localcal::synth::SyntheticWorld;

use crate::error::{CliError, CliResult};

/// Every knob of a run, read from one TOML file. Command-line flags
/// override the matching keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub pca_dim: usize,
    pub top_k: usize,
    pub partition: Vec<f64>,
    pub cap_tokens: usize,
    pub clusters: usize,
    pub scorers: Vec<String>,
    pub generators: Vec<String>,
    pub ensemble: EnsembleRule,
    /// Optional clip on each token's log-ratio; off by default.
    pub token_cap: Option<f64>,

    pub bootstrap_iters: usize,
    pub level: f64,
    pub zscore_bins: usize,
    pub seed: u64,

    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub hidden: usize,

    pub world: Option<SyntheticWorld>,
    pub synth_texts: usize,
    pub train_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            corpus: None,
            bundle: None,
            scores: None,
            out: None,
            pca_dim: DEFAULT_PCA_DIM,
            top_k: DEFAULT_TOP_K,
            partition: BinPartition::default().edges().to_vec(),
            cap_tokens: 200,
            clusters: DEFAULT_CLUSTERS,
            scorers: ScorerKind::ALL.iter().map(|s| s.id().to_string()).collect(),
            generators: Vec::new(),
            ensemble: EnsembleRule::Max,
            token_cap: None,
            bootstrap_iters: 10_000,
            level: 0.95,
            zscore_bins: 60,
            seed: 0,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            dropout: t.dropout,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            hidden: t.hidden,
            world: None,
            synth_texts: 2000,
            train_fraction: 0.25,
        }
    }
}

/// Values given on the command line; `None` leaves the config untouched.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub scorers: Vec<String>,
    pub generators: Vec<String>,
    pub cap_tokens: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) -> CliResult<()> {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { self.$f = Some(v); })* };
        }
        set!(corpus, bundle, scores, out);
        if !o.scorers.is_empty() {
            self.scorers = o.scorers;
        }
        if !o.generators.is_empty() {
            self.generators = o.generators;
        }
        if let Some(c) = o.cap_tokens {
            self.cap_tokens = c;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self.validate()
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.pca_dim == 0 || self.cap_tokens == 0 || self.clusters == 0 {
            return bad("pca_dim, cap_tokens and clusters must be positive");
        }
        if self.bootstrap_iters == 0 || self.zscore_bins == 0 || self.synth_texts == 0 {
            return bad("bootstrap_iters, zscore_bins and synth_texts must be positive");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if let Some(c) = self.token_cap {
            if !(c > 0.0) {
                return bad("token_cap must be positive");
            }
        }
        self.partition()?;
        self.scorer_kinds()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn partition(&self) -> CliResult<BinPartition> {
        Ok(BinPartition::new(self.partition.clone())?)
    }

    pub fn scorer_kinds(&self) -> CliResult<Vec<ScorerKind>> {
        if self.scorers.is_empty() {
            return Err(CliError::Config("no scorers selected".into()));
        }
        let mut out = Vec::new();
        for s in &self.scorers {
            let k: ScorerKind = s.parse()?;
            if !out.contains(&k) {
                out.push(k);
            }
        }
        Ok(out)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            dropout: self.dropout,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            hidden: self.hidden,
            seed: self.seed,
        }
    }

    pub fn fit_options(&self) -> CliResult<FitOptions> {
        Ok(FitOptions {
            pca_dim: self.pca_dim,
            top_k: self.top_k,
            partition: self.partition()?,
            train: self.train_config(),
            scorers: self.scorer_kinds()?,
            cap_tokens: Some(self.cap_tokens),
        })
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> CliResult<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("no {name} path given (flag --{name} or key '{name}')")))
    }
}
