//! Run configuration: a JSON file whose keys can be overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use fsml_core::corpus::SynthSpec;
use fsml_core::evaluation::{CrossValConfig, Strategy};
use fsml_core::thresholding::ScorerKind;
use fsml_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    MetaOnly,
    Calibrated,
    Fixed,
}

impl From<ModeArg> for Strategy {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::MetaOnly => Strategy::MetaOnly,
            ModeArg::Calibrated => Strategy::Calibrated,
            ModeArg::Fixed => Strategy::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScorerArg {
    Prototype,
    Matching,
}

impl From<ScorerArg> for ScorerKind {
    fn from(s: ScorerArg) -> Self {
        match s {
            ScorerArg::Prototype => ScorerKind::Prototype,
            ScorerArg::Matching => ScorerKind::Matching,
        }
    }
}

/// Every setting a command may read. Unknown keys in a config file are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub epochs: usize,
    pub kernel_epochs: usize,
    pub batch_size: usize,
    pub lr_proj: f64,
    pub lr_kernel: f64,
    pub r_grid_step: f64,
    pub beta: f64,
    pub beta_sweep: bool,
    pub alpha: f64,
    pub mlp_layers: usize,
    pub mlp_hidden: usize,
    pub k_shot: usize,
    pub episodes_per_domain: usize,
    pub query_size: usize,
    pub eval_episodes: usize,
    pub eval_query_size: usize,
    pub seeds: Vec<u64>,
    pub mode: ModeArg,
    pub scorer: ScorerArg,
    /// Threshold for `--mode fixed` on a single split.
    pub threshold: Option<f64>,
    pub domains: usize,
    pub n_labels: usize,
    pub pool_size: usize,
    pub p_multi: f64,
    pub dim: usize,
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    /// Directory with `conjunctions.txt`, `verbs.txt` and `interrogatives.txt`; built-in lists when absent.
    pub lexicons: Option<PathBuf>,
    pub model: PathBuf,
    pub episodes: PathBuf,
    /// Main output file of the command; each command has its own default.
    pub out: Option<PathBuf>,
    /// Target domain name for train, eval and predict.
    pub target: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SynthSpec::default();
        Self {
            seed: t.seed,
            epochs: t.epochs,
            kernel_epochs: t.kernel_epochs,
            batch_size: t.batch_size,
            lr_proj: t.lr_proj,
            lr_kernel: t.lr_kernel,
            r_grid_step: t.r_grid_step,
            beta: t.beta,
            beta_sweep: t.beta_sweep,
            alpha: t.alpha,
            mlp_layers: t.mlp_layers,
            mlp_hidden: t.mlp_hidden,
            k_shot: t.k_shot,
            episodes_per_domain: t.episodes_per_domain,
            query_size: t.query_size,
            eval_episodes: 50,
            eval_query_size: 16,
            seeds: vec![1, 2, 3, 4, 5],
            mode: ModeArg::Calibrated,
            scorer: ScorerArg::Prototype,
            threshold: None,
            domains: 3,
            n_labels: s.n_labels,
            pool_size: s.pool_size,
            p_multi: s.p_multi,
            dim: 64,
            corpus: "corpus".into(),
            embeddings: "embeddings.fsml".into(),
            lexicons: None,
            model: "model.json".into(),
            episodes: "episodes.json".into(),
            out: None,
            target: None,
        }
    }
}

/// Flags mirroring the config keys; any flag given wins over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub kernel_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr_proj: Option<f64>,
    #[arg(long, global = true)]
    pub lr_kernel: Option<f64>,
    #[arg(long, global = true)]
    pub r_grid_step: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Train with beta 0.1, 0.5 and 0.9 and keep the best.
    #[arg(long, global = true)]
    pub beta_sweep: bool,
    /// Disable anchoring (beta = 0).
    #[arg(long, global = true, conflicts_with = "beta")]
    pub no_alr: bool,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub mlp_layers: Option<usize>,
    #[arg(long, global = true)]
    pub mlp_hidden: Option<usize>,
    #[arg(long, global = true)]
    pub k_shot: Option<usize>,
    #[arg(long, global = true)]
    pub episodes_per_domain: Option<usize>,
    #[arg(long, global = true)]
    pub query_size: Option<usize>,
    #[arg(long, global = true)]
    pub eval_episodes: Option<usize>,
    #[arg(long, global = true)]
    pub eval_query_size: Option<usize>,
    /// Comma-separated seed list for cross-validation and ablation.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true)]
    pub scorer: Option<ScorerArg>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub domains: Option<usize>,
    #[arg(long, global = true)]
    pub n_labels: Option<usize>,
    #[arg(long, global = true)]
    pub pool_size: Option<usize>,
    #[arg(long, global = true)]
    pub p_multi: Option<f64>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lexicons: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub episodes: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub target: Option<String>,
}

macro_rules! take {
    ($cfg:ident, $o:ident, $($f:ident),*) => {
        $( if let Some(v) = $o.$f.clone() { $cfg.$f = v; } )*
    };
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        take!(
            self, o, seed, epochs, kernel_epochs, batch_size, lr_proj, lr_kernel, r_grid_step, beta, alpha, mlp_layers,
            mlp_hidden, k_shot, episodes_per_domain, query_size, eval_episodes, eval_query_size, seeds, mode, scorer,
            domains, n_labels, pool_size, p_multi, dim, corpus, embeddings, model, episodes
        );
        if o.beta_sweep {
            self.beta_sweep = true;
        }
        if o.no_alr {
            self.beta = 0.0;
            self.beta_sweep = false;
        }
        if o.threshold.is_some() {
            self.threshold = o.threshold;
        }
        if o.lexicons.is_some() {
            self.lexicons = o.lexicons.clone();
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if o.target.is_some() {
            self.target = o.target.clone();
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            kernel_epochs: self.kernel_epochs,
            batch_size: self.batch_size,
            lr_proj: self.lr_proj,
            lr_kernel: self.lr_kernel,
            r_grid_step: self.r_grid_step,
            seed: self.seed,
            beta: self.beta,
            beta_sweep: self.beta_sweep,
            alpha: self.alpha,
            mlp_layers: self.mlp_layers,
            mlp_hidden: self.mlp_hidden,
            k_shot: self.k_shot,
            episodes_per_domain: self.episodes_per_domain,
            query_size: self.query_size,
        }
    }

    pub fn cross_val(&self) -> CrossValConfig {
        CrossValConfig {
            train: self.train(),
            seeds: self.seeds.clone(),
            eval_episodes: self.eval_episodes,
            eval_query_size: self.eval_query_size,
            strategy: self.mode.into(),
            scorer: self.scorer.into(),
        }
    }

    pub fn synth_spec(&self, name: String) -> SynthSpec {
        SynthSpec {
            name,
            n_labels: self.n_labels,
            pool_size: self.pool_size,
            p_multi: self.p_multi,
            ..SynthSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train().validate().map_err(|e| CliError::Config(e.to_string()))?;
        let bad = |m: String| Err(CliError::Config(m));
        if self.eval_episodes == 0 || self.eval_query_size == 0 {
            return bad("eval_episodes and eval_query_size must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.dim < 2 {
            return bad(format!("dim {} must be at least 2", self.dim));
        }
        if self.domains == 0 {
            return bad("domains must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_multi) {
            return bad(format!("p_multi {} outside [0, 1]", self.p_multi));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return bad("threshold must be finite".into());
            }
        }
        Ok(())
    }
}
