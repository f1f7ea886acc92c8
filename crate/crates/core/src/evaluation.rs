//! Episode-level metrics, split evaluation, cross-validation and ablations.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::embeddings::EmbeddingTable;
use crate::episodes::{build_split, Episode};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::prepared::PreparedEpisode;
use crate::rng::rng_from;
use crate::thresholding::{Lexicons, Mode, ScorerKind};
use crate::training::{train_on_domains, TrainConfig};

/// Pooled true positive, false positive and false negative counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn same_len<T>(preds: &[T], golds: &[T]) -> Result<()> {
    if preds.len() == golds.len() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "{} predictions for {} gold label sets",
            preds.len(),
            golds.len()
        )))
    }
}

/// Counts over all query-label pairs. Label sets are assumed duplicate-free.
pub fn confusion<T: PartialEq>(preds: &[Vec<T>], golds: &[Vec<T>]) -> Result<Confusion> {
    same_len(preds, golds)?;
    let mut c = Confusion::default();
    for (p, g) in preds.iter().zip(golds) {
        let tp = p.iter().filter(|x| g.contains(x)).count();
        c.tp += tp;
        c.fp += p.len() - tp;
        c.fn_ += g.len() - tp;
    }
    Ok(c)
}

/// `2 TP / (2 TP + FP + FN)`, or 1 when all three counts are zero.
pub fn micro_f1<T: PartialEq>(preds: &[Vec<T>], golds: &[Vec<T>]) -> Result<f64> {
    Ok(confusion(preds, golds)?.f1())
}

/// Fraction of queries whose predicted set has the gold size.
pub fn label_count_accuracy<T>(preds: &[Vec<T>], golds: &[Vec<T>]) -> Result<f64> {
    same_len(preds, golds)?;
    if preds.is_empty() {
        return Ok(1.0);
    }
    Ok(correct_counts(preds, golds) as f64 / preds.len() as f64)
}

fn correct_counts<T>(preds: &[Vec<T>], golds: &[Vec<T>]) -> usize {
    preds.iter().zip(golds).filter(|(p, g)| p.len() == g.len()).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain: String,
    pub mode: String,
    /// The shared threshold in fixed mode.
    pub fixed_threshold: Option<f64>,
    pub scorer: ScorerKind,
    pub beta: f64,
    pub episode_f1: Vec<f64>,
    /// Queries per episode whose predicted label count was right.
    pub episode_count_correct: Vec<usize>,
    pub n_queries: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub label_count_accuracy: f64,
}

impl EvalReport {
    /// One line per episode: `episode_id`, `f1`, `n_correct_count`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("episode_id\tf1\tn_correct_count\n");
        for (i, (f, c)) in self.episode_f1.iter().zip(&self.episode_count_correct).enumerate() {
            writeln!(out, "{i}\t{f}\t{c}").expect("writing to a String cannot fail");
        }
        out
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluates already prepared episodes. Episodes are scored in parallel and
/// reduced in episode order.
pub fn evaluate_prepared(episodes: &[PreparedEpisode], model: &ModelParams, mode: Mode, scorer: ScorerKind) -> Result<EvalReport> {
    if episodes.is_empty() {
        return Err(Error::InvalidParam("no episodes to evaluate".into()));
    }
    let per_episode = episodes
        .par_iter()
        .map(|ep| {
            let scores = ep.scores(model, scorer)?;
            let preds: Vec<Vec<usize>> = ep
                .decide_all(model, &scores, mode)?
                .into_iter()
                .map(|d| d.selected)
                .collect();
            let golds = ep.golds();
            if golds.iter().any(Vec::is_empty) {
                return Err(Error::InvalidParam(format!(
                    "an evaluation query of domain '{}' has no gold labels",
                    ep.domain_name
                )));
            }
            Ok((micro_f1(&preds, &golds)?, correct_counts(&preds, &golds), preds.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let episode_f1: Vec<f64> = per_episode.iter().map(|e| e.0).collect();
    let episode_count_correct: Vec<usize> = per_episode.iter().map(|e| e.1).collect();
    let n_queries: usize = per_episode.iter().map(|e| e.2).sum();
    let (mean_f1, std_f1) = mean_std(&episode_f1);
    let correct: usize = episode_count_correct.iter().sum();
    Ok(EvalReport {
        domain: episodes[0].domain_name.clone(),
        mode: mode.name().to_string(),
        fixed_threshold: match mode {
            Mode::Fixed(t) => Some(t),
            _ => None,
        },
        scorer,
        beta: model.beta,
        episode_f1,
        episode_count_correct,
        n_queries,
        mean_f1,
        std_f1,
        label_count_accuracy: if n_queries == 0 { 1.0 } else { correct as f64 / n_queries as f64 },
    })
}

pub fn prepare_all(episodes: &[Episode], domain: &Domain, table: &EmbeddingTable, lex: &Lexicons) -> Result<Vec<PreparedEpisode>> {
    episodes
        .par_iter()
        .map(|ep| PreparedEpisode::new(ep, domain, table, lex))
        .collect()
}

pub fn evaluate_split(
    episodes: &[Episode],
    domain: &Domain,
    table: &EmbeddingTable,
    lex: &Lexicons,
    model: &ModelParams,
    mode: Mode,
    scorer: ScorerKind,
) -> Result<EvalReport> {
    evaluate_prepared(&prepare_all(episodes, domain, table, lex)?, model, mode, scorer)
}

/// Candidate fixed thresholds: `min + k * 0.05 * (max - min)` for `k = 0..=20`,
/// over every score seen on the episodes.
pub fn fixed_threshold_candidates(episodes: &[PreparedEpisode], model: &ModelParams, scorer: ScorerKind) -> Result<Vec<f64>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for ep in episodes {
        for s in ep.scores(model, scorer)?.iter().flatten() {
            lo = lo.min(*s);
            hi = hi.max(*s);
        }
    }
    if !lo.is_finite() {
        return Err(Error::InvalidParam("no scores to tune a threshold on".into()));
    }
    Ok((0..=20).map(|k| lo + k as f64 * 0.05 * (hi - lo)).collect())
}

/// Picks the fixed threshold with the best mean micro-F1 on `dev`; ties go to the smaller threshold.
pub fn tune_fixed_threshold(dev: &[PreparedEpisode], model: &ModelParams, scorer: ScorerKind) -> Result<(f64, f64)> {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for t in fixed_threshold_candidates(dev, model, scorer)? {
        let f = evaluate_prepared(dev, model, Mode::Fixed(t), scorer)?.mean_f1;
        if f > best.1 {
            best = (t, f);
        }
    }
    Ok(best)
}

/// How the final threshold is chosen during cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MetaOnly,
    Calibrated,
    /// One threshold tuned on the development domain.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub eval_query_size: usize,
    pub strategy: Strategy,
    pub scorer: ScorerKind,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            eval_episodes: 50,
            eval_query_size: 16,
            strategy: Strategy::Calibrated,
            scorer: ScorerKind::Prototype,
        }
    }
}

/// One target / development / source assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rotation {
    pub target: usize,
    pub dev: usize,
    pub sources: Vec<usize>,
}

/// Target `i`, development `i + 1` (cyclically), sources the rest.
pub fn rotations(n_domains: usize) -> Result<Vec<Rotation>> {
    if n_domains < 3 {
        return Err(Error::InvalidParam(format!(
            "cross-validation needs at least 3 domains, got {n_domains}"
        )));
    }
    Ok((0..n_domains)
        .map(|t| {
            let dev = (t + 1) % n_domains;
            Rotation {
                target: t,
                dev,
                sources: (0..n_domains).filter(|&i| i != t && i != dev).collect(),
            }
        })
        .collect())
}

fn eval_episodes(domain: &Domain, cfg: &CrossValConfig, seed: u64, role: &str) -> Result<Vec<Episode>> {
    let mut rng = rng_from(seed, &format!("{role}/{}/k{}", domain.name, cfg.train.k_shot));
    build_split(domain, cfg.train.k_shot, cfg.eval_episodes, cfg.eval_query_size, &mut rng)
}

struct RotationData {
    target: Vec<PreparedEpisode>,
    dev: Vec<PreparedEpisode>,
}

fn rotation_data(domains: &[Domain], rot: &Rotation, table: &EmbeddingTable, lex: &Lexicons, cfg: &CrossValConfig, seed: u64) -> Result<RotationData> {
    let t = &domains[rot.target];
    let d = &domains[rot.dev];
    Ok(RotationData {
        target: prepare_all(&eval_episodes(t, cfg, seed, "eval")?, t, table, lex)?,
        dev: prepare_all(&eval_episodes(d, cfg, seed, "dev")?, d, table, lex)?,
    })
}

fn train_rotation(
    domains: &[Domain],
    rot: &Rotation,
    data: &RotationData,
    table: &EmbeddingTable,
    lex: &Lexicons,
    train: &TrainConfig,
) -> Result<ModelParams> {
    let sources: Vec<&Domain> = rot.sources.iter().map(|&i| &domains[i]).collect();
    Ok(train_on_domains(&sources, Some(&data.dev), table, lex, train)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    pub seed: u64,
    pub target: String,
    pub dev: String,
    pub sources: Vec<String>,
    pub r: f64,
    pub lambda: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMean {
    pub seed: u64,
    pub mean_f1: f64,
    pub label_count_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMean {
    pub target: String,
    pub mean_f1: f64,
    pub label_count_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub strategy: Strategy,
    pub scorer: ScorerKind,
    pub k_shot: usize,
    pub rotations: Vec<RotationReport>,
    pub per_seed: Vec<SeedMean>,
    pub per_target: Vec<TargetMean>,
    /// Mean of the per-seed means.
    pub mean_f1: f64,
    pub label_count_accuracy: f64,
}

fn mode_for(strategy: Strategy, dev: &[PreparedEpisode], model: &ModelParams, scorer: ScorerKind) -> Result<Mode> {
    Ok(match strategy {
        Strategy::MetaOnly => Mode::MetaOnly,
        Strategy::Calibrated => Mode::Calibrated,
        Strategy::Fixed => Mode::Fixed(tune_fixed_threshold(dev, model, scorer)?.0),
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    mean_std(&v).0
}

/// Leave-one-domain-out evaluation, repeated for every seed.
pub fn cross_validate(domains: &[Domain], table: &EmbeddingTable, lex: &Lexicons, cfg: &CrossValConfig) -> Result<CrossValReport> {
    let rots = rotations(domains.len())?;
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidParam("at least one seed is required".into()));
    }
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let train = TrainConfig { seed, ..cfg.train.clone() };
        for rot in &rots {
            let data = rotation_data(domains, rot, table, lex, cfg, seed)?;
            let model = train_rotation(domains, rot, &data, table, lex, &train)?;
            let mode = mode_for(cfg.strategy, &data.dev, &model, cfg.scorer)?;
            out.push(RotationReport {
                seed,
                target: domains[rot.target].name.clone(),
                dev: domains[rot.dev].name.clone(),
                sources: rot.sources.iter().map(|&i| domains[i].name.clone()).collect(),
                r: model.threshold.r,
                lambda: model.threshold.lambda(),
                report: evaluate_prepared(&data.target, &model, mode, cfg.scorer)?,
            });
        }
    }
    let per_seed: Vec<SeedMean> = cfg
        .seeds
        .iter()
        .map(|&s| {
            let rs = || out.iter().filter(move |r| r.seed == s);
            SeedMean {
                seed: s,
                mean_f1: mean(rs().map(|r| r.report.mean_f1)),
                label_count_accuracy: mean(rs().map(|r| r.report.label_count_accuracy)),
            }
        })
        .collect();
    let per_target = domains
        .iter()
        .map(|d| {
            let rs = || out.iter().filter(move |r| r.target == d.name);
            TargetMean {
                target: d.name.clone(),
                mean_f1: mean(rs().map(|r| r.report.mean_f1)),
                label_count_accuracy: mean(rs().map(|r| r.report.label_count_accuracy)),
            }
        })
        .collect();
    Ok(CrossValReport {
        strategy: cfg.strategy,
        scorer: cfg.scorer,
        k_shot: cfg.train.k_shot,
        mean_f1: mean(per_seed.iter().map(|s| s.mean_f1)),
        label_count_accuracy: mean(per_seed.iter().map(|s| s.label_count_accuracy)),
        rotations: out,
        per_seed,
        per_target,
    })
}

/// Rows of the ablation table.
pub const ABLATION_ROWS: [&str; 4] = ["MPN", "MMN", "MPN+ALR", "Ours"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub mode: String,
    pub mean_f1: f64,
    pub label_count_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTarget {
    pub target: String,
    pub rows: Vec<AblationRow>,
    /// The anchored model under the meta threshold alone.
    pub meta_only: AblationRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub k_shot: usize,
    pub beta: f64,
    pub seeds: Vec<u64>,
    pub targets: Vec<AblationTarget>,
    /// Rows averaged over targets.
    pub summary: Vec<AblationRow>,
    pub meta_only: AblationRow,
}

impl AblationReport {
    pub fn row(&self, model: &str) -> Option<&AblationRow> {
        self.summary.iter().find(|r| r.model == model)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("target\tmodel\tmode\tmean_f1\tlabel_count_accuracy\n");
        let all = self
            .targets
            .iter()
            .flat_map(|t| t.rows.iter().chain([&t.meta_only]).map(move |r| (t.target.as_str(), r)))
            .chain(self.summary.iter().chain([&self.meta_only]).map(|r| ("mean", r)));
        for (t, r) in all {
            writeln!(out, "{t}\t{}\t{}\t{}\t{}", r.model, r.mode, r.mean_f1, r.label_count_accuracy)
                .expect("writing to a String cannot fail");
        }
        out
    }
}

fn average_rows(rows: &[&AblationRow]) -> AblationRow {
    AblationRow {
        model: rows[0].model.clone(),
        mode: rows[0].mode.clone(),
        mean_f1: mean(rows.iter().map(|r| r.mean_f1)),
        label_count_accuracy: mean(rows.iter().map(|r| r.label_count_accuracy)),
    }
}

/// Trains a plain (`beta = 0`) and an anchored model per rotation and seed and
/// scores the four ablation rows on every target domain.
///
/// The matching-network row reuses the plain model's projection: its score,
/// the mean of dot products with a label's support items, equals the dot
/// product with their mean.
pub fn ablate(domains: &[Domain], table: &EmbeddingTable, lex: &Lexicons, cfg: &CrossValConfig) -> Result<AblationReport> {
    let rots = rotations(domains.len())?;
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidParam("at least one seed is required".into()));
    }
    // per_target[target][row] over seeds; index 4 holds the meta-only diagnostic.
    let mut per_target: Vec<Vec<Vec<AblationRow>>> = vec![vec![Vec::new(); 5]; domains.len()];
    for &seed in &cfg.seeds {
        for rot in &rots {
            let data = rotation_data(domains, rot, table, lex, cfg, seed)?;
            let plain_cfg = TrainConfig {
                seed,
                beta: 0.0,
                beta_sweep: false,
                ..cfg.train.clone()
            };
            let alr_cfg = TrainConfig { seed, ..cfg.train.clone() };
            let plain = train_rotation(domains, rot, &data, table, lex, &plain_cfg)?;
            let alr = train_rotation(domains, rot, &data, table, lex, &alr_cfg)?;
            let runs: [(&ModelParams, ScorerKind, Strategy); 5] = [
                (&plain, ScorerKind::Prototype, Strategy::Fixed),
                (&plain, ScorerKind::Matching, Strategy::Fixed),
                (&alr, ScorerKind::Prototype, Strategy::Fixed),
                (&alr, ScorerKind::Prototype, Strategy::Calibrated),
                (&alr, ScorerKind::Prototype, Strategy::MetaOnly),
            ];
            for (i, (model, scorer, strategy)) in runs.into_iter().enumerate() {
                let mode = mode_for(strategy, &data.dev, model, scorer)?;
                let r = evaluate_prepared(&data.target, model, mode, scorer)?;
                per_target[rot.target][i].push(AblationRow {
                    model: ABLATION_ROWS.get(i).unwrap_or(&"MPN+ALR+meta").to_string(),
                    mode: r.mode,
                    mean_f1: r.mean_f1,
                    label_count_accuracy: r.label_count_accuracy,
                });
            }
        }
    }
    let targets: Vec<AblationTarget> = domains
        .iter()
        .zip(&per_target)
        .map(|(d, rows)| {
            let avg: Vec<AblationRow> = rows.iter().map(|r| average_rows(&r.iter().collect::<Vec<_>>())).collect();
            AblationTarget {
                target: d.name.clone(),
                rows: avg[..4].to_vec(),
                meta_only: avg[4].clone(),
            }
        })
        .collect();
    let summary = (0..4)
        .map(|i| average_rows(&targets.iter().map(|t| &t.rows[i]).collect::<Vec<_>>()))
        .collect();
    let meta_only = average_rows(&targets.iter().map(|t| &t.meta_only).collect::<Vec<_>>());
    Ok(AblationReport {
        k_shot: cfg.train.k_shot,
        beta: cfg.train.beta,
        seeds: cfg.seeds.clone(),
        targets,
        summary,
        meta_only,
    })
}
