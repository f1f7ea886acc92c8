//! Episodic training.
//!
//! Three stages run in order: the kernel regression (bandwidth and feature
//! MLP) is fit to support label counts, then the projection `W` is trained on
//! the sigmoid loss over relevance scores, and finally the interpolation rate
//! `r` is chosen by grid search. All updates are plain SGD with analytic
//! gradients; parameters are rounded to f32 after every step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::embeddings::EmbeddingTable;
use crate::episodes::build_split;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_prepared, micro_f1};
use crate::linalg::{dot, round_to_f32, Mat};
use crate::model::ModelParams;
use crate::prepared::PreparedEpisode;
use crate::rng::rng_from;
use crate::thresholding::features::N_FEATURES;
use crate::thresholding::mlp::Mlp;
use crate::thresholding::{decide, kernel, meta_threshold, Lexicons, Mode, ScorerKind, ThresholdParams};

/// The ALR factors tried when sweeping.
pub const BETA_SWEEP: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Passes over the training episodes for the scorer.
    pub epochs: usize,
    /// Passes for kernel pretraining.
    pub kernel_epochs: usize,
    /// Queries per SGD step.
    pub batch_size: usize,
    pub lr_proj: f64,
    pub lr_kernel: f64,
    pub r_grid_step: f64,
    pub seed: u64,
    pub beta: f64,
    /// Train with each of [`BETA_SWEEP`] and keep the best on held-out episodes.
    pub beta_sweep: bool,
    pub alpha: f64,
    pub mlp_layers: usize,
    pub mlp_hidden: usize,
    pub k_shot: usize,
    pub episodes_per_domain: usize,
    pub query_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            kernel_epochs: 10,
            batch_size: 4,
            lr_proj: 1e-2,
            lr_kernel: 1e-2,
            r_grid_step: 0.01,
            seed: 0,
            beta: 0.5,
            beta_sweep: false,
            alpha: 0.3,
            mlp_layers: 1,
            mlp_hidden: 10,
            k_shot: 1,
            episodes_per_domain: 100,
            query_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.epochs == 0 || self.kernel_epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        // Zero rates are accepted: they freeze parameters, which is occasionally useful.
        for (name, v) in [("lr_proj", self.lr_proj), ("lr_kernel", self.lr_kernel)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if !(self.r_grid_step > 0.0 && self.r_grid_step <= 1.0) {
            return bad(format!("r_grid_step {} outside (0, 1]", self.r_grid_step));
        }
        crate::labelrep::check_beta(self.beta)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(1..=3).contains(&self.mlp_layers) {
            return bad(format!("mlp_layers {} not in 1..=3", self.mlp_layers));
        }
        if ![5, 10, 20].contains(&self.mlp_hidden) {
            return bad(format!("mlp_hidden {} not one of 5, 10, 20", self.mlp_hidden));
        }
        if self.k_shot == 0 || self.episodes_per_domain == 0 || self.query_size == 0 {
            return bad("k_shot, episodes_per_domain and query_size must be positive".into());
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn is_gold(gold: &[usize], i: usize) -> bool {
    gold.contains(&i)
}

/// `(1/N) * sum_i [ sigma(s_i) if i is not gold, -sigma(s_i) if it is ]`.
pub fn sigmoid_ce_loss(scores: &[f64], gold: &[usize]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| if is_gold(gold, i) { -sigmoid(s) } else { sigmoid(s) })
        .sum::<f64>()
        / n
}

/// Derivative of [`sigmoid_ce_loss`] with respect to each score.
pub fn sigmoid_ce_grad(scores: &[f64], gold: &[usize]) -> Vec<f64> {
    let n = scores.len() as f64;
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let d = sigmoid(s) * (1.0 - sigmoid(s)) / n;
            if is_gold(gold, i) {
                -d
            } else {
                d
            }
        })
        .collect()
}

fn check_gold(ep: &PreparedEpisode, qi: usize) -> Result<&[usize]> {
    let g = &ep.queries[qi].gold;
    if g.is_empty() {
        return Err(Error::InvalidParam(format!(
            "training query '{}' has no gold labels",
            ep.queries[qi].id
        )));
    }
    Ok(g)
}

/// Mean scorer loss over `queries` of `ep` and its gradient with respect to `W`.
///
/// With `p = W q` and `v_i = W u_i`, each score is `s_i = p . v_i`, so
/// `ds_i/dW = v_i q^T + p u_i^T`.
pub fn scorer_loss_grad(ep: &PreparedEpisode, proj: &Mat, beta: f64, queries: &[usize]) -> Result<(f64, Mat)> {
    let u = ep.label_mix(beta)?;
    let v: Vec<Vec<f64>> = u.iter().map(|ui| proj.matvec(ui)).collect();
    let mut grad = Mat::zeros(proj.rows, proj.cols);
    let mut loss = 0.0;
    for &qi in queries {
        let gold = check_gold(ep, qi)?;
        let q = &ep.queries[qi].embedding;
        let p = proj.matvec(q);
        let scores: Vec<f64> = v.iter().map(|vi| dot(&p, vi)).collect();
        loss += sigmoid_ce_loss(&scores, gold);
        let g = sigmoid_ce_grad(&scores, gold);
        // a = sum_i g_i v_i (pairs with q), b = sum_i g_i u_i (pairs with p).
        let mut a = vec![0.0; proj.rows];
        let mut b = vec![0.0; proj.cols];
        for i in 0..g.len() {
            a.iter_mut().zip(&v[i]).for_each(|(x, y)| *x += g[i] * y);
            b.iter_mut().zip(&u[i]).for_each(|(x, y)| *x += g[i] * y);
        }
        for r in 0..proj.rows {
            let row = &mut grad.data[r * proj.cols..(r + 1) * proj.cols];
            for c in 0..proj.cols {
                row[c] += a[r] * q[c] + p[r] * b[c];
            }
        }
    }
    let m = queries.len().max(1) as f64;
    grad.data.iter_mut().for_each(|x| *x /= m);
    Ok((loss / m, grad))
}

/// Gradient of the kernel pretraining loss.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    pub rho: f64,
    pub mlp: Mlp,
}

/// Mean squared error between estimated and gold label counts over `queries`,
/// with its gradient with respect to `rho` and the MLP.
pub fn kernel_loss_grad(ep: &PreparedEpisode, th: &ThresholdParams, queries: &[usize]) -> Result<(f64, KernelGrad)> {
    th.mlp.validate()?;
    if th.mlp.input_dim() != N_FEATURES {
        return Err(Error::Shape("feature MLP input does not match the feature count".into()));
    }
    let lambda = th.lambda();
    let counts = ep.support_counts();
    let traces: Vec<_> = ep.support_features.iter().map(|f| th.mlp.trace(f)).collect();
    let mut grad = KernelGrad {
        rho: 0.0,
        mlp: th.mlp.zeros_like(),
    };
    let mut loss = 0.0;
    for &qi in queries {
        let gold = check_gold(ep, qi)?.len() as f64;
        let tq = th.mlp.trace(&ep.queries[qi].features);
        let zq = &tq.output;
        let codes: Vec<Vec<f64>> = traces.iter().map(|t| t.output.clone()).collect();
        let w = kernel::normalized_weights(zq, &codes, lambda);
        let n = kernel::weighted_count(&w, &counts);
        loss += (n - gold) * (n - gold);
        let dl_dn = 2.0 * (n - gold);
        let mut g_zq = vec![0.0; zq.len()];
        for (j, code) in codes.iter().enumerate() {
            let diff = counts[j] as f64 - n;
            let d = crate::linalg::sq_dist(zq, code);
            grad.rho += dl_dn * w[j] * diff * d / lambda;
            // dL/dd_j, then dd_j/dz_q = 2 (z_q - z_j) = -dd_j/dz_j.
            let dl_dd = -dl_dn * w[j] * diff / lambda;
            if dl_dd == 0.0 {
                continue;
            }
            let g_zj: Vec<f64> = zq
                .iter()
                .zip(code)
                .map(|(a, b)| -2.0 * dl_dd * (a - b))
                .collect();
            g_zq.iter_mut().zip(&g_zj).for_each(|(x, y)| *x -= y);
            th.mlp.backward(&traces[j], &g_zj, &mut grad.mlp);
        }
        th.mlp.backward(&tq, &g_zq, &mut grad.mlp);
    }
    let m = queries.len().max(1) as f64;
    grad.rho /= m;
    grad.mlp.params_mut().for_each(|x| *x /= m);
    Ok((loss / m, grad))
}

/// Episodes in round-robin order across domains: the first episode of every
/// domain, then the second, and so on.
fn round_robin(domains: &[Vec<PreparedEpisode>]) -> Vec<&PreparedEpisode> {
    let longest = domains.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .flat_map(|i| domains.iter().filter_map(move |d| d.get(i)))
        .collect()
}

fn batches(ep: &PreparedEpisode, size: usize) -> Vec<Vec<usize>> {
    (0..ep.queries.len())
        .collect::<Vec<_>>()
        .chunks(size)
        .map(<[usize]>::to_vec)
        .collect()
}

fn check_loss(loss: f64, stage: &str, epoch: usize, ep: &PreparedEpisode) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{stage} loss became {loss} in epoch {epoch} on an episode of domain '{}'",
            ep.domain_name
        )))
    }
}

/// Trains `W`; returns the updated model and the mean batch loss of each epoch.
pub fn train_scorer(domains: &[Vec<PreparedEpisode>], model: &ModelParams, cfg: &TrainConfig) -> Result<(ModelParams, Vec<f64>)> {
    cfg.validate()?;
    let order = round_robin(domains);
    if order.is_empty() {
        return Err(Error::InvalidParam("no training episodes".into()));
    }
    let mut m = model.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut total, mut steps) = (0.0, 0usize);
        for ep in &order {
            for b in batches(ep, cfg.batch_size) {
                let (loss, g) = scorer_loss_grad(ep, &m.proj, m.beta, &b)?;
                check_loss(loss, "scorer", epoch, ep)?;
                for (w, d) in m.proj.data.iter_mut().zip(&g.data) {
                    *w -= cfg.lr_proj * d;
                }
                round_to_f32(&mut m.proj.data);
                total += loss;
                steps += 1;
            }
        }
        trace.push(total / steps as f64);
    }
    Ok((m, trace))
}

/// Fits `rho` and the feature MLP; returns them with the per-epoch MSE.
pub fn pretrain_kernel(
    domains: &[Vec<PreparedEpisode>],
    params: &ThresholdParams,
    cfg: &TrainConfig,
) -> Result<(ThresholdParams, Vec<f64>)> {
    cfg.validate()?;
    let order = round_robin(domains);
    if order.is_empty() {
        return Err(Error::InvalidParam("no training episodes".into()));
    }
    let mut th = params.clone();
    let mut trace = Vec::with_capacity(cfg.kernel_epochs);
    for epoch in 0..cfg.kernel_epochs {
        let (mut total, mut steps) = (0.0, 0usize);
        for ep in &order {
            for b in batches(ep, cfg.batch_size) {
                let (loss, g) = kernel_loss_grad(ep, &th, &b)?;
                check_loss(loss, "kernel", epoch, ep)?;
                th.rho = (th.rho - cfg.lr_kernel * g.rho) as f32 as f64;
                for (p, d) in th.mlp.params_mut().zip(g.mlp.params()) {
                    *p = (*p - cfg.lr_kernel * d) as f32 as f64;
                }
                total += loss;
                steps += 1;
            }
        }
        trace.push(total / steps as f64);
    }
    Ok((th, trace))
}

/// Mean squared label-count error of the kernel estimate over every query.
pub fn label_count_mse(domains: &[Vec<PreparedEpisode>], th: &ThresholdParams) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for ep in domains.iter().flatten() {
        let all: Vec<usize> = (0..ep.queries.len()).collect();
        let (loss, _) = kernel_loss_grad(ep, th, &all)?;
        total += loss * all.len() as f64;
        n += all.len();
    }
    Ok(total / n.max(1) as f64)
}

/// Scores and gold label indices for one episode.
pub type ScoredEpisode = (Vec<Vec<f64>>, Vec<Vec<usize>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RFit {
    pub r: f64,
    pub best_f1: f64,
    /// `(r, mean episode micro-F1)` for every grid point.
    pub grid: Vec<(f64, f64)>,
}

/// The grid `0, step, 2 step, ..., 1`.
pub fn r_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidParam(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|k| (k as f64 * step).min(1.0)).collect())
}

/// Picks the `r` maximising mean meta-threshold micro-F1; ties go to the smaller `r`.
pub fn fit_r_scores(episodes: &[ScoredEpisode], step: f64, epsilon: f64) -> Result<RFit> {
    if episodes.is_empty() {
        return Err(Error::InvalidParam("no episodes to fit r on".into()));
    }
    let grid = r_grid(step)?;
    let evals = grid
        .par_iter()
        .map(|&r| {
            let mut sum = 0.0;
            for (scores, golds) in episodes {
                let preds = scores
                    .iter()
                    .map(|s| {
                        let t_meta = meta_threshold(s, r)?;
                        Ok(decide(s, t_meta, t_meta, 0.0, 1.0, epsilon, Mode::MetaOnly)?.selected)
                    })
                    .collect::<Result<Vec<_>>>()?;
                sum += micro_f1(&preds, golds)?;
            }
            Ok((r, sum / episodes.len() as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut r, mut best_f1) = evals[0];
    for &(ri, f) in &evals[1..] {
        if f > best_f1 {
            r = ri;
            best_f1 = f;
        }
    }
    Ok(RFit { r, best_f1, grid: evals })
}

pub fn fit_r(episodes: &[PreparedEpisode], model: &ModelParams, cfg: &TrainConfig) -> Result<RFit> {
    let scored = episodes
        .iter()
        .map(|ep| Ok((ep.scores(model, ScorerKind::Prototype)?, ep.golds())))
        .collect::<Result<Vec<_>>>()?;
    fit_r_scores(&scored, cfg.r_grid_step, model.threshold.epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStage {
    pub epoch_losses: Vec<f64>,
    /// MSE of always predicting the mean training label count.
    pub mean_baseline_mse: f64,
    pub final_mse: f64,
    pub rho: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerStage {
    pub beta: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RStage {
    pub r: f64,
    pub best_f1: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCandidate {
    pub beta: f64,
    pub heldout_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub source_domains: Vec<String>,
    pub kernel: KernelStage,
    pub scorer: ScorerStage,
    pub r_fit: RStage,
    pub beta_sweep: Vec<BetaCandidate>,
}

/// Builds `cfg.episodes_per_domain` training episodes for each domain.
pub fn prepare_training_episodes(
    domains: &[&Domain],
    table: &EmbeddingTable,
    lex: &Lexicons,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<Vec<Vec<PreparedEpisode>>> {
    domains
        .iter()
        .map(|d| {
            let mut rng = rng_from(cfg.seed, &format!("{tag}/{}/k{}", d.name, cfg.k_shot));
            build_split(d, cfg.k_shot, cfg.episodes_per_domain, cfg.query_size, &mut rng)?
                .par_iter()
                .map(|ep| PreparedEpisode::new(ep, d, table, lex))
                .collect()
        })
        .collect()
}

fn mean_count_baseline(domains: &[Vec<PreparedEpisode>]) -> f64 {
    let counts: Vec<f64> = domains
        .iter()
        .flatten()
        .flat_map(|ep| ep.queries.iter().map(|q| q.gold.len() as f64))
        .collect();
    let n = counts.len().max(1) as f64;
    let mean = counts.iter().sum::<f64>() / n;
    counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n
}

/// Kernel pretraining, scorer training and the `r` fit.
///
/// With `cfg.beta_sweep`, the scorer is trained once per sweep value and
/// the model scoring best on `heldout` (or on the training episodes when no
/// held-out episodes are given) is kept.
pub fn train_pipeline(
    domains: &[Vec<PreparedEpisode>],
    heldout: Option<&[PreparedEpisode]>,
    embed_dim: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed, "mlp-init");
    let mlp = Mlp::random(N_FEATURES, cfg.mlp_hidden, cfg.mlp_layers, &mut rng);
    let base = ModelParams::init(embed_dim, cfg.beta, cfg.alpha, mlp)?;

    let (th, kernel_losses) = pretrain_kernel(domains, &base.threshold, cfg)?;
    let kernel = KernelStage {
        epoch_losses: kernel_losses,
        mean_baseline_mse: mean_count_baseline(domains),
        final_mse: label_count_mse(domains, &th)?,
        rho: th.rho,
        lambda: th.lambda(),
    };
    let flat: Vec<PreparedEpisode> = domains.iter().flatten().cloned().collect();
    let betas: Vec<f64> = if cfg.beta_sweep { BETA_SWEEP.to_vec() } else { vec![cfg.beta] };

    let mut best: Option<(f64, ModelParams, Vec<f64>, RFit)> = None;
    let mut sweep = Vec::new();
    for beta in betas {
        let mut m = base.clone();
        m.beta = beta;
        m.threshold = th.clone();
        let (mut m, losses) = train_scorer(domains, &m, cfg)?;
        let fit = fit_r(&flat, &m, cfg)?;
        m.threshold.r = fit.r;
        m.round_to_f32();
        if cfg.beta_sweep {
            let judge = heldout.unwrap_or(&flat);
            let f1 = evaluate_prepared(judge, &m, Mode::Calibrated, ScorerKind::Prototype)?.mean_f1;
            sweep.push(BetaCandidate { beta, heldout_f1: f1 });
            if best.as_ref().is_some_and(|b| b.0 >= f1) {
                continue;
            }
            best = Some((f1, m, losses, fit));
        } else {
            best = Some((f64::NAN, m, losses, fit));
        }
    }
    let (_, model, losses, fit) = best.expect("at least one beta");
    let mut source_domains: Vec<String> = domains.iter().filter_map(|d| d.first()).map(|e| e.domain_name.clone()).collect();
    source_domains.dedup();
    let report = TrainReport {
        config: cfg.clone(),
        source_domains,
        kernel,
        scorer: ScorerStage {
            beta: model.beta,
            epoch_losses: losses,
        },
        r_fit: RStage {
            r: fit.r,
            best_f1: fit.best_f1,
            evaluations: fit.grid.len(),
        },
        beta_sweep: sweep,
    };
    Ok((model, report))
}

/// Builds training episodes from `sources` and runs [`train_pipeline`].
pub fn train_on_domains(
    sources: &[&Domain],
    heldout: Option<&[PreparedEpisode]>,
    table: &EmbeddingTable,
    lex: &Lexicons,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    if sources.is_empty() {
        return Err(Error::InvalidParam("at least one source domain is required".into()));
    }
    let eps = prepare_training_episodes(sources, table, lex, cfg, "train")?;
    train_pipeline(&eps, heldout, table.dim(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec};
    use crate::embeddings::embed_corpus_toy;
    use rand::Rng as _;

    #[test]
    fn loss_examples() {
        assert_eq!(sigmoid_ce_loss(&[0.0; 4], &[2]), 0.25);
        let all = [0, 1, 2];
        assert!((sigmoid_ce_loss(&[50.0; 3], &all) + 1.0).abs() < 1e-6);
    }

    #[test]
    fn r_grid_has_101_points() {
        let g = r_grid(0.01).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn fit_r_prefers_smallest_perfect_r() {
        let scores = vec![vec![3.0, 1.0, 0.0], vec![0.5, 2.0, 0.1]];
        let golds = vec![vec![0], vec![1]];
        let fit = fit_r_scores(&[(scores, golds)], 0.01, 1e-6).unwrap();
        assert_eq!(fit.best_f1, 1.0);
        assert_eq!(fit.grid.len(), 101);
        assert!(fit.r > 0.0 && fit.r < 0.5);
        // Every smaller grid point is worse.
        assert!(fit.grid.iter().filter(|(r, _)| *r < fit.r).all(|(_, f)| *f < 1.0));
    }

    #[test]
    fn fit_r_recovers_half_on_two_densities() {
        // The first query needs r < 0.52, the second r >= 0.49.
        let scores = vec![vec![1.0, 0.52, 0.0, 0.0], vec![1.0, 0.49, 0.0, 0.0]];
        let golds = vec![vec![0, 1], vec![0]];
        let fit = fit_r_scores(&[(scores, golds)], 0.01, 1e-6).unwrap();
        assert_eq!(fit.best_f1, 1.0);
        assert!((fit.r - 0.5).abs() <= 0.01 + 1e-12, "r = {}", fit.r);
    }

    pub(crate) fn toy_domains(n_domains: usize, seed: u64) -> (Vec<Domain>, EmbeddingTable) {
        let domains: Vec<Domain> = (0..n_domains)
            .map(|i| {
                let spec = SynthSpec {
                    name: format!("d{i}"),
                    n_labels: 4,
                    pool_size: 120,
                    ..SynthSpec::default()
                };
                generate_synthetic(&spec, seed + i as u64).unwrap()
            })
            .collect();
        let table = embed_corpus_toy(&domains, 16, seed).unwrap();
        (domains, table)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            kernel_epochs: 2,
            episodes_per_domain: 6,
            query_size: 8,
            ..TrainConfig::default()
        }
    }

    fn prepared(seed: u64, cfg: &TrainConfig) -> Vec<Vec<PreparedEpisode>> {
        let (domains, table) = toy_domains(2, seed);
        let refs: Vec<&Domain> = domains.iter().collect();
        prepare_training_episodes(&refs, &table, &Lexicons::builtin(), cfg, "t").unwrap()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = TrainConfig {
            lr_proj: 0.0,
            lr_kernel: 0.0,
            ..small_cfg()
        };
        let eps = prepared(3, &cfg);
        let mut rng = rng_from(1, "t");
        let m = ModelParams::init(16, 0.5, 0.3, Mlp::random(N_FEATURES, 10, 2, &mut rng)).unwrap();
        let (m2, _) = train_scorer(&eps, &m, &cfg).unwrap();
        assert_eq!(m2.proj.data, m.proj.data);
        let (th, _) = pretrain_kernel(&eps, &m.threshold, &cfg).unwrap();
        assert_eq!(th, m.threshold);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn scorer_gradient_matches_finite_differences() {
        let cfg = small_cfg();
        let eps = prepared(5, &cfg);
        let ep = &eps[0][0];
        let mut rng = rng_from(2, "fd");
        let proj = Mat::from_vec(16, 16, (0..256).map(|_| rng.gen_range(-0.6..0.6)).collect());
        let qs = [0, 1, 2];
        let (_, g) = scorer_loss_grad(ep, &proj, 0.5, &qs).unwrap();
        let h = 1e-5;
        for idx in (0..256).step_by(7) {
            let mut p = proj.clone();
            p.data[idx] += h;
            let lp = scorer_loss_grad(ep, &p, 0.5, &qs).unwrap().0;
            p.data[idx] -= 2.0 * h;
            let lm = scorer_loss_grad(ep, &p, 0.5, &qs).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!(rel_err(fd, g.data[idx]) < 1e-4, "W[{idx}]: fd {fd} vs {}", g.data[idx]);
        }
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let cfg = small_cfg();
        let eps = prepared(7, &cfg);
        let ep = &eps[1][0];
        let mut rng = rng_from(3, "fd");
        let mut th = ThresholdParams {
            r: 0.5,
            alpha: 0.3,
            rho: -1.0,
            mlp: Mlp::random(N_FEATURES, 5, 2, &mut rng),
            epsilon: 1e-6,
        };
        th.mlp.params_mut().for_each(|p| *p *= 3.0);
        let qs = [0, 1, 2, 3];
        let (_, g) = kernel_loss_grad(ep, &th, &qs).unwrap();
        let h = 1e-5;
        let loss_at = |t: &ThresholdParams| kernel_loss_grad(ep, t, &qs).unwrap().0;
        let mut t = th.clone();
        t.rho += h;
        let lp = loss_at(&t);
        t.rho -= 2.0 * h;
        let fd = (lp - loss_at(&t)) / (2.0 * h);
        assert!(rel_err(fd, g.rho) < 1e-4, "rho: fd {fd} vs {}", g.rho);
        let analytic = g.mlp.params();
        for k in 0..th.mlp.n_params() {
            let mut t = th.clone();
            *t.mlp.params_mut().nth(k).unwrap() += h;
            let lp = loss_at(&t);
            *t.mlp.params_mut().nth(k).unwrap() -= 2.0 * h;
            let fd = (lp - loss_at(&t)) / (2.0 * h);
            assert!(rel_err(fd, analytic[k]) < 1e-4, "mlp[{k}]: fd {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn constant_counts_give_zero_kernel_gradient() {
        let cfg = small_cfg();
        let mut eps = prepared(11, &cfg);
        let ep = &mut eps[0][0];
        for l in &mut ep.support_labels {
            l.truncate(1);
        }
        for q in &mut ep.queries {
            q.gold.truncate(1);
        }
        let mut rng = rng_from(4, "c");
        let th = ThresholdParams {
            r: 0.5,
            alpha: 0.3,
            rho: 0.0,
            mlp: Mlp::random(N_FEATURES, 10, 1, &mut rng),
            epsilon: 1e-6,
        };
        let all: Vec<usize> = (0..ep.queries.len()).collect();
        let (loss, g) = kernel_loss_grad(ep, &th, &all).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.rho, 0.0);
        assert!(g.mlp.params().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pipeline_is_deterministic_and_reports_every_stage() {
        let cfg = small_cfg();
        let (domains, table) = toy_domains(3, 21);
        let refs: Vec<&Domain> = domains.iter().collect();
        let lex = Lexicons::builtin();
        let (a, rep) = train_on_domains(&refs, None, &table, &lex, &cfg).unwrap();
        let (b, _) = train_on_domains(&refs, None, &table, &lex, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(rep.kernel.epoch_losses.len(), 2);
        assert_eq!(rep.scorer.epoch_losses.len(), 2);
        assert_eq!(rep.r_fit.evaluations, 101);
        assert_eq!(rep.source_domains, vec!["d0", "d1", "d2"]);
        let v = serde_json::to_value(&rep).unwrap();
        for k in ["kernel", "scorer", "r_fit"] {
            assert!(v.get(k).is_some());
        }
    }
}
