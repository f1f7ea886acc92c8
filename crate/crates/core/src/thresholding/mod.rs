//! Thresholds that adapt to each query.
//!
//! The meta threshold interpolates between a query's largest and smallest
//! relevance score with a rate `r` learned on source domains. A second
//! estimate reads the support set: a Gaussian kernel over projected surface
//! features weights each support item, and the threshold is the weighted
//! mean of the query's `(|y'| + 1)`-th largest score over support items `y'`.
//! The two are blended with `alpha`.

pub mod features;
pub mod kernel;
pub mod mlp;

use serde::{Deserialize, Serialize};

pub use features::{extract_features, Lexicons, RawFeatures};
pub use kernel::kernel_weight;
pub use mlp::Mlp;

use crate::corpus::{LabelSpace, Utterance};
use crate::embeddings::EmbeddingTable;
use crate::episodes::SupportSet;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::prepared::PreparedEpisode;
use crate::scoring::RelevanceScores;

/// Score spread below which a query is treated as degenerate and every label is selected.
pub const DEGENERATE_SPREAD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdParams {
    /// Interpolation rate between min (0) and max (1) score.
    pub r: f64,
    /// Weight of the meta threshold against the kernel estimate.
    pub alpha: f64,
    /// Log bandwidth; the kernel uses `lambda = exp(rho)`.
    pub rho: f64,
    pub mlp: Mlp,
    /// Relative perturbation used to let every label through.
    pub epsilon: f64,
}

impl ThresholdParams {
    pub fn lambda(&self) -> f64 {
        self.rho.exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::InvalidParam(format!("r {} outside [0, 1]", self.r)));
        }
        check_alpha(self.alpha)?;
        if !self.rho.is_finite() {
            return Err(Error::InvalidParam("rho must be finite".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParam(format!("epsilon {} must be positive", self.epsilon)));
        }
        self.mlp.validate()?;
        if self.mlp.input_dim() != features::N_FEATURES {
            return Err(Error::Shape(format!(
                "feature MLP takes {} inputs, expected {}",
                self.mlp.input_dim(),
                features::N_FEATURES
            )));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("alpha {alpha} outside [0, 1]")))
    }
}

fn extremes(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::InvalidParam("empty score vector".into()));
    }
    Ok(scores
        .iter()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s))))
}

/// `r * max + (1 - r) * min`, clamped to `[min, max]` against rounding.
pub fn meta_threshold(scores: &[f64], r: f64) -> Result<f64> {
    let (hi, lo) = extremes(scores)?;
    Ok((r * hi + (1.0 - r) * lo).clamp(lo, hi))
}

/// The `(n + 1)`-th largest score, by position in the descending sort.
///
/// When `n >= scores.len()` there is no such score; the result sits just
/// below the minimum so every label passes a strict comparison.
pub fn kth_score_threshold(scores: &[f64], n: usize, epsilon: f64) -> Result<f64> {
    let (_, lo) = extremes(scores)?;
    if n >= scores.len() {
        return Ok(lo - epsilon * (1.0 + lo.abs()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[n])
}

/// `alpha * t_meta + (1 - alpha) * t_est`, kept between the two.
pub fn calibrated_threshold(t_meta: f64, t_est: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((alpha * t_meta + (1.0 - alpha) * t_est).clamp(t_meta.min(t_est), t_meta.max(t_est)))
}

/// Labels whose score is strictly above `t`.
pub fn select(scores: &[f64], t: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| (s > t).then_some(i))
        .collect()
}

fn support_codes(support: &SupportSet, params: &ThresholdParams, lex: &Lexicons) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if support.is_empty() {
        return Err(Error::InvalidParam("empty support set".into()));
    }
    let feats: Vec<[f64; features::N_FEATURES]> = support
        .items
        .iter()
        .map(|lu| extract_features(&lu.utterance, lex).scaled())
        .collect();
    let codes = kernel::codes(&params.mlp, &feats)?;
    Ok((codes, support.items.iter().map(|lu| lu.labels.len()).collect()))
}

/// Kernel-weighted mean label count of the support set, seen from `query`.
pub fn estimate_label_count(query: &Utterance, support: &SupportSet, params: &ThresholdParams, lex: &Lexicons) -> Result<f64> {
    let (codes, counts) = support_codes(support, params, lex)?;
    let q = params.mlp.forward(&extract_features(query, lex).scaled())?;
    Ok(kernel::label_count_from_codes(&q, &codes, &counts, params.lambda()))
}

/// Kernel-weighted mean of `T'(|y'|)` over support items.
pub fn estimate_threshold(
    query: &Utterance,
    support: &SupportSet,
    scores: &RelevanceScores,
    params: &ThresholdParams,
    lex: &Lexicons,
) -> Result<f64> {
    let (codes, counts) = support_codes(support, params, lex)?;
    let q = params.mlp.forward(&extract_features(query, lex).scaled())?;
    let w = kernel::normalized_weights(&q, &codes, params.lambda());
    let t: Vec<f64> = counts
        .iter()
        .map(|&c| kth_score_threshold(&scores.scores, c, params.epsilon))
        .collect::<Result<_>>()?;
    Ok(kernel::weighted_average(&w, &t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "threshold")]
pub enum Mode {
    MetaOnly,
    Calibrated,
    /// A single threshold shared by every query (the baselines' dev-tuned value).
    Fixed(f64),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::MetaOnly => "meta_only",
            Mode::Calibrated => "calibrated",
            Mode::Fixed(_) => "fixed",
        }
    }
}

/// Which relevance scorer feeds the thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Dot product against (anchored) prototypes.
    #[default]
    Prototype,
    /// Mean dot product against each label's support items.
    Matching,
}

/// Threshold decision for one query, given its scores and the kernel estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub t_meta: f64,
    pub t_est: f64,
    pub t: f64,
    pub n_est: f64,
    pub selected: Vec<usize>,
}

/// Picks the final threshold for `mode` and selects labels.
///
/// In the adaptive modes a query whose scores are all (nearly) equal gets a
/// threshold just below `t_meta`, selecting every label.
pub fn decide(scores: &[f64], t_meta: f64, t_est: f64, n_est: f64, alpha: f64, epsilon: f64, mode: Mode) -> Result<Decision> {
    let (hi, lo) = extremes(scores)?;
    let t = match mode {
        Mode::Fixed(t) => t,
        _ if hi - lo < DEGENERATE_SPREAD => t_meta - epsilon * (1.0 + t_meta.abs()),
        Mode::MetaOnly => t_meta,
        Mode::Calibrated => calibrated_threshold(t_meta, t_est, alpha)?,
    };
    Ok(Decision {
        t_meta,
        t_est,
        t,
        n_est,
        selected: select(scores, t),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: RelevanceScores,
    pub t_meta: f64,
    pub t_est: f64,
    pub t: f64,
    pub n_est: f64,
    pub labels: Vec<String>,
}

/// Predicts the label set of `query` from `support`.
pub fn predict(
    query: &Utterance,
    support: &SupportSet,
    label_space: &LabelSpace,
    table: &EmbeddingTable,
    model: &ModelParams,
    lex: &Lexicons,
    mode: Mode,
) -> Result<Prediction> {
    predict_with(query, support, label_space, table, model, lex, mode, ScorerKind::Prototype)
}

#[allow(clippy::too_many_arguments)]
pub fn predict_with(
    query: &Utterance,
    support: &SupportSet,
    label_space: &LabelSpace,
    table: &EmbeddingTable,
    model: &ModelParams,
    lex: &Lexicons,
    mode: Mode,
    scorer: ScorerKind,
) -> Result<Prediction> {
    let ep = PreparedEpisode::from_parts("", label_space, support, std::slice::from_ref(query), &[], table, lex)?;
    let scores = ep.scores(model, scorer)?.remove(0);
    let d = ep.decide_query(model, 0, &scores, mode)?;
    Ok(Prediction {
        scores: RelevanceScores {
            query_id: query.id.clone(),
            scores,
        },
        t_meta: d.t_meta,
        t_est: d.t_est,
        t: d.t,
        n_est: d.n_est,
        labels: d.selected.iter().map(|&i| label_space.name(i).to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn meta_threshold_examples() {
        assert_eq!(meta_threshold(&[1.0, 3.0, 5.0], 0.5).unwrap(), 3.0);
        assert_eq!(meta_threshold(&[1.0, 3.0, 5.0], 1.0).unwrap(), 5.0);
        assert_eq!(meta_threshold(&[1.0, 3.0, 5.0], 0.0).unwrap(), 1.0);
        assert!(meta_threshold(&[], 0.5).is_err());
    }

    #[test]
    fn logit_adaptive_threshold_fits_two_densities() {
        // Query one: two correct labels, low scores. Query two: one correct label, high scores.
        let x1 = [0.9, 0.6, 0.2, 0.1];
        let x2 = [1.6, 1.1, 0.9, 0.8];
        assert_eq!(select(&x1, meta_threshold(&x1, 0.5).unwrap()), vec![0, 1]);
        assert_eq!(select(&x2, meta_threshold(&x2, 0.5).unwrap()), vec![0]);
        // No fixed threshold works for both: x1 needs t < 0.6, x2 needs t >= 1.1.
        for i in 0..=200 {
            let t = i as f64 * 0.01;
            assert!(!(select(&x1, t) == vec![0, 1] && select(&x2, t) == vec![0]));
        }
    }

    #[test]
    fn kth_examples() {
        assert_eq!(kth_score_threshold(&[5.0, 4.0, 3.0, 2.0], 2, 1e-6).unwrap(), 3.0);
        assert_eq!(kth_score_threshold(&[2.0, 5.0, 4.0, 3.0], 0, 1e-6).unwrap(), 5.0);
        // Sort oracle: descending [4, 4, 2], position 1.
        assert_eq!(kth_score_threshold(&[4.0, 2.0, 4.0], 1, 1e-6).unwrap(), 4.0);
        let t = kth_score_threshold(&[1.0, 2.0], 2, 1e-6).unwrap();
        assert!(t < 1.0 && select(&[1.0, 2.0], t) == vec![0, 1]);
    }

    #[test]
    fn calibration_examples() {
        assert!((calibrated_threshold(1.0, 2.0, 0.3).unwrap() - 1.7).abs() < 1e-15);
        assert_eq!(calibrated_threshold(1.0, 2.0, 1.0).unwrap(), 1.0);
        assert_eq!(calibrated_threshold(1.0, 2.0, 0.0).unwrap(), 2.0);
        assert!(calibrated_threshold(1.0, 2.0, 1.1).is_err());
    }

    #[test]
    fn decide_meta_only_strict() {
        let d = decide(&[5.0, 3.0, 1.0], 3.0, 0.0, 1.0, 0.3, 1e-6, Mode::MetaOnly).unwrap();
        assert_eq!(d.selected, vec![0]);
    }

    #[test]
    fn decide_degenerate_selects_all() {
        for mode in [Mode::MetaOnly, Mode::Calibrated] {
            let d = decide(&[2.0, 2.0, 2.0], 2.0, 2.0, 1.0, 0.3, 1e-6, mode).unwrap();
            assert_eq!(d.selected, vec![0, 1, 2]);
        }
    }

    proptest! {
        #[test]
        fn meta_threshold_bounded(scores in proptest::collection::vec(-50.0f64..50.0, 1..12), r in 0.0f64..=1.0) {
            let t = meta_threshold(&scores, r).unwrap();
            let (hi, lo) = extremes(&scores).unwrap();
            prop_assert!(lo - 1e-12 <= t && t <= hi + 1e-12);
            if r < 1.0 && hi - lo > 1e-9 {
                let argmax = scores.iter().position(|&s| s == hi).unwrap();
                prop_assert!(select(&scores, t).contains(&argmax));
            }
        }

        #[test]
        fn kth_monotone(scores in proptest::collection::vec(-5.0f64..5.0, 1..10)) {
            let mut prev = f64::INFINITY;
            for n in 0..=scores.len() + 1 {
                let t = kth_score_threshold(&scores, n, 1e-6).unwrap();
                prop_assert!(t <= prev);
                prev = t;
            }
        }
    }
}
