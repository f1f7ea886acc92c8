//! Episodes with every embedding and feature vector looked up once.
//!
//! Training, evaluation and [`crate::thresholding::predict`] all score
//! through this type, so the three paths make identical decisions.
//!
//! Label representations are formed before projection:
//! `u_i = beta * E(y_i) + (1 - beta) * mean_j E(x_j)`, and the projected
//! representation is `W u_i`. Because the projection is linear this equals
//! interpolating the projected anchor and prototype.

use crate::corpus::{Domain, LabelSpace, Utterance};
use crate::embeddings::{label_name_embedding, EmbeddingTable};
use crate::episodes::{Episode, SupportSet};
use crate::error::{Error, Result};
use crate::labelrep::check_beta;
use crate::linalg::{dot, lerp, mean_of};
use crate::model::ModelParams;
use crate::thresholding::features::{extract_features, Lexicons, N_FEATURES};
use crate::thresholding::{decide, kernel, kth_score_threshold, meta_threshold, Decision, Mode, ScorerKind};

pub type Features = [f64; N_FEATURES];

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuery {
    pub id: String,
    pub embedding: Vec<f64>,
    pub features: Features,
    /// Gold label indices; empty when unknown.
    pub gold: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEpisode {
    pub domain_name: String,
    pub label_names: Vec<String>,
    pub support_embeddings: Vec<Vec<f64>>,
    pub support_labels: Vec<Vec<usize>>,
    pub support_features: Vec<Features>,
    /// Unprojected label-name embeddings.
    pub anchors: Vec<Vec<f64>>,
    pub queries: Vec<PreparedQuery>,
}

impl PreparedEpisode {
    pub fn new(episode: &Episode, domain: &Domain, table: &EmbeddingTable, lex: &Lexicons) -> Result<Self> {
        let queries: Vec<Utterance> = episode.queries.iter().map(|q| q.utterance.clone()).collect();
        let gold = episode
            .queries
            .iter()
            .map(|q| domain.label_space.indices(&q.labels))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(&episode.domain_name, &domain.label_space, &episode.support, &queries, &gold, table, lex)
    }

    /// `gold` may be empty (unlabelled queries) or hold one entry per query.
    pub fn from_parts(
        domain_name: &str,
        label_space: &LabelSpace,
        support: &SupportSet,
        queries: &[Utterance],
        gold: &[Vec<usize>],
        table: &EmbeddingTable,
        lex: &Lexicons,
    ) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidParam("empty support set".into()));
        }
        if !gold.is_empty() && gold.len() != queries.len() {
            return Err(Error::InvalidParam(format!(
                "{} gold label sets for {} queries",
                gold.len(),
                queries.len()
            )));
        }
        let anchors = label_space
            .names()
            .iter()
            .map(|n| label_name_embedding(n, table))
            .collect::<Result<Vec<_>>>()?;
        let mut support_embeddings = Vec::with_capacity(support.len());
        let mut support_labels = Vec::with_capacity(support.len());
        let mut support_features = Vec::with_capacity(support.len());
        for lu in &support.items {
            support_embeddings.push(table.sentence(lu.id())?);
            support_labels.push(label_space.indices(&lu.labels)?);
            support_features.push(extract_features(&lu.utterance, lex).scaled());
        }
        let queries = queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                Ok(PreparedQuery {
                    id: q.id.clone(),
                    embedding: table.sentence(&q.id)?,
                    features: extract_features(q, lex).scaled(),
                    gold: gold.get(i).cloned().unwrap_or_default(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            domain_name: domain_name.to_string(),
            label_names: label_space.names().to_vec(),
            support_embeddings,
            support_labels,
            support_features,
            anchors,
            queries,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn support_counts(&self) -> Vec<usize> {
        self.support_labels.iter().map(Vec::len).collect()
    }

    /// Unprojected prototypes, one per label.
    pub fn prototypes(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.n_labels())
            .map(|l| {
                let members: Vec<&[f64]> = self
                    .support_embeddings
                    .iter()
                    .zip(&self.support_labels)
                    .filter(|(_, ls)| ls.contains(&l))
                    .map(|(e, _)| e.as_slice())
                    .collect();
                if members.is_empty() {
                    return Err(Error::InvalidParam(format!(
                        "label '{}' has no support items",
                        self.label_names[l]
                    )));
                }
                Ok(mean_of(members))
            })
            .collect()
    }

    /// Unprojected anchored representations `u_i`.
    pub fn label_mix(&self, beta: f64) -> Result<Vec<Vec<f64>>> {
        check_beta(beta)?;
        Ok(self
            .prototypes()?
            .iter()
            .zip(&self.anchors)
            .map(|(c, a)| lerp(a, c, beta))
            .collect())
    }

    fn check_dim(&self, model: &ModelParams) -> Result<()> {
        let d = self.anchors[0].len();
        if d != model.embed_dim {
            return Err(Error::Shape(format!(
                "embeddings have dim {d}, model expects {}",
                model.embed_dim
            )));
        }
        Ok(())
    }

    /// Relevance scores for every query, in query order.
    pub fn scores(&self, model: &ModelParams, scorer: ScorerKind) -> Result<Vec<Vec<f64>>> {
        self.check_dim(model)?;
        let w = &model.proj;
        let scores: Vec<Vec<f64>> = match scorer {
            ScorerKind::Prototype => {
                let reps: Vec<Vec<f64>> = self.label_mix(model.beta)?.iter().map(|u| w.matvec(u)).collect();
                self.queries
                    .iter()
                    .map(|q| {
                        let p = w.matvec(&q.embedding);
                        reps.iter().map(|v| dot(&p, v)).collect()
                    })
                    .collect()
            }
            ScorerKind::Matching => {
                self.prototypes()?;
                let items: Vec<Vec<f64>> = self.support_embeddings.iter().map(|e| w.matvec(e)).collect();
                self.queries
                    .iter()
                    .map(|q| {
                        let p = w.matvec(&q.embedding);
                        let mut sums = vec![0.0; self.n_labels()];
                        let mut counts = vec![0usize; self.n_labels()];
                        for (e, ls) in items.iter().zip(&self.support_labels) {
                            let s = dot(&p, e);
                            for &l in ls {
                                sums[l] += s;
                                counts[l] += 1;
                            }
                        }
                        sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
                    })
                    .collect()
            }
        };
        for (q, s) in self.queries.iter().zip(&scores) {
            if let Some(i) = s.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite score for label '{}' of query '{}'",
                    self.label_names[i], q.id
                )));
            }
        }
        Ok(scores)
    }

    /// Feature codes of the support items under the model's MLP.
    pub fn support_codes(&self, model: &ModelParams) -> Result<Vec<Vec<f64>>> {
        kernel::codes(&model.threshold.mlp, &self.support_features)
    }

    /// `(n_est, t_est)` for query `qi` given its scores and the support codes.
    pub fn estimates(&self, model: &ModelParams, codes: &[Vec<f64>], qi: usize, scores: &[f64]) -> Result<(f64, f64)> {
        let th = &model.threshold;
        let q = th.mlp.forward(&self.queries[qi].features)?;
        let w = kernel::normalized_weights(&q, codes, th.lambda());
        let counts = self.support_counts();
        let n_est = kernel::weighted_count(&w, &counts);
        let t: Vec<f64> = counts
            .iter()
            .map(|&c| kth_score_threshold(scores, c, th.epsilon))
            .collect::<Result<_>>()?;
        Ok((n_est, kernel::weighted_average(&w, &t)))
    }

    fn decide_with(&self, model: &ModelParams, codes: &[Vec<f64>], qi: usize, scores: &[f64], mode: Mode) -> Result<Decision> {
        let th = &model.threshold;
        let (n_est, t_est) = self.estimates(model, codes, qi, scores)?;
        let t_meta = meta_threshold(scores, th.r)?;
        decide(scores, t_meta, t_est, n_est, th.alpha, th.epsilon, mode)
    }

    pub fn decide_query(&self, model: &ModelParams, qi: usize, scores: &[f64], mode: Mode) -> Result<Decision> {
        let codes = self.support_codes(model)?;
        self.decide_with(model, &codes, qi, scores, mode)
    }

    /// Decisions for every query given precomputed scores.
    pub fn decide_all(&self, model: &ModelParams, scores: &[Vec<f64>], mode: Mode) -> Result<Vec<Decision>> {
        let codes = self.support_codes(model)?;
        scores
            .iter()
            .enumerate()
            .map(|(qi, s)| self.decide_with(model, &codes, qi, s, mode))
            .collect()
    }

    pub fn golds(&self) -> Vec<Vec<usize>> {
        self.queries.iter().map(|q| q.gold.clone()).collect()
    }
}
