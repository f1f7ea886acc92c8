//! Label-instance relevance scores.

use crate::corpus::{LabelSpace, Utterance};
use crate::embeddings::EmbeddingTable;
use crate::episodes::SupportSet;
use crate::error::{Error, Result};
use crate::labelrep::{project, LabelReps};
use crate::linalg::{dot, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScores {
    pub query_id: String,
    /// One score per label, in label-space order.
    pub scores: Vec<f64>,
}

impl RelevanceScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn finite(query: &Utterance, scores: Vec<f64>) -> Result<RelevanceScores> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite score for label {i} of query '{}'",
            query.id
        )));
    }
    Ok(RelevanceScores {
        query_id: query.id.clone(),
        scores,
    })
}

/// Dot product of the (projected) query embedding with every anchored representation.
///
/// With `beta = 0` in `reps` this is the plain prototypical scorer.
pub fn relevance_scores(
    query: &Utterance,
    reps: &LabelReps,
    table: &EmbeddingTable,
    proj: Option<&Mat>,
) -> Result<RelevanceScores> {
    let q = project(proj, table.sentence(&query.id)?)?;
    let scores = reps.anchored.iter().map(|c| dot(&q, c)).collect();
    finite(query, scores)
}

/// Matching-network style scores: for each label, the mean dot product
/// between the query and each support item carrying that label.
pub fn matching_scores(
    query: &Utterance,
    support: &SupportSet,
    label_space: &LabelSpace,
    table: &EmbeddingTable,
    proj: Option<&Mat>,
) -> Result<RelevanceScores> {
    let q = project(proj, table.sentence(&query.id)?)?;
    let mut sums = vec![0.0; label_space.len()];
    let mut counts = vec![0usize; label_space.len()];
    for lu in &support.items {
        let e = project(proj, table.sentence(lu.id())?)?;
        let s = dot(&q, &e);
        for l in label_space.indices(&lu.labels)? {
            sums[l] += s;
            counts[l] += 1;
        }
    }
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidParam(format!(
            "label '{}' has no support items",
            label_space.name(l)
        )));
    }
    let scores = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    finite(query, scores)
}
