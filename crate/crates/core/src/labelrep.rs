//! Prototype and anchored label representations.
//!
//! A prototype is the mean (optionally projected) sentence embedding of the
//! support items carrying the label. The anchored representation pulls it
//! toward the label-name embedding: `beta * anchor + (1 - beta) * prototype`.

use crate::corpus::LabelSpace;
use crate::embeddings::{label_name_embedding, EmbeddingTable};
use crate::episodes::SupportSet;
use crate::error::{Error, Result};
use crate::linalg::{lerp, mean_of, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelReps {
    pub prototypes: Vec<Vec<f64>>,
    pub anchored: Vec<Vec<f64>>,
    /// Support items carrying each label.
    pub counts: Vec<usize>,
    pub beta: f64,
}

pub(crate) fn project(proj: Option<&Mat>, v: Vec<f64>) -> Result<Vec<f64>> {
    match proj {
        None => Ok(v),
        Some(w) if w.cols == v.len() => Ok(w.matvec(&v)),
        Some(w) => Err(Error::Shape(format!(
            "projection expects {} inputs, embedding has {}",
            w.cols,
            v.len()
        ))),
    }
}

pub fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("beta {beta} outside [0, 1]")))
    }
}

pub fn prototype(
    label_index: usize,
    support: &SupportSet,
    label_space: &LabelSpace,
    table: &EmbeddingTable,
    proj: Option<&Mat>,
) -> Result<Vec<f64>> {
    let name = label_space.name(label_index);
    let members = support
        .items
        .iter()
        .filter(|lu| lu.labels.iter().any(|l| l == name))
        .map(|lu| project(proj, table.sentence(lu.id())?))
        .collect::<Result<Vec<_>>>()?;
    if members.is_empty() {
        return Err(Error::InvalidParam(format!(
            "label '{name}' has no support items"
        )));
    }
    Ok(mean_of(members.iter().map(Vec::as_slice)))
}

/// The label-name embedding, projected like sentence embeddings.
pub fn anchor(label_index: usize, label_space: &LabelSpace, table: &EmbeddingTable, proj: Option<&Mat>) -> Result<Vec<f64>> {
    project(proj, label_name_embedding(label_space.name(label_index), table)?)
}

pub fn anchored_rep(
    label_index: usize,
    support: &SupportSet,
    label_space: &LabelSpace,
    table: &EmbeddingTable,
    beta: f64,
    proj: Option<&Mat>,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let a = anchor(label_index, label_space, table, proj)?;
    let c = prototype(label_index, support, label_space, table, proj)?;
    Ok(lerp(&a, &c, beta))
}

/// Representations for every label of the space.
pub fn label_reps(
    support: &SupportSet,
    label_space: &LabelSpace,
    table: &EmbeddingTable,
    beta: f64,
    proj: Option<&Mat>,
) -> Result<LabelReps> {
    check_beta(beta)?;
    let mut reps = LabelReps {
        prototypes: Vec::with_capacity(label_space.len()),
        anchored: Vec::with_capacity(label_space.len()),
        counts: Vec::with_capacity(label_space.len()),
        beta,
    };
    for i in 0..label_space.len() {
        let c = prototype(i, support, label_space, table, proj)?;
        let a = anchor(i, label_space, table, proj)?;
        let name = label_space.name(i);
        reps.counts
            .push(support.items.iter().filter(|lu| lu.labels.iter().any(|l| l == name)).count());
        reps.anchored.push(lerp(&a, &c, beta));
        reps.prototypes.push(c);
    }
    Ok(reps)
}
