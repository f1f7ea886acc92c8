//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use fsml_core::corpus::{LabelSpace, LabeledUtterance, Utterance};
use fsml_core::embeddings::{EmbeddingTable, TokenMatrix};
use fsml_core::episodes::SupportSet;
use fsml_core::thresholding::mlp::Mlp;
use rand::Rng;

pub fn utt(id: &str, text: &str) -> Utterance {
    Utterance {
        id: id.to_string(),
        tokens: text.split_whitespace().map(str::to_string).collect(),
        text: text.to_string(),
    }
}

pub fn item(id: &str, text: &str, labels: &[&str]) -> LabeledUtterance {
    LabeledUtterance {
        utterance: utt(id, text),
        labels: labels.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn space(names: &[&str]) -> LabelSpace {
    LabelSpace::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn support(items: Vec<LabeledUtterance>, k: usize) -> SupportSet {
    SupportSet { items, k }
}

/// Inserts `row` as every token vector of `id`, so its sentence embedding is `row`.
pub fn put_utterance(table: &mut EmbeddingTable, u: &Utterance, row: &[f32]) {
    let rows = vec![row.to_vec(); u.tokens.len()];
    table.insert_utterance(u.id.clone(), TokenMatrix::from_rows(&rows).unwrap()).unwrap();
}

pub fn put_label(table: &mut EmbeddingTable, name: &str, row: &[f32]) {
    table
        .insert_label(name.to_string(), TokenMatrix::from_rows(&[row.to_vec()]).unwrap())
        .unwrap();
}

/// Affine + ReLU stack evaluated with explicit loops.
pub fn oracle_mlp(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for l in &mlp.layers {
        let mut next = vec![0.0; l.outputs];
        for o in 0..l.outputs {
            let mut z = l.bias[o];
            for i in 0..l.inputs {
                z += l.weights[o * l.inputs + i] * cur[i];
            }
            next[o] = if z > 0.0 { z } else { 0.0 };
        }
        cur = next;
    }
    cur
}

/// Unshifted Gaussian-kernel weighted average.
pub fn oracle_kernel_average(query: &[f64], codes: &[Vec<f64>], values: &[f64], lambda: f64) -> f64 {
    let mut num = 0.0;
    let mut z = 0.0;
    for (c, v) in codes.iter().zip(values) {
        let d: f64 = query.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = (-d / lambda).exp();
        num += w * v;
        z += w;
    }
    num / z
}

/// The `(n + 1)`-th largest score, or just below the minimum when there is none.
pub fn oracle_kth(scores: &[f64], n: usize, eps: f64) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if n < s.len() {
        s[n]
    } else {
        let m = *s.last().unwrap();
        m - eps * (1.0 + m.abs())
    }
}

/// Token bank mixing lexicon hits with neutral words.
pub const TOKENS: [&str; 16] = [
    "what", "and", "book", "?", "where", "or", "play", "flight", "music", "tomorrow", "please", ".", "how", "cancel", "city", "then",
];

/// A support set over `n_labels` labels with random texts, each label covered at least once.
pub fn random_support<R: Rng>(rng: &mut R, n_labels: usize, n_items: usize) -> (LabelSpace, SupportSet) {
    let names: Vec<String> = (0..n_labels).map(|i| format!("label_{i}")).collect();
    let ls = LabelSpace::new(names.clone()).unwrap();
    let items = (0..n_items.max(n_labels))
        .map(|j| {
            let mut labels = vec![names[j % n_labels].clone()];
            let extra = rng.gen_range(0..n_labels.min(3));
            for _ in 0..extra {
                let l = names[rng.gen_range(0..n_labels)].clone();
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
            LabeledUtterance {
                utterance: random_utterance(rng, &format!("s{j}")),
                labels,
            }
        })
        .collect();
    (ls, support(items, 1))
}

pub fn random_utterance<R: Rng>(rng: &mut R, id: &str) -> Utterance {
    let len = rng.gen_range(1..12);
    let text = (0..len)
        .map(|_| TOKENS[rng.gen_range(0..TOKENS.len())])
        .collect::<Vec<_>>()
        .join(" ");
    utt(id, &text)
}
