//! Token embeddings: the FSML interchange format and a deterministic toy embedder.
//!
//! FSML layout (all integers little-endian):
//!
//! ```text
//! b"FSML" | u32 version = 1 | u32 dim | record*
//! record := u8 kind (0 utterance, 1 label) | u16 id_len | id (UTF-8)
//!           | u32 n_vectors | n_vectors * dim * f32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, SplitMix64};

pub const MAGIC: &[u8; 4] = b"FSML";
pub const VERSION: u32 = 1;

const KIND_UTTERANCE: u8 = 0;
const KIND_LABEL: u8 = 1;

/// A `rows x dim` block of token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Mean of the rows, accumulated in f64.
pub fn sentence_embedding(vecs: &TokenMatrix) -> Result<Vec<f64>> {
    if vecs.rows == 0 {
        return Err(Error::Shape("sentence embedding of an empty matrix".into()));
    }
    let mut acc = vec![0.0f64; vecs.dim];
    for r in 0..vecs.rows {
        for (a, &x) in acc.iter_mut().zip(vecs.row(r)) {
            *a += x as f64;
        }
    }
    let n = vecs.rows as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    utterance_vecs: BTreeMap<String, TokenMatrix>,
    label_vecs: BTreeMap<String, TokenMatrix>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Embedding("dim must be positive".into()));
        }
        Ok(Self {
            dim,
            ..Default::default()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.utterance_vecs.len() + self.label_vecs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, m: &TokenMatrix) -> Result<()> {
        if m.dim != self.dim {
            return Err(Error::Shape(format!(
                "matrix has {} columns, table dim is {}",
                m.dim, self.dim
            )));
        }
        if m.rows == 0 {
            return Err(Error::Embedding("record with zero vectors".into()));
        }
        Ok(())
    }

    /// Inserts an utterance matrix. Re-inserting identical content is a no-op;
    /// conflicting content under one id is an error.
    pub fn insert_utterance(&mut self, id: impl Into<String>, m: TokenMatrix) -> Result<()> {
        self.check(&m)?;
        insert_unique(&mut self.utterance_vecs, id.into(), m, "utterance")
    }

    pub fn insert_label(&mut self, name: impl Into<String>, m: TokenMatrix) -> Result<()> {
        self.check(&m)?;
        insert_unique(&mut self.label_vecs, name.into(), m, "label")
    }

    pub fn utterance(&self, id: &str) -> Result<&TokenMatrix> {
        self.utterance_vecs.get(id).ok_or_else(|| Error::MissingEmbedding {
            kind: "utterance",
            id: id.to_string(),
        })
    }

    pub fn label(&self, name: &str) -> Result<&TokenMatrix> {
        self.label_vecs.get(name).ok_or_else(|| Error::MissingEmbedding {
            kind: "label",
            id: name.to_string(),
        })
    }

    pub fn utterance_ids(&self) -> impl Iterator<Item = &str> {
        self.utterance_vecs.keys().map(String::as_str)
    }

    pub fn label_names(&self) -> impl Iterator<Item = &str> {
        self.label_vecs.keys().map(String::as_str)
    }

    pub fn sentence(&self, id: &str) -> Result<Vec<f64>> {
        sentence_embedding(self.utterance(id)?)
    }

    /// Checks that every utterance and label of `domains` has an entry.
    pub fn bind(&self, domains: &[Domain]) -> Result<()> {
        for d in domains {
            for name in d.label_space.names() {
                self.label(name)?;
            }
            for lu in &d.pool {
                self.utterance(lu.id())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        let records = self
            .utterance_vecs
            .iter()
            .map(|(k, m)| (KIND_UTTERANCE, k, m))
            .chain(self.label_vecs.iter().map(|(k, m)| (KIND_LABEL, k, m)));
        for (kind, id, m) in records {
            out.push(kind);
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(m.rows as u32).to_le_bytes());
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Embedding(format!("bad magic {magic:?}")));
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(Error::Embedding(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let dim = cur.u32("dim")? as usize;
        let mut table = EmbeddingTable::new(dim)?;
        while cur.pos < bytes.len() {
            let start = cur.pos;
            let kind = cur.take(1, "record kind")?[0];
            let id_len = cur.u16("id length")? as usize;
            let id = std::str::from_utf8(cur.take(id_len, "id")?)
                .map_err(|_| Error::Embedding(format!("id at byte offset {} is not UTF-8", start + 3)))?
                .to_string();
            let n = cur.u32("vector count")? as usize;
            let payload = cur.take(n * dim * 4, "vector payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let m = TokenMatrix::new(n, dim, data)?;
            let dup = match kind {
                KIND_UTTERANCE => table.utterance_vecs.contains_key(&id),
                KIND_LABEL => table.label_vecs.contains_key(&id),
                k => {
                    return Err(Error::Embedding(format!(
                        "unknown record kind {k} at byte offset {start}"
                    )))
                }
            };
            if dup {
                return Err(Error::Embedding(format!(
                    "duplicate id '{id}' at byte offset {start}"
                )));
            }
            if kind == KIND_UTTERANCE {
                table.insert_utterance(id, m)?;
            } else {
                table.insert_label(id, m)?;
            }
        }
        Ok(table)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn insert_unique(
    map: &mut BTreeMap<String, TokenMatrix>,
    id: String,
    m: TokenMatrix,
    kind: &'static str,
) -> Result<()> {
    match map.get(&id) {
        Some(existing) if *existing == m => Ok(()),
        Some(_) => Err(Error::Embedding(format!("conflicting {kind} entries for '{id}'"))),
        None => {
            map.insert(id, m);
            Ok(())
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos,
                what,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let bytes = fs::read(path)?;
    EmbeddingTable::from_bytes(&bytes)
}

/// Deterministic unit-norm token vectors.
///
/// Each token seeds a SplitMix64 stream with `fnv1a64(token) ^ seed`; every
/// coordinate is a sum of 12 uniforms minus 6 (approximately standard
/// normal), and the row is scaled to unit L2 norm.
pub fn toy_embed(tokens: &[String], dim: usize, seed: u64) -> Result<TokenMatrix> {
    if dim < 2 {
        return Err(Error::InvalidParam(format!("toy embedding dim must be >= 2, got {dim}")));
    }
    let mut data = Vec::with_capacity(tokens.len() * dim);
    for tok in tokens {
        let mut sm = SplitMix64::new(fnv1a64(tok.as_bytes()) ^ seed);
        let v: Vec<f64> = (0..dim)
            .map(|_| (0..12).map(|_| sm.next_f64()).sum::<f64>() - 6.0)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| (x / norm) as f32));
    }
    TokenMatrix::new(tokens.len(), dim, data)
}

/// Toy-embeds every utterance and label name of `domains`.
pub fn embed_corpus_toy(domains: &[Domain], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(dim)?;
    for d in domains {
        for lu in &d.pool {
            let m = toy_embed(&lu.utterance.tokens, dim, seed)?;
            table.insert_utterance(lu.id(), m)?;
        }
        for (i, name) in d.label_space.names().iter().enumerate() {
            let m = toy_embed(d.label_space.name_tokens(i), dim, seed)?;
            table.insert_label(name.clone(), m)?;
        }
    }
    Ok(table)
}

/// Mean of the label's name-token vectors.
pub fn label_name_embedding(label: &str, table: &EmbeddingTable) -> Result<Vec<f64>> {
    sentence_embedding(table.label(label)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec};
    use crate::linalg::{dot, norm};
    use proptest::prelude::*;

    fn toks(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn toy_same_token_same_row() {
        let m = toy_embed(&toks(&["a", "a"]), 8, 1).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn toy_rows_unit_norm() {
        let m = toy_embed(&toks(&["a", "bc", "hello", "?"]), 16, 9).unwrap();
        for r in 0..m.rows() {
            let n: f64 = m.row(r).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn toy_seed_sensitivity_and_dim_guard() {
        let a = toy_embed(&toks(&["a"]), 8, 1).unwrap();
        let b = toy_embed(&toks(&["a"]), 8, 2).unwrap();
        assert_ne!(a, b);
        assert!(toy_embed(&toks(&["a"]), 1, 1).is_err());
    }

    #[test]
    fn sentence_embedding_mean() {
        let m = TokenMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(sentence_embedding(&m).unwrap(), vec![0.5, 0.5]);
        let single = TokenMatrix::from_rows(&[vec![0.25, -3.0]]).unwrap();
        assert_eq!(sentence_embedding(&single).unwrap(), vec![0.25, -3.0]);
        let empty = TokenMatrix::new(0, 2, vec![]).unwrap();
        assert!(sentence_embedding(&empty).is_err());
    }

    #[test]
    fn sentence_embedding_matches_sum_oracle() {
        let m = toy_embed(&toks(&["x", "y", "z"]), 12, 5).unwrap();
        let got = sentence_embedding(&m).unwrap();
        for c in 0..12 {
            let mut s = 0.0f64;
            for r in 0..3 {
                s += m.row(r)[c] as f64;
            }
            assert!((got[c] - s / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn label_name_embedding_is_name_token_mean() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert_label("greet", TokenMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap())
            .unwrap();
        t.insert_label(
            "query_time",
            TokenMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(label_name_embedding("greet", &t).unwrap(), vec![0.5, 0.5]);
        assert_eq!(label_name_embedding("query_time", &t).unwrap(), vec![0.5, 1.5]);
        assert!(matches!(
            label_name_embedding("nope", &t),
            Err(Error::MissingEmbedding { .. })
        ));
    }

    #[test]
    fn synthetic_label_anchors_are_distinct() {
        let d = generate_synthetic(&SynthSpec::default(), 4).unwrap();
        let t = embed_corpus_toy(std::slice::from_ref(&d), 32, 1).unwrap();
        let anchors: Vec<Vec<f64>> = d
            .label_space
            .names()
            .iter()
            .map(|n| label_name_embedding(n, &t).unwrap())
            .collect();
        for i in 0..anchors.len() {
            for j in i + 1..anchors.len() {
                let cos = dot(&anchors[i], &anchors[j]) / (norm(&anchors[i]) * norm(&anchors[j]));
                assert!(cos < 1.0 - 1e-6, "labels {i} and {j}");
            }
        }
    }

    #[test]
    fn parse_single_record() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FSML");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(b"u1");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for v in 0..8 {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let t = EmbeddingTable::from_bytes(&bytes).unwrap();
        let m = t.utterance("u1").unwrap();
        assert_eq!((m.rows(), m.dim()), (2, 4));
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.to_bytes(), bytes);

        let err = EmbeddingTable::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Truncated { offset: 21, .. }), "{err}");
        assert!(err.to_string().contains("byte offset 21"));
    }

    #[test]
    fn header_and_duplicate_errors() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert_utterance("a", TokenMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap())
            .unwrap();
        let bytes = t.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EmbeddingTable::from_bytes(&bad).unwrap_err().to_string().contains("magic"));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(EmbeddingTable::from_bytes(&bad).unwrap_err().to_string().contains("version"));

        let mut dup = bytes.clone();
        dup.extend_from_slice(&bytes[12..]);
        assert!(EmbeddingTable::from_bytes(&dup).unwrap_err().to_string().contains("duplicate id 'a'"));

        assert!(t
            .insert_utterance("a", TokenMatrix::from_rows(&[vec![9.0, 2.0]]).unwrap())
            .is_err());
    }

    proptest! {
        #[test]
        fn fsml_round_trip_is_bit_exact(
            dim in 1usize..6,
            recs in proptest::collection::vec((any::<bool>(), "[a-z]{1,6}", 1usize..4), 1..6),
            bits in proptest::collection::vec(any::<u32>(), 200),
        ) {
            let mut t = EmbeddingTable::new(dim).unwrap();
            let mut k = 0;
            for (is_label, id, rows) in recs {
                let data: Vec<f32> = (0..rows * dim).map(|_| { k += 1; f32::from_bits(bits[k % bits.len()]) }).collect();
                let m = TokenMatrix::new(rows, dim, data).unwrap();
                if is_label { let _ = t.label_vecs.entry(id).or_insert(m); }
                else { let _ = t.utterance_vecs.entry(id).or_insert(m); }
            }
            let back = EmbeddingTable::from_bytes(&t.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), t.to_bytes());
            for (id, m) in &t.utterance_vecs {
                let b = back.utterance(id).unwrap();
                prop_assert!(m.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }

        #[test]
        fn sentence_embedding_permutation_invariant(rows in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 3), 1..8), rot in 0usize..8) {
            let m = TokenMatrix::from_rows(&rows).unwrap();
            let mut shuffled = rows.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            shuffled.reverse();
            let a = sentence_embedding(&m).unwrap();
            let b = sentence_embedding(&TokenMatrix::from_rows(&shuffled).unwrap()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
