//! Multi-label corpora partitioned into domains.
//!
//! On disk a corpus is a directory with one subdirectory per domain, each
//! holding `labels.json` (`{"domain": .., "labels": [..]}`) and `data.jsonl`
//! (one `{"id", "text", "tokens", "labels"}` object per line).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledUtterance {
    pub utterance: Utterance,
    pub labels: Vec<String>,
}

impl LabeledUtterance {
    pub fn id(&self) -> &str {
        &self.utterance.id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    names: Vec<String>,
    name_tokens: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        let mut name_tokens = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidParam(format!("duplicate label name '{name}'")));
            }
            let toks = tokenize_label_name(name);
            if toks.is_empty() {
                return Err(Error::InvalidParam(format!(
                    "label name '{name}' has no tokens"
                )));
            }
            name_tokens.push(toks);
        }
        Ok(Self {
            names,
            name_tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn name_tokens(&self, i: usize) -> &[String] {
        &self.name_tokens[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Label indices of `labels`, in the given order. Unknown names are an error.
    pub fn indices(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| Error::InvalidParam(format!("unknown label '{l}'")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub name: String,
    pub label_space: LabelSpace,
    pub pool: Vec<LabeledUtterance>,
}

impl Domain {
    /// Builds a domain and checks every invariant: unique ids, non-empty
    /// tokens, non-empty duplicate-free label sets drawn from the label space,
    /// and every label covered by the pool.
    pub fn new(name: String, label_space: LabelSpace, pool: Vec<LabeledUtterance>) -> Result<Self> {
        let origin = PathBuf::from(&name);
        let mut seen = HashSet::new();
        let mut covered = vec![false; label_space.len()];
        for (i, lu) in pool.iter().enumerate() {
            let line = Some(i + 1);
            validate_record(lu, &label_space, &origin, line)?;
            if !seen.insert(lu.id()) {
                return Err(Error::corpus(&origin, line, format!("duplicate id '{}'", lu.id())));
            }
            for l in &lu.labels {
                covered[label_space.index_of(l).unwrap()] = true;
            }
        }
        if let Some(missing) = covered.iter().position(|c| !c) {
            return Err(Error::corpus(
                &origin,
                None,
                format!("label '{}' never appears in the pool", label_space.name(missing)),
            ));
        }
        Ok(Self {
            name,
            label_space,
            pool,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.label_space.len()
    }

    pub fn label_indices(&self, lu: &LabeledUtterance) -> Vec<usize> {
        lu.labels
            .iter()
            .map(|l| self.label_space.index_of(l).expect("validated label"))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledUtterance> {
        self.pool.iter().find(|lu| lu.id() == id)
    }

    /// Map from utterance id to pool position.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.pool.iter().enumerate().map(|(i, lu)| (lu.id(), i)).collect()
    }

    /// Number of pool utterances carrying each label, in label-space order.
    pub fn label_frequencies(&self) -> Vec<usize> {
        let mut freq = vec![0; self.n_labels()];
        for lu in &self.pool {
            for i in self.label_indices(lu) {
                freq[i] += 1;
            }
        }
        freq
    }
}

fn validate_record(lu: &LabeledUtterance, ls: &LabelSpace, file: &Path, line: Option<usize>) -> Result<()> {
    if lu.utterance.id.is_empty() {
        return Err(Error::corpus(file, line, "empty id"));
    }
    if lu.utterance.tokens.is_empty() {
        return Err(Error::corpus(
            file,
            line,
            format!("utterance '{}' has no tokens", lu.id()),
        ));
    }
    if lu.labels.is_empty() {
        return Err(Error::corpus(
            file,
            line,
            format!("utterance '{}' has no labels", lu.id()),
        ));
    }
    let mut seen = HashSet::new();
    for l in &lu.labels {
        if ls.index_of(l).is_none() {
            return Err(Error::corpus(
                file,
                line,
                format!("label '{l}' of utterance '{}' is not in the label space", lu.id()),
            ));
        }
        if !seen.insert(l) {
            return Err(Error::corpus(
                file,
                line,
                format!("label '{l}' repeated in utterance '{}'", lu.id()),
            ));
        }
    }
    Ok(())
}

/// Whitespace split, then lowercase. Punctuation is kept as written.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Splits a label name on underscores, hyphens and whitespace, lowercased.
pub fn tokenize_label_name(name: &str) -> Vec<String> {
    name.split(|c: char| c == '_' || c == '-' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsFile {
    domain: String,
    labels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    tokens: Vec<String>,
    labels: Vec<String>,
}

/// Loads every domain under `path`.
///
/// `path` is either a single domain directory (containing `labels.json`) or a
/// directory of domain directories, visited in lexicographic order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Domain>> {
    let path = path.as_ref();
    if path.join("labels.json").is_file() {
        return Ok(vec![load_domain(path)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::corpus(path, None, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("labels.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::corpus(path, None, "no domain directories with labels.json"));
    }
    dirs.iter().map(|d| load_domain(d)).collect()
}

pub fn load_domain(dir: &Path) -> Result<Domain> {
    let labels_path = dir.join("labels.json");
    let raw = fs::read_to_string(&labels_path).map_err(|e| Error::corpus(&labels_path, None, e.to_string()))?;
    let lf: LabelsFile =
        serde_json::from_str(&raw).map_err(|e| Error::corpus(&labels_path, Some(e.line()), e.to_string()))?;
    let label_space = LabelSpace::new(lf.labels).map_err(|e| Error::corpus(&labels_path, None, e.to_string()))?;

    let data_path = dir.join("data.jsonl");
    let raw = fs::read_to_string(&data_path).map_err(|e| Error::corpus(&data_path, None, e.to_string()))?;
    let mut pool = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let lineno = Some(i + 1);
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(line).map_err(|e| Error::corpus(&data_path, lineno, e.to_string()))?;
        let mut tokens = Vec::with_capacity(rec.tokens.len());
        for t in &rec.tokens {
            tokens.extend(tokenize(t));
        }
        let lu = LabeledUtterance {
            utterance: Utterance {
                id: rec.id,
                tokens,
                text: rec.text,
            },
            labels: rec.labels,
        };
        validate_record(&lu, &label_space, &data_path, lineno)?;
        if !seen.insert(lu.id().to_string()) {
            return Err(Error::corpus(&data_path, lineno, format!("duplicate id '{}'", lu.id())));
        }
        pool.push(lu);
    }
    Domain::new(lf.domain, label_space, pool).map_err(|e| match e {
        Error::Corpus { msg, .. } => Error::corpus(&data_path, None, msg),
        other => other,
    })
}

/// Writes each domain to `dir/<domain name>/{labels.json,data.jsonl}`.
pub fn save_corpus(domains: &[Domain], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for d in domains {
        let ddir = dir.join(&d.name);
        fs::create_dir_all(&ddir)?;
        let lf = LabelsFile {
            domain: d.name.clone(),
            labels: d.label_space.names().to_vec(),
        };
        fs::write(ddir.join("labels.json"), serde_json::to_string_pretty(&lf)? + "\n")?;
        let mut out = std::io::BufWriter::new(fs::File::create(ddir.join("data.jsonl"))?);
        for lu in &d.pool {
            let rec = Record {
                id: lu.utterance.id.clone(),
                text: lu.utterance.text.clone(),
                tokens: lu.utterance.tokens.clone(),
                labels: lu.labels.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    Ok(())
}

/// Shape of a generated domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub name: String,
    pub n_labels: usize,
    /// Private vocabulary size per label.
    pub vocab_per_label: usize,
    /// Shared filler vocabulary size.
    pub noise_vocab: usize,
    pub pool_size: usize,
    pub p_multi: f64,
    /// Inclusive range of content tokens drawn per label segment.
    pub tokens_per_label: (usize, usize),
    /// Probability that a content token comes from the label's private vocabulary.
    pub p_private: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            n_labels: 8,
            vocab_per_label: 12,
            noise_vocab: 16,
            pool_size: 400,
            p_multi: 0.2,
            tokens_per_label: (3, 6),
            p_private: 0.6,
        }
    }
}

pub(crate) const NAME_VERBS: &[&str] = &[
    "find", "book", "check", "cancel", "show", "set", "call", "play", "order", "send", "change", "add",
    "remove", "open", "close", "pay", "rent", "buy", "rate", "share", "track", "visit", "reserve", "update",
    "confirm", "request", "locate", "schedule", "compare", "report", "start", "stop",
];

const NAME_NOUNS: &[&str] = &[
    "hotel", "taxi", "weather", "meeting", "music", "alarm", "flight", "route", "restaurant", "ticket",
    "museum", "train", "parking", "menu", "price", "room", "reminder", "contact", "message", "event",
    "traffic", "shop", "movie", "bus", "temperature", "account", "bill", "gift", "tour", "address", "beach",
    "coupon",
];

pub(crate) const FILLERS: &[&str] = &[
    "please", "the", "a", "to", "for", "me", "my", "i", "you", "it", "here", "in", "on", "this", "that", "some",
    "today", "now", "there", "just", "really", "very", "of", "with", "at", "by", "from", "again",
];

const INTERROGATIVES: &[&str] = &["what", "where", "when", "how", "which"];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "tu", "ve", "zo", "pi", "ne", "su", "da", "go", "fe", "hu", "ji", "ba", "ro", "yi",
    "co", "xa", "wu", "qe", "ly", "mo",
];

fn pseudo_word(rng: &mut impl rand::Rng, taken: &mut HashSet<String>) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if !taken.contains(&w) {
            taken.insert(w.clone());
            return w;
        }
    }
}

/// Generates a synthetic domain.
///
/// Label names are `verb_noun` pairs; every segment for a label mixes its
/// name tokens, its private vocabulary and shared fillers. A multi-label
/// utterance concatenates 2-3 segments, joined by "and" with probability 0.5
/// per junction, so the surface features track the label count.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Domain> {
    let n = spec.n_labels;
    if n < 2 {
        return Err(Error::Spec(format!("n_labels must be >= 2, got {n}")));
    }
    if n > NAME_VERBS.len().min(NAME_NOUNS.len()) {
        return Err(Error::Spec(format!(
            "n_labels must be <= {}, got {n}",
            NAME_VERBS.len().min(NAME_NOUNS.len())
        )));
    }
    if spec.vocab_per_label == 0 || spec.noise_vocab == 0 {
        return Err(Error::Spec("vocabularies must be non-empty".into()));
    }
    if spec.pool_size < n {
        return Err(Error::Spec(format!(
            "pool_size {} must be at least n_labels {n}",
            spec.pool_size
        )));
    }
    if !(0.0..=1.0).contains(&spec.p_multi) || !(0.0..=1.0).contains(&spec.p_private) {
        return Err(Error::Spec("probabilities must lie in [0, 1]".into()));
    }
    let (tmin, tmax) = spec.tokens_per_label;
    if tmin > tmax {
        return Err(Error::Spec("tokens_per_label min exceeds max".into()));
    }

    let mut rng = rng_from(seed, &format!("synth:{}", spec.name));

    let mut verbs = NAME_VERBS.to_vec();
    let mut nouns = NAME_NOUNS.to_vec();
    verbs.shuffle(&mut rng);
    nouns.shuffle(&mut rng);
    let names: Vec<String> = (0..n).map(|i| format!("{}_{}", verbs[i], nouns[i])).collect();
    let label_space = LabelSpace::new(names)?;

    let mut taken: HashSet<String> = NAME_VERBS
        .iter()
        .chain(NAME_NOUNS)
        .chain(FILLERS)
        .chain(INTERROGATIVES)
        .map(|s| s.to_string())
        .collect();
    taken.insert("and".into());
    let private: Vec<Vec<String>> = (0..n)
        .map(|_| (0..spec.vocab_per_label).map(|_| pseudo_word(&mut rng, &mut taken)).collect())
        .collect();
    let mut noise: Vec<String> = FILLERS.iter().take(spec.noise_vocab).map(|s| s.to_string()).collect();
    while noise.len() < spec.noise_vocab {
        noise.push(pseudo_word(&mut rng, &mut taken));
    }

    let segment = |label: usize, rng: &mut crate::rng::Rng| -> Vec<String> {
        let mut seg = Vec::new();
        let question = rng.gen_bool(0.3);
        if question {
            seg.push(INTERROGATIVES.choose(rng).unwrap().to_string());
        }
        let mut content: Vec<String> = Vec::new();
        for tok in label_space.name_tokens(label) {
            if rng.gen_bool(0.7) {
                content.push(tok.clone());
            }
        }
        let m = rng.gen_range(tmin..=tmax);
        for _ in 0..m {
            let w = if rng.gen_bool(spec.p_private) {
                private[label].choose(rng).unwrap()
            } else {
                noise.choose(rng).unwrap()
            };
            content.push(w.clone());
        }
        if content.is_empty() {
            content.push(private[label].choose(rng).unwrap().clone());
        }
        content.shuffle(rng);
        seg.extend(content);
        if rng.gen_bool(0.4) {
            seg.push(if question { "?" } else { "." }.to_string());
        }
        seg
    };

    let mut drafts: Vec<(Vec<usize>, Vec<String>)> = Vec::with_capacity(spec.pool_size);
    for i in 0..spec.pool_size {
        let primary = i % n;
        let mut labels = vec![primary];
        if rng.gen_bool(spec.p_multi) {
            let extra = if n >= 3 && rng.gen_bool(0.3) { 2 } else { 1 };
            let mut others: Vec<usize> = (0..n).filter(|&l| l != primary).collect();
            others.shuffle(&mut rng);
            labels.extend(others.into_iter().take(extra));
        }
        labels.shuffle(&mut rng);
        let mut tokens = Vec::new();
        for (j, &l) in labels.iter().enumerate() {
            if j > 0 && rng.gen_bool(0.5) {
                tokens.push("and".to_string());
            }
            tokens.extend(segment(l, &mut rng));
        }
        labels.sort_unstable();
        drafts.push((labels, tokens));
    }
    drafts.shuffle(&mut rng);

    let width = spec.pool_size.to_string().len();
    let pool = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (labels, tokens))| LabeledUtterance {
            utterance: Utterance {
                id: format!("{}-{:0width$}", spec.name, i),
                text: tokens.join(" "),
                tokens,
            },
            labels: labels.iter().map(|&l| label_space.name(l).to_string()).collect(),
        })
        .collect();
    Domain::new(spec.name.clone(), label_space, pool)
}
