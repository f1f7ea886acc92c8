//! Surface features that track how many intents an utterance carries.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::corpus::Utterance;
use crate::error::Result;

/// Fixed scale applied to raw counts before the feature MLP.
pub const FEATURE_SCALE: f64 = 10.0;

pub const N_FEATURES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub conjunctions: HashSet<String>,
    pub verbs: HashSet<String>,
    pub interrogatives: HashSet<String>,
}

fn parse_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Lexicons {
    /// The lexicons shipped with the crate.
    pub fn builtin() -> Self {
        Self {
            conjunctions: parse_list(include_str!("../../lexicons/conjunctions.txt")),
            verbs: parse_list(include_str!("../../lexicons/verbs.txt")),
            interrogatives: parse_list(include_str!("../../lexicons/interrogatives.txt")),
        }
    }

    /// Reads `conjunctions.txt`, `verbs.txt` and `interrogatives.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<HashSet<String>> { Ok(parse_list(&fs::read_to_string(dir.join(name))?)) };
        Ok(Self {
            conjunctions: read("conjunctions.txt")?,
            verbs: read("verbs.txt")?,
            interrogatives: read("interrogatives.txt")?,
        })
    }
}

impl Default for Lexicons {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RawFeatures {
    pub length: usize,
    pub conjunctions: usize,
    pub predicates: usize,
    pub punctuation: usize,
    pub interrogatives: usize,
}

impl RawFeatures {
    pub fn to_array(self) -> [usize; N_FEATURES] {
        [
            self.length,
            self.conjunctions,
            self.predicates,
            self.punctuation,
            self.interrogatives,
        ]
    }

    /// Counts divided by [`FEATURE_SCALE`]; the MLP input.
    pub fn scaled(self) -> [f64; N_FEATURES] {
        self.to_array().map(|c| c as f64 / FEATURE_SCALE)
    }
}

pub fn is_punctuation(token: &str) -> bool {
    (!token.is_empty() && token.chars().all(|c| c.is_ascii_punctuation()))
        || token.ends_with(['.', ',', '!', '?', ';'])
}

pub fn extract_features(u: &Utterance, lex: &Lexicons) -> RawFeatures {
    let count = |set: &HashSet<String>| u.tokens.iter().filter(|t| set.contains(t.as_str())).count();
    RawFeatures {
        length: u.tokens.len(),
        conjunctions: count(&lex.conjunctions),
        predicates: count(&lex.verbs),
        punctuation: u.tokens.iter().filter(|t| is_punctuation(t)).count(),
        interrogatives: count(&lex.interrogatives),
    }
}
