//! K-shot support sets and few-shot episodes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, LabeledUtterance};
use crate::error::{Error, Result};

/// Chance that an allowed removal is skipped while shrinking a support set.
pub const DEFAULT_SKIP_PROB: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub items: Vec<LabeledUtterance>,
    pub k: usize,
}

impl SupportSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(LabeledUtterance::id).collect()
    }

    /// Number of items carrying each label of `domain`, in label-space order.
    pub fn label_counts(&self, domain: &Domain) -> Vec<usize> {
        let mut counts = vec![0; domain.n_labels()];
        for lu in &self.items {
            for i in domain.label_indices(lu) {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Every label appears in at least `k` items.
    pub fn covers(&self, domain: &Domain) -> bool {
        self.label_counts(domain).iter().all(|&c| c >= self.k)
    }

    /// Removing any single item breaks coverage.
    pub fn is_minimal(&self, domain: &Domain) -> bool {
        let counts = self.label_counts(domain);
        self.items.iter().all(|lu| {
            domain
                .label_indices(lu)
                .iter()
                .any(|&i| counts[i] - 1 < self.k)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub domain_name: String,
    pub support: SupportSet,
    pub queries: Vec<LabeledUtterance>,
}

impl Episode {
    pub fn to_record(&self) -> EpisodeRecord {
        EpisodeRecord {
            domain: self.domain_name.clone(),
            k: self.support.k,
            support_ids: self.support.ids().into_iter().map(String::from).collect(),
            query_ids: self.queries.iter().map(|q| q.id().to_string()).collect(),
        }
    }
}

/// On-disk form of an episode: utterances are referenced by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub domain: String,
    pub k: usize,
    pub support_ids: Vec<String>,
    pub query_ids: Vec<String>,
}

impl EpisodeRecord {
    pub fn resolve(&self, domain: &Domain) -> Result<Episode> {
        if domain.name != self.domain {
            return Err(Error::InvalidParam(format!(
                "episode belongs to domain '{}', not '{}'",
                self.domain, domain.name
            )));
        }
        let idx = domain.id_index();
        let fetch = |id: &String| {
            idx.get(id.as_str())
                .map(|&i| domain.pool[i].clone())
                .ok_or_else(|| Error::InvalidParam(format!("unknown utterance id '{id}' in domain '{}'", domain.name)))
        };
        let support = self.support_ids.iter().map(fetch).collect::<Result<Vec<_>>>()?;
        let queries = self.query_ids.iter().map(fetch).collect::<Result<Vec<_>>>()?;
        let sids: HashSet<&str> = self.support_ids.iter().map(String::as_str).collect();
        if let Some(q) = self.query_ids.iter().find(|q| sids.contains(q.as_str())) {
            return Err(Error::InvalidParam(format!("query '{q}' is also in the support set")));
        }
        Ok(Episode {
            domain_name: self.domain.clone(),
            support: SupportSet {
                items: support,
                k: self.k,
            },
            queries,
        })
    }
}

pub fn write_episodes(episodes: &[Episode], path: impl AsRef<Path>) -> Result<()> {
    let recs: Vec<EpisodeRecord> = episodes.iter().map(Episode::to_record).collect();
    fs::write(path, serde_json::to_string_pretty(&recs)? + "\n")?;
    Ok(())
}

pub fn read_episode_records(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let raw = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&raw)?)
}

/// Minimum-including support set construction with the default 20% skip.
pub fn build_support_set<R: rand::Rng>(domain: &Domain, k: usize, rng: &mut R) -> Result<SupportSet> {
    build_support_set_with_skip(domain, k, DEFAULT_SKIP_PROB, rng)
}

/// Minimum-including support set construction.
///
/// The pool is shuffled, then utterances are added in that order whenever
/// they carry a label still short of `k` occurrences. A removal pass then
/// visits the chosen items by descending label count (ties in shuffled
/// order) and drops each one whose removal keeps every label at `k` or more,
/// except that each allowed removal is skipped with probability `skip_prob`.
pub fn build_support_set_with_skip<R: rand::Rng>(
    domain: &Domain,
    k: usize,
    skip_prob: f64,
    rng: &mut R,
) -> Result<SupportSet> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be positive".into()));
    }
    if !(0.0..=1.0).contains(&skip_prob) {
        return Err(Error::InvalidParam(format!("skip probability {skip_prob} outside [0, 1]")));
    }
    let freq = domain.label_frequencies();
    if let Some(i) = freq.iter().position(|&f| f < k) {
        return Err(Error::Infeasible {
            label: domain.label_space.name(i).to_string(),
            found: freq[i],
            k,
        });
    }

    let labels: Vec<Vec<usize>> = domain.pool.iter().map(|lu| domain.label_indices(lu)).collect();
    let mut order: Vec<usize> = (0..domain.pool.len()).collect();
    order.shuffle(rng);

    let mut counts = vec![0usize; domain.n_labels()];
    let mut deficit = domain.n_labels();
    // (shuffled rank, pool index)
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for (rank, &p) in order.iter().enumerate() {
        if deficit == 0 {
            break;
        }
        if labels[p].iter().any(|&l| counts[l] < k) {
            for &l in &labels[p] {
                counts[l] += 1;
                if counts[l] == k {
                    deficit -= 1;
                }
            }
            chosen.push((rank, p));
        }
    }

    chosen.sort_by_key(|&(rank, p)| (std::cmp::Reverse(labels[p].len()), rank));
    let mut keep = vec![true; chosen.len()];
    for (slot, &(_, p)) in chosen.iter().enumerate() {
        let removable = labels[p].iter().all(|&l| counts[l] > k);
        if !removable {
            continue;
        }
        if skip_prob > 0.0 && rng.gen_bool(skip_prob) {
            continue;
        }
        for &l in &labels[p] {
            counts[l] -= 1;
        }
        keep[slot] = false;
    }

    let mut kept: Vec<(usize, usize)> = chosen
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect();
    kept.sort_unstable();
    Ok(SupportSet {
        items: kept.into_iter().map(|(_, p)| domain.pool[p].clone()).collect(),
        k,
    })
}

/// `n_episodes` episodes, each a fresh support set plus `query_size` queries
/// sampled without replacement from the rest of the pool.
pub fn build_split<R: rand::Rng>(
    domain: &Domain,
    k: usize,
    n_episodes: usize,
    query_size: usize,
    rng: &mut R,
) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let support = build_support_set(domain, k, rng)?;
        let sids: HashSet<&str> = support.ids().into_iter().collect();
        let rest: Vec<&LabeledUtterance> = domain.pool.iter().filter(|lu| !sids.contains(lu.id())).collect();
        if rest.len() < query_size {
            return Err(Error::InsufficientPool(format!(
                "domain '{}' leaves {} utterances outside a support set of {}, need {query_size} queries",
                domain.name,
                rest.len(),
                support.len()
            )));
        }
        let queries = rest.choose_multiple(rng, query_size).map(|&lu| lu.clone()).collect();
        out.push(Episode {
            domain_name: domain.name.clone(),
            support,
            queries,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, LabelSpace, SynthSpec, Utterance};
    use crate::rng::rng_from;

    fn lu(id: &str, labels: &[&str]) -> LabeledUtterance {
        LabeledUtterance {
            utterance: Utterance {
                id: id.into(),
                tokens: vec![id.into()],
                text: id.into(),
            },
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn abx() -> Domain {
        let ls = LabelSpace::new(vec!["A".into(), "B".into()]).unwrap();
        Domain::new(
            "abx".into(),
            ls,
            vec![lu("x1", &["A"]), lu("x2", &["B"]), lu("x3", &["A", "B"])],
        )
        .unwrap()
    }

    /// Every subset of the pool satisfying both support criteria, by brute force.
    fn minimal_covers(domain: &Domain, k: usize) -> Vec<Vec<String>> {
        let n = domain.pool.len();
        let mut out = Vec::new();
        for mask in 1u32..(1 << n) {
            let items: Vec<LabeledUtterance> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| domain.pool[i].clone())
                .collect();
            let s = SupportSet { items, k };
            if s.covers(domain) && s.is_minimal(domain) {
                let mut ids: Vec<String> = s.ids().into_iter().map(String::from).collect();
                ids.sort();
                out.push(ids);
            }
        }
        out
    }

    #[test]
    fn toy_pool_yields_a_minimal_cover() {
        let d = abx();
        let valid = minimal_covers(&d, 1);
        assert_eq!(valid, vec![vec!["x1".to_string(), "x2".into()], vec!["x3".into()]]);
        let mut seen = HashSet::new();
        for seed in 0..64 {
            let mut rng = rng_from(seed, "abx");
            let s = build_support_set_with_skip(&d, 1, 0.0, &mut rng).unwrap();
            let mut ids: Vec<String> = s.ids().into_iter().map(String::from).collect();
            ids.sort();
            assert!(valid.contains(&ids), "{ids:?}");
            seen.insert(ids);
        }
        assert_eq!(seen.len(), 2, "both minimal covers should be reachable");
    }

    #[test]
    fn missing_label_is_infeasible() {
        let d = abx();
        let mut rng = rng_from(0, "t");
        let err = build_support_set(&d, 3, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
        assert!(err.to_string().contains("'A'"));
    }

    #[test]
    fn one_shot_size_bounds() {
        let spec = SynthSpec {
            name: "we".into(),
            n_labels: 8,
            pool_size: 300,
            ..SynthSpec::default()
        };
        let d = generate_synthetic(&spec, 3).unwrap();
        let mut rng = rng_from(3, "we");
        let mut total = 0;
        for _ in 0..100 {
            let s = build_support_set(&d, 1, &mut rng).unwrap();
            assert!(s.covers(&d));
            // Items carry at most 3 labels, and for k = 1 every added item covers a new label.
            assert!(s.len() >= 8usize.div_ceil(3) && s.len() <= 8, "{}", s.len());
            total += s.len();
        }
        let mean = total as f64 / 100.0;
        assert!(mean > 4.0 && mean <= 8.5, "mean support size {mean}");
    }

    #[test]
    fn split_counts_and_disjointness() {
        let d = generate_synthetic(&SynthSpec::default(), 1).unwrap();
        let mut rng = rng_from(1, "split");
        let eps = build_split(&d, 1, 100, 16, &mut rng).unwrap();
        assert_eq!(eps.len(), 100);
        assert_eq!(eps.iter().map(|e| e.queries.len()).sum::<usize>(), 1600);
        for e in &eps {
            let s: HashSet<&str> = e.support.ids().into_iter().collect();
            assert!(e.queries.iter().all(|q| !s.contains(q.id())));
            let q: HashSet<&str> = e.queries.iter().map(|q| q.id()).collect();
            assert_eq!(q.len(), 16);
        }

        let mut rng = rng_from(1, "split");
        let again = build_split(&d, 1, 100, 16, &mut rng).unwrap();
        assert_eq!(eps, again);

        let mut rng = rng_from(2, "split");
        let big = build_split(&d, 1, 200, 32, &mut rng).unwrap();
        assert_eq!(big.iter().map(|e| e.queries.len()).sum::<usize>(), 6400);
    }

    #[test]
    fn insufficient_pool() {
        let d = abx();
        let mut rng = rng_from(0, "t");
        assert!(matches!(
            build_split(&d, 1, 1, 3, &mut rng),
            Err(Error::InsufficientPool(_))
        ));
    }

    #[test]
    fn record_round_trip() {
        let d = generate_synthetic(&SynthSpec::default(), 5).unwrap();
        let mut rng = rng_from(5, "rec");
        let eps = build_split(&d, 2, 3, 8, &mut rng).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("eps.json");
        write_episodes(&eps, &path).unwrap();
        let back: Vec<Episode> = read_episode_records(&path)
            .unwrap()
            .iter()
            .map(|r| r.resolve(&d).unwrap())
            .collect();
        assert_eq!(back, eps);
    }
}
