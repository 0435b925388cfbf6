//! MinHash + LSH near-duplicate removal over synthetic records.
//!
//! Word n-gram shingles feed k seeded min-hash functions; LSH banding
//! proposes candidate pairs, pairs at or above the estimated-Jaccard
//! threshold are clustered with union-find, and the first record per
//! cluster in stream order is kept.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("shingle size must be >= 1")]
    BadShingleSize,
    #[error("permutation count k must be >= 16, got {0}")]
    BadK(usize),
    #[error("empty shingle set")]
    EmptyShingles,
    #[error("bands * rows must equal k: {bands} * {rows} != {k}")]
    BandMismatch { bands: usize, rows: usize, k: usize },
    #[error("signatures not comparable: differing (k, shingle_n, seed)")]
    Incomparable,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DedupParams {
    pub threshold: f64,
    pub k: usize,
    pub bands: usize,
    pub rows: usize,
    pub shingle_n: usize,
    pub seed: u64,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            threshold: 0.85,
            k: 128,
            bands: 16,
            rows: 8,
            shingle_n: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub k: usize,
    pub shingle_n: usize,
    pub seed: u64,
}

/// Lowercased, whitespace-tokenized word n-grams. Texts shorter than n
/// words yield the single whole-text shingle.
pub fn shingle(text: &str, n: usize) -> Result<BTreeSet<String>, DedupError> {
    if n == 0 {
        return Err(DedupError::BadShingleSize);
    }
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    if words.len() < n {
        return Ok(std::iter::once(words.join(" ")).collect());
    }
    Ok(words.windows(n).map(|w| w.join(" ")).collect())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Splitmix64 step, used to derive the k hash-function parameters from the
/// seed deterministically.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn hash_params(k: usize, seed: u64) -> Vec<(u64, u64)> {
    let mut state = seed ^ 0x51ed2701a3c5e0f1;
    (0..k)
        .map(|_| {
            let a = splitmix64(&mut state) | 1; // odd multiplier
            let b = splitmix64(&mut state);
            (a, b)
        })
        .collect()
}

/// MinHash signature: value i is the minimum of the i-th seeded hash over
/// the shingle set.
pub fn signature(
    shingles: &BTreeSet<String>,
    k: usize,
    shingle_n: usize,
    seed: u64,
) -> Result<MinHashSignature, DedupError> {
    if k < 16 {
        return Err(DedupError::BadK(k));
    }
    if shingles.is_empty() {
        return Err(DedupError::EmptyShingles);
    }
    let params = hash_params(k, seed);
    let base: Vec<u64> = shingles.iter().map(|s| fnv1a64(s.as_bytes())).collect();
    let values = params
        .iter()
        .map(|&(a, b)| {
            base.iter()
                .map(|&h| a.wrapping_mul(h).wrapping_add(b))
                .min()
                .unwrap()
        })
        .collect();
    Ok(MinHashSignature {
        values,
        k,
        shingle_n,
        seed,
    })
}

/// Estimated Jaccard similarity: the fraction of matching signature slots.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.k != b.k || a.shingle_n != b.shingle_n || a.seed != b.seed {
        return Err(DedupError::Incomparable);
    }
    let matches = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| x == y)
        .count();
    Ok(matches as f64 / a.k as f64)
}

/// Exact Jaccard over shingle sets; the oracle the estimator approximates.
pub fn exact_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupReport {
    pub raw: usize,
    pub kept: usize,
    pub removed: usize,
    pub clusters: usize,
    /// cluster size -> number of clusters of that size (size >= 2 only)
    pub histogram: BTreeMap<usize, usize>,
    pub params: DedupParams,
    pub scope: String,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes the root so keep-first stays stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Deduplicates by key. Returns one keep-flag per input key (stream order
/// preserved) plus a report. The caller chooses the key; records whose keys
/// land in the same cluster collapse to the earliest one.
pub fn dedup_keys(keys: &[String], params: &DedupParams) -> Result<(Vec<bool>, DedupReport), DedupError> {
    if params.bands * params.rows != params.k {
        return Err(DedupError::BandMismatch {
            bands: params.bands,
            rows: params.rows,
            k: params.k,
        });
    }
    let sigs: Vec<MinHashSignature> = keys
        .iter()
        .map(|key| {
            let sh = shingle(key, params.shingle_n)?;
            signature(&sh, params.k, params.shingle_n, params.seed)
        })
        .collect::<Result<_, _>>()?;

    // LSH banding: bucket on the hash of each band slice.
    let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    for (i, sig) in sigs.iter().enumerate() {
        for band in 0..params.bands {
            let slice = &sig.values[band * params.rows..(band + 1) * params.rows];
            let mut bytes = Vec::with_capacity(params.rows * 8);
            for v in slice {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            buckets
                .entry((band, fnv1a64(&bytes)))
                .or_default()
                .push(i);
        }
    }

    // Candidate pairs, verified against the estimated Jaccard threshold.
    let mut seen_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for members in buckets.values() {
        for (ai, &a) in members.iter().enumerate() {
            for &b in &members[ai + 1..] {
                let pair = if a < b { (a, b) } else { (b, a) };
                seen_pairs.insert(pair);
            }
        }
    }
    let mut uf = UnionFind::new(keys.len());
    for (a, b) in seen_pairs {
        if estimate_jaccard(&sigs[a], &sigs[b])? >= params.threshold {
            uf.union(a, b);
        }
    }

    let mut cluster_sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..keys.len() {
        *cluster_sizes.entry(uf.find(i)).or_insert(0) += 1;
    }
    let keep: Vec<bool> = (0..keys.len()).map(|i| uf.find(i) == i).collect();
    let kept = keep.iter().filter(|&&k| k).count();

    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &size in cluster_sizes.values() {
        if size >= 2 {
            *histogram.entry(size).or_insert(0) += 1;
        }
    }

    Ok((
        keep.clone(),
        DedupReport {
            raw: keys.len(),
            kept,
            removed: keys.len() - kept,
            clusters: cluster_sizes.len(),
            histogram,
            params: *params,
            scope: "global".to_string(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shingles_by_definition() {
        let s = shingle("a b c", 2).unwrap();
        let expected: BTreeSet<String> = ["a b", "b c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(s, expected);
    }

    #[test]
    fn short_text_yields_whole_text_shingle() {
        let s = shingle("a", 3).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.contains("a"));
    }

    #[test]
    fn identical_texts_identical_shingles_and_signatures() {
        let a = shingle("The quick brown Fox", 2).unwrap();
        let b = shingle("the quick  brown fox", 2).unwrap();
        assert_eq!(a, b);
        let sa = signature(&a, 32, 2, 5).unwrap();
        let sb = signature(&b, 32, 2, 5).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(estimate_jaccard(&sa, &sb).unwrap(), 1.0);
    }

    #[test]
    fn signature_rejects_small_k_and_empty_sets() {
        let s = shingle("a b", 1).unwrap();
        assert!(matches!(signature(&s, 8, 1, 0), Err(DedupError::BadK(8))));
        let empty = BTreeSet::new();
        assert!(matches!(
            signature(&empty, 32, 1, 0),
            Err(DedupError::EmptyShingles)
        ));
    }

    #[test]
    fn incomparable_signatures_rejected() {
        let s = shingle("a b c d", 2).unwrap();
        let a = signature(&s, 32, 2, 1).unwrap();
        let b = signature(&s, 32, 2, 2).unwrap();
        assert!(matches!(
            estimate_jaccard(&a, &b),
            Err(DedupError::Incomparable)
        ));
    }

    #[test]
    fn estimator_mean_close_to_exact_jaccard() {
        // A = {a,b,c}, B = {b,c,d}: exact Jaccard = 2/4 = 0.5
        let a: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let b: BTreeSet<String> = ["b", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(exact_jaccard(&a, &b), 0.5);
        let k = 128;
        let mut sum = 0.0;
        let seeds = 50;
        for seed in 0..seeds {
            let sa = signature(&a, k, 1, seed).unwrap();
            let sb = signature(&b, k, 1, seed).unwrap();
            sum += estimate_jaccard(&sa, &sb).unwrap();
        }
        let mean = sum / seeds as f64;
        assert!((mean - 0.5).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn exact_duplicate_always_removed() {
        let keys = vec![
            "alpha beta gamma delta epsilon".to_string(),
            "completely different words entirely here".to_string(),
            "alpha beta gamma delta epsilon".to_string(),
        ];
        let (keep, report) = dedup_keys(&keys, &DedupParams::default()).unwrap();
        assert_eq!(keep, vec![true, true, false]);
        assert_eq!(report.kept, 2);
        assert_eq!(report.removed, 1);
        assert_eq!(report.histogram.get(&2), Some(&1));
    }

    #[test]
    fn distinct_corpus_kept_whole() {
        let keys: Vec<String> = (0..200)
            .map(|i| format!("record {i} unique content {} {} {}", i * 7, i * 13, i * 29))
            .collect();
        let params = DedupParams {
            threshold: 0.9,
            ..DedupParams::default()
        };
        let (keep, report) = dedup_keys(&keys, &params).unwrap();
        assert!(keep.iter().all(|&k| k));
        assert_eq!(report.kept, report.raw);
        // verified against the exact oracle
        let shingled: Vec<_> = keys.iter().map(|k| shingle(k, 3).unwrap()).collect();
        for i in 0..shingled.len() {
            for j in i + 1..shingled.len() {
                assert!(exact_jaccard(&shingled[i], &shingled[j]) < 0.9);
            }
        }
    }

    #[test]
    fn band_mismatch_is_config_error() {
        let params = DedupParams {
            k: 128,
            bands: 10,
            rows: 8,
            ..DedupParams::default()
        };
        assert!(matches!(
            dedup_keys(&["a".to_string()], &params),
            Err(DedupError::BandMismatch { .. })
        ));
    }

    #[test]
    fn sharding_invariant_for_exact_duplicates() {
        let mut keys: Vec<String> = (0..60)
            .map(|i| format!("text number {i} with filler {} {}", i * 3, i * 11))
            .collect();
        // exact duplicates spread across the "shards"
        keys[40] = keys[2].clone();
        keys[55] = keys[2].clone();
        let params = DedupParams::default();
        let (keep_all, _) = dedup_keys(&keys, &params).unwrap();
        let merged: Vec<String> = keys
            .iter()
            .zip(&keep_all)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();

        // per-shard dedup then merge then dedup again
        let (ka, _) = dedup_keys(&keys[..30], &params).unwrap();
        let (kb, _) = dedup_keys(&keys[30..], &params).unwrap();
        let mut partial: Vec<String> = keys[..30]
            .iter()
            .zip(&ka)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        partial.extend(
            keys[30..]
                .iter()
                .zip(&kb)
                .filter(|(_, &k)| k)
                .map(|(s, _)| s.clone()),
        );
        let (kc, _) = dedup_keys(&partial, &params).unwrap();
        let two_stage: Vec<String> = partial
            .iter()
            .zip(&kc)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        assert_eq!(merged, two_stage);
    }
}
