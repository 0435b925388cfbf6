//! Assembly of the four training corpora — generator SFT, preference pairs,
//! revisor SFT, and the final mixed embedding set — plus deterministic
//! sharded JSONL export.

use crate::extract::{self, EmbedRecord, ExtractError, Judgment};
use crate::prompt::{TaskDescription, TaskFamily};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty {0} in corpus record")]
    EmptyField(&'static str),
    #[error("selected candidate {index} invalid: {source}")]
    InvalidCandidate {
        index: usize,
        #[source]
        source: ExtractError,
    },
    #[error("identity revision: revised payload equals root")]
    IdentityRevision,
    #[error("mix weight for {0} must be positive")]
    NonPositiveWeight(&'static str),
    #[error("stream for {group} holds {available} records but the quota is {quota}")]
    Shortfall {
        group: &'static str,
        available: usize,
        quota: usize,
    },
    #[error("cannot export an empty corpus")]
    EmptyCorpus,
    #[error("shard size must be positive")]
    ZeroShardSize,
    #[error("exported record failed re-validation: {0}")]
    Revalidation(#[from] ExtractError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One junior-generator supervised example: prompt in, serialized datum out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub task: TaskDescription,
    pub target: String,
}

impl SftRecord {
    /// The target must parse back into a valid record for the task's family.
    pub fn new(prompt: String, task: TaskDescription, target: String) -> Result<Self, CorpusError> {
        if prompt.is_empty() {
            return Err(CorpusError::EmptyField("prompt"));
        }
        let (value, _) = extract::extract_json(&target)?;
        extract::validate_record(&value, task.family)?;
        Ok(SftRecord {
            prompt,
            task,
            target,
        })
    }
}

/// A chosen/rejected pair derived from a best/worst judgment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub task: TaskDescription,
    pub chosen: String,
    pub rejected: String,
    pub judge_reason: String,
}

/// A root datum and its revision, for revisor supervised training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevisorRecord {
    pub prompt: String,
    pub task: TaskDescription,
    pub root: String,
    pub revised: String,
}

impl RevisorRecord {
    /// Both payloads must validate, and no-op revisions are rejected:
    /// training on them teaches the revisor to copy its input.
    pub fn new(
        prompt: String,
        task: TaskDescription,
        root: String,
        revised: String,
    ) -> Result<Self, CorpusError> {
        let (root_value, _) = extract::extract_json(&root)?;
        let root_payload = extract::validate_record(&root_value, task.family)?;
        let (rev_value, _) = extract::extract_json(&revised)?;
        let rev_payload = extract::validate_record(&rev_value, task.family)?;
        if root_payload == rev_payload {
            return Err(CorpusError::IdentityRevision);
        }
        Ok(RevisorRecord {
            prompt,
            task,
            root,
            revised,
        })
    }
}

/// One contrastive training example. Negatives default to the single
/// synthetic hard negative; in-batch negatives are a trainer concern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTriplet {
    pub instructed_query: String,
    pub positive: String,
    pub negatives: Vec<String>,
    pub family: TaskFamily,
}

impl TrainTriplet {
    pub fn from_record(record: &EmbedRecord) -> Result<Self, CorpusError> {
        let query = record.query();
        let positive = record.positive();
        let negative = record.hard_negative();
        if positive.is_empty() {
            return Err(CorpusError::EmptyField("positive"));
        }
        if negative.is_empty() {
            return Err(CorpusError::EmptyField("hard negative"));
        }
        Ok(TrainTriplet {
            instructed_query: apply_instruction_template(&record.task, query)?,
            positive: positive.to_string(),
            negatives: vec![negative.to_string()],
            family: record.family,
        })
    }
}

/// Prefixes the query with its task instruction. Documents are never
/// templated.
pub fn apply_instruction_template(
    task: &TaskDescription,
    query: &str,
) -> Result<String, CorpusError> {
    if task.text.is_empty() {
        return Err(CorpusError::EmptyField("task"));
    }
    if query.is_empty() {
        return Err(CorpusError::EmptyField("query"));
    }
    Ok(format!("Instruct: {}\nQuery: {}", task.text, query))
}

/// Indexes the judged best/worst candidates into a pair. Either candidate
/// failing record validation discards the pair with the categorized cause.
pub fn build_preference_pair(
    prompt: String,
    task: TaskDescription,
    candidates: &[String],
    judgment: &Judgment,
) -> Result<PreferencePair, CorpusError> {
    for index in [judgment.best, judgment.worst] {
        let (value, _) = extract::extract_json(&candidates[index])
            .map_err(|source| CorpusError::InvalidCandidate { index, source })?;
        extract::validate_record(&value, task.family)
            .map_err(|source| CorpusError::InvalidCandidate { index, source })?;
    }
    Ok(PreferencePair {
        prompt,
        task,
        chosen: candidates[judgment.best].clone(),
        rejected: candidates[judgment.worst].clone(),
        judge_reason: judgment.reason.clone(),
    })
}

/// How `mix` responds when a family group cannot fill its quota.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortfallPolicy {
    /// Fail loudly.
    Error,
    /// Scale every quota down by the worst availability ratio.
    Scale,
}

pub const GROUPS: [&str; 4] = ["classification", "sts", "retrieval", "matching"];

/// The 7:7:7:2 mixing weights.
pub fn default_ratios() -> BTreeMap<String, u64> {
    GROUPS
        .iter()
        .zip([7u64, 7, 7, 2])
        .map(|(g, w)| (g.to_string(), w))
        .collect()
}

/// Largest-remainder apportionment of `total` over the weighted groups:
/// every group gets ⌊total·w/Σw⌋ and leftover units go to the largest
/// fractional parts (ties broken by group name for determinism).
pub fn group_quotas(
    total: usize,
    ratios: &BTreeMap<String, u64>,
) -> Result<BTreeMap<String, usize>, CorpusError> {
    let weight_sum: u64 = ratios.values().sum();
    for (group, w) in ratios {
        if *w == 0 {
            // Leak-free static name lookup keeps the error type simple.
            let name = GROUPS
                .iter()
                .find(|g| *g == group)
                .copied()
                .unwrap_or("group");
            return Err(CorpusError::NonPositiveWeight(name));
        }
    }
    let mut quotas = BTreeMap::new();
    let mut remainders: Vec<(u64, &String)> = Vec::new();
    let mut assigned = 0usize;
    for (group, w) in ratios {
        let exact_num = total as u128 * *w as u128;
        let floor = (exact_num / weight_sum as u128) as usize;
        let rem = (exact_num % weight_sum as u128) as u64;
        quotas.insert(group.clone(), floor);
        remainders.push((rem, group));
        assigned += floor;
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    for (_, group) in remainders.into_iter().take(total - assigned) {
        *quotas.get_mut(group.as_str()).expect("group present") += 1;
    }
    Ok(quotas)
}

/// Splits a matching quota evenly between short-short and long-long; an odd
/// unit goes to short-short.
pub fn matching_split(quota: usize) -> (usize, usize) {
    (quota - quota / 2, quota / 2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixManifest {
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    pub seed: u64,
    pub negatives: String,
}

/// Samples the final training mix from the per-family pools. Deterministic
/// under `seed`: pools are shuffled with a per-family ChaCha stream and
/// truncated to quota.
pub fn mix(
    pools: &BTreeMap<TaskFamily, Vec<TrainTriplet>>,
    total: usize,
    ratios: &BTreeMap<String, u64>,
    shortfall: ShortfallPolicy,
    seed: u64,
) -> Result<(Vec<TrainTriplet>, MixManifest), CorpusError> {
    let empty: Vec<TrainTriplet> = Vec::new();
    let pool = |family: TaskFamily| pools.get(&family).unwrap_or(&empty);

    let mut total = total;
    let mut quotas = group_quotas(total, ratios)?;
    let check = |quotas: &BTreeMap<String, usize>| -> Option<(&'static str, usize, usize)> {
        let (ss_quota, ll_quota) = matching_split(quotas["matching"]);
        let probes = [
            (
                "classification",
                pool(TaskFamily::Classification).len(),
                quotas["classification"],
            ),
            ("sts", pool(TaskFamily::Sts).len(), quotas["sts"]),
            (
                "retrieval",
                pool(TaskFamily::Retrieval).len(),
                quotas["retrieval"],
            ),
            (
                "matching",
                pool(TaskFamily::MatchShortShort).len(),
                ss_quota,
            ),
            ("matching", pool(TaskFamily::MatchLongLong).len(), ll_quota),
        ];
        probes
            .into_iter()
            .find(|(_, available, quota)| available < quota)
    };
    if let Some((group, available, quota)) = check(&quotas) {
        match shortfall {
            ShortfallPolicy::Error => {
                return Err(CorpusError::Shortfall {
                    group,
                    available,
                    quota,
                })
            }
            ShortfallPolicy::Scale => {
                // Shrink total until every quota fits; integer bisection
                // keeps this exact and fast.
                let mut lo = 0usize;
                let mut hi = total;
                while lo < hi {
                    let mid = (lo + hi + 1) / 2;
                    let q = group_quotas(mid, ratios)?;
                    if check(&q).is_none() {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                total = lo;
                quotas = group_quotas(total, ratios)?;
            }
        }
    }

    let (ss_quota, ll_quota) = matching_split(quotas["matching"]);
    let draws = [
        (TaskFamily::Classification, quotas["classification"]),
        (TaskFamily::Sts, quotas["sts"]),
        (TaskFamily::Retrieval, quotas["retrieval"]),
        (TaskFamily::MatchShortShort, ss_quota),
        (TaskFamily::MatchLongLong, ll_quota),
    ];
    let mut out = Vec::with_capacity(total);
    let mut counts = BTreeMap::new();
    for (family, quota) in draws {
        let mut indices: Vec<usize> = (0..pool(family).len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(family.as_str()));
        indices.shuffle(&mut rng);
        indices.truncate(quota);
        indices.sort_unstable();
        for i in indices {
            out.push(pool(family)[i].clone());
        }
        counts.insert(family.as_str().to_string(), quota);
    }
    let manifest = MixManifest {
        total,
        counts,
        seed,
        negatives: "synthetic hard negative only; in-batch negatives are a trainer concern".into(),
    };
    Ok((out, manifest))
}

fn fnv(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardManifest {
    pub stage: String,
    pub counts: BTreeMap<String, usize>,
    pub shards: Vec<ShardEntry>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub records: usize,
    pub sha256: String,
}

/// Anything exportable as newline-delimited JSON with a family tally and a
/// final re-validation pass.
pub trait Exportable: Serialize {
    fn family_key(&self) -> &'static str;
    /// Re-validation hook run on every record at export time.
    fn revalidate(&self) -> Result<(), ExtractError>;
}

impl Exportable for SftRecord {
    fn family_key(&self) -> &'static str {
        self.task.family.as_str()
    }
    fn revalidate(&self) -> Result<(), ExtractError> {
        let (value, _) = extract::extract_json(&self.target)?;
        extract::validate_record(&value, self.task.family)?;
        Ok(())
    }
}

impl Exportable for PreferencePair {
    fn family_key(&self) -> &'static str {
        self.task.family.as_str()
    }
    fn revalidate(&self) -> Result<(), ExtractError> {
        for text in [&self.chosen, &self.rejected] {
            let (value, _) = extract::extract_json(text)?;
            extract::validate_record(&value, self.task.family)?;
        }
        Ok(())
    }
}

impl Exportable for RevisorRecord {
    fn family_key(&self) -> &'static str {
        self.task.family.as_str()
    }
    fn revalidate(&self) -> Result<(), ExtractError> {
        for text in [&self.root, &self.revised] {
            let (value, _) = extract::extract_json(text)?;
            extract::validate_record(&value, self.task.family)?;
        }
        Ok(())
    }
}

impl Exportable for TrainTriplet {
    fn family_key(&self) -> &'static str {
        self.family.as_str()
    }
    fn revalidate(&self) -> Result<(), ExtractError> {
        if !self.instructed_query.starts_with("Instruct: ") {
            return Err(ExtractError::EmptyValue("instructed_query".to_string()));
        }
        if self.negatives.is_empty() || self.positive.is_empty() {
            return Err(ExtractError::EmptyValue("negatives".to_string()));
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `records` under `dir` as `<stage>-NNNNN.jsonl` shards plus
/// `<stage>.manifest.json`. Byte-identical across re-exports of the same
/// inputs: files are written to a temp name and renamed, with no timestamps.
pub fn export<T: Exportable>(
    records: &[T],
    dir: &Path,
    stage: &str,
    shard_size: usize,
    seed: u64,
    config_hash: &str,
) -> Result<ShardManifest, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if shard_size == 0 {
        return Err(CorpusError::ZeroShardSize);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for record in records {
        record.revalidate()?;
        *counts.entry(record.family_key().to_string()).or_default() += 1;
    }
    let mut shards = Vec::new();
    for (shard_index, chunk) in records.chunks(shard_size).enumerate() {
        let name = format!("{stage}-{shard_index:05}.jsonl");
        let mut bytes = Vec::new();
        for record in chunk {
            serde_json::to_writer(&mut bytes, record).expect("record serializes");
            bytes.push(b'\n');
        }
        let path = dir.join(&name);
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        shards.push(ShardEntry {
            file: name,
            records: chunk.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = ShardManifest {
        stage: stage.to_string(),
        counts,
        shards,
        seed,
        config_hash: config_hash.to_string(),
    };
    let manifest_path = dir.join(format!("{stage}.manifest.json"));
    let tmp = dir.join(format!(".{stage}.manifest.json.tmp"));
    let mut body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    body.push(b'\n');
    fs::write(&tmp, &body).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &manifest_path).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Reads back every shard listed in a manifest, in order.
pub fn read_shards<T: for<'de> Deserialize<'de>>(
    dir: &Path,
    manifest: &ShardManifest,
) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for shard in &manifest.shards {
        let path = dir.join(&shard.file);
        let body = fs::read_to_string(&path).map_err(io_err(&path))?;
        for line in body.lines() {
            let record: T = serde_json::from_str(line).map_err(|e| CorpusError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
            out.push(record);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::Provenance;
    use crate::taxonomy::TopicPath;
    use proptest::prelude::*;

    fn task(family: TaskFamily) -> TaskDescription {
        TaskDescription {
            text: "Retrieve relevant passages".into(),
            family,
            topic: TopicPath::parse("Arts/Movies", 1).unwrap(),
        }
    }

    fn retrieval_json(q: &str, pos: &str, neg: &str) -> String {
        serde_json::json!({
            "user_query": q,
            "positive_document": pos,
            "hard_negative_document": neg,
        })
        .to_string()
    }

    fn triplet(family: TaskFamily, i: usize) -> TrainTriplet {
        TrainTriplet {
            instructed_query: format!("Instruct: t\nQuery: q{i}"),
            positive: format!("pos {i}"),
            negatives: vec![format!("neg {i}")],
            family,
        }
    }

    #[test]
    fn instruction_template_shape() {
        let t = task(TaskFamily::Retrieval);
        let out = apply_instruction_template(&t, "how do dams work").unwrap();
        assert_eq!(out, "Instruct: Retrieve relevant passages\nQuery: how do dams work");
        assert_eq!(out.matches('\n').count(), 1);
        let rest = out.strip_prefix("Instruct: Retrieve relevant passages").unwrap();
        assert_eq!(rest.strip_prefix("\nQuery: ").unwrap(), "how do dams work");
    }

    #[test]
    fn preference_pair_indexes_judged_candidates() {
        let candidates: Vec<String> = (0..4)
            .map(|i| retrieval_json(&format!("q{i}"), &format!("p{i}"), &format!("n{i}")))
            .collect();
        let j = Judgment {
            reason: "r".into(),
            best: 2,
            worst: 0,
        };
        let pair =
            build_preference_pair("prompt".into(), task(TaskFamily::Retrieval), &candidates, &j)
                .unwrap();
        assert_eq!(pair.chosen, candidates[2]);
        assert_eq!(pair.rejected, candidates[0]);
    }

    #[test]
    fn preference_pair_discards_invalid_candidate() {
        let mut candidates: Vec<String> = (0..4)
            .map(|i| retrieval_json(&format!("q{i}"), &format!("p{i}"), &format!("n{i}")))
            .collect();
        candidates[2] = "{ broken".into();
        let j = Judgment {
            reason: "r".into(),
            best: 2,
            worst: 0,
        };
        let err =
            build_preference_pair("prompt".into(), task(TaskFamily::Retrieval), &candidates, &j)
                .unwrap_err();
        assert!(matches!(err, CorpusError::InvalidCandidate { index: 2, .. }));
    }

    #[test]
    fn identity_revision_is_dropped() {
        let root = retrieval_json("q", "p", "n");
        let err = RevisorRecord::new(
            "prompt".into(),
            task(TaskFamily::Retrieval),
            root.clone(),
            root,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::IdentityRevision));
    }

    #[test]
    fn quotas_for_230k() {
        let q = group_quotas(230_000, &default_ratios()).unwrap();
        assert_eq!(q["classification"], 70_000);
        assert_eq!(q["sts"], 70_000);
        assert_eq!(q["retrieval"], 70_000);
        assert_eq!(q["matching"], 20_000);
        assert_eq!(matching_split(20_000), (10_000, 10_000));
    }

    #[test]
    fn equal_ratios_divisible_total_gives_equal_counts() {
        let ratios: BTreeMap<String, u64> =
            GROUPS.iter().map(|g| (g.to_string(), 1)).collect();
        let q = group_quotas(400, &ratios).unwrap();
        assert!(q.values().all(|&c| c == 100));
    }

    proptest! {
        #[test]
        fn quotas_within_one_of_exact_share(total in 1usize..1_000_000) {
            let ratios = default_ratios();
            let q = group_quotas(total, &ratios).unwrap();
            let sum: u64 = ratios.values().sum();
            let mut assigned = 0usize;
            for (group, w) in &ratios {
                let exact = total as f64 * *w as f64 / sum as f64;
                prop_assert!((q[group] as f64 - exact).abs() < 1.0);
                assigned += q[group];
            }
            prop_assert_eq!(assigned, total);
        }
    }

    fn pools(n_each: usize) -> BTreeMap<TaskFamily, Vec<TrainTriplet>> {
        [
            TaskFamily::Classification,
            TaskFamily::Sts,
            TaskFamily::Retrieval,
            TaskFamily::MatchShortShort,
            TaskFamily::MatchLongLong,
        ]
        .into_iter()
        .map(|f| (f, (0..n_each).map(|i| triplet(f, i)).collect()))
        .collect()
    }

    #[test]
    fn mix_is_deterministic_and_counts_match() {
        let pools = pools(400);
        let ratios = default_ratios();
        let (a, ma) = mix(&pools, 1000, &ratios, ShortfallPolicy::Error, 9).unwrap();
        let (b, _) = mix(&pools, 1000, &ratios, ShortfallPolicy::Error, 9).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.len(), 1000);
        let matching: usize = ma.counts["match_short_short"] + ma.counts["match_long_long"];
        assert_eq!(
            ma.counts["classification"] + ma.counts["sts"] + ma.counts["retrieval"] + matching,
            1000
        );
        let (c, _) = mix(&pools, 1000, &ratios, ShortfallPolicy::Error, 10).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn mix_shortfall_policies() {
        let pools = pools(50);
        let ratios = default_ratios();
        let err = mix(&pools, 1000, &ratios, ShortfallPolicy::Error, 0).unwrap_err();
        assert!(matches!(err, CorpusError::Shortfall { .. }));
        let (scaled, m) = mix(&pools, 1000, &ratios, ShortfallPolicy::Scale, 0).unwrap();
        assert_eq!(scaled.len(), m.total);
        assert!(m.total < 1000 && m.total > 0);
        let q = group_quotas(m.total, &ratios).unwrap();
        assert!(q.values().all(|&c| c <= 100));
    }

    #[test]
    fn export_shards_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<TrainTriplet> =
            (0..1000).map(|i| triplet(TaskFamily::Retrieval, i)).collect();
        let manifest = export(&records, dir.path(), "train", 300, 7, "cfg").unwrap();
        let sizes: Vec<usize> = manifest.shards.iter().map(|s| s.records).collect();
        assert_eq!(sizes, [300, 300, 300, 100]);
        assert_eq!(manifest.counts["retrieval"], 1000);
        let back: Vec<TrainTriplet> = read_shards(dir.path(), &manifest).unwrap();
        assert_eq!(back.len(), 1000);
        assert_eq!(
            serde_json::to_string(&records).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
        // Re-export is byte-identical.
        let again = export(&records, dir.path(), "train", 300, 7, "cfg").unwrap();
        assert_eq!(
            serde_json::to_string(&manifest).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn export_rejects_empty_and_zero_shard() {
        let dir = tempfile::tempdir().unwrap();
        let empty: Vec<TrainTriplet> = Vec::new();
        assert!(matches!(
            export(&empty, dir.path(), "x", 10, 0, "c"),
            Err(CorpusError::EmptyCorpus)
        ));
        let one = vec![triplet(TaskFamily::Sts, 0)];
        assert!(matches!(
            export(&one, dir.path(), "x", 0, 0, "c"),
            Err(CorpusError::ZeroShardSize)
        ));
    }

    #[test]
    fn sft_record_validates_target() {
        let t = task(TaskFamily::Retrieval);
        assert!(SftRecord::new("p".into(), t.clone(), retrieval_json("q", "a", "b")).is_ok());
        assert!(SftRecord::new("p".into(), t, "not json".into()).is_err());
    }

    #[test]
    fn triplet_from_record_applies_template() {
        let payload: BTreeMap<String, String> = [
            ("user_query", "q"),
            ("positive_document", "p"),
            ("hard_negative_document", "n"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let record = EmbedRecord {
            family: TaskFamily::Retrieval,
            task: task(TaskFamily::Retrieval),
            payload,
            provenance: Provenance {
                generator: "mock".into(),
                prompt_hash: "h".into(),
                revised: false,
            },
        };
        let t = TrainTriplet::from_record(&record).unwrap();
        assert_eq!(t.instructed_query, "Instruct: Retrieve relevant passages\nQuery: q");
        assert_eq!(t.negatives, ["n"]);
    }
}
