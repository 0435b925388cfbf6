//! Stage execution bodies. Each returns a partially filled manifest; the
//! orchestrator stamps inputs, config hash, seed, and usage afterwards.

use super::{
    file_sha256, read_json, write_json_atomic, OutputFile, PipelineError, StageManifest,
    StageName, Workdir,
};
use crate::config::{Config, Role};
use crate::corpus::{
    self, PreferencePair, RevisorRecord, SftRecord, ShardManifest, TrainTriplet,
};
use crate::dedup;
use crate::extract::{self, EmbedRecord, Judgment, Provenance, RejectionCounters};
use crate::gateway::{ChatRequest, Gateway, GatewayError, RetryPolicy, TranscriptLog};
use crate::ledger::Ledger;
use crate::prompt::{PromptForge, TaskDescription, TaskFamily, TemplateSet};
use crate::taxonomy::{TopicPath, TopicPool};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// A synthesis prompt and the junior generator's candidate outputs, kept
/// raw: invalid candidates still occupy their index for judging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootGroup {
    pub prompt: String,
    pub task: TaskDescription,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgedGroup {
    pub group: usize,
    pub judgment: Judgment,
}

/// One large-scale synthesis output paired with the prompt that made it,
/// which the revisor needs verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthItem {
    pub prompt: String,
    pub record: EmbedRecord,
}

const FAMILIES: [TaskFamily; 5] = [
    TaskFamily::Classification,
    TaskFamily::Sts,
    TaskFamily::Retrieval,
    TaskFamily::MatchShortShort,
    TaskFamily::MatchLongLong,
];

/// Disjoint request-seed ranges keep identical prompts from colliding in
/// the transcript log across stages that share the "other" tag.
const SEED_BASE_ROOT: u64 = 0;
const SEED_BASE_SYNTH: u64 = 1 << 32;

struct Ctx<'a> {
    config: &'a Config,
    workdir: &'a Workdir,
    ledger: &'a Arc<Ledger>,
    forge: PromptForge,
}

impl<'a> Ctx<'a> {
    fn new(
        config: &'a Config,
        workdir: &'a Workdir,
        ledger: &'a Arc<Ledger>,
    ) -> Result<Self, PipelineError> {
        let templates = match &config.template_dir {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::builtin(),
        };
        Ok(Ctx {
            config,
            workdir,
            ledger,
            forge: PromptForge::new(templates),
        })
    }

    fn gateway(&self, role: Role) -> Result<Gateway, PipelineError> {
        let backend = self.config.backend(role)?;
        let wal_path = self.workdir.wal_path();
        if let Some(parent) = wal_path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let wal = TranscriptLog::open(&wal_path).map_err(|source| PipelineError::Io {
            path: wal_path.clone(),
            source,
        })?;
        let gateway = Gateway::new(
            backend,
            Arc::clone(self.ledger),
            self.config.max_in_flight,
            RetryPolicy {
                cap: self.config.retry_cap,
                backoff_ms: self.config.backoff_ms,
            },
        )?
        .with_wal(Arc::new(wal));
        Ok(gateway)
    }

    fn read_data<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T, PipelineError> {
        read_json(&self.workdir.data_path(name))
    }

    /// Writes a data file and returns its manifest entry.
    fn write_data<T: Serialize>(&self, name: &str, value: &T) -> Result<OutputFile, PipelineError> {
        let path = self.workdir.data_path(name);
        write_json_atomic(&path, value)?;
        Ok(OutputFile {
            file: format!("data/{name}"),
            sha256: file_sha256(&path)?,
        })
    }
}

fn manifest(
    stage: StageName,
    outputs: Vec<OutputFile>,
    counts: BTreeMap<String, u64>,
    extra: serde_json::Value,
) -> StageManifest {
    StageManifest {
        stage,
        inputs: BTreeMap::new(),
        outputs,
        counts,
        config_hash: String::new(),
        seed: 0,
        usage: Default::default(),
        extra,
    }
}

fn count_rejections(counts: &mut BTreeMap<String, u64>, rejects: &RejectionCounters) {
    for (category, n) in &rejects.counts {
        *counts.entry(format!("rejected_{category}")).or_default() += n;
    }
    *counts.entry("rejected_total".to_string()).or_default() += rejects.total();
}

/// Outputs of an export stage: every shard plus the shard manifest itself.
fn export_outputs(
    workdir: &Workdir,
    stage_dir: &str,
    shard_manifest: &ShardManifest,
) -> Result<Vec<OutputFile>, PipelineError> {
    let dir = workdir.export_dir(stage_dir);
    let mut outputs = Vec::new();
    for shard in &shard_manifest.shards {
        outputs.push(OutputFile {
            file: format!("export/{stage_dir}/{}", shard.file),
            sha256: shard.sha256.clone(),
        });
    }
    let manifest_name = format!("{}.manifest.json", shard_manifest.stage);
    let manifest_path = dir.join(&manifest_name);
    outputs.push(OutputFile {
        file: format!("export/{stage_dir}/{manifest_name}"),
        sha256: file_sha256(&manifest_path)?,
    });
    Ok(outputs)
}

fn nonempty<T>(items: &[T], stage: StageName, what: &str) -> Result<(), PipelineError> {
    if items.is_empty() {
        return Err(PipelineError::EmptyStage {
            stage,
            detail: format!("no {what} available"),
        });
    }
    Ok(())
}

pub async fn execute(
    config: &Config,
    workdir: &Workdir,
    stage: StageName,
    ledger: &Arc<Ledger>,
) -> Result<StageManifest, PipelineError> {
    let ctx = Ctx::new(config, workdir, ledger)?;
    match stage {
        StageName::Topics => topics(&ctx),
        StageName::Brainstorm => brainstorm(&ctx).await,
        StageName::Seed => seed(&ctx).await,
        StageName::ExportSft => export_sft(&ctx),
        StageName::GenerateRoot => generate_root(&ctx).await,
        StageName::Judge => judge(&ctx).await,
        StageName::ExportDpo => export_dpo(&ctx),
        StageName::ReviseSignal => revise_signal(&ctx).await,
        StageName::ExportRevisorSft => export_revisor_sft(&ctx),
        StageName::Synth => synth(&ctx).await,
        StageName::Revise => revise(&ctx).await,
        StageName::Dedup => dedup_stage(&ctx),
        StageName::Mix => mix_stage(&ctx),
        StageName::ExportTrain => export_train(&ctx),
    }
}

fn topics(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let pool = TopicPool::from_file(&ctx.config.topics_file, ctx.config.max_depth)?;
    let sampled = pool.sample(ctx.config.n_topics, ctx.config.seed)?;
    let out = ctx.write_data("topics.json", &sampled)?;
    let counts = BTreeMap::from([("records".to_string(), sampled.len() as u64)]);
    Ok(manifest(StageName::Topics, vec![out], counts, serde_json::Value::Null))
}

/// One brainstorm call per topic; families rotate across topics so every
/// family accumulates tasks.
async fn brainstorm(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let topics: Vec<TopicPath> = ctx.read_data("topics.json")?;
    nonempty(&topics, StageName::Brainstorm, "topics")?;
    let gateway = ctx.gateway(Role::Teacher)?;

    let mut requests = Vec::new();
    let mut families = Vec::new();
    for (i, topic) in topics.iter().enumerate() {
        let family = FAMILIES[i % FAMILIES.len()];
        let prompt = ctx.forge.render_brainstorm(family, topic)?;
        requests.push(ChatRequest::synthesis(prompt, "other", i as u64));
        families.push((family, topic.clone()));
    }
    let results = gateway.complete_batch(&requests).await;

    let mut tasks: Vec<TaskDescription> = Vec::new();
    let mut rejects = RejectionCounters::default();
    let mut counts = BTreeMap::new();
    counts.insert("requests".to_string(), requests.len() as u64);
    for (result, (family, topic)) in results.into_iter().zip(families) {
        let completion = match result {
            Ok(c) => c,
            Err(e) => return Err(e.into()),
        };
        match extract::extract_json_array(&completion.text) {
            Ok((value, _)) => {
                for entry in value.as_array().into_iter().flatten() {
                    if let Some(text) = entry.as_str() {
                        let text = text.trim();
                        if !text.is_empty() {
                            tasks.push(TaskDescription {
                                text: text.to_string(),
                                family,
                                topic: topic.clone(),
                            });
                        }
                    }
                }
            }
            Err(e) => rejects.add(&e),
        }
    }
    nonempty(&tasks, StageName::Brainstorm, "brainstormed tasks")?;
    let out = ctx.write_data("tasks.json", &tasks)?;
    counts.insert("records".to_string(), tasks.len() as u64);
    count_rejections(&mut counts, &rejects);
    Ok(manifest(StageName::Brainstorm, vec![out], counts, serde_json::Value::Null))
}

/// Round-robin over families, then over that family's tasks, so pools stay
/// balanced regardless of how many tasks each brainstorm produced.
fn task_schedule(tasks: &[TaskDescription], n: usize) -> Vec<&TaskDescription> {
    let mut by_family: BTreeMap<TaskFamily, Vec<&TaskDescription>> = BTreeMap::new();
    for task in tasks {
        by_family.entry(task.family).or_default().push(task);
    }
    let families: Vec<TaskFamily> = by_family.keys().copied().collect();
    (0..n)
        .map(|i| {
            let family = families[i % families.len()];
            let pool = &by_family[&family];
            pool[(i / families.len()) % pool.len()]
        })
        .collect()
}

/// Shared body for the two teacher/senior synthesis stages.
async fn run_synthesis(
    ctx: &Ctx<'_>,
    role: Role,
    n: usize,
    tag: &str,
    seed_base: u64,
    slot_salt: u64,
) -> Result<(Vec<(String, TaskDescription, EmbedRecord)>, BTreeMap<String, u64>), PipelineError> {
    let tasks: Vec<TaskDescription> = ctx.read_data("tasks.json")?;
    nonempty(&tasks, StageName::Seed, "tasks")?;
    let gateway = ctx.gateway(role)?;
    let schedule = task_schedule(&tasks, n);

    let mut requests = Vec::new();
    for (i, task) in schedule.iter().enumerate() {
        let prompt = ctx
            .forge
            .render_synthesis(task.family, task, ctx.config.seed ^ slot_salt ^ i as u64)?;
        requests.push(ChatRequest::synthesis(
            prompt.rendered,
            tag,
            seed_base + i as u64,
        ));
    }
    let results = gateway.complete_batch(&requests).await;

    let mut records = Vec::new();
    let mut rejects = RejectionCounters::default();
    let mut counts = BTreeMap::new();
    counts.insert("requests".to_string(), requests.len() as u64);
    let generator = format!("{role:?}").to_lowercase();
    for ((result, request), task) in results.into_iter().zip(&requests).zip(schedule) {
        let completion = match result {
            Ok(c) => c,
            Err(GatewayError::Budget(e)) => return Err(GatewayError::Budget(e).into()),
            Err(_) => {
                *counts.entry("rejected_gateway".to_string()).or_default() += 1;
                continue;
            }
        };
        let parsed = extract::extract_json(&completion.text).and_then(|(value, _)| {
            EmbedRecord::from_value(
                task.family,
                task.clone(),
                &value,
                Provenance {
                    generator: generator.clone(),
                    prompt_hash: request.content_hash(),
                    revised: false,
                },
            )
        });
        match parsed {
            Ok(record) => records.push((request.prompt_text().to_string(), task.clone(), record)),
            Err(e) => rejects.add(&e),
        }
    }
    count_rejections(&mut counts, &rejects);
    counts.insert("records".to_string(), records.len() as u64);
    Ok((records, counts))
}

async fn seed(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let (records, counts) = run_synthesis(
        ctx,
        Role::Teacher,
        ctx.config.stage_sizes.seed,
        "seed_sft",
        0,
        0,
    )
    .await?;
    nonempty(&records, StageName::Seed, "valid seed records")?;
    let mut seed_records = Vec::new();
    for (prompt, task, record) in records {
        let target = serde_json::to_string(&record.payload).expect("payload serializes");
        seed_records.push(SftRecord::new(prompt, task, target)?);
    }
    let out = ctx.write_data("seed.json", &seed_records)?;
    Ok(manifest(StageName::Seed, vec![out], counts, serde_json::Value::Null))
}

fn export_sft(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let records: Vec<SftRecord> = ctx.read_data("seed.json")?;
    let shard_manifest = corpus::export(
        &records,
        &ctx.workdir.export_dir("sft"),
        "sft",
        ctx.config.shard_size,
        ctx.config.seed,
        &ctx.config.config_hash(),
    )?;
    let outputs = export_outputs(ctx.workdir, "sft", &shard_manifest)?;
    let counts = BTreeMap::from([("records".to_string(), records.len() as u64)]);
    Ok(manifest(
        StageName::ExportSft,
        outputs,
        counts,
        serde_json::to_value(&shard_manifest).expect("manifest serializes"),
    ))
}

/// The junior generator samples `candidates_per_judge` outputs per prompt;
/// raw texts are kept so judging sees the same list we later index.
async fn generate_root(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let tasks: Vec<TaskDescription> = ctx.read_data("tasks.json")?;
    nonempty(&tasks, StageName::GenerateRoot, "tasks")?;
    let gateway = ctx.gateway(Role::Junior)?;
    let n = ctx.config.stage_sizes.judge;
    let k = ctx.config.candidates_per_judge;
    let schedule = task_schedule(&tasks, n);

    let mut requests = Vec::new();
    for (j, task) in schedule.iter().enumerate() {
        let prompt = ctx
            .forge
            .render_synthesis(task.family, task, ctx.config.seed ^ 0x0a11 ^ j as u64)?;
        for c in 0..k {
            requests.push(ChatRequest::synthesis(
                prompt.rendered.clone(),
                "other",
                SEED_BASE_ROOT + (j * k + c) as u64,
            ));
        }
    }
    let results = gateway.complete_batch(&requests).await;

    let mut groups = Vec::new();
    let mut counts = BTreeMap::new();
    counts.insert("requests".to_string(), requests.len() as u64);
    for (j, task) in schedule.iter().enumerate() {
        let mut candidates = Vec::with_capacity(k);
        for c in 0..k {
            match &results[j * k + c] {
                Ok(completion) => candidates.push(completion.text.clone()),
                Err(GatewayError::Budget(_)) => {
                    return Err(PipelineError::Gateway(GatewayError::Config(
                        "budget exhausted during root generation".into(),
                    )))
                }
                Err(_) => {
                    *counts.entry("rejected_gateway".to_string()).or_default() += 1;
                    candidates.push(String::new());
                }
            }
        }
        groups.push(RootGroup {
            prompt: requests[j * k].prompt_text().to_string(),
            task: (*task).clone(),
            candidates,
        });
    }
    let out = ctx.write_data("root.json", &groups)?;
    counts.insert("records".to_string(), groups.len() as u64);
    Ok(manifest(StageName::GenerateRoot, vec![out], counts, serde_json::Value::Null))
}

async fn judge(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let groups: Vec<RootGroup> = ctx.read_data("root.json")?;
    nonempty(&groups, StageName::Judge, "root groups")?;
    let gateway = ctx.gateway(Role::Teacher)?;

    let mut requests = Vec::new();
    for group in &groups {
        let prompt = ctx.forge.render_judge(&group.prompt, &group.candidates)?;
        requests.push(ChatRequest::judging(prompt, "dpo_signal"));
    }
    let results = gateway.complete_batch(&requests).await;

    let mut judged = Vec::new();
    let mut rejects = RejectionCounters::default();
    let mut counts = BTreeMap::new();
    counts.insert("requests".to_string(), requests.len() as u64);
    for (index, (result, group)) in results.into_iter().zip(&groups).enumerate() {
        let completion = match result {
            Ok(c) => c,
            Err(e) => return Err(e.into()),
        };
        let parsed = extract::extract_json(&completion.text)
            .and_then(|(value, _)| extract::validate_judgment(&value, group.candidates.len()));
        match parsed {
            Ok(judgment) => judged.push(JudgedGroup {
                group: index,
                judgment,
            }),
            Err(e) => rejects.add(&e),
        }
    }
    nonempty(&judged, StageName::Judge, "valid judgments")?;
    let out = ctx.write_data("judgments.json", &judged)?;
    counts.insert("records".to_string(), judged.len() as u64);
    count_rejections(&mut counts, &rejects);
    Ok(manifest(StageName::Judge, vec![out], counts, serde_json::Value::Null))
}

fn export_dpo(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let groups: Vec<RootGroup> = ctx.read_data("root.json")?;
    let judged: Vec<JudgedGroup> = ctx.read_data("judgments.json")?;
    let mut pairs: Vec<PreferencePair> = Vec::new();
    let mut counts = BTreeMap::new();
    for j in &judged {
        let group = &groups[j.group];
        match corpus::build_preference_pair(
            group.prompt.clone(),
            group.task.clone(),
            &group.candidates,
            &j.judgment,
        ) {
            Ok(pair) => pairs.push(pair),
            Err(_) => {
                *counts
                    .entry("rejected_invalid_candidate".to_string())
                    .or_default() += 1;
            }
        }
    }
    nonempty(&pairs, StageName::ExportDpo, "preference pairs")?;
    let shard_manifest = corpus::export(
        &pairs,
        &ctx.workdir.export_dir("dpo"),
        "dpo",
        ctx.config.shard_size,
        ctx.config.seed,
        &ctx.config.config_hash(),
    )?;
    let outputs = export_outputs(ctx.workdir, "dpo", &shard_manifest)?;
    counts.insert("records".to_string(), pairs.len() as u64);
    Ok(manifest(
        StageName::ExportDpo,
        outputs,
        counts,
        serde_json::to_value(&shard_manifest).expect("manifest serializes"),
    ))
}

/// The teacher revises one root datum per group (first valid candidate),
/// up to the configured revise size.
async fn revise_signal(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let groups: Vec<RootGroup> = ctx.read_data("root.json")?;
    nonempty(&groups, StageName::ReviseSignal, "root groups")?;
    let gateway = ctx.gateway(Role::Teacher)?;

    // (group, canonical root payload) for each group with a usable datum.
    let mut roots = Vec::new();
    for group in &groups {
        let datum = group.candidates.iter().find_map(|text| {
            let (value, _) = extract::extract_json(text).ok()?;
            let payload = extract::validate_record(&value, group.task.family).ok()?;
            Some(serde_json::to_string(&payload).expect("payload serializes"))
        });
        if let Some(datum) = datum {
            roots.push((group, datum));
        }
    }
    roots.truncate(ctx.config.stage_sizes.revise);
    nonempty(&roots, StageName::ReviseSignal, "valid root data")?;

    let mut requests = Vec::new();
    for (group, datum) in &roots {
        let prompt = ctx.forge.render_revise(&group.prompt, datum)?;
        requests.push(ChatRequest::judging(prompt, "revise_signal"));
    }
    let results = gateway.complete_batch(&requests).await;

    let mut records = Vec::new();
    let mut rejects = RejectionCounters::default();
    let mut identity = 0u64;
    let mut counts = BTreeMap::new();
    counts.insert("requests".to_string(), requests.len() as u64);
    for (result, (group, datum)) in results.into_iter().zip(roots) {
        let completion = match result {
            Ok(c) => c,
            Err(e) => return Err(e.into()),
        };
        let parsed = extract::extract_json(&completion.text)
            .and_then(|(value, _)| extract::validate_revision(&value))
            .and_then(|revision| {
                let payload = extract::validate_revision_payload(&revision, group.task.family)?;
                Ok(serde_json::to_string(&payload).expect("payload serializes"))
            });
        match parsed {
            Ok(revised) => match RevisorRecord::new(
                group.prompt.clone(),
                group.task.clone(),
                datum,
                revised,
            ) {
                Ok(record) => records.push(record),
                Err(corpus::CorpusError::IdentityRevision) => identity += 1,
                Err(e) => return Err(e.into()),
            },
            Err(e) => rejects.add(&e),
        }
    }
    nonempty(&records, StageName::ReviseSignal, "revisor records")?;
    let out = ctx.write_data("revisor.json", &records)?;
    counts.insert("records".to_string(), records.len() as u64);
    counts.insert("dropped_identity_revisions".to_string(), identity);
    count_rejections(&mut counts, &rejects);
    Ok(manifest(StageName::ReviseSignal, vec![out], counts, serde_json::Value::Null))
}

fn export_revisor_sft(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let records: Vec<RevisorRecord> = ctx.read_data("revisor.json")?;
    let shard_manifest = corpus::export(
        &records,
        &ctx.workdir.export_dir("revisor_sft"),
        "revisor_sft",
        ctx.config.shard_size,
        ctx.config.seed,
        &ctx.config.config_hash(),
    )?;
    let outputs = export_outputs(ctx.workdir, "revisor_sft", &shard_manifest)?;
    let counts = BTreeMap::from([("records".to_string(), records.len() as u64)]);
    Ok(manifest(
        StageName::ExportRevisorSft,
        outputs,
        counts,
        serde_json::to_value(&shard_manifest).expect("manifest serializes"),
    ))
}

async fn synth(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let (records, counts) = run_synthesis(
        ctx,
        Role::Senior,
        ctx.config.stage_sizes.synth,
        "other",
        SEED_BASE_SYNTH,
        0x5eed,
    )
    .await?;
    nonempty(&records, StageName::Synth, "synthesized records")?;
    let items: Vec<SynthItem> = records
        .into_iter()
        .map(|(prompt, _, record)| SynthItem { prompt, record })
        .collect();
    let out = ctx.write_data("synth.json", &items)?;
    Ok(manifest(StageName::Synth, vec![out], counts, serde_json::Value::Null))
}

/// Single-pass revision of the synthesized corpus: invalid revisions fall
/// back to the unrevised record rather than dropping it.
async fn revise(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let items: Vec<SynthItem> = ctx.read_data("synth.json")?;
    nonempty(&items, StageName::Revise, "synth items")?;
    let gateway = ctx.gateway(Role::Revisor)?;

    let mut requests = Vec::new();
    for item in &items {
        let datum = serde_json::to_string(&item.record.payload).expect("payload serializes");
        requests.push(ChatRequest::judging(
            ctx.forge.render_revise(&item.prompt, &datum)?,
            "other",
        ));
    }
    let results = gateway.complete_batch(&requests).await;

    let mut revised = Vec::new();
    let mut kept_root = 0u64;
    let mut counts = BTreeMap::new();
    counts.insert("requests".to_string(), requests.len() as u64);
    for (result, item) in results.into_iter().zip(items) {
        let mut record = item.record;
        let parsed = result
            .map_err(|e| e.to_string())
            .and_then(|completion| {
                extract::extract_json(&completion.text)
                    .and_then(|(value, _)| extract::validate_revision(&value))
                    .and_then(|revision| {
                        extract::validate_revision_payload(&revision, record.family)
                    })
                    .map_err(|e| e.to_string())
            });
        match parsed {
            Ok(payload) if payload != record.payload => {
                record.payload = payload;
                record.provenance.revised = true;
                revised.push(record);
            }
            _ => {
                kept_root += 1;
                revised.push(record);
            }
        }
    }
    let out = ctx.write_data("revised.json", &revised)?;
    counts.insert("records".to_string(), revised.len() as u64);
    counts.insert("kept_unrevised".to_string(), kept_root);
    Ok(manifest(StageName::Revise, vec![out], counts, serde_json::Value::Null))
}

fn dedup_stage(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let records: Vec<EmbedRecord> = ctx.read_data("revised.json")?;
    nonempty(&records, StageName::Dedup, "revised records")?;
    let keys: Vec<String> = records
        .iter()
        .map(|r| format!("{} {} {}", r.query(), r.positive(), r.hard_negative()))
        .collect();
    let (keep, report) = dedup::dedup_keys(&keys, &ctx.config.dedup)?;
    let kept: Vec<EmbedRecord> = records
        .into_iter()
        .zip(&keep)
        .filter_map(|(r, &k)| k.then_some(r))
        .collect();
    nonempty(&kept, StageName::Dedup, "records after dedup")?;
    let out = ctx.write_data("deduped.json", &kept)?;
    let counts = BTreeMap::from([
        ("records".to_string(), kept.len() as u64),
        ("removed".to_string(), report.removed as u64),
    ]);
    Ok(manifest(
        StageName::Dedup,
        vec![out],
        counts,
        serde_json::to_value(&report).expect("report serializes"),
    ))
}

fn mix_stage(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let records: Vec<EmbedRecord> = ctx.read_data("deduped.json")?;
    nonempty(&records, StageName::Mix, "deduplicated records")?;
    let mut pools: BTreeMap<TaskFamily, Vec<TrainTriplet>> = BTreeMap::new();
    for record in &records {
        pools
            .entry(record.family)
            .or_default()
            .push(TrainTriplet::from_record(record)?);
    }
    let (mixed, mix_manifest) = corpus::mix(
        &pools,
        ctx.config.mix.total,
        &ctx.config.mix.ratios,
        ctx.config.mix.shortfall,
        ctx.config.seed,
    )?;
    let out = ctx.write_data("mix.json", &mixed)?;
    let mut counts = BTreeMap::from([("records".to_string(), mixed.len() as u64)]);
    for (family, n) in &mix_manifest.counts {
        counts.insert(format!("mixed_{family}"), *n as u64);
    }
    Ok(manifest(
        StageName::Mix,
        vec![out],
        counts,
        serde_json::to_value(&mix_manifest).expect("manifest serializes"),
    ))
}

fn export_train(ctx: &Ctx<'_>) -> Result<StageManifest, PipelineError> {
    let triplets: Vec<TrainTriplet> = ctx.read_data("mix.json")?;
    let shard_manifest = corpus::export(
        &triplets,
        &ctx.workdir.export_dir("train"),
        "train",
        ctx.config.shard_size,
        ctx.config.seed,
        &ctx.config.config_hash(),
    )?;
    let outputs = export_outputs(ctx.workdir, "train", &shard_manifest)?;
    let counts = BTreeMap::from([("records".to_string(), triplets.len() as u64)]);
    Ok(manifest(
        StageName::ExportTrain,
        outputs,
        counts,
        serde_json::to_value(&shard_manifest).expect("manifest serializes"),
    ))
}
