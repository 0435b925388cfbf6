//! Staged orchestration: brainstorm → seed → junior-SFT export → root
//! generation → judge → DPO export → revise-signal → revisor-SFT export →
//! large-scale synth → single-pass revision → dedup → mix → train export,
//! with resumable per-stage manifests.

pub mod stages;

use crate::config::{Config, ConfigError};
use crate::corpus::CorpusError;
use crate::dedup::DedupError;
use crate::gateway::GatewayError;
use crate::ledger::{Budget, Ledger, LedgerSnapshot};
use crate::prompt::PromptError;
use crate::taxonomy::TaxonomyError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown stage '{0}'")]
    UnknownStage(String),
    #[error("stage '{stage}' requires '{upstream}' to run first")]
    MissingUpstream {
        stage: StageName,
        upstream: StageName,
    },
    #[error("stage '{stage}' has stale inputs: {detail}")]
    StaleInput { stage: StageName, detail: String },
    #[error("manifest for '{stage}' is corrupt: {detail}")]
    CorruptManifest { stage: StageName, detail: String },
    #[error("stage '{stage}' produced no usable records ({detail})")]
    EmptyStage { stage: StageName, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dedup(#[from] DedupError),
}

/// The fixed, acyclic stage graph, in topological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    Topics,
    Brainstorm,
    Seed,
    ExportSft,
    GenerateRoot,
    Judge,
    ExportDpo,
    ReviseSignal,
    ExportRevisorSft,
    Synth,
    Revise,
    Dedup,
    Mix,
    ExportTrain,
}

impl StageName {
    pub const ALL: [StageName; 14] = [
        StageName::Topics,
        StageName::Brainstorm,
        StageName::Seed,
        StageName::ExportSft,
        StageName::GenerateRoot,
        StageName::Judge,
        StageName::ExportDpo,
        StageName::ReviseSignal,
        StageName::ExportRevisorSft,
        StageName::Synth,
        StageName::Revise,
        StageName::Dedup,
        StageName::Mix,
        StageName::ExportTrain,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StageName::Topics => "topics",
            StageName::Brainstorm => "brainstorm",
            StageName::Seed => "seed",
            StageName::ExportSft => "export-sft",
            StageName::GenerateRoot => "generate-root",
            StageName::Judge => "judge",
            StageName::ExportDpo => "export-dpo",
            StageName::ReviseSignal => "revise-signal",
            StageName::ExportRevisorSft => "export-revisor-sft",
            StageName::Synth => "synth",
            StageName::Revise => "revise",
            StageName::Dedup => "dedup",
            StageName::Mix => "mix",
            StageName::ExportTrain => "export-train",
        }
    }

    pub fn dependencies(&self) -> &'static [StageName] {
        match self {
            StageName::Topics => &[],
            StageName::Brainstorm => &[StageName::Topics],
            StageName::Seed => &[StageName::Brainstorm],
            StageName::ExportSft => &[StageName::Seed],
            StageName::GenerateRoot => &[StageName::Brainstorm],
            StageName::Judge => &[StageName::GenerateRoot],
            StageName::ExportDpo => &[StageName::GenerateRoot, StageName::Judge],
            StageName::ReviseSignal => &[StageName::GenerateRoot],
            StageName::ExportRevisorSft => &[StageName::ReviseSignal],
            // The senior generator is "trained" on the DPO and revisor
            // exports, so large-scale synthesis depends on both.
            StageName::Synth => &[
                StageName::Brainstorm,
                StageName::ExportDpo,
                StageName::ExportRevisorSft,
            ],
            StageName::Revise => &[StageName::Synth],
            StageName::Dedup => &[StageName::Revise],
            StageName::Mix => &[StageName::Dedup],
            StageName::ExportTrain => &[StageName::Mix],
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| PipelineError::UnknownStage(s.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// The durable record of one completed stage. A completed stage is
/// immutable; reruns with matching inputs return it verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: StageName,
    /// Upstream-stage output hashes plus the config hash, compared on rerun.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
    pub counts: BTreeMap<String, u64>,
    pub config_hash: String,
    pub seed: u64,
    pub usage: LedgerSnapshot,
    /// Stage-specific report (dedup histogram, mix manifest, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl StageManifest {
    /// One hash summarizing everything this stage produced; downstream
    /// stages record it as an input.
    pub fn output_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for out in &self.outputs {
            hasher.update(out.file.as_bytes());
            hasher.update(out.sha256.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Pending,
    Complete,
    Stale,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: StageName,
    pub state: StageState,
    pub records: Option<u64>,
    pub detail: String,
}

/// Filesystem layout of a pipeline working directory.
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }
    pub fn manifest_path(&self, stage: StageName) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }
    pub fn data_path(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }
    pub fn export_dir(&self, stage: &str) -> PathBuf {
        self.root.join("export").join(stage)
    }
    pub fn ledger_path(&self) -> PathBuf {
        self.root.join("ledger.json")
    }
    pub fn wal_path(&self) -> PathBuf {
        self.root.join("transcript.jsonl")
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes `value` to `path` via a temp file and atomic rename.
pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let parent = path.parent().expect("data paths have parents");
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let mut body = serde_json::to_vec_pretty(value).expect("value serializes");
    body.push(b'\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &body).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let body = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&body).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

pub(crate) fn file_sha256(path: &Path) -> Result<String, PipelineError> {
    let body = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(body)))
}

fn load_manifest(workdir: &Workdir, stage: StageName) -> Result<Option<StageManifest>, PipelineError> {
    let path = workdir.manifest_path(stage);
    if !path.exists() {
        return Ok(None);
    }
    let body = fs::read_to_string(&path).map_err(io_err(&path))?;
    match serde_json::from_str::<StageManifest>(&body) {
        Ok(m) => Ok(Some(m)),
        Err(e) => Err(PipelineError::CorruptManifest {
            stage,
            detail: e.to_string(),
        }),
    }
}

/// The input-hash map a run of `stage` would record right now.
fn current_inputs(
    workdir: &Workdir,
    config: &Config,
    stage: StageName,
) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut inputs = BTreeMap::new();
    inputs.insert("config".to_string(), config.config_hash());
    for dep in stage.dependencies() {
        match load_manifest(workdir, *dep)? {
            None => {
                return Err(PipelineError::MissingUpstream {
                    stage,
                    upstream: *dep,
                })
            }
            Some(m) => {
                if m.config_hash != config.config_hash() {
                    return Err(PipelineError::StaleInput {
                        stage,
                        detail: format!("upstream '{dep}' ran under a different config"),
                    });
                }
                inputs.insert(dep.to_string(), m.output_hash());
            }
        }
    }
    Ok(inputs)
}

fn persist_ledger(workdir: &Workdir, ledger: &Ledger) -> Result<(), PipelineError> {
    write_json_atomic(&workdir.ledger_path(), &ledger.snapshot())
}

pub fn load_ledger_snapshot(workdir: &Workdir) -> Result<LedgerSnapshot, PipelineError> {
    let path = workdir.ledger_path();
    if path.exists() {
        read_json(&path)
    } else {
        Ok(LedgerSnapshot::default())
    }
}

fn build_ledger(workdir: &Workdir, config: &Config) -> Result<Arc<Ledger>, PipelineError> {
    let caps = config
        .budgets
        .call_caps
        .iter()
        .map(|(name, cap)| Ok((name.parse().map_err(|e: crate::ledger::LedgerError| {
            PipelineError::Config(ConfigError::Invalid(e.to_string()))
        })?, *cap)))
        .collect::<Result<BTreeMap<_, _>, PipelineError>>()?;
    let ledger = Ledger::new(Budget {
        caps,
        soft: config.budgets.soft,
    });
    ledger.restore(&load_ledger_snapshot(workdir)?);
    Ok(Arc::new(ledger))
}

/// Runs exactly one stage. Idempotent: a completed stage whose recorded
/// inputs still match is returned as-is without touching the backend.
pub async fn run_stage(
    config: &Config,
    workdir: &Workdir,
    stage: StageName,
) -> Result<StageManifest, PipelineError> {
    let inputs = current_inputs(workdir, config, stage)?;
    if let Some(existing) = load_manifest(workdir, stage)? {
        if existing.inputs == inputs && existing.config_hash == config.config_hash() {
            return Ok(existing);
        }
        // Inputs moved under a completed stage: refuse to silently rebuild.
        return Err(PipelineError::StaleInput {
            stage,
            detail: "recorded input hashes no longer match; remove the manifest to force a rerun"
                .into(),
        });
    }
    let ledger = build_ledger(workdir, config)?;
    let mut manifest = stages::execute(config, workdir, stage, &ledger).await?;
    manifest.inputs = inputs;
    manifest.config_hash = config.config_hash();
    manifest.seed = config.seed;
    manifest.usage = ledger.snapshot();
    persist_ledger(workdir, &ledger)?;
    write_json_atomic(&workdir.manifest_path(stage), &manifest)?;
    Ok(manifest)
}

/// Runs every stage in topological order (completed stages are no-ops).
pub async fn run_all(config: &Config, workdir: &Workdir) -> Result<Vec<StageManifest>, PipelineError> {
    let mut manifests = Vec::new();
    for stage in StageName::ALL {
        manifests.push(run_stage(config, workdir, stage).await?);
    }
    Ok(manifests)
}

/// Per-stage state table. Corrupt manifests are reported stale with their
/// parse error, never silently re-run.
pub fn status(config: &Config, workdir: &Workdir) -> Result<Vec<StageStatus>, PipelineError> {
    let mut table = Vec::new();
    for stage in StageName::ALL {
        let manifest = match load_manifest(workdir, stage) {
            Ok(m) => m,
            Err(PipelineError::CorruptManifest { detail, .. }) => {
                table.push(StageStatus {
                    stage,
                    state: StageState::Stale,
                    records: None,
                    detail: format!("corrupt manifest: {detail}"),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let status = match manifest {
            None => StageStatus {
                stage,
                state: StageState::Pending,
                records: None,
                detail: String::new(),
            },
            Some(m) => match current_inputs(workdir, config, stage) {
                Ok(inputs) if inputs == m.inputs && m.config_hash == config.config_hash() => {
                    StageStatus {
                        stage,
                        state: StageState::Complete,
                        records: m.counts.get("records").copied(),
                        detail: String::new(),
                    }
                }
                Ok(_) => StageStatus {
                    stage,
                    state: StageState::Stale,
                    records: m.counts.get("records").copied(),
                    detail: "input hashes changed".into(),
                },
                Err(PipelineError::MissingUpstream { upstream, .. }) => StageStatus {
                    stage,
                    state: StageState::Stale,
                    records: m.counts.get("records").copied(),
                    detail: format!("upstream '{upstream}' manifest missing"),
                },
                Err(PipelineError::StaleInput { detail, .. }) => StageStatus {
                    stage,
                    state: StageState::Stale,
                    records: m.counts.get("records").copied(),
                    detail,
                },
                Err(e) => return Err(e),
            },
        };
        table.push(status);
    }
    Ok(table)
}

/// Renders the status table plus cumulative cost as aligned text.
pub fn status_table(statuses: &[StageStatus], usage: &LedgerSnapshot) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<20} {:<10} {:>10}  detail\n", "stage", "state", "records"));
    for s in statuses {
        let records = s
            .records
            .map(|r| r.to_string())
            .unwrap_or_else(|| "-".into());
        let state = match s.state {
            StageState::Pending => "pending",
            StageState::Complete => "complete",
            StageState::Stale => "stale",
        };
        out.push_str(&format!(
            "{:<20} {:<10} {:>10}  {}\n",
            s.stage.to_string(),
            state,
            records,
            s.detail
        ));
    }
    let total = usage.total();
    out.push_str(&format!(
        "cumulative cost: {} calls, {} tokens\n",
        total.calls,
        total.total_tokens()
    ));
    out
}
