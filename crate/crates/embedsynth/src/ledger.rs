//! Per-stage accounting of API calls and token usage, with optional hard
//! budgets and a cost report against the reference pipeline figures.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Reference cost rows the report always includes: the staged pipeline's
/// published call/token budget and the single-model baseline it is compared
/// against.
pub const REFERENCE_STAGE_CALLS: [(Stage, u64); 3] = [
    (Stage::SeedSft, 25_000),
    (Stage::DpoSignal, 10_000),
    (Stage::ReviseSignal, 10_000),
];
pub const REFERENCE_STAGE_TOKENS: [(Stage, u64); 3] = [
    (Stage::SeedSft, 10_000_000),
    (Stage::DpoSignal, 12_000_000),
    (Stage::ReviseSignal, 10_000_000),
];
pub const BASELINE_CALLS: u64 = 500_000;
pub const BASELINE_TOKENS: u64 = 180_000_000;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("unknown stage label '{0}'")]
    UnknownStage(String),
    #[error("stage {stage} budget exhausted: cap {cap} calls already spent")]
    BudgetExhausted { stage: Stage, cap: u64 },
}

/// Pipeline stages that consume teacher-model API calls, plus a catch-all
/// for everything served by the aligned small models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SeedSft,
    DpoSignal,
    ReviseSignal,
    Other,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::SeedSft,
        Stage::DpoSignal,
        Stage::ReviseSignal,
        Stage::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::SeedSft => "seed_sft",
            Stage::DpoSignal => "dpo_signal",
            Stage::ReviseSignal => "revise_signal",
            Stage::Other => "other",
        }
    }

    fn index(&self) -> usize {
        match self {
            Stage::SeedSft => 0,
            Stage::DpoSignal => 1,
            Stage::ReviseSignal => 2,
            Stage::Other => 3,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = LedgerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seed_sft" => Ok(Stage::SeedSft),
            "dpo_signal" => Ok(Stage::DpoSignal),
            "revise_signal" => Ok(Stage::ReviseSignal),
            "other" => Ok(Stage::Other),
            other => Err(LedgerError::UnknownStage(other.to_string())),
        }
    }
}

/// Usage totals for one stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageRecord {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Consistent point-in-time view of all stage totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub stages: BTreeMap<Stage, UsageRecord>,
}

impl LedgerSnapshot {
    pub fn total(&self) -> UsageRecord {
        let mut t = UsageRecord::default();
        for u in self.stages.values() {
            t.calls += u.calls;
            t.prompt_tokens += u.prompt_tokens;
            t.completion_tokens += u.completion_tokens;
        }
        t
    }
}

/// Per-stage call caps. Hard by default: the call that would exceed a cap is
/// refused before dispatch. `soft` downgrades refusal to a warning flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Budget {
    #[serde(default)]
    pub caps: BTreeMap<Stage, u64>,
    #[serde(default)]
    pub soft: bool,
}

struct StageCells {
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

/// Thread-safe accumulator. Counts every retry attempt as one call, because
/// providers bill per request.
pub struct Ledger {
    stages: [StageCells; 4],
    budget: Budget,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new(Budget::default())
    }
}

impl Ledger {
    pub fn new(budget: Budget) -> Self {
        Ledger {
            stages: std::array::from_fn(|_| StageCells {
                calls: AtomicU64::new(0),
                prompt_tokens: AtomicU64::new(0),
                completion_tokens: AtomicU64::new(0),
            }),
            budget,
        }
    }

    /// Reserves one call against the stage's budget. Returns
    /// `BudgetExhausted` when a hard cap would be exceeded; soft budgets
    /// always admit the call.
    pub fn charge_call(&self, stage: Stage) -> Result<(), LedgerError> {
        let cell = &self.stages[stage.index()];
        if let Some(&cap) = self.budget.caps.get(&stage) {
            if !self.budget.soft {
                // CAS loop so concurrent callers cannot overshoot the cap.
                loop {
                    let cur = cell.calls.load(Ordering::SeqCst);
                    if cur >= cap {
                        return Err(LedgerError::BudgetExhausted { stage, cap });
                    }
                    if cell
                        .calls
                        .compare_exchange(cur, cur + 1, Ordering::SeqCst, Ordering::SeqCst)
                        .is_ok()
                    {
                        return Ok(());
                    }
                }
            }
        }
        cell.calls.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    /// Adds token usage to a stage (calls are charged separately, one per
    /// attempt).
    pub fn record_tokens(&self, stage: Stage, prompt_tokens: u64, completion_tokens: u64) {
        let cell = &self.stages[stage.index()];
        cell.prompt_tokens.fetch_add(prompt_tokens, Ordering::SeqCst);
        cell.completion_tokens
            .fetch_add(completion_tokens, Ordering::SeqCst);
    }

    /// Accumulates a full usage record at once.
    pub fn record(&self, stage: Stage, calls: u64, prompt_tokens: u64, completion_tokens: u64) {
        let cell = &self.stages[stage.index()];
        cell.calls.fetch_add(calls, Ordering::SeqCst);
        cell.prompt_tokens.fetch_add(prompt_tokens, Ordering::SeqCst);
        cell.completion_tokens
            .fetch_add(completion_tokens, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let mut stages = BTreeMap::new();
        for stage in Stage::ALL {
            let cell = &self.stages[stage.index()];
            stages.insert(
                stage,
                UsageRecord {
                    calls: cell.calls.load(Ordering::SeqCst),
                    prompt_tokens: cell.prompt_tokens.load(Ordering::SeqCst),
                    completion_tokens: cell.completion_tokens.load(Ordering::SeqCst),
                },
            );
        }
        LedgerSnapshot { stages }
    }

    /// Restores counters from a snapshot (used when resuming a workdir).
    pub fn restore(&self, snapshot: &LedgerSnapshot) {
        for (stage, u) in &snapshot.stages {
            let cell = &self.stages[stage.index()];
            cell.calls.store(u.calls, Ordering::SeqCst);
            cell.prompt_tokens.store(u.prompt_tokens, Ordering::SeqCst);
            cell.completion_tokens
                .store(u.completion_tokens, Ordering::SeqCst);
        }
    }
}

/// Cost report: live totals per stage plus the fixed reference rows and
/// ratio of the live run against both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub live: LedgerSnapshot,
    pub live_total: UsageRecord,
    pub reference_calls: u64,
    pub reference_tokens: u64,
    pub baseline_calls: u64,
    pub baseline_tokens: u64,
    /// reference staged pipeline vs single-model baseline
    pub reference_call_ratio: f64,
    pub reference_token_ratio: f64,
    /// live run vs reference and vs baseline
    pub live_vs_reference_calls: f64,
    pub live_vs_baseline_calls: f64,
    pub budget: Option<Budget>,
}

pub fn report(snapshot: &LedgerSnapshot, budget: Option<Budget>) -> CostReport {
    let reference_calls: u64 = REFERENCE_STAGE_CALLS.iter().map(|(_, c)| c).sum();
    let reference_tokens: u64 = REFERENCE_STAGE_TOKENS.iter().map(|(_, t)| t).sum();
    let live_total = snapshot.total();
    CostReport {
        live: snapshot.clone(),
        live_total,
        reference_calls,
        reference_tokens,
        baseline_calls: BASELINE_CALLS,
        baseline_tokens: BASELINE_TOKENS,
        reference_call_ratio: reference_calls as f64 / BASELINE_CALLS as f64,
        reference_token_ratio: reference_tokens as f64 / BASELINE_TOKENS as f64,
        live_vs_reference_calls: live_total.calls as f64 / reference_calls as f64,
        live_vs_baseline_calls: live_total.calls as f64 / BASELINE_CALLS as f64,
        budget,
    }
}

impl CostReport {
    /// Renders an aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>12} {:>16} {:>16}\n",
            "stage", "calls", "prompt_tokens", "completion_tokens"
        ));
        for stage in Stage::ALL {
            let u = self.live.stages.get(&stage).copied().unwrap_or_default();
            out.push_str(&format!(
                "{:<16} {:>12} {:>16} {:>16}\n",
                stage.as_str(),
                u.calls,
                u.prompt_tokens,
                u.completion_tokens
            ));
        }
        out.push_str(&format!(
            "{:<16} {:>12} {:>16} {:>16}\n",
            "total",
            self.live_total.calls,
            self.live_total.prompt_tokens,
            self.live_total.completion_tokens
        ));
        out.push_str(&format!(
            "\nreference staged pipeline: {} calls, {} tokens\n",
            self.reference_calls, self.reference_tokens
        ));
        out.push_str(&format!(
            "single-model baseline:     {} calls, {} tokens\n",
            self.baseline_calls, self.baseline_tokens
        ));
        out.push_str(&format!(
            "reference/baseline ratio:  {:.4} calls, {:.4} tokens\n",
            self.reference_call_ratio, self.reference_token_ratio
        ));
        out.push_str(&format!(
            "live/reference calls: {:.4}   live/baseline calls: {:.4}\n",
            self.live_vs_reference_calls, self.live_vs_baseline_calls
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn record_accumulates() {
        let ledger = Ledger::default();
        ledger.record(Stage::SeedSft, 1, 10, 20);
        ledger.record(Stage::SeedSft, 1, 10, 20);
        let snap = ledger.snapshot();
        let u = snap.stages[&Stage::SeedSft];
        assert_eq!((u.calls, u.prompt_tokens, u.completion_tokens), (2, 20, 40));
    }

    #[test]
    fn zero_record_changes_nothing() {
        let ledger = Ledger::default();
        ledger.record(Stage::Other, 0, 0, 0);
        assert_eq!(ledger.snapshot().total(), UsageRecord::default());
    }

    #[test]
    fn concurrent_records_sum_exactly() {
        let ledger = Arc::new(Ledger::default());
        let mut handles = Vec::new();
        for _ in 0..8 {
            let l = Arc::clone(&ledger);
            handles.push(std::thread::spawn(move || {
                for _ in 0..1000 {
                    l.record(Stage::DpoSignal, 1, 3, 7);
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let u = ledger.snapshot().stages[&Stage::DpoSignal];
        assert_eq!((u.calls, u.prompt_tokens, u.completion_tokens), (8000, 24000, 56000));
    }

    #[test]
    fn hard_budget_refuses_over_cap() {
        let mut caps = BTreeMap::new();
        caps.insert(Stage::SeedSft, 3);
        let ledger = Ledger::new(Budget { caps, soft: false });
        for _ in 0..3 {
            ledger.charge_call(Stage::SeedSft).unwrap();
        }
        assert!(matches!(
            ledger.charge_call(Stage::SeedSft),
            Err(LedgerError::BudgetExhausted { cap: 3, .. })
        ));
        // other stages unaffected
        ledger.charge_call(Stage::Other).unwrap();
    }

    #[test]
    fn soft_budget_admits_over_cap() {
        let mut caps = BTreeMap::new();
        caps.insert(Stage::SeedSft, 1);
        let ledger = Ledger::new(Budget { caps, soft: true });
        ledger.charge_call(Stage::SeedSft).unwrap();
        ledger.charge_call(Stage::SeedSft).unwrap();
        assert_eq!(ledger.snapshot().stages[&Stage::SeedSft].calls, 2);
    }

    #[test]
    fn reference_rows_sum_to_published_totals() {
        let r = report(&LedgerSnapshot::default(), None);
        assert_eq!(r.reference_calls, 45_000);
        assert_eq!(r.reference_tokens, 32_000_000);
        assert!(r.reference_call_ratio < 0.1);
        assert!(r.reference_token_ratio < 0.2);
    }

    #[test]
    fn fully_consumed_budgets_reach_total() {
        let ledger = Ledger::default();
        for (stage, cap) in REFERENCE_STAGE_CALLS {
            ledger.record(stage, cap, 0, 0);
        }
        assert_eq!(ledger.snapshot().total().calls, 45_000);
    }

    #[test]
    fn stage_labels_round_trip() {
        for stage in Stage::ALL {
            assert_eq!(stage.as_str().parse::<Stage>().unwrap(), stage);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }
}
