//! Write-ahead transcript log: newline-delimited JSON records keyed by the
//! request content hash, so a resumed run replays completions instead of
//! re-spending API calls.

use super::ChatRequest;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalEntry {
    pub request_hash: String,
    pub request: ChatRequest,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub attempts: u32,
}

pub struct TranscriptLog {
    path: PathBuf,
    index: Mutex<HashMap<String, WalEntry>>,
    file: Mutex<File>,
}

impl TranscriptLog {
    /// Opens (or creates) the log and loads the existing index. Lines that
    /// fail to parse are skipped; a torn final line from a crash is not
    /// fatal.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut index = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if let Ok(entry) = serde_json::from_str::<WalEntry>(&line) {
                    index.insert(entry.request_hash.clone(), entry);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TranscriptLog {
            path: path.to_path_buf(),
            index: Mutex::new(index),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lookup(&self, hash: &str) -> Option<WalEntry> {
        self.index.lock().unwrap().get(hash).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, entry: &WalEntry) -> std::io::Result<()> {
        let line = serde_json::to_string(entry).expect("wal entry serializes");
        {
            let mut file = self.file.lock().unwrap();
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        self.index
            .lock()
            .unwrap()
            .insert(entry.request_hash.clone(), entry.clone());
        Ok(())
    }

    /// Replays the log into per-stage totals: (calls including retries,
    /// prompt tokens, completion tokens) keyed by stage tag.
    pub fn replay_totals(&self) -> HashMap<String, (u64, u64, u64)> {
        let mut totals: HashMap<String, (u64, u64, u64)> = HashMap::new();
        for entry in self.index.lock().unwrap().values() {
            let t = totals.entry(entry.request.tag.clone()).or_default();
            t.0 += entry.attempts as u64;
            t.1 += entry.prompt_tokens;
            t.2 += entry.completion_tokens;
        }
        totals
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: u64) -> WalEntry {
        let request = ChatRequest::synthesis(format!("prompt {i}"), "seed_sft", i);
        WalEntry {
            request_hash: request.content_hash(),
            request,
            response: format!("response {i}"),
            prompt_tokens: 10,
            completion_tokens: 7,
            attempts: 1,
        }
    }

    #[test]
    fn append_then_reopen_restores_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wal.jsonl");
        let hash0;
        {
            let wal = TranscriptLog::open(&path).unwrap();
            let e = entry(0);
            hash0 = e.request_hash.clone();
            wal.append(&e).unwrap();
            wal.append(&entry(1)).unwrap();
        }
        let wal = TranscriptLog::open(&path).unwrap();
        assert_eq!(wal.len(), 2);
        assert_eq!(wal.lookup(&hash0).unwrap().response, "response 0");
    }

    #[test]
    fn torn_trailing_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wal.jsonl");
        {
            let wal = TranscriptLog::open(&path).unwrap();
            wal.append(&entry(0)).unwrap();
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"request_hash\": \"trunc")
            .unwrap();
        let wal = TranscriptLog::open(&path).unwrap();
        assert_eq!(wal.len(), 1);
    }

    #[test]
    fn replay_totals_count_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let wal = TranscriptLog::open(&dir.path().join("w.jsonl")).unwrap();
        let mut e = entry(0);
        e.attempts = 3;
        wal.append(&e).unwrap();
        wal.append(&entry(1)).unwrap();
        let totals = wal.replay_totals();
        assert_eq!(totals["seed_sft"], (4, 20, 14));
    }
}
