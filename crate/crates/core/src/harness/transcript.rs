use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::codec::ScoreOutcome;
use crate::gateway::{CacheKey, Exchange, FinishReason, GatewayError, Message};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Generate,
    Verify,
    Reason,
    Score,
}

/// One gateway call made during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub run_id: String,
    pub item_id: String,
    pub phase: Phase,
    pub step_index: usize,
    /// Candidate sentence index for sentence-context calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_index: Option<usize>,
    /// 1 for the scoring retry with the reminder line.
    #[serde(default)]
    pub attempt: u32,
    pub request: Vec<Message>,
    pub response_text: Option<String>,
    pub finish_reason: Option<FinishReason>,
    #[serde(default)]
    pub from_cache: bool,
    /// Parsed score or verdict, when the call's reply was parsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub digest: CacheKey,
    /// Set on the record that settles the item with a score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ScoreOutcome>,
    /// Set on the record that settles the item as failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_failed: Option<String>,
}

impl TranscriptRecord {
    pub fn from_exchange(run_id: &str, item_id: &str, phase: Phase, ex: &Exchange) -> Self {
        TranscriptRecord {
            run_id: run_id.to_string(),
            item_id: item_id.to_string(),
            phase,
            step_index: ex.step_index,
            sentence_index: None,
            attempt: 0,
            request: ex.request.clone(),
            response_text: Some(ex.response.text.clone()),
            finish_reason: Some(ex.response.finish_reason),
            from_cache: ex.response.from_cache,
            parsed: None,
            error: None,
            digest: ex.response.digest.clone(),
            outcome: None,
            item_failed: None,
        }
    }

    pub fn from_error(
        run_id: &str,
        item_id: &str,
        phase: Phase,
        step_index: usize,
        request: Vec<Message>,
        err: &GatewayError,
    ) -> Self {
        TranscriptRecord {
            run_id: run_id.to_string(),
            item_id: item_id.to_string(),
            phase,
            step_index,
            sentence_index: None,
            attempt: 0,
            request,
            response_text: None,
            finish_reason: None,
            from_cache: false,
            parsed: None,
            error: Some(err.to_string()),
            digest: err.key.clone(),
            outcome: None,
            item_failed: None,
        }
    }

    pub fn settles_item(&self) -> bool {
        self.outcome.is_some() || self.item_failed.is_some()
    }
}

/// Append-only JSONL transcript, optionally mirrored to a file.
#[derive(Debug, Default)]
pub struct Transcript {
    records: Mutex<Vec<TranscriptRecord>>,
    file: Option<Mutex<File>>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Transcript::default()
    }

    /// Appends to `path`, creating it if needed.
    pub fn append_to(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Transcript {
            records: Mutex::new(Vec::new()),
            file: Some(Mutex::new(file)),
        })
    }

    /// Writes a batch of records contiguously and flushes.
    pub fn write_all(&self, batch: Vec<TranscriptRecord>) -> io::Result<()> {
        if let Some(file) = &self.file {
            let mut buf = Vec::new();
            for r in &batch {
                serde_json::to_writer(&mut buf, r).map_err(io::Error::other)?;
                buf.push(b'\n');
            }
            let mut f = file.lock().expect("transcript lock poisoned");
            f.write_all(&buf)?;
            f.flush()?;
        }
        self.records.lock().expect("transcript lock poisoned").extend(batch);
        Ok(())
    }

    /// Records written through this handle (not those already on disk).
    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().expect("transcript lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("transcript lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads a JSONL transcript. A trailing partial line (from an interrupted
/// write) is ignored; any other unparseable line is an error.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::io(path, e))?;
    let mut records = Vec::with_capacity(lines.len());
    let last = lines.len();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TranscriptRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if i + 1 == last && !line.ends_with('}') => break,
            Err(e) => {
                return Err(HarnessError::CorruptTranscript {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}
