use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, CompletionRequest, ProviderError, RawCompletion, TaskTag};

/// One line of a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCompletion {
    pub digest: String,
    pub task: TaskTag,
    pub attempt: u32,
    pub provider_id: String,
    pub payload: Value,
    pub raw_text: String,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> ProviderError {
    ProviderError::InvalidRequest(format!("{}: {e}", path.display()))
}

/// Passes calls through and appends each successful completion to an
/// NDJSON record file.
pub struct RecordingBackend<B> {
    inner: B,
    file: Mutex<File>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn create(inner: B, path: &Path) -> Result<Self, ProviderError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_error(path, e))?;
        Ok(Self {
            inner,
            file: Mutex::new(file),
        })
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn call(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let raw = self.inner.call(request)?;
        let record = RecordedCompletion {
            digest: request.digest(),
            task: request.task,
            attempt: request.attempt,
            provider_id: self.inner.id(),
            payload: raw.payload.clone(),
            raw_text: raw.raw_text.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("record file lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| ProviderError::Transport(format!("writing record file: {e}")))?;
        Ok(raw)
    }
}

/// Answers requests from a record file by digest; unknown requests are a
/// transport error.
pub struct ReplayBackend {
    records: HashMap<String, RecordedCompletion>,
    provider_id: String,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let file = File::open(path).map_err(|e| io_error(path, e))?;
        let mut records = HashMap::new();
        let mut provider_id = None;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_error(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordedCompletion = serde_json::from_str(&line)
                .map_err(|e| io_error(path, format!("line {}: {e}", n + 1)))?;
            provider_id.get_or_insert_with(|| rec.provider_id.clone());
            records.entry(rec.digest.clone()).or_insert(rec);
        }
        Ok(Self::from_records(records, provider_id.unwrap_or_else(|| "replay".into())))
    }

    fn from_records(records: HashMap<String, RecordedCompletion>, provider_id: String) -> Self {
        Self { records, provider_id }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Backend for ReplayBackend {
    /// The recorded provider's id, so replayed artifacts match recorded ones.
    fn id(&self) -> String {
        self.provider_id.clone()
    }

    fn call(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let digest = request.digest();
        let rec = self.records.get(&digest).ok_or_else(|| {
            ProviderError::Transport(format!(
                "no recorded completion for {} attempt {} (digest {digest})",
                request.task, request.attempt
            ))
        })?;
        Ok(RawCompletion {
            payload: rec.payload.clone(),
            raw_text: rec.raw_text.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{FieldType, OutputSchema, RuleBackend};

    fn request(name: &str) -> CompletionRequest {
        CompletionRequest::new(
            TaskTag::DescriptionRewrite,
            OutputSchema::new().field("description", FieldType::Text, ""),
            serde_json::json!({"signal": {"name": name, "kind": "bool", "bit_start": 0, "bit_length": 1}}),
        )
    }

    #[test]
    fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.ndjson");
        let recorder = RecordingBackend::create(RuleBackend::new(), &path).unwrap();
        let a = recorder.call(&request("DrOpen")).unwrap();
        let b = recorder.call(&request("HrnAct")).unwrap();
        drop(recorder);
        let replay = ReplayBackend::load(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.id(), "rule");
        assert_eq!(replay.call(&request("DrOpen")).unwrap(), a);
        assert_eq!(replay.call(&request("HrnAct")).unwrap(), b);
        assert!(matches!(replay.call(&request("Other")), Err(ProviderError::Transport(_))));
    }
}
