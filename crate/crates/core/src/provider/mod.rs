//! Structured-completion providers.
//!
//! Every stage that would ask a language model for an artifact goes through
//! [`CompletionProvider::complete_structured`]. A provider is a
//! [`StructuredProvider`] wrapped around a [`Backend`]; the wrapper owns
//! output-schema validation, the re-prompt budget and the usage meter, so
//! every backend (rule-based, fault-injecting, record/replay, remote HTTP)
//! honours the same contract.

mod fault;
mod remote;
mod replay;
mod rule;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fault::{FaultClass, FaultInjectingBackend, FaultPlan, FaultSchedule};
pub use remote::{chat_completion_stub, parse_prompt, render_prompt, RemoteBackend, RemoteConfig};
pub use replay::{RecordedCompletion, RecordingBackend, ReplayBackend};
pub use rule::{parse_directives, Directive, RuleBackend};

/// Default number of schema re-prompts after the first attempt.
pub const DEFAULT_REPROMPT_BUDGET: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    CodecSynthesis,
    DescriptionRewrite,
    Alignment,
    EndpointFill,
}

impl TaskTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskTag::CodecSynthesis => "codec_synthesis",
            TaskTag::DescriptionRewrite => "description_rewrite",
            TaskTag::Alignment => "alignment",
            TaskTag::EndpointFill => "endpoint_fill",
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    /// Non-empty string.
    Text,
    Number,
    Boolean,
    Object,
    List,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    pub ty: FieldType,
    pub required: bool,
    pub semantic: String,
}

/// Names the fields a payload must carry and their semantic types.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSchema {
    pub fields: Vec<SchemaField>,
}

impl OutputSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, name: &str, ty: FieldType, semantic: &str) -> Self {
        self.fields.push(SchemaField {
            name: name.into(),
            ty,
            required: true,
            semantic: semantic.into(),
        });
        self
    }

    pub fn optional(mut self, name: &str, ty: FieldType, semantic: &str) -> Self {
        self.fields.push(SchemaField {
            name: name.into(),
            ty,
            required: false,
            semantic: semantic.into(),
        });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Check a payload; the message names the first offending field.
    pub fn validate(&self, payload: &Value) -> Result<(), String> {
        let Some(obj) = payload.as_object() else {
            return Err("payload is not an object".into());
        };
        for field in &self.fields {
            let value = match obj.get(&field.name) {
                None | Some(Value::Null) if field.required => {
                    return Err(format!("missing required field `{}`", field.name))
                }
                None | Some(Value::Null) => continue,
                Some(v) => v,
            };
            let ok = match field.ty {
                FieldType::Text => value.as_str().is_some_and(|s| !s.trim().is_empty()),
                FieldType::Number => value.is_number(),
                FieldType::Boolean => value.is_boolean(),
                FieldType::Object => value.is_object(),
                FieldType::List => value.is_array(),
                FieldType::Any => true,
            };
            if !ok {
                return Err(format!(
                    "field `{}` does not match type {:?}",
                    field.name, field.ty
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub label: String,
    pub text: String,
}

/// One structured completion call.
///
/// `materials` carries the structured inputs (the signal definitions,
/// candidate lists, endpoint contract); `sections` is the prose prompt
/// rendered for remote models; `instructions` are human refinement
/// constraints; `feedback` reports the previous attempt's failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub task: TaskTag,
    pub sections: Vec<PromptSection>,
    pub materials: Value,
    pub schema: OutputSchema,
    pub attempt: u32,
    #[serde(default)]
    pub feedback: Option<String>,
    #[serde(default)]
    pub instructions: Vec<String>,
}

impl CompletionRequest {
    pub fn new(task: TaskTag, schema: OutputSchema, materials: Value) -> Self {
        Self {
            task,
            sections: Vec::new(),
            materials,
            schema,
            attempt: 1,
            feedback: None,
            instructions: Vec::new(),
        }
    }

    pub fn section(mut self, label: &str, text: &str) -> Self {
        self.sections.push(PromptSection {
            label: label.into(),
            text: text.into(),
        });
        self
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    pub fn with_feedback(mut self, feedback: Option<String>) -> Self {
        self.feedback = feedback;
        self
    }

    pub fn with_instructions(mut self, instructions: Vec<String>) -> Self {
        self.instructions = instructions;
        self
    }

    /// Hex SHA-256 of the canonical JSON form; keys record/replay files.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("requests serialize");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        to_hex(&h.finalize())
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.schema.is_empty() {
            return Err(ProviderError::InvalidRequest("output schema is empty".into()));
        }
        if self.attempt == 0 {
            return Err(ProviderError::InvalidRequest("attempt numbering starts at 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub payload: Value,
    pub raw_text: String,
    pub provider_id: String,
}

/// Unvalidated backend output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub payload: Value,
    pub raw_text: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("{task}: output schema violated after {attempts} attempt(s): {message}")]
    SchemaViolation {
        task: TaskTag,
        attempts: u32,
        message: String,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("injected fault: {0}")]
    FaultInjected(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Produces one raw completion per call. Implementations must be callable
/// from several threads at once.
pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn call(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn call(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        (**self).call(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn call(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        (**self).call(request)
    }
}

pub trait CompletionProvider: Send + Sync {
    fn complete_structured(&self, request: &CompletionRequest)
        -> Result<CompletionResult, ProviderError>;
    fn meter_snapshot(&self) -> UsageMeter;
    fn provider_id(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskUsage {
    pub calls: u64,
    pub failures: u64,
    pub latency_ms: f64,
}

/// Per-task call, failure and latency counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageMeter {
    pub tasks: BTreeMap<TaskTag, TaskUsage>,
}

impl UsageMeter {
    pub fn task(&self, tag: TaskTag) -> TaskUsage {
        self.tasks.get(&tag).copied().unwrap_or_default()
    }

    pub fn total_calls(&self) -> u64 {
        self.tasks.values().map(|t| t.calls).sum()
    }

    pub fn total_failures(&self) -> u64 {
        self.tasks.values().map(|t| t.failures).sum()
    }

    /// Call and failure counts only; latency varies between runs.
    pub fn counts(&self) -> BTreeMap<TaskTag, (u64, u64)> {
        self.tasks
            .iter()
            .map(|(k, v)| (*k, (v.calls, v.failures)))
            .collect()
    }
}

/// Validates backend output against the request schema, re-prompting up to
/// `reprompt_budget` times, and meters every backend invocation.
pub struct StructuredProvider<B> {
    backend: B,
    reprompt_budget: u32,
    meter: Mutex<UsageMeter>,
}

impl<B: Backend> StructuredProvider<B> {
    pub fn new(backend: B) -> Self {
        Self::with_budget(backend, DEFAULT_REPROMPT_BUDGET)
    }

    pub fn with_budget(backend: B, reprompt_budget: u32) -> Self {
        Self {
            backend,
            reprompt_budget,
            meter: Mutex::new(UsageMeter::default()),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    fn record(&self, task: TaskTag, started: Instant) {
        let mut meter = self.meter.lock().expect("meter lock");
        let usage = meter.tasks.entry(task).or_default();
        usage.calls += 1;
        usage.latency_ms += started.elapsed().as_secs_f64() * 1000.0;
    }

    fn record_failure(&self, task: TaskTag) {
        let mut meter = self.meter.lock().expect("meter lock");
        meter.tasks.entry(task).or_default().failures += 1;
    }
}

impl<B: Backend> CompletionProvider for StructuredProvider<B> {
    fn complete_structured(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, ProviderError> {
        request.validate()?;
        let mut current = request.clone();
        let mut last = String::new();
        for _ in 0..=self.reprompt_budget {
            let started = Instant::now();
            let outcome = self.backend.call(&current);
            self.record(request.task, started);
            let raw = match outcome {
                Ok(raw) => raw,
                Err(err) => {
                    self.record_failure(request.task);
                    return Err(err);
                }
            };
            match request.schema.validate(&raw.payload) {
                Ok(()) => {
                    return Ok(CompletionResult {
                        payload: raw.payload,
                        raw_text: raw.raw_text,
                        provider_id: self.backend.id(),
                    })
                }
                Err(message) => {
                    let note = format!("previous output violated the output schema: {message}");
                    current.feedback = Some(match &request.feedback {
                        Some(prior) => format!("{prior}\n{note}"),
                        None => note,
                    });
                    last = message;
                }
            }
        }
        self.record_failure(request.task);
        Err(ProviderError::SchemaViolation {
            task: request.task,
            attempts: self.reprompt_budget + 1,
            message: last,
        })
    }

    fn meter_snapshot(&self) -> UsageMeter {
        self.meter.lock().expect("meter lock").clone()
    }

    fn provider_id(&self) -> String {
        self.backend.id()
    }
}

/// Which backend to construct; parsed from `--provider` values
/// `rule`, `remote`, `record:<file>`, `replay:<file>`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    Rule,
    Remote,
    Record(std::path::PathBuf),
    Replay(std::path::PathBuf),
}

impl std::str::FromStr for ProviderSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "rule" => Ok(ProviderSpec::Rule),
            None if s == "remote" => Ok(ProviderSpec::Remote),
            Some(("record", path)) if !path.is_empty() => Ok(ProviderSpec::Record(path.into())),
            Some(("replay", path)) if !path.is_empty() => Ok(ProviderSpec::Replay(path.into())),
            _ => Err(format!(
                "unknown provider `{s}` (expected rule, remote, record:<file>, replay:<file>)"
            )),
        }
    }
}

impl ProviderSpec {
    /// Build the backend; `record:` wraps the remote backend.
    pub fn build_backend(&self) -> Result<Box<dyn Backend>, ProviderError> {
        Ok(match self {
            ProviderSpec::Rule => Box::new(RuleBackend::new()),
            ProviderSpec::Remote => Box::new(RemoteBackend::new(RemoteConfig::from_env()?)),
            ProviderSpec::Record(path) => Box::new(RecordingBackend::create(
                RemoteBackend::new(RemoteConfig::from_env()?),
                path,
            )?),
            ProviderSpec::Replay(path) => Box::new(ReplayBackend::load(path)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Counting {
        calls: AtomicU32,
        payload: Value,
    }

    impl Backend for Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn call(&self, _: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(RawCompletion {
                payload: self.payload.clone(),
                raw_text: self.payload.to_string(),
            })
        }
    }

    fn request() -> CompletionRequest {
        CompletionRequest::new(
            TaskTag::CodecSynthesis,
            OutputSchema::new().field("codec", FieldType::Object, "expression tree"),
            serde_json::json!({}),
        )
    }

    #[test]
    fn missing_field_exhausts_reprompt_budget() {
        let provider = StructuredProvider::new(Counting {
            calls: AtomicU32::new(0),
            payload: serde_json::json!({"other": 1}),
        });
        let err = provider.complete_structured(&request()).unwrap_err();
        assert!(matches!(err, ProviderError::SchemaViolation { attempts: 3, .. }));
        assert_eq!(provider.backend().calls.load(Ordering::SeqCst), 3);
        let snap = provider.meter_snapshot();
        assert_eq!(snap.task(TaskTag::CodecSynthesis).calls, 3);
        assert_eq!(snap.task(TaskTag::CodecSynthesis).failures, 1);
    }

    #[test]
    fn fresh_meter_is_zero_and_snapshots_are_copies() {
        let provider = StructuredProvider::new(Counting {
            calls: AtomicU32::new(0),
            payload: serde_json::json!({"codec": {}}),
        });
        let before = provider.meter_snapshot();
        assert_eq!(before.total_calls(), 0);
        for _ in 0..3 {
            provider.complete_structured(&request()).unwrap();
        }
        assert_eq!(before.total_calls(), 0);
        assert_eq!(provider.meter_snapshot().task(TaskTag::CodecSynthesis).calls, 3);
        assert_eq!(provider.meter_snapshot().task(TaskTag::Alignment).calls, 0);
    }

    #[test]
    fn empty_schema_is_rejected() {
        let provider = StructuredProvider::new(RuleBackend::new());
        let req = CompletionRequest::new(TaskTag::Alignment, OutputSchema::new(), Value::Null);
        assert!(matches!(
            provider.complete_structured(&req),
            Err(ProviderError::InvalidRequest(_))
        ));
    }

    #[test]
    fn schema_types_are_checked() {
        let schema = OutputSchema::new()
            .field("a", FieldType::Text, "")
            .optional("b", FieldType::Number, "");
        assert!(schema.validate(&serde_json::json!({"a": "x"})).is_ok());
        assert!(schema.validate(&serde_json::json!({"a": ""})).is_err());
        assert!(schema.validate(&serde_json::json!({"a": "x", "b": "no"})).is_err());
        assert!(schema.validate(&serde_json::json!([1])).is_err());
    }

    #[test]
    fn provider_spec_parsing() {
        assert_eq!("rule".parse::<ProviderSpec>().unwrap(), ProviderSpec::Rule);
        assert_eq!(
            "replay:/tmp/x.ndjson".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Replay("/tmp/x.ndjson".into())
        );
        assert!("openai".parse::<ProviderSpec>().is_err());
    }

    #[test]
    fn digest_depends_on_attempt_and_feedback() {
        let a = request();
        let b = request().with_attempt(2);
        let c = request().with_feedback(Some("x".into()));
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest(), request().digest());
    }
}
