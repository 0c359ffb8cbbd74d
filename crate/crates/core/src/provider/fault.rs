use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, CompletionRequest, ProviderError, RawCompletion, TaskTag};
use crate::codec::{faults, CodecExpr};

/// Bug classes the fault-injecting backend can seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    /// Enum table accessed with call syntax instead of index syntax.
    BracketMisuse,
    /// Scale (or, for compositions, the leading weight) off by a factor of ten.
    OffByOneScale,
    /// Highest-keyed enum entry missing from the table.
    DroppedEnumEntry,
    /// Every field read with the opposite byte order.
    SwappedByteOrder,
    /// All string fields of the payload blanked.
    EmptyText,
    /// The call fails outright with a provider error.
    ProviderError,
}

impl FaultClass {
    pub const ALL: [FaultClass; 6] = [
        FaultClass::BracketMisuse,
        FaultClass::OffByOneScale,
        FaultClass::DroppedEnumEntry,
        FaultClass::SwappedByteOrder,
        FaultClass::EmptyText,
        FaultClass::ProviderError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultClass::BracketMisuse => "bracket_misuse",
            FaultClass::OffByOneScale => "off_by_one_scale",
            FaultClass::DroppedEnumEntry => "dropped_enum_entry",
            FaultClass::SwappedByteOrder => "swapped_byte_order",
            FaultClass::EmptyText => "empty_text",
            FaultClass::ProviderError => "provider_error",
        }
    }

    fn corrupt_codec(self, expr: &mut CodecExpr) -> bool {
        match self {
            FaultClass::BracketMisuse => faults::bracket_misuse(expr),
            FaultClass::OffByOneScale => faults::off_by_one_scale(expr),
            FaultClass::DroppedEnumEntry => faults::dropped_enum_entry(expr),
            FaultClass::SwappedByteOrder => faults::swapped_byte_order(expr),
            FaultClass::EmptyText | FaultClass::ProviderError => false,
        }
    }
}

impl FromStr for FaultClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        FaultClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown fault class `{s}`"))
    }
}

/// When faults fire, by request attempt number. Written `always` or
/// `first:N` in plan files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FaultSchedule {
    Always,
    /// Attempts `1..=n` are corrupted; later attempts pass through.
    FirstAttempts(u32),
}

impl TryFrom<String> for FaultSchedule {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        match s.trim().split_once(':') {
            None if s.trim() == "always" => Ok(FaultSchedule::Always),
            Some(("first", n)) => n
                .trim()
                .parse()
                .map(FaultSchedule::FirstAttempts)
                .map_err(|_| format!("bad attempt count in schedule `{s}`")),
            _ => Err(format!("unknown schedule `{s}` (expected always or first:N)")),
        }
    }
}

impl From<FaultSchedule> for String {
    fn from(s: FaultSchedule) -> String {
        match s {
            FaultSchedule::Always => "always".into(),
            FaultSchedule::FirstAttempts(n) => format!("first:{n}"),
        }
    }
}

impl FaultSchedule {
    fn fires(self, attempt: u32) -> bool {
        match self {
            FaultSchedule::Always => true,
            FaultSchedule::FirstAttempts(n) => attempt <= n,
        }
    }
}

/// On-disk fault plan: a schedule plus fault classes keyed by signal name
/// (codec and rewrite requests) or property name (alignment and endpoint
/// requests).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    pub schedule: FaultSchedule,
    #[serde(default)]
    pub default: Vec<FaultClass>,
    #[serde(default)]
    pub signals: BTreeMap<String, Vec<FaultClass>>,
}

impl FaultPlan {
    pub fn load(path: &Path) -> Result<FaultPlan, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        serde_yaml::from_str(&text)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))
    }
}

/// Wraps another backend and corrupts its output according to a plan.
pub struct FaultInjectingBackend<B> {
    inner: B,
    default: Vec<FaultClass>,
    per_signal: BTreeMap<String, Vec<FaultClass>>,
    schedule: FaultSchedule,
}

impl<B: Backend> FaultInjectingBackend<B> {
    /// Apply `classes` to every request.
    pub fn new(inner: B, classes: Vec<FaultClass>, schedule: FaultSchedule) -> Self {
        Self {
            inner,
            default: classes,
            per_signal: BTreeMap::new(),
            schedule,
        }
    }

    /// Apply the plan's per-signal classes, falling back to its default.
    pub fn from_plan(inner: B, plan: FaultPlan) -> Self {
        Self {
            inner,
            default: plan.default,
            per_signal: plan.signals,
            schedule: plan.schedule,
        }
    }

    fn classes_for(&self, request: &CompletionRequest) -> &[FaultClass] {
        let subject = request.materials["signal"]["name"]
            .as_str()
            .or_else(|| request.materials["property"]["name"].as_str());
        match subject.and_then(|s| self.per_signal.get(s)) {
            Some(classes) => classes,
            None => &self.default,
        }
    }
}

fn blank_strings(v: &mut Value) {
    match v {
        Value::String(s) => s.clear(),
        Value::Array(items) => items.iter_mut().for_each(blank_strings),
        Value::Object(map) => map.values_mut().for_each(blank_strings),
        _ => {}
    }
}

impl<B: Backend> Backend for FaultInjectingBackend<B> {
    fn id(&self) -> String {
        format!("fault-injecting({})", self.inner.id())
    }

    fn call(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let classes = self.classes_for(request);
        if classes.is_empty() || !self.schedule.fires(request.attempt) {
            return self.inner.call(request);
        }
        if classes.contains(&FaultClass::ProviderError) {
            return Err(ProviderError::FaultInjected(format!(
                "{} attempt {}",
                request.task, request.attempt
            )));
        }
        let mut raw = self.inner.call(request)?;
        if request.task == TaskTag::CodecSynthesis {
            if let Ok(mut expr) = serde_json::from_value::<CodecExpr>(raw.payload["codec"].clone()) {
                let mut changed = false;
                for class in classes {
                    changed |= class.corrupt_codec(&mut expr);
                }
                if changed {
                    raw.payload["codec"] = serde_json::to_value(&expr).expect("codec serializes");
                }
            }
        }
        if classes.contains(&FaultClass::EmptyText) {
            blank_strings(&mut raw.payload);
        }
        raw.raw_text = raw.payload.to_string();
        Ok(raw)
    }
}
