//! Property-to-signal alignment: retrieve candidate signals for an API
//! property, let the provider fill the alignment record, and decide whether
//! the result can be used without review.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::{SignalCatalog, SignalDef, SignalKind};
use crate::codec::{EvalError, Frame, PhysicalValue, SignalCodec};
use crate::index::{embed, Hit, IndexError, SignalIndex, Strategy};
use crate::provider::{
    parse_directives, CompletionProvider, CompletionRequest, Directive, FieldType, OutputSchema,
    ProviderError, TaskTag,
};
use crate::units::{self, Conversion};

pub const DEFAULT_THETA: f64 = 0.75;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_K: usize = 5;

const REASONING_STEPS: &str = "Reason step by step: (i) property intent, (ii) value and unit \
consistency, and (iii) whether the mapping is direct, transformed, or composed. Enumerate all \
contributing CAN signals.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingKind {
    Direct,
    Transformed,
    Composed,
}

impl MappingKind {
    pub const ALL: [MappingKind; 3] = [MappingKind::Direct, MappingKind::Transformed, MappingKind::Composed];

    pub fn as_str(self) -> &'static str {
        match self {
            MappingKind::Direct => "direct",
            MappingKind::Transformed => "transformed",
            MappingKind::Composed => "composed",
        }
    }
}

impl fmt::Display for MappingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MappingKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        MappingKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown mapping kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyType {
    Boolean,
    Number,
    StringEnum,
    Composite,
}

/// An API response property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiProperty {
    pub name: String,
    pub semantic_type: PropertyType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allowed_values: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_max: Option<f64>,
    #[serde(default)]
    pub description: String,
}

impl ApiProperty {
    /// Text the property is embedded from for retrieval.
    pub fn query_text(&self) -> String {
        let mut parts = vec![units::expanded_identifier(&self.name)];
        if !self.description.trim().is_empty() {
            parts.push(self.description.clone());
        }
        if let Some(u) = &self.unit {
            parts.push(u.clone());
            parts.push(units::unit_words(u).to_string());
        }
        parts.extend(self.allowed_values.iter().cloned());
        parts.join(" ")
    }

    fn accepts(&self, kind: SignalKind) -> bool {
        matches!(
            (self.semantic_type, kind),
            (PropertyType::Boolean, SignalKind::Bool)
                | (PropertyType::StringEnum, SignalKind::Enum)
                | (PropertyType::Number, SignalKind::Numerical | SignalKind::Object)
                | (PropertyType::Composite, SignalKind::Object)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    AutoAccepted,
    Flagged,
    Approved,
    Rejected,
}

impl AlignmentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentStatus::AutoAccepted => "auto_accepted",
            AlignmentStatus::Flagged => "flagged",
            AlignmentStatus::Approved => "approved",
            AlignmentStatus::Rejected => "rejected",
        }
    }

    /// Whether downstream stages may use the alignment.
    pub fn is_usable(self) -> bool {
        matches!(self, AlignmentStatus::AutoAccepted | AlignmentStatus::Approved)
    }
}

impl fmt::Display for AlignmentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlignmentStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            AlignmentStatus::AutoAccepted,
            AlignmentStatus::Flagged,
            AlignmentStatus::Approved,
            AlignmentStatus::Rejected,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown status `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot {action:?} an alignment whose status is {from}")]
pub struct InvalidTransition {
    pub from: AlignmentStatus,
    pub action: Decision,
}

/// Review decisions apply only to flagged alignments.
pub fn transition(from: AlignmentStatus, action: Decision) -> Result<AlignmentStatus, InvalidTransition> {
    match (from, action) {
        (AlignmentStatus::Flagged, Decision::Approve) => Ok(AlignmentStatus::Approved),
        (AlignmentStatus::Flagged, Decision::Reject) => Ok(AlignmentStatus::Rejected),
        _ => Err(InvalidTransition { from, action }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePair {
    pub signal: PhysicalValue,
    pub property: PhysicalValue,
}

/// The alignment record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyAlignment {
    pub property: String,
    pub mapping_kind: MappingKind,
    pub signals: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_map: Option<Vec<ValuePair>>,
    /// Property value → signal label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_correspondence: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_conversion: Option<Conversion>,
    pub confidence: f64,
    pub status: AlignmentStatus,
}

impl PropertyAlignment {
    pub fn signal_set(&self) -> BTreeSet<String> {
        self.signals.iter().cloned().collect()
    }

    /// Check the record invariants against the property and catalog.
    pub fn problems(&self, property: &ApiProperty, catalog: &SignalCatalog) -> Vec<String> {
        let mut out = Vec::new();
        if self.signals.is_empty() {
            out.push("no contributing signals".to_string());
        }
        if (self.mapping_kind == MappingKind::Composed) != (self.signals.len() >= 2) {
            out.push(format!(
                "mapping kind {} with {} contributing signal(s)",
                self.mapping_kind,
                self.signals.len()
            ));
        }
        for s in &self.signals {
            if catalog.get(s).is_none() {
                out.push(format!("signal `{s}` is not in the catalog"));
            }
        }
        if let Some(corr) = &self.enum_correspondence {
            let missing: Vec<&str> = property
                .allowed_values
                .iter()
                .filter(|v| !corr.contains_key(v.as_str()))
                .map(String::as_str)
                .collect();
            if !missing.is_empty() {
                out.push(format!("enum correspondence misses {}", missing.join(", ")));
            }
            if let Some(def) = self.signals.first().and_then(|s| catalog.get(s)) {
                for label in corr.values() {
                    if !def.enum_map.values().any(|l| l == label) {
                        out.push(format!("label `{label}` is not a {} label", def.name));
                    }
                }
            }
        }
        if let Some(c) = &self.unit_conversion {
            let signal_unit = self
                .signals
                .first()
                .and_then(|s| catalog.get(s))
                .and_then(|d| d.unit.clone());
            if property.unit.is_none() || signal_unit.is_none() {
                out.push("unit conversion without declared units on both sides".to_string());
            }
            if !(c.factor.is_finite() && c.offset.is_finite()) || c.factor == 0.0 {
                out.push("unit conversion constants invalid".to_string());
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no candidate signals: the index is empty for this strategy")]
    NoCandidates,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("alignment payload for `{property}` is malformed: {message}")]
    Payload { property: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub theta: f64,
    pub epsilon: f64,
    pub k: usize,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            epsilon: DEFAULT_EPSILON,
            k: DEFAULT_K,
        }
    }
}

/// An alignment together with the retrieval evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutcome {
    pub alignment: PropertyAlignment,
    pub candidates: Vec<Hit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flag_reasons: Vec<String>,
}

fn candidate_material(def: &SignalDef, similarity: f64, catalog: &SignalCatalog) -> Value {
    let components: Vec<&SignalDef> = def
        .components
        .iter()
        .filter_map(|c| catalog.get(&c.signal))
        .collect();
    json!({ "signal": def, "similarity": similarity, "components": components })
}

fn flag_reasons(candidates: &[Hit], params: &AlignParams) -> Vec<String> {
    let mut out = Vec::new();
    let best = candidates.first().map_or(0.0, |h| h.similarity);
    if best < params.theta {
        out.push(format!(
            "best similarity {best:.3} below threshold {:.3}",
            params.theta
        ));
    }
    if let [a, b, ..] = candidates {
        if a.similarity - b.similarity < params.epsilon {
            out.push(format!(
                "top candidates {} and {} within margin {:.3}",
                a.signal, b.signal, params.epsilon
            ));
        }
    }
    out
}

/// Align one property. `instructions` are human refinement constraints
/// passed through to the provider.
pub fn align_property(
    property: &ApiProperty,
    catalog: &SignalCatalog,
    index: &SignalIndex,
    strategy: Strategy,
    provider: &dyn CompletionProvider,
    params: &AlignParams,
    instructions: &[String],
) -> Result<AlignmentOutcome, AlignError> {
    let query = embed(&property.query_text())?;
    let candidates = match index.query_top_k(&query, params.k.max(1), strategy) {
        Ok(hits) => hits,
        Err(IndexError::UnknownStrategy(_)) => return Err(AlignError::NoCandidates),
        Err(e) => return Err(e.into()),
    };
    let mut offered: Vec<Value> = candidates
        .iter()
        .filter_map(|h| catalog.get(&h.signal).map(|d| candidate_material(d, h.similarity, catalog)))
        .collect();
    // A preferred signal outside the retrieved set is offered as well.
    for d in parse_directives(instructions) {
        if let Directive::PreferSignal(name) = d {
            if candidates.iter().all(|h| h.signal != name) {
                if let (Some(def), Some(entry)) = (catalog.get(&name), index.entry(&name, strategy)) {
                    offered.push(candidate_material(def, entry.vector.cosine(&query), catalog));
                }
            }
        }
    }

    let materials = json!({ "property": property, "candidates": offered });
    let request = CompletionRequest::new(
        TaskTag::Alignment,
        OutputSchema::new()
            .field("mapping_kind", FieldType::Text, "direct, transformed or composed")
            .field("signals", FieldType::List, "every contributing CAN signal name")
            .optional("enum_correspondence", FieldType::Object, "property value to signal label")
            .optional("value_map", FieldType::List, "explicit signal value to property value pairs")
            .optional("unit_conversion", FieldType::Object, "factor and offset, property = factor * signal + offset")
            .optional("rationale", FieldType::Text, "short reasoning"),
        materials.clone(),
    )
    .section("property", &serde_json::to_string_pretty(property).unwrap_or_default())
    .section("candidate signals", &serde_json::to_string_pretty(&offered).unwrap_or_default())
    .section("reasoning steps", REASONING_STEPS)
    .with_instructions(instructions.to_vec());

    let result = provider.complete_structured(&request)?;
    let payload = &result.payload;
    let bad = |message: String| AlignError::Payload {
        property: property.name.clone(),
        message,
    };
    let mapping_kind: MappingKind = payload["mapping_kind"]
        .as_str()
        .unwrap_or_default()
        .parse()
        .map_err(bad)?;
    let signals: Vec<String> = serde_json::from_value(payload["signals"].clone()).map_err(|e| bad(e.to_string()))?;
    let opt = |key: &str| payload.get(key).filter(|v| !v.is_null()).cloned();
    let enum_correspondence = opt("enum_correspondence")
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| bad(e.to_string()))?;
    let value_map = opt("value_map")
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| bad(e.to_string()))?;
    let unit_conversion = opt("unit_conversion")
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| bad(e.to_string()))?;

    let similarity_of = |name: &str| -> Option<f64> {
        offered
            .iter()
            .find(|c| c["signal"]["name"] == name)
            .and_then(|c| c["similarity"].as_f64())
    };
    // Composed mappings list leaf components; credit the best parent match.
    let confidence = signals
        .iter()
        .filter_map(|s| similarity_of(s))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .or_else(|| {
            offered
                .iter()
                .filter(|c| {
                    c["components"]
                        .as_array()
                        .is_some_and(|cs| cs.iter().any(|x| signals.iter().any(|s| x["name"] == s.as_str())))
                })
                .filter_map(|c| c["similarity"].as_f64())
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .unwrap_or(0.0);

    let mut alignment = PropertyAlignment {
        property: property.name.clone(),
        mapping_kind,
        signals,
        value_map,
        enum_correspondence,
        unit_conversion,
        confidence,
        status: AlignmentStatus::AutoAccepted,
    };
    let mut reasons = flag_reasons(&candidates, params);
    reasons.extend(alignment.problems(property, catalog));
    if !reasons.is_empty() {
        alignment.status = AlignmentStatus::Flagged;
    }
    Ok(AlignmentOutcome {
        alignment,
        candidates,
        flag_reasons: reasons,
    })
}

/// Align every property on the global rayon pool; results in property-name
/// order.
pub fn align_all(
    properties: &[ApiProperty],
    catalog: &SignalCatalog,
    index: &SignalIndex,
    strategy: Strategy,
    provider: &dyn CompletionProvider,
    params: &AlignParams,
) -> Result<Vec<AlignmentOutcome>, AlignError> {
    let mut outcomes = properties
        .par_iter()
        .map(|p| align_property(p, catalog, index, strategy, provider, params, &[]))
        .collect::<Result<Vec<_>, _>>()?;
    outcomes.sort_by(|a, b| a.alignment.property.cmp(&b.alignment.property));
    Ok(outcomes)
}

/// The rule backend's alignment: pick the first type-compatible candidate,
/// honouring directives, and derive the record from metadata.
pub(crate) fn rule_alignment(materials: &Value, directives: &[Directive]) -> Result<Value, String> {
    let property: ApiProperty =
        serde_json::from_value(materials["property"].clone()).map_err(|e| e.to_string())?;
    let candidates: Vec<SignalDef> = materials["candidates"]
        .as_array()
        .ok_or("candidates missing")?
        .iter()
        .map(|c| serde_json::from_value(c["signal"].clone()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if candidates.is_empty() {
        return Err("no candidates offered".into());
    }
    let preferred = directives.iter().rev().find_map(|d| match d {
        Directive::PreferSignal(s) => candidates.iter().find(|c| &c.name == s),
        _ => None,
    });
    let wanted_kind = directives.iter().rev().find_map(|d| match d {
        Directive::MappingKind(k) => Some(*k),
        _ => None,
    });
    let factor = directives.iter().rev().find_map(|d| match d {
        Directive::UnitFactor(f) => Some(*f),
        _ => None,
    });

    let chosen = preferred
        .or_else(|| match wanted_kind {
            Some(MappingKind::Composed) => candidates.iter().find(|c| c.kind == SignalKind::Object),
            Some(_) => candidates
                .iter()
                .find(|c| c.kind != SignalKind::Object && property.accepts(c.kind)),
            None => None,
        })
        .or_else(|| candidates.iter().find(|c| property.accepts(c.kind)))
        .unwrap_or(&candidates[0]);

    let mut out = serde_json::Map::new();
    let kind;
    if chosen.kind == SignalKind::Object {
        kind = MappingKind::Composed;
        let parts: Vec<&str> = chosen.components.iter().map(|c| c.signal.as_str()).collect();
        out.insert("signals".into(), json!(parts));
    } else {
        out.insert("signals".into(), json!([chosen.name]));
        let conversion = match (factor, &property.unit, &chosen.unit) {
            (Some(f), _, _) => Some(Conversion { factor: f, offset: 0.0 }),
            (None, Some(p), Some(s)) if !units::same_unit(p, s) => units::conversion(s, p),
            _ => None,
        };
        kind = match (wanted_kind, conversion) {
            (Some(MappingKind::Direct), _) => MappingKind::Direct,
            (_, Some(c)) => {
                out.insert("unit_conversion".into(), json!(c));
                MappingKind::Transformed
            }
            (Some(MappingKind::Transformed), None) => {
                out.insert("unit_conversion".into(), json!(Conversion { factor: 1.0, offset: 0.0 }));
                MappingKind::Transformed
            }
            _ => MappingKind::Direct,
        };
        if chosen.kind == SignalKind::Enum && !property.allowed_values.is_empty() {
            let corr: BTreeMap<&str, &str> = property
                .allowed_values
                .iter()
                .filter_map(|v| {
                    chosen
                        .enum_map
                        .values()
                        .find(|l| l.eq_ignore_ascii_case(v))
                        .map(|l| (v.as_str(), l.as_str()))
                })
                .collect();
            out.insert("enum_correspondence".into(), json!(corr));
        }
    }
    out.insert("mapping_kind".into(), json!(kind));
    out.insert(
        "rationale".into(),
        json!(format!(
            "{} is a {} signal compatible with {} property {}",
            chosen.name,
            chosen.kind,
            match property.semantic_type {
                PropertyType::Boolean => "boolean",
                PropertyType::Number => "numeric",
                PropertyType::StringEnum => "enumerated",
                PropertyType::Composite => "composite",
            },
            property.name
        )),
    );
    Ok(Value::Object(out))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error("alignment for `{0}` is not usable (status {1})")]
    NotUsable(String, AlignmentStatus),
    #[error("no validated codec for signal `{0}`")]
    MissingCodec(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("decoded value {0} has no correspondence entry")]
    NoCorrespondence(String),
}

/// Find the composite codec whose components are exactly `signals`.
pub fn composite_codec<'a>(
    signals: &[String],
    codecs: &'a BTreeMap<String, SignalCodec>,
) -> Option<&'a SignalCodec> {
    let want: BTreeSet<&str> = signals.iter().map(String::as_str).collect();
    codecs.values().find(|c| {
        let got = c.component_signals();
        !got.is_empty() && got.iter().map(String::as_str).collect::<BTreeSet<_>>() == want
    })
}

/// Compute the property value an alignment produces from a frame.
pub fn apply_alignment(
    alignment: &PropertyAlignment,
    codecs: &BTreeMap<String, SignalCodec>,
    frame: Frame,
) -> Result<PhysicalValue, ApplyError> {
    if !alignment.status.is_usable() {
        return Err(ApplyError::NotUsable(alignment.property.clone(), alignment.status));
    }
    let decoded = if alignment.mapping_kind == MappingKind::Composed {
        composite_codec(&alignment.signals, codecs)
            .ok_or_else(|| ApplyError::MissingCodec(alignment.signals.join("+")))?
            .decode(frame)?
    } else {
        let name = alignment.signals.first().cloned().unwrap_or_default();
        codecs
            .get(&name)
            .ok_or(ApplyError::MissingCodec(name))?
            .decode(frame)?
    };
    if let Some(corr) = &alignment.enum_correspondence {
        let PhysicalValue::Label(label) = &decoded else {
            return Err(ApplyError::NoCorrespondence(decoded.to_string()));
        };
        return corr
            .iter()
            .find(|(_, l)| *l == label)
            .map(|(p, _)| PhysicalValue::Label(p.clone()))
            .ok_or_else(|| ApplyError::NoCorrespondence(decoded.to_string()));
    }
    if let Some(map) = &alignment.value_map {
        return map
            .iter()
            .find(|p| p.signal.approx_eq(&decoded))
            .map(|p| p.property.clone())
            .ok_or_else(|| ApplyError::NoCorrespondence(decoded.to_string()));
    }
    if let (Some(c), PhysicalValue::Number(v)) = (&alignment.unit_conversion, &decoded) {
        return Ok(PhysicalValue::Number(c.factor * v + c.offset));
    }
    Ok(decoded)
}

/// Ground truth for one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub signals: Vec<String>,
    pub mapping_kind: MappingKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub properties: BTreeMap<String, TruthEntry>,
}

impl GroundTruth {
    pub fn load(path: &std::path::Path) -> Result<GroundTruth, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        serde_yaml::from_str(&text).map_err(|e| crate::Error::format(path, e.to_string()))
    }

    pub fn matches(&self, a: &PropertyAlignment) -> bool {
        self.properties.get(&a.property).is_some_and(|t| {
            t.mapping_kind == a.mapping_kind
                && t.signals.iter().cloned().collect::<BTreeSet<_>>() == a.signal_set()
        })
    }
}

/// Precision, recall and F1 of alignments against ground truth. Only usable
/// alignments count as generated.
pub fn evaluate_matching(predicted: &[PropertyAlignment], truth: &GroundTruth) -> crate::eval::Prf {
    let generated: Vec<&PropertyAlignment> = predicted.iter().filter(|a| a.status.is_usable()).collect();
    let correct = generated.iter().filter(|a| truth.matches(a)).count();
    crate::eval::compute_prf_counts(correct as u64, generated.len() as u64, truth.properties.len() as u64)
}
