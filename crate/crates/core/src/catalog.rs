//! Signal catalog: the on-disk description of CAN signals that every
//! downstream stage consumes.
//!
//! A catalog is a YAML document with a top-level `signals:` list. Each
//! record uses the [`SignalDef`] field names verbatim. Parsing is split in
//! two passes: a schema pass (shape and types, reported with a document
//! path) and an invariant pass (bit layout, enum keys, composition graph).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{
    CompletionProvider, CompletionRequest, FieldType, OutputSchema, ProviderError, TaskTag,
};
use crate::units;

/// Width of a classic CAN payload in bits.
pub const FRAME_BITS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Enum,
    Bool,
    Numerical,
    Object,
}

impl SignalKind {
    pub const ALL: [SignalKind; 4] = [
        SignalKind::Enum,
        SignalKind::Bool,
        SignalKind::Numerical,
        SignalKind::Object,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Enum => "enum",
            SignalKind::Bool => "bool",
            SignalKind::Numerical => "numerical",
            SignalKind::Object => "object",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bit numbering convention of a field inside the 8-byte frame.
///
/// `little_endian` (Intel): the frame is read as a little-endian `u64` and
/// `bit_start` is the index of the field's least significant bit.
/// `big_endian` (Motorola, MSB-first): the frame is read as a big-endian
/// `u64`, bits are numbered from the most significant bit of byte 0, and
/// `bit_start` is the index of the field's most significant bit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByteOrder {
    #[default]
    LittleEndian,
    BigEndian,
}

impl ByteOrder {
    pub fn swapped(self) -> ByteOrder {
        match self {
            ByteOrder::LittleEndian => ByteOrder::BigEndian,
            ByteOrder::BigEndian => ByteOrder::LittleEndian,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ByteOrder::LittleEndian => "little_endian",
            ByteOrder::BigEndian => "big_endian",
        }
    }
}

/// How a child contributes to an `object` signal. Written `hours`,
/// `minutes`, `seconds` or `{weighted: w}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RoleRepr", into = "RoleRepr")]
pub enum CombineRole {
    Hours,
    Minutes,
    Seconds,
    /// Arbitrary weight applied to the child's physical value.
    Weighted(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RoleRepr {
    Named(String),
    Weighted { weighted: f64 },
}

impl TryFrom<RoleRepr> for CombineRole {
    type Error = String;
    fn try_from(r: RoleRepr) -> Result<Self, String> {
        match r {
            RoleRepr::Named(n) => match n.as_str() {
                "hours" => Ok(CombineRole::Hours),
                "minutes" => Ok(CombineRole::Minutes),
                "seconds" => Ok(CombineRole::Seconds),
                _ => Err(format!("unknown role `{n}` (expected hours, minutes, seconds or {{weighted: w}})")),
            },
            RoleRepr::Weighted { weighted } => Ok(CombineRole::Weighted(weighted)),
        }
    }
}

impl From<CombineRole> for RoleRepr {
    fn from(r: CombineRole) -> RoleRepr {
        match r {
            CombineRole::Hours => RoleRepr::Named("hours".into()),
            CombineRole::Minutes => RoleRepr::Named("minutes".into()),
            CombineRole::Seconds => RoleRepr::Named("seconds".into()),
            CombineRole::Weighted(weighted) => RoleRepr::Weighted { weighted },
        }
    }
}

impl CombineRole {
    /// Multiplier applied to the child's physical value in the weighted sum.
    pub fn weight(self) -> f64 {
        match self {
            CombineRole::Hours => 3600.0,
            CombineRole::Minutes => 60.0,
            CombineRole::Seconds => 1.0,
            CombineRole::Weighted(w) => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub signal: String,
    pub role: CombineRole,
}

fn default_scale() -> f64 {
    1.0
}

fn is_default_scale(v: &f64) -> bool {
    *v == 1.0
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn is_false(v: &bool) -> bool {
    !*v
}

fn is_little_endian(v: &ByteOrder) -> bool {
    *v == ByteOrder::LittleEndian
}

/// One CAN signal definition.
///
/// `bit_start`/`bit_length` are required for every kind except `object`,
/// whose value is composed from its `components`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalDef {
    pub name: String,
    pub kind: SignalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_start: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_length: Option<u32>,
    #[serde(default, skip_serializing_if = "is_little_endian")]
    pub byte_order: ByteOrder,
    #[serde(default, skip_serializing_if = "is_false")]
    pub signed: bool,
    #[serde(default = "default_scale", skip_serializing_if = "is_default_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_max: Option<f64>,
    #[serde(
        default,
        skip_serializing_if = "BTreeMap::is_empty",
        deserialize_with = "crate::codec::int_keys::deserialize"
    )]
    pub enum_map: BTreeMap<i64, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<Component>,
    #[serde(default)]
    pub description: String,
}

impl SignalDef {
    /// Bit field of a non-object signal, `None` for `object` signals.
    pub fn layout(&self) -> Option<crate::codec::FieldLayout> {
        match (self.kind, self.bit_start, self.bit_length) {
            (SignalKind::Object, _, _) => None,
            (_, Some(bit_start), Some(bit_length)) => Some(crate::codec::FieldLayout {
                bit_start,
                bit_length,
                byte_order: self.byte_order,
                signed: self.signed,
            }),
            _ => None,
        }
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        match (self.range_min, self.range_max) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Error => f.write_str("error"),
            Severity::Warning => f.write_str("warning"),
        }
    }
}

/// A finding about one field of one signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogDiagnostic {
    pub severity: Severity,
    pub signal: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for CatalogDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}: {}",
            self.severity, self.signal, self.field, self.message
        )
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{} invariant violation(s); first: {}", .0.len(), .0[0])]
    Invariant(Vec<CatalogDiagnostic>),
    #[error("duplicate signal name `{0}`")]
    DuplicateName(String),
}

impl CatalogError {
    /// Diagnostics in the `<severity> <signal> <field>: <message>` form.
    pub fn diagnostics(&self) -> Vec<CatalogDiagnostic> {
        match self {
            CatalogError::Schema { path, message } => vec![CatalogDiagnostic {
                severity: Severity::Error,
                signal: path.clone(),
                field: "schema".into(),
                message: message.clone(),
            }],
            CatalogError::Invariant(diags) => diags.clone(),
            CatalogError::DuplicateName(name) => vec![CatalogDiagnostic {
                severity: Severity::Error,
                signal: name.clone(),
                field: "name".into(),
                message: "duplicate signal name".into(),
            }],
        }
    }
}

/// Validated, immutable set of signals keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalCatalog {
    pub signals: BTreeMap<String, SignalDef>,
    pub source_path: String,
}

#[derive(Serialize, Deserialize)]
struct CatalogDocument {
    signals: Vec<SignalDef>,
}

/// Parse and validate a catalog document.
pub fn parse_catalog(document: &str, source_path: &str) -> Result<SignalCatalog, CatalogError> {
    let root: serde_yaml::Value =
        serde_yaml::from_str(document).map_err(|e| CatalogError::Schema {
            path: "$".into(),
            message: e.to_string(),
        })?;
    let list = match root.get("signals") {
        Some(serde_yaml::Value::Sequence(list)) => list,
        Some(_) => {
            return Err(CatalogError::Schema {
                path: "signals".into(),
                message: "expected a list of signal records".into(),
            })
        }
        None => {
            return Err(CatalogError::Schema {
                path: "$".into(),
                message: "missing top-level key `signals`".into(),
            })
        }
    };

    let mut signals = BTreeMap::new();
    for (i, item) in list.iter().enumerate() {
        let def: SignalDef =
            serde_yaml::from_value(item.clone()).map_err(|e| CatalogError::Schema {
                path: match item.get("name").and_then(|n| n.as_str()) {
                    Some(name) => format!("signals[{i}] ({name})"),
                    None => format!("signals[{i}]"),
                },
                message: e.to_string(),
            })?;
        if def.kind != SignalKind::Object {
            for (field, value) in [("bit_start", def.bit_start), ("bit_length", def.bit_length)] {
                if value.is_none() {
                    return Err(CatalogError::Schema {
                        path: format!("signals[{i}] ({}).{field}", def.name),
                        message: format!("missing field `{field}`"),
                    });
                }
            }
        }
        if signals.contains_key(&def.name) {
            return Err(CatalogError::DuplicateName(def.name));
        }
        signals.insert(def.name.clone(), def);
    }

    let catalog = SignalCatalog {
        signals,
        source_path: source_path.to_string(),
    };
    let diags = catalog.check_invariants();
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(CatalogError::Invariant(diags));
    }
    Ok(catalog)
}

/// Render a catalog back to its document form (signals in name order).
pub fn serialize_catalog(catalog: &SignalCatalog) -> String {
    let doc = CatalogDocument {
        signals: catalog.signals.values().cloned().collect(),
    };
    serde_yaml::to_string(&doc).expect("catalog values are always representable")
}

impl SignalCatalog {
    pub fn from_signals(signals: Vec<SignalDef>, source_path: &str) -> Result<Self, CatalogError> {
        let mut map = BTreeMap::new();
        for def in signals {
            if map.contains_key(&def.name) {
                return Err(CatalogError::DuplicateName(def.name));
            }
            map.insert(def.name.clone(), def);
        }
        let catalog = SignalCatalog {
            signals: map,
            source_path: source_path.into(),
        };
        let diags = catalog.check_invariants();
        if diags.iter().any(|d| d.severity == Severity::Error) {
            return Err(CatalogError::Invariant(diags));
        }
        Ok(catalog)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::io(path, e))?;
        Ok(parse_catalog(&text, &path.display().to_string())?)
    }

    pub fn get(&self, name: &str) -> Option<&SignalDef> {
        self.signals.get(name)
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SignalDef> {
        self.signals.values()
    }

    /// Every invariant finding, errors and warnings, in name order.
    pub fn check_invariants(&self) -> Vec<CatalogDiagnostic> {
        let mut out = Vec::new();
        for def in self.signals.values() {
            check_signal(def, self, &mut out);
        }
        check_composition_cycles(self, &mut out);
        out
    }
}

fn diag(out: &mut Vec<CatalogDiagnostic>, def: &SignalDef, field: &str, message: String) {
    out.push(CatalogDiagnostic {
        severity: Severity::Error,
        signal: def.name.clone(),
        field: field.into(),
        message,
    });
}

fn check_signal(def: &SignalDef, catalog: &SignalCatalog, out: &mut Vec<CatalogDiagnostic>) {
    if def.name.trim().is_empty() {
        diag(out, def, "name", "signal name must not be empty".into());
    }
    if !def.scale.is_finite() || def.scale == 0.0 {
        diag(out, def, "scale", format!("scale must be finite and non-zero, got {}", def.scale));
    }
    if !def.offset.is_finite() {
        diag(out, def, "offset", format!("offset must be finite, got {}", def.offset));
    }
    for (field, v) in [("range_min", def.range_min), ("range_max", def.range_max)] {
        if let Some(v) = v {
            if !v.is_finite() {
                diag(out, def, field, format!("{field} must be finite, got {v}"));
            }
        }
    }
    if let (Some(lo), Some(hi)) = (def.range_min, def.range_max) {
        if lo > hi {
            diag(out, def, "range_min", format!("range_min {lo} exceeds range_max {hi}"));
        }
    }

    if def.kind == SignalKind::Object {
        if def.components.is_empty() {
            diag(out, def, "components", "object signal needs at least one component".into());
        }
        if def.bit_start.is_some() || def.bit_length.is_some() {
            out.push(CatalogDiagnostic {
                severity: Severity::Warning,
                signal: def.name.clone(),
                field: "bit_start".into(),
                message: "bit layout is ignored for object signals".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for comp in &def.components {
            if !seen.insert(comp.signal.as_str()) {
                diag(out, def, "components", format!("component `{}` listed twice", comp.signal));
            }
            match catalog.signals.get(&comp.signal) {
                None => diag(
                    out,
                    def,
                    "components",
                    format!("component `{}` is not a catalog signal", comp.signal),
                ),
                Some(child) if !matches!(child.kind, SignalKind::Numerical | SignalKind::Object) => {
                    diag(
                        out,
                        def,
                        "components",
                        format!(
                            "component `{}` has kind {}; only numerical or object children combine",
                            comp.signal, child.kind
                        ),
                    )
                }
                Some(_) => {}
            }
            let w = comp.role.weight();
            if !w.is_finite() || w == 0.0 {
                diag(out, def, "components", format!("component `{}` has weight {w}", comp.signal));
            }
        }
        if !def.enum_map.is_empty() {
            diag(out, def, "enum_map", "enum_map is only allowed on enum signals".into());
        }
        return;
    }

    let (Some(start), Some(len)) = (def.bit_start, def.bit_length) else {
        diag(out, def, "bit_length", "bit layout missing".into());
        return;
    };
    if start > FRAME_BITS - 1 {
        diag(out, def, "bit_start", format!("bit_start {start} outside 0..63"));
    }
    if !(1..=FRAME_BITS).contains(&len) {
        diag(out, def, "bit_length", format!("bit_length {len} outside 1..64"));
    }
    if start + len > FRAME_BITS {
        diag(
            out,
            def,
            "bit_length",
            format!("bit_start {start} + bit_length {len} exceeds the 64-bit frame"),
        );
    }
    if !def.components.is_empty() {
        diag(out, def, "components", "components are only allowed on object signals".into());
    }

    match def.kind {
        SignalKind::Bool => {
            if len != 1 {
                diag(out, def, "bit_length", format!("bool signal must be 1 bit, got {len}"));
            }
            if def.signed {
                diag(out, def, "signed", "bool signal must be unsigned".into());
            }
        }
        SignalKind::Enum => {
            if def.enum_map.is_empty() {
                diag(out, def, "enum_map", "enum signal needs a non-empty enum_map".into());
            }
            let (lo, hi) = raw_bounds(len.min(64), def.signed);
            for (key, label) in &def.enum_map {
                if (*key as i128) < lo || (*key as i128) > hi {
                    diag(
                        out,
                        def,
                        "enum_map",
                        format!("key {key} not representable in {len} bits"),
                    );
                }
                if label.trim().is_empty() {
                    diag(out, def, "enum_map", format!("key {key} has an empty label"));
                }
            }
            let mut labels = BTreeSet::new();
            for label in def.enum_map.values() {
                if !labels.insert(label) {
                    diag(out, def, "enum_map", format!("label `{label}` used twice"));
                }
            }
        }
        SignalKind::Numerical | SignalKind::Object => {
            if !def.enum_map.is_empty() {
                diag(out, def, "enum_map", "enum_map is only allowed on enum signals".into());
            }
        }
    }
}

/// Inclusive raw integer bounds of a field.
pub fn raw_bounds(bit_length: u32, signed: bool) -> (i128, i128) {
    let len = bit_length.clamp(1, 64);
    if signed {
        (-(1i128 << (len - 1)), (1i128 << (len - 1)) - 1)
    } else {
        (0, (1i128 << len) - 1)
    }
}

fn check_composition_cycles(catalog: &SignalCatalog, out: &mut Vec<CatalogDiagnostic>) {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done,
    }
    fn visit<'a>(
        name: &'a str,
        catalog: &'a SignalCatalog,
        marks: &mut BTreeMap<&'a str, Mark>,
    ) -> bool {
        match marks.get(name) {
            Some(Mark::Done) => return false,
            Some(Mark::Visiting) => return true,
            None => {}
        }
        marks.insert(name, Mark::Visiting);
        let mut cyclic = false;
        if let Some(def) = catalog.signals.get(name) {
            for comp in &def.components {
                if visit(&comp.signal, catalog, marks) {
                    cyclic = true;
                }
            }
        }
        marks.insert(name, Mark::Done);
        cyclic
    }

    for def in catalog.signals.values() {
        if def.kind != SignalKind::Object {
            continue;
        }
        let mut marks = BTreeMap::new();
        if visit(&def.name, catalog, &mut marks) {
            diag(out, def, "components", "composition contains a cycle".into());
        }
    }
}

/// Fixed-template enrichment of a signal's metadata: spelled-out name,
/// kind, unit words, labels, range and the original description.
pub fn template_description(signal: &SignalDef) -> String {
    let mut parts = vec![format!(
        "{} ({}) is a {} signal",
        units::expanded_identifier(&signal.name),
        signal.name,
        match signal.kind {
            SignalKind::Enum => "enumerated state",
            SignalKind::Bool => "boolean on off flag",
            SignalKind::Numerical => "numerical measurement",
            SignalKind::Object => "composite value",
        }
    )];
    if let Some(unit) = &signal.unit {
        let words = units::unit_words(unit);
        if words.is_empty() {
            parts.push(format!("measured in {unit}"));
        } else {
            parts.push(format!("measured in {unit} ({words})"));
        }
    }
    if !signal.enum_map.is_empty() {
        let labels: Vec<String> = signal
            .enum_map
            .iter()
            .map(|(k, l)| format!("{k} = {l}"))
            .collect();
        parts.push(format!("with values {}", labels.join(", ")));
    }
    if let Some((lo, hi)) = signal.range() {
        parts.push(format!(
            "ranging from {} to {}",
            units::format_number(lo),
            units::format_number(hi)
        ));
    }
    if !signal.components.is_empty() {
        let names: Vec<String> = signal
            .components
            .iter()
            .map(|c| units::expanded_identifier(&c.signal))
            .collect();
        parts.push(format!("combining {}", names.join(" and ")));
    }
    let mut text = parts.join(", ") + ".";
    let original = signal.description.trim();
    if !original.is_empty() {
        text.push(' ');
        text.push_str(original);
        if !original.ends_with('.') {
            text.push('.');
        }
    }
    text
}

/// Produce enriched prose for a signal, used as the `rewritten_description`
/// embedding source.
///
/// Whatever the provider returns, the result is guaranteed to mention the
/// signal name, its unit, every enum label and the physical range; missing
/// facts are appended as a trailing sentence.
pub fn rewrite_description(
    signal: &SignalDef,
    provider: &dyn CompletionProvider,
) -> Result<String, ProviderError> {
    let request = CompletionRequest::new(
        TaskTag::DescriptionRewrite,
        OutputSchema::new().field("description", FieldType::Text, "enriched prose description"),
        serde_json::json!({ "signal": signal }),
    )
    .section("signal metadata", &serde_json::to_string_pretty(signal).unwrap_or_default())
    .section(
        "instructions",
        "Expand abbreviations, spell out the unit, list every enumeration label and the physical range.",
    );
    let result = provider.complete_structured(&request)?;
    let mut text = result
        .payload
        .get("description")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .trim()
        .to_string();

    let mut missing = Vec::new();
    if !text.contains(&signal.name) {
        missing.push(format!("signal {}", signal.name));
    }
    if let Some(unit) = &signal.unit {
        if !text.contains(unit.as_str()) {
            missing.push(format!("unit {unit}"));
        }
    }
    let absent_labels: Vec<&str> = signal
        .enum_map
        .values()
        .filter(|l| !text.contains(l.as_str()))
        .map(|l| l.as_str())
        .collect();
    if !absent_labels.is_empty() {
        missing.push(format!("values {}", absent_labels.join(", ")));
    }
    if let Some((lo, hi)) = signal.range() {
        let lo_s = units::format_number(lo);
        let hi_s = units::format_number(hi);
        if !(text.contains(&lo_s) && text.contains(&hi_s)) {
            missing.push(format!("range {lo_s} to {hi_s}"));
        }
    }
    if !missing.is_empty() {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&format!("Facts: {}.", missing.join("; ")));
    }
    Ok(text)
}
