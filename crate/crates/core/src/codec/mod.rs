//! Signal read/write codecs.
//!
//! A codec is a [`CodecExpr`] tree evaluated in two directions. Decoding
//! walks it bottom-up: a `raw_field` leaf extracts an integer from the frame
//! and each enclosing node transforms it. Encoding walks it top-down,
//! applying each node's inverse until the leaves write their bit fields.

mod emit;
pub(crate) mod faults;
mod semantics;
mod synth;
mod vectors;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{raw_bounds, ByteOrder, SignalKind};

pub use emit::render_source;
pub use semantics::{
    is_valid_raw, leaf_layouts, raw_bits, raw_domain, reference_decode, reference_encode,
    reference_hash, semantic_frames, semantic_hash, DomainFrames,
};
pub use synth::{
    debug_loop, rule_codec, synthesize_all, synthesize_codec, validate_codec, CodecError,
    CodecRecord, SynthesisReport, SynthesisStatus, ValidationReport, VectorFailure,
    DEFAULT_MAX_DEBUG_ROUNDS,
};
pub use vectors::{generate_test_vectors, vector_digest, Direction, Expectation, TestVector};

/// Serde helpers for integer-keyed tables. JSON object keys are strings, so
/// keys are accepted either as integers or as decimal strings.
pub(crate) mod int_keys {
    use std::collections::BTreeMap;
    use std::fmt;

    use serde::de::{Error, MapAccess, Visitor};
    use serde::{Deserialize, Deserializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Key {
        Int(i64),
        Str(String),
    }

    struct TableVisitor;

    impl<'de> Visitor<'de> for TableVisitor {
        type Value = BTreeMap<i64, String>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map from integer keys to labels")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((key, label)) = map.next_entry::<Key, String>()? {
                let key = match key {
                    Key::Int(i) => i,
                    Key::Str(s) => s
                        .trim()
                        .parse()
                        .map_err(|_| A::Error::custom(format!("table key `{s}` is not an integer")))?,
                };
                if out.insert(key, label).is_some() {
                    return Err(A::Error::custom(format!("table key {key} repeated")));
                }
            }
            Ok(out)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<i64, String>, D::Error> {
        d.deserialize_map(TableVisitor)
    }
}

/// An 8-byte CAN payload. Byte 0 is transmitted first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Frame(pub [u8; 8]);

impl Frame {
    pub const ZERO: Frame = Frame([0; 8]);

    /// Frame whose bytes are the big-endian representation of `v`.
    pub fn from_u64(v: u64) -> Frame {
        Frame(v.to_be_bytes())
    }

    pub fn as_u64(self) -> u64 {
        u64::from_be_bytes(self.0)
    }

    pub fn to_hex(self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Frame> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        if s.len() != 16 {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(Frame::from_u64)
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

impl Serialize for Frame {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Frame {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Frame::from_hex(&s).ok_or_else(|| serde::de::Error::custom(format!("bad frame `{s}`")))
    }
}

/// Position and encoding of one integer field inside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldLayout {
    pub bit_start: u32,
    pub bit_length: u32,
    pub byte_order: ByteOrder,
    pub signed: bool,
}

impl FieldLayout {
    pub fn is_valid(&self) -> bool {
        (1..=64).contains(&self.bit_length) && self.bit_start + self.bit_length <= 64
    }

    fn value_mask(&self) -> u64 {
        if self.bit_length >= 64 {
            u64::MAX
        } else {
            (1u64 << self.bit_length) - 1
        }
    }

    /// Shift of the field's least significant bit inside the order-specific
    /// `u64` view of the frame.
    fn shift(&self) -> u32 {
        match self.byte_order {
            ByteOrder::LittleEndian => self.bit_start,
            ByteOrder::BigEndian => 64 - self.bit_start - self.bit_length,
        }
    }

    fn view(&self, frame: Frame) -> u64 {
        match self.byte_order {
            ByteOrder::LittleEndian => u64::from_le_bytes(frame.0),
            ByteOrder::BigEndian => u64::from_be_bytes(frame.0),
        }
    }

    fn unview(&self, v: u64) -> Frame {
        match self.byte_order {
            ByteOrder::LittleEndian => Frame(v.to_le_bytes()),
            ByteOrder::BigEndian => Frame(v.to_be_bytes()),
        }
    }

    pub fn raw_bounds(&self) -> (i128, i128) {
        raw_bounds(self.bit_length, self.signed)
    }

    /// Read the field, sign-extending when `signed`.
    pub fn extract(&self, frame: Frame) -> i128 {
        let mask = self.value_mask();
        let bits = (self.view(frame) >> self.shift()) & mask;
        if self.signed && self.bit_length < 64 && (bits >> (self.bit_length - 1)) & 1 == 1 {
            (bits | !mask) as i64 as i128
        } else if self.signed {
            bits as i64 as i128
        } else {
            bits as i128
        }
    }

    /// Write `raw` into the field, leaving every other bit untouched.
    pub fn insert(&self, frame: Frame, raw: i128) -> Result<Frame, EvalError> {
        let (lo, hi) = self.raw_bounds();
        if raw < lo || raw > hi {
            return Err(EvalError::Domain(format!(
                "raw value {raw} does not fit a {}-bit {} field",
                self.bit_length,
                if self.signed { "signed" } else { "unsigned" }
            )));
        }
        let mask = self.value_mask();
        let bits = (raw as u64) & mask;
        let shift = self.shift();
        let v = (self.view(frame) & !(mask << shift)) | (bits << shift);
        Ok(self.unview(v))
    }

    /// Frame with exactly this field's bits set.
    pub fn frame_mask(&self) -> Frame {
        self.unview(self.value_mask() << self.shift())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookupAccess {
    /// `table[raw]`
    #[default]
    Index,
    /// `table(raw)`: not a valid table access; evaluation rejects it.
    Call,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineOp {
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineTerm {
    pub signal: String,
    pub weight: f64,
    pub expr: CodecExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CodecExpr {
    RawField(FieldLayout),
    Affine {
        scale: f64,
        offset: f64,
        input: Box<CodecExpr>,
    },
    EnumLookup {
        #[serde(deserialize_with = "int_keys::deserialize")]
        table: BTreeMap<i64, String>,
        #[serde(default)]
        access: LookupAccess,
        input: Box<CodecExpr>,
    },
    BoolMap {
        input: Box<CodecExpr>,
    },
    Combine {
        combine: CombineOp,
        terms: Vec<CombineTerm>,
    },
    Clamp {
        min: f64,
        max: f64,
        input: Box<CodecExpr>,
    },
}

impl CodecExpr {
    pub fn raw(layout: FieldLayout) -> Self {
        CodecExpr::RawField(layout)
    }

    pub fn affine(scale: f64, offset: f64, input: CodecExpr) -> Self {
        CodecExpr::Affine {
            scale,
            offset,
            input: Box::new(input),
        }
    }

    pub fn enum_lookup(table: BTreeMap<i64, String>, input: CodecExpr) -> Self {
        CodecExpr::EnumLookup {
            table,
            access: LookupAccess::Index,
            input: Box::new(input),
        }
    }

    pub fn bool_map(input: CodecExpr) -> Self {
        CodecExpr::BoolMap {
            input: Box::new(input),
        }
    }

    pub fn clamp(min: f64, max: f64, input: CodecExpr) -> Self {
        CodecExpr::Clamp {
            min,
            max,
            input: Box::new(input),
        }
    }

    /// All field layouts, depth-first.
    pub fn fields(&self) -> Vec<FieldLayout> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let CodecExpr::RawField(l) = e {
                out.push(*l);
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a CodecExpr)) {
        f(self);
        match self {
            CodecExpr::RawField(_) => {}
            CodecExpr::Affine { input, .. }
            | CodecExpr::EnumLookup { input, .. }
            | CodecExpr::BoolMap { input }
            | CodecExpr::Clamp { input, .. } => input.visit(f),
            CodecExpr::Combine { terms, .. } => terms.iter().for_each(|t| t.expr.visit(f)),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut CodecExpr) -> bool) -> bool {
        if f(self) {
            return true;
        }
        match self {
            CodecExpr::RawField(_) => false,
            CodecExpr::Affine { input, .. }
            | CodecExpr::EnumLookup { input, .. }
            | CodecExpr::BoolMap { input }
            | CodecExpr::Clamp { input, .. } => input.visit_mut(f),
            CodecExpr::Combine { terms, .. } => terms.iter_mut().any(|t| t.expr.visit_mut(f)),
        }
    }

    /// Structural checks that do not need a frame: finite literals, valid
    /// layouts, non-empty combinations.
    pub fn check_well_formed(&self) -> Result<(), EvalError> {
        let mut problem = None;
        self.visit(&mut |e| {
            if problem.is_some() {
                return;
            }
            problem = match e {
                CodecExpr::RawField(l) if !l.is_valid() => {
                    Some(format!("field {}+{} exceeds the frame", l.bit_start, l.bit_length))
                }
                CodecExpr::Affine { scale, offset, .. }
                    if !scale.is_finite() || !offset.is_finite() || *scale == 0.0 =>
                {
                    Some(format!("affine constants must be finite and scale non-zero ({scale}, {offset})"))
                }
                CodecExpr::Clamp { min, max, .. } if !(min.is_finite() && max.is_finite() && min <= max) => {
                    Some(format!("clamp bounds invalid ({min}, {max})"))
                }
                CodecExpr::Combine { terms, .. } if terms.is_empty() => {
                    Some("combine without terms".into())
                }
                CodecExpr::Combine { terms, .. }
                    if terms.iter().any(|t| !t.weight.is_finite() || t.weight == 0.0) =>
                {
                    Some("combine weight must be finite and non-zero".into())
                }
                _ => None,
            };
        });
        match problem {
            Some(p) => Err(EvalError::Malformed(p)),
            None => Ok(()),
        }
    }
}

/// A decoded value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhysicalValue {
    Bool(bool),
    Number(f64),
    Label(String),
}

impl PhysicalValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            PhysicalValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    /// Equality with a relative tolerance of 1e-9 for numbers.
    pub fn approx_eq(&self, other: &PhysicalValue) -> bool {
        match (self, other) {
            (PhysicalValue::Number(a), PhysicalValue::Number(b)) => {
                (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
            }
            (a, b) => a == b,
        }
    }
}

impl fmt::Display for PhysicalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhysicalValue::Bool(b) => write!(f, "{b}"),
            PhysicalValue::Number(v) => f.write_str(&crate::units::format_number(*v)),
            PhysicalValue::Label(l) => write!(f, "\"{l}\""),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    /// The tree itself is invalid (bad literal, wrong node for the value).
    #[error("malformed codec: {0}")]
    Malformed(String),
    /// The value is outside what the codec can represent.
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Raw(i128),
    Num(f64),
    Bool(bool),
    Label(String),
}

impl Val {
    fn number(&self) -> Option<f64> {
        match self {
            Val::Raw(r) => Some(*r as f64),
            Val::Num(v) => Some(*v),
            _ => None,
        }
    }

    fn from_physical(v: &PhysicalValue) -> Val {
        match v {
            PhysicalValue::Bool(b) => Val::Bool(*b),
            PhysicalValue::Number(n) => Val::Num(*n),
            PhysicalValue::Label(l) => Val::Label(l.clone()),
        }
    }
}

/// Direction argument for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Decode,
    /// Write a physical value into the given base frame.
    Encode(PhysicalValue),
}

/// Result of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluated {
    Physical(PhysicalValue),
    Frame(Frame),
}

pub fn evaluate(codec: &CodecExpr, frame: Frame, direction: Evaluation) -> Result<Evaluated, EvalError> {
    match direction {
        Evaluation::Decode => decode(codec, frame).map(Evaluated::Physical),
        Evaluation::Encode(v) => encode(codec, &v, frame).map(Evaluated::Frame),
    }
}

pub fn decode(codec: &CodecExpr, frame: Frame) -> Result<PhysicalValue, EvalError> {
    codec.check_well_formed()?;
    Ok(match decode_val(codec, frame)? {
        Val::Raw(r) => PhysicalValue::Number(r as f64),
        Val::Num(v) => PhysicalValue::Number(v),
        Val::Bool(b) => PhysicalValue::Bool(b),
        Val::Label(l) => PhysicalValue::Label(l),
    })
}

fn lookup_not_callable() -> EvalError {
    EvalError::Malformed("enum table is not callable; use index syntax table[raw]".into())
}

fn decode_val(expr: &CodecExpr, frame: Frame) -> Result<Val, EvalError> {
    match expr {
        CodecExpr::RawField(layout) => Ok(Val::Raw(layout.extract(frame))),
        CodecExpr::Affine { scale, offset, input } => {
            let x = decode_val(input, frame)?
                .number()
                .ok_or_else(|| EvalError::Malformed("affine over a non-numeric input".into()))?;
            Ok(Val::Num(scale * x + offset))
        }
        CodecExpr::EnumLookup { table, access, input } => {
            if *access == LookupAccess::Call {
                return Err(lookup_not_callable());
            }
            let Val::Raw(raw) = decode_val(input, frame)? else {
                return Err(EvalError::Malformed("enum lookup needs a raw integer".into()));
            };
            i64::try_from(raw)
                .ok()
                .and_then(|k| table.get(&k))
                .map(|l| Val::Label(l.clone()))
                .ok_or_else(|| EvalError::Domain(format!("raw value {raw} has no enum label")))
        }
        CodecExpr::BoolMap { input } => match decode_val(input, frame)? {
            Val::Raw(0) => Ok(Val::Bool(false)),
            Val::Raw(1) | Val::Raw(-1) => Ok(Val::Bool(true)),
            Val::Raw(r) => Err(EvalError::Domain(format!("raw value {r} is not boolean"))),
            _ => Err(EvalError::Malformed("bool map needs a raw integer".into())),
        },
        CodecExpr::Combine { terms, .. } => {
            let mut sum = 0.0;
            for term in terms {
                let v = decode_val(&term.expr, frame)?.number().ok_or_else(|| {
                    EvalError::Malformed(format!("combine term `{}` is not numeric", term.signal))
                })?;
                sum += term.weight * v;
            }
            Ok(Val::Num(sum))
        }
        CodecExpr::Clamp { input, .. } => decode_val(input, frame),
    }
}

pub fn encode(codec: &CodecExpr, value: &PhysicalValue, base: Frame) -> Result<Frame, EvalError> {
    codec.check_well_formed()?;
    encode_val(codec, Val::from_physical(value), base)
}

fn encode_val(expr: &CodecExpr, value: Val, frame: Frame) -> Result<Frame, EvalError> {
    match expr {
        CodecExpr::RawField(layout) => {
            let raw = match value {
                Val::Raw(r) => r,
                Val::Num(v) if v.is_finite() => v.round() as i128,
                Val::Num(v) => return Err(EvalError::Domain(format!("cannot encode {v}"))),
                Val::Bool(_) | Val::Label(_) => {
                    return Err(EvalError::Domain("raw field needs a number".into()))
                }
            };
            layout.insert(frame, raw)
        }
        CodecExpr::Affine { scale, offset, input } => {
            let v = value
                .number()
                .ok_or_else(|| EvalError::Domain("expected a number".into()))?;
            encode_val(input, Val::Num((v - offset) / scale), frame)
        }
        CodecExpr::EnumLookup { table, access, input } => {
            if *access == LookupAccess::Call {
                return Err(lookup_not_callable());
            }
            let Val::Label(label) = value else {
                return Err(EvalError::Domain("expected an enum label".into()));
            };
            let raw = table
                .iter()
                .find(|(_, l)| **l == label)
                .map(|(k, _)| *k)
                .ok_or_else(|| EvalError::Domain(format!("label `{label}` is not in the enum table")))?;
            encode_val(input, Val::Raw(raw as i128), frame)
        }
        CodecExpr::BoolMap { input } => match value {
            Val::Bool(b) => encode_val(input, Val::Raw(b as i128), frame),
            _ => Err(EvalError::Domain("expected a boolean".into())),
        },
        CodecExpr::Combine { terms, .. } => {
            let mut rest = value
                .number()
                .ok_or_else(|| EvalError::Domain("expected a number".into()))?;
            let mut order: Vec<&CombineTerm> = terms.iter().collect();
            order.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()));
            let mut frame = frame;
            let last = order.len() - 1;
            for (i, term) in order.into_iter().enumerate() {
                let part = if i == last {
                    rest / term.weight
                } else {
                    (rest / term.weight + 1e-9).floor()
                };
                rest -= part * term.weight;
                frame = encode_val(&term.expr, Val::Num(part), frame)?;
            }
            Ok(frame)
        }
        CodecExpr::Clamp { min, max, input } => {
            let v = value
                .number()
                .ok_or_else(|| EvalError::Domain("expected a number".into()))?;
            encode_val(input, Val::Num(v.clamp(*min, *max)), frame)
        }
    }
}

/// A synthesized codec bound to its signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalCodec {
    pub signal: String,
    pub kind: SignalKind,
    pub expr: CodecExpr,
}

impl SignalCodec {
    pub fn decode(&self, frame: Frame) -> Result<PhysicalValue, EvalError> {
        decode(&self.expr, frame)
    }

    pub fn encode(&self, value: &PhysicalValue, base: Frame) -> Result<Frame, EvalError> {
        encode(&self.expr, value, base)
    }

    /// Names of the signals combined by an object codec.
    pub fn component_signals(&self) -> Vec<String> {
        match &self.expr {
            CodecExpr::Combine { terms, .. } => terms.iter().map(|t| t.signal.clone()).collect(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le(start: u32, len: u32) -> FieldLayout {
        FieldLayout {
            bit_start: start,
            bit_length: len,
            byte_order: ByteOrder::LittleEndian,
            signed: false,
        }
    }

    #[test]
    fn affine_over_16_bit_field() {
        let codec = CodecExpr::affine(0.01, 0.0, CodecExpr::raw(le(0, 16)));
        let frame = le(0, 16).insert(Frame::ZERO, 5000).unwrap();
        assert_eq!(decode(&codec, frame).unwrap(), PhysicalValue::Number(50.0));
    }

    #[test]
    fn enum_lookup_decodes_label() {
        let table = BTreeMap::from([(0, "OFF".to_string()), (1, "ON".to_string())]);
        let codec = CodecExpr::enum_lookup(table, CodecExpr::raw(le(4, 2)));
        let frame = le(4, 2).insert(Frame::ZERO, 1).unwrap();
        assert_eq!(decode(&codec, frame).unwrap(), PhysicalValue::Label("ON".into()));
        let frame = le(4, 2).insert(Frame::ZERO, 3).unwrap();
        assert!(matches!(decode(&codec, frame), Err(EvalError::Domain(_))));
    }

    #[test]
    fn encode_leaves_unrelated_bits() {
        let layout = le(4, 2);
        let table = BTreeMap::from([(0, "OFF".to_string()), (1, "ON".to_string())]);
        let codec = CodecExpr::enum_lookup(table, CodecExpr::raw(layout));
        let base = Frame::from_u64(0xdead_beef_0123_4567);
        let out = encode(&codec, &PhysicalValue::Label("ON".into()), base).unwrap();
        let mask = layout.frame_mask().as_u64();
        assert_eq!(out.as_u64() & !mask, base.as_u64() & !mask);
        assert_eq!(layout.extract(out), 1);
    }

    #[test]
    fn big_endian_msb_first_numbering() {
        let layout = FieldLayout {
            bit_start: 0,
            bit_length: 4,
            byte_order: ByteOrder::BigEndian,
            signed: false,
        };
        let f = layout.insert(Frame::ZERO, 0xa).unwrap();
        assert_eq!(f.0[0], 0xa0);
        let l = le(0, 4).insert(Frame::ZERO, 0xa).unwrap();
        assert_eq!(l.0[0], 0x0a);
    }

    #[test]
    fn signed_fields_sign_extend() {
        let layout = FieldLayout {
            bit_start: 8,
            bit_length: 8,
            byte_order: ByteOrder::LittleEndian,
            signed: true,
        };
        let f = layout.insert(Frame::ZERO, -3).unwrap();
        assert_eq!(layout.extract(f), -3);
        assert!(layout.insert(Frame::ZERO, 128).is_err());
        let full = FieldLayout { bit_start: 0, bit_length: 64, byte_order: ByteOrder::BigEndian, signed: true };
        assert_eq!(full.extract(full.insert(Frame::ZERO, i64::MIN as i128).unwrap()), i64::MIN as i128);
    }

    #[test]
    fn call_syntax_lookup_is_malformed() {
        let codec = CodecExpr::EnumLookup {
            table: BTreeMap::from([(0, "A".to_string())]),
            access: LookupAccess::Call,
            input: Box::new(CodecExpr::raw(le(0, 1))),
        };
        assert!(matches!(decode(&codec, Frame::ZERO), Err(EvalError::Malformed(_))));
    }

    #[test]
    fn clamp_saturates_on_encode_only() {
        let codec = CodecExpr::clamp(0.0, 100.0, CodecExpr::affine(1.0, 0.0, CodecExpr::raw(le(0, 8))));
        let f = encode(&codec, &PhysicalValue::Number(150.0), Frame::ZERO).unwrap();
        assert_eq!(le(0, 8).extract(f), 100);
        let raw200 = le(0, 8).insert(Frame::ZERO, 200).unwrap();
        assert_eq!(decode(&codec, raw200).unwrap(), PhysicalValue::Number(200.0));
    }

    #[test]
    fn combine_decomposes_minutes_and_seconds() {
        let minute = CodecExpr::affine(1.0, 0.0, CodecExpr::raw(le(0, 6)));
        let second = CodecExpr::affine(1.0, 0.0, CodecExpr::raw(le(6, 6)));
        let codec = CodecExpr::Combine {
            combine: CombineOp::WeightedSum,
            terms: vec![
                CombineTerm { signal: "Minute".into(), weight: 60.0, expr: minute },
                CombineTerm { signal: "Second".into(), weight: 1.0, expr: second },
            ],
        };
        let f = encode(&codec, &PhysicalValue::Number(125.0), Frame::ZERO).unwrap();
        assert_eq!(le(0, 6).extract(f), 2);
        assert_eq!(le(6, 6).extract(f), 5);
        assert_eq!(decode(&codec, f).unwrap(), PhysicalValue::Number(125.0));
    }

    #[test]
    fn expression_json_shape() {
        let codec = CodecExpr::affine(0.01, 0.0, CodecExpr::raw(le(0, 16)));
        let v = serde_json::to_value(&codec).unwrap();
        assert_eq!(v["op"], "affine");
        assert_eq!(v["input"]["op"], "raw_field");
        assert_eq!(v["input"]["bit_length"], 16);
        let back: CodecExpr = serde_json::from_value(v).unwrap();
        assert_eq!(back, codec);
    }

    #[test]
    fn frame_hex_round_trip() {
        let f = Frame::from_u64(0x0102_0304_0506_0708);
        assert_eq!(f.to_hex(), "0102030405060708");
        assert_eq!(Frame::from_hex("0x0102030405060708"), Some(f));
        assert_eq!(Frame::from_hex("12"), None);
    }
}
