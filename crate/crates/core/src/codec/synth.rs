use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::vectors::{generate_test_vectors, vector_digest, Direction, Expectation, TestVector};
use super::{decode, encode, CodecExpr, CombineOp, CombineTerm, Frame, SignalCodec};
use crate::catalog::{SignalCatalog, SignalDef, SignalKind};
use crate::provider::{
    CompletionProvider, CompletionRequest, FieldType, OutputSchema, ProviderError, TaskTag,
};

pub const DEFAULT_MAX_DEBUG_ROUNDS: u32 = 3;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("codec payload for `{signal}` is not a valid expression tree: {message}")]
    Payload { signal: String, message: String },
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
}

/// Build the codec the catalog prescribes. This is what the rule-based
/// provider emits; it is not used to judge synthesized codecs.
pub fn rule_codec<'a>(
    def: &SignalDef,
    lookup: &dyn Fn(&str) -> Option<&'a SignalDef>,
) -> Result<CodecExpr, String> {
    let expr = match def.kind {
        SignalKind::Object => {
            let mut terms = Vec::new();
            for comp in &def.components {
                let child = lookup(&comp.signal)
                    .ok_or_else(|| format!("component `{}` not supplied", comp.signal))?;
                terms.push(CombineTerm {
                    signal: child.name.clone(),
                    weight: comp.role.weight(),
                    expr: rule_codec(child, lookup)?,
                });
            }
            CodecExpr::Combine {
                combine: CombineOp::WeightedSum,
                terms,
            }
        }
        _ => {
            let field = CodecExpr::raw(
                def.layout()
                    .ok_or_else(|| format!("signal `{}` has no bit layout", def.name))?,
            );
            match def.kind {
                SignalKind::Enum => CodecExpr::enum_lookup(def.enum_map.clone(), field),
                SignalKind::Bool => CodecExpr::bool_map(field),
                _ => CodecExpr::affine(def.scale, def.offset, field),
            }
        }
    };
    Ok(match (def.kind, def.range()) {
        (SignalKind::Numerical | SignalKind::Object, Some((lo, hi))) => CodecExpr::clamp(lo, hi, expr),
        _ => expr,
    })
}

fn descendants<'a>(def: &SignalDef, catalog: &'a SignalCatalog, out: &mut BTreeMap<String, &'a SignalDef>) {
    for comp in &def.components {
        if let Some(child) = catalog.get(&comp.signal) {
            if out.insert(child.name.clone(), child).is_none() {
                descendants(child, catalog, out);
            }
        }
    }
}

pub(crate) fn codec_request(
    def: &SignalDef,
    catalog: &SignalCatalog,
    attempt: u32,
    feedback: Option<String>,
) -> CompletionRequest {
    let mut children = BTreeMap::new();
    descendants(def, catalog, &mut children);
    let components: Vec<&SignalDef> = children.into_values().collect();
    let metadata = json!({ "signal": def, "components": components });
    CompletionRequest::new(
        TaskTag::CodecSynthesis,
        OutputSchema::new()
            .field("codec", FieldType::Object, "codec expression tree for decode and encode")
            .optional("notes", FieldType::Text, "short rationale"),
        metadata.clone(),
    )
    .section("signal metadata", &serde_json::to_string_pretty(&metadata).unwrap_or_default())
    .section(
        "signature",
        "inputs: signal metadata (bit layout, kind, scaling, enum map, range, components)\n\
         output: codec (tree of raw_field, affine, enum_lookup, bool_map, combine, clamp)",
    )
    .with_attempt(attempt)
    .with_feedback(feedback)
}

/// Ask the provider for a codec. The result is schema-valid but not yet
/// checked for correctness; see [`validate_codec`].
pub fn synthesize_codec(
    def: &SignalDef,
    catalog: &SignalCatalog,
    provider: &dyn CompletionProvider,
    attempt: u32,
    feedback: Option<String>,
) -> Result<SignalCodec, CodecError> {
    let request = codec_request(def, catalog, attempt, feedback);
    let result = provider.complete_structured(&request)?;
    let expr: CodecExpr = serde_json::from_value(result.payload["codec"].clone()).map_err(|e| {
        CodecError::Payload {
            signal: def.name.clone(),
            message: e.to_string(),
        }
    })?;
    Ok(SignalCodec {
        signal: def.name.clone(),
        kind: def.kind,
        expr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFailure {
    pub index: usize,
    pub direction: Direction,
    pub frame: Frame,
    pub expected: String,
    pub got: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub failures: Vec<VectorFailure>,
}

fn show_expectation(e: &Expectation) -> String {
    match e {
        Expectation::Value(v) => v.to_string(),
        Expectation::OutOfDomain => "domain error".into(),
    }
}

/// Run every vector through the built-in evaluator.
pub fn validate_codec(codec: &CodecExpr, vectors: &[TestVector]) -> ValidationReport {
    let mut failures = Vec::new();
    for (index, v) in vectors.iter().enumerate() {
        let mut fail = |expected: String, got: String| {
            failures.push(VectorFailure {
                index,
                direction: v.direction,
                frame: v.frame,
                expected,
                got,
            })
        };
        if matches!(v.direction, Direction::Decode | Direction::Roundtrip) {
            let got = decode(codec, v.frame);
            let ok = match (&v.expected, &got) {
                (Expectation::Value(want), Ok(have)) => want.approx_eq(have),
                (Expectation::OutOfDomain, Err(super::EvalError::Domain(_))) => true,
                _ => false,
            };
            if !ok {
                let got = match got {
                    Ok(g) => g.to_string(),
                    Err(e) => e.to_string(),
                };
                fail(show_expectation(&v.expected), got);
                continue;
            }
        }
        if matches!(v.direction, Direction::Encode | Direction::Roundtrip) {
            let Expectation::Value(value) = &v.expected else {
                continue;
            };
            match encode(codec, value, Frame::ZERO) {
                Ok(f) if f == v.frame => {}
                Ok(f) => fail(format!("frame {}", v.frame), format!("frame {f}")),
                Err(e) => fail(format!("frame {}", v.frame), e.to_string()),
            }
        }
    }
    ValidationReport {
        passed: failures.is_empty(),
        failures,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub signal: String,
    pub status: SynthesisStatus,
    pub attempts: u32,
    pub failures: Vec<VectorFailure>,
    pub codec: Option<SignalCodec>,
    pub vector_digest: String,
    pub provider_id: String,
}

impl SynthesisReport {
    pub fn passed(&self) -> bool {
        self.status == SynthesisStatus::Pass
    }

    pub fn record(&self) -> Option<CodecRecord> {
        self.codec.as_ref().map(|c| CodecRecord {
            signal: c.signal.clone(),
            kind: c.kind,
            expr: c.expr.clone(),
            vector_digest: self.vector_digest.clone(),
            provider_id: self.provider_id.clone(),
        })
    }
}

/// Persisted form of a pass-validated codec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecRecord {
    pub signal: String,
    pub kind: SignalKind,
    pub expr: CodecExpr,
    pub vector_digest: String,
    pub provider_id: String,
}

impl CodecRecord {
    pub fn codec(&self) -> SignalCodec {
        SignalCodec {
            signal: self.signal.clone(),
            kind: self.kind,
            expr: self.expr.clone(),
        }
    }
}

fn feedback_text(failures: &[VectorFailure]) -> String {
    let mut out = format!("{} test vector(s) failed:\n", failures.len());
    for f in failures.iter().take(8) {
        out.push_str(&format!(
            "- {:?} frame {}: expected {}, got {}\n",
            f.direction, f.frame, f.expected, f.got
        ));
    }
    if failures.len() > 8 {
        out.push_str(&format!("- ... {} more\n", failures.len() - 8));
    }
    out
}

/// Synthesize, validate, and feed failures back until the codec passes or
/// `max_rounds` repairs have been spent. Only a passing report carries a
/// codec.
pub fn debug_loop(
    def: &SignalDef,
    catalog: &SignalCatalog,
    provider: &dyn CompletionProvider,
    max_rounds: u32,
) -> Result<SynthesisReport, CodecError> {
    let vectors = generate_test_vectors(def, catalog);
    let digest = vector_digest(&vectors);
    let mut feedback = None;
    let mut failures = Vec::new();
    for attempt in 1..=max_rounds + 1 {
        let codec = match synthesize_codec(def, catalog, provider, attempt, feedback.take()) {
            Ok(c) => c,
            // An unreadable codec costs a round like a wrong one.
            Err(
                CodecError::Payload { message, .. }
                | CodecError::Provider(ProviderError::SchemaViolation { message, .. }),
            ) => {
                feedback = Some(format!("the previous codec could not be parsed: {message}"));
                failures = Vec::new();
                continue;
            }
            Err(e) => return Err(e),
        };
        let report = validate_codec(&codec.expr, &vectors);
        if report.passed {
            return Ok(SynthesisReport {
                signal: def.name.clone(),
                status: SynthesisStatus::Pass,
                attempts: attempt,
                failures: Vec::new(),
                codec: Some(codec),
                vector_digest: digest,
                provider_id: provider.provider_id(),
            });
        }
        feedback = Some(feedback_text(&report.failures));
        failures = report.failures;
    }
    Ok(SynthesisReport {
        signal: def.name.clone(),
        status: SynthesisStatus::Fail,
        attempts: max_rounds + 1,
        failures,
        codec: None,
        vector_digest: digest,
        provider_id: provider.provider_id(),
    })
}

/// Run [`debug_loop`] for every catalog signal on `jobs` workers. Reports
/// come back in catalog name order regardless of scheduling.
pub fn synthesize_all(
    catalog: &SignalCatalog,
    provider: &dyn CompletionProvider,
    max_rounds: u32,
    jobs: usize,
) -> Result<Vec<SynthesisReport>, CodecError> {
    let defs: Vec<&SignalDef> = catalog.iter().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    let mut reports = pool.install(|| {
        defs.par_iter()
            .map(|def| debug_loop(def, catalog, provider, max_rounds))
            .collect::<Result<Vec<_>, _>>()
    })?;
    reports.sort_by(|a, b| a.signal.cmp(&b.signal));
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;
    use crate::provider::{FaultClass, FaultInjectingBackend, FaultSchedule, RuleBackend, StructuredProvider};

    const DOC: &str = r#"
signals:
  - {name: WiperState, kind: enum, bit_start: 0, bit_length: 2, enum_map: {0: OFF, 1: ON, 2: INTERVAL}}
  - {name: DoorOpen, kind: bool, bit_start: 5, bit_length: 1}
  - {name: VehicleSpeed, kind: numerical, bit_start: 8, bit_length: 16, scale: 0.01, unit: m/s}
  - {name: Nibble, kind: numerical, bit_start: 26, bit_length: 4, range_min: 0, range_max: 12}
  - {name: TripMinute, kind: numerical, bit_start: 40, bit_length: 6, range_min: 0, range_max: 59}
  - {name: TripSecond, kind: numerical, bit_start: 46, bit_length: 6, range_min: 0, range_max: 59}
  - name: TimeOfTrip
    kind: object
    unit: s
    components: [{signal: TripMinute, role: minutes}, {signal: TripSecond, role: seconds}]
"#;

    fn cat() -> SignalCatalog {
        parse_catalog(DOC, "mem").unwrap()
    }

    fn rule() -> StructuredProvider<RuleBackend> {
        StructuredProvider::new(RuleBackend::new())
    }

    #[test]
    fn rule_provider_emits_catalog_scaling() {
        let cat = cat();
        let codec = synthesize_codec(cat.get("VehicleSpeed").unwrap(), &cat, &rule(), 1, None).unwrap();
        match codec.expr {
            CodecExpr::Affine { scale, offset, input } => {
                assert_eq!((scale, offset), (0.01, 0.0));
                assert!(matches!(*input, CodecExpr::RawField(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rule_provider_combines_minutes_and_seconds() {
        let cat = cat();
        let codec = synthesize_codec(cat.get("TimeOfTrip").unwrap(), &cat, &rule(), 1, None).unwrap();
        let CodecExpr::Combine { terms, .. } = codec.expr else { panic!() };
        let weights: Vec<_> = terms.iter().map(|t| (t.signal.as_str(), t.weight)).collect();
        assert_eq!(weights, [("TripMinute", 60.0), ("TripSecond", 1.0)]);
    }

    #[test]
    fn bracket_misuse_fails_validation() {
        let cat = cat();
        let def = cat.get("WiperState").unwrap();
        let faulty = StructuredProvider::new(FaultInjectingBackend::new(
            RuleBackend::new(),
            vec![FaultClass::BracketMisuse],
            FaultSchedule::Always,
        ));
        let codec = synthesize_codec(def, &cat, &faulty, 1, None).unwrap();
        let report = validate_codec(&codec.expr, &generate_test_vectors(def, &cat));
        assert!(!report.passed);
        assert!(report.failures.iter().any(|f| f.got.contains("not callable")));
    }

    #[test]
    fn correct_codec_passes_its_vectors() {
        let cat = cat();
        for def in cat.iter() {
            let codec = synthesize_codec(def, &cat, &rule(), 1, None).unwrap();
            let report = validate_codec(&codec.expr, &generate_test_vectors(def, &cat));
            assert!(report.passed, "{}: {:?}", def.name, report.failures);
        }
    }

    #[test]
    fn perturbed_offset_fails_every_decode_by_one() {
        let cat = cat();
        let def = cat.get("Nibble").unwrap();
        let vectors = generate_test_vectors(def, &cat);
        let bad = CodecExpr::affine(1.0, 1.0, CodecExpr::raw(def.layout().unwrap()));
        let report = validate_codec(&bad, &vectors);
        assert!(!report.passed);
        let decodes = vectors.iter().filter(|v| v.direction != Direction::Encode).count();
        let mismatched: Vec<_> = report
            .failures
            .iter()
            .filter(|f| f.direction != Direction::Encode)
            .collect();
        assert_eq!(mismatched.len(), decodes);
        for f in mismatched {
            let want: f64 = f.expected.parse().unwrap();
            let got: f64 = f.got.parse().unwrap();
            assert_eq!(got - want, 1.0);
        }
    }

    #[test]
    fn debug_loop_first_attempt_success() {
        let cat = cat();
        let r = debug_loop(cat.get("DoorOpen").unwrap(), &cat, &rule(), 3).unwrap();
        assert_eq!((r.status, r.attempts), (SynthesisStatus::Pass, 1));
        assert!(r.codec.is_some());
    }

    #[test]
    fn debug_loop_repairs_single_shot_fault() {
        let cat = cat();
        let faulty = StructuredProvider::new(FaultInjectingBackend::new(
            RuleBackend::new(),
            vec![FaultClass::BracketMisuse],
            FaultSchedule::FirstAttempts(1),
        ));
        let r = debug_loop(cat.get("WiperState").unwrap(), &cat, &faulty, 3).unwrap();
        assert_eq!((r.status, r.attempts), (SynthesisStatus::Pass, 2));
    }

    #[test]
    fn debug_loop_exhaustion() {
        let cat = cat();
        let faulty = StructuredProvider::new(FaultInjectingBackend::new(
            RuleBackend::new(),
            vec![FaultClass::BracketMisuse],
            FaultSchedule::Always,
        ));
        let r = debug_loop(cat.get("WiperState").unwrap(), &cat, &faulty, 2).unwrap();
        assert_eq!((r.status, r.attempts), (SynthesisStatus::Fail, 3));
        assert!(r.codec.is_none());
        assert!(!r.failures.is_empty());
        let r0 = debug_loop(cat.get("WiperState").unwrap(), &cat, &faulty, 0).unwrap();
        assert_eq!(r0.attempts, 1);
    }

    #[test]
    fn synthesize_all_is_name_ordered() {
        let cat = cat();
        let reports = synthesize_all(&cat, &rule(), 3, 4).unwrap();
        let names: Vec<_> = reports.iter().map(|r| r.signal.clone()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert!(reports.iter().all(|r| r.passed()));
    }
}
