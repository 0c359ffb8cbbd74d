use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::semantics::{is_valid_raw, leaf_layouts, raw_domain, reference_decode, reference_encode};
use super::{EvalError, Frame, PhysicalValue};
use crate::catalog::{SignalCatalog, SignalDef, SignalKind};

/// Raw domains up to this many bits are covered exhaustively.
const EXHAUSTIVE_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `decode(frame)` must equal the expectation.
    Decode,
    /// `encode(value, zero frame)` must equal `frame`.
    Encode,
    /// Both of the above.
    Roundtrip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Value(PhysicalValue),
    /// The raw value has no physical meaning; the codec must reject it.
    OutOfDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVector {
    pub frame: Frame,
    pub expected: Expectation,
    pub direction: Direction,
}

fn expectation(r: Result<PhysicalValue, EvalError>) -> Expectation {
    match r {
        Ok(v) => Expectation::Value(v),
        Err(_) => Expectation::OutOfDomain,
    }
}

/// Derive test vectors for `def` from the catalog alone.
///
/// Small raw domains (≤ 8 bits in total) are enumerated completely. Larger
/// ones get boundary frames (all-zero and all-one fields, signed extremes),
/// every enum entry, the frames at `range_min`/`range_max`, quartile
/// samples, and a saturating encode vector beyond each range end.
pub fn generate_test_vectors(def: &SignalDef, catalog: &SignalCatalog) -> Vec<TestVector> {
    let mut vectors = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push_frame = |frame: Frame, vectors: &mut Vec<TestVector>| {
        if !seen.insert(frame) {
            return;
        }
        let expected = expectation(reference_decode(def, catalog, frame));
        let direction = if is_valid_raw(def, catalog, frame) {
            Direction::Roundtrip
        } else {
            Direction::Decode
        };
        vectors.push(TestVector {
            frame,
            expected,
            direction,
        });
    };

    if let Some(domain) = raw_domain(def, catalog, EXHAUSTIVE_BITS) {
        for frame in domain {
            push_frame(frame, &mut vectors);
        }
    } else {
        let leaves = leaf_layouts(def, catalog);
        let fill = |pick: &dyn Fn(i128, i128) -> i128| {
            leaves.iter().fold(Frame::ZERO, |f, (_, l)| {
                let (lo, hi) = l.raw_bounds();
                l.insert(f, pick(lo, hi)).expect("bounds")
            })
        };
        // all-zero field, all-one field, signed extremes, quartiles
        push_frame(Frame::ZERO, &mut vectors);
        push_frame(
            leaves
                .iter()
                .fold(Frame::ZERO, |f, (_, l)| Frame::from_u64(f.as_u64() | l.frame_mask().as_u64())),
            &mut vectors,
        );
        push_frame(fill(&|lo, _| lo), &mut vectors);
        push_frame(fill(&|_, hi| hi), &mut vectors);
        for q in 1..4 {
            push_frame(fill(&|lo, hi| lo + (hi - lo) * q / 4), &mut vectors);
        }
        if def.kind == SignalKind::Object {
            for (_, l) in &leaves {
                let (lo, hi) = l.raw_bounds();
                let valid_top = (lo..=hi.min(lo + 4096))
                    .rev()
                    .find(|r| {
                        let f = l.insert(Frame::ZERO, *r).expect("bounds");
                        is_valid_raw(def, catalog, f)
                    });
                if let Some(r) = valid_top {
                    push_frame(l.insert(Frame::ZERO, r).expect("bounds"), &mut vectors);
                }
            }
        }
        if let Some(layout) = def.layout() {
            for key in def.enum_map.keys() {
                if let Ok(f) = layout.insert(Frame::ZERO, *key as i128) {
                    push_frame(f, &mut vectors);
                }
            }
            if def.kind == SignalKind::Numerical {
                for bound in [def.range_min, def.range_max].into_iter().flatten() {
                    let raw = ((bound - def.offset) / def.scale).round();
                    if let Ok(f) = layout.insert(Frame::ZERO, raw as i128) {
                        push_frame(f, &mut vectors);
                    }
                }
            }
        }
    }

    // Saturation: values beyond the range encode to the range end.
    if let Some((lo, hi)) = def.range() {
        if matches!(def.kind, SignalKind::Numerical | SignalKind::Object) {
            let span = (hi - lo).abs().max(1.0);
            for (beyond, end) in [(hi + span, hi), (lo - span, lo)] {
                if let Ok(frame) = reference_encode(def, catalog, &PhysicalValue::Number(end), Frame::ZERO) {
                    vectors.push(TestVector {
                        frame,
                        expected: Expectation::Value(PhysicalValue::Number(beyond)),
                        direction: Direction::Encode,
                    });
                }
            }
        }
    }

    if !vectors.iter().any(|v| v.direction == Direction::Roundtrip) {
        // Guarantee at least one roundtrip vector by encoding a valid value.
        let value = match def.kind {
            SignalKind::Enum => def.enum_map.values().next().cloned().map(PhysicalValue::Label),
            SignalKind::Bool => Some(PhysicalValue::Bool(true)),
            _ => Some(PhysicalValue::Number(def.range_min.unwrap_or(def.offset))),
        };
        if let Some(value) = value {
            if let Ok(frame) = reference_encode(def, catalog, &value, Frame::ZERO) {
                vectors.push(TestVector {
                    frame,
                    expected: Expectation::Value(value),
                    direction: Direction::Roundtrip,
                });
            }
        }
    }
    vectors
}

/// Hex SHA-256 of the serialized vector list.
pub fn vector_digest(vectors: &[TestVector]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(vectors).expect("vectors serialize").as_bytes());
    crate::provider::to_hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;

    fn catalog(doc: &str) -> SignalCatalog {
        parse_catalog(doc, "mem").unwrap()
    }

    #[test]
    fn enum_vectors_cover_every_entry() {
        let cat = catalog("signals:\n  - {name: W, kind: enum, bit_start: 0, bit_length: 2, enum_map: {0: OFF, 1: ON}}\n");
        let vs = generate_test_vectors(cat.get("W").unwrap(), &cat);
        let labels: Vec<_> = vs
            .iter()
            .filter_map(|v| match &v.expected {
                Expectation::Value(PhysicalValue::Label(l)) => Some(l.as_str()),
                _ => None,
            })
            .collect();
        assert!(labels.contains(&"OFF") && labels.contains(&"ON"));
        assert!(vs.iter().any(|v| v.expected == Expectation::OutOfDomain));
    }

    #[test]
    fn byte_signal_has_both_boundaries() {
        let cat = catalog("signals:\n  - {name: N, kind: numerical, bit_start: 8, bit_length: 8, range_min: 0, range_max: 255}\n");
        let vs = generate_test_vectors(cat.get("N").unwrap(), &cat);
        for want in [0.0, 255.0] {
            assert!(vs.iter().any(|v| v.direction != Direction::Encode
                && v.expected == Expectation::Value(PhysicalValue::Number(want))));
        }
    }

    #[test]
    fn wide_signals_get_boundaries_and_roundtrips() {
        let cat = catalog("signals:\n  - {name: S, kind: numerical, bit_start: 0, bit_length: 16, scale: 0.01, unit: m/s, range_min: 0, range_max: 655.35}\n");
        let vs = generate_test_vectors(cat.get("S").unwrap(), &cat);
        assert!(vs.iter().any(|v| v.direction == Direction::Roundtrip));
        assert!(vs.iter().any(|v| v.direction == Direction::Encode));
        assert!(vs.iter().any(|v| v.frame == Frame::ZERO));
        assert!(vs.len() < 32);
    }

    #[test]
    fn vectors_are_deterministic() {
        let cat = catalog("signals:\n  - {name: S, kind: numerical, bit_start: 3, bit_length: 12, signed: true, scale: 0.5, offset: -3}\n");
        let def = cat.get("S").unwrap();
        assert_eq!(
            vector_digest(&generate_test_vectors(def, &cat)),
            vector_digest(&generate_test_vectors(def, &cat))
        );
    }
}
