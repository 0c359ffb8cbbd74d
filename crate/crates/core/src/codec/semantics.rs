//! Catalog semantics: what a signal means, computed straight from its
//! [`SignalDef`] without going through any synthesized expression. Test
//! vectors and evaluation baselines are derived from here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{EvalError, FieldLayout, Frame, PhysicalValue};
use crate::catalog::{SignalCatalog, SignalDef, SignalKind};

fn child<'a>(catalog: &'a SignalCatalog, name: &str) -> Result<&'a SignalDef, EvalError> {
    catalog
        .get(name)
        .ok_or_else(|| EvalError::Malformed(format!("unknown component `{name}`")))
}

fn layout_of(def: &SignalDef) -> Result<FieldLayout, EvalError> {
    def.layout()
        .ok_or_else(|| EvalError::Malformed(format!("signal `{}` has no bit layout", def.name)))
}

/// Decode `frame` the way the catalog defines `def`.
pub fn reference_decode(
    def: &SignalDef,
    catalog: &SignalCatalog,
    frame: Frame,
) -> Result<PhysicalValue, EvalError> {
    match def.kind {
        SignalKind::Enum => {
            let raw = layout_of(def)?.extract(frame);
            i64::try_from(raw)
                .ok()
                .and_then(|k| def.enum_map.get(&k))
                .map(|l| PhysicalValue::Label(l.clone()))
                .ok_or_else(|| EvalError::Domain(format!("raw value {raw} has no enum label")))
        }
        SignalKind::Bool => match layout_of(def)?.extract(frame) {
            0 => Ok(PhysicalValue::Bool(false)),
            1 | -1 => Ok(PhysicalValue::Bool(true)),
            r => Err(EvalError::Domain(format!("raw value {r} is not boolean"))),
        },
        SignalKind::Numerical => {
            let raw = layout_of(def)?.extract(frame);
            Ok(PhysicalValue::Number(def.scale * raw as f64 + def.offset))
        }
        SignalKind::Object => {
            let mut sum = 0.0;
            for comp in &def.components {
                let v = reference_decode(child(catalog, &comp.signal)?, catalog, frame)?;
                let v = v.as_f64().ok_or_else(|| {
                    EvalError::Malformed(format!("component `{}` is not numeric", comp.signal))
                })?;
                sum += comp.role.weight() * v;
            }
            Ok(PhysicalValue::Number(sum))
        }
    }
}

/// Encode `value` into `base` the way the catalog defines `def`; numbers
/// saturate at the declared range.
pub fn reference_encode(
    def: &SignalDef,
    catalog: &SignalCatalog,
    value: &PhysicalValue,
    base: Frame,
) -> Result<Frame, EvalError> {
    match (def.kind, value) {
        (SignalKind::Enum, PhysicalValue::Label(label)) => {
            let key = def
                .enum_map
                .iter()
                .find(|(_, l)| *l == label)
                .map(|(k, _)| *k)
                .ok_or_else(|| EvalError::Domain(format!("label `{label}` not in enum_map")))?;
            layout_of(def)?.insert(base, key as i128)
        }
        (SignalKind::Bool, PhysicalValue::Bool(b)) => layout_of(def)?.insert(base, *b as i128),
        (SignalKind::Numerical, PhysicalValue::Number(v)) => {
            let v = match def.range() {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => *v,
            };
            let raw = ((v - def.offset) / def.scale).round();
            if !raw.is_finite() {
                return Err(EvalError::Domain(format!("cannot encode {v}")));
            }
            layout_of(def)?.insert(base, raw as i128)
        }
        (SignalKind::Object, PhysicalValue::Number(v)) => {
            let v = match def.range() {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => *v,
            };
            let mut comps: Vec<_> = def.components.iter().collect();
            comps.sort_by(|a, b| b.role.weight().abs().total_cmp(&a.role.weight().abs()));
            let mut rest = v;
            let mut frame = base;
            let last = comps.len().saturating_sub(1);
            for (i, comp) in comps.into_iter().enumerate() {
                let w = comp.role.weight();
                let part = if i == last { rest / w } else { (rest / w + 1e-9).floor() };
                rest -= part * w;
                frame = reference_encode(
                    child(catalog, &comp.signal)?,
                    catalog,
                    &PhysicalValue::Number(part),
                    frame,
                )?;
            }
            Ok(frame)
        }
        (kind, v) => Err(EvalError::Domain(format!("value {v} does not fit a {kind} signal"))),
    }
}

/// Leaf bit fields of a signal, descending through object components.
pub fn leaf_layouts(def: &SignalDef, catalog: &SignalCatalog) -> Vec<(String, FieldLayout)> {
    let mut out = Vec::new();
    collect_leaves(def, catalog, &mut out);
    out
}

fn collect_leaves(def: &SignalDef, catalog: &SignalCatalog, out: &mut Vec<(String, FieldLayout)>) {
    if let Some(layout) = def.layout() {
        out.push((def.name.clone(), layout));
        return;
    }
    for comp in &def.components {
        if let Some(c) = catalog.get(&comp.signal) {
            collect_leaves(c, catalog, out);
        }
    }
}

/// Total number of raw bits a signal reads.
pub fn raw_bits(def: &SignalDef, catalog: &SignalCatalog) -> u32 {
    leaf_layouts(def, catalog).iter().map(|(_, l)| l.bit_length).sum()
}

/// Whether `frame` (with only the signal's own bits set) lies in the valid
/// raw domain: it decodes, and every numeric level is within range.
pub fn is_valid_raw(def: &SignalDef, catalog: &SignalCatalog, frame: Frame) -> bool {
    let Ok(value) = reference_decode(def, catalog, frame) else {
        return false;
    };
    if let (Some((lo, hi)), PhysicalValue::Number(v)) = (def.range(), &value) {
        let tol = 1e-9 * v.abs().max(1.0);
        if *v < lo - tol || *v > hi + tol {
            return false;
        }
    }
    def.components.iter().all(|c| {
        catalog
            .get(&c.signal)
            .is_some_and(|child| is_valid_raw(child, catalog, frame))
    })
}

/// Cartesian product of all leaf raw values, as frames with only those
/// bits set.
pub struct DomainFrames {
    layouts: Vec<FieldLayout>,
    next: Option<Vec<i128>>,
}

impl Iterator for DomainFrames {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        let current = self.next.take()?;
        let mut frame = Frame::ZERO;
        for (layout, raw) in self.layouts.iter().zip(&current) {
            frame = layout.insert(frame, *raw).expect("raw within bounds");
        }
        let mut advanced = current;
        let mut carry = true;
        for (layout, raw) in self.layouts.iter().zip(advanced.iter_mut()).rev() {
            if !carry {
                break;
            }
            let (lo, hi) = layout.raw_bounds();
            if *raw < hi {
                *raw += 1;
                carry = false;
            } else {
                *raw = lo;
            }
        }
        if !carry {
            self.next = Some(advanced);
        }
        Some(frame)
    }
}

/// Every raw assignment of the signal's leaf fields, or `None` when the
/// signal reads more than `max_bits` bits.
pub fn raw_domain(def: &SignalDef, catalog: &SignalCatalog, max_bits: u32) -> Option<DomainFrames> {
    let leaves = leaf_layouts(def, catalog);
    let bits: u32 = leaves.iter().map(|(_, l)| l.bit_length).sum();
    if bits > max_bits || leaves.is_empty() {
        return None;
    }
    let layouts: Vec<FieldLayout> = leaves.into_iter().map(|(_, l)| l).collect();
    let start = layouts.iter().map(|l| l.raw_bounds().0).collect();
    Some(DomainFrames {
        layouts,
        next: Some(start),
    })
}

/// Frames used to fingerprint a codec's behaviour: the full raw domain for
/// signals of at most 16 bits, otherwise boundaries plus seeded samples.
pub fn semantic_frames(def: &SignalDef, catalog: &SignalCatalog) -> Vec<Frame> {
    if let Some(all) = raw_domain(def, catalog, 16) {
        return all.collect();
    }
    let leaves = leaf_layouts(def, catalog);
    let mut frames = Vec::new();
    for pick in [0usize, 1, 2] {
        let mut f = Frame::ZERO;
        for (_, l) in &leaves {
            let (lo, hi) = l.raw_bounds();
            let raw = match pick {
                0 => 0.clamp(lo, hi),
                1 => hi,
                _ => lo,
            };
            f = l.insert(f, raw).expect("bounds");
        }
        frames.push(f);
    }
    let seed = def
        .name
        .bytes()
        .fold(0x5eed_u64, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..512 {
        let mut f = Frame::ZERO;
        for (_, l) in &leaves {
            let (lo, hi) = l.raw_bounds();
            f = l.insert(f, rng.gen_range(lo..=hi)).expect("bounds");
        }
        frames.push(f);
    }
    frames
}

fn describe(r: &Result<PhysicalValue, EvalError>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(EvalError::Domain(_)) => "!domain".into(),
        Err(EvalError::Malformed(_)) => "!malformed".into(),
    }
}

/// Fingerprint of decode (and decode-then-encode) behaviour over
/// [`semantic_frames`]. Two codecs with equal hashes behave identically on
/// every fingerprint frame.
pub fn semantic_hash(
    frames: &[Frame],
    decode: impl Fn(Frame) -> Result<PhysicalValue, EvalError>,
    encode: impl Fn(&PhysicalValue) -> Result<Frame, EvalError>,
) -> String {
    let mut h = Sha256::new();
    for f in frames {
        let d = decode(*f);
        let back = match &d {
            Ok(v) => match encode(v) {
                Ok(fr) => fr.to_hex(),
                Err(e) => describe(&Err(e)),
            },
            Err(_) => "-".into(),
        };
        h.update(format!("{}={}>{}\n", f.to_hex(), describe(&d), back).as_bytes());
    }
    crate::provider::to_hex(&h.finalize())
}

/// Fingerprint of the catalog semantics of `def`.
pub fn reference_hash(def: &SignalDef, catalog: &SignalCatalog) -> String {
    let frames = semantic_frames(def, catalog);
    semantic_hash(
        &frames,
        |f| reference_decode(def, catalog, f),
        |v| reference_encode(def, catalog, v, Frame::ZERO),
    )
}
