use std::collections::BTreeMap;

use proptest::prelude::*;
use signalforge_core::catalog::{
    parse_catalog, rewrite_description, serialize_catalog, ByteOrder, CatalogError, SignalCatalog, SignalDef,
    SignalKind,
};
use signalforge_core::codec::{
    debug_loop, is_valid_raw, raw_domain, reference_decode, Frame, PhysicalValue, DEFAULT_MAX_DEBUG_ROUNDS,
};
use signalforge_core::provider::{FaultClass, FaultInjectingBackend, FaultSchedule, RuleBackend, StructuredProvider};

fn blank(name: &str, kind: SignalKind) -> SignalDef {
    SignalDef {
        name: name.into(),
        kind,
        bit_start: None,
        bit_length: None,
        byte_order: ByteOrder::LittleEndian,
        signed: false,
        scale: 1.0,
        offset: 0.0,
        unit: None,
        range_min: None,
        range_max: None,
        enum_map: BTreeMap::new(),
        components: Vec::new(),
        description: String::new(),
    }
}

fn order() -> impl Strategy<Value = ByteOrder> {
    prop_oneof![Just(ByteOrder::LittleEndian), Just(ByteOrder::BigEndian)]
}

/// A valid leaf signal reading at most `max_len` bits.
fn leaf(name: String, max_len: u32) -> impl Strategy<Value = SignalDef> {
    let numerical = (1..=max_len, 0u32..=48, order(), any::<bool>(), 1i32..=400, -500i32..=500, any::<bool>())
        .prop_map({
            let name = name.clone();
            move |(len, start, bo, signed, scale, offset, neg)| {
                let mut d = blank(&name, SignalKind::Numerical);
                d.bit_start = Some(start.min(64 - len));
                d.bit_length = Some(len);
                d.byte_order = bo;
                d.signed = signed;
                d.scale = f64::from(if neg { -scale } else { scale }) / 100.0;
                d.offset = f64::from(offset) / 10.0;
                d.unit = Some("km/h".into());
                d
            }
        });
    let enumeration = (2..=max_len.max(2), 0u32..=48, order(), prop::collection::btree_set(0i64..4, 1..4)).prop_map({
        let name = name.clone();
        move |(len, start, bo, keys)| {
            let mut d = blank(&name, SignalKind::Enum);
            d.bit_start = Some(start.min(64 - len));
            d.bit_length = Some(len);
            d.byte_order = bo;
            d.enum_map = keys.into_iter().map(|k| (k, format!("STATE_{k}"))).collect();
            d
        }
    });
    let boolean = (0u32..=63).prop_map(move |start| {
        let mut d = blank(&name, SignalKind::Bool);
        d.bit_start = Some(start);
        d.bit_length = Some(1);
        d
    });
    prop_oneof![numerical, enumeration, boolean]
}

fn catalog_of(defs: Vec<SignalDef>) -> SignalCatalog {
    SignalCatalog::from_signals(defs, "prop").expect("generated catalog is valid")
}

fn leaves(max_len: u32) -> impl Strategy<Value = Vec<SignalDef>> {
    (1usize..6).prop_flat_map(move |n| (0..n).map(|i| leaf(format!("Sig{i}"), max_len)).collect::<Vec<_>>())
}

fn rule() -> StructuredProvider<RuleBackend> {
    StructuredProvider::new(RuleBackend::new())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_inverts_serialize(defs in leaves(32)) {
        let catalog = catalog_of(defs);
        let text = serialize_catalog(&catalog);
        let back = parse_catalog(&text, "roundtrip").unwrap();
        prop_assert_eq!(back.iter().collect::<Vec<_>>(), catalog.iter().collect::<Vec<_>>());
    }

    #[test]
    fn invariant_errors_name_signal_and_field(def in leaf("Broken".into(), 16), breakage in 0usize..4) {
        let mut def = def;
        let field = match breakage {
            0 => { def.scale = 0.0; "scale" }
            1 => { def.range_min = Some(10.0); def.range_max = Some(1.0); "range_min" }
            2 => { def.bit_start = Some(60); def.bit_length = Some(8); def.kind = SignalKind::Numerical; def.enum_map.clear(); "bit_length" }
            _ => { def.kind = SignalKind::Enum; def.enum_map.clear(); "enum_map" }
        };
        let text = serialize_catalog(&catalog_of(vec![blank("Fine", SignalKind::Bool).with_layout()]))
            .replace("signals:\n", &format!("signals:\n{}", indent(&def)));
        match parse_catalog(&text, "broken") {
            Err(CatalogError::Invariant(diags)) => {
                prop_assert!(diags.iter().any(|d| d.signal == "Broken" && d.field == field), "{diags:?}");
                for d in &diags {
                    let line = d.to_string();
                    prop_assert!(line.contains(&d.signal) && line.contains(&d.field));
                }
            }
            other => prop_assert!(false, "expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn rewrite_is_pure(def in leaf("Pure".into(), 16)) {
        let a = rewrite_description(&def, &rule()).unwrap();
        let b = rewrite_description(&def, &rule()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn validated_codecs_round_trip_the_raw_domain(def in leaf("Rt".into(), 10)) {
        let catalog = catalog_of(vec![def.clone()]);
        let report = debug_loop(&def, &catalog, &rule(), DEFAULT_MAX_DEBUG_ROUNDS).unwrap();
        prop_assert!(report.passed());
        let codec = report.codec.unwrap();
        for frame in raw_domain(&def, &catalog, 16).unwrap() {
            if !is_valid_raw(&def, &catalog, frame) {
                continue;
            }
            let want = reference_decode(&def, &catalog, frame).unwrap();
            let got = codec.decode(frame).unwrap();
            prop_assert!(got.approx_eq(&want), "{} decodes {} as {got}, expected {want}", def.name, frame);
            prop_assert_eq!(codec.encode(&got, Frame::ZERO).unwrap(), frame);
        }
    }

    #[test]
    fn positive_scale_decode_is_increasing(def in leaf("Mono".into(), 10)) {
        prop_assume!(def.kind == SignalKind::Numerical && def.scale > 0.0);
        let catalog = catalog_of(vec![def.clone()]);
        let codec = debug_loop(&def, &catalog, &rule(), 0).unwrap().codec.unwrap();
        let layout = def.layout().unwrap();
        let (lo, hi) = layout.raw_bounds();
        let mut prev = f64::NEG_INFINITY;
        for raw in lo..=hi {
            let v = codec.decode(layout.insert(Frame::ZERO, raw).unwrap()).unwrap();
            let PhysicalValue::Number(v) = v else { panic!("numerical codec returned {v}") };
            prop_assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn debug_loop_converges_when_faults_stop(
        def in leaf("Dbg".into(), 12),
        class in prop::sample::select(vec![
            FaultClass::BracketMisuse,
            FaultClass::OffByOneScale,
            FaultClass::DroppedEnumEntry,
            FaultClass::SwappedByteOrder,
            FaultClass::EmptyText,
        ]),
        faulty in 0u32..=DEFAULT_MAX_DEBUG_ROUNDS,
    ) {
        let catalog = catalog_of(vec![def.clone()]);
        let provider = StructuredProvider::new(FaultInjectingBackend::new(
            RuleBackend::new(),
            vec![class],
            FaultSchedule::FirstAttempts(faulty),
        ));
        let report = debug_loop(&def, &catalog, &provider, DEFAULT_MAX_DEBUG_ROUNDS).unwrap();
        prop_assert!(report.passed(), "{:?} with {faulty} faulty attempt(s): {:?}", class, report.failures);
        prop_assert!(report.attempts <= faulty + 1);
    }
}

trait WithLayout {
    fn with_layout(self) -> Self;
}

impl WithLayout for SignalDef {
    fn with_layout(mut self) -> Self {
        self.bit_start = Some(0);
        self.bit_length = Some(1);
        self
    }
}

/// One catalog list entry for `def`, as YAML text.
fn indent(def: &SignalDef) -> String {
    let body = serde_yaml::to_string(def).unwrap();
    let mut out = String::new();
    for (i, line) in body.lines().enumerate() {
        out.push_str(if i == 0 { "- " } else { "  " });
        out.push_str(line);
        out.push('\n');
    }
    out
}
