use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::OnceLock;

use proptest::prelude::*;
use signalforge_core::alignment::{
    align_all, apply_alignment, AlignParams, AlignmentStatus, ApplyError, MappingKind, PropertyAlignment,
};
use signalforge_core::catalog::SignalCatalog;
use signalforge_core::codec::{synthesize_all, Frame, PhysicalValue, SignalCodec};
use signalforge_core::endpoint::{
    check_contract, generate_endpoints, instantiate_template, parse_manifest, ApiSpec, AssemblyOptions,
};
use signalforge_core::index::{build_index, embed, IndexEntry, SignalIndex, Strategy as Retrieval};
use signalforge_core::provider::{RuleBackend, StructuredProvider};

const WORDS: &[&str] = &[
    "vehicle", "speed", "wiper", "front", "rear", "door", "lock", "battery", "charge", "state", "cabin",
    "temperature", "mode", "gear", "lever", "odometer", "trip", "minute", "second", "lamp",
];

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..6).prop_map(|w| w.join(" "))
}

fn rule() -> StructuredProvider<RuleBackend> {
    StructuredProvider::new(RuleBackend::new())
}

struct Spapi {
    catalog: SignalCatalog,
    api: ApiSpec,
    codecs: BTreeMap<String, SignalCodec>,
    alignments: BTreeMap<String, PropertyAlignment>,
}

fn spapi() -> &'static Spapi {
    static CELL: OnceLock<Spapi> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/spapi");
        let catalog = SignalCatalog::load(&dir.join("catalog.yaml")).unwrap();
        let api = ApiSpec::load(&dir.join("api.yaml")).unwrap();
        let p = rule();
        let codecs = synthesize_all(&catalog, &p, 3, 2)
            .unwrap()
            .into_iter()
            .filter_map(|r| r.codec)
            .map(|c| (c.signal.clone(), c))
            .collect();
        let index = build_index(&catalog, &[Retrieval::RewrittenDescription], &p).unwrap();
        let props: Vec<_> = api.properties().into_values().collect();
        let params = AlignParams { theta: 0.45, ..AlignParams::default() };
        let alignments = align_all(&props, &catalog, &index, Retrieval::RewrittenDescription, &p, &params)
            .unwrap()
            .into_iter()
            .map(|o| (o.alignment.property.clone(), o.alignment))
            .collect();
        Spapi { catalog, api, codecs, alignments }
    })
}

fn status() -> impl Strategy<Value = AlignmentStatus> {
    prop_oneof![
        Just(AlignmentStatus::AutoAccepted),
        Just(AlignmentStatus::Flagged),
        Just(AlignmentStatus::Approved),
        Just(AlignmentStatus::Rejected),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn top_k_matches_brute_force_in_any_insert_order(
        texts in prop::collection::vec(text(), 1..20),
        query in text(),
        k in 1usize..8,
        seed in any::<u64>(),
    ) {
        let entries: Vec<IndexEntry> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| IndexEntry {
                signal: format!("S{i:02}"),
                strategy: Retrieval::OriginalDescription,
                vector: embed(t).unwrap(),
                text: t.clone(),
            })
            .collect();
        let mut forward = SignalIndex::new();
        for e in &entries {
            forward.insert(e.clone()).unwrap();
        }
        let mut shuffled = entries.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize ^ i.wrapping_mul(2654435761)) % (i + 1));
        }
        let mut backward = SignalIndex::new();
        for e in &shuffled {
            backward.insert(e.clone()).unwrap();
        }
        let q = embed(&query).unwrap();
        let a = forward.query_top_k(&q, k, Retrieval::OriginalDescription).unwrap();
        let b = backward.query_top_k(&q, k, Retrieval::OriginalDescription).unwrap();
        prop_assert_eq!(&a, &b);

        // Oracle: dot products of the raw vectors, full sort.
        let mut oracle: Vec<(f64, String)> = entries
            .iter()
            .map(|e| (e.vector.0.iter().zip(&q.0).map(|(x, y)| x * y).sum::<f64>(), e.signal.clone()))
            .collect();
        oracle.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(&y.1)));
        for (hit, (sim, name)) in a.iter().zip(&oracle) {
            prop_assert!((hit.similarity - sim).abs() < 1e-9);
            prop_assert_eq!(&hit.signal, name);
        }
        prop_assert_eq!(a.len(), k.min(entries.len()));
    }

    #[test]
    fn only_usable_alignments_are_applied(st in status(), raw in 0u8..4) {
        let s = spapi();
        let mut a = s.alignments["frontWiperMode"].clone();
        a.status = st;
        let frame = s.catalog.get("WiprFrntSt").unwrap().layout().unwrap().insert(Frame::ZERO, raw.into()).unwrap();
        let applied = apply_alignment(&a, &s.codecs, frame);
        if st.is_usable() {
            prop_assert!(!matches!(applied, Err(ApplyError::NotUsable(..))));
        } else {
            prop_assert!(matches!(applied, Err(ApplyError::NotUsable(..))));
        }
    }

    #[test]
    fn endpoints_only_for_usable_alignments(statuses in prop::collection::vec(status(), 20)) {
        let s = spapi();
        let mut alignments = s.alignments.clone();
        for (a, st) in alignments.values_mut().zip(statuses) {
            a.status = st;
        }
        let batch = generate_endpoints(&s.api, &alignments, &s.codecs, &s.catalog, &rule(), &AssemblyOptions::default()).unwrap();
        for g in &batch.generated {
            let spec = s.api.endpoints.iter().find(|e| e.key() == g.key).unwrap();
            for p in spec.properties() {
                prop_assert!(alignments[&p.name].status.is_usable(), "{} generated with {} {}", g.key, p.name, alignments[&p.name].status);
            }
            prop_assert!(check_contract(&g.manifest, spec).passed);
        }
        for e in &s.api.endpoints {
            let usable = e.properties().all(|p| alignments[&p.name].status.is_usable());
            prop_assert_eq!(usable, batch.generated.iter().any(|g| g.key == e.key()));
        }
    }

    #[test]
    fn single_manifest_mutations_are_detected(which in 0usize..5, kind in 0usize..4, pick in any::<prop::sample::Index>()) {
        let s = spapi();
        let spec = &s.api.endpoints[which % s.api.endpoints.len()];
        let g = instantiate_template(spec, &s.alignments, &s.codecs, &s.catalog, &rule(), &AssemblyOptions::default()).unwrap();
        let mut m = parse_manifest(&g.source, g.manifest.slot_provenance.clone());
        prop_assert!(check_contract(&m, spec).passed);
        match kind {
            0 => {
                prop_assume!(!m.response_fields.is_empty());
                let i = pick.index(m.response_fields.len());
                m.response_fields.remove(i);
            }
            1 => {
                prop_assume!(!m.parameters.is_empty());
                let i = pick.index(m.parameters.len());
                m.parameters[i].push_str("_renamed");
            }
            2 => m.method = if m.method == "GET" { "PUT".into() } else { "GET".into() },
            _ => {
                prop_assume!(!m.validation_rules.is_empty());
                let i = pick.index(m.validation_rules.len());
                m.validation_rules.remove(i);
            }
        }
        prop_assert!(!check_contract(&m, spec).passed);
    }
}

#[test]
fn enum_correspondence_is_a_bijection() {
    let s = spapi();
    let a = &s.alignments["frontWiperMode"];
    let corr = a.enum_correspondence.as_ref().expect("enum mapping");
    let def = s.catalog.get("WiprFrntSt").unwrap();
    assert_eq!(corr.len(), def.enum_map.len(), "correspondence is total");
    let layout = def.layout().unwrap();
    let mut seen = BTreeSet::new();
    for &raw in def.enum_map.keys() {
        let frame = layout.insert(Frame::ZERO, raw.into()).unwrap();
        let PhysicalValue::Label(v) = apply_alignment(a, &s.codecs, frame).unwrap() else {
            panic!("enum alignment must yield a label");
        };
        assert_eq!(corr[&v], def.enum_map[&raw]);
        assert!(seen.insert(v), "two raws map to one property value");
    }
    assert_eq!(seen.len(), corr.len());
    assert_eq!(a.mapping_kind, MappingKind::Direct);
}

#[test]
fn template_instantiation_is_byte_identical() {
    let s = spapi();
    for spec in &s.api.endpoints {
        let a = instantiate_template(spec, &s.alignments, &s.codecs, &s.catalog, &rule(), &AssemblyOptions::default()).unwrap();
        let b = instantiate_template(spec, &s.alignments, &s.codecs, &s.catalog, &rule(), &AssemblyOptions::default()).unwrap();
        assert_eq!(a.source, b.source);
    }
}
