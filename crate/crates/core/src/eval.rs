//! Precision, recall and F1 over canonical unit digests, the ablation
//! harness, the embedding-strategy comparison, and report emission.
//!
//! A unit is one property together with the signal set it reads, the
//! mapping kind, and a fingerprint of the codec's behaviour over the
//! signal's raw domain. Generated and baseline units are compared by
//! digest, so a unit is correct only if all three agree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{align_all, evaluate_matching, AlignParams, GroundTruth, MappingKind, PropertyAlignment};
use crate::catalog::{SignalCatalog, SignalDef, SignalKind};
use crate::codec::{decode, encode, reference_hash, semantic_frames, semantic_hash, synthesize_all, Frame, SignalCodec};
use crate::endpoint::{generate_endpoints, ApiSpec, AssemblyOptions};
use crate::index::{build_index, Strategy};
use crate::provider::{Backend, CompletionProvider, FaultInjectingBackend, FaultPlan, StructuredProvider, UsageMeter};

/// Raw counts behind a [`Prf`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrfCounts {
    pub correct: u64,
    pub generated: u64,
    pub baseline: u64,
}

/// Precision, recall and F1. A metric whose denominator is zero is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub counts: PrfCounts,
}

fn ratio(n: u64, d: u64) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

/// P = C/G, R = C/B, F1 = 2C/(G+B). The F1 form is algebraically equal to
/// 2PR/(P+R) and needs a single rounding.
pub fn compute_prf_counts(correct: u64, generated: u64, baseline: u64) -> Prf {
    Prf {
        precision: ratio(correct, generated),
        recall: ratio(correct, baseline),
        f1: ratio(2 * correct, generated + baseline),
        counts: PrfCounts {
            correct,
            generated,
            baseline,
        },
    }
}

/// Harmonic mean of given precision and recall; `None` when both are zero.
pub fn f1_from(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

/// Generated and baseline unit digests for one evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub generated: BTreeSet<String>,
    pub baseline: BTreeSet<String>,
}

impl EvalRecord {
    pub fn correct(&self) -> BTreeSet<String> {
        self.generated.intersection(&self.baseline).cloned().collect()
    }
}

pub fn compute_prf(record: &EvalRecord) -> Prf {
    let correct = record.generated.intersection(&record.baseline).count() as u64;
    compute_prf_counts(correct, record.generated.len() as u64, record.baseline.len() as u64)
}

/// Render an optional metric with three decimals, `n/a` when undefined.
pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

/// Digest of one property-level unit.
pub fn unit_digest(property: &str, signals: &[String], kind: MappingKind, codec_hash: &str) -> String {
    let mut set: Vec<&str> = signals.iter().map(String::as_str).collect();
    set.sort_unstable();
    set.dedup();
    let mut h = Sha256::new();
    h.update(format!("{}|{kind}|{codec_hash}", set.join(",")).as_bytes());
    format!("{property}:{}", &crate::provider::to_hex(&h.finalize())[..16])
}

/// Behavioural fingerprint of `codec` over the raw domain of its signal.
pub fn codec_hash(codec: &SignalCodec, def: &SignalDef, catalog: &SignalCatalog) -> String {
    semantic_hash(
        &semantic_frames(def, catalog),
        |f| decode(&codec.expr, f),
        |v| encode(&codec.expr, v, Frame::ZERO),
    )
}

/// The catalog signal whose codec serves an aligned signal set: the object
/// signal composed of exactly those signals, or the single signal.
pub fn serving_signal<'a>(catalog: &'a SignalCatalog, signals: &[String], kind: MappingKind) -> Option<&'a SignalDef> {
    if kind == MappingKind::Composed {
        let want: BTreeSet<&str> = signals.iter().map(String::as_str).collect();
        catalog.iter().find(|d| {
            d.kind == SignalKind::Object && d.components.iter().map(|c| c.signal.as_str()).collect::<BTreeSet<_>>() == want
        })
    } else {
        signals.first().and_then(|s| catalog.get(s))
    }
}

/// Evaluation inputs, described by a `corpus.yaml` in the corpus directory.
#[derive(Debug, Clone)]
pub struct EvalCorpus {
    pub name: String,
    pub catalog: SignalCatalog,
    pub api: ApiSpec,
    pub truth: GroundTruth,
    pub faults: Option<FaultPlan>,
    pub strategy: Strategy,
    pub params: AlignParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusManifest {
    name: String,
    catalog: PathBuf,
    api: PathBuf,
    ground_truth: PathBuf,
    #[serde(default)]
    fault_plan: Option<PathBuf>,
    #[serde(default = "default_strategy")]
    strategy: Strategy,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    k: Option<usize>,
}

fn default_strategy() -> Strategy {
    Strategy::RewrittenDescription
}

impl EvalCorpus {
    pub fn load(dir: &Path) -> Result<EvalCorpus, crate::Error> {
        let path = dir.join("corpus.yaml");
        let text = std::fs::read_to_string(&path).map_err(|e| crate::Error::io(&path, e))?;
        let m: CorpusManifest =
            serde_yaml::from_str(&text).map_err(|e| crate::Error::format(&path, e.to_string()))?;
        let defaults = AlignParams::default();
        Ok(EvalCorpus {
            name: m.name,
            catalog: SignalCatalog::load(&dir.join(&m.catalog))?,
            api: ApiSpec::load(&dir.join(&m.api))?,
            truth: GroundTruth::load(&dir.join(&m.ground_truth))?,
            faults: match &m.fault_plan {
                Some(p) => Some(FaultPlan::load(&dir.join(p))?),
                None => None,
            },
            strategy: m.strategy,
            params: AlignParams {
                theta: m.theta.unwrap_or(defaults.theta),
                epsilon: m.epsilon.unwrap_or(defaults.epsilon),
                k: m.k.unwrap_or(defaults.k),
            },
        })
    }

    /// Baseline unit digests, keyed by property, for properties in the API.
    pub fn baseline(&self) -> Result<BTreeMap<String, String>, EvalError> {
        let props = self.api.properties();
        let mut out = BTreeMap::new();
        for (name, t) in &self.truth.properties {
            if !props.contains_key(name) {
                continue;
            }
            let def = serving_signal(&self.catalog, &t.signals, t.mapping_kind)
                .ok_or_else(|| EvalError::Fixture(format!("ground truth for `{name}` names no catalog codec")))?;
            let hash = reference_hash(def, &self.catalog);
            out.insert(name.clone(), unit_digest(name, &t.signals, t.mapping_kind, &hash));
        }
        Ok(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("stage failed: {0}")]
    Stage(String),
}

/// Which techniques are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub boilerplate_templates: bool,
    pub code_composition: bool,
    pub automated_debugging: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Templates,
    Composition,
    Debugging,
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "templates" => Ok(Ablation::Templates),
            "composition" => Ok(Ablation::Composition),
            "debugging" => Ok(Ablation::Debugging),
            _ => Err(format!("unknown ablation `{s}` (expected templates, composition, debugging)")),
        }
    }
}

impl AblationConfig {
    pub fn full() -> Self {
        Self {
            boilerplate_templates: true,
            code_composition: true,
            automated_debugging: true,
        }
    }

    pub fn without(mut self, a: Ablation) -> Self {
        match a {
            Ablation::Templates => self.boilerplate_templates = false,
            Ablation::Composition => self.code_composition = false,
            Ablation::Debugging => self.automated_debugging = false,
        }
        self
    }

    pub fn max_debug_rounds(&self) -> u32 {
        if self.automated_debugging {
            crate::codec::DEFAULT_MAX_DEBUG_ROUNDS
        } else {
            0
        }
    }

    pub fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            templates: self.boilerplate_templates,
            composition: self.code_composition,
        }
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut off = Vec::new();
        if !self.boilerplate_templates {
            off.push("templates");
        }
        if !self.code_composition {
            off.push("composition");
        }
        if !self.automated_debugging {
            off.push("debugging");
        }
        if off.is_empty() {
            f.write_str("full")
        } else {
            write!(f, "without {}", off.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationResult {
    pub config: AblationConfig,
    pub label: String,
    pub overall: Prf,
    pub by_domain: BTreeMap<String, Prf>,
    pub record: EvalRecord,
    pub codecs_passed: usize,
    pub codecs_total: usize,
    pub flagged: Vec<String>,
    pub endpoints_generated: usize,
    pub skipped_endpoints: BTreeMap<String, String>,
    pub meter: UsageMeter,
}

/// Wrap `backend` with the corpus fault plan, if any.
pub fn corpus_provider(corpus: &EvalCorpus, backend: Arc<dyn Backend>) -> StructuredProvider<Box<dyn Backend>> {
    let b: Box<dyn Backend> = match &corpus.faults {
        Some(plan) => Box::new(FaultInjectingBackend::from_plan(backend, plan.clone())),
        None => Box::new(backend),
    };
    StructuredProvider::new(b)
}

/// Run the whole pipeline on `corpus` under `config` and score it.
pub fn run_ablation(
    config: &AblationConfig,
    corpus: &EvalCorpus,
    backend: Arc<dyn Backend>,
    jobs: usize,
) -> Result<AblationResult, EvalError> {
    let provider = corpus_provider(corpus, backend);
    let stage = |what: &str, e: &dyn fmt::Display| EvalError::Stage(format!("{what}: {e}"));

    let reports = synthesize_all(&corpus.catalog, &provider, config.max_debug_rounds(), jobs)
        .map_err(|e| stage("codec synthesis", &e))?;
    let codecs: BTreeMap<String, SignalCodec> = reports
        .iter()
        .filter_map(|r| r.codec.clone().map(|c| (r.signal.clone(), c)))
        .collect();

    let index = build_index(&corpus.catalog, &[corpus.strategy], &provider).map_err(|e| stage("index", &e))?;
    let properties: Vec<_> = corpus.api.properties().into_values().collect();
    let outcomes = align_all(&properties, &corpus.catalog, &index, corpus.strategy, &provider, &corpus.params)
        .map_err(|e| stage("alignment", &e))?;
    let alignments: BTreeMap<String, PropertyAlignment> = outcomes
        .iter()
        .map(|o| (o.alignment.property.clone(), o.alignment.clone()))
        .collect();
    let flagged = outcomes
        .iter()
        .filter(|o| !o.alignment.status.is_usable())
        .map(|o| o.alignment.property.clone())
        .collect();

    let batch = generate_endpoints(&corpus.api, &alignments, &codecs, &corpus.catalog, &provider, &config.assembly())
        .map_err(|e| stage("endpoint assembly", &e))?;

    let mut generated: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for g in &batch.generated {
        for b in &g.bindings {
            let Some(def) = corpus.catalog.get(&b.codec.signal) else { continue };
            let hash = codec_hash(&b.codec, def, &corpus.catalog);
            generated
                .entry(b.property.clone())
                .or_default()
                .insert(unit_digest(&b.property, &b.signals, b.mapping_kind, &hash));
        }
    }
    let baseline = corpus.baseline()?;
    let domains = corpus.api.property_domains();
    let record = EvalRecord {
        generated: generated.values().flatten().cloned().collect(),
        baseline: baseline.values().cloned().collect(),
    };
    let mut by_domain = BTreeMap::new();
    let domain_names: BTreeSet<&String> = domains.values().collect();
    for d in domain_names {
        let in_domain = |p: &String| domains.get(p) == Some(d);
        let r = EvalRecord {
            generated: generated
                .iter()
                .filter(|(p, _)| in_domain(p))
                .flat_map(|(_, s)| s.iter().cloned())
                .collect(),
            baseline: baseline.iter().filter(|(p, _)| in_domain(p)).map(|(_, s)| s.clone()).collect(),
        };
        by_domain.insert(d.clone(), compute_prf(&r));
    }
    Ok(AblationResult {
        config: *config,
        label: config.to_string(),
        overall: compute_prf(&record),
        by_domain,
        codecs_passed: codecs.len(),
        codecs_total: reports.len(),
        flagged,
        endpoints_generated: batch.generated.len(),
        skipped_endpoints: batch.skipped,
        meter: provider.meter_snapshot(),
        record,
    })
}

/// Alignment-only F1 per embedding strategy.
pub fn compare_strategies(
    corpus: &EvalCorpus,
    strategies: &[Strategy],
    provider: &dyn CompletionProvider,
) -> Result<BTreeMap<Strategy, Prf>, EvalError> {
    let index = build_index(&corpus.catalog, strategies, provider).map_err(|e| EvalError::Stage(e.to_string()))?;
    let properties: Vec<_> = corpus.api.properties().into_values().collect();
    let mut out = BTreeMap::new();
    for &s in strategies {
        let outcomes = align_all(&properties, &corpus.catalog, &index, s, provider, &corpus.params)
            .map_err(|e| EvalError::Stage(e.to_string()))?;
        let predicted: Vec<PropertyAlignment> = outcomes.into_iter().map(|o| o.alignment).collect();
        out.insert(s, evaluate_matching(&predicted, &corpus.truth));
    }
    Ok(out)
}

pub const REPORT_FOOTER: &str = "Correct units agree with the baseline on signal set, mapping kind and codec \
behaviour over the full raw domain; flagged alignments count as not generated. Results compare \
configurations on fixture corpora and are not absolute accuracy figures.";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub config: String,
    pub domain: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub correct: u64,
    pub generated: u64,
    pub baseline: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigUsage {
    pub config: String,
    pub calls: BTreeMap<String, u64>,
    pub failures: BTreeMap<String, u64>,
    pub total_calls: u64,
    pub calls_per_endpoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub corpus: String,
    pub rows: Vec<ReportRow>,
    pub usage: Vec<ConfigUsage>,
    pub footer: String,
}

fn row(config: &str, domain: &str, p: &Prf) -> ReportRow {
    ReportRow {
        config: config.to_string(),
        domain: domain.to_string(),
        precision: p.precision,
        recall: p.recall,
        f1: p.f1,
        correct: p.counts.correct,
        generated: p.counts.generated,
        baseline: p.counts.baseline,
    }
}

/// Build the report: one row per domain plus a total row per config.
pub fn emit_report(corpus: &str, results: &[AblationResult]) -> EvalReport {
    let mut rows = Vec::new();
    let mut usage = Vec::new();
    for r in results {
        if r.by_domain.len() > 1 {
            for (d, p) in &r.by_domain {
                rows.push(row(&r.label, d, p));
            }
        }
        rows.push(row(&r.label, "total", &r.overall));
        let counts = r.meter.counts();
        usage.push(ConfigUsage {
            config: r.label.clone(),
            calls: counts.iter().map(|(t, (c, _))| (t.to_string(), *c)).collect(),
            failures: counts.iter().map(|(t, (_, f))| (t.to_string(), *f)).collect(),
            total_calls: r.meter.total_calls(),
            calls_per_endpoint: (r.endpoints_generated > 0)
                .then(|| r.meter.total_calls() as f64 / r.endpoints_generated as f64),
        });
    }
    EvalReport {
        corpus: corpus.to_string(),
        rows,
        usage,
        footer: REPORT_FOOTER.to_string(),
    }
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = format!("corpus: {}\n", self.corpus);
        out.push_str(&format!(
            "{:<32} {:<14} {:>9} {:>9} {:>9} {:>14}\n",
            "config", "domain", "precision", "recall", "f1", "C/G/B"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<32} {:<14} {:>9} {:>9} {:>9} {:>14}\n",
                r.config,
                r.domain,
                fmt_metric(r.precision),
                fmt_metric(r.recall),
                fmt_metric(r.f1),
                format!("{}/{}/{}", r.correct, r.generated, r.baseline)
            ));
        }
        out.push_str("\nprovider calls\n");
        for u in &self.usage {
            let per = u.calls_per_endpoint.map_or("n/a".into(), |x| format!("{x:.1}"));
            out.push_str(&format!("{:<32} total {:>6}  per endpoint {:>6}\n", u.config, u.total_calls, per));
        }
        out.push('\n');
        out.push_str(&self.footer);
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undefined_metrics_are_none() {
        let p = compute_prf_counts(0, 0, 0);
        assert_eq!((p.precision, p.recall, p.f1), (None, None, None));
        let p = compute_prf_counts(0, 0, 4);
        assert_eq!(p.precision, None);
        assert_eq!(p.recall, Some(0.0));
        assert_eq!(p.f1, Some(0.0));
    }

    #[test]
    fn digest_sets() {
        let r = EvalRecord {
            generated: ["a", "b", "x"].map(String::from).into(),
            baseline: ["a", "b", "c", "d"].map(String::from).into(),
        };
        let p = compute_prf(&r);
        assert_eq!(p.counts, PrfCounts { correct: 2, generated: 3, baseline: 4 });
        assert_eq!(fmt_metric(p.precision), "0.667");
        assert_eq!(fmt_metric(p.recall), "0.500");
        assert_eq!(fmt_metric(p.f1), "0.571");
        assert_eq!(r.correct().len(), 2);
    }

    #[test]
    fn perfect_match() {
        let s: BTreeSet<String> = ["a", "b"].map(String::from).into();
        let p = compute_prf(&EvalRecord { generated: s.clone(), baseline: s });
        assert_eq!((p.precision, p.recall, p.f1), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn unit_digest_ignores_signal_order() {
        let a = unit_digest("p", &["B".into(), "A".into()], MappingKind::Composed, "h");
        let b = unit_digest("p", &["A".into(), "B".into()], MappingKind::Composed, "h");
        assert_eq!(a, b);
        assert_ne!(a, unit_digest("p", &["A".into(), "B".into()], MappingKind::Direct, "h"));
    }

    #[test]
    fn config_labels() {
        assert_eq!(AblationConfig::full().to_string(), "full");
        assert_eq!(AblationConfig::full().without(Ablation::Debugging).to_string(), "without debugging");
        assert_eq!(AblationConfig::full().without(Ablation::Debugging).max_debug_rounds(), 0);
    }
}
