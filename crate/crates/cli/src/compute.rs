//! Subcommands that run a single stage or tool in-process.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use serde::Serialize;
use signalforge_core::alignment::{align_all, AlignParams, AlignmentOutcome, PropertyAlignment};
use signalforge_core::catalog::{parse_catalog, SignalCatalog};
use signalforge_core::codec::{render_source, synthesize_all, CodecRecord, SignalCodec, SynthesisReport};
use signalforge_core::endpoint::{self, write_endpoints, ApiSpec, AssemblyOptions};
use signalforge_core::eval::{compare_strategies, emit_report, run_ablation, AblationConfig, EvalCorpus, EvalError};
use signalforge_core::index::{build_index, Strategy, SignalIndex};
use signalforge_core::provider::{
    Backend, FaultInjectingBackend, FaultPlan, ProviderSpec, StructuredProvider,
};
use signalforge_core::validation::{check_document, governing_domains, load_markers, score_detection};
use signalforge_core::workflow::{optimize, TransformationScript, WorkflowGraph};

use crate::args::*;
use crate::exit::{CmdResult, Failure, FINDINGS, OK, SCHEMA};

pub type Provider = StructuredProvider<Box<dyn Backend>>;

/// Build the backend named by `spec`, optionally wrapped by a fault plan.
pub fn backend(spec: &str, fault_plan: Option<&Path>) -> Result<Box<dyn Backend>, Failure> {
    let spec: ProviderSpec = spec.parse().map_err(Failure::usage)?;
    let inner = spec.build_backend()?;
    Ok(match fault_plan {
        Some(path) => Box::new(FaultInjectingBackend::from_plan(inner, FaultPlan::load(path)?)),
        None => inner,
    })
}

pub fn provider(spec: &str, fault_plan: Option<&Path>) -> Result<Provider, Failure> {
    Ok(StructuredProvider::new(backend(spec, fault_plan)?))
}

fn provider_from(args: &ProviderArgs) -> Result<Provider, Failure> {
    provider(&args.provider, args.fault_plan.as_deref())
}

pub fn default_jobs(jobs: Option<usize>) -> usize {
    jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(SCHEMA, format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_fail(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::stage(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::stage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    write(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_fail(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn catalog(cmd: CatalogCmd) -> CmdResult {
    let CatalogCmd::Validate { file } = cmd;
    let text = read(&file)?;
    let catalog = parse_catalog(&text, &file.display().to_string())?;
    let diags = catalog.check_invariants();
    for d in &diags {
        println!("{d}");
    }
    println!("{}: {} signals, {} warning(s)", file.display(), catalog.len(), diags.len());
    Ok(OK)
}

pub fn index(cmd: IndexCmd) -> CmdResult {
    let IndexCmd::Build(a) = cmd;
    let catalog = SignalCatalog::load(&a.catalog)?;
    let provider = provider_from(&a.provider)?;
    let strategies = if a.strategy.is_empty() { Strategy::ALL.to_vec() } else { a.strategy };
    let index = build_index(&catalog, &strategies, &provider).map_err(Failure::stage)?;
    if let Some(parent) = a.out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_fail(parent, e))?;
    }
    index.save(&a.out)?;
    println!("{} entries -> {}", index.len(), a.out.display());
    Ok(OK)
}

fn write_codecs(dir: &Path, reports: &[SynthesisReport]) -> Result<(), Failure> {
    for r in reports {
        if let Some(record) = r.record() {
            write_json(&dir.join(format!("{}.json", r.signal)), &record)?;
            write(&dir.join(format!("{}.py", r.signal)), &render_source(&record.codec()))?;
        }
    }
    write_json(&dir.join("reports.json"), &reports)
}

pub fn synthesize_codecs(a: SynthesizeArgs) -> CmdResult {
    let catalog = SignalCatalog::load(&a.catalog)?;
    let provider = provider_from(&a.provider)?;
    let reports = synthesize_all(&catalog, &provider, a.max_rounds, default_jobs(a.jobs)).map_err(Failure::stage)?;
    write_codecs(&a.out, &reports)?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "pass" } else { "fail" };
        println!("{status} {} attempts={}", r.signal, r.attempts);
        if !r.passed() {
            failed.push(format!("{}: {} failing vector(s)", r.signal, r.failures.len()));
        }
    }
    println!("{}/{} codecs validated -> {}", reports.len() - failed.len(), reports.len(), a.out.display());
    if failed.is_empty() {
        Ok(OK)
    } else {
        Err(Failure {
            code: crate::exit::STAGE,
            lines: failed,
        })
    }
}

/// Alignment files hold a single outcome, a list of outcomes, or bare
/// alignments.
#[derive(Deserialize)]
#[serde(untagged)]
enum AlignmentFile {
    Outcomes(Vec<AlignmentOutcome>),
    Outcome(Box<AlignmentOutcome>),
    Alignments(Vec<PropertyAlignment>),
    Alignment(PropertyAlignment),
}

fn load_alignments(dir: &Path) -> Result<BTreeMap<String, PropertyAlignment>, Failure> {
    let mut out = BTreeMap::new();
    for path in json_files(dir)? {
        let file: AlignmentFile = serde_json::from_str(&read(&path)?).map_err(|e| io_fail(&path, e))?;
        let list = match file {
            AlignmentFile::Outcomes(v) => v.into_iter().map(|o| o.alignment).collect(),
            AlignmentFile::Outcome(o) => vec![o.alignment],
            AlignmentFile::Alignments(v) => v,
            AlignmentFile::Alignment(a) => vec![a],
        };
        out.extend(list.into_iter().map(|a| (a.property.clone(), a)));
    }
    Ok(out)
}

pub fn match_properties(a: MatchArgs) -> CmdResult {
    let api = ApiSpec::load(&a.api)?;
    let catalog = SignalCatalog::load(&a.catalog)?;
    let provider = provider_from(&a.provider)?;
    let index = match &a.index {
        Some(p) => SignalIndex::load(p)?,
        None => build_index(&catalog, &[a.strategy], &provider).map_err(Failure::stage)?,
    };
    let d = AlignParams::default();
    let params = AlignParams {
        theta: a.theta.unwrap_or(d.theta),
        epsilon: a.epsilon.unwrap_or(d.epsilon),
        k: a.k.unwrap_or(d.k),
    };
    let properties: Vec<_> = api.properties().into_values().collect();
    let outcomes = align_all(&properties, &catalog, &index, a.strategy, &provider, &params).map_err(Failure::stage)?;
    for o in &outcomes {
        let al = &o.alignment;
        println!(
            "{:<24} {:<13} {:<11} {:.3} {}",
            al.property,
            al.status,
            al.mapping_kind,
            al.confidence,
            al.signals.join("+")
        );
        for r in &o.flag_reasons {
            println!("  flagged: {r}");
        }
    }
    let stem = a.api.file_stem().map_or("api".into(), |s| s.to_string_lossy().into_owned());
    let path = a.out.join(format!("{stem}.json"));
    write_json(&path, &outcomes)?;
    println!("{} alignments -> {}", outcomes.len(), path.display());
    Ok(OK)
}

fn load_codecs(dir: &Path) -> Result<BTreeMap<String, SignalCodec>, Failure> {
    let mut out = BTreeMap::new();
    for path in json_files(dir)? {
        if path.file_name().is_some_and(|n| n == "reports.json") {
            continue;
        }
        let r: CodecRecord = serde_json::from_str(&read(&path)?).map_err(|e| io_fail(&path, e))?;
        out.insert(r.signal.clone(), r.codec());
    }
    Ok(out)
}

pub fn generate_endpoints(a: GenerateArgs) -> CmdResult {
    let api = ApiSpec::load(&a.api)?;
    let catalog = SignalCatalog::load(&a.catalog)?;
    let provider = provider_from(&a.provider)?;
    let alignments = load_alignments(&a.alignments)?;
    let codecs = match &a.codecs {
        Some(dir) => load_codecs(dir)?,
        None => synthesize_all(&catalog, &provider, signalforge_core::codec::DEFAULT_MAX_DEBUG_ROUNDS, default_jobs(None))
            .map_err(Failure::stage)?
            .into_iter()
            .filter_map(|r| r.codec)
            .map(|c| (c.signal.clone(), c))
            .collect(),
    };
    let options = AssemblyOptions {
        templates: !a.no_templates,
        composition: !a.no_composition,
    };
    let batch = endpoint::generate_endpoints(&api, &alignments, &codecs, &catalog, &provider, &options).map_err(Failure::stage)?;
    write_endpoints(&a.out, &batch)?;
    write_json(&a.out.join("skipped.json"), &batch.skipped)?;
    for g in &batch.generated {
        println!("generated {}", g.key);
    }
    for (k, why) in &batch.skipped {
        println!("skipped {k}: {why}");
    }
    Ok(OK)
}

fn against(paths: &[PathBuf]) -> Result<(ApiSpec, SignalCatalog), Failure> {
    let [api, catalog] = paths else {
        return Err(Failure::usage("--against takes <API> <CATALOG>"));
    };
    Ok((ApiSpec::load(api)?, SignalCatalog::load(catalog)?))
}

pub fn check_spec(a: CheckSpecArgs) -> CmdResult {
    let (api, catalog) = against(&a.against)?;
    let text = read(&a.doc)?;
    let diags = check_document(&text, &api, &catalog).map_err(|m| io_fail(&a.doc, m))?;
    for d in &diags {
        println!("{d}");
    }
    if let Some(markers) = &a.markers {
        let markers = load_markers(markers)?;
        for s in score_detection(&diags, &markers) {
            println!(
                "{}: precision {} recall {} f1 {}",
                s.error_type,
                signalforge_core::eval::fmt_metric(s.prf.precision),
                signalforge_core::eval::fmt_metric(s.prf.recall),
                signalforge_core::eval::fmt_metric(s.prf.f1),
            );
        }
    }
    Ok(if diags.is_empty() { OK } else { FINDINGS })
}

pub fn inject_errors(a: InjectArgs) -> CmdResult {
    let (api, catalog) = against(&a.against)?;
    let text = read(&a.doc)?;
    let doc: serde_yaml::Value = serde_yaml::from_str(&text).map_err(|e| io_fail(&a.doc, e))?;
    let domains = governing_domains(&api, &catalog);
    let plan = signalforge_core::validation::InjectionPlan {
        out_of_range: a.out_of_range,
        invalid_enum: a.invalid_enum,
        seed: a.seed,
    };
    let (mutated, markers) = signalforge_core::validation::inject_errors(&doc, &domains, &plan).map_err(Failure::usage)?;
    write(&a.out, &serde_yaml::to_string(&mutated).expect("yaml serializes"))?;
    write_json(&a.markers, &markers)?;
    println!("{} fault(s) -> {}, markers -> {}", markers.len(), a.out.display(), a.markers.display());
    Ok(OK)
}

fn eval_fail(e: EvalError) -> Failure {
    match e {
        EvalError::Fixture(m) => Failure::new(SCHEMA, m),
        EvalError::Stage(m) => Failure::stage(m),
    }
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let corpus = EvalCorpus::load(&a.corpus)?;
    let spec: ProviderSpec = a.provider.parse().map_err(Failure::usage)?;
    let backend: Arc<dyn Backend> = Arc::from(spec.build_backend()?);
    let jobs = default_jobs(a.jobs);
    let mut configs = vec![AblationConfig::full()];
    for x in &a.ablate {
        let c = AblationConfig::full().without(*x);
        if !configs.contains(&c) {
            configs.push(c);
        }
    }
    let mut results = Vec::new();
    for c in &configs {
        results.push(run_ablation(c, &corpus, backend.clone(), jobs).map_err(eval_fail)?);
    }
    let report = emit_report(&corpus.name, &results);
    print!("{}", report.render_table());
    let mut doc = serde_json::to_value(&report).expect("report serializes");
    if a.compare_strategies {
        let provider = StructuredProvider::new(backend.clone());
        let by = compare_strategies(&corpus, &Strategy::ALL, &provider).map_err(eval_fail)?;
        println!("strategy comparison (alignment F1):");
        for (s, prf) in &by {
            println!("  {:<24} {}", s.as_str(), signalforge_core::eval::fmt_metric(prf.f1));
        }
        doc["strategies"] = serde_json::to_value(
            by.iter().map(|(s, p)| (s.as_str().to_string(), p)).collect::<BTreeMap<_, _>>(),
        )
        .expect("prf serializes");
    }
    write_json(&a.out, &doc)?;
    println!("report -> {}", a.out.display());
    Ok(OK)
}

pub fn graph(cmd: GraphCmd) -> CmdResult {
    let GraphCmd::Optimize(a) = cmd;
    let graph = WorkflowGraph::load(&a.graph)?;
    let script = TransformationScript::load(&a.script)?;
    let report = optimize(&graph, &script).map_err(|e| Failure::new(crate::exit::INVARIANT, e.to_string()))?;
    for it in &report.iterations {
        println!("{:<28} {}  removed {} edge(s)", it.name, it.impact, it.removed.len());
        for t in &it.removed {
            println!("  - {t}");
        }
    }
    println!("{:<28} {}  removed {} edge(s)", "net", report.net, report.removed_total);
    write(&a.out, &report.graph.to_yaml())?;
    println!("reduced graph -> {}", a.out.display());
    Ok(OK)
}
