//! The three-stage run: codec synthesis, property alignment, endpoint
//! assembly. Each run owns `runs/<id>/`:
//!
//! ```text
//! manifest.json          run metadata (id, timestamps, stage records)
//! inputs/                copies of the catalog and API spec
//! index.json             signal embeddings
//! codecs/                <signal>.json, <signal>.py, reports.json
//! alignments/            <property>.json
//! endpoints/             <key>.txt, <key>.manifest.json, skipped.json
//! report.json            stage summary
//! review/events.ndjson   review log
//! ```
//!
//! Everything except `manifest.json` and `review/` is a pure function of
//! the inputs, the configuration and the provider's answers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment::{align_all, align_property, composite_codec, AlignParams, AlignmentOutcome, AlignmentStatus, MappingKind, PropertyAlignment};
use crate::catalog::SignalCatalog;
use crate::codec::{render_source, synthesize_all, CodecRecord, SignalCodec, SynthesisReport};
use crate::endpoint::{generate_endpoints, write_endpoints, ApiSpec};
use crate::eval::AblationConfig;
use crate::index::{build_index, SignalIndex, Strategy};
use crate::provider::{CompletionProvider, TaskTag, UsageMeter};
use crate::review::{Regeneration, ReviewError, ReviewItem, ReviewStore};
use crate::validation::check_document;

pub const MANIFEST: &str = "manifest.json";
pub const CATALOG_COPY: &str = "inputs/catalog.yaml";
pub const API_COPY: &str = "inputs/api.yaml";
const ACTOR: &str = "pipeline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Auto,
    Interactive,
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(RunMode::Auto),
            "interactive" => Ok(RunMode::Interactive),
            _ => Err(format!("unknown mode `{s}` (expected auto or interactive)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Running,
    Done,
    BlockedOnReview,
    Failed,
}

impl StageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Pending => "pending",
            StageStatus::Running => "running",
            StageStatus::Done => "done",
            StageStatus::BlockedOnReview => "blocked_on_review",
            StageStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Codec,
    Alignment,
    Endpoint,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Codec, Stage::Alignment, Stage::Endpoint];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Codec => "codec",
            Stage::Alignment => "alignment",
            Stage::Endpoint => "endpoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub strategy: Strategy,
    pub params: AlignParams,
    pub techniques: AblationConfig,
    pub jobs: usize,
    /// Provider description, recorded for the reviewer's benefit.
    pub provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_document: Option<PathBuf>,
    #[serde(default)]
    pub allow_warnings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::Auto,
            strategy: Strategy::RewrittenDescription,
            params: AlignParams::default(),
            techniques: AblationConfig::full(),
            jobs: 1,
            provider: "rule".into(),
            check_document: None,
            allow_warnings: false,
        }
    }
}

/// Persisted run state; lives in `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub created_at: String,
    pub updated_at: String,
    pub config: RunConfig,
    /// Input name → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Properties waiting on review.
    #[serde(default)]
    pub flagged: Vec<String>,
    /// Properties left out of endpoint assembly, with the reason.
    #[serde(default)]
    pub excluded: BTreeMap<String, String>,
    #[serde(default)]
    pub meter: UsageMeter,
}

impl PipelineRun {
    pub fn stage(&self, s: Stage) -> &StageRecord {
        self.stages.iter().find(|r| r.stage == s).expect("all stages recorded")
    }

    fn stage_mut(&mut self, s: Stage) -> &mut StageRecord {
        self.stages.iter_mut().find(|r| r.stage == s).expect("all stages recorded")
    }

    pub fn is_blocked(&self) -> bool {
        self.stages.iter().any(|r| r.status == StageStatus::BlockedOnReview)
    }

    pub fn is_complete(&self) -> bool {
        self.stages.iter().all(|r| r.status == StageStatus::Done)
    }

    pub fn load(run_dir: &Path) -> Result<PipelineRun, PipelineError> {
        let path = run_dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Input(crate::Error::io(&path, e)))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Input(crate::Error::format(&path, e.to_string())))
    }

    fn save(&mut self, run_dir: &Path) -> Result<(), PipelineError> {
        self.updated_at = now();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&run_dir.join(MANIFEST), &(text + "\n"))
    }
}

/// Stage summary written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub codecs_total: usize,
    pub codecs_passed: usize,
    pub codecs_failed: Vec<String>,
    pub alignments: BTreeMap<String, AlignmentStatus>,
    pub endpoints_generated: Vec<String>,
    pub endpoints_skipped: BTreeMap<String, String>,
    /// Task → (calls, failures).
    pub usage: BTreeMap<TaskTag, (u64, u64)>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Input(#[from] crate::Error),
    #[error("preflight found {} issue(s):\n{}", .0.len(), .0.join("\n"))]
    Preflight(Vec<String>),
    #[error("{} stage failed: {}", .stage.as_str(), .diagnostics.join("; "))]
    StageFailure { stage: Stage, diagnostics: Vec<String> },
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("{0}")]
    State(String),
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, text: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| crate::Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| crate::Error::io(path, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| crate::Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, text + "\n").map_err(|e| crate::Error::io(path, e).into())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| crate::Error::format(path, e.to_string()).into())
}

pub fn new_run_id() -> String {
    format!(
        "{}-{:06x}",
        chrono::Utc::now().format("%Y%m%dT%H%M%S"),
        rand::random::<u32>() & 0xff_ffff
    )
}

/// Validate the inputs without running anything. Returns warnings that
/// `allow_warnings` lets through.
pub fn preflight(catalog_path: &Path, api_path: &Path, config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let catalog = SignalCatalog::load(catalog_path)?;
    let api = ApiSpec::load(api_path)?;
    let mut findings: Vec<String> = catalog.check_invariants().iter().map(|d| d.to_string()).collect();
    if let Some(doc) = &config.check_document {
        let text = std::fs::read_to_string(doc).map_err(|e| crate::Error::io(doc, e))?;
        let diags = check_document(&text, &api, &catalog).map_err(|m| crate::Error::format(doc, m))?;
        findings.extend(diags.iter().map(|d| format!("{}: {d}", doc.display())));
    }
    if !findings.is_empty() && !config.allow_warnings {
        return Err(PipelineError::Preflight(findings));
    }
    Ok(findings)
}

/// Context needed by the alignment and endpoint stages, read back from the
/// run directory.
struct RunContext {
    catalog: SignalCatalog,
    api: ApiSpec,
    index: SignalIndex,
    codecs: BTreeMap<String, SignalCodec>,
}

impl RunContext {
    fn load(run_dir: &Path) -> Result<RunContext, PipelineError> {
        let catalog = SignalCatalog::load(&run_dir.join(CATALOG_COPY))?;
        let api = ApiSpec::load(&run_dir.join(API_COPY))?;
        let index = SignalIndex::load(&run_dir.join("index.json"))?;
        let records: Vec<CodecRecord> = {
            let dir = run_dir.join("codecs");
            let mut out = Vec::new();
            if dir.exists() {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .map_err(|e| crate::Error::io(&dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "reports.json"))
                    .collect();
                paths.sort();
                for p in paths {
                    out.push(read_json(&p)?);
                }
            }
            out
        };
        let codecs = records.into_iter().map(|r| (r.signal.clone(), r.codec())).collect();
        Ok(RunContext { catalog, api, index, codecs })
    }
}

/// Source of the codec that serves `alignment`, for reviewers.
pub fn codec_preview(alignment: &PropertyAlignment, codecs: &BTreeMap<String, SignalCodec>) -> String {
    let codec = if alignment.mapping_kind == MappingKind::Composed {
        composite_codec(&alignment.signals, codecs)
    } else {
        alignment.signals.first().and_then(|s| codecs.get(s))
    };
    match codec {
        Some(c) => render_source(c),
        None => format!("# no validated codec for {}\n", alignment.signals.join(", ")),
    }
}

/// Start a run in `runs_root/<run_id>` and drive it as far as the mode
/// allows.
pub fn start_run(
    runs_root: &Path,
    run_id: &str,
    catalog_path: &Path,
    api_path: &Path,
    config: RunConfig,
    provider: &dyn CompletionProvider,
) -> Result<PipelineRun, PipelineError> {
    let warnings = preflight(catalog_path, api_path, &config)?;
    let run_dir = runs_root.join(run_id);
    if run_dir.join(MANIFEST).exists() {
        return Err(PipelineError::State(format!("run `{run_id}` already exists")));
    }
    std::fs::create_dir_all(run_dir.join("inputs")).map_err(|e| crate::Error::io(&run_dir, e))?;
    let mut inputs = BTreeMap::new();
    for (name, src, dst) in [("catalog", catalog_path, CATALOG_COPY), ("api", api_path, API_COPY)] {
        let bytes = std::fs::read(src).map_err(|e| crate::Error::io(src, e))?;
        inputs.insert(name.to_string(), sha256_hex(&bytes));
        let to = run_dir.join(dst);
        std::fs::write(&to, &bytes).map_err(|e| crate::Error::io(&to, e))?;
    }
    let created = now();
    let mut run = PipelineRun {
        run_id: run_id.to_string(),
        created_at: created.clone(),
        updated_at: created,
        config,
        inputs,
        stages: Stage::ALL
            .iter()
            .map(|&stage| StageRecord {
                stage,
                status: StageStatus::Pending,
                started_at: None,
                finished_at: None,
                artifacts: Vec::new(),
                diagnostics: Vec::new(),
            })
            .collect(),
        warnings,
        flagged: Vec::new(),
        excluded: BTreeMap::new(),
        meter: UsageMeter::default(),
    };
    run.save(&run_dir)?;

    let catalog = SignalCatalog::load(&run_dir.join(CATALOG_COPY))?;
    guarded(&mut run, &run_dir, Stage::Codec, provider, |run| codec_stage(run, &run_dir, &catalog, provider))?;
    guarded(&mut run, &run_dir, Stage::Alignment, provider, |run| alignment_stage(run, &run_dir, provider))?;
    if run.stage(Stage::Alignment).status == StageStatus::Done {
        guarded(&mut run, &run_dir, Stage::Endpoint, provider, |run| endpoint_stage(run, &run_dir, provider))?;
    }
    Ok(run)
}

/// Mark `stage` running, execute it, and record failure if it errors.
fn guarded(
    run: &mut PipelineRun,
    run_dir: &Path,
    stage: Stage,
    provider: &dyn CompletionProvider,
    body: impl FnOnce(&mut PipelineRun) -> Result<(), PipelineError>,
) -> Result<(), PipelineError> {
    if let Some(prev) = Stage::ALL.iter().take_while(|&&s| s != stage).last() {
        if run.stage(*prev).status != StageStatus::Done {
            return Err(PipelineError::State(format!(
                "{} stage cannot start before {} is done",
                stage.as_str(),
                prev.as_str()
            )));
        }
    }
    {
        let rec = run.stage_mut(stage);
        rec.status = StageStatus::Running;
        rec.started_at = Some(now());
        rec.finished_at = None;
        rec.diagnostics.clear();
    }
    run.save(run_dir)?;
    let result = body(run);
    run.meter = provider.meter_snapshot();
    let rec = run.stage_mut(stage);
    rec.finished_at = Some(now());
    match result {
        Ok(()) => {
            if rec.status == StageStatus::Running {
                rec.status = StageStatus::Done;
            }
            run.save(run_dir)
        }
        Err(e) => {
            rec.status = StageStatus::Failed;
            rec.diagnostics = match &e {
                PipelineError::StageFailure { diagnostics, .. } => diagnostics.clone(),
                other => vec![other.to_string()],
            };
            run.save(run_dir)?;
            Err(match e {
                e @ PipelineError::StageFailure { .. } => e,
                other => PipelineError::StageFailure {
                    stage,
                    diagnostics: vec![other.to_string()],
                },
            })
        }
    }
}

fn fail(stage: Stage, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::StageFailure {
        stage,
        diagnostics: vec![e.to_string()],
    }
}

fn codec_stage(
    run: &mut PipelineRun,
    run_dir: &Path,
    catalog: &SignalCatalog,
    provider: &dyn CompletionProvider,
) -> Result<(), PipelineError> {
    let t = run.config.techniques;
    let reports = synthesize_all(catalog, provider, t.max_debug_rounds(), run.config.jobs).map_err(|e| fail(Stage::Codec, e))?;
    let dir = run_dir.join("codecs");
    std::fs::create_dir_all(&dir).map_err(|e| crate::Error::io(&dir, e))?;
    for r in &reports {
        if let Some(record) = r.record() {
            write_json(&dir.join(format!("{}.json", r.signal)), &record)?;
            let py = dir.join(format!("{}.py", r.signal));
            std::fs::write(&py, render_source(&record.codec())).map_err(|e| crate::Error::io(&py, e))?;
        }
    }
    write_json(&dir.join("reports.json"), &reports)?;
    run.stage_mut(Stage::Codec).artifacts = vec!["codecs/".into()];
    Ok(())
}

fn alignment_stage(run: &mut PipelineRun, run_dir: &Path, provider: &dyn CompletionProvider) -> Result<(), PipelineError> {
    let catalog = SignalCatalog::load(&run_dir.join(CATALOG_COPY))?;
    let api = ApiSpec::load(&run_dir.join(API_COPY))?;
    let index = build_index(&catalog, &[run.config.strategy], provider).map_err(|e| fail(Stage::Alignment, e))?;
    index.save(&run_dir.join("index.json"))?;
    let properties: Vec<_> = api.properties().into_values().collect();
    let outcomes = align_all(&properties, &catalog, &index, run.config.strategy, provider, &run.config.params)
        .map_err(|e| fail(Stage::Alignment, e))?;
    for o in &outcomes {
        write_json(&run_dir.join("alignments").join(format!("{}.json", o.alignment.property)), o)?;
    }
    let flagged: Vec<&AlignmentOutcome> = outcomes.iter().filter(|o| o.alignment.status == AlignmentStatus::Flagged).collect();
    if !flagged.is_empty() {
        let ctx = RunContext::load(run_dir)?;
        let mut store = ReviewStore::open(run_dir)?;
        let fresh: Vec<(AlignmentOutcome, String)> = flagged
            .iter()
            .filter(|o| store.get(&o.alignment.property).is_err())
            .map(|o| ((*o).clone(), codec_preview(&o.alignment, &ctx.codecs)))
            .collect();
        store.flag(fresh, ACTOR)?;
    }
    run.stage_mut(Stage::Alignment).artifacts = vec!["index.json".into(), "alignments/".into()];
    settle_review(run, run_dir)
}

/// Fold the review store into the alignment stage: block, exclude, or pass.
fn settle_review(run: &mut PipelineRun, run_dir: &Path) -> Result<(), PipelineError> {
    let store = ReviewStore::open(run_dir)?;
    let pending: Vec<String> = store
        .items()
        .filter(|i| i.status() == AlignmentStatus::Flagged)
        .map(|i| i.property.clone())
        .collect();
    run.flagged = pending.clone();
    run.excluded = store
        .items()
        .filter(|i| !i.status().is_usable())
        .map(|i| (i.property.clone(), format!("alignment {}", i.status())))
        .collect();
    if run.config.mode == RunMode::Interactive && !pending.is_empty() {
        run.stage_mut(Stage::Alignment).status = StageStatus::BlockedOnReview;
    }
    Ok(())
}

fn endpoint_stage(run: &mut PipelineRun, run_dir: &Path, provider: &dyn CompletionProvider) -> Result<(), PipelineError> {
    let ctx = RunContext::load(run_dir)?;
    let mut alignments: BTreeMap<String, PropertyAlignment> = BTreeMap::new();
    let dir = run_dir.join("alignments");
    for name in ctx.api.properties().keys() {
        let path = dir.join(format!("{name}.json"));
        if path.exists() {
            let o: AlignmentOutcome = read_json(&path)?;
            alignments.insert(name.clone(), o.alignment);
        }
    }
    let store = ReviewStore::open(run_dir)?;
    alignments.extend(store.latest_alignments());

    let batch = generate_endpoints(&ctx.api, &alignments, &ctx.codecs, &ctx.catalog, provider, &run.config.techniques.assembly())
        .map_err(|e| fail(Stage::Endpoint, e))?;
    let out = run_dir.join("endpoints");
    if out.exists() {
        std::fs::remove_dir_all(&out).map_err(|e| crate::Error::io(&out, e))?;
    }
    write_endpoints(&out, &batch)?;
    write_json(&out.join("skipped.json"), &batch.skipped)?;

    let reports: Vec<SynthesisReport> = read_json(&run_dir.join("codecs/reports.json"))?;
    let report = RunReport {
        codecs_total: reports.len(),
        codecs_passed: reports.iter().filter(|r| r.passed()).count(),
        codecs_failed: reports.iter().filter(|r| !r.passed()).map(|r| r.signal.clone()).collect(),
        alignments: alignments.iter().map(|(k, v)| (k.clone(), v.status)).collect(),
        endpoints_generated: batch.generated.iter().map(|g| g.key.clone()).collect(),
        endpoints_skipped: batch.skipped.clone(),
        usage: provider.meter_snapshot().counts(),
    };
    write_json(&run_dir.join("report.json"), &report)?;
    run.stage_mut(Stage::Endpoint).artifacts = vec!["endpoints/".into(), "report.json".into()];
    Ok(())
}

/// Continue a run after review: re-enter at the alignment stage with the
/// reviewed alignments, then assemble endpoints if nothing is pending.
pub fn resume_run(run_dir: &Path, provider: &dyn CompletionProvider) -> Result<PipelineRun, PipelineError> {
    let mut run = PipelineRun::load(run_dir)?;
    match run.stage(Stage::Codec).status {
        StageStatus::Done => {}
        s => return Err(PipelineError::State(format!("codec stage is {s:?}; start a new run"))),
    }
    if run.stage(Stage::Alignment).status == StageStatus::Failed {
        return Err(PipelineError::State("alignment stage failed; start a new run".into()));
    }
    for s in [Stage::Alignment, Stage::Endpoint] {
        let rec = run.stage_mut(s);
        rec.status = StageStatus::Pending;
    }
    guarded(&mut run, run_dir, Stage::Alignment, provider, |run| settle_review(run, run_dir))?;
    if run.stage(Stage::Alignment).status == StageStatus::Done {
        guarded(&mut run, run_dir, Stage::Endpoint, provider, |run| endpoint_stage(run, run_dir, provider))?;
    }
    Ok(run)
}

/// Realign one reviewed property with the constraints collected so far.
pub fn regenerate_item(
    run_dir: &Path,
    store: &mut ReviewStore,
    id: &str,
    constraint: &str,
    actor: &str,
    provider: &dyn CompletionProvider,
) -> Result<ReviewItem, PipelineError> {
    let run = PipelineRun::load(run_dir)?;
    let ctx = RunContext::load(run_dir)?;
    let item = store.regenerate(id, constraint, actor, |item, constraints| {
        let property = ctx
            .api
            .properties()
            .remove(&item.property)
            .ok_or_else(|| format!("property `{}` is not in the API spec", item.property))?;
        let outcome = align_property(
            &property,
            &ctx.catalog,
            &ctx.index,
            run.config.strategy,
            provider,
            &run.config.params,
            constraints,
        )
        .map_err(|e| e.to_string())?;
        let codec_preview = codec_preview(&outcome.alignment, &ctx.codecs);
        Ok(Regeneration { outcome, codec_preview })
    })?;
    Ok(item)
}

/// Source text for an artifact id: a signal codec, an endpoint key, or a
/// reviewed property's codec preview.
pub fn artifact_code(run_dir: &Path, store: &ReviewStore, id: &str) -> Option<String> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return None;
    }
    for path in [run_dir.join("codecs").join(format!("{id}.py")), run_dir.join("endpoints").join(format!("{id}.txt"))] {
        if let Ok(text) = std::fs::read_to_string(path) {
            return Some(text);
        }
    }
    store.get(id).ok().map(|i| i.codec_preview.clone())
}

/// Hash every file under `dir` except run metadata, keyed by relative path.
pub fn artifact_digests(run_dir: &Path) -> Result<BTreeMap<String, String>, crate::Error> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), crate::Error> {
        for entry in std::fs::read_dir(dir).map_err(|e| crate::Error::io(dir, e))? {
            let path = entry.map_err(|e| crate::Error::io(dir, e))?.path();
            let rel = path.strip_prefix(base).expect("under base").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST || rel.starts_with("review") {
                continue;
            }
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let bytes = std::fs::read(&path).map_err(|e| crate::Error::io(&path, e))?;
                out.insert(rel, sha256_hex(&bytes));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(run_dir, run_dir, &mut out)?;
    Ok(out)
}
