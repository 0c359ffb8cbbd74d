//! `run` drives the pipeline in-process; `serve` exposes a run over HTTP.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use signalforge_core::alignment::AlignParams;
use signalforge_core::eval::{Ablation, AblationConfig};
use signalforge_core::index::Strategy;
use signalforge_core::pipeline::{new_run_id, start_run, PipelineRun, RunConfig, RunMode, Stage, MANIFEST};
use signalforge_service::{router, AppState};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::args::{RunArgs, RunLocation, ServeArgs};
use crate::compute::{default_jobs, provider};
use crate::exit::{CmdResult, Failure, OK, SCHEMA};

/// Run config file. Every key is optional; command-line flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    mode: Option<RunMode>,
    strategy: Option<Strategy>,
    theta: Option<f64>,
    epsilon: Option<f64>,
    k: Option<usize>,
    jobs: Option<usize>,
    provider: Option<String>,
    fault_plan: Option<PathBuf>,
    check_doc: Option<PathBuf>,
    allow_warnings: Option<bool>,
    #[serde(default)]
    without: Vec<Ablation>,
}

fn load_run_file(path: &Path) -> Result<RunFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new(SCHEMA, format!("{}: {e}", path.display())))?;
    let mut file: RunFile =
        serde_yaml::from_str(&text).map_err(|e| Failure::new(SCHEMA, format!("{}: {e}", path.display())))?;
    // Paths in the file are relative to the file.
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut file.fault_plan, &mut file.check_doc].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(file)
}

fn print_run(run: &PipelineRun) {
    println!("run {}", run.run_id);
    for s in Stage::ALL {
        let rec = run.stage(s);
        println!("  {:<10} {}", s.as_str(), rec.status.as_str());
        for d in &rec.diagnostics {
            println!("    {d}");
        }
    }
    for w in &run.warnings {
        println!("  warning: {w}");
    }
    for (p, why) in &run.excluded {
        println!("  excluded {p}: {why}");
    }
    if run.is_blocked() {
        println!("  blocked on review: {}", run.flagged.join(", "));
    }
}

pub fn run(a: RunArgs) -> CmdResult {
    let file = match &a.config {
        Some(p) => load_run_file(p)?,
        None => RunFile::default(),
    };
    let d = AlignParams::default();
    let mut techniques = AblationConfig::full();
    for x in file.without.iter().chain(&a.without) {
        techniques = techniques.without(*x);
    }
    let provider_spec = a.provider.or(file.provider).unwrap_or_else(|| "rule".into());
    let fault_plan = a.fault_plan.or(file.fault_plan);
    let config = RunConfig {
        mode: a.mode.or(file.mode).unwrap_or(RunMode::Auto),
        strategy: a.strategy.or(file.strategy).unwrap_or(Strategy::RewrittenDescription),
        params: AlignParams {
            theta: a.theta.or(file.theta).unwrap_or(d.theta),
            epsilon: a.epsilon.or(file.epsilon).unwrap_or(d.epsilon),
            k: a.k.or(file.k).unwrap_or(d.k),
        },
        techniques,
        jobs: default_jobs(a.jobs.or(file.jobs)),
        provider: provider_spec.clone(),
        check_document: a.check_doc.or(file.check_doc),
        allow_warnings: a.allow_warnings || file.allow_warnings.unwrap_or(false),
    };
    let provider = provider(&provider_spec, fault_plan.as_deref())?;
    let run_id = a.run_id.unwrap_or_else(new_run_id);
    let run = start_run(&a.runs_dir, &run_id, &a.catalog, &a.api, config, &provider)?;
    print_run(&run);
    println!("  dir {}", a.runs_dir.join(&run_id).display());
    Ok(OK)
}

pub fn run_dir(loc: &RunLocation) -> Result<PathBuf, Failure> {
    let dir = match (&loc.run_dir, &loc.run) {
        (Some(d), _) => d.clone(),
        (None, Some(id)) => loc.runs_dir.join(id),
        (None, None) => return Err(Failure::usage("give --run <id> or --run-dir <path>")),
    };
    if !dir.join(MANIFEST).exists() {
        return Err(Failure::usage(format!("{} is not a run directory", dir.display())));
    }
    Ok(dir)
}

/// Provider for a service: the override if given, else the one recorded in
/// the run manifest.
fn service_state(dir: &Path, spec: Option<&str>, fault_plan: Option<&Path>) -> Result<Arc<AppState>, Failure> {
    let recorded = PipelineRun::load(dir)?.config.provider;
    let provider = provider(spec.unwrap_or(&recorded), fault_plan)?;
    let state = AppState::open(dir, Arc::new(provider)).map_err(Failure::stage)?;
    Ok(Arc::new(state))
}

pub fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Failure::stage)
}

pub fn serve(a: ServeArgs) -> CmdResult {
    let dir = run_dir(&a.location)?;
    let state = service_state(&dir, a.provider.as_deref(), a.fault_plan.as_deref())?;
    let app = router(state.clone(), a.ui_dir.as_deref());
    runtime()?.block_on(async move {
        let listener = TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| Failure::stage(format!("bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(Failure::stage)?;
        println!("serving run {} on http://{addr}", state.run_id());
        use std::io::Write;
        let _ = std::io::stdout().flush();
        signalforge_service::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(Failure::stage)?;
        Ok(OK)
    })
}

/// A service bound to an ephemeral local port for the life of one command.
pub struct Embedded {
    pub addr: SocketAddr,
    pub run_id: String,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Embedded {
    pub async fn start(loc: &RunLocation, spec: Option<&str>) -> Result<Embedded, Failure> {
        let dir = run_dir(loc)?;
        let spec = spec.map(str::to_string);
        // Provider construction may create a blocking HTTP client.
        let state = tokio::task::spawn_blocking(move || service_state(&dir, spec.as_deref(), None))
            .await
            .map_err(Failure::stage)??;
        let listener = TcpListener::bind("127.0.0.1:0").await.map_err(Failure::stage)?;
        let addr = listener.local_addr().map_err(Failure::stage)?;
        let (tx, rx) = oneshot::channel();
        let run_id = state.run_id().to_string();
        let task = tokio::spawn(signalforge_service::serve(listener, router(state, None), async {
            let _ = rx.await;
        }));
        Ok(Embedded {
            addr,
            run_id,
            stop: Some(tx),
            task,
        })
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}
