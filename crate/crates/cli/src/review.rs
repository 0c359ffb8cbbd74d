//! Review and resume go through the HTTP API, against `--url` or an
//! embedded service on an ephemeral port.

use std::future::Future;

use signalforge_client::{ClientError, ReviewClient};
use signalforge_core::alignment::Decision;
use signalforge_core::pipeline::{PipelineRun, Stage};
use signalforge_core::review::ReviewItem;

use crate::args::{RemoteArgs, ReviewArgs, ReviewCmd};
use crate::exit::{CmdResult, Failure, FINDINGS, OK, STAGE};
use crate::runs::{runtime, Embedded};

fn client_fail(e: ClientError) -> Failure {
    match e.status() {
        Some(s) if s.is_client_error() => Failure::new(FINDINGS, e.to_string()),
        _ => Failure::new(STAGE, e.to_string()),
    }
}

/// Run `body` with a client and the run id it should address.
fn with_client<F, Fut>(remote: &RemoteArgs, body: F) -> CmdResult
where
    F: FnOnce(ReviewClient, String) -> Fut,
    Fut: Future<Output = Result<u8, ClientError>>,
{
    runtime()?.block_on(async {
        match &remote.url {
            Some(url) => {
                let client = ReviewClient::new(url);
                let run_id = match &remote.location.run {
                    Some(id) => id.clone(),
                    None => return Err(Failure::usage("--url needs --run <id> for run-level commands")),
                };
                body(client, run_id).await.map_err(client_fail)
            }
            None => {
                let server = Embedded::start(&remote.location, remote.provider.as_deref()).await?;
                let client = ReviewClient::new(&format!("http://{}", server.addr));
                let out = body(client, server.run_id.clone()).await;
                server.stop().await;
                out.map_err(client_fail)
            }
        }
    })
}

fn print_item(item: &ReviewItem) {
    let a = &item.alignment;
    println!("{} [{}]", item.id, item.status());
    println!("  property   {}", item.property);
    println!("  mapping    {} {}", a.mapping_kind, a.signals.join("+"));
    println!("  confidence {:.3}", a.confidence);
    for r in &item.flag_reasons {
        println!("  reason     {r}");
    }
    for h in &item.candidates {
        println!("  candidate  {:<20} {:.3}", h.signal, h.similarity);
    }
    for h in &item.history {
        let c = h.constraint.as_deref().map(|c| format!(" `{c}`")).unwrap_or_default();
        println!("  #{:<3} {} {} by {}{c} -> {}", h.seq, h.timestamp, h.action, h.actor, h.status);
    }
}

fn print_run(run: &PipelineRun) {
    println!("run {}", run.run_id);
    for s in Stage::ALL {
        println!("  {:<10} {}", s.as_str(), run.stage(s).status.as_str());
    }
    if !run.flagged.is_empty() {
        println!("  awaiting review: {}", run.flagged.join(", "));
    }
}

/// Item commands address items directly, so a `--url` needs no run id.
pub fn review(a: ReviewArgs) -> CmdResult {
    let ReviewArgs { remote, actor, action } = a;
    let body = |client: ReviewClient, _run: String| async move {
        match action {
            ReviewCmd::List { status, offset, limit } => {
                let page = client.list(status, offset, limit).await?;
                for s in &page.items {
                    println!(
                        "{:<24} {:<13} {:<11} {:.3} {}",
                        s.id,
                        s.status,
                        s.mapping_kind,
                        s.confidence,
                        s.signals.join("+")
                    );
                }
                println!("{} of {} item(s)", page.items.len(), page.total);
            }
            ReviewCmd::Show { id } => print_item(&client.get(&id).await?),
            ReviewCmd::Approve { id } => print_item(&client.decide(&id, Decision::Approve, &actor).await?),
            ReviewCmd::Reject { id } => print_item(&client.decide(&id, Decision::Reject, &actor).await?),
            ReviewCmd::Regenerate { id, constraint } => print_item(&client.regenerate(&id, &constraint, &actor).await?),
            ReviewCmd::Code { id } => print!("{}", client.artifact_code(&id).await?),
        }
        Ok(OK)
    };
    match &remote.url {
        None => with_client(&remote, body),
        Some(url) => runtime()?.block_on(async {
            body(ReviewClient::new(url), String::new()).await.map_err(client_fail)
        }),
    }
}

pub fn resume(a: RemoteArgs) -> CmdResult {
    with_client(&a, |client, run_id| async move {
        let run = client.resume(&run_id).await?;
        print_run(&run);
        Ok(OK)
    })
}

pub fn status(a: RemoteArgs) -> CmdResult {
    with_client(&a, |client, run_id| async move {
        print_run(&client.run(&run_id).await?);
        Ok(OK)
    })
}
