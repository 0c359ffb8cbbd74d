use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, CompletionRequest, OutputSchema, PromptSection, ProviderError, RawCompletion, TaskTag};

const SYSTEM_PROMPT: &str = "You generate structured artifacts for a vehicle API synthesis \
pipeline. Reply with a single JSON object containing exactly the fields listed under \
\"output schema\". Do not add prose outside the JSON object.";

/// Endpoint settings for [`RemoteBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl RemoteConfig {
    /// Read `SIGNALFORGE_LLM_URL` (required), `SIGNALFORGE_LLM_MODEL` and
    /// `SIGNALFORGE_LLM_API_KEY`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let url = std::env::var("SIGNALFORGE_LLM_URL").map_err(|_| {
            ProviderError::InvalidRequest("SIGNALFORGE_LLM_URL is not set".into())
        })?;
        Ok(Self {
            url,
            model: std::env::var("SIGNALFORGE_LLM_MODEL").unwrap_or_else(|_| "default".into()),
            api_key: std::env::var("SIGNALFORGE_LLM_API_KEY").ok(),
            timeout: Duration::from_secs(120),
        })
    }
}

/// Render a request as a chat prompt. Prose sections come first; the
/// machine-readable parts follow in `@@` blocks of one JSON line each.
pub fn render_prompt(request: &CompletionRequest) -> String {
    let mut out = format!("@task {}\n@attempt {}\n", request.task, request.attempt);
    for s in &request.sections {
        out.push_str(&format!("\n## {}\n{}\n", s.label, s.text.trim_end()));
    }
    out.push_str("\n## output schema\n");
    for f in &request.schema.fields {
        out.push_str(&format!(
            "- {} ({:?}, {}): {}\n",
            f.name,
            f.ty,
            if f.required { "required" } else { "optional" },
            f.semantic
        ));
    }
    if let Some(fb) = &request.feedback {
        out.push_str(&format!("\n## feedback from the previous attempt\n{}\n", fb.trim_end()));
    }
    if !request.instructions.is_empty() {
        out.push_str("\n## refinement instructions\n");
        for i in &request.instructions {
            out.push_str(&format!("- {i}\n"));
        }
    }
    let block = |name: &str, v: &Value| format!("\n@@{name}\n{}\n", serde_json::to_string(v).expect("json"));
    out.push_str(&block("sections", &serde_json::to_value(&request.sections).expect("json")));
    out.push_str(&block("materials", &request.materials));
    out.push_str(&block("schema", &serde_json::to_value(&request.schema).expect("json")));
    out.push_str(&block("feedback", &json!(request.feedback)));
    out.push_str(&block("instructions", &json!(request.instructions)));
    out
}

/// Inverse of [`render_prompt`].
pub fn parse_prompt(text: &str) -> Result<CompletionRequest, String> {
    let mut task = None;
    let mut attempt = None;
    let mut blocks = std::collections::BTreeMap::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if let Some(t) = line.strip_prefix("@task ") {
            task = Some(serde_json::from_value::<TaskTag>(json!(t.trim())).map_err(|e| e.to_string())?);
        } else if let Some(a) = line.strip_prefix("@attempt ") {
            attempt = Some(a.trim().parse::<u32>().map_err(|e| e.to_string())?);
        } else if let Some(name) = line.strip_prefix("@@") {
            let body = lines.next().ok_or_else(|| format!("block `{name}` has no body"))?;
            let v: Value = serde_json::from_str(body).map_err(|e| format!("block `{name}`: {e}"))?;
            blocks.insert(name.trim().to_string(), v);
        }
    }
    let mut take = |name: &str| blocks.remove(name).ok_or_else(|| format!("missing block `{name}`"));
    let sections: Vec<PromptSection> = serde_json::from_value(take("sections")?).map_err(|e| e.to_string())?;
    let materials = take("materials")?;
    let schema: OutputSchema = serde_json::from_value(take("schema")?).map_err(|e| e.to_string())?;
    let feedback: Option<String> = serde_json::from_value(take("feedback")?).map_err(|e| e.to_string())?;
    let instructions: Vec<String> =
        serde_json::from_value(take("instructions")?).map_err(|e| e.to_string())?;
    Ok(CompletionRequest {
        task: task.ok_or("missing @task line")?,
        sections,
        materials,
        schema,
        attempt: attempt.ok_or("missing @attempt line")?,
        feedback,
        instructions,
    })
}

fn request_body(model: &str, request: &CompletionRequest) -> Value {
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": render_prompt(request)},
        ],
        "response_format": {"type": "json_object"},
    })
}

/// Generic chat-completion client: one HTTP POST per call.
pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .expect("http client");
        Self { config, client }
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn call(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let mut http = self.client.post(&self.config.url).json(&request_body(&self.config.model, request));
        if let Some(key) = &self.config.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(ProviderError::Transport(format!("HTTP {status}: {body}")));
        }
        let body: Value = response.json().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let content = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Transport("response has no message content".into()))?
            .to_string();
        // Unparseable content surfaces as a schema violation and is re-prompted.
        let payload = serde_json::from_str(&content).unwrap_or(Value::Null);
        Ok(RawCompletion {
            payload,
            raw_text: content,
        })
    }
}

/// Answer a chat-completion request body the way a compliant model server
/// would, delegating the actual work to `backend`. Used to stand in for a
/// remote model in tests and demos.
pub fn chat_completion_stub(body: &Value, backend: &dyn Backend) -> Result<Value, String> {
    let prompt = body["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .ok_or("no user message")?;
    let request = parse_prompt(prompt)?;
    let raw = backend.call(&request).map_err(|e| e.to_string())?;
    Ok(json!({
        "id": format!("stub-{}", &request.digest()[..12]),
        "object": "chat.completion",
        "model": body["model"],
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": raw.raw_text},
            "finish_reason": "stop",
        }],
    }))
}
