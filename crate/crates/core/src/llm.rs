//! Completion-service client: versioned templates, pluggable transports
//! (HTTP chat completions, recorded fixtures, recording proxy), JSON repair
//! with bounded retries, and an atomic cost accumulator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub type Variables = BTreeMap<String, String>;

/// Variable added on retries; attempt 0 omits it so first-call fixture keys
/// depend only on the caller's variables.
pub const ATTEMPT_VARIABLE: &str = "attempt";

const BUILTIN_TEMPLATES: &[(&str, &str)] = &[
    ("analysis/v1", include_str!("../templates/analysis_v1.txt")),
    ("layout/v1", include_str!("../templates/layout_v1.txt")),
];

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template_id}` needs variable `{variable}`")]
    MissingVariable { template_id: String, variable: String },
    #[error("no recorded response for `{template_id}` at {}", path.display())]
    FixtureMissing { template_id: String, path: PathBuf },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("LLM_PROTOCOL_ERROR: `{template_id}` response unusable after {attempts} attempt(s): {reason}")]
    Protocol {
        template_id: String,
        attempts: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `{{name}}` templates keyed by `family/version`.
#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

impl TemplateStore {
    pub fn builtin() -> Self {
        let mut store = Self::default();
        for (id, text) in BUILTIN_TEMPLATES {
            store.insert(*id, *text);
        }
        store
    }

    /// Loads every `*.txt` in `dir`; `analysis_v2.txt` becomes `analysis/v2`.
    pub fn load_dir(dir: &Path) -> Result<Self, LlmError> {
        let mut store = Self::builtin();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let id = match stem.rsplit_once('_') {
                Some((family, version)) => format!("{family}/{version}"),
                None => stem.to_string(),
            };
            store.insert(id, fs::read_to_string(&path)?);
        }
        Ok(store)
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(id.into(), text.into());
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, template_id: &str, vars: &Variables) -> Result<String, LlmError> {
        let text = self
            .templates
            .get(template_id)
            .ok_or_else(|| LlmError::UnknownTemplate(template_id.to_string()))?;
        let mut out = String::with_capacity(text.len());
        let mut rest = text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                rest = "";
                break;
            };
            let name = after[..end].trim();
            let value = vars.get(name).ok_or_else(|| LlmError::MissingVariable {
                template_id: template_id.to_string(),
                variable: name.to_string(),
            })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub template_id: String,
    pub variables: Variables,
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

/// Content hash of `(template_id, variables)`, the fixture file stem.
pub fn fixture_key(template_id: &str, vars: &Variables) -> String {
    let canonical = json!({ "template_id": template_id, "variables": vars }).to_string();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Rough token count when the transport reports none.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Replays `<dir>/<fixture_key>.txt`.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, template_id: &str, vars: &Variables) -> PathBuf {
        self.dir.join(format!("{}.txt", fixture_key(template_id, vars)))
    }
}

impl Transport for FixtureTransport {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let path = self.path_for(&request.template_id, &request.variables);
        let text = fs::read_to_string(&path).map_err(|_| LlmError::FixtureMissing {
            template_id: request.template_id.clone(),
            path: path.clone(),
        })?;
        Ok(CompletionResponse {
            prompt_tokens: estimate_tokens(&request.prompt),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }
}

/// Wraps a live transport and stores each response as a fixture.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    fixtures: FixtureTransport,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            fixtures: FixtureTransport::new(dir),
        }
    }
}

impl Transport for RecordingTransport {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let response = self.inner.send(request)?;
        let path = self.fixtures.path_for(&request.template_id, &request.variables);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &response.text)?;
        Ok(response)
    }
}

/// OpenAI-style `/chat/completions` endpoint.
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            api_key,
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(LlmError::Transport(format!("{} returned HTTP {status}", self.endpoint)));
        }
        let value: Value = response.json().map_err(|e| LlmError::Transport(e.to_string()))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| LlmError::Transport("response has no choices[0].message.content".into()))?
            .to_string();
        let usage = |field: &str| value.pointer(&format!("/usage/{field}")).and_then(Value::as_u64);
        Ok(CompletionResponse {
            prompt_tokens: usage("prompt_tokens").unwrap_or_else(|| estimate_tokens(&request.prompt)),
            completion_tokens: usage("completion_tokens").unwrap_or_else(|| estimate_tokens(&text)),
            text,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    pub max_retries: usize,
    /// Micro-dollars per 1,000 prompt tokens.
    pub prompt_price: u64,
    /// Micro-dollars per 1,000 completion tokens.
    pub completion_price: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            temperature: 0.0,
            max_retries: 2,
            prompt_price: 30_000,
            completion_price: 60_000,
        }
    }
}

/// Thread-safe client; cost and call counters are atomics.
pub struct LlmClient {
    transport: Arc<dyn Transport>,
    templates: TemplateStore,
    config: LlmConfig,
    cost_micros: AtomicU64,
    calls: AtomicU64,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>, templates: TemplateStore, config: LlmConfig) -> Self {
        Self {
            transport,
            templates,
            config,
            cost_micros: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn fixtures(dir: impl Into<PathBuf>) -> Self {
        Self::new(
            Arc::new(FixtureTransport::new(dir)),
            TemplateStore::builtin(),
            LlmConfig::default(),
        )
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    /// Accumulated spend in micro-dollars.
    pub fn cost_micros(&self) -> u64 {
        self.cost_micros.load(Ordering::Relaxed)
    }

    pub fn cost_usd(&self) -> f64 {
        self.cost_micros() as f64 / 1e6
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, template_id: &str, vars: &Variables) -> Result<String, LlmError> {
        let prompt = self.templates.render(template_id, vars)?;
        let request = CompletionRequest {
            template_id: template_id.to_string(),
            variables: vars.clone(),
            prompt,
            model: self.config.model.clone(),
            temperature: self.config.temperature,
        };
        let response = self.transport.send(&request)?;
        let cost = (response.prompt_tokens * self.config.prompt_price
            + response.completion_tokens * self.config.completion_price)
            .div_ceil(1000);
        self.cost_micros.fetch_add(cost, Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(response.text)
    }

    /// Completes, repairs and decodes a JSON response. Retries (with an
    /// `attempt` variable) when the text cannot be repaired or `decode` rejects it.
    pub fn complete_json<T>(
        &self,
        template_id: &str,
        vars: &Variables,
        decode: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<T, LlmError> {
        let attempts = self.config.max_retries + 1;
        let mut reason = String::new();
        for attempt in 0..attempts {
            let mut vars = vars.clone();
            if attempt > 0 {
                vars.insert(ATTEMPT_VARIABLE.into(), attempt.to_string());
            }
            let text = match self.complete(template_id, &vars) {
                Ok(text) => text,
                // a missing retry fixture ends the loop with the earlier reason
                Err(LlmError::FixtureMissing { .. }) if attempt > 0 => break,
                Err(e) => return Err(e),
            };
            match parse_repaired(&text).and_then(|v| decode(&v)) {
                Ok(value) => return Ok(value),
                Err(e) => reason = e,
            }
        }
        Err(LlmError::Protocol {
            template_id: template_id.to_string(),
            attempts,
            reason,
        })
    }
}

fn parse_repaired(text: &str) -> Result<Value, String> {
    serde_json::from_str(text)
        .or_else(|_| serde_json::from_str(&repair_json(text)))
        .map_err(|e| format!("not JSON after repair: {e}"))
}

/// One repair pass: keep the outermost JSON object or array, drop trailing
/// commas, and close brackets left open.
pub fn repair_json(text: &str) -> String {
    let start = text.find(['{', '[']);
    let Some(start) = start else {
        return text.trim().to_string();
    };
    let body = &text[start..];

    // Stop where depth returns to zero; anything after is trailing prose.
    let mut out = String::with_capacity(body.len() + 8);
    let mut stack: Vec<char> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for ch in body.chars() {
        if in_string {
            out.push(ch);
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => stack.push('}'),
            '[' => stack.push(']'),
            '}' | ']' => {
                trim_trailing_comma(&mut out);
                if stack.last() == Some(&ch) {
                    stack.pop();
                } else {
                    continue;
                }
            }
            _ => {}
        }
        out.push(ch);
        if stack.is_empty() && matches!(ch, '}' | ']') {
            break;
        }
    }
    if in_string {
        out.push('"');
    }
    trim_trailing_comma(&mut out);
    while let Some(close) = stack.pop() {
        trim_trailing_comma(&mut out);
        out.push(close);
    }
    out
}

fn trim_trailing_comma(out: &mut String) {
    let trimmed = out.trim_end().len();
    out.truncate(trimmed);
    if out.ends_with(',') {
        out.pop();
    }
}

pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> Variables {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<String>>,
        seen: Mutex<Vec<Variables>>,
    }

    impl Transport for Scripted {
        fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
            self.seen.lock().unwrap().push(request.variables.clone());
            let text = self.replies.lock().unwrap().remove(0);
            Ok(CompletionResponse {
                text,
                prompt_tokens: 1000,
                completion_tokens: 500,
            })
        }
    }

    fn scripted(replies: &[&str]) -> (Arc<Scripted>, LlmClient) {
        let transport = Arc::new(Scripted {
            replies: Mutex::new(replies.iter().map(|s| s.to_string()).collect()),
            seen: Mutex::new(Vec::new()),
        });
        let client = LlmClient::new(transport.clone(), TemplateStore::builtin(), LlmConfig::default());
        (transport, client)
    }

    #[test]
    fn repair_strips_prose_and_trailing_commas() {
        let raw = "Sure! Here it is:\n```json\n{\"objects\": [{\"caption\": \"cat\",},],}\n```\nHope this helps.";
        let fixed = repair_json(raw);
        assert_eq!(fixed, "{\"objects\": [{\"caption\": \"cat\"}]}");
    }

    #[test]
    fn repair_closes_open_brackets() {
        assert_eq!(repair_json("{\"a\": [1, 2"), "{\"a\": [1, 2]}");
        assert_eq!(repair_json("{\"a\": \"x"), "{\"a\": \"x\"}");
        let v: Value = serde_json::from_str(&repair_json("{\"s\": \"}{\", \"t\": [")).unwrap();
        assert_eq!(v["s"], "}{");
    }

    #[test]
    fn template_rendering() {
        let mut store = TemplateStore::default();
        store.insert("t/v1", "Prompt: {{ prompt }} / {{prompt}}");
        let out = store.render("t/v1", &vars([("prompt", "cat".into())])).unwrap();
        assert_eq!(out, "Prompt: cat / cat");
        assert!(matches!(
            store.render("t/v1", &Variables::new()),
            Err(LlmError::MissingVariable { .. })
        ));
        assert!(matches!(store.render("x/v9", &Variables::new()), Err(LlmError::UnknownTemplate(_))));
        assert!(TemplateStore::builtin().ids().any(|id| id == "analysis/v1"));
    }

    #[test]
    fn retries_add_attempt_variable_then_give_up() {
        let (transport, client) = scripted(&["nope", "still nope", "{\"ok\": 1}"]);
        let decoded = client
            .complete_json("analysis/v1", &vars([("prompt", "p".into())]), |v| {
                v.get("ok").and_then(Value::as_u64).ok_or_else(|| "missing ok".to_string())
            })
            .unwrap();
        assert_eq!(decoded, 1);
        let seen = transport.seen.lock().unwrap();
        assert_eq!(seen[0].get(ATTEMPT_VARIABLE), None);
        assert_eq!(seen[2].get(ATTEMPT_VARIABLE).map(String::as_str), Some("2"));

        let (_, client) = scripted(&["x", "y", "z"]);
        let err = client
            .complete_json("analysis/v1", &vars([("prompt", "p".into())]), |_| Ok(()))
            .unwrap_err();
        assert!(matches!(err, LlmError::Protocol { attempts: 3, .. }));
    }

    #[test]
    fn cost_accumulates_monotonically() {
        let (_, client) = scripted(&["{}", "{}"]);
        let v = vars([("prompt", "p".into())]);
        client.complete("analysis/v1", &v).unwrap();
        // 1000 * 30000 / 1000 + 500 * 60000 / 1000
        assert_eq!(client.cost_micros(), 60_000);
        client.complete("analysis/v1", &v).unwrap();
        assert_eq!(client.cost_micros(), 120_000);
        assert_eq!(client.calls(), 2);
    }

    #[test]
    fn fixture_transport_is_keyed_by_content_hash() {
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::fixtures(dir.path());
        let v = vars([("prompt", "a red apple".into())]);
        assert!(matches!(client.complete("analysis/v1", &v), Err(LlmError::FixtureMissing { .. })));
        let key = fixture_key("analysis/v1", &v);
        assert_eq!(key.len(), 64);
        fs::write(dir.path().join(format!("{key}.txt")), "{\"objects\": []}").unwrap();
        let first = client.complete("analysis/v1", &v).unwrap();
        assert_eq!(first, client.complete("analysis/v1", &v).unwrap());
        assert!(client.cost_micros() > 0);
    }

    #[test]
    fn recording_transport_writes_replayable_fixtures() {
        let dir = tempfile::tempdir().unwrap();
        let (inner, _) = scripted(&["{\"objects\": [1]}"]);
        let recorder = LlmClient::new(
            Arc::new(RecordingTransport::new(inner, dir.path())),
            TemplateStore::builtin(),
            LlmConfig::default(),
        );
        let v = vars([("prompt", "p".into())]);
        let live = recorder.complete("analysis/v1", &v).unwrap();
        let replay = LlmClient::fixtures(dir.path()).complete("analysis/v1", &v).unwrap();
        assert_eq!(live, replay);
    }
}
