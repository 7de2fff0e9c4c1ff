use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde_json::Value;

use super::backend::Backend;
use super::dispatch::{dispatch_plan, serialize_request, TextModule};
use super::resolver::PnImageResolver;
use super::{plan_prompt, Clients, PipelineError, PlanConfig};
use crate::analysis::AnalysisMode;
use crate::canonical::{serialize_plan, Canon};
use crate::model::{slugify, PromptSpec};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub mode: AnalysisMode,
    pub text_module: TextModule,
    pub config: PlanConfig,
    /// Opaque backend parameters copied into every request.
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub prompt_id: String,
    pub out_dir: PathBuf,
    pub plan_path: PathBuf,
    pub request_path: PathBuf,
    pub image_path: PathBuf,
    pub manifest_path: PathBuf,
    pub object_count: usize,
    pub analysis_source: &'static str,
    pub layout_source: &'static str,
    pub backend: String,
    /// Micro-dollars spent on LLM calls during this run.
    pub llm_cost_micros: u64,
    pub plan_ms: u64,
    pub dispatch_ms: u64,
    pub backend_ms: u64,
    pub diagnostics: Vec<String>,
    pub regions: Option<Value>,
    pub mode: AnalysisMode,
    pub text_module: bool,
}

impl RunManifest {
    pub fn to_canon(&self) -> Canon {
        let file = |p: &Path| Canon::str(p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
        Canon::obj([
            ("prompt_id", Canon::str(&self.prompt_id)),
            (
                "files",
                Canon::obj([
                    ("plan", file(&self.plan_path)),
                    ("request", file(&self.request_path)),
                    ("image", file(&self.image_path)),
                ]),
            ),
            ("object_count", Canon::int(self.object_count)),
            ("mode", Canon::str(self.mode.as_str())),
            ("text_module", Canon::Bool(self.text_module)),
            ("analysis_source", Canon::str(self.analysis_source)),
            ("layout_source", Canon::str(self.layout_source)),
            ("backend", Canon::str(&self.backend)),
            ("llm_cost_usd", Canon::Fixed(self.llm_cost_micros as i64)),
            (
                "timing_ms",
                Canon::obj([
                    ("plan", Canon::int(self.plan_ms)),
                    ("dispatch", Canon::int(self.dispatch_ms)),
                    ("backend", Canon::int(self.backend_ms)),
                ]),
            ),
            ("diagnostics", Canon::Arr(self.diagnostics.iter().map(Canon::str).collect())),
        ])
        .with_opt("regions", self.regions.as_ref().map(Canon::from_json))
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    std::fs::write(path, bytes).map_err(PipelineError::io(path))
}

fn millis(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

/// Plans, dispatches and renders one prompt into `out_dir`, writing
/// `plan.json`, `request.json`, `image.png` and `manifest.json`.
pub fn run_pipeline(
    prompt: &PromptSpec,
    options: &RunOptions,
    clients: Clients<'_>,
    resolver: Option<&dyn PnImageResolver>,
    backend: &dyn Backend,
    out_dir: &Path,
) -> Result<RunManifest, PipelineError> {
    let cost_before = clients.cost_micros();
    let t = Instant::now();
    let outcome = plan_prompt(prompt, options.mode, clients, &options.config)?;
    let plan_ms = millis(t);

    let t = Instant::now();
    let request = dispatch_plan(&outcome.plan, resolver, options.text_module, options.params.clone())?;
    let dispatch_ms = millis(t);

    let t = Instant::now();
    let response = backend.generate(&request)?;
    let backend_ms = millis(t);

    std::fs::create_dir_all(out_dir).map_err(PipelineError::io(out_dir))?;
    let plan_path = out_dir.join("plan.json");
    let request_path = out_dir.join("request.json");
    let image_path = out_dir.join("image.png");
    let manifest_path = out_dir.join("manifest.json");
    let plan_bytes = serialize_plan(&outcome.plan).map_err(|e| PipelineError::InvalidPlan(e.0))?;
    write(&plan_path, &plan_bytes)?;
    write(&request_path, &serialize_request(&request))?;
    write(&image_path, &response.png)?;

    let manifest = RunManifest {
        prompt_id: prompt.id.clone(),
        out_dir: out_dir.to_path_buf(),
        plan_path,
        request_path,
        image_path,
        manifest_path: manifest_path.clone(),
        object_count: outcome.plan.objects.len(),
        analysis_source: outcome.analysis_source.as_str(),
        layout_source: outcome.layout_source.as_str(),
        backend: backend.describe(),
        llm_cost_micros: clients.cost_micros().saturating_sub(cost_before),
        plan_ms,
        dispatch_ms,
        backend_ms,
        diagnostics: outcome.diagnostics.iter().map(ToString::to_string).collect(),
        regions: response.manifest,
        mode: options.mode,
        text_module: request.text_module,
    };
    write(&manifest_path, manifest.to_canon().to_pretty().as_bytes())?;
    Ok(manifest)
}

/// JSON lines (`{"id", "prompt", "augmented_text"?}`) or plain lines, one
/// prompt each. Blank lines and `#` comments are skipped.
pub fn load_batch(path: &Path) -> Result<Vec<PromptSpec>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
    let mut prompts = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| PipelineError::MalformedBatch { line: line_no, reason };
        let prompt = if line.starts_with('{') {
            let v: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            let get = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
            let id = get("id").ok_or_else(|| malformed("missing string `id`".into()))?;
            let raw = get("prompt").ok_or_else(|| malformed("missing string `prompt`".into()))?;
            let mut p = PromptSpec::new(id, raw);
            p.augmented_text = get("augmented_text");
            p
        } else {
            PromptSpec::new(format!("line-{line_no}"), line)
        };
        if !prompt.is_valid() {
            return Err(malformed("empty id or prompt".into()));
        }
        if !seen.insert(prompt.id.clone()) {
            return Err(PipelineError::DuplicateId(prompt.id));
        }
        prompts.push(prompt);
    }
    if prompts.is_empty() {
        return Err(PipelineError::MalformedBatch {
            line: 0,
            reason: "no prompts".into(),
        });
    }
    Ok(prompts)
}

/// Runs every prompt into `out_dir/<index>-<id>`. Results keep input
/// order; `jobs > 1` runs that many prompts at a time.
pub fn run_batch(
    prompts: &[PromptSpec],
    options: &RunOptions,
    clients: Clients<'_>,
    resolver: Option<&dyn PnImageResolver>,
    backend: &dyn Backend,
    out_dir: &Path,
    jobs: usize,
) -> Vec<Result<RunManifest, PipelineError>> {
    let dir_for = |i: usize, p: &PromptSpec| {
        let slug = slugify(&p.id);
        out_dir.join(if slug.is_empty() { format!("{i:03}") } else { format!("{i:03}-{slug}") })
    };
    let one = |i: usize| run_pipeline(&prompts[i], options, clients, resolver, backend, &dir_for(i, &prompts[i]));
    if jobs <= 1 {
        return (0..prompts.len()).map(one).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunManifest, PipelineError>>>> =
        Mutex::new((0..prompts.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(prompts.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let result = one(i);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every index is claimed once"))
        .collect()
}
