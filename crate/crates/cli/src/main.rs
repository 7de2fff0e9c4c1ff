use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use pcig_core::analysis::AnalysisMode;
use pcig_core::canonical::{parse_plan, serialize_plan};
use pcig_core::eval::{self, EvalReport};
use pcig_core::graph::build_graph;
use pcig_core::layout::render_svg;
use pcig_core::llm::{HttpTransport, LlmClient, LlmConfig, TemplateStore};
use pcig_core::model::{slugify, Canvas, PromptSpec, ScenePlan};
use pcig_core::pipeline::{
    dispatch_plan, load_batch, plan_prompt, run_batch, serialize_request, Backend, CachedResolver, Clients,
    FixtureResolver, HttpBackend, MockBackend, PipelineError, PlanConfig, PnImageResolver, RunOptions,
    SearchResolver, TextModule,
};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "pcig", version, about = "Scene planning and dispatch for layout-conditioned image generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze prompts and write scene plans.
    Plan(PlanArgs),
    /// Turn plans (or prompts) into backend requests.
    Dispatch(DispatchArgs),
    /// Plan, dispatch and render.
    Run(RunArgs),
    /// Score verdict files against a benchmark.
    Eval(EvalArgs),
}

#[derive(Args)]
struct Input {
    /// Prompt text.
    #[arg(long, conflicts_with = "batch")]
    prompt: Option<String>,
    /// Prompt id used with --prompt.
    #[arg(long, default_value = "prompt")]
    id: String,
    /// JSON-lines or plain-text file with one prompt per line.
    #[arg(long)]
    batch: Option<PathBuf>,
}

#[derive(Args)]
struct Planning {
    #[arg(long, default_value = "full")]
    mode: AnalysisMode,
    /// Use the deterministic parser and solver instead of an LLM.
    #[arg(long)]
    offline: bool,
    /// Serve LLM calls from recorded fixtures (works with --offline).
    #[arg(long, env = "PCIG_LLM_FIXTURES")]
    llm_fixtures: Option<PathBuf>,
    #[arg(long, env = "PCIG_LLM_ENDPOINT", hide_env_values = true)]
    llm_endpoint: Option<String>,
    #[arg(long, env = "PCIG_LLM_API_KEY", hide_env_values = true)]
    llm_api_key: Option<String>,
    #[arg(long, env = "PCIG_LLM_MODEL")]
    llm_model: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "512x512")]
    canvas: Canvas,
    /// Extra proper nouns, one per line.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
}

#[derive(Args)]
struct Resolution {
    /// Directory of `<pn_key>.png|jpg` reference images.
    #[arg(long, env = "PCIG_PN_FIXTURES")]
    pn_fixtures: Option<PathBuf>,
    #[arg(long, env = "PCIG_SEARCH_ENDPOINT")]
    search_endpoint: Option<String>,
    /// Re-route scene text to the layout backend.
    #[arg(long)]
    no_text_module: bool,
    /// Backend parameter `key=value` (value parsed as JSON when possible).
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, Value)>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    planning: Planning,
    /// Output directory; plans go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write layout.svg.
    #[arg(long, requires = "out")]
    svg: bool,
    /// Also write graph.dot.
    #[arg(long, requires = "out")]
    dot: bool,
}

#[derive(Args)]
struct DispatchArgs {
    /// Existing plan file instead of a prompt.
    #[arg(long, conflicts_with_all = ["prompt", "batch"])]
    plan: Option<PathBuf>,
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    planning: Planning,
    #[command(flatten)]
    resolution: Resolution,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    planning: Planning,
    #[command(flatten)]
    resolution: Resolution,
    /// Render with the built-in schematic backend.
    #[arg(long)]
    mock: bool,
    #[arg(long, env = "PCIG_BACKEND_ENDPOINT")]
    backend_endpoint: Option<String>,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Prompts processed at once in batch mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    benchmark: PathBuf,
    /// `[tag=]path`; repeat to compare, the first is the baseline.
    #[arg(long, required = true)]
    verdicts: Vec<String>,
    #[arg(long)]
    json: bool,
}

fn parse_param(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not key=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// `CODE: message` on stderr.
struct Failure {
    code: String,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.message.starts_with(&self.code) {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.code, self.message)
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

impl From<eval::EvalError> for Failure {
    fn from(e: eval::EvalError) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

fn failure(code: &str, message: impl fmt::Display) -> Failure {
    Failure {
        code: code.into(),
        message: message.to_string(),
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| failure("IO_ERROR", format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, bytes).map_err(io(path))
}

impl Input {
    fn prompts(&self) -> Result<Vec<PromptSpec>, Failure> {
        match (&self.prompt, &self.batch) {
            (Some(text), _) => Ok(vec![PromptSpec::new(self.id.clone(), text.clone())]),
            (None, Some(path)) => Ok(load_batch(path)?),
            (None, None) => Err(failure("INVALID_PROMPT", "pass --prompt or --batch")),
        }
    }

    fn is_batch(&self) -> bool {
        self.batch.is_some()
    }
}

impl Planning {
    fn client(&self) -> Result<Option<LlmClient>, Failure> {
        let mut config = LlmConfig::default();
        if let Some(model) = &self.llm_model {
            config.model = model.clone();
        }
        if let Some(dir) = &self.llm_fixtures {
            let transport = pcig_core::llm::FixtureTransport::new(dir);
            return Ok(Some(LlmClient::new(Arc::new(transport), TemplateStore::builtin(), config)));
        }
        if self.offline {
            return Ok(None);
        }
        let endpoint = self
            .llm_endpoint
            .clone()
            .ok_or_else(|| failure("LLM_UNAVAILABLE", "set PCIG_LLM_ENDPOINT or pass --offline"))?;
        let transport = HttpTransport::new(endpoint, self.llm_api_key.clone(), Duration::from_secs(120))
            .map_err(|e| failure("LLM_UNAVAILABLE", e))?;
        Ok(Some(LlmClient::new(Arc::new(transport), TemplateStore::builtin(), config)))
    }

    fn config(&self) -> Result<PlanConfig, Failure> {
        let mut config = PlanConfig {
            canvas: self.canvas,
            ..PlanConfig::default()
        };
        config.layout.rng_seed = self.seed;
        if let Some(path) = &self.gazetteer {
            let text = std::fs::read_to_string(path).map_err(io(path))?;
            for entry in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                config.analysis.gazetteer.insert(entry);
            }
        }
        Ok(config)
    }
}

impl Resolution {
    fn resolver(&self) -> Result<Option<Box<dyn PnImageResolver>>, Failure> {
        if let Some(dir) = &self.pn_fixtures {
            return Ok(Some(Box::new(CachedResolver::new(FixtureResolver::new(dir)))));
        }
        if let Some(endpoint) = &self.search_endpoint {
            let search = SearchResolver::new(endpoint, Duration::from_secs(30))
                .map_err(|e| failure("PN_RESOLUTION_FAILED", e))?;
            return Ok(Some(Box::new(CachedResolver::new(search))));
        }
        Ok(None)
    }

    fn text_module(&self) -> TextModule {
        if self.no_text_module {
            TextModule::Without
        } else {
            TextModule::With
        }
    }

    fn params(&self) -> BTreeMap<String, Value> {
        self.params.iter().cloned().collect()
    }
}

fn item_dir(out: &Path, index: usize, prompt: &PromptSpec) -> PathBuf {
    let slug = slugify(&prompt.id);
    out.join(if slug.is_empty() { format!("{index:03}") } else { format!("{index:03}-{slug}") })
}

type Planned = (PromptSpec, Result<ScenePlan, Failure>);

fn plans(input: &Input, planning: &Planning) -> Result<Vec<Planned>, Failure> {
    let client = planning.client()?;
    let clients = client.as_ref().map(Clients::both).unwrap_or_default();
    let config = planning.config()?;
    Ok(input
        .prompts()?
        .into_iter()
        .map(|p| {
            let plan = plan_prompt(&p, planning.mode, clients, &config).map_err(Failure::from).map(|out| {
                for d in &out.diagnostics {
                    eprintln!("{}: {d}", p.id);
                }
                out.plan
            });
            (p, plan)
        })
        .collect())
}

fn plan_bytes(plan: &ScenePlan) -> Result<Vec<u8>, Failure> {
    serialize_plan(plan).map_err(|e| failure("INVALID_PLAN", e))
}

fn cmd_plan(args: &PlanArgs) -> Result<bool, Failure> {
    let mut ok = true;
    for (i, (prompt, plan)) in plans(&args.input, &args.planning)?.into_iter().enumerate() {
        let plan = match plan {
            Ok(plan) => plan,
            Err(e) => {
                eprintln!("{}: {e}", prompt.id);
                ok = false;
                continue;
            }
        };
        let bytes = plan_bytes(&plan)?;
        let Some(out) = &args.out else {
            print!("{}", String::from_utf8_lossy(&bytes));
            continue;
        };
        let dir = if args.input.is_batch() { item_dir(out, i, &prompt) } else { out.clone() };
        write(&dir.join("plan.json"), &bytes)?;
        if args.svg {
            write(&dir.join("layout.svg"), render_svg(&plan.objects, &plan.boxes, plan.canvas).as_bytes())?;
        }
        if args.dot {
            let graph = build_graph(&plan.objects, &plan.triples).map_err(|e| failure("DANGLING_EDGE", e))?;
            write(&dir.join("graph.dot"), graph.to_dot(&plan.objects).as_bytes())?;
        }
        println!("{}", dir.join("plan.json").display());
    }
    Ok(ok)
}

fn cmd_dispatch(args: &DispatchArgs) -> Result<bool, Failure> {
    let resolver = args.resolution.resolver()?;
    let work = match &args.plan {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(io(path))?;
            let plan = parse_plan(&bytes).map_err(|e| failure(e.code.as_str(), e))?;
            vec![(plan.prompt.clone(), Ok(plan))]
        }
        None => plans(&args.input, &args.planning)?,
    };
    let batch = work.len() > 1 || args.input.is_batch();
    let mut ok = true;
    for (i, (prompt, plan)) in work.into_iter().enumerate() {
        let request = plan.and_then(|plan| {
            dispatch_plan(&plan, resolver.as_deref(), args.resolution.text_module(), args.resolution.params())
                .map_err(Failure::from)
        });
        let request = match request {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{}: {e}", prompt.id);
                ok = false;
                continue;
            }
        };
        let bytes = serialize_request(&request);
        match &args.out {
            None => print!("{}", String::from_utf8_lossy(&bytes)),
            Some(out) => {
                let dir = if batch { item_dir(out, i, &prompt) } else { out.clone() };
                write(&dir.join("request.json"), &bytes)?;
                println!("{}", dir.join("request.json").display());
            }
        }
    }
    Ok(ok)
}

fn cmd_run(args: &RunArgs) -> Result<bool, Failure> {
    let prompts = args.input.prompts()?;
    let backend: Box<dyn Backend> = if args.mock {
        Box::new(MockBackend)
    } else {
        let endpoint = args.backend_endpoint.clone().ok_or_else(|| {
            Failure::from(PipelineError::BackendUnavailable {
                endpoint: "<unset>".into(),
                status: None,
                reason: "no backend endpoint; set PCIG_BACKEND_ENDPOINT or pass --mock".into(),
            })
        })?;
        Box::new(HttpBackend::new(endpoint, Duration::from_secs(args.timeout_secs))?)
    };
    let client = args.planning.client()?;
    let clients = client.as_ref().map(Clients::both).unwrap_or_default();
    let resolver = args.resolution.resolver()?;
    let options = RunOptions {
        mode: args.planning.mode,
        text_module: args.resolution.text_module(),
        config: args.planning.config()?,
        params: args.resolution.params(),
    };
    let results = if args.input.is_batch() {
        run_batch(&prompts, &options, clients, resolver.as_deref(), backend.as_ref(), &args.out, args.jobs)
    } else {
        vec![pcig_core::pipeline::run_pipeline(
            &prompts[0],
            &options,
            clients,
            resolver.as_deref(),
            backend.as_ref(),
            &args.out,
        )]
    };
    let mut ok = true;
    for (prompt, result) in prompts.iter().zip(results) {
        match result {
            Ok(manifest) => println!("{}", manifest.manifest_path.display()),
            Err(e) => {
                if !args.input.is_batch() {
                    return Err(e.into());
                }
                eprintln!("{}: {}", prompt.id, Failure::from(e));
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn cmd_eval(args: &EvalArgs) -> Result<bool, Failure> {
    let records = eval::load_benchmark(&args.benchmark)?;
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for spec in &args.verdicts {
        let (tag, path) = match spec.split_once('=') {
            Some((tag, path)) => (tag.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(spec);
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (stem, path)
            }
        };
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let mut scored = records.clone();
        eval::apply_verdicts(&mut scored, &text)?;
        reports.push((tag, eval::compute_report(&scored)?));
    }
    if args.json {
        let mut all = pcig_core::canonical::Canon::Obj(BTreeMap::new());
        for (tag, report) in &reports {
            all = all.with(tag, report.to_canon());
        }
        print!("{}", all.to_pretty());
        return Ok(true);
    }
    for (tag, report) in &reports {
        println!("[{tag}]\n{}", report.to_table());
    }
    if reports.len() > 1 {
        print!("{}", eval::compare_reports(&reports)?.to_table());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Dispatch(a) => cmd_dispatch(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
