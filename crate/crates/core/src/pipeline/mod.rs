//! Prompt to plan to backend request, plus the end-to-end runner.

mod backend;
mod dispatch;
mod resolver;
mod run;

use std::path::PathBuf;

pub use backend::{Backend, BackendResponse, HttpBackend, MockBackend};
pub use dispatch::{
    dispatch_plan, parse_request, request_canon, serialize_request, BackendRequest, DispatchItem, Route,
    TextModule, REQUEST_SCHEMA_VERSION,
};
pub use resolver::{CachedResolver, FixtureResolver, PnImageResolver, ResolveError, SearchResolver};
pub use run::{load_batch, run_batch, run_pipeline, RunManifest, RunOptions};

use crate::analysis::{analyze, AnalysisConfig, AnalysisError, AnalysisMode, AnalysisSource};
use crate::graph::{build_graph, select_anchor, GraphError};
use crate::layout::{llm_layout, predicates_to_constraints, solve_layout, LayoutConfig, LayoutError, LayoutSource};
use crate::llm::LlmClient;
use crate::model::{validate_plan, Canvas, Diagnostic, PromptSpec, ScenePlan, PLAN_SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid prompt `{id}`: {reason}")]
    InvalidPrompt { id: String, reason: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("INVALID_PLAN: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<Diagnostic>),
    #[error("PN_RESOLUTION_FAILED: no image for {}", .keys.join(", "))]
    PnResolutionFailed { keys: Vec<String> },
    #[error("BACKEND_UNAVAILABLE: {endpoint}{}: {reason}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    BackendUnavailable {
        endpoint: String,
        status: Option<u16>,
        reason: String,
    },
    #[error("SCHEMA_MISMATCH: {0}")]
    SchemaMismatch(String),
    #[error("MALFORMED_BATCH: line {line}: {reason}")]
    MalformedBatch { line: usize, reason: String },
    #[error("DUPLICATE_ID: prompt id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidPrompt { .. } => "INVALID_PROMPT",
            Self::Analysis(e) => e.code(),
            Self::Graph(_) => "DANGLING_EDGE",
            Self::Layout(LayoutError::Infeasible { .. }) => "LAYOUT_INFEASIBLE",
            Self::Layout(_) => "LAYOUT_ERROR",
            Self::InvalidPlan(_) => "INVALID_PLAN",
            Self::PnResolutionFailed { .. } => "PN_RESOLUTION_FAILED",
            Self::BackendUnavailable { .. } => "BACKEND_UNAVAILABLE",
            Self::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            Self::MalformedBatch { .. } => "MALFORMED_BATCH",
            Self::DuplicateId(_) => "DUPLICATE_ID",
            Self::Io { .. } => "IO_ERROR",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

/// LLM clients per stage; `None` selects the offline path.
#[derive(Clone, Copy, Default)]
pub struct Clients<'a> {
    pub analysis: Option<&'a LlmClient>,
    pub layout: Option<&'a LlmClient>,
}

impl<'a> Clients<'a> {
    pub fn offline() -> Self {
        Self::default()
    }

    pub fn both(client: &'a LlmClient) -> Self {
        Self {
            analysis: Some(client),
            layout: Some(client),
        }
    }

    pub(crate) fn cost_micros(&self) -> u64 {
        let a = self.analysis.map_or(0, LlmClient::cost_micros);
        match (self.analysis, self.layout) {
            (Some(x), Some(y)) if std::ptr::eq(x, y) => a,
            _ => a + self.layout.map_or(0, LlmClient::cost_micros),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanConfig {
    pub canvas: Canvas,
    pub layout: LayoutConfig,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: ScenePlan,
    pub analysis_source: AnalysisSource,
    pub layout_source: LayoutSource,
    /// Warnings from analysis and layout; the plan itself is valid.
    pub diagnostics: Vec<Diagnostic>,
}

/// analyze, graph, anchor, layout, validate.
pub fn plan_prompt(
    prompt: &PromptSpec,
    mode: AnalysisMode,
    clients: Clients<'_>,
    config: &PlanConfig,
) -> Result<PlanOutcome, PipelineError> {
    if !prompt.is_valid() {
        return Err(PipelineError::InvalidPrompt {
            id: prompt.id.clone(),
            reason: "id and text must be non-empty".into(),
        });
    }
    let analysis = analyze(prompt, clients.analysis, mode, &config.analysis)?;
    let graph = build_graph(&analysis.objects, &analysis.triples)?;
    let anchor_id = select_anchor(&graph)?;
    let constraints = predicates_to_constraints(&analysis.triples);
    let mut diagnostics = analysis.diagnostics;
    let (boxes, layout_source) = match clients.layout {
        Some(client) => {
            let out = llm_layout(prompt, &analysis.objects, &graph, &constraints, config.canvas, client, &config.layout)?;
            diagnostics.extend(out.diagnostics);
            (out.boxes, out.source)
        }
        None => {
            let out = solve_layout(&graph, &analysis.objects, &constraints, &config.layout)?;
            diagnostics.extend(out.diagnostics);
            (out.boxes, LayoutSource::Solver)
        }
    };
    let plan = ScenePlan {
        schema_version: PLAN_SCHEMA_VERSION.into(),
        prompt: prompt.clone(),
        canvas: config.canvas,
        objects: analysis.objects,
        triples: analysis.triples,
        anchor_id,
        boxes,
    };
    let problems = validate_plan(&plan);
    if !problems.is_empty() {
        return Err(PipelineError::InvalidPlan(problems));
    }
    Ok(PlanOutcome {
        plan,
        analysis_source: analysis.source,
        layout_source,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::relation_satisfied;
    use crate::model::ObjectCategory;

    const JERSEY: &str = "A blue basketball jersey with the Golden State Warriors logo and 'Stephen Curry' written on it.";

    #[test]
    fn jersey_plan() {
        let out = plan_prompt(&PromptSpec::new("jersey", JERSEY), AnalysisMode::Full, Clients::offline(), &PlanConfig::default())
            .unwrap();
        let plan = &out.plan;
        assert_eq!(plan.objects.len(), 3);
        assert_eq!(plan.anchor_id, 0);
        assert_eq!(plan.objects[plan.anchor_id].category, ObjectCategory::Go);
        for inner in [1, 2] {
            assert!(plan.boxes[&0].contains(&plan.boxes[&inner]));
        }
        assert_eq!(out.layout_source, LayoutSource::Solver);
        assert_eq!(out.analysis_source, AnalysisSource::Fallback);
    }

    #[test]
    fn single_object_gets_the_anchor_box() {
        let out = plan_prompt(&PromptSpec::new("apple", "a red apple"), AnalysisMode::Full, Clients::offline(), &PlanConfig::default())
            .unwrap();
        assert_eq!(out.plan.objects.len(), 1);
        assert_eq!(out.plan.boxes[&0].micros(), [275_000, 325_000, 450_000, 450_000]);
    }

    #[test]
    fn giraffe_modes() {
        let p = PromptSpec::new("giraffes", "Six giraffes in a grassy plain with trees in the background.");
        let config = PlanConfig::default();
        let full = plan_prompt(&p, AnalysisMode::Full, Clients::offline(), &config).unwrap().plan;
        assert_eq!((full.objects.len(), full.anchor_id), (8, 6));
        for c in predicates_to_constraints(&full.triples) {
            assert_eq!(relation_satisfied(&c, &full.boxes), Some(true));
        }
        let bare = plan_prompt(&p, AnalysisMode::NoObjectExtraction, Clients::offline(), &config).unwrap().plan;
        assert!(bare.objects.len() < 8);
        let no_kg = plan_prompt(&p, AnalysisMode::NoKg, Clients::offline(), &config).unwrap().plan;
        assert!(no_kg.triples.is_empty());
    }

    #[test]
    fn empty_prompts_are_rejected_with_the_text() {
        let err = plan_prompt(&PromptSpec::new("x", "on and with."), AnalysisMode::Full, Clients::offline(), &PlanConfig::default())
            .unwrap_err();
        assert_eq!(err.code(), "NO_OBJECTS_FOUND");
        assert!(err.to_string().contains("on and with."));
    }
}
