//! LLM-proposed boxes, validated and clamped, with the solver as fallback.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::Value;

use super::{boxes_satisfy, solve_layout, LayoutConfig, LayoutConstraint, LayoutError};
use crate::graph::{select_anchor, SceneGraph};
use crate::llm::{vars, LlmClient};
use crate::model::{BoundingBox, Canvas, Diagnostic, DiagnosticCode, PromptSpec, SceneObject, MIN_BOX_MICROS};

pub const LAYOUT_TEMPLATE_ID: &str = "layout/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutSource {
    Llm,
    Solver,
}

impl LayoutSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Llm => "llm",
            Self::Solver => "solver",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmLayout {
    pub boxes: BTreeMap<usize, BoundingBox>,
    pub anchor_id: usize,
    pub source: LayoutSource,
    pub diagnostics: Vec<Diagnostic>,
}

fn describe_objects(objects: &[SceneObject]) -> String {
    let mut out = String::new();
    for o in objects {
        let _ = writeln!(out, "{}: {} [{}]", o.object_id, o.caption, o.category);
    }
    out.trim_end().to_string()
}

fn describe_triples(objects: &[SceneObject], graph: &SceneGraph) -> String {
    if graph.edges().is_empty() {
        return "(none)".into();
    }
    let caption = |id: usize| objects.get(id).map(|o| o.caption.as_str()).unwrap_or("?");
    let mut out = String::new();
    for e in graph.edges() {
        let _ = writeln!(
            out,
            "({} {}, {}, {} {})",
            e.subject_id,
            caption(e.subject_id),
            e.predicate,
            e.object_id,
            caption(e.object_id)
        );
    }
    out.trim_end().to_string()
}

/// Clamps a fractional box: extents to `[0.01, 1]`, then the origin so the
/// box stays on the canvas.
pub(crate) fn clamp_box(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    let min = MIN_BOX_MICROS as f64 / 1e6;
    let w = w.clamp(min, 1.0);
    let h = h.clamp(min, 1.0);
    BoundingBox::from_fractions(x.clamp(0.0, 1.0 - w), y.clamp(0.0, 1.0 - h), w, h)
}

/// Decodes `{"boxes": {"id": [x, y, w, h]}, "canvas"?: {...}}`. Pixel
/// values are normalized when a canvas is echoed; every object must be
/// covered exactly once.
pub(crate) fn decode_boxes(value: &Value, object_count: usize) -> Result<BTreeMap<usize, BoundingBox>, String> {
    let boxes = value
        .get("boxes")
        .and_then(Value::as_object)
        .ok_or("response has no `boxes` object")?;
    let scale = match value.get("canvas") {
        None | Some(Value::Null) => (1.0, 1.0),
        Some(canvas) => {
            let dim = |k: &str| {
                canvas
                    .get(k)
                    .and_then(Value::as_f64)
                    .filter(|v| *v > 0.0)
                    .ok_or_else(|| format!("canvas.{k} must be a positive number"))
            };
            (dim("width_px")?, dim("height_px")?)
        }
    };
    let mut out = BTreeMap::new();
    for (key, raw) in boxes {
        let id: usize = key.trim().parse().map_err(|_| format!("box key `{key}` is not an object id"))?;
        if id >= object_count {
            return Err(format!("box key {id} references no object"));
        }
        let nums: Vec<f64> = raw
            .as_array()
            .filter(|a| a.len() == 4)
            .and_then(|a| a.iter().map(Value::as_f64).collect())
            .ok_or_else(|| format!("boxes.{key} must be [x, y, w, h]"))?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(format!("boxes.{key} has a non-finite value"));
        }
        let bbox = clamp_box(nums[0] / scale.0, nums[1] / scale.1, nums[2] / scale.0, nums[3] / scale.1);
        out.insert(id, bbox);
    }
    if out.len() != object_count {
        let missing: Vec<usize> = (0..object_count).filter(|i| !out.contains_key(i)).collect();
        return Err(format!("no box for objects {missing:?}"));
    }
    Ok(out)
}

/// Asks the client for boxes; on any failure (transport, protocol, coverage
/// or a violated constraint) returns the solver's layout instead and says so
/// in a `LAYOUT_FALLBACK` diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn llm_layout(
    prompt: &PromptSpec,
    objects: &[SceneObject],
    graph: &SceneGraph,
    constraints: &[LayoutConstraint],
    canvas: Canvas,
    client: &LlmClient,
    config: &LayoutConfig,
) -> Result<LlmLayout, LayoutError> {
    let anchor_id = select_anchor(graph)?;
    let variables = vars([
        ("prompt", prompt.analysis_text().to_string()),
        ("canvas", canvas.to_string()),
        ("objects", describe_objects(objects)),
        ("triples", describe_triples(objects, graph)),
        ("anchor", anchor_id.to_string()),
    ]);
    let proposed = client
        .complete_json(LAYOUT_TEMPLATE_ID, &variables, |v| decode_boxes(v, objects.len()))
        .map_err(|e| e.to_string())
        .and_then(|boxes| {
            let broken: Vec<&LayoutConstraint> = constraints
                .iter()
                .filter(|c| !boxes_satisfy(c.kind, &boxes[&c.a], &boxes[&c.b]))
                .collect();
            match broken.first() {
                None => Ok(boxes),
                Some(c) => Err(format!(
                    "{} proposed boxes violate {} constraint(s), first {}({}, {})",
                    LayoutSource::Llm.as_str(),
                    broken.len(),
                    c.kind,
                    c.a,
                    c.b
                )),
            }
        });

    match proposed {
        Ok(boxes) => Ok(LlmLayout {
            boxes,
            anchor_id,
            source: LayoutSource::Llm,
            diagnostics: Vec::new(),
        }),
        Err(reason) => {
            let outcome = solve_layout(graph, objects, constraints, config)?;
            let mut diagnostics = vec![Diagnostic::warning(
                DiagnosticCode::LayoutFallback,
                format!("LLM layout rejected, using solver: {reason}"),
                vec![],
            )];
            diagnostics.extend(outcome.diagnostics);
            Ok(LlmLayout {
                boxes: outcome.boxes,
                anchor_id: outcome.anchor_id,
                source: LayoutSource::Solver,
                diagnostics,
            })
        }
    }
}
