//! Bounding-box layout: predicate semantics, the deterministic solver and the
//! LLM-proposed layout path.

mod llm;
mod predicates;
mod solver;
mod svg;

use std::collections::BTreeMap;

pub use llm::{llm_layout, LayoutSource, LlmLayout, LAYOUT_TEMPLATE_ID};
pub use predicates::{
    boxes_satisfy, predicates_to_constraints, predicates_to_constraints_with, relation_satisfied,
    ConstraintKind, LayoutConstraint, PredicateEntry, PredicateTable, PredicateTableError,
    NEAR_DISTANCE,
};
pub use solver::{solve_layout, MAX_LAYOUT_OBJECTS};
pub use svg::render_svg;

use crate::graph::GraphError;
use crate::model::{BoundingBox, Diagnostic};

/// Tunables for the deterministic solver. All sizes are canvas fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutConfig {
    pub anchor_center: (f64, f64),
    pub anchor_size: f64,
    pub sibling_size: f64,
    pub text_height: f64,
    pub text_char_width: f64,
    pub text_min_width: f64,
    pub text_max_width: f64,
    pub max_iterations: usize,
    pub iou_threshold: f64,
    pub near_distance: f64,
    pub rng_seed: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            anchor_center: (0.5, 0.55),
            anchor_size: 0.45,
            sibling_size: 0.22,
            text_height: 0.08,
            text_char_width: 0.04,
            text_min_width: 0.10,
            text_max_width: 0.90,
            max_iterations: 200,
            iou_threshold: 0.05,
            near_distance: NEAR_DISTANCE,
            rng_seed: 0,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let fractions = [
            ("anchor_center.x", self.anchor_center.0),
            ("anchor_center.y", self.anchor_center.1),
            ("anchor_size", self.anchor_size),
            ("sibling_size", self.sibling_size),
            ("text_height", self.text_height),
            ("text_char_width", self.text_char_width),
            ("text_min_width", self.text_min_width),
            ("text_max_width", self.text_max_width),
            ("iou_threshold", self.iou_threshold),
        ];
        for (name, value) in fractions {
            if !(value > 0.0 && value <= 1.0) {
                return Err(LayoutError::InvalidConfig(format!("{name} = {value} is outside (0, 1]")));
            }
        }
        // near is a distance, so it may reach the canvas diagonal
        if !(self.near_distance > 0.0 && self.near_distance <= std::f64::consts::SQRT_2) {
            return Err(LayoutError::InvalidConfig(format!(
                "near_distance = {} is outside (0, sqrt 2]",
                self.near_distance
            )));
        }
        if self.text_min_width > self.text_max_width {
            return Err(LayoutError::InvalidConfig("text_min_width exceeds text_max_width".into()));
        }
        if self.max_iterations == 0 {
            return Err(LayoutError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("LAYOUT_INFEASIBLE: contradictory {axis} constraints among objects {objects:?}")]
    Infeasible { axis: &'static str, objects: Vec<usize> },
    #[error("invalid layout config: {0}")]
    InvalidConfig(String),
    #[error("constraint references object {object} but only {object_count} objects exist")]
    UnknownObject { object: usize, object_count: usize },
    #[error("layout supports at most {max} objects, got {count}")]
    TooManyObjects { count: usize, max: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Solver output: one box per object plus any best-effort findings.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutOutcome {
    pub boxes: BTreeMap<usize, BoundingBox>,
    pub anchor_id: usize,
    pub diagnostics: Vec<Diagnostic>,
    /// Unintended overlaps above the IoU threshold remain.
    pub best_effort: bool,
    /// The heuristic placement violated a constraint and was pulled toward
    /// the feasible reference layout.
    pub repaired: bool,
}
