//! Core scene-plan types and invariant validation.
//!
//! Box coordinates are stored as integer micro-units (millionths of the canvas
//! edge). That keeps canonical serialization exact: every plan that can be
//! constructed prints to six fractional digits and parses back bit-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::layout::{relation_satisfied, PredicateTable};

/// Schema tag written into every plan file.
pub const PLAN_SCHEMA_VERSION: &str = "pcig-plan/1";

/// Micro-units per canvas edge.
pub const MICROS: i64 = 1_000_000;

/// Smallest renderable box edge, in micro-units (0.01 of the canvas).
pub const MIN_BOX_MICROS: i64 = 10_000;

/// Slack allowed on the canvas edge when checking `x + w <= 1`.
const CANVAS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_text: Option<String>,
}

impl PromptSpec {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            raw_text: raw_text.into(),
            augmented_text: None,
        }
    }

    pub fn with_augmented(mut self, text: impl Into<String>) -> Self {
        self.augmented_text = Some(text.into());
        self
    }

    /// Text fed to analysis: the augmented variant when one exists.
    pub fn analysis_text(&self) -> &str {
        match &self.augmented_text {
            Some(text) if !text.trim().is_empty() => text,
            _ => &self.raw_text,
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.raw_text.trim().is_empty()
    }
}

/// Object category driving the generation route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectCategory {
    /// General object rendered by the layout backend.
    #[serde(rename = "GO")]
    Go,
    /// Scene text rendered by the visual text module.
    #[serde(rename = "TEXT")]
    Text,
    /// Proper-noun entity conditioned on a reference image.
    #[serde(rename = "PN")]
    Pn,
}

impl ObjectCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Go => "GO",
            Self::Text => "TEXT",
            Self::Pn => "PN",
        }
    }
}

impl fmt::Display for ObjectCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GO" => Ok(Self::Go),
            "TEXT" => Ok(Self::Text),
            "PN" => Ok(Self::Pn),
            other => Err(format!("unknown object category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneObject {
    /// Position in the plan's object list.
    pub object_id: usize,
    pub caption: String,
    pub category: ObjectCategory,
    /// Shared by every instance expanded from one counted mention.
    pub group_key: String,
    pub instance_index: usize,
    pub text_payload: Option<String>,
    /// Slug used by the proper-noun image resolver.
    pub pn_key: Option<String>,
}

impl SceneObject {
    pub fn general(object_id: usize, caption: impl Into<String>, group_key: impl Into<String>) -> Self {
        Self {
            object_id,
            caption: caption.into(),
            category: ObjectCategory::Go,
            group_key: group_key.into(),
            instance_index: 0,
            text_payload: None,
            pn_key: None,
        }
    }

    /// Characters used for text-box sizing.
    pub fn display_len(&self) -> usize {
        self.text_payload
            .as_deref()
            .unwrap_or(&self.caption)
            .chars()
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationTriple {
    pub subject_id: usize,
    pub predicate: String,
    pub object_id: usize,
}

impl RelationTriple {
    pub fn new(subject_id: usize, predicate: impl AsRef<str>, object_id: usize) -> Self {
        Self {
            subject_id,
            predicate: normalize_predicate(predicate.as_ref()),
            object_id,
        }
    }
}

/// Lowercases and collapses whitespace.
pub fn normalize_predicate(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// `[x, y, w, h]` on the canvas, origin top-left, in micro-units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

pub(crate) fn to_micros(v: f64) -> i64 {
    (v * MICROS as f64).round() as i64
}

impl BoundingBox {
    pub const fn from_micros(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    /// Rounds each component to the nearest micro-unit.
    pub fn from_fractions(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::from_micros(to_micros(x), to_micros(y), to_micros(w), to_micros(h))
    }

    /// Rounds the edges rather than the extents, so edge orderings survive.
    pub fn from_edges(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        let (l, t, r, b) = (to_micros(left), to_micros(top), to_micros(right), to_micros(bottom));
        Self::from_micros(l, t, r - l, b - t)
    }

    pub fn x(&self) -> f64 {
        self.x as f64 / MICROS as f64
    }
    pub fn y(&self) -> f64 {
        self.y as f64 / MICROS as f64
    }
    pub fn w(&self) -> f64 {
        self.w as f64 / MICROS as f64
    }
    pub fn h(&self) -> f64 {
        self.h as f64 / MICROS as f64
    }

    pub fn micros(&self) -> [i64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn right_micros(&self) -> i64 {
        self.x + self.w
    }
    pub fn bottom_micros(&self) -> i64 {
        self.y + self.h
    }

    /// Twice the center, in micro-units; exact.
    pub fn center2_micros(&self) -> (i64, i64) {
        (2 * self.x + self.w, 2 * self.y + self.h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x() + self.w() / 2.0, self.y() + self.h() / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w() * self.h()
    }

    pub fn intersection_micros(&self, other: &Self) -> i128 {
        let dx = self.right_micros().min(other.right_micros()) - self.x.max(other.x);
        let dy = self.bottom_micros().min(other.bottom_micros()) - self.y.max(other.y);
        if dx <= 0 || dy <= 0 {
            0
        } else {
            dx as i128 * dy as i128
        }
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection_micros(other);
        if inter == 0 {
            return 0.0;
        }
        let union = self.w as i128 * self.h as i128 + other.w as i128 * other.h as i128 - inter;
        inter as f64 / union as f64
    }

    pub fn contains(&self, inner: &Self) -> bool {
        inner.x >= self.x
            && inner.y >= self.y
            && inner.right_micros() <= self.right_micros()
            && inner.bottom_micros() <= self.bottom_micros()
    }

    pub fn within_canvas(&self) -> bool {
        self.x >= 0
            && self.y >= 0
            && self.x() + self.w() <= 1.0 + CANVAS_EPS
            && self.y() + self.h() <= 1.0 + CANVAS_EPS
    }

    pub fn meets_min_size(&self) -> bool {
        self.w >= MIN_BOX_MICROS && self.h >= MIN_BOX_MICROS
    }

    /// Pixel-space box `[x, y, w, h]` rounded to the nearest pixel.
    pub fn to_pixels(&self, canvas: Canvas) -> [u32; 4] {
        let scale = |v: i64, px: u32| ((v as f64 / MICROS as f64) * px as f64).round().max(0.0) as u32;
        [
            scale(self.x, canvas.width_px),
            scale(self.y, canvas.height_px),
            scale(self.w, canvas.width_px),
            scale(self.h, canvas.height_px),
        ]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.6}, {:.6}, {:.6}, {:.6}]", self.x(), self.y(), self.w(), self.h())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Canvas {
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for Canvas {
    fn default() -> Self {
        Self {
            width_px: 512,
            height_px: 512,
        }
    }
}

impl FromStr for Canvas {
    type Err = String;

    /// Parses `WxH`, e.g. `512x512`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("canvas `{s}` is not WxH"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| format!("canvas dimension `{v}` must be a positive integer"))
        };
        Ok(Self {
            width_px: parse(w)?,
            height_px: parse(h)?,
        })
    }
}

impl fmt::Display for Canvas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width_px, self.height_px)
    }
}

/// The end-to-end planning artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenePlan {
    pub schema_version: String,
    pub prompt: PromptSpec,
    pub canvas: Canvas,
    pub objects: Vec<SceneObject>,
    pub triples: Vec<RelationTriple>,
    pub anchor_id: usize,
    pub boxes: BTreeMap<usize, BoundingBox>,
}

impl ScenePlan {
    pub fn object(&self, id: usize) -> Option<&SceneObject> {
        self.objects.get(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// Diagnostic codes, declared in their sort order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiagnosticCode {
    UnsupportedSchemaVersion,
    EmptyPrompt,
    EmptyPromptId,
    InvalidCanvas,
    NoObjects,
    AnchorOutOfRange,
    ObjectIdMismatch,
    EmptyCaption,
    TextPayloadMissing,
    TextPayloadUnexpected,
    PnKeyMissing,
    PnKeyInvalid,
    PnKeyUnexpected,
    EmptyGroupKey,
    InstanceIndexOutOfRange,
    DuplicateInstance,
    SelfRelation,
    DanglingRelation,
    PredicateNotNormalized,
    BoxMissing,
    BoxOrphan,
    BoxOutOfCanvas,
    BoxTooSmall,
    RelationViolated,
    UnresolvedMention,
    LayoutBestEffort,
    LayoutFallback,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::UnsupportedSchemaVersion => "UNSUPPORTED_SCHEMA_VERSION",
            Self::EmptyPrompt => "EMPTY_PROMPT",
            Self::EmptyPromptId => "EMPTY_PROMPT_ID",
            Self::InvalidCanvas => "INVALID_CANVAS",
            Self::NoObjects => "NO_OBJECTS",
            Self::AnchorOutOfRange => "ANCHOR_OUT_OF_RANGE",
            Self::ObjectIdMismatch => "OBJECT_ID_MISMATCH",
            Self::EmptyCaption => "EMPTY_CAPTION",
            Self::TextPayloadMissing => "TEXT_PAYLOAD_MISSING",
            Self::TextPayloadUnexpected => "TEXT_PAYLOAD_UNEXPECTED",
            Self::PnKeyMissing => "PN_KEY_MISSING",
            Self::PnKeyInvalid => "PN_KEY_INVALID",
            Self::PnKeyUnexpected => "PN_KEY_UNEXPECTED",
            Self::EmptyGroupKey => "EMPTY_GROUP_KEY",
            Self::InstanceIndexOutOfRange => "INSTANCE_INDEX_OUT_OF_RANGE",
            Self::DuplicateInstance => "DUPLICATE_INSTANCE",
            Self::SelfRelation => "SELF_RELATION",
            Self::DanglingRelation => "DANGLING_RELATION",
            Self::PredicateNotNormalized => "PREDICATE_NOT_NORMALIZED",
            Self::BoxMissing => "BOX_MISSING",
            Self::BoxOrphan => "BOX_ORPHAN",
            Self::BoxOutOfCanvas => "BOX_OUT_OF_CANVAS",
            Self::BoxTooSmall => "BOX_TOO_SMALL",
            Self::RelationViolated => "RELATION_VIOLATED",
            Self::UnresolvedMention => "UNRESOLVED_MENTION",
            Self::LayoutBestEffort => "LAYOUT_BEST_EFFORT",
            Self::LayoutFallback => "LAYOUT_FALLBACK",
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub severity: Severity,
    pub message: String,
    pub object_ids: Vec<usize>,
}

impl Diagnostic {
    pub fn error(code: DiagnosticCode, message: impl Into<String>, object_ids: Vec<usize>) -> Self {
        Self {
            code,
            severity: Severity::Error,
            message: message.into(),
            object_ids,
        }
    }

    pub fn warning(code: DiagnosticCode, message: impl Into<String>, object_ids: Vec<usize>) -> Self {
        Self {
            code,
            severity: Severity::Warning,
            message: message.into(),
            object_ids,
        }
    }

    fn sort_key(&self) -> (Option<usize>, DiagnosticCode) {
        (self.object_ids.first().copied(), self.code)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}[{}]: {}", self.code, self.message)?;
        if !self.object_ids.is_empty() {
            write!(f, " (objects {:?})", self.object_ids)?;
        }
        Ok(())
    }
}

/// `[a-z0-9-]+`
pub fn is_valid_pn_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// Lowercase slug with runs of non-alphanumerics collapsed to `-`.
pub fn slugify(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_dash = false;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            if pending_dash && !out.is_empty() {
                out.push('-');
            }
            pending_dash = false;
            out.push(c.to_ascii_lowercase());
        } else {
            pending_dash = true;
        }
    }
    out
}

/// Validates a plan against the default predicate table.
pub fn validate_plan(plan: &ScenePlan) -> Vec<Diagnostic> {
    validate_plan_with(plan, PredicateTable::builtin())
}

/// Checks every plan invariant. Failures are returned as data, sorted by
/// `(first object id, code)`; plan-level findings come first.
pub fn validate_plan_with(plan: &ScenePlan, table: &PredicateTable) -> Vec<Diagnostic> {
    use DiagnosticCode as C;
    let mut out = Vec::new();
    let n = plan.objects.len();

    if plan.schema_version != PLAN_SCHEMA_VERSION {
        out.push(Diagnostic::error(
            C::UnsupportedSchemaVersion,
            format!("schema_version `{}` is not `{PLAN_SCHEMA_VERSION}`", plan.schema_version),
            vec![],
        ));
    }
    if !plan.prompt.is_valid() {
        out.push(Diagnostic::error(C::EmptyPrompt, "prompt text is empty", vec![]));
    }
    if plan.prompt.id.trim().is_empty() {
        out.push(Diagnostic::error(C::EmptyPromptId, "prompt id is empty", vec![]));
    }
    if plan.canvas.width_px == 0 || plan.canvas.height_px == 0 {
        out.push(Diagnostic::error(
            C::InvalidCanvas,
            format!("canvas {} must have positive dimensions", plan.canvas),
            vec![],
        ));
    }
    if n == 0 {
        out.push(Diagnostic::error(C::NoObjects, "plan has no objects", vec![]));
    }
    if plan.anchor_id >= n {
        out.push(Diagnostic::error(
            C::AnchorOutOfRange,
            format!("anchor_id {} does not reference an object", plan.anchor_id),
            vec![],
        ));
    }

    let mut group_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for obj in &plan.objects {
        *group_sizes.entry(obj.group_key.as_str()).or_default() += 1;
    }
    let mut seen_instances: BTreeSet<(&str, usize)> = BTreeSet::new();

    for (index, obj) in plan.objects.iter().enumerate() {
        let id = vec![index];
        if obj.object_id != index {
            out.push(Diagnostic::error(
                C::ObjectIdMismatch,
                format!("object at position {index} carries object_id {}", obj.object_id),
                id.clone(),
            ));
        }
        if obj.caption.trim().is_empty() {
            out.push(Diagnostic::error(C::EmptyCaption, "caption is empty", id.clone()));
        }
        let has_payload = obj.text_payload.as_deref().is_some_and(|t| !t.trim().is_empty());
        match (obj.category == ObjectCategory::Text, has_payload) {
            (true, false) => out.push(Diagnostic::error(
                C::TextPayloadMissing,
                "TEXT object has no text_payload",
                id.clone(),
            )),
            (false, _) if obj.text_payload.is_some() => out.push(Diagnostic::error(
                C::TextPayloadUnexpected,
                format!("{} object carries a text_payload", obj.category),
                id.clone(),
            )),
            _ => {}
        }
        match (&obj.pn_key, obj.category == ObjectCategory::Pn) {
            (None, true) => out.push(Diagnostic::error(
                C::PnKeyMissing,
                "PN object has no pn_key",
                id.clone(),
            )),
            (Some(key), true) if !is_valid_pn_key(key) => out.push(Diagnostic::error(
                C::PnKeyInvalid,
                format!("pn_key `{key}` must match [a-z0-9-]+"),
                id.clone(),
            )),
            (Some(_), false) => out.push(Diagnostic::error(
                C::PnKeyUnexpected,
                format!("{} object carries a pn_key", obj.category),
                id.clone(),
            )),
            _ => {}
        }
        if obj.group_key.trim().is_empty() {
            out.push(Diagnostic::error(C::EmptyGroupKey, "group_key is empty", id.clone()));
        }
        let group_size = group_sizes[obj.group_key.as_str()];
        if obj.instance_index >= group_size {
            out.push(Diagnostic::error(
                C::InstanceIndexOutOfRange,
                format!(
                    "instance_index {} is not below group `{}` size {group_size}",
                    obj.instance_index, obj.group_key
                ),
                id.clone(),
            ));
        }
        if !seen_instances.insert((obj.group_key.as_str(), obj.instance_index)) {
            out.push(Diagnostic::error(
                C::DuplicateInstance,
                format!("instance {} of group `{}` appears twice", obj.instance_index, obj.group_key),
                id.clone(),
            ));
        }
        match plan.boxes.get(&index) {
            None => out.push(Diagnostic::error(C::BoxMissing, "object has no bounding box", id)),
            Some(bbox) => {
                if !bbox.within_canvas() {
                    out.push(Diagnostic::error(
                        C::BoxOutOfCanvas,
                        format!("box {bbox} leaves the canvas"),
                        id.clone(),
                    ));
                }
                if !bbox.meets_min_size() {
                    out.push(Diagnostic::error(
                        C::BoxTooSmall,
                        format!("box {bbox} is below the 0.01 minimum size"),
                        id,
                    ));
                }
            }
        }
    }

    for key in plan.boxes.keys().filter(|k| **k >= n) {
        out.push(Diagnostic::error(
            C::BoxOrphan,
            format!("box keyed {key} references no object"),
            vec![*key],
        ));
    }

    for (t_index, triple) in plan.triples.iter().enumerate() {
        let ids = vec![triple.subject_id, triple.object_id];
        let dangling = triple.subject_id >= n || triple.object_id >= n;
        if dangling {
            out.push(Diagnostic::error(
                C::DanglingRelation,
                format!("triple {t_index} references a missing object"),
                ids.clone(),
            ));
        }
        if triple.subject_id == triple.object_id {
            out.push(Diagnostic::error(
                C::SelfRelation,
                format!("triple {t_index} relates an object to itself"),
                ids.clone(),
            ));
        }
        if triple.predicate.is_empty() || triple.predicate != normalize_predicate(&triple.predicate) {
            out.push(Diagnostic::error(
                C::PredicateNotNormalized,
                format!("predicate `{}` is not lowercase single-spaced", triple.predicate),
                ids.clone(),
            ));
        }
        if dangling || triple.subject_id == triple.object_id {
            continue;
        }
        let Some(constraint) = table.spatial_constraint(triple) else {
            continue;
        };
        let violated = !relation_satisfied(&constraint, &plan.boxes).unwrap_or(true);
        if violated {
            out.push(Diagnostic::error(
                C::RelationViolated,
                format!(
                    "boxes do not satisfy {} derived from `{}`",
                    constraint.kind, triple.predicate
                ),
                ids,
            ));
        }
    }

    out.sort_by_key(Diagnostic::sort_key);
    out
}
