//! Canonical JSON for plans and other artifacts.
//!
//! Keys sorted, two-space indentation, arrays of scalars on one line,
//! fractions with exactly six decimals, integers as integers, one trailing
//! newline. Equal values always print to equal bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::Value;

use crate::model::{
    validate_plan, BoundingBox, Canvas, Diagnostic, ObjectCategory, PromptSpec, RelationTriple, ScenePlan,
    SceneObject, MICROS, PLAN_SCHEMA_VERSION,
};

/// A JSON value with an explicit fixed-point variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Canon {
    Null,
    Bool(bool),
    Int(i64),
    /// Micro-units, printed with six fractional digits.
    Fixed(i64),
    Str(String),
    Arr(Vec<Canon>),
    Obj(BTreeMap<String, Canon>),
}

impl Canon {
    pub fn str(s: impl Into<String>) -> Self {
        Self::Str(s.into())
    }

    pub fn int(v: impl TryInto<i64>) -> Self {
        Self::Int(v.try_into().unwrap_or(i64::MAX))
    }

    /// Rounds to the nearest micro-unit.
    pub fn fixed(v: f64) -> Self {
        Self::Fixed((v * MICROS as f64).round() as i64)
    }

    pub fn obj<const N: usize>(pairs: [(&str, Canon); N]) -> Self {
        Self::Obj(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    /// Inserts into an object; a no-op on other variants.
    pub fn with(mut self, key: &str, value: Canon) -> Self {
        if let Self::Obj(map) = &mut self {
            map.insert(key.to_string(), value);
        }
        self
    }

    pub fn with_opt(self, key: &str, value: Option<Canon>) -> Self {
        match value {
            Some(v) => self.with(key, v),
            None => self,
        }
    }

    fn is_scalar(&self) -> bool {
        !matches!(self, Self::Arr(_) | Self::Obj(_))
    }

    /// Converts arbitrary JSON; non-integral numbers become fixed-point.
    pub fn from_json(value: &Value) -> Self {
        match value {
            Value::Null => Self::Null,
            Value::Bool(b) => Self::Bool(*b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Self::Int(i),
                None => Self::fixed(n.as_f64().unwrap_or(0.0)),
            },
            Value::String(s) => Self::Str(s.clone()),
            Value::Array(items) => Self::Arr(items.iter().map(Self::from_json).collect()),
            Value::Object(map) => Self::Obj(map.iter().map(|(k, v)| (k.clone(), Self::from_json(v))).collect()),
        }
    }

    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            Self::Null => out.push_str("null"),
            Self::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Self::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Self::Fixed(m) => out.push_str(&format_micros(*m)),
            Self::Str(s) => out.push_str(&serde_json::to_string(s).expect("strings always serialize")),
            Self::Arr(items) if items.is_empty() => out.push_str("[]"),
            Self::Arr(items) if items.iter().all(Canon::is_scalar) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.write(out, indent);
                }
                out.push(']');
            }
            Self::Arr(items) => {
                out.push_str("[\n");
                for (i, item) in items.iter().enumerate() {
                    pad(out, indent + 1);
                    item.write(out, indent + 1);
                    out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
                }
                pad(out, indent);
                out.push(']');
            }
            Self::Obj(map) if map.is_empty() => out.push_str("{}"),
            Self::Obj(map) => {
                out.push_str("{\n");
                for (i, (key, value)) in map.iter().enumerate() {
                    pad(out, indent + 1);
                    out.push_str(&serde_json::to_string(key).expect("strings always serialize"));
                    out.push_str(": ");
                    value.write(out, indent + 1);
                    out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
                }
                pad(out, indent);
                out.push('}');
            }
        }
    }
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

pub fn format_micros(m: i64) -> String {
    let sign = if m < 0 { "-" } else { "" };
    let abs = m.unsigned_abs();
    format!("{sign}{}.{:06}", abs / MICROS as u64, abs % MICROS as u64)
}

pub fn box_canon(b: &BoundingBox) -> Canon {
    Canon::Arr(b.micros().into_iter().map(Canon::Fixed).collect())
}

pub fn prompt_canon(p: &PromptSpec) -> Canon {
    Canon::obj([("id", Canon::str(&p.id)), ("raw_text", Canon::str(&p.raw_text))])
        .with_opt("augmented_text", p.augmented_text.as_ref().map(Canon::str))
}

pub fn canvas_canon(c: Canvas) -> Canon {
    Canon::obj([("height_px", Canon::int(c.height_px)), ("width_px", Canon::int(c.width_px))])
}

fn object_canon(o: &SceneObject) -> Canon {
    Canon::obj([
        ("caption", Canon::str(&o.caption)),
        ("category", Canon::str(o.category.as_str())),
        ("group_key", Canon::str(&o.group_key)),
        ("instance_index", Canon::int(o.instance_index)),
        ("object_id", Canon::int(o.object_id)),
    ])
    .with_opt("text_payload", o.text_payload.as_ref().map(Canon::str))
    .with_opt("pn_key", o.pn_key.as_ref().map(Canon::str))
}

pub fn plan_canon(plan: &ScenePlan) -> Canon {
    Canon::obj([
        ("schema_version", Canon::str(&plan.schema_version)),
        ("prompt", prompt_canon(&plan.prompt)),
        ("canvas", canvas_canon(plan.canvas)),
        ("objects", Canon::Arr(plan.objects.iter().map(object_canon).collect())),
        (
            "triples",
            Canon::Arr(
                plan.triples
                    .iter()
                    .map(|t| {
                        Canon::obj([
                            ("subject_id", Canon::int(t.subject_id)),
                            ("predicate", Canon::str(&t.predicate)),
                            ("object_id", Canon::int(t.object_id)),
                        ])
                    })
                    .collect(),
            ),
        ),
        ("anchor_id", Canon::int(plan.anchor_id)),
        (
            "boxes",
            Canon::Obj(plan.boxes.iter().map(|(id, b)| (id.to_string(), box_canon(b))).collect()),
        ),
    ])
}

#[derive(Debug, thiserror::Error)]
#[error("refusing to serialize an invalid plan: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct InvalidPlan(pub Vec<Diagnostic>);

/// Canonical bytes of a valid plan.
pub fn serialize_plan(plan: &ScenePlan) -> Result<Vec<u8>, InvalidPlan> {
    let diagnostics = validate_plan(plan);
    if !diagnostics.is_empty() {
        return Err(InvalidPlan(diagnostics));
    }
    Ok(plan_canon(plan).to_pretty().into_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanErrorCode {
    SchemaVersionMismatch,
    MalformedPlan,
}

impl PlanErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SchemaVersionMismatch => "SCHEMA_VERSION_MISMATCH",
            Self::MalformedPlan => "MALFORMED_PLAN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}: {path}: {message}", code.as_str())]
pub struct PlanParseError {
    pub code: PlanErrorCode,
    /// JSON-pointer-like location, `$` for the root.
    pub path: String,
    pub message: String,
}

/// Field access with located errors.
pub(crate) struct Cursor<'a> {
    pub value: &'a Value,
    pub path: String,
}

impl<'a> Cursor<'a> {
    pub fn root(value: &'a Value) -> Self {
        Self {
            value,
            path: "$".into(),
        }
    }

    pub fn fail<T>(&self, message: impl Into<String>) -> Result<T, PlanParseError> {
        Err(PlanParseError {
            code: PlanErrorCode::MalformedPlan,
            path: self.path.clone(),
            message: message.into(),
        })
    }

    fn object(&self) -> Result<&'a serde_json::Map<String, Value>, PlanParseError> {
        match self.value.as_object() {
            Some(map) => Ok(map),
            None => self.fail("expected an object"),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn keys(&self, allowed: &[&str]) -> Result<(), PlanParseError> {
        for key in self.object()?.keys() {
            if !allowed.contains(&key.as_str()) {
                return self.fail(format!("unexpected field `{key}`"));
            }
        }
        Ok(())
    }

    pub fn field(&self, key: &str) -> Result<Cursor<'a>, PlanParseError> {
        match self.object()?.get(key) {
            Some(value) => Ok(Cursor {
                value,
                path: format!("{}.{key}", self.path),
            }),
            None => self.fail(format!("missing field `{key}`")),
        }
    }

    pub fn opt_field(&self, key: &str) -> Result<Option<Cursor<'a>>, PlanParseError> {
        Ok(self
            .object()?
            .get(key)
            .filter(|v| !v.is_null())
            .map(|value| Cursor {
                value,
                path: format!("{}.{key}", self.path),
            }))
    }

    pub fn string(&self) -> Result<String, PlanParseError> {
        match self.value.as_str() {
            Some(s) => Ok(s.to_string()),
            None => self.fail("expected a string"),
        }
    }

    pub fn uint(&self) -> Result<u64, PlanParseError> {
        match self.value.as_u64() {
            Some(v) => Ok(v),
            None => self.fail("expected a non-negative integer"),
        }
    }

    pub fn usize(&self) -> Result<usize, PlanParseError> {
        let v = self.uint()?;
        usize::try_from(v).or_else(|_| self.fail("integer out of range"))
    }

    pub fn fraction(&self) -> Result<f64, PlanParseError> {
        match self.value.as_f64() {
            Some(v) if v.is_finite() => Ok(v),
            _ => self.fail("expected a number"),
        }
    }

    pub fn items(&self) -> Result<Vec<Cursor<'a>>, PlanParseError> {
        match self.value.as_array() {
            Some(items) => Ok(items
                .iter()
                .enumerate()
                .map(|(i, value)| Cursor {
                    value,
                    path: format!("{}[{i}]", self.path),
                })
                .collect()),
            None => self.fail("expected an array"),
        }
    }

    pub fn entries(&self) -> Result<Vec<(&'a String, Cursor<'a>)>, PlanParseError> {
        Ok(self
            .object()?
            .iter()
            .map(|(k, value)| {
                (
                    k,
                    Cursor {
                        value,
                        path: format!("{}.{k}", self.path),
                    },
                )
            })
            .collect())
    }
}

pub(crate) fn parse_prompt(c: &Cursor) -> Result<PromptSpec, PlanParseError> {
    c.keys(&["id", "raw_text", "augmented_text"])?;
    Ok(PromptSpec {
        id: c.field("id")?.string()?,
        raw_text: c.field("raw_text")?.string()?,
        augmented_text: c.opt_field("augmented_text")?.map(|a| a.string()).transpose()?,
    })
}

pub(crate) fn parse_canvas(c: &Cursor) -> Result<Canvas, PlanParseError> {
    c.keys(&["width_px", "height_px"])?;
    let dim = |key: &str| -> Result<u32, PlanParseError> {
        let f = c.field(key)?;
        match u32::try_from(f.uint()?) {
            Ok(v) if v > 0 => Ok(v),
            _ => f.fail("expected a positive 32-bit integer"),
        }
    };
    Ok(Canvas {
        width_px: dim("width_px")?,
        height_px: dim("height_px")?,
    })
}

pub(crate) fn parse_box(c: &Cursor) -> Result<BoundingBox, PlanParseError> {
    let items = c.items()?;
    if items.len() != 4 {
        return c.fail(format!("expected [x, y, w, h], got {} values", items.len()));
    }
    let v: Vec<f64> = items.iter().map(Cursor::fraction).collect::<Result<_, _>>()?;
    Ok(BoundingBox::from_fractions(v[0], v[1], v[2], v[3]))
}

fn parse_object(c: &Cursor) -> Result<SceneObject, PlanParseError> {
    c.keys(&[
        "caption",
        "category",
        "group_key",
        "instance_index",
        "object_id",
        "pn_key",
        "text_payload",
    ])?;
    let category_field = c.field("category")?;
    let category: ObjectCategory = match category_field.string()?.parse() {
        Ok(cat) => cat,
        Err(e) => return category_field.fail(e),
    };
    Ok(SceneObject {
        object_id: c.field("object_id")?.usize()?,
        caption: c.field("caption")?.string()?,
        category,
        group_key: c.field("group_key")?.string()?,
        instance_index: c.field("instance_index")?.usize()?,
        text_payload: c.opt_field("text_payload")?.map(|f| f.string()).transpose()?,
        pn_key: c.opt_field("pn_key")?.map(|f| f.string()).transpose()?,
    })
}

fn parse_triple(c: &Cursor) -> Result<RelationTriple, PlanParseError> {
    c.keys(&["subject_id", "predicate", "object_id"])?;
    Ok(RelationTriple {
        subject_id: c.field("subject_id")?.usize()?,
        predicate: c.field("predicate")?.string()?,
        object_id: c.field("object_id")?.usize()?,
    })
}

/// Structural decoding only; run `validate_plan` for invariants.
pub fn parse_plan(bytes: &[u8]) -> Result<ScenePlan, PlanParseError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| PlanParseError {
        code: PlanErrorCode::MalformedPlan,
        path: "$".into(),
        message: format!("not JSON: {e}"),
    })?;
    let root = Cursor::root(&value);
    let version_field = root.field("schema_version")?;
    let schema_version = version_field.string()?;
    if schema_version != PLAN_SCHEMA_VERSION {
        return Err(PlanParseError {
            code: PlanErrorCode::SchemaVersionMismatch,
            path: version_field.path,
            message: format!("expected `{PLAN_SCHEMA_VERSION}`, found `{schema_version}`"),
        });
    }
    root.keys(&[
        "schema_version",
        "prompt",
        "canvas",
        "objects",
        "triples",
        "anchor_id",
        "boxes",
    ])?;
    let mut boxes = BTreeMap::new();
    for (key, c) in root.field("boxes")?.entries()? {
        let id = match key.parse::<usize>() {
            Ok(id) if id.to_string() == *key => id,
            _ => return c.fail(format!("box key `{key}` is not a decimal object id")),
        };
        boxes.insert(id, parse_box(&c)?);
    }
    Ok(ScenePlan {
        schema_version,
        prompt: parse_prompt(&root.field("prompt")?)?,
        canvas: parse_canvas(&root.field("canvas")?)?,
        objects: root
            .field("objects")?
            .items()?
            .iter()
            .map(parse_object)
            .collect::<Result<_, _>>()?,
        triples: root
            .field("triples")?
            .items()?
            .iter()
            .map(parse_triple)
            .collect::<Result<_, _>>()?,
        anchor_id: root.field("anchor_id")?.usize()?,
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apple_plan() -> ScenePlan {
        ScenePlan {
            schema_version: PLAN_SCHEMA_VERSION.into(),
            prompt: PromptSpec::new("apple", "a red apple"),
            canvas: Canvas::default(),
            objects: vec![SceneObject::general(0, "a red apple", "red apple")],
            triples: vec![],
            anchor_id: 0,
            boxes: BTreeMap::from([(0, BoundingBox::from_fractions(0.275, 0.325, 0.45, 0.45))]),
        }
    }

    #[test]
    fn fixed_point_formatting() {
        assert_eq!(format_micros(200_000), "0.200000");
        assert_eq!(format_micros(1_000_000), "1.000000");
        assert_eq!(format_micros(-730_000), "-0.730000");
        assert_eq!(format_micros(5), "0.000005");
    }

    #[test]
    fn apple_plan_bytes() {
        let text = String::from_utf8(serialize_plan(&apple_plan()).unwrap()).unwrap();
        let expected = r#"{
  "anchor_id": 0,
  "boxes": {
    "0": [0.275000, 0.325000, 0.450000, 0.450000]
  },
  "canvas": {
    "height_px": 512,
    "width_px": 512
  },
  "objects": [
    {
      "caption": "a red apple",
      "category": "GO",
      "group_key": "red apple",
      "instance_index": 0,
      "object_id": 0
    }
  ],
  "prompt": {
    "id": "apple",
    "raw_text": "a red apple"
  },
  "schema_version": "pcig-plan/1",
  "triples": []
}
"#;
        assert_eq!(text, expected);
        assert_eq!(parse_plan(text.as_bytes()).unwrap(), apple_plan());
    }

    #[test]
    fn version_and_structure_errors_carry_paths() {
        let text = String::from_utf8(serialize_plan(&apple_plan()).unwrap()).unwrap();
        let old = text.replace("pcig-plan/1", "pcig-plan/0");
        let err = parse_plan(old.as_bytes()).unwrap_err();
        assert_eq!((err.code, err.path.as_str()), (PlanErrorCode::SchemaVersionMismatch, "$.schema_version"));

        let bad_box = text.replace("0.450000, 0.450000]", "0.450000]");
        let err = parse_plan(bad_box.as_bytes()).unwrap_err();
        assert_eq!((err.code, err.path.as_str()), (PlanErrorCode::MalformedPlan, "$.boxes.0"));

        let bad_cat = text.replace("\"GO\"", "\"XX\"");
        assert_eq!(parse_plan(bad_cat.as_bytes()).unwrap_err().path, "$.objects[0].category");

        let extra = text.replace("\"anchor_id\": 0,", "\"anchor_id\": 0, \"extra\": 1,");
        assert_eq!(parse_plan(extra.as_bytes()).unwrap_err().code, PlanErrorCode::MalformedPlan);

        assert_eq!(parse_plan(b"[1, 2").unwrap_err().path, "$");
    }

    #[test]
    fn invalid_plans_are_not_serialized() {
        let mut plan = apple_plan();
        plan.anchor_id = 4;
        assert!(serialize_plan(&plan).is_err());
    }

    #[test]
    fn strings_are_escaped() {
        let c = Canon::obj([("q", Canon::str("say \"hi\"\n"))]);
        assert_eq!(c.to_pretty(), "{\n  \"q\": \"say \\\"hi\\\"\\n\"\n}\n");
    }
}
