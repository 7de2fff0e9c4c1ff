use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

use super::resolver::PnImageResolver;
use super::PipelineError;
use crate::canonical::{box_canon, canvas_canon, parse_box, parse_canvas, Canon, Cursor, PlanParseError};
use crate::model::{validate_plan, BoundingBox, Canvas, ObjectCategory, ScenePlan};

pub const REQUEST_SCHEMA_VERSION: &str = "pcig-request/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Route {
    LayoutBackend,
    TextModule,
    PnComposite,
}

impl Route {
    pub fn for_category(category: ObjectCategory) -> Self {
        match category {
            ObjectCategory::Go => Self::LayoutBackend,
            ObjectCategory::Text => Self::TextModule,
            ObjectCategory::Pn => Self::PnComposite,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LayoutBackend => "layout_backend",
            Self::TextModule => "text_module",
            Self::PnComposite => "pn_composite",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::LayoutBackend, Self::TextModule, Self::PnComposite]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TextModule {
    #[default]
    With,
    /// TEXT objects go to the layout backend as plain captions.
    Without,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchItem {
    pub object_id: usize,
    pub route: Route,
    pub caption: String,
    /// Words to render; text_module items only.
    pub text: Option<String>,
    /// Resolved reference image; pn_composite items only.
    pub image_ref: Option<String>,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendRequest {
    pub schema_version: String,
    pub prompt_id: String,
    pub prompt: String,
    pub canvas: Canvas,
    pub items: Vec<DispatchItem>,
    /// Passed through to the backend untouched.
    pub params: BTreeMap<String, Value>,
    pub text_module: bool,
}

pub fn dispatch_plan(
    plan: &ScenePlan,
    resolver: Option<&dyn PnImageResolver>,
    text_module: TextModule,
    params: BTreeMap<String, Value>,
) -> Result<BackendRequest, PipelineError> {
    let problems = validate_plan(plan);
    if !problems.is_empty() {
        return Err(PipelineError::InvalidPlan(problems));
    }
    let mut items = Vec::with_capacity(plan.objects.len());
    let mut unresolved = Vec::new();
    for object in &plan.objects {
        let mut route = Route::for_category(object.category);
        if route == Route::TextModule && text_module == TextModule::Without {
            route = Route::LayoutBackend;
        }
        let image_ref = match (route, object.pn_key.as_deref()) {
            (Route::PnComposite, Some(key)) => match resolver.map(|r| r.resolve(key)) {
                Some(Ok(reference)) => Some(reference),
                _ => {
                    if !unresolved.iter().any(|k| k == key) {
                        unresolved.push(key.to_string());
                    }
                    None
                }
            },
            _ => None,
        };
        items.push(DispatchItem {
            object_id: object.object_id,
            route,
            caption: object.caption.clone(),
            text: (route == Route::TextModule).then(|| object.text_payload.clone()).flatten(),
            image_ref,
            bbox: plan.boxes[&object.object_id],
        });
    }
    if !unresolved.is_empty() {
        return Err(PipelineError::PnResolutionFailed { keys: unresolved });
    }
    Ok(BackendRequest {
        schema_version: REQUEST_SCHEMA_VERSION.into(),
        prompt_id: plan.prompt.id.clone(),
        prompt: plan.prompt.analysis_text().to_string(),
        canvas: plan.canvas,
        items,
        params,
        text_module: text_module == TextModule::With,
    })
}

pub fn request_canon(r: &BackendRequest) -> Canon {
    let items = r
        .items
        .iter()
        .map(|item| {
            Canon::obj([
                ("object_id", Canon::int(item.object_id)),
                ("route", Canon::str(item.route.as_str())),
                ("caption", Canon::str(&item.caption)),
                ("box", box_canon(&item.bbox)),
            ])
            .with_opt("text", item.text.as_ref().map(Canon::str))
            .with_opt("image_ref", item.image_ref.as_ref().map(Canon::str))
        })
        .collect();
    Canon::obj([
        ("schema_version", Canon::str(&r.schema_version)),
        ("prompt_id", Canon::str(&r.prompt_id)),
        ("prompt", Canon::str(&r.prompt)),
        ("canvas", canvas_canon(r.canvas)),
        ("items", Canon::Arr(items)),
        (
            "params",
            Canon::Obj(r.params.iter().map(|(k, v)| (k.clone(), Canon::from_json(v))).collect()),
        ),
        ("ablation", Canon::obj([("text_module", Canon::Bool(r.text_module))])),
    ])
}

/// Canonical JSON bytes, same conventions as plan files.
pub fn serialize_request(r: &BackendRequest) -> Vec<u8> {
    request_canon(r).to_pretty().into_bytes()
}

fn parse_item(c: &Cursor) -> Result<DispatchItem, PlanParseError> {
    c.keys(&["object_id", "route", "caption", "box", "text", "image_ref"])?;
    let route_field = c.field("route")?;
    let route = match Route::parse(&route_field.string()?) {
        Some(r) => r,
        None => return route_field.fail("unknown route"),
    };
    let item = DispatchItem {
        object_id: c.field("object_id")?.usize()?,
        route,
        caption: c.field("caption")?.string()?,
        text: c.opt_field("text")?.map(|f| f.string()).transpose()?,
        image_ref: c.opt_field("image_ref")?.map(|f| f.string()).transpose()?,
        bbox: parse_box(&c.field("box")?)?,
    };
    if route == Route::TextModule && item.text.is_none() {
        return c.fail("text_module item without text");
    }
    if route == Route::PnComposite && item.image_ref.is_none() {
        return c.fail("pn_composite item without image_ref");
    }
    if !(item.bbox.within_canvas() && item.bbox.meets_min_size()) {
        return c.field("box")?.fail("box outside the canvas or below minimum size");
    }
    Ok(item)
}

/// Decodes and checks a request as a backend would receive it.
pub fn parse_request(bytes: &[u8]) -> Result<BackendRequest, PipelineError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| PipelineError::SchemaMismatch(format!("not JSON: {e}")))?;
    let decode = || -> Result<BackendRequest, PlanParseError> {
        let root = Cursor::root(&value);
        root.keys(&["schema_version", "prompt_id", "prompt", "canvas", "items", "params", "ablation"])?;
        let version = root.field("schema_version")?;
        if version.string()? != REQUEST_SCHEMA_VERSION {
            return version.fail(format!("expected `{REQUEST_SCHEMA_VERSION}`"));
        }
        let items_field = root.field("items")?;
        let items: Vec<DispatchItem> = items_field.items()?.iter().map(parse_item).collect::<Result<_, _>>()?;
        if items.is_empty() {
            return items_field.fail("no items");
        }
        let params = match root.opt_field("params")? {
            Some(p) => match p.value.as_object() {
                Some(map) => map.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                None => return p.fail("expected an object"),
            },
            None => BTreeMap::new(),
        };
        let ablation = root.field("ablation")?;
        ablation.keys(&["text_module"])?;
        let text_module = match ablation.field("text_module")?.value.as_bool() {
            Some(b) => b,
            None => return ablation.field("text_module")?.fail("expected a boolean"),
        };
        Ok(BackendRequest {
            schema_version: REQUEST_SCHEMA_VERSION.into(),
            prompt_id: root.field("prompt_id")?.string()?,
            prompt: root.field("prompt")?.string()?,
            canvas: parse_canvas(&root.field("canvas")?)?,
            items,
            params,
            text_module,
        })
    };
    decode().map_err(|e| PipelineError::SchemaMismatch(format!("{}: {}", e.path, e.message)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::AnalysisMode;
    use crate::pipeline::resolver::ResolveError;
    use crate::pipeline::{plan_prompt, Clients, PlanConfig};
    use crate::model::PromptSpec;

    struct Always;

    impl PnImageResolver for Always {
        fn resolve(&self, key: &str) -> Result<String, ResolveError> {
            Ok(format!("pn/{key}.png"))
        }
    }

    fn jersey() -> ScenePlan {
        let p = PromptSpec::new(
            "jersey",
            "A blue basketball jersey with the Golden State Warriors logo and 'Stephen Curry' written on it.",
        );
        plan_prompt(&p, AnalysisMode::Full, Clients::offline(), &PlanConfig::default()).unwrap().plan
    }

    fn routes(r: &BackendRequest) -> Vec<Route> {
        r.items.iter().map(|i| i.route).collect()
    }

    #[test]
    fn three_way_routing() {
        let r = dispatch_plan(&jersey(), Some(&Always), TextModule::With, BTreeMap::new()).unwrap();
        assert_eq!(routes(&r), [Route::LayoutBackend, Route::PnComposite, Route::TextModule]);
        assert_eq!(r.items[2].text.as_deref(), Some("Stephen Curry"));
        assert_eq!(r.items[1].image_ref.as_deref(), Some("pn/golden-state-warriors-logo.png"));

        let r = dispatch_plan(&jersey(), Some(&Always), TextModule::Without, BTreeMap::new()).unwrap();
        assert_eq!(routes(&r), [Route::LayoutBackend, Route::PnComposite, Route::LayoutBackend]);
        assert_eq!((r.items[2].caption.as_str(), r.items[2].text.as_deref()), ("Stephen Curry", None));
        assert!(!r.text_module);
    }

    #[test]
    fn unresolved_proper_nouns() {
        let err = dispatch_plan(&jersey(), None, TextModule::With, BTreeMap::new()).unwrap_err();
        assert_eq!(err.code(), "PN_RESOLUTION_FAILED");
        assert!(err.to_string().contains("golden-state-warriors-logo"));
    }

    #[test]
    fn request_round_trip() {
        let params = BTreeMap::from([("negative_prompt".to_string(), Value::from("blurry")), ("steps".to_string(), Value::from(30))]);
        let r = dispatch_plan(&jersey(), Some(&Always), TextModule::With, params).unwrap();
        let bytes = serialize_request(&r);
        let back = parse_request(&bytes).unwrap();
        assert_eq!(back, r);
        assert_eq!(serialize_request(&back), bytes);

        let mut empty = r.clone();
        empty.items.clear();
        assert_eq!(parse_request(&serialize_request(&empty)).unwrap_err().code(), "SCHEMA_MISMATCH");
        let text = String::from_utf8(bytes).unwrap().replace("pcig-request/1", "pcig-request/9");
        assert_eq!(parse_request(text.as_bytes()).unwrap_err().code(), "SCHEMA_MISMATCH");
    }
}
