//! Object extraction, classification, count expansion and relation triples.

mod lexicon;
mod parser;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde_json::Value;

pub use lexicon::{indefinite_article, singularize, singularize_phrase, Gazetteer};

use crate::llm::{vars, LlmClient, LlmError};
use crate::model::{
    is_valid_pn_key, normalize_predicate, slugify, Diagnostic, DiagnosticCode, ObjectCategory, PromptSpec,
    RelationTriple, SceneObject,
};

pub const ANALYSIS_TEMPLATE_ID: &str = "analysis/v1";
pub const DEFAULT_COUNT_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AnalysisMode {
    #[default]
    Full,
    NoKg,
    NoObjectExtraction,
}

impl AnalysisMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoKg => "no-kg",
            Self::NoObjectExtraction => "no-object-extraction",
        }
    }
}

impl fmt::Display for AnalysisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnalysisMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "full" => Ok(Self::Full),
            "no-kg" => Ok(Self::NoKg),
            "no-object-extraction" => Ok(Self::NoObjectExtraction),
            other => Err(format!("unknown mode `{other}` (full, no-kg, no-object-extraction)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisSource {
    Llm,
    Fallback,
}

impl AnalysisSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Llm => "llm",
            Self::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisConfig {
    /// Largest count a single mention may expand to.
    pub count_cap: usize,
    pub gazetteer: Gazetteer,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            count_cap: DEFAULT_COUNT_CAP,
            gazetteer: Gazetteer::builtin(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("NO_OBJECTS_FOUND: no objects could be identified in prompt {prompt:?}")]
    NoObjectsFound { prompt: String },
    #[error("COUNT_OVERFLOW: `{mention}` asks for {count} instances; the limit is {cap}")]
    CountOverflow { mention: String, count: usize, cap: usize },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoObjectsFound { .. } => "NO_OBJECTS_FOUND",
            Self::CountOverflow { .. } => "COUNT_OVERFLOW",
            Self::Llm(LlmError::Protocol { .. }) => "LLM_PROTOCOL_ERROR",
            Self::Llm(_) => "LLM_UNAVAILABLE",
        }
    }
}

/// Cues attached to one extracted mention, before classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub caption: String,
    pub quoted: bool,
    /// Governed by a verb such as "written" or "saying".
    pub text_cue: bool,
    pub gazetteer_hit: bool,
    /// Longest run of capitalized words not starting a sentence.
    pub capitalized_run: usize,
}

/// TEXT beats PN beats GO.
pub fn classify_object(c: &Candidate) -> ObjectCategory {
    if c.quoted || c.text_cue {
        ObjectCategory::Text
    } else if c.gazetteer_hit || c.capitalized_run >= 2 {
        ObjectCategory::Pn
    } else {
        ObjectCategory::Go
    }
}

/// A classified mention awaiting count expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    /// The phrase without determiner or count word.
    pub phrase: String,
    /// "a"/"an" when the prompt used one; kept in general-object captions.
    pub article: Option<String>,
    pub count: Option<usize>,
    pub category: ObjectCategory,
    pub text_payload: Option<String>,
    pub pn_key: Option<String>,
}

impl Mention {
    pub fn new(phrase: impl Into<String>, category: ObjectCategory) -> Self {
        Self {
            phrase: phrase.into(),
            article: None,
            count: None,
            category,
            text_payload: None,
            pn_key: None,
        }
    }

    pub fn counted(mut self, count: usize) -> Self {
        self.count = Some(count);
        self
    }

    fn caption(&self) -> String {
        match (self.category, self.count) {
            (ObjectCategory::Text, _) => self.text_payload.clone().unwrap_or_else(|| self.phrase.clone()),
            (ObjectCategory::Pn, Some(_)) => singularize_phrase(&self.phrase),
            (ObjectCategory::Pn, None) => self.phrase.clone(),
            (ObjectCategory::Go, Some(_)) => {
                let singular = singularize_phrase(&self.phrase);
                format!("{} {singular}", indefinite_article(&singular))
            }
            (ObjectCategory::Go, None) => match &self.article {
                Some(a) => format!("{a} {}", self.phrase),
                None => self.phrase.clone(),
            },
        }
    }
}

/// Expands counted mentions into instances, in order. Returns the objects
/// and the id range each mention produced.
fn expand(mentions: &[Mention], cap: usize) -> Result<(Vec<SceneObject>, Vec<std::ops::Range<usize>>), AnalysisError> {
    let mut objects = Vec::new();
    let mut ranges = Vec::with_capacity(mentions.len());
    let mut keys = BTreeSet::new();
    for m in mentions {
        let k = m.count.unwrap_or(1);
        if k > cap {
            return Err(AnalysisError::CountOverflow {
                mention: m.phrase.clone(),
                count: k,
                cap,
            });
        }
        let caption = m.caption();
        let base_key = match m.category {
            ObjectCategory::Text => caption.clone(),
            _ => m.phrase.clone(),
        };
        let mut group_key = base_key.clone();
        let mut n = 2;
        while !keys.insert(group_key.clone()) {
            group_key = format!("{base_key} #{n}");
            n += 1;
        }
        let pn_key = (m.category == ObjectCategory::Pn).then(|| {
            m.pn_key
                .clone()
                .filter(|k| is_valid_pn_key(k))
                .unwrap_or_else(|| slugify(&caption))
        });
        let start = objects.len();
        for instance_index in 0..k {
            objects.push(SceneObject {
                object_id: objects.len(),
                caption: caption.clone(),
                category: m.category,
                group_key: group_key.clone(),
                instance_index,
                text_payload: (m.category == ObjectCategory::Text).then(|| caption.clone()),
                pn_key: pn_key.clone(),
            });
        }
        ranges.push(start..objects.len());
    }
    Ok((objects, ranges))
}

/// One object per instance; captions of counted mentions are singular.
pub fn expand_counts(mentions: &[Mention], cap: usize) -> Result<Vec<SceneObject>, AnalysisError> {
    expand(mentions, cap).map(|(objects, _)| objects)
}

/// Lowercase words minus determiners and counts, last word singular.
fn normalized_words(text: &str) -> Vec<String> {
    let mut words: Vec<String> = text
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let skip = words
        .iter()
        .take_while(|w| lexicon::is_determiner(w) || lexicon::parse_count(w).is_some())
        .count();
    words.drain(..skip);
    if let Some(last) = words.last_mut() {
        *last = singularize(last);
    }
    words
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Object ids of the group a mention refers to: exact caption or group
/// match first, then the longest caption contained in the mention, then
/// the first caption containing the mention. Empty when nothing matches.
pub fn resolve_mention(mention: &str, objects: &[SceneObject]) -> Vec<usize> {
    let target = normalized_words(mention);
    if target.is_empty() {
        return Vec::new();
    }
    let forms: Vec<(Vec<String>, Vec<String>)> = objects
        .iter()
        .map(|o| (normalized_words(&o.caption), normalized_words(&o.group_key)))
        .collect();
    let hit = forms
        .iter()
        .position(|(c, g)| *c == target || *g == target)
        .or_else(|| {
            forms
                .iter()
                .enumerate()
                .filter(|(_, (c, _))| contains_run(&target, c))
                .max_by_key(|(i, (c, _))| (c.len(), std::cmp::Reverse(*i)))
                .map(|(i, _)| i)
        })
        .or_else(|| forms.iter().position(|(c, _)| contains_run(c, &target)));
    match hit {
        Some(i) => objects
            .iter()
            .filter(|o| o.group_key == objects[i].group_key)
            .map(|o| o.object_id)
            .collect(),
        None => Vec::new(),
    }
}

fn split_article(caption: &str) -> (Option<String>, String) {
    let trimmed = caption.trim();
    match trimmed.split_once(' ') {
        Some((first, rest)) if matches!(first.to_lowercase().as_str(), "a" | "an") => {
            (Some(first.to_lowercase()), rest.trim().to_string())
        }
        Some((first, rest)) if lexicon::is_determiner(&first.to_lowercase()) => (None, rest.trim().to_string()),
        _ => (None, trimmed.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LlmAnalysis {
    mentions: Vec<Mention>,
    triples: Vec<(String, String, String)>,
}

fn field_str<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty())
}

fn decode_analysis(value: &Value) -> Result<LlmAnalysis, String> {
    let objects = value
        .get("objects")
        .and_then(Value::as_array)
        .ok_or("missing `objects` array")?;
    let mut mentions = Vec::with_capacity(objects.len());
    for (i, o) in objects.iter().enumerate() {
        let caption = field_str(o, "caption").ok_or(format!("objects[{i}] has no caption"))?;
        let category: ObjectCategory = field_str(o, "category")
            .unwrap_or("GO")
            .to_uppercase()
            .parse()
            .map_err(|e| format!("objects[{i}]: {e}"))?;
        let count = match o.get("count") {
            None | Some(Value::Null) => None,
            Some(c) => match c.as_u64() {
                Some(n) if n >= 1 => Some(n as usize),
                _ => return Err(format!("objects[{i}].count must be a positive integer")),
            },
        };
        let (article, phrase) = split_article(caption);
        let mut m = Mention::new(phrase, category);
        m.article = article;
        // counts are only meaningful above one
        m.count = count.filter(|&n| n > 1);
        if category == ObjectCategory::Text {
            m.text_payload = Some(field_str(o, "text").unwrap_or(caption).to_string());
            m.count = None;
        }
        if category == ObjectCategory::Pn {
            m.pn_key = field_str(o, "pn_key").map(str::to_string);
        }
        mentions.push(m);
    }
    let mut triples = Vec::new();
    if let Some(list) = value.get("triples") {
        let list = list.as_array().ok_or("`triples` is not an array")?;
        for (i, t) in list.iter().enumerate() {
            let get = |k: &str| field_str(t, k).ok_or(format!("triples[{i}] has no {k}"));
            triples.push((get("subject")?.to_string(), get("predicate")?.to_string(), get("object")?.to_string()));
        }
    }
    Ok(LlmAnalysis { mentions, triples })
}

fn ask_llm(prompt: &PromptSpec, client: &LlmClient) -> Result<LlmAnalysis, AnalysisError> {
    let variables = vars([("prompt", prompt.analysis_text().to_string())]);
    Ok(client.complete_json(ANALYSIS_TEMPLATE_ID, &variables, decode_analysis)?)
}

/// Mentions from the rule-based parser.
fn parsed_mentions(parsed: &parser::ParsedPrompt, mode: AnalysisMode) -> Vec<Mention> {
    parsed
        .chunks
        .iter()
        .zip(&parsed.categories)
        .map(|(chunk, &category)| {
            if mode == AnalysisMode::NoObjectExtraction {
                return Mention::new(chunk.head(), ObjectCategory::Go);
            }
            let mut m = Mention::new(chunk.phrase(), category);
            m.article = chunk.determiner.clone().filter(|d| d == "a" || d == "an");
            m.count = chunk.count;
            match category {
                ObjectCategory::Text => {
                    m.text_payload = Some(chunk.phrase());
                    m.count = None;
                }
                // a proper noun whose slug is empty cannot be resolved
                ObjectCategory::Pn if slugify(&chunk.phrase()).is_empty() => m.category = ObjectCategory::Go,
                _ => {}
            }
            m
        })
        .collect()
}

/// Collapses LLM mentions to bare single general objects.
fn bare_mentions(mentions: &[Mention]) -> Vec<Mention> {
    mentions
        .iter()
        .map(|m| {
            let head = match m.category {
                ObjectCategory::Text => m.text_payload.clone().unwrap_or_else(|| m.phrase.clone()),
                _ => m.phrase.rsplit(' ').next().unwrap_or(&m.phrase).to_string(),
            };
            Mention::new(head, ObjectCategory::Go)
        })
        .collect()
}

fn unresolved(mention: &str) -> Diagnostic {
    Diagnostic::warning(
        DiagnosticCode::UnresolvedMention,
        format!("relation endpoint `{mention}` matches no object; relation dropped"),
        vec![],
    )
}

fn cross(subjects: impl IntoIterator<Item = usize>, predicate: &str, objects: &[usize]) -> Vec<RelationTriple> {
    let mut out = Vec::new();
    for s in subjects {
        for &o in objects {
            if s != o {
                out.push(RelationTriple::new(s, predicate, o));
            }
        }
    }
    out
}

/// Triples between resolved mention strings.
fn resolve_triples(
    triples: &[(String, String, String)],
    objects: &[SceneObject],
) -> (Vec<RelationTriple>, Vec<Diagnostic>) {
    let mut out = Vec::new();
    let mut diagnostics = Vec::new();
    for (s, p, o) in triples {
        let predicate = normalize_predicate(p);
        let subjects = resolve_mention(s, objects);
        let targets = resolve_mention(o, objects);
        if subjects.is_empty() {
            diagnostics.push(unresolved(s));
        }
        if targets.is_empty() {
            diagnostics.push(unresolved(o));
        }
        if !predicate.is_empty() {
            out.extend(cross(subjects, &predicate, &targets));
        }
    }
    (out, diagnostics)
}

fn parsed_triples(
    parsed: &parser::ParsedPrompt,
    ranges: &[std::ops::Range<usize>],
) -> (Vec<RelationTriple>, Vec<Diagnostic>) {
    let mut triples = Vec::new();
    for r in &parsed.relations {
        let targets: Vec<usize> = ranges[r.object].clone().collect();
        triples.extend(cross(ranges[r.subject].clone(), &r.predicate, &targets));
    }
    let diagnostics = parsed.unresolved.iter().map(|p| unresolved(p)).collect();
    (triples, diagnostics)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisResult {
    pub objects: Vec<SceneObject>,
    pub triples: Vec<RelationTriple>,
    pub source: AnalysisSource,
    /// Warnings such as dropped relation endpoints.
    pub diagnostics: Vec<Diagnostic>,
}

pub fn analyze(
    prompt: &PromptSpec,
    client: Option<&LlmClient>,
    mode: AnalysisMode,
    config: &AnalysisConfig,
) -> Result<AnalysisResult, AnalysisError> {
    let no_objects = || AnalysisError::NoObjectsFound {
        prompt: prompt.analysis_text().to_string(),
    };
    let (objects, mut triples, diagnostics, source) = match client {
        Some(client) => {
            let answer = ask_llm(prompt, client)?;
            let mentions = match mode {
                AnalysisMode::NoObjectExtraction => bare_mentions(&answer.mentions),
                _ => answer.mentions,
            };
            let objects = expand_counts(&mentions, config.count_cap)?;
            let (triples, diagnostics) = resolve_triples(&answer.triples, &objects);
            (objects, triples, diagnostics, AnalysisSource::Llm)
        }
        None => {
            let parsed = parser::parse(prompt.analysis_text(), &config.gazetteer);
            let (objects, ranges) = expand(&parsed_mentions(&parsed, mode), config.count_cap)?;
            let (triples, diagnostics) = parsed_triples(&parsed, &ranges);
            (objects, triples, diagnostics, AnalysisSource::Fallback)
        }
    };
    if objects.is_empty() {
        return Err(no_objects());
    }
    if mode == AnalysisMode::NoKg {
        triples.clear();
    }
    Ok(AnalysisResult {
        objects,
        triples,
        source,
        diagnostics: if mode == AnalysisMode::NoKg { Vec::new() } else { diagnostics },
    })
}

/// Objects in mention order, counts expanded.
pub fn extract_objects(
    prompt: &PromptSpec,
    client: Option<&LlmClient>,
    config: &AnalysisConfig,
) -> Result<Vec<SceneObject>, AnalysisError> {
    analyze(prompt, client, AnalysisMode::NoKg, config).map(|r| r.objects)
}

/// Relations among `objects`; endpoints resolve by caption match and
/// unresolvable ones are dropped with a warning.
pub fn extract_triples(
    prompt: &PromptSpec,
    objects: &[SceneObject],
    client: Option<&LlmClient>,
    config: &AnalysisConfig,
) -> Result<(Vec<RelationTriple>, Vec<Diagnostic>), AnalysisError> {
    if objects.is_empty() {
        return Err(AnalysisError::NoObjectsFound {
            prompt: prompt.analysis_text().to_string(),
        });
    }
    let named: Vec<(String, String, String)> = match client {
        Some(client) => ask_llm(prompt, client)?.triples,
        None => {
            let parsed = parser::parse(prompt.analysis_text(), &config.gazetteer);
            // group keys as the parser's own expansion would assign them
            let (own, ranges) = expand(&parsed_mentions(&parsed, AnalysisMode::Full), usize::MAX)?;
            let key = |m: usize| own[ranges[m].start].group_key.clone();
            let mut diagnostics: Vec<Diagnostic> = parsed.unresolved.iter().map(|p| unresolved(p)).collect();
            let mut triples = Vec::new();
            for r in &parsed.relations {
                let by_key = |m: usize| -> Vec<usize> {
                    let exact: Vec<usize> = objects.iter().filter(|o| o.group_key == key(m)).map(|o| o.object_id).collect();
                    if exact.is_empty() {
                        resolve_mention(&key(m), objects)
                    } else {
                        exact
                    }
                };
                let (subjects, targets) = (by_key(r.subject), by_key(r.object));
                for (ids, m) in [(&subjects, r.subject), (&targets, r.object)] {
                    if ids.is_empty() {
                        diagnostics.push(unresolved(&key(m)));
                    }
                }
                triples.extend(cross(subjects, &r.predicate, &targets));
            }
            return Ok((triples, diagnostics));
        }
    };
    Ok(resolve_triples(&named, objects))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(text: &str) -> PromptSpec {
        PromptSpec::new("t", text)
    }

    fn offline(text: &str, mode: AnalysisMode) -> AnalysisResult {
        analyze(&prompt(text), None, mode, &AnalysisConfig::default()).unwrap()
    }

    #[test]
    fn classification_precedence() {
        let c = |quoted, text_cue, gazetteer_hit, capitalized_run| {
            classify_object(&Candidate {
                caption: "x".into(),
                quoted,
                text_cue,
                gazetteer_hit,
                capitalized_run,
            })
        };
        assert_eq!(c(true, false, true, 3), ObjectCategory::Text);
        assert_eq!(c(false, true, true, 0), ObjectCategory::Text);
        assert_eq!(c(false, false, true, 0), ObjectCategory::Pn);
        assert_eq!(c(false, false, false, 2), ObjectCategory::Pn);
        assert_eq!(c(false, false, false, 1), ObjectCategory::Go);
    }

    #[test]
    fn jersey_objects() {
        let r = offline(
            "A blue basketball jersey with the Golden State Warriors logo and 'Stephen Curry' written on it.",
            AnalysisMode::Full,
        );
        let summary: Vec<(&str, ObjectCategory)> = r.objects.iter().map(|o| (o.caption.as_str(), o.category)).collect();
        assert_eq!(
            summary,
            [
                ("a blue basketball jersey", ObjectCategory::Go),
                ("Golden State Warriors logo", ObjectCategory::Pn),
                ("Stephen Curry", ObjectCategory::Text),
            ]
        );
        assert_eq!(r.objects[1].pn_key.as_deref(), Some("golden-state-warriors-logo"));
        assert_eq!(r.objects[2].text_payload.as_deref(), Some("Stephen Curry"));
        assert_eq!(
            r.triples,
            [RelationTriple::new(1, "on", 0), RelationTriple::new(2, "written on", 0)]
        );
        assert_eq!(r.source, AnalysisSource::Fallback);
    }

    #[test]
    fn giraffe_expansion() {
        let r = offline("Six giraffes in a grassy plain with trees in the background.", AnalysisMode::Full);
        assert_eq!(r.objects.len(), 8);
        for (i, o) in r.objects[..6].iter().enumerate() {
            assert_eq!((o.caption.as_str(), o.group_key.as_str(), o.instance_index), ("a giraffe", "giraffes", i));
        }
        assert_eq!(r.objects[6].caption, "a grassy plain");
        assert_eq!(r.objects[7].caption, "trees");
        assert_eq!(r.triples.len(), 7);
        assert_eq!(r.triples[6], RelationTriple::new(7, "in background of", 6));

        let bare = offline("Six giraffes in a grassy plain with trees in the background.", AnalysisMode::NoObjectExtraction);
        let captions: Vec<&str> = bare.objects.iter().map(|o| o.caption.as_str()).collect();
        assert_eq!(captions, ["giraffes", "plain", "trees"]);
        assert_eq!(bare.triples.len(), 2);

        let no_kg = offline("Six giraffes in a grassy plain with trees in the background.", AnalysisMode::NoKg);
        assert_eq!((no_kg.objects.len(), no_kg.triples.len()), (8, 0));
    }

    #[test]
    fn interleaved_counts_keep_order() {
        let mentions = [Mention::new("cats", ObjectCategory::Go).counted(3), Mention::new("dogs", ObjectCategory::Go).counted(2)];
        let objects = expand_counts(&mentions, DEFAULT_COUNT_CAP).unwrap();
        let got: Vec<(&str, usize)> = objects.iter().map(|o| (o.caption.as_str(), o.instance_index)).collect();
        assert_eq!(got, [("a cat", 0), ("a cat", 1), ("a cat", 2), ("a dog", 0), ("a dog", 1)]);
        let tree = expand_counts(&[Mention::new("tree", ObjectCategory::Go)], DEFAULT_COUNT_CAP).unwrap();
        assert_eq!(tree.len(), 1);
    }

    #[test]
    fn count_cap() {
        let err = analyze(&prompt("25 balloons"), None, AnalysisMode::Full, &AnalysisConfig::default()).unwrap_err();
        assert!(matches!(err, AnalysisError::CountOverflow { count: 25, cap: 20, .. }));
        let config = AnalysisConfig {
            count_cap: 30,
            ..AnalysisConfig::default()
        };
        assert_eq!(analyze(&prompt("25 balloons"), None, AnalysisMode::Full, &config).unwrap().objects.len(), 25);
    }

    #[test]
    fn no_objects() {
        for text in ["", "  ", "it is on it.", "!!!"] {
            let err = analyze(&prompt(text), None, AnalysisMode::Full, &AnalysisConfig::default()).unwrap_err();
            assert_eq!(err.code(), "NO_OBJECTS_FOUND", "{text:?}");
        }
    }

    #[test]
    fn repeated_indefinite_mentions_get_distinct_groups() {
        let r = offline("a cat next to a cat", AnalysisMode::Full);
        assert_eq!(r.objects[0].group_key, "cat");
        assert_eq!(r.objects[1].group_key, "cat #2");
        assert_eq!(r.triples, [RelationTriple::new(0, "next to", 1)]);
    }

    #[test]
    fn mention_resolution() {
        let r = offline("Six giraffes in a grassy plain with trees in the background.", AnalysisMode::Full);
        assert_eq!(resolve_mention("giraffe", &r.objects), (0..6).collect::<Vec<_>>());
        assert_eq!(resolve_mention("the grassy plain", &r.objects), [6]);
        assert_eq!(resolve_mention("plain", &r.objects), [6]);
        assert_eq!(resolve_mention("tall trees", &r.objects), [7]);
        assert!(resolve_mention("zebra", &r.objects).is_empty());
    }

    #[test]
    fn triples_match_between_entry_points() {
        let config = AnalysisConfig::default();
        for text in [
            "A blue basketball jersey with the Golden State Warriors logo and 'Stephen Curry' written on it.",
            "Six giraffes in a grassy plain with trees in the background.",
            "a cat on a table next to a lamp",
        ] {
            let p = prompt(text);
            let full = analyze(&p, None, AnalysisMode::Full, &config).unwrap();
            let objects = extract_objects(&p, None, &config).unwrap();
            assert_eq!(objects, full.objects);
            let (triples, _) = extract_triples(&p, &objects, None, &config).unwrap();
            assert_eq!(triples, full.triples, "{text}");
        }
    }

    #[test]
    fn llm_response_decoding() {
        let v: Value = serde_json::from_str(
            r#"{"objects": [{"caption": "a giraffe", "category": "GO", "count": 6},
                            {"caption": "the logo", "category": "pn", "pn_key": "Bad Key"},
                            {"caption": "sign text", "category": "TEXT", "text": "SALE"}],
                "triples": [{"subject": "giraffe", "predicate": "Next  To", "object": "logo"}]}"#,
        )
        .unwrap();
        let a = decode_analysis(&v).unwrap();
        let objects = expand_counts(&a.mentions, DEFAULT_COUNT_CAP).unwrap();
        assert_eq!(objects.len(), 8);
        assert_eq!(objects[6].pn_key.as_deref(), Some("logo"));
        assert_eq!(objects[7].text_payload.as_deref(), Some("SALE"));
        let (triples, diags) = resolve_triples(&a.triples, &objects);
        assert_eq!(triples.len(), 6);
        assert_eq!(triples[0].predicate, "next to");
        assert!(diags.is_empty());
        assert!(decode_analysis(&serde_json::json!({"objects": [{"category": "GO"}]})).is_err());
        assert!(decode_analysis(&serde_json::json!({"objects": [{"caption": "x", "category": "ZZ"}]})).is_err());
    }
}
