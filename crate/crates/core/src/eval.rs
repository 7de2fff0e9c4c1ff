//! Per-class hallucination accuracy over benchmark exemplars.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde_json::{json, Value};

use crate::canonical::Canon;
use crate::model::PromptSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HallucinationClass {
    /// Object and attribute risk.
    OhAh,
    Th,
    Fh,
    Tfh,
}

impl HallucinationClass {
    pub const ALL: [Self; 4] = [Self::OhAh, Self::Th, Self::Fh, Self::Tfh];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OhAh => "OH_AH",
            Self::Th => "TH",
            Self::Fh => "FH",
            Self::Tfh => "TFH",
        }
    }

    /// Column label in reports.
    pub fn label(self) -> &'static str {
        match self {
            Self::OhAh => "OH",
            other => other.as_str(),
        }
    }
}

impl FromStr for HallucinationClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s) || c.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown class `{s}`"))
    }
}

impl fmt::Display for HallucinationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Hallucinatory,
    NonHallucinatory,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hallucinatory => "hallucinatory",
            Self::NonHallucinatory => "non_hallucinatory",
        }
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_lowercase().as_str() {
            "hallucinatory" => Ok(Self::Hallucinatory),
            "non_hallucinatory" => Ok(Self::NonHallucinatory),
            other => Err(format!("unknown verdict `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarRecord {
    pub id: String,
    pub prompt: PromptSpec,
    pub class: HallucinationClass,
    pub verdict: Option<Verdict>,
    pub generator_tag: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("MALFORMED_RECORD: line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("DUPLICATE_ID: `{id}` repeated on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("MISSING_VERDICT: no verdict for {}", .ids.join(", "))]
    MissingVerdict { ids: Vec<String> },
    #[error("UNKNOWN_ID: verdict for `{id}` on line {line} matches no record")]
    UnknownId { id: String, line: usize },
    #[error("comparison needs at least two reports, got {0}")]
    TooFewReports(usize),
    #[error("DETECTOR_UNAVAILABLE: {0}")]
    Detector(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MalformedRecord { .. } => "MALFORMED_RECORD",
            Self::DuplicateId { .. } => "DUPLICATE_ID",
            Self::MissingVerdict { .. } => "MISSING_VERDICT",
            Self::UnknownId { .. } => "UNKNOWN_ID",
            Self::TooFewReports(_) => "TOO_FEW_REPORTS",
            Self::Detector(_) => "DETECTOR_UNAVAILABLE",
            Self::Io { .. } => "IO_ERROR",
        }
    }
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-blank lines with their 1-based numbers.
fn json_lines(text: &str) -> impl Iterator<Item = (usize, Result<Value, EvalError>)> + '_ {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            (
                line,
                serde_json::from_str(l).map_err(|e| EvalError::MalformedRecord {
                    line,
                    reason: e.to_string(),
                }),
            )
        })
}

fn string_field(v: &Value, key: &str, line: usize) -> Result<String, EvalError> {
    v.get(key)
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string)
        .ok_or_else(|| EvalError::MalformedRecord {
            line,
            reason: format!("missing string `{key}`"),
        })
}

/// JSON lines: `{"id", "prompt", "class", "augmented_prompt"?,
/// "generator_tag"?, "verdict"?}`.
pub fn parse_benchmark(text: &str) -> Result<Vec<ExemplarRecord>, EvalError> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, value) in json_lines(text) {
        let v = value?;
        let malformed = |reason: String| EvalError::MalformedRecord { line, reason };
        let id = string_field(&v, "id", line)?;
        let mut prompt = PromptSpec::new(id.clone(), string_field(&v, "prompt", line)?);
        prompt.augmented_text = v.get("augmented_prompt").and_then(Value::as_str).map(str::to_string);
        let class = string_field(&v, "class", line)?.parse().map_err(malformed)?;
        let verdict = match v.get("verdict") {
            None | Some(Value::Null) => None,
            Some(_) => Some(string_field(&v, "verdict", line)?.parse().map_err(malformed)?),
        };
        if !seen.insert(id.clone()) {
            return Err(EvalError::DuplicateId { id, line });
        }
        records.push(ExemplarRecord {
            id,
            prompt,
            class,
            verdict,
            generator_tag: v.get("generator_tag").and_then(Value::as_str).unwrap_or("").to_string(),
        });
    }
    if records.is_empty() {
        return Err(EvalError::MalformedRecord {
            line: 1,
            reason: "no records".into(),
        });
    }
    Ok(records)
}

pub fn load_benchmark(path: &Path) -> Result<Vec<ExemplarRecord>, EvalError> {
    parse_benchmark(&read(path)?)
}

pub fn class_totals(records: &[ExemplarRecord]) -> BTreeMap<HallucinationClass, usize> {
    let mut totals: BTreeMap<_, _> = HallucinationClass::ALL.into_iter().map(|c| (c, 0)).collect();
    for r in records {
        *totals.entry(r.class).or_default() += 1;
    }
    totals
}

/// JSON lines of `{"id", "verdict"}`.
pub fn parse_verdicts(text: &str) -> Result<BTreeMap<String, (usize, Verdict)>, EvalError> {
    let mut out = BTreeMap::new();
    for (line, value) in json_lines(text) {
        let v = value?;
        let id = string_field(&v, "id", line)?;
        let verdict = string_field(&v, "verdict", line)?
            .parse()
            .map_err(|reason| EvalError::MalformedRecord { line, reason })?;
        if out.insert(id.clone(), (line, verdict)).is_some() {
            return Err(EvalError::DuplicateId { id, line });
        }
    }
    Ok(out)
}

/// Sets each record's verdict from a verdict file's contents.
pub fn apply_verdicts(records: &mut [ExemplarRecord], verdicts_text: &str) -> Result<(), EvalError> {
    let verdicts = parse_verdicts(verdicts_text)?;
    let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    if let Some((id, (line, _))) = verdicts.iter().find(|(id, _)| !ids.contains(id.as_str())) {
        return Err(EvalError::UnknownId {
            id: id.clone(),
            line: *line,
        });
    }
    for r in records.iter_mut() {
        if let Some((_, v)) = verdicts.get(&r.id) {
            r.verdict = Some(*v);
        }
    }
    Ok(())
}

/// Non-hallucinatory count over total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub non_hallucinatory: u64,
    pub total: u64,
}

impl Tally {
    /// Percentage in hundredths, rounded half up; `None` for an empty class.
    pub fn accuracy_bp(&self) -> Option<i64> {
        let (n, d) = (self.non_hallucinatory as i64, self.total as i64);
        (d > 0).then(|| (n * 20_000 + d) / (2 * d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    pub classes: BTreeMap<HallucinationClass, Tally>,
    pub overall: Tally,
}

pub fn compute_report(records: &[ExemplarRecord]) -> Result<EvalReport, EvalError> {
    let missing: Vec<String> = records.iter().filter(|r| r.verdict.is_none()).map(|r| r.id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingVerdict { ids: missing });
    }
    let mut classes: BTreeMap<_, Tally> = HallucinationClass::ALL.into_iter().map(|c| (c, Tally::default())).collect();
    let mut overall = Tally::default();
    for r in records {
        let ok = u64::from(r.verdict == Some(Verdict::NonHallucinatory));
        for t in [classes.entry(r.class).or_default(), &mut overall] {
            t.total += 1;
            t.non_hallucinatory += ok;
        }
    }
    Ok(EvalReport { classes, overall })
}

/// `9489` -> `94.89`.
pub fn format_bp(bp: i64) -> String {
    let sign = if bp < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", bp.abs() / 100, bp.abs() % 100)
}

/// Always signed: `+0.00`, `-0.73`.
pub fn format_delta(bp: i64) -> String {
    if bp < 0 {
        format_bp(bp)
    } else {
        format!("+{}", format_bp(bp))
    }
}

fn cell(bp: Option<i64>) -> String {
    bp.map(format_bp).unwrap_or_else(|| "n/a".into())
}

impl EvalReport {
    /// Accuracy columns in report order, overall last.
    pub fn columns(&self) -> Vec<(&'static str, Tally)> {
        let mut cols: Vec<_> = HallucinationClass::ALL
            .into_iter()
            .map(|c| (c.label(), self.classes.get(&c).copied().unwrap_or_default()))
            .collect();
        cols.push(("overall", self.overall));
        cols
    }

    pub fn to_canon(&self) -> Canon {
        let tally = |t: &Tally| {
            Canon::obj([
                ("non_hallucinatory", Canon::int(t.non_hallucinatory)),
                ("total", Canon::int(t.total)),
            ])
            .with_opt("accuracy", t.accuracy_bp().map(|bp| Canon::str(format_bp(bp))))
        };
        Canon::obj([
            (
                "classes",
                Canon::Obj(self.classes.iter().map(|(c, t)| (c.label().to_string(), tally(t))).collect()),
            ),
            ("overall", tally(&self.overall)),
        ])
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8} {:>10} {:>6} {:>8}\n", "class", "non-halluc", "total", "acc(%)");
        for (label, t) in self.columns() {
            let _ = writeln!(out, "{label:<8} {:>10} {:>6} {:>8}", t.non_hallucinatory, t.total, cell(t.accuracy_bp()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonRow {
    pub tag: String,
    /// Hundredths of a percent per column.
    pub accuracies: Vec<Option<i64>>,
    /// Against the first report; `None` for the first row or empty classes.
    pub deltas: Vec<Option<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub columns: Vec<&'static str>,
    pub rows: Vec<ComparisonRow>,
}

/// Deltas are differences of the rounded two-decimal accuracies, so the
/// table is internally consistent.
pub fn compare_reports(reports: &[(String, EvalReport)]) -> Result<Comparison, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let accuracies = |r: &EvalReport| -> Vec<Option<i64>> { r.columns().iter().map(|(_, t)| t.accuracy_bp()).collect() };
    let base = accuracies(&reports[0].1);
    let rows = reports
        .iter()
        .enumerate()
        .map(|(i, (tag, report))| {
            let acc = accuracies(report);
            let deltas = acc
                .iter()
                .zip(&base)
                .map(|(a, b)| if i == 0 { None } else { Some((*a)? - (*b)?) })
                .collect();
            ComparisonRow {
                tag: tag.clone(),
                accuracies: acc,
                deltas,
            }
        })
        .collect();
    Ok(Comparison {
        columns: reports[0].1.columns().iter().map(|(l, _)| *l).collect(),
        rows,
    })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.tag.len() + 2).max().unwrap_or(0).max(12);
        let mut out = format!("{:<width$}", "model");
        for c in &self.columns {
            let _ = write!(out, " {c:>8}");
        }
        out.push('\n');
        let base = &self.rows[0].tag;
        for row in &self.rows {
            let _ = write!(out, "{:<width$}", row.tag);
            for a in &row.accuracies {
                let _ = write!(out, " {:>8}", cell(*a));
            }
            out.push('\n');
            if row.deltas.iter().any(Option::is_some) {
                let _ = write!(out, "{:<width$}", format!("  vs {base}"));
                for d in &row.deltas {
                    let _ = write!(out, " {:>8}", d.map(format_delta).unwrap_or_else(|| "n/a".into()));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Produces a verdict for one exemplar and its generated image.
pub trait VerdictSource {
    fn verdict(&self, record: &ExemplarRecord, image: &Path) -> Result<Verdict, EvalError>;
}

/// `POST {"id", "prompt", "image_path"}` answering `{"verdict": ...}`.
#[derive(Debug, Clone)]
pub struct HttpDetector {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpDetector {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, EvalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EvalError::Detector(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl VerdictSource for HttpDetector {
    fn verdict(&self, record: &ExemplarRecord, image: &Path) -> Result<Verdict, EvalError> {
        let body = json!({
            "id": record.id,
            "prompt": record.prompt.analysis_text(),
            "image_path": image.to_string_lossy(),
        });
        let fail = |e: String| EvalError::Detector(format!("{}: {e}", self.endpoint));
        let response = self.client.post(&self.endpoint).json(&body).send().map_err(|e| fail(e.to_string()))?;
        if !response.status().is_success() {
            return Err(fail(format!("HTTP {}", response.status().as_u16())));
        }
        let v: Value = response.json().map_err(|e| fail(e.to_string()))?;
        v.get("verdict")
            .and_then(Value::as_str)
            .ok_or_else(|| fail("reply has no `verdict`".into()))?
            .parse()
            .map_err(fail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(counts: [(u64, u64); 4]) -> Vec<ExemplarRecord> {
        let mut out = Vec::new();
        for (class, (good, total)) in HallucinationClass::ALL.into_iter().zip(counts) {
            for i in 0..total {
                let id = format!("{class}-{i}");
                out.push(ExemplarRecord {
                    prompt: PromptSpec::new(id.clone(), "p"),
                    id,
                    class,
                    verdict: Some(if i < good { Verdict::NonHallucinatory } else { Verdict::Hallucinatory }),
                    generator_tag: String::new(),
                });
            }
        }
        out
    }

    fn row(r: &EvalReport) -> Vec<String> {
        r.columns().iter().map(|(_, t)| cell(t.accuracy_bp())).collect()
    }

    #[test]
    fn half_up_rounding() {
        let bp = |n, d| Tally { non_hallucinatory: n, total: d }.accuracy_bp().unwrap();
        assert_eq!(bp(197, 220), 8955);
        assert_eq!(bp(1, 8), 1250);
        assert_eq!(bp(1, 3), 3333);
        assert_eq!(bp(2, 3), 6667);
        assert_eq!(bp(1, 16), 625);
        assert_eq!(Tally::default().accuracy_bp(), None);
    }

    #[test]
    fn all_correct() {
        let report = compute_report(&records([(137, 137), (63, 63), (18, 18), (2, 2)])).unwrap();
        assert_eq!(row(&report), ["100.00"; 5]);
    }

    #[test]
    fn missing_verdicts_are_listed() {
        let mut rs = records([(1, 2), (0, 0), (0, 0), (0, 0)]);
        rs[1].verdict = None;
        let err = compute_report(&rs).unwrap_err();
        assert_eq!(err.code(), "MISSING_VERDICT");
        assert!(err.to_string().contains("OH_AH-1"));
    }

    #[test]
    fn signed_deltas() {
        let a = compute_report(&records([(131, 137), (6, 63), (14, 18), (1, 2)])).unwrap();
        let b = compute_report(&records([(130, 137), (52, 63), (14, 18), (1, 2)])).unwrap();
        let cmp = compare_reports(&[("base".into(), a.clone()), ("ours".into(), b)]).unwrap();
        let deltas: Vec<String> = cmp.rows[1].deltas.iter().map(|d| format_delta(d.unwrap())).collect();
        assert_eq!(deltas[..3], ["-0.73", "+73.02", "+0.00"]);
        assert!(cmp.to_table().contains("+73.02"));
        assert!(compare_reports(&[("only".into(), a)]).is_err());
    }

    #[test]
    fn benchmark_parsing_errors() {
        assert_eq!(parse_benchmark("").unwrap_err().code(), "MALFORMED_RECORD");
        let dup = "{\"id\": \"a\", \"prompt\": \"x\", \"class\": \"TH\"}\n{\"id\": \"a\", \"prompt\": \"y\", \"class\": \"FH\"}\n";
        assert!(matches!(parse_benchmark(dup).unwrap_err(), EvalError::DuplicateId { line: 2, .. }));
        let bad = "{\"id\": \"a\", \"prompt\": \"x\", \"class\": \"TH\"}\n\n{\"id\": \"b\", \"class\": \"TH\"}\n";
        assert!(matches!(parse_benchmark(bad).unwrap_err(), EvalError::MalformedRecord { line: 3, .. }));
        let bad_class = "{\"id\": \"a\", \"prompt\": \"x\", \"class\": \"SCH\"}\n";
        assert_eq!(parse_benchmark(bad_class).unwrap_err().code(), "MALFORMED_RECORD");
    }

    #[test]
    fn verdict_application() {
        let mut rs = parse_benchmark("{\"id\": \"a\", \"prompt\": \"x\", \"class\": \"TH\"}\n").unwrap();
        apply_verdicts(&mut rs, "{\"id\": \"a\", \"verdict\": \"non-hallucinatory\"}\n").unwrap();
        assert_eq!(rs[0].verdict, Some(Verdict::NonHallucinatory));
        let err = apply_verdicts(&mut rs, "{\"id\": \"zz\", \"verdict\": \"hallucinatory\"}\n").unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_ID");
    }
}
