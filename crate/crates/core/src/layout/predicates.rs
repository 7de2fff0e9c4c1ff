//! Predicate to constraint mapping and the geometric meaning of each
//! constraint kind.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::model::{normalize_predicate, BoundingBox, RelationTriple, MICROS};

const BUILTIN_TABLE: &str = include_str!("../../data/predicates.txt");

/// Words dropped from the front of a predicate before lookup.
const AUXILIARIES: &[&str] = &["is", "are", "was", "were", "be", "being", "been", "has", "have"];

/// Maximum center distance for `near`, as a fraction of the canvas edge.
pub const NEAR_DISTANCE: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintKind {
    LeftOf,
    RightOf,
    Above,
    Below,
    Inside,
    Overlap,
    Near,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 7] = [
        Self::LeftOf,
        Self::RightOf,
        Self::Above,
        Self::Below,
        Self::Inside,
        Self::Overlap,
        Self::Near,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LeftOf => "left_of",
            Self::RightOf => "right_of",
            Self::Above => "above",
            Self::Below => "below",
            Self::Inside => "inside",
            Self::Overlap => "overlap",
            Self::Near => "near",
        }
    }

    /// Directional kinds are hard ordering or containment relations.
    pub fn is_directional(self) -> bool {
        matches!(
            self,
            Self::LeftOf | Self::RightOf | Self::Above | Self::Below | Self::Inside
        )
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown constraint kind `{s}`"))
    }
}

/// `kind(a, b)`: a is left of / above / inside / ... b.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutConstraint {
    pub kind: ConstraintKind,
    pub a: usize,
    pub b: usize,
    pub derived_from: RelationTriple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredicateEntry {
    pub kind: ConstraintKind,
    pub reversed: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("predicate table line {line}: {message}")]
pub struct PredicateTableError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct PredicateTable {
    entries: BTreeMap<String, PredicateEntry>,
}

impl PredicateTable {
    /// The table shipped in `data/predicates.txt`.
    pub fn builtin() -> &'static PredicateTable {
        static TABLE: OnceLock<PredicateTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            PredicateTable::parse(BUILTIN_TABLE).expect("built-in predicate table is well formed")
        })
    }

    pub fn parse(text: &str) -> Result<Self, PredicateTableError> {
        let mut entries = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| PredicateTableError { line, message };
            let (predicate, rhs) = content
                .split_once('=')
                .ok_or_else(|| err("expected `predicate = kind`".into()))?;
            let predicate = normalize_predicate(predicate);
            if predicate.is_empty() {
                return Err(err("empty predicate".into()));
            }
            let mut words = rhs.split_whitespace();
            let kind = words
                .next()
                .ok_or_else(|| err("missing constraint kind".into()))?
                .parse::<ConstraintKind>()
                .map_err(err)?;
            let reversed = match words.next() {
                None => false,
                Some("reversed") => true,
                Some(other) => return Err(err(format!("unexpected modifier `{other}`"))),
            };
            if let Some(extra) = words.next() {
                return Err(err(format!("trailing token `{extra}`")));
            }
            if entries
                .insert(predicate.clone(), PredicateEntry { kind, reversed })
                .is_some()
            {
                return Err(err(format!("duplicate predicate `{predicate}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Explicit table entry for a predicate, retried with leading
    /// auxiliaries dropped ("is wearing" -> "wearing").
    pub fn lookup(&self, predicate: &str) -> Option<PredicateEntry> {
        let normalized = normalize_predicate(predicate);
        if let Some(entry) = self.entries.get(&normalized) {
            return Some(*entry);
        }
        let mut words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
        while words.len() > 1 && AUXILIARIES.contains(&words[0]) {
            words.remove(0);
        }
        self.entries.get(&words.join(" ")).copied()
    }

    /// Total lookup: unknown predicates map to `near`.
    pub fn resolve(&self, predicate: &str) -> PredicateEntry {
        self.lookup(predicate).unwrap_or(PredicateEntry {
            kind: ConstraintKind::Near,
            reversed: false,
        })
    }

    pub fn constraint_for(&self, triple: &RelationTriple) -> LayoutConstraint {
        Self::build(self.resolve(&triple.predicate), triple)
    }

    /// Constraint for triples whose predicate has an explicit table entry.
    pub fn spatial_constraint(&self, triple: &RelationTriple) -> Option<LayoutConstraint> {
        self.lookup(&triple.predicate).map(|entry| Self::build(entry, triple))
    }

    fn build(entry: PredicateEntry, triple: &RelationTriple) -> LayoutConstraint {
        let (a, b) = if entry.reversed {
            (triple.object_id, triple.subject_id)
        } else {
            (triple.subject_id, triple.object_id)
        };
        LayoutConstraint {
            kind: entry.kind,
            a,
            b,
            derived_from: triple.clone(),
        }
    }
}

/// One constraint per triple, through the built-in table.
pub fn predicates_to_constraints(triples: &[RelationTriple]) -> Vec<LayoutConstraint> {
    predicates_to_constraints_with(triples, PredicateTable::builtin())
}

pub fn predicates_to_constraints_with(
    triples: &[RelationTriple],
    table: &PredicateTable,
) -> Vec<LayoutConstraint> {
    triples.iter().map(|t| table.constraint_for(t)).collect()
}

/// Whether `kind(a, b)` holds for two boxes. Exact integer arithmetic.
pub fn boxes_satisfy(kind: ConstraintKind, a: &BoundingBox, b: &BoundingBox) -> bool {
    let (ax, ay) = a.center2_micros();
    let (bx, by) = b.center2_micros();
    match kind {
        ConstraintKind::LeftOf => ax < bx,
        ConstraintKind::RightOf => ax > bx,
        ConstraintKind::Above => ay < by,
        ConstraintKind::Below => ay > by,
        ConstraintKind::Inside => b.contains(a),
        ConstraintKind::Overlap => a.intersection_micros(b) > 0,
        ConstraintKind::Near => {
            let dx = (ax - bx) as i128;
            let dy = (ay - by) as i128;
            let limit = (2.0 * NEAR_DISTANCE * MICROS as f64).round() as i128;
            dx * dx + dy * dy <= limit * limit
        }
    }
}

/// Checks a constraint against a box map; `None` when either box is absent.
pub fn relation_satisfied(
    constraint: &LayoutConstraint,
    boxes: &BTreeMap<usize, BoundingBox>,
) -> Option<bool> {
    let a = boxes.get(&constraint.a)?;
    let b = boxes.get(&constraint.b)?;
    Some(boxes_satisfy(constraint.kind, a, b))
}
