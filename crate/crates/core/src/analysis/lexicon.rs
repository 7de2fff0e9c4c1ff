//! Word lists for the rule-based parser.

use std::collections::BTreeMap;
use std::path::Path;

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "these", "those", "some", "his", "her", "their", "its", "my", "our", "your", "another",
    "each", "every",
];

const PRONOUNS: &[&str] = &["it", "them", "they", "he", "she", "him", "itself", "themselves"];

const NUMBER_WORDS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve", "thirteen",
    "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

/// Prepositions, conjunctions and auxiliaries. Always end a noun phrase.
const LINKS: &[&str] = &[
    "and", "or", "but", "on", "in", "at", "of", "to", "with", "under", "over", "above", "below", "beneath",
    "underneath", "behind", "beside", "besides", "near", "next", "by", "inside", "within", "into", "onto", "from",
    "across", "around", "against", "along", "between", "among", "through", "toward", "towards", "upon", "atop",
    "is", "are", "was", "were", "be", "being", "been", "has", "have", "that", "which", "who", "while", "where",
];

/// Verbs end a noun phrase only once it has a word of its own, so
/// "a grazing sheep" stays one phrase.
const VERBS: &[&str] = &[
    "wearing", "wears", "holding", "holds", "riding", "rides", "carrying", "carries", "hugging", "hugs", "sitting",
    "sits", "standing", "stands", "lying", "lies", "floating", "flying", "walking", "running", "eating", "playing",
    "looking", "leaning", "hanging", "jumping", "swimming", "grazing", "chasing", "watching", "written", "printed",
    "painted", "engraved", "saying", "says", "reads", "reading", "labeled", "labelled", "spelling", "titled",
];

/// Nouns that only occur inside relation phrases ("to the left of").
const POSITION_NOUNS: &[&str] = &[
    "left", "right", "front", "top", "background", "foreground", "distance", "middle", "center", "centre", "side",
    "bottom", "back", "corner", "edge",
];

/// Phrases placing something in the scene as a whole.
const SCENE_POSITIONS: &[&str] = &["background", "foreground", "distance"];

/// Verbs introducing the words of a TEXT object.
const TEXT_CUES: &[&str] = &[
    "written", "saying", "says", "reads", "reading", "labeled", "labelled", "spelling", "titled", "printed", "engraved",
];

/// Cues after which unquoted words up to the clause end are the text.
const TEXT_INTRODUCERS: &[&str] = &["saying", "says", "reads", "labeled", "labelled", "spelling", "titled"];

/// Things that carry markings; "X with a logo" puts the logo on X.
const MARKING_NOUNS: &[&str] = &[
    "logo", "logos", "sign", "label", "print", "pattern", "emblem", "badge", "decal", "sticker", "stripe", "stripes",
    "number", "letters", "word", "words", "text", "writing", "design", "graphic", "insignia", "tattoo", "crest",
];

pub fn is_determiner(w: &str) -> bool {
    DETERMINERS.contains(&w)
}

pub fn is_pronoun(w: &str) -> bool {
    PRONOUNS.contains(&w)
}

pub fn is_link(w: &str) -> bool {
    LINKS.contains(&w)
}

pub fn is_verb(w: &str) -> bool {
    VERBS.contains(&w)
}

pub fn is_position_noun(w: &str) -> bool {
    POSITION_NOUNS.contains(&w)
}

pub fn is_scene_position(w: &str) -> bool {
    SCENE_POSITIONS.contains(&w)
}

pub fn is_text_cue(w: &str) -> bool {
    TEXT_CUES.contains(&w)
}

pub fn introduces_text(w: &str) -> bool {
    TEXT_INTRODUCERS.contains(&w)
}

pub fn is_marking_noun(w: &str) -> bool {
    MARKING_NOUNS.contains(&w)
}

/// Digits or a number word, one to twenty. Digits may exceed twenty so the
/// expansion cap can reject them.
pub fn parse_count(w: &str) -> Option<usize> {
    if !w.is_empty() && w.bytes().all(|b| b.is_ascii_digit()) {
        return w.parse().ok().filter(|&n| n >= 1);
    }
    NUMBER_WORDS.iter().position(|&n| n == w).map(|i| i + 1)
}

const IRREGULAR: &[(&str, &str)] = &[
    ("people", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("wolves", "wolf"),
    ("shelves", "shelf"),
    ("loaves", "loaf"),
];

const INVARIANT: &[&str] = &["sheep", "fish", "deer", "bison", "moose", "series", "species", "glasses", "pants"];

pub fn singularize(word: &str) -> String {
    let lower = word.to_lowercase();
    if INVARIANT.contains(&lower.as_str()) {
        return word.to_string();
    }
    if let Some((_, s)) = IRREGULAR.iter().find(|(p, _)| *p == lower) {
        return (*s).to_string();
    }
    let strip = |n: usize| word[..word.len() - n].to_string();
    if lower.len() > 4 && lower.ends_with("ies") {
        return format!("{}y", strip(3));
    }
    for suffix in ["ches", "shes", "sses", "xes", "zes", "oes"] {
        if lower.len() > suffix.len() + 1 && lower.ends_with(suffix) {
            return strip(2);
        }
    }
    if lower.len() > 3 && lower.ends_with('s') && !lower.ends_with("ss") && !lower.ends_with("us") && !lower.ends_with("is")
    {
        return strip(1);
    }
    word.to_string()
}

/// Singularizes the last word of a phrase.
pub fn singularize_phrase(phrase: &str) -> String {
    match phrase.rsplit_once(' ') {
        Some((rest, last)) => format!("{rest} {}", singularize(last)),
        None => singularize(phrase),
    }
}

pub fn indefinite_article(phrase: &str) -> &'static str {
    match phrase.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Multi-word proper-noun entries, stored as lowercase token lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    by_first: BTreeMap<String, Vec<Vec<String>>>,
}

impl Gazetteer {
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/gazetteer.txt"))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// One entry per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        let mut g = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                g.insert(line);
            }
        }
        g
    }

    pub fn insert(&mut self, entry: &str) {
        let tokens: Vec<String> = entry.split_whitespace().map(str::to_lowercase).collect();
        if let Some(first) = tokens.first() {
            let list = self.by_first.entry(first.clone()).or_default();
            if !list.contains(&tokens) {
                list.push(tokens);
                list.sort_by_key(|t| std::cmp::Reverse(t.len()));
            }
        }
    }

    /// Length of the longest entry starting at `words[0]`.
    pub fn longest_match(&self, words: &[&str]) -> Option<usize> {
        let first = words.first()?;
        self.by_first
            .get(*first)?
            .iter()
            .find(|entry| entry.len() <= words.len() && entry.iter().zip(words).all(|(e, w)| e == w))
            .map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.by_first.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plurals() {
        for (plural, singular) in [
            ("giraffes", "giraffe"),
            ("trees", "tree"),
            ("puppies", "puppy"),
            ("boxes", "box"),
            ("benches", "bench"),
            ("sheep", "sheep"),
            ("people", "person"),
            ("bus", "bus"),
            ("glass", "glass"),
            ("tomatoes", "tomato"),
        ] {
            assert_eq!(singularize(plural), singular);
        }
        assert_eq!(singularize_phrase("tall giraffes"), "tall giraffe");
    }

    #[test]
    fn counts() {
        assert_eq!(parse_count("six"), Some(6));
        assert_eq!(parse_count("twenty"), Some(20));
        assert_eq!(parse_count("25"), Some(25));
        assert_eq!(parse_count("0"), None);
        assert_eq!(parse_count("dozen"), None);
    }

    #[test]
    fn gazetteer_longest_match() {
        let g = Gazetteer::parse("golden state\ngolden state warriors\n# comment\n");
        assert_eq!(g.len(), 2);
        assert_eq!(g.longest_match(&["golden", "state", "warriors", "logo"]), Some(3));
        assert_eq!(g.longest_match(&["golden", "state"]), Some(2));
        assert_eq!(g.longest_match(&["golden", "gate"]), None);
        assert!(Gazetteer::builtin().longest_match(&["golden", "state", "warriors"]).is_some());
    }
}
