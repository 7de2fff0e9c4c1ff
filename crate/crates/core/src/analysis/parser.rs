//! Rule-based noun-phrase chunker and relation reader.

use super::lexicon::{self, Gazetteer};
use super::{classify_object, Candidate};
use crate::model::ObjectCategory;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word {
        text: String,
        lower: String,
        capitalized: bool,
        sentence_start: bool,
        /// Words fused by a gazetteer match; 0 for plain words.
        proper: usize,
    },
    Quote(String),
    Comma,
    Break,
}

fn is_quote_char(c: char) -> bool {
    matches!(c, '"' | '\u{201c}' | '\u{201d}')
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2018}' | '\u{2019}')
}

fn tokenize(text: &str) -> Vec<Tok> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut sentence_start = true;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() {
            let start = i;
            while i < chars.len()
                && (chars[i].is_alphanumeric()
                    || ((chars[i] == '-' || is_apostrophe(chars[i]))
                        && i + 1 < chars.len()
                        && chars[i + 1].is_alphanumeric()
                        && i > start))
            {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect::<String>().replace('\u{2019}', "'");
            out.push(Tok::Word {
                lower: word.to_lowercase(),
                capitalized: word.chars().next().is_some_and(char::is_uppercase),
                text: word,
                sentence_start,
                proper: 0,
            });
            sentence_start = false;
            continue;
        }
        let opens_single = is_apostrophe(c)
            && (i == 0 || chars[i - 1].is_whitespace() || chars[i - 1] == '(')
            && chars.get(i + 1).is_some_and(|n| !n.is_whitespace());
        if is_quote_char(c) || opens_single {
            let close = (i + 1..chars.len()).find(|&j| {
                if is_quote_char(c) {
                    is_quote_char(chars[j])
                } else {
                    is_apostrophe(chars[j])
                        && !chars[j - 1].is_whitespace()
                        && chars.get(j + 1).is_none_or(|n| !n.is_alphanumeric())
                }
            });
            if let Some(j) = close {
                let inner: String = chars[i + 1..j].iter().collect();
                let inner = inner.split_whitespace().collect::<Vec<_>>().join(" ");
                if !inner.is_empty() {
                    out.push(Tok::Quote(inner));
                    sentence_start = false;
                }
                i = j + 1;
                continue;
            }
        }
        match c {
            '.' | '!' | '?' | ';' | ':' => {
                out.push(Tok::Break);
                sentence_start = true;
            }
            ',' => out.push(Tok::Comma),
            _ => {}
        }
        i += 1;
    }
    out
}

/// Fuses capitalized gazetteer matches into single words.
fn fuse_proper_nouns(tokens: Vec<Tok>, gazetteer: &Gazetteer) -> Vec<Tok> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if let Tok::Word {
            capitalized: true,
            sentence_start,
            ..
        } = &tokens[i]
        {
            let words: Vec<&str> = tokens[i..]
                .iter()
                .map_while(|t| match t {
                    Tok::Word { lower, .. } => Some(lower.as_str()),
                    _ => None,
                })
                .take(8)
                .collect();
            if let Some(k) = gazetteer.longest_match(&words) {
                let parts: Vec<&str> = tokens[i..i + k]
                    .iter()
                    .filter_map(|t| match t {
                        Tok::Word { text, .. } => Some(text.as_str()),
                        _ => None,
                    })
                    .collect();
                let text = parts.join(" ");
                out.push(Tok::Word {
                    lower: text.to_lowercase(),
                    text,
                    capitalized: true,
                    sentence_start: *sentence_start,
                    proper: k,
                });
                i += k;
                continue;
            }
        }
        out.push(tokens[i].clone());
        i += 1;
    }
    out
}

/// A noun phrase or quoted span as found in the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Chunk {
    pub determiner: Option<String>,
    pub count: Option<usize>,
    /// Content words as written; a fused proper noun is one entry.
    pub words: Vec<String>,
    pub quoted: bool,
    pub text_cue: bool,
    pub gazetteer_hit: bool,
    pub capitalized_run: usize,
}

impl Chunk {
    pub fn phrase(&self) -> String {
        self.words.join(" ")
    }

    /// The bare head noun, or the whole span for text.
    pub fn head(&self) -> String {
        if self.quoted || self.text_cue {
            return self.phrase();
        }
        let last = self.words.last().map(String::as_str).unwrap_or_default();
        last.rsplit(' ').next().unwrap_or(last).to_string()
    }

    pub fn candidate(&self) -> Candidate {
        Candidate {
            caption: self.phrase(),
            quoted: self.quoted,
            text_cue: self.text_cue,
            gazetteer_hit: self.gazetteer_hit,
            capitalized_run: self.capitalized_run,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Elem {
    Mention(usize),
    Pronoun(String),
    Link(Vec<String>),
    Break,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ChunkRelation {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct ParsedPrompt {
    pub chunks: Vec<Chunk>,
    pub categories: Vec<ObjectCategory>,
    pub relations: Vec<ChunkRelation>,
    /// Pronouns with no earlier mention to point at.
    pub unresolved: Vec<String>,
}

struct Chunker<'a> {
    toks: &'a [Tok],
    i: usize,
    chunks: Vec<Chunk>,
    elems: Vec<Elem>,
}

impl Chunker<'_> {
    fn word(&self, at: usize) -> Option<&str> {
        match self.toks.get(at) {
            Some(Tok::Word { lower, .. }) => Some(lower),
            _ => None,
        }
    }

    fn in_link(&self) -> bool {
        matches!(self.elems.last(), Some(Elem::Link(_)))
    }

    /// "is sleeping": an -ing word right after an auxiliary is a verb.
    fn after_auxiliary(&self, w: &str) -> bool {
        w.len() > 4
            && w.ends_with("ing")
            && matches!(self.elems.last(), Some(Elem::Link(words)) if words.last().is_some_and(|l| matches!(l.as_str(), "is" | "are" | "was" | "were" | "be" | "being")))
    }

    fn push_link(&mut self, w: &str) {
        match self.elems.last_mut() {
            Some(Elem::Link(words)) => words.push(w.to_string()),
            _ => self.elems.push(Elem::Link(vec![w.to_string()])),
        }
    }

    fn push_chunk(&mut self, chunk: Chunk) {
        // "the cat" after "a cat" is the same cat
        let definite = matches!(chunk.determiner.as_deref(), Some("the" | "this" | "these" | "those"));
        if definite && chunk.count.is_none() {
            let phrase = chunk.phrase().to_lowercase();
            if let Some(existing) = self.chunks.iter().position(|c| c.phrase().to_lowercase() == phrase) {
                self.elems.push(Elem::Mention(existing));
                return;
            }
        }
        self.chunks.push(chunk);
        self.elems.push(Elem::Mention(self.chunks.len() - 1));
    }

    fn run(&mut self) {
        while self.i < self.toks.len() {
            match &self.toks[self.i] {
                Tok::Break => {
                    self.elems.push(Elem::Break);
                    self.i += 1;
                }
                Tok::Comma => {
                    self.push_link("and");
                    self.i += 1;
                }
                Tok::Quote(text) => {
                    let before = matches!(self.elems.last(), Some(Elem::Link(w)) if w.iter().any(|w| lexicon::is_text_cue(w)));
                    let after = self.word(self.i + 1).is_some_and(lexicon::is_text_cue);
                    let chunk = Chunk {
                        determiner: None,
                        count: None,
                        words: vec![text.clone()],
                        quoted: true,
                        text_cue: before || after,
                        gazetteer_hit: false,
                        capitalized_run: 0,
                    };
                    self.push_chunk(chunk);
                    self.i += 1;
                }
                Tok::Word { lower, .. } => {
                    let lower = lower.clone();
                    if lexicon::is_pronoun(&lower) {
                        self.elems.push(Elem::Pronoun(lower));
                        self.i += 1;
                    } else if lexicon::is_link(&lower) || lexicon::is_verb(&lower) || self.after_auxiliary(&lower) {
                        self.push_link(&lower);
                        self.i += 1;
                        if lexicon::introduces_text(&lower) {
                            self.unquoted_text();
                        }
                    } else if self.in_link() && lexicon::is_position_noun(&lower) {
                        self.push_link(&lower);
                        self.i += 1;
                    } else if self.in_link()
                        && lexicon::is_determiner(&lower)
                        && self.word(self.i + 1).is_some_and(lexicon::is_position_noun)
                    {
                        self.i += 1;
                    } else {
                        self.noun_phrase();
                    }
                }
            }
        }
    }

    /// Words after "saying"/"reads" up to the clause end.
    fn unquoted_text(&mut self) {
        let mut words = Vec::new();
        while let Some(Tok::Word { text, .. }) = self.toks.get(self.i) {
            words.push(text.clone());
            self.i += 1;
        }
        if !words.is_empty() {
            self.push_chunk(Chunk {
                determiner: None,
                count: None,
                words: vec![words.join(" ")],
                quoted: false,
                text_cue: true,
                gazetteer_hit: false,
                capitalized_run: 0,
            });
        }
    }

    fn noun_phrase(&mut self) {
        let mut chunk = Chunk {
            determiner: None,
            count: None,
            words: Vec::new(),
            quoted: false,
            text_cue: false,
            gazetteer_hit: false,
            capitalized_run: 0,
        };
        if let Some(w) = self.word(self.i).filter(|w| lexicon::is_determiner(w)) {
            chunk.determiner = Some(w.to_string());
            self.i += 1;
        }
        if let Some(n) = self.word(self.i).and_then(lexicon::parse_count) {
            chunk.count = Some(n);
            self.i += 1;
        }
        let mut run = 0;
        while let Some(Tok::Word {
            text,
            lower,
            capitalized,
            sentence_start,
            proper,
        }) = self.toks.get(self.i)
        {
            let stop = lexicon::is_link(lower)
                || lexicon::is_pronoun(lower)
                || lexicon::is_determiner(lower)
                || (!chunk.words.is_empty() && (lexicon::is_verb(lower) || lexicon::parse_count(lower).is_some()));
            if stop {
                break;
            }
            run = if *capitalized && !*sentence_start { run + (*proper).max(1) } else { 0 };
            chunk.capitalized_run = chunk.capitalized_run.max(run);
            chunk.gazetteer_hit |= *proper > 0;
            chunk.words.push(text.clone());
            self.i += 1;
        }
        if chunk.words.is_empty() {
            // a stray determiner or number; nothing to mention
            if chunk.determiner.is_none() && chunk.count.is_none() {
                self.i += 1;
            }
            return;
        }
        self.push_chunk(chunk);
    }
}

fn is_coordination(w: &str) -> bool {
    matches!(w, "and" | "or" | "but")
}

fn is_relative(w: &str) -> bool {
    matches!(w, "that" | "which" | "who" | "while" | "where")
}

/// Link words minus leading coordination and relative pronouns.
fn core_words(words: &[String]) -> &[String] {
    let skip = words
        .iter()
        .take_while(|w| is_coordination(w) || is_relative(w))
        .count();
    &words[skip..]
}

struct Reader<'a> {
    elems: &'a [Elem],
    categories: &'a [ObjectCategory],
    chunks: &'a [Chunk],
    relations: Vec<ChunkRelation>,
    unresolved: Vec<String>,
}

impl Reader<'_> {
    fn relate(&mut self, subject: usize, predicate: &str, object: usize) {
        if subject != object && !predicate.is_empty() {
            self.relations.push(ChunkRelation {
                subject,
                predicate: predicate.to_string(),
                object,
            });
        }
    }

    /// Mention index for an element; pronouns point at the latest general
    /// object mentioned before them, else the latest mention.
    fn resolve(&mut self, at: usize) -> Option<usize> {
        match self.elems.get(at)? {
            Elem::Mention(m) => Some(*m),
            Elem::Pronoun(p) => {
                let earlier: Vec<usize> = self.elems[..at]
                    .iter()
                    .filter_map(|e| match e {
                        Elem::Mention(m) => Some(*m),
                        _ => None,
                    })
                    .collect();
                let found = earlier
                    .iter()
                    .rev()
                    .find(|&&m| self.categories[m] == ObjectCategory::Go)
                    .or(earlier.last())
                    .copied();
                if found.is_none() {
                    self.unresolved.push(p.clone());
                }
                found
            }
            _ => None,
        }
    }

    fn is_referent(&self, at: usize) -> bool {
        matches!(self.elems.get(at), Some(Elem::Mention(_) | Elem::Pronoun(_)))
    }

    fn link_words(&self, at: usize) -> Option<&[String]> {
        match self.elems.get(at) {
            Some(Elem::Link(w)) => Some(w),
            _ => None,
        }
    }

    fn carries_marking(&self, m: usize) -> bool {
        self.categories[m] != ObjectCategory::Go
            || self.chunks[m]
                .words
                .last()
                .is_some_and(|w| lexicon::is_marking_noun(&w.to_lowercase()))
    }

    /// A link after `at` that relates the referent at `at` to something.
    fn has_own_relation(&self, at: usize) -> bool {
        self.link_words(at + 1)
            .is_some_and(|w| !core_words(w).is_empty() && self.is_referent(at + 2))
    }

    /// `X with Y`. Returns true when the link after Y was consumed.
    fn with_rule(&mut self, x: usize, y: usize, y_at: usize) -> bool {
        if self.carries_marking(y) {
            self.relate(y, "on", x);
            return false;
        }
        if let Some(next) = self.link_words(y_at + 1) {
            let core = core_words(next);
            if !core.is_empty() && core.iter().any(|w| lexicon::is_scene_position(w)) && !self.is_referent(y_at + 2) {
                let predicate = format!("{} of", core.join(" "));
                self.relate(y, &predicate, x);
                return true;
            }
        }
        self.relate(x, "with", y);
        false
    }

    fn apply(&mut self, x: usize, core: &[String], y: usize, y_at: usize) -> bool {
        if core.len() == 1 && core[0] == "with" {
            return self.with_rule(x, y, y_at);
        }
        if self.categories[y] == ObjectCategory::Text && core.iter().all(|w| lexicon::is_text_cue(w)) {
            self.relate(y, "written on", x);
            return false;
        }
        self.relate(x, &core.join(" "), y);
        false
    }

    fn run(&mut self) {
        let mut start = 0;
        for (i, e) in self.elems.iter().enumerate().chain([(self.elems.len(), &Elem::Break)]) {
            if *e == Elem::Break {
                self.sentence(start, i);
                start = i + 1;
            }
        }
    }

    fn sentence(&mut self, start: usize, end: usize) {
        // (subject, link) of the last relation, reused across "and"
        let mut base: Option<(usize, Vec<String>)> = None;
        let mut k = start;
        while k < end {
            let left_at = k;
            if !self.is_referent(left_at) {
                k += 1;
                continue;
            }
            let next = left_at + 1;
            if next >= end {
                break;
            }
            match &self.elems[next] {
                Elem::Mention(y) => {
                    // `a sign 'OPEN'`
                    let y = *y;
                    if self.chunks[y].quoted {
                        if let Some(x) = self.resolve(left_at) {
                            self.relate(y, "on", x);
                        }
                    }
                    k = next;
                }
                Elem::Link(words) => {
                    let words = words.clone();
                    let right_at = next + 1;
                    if right_at >= end || !self.is_referent(right_at) {
                        k = right_at;
                        continue;
                    }
                    let (Some(x), Some(y)) = (self.resolve(left_at), self.resolve(right_at)) else {
                        k = right_at;
                        continue;
                    };
                    let core = core_words(&words).to_vec();
                    let mut consumed = false;
                    if core.is_empty() {
                        if let Some((subject, link)) = base.clone() {
                            if !self.has_own_relation(right_at) {
                                consumed = self.apply(subject, &link, y, right_at);
                            }
                        }
                    } else {
                        consumed = self.apply(x, &core, y, right_at);
                        base = Some((x, core));
                    }
                    k = if consumed { right_at + 2 } else { right_at };
                }
                _ => k = next,
            }
        }
    }
}

pub(crate) fn parse(text: &str, gazetteer: &Gazetteer) -> ParsedPrompt {
    let toks = fuse_proper_nouns(tokenize(text), gazetteer);
    let mut chunker = Chunker {
        toks: &toks,
        i: 0,
        chunks: Vec::new(),
        elems: Vec::new(),
    };
    chunker.run();
    let categories: Vec<ObjectCategory> = chunker.chunks.iter().map(|c| classify_object(&c.candidate())).collect();
    let mut reader = Reader {
        elems: &chunker.elems,
        categories: &categories,
        chunks: &chunker.chunks,
        relations: Vec::new(),
        unresolved: Vec::new(),
    };
    reader.run();
    let (relations, unresolved) = (reader.relations, reader.unresolved);
    ParsedPrompt {
        chunks: chunker.chunks,
        categories,
        relations,
        unresolved,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rels(text: &str) -> Vec<(String, String, String)> {
        let p = parse(text, &Gazetteer::builtin());
        p.relations
            .iter()
            .map(|r| (p.chunks[r.subject].phrase(), r.predicate.clone(), p.chunks[r.object].phrase()))
            .collect()
    }

    fn r(s: &str, p: &str, o: &str) -> (String, String, String) {
        (s.into(), p.into(), o.into())
    }

    #[test]
    fn quotes_and_apostrophes() {
        let toks = tokenize("the girl's 'Stephen Curry' \"OPEN 24\" don't");
        let quotes: Vec<_> = toks
            .iter()
            .filter_map(|t| match t {
                Tok::Quote(q) => Some(q.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(quotes, ["Stephen Curry", "OPEN 24"]);
        assert!(toks.iter().any(|t| matches!(t, Tok::Word { text, .. } if text == "girl's")));
        assert!(toks.iter().any(|t| matches!(t, Tok::Word { text, .. } if text == "don't")));
    }

    #[test]
    fn jersey_scene() {
        let p = parse(
            "A blue basketball jersey with the Golden State Warriors logo and 'Stephen Curry' written on it.",
            &Gazetteer::builtin(),
        );
        let phrases: Vec<String> = p.chunks.iter().map(Chunk::phrase).collect();
        assert_eq!(phrases, ["blue basketball jersey", "Golden State Warriors logo", "Stephen Curry"]);
        assert_eq!(p.categories, [ObjectCategory::Go, ObjectCategory::Pn, ObjectCategory::Text]);
        assert_eq!(
            rels("A blue basketball jersey with the Golden State Warriors logo and 'Stephen Curry' written on it."),
            [
                r("Golden State Warriors logo", "on", "blue basketball jersey"),
                r("Stephen Curry", "written on", "blue basketball jersey"),
            ]
        );
    }

    #[test]
    fn giraffe_scene() {
        let p = parse("Six giraffes in a grassy plain with trees in the background.", &Gazetteer::builtin());
        assert_eq!(p.chunks[0].count, Some(6));
        assert_eq!(
            rels("Six giraffes in a grassy plain with trees in the background."),
            [r("giraffes", "in", "grassy plain"), r("trees", "in background of", "grassy plain")]
        );
    }

    #[test]
    fn chains_and_verbs() {
        assert_eq!(
            rels("a cat on a table next to a lamp"),
            [r("cat", "on", "table"), r("table", "next to", "lamp")]
        );
        assert_eq!(rels("a young girl is wearing a pink dress"), [r("young girl", "is wearing", "pink dress")]);
        assert_eq!(rels("a grazing sheep"), []);
        assert_eq!(rels("a sheep grazing in a field"), [r("sheep", "grazing in", "field")]);
        assert_eq!(
            rels("a dog to the left of a red car"),
            [r("dog", "to left of", "red car")]
        );
    }

    #[test]
    fn text_cues() {
        assert_eq!(rels("a wooden sign saying 'OPEN'"), [r("OPEN", "written on", "wooden sign")]);
        assert_eq!(rels("a shop sign that reads fresh bread"), [r("fresh bread", "written on", "shop sign")]);
        let p = parse("a shop sign that reads fresh bread", &Gazetteer::builtin());
        assert_eq!(p.categories[1], ObjectCategory::Text);
    }

    #[test]
    fn coordination_reuses_the_last_link() {
        assert_eq!(
            rels("a mug with a logo and a stripe"),
            [r("logo", "on", "mug"), r("stripe", "on", "mug")]
        );
        assert_eq!(
            rels("a cat and a dog under a tree"),
            [r("dog", "under", "tree")]
        );
    }

    #[test]
    fn definite_mentions_corefer() {
        let p = parse("a cat next to a dog. The cat is sleeping.", &Gazetteer::builtin());
        assert_eq!(p.chunks.len(), 2);
    }

    #[test]
    fn unresolved_pronouns_are_reported() {
        let p = parse("it is next to a lamp", &Gazetteer::builtin());
        assert_eq!(p.unresolved, ["it"]);
        assert!(p.relations.is_empty());
    }

    #[test]
    fn capitalized_runs_mid_sentence() {
        let p = parse("a poster of Freddie Mercury on a wall", &Gazetteer::builtin());
        assert_eq!(p.categories, [ObjectCategory::Go, ObjectCategory::Pn, ObjectCategory::Go]);
        let p = parse("Red apples", &Gazetteer::builtin());
        assert_eq!(p.categories, [ObjectCategory::Go]);
    }
}
