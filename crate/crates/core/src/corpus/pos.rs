use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Coarse part-of-speech classes. Any other label is folded into `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Propn,
    Num,
    Verb,
    Adj,
    Other,
}

impl PosTag {
    pub const ALL: [PosTag; 6] = [
        PosTag::Noun,
        PosTag::Propn,
        PosTag::Num,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Other,
    ];

    pub fn parse(label: &str) -> PosTag {
        match label.trim().to_ascii_uppercase().as_str() {
            "NOUN" => PosTag::Noun,
            "PROPN" => PosTag::Propn,
            "NUM" => PosTag::Num,
            "VERB" => PosTag::Verb,
            "ADJ" => PosTag::Adj,
            _ => PosTag::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Propn => "PROPN",
            PosTag::Num => "NUM",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Other => "OTHER",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type TagHistogram = BTreeMap<PosTag, u64>;

pub fn histogram<'a>(tags: impl IntoIterator<Item = &'a PosTag>) -> TagHistogram {
    let mut h = TagHistogram::new();
    for &t in tags {
        *h.entry(t).or_default() += 1;
    }
    h
}

/// Digits, optionally with `.` or `,` between digit groups.
pub fn is_number(word: &str) -> bool {
    let b = word.as_bytes();
    !b.is_empty()
        && b[0].is_ascii_digit()
        && b[b.len() - 1].is_ascii_digit()
        && b.iter().all(|c| c.is_ascii_digit() || *c == b'.' || *c == b',')
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

/// Rule-plus-lexicon tagger for words without an annotation, in particular
/// model predictions.
#[derive(Debug, Clone, Default)]
pub struct LexiconTagger {
    counts: HashMap<String, [u64; 6]>,
}

impl LexiconTagger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, word: &str, tag: PosTag) {
        self.counts.entry(word.to_string()).or_default()[tag.index()] += 1;
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, PosTag)>) -> Self {
        let mut t = Self::new();
        for (w, tag) in pairs {
            t.observe(w, tag);
        }
        t
    }

    pub fn tag(&self, word: &str, sentence_initial: bool) -> PosTag {
        if is_number(word) {
            return PosTag::Num;
        }
        if is_capitalized(word) && !sentence_initial {
            return PosTag::Propn;
        }
        match self.counts.get(word) {
            // first maximum in enum order wins ties
            Some(c) => PosTag::ALL
                .into_iter()
                .rev()
                .max_by_key(|t| c[t.index()])
                .unwrap_or(PosTag::Other),
            None => PosTag::Other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(PosTag::parse("propn"), PosTag::Propn);
        assert_eq!(PosTag::parse("DET"), PosTag::Other);
        assert_eq!(PosTag::parse("X-NOUN"), PosTag::Other);
        for t in PosTag::ALL {
            assert_eq!(PosTag::parse(t.as_str()), t);
        }
        assert_eq!(serde_json::to_string(&PosTag::Adj).unwrap(), "\"ADJ\"");
    }

    #[test]
    fn rules_then_majority() {
        let mut lex = LexiconTagger::new();
        for _ in 0..10 {
            lex.observe("run", PosTag::Noun);
        }
        lex.observe("run", PosTag::Verb);
        lex.observe("run", PosTag::Verb);
        lex.observe("The", PosTag::Other);
        assert_eq!(lex.tag("1942", false), PosTag::Num);
        assert_eq!(lex.tag("3.5", true), PosTag::Num);
        assert_eq!(lex.tag("run", false), PosTag::Noun);
        assert_eq!(lex.tag("zzxq", false), PosTag::Other);
        assert_eq!(lex.tag("Paris", false), PosTag::Propn);
        assert_eq!(lex.tag("The", true), PosTag::Other);
        assert_eq!(lex.tag(".", false), PosTag::Other);
    }

    #[test]
    fn tie_prefers_enum_order() {
        let lex = LexiconTagger::from_pairs([("x", PosTag::Verb), ("x", PosTag::Noun)]);
        assert_eq!(lex.tag("x", false), PosTag::Noun);
    }

    #[test]
    fn number_pattern() {
        assert!(is_number("1,000") && is_number("7"));
        assert!(!is_number("1st") && !is_number(",5") && !is_number(""));
    }
}
