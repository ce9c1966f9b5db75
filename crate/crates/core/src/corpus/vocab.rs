use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const BOS: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<mask>", "<bos>"];
/// First id available to corpus words.
pub const FIRST_WORD_ID: u32 = SPECIALS.len() as u32;

/// Word-level token/id bijection over `[0, len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    docid_region: Option<Range<u32>>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    docid_region: Option<(u32, u32)>,
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            docid_region: v.docid_region.map(|r| (r.start, r.end)),
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;
    fn try_from(f: VocabFile) -> Result<Self> {
        if f.tokens.len() < SPECIALS.len() || f.tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Input(
                "vocabulary file does not start with the reserved tokens".into(),
            ));
        }
        let mut v = Vocabulary {
            index: HashMap::with_capacity(f.tokens.len()),
            tokens: Vec::with_capacity(f.tokens.len()),
            docid_region: None,
        };
        for t in f.tokens {
            if v.index.contains_key(&t) {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
            v.push(t);
        }
        if let Some((s, e)) = f.docid_region {
            if !(FIRST_WORD_ID <= s && s < e && e as usize <= v.len()) {
                return Err(Error::Input("docid region outside the vocabulary".into()));
            }
            v.docid_region = Some(s..e);
        }
        Ok(v)
    }
}

impl Vocabulary {
    /// Frequency-ranked vocabulary (ties broken lexicographically). Words
    /// seen fewer than `min_freq` times, or ranked beyond `max_size`, map to
    /// `<unk>`. `required` words are always present, placed after the
    /// ranked ones.
    pub fn build<'a, I, D>(docs: I, max_size: usize, min_freq: u64, required: &[&str]) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&'a str, u64> = HashMap::new();
        for doc in docs {
            for t in doc {
                *counts.entry(t).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Ingestion(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut missing: Vec<&str> = Vec::new();
        for &r in required {
            if !SPECIALS.contains(&r) && !missing.contains(&r) {
                missing.push(r);
            }
        }
        let capacity = max_size
            .checked_sub(SPECIALS.len() + missing.len())
            .ok_or_else(|| Error::Config(format!("max vocabulary size {max_size} leaves no room for words")))?;
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(t))
            .collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut v = Self::specials_only();
        for (t, _) in ranked {
            if v.len() - SPECIALS.len() == capacity {
                break;
            }
            v.push(t.to_string());
        }
        for r in missing {
            if !v.index.contains_key(r) {
                v.push(r.to_string());
            }
        }
        Ok(v)
    }

    pub fn specials_only() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            docid_region: None,
        };
        for s in SPECIALS {
            v.push(s.to_string());
        }
        v
    }

    fn push(&mut self, t: String) -> u32 {
        let id = self.tokens.len() as u32;
        self.index.insert(t.clone(), id);
        self.tokens.push(t);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `<unk>`.
    pub fn encode(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        id < FIRST_WORD_ID
    }

    pub fn docid_region(&self) -> Option<Range<u32>> {
        self.docid_region.clone()
    }

    pub fn is_docid(&self, id: u32) -> bool {
        self.docid_region.as_ref().is_some_and(|r| r.contains(&id))
    }

    /// Ids that can appear in ordinary text: everything except the reserved
    /// tokens and the docid region.
    pub fn word_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (FIRST_WORD_ID..self.len() as u32).filter(|&id| !self.is_docid(id))
    }

    /// Appends `token` if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> u32 {
        match self.id(token) {
            Some(id) => id,
            None => self.push(token.to_string()),
        }
    }

    /// Appends a contiguous region of `count` unique identifier tokens.
    pub fn add_docid_region(&mut self, count: usize) -> Result<Range<u32>> {
        if self.docid_region.is_some() {
            return Err(Error::Usage("vocabulary already has a docid region".into()));
        }
        let start = self.len() as u32;
        for i in 0..count {
            let name = format!("<doc:{i}>");
            if self.index.contains_key(&name) {
                return Err(Error::Usage(format!("token {name} already in the vocabulary")));
            }
            self.push(name);
        }
        let region = start..self.len() as u32;
        self.docid_region = Some(region.clone());
        Ok(region)
    }

    /// SHA-256 over the ordered token list and docid region.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(&VocabFile::from(self.clone())).expect("vocabulary serializes");
        sha256_hex(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn build(text: &str, max: usize) -> Vocabulary {
        Vocabulary::build([text.split_whitespace()], max, 1, &[]).unwrap()
    }

    #[test]
    fn frequency_order_after_specials() {
        let v = build("a a b", 10);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "<mask>", "<bos>", "a", "b"]);
        assert_eq!(v, build("a a b", 10));
    }

    #[test]
    fn ties_are_lexicographic_and_rare_words_unk() {
        let v = build("c b a c b a z", 6);
        assert_eq!(&v.tokens()[4..], &["a", "b"]);
        assert_eq!(v.encode("z"), UNK);
        let v = Vocabulary::build(["x x y".split_whitespace()], 100, 2, &["ID"]).unwrap();
        assert_eq!(&v.tokens()[4..], &["x", "ID"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: Vec<Vec<&str>> = vec![vec![]];
        assert!(matches!(Vocabulary::build(empty, 10, 1, &[]), Err(Error::Ingestion(_))));
    }

    #[test]
    fn docid_region_once() {
        let mut v = build("a b", 10);
        let r = v.add_docid_region(3).unwrap();
        assert_eq!(r, 6..9);
        assert_eq!(v.len(), 9);
        assert!(v.is_docid(7) && !v.is_docid(5));
        assert!(matches!(v.add_docid_region(1), Err(Error::Usage(_))));
        assert_eq!(v.word_ids().collect::<Vec<_>>(), vec![4, 5]);
    }

    #[test]
    fn json_roundtrip() {
        let mut v = build("a a b c", 10);
        v.add_docid_region(2).unwrap();
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    proptest! {
        #[test]
        fn bijection_is_total(words in proptest::collection::vec("[a-e]{1,3}", 1..60), max in 5usize..40) {
            let v = Vocabulary::build([words.iter().map(String::as_str)], max, 1, &[]).unwrap();
            prop_assert!(v.len() <= max);
            for id in 0..v.len() as u32 {
                prop_assert_eq!(v.id(v.token(id).unwrap()), Some(id));
            }
        }
    }
}
