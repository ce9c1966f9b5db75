use serde::{Deserialize, Serialize};

use super::pos::PosTag;
use super::sequence::Dataset;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const PREFIX_WORDS: [&str; 2] = ["document", "ID"];
pub const PREFIX_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocIdMode {
    /// Dataset and vocabulary unchanged.
    Control,
    /// One identifier token per sequence added to the vocabulary only.
    VocabOnly,
    /// Identifier tokens added and every sequence prefixed with
    /// `document ID <id>`.
    Prepend,
}

impl DocIdMode {
    pub const ALL: [DocIdMode; 3] = [DocIdMode::Control, DocIdMode::VocabOnly, DocIdMode::Prepend];

    pub fn as_str(self) -> &'static str {
        match self {
            DocIdMode::Control => "control",
            DocIdMode::VocabOnly => "vocab-only",
            DocIdMode::Prepend => "prepend",
        }
    }
}

pub fn prepend_doc_ids(ds: &Dataset, vocab: &Vocabulary, mode: DocIdMode) -> Result<(Dataset, Vocabulary)> {
    if vocab.docid_region().is_some() {
        return Err(Error::Usage("vocabulary already has a docid region".into()));
    }
    let mut vocab = vocab.clone();
    if mode == DocIdMode::Control {
        return Ok((ds.clone(), vocab));
    }
    let words = match mode {
        // resolved before the region so "document"/"ID" never land inside it
        DocIdMode::Prepend => Some(PREFIX_WORDS.map(|w| vocab.insert(w))),
        _ => None,
    };
    let region = vocab.add_docid_region(ds.len())?;
    let Some([doc_word, id_word]) = words else {
        return Ok((ds.clone(), vocab));
    };
    let mut out = ds.clone();
    for (i, s) in out.sequences.iter_mut().enumerate() {
        if s.prefix_len != 0 || s.mask.is_some() {
            return Err(Error::Usage(format!(
                "sequence {i} already has a prefix or mask layout"
            )));
        }
        if s.len() + PREFIX_LEN > ds.max_seq_len {
            return Err(Error::Config(format!(
                "sequence {i} of length {} cannot take a {PREFIX_LEN}-token prefix within {}",
                s.len(),
                ds.max_seq_len
            )));
        }
        let mut ids = vec![doc_word, id_word, region.start + i as u32];
        ids.extend_from_slice(&s.ids);
        s.ids = ids;
        s.sentence_ends = s.sentence_ends.iter().map(|e| e + PREFIX_LEN).collect();
        if let Some(tags) = &mut s.tags {
            tags.splice(0..0, [PosTag::Other; PREFIX_LEN]);
        }
        s.prefix_len = PREFIX_LEN;
    }
    out.validate()?;
    Ok((out, vocab))
}

/// Removes identifier prefixes, recovering the control dataset.
pub fn strip_doc_ids(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for s in &mut out.sequences {
        let k = s.prefix_len;
        s.ids.drain(..k);
        s.sentence_ends = s.sentence_ends.iter().map(|e| e - k).collect();
        if let Some(tags) = &mut s.tags {
            tags.drain(..k);
        }
        s.prefix_len = 0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sequence::pack_sequences;
    use crate::corpus::tokenize::TokenizedDoc;
    use std::collections::HashSet;

    fn setup(n: usize) -> (Dataset, Vocabulary) {
        let docs: Vec<_> = (0..n)
            .map(|i| TokenizedDoc::new(&format!("word{} and more words here .", i % 7), 0))
            .collect();
        let v = Vocabulary::build(
            docs.iter().map(|d| d.tokens.iter().map(String::as_str)),
            1000,
            1,
            &PREFIX_WORDS,
        )
        .unwrap();
        (pack_sequences(&docs, &v, 16, PREFIX_LEN).unwrap(), v)
    }

    #[test]
    fn control_is_identity() {
        let (ds, v) = setup(5);
        let (d2, v2) = prepend_doc_ids(&ds, &v, DocIdMode::Control).unwrap();
        assert_eq!((d2, v2), (ds, v));
    }

    #[test]
    fn vocab_only_grows_vocabulary() {
        let (ds, v) = setup(1000);
        let (d2, v2) = prepend_doc_ids(&ds, &v, DocIdMode::VocabOnly).unwrap();
        assert_eq!(v2.len(), v.len() + 1000);
        assert_eq!(d2, ds);
    }

    #[test]
    fn prepend_prefix_unique_and_strippable() {
        let (ds, v) = setup(50);
        let (d2, v2) = prepend_doc_ids(&ds, &v, DocIdMode::Prepend).unwrap();
        assert_eq!(v2.len(), v.len() + 50);
        let mut seen = HashSet::new();
        for s in &d2.sequences {
            assert_eq!(v2.token(s.ids[0]), Some("document"));
            assert_eq!(v2.token(s.ids[1]), Some("ID"));
            assert!(v2.is_docid(s.ids[2]));
            assert!(seen.insert(s.ids[2]));
        }
        assert_eq!(strip_doc_ids(&d2), ds);
        assert!(matches!(
            prepend_doc_ids(&d2, &v2, DocIdMode::Prepend),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn prepend_overflow_is_an_error() {
        let docs = [TokenizedDoc::new("a b c d .", 0)];
        let v = Vocabulary::build([docs[0].tokens.iter().map(String::as_str)], 100, 1, &[]).unwrap();
        let ds = pack_sequences(&docs, &v, 6, 0).unwrap();
        assert!(matches!(
            prepend_doc_ids(&ds, &v, DocIdMode::Prepend),
            Err(Error::Config(_))
        ));
    }
}
