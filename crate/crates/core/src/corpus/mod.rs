//! Text ingestion, packing, masking, document identifiers and POS tags.

mod docid;
mod mask;
mod pos;
mod sequence;
pub mod synth;
mod tokenize;
mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use docid::{prepend_doc_ids, strip_doc_ids, DocIdMode, PREFIX_LEN, PREFIX_WORDS};
pub use mask::{apply_mlm_mask, mask_dataset, mask_layout, Corruption, MaskLayout, MaskStyle};
pub use pos::{histogram, is_number, LexiconTagger, PosTag, TagHistogram};
pub use sequence::{ends_with_terminal, pack_document, pack_sequences, Dataset, PackedSequence};
pub use tokenize::{detokenize, normalize_whitespace, split_documents, tokenize, TokenizedDoc};
pub use vocab::{Vocabulary, BOS, FIRST_WORD_ID, MASK, PAD, SPECIALS, UNK};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

/// A tokenized corpus: one entry per blank-line-separated block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub docs: Vec<TokenizedDoc>,
}

impl Corpus {
    pub fn parse(text: &str) -> Result<Self> {
        let docs: Vec<_> = split_documents(text)
            .into_iter()
            .map(|(off, body)| TokenizedDoc::new(body, off))
            .filter(|d| !d.is_empty())
            .collect();
        if docs.is_empty() {
            return Err(Error::Ingestion("corpus contains no documents".into()));
        }
        Ok(Corpus { docs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text =
            String::from_utf8(bytes).map_err(|e| Error::Ingestion(format!("{} is not UTF-8: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn num_tokens(&self) -> usize {
        self.docs.iter().map(TokenizedDoc::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str))
    }

    /// Token stream for an external tagger, one token per line.
    pub fn export_tokens(&self) -> String {
        let mut out = String::with_capacity(self.num_tokens() * 8);
        for t in self.tokens() {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn token_stream_hash(&self) -> String {
        sha256_hex(self.export_tokens().as_bytes())
    }

    pub fn has_tags(&self) -> bool {
        self.docs.iter().all(|d| d.tags.is_some())
    }

    /// Attaches `token<TAB>TAG` annotations, which must follow the exported
    /// token stream exactly. Returns the histogram of ingested tags.
    pub fn ingest_pos_annotations(&mut self, annotations: &str) -> Result<TagHistogram> {
        let mut lines = annotations.lines().filter(|l| !l.is_empty());
        let mut offset = 0usize;
        let mut per_doc = Vec::with_capacity(self.docs.len());
        let mut annotated_stream = String::new();
        for doc in &self.docs {
            let mut tags = Vec::with_capacity(doc.len());
            for tok in &doc.tokens {
                let line = lines.next().ok_or_else(|| Error::Misaligned {
                    offset,
                    detail: format!("annotations end before token {tok:?}"),
                })?;
                let (word, label) = line.split_once('\t').ok_or_else(|| Error::Misaligned {
                    offset,
                    detail: format!("line {line:?} is not token<TAB>TAG"),
                })?;
                if word != tok {
                    return Err(Error::Misaligned {
                        offset,
                        detail: format!("annotation has {word:?}, corpus has {tok:?}"),
                    });
                }
                annotated_stream.push_str(word);
                annotated_stream.push('\n');
                tags.push(PosTag::parse(label));
                offset += 1;
            }
            per_doc.push(tags);
        }
        if let Some(extra) = lines.next() {
            return Err(Error::Misaligned {
                offset,
                detail: format!("annotations continue past the corpus with {extra:?}"),
            });
        }
        if sha256_hex(annotated_stream.as_bytes()) != self.token_stream_hash() {
            return Err(Error::Misaligned {
                offset: 0,
                detail: "token stream checksum differs".into(),
            });
        }
        for (d, tags) in self.docs.iter_mut().zip(per_doc) {
            d.tags = Some(tags);
        }
        Ok(histogram(self.docs.iter().flat_map(|d| d.tags.iter().flatten())))
    }

    pub fn lexicon(&self) -> LexiconTagger {
        LexiconTagger::from_pairs(self.docs.iter().flat_map(|d| {
            d.tokens
                .iter()
                .map(String::as_str)
                .zip(d.tags.iter().flatten().copied())
        }))
    }

    pub fn build_vocab(&self, max_size: usize, min_freq: u64, required: &[&str]) -> Result<Vocabulary> {
        Vocabulary::build(
            self.docs.iter().map(|d| d.tokens.iter().map(String::as_str)),
            max_size,
            min_freq,
            required,
        )
    }

    pub fn pack(&self, vocab: &Vocabulary, max_seq_len: usize, reserve: usize) -> Result<Dataset> {
        pack_sequences(&self.docs, vocab, max_seq_len, reserve)
    }

    /// Moves the last `fraction` of documents (at least one, never all)
    /// into a held-out corpus.
    pub fn split_validation(&self, fraction: f64) -> Result<(Corpus, Corpus)> {
        let n = self.docs.len();
        if n < 2 {
            return Err(Error::Ingestion("need at least two documents to hold one out".into()));
        }
        let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        Ok((
            Corpus {
                docs: self.docs[..n - held].to_vec(),
            },
            Corpus {
                docs: self.docs[n - held..].to_vec(),
            },
        ))
    }

    /// Fraction of token occurrences that the vocabulary covers.
    pub fn coverage(&self, vocab: &Vocabulary) -> f64 {
        let known = self.tokens().filter(|t| vocab.id(t).is_some()).count();
        known as f64 / self.num_tokens().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub doc: usize,
    pub source_offset: usize,
    pub len: usize,
    pub truncated: bool,
}

/// Canonical description of a built dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub mask_seed: Option<u64>,
    pub content_hash: String,
    pub mean_len: f64,
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    pub fn new(ds: &Dataset, vocab: &Vocabulary, mask_seed: Option<u64>) -> Self {
        DatasetManifest {
            max_seq_len: ds.max_seq_len,
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            mask_seed,
            content_hash: ds.content_hash(),
            mean_len: ds.mean_len(),
            sequences: ds
                .sequences
                .iter()
                .map(|s| SequenceEntry {
                    doc: s.doc,
                    source_offset: s.source_offset,
                    len: s.len(),
                    truncated: s.truncated,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "Ann met Bob in 1942 . They ran .\n\nBob ran home .\n";

    #[test]
    fn parse_and_export() {
        let c = Corpus::parse(TEXT).unwrap();
        assert_eq!(c.docs.len(), 2);
        assert_eq!(c.num_tokens(), 13);
        assert_eq!(c.export_tokens().lines().count(), 13);
        assert!(matches!(Corpus::parse("\n \n"), Err(Error::Ingestion(_))));
    }

    fn annotate(c: &Corpus, tag: impl Fn(&str) -> &'static str) -> String {
        c.export_tokens()
            .lines()
            .map(|t| format!("{t}\t{}\n", tag(t)))
            .collect()
    }

    #[test]
    fn ingest_all_other() {
        let mut c = Corpus::parse(TEXT).unwrap();
        let h = c.ingest_pos_annotations(&annotate(&c, |_| "DET")).unwrap();
        assert_eq!(h, TagHistogram::from([(PosTag::Other, 13)]));
        assert!(c.has_tags());
    }

    #[test]
    fn misalignment_names_offset() {
        let mut c = Corpus::parse(TEXT).unwrap();
        let good = annotate(&c, |_| "X");
        let short: String = good.lines().take(5).map(|l| format!("{l}\n")).collect();
        match c.ingest_pos_annotations(&short) {
            Err(Error::Misaligned { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        let swapped = good.replacen("1942", "1943", 1);
        match c.ingest_pos_annotations(&swapped) {
            Err(Error::Misaligned { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        let long = format!("{good}extra\tNOUN\n");
        assert!(matches!(
            c.ingest_pos_annotations(&long),
            Err(Error::Misaligned { offset: 13, .. })
        ));
        assert!(!c.has_tags());
    }

    #[test]
    fn tags_flow_into_sequences() {
        let mut c = Corpus::parse(TEXT).unwrap();
        c.ingest_pos_annotations(&annotate(&c, |t| if is_number(t) { "NUM" } else { "NOUN" }))
            .unwrap();
        let v = c.build_vocab(100, 1, &[]).unwrap();
        let ds = c.pack(&v, 512, 0).unwrap();
        assert_eq!(ds.sequences[0].tags.as_ref().unwrap()[4], PosTag::Num);
        let lex = c.lexicon();
        assert_eq!(lex.tag("ran", false), PosTag::Noun);
        let m = DatasetManifest::new(&ds, &v, Some(3));
        assert_eq!(m.sequences.len(), 2);
        assert_eq!(m.vocab_hash, v.hash());
    }

    #[test]
    fn validation_split() {
        let c = Corpus::parse("a .\n\nb .\n\nc .\n\nd .\n").unwrap();
        let (t, v) = c.split_validation(0.25).unwrap();
        assert_eq!((t.docs.len(), v.docs.len()), (3, 1));
        assert_eq!(v.docs[0].tokens[0], "d");
    }
}
