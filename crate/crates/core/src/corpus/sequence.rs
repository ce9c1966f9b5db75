use serde::{Deserialize, Serialize};

use super::mask::MaskLayout;
use super::pos::PosTag;
use super::tokenize::{is_sentence_terminal, TokenizedDoc};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::util::sha256_hex;

/// One training context: whole sentences from a single document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    /// Text token ids. Masked inputs are derived through [`Self::inputs`].
    pub ids: Vec<u32>,
    pub doc: usize,
    /// Token offset of the first text token inside its document.
    pub source_offset: usize,
    /// Exclusive end offsets of the sentences in this sequence.
    pub sentence_ends: Vec<usize>,
    /// Set when a single over-long sentence was cut to fit.
    pub truncated: bool,
    pub tags: Option<Vec<PosTag>>,
    /// Number of leading identifier tokens (0, or 3 with a docid prefix).
    pub prefix_len: usize,
    pub mask: Option<MaskLayout>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids as the model sees them: masked positions replaced.
    pub fn inputs(&self) -> Vec<u32> {
        let mut ids = self.ids.clone();
        if let Some(m) = &self.mask {
            m.corrupt(&mut ids);
        }
        ids
    }

    /// True when position `t` starts a sentence (after any prefix).
    pub fn is_sentence_start(&self, t: usize) -> bool {
        t == self.prefix_len || (t > self.prefix_len && self.sentence_ends.contains(&t))
    }
}

/// Packed sequences plus the length bound they were built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub sequences: Vec<PackedSequence>,
    pub max_seq_len: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sequences.iter().map(PackedSequence::len).sum()
    }

    pub fn mean_len(&self) -> f64 {
        self.num_tokens() as f64 / self.len().max(1) as f64
    }

    /// Length bound, sentence alignment and tag alignment of every sequence.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.sequences.iter().enumerate() {
            if s.is_empty() || s.len() > self.max_seq_len {
                return Err(Error::Ingestion(format!(
                    "sequence {i} has length {} (bound {})",
                    s.len(),
                    self.max_seq_len
                )));
            }
            if s.sentence_ends.last() != Some(&s.len()) {
                return Err(Error::Ingestion(format!(
                    "sequence {i} does not end on a sentence boundary"
                )));
            }
            if s.tags.as_ref().is_some_and(|t| t.len() != s.len()) {
                return Err(Error::Ingestion(format!("sequence {i} has misaligned tags")));
            }
        }
        Ok(())
    }

    /// Hash of the token content, independent of masks and tags.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.num_tokens() * 4 + self.len() * 4);
        for s in &self.sequences {
            bytes.extend_from_slice(&(s.len() as u32).to_le_bytes());
            for id in &s.ids {
                bytes.extend_from_slice(&id.to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }
}

/// Greedily packs whole sentences of one document into sequences of at most
/// `budget` tokens. A sentence longer than the budget becomes its own
/// sequence, cut to `budget` and flagged.
pub fn pack_document(doc: &TokenizedDoc, doc_index: usize, vocab: &Vocabulary, budget: usize) -> Vec<PackedSequence> {
    assert!(budget > 0, "packing budget must be positive");
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut ends: Vec<usize> = Vec::new();
    let flush = |start: &mut Option<usize>, ends: &mut Vec<usize>, out: &mut Vec<PackedSequence>| {
        if let Some(s) = start.take() {
            let end = *ends.last().expect("open sequence has a sentence");
            out.push(make_sequence(
                doc,
                doc_index,
                vocab,
                s,
                end,
                ends.iter().map(|e| e - s).collect(),
                false,
            ));
            ends.clear();
        }
    };
    for (s, e) in doc.sentences() {
        let len = e - s;
        if len > budget {
            flush(&mut start, &mut ends, &mut out);
            out.push(make_sequence(doc, doc_index, vocab, s, s + budget, vec![budget], true));
            continue;
        }
        if let Some(open) = start {
            if e - open > budget {
                flush(&mut start, &mut ends, &mut out);
            }
        }
        start.get_or_insert(s);
        ends.push(e);
    }
    flush(&mut start, &mut ends, &mut out);
    out
}

fn make_sequence(
    doc: &TokenizedDoc,
    doc_index: usize,
    vocab: &Vocabulary,
    start: usize,
    end: usize,
    sentence_ends: Vec<usize>,
    truncated: bool,
) -> PackedSequence {
    PackedSequence {
        ids: doc.tokens[start..end].iter().map(|t| vocab.encode(t)).collect(),
        doc: doc_index,
        source_offset: start,
        sentence_ends,
        truncated,
        tags: doc.tags.as_ref().map(|t| t[start..end].to_vec()),
        prefix_len: 0,
        mask: None,
    }
}

/// Packs every document. `reserve` tokens of each sequence are left free
/// for a later identifier prefix.
pub fn pack_sequences(
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    max_seq_len: usize,
    reserve: usize,
) -> Result<Dataset> {
    let budget = max_seq_len.checked_sub(reserve).filter(|&b| b > 0).ok_or_else(|| {
        Error::Config(format!(
            "max_seq_len {max_seq_len} leaves no room after reserving {reserve}"
        ))
    })?;
    let sequences = docs
        .iter()
        .enumerate()
        .flat_map(|(i, d)| pack_document(d, i, vocab, budget))
        .collect();
    let ds = Dataset { sequences, max_seq_len };
    ds.validate()?;
    Ok(ds)
}

/// Whether the token ending a sequence is terminal punctuation (truncated
/// and unterminated final sentences are not).
pub fn ends_with_terminal(seq: &PackedSequence, vocab: &Vocabulary) -> bool {
    seq.ids
        .last()
        .and_then(|&id| vocab.token(id))
        .is_some_and(is_sentence_terminal)
}
