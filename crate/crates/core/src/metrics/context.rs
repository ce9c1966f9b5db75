use super::{argmax, memory_unit_lengths, perplexity, token_nll, MemoryUnitStats, PosRecord};
use crate::corpus::{mask_layout, Dataset, LexiconTagger, MaskStyle, PosTag, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModelState, Task};
use crate::tensor::Tensor;

/// Anything that maps token sequences to per-position logits.
pub trait LogitSource: Sync {
    fn vocab_size(&self) -> usize;
    /// One `[len x V]` tensor per input sequence.
    fn logits(&self, inputs: &[&[u32]]) -> Result<Vec<Tensor<f32>>>;
}

impl LogitSource for ModelState<f32> {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn logits(&self, inputs: &[&[u32]]) -> Result<Vec<Tensor<f32>>> {
        self.forward(inputs)
    }
}

/// One scored prediction: logits row `row` of sequence `seq` should
/// predict `target`, the token at position `pos`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Context {
    pub seq: u32,
    pub pos: u32,
    pub row: u32,
    pub target: u32,
    pub tag: Option<PosTag>,
    pub sentence_initial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    pub task: Task,
    /// Model inputs per sequence (masked for the masked task).
    pub inputs: Vec<Vec<u32>>,
    /// Ordered by sequence, then position.
    pub contexts: Vec<Context>,
    /// `contexts[offsets[i]..offsets[i + 1]]` belong to sequence `i`.
    pub offsets: Vec<usize>,
}

/// Causal: every position after the first (and after any identifier
/// prefix). Masked: the positions of one fixed layout drawn from
/// `eval_mask_seed`, reused for every evaluation.
pub fn extract_contexts(
    ds: &Dataset,
    task: Task,
    eval_mask_seed: u64,
    mask_p: f64,
    vocab: &Vocabulary,
) -> Result<ContextSet> {
    let mut set = ContextSet {
        task,
        inputs: Vec::with_capacity(ds.len()),
        contexts: Vec::new(),
        offsets: vec![0],
    };
    for (i, s) in ds.sequences.iter().enumerate() {
        let ctx = |pos: usize, row: usize| Context {
            seq: i as u32,
            pos: pos as u32,
            row: row as u32,
            target: s.ids[pos],
            tag: s.tags.as_ref().map(|t| t[pos]),
            sentence_initial: s.is_sentence_start(pos),
        };
        match task {
            Task::Causal => {
                set.inputs.push(s.ids.clone());
                let first = s.prefix_len.max(1);
                set.contexts.extend((first..s.len()).map(|t| ctx(t, t - 1)));
            }
            Task::Masked => {
                let layout = mask_layout(s, mask_p, eval_mask_seed, i as u64, MaskStyle::MaskOnly, vocab);
                let mut inputs = s.ids.clone();
                layout.corrupt(&mut inputs);
                set.inputs.push(inputs);
                set.contexts
                    .extend(layout.positions.iter().map(|&p| ctx(p as usize, p as usize)));
            }
        }
        set.offsets.push(set.contexts.len());
    }
    if set.contexts.is_empty() {
        return Err(Error::Input("dataset yields no evaluation contexts".into()));
    }
    Ok(set)
}

/// Per-context outcome of one evaluation, aligned with `ContextSet::contexts`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub predicted: Vec<u32>,
    pub correct: Vec<bool>,
    pub nll: Vec<f64>,
}

impl Scores {
    pub fn hits(&self) -> u64 {
        self.correct.iter().filter(|&&c| c).count() as u64
    }

    /// Exact-memorization fraction.
    pub fn m(&self) -> f64 {
        self.hits() as f64 / self.correct.len() as f64
    }

    pub fn perplexity(&self) -> Result<f64> {
        perplexity(&self.nll)
    }
}

fn batches(set: &ContextSet, max_batch_tokens: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let (mut start, mut tokens) = (0, 0);
    for (i, s) in set.inputs.iter().enumerate() {
        if i > start && tokens + s.len() > max_batch_tokens {
            out.push(start..i);
            start = i;
            tokens = 0;
        }
        tokens += s.len();
    }
    if start < set.inputs.len() {
        out.push(start..set.inputs.len());
    }
    out
}

fn score_batch(source: &dyn LogitSource, set: &ContextSet, seqs: std::ops::Range<usize>) -> Result<Scores> {
    let inputs: Vec<&[u32]> = set.inputs[seqs.clone()].iter().map(Vec::as_slice).collect();
    let logits = source.logits(&inputs)?;
    let v = source.vocab_size();
    let ctxs = &set.contexts[set.offsets[seqs.start]..set.offsets[seqs.end]];
    let mut out = Scores {
        predicted: Vec::with_capacity(ctxs.len()),
        correct: Vec::with_capacity(ctxs.len()),
        nll: Vec::with_capacity(ctxs.len()),
    };
    for c in ctxs {
        let t = &logits[c.seq as usize - seqs.start];
        let row = &t.data()[c.row as usize * v..(c.row as usize + 1) * v];
        let pred = argmax(row) as u32;
        out.predicted.push(pred);
        out.correct.push(pred == c.target);
        out.nll.push(token_nll(row, c.target));
    }
    Ok(out)
}

/// Scores every context with one teacher-forced pass per sequence.
/// Sequences are grouped into forward batches of at most
/// `max_batch_tokens` tokens; the result does not depend on the grouping.
pub fn score(source: &dyn LogitSource, set: &ContextSet, max_batch_tokens: usize) -> Result<Scores> {
    let groups = batches(set, max_batch_tokens.max(1));
    #[cfg(feature = "parallel")]
    let parts: Vec<Scores> = {
        use rayon::prelude::*;
        groups
            .into_par_iter()
            .map(|g| score_batch(source, set, g))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Scores> = groups
        .into_iter()
        .map(|g| score_batch(source, set, g))
        .collect::<Result<_>>()?;
    let mut all = Scores {
        predicted: Vec::with_capacity(set.contexts.len()),
        correct: Vec::with_capacity(set.contexts.len()),
        nll: Vec::with_capacity(set.contexts.len()),
    };
    for p in parts {
        all.predicted.extend(p.predicted);
        all.correct.extend(p.correct);
        all.nll.extend(p.nll);
    }
    Ok(all)
}

impl ContextSet {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn num_sequences(&self) -> usize {
        self.inputs.len()
    }

    /// Per-sequence bitmaps of exactly-memorized positions.
    pub fn bitmaps<'a>(&'a self, scores: &'a Scores) -> impl Iterator<Item = &'a [bool]> + 'a {
        self.offsets.windows(2).map(move |w| &scores.correct[w[0]..w[1]])
    }

    pub fn memory_units(&self, scores: &Scores) -> MemoryUnitStats {
        memory_unit_lengths(self.bitmaps(scores))
    }

    /// Exact-match fraction of each sequence.
    pub fn per_sequence_m(&self, scores: &Scores) -> Vec<f64> {
        self.bitmaps(scores)
            .map(|b| b.iter().filter(|&&c| c).count() as f64 / b.len().max(1) as f64)
            .collect()
    }

    /// `R(p)` and `R_mem(p)`; predictions are tagged with the lexicon rule.
    pub fn pos_record(&self, scores: &Scores, lexicon: &LexiconTagger, vocab: &Vocabulary) -> Result<PosRecord> {
        let mut triples = Vec::with_capacity(self.len());
        for (c, (&pred, &ok)) in self.contexts.iter().zip(scores.predicted.iter().zip(&scores.correct)) {
            let gt = c
                .tag
                .ok_or_else(|| Error::Input(format!("context {}:{} has no POS tag", c.seq, c.pos)))?;
            let word = vocab.token(pred).unwrap_or("");
            triples.push((gt, lexicon.tag(word, c.sentence_initial), ok));
        }
        Ok(PosRecord::from_triples(triples))
    }
}
