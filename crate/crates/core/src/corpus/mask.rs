use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{Dataset, PackedSequence};
use super::vocab::{Vocabulary, MASK};
use crate::error::{Error, Result};
use crate::util::mix_seed;

const MASK_STREAM: u64 = 0x6d61_736b;

/// How a selected position is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    Mask,
    Random(u32),
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskStyle {
    /// Every selected position becomes `<mask>`.
    #[default]
    MaskOnly,
    /// 80% `<mask>`, 10% random word, 10% unchanged.
    Bert,
}

/// Positions chosen for prediction, with their original ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskLayout {
    pub positions: Vec<u32>,
    pub originals: Vec<u32>,
    pub corruption: Vec<Corruption>,
}

impl MaskLayout {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn corrupt(&self, ids: &mut [u32]) {
        for (&p, c) in self.positions.iter().zip(&self.corruption) {
            match *c {
                Corruption::Mask => ids[p as usize] = MASK,
                Corruption::Random(r) => ids[p as usize] = r,
                Corruption::Keep => {}
            }
        }
    }
}

/// Draws a layout for `seq`. Positions inside the identifier prefix and
/// positions holding reserved tokens are never selected. The result depends
/// only on `(seed, identity)` and the sequence content.
pub fn mask_layout(
    seq: &PackedSequence,
    p: f64,
    seed: u64,
    identity: u64,
    style: MaskStyle,
    vocab: &Vocabulary,
) -> MaskLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, MASK_STREAM, identity));
    let words: Vec<u32> = match style {
        MaskStyle::Bert => vocab.word_ids().collect(),
        MaskStyle::MaskOnly => Vec::new(),
    };
    let mut layout = MaskLayout {
        positions: Vec::new(),
        originals: Vec::new(),
        corruption: Vec::new(),
    };
    for (t, &id) in seq.ids.iter().enumerate().skip(seq.prefix_len) {
        if Vocabulary::is_special(id) || vocab.is_docid(id) {
            continue;
        }
        if rng.gen::<f64>() >= p {
            continue;
        }
        let c = match style {
            MaskStyle::MaskOnly => Corruption::Mask,
            MaskStyle::Bert => {
                let u: f64 = rng.gen();
                if u < 0.8 || words.is_empty() {
                    Corruption::Mask
                } else if u < 0.9 {
                    Corruption::Random(words[rng.gen_range(0..words.len())])
                } else {
                    Corruption::Keep
                }
            }
        };
        layout.positions.push(t as u32);
        layout.originals.push(id);
        layout.corruption.push(c);
    }
    layout
}

pub fn apply_mlm_mask(
    seq: &PackedSequence,
    p: f64,
    seed: u64,
    identity: u64,
    style: MaskStyle,
    vocab: &Vocabulary,
) -> Result<PackedSequence> {
    if seq.mask.is_some() {
        return Err(Error::Usage("sequence already has a mask layout".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("mask probability {p} outside [0, 1]")));
    }
    let mut out = seq.clone();
    out.mask = Some(mask_layout(seq, p, seed, identity, style, vocab));
    Ok(out)
}

/// Masks every sequence, using its index as the identity.
pub fn mask_dataset(ds: &Dataset, p: f64, seed: u64, style: MaskStyle, vocab: &Vocabulary) -> Result<Dataset> {
    let sequences = ds
        .sequences
        .iter()
        .enumerate()
        .map(|(i, s)| apply_mlm_mask(s, p, seed, i as u64, style, vocab))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        sequences,
        max_seq_len: ds.max_seq_len,
    })
}
