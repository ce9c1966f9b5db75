use std::collections::HashSet;

use super::config::{CorpusSource, DataConfig};
use crate::corpus::synth::generate;
use crate::corpus::{
    prepend_doc_ids, Corpus, Dataset, DatasetManifest, LexiconTagger, Vocabulary, PREFIX_LEN, PREFIX_WORDS,
};
use crate::error::{Error, Result};
use crate::util::sha256_hex;

/// Train and special (validation) data for one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Dataset,
    /// The whole validation split; doubles as the special batch.
    pub special: Dataset,
    pub lexicon: LexiconTagger,
    pub tagged: bool,
    pub manifest: DatasetManifest,
}

pub fn load_corpus(cfg: &DataConfig) -> Result<Corpus> {
    let mut corpus = match &cfg.corpus {
        CorpusSource::File(path) => Corpus::load(path)?,
        CorpusSource::Synthetic(s) => {
            let generated = generate(s)?;
            let mut c = Corpus::parse(&generated.text)?;
            if cfg.annotations.is_none() {
                c.ingest_pos_annotations(&generated.annotations)?;
            }
            c
        }
    };
    if let Some(path) = &cfg.annotations {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        corpus.ingest_pos_annotations(&text)?;
    }
    Ok(corpus)
}

/// Builds the vocabulary over the whole corpus, holds out the last
/// documents, packs both splits leaving room for an identifier prefix, and
/// applies the configured docid arm to the training split.
pub fn prepare(cfg: &DataConfig) -> Result<Prepared> {
    let corpus = load_corpus(cfg)?;
    let base_vocab = corpus.build_vocab(cfg.max_vocab, cfg.min_freq, &PREFIX_WORDS)?;
    let (train_corpus, val_corpus) = corpus.split_validation(cfg.validation_fraction)?;
    let train = train_corpus.pack(&base_vocab, cfg.max_seq_len, PREFIX_LEN)?;
    let special = val_corpus.pack(&base_vocab, cfg.max_seq_len, PREFIX_LEN)?;
    check_disjoint(&train, &special)?;
    let (train, vocab) = prepend_doc_ids(&train, &base_vocab, cfg.docid)?;
    let manifest = DatasetManifest::new(&train, &vocab, Some(cfg.eval_mask_seed));
    Ok(Prepared {
        lexicon: train_corpus.lexicon(),
        tagged: corpus.has_tags(),
        vocab,
        train,
        special,
        manifest,
    })
}

fn sequence_hash(ids: &[u32]) -> String {
    let bytes: Vec<u8> = ids.iter().flat_map(|i| i.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

/// The special batch must not repeat any training sequence.
pub fn check_disjoint(train: &Dataset, special: &Dataset) -> Result<()> {
    let seen: HashSet<String> = train.sequences.iter().map(|s| sequence_hash(&s.ids)).collect();
    for (i, s) in special.sequences.iter().enumerate() {
        if seen.contains(&sequence_hash(&s.ids)) {
            return Err(Error::Setup(format!(
                "special-batch sequence {i} also occurs in the training data"
            )));
        }
    }
    if special.is_empty() {
        return Err(Error::Setup("validation split packed to zero sequences".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::SynthConfig;
    use crate::corpus::DocIdMode;

    fn data(docid: DocIdMode) -> DataConfig {
        DataConfig {
            corpus: CorpusSource::Synthetic(SynthConfig {
                documents: 20,
                seed: 2,
                ..SynthConfig::default()
            }),
            max_seq_len: 64,
            docid,
            ..DataConfig::default()
        }
    }

    #[test]
    fn splits_and_arms() {
        let control = prepare(&data(DocIdMode::Control)).unwrap();
        assert!(control.tagged);
        assert_eq!(control.special.sequences.iter().map(|s| s.doc).max(), Some(1));
        let vocab_only = prepare(&data(DocIdMode::VocabOnly)).unwrap();
        assert_eq!(vocab_only.vocab.len(), control.vocab.len() + control.train.len());
        assert_eq!(vocab_only.train, control.train);
        let prepend = prepare(&data(DocIdMode::Prepend)).unwrap();
        assert!(prepend.train.sequences.iter().all(|s| s.prefix_len == PREFIX_LEN));
        assert_eq!(prepend.special, control.special);
    }

    #[test]
    fn overlap_is_a_setup_error() {
        let p = prepare(&data(DocIdMode::Control)).unwrap();
        let mut special = p.special.clone();
        special.sequences.push(p.train.sequences[0].clone());
        assert!(matches!(check_disjoint(&p.train, &special), Err(Error::Setup(_))));
    }
}
