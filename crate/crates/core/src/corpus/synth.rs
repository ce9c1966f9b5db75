//! Synthetic encyclopedia-style corpus with gold POS annotations.
//!
//! Each document describes one named subject. The subject's name, home
//! place, topic nouns and years recur within the document; verbs,
//! adjectives and other nouns come from shared Zipf-distributed pools.
//! Tokens are space separated, so the text tokenizes back to exactly the
//! annotated stream.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::pos::PosTag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub first_names: usize,
    pub surnames: usize,
    pub places: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            documents: 200,
            min_sentences: 4,
            max_sentences: 10,
            nouns: 2000,
            verbs: 400,
            adjectives: 400,
            first_names: 600,
            surnames: 1200,
            places: 600,
            zipf_exponent: 1.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub text: String,
    /// `token<TAB>TAG` per token, aligned with the tokenized text.
    pub annotations: String,
}

const TEMPLATES: &[&str] = &[
    "S was a A T from P .",
    "In Y , E V the A N of P .",
    "The T V K N in Y .",
    "S V a N with the A T .",
    "After the N , S V to P and V the T .",
    "It was A and A , and the N V the T .",
    "By Y the T of P had K N .",
    "S also V the A N , which V a T .",
    "The A T was V by S in Y .",
    "During the N , the T of S V K A N .",
];
const OPENING: &str = "E was born in P in Y .";

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gr", "kl", "st", "tr", "sh",
    "ch",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ei"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "s", "m", "nd", "rt"];

struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjectives: Vec<String>,
    first_names: Vec<String>,
    surnames: Vec<String>,
    places: Vec<String>,
}

fn syllable(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}{}{}",
        ONSETS.choose(rng).unwrap(),
        VOWELS.choose(rng).unwrap(),
        CODAS.choose(rng).unwrap()
    )
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn pool(n: usize, suffix: &str, cap: bool, seen: &mut HashSet<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.gen_range(1..=3);
        let mut w: String = (0..k).map(|_| syllable(rng)).collect();
        w.push_str(suffix);
        if cap {
            w = capitalize(&w);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn zipf(n: usize, s: f64) -> Result<Zipf<f64>> {
    Zipf::new(n as u64, s).map_err(|e| Error::Config(format!("bad Zipf parameters: {e}")))
}

fn pick<'a>(words: &'a [String], dist: &Zipf<f64>, rng: &mut ChaCha8Rng) -> &'a str {
    &words[dist.sample(rng) as usize - 1]
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.documents == 0 || cfg.min_sentences == 0 || cfg.min_sentences > cfg.max_sentences {
        return Err(Error::Config(
            "synthetic corpus needs documents and a valid sentence range".into(),
        ));
    }
    let sizes = [
        cfg.nouns,
        cfg.verbs,
        cfg.adjectives,
        cfg.first_names,
        cfg.surnames,
        cfg.places,
    ];
    if sizes.contains(&0) {
        return Err(Error::Config("every synthetic word pool must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen: HashSet<String> = [
        "the", "a", "and", "of", "in", "to", "with", "from", "was", "by", "had", "also", "which", "It", "The", "In",
        "By", "After", "During", "born",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    let lex = Lexicon {
        nouns: pool(cfg.nouns, "", false, &mut seen, &mut rng),
        verbs: pool(cfg.verbs, "ed", false, &mut seen, &mut rng),
        adjectives: pool(cfg.adjectives, "ic", false, &mut seen, &mut rng),
        first_names: pool(cfg.first_names, "", true, &mut seen, &mut rng),
        surnames: pool(cfg.surnames, "", true, &mut seen, &mut rng),
        places: pool(cfg.places, "ia", true, &mut seen, &mut rng),
    };
    let s = cfg.zipf_exponent;
    let (zn, zv, za) = (zipf(cfg.nouns, s)?, zipf(cfg.verbs, s)?, zipf(cfg.adjectives, s)?);
    let (zf, zs, zp) = (zipf(cfg.first_names, s)?, zipf(cfg.surnames, s)?, zipf(cfg.places, s)?);

    let mut text = String::new();
    let mut ann = String::new();
    for d in 0..cfg.documents {
        if d > 0 {
            text.push('\n');
        }
        let first = pick(&lex.first_names, &zf, &mut rng).to_string();
        let last = pick(&lex.surnames, &zs, &mut rng).to_string();
        let place = pick(&lex.places, &zp, &mut rng).to_string();
        let topics: Vec<String> = (0..rng.gen_range(2..=3))
            .map(|_| pick(&lex.nouns, &zn, &mut rng).to_string())
            .collect();
        let years: Vec<String> = (0..2).map(|_| rng.gen_range(1700..2021).to_string()).collect();
        let n_sent = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
        let mut tokens: Vec<(String, PosTag)> = Vec::new();
        for k in 0..n_sent {
            let template = if k == 0 {
                OPENING
            } else {
                TEMPLATES.choose(&mut rng).unwrap()
            };
            for slot in template.split(' ') {
                match slot {
                    "E" => {
                        tokens.push((first.clone(), PosTag::Propn));
                        tokens.push((last.clone(), PosTag::Propn));
                    }
                    "S" => tokens.push((last.clone(), PosTag::Propn)),
                    "P" => tokens.push((place.clone(), PosTag::Propn)),
                    "Y" => tokens.push((years.choose(&mut rng).unwrap().clone(), PosTag::Num)),
                    "K" => tokens.push((rng.gen_range(2..1000).to_string(), PosTag::Num)),
                    "T" => tokens.push((topics.choose(&mut rng).unwrap().clone(), PosTag::Noun)),
                    "N" => tokens.push((pick(&lex.nouns, &zn, &mut rng).to_string(), PosTag::Noun)),
                    "V" => tokens.push((pick(&lex.verbs, &zv, &mut rng).to_string(), PosTag::Verb)),
                    "A" => tokens.push((pick(&lex.adjectives, &za, &mut rng).to_string(), PosTag::Adj)),
                    w => tokens.push((w.to_string(), PosTag::Other)),
                }
            }
        }
        let line: Vec<&str> = tokens.iter().map(|(t, _)| t.as_str()).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
        for (t, tag) in &tokens {
            ann.push_str(t);
            ann.push('\t');
            ann.push_str(tag.as_str());
            ann.push('\n');
        }
    }
    Ok(SynthCorpus { text, annotations: ann })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;

    fn small() -> SynthConfig {
        SynthConfig {
            documents: 30,
            nouns: 100,
            verbs: 30,
            adjectives: 30,
            first_names: 20,
            surnames: 40,
            places: 20,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 6, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn annotations_align_with_tokenizer() {
        let s = generate(&small()).unwrap();
        let mut c = Corpus::parse(&s.text).unwrap();
        assert_eq!(c.docs.len(), 30);
        let h = c.ingest_pos_annotations(&s.annotations).unwrap();
        for t in PosTag::ALL {
            assert!(h.get(&t).copied().unwrap_or(0) > 0, "{t} missing");
        }
        assert!(c.docs.iter().all(|d| d.sentence_ends.len() >= 4));
    }
}
