//! Word-level tokenization: runs of alphanumerics are words, every other
//! non-space character is a token of its own. Case is preserved.

use super::pos::PosTag;

/// A document split into tokens, with enough spacing information to put the
/// text back together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub tokens: Vec<String>,
    /// `glue[i]` is true when token `i` directly follows token `i - 1`
    /// without whitespace.
    pub glue: Vec<bool>,
    /// Exclusive end index of every sentence, in order; the last entry is
    /// always `tokens.len()`.
    pub sentence_ends: Vec<usize>,
    /// Byte offset of the document in the source text.
    pub source_offset: usize,
    /// Per-token tags once annotations have been ingested.
    pub tags: Option<Vec<PosTag>>,
}

fn joins_word(prev: Option<char>, c: char, next: Option<char>) -> bool {
    matches!(c, '\'' | '-' | '.' | ',')
        && prev.is_some_and(char::is_alphanumeric)
        && next.is_some_and(char::is_alphanumeric)
        // "3.5" and "1,000" stay whole, "end.Next" does not
        && (c == '\'' || c == '-' || (prev.is_some_and(|p| p.is_ascii_digit()) && next.is_some_and(|n| n.is_ascii_digit())))
}

/// Splits text into `(token, glued_to_previous)` pairs.
pub fn tokenize(text: &str) -> Vec<(String, bool)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out: Vec<(String, bool)> = Vec::new();
    let mut current = String::new();
    let mut current_glue = false;
    let mut saw_space = true;
    for i in 0..chars.len() {
        let c = chars[i];
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        if c.is_whitespace() {
            if !current.is_empty() {
                out.push((std::mem::take(&mut current), current_glue));
            }
            saw_space = true;
            continue;
        }
        if c.is_alphanumeric() || (!current.is_empty() && joins_word(prev, c, next)) {
            if current.is_empty() {
                current_glue = !saw_space && !out.is_empty();
            }
            current.push(c);
        } else {
            if !current.is_empty() {
                out.push((std::mem::take(&mut current), current_glue));
                saw_space = false;
            }
            out.push((c.to_string(), !saw_space && !out.is_empty()));
        }
        saw_space = false;
    }
    if !current.is_empty() {
        out.push((current, current_glue));
    }
    out
}

pub fn is_sentence_terminal(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

impl TokenizedDoc {
    /// Tokenizes one document and finds sentence ends: a terminal `. ! ?`
    /// followed by whitespace, and the end of the document.
    pub fn new(text: &str, source_offset: usize) -> Self {
        let pairs = tokenize(text);
        let (tokens, glue): (Vec<String>, Vec<bool>) = pairs.into_iter().unzip();
        let mut sentence_ends = Vec::new();
        for i in 0..tokens.len() {
            let followed_by_space = i + 1 == tokens.len() || !glue[i + 1];
            if is_sentence_terminal(&tokens[i]) && followed_by_space {
                sentence_ends.push(i + 1);
            }
        }
        if sentence_ends.last() != Some(&tokens.len()) && !tokens.is_empty() {
            sentence_ends.push(tokens.len());
        }
        TokenizedDoc {
            tokens,
            glue,
            sentence_ends,
            source_offset,
            tags: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `(start, end)` token spans of the sentences.
    pub fn sentences(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = std::iter::once(0).chain(self.sentence_ends.iter().copied());
        starts.zip(self.sentence_ends.iter().copied())
    }

    pub fn detokenize(&self) -> String {
        detokenize(self.tokens.iter().map(String::as_str).zip(self.glue.iter().copied()))
    }
}

pub fn detokenize<'a>(tokens: impl IntoIterator<Item = (&'a str, bool)>) -> String {
    let mut out = String::new();
    for (i, (t, glued)) in tokens.into_iter().enumerate() {
        if i > 0 && !glued {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits a corpus into documents separated by blank lines.
pub fn split_documents(text: &str) -> Vec<(usize, &str)> {
    let mut docs = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                docs.push((s, &text[s..end]));
            }
        } else {
            if start.is_none() {
                start = Some(offset);
            }
            end = offset + line.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        docs.push((s, &text[s..end]));
    }
    docs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text).into_iter().map(|(t, _)| t).collect()
    }

    #[test]
    fn splits_punctuation_and_keeps_case() {
        assert_eq!(
            toks("Smith, born 1,000 years ago (in 3.5 B.C.), didn't!"),
            vec![
                "Smith", ",", "born", "1,000", "years", "ago", "(", "in", "3.5", "B", ".", "C", ".", ")", ",",
                "didn't", "!"
            ]
        );
    }

    #[test]
    fn sentence_boundaries() {
        let d = TokenizedDoc::new("It rained. Then it stopped! Done?Yes", 0);
        assert_eq!(d.sentence_ends, vec![3, 7, 10]);
        let spans: Vec<_> = d.sentences().collect();
        assert_eq!(spans, vec![(0, 3), (3, 7), (7, 10)]);
    }

    #[test]
    fn documents_split_on_blank_lines() {
        let text = "first doc\nstill first\n\n  \nsecond\n";
        let docs = split_documents(text);
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0], (0, "first doc\nstill first\n"));
        assert_eq!(docs[1].1, "second\n");
        assert_eq!(&text[docs[1].0..docs[1].0 + 6], "second");
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(text in "[a-zA-Z0-9 ,.!?'()\\-\n\t]{0,80}") {
            let doc = TokenizedDoc::new(&text, 0);
            prop_assert_eq!(doc.detokenize(), normalize_whitespace(&text));
        }
    }
}
