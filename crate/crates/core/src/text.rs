//! Tokenization shared by chunking and lexical indexing.
//!
//! Chunking counts *word tokens*: maximal runs of alphanumeric characters, plus
//! every other non-whitespace character as a token of its own. The lexical
//! analyzer is stricter: it NFC-normalizes, lowercases and keeps only the
//! alphanumeric runs.

use unicode_normalization::UnicodeNormalization;

/// Byte range of one word token inside the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

/// Splits `text` into whitespace/punctuation word tokens.
pub fn word_tokens(text: &str) -> Vec<TokenSpan> {
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(idx);
            }
            continue;
        }
        if let Some(start) = run_start.take() {
            tokens.push(TokenSpan { start, end: idx });
        }
        if !ch.is_whitespace() {
            tokens.push(TokenSpan {
                start: idx,
                end: idx + ch.len_utf8(),
            });
        }
    }
    if let Some(start) = run_start {
        tokens.push(TokenSpan {
            start,
            end: text.len(),
        });
    }
    tokens
}

/// Index-time and query-time analyzer: NFC, lowercase, alphanumeric runs.
pub fn analyze(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}
