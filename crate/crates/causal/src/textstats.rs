//! Surface metrics of answer text used as outcome columns.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

const NOUN_SUFFIXES: &[&str] = &[
    "tion", "sion", "ment", "ness", "ity", "ism", "ance", "ence", "ship", "ogy", "ist", "ure", "age", "hood", "dom", "cyte", "ase", "ome",
];

const NOUN_LEXICON: &[&str] = &[
    "acid", "analysis", "answer", "area", "atom", "bacteria", "base", "blood", "body", "brain", "case", "cell", "cells", "change",
    "data", "disease", "dna", "dose", "drug", "effect", "energy", "enzyme", "evidence", "experiment", "field", "form", "gene",
    "genes", "group", "growth", "heat", "host", "level", "light", "mass", "method", "model", "molecule", "mouse", "network",
    "organism", "part", "patient", "patients", "pathway", "people", "process", "protein", "proteins", "rate", "receptor", "result",
    "results", "risk", "rna", "sample", "signal", "species", "structure", "study", "system", "temperature", "test", "theory",
    "time", "tissue", "treatment", "type", "value", "virus", "water", "way", "work", "year",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TextStats {
    /// Whitespace-separated tokens.
    pub tokens: usize,
    pub chars: usize,
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
    /// Words of three or more syllables.
    pub polysyllables: usize,
    pub type_token_ratio: f64,
    pub noun_ratio: f64,
    pub flesch_kincaid_grade: f64,
    pub smog: f64,
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| w.chars().any(char::is_alphabetic))
        .map(str::to_lowercase)
        .collect()
}

/// Vowel-group count with a silent final "e"; at least one.
pub fn syllables(word: &str) -> usize {
    let w: Vec<char> = word.to_lowercase().chars().filter(char::is_ascii_alphabetic).collect();
    if w.is_empty() {
        return 0;
    }
    let vowel = |c: char| "aeiouy".contains(c);
    let mut count = 0;
    let mut prev = false;
    for &c in &w {
        let v = vowel(c);
        if v && !prev {
            count += 1;
        }
        prev = v;
    }
    let n = w.len();
    if count > 1 && w[n - 1] == 'e' && !(n >= 2 && w[n - 2] == 'l') {
        count -= 1;
    }
    count.max(1)
}

fn is_noun(word: &str) -> bool {
    NOUN_LEXICON.contains(&word) || (word.len() > 5 && NOUN_SUFFIXES.iter().any(|s| word.ends_with(s)))
}

pub fn text_stats(text: &str) -> TextStats {
    let ws = words(text);
    let n = ws.len();
    let mut stats = TextStats {
        tokens: text.split_whitespace().count(),
        chars: text.chars().count(),
        words: n,
        ..TextStats::default()
    };
    if n == 0 {
        return stats;
    }
    let terminators = text
        .split(['.', '!', '?'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count();
    stats.sentences = terminators.max(1);
    let syl: Vec<usize> = ws.iter().map(|w| syllables(w)).collect();
    stats.syllables = syl.iter().sum();
    stats.polysyllables = syl.iter().filter(|&&s| s >= 3).count();
    stats.type_token_ratio = ws.iter().collect::<HashSet<_>>().len() as f64 / n as f64;
    stats.noun_ratio = ws.iter().filter(|w| is_noun(w)).count() as f64 / n as f64;
    let (w, s) = (n as f64, stats.sentences as f64);
    stats.flesch_kincaid_grade = 0.39 * (w / s) + 11.8 * (stats.syllables as f64 / w) - 15.59;
    stats.smog = 1.0430 * (stats.polysyllables as f64 * 30.0 / s).sqrt() + 3.1291;
    stats
}
