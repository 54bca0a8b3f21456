//! Benchmark adapters. Each source schema is normalized to [`BenchmarkItem`].

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::corpus::DomainTag;

pub const MAX_CHOICES: usize = 26;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub question: String,
    pub choices: Vec<String>,
    pub gold_index: usize,
    #[serde(default)]
    pub allows_unsure: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domain_hint: Vec<DomainTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkFormat {
    /// Our JSONL schema; also used for the cross-disciplinary set.
    Native,
    Litqa2,
    Gpqa,
    Wmdp,
    Hle,
}

impl BenchmarkFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkFormat::Native => "native",
            BenchmarkFormat::Litqa2 => "litqa2",
            BenchmarkFormat::Gpqa => "gpqa",
            BenchmarkFormat::Wmdp => "wmdp",
            BenchmarkFormat::Hle => "hle",
        }
    }
}

impl fmt::Display for BenchmarkFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "native" | "xdisc" => Ok(BenchmarkFormat::Native),
            "litqa2" | "litqa" => Ok(BenchmarkFormat::Litqa2),
            "gpqa" => Ok(BenchmarkFormat::Gpqa),
            "wmdp" => Ok(BenchmarkFormat::Wmdp),
            "hle" | "hle-bio" => Ok(BenchmarkFormat::Hle),
            other => Err(EvalError::Config(format!("unknown benchmark format {other:?}"))),
        }
    }
}

fn format_err(line: usize, field: &str, message: impl Into<String>) -> EvalError {
    EvalError::Format { line, field: field.to_owned(), message: message.into() }
}

/// `"C"` → 2. Accepts a single ASCII letter in either case.
pub fn letter_index(letter: &str) -> Option<usize> {
    let mut chars = letter.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some((c.to_ascii_uppercase() as u8 - b'A') as usize),
        _ => None,
    }
}

impl BenchmarkItem {
    pub fn validate(&self, line: usize) -> Result<(), EvalError> {
        if self.item_id.trim().is_empty() {
            return Err(format_err(line, "item_id", "empty"));
        }
        if self.question.trim().is_empty() {
            return Err(format_err(line, "question", "empty"));
        }
        if !(2..=MAX_CHOICES).contains(&self.choices.len()) {
            return Err(format_err(line, "choices", format!("expected 2..=26 choices, got {}", self.choices.len())));
        }
        if let Some(i) = self.choices.iter().position(|c| c.trim().is_empty()) {
            return Err(format_err(line, "choices", format!("choice {i} is empty")));
        }
        if self.gold_index >= self.choices.len() {
            return Err(format_err(line, "gold_index", format!("{} out of range for {} choices", self.gold_index, self.choices.len())));
        }
        Ok(())
    }
}

/// Deterministic order for sources that store the answer apart from the
/// distractors: choices sorted by sha256(item_id || choice).
fn keyed_order(item_id: &str, correct: String, distractors: Vec<String>) -> (Vec<String>, usize) {
    let mut all: Vec<(Vec<u8>, bool, String)> = std::iter::once((correct, true))
        .chain(distractors.into_iter().map(|d| (d, false)))
        .map(|(c, gold)| {
            let mut h = Sha256::new();
            h.update(item_id.as_bytes());
            h.update([0]);
            h.update(c.as_bytes());
            (h.finalize().to_vec(), gold, c)
        })
        .collect();
    all.sort();
    let gold = all.iter().position(|(_, g, _)| *g).unwrap_or(0);
    (all.into_iter().map(|(_, _, c)| c).collect(), gold)
}

fn str_field<'a>(obj: &'a Value, line: usize, field: &str) -> Result<&'a str, EvalError> {
    obj.get(field).and_then(Value::as_str).ok_or_else(|| format_err(line, field, "missing or not a string"))
}

fn str_list(obj: &Value, line: usize, field: &str) -> Result<Vec<String>, EvalError> {
    let arr = obj.get(field).and_then(Value::as_array).ok_or_else(|| format_err(line, field, "missing or not a list"))?;
    arr.iter()
        .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| format_err(line, field, "non-string entry")))
        .collect()
}

fn id_or(obj: &Value, keys: &[&str], fallback: String) -> String {
    keys.iter()
        .find_map(|k| match obj.get(*k) {
            Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
            Some(Value::Number(n)) => Some(n.to_string()),
            _ => None,
        })
        .unwrap_or(fallback)
}

fn native(obj: &Value, line: usize) -> Result<Option<BenchmarkItem>, EvalError> {
    let choices = str_list(obj, line, "choices")?;
    let gold_index = match (obj.get("gold_index"), obj.get("gold")) {
        (Some(v), _) => v.as_u64().ok_or_else(|| format_err(line, "gold_index", "not a non-negative integer"))? as usize,
        (None, Some(Value::String(s))) => letter_index(s).ok_or_else(|| format_err(line, "gold", format!("{s:?} is not a letter")))?,
        _ => return Err(format_err(line, "gold_index", "missing (give gold_index or gold letter)")),
    };
    let domain_hint = match obj.get("domain_hint") {
        None | Some(Value::Null) => Vec::new(),
        Some(_) => str_list(obj, line, "domain_hint")?.into_iter().map(DomainTag::new).collect(),
    };
    Ok(Some(BenchmarkItem {
        item_id: str_field(obj, line, "item_id")?.to_owned(),
        question: str_field(obj, line, "question")?.to_owned(),
        choices,
        gold_index,
        allows_unsure: obj.get("allows_unsure").and_then(Value::as_bool).unwrap_or(false),
        domain_hint,
    }))
}

/// `{"id", "question", "ideal", "distractors": [...]}`; the unsure option is
/// offered at prompt time rather than stored as a choice.
fn litqa2(obj: &Value, line: usize) -> Result<Option<BenchmarkItem>, EvalError> {
    let item_id = id_or(obj, &["id"], format!("litqa2-{line}"));
    let ideal = str_field(obj, line, "ideal")?.to_owned();
    let distractors = str_list(obj, line, "distractors")?;
    let (choices, gold_index) = keyed_order(&item_id, ideal, distractors);
    Ok(Some(BenchmarkItem {
        item_id,
        question: str_field(obj, line, "question")?.to_owned(),
        choices,
        gold_index,
        allows_unsure: true,
        domain_hint: Vec::new(),
    }))
}

/// `{"question", "choices": [...], "answer": <int>}`.
fn wmdp(obj: &Value, line: usize) -> Result<Option<BenchmarkItem>, EvalError> {
    let answer = obj.get("answer").ok_or_else(|| format_err(line, "answer", "missing"))?;
    let gold_index = match answer {
        Value::Number(n) => n.as_u64().ok_or_else(|| format_err(line, "answer", "not a non-negative integer"))? as usize,
        Value::String(s) => letter_index(s).ok_or_else(|| format_err(line, "answer", format!("{s:?} is not a letter")))?,
        _ => return Err(format_err(line, "answer", "expected an index or letter")),
    };
    Ok(Some(BenchmarkItem {
        item_id: id_or(obj, &["id", "item_id"], format!("wmdp-{line}")),
        question: str_field(obj, line, "question")?.to_owned(),
        choices: str_list(obj, line, "choices")?,
        gold_index,
        allows_unsure: false,
        domain_hint: Vec::new(),
    }))
}

/// `{"id", "question", "answer", "answer_type"}` with choices embedded in the
/// question after an "Answer Choices:" line. Non-multiple-choice items are
/// skipped.
fn hle(obj: &Value, line: usize) -> Result<Option<BenchmarkItem>, EvalError> {
    if obj.get("answer_type").and_then(Value::as_str).is_some_and(|t| t != "multipleChoice") {
        return Ok(None);
    }
    let text = str_field(obj, line, "question")?;
    let Some(pos) = text.find("Answer Choices:") else {
        return Err(format_err(line, "question", "no \"Answer Choices:\" section"));
    };
    let stem = text[..pos].trim().to_owned();
    let mut choices: Vec<String> = Vec::new();
    for l in text[pos + "Answer Choices:".len()..].lines().map(str::trim).filter(|l| !l.is_empty()) {
        let mut cs = l.chars();
        match (cs.next(), cs.next()) {
            (Some(c), Some('.' | ')')) if c.is_ascii_uppercase() && (c as u8 - b'A') as usize == choices.len() => {
                choices.push(cs.as_str().trim().to_owned());
            }
            // Continuation of the previous choice.
            _ => match choices.last_mut() {
                Some(last) => {
                    last.push(' ');
                    last.push_str(l);
                }
                None => return Err(format_err(line, "question", format!("unexpected line {l:?} before the first choice"))),
            },
        }
    }
    let answer = str_field(obj, line, "answer")?;
    let gold_index = letter_index(answer).ok_or_else(|| format_err(line, "answer", format!("{answer:?} is not a letter")))?;
    Ok(Some(BenchmarkItem {
        item_id: id_or(obj, &["id"], format!("hle-{line}")),
        question: stem,
        choices,
        gold_index,
        allows_unsure: false,
        domain_hint: Vec::new(),
    }))
}

fn load_jsonl(
    text: &str,
    parse: fn(&Value, usize) -> Result<Option<BenchmarkItem>, EvalError>,
) -> Result<Vec<BenchmarkItem>, EvalError> {
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(raw).map_err(|e| format_err(line, "<json>", e.to_string()))?;
        if !obj.is_object() {
            return Err(format_err(line, "<json>", "expected an object"));
        }
        match parse(&obj, line)? {
            Some(item) => {
                item.validate(line)?;
                items.push(item);
            }
            None => log::info!("line {line}: skipping non-multiple-choice item"),
        }
    }
    Ok(items)
}

/// CSV with "Question", "Correct Answer", "Incorrect Answer 1..3" and an
/// optional "Record ID" column. Line numbers count the header as line 1.
fn load_gpqa(text: &str) -> Result<Vec<BenchmarkItem>, EvalError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| format_err(1, "<header>", e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let q = col("Question").ok_or_else(|| format_err(1, "Question", "missing column"))?;
    let correct = col("Correct Answer").ok_or_else(|| format_err(1, "Correct Answer", "missing column"))?;
    let wrong: Vec<usize> = (1..=3).filter_map(|i| col(&format!("Incorrect Answer {i}"))).collect();
    if wrong.is_empty() {
        return Err(format_err(1, "Incorrect Answer 1", "missing column"));
    }
    let id_col = col("Record ID");
    let mut items = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(line, "<csv>", e.to_string()))?;
        let get = |c: usize| rec.get(c).unwrap_or_default().trim().to_owned();
        let item_id = id_col.map(get).filter(|s| !s.is_empty()).unwrap_or_else(|| format!("gpqa-{line}"));
        let distractors: Vec<String> = wrong.iter().map(|&c| get(c)).collect();
        let (choices, gold_index) = keyed_order(&item_id, get(correct), distractors);
        let item = BenchmarkItem { item_id, question: get(q), choices, gold_index, allows_unsure: false, domain_hint: Vec::new() };
        item.validate(line)?;
        items.push(item);
    }
    Ok(items)
}

pub fn parse_benchmark(text: &str, format: BenchmarkFormat) -> Result<Vec<BenchmarkItem>, EvalError> {
    match format {
        BenchmarkFormat::Native => load_jsonl(text, native),
        BenchmarkFormat::Litqa2 => load_jsonl(text, litqa2),
        BenchmarkFormat::Wmdp => load_jsonl(text, wmdp),
        BenchmarkFormat::Hle => load_jsonl(text, hle),
        BenchmarkFormat::Gpqa => load_gpqa(text),
    }
}

pub fn load_benchmark(path: &Path, format: BenchmarkFormat) -> Result<Vec<BenchmarkItem>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_benchmark(&text, format)
}
