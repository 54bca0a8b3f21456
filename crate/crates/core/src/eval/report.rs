//! Scores and report files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{Condition, RunRecord};
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub n: usize,
    pub n_answered: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// `None` when nothing was answered.
    pub precision: Option<f64>,
}

/// Accuracy over all items; precision over answered items.
pub fn score(records: &[RunRecord]) -> Result<Score, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = records.len();
    let n_answered = records.iter().filter(|r| !r.abstained).count();
    let n_correct = records.iter().filter(|r| r.correct && !r.abstained).count();
    Ok(Score {
        n,
        n_answered,
        n_correct,
        accuracy: n_correct as f64 / n as f64,
        precision: (n_answered > 0).then(|| n_correct as f64 / n_answered as f64),
    })
}

/// A fraction as a percentage with one decimal: 0.296 → "29.6".
pub fn percent(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultCell {
    pub benchmark: String,
    pub condition: Condition,
    pub backend: String,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub markdown: PathBuf,
    pub items: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io(format!("{}: {e}", path.display()))
}

/// One CSV row per cell (`results.csv`), a benchmark × backend by condition
/// Markdown matrix (`results.md`), and one JSONL row per record (`items.jsonl`).
pub fn emit_report(cells: &[ResultCell], records: &[RunRecord], out_dir: &Path) -> Result<ReportPaths, EvalError> {
    if cells.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let paths = ReportPaths {
        csv: out_dir.join("results.csv"),
        markdown: out_dir.join("results.md"),
        items: out_dir.join("items.jsonl"),
    };

    let mut w = csv::Writer::from_path(&paths.csv).map_err(|e| io_err(&paths.csv, e))?;
    w.write_record(["benchmark", "condition", "backend", "n", "n_answered", "accuracy", "precision"])
        .map_err(|e| io_err(&paths.csv, e))?;
    for c in cells {
        let s = &c.score;
        w.write_record([
            c.benchmark.clone(),
            c.condition.to_string(),
            c.backend.clone(),
            s.n.to_string(),
            s.n_answered.to_string(),
            percent(s.accuracy),
            s.precision.map(percent).unwrap_or_default(),
        ])
        .map_err(|e| io_err(&paths.csv, e))?;
    }
    w.flush().map_err(|e| io_err(&paths.csv, e))?;

    fs::write(&paths.markdown, markdown(cells)).map_err(|e| io_err(&paths.markdown, e))?;

    let f = File::create(&paths.items).map_err(|e| io_err(&paths.items, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(&paths.items, e))?;
        w.write_all(b"\n").map_err(|e| io_err(&paths.items, e))?;
    }
    w.flush().map_err(|e| io_err(&paths.items, e))?;
    Ok(paths)
}

/// Accuracy matrix; cells read "92.5%".
pub fn markdown(cells: &[ResultCell]) -> String {
    let mut conditions: Vec<Condition> = cells.iter().map(|c| c.condition).collect();
    conditions.sort();
    conditions.dedup();
    let mut rows: BTreeMap<(&str, &str), BTreeMap<Condition, &Score>> = BTreeMap::new();
    for c in cells {
        rows.entry((&c.benchmark, &c.backend)).or_default().insert(c.condition, &c.score);
    }
    let mut out = String::from("| benchmark | backend |");
    for c in &conditions {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(conditions.len()));
    for ((bench, backend), scores) in &rows {
        out.push_str(&format!("\n| {bench} | {backend} |"));
        for c in &conditions {
            match scores.get(c) {
                Some(s) => out.push_str(&format!(" {}% |", percent(s.accuracy))),
                None => out.push_str(" n/a |"),
            }
        }
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(correct: bool, abstained: bool) -> RunRecord {
        RunRecord {
            benchmark: "b".into(),
            item_id: "i".into(),
            condition: Condition::AgentV1,
            backend: "m".into(),
            chosen_index: (!abstained).then_some(0),
            correct,
            abstained,
            latency_ms: 0,
            trace_ref: None,
            response: String::new(),
            error: None,
        }
    }

    #[test]
    fn arithmetic() {
        let mut rs: Vec<RunRecord> = (0..185).map(|_| rec(true, false)).collect();
        rs.extend((0..15).map(|_| rec(false, false)));
        let s = score(&rs).unwrap();
        assert!((s.accuracy - 0.925).abs() < 1e-12);
        assert_eq!(percent(s.accuracy), "92.5");

        let s = score(&[rec(true, false), rec(true, false), rec(false, false), rec(false, true)]).unwrap();
        assert!((s.accuracy - 0.5).abs() < 1e-12);
        assert!((s.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let s = score(&[rec(false, true), rec(false, true)]).unwrap();
        assert_eq!((s.accuracy, s.precision), (0.0, None));
        assert!(matches!(score(&[]), Err(EvalError::EmptyRun)));
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(0.296), "29.6");
        assert_eq!(percent(1.0), "100.0");
        assert_eq!(percent(0.0), "0.0");
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![rec(true, false), rec(false, true), rec(true, false)];
        let cells: Vec<ResultCell> = [Condition::VanillaLlm, Condition::AgentV1]
            .into_iter()
            .map(|condition| ResultCell { benchmark: "wmdp".into(), condition, backend: "m".into(), score: score(&records).unwrap() })
            .collect();
        let p = emit_report(&cells, &records, dir.path()).unwrap();
        let mut rdr = csv::Reader::from_path(&p.csv).unwrap();
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[0][5], "66.7");
        assert_eq!(&rows[0][6], "100.0");
        assert_eq!(fs::read_to_string(&p.items).unwrap().lines().count(), records.len());
        let md = fs::read_to_string(&p.markdown).unwrap();
        assert!(md.contains("| wmdp | m | 66.7% | 66.7% |"));
    }

    proptest! {
        #[test]
        fn score_is_pure_and_bounded(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let rs: Vec<RunRecord> = flags.iter().map(|&(c, a)| rec(c && !a, a)).collect();
            let s = score(&rs).unwrap();
            prop_assert_eq!(s, score(&rs).unwrap());
            prop_assert!((0.0..=1.0).contains(&s.accuracy));
            if let Some(p) = s.precision {
                prop_assert!(p >= s.accuracy && p <= 1.0);
            }
        }
    }
}
