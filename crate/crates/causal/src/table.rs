//! Per-item evaluation records turned into a numeric table for fitting.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::graph::{effects_heatmap, Heatmap};
use crate::notears::{block_in_edges, fit_notears, FitResult, NotearsParams};
use crate::textstats::text_stats;
use crate::CausalError;

/// The fields of an evaluation item record this module reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRow {
    pub benchmark: String,
    pub condition: String,
    pub backend: String,
    pub correct: bool,
    #[serde(default)]
    pub response: String,
}

pub fn load_runs(path: &Path) -> Result<Vec<RunRow>, CausalError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CausalError::Input(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    Model,
    Condition,
    Benchmark,
}

impl Treatment {
    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Model => "model",
            Treatment::Condition => "condition",
            Treatment::Benchmark => "benchmark",
        }
    }

    fn level(self, row: &RunRow) -> &str {
        match self {
            Treatment::Model => &row.backend,
            Treatment::Condition => &row.condition,
            Treatment::Benchmark => &row.benchmark,
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Treatment {
    type Err = CausalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "model" | "backend" => Ok(Treatment::Model),
            "condition" => Ok(Treatment::Condition),
            "benchmark" => Ok(Treatment::Benchmark),
            other => Err(CausalError::Input(format!("unknown treatment {other:?}"))),
        }
    }
}

pub const OUTCOMES: [&str; 8] =
    ["accuracy", "flesch_kincaid", "smog", "token_count", "char_count", "word_count", "type_token_ratio", "noun_ratio"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Treatment,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub names: Vec<String>,
    pub roles: Vec<Role>,
    /// rows × columns
    pub data: DMatrix<f64>,
}

impl MetricTable {
    /// One row per record. Each categorical treatment is one-hot encoded
    /// as `name=level` with its first level (in sorted order) dropped.
    pub fn from_runs(rows: &[RunRow], treatments: &[Treatment]) -> Result<Self, CausalError> {
        if rows.is_empty() {
            return Err(CausalError::Input("no run records".into()));
        }
        let mut names = Vec::new();
        let mut roles = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for &t in treatments {
            let levels: BTreeSet<&str> = rows.iter().map(|r| t.level(r)).collect();
            if levels.len() < 2 {
                log::warn!("treatment {t} has a single level; it adds no columns");
            }
            for level in levels.iter().skip(1) {
                names.push(format!("{t}={level}"));
                roles.push(Role::Treatment);
                cols.push(rows.iter().map(|r| f64::from(u8::from(t.level(r) == *level))).collect());
            }
        }
        let stats: Vec<_> = rows.iter().map(|r| text_stats(&r.response)).collect();
        for name in OUTCOMES {
            names.push(name.to_owned());
            roles.push(Role::Outcome);
            cols.push(
                rows.iter()
                    .zip(&stats)
                    .map(|(r, s)| match name {
                        "accuracy" => f64::from(u8::from(r.correct)),
                        "flesch_kincaid" => s.flesch_kincaid_grade,
                        "smog" => s.smog,
                        "token_count" => s.tokens as f64,
                        "char_count" => s.chars as f64,
                        "word_count" => s.words as f64,
                        "type_token_ratio" => s.type_token_ratio,
                        _ => s.noun_ratio,
                    })
                    .collect(),
            );
        }
        let data = DMatrix::from_fn(rows.len(), cols.len(), |r, c| cols[c][r]);
        Ok(MetricTable { names, roles, data })
    }

    pub fn names_with(&self, role: Role) -> Vec<String> {
        self.names.iter().zip(&self.roles).filter(|(_, r)| **r == role).map(|(n, _)| n.clone()).collect()
    }

    /// Zero mean, unit (population) variance per column. Constant columns
    /// cannot be scaled and are dropped; their names are returned.
    pub fn standardized(&self) -> (MetricTable, Vec<String>) {
        let n = self.data.nrows() as f64;
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for (c, name) in self.names.iter().enumerate() {
            let col = self.data.column(c);
            let mean = col.sum() / n;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            if var.sqrt() <= 1e-12 {
                dropped.push(name.clone());
            } else {
                keep.push((c, mean, var.sqrt()));
            }
        }
        let data = DMatrix::from_fn(self.data.nrows(), keep.len(), |r, k| {
            let (c, mean, sd) = keep[k];
            (self.data[(r, c)] - mean) / sd
        });
        let table = MetricTable {
            names: keep.iter().map(|&(c, ..)| self.names[c].clone()).collect(),
            roles: keep.iter().map(|&(c, ..)| self.roles[c]).collect(),
            data,
        };
        (table, dropped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub table: MetricTable,
    pub dropped: Vec<String>,
    pub fit: FitResult,
    pub heatmap: Heatmap,
}

/// Table → standardize → fit with treatment in-edges blocked → effects of
/// each treatment column on each outcome column, in standardized units.
pub fn analyze(rows: &[RunRow], treatments: &[Treatment], params: &NotearsParams) -> Result<Analysis, CausalError> {
    let raw = MetricTable::from_runs(rows, treatments)?;
    let (table, dropped) = raw.standardized();
    if !dropped.is_empty() {
        log::warn!("dropped constant columns: {}", dropped.join(", "));
    }
    let t = table.names_with(Role::Treatment);
    let o = table.names_with(Role::Outcome);
    if t.is_empty() || o.is_empty() {
        return Err(CausalError::Input("need at least one varying treatment and one varying outcome".into()));
    }
    let blocked = block_in_edges(&table.names, &t)?;
    let fit = fit_notears(&table.data, &table.names, params, Some(&blocked))?;
    let heatmap = effects_heatmap(&fit.graph, &t, &o)?;
    Ok(Analysis { table, dropped, fit, heatmap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(backend: &str, condition: &str, correct: bool, response: &str) -> RunRow {
        RunRow { benchmark: "b".into(), condition: condition.into(), backend: backend.into(), correct, response: response.into() }
    }

    #[test]
    fn one_hot_drops_first_level() {
        let rows = vec![
            row("m1", "agent_v1", true, "B"),
            row("m2", "vanilla_llm", false, "The answer is C because of the enzyme."),
            row("m1", "agent_v2", true, "A"),
        ];
        let t = MetricTable::from_runs(&rows, &[Treatment::Model, Treatment::Condition, Treatment::Benchmark]).unwrap();
        assert_eq!(t.names_with(Role::Treatment), ["model=m2", "condition=agent_v2", "condition=vanilla_llm"]);
        assert_eq!(t.names_with(Role::Outcome).len(), OUTCOMES.len());
        assert_eq!(t.data.nrows(), 3);
        assert_eq!(t.data.column(0).as_slice(), [0.0, 1.0, 0.0]);
        assert_eq!(t.data[(1, 3)], 0.0);
    }

    #[test]
    fn standardization() {
        let rows = vec![row("m1", "c", true, "a b"), row("m2", "c", false, "a b c d"), row("m2", "c", true, "x")];
        let (t, dropped) = MetricTable::from_runs(&rows, &[Treatment::Model]).unwrap().standardized();
        assert!(dropped.contains(&"smog".to_owned()));
        for c in 0..t.data.ncols() {
            let col = t.data.column(c);
            let mean = col.sum() / 3.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12, "{}", t.names[c]);
        }
    }

    #[test]
    fn parses_item_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("items.jsonl");
        let line = r#"{"benchmark":"b","item_id":"i","condition":"agent_v1","backend":"m","chosen_index":1,"correct":true,"abstained":false,"latency_ms":3,"response":"B"}"#;
        fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        let rows = load_runs(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].condition, "agent_v1");
        fs::write(&path, "{}\n").unwrap();
        assert!(matches!(load_runs(&path), Err(CausalError::Input(_))));
    }

    #[test]
    fn analysis_blocks_treatments() {
        let mut rows = Vec::new();
        for i in 0..40 {
            let agent = i % 2 == 0;
            let text = if agent { "The enzyme activity depends on temperature and substrate concentration." } else { "B" };
            rows.push(row("m", if agent { "agent_v1" } else { "vanilla_llm" }, agent || i % 3 == 0, text));
        }
        let a = analyze(&rows, &[Treatment::Condition], &NotearsParams::default()).unwrap();
        let t = a.table.names.iter().position(|n| n == "condition=vanilla_llm").unwrap();
        assert!((0..a.table.names.len()).all(|j| a.fit.graph.weights[(j, t)] == 0.0));
        assert_eq!(a.heatmap.treatments, ["condition=vanilla_llm"]);
        assert!(a.fit.graph.is_acyclic());
    }
}
