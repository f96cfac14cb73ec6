//! Multi-seed aggregation of evaluation scores, as JSONL rows and an aligned table.

use nlgrl_core::eval::EvalScores;
use serde::{Deserialize, Serialize};

/// One metric across seeds. `std` is the sample standard deviation, 0 for a single seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Summation can leave the mean an ulp outside the range when all values agree.
        let mean = mean.clamp(min, max);
        Summary { per_seed: values, mean, std, min, max }
    }
}

/// Scores of one model across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub condition: String,
    pub model: String,
    pub seeds: Vec<u64>,
    pub n_test: Vec<usize>,
    pub accuracy: Summary,
    pub f1: Summary,
    pub bleu: Summary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wer: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coverage: Option<Summary>,
}

impl ModelRow {
    /// `scores` pairs each seed with its evaluation; all must agree on which optional metrics exist.
    pub fn new(condition: &str, model: &str, scores: &[(u64, EvalScores)]) -> Result<Self, ReportError> {
        if scores.is_empty() {
            return Err(ReportError::NoSeeds);
        }
        let opt = |get: fn(&EvalScores) -> Option<f64>, name: &'static str| -> Result<Option<Summary>, ReportError> {
            let vals: Vec<Option<f64>> = scores.iter().map(|(_, s)| get(s)).collect();
            match (vals.iter().all(Option::is_some), vals.iter().all(Option::is_none)) {
                (true, _) => Ok(Some(Summary::new(vals.into_iter().flatten().collect()))),
                (_, true) => Ok(None),
                _ => Err(ReportError::Inconsistent(name)),
            }
        };
        Ok(ModelRow {
            condition: condition.to_string(),
            model: model.to_string(),
            seeds: scores.iter().map(|(s, _)| *s).collect(),
            n_test: scores.iter().map(|(_, s)| s.n).collect(),
            accuracy: Summary::new(scores.iter().map(|(_, s)| s.accuracy).collect()),
            f1: Summary::new(scores.iter().map(|(_, s)| s.f1).collect()),
            bleu: Summary::new(scores.iter().map(|(_, s)| s.bleu).collect()),
            wer: opt(|s| s.wer, "wer")?,
            coverage: opt(|s| s.coverage, "coverage")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("a report needs at least one seed")]
    NoSeeds,
    #[error("metric `{0}` is present for some seeds only")]
    Inconsistent(&'static str),
}

/// Rows for every evaluated model of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ModelRow>,
}

impl EvalReport {
    pub fn row(&self, model: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_jsonl(&self) -> String {
        crate::io::jsonl(&self.rows)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let rows = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(EvalReport { rows })
    }

    /// Percent scores, mean ± std over seeds, then one line per seed.
    pub fn to_text(&self) -> String {
        let pct = |s: &Summary| format!("{:6.2} ± {:5.2}", 100.0 * s.mean, 100.0 * s.std);
        let mut header = vec!["condition", "model", "seeds", "accuracy", "f1", "bleu"];
        let wer = self.rows.iter().any(|r| r.wer.is_some());
        let cov = self.rows.iter().any(|r| r.coverage.is_some());
        if wer {
            header.push("wer");
        }
        if cov {
            header.push("coverage");
        }
        let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let mut line = vec![r.condition.clone(), r.model.clone(), r.seeds.len().to_string(), pct(&r.accuracy), pct(&r.f1), pct(&r.bleu)];
            if wer {
                line.push(r.wer.as_ref().map(pct).unwrap_or_else(|| "-".into()));
            }
            if cov {
                line.push(r.coverage.as_ref().map(pct).unwrap_or_else(|| "-".into()));
            }
            table.push(line);
        }
        let mut out = align(&table);
        out.push('\n');
        let mut per_seed: Vec<Vec<String>> = vec![vec!["model".into(), "seed".into(), "n".into(), "accuracy".into(), "f1".into(), "bleu".into()]];
        for r in &self.rows {
            for (k, seed) in r.seeds.iter().enumerate() {
                per_seed.push(vec![
                    r.model.clone(),
                    seed.to_string(),
                    r.n_test[k].to_string(),
                    format!("{:.2}", 100.0 * r.accuracy.per_seed[k]),
                    format!("{:.2}", 100.0 * r.f1.per_seed[k]),
                    format!("{:.2}", 100.0 * r.bleu.per_seed[k]),
                ]);
            }
        }
        out.push_str(&align(&per_seed));
        out
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
