use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats::{classify_fit, FitJudgment, FitLabel};

use super::{read_json, HarnessError, RunDir, ScoredItem};

/// One judged item with the reasoning that produced it and a free slot for
/// manual annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub judgment: FitJudgment,
    pub reasoning_texts: Vec<String>,
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub run_id: String,
    pub threshold: f64,
    pub rows: Vec<AnalysisRow>,
    pub good: usize,
    pub bad: usize,
}

impl Analysis {
    pub fn summary(&self) -> String {
        format!("Good:Bad = {}:{} (threshold {})", self.good, self.bad, self.threshold)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("item_id\thuman_norm\tmodel_value\tdiff\tlabel\treasoning\tannotation\n");
        for r in &self.rows {
            let j = &r.judgment;
            let reasoning = r.reasoning_texts.join(" | ").replace(['\t', '\n'], " ");
            writeln!(
                out,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:?}\t{}\t{}",
                j.item_id,
                j.human_norm,
                j.model_value,
                j.diff,
                j.label,
                reasoning,
                r.annotation.as_deref().unwrap_or("")
            )
            .unwrap();
        }
        out
    }
}

pub fn analyze_outcomes(run_id: &str, items: &[ScoredItem], threshold: f64) -> Result<Analysis, HarnessError> {
    let mut rows = Vec::with_capacity(items.len());
    for s in items {
        let judgment = classify_fit(&s.outcome.item_id, s.human_rating, s.scale, s.outcome.value, threshold)?;
        rows.push(AnalysisRow {
            judgment,
            reasoning_texts: s.outcome.reasoning_texts.clone().unwrap_or_default(),
            annotation: s.outcome.annotation.clone(),
        });
    }
    let good = rows.iter().filter(|r| r.judgment.label == FitLabel::Good).count();
    Ok(Analysis {
        run_id: run_id.to_string(),
        threshold,
        bad: rows.len() - good,
        good,
        rows,
    })
}

/// Classifies every scored item of a finished run as Good or Bad fit.
pub fn analyze(out_dir: &Path, run_id: &str, threshold: f64) -> Result<Analysis, HarnessError> {
    let rd = RunDir::new(out_dir, run_id);
    if !rd.manifest().is_file() {
        return Err(HarnessError::UnknownRun(run_id.to_string()));
    }
    if !rd.outcomes().is_file() {
        return Err(HarnessError::Unfinished(run_id.to_string()));
    }
    let items: Vec<ScoredItem> = read_json(&rd.outcomes())?;
    analyze_outcomes(run_id, &items, threshold)
}
