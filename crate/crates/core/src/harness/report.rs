use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats::CorrelationResult;

use super::{read_json, HarnessError, RunDir, RunManifest};

const TSV_HEADER: &str = "experiment\tdataset\trho\tp_value\tn\texcluded\tbackoff\tincoherent\terror\n";

fn fmt_p(p: Option<f64>) -> String {
    p.map(|p| format!("{p:.6e}")).unwrap_or_else(|| "NA".into())
}

fn tsv_row(out: &mut String, experiment: &str, dataset: &str, result: &Result<CorrelationResult, String>) {
    match result {
        Ok(c) => writeln!(
            out,
            "{experiment}\t{dataset}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t",
            c.rho,
            fmt_p(c.p_value),
            c.n,
            c.excluded,
            c.backoff_count,
            c.incoherent_count
        ),
        Err(e) => writeln!(
            out,
            "{experiment}\t{dataset}\tNA\tNA\tNA\tNA\tNA\tNA\t{}",
            e.replace(['\t', '\n'], " ")
        ),
    }
    .expect("writing to a String cannot fail");
}

/// Single-row TSV for one finished run. Contains no timestamps, so replayed
/// runs reproduce it byte for byte.
pub fn render_run_tsv(experiment: &str, dataset: &str, result: &CorrelationResult) -> String {
    let mut out = String::from(TSV_HEADER);
    tsv_row(&mut out, experiment, dataset, &Ok(result.clone()));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub experiment: String,
    pub dataset: String,
    pub result: Result<CorrelationResult, String>,
}

/// Correlations for experiments (rows) by datasets (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub experiments: Vec<String>,
    pub datasets: Vec<String>,
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn cell(&self, experiment: &str, dataset: &str) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.experiment == experiment && c.dataset == dataset)
    }

    pub fn rho(&self, experiment: &str, dataset: &str) -> Option<f64> {
        self.cell(experiment, dataset)?.result.as_ref().ok().map(|c| c.rho)
    }

    /// Long-format TSV, one line per cell in row-major order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        for e in &self.experiments {
            for d in &self.datasets {
                if let Some(c) = self.cell(e, d) {
                    tsv_row(&mut out, e, d, &c.result);
                }
            }
        }
        out
    }

    /// Aligned text table of rho values; failed cells show "ERR".
    pub fn to_table(&self) -> String {
        let width = self.datasets.iter().map(String::len).max().unwrap_or(0).max(8);
        let mut out = format!("{:<10}", "exp");
        for d in &self.datasets {
            write!(out, " {d:>width$}").unwrap();
        }
        out.push('\n');
        for e in &self.experiments {
            write!(out, "{e:<10}").unwrap();
            for d in &self.datasets {
                let v = match self.cell(e, d).map(|c| &c.result) {
                    Some(Ok(c)) => format!("{:.2}", c.rho),
                    Some(Err(_)) => "ERR".into(),
                    None => "-".into(),
                };
                write!(out, " {v:>width$}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Rebuilds a grid from the finished runs stored under `out_dir`.
    pub fn collect(out_dir: &Path) -> Result<GridReport, HarnessError> {
        let entries = std::fs::read_dir(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
        let mut manifests: Vec<RunManifest> = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| HarnessError::io(out_dir, e))?;
            let rd = RunDir { dir: entry.path() };
            if rd.manifest().is_file() {
                manifests.push(read_json(&rd.manifest())?);
            }
        }
        manifests.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        let mut report = GridReport {
            experiments: Vec::new(),
            datasets: Vec::new(),
            cells: Vec::new(),
        };
        for m in manifests {
            let e = m.experiment.experiment_id.clone();
            if !report.experiments.contains(&e) {
                report.experiments.push(e.clone());
            }
            if !report.datasets.contains(&m.dataset_name) {
                report.datasets.push(m.dataset_name.clone());
            }
            let result = match (m.result, m.error) {
                (Some(r), _) => Ok(r),
                (None, Some(err)) => Err(err),
                (None, None) => Err(format!("run '{}' has not finished", m.run_id)),
            };
            report.cells.retain(|c| !(c.experiment == e && c.dataset == m.dataset_name));
            report.cells.push(GridCell {
                experiment: e,
                dataset: m.dataset_name,
                result,
            });
        }
        report.experiments.sort();
        Ok(report)
    }
}

/// rho for each (temperature, top_p) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub temps: Vec<f64>,
    pub top_ps: Vec<f64>,
    /// `cells[i][j]` is the run at `temps[i]`, `top_ps[j]`.
    pub cells: Vec<Vec<Result<f64, String>>>,
}

impl SweepTable {
    pub fn get(&self, temp: f64, top_p: f64) -> Option<&Result<f64, String>> {
        let i = self.temps.iter().position(|&t| t == temp)?;
        let j = self.top_ps.iter().position(|&p| p == top_p)?;
        self.cells.get(i)?.get(j)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("temp\\top_p");
        for p in &self.top_ps {
            write!(out, "\t{p}").unwrap();
        }
        out.push('\n');
        for (t, row) in self.temps.iter().zip(&self.cells) {
            write!(out, "{t}").unwrap();
            for c in row {
                match c {
                    Ok(r) => write!(out, "\t{r:.2}").unwrap(),
                    Err(_) => out.push_str("\tERR"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(rho: f64) -> CorrelationResult {
        CorrelationResult {
            rho,
            p_value: Some(0.0123),
            n: 10,
            excluded: 0,
            backoff_count: 1,
            incoherent_count: 2,
        }
    }

    #[test]
    fn run_tsv_format() {
        assert_eq!(
            render_run_tsv("1.1", "mcrae", &corr(0.5)),
            format!("{TSV_HEADER}1.1\tmcrae\t0.500000\t1.230000e-2\t10\t0\t1\t2\t\n")
        );
    }

    #[test]
    fn grid_keeps_failed_cells() {
        let g = GridReport {
            experiments: vec!["1.1".into()],
            datasets: vec!["a".into(), "b".into()],
            cells: vec![
                GridCell { experiment: "1.1".into(), dataset: "a".into(), result: Ok(corr(0.25)) },
                GridCell { experiment: "1.1".into(), dataset: "b".into(), result: Err("cache miss\tx".into()) },
            ],
        };
        let tsv = g.to_tsv();
        assert_eq!(tsv.lines().count(), 3);
        assert!(tsv.ends_with("1.1\tb\tNA\tNA\tNA\tNA\tNA\tNA\tcache miss x\n"));
        assert!(g.to_table().contains("ERR"));
        assert_eq!(g.rho("1.1", "a"), Some(0.25));
    }
}
