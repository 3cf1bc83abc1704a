// Temperature by top_p sweep over a small sample.

use std::path::PathBuf;
use std::sync::Arc;

use themfit::gateway::{FnMock, Gateway, Message, ModelParams, NormOracleMock};
use themfit::gateway::Backend;
use themfit::harness::{sweep_grid, RunOptions};
use themfit::norms::{load_dataset, preprocess, ColumnSpec};
use themfit::prompt::ExperimentConfig;

pub fn run_example() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/fer_ins_sample.tsv");
    let sample = preprocess(&load_dataset(path, &ColumnSpec::canonical())?, false).take(20);

    // A mock that gets noisier as temperature rises.
    let oracle = NormOracleMock::new([&sample]);
    let gateway = Gateway::mock(Arc::new(FnMock::new(move |msgs: &[Message], p: &ModelParams| {
        let text = oracle.send(msgs, p)?.text;
        let Ok(v) = themfit::codec::parse_score(&text, themfit::prompt::OutputForm::Numeric) else {
            return Ok(text);
        };
        let wobble = p.temperature * (msgs.last().map(|m| m.text.len()).unwrap_or(0) % 7) as f64 / 10.0;
        Ok(format!("{{\"Score\": {}}}", (v + wobble * (1.0 - p.top_p)).clamp(0.0, 1.0)))
    })));

    let cfg = ExperimentConfig::new("1.1")?;
    let table = sweep_grid(&sample, &[0.0, 0.5, 0.9], &[0.5, 0.7, 0.95], &cfg, &gateway, &RunOptions::default());
    print!("{}", table.to_table());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
