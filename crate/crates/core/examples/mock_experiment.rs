// Run all eight configurations against an in-process mock whose scores
// follow the human ratings, and print the resulting grid.

use std::path::PathBuf;
use std::sync::Arc;

use themfit::gateway::{Gateway, NormOracleMock, ScoreMapping};
use themfit::harness::{run_grid, PropbankMode, RunOptions};
use themfit::norms::{load_dataset, preprocess, ColumnSpec};
use themfit::prompt::ExperimentConfig;

pub fn run_example() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures");
    let columns = ColumnSpec::canonical();
    let datasets = vec![
        preprocess(&load_dataset(root.join("mini_mcrae.tsv"), &columns)?, false),
        preprocess(&load_dataset(root.join("fer_loc_sample.tsv"), &columns)?, true),
        preprocess(&load_dataset(root.join("fer_ins_sample.tsv"), &columns)?, false),
    ];
    let mock = NormOracleMock::new(&datasets).mapping(ScoreMapping::Noisy { amplitude: 0.15 });
    let gateway = Gateway::mock(Arc::new(mock));

    let report = run_grid(
        &ExperimentConfig::all(),
        &datasets,
        &gateway,
        PropbankMode::Auto,
        &RunOptions::default(),
    );
    print!("{}", report.to_table());
    println!("{} gateway calls", gateway.call_count());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
