// Label each item of a stored run as a Good or Bad fit at several
// thresholds.

use std::path::PathBuf;
use std::sync::Arc;

use themfit::gateway::{Gateway, NormOracleMock, ScoreMapping};
use themfit::harness::{analyze, run_experiment, RunOptions};
use themfit::norms::{load_dataset, preprocess, ColumnSpec};
use themfit::prompt::ExperimentConfig;

pub fn run_example() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/fer_ins_sample.tsv");
    let dataset = preprocess(&load_dataset(path, &ColumnSpec::canonical())?, false);
    let gateway = Gateway::mock(Arc::new(
        NormOracleMock::new([&dataset]).mapping(ScoreMapping::Noisy { amplitude: 0.3 }),
    ));
    let out_dir = tempfile::tempdir()?;
    let cfg = ExperimentConfig::new("3.1")?;
    let opts = RunOptions::default().with_out_dir(out_dir.path()).with_run_id("analysis-demo");
    run_experiment(&cfg, &dataset, &gateway, &opts)?;

    for threshold in [0.10, 0.25, 0.50] {
        let a = analyze(out_dir.path(), "analysis-demo", threshold)?;
        println!("{}", a.summary());
    }
    let a = analyze(out_dir.path(), "analysis-demo", 0.25)?;
    print!("{}", a.to_tsv().lines().take(4).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
