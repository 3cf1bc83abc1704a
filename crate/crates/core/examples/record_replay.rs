// Record a run into a cassette directory, then replay it without any
// backend and check that the report is reproduced byte for byte.
//
//     cargo run --example record_replay -- [cassette-dir]

use std::path::PathBuf;
use std::sync::Arc;

use themfit::gateway::{CassetteStore, Gateway, NormOracleMock, ScoreMapping};
use themfit::harness::{render_run_tsv, run_experiment, RunOptions};
use themfit::norms::{load_dataset, preprocess, ColumnSpec};
use themfit::prompt::ExperimentConfig;

pub fn run_example() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let scratch = tempfile::tempdir()?;
    let cassette_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| scratch.path().join("cassette"));

    let dataset = preprocess(
        &load_dataset(root.join("data/fixtures/mini_mcrae.tsv"), &ColumnSpec::canonical())?,
        false,
    );
    let cfg = ExperimentConfig::new("1.1")?.with_propbank_prefix(true);

    let backend = NormOracleMock::new([&dataset]).mapping(ScoreMapping::Noisy { amplitude: 0.15 });
    let recorder = Gateway::record(Arc::new(backend), CassetteStore::open(&cassette_dir)?);
    let recorded = run_experiment(&cfg, &dataset, &recorder, &RunOptions::default())?;
    let first = render_run_tsv(&cfg.experiment_id, &dataset.name, &recorded.correlation);
    println!(
        "recorded {} calls into {} (backend calls: {})",
        recorder.call_count(),
        cassette_dir.display(),
        recorder.backend_call_count()
    );

    let player = Gateway::replay(CassetteStore::open(&cassette_dir)?);
    let replayed = run_experiment(&cfg, &dataset, &player, &RunOptions::default())?;
    let second = render_run_tsv(&cfg.experiment_id, &dataset.name, &replayed.correlation);
    anyhow::ensure!(first == second, "replayed report differs from the recorded one");
    anyhow::ensure!(player.backend_call_count() == 0);
    print!("{second}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
