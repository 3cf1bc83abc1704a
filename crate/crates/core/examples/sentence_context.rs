// Generate and verify context sentences for one item, then score a
// generated-sentence configuration with partial verification.

use std::path::PathBuf;
use std::sync::Arc;

use themfit::context::build_context;
use themfit::gateway::{Gateway, MockVerdicts, NormOracleMock};
use themfit::harness::{run_experiment, RunOptions};
use themfit::norms::{load_dataset, preprocess, ColumnSpec};
use themfit::prompt::{ExperimentConfig, TemplateSet};

pub fn run_example() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/mini_mcrae.tsv");
    let dataset = preprocess(&load_dataset(path, &ColumnSpec::canonical())?, false);
    let mock = NormOracleMock::new([&dataset])
        .verdicts(MockVerdicts::FirstN(3))
        .sentence_jitter(0.02);
    let gateway = Gateway::mock(Arc::new(mock));
    let cfg = ExperimentConfig::new("4.1")?.with_propbank_prefix(true);

    let item = &dataset.items[0];
    let ctx = build_context(item, &gateway, &cfg.context_params(), TemplateSet::builtin(), true)
        .map_err(|e| e.source)?;
    for c in &ctx.candidates {
        println!("[{}] {}", if c.coherent { "ok" } else { "--" }, c.text);
    }
    println!("usable {} of {}, backoff {}", ctx.usable.len(), ctx.candidates.len(), ctx.backoff);

    let out = run_experiment(&cfg, &dataset, &gateway, &RunOptions::default())?;
    for o in out.outcomes.iter().take(3) {
        println!("{} {:.4} from {:?}", o.item_id, o.value, o.components.as_deref().unwrap_or_default());
    }
    println!(
        "rho {:.4} over {} items, {} incoherent sentences",
        out.correlation.rho, out.correlation.n, out.correlation.incoherent_count
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
