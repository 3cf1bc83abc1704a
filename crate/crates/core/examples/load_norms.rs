// Load a norms file, drop duplicate tuples and strip leading articles.
//
//     cargo run --example load_norms -- data/fixtures/fer_loc_sample.tsv

use std::path::PathBuf;

use themfit::norms::{load_dataset, preprocess, ColumnSpec};

pub fn run_example() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| root.join("data/fixtures/with_duplicates.tsv"));

    let raw = load_dataset(&path, &ColumnSpec::canonical())?;
    let clean = preprocess(&raw, true);
    println!("{}: {} rows loaded, {} items kept", clean.name, raw.len(), clean.len());
    for t in &clean.provenance.transforms {
        println!("  {t}");
    }
    for w in &clean.provenance.warnings {
        println!("  warning: {w}");
    }
    for it in clean.items.iter().take(5) {
        println!(
            "  {} {:<8} {:<12} {:<10} {:.1} -> {:.3}",
            it.item_id,
            it.predicate,
            it.argument,
            it.role,
            it.human_rating,
            it.normalized_rating()
        );
    }

    let ferloc = preprocess(&load_dataset(root.join("data/fixtures/fer_loc_sample.tsv"), &ColumnSpec::canonical())?, true);
    let args: Vec<&str> = ferloc.items.iter().map(|it| it.argument.as_str()).collect();
    println!("fer-loc arguments after stripping: {args:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
