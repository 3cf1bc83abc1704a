// Spearman's rho with tied ranks and both p-value routes.

use themfit::stats::{average_ranks, p_value, p_value_exact, spearman};

pub fn run_example() -> anyhow::Result<()> {
    let human = [6.8, 6.2, 6.6, 6.9, 2.1, 6.4, 2.8, 5.5, 4.3, 6.0];
    let model = [0.9, 0.7, 0.8, 0.95, 0.1, 0.85, 0.3, 0.6, 0.7, 0.75];
    println!("human ranks {:?}", average_ranks(&human));
    println!("model ranks {:?}", average_ranks(&model));

    let r = spearman(&human, &model)?;
    println!("rho = {:.6}, t-approximation p = {:.6}", r.rho, r.p_value.unwrap_or(f64::NAN));

    let small_h = &human[..7];
    let small_m = &model[..7];
    let small = spearman(small_h, small_m)?;
    println!(
        "first 7 items: rho = {:.6}, p (t) = {:.4}, p (exact) = {:.4}",
        small.rho,
        p_value(small.rho, 7)?,
        p_value_exact(small_h, small_m)?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
