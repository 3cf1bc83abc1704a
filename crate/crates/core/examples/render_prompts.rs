// Print the prompt chain every experiment configuration sends for one item.

use themfit::norms::{NormItem, RatingScale, Role};
use themfit::prompt::{ExperimentConfig, InputForm, TemplateSet};

pub fn run_example() -> anyhow::Result<()> {
    let item = NormItem {
        item_id: "demo:00000".into(),
        dataset: "demo".into(),
        predicate: "eat".into(),
        argument: "pizza".into(),
        role: Role::Arg1,
        human_rating: 6.8,
        scale: RatingScale::LIKERT_7,
    };
    let templates = TemplateSet::builtin();
    for cfg in ExperimentConfig::all() {
        let cfg = cfg.with_propbank_prefix(true);
        let sentence = (cfg.input == InputForm::GeneratedSentence).then_some("I ate a pizza with my friends.");
        let chain = templates.render_chain(&item, &cfg, sentence)?;
        println!("== {} (max_tokens {})", cfg.experiment_id, cfg.chain_params().max_tokens);
        print!("{}", chain.to_fixture_text());
    }
    println!("== context generation");
    println!("{}", templates.generation_prompt(&item, true));
    println!("{}", templates.verification_prompt("I ate a pizza with my friends.", &item, true));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
