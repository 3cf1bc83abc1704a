//! Prompt chains for the eight experiment configurations.
//!
//! Templates live as plain-text files under `templates/` with the named
//! placeholders `{predicate}`, `{argument}`, `{role}` and `{sentence}`. All
//! other braces are literal text (the output instructions contain JSON).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ModelParams;
use crate::norms::{NormItem, Role};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown experiment id '{0}' (expected one of 1.1 .. 4.2)")]
    UnknownExperiment(String),
    #[error("experiment {id} uses generated sentences but no sentence was given")]
    MissingSentence { id: String },
    #[error("experiment {id} uses lemma tuples but a sentence was given")]
    UnexpectedSentence { id: String },
    #[error("template '{0}' is missing")]
    MissingTemplate(String),
    #[error("template '{id}' must contain placeholder {{{placeholder}}}")]
    MissingPlaceholder { id: String, placeholder: String },
    #[error("template '{id}' uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { id: String, placeholder: String },
    #[error("template '{id}' is empty")]
    EmptyTemplate { id: String },
    #[error("cannot read template directory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReasoningForm {
    Simple,
    StepByStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputForm {
    LemmaTuple,
    GeneratedSentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputForm {
    Numeric,
    Categorical,
}

/// Max-token budgets per input/reasoning regime.
pub const LEMMA_MAX_TOKENS: u32 = 100;
pub const SENTENCE_MAX_TOKENS: u32 = 300;
pub const STEPWISE_MAX_TOKENS: u32 = 600;

/// One cell of the 2x2x2 experiment grid.
///
/// The id's first digit selects reasoning and input form
/// (1 simple/lemma, 2 simple/sentence, 3 step/lemma, 4 step/sentence), the
/// second digit the output form (1 numeric, 2 categorical).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub reasoning: ReasoningForm,
    pub input: InputForm,
    pub output: OutputForm,
    pub propbank_prefix: bool,
    pub model_params: ModelParams,
    /// Replaces every max_tokens budget when set.
    #[serde(default)]
    pub max_tokens_override: Option<u32>,
}

impl ExperimentConfig {
    pub const ALL_IDS: [&'static str; 8] = ["1.1", "1.2", "2.1", "2.2", "3.1", "3.2", "4.1", "4.2"];

    pub fn new(id: &str) -> Result<Self, PromptError> {
        let unknown = || PromptError::UnknownExperiment(id.to_string());
        let (major, minor) = id.split_once('.').ok_or_else(unknown)?;
        let (reasoning, input) = match major {
            "1" => (ReasoningForm::Simple, InputForm::LemmaTuple),
            "2" => (ReasoningForm::Simple, InputForm::GeneratedSentence),
            "3" => (ReasoningForm::StepByStep, InputForm::LemmaTuple),
            "4" => (ReasoningForm::StepByStep, InputForm::GeneratedSentence),
            _ => return Err(unknown()),
        };
        let output = match minor {
            "1" => OutputForm::Numeric,
            "2" => OutputForm::Categorical,
            _ => return Err(unknown()),
        };
        let mut cfg = ExperimentConfig {
            experiment_id: id.to_string(),
            reasoning,
            input,
            output,
            propbank_prefix: false,
            model_params: ModelParams::default(),
            max_tokens_override: None,
        };
        cfg.model_params.max_tokens = cfg.chain_max_tokens();
        Ok(cfg)
    }

    /// All eight configurations in grid order.
    pub fn all() -> Vec<ExperimentConfig> {
        Self::ALL_IDS
            .iter()
            .map(|id| ExperimentConfig::new(id).expect("grid ids are valid"))
            .collect()
    }

    pub fn with_propbank_prefix(mut self, on: bool) -> Self {
        self.propbank_prefix = on;
        self
    }

    pub fn with_model(mut self, name: impl Into<String>) -> Self {
        self.model_params.model_name = name.into();
        self
    }

    pub fn with_sampling(mut self, temperature: f64, top_p: f64) -> Self {
        self.model_params.temperature = temperature;
        self.model_params.top_p = top_p;
        self
    }

    pub fn with_max_tokens_override(mut self, max_tokens: Option<u32>) -> Self {
        self.max_tokens_override = max_tokens;
        if let Some(m) = max_tokens {
            self.model_params.max_tokens = m;
        } else {
            self.model_params.max_tokens = self.chain_max_tokens();
        }
        self
    }

    /// Checks that the id's digits agree with the axis fields.
    pub fn is_consistent(&self) -> bool {
        ExperimentConfig::new(&self.experiment_id)
            .map(|c| c.reasoning == self.reasoning && c.input == self.input && c.output == self.output)
            .unwrap_or(false)
    }

    fn chain_max_tokens(&self) -> u32 {
        match (self.reasoning, self.input) {
            (ReasoningForm::StepByStep, _) => STEPWISE_MAX_TOKENS,
            (ReasoningForm::Simple, InputForm::LemmaTuple) => LEMMA_MAX_TOKENS,
            (ReasoningForm::Simple, InputForm::GeneratedSentence) => SENTENCE_MAX_TOKENS,
        }
    }

    fn with_budget(&self, budget: u32) -> ModelParams {
        ModelParams {
            max_tokens: self.max_tokens_override.unwrap_or(budget),
            ..self.model_params.clone()
        }
    }

    /// Parameters for the configured chain.
    pub fn chain_params(&self) -> ModelParams {
        self.with_budget(self.chain_max_tokens())
    }

    /// Parameters for the lemma-tuple chain used when sentence context backs off.
    pub fn backoff_params(&self) -> ModelParams {
        self.with_budget(match self.reasoning {
            ReasoningForm::Simple => LEMMA_MAX_TOKENS,
            ReasoningForm::StepByStep => STEPWISE_MAX_TOKENS,
        })
    }

    /// Parameters for sentence generation and coherence verification.
    pub fn context_params(&self) -> ModelParams {
        self.with_budget(SENTENCE_MAX_TOKENS)
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.experiment_id)
    }
}

impl FromStr for ExperimentConfig {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentConfig::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expects {
    FreeText,
    ScoreJson,
    CoherenceJson,
    SentenceList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub step_index: usize,
    pub template_id: String,
    pub rendered_text: String,
    pub expects: Expects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptChain {
    pub steps: Vec<ChainStep>,
    pub context_sentence: Option<String>,
}

impl PromptChain {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn scoring_step(&self) -> Option<&ChainStep> {
        self.steps.iter().rev().find(|s| s.expects == Expects::ScoreJson)
    }

    /// Plain-text dump used for golden fixtures: one `### step N (template)`
    /// header per step followed by its text.
    pub fn to_fixture_text(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&format!("### step {} ({})\n", step.step_index, step.template_id));
            out.push_str(&step.rendered_text);
            out.push('\n');
        }
        out
    }
}

/// Text used for `role` in prompts. The "PropBank" prefix only applies to
/// the numbered roles.
pub fn role_display(role: Role, propbank_prefix: bool) -> String {
    if propbank_prefix && role.is_numbered() {
        format!("PropBank {role}")
    } else {
        role.to_string()
    }
}

/// Identifiers of the shipped template files.
pub mod ids {
    pub const SCORE_LEMMA: &str = "score_lemma";
    pub const SCORE_SENTENCE: &str = "score_sentence";
    pub const OUTPUT_NUMERIC: &str = "output_numeric";
    pub const OUTPUT_CATEGORICAL: &str = "output_categorical";
    pub const ROLE_PROPERTIES_LEMMA: &str = "role_properties_lemma";
    pub const ROLE_PROPERTIES_SENTENCE: &str = "role_properties_sentence";
    pub const ARGUMENT_PROPERTIES_LEMMA: &str = "argument_properties_lemma";
    pub const ARGUMENT_PROPERTIES_SENTENCE: &str = "argument_properties_sentence";
    pub const FIT_REASONING_LEMMA: &str = "fit_reasoning_lemma";
    pub const FIT_REASONING_SENTENCE: &str = "fit_reasoning_sentence";
    pub const GENERATE_SENTENCES: &str = "generate_sentences";
    pub const VERIFY_COHERENCE: &str = "verify_coherence";
    pub const SCORE_REMINDER: &str = "score_reminder";
}

const PLACEHOLDERS: [&str; 4] = ["predicate", "argument", "role", "sentence"];

// (id, required placeholders, builtin text)
const BUILTIN: [(&str, &[&str], &str); 13] = [
    (ids::SCORE_LEMMA, &["predicate", "argument", "role"], include_str!("../templates/score_lemma.txt")),
    (ids::SCORE_SENTENCE, &["predicate", "argument", "role", "sentence"], include_str!("../templates/score_sentence.txt")),
    (ids::OUTPUT_NUMERIC, &[], include_str!("../templates/output_numeric.txt")),
    (ids::OUTPUT_CATEGORICAL, &[], include_str!("../templates/output_categorical.txt")),
    (ids::ROLE_PROPERTIES_LEMMA, &["predicate", "role"], include_str!("../templates/role_properties_lemma.txt")),
    (ids::ROLE_PROPERTIES_SENTENCE, &["predicate", "role", "sentence"], include_str!("../templates/role_properties_sentence.txt")),
    (ids::ARGUMENT_PROPERTIES_LEMMA, &["predicate", "argument", "role"], include_str!("../templates/argument_properties_lemma.txt")),
    (ids::ARGUMENT_PROPERTIES_SENTENCE, &["predicate", "argument", "role", "sentence"], include_str!("../templates/argument_properties_sentence.txt")),
    (ids::FIT_REASONING_LEMMA, &["predicate", "argument", "role"], include_str!("../templates/fit_reasoning_lemma.txt")),
    (ids::FIT_REASONING_SENTENCE, &["predicate", "argument", "role", "sentence"], include_str!("../templates/fit_reasoning_sentence.txt")),
    (ids::GENERATE_SENTENCES, &["predicate", "argument", "role"], include_str!("../templates/generate_sentences.txt")),
    (ids::VERIFY_COHERENCE, &["predicate", "argument", "role", "sentence"], include_str!("../templates/verify_coherence.txt")),
    (ids::SCORE_REMINDER, &[], include_str!("../templates/score_reminder.txt")),
];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"))
}

/// Values substituted into a template.
#[derive(Debug, Clone, Default)]
pub struct Slots<'a> {
    pub predicate: &'a str,
    pub argument: &'a str,
    pub role: &'a str,
    pub sentence: Option<&'a str>,
}

impl<'a> Slots<'a> {
    fn get(&self, name: &str) -> Option<&'a str> {
        match name {
            "predicate" => Some(self.predicate),
            "argument" => Some(self.argument),
            "role" => Some(self.role),
            "sentence" => self.sentence,
            _ => None,
        }
    }
}

/// A verified set of prompt templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    /// The templates compiled into the crate, verified once.
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            let raw = BUILTIN
                .iter()
                .map(|(id, _, text)| (id.to_string(), text.to_string()))
                .collect();
            TemplateSet::verified(raw).expect("builtin templates are valid")
        })
    }

    /// Loads `<id>.txt` for every known template id from `dir`.
    pub fn from_dir(dir: &Path) -> Result<TemplateSet, PromptError> {
        let mut raw = BTreeMap::new();
        for (id, _, _) in BUILTIN {
            let path = dir.join(format!("{id}.txt"));
            if !path.exists() {
                return Err(PromptError::MissingTemplate(id.to_string()));
            }
            raw.insert(id.to_string(), std::fs::read_to_string(path)?);
        }
        TemplateSet::verified(raw)
    }

    fn verified(raw: BTreeMap<String, String>) -> Result<TemplateSet, PromptError> {
        let mut templates = BTreeMap::new();
        for (id, required, _) in BUILTIN {
            let text = raw
                .get(id)
                .ok_or_else(|| PromptError::MissingTemplate(id.to_string()))?;
            let text = text.strip_suffix('\n').unwrap_or(text);
            let text = text.strip_suffix('\r').unwrap_or(text);
            if text.trim().is_empty() {
                return Err(PromptError::EmptyTemplate { id: id.to_string() });
            }
            for cap in placeholder_re().captures_iter(text) {
                let name = &cap[1];
                if !PLACEHOLDERS.contains(&name) {
                    return Err(PromptError::UnknownPlaceholder {
                        id: id.to_string(),
                        placeholder: name.to_string(),
                    });
                }
            }
            for placeholder in required {
                if !text.contains(&format!("{{{placeholder}}}")) {
                    return Err(PromptError::MissingPlaceholder {
                        id: id.to_string(),
                        placeholder: placeholder.to_string(),
                    });
                }
            }
            templates.insert(id.to_string(), text.to_string());
        }
        Ok(TemplateSet { templates })
    }

    pub fn raw(&self, id: &str) -> &str {
        self.templates
            .get(id)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("template set verified to contain '{id}'"))
    }

    /// Single-pass substitution: replacement values are never re-expanded.
    pub fn render(&self, id: &str, slots: &Slots<'_>) -> String {
        placeholder_re()
            .replace_all(self.raw(id), |cap: &regex::Captures<'_>| {
                slots.get(&cap[1]).unwrap_or(&cap[0]).to_string()
            })
            .into_owned()
    }

    pub fn output_instruction(&self, output: OutputForm) -> &str {
        match output {
            OutputForm::Numeric => self.raw(ids::OUTPUT_NUMERIC),
            OutputForm::Categorical => self.raw(ids::OUTPUT_CATEGORICAL),
        }
    }

    /// The simple scoring prompt followed by the output instruction.
    fn scoring_text(&self, item: &NormItem, cfg: &ExperimentConfig, sentence: Option<&str>) -> (String, &'static str) {
        // The scoring question always names the bare role; the PropBank
        // prefix only goes into the reasoning steps.
        let role = role_display(item.role, false);
        let slots = Slots {
            predicate: &item.predicate,
            argument: &item.argument,
            role: &role,
            sentence,
        };
        let id = if sentence.is_some() { ids::SCORE_SENTENCE } else { ids::SCORE_LEMMA };
        let question = self.render(id, &slots);
        (format!("{question}\n{}", self.output_instruction(cfg.output)), id)
    }

    pub fn render_simple_chain(
        &self,
        item: &NormItem,
        cfg: &ExperimentConfig,
        sentence: Option<&str>,
    ) -> Result<PromptChain, PromptError> {
        check_sentence(cfg, sentence)?;
        Ok(self.simple_chain_unchecked(item, cfg, sentence))
    }

    fn simple_chain_unchecked(&self, item: &NormItem, cfg: &ExperimentConfig, sentence: Option<&str>) -> PromptChain {
        let (text, id) = self.scoring_text(item, cfg, sentence);
        PromptChain {
            steps: vec![ChainStep {
                step_index: 0,
                template_id: id.to_string(),
                rendered_text: text,
                expects: Expects::ScoreJson,
            }],
            context_sentence: sentence.map(str::to_string),
        }
    }

    pub fn render_step_chain(
        &self,
        item: &NormItem,
        cfg: &ExperimentConfig,
        sentence: Option<&str>,
    ) -> Result<PromptChain, PromptError> {
        check_sentence(cfg, sentence)?;
        Ok(self.step_chain_unchecked(item, cfg, sentence))
    }

    fn step_chain_unchecked(&self, item: &NormItem, cfg: &ExperimentConfig, sentence: Option<&str>) -> PromptChain {
        let role = role_display(item.role, cfg.propbank_prefix);
        let slots = Slots {
            predicate: &item.predicate,
            argument: &item.argument,
            role: &role,
            sentence,
        };
        let reasoning = if sentence.is_some() {
            [ids::ROLE_PROPERTIES_SENTENCE, ids::ARGUMENT_PROPERTIES_SENTENCE, ids::FIT_REASONING_SENTENCE]
        } else {
            [ids::ROLE_PROPERTIES_LEMMA, ids::ARGUMENT_PROPERTIES_LEMMA, ids::FIT_REASONING_LEMMA]
        };
        let mut steps: Vec<ChainStep> = reasoning
            .iter()
            .enumerate()
            .map(|(i, id)| ChainStep {
                step_index: i,
                template_id: id.to_string(),
                rendered_text: self.render(id, &slots),
                expects: Expects::FreeText,
            })
            .collect();
        let (text, id) = self.scoring_text(item, cfg, sentence);
        steps.push(ChainStep {
            step_index: 3,
            template_id: id.to_string(),
            rendered_text: text,
            expects: Expects::ScoreJson,
        });
        PromptChain {
            steps,
            context_sentence: sentence.map(str::to_string),
        }
    }

    /// Renders the chain for `cfg`'s reasoning form.
    pub fn render_chain(
        &self,
        item: &NormItem,
        cfg: &ExperimentConfig,
        sentence: Option<&str>,
    ) -> Result<PromptChain, PromptError> {
        match cfg.reasoning {
            ReasoningForm::Simple => self.render_simple_chain(item, cfg, sentence),
            ReasoningForm::StepByStep => self.render_step_chain(item, cfg, sentence),
        }
    }

    /// The lemma-tuple chain run when sentence context is unavailable.
    pub fn render_backoff_chain(&self, item: &NormItem, cfg: &ExperimentConfig) -> PromptChain {
        match cfg.reasoning {
            ReasoningForm::Simple => self.simple_chain_unchecked(item, cfg, None),
            ReasoningForm::StepByStep => self.step_chain_unchecked(item, cfg, None),
        }
    }

    pub fn generation_prompt(&self, item: &NormItem, propbank_prefix: bool) -> String {
        let role = role_display(item.role, propbank_prefix);
        self.render(
            ids::GENERATE_SENTENCES,
            &Slots {
                predicate: &item.predicate,
                argument: &item.argument,
                role: &role,
                sentence: None,
            },
        )
    }

    pub fn verification_prompt(&self, sentence: &str, item: &NormItem, propbank_prefix: bool) -> String {
        let role = role_display(item.role, propbank_prefix);
        self.render(
            ids::VERIFY_COHERENCE,
            &Slots {
                predicate: &item.predicate,
                argument: &item.argument,
                role: &role,
                sentence: Some(sentence),
            },
        )
    }

    /// The scoring prompt with the reminder line appended, for the single
    /// retry after an unparseable score.
    pub fn with_reminder(&self, scoring_text: &str) -> String {
        format!("{scoring_text}\n{}", self.raw(ids::SCORE_REMINDER))
    }
}

fn check_sentence(cfg: &ExperimentConfig, sentence: Option<&str>) -> Result<(), PromptError> {
    match (cfg.input, sentence) {
        (InputForm::GeneratedSentence, None) => Err(PromptError::MissingSentence {
            id: cfg.experiment_id.clone(),
        }),
        (InputForm::LemmaTuple, Some(_)) => Err(PromptError::UnexpectedSentence {
            id: cfg.experiment_id.clone(),
        }),
        _ => Ok(()),
    }
}

/// Output instruction for `output` from the builtin templates.
pub fn output_instruction(output: OutputForm) -> &'static str {
    TemplateSet::builtin().output_instruction(output)
}

pub fn render_simple_chain(item: &NormItem, cfg: &ExperimentConfig, sentence: Option<&str>) -> Result<PromptChain, PromptError> {
    TemplateSet::builtin().render_simple_chain(item, cfg, sentence)
}

pub fn render_step_chain(item: &NormItem, cfg: &ExperimentConfig, sentence: Option<&str>) -> Result<PromptChain, PromptError> {
    TemplateSet::builtin().render_step_chain(item, cfg, sentence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::RatingScale;

    fn item(role: Role) -> NormItem {
        NormItem {
            item_id: "t:00000".into(),
            dataset: "t".into(),
            predicate: "eat".into(),
            argument: "pizza".into(),
            role,
            human_rating: 6.8,
            scale: RatingScale::LIKERT_7,
        }
    }

    #[test]
    fn role_display_cases() {
        assert_eq!(role_display(Role::Arg1, true), "PropBank Arg1");
        assert_eq!(role_display(Role::Location, true), "Location");
        assert_eq!(role_display(Role::Arg2, false), "Arg2");
    }

    #[test]
    fn instructions() {
        let num = output_instruction(OutputForm::Numeric);
        let cat = output_instruction(OutputForm::Categorical);
        assert!(num.contains("a float number from 0 to 1"));
        assert!(cat.contains("'Near-Perfect', 'High', 'Medium', 'Low' or 'Near-Impossible'"));
        for text in [num, cat] {
            assert!(text.ends_with("Avoid adding any text outside this JSON object."));
        }
    }

    #[test]
    fn experiment_ids_encode_axes() {
        let c = ExperimentConfig::new("4.2").unwrap();
        assert_eq!(c.reasoning, ReasoningForm::StepByStep);
        assert_eq!(c.input, InputForm::GeneratedSentence);
        assert_eq!(c.output, OutputForm::Categorical);
        assert!(ExperimentConfig::new("5.1").is_err());
        assert!(ExperimentConfig::new("1.3").is_err());
        assert!(ExperimentConfig::new("11").is_err());
        assert!(ExperimentConfig::all().iter().all(ExperimentConfig::is_consistent));
    }

    #[test]
    fn max_token_regimes() {
        let p = |id: &str| ExperimentConfig::new(id).unwrap();
        assert_eq!(p("1.1").chain_params().max_tokens, 100);
        assert_eq!(p("2.2").chain_params().max_tokens, 300);
        assert_eq!(p("2.2").backoff_params().max_tokens, 100);
        assert_eq!(p("2.2").context_params().max_tokens, 300);
        assert_eq!(p("3.1").chain_params().max_tokens, 600);
        assert_eq!(p("4.1").backoff_params().max_tokens, 600);
        let o = p("4.1").with_max_tokens_override(Some(50));
        assert_eq!(o.chain_params().max_tokens, 50);
        assert_eq!(o.context_params().max_tokens, 50);
        let d = ModelParams::default();
        assert_eq!(d.temperature, 0.0);
        assert_eq!(d.top_p, 0.95);
    }

    #[test]
    fn sentence_presence_is_checked() {
        let cfg = ExperimentConfig::new("1.1").unwrap();
        assert!(matches!(
            render_simple_chain(&item(Role::Arg1), &cfg, Some("x")),
            Err(PromptError::UnexpectedSentence { .. })
        ));
        let cfg = ExperimentConfig::new("4.1").unwrap();
        assert!(matches!(
            render_step_chain(&item(Role::Arg1), &cfg, None),
            Err(PromptError::MissingSentence { .. })
        ));
    }

    #[test]
    fn step_two_names_the_items_role() {
        let cfg = ExperimentConfig::new("3.1").unwrap();
        let chain = render_step_chain(&item(Role::Location), &cfg, None).unwrap();
        assert!(chain.steps[1].rendered_text.contains("in the Location role"));
    }

    #[test]
    fn substitution_is_single_pass() {
        let mut it = item(Role::Arg1);
        it.argument = "{role}".into();
        let cfg = ExperimentConfig::new("1.1").unwrap();
        let chain = render_simple_chain(&it, &cfg, None).unwrap();
        assert!(chain.steps[0].rendered_text.contains("argument '{role}' fit"));
    }

    #[test]
    fn template_verification_rejects_bad_sets() {
        let mut raw: BTreeMap<String, String> = BUILTIN
            .iter()
            .map(|(id, _, t)| (id.to_string(), t.to_string()))
            .collect();
        raw.insert(ids::SCORE_LEMMA.into(), "how much does {argument} fit {role}?".into());
        assert!(matches!(
            TemplateSet::verified(raw.clone()),
            Err(PromptError::MissingPlaceholder { .. })
        ));
        raw.insert(ids::SCORE_LEMMA.into(), "{predicate} {argument} {role} {verb}".into());
        assert!(matches!(
            TemplateSet::verified(raw.clone()),
            Err(PromptError::UnknownPlaceholder { .. })
        ));
        raw.remove(ids::SCORE_LEMMA);
        assert!(matches!(TemplateSet::verified(raw), Err(PromptError::MissingTemplate(_))));
    }

    #[test]
    fn template_dir_round_trip() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
        let set = TemplateSet::from_dir(&dir).unwrap();
        for (id, _, _) in BUILTIN {
            assert_eq!(set.raw(id), TemplateSet::builtin().raw(id));
        }
    }
}
