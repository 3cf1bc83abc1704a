//! End-to-end experiment execution: per-item pipelines, transcripts,
//! resume, grids, parameter sweeps and reports.

mod analyze;
mod report;
mod transcript;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{average, parse_score, ContextCounts, ScoreOutcome, ScoreSource};
use crate::context::{build_context, ContextError};
use crate::gateway::{ChainError, Exchange, FinishReason, Gateway, GatewayError, GatewayMode, Message, ModelParams};
use crate::norms::{Dataset, NormItem, RatingScale};
use crate::prompt::{Expects, ExperimentConfig, InputForm, OutputForm, PromptChain, PromptError, TemplateSet};
use crate::stats::{correlate_experiment, CorrelationResult, StatsError};

pub use analyze::{analyze, analyze_outcomes, Analysis, AnalysisRow};
pub use report::{render_run_tsv, GridCell, GridReport, SweepTable};
pub use transcript::{read_transcript, Phase, Transcript, TranscriptRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("item {item_id}: {source}")]
    Gateway {
        item_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("only {scored} scorable items; at least 3 are needed")]
    TooFewScorable { scored: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("corrupt transcript {path} line {line}: {message}")]
    CorruptTranscript {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown run '{0}'")]
    UnknownRun(String),
    #[error("run '{0}' has no transcript to resume")]
    NothingToResume(String),
    #[error("run '{0}' has not finished")]
    Unfinished(String),
    #[error("transcript for run '{run_id}' references item '{item_id}' not in the dataset")]
    ForeignItem { run_id: String, item_id: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn is_cache_miss(&self) -> bool {
        matches!(self, HarnessError::Gateway { source, .. } if source.is_cache_miss())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub items: usize,
    pub scored: usize,
    pub failed: usize,
    pub backoff: usize,
    pub incoherent_sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub experiment: ExperimentConfig,
    pub dataset_name: String,
    #[serde(default)]
    pub dataset_source: Option<PathBuf>,
    pub gateway_mode: GatewayMode,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub totals: Totals,
    #[serde(default)]
    pub result: Option<CorrelationResult>,
    #[serde(default)]
    pub error: Option<String>,
}

/// An item whose score could not be parsed. Excluded from correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedItem {
    pub item_id: String,
    pub reason: String,
}

/// An outcome together with the human rating it is compared to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub outcome: ScoreOutcome,
    pub human_rating: f64,
    pub scale: RatingScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub correlation: CorrelationResult,
    pub manifest: RunManifest,
    /// Sorted by item id.
    pub outcomes: Vec<ScoreOutcome>,
    pub failed: Vec<FailedItem>,
    /// Records written during this invocation.
    pub records: Vec<TranscriptRecord>,
}

/// Whether reasoning prompts put "PropBank" before numbered roles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropbankMode {
    On,
    Off,
    /// On exactly when every role in the dataset is a numbered role.
    #[default]
    Auto,
}

impl std::str::FromStr for PropbankMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "on" => Ok(PropbankMode::On),
            "off" => Ok(PropbankMode::Off),
            "auto" => Ok(PropbankMode::Auto),
            other => Err(format!("expected on|off|auto, got '{other}'")),
        }
    }
}

impl PropbankMode {
    pub fn resolve(self, dataset: &Dataset) -> bool {
        match self {
            PropbankMode::On => true,
            PropbankMode::Off => false,
            PropbankMode::Auto => dataset.uses_numbered_roles(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions<'t> {
    pub run_id: Option<String>,
    /// Root directory for run artifacts; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    pub templates: &'t TemplateSet,
    /// Items processed in parallel; defaults to the gateway's in-flight bound.
    pub item_workers: Option<usize>,
}

impl Default for RunOptions<'static> {
    fn default() -> Self {
        RunOptions {
            run_id: None,
            out_dir: None,
            templates: TemplateSet::builtin(),
            item_workers: None,
        }
    }
}

impl<'t> RunOptions<'t> {
    pub fn with_out_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn with_run_id(mut self, id: impl Into<String>) -> Self {
        self.run_id = Some(id.into());
        self
    }

    pub fn with_item_workers(mut self, n: usize) -> Self {
        self.item_workers = Some(n);
        self
    }
}

pub fn default_run_id(cfg: &ExperimentConfig, dataset: &Dataset) -> String {
    format!("{}-{}", cfg.experiment_id, dataset.name)
}

/// Artifact paths for one run under `root/<run_id>/`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path, run_id: &str) -> Self {
        RunDir { dir: root.join(run_id) }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn transcript(&self) -> PathBuf {
        self.dir.join("transcript.jsonl")
    }

    pub fn outcomes(&self) -> PathBuf {
        self.dir.join("outcomes.json")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.tsv")
    }

    pub fn read_manifest(&self) -> Result<RunManifest, HarnessError> {
        read_json(&self.manifest())
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut body = serde_json::to_string_pretty(value).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    body.push('\n');
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, body).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

enum ItemResult {
    Scored(ScoreOutcome),
    Failed(String),
}

/// Per-item pipeline state. Records are buffered and flushed when the item
/// settles or aborts, so an item's lines are contiguous in the transcript.
struct ItemRun<'a> {
    run_id: &'a str,
    item: &'a NormItem,
    cfg: &'a ExperimentConfig,
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    records: Vec<TranscriptRecord>,
}

struct ChainScore {
    value: Option<f64>,
    raw_text: String,
    reasoning: Vec<String>,
    error: Option<String>,
}

impl<'a> ItemRun<'a> {
    fn record(&mut self, phase: Phase, ex: &Exchange, sentence_index: Option<usize>) -> &mut TranscriptRecord {
        let mut r = TranscriptRecord::from_exchange(self.run_id, &self.item.item_id, phase, ex);
        r.sentence_index = sentence_index;
        self.records.push(r);
        self.records.last_mut().expect("just pushed")
    }

    fn record_error(&mut self, phase: Phase, step: usize, request: Vec<Message>, err: &GatewayError, sentence_index: Option<usize>) {
        let mut r = TranscriptRecord::from_error(self.run_id, &self.item.item_id, phase, step, request, err);
        r.sentence_index = sentence_index;
        self.records.push(r);
    }

    fn abort(&self, source: GatewayError) -> HarnessError {
        HarnessError::Gateway {
            item_id: self.item.item_id.clone(),
            source,
        }
    }

    fn parse(&self, ex: &Exchange) -> Result<f64, String> {
        if ex.response.finish_reason == FinishReason::Length {
            return Err("response truncated at max_tokens".into());
        }
        parse_score(&ex.response.text, self.cfg.output).map_err(|e| e.to_string())
    }

    /// Runs one chain and parses its score, retrying the scoring step once
    /// with a reminder when the reply does not parse.
    fn score_chain(&mut self, chain: &PromptChain, params: &ModelParams, sentence_index: Option<usize>) -> Result<ChainScore, HarnessError> {
        let exchanges = match self.gateway.run_chain(chain, params) {
            Ok(ex) => ex,
            Err(ChainError { step_index, completed, source }) => {
                for ex in &completed {
                    let phase = phase_of(chain, ex.step_index);
                    self.record(phase, ex, sentence_index);
                }
                let mut request: Vec<Message> = completed.last().map(|e| e.request.clone()).unwrap_or_default();
                if let Some(last) = completed.last() {
                    request.push(Message::assistant(last.response.text.clone()));
                }
                request.push(Message::user(chain.steps[step_index].rendered_text.clone()));
                self.record_error(phase_of(chain, step_index), step_index, request, &source, sentence_index);
                return Err(self.abort(source));
            }
        };
        let (scoring, reasoning) = exchanges.split_last().expect("chains are nonempty");
        for ex in reasoning {
            self.record(Phase::Reason, ex, sentence_index);
        }
        let reasoning: Vec<String> = reasoning.iter().map(|e| e.response.text.clone()).collect();

        let first = self.parse(scoring);
        let rec = self.record(Phase::Score, scoring, sentence_index);
        match first {
            Ok(v) => {
                rec.parsed = Some(serde_json::json!(v));
                return Ok(ChainScore {
                    value: Some(v),
                    raw_text: scoring.response.text.clone(),
                    reasoning,
                    error: None,
                });
            }
            Err(e) => rec.error = Some(e),
        }

        let mut request = scoring.request.clone();
        let prompt = request.pop().expect("request ends with the scoring prompt");
        request.push(Message::user(self.templates.with_reminder(&prompt.text)));
        let response = match self.gateway.complete(&request, params) {
            Ok(r) => r,
            Err(source) => {
                self.record_error(Phase::Score, scoring.step_index, request, &source, sentence_index);
                if let Some(r) = self.records.last_mut() {
                    r.attempt = 1;
                }
                return Err(self.abort(source));
            }
        };
        let retry = Exchange {
            step_index: scoring.step_index,
            request,
            response,
        };
        let second = self.parse(&retry);
        let rec = self.record(Phase::Score, &retry, sentence_index);
        rec.attempt = 1;
        Ok(match second {
            Ok(v) => {
                rec.parsed = Some(serde_json::json!(v));
                ChainScore {
                    value: Some(v),
                    raw_text: retry.response.text.clone(),
                    reasoning,
                    error: None,
                }
            }
            Err(e) => {
                rec.error = Some(e.clone());
                ChainScore {
                    value: None,
                    raw_text: retry.response.text.clone(),
                    reasoning,
                    error: Some(e),
                }
            }
        })
    }

    fn outcome(&self, value: f64, source: ScoreSource, score: ChainScore) -> ScoreOutcome {
        ScoreOutcome {
            item_id: self.item.item_id.clone(),
            value,
            source,
            components: None,
            raw_text: score.raw_text,
            reasoning_texts: (!score.reasoning.is_empty()).then_some(score.reasoning),
            annotation: None,
            context: None,
        }
    }

    fn lemma_source(&self, backoff: bool) -> ScoreSource {
        match (self.cfg.output, backoff) {
            (OutputForm::Numeric, false) => ScoreSource::NumericDirect,
            (OutputForm::Categorical, false) => ScoreSource::CategoricalMapped,
            (OutputForm::Numeric, true) => ScoreSource::BackoffNumeric,
            (OutputForm::Categorical, true) => ScoreSource::BackoffCategorical,
        }
    }

    fn run(&mut self) -> Result<ItemResult, HarnessError> {
        match self.cfg.input {
            InputForm::LemmaTuple => {
                let chain = self.templates.render_chain(self.item, self.cfg, None)?;
                let score = self.score_chain(&chain, &self.cfg.chain_params(), None)?;
                Ok(match score.value {
                    Some(v) => ItemResult::Scored(self.outcome(v, self.lemma_source(false), score)),
                    None => ItemResult::Failed(score.error.unwrap_or_default()),
                })
            }
            InputForm::GeneratedSentence => self.run_with_context(),
        }
    }

    fn run_with_context(&mut self) -> Result<ItemResult, HarnessError> {
        let ctx = match build_context(
            self.item,
            self.gateway,
            &self.cfg.context_params(),
            self.templates,
            self.cfg.propbank_prefix,
        ) {
            Ok(ctx) => ctx,
            Err(err) => {
                let ContextError {
                    source,
                    failed_request,
                    failed_index,
                    generation,
                    verifications,
                } = *err;
                if let Some(g) = &generation {
                    self.record(Phase::Generate, g, None);
                }
                for v in &verifications {
                    self.record(Phase::Verify, v, Some(v.step_index));
                }
                match failed_index {
                    None => self.record_error(Phase::Generate, 0, failed_request, &source, None),
                    Some(i) => self.record_error(Phase::Verify, i, failed_request, &source, Some(i)),
                }
                return Err(self.abort(source));
            }
        };
        let rec = self.record(Phase::Generate, &ctx.generation, None);
        rec.parsed = Some(serde_json::json!(ctx.candidates.iter().map(|c| &c.text).collect::<Vec<_>>()));
        for (v, c) in ctx.verifications.iter().zip(&ctx.candidates) {
            let rec = self.record(Phase::Verify, v, Some(v.step_index));
            rec.parsed = Some(serde_json::json!({ "Coherent": c.coherent }));
        }
        let counts = ContextCounts {
            candidates: ctx.candidates.len(),
            usable: ctx.usable.len(),
        };

        if ctx.backoff {
            let chain = self.templates.render_backoff_chain(self.item, self.cfg);
            let score = self.score_chain(&chain, &self.cfg.backoff_params(), None)?;
            return Ok(match score.value {
                Some(v) => {
                    let mut o = self.outcome(v, self.lemma_source(true), score);
                    o.context = Some(counts);
                    ItemResult::Scored(o)
                }
                None => ItemResult::Failed(score.error.unwrap_or_default()),
            });
        }

        let usable: Vec<(usize, String)> = ctx
            .candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.coherent)
            .map(|(i, c)| (i, c.text.clone()))
            .collect();
        let mut components = Vec::new();
        let mut raw = Vec::new();
        let mut reasoning = Vec::new();
        let mut errors = Vec::new();
        for (i, sentence) in &usable {
            let chain = self.templates.render_chain(self.item, self.cfg, Some(sentence))?;
            let score = self.score_chain(&chain, &self.cfg.chain_params(), Some(*i))?;
            reasoning.extend(score.reasoning);
            raw.push(score.raw_text);
            match score.value {
                Some(v) => components.push(v),
                None => errors.push(score.error.unwrap_or_default()),
            }
        }
        if components.is_empty() {
            return Ok(ItemResult::Failed(format!(
                "no sentence produced a parseable score: {}",
                errors.join("; ")
            )));
        }
        let value = average(&components).expect("nonempty");
        Ok(ItemResult::Scored(ScoreOutcome {
            item_id: self.item.item_id.clone(),
            value,
            source: ScoreSource::SentenceAveraged,
            components: Some(components),
            raw_text: raw.join("\n"),
            reasoning_texts: (!reasoning.is_empty()).then_some(reasoning),
            annotation: None,
            context: Some(counts),
        }))
    }
}

fn phase_of(chain: &PromptChain, step_index: usize) -> Phase {
    match chain.steps.get(step_index).map(|s| s.expects) {
        Some(Expects::ScoreJson) => Phase::Score,
        _ => Phase::Reason,
    }
}

/// What earlier invocations already settled, recovered from a transcript.
#[derive(Debug, Default)]
struct Settled {
    scored: BTreeMap<String, ScoreOutcome>,
    failed: BTreeMap<String, String>,
}

impl Settled {
    fn from_records(records: &[TranscriptRecord]) -> Self {
        let mut s = Settled::default();
        for r in records {
            if let Some(o) = &r.outcome {
                s.scored.insert(r.item_id.clone(), o.clone());
            } else if let Some(reason) = &r.item_failed {
                s.failed.insert(r.item_id.clone(), reason.clone());
            }
        }
        s
    }

    fn contains(&self, item_id: &str) -> bool {
        self.scored.contains_key(item_id) || self.failed.contains_key(item_id)
    }
}

/// Runs one experiment configuration over a preprocessed dataset.
///
/// Gateway failures that survive retries abort the run; the transcript
/// written so far is kept so [`resume`] can continue it.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    gateway: &Gateway,
    options: &RunOptions<'_>,
) -> Result<RunOutput, HarnessError> {
    let run_id = options.run_id.clone().unwrap_or_else(|| default_run_id(cfg, dataset));
    execute(cfg, dataset, gateway, options, &run_id, Settled::default(), None)
}

/// Continues an interrupted run stored under `out_dir/run_id`. Items whose
/// outcome is already in the transcript are not re-executed.
pub fn resume(
    out_dir: &Path,
    run_id: &str,
    dataset: &Dataset,
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<RunOutput, HarnessError> {
    let run_dir = RunDir::new(out_dir, run_id);
    if !run_dir.manifest().exists() {
        return Err(HarnessError::UnknownRun(run_id.to_string()));
    }
    if !run_dir.transcript().exists() {
        return Err(HarnessError::NothingToResume(run_id.to_string()));
    }
    let manifest = run_dir.read_manifest()?;
    let prior = read_transcript(&run_dir.transcript())?;
    if let Some(r) = prior.iter().find(|r| dataset.get(&r.item_id).is_none()) {
        return Err(HarnessError::ForeignItem {
            run_id: run_id.to_string(),
            item_id: r.item_id.clone(),
        });
    }
    let settled = Settled::from_records(&prior);
    let options = RunOptions {
        run_id: Some(run_id.to_string()),
        out_dir: Some(out_dir.to_path_buf()),
        templates,
        item_workers: None,
    };
    execute(
        &manifest.experiment,
        dataset,
        gateway,
        &options,
        run_id,
        settled,
        Some(manifest.started_at),
    )
}

fn execute(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    gateway: &Gateway,
    options: &RunOptions<'_>,
    run_id: &str,
    settled: Settled,
    started_at: Option<DateTime<Utc>>,
) -> Result<RunOutput, HarnessError> {
    let run_dir = options.out_dir.as_deref().map(|root| RunDir::new(root, run_id));
    let mut manifest = RunManifest {
        run_id: run_id.to_string(),
        experiment: cfg.clone(),
        dataset_name: dataset.name.clone(),
        dataset_source: Some(dataset.provenance.source.clone()),
        gateway_mode: gateway.mode(),
        started_at: started_at.unwrap_or_else(Utc::now),
        finished_at: None,
        totals: Totals {
            items: dataset.len(),
            ..Totals::default()
        },
        result: None,
        error: None,
    };
    let transcript = match &run_dir {
        Some(rd) => {
            std::fs::create_dir_all(&rd.dir).map_err(|e| HarnessError::io(&rd.dir, e))?;
            write_json(&rd.manifest(), &manifest)?;
            Transcript::append_to(&rd.transcript()).map_err(|e| HarnessError::io(&rd.transcript(), e))?
        }
        None => Transcript::in_memory(),
    };

    let pending: Vec<&NormItem> = dataset.items.iter().filter(|it| !settled.contains(&it.item_id)).collect();
    let workers = options.item_workers.unwrap_or_else(|| gateway.concurrency()).max(1).min(pending.len().max(1));
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let results: Mutex<HashMap<String, ItemResult>> = Mutex::new(HashMap::new());
    let first_error: Mutex<Option<HarnessError>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = pending.get(i) else { break };
                let mut run = ItemRun {
                    run_id,
                    item,
                    cfg,
                    gateway,
                    templates: options.templates,
                    records: Vec::new(),
                };
                let result = run.run();
                let mut records = std::mem::take(&mut run.records);
                if let Some(last) = records.last_mut() {
                    match &result {
                        Ok(ItemResult::Scored(o)) => last.outcome = Some(o.clone()),
                        Ok(ItemResult::Failed(reason)) => last.item_failed = Some(reason.clone()),
                        Err(_) => {}
                    }
                }
                let written = transcript.write_all(records);
                let err = match (result, written) {
                    (Ok(r), Ok(())) => {
                        results.lock().expect("results lock").insert(item.item_id.clone(), r);
                        continue;
                    }
                    (Err(e), _) => e,
                    (Ok(_), Err(e)) => HarnessError::io(
                        run_dir.as_ref().map(|r| r.dir.as_path()).unwrap_or(Path::new("-")),
                        e,
                    ),
                };
                stop.store(true, Ordering::SeqCst);
                first_error.lock().expect("error lock").get_or_insert(err);
                break;
            });
        }
    });

    if let Some(err) = first_error.into_inner().expect("error lock") {
        if let Some(rd) = &run_dir {
            manifest.error = Some(err.to_string());
            write_json(&rd.manifest(), &manifest)?;
        }
        return Err(err);
    }

    let mut outcomes: Vec<ScoreOutcome> = settled.scored.into_values().collect();
    let mut failed: Vec<FailedItem> = settled
        .failed
        .into_iter()
        .map(|(item_id, reason)| FailedItem { item_id, reason })
        .collect();
    for (item_id, r) in results.into_inner().expect("results lock") {
        match r {
            ItemResult::Scored(o) => outcomes.push(o),
            ItemResult::Failed(reason) => failed.push(FailedItem { item_id, reason }),
        }
    }
    outcomes.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    failed.sort_by(|a, b| a.item_id.cmp(&b.item_id));

    manifest.totals.scored = outcomes.len();
    manifest.totals.failed = failed.len();
    manifest.totals.backoff = outcomes.iter().filter(|o| o.source.is_backoff()).count();
    manifest.totals.incoherent_sentences = outcomes.iter().map(ScoreOutcome::incoherent).sum();

    let correlation = if outcomes.len() < 3 {
        Err(HarnessError::TooFewScorable { scored: outcomes.len() })
    } else {
        correlate_experiment(dataset, &outcomes).map_err(HarnessError::from)
    };
    manifest.finished_at = Some(Utc::now());
    let correlation = match correlation {
        Ok(c) => c,
        Err(e) => {
            if let Some(rd) = &run_dir {
                manifest.error = Some(e.to_string());
                write_json(&rd.manifest(), &manifest)?;
            }
            return Err(e);
        }
    };
    manifest.result = Some(correlation.clone());

    if let Some(rd) = &run_dir {
        let scored: Vec<ScoredItem> = outcomes
            .iter()
            .map(|o| {
                let it = dataset.get(&o.item_id).expect("outcomes come from dataset items");
                ScoredItem {
                    outcome: o.clone(),
                    human_rating: it.human_rating,
                    scale: it.scale,
                }
            })
            .collect();
        write_json(&rd.outcomes(), &scored)?;
        write_json(&rd.manifest(), &manifest)?;
        let tsv = render_run_tsv(&manifest.experiment.experiment_id, &manifest.dataset_name, &correlation);
        std::fs::write(rd.report(), tsv).map_err(|e| HarnessError::io(&rd.report(), e))?;
    }

    Ok(RunOutput {
        correlation,
        manifest,
        outcomes,
        failed,
        records: transcript.records(),
    })
}

/// Runs every (experiment, dataset) pair. Cell failures are recorded in
/// the cell and do not stop the remaining cells.
pub fn run_grid(
    experiments: &[ExperimentConfig],
    datasets: &[Dataset],
    gateway: &Gateway,
    propbank: PropbankMode,
    options: &RunOptions<'_>,
) -> GridReport {
    let mut cells = Vec::with_capacity(experiments.len() * datasets.len());
    for cfg in experiments {
        for d in datasets {
            let cfg = cfg.clone().with_propbank_prefix(propbank.resolve(d));
            let opts = RunOptions {
                run_id: Some(default_run_id(&cfg, d)),
                ..options.clone()
            };
            let result = run_experiment(&cfg, d, gateway, &opts);
            cells.push(GridCell {
                experiment: cfg.experiment_id.clone(),
                dataset: d.name.clone(),
                result: result.map(|r| r.correlation).map_err(|e| e.to_string()),
            });
        }
    }
    GridReport {
        experiments: experiments.iter().map(|c| c.experiment_id.clone()).collect(),
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        cells,
    }
}

/// Runs `cfg` over `sample` once per (temperature, top_p) pair.
pub fn sweep_grid(
    sample: &Dataset,
    temps: &[f64],
    top_ps: &[f64],
    cfg: &ExperimentConfig,
    gateway: &Gateway,
    options: &RunOptions<'_>,
) -> SweepTable {
    let mut rows = Vec::with_capacity(temps.len());
    for &t in temps {
        let mut row = Vec::with_capacity(top_ps.len());
        for &p in top_ps {
            let cell_cfg = cfg.clone().with_sampling(t, p);
            let opts = RunOptions {
                run_id: Some(format!("sweep-{}-{}-t{t}-p{p}", cfg.experiment_id, sample.name)),
                ..options.clone()
            };
            row.push(
                run_experiment(&cell_cfg, sample, gateway, &opts)
                    .map(|r| r.correlation.rho)
                    .map_err(|e| e.to_string()),
            );
        }
        rows.push(row);
    }
    SweepTable {
        temps: temps.to_vec(),
        top_ps: top_ps.to_vec(),
        cells: rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FnMock, MockVerdicts, NormOracleMock, ScoreMapping};
    use crate::norms::{parse_dataset, ColumnSpec};
    use std::sync::Arc;

    fn fixture(rows: &[(&str, &str, &str, f64)]) -> Dataset {
        let mut text = String::from("dataset\tpredicate\targument\trole\trating\n");
        for (p, a, r, v) in rows {
            text.push_str(&format!("t\t{p}\t{a}\t{r}\t{v}\n"));
        }
        parse_dataset(&text, Path::new("t.tsv"), &ColumnSpec::canonical()).unwrap()
    }

    fn five() -> Dataset {
        fixture(&[
            ("eat", "pizza", "Arg1", 6.8),
            ("eat", "customer", "Arg0", 6.2),
            ("arrest", "cop", "Arg0", 6.9),
            ("arrest", "cop", "Arg1", 2.1),
            ("teach", "student", "Arg0", 2.8),
        ])
    }

    #[test]
    fn identity_mock_gives_perfect_rho() {
        let d = five();
        let gw = Gateway::mock(Arc::new(NormOracleMock::new([&d])));
        let cfg = ExperimentConfig::new("1.1").unwrap().with_propbank_prefix(true);
        let out = run_experiment(&cfg, &d, &gw, &RunOptions::default()).unwrap();
        assert_eq!(out.correlation.rho, 1.0);
        assert_eq!(out.manifest.totals.failed, 0);
        assert_eq!(out.manifest.totals.scored, 5);
        assert_eq!(out.records.len(), gw.call_count());
        assert!(out.outcomes.iter().all(|o| o.source == ScoreSource::NumericDirect));
    }

    #[test]
    fn all_verifications_fail_means_backoff() {
        let d = five();
        let gw = Gateway::mock(Arc::new(NormOracleMock::new([&d]).verdicts(MockVerdicts::NoneCoherent)));
        let cfg = ExperimentConfig::new("2.2").unwrap();
        let out = run_experiment(&cfg, &d, &gw, &RunOptions::default()).unwrap();
        assert_eq!(out.manifest.totals.backoff, 5);
        assert_eq!(out.manifest.totals.failed, 0);
        assert_eq!(out.manifest.totals.incoherent_sentences, 25);
        assert_eq!(out.correlation.incoherent_count, 25);
        assert!(out.outcomes.iter().all(|o| o.source == ScoreSource::BackoffCategorical));
        // 1 generation + 5 verifications + 1 scoring per item
        assert_eq!(gw.call_count(), 35);
        assert_eq!(out.records.len(), 35);
    }

    #[test]
    fn unparseable_scores_retry_once_then_fail() {
        let d = five();
        let gw = Gateway::mock(Arc::new(NormOracleMock::new([&d]).unparseable_scores(true)));
        let cfg = ExperimentConfig::new("1.1").unwrap();
        let err = run_experiment(&cfg, &d, &gw, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, HarnessError::TooFewScorable { scored: 0 }));
        assert_eq!(gw.call_count(), 10);
    }

    #[test]
    fn reminder_retry_can_recover() {
        let d = five();
        let oracle = NormOracleMock::new([&d]);
        let gw = Gateway::mock(Arc::new(FnMock::new(move |msgs: &[Message], p: &ModelParams| {
            let last = &msgs.last().unwrap().text;
            if last.ends_with("Reply ONLY with the JSON object.") {
                crate::gateway::Backend::send(&oracle, msgs, p).map(|r| r.text)
            } else {
                Ok("It fits.".into())
            }
        })));
        let cfg = ExperimentConfig::new("1.1").unwrap();
        let out = run_experiment(&cfg, &d, &gw, &RunOptions::default()).unwrap();
        assert_eq!(out.correlation.rho, 1.0);
        let retries = out.records.iter().filter(|r| r.attempt == 1).count();
        assert_eq!(retries, 5);
    }

    #[test]
    fn gateway_failure_aborts_and_keeps_records() {
        let d = five();
        let gw = Gateway::mock(Arc::new(FnMock::new(|msgs: &[Message], _: &ModelParams| {
            if msgs.last().unwrap().text.contains("'teach'") {
                Err(crate::gateway::BackendError::Rejected("nope".into()))
            } else {
                Ok("{\"Score\": 0.5}".into())
            }
        })))
        .with_concurrency(1);
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::new("1.1").unwrap();
        let err = run_experiment(&cfg, &d, &gw, &RunOptions::default().with_out_dir(dir.path())).unwrap_err();
        assert!(matches!(err, HarnessError::Gateway { .. }));
        let rd = RunDir::new(dir.path(), "1.1-t");
        let records = read_transcript(&rd.transcript()).unwrap();
        assert_eq!(records.len(), gw.call_count());
        assert!(records.iter().any(|r| r.error.is_some()));
        assert!(rd.read_manifest().unwrap().error.is_some());
    }

    #[test]
    fn antitone_mock_gives_negative_rho() {
        let d = five();
        let gw = Gateway::mock(Arc::new(NormOracleMock::new([&d]).mapping(ScoreMapping::Antitone)));
        let cfg = ExperimentConfig::new("3.1").unwrap();
        let out = run_experiment(&cfg, &d, &gw, &RunOptions::default()).unwrap();
        assert_eq!(out.correlation.rho, -1.0);
        assert!(out.outcomes.iter().all(|o| o.reasoning_texts.as_ref().map(Vec::len) == Some(3)));
    }

    #[test]
    fn propbank_auto() {
        assert!(PropbankMode::Auto.resolve(&five()));
        let f = fixture(&[("eat", "fork", "Instrument", 6.0)]);
        assert!(!PropbankMode::Auto.resolve(&f));
        assert!(PropbankMode::On.resolve(&f));
    }
}
