//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::gateway::{CassetteStore, Gateway, GatewayMode, HttpBackend, NormOracleMock, ScoreMapping};
use crate::harness::{self, GridReport, PropbankMode, RunOptions, RunOutput};
use crate::norms::{load_dataset, preprocess, ColumnSpec, Dataset};
use crate::prompt::{ExperimentConfig, TemplateSet};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Parser)]
#[command(name = "themfit", version, about = "Thematic-fit prompting experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, dedupe and preprocess norm files and print their provenance.
    ValidateData(DataArgs),
    /// Run one experiment over one dataset.
    Run(RunArgs),
    /// Run every experiment over every dataset.
    Grid(GridArgs),
    /// Run one experiment over a sample for each temperature/top_p pair.
    Sweep(SweepArgs),
    /// Classify each scored item of a finished run as Good or Bad fit.
    Analyze(AnalyzeArgs),
    /// Rebuild the grid report from the runs stored under --out.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Norms file; repeat for several datasets.
    #[arg(long = "dataset", required = true)]
    pub datasets: Vec<PathBuf>,
    /// JSON column mapping applied to every --dataset.
    #[arg(long)]
    pub columns: Option<PathBuf>,
    /// Remove leading "a"/"an" from arguments.
    #[arg(long)]
    pub strip_articles: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Live,
    Record,
    Replay,
    Mock,
}

impl From<ModeArg> for GatewayMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Live => GatewayMode::Live,
            ModeArg::Record => GatewayMode::Record,
            ModeArg::Replay => GatewayMode::Replay,
            ModeArg::Mock => GatewayMode::Mock,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockArg {
    Identity,
    Antitone,
    Noisy,
}

#[derive(Debug, Clone, Args)]
pub struct GatewayArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub mode: ModeArg,
    #[arg(long, default_value = DEFAULT_BASE_URL)]
    pub base_url: String,
    #[arg(long)]
    pub cassette_dir: Option<PathBuf>,
    /// Maximum in-flight requests.
    #[arg(long, default_value_t = crate::gateway::DEFAULT_CONCURRENCY)]
    pub concurrency: usize,
    /// Score mapping used by the in-process mock.
    #[arg(long, value_enum, default_value = "identity")]
    pub mock: MockArg,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_tokens_override: Option<u32>,
    #[arg(long, default_value = "auto")]
    pub propbank_prefix: PropbankMode,
    /// Directory of prompt templates replacing the built-in set.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub experiment: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Continue the run named by --run-id (or the default id).
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Comma-separated experiment ids, or "all".
    #[arg(long, default_value = "all")]
    pub experiments: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "1.1")]
    pub experiment: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Items taken from the start of the dataset.
    #[arg(long, default_value_t = 20)]
    pub sample: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 0.9])]
    pub temps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.7, 0.95])]
    pub top_ps: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub run_id: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub threshold: f64,
    /// Also print one TSV row per item.
    #[arg(long)]
    pub items: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Print the TSV instead of the aligned table.
    #[arg(long)]
    pub tsv: bool,
}

pub fn load_datasets(args: &DataArgs) -> Result<Vec<Dataset>> {
    let columns = match &args.columns {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<ColumnSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ColumnSpec::canonical(),
    };
    args.datasets
        .iter()
        .map(|p| {
            let raw = load_dataset(p, &columns)?;
            Ok(preprocess(&raw, args.strip_articles))
        })
        .collect()
}

pub fn build_gateway(args: &GatewayArgs, datasets: &[Dataset]) -> Result<Gateway> {
    let cassette = || -> Result<CassetteStore> {
        let dir = args
            .cassette_dir
            .as_deref()
            .context("--cassette-dir is required in record and replay modes")?;
        CassetteStore::open(dir).with_context(|| format!("opening cassette dir {}", dir.display()))
    };
    let gw = match args.mode {
        ModeArg::Mock => {
            let mapping = match args.mock {
                MockArg::Identity => ScoreMapping::Identity,
                MockArg::Antitone => ScoreMapping::Antitone,
                MockArg::Noisy => ScoreMapping::Noisy { amplitude: 0.15 },
            };
            Gateway::mock(Arc::new(NormOracleMock::new(datasets).mapping(mapping)))
        }
        ModeArg::Live => Gateway::live(Arc::new(HttpBackend::from_env(args.base_url.clone()))),
        ModeArg::Record => Gateway::record(Arc::new(HttpBackend::from_env(args.base_url.clone())), cassette()?),
        ModeArg::Replay => Gateway::replay(cassette()?),
    };
    Ok(gw.with_concurrency(args.concurrency))
}

fn configure(cfg: ExperimentConfig, model: &ModelArgs, dataset: Option<&Dataset>) -> ExperimentConfig {
    let mut cfg = cfg.with_max_tokens_override(model.max_tokens_override);
    if let Some(m) = &model.model {
        cfg = cfg.with_model(m.clone());
    }
    let t = model.temperature.unwrap_or(cfg.model_params.temperature);
    let p = model.top_p.unwrap_or(cfg.model_params.top_p);
    cfg = cfg.with_sampling(t, p);
    if let Some(d) = dataset {
        cfg = cfg.with_propbank_prefix(model.propbank_prefix.resolve(d));
    }
    cfg
}

fn templates(model: &ModelArgs) -> Result<TemplateSet> {
    Ok(match &model.templates {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::builtin().clone(),
    })
}

fn single(datasets: Vec<Dataset>) -> Result<Dataset> {
    let mut it = datasets.into_iter();
    match (it.next(), it.next()) {
        (Some(d), None) => Ok(d),
        _ => bail!("this command takes exactly one --dataset"),
    }
}

fn print_run(out: &RunOutput) {
    let c = &out.correlation;
    let m = &out.manifest;
    println!(
        "{} on {}: rho = {:.4}, p = {}, n = {}",
        m.experiment.experiment_id,
        m.dataset_name,
        c.rho,
        c.p_value.map(|p| format!("{p:.3e}")).unwrap_or_else(|| "NA".into()),
        c.n
    );
    println!(
        "items {} scored {} failed {} backoff {} incoherent sentences {}",
        m.totals.items, m.totals.scored, m.totals.failed, m.totals.backoff, m.totals.incoherent_sentences
    );
    for f in &out.failed {
        println!("  failed {}: {}", f.item_id, f.reason);
    }
}

fn validate_data(args: &DataArgs) -> Result<()> {
    for d in load_datasets(args)? {
        println!("{} ({}): {} items", d.name, d.provenance.source.display(), d.len());
        for t in &d.provenance.transforms {
            println!("  {t}");
        }
        for w in &d.provenance.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let dataset = single(load_datasets(&args.data)?)?;
    let gateway = build_gateway(&args.gateway, std::slice::from_ref(&dataset))?;
    let templates = templates(&args.model)?;
    let cfg = configure(ExperimentConfig::new(&args.experiment)?, &args.model, Some(&dataset));
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| harness::default_run_id(&cfg, &dataset));
    let out = if args.resume {
        harness::resume(&args.out, &run_id, &dataset, &gateway, &templates)?
    } else {
        let opts = RunOptions {
            run_id: Some(run_id),
            out_dir: Some(args.out.clone()),
            templates: &templates,
            item_workers: None,
        };
        harness::run_experiment(&cfg, &dataset, &gateway, &opts)?
    };
    print_run(&out);
    Ok(())
}

fn parse_experiments(list: &str) -> Result<Vec<ExperimentConfig>> {
    if list == "all" {
        return Ok(ExperimentConfig::all());
    }
    list.split(',')
        .map(|id| ExperimentConfig::new(id.trim()).map_err(Into::into))
        .collect()
}

fn write_report(out: &Path, report: &GridReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("grid.tsv"), report.to_tsv())?;
    std::fs::write(out.join("grid.txt"), report.to_table())?;
    Ok(())
}

fn grid(args: &GridArgs) -> Result<()> {
    let datasets = load_datasets(&args.data)?;
    let gateway = build_gateway(&args.gateway, &datasets)?;
    let templates = templates(&args.model)?;
    let experiments: Vec<ExperimentConfig> = parse_experiments(&args.experiments)?
        .into_iter()
        .map(|c| configure(c, &args.model, None))
        .collect();
    let opts = RunOptions {
        run_id: None,
        out_dir: Some(args.out.clone()),
        templates: &templates,
        item_workers: None,
    };
    let report = harness::run_grid(&experiments, &datasets, &gateway, args.model.propbank_prefix, &opts);
    write_report(&args.out, &report)?;
    print!("{}", report.to_table());
    for c in &report.cells {
        if let Err(e) = &c.result {
            eprintln!("{} on {}: {e}", c.experiment, c.dataset);
        }
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let dataset = single(load_datasets(&args.data)?)?.take(args.sample);
    let gateway = build_gateway(&args.gateway, std::slice::from_ref(&dataset))?;
    let templates = templates(&args.model)?;
    let cfg = configure(ExperimentConfig::new(&args.experiment)?, &args.model, Some(&dataset));
    let opts = RunOptions {
        run_id: None,
        out_dir: None,
        templates: &templates,
        item_workers: None,
    };
    let table = harness::sweep_grid(&dataset, &args.temps, &args.top_ps, &cfg, &gateway, &opts);
    print!("{}", table.to_table());
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let a = harness::analyze(&args.out, &args.run_id, args.threshold)?;
    if args.items {
        print!("{}", a.to_tsv());
    }
    println!("{}", a.summary());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let report = GridReport::collect(&args.out)?;
    if args.tsv {
        print!("{}", report.to_tsv());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ValidateData(a) => validate_data(a),
        Command::Run(a) => run(a),
        Command::Grid(a) => grid(a),
        Command::Sweep(a) => sweep(a),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain with ": ", skipping links whose text the previous
/// link already contains (most library errors embed their source).
pub fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for link in e.chain() {
        let text = link.to_string();
        if !last.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        last = text;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_chain_drops_repeated_sources() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = anyhow::Error::new(harness::HarnessError::io(Path::new("out"), io)).context("collecting runs");
        assert_eq!(render_error(&e), "collecting runs: out: gone");
    }

    #[test]
    fn parses_run_flags() {
        let cli = Cli::try_parse_from([
            "themfit", "run", "--experiment", "3.2", "--dataset", "x.tsv", "--mode", "replay",
            "--cassette-dir", "c", "--propbank-prefix", "off", "--concurrency", "2",
            "--max-tokens-override", "50", "--top-p", "0.7",
        ])
        .unwrap();
        let Command::Run(r) = cli.command else { panic!() };
        assert_eq!(r.gateway.mode, ModeArg::Replay);
        assert_eq!(r.model.propbank_prefix, PropbankMode::Off);
        assert_eq!(r.model.max_tokens_override, Some(50));
    }

    #[test]
    fn replay_needs_cassette_dir() {
        let args = GatewayArgs {
            mode: ModeArg::Replay,
            base_url: DEFAULT_BASE_URL.into(),
            cassette_dir: None,
            concurrency: 1,
            mock: MockArg::Identity,
        };
        assert!(build_gateway(&args, &[]).is_err());
    }
}
