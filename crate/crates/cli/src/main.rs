use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use quadnet_core::codebook::Codebook;
use quadnet_core::corpus::{self, ParseOptions, Report, ReportKind};
use quadnet_core::dataset::{self, ExportFormat, LongitudinalDataset};
use quadnet_core::eval;
use quadnet_core::finetune;
use quadnet_core::gateway::{
    Gateway, GenerationConfig, HttpBackend, HttpConfig, Recorder, ReplayStore,
    DEFAULT_MAX_IN_FLIGHT,
};
use quadnet_core::manifest::{self, write_atomic, Manifest};
use quadnet_core::pipeline::{self, Mode, ModeConfig};
use quadnet_core::rules::{self, Rule, RuleConfig};
use quadnet_core::topics::{self, TopicHistory, TopicPrompts};
use quadnet_core::Error;

/// Prints a line to stdout. A closed pipe (`quadnet stats | head`) is not
/// an error; the command still finishes its file outputs.
macro_rules! say {
    ($($arg:tt)*) => {
        emit(&format!($($arg)*))
    };
}

fn emit(line: &str) {
    if let Err(e) = writeln!(std::io::stdout().lock(), "{line}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            log::warn!("cannot write to stdout: {e}");
        }
    }
}

#[derive(Parser)]
#[command(
    name = "quadnet",
    version,
    about = "Annotate negotiation reports into a longitudinal interaction network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and summarize a report directory.
    Ingest(IngestArgs),
    /// Build, extend or revise the topic space.
    #[command(subcommand)]
    Topics(TopicsCommand),
    /// Annotate daily reports with interactions.
    Annotate(AnnotateArgs),
    /// Score predicted annotations against gold annotations.
    Evaluate(EvaluateArgs),
    /// Report how well an annotation file follows the coding rules.
    AuditRules(AuditArgs),
    /// Compile annotation files into a dataset file.
    Export(ExportArgs),
    /// Descriptive statistics of an exported dataset.
    Stats(StatsArgs),
    /// Write instruction/output pairs for tuning from gold annotations.
    PrepareFinetune(FinetuneArgs),
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Report directory.
    #[arg(long)]
    input: PathBuf,
    /// Frameworks to keep (repeatable).
    #[arg(long = "framework", default_value = "UNFCCC")]
    frameworks: Vec<String>,
    /// Regex for paragraphs to drop as boilerplate (repeatable).
    #[arg(long)]
    boilerplate: Vec<String>,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Replay file of recorded responses. Mutually exclusive with --endpoint.
    #[arg(long, conflicts_with = "endpoint")]
    replay: Option<PathBuf>,
    /// Chat-completions URL of a live endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    /// Embeddings URL of a live endpoint.
    #[arg(long)]
    embedding_endpoint: Option<String>,
    #[arg(long, default_value = "all-MiniLM-L6-v2")]
    embedding_model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "QUADNET_API_KEY")]
    api_key_env: String,
    /// Append live exchanges to this replay file.
    #[arg(long, requires = "endpoint")]
    record: Option<PathBuf>,
    #[arg(long)]
    model_id: Option<String>,
    /// Maximum concurrent model calls.
    #[arg(long, default_value_t = DEFAULT_MAX_IN_FLIGHT)]
    concurrency: usize,
}

#[derive(Args)]
struct ManifestArg {
    /// Manifest path (defaults next to the main output).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Write the parsed corpus as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Subcommand)]
enum TopicsCommand {
    /// Cluster topic words of summary reports into the base topic space.
    Build(TopicsBuildArgs),
    /// Add a later stage's topic words to the latest topic space.
    Advance(TopicsAdvanceArgs),
    /// Replace a topic's name and description after human review.
    Revise(TopicsReviseArgs),
}

#[derive(Args)]
struct YearRange {
    #[arg(long)]
    from_year: Option<i32>,
    #[arg(long)]
    to_year: Option<i32>,
}

#[derive(Args)]
struct TopicsBuildArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    years: YearRange,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct TopicsAdvanceArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    years: YearRange,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct TopicsReviseArgs {
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    id: u32,
    #[arg(long)]
    name: String,
    #[arg(long)]
    description: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    #[arg(long)]
    codebook: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Topic space file; its latest version replaces the codebook topics.
    #[arg(long)]
    topics: Option<PathBuf>,
    /// Example ids for data-scarce mode (default: every codebook example).
    #[arg(long, value_delimiter = ',')]
    examples: Vec<String>,
    /// Rules to close under: comma list, `all` or `none`.
    #[arg(long, default_value = "all")]
    rules: String,
    #[arg(long)]
    out: PathBuf,
    /// Full run record with raw model responses and per-paragraph errors.
    #[arg(long)]
    run_log: Option<PathBuf>,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Machine-readable report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct AuditArgs {
    annotations: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct ExportArgs {
    /// Annotation files (repeatable).
    #[arg(long = "annotations", required = true)]
    annotations: Vec<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_parser = parse_format)]
    format: ExportFormat,
    /// Topic space file whose latest version the dataset refers to.
    #[arg(long)]
    topics: Option<PathBuf>,
    #[arg(long)]
    include_out_of_space: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct StatsArgs {
    /// Dataset JSONL written by `export --format jsonl`.
    #[arg(long)]
    dataset: PathBuf,
    /// Report directory, needed for yearly report counts.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long = "framework", default_value = "UNFCCC")]
    frameworks: Vec<String>,
    #[arg(long)]
    by_year: bool,
    #[arg(long)]
    stated_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Gold annotation file.
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    codebook: PathBuf,
    /// Topic space whose latest version names the topics.
    #[arg(long)]
    topics: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ExportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rules(s: &str) -> anyhow::Result<RuleConfig> {
    match s.trim() {
        "all" => Ok(RuleConfig::all()),
        "none" => Ok(RuleConfig::none()),
        list => {
            let rules = list
                .split(',')
                .map(|r| r.trim().parse::<Rule>())
                .collect::<Result<Vec<_>, _>>()?;
            Ok(RuleConfig::with(rules))
        }
    }
}

fn manifest_path(arg: &ManifestArg, primary: Option<&Path>, command: &str) -> PathBuf {
    if let Some(p) = &arg.manifest {
        return p.clone();
    }
    match primary {
        Some(p) => {
            let mut name = p.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".manifest.json");
            p.with_file_name(name)
        }
        None => PathBuf::from(format!("quadnet-{command}.manifest.json")),
    }
}

fn load_corpus(args: &CorpusArgs) -> anyhow::Result<(Vec<Report>, Vec<String>)> {
    let opts = ParseOptions::with_patterns(&args.boilerplate)?;
    let (reports, warnings) = corpus::load_dir(&args.input, &opts)?;
    let allow: BTreeSet<String> = args.frameworks.iter().cloned().collect();
    Ok((corpus::filter_corpus(reports, &allow), warnings))
}

fn in_years(r: &Report, years: &YearRange) -> bool {
    years.from_year.is_none_or(|y| r.year() >= y) && years.to_year.is_none_or(|y| r.year() <= y)
}

struct Connected {
    gateway: Gateway,
    generation: GenerationConfig,
    describe: serde_json::Value,
}

fn connect(args: &BackendArgs, default_model: Option<&str>) -> anyhow::Result<Connected> {
    let mut generation = GenerationConfig::default();
    if let Some(m) = args.model_id.clone().or(default_model.map(str::to_string)) {
        generation.model_id = m;
    }
    generation.validate()?;
    if args.concurrency == 0 {
        return Err(Error::InvalidInput("--concurrency must be at least 1".into()).into());
    }
    let (gateway, describe) = match (&args.replay, &args.endpoint) {
        (Some(path), None) => {
            let store = ReplayStore::load(path)?;
            (
                Gateway::new(
                    quadnet_core::gateway::ReplayBackend::new(store),
                    args.concurrency,
                ),
                json!({"backend": "replay", "replay": path.display().to_string()}),
            )
        }
        (None, Some(url)) => {
            let config = HttpConfig {
                completion_url: url.clone(),
                embedding_url: args.embedding_endpoint.clone(),
                embedding_model: args.embedding_model.clone(),
                api_key_env: args.api_key_env.clone(),
            };
            let backend = HttpBackend::new(config)?;
            let describe = json!({"backend": "http", "endpoint": url, "embedding_endpoint": args.embedding_endpoint});
            let gateway = match &args.record {
                Some(path) => Gateway::new(Recorder::new(backend, path)?, args.concurrency),
                None => Gateway::new(backend, args.concurrency),
            };
            (gateway, describe)
        }
        _ => {
            return Err(
                Error::InvalidInput("give exactly one of --replay or --endpoint".into()).into(),
            );
        }
    };
    Ok(Connected {
        gateway,
        generation,
        describe,
    })
}

fn cmd_ingest(args: IngestArgs) -> anyhow::Result<()> {
    let (reports, warnings) = load_corpus(&args.corpus)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let stats = corpus::corpus_stats(&reports);
    say!("{}", serde_json::to_string_pretty(&stats)?);
    let mut m = Manifest::new(
        "ingest",
        json!({"frameworks": args.corpus.frameworks, "boilerplate": args.corpus.boilerplate}),
    );
    m.add_input(&args.corpus.input)?;
    if let Some(out) = &args.out {
        write_atomic(out, serde_json::to_string_pretty(&reports)?.as_bytes())?;
        m.add_output(out);
    }
    m.write(&manifest_path(
        &args.manifest,
        args.out.as_deref(),
        "ingest",
    ))?;
    Ok(())
}

fn summary_reports(corpus: &CorpusArgs, years: &YearRange) -> anyhow::Result<Vec<Report>> {
    let (reports, _) = load_corpus(corpus)?;
    let picked: Vec<Report> = reports
        .into_iter()
        .filter(|r| r.kind == ReportKind::Summary && in_years(r, years))
        .collect();
    if picked.is_empty() {
        return Err(Error::InvalidInput("no summary reports in the selected years".into()).into());
    }
    Ok(picked)
}

fn cmd_topics_build(args: TopicsBuildArgs) -> anyhow::Result<()> {
    let reports = summary_reports(&args.corpus, &args.years)?;
    let conn = connect(&args.backend, None)?;
    let prompts = TopicPrompts {
        generation: conn.generation.clone(),
    };
    let (words, errors) = topics::extract_topic_words(&reports, &conn.gateway, &prompts)?;
    for e in &errors {
        log::warn!("{e}");
    }
    let built = topics::build_base_space(&words, args.k, args.seed, &conn.gateway, &prompts)?;
    for w in &built.warnings {
        log::warn!("{w}");
    }
    let history = TopicHistory::new(built.value);
    write_atomic(&args.out, history.to_json().as_bytes())?;
    say!(
        "topic space v1: {} topics from {} words",
        history.latest().topics.len(),
        words.len()
    );
    let mut m = Manifest::new(
        "topics build",
        json!({"k": args.k, "seed": args.seed, "from_year": args.years.from_year, "to_year": args.years.to_year,
               "model_id": conn.generation.model_id, "backend": conn.describe}),
    );
    m.add_input(&args.corpus.input)?;
    if let Some(r) = &args.backend.replay {
        m.add_input(r)?;
    }
    m.add_output(&args.out);
    m.replay_fingerprints = conn.gateway.fingerprints();
    m.write(&manifest_path(
        &args.manifest,
        Some(&args.out),
        "topics-build",
    ))?;
    Ok(())
}

fn cmd_topics_advance(args: TopicsAdvanceArgs) -> anyhow::Result<()> {
    let mut history = TopicHistory::load(&args.topics)?;
    let reports = summary_reports(&args.corpus, &args.years)?;
    let conn = connect(&args.backend, None)?;
    let prompts = TopicPrompts {
        generation: conn.generation.clone(),
    };
    let outcome = topics::advance_stage(history.latest(), &reports, &conn.gateway, &prompts)?;
    for w in outcome.warnings.iter().chain(&outcome.errors) {
        log::warn!("{w}");
    }
    let version = outcome.space.version;
    history.push(outcome.space)?;
    write_atomic(&args.out, history.to_json().as_bytes())?;
    say!(
        "topic space v{version}: {} new topics, {} words absorbed",
        outcome.created.len(),
        outcome.absorbed.len()
    );
    let mut m = Manifest::new(
        "topics advance",
        json!({"from_year": args.years.from_year, "to_year": args.years.to_year,
               "model_id": conn.generation.model_id, "backend": conn.describe}),
    );
    m.add_input(&args.topics)?;
    m.add_input(&args.corpus.input)?;
    if let Some(r) = &args.backend.replay {
        m.add_input(r)?;
    }
    m.add_output(&args.out);
    m.replay_fingerprints = conn.gateway.fingerprints();
    m.write(&manifest_path(
        &args.manifest,
        Some(&args.out),
        "topics-advance",
    ))?;
    Ok(())
}

fn cmd_topics_revise(args: TopicsReviseArgs) -> anyhow::Result<()> {
    let mut history = TopicHistory::load(&args.topics)?;
    history.latest_mut().revise_topic(
        quadnet_core::TopicId(args.id),
        &args.name,
        &args.description,
    )?;
    write_atomic(&args.out, history.to_json().as_bytes())?;
    let mut m = Manifest::new(
        "topics revise",
        json!({"id": args.id, "name": args.name, "description": args.description}),
    );
    m.add_input(&args.topics)?;
    m.add_output(&args.out);
    m.write(&manifest_path(
        &args.manifest,
        Some(&args.out),
        "topics-revise",
    ))?;
    Ok(())
}

fn load_codebook(path: &Path, topics: Option<&Path>) -> anyhow::Result<(Codebook, Option<u32>)> {
    let mut codebook = Codebook::load(path)?;
    let mut version = None;
    if let Some(t) = topics {
        let history = TopicHistory::load(t)?;
        codebook.set_topics(history.latest().definitions())?;
        version = Some(history.latest().version);
    }
    Ok((codebook, version))
}

fn cmd_annotate(args: AnnotateArgs) -> anyhow::Result<()> {
    let rule_config = parse_rules(&args.rules)?;
    let (codebook, topic_version) = load_codebook(&args.codebook, args.topics.as_deref())?;
    if args.mode == Mode::DataRich && args.backend.model_id.is_none() {
        return Err(Error::InvalidInput(
            "data-rich mode needs --model-id naming the tuned model".into(),
        )
        .into());
    }
    let conn = connect(&args.backend, None)?;
    let config = match args.mode {
        Mode::DataRich => {
            if !args.examples.is_empty() {
                return Err(
                    Error::InvalidInput("data-rich mode takes no --examples".into()).into(),
                );
            }
            ModeConfig::data_rich(conn.generation.clone())
        }
        Mode::DataScarce => {
            let ids = if args.examples.is_empty() {
                codebook.examples.iter().map(|e| e.id.clone()).collect()
            } else {
                args.examples.clone()
            };
            ModeConfig::data_scarce(conn.generation.clone(), ids)
        }
    };
    config.validate(&codebook)?;
    let (reports, warnings) = load_corpus(&args.corpus)?;
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut digest_input =
        std::fs::read(&args.codebook).with_context(|| args.codebook.display().to_string())?;
    if let Some(t) = &args.topics {
        digest_input.extend(std::fs::read(t).with_context(|| t.display().to_string())?);
    }
    let run_id = pipeline::run_id(
        &reports,
        &manifest::sha256_hex(&digest_input),
        &config,
        &rule_config,
    );
    let run = pipeline::annotate_corpus(
        &reports,
        &codebook,
        &conn.gateway,
        &config,
        &rule_config,
        &run_id,
        args.backend.concurrency,
    )?;
    for p in &run.paragraphs {
        for e in &p.errors {
            log::warn!(
                "{}#{}: {e}",
                p.paragraph.report_id,
                p.paragraph.paragraph_index
            );
        }
    }
    let records = run.records();
    pipeline::write_annotation_file(&args.out, &records)?;
    if let Some(log_path) = &args.run_log {
        write_atomic(log_path, serde_json::to_string_pretty(&run)?.as_bytes())?;
    }
    say!(
        "{run_id}: {} paragraphs, {} interactions, {} paragraph errors",
        run.paragraphs.len(),
        records.len(),
        run.error_count()
    );

    let mut m = Manifest::new(
        "annotate",
        json!({
            "mode": args.mode.as_str(),
            "run_id": run_id,
            "generation": conn.generation,
            "example_ids": config.example_ids,
            "rules": rule_config.enabled.iter().map(|r| r.as_str()).collect::<Vec<_>>(),
            "max_rounds": rule_config.max_rounds,
            "frameworks": args.corpus.frameworks,
            "topic_space_version": topic_version,
            "concurrency": args.backend.concurrency,
            "backend": conn.describe,
        }),
    );
    m.add_input(&args.codebook)?;
    m.add_input(&args.corpus.input)?;
    if let Some(t) = &args.topics {
        m.add_input(t)?;
    }
    if let Some(r) = &args.backend.replay {
        m.add_input(r)?;
    }
    m.add_output(&args.out);
    if let Some(l) = &args.run_log {
        m.add_output(l);
    }
    m.replay_fingerprints = conn.gateway.fingerprints();
    m.write(&manifest_path(&args.manifest, Some(&args.out), "annotate"))?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let pred = pipeline::read_interactions(&args.pred)?;
    let gold = pipeline::read_interactions(&args.gold)?;
    let report = eval::evaluate(&pred, &gold);
    print!("{}", report.to_table());
    let mut m = Manifest::new("evaluate", json!({}));
    m.add_input(&args.pred)?;
    m.add_input(&args.gold)?;
    if let Some(out) = &args.out {
        write_atomic(out, serde_json::to_string_pretty(&report)?.as_bytes())?;
        m.add_output(out);
    }
    m.write(&manifest_path(
        &args.manifest,
        args.out.as_deref(),
        "evaluate",
    ))?;
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> anyhow::Result<()> {
    let items = pipeline::read_interactions(&args.annotations)?;
    let report = rules::audit_compliance(&items);
    for rule in Rule::ALL {
        let c = report.get(rule);
        say!(
            "{:<17} {:>6.2}%  ({} of {} obligated interactions present)",
            rule.as_str(),
            c.fraction() * 100.0,
            c.satisfied,
            c.obligated
        );
    }
    let mut m = Manifest::new("audit-rules", json!({}));
    m.add_input(&args.annotations)?;
    m.write(&manifest_path(&args.manifest, None, "audit-rules"))?;
    Ok(())
}

fn cmd_export(args: ExportArgs) -> anyhow::Result<()> {
    let mut records = Vec::new();
    for a in &args.annotations {
        records.extend(pipeline::read_annotation_file(a)?);
    }
    let (reports, _) = load_corpus(&args.corpus)?;
    let version = match &args.topics {
        Some(t) => Some(TopicHistory::load(t)?.latest().version),
        None => None,
    };
    let ds = LongitudinalDataset::compile(&records, &reports, version, args.include_out_of_space)?;
    ds.export(&args.out, args.format)?;
    say!("{} rows written to {}", ds.len(), args.out.display());
    let mut m = Manifest::new(
        "export",
        json!({"format": args.format, "include_out_of_space": args.include_out_of_space,
               "frameworks": args.corpus.frameworks, "topic_space_version": version}),
    );
    for a in &args.annotations {
        m.add_input(a)?;
    }
    m.add_input(&args.corpus.input)?;
    m.add_output(&args.out);
    m.write(&manifest_path(&args.manifest, Some(&args.out), "export"))?;
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> anyhow::Result<()> {
    let mut ds = LongitudinalDataset::load_jsonl(&args.dataset)?;
    if args.stated_only {
        ds = ds.stated_only();
    }
    let mut doc = json!({
        "interactions": ds.len(),
        "stated_only": args.stated_only,
        "activity_degrees": dataset::activity_degrees(&ds),
        "topic_distribution": dataset::topic_distribution(&ds),
    });
    let freq = dataset::relation_frequencies(&ds);
    if args.by_year {
        let Some(input) = &args.input else {
            return Err(
                Error::InvalidInput("--by-year needs --input for report counts".into()).into(),
            );
        };
        let corpus_args = CorpusArgs {
            input: input.clone(),
            frameworks: args.frameworks.clone(),
            boilerplate: Vec::new(),
        };
        let (reports, _) = load_corpus(&corpus_args)?;
        let daily: Vec<Report> = reports
            .into_iter()
            .filter(|r| r.kind == ReportKind::Daily)
            .collect();
        let yearly = dataset::yearly_distribution(&ds, &daily);
        doc["yearly_distribution"] = serde_json::to_value(&yearly)?;
        doc["relation_frequencies"] = serde_json::to_value(&freq)?;
        doc["topic_distribution_by_year"] =
            serde_json::to_value(dataset::topic_distribution_by_year(&ds))?;
    } else {
        let mut totals = std::collections::BTreeMap::new();
        for r in quadnet_core::RelationType::ALL {
            totals.insert(r.label(), freq.values().map(|m| m[&r]).sum::<usize>());
        }
        doc["relation_frequencies"] = serde_json::to_value(totals)?;
    }
    let text = serde_json::to_string_pretty(&doc)?;
    say!("{text}");
    let mut m = Manifest::new(
        "stats",
        json!({"by_year": args.by_year, "stated_only": args.stated_only}),
    );
    m.add_input(&args.dataset)?;
    if let Some(i) = &args.input {
        m.add_input(i)?;
    }
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
        m.add_output(out);
    }
    m.write(&manifest_path(&args.manifest, args.out.as_deref(), "stats"))?;
    Ok(())
}

fn cmd_prepare_finetune(args: FinetuneArgs) -> anyhow::Result<()> {
    let (codebook, _) = load_codebook(&args.codebook, args.topics.as_deref())?;
    let gold = pipeline::read_interactions(&args.train)?;
    let (reports, _) = load_corpus(&args.corpus)?;
    let pairs = finetune::prepare_pairs(&gold, &reports, &codebook)?;
    if pairs.is_empty() {
        bail!(
            "no instruction pairs could be built from {}",
            args.train.display()
        );
    }
    finetune::write_pairs(&args.out, &pairs)?;
    say!(
        "{} instruction pairs written to {}",
        pairs.len(),
        args.out.display()
    );
    let mut m = Manifest::new(
        "prepare-finetune",
        json!({"frameworks": args.corpus.frameworks}),
    );
    m.add_input(&args.train)?;
    m.add_input(&args.codebook)?;
    m.add_input(&args.corpus.input)?;
    if let Some(t) = &args.topics {
        m.add_input(t)?;
    }
    m.add_output(&args.out);
    m.write(&manifest_path(
        &args.manifest,
        Some(&args.out),
        "prepare-finetune",
    ))?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidInput(_)) | Some(Error::Validation(_)) | Some(Error::Ingest { .. }) => {
            (2, "usage")
        }
        Some(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
            (2, "usage")
        }
        Some(Error::ReplayMiss { .. }) => (1, "replay_miss"),
        Some(_) => (1, "runtime"),
        None if err.downcast_ref::<std::io::Error>().is_some() => (2, "usage"),
        None => (1, "runtime"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Topics(TopicsCommand::Build(a)) => cmd_topics_build(a),
        Command::Topics(TopicsCommand::Advance(a)) => cmd_topics_advance(a),
        Command::Topics(TopicsCommand::Revise(a)) => cmd_topics_revise(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::AuditRules(a) => cmd_audit(a),
        Command::Export(a) => cmd_export(a),
        Command::Stats(a) => cmd_stats(a),
        Command::PrepareFinetune(a) => cmd_prepare_finetune(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = exit_code(&err);
            let mut chain: Vec<String> = Vec::new();
            for cause in err.chain().map(|c| c.to_string()) {
                if !chain.last().is_some_and(|prev| prev.ends_with(&cause)) {
                    chain.push(cause);
                }
            }
            eprintln!(
                "{}",
                json!({"error": {"kind": kind, "message": chain.join(": ")}})
            );
            ExitCode::from(code)
        }
    }
}
