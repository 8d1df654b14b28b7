mod config;

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use chatcondense_core::backend::{CompletionBackend, GenerationParams};
use chatcondense_core::client::{ChatClient, ClientConfig};
use chatcondense_core::condenser::{CondenserParams, ExemplarSet, MockCondenserBackend};
use chatcondense_core::decider::TauScope;
use chatcondense_core::harness::{
    self, compare_runs, decider_sweep, emit_curve, emit_report, load_report, load_transcripts,
    run_transcripts, write_transcripts, ChatModel, LiveChatModel, MockChatModel, ReportFormat,
    RunContext, RunOptions, RunReport, Strategy, StrategyKind, Transcript, TtftModel,
};
use chatcondense_core::perturb::{
    default_diversion_params, perturb_transcripts, MockDiversionBackend, PerturbKind, PerturbSpec,
};
use chatcondense_core::session::WindowConfig;

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "chatcondense",
    version,
    about = "Replay chat transcripts under condensed-history strategies"
)]
struct Cli {
    /// TOML or JSON file mirroring the flags; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay transcripts under one strategy and write reports.
    Run(RunArgs),
    /// Write a perturbed copy of a transcript file plus an audit manifest.
    Perturb(PerturbArgs),
    /// Replay under a grid of decider thresholds.
    Sweep(SweepArgs),
    /// Compare two run reports.
    Report(ReportArgs),
    /// Generate synthetic transcripts.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Baseline,
    Mtosc,
    Fifo,
    Summ,
}

impl StrategyArg {
    fn kind(self) -> StrategyKind {
        match self {
            StrategyArg::Baseline => StrategyKind::MtBaseline,
            StrategyArg::Mtosc => StrategyKind::MtOsc,
            StrategyArg::Fifo => StrategyKind::Fifo,
            StrategyArg::Summ => StrategyKind::MtOscSummarizer,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, true).map_err(|e| anyhow::anyhow!("strategy {s:?}: {e}"))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Window,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Ri,
    Fi,
    Cd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args, Default)]
struct WindowArgs {
    /// Entries condensed per operation.
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    /// Turns between trigger and integration.
    #[arg(long)]
    delay: Option<usize>,
    #[arg(long)]
    no_decider: bool,
    /// Count user tokens over the window or the whole history.
    #[arg(long, value_enum)]
    tau_scope: Option<ScopeArg>,
}

#[derive(Args)]
struct BackendArgs {
    /// Deterministic local models (the default).
    #[arg(long, conflicts_with = "live")]
    mock: bool,
    /// OpenAI-compatible endpoint; needs CHATCONDENSE_API_KEY or OPENAI_API_KEY.
    #[arg(long)]
    live: bool,
    #[arg(long)]
    base_url: Option<String>,
    /// Chat model id for live replay.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    condenser_model: Option<String>,
    /// Provider profile file (TOML or JSON).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Few-shot exemplar file replacing the bundled set.
    #[arg(long)]
    exemplars: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    fifo_limit: Option<usize>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Output directory for report.json, turns.csv and curve.csv.
    #[arg(long)]
    out: PathBuf,
    /// Baseline report.json to compute the reduction against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Skip malformed transcript lines instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long, alias = "transcripts")]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Fraction of turns to perturb.
    #[arg(long)]
    ratio: Option<f64>,
    /// Exact number of insertions; overrides --ratio.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Generate diversions with a live model instead of the mock.
    #[arg(long)]
    live: bool,
    #[arg(long)]
    diversion_model: Option<String>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Output directory for sweep.json and sweep.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Baseline and candidate report.json files.
    #[arg(long, num_args = 2, value_names = ["BASELINE", "CANDIDATE"])]
    compare: Vec<PathBuf>,
    /// Write the comparison here instead of only printing a summary.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    turns: usize,
    #[arg(long, default_value_t = 50)]
    user_tokens: usize,
    /// Vary user-turn sizes per transcript (sweep suite), seeded.
    #[arg(long)]
    varied: Option<u64>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Run(a) => cmd_run(a, &file),
        Command::Perturb(a) => cmd_perturb(a, &file),
        Command::Sweep(a) => cmd_sweep(a, &file),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn window_config(args: &WindowArgs, file: &FileConfig) -> WindowConfig {
    let d = WindowConfig::default();
    WindowConfig {
        w: args.w.or(file.w).unwrap_or(d.w),
        gamma: args.gamma.or(file.gamma).unwrap_or(d.gamma),
        tau: args.tau.or(file.tau).unwrap_or(d.tau),
        integration_delay_turns: args
            .delay
            .or(file.integration_delay_turns)
            .unwrap_or(d.integration_delay_turns),
        decider_enabled: !args.no_decider && file.decider_enabled.unwrap_or(d.decider_enabled),
        tau_scope: match args.tau_scope {
            Some(ScopeArg::Window) => TauScope::Window,
            Some(ScopeArg::Full) => TauScope::FullHistory,
            None => file.tau_scope.unwrap_or(d.tau_scope),
        },
        overlap_mode: d.overlap_mode,
    }
}

fn strategy(
    flag: Option<StrategyArg>,
    window: &WindowArgs,
    fifo_limit: Option<usize>,
    file: &FileConfig,
    fallback: StrategyArg,
) -> Result<Strategy> {
    let arg = match (flag, &file.strategy) {
        (Some(s), _) => s,
        (None, Some(s)) => StrategyArg::parse(s)?,
        (None, None) => fallback,
    };
    let s = Strategy {
        kind: arg.kind(),
        window_config: window_config(window, file),
        fifo_limit: fifo_limit.or(file.fifo_limit).unwrap_or(4),
    };
    s.validate()?;
    Ok(s)
}

fn read_transcripts(path: &Path, lenient: bool) -> Result<Vec<Transcript>> {
    let set =
        load_transcripts(path, lenient).with_context(|| format!("loading {}", path.display()))?;
    for s in &set.skipped {
        eprintln!("skipped line {}: {}", s.line, s.message);
    }
    Ok(set.transcripts)
}

fn live_client(
    base_url: Option<&str>,
    profile: Option<&Path>,
    file: &FileConfig,
) -> Result<ChatClient> {
    let Some(mut cfg) = ClientConfig::from_env() else {
        bail!("live mode needs CHATCONDENSE_API_KEY (or OPENAI_API_KEY)");
    };
    if let Some(url) = base_url {
        cfg.base_url = url.to_string();
    }
    cfg.profile = file.provider_profile(profile)?;
    if let Some(t) = file.timeout_secs {
        cfg.timeout = Duration::from_secs(t);
    }
    if let Some(r) = file.max_retries {
        cfg.max_retries = r;
    }
    Ok(ChatClient::new(cfg)?)
}

/// Chat model, condenser backend and condenser settings for a run.
struct Models {
    chat: Box<dyn ChatModel>,
    condenser: Box<dyn CompletionBackend>,
    params: CondenserParams,
    exemplars: ExemplarSet,
    ttft: TtftModel,
}

impl Models {
    fn build(args: &BackendArgs, file: &FileConfig) -> Result<Self> {
        let live = args.live || (!args.mock && file.live.unwrap_or(false));
        let mut params = CondenserParams::default();
        if let Some(m) = args
            .condenser_model
            .clone()
            .or(file.condenser_model.clone())
        {
            params.model_id = m;
        }
        let exemplars = match args.exemplars.as_ref().or(file.exemplars.as_ref()) {
            Some(p) => ExemplarSet::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExemplarSet::default(),
        };
        let (chat, condenser): (Box<dyn ChatModel>, Box<dyn CompletionBackend>) = if live {
            let base_url = args.base_url.as_deref().or(file.base_url.as_deref());
            let chat_params = GenerationParams {
                model_id: args
                    .model
                    .clone()
                    .or(file.model.clone())
                    .unwrap_or_else(|| params.model_id.clone()),
                temperature: 0.01,
                top_p: 1.0,
                frequency_penalty: None,
                max_tokens: 4096,
            };
            (
                Box::new(LiveChatModel::new(
                    live_client(base_url, args.profile.as_deref(), file)?,
                    chat_params,
                )),
                Box::new(live_client(base_url, args.profile.as_deref(), file)?),
            )
        } else {
            let d = MockChatModel::default();
            (
                Box::new(MockChatModel {
                    reply_tokens: file.mock_reply_tokens.unwrap_or(d.reply_tokens),
                    vocab: file.mock_vocab.unwrap_or(d.vocab),
                    vocab_spread: file.mock_vocab_spread.unwrap_or(0),
                }),
                Box::new(MockCondenserBackend::fixed(
                    file.mock_condensed_user_tokens.unwrap_or(20),
                    file.mock_condensed_assistant_tokens.unwrap_or(60),
                )),
            )
        };
        let ttft = file.ttft.unwrap_or_default();
        if !ttft.is_valid() {
            bail!("ttft.seconds_per_token must be positive");
        }
        Ok(Self {
            chat,
            condenser,
            params,
            exemplars,
            ttft,
        })
    }

    fn context(&self) -> RunContext<'_> {
        let mut ctx = RunContext::new(self.chat.as_ref(), self.condenser.as_ref());
        ctx.condenser_params = &self.params;
        ctx.exemplars = &self.exemplars;
        ctx.ttft = self.ttft;
        ctx
    }
}

fn print_summary(report: &RunReport) {
    let a = &report.aggregates;
    println!("strategy            {}", report.strategy.kind.label());
    println!(
        "sessions            {} ({} aborted, {} withheld)",
        a.sessions, a.aborted_session_count, a.withheld_session_count
    );
    println!("turns               {}", a.turns);
    println!("avg history tokens  {:.1}", a.avg_history_tokens);
    println!("history tokens      {}", a.total_history_tokens);
    println!("with background     {}", a.total_tokens_with_background);
    println!("mean est. ttft (s)  {:.3}", a.mean_ttft_seconds);
    if let Some(r) = a.reduction_vs_baseline_percent {
        println!("reduction vs base   {r:.1}%");
    }
    if let Some(acc) = a.exact_match_accuracy {
        println!("exact match         {:.1}%", 100.0 * acc);
    }
}

fn cmd_run(args: RunArgs, file: &FileConfig) -> Result<()> {
    let strategy = strategy(
        args.strategy,
        &args.window,
        args.fifo_limit,
        file,
        StrategyArg::Mtosc,
    )?;
    let transcripts = read_transcripts(
        &args.transcripts,
        args.lenient || file.lenient.unwrap_or(false),
    )?;
    let models = Models::build(&args.backend, file)?;
    let options = RunOptions {
        concurrency: args.concurrency.or(file.concurrency).unwrap_or(0),
        repeats: args.repeats.or(file.repeats).unwrap_or(1),
    };
    let mut report = run_transcripts(&transcripts, &strategy, &models.context(), options)?;
    if let Some(path) = &args.baseline {
        let baseline = load_report(path).with_context(|| format!("loading {}", path.display()))?;
        report.attach_baseline(&baseline)?;
    }
    std::fs::create_dir_all(&args.out)?;
    emit_report(&report, ReportFormat::Json, args.out.join("report.json"))?;
    emit_report(&report, ReportFormat::Csv, args.out.join("turns.csv"))?;
    emit_curve(&report, args.out.join("curve.csv"))?;
    print_summary(&report);
    Ok(())
}

fn cmd_perturb(args: PerturbArgs, file: &FileConfig) -> Result<()> {
    let kind = match args.kind {
        KindArg::Ri => PerturbKind::RepetitionInfusion,
        KindArg::Fi => PerturbKind::FillerInjection,
        KindArg::Cd => PerturbKind::ContextualDiversion,
    };
    let mut spec = PerturbSpec::new(kind, args.seed.or(file.seed).unwrap_or(0));
    if let Some(r) = args.ratio.or(file.ratio) {
        spec.ratio = r;
    }
    spec.n_override = args.n.or(file.n);
    if kind == PerturbKind::ContextualDiversion {
        let mut p = default_diversion_params();
        if let Some(m) = args.diversion_model.or(file.diversion_model.clone()) {
            p.model_id = m;
        }
        spec.diversion_params = Some(p);
    }
    let transcripts = read_transcripts(&args.input, args.lenient)?;
    let live_generator;
    let generator: &dyn CompletionBackend = if args.live {
        live_generator = live_client(file.base_url.as_deref(), None, file)?;
        &live_generator
    } else {
        &MockDiversionBackend
    };
    let (out, manifest) = perturb_transcripts(&transcripts, &spec, Some(generator))?;
    write_transcripts(&args.output, &out)?;
    let manifest_path = manifest_path(&args.output);
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    let inserted: usize = manifest.entries.iter().map(|e| e.inserted_at.len()).sum();
    println!(
        "wrote {} transcripts ({inserted} inserted turns) to {}; manifest {}",
        out.len(),
        args.output.display(),
        manifest_path.display()
    );
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn cmd_sweep(args: SweepArgs, file: &FileConfig) -> Result<()> {
    let base = strategy(args.strategy, &args.window, None, file, StrategyArg::Mtosc)?;
    let gammas = args
        .gammas
        .or(file.gammas.clone())
        .unwrap_or_else(|| harness::DEFAULT_GAMMAS.to_vec());
    let taus = args
        .taus
        .or(file.taus.clone())
        .unwrap_or_else(|| harness::DEFAULT_TAUS.to_vec());
    let transcripts = read_transcripts(
        &args.transcripts,
        args.lenient || file.lenient.unwrap_or(false),
    )?;
    let models = Models::build(&args.backend, file)?;
    let report = decider_sweep(&transcripts, &gammas, &taus, &base, &models.context())?;
    std::fs::create_dir_all(&args.out)?;
    report.emit(ReportFormat::Json, args.out.join("sweep.json"))?;
    report.emit(ReportFormat::Csv, args.out.join("sweep.csv"))?;
    println!("gamma   tau  condensed  withheld  untriggered");
    for c in &report.cells {
        println!(
            "{:5.2} {:5} {:10} {:9} {:12}",
            c.gamma, c.tau, c.condensed_sessions, c.withheld_sessions, c.untriggered_sessions
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let [a, b] = args.compare.as_slice() else {
        bail!("--compare takes a baseline and a candidate report");
    };
    let load = |p: &PathBuf| load_report(p).with_context(|| format!("loading {}", p.display()));
    let c = compare_runs(&load(a)?, &load(b)?)?;
    println!("{} -> {}", c.baseline_strategy, c.candidate_strategy);
    println!(
        "history tokens      {:.0} -> {:.0} ({:.1}% reduction)",
        c.baseline_total_history_tokens, c.candidate_total_history_tokens, c.reduction_percent
    );
    println!(
        "with background     {:.0} -> {:.0} ({:.1}% reduction)",
        c.baseline_total_with_background,
        c.candidate_total_with_background,
        c.reduction_with_background_percent
    );
    println!(
        "final turn          {:.1}% reduction",
        c.final_turn_reduction_percent
    );
    if let Some(d) = c.accuracy_delta {
        println!("exact match delta   {:+.1} points", 100.0 * d);
    }
    if let Some(out) = &args.out {
        let format = match args.format {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        };
        c.emit(format, out)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let ts: Vec<Transcript> = match args.varied {
        Some(seed) => harness::synthetic::sweep_suite(args.n, seed),
        None => (0..args.n)
            .map(|i| {
                harness::synthetic::synthetic_transcript(
                    format!("synth-{i}"),
                    args.turns,
                    args.user_tokens,
                )
            })
            .collect(),
    };
    write_transcripts(&args.out, &ts)?;
    println!("wrote {} transcripts to {}", ts.len(), args.out.display());
    Ok(())
}
