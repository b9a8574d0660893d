//! Command-line interface. Exit codes: 0 success, 1 configuration error,
//! 2 backend error.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roleplay_core::arena::{
    aggregate_scores, parse_ledger, render_elo_table, render_score_table, update, BattleResult,
    Criterion, EloConfig, EloTable,
};
use roleplay_core::filter::error_report;
use roleplay_core::pipeline::PipelineError;
use roleplay_core::prompt::TaskId;
use roleplay_core::selfchat::{
    build_arena_pairs, parse_persona_file, run_selfchat, BattleQuota, OpenerPolicy, SelfChatJob,
    Setup,
};
use roleplay_core::stats::{
    plot_csv, stats_report, Grouping, Normalizer, PluginNormalizer, SurfaceLower,
};
use roleplay_core::store::{
    load_corpus_path, Conversation, ConversationStore, ImportMode, LogicalClock, SessionConfig,
    SystemClock,
};

use crate::app::{battle_config, default_grouping, router, score_criteria, AppState};
use crate::config::{Runtime, ServiceConfig};

#[derive(Debug, Parser)]
#[command(
    name = "roleplay",
    version,
    about = "Role-play prompting dialogue engine"
)]
pub struct Cli {
    /// Service configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve,
    /// Line-oriented terminal chat with one agent.
    Chat(ChatArgs),
    /// Generate conversations between two setups.
    Selfchat(SelfchatArgs),
    #[command(subcommand)]
    Arena(ArenaCommand),
    /// Vocabulary and message-length statistics of a corpus.
    Stats(StatsArgs),
    /// Filter error rates of a corpus.
    FilterAudit(CorpusArgs),
    /// Render a report from the configured corpus and ledger.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Session config file (JSON or TOML); overrides the flags below.
    #[arg(long)]
    pub session: Option<PathBuf>,
    #[arg(long, default_value = "persona_advanced")]
    pub task: String,
    /// Persona file; one block is drawn with --seed.
    #[arg(long)]
    pub persona_file: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<String>,
    /// Backend id; defaults to the first configured backend.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, default_value = "fr")]
    pub language: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelfchatArgs {
    /// Setup file (TOML or JSON) with `id` and a `config` table.
    #[arg(long)]
    pub setup_a: PathBuf,
    #[arg(long)]
    pub setup_b: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub persona_file: Option<PathBuf>,
    /// Side A opens with this text instead of a generated greeting.
    #[arg(long)]
    pub fixed_opener: Option<String>,
    /// Output corpus directory; defaults to the configured one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ArenaCommand {
    /// Replay a battle ledger into Elo ratings.
    Replay {
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Corpus used to find INT battles (achievement criterion).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// List the battle pairs for a corpus.
    Pairs {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        min: usize,
        #[arg(long, default_value_t = 14)]
        max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus file or directory; defaults to the configured one.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// persona or int; inferred from the corpus when absent.
    #[arg(long)]
    pub group: Option<String>,
    /// surface or plugin.
    #[arg(long, default_value = "surface")]
    pub normalizer: String,
    /// Lemmatizer program and arguments, for --normalizer plugin.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    pub plugin_cmd: Vec<String>,
    /// Writes per-message word counts as CSV.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// elo, scores, stats or errors.
    pub kind: String,
    #[arg(long)]
    pub group: Option<String>,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Backend(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Backend(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Backend(m) => m,
        }
    }
}

fn cfg_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

pub fn main_with(cli: Cli) -> ExitCode {
    match run(
        cli,
        &mut std::io::stdin().lock(),
        &mut std::io::stdout().lock(),
    ) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, Failure> {
    let path =
        path.ok_or_else(|| Failure::Config("--config is required for this command".into()))?;
    ServiceConfig::load(path).map_err(cfg_err)
}

pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), Failure> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Serve => serve(load_config(config)?),
        Command::Chat(a) => chat(load_config(config)?, a, input, out),
        Command::Selfchat(a) => selfchat(load_config(config)?, a, out),
        Command::Arena(a) => arena(config, a, out),
        Command::Stats(a) => stats(config, a, out),
        Command::FilterAudit(a) => filter_audit(config, a, out),
        Command::Report(a) => report(load_config(config)?, a, out),
    }
}

fn write(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(cfg_err)
}

fn serve(config: ServiceConfig) -> Result<(), Failure> {
    let listen = config.listen.clone();
    let rt = Arc::new(Runtime::open(config).map_err(cfg_err)?);
    let state = Arc::new(AppState::new(rt).map_err(Failure::Config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(cfg_err)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(cfg_err)?;
        log::info!("listening on {listen}");
        axum::serve(listener, router(state)).await.map_err(cfg_err)
    })
}

/// Reads a file as JSON when it ends in `.json`, TOML otherwise.
fn read_structured<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let src =
        std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&src).map_err(|e| e.to_string())
    } else {
        toml::from_str(&src).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| cfg_err(format!("{}: {e}", path.display())))
}

fn read_personas(path: &Path) -> Result<Vec<Vec<String>>, Failure> {
    let src =
        std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let pool = parse_persona_file(&src);
    if pool.is_empty() {
        return Err(cfg_err(format!("{}: no persona block", path.display())));
    }
    Ok(pool)
}

fn chat_config(config: &ServiceConfig, a: &ChatArgs) -> Result<SessionConfig, Failure> {
    if let Some(p) = &a.session {
        return read_structured(p);
    }
    let task: TaskId = a.task.parse().map_err(cfg_err)?;
    let backend = match &a.backend {
        Some(b) => b.clone(),
        None => config.backends.keys().next().cloned().unwrap_or_default(),
    };
    let mut s = SessionConfig {
        task,
        persona: None,
        image_description: a.image.clone(),
        backend_id: backend,
        target_language: a.language.clone(),
        decoding: Default::default(),
        demonstrations: Vec::new(),
    };
    if task.is_persona_family() {
        let pool = match &a.persona_file {
            Some(p) => read_personas(p)?,
            None => return Err(cfg_err("--persona-file is required for persona tasks")),
        };
        let i = ChaCha8Rng::seed_from_u64(a.seed).gen_range(0..pool.len());
        s.persona = Some(pool[i].clone());
    }
    Ok(s)
}

fn chat(
    config: ServiceConfig,
    a: ChatArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let session = chat_config(&config, &a)?;
    let rt = Runtime::open(config).map_err(cfg_err)?;
    if !rt.pipeline.gateway.contains(&session.backend_id) {
        return Err(cfg_err(format!("unknown backend `{}`", session.backend_id)));
    }
    let id = rt.store.create_session(session).map_err(cfg_err)?;
    write(out, &format!("session {id}\n"))?;
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(cfg_err)? == 0 {
            break;
        }
        let text = line.trim();
        if text == "/quit" {
            break;
        }
        if text.is_empty() {
            continue;
        }
        match rt.pipeline.user_turn(&rt.store, &id, text) {
            Ok(t) => {
                let o = &t.reply.outcome;
                write(out, &format!("agent: {}\n", o.final_text))?;
                if !o.detected.is_empty() {
                    let flags: Vec<&str> = o.detected.iter().map(|r| r.as_str()).collect();
                    log::info!("filter flags: {}", flags.join(", "));
                }
            }
            Err(e @ PipelineError::Backend(_)) => return Err(Failure::Backend(e.to_string())),
            Err(e) => return Err(cfg_err(e)),
        }
    }
    Ok(())
}

fn selfchat(config: ServiceConfig, a: SelfchatArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let setup_a: Setup = read_structured(&a.setup_a)?;
    let setup_b: Setup = read_structured(&a.setup_b)?;
    let pipeline = config.build_pipeline().map_err(cfg_err)?;
    let mut job = SelfChatJob::new(setup_a, setup_b, a.count);
    job.n_rounds = a.rounds;
    job.seed = a.seed;
    if let Some(p) = &a.persona_file {
        job.personas = Some(read_personas(p)?);
    }
    if let Some(t) = a.fixed_opener {
        job.opener = OpenerPolicy::Fixed(t);
    }
    for s in [&job.setup_a, &job.setup_b] {
        if !pipeline.gateway.contains(&s.config.backend_id) {
            return Err(cfg_err(format!(
                "setup `{}`: unknown backend `{}`",
                s.id, s.config.backend_id
            )));
        }
    }
    let clock = LogicalClock::new();
    let convs = run_selfchat(&pipeline, &job, &clock).map_err(cfg_err)?;
    let dir = a.out.unwrap_or_else(|| config.resolve(&config.corpus_dir));
    let store = ConversationStore::open(&dir, Arc::new(SystemClock)).map_err(cfg_err)?;
    let valid = convs.iter().filter(|c| c.valid).count();
    for c in convs {
        store.insert(c).map_err(cfg_err)?;
    }
    write(
        out,
        &format!(
            "{valid}/{} valid conversations written to {}\n",
            a.count,
            dir.display()
        ),
    )?;
    if a.count > 0 && valid == 0 {
        return Err(Failure::Backend("every conversation failed".into()));
    }
    Ok(())
}

fn corpus_path(config: Option<&Path>, given: Option<PathBuf>) -> Result<PathBuf, Failure> {
    match given {
        Some(p) => Ok(p),
        None => {
            let c = load_config(config)?;
            Ok(c.resolve(&c.corpus_dir))
        }
    }
}

fn load_corpus(path: &Path) -> Result<Vec<Conversation>, Failure> {
    if !path.exists() {
        return Err(cfg_err(format!("{}: no such corpus", path.display())));
    }
    Ok(load_corpus_path(path, ImportMode::Strict)
        .map_err(cfg_err)?
        .conversations)
}

/// Elo table over `battles`, with INT battles also rated on achievement.
pub fn replay_ledger(
    battles: &[BattleResult],
    corpus: &[Conversation],
    base: &EloConfig,
) -> Result<EloTable, String> {
    let mut order: Vec<&BattleResult> = battles.iter().collect();
    order.sort_by_key(|b| b.timestamp);
    let mut table = EloTable::default();
    for b in order {
        let task = corpus
            .iter()
            .find(|c| c.session_id == b.conversation_a)
            .map(Conversation::task)
            .or_else(|| {
                b.verdicts
                    .contains_key(&Criterion::Achievement)
                    .then_some(TaskId::Int)
            });
        update(&mut table, b, &battle_config(base, task)).map_err(|e| e.to_string())?;
    }
    Ok(table)
}

fn elo_text(table: &EloTable, base: &EloConfig) -> String {
    let mut criteria = base.criteria.clone();
    if table.ratings.contains_key(&Criterion::Achievement) {
        criteria.push(Criterion::Achievement);
    }
    render_elo_table(table, &criteria)
}

fn arena(config: Option<&Path>, a: ArenaCommand, out: &mut dyn Write) -> Result<(), Failure> {
    match a {
        ArenaCommand::Replay { ledger, corpus } => {
            let (ledger, base, corpus) = match (ledger, config) {
                (Some(l), _) => {
                    let base = match config {
                        Some(c) => load_config(Some(c))?.elo,
                        None => EloConfig::default(),
                    };
                    (l, base, corpus)
                }
                (None, Some(_)) => {
                    let c = load_config(config)?;
                    let corpus = corpus.or_else(|| Some(c.resolve(&c.corpus_dir)));
                    (c.resolve(&c.ledger), c.elo, corpus)
                }
                (None, None) => return Err(cfg_err("--ledger or --config is required")),
            };
            let src = std::fs::read_to_string(&ledger)
                .map_err(|e| cfg_err(format!("{}: {e}", ledger.display())))?;
            let battles = parse_ledger(&src)
                .map_err(|(line, m)| cfg_err(format!("{}:{line}: {m}", ledger.display())))?;
            let corpus = match corpus {
                Some(p) if p.exists() => load_corpus(&p)?,
                _ => Vec::new(),
            };
            let table = replay_ledger(&battles, &corpus, &base).map_err(Failure::Config)?;
            write(out, &elo_text(&table, &base))
        }
        ArenaCommand::Pairs {
            corpus,
            min,
            max,
            seed,
        } => {
            let corpus = load_corpus(&corpus_path(config, corpus)?)?;
            let selfchats: Vec<Conversation> =
                corpus.into_iter().filter(|c| c.partner.is_some()).collect();
            let pairs =
                build_arena_pairs(&selfchats, BattleQuota { min, max }, seed).map_err(cfg_err)?;
            for p in pairs {
                write(
                    out,
                    &format!("{}\t{}\n", p.conversation_a, p.conversation_b),
                )?;
            }
            Ok(())
        }
    }
}

fn normalizer(mode: &str, cmd: &[String]) -> Result<Box<dyn Normalizer>, Failure> {
    match mode {
        "surface" => Ok(Box::new(SurfaceLower)),
        "plugin" => {
            let (prog, args) = cmd
                .split_first()
                .ok_or_else(|| cfg_err("--plugin-cmd is required with --normalizer plugin"))?;
            Ok(Box::new(
                PluginNormalizer::spawn(prog, args).map_err(cfg_err)?,
            ))
        }
        other => Err(cfg_err(format!(
            "unknown normalizer `{other}`, expected surface or plugin"
        ))),
    }
}

fn grouping(given: Option<&str>, corpus: &[Conversation]) -> Result<Grouping, Failure> {
    match given {
        Some(g) => g.parse().map_err(cfg_err),
        None => Ok(default_grouping(corpus)),
    }
}

fn stats(config: Option<&Path>, a: StatsArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let corpus = load_corpus(&corpus_path(config, a.corpus)?)?;
    let g = grouping(a.group.as_deref(), &corpus)?;
    let n = normalizer(&a.normalizer, &a.plugin_cmd)?;
    let report = stats_report(&corpus, g, n.as_ref()).map_err(cfg_err)?;
    if let Some(p) = &a.plot {
        std::fs::write(p, plot_csv(&corpus))
            .map_err(|e| cfg_err(format!("{}: {e}", p.display())))?;
    }
    if a.json {
        write(
            out,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&report).map_err(cfg_err)?
            ),
        )
    } else {
        write(out, &report.render_text())
    }
}

fn filter_audit(config: Option<&Path>, a: CorpusArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let corpus = load_corpus(&corpus_path(config, a.corpus)?)?;
    let report = error_report(&corpus).map_err(cfg_err)?;
    if a.json {
        write(
            out,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&report.to_json()).map_err(cfg_err)?
            ),
        )
    } else {
        write(out, &report.render_text())
    }
}

fn report(config: ServiceConfig, a: ReportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let corpus_dir = config.resolve(&config.corpus_dir);
    let corpus = if corpus_dir.exists() {
        load_corpus(&corpus_dir)?
    } else {
        Vec::new()
    };
    match a.kind.as_str() {
        "elo" => {
            let path = config.resolve(&config.ledger);
            let src = std::fs::read_to_string(&path)
                .map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
            let battles = parse_ledger(&src)
                .map_err(|(line, m)| cfg_err(format!("{}:{line}: {m}", path.display())))?;
            let table = replay_ledger(&battles, &corpus, &config.elo).map_err(Failure::Config)?;
            write(out, &elo_text(&table, &config.elo))
        }
        "scores" => write(
            out,
            &render_score_table(&aggregate_scores(&corpus), &score_criteria(&corpus)),
        ),
        "stats" => {
            let g = grouping(a.group.as_deref(), &corpus)?;
            let n = config.normalizer().map_err(cfg_err)?;
            write(
                out,
                &stats_report(&corpus, g, n.as_ref())
                    .map_err(cfg_err)?
                    .render_text(),
            )
        }
        "errors" => write(out, &error_report(&corpus).map_err(cfg_err)?.render_text()),
        other => Err(cfg_err(format!(
            "unknown report `{other}`, expected elo, scores, stats or errors"
        ))),
    }
}
