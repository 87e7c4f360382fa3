use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{NaiveDate, Utc};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use tracing_subscriber::EnvFilter;

use glucoach::analytics::{study_weekly_stats, user_stats, DateRange, Granularity, WindowMode};
use glucoach::config::Config;
use glucoach::evaluation::{run_corpus, EvaluationReport};
use glucoach::goals::GoalValidation;
use glucoach::service::app::{GoalsInput, RegisterRequest};
use glucoach::service::{
    device, http, replay, App, MemoryStore, ReplaySummary, SqliteStore, Storage,
};

#[derive(Parser)]
#[command(
    name = "glucoach",
    version,
    about = "Diabetes self-management engine and service"
)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// SQLite database; overrides `db_path` from the config. In-memory when neither is set.
    #[arg(long, global = true)]
    db: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API (and the glucometer listener when configured).
    Serve,
    /// Register users (and their goals) from a JSON fixtures file.
    Seed { fixtures: PathBuf },
    /// Ingest a `date,user,kind,field1,field2,field3` activity log.
    Replay { log: PathBuf },
    /// Score the engine against a JSON-lines scenario corpus.
    Evaluate {
        corpus: PathBuf,
        /// Where to write the machine-readable report.
        #[arg(long, default_value = "evaluation-report.json")]
        report: PathBuf,
    },
    /// Write the analytics CSV for every user.
    ExportAnalytics {
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        #[arg(long, default_value = "daily")]
        granularity: Granularity,
        /// Replay this log into the store first.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print weekly and per-user 21-day study statistics to stderr.
        #[arg(long)]
        study: bool,
    },
    /// Read glucometer lines from stdin for a user; replies go to stdout.
    Glucometer {
        #[arg(long)]
        user: String,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixtures {
    users: Vec<FixtureUser>,
}

#[derive(Deserialize)]
struct FixtureUser {
    #[serde(flatten)]
    register: RegisterRequest,
    #[serde(default)]
    goals: Option<GoalsInput>,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if cli.db.is_some() {
        config.db_path = cli.db.clone();
    }
    if let Command::Evaluate { corpus, report } = &cli.command {
        return evaluate(&config, corpus, report);
    }
    match config.db_path.clone() {
        Some(path) => {
            let store =
                SqliteStore::open(&path).with_context(|| format!("opening {}", path.display()))?;
            dispatch(App::new(store, &config)?, &config, cli.command).await
        }
        None => dispatch(App::new(MemoryStore::new(), &config)?, &config, cli.command).await,
    }
}

async fn dispatch<S: Storage + 'static>(
    app: App<S>,
    config: &Config,
    command: Command,
) -> Result<ExitCode> {
    match command {
        Command::Serve => serve(app, config).await,
        Command::Seed { fixtures } => seed(&app, &fixtures),
        Command::Replay { log } => {
            let summary = replay_file(&app, &log).await?;
            Ok(report_replay(&summary))
        }
        Command::ExportAnalytics {
            from,
            to,
            granularity,
            replay,
            out,
            study,
        } => {
            let mut code = ExitCode::SUCCESS;
            if let Some(log) = replay {
                code = report_replay(&replay_file(&app, &log).await?);
            }
            let range = DateRange::new(from, to);
            let csv = app.export(range, granularity)?;
            match out {
                Some(path) => std::fs::write(&path, &csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().write_all(csv.as_bytes())?,
            }
            if study {
                print_study(&app, range)?;
            }
            Ok(code)
        }
        Command::Glucometer { user } => {
            let profile = app
                .user_by_login(&user)?
                .with_context(|| format!("no user '{user}'"))?;
            let stdin = tokio::io::BufReader::new(tokio::io::stdin());
            let (acked, naked) =
                device::run_stream(&app, stdin, tokio::io::stdout(), Some(profile.user_id)).await?;
            eprintln!("{acked} accepted, {naked} refused");
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { .. } => unreachable!("handled before a store is opened"),
    }
}

async fn serve<S: Storage + 'static>(app: App<S>, config: &Config) -> Result<ExitCode> {
    if config.db_path.is_none() {
        tracing::warn!("no db_path configured; data lives in memory and is lost on exit");
    }
    let app = Arc::new(app);
    if let Some(addr) = config.glucometer_addr() {
        let app = Arc::clone(&app);
        tokio::spawn(async move {
            if let Err(e) = device::listen(app, addr).await {
                tracing::error!(error = %e, "glucometer listener stopped");
            }
        });
    }
    http::serve(app, config.http_addr()).await?;
    Ok(ExitCode::SUCCESS)
}

fn seed<S: Storage>(app: &App<S>, path: &Path) -> Result<ExitCode> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let fixtures: Fixtures =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let now = Utc::now();
    for user in &fixtures.users {
        let profile = app
            .register(&user.register, now)
            .with_context(|| format!("registering '{}'", user.register.nickname))?;
        if let Some(goals) = &user.goals {
            match app.put_goals(profile.user_id, goals, now.date_naive())? {
                GoalValidation::Accepted { .. } => {}
                GoalValidation::Corrected { reasons, .. } => {
                    bail!(
                        "goals for '{}' rejected: {}",
                        profile.nickname,
                        reasons.join("; ")
                    )
                }
            }
        }
        println!("{}\t{}", profile.user_id, profile.nickname);
    }
    Ok(ExitCode::SUCCESS)
}

async fn replay_file<S: Storage>(app: &App<S>, path: &Path) -> Result<ReplaySummary> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(replay(app, BufReader::new(file)).await?)
}

fn report_replay(summary: &ReplaySummary) -> ExitCode {
    for issue in &summary.issues {
        eprintln!("line {}: {}", issue.line, issue.message);
    }
    eprintln!(
        "replayed {} of {} rows, {} new users, {} issues",
        summary.applied,
        summary.rows,
        summary.users_created,
        summary.issues.len()
    );
    if summary.issues.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn evaluate(config: &Config, corpus: &Path, report_path: &Path) -> Result<ExitCode> {
    let engine = match &config.rules_path {
        Some(path) => glucoach::RuleTable::from_path(path)?,
        None => glucoach::RuleTable::bundled(),
    }
    .with_thresholds(config.thresholds);
    let report = run_corpus(&engine, corpus)?;
    print_report(&report);
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(report_path, json + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    eprintln!("report written to {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &EvaluationReport) {
    println!(
        "{:<8} {:>5}  {:<24} {:<16} note",
        "scenario", "score", "action", "band"
    );
    for s in &report.scores {
        println!(
            "{:<8} {:>5}  {:<24} {:<16} {}",
            s.scenario_id,
            s.score.value(),
            s.engine_action.as_str(),
            s.engine_band.as_str(),
            s.note
        );
    }
    for s in &report.skipped {
        println!(
            "{:<8} {:>5}  skipped (line {}): {}",
            s.id, "-", s.line, s.reason
        );
    }
    println!(
        "\n{} scenarios: proficiency {:.1}%, efficiency {:.1}%",
        report.scores.len(),
        report.proficiency_pct,
        report.efficiency_pct
    );
}

fn print_study<S: Storage>(app: &App<S>, range: DateRange) -> Result<()> {
    let histories = app.histories()?;
    let weeks = (range.len_days() / 7).max(1) as u32;
    eprintln!(
        "week  start       {:>18}  {:>18}  {:>18}  {:>18}",
        "bg_before", "bg_after", "points", "exercise_min"
    );
    for w in study_weekly_stats(&histories, range.start, weeks) {
        eprintln!(
            "{:<5} {}  {:>18}  {:>18}  {:>18}  {:>18}",
            w.week_index,
            w.start,
            w.avg_bg_before.to_string(),
            w.avg_bg_after.to_string(),
            w.avg_reward_points.to_string(),
            w.avg_exercise_min.to_string()
        );
    }
    eprintln!(
        "\nuser  {:>18}  {:>18}  {:>18}  {:>18}   (21-day, paper-literal)",
        "bg_before", "bg_after", "points", "exercise_min"
    );
    for h in &histories {
        let s = user_stats(h, range.start, WindowMode::PaperLiteral);
        eprintln!(
            "{:<5} {:>18}  {:>18}  {:>18}  {:>18}",
            s.user_id,
            s.avg_bg_before.to_string(),
            s.avg_bg_after.to_string(),
            s.avg_reward_points.to_string(),
            s.avg_exercise_min.to_string()
        );
    }
    Ok(())
}
