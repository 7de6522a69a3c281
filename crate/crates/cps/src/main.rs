use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use cps::cmdfile;
use cps::daemon::{self, ServeConfig};
use cps::driver::{self, RunConfig, RunOutcome};
use cps::faultfile::{self, FaultScript};
use cps::profilefile;
use cps::programfile;
use cps::reportfile::{self, ReportDoc};
use cps::tracefile;

use cps_core::apdu::{encode_command, hex_format, CommandApdu};
use cps_core::card::{Card, CardProfile};
use cps_core::explore::{
    challenge_insertion_sweep, explore, loopback_variants, ExploreConfig, Strategy, DEFAULT_CAP,
};
use cps_core::program::StraightLineProgram;
use cps_core::router::WatchdogPolicy;

/// Demo script for the loop-back experiment: the accepted undefined and
/// modified command sequence on the incrypto profile.
const LOOPBACK_BASE: &str = include_str!("../data/cmds/undefined-commands.cmd");

#[derive(Parser)]
#[command(
    name = "cps",
    version,
    about = "Crypto probing system for simulated smartcards"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a certified program against a card profile.
    Run {
        /// Built-in program name (P1-INCRYPTO, P2-CARDOS) or a .slp file.
        program: String,
        /// Built-in profile name (cardos, incrypto) or a .profile file.
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-command pause in milliseconds.
        #[arg(long, default_value_t = 0)]
        latency: u64,
        /// Write the trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Fault configuration file (misdirections, injections).
        #[arg(long)]
        faults: Option<PathBuf>,
        /// Anomaly watch-dog: block-on-first or block-on-second.
        #[arg(long)]
        watchdog: Option<String>,
    },
    /// Replay a command script (.cmd) or verify a recorded trace (.trace).
    Replay {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        latency: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        watchdog: Option<String>,
    },
    /// Enumerate and evaluate every interleaving of two programs.
    Explore {
        program_a: String,
        program_b: String,
        profile: String,
        #[arg(long, default_value = "exhaustive")]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Combined program length limit.
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        /// Write the machine-readable report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Insert the challenge pair at every point of a victim program.
    SweepChallenges {
        #[arg(default_value = "P2-CARDOS")]
        victim: String,
        #[arg(default_value = "cardos")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Insert a SELECT MF after every step of a command script and replay
    /// each variant.
    Loopback {
        /// Command script for the base sequence; defaults to the bundled
        /// undefined-commands demo.
        base: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the summary of a stored exploration report.
    Report { file: PathBuf },
    /// Serve the line protocol on TCP.
    Serve {
        /// Port on 127.0.0.1; 0 picks one and prints it.
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Card declaration `id=profile`; repeatable. Default: c1=cardos.
        #[arg(long = "card")]
        cards: Vec<String>,
        /// Victim session `card=program`; repeatable.
        #[arg(long = "victim")]
        victims: Vec<String>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        latency: u64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run {
            program,
            profile,
            seed,
            latency,
            trace,
            faults,
            watchdog,
        } => {
            let program = load_program(&program)?;
            let profile = load_profile(&profile)?;
            let faults = match faults {
                Some(path) => faultfile::load(&path)
                    .with_context(|| format!("loading faults from {}", path.display()))?,
                None => FaultScript::none(),
            };
            let config = run_config(seed, latency, watchdog.as_deref())?;
            let outcome = driver::run_program(&program, &profile, &faults, &config)?;
            finish_run(&outcome, trace.as_deref())
        }
        Command::Replay {
            file,
            seed,
            latency,
            trace,
            watchdog,
        } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            if text.starts_with("CPS-TRACE") {
                let recorded = tracefile::parse_trace(&text)?;
                let outcome = driver::replay_trace(&recorded)?;
                if outcome.mismatches.is_empty() {
                    println!(
                        "replayed {} commands, all responses match",
                        outcome.commands
                    );
                } else {
                    println!(
                        "replayed {} commands, MISMATCHES at seq {:?}",
                        outcome.commands, outcome.mismatches
                    );
                }
                Ok(outcome.exit_code())
            } else {
                let script = cmdfile::parse(&text)?;
                let config = run_config(seed, latency, watchdog.as_deref())?;
                let outcome = driver::replay_script(&script, &config)?;
                finish_run(&outcome, trace.as_deref())
            }
        }
        Command::Explore {
            program_a,
            program_b,
            profile,
            strategy,
            seed,
            cap,
            report,
        } => {
            let pa = load_program(&program_a)?;
            let pb = load_program(&program_b)?;
            let profile = load_profile(&profile)?;
            let strategy = Strategy::parse(&strategy)
                .with_context(|| format!("unknown strategy '{strategy}'"))?;
            let config = ExploreConfig {
                strategy,
                seed,
                cap,
            };
            let started = Instant::now();
            let mut result = explore(&pa, &pb, &profile, &config)?;
            result.wall_millis = started.elapsed().as_millis() as u64;
            let doc = ReportDoc {
                program_a: pa.id.clone(),
                program_b: pb.id.clone(),
                profile: profile.name.clone(),
                seed,
                cap,
                report: result,
            };
            print!("{}", reportfile::summarize(&doc));
            if let Some(path) = report {
                reportfile::emit_report(&path, &doc)?;
                println!("report written to {}", path.display());
            }
            Ok(0)
        }
        Command::SweepChallenges {
            victim,
            profile,
            seed,
        } => {
            let victim = load_program(&victim)?;
            let profile = load_profile(&profile)?;
            let pair = StraightLineProgram::p1_challenge_pair();
            let report = challenge_insertion_sweep(&victim, &pair, &profile, seed);
            for (point, terminal) in &report.points {
                println!("insert at point {point}: {terminal}");
            }
            if report.all_anomalous_complete {
                println!(
                    "all {} insertion points complete with {} anomalies each",
                    report.points.len(),
                    pair.len()
                );
                Ok(0)
            } else {
                println!("sweep found insertion points that do not complete");
                Ok(1)
            }
        }
        Command::Loopback { base, seed } => {
            let script = match base {
                Some(path) => cmdfile::load(&path)?,
                None => cmdfile::parse(LOOPBACK_BASE).expect("bundled script parses"),
            };
            let (profile, commands) = driver::script_commands(&script, seed)?;
            let loop_cmd = CommandApdu::new(0x00, 0xA4, 0x00, 0x00).with_le(0xFF);
            let mut clean = true;
            for (index, variant) in loopback_variants(&commands, &loop_cmd).enumerate() {
                let mut card = Card::create(profile.clone(), seed);
                let failure = variant
                    .iter()
                    .enumerate()
                    .map(|(at, cmd)| (at, card.execute(cmd)))
                    .find(|(_, response)| !response.is_success());
                match failure {
                    None => println!("insert after step {:>2}: all success", index + 1),
                    Some((at, response)) => {
                        clean = false;
                        println!(
                            "insert after step {:>2}: command {} failed with {:04X}",
                            index + 1,
                            at + 1,
                            response.sw()
                        );
                    }
                }
            }
            Ok(if clean { 0 } else { 1 })
        }
        Command::Report { file } => {
            let doc = reportfile::read_report(&file)?;
            print!("{}", reportfile::summarize(&doc));
            Ok(0)
        }
        Command::Serve {
            port,
            seed,
            cards,
            victims,
            trace,
            latency,
        } => {
            let cards = if cards.is_empty() {
                vec![("c1".to_string(), CardProfile::cardos())]
            } else {
                cards
                    .iter()
                    .map(|spec| {
                        let (id, profile) = spec
                            .split_once('=')
                            .with_context(|| format!("--card takes id=profile, got '{spec}'"))?;
                        Ok((id.to_string(), load_profile(profile)?))
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?
            };
            let victims = victims
                .iter()
                .map(|spec| {
                    let (card, program) = spec
                        .split_once('=')
                        .with_context(|| format!("--victim takes card=program, got '{spec}'"))?;
                    Ok((card.to_string(), load_program(program)?))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            daemon::serve(ServeConfig {
                port,
                seed,
                cards,
                victims,
                trace_path: trace,
                latency: Duration::from_millis(latency),
            })?;
            Ok(0)
        }
    }
}

fn run_config(seed: u64, latency: u64, watchdog: Option<&str>) -> anyhow::Result<RunConfig> {
    let watchdog = match watchdog {
        None => None,
        Some("block-on-first") => Some(WatchdogPolicy::BlockOnFirst),
        Some("block-on-second") => Some(WatchdogPolicy::BlockOnSecond),
        Some(other) => bail!("unknown watchdog policy '{other}'"),
    };
    Ok(RunConfig {
        seed,
        latency: Duration::from_millis(latency),
        watchdog,
    })
}

fn finish_run(outcome: &RunOutcome, trace: Option<&Path>) -> anyhow::Result<i32> {
    for record in &outcome.records {
        let data = if record.response.data.len() > 16 {
            format!("{} bytes", record.response.data.len())
        } else {
            hex_format(&record.response.data)
        };
        println!(
            "{:>4} {:<4} {:<5} {} -> {} {:04X}",
            record.seq,
            tracefile::verdict_token(Some(record.verdict)),
            record
                .expected_step
                .map_or("-".to_string(), |s| s.to_string()),
            hex_format(&encode_command(&record.command)),
            data,
            record.response.sw(),
        );
    }
    println!("{}", outcome.summary());
    if let Some(path) = trace {
        tracefile::write_trace(path, &outcome.trace_file())?;
    }
    Ok(outcome.exit_code())
}

fn load_profile(spec: &str) -> anyhow::Result<CardProfile> {
    if let Some(profile) = CardProfile::builtin(spec) {
        return Ok(profile);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(profilefile::load(path)?);
    }
    bail!("unknown profile '{spec}': not a built-in (cardos, incrypto) and not a file")
}

fn load_program(spec: &str) -> anyhow::Result<StraightLineProgram> {
    if let Some(program) = StraightLineProgram::builtin(spec) {
        return Ok(program);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(programfile::load(path)?);
    }
    bail!("unknown program '{spec}': not a built-in (P1-INCRYPTO, P2-CARDOS, P1-CHALLENGE) and not a file")
}
