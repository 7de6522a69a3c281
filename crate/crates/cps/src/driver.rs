//! Run and replay orchestration: wires programs, scripts and fault
//! configurations into a router, paces commands when asked, and maps
//! outcomes to exit codes (0 clean, 2 anomalies recorded, 3 terminated on
//! error; 1 is reserved for usage and internal failures).

use std::thread;
use std::time::Duration;

use cps_core::apdu::{decode_command, encode_command, CommandApdu};
use cps_core::card::{Card, CardProfile, SIGNATURE_LEN};
use cps_core::program::{instantiate_step, StraightLineProgram, TemplateError, Wildcard};
use cps_core::router::{
    Classification, FaultConfig, Router, RouterError, SessionStatus, TraceRecord, WatchdogPolicy,
};
use thiserror::Error;

use crate::cmdfile::{ApduData, CommandScript, ScriptLine};
use crate::faultfile::FaultScript;
use crate::tracefile::{TraceFile, TraceHeader};

/// Card and session ids used by single-card runs; fixed so traces from
/// different entry points compare byte for byte.
pub const CARD_ID: &str = "c1";
pub const SESSION_ID: &str = "s1";

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    /// Per-command pause emulating hardware pacing; never changes trace
    /// content.
    pub latency: Duration,
    pub watchdog: Option<WatchdogPolicy>,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> RunConfig {
        RunConfig {
            seed,
            latency: Duration::ZERO,
            watchdog: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("unknown program '{0}' (not a built-in)")]
    UnknownProgram(String),
    #[error("unknown profile '{0}' (not a built-in)")]
    UnknownProfile(String),
    #[error("program '{program}' has no step '{step}'")]
    UnknownStep { program: String, step: String },
    #[error("injection positions left unused: {0:?}")]
    UnusedInjections(Vec<u64>),
    #[error("trace record {seq}: {message}")]
    BadTraceRecord { seq: u64, message: String },
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub cards: Vec<(String, String)>,
    pub records: Vec<TraceRecord>,
    pub status: SessionStatus,
    pub anomalies: u32,
    /// True when the watch-dog refused further commands.
    pub blocked: bool,
}

impl RunOutcome {
    pub fn error_seq(&self) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.verdict == Classification::DetectedError)
            .map(|r| r.seq)
    }

    /// First signature-sized response payload, if any step produced one.
    pub fn signature(&self) -> Option<&[u8]> {
        self.records
            .iter()
            .map(|r| r.response.data.as_slice())
            .find(|data| data.len() == SIGNATURE_LEN)
    }

    pub fn exit_code(&self) -> i32 {
        if self.error_seq().is_some() {
            3
        } else if self.anomalies > 0 {
            2
        } else {
            0
        }
    }

    pub fn trace_file(&self) -> TraceFile {
        TraceFile::from_core_records(
            TraceHeader::new(self.seed, self.cards.clone()),
            &self.records,
            true,
        )
    }

    pub fn summary(&self) -> String {
        let verdict_counts = self.records.iter().fold((0, 0, 0), |mut acc, r| {
            match r.verdict {
                Classification::CorrectTransition => acc.0 += 1,
                Classification::DetectedError => acc.1 += 1,
                Classification::Anomaly => acc.2 += 1,
            }
            acc
        });
        format!(
            "{} commands: {} ok, {} err, {} anomalies; session {:?}{}{}",
            self.records.len(),
            verdict_counts.0,
            verdict_counts.1,
            verdict_counts.2,
            self.status,
            if self.signature().is_some() {
                "; signature produced"
            } else {
                ""
            },
            if self.blocked {
                "; blocked by watch-dog"
            } else {
                ""
            },
        )
    }
}

pub fn resolve_program(name: &str) -> Result<StraightLineProgram, DriverError> {
    StraightLineProgram::builtin(name).ok_or_else(|| DriverError::UnknownProgram(name.into()))
}

pub fn resolve_profile(name: &str) -> Result<CardProfile, DriverError> {
    CardProfile::builtin(name).ok_or_else(|| DriverError::UnknownProfile(name.into()))
}

fn pace(config: &RunConfig) {
    if !config.latency.is_zero() {
        thread::sleep(config.latency);
    }
}

struct RunState {
    router: Router,
    stop: bool,
    blocked: bool,
}

impl RunState {
    fn new(
        profile: &CardProfile,
        faults: &FaultScript,
        config: &RunConfig,
    ) -> Result<Self, DriverError> {
        let mut router = Router::new(config.seed);
        router.set_watchdog(config.watchdog);
        router.add_card(CARD_ID, profile.clone(), config.seed)?;
        for (id, profile_name) in &faults.extra_cards {
            router.add_card(id, resolve_profile(profile_name)?, config.seed)?;
        }
        Ok(RunState {
            router,
            stop: false,
            blocked: false,
        })
    }

    /// Dispatches one command; sets `stop` on detected errors and on a
    /// watch-dog block.
    fn dispatch(
        &mut self,
        cmd: CommandApdu,
        faults: &FaultConfig,
        config: &RunConfig,
    ) -> Result<(), DriverError> {
        match self.router.dispatch(SESSION_ID, cmd, faults) {
            Ok(record) => {
                pace(config);
                if record.verdict == Classification::DetectedError {
                    self.stop = true;
                }
                Ok(())
            }
            Err(RouterError::SessionBlocked { .. }) => {
                self.blocked = true;
                self.stop = true;
                Ok(())
            }
            Err(other) => Err(other.into()),
        }
    }

    fn drain_injections(
        &mut self,
        faults: &FaultConfig,
        config: &RunConfig,
    ) -> Result<(), DriverError> {
        loop {
            if self.stop {
                return Ok(());
            }
            let next = self.router.trace().len() as u64 + 1;
            let Some(cmd) = faults.injections.get(&next).cloned() else {
                return Ok(());
            };
            self.dispatch(cmd, faults, config)?;
        }
    }

    fn finish(mut self, seed: u64) -> RunOutcome {
        let session = self
            .router
            .session(SESSION_ID)
            .expect("session opened by the run");
        RunOutcome {
            seed,
            cards: self.router.card_ids(),
            status: session.status,
            anomalies: session.anomalies,
            blocked: self.blocked,
            records: self.router.take_trace(),
        }
    }
}

/// Replays a certified program against a card of `profile`, optionally
/// under a fault script. Stops at the first detected error or when the
/// watch-dog blocks the session.
pub fn run_program(
    program: &StraightLineProgram,
    profile: &CardProfile,
    faults: &FaultScript,
    config: &RunConfig,
) -> Result<RunOutcome, DriverError> {
    let mut state = RunState::new(profile, faults, config)?;
    state
        .router
        .open_session(SESSION_ID, program.clone(), CARD_ID)?;

    for index in 0..program.len() {
        state.drain_injections(&faults.config, config)?;
        if state.stop {
            break;
        }
        let bindings = state.router.default_bindings(program);
        let cmd = instantiate_step(program, index, &bindings)?;
        state.dispatch(cmd, &faults.config, config)?;
        if state.stop {
            break;
        }
    }
    state.drain_injections(&faults.config, config)?;

    if !state.stop {
        let consumed = state.router.trace().len() as u64;
        let unused: Vec<u64> = faults
            .config
            .injections
            .keys()
            .copied()
            .filter(|pos| *pos > consumed)
            .collect();
        if !unused.is_empty() {
            return Err(DriverError::UnusedInjections(unused));
        }
    }
    Ok(state.finish(config.seed))
}

/// Replays a command script with classification against its victim
/// program.
pub fn replay_script(
    script: &CommandScript,
    config: &RunConfig,
) -> Result<RunOutcome, DriverError> {
    let profile = resolve_profile(&script.profile)?;
    let victim = resolve_program(&script.victim)?;
    let mut state = RunState::new(&profile, &FaultScript::none(), config)?;
    state.router.open_session(SESSION_ID, victim, CARD_ID)?;

    for line in &script.lines {
        if state.stop {
            break;
        }
        match line {
            ScriptLine::Reset => {
                state.router.reset_card(CARD_ID)?;
            }
            ScriptLine::Step { program, step } => {
                let program = resolve_program(program)?;
                let index = program
                    .find_step(step)
                    .ok_or_else(|| DriverError::UnknownStep {
                        program: program.id.clone(),
                        step: step.clone(),
                    })?;
                let bindings = state.router.default_bindings(&program);
                let cmd = instantiate_step(&program, index, &bindings)?;
                state.dispatch(cmd, &FaultConfig::none(), config)?;
            }
            ScriptLine::Apdu { header, data, le } => {
                let cmd = build_apdu(&mut state.router, &profile, *header, data, *le);
                state.dispatch(cmd, &FaultConfig::none(), config)?;
            }
        }
    }
    Ok(state.finish(config.seed))
}

fn build_apdu(
    router: &mut Router,
    profile: &CardProfile,
    header: [u8; 4],
    data: &ApduData,
    le: Option<u8>,
) -> CommandApdu {
    let data = match data {
        ApduData::None => vec![],
        ApduData::Fixed(bytes) => bytes.clone(),
        ApduData::Hole(Wildcard::Pin) => profile.pin.clone(),
        ApduData::Hole(Wildcard::Rn) => router.next_rn().to_vec(),
        ApduData::Hole(Wildcard::Payload) => cps_core::program::default_payload(),
    };
    let mut cmd = CommandApdu::new(header[0], header[1], header[2], header[3]).with_data(data);
    cmd.le = le;
    cmd
}

/// Instantiates a script to concrete commands without executing anything;
/// used by sequence-level experiments such as the loop-back sweep.
pub fn script_commands(
    script: &CommandScript,
    seed: u64,
) -> Result<(CardProfile, Vec<CommandApdu>), DriverError> {
    let profile = resolve_profile(&script.profile)?;
    let mut router = Router::new(seed);
    router.add_card(CARD_ID, profile.clone(), seed)?;
    let mut commands = Vec::new();
    for line in &script.lines {
        match line {
            ScriptLine::Reset => {}
            ScriptLine::Step { program, step } => {
                let program = resolve_program(program)?;
                let index = program
                    .find_step(step)
                    .ok_or_else(|| DriverError::UnknownStep {
                        program: program.id.clone(),
                        step: step.clone(),
                    })?;
                let bindings = router.default_bindings(&program);
                commands.push(instantiate_step(&program, index, &bindings)?);
            }
            ScriptLine::Apdu { header, data, le } => {
                commands.push(build_apdu(&mut router, &profile, *header, data, *le));
            }
        }
    }
    Ok((profile, commands))
}

/// Outcome of re-executing a recorded trace.
#[derive(Clone, Debug)]
pub struct TraceReplayOutcome {
    pub commands: usize,
    /// Seqs whose replayed response differs from the recording.
    pub mismatches: Vec<u64>,
    pub recorded_error: bool,
    pub recorded_anomaly: bool,
}

impl TraceReplayOutcome {
    pub fn exit_code(&self) -> i32 {
        if !self.mismatches.is_empty() {
            1
        } else if self.recorded_error {
            3
        } else if self.recorded_anomaly {
            2
        } else {
            0
        }
    }
}

/// Re-executes a recorded trace on fresh cards built from its header and
/// verifies the responses byte for byte.
pub fn replay_trace(trace: &TraceFile) -> Result<TraceReplayOutcome, DriverError> {
    let mut cards: std::collections::BTreeMap<String, Card> = Default::default();
    for (id, profile_name) in &trace.header.cards {
        cards.insert(
            id.clone(),
            Card::create(resolve_profile(profile_name)?, trace.header.seed),
        );
    }

    let mut outcome = TraceReplayOutcome {
        commands: trace.records.len(),
        mismatches: Vec::new(),
        recorded_error: false,
        recorded_anomaly: false,
    };
    for record in &trace.records {
        match record.verdict {
            Some(Classification::DetectedError) => outcome.recorded_error = true,
            Some(Classification::Anomaly) => outcome.recorded_anomaly = true,
            _ => {}
        }
        let card = cards
            .get_mut(&record.card_id)
            .ok_or_else(|| DriverError::BadTraceRecord {
                seq: record.seq,
                message: format!("card '{}' not in the trace header", record.card_id),
            })?;
        let cmd = decode_command(&record.command).map_err(|e| DriverError::BadTraceRecord {
            seq: record.seq,
            message: e.to_string(),
        })?;
        debug_assert_eq!(encode_command(&cmd), record.command);
        let response = card.execute(&cmd);
        if response.data != record.response_data || response.sw() != record.sw {
            outcome.mismatches.push(record.seq);
        }
    }
    Ok(outcome)
}
