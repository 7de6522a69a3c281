//! The middleware: session management, step instantiation with default
//! bindings, command routing (with optional misdirection and injection
//! faults), per-command classification and the anomaly watch-dog.
//!
//! Every executed command is classified against the session it was
//! dispatched into:
//!
//! * the command matches a pending step template of the session's program
//!   and the card answered success - a correct transition; the cursor
//!   moves past the matched step;
//! * the card answered a failure status - a detected error; the session
//!   terminates and the middleware can act on it;
//! * the card answered success but the command matches no pending step -
//!   an anomaly: a foreign or modified command the card accepted without
//!   complaint, invisible to the user.
//!
//! Matching scans forward from the cursor, never backwards, so a certified
//! step that arrives after its predecessors were replaced by modified
//! look-alikes is still recognized as progress of the certified program,
//! while the replacements themselves stay anomalies.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::apdu::{CommandApdu, ResponseApdu};
use crate::card::{Card, CardProfile};
use crate::program::{default_payload, Bindings, StepLabel, StraightLineProgram};
use crate::stream::{ByteStream, LANE_BINDER};

/// Verdict for one executed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Classification {
    CorrectTransition,
    DetectedError,
    Anomaly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SessionStatus {
    Running,
    Completed,
    TerminatedOnError,
    Blocked,
}

/// One application session driving a program against a card.
#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    pub program: StraightLineProgram,
    pub target_card: String,
    /// Index of the next pending step.
    pub cursor: usize,
    pub status: SessionStatus,
    pub anomalies: u32,
}

/// One executed command with its verdict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub seq: u64,
    pub session_id: String,
    /// Card that actually executed the command (after misdirection).
    pub card_id: String,
    pub command: CommandApdu,
    pub response: ResponseApdu,
    pub verdict: Classification,
    /// Label of the step the session expected when the command arrived.
    pub expected_step: Option<StepLabel>,
}

/// Routing faults: sessions delivered to the wrong card and foreign
/// commands injected at fixed trace positions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultConfig {
    /// session id -> card id actually receiving that session's commands.
    pub misdirect: BTreeMap<String, String>,
    /// trace seq -> command injected at that position.
    pub injections: BTreeMap<u64, CommandApdu>,
}

impl FaultConfig {
    pub fn none() -> FaultConfig {
        FaultConfig::default()
    }
}

/// Online anomaly policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WatchdogPolicy {
    /// Block the session at its first anomaly.
    BlockOnFirst,
    /// Tolerate one anomaly, block at the second in the same session.
    BlockOnSecond,
}

impl WatchdogPolicy {
    fn threshold(&self) -> u32 {
        match self {
            WatchdogPolicy::BlockOnFirst => 1,
            WatchdogPolicy::BlockOnSecond => 2,
        }
    }
}

/// Post-hoc watch-dog verdict over a trace.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AlarmDecision {
    /// (session id, seq of the anomaly that trips the policy).
    pub alarms: Vec<(String, u64)>,
    /// Every anomaly seq in the trace, in order.
    pub anomaly_seqs: Vec<u64>,
}

impl AlarmDecision {
    pub fn triggered(&self) -> bool {
        !self.alarms.is_empty()
    }
}

/// Replays the policy over a recorded trace and reports which commands
/// would have tripped it.
pub fn watchdog_check(trace: &[TraceRecord], policy: WatchdogPolicy) -> AlarmDecision {
    let mut decision = AlarmDecision::default();
    let mut per_session: BTreeMap<&str, u32> = BTreeMap::new();
    for record in trace {
        if record.verdict != Classification::Anomaly {
            continue;
        }
        decision.anomaly_seqs.push(record.seq);
        let count = per_session.entry(record.session_id.as_str()).or_insert(0);
        *count += 1;
        if *count == policy.threshold() {
            decision
                .alarms
                .push((record.session_id.clone(), record.seq));
        }
    }
    decision
}

/// Classifies one command/response against a session.
pub fn classify(session: &Session, cmd: &CommandApdu, response: &ResponseApdu) -> Classification {
    classify_match(&session.program, session.cursor, cmd, response).0
}

/// Like [`classify`], also returning the index of the matched step on a
/// correct transition.
pub fn classify_match(
    program: &StraightLineProgram,
    cursor: usize,
    cmd: &CommandApdu,
    response: &ResponseApdu,
) -> (Classification, Option<usize>) {
    if !response.is_success() {
        return (Classification::DetectedError, None);
    }
    for (index, template) in program.steps.iter().enumerate().skip(cursor) {
        if template.matches(cmd) {
            return (Classification::CorrectTransition, Some(index));
        }
    }
    (Classification::Anomaly, None)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RouterError {
    UnknownCard {
        id: String,
    },
    UnknownSession {
        id: String,
    },
    DuplicateCard {
        id: String,
    },
    DuplicateSession {
        id: String,
    },
    /// The watch-dog blocked this session; the command was not executed.
    SessionBlocked {
        id: String,
    },
}

impl fmt::Display for RouterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouterError::UnknownCard { id } => write!(f, "no card '{id}'"),
            RouterError::UnknownSession { id } => write!(f, "no session '{id}'"),
            RouterError::DuplicateCard { id } => write!(f, "card '{id}' already exists"),
            RouterError::DuplicateSession { id } => write!(f, "session '{id}' already exists"),
            RouterError::SessionBlocked { id } => {
                write!(f, "session '{id}' is blocked by the watch-dog")
            }
        }
    }
}

impl core::error::Error for RouterError {}

/// The middleware. Owns cards, sessions and the merged trace; hands out
/// one global sequence number per executed command. `&mut self` methods
/// give a single total order per card by construction; hosts that drive
/// the router from several threads wrap it in their own lock.
#[derive(Clone, Debug)]
pub struct Router {
    cards: BTreeMap<String, Card>,
    sessions: BTreeMap<String, Session>,
    trace: Vec<TraceRecord>,
    seq: u64,
    watchdog: Option<WatchdogPolicy>,
    rn: ByteStream,
}

impl Router {
    pub fn new(seed: u64) -> Router {
        Router {
            cards: BTreeMap::new(),
            sessions: BTreeMap::new(),
            trace: Vec::new(),
            seq: 0,
            watchdog: None,
            rn: ByteStream::new(seed, LANE_BINDER),
        }
    }

    pub fn set_watchdog(&mut self, policy: Option<WatchdogPolicy>) {
        self.watchdog = policy;
    }

    pub fn watchdog(&self) -> Option<WatchdogPolicy> {
        self.watchdog
    }

    pub fn add_card(
        &mut self,
        id: &str,
        profile: CardProfile,
        seed: u64,
    ) -> Result<(), RouterError> {
        if self.cards.contains_key(id) {
            return Err(RouterError::DuplicateCard { id: id.into() });
        }
        self.cards.insert(id.into(), Card::create(profile, seed));
        Ok(())
    }

    pub fn card(&self, id: &str) -> Option<&Card> {
        self.cards.get(id)
    }

    pub fn card_mut(&mut self, id: &str) -> Option<&mut Card> {
        self.cards.get_mut(id)
    }

    /// Card ids with their profile names, in insertion-independent
    /// (sorted) order.
    pub fn card_ids(&self) -> Vec<(String, String)> {
        self.cards
            .iter()
            .map(|(id, card)| (id.clone(), card.profile().name.clone()))
            .collect()
    }

    /// Resets a card and returns its reset answer.
    pub fn reset_card(&mut self, id: &str) -> Result<Vec<u8>, RouterError> {
        let card = self
            .cards
            .get_mut(id)
            .ok_or(RouterError::UnknownCard { id: id.into() })?;
        Ok(card.reset())
    }

    /// Opens a session driving `program` against `target_card`. The
    /// program's card type does not have to match the card's profile;
    /// that mismatch is often the point.
    pub fn open_session(
        &mut self,
        id: &str,
        program: StraightLineProgram,
        target_card: &str,
    ) -> Result<(), RouterError> {
        if !self.cards.contains_key(target_card) {
            return Err(RouterError::UnknownCard {
                id: target_card.into(),
            });
        }
        if self.sessions.contains_key(id) {
            return Err(RouterError::DuplicateSession { id: id.into() });
        }
        self.sessions.insert(
            id.into(),
            Session {
                id: id.into(),
                program,
                target_card: target_card.into(),
                cursor: 0,
                status: SessionStatus::Running,
                anomalies: 0,
            },
        );
        Ok(())
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.get(id)
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// Removes and returns the recorded trace (for hosts that persist
    /// records as they go).
    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        core::mem::take(&mut self.trace)
    }

    /// Draws the next middleware random number.
    pub fn next_rn(&mut self) -> [u8; 8] {
        self.rn.next_block()
    }

    /// Default bindings for a program: the PIN of the profile the program
    /// was written for, a fresh random number, the canonical payload.
    pub fn default_bindings(&mut self, program: &StraightLineProgram) -> Bindings {
        let pin = self
            .cards
            .values()
            .find(|card| card.profile().name == program.card_type)
            .map(|card| card.profile().pin.clone())
            .or_else(|| CardProfile::builtin(&program.card_type).map(|p| p.pin));
        Bindings {
            pin,
            rn: Some(self.next_rn().to_vec()),
            payload: Some(default_payload()),
        }
    }

    /// Routes one command for `session_id`: delivers it to the session's
    /// card (or the misdirected one), classifies the response, updates the
    /// session and appends a trace record.
    pub fn dispatch(
        &mut self,
        session_id: &str,
        cmd: CommandApdu,
        faults: &FaultConfig,
    ) -> Result<TraceRecord, RouterError> {
        let session = self
            .sessions
            .get_mut(session_id)
            .ok_or(RouterError::UnknownSession {
                id: session_id.into(),
            })?;
        if session.status == SessionStatus::Blocked {
            return Err(RouterError::SessionBlocked {
                id: session_id.into(),
            });
        }

        let card_id = faults
            .misdirect
            .get(session_id)
            .unwrap_or(&session.target_card)
            .clone();
        let card = self
            .cards
            .get_mut(&card_id)
            .ok_or(RouterError::UnknownCard {
                id: card_id.clone(),
            })?;

        let expected_step = session.program.steps.get(session.cursor).map(|s| s.label);
        let response = card.execute(&cmd);
        let (verdict, matched) = classify_match(&session.program, session.cursor, &cmd, &response);

        match verdict {
            Classification::CorrectTransition => {
                session.cursor = matched.expect("match index on correct transition") + 1;
                if session.status == SessionStatus::Running
                    && session.cursor == session.program.len()
                {
                    session.status = SessionStatus::Completed;
                }
            }
            Classification::DetectedError => {
                if session.status == SessionStatus::Running {
                    session.status = SessionStatus::TerminatedOnError;
                }
            }
            Classification::Anomaly => {
                session.anomalies += 1;
                if let Some(policy) = self.watchdog {
                    if session.status == SessionStatus::Running
                        && session.anomalies >= policy.threshold()
                    {
                        session.status = SessionStatus::Blocked;
                    }
                }
            }
        }

        self.seq += 1;
        let record = TraceRecord {
            seq: self.seq,
            session_id: session_id.into(),
            card_id,
            command: cmd,
            response,
            verdict,
            expected_step,
        };
        self.trace.push(record.clone());
        Ok(record)
    }

    /// Dispatches any injected commands whose position is the next trace
    /// seq. Drivers call this before each of their own commands (and once
    /// after the last) so injections land at their configured positions.
    pub fn drain_injections(
        &mut self,
        session_id: &str,
        faults: &FaultConfig,
    ) -> Result<Vec<TraceRecord>, RouterError> {
        let mut records = Vec::new();
        while let Some(cmd) = faults.injections.get(&(self.seq + 1)) {
            records.push(self.dispatch(session_id, cmd.clone(), faults)?);
        }
        Ok(records)
    }
}
