//! Enumeration and evaluation of interleavings of two straight-line
//! programs against one simulated card.
//!
//! A [`Schedule`] is a merge of the two programs: a tag sequence over
//! `{A, B}` that preserves each program's internal order. For programs of
//! length `l` and `k` there are `binomial(l + k, l)` distinct merges, and
//! [`search_space_size`] scales that count by a per-command mutation space
//! of `2^bits` to show why brute force over real hardware is hopeless.
//!
//! Three strategies evaluate the merge space:
//!
//! * `Exhaustive` runs every schedule on its own fresh card.
//! * `PruneOnError` walks the shared-prefix tree and abandons a prefix as
//!   soon as a command draws a detected error; every completion of that
//!   prefix terminates at that same command, so one representative run
//!   stands for the subtree and the rest is counted analytically.
//! * `MemoizedByState` also walks the tree but memoizes subtree outcomes
//!   by (card snapshot, consumed counts, session cursor), classifying the
//!   full schedule space while executing identical continuations once.
//!
//! All strategies agree on the set of schedules that complete with
//! anomalies and on the clean-completion count; they differ only in how
//! much work they spend to get there.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

pub use num_bigint::BigUint;

use crate::apdu::CommandApdu;
use crate::card::{Card, CardProfile, CardState};
use crate::program::{default_payload, instantiate_step, Bindings, StraightLineProgram};
use crate::router::{
    classify_match, Classification, FaultConfig, Router, SessionStatus, TraceRecord,
};
use crate::stream::{ByteStream, LANE_BINDER};

/// Which program the next command comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    A,
    B,
}

/// A merge of two programs, e.g. `AABAB`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Schedule(pub Vec<Tag>);

impl Schedule {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses the `Display` form; `-` stands for the empty schedule.
    pub fn parse(text: &str) -> Option<Schedule> {
        if text == "-" {
            return Some(Schedule(Vec::new()));
        }
        let mut tags = Vec::with_capacity(text.len());
        for ch in text.chars() {
            match ch {
                'A' => tags.push(Tag::A),
                'B' => tags.push(Tag::B),
                _ => return None,
            }
        }
        Some(Schedule(tags))
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for tag in &self.0 {
            f.write_str(match tag {
                Tag::A => "A",
                Tag::B => "B",
            })?;
        }
        Ok(())
    }
}

/// Iterator over every distinct merge of `l` A-steps and `k` B-steps, in
/// lexicographic order with `A < B`.
pub struct Schedules {
    next: Option<Vec<Tag>>,
}

pub fn enumerate_schedules(l: usize, k: usize) -> Schedules {
    let mut start = Vec::with_capacity(l + k);
    start.extend(core::iter::repeat_n(Tag::A, l));
    start.extend(core::iter::repeat_n(Tag::B, k));
    Schedules { next: Some(start) }
}

impl Iterator for Schedules {
    type Item = Schedule;

    fn next(&mut self) -> Option<Schedule> {
        let current = self.next.take()?;
        let mut follower = current.clone();
        if next_permutation(&mut follower) {
            self.next = Some(follower);
        }
        Some(Schedule(current))
    }
}

/// Standard next-lexicographic-permutation step; false once `tags` is the
/// last permutation.
fn next_permutation(tags: &mut [Tag]) -> bool {
    if tags.len() < 2 {
        return false;
    }
    let Some(pivot) = (0..tags.len() - 1).rev().find(|&i| tags[i] < tags[i + 1]) else {
        return false;
    };
    let successor = (pivot + 1..tags.len())
        .rev()
        .find(|&i| tags[pivot] < tags[i])
        .unwrap();
    tags.swap(pivot, successor);
    tags[pivot + 1..].reverse();
    true
}

/// Exact `binomial(l + k, l)`, assuming the result fits in a `u64` (the
/// explorer's cap keeps it far below that).
pub fn schedule_count(l: usize, k: usize) -> u64 {
    let r = l.min(k) as u64;
    let n = (l + k) as u64;
    let mut acc: u64 = 1;
    for i in 1..=r {
        // Exact at every step: acc is binomial(n - r + i, i) afterwards.
        acc = acc * (n - r + i) / i;
    }
    acc
}

/// Exact `binomial(l + k, l) * 2^bits` in arbitrary precision: the number
/// of tests a brute-force checker would face with `bits` mutable bits per
/// command.
pub fn search_space_size(l: usize, k: usize, bits_per_command: usize) -> BigUint {
    let r = l.min(k);
    let n = l + k;
    let mut acc = BigUint::from(1u32);
    for i in 1..=r {
        acc = acc * BigUint::from(n - r + i) / BigUint::from(i);
    }
    acc << bits_per_command
}

/// Terminal classification of one evaluated schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    CompletedClean,
    CompletedWithAnomalies(u32),
    /// The card answered a failure status at this trace position and the
    /// run stopped there.
    TerminatedOnError {
        position: u64,
    },
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::CompletedClean => f.write_str("clean"),
            Terminal::CompletedWithAnomalies(n) => write!(f, "anomalous({n})"),
            Terminal::TerminatedOnError { position } => write!(f, "error(at {position})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScheduleResult {
    pub schedule: Schedule,
    pub trace: Vec<TraceRecord>,
    pub terminal: Terminal,
    /// True when the card's SEO is destroyed once the run ends.
    pub card_damaged: bool,
}

/// Picks the victim: the program written for this card profile, falling
/// back to `pa` when neither matches.
fn victim_is_a(pa: &StraightLineProgram, pb: &StraightLineProgram, profile: &CardProfile) -> bool {
    pa.card_type == profile.name || pb.card_type != profile.name
}

/// Runs one schedule on a fresh card seeded with `seed`. Both programs'
/// commands land on that card in schedule order; every command is
/// classified against the victim session (the program matching the card
/// profile). The run stops at the first detected error.
pub fn run_schedule(
    schedule: &Schedule,
    pa: &StraightLineProgram,
    pb: &StraightLineProgram,
    profile: &CardProfile,
    seed: u64,
) -> ScheduleResult {
    let victim = if victim_is_a(pa, pb, profile) { pa } else { pb };

    let mut router = Router::new(seed);
    router
        .add_card("c1", profile.clone(), seed)
        .expect("fresh router");
    router
        .open_session("s1", victim.clone(), "c1")
        .expect("card just added");

    let mut next_a = 0;
    let mut next_b = 0;
    let mut terminal = None;
    for tag in &schedule.0 {
        let (program, index) = match tag {
            Tag::A => (pa, &mut next_a),
            Tag::B => (pb, &mut next_b),
        };
        let bindings = router.default_bindings(program);
        let cmd = instantiate_step(program, *index, &bindings).expect("schedule within bounds");
        *index += 1;
        let record = router
            .dispatch("s1", cmd, &FaultConfig::none())
            .expect("session exists and is never blocked");
        if record.verdict == Classification::DetectedError {
            terminal = Some(Terminal::TerminatedOnError {
                position: record.seq,
            });
            break;
        }
    }

    let anomalies = router.session("s1").expect("session exists").anomalies;
    let terminal = terminal.unwrap_or(if anomalies == 0 {
        Terminal::CompletedClean
    } else {
        Terminal::CompletedWithAnomalies(anomalies)
    });
    let card_damaged = router
        .card("c1")
        .expect("card exists")
        .state()
        .seo_destroyed;
    ScheduleResult {
        schedule: schedule.clone(),
        trace: router.take_trace(),
        terminal,
        card_damaged,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Exhaustive,
    PruneOnError,
    MemoizedByState,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Exhaustive => "exhaustive",
            Strategy::PruneOnError => "prune-on-error",
            Strategy::MemoizedByState => "memoized-by-state",
        }
    }

    pub fn parse(text: &str) -> Option<Strategy> {
        match text {
            "exhaustive" => Some(Strategy::Exhaustive),
            "prune-on-error" => Some(Strategy::PruneOnError),
            "memoized-by-state" => Some(Strategy::MemoizedByState),
            _ => None,
        }
    }
}

/// Aggregated outcome of an exploration.
///
/// `visited` counts schedules whose terminal class the strategy actually
/// established; `pruned` counts schedules subsumed by an error-terminated
/// prefix and skipped. The per-class counts sum to `visited`, and
/// `visited + pruned == total`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplorationReport {
    pub strategy: Strategy,
    pub total: u64,
    pub visited: u64,
    pub pruned: u64,
    /// Commands actually executed on cards, across all runs.
    pub commands_executed: u64,
    pub completed_clean: u64,
    pub completed_with_anomalies: u64,
    pub terminated_on_error: u64,
    /// Every visited schedule that completed with at least one anomaly,
    /// in lexicographic order.
    pub anomalous_schedules: Vec<Schedule>,
    /// Filled by hosts that time the exploration; zero as computed here.
    pub wall_millis: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreConfig {
    pub strategy: Strategy,
    pub seed: u64,
    /// Maximum combined program length; binomial growth makes anything
    /// much larger than the default unreasonable to enumerate.
    pub cap: usize,
}

pub const DEFAULT_CAP: usize = 22;

impl ExploreConfig {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        ExploreConfig {
            strategy,
            seed,
            cap: DEFAULT_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExploreError {
    CapExceeded { combined: usize, cap: usize },
}

impl fmt::Display for ExploreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExploreError::CapExceeded { combined, cap } => {
                write!(
                    f,
                    "combined program length {combined} exceeds the cap of {cap}"
                )
            }
        }
    }
}

impl core::error::Error for ExploreError {}

/// Evaluates every merge of `pa` and `pb` on fresh `profile` cards under
/// the configured strategy.
pub fn explore(
    pa: &StraightLineProgram,
    pb: &StraightLineProgram,
    profile: &CardProfile,
    config: &ExploreConfig,
) -> Result<ExplorationReport, ExploreError> {
    let combined = pa.len() + pb.len();
    if combined > config.cap {
        return Err(ExploreError::CapExceeded {
            combined,
            cap: config.cap,
        });
    }

    let mut report = ExplorationReport {
        strategy: config.strategy,
        total: schedule_count(pa.len(), pb.len()),
        visited: 0,
        pruned: 0,
        commands_executed: 0,
        completed_clean: 0,
        completed_with_anomalies: 0,
        terminated_on_error: 0,
        anomalous_schedules: Vec::new(),
        wall_millis: 0,
    };

    match config.strategy {
        Strategy::Exhaustive => {
            for schedule in enumerate_schedules(pa.len(), pb.len()) {
                let result = run_schedule(&schedule, pa, pb, profile, config.seed);
                report.visited += 1;
                report.commands_executed += result.trace.len() as u64;
                match result.terminal {
                    Terminal::CompletedClean => report.completed_clean += 1,
                    Terminal::CompletedWithAnomalies(_) => {
                        report.completed_with_anomalies += 1;
                        report.anomalous_schedules.push(schedule);
                    }
                    Terminal::TerminatedOnError { .. } => report.terminated_on_error += 1,
                }
            }
        }
        Strategy::PruneOnError => {
            let mut walker = Walker::new(pa, pb, profile, config.seed);
            prune_dfs(&mut walker, &mut report);
            report.commands_executed = walker.commands_executed;
        }
        Strategy::MemoizedByState => {
            let mut walker = Walker::new(pa, pb, profile, config.seed);
            let mut memo = BTreeMap::new();
            let summary = memo_dfs(&mut walker, &mut memo);
            report.visited = report.total;
            report.commands_executed = walker.commands_executed;
            report.terminated_on_error = summary.errored_schedules;
            for (suffix, anomalies) in summary.completions {
                if anomalies == 0 {
                    report.completed_clean += 1;
                } else {
                    report.completed_with_anomalies += 1;
                    report.anomalous_schedules.push(Schedule(suffix));
                }
            }
        }
    }

    report.anomalous_schedules.sort();
    Ok(report)
}

/// Incremental schedule execution with snapshot/restore, shared by the
/// tree-walking strategies. Runs the same per-command pipeline as
/// [`run_schedule`] (instantiate, execute, classify against the victim)
/// without materializing trace records.
struct Walker<'a> {
    pa: &'a StraightLineProgram,
    pb: &'a StraightLineProgram,
    victim_a: bool,
    card: Card,
    rn: ByteStream,
    tags: Vec<Tag>,
    next_a: usize,
    next_b: usize,
    cursor: usize,
    status: SessionStatus,
    anomalies: u32,
    commands_executed: u64,
}

struct WalkerSnapshot {
    card: CardState,
    rn: ByteStream,
    depth: usize,
    next_a: usize,
    next_b: usize,
    cursor: usize,
    status: SessionStatus,
    anomalies: u32,
}

impl<'a> Walker<'a> {
    fn new(
        pa: &'a StraightLineProgram,
        pb: &'a StraightLineProgram,
        profile: &CardProfile,
        seed: u64,
    ) -> Walker<'a> {
        Walker {
            pa,
            pb,
            victim_a: victim_is_a(pa, pb, profile),
            card: Card::create(profile.clone(), seed),
            rn: ByteStream::new(seed, LANE_BINDER),
            tags: Vec::with_capacity(pa.len() + pb.len()),
            next_a: 0,
            next_b: 0,
            cursor: 0,
            status: SessionStatus::Running,
            anomalies: 0,
            commands_executed: 0,
        }
    }

    fn victim(&self) -> &StraightLineProgram {
        if self.victim_a {
            self.pa
        } else {
            self.pb
        }
    }

    fn remaining_a(&self) -> usize {
        self.pa.len() - self.next_a
    }

    fn remaining_b(&self) -> usize {
        self.pb.len() - self.next_b
    }

    fn done(&self) -> bool {
        self.remaining_a() == 0 && self.remaining_b() == 0
    }

    fn snapshot(&self) -> WalkerSnapshot {
        WalkerSnapshot {
            card: self.card.snapshot(),
            rn: self.rn,
            depth: self.tags.len(),
            next_a: self.next_a,
            next_b: self.next_b,
            cursor: self.cursor,
            status: self.status,
            anomalies: self.anomalies,
        }
    }

    fn restore(&mut self, snap: WalkerSnapshot) {
        self.card.restore(snap.card);
        self.rn = snap.rn;
        self.tags.truncate(snap.depth);
        self.next_a = snap.next_a;
        self.next_b = snap.next_b;
        self.cursor = snap.cursor;
        self.status = snap.status;
        self.anomalies = snap.anomalies;
    }

    /// Dispatches the next command of the tagged program.
    fn step(&mut self, tag: Tag) -> Classification {
        let (program, index) = match tag {
            Tag::A => (self.pa, &mut self.next_a),
            Tag::B => (self.pb, &mut self.next_b),
        };
        let pin = CardProfile::builtin(&program.card_type)
            .map(|p| p.pin)
            .unwrap_or_else(|| self.card.profile().pin.clone());
        let bindings = Bindings {
            pin: Some(pin),
            rn: Some(self.rn.next_block().to_vec()),
            payload: Some(default_payload()),
        };
        let cmd = instantiate_step(program, *index, &bindings).expect("walker stays in bounds");
        *index += 1;
        self.tags.push(tag);

        let response = self.card.execute(&cmd);
        self.commands_executed += 1;
        let (verdict, matched) = classify_match(self.victim(), self.cursor, &cmd, &response);
        match verdict {
            Classification::CorrectTransition => {
                self.cursor = matched.expect("match index present") + 1;
                if self.status == SessionStatus::Running && self.cursor == self.victim().len() {
                    self.status = SessionStatus::Completed;
                }
            }
            Classification::DetectedError => {
                if self.status == SessionStatus::Running {
                    self.status = SessionStatus::TerminatedOnError;
                }
            }
            Classification::Anomaly => self.anomalies += 1,
        }
        verdict
    }
}

/// Depth-first walk that abandons error-terminated prefixes. One
/// representative run per errored prefix counts as visited; the other
/// completions of that prefix are counted analytically as pruned.
fn prune_dfs(walker: &mut Walker<'_>, report: &mut ExplorationReport) {
    if walker.done() {
        report.visited += 1;
        if walker.anomalies == 0 {
            report.completed_clean += 1;
        } else {
            report.completed_with_anomalies += 1;
            report
                .anomalous_schedules
                .push(Schedule(walker.tags.clone()));
        }
        return;
    }
    for tag in [Tag::A, Tag::B] {
        let available = match tag {
            Tag::A => walker.remaining_a() > 0,
            Tag::B => walker.remaining_b() > 0,
        };
        if !available {
            continue;
        }
        let snap = walker.snapshot();
        let verdict = walker.step(tag);
        if verdict == Classification::DetectedError {
            let subsumed = schedule_count(walker.remaining_a(), walker.remaining_b());
            report.visited += 1;
            report.terminated_on_error += 1;
            report.pruned += subsumed - 1;
        } else {
            prune_dfs(walker, report);
        }
        walker.restore(snap);
    }
}

/// Subtree outcome for memoization: every completable suffix with its
/// anomaly count, plus how many schedules below here end in an error.
#[derive(Clone, Debug)]
struct Summary {
    completions: Vec<(Vec<Tag>, u32)>,
    errored_schedules: u64,
}

type MemoKey = (CardState, usize, usize, usize, SessionStatus);

fn memo_dfs(walker: &mut Walker<'_>, memo: &mut BTreeMap<MemoKey, Summary>) -> Summary {
    if walker.done() {
        return Summary {
            completions: alloc::vec![(Vec::new(), 0)],
            errored_schedules: 0,
        };
    }
    let key: MemoKey = (
        walker.card.snapshot(),
        walker.next_a,
        walker.next_b,
        walker.cursor,
        walker.status,
    );
    if let Some(summary) = memo.get(&key) {
        return summary.clone();
    }

    let mut summary = Summary {
        completions: Vec::new(),
        errored_schedules: 0,
    };
    for tag in [Tag::A, Tag::B] {
        let available = match tag {
            Tag::A => walker.remaining_a() > 0,
            Tag::B => walker.remaining_b() > 0,
        };
        if !available {
            continue;
        }
        let snap = walker.snapshot();
        let verdict = walker.step(tag);
        match verdict {
            Classification::DetectedError => {
                summary.errored_schedules +=
                    schedule_count(walker.remaining_a(), walker.remaining_b());
            }
            _ => {
                let delta = u32::from(verdict == Classification::Anomaly);
                let sub = memo_dfs(walker, memo);
                summary.errored_schedules += sub.errored_schedules;
                for (suffix, anomalies) in sub.completions {
                    let mut tags = Vec::with_capacity(suffix.len() + 1);
                    tags.push(tag);
                    tags.extend(suffix);
                    summary.completions.push((tags, anomalies + delta));
                }
            }
        }
        walker.restore(snap);
    }
    memo.insert(key, summary.clone());
    summary
}

/// For each position `p` in `1..=len(base)`, yields `base` with `loop_cmd`
/// inserted after the first `p` commands.
pub fn loopback_variants<'a>(
    base: &'a [CommandApdu],
    loop_cmd: &CommandApdu,
) -> impl Iterator<Item = Vec<CommandApdu>> + 'a {
    let loop_cmd = loop_cmd.clone();
    (1..=base.len()).map(move |p| {
        let mut variant = Vec::with_capacity(base.len() + 1);
        variant.extend_from_slice(&base[..p]);
        variant.push(loop_cmd.clone());
        variant.extend_from_slice(&base[p..]);
        variant
    })
}

/// Outcome of inserting the challenge pair at every possible point of the
/// victim program.
#[derive(Clone, Debug)]
pub struct SweepReport {
    /// (insertion point, terminal) for each of the `len + 1` points.
    pub points: Vec<(usize, Terminal)>,
    /// True when every insertion completed with exactly one anomaly per
    /// inserted command.
    pub all_anomalous_complete: bool,
}

/// Inserts the foreign `pair` (typically the Get/Give Challenge steps)
/// before, between and after every step of `victim`, runs each variant on
/// a fresh card and reports the terminals.
pub fn challenge_insertion_sweep(
    victim: &StraightLineProgram,
    pair: &StraightLineProgram,
    profile: &CardProfile,
    seed: u64,
) -> SweepReport {
    let expected = pair.len() as u32;
    let mut points = Vec::with_capacity(victim.len() + 1);
    let mut all_ok = true;
    for point in 0..=victim.len() {
        let mut tags = Vec::with_capacity(victim.len() + pair.len());
        tags.extend(core::iter::repeat_n(Tag::B, point));
        tags.extend(core::iter::repeat_n(Tag::A, pair.len()));
        tags.extend(core::iter::repeat_n(Tag::B, victim.len() - point));
        let result = run_schedule(&Schedule(tags), pair, victim, profile, seed);
        all_ok &= result.terminal == Terminal::CompletedWithAnomalies(expected);
        points.push((point, result.terminal));
    }
    SweepReport {
        points,
        all_anomalous_complete: all_ok,
    }
}
