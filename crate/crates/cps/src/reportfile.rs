//! Exploration report files: a machine-readable line block plus a helper
//! that renders the human summary.
//!
//! ```text
//! CPS-REPORT 1
//! strategy exhaustive
//! program-a P1-INCRYPTO
//! program-b P2-CARDOS
//! profile cardos
//! seed 7
//! cap 22
//! total 3003
//! visited 3003
//! pruned 0
//! commands 12345
//! clean 0
//! anomalous 0
//! errored 3003
//! wall-ms 87
//! schedule AABAB
//! END
//! ```
//!
//! One `schedule` line per anomalous-complete schedule, lexicographically
//! ordered, so reports from different strategies diff cleanly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cps_core::explore::{ExplorationReport, Schedule, Strategy};
use thiserror::Error;

pub const REPORT_VERSION: u32 = 1;

/// A report plus the context it was produced in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportDoc {
    pub program_a: String,
    pub program_b: String,
    pub profile: String,
    pub seed: u64,
    pub cap: usize,
    pub report: ExplorationReport,
}

#[derive(Debug, Error)]
pub enum ReportFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported report version {found}")]
    VersionMismatch { found: String },
    #[error("missing '{0}' field")]
    Missing(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn err(line: usize, message: impl Into<String>) -> ReportFileError {
    ReportFileError::Parse {
        line,
        message: message.into(),
    }
}

pub fn to_text(doc: &ReportDoc) -> String {
    let r = &doc.report;
    let mut out = format!("CPS-REPORT {REPORT_VERSION}\n");
    let _ = writeln!(out, "strategy {}", r.strategy.name());
    let _ = writeln!(out, "program-a {}", doc.program_a);
    let _ = writeln!(out, "program-b {}", doc.program_b);
    let _ = writeln!(out, "profile {}", doc.profile);
    let _ = writeln!(out, "seed {}", doc.seed);
    let _ = writeln!(out, "cap {}", doc.cap);
    let _ = writeln!(out, "total {}", r.total);
    let _ = writeln!(out, "visited {}", r.visited);
    let _ = writeln!(out, "pruned {}", r.pruned);
    let _ = writeln!(out, "commands {}", r.commands_executed);
    let _ = writeln!(out, "clean {}", r.completed_clean);
    let _ = writeln!(out, "anomalous {}", r.completed_with_anomalies);
    let _ = writeln!(out, "errored {}", r.terminated_on_error);
    let _ = writeln!(out, "wall-ms {}", r.wall_millis);
    for schedule in &r.anomalous_schedules {
        let _ = writeln!(out, "schedule {schedule}");
    }
    out.push_str("END\n");
    out
}

/// Writes the report file and returns the human-readable summary.
pub fn emit_report(path: &Path, doc: &ReportDoc) -> Result<String, ReportFileError> {
    fs::write(path, to_text(doc))?;
    Ok(summarize(doc))
}

pub fn summarize(doc: &ReportDoc) -> String {
    let r = &doc.report;
    let mut out = format!(
        "exploration of {} x {} on {} (seed {}, strategy {})\n",
        doc.program_a,
        doc.program_b,
        doc.profile,
        doc.seed,
        r.strategy.name()
    );
    let _ = writeln!(
        out,
        "  schedules: {} total, {} visited, {} pruned",
        r.total, r.visited, r.pruned
    );
    let _ = writeln!(
        out,
        "  terminals: {} clean, {} completed with anomalies, {} terminated on error",
        r.completed_clean, r.completed_with_anomalies, r.terminated_on_error
    );
    let _ = writeln!(
        out,
        "  commands executed: {} ({} ms)",
        r.commands_executed, r.wall_millis
    );
    if r.anomalous_schedules.is_empty() {
        out.push_str("  no schedule completed with anomalies\n");
    } else {
        let _ = writeln!(
            out,
            "  anomalous-complete schedules ({}):",
            r.anomalous_schedules.len()
        );
        for schedule in &r.anomalous_schedules {
            let _ = writeln!(out, "    {schedule}");
        }
    }
    out
}

pub fn read_report(path: &Path) -> Result<ReportDoc, ReportFileError> {
    parse_report(&fs::read_to_string(path)?)
}

pub fn parse_report(text: &str) -> Result<ReportDoc, ReportFileError> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    match head.strip_prefix("CPS-REPORT ") {
        Some("1") => {}
        Some(found) => {
            return Err(ReportFileError::VersionMismatch {
                found: found.into(),
            })
        }
        None => return Err(err(1, "expected 'CPS-REPORT <version>'")),
    }

    let mut fields: std::collections::BTreeMap<String, String> = Default::default();
    let mut schedules = Vec::new();
    let mut ended = false;
    for (index, line) in lines {
        let line_no = index + 1;
        if line == "END" {
            ended = true;
            break;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| err(line_no, format!("bad field line '{line}'")))?;
        if key == "schedule" {
            schedules.push(
                Schedule::parse(value)
                    .ok_or_else(|| err(line_no, format!("bad schedule '{value}'")))?,
            );
        } else {
            fields.insert(key.to_string(), value.to_string());
        }
    }
    if !ended {
        return Err(err(text.lines().count(), "missing END line"));
    }

    let get = |key: &'static str| fields.get(key).ok_or(ReportFileError::Missing(key));
    let num = |key: &'static str| -> Result<u64, ReportFileError> {
        get(key)?
            .parse()
            .map_err(|_| err(0, format!("field '{key}' is not a number")))
    };

    let strategy = Strategy::parse(get("strategy")?)
        .ok_or_else(|| err(0, format!("unknown strategy '{}'", fields["strategy"])))?;
    Ok(ReportDoc {
        program_a: get("program-a")?.clone(),
        program_b: get("program-b")?.clone(),
        profile: get("profile")?.clone(),
        seed: num("seed")?,
        cap: num("cap")? as usize,
        report: ExplorationReport {
            strategy,
            total: num("total")?,
            visited: num("visited")?,
            pruned: num("pruned")?,
            commands_executed: num("commands")?,
            completed_clean: num("clean")?,
            completed_with_anomalies: num("anomalous")?,
            terminated_on_error: num("errored")?,
            anomalous_schedules: schedules,
            wall_millis: num("wall-ms")?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ReportDoc {
        ReportDoc {
            program_a: "P1-CHALLENGE".into(),
            program_b: "P2-CARDOS".into(),
            profile: "cardos".into(),
            seed: 7,
            cap: 22,
            report: ExplorationReport {
                strategy: Strategy::Exhaustive,
                total: 21,
                visited: 21,
                pruned: 0,
                commands_executed: 147,
                completed_clean: 0,
                completed_with_anomalies: 21,
                terminated_on_error: 0,
                anomalous_schedules: vec![Schedule::parse("AABBBBB").unwrap()],
                wall_millis: 3,
            },
        }
    }

    #[test]
    fn roundtrip() {
        let doc = sample();
        assert_eq!(parse_report(&to_text(&doc)).unwrap(), doc);
    }

    #[test]
    fn missing_end_is_rejected() {
        let text = to_text(&sample());
        let cut = text.trim_end().rfind('\n').unwrap();
        assert!(parse_report(&text[..cut + 1]).is_err());
    }

    #[test]
    fn summary_mentions_counts() {
        let summary = summarize(&sample());
        assert!(summary.contains("21 total"));
        assert!(summary.contains("AABBBBB"));
    }
}
