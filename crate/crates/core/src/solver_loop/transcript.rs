//! JSON-lines transcript records, one file per run.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use thiserror::Error;

use super::{RunStatus, Verdict};
use crate::backend::Usage;
use crate::bench_io::parse_map_named;
use crate::grid::{Coord, Instance};
use crate::prompting::{parse_os_response, parse_sbs_response, Mode, PromptVariant, Role};
use crate::validator::{check_plan, check_step, JointConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartReason {
    ContextBudget,
    RateLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptRecord {
    /// Always first: enough to rebuild the instance for replay.
    Meta {
        map_name: String,
        /// Full map file text.
        map: String,
        starts: Vec<Coord>,
        goals: Vec<Coord>,
        variant: PromptVariant,
        backend: String,
        model_id: String,
    },
    Message {
        session: usize,
        step: usize,
        role: Role,
        text: String,
        image: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        usage: Option<Usage>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        ts_ms: Option<u64>,
    },
    Verdict {
        step: usize,
        iteration: usize,
        verdict: Verdict,
    },
    Restart {
        session: usize,
        step: usize,
        reason: RestartReason,
    },
    End {
        status: RunStatus,
    },
}

pub fn write_transcript(path: &Path, records: &[TranscriptRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_transcript(path: &Path) -> std::io::Result<Vec<TranscriptRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("transcript does not start with a meta record")]
    NoMeta,
    #[error("transcript instance is invalid: {0}")]
    Instance(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub step: usize,
    pub iteration: usize,
    pub session: usize,
    /// Independently recomputed.
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub instance: Instance,
    pub variant: PromptVariant,
    pub entries: Vec<ReplayEntry>,
    /// Accepted configurations (SBS) or the last valid plan (OS).
    pub plan: Vec<JointConfig>,
    pub status: Option<RunStatus>,
    /// Places where the recorded verdict disagrees with the recomputed one.
    pub mismatches: Vec<String>,
}

fn same_kind(recomputed: &Verdict, recorded: &Verdict) -> bool {
    match (recomputed, recorded) {
        (Verdict::Accepted, Verdict::TooLong { .. }) => true,
        (Verdict::Unparseable { .. }, Verdict::Unparseable { .. }) => true,
        (a, b) => a == b,
    }
}

/// Re-checks every reply of a transcript against the rules, without trusting
/// the recorded verdicts.
pub fn replay(records: &[TranscriptRecord]) -> Result<Replay, ReplayError> {
    let Some(TranscriptRecord::Meta { map_name, map, starts, goals, variant, .. }) = records.first() else {
        return Err(ReplayError::NoMeta);
    };
    let grid = parse_map_named(map, map_name).map_err(|e| ReplayError::Instance(e.to_string()))?;
    let instance =
        Instance::new(grid, starts.clone(), goals.clone()).map_err(|e| ReplayError::Instance(e.to_string()))?;
    let n = instance.num_agents();
    let mut positions = JointConfig(starts.clone());
    let mut plan = vec![positions.clone()];
    let mut entries: Vec<ReplayEntry> = Vec::new();
    let mut mismatches = Vec::new();
    let mut status = None;
    let mut awaiting = false;

    for rec in &records[1..] {
        match rec {
            TranscriptRecord::Message { role: Role::Assistant, text, step, session, .. } => {
                let iteration = entries.iter().filter(|e| e.step == *step).count() + 1;
                let verdict = match variant.mode {
                    Mode::Sbs => match parse_sbs_response(text, n) {
                        Err(e) => Verdict::Unparseable { message: e.to_string() },
                        Ok(next) => {
                            let r = check_step(instance.map(), &positions, &next).expect("n agents");
                            if r.valid() {
                                positions = next;
                                plan.push(positions.clone());
                                Verdict::Accepted
                            } else {
                                Verdict::Violations { at_step: None, violations: r.violations }
                            }
                        }
                    },
                    Mode::Os => match parse_os_response(text, n) {
                        Err(e) => Verdict::Unparseable { message: e.to_string() },
                        Ok(steps) => {
                            let mut full = vec![positions.clone()];
                            full.extend(steps);
                            let r = check_plan(&instance, &full).expect("n agents");
                            if let Some(f) = r.first_failure() {
                                Verdict::Violations { at_step: Some(f.step), violations: f.report.violations.clone() }
                            } else if let Some(m) = r.makespan {
                                full.truncate(m + 1);
                                plan = full;
                                Verdict::Accepted
                            } else {
                                let last = full.last().unwrap();
                                let agents = (1..=n).filter(|&i| last.agent(i) != instance.goals()[i - 1]).collect();
                                Verdict::OffGoal { agents }
                            }
                        }
                    },
                };
                entries.push(ReplayEntry { step: *step, iteration, session: *session, verdict });
                awaiting = true;
            }
            TranscriptRecord::Verdict { step, iteration, verdict } => {
                match entries.last() {
                    Some(e) if awaiting && e.step == *step && e.iteration == *iteration => {
                        if !same_kind(&e.verdict, verdict) {
                            mismatches.push(format!(
                                "step {step} iteration {iteration}: recorded {verdict:?}, recomputed {:?}",
                                e.verdict
                            ));
                        }
                    }
                    _ => mismatches.push(format!("step {step} iteration {iteration}: verdict without a matching reply")),
                }
                awaiting = false;
            }
            TranscriptRecord::End { status: s } => status = Some(*s),
            _ => {}
        }
    }
    if status == Some(RunStatus::Success) && !check_plan(&instance, &plan).is_ok_and(|r| r.solved()) {
        mismatches.push("recorded success but the replayed plan does not solve the instance".into());
    }
    Ok(Replay { instance, variant: *variant, entries, plan, status, mismatches })
}
