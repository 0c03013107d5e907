//! Reading the final `Agent i: (x,y)` block(s) out of a free-form reply.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::Mode;
use crate::grid::Coord;
use crate::validator::JointConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no block of agent coordinates found")]
    NoBlock,
    #[error("malformed coordinate line '{0}'")]
    Malformed(String),
    #[error("agent {0} appears more than once")]
    Duplicate(usize),
    #[error("agent {0} does not exist")]
    UnknownAgent(usize),
    #[error("missing agent {}", crate::validator::join_ids(.0))]
    Missing(Vec<usize>),
    #[error("no step-labeled plan found")]
    NoPlan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedResponse {
    Step(JointConfig),
    Plan(Vec<JointConfig>),
}

fn agent_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // optional list/markdown decoration, "Agent 3: (x, y)" with anything inside the parentheses
    RE.get_or_init(|| {
        Regex::new(r"^[\s\-\*>#]*Agent\s*(\d+)\**\s*:\s*\**\s*\(([^()]*)\)\s*\**\s*[.,;]?\s*$").unwrap()
    })
}

fn coord_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(-?\d+)\s*,\s*(-?\d+)\s*$").unwrap())
}

fn step_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\s\-\*>#]*Step\s*(\d+)[^:]*:\s*\**\s*$").unwrap())
}

/// Agent lines of the last contiguous block (blank lines do not break a
/// block, any other line does).
fn last_block(lines: &[&str]) -> Option<Vec<(usize, String)>> {
    let mut current: Vec<(usize, String)> = Vec::new();
    let mut last: Option<Vec<(usize, String)>> = None;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(cap) = agent_line_re().captures(line) {
            let id = cap[1].parse().unwrap_or(0);
            current.push((id, line.trim().to_string()));
        } else if !current.is_empty() {
            last = Some(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        last = Some(current);
    }
    last
}

fn block_to_config(block: &[(usize, String)], n: usize) -> Result<JointConfig, ParseError> {
    let mut slots: Vec<Option<Coord>> = vec![None; n];
    for (id, line) in block {
        let cap = agent_line_re().captures(line).expect("block lines match");
        let c = coord_re()
            .captures(&cap[2])
            .and_then(|c| Some(Coord::new(c[1].parse().ok()?, c[2].parse().ok()?)))
            .ok_or_else(|| ParseError::Malformed(line.clone()))?;
        if *id == 0 || *id > n {
            return Err(ParseError::UnknownAgent(*id));
        }
        if slots[id - 1].replace(c).is_some() {
            return Err(ParseError::Duplicate(*id));
        }
    }
    let missing: Vec<usize> = (1..=n).filter(|i| slots[i - 1].is_none()).collect();
    if !missing.is_empty() {
        return Err(ParseError::Missing(missing));
    }
    Ok(JointConfig(slots.into_iter().map(Option::unwrap).collect()))
}

/// Last block of `Agent i: (x,y)` lines; every agent `1..=n` exactly once.
pub fn parse_sbs_response(text: &str, n: usize) -> Result<JointConfig, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let block = last_block(&lines).ok_or(ParseError::NoBlock)?;
    block_to_config(&block, n)
}

/// Configurations for steps 1, 2, ... taken from the last run of
/// consecutively labeled `Step t:` groups that starts at step 1.
pub fn parse_os_response(text: &str, n: usize) -> Result<Vec<JointConfig>, ParseError> {
    let mut groups: Vec<(usize, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        if let Some(cap) = step_header_re().captures(line) {
            groups.push((cap[1].parse().unwrap_or(usize::MAX), Vec::new()));
        } else if let Some((_, body)) = groups.last_mut() {
            body.push(line);
        }
    }
    let start = groups
        .iter()
        .rposition(|(label, _)| *label == 1)
        .ok_or(ParseError::NoPlan)?;
    let mut out = Vec::new();
    for (k, (label, body)) in groups[start..].iter().enumerate() {
        if *label != k + 1 {
            break;
        }
        let block = last_block(body).ok_or(ParseError::NoBlock)?;
        out.push(block_to_config(&block, n)?);
    }
    Ok(out)
}

pub fn parse_response(text: &str, n: usize, mode: Mode) -> Result<ParsedResponse, ParseError> {
    match mode {
        Mode::Sbs => parse_sbs_response(text, n).map(ParsedResponse::Step),
        Mode::Os => parse_os_response(text, n).map(ParsedResponse::Plan),
    }
}

/// `Agent 1: (x,y)` lines, the format the system prompt asks for.
pub fn render_response_block(c: &JointConfig) -> String {
    c.positions()
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Agent {}: {p}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `Step t:` groups for steps 1.. of a plan (step 0 omitted).
pub fn render_os_response(steps: &[JointConfig]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(t, c)| format!("Step {}:\n{}", t + 1, render_response_block(c)))
        .collect::<Vec<_>>()
        .join("\n\n")
}
