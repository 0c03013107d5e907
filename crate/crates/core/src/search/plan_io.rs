//! Line-per-step plan text: `t: (x1,y1) (x2,y2) ...`.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::grid::Coord;
use crate::validator::JointConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanFormatError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("plan file has no steps")]
    Empty,
}

pub fn render_plan(steps: &[JointConfig]) -> String {
    let mut out = String::new();
    for (t, cfg) in steps.iter().enumerate() {
        out.push_str(&format!("{t}:"));
        for c in cfg.positions() {
            out.push_str(&format!(" ({},{})", c.x, c.y));
        }
        out.push('\n');
    }
    out
}

fn coord_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)").unwrap())
}

/// Parses [`render_plan`] output. Step labels must run 0, 1, 2, ...
pub fn parse_plan(text: &str) -> Result<Vec<JointConfig>, PlanFormatError> {
    let mut steps = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| PlanFormatError::Line { line: idx + 1, msg };
        let (label, rest) = line
            .split_once(':')
            .ok_or_else(|| err("missing `t:` label".into()))?;
        let t: usize = label
            .trim()
            .parse()
            .map_err(|_| err(format!("bad step label {label:?}")))?;
        if t != steps.len() {
            return Err(err(format!("expected step {}, found {t}", steps.len())));
        }
        let coords: Vec<Coord> = coord_re()
            .captures_iter(rest)
            .map(|c| Coord::new(c[1].parse().unwrap(), c[2].parse().unwrap()))
            .collect();
        let leftover = coord_re().replace_all(rest, "");
        if !leftover.trim().is_empty() {
            return Err(err(format!("unexpected text {:?}", leftover.trim())));
        }
        if let Some(first) = steps.first().map(|s: &JointConfig| s.len()) {
            if coords.len() != first {
                return Err(err(format!("{} agents, previous steps have {first}", coords.len())));
            }
        }
        steps.push(JointConfig(coords));
    }
    if steps.is_empty() {
        return Err(PlanFormatError::Empty);
    }
    Ok(steps)
}
