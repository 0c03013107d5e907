//! Prompt construction for every variant (map encoding x SSO x mode) and
//! parsing of model replies.
//!
//! All texts are joined with single newlines and carry no trailing newline.

mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bench_io::{render_ascii, render_image, MapImage};
use crate::grid::{Coord, GridMap, Instance};
use crate::validator::{join_ids, ValidationReport, Violation};

pub use parse::{
    parse_os_response, parse_response, parse_sbs_response, render_os_response,
    render_response_block, ParseError, ParsedResponse,
};

const SYSTEM_TEMPLATE: &str = include_str!("../../assets/prompts/system_prompt.txt");
const OS_SYSTEM_TEMPLATE: &str = include_str!("../../assets/prompts/os_system_prompt.txt");
pub const MAP_SLOT: &str = "[[Map Description]]";

pub const SUCCESS_PREFIX: &str = "Good job. Keep moving.";
const NEXT_STEP: &str = "In the next step:";
const CORRECT_STEP: &str = "Please correct the current step.";
const CORRECT_PLAN: &str = "Please correct the plan.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapEncoding {
    None,
    Tom,
    Too,
    Mm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sbs,
    Os,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptVariant {
    pub map_encoding: MapEncoding,
    pub sso: bool,
    pub mode: Mode,
}

impl Default for PromptVariant {
    fn default() -> Self {
        Self {
            map_encoding: MapEncoding::Tom,
            sso: true,
            mode: Mode::Sbs,
        }
    }
}

impl PromptVariant {
    pub fn new(mode: Mode, map_encoding: MapEncoding, sso: bool) -> Self {
        Self { map_encoding, sso, mode }
    }

    /// Maps without obstacles get no map paragraph at all.
    pub fn for_map(self, map: &GridMap) -> Self {
        if map.obstacle_count() == 0 {
            Self { map_encoding: MapEncoding::None, ..self }
        } else {
            self
        }
    }

    /// Short stable label, e.g. `sbs-tom-sso` or `os-none`.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            Mode::Sbs => "sbs",
            Mode::Os => "os",
        };
        let enc = match self.map_encoding {
            MapEncoding::None => "none",
            MapEncoding::Tom => "tom",
            MapEncoding::Too => "too",
            MapEncoding::Mm => "mm",
        };
        if self.sso {
            format!("{mode}-{enc}-sso")
        } else {
            format!("{mode}-{enc}")
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: Role,
    pub text: String,
    pub image: Option<MapImage>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into(), image: None }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into(), image: None }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into(), image: None }
    }
}

/// The map phrase substituted into the system prompt.
pub fn map_description(map: &GridMap) -> String {
    let (w, h) = (map.width(), map.height());
    let name = map.name();
    if map.obstacle_count() == 0 {
        format!("a map with size {w}*{h} and no obstacle")
    } else if name.starts_with("room") {
        format!("room-like map with size {w}*{h}")
    } else if name.starts_with("maze") {
        format!("maze-like map with size {w}*{h}")
    } else {
        format!("a map with size {w}*{h}")
    }
}

fn fill_slot(template: &str, map_description: &str) -> String {
    if map_description.is_empty() {
        log::warn!("system prompt built with an empty map description");
    }
    template.replace(MAP_SLOT, map_description)
}

/// Step-by-step system prompt with the map slot filled in.
pub fn system_prompt(map_description: &str) -> Message {
    Message::system(fill_slot(SYSTEM_TEMPLATE, map_description))
}

/// Whole-plan variant of the system prompt (no single-step restriction).
pub fn os_system_prompt(map_description: &str) -> Message {
    Message::system(fill_slot(OS_SYSTEM_TEMPLATE, map_description))
}

pub fn system_prompt_for(mode: Mode, map: &GridMap) -> Message {
    let desc = map_description(map);
    match mode {
        Mode::Sbs => system_prompt(&desc),
        Mode::Os => os_system_prompt(&desc),
    }
}

/// `Agent 1 can move ['stay at (0, 2)', 'right to (1, 2)', ...].`
pub fn sso_line(agent: usize, map: &GridMap, c: Coord) -> String {
    let moves = map
        .valid_actions(c)
        .unwrap_or_default()
        .into_iter()
        .map(|(a, t)| {
            let prep = if a == crate::grid::Action::Stay { "at" } else { "to" };
            format!("'{} {prep} ({}, {})'", a.word(), t.x, t.y)
        })
        .collect::<Vec<_>>()
        .join(", ");
    format!("Agent {agent} can move [{moves}].")
}

pub fn sso_lines(map: &GridMap, positions: &[Coord]) -> Vec<String> {
    positions
        .iter()
        .enumerate()
        .map(|(i, &c)| sso_line(i + 1, map, c))
        .collect()
}

pub const TOM_HEADER: &str = "The map is as follows, where '@' denotes a cell with an obstacle that an agent cannot pass, and '.' denotes an empty cell that an agent can pass.";

fn orientation_line(map: &GridMap) -> String {
    format!(
        "The bottom-left cell is (0,0) and the bottom-right cell is ({},0)",
        map.width() - 1
    )
}

/// Obstacle list in row-major order (ascending y, then x).
pub fn obstacle_list_line(map: &GridMap) -> String {
    let obstacles = map.obstacles();
    if obstacles.is_empty() {
        return "There are no obstacles.".to_string();
    }
    let list = obstacles
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    format!("The obstacles are located at: {list}.")
}

pub const MM_IMAGE_CELL_SIZE: usize = 16;

/// The first user message of a session: agent lines, optional map
/// paragraph, optional single-step observations.
pub fn scenario_prompt(inst: &Instance, v: PromptVariant) -> Message {
    let map = inst.map();
    let mut lines: Vec<String> = inst
        .starts()
        .iter()
        .zip(inst.goals())
        .enumerate()
        .map(|(i, (s, g))| format!("Agent {} is currently in {s}, and wants to go to {g}.", i + 1))
        .collect();
    let mut image = None;
    match v.map_encoding {
        MapEncoding::None => {}
        MapEncoding::Tom => {
            lines.push(TOM_HEADER.to_string());
            lines.push(format!("{}:", orientation_line(map)));
            lines.push(render_ascii(map));
        }
        MapEncoding::Too => lines.push(obstacle_list_line(map)),
        MapEncoding::Mm => {
            lines.push(format!(
                "The map is given in the attached image, where black cells are obstacles that an agent cannot pass, and white cells are empty cells that an agent can pass. {}.",
                orientation_line(map)
            ));
            image = Some(render_image(map, MM_IMAGE_CELL_SIZE));
        }
    }
    if v.sso {
        lines.push(NEXT_STEP.to_string());
        lines.extend(sso_lines(map, inst.starts()));
    }
    Message {
        role: Role::User,
        text: lines.join("\n"),
        image,
    }
}

fn vertex_sentence(groups: &[Vec<usize>]) -> String {
    let pairs = groups
        .iter()
        .map(|g| format!("({})", join_ids(g)))
        .collect::<Vec<_>>()
        .join(", ");
    format!("Agent {pairs} are colliding with each other.")
}

fn obstacle_sentence(ids: &[usize]) -> String {
    format!("Agent {} is colliding with obstacles.", join_ids(ids))
}

/// Failure sentences in feedback order: vertex, obstacle, illegal move,
/// out of bounds. The last two are harness wording.
fn failure_sentences(report: &ValidationReport) -> Vec<String> {
    let mut out = Vec::new();
    let groups: Vec<Vec<usize>> = report.vertex_conflicts().map(|(a, _)| a.to_vec()).collect();
    if !groups.is_empty() {
        out.push(vertex_sentence(&groups));
    }
    let obstacle = report.obstacle_agents();
    if !obstacle.is_empty() {
        out.push(obstacle_sentence(&obstacle));
    }
    for v in &report.violations {
        if let Violation::IllegalMove { agent, from, to } = v {
            out.push(format!(
                "Agent {agent} cannot move from {from} to {to} because the two cells are not adjacent."
            ));
        }
    }
    for v in &report.violations {
        if let Violation::OutOfBounds { agent, cell } = v {
            out.push(format!("Agent {agent} is moving out of the map to {cell}."));
        }
    }
    out
}

/// Per-iteration user message after a reply was checked. `next_sso` is
/// only used when the step was valid.
pub fn feedback_message(report: &ValidationReport, next_sso: Option<&[String]>) -> String {
    if report.valid() {
        return match next_sso {
            Some(lines) => {
                let mut out = vec![format!("{SUCCESS_PREFIX} {NEXT_STEP}")];
                out.extend(lines.iter().cloned());
                out.join("\n")
            }
            None => SUCCESS_PREFIX.to_string(),
        };
    }
    failure_sentences(report)
        .into_iter()
        .map(|s| format!("You are wrong. {s} {CORRECT_STEP}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Feedback for a reply that has no usable final block.
pub fn parse_error_feedback(err: &ParseError, mode: Mode) -> String {
    let format_hint = match mode {
        Mode::Sbs => "Agent 1: (x,y)",
        Mode::Os => "Step 1: followed by Agent 1: (x,y)",
    };
    let tail = match mode {
        Mode::Sbs => CORRECT_STEP,
        Mode::Os => CORRECT_PLAN,
    };
    format!(
        "You are wrong. Your output could not be read: {err}. End your output with the validated solution in the format {format_hint}, one line per agent. {tail}"
    )
}

/// Whole-plan feedback naming the first failing step.
pub fn os_step_feedback(step: usize, report: &ValidationReport) -> String {
    format!(
        "You are wrong. The plan is invalid at step {step}. {} {CORRECT_PLAN}",
        failure_sentences(report).join(" ")
    )
}

pub fn os_goal_feedback(agents_off_goal: &[usize]) -> String {
    format!(
        "You are wrong. At the end of the plan, Agent {} is not at the goal location. {CORRECT_PLAN}",
        join_ids(agents_off_goal)
    )
}

pub fn is_success_feedback(text: &str) -> bool {
    text.starts_with(SUCCESS_PREFIX)
}
