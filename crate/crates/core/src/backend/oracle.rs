//! A backend that answers like a model but plans with the classic
//! prioritized planner. It reads the conversation the way a model would:
//! starts and goals from the scenario message, progress from which replies
//! were acknowledged with the success feedback.

use std::sync::OnceLock;

use regex::Regex;

use super::{BackendError, ChatBackend, ChatRequest, Completion};
use crate::grid::{apply_action, Action, Coord, GridMap, Instance};
use crate::prompting::{
    is_success_feedback, parse_sbs_response, render_os_response, render_response_block, Mode, Role,
};
use crate::search::prioritized_plan_with_restarts;
use crate::validator::JointConfig;

pub struct OracleAgent {
    map: GridMap,
    mode: Mode,
    restarts: usize,
    seed: u64,
    // goals and the plan currently being followed
    cache: Option<(Vec<Coord>, Vec<JointConfig>)>,
}

fn scenario_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"Agent (\d+) is currently in \((-?\d+),(-?\d+)\), and wants to go to \((-?\d+),(-?\d+)\)\.")
            .unwrap()
    })
}

/// Starts and goals from the agent lines of a scenario prompt.
pub fn parse_scenario_text(text: &str) -> Option<(Vec<Coord>, Vec<Coord>)> {
    let mut rows: Vec<(usize, Coord, Coord)> = scenario_re()
        .captures_iter(text)
        .map(|c| {
            let n = |i: usize| c[i].parse::<i32>().unwrap();
            (c[1].parse().unwrap(), Coord::new(n(2), n(3)), Coord::new(n(4), n(5)))
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    let ids_ok = rows.iter().enumerate().all(|(i, r)| r.0 == i + 1);
    if rows.is_empty() || !ids_ok {
        return None;
    }
    Some((rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect()))
}

impl OracleAgent {
    pub fn new(map: GridMap, mode: Mode) -> Self {
        Self {
            map,
            mode,
            restarts: 20,
            seed: super::DEFAULT_SEED,
            cache: None,
        }
    }

    pub fn with_restarts(mut self, restarts: usize, seed: u64) -> Self {
        self.restarts = restarts;
        self.seed = seed;
        self
    }

    fn plan_from(&mut self, pos: &[Coord], goals: &[Coord]) -> Result<Vec<JointConfig>, BackendError> {
        let inst = Instance::new(self.map.clone(), pos.to_vec(), goals.to_vec())
            .map_err(|e| BackendError::Oracle(e.to_string()))?;
        let plan = prioritized_plan_with_restarts(&inst, self.restarts, self.seed)
            .map_err(|e| BackendError::Oracle(e.to_string()))?;
        self.cache = Some((goals.to_vec(), plan.steps.clone()));
        Ok(plan.steps)
    }

    /// Follows the cached plan while the agents are on it, replans otherwise.
    fn next_config(&mut self, pos: &[Coord], goals: &[Coord]) -> Result<JointConfig, BackendError> {
        if let Some((g, steps)) = &self.cache {
            if g.as_slice() == goals {
                if let Some(k) = steps.iter().position(|c| c.positions() == pos) {
                    return Ok(steps.get(k + 1).unwrap_or(&steps[k]).clone());
                }
            }
        }
        let steps = self.plan_from(pos, goals)?;
        Ok(steps.get(1).unwrap_or(&steps[0]).clone())
    }
}

fn move_text(from: Coord, to: Coord, goal: Coord) -> String {
    if from == to {
        return if from == goal {
            "Stay, as it has already reached its goal.".into()
        } else {
            "Stay, to let another agent pass.".into()
        };
    }
    let action = Action::ALL
        .into_iter()
        .find(|&a| apply_action(from, a) == to)
        .unwrap_or(Action::Stay);
    let word = action.word();
    let mut cap = word[..1].to_uppercase();
    cap.push_str(&word[1..]);
    format!("{cap} to {to}")
}

fn step_text(step: usize, pos: &[Coord], next: &JointConfig, goals: &[Coord]) -> String {
    let mut out = format!("Step {step}:\n");
    for (i, ((&c, &n), &g)) in pos.iter().zip(next.positions()).zip(goals).enumerate() {
        out.push_str(&format!(
            "Agent {}:\nCurrent: {c}\nGoal: {g}\nMove: {}\n\n",
            i + 1,
            move_text(c, n, g)
        ));
    }
    let block = render_response_block(next);
    out.push_str(&format!(
        "After the move, the coordinates of the agents are:\n{block}\n\nThere is no collision. Here is the validated solution:\n\n{block}"
    ));
    out
}

impl ChatBackend for OracleAgent {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn complete(&mut self, req: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        let msgs = req.messages;
        let scenario = msgs
            .iter()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| BackendError::Oracle("no scenario message".into()))?;
        let (mut pos, goals) = parse_scenario_text(&scenario.text)
            .ok_or_else(|| BackendError::Oracle("scenario message has no agent lines".into()))?;
        let n = goals.len();

        let mut accepted = 0;
        for pair in msgs.windows(2) {
            if pair[0].role == Role::Assistant && pair[1].role == Role::User && is_success_feedback(&pair[1].text) {
                let c = parse_sbs_response(&pair[0].text, n)
                    .map_err(|e| BackendError::Oracle(format!("accepted reply unreadable: {e}")))?;
                pos = c.0;
                accepted += 1;
            }
        }

        let text = match self.mode {
            Mode::Sbs => {
                let next = self.next_config(&pos, &goals)?;
                step_text(accepted + 1, &pos, &next, &goals)
            }
            Mode::Os => {
                let mut steps = self.plan_from(&pos, &goals)?;
                if steps.len() == 1 {
                    steps.push(steps[0].clone());
                }
                format!(
                    "Here is the validated plan:\n\n{}",
                    render_os_response(&steps[1..])
                )
            }
        };
        Ok(Completion { text, usage: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_io::symmetry_instance;
    use crate::prompting::{
        feedback_message, parse_os_response, scenario_prompt, Message, PromptVariant,
    };
    use crate::validator::{check_plan, check_step, ValidationReport};

    fn ask(o: &mut OracleAgent, msgs: &[Message]) -> String {
        o.complete(&ChatRequest { messages: msgs, model_id: "oracle", temperature: 1.0, seed: 42 })
            .unwrap()
            .text
    }

    #[test]
    fn scenario_text_round_trip() {
        let inst = symmetry_instance();
        let msg = scenario_prompt(&inst, PromptVariant::default());
        let (s, g) = parse_scenario_text(&msg.text).unwrap();
        assert_eq!(s, inst.starts());
        assert_eq!(g, inst.goals());
        assert!(parse_scenario_text("nothing here").is_none());
    }

    #[test]
    fn first_step_is_valid_and_parseable() {
        let inst = symmetry_instance();
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Sbs);
        let msgs = vec![Message::system("s"), scenario_prompt(&inst, PromptVariant::default())];
        let text = ask(&mut o, &msgs);
        assert!(text.starts_with("Step 1:\nAgent 1:\nCurrent: (0,2)\nGoal: (3,1)\nMove: "));
        let next = parse_sbs_response(&text, 2).unwrap();
        let cur = JointConfig(inst.starts().to_vec());
        assert!(check_step(inst.map(), &cur, &next).unwrap().valid());
    }

    #[test]
    fn follows_acknowledged_progress() {
        let inst = symmetry_instance();
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Sbs);
        let mut msgs = vec![Message::system("s"), scenario_prompt(&inst, PromptVariant::default())];
        let mut plan = vec![JointConfig(inst.starts().to_vec())];
        for _ in 0..8 {
            let text = ask(&mut o, &msgs);
            let next = parse_sbs_response(&text, 2).unwrap();
            msgs.push(Message::assistant(text));
            msgs.push(Message::user(feedback_message(&ValidationReport::default(), None)));
            plan.push(next);
        }
        let report = check_plan(&inst, &plan).unwrap();
        assert!(report.solved());
        assert_eq!(report.makespan, Some(5));
    }

    #[test]
    fn replans_from_foreign_positions() {
        let inst = symmetry_instance();
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Sbs);
        let msgs = vec![
            Message::system("s"),
            scenario_prompt(&inst, PromptVariant::default()),
            Message::assistant("Agent 1: (0,1)\nAgent 2: (0,3)"),
            Message::user("Good job. Keep moving."),
        ];
        let text = ask(&mut o, &msgs);
        assert!(text.starts_with("Step 2:\nAgent 1:\nCurrent: (0,1)"));
        let next = parse_sbs_response(&text, 2).unwrap();
        let cur = JointConfig(vec![Coord::new(0, 1), Coord::new(0, 3)]);
        assert!(check_step(inst.map(), &cur, &next).unwrap().valid());
    }

    #[test]
    fn os_mode_emits_whole_plan() {
        let inst = symmetry_instance();
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Os);
        let msgs = vec![Message::system("s"), scenario_prompt(&inst, PromptVariant::default())];
        let steps = parse_os_response(&ask(&mut o, &msgs), 2).unwrap();
        let mut plan = vec![JointConfig(inst.starts().to_vec())];
        plan.extend(steps);
        assert!(check_plan(&inst, &plan).unwrap().solved());
    }

    #[test]
    fn move_texts() {
        let c = Coord::new;
        assert_eq!(move_text(c(0, 2), c(1, 2), c(3, 1)), "Right to (1,2)");
        assert_eq!(move_text(c(1, 3), c(1, 2), c(2, 0)), "Down to (1,2)");
        assert_eq!(move_text(c(1, 0), c(1, 0), c(1, 0)), "Stay, as it has already reached its goal.");
    }
}
