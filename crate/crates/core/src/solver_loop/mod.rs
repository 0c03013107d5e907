//! The closed query / check / feedback loop, step-by-step (SBS) and
//! one-shot (OS), with failure limits and session restarts.

mod transcript;

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatSession, Reply, Usage, DEFAULT_SEED, DEFAULT_TEMPERATURE};
use crate::bench_io::render_map_file;
use crate::grid::{Coord, Instance};
use crate::prompting::{
    feedback_message, os_goal_feedback, os_step_feedback, parse_error_feedback, parse_os_response,
    parse_sbs_response, scenario_prompt, sso_lines, system_prompt_for, MapEncoding, Message, Mode,
    PromptVariant,
};
use crate::search::{makespan_lower_bound, optimal_reference, OptimalReference, SearchError};
use crate::validator::{check_plan, check_step, JointConfig, Violation};

pub use transcript::{
    read_transcript, replay, write_transcript, Replay, ReplayEntry, ReplayError, RestartReason, TranscriptRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub variant: PromptVariant,
    pub max_consecutive_failures: usize,
    pub makespan_multiplier: f64,
    /// Proactive restart once a session's cumulative usage exceeds this.
    pub context_budget_tokens: u64,
    pub restart_on_rate_limit: bool,
    /// Consecutive rate-limit restarts tolerated before giving up.
    pub max_rate_limit_restarts: usize,
    pub timeout_secs: u64,
    pub temperature: f64,
    pub seed: u64,
    pub record_timestamps: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            variant: PromptVariant::default(),
            max_consecutive_failures: 5,
            makespan_multiplier: 3.0,
            context_budget_tokens: 100_000,
            restart_on_rate_limit: true,
            max_rate_limit_restarts: 5,
            timeout_secs: 30 * 60,
            temperature: DEFAULT_TEMPERATURE,
            seed: DEFAULT_SEED,
            record_timestamps: true,
        }
    }
}

impl LoopConfig {
    pub fn with_variant(variant: PromptVariant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        if self.max_consecutive_failures < 1 {
            return Err(LoopError::Config("max_consecutive_failures must be >= 1".into()));
        }
        // written so that NaN is rejected too
        if self.makespan_multiplier.is_nan() || self.makespan_multiplier < 1.0 {
            return Err(LoopError::Config("makespan_multiplier must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("bad loop config: {0}")]
    Config(String),
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    FailMakespan,
    FailIterations,
    FailBackend,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Success => "success",
            RunStatus::FailMakespan => "fail_makespan",
            RunStatus::FailIterations => "fail_iterations",
            RunStatus::FailBackend => "fail_backend",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Violations {
        /// Plan step of the first failure (one-shot mode only).
        #[serde(skip_serializing_if = "Option::is_none", default)]
        at_step: Option<usize>,
        violations: Vec<Violation>,
    },
    Unparseable { message: String },
    OffGoal { agents: Vec<usize> },
    TooLong { makespan: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: usize,
    /// 1-based reply index within the step.
    pub iteration: usize,
    pub session: usize,
    pub verdict: Verdict,
    /// Rejected replies in this step after the first feedback, this one included.
    pub corrective_failures: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTokens {
    pub step: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: RunStatus,
    pub mode: Mode,
    /// Accepted configurations, step 0 being the starts.
    pub plan_so_far: Vec<JointConfig>,
    pub makespan: Option<usize>,
    pub makespan_ratio: Option<f64>,
    pub lower_bound: usize,
    pub reference: OptimalReference,
    /// Largest step count allowed before FailMakespan.
    pub makespan_bound: usize,
    pub iterations_per_step: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    pub restarts: usize,
    pub token_log: Vec<StepTokens>,
    pub usage: Usage,
    pub error: Option<String>,
    #[serde(skip)]
    pub transcript: Vec<TranscriptRecord>,
}

impl RunResult {
    pub fn num_agents(&self) -> usize {
        self.plan_so_far.first().map_or(0, |c| c.len())
    }

    pub fn total_tokens(&self) -> u64 {
        self.usage.total()
    }

    /// Rejected replies recorded at `step`.
    pub fn failures_at(&self, step: usize) -> usize {
        self.iterations
            .iter()
            .filter(|r| r.step == step && r.verdict != Verdict::Accepted)
            .count()
    }
}

struct Ctx<'a> {
    inst: &'a Instance,
    cfg: &'a LoopConfig,
    backend: &'a mut dyn ChatBackend,
    session: ChatSession,
    session_idx: usize,
    transcript: Vec<TranscriptRecord>,
    restarts: usize,
    usage: Usage,
    token_log: Vec<StepTokens>,
    iterations: Vec<IterationRecord>,
    started: Instant,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl<'a> Ctx<'a> {
    fn new(inst: &'a Instance, cfg: &'a LoopConfig, backend: &'a mut dyn ChatBackend) -> Self {
        let variant = cfg.variant;
        let transcript = vec![TranscriptRecord::Meta {
            map_name: inst.map().name().to_string(),
            map: render_map_file(inst.map()),
            starts: inst.starts().to_vec(),
            goals: inst.goals().to_vec(),
            variant,
            backend: backend.label(),
            model_id: backend.model_id(),
        }];
        let session = ChatSession::new(Message::system(""), backend.model_id());
        Self {
            inst,
            cfg,
            backend,
            session,
            session_idx: 0,
            transcript,
            restarts: 0,
            usage: Usage::default(),
            token_log: Vec::new(),
            iterations: Vec::new(),
            started: Instant::now(),
        }
    }

    fn ts(&self) -> Option<u64> {
        self.cfg.record_timestamps.then(now_ms)
    }

    fn log_message(&mut self, step: usize, msg: &Message, usage: Option<Usage>) {
        let ts_ms = self.ts();
        self.transcript.push(TranscriptRecord::Message {
            session: self.session_idx,
            step,
            role: msg.role,
            text: msg.text.clone(),
            image: msg.image.is_some(),
            usage,
            ts_ms,
        });
    }

    /// Fresh session whose scenario treats `positions` as the starts;
    /// returns the scenario message to send next.
    fn open_session(&mut self, positions: &[Coord], step: usize) -> Message {
        let mode = self.cfg.variant.mode;
        let system = system_prompt_for(mode, self.inst.map());
        self.session = ChatSession::new(system.clone(), self.backend.model_id())
            .with_sampling(self.cfg.temperature, self.cfg.seed);
        self.log_message(step, &system, None);
        let inst = self
            .inst
            .with_starts(positions.to_vec())
            .expect("accepted positions form a valid configuration");
        scenario_prompt(&inst, self.cfg.variant)
    }

    fn restart(&mut self, positions: &[Coord], step: usize, reason: RestartReason) -> Message {
        self.restarts += 1;
        self.session_idx += 1;
        log::info!("restart {} at step {step} ({reason:?})", self.restarts);
        self.transcript.push(TranscriptRecord::Restart {
            session: self.session_idx,
            step,
            reason,
        });
        self.open_session(positions, step)
    }

    fn send(&mut self, step: usize, msg: Message) -> Result<Reply, BackendError> {
        self.log_message(step, &msg, None);
        let reply = self.session.send(&mut *self.backend, msg)?;
        self.usage += reply.usage;
        if self.token_log.len() < step {
            self.token_log.resize_with(step, StepTokens::default);
            for (i, t) in self.token_log.iter_mut().enumerate() {
                t.step = i + 1;
            }
        }
        let slot = &mut self.token_log[step - 1];
        slot.prompt_tokens += reply.usage.prompt_tokens;
        slot.completion_tokens += reply.usage.completion_tokens;
        let assistant = Message::assistant(reply.text.clone());
        self.log_message(step, &assistant, Some(reply.usage));
        Ok(reply)
    }

    fn record(&mut self, step: usize, iteration: usize, verdict: Verdict, corrective_failures: usize) {
        self.transcript.push(TranscriptRecord::Verdict {
            step,
            iteration,
            verdict: verdict.clone(),
        });
        self.iterations.push(IterationRecord {
            step,
            iteration,
            session: self.session_idx,
            verdict,
            corrective_failures,
        });
    }

    fn timed_out(&self) -> bool {
        self.started.elapsed() > Duration::from_secs(self.cfg.timeout_secs)
    }
}

struct Fixed {
    lower_bound: usize,
    reference: OptimalReference,
    bound: usize,
}

fn prepare(inst: &Instance, cfg: &LoopConfig) -> Result<Fixed, LoopError> {
    cfg.validate()?;
    let lower_bound = makespan_lower_bound(inst)?;
    let reference = optimal_reference(inst)?;
    let bound = (cfg.makespan_multiplier * reference.makespan as f64).floor() as usize;
    Ok(Fixed { lower_bound, reference, bound })
}

fn finish(
    ctx: Ctx<'_>,
    fixed: &Fixed,
    status: RunStatus,
    plan: Vec<JointConfig>,
    iterations_per_step: Vec<usize>,
    error: Option<String>,
) -> RunResult {
    let makespan = (status == RunStatus::Success).then(|| {
        check_plan(ctx.inst, &plan)
            .ok()
            .and_then(|r| r.makespan)
            .unwrap_or(plan.len() - 1)
    });
    let makespan_ratio = makespan
        .filter(|_| fixed.lower_bound > 0)
        .map(|m| m as f64 / fixed.lower_bound as f64);
    let mut transcript = ctx.transcript;
    transcript.push(TranscriptRecord::End { status });
    RunResult {
        status,
        mode: ctx.cfg.variant.mode,
        plan_so_far: plan,
        makespan,
        makespan_ratio,
        lower_bound: fixed.lower_bound,
        reference: fixed.reference,
        makespan_bound: fixed.bound,
        iterations_per_step,
        iterations: ctx.iterations,
        restarts: ctx.restarts,
        token_log: ctx.token_log,
        usage: ctx.usage,
        error,
        transcript,
    }
}

fn check_variant(cfg: &LoopConfig, backend: &dyn ChatBackend) -> Result<(), LoopError> {
    if cfg.variant.map_encoding == MapEncoding::Mm && !backend.supports_images() {
        return Err(LoopError::Config(format!(
            "backend {} cannot take image attachments",
            backend.label()
        )));
    }
    Ok(())
}

enum SendOutcome {
    Reply(Reply),
    Restarted(Message),
    Fatal(String),
}

fn send_or_restart(
    ctx: &mut Ctx<'_>,
    step: usize,
    msg: Message,
    positions: &[Coord],
    rate_limit_streak: &mut usize,
) -> SendOutcome {
    match ctx.send(step, msg) {
        Ok(r) => {
            *rate_limit_streak = 0;
            SendOutcome::Reply(r)
        }
        Err(BackendError::RateLimited { retry_after_secs })
            if ctx.cfg.restart_on_rate_limit && *rate_limit_streak < ctx.cfg.max_rate_limit_restarts =>
        {
            *rate_limit_streak += 1;
            if let Some(s) = retry_after_secs {
                std::thread::sleep(Duration::from_secs(s.min(60)));
            }
            SendOutcome::Restarted(ctx.restart(positions, step, RestartReason::RateLimit))
        }
        Err(e) => SendOutcome::Fatal(e.to_string()),
    }
}

/// Step-by-step solving: one joint move per accepted reply.
pub fn solve_sbs(
    inst: &Instance,
    cfg: &LoopConfig,
    backend: &mut dyn ChatBackend,
) -> Result<RunResult, LoopError> {
    let fixed = prepare(inst, cfg)?;
    check_variant(cfg, backend)?;
    let mut ctx = Ctx::new(inst, cfg, backend);
    let n = inst.num_agents();
    let mut positions = JointConfig(inst.starts().to_vec());
    let mut plan = vec![positions.clone()];
    let mut iterations_per_step = Vec::new();
    if inst.at_goals(positions.positions()) {
        return Ok(finish(ctx, &fixed, RunStatus::Success, plan, iterations_per_step, None));
    }

    let mut pending = ctx.open_session(positions.positions(), 1);
    let mut step = 1;
    let mut replies_in_step = 0;
    let mut rate_limit_streak = 0;
    loop {
        if ctx.timed_out() {
            let msg = format!("run exceeded {} s", cfg.timeout_secs);
            return Ok(finish(ctx, &fixed, RunStatus::FailBackend, plan, iterations_per_step, Some(msg)));
        }
        let reply = match send_or_restart(&mut ctx, step, pending, positions.positions(), &mut rate_limit_streak) {
            SendOutcome::Reply(r) => r,
            SendOutcome::Restarted(scenario) => {
                pending = scenario;
                continue;
            }
            SendOutcome::Fatal(e) => {
                return Ok(finish(ctx, &fixed, RunStatus::FailBackend, plan, iterations_per_step, Some(e)));
            }
        };
        replies_in_step += 1;

        let (verdict, feedback, proposed) = match parse_sbs_response(&reply.text, n) {
            Err(e) => (
                Verdict::Unparseable { message: e.to_string() },
                parse_error_feedback(&e, Mode::Sbs),
                None,
            ),
            Ok(proposed) => {
                let report = check_step(inst.map(), &positions, &proposed)
                    .expect("parser returns exactly n agents");
                if report.valid() {
                    (Verdict::Accepted, String::new(), Some(proposed))
                } else {
                    let fb = feedback_message(&report, None);
                    (
                        Verdict::Violations { at_step: None, violations: report.violations },
                        fb,
                        None,
                    )
                }
            }
        };

        let Some(next) = proposed else {
            let corrective = replies_in_step - 1;
            ctx.record(step, replies_in_step, verdict, corrective);
            if corrective >= cfg.max_consecutive_failures {
                return Ok(finish(ctx, &fixed, RunStatus::FailIterations, plan, iterations_per_step, None));
            }
            pending = Message::user(feedback);
            continue;
        };

        ctx.record(step, replies_in_step, Verdict::Accepted, 0);
        iterations_per_step.push(replies_in_step);
        positions = next;
        plan.push(positions.clone());
        if step > fixed.bound {
            return Ok(finish(ctx, &fixed, RunStatus::FailMakespan, plan, iterations_per_step, None));
        }
        if inst.at_goals(positions.positions()) {
            return Ok(finish(ctx, &fixed, RunStatus::Success, plan, iterations_per_step, None));
        }
        step += 1;
        replies_in_step = 0;
        pending = if ctx.session.usage().total() > cfg.context_budget_tokens {
            ctx.restart(positions.positions(), step, RestartReason::ContextBudget)
        } else {
            let sso = cfg.variant.sso.then(|| sso_lines(inst.map(), positions.positions()));
            Message::user(feedback_message(&Default::default(), sso.as_deref()))
        };
    }
}

/// One-shot solving: each reply must be a complete plan.
pub fn solve_os(
    inst: &Instance,
    cfg: &LoopConfig,
    backend: &mut dyn ChatBackend,
) -> Result<RunResult, LoopError> {
    let fixed = prepare(inst, cfg)?;
    check_variant(cfg, backend)?;
    let mut ctx = Ctx::new(inst, cfg, backend);
    let n = inst.num_agents();
    let starts = JointConfig(inst.starts().to_vec());
    let mut best = vec![starts.clone()];
    if inst.at_goals(starts.positions()) {
        return Ok(finish(ctx, &fixed, RunStatus::Success, best, Vec::new(), None));
    }

    let mut pending = ctx.open_session(starts.positions(), 1);
    let mut attempts = 0;
    let mut rate_limit_streak = 0;
    loop {
        if ctx.timed_out() {
            let msg = format!("run exceeded {} s", cfg.timeout_secs);
            return Ok(finish(ctx, &fixed, RunStatus::FailBackend, best, vec![attempts], Some(msg)));
        }
        let reply = match send_or_restart(&mut ctx, 1, pending, starts.positions(), &mut rate_limit_streak) {
            SendOutcome::Reply(r) => r,
            SendOutcome::Restarted(scenario) => {
                pending = scenario;
                continue;
            }
            SendOutcome::Fatal(e) => {
                return Ok(finish(ctx, &fixed, RunStatus::FailBackend, best, vec![attempts], Some(e)));
            }
        };
        attempts += 1;
        let corrective = attempts - 1;

        let (verdict, feedback) = match parse_os_response(&reply.text, n) {
            Err(e) => (
                Verdict::Unparseable { message: e.to_string() },
                parse_error_feedback(&e, Mode::Os),
            ),
            Ok(steps) => {
                let mut full = vec![starts.clone()];
                full.extend(steps);
                let report = check_plan(inst, &full).expect("parser returns exactly n agents");
                if let Some(f) = report.first_failure() {
                    best = full[..f.step].to_vec();
                    (
                        Verdict::Violations {
                            at_step: Some(f.step),
                            violations: f.report.violations.clone(),
                        },
                        os_step_feedback(f.step, &f.report),
                    )
                } else if let Some(m) = report.makespan {
                    full.truncate(m + 1);
                    if m > fixed.bound {
                        ctx.record(1, attempts, Verdict::TooLong { makespan: m }, corrective);
                        return Ok(finish(ctx, &fixed, RunStatus::FailMakespan, full, vec![attempts], None));
                    }
                    ctx.record(1, attempts, Verdict::Accepted, 0);
                    return Ok(finish(ctx, &fixed, RunStatus::Success, full, vec![attempts], None));
                } else {
                    let last = full.last().unwrap();
                    let off: Vec<usize> = (1..=n)
                        .filter(|&i| last.agent(i) != inst.goals()[i - 1])
                        .collect();
                    best = full;
                    (Verdict::OffGoal { agents: off.clone() }, os_goal_feedback(&off))
                }
            }
        };
        ctx.record(1, attempts, verdict, corrective);
        if corrective >= cfg.max_consecutive_failures {
            return Ok(finish(ctx, &fixed, RunStatus::FailIterations, best, vec![attempts], None));
        }
        pending = Message::user(feedback);
    }
}

/// Dispatches on the configured mode.
pub fn solve(inst: &Instance, cfg: &LoopConfig, backend: &mut dyn ChatBackend) -> Result<RunResult, LoopError> {
    match cfg.variant.mode {
        Mode::Sbs => solve_sbs(inst, cfg, backend),
        Mode::Os => solve_os(inst, cfg, backend),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{OracleAgent, ScriptItem, ScriptedBackend};
    use crate::bench_io::symmetry_instance;
    use crate::grid::GridMap;
    use crate::prompting::render_os_response;
    use crate::search::ReferenceSource;

    fn quiet(variant: PromptVariant) -> LoopConfig {
        LoopConfig {
            record_timestamps: false,
            ..LoopConfig::with_variant(variant)
        }
    }

    #[test]
    fn oracle_solves_symmetry_instance() {
        let inst = symmetry_instance();
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Sbs);
        let r = solve_sbs(&inst, &quiet(PromptVariant::default()), &mut o).unwrap();
        assert_eq!(r.status, RunStatus::Success);
        assert_eq!(r.makespan, Some(5));
        assert_eq!(r.makespan_ratio, Some(1.25));
        assert_eq!(r.iterations_per_step, vec![1; 5]);
        assert_eq!(r.reference.source, ReferenceSource::JointOptimal);
        assert_eq!(r.token_log.len(), 5);
        assert!(check_plan(&inst, &r.plan_so_far).unwrap().solved());
    }

    #[test]
    fn starts_at_goals_needs_no_query() {
        let m = GridMap::empty("e", 3, 3).unwrap();
        let inst = Instance::new(m, vec![Coord::new(1, 1)], vec![Coord::new(1, 1)]).unwrap();
        let mut b = ScriptedBackend::new(vec![]);
        for mode in [Mode::Sbs, Mode::Os] {
            let cfg = quiet(PromptVariant::new(mode, MapEncoding::None, true));
            let r = solve(&inst, &cfg, &mut b).unwrap();
            assert_eq!(r.status, RunStatus::Success);
            assert_eq!(r.makespan, Some(0));
            assert_eq!(r.makespan_ratio, None);
        }
    }

    #[test]
    fn always_colliding_fails_after_five_corrections() {
        let inst = symmetry_instance();
        let mut b = ScriptedBackend::cycle(vec![ScriptItem::Reply("Agent 1: (1,2)\nAgent 2: (1,2)".into())]);
        let r = solve_sbs(&inst, &quiet(PromptVariant::default()), &mut b).unwrap();
        assert_eq!(r.status, RunStatus::FailIterations);
        assert_eq!(r.failures_at(1), 6);
        assert_eq!(r.iterations.last().unwrap().corrective_failures, 5);
        assert_eq!(r.plan_so_far.len(), 1);
    }

    #[test]
    fn parse_errors_count_as_failures() {
        let inst = symmetry_instance();
        let mut b = ScriptedBackend::replies(["no idea", "Agent 1: (0,1)\nAgent 2: (0,3)"]);
        let cfg = LoopConfig {
            max_consecutive_failures: 1,
            ..quiet(PromptVariant::default())
        };
        let r = solve_sbs(&inst, &cfg, &mut b).unwrap();
        // after the accepted step the script is exhausted
        assert_eq!(r.status, RunStatus::FailBackend);
        assert!(matches!(r.iterations[0].verdict, Verdict::Unparseable { .. }));
        assert_eq!(r.iterations_per_step, vec![2]);
        assert_eq!(r.plan_so_far.len(), 2);
    }

    #[test]
    fn rate_limit_restarts_same_step() {
        let inst = symmetry_instance();
        let mut b = ScriptedBackend::new(vec![ScriptItem::RateLimited])
            .then(Box::new(OracleAgent::new(inst.map().clone(), Mode::Sbs)));
        let r = solve_sbs(&inst, &quiet(PromptVariant::default()), &mut b).unwrap();
        assert_eq!(r.status, RunStatus::Success);
        assert_eq!(r.restarts, 1);
        assert!(r.transcript.iter().any(|t| matches!(
            t,
            TranscriptRecord::Restart { reason: RestartReason::RateLimit, step: 1, .. }
        )));
    }

    #[test]
    fn rate_limit_without_restart_is_fatal() {
        let inst = symmetry_instance();
        let mut b = ScriptedBackend::cycle(vec![ScriptItem::RateLimited]);
        let cfg = LoopConfig {
            restart_on_rate_limit: false,
            ..quiet(PromptVariant::default())
        };
        assert_eq!(solve_sbs(&inst, &cfg, &mut b).unwrap().status, RunStatus::FailBackend);
        let mut b = ScriptedBackend::cycle(vec![ScriptItem::RateLimited]);
        let r = solve_sbs(&inst, &quiet(PromptVariant::default()), &mut b).unwrap();
        assert_eq!(r.status, RunStatus::FailBackend);
        assert_eq!(r.restarts, 5);
    }

    #[test]
    fn budget_restart_keeps_positions() {
        let inst = symmetry_instance();
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Sbs);
        let cfg = LoopConfig {
            context_budget_tokens: 1,
            ..quiet(PromptVariant::default())
        };
        let r = solve_sbs(&inst, &cfg, &mut o).unwrap();
        assert_eq!(r.status, RunStatus::Success);
        assert_eq!(r.restarts, 4);
        // the second session's scenario starts where the first left off
        let scen = r
            .transcript
            .iter()
            .filter_map(|t| match t {
                TranscriptRecord::Message { session: 1, role: crate::prompting::Role::User, text, .. } => Some(text),
                _ => None,
            })
            .next()
            .unwrap();
        let p1 = &r.plan_so_far[1];
        assert!(scen.starts_with(&format!("Agent 1 is currently in {}", p1.agent(1))));
    }

    #[test]
    fn os_oracle_first_attempt() {
        let inst = symmetry_instance();
        let cfg = quiet(PromptVariant::new(Mode::Os, MapEncoding::Tom, false));
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Os);
        let r = solve_os(&inst, &cfg, &mut o).unwrap();
        assert_eq!(r.status, RunStatus::Success);
        assert_eq!(r.iterations_per_step, vec![1]);
        assert_eq!(r.makespan, Some(5));
    }

    #[test]
    fn os_collision_feedback_names_step() {
        let inst = symmetry_instance();
        let c = Coord::new;
        // valid for two steps, then both agents on (0,2)
        let bad = vec![
            JointConfig(vec![c(0, 1), c(0, 3)]),
            JointConfig(vec![c(0, 1), c(0, 2)]),
            JointConfig(vec![c(0, 2), c(0, 2)]),
        ];
        let mut b = ScriptedBackend::replies([render_os_response(&bad)])
            .then(Box::new(OracleAgent::new(inst.map().clone(), Mode::Os)));
        let cfg = quiet(PromptVariant::new(Mode::Os, MapEncoding::Tom, false));
        let r = solve_os(&inst, &cfg, &mut b).unwrap();
        assert_eq!(r.status, RunStatus::Success);
        assert_eq!(r.iterations_per_step, vec![2]);
        assert!(matches!(r.iterations[0].verdict, Verdict::Violations { at_step: Some(3), .. }));
        let fb = r.transcript.iter().find_map(|t| match t {
            TranscriptRecord::Message { role: crate::prompting::Role::User, text, .. }
                if text.starts_with("You are wrong") => Some(text.clone()),
            _ => None,
        });
        assert_eq!(
            fb.unwrap(),
            "You are wrong. The plan is invalid at step 3. Agent (1,2) are colliding with each other. Please correct the plan."
        );
    }

    #[test]
    fn os_too_long_plan_fails_makespan() {
        let inst = symmetry_instance();
        let c = Coord::new;
        // wait 16 steps, then walk the optimal route: 21 > 3 * 5
        let mut steps = vec![JointConfig(inst.starts().to_vec()); 16];
        let route = [
            [c(0, 1), c(1, 3)],
            [c(1, 1), c(1, 2)],
            [c(2, 1), c(2, 2)],
            [c(3, 1), c(2, 2)],
            [c(3, 1), c(2, 1)],
            [c(3, 1), c(2, 0)],
        ];
        steps.extend(route.iter().map(|r| JointConfig(r.to_vec())));
        let mut b = ScriptedBackend::replies([render_os_response(&steps)]);
        let cfg = quiet(PromptVariant::new(Mode::Os, MapEncoding::Tom, false));
        let r = solve_os(&inst, &cfg, &mut b).unwrap();
        assert!(check_plan(&inst, &r.plan_so_far).unwrap().solved());
        assert_eq!(r.status, RunStatus::FailMakespan);
        assert_eq!(r.makespan_bound, 15);
    }

    #[test]
    fn mm_needs_image_backend() {
        struct TextOnly;
        impl ChatBackend for TextOnly {
            fn label(&self) -> String {
                "text".into()
            }
            fn supports_images(&self) -> bool {
                false
            }
            fn complete(&mut self, _: &crate::backend::ChatRequest<'_>) -> Result<crate::backend::Completion, BackendError> {
                unreachable!()
            }
        }
        let cfg = quiet(PromptVariant::new(Mode::Sbs, MapEncoding::Mm, true));
        assert!(matches!(solve_sbs(&symmetry_instance(), &cfg, &mut TextOnly), Err(LoopError::Config(_))));
    }

    #[test]
    fn scripted_runs_are_reproducible() {
        let inst = symmetry_instance();
        let script = [
            "Agent 1: (1,2)\nAgent 2: (1,2)",
            "Agent 1: (0,1)\nAgent 2: (0,3)",
            "Agent 1: (1,1)\nAgent 2: (0,2)",
        ];
        let run = || {
            let mut b = ScriptedBackend::replies(script);
            let r = solve_sbs(&inst, &quiet(PromptVariant::default()), &mut b).unwrap();
            (serde_json::to_string(&r).unwrap(), serde_json::to_string(&r.transcript).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn replay_agrees_with_the_loop() {
        let inst = symmetry_instance();
        let mut b = ScriptedBackend::replies(["garbage", "Agent 1: (1,2)\nAgent 2: (1,2)"])
            .then(Box::new(OracleAgent::new(inst.map().clone(), Mode::Sbs)));
        let cfg = LoopConfig { context_budget_tokens: 800, ..quiet(PromptVariant::default()) };
        let r = solve_sbs(&inst, &cfg, &mut b).unwrap();
        assert!(r.restarts > 0);
        let rp = replay(&r.transcript).unwrap();
        assert!(rp.mismatches.is_empty(), "{:?}", rp.mismatches);
        assert_eq!(rp.plan, r.plan_so_far);
        assert_eq!(rp.status, Some(RunStatus::Success));
        assert_eq!(rp.entries.len(), r.iterations.len());

        let os_cfg = quiet(PromptVariant::new(Mode::Os, MapEncoding::Tom, true));
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Os);
        let r = solve_os(&inst, &os_cfg, &mut o).unwrap();
        let rp = replay(&r.transcript).unwrap();
        assert!(rp.mismatches.is_empty());
        assert_eq!(rp.plan, r.plan_so_far);
    }

    #[test]
    fn replay_flags_tampered_verdicts() {
        let inst = symmetry_instance();
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Sbs);
        let mut t = solve_sbs(&inst, &quiet(PromptVariant::default()), &mut o).unwrap().transcript;
        for rec in t.iter_mut() {
            if let TranscriptRecord::Verdict { verdict, .. } = rec {
                *verdict = Verdict::Unparseable { message: "x".into() };
                break;
            }
        }
        assert_eq!(replay(&t).unwrap().mismatches.len(), 1);
        assert!(matches!(replay(&t[1..]), Err(ReplayError::NoMeta)));
    }

    #[test]
    fn transcript_file_round_trip() {
        let inst = symmetry_instance();
        let mut o = OracleAgent::new(inst.map().clone(), Mode::Sbs);
        let r = solve_sbs(&inst, &LoopConfig::default(), &mut o).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_transcript(&p, &r.transcript).unwrap();
        assert_eq!(read_transcript(&p).unwrap(), r.transcript);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = LoopConfig {
            makespan_multiplier: 0.5,
            ..LoopConfig::default()
        };
        let mut b = ScriptedBackend::new(vec![]);
        assert!(matches!(solve_sbs(&symmetry_instance(), &cfg, &mut b), Err(LoopError::Config(_))));
    }
}
