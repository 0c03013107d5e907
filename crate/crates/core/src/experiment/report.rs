//! Aggregation of persisted run records: success rates, per-success
//! averages, failure taxonomy and token growth.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, RunRecord};
use crate::grid::Coord;
use crate::solver_loop::{RunResult, RunStatus};
use crate::validator::JointConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Oscillation,
    LongDetour,
    IterationLimit,
    Backend,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub oscillation: usize,
    pub long_detour: usize,
    pub iteration_limit: usize,
    pub backend: usize,
}

impl FailureCounts {
    fn add(&mut self, k: FailureKind) {
        match k {
            FailureKind::Oscillation => self.oscillation += 1,
            FailureKind::LongDetour => self.long_detour += 1,
            FailureKind::IterationLimit => self.iteration_limit += 1,
            FailureKind::Backend => self.backend += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub map: String,
    pub num_agents: usize,
    pub variant: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Pooled over every step of every successful run.
    pub avg_iterations_per_step: Option<f64>,
    pub avg_makespan_ratio: Option<f64>,
    pub avg_tokens_per_agent_step: Option<f64>,
    pub restarts: usize,
    pub failures: FailureCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub oscillation_threshold: usize,
    /// Sorted by (map, variant, agent count).
    pub cells: Vec<CellStats>,
    /// variant -> agent count -> mean tokens per agent-step over successes.
    pub token_growth: BTreeMap<String, BTreeMap<usize, Option<f64>>>,
}

/// Number of maximal stays on each cell; true when some agent comes back
/// to one cell at least `k` times.
pub fn oscillates(plan: &[JointConfig], k: usize) -> bool {
    let n = plan.first().map_or(0, |c| c.len());
    (1..=n).any(|agent| {
        let mut visits: HashMap<Coord, usize> = HashMap::new();
        let mut prev = None;
        for c in plan.iter().map(|c| c.agent(agent)) {
            if prev != Some(c) {
                let v = visits.entry(c).or_default();
                *v += 1;
                if *v >= k {
                    return true;
                }
            }
            prev = Some(c);
        }
        false
    })
}

pub fn classify_failure(r: &RunResult, k: usize) -> Result<FailureKind, ExperimentError> {
    Ok(match r.status {
        RunStatus::Success => return Err(ExperimentError::NotAFailure),
        RunStatus::FailIterations => FailureKind::IterationLimit,
        RunStatus::FailBackend => FailureKind::Backend,
        RunStatus::FailMakespan if oscillates(&r.plan_so_far, k) => FailureKind::Oscillation,
        RunStatus::FailMakespan => FailureKind::LongDetour,
    })
}

fn tokens_per_agent_step(r: &RunResult) -> Option<f64> {
    let steps = r.makespan.filter(|&m| m > 0)?;
    let n = r.num_agents();
    (n > 0).then(|| r.total_tokens() as f64 / (n * steps) as f64)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Agent count -> mean over successful runs of tokens / (agents x steps);
/// `None` for agent counts without a (non-trivial) success.
pub fn token_growth_series<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> BTreeMap<usize, Option<f64>> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rec in records {
        let slot = by_n.entry(rec.num_agents).or_default();
        if rec.result.status == RunStatus::Success {
            slot.extend(tokens_per_agent_step(&rec.result));
        }
    }
    by_n.into_iter().map(|(n, v)| (n, mean(v.into_iter()))).collect()
}

/// Pure function of the records: order of input does not matter.
pub fn aggregate(records: &[RunRecord], k: usize) -> SuiteReport {
    let mut groups: BTreeMap<(String, String, usize), Vec<&RunRecord>> = BTreeMap::new();
    for rec in records {
        groups
            .entry((rec.map.clone(), rec.variant.label(), rec.num_agents))
            .or_default()
            .push(rec);
    }
    let mut cells = Vec::new();
    let mut token_growth: BTreeMap<String, BTreeMap<usize, Option<f64>>> = BTreeMap::new();
    for ((map, variant, n), mut recs) in groups {
        recs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        let ok: Vec<&RunResult> = recs
            .iter()
            .map(|r| &r.result)
            .filter(|r| r.status == RunStatus::Success)
            .collect();
        let mut failures = FailureCounts::default();
        for r in recs.iter().map(|r| &r.result).filter(|r| r.status != RunStatus::Success) {
            failures.add(classify_failure(r, k).expect("filtered to failures"));
        }
        let (iters, steps) = ok.iter().fold((0usize, 0usize), |(i, s), r| {
            (i + r.iterations_per_step.iter().sum::<usize>(), s + r.iterations_per_step.len())
        });
        let growth = token_growth_series(recs.iter().copied());
        token_growth
            .entry(variant.clone())
            .or_default()
            .extend(growth);
        cells.push(CellStats {
            avg_iterations_per_step: (steps > 0).then(|| iters as f64 / steps as f64),
            avg_makespan_ratio: mean(ok.iter().filter_map(|r| r.makespan_ratio)),
            avg_tokens_per_agent_step: mean(ok.iter().filter_map(|r| tokens_per_agent_step(r))),
            restarts: recs.iter().map(|r| r.result.restarts).sum(),
            success_rate: 100.0 * ok.len() as f64 / recs.len() as f64,
            runs: recs.len(),
            successes: ok.len(),
            failures,
            map,
            variant,
            num_agents: n,
        });
    }
    SuiteReport { oscillation_threshold: k, cells, token_growth }
}

fn opt(x: Option<f64>, prec: usize) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
}

fn csv_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.4}"))
}

const HEADERS: [&str; 13] = [
    "map", "n", "variant", "runs", "success%", "iter/step", "ratio", "tok/agent-step", "restarts",
    "oscillation", "long-detour", "iter-limit", "backend",
];

/// Aligned text table, one row per (map, variant, n).
pub fn render_table(report: &SuiteReport) -> String {
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.map.clone(),
                c.num_agents.to_string(),
                c.variant.clone(),
                c.runs.to_string(),
                format!("{:.1}", c.success_rate),
                opt(c.avg_iterations_per_step, 2),
                opt(c.avg_makespan_ratio, 2),
                opt(c.avg_tokens_per_agent_step, 1),
                c.restarts.to_string(),
                c.failures.oscillation.to_string(),
                c.failures.long_detour.to_string(),
                c.failures.iteration_limit.to_string(),
                c.failures.backend.to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = HEADERS.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<String>| -> String {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 || i == 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(HEADERS.iter().map(|s| s.to_string()).collect())];
    out.push(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.extend(rows.into_iter().map(line));
    out.push(String::new());
    out.push(format!("oscillation threshold: {} visits", report.oscillation_threshold));
    out.join("\n") + "\n"
}

pub fn to_csv(report: &SuiteReport) -> String {
    let mut out = String::from(
        "map,num_agents,variant,runs,successes,success_rate,avg_iterations_per_step,avg_makespan_ratio,\
         avg_tokens_per_agent_step,restarts,oscillation,long_detour,iteration_limit,backend\n",
    );
    for c in &report.cells {
        out += &format!(
            "{},{},{},{},{},{:.4},{},{},{},{},{},{},{},{}\n",
            c.map,
            c.num_agents,
            c.variant,
            c.runs,
            c.successes,
            c.success_rate,
            csv_opt(c.avg_iterations_per_step),
            csv_opt(c.avg_makespan_ratio),
            csv_opt(c.avg_tokens_per_agent_step),
            c.restarts,
            c.failures.oscillation,
            c.failures.long_detour,
            c.failures.iteration_limit,
            c.failures.backend,
        );
    }
    out
}

/// `variant,num_agents,avg_tokens_per_agent_step`; absent cells are empty.
pub fn token_growth_csv(report: &SuiteReport) -> String {
    let mut out = String::from("variant,num_agents,avg_tokens_per_agent_step\n");
    for (variant, series) in &report.token_growth {
        for (n, v) in series {
            out += &format!("{variant},{n},{}\n", csv_opt(*v));
        }
    }
    out
}
