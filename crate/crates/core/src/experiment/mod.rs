//! Suite runner: every (scenario, agent count, variant, repeat) cell,
//! persisted as JSON lines so that reruns resume and reports can be rebuilt.

mod report;

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendFactory, BackendSpec};
use crate::bench_io::{load_benchmark_instance, BenchError};
use crate::grid::Instance;
use crate::prompting::{MapEncoding, Mode, PromptVariant};
use crate::solver_loop::{solve, write_transcript, LoopConfig, LoopError, RunResult};

pub use report::{
    aggregate, classify_failure, oscillates, render_table, to_csv, token_growth_csv, token_growth_series,
    CellStats, FailureCounts, FailureKind, SuiteReport,
};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRANSCRIPT_DIR: &str = "transcripts";
pub const DEFAULT_OSCILLATION_THRESHOLD: usize = 4;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("bad suite config: {0}")]
    Config(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("run {run_id}: {source}")]
    Loop { run_id: String, source: LoopError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Record { path: PathBuf, line: usize, msg: String },
    #[error("classify_failure called on a successful run")]
    NotAFailure,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantGrid {
    pub modes: Vec<Mode>,
    pub map_encodings: Vec<MapEncoding>,
    pub sso: Vec<bool>,
}

impl Default for VariantGrid {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Sbs],
            map_encodings: vec![MapEncoding::Tom],
            sso: vec![true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub map: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_scen_kind")]
    pub scenario_kind: String,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<u32>,
    pub agent_counts: Vec<usize>,
    /// Runs per scenario; repeat r uses seed `loop.seed + r`.
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub variants: VariantGrid,
    #[serde(default = "BackendSpec::oracle")]
    pub backend: BackendSpec,
    /// The variant field is overridden per cell.
    #[serde(default, rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default = "default_k")]
    pub oscillation_threshold: usize,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}
fn default_scen_kind() -> String {
    "even".into()
}
fn default_scenarios() -> Vec<u32> {
    (1..=5).collect()
}
fn one() -> usize {
    1
}
fn default_k() -> usize {
    DEFAULT_OSCILLATION_THRESHOLD
}

impl SuiteConfig {
    pub fn new(map: impl Into<String>, agent_counts: Vec<usize>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            map: map.into(),
            data_dir: default_data_dir(),
            scenario_kind: default_scen_kind(),
            scenarios: default_scenarios(),
            agent_counts,
            repeats: 1,
            variants: VariantGrid::default(),
            backend: BackendSpec::oracle(),
            loop_cfg: LoopConfig::default(),
            output_dir: output_dir.into(),
            parallelism: 1,
            oscillation_threshold: DEFAULT_OSCILLATION_THRESHOLD,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths are taken from the config file's directory
        if let Some(base) = path.parent() {
            if cfg.data_dir.is_relative() {
                cfg.data_dir = base.join(&cfg.data_dir);
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.scenarios.is_empty() {
            return bad("scenario list is empty");
        }
        if self.agent_counts.is_empty() || self.agent_counts.contains(&0) {
            return bad("agent counts must be a nonempty list of positive integers");
        }
        if self.repeats == 0 || self.parallelism == 0 || self.oscillation_threshold < 2 {
            return bad("repeats and parallelism must be >= 1, oscillation_threshold >= 2");
        }
        let g = &self.variants;
        if g.modes.is_empty() || g.map_encodings.is_empty() || g.sso.is_empty() {
            return bad("variant grid has an empty axis");
        }
        self.loop_cfg
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Distinct variants after normalising for the map (obstacle-free maps
    /// have nothing to encode).
    pub fn variants_for(&self, inst: &Instance) -> Vec<PromptVariant> {
        let mut out: Vec<PromptVariant> = Vec::new();
        for &mode in &self.variants.modes {
            for &enc in &self.variants.map_encodings {
                for &sso in &self.variants.sso {
                    let v = PromptVariant::new(mode, enc, sso).for_map(inst.map());
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub map: String,
    pub scenario_kind: String,
    pub scenario: u32,
    pub num_agents: usize,
    pub variant: PromptVariant,
    pub backend: String,
    pub seed: u64,
    pub transcript_file: String,
    pub result: RunResult,
}

/// `map-kind-scenario-nN-variant-backend-sSEED`, restricted to file-name-safe characters.
pub fn run_id(
    map: &str,
    kind: &str,
    scenario: u32,
    n: usize,
    variant: &PromptVariant,
    backend: &str,
    seed: u64,
) -> String {
    format!("{map}-{kind}-{scenario}-n{n}-{}-{backend}-s{seed}", variant.label())
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

/// Append-only, line-atomic JSON-lines sink shared by worker threads.
pub struct ResultSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl ResultSink {
    pub fn open(path: &Path) -> Result<Self, ExperimentError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn append(&self, rec: &RunRecord) -> Result<(), ExperimentError> {
        let mut line = serde_json::to_string(rec).expect("records serialize");
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(io_err(&self.path))
    }
}

/// Reads every record of `dir/results.jsonl`. A torn final line (an
/// interrupted write) is dropped with a warning; other bad lines are errors.
pub fn load_results(dir: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let path = dir.join(RESULTS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(&path).map_err(io_err(&path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(&path))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if Some(i) == last => log::warn!("{}:{}: dropping torn record ({e})", path.display(), i + 1),
            Err(e) => {
                return Err(ExperimentError::Record { path, line: i + 1, msg: e.to_string() });
            }
        }
    }
    Ok(out)
}

struct Cell {
    id: String,
    scenario: u32,
    inst: Instance,
    variant: PromptVariant,
    seed: u64,
}

fn plan_cells(cfg: &SuiteConfig, backend: &str) -> Result<Vec<Cell>, ExperimentError> {
    let mut cells = Vec::new();
    for &scenario in &cfg.scenarios {
        for &n in &cfg.agent_counts {
            let inst = load_benchmark_instance(&cfg.data_dir, &cfg.map, &cfg.scenario_kind, scenario, n)?;
            for variant in cfg.variants_for(&inst) {
                for r in 0..cfg.repeats {
                    let seed = cfg.loop_cfg.seed.wrapping_add(r as u64);
                    cells.push(Cell {
                        id: run_id(&cfg.map, &cfg.scenario_kind, scenario, n, &variant, backend, seed),
                        scenario,
                        inst: inst.clone(),
                        variant,
                        seed,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// The run ids a config expands to, in execution order.
pub fn suite_run_ids(cfg: &SuiteConfig) -> Result<Vec<String>, ExperimentError> {
    Ok(plan_cells(cfg, &cfg.backend.label())?.into_iter().map(|c| c.id).collect())
}

/// Runs every cell not already present in the output directory, then
/// aggregates the records belonging to this suite.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport, ExperimentError> {
    cfg.validate()?;
    let backend_label = cfg.backend.label();
    let cells = plan_cells(cfg, &backend_label)?;
    let tdir = cfg.output_dir.join(TRANSCRIPT_DIR);
    std::fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;

    let done: HashSet<String> = load_results(&cfg.output_dir)?.into_iter().map(|r| r.run_id).collect();
    let todo: Vec<&Cell> = cells.iter().filter(|c| !done.contains(&c.id)).collect();
    log::info!("{} runs planned, {} already done", cells.len(), cells.len() - todo.len());

    let factory = BackendFactory::new(cfg.backend.clone())?;
    let sink = ResultSink::open(&cfg.output_dir.join(RESULTS_FILE))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;

    pool.install(|| {
        todo.par_iter().try_for_each(|cell| -> Result<(), ExperimentError> {
            let mut backend = factory.build(cell.inst.map(), cell.variant.mode)?;
            let loop_cfg = LoopConfig {
                variant: cell.variant,
                seed: cell.seed,
                ..cfg.loop_cfg.clone()
            };
            let result = solve(&cell.inst, &loop_cfg, backend.as_mut())
                .map_err(|source| ExperimentError::Loop { run_id: cell.id.clone(), source })?;
            log::info!("{}: {:?}", cell.id, result.status);
            let transcript_file = format!("{TRANSCRIPT_DIR}/{}.jsonl", cell.id);
            let tpath = cfg.output_dir.join(&transcript_file);
            write_transcript(&tpath, &result.transcript).map_err(io_err(&tpath))?;
            sink.append(&RunRecord {
                run_id: cell.id.clone(),
                map: cfg.map.clone(),
                scenario_kind: cfg.scenario_kind.clone(),
                scenario: cell.scenario,
                num_agents: cell.inst.num_agents(),
                variant: cell.variant,
                backend: backend_label.clone(),
                seed: cell.seed,
                transcript_file,
                result,
            })
        })
    })?;

    let ids: HashSet<&str> = cells.iter().map(|c| c.id.as_str()).collect();
    let records: Vec<RunRecord> = load_results(&cfg.output_dir)?
        .into_iter()
        .filter(|r| ids.contains(r.run_id.as_str()))
        .collect();
    Ok(aggregate(&records, cfg.oscillation_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults() {
        let cfg = SuiteConfig::from_toml("map = \"empty-8-8\"\nagent_counts = [2, 4]\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(cfg.scenarios, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.scenario_kind, "even");
        assert_eq!(cfg.backend, BackendSpec::oracle());
        assert_eq!(cfg.loop_cfg.max_consecutive_failures, 5);
        assert_eq!(cfg.oscillation_threshold, 4);
    }

    #[test]
    fn toml_full() {
        let text = r#"
map = "room-32-32-4"
scenarios = [1]
agent_counts = [2]
repeats = 2
output_dir = "out"
parallelism = 4

[variants]
modes = ["sbs", "os"]
map_encodings = ["tom", "too"]
sso = [true, false]

[backend]
kind = "scripted"
responses = ["Agent 1: (0,0)"]
cycle = true

[loop]
context_budget_tokens = 5000
makespan_multiplier = 2.0
"#;
        let cfg = SuiteConfig::from_toml(text).unwrap();
        assert_eq!(cfg.loop_cfg.context_budget_tokens, 5000);
        assert_eq!(cfg.loop_cfg.max_consecutive_failures, 5);
        assert_eq!(cfg.variants.modes, vec![Mode::Sbs, Mode::Os]);
    }

    #[test]
    fn invalid_configs() {
        for text in [
            "map = \"m\"\nagent_counts = []\noutput_dir = \"o\"",
            "map = \"m\"\nagent_counts = [2]\nscenarios = []\noutput_dir = \"o\"",
            "map = \"m\"\nagent_counts = [2]\noutput_dir = \"o\"\n[loop]\nmax_consecutive_failures = 0",
            "map = \"m\"\noutput_dir = \"o\"",
        ] {
            assert!(matches!(SuiteConfig::from_toml(text), Err(ExperimentError::Config(_))), "{text}");
        }
    }

    #[test]
    fn run_ids_are_stable_and_safe() {
        let v = PromptVariant::default();
        let a = run_id("room-32-32-4", "even", 3, 8, &v, "http-org/model:1", 42);
        assert_eq!(a, "room-32-32-4-even-3-n8-sbs-tom-sso-http-org_model_1-s42");
        assert_eq!(a, run_id("room-32-32-4", "even", 3, 8, &v, "http-org/model:1", 42));
    }

    #[test]
    fn torn_last_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(RESULTS_FILE), "{\"run_id\":").unwrap();
        assert!(load_results(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join(RESULTS_FILE), "garbage\n{}\n").unwrap();
        assert!(matches!(load_results(dir.path()), Err(ExperimentError::Record { line: 1, .. })));
    }
}
