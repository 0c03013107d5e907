use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mapf_llm::bench_io::{
    fetch_benchmarks, load_benchmark_instance, load_map, load_scen, make_instance, symmetry_instance,
    FetchOutcome, BENCHMARK_FILES, DEFAULT_BASE_URL,
};
use mapf_llm::experiment::{
    aggregate, load_results, render_table, run_suite, to_csv, token_growth_csv, SuiteConfig, SuiteReport,
    DEFAULT_OSCILLATION_THRESHOLD,
};
use mapf_llm::search::{makespan_lower_bound, optimal_reference, parse_plan, prioritized_plan_with_restarts, render_plan};
use mapf_llm::solver_loop::{read_transcript, replay, Verdict};
use mapf_llm::validator::check_plan;
use mapf_llm::Instance;

/// Grid MAPF checker, classic oracles and an LLM-in-the-loop harness.
#[derive(Parser)]
#[command(name = "mapf-llm", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Download the benchmark maps and scenarios (skips files already present).
    Fetch {
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = DEFAULT_BASE_URL)]
        base_url: String,
    },
    /// Run a suite described by a TOML config.
    Run { config: PathBuf },
    /// Check a plan file against an instance.
    Validate {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        inst: InstanceArgs,
    },
    /// Re-check every reply recorded in a transcript.
    Replay { transcript: PathBuf },
    /// Aggregate the results of a suite output directory.
    Report {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_OSCILLATION_THRESHOLD)]
        oscillation_threshold: usize,
    },
    /// Solve an instance with the prioritized planner.
    Oracle {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the plan here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Symmetry,
}

#[derive(Args)]
struct InstanceArgs {
    #[arg(long, value_enum, conflicts_with_all = ["map", "benchmark"])]
    builtin: Option<Builtin>,
    /// Map file; needs --scen.
    #[arg(long, requires = "scen", conflicts_with = "benchmark")]
    map: Option<PathBuf>,
    #[arg(long)]
    scen: Option<PathBuf>,
    /// Benchmark map name looked up in --data-dir, e.g. room-32-32-4.
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long, default_value_t = 1)]
    scenario: u32,
    #[arg(long, default_value = "even")]
    kind: String,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Number of agents (default: all scenario entries for --map, required for --benchmark).
    #[arg(long)]
    agents: Option<usize>,
}

impl InstanceArgs {
    fn load(&self) -> Result<Instance> {
        if self.builtin.is_some() {
            return Ok(symmetry_instance());
        }
        if let Some(map) = &self.map {
            let scen = self.scen.as_ref().expect("clap enforces --scen");
            let m = load_map(map)?;
            let entries = load_scen(scen, &m)?;
            return Ok(make_instance(&m, &entries, self.agents.unwrap_or(entries.len()))?);
        }
        if let Some(name) = &self.benchmark {
            let n = self.agents.context("--benchmark needs --agents")?;
            return Ok(load_benchmark_instance(&self.data_dir, name, &self.kind, self.scenario, n)?);
        }
        bail!("choose an instance with --builtin, --map/--scen or --benchmark")
    }
}

fn print_report(rep: &SuiteReport, dir: &Path) -> Result<()> {
    print!("{}", render_table(rep));
    for (name, text) in [("report.csv", to_csv(rep)), ("token_growth.csv", token_growth_csv(rep))] {
        let p = dir.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Fetch { data_dir, base_url } => {
            for o in fetch_benchmarks(&data_dir, &base_url, BENCHMARK_FILES)? {
                match o {
                    FetchOutcome::AlreadyPresent(f) => println!("ok          {f}"),
                    FetchOutcome::Downloaded(f) => println!("downloaded  {f}"),
                }
            }
        }
        Cmd::Run { config } => {
            let cfg = SuiteConfig::load(&config)?;
            let rep = run_suite(&cfg)?;
            print_report(&rep, &cfg.output_dir)?;
        }
        Cmd::Validate { plan, inst } => {
            let inst = inst.load()?;
            let text = std::fs::read_to_string(&plan).with_context(|| format!("reading {}", plan.display()))?;
            let steps = parse_plan(&text)?;
            let report = check_plan(&inst, &steps)?;
            if !report.valid() {
                for s in &report.failing_steps {
                    for v in &s.report.violations {
                        println!("step {}: {v}", s.step);
                    }
                }
                println!("invalid plan");
                return Ok(ExitCode::FAILURE);
            }
            match report.makespan {
                Some(m) => println!("valid plan, makespan {m}"),
                None => {
                    println!("valid moves, but the plan does not end with every agent on its goal");
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Cmd::Replay { transcript } => {
            let records = read_transcript(&transcript).with_context(|| format!("reading {}", transcript.display()))?;
            let rp = replay(&records)?;
            println!(
                "{} agents on {}, variant {}",
                rp.instance.num_agents(),
                rp.instance.map().name(),
                rp.variant
            );
            for e in &rp.entries {
                let what = match &e.verdict {
                    Verdict::Accepted => "accepted".to_string(),
                    Verdict::Violations { at_step, violations } => {
                        let vs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                        match at_step {
                            Some(t) => format!("rejected at plan step {t}: {}", vs.join("; ")),
                            None => format!("rejected: {}", vs.join("; ")),
                        }
                    }
                    Verdict::Unparseable { message } => format!("unparseable: {message}"),
                    Verdict::OffGoal { agents } => format!("agents {agents:?} end off their goals"),
                    Verdict::TooLong { makespan } => format!("too long: makespan {makespan}"),
                };
                println!("step {} iteration {} (session {}): {what}", e.step, e.iteration, e.session);
            }
            print!("{}", render_plan(&rp.plan));
            if let Some(s) = rp.status {
                println!("status: {s}");
            }
            if !rp.mismatches.is_empty() {
                for m in &rp.mismatches {
                    eprintln!("mismatch: {m}");
                }
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Report { dir, oscillation_threshold } => {
            let records = load_results(&dir)?;
            if records.is_empty() {
                eprintln!("no results found in {}", dir.display());
                return Ok(ExitCode::FAILURE);
            }
            print_report(&aggregate(&records, oscillation_threshold), &dir)?;
        }
        Cmd::Oracle { inst, restarts, seed, out } => {
            let inst = inst.load()?;
            let plan = prioritized_plan_with_restarts(&inst, restarts, seed)?;
            let text = render_plan(&plan.steps);
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            let reference = optimal_reference(&inst)?;
            eprintln!(
                "makespan {} (lower bound {}, reference {} from {:?})",
                plan.makespan(),
                makespan_lower_bound(&inst)?,
                reference.makespan,
                reference.source
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
