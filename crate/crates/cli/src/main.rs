use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rme_core::checker::{monitor_trace, MonitorParams};
use rme_core::explorer::{explore, ExploreParams, Report, Scheduler};
use rme_core::model::trace::{hex_hash, Trace};
use rme_core::model::Mutation;
use rme_core::rmr::{aggregate, attempts, Histogram, MemoryModel, PassageStats, CSV_HEADER};
use rme_native::stress::{self, StressParams};
use serde_json::json;

#[derive(Parser)]
#[command(name = "rme", version, about = "Check, stress and measure a recoverable abortable lock")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Explore the model and check every safety and liveness property.
    Check(CheckArgs),
    /// Run the native lock on threads with crash and abort injection.
    Stress(StressArgs),
    /// Per-passage remote-memory-reference counts of a recorded trace.
    RmrReport(RmrArgs),
    /// Re-execute a recorded trace and re-run the checks on it.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedArg {
    Exhaustive,
    Random,
    FairRandom,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    None,
    BlindReleaseAtP6,
    SkipAbortPromote,
    ExitWithoutSeqBump,
}

impl From<MutationArg> for Mutation {
    fn from(m: MutationArg) -> Self {
        match m {
            MutationArg::None => Mutation::None,
            MutationArg::BlindReleaseAtP6 => Mutation::BlindReleaseAtP6,
            MutationArg::SkipAbortPromote => Mutation::SkipAbortPromote,
            MutationArg::ExitWithoutSeqBump => Mutation::ExitWithoutSeqBump,
        }
    }
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Exhaustive: longest schedule. Random: actions per schedule before
    /// the drain.
    #[arg(long, default_value_t = 20)]
    depth: usize,
    /// Exhaustive: crashes per process. Random: crashes per attempt.
    #[arg(long, default_value_t = 1)]
    crash_budget: u32,
    #[arg(long, default_value_t = 1)]
    abort_budget: u32,
    #[arg(long, value_enum, default_value = "exhaustive")]
    scheduler: SchedArg,
    /// Random schedulers only; drawn from the OS if absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Random schedulers: number of schedules.
    #[arg(long, default_value_t = 1000)]
    schedules: u64,
    #[arg(long, default_value_t = 0.02)]
    crash_rate: f64,
    #[arg(long, default_value_t = 0.02)]
    abort_rate: f64,
    /// Raise the exhaustive depth ceiling.
    #[arg(long)]
    depth_ceiling: Option<usize>,
    /// Check a deliberately broken variant.
    #[arg(long, value_enum, default_value = "none")]
    mutation: MutationArg,
    /// Where violation traces are written.
    #[arg(long, default_value = ".")]
    trace_dir: PathBuf,
}

#[derive(Args)]
struct StressArgs {
    #[arg(long, default_value_t = 8)]
    threads: usize,
    /// Attempts per thread.
    #[arg(long, default_value_t = 100_000)]
    passages: u64,
    #[arg(long, default_value_t = 0.01)]
    crash_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    abort_rate: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds without progress before the run is declared stuck.
    #[arg(long, default_value_t = 10.0)]
    stall_timeout: f64,
}

#[derive(Args)]
struct RmrArgs {
    trace_file: PathBuf,
    /// dsm, strict-cc, relaxed-cc or all.
    #[arg(long, default_value = "all")]
    model: String,
    /// Print the histograms as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct ReplayArgs {
    trace_file: PathBuf,
}

/// Failure that maps to exit status 2.
struct Usage(String);

impl<E: std::fmt::Display> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.to_string())
    }
}

type CmdResult = Result<bool, Usage>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Check(a) => check(a, cli.json),
        Cmd::Stress(a) => run_stress(a, cli.json),
        Cmd::RmrReport(a) => rmr_report(a, cli.json),
        Cmd::Replay(a) => replay(a, cli.json),
    };
    match r {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Usage(msg)) => {
            eprintln!("rme: {msg}");
            ExitCode::from(2)
        }
    }
}

fn fresh_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        use std::hash::{BuildHasher, Hasher};
        let mut h = std::collections::hash_map::RandomState::new().build_hasher();
        h.write_u128(std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default().as_nanos());
        h.finish()
    })
}

fn print_json(v: &serde_json::Value) -> Result<(), Usage> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn check(a: CheckArgs, as_json: bool) -> CmdResult {
    let seed = match a.scheduler {
        SchedArg::Exhaustive => None,
        _ => Some(fresh_seed(a.seed)),
    };
    let mut params = match (a.scheduler, seed) {
        (SchedArg::Random, Some(seed)) => ExploreParams::random(a.n, a.schedules, a.depth, Scheduler::Random { seed }),
        (SchedArg::FairRandom, Some(seed)) => {
            ExploreParams::random(a.n, a.schedules, a.depth, Scheduler::FairRandom { seed })
        }
        _ => ExploreParams::exhaustive(a.n, a.depth, a.crash_budget, a.abort_budget),
    };
    params.crash_budget = a.crash_budget;
    params.abort_budget = a.abort_budget;
    if seed.is_some() {
        params.crash_rate = a.crash_rate;
        params.abort_rate = a.abort_rate;
    }
    if let Some(c) = a.depth_ceiling {
        params.depth_ceiling = c;
    }
    params.mutation = a.mutation.into();
    if let Some(seed) = seed {
        if !as_json {
            println!("seed: {seed}");
        }
    }
    let report = explore(&params)?;
    let traces = write_traces(&params, &report, &a.trace_dir)?;
    if as_json {
        print_json(&json!({ "seed": seed, "params": params, "report": report, "traces": traces }))?;
    } else {
        print_check(&report, &traces, seed.is_some());
    }
    Ok(report.is_clean())
}

fn write_traces(params: &ExploreParams, report: &Report, dir: &Path) -> Result<Vec<PathBuf>, Usage> {
    let model = params.model();
    let mut paths = Vec::new();
    for v in &report.violations {
        // a poison read aborts the model step, so only the prefix replays
        let trace = match v.to_trace(&model) {
            Ok(t) => t,
            Err(_) => Trace::record(&model, v.actions().take(v.trace.len().saturating_sub(1)))?,
        };
        let name = v.kind.to_string().replace(['(', ')'], "").to_lowercase();
        let path = dir.join(format!("violation-{name}.jsonl"));
        trace.write_jsonl(BufWriter::new(File::create(&path).map_err(|e| Usage(format!("{}: {e}", path.display())))?))?;
        paths.push(path);
    }
    Ok(paths)
}

fn print_check(r: &Report, traces: &[PathBuf], random: bool) {
    println!("states visited: {}", r.states_visited);
    println!("transitions:    {}", r.transitions);
    if random {
        println!("schedules:      {}", r.schedules);
        println!("attempts done:  {}", r.attempts_completed);
    }
    println!("max depth:      {}", r.max_frontier);
    for h in &r.rmr {
        if let (Some(m), Some(max), Some(mean)) = (h.model, h.max(), h.mean()) {
            println!("rmr/passage {m:>10}: max {max}, mean {mean:.2}");
        }
    }
    println!("wall time:      {:.2}s", r.wall_time.as_secs_f64());
    if r.is_clean() {
        println!("no violations");
    }
    for (v, path) in r.violations.iter().zip(traces) {
        println!("VIOLATION {v}");
        println!("  trace: {}", path.display());
    }
}

fn run_stress(a: StressArgs, as_json: bool) -> CmdResult {
    let seed = fresh_seed(a.seed);
    if !(0.0..=1.0).contains(&a.crash_rate) || !(0.0..=1.0).contains(&a.abort_rate) {
        return Err(Usage("rates must lie in [0, 1]".into()));
    }
    let params = StressParams {
        threads: a.threads,
        passages: a.passages,
        crash_rate: a.crash_rate,
        abort_rate: a.abort_rate,
        seed,
        stall_timeout: std::time::Duration::from_secs_f64(a.stall_timeout),
    };
    if !as_json {
        println!("seed: {seed}");
    }
    let r = stress::run(&params)?;
    if as_json {
        print_json(&json!({ "seed": seed, "report": r, "clean": r.is_clean() }))?;
    } else {
        println!("attempts:         {}", r.attempts);
        println!("cs entries:       {}", r.cs_entries);
        println!("counter:          {}", r.counter);
        println!("crashes:          {}", r.crashes);
        println!("recoveries:       {}", r.recoveries);
        println!("aborted tries:    {}", r.aborted);
        println!("mutex violations: {}", r.mutex_violations);
        println!("csr violations:   {}", r.csr_violations);
        println!("lost cs:          {}", r.lost_cs);
        println!("stalled:          {}", r.stalled);
        println!("elapsed:          {:.2}s", r.elapsed.as_secs_f64());
        println!("{}", if r.is_clean() { "clean" } else { "VIOLATION" });
    }
    Ok(r.is_clean())
}

fn load(path: &Path) -> Result<Trace, Usage> {
    let f = File::open(path).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    Ok(Trace::read_jsonl(BufReader::new(f))?)
}

fn rmr_report(a: RmrArgs, as_json: bool) -> CmdResult {
    let models: Vec<MemoryModel> = if a.model == "all" { MemoryModel::ALL.to_vec() } else { vec![a.model.parse()?] };
    let trace = load(&a.trace_file)?;
    let (configs, effects) = trace.replay()?;
    let initial = trace.header.model().initial_config()?;
    let mut per_model = serde_json::Map::new();
    if a.csv && !as_json {
        print!("{CSV_HEADER}");
    }
    for m in models {
        let passages: Vec<PassageStats> = aggregate(&initial, effects.iter().zip(&configs), m)?;
        let mut hist = Histogram::new(m);
        for p in &passages {
            hist.add(p.rmr);
        }
        let atts = attempts(&passages);
        if as_json {
            per_model.insert(m.name().to_owned(), json!({ "passages": passages, "attempts": atts, "histogram": hist }));
        } else if a.csv {
            print!("{}", hist.csv_rows());
        } else {
            println!("[{m}] {} passages, {} attempts", passages.len(), atts.len());
            for p in &passages {
                println!(
                    "  p{} passage {} (attempt {}): {} rmr, {} crashes, contention {}, {:?}",
                    p.pid, p.passage, p.attempt, p.rmr, p.crashes, p.max_contention, p.end
                );
            }
            if let (Some(max), Some(mean)) = (hist.max(), hist.mean()) {
                println!("  max {max}, mean {mean:.2}");
            }
        }
    }
    if as_json {
        print_json(&serde_json::Value::Object(per_model))?;
    }
    Ok(true)
}

fn replay(a: ReplayArgs, as_json: bool) -> CmdResult {
    let trace = load(&a.trace_file)?;
    let (configs, _) = trace.replay()?;
    let model = trace.header.model();
    let actions: Vec<_> = trace.actions().collect();
    let violations = monitor_trace(&model, &actions, MonitorParams::default())?;
    let final_hash = configs.last().map(|c| hex_hash(c.state_hash()));
    if as_json {
        print_json(&json!({
            "steps": configs.len(),
            "n": model.n,
            "final_hash": final_hash,
            "violations": violations,
        }))?;
    } else {
        println!("replayed {} steps of a {}-process trace; every post-state hash matches", configs.len(), model.n);
        if let Some(h) = final_hash {
            println!("final state: {h}");
        }
        if violations.is_empty() {
            println!("no violations");
        }
        for v in &violations {
            println!("VIOLATION {v}");
        }
    }
    Ok(violations.is_empty())
}
