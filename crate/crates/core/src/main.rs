use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use honeysplice::harness::{
    load_events, load_scenario, load_traces, migration_index_from_rows, run_experiment, summarize, Scenario, Summary,
    CONTROLLER_FILE, SUMMARY_FILE, TRACE_FILE,
};

const EXIT_VIOLATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(version, about = "Stealthy TCP redirection to honey servers, simulated")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv, controller.csv and summary.csv.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u32>,
        /// Output directory [default: out/<scenario name>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a trace directory written by `run`.
    Summarize { trace_dir: PathBuf },
    /// Run a scenario and report stealth violations only.
    Check {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u32>,
    },
}

fn load(path: &Path, seed: Option<u64>, reps: Option<u32>) -> Result<Scenario, ExitCode> {
    let mut sc = load_scenario(path).map_err(|e| {
        eprintln!("config error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(r) = reps {
        if r == 0 {
            eprintln!("config error: --reps: must be at least 1");
            return Err(ExitCode::from(EXIT_CONFIG));
        }
        sc.repetitions = r;
    }
    Ok(sc)
}

fn print_summary(s: &Summary) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
    println!(
        "migration at packet {}; pre mean rtt {} us, post mean rtt {} us, ratio {}",
        s.migration_index.map_or("-".to_string(), |i| i.to_string()),
        fmt(s.pre_mean_us),
        fmt(s.post_mean_us),
        s.ratio().map_or("-".to_string(), |r| format!("{r:.4}")),
    );
}

fn run(path: &Path, seed: Option<u64>, reps: Option<u32>, out: Option<PathBuf>) -> ExitCode {
    let sc = match load(path, seed, reps) {
        Ok(sc) => sc,
        Err(code) => return code,
    };
    let result = run_experiment(&sc);
    let dir = out.unwrap_or_else(|| Path::new("out").join(&sc.name));
    if let Err(e) = result.write_outputs(&dir) {
        eprintln!("{e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    println!("{}: {} repetitions -> {}", sc.name, sc.repetitions, dir.display());
    print_summary(&result.summary());
    let problems = result.problems();
    for p in &problems {
        eprintln!("{p}");
    }
    if problems.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATION)
    }
}

fn summarize_dir(dir: &Path) -> ExitCode {
    let traces = match load_traces(&dir.join(TRACE_FILE)) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let migration = load_events(&dir.join(CONTROLLER_FILE))
        .ok()
        .and_then(|rows| migration_index_from_rows(&rows));
    let s = summarize(&traces, migration);
    println!("{} repetitions, {} packet indices", traces.len(), s.per_index.len());
    print_summary(&s);
    let path = dir.join(SUMMARY_FILE);
    let written = std::fs::File::create(&path)
        .map_err(|e| e.to_string())
        .and_then(|f| s.write_csv(f).map_err(|e| e.to_string()));
    if let Err(e) = written {
        eprintln!("{}: {e}", path.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    ExitCode::SUCCESS
}

fn check(path: &Path, seed: Option<u64>, reps: Option<u32>) -> ExitCode {
    let sc = match load(path, seed, reps) {
        Ok(sc) => sc,
        Err(code) => return code,
    };
    let result = run_experiment(&sc);
    let segments: u64 = result.reps.iter().map(|r| r.segments_checked).sum();
    let problems = result.problems();
    for p in &problems {
        println!("{p}");
    }
    println!(
        "{}: {} repetitions, {} attacker segments checked, {} violations",
        sc.name,
        sc.repetitions,
        segments,
        problems.len()
    );
    if problems.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATION)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            seed,
            reps,
            out,
        } => run(&scenario, seed, reps, out),
        Command::Summarize { trace_dir } => summarize_dir(&trace_dir),
        Command::Check { scenario, seed, reps } => check(&scenario, seed, reps),
    }
}
