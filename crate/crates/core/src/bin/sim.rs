//! Scenario harness CLI: run simulations, validate scenario files,
//! replay and summarize event logs, and serve a standalone broker.

use std::net::TcpStream;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use edgesim::bus::Broker;
use edgesim::clock::WallClock;
use edgesim::scenario::report::{build_report, load_log, log_digest, render_replay};
use edgesim::scenario::{self, EngineError, RunOptions};

#[derive(Parser)]
#[command(name = "sim", about = "Deterministic edge-telemetry scenario harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write events.jsonl, report.json, and
    /// model.json (when the scenario has a training job) to --out.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the seed baked into the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Precompute reading schedules on worker threads (the log is
        /// byte-identical either way).
        #[arg(long)]
        concurrent: bool,
        /// Pace the run against the wall clock at this many simulated
        /// milliseconds per wall millisecond.
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Check a scenario file and report every problem found.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Render an event log as a readable timeline.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Only show records of this kind.
        #[arg(long)]
        kind: Option<String>,
        /// Only show records from this source.
        #[arg(long)]
        source: Option<String>,
    },
    /// Summarize an event log as JSON on stdout.
    Report {
        #[arg(long)]
        log: PathBuf,
    },
    /// Serve a standalone broker for external clients over TCP.
    Broker {
        #[arg(long)]
        listen: String,
        /// Client credentials to accept, as id:token. May repeat.
        #[arg(long = "allow")]
        allow: Vec<String>,
    },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, seed, out, concurrent, speed } => {
            run(scenario, seed, out, concurrent, speed)
        }
        Command::Validate { scenario } => validate(scenario),
        Command::Replay { log, kind, source } => replay(log, kind, source),
        Command::Report { log } => report(log),
        Command::Broker { listen, allow } => broker(listen, allow),
    }
}

fn load_spec(path: &PathBuf) -> Result<scenario::ScenarioSpec, ExitCode> {
    scenario::spec::load(path).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(EXIT_VALIDATION)
    })
}

fn run(
    scenario_path: PathBuf,
    seed: Option<u64>,
    out: PathBuf,
    concurrent: bool,
    speed: Option<f64>,
) -> ExitCode {
    let mut spec = match load_spec(&scenario_path) {
        Ok(spec) => spec,
        Err(code) => return code,
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }

    let options = RunOptions { concurrent, speed };
    let output = match scenario::run(&spec, &options) {
        Ok(output) => output,
        Err(EngineError::Validation(diagnostics)) => {
            for d in &diagnostics {
                eprintln!("{d}");
            }
            return ExitCode::from(EXIT_VALIDATION);
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };

    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("cannot create {}: {e}", out.display());
        return ExitCode::from(EXIT_RUNTIME);
    }

    let log_bytes = output.events_jsonl();
    let report = build_report(&output.events, &log_digest(log_bytes.as_bytes()));
    let mut files = vec![
        ("events.jsonl", log_bytes),
        ("report.json", format!("{:#}\n", report)),
    ];
    if let Some(model) = &output.model {
        files.push(("model.json", format!("{:#}\n", model)));
    }
    if let Some(journal) = &output.model_journal {
        files.push(("model_journal.jsonl", journal.clone()));
    }
    for (name, contents) in files {
        let path = out.join(name);
        if let Err(e) = std::fs::write(&path, contents) {
            eprintln!("cannot write {}: {e}", path.display());
            return ExitCode::from(EXIT_RUNTIME);
        }
    }

    println!(
        "{} events, {} alerts -> {}",
        output.events.len(),
        report["alerts_total"],
        out.display()
    );
    ExitCode::SUCCESS
}

fn validate(scenario_path: PathBuf) -> ExitCode {
    let spec = match load_spec(&scenario_path) {
        Ok(spec) => spec,
        Err(code) => return code,
    };
    let diagnostics = spec.validate();
    if diagnostics.is_empty() {
        println!("ok");
        ExitCode::SUCCESS
    } else {
        for d in &diagnostics {
            eprintln!("{d}");
        }
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn replay(log_path: PathBuf, kind: Option<String>, source: Option<String>) -> ExitCode {
    let records = match load_log(&log_path) {
        Ok(records) => records,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    match render_replay(&records, kind.as_deref(), source.as_deref()) {
        Ok(rendered) => {
            print!("{rendered}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn report(log_path: PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(&log_path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("cannot read {}: {e}", log_path.display());
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let records = match edgesim::scenario::report::parse_log(&text) {
        Ok(records) => records,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let report = build_report(&records, &log_digest(text.as_bytes()));
    println!("{report:#}");
    ExitCode::SUCCESS
}

fn broker(listen: String, allow: Vec<String>) -> ExitCode {
    let broker = Broker::new(Arc::new(WallClock));
    let mut any = false;
    for entry in &allow {
        match entry.split_once(':') {
            Some((id, token)) if !id.is_empty() && !token.is_empty() => {
                broker.register(id, token);
                any = true;
            }
            _ => {
                eprintln!("--allow wants id:token, got {entry:?}");
                return ExitCode::from(EXIT_VALIDATION);
            }
        }
    }
    if !any {
        broker.register("demo", "demo");
        println!("no --allow given; accepting client demo:demo");
    }

    let handle = match edgesim::bus::tcp::serve_tcp(broker, &listen) {
        Ok(handle) => handle,
        Err(e) => {
            eprintln!("cannot listen on {listen}: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    println!("listening on {}", handle.addr());
    // Serve until the process is killed; probing our own socket keeps
    // this loop free of busy-waiting.
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
        if TcpStream::connect(handle.addr()).is_err() {
            eprintln!("listener stopped");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
}
