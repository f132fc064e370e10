use clap::{Args, CommandFactory, Parser, Subcommand};
use dissim_core::analytics::q_table;
use dissim_core::output::{write_batch, write_q_table, write_run};
use dissim_core::{builtin_presets, find_preset, run, run_batch, validate_scenario, Scenario};
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "dissim", version, about = "Information dissemination simulator for ad hoc networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one run and write its CSVs.
    Run(RunArgs),
    /// Simulate several runs and write per-run and aggregate CSVs.
    Batch(RunArgs),
    /// List the built-in presets.
    Presets,
    /// Resolve and check a scenario without running it.
    Validate(ScenarioArgs),
    /// Write the reference interdistance density table.
    Qpdf {
        #[arg(long, default_value_t = 200)]
        bins: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario file in TOML.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Dotted-path override, e.g. `dissemination.cache_time=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    runs: Option<u32>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_name = "DIR", default_value = "dissim-out")]
    out: PathBuf,
    /// Worker threads for batches.
    #[arg(long, value_name = "N", default_value_t = 1)]
    parallel: usize,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn resolve(args: &ScenarioArgs) -> Result<Scenario, Failure> {
    let base = match (&args.config, &args.preset) {
        (Some(path), _) => Scenario::load(path).map_err(usage)?,
        (None, Some(name)) => match find_preset(name) {
            Some(p) => p.scenario,
            None => {
                let names: Vec<_> = builtin_presets().iter().map(|p| p.name).collect();
                return Err(usage(format!("unknown preset '{name}' (known: {})", names.join(", "))));
            }
        },
        (None, None) => Scenario::default(),
    };
    let mut s = base.with_overrides(&args.overrides).map_err(usage)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(runs) = args.runs {
        s.runs = runs;
    }
    validate_scenario(s).map_err(usage)
}

fn write_resolved(dir: &Path, s: &Scenario) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    fs::write(dir.join("scenario.resolved"), s.to_toml()).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn simulate(args: &RunArgs, batch: bool) -> Result<(), Failure> {
    let s = resolve(&args.scenario)?;
    write_resolved(&args.out, &s)?;
    if batch {
        let out = run_batch(&s, s.runs, args.parallel.max(1)).map_err(runtime)?;
        write_batch(&args.out, &out).map_err(runtime)?;
        println!("{} runs written to {}", out.runs.len(), args.out.display());
    } else {
        let out = run(&s, 0).map_err(runtime)?;
        write_run(&args.out, &out).map_err(runtime)?;
        println!(
            "run written to {}: mean index {:.4}, mean providers {:.1}, {} queries",
            args.out.display(),
            out.mean_index(),
            out.mean_providers(0.0, s.sim_time),
            out.counters.queries
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => simulate(&args, false),
        Command::Batch(args) => simulate(&args, true),
        Command::Presets => {
            for p in builtin_presets() {
                println!("{:<30} {}", p.name, p.description);
            }
            Ok(())
        }
        Command::Validate(args) => {
            let s = resolve(&args)?;
            print!("{}", s.to_toml());
            Ok(())
        }
        Command::Qpdf { bins, out } => {
            if bins == 0 {
                return Err(usage("bins: must be positive"));
            }
            let table = q_table(bins);
            match out {
                Some(path) => write_q_table(&path, &table).map_err(runtime),
                None => {
                    let mut w = std::io::stdout().lock();
                    let mut emit = || -> std::io::Result<()> {
                        writeln!(w, "x,q")?;
                        for (x, q) in &table {
                            writeln!(w, "{x},{q}")?;
                        }
                        w.flush()
                    };
                    emit().map_err(runtime)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
