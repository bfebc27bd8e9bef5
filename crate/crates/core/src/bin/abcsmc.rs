use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use abcsmc::diagnostics::Metric;
use abcsmc::harness::{self, HarnessError, EXIT_NO_ITERATION, EXIT_OK};

#[derive(Parser)]
#[command(name = "abcsmc", version, about = "ABC-SMC experiments: run, summarize, plot, reference")]
struct Cli {
    /// Worker threads for the particle sweep (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Allow the single-proposal r-hit kernel.
    #[arg(long, global = true)]
    allow_inefficient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Eps,
    Loss,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a configuration (single run or grid).
    Run {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print mean final-epsilon or loss tables over run records.
    Summarize {
        records: String,
        #[arg(long, value_enum, default_value = "eps")]
        metric: MetricArg,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write trace figures as SVG.
    Plot {
        records: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a reference posterior sample.
    Reference {
        model: String,
        #[arg(short, long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Rerun a record for exactly its completed iterations.
    Replay {
        record: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Run { config, output } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", config.display())))?;
            let outcome = harness::run_experiment(&text, &output, cli.workers, cli.allow_inefficient, |e| {
                match (&e.status, &e.skipped) {
                    (_, Some(reason)) => eprintln!("{}: skipped ({reason})", e.label),
                    (Some(s), _) => eprintln!("{}: {s:?}", e.label),
                    _ => {}
                }
            })?;
            eprintln!("{} of {} runs completed", outcome.completed(), outcome.entries.len());
            Ok(outcome.exit_code())
        }
        Command::Summarize { records, metric, csv } => {
            let recs: Vec<_> = harness::load_records(&records)?.into_iter().map(|(_, r)| r).collect();
            let metric = match metric {
                MetricArg::Eps => Metric::Epsilon,
                MetricArg::Loss => Metric::Loss,
            };
            let table = harness::summarize(&recs, metric)?;
            print!("{}", table.to_text());
            if let Some(p) = csv {
                harness::record::write_atomic(&p, &table.to_csv())?;
            }
            Ok(EXIT_OK)
        }
        Command::Plot { records, output } => {
            let recs: Vec<_> = harness::load_records(&records)?.into_iter().map(|(_, r)| r).collect();
            for p in harness::plot(&recs, &output)? {
                println!("{}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Reference { model, n, seed, output } => {
            harness::write_reference(&model, n, seed, &output)?;
            Ok(EXIT_OK)
        }
        Command::Replay { record, output } => {
            let rec = harness::read_record(&record)?;
            let spec = rec.replay_spec();
            let again = harness::execute(&spec, cli.workers)?;
            let stem = record.file_stem().and_then(|s| s.to_str()).unwrap_or("replay");
            harness::write_record(&output, stem, &again)?;
            let same = again.output == rec.output && again.final_epsilon() == rec.final_epsilon();
            println!("final epsilon and output sample {}", if same { "match" } else { "differ" });
            Ok(if again.status == harness::RunStatus::Completed { EXIT_OK } else { EXIT_NO_ITERATION })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
