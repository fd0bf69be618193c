use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use comerge_core::harness::config::{parse_weights, RunConfig};
use comerge_core::harness::dataset::{ingest_dataset, DEFAULT_STRIDE};
use comerge_core::harness::eval::{evaluate_open_loop, ConstVelPredictor, EchoPredictor, ExternalPredictor, Predictor};
use comerge_core::harness::reflect::{reflection_records, write_records};
use comerge_core::harness::{load_config, replay, run_episode, EpisodeTrace};
use comerge_core::planning::external::{transport_from_endpoint, ENDPOINT_ENV};

#[derive(Parser)]
#[command(name = "comerge", version, about = "On-ramp merging simulator and evaluation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Echo,
    ConstVel,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode and write its trace.
    Run {
        /// TOML run configuration; the built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute scores from a trace and check them against the stored values.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// TOML file with `[weights]` keys to score with instead.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Score a predictor on recorded tracks.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        predictor: PredictorArg,
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        stride: usize,
        /// Reasoner endpoint for `--predictor external`.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
    /// Write reflection records for every failure in a trace.
    Reflect {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct CliError {
    kind: &'static str,
    message: String,
}

fn fail(kind: &'static str) -> impl Fn(String) -> CliError {
    move |message| CliError { kind, message }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError {
        kind: "io",
        message: format!("{}: {e}", path.display()),
    })
}

fn execute(cmd: Command) -> Result<serde_json::Value, CliError> {
    match cmd {
        Command::Run { config, seed, out } => {
            let mut cfg = match config {
                Some(p) => load_config(&p).map_err(|e| fail("config")(e.to_string()))?,
                None => RunConfig::with_defaults(),
            };
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            let trace = run_episode(&cfg).map_err(|e| fail("run")(e.to_string()))?;
            fs::create_dir_all(&out).map_err(|e| fail("io")(e.to_string()))?;
            let path = out.join(format!("trace-seed{}.jsonl", cfg.run.seed));
            trace.save(&path).map_err(|e| fail("io")(e.to_string()))?;
            Ok(json!({
                "trace": path.display().to_string(),
                "digest": trace.digest(),
                "ticks": trace.footer.ticks,
                "metrics": trace.footer.metrics,
                "outcomes": trace.footer.outcomes,
                "channel": trace.footer.channel,
            }))
        }
        Command::Replay { trace, weights } => {
            let w = match weights {
                Some(p) => Some(parse_weights(&read(&p)?).map_err(|e| fail("config")(e.to_string()))?),
                None => None,
            };
            let r = replay(&trace, w).map_err(|e| fail("replay")(e.to_string()))?;
            Ok(json!({
                "canonical": r.canonical,
                "ticks": r.ticks,
                "metrics": r.metrics,
                "stored_ds": r.stored_metrics.ds,
            }))
        }
        Command::Eval {
            dataset,
            predictor,
            stride,
            endpoint,
            timeout_ms,
        } => {
            let ds = ingest_dataset(&dataset, stride).map_err(|e| fail("dataset")(e.to_string()))?;
            let mut p: Box<dyn Predictor> = match predictor {
                PredictorArg::Echo => Box::new(EchoPredictor),
                PredictorArg::ConstVel => Box::new(ConstVelPredictor),
                PredictorArg::External => {
                    let ep = std::env::var(ENDPOINT_ENV).ok().or(endpoint).ok_or_else(|| CliError {
                        kind: "config",
                        message: format!("--endpoint or {ENDPOINT_ENV} is required"),
                    })?;
                    Box::new(ExternalPredictor {
                        transport: transport_from_endpoint(&ep).map_err(|e| fail("config")(e.to_string()))?,
                        timeout: Duration::from_millis(timeout_ms),
                    })
                }
            };
            let report = evaluate_open_loop(&ds, p.as_mut()).map_err(|e| fail("eval")(e.to_string()))?;
            eprint!("{}", report.table());
            Ok(json!({ "report": report, "skipped_vehicles": ds.skipped }))
        }
        Command::Reflect { trace, out } => {
            let t = EpisodeTrace::load(&trace).map_err(|e| fail("trace")(e.to_string()))?;
            let records = reflection_records(&t).map_err(|e| fail("reflect")(e.to_string()))?;
            let f = fs::File::create(&out).map_err(|e| fail("io")(e.to_string()))?;
            write_records(&records, std::io::BufWriter::new(f)).map_err(|e| fail("io")(e.to_string()))?;
            Ok(json!({ "records": records.len(), "out": out.display().to_string() }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.message, "kind": e.kind }));
            ExitCode::FAILURE
        }
    }
}
