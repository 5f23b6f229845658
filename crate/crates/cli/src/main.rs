use std::path::PathBuf;
use std::process::ExitCode;

use bloom_core::biosignal::{rmssd, IbiSeries, SignalSource};
use bloom_core::closedloop::{baseline, resonance_sweep, SweepConfig};
use bloom_core::guide::{delta_from_baseline, smooth_hr, target_br, BrClamp, DEFAULT_TAU_S};
use bloom_core::{CalibrationResult, Condition, GuideState, IbiSample, SubjectParams, SubjectState};
use bloom_gateway::headless::write_logs;
use bloom_gateway::ingest::{read_wire, replay_file};
use bloom_gateway::{analyze, simulate_condition, simulate_study, write_report, HeadlessConfig, ServiceConfig};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use tokio::sync::mpsc;

#[derive(Parser)]
#[command(name = "bloom", version, about = "Heart-rate-coupled breathing guide and study pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the session service.
    Serve {
        /// TOML config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config file and BLOOM_PORT.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Run headless sessions with simulated participants and write their logs.
    Simulate {
        /// `focus-static`, `ambient-dynamic`, ... or `all` for a balanced study.
        #[arg(long, default_value = "all")]
        condition: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Sessions per condition.
        #[arg(long, default_value_t = 9)]
        subjects: usize,
        #[arg(long, default_value = "sim-logs")]
        out: PathBuf,
    },
    /// Play back a recording and print the guide's response beat by beat.
    Replay {
        /// CSV with header `t_ms,ibi_ms`, or `-` for wire lines on stdin.
        #[arg(long)]
        file: String,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Divider for the heart-rate-coupled rate.
        #[arg(long, default_value_t = 15.0)]
        delta: f64,
    },
    /// Run the study analysis over session logs and datasets.
    Analyze {
        /// Log files, dataset CSVs, or directories of them.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        nperm: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Resonance sweep on a simulated participant.
    Calibrate {
        #[arg(long, value_delimiter = ',', default_value = "4.5,5.0,5.5,6.0,6.5")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        settle_s: u64,
        #[arg(long, default_value_t = 120)]
        record_s: u64,
    },
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> AnyResult<()> {
    match command {
        Command::Serve { config, port } => {
            let cfg = match config {
                Some(path) => ServiceConfig::load(&path)?,
                None => ServiceConfig::default(),
            }
            .with_env()?;
            let cfg = match port {
                Some(p) => ServiceConfig { port: p, ..cfg },
                None => cfg,
            };
            cfg.validate()?;
            runtime()?.block_on(bloom_gateway::serve(cfg))?;
        }
        Command::Simulate { condition, seed, subjects, out } => {
            let cfg = HeadlessConfig::default();
            let logs = if condition.eq_ignore_ascii_case("all") {
                simulate_study(subjects, seed, &cfg)?
            } else {
                simulate_condition(condition.parse::<Condition>()?, subjects, seed, &cfg)?
            };
            let paths = write_logs(&out, &logs)?;
            println!("wrote {} session logs to {}", paths.len(), out.display());
        }
        Command::Replay { file, speed, delta } => runtime()?.block_on(replay(file, speed, delta))?,
        Command::Analyze { inputs, out, nperm, seed } => {
            let analysis = analyze(&inputs, nperm, seed)?;
            write_report(&out, &analysis)?;
            print!("{}", analysis.report.to_text());
            eprint!("{}", analysis.diagnostics());
        }
        Command::Calibrate { rates, seed, settle_s, record_s } => calibrate(rates, seed, settle_s, record_s)?,
    }
    Ok(())
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}

async fn replay(file: String, speed: f64, delta: f64) -> AnyResult<()> {
    let (tx, mut rx) = mpsc::channel::<IbiSample>(256);
    let reader = tokio::spawn(async move {
        if file == "-" {
            read_wire(tokio::io::BufReader::new(tokio::io::stdin()), &tx).await
        } else {
            replay_file(std::path::Path::new(&file), speed, tx).await
        }
    });
    let mut guide = GuideState::new(0);
    let mut series = IbiSeries::new(SignalSource::Replay);
    while let Some(sample) = rx.recv().await {
        guide = smooth_hr(guide, sample, DEFAULT_TAU_S);
        let hr = guide.smoothed_hr_bpm.expect("set by the first beat");
        let br = target_br(hr, delta, BrClamp::default())?;
        println!("{}", serde_json::json!({ "t_ms": sample.t_ms, "ibi_ms": sample.ibi_ms, "hr_bpm": hr, "br_bpm": br }));
        series.push(sample)?;
    }
    let report = reader.await??;
    eprintln!("{} lines, {} accepted, {} malformed", report.lines, report.accepted, report.malformed);
    if series.len() >= 2 {
        eprintln!("RMSSD {:.4} s", rmssd(&series)?.value_s);
    }
    Ok(())
}

fn calibrate(rates: Vec<f64>, seed: u64, settle_s: u64, record_s: u64) -> AnyResult<()> {
    let params = SubjectParams { seed, ..SubjectParams::default() };
    params.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (rest, hr, subject) = baseline(&params, SubjectState::new(0), 60_000, &mut rng)?;
    let sweep = SweepConfig { rates_bpm: rates, settle_ms: settle_s * 1000, record_ms: record_s * 1000 };
    let (result, _) = resonance_sweep(&params, subject, &sweep, &mut rng)?;
    let CalibrationResult::ResonanceSweep { rate_bpm, per_candidate_rmssd } = result else {
        unreachable!("sweep yields a sweep result")
    };
    println!("resting HR {hr:.1} bpm");
    println!("rate_bpm  rmssd_s");
    for (rate, value) in per_candidate_rmssd {
        let mark = if rate == rate_bpm { "  *" } else { "" };
        println!("{rate:>8.2}  {value:.4}{mark}");
    }
    println!("resonance {rate_bpm} bpm, divider {:.2}", delta_from_baseline(&rest, rate_bpm)?);
    Ok(())
}
