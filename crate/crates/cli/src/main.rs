use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use cradlewatch_core::acoustics::{self, Band};
use cradlewatch_core::calibration::{self, CalibrationProfile};
use cradlewatch_core::canonical;
use cradlewatch_hub::{HubConfig, ServeError};
use cradlewatch_sim::{ExpectedOutcome, RunOptions, Scenario, Transcript};

/// Baby-surveillance hub, device simulator and signal tools.
#[derive(Parser)]
#[command(name = "cradlewatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the hub until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rebuild state from a hub log and audit its alerts.
    Replay {
        #[arg(long)]
        config: PathBuf,
        /// Log to read instead of the one named in the config.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Signal analysis of recorded audio.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Scripted device simulation.
    #[command(subcommand)]
    Sim(Sim),
    /// Sensor calibration.
    #[command(subcommand)]
    Calibrate(Calibrate),
}

#[derive(Subcommand)]
enum Analyze {
    /// Spectral flatness and peak of a sample file (one amplitude per line).
    Spectrum {
        csv: PathBuf,
        #[arg(long)]
        rate: u32,
        #[arg(long, default_value_t = Band::WHITE_NOISE)]
        band: Band,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum Sim {
    /// Play a scenario against a running hub.
    Run(RunArgs),
    /// Compare a transcript with an expected outcome.
    Check { transcript: PathBuf, expected: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Hub device listener, host:port.
    #[arg(long)]
    target: String,
    /// Hub HTTP listener; defaults to the target port plus one.
    #[arg(long)]
    http: Option<String>,
    #[arg(long)]
    speed: Option<f64>,
    /// Where to write the transcript; stdout when omitted.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Calibrate {
    /// Fit a constant offset from `sensor,reference` rows and print the profile.
    Fit {
        csv: PathBuf,
        #[arg(long)]
        device: String,
    },
}

fn init_logging() {
    let level = std::env::var("CRADLEWATCH_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    let level = match level.as_str() {
        "error" | "info" | "debug" => level,
        other => {
            eprintln!("CRADLEWATCH_LOG_LEVEL={other} is not one of error, info, debug; using info");
            "info".into()
        }
    };
    env_logger::Builder::new().parse_filters(&level).init();
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("cannot start async runtime")
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(config: &Path) -> ExitCode {
    let config = match HubConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(1);
        }
    };
    let rt = match runtime() {
        Ok(rt) => rt,
        Err(e) => {
            log::error!("{e:#}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(cradlewatch_hub::serve(config, shutdown_signal())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(ServeError::exit_code(&e) as u8)
        }
    }
}

fn replay(config: &Path, log: Option<&Path>) -> Result<ExitCode> {
    let config = HubConfig::load(config)?;
    let log = log.unwrap_or(&config.log_path);
    match cradlewatch_hub::replay(config.rules_config()?, log) {
        Ok(report) => {
            println!("{}", canonical::to_string(&report.view)?);
            eprintln!(
                "{} records, {} events, {} alerts reproduced",
                report.records,
                report.events,
                report.alerts.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("replay failed: {e}");
            Ok(ExitCode::from(1))
        }
    }
}

fn analyze_spectrum(csv: &Path, rate: u32, band: Band, json: bool) -> Result<ExitCode> {
    let file = std::fs::File::open(csv).with_context(|| format!("cannot open {}", csv.display()))?;
    let buf = acoustics::read_samples_csv(file, rate)?;
    let report = acoustics::analyze(&buf, band)?;
    if json {
        println!("{}", canonical::to_string(&report)?);
    } else {
        println!("samples   {}", buf.len());
        println!("band      {band} Hz");
        println!("flatness  {:.4}", report.flatness);
        println!("peak      {:.1} Hz", report.peak_hz);
    }
    Ok(ExitCode::SUCCESS)
}

fn sim_run(args: &RunArgs) -> Result<ExitCode> {
    let scenario = Scenario::load(&args.scenario)?;
    let mut opts = RunOptions::new(args.target.clone());
    opts.http = args.http.clone();
    opts.speed = args.speed;
    if let Some(s) = opts.speed {
        anyhow::ensure!(s > 0.0, "--speed must be positive");
    }
    let transcript = runtime()?.block_on(cradlewatch_sim::run(&scenario, &opts))?;
    let text = transcript.to_canonical();
    match &args.transcript {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn sim_check(transcript: &Path, expected: &Path) -> Result<ExitCode> {
    let t = Transcript::load(transcript).map_err(anyhow::Error::msg)?;
    let e = ExpectedOutcome::load(expected).map_err(anyhow::Error::msg)?;
    let report = cradlewatch_sim::check(&t, &e);
    print!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn calibrate_fit(csv: &Path, device: &str) -> Result<ExitCode> {
    let samples = calibration::load_samples_csv(csv)?;
    let profile = CalibrationProfile::fitted(device, samples.clone())?;
    eprintln!("{:>8} {:>8} {:>8} {:>8}", "sensor", "ref", "err%", "fit err%");
    for s in &samples {
        let before = calibration::relative_error(s.sensor_reading_c, s.reference_reading_c)?;
        let after = calibration::relative_error(profile.apply(s.sensor_reading_c), s.reference_reading_c)?;
        eprintln!(
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            s.sensor_reading_c,
            s.reference_reading_c,
            calibration::round_display(before),
            calibration::round_display(after)
        );
    }
    println!("{}", canonical::to_string(&profile)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let result = match &cli.command {
        Command::Serve { config } => return serve(config),
        Command::Replay { config, log } => replay(config, log.as_deref()),
        Command::Analyze(Analyze::Spectrum { csv, rate, band, json }) => analyze_spectrum(csv, *rate, *band, *json),
        Command::Sim(Sim::Run(args)) => sim_run(args),
        Command::Sim(Sim::Check { transcript, expected }) => sim_check(transcript, expected),
        Command::Calibrate(Calibrate::Fit { csv, device }) => calibrate_fit(csv, device),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
