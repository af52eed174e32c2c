//! `avlc`: runs links, sweeps, calibration, the split transport roles and
//! the self-test from the command line.
//!
//! Results go to stdout as JSON (or CSV for sweeps). Failures print one JSON
//! line `{"error": {"kind": .., "message": ..}}` on stderr and exit nonzero.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_vlc::channel_model::GeometryConfig;
use adaptive_vlc::harness::{
    self, calibrate, points, selftest, sweep, verify_calibration, CalibrationTarget, ChannelSpec, ExperimentConfig,
    HarnessError, ModePolicy, Point, SweepAxis, TransportKind,
};
use adaptive_vlc::metrics::{write_csv, CsvRow, MetricsError};
use adaptive_vlc::transport::{self, Role, RoleOutput};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "avlc", version, about = "Adaptive 2x2 MIMO visible-light link simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file: CSV for runs and sweeps, config JSON for calibrate.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// sm4 .. sm256, sd4 .. sd256 or adaptive.
    #[arg(long, global = true)]
    mode: Option<ModePolicy>,
    #[arg(long, global = true)]
    frames: Option<usize>,
    #[arg(long, global = true)]
    waveform: Option<OnOff>,
    #[arg(long, global = true)]
    transport: Option<TransportKind>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One link at a single point; prints the report.
    Run(PointArgs),
    /// Sweep over transmit SNR.
    SweepSnr {
        /// Comma-separated SNRs in dB; defaults to the config's axis.
        #[arg(long, value_delimiter = ',')]
        snr_db: Vec<f64>,
    },
    /// Sweep over link distance.
    SweepDistance {
        /// Comma-separated distances in metres; defaults to the config's axis.
        #[arg(long, value_delimiter = ',')]
        distance_m: Vec<f64>,
    },
    /// Fits the geometry gain to a fixed-mode BER anchor.
    Calibrate {
        /// Anchor distance in metres.
        #[arg(long, default_value_t = 1.7)]
        distance_m: f64,
        #[arg(long, default_value_t = 1e-3)]
        ber_target: f64,
        /// Monte-Carlo frames for verifying the anchor; 0 skips it.
        #[arg(long, default_value_t = 0)]
        verify_frames: usize,
    },
    /// Transmitter role of a split UDP link.
    Tx(PointArgs),
    /// Channel emulator role of a split UDP link.
    Chan(PointArgs),
    /// Receiver role of a split UDP link; prints the report.
    Rx(PointArgs),
    /// Runs the invariant suites.
    Selftest,
}

#[derive(Debug, Args)]
struct PointArgs {
    /// Transmit SNR in dB.
    #[arg(long, conflicts_with = "distance_m")]
    snr_db: Option<f64>,
    /// Link distance in metres (geometry channels).
    #[arg(long)]
    distance_m: Option<f64>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("self-test failed: {0}")]
    Selftest(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Harness(e) => e.kind(),
            CliError::Metrics(_) => "metrics",
            CliError::Usage(_) => "usage",
            CliError::File { .. } => "io",
            CliError::Selftest(_) => "selftest",
        }
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_owned(),
        source,
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p).map_err(file_err(p))?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    if let Some(f) = c.frames {
        cfg.frames = f;
    }
    if let Some(w) = c.waveform {
        cfg.waveform = matches!(w, OnOff::On);
    }
    if let Some(t) = c.transport {
        cfg.transport = t;
    }
    Ok(cfg)
}

fn warn(cfg: &ExperimentConfig) {
    for w in cfg.warnings() {
        eprintln!("{}", json!({ "warning": w }));
    }
}

/// Explicit point, else the first point of the config's axis.
fn resolve_point(cfg: &ExperimentConfig, p: &PointArgs) -> Point {
    match (p.snr_db, p.distance_m) {
        (Some(s), _) => Point::SnrDb(s),
        (_, Some(d)) => Point::DistanceM(d),
        _ => points(cfg).first().copied().unwrap_or(Point::Native),
    }
}

fn single_seed(cfg: &ExperimentConfig) -> Result<u64, CliError> {
    cfg.seeds
        .first()
        .copied()
        .ok_or_else(|| CliError::Usage("no seed configured".into()))
}

fn write_rows(rows: &[CsvRow], out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => write_csv(rows, fs::File::create(p).map_err(file_err(p))?)?,
        None => write_csv(rows, std::io::stdout().lock())?,
    }
    Ok(())
}

/// Prints a line, treating a closed stdout (`| head`) as success.
fn emit(text: &str) -> Result<(), CliError> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::File {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn print_json(v: &serde_json::Value) -> Result<(), CliError> {
    emit(&serde_json::to_string_pretty(v).expect("serializable"))
}

fn run_sweep(mut cfg: ExperimentConfig, axis: Option<SweepAxis>, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(a) = axis {
        cfg.sweep = a;
    }
    cfg.validate()?;
    warn(&cfg);
    let res = sweep(&cfg)?;
    write_rows(&res.rows, out)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_deref();
    match cli.command {
        Command::Run(p) => {
            let point = resolve_point(&cfg, &p);
            cfg.validate()?;
            warn(&cfg);
            let seed = single_seed(&cfg)?;
            let report = match cfg.transport {
                TransportKind::Inproc => harness::run_link(&cfg, point, seed)?,
                TransportKind::Udp => transport::run_emulated_link(&cfg, point, seed)?,
            };
            if let Some(p) = out {
                write_rows(&[CsvRow::from_report(&report)], Some(p))?;
            }
            emit(&report.to_json())?;
        }
        Command::SweepSnr { snr_db } => {
            let axis = (!snr_db.is_empty()).then_some(SweepAxis::SnrDb(snr_db));
            if axis.is_none() && !matches!(cfg.sweep, SweepAxis::SnrDb(_)) {
                return Err(CliError::Usage("config sweeps distance; pass --snr-db".into()));
            }
            run_sweep(cfg, axis, out)?;
        }
        Command::SweepDistance { distance_m } => {
            let axis = (!distance_m.is_empty()).then_some(SweepAxis::DistanceM(distance_m));
            if axis.is_none() && !matches!(cfg.sweep, SweepAxis::DistanceM(_)) {
                return Err(CliError::Usage("config sweeps SNR; pass --distance-m".into()));
            }
            run_sweep(cfg, axis, out)?;
        }
        Command::Calibrate {
            distance_m,
            ber_target,
            verify_frames,
        } => {
            let ChannelSpec::Geometry(geo) = cfg.channel.clone() else {
                return Err(CliError::Usage("calibration needs a geometry channel".into()));
            };
            let mut target = CalibrationTarget {
                distance_m,
                ber_target,
                ..CalibrationTarget::default()
            };
            match cli.common.mode {
                Some(ModePolicy::Fixed(m)) => target.mode = m,
                Some(ModePolicy::Adaptive) => return Err(CliError::Usage("calibration needs a fixed mode".into())),
                None => {}
            }
            let mut record = calibrate(&geo, cfg.policy.tx_power, &target)?;
            if verify_frames > 0 {
                let seed = single_seed(&cfg)?;
                record.measured_ber = Some(verify_calibration(&cfg, &record, verify_frames, seed)?);
            }
            cfg.channel = ChannelSpec::Geometry(GeometryConfig {
                gain: record.gain,
                ..geo
            });
            cfg.calibration = Some(record.clone());
            if let Some(p) = out {
                fs::write(p, cfg.to_json()).map_err(file_err(p))?;
            }
            print_json(&json!({ "calibration": record, "config": cfg }))?;
        }
        Command::Tx(p) | Command::Chan(p) | Command::Rx(p) => unreachable!("{p:?} handled in roles"),
        Command::Selftest => {
            let checks = selftest::run_selftest();
            let mut failed = Vec::new();
            for c in &checks {
                emit(&serde_json::to_string(c).expect("serializable"))?;
                if !c.passed {
                    failed.push(c.name);
                }
            }
            if !failed.is_empty() {
                return Err(CliError::Selftest(failed.join("; ")));
            }
        }
    }
    Ok(())
}

fn role(cli: &Cli) -> Option<(Role, &PointArgs)> {
    match &cli.command {
        Command::Tx(p) => Some((Role::Tx, p)),
        Command::Chan(p) => Some((Role::Chan, p)),
        Command::Rx(p) => Some((Role::Rx, p)),
        _ => None,
    }
}

fn execute_role(cli: &Cli, role: Role, p: &PointArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&cli.common)?;
    cfg.transport = TransportKind::Udp;
    cfg.validate()?;
    let point = resolve_point(&cfg, p);
    let seed = single_seed(&cfg)?;
    match transport::run_role(role, &cfg, point, seed)? {
        RoleOutput::Tx(trace) => print_json(&json!({ "role": "tx", "mode_trace": trace }))?,
        RoleOutput::Chan => print_json(&json!({ "role": "chan", "frames": cfg.frames }))?,
        RoleOutput::Rx(report) => {
            if let Some(out) = cli.common.out.as_deref() {
                write_rows(&[CsvRow::from_report(&report)], Some(out))?;
            }
            emit(&report.to_json())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": msg.trim() } }));
            return ExitCode::from(2);
        }
    };
    let result = match role(&cli) {
        Some((r, p)) => execute_role(&cli, r, p),
        None => execute(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
