//! Experiment configuration and seeded execution: single links, sweeps,
//! calibration and the self-test suite.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_estimation::EstimationError;
use crate::channel_model::{ChannelError, ChannelMatrix, GeometryConfig};
use crate::constellation::ConstellationError;
use crate::framing::{FrameLayout, FramingError};
use crate::link_adaptation::{AdaptPolicy, AdaptationError, ModeCode};
use crate::metrics::MetricsError;
use crate::mimo_detection::DetectionError;
use crate::rng;
use crate::waveform::{ShapingConfig, WaveformError};

mod calibrate;
mod link;
pub mod selftest;
mod sweep;

pub use calibrate::{calibrate, predicted_ber, verify_calibration, CalibrationRecord, CalibrationTarget};
pub use link::{
    build_report, matrix_config, run_link, ChannelStage, FrameOutcome, LinkContext, LinkRun, RxStage, TxFrame, TxStage,
};
pub use sweep::{points, sweep, SweepOutput};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Channel(_) => "channel",
            HarnessError::Framing(_) => "framing",
            HarnessError::Waveform(_) => "waveform",
            HarnessError::Constellation(_) => "constellation",
            HarnessError::Estimation(_) => "estimation",
            HarnessError::Detection(_) => "detection",
            HarnessError::Adaptation(_) => "adaptation",
            HarnessError::Metrics(_) => "metrics",
            HarnessError::Calibration(_) => "calibration",
            HarnessError::Transport(_) => "transport",
            HarnessError::Json(_) => "json",
            HarnessError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModePolicy {
    Adaptive,
    Fixed(ModeCode),
}

impl fmt::Display for ModePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModePolicy::Adaptive => f.write_str("adaptive"),
            ModePolicy::Fixed(m) => m.fmt(f),
        }
    }
}

impl FromStr for ModePolicy {
    type Err = AdaptationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("adaptive") {
            Ok(ModePolicy::Adaptive)
        } else {
            s.parse().map(ModePolicy::Fixed)
        }
    }
}

impl TryFrom<String> for ModePolicy {
    type Error = AdaptationError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModePolicy> for String {
    fn from(p: ModePolicy) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Geometry(GeometryConfig),
    Matrix { rows: Vec<Vec<f64>>, noise_variance: f64 },
}

impl ChannelSpec {
    pub fn num_tx(&self) -> usize {
        match self {
            ChannelSpec::Geometry(g) => g.num_tx,
            ChannelSpec::Matrix { rows, .. } => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn num_rx(&self) -> usize {
        match self {
            ChannelSpec::Geometry(g) => g.num_rx,
            ChannelSpec::Matrix { rows, .. } => rows.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb(Vec<f64>),
    DistanceM(Vec<f64>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            SweepAxis::SnrDb(v) | SweepAxis::DistanceM(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One operating point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Point {
    /// The channel exactly as configured.
    Native,
    /// Transmit SNR `rho = P_t / (N_t sigma^2)` in dB; overrides the noise.
    SnrDb(f64),
    /// Link distance for a geometry channel.
    DistanceM(f64),
}

impl Point {
    /// Key mixed into every random stream of this point.
    pub fn key(&self) -> u64 {
        match self {
            Point::Native => 0,
            Point::SnrDb(v) => rng::derive_seed(1, &[v.to_bits()]),
            Point::DistanceM(v) => rng::derive_seed(2, &[v.to_bits()]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Inproc,
    Udp,
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "udp" => Ok(TransportKind::Udp),
            other => Err(format!("unknown transport {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UdpConfig {
    pub host: String,
    /// Port 0 picks an ephemeral port (threaded emulation only).
    pub tx_port: u16,
    pub chan_port: u16,
    pub rx_port: u16,
    pub deadline_ms: u64,
}

impl Default for UdpConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            tx_port: 47100,
            chan_port: 47101,
            rx_port: 47102,
            deadline_ms: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: ModePolicy,
    pub channel: ChannelSpec,
    pub sweep: SweepAxis,
    pub frames: usize,
    /// Minimum payload bits per frame; rounded up to whole blocks.
    pub bits_per_frame: usize,
    pub seeds: Vec<u64>,
    pub waveform: bool,
    pub transport: TransportKind,
    pub layout: FrameLayout,
    pub shaping: ShapingConfig,
    pub policy: AdaptPolicy,
    /// Select modes with the true noise variance instead of the estimate.
    pub known_noise: bool,
    /// Frames between an estimate and the mode it selects taking effect (0 or 1).
    pub feedback_latency: usize,
    /// Leading frames left out of the statistics; `None` means 3 for
    /// adaptive runs and 0 for fixed modes.
    pub warmup_frames: Option<usize>,
    /// Largest random channel delay in samples (waveform path).
    pub max_delay_samples: usize,
    pub sync_threshold: f64,
    pub udp: UdpConfig,
    pub calibration: Option<CalibrationRecord>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: ModePolicy::Adaptive,
            channel: ChannelSpec::Geometry(GeometryConfig::default()),
            sweep: SweepAxis::DistanceM((1..=11).map(|i| 0.2 * i as f64).collect()),
            frames: 50,
            bits_per_frame: 16384,
            seeds: vec![1],
            waveform: false,
            transport: TransportKind::Inproc,
            layout: FrameLayout::default(),
            shaping: ShapingConfig::default(),
            policy: AdaptPolicy::default(),
            known_noise: true,
            feedback_latency: 1,
            warmup_frames: None,
            max_delay_samples: 64,
            sync_threshold: 0.2,
            udp: UdpConfig::default(),
            calibration: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn warmup(&self) -> usize {
        self.warmup_frames.unwrap_or(match self.mode {
            ModePolicy::Adaptive => 3,
            ModePolicy::Fixed(_) => 0,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.layout.validate()?;
        self.policy.validate()?;
        if self.waveform {
            self.shaping.validate()?;
            self.shaping.check_if_stage()?;
        }
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        if self.bits_per_frame == 0 {
            return bad("bits_per_frame must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.sweep.is_empty() {
            return bad("sweep axis is empty".into());
        }
        match &self.sweep {
            SweepAxis::SnrDb(v) if v.iter().any(|x| !x.is_finite()) => return bad("non-finite SNR".into()),
            SweepAxis::DistanceM(v) => {
                if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return bad("distances must be positive".into());
                }
                if !matches!(self.channel, ChannelSpec::Geometry(_)) {
                    return bad("a distance sweep needs a geometry channel".into());
                }
            }
            _ => {}
        }
        match &self.channel {
            ChannelSpec::Geometry(g) => g.validate()?,
            ChannelSpec::Matrix { rows, noise_variance } => {
                ChannelMatrix::from_rows(rows, *noise_variance)?;
            }
        }
        let nt = self.channel.num_tx();
        if self.layout.n_tx != nt || self.policy.num_tx != nt {
            return bad(format!(
                "transmitter count disagrees: channel {nt}, layout {}, policy {}",
                self.layout.n_tx, self.policy.num_tx
            ));
        }
        if self.feedback_latency > 1 {
            return bad("feedback_latency must be 0 or 1".into());
        }
        if !(self.sync_threshold > 0.0 && self.sync_threshold < 1.0) {
            return bad(format!("sync_threshold {} outside (0, 1)", self.sync_threshold));
        }
        Ok(())
    }

    /// Advisory messages that do not stop a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let total = (self.frames.saturating_sub(self.warmup()) * self.bits_per_frame) as f64;
        let floor = 10.0 / total.max(1.0);
        if floor > 1e-3 * self.policy.ber_target {
            out.push(format!(
                "BER resolvable per point is {floor:.2e}, above 1e-3 x target ({:.0e}); increase frames or bits_per_frame",
                1e-3 * self.policy.ber_target
            ));
        }
        out
    }

    pub fn fixed_mode(&self) -> Option<ModeCode> {
        match self.mode {
            ModePolicy::Fixed(m) => Some(m),
            ModePolicy::Adaptive => None,
        }
    }
}
