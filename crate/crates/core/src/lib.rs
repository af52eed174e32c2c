//! Adaptive MIMO visible-light link simulator.
//!
//! The crate models a 2x2 (or general `N_r x N_t`) intensity-modulated link
//! end to end: Gray-mapped square QAM, pilot-based least-squares channel
//! estimation, zero-forcing (spatial multiplexing) or maximal-ratio
//! (spatial diversity) detection, and a controller that picks one of eight
//! `{SM, SD} x {4, 16, 64, 256}-QAM` modes per frame from the estimated
//! channel. Runs are seeded and deterministic; an optional UDP transport
//! splits transmitter, channel and receiver into separate processes.

pub mod channel_estimation;
pub mod channel_model;
pub mod constellation;
pub mod framing;
pub mod harness;
pub mod linalg;
pub mod link_adaptation;
pub mod metrics;
pub mod mimo_detection;
pub mod rng;
pub mod transport;
pub mod waveform;

pub use channel_estimation::{estimate_channel, ChannelEstimate};
pub use channel_model::{apply_channel, generate_channel, ChannelMatrix, GeometryConfig};
pub use constellation::{build_constellation, compute_evm, Constellation, QamOrder};
pub use harness::{run_link, ExperimentConfig};
pub use link_adaptation::{select_mode, AdaptPolicy, ModeCode, Scheme};
pub use metrics::LinkReport;
