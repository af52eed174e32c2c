//! Frame construction and parsing.
//!
//! A frame carries, per transmitter, a training region of `n_tx` slots of
//! `l_ts` BPSK symbols followed by payload blocks of `block` symbols, each
//! preceded by a cyclic prefix of `cp` symbols. In the training region only
//! the slot owner is active, so the training matrix is block diagonal:
//!
//! ```text
//!         slot 0   slot 1
//! tx 0  [  ts_0      0   ]
//! tx 1  [   0      ts_1  ]
//! ```

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::QamOrder;
use crate::rng;

pub const MIN_TRAINING_LEN: usize = 16;
/// Upper bounds that keep layout arithmetic far from overflow.
pub const MAX_TRAINING_LEN: usize = 1 << 20;
pub const MAX_TX: usize = 16;
pub const MAX_BLOCK: usize = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FramingError {
    #[error("training length {0} is below the minimum of {MIN_TRAINING_LEN}")]
    TrainingTooShort(usize),
    #[error("transmitter count must be at least 1")]
    NoTransmitters,
    #[error("layout field {0} is out of range")]
    OutOfRange(&'static str),
    #[error("block size must be at least 1")]
    ZeroBlock,
    #[error("cyclic prefix {cp} exceeds block size {block}")]
    PrefixTooLong { cp: usize, block: usize },
    #[error("expected {expected} symbols, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("payload length {len} is not a multiple of block size {block}")]
    NotBlockAligned { len: usize, block: usize },
    #[error("payload lengths differ across transmitters")]
    UnequalPayloads,
    #[error("expected {expected} streams, got {got}")]
    StreamCount { expected: usize, got: usize },
    #[error("frame layout json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub length_per_tx: usize,
    pub seed: u64,
    pub num_tx: usize,
}

impl TrainingConfig {
    fn validate(&self) -> Result<(), FramingError> {
        if self.num_tx == 0 {
            return Err(FramingError::NoTransmitters);
        }
        if self.length_per_tx < MIN_TRAINING_LEN {
            return Err(FramingError::TrainingTooShort(self.length_per_tx));
        }
        if self.length_per_tx > MAX_TRAINING_LEN {
            return Err(FramingError::OutOfRange("l_ts"));
        }
        if self.num_tx > MAX_TX {
            return Err(FramingError::OutOfRange("n_tx"));
        }
        Ok(())
    }
}

/// Seeded ±1 pilot sequences, one per transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    cfg: TrainingConfig,
    pilots: Vec<Vec<f64>>,
}

pub fn generate_training(cfg: &TrainingConfig) -> Result<Training, FramingError> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[0x7472_6169_6e00]);
    let pilots = (0..cfg.num_tx)
        .map(|_| {
            (0..cfg.length_per_tx)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    Ok(Training { cfg: *cfg, pilots })
}

impl Training {
    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn pilots(&self) -> &[Vec<f64>] {
        &self.pilots
    }

    pub fn region_len(&self) -> usize {
        self.cfg.num_tx * self.cfg.length_per_tx
    }

    /// The full training region as sent by transmitter `tx`.
    pub fn tx_region(&self, tx: usize) -> Vec<Complex64> {
        let l = self.cfg.length_per_tx;
        let mut out = vec![Complex64::new(0.0, 0.0); self.region_len()];
        for (k, &p) in self.pilots[tx].iter().enumerate() {
            out[tx * l + k] = Complex64::new(p, 0.0);
        }
        out
    }
}

pub fn add_cyclic_prefix<T: Copy>(block: &[T], cp: usize) -> Result<Vec<T>, FramingError> {
    if cp > block.len() {
        return Err(FramingError::PrefixTooLong { cp, block: block.len() });
    }
    let mut out = Vec::with_capacity(block.len() + cp);
    out.extend_from_slice(&block[block.len() - cp..]);
    out.extend_from_slice(block);
    Ok(out)
}

pub fn remove_cyclic_prefix<T: Copy>(seq: &[T], block: usize, cp: usize) -> Result<Vec<T>, FramingError> {
    if seq.len() != block + cp {
        return Err(FramingError::LengthMismatch {
            expected: block + cp,
            got: seq.len(),
        });
    }
    Ok(seq[cp..].to_vec())
}

/// Everything a receiver needs to split a frame. Serialized with the field
/// names `l_ts`, `block`, `cp`, `n_tx`, `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub l_ts: usize,
    pub block: usize,
    pub cp: usize,
    pub n_tx: usize,
    pub seed: u64,
}

impl Default for FrameLayout {
    fn default() -> Self {
        Self {
            l_ts: 64,
            block: 256,
            cp: 8,
            n_tx: 2,
            seed: 0x5eed,
        }
    }
}

impl FrameLayout {
    pub fn validate(&self) -> Result<(), FramingError> {
        self.training_config().validate()?;
        if self.block == 0 {
            return Err(FramingError::ZeroBlock);
        }
        if self.block > MAX_BLOCK {
            return Err(FramingError::OutOfRange("block"));
        }
        if self.cp > self.block {
            return Err(FramingError::PrefixTooLong {
                cp: self.cp,
                block: self.block,
            });
        }
        Ok(())
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            length_per_tx: self.l_ts,
            seed: self.seed,
            num_tx: self.n_tx,
        }
    }

    pub fn training_len(&self) -> usize {
        self.n_tx * self.l_ts
    }

    pub fn frame_len(&self, num_blocks: usize) -> usize {
        self.training_len() + num_blocks * (self.block + self.cp)
    }

    pub fn num_blocks_for(&self, frame_len: usize) -> Result<usize, FramingError> {
        let body = frame_len
            .checked_sub(self.training_len())
            .ok_or(FramingError::LengthMismatch {
                expected: self.training_len(),
                got: frame_len,
            })?;
        let wrapped = self.block + self.cp;
        if body % wrapped != 0 {
            return Err(FramingError::LengthMismatch {
                expected: self.frame_len(body / wrapped),
                got: frame_len,
            });
        }
        Ok(body / wrapped)
    }

    /// Share of the frame spent on training and prefixes.
    pub fn overhead_fraction(&self, num_blocks: usize) -> f64 {
        let overhead = self.training_len() + num_blocks * self.cp;
        overhead as f64 / self.frame_len(num_blocks) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FramingError> {
        let layout: FrameLayout = serde_json::from_str(s).map_err(|e| FramingError::Json(e.to_string()))?;
        layout.validate()?;
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// One symbol stream per transmitter, all the same length.
    pub streams: Vec<Vec<Complex64>>,
    pub layout: FrameLayout,
    pub num_blocks: usize,
    pub order: Option<QamOrder>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.streams.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Assembles training and CP-wrapped payload for each transmitter. Spatial
/// diversity frames pass the same payload for every transmitter.
pub fn build_frame(
    payloads: &[Vec<Complex64>],
    training: &Training,
    layout: &FrameLayout,
    order: Option<QamOrder>,
) -> Result<Frame, FramingError> {
    layout.validate()?;
    if payloads.len() != layout.n_tx {
        return Err(FramingError::StreamCount {
            expected: layout.n_tx,
            got: payloads.len(),
        });
    }
    let len = payloads[0].len();
    if payloads.iter().any(|p| p.len() != len) {
        return Err(FramingError::UnequalPayloads);
    }
    if !len.is_multiple_of(layout.block) {
        return Err(FramingError::NotBlockAligned {
            len,
            block: layout.block,
        });
    }
    let num_blocks = len / layout.block;
    let streams = payloads
        .iter()
        .enumerate()
        .map(|(tx, payload)| {
            let mut s = training.tx_region(tx);
            s.reserve(num_blocks * (layout.block + layout.cp));
            for block in payload.chunks_exact(layout.block) {
                s.extend(add_cyclic_prefix(block, layout.cp)?);
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>, FramingError>>()?;
    Ok(Frame {
        streams,
        layout: *layout,
        num_blocks,
        order,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFrame {
    /// `training[rx][slot]`: what receiver `rx` saw during transmitter `slot`'s pilots.
    pub training: Vec<Vec<Vec<Complex64>>>,
    /// CP-stripped payload per receiver, blocks concatenated.
    pub payload: Vec<Vec<Complex64>>,
    pub num_blocks: usize,
}

pub fn parse_frame(received: &[Vec<Complex64>], layout: &FrameLayout) -> Result<ParsedFrame, FramingError> {
    layout.validate()?;
    let len = received.first().map_or(0, Vec::len);
    let num_blocks = layout.num_blocks_for(len)?;
    let mut training = Vec::with_capacity(received.len());
    let mut payload = Vec::with_capacity(received.len());
    for stream in received {
        if stream.len() != len {
            return Err(FramingError::LengthMismatch {
                expected: len,
                got: stream.len(),
            });
        }
        let (train, body) = stream.split_at(layout.training_len());
        training.push(train.chunks_exact(layout.l_ts).map(<[_]>::to_vec).collect());
        let mut data = Vec::with_capacity(num_blocks * layout.block);
        for wrapped in body.chunks_exact(layout.block + layout.cp) {
            data.extend(remove_cyclic_prefix(wrapped, layout.block, layout.cp)?);
        }
        payload.push(data);
    }
    Ok(ParsedFrame {
        training,
        payload,
        num_blocks,
    })
}
