//! Square M-QAM alphabets with per-axis reflected-binary (Gray) labelling.
//!
//! A label of `log2(M)` bits is split into an in-phase half (high bits) and a
//! quadrature half (low bits). Each half indexes one of `sqrt(M)` amplitude
//! levels through the reflected-binary code, so axis-adjacent points always
//! differ in exactly one bit. Level index 0 is the most positive amplitude,
//! which puts label `00` of 4-QAM at `(+1 + i)/sqrt(2)`.
//!
//! All alphabets are scaled to unit mean symbol energy; transmit power is
//! applied elsewhere as an explicit amplitude.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstellationError {
    #[error("unsupported QAM order {0} (expected 4, 16, 64 or 256)")]
    UnsupportedOrder(u32),
    #[error("bit count {bits} is not a multiple of {per_symbol} bits per symbol")]
    LengthMismatch { bits: usize, per_symbol: usize },
    #[error("sequence lengths differ: {received} received vs {reference} reference")]
    EvmLengthMismatch { received: usize, reference: usize },
    #[error("EVM reference is empty")]
    EmptyReference,
    #[error("EVM reference has zero energy")]
    ZeroEnergyReference,
}

/// The four square QAM orders a link may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum QamOrder {
    Qam4,
    Qam16,
    Qam64,
    Qam256,
}

impl QamOrder {
    pub const ALL: [QamOrder; 4] = [QamOrder::Qam4, QamOrder::Qam16, QamOrder::Qam64, QamOrder::Qam256];

    pub fn size(self) -> u32 {
        match self {
            QamOrder::Qam4 => 4,
            QamOrder::Qam16 => 16,
            QamOrder::Qam64 => 64,
            QamOrder::Qam256 => 256,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        self.size().trailing_zeros() as usize
    }

    /// Position in the ordered set {4, 16, 64, 256}.
    pub fn index(self) -> u8 {
        match self {
            QamOrder::Qam4 => 0,
            QamOrder::Qam16 => 1,
            QamOrder::Qam64 => 2,
            QamOrder::Qam256 => 3,
        }
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }
}

impl TryFrom<u32> for QamOrder {
    type Error = ConstellationError;

    fn try_from(m: u32) -> Result<Self, Self::Error> {
        match m {
            4 => Ok(QamOrder::Qam4),
            16 => Ok(QamOrder::Qam16),
            64 => Ok(QamOrder::Qam64),
            256 => Ok(QamOrder::Qam256),
            other => Err(ConstellationError::UnsupportedOrder(other)),
        }
    }
}

impl From<QamOrder> for u32 {
    fn from(order: QamOrder) -> u32 {
        order.size()
    }
}

impl fmt::Display for QamOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.size())
    }
}

/// Symbols produced by [`Constellation::map_bits`], tagged with their alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub symbols: Vec<Complex64>,
    pub order: QamOrder,
}

impl SymbolBlock {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: QamOrder,
    /// `points[label]` is the symbol carrying `label`.
    points: Vec<Complex64>,
    /// Per-axis amplitude for each level index (already scaled).
    levels: Vec<f64>,
    /// Gray code of each level index.
    gray: Vec<usize>,
    scale: f64,
}

fn reflected_binary(i: usize) -> usize {
    i ^ (i >> 1)
}

impl Constellation {
    pub fn new(order: QamOrder) -> Self {
        let side = 1usize << (order.bits_per_symbol() / 2);
        let m = order.size() as f64;
        // mean |p|^2 of the integer grid {±1, ±3, ...}^2 is 2(M-1)/3
        let scale = (1.5 / (m - 1.0)).sqrt();
        let levels: Vec<f64> = (0..side)
            .map(|i| ((side - 1) as f64 - 2.0 * i as f64) * scale)
            .collect();
        let gray: Vec<usize> = (0..side).map(reflected_binary).collect();
        let half_bits = order.bits_per_symbol() / 2;

        let mut points = vec![Complex64::new(0.0, 0.0); order.size() as usize];
        for (i_idx, &gi) in gray.iter().enumerate() {
            for (q_idx, &gq) in gray.iter().enumerate() {
                points[(gi << half_bits) | gq] = Complex64::new(levels[i_idx], levels[q_idx]);
            }
        }
        Self {
            order,
            points,
            levels,
            gray,
            scale,
        }
    }

    pub fn order(&self) -> QamOrder {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order.bits_per_symbol()
    }

    /// Points indexed by label.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    /// Maps MSB-first groups of `log2(M)` bits (each `0` or `1`) to symbols.
    pub fn map_bits(&self, bits: &[u8]) -> Result<SymbolBlock, ConstellationError> {
        let k = self.bits_per_symbol();
        if !bits.len().is_multiple_of(k) {
            return Err(ConstellationError::LengthMismatch {
                bits: bits.len(),
                per_symbol: k,
            });
        }
        let symbols = bits
            .chunks_exact(k)
            .map(|group| {
                let label = group.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
                self.points[label]
            })
            .collect();
        Ok(SymbolBlock {
            symbols,
            order: self.order,
        })
    }

    /// Nearest level index on one axis; exact ties go to the smaller Gray code.
    fn slice_axis(&self, v: f64) -> usize {
        let side = self.levels.len();
        let t = ((side - 1) as f64 - v / self.scale) / 2.0;
        if !t.is_finite() {
            return if v.is_nan() || v > 0.0 { 0 } else { side - 1 };
        }
        let lo = (t.floor().max(0.0) as usize).min(side - 1);
        let hi = (lo + 1).min(side - 1);
        let d_lo = (v - self.levels[lo]).abs();
        let d_hi = (v - self.levels[hi]).abs();
        if d_lo < d_hi {
            lo
        } else if d_hi < d_lo {
            hi
        } else if self.gray[lo] <= self.gray[hi] {
            lo
        } else {
            hi
        }
    }

    /// Label of the Euclidean-nearest point. The grid is separable, so the
    /// search reduces to one slice per axis.
    pub fn nearest_label(&self, z: Complex64) -> usize {
        let half_bits = self.bits_per_symbol() / 2;
        let i = self.slice_axis(z.re);
        let q = self.slice_axis(z.im);
        (self.gray[i] << half_bits) | self.gray[q]
    }

    /// Hard-decision demapping to MSB-first bits.
    pub fn demap_symbols(&self, received: &[Complex64]) -> Vec<u8> {
        let k = self.bits_per_symbol();
        let mut bits = Vec::with_capacity(received.len() * k);
        for &z in received {
            let label = self.nearest_label(z);
            for shift in (0..k).rev() {
                bits.push(((label >> shift) & 1) as u8);
            }
        }
        bits
    }

    /// Nearest constellation point (hard decision) for each input.
    pub fn decide(&self, received: &[Complex64]) -> Vec<Complex64> {
        received.iter().map(|&z| self.points[self.nearest_label(z)]).collect()
    }
}

pub fn build_constellation(m: u32) -> Result<Constellation, ConstellationError> {
    Ok(Constellation::new(QamOrder::try_from(m)?))
}

/// RMS error vector relative to the RMS of the reference.
pub fn compute_evm(received: &[Complex64], reference: &[Complex64]) -> Result<f64, ConstellationError> {
    if received.len() != reference.len() {
        return Err(ConstellationError::EvmLengthMismatch {
            received: received.len(),
            reference: reference.len(),
        });
    }
    if reference.is_empty() {
        return Err(ConstellationError::EmptyReference);
    }
    let (err, refp) = received
        .iter()
        .zip(reference)
        .fold((0.0, 0.0), |(e, p), (r, s)| (e + (r - s).norm_sqr(), p + s.norm_sqr()));
    if refp == 0.0 {
        return Err(ConstellationError::ZeroEnergyReference);
    }
    Ok((err / refp).sqrt())
}
