//! Linear MIMO detection: zero forcing for spatial multiplexing and
//! maximal-ratio combining for spatial diversity.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_estimation::ChannelEstimate;
use crate::linalg::{self, INVERSE_COND_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("expected {expected} receive streams, got {got}")]
    RxCount { expected: usize, got: usize },
    #[error("receive streams have unequal lengths")]
    UnequalLengths,
    #[error("effective diversity channel is zero")]
    Outage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMethod {
    Inverse,
    PseudoInverse,
    Mrc,
}

/// Linear receive filter `x_est = W y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    pub w: DMatrix<f64>,
    pub method: DetectionMethod,
    pub rank_deficient: bool,
}

impl Beamformer {
    /// `diag(W W^T)`: output noise variance per unit input noise variance.
    pub fn enhancement(&self) -> Vec<f64> {
        self.w.row_iter().map(|r| r.norm_squared()).collect()
    }
}

/// `H^-1` when square and well conditioned, otherwise the SVD pseudo-inverse.
pub fn zf_beamformer(h: &DMatrix<f64>) -> Beamformer {
    if h.is_square() && linalg::condition_number(h) < INVERSE_COND_LIMIT {
        if let Some(w) = h.clone().try_inverse() {
            return Beamformer {
                w,
                method: DetectionMethod::Inverse,
                rank_deficient: false,
            };
        }
    }
    let (w, rank_deficient) = linalg::pseudo_inverse(h);
    Beamformer {
        w,
        method: DetectionMethod::PseudoInverse,
        rank_deficient,
    }
}

/// `h_eff^T / ||h_eff||^2` for the column-summed channel.
pub fn mrc_beamformer(h: &DMatrix<f64>) -> Result<Beamformer, DetectionError> {
    let heff: Vec<f64> = h.row_iter().map(|r| r.sum()).collect();
    let energy: f64 = heff.iter().map(|v| v * v).sum();
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(energy > 0.0) {
        return Err(DetectionError::Outage);
    }
    Ok(Beamformer {
        w: DMatrix::from_fn(1, heff.len(), |_, n| heff[n] / energy),
        method: DetectionMethod::Mrc,
        rank_deficient: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    /// One stream per transmitter for ZF, a single stream for MRC.
    pub streams: Vec<Vec<Complex64>>,
    /// `diag(W W^T)`; multiply by the input noise variance for the
    /// post-detection noise variance.
    pub enhancement: Vec<f64>,
    pub method: DetectionMethod,
    pub rank_deficient: bool,
}

impl DetectorOutput {
    pub fn noise_variances(&self, noise_variance: f64) -> Vec<f64> {
        self.enhancement.iter().map(|e| e * noise_variance).collect()
    }
}

pub fn apply_beamformer(bf: &Beamformer, y: &[Vec<Complex64>]) -> Result<DetectorOutput, DetectionError> {
    let (outs, nr) = bf.w.shape();
    if y.len() != nr {
        return Err(DetectionError::RxCount {
            expected: nr,
            got: y.len(),
        });
    }
    let len = y.first().map_or(0, Vec::len);
    if y.iter().any(|s| s.len() != len) {
        return Err(DetectionError::UnequalLengths);
    }
    let streams = (0..outs)
        .map(|i| {
            let mut x = vec![Complex64::new(0.0, 0.0); len];
            for (n, yn) in y.iter().enumerate() {
                let w = bf.w[(i, n)];
                if w != 0.0 {
                    x.iter_mut().zip(yn).for_each(|(acc, v)| *acc += v * w);
                }
            }
            x
        })
        .collect();
    Ok(DetectorOutput {
        streams,
        enhancement: bf.enhancement(),
        method: bf.method,
        rank_deficient: bf.rank_deficient,
    })
}

pub fn zf_detect(est: &ChannelEstimate, y: &[Vec<Complex64>]) -> Result<DetectorOutput, DetectionError> {
    apply_beamformer(&zf_beamformer(&est.h_hat), y)
}

pub fn diversity_combine(est: &ChannelEstimate, y: &[Vec<Complex64>]) -> Result<DetectorOutput, DetectionError> {
    apply_beamformer(&mrc_beamformer(&est.h_hat)?, y)
}

/// Per-stream post-ZF SNR, `rho / diag(W W^T)`.
pub fn zf_stream_snrs(h: &DMatrix<f64>, rho: f64) -> Vec<f64> {
    zf_beamformer(h).enhancement().into_iter().map(|e| rho / e).collect()
}

/// Combined SNR after MRC on the column-summed channel, `rho ||h_eff||^2`.
pub fn diversity_snr(h: &DMatrix<f64>, rho: f64) -> f64 {
    rho * h.row_iter().map(|r| r.sum().powi(2)).sum::<f64>()
}
