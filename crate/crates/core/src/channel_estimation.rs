//! Least-squares channel estimation from time-orthogonal pilots, and the
//! SNR figures the mode controller works from.
//!
//! During slot `m` only transmitter `m` is active, so receiver `n` sees
//! `y = h_nm ts_m + noise` and the estimate is the correlation
//! `<y, ts_m> / <ts_m, ts_m>`. The physical gains are real, so the
//! estimate keeps the real part; the imaginary part is pure noise and is
//! kept as a quality indicator.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("training sequence for transmitter {0} has zero energy")]
    ZeroTraining(usize),
    #[error("expected {expected} {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("EVM is zero; SNR estimate saturated")]
    EvmSaturated,
    #[error("EVM {0} is negative or not finite")]
    InvalidEvm(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    #[serde(with = "matrix_rows")]
    pub h_hat: DMatrix<f64>,
    /// Imaginary part of each complex LS estimate; its square is the
    /// per-entry residual variance.
    #[serde(with = "matrix_rows")]
    pub imag_residue: DMatrix<f64>,
    /// Eigenvalues of `H_hat H_hat^T`, largest first.
    pub eigenvalues: Vec<f64>,
    /// Noise variance estimated from the pilot residual.
    pub noise_variance: f64,
    pub frame_index: u64,
}

impl ChannelEstimate {
    /// Wraps a known matrix (perfect channel knowledge).
    pub fn from_matrix(h: DMatrix<f64>, noise_variance: f64) -> Self {
        let eigenvalues = linalg::gram_eigenvalues(&h);
        let imag_residue = DMatrix::zeros(h.nrows(), h.ncols());
        Self {
            h_hat: h,
            imag_residue,
            eigenvalues,
            noise_variance,
            frame_index: 0,
        }
    }

    pub fn num_rx(&self) -> usize {
        self.h_hat.nrows()
    }

    pub fn num_tx(&self) -> usize {
        self.h_hat.ncols()
    }

    pub fn residual_variance(&self, rx: usize, tx: usize) -> f64 {
        self.imag_residue[(rx, tx)].powi(2)
    }

    /// Column sum: the channel a symbol sees when every transmitter sends it.
    pub fn effective_diversity_channel(&self) -> Vec<f64> {
        self.h_hat.row_iter().map(|r| r.sum()).collect()
    }
}

/// `observations[rx][slot]` against `known[tx]`; slot `m` belongs to
/// transmitter `m`.
pub fn estimate_channel(
    observations: &[Vec<Vec<Complex64>>],
    known: &[Vec<f64>],
) -> Result<ChannelEstimate, EstimationError> {
    let nt = known.len();
    let nr = observations.len();
    if nt == 0 {
        return Err(EstimationError::Dimension {
            what: "transmitters",
            expected: 1,
            got: 0,
        });
    }
    if nr == 0 {
        return Err(EstimationError::Dimension {
            what: "receivers",
            expected: 1,
            got: 0,
        });
    }
    let energies: Vec<f64> = known.iter().map(|ts| ts.iter().map(|v| v * v).sum()).collect();
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if let Some(m) = energies.iter().position(|&e| !(e > 0.0)) {
        return Err(EstimationError::ZeroTraining(m));
    }
    let mut h_hat = DMatrix::zeros(nr, nt);
    let mut imag = DMatrix::zeros(nr, nt);
    let mut residual_energy = 0.0;
    let mut samples = 0.0;
    for (n, slots) in observations.iter().enumerate() {
        if slots.len() != nt {
            return Err(EstimationError::Dimension {
                what: "training slots",
                expected: nt,
                got: slots.len(),
            });
        }
        for (m, (y, ts)) in slots.iter().zip(known).enumerate() {
            if y.len() != ts.len() {
                return Err(EstimationError::Dimension {
                    what: "slot samples",
                    expected: ts.len(),
                    got: y.len(),
                });
            }
            let corr: Complex64 = y.iter().zip(ts).map(|(a, &b)| a * b).sum();
            let h = corr / energies[m];
            h_hat[(n, m)] = h.re;
            imag[(n, m)] = h.im;
            residual_energy += y.iter().zip(ts).map(|(a, &b)| (a - h.re * b).norm_sqr()).sum::<f64>();
            // the real projection absorbs half a complex degree of freedom
            samples += y.len() as f64 - 0.5;
        }
    }
    Ok(ChannelEstimate {
        eigenvalues: linalg::gram_eigenvalues(&h_hat),
        h_hat,
        imag_residue: imag,
        noise_variance: (residual_energy / samples).max(0.0),
        frame_index: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubchannelSnrs {
    /// `rho * lambda_i` over the eigenvalues of `H_hat H_hat^T`.
    pub spatial_multiplexing: Vec<f64>,
    /// `(P_t / N_t) ||sum_m h_m||^2 / sigma^2`.
    pub spatial_diversity: f64,
}

pub fn eigen_snrs(est: &ChannelEstimate, tx_power: f64, num_tx: usize, noise_variance: f64) -> SubchannelSnrs {
    let rho = tx_power / (num_tx as f64 * noise_variance);
    let heff = est.effective_diversity_channel();
    SubchannelSnrs {
        spatial_multiplexing: est.eigenvalues.iter().map(|l| rho * l).collect(),
        spatial_diversity: rho * heff.iter().map(|v| v * v).sum::<f64>(),
    }
}

/// `SNR = 1 / EVM^2`.
pub fn snr_from_evm(evm: f64) -> Result<f64, EstimationError> {
    if !(evm.is_finite() && evm >= 0.0) {
        return Err(EstimationError::InvalidEvm(evm));
    }
    if evm == 0.0 {
        return Err(EstimationError::EvmSaturated);
    }
    Ok(1.0 / (evm * evm))
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::{apply_channel, ChannelMatrix};
    use crate::framing::{generate_training, TrainingConfig};
    use crate::rng;
    use rand::Rng;

    fn observe(h: &ChannelMatrix, pilots: &[Vec<f64>], seed: u64) -> Vec<Vec<Vec<Complex64>>> {
        let l = pilots[0].len();
        let nt = pilots.len();
        let tx: Vec<Vec<Complex64>> = (0..nt)
            .map(|m| {
                let mut s = vec![Complex64::new(0.0, 0.0); nt * l];
                for (k, &p) in pilots[m].iter().enumerate() {
                    s[m * l + k] = Complex64::new(p, 0.0);
                }
                s
            })
            .collect();
        let mut r = rng::stream(seed, &[]);
        apply_channel(h, &tx, &mut r)
            .unwrap()
            .into_iter()
            .map(|y| y.chunks(l).map(<[_]>::to_vec).collect())
            .collect()
    }

    fn training(seed: u64, l: usize) -> Vec<Vec<f64>> {
        generate_training(&TrainingConfig {
            length_per_tx: l,
            seed,
            num_tx: 2,
        })
        .unwrap()
        .pilots()
        .to_vec()
    }

    #[test]
    fn noiseless_example() {
        let h = ChannelMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 1.0]], 0.0).unwrap();
        let ts = training(1, 64);
        let est = estimate_channel(&observe(&h, &ts, 0), &ts).unwrap();
        assert!((&est.h_hat - h.gains()).norm() < 1e-12);
        assert!(est.noise_variance < 1e-28);
    }

    #[test]
    fn noiseless_random_channels_and_seeds() {
        let mut r = rng::stream(9, &[]);
        for i in 0..100 {
            let rows: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..2).map(|_| r.random_range(0.0..3.0)).collect())
                .collect();
            let h = ChannelMatrix::from_rows(&rows, 0.0).unwrap();
            let ts = training(i, 16 + i as usize);
            let est = estimate_channel(&observe(&h, &ts, i), &ts).unwrap();
            assert!((&est.h_hat - h.gains()).norm() / h.gains().norm().max(1e-300) <= 1e-10);
            assert!(est.eigenvalues.iter().all(|&l| l >= -1e-9));
        }
    }

    #[test]
    fn ls_error_variance() {
        // rho = 20 dB with unit pilots; complex LS error variance sigma^2 / (L E_ts),
        // half of it in the real part that survives projection.
        let sigma2 = 0.01;
        let l = 64;
        let h = ChannelMatrix::from_rows(&[vec![1.0, 0.3], vec![0.1, 0.8]], sigma2).unwrap();
        let ts = training(3, l);
        let (mut re2, mut im2, mut mean) = (0.0, 0.0, DMatrix::zeros(2, 2));
        let trials = 1000;
        for t in 0..trials {
            let est = estimate_channel(&observe(&h, &ts, 100 + t), &ts).unwrap();
            let err = &est.h_hat - h.gains();
            re2 += err.norm_squared();
            im2 += est.imag_residue.norm_squared();
            mean += &est.h_hat;
        }
        let n = (trials * 4) as f64;
        let complex_rms = ((re2 + im2) / n).sqrt();
        let real_rms = (re2 / n).sqrt();
        let formula = (sigma2 / l as f64).sqrt();
        assert!((complex_rms / formula - 1.0).abs() < 0.3, "{complex_rms} vs {formula}");
        assert!((real_rms / (formula / 2f64.sqrt()) - 1.0).abs() < 0.1, "{real_rms}");
        // unbiased within 3 standard errors
        let se = formula / 2f64.sqrt() / (trials as f64).sqrt();
        let bias = mean / trials as f64 - h.gains();
        assert!(bias.iter().all(|b| b.abs() < 3.0 * se), "{bias}");
    }

    #[test]
    fn noise_variance_estimate() {
        let sigma2 = 0.02;
        let h = ChannelMatrix::from_rows(&[vec![1.0, 0.3], vec![0.1, 0.8]], sigma2).unwrap();
        let ts = training(4, 256);
        let mut acc = 0.0;
        for t in 0..200 {
            acc += estimate_channel(&observe(&h, &ts, t), &ts).unwrap().noise_variance;
        }
        assert!((acc / 200.0 / sigma2 - 1.0).abs() < 0.02);
    }

    #[test]
    fn errors() {
        let ts = vec![vec![1.0; 4], vec![0.0; 4]];
        let obs = vec![vec![vec![Complex64::new(0.0, 0.0); 4]; 2]];
        assert_eq!(estimate_channel(&obs, &ts), Err(EstimationError::ZeroTraining(1)));
        let ts = vec![vec![1.0; 4], vec![1.0; 4]];
        let short = vec![vec![vec![Complex64::new(0.0, 0.0); 3]; 2]];
        assert!(matches!(
            estimate_channel(&short, &ts),
            Err(EstimationError::Dimension { .. })
        ));
        let one_slot = vec![vec![vec![Complex64::new(0.0, 0.0); 4]]];
        assert!(matches!(
            estimate_channel(&one_slot, &ts),
            Err(EstimationError::Dimension { .. })
        ));
    }

    #[test]
    fn eigen_snr_examples() {
        let rho = 10.0;
        // P_t = 2, N_t = 2, sigma^2 = 0.1 gives rho = 10
        let id = ChannelEstimate::from_matrix(DMatrix::identity(2, 2), 0.1);
        let s = eigen_snrs(&id, 2.0, 2, 0.1);
        assert!(s.spatial_multiplexing.iter().all(|v| (v - rho).abs() < 1e-9));
        assert!((s.spatial_diversity - 2.0 * rho).abs() < 1e-9);

        let ones = ChannelEstimate::from_matrix(DMatrix::from_element(2, 2, 1.0), 0.1);
        let s = eigen_snrs(&ones, 2.0, 2, 0.1);
        assert!((s.spatial_multiplexing[0] - 4.0 * rho).abs() < 1e-9);
        assert!(s.spatial_multiplexing[1].abs() < 1e-9);
        // column sum [2, 2]: ||.||^2 = 8
        assert!((s.spatial_diversity - 8.0 * rho).abs() < 1e-9);

        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.4, 1.1]);
        let a = eigen_snrs(&ChannelEstimate::from_matrix(m.clone(), 0.1), 2.0, 2, 0.1);
        let b = eigen_snrs(&ChannelEstimate::from_matrix(m * 3.0, 0.1), 2.0, 2, 0.1);
        for (x, y) in a.spatial_multiplexing.iter().zip(&b.spatial_multiplexing) {
            assert!((y / x - 9.0).abs() < 1e-9);
        }
        assert!((b.spatial_diversity / a.spatial_diversity - 9.0).abs() < 1e-12);
    }

    #[test]
    fn evm_to_snr() {
        assert!((snr_from_evm(0.1).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(snr_from_evm(1.0).unwrap(), 1.0);
        assert_eq!(snr_from_evm(0.0), Err(EstimationError::EvmSaturated));
        assert!(snr_from_evm(f64::NAN).is_err());
    }

    #[test]
    fn evm_snr_under_awgn() {
        let c = crate::constellation::Constellation::new(crate::constellation::QamOrder::Qam16);
        let mut r = rng::stream(15, &[]);
        let bits = rng::random_bits(&mut r, 4 * 50_000);
        let tx = c.map_bits(&bits).unwrap().symbols;
        let snr = 10f64.powf(1.5);
        let rx: Vec<Complex64> = tx
            .iter()
            .map(|s| s + rng::complex_gaussian(&mut r, 1.0 / snr))
            .collect();
        let evm = crate::constellation::compute_evm(&rx, &tx).unwrap();
        let est = snr_from_evm(evm).unwrap();
        assert!((10.0 * (est / snr).log10()).abs() < 0.5);
    }

    #[test]
    fn json_roundtrip() {
        let est = ChannelEstimate::from_matrix(DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]), 1e-3);
        let s = serde_json::to_string(&est).unwrap();
        assert!(s.contains("[[0.1,0.2],[0.3,0.4]]"));
        assert_eq!(serde_json::from_str::<ChannelEstimate>(&s).unwrap(), est);
    }
}
