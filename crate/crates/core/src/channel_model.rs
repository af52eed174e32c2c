//! Real, non-negative, frequency-flat MIMO intensity channel `y = Hx + n`.
//!
//! Gains come from a line-of-sight Lambertian model over a planar geometry:
//! transmitters and receivers sit on two parallel lines `d` metres apart,
//! centred on the same axis. For transmitter `m` and receiver `n` with
//! lateral offset `dx`,
//!
//! ```text
//! d_nm = sqrt(d^2 + dx^2),  cos(phi) = cos(psi) = d / d_nm
//! h_nm = g0 * cos(phi)^m * cos(psi) / d_nm^2
//! ```
//!
//! and every cross path is floored at `kappa * g0 / d^2` (stray light
//! through the receive optics).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::rng::complex_gaussian;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("channel gain ({row}, {col}) = {value} is negative or not finite")]
    InvalidGain { row: usize, col: usize, value: f64 },
    #[error("noise variance {0} must be finite and non-negative")]
    InvalidNoise(f64),
    #[error("degenerate geometry: {0}")]
    Geometry(String),
    #[error("channel is {rows}x{cols} but got {got} transmit streams")]
    TxCount { rows: usize, cols: usize, got: usize },
    #[error("transmit streams have unequal lengths")]
    UnequalLengths,
}

/// `H` (receivers by transmitters) and the per-branch complex noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    gains: DMatrix<f64>,
    noise_variance: f64,
}

impl ChannelMatrix {
    /// `noise_variance` may be zero for noiseless runs.
    pub fn new(gains: DMatrix<f64>, noise_variance: f64) -> Result<Self, ChannelError> {
        for (idx, &value) in gains.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                let (row, col) = (idx % gains.nrows(), idx / gains.nrows());
                return Err(ChannelError::InvalidGain { row, col, value });
            }
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(ChannelError::InvalidNoise(noise_variance));
        }
        Ok(Self { gains, noise_variance })
    }

    pub fn from_rows(rows: &[Vec<f64>], noise_variance: f64) -> Result<Self, ChannelError> {
        let nr = rows.len();
        let nt = rows.first().map_or(0, Vec::len);
        if nr == 0 || nt == 0 || rows.iter().any(|r| r.len() != nt) {
            return Err(ChannelError::Geometry("ragged or empty gain rows".into()));
        }
        Self::new(DMatrix::from_fn(nr, nt, |i, j| rows[i][j]), noise_variance)
    }

    pub fn identity(n: usize, noise_variance: f64) -> Result<Self, ChannelError> {
        Self::new(DMatrix::identity(n, n), noise_variance)
    }

    pub fn gains(&self) -> &DMatrix<f64> {
        &self.gains
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn num_rx(&self) -> usize {
        self.gains.nrows()
    }

    pub fn num_tx(&self) -> usize {
        self.gains.ncols()
    }

    pub fn with_noise(&self, noise_variance: f64) -> Result<Self, ChannelError> {
        Self::new(self.gains.clone(), noise_variance)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_rx())
            .map(|i| (0..self.num_tx()).map(|j| self.gains[(i, j)]).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub distance_m: f64,
    pub tx_spacing_m: f64,
    pub rx_spacing_m: f64,
    pub lambertian_order: f64,
    /// Folds emitter power, optics and responsivity into one constant.
    pub gain: f64,
    pub crosstalk_floor: f64,
    pub noise_variance: f64,
    pub num_tx: usize,
    pub num_rx: usize,
}

impl Default for GeometryConfig {
    /// Collimated 2x2 link calibrated so that fixed SM-64 crosses BER 1e-3
    /// at 1.7 m (see `harness::calibrate`).
    fn default() -> Self {
        Self {
            distance_m: 1.0,
            tx_spacing_m: 1.2,
            rx_spacing_m: 1.2,
            lambertian_order: 120.0,
            gain: DEFAULT_CALIBRATED_GAIN,
            crosstalk_floor: 0.05,
            noise_variance: 1e-4,
            num_tx: 2,
            num_rx: 2,
        }
    }
}

/// Output of `calibrate` for the default geometry and noise variance.
pub const DEFAULT_CALIBRATED_GAIN: f64 = 0.38902502930807625;

impl GeometryConfig {
    pub fn at_distance(&self, distance_m: f64) -> Self {
        Self { distance_m, ..*self }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.distance_m) {
            return Err(ChannelError::Geometry(format!("distance {} m", self.distance_m)));
        }
        if !(self.tx_spacing_m.is_finite() && self.tx_spacing_m >= 0.0)
            || !(self.rx_spacing_m.is_finite() && self.rx_spacing_m >= 0.0)
        {
            return Err(ChannelError::Geometry("spacing must be finite and non-negative".into()));
        }
        if !(self.lambertian_order.is_finite() && self.lambertian_order >= 1.0) {
            return Err(ChannelError::Geometry(format!(
                "Lambertian order {}",
                self.lambertian_order
            )));
        }
        if !positive(self.gain) {
            return Err(ChannelError::Geometry(format!("gain {}", self.gain)));
        }
        if !(0.0..1.0).contains(&self.crosstalk_floor) {
            return Err(ChannelError::Geometry(format!(
                "crosstalk floor {}",
                self.crosstalk_floor
            )));
        }
        if !positive(self.noise_variance) {
            return Err(ChannelError::InvalidNoise(self.noise_variance));
        }
        if self.num_tx == 0 || self.num_rx == 0 {
            return Err(ChannelError::Geometry(
                "need at least one transmitter and receiver".into(),
            ));
        }
        Ok(())
    }
}

fn lateral_position(index: usize, count: usize, spacing: f64) -> f64 {
    (index as f64 - (count as f64 - 1.0) / 2.0) * spacing
}

pub fn generate_channel(geo: &GeometryConfig) -> Result<ChannelMatrix, ChannelError> {
    geo.validate()?;
    let d = geo.distance_m;
    let on_axis = geo.gain / (d * d);
    let gains = DMatrix::from_fn(geo.num_rx, geo.num_tx, |n, m| {
        let dx = lateral_position(n, geo.num_rx, geo.rx_spacing_m) - lateral_position(m, geo.num_tx, geo.tx_spacing_m);
        let d2 = d * d + dx * dx;
        let cos = d / d2.sqrt();
        let h = geo.gain * cos.powf(geo.lambertian_order) * cos / d2;
        if n == m {
            h
        } else {
            h.max(geo.crosstalk_floor * on_axis)
        }
    });
    ChannelMatrix::new(gains, geo.noise_variance)
}

/// Noiseless `Hx`.
pub fn apply_gains(h: &ChannelMatrix, tx: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>, ChannelError> {
    if tx.len() != h.num_tx() {
        return Err(ChannelError::TxCount {
            rows: h.num_rx(),
            cols: h.num_tx(),
            got: tx.len(),
        });
    }
    let len = tx.first().map_or(0, Vec::len);
    if tx.iter().any(|s| s.len() != len) {
        return Err(ChannelError::UnequalLengths);
    }
    Ok((0..h.num_rx())
        .map(|n| {
            let mut y = vec![Complex64::new(0.0, 0.0); len];
            for (m, stream) in tx.iter().enumerate() {
                let g = h.gains[(n, m)];
                if g == 0.0 {
                    continue;
                }
                y.iter_mut().zip(stream).for_each(|(acc, x)| *acc += x * g);
            }
            y
        })
        .collect())
}

/// Adds circular complex Gaussian noise of total variance `variance`, stream
/// by stream, sample by sample.
pub fn add_noise<R: Rng + ?Sized>(streams: &mut [Vec<Complex64>], variance: f64, rng: &mut R) {
    if variance == 0.0 {
        return;
    }
    for stream in streams.iter_mut() {
        for z in stream.iter_mut() {
            *z += complex_gaussian(rng, variance);
        }
    }
}

/// Adds real Gaussian noise of variance `variance` to the real part only
/// (passband samples).
pub fn add_real_noise<R: Rng + ?Sized>(streams: &mut [Vec<Complex64>], variance: f64, rng: &mut R) {
    if variance == 0.0 {
        return;
    }
    let s = variance.sqrt();
    for stream in streams.iter_mut() {
        for z in stream.iter_mut() {
            let g: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            z.re += g * s;
        }
    }
}

/// `y_n[k] = sum_m h_nm x_m[k] + n_n[k]` with noise of variance
/// `h.noise_variance()`.
pub fn apply_channel<R: Rng + ?Sized>(
    h: &ChannelMatrix,
    tx: &[Vec<Complex64>],
    rng: &mut R,
) -> Result<Vec<Vec<Complex64>>, ChannelError> {
    let mut y = apply_gains(h, tx)?;
    add_noise(&mut y, h.noise_variance, rng);
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    /// `rho * lambda_i^2` for the eigenvalues of `H H*`, largest first.
    pub eigen_snrs: Vec<f64>,
    /// `rho * ||H||_F^2`.
    pub frobenius_snr: f64,
    /// `rho = P_t / (N_t sigma^2)`.
    pub rho: f64,
}

pub fn transmit_snr(tx_power: f64, num_tx: usize, noise_variance: f64) -> f64 {
    tx_power / (num_tx as f64 * noise_variance)
}

pub fn snr_per_stream(h: &DMatrix<f64>, tx_power: f64, num_tx: usize, noise_variance: f64) -> SnrSummary {
    let rho = transmit_snr(tx_power, num_tx, noise_variance);
    SnrSummary {
        eigen_snrs: linalg::gram_eigenvalues(h).into_iter().map(|l| rho * l).collect(),
        frobenius_snr: rho * h.norm_squared(),
        rho,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn geo() -> GeometryConfig {
        GeometryConfig {
            distance_m: 1.5,
            tx_spacing_m: 50.0,
            rx_spacing_m: 50.0,
            lambertian_order: 1.0,
            gain: 0.8,
            crosstalk_floor: 0.0,
            noise_variance: 1e-3,
            num_tx: 2,
            num_rx: 2,
        }
    }

    #[test]
    fn aligned_wide_spacing_is_diagonal() {
        let h = generate_channel(&geo()).unwrap();
        let g = h.gains();
        let direct = 0.8 / 1.5f64.powi(2);
        assert!((g[(0, 0)] - direct).abs() < 1e-15);
        assert!((g[(1, 1)] - direct).abs() < 1e-15);
        assert!(g[(0, 1)] < 1e-5 * direct && g[(1, 0)] < 1e-5 * direct);
    }

    #[test]
    fn doubling_distance_quarters_aligned_gains() {
        let near = generate_channel(&geo()).unwrap();
        let far = generate_channel(&geo().at_distance(3.0)).unwrap();
        for n in 0..2 {
            assert!((far.gains()[(n, n)] * 4.0 - near.gains()[(n, n)]).abs() < 1e-15);
        }
        let floored = GeometryConfig {
            crosstalk_floor: 0.1,
            ..geo()
        };
        let a = generate_channel(&floored).unwrap();
        let b = generate_channel(&floored.at_distance(3.0)).unwrap();
        assert!((b.gains()[(0, 1)] * 4.0 - a.gains()[(0, 1)]).abs() < 1e-15);
    }

    #[test]
    fn default_geometry_condition_number() {
        let h = generate_channel(&GeometryConfig::default()).unwrap();
        let sv = linalg::singular_values(h.gains());
        let cond = sv[0] / sv[sv.len() - 1];
        assert!(cond.is_finite() && cond > 1.0 && cond < 2.0, "{cond}");
        // floor-dominated: H = g0/d^2 [[1, k], [k, 1]], singular values g0/d^2 (1 +/- k)
        let g = GeometryConfig::default();
        let expect = (1.0 + g.crosstalk_floor) / (1.0 - g.crosstalk_floor);
        assert!((cond - expect).abs() < 1e-9);
    }

    #[test]
    fn gains_non_increasing_with_distance_on_working_range() {
        // past ~5.3 m the Lambertian cross term rises above the floor and
        // keeps growing until d = spacing * sqrt((m + 1) / 2)
        let g = GeometryConfig::default();
        let mut prev = generate_channel(&g.at_distance(0.1)).unwrap();
        for i in 2..=50 {
            let cur = generate_channel(&g.at_distance(0.1 * i as f64)).unwrap();
            for (a, b) in cur.gains().iter().zip(prev.gains().iter()) {
                assert!(a <= b, "entry grew at {} m", 0.1 * i as f64);
            }
            prev = cur;
        }
    }

    #[test]
    fn invalid_geometry() {
        assert!(generate_channel(&geo().at_distance(0.0)).is_err());
        assert!(ChannelMatrix::from_rows(&[vec![1.0, -0.1]], 1.0).is_err());
        assert!(ChannelMatrix::identity(2, f64::NAN).is_err());
    }

    fn ramp(len: usize, scale: f64) -> Vec<Complex64> {
        (0..len)
            .map(|k| Complex64::new(k as f64 * scale, 1.0 - k as f64))
            .collect()
    }

    #[test]
    fn identity_and_diagonal_channels() {
        let mut r = rng::stream(1, &[]);
        let x = vec![ramp(8, 1.0), ramp(8, -0.5)];
        let h = ChannelMatrix::identity(2, 0.0).unwrap();
        assert_eq!(apply_channel(&h, &x, &mut r).unwrap(), x);

        let d = ChannelMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]], 0.0).unwrap();
        let ones = vec![vec![Complex64::new(1.0, 0.0); 3]; 2];
        let y = apply_channel(&d, &ones, &mut r).unwrap();
        assert!(y[0].iter().all(|z| *z == Complex64::new(2.0, 0.0)));
        assert!(y[1].iter().all(|z| *z == Complex64::new(4.0, 0.0)));
        assert!(matches!(
            apply_channel(&d, &ones[..1], &mut r),
            Err(ChannelError::TxCount { .. })
        ));
    }

    #[test]
    fn linear_at_zero_noise() {
        let mut r = rng::stream(2, &[]);
        let h = ChannelMatrix::from_rows(&[vec![0.7, 0.2], vec![0.1, 1.3]], 0.0).unwrap();
        let x1 = vec![ramp(5, 1.0), ramp(5, 2.0)];
        let x2 = vec![ramp(5, -3.0), ramp(5, 0.5)];
        let (a, b) = (1.5, -0.25);
        let mix: Vec<Vec<Complex64>> = x1
            .iter()
            .zip(&x2)
            .map(|(u, v)| u.iter().zip(v).map(|(p, q)| p * a + q * b).collect())
            .collect();
        let y = apply_channel(&h, &mix, &mut r).unwrap();
        let y1 = apply_channel(&h, &x1, &mut r).unwrap();
        let y2 = apply_channel(&h, &x2, &mut r).unwrap();
        for n in 0..2 {
            for k in 0..5 {
                assert!((y[n][k] - (y1[n][k] * a + y2[n][k] * b)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_statistics() {
        let mut r = rng::stream(3, &[]);
        let n = 1_000_000;
        let h = ChannelMatrix::identity(1, 0.1).unwrap();
        let x = vec![vec![Complex64::new(0.0, 0.0); n]];
        let y = apply_channel(&h, &x, &mut r).unwrap();
        let var: f64 = y[0].iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        let var_re: f64 = y[0].iter().map(|z| z.re * z.re).sum::<f64>() / n as f64;
        let var_im: f64 = y[0].iter().map(|z| z.im * z.im).sum::<f64>() / n as f64;
        assert!((var / 0.1 - 1.0).abs() < 0.01, "{var}");
        assert!((var_re / 0.05 - 1.0).abs() < 0.01 && (var_im / 0.05 - 1.0).abs() < 0.01);
    }

    #[test]
    fn snr_summary_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        // rho = P_t / (N_t sigma^2) = 10
        let s = snr_per_stream(&id, 2.0, 2, 0.1);
        assert!((s.rho - 10.0).abs() < 1e-12);
        assert!(s.eigen_snrs.iter().all(|&v| (v - 10.0).abs() < 1e-9));
        assert!((s.frobenius_snr - 20.0).abs() < 1e-12);

        let ones = DMatrix::from_element(2, 2, 1.0);
        let s = snr_per_stream(&ones, 2.0, 2, 0.1);
        assert!((s.eigen_snrs[0] - 40.0).abs() < 1e-9);
        assert!(s.eigen_snrs[1].abs() < 1e-9);
    }

    #[test]
    fn eigen_trace_identity_random() {
        let mut r = rng::stream(4, &[]);
        for _ in 0..500 {
            let (nr, nt) = (r.random_range(1..5), r.random_range(1..5));
            let h = DMatrix::from_fn(nr, nt, |_, _| r.random_range(0.0..2.0));
            let s = snr_per_stream(&h, nt as f64, nt, 1.0);
            let sum: f64 = s.eigen_snrs.iter().sum();
            assert!((sum - h.norm_squared()).abs() < 1e-9);
            assert_eq!(s.eigen_snrs.len(), nr.min(nt));
        }
    }
}
