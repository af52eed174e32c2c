//! Closed-form M-QAM performance prediction and the discrete adaptive mode
//! controller.
//!
//! A mode is a MIMO scheme (spatial multiplexing or spatial diversity) and
//! a square QAM order. Given a channel estimate the selector computes the
//! post-detection SNR of each scheme, keeps the modes whose predicted BER
//! meets the target and returns the one with the highest spectral
//! efficiency. Per-transmitter power is fixed at `P_t / N_t`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::channel_estimation::ChannelEstimate;
use crate::constellation::QamOrder;
use crate::mimo_detection::{diversity_snr, zf_beamformer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptationError {
    #[error("mode code {0:#04x} does not fit in three bits")]
    BadCode(u8),
    #[error("feedback byte {0:#04x} sets reserved bits")]
    ReservedBits(u8),
    #[error("unknown mode name {0:?}")]
    UnknownMode(String),
    #[error("BER target {0} must lie in (0, 0.5)")]
    BadTarget(f64),
    #[error("policy has no modes")]
    EmptyModeSet,
    #[error("transmit power {0} must be positive")]
    BadPower(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "SM")]
    SpatialMultiplexing,
    #[serde(rename = "SD")]
    SpatialDiversity,
}

impl Scheme {
    pub fn short(self) -> &'static str {
        match self {
            Scheme::SpatialMultiplexing => "SM",
            Scheme::SpatialDiversity => "SD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModeCode {
    pub scheme: Scheme,
    pub order: QamOrder,
}

impl ModeCode {
    pub const fn new(scheme: Scheme, order: QamOrder) -> Self {
        Self { scheme, order }
    }

    pub fn sm(order: QamOrder) -> Self {
        Self::new(Scheme::SpatialMultiplexing, order)
    }

    pub fn sd(order: QamOrder) -> Self {
        Self::new(Scheme::SpatialDiversity, order)
    }

    pub fn all() -> Vec<ModeCode> {
        (0..8).map(|c| decode_mode(c).expect("three-bit code")).collect()
    }

    /// `N_t log2 M` for SM, `log2 M` for SD.
    pub fn spectral_efficiency(self, num_tx: usize) -> f64 {
        let bits = self.order.bits_per_symbol() as f64;
        match self.scheme {
            Scheme::SpatialMultiplexing => num_tx as f64 * bits,
            Scheme::SpatialDiversity => bits,
        }
    }

    /// Symbol streams carrying distinct data.
    pub fn data_streams(self, num_tx: usize) -> usize {
        match self.scheme {
            Scheme::SpatialMultiplexing => num_tx,
            Scheme::SpatialDiversity => 1,
        }
    }
}

impl fmt::Display for ModeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.scheme.short(), self.order)
    }
}

impl FromStr for ModeCode {
    type Err = AdaptationError;

    /// Accepts `sm64`, `SM-64`, `sd4` and similar.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase().replace('-', "");
        let unknown = || AdaptationError::UnknownMode(s.to_string());
        let (scheme, rest) = if let Some(r) = lower.strip_prefix("sm") {
            (Scheme::SpatialMultiplexing, r)
        } else if let Some(r) = lower.strip_prefix("sd") {
            (Scheme::SpatialDiversity, r)
        } else {
            return Err(unknown());
        };
        let m: u32 = rest.parse().map_err(|_| unknown())?;
        let order = QamOrder::try_from(m).map_err(|_| unknown())?;
        Ok(Self::new(scheme, order))
    }
}

impl TryFrom<String> for ModeCode {
    type Error = AdaptationError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModeCode> for String {
    fn from(m: ModeCode) -> String {
        m.to_string()
    }
}

/// bit 2: scheme (0 SM, 1 SD); bits 1..0: index of M in {4, 16, 64, 256}.
pub fn encode_mode(m: ModeCode) -> u8 {
    let scheme = match m.scheme {
        Scheme::SpatialMultiplexing => 0,
        Scheme::SpatialDiversity => 1,
    };
    (scheme << 2) | m.order.index()
}

pub fn decode_mode(code: u8) -> Result<ModeCode, AdaptationError> {
    if code > 0b111 {
        return Err(AdaptationError::BadCode(code));
    }
    let scheme = if code & 0b100 == 0 {
        Scheme::SpatialMultiplexing
    } else {
        Scheme::SpatialDiversity
    };
    let order = QamOrder::from_index(code & 0b11).expect("two-bit index");
    Ok(ModeCode::new(scheme, order))
}

/// What the controller tells the transmitter to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Decision {
    Mode(ModeCode),
    Outage,
}

impl Decision {
    pub fn mode(self) -> Option<ModeCode> {
        match self {
            Decision::Mode(m) => Some(m),
            Decision::Outage => None,
        }
    }

    pub fn spectral_efficiency(self, num_tx: usize) -> f64 {
        self.mode().map_or(0.0, |m| m.spectral_efficiency(num_tx))
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Mode(m) => m.fmt(f),
            Decision::Outage => f.write_str("outage"),
        }
    }
}

impl FromStr for Decision {
    type Err = AdaptationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("outage") {
            Ok(Decision::Outage)
        } else {
            s.parse().map(Decision::Mode)
        }
    }
}

impl TryFrom<String> for Decision {
    type Error = AdaptationError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Decision> for String {
    fn from(d: Decision) -> String {
        d.to_string()
    }
}

pub const FEEDBACK_OUTAGE: u8 = 0x80;

/// Low three bits carry the mode code, bit 7 flags outage.
pub fn encode_feedback(d: Decision) -> u8 {
    match d {
        Decision::Mode(m) => encode_mode(m),
        Decision::Outage => FEEDBACK_OUTAGE,
    }
}

pub fn decode_feedback(byte: u8) -> Result<Decision, AdaptationError> {
    if byte & 0x78 != 0 {
        return Err(AdaptationError::ReservedBits(byte));
    }
    if byte & FEEDBACK_OUTAGE != 0 {
        Ok(Decision::Outage)
    } else {
        decode_mode(byte & 0b111).map(Decision::Mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptPolicy {
    pub ber_target: f64,
    /// Total transmit power `P_t`, split equally over the transmitters.
    pub tx_power: f64,
    pub num_tx: usize,
    pub modes: Vec<ModeCode>,
    /// Noise variance used for selection; `None` uses the estimate from
    /// the training residual.
    pub noise_variance: Option<f64>,
    /// Consecutive frames a new mode must stay optimal before switching.
    pub hysteresis: usize,
}

impl Default for AdaptPolicy {
    fn default() -> Self {
        Self {
            ber_target: 1e-3,
            tx_power: 2.0,
            num_tx: 2,
            modes: ModeCode::all(),
            noise_variance: None,
            hysteresis: 2,
        }
    }
}

impl AdaptPolicy {
    pub fn validate(&self) -> Result<(), AdaptationError> {
        if !(self.ber_target > 0.0 && self.ber_target < 0.5) {
            return Err(AdaptationError::BadTarget(self.ber_target));
        }
        if self.modes.is_empty() {
            return Err(AdaptationError::EmptyModeSet);
        }
        if !(self.tx_power.is_finite() && self.tx_power > 0.0) {
            return Err(AdaptationError::BadPower(self.tx_power));
        }
        Ok(())
    }
}

fn prefactor(order: QamOrder) -> f64 {
    let m = order.size() as f64;
    let k = m.sqrt();
    2.0 * (k - 1.0) / (k * m.log2())
}

/// Gray-coded square M-QAM bit error probability at symbol SNR `gamma`:
/// `2 (sqrt M - 1) / (sqrt M log2 M) * erfc(sqrt(3 gamma / (2 (M - 1))))`.
pub fn predict_ber(order: QamOrder, gamma: f64) -> f64 {
    let m = order.size() as f64;
    prefactor(order) * erfc((3.0 * gamma.max(0.0) / (2.0 * (m - 1.0))).sqrt())
}

/// `0.2 exp(-1.5 gamma / (M - 1))`. It upper-bounds [`predict_ber`] once the
/// BER is below a few percent, not at very low SNR.
pub fn ber_bound(order: QamOrder, gamma: f64) -> f64 {
    0.2 * (-1.5 * gamma / (order.size() as f64 - 1.0)).exp()
}

/// `K = -3 / (2 ln(5 BER_tgt))`.
pub fn k_factor(ber_target: f64) -> f64 {
    -1.5 / (5.0 * ber_target).ln()
}

/// `log2(1 + K gamma)`.
pub fn max_spectral_efficiency(gamma: f64, ber_target: f64) -> f64 {
    (1.0 + k_factor(ber_target) * gamma).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MimoCapacity {
    /// `sum_i log2(1 + rho lambda_i)`.
    pub eigen: f64,
    /// `log2 det(I + rho H H^T)`.
    pub determinant: f64,
    /// `log2(1 + rho ||H||_F^2)`. Equal to the sum at rank one, below it
    /// whenever two or more eigenvalues are nonzero.
    pub frobenius: f64,
    /// `N_m log2(1 + rho ||H||_F^2 / N_m)`, the concavity bound.
    pub upper_bound: f64,
}

pub fn mimo_capacity(h: &DMatrix<f64>, tx_power: f64, num_tx: usize, noise_variance: f64) -> MimoCapacity {
    let rho = tx_power / (num_tx as f64 * noise_variance);
    let eigen = crate::linalg::gram_eigenvalues(h)
        .iter()
        .map(|l| (rho * l).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2;
    let gram = if h.nrows() <= h.ncols() {
        h * h.transpose()
    } else {
        h.transpose() * h
    };
    let n = gram.nrows();
    let det = (DMatrix::identity(n, n) + gram * rho).determinant();
    let total = rho * h.norm_squared();
    MimoCapacity {
        eigen,
        determinant: det.log2(),
        frobenius: total.ln_1p() / std::f64::consts::LN_2,
        upper_bound: n as f64 * (total / n as f64).ln_1p() / std::f64::consts::LN_2,
    }
}

/// Eigenvalue form of the MIMO spectral efficiency.
pub fn spectral_efficiency_mimo(h: &DMatrix<f64>, tx_power: f64, num_tx: usize, noise_variance: f64) -> f64 {
    let c = mimo_capacity(h, tx_power, num_tx, noise_variance);
    debug_assert!(
        (c.eigen - c.determinant).abs() <= 1e-9 * c.eigen.abs().max(1.0),
        "{c:?}"
    );
    debug_assert!(c.eigen <= c.upper_bound + 1e-9 && c.eigen >= c.frobenius - 1e-9);
    c.eigen
}

/// Smallest SNR at which each QAM order meets the BER target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub ber_target: f64,
    /// Indexed by `QamOrder::index()`.
    pub gamma_min: [f64; 4],
}

impl ThresholdTable {
    pub fn new(ber_target: f64) -> Self {
        let mut gamma_min = [0.0; 4];
        for order in QamOrder::ALL {
            gamma_min[order.index() as usize] = solve_threshold(order, ber_target);
        }
        Self { ber_target, gamma_min }
    }

    pub fn get(&self, order: QamOrder) -> f64 {
        self.gamma_min[order.index() as usize]
    }

    pub fn get_db(&self, order: QamOrder) -> f64 {
        10.0 * self.get(order).log10()
    }
}

fn solve_threshold(order: QamOrder, target: f64) -> f64 {
    if predict_ber(order, 0.0) <= target {
        return 0.0;
    }
    let mut hi = 1.0;
    while predict_ber(order, hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if predict_ber(order, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

pub fn mode_threshold_table(policy: &AdaptPolicy) -> ThresholdTable {
    ThresholdTable::new(policy.ber_target)
}

/// Post-detection SNRs the selector compares against the thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSnrs {
    /// Per-stream post-ZF SNR, `rho / diag(W W^T)`; empty when the estimate
    /// is rank deficient.
    pub sm: Vec<f64>,
    /// Combined SNR after MRC.
    pub sd: f64,
}

impl ModeSnrs {
    pub fn governing(&self, scheme: Scheme) -> f64 {
        match scheme {
            Scheme::SpatialMultiplexing if self.sm.is_empty() => 0.0,
            Scheme::SpatialMultiplexing => self.sm.iter().copied().fold(f64::INFINITY, f64::min),
            Scheme::SpatialDiversity => self.sd,
        }
    }
}

pub fn mode_snrs(h: &DMatrix<f64>, rho: f64) -> ModeSnrs {
    let bf = zf_beamformer(h);
    let sm = if bf.rank_deficient {
        Vec::new()
    } else {
        bf.enhancement().into_iter().map(|e| rho / e).collect()
    };
    ModeSnrs {
        sm,
        sd: diversity_snr(h, rho),
    }
}

fn selection_rho(est: &ChannelEstimate, policy: &AdaptPolicy) -> f64 {
    let sigma2 = policy.noise_variance.unwrap_or(est.noise_variance);
    policy.tx_power / (policy.num_tx as f64 * sigma2)
}

/// Best feasible mode from precomputed SNRs.
pub fn select_from_snrs(snrs: &ModeSnrs, policy: &AdaptPolicy, table: &ThresholdTable) -> Decision {
    let mut best: Option<ModeCode> = None;
    for &mode in &policy.modes {
        if snrs.governing(mode.scheme) < table.get(mode.order) {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let (se, se_b) = (
                    mode.spectral_efficiency(policy.num_tx),
                    b.spectral_efficiency(policy.num_tx),
                );
                se > se_b || (se == se_b && mode.scheme == Scheme::SpatialDiversity && b.scheme != mode.scheme)
            }
        };
        if better {
            best = Some(mode);
        }
    }
    best.map_or(Decision::Outage, Decision::Mode)
}

pub fn select_mode(est: &ChannelEstimate, policy: &AdaptPolicy) -> Decision {
    let snrs = mode_snrs(&est.h_hat, selection_rho(est, policy));
    select_from_snrs(&snrs, policy, &mode_threshold_table(policy))
}

/// Holds the active decision and applies the hysteresis rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveController {
    current: Decision,
    pending: Option<(Decision, usize)>,
    hysteresis: usize,
}

pub const INITIAL_MODE: ModeCode = ModeCode::new(Scheme::SpatialMultiplexing, QamOrder::Qam64);

impl AdaptiveController {
    pub fn new(initial: Decision, hysteresis: usize) -> Self {
        Self {
            current: initial,
            pending: None,
            hysteresis: hysteresis.max(1),
        }
    }

    pub fn current(&self) -> Decision {
        self.current
    }

    /// Feeds the selector's proposal for the latest frame; returns the
    /// decision to feed back.
    pub fn update(&mut self, proposal: Decision) -> Decision {
        if proposal == self.current {
            self.pending = None;
            return self.current;
        }
        let count = match self.pending {
            Some((p, n)) if p == proposal => n + 1,
            _ => 1,
        };
        if count >= self.hysteresis {
            self.current = proposal;
            self.pending = None;
        } else {
            self.pending = Some((proposal, count));
        }
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn mode_codes() {
        assert_eq!(encode_mode(ModeCode::sm(QamOrder::Qam4)), 0b000);
        assert_eq!(encode_mode(ModeCode::sd(QamOrder::Qam256)), 0b111);
        assert_eq!(encode_mode(ModeCode::sm(QamOrder::Qam64)), 0b010);
        for code in 0..8u8 {
            assert_eq!(encode_mode(decode_mode(code).unwrap()), code);
        }
        let all = ModeCode::all();
        assert_eq!(all.len(), 8);
        for m in &all {
            assert_eq!(decode_mode(encode_mode(*m)).unwrap(), *m);
        }
        assert_eq!(decode_mode(8), Err(AdaptationError::BadCode(8)));
    }

    #[test]
    fn mode_names() {
        assert_eq!("sm64".parse::<ModeCode>().unwrap(), ModeCode::sm(QamOrder::Qam64));
        assert_eq!("SD-4".parse::<ModeCode>().unwrap(), ModeCode::sd(QamOrder::Qam4));
        assert!("sm32".parse::<ModeCode>().is_err());
        assert!("xx4".parse::<ModeCode>().is_err());
        for m in ModeCode::all() {
            assert_eq!(m.to_string().parse::<ModeCode>().unwrap(), m);
        }
        assert_eq!(serde_json::to_string(&Decision::Outage).unwrap(), "\"outage\"");
        assert_eq!(
            serde_json::from_str::<Decision>("\"SM-256\"").unwrap(),
            Decision::Mode(ModeCode::sm(QamOrder::Qam256))
        );
    }

    #[test]
    fn feedback_bytes() {
        for d in ModeCode::all()
            .into_iter()
            .map(Decision::Mode)
            .chain([Decision::Outage])
        {
            assert_eq!(decode_feedback(encode_feedback(d)).unwrap(), d);
        }
        assert_eq!(encode_feedback(Decision::Outage), 0x80);
        assert_eq!(decode_feedback(0x85).unwrap(), Decision::Outage);
        assert!(decode_feedback(0x08).is_err());
    }

    #[test]
    fn spectral_efficiencies() {
        let se: Vec<f64> = ModeCode::all().iter().map(|m| m.spectral_efficiency(2)).collect();
        assert_eq!(se, vec![4.0, 8.0, 12.0, 16.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn predict_ber_oracle_values() {
        // reference values from a 40-digit erfc
        assert!(rel(predict_ber(QamOrder::Qam4, 10.0), 7.827011290012748e-4) < 1e-10);
        assert!(rel(predict_ber(QamOrder::Qam16, 100.0), 2.904081161641531e-6) < 1e-10);
        let pre = [0.5, 0.375, 0.2916666666666667, 0.234375];
        for (o, p) in QamOrder::ALL.iter().zip(pre) {
            assert!(rel(predict_ber(*o, 0.0), p) < 1e-15);
        }
    }

    #[test]
    fn bound_and_k() {
        assert_eq!(ber_bound(QamOrder::Qam64, 0.0), 0.2);
        assert!(rel(ber_bound(QamOrder::Qam4, 10.0), 1.3475893998170934e-3) < 1e-12);
        assert!(rel(k_factor(1e-3), 0.2831087487266322) < 1e-12);
        assert_eq!(max_spectral_efficiency(0.0, 1e-3), 0.0);
        assert!(rel(max_spectral_efficiency(100.0, 1e-3), 4.873364125201263) < 1e-12);
    }

    #[test]
    fn bound_dominates_where_ber_is_small() {
        for o in QamOrder::ALL {
            let mut g = 0.0;
            while g < 1e4 {
                if predict_ber(o, g) <= 5e-2 {
                    assert!(ber_bound(o, g) >= predict_ber(o, g), "M={o} gamma={g}");
                }
                g += 0.05 * (o.size() as f64 - 1.0) / 3.0;
            }
            // below the crossover the bound is looser than the estimate itself
            assert!(ber_bound(o, 0.0) < predict_ber(o, 0.0));
        }
    }

    #[test]
    fn capacity_examples() {
        let id = DMatrix::identity(2, 2);
        // rho = 15 with P_t = 2, N_t = 2, sigma^2 = 1/15
        assert!((spectral_efficiency_mimo(&id, 2.0, 2, 1.0 / 15.0) - 8.0).abs() < 1e-9);
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert!(rel(spectral_efficiency_mimo(&ones, 2.0, 2, 0.1), 5.357552004618084) < 1e-12);
    }

    #[test]
    fn capacity_identity_and_bound_random() {
        let mut r = rng::stream(31, &[]);
        for _ in 0..1000 {
            let (nr, nt) = (r.random_range(1..5), r.random_range(1..5));
            let h = DMatrix::from_fn(nr, nt, |_, _| r.random_range(0.0..2.0));
            let sigma2 = 10f64.powf(r.random_range(-3.0..1.0));
            let c = mimo_capacity(&h, nt as f64, nt, sigma2);
            assert!((c.eigen - c.determinant).abs() <= 1e-9 * c.eigen.max(1.0), "{c:?}");
            assert!(c.eigen <= c.upper_bound + 1e-9 && c.determinant <= c.upper_bound + 1e-9);
            assert!(c.eigen >= c.frobenius - 1e-9);
        }
    }

    #[test]
    fn frobenius_form_is_exceeded_by_full_rank_channels() {
        let c = mimo_capacity(&DMatrix::identity(2, 2), 2.0, 2, 1.0 / 15.0);
        assert!((c.frobenius - 31f64.log2()).abs() < 1e-12);
        assert!(c.eigen > c.frobenius + 3.0);
        let ones = mimo_capacity(&DMatrix::from_element(2, 2, 1.0), 2.0, 2, 0.1);
        assert!((ones.eigen - ones.frobenius).abs() < 1e-9);
    }

    #[test]
    fn thresholds() {
        let t = ThresholdTable::new(1e-3);
        let want = [
            9.549535706083243,
            45.11283379912762,
            179.84601951054336,
            694.1687679967912,
        ];
        for (o, w) in QamOrder::ALL.iter().zip(want) {
            assert!(rel(t.get(*o), w) < 1e-9, "{o}");
            assert!((predict_ber(*o, t.get(*o)) - 1e-3).abs() < 1e-12);
        }
        assert!(t.gamma_min.windows(2).all(|w| w[0] < w[1]));
        let half = ThresholdTable::new(5e-4);
        let want = [
            10.82756617066273,
            51.479000185367205,
            206.4884895136913,
            801.6456584415013,
        ];
        for (o, w) in QamOrder::ALL.iter().zip(want) {
            assert!(rel(half.get(*o), w) < 1e-9);
            assert!(half.get(*o) > t.get(*o));
        }
    }

    fn est_for(h: DMatrix<f64>) -> ChannelEstimate {
        ChannelEstimate::from_matrix(h, 1.0)
    }

    fn policy_rho(rho: f64) -> AdaptPolicy {
        // P_t = 2, N_t = 2: rho = 1 / sigma^2
        AdaptPolicy {
            noise_variance: Some(1.0 / rho),
            ..AdaptPolicy::default()
        }
    }

    #[test]
    fn selection_examples() {
        let t = ThresholdTable::new(1e-3);
        let id = DMatrix::identity(2, 2);
        let high = policy_rho(t.get(QamOrder::Qam256) * 1.01);
        assert_eq!(
            select_mode(&est_for(id.clone()), &high),
            Decision::Mode(ModeCode::sm(QamOrder::Qam256))
        );

        // SM streams below gamma_min(4), SD at twice that above it
        let mid = policy_rho(t.get(QamOrder::Qam4) * 0.6);
        assert_eq!(
            select_mode(&est_for(id.clone()), &mid),
            Decision::Mode(ModeCode::sd(QamOrder::Qam4))
        );

        let low = policy_rho(t.get(QamOrder::Qam4) * 0.3);
        assert_eq!(select_mode(&est_for(id.clone()), &low), Decision::Outage);

        // rank-deficient: SM impossible, SD still usable
        let ones = DMatrix::from_element(2, 2, 1.0);
        let d = select_mode(&est_for(ones), &high);
        assert_eq!(d.mode().unwrap().scheme, Scheme::SpatialDiversity);
    }

    #[test]
    fn tie_prefers_diversity() {
        // SD-256 (8 b/s/Hz) and SM-16 (8 b/s/Hz) both feasible
        let snrs = ModeSnrs {
            sm: vec![60.0, 60.0],
            sd: 1000.0,
        };
        let d = select_from_snrs(&snrs, &AdaptPolicy::default(), &ThresholdTable::new(1e-3));
        assert_eq!(d, Decision::Mode(ModeCode::sd(QamOrder::Qam256)));
    }

    #[test]
    fn selection_properties_random() {
        let mut r = rng::stream(32, &[]);
        let policy = AdaptPolicy::default();
        let t = ThresholdTable::new(policy.ber_target);
        for _ in 0..2000 {
            let h = DMatrix::from_fn(2, 2, |_, _| r.random_range(0.0..1.0));
            let rho = 10f64.powf(r.random_range(0.0..3.5));
            let snrs = mode_snrs(&h, rho);
            let d = select_from_snrs(&snrs, &policy, &t);
            // safety
            if let Some(m) = d.mode() {
                assert!(snrs.governing(m.scheme) >= t.get(m.order));
            }
            // maximality
            let se = d.spectral_efficiency(2);
            for m in ModeCode::all() {
                if snrs.governing(m.scheme) >= t.get(m.order) {
                    assert!(m.spectral_efficiency(2) <= se);
                }
            }
            // monotonic in channel scale
            let c = r.random_range(1.0..3.0);
            let scaled = select_from_snrs(&mode_snrs(&(h.clone() * c), rho), &policy, &t);
            assert!(scaled.spectral_efficiency(2) >= se);
        }
    }

    #[test]
    fn hysteresis() {
        let a = Decision::Mode(INITIAL_MODE);
        let b = Decision::Mode(ModeCode::sm(QamOrder::Qam256));
        let mut c = AdaptiveController::new(a, 2);
        assert_eq!(c.update(b), a);
        assert_eq!(c.update(b), b);
        // a single dissenting frame does not switch back
        assert_eq!(c.update(a), b);
        assert_eq!(c.update(b), b);
        assert_eq!(c.update(a), b);
        assert_eq!(c.update(Decision::Outage), b);
        assert_eq!(c.update(Decision::Outage), Decision::Outage);
        let mut eager = AdaptiveController::new(a, 1);
        assert_eq!(eager.update(b), b);
    }
}
