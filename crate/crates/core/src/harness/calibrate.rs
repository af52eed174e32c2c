//! Calibration of the geometry gain `g0` so that a chosen fixed mode meets
//! the BER target exactly at a chosen distance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{run_link, ChannelSpec, ExperimentConfig, HarnessError, ModePolicy, Point, SweepAxis};
use crate::channel_model::{generate_channel, GeometryConfig};
use crate::constellation::QamOrder;
use crate::link_adaptation::{mode_snrs, predict_ber, ModeCode, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub mode: ModeCode,
    pub distance_m: f64,
    pub ber_target: f64,
    /// Search range for `g0`.
    pub gain_bracket: (f64, f64),
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        Self {
            mode: ModeCode::sm(QamOrder::Qam64),
            distance_m: 1.7,
            ber_target: 1e-3,
            gain_bracket: (1e-3, 1e3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub target: CalibrationTarget,
    pub gain: f64,
    pub noise_variance: f64,
    pub predicted_ber: f64,
    /// Distance at which the calibrated model crosses the target.
    pub crossing_distance_m: f64,
    /// Monte-Carlo BER at the anchor, when verified.
    pub measured_ber: Option<f64>,
}

/// Analytic BER of a mode on a known channel: the mean over streams for SM
/// (post-ZF SNR per stream), the combined SNR for SD.
pub fn predicted_ber(h: &DMatrix<f64>, rho: f64, mode: ModeCode) -> f64 {
    let snrs = mode_snrs(h, rho);
    match mode.scheme {
        Scheme::SpatialMultiplexing if snrs.sm.is_empty() => 0.5,
        Scheme::SpatialMultiplexing => {
            snrs.sm.iter().map(|&g| predict_ber(mode.order, g)).sum::<f64>() / snrs.sm.len() as f64
        }
        Scheme::SpatialDiversity => predict_ber(mode.order, snrs.sd),
    }
}

fn ber_at(geo: &GeometryConfig, tx_power: f64, mode: ModeCode) -> Result<f64, HarnessError> {
    let h = generate_channel(geo)?;
    let rho = tx_power / (geo.num_tx as f64 * geo.noise_variance);
    Ok(predicted_ber(h.gains(), rho, mode))
}

/// Distance at which `mode` crosses `ber_target`, searched over
/// `[lo, hi]` metres.
pub fn crossing_distance(
    geo: &GeometryConfig,
    tx_power: f64,
    mode: ModeCode,
    ber_target: f64,
    (mut lo, mut hi): (f64, f64),
) -> Result<f64, HarnessError> {
    let f = |d: f64| ber_at(&geo.at_distance(d), tx_power, mode).map(|b| b - ber_target);
    if f(lo)? > 0.0 || f(hi)? < 0.0 {
        return Err(HarnessError::Calibration(format!(
            "{mode} does not cross BER {ber_target:e} between {lo} m and {hi} m"
        )));
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisects `g0` (noise variance fixed) until `target.mode` meets the BER
/// target exactly at `target.distance_m`.
pub fn calibrate(
    geo: &GeometryConfig,
    tx_power: f64,
    target: &CalibrationTarget,
) -> Result<CalibrationRecord, HarnessError> {
    let at = geo.at_distance(target.distance_m);
    at.validate()?;
    let f = |g: f64| ber_at(&GeometryConfig { gain: g, ..at }, tx_power, target.mode).map(|b| b - target.ber_target);
    let (lo, hi) = target.gain_bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(HarnessError::Calibration(format!("bad gain bracket ({lo}, {hi})")));
    }
    let (f_lo, f_hi) = (f(lo)?, f(hi)?);
    if f_lo < 0.0 || f_hi > 0.0 {
        return Err(HarnessError::Calibration(format!(
            "gain bracket ({lo}, {hi}) does not bracket BER {:e} for {} at {} m (BER {:.3e} .. {:.3e})",
            target.ber_target,
            target.mode,
            target.distance_m,
            f_lo + target.ber_target,
            f_hi + target.ber_target
        )));
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    while b - a > 1e-13 {
        let mid = 0.5 * (a + b);
        if f(mid.exp())? > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let gain = (0.5 * (a + b)).exp();
    let calibrated = GeometryConfig { gain, ..*geo };
    let crossing = crossing_distance(
        &calibrated,
        tx_power,
        target.mode,
        target.ber_target,
        (target.distance_m * 0.5, target.distance_m * 2.0),
    )?;
    Ok(CalibrationRecord {
        target: *target,
        gain,
        noise_variance: geo.noise_variance,
        predicted_ber: f(gain)? + target.ber_target,
        crossing_distance_m: crossing,
        measured_ber: None,
    })
}

/// Monte-Carlo BER of the calibrated mode at the anchor distance.
pub fn verify_calibration(
    base: &ExperimentConfig,
    record: &CalibrationRecord,
    frames: usize,
    seed: u64,
) -> Result<f64, HarnessError> {
    let ChannelSpec::Geometry(geo) = &base.channel else {
        return Err(HarnessError::Config("calibration needs a geometry channel".into()));
    };
    let cfg = ExperimentConfig {
        mode: ModePolicy::Fixed(record.target.mode),
        channel: ChannelSpec::Geometry(GeometryConfig {
            gain: record.gain,
            noise_variance: record.noise_variance,
            ..*geo
        }),
        sweep: SweepAxis::DistanceM(vec![record.target.distance_m]),
        frames,
        ..base.clone()
    };
    Ok(run_link(&cfg, Point::DistanceM(record.target.distance_m), seed)?.ber)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_is_hit_and_scaling_law_holds() {
        let geo = GeometryConfig::default();
        let rec = calibrate(&geo, 2.0, &CalibrationTarget::default()).unwrap();
        assert!((rec.predicted_ber / 1e-3 - 1.0).abs() < 1e-6);
        assert!((rec.crossing_distance_m / 1.7 - 1.0).abs() < 0.02);
        let doubled = GeometryConfig {
            gain: 2.0 * rec.gain,
            ..geo
        };
        let d2 = crossing_distance(&doubled, 2.0, rec.target.mode, 1e-3, (0.5, 10.0)).unwrap();
        assert!((d2 / rec.crossing_distance_m / 2f64.sqrt() - 1.0).abs() < 0.01, "{d2}");
    }

    #[test]
    fn default_gain_is_the_calibrated_value() {
        let geo = GeometryConfig::default();
        let rec = calibrate(&geo, 2.0, &CalibrationTarget::default()).unwrap();
        assert!((rec.gain / geo.gain - 1.0).abs() < 1e-6, "calibrated {}", rec.gain);
    }

    #[test]
    fn infeasible_anchor() {
        let far = CalibrationTarget {
            distance_m: 1000.0,
            ..CalibrationTarget::default()
        };
        assert!(matches!(
            calibrate(&GeometryConfig::default(), 2.0, &far),
            Err(HarnessError::Calibration(_))
        ));
    }
}
