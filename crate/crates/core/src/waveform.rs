//! Sample-level transmit and receive processing.
//!
//! Symbols are up-sampled by `sps` and shaped with a unit-energy
//! root-raised-cosine filter; the receiver applies the same filter (matched)
//! so the cascade is a raised cosine and is free of inter-symbol interference
//! at the symbol instants. An optional digital IF stage moves the complex
//! baseband onto a real carrier, `x = I cos(2 pi fc t) - Q sin(2 pi fc t)`,
//! and back.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod iqfile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveformError {
    #[error("invalid shaping config: {0}")]
    InvalidConfig(String),
    #[error("carrier {carrier_hz} Hz with occupied half-bandwidth {half_band_hz} Hz aliases at sample rate {sample_rate_hz} Hz")]
    Aliasing {
        carrier_hz: f64,
        half_band_hz: f64,
        sample_rate_hz: f64,
    },
    #[error("empty symbol sequence")]
    Empty,
    #[error("expected a {expected:?} buffer")]
    WrongDomain { expected: Domain },
    #[error("timing offset {offset} leaves no room for {symbols} symbols in {len} samples")]
    OffsetOutOfRange { offset: usize, symbols: usize, len: usize },
    #[error("buffer of {len} samples is shorter than the {reference}-sample reference")]
    TooShort { len: usize, reference: usize },
    #[error("synchronization failed: peak metric {metric:.3} below threshold {threshold:.3}")]
    SyncFailure { metric: f64, threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Baseband,
    Passband,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub domain: Domain,
}

impl IqBuffer {
    pub fn baseband(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
            domain: Domain::Baseband,
        }
    }

    /// Real passband samples; imaginary parts are stored as zero.
    pub fn passband(samples: Vec<f64>, sample_rate: f64) -> Self {
        Self {
            samples: samples.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
            sample_rate,
            domain: Domain::Passband,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapingConfig {
    pub sps: usize,
    pub rolloff: f64,
    /// Filter length in symbols; the filter has `span * sps + 1` taps.
    pub span: usize,
    pub carrier_hz: f64,
    pub symbol_rate_hz: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            sps: 8,
            rolloff: 0.35,
            span: 16,
            carrier_hz: 2.5e6,
            symbol_rate_hz: 2.5e6,
        }
    }
}

impl ShapingConfig {
    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate_hz * self.sps as f64
    }

    pub fn half_bandwidth(&self) -> f64 {
        (1.0 + self.rolloff) * self.symbol_rate_hz / 2.0
    }

    pub fn num_taps(&self) -> usize {
        self.span * self.sps + 1
    }

    /// Delay of one RRC filter in samples.
    pub fn filter_delay(&self) -> usize {
        self.span * self.sps / 2
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        if self.sps < 2 {
            return Err(WaveformError::InvalidConfig(format!("sps {} < 2", self.sps)));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(WaveformError::InvalidConfig(format!(
                "roll-off {} outside (0, 1]",
                self.rolloff
            )));
        }
        if self.span == 0 || !self.span.is_multiple_of(2) {
            return Err(WaveformError::InvalidConfig(format!(
                "span {} must be even and non-zero",
                self.span
            )));
        }
        if !(self.symbol_rate_hz > 0.0 && self.symbol_rate_hz.is_finite()) {
            return Err(WaveformError::InvalidConfig("symbol rate must be positive".into()));
        }
        if !(self.carrier_hz >= 0.0 && self.carrier_hz.is_finite()) {
            return Err(WaveformError::InvalidConfig("carrier must be non-negative".into()));
        }
        Ok(())
    }

    /// No-aliasing condition for the IF stage: `fc + (1 + beta) R / 2 <= fs / 2`,
    /// and the carrier must clear the occupied band so the mixer images can be
    /// filtered off.
    pub fn check_if_stage(&self) -> Result<(), WaveformError> {
        self.validate()?;
        let hb = self.half_bandwidth();
        if self.carrier_hz + hb > self.sample_rate() / 2.0 || self.carrier_hz <= hb {
            return Err(WaveformError::Aliasing {
                carrier_hz: self.carrier_hz,
                half_band_hz: hb,
                sample_rate_hz: self.sample_rate(),
            });
        }
        Ok(())
    }
}

/// Unit-energy root-raised-cosine taps.
pub fn rrc_taps(cfg: &ShapingConfig) -> Vec<f64> {
    let beta = cfg.rolloff;
    let sps = cfg.sps as f64;
    let mid = cfg.filter_delay() as f64;
    let mut taps: Vec<f64> = (0..cfg.num_taps())
        .map(|i| {
            let t = (i as f64 - mid) / sps;
            if t == 0.0 {
                1.0 - beta + 4.0 * beta / PI
            } else if (4.0 * beta * t).abs() == 1.0 || ((4.0 * beta * t).abs() - 1.0).abs() < 1e-12 {
                beta / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    taps
}

fn convolve_real(input: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    if input.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); input.len() + taps.len() - 1];
    for (i, &x) in input.iter().enumerate() {
        if x.re == 0.0 && x.im == 0.0 {
            continue;
        }
        for (j, &h) in taps.iter().enumerate() {
            out[i + j] += x * h;
        }
    }
    out
}

/// Up-samples by `sps` and filters with the RRC. The output is the full
/// convolution: `len * sps + span * sps` samples, symbol `k` centred at
/// sample `k * sps + filter_delay`.
pub fn pulse_shape(symbols: &[Complex64], cfg: &ShapingConfig) -> Result<IqBuffer, WaveformError> {
    cfg.validate()?;
    if symbols.is_empty() {
        return Err(WaveformError::Empty);
    }
    let taps = rrc_taps(cfg);
    let mut out = vec![Complex64::new(0.0, 0.0); (symbols.len() - 1) * cfg.sps + taps.len()];
    for (k, &s) in symbols.iter().enumerate() {
        if s.re == 0.0 && s.im == 0.0 {
            continue;
        }
        let base = k * cfg.sps;
        for (j, &h) in taps.iter().enumerate() {
            out[base + j] += s * h;
        }
    }
    out.resize(symbols.len() * cfg.sps + cfg.span * cfg.sps, Complex64::new(0.0, 0.0));
    Ok(IqBuffer::baseband(out, cfg.sample_rate()))
}

/// Matched-filters and samples `num_symbols` symbols. Symbol `k` is read at
/// `timing_offset + 2 * filter_delay + k * sps` of the filter output, which
/// is where a symbol sent `timing_offset` samples late lands after TX and RX
/// filtering.
pub fn matched_filter_decimate(
    bb: &IqBuffer,
    cfg: &ShapingConfig,
    timing_offset: usize,
    num_symbols: usize,
) -> Result<Vec<Complex64>, WaveformError> {
    cfg.validate()?;
    if bb.domain != Domain::Baseband {
        return Err(WaveformError::WrongDomain {
            expected: Domain::Baseband,
        });
    }
    let taps = rrc_taps(cfg);
    let delay = 2 * cfg.filter_delay();
    let last_needed = timing_offset + delay + num_symbols.saturating_sub(1) * cfg.sps;
    if num_symbols > 0 && last_needed >= bb.len() + taps.len() - 1 {
        return Err(WaveformError::OffsetOutOfRange {
            offset: timing_offset,
            symbols: num_symbols,
            len: bb.len(),
        });
    }
    let x = &bb.samples;
    Ok((0..num_symbols)
        .map(|k| {
            let n = timing_offset + delay + k * cfg.sps;
            // y[n] = sum_j h[j] x[n - j]
            let j_lo = n.saturating_sub(x.len() - 1);
            let j_hi = n.min(taps.len() - 1);
            (j_lo..=j_hi).map(|j| x[n - j] * taps[j]).sum()
        })
        .collect())
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass. `cutoff` and `transition` are fractions of
/// the sample rate; `atten_db` is the stop-band attenuation.
pub fn kaiser_lowpass(cutoff: f64, transition: f64, atten_db: f64) -> Vec<f64> {
    let beta = if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    };
    let mut n = ((atten_db - 7.95) / (2.285 * 2.0 * PI * transition)).ceil() as usize + 1;
    if n.is_multiple_of(2) {
        n += 1;
    }
    let mid = (n - 1) as f64 / 2.0;
    let i0b = bessel_i0(beta);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as f64 - mid;
            let sinc = if m == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * m).sin() / (PI * m)
            };
            let r = m / mid;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= dc);
    taps
}

const IF_STOPBAND_DB: f64 = 140.0;

fn if_lowpass(cfg: &ShapingConfig) -> Vec<f64> {
    let fs = cfg.sample_rate();
    let hb = cfg.half_bandwidth();
    // pass up to hb, images start at 2 fc - hb
    kaiser_lowpass(cfg.carrier_hz / fs, 2.0 * (cfg.carrier_hz - hb) / fs, IF_STOPBAND_DB)
}

fn carrier(n: usize, cfg: &ShapingConfig) -> (f64, f64) {
    let phase = 2.0 * PI * cfg.carrier_hz / cfg.sample_rate() * n as f64;
    (phase.cos(), phase.sin())
}

/// Real IF signal `I cos(wn) - Q sin(wn)`.
pub fn upconvert(bb: &IqBuffer, cfg: &ShapingConfig) -> Result<IqBuffer, WaveformError> {
    cfg.check_if_stage()?;
    if bb.domain != Domain::Baseband {
        return Err(WaveformError::WrongDomain {
            expected: Domain::Baseband,
        });
    }
    let samples = bb
        .samples
        .iter()
        .enumerate()
        .map(|(n, z)| {
            let (c, s) = carrier(n, cfg);
            z.re * c - z.im * s
        })
        .collect();
    Ok(IqBuffer::passband(samples, bb.sample_rate))
}

/// Mixes with `2 cos` and `-2 sin`, then low-passes. The output is aligned
/// with the input (filter delay removed) and has the same length; the first
/// and last `downconvert_transient` samples carry filter edge effects.
pub fn downconvert(pb: &IqBuffer, cfg: &ShapingConfig) -> Result<IqBuffer, WaveformError> {
    cfg.check_if_stage()?;
    if pb.domain != Domain::Passband {
        return Err(WaveformError::WrongDomain {
            expected: Domain::Passband,
        });
    }
    let mixed: Vec<Complex64> = pb
        .samples
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let (c, s) = carrier(n, cfg);
            Complex64::new(2.0 * x.re * c, -2.0 * x.re * s)
        })
        .collect();
    let taps = if_lowpass(cfg);
    let delay = (taps.len() - 1) / 2;
    let full = convolve_real(&mixed, &taps);
    let samples = if full.is_empty() {
        Vec::new()
    } else {
        full[delay..delay + mixed.len()].to_vec()
    };
    Ok(IqBuffer::baseband(samples, pb.sample_rate))
}

/// Samples at each edge of a [`downconvert`] output affected by the filter.
pub fn downconvert_transient(cfg: &ShapingConfig) -> usize {
    if_lowpass(cfg).len()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncEstimate {
    /// Sample index at which the reference starts.
    pub offset: usize,
    /// Normalized correlation peak in [0, 1].
    pub metric: f64,
}

pub const DEFAULT_SYNC_THRESHOLD: f64 = 0.5;

/// Finds the offset maximizing the normalized cross-correlation magnitude
/// `|<y, r>| / (|y| |r|)` between the received window and `reference`.
pub fn synchronize(bb: &IqBuffer, reference: &[Complex64], threshold: f64) -> Result<SyncEstimate, WaveformError> {
    if bb.len() < reference.len() || reference.is_empty() {
        return Err(WaveformError::TooShort {
            len: bb.len(),
            reference: reference.len(),
        });
    }
    synchronize_mimo(
        &[bb.samples.as_slice()],
        &[reference],
        bb.len() - reference.len(),
        threshold,
    )
}

/// Joint timing search over several receive branches and several
/// (mutually orthogonal) transmitter references of equal length. The metric
/// is the square root of the fraction of windowed receive energy explained
/// by the references; with one branch and one reference it is the
/// normalized cross-correlation magnitude.
pub fn synchronize_mimo(
    rx: &[&[Complex64]],
    references: &[&[Complex64]],
    max_offset: usize,
    threshold: f64,
) -> Result<SyncEstimate, WaveformError> {
    let w = references.first().map_or(0, |r| r.len());
    let shortest = rx.iter().map(|r| r.len()).min().unwrap_or(0);
    if w == 0 || shortest < w || references.iter().any(|r| r.len() != w) {
        return Err(WaveformError::TooShort {
            len: shortest,
            reference: w,
        });
    }
    let max_offset = max_offset.min(shortest - w);
    let ref_energy: Vec<f64> = references
        .iter()
        .map(|r| r.iter().map(Complex64::norm_sqr).sum())
        .collect();

    // running window energies
    let mut window: Vec<f64> = rx
        .iter()
        .map(|y| y[..w].iter().map(Complex64::norm_sqr).sum())
        .collect();
    let mut best = SyncEstimate {
        offset: 0,
        metric: -1.0,
    };
    for tau in 0..=max_offset {
        if tau > 0 {
            for (e, y) in window.iter_mut().zip(rx) {
                *e += y[tau + w - 1].norm_sqr() - y[tau - 1].norm_sqr();
            }
        }
        let total: f64 = window.iter().sum();
        let mut explained = 0.0;
        for y in rx {
            let seg = &y[tau..tau + w];
            for (r, &er) in references.iter().zip(&ref_energy) {
                if er == 0.0 {
                    continue;
                }
                let c: Complex64 = seg.iter().zip(r.iter()).map(|(a, b)| a * b.conj()).sum();
                explained += c.norm_sqr() / er;
            }
        }
        let metric = if total > 0.0 {
            (explained / total).sqrt().min(1.0)
        } else {
            0.0
        };
        if metric > best.metric {
            best = SyncEstimate { offset: tau, metric };
        }
    }
    if best.metric < threshold {
        return Err(WaveformError::SyncFailure {
            metric: best.metric.max(0.0),
            threshold,
        });
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{Constellation, QamOrder};
    use crate::rng;
    use rand::Rng;

    fn random_qam4(n: usize, seed: u64) -> Vec<Complex64> {
        let c = Constellation::new(QamOrder::Qam4);
        let mut r = rng::stream(seed, &[1]);
        (0..n).map(|_| c.point(r.random_range(0..4))).collect()
    }

    #[test]
    fn single_symbol_gives_impulse_response() {
        let cfg = ShapingConfig::default();
        let out = pulse_shape(&[Complex64::new(1.0, 0.0)], &cfg).unwrap();
        let taps = rrc_taps(&cfg);
        for (o, t) in out.samples.iter().zip(&taps) {
            assert!((o.re - t).abs() < 1e-15 && o.im == 0.0);
        }
        let peak = taps.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, cfg.filter_delay());
        let e: f64 = taps.iter().map(|h| h * h).sum();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_symbols_give_zero_samples() {
        let cfg = ShapingConfig::default();
        let out = pulse_shape(&vec![Complex64::new(0.0, 0.0); 20], &cfg).unwrap();
        assert!(out.samples.iter().all(|z| z.norm() == 0.0));
        let back = matched_filter_decimate(&out, &cfg, 0, 20).unwrap();
        assert!(back.iter().all(|z| z.norm() == 0.0));
        assert_eq!(pulse_shape(&[], &cfg), Err(WaveformError::Empty));
    }

    fn isi(cfg: &ShapingConfig) -> Vec<f64> {
        let tx = pulse_shape(&[Complex64::new(1.0, 0.0)], cfg).unwrap();
        let rc = convolve_real(&tx.samples, &rrc_taps(cfg));
        let c = 2 * cfg.filter_delay();
        (1..=cfg.span)
            .map(|k| rc[c + k * cfg.sps].re.abs() / rc[c].re)
            .collect()
    }

    #[test]
    fn shape_then_matched_filter_recovers_symbols() {
        let cfg = ShapingConfig::default();
        let symbols = random_qam4(500, 3);
        let tx = pulse_shape(&symbols, &cfg).unwrap();
        let rx = matched_filter_decimate(&tx, &cfg, 0, symbols.len()).unwrap();
        let worst = symbols.iter().zip(&rx).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        // components are +-1/sqrt(2), so the error modulus is at most the
        // two-sided ISI sum
        let bound = 2.0 * isi(&cfg).iter().sum::<f64>();
        assert!(worst <= bound, "{worst} > {bound}");
        assert!(worst < 1e-2);
        let e_in: f64 = symbols.iter().map(|s| s.norm_sqr()).sum();
        let e_out: f64 = rx.iter().map(|s| s.norm_sqr()).sum();
        assert!((e_out / e_in - 1.0).abs() < 0.01);
    }

    #[test]
    fn truncation_isi_matches_reference() {
        // reference values from an independent evaluation of the same
        // truncated RRC pair
        let at16 = isi(&ShapingConfig::default());
        let worst = at16.iter().copied().fold(0.0, f64::max);
        assert!((worst / 1.788109634932937e-3 - 1.0).abs() < 1e-6, "{worst}");
        assert!((2.0 * at16.iter().sum::<f64>() / 7.42190117720647e-3 - 1.0).abs() < 1e-6);
        for (span, want) in [
            (20, 1.8528009952938993e-3),
            (24, 7.698563426867598e-4),
            (32, 6.805684166679261e-4),
        ] {
            let cfg = ShapingConfig {
                span,
                ..ShapingConfig::default()
            };
            let w = isi(&cfg).into_iter().fold(0.0, f64::max);
            assert!((w / want - 1.0).abs() < 1e-6, "span {span}: {w}");
        }
    }

    #[test]
    fn offset_out_of_range() {
        let cfg = ShapingConfig::default();
        let tx = pulse_shape(&random_qam4(10, 1), &cfg).unwrap();
        assert!(matches!(
            matched_filter_decimate(&tx, &cfg, 10_000, 10),
            Err(WaveformError::OffsetOutOfRange { .. })
        ));
    }

    #[test]
    fn upconvert_constant_inputs() {
        let cfg = ShapingConfig::default();
        let fs = cfg.sample_rate();
        let n = 64;
        let i_only = upconvert(&IqBuffer::baseband(vec![Complex64::new(1.0, 0.0); n], fs), &cfg).unwrap();
        let q_only = upconvert(&IqBuffer::baseband(vec![Complex64::new(0.0, 1.0); n], fs), &cfg).unwrap();
        for k in 0..n {
            let w = 2.0 * PI * cfg.carrier_hz / fs * k as f64;
            assert!((i_only.samples[k].re - w.cos()).abs() < 1e-12);
            assert!((q_only.samples[k].re + w.sin()).abs() < 1e-12);
            assert_eq!(q_only.samples[k].im, 0.0);
        }
        assert_eq!(i_only.domain, Domain::Passband);
    }

    /// Sum of complex tones confined to |f| <= 0.6 R.
    pub(crate) fn bandlimited(n: usize, cfg: &ShapingConfig, seed: u64) -> Vec<Complex64> {
        let mut r = rng::stream(seed, &[2]);
        let tones: Vec<(f64, Complex64)> = (0..12)
            .map(|_| {
                let f = r.random_range(-0.6..0.6) * cfg.symbol_rate_hz / cfg.sample_rate();
                (
                    f,
                    Complex64::from_polar(r.random_range(0.1..0.5), r.random_range(0.0..2.0 * PI)),
                )
            })
            .collect();
        (0..n)
            .map(|k| {
                tones
                    .iter()
                    .map(|(f, a)| a * Complex64::from_polar(1.0, 2.0 * PI * f * k as f64))
                    .sum()
            })
            .collect()
    }

    fn rms(v: &[Complex64]) -> f64 {
        (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn if_roundtrip() {
        let cfg = ShapingConfig::default();
        let x = bandlimited(4000, &cfg, 5);
        let bb = IqBuffer::baseband(x.clone(), cfg.sample_rate());
        let back = downconvert(&upconvert(&bb, &cfg).unwrap(), &cfg).unwrap();
        let t = downconvert_transient(&cfg);
        let err: Vec<Complex64> = x[t..x.len() - t]
            .iter()
            .zip(&back.samples[t..x.len() - t])
            .map(|(a, b)| a - b)
            .collect();
        assert!(rms(&err) < 1e-6, "{}", rms(&err));
    }

    #[test]
    fn passband_gain_matches_baseband_gain() {
        let cfg = ShapingConfig::default();
        let g = 0.37;
        let x = bandlimited(3000, &cfg, 9);
        let pb = upconvert(&IqBuffer::baseband(x.clone(), cfg.sample_rate()), &cfg).unwrap();
        let scaled = IqBuffer::passband(pb.samples.iter().map(|z| g * z.re).collect(), pb.sample_rate);
        let back = downconvert(&scaled, &cfg).unwrap();
        let t = downconvert_transient(&cfg);
        let err: Vec<Complex64> = (t..x.len() - t).map(|k| back.samples[k] - x[k] * g).collect();
        assert!(rms(&err) < 1e-6);
    }

    #[test]
    fn aliasing_is_rejected() {
        let cfg = ShapingConfig {
            carrier_hz: 9e6,
            ..ShapingConfig::default()
        };
        let bb = IqBuffer::baseband(vec![Complex64::new(1.0, 0.0); 8], cfg.sample_rate());
        assert!(matches!(upconvert(&bb, &cfg), Err(WaveformError::Aliasing { .. })));
        let low = ShapingConfig {
            carrier_hz: 1e6,
            ..ShapingConfig::default()
        };
        assert!(matches!(upconvert(&bb, &low), Err(WaveformError::Aliasing { .. })));
    }

    fn training_waveform(cfg: &ShapingConfig, seed: u64) -> Vec<Complex64> {
        let mut r = rng::stream(seed, &[3]);
        let bpsk: Vec<Complex64> = (0..64)
            .map(|_| Complex64::new(if r.random::<bool>() { 1.0 } else { -1.0 }, 0.0))
            .collect();
        pulse_shape(&bpsk, cfg).unwrap().samples
    }

    #[test]
    fn sync_finds_known_offset() {
        let cfg = ShapingConfig::default();
        let reference = training_waveform(&cfg, 1);
        let k = 137;
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        buf.extend(&reference);
        buf.extend(pulse_shape(&random_qam4(40, 2), &cfg).unwrap().samples);
        let est = synchronize(&IqBuffer::baseband(buf, cfg.sample_rate()), &reference, 0.5).unwrap();
        assert_eq!(est.offset, k);
        assert!(est.metric > 0.99);
    }

    #[test]
    fn sync_rejects_noise() {
        let cfg = ShapingConfig::default();
        let reference = training_waveform(&cfg, 1);
        let mut false_locks = 0;
        for trial in 0..50 {
            let mut r = rng::stream(trial, &[4]);
            let noise: Vec<Complex64> = (0..3000).map(|_| rng::complex_gaussian(&mut r, 1.0)).collect();
            match synchronize(
                &IqBuffer::baseband(noise, cfg.sample_rate()),
                &reference,
                DEFAULT_SYNC_THRESHOLD,
            ) {
                Err(WaveformError::SyncFailure { metric, .. }) => assert!(metric < 0.5),
                _ => false_locks += 1,
            }
        }
        assert_eq!(false_locks, 0);
    }

    #[test]
    fn sync_under_noise() {
        let cfg = ShapingConfig::default();
        let reference = training_waveform(&cfg, 7);
        // 10 dB per-symbol SNR with unit-energy pulses: per-sample noise variance 0.1
        let mut hits = 0;
        let trials = 1000;
        for trial in 0..trials {
            let mut r = rng::stream(trial, &[5]);
            let k = r.random_range(0..200usize);
            let mut buf = vec![Complex64::new(0.0, 0.0); k];
            buf.extend(&reference);
            buf.extend(vec![Complex64::new(0.0, 0.0); 200 - k]);
            buf.iter_mut().for_each(|z| *z += rng::complex_gaussian(&mut r, 0.1));
            if let Ok(est) = synchronize(&IqBuffer::baseband(buf, cfg.sample_rate()), &reference, 0.5) {
                hits += usize::from(est.offset == k);
            }
        }
        assert!(hits as f64 >= 0.99 * trials as f64, "{hits}/{trials}");
    }

    #[test]
    fn kaiser_lowpass_response() {
        let taps = kaiser_lowpass(0.125, 0.08, 140.0);
        let response = |f: f64| -> f64 {
            taps.iter()
                .enumerate()
                .map(|(n, h)| Complex64::from_polar(*h, -2.0 * PI * f * n as f64))
                .sum::<Complex64>()
                .norm()
        };
        assert!((response(0.0) - 1.0).abs() < 1e-12);
        assert!((response(0.08) - 1.0).abs() < 1e-6);
        assert!(response(0.17) < 1e-6);
    }
}
