//! Measured performance: bit errors, achieved spectral efficiency, run
//! reports, aggregation over seeds and CSV rows.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::ExperimentConfig;
use crate::link_adaptation::{Decision, ModeSnrs};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("bit streams differ in length: {tx} vs {rx}")]
    LengthMismatch { tx: usize, rx: usize },
    #[error("no reports to aggregate")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Hamming distance and its ratio to the length (0 for empty input).
pub fn count_bit_errors(tx: &[u8], rx: &[u8]) -> Result<(u64, f64), MetricsError> {
    if tx.len() != rx.len() {
        return Err(MetricsError::LengthMismatch {
            tx: tx.len(),
            rx: rx.len(),
        });
    }
    let errors = tx.iter().zip(rx).filter(|(a, b)| (*a ^ *b) & 1 != 0).count() as u64;
    let ber = if tx.is_empty() {
        0.0
    } else {
        errors as f64 / tx.len() as f64
    };
    Ok((errors, ber))
}

/// Nominal spectral efficiency of the mode when `ber <= ber_target`,
/// otherwise 0.
pub fn achieved_spectral_efficiency(decision: Decision, ber: f64, ber_target: f64, num_tx: usize) -> f64 {
    if ber <= ber_target {
        decision.spectral_efficiency(num_tx)
    } else {
        0.0
    }
}

/// Counts for the frames that used one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub decision: Decision,
    pub frames: u64,
    pub bits: u64,
    pub bit_errors: u64,
}

impl ModeStats {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub distance_m: Option<f64>,
    pub total_bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    /// RMS EVM of each detected stream against the transmitted symbols.
    pub evm: Vec<f64>,
    pub frames: u64,
    /// Frames excluded from the statistics because the controller was
    /// still converging.
    pub warmup_frames: u64,
    pub frames_lost: u64,
    pub mode_stats: Vec<ModeStats>,
    /// Decision applied to every frame, warm-up included.
    pub mode_trace: Vec<Decision>,
    /// Most frequent decision over the measured frames.
    pub dominant: Decision,
    /// Mean estimated post-detection SNRs over the measured frames.
    pub estimated_snrs: ModeSnrs,
    /// Mean eigen-mode spectral efficiency of the estimated channel.
    pub capacity: Option<f64>,
    pub spectral_efficiency: f64,
    pub error_free: bool,
    pub config: ExperimentConfig,
}

impl LinkReport {
    pub fn mean_evm(&self) -> f64 {
        if self.evm.is_empty() {
            0.0
        } else {
            self.evm.iter().sum::<f64>() / self.evm.len() as f64
        }
    }

    pub fn dwell(&self) -> BTreeMap<String, u64> {
        self.mode_stats
            .iter()
            .map(|s| (s.decision.to_string(), s.frames))
            .collect()
    }

    /// Fraction of measured frames spent in outage or lost.
    pub fn outage_fraction(&self) -> f64 {
        let measured = self.frames - self.warmup_frames;
        if measured == 0 {
            return 0.0;
        }
        let outage: u64 = self
            .mode_stats
            .iter()
            .filter(|s| s.decision == Decision::Outage)
            .map(|s| s.frames)
            .sum();
        (outage + self.frames_lost) as f64 / measured as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Dwell-weighted achieved spectral efficiency: every decision group earns
/// its nominal rate only if its own BER meets the target. Lost frames earn
/// nothing.
pub fn weighted_spectral_efficiency(stats: &[ModeStats], lost: u64, ber_target: f64, num_tx: usize) -> f64 {
    let frames: u64 = stats.iter().map(|s| s.frames).sum::<u64>() + lost;
    if frames == 0 {
        return 0.0;
    }
    stats
        .iter()
        .map(|s| s.frames as f64 * achieved_spectral_efficiency(s.decision, s.ber(), ber_target, num_tx))
        .sum::<f64>()
        / frames as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

const Z95: f64 = 1.959963984540054;

fn normal_interval(values: &[f64]) -> Interval {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Z95 * (var / n).sqrt()
    } else {
        0.0
    };
    Interval {
        mean,
        lo: mean - half,
        hi: mean + half,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reports: usize,
    pub total_bits: u64,
    pub bit_errors: u64,
    /// Mean of the per-report BERs; the interval is the binomial normal
    /// approximation over all pooled bits.
    pub ber: Interval,
    pub evm: Interval,
    pub spectral_efficiency: Interval,
    pub outage: Interval,
    pub dominant: Decision,
}

pub fn aggregate_reports(reports: &[LinkReport]) -> Result<Summary, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total_bits: u64 = reports.iter().map(|r| r.total_bits).sum();
    let bit_errors: u64 = reports.iter().map(|r| r.bit_errors).sum();
    let ber_mean = reports.iter().map(|r| r.ber).sum::<f64>() / reports.len() as f64;
    let half = if total_bits > 0 {
        Z95 * (ber_mean * (1.0 - ber_mean) / total_bits as f64).sqrt()
    } else {
        0.0
    };
    let ber = Interval {
        mean: ber_mean,
        lo: (ber_mean - half).max(0.0),
        hi: (ber_mean + half).min(1.0),
    };
    let evm: Vec<f64> = reports.iter().map(LinkReport::mean_evm).collect();
    let se: Vec<f64> = reports.iter().map(|r| r.spectral_efficiency).collect();
    let outage: Vec<f64> = reports.iter().map(LinkReport::outage_fraction).collect();

    let mut votes: BTreeMap<String, (u64, Decision)> = BTreeMap::new();
    for r in reports {
        for s in &r.mode_stats {
            votes.entry(s.decision.to_string()).or_insert((0, s.decision)).0 += s.frames;
        }
    }
    let dominant = votes
        .values()
        .max_by_key(|(n, d)| (*n, d.spectral_efficiency(2) as u64))
        .map_or(reports[0].dominant, |(_, d)| *d);

    Ok(Summary {
        reports: reports.len(),
        total_bits,
        bit_errors,
        ber,
        evm: normal_interval(&evm),
        spectral_efficiency: normal_interval(&se),
        outage: normal_interval(&outage),
        dominant,
    })
}

/// One sweep output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub distance_m: Option<f64>,
    pub snr_db: Option<f64>,
    pub mode: String,
    pub scheme: String,
    pub qam_order: Option<u32>,
    pub ber: f64,
    pub evm: f64,
    pub spec_eff: f64,
    pub outage: f64,
}

pub const CSV_HEADER: [&str; 9] = [
    "distance_m",
    "snr_db",
    "mode",
    "scheme",
    "qam_order",
    "ber",
    "evm",
    "spec_eff",
    "outage",
];

fn decision_columns(d: Decision) -> (String, String, Option<u32>) {
    match d.mode() {
        Some(m) => (m.to_string(), m.scheme.short().to_string(), Some(m.order.size())),
        None => ("outage".to_string(), String::new(), None),
    }
}

impl CsvRow {
    pub fn from_report(r: &LinkReport) -> Self {
        let (mode, scheme, qam_order) = decision_columns(r.dominant);
        Self {
            distance_m: r.distance_m,
            snr_db: r.snr_db,
            mode,
            scheme,
            qam_order,
            ber: r.ber,
            evm: r.mean_evm(),
            spec_eff: r.spectral_efficiency,
            outage: r.outage_fraction(),
        }
    }

    pub fn from_summary(s: &Summary, distance_m: Option<f64>, snr_db: Option<f64>) -> Self {
        let (mode, scheme, qam_order) = decision_columns(s.dominant);
        Self {
            distance_m,
            snr_db,
            mode,
            scheme,
            qam_order,
            ber: s.ber.mean,
            evm: s.evm.mean,
            spec_eff: s.spectral_efficiency.mean,
            outage: s.outage.mean,
        }
    }
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    // an empty sweep still gets its header
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv(data: &[u8]) -> Result<Vec<CsvRow>, MetricsError> {
    let mut r = csv::Reader::from_reader(data);
    r.deserialize().map(|row| row.map_err(MetricsError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::QamOrder;
    use crate::link_adaptation::ModeCode;

    #[test]
    fn bit_error_examples() {
        let a = vec![0u8, 1, 1, 0, 1];
        assert_eq!(count_bit_errors(&a, &a).unwrap(), (0, 0.0));
        let flipped: Vec<u8> = a.iter().map(|b| b ^ 1).collect();
        assert_eq!(count_bit_errors(&a, &flipped).unwrap(), (5, 1.0));

        let tx = vec![0u8; 10_000];
        let mut rx = tx.clone();
        for i in 0..17 {
            rx[i * 577] = 1;
        }
        let (e, ber) = count_bit_errors(&tx, &rx).unwrap();
        assert_eq!(e, 17);
        assert!((ber - 1.7e-3).abs() < 1e-15);
        assert!(count_bit_errors(&tx, &rx[1..]).is_err());
    }

    #[test]
    fn achieved_examples() {
        let sm64 = Decision::Mode(ModeCode::sm(QamOrder::Qam64));
        assert_eq!(achieved_spectral_efficiency(sm64, 1e-5, 1e-3, 2), 12.0);
        let sd16 = Decision::Mode(ModeCode::sd(QamOrder::Qam16));
        assert_eq!(achieved_spectral_efficiency(sd16, 1e-4, 1e-3, 2), 4.0);
        let sm256 = Decision::Mode(ModeCode::sm(QamOrder::Qam256));
        assert_eq!(achieved_spectral_efficiency(sm256, 5e-3, 1e-3, 2), 0.0);
        assert_eq!(achieved_spectral_efficiency(Decision::Outage, 0.0, 1e-3, 2), 0.0);
    }

    #[test]
    fn weighted_efficiency() {
        let stats = vec![
            ModeStats {
                decision: Decision::Mode(ModeCode::sm(QamOrder::Qam64)),
                frames: 3,
                bits: 3000,
                bit_errors: 0,
            },
            ModeStats {
                decision: Decision::Mode(ModeCode::sm(QamOrder::Qam256)),
                frames: 1,
                bits: 1000,
                bit_errors: 100,
            },
        ];
        assert_eq!(weighted_spectral_efficiency(&stats, 0, 1e-3, 2), 9.0);
        assert_eq!(weighted_spectral_efficiency(&stats, 2, 1e-3, 2), 6.0);
        assert_eq!(weighted_spectral_efficiency(&[], 0, 1e-3, 2), 0.0);
    }

    #[test]
    fn csv_header_and_roundtrip() {
        let row = CsvRow {
            distance_m: Some(1.7),
            snr_db: None,
            mode: "SM-64".into(),
            scheme: "SM".into(),
            qam_order: Some(64),
            ber: 1e-3,
            evm: 0.05,
            spec_eff: 12.0,
            outage: 0.0,
        };
        let mut out = Vec::new();
        write_csv(std::slice::from_ref(&row), &mut out).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(read_csv(&out).unwrap(), vec![row]);

        let mut empty = Vec::new();
        write_csv(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim(), CSV_HEADER.join(","));
    }
}
