//! Sweeps over an SNR or distance axis, parallel across points and seeds.

use rayon::prelude::*;

use super::{run_link, ExperimentConfig, HarnessError, Point, SweepAxis, TransportKind};
use crate::metrics::{aggregate_reports, CsvRow, LinkReport, Summary};
use crate::transport;

pub fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    match &cfg.sweep {
        SweepAxis::SnrDb(v) => v.iter().map(|&x| Point::SnrDb(x)).collect(),
        SweepAxis::DistanceM(v) => v.iter().map(|&x| Point::DistanceM(x)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// Ordered by point, then seed.
    pub reports: Vec<LinkReport>,
    /// One per point.
    pub summaries: Vec<Summary>,
    /// Per point: one row per seed followed by the aggregate row.
    pub rows: Vec<CsvRow>,
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, HarnessError> {
    cfg.validate()?;
    let pts = points(cfg);
    let tasks: Vec<(Point, u64)> = pts
        .iter()
        .flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let reports: Vec<LinkReport> = match cfg.transport {
        TransportKind::Inproc => tasks
            .par_iter()
            .map(|&(p, s)| run_link(cfg, p, s))
            .collect::<Result<_, _>>()?,
        // fixed ports cannot be shared between concurrent links
        TransportKind::Udp => tasks
            .iter()
            .map(|&(p, s)| transport::run_emulated_link(cfg, p, s))
            .collect::<Result<_, _>>()?,
    };
    let mut rows = Vec::with_capacity(reports.len() + pts.len());
    let mut summaries = Vec::with_capacity(pts.len());
    for (point, group) in pts.iter().zip(reports.chunks(cfg.seeds.len())) {
        rows.extend(group.iter().map(CsvRow::from_report));
        let summary = aggregate_reports(group)?;
        let (distance, snr) = match point {
            Point::DistanceM(d) => (Some(*d), group[0].snr_db),
            Point::SnrDb(s) => (None, Some(*s)),
            Point::Native => (None, group[0].snr_db),
        };
        rows.push(CsvRow::from_summary(&summary, distance, snr));
        summaries.push(summary);
    }
    Ok(SweepOutput {
        reports,
        summaries,
        rows,
    })
}
