//! The per-frame transmit, channel and receive stages and the link loop
//! that drives them in-process. The UDP transport runs the same stages in
//! separate roles.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;

use super::{ChannelSpec, ExperimentConfig, HarnessError, ModePolicy, Point};
use crate::channel_estimation::{estimate_channel, ChannelEstimate};
use crate::channel_model::{add_noise, add_real_noise, apply_gains, generate_channel, ChannelMatrix};
use crate::constellation::Constellation;
use crate::framing::{build_frame, generate_training, parse_frame, Training};
use crate::link_adaptation::{
    mode_snrs, select_from_snrs, spectral_efficiency_mimo, AdaptPolicy, AdaptiveController, Decision, ModeCode,
    ModeSnrs, Scheme, ThresholdTable, INITIAL_MODE,
};
use crate::metrics::{weighted_spectral_efficiency, LinkReport, ModeStats};
use crate::mimo_detection::{diversity_combine, zf_detect, DetectionError};
use crate::rng::{self, tag};
use crate::waveform::{self, IqBuffer, ShapingConfig};

/// Rounds through binary32, the precision of the wire format.
pub(crate) fn quantize(z: Complex64) -> Complex64 {
    Complex64::new(z.re as f32 as f64, z.im as f32 as f64)
}

fn quantize_all(streams: &mut [Vec<Complex64>]) {
    for s in streams.iter_mut() {
        s.iter_mut().for_each(|z| *z = quantize(*z));
    }
}

/// Channel and noise for one operating point.
pub(crate) fn resolve_channel(cfg: &ExperimentConfig, point: Point) -> Result<ChannelMatrix, HarnessError> {
    let base = match &cfg.channel {
        ChannelSpec::Geometry(g) => match point {
            Point::DistanceM(d) => generate_channel(&g.at_distance(d))?,
            _ => generate_channel(g)?,
        },
        ChannelSpec::Matrix { rows, noise_variance } => {
            if let Point::DistanceM(_) = point {
                return Err(HarnessError::Config("distance point on a matrix channel".into()));
            }
            ChannelMatrix::from_rows(rows, *noise_variance)?
        }
    };
    match point {
        Point::SnrDb(db) => {
            let rho = 10f64.powf(db / 10.0);
            let sigma2 = cfg.policy.tx_power / (cfg.policy.num_tx as f64 * rho);
            Ok(base.with_noise(sigma2)?)
        }
        _ => Ok(base),
    }
}

/// Everything the three stages share for one `(config, point, seed)`.
#[derive(Debug, Clone)]
pub struct LinkContext {
    pub cfg: ExperimentConfig,
    pub point: Point,
    pub seed: u64,
    pub channel: ChannelMatrix,
    pub training: Training,
    /// Per-transmitter amplitude `sqrt(P_t / N_t)`.
    pub amplitude: f64,
    pub policy: AdaptPolicy,
    pub table: ThresholdTable,
    key: u64,
}

impl LinkContext {
    pub fn new(cfg: &ExperimentConfig, point: Point, seed: u64) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let channel = resolve_channel(cfg, point)?;
        let training = generate_training(&cfg.layout.training_config())?;
        let mut policy = cfg.policy.clone();
        if cfg.known_noise {
            policy.noise_variance = Some(channel.noise_variance());
        }
        let table = ThresholdTable::new(policy.ber_target);
        Ok(Self {
            amplitude: (cfg.policy.tx_power / cfg.policy.num_tx as f64).sqrt(),
            cfg: cfg.clone(),
            point,
            seed,
            channel,
            training,
            policy,
            table,
            key: point.key(),
        })
    }

    fn stream(&self, t: u64, frame: u64) -> rand_chacha::ChaCha8Rng {
        rng::stream(self.seed, &[t, self.key, frame])
    }

    /// Payload blocks a frame in this decision carries.
    pub fn num_blocks(&self, decision: Decision) -> usize {
        match decision.mode() {
            None => 0,
            Some(m) => {
                let per_block =
                    self.cfg.layout.block * m.order.bits_per_symbol() * m.data_streams(self.cfg.layout.n_tx);
                self.cfg.bits_per_frame.div_ceil(per_block).max(1)
            }
        }
    }

    pub fn frame_symbols(&self, decision: Decision) -> usize {
        self.cfg.layout.frame_len(self.num_blocks(decision))
    }

    /// Payload bits and unscaled symbols per data stream.
    pub fn payload(&self, frame: u64, decision: Decision) -> (Vec<u8>, Vec<Vec<Complex64>>) {
        let Some(mode) = decision.mode() else {
            return (Vec::new(), Vec::new());
        };
        let streams = mode.data_streams(self.cfg.layout.n_tx);
        let per_stream = self.num_blocks(decision) * self.cfg.layout.block * mode.order.bits_per_symbol();
        let bits = rng::random_bits(&mut self.stream(tag::BITS, frame), per_stream * streams);
        let c = Constellation::new(mode.order);
        let symbols = bits
            .chunks_exact(per_stream)
            .map(|chunk| c.map_bits(chunk).expect("whole symbols").symbols)
            .collect();
        (bits, symbols)
    }

    fn pulse_shaped_references(&self) -> Result<Vec<Vec<Complex64>>, HarnessError> {
        (0..self.cfg.layout.n_tx)
            .map(|m| {
                let region: Vec<Complex64> = self.training.tx_region(m).iter().map(|z| z * self.amplitude).collect();
                Ok(waveform::pulse_shape(&region, &self.cfg.shaping)?.samples)
            })
            .collect()
    }

    fn carrier_step(&self) -> f64 {
        let s: &ShapingConfig = &self.cfg.shaping;
        2.0 * std::f64::consts::PI * s.carrier_hz / s.sample_rate()
    }
}

/// What the transmitter puts on the air for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TxFrame {
    pub index: u64,
    pub decision: Decision,
    /// Per transmitter: symbols, or real passband samples (imaginary part
    /// zero) on the waveform path. Already rounded to binary32.
    pub samples: Vec<Vec<Complex64>>,
    pub passband: bool,
}

#[derive(Debug, Clone)]
pub struct TxStage {
    ctx: LinkContext,
}

impl TxStage {
    pub fn new(ctx: LinkContext) -> Self {
        Self { ctx }
    }

    pub fn context(&self) -> &LinkContext {
        &self.ctx
    }

    pub fn frame(&self, index: u64, decision: Decision) -> Result<TxFrame, HarnessError> {
        let ctx = &self.ctx;
        let layout = &ctx.cfg.layout;
        let (_, symbols) = ctx.payload(index, decision);
        let payloads: Vec<Vec<Complex64>> = match decision.mode() {
            None => vec![Vec::new(); layout.n_tx],
            Some(m) if m.scheme == Scheme::SpatialDiversity => vec![symbols[0].clone(); layout.n_tx],
            Some(_) => symbols,
        };
        let order = decision.mode().map(|m| m.order);
        let frame = build_frame(&payloads, &ctx.training, layout, order)?;
        let mut samples: Vec<Vec<Complex64>> = frame
            .streams
            .into_iter()
            .map(|s| s.into_iter().map(|z| z * ctx.amplitude).collect())
            .collect();
        if ctx.cfg.waveform {
            samples = samples
                .iter()
                .map(|s| {
                    let bb = waveform::pulse_shape(s, &ctx.cfg.shaping)?;
                    let pb = waveform::upconvert(&bb, &ctx.cfg.shaping)?;
                    Ok(pb.samples)
                })
                .collect::<Result<_, HarnessError>>()?;
        }
        quantize_all(&mut samples);
        Ok(TxFrame {
            index,
            decision,
            samples,
            passband: ctx.cfg.waveform,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ChannelStage {
    ctx: LinkContext,
}

impl ChannelStage {
    pub fn new(ctx: LinkContext) -> Self {
        Self { ctx }
    }

    /// `Hx + n`, rounded to binary32. On the symbol path the training and
    /// payload regions draw noise from separate streams, so the training
    /// observation does not depend on the payload mode. On the waveform path
    /// the frame is also delayed by a random number of samples.
    pub fn apply(
        &self,
        index: u64,
        tx: &[Vec<Complex64>],
        passband: bool,
    ) -> Result<Vec<Vec<Complex64>>, HarnessError> {
        let ctx = &self.ctx;
        let h = &ctx.channel;
        let sigma2 = h.noise_variance();
        let mut y = apply_gains(h, tx)?;
        if passband {
            let max_delay = ctx.cfg.max_delay_samples;
            let delay = ctx.stream(tag::DELAY, index).random_range(0..=max_delay);
            let pad = max_delay - delay + waveform::downconvert_transient(&ctx.cfg.shaping);
            for s in y.iter_mut() {
                let mut d = vec![Complex64::new(0.0, 0.0); delay];
                d.append(s);
                d.resize(d.len() + pad, Complex64::new(0.0, 0.0));
                *s = d;
            }
            // complex noise sigma^2 at the matched-filter output needs real
            // passband noise of sigma^2 / 4 per sample
            add_real_noise(&mut y, sigma2 / 4.0, &mut ctx.stream(tag::NOISE_WAVEFORM, index));
        } else {
            let split = ctx.cfg.layout.training_len().min(y.first().map_or(0, Vec::len));
            let mut train: Vec<Vec<Complex64>> = y.iter().map(|s| s[..split].to_vec()).collect();
            let mut body: Vec<Vec<Complex64>> = y.iter().map(|s| s[split..].to_vec()).collect();
            add_noise(&mut train, sigma2, &mut ctx.stream(tag::NOISE_TRAINING, index));
            add_noise(&mut body, sigma2, &mut ctx.stream(tag::NOISE_PAYLOAD, index));
            for ((s, t), b) in y.iter_mut().zip(train).zip(body) {
                *s = t;
                s.extend(b);
            }
        }
        quantize_all(&mut y);
        Ok(y)
    }
}

/// Receiver result for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub index: u64,
    pub decision: Decision,
    /// Timing synchronization failed; nothing else is valid.
    pub lost: bool,
    pub bits: u64,
    pub bit_errors: u64,
    /// Per detected stream: (error energy, reference energy).
    pub evm_energy: Vec<(f64, f64)>,
    pub estimate: Option<ChannelEstimate>,
    pub snrs: Option<ModeSnrs>,
    /// Mode the selector would pick from this frame's estimate.
    pub proposal: Option<Decision>,
}

#[derive(Debug, Clone)]
pub struct RxStage {
    ctx: LinkContext,
    references: Vec<Vec<Complex64>>,
}

impl RxStage {
    pub fn new(ctx: LinkContext) -> Result<Self, HarnessError> {
        let references = if ctx.cfg.waveform {
            ctx.pulse_shaped_references()?
        } else {
            Vec::new()
        };
        Ok(Self { ctx, references })
    }

    pub fn context(&self) -> &LinkContext {
        &self.ctx
    }

    /// Symbol-rate receive streams, or `None` when synchronization fails.
    fn to_symbols(
        &self,
        rx: &[Vec<Complex64>],
        passband: bool,
        num_symbols: usize,
    ) -> Result<Option<Vec<Vec<Complex64>>>, HarnessError> {
        if !passband {
            return Ok(Some(rx.to_vec()));
        }
        let shaping = &self.ctx.cfg.shaping;
        let fs = shaping.sample_rate();
        let baseband = rx
            .iter()
            .map(|s| {
                let pb = IqBuffer::passband(s.iter().map(|z| z.re).collect(), fs);
                Ok(waveform::downconvert(&pb, shaping)?.samples)
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let rx_refs: Vec<&[Complex64]> = baseband.iter().map(Vec::as_slice).collect();
        let refs: Vec<&[Complex64]> = self.references.iter().map(Vec::as_slice).collect();
        let sync = match waveform::synchronize_mimo(
            &rx_refs,
            &refs,
            self.ctx.cfg.max_delay_samples,
            self.ctx.cfg.sync_threshold,
        ) {
            Ok(s) => s,
            Err(waveform::WaveformError::SyncFailure { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        // undo the carrier phase the delay put on the baseband
        let rot = Complex64::from_polar(1.0, self.ctx.carrier_step() * sync.offset as f64);
        let out = baseband
            .into_iter()
            .map(|s| {
                let bb = IqBuffer::baseband(s.into_iter().map(|z| z * rot).collect(), fs);
                Ok(waveform::matched_filter_decimate(
                    &bb,
                    shaping,
                    sync.offset,
                    num_symbols,
                )?)
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok(Some(out))
    }

    fn known_training(&self) -> Vec<Vec<f64>> {
        self.ctx
            .training
            .pilots()
            .iter()
            .map(|p| p.iter().map(|v| v * self.ctx.amplitude).collect())
            .collect()
    }

    fn propose(&self, est: &ChannelEstimate) -> (ModeSnrs, Decision) {
        let p = &self.ctx.policy;
        let sigma2 = p.noise_variance.unwrap_or(est.noise_variance);
        let rho = p.tx_power / (p.num_tx as f64 * sigma2);
        let snrs = mode_snrs(&est.h_hat, rho);
        let d = select_from_snrs(&snrs, p, &self.ctx.table);
        (snrs, d)
    }

    pub fn process(
        &self,
        index: u64,
        decision: Decision,
        rx: &[Vec<Complex64>],
        passband: bool,
    ) -> Result<FrameOutcome, HarnessError> {
        let ctx = &self.ctx;
        let mut out = FrameOutcome {
            index,
            decision,
            lost: false,
            bits: 0,
            bit_errors: 0,
            evm_energy: Vec::new(),
            estimate: None,
            snrs: None,
            proposal: None,
        };
        let Some(symbols) = self.to_symbols(rx, passband, ctx.frame_symbols(decision))? else {
            out.lost = true;
            return Ok(out);
        };
        let parsed = parse_frame(&symbols, &ctx.cfg.layout)?;
        let mut est = estimate_channel(&parsed.training, &self.known_training())?;
        est.frame_index = index;
        let (snrs, proposal) = self.propose(&est);
        out.snrs = Some(snrs);
        out.proposal = Some(proposal);

        if let Some(mode) = decision.mode() {
            let detected = match mode.scheme {
                Scheme::SpatialMultiplexing => Some(zf_detect(&est, &parsed.payload)?),
                Scheme::SpatialDiversity => match diversity_combine(&est, &parsed.payload) {
                    Ok(d) => Some(d),
                    Err(DetectionError::Outage) => None,
                    Err(e) => return Err(e.into()),
                },
            };
            let (tx_bits, tx_symbols) = ctx.payload(index, decision);
            let c = Constellation::new(mode.order);
            let mut rx_bits = Vec::with_capacity(tx_bits.len());
            for (i, reference) in tx_symbols.iter().enumerate() {
                let est_symbols: Vec<Complex64> = match &detected {
                    Some(d) => d.streams[i].iter().map(|z| z / ctx.amplitude).collect(),
                    None => vec![Complex64::new(0.0, 0.0); reference.len()],
                };
                rx_bits.extend(c.demap_symbols(&est_symbols));
                let err: f64 = est_symbols.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
                let energy: f64 = reference.iter().map(Complex64::norm_sqr).sum();
                out.evm_energy.push((err, energy));
            }
            let (errors, _) = crate::metrics::count_bit_errors(&tx_bits, &rx_bits)?;
            out.bits = tx_bits.len() as u64;
            out.bit_errors = errors;
        }
        out.estimate = Some(est);
        Ok(out)
    }
}

/// All three stages for one run.
#[derive(Debug, Clone)]
pub struct LinkRun {
    pub tx: TxStage,
    pub channel: ChannelStage,
    pub rx: RxStage,
}

impl LinkRun {
    pub fn new(cfg: &ExperimentConfig, point: Point, seed: u64) -> Result<Self, HarnessError> {
        let ctx = LinkContext::new(cfg, point, seed)?;
        Ok(Self {
            tx: TxStage::new(ctx.clone()),
            channel: ChannelStage::new(ctx.clone()),
            rx: RxStage::new(ctx)?,
        })
    }

    pub fn context(&self) -> &LinkContext {
        self.tx.context()
    }

    pub fn initial_decision(&self) -> Decision {
        match self.context().cfg.mode {
            ModePolicy::Fixed(m) => Decision::Mode(m),
            ModePolicy::Adaptive => Decision::Mode(INITIAL_MODE),
        }
    }

    pub fn controller(&self) -> AdaptiveController {
        AdaptiveController::new(self.initial_decision(), self.context().policy.hysteresis)
    }

    /// Decision to feed back after a frame, given the controller state.
    pub fn feedback(&self, controller: &mut AdaptiveController, outcome: &FrameOutcome) -> Decision {
        match (self.context().cfg.mode, outcome.proposal) {
            (ModePolicy::Fixed(m), _) => Decision::Mode(m),
            (ModePolicy::Adaptive, Some(p)) => controller.update(p),
            (ModePolicy::Adaptive, None) => controller.current(),
        }
    }

    pub fn step(&self, index: u64, decision: Decision) -> Result<FrameOutcome, HarnessError> {
        let frame = self.tx.frame(index, decision)?;
        let y = self.channel.apply(index, &frame.samples, frame.passband)?;
        self.rx.process(index, decision, &y, frame.passband)
    }

    /// Mode for frame `index` chosen from that frame's own training (zero
    /// feedback latency).
    fn preview(&self, index: u64, controller: &mut AdaptiveController) -> Result<Decision, HarnessError> {
        let outcome = self.step(index, Decision::Outage)?;
        Ok(self.feedback(controller, &outcome))
    }

    pub fn run(&self) -> Result<LinkReport, HarnessError> {
        let cfg = &self.context().cfg;
        let mut controller = self.controller();
        let mut next = self.initial_decision();
        let mut outcomes = Vec::with_capacity(cfg.frames);
        for f in 0..cfg.frames as u64 {
            let decision = if cfg.feedback_latency == 0 && cfg.mode == ModePolicy::Adaptive {
                self.preview(f, &mut controller)?
            } else {
                next
            };
            let outcome = self.step(f, decision)?;
            if cfg.feedback_latency > 0 {
                next = self.feedback(&mut controller, &outcome);
            }
            outcomes.push(outcome);
        }
        Ok(build_report(self.context(), &outcomes))
    }
}

fn receive_snr_db(ctx: &LinkContext) -> f64 {
    let rho = ctx.cfg.policy.tx_power / (ctx.cfg.policy.num_tx as f64 * ctx.channel.noise_variance());
    10.0 * (rho * ctx.channel.gains().norm_squared() / ctx.channel.num_rx() as f64).log10()
}

/// Folds per-frame outcomes into a report. Frames before the warm-up count
/// appear only in the mode trace.
pub fn build_report(ctx: &LinkContext, outcomes: &[FrameOutcome]) -> LinkReport {
    let cfg = &ctx.cfg;
    let warmup = cfg.warmup().min(outcomes.len());
    let measured = &outcomes[warmup..];
    let nt = cfg.layout.n_tx;

    let mut groups: BTreeMap<String, ModeStats> = BTreeMap::new();
    let mut evm_acc: Vec<(f64, f64)> = Vec::new();
    let mut lost = 0u64;
    let (mut sm_sum, mut sm_n, mut sd_sum, mut snr_n) = (Vec::<f64>::new(), 0usize, 0.0, 0usize);
    let (mut capacity, mut capacity_n) = (0.0, 0usize);
    for o in measured {
        if o.lost {
            lost += 1;
            continue;
        }
        let g = groups.entry(o.decision.to_string()).or_insert(ModeStats {
            decision: o.decision,
            frames: 0,
            bits: 0,
            bit_errors: 0,
        });
        g.frames += 1;
        g.bits += o.bits;
        g.bit_errors += o.bit_errors;
        for (i, &(e, r)) in o.evm_energy.iter().enumerate() {
            if evm_acc.len() <= i {
                evm_acc.resize(i + 1, (0.0, 0.0));
            }
            evm_acc[i].0 += e;
            evm_acc[i].1 += r;
        }
        if let (Some(s), Some(est)) = (&o.snrs, &o.estimate) {
            if !s.sm.is_empty() {
                if sm_sum.len() < s.sm.len() {
                    sm_sum.resize(s.sm.len(), 0.0);
                }
                sm_sum.iter_mut().zip(&s.sm).for_each(|(a, b)| *a += b);
                sm_n += 1;
            }
            sd_sum += s.sd;
            snr_n += 1;
            let sigma2 = ctx.policy.noise_variance.unwrap_or(est.noise_variance);
            if sigma2 > 0.0 {
                capacity += spectral_efficiency_mimo(&est.h_hat, ctx.policy.tx_power, nt, sigma2);
                capacity_n += 1;
            }
        }
    }
    let stats: Vec<ModeStats> = groups.into_values().collect();
    let total_bits: u64 = stats.iter().map(|s| s.bits).sum();
    let bit_errors: u64 = stats.iter().map(|s| s.bit_errors).sum();
    let ber = if total_bits == 0 {
        0.0
    } else {
        bit_errors as f64 / total_bits as f64
    };
    let error_free = ber <= cfg.policy.ber_target;
    let spectral_efficiency = if error_free {
        weighted_spectral_efficiency(&stats, lost, cfg.policy.ber_target, nt)
    } else {
        0.0
    };
    let dominant = stats
        .iter()
        .max_by(|a, b| {
            a.frames.cmp(&b.frames).then(
                a.decision
                    .spectral_efficiency(nt)
                    .total_cmp(&b.decision.spectral_efficiency(nt)),
            )
        })
        .map_or(Decision::Outage, |s| s.decision);
    let per = |n: usize| if n == 0 { 1.0 } else { n as f64 };
    let (snr_db, distance_m) = match ctx.point {
        Point::DistanceM(d) => (Some(receive_snr_db(ctx)), Some(d)),
        Point::SnrDb(db) => (Some(db), None),
        Point::Native => (Some(receive_snr_db(ctx)), None),
    };
    LinkReport {
        seed: ctx.seed,
        snr_db: snr_db.filter(|v| v.is_finite()),
        distance_m,
        total_bits,
        bit_errors,
        ber,
        evm: evm_acc
            .iter()
            .map(|&(e, r)| if r > 0.0 { (e / r).sqrt() } else { 0.0 })
            .collect(),
        frames: outcomes.len() as u64,
        warmup_frames: warmup as u64,
        frames_lost: lost,
        mode_stats: stats,
        mode_trace: outcomes.iter().map(|o| o.decision).collect(),
        dominant,
        estimated_snrs: ModeSnrs {
            sm: sm_sum.iter().map(|v| v / per(sm_n)).collect(),
            sd: sd_sum / per(snr_n),
        },
        capacity: (capacity_n > 0).then(|| capacity / capacity_n as f64),
        spectral_efficiency,
        error_free,
        config: cfg.clone(),
    }
}

/// Runs one seeded link in-process.
pub fn run_link(cfg: &ExperimentConfig, point: Point, seed: u64) -> Result<LinkReport, HarnessError> {
    LinkRun::new(cfg, point, seed)?.run()
}

/// Convenience for tests and tools: a fixed-mode config on a given matrix.
pub fn matrix_config(rows: Vec<Vec<f64>>, noise_variance: f64, mode: ModeCode) -> ExperimentConfig {
    ExperimentConfig {
        mode: ModePolicy::Fixed(mode),
        channel: ChannelSpec::Matrix { rows, noise_variance },
        sweep: super::SweepAxis::SnrDb(vec![0.0]),
        ..ExperimentConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::QamOrder;

    fn identity_cfg(mode: ModeCode, waveform: bool) -> ExperimentConfig {
        ExperimentConfig {
            frames: 3,
            bits_per_frame: 4096,
            waveform,
            ..matrix_config(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0.0, mode)
        }
    }

    #[test]
    fn zero_noise_all_modes_symbol_path() {
        for mode in ModeCode::all() {
            let r = run_link(&identity_cfg(mode, false), Point::Native, 7).unwrap();
            assert_eq!(r.bit_errors, 0, "{mode}");
            assert!(r.total_bits >= 3 * 4096);
            assert!(r.evm.iter().all(|&e| e < 1e-6), "{mode} {:?}", r.evm);
        }
    }

    #[test]
    fn zero_noise_waveform_path() {
        for mode in [ModeCode::sm(QamOrder::Qam256), ModeCode::sd(QamOrder::Qam4)] {
            let r = run_link(&identity_cfg(mode, true), Point::Native, 8).unwrap();
            assert_eq!(r.frames_lost, 0);
            assert_eq!(r.bit_errors, 0, "{mode}");
        }
    }

    #[test]
    fn training_observation_independent_of_payload_mode() {
        let cfg = ExperimentConfig {
            frames: 1,
            ..matrix_config(
                vec![vec![1.0, 0.3], vec![0.2, 0.9]],
                0.01,
                ModeCode::sm(QamOrder::Qam16),
            )
        };
        let sm = LinkRun::new(&cfg, Point::Native, 3).unwrap();
        let a = sm.step(0, Decision::Mode(ModeCode::sm(QamOrder::Qam16))).unwrap();
        let b = sm.step(0, Decision::Mode(ModeCode::sd(QamOrder::Qam64))).unwrap();
        let (ea, eb) = (a.estimate.unwrap(), b.estimate.unwrap());
        assert_eq!(ea.h_hat, eb.h_hat);
        assert_eq!(ea.noise_variance.to_bits(), eb.noise_variance.to_bits());
    }

    #[test]
    fn deterministic() {
        let cfg = ExperimentConfig {
            frames: 4,
            ..matrix_config(
                vec![vec![1.0, 0.1], vec![0.1, 1.0]],
                0.02,
                ModeCode::sm(QamOrder::Qam16),
            )
        };
        assert_eq!(
            run_link(&cfg, Point::Native, 5).unwrap(),
            run_link(&cfg, Point::Native, 5).unwrap()
        );
        assert_ne!(
            run_link(&cfg, Point::Native, 5).unwrap(),
            run_link(&cfg, Point::Native, 6).unwrap()
        );
    }
}
