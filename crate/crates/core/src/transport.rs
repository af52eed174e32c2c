//! Split-process link emulation over UDP.
//!
//! The transmitter streams each frame to a channel emulator, which applies
//! `Hx + n` and streams the result to the receiver; the receiver sends the
//! mode feedback back to the transmitter. Samples travel as binary32 IQ, the
//! precision the in-process link also rounds to, so both runs agree bit for
//! bit.
//!
//! Every data datagram is acknowledged and retransmitted until it is, which
//! keeps bursts within the socket buffers. The transmitter sends frame
//! `k + 1` only after the feedback for frame `k` arrived.

use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use thiserror::Error;

use crate::harness::{build_report, ExperimentConfig, FrameOutcome, HarnessError, LinkRun, ModePolicy, Point};
use crate::link_adaptation::{decode_feedback, decode_mode, encode_feedback, encode_mode, AdaptationError, Decision};
use crate::metrics::LinkReport;
use crate::waveform::iqfile::{self, IqFileError};

pub const MAGIC: [u8; 4] = *b"VLCF";
pub const HEADER_LEN: usize = 14;
pub const ACK_MAGIC: [u8; 4] = *b"VLCA";
pub const ACK_LEN: usize = 8;
pub const FEEDBACK_LEN: usize = 5;
/// Samples per datagram (32 KiB of payload).
pub const MAX_SAMPLES_PER_DATAGRAM: usize = 4096;

pub mod flags {
    pub const MODE_MASK: u8 = 0b0000_0111;
    pub const OUTAGE: u8 = 1 << 3;
    pub const PASSBAND: u8 = 1 << 4;
    pub const END_OF_FRAME: u8 = 1 << 5;
    /// The sender dropped this frame; the datagram carries no samples.
    pub const LOST: u8 = 1 << 6;
    pub const RESERVED: u8 = 1 << 7;
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("datagram of {0} bytes is shorter than the header")]
    Truncated(usize),
    #[error("header declares {declared} samples but payload holds {actual} bytes")]
    LengthMismatch { declared: u32, actual: usize },
    #[error("reserved flag bits set: {0:#04x}")]
    ReservedFlags(u8),
    #[error("feedback message must be {FEEDBACK_LEN} bytes, got {0}")]
    FeedbackLength(usize),
    #[error(transparent)]
    Feedback(#[from] AdaptationError),
    #[error(transparent)]
    Samples(#[from] IqFileError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireFrame {
    pub seq: u32,
    pub stream: u8,
    pub flags: u8,
    pub samples: Vec<Complex64>,
}

impl WireFrame {
    /// Mode carried in the flags.
    pub fn decision(&self) -> Decision {
        if self.flags & flags::OUTAGE != 0 {
            Decision::Outage
        } else {
            Decision::Mode(decode_mode(self.flags & flags::MODE_MASK).expect("three bits"))
        }
    }
}

pub fn decision_flags(d: Decision) -> u8 {
    match d {
        Decision::Mode(m) => encode_mode(m),
        Decision::Outage => flags::OUTAGE,
    }
}

/// `"VLCF" | seq u32 | count u32 | stream u8 | flags u8 | count x (f32 re, f32 im)`, little-endian.
pub fn serialize_frame(samples: &[Complex64], seq: u32, stream: u8, flags: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * samples.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    out.push(stream);
    out.push(flags);
    iqfile::encode_samples(samples, &mut out);
    out
}

pub fn deserialize_frame(bytes: &[u8]) -> Result<WireFrame, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let seq = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let stream = bytes[12];
    let fl = bytes[13];
    if fl & flags::RESERVED != 0 {
        return Err(WireError::ReservedFlags(fl));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != count as u64 * 8 {
        return Err(WireError::LengthMismatch {
            declared: count,
            actual: payload.len(),
        });
    }
    Ok(WireFrame {
        seq,
        stream,
        flags: fl,
        samples: iqfile::decode_samples(payload)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackMsg {
    pub decision: Decision,
    /// Frame the decision was derived from.
    pub seq: u32,
}

impl FeedbackMsg {
    pub fn to_bytes(&self) -> [u8; FEEDBACK_LEN] {
        let mut out = [0u8; FEEDBACK_LEN];
        out[0] = encode_feedback(self.decision);
        out[1..].copy_from_slice(&self.seq.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != FEEDBACK_LEN {
            return Err(WireError::FeedbackLength(bytes.len()));
        }
        Ok(Self {
            decision: decode_feedback(bytes[0])?,
            seq: u32::from_le_bytes(bytes[1..].try_into().expect("4 bytes")),
        })
    }
}

fn ack_bytes(stream: u8, seq: u32) -> [u8; ACK_LEN] {
    let mut out = [0u8; ACK_LEN];
    out[..4].copy_from_slice(&ACK_MAGIC);
    // the stream id lives in the top byte so one u32 identifies the datagram
    out[4..].copy_from_slice(&(seq ^ ((stream as u32) << 24)).to_le_bytes());
    out
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timeout waiting for {0}")]
    Timeout(String),
    #[error("malformed datagram: {0}")]
    Wire(#[from] WireError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl From<TransportError> for HarnessError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Harness(h) => h,
            other => HarnessError::Transport(other.to_string()),
        }
    }
}

const RETRY_INTERVAL: Duration = Duration::from_millis(50);

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
}

/// Sends one datagram and waits for its acknowledgement, retransmitting
/// until `deadline`.
fn send_acked(
    sock: &UdpSocket,
    peer: SocketAddr,
    bytes: &[u8],
    stream: u8,
    seq: u32,
    deadline: Duration,
) -> Result<(), TransportError> {
    let want = ack_bytes(stream, seq);
    let start = Instant::now();
    let mut buf = [0u8; 64];
    sock.set_read_timeout(Some(RETRY_INTERVAL))?;
    loop {
        sock.send_to(bytes, peer)?;
        loop {
            match sock.recv_from(&mut buf) {
                Ok((n, _)) if buf[..n] == want => return Ok(()),
                // stale acknowledgements of retransmissions
                Ok((ACK_LEN, _)) if buf[..4] == ACK_MAGIC => continue,
                Ok((n, from)) => {
                    return Err(TransportError::Protocol(format!(
                        "unexpected {n}-byte datagram from {from} while waiting for an ack"
                    )))
                }
                Err(e) if is_timeout(&e) => break,
                // loopback reports an unreachable peer on the next receive
                Err(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => break,
                Err(e) => return Err(e.into()),
            }
        }
        if start.elapsed() >= deadline {
            return Err(TransportError::Timeout(format!(
                "ack of datagram {seq} on stream {stream} from {peer}"
            )));
        }
    }
}

/// Per-stream sequence counters of one sender.
#[derive(Debug, Default)]
struct Sender {
    seq: Vec<u32>,
}

impl Sender {
    fn send_frame(
        &mut self,
        sock: &UdpSocket,
        peer: SocketAddr,
        streams: &[Vec<Complex64>],
        base_flags: u8,
        deadline: Duration,
    ) -> Result<(), TransportError> {
        if self.seq.len() < streams.len() {
            self.seq.resize(streams.len(), 0);
        }
        for (m, samples) in streams.iter().enumerate() {
            let chunks: Vec<&[Complex64]> = if samples.is_empty() {
                vec![&[]]
            } else {
                samples.chunks(MAX_SAMPLES_PER_DATAGRAM).collect()
            };
            let last = chunks.len() - 1;
            for (i, chunk) in chunks.into_iter().enumerate() {
                let fl = if i == last {
                    base_flags | flags::END_OF_FRAME
                } else {
                    base_flags
                };
                let seq = self.seq[m];
                self.seq[m] = seq.wrapping_add(1);
                let bytes = serialize_frame(chunk, seq, m as u8, fl);
                send_acked(sock, peer, &bytes, m as u8, seq, deadline)?;
            }
        }
        Ok(())
    }
}

/// One frame as reassembled by a receiver.
#[derive(Debug)]
struct Received {
    streams: Vec<Vec<Complex64>>,
    flags: u8,
    /// A sequence gap or an upstream drop.
    lost: bool,
}

#[derive(Debug)]
struct Reassembler {
    next_seq: Vec<Option<u32>>,
}

impl Reassembler {
    fn new(streams: usize) -> Self {
        Self {
            next_seq: vec![None; streams],
        }
    }

    fn recv_frame(&mut self, sock: &UdpSocket, deadline: Duration) -> Result<Received, TransportError> {
        let n = self.next_seq.len();
        let mut streams = vec![Vec::new(); n];
        let mut done = vec![false; n];
        let mut lost = false;
        let mut frame_flags = None;
        let mut buf = vec![0u8; HEADER_LEN + 8 * MAX_SAMPLES_PER_DATAGRAM];
        sock.set_read_timeout(Some(deadline))?;
        while done.iter().any(|d| !d) {
            let (len, src) = match sock.recv_from(&mut buf) {
                Ok(v) => v,
                Err(e) if is_timeout(&e) => return Err(TransportError::Timeout("frame data".into())),
                Err(e) => return Err(e.into()),
            };
            let wf = deserialize_frame(&buf[..len])?;
            let m = wf.stream as usize;
            if m >= n {
                return Err(TransportError::Protocol(format!("stream id {m} >= {n}")));
            }
            sock.send_to(&ack_bytes(wf.stream, wf.seq), src)?;
            if let Some(expect) = self.next_seq[m] {
                if wf.seq.wrapping_sub(expect) > u32::MAX / 2 {
                    continue; // duplicate of an acknowledged datagram
                }
                if wf.seq != expect {
                    lost = true;
                }
            }
            self.next_seq[m] = Some(wf.seq.wrapping_add(1));
            if done[m] {
                return Err(TransportError::Protocol(format!(
                    "stream {m} continued past end of frame"
                )));
            }
            let base = wf.flags & !flags::END_OF_FRAME & !flags::LOST;
            match frame_flags {
                None => frame_flags = Some(base),
                Some(f) if f != base => return Err(TransportError::Protocol("streams disagree on frame flags".into())),
                _ => {}
            }
            lost |= wf.flags & flags::LOST != 0;
            streams[m].extend(wf.samples);
            done[m] |= wf.flags & flags::END_OF_FRAME != 0;
        }
        Ok(Received {
            streams,
            flags: frame_flags.unwrap_or(0),
            lost,
        })
    }
}

fn decision_from_flags(fl: u8) -> Decision {
    WireFrame {
        seq: 0,
        stream: 0,
        flags: fl,
        samples: Vec::new(),
    }
    .decision()
}

fn deadline(cfg: &ExperimentConfig) -> Duration {
    Duration::from_millis(cfg.udp.deadline_ms)
}

fn previews(cfg: &ExperimentConfig) -> bool {
    cfg.feedback_latency == 0 && cfg.mode == ModePolicy::Adaptive
}

/// Transmissions per frame: a training-only preview precedes each frame
/// when the mode follows the frame's own training.
fn transmissions(cfg: &ExperimentConfig) -> usize {
    if previews(cfg) {
        2 * cfg.frames
    } else {
        cfg.frames
    }
}

fn send_and_await_feedback(
    run: &LinkRun,
    sock: &UdpSocket,
    chan: SocketAddr,
    sender: &mut Sender,
    index: u64,
    decision: Decision,
) -> Result<Decision, TransportError> {
    let wait = deadline(&run.context().cfg);
    let frame = run.tx.frame(index, decision)?;
    let fl = decision_flags(decision) | if frame.passband { flags::PASSBAND } else { 0 };
    sender.send_frame(sock, chan, &frame.samples, fl, wait)?;
    let mut buf = [0u8; 64];
    sock.set_read_timeout(Some(wait))?;
    loop {
        match sock.recv_from(&mut buf) {
            Ok((FEEDBACK_LEN, _)) => {
                let fb = FeedbackMsg::from_bytes(&buf[..FEEDBACK_LEN])?;
                if fb.seq as u64 == index {
                    return Ok(fb.decision);
                }
            }
            Ok((ACK_LEN, _)) if buf[..4] == ACK_MAGIC => {}
            Ok((n, from)) => {
                return Err(TransportError::Protocol(format!(
                    "unexpected {n}-byte datagram from {from}"
                )))
            }
            Err(e) if is_timeout(&e) => return Err(TransportError::Timeout(format!("feedback for frame {index}"))),
            Err(e) => return Err(e.into()),
        }
    }
}

/// Transmitter role: returns the decision applied to each frame.
pub fn tx_role(run: &LinkRun, sock: &UdpSocket, chan: SocketAddr) -> Result<Vec<Decision>, TransportError> {
    let cfg = &run.context().cfg;
    let mut sender = Sender::default();
    let mut next = run.initial_decision();
    let mut trace = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames as u64 {
        let decision = if previews(cfg) {
            send_and_await_feedback(run, sock, chan, &mut sender, f, Decision::Outage)?
        } else {
            next
        };
        next = send_and_await_feedback(run, sock, chan, &mut sender, f, decision)?;
        trace.push(decision);
    }
    Ok(trace)
}

/// Channel emulator role.
pub fn chan_role(run: &LinkRun, sock: &UdpSocket, rx: SocketAddr) -> Result<(), TransportError> {
    let cfg = &run.context().cfg;
    let wait = deadline(cfg);
    let mut input = Reassembler::new(cfg.layout.n_tx);
    let mut sender = Sender::default();
    let nr = run.context().channel.num_rx();
    let per_frame = transmissions(cfg) / cfg.frames.max(1);
    for t in 0..transmissions(cfg) {
        let f = (t / per_frame) as u64;
        let got = input.recv_frame(sock, wait)?;
        if got.lost {
            let empty = vec![Vec::new(); nr];
            sender.send_frame(sock, rx, &empty, got.flags | flags::LOST, wait)?;
            continue;
        }
        let y = run.channel.apply(f, &got.streams, got.flags & flags::PASSBAND != 0)?;
        sender.send_frame(sock, rx, &y, got.flags, wait)?;
    }
    Ok(())
}

/// Receiver role: processes every frame, feeds back, returns the report.
pub fn rx_role(run: &LinkRun, sock: &UdpSocket, tx: SocketAddr) -> Result<LinkReport, TransportError> {
    let ctx = run.context();
    let cfg = &ctx.cfg;
    let wait = deadline(cfg);
    let mut input = Reassembler::new(ctx.channel.num_rx());
    let mut controller = run.controller();
    let mut outcomes = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames as u64 {
        if previews(cfg) {
            let got = input.recv_frame(sock, wait)?;
            let outcome = receive(run, f, &got)?;
            let fb = run.feedback(&mut controller, &outcome);
            send_feedback(sock, tx, fb, f)?;
        }
        let got = input.recv_frame(sock, wait)?;
        let outcome = receive(run, f, &got)?;
        let fb = if previews(cfg) {
            controller.current()
        } else {
            run.feedback(&mut controller, &outcome)
        };
        send_feedback(sock, tx, fb, f)?;
        outcomes.push(outcome);
    }
    Ok(build_report(ctx, &outcomes))
}

fn receive(run: &LinkRun, index: u64, got: &Received) -> Result<FrameOutcome, TransportError> {
    let decision = decision_from_flags(got.flags);
    if got.lost {
        return Ok(FrameOutcome {
            index,
            decision,
            lost: true,
            bits: 0,
            bit_errors: 0,
            evm_energy: Vec::new(),
            estimate: None,
            snrs: None,
            proposal: None,
        });
    }
    Ok(run
        .rx
        .process(index, decision, &got.streams, got.flags & flags::PASSBAND != 0)?)
}

fn send_feedback(sock: &UdpSocket, tx: SocketAddr, decision: Decision, index: u64) -> Result<(), TransportError> {
    let msg = FeedbackMsg {
        decision,
        seq: index as u32,
    };
    sock.send_to(&msg.to_bytes(), tx)?;
    Ok(())
}

fn bind(host: &str, port: u16) -> Result<UdpSocket, TransportError> {
    Ok(UdpSocket::bind((host, port))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Tx,
    Chan,
    Rx,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoleOutput {
    /// Decision applied to each frame.
    Tx(Vec<Decision>),
    Chan,
    Rx(Box<LinkReport>),
}

/// Runs one role in this process against peers at the configured ports.
pub fn run_role(role: Role, cfg: &ExperimentConfig, point: Point, seed: u64) -> Result<RoleOutput, HarnessError> {
    let run = LinkRun::new(cfg, point, seed)?;
    let u = &cfg.udp;
    let peer = |port: u16| -> Result<SocketAddr, TransportError> {
        use std::net::ToSocketAddrs;
        (u.host.as_str(), port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| TransportError::Protocol(format!("cannot resolve {}", u.host)))
    };
    let out = match role {
        Role::Tx => RoleOutput::Tx(tx_role(&run, &bind(&u.host, u.tx_port)?, peer(u.chan_port)?)?),
        Role::Chan => {
            chan_role(&run, &bind(&u.host, u.chan_port)?, peer(u.rx_port)?)?;
            RoleOutput::Chan
        }
        Role::Rx => RoleOutput::Rx(Box::new(rx_role(&run, &bind(&u.host, u.rx_port)?, peer(u.tx_port)?)?)),
    };
    Ok(out)
}

/// Runs the three roles on loopback sockets in threads of this process.
/// Ports of 0 pick ephemeral ports.
pub fn run_emulated_link(cfg: &ExperimentConfig, point: Point, seed: u64) -> Result<LinkReport, HarnessError> {
    let run = LinkRun::new(cfg, point, seed)?;
    let host = cfg.udp.host.as_str();
    let tx_sock = bind(host, cfg.udp.tx_port)?;
    let chan_sock = bind(host, cfg.udp.chan_port)?;
    let rx_sock = bind(host, cfg.udp.rx_port)?;
    let (tx_addr, chan_addr, rx_addr) = (
        tx_sock.local_addr().map_err(TransportError::from)?,
        chan_sock.local_addr().map_err(TransportError::from)?,
        rx_sock.local_addr().map_err(TransportError::from)?,
    );
    let (tx_res, chan_res, rx_res) = std::thread::scope(|s| {
        let chan = s.spawn(|| chan_role(&run, &chan_sock, rx_addr));
        let rx = s.spawn(|| rx_role(&run, &rx_sock, tx_addr));
        let tx = tx_role(&run, &tx_sock, chan_addr);
        (tx, chan.join(), rx.join())
    });
    let join_err = |_| HarnessError::Transport("role thread panicked".into());
    let report = rx_res.map_err(join_err)?;
    chan_res.map_err(join_err)??;
    let trace = tx_res?;
    let report = report?;
    if trace != report.mode_trace {
        return Err(HarnessError::Transport(
            "transmitter and receiver mode traces differ".into(),
        ));
    }
    Ok(report)
}
