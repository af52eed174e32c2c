//! Binary IQ sample format shared by debug dumps and the UDP transport.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "VLIQ"
//!      4     4  sample count (u32 LE)
//!      8     4  sample rate in Hz (u32 LE)
//!     12     4  flags (u32 LE), bit 0 = passband
//!     16   8*n  interleaved binary32 LE: I0, Q0, I1, Q1, ...
//! ```
//!
//! Passband samples are real; their Q slots are written as zero.

use std::io::{self, Read, Write};

use num_complex::Complex64;
use thiserror::Error;

use super::{Domain, IqBuffer};

pub const MAGIC: [u8; 4] = *b"VLIQ";
pub const HEADER_LEN: usize = 16;
pub const FLAG_PASSBAND: u32 = 1;

#[derive(Debug, Error)]
pub enum IqFileError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("header declares {declared} samples but {trailing} trailing bytes follow")]
    LengthMismatch { declared: usize, trailing: usize },
    #[error("unknown flag bits {0:#x}")]
    UnknownFlags(u32),
    #[error("sample rate {0} Hz does not fit the header")]
    SampleRate(f64),
    #[error("too many samples for the header: {0}")]
    TooLong(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes interleaved binary32 samples (no header).
pub fn encode_samples(samples: &[Complex64], out: &mut Vec<u8>) {
    out.reserve(samples.len() * 8);
    for z in samples {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
}

/// Reads interleaved binary32 samples; `bytes.len()` must be a multiple of 8.
pub fn decode_samples(bytes: &[u8]) -> Result<Vec<Complex64>, IqFileError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(IqFileError::LengthMismatch {
            declared: bytes.len() / 8,
            trailing: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

pub fn encode(buf: &IqBuffer) -> Result<Vec<u8>, IqFileError> {
    let count = u32::try_from(buf.len()).map_err(|_| IqFileError::TooLong(buf.len()))?;
    let rate = buf.sample_rate.round();
    if !(0.0..=u32::MAX as f64).contains(&rate) {
        return Err(IqFileError::SampleRate(buf.sample_rate));
    }
    let flags = if buf.domain == Domain::Passband {
        FLAG_PASSBAND
    } else {
        0
    };
    let mut out = Vec::with_capacity(HEADER_LEN + buf.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(rate as u32).to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    if buf.domain == Domain::Passband {
        let real: Vec<Complex64> = buf.samples.iter().map(|z| Complex64::new(z.re, 0.0)).collect();
        encode_samples(&real, &mut out);
    } else {
        encode_samples(&buf.samples, &mut out);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<IqBuffer, IqFileError> {
    if bytes.len() < HEADER_LEN {
        return Err(IqFileError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != MAGIC {
        return Err(IqFileError::BadMagic(magic));
    }
    let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let count = word(4) as usize;
    let rate = word(8);
    let flags = word(12);
    if flags & !FLAG_PASSBAND != 0 {
        return Err(IqFileError::UnknownFlags(flags));
    }
    let body = &bytes[HEADER_LEN..];
    let need = count.checked_mul(8).ok_or(IqFileError::TooLong(count))?;
    if body.len() < need {
        return Err(IqFileError::Truncated {
            need: HEADER_LEN + need,
            have: bytes.len(),
        });
    }
    if body.len() > need {
        return Err(IqFileError::LengthMismatch {
            declared: count,
            trailing: body.len(),
        });
    }
    let samples = decode_samples(body)?;
    let domain = if flags & FLAG_PASSBAND != 0 {
        Domain::Passband
    } else {
        Domain::Baseband
    };
    let samples = if domain == Domain::Passband {
        samples.into_iter().map(|z| Complex64::new(z.re, 0.0)).collect()
    } else {
        samples
    };
    Ok(IqBuffer {
        samples,
        sample_rate: rate as f64,
        domain,
    })
}

pub fn write<W: Write>(mut w: W, buf: &IqBuffer) -> Result<(), IqFileError> {
    w.write_all(&encode(buf)?)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<IqBuffer, IqFileError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}
