//! Binary verdict protocol and the heavy-model server.
//!
//! Request, little-endian: magic `u32 = 0x45544451`, version `u8 = 1`,
//! request id `u64`, sample rate `u32`, sample count `u32`, then that many
//! `i16` samples. Response: magic `u32 = 0x45544452`, version `u8`, request
//! id `u64`, verdict `u8` (0 Pause, 1 Gap), `p_gap` `f32`; 18 bytes.
//!
//! A malformed request is answered with request id 0 and verdict byte
//! [`ERROR_VERDICT`], after which the server closes the connection.

mod client;
mod server;

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::audio::SAMPLE_RATE;
use crate::labels::TurnState;

pub use client::RemoteProvider;
pub use server::{serve, spawn_server, ServerHandle, LATENCY_ENV};

pub const REQUEST_MAGIC: u32 = 0x4554_4451;
pub const RESPONSE_MAGIC: u32 = 0x4554_4452;
pub const VERSION: u8 = 1;
pub const REQUEST_HEADER_LEN: usize = 21;
pub const RESPONSE_LEN: usize = 18;
/// Ten seconds of audio.
pub const MAX_SAMPLES: usize = 16_000 * 10;
/// Verdict byte of an error response.
pub const ERROR_VERDICT: u8 = 0xEE;

/// Encoding of request id 1 carrying samples `[0, 1, -1, 32767]`.
pub const GOLDEN_REQUEST: [u8; 29] = [
    0x51, 0x44, 0x54, 0x45, 0x01, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3E, 0x00, 0x00, 0x04, 0x00,
    0x00, 0x00, 0x00, 0x00, 0x01, 0x00, 0xFF, 0xFF, 0xFF, 0x7F,
];

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("truncated message: need {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("{0} samples exceeds the cap of {MAX_SAMPLES}")]
    CapExceeded(usize),
    #[error("sample rate {0} is not 16000")]
    BadSampleRate(u32),
    #[error("request carries no usable audio ({0} samples)")]
    TooShort(usize),
    #[error("invalid verdict byte {0}")]
    InvalidVerdict(u8),
    #[error("p_gap {p_gap} inconsistent with verdict {verdict}")]
    InvalidPGap { p_gap: f32, verdict: u8 },
    #[error("server rejected the request")]
    Rejected,
    #[error("response id {got} does not match request id {want}")]
    IdMismatch { want: u64, got: u64 },
    #[error("server error: {0}")]
    Server(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictRequest {
    pub request_id: u64,
    pub sample_rate: u32,
    pub pcm: Vec<i16>,
}

impl VerdictRequest {
    pub fn new(request_id: u64, pcm: Vec<i16>) -> Self {
        Self { request_id, sample_rate: SAMPLE_RATE, pcm }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictResponse {
    pub request_id: u64,
    pub verdict: TurnState,
    pub p_gap: f32,
}

impl VerdictResponse {
    /// Verdict is Gap iff `p_gap ≥ 0.5`.
    pub fn from_p_gap(request_id: u64, p_gap: f32) -> Self {
        let verdict = if p_gap >= 0.5 { TurnState::Gap } else { TurnState::Pause };
        Self { request_id, verdict, p_gap }
    }
}

fn check_len(bytes: &[u8], need: usize) -> Result<(), WireError> {
    if bytes.len() < need {
        Err(WireError::Truncated { need, got: bytes.len() })
    } else {
        Ok(())
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

pub fn encode_request(req: &VerdictRequest) -> Result<Vec<u8>, WireError> {
    if req.pcm.len() > MAX_SAMPLES {
        return Err(WireError::CapExceeded(req.pcm.len()));
    }
    let mut out = Vec::with_capacity(REQUEST_HEADER_LEN + 2 * req.pcm.len());
    out.extend_from_slice(&REQUEST_MAGIC.to_le_bytes());
    out.push(VERSION);
    out.extend_from_slice(&req.request_id.to_le_bytes());
    out.extend_from_slice(&req.sample_rate.to_le_bytes());
    out.extend_from_slice(&(req.pcm.len() as u32).to_le_bytes());
    for s in &req.pcm {
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(out)
}

/// Validates a request header and returns `(request_id, sample_rate, n_samples)`.
fn decode_request_header(h: &[u8]) -> Result<(u64, u32, usize), WireError> {
    check_len(h, REQUEST_HEADER_LEN)?;
    let magic = u32_at(h, 0);
    if magic != REQUEST_MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(WireError::BadVersion(h[4]));
    }
    let rate = u32_at(h, 13);
    if rate != SAMPLE_RATE {
        return Err(WireError::BadSampleRate(rate));
    }
    let n = u32_at(h, 17) as usize;
    if n > MAX_SAMPLES {
        return Err(WireError::CapExceeded(n));
    }
    Ok((u64_at(h, 5), rate, n))
}

pub fn decode_request(bytes: &[u8]) -> Result<VerdictRequest, WireError> {
    let (request_id, sample_rate, n) = decode_request_header(bytes)?;
    let need = REQUEST_HEADER_LEN + 2 * n;
    check_len(bytes, need)?;
    if bytes.len() > need {
        return Err(WireError::Trailing(bytes.len() - need));
    }
    let pcm = bytes[REQUEST_HEADER_LEN..].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Ok(VerdictRequest { request_id, sample_rate, pcm })
}

pub fn encode_response(resp: &VerdictResponse) -> [u8; RESPONSE_LEN] {
    let verdict = if resp.verdict == TurnState::Gap { 1 } else { 0 };
    response_bytes(resp.request_id, verdict, resp.p_gap)
}

fn response_bytes(request_id: u64, verdict: u8, p_gap: f32) -> [u8; RESPONSE_LEN] {
    let mut out = [0u8; RESPONSE_LEN];
    out[..4].copy_from_slice(&RESPONSE_MAGIC.to_le_bytes());
    out[4] = VERSION;
    out[5..13].copy_from_slice(&request_id.to_le_bytes());
    out[13] = verdict;
    out[14..].copy_from_slice(&p_gap.to_le_bytes());
    out
}

/// The response sent before closing a connection on a malformed request.
pub fn error_response() -> [u8; RESPONSE_LEN] {
    response_bytes(0, ERROR_VERDICT, 0.0)
}

pub fn decode_response(bytes: &[u8]) -> Result<VerdictResponse, WireError> {
    check_len(bytes, RESPONSE_LEN)?;
    if bytes.len() > RESPONSE_LEN {
        return Err(WireError::Trailing(bytes.len() - RESPONSE_LEN));
    }
    let magic = u32_at(bytes, 0);
    if magic != RESPONSE_MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(WireError::BadVersion(bytes[4]));
    }
    let request_id = u64_at(bytes, 5);
    let p_gap = f32::from_le_bytes(bytes[14..18].try_into().unwrap());
    let verdict = match bytes[13] {
        0 => TurnState::Pause,
        1 => TurnState::Gap,
        ERROR_VERDICT => return Err(WireError::Rejected),
        other => return Err(WireError::InvalidVerdict(other)),
    };
    let consistent = (0.0..=1.0).contains(&p_gap) && ((p_gap >= 0.5) == (verdict == TurnState::Gap));
    if !consistent {
        return Err(WireError::InvalidPGap { p_gap, verdict: bytes[13] });
    }
    Ok(VerdictResponse { request_id, verdict, p_gap })
}

/// Reads one request; `Ok(None)` on a clean end of stream.
pub fn read_request(r: &mut impl Read) -> Result<Option<VerdictRequest>, WireError> {
    let mut header = [0u8; REQUEST_HEADER_LEN];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(WireError::Truncated { need: REQUEST_HEADER_LEN, got }),
            n => got += n,
        }
    }
    let (request_id, sample_rate, n) = decode_request_header(&header)?;
    let mut body = vec![0u8; 2 * n];
    r.read_exact(&mut body)?;
    let pcm = body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Ok(Some(VerdictRequest { request_id, sample_rate, pcm }))
}

pub fn write_request(w: &mut impl Write, req: &VerdictRequest) -> Result<(), WireError> {
    w.write_all(&encode_request(req)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_response(r: &mut impl Read) -> Result<VerdictResponse, WireError> {
    let mut buf = [0u8; RESPONSE_LEN];
    r.read_exact(&mut buf)?;
    decode_response(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_request_bytes() {
        let req = VerdictRequest::new(1, vec![0, 1, -1, 32767]);
        assert_eq!(encode_request(&req).unwrap(), GOLDEN_REQUEST);
        assert_eq!(decode_request(&GOLDEN_REQUEST).unwrap(), req);
    }

    #[test]
    fn golden_response_bytes() {
        let resp = VerdictResponse::from_p_gap(1, 0.75);
        let bytes = encode_response(&resp);
        assert_eq!(bytes, [0x52, 0x44, 0x54, 0x45, 1, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0x00, 0x00, 0x40, 0x3F]);
        assert_eq!(decode_response(&bytes).unwrap(), resp);
    }

    #[test]
    fn empty_request_is_21_bytes() {
        assert_eq!(encode_request(&VerdictRequest::new(9, vec![])).unwrap().len(), 21);
    }

    #[test]
    fn corrupt_messages_rejected() {
        let mut bad = GOLDEN_REQUEST;
        bad[0] ^= 0xFF;
        assert!(matches!(decode_request(&bad), Err(WireError::BadMagic(_))));
        let mut bad = GOLDEN_REQUEST;
        bad[4] = 2;
        assert!(matches!(decode_request(&bad), Err(WireError::BadVersion(2))));
        assert!(matches!(decode_request(&GOLDEN_REQUEST[..27]), Err(WireError::Truncated { .. })));
        let mut resp = encode_response(&VerdictResponse::from_p_gap(3, 0.1));
        resp[13] = 7;
        assert!(matches!(decode_response(&resp), Err(WireError::InvalidVerdict(7))));
        assert!(matches!(decode_response(&error_response()), Err(WireError::Rejected)));
        let too_many = VerdictRequest::new(1, vec![0; MAX_SAMPLES + 1]);
        assert!(matches!(encode_request(&too_many), Err(WireError::CapExceeded(_))));
    }

    #[test]
    fn stream_reading_handles_eof() {
        let mut bytes = GOLDEN_REQUEST.to_vec();
        bytes.extend_from_slice(&GOLDEN_REQUEST);
        let mut r = &bytes[..];
        assert!(read_request(&mut r).unwrap().is_some());
        assert!(read_request(&mut r).unwrap().is_some());
        assert!(read_request(&mut r).unwrap().is_none());
        let mut partial = &GOLDEN_REQUEST[..10];
        assert!(read_request(&mut partial).is_err());
    }

    proptest! {
        #[test]
        fn request_round_trip(id in any::<u64>(), pcm in proptest::collection::vec(any::<i16>(), 0..1600)) {
            let req = VerdictRequest::new(id, pcm);
            prop_assert_eq!(decode_request(&encode_request(&req).unwrap()).unwrap(), req);
        }

        #[test]
        fn response_round_trip(id in any::<u64>(), p in 0.0f32..=1.0) {
            let resp = VerdictResponse::from_p_gap(id, p);
            let bytes = encode_response(&resp);
            prop_assert_eq!(bytes.len(), 18);
            prop_assert_eq!(decode_response(&bytes).unwrap(), resp);
        }
    }
}
