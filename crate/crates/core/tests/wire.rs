use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use etd_core::audio::{FeatureConfig, MelExtractor};
use etd_core::nn::{heavy_forward_batch, Arch, HeavyArch, Params};
use etd_core::wire::{
    decode_response, encode_request, read_response, spawn_server, RemoteProvider, VerdictRequest, WireError,
    RESPONSE_LEN,
};

fn small_heavy() -> Params {
    Params::init(Arch::Heavy(HeavyArch { window_frames: 50, hidden: 6, layers: 1, ..HeavyArch::default() }), 4)
}

fn tone(n: usize, freq: f64) -> Vec<i16> {
    (0..n).map(|i| (8000.0 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as i16).collect()
}

#[test]
fn pipelined_requests_answer_in_order() {
    let server = spawn_server(small_heavy(), &FeatureConfig::default(), "127.0.0.1:0", Duration::ZERO).unwrap();
    let mut stream = TcpStream::connect(server.addr()).unwrap();
    let mut batch = Vec::new();
    for id in 0..100u64 {
        batch.extend(encode_request(&VerdictRequest::new(id + 1, tone(2000 + id as usize, 200.0 + id as f64))).unwrap());
    }
    stream.write_all(&batch).unwrap();
    for id in 0..100u64 {
        let resp = read_response(&mut stream).unwrap();
        assert_eq!(resp.request_id, id + 1);
        assert!((0.0..=1.0).contains(&resp.p_gap));
    }
    server.shutdown();
}

#[test]
fn remote_verdict_matches_in_process_model() {
    let params = small_heavy();
    let fc = FeatureConfig::default();
    let server = spawn_server(params.clone(), &fc, "127.0.0.1:0", Duration::ZERO).unwrap();
    let mut client = RemoteProvider::connect(server.addr()).unwrap();
    let pcm = tone(16000, 330.0);
    let remote = client.request(7, &pcm).unwrap();
    let frames = MelExtractor::new(fc.clone()).unwrap().extract(&pcm).into_frames();
    let (_, p_gap) = heavy_forward_batch(&[frames.view()], &params, fc.floor_value()).unwrap()[0];
    assert_eq!(remote.p_gap, p_gap);
    server.shutdown();
}

#[test]
fn latency_is_injected() {
    let server = spawn_server(small_heavy(), &FeatureConfig::default(), "127.0.0.1:0", Duration::from_millis(50)).unwrap();
    let mut client = RemoteProvider::connect(server.addr()).unwrap();
    let start = Instant::now();
    client.request(1, &tone(3200, 250.0)).unwrap();
    assert!(start.elapsed() >= Duration::from_millis(50));
    server.shutdown();
}

#[test]
fn malformed_requests_close_the_connection() {
    let server = spawn_server(small_heavy(), &FeatureConfig::default(), "127.0.0.1:0", Duration::ZERO).unwrap();

    // zero samples
    let mut stream = TcpStream::connect(server.addr()).unwrap();
    stream.write_all(&encode_request(&VerdictRequest::new(9, vec![])).unwrap()).unwrap();
    let mut buf = [0u8; RESPONSE_LEN];
    stream.read_exact(&mut buf).unwrap();
    assert_eq!(u64::from_le_bytes(buf[5..13].try_into().unwrap()), 0);
    assert!(matches!(decode_response(&buf), Err(WireError::Rejected)));
    let mut rest = Vec::new();
    assert_eq!(stream.read_to_end(&mut rest).unwrap(), 0);

    // bad magic
    let mut stream = TcpStream::connect(server.addr()).unwrap();
    let mut bytes = encode_request(&VerdictRequest::new(3, tone(2000, 100.0))).unwrap();
    bytes[0] = 0;
    stream.write_all(&bytes).unwrap();
    stream.read_exact(&mut buf).unwrap();
    assert!(matches!(decode_response(&buf), Err(WireError::Rejected)));

    // a fresh connection still works
    let mut client = RemoteProvider::connect(server.addr()).unwrap();
    assert!(client.request(4, &tone(2000, 100.0)).is_ok());
    server.shutdown();
}
