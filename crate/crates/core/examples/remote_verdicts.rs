//! Starts a verdict server on a loopback port and queries it over TCP.

use std::time::{Duration, Instant};

use etd_core::audio::{synth_utterance, FeatureConfig, TerminalContour, UtteranceSpec};
use etd_core::nn::{Arch, HeavyArch, Params};
use etd_core::wire::{encode_request, spawn_server, RemoteProvider, VerdictRequest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let heavy = Params::init(Arch::Heavy(HeavyArch { hidden: 16, layers: 1, ..HeavyArch::default() }), 7);
    let server = spawn_server(heavy, &FeatureConfig::default(), "127.0.0.1:0", Duration::from_millis(20))?;
    println!("serving on {}", server.addr());

    let mut client = RemoteProvider::connect(server.addr())?;
    for (id, contour) in [(1, TerminalContour::Falling), (2, TerminalContour::Level)] {
        let spec = UtteranceSpec { duration_s: 1.5, base_f0: 180.0, terminal_contour: contour, amplitude: 0.4, seed: id };
        let mut pcm = synth_utterance(&spec)?.into_samples();
        pcm.extend(std::iter::repeat_n(0, 8000));
        let bytes = encode_request(&VerdictRequest::new(id, pcm.clone()))?.len();
        let start = Instant::now();
        let verdict = client.request(id, &pcm)?;
        println!(
            "request {id} ({bytes} bytes, {contour:?} contour): {} p_gap={:.3} in {:.0} ms",
            verdict.state,
            verdict.p_gap,
            start.elapsed().as_secs_f64() * 1000.0
        );
    }
    server.shutdown();
    Ok(())
}
