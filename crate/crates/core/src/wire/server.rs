use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::{encode_response, error_response, read_request, VerdictRequest, VerdictResponse, WireError};
use crate::audio::{FeatureConfig, MelExtractor};
use crate::nn::{heavy_forward_batch, ArchKind, Params, MIN_WINDOW_FRAMES};

/// Environment variable holding an artificial per-request delay in ms.
pub const LATENCY_ENV: &str = "ETD_SERVER_LATENCY_MS";

struct Shared {
    params: Params,
    extractor: MelExtractor,
    latency: Duration,
    stop: AtomicBool,
}

/// A running server; dropping it without [`ServerHandle::shutdown`] leaves
/// the accept thread running.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Stops accepting connections. Open connections finish on their own.
    pub fn shutdown(mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Binds `addr` and answers requests on a background thread, one thread per
/// connection.
pub fn spawn_server(
    params: Params,
    features: &FeatureConfig,
    addr: &str,
    latency: Duration,
) -> Result<ServerHandle, WireError> {
    params.expect_kind(ArchKind::Heavy).map_err(|e| WireError::Server(e.to_string()))?;
    let extractor = MelExtractor::new(features.clone()).map_err(|e| WireError::Server(e.to_string()))?;
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared { params, extractor, latency, stop: AtomicBool::new(false) });
    info!("listening on {addr} (latency {} ms)", latency.as_millis());
    let accept_shared = Arc::clone(&shared);
    let accept = thread::spawn(move || {
        for conn in listener.incoming() {
            if accept_shared.stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let shared = Arc::clone(&accept_shared);
                    thread::spawn(move || handle_connection(stream, &shared));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    });
    Ok(ServerHandle { addr, shared, accept: Some(accept) })
}

/// Serves until the process is killed.
pub fn serve(params: Params, features: &FeatureConfig, addr: &str, latency: Duration) -> Result<(), WireError> {
    spawn_server(params, features, addr, latency)?.join();
    Ok(())
}

fn classify(shared: &Shared, req: &VerdictRequest) -> Result<VerdictResponse, WireError> {
    let frames = shared.extractor.extract(&req.pcm).into_frames();
    if frames.nrows() < MIN_WINDOW_FRAMES {
        return Err(WireError::TooShort(req.pcm.len()));
    }
    let floor = shared.extractor.config().floor_value();
    let (_, p_gap) = heavy_forward_batch(&[frames.view()], &shared.params, floor)
        .map_err(|e| WireError::Server(e.to_string()))?[0];
    Ok(VerdictResponse::from_p_gap(req.request_id, p_gap))
}

fn handle_connection(stream: TcpStream, shared: &Shared) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let Ok(write_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let mut writer = BufWriter::new(write_half);
    loop {
        let outcome = read_request(&mut reader).and_then(|req| match req {
            Some(req) => classify(shared, &req).map(Some),
            None => Ok(None),
        });
        match outcome {
            Ok(Some(resp)) => {
                if !shared.latency.is_zero() {
                    thread::sleep(shared.latency);
                }
                debug!("request {} -> {} ({:.3})", resp.request_id, resp.verdict, resp.p_gap);
                if writer.write_all(&encode_response(&resp)).and_then(|_| writer.flush()).is_err() {
                    break;
                }
            }
            Ok(None) => break,
            Err(e) => {
                warn!("closing connection from {peer:?}: {e}");
                let _ = writer.write_all(&error_response()).and_then(|_| writer.flush());
                linger(&mut reader);
                break;
            }
        }
    }
    let _ = writer.get_ref().shutdown(Shutdown::Both);
}

/// Half-closes and discards pending input so the peer reads the error
/// response before the socket is reset.
fn linger(reader: &mut BufReader<TcpStream>) {
    let stream = reader.get_ref();
    let _ = stream.shutdown(Shutdown::Write);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let _ = io::copy(reader, &mut io::sink());
}
