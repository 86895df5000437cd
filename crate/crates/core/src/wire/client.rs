use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::{read_response, write_request, VerdictRequest, WireError};
use crate::cascade::{CascadeError, Verdict, VerdictProvider, Window};

/// Sends each escalation window's audio to a verdict server.
pub struct RemoteProvider {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl RemoteProvider {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = BufWriter::new(stream.try_clone()?);
        Ok(Self { reader: BufReader::new(stream), writer })
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<(), WireError> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        Ok(())
    }

    pub fn request(&mut self, id: u64, pcm: &[i16]) -> Result<Verdict, WireError> {
        write_request(&mut self.writer, &VerdictRequest::new(id, pcm.to_vec()))?;
        let resp = read_response(&mut self.reader)?;
        if resp.request_id != id {
            return Err(WireError::IdMismatch { want: id, got: resp.request_id });
        }
        Ok(Verdict { state: resp.verdict, p_gap: resp.p_gap })
    }
}

impl VerdictProvider for RemoteProvider {
    fn verdict(&mut self, id: u64, window: &Window) -> Result<Verdict, CascadeError> {
        if window.pcm.is_empty() {
            return Err(CascadeError::Provider("window carries no audio".into()));
        }
        self.request(id, &window.pcm).map_err(|e| CascadeError::Provider(Box::new(e)))
    }
}
