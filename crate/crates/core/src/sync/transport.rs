//! Request/response transports: persistent TCP and test doubles plug in here.

use std::io;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use super::protocol::{read_frame, write_message, FrameError, Request, Response};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("server unreachable: {0}")]
    Unreachable(String),
    #[error("request timed out")]
    Timeout,
    #[error("connection closed by peer")]
    Closed,
    #[error("frame of {0} bytes exceeds limit")]
    Oversized(usize),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait Transport {
    /// Sends one request and waits at most `timeout` for its response.
    fn request(&mut self, req: &Request, timeout: Duration) -> Result<Response, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn request(&mut self, req: &Request, timeout: Duration) -> Result<Response, TransportError> {
        (**self).request(req, timeout)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn request(&mut self, req: &Request, timeout: Duration) -> Result<Response, TransportError> {
        (**self).request(req, timeout)
    }
}

/// Persistent connection, opened lazily and reopened after any failure.
pub struct TcpTransport {
    addr: String,
    conn: Option<TcpStream>,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            conn: None,
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn resolve(&self) -> Result<Vec<SocketAddr>, TransportError> {
        let addrs: Vec<SocketAddr> = self
            .addr
            .to_socket_addrs()
            .map_err(|e| TransportError::Unreachable(format!("{}: {e}", self.addr)))?
            .collect();
        if addrs.is_empty() {
            return Err(TransportError::Unreachable(format!("{}: no addresses", self.addr)));
        }
        Ok(addrs)
    }

    fn connect(&mut self, timeout: Duration) -> Result<&mut TcpStream, TransportError> {
        if self.conn.is_none() {
            let mut last = None;
            for a in self.resolve()? {
                match TcpStream::connect_timeout(&a, timeout) {
                    Ok(s) => {
                        s.set_nodelay(true)?;
                        self.conn = Some(s);
                        break;
                    }
                    Err(e) => last = Some(e),
                }
            }
            if self.conn.is_none() {
                let msg = last.map(|e| e.to_string()).unwrap_or_default();
                return Err(TransportError::Unreachable(format!("{}: {msg}", self.addr)));
            }
        }
        Ok(self.conn.as_mut().expect("connected above"))
    }

    fn exchange(&mut self, req: &Request, timeout: Duration) -> Result<Response, TransportError> {
        let stream = self.connect(timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        write_message(stream, req).map_err(map_io)?;
        let body = read_frame(stream).map_err(|e| match e {
            FrameError::Closed => TransportError::Closed,
            FrameError::Oversized(n) => TransportError::Oversized(n),
            FrameError::Io(e) => map_io(e),
        })?;
        serde_json::from_slice(&body).map_err(|e| TransportError::Protocol(e.to_string()))
    }
}

fn map_io(e: io::Error) -> TransportError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout,
        _ => TransportError::Io(e),
    }
}

impl Transport for TcpTransport {
    fn request(&mut self, req: &Request, timeout: Duration) -> Result<Response, TransportError> {
        let out = self.exchange(req, timeout);
        if out.is_err() {
            // A timed-out or broken stream may hold a late response; start fresh.
            self.conn = None;
        }
        out
    }
}
