//! TCP server and client for the broker wire protocol.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::broker::Broker;
use super::transport::serve_duplex;
use super::wire::{code, read_frame, write_frame, Frame, WireError};

/// A running TCP broker endpoint. Dropping the handle leaves the server
/// running; call [`ServerHandle::shutdown`] to stop accepting.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting new connections. Existing connections run until the
    /// peer disconnects.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Poke the accept loop so it notices the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

/// Bind `addr` and serve broker sessions; one thread per connection.
pub fn serve_tcp(broker: Broker, addr: &str) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let accept_thread = thread::spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(_) => continue,
            };
            let broker = broker.clone();
            thread::spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(r) => r,
                    Err(_) => return,
                };
                let _ = serve_duplex(broker, reader, stream);
            });
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        accept_thread: Some(accept_thread),
    })
}

/// Errors a wire client can hit.
#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("wire: {0}")]
    Wire(#[from] WireError),
    #[error("broker refused: code {0}")]
    Refused(u32),
    #[error("connection closed: code {0}")]
    Closed(u32),
    #[error("unexpected frame: {0}")]
    Unexpected(&'static str),
}

/// An inbound message as seen by a [`WireClient`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundMsg {
    pub msg_id: u64,
    pub topic: String,
    pub payload: Vec<u8>,
    pub publisher_id: String,
    pub ts: u64,
}

/// Blocking client for the TCP wire protocol. Frames are processed on the
/// caller's thread: request methods read until their ack arrives, queuing
/// any MSG frames seen on the way for [`WireClient::next_msg`].
pub struct WireClient {
    stream: TcpStream,
    queued: std::collections::VecDeque<InboundMsg>,
}

impl WireClient {
    /// Connect over TCP and run the CONNECT/CONNACK handshake.
    pub fn connect(addr: &str, client_id: &str, token: &str) -> Result<WireClient, ClientError> {
        let mut stream = TcpStream::connect(addr)?;
        write_frame(
            &mut stream,
            &Frame::Connect {
                client_id: client_id.to_string(),
                token: token.to_string(),
            },
        )?;
        match read_frame(&mut stream)? {
            Some(Frame::ConnAck { code: c }) if c == code::OK => Ok(WireClient {
                stream,
                queued: std::collections::VecDeque::new(),
            }),
            Some(Frame::ConnAck { code: c }) => Err(ClientError::Refused(c)),
            Some(_) => Err(ClientError::Unexpected("wanted CONNACK")),
            None => Err(ClientError::Closed(code::PROTOCOL_ERROR)),
        }
    }

    /// Subscribe and wait for the SUBACK.
    pub fn subscribe(&mut self, pattern: &str) -> Result<(), ClientError> {
        write_frame(
            &mut self.stream,
            &Frame::Sub {
                pattern: pattern.to_string(),
            },
        )?;
        loop {
            match self.read_some()? {
                Frame::SubAck { code: c, .. } if c == code::OK => return Ok(()),
                Frame::SubAck { code: c, .. } => return Err(ClientError::Refused(c)),
                other => self.absorb(other)?,
            }
        }
    }

    /// Publish and wait for the PUBACK; returns the broker-assigned msg id.
    pub fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<u64, ClientError> {
        write_frame(&mut self.stream, &Frame::pub_from_bytes(topic, payload))?;
        loop {
            match self.read_some()? {
                Frame::PubAck { msg_id, code: c } if c == code::OK => return Ok(msg_id),
                Frame::PubAck { code: c, .. } => return Err(ClientError::Refused(c)),
                other => self.absorb(other)?,
            }
        }
    }

    /// Next delivered message, acking it. Blocks up to `timeout`;
    /// `Ok(None)` on timeout.
    pub fn next_msg(&mut self, timeout: Duration) -> Result<Option<InboundMsg>, ClientError> {
        if let Some(msg) = self.queued.pop_front() {
            self.ack(msg.msg_id)?;
            return Ok(Some(msg));
        }
        self.stream.set_read_timeout(Some(timeout))?;
        let result = match read_frame(&mut self.stream) {
            Ok(Some(frame)) => {
                self.absorb(frame)?;
                Ok(self.queued.pop_front())
            }
            Ok(None) => Err(ClientError::Closed(code::OK)),
            Err(WireError::Io(e))
                if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut =>
            {
                Ok(None)
            }
            Err(e) => Err(e.into()),
        };
        self.stream.set_read_timeout(None)?;
        match result {
            Ok(Some(msg)) => {
                self.ack(msg.msg_id)?;
                Ok(Some(msg))
            }
            other => other,
        }
    }

    /// Liveness probe; round-trips a PING.
    pub fn ping(&mut self) -> Result<(), ClientError> {
        write_frame(&mut self.stream, &Frame::Ping)?;
        loop {
            match self.read_some()? {
                Frame::Pong => return Ok(()),
                other => self.absorb(other)?,
            }
        }
    }

    /// Orderly close; the broker keeps this client's queued messages.
    pub fn close(mut self) -> Result<(), ClientError> {
        write_frame(&mut self.stream, &Frame::Close { code: code::OK })?;
        Ok(())
    }

    fn ack(&mut self, msg_id: u64) -> Result<(), ClientError> {
        write_frame(
            &mut self.stream,
            &Frame::PubAck {
                msg_id,
                code: code::OK,
            },
        )?;
        Ok(())
    }

    fn read_some(&mut self) -> Result<Frame, ClientError> {
        match read_frame(&mut self.stream)? {
            Some(f) => Ok(f),
            None => Err(ClientError::Closed(code::OK)),
        }
    }

    /// File away frames that arrive while waiting for a specific ack.
    fn absorb(&mut self, frame: Frame) -> Result<(), ClientError> {
        match frame {
            Frame::Msg {
                msg_id,
                topic,
                payload,
                publisher_id,
                ts,
            } => {
                let payload = Frame::decode_payload(&payload)?;
                self.queued.push_back(InboundMsg {
                    msg_id,
                    topic,
                    payload,
                    publisher_id,
                    ts,
                });
                Ok(())
            }
            Frame::Close { code: c } => Err(ClientError::Closed(c)),
            Frame::Pong | Frame::Ping => Ok(()),
            _ => Err(ClientError::Unexpected("out-of-order ack")),
        }
    }
}
