//! Serving broker sessions over byte streams.
//!
//! [`serve_duplex`] runs the frame protocol over any `Read`/`Write` pair, so
//! the same code path backs TCP sockets and the in-process [`duplex_pair`]
//! transport. The reader thread handles client frames and answers acks
//! inline (acks hold request order per connection); a writer thread pushes
//! MSG deliveries and the final CLOSE through the same shared writer.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use super::broker::{Broker, BusError, CloseReason, Session};
use super::wire::{code, read_frame, write_frame, Frame, WireError};

/// How long the writer blocks waiting for deliveries before re-checking
/// session liveness.
const WRITER_POLL: Duration = Duration::from_millis(25);

/// Serve one client connection over a read/write pair. Blocks until the
/// peer disconnects or the session stops being live. The first frame must
/// be CONNECT; anything else gets CLOSE(PROTOCOL_ERROR).
pub fn serve_duplex<R, W>(broker: Broker, mut reader: R, writer: W) -> Result<(), WireError>
where
    R: Read,
    W: Write + Send + 'static,
{
    let writer = Arc::new(Mutex::new(writer));
    let session = match read_frame(&mut reader)? {
        Some(Frame::Connect { client_id, token }) => match broker.connect(&client_id, &token) {
            Ok(session) => {
                send(&writer, &Frame::ConnAck { code: code::OK })?;
                session
            }
            Err(BusError::AuthFailure(_)) => {
                send(&writer, &Frame::ConnAck { code: code::AUTH_FAILURE })?;
                return Ok(());
            }
            Err(_) => {
                send(&writer, &Frame::ConnAck { code: code::PROTOCOL_ERROR })?;
                return Ok(());
            }
        },
        Some(_) => {
            send(&writer, &Frame::Close { code: code::PROTOCOL_ERROR })?;
            return Ok(());
        }
        None => return Ok(()),
    };

    let writer_session = session.clone();
    let writer_shared = Arc::clone(&writer);
    let writer_handle = thread::spawn(move || writer_loop(writer_session, writer_shared));

    let result = reader_loop(&session, &mut reader, &writer);
    // EOF or a socket error ends the connection; closing the session makes
    // the writer thread send its CLOSE and exit.
    session.close();
    let _ = writer_handle.join();
    result
}

fn send<W: Write>(writer: &Arc<Mutex<W>>, frame: &Frame) -> Result<(), WireError> {
    let mut w = writer.lock().expect("writer lock");
    write_frame(&mut *w, frame)
}

fn reader_loop<R: Read, W: Write>(
    session: &Session,
    reader: &mut R,
    writer: &Arc<Mutex<W>>,
) -> Result<(), WireError> {
    loop {
        let frame = match read_frame(reader)? {
            Some(f) => f,
            None => return Ok(()),
        };
        match frame {
            Frame::Pub { topic, payload } => {
                let bytes = Frame::decode_payload(&payload)?;
                let (msg_id, status) = match session.publish(&topic, &bytes) {
                    Ok(ack) => (ack.msg_id, code::OK),
                    Err(e) => (0, bus_error_code(&e)),
                };
                send(writer, &Frame::PubAck { msg_id, code: status })?;
                if status == code::SUPERSEDED || status == code::NOT_CONNECTED {
                    return Ok(());
                }
            }
            Frame::Sub { pattern } => {
                let status = match session.subscribe(&pattern) {
                    Ok(()) => code::OK,
                    Err(e) => bus_error_code(&e),
                };
                send(writer, &Frame::SubAck { pattern, code: status })?;
                if status == code::SUPERSEDED || status == code::NOT_CONNECTED {
                    return Ok(());
                }
            }
            Frame::PubAck { msg_id, .. } => {
                // Client acking a MSG delivery.
                let _ = session.ack(msg_id);
            }
            Frame::Ping => send(writer, &Frame::Pong)?,
            Frame::Close { .. } => return Ok(()),
            Frame::Connect { .. }
            | Frame::ConnAck { .. }
            | Frame::SubAck { .. }
            | Frame::Msg { .. }
            | Frame::Pong => {
                send(writer, &Frame::Close { code: code::PROTOCOL_ERROR })?;
                return Ok(());
            }
        }
    }
}

fn writer_loop<W: Write>(session: Session, writer: Arc<Mutex<W>>) {
    loop {
        match session.recv_timeout(WRITER_POLL) {
            Ok(Some(delivery)) => {
                let frame = Frame::Msg {
                    msg_id: delivery.message.msg_id,
                    topic: delivery.message.topic.path(),
                    payload: Frame::encode_payload(&delivery.message.payload),
                    publisher_id: delivery.message.publisher_id.clone(),
                    ts: delivery.message.ts,
                };
                if send(&writer, &frame).is_err() {
                    return;
                }
            }
            Ok(None) => {}
            Err(_) => {
                let reason = session.close_reason().unwrap_or(CloseReason::Requested);
                let status = match reason {
                    CloseReason::Superseded => code::SUPERSEDED,
                    CloseReason::Overflow => code::OVERFLOW,
                    CloseReason::Requested => code::OK,
                };
                let _ = send(&writer, &Frame::Close { code: status });
                return;
            }
        }
    }
}

fn bus_error_code(e: &BusError) -> u32 {
    match e {
        BusError::AuthFailure(_) => code::AUTH_FAILURE,
        BusError::NotConnected => code::NOT_CONNECTED,
        BusError::Superseded => code::SUPERSEDED,
        BusError::InvalidTopic(_) | BusError::InvalidPattern(_) => code::INVALID_TOPIC,
    }
}

// ---------------------------------------------------------------------------
// In-process byte pipe
// ---------------------------------------------------------------------------

#[derive(Default)]
struct PipeState {
    buf: VecDeque<u8>,
    closed: bool,
}

struct PipeInner {
    state: Mutex<PipeState>,
    ready: Condvar,
}

/// Read end of an in-process byte stream.
pub struct PipeReader {
    inner: Arc<PipeInner>,
}

/// Write end of an in-process byte stream.
pub struct PipeWriter {
    inner: Arc<PipeInner>,
}

/// Create a unidirectional in-process byte pipe.
pub fn pipe() -> (PipeWriter, PipeReader) {
    let inner = Arc::new(PipeInner {
        state: Mutex::new(PipeState::default()),
        ready: Condvar::new(),
    });
    (
        PipeWriter {
            inner: Arc::clone(&inner),
        },
        PipeReader { inner },
    )
}

/// A bidirectional in-process transport: returns (client end, server end),
/// each a (reader, writer) pair carrying the same frames as TCP.
pub fn duplex_pair() -> ((PipeReader, PipeWriter), (PipeReader, PipeWriter)) {
    let (client_tx, server_rx) = pipe();
    let (server_tx, client_rx) = pipe();
    ((client_rx, client_tx), (server_rx, server_tx))
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if out.is_empty() {
            return Ok(0);
        }
        let mut state = self.inner.state.lock().expect("pipe lock");
        loop {
            if !state.buf.is_empty() {
                let n = out.len().min(state.buf.len());
                for slot in out.iter_mut().take(n) {
                    *slot = state.buf.pop_front().expect("non-empty");
                }
                return Ok(n);
            }
            if state.closed {
                return Ok(0);
            }
            state = self.inner.ready.wait(state).expect("pipe lock");
        }
    }
}

impl Write for PipeWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let mut state = self.inner.state.lock().expect("pipe lock");
        if state.closed {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "pipe closed"));
        }
        state.buf.extend(data.iter().copied());
        self.inner.ready.notify_all();
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Drop for PipeWriter {
    fn drop(&mut self) {
        let mut state = self.inner.state.lock().expect("pipe lock");
        state.closed = true;
        self.inner.ready.notify_all();
    }
}

impl Drop for PipeReader {
    fn drop(&mut self) {
        let mut state = self.inner.state.lock().expect("pipe lock");
        state.closed = true;
        self.inner.ready.notify_all();
    }
}
