//! Server side of the wire protocol, wrapping any [`SegmenterBackend`].
//!
//! Used for loopback self-tests (with [`ConstantBackend`](super::ConstantBackend) as the
//! echo model) and to expose built-in backends to other processes.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use log::{debug, warn};

use super::protocol::{read_frame, send, Hello, Message, ProtocolError};
use super::SegmenterBackend;

/// Serves one connection until SHUTDOWN or end of stream.
///
/// Payload-level failures (bad JSON, wrong sizes, model errors) are answered with an ERROR
/// frame and the loop continues. A corrupt frame header desynchronises the stream, so it
/// is answered with ERROR and then returned as an error.
pub fn serve<R: Read, W: Write>(
    backend: &dyn SegmenterBackend,
    max_tile: u32,
    reader: R,
    writer: W,
) -> Result<(), ProtocolError> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let mut greeted = false;
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(ProtocolError::ConnectionLost(e)) => return Err(ProtocolError::ConnectionLost(e)),
            Err(e) => {
                let _ = send(&mut writer, &Message::Error(e.to_string()));
                return Err(e);
            }
        };
        let reply = match Message::from_frame(&frame) {
            Err(e) => Message::Error(e.to_string()),
            Ok(Message::Hello(h)) => {
                if h.task != backend.task().as_str() {
                    Message::Error(format!(
                        "task mismatch: client wants `{}`, server runs `{}`",
                        h.task,
                        backend.task()
                    ))
                } else if h.num_classes as usize != backend.num_classes() {
                    Message::Error(format!(
                        "num_classes mismatch: client expects {}, model has {}",
                        h.num_classes,
                        backend.num_classes()
                    ))
                } else {
                    greeted = true;
                    Message::HelloAck(Hello {
                        task: backend.task().as_str().to_string(),
                        num_classes: backend.num_classes() as u32,
                        max_tile,
                    })
                }
            }
            Ok(Message::Infer(img)) => {
                if !greeted {
                    Message::Error("INFER before HELLO".into())
                } else if max_tile > 0 && (img.width > max_tile || img.height > max_tile) {
                    Message::Error(format!(
                        "tile {}x{} exceeds max_tile {max_tile}",
                        img.width, img.height
                    ))
                } else {
                    match backend.infer(&img) {
                        Ok(scores) => Message::Scores(scores),
                        Err(e) => Message::Error(format!("model failure: {e}")),
                    }
                }
            }
            Ok(Message::Shutdown) => {
                debug!("{}: shutdown requested", backend.name());
                return Ok(());
            }
            Ok(other) => Message::Error(format!("unexpected {} from client", other.msg_type())),
        };
        send(&mut writer, &reply)?;
    }
}

/// Accepts connections on `listener`, serving each on its own thread. Stops after
/// `max_connections` connections when given.
pub fn serve_listener(
    listener: TcpListener,
    backend: Arc<dyn SegmenterBackend>,
    max_tile: u32,
    max_connections: Option<usize>,
) -> std::io::Result<()> {
    let mut workers = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let backend = Arc::clone(&backend);
        workers.push(thread::spawn(move || {
            let read_half = match stream.try_clone() {
                Ok(s) => s,
                Err(e) => return warn!("cannot split socket: {e}"),
            };
            if let Err(e) = serve(backend.as_ref(), max_tile, read_half, stream) {
                warn!("connection ended with error: {e}");
            }
        }));
        if max_connections.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

/// Binds an ephemeral loopback port and serves `max_connections` connections in the background.
pub fn spawn_loopback(
    backend: Arc<dyn SegmenterBackend>,
    max_tile: u32,
    max_connections: usize,
) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let handle = thread::spawn(move || serve_listener(listener, backend, max_tile, Some(max_connections)));
    Ok((addr, handle))
}
