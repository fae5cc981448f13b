//! Client side of the wire protocol: connections to external backends and a pool of them.

use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::{Condvar, Mutex};

use log::{debug, warn};

use super::protocol::{recv, send, Hello, Message, MsgType, ProtocolError};
use super::{Concurrency, SegmenterBackend};
use crate::error::{Error, Result};
use crate::raster::{Image, ScoreMap};
use crate::taxonomy::Task;

/// Where an external backend lives: `tcp://host:port` or `exec:program arg ...` (stdio).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Exec { program: String, args: Vec<String> },
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err(Error::Config("tcp endpoint is missing host:port".into()));
            }
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts
                .next()
                .ok_or_else(|| Error::Config("exec endpoint is missing a program".into()))?;
            Ok(Endpoint::Exec {
                program,
                args: parts.collect(),
            })
        } else {
            Err(Error::Config(format!(
                "endpoint `{s}` must start with tcp:// or exec:"
            )))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
            Endpoint::Exec { program, args } => {
                write!(f, "exec:{program}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
        }
    }
}

type BoxReader = Box<dyn Read + Send>;
type BoxWriter = Box<dyn Write + Send>;

/// A single request-reply connection. After a protocol violation or I/O failure the
/// connection refuses further requests.
pub struct RemoteConnection {
    reader: BufReader<BoxReader>,
    writer: BufWriter<BoxWriter>,
    child: Option<Child>,
    server: Hello,
    usable: bool,
}

impl fmt::Debug for RemoteConnection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteConnection")
            .field("server", &self.server)
            .field("usable", &self.usable)
            .finish()
    }
}

impl RemoteConnection {
    pub fn connect(endpoint: &Endpoint, want: &Hello) -> Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| {
                    Error::from(ProtocolError::ConnectionLost(e))
                })?;
                stream.set_nodelay(true).ok();
                let read_half = stream
                    .try_clone()
                    .map_err(|e| Error::from(ProtocolError::ConnectionLost(e)))?;
                Self::handshake(Box::new(read_half), Box::new(stream), None, want)
            }
            Endpoint::Exec { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::from(ProtocolError::ConnectionLost(e)))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::handshake(Box::new(stdout), Box::new(stdin), Some(child), want)
            }
        }
    }

    /// Runs the handshake over an arbitrary byte stream pair.
    pub fn from_streams(reader: BoxReader, writer: BoxWriter, want: &Hello) -> Result<Self> {
        Self::handshake(reader, writer, None, want)
    }

    fn handshake(reader: BoxReader, writer: BoxWriter, child: Option<Child>, want: &Hello) -> Result<Self> {
        let mut conn = RemoteConnection {
            reader: BufReader::new(reader),
            writer: BufWriter::new(writer),
            child,
            server: want.clone(),
            usable: false,
        };
        send(&mut conn.writer, &Message::Hello(want.clone()))?;
        let ack = match recv(&mut conn.reader)? {
            Message::HelloAck(h) => h,
            Message::Error(text) => return Err(ProtocolError::Remote(text).into()),
            other => {
                return Err(ProtocolError::Unexpected {
                    expected: "HELLO_ACK",
                    got: other.msg_type(),
                }
                .into())
            }
        };
        if ack.task != want.task {
            return Err(ProtocolError::TaskMismatch {
                expected: want.task.clone(),
                got: ack.task,
            }
            .into());
        }
        if ack.num_classes != want.num_classes {
            return Err(ProtocolError::ClassMismatch {
                msg_type: MsgType::HelloAck,
                expected: want.num_classes as usize,
                got: ack.num_classes as usize,
            }
            .into());
        }
        debug!("handshake ok: {ack:?}");
        conn.server = ack;
        conn.usable = true;
        Ok(conn)
    }

    pub fn server(&self) -> &Hello {
        &self.server
    }

    pub fn is_usable(&self) -> bool {
        self.usable
    }

    pub fn infer(&mut self, img: &Image) -> Result<ScoreMap, ProtocolError> {
        if !self.usable {
            return Err(ProtocolError::Unusable);
        }
        let max = self.server.max_tile;
        if max > 0 && (img.width > max || img.height > max) {
            return Err(ProtocolError::TileTooLarge {
                w: img.width,
                h: img.height,
                max_tile: max,
            });
        }
        let result = self.exchange(img);
        match &result {
            // The server stays alive after an ERROR reply.
            Ok(_) | Err(ProtocolError::Remote(_)) => {}
            Err(_) => self.usable = false,
        }
        result
    }

    fn exchange(&mut self, img: &Image) -> Result<ScoreMap, ProtocolError> {
        send(&mut self.writer, &Message::Infer(img.clone()))?;
        match recv(&mut self.reader)? {
            Message::Scores(map) => {
                if map.width != img.width || map.height != img.height {
                    return Err(ProtocolError::DimensionMismatch {
                        msg_type: MsgType::Scores,
                        want_w: img.width,
                        want_h: img.height,
                        got_w: map.width,
                        got_h: map.height,
                    });
                }
                if map.num_classes != self.server.num_classes as usize {
                    return Err(ProtocolError::ClassMismatch {
                        msg_type: MsgType::Scores,
                        expected: self.server.num_classes as usize,
                        got: map.num_classes,
                    });
                }
                Ok(map)
            }
            Message::Error(text) => Err(ProtocolError::Remote(text)),
            other => Err(ProtocolError::Unexpected {
                expected: "SCORES",
                got: other.msg_type(),
            }),
        }
    }

    /// Sends SHUTDOWN and reaps a child process if there is one.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        if self.usable {
            let _ = send(&mut self.writer, &Message::Shutdown);
            self.usable = false;
        }
        if let Some(mut child) = self.child.take() {
            // Closing stdin lets a server exit even if it missed SHUTDOWN.
            let stdin = std::mem::replace(&mut self.writer, BufWriter::new(Box::new(std::io::sink())));
            drop(stdin);
            match child.wait() {
                Ok(status) if !status.success() => warn!("backend process exited with {status}"),
                Err(e) => warn!("could not reap backend process: {e}"),
                _ => {}
            }
        }
    }
}

impl Drop for RemoteConnection {
    fn drop(&mut self) {
        self.close();
    }
}

/// Fixed-size pool of connections; each request checks out one connection exclusively.
#[derive(Debug)]
pub struct ConnectionPool {
    idle: Mutex<PoolState>,
    ready: Condvar,
}

#[derive(Debug)]
struct PoolState {
    idle: Vec<RemoteConnection>,
    live: usize,
}

impl ConnectionPool {
    pub fn new(conns: Vec<RemoteConnection>) -> Self {
        let live = conns.len();
        ConnectionPool {
            idle: Mutex::new(PoolState { idle: conns, live }),
            ready: Condvar::new(),
        }
    }

    pub fn live(&self) -> usize {
        self.idle.lock().unwrap().live
    }

    pub fn with_connection<T>(
        &self,
        f: impl FnOnce(&mut RemoteConnection) -> Result<T, ProtocolError>,
    ) -> Result<T, ProtocolError> {
        let mut conn = {
            let mut state = self.idle.lock().unwrap();
            loop {
                if let Some(c) = state.idle.pop() {
                    break c;
                }
                if state.live == 0 {
                    return Err(ProtocolError::Unusable);
                }
                state = self.ready.wait(state).unwrap();
            }
        };
        let out = f(&mut conn);
        let mut state = self.idle.lock().unwrap();
        if conn.is_usable() {
            state.idle.push(conn);
        } else {
            state.live -= 1;
            drop(conn);
        }
        self.ready.notify_one();
        out
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    name: String,
    task: Task,
    num_classes: usize,
    max_tile: u32,
    pool: ConnectionPool,
}

impl RemoteBackend {
    /// Opens `pool_size` connections to `endpoint` and handshakes each one.
    pub fn connect(
        name: impl Into<String>,
        endpoint: &Endpoint,
        task: Task,
        num_classes: usize,
        max_tile: u32,
        pool_size: usize,
    ) -> Result<Self> {
        let name = name.into();
        let want = Hello {
            task: task.as_str().to_string(),
            num_classes: num_classes as u32,
            max_tile,
        };
        let conns = (0..pool_size.max(1))
            .map(|i| {
                RemoteConnection::connect(endpoint, &want)
                    .map_err(|e| e.in_backend(&name, format!("connect #{i} to {endpoint}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_connections(name, task, num_classes, conns))
    }

    pub fn from_connections(
        name: impl Into<String>,
        task: Task,
        num_classes: usize,
        conns: Vec<RemoteConnection>,
    ) -> Self {
        let max_tile = conns.iter().map(|c| c.server().max_tile).min().unwrap_or(0);
        RemoteBackend {
            name: name.into(),
            task,
            num_classes,
            max_tile,
            pool: ConnectionPool::new(conns),
        }
    }

    pub fn live_connections(&self) -> usize {
        self.pool.live()
    }
}

impl SegmenterBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn task(&self) -> Task {
        self.task
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn concurrency(&self) -> Concurrency {
        if self.pool.live() > 1 {
            Concurrency::Parallel
        } else {
            Concurrency::Exclusive
        }
    }

    fn max_tile(&self) -> Option<u32> {
        (self.max_tile > 0).then_some(self.max_tile)
    }

    fn infer(&self, tile: &Image) -> Result<ScoreMap> {
        tile.check_shape()?;
        Ok(self.pool.with_connection(|c| c.infer(tile))?)
    }
}

/// Convenience wrapper for a single already-connected stream.
pub fn remote_infer(conn: &mut RemoteConnection, img: &Image) -> Result<ScoreMap> {
    img.check_shape()?;
    Ok(conn.infer(img)?)
}
