//! Streaming generation server: one thread per connection, NDJSON over TCP
//! or, when the first line is an HTTP `GET`, WebSocket text frames.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use gesture_core::Error;

use crate::engine::Engine;
use crate::protocol::{error_message, parse_incoming, skeleton_message, to_line, Incoming};
use crate::ws;

pub struct Server {
    listener: TcpListener,
    engine: Arc<Engine>,
    active: Arc<AtomicUsize>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, engine: Arc<Engine>) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            engine,
            active: Arc::new(AtomicUsize::new(0)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Number of connections currently being served.
    pub fn active_connections(&self) -> Arc<AtomicUsize> {
        self.active.clone()
    }

    /// Accept connections forever.
    pub fn run(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            };
            let engine = self.engine.clone();
            let active = self.active.clone();
            active.fetch_add(1, Ordering::SeqCst);
            thread::spawn(move || {
                let _ = serve_connection(stream, &engine);
                active.fetch_sub(1, Ordering::SeqCst);
            });
        }
        Ok(())
    }

    /// Run the accept loop on a background thread.
    pub fn spawn(self) -> thread::JoinHandle<io::Result<()>> {
        thread::spawn(move || self.run())
    }
}

enum Mode {
    Lines,
    WebSocket,
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    mode: Mode,
    pending: Option<String>,
}

impl Connection {
    fn open(stream: TcpStream) -> io::Result<Option<Self>> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut first = String::new();
        if reader.read_line(&mut first)? == 0 {
            return Ok(None);
        }
        let mut conn = Self {
            reader,
            writer,
            mode: Mode::Lines,
            pending: None,
        };
        if first.starts_with("GET ") {
            ws::handshake(&first, &mut conn.reader, &mut conn.writer)?;
            conn.mode = Mode::WebSocket;
        } else {
            conn.pending = Some(first);
        }
        Ok(Some(conn))
    }

    fn recv(&mut self) -> io::Result<Option<String>> {
        if let Some(p) = self.pending.take() {
            return Ok(Some(p));
        }
        match self.mode {
            Mode::Lines => {
                let mut line = String::new();
                Ok((self.reader.read_line(&mut line)? > 0).then_some(line))
            }
            Mode::WebSocket => match ws::read_message(&mut self.reader, &mut self.writer) {
                Ok(ws::Message::Text(t)) => Ok(Some(t)),
                Ok(ws::Message::Close) => Ok(None),
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
                Err(e) => Err(e),
            },
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        match self.mode {
            Mode::Lines => {
                self.writer.write_all(line.as_bytes())?;
                self.writer.flush()
            }
            Mode::WebSocket => ws::write_text(&mut self.writer, line.trim_end_matches('\n')),
        }
    }
}

fn connection_error(source: io::Error) -> Error {
    Error::Io {
        path: "<connection>".into(),
        source,
    }
}

/// Serve one client until it disconnects. Malformed messages and failed
/// requests produce an error reply; the connection stays open.
pub fn serve_connection(stream: TcpStream, engine: &Engine) -> io::Result<()> {
    let Some(mut conn) = Connection::open(stream)? else {
        return Ok(());
    };
    while let Some(line) = conn.recv()? {
        if line.trim().is_empty() {
            continue;
        }
        match parse_incoming(line.trim()) {
            Err((id, msg)) => conn.send(&to_line(&error_message(id.as_deref(), msg)))?,
            Ok(Incoming::Skeleton { id, .. }) => match skeleton_message(id.as_deref(), &engine.skeleton) {
                Ok(m) => conn.send(&to_line(&m))?,
                Err(e) => conn.send(&to_line(&error_message(id.as_deref(), e.to_string())))?,
            },
            Ok(Incoming::Request { request, .. }) => {
                let mut broken = None;
                let result = engine.run(&request, |frame| {
                    conn.send(&to_line(&frame)).map_err(|e| {
                        broken = Some(e.kind());
                        connection_error(e)
                    })
                });
                if let Some(kind) = broken {
                    return Err(kind.into());
                }
                match result {
                    Ok(outcome) => conn.send(&to_line(&outcome.summary))?,
                    Err(e) => conn.send(&to_line(&error_message(Some(&request.id), e.to_string())))?,
                }
            }
        }
    }
    Ok(())
}
