//! Single-port server carrying framed messages over raw TCP or WebSocket,
//! with static file serving for a browser UI on the same port.
//!
//! The first bytes of a connection select the protocol: the framing magic
//! starts a raw TCP session, an HTTP request with `Upgrade: websocket`
//! starts a WebSocket session (one framed message per binary frame), and
//! any other HTTP `GET` is answered from the UI directory.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::protocol::WebSocket;

use super::clock::{now_ns, ClockPeer, ClockSample};
use super::framing::{ClockMsg, Message, StreamDecoder, MAGIC};
use super::TransportError;

/// Smallest socket read timeout; zero means "block forever" to the OS.
const MIN_WAIT: Duration = Duration::from_millis(1);
const SNIFF_TIMEOUT: Duration = Duration::from_secs(5);
const MAX_REQUEST_HEAD: usize = 16 * 1024;

/// A bidirectional message channel.
pub trait Carrier: Send {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    /// Next message, or `None` if nothing arrived within `timeout`.
    fn recv(&mut self, timeout: Duration) -> Result<Option<Message>, TransportError>;
    fn protocol(&self) -> &'static str;
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

/// Framed messages directly on a TCP stream.
pub struct TcpCarrier {
    stream: TcpStream,
    decoder: StreamDecoder,
    buf: Vec<u8>,
}

impl TcpCarrier {
    pub fn new(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        Self {
            stream,
            decoder: StreamDecoder::new(),
            buf: vec![0; 64 * 1024],
        }
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        Ok(Self::new(TcpStream::connect(addr)?))
    }
}

impl Carrier for TcpCarrier {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.stream.write_all(&msg.encode()?)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Message>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            while let Some(next) = self.decoder.next_packet() {
                match next.and_then(|p| Message::from_packet(&p)) {
                    Ok(m) => return Ok(Some(m)),
                    Err(e) => log::warn!("tcp: dropping message: {e}"),
                }
            }
            let wait = deadline.saturating_duration_since(Instant::now()).max(MIN_WAIT);
            self.stream.set_read_timeout(Some(wait))?;
            match self.stream.read(&mut self.buf) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.decoder.push(&self.buf[..n]),
                Err(e) if is_timeout(&e) => {
                    if Instant::now() >= deadline {
                        return Ok(None);
                    }
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn protocol(&self) -> &'static str {
        "tcp"
    }
}

/// Framed messages inside WebSocket binary frames.
pub struct WsCarrier {
    ws: WebSocket<TcpStream>,
}

fn ws_error(e: tungstenite::Error) -> TransportError {
    match e {
        tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => TransportError::Closed,
        tungstenite::Error::Io(io) => TransportError::Io(io),
        other => TransportError::WebSocket(other.to_string()),
    }
}

impl WsCarrier {
    pub fn new(ws: WebSocket<TcpStream>) -> Self {
        Self { ws }
    }

    /// Client side, for tests and tools.
    pub fn connect(addr: SocketAddr) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        let _ = stream.set_nodelay(true);
        let (ws, _) = tungstenite::client(format!("ws://{addr}/"), stream)
            .map_err(|e| TransportError::WebSocket(e.to_string()))?;
        Ok(Self { ws })
    }
}

impl Carrier for WsCarrier {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.ws
            .send(tungstenite::Message::Binary(msg.encode()?))
            .map_err(ws_error)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Message>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            let wait = deadline.saturating_duration_since(Instant::now()).max(MIN_WAIT);
            self.ws.get_ref().set_read_timeout(Some(wait))?;
            match self.ws.read() {
                Ok(tungstenite::Message::Binary(bytes)) => match Message::decode(&bytes) {
                    Ok(m) => return Ok(Some(m)),
                    Err(e) => log::warn!("websocket: dropping message: {e}"),
                },
                Ok(tungstenite::Message::Close(_)) => return Err(TransportError::Closed),
                Ok(tungstenite::Message::Text(_)) => log::warn!("websocket: ignoring text frame"),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {
                    // Flush any queued pong or close reply.
                    match self.ws.flush() {
                        Ok(()) => {}
                        Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
                        Err(e) => return Err(ws_error(e)),
                    }
                    if Instant::now() >= deadline {
                        return Ok(None);
                    }
                }
                Err(e) => return Err(ws_error(e)),
            }
        }
    }

    fn protocol(&self) -> &'static str {
        "websocket"
    }
}

/// Reply to a clock ping received at `received_ns` on a clock running
/// `skew_ns` ahead of [`now_ns`].
pub fn clock_pong(ping: &ClockMsg, received_ns: u64, skew_ns: i64) -> Message {
    let shift = |t: u64| t.saturating_add_signed(skew_ns);
    Message::ClockPong(ClockMsg {
        t1: ping.t1,
        t2: shift(received_ns),
        t3: shift(now_ns()),
    })
}

/// Two-way clock exchange with a server over any carrier. Messages other
/// than the matching pong are discarded while waiting.
pub struct CarrierClock<'a> {
    carrier: &'a mut dyn Carrier,
    timeout: Duration,
}

impl<'a> CarrierClock<'a> {
    pub fn new(carrier: &'a mut dyn Carrier, timeout: Duration) -> Self {
        Self { carrier, timeout }
    }
}

impl ClockPeer for CarrierClock<'_> {
    fn exchange(&mut self) -> Result<ClockSample, TransportError> {
        let t1 = now_ns();
        self.carrier.send(&Message::ClockPing(ClockMsg { t1, t2: 0, t3: 0 }))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Timeout("clock pong"));
            }
            if let Some(Message::ClockPong(p)) = self.carrier.recv(left)? {
                if p.t1 == t1 {
                    return Ok(ClockSample {
                        t1,
                        t2: p.t2,
                        t3: p.t3,
                        t4: now_ns(),
                    });
                }
            }
        }
    }
}

/// Accepts connections until [`Server::shutdown_handle`] is set.
pub struct Server {
    listener: TcpListener,
    ui_dir: Option<PathBuf>,
    shutdown: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, ui_dir: Option<PathBuf>) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            ui_dir,
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn shutdown_handle(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    /// Runs the accept loop; each message session gets its own thread and
    /// is passed to `handler`.
    pub fn run<H>(&self, handler: H) -> Result<(), TransportError>
    where
        H: Fn(Box<dyn Carrier>) + Send + Sync + 'static,
    {
        let handler = Arc::new(handler);
        while !self.shutdown.load(Ordering::Relaxed) {
            let (stream, peer) = match self.listener.accept() {
                Ok(s) => s,
                Err(e) if is_timeout(&e) => {
                    thread::sleep(Duration::from_millis(20));
                    continue;
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            };
            let handler = handler.clone();
            let ui_dir = self.ui_dir.clone();
            thread::spawn(move || match classify(stream, ui_dir.as_deref()) {
                Ok(Some(carrier)) => {
                    log::info!("{peer}: {} session", carrier.protocol());
                    handler(carrier);
                    log::info!("{peer}: session ended");
                }
                Ok(None) => {}
                Err(e) => log::warn!("{peer}: {e}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Kind {
    Framed,
    WebSocket,
    Http,
}

fn sniff(head: &[u8]) -> Option<Kind> {
    if head.len() < 2 {
        return None;
    }
    if head[..2] == MAGIC {
        return Some(Kind::Framed);
    }
    let end = head.windows(4).position(|w| w == b"\r\n\r\n")?;
    let text = String::from_utf8_lossy(&head[..end]).to_ascii_lowercase();
    let upgrade = text
        .lines()
        .filter_map(|l| l.split_once(':'))
        .any(|(k, v)| k.trim() == "upgrade" && v.trim() == "websocket");
    Some(if upgrade { Kind::WebSocket } else { Kind::Http })
}

fn classify(stream: TcpStream, ui_dir: Option<&Path>) -> Result<Option<Box<dyn Carrier>>, TransportError> {
    stream.set_nonblocking(false)?;
    let _ = stream.set_nodelay(true);
    stream.set_read_timeout(Some(SNIFF_TIMEOUT))?;
    let started = Instant::now();
    let mut head = vec![0u8; MAX_REQUEST_HEAD];
    let kind = loop {
        let n = stream.peek(&mut head)?;
        if n == 0 {
            return Err(TransportError::Closed);
        }
        if let Some(kind) = sniff(&head[..n]) {
            break kind;
        }
        if n == head.len() {
            return Err(TransportError::Malformed("request head too large".into()));
        }
        if started.elapsed() > SNIFF_TIMEOUT {
            return Err(TransportError::Timeout("protocol preamble"));
        }
        thread::sleep(Duration::from_millis(2));
    };
    stream.set_read_timeout(None)?;
    match kind {
        Kind::Framed => Ok(Some(Box::new(TcpCarrier::new(stream)))),
        Kind::WebSocket => {
            let ws = tungstenite::accept(stream).map_err(|e| TransportError::WebSocket(e.to_string()))?;
            Ok(Some(Box::new(WsCarrier::new(ws))))
        }
        Kind::Http => {
            serve_static(stream, ui_dir)?;
            Ok(None)
        }
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" => "application/json",
        "png" => "image/png",
        "svg" => "image/svg+xml",
        "wasm" => "application/wasm",
        "ico" => "image/x-icon",
        _ => "application/octet-stream",
    }
}

/// Maps a request target onto a file below `root`; `None` for paths that
/// would leave it.
fn resolve(root: &Path, target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let full = root.join(rel);
    Some(if path.ends_with('/') || full.is_dir() {
        full.join("index.html")
    } else {
        full
    })
}

fn serve_static(mut stream: TcpStream, ui_dir: Option<&Path>) -> Result<(), TransportError> {
    let mut head = Vec::new();
    let mut byte = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") && head.len() < MAX_REQUEST_HEAD {
        if stream.read(&mut byte)? == 0 {
            return Err(TransportError::Closed);
        }
        head.push(byte[0]);
    }
    let text = String::from_utf8_lossy(&head);
    let mut parts = text.split_whitespace();
    let (method, target) = (parts.next().unwrap_or(""), parts.next().unwrap_or("/"));
    let (status, ctype, body): (&str, &str, Vec<u8>) = if method != "GET" && method != "HEAD" {
        ("405 Method Not Allowed", "text/plain", b"method not allowed\n".to_vec())
    } else {
        match ui_dir {
            None => (
                "404 Not Found",
                "text/plain",
                b"no UI directory configured; connect a viewer over WebSocket\n".to_vec(),
            ),
            Some(root) => match resolve(root, target).map(|p| (std::fs::read(&p), p)) {
                Some((Ok(bytes), p)) => ("200 OK", content_type(&p), bytes),
                Some((Err(_), _)) => ("404 Not Found", "text/plain", b"not found\n".to_vec()),
                None => ("403 Forbidden", "text/plain", b"forbidden\n".to_vec()),
            },
        }
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    if method != "HEAD" {
        stream.write_all(&body)?;
    }
    stream.flush()?;
    Ok(())
}
