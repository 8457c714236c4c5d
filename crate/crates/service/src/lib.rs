//! Telemetry broadcast and command intake over newline-delimited JSON.
//!
//! Plain TCP clients send and receive one JSON object per line. WebSocket
//! clients carry the same objects as text messages. Every client gets every
//! broadcast frame through its own bounded buffer; a client whose buffer is
//! full is dropped so the simulation never waits on the network. Commands from
//! all clients feed one queue in arrival order and each gets an `ack` on the
//! connection it came from.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TrySendError};
use emrs_core::manager::{Ack, Command};
use emrs_core::telemetry::{decode_command, encode_outbound, DecodeError, Outbound};
use tungstenite::Message;

pub const DEFAULT_TCP_PORT: u16 = 7474;
pub const DEFAULT_WS_PORT: u16 = 7475;
pub const DEFAULT_BUFFER: usize = 1000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: String,
    pub tcp_port: u16,
    pub ws_port: u16,
    /// Outbound frames buffered per client before it is disconnected.
    pub buffer: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            tcp_port: DEFAULT_TCP_PORT,
            ws_port: DEFAULT_WS_PORT,
            buffer: DEFAULT_BUFFER,
        }
    }
}

pub type ClientId = u64;

struct Client {
    id: ClientId,
    tx: Sender<String>,
    alive: Arc<AtomicBool>,
    stream: TcpStream,
}

impl Client {
    fn drop_connection(&self) {
        self.alive.store(false, Ordering::SeqCst);
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// A command as received, with the route back to its sender.
pub struct Pending {
    pub client: ClientId,
    pub command: Result<Command, DecodeError>,
    reply: Sender<String>,
    alive: Arc<AtomicBool>,
    stream: TcpStream,
}

impl Pending {
    /// Queues the ack behind any frames already buffered for this client.
    pub fn reply(&self, ack: Ack) {
        let line = encode_outbound(&Outbound::Ack(ack));
        if let Err(TrySendError::Full(_)) = self.reply.try_send(line) {
            self.alive.store(false, Ordering::SeqCst);
            let _ = self.stream.shutdown(Shutdown::Both);
        }
    }
}

/// Ack reason for a message that could not be decoded.
pub fn decode_reason(err: &DecodeError) -> String {
    match err {
        DecodeError::UnknownType(t) => format!("unknown type \"{t}\""),
        DecodeError::Malformed(_) | DecodeError::MissingType => "parse".into(),
    }
}

struct Shared {
    clients: Mutex<Vec<Client>>,
    commands: Sender<Pending>,
    next_id: AtomicU64,
    shutdown: AtomicBool,
    buffer: usize,
}

pub struct Service {
    shared: Arc<Shared>,
    queue: Receiver<Pending>,
    tcp_addr: SocketAddr,
    ws_addr: SocketAddr,
}

impl Service {
    /// Binds both listeners; fails if either port is taken.
    pub fn start(cfg: &ServiceConfig) -> io::Result<Self> {
        let tcp = TcpListener::bind((cfg.bind.as_str(), cfg.tcp_port))?;
        let ws = TcpListener::bind((cfg.bind.as_str(), cfg.ws_port))?;
        let (tx, rx) = unbounded();
        let shared = Arc::new(Shared {
            clients: Mutex::new(Vec::new()),
            commands: tx,
            next_id: AtomicU64::new(1),
            shutdown: AtomicBool::new(false),
            buffer: cfg.buffer.max(1),
        });
        let service = Self { tcp_addr: tcp.local_addr()?, ws_addr: ws.local_addr()?, shared, queue: rx };
        spawn_acceptor(tcp, service.shared.clone(), false);
        spawn_acceptor(ws, service.shared.clone(), true);
        Ok(service)
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws_addr
    }

    pub fn client_count(&self) -> usize {
        let mut clients = self.shared.clients.lock().unwrap();
        clients.retain(|c| c.alive.load(Ordering::SeqCst));
        clients.len()
    }

    /// Sends a line to every connected client, dropping any that lag.
    pub fn broadcast(&self, line: &str) {
        let mut clients = self.shared.clients.lock().unwrap();
        clients.retain(|c| {
            if !c.alive.load(Ordering::SeqCst) {
                return false;
            }
            match c.tx.try_send(line.to_string()) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    log::warn!("client {} too slow, disconnecting", c.id);
                    c.drop_connection();
                    false
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
    }

    /// Drains queued commands in arrival order. Of several twists waiting in
    /// the queue only the newest is kept; the older ones are acknowledged as
    /// superseded.
    pub fn poll_commands(&self) -> Vec<Pending> {
        let pending: Vec<Pending> = self.queue.try_iter().collect();
        let last_twist = pending.iter().rposition(|p| matches!(p.command, Ok(Command::Twist(_))));
        let mut out = Vec::with_capacity(pending.len());
        for (i, p) in pending.into_iter().enumerate() {
            if matches!(p.command, Ok(Command::Twist(_))) && Some(i) != last_twist {
                p.reply(Ack::reject("superseded"));
            } else {
                out.push(p);
            }
        }
        out
    }

    /// Blocks until a command arrives or the timeout passes.
    pub fn wait_command(&self, timeout: Duration) -> Option<Pending> {
        self.queue.recv_timeout(timeout).ok()
    }

    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        for c in self.shared.clients.lock().unwrap().drain(..) {
            c.drop_connection();
        }
        // Wake the acceptors so they observe the flag.
        let _ = TcpStream::connect(self.tcp_addr);
        let _ = TcpStream::connect(self.ws_addr);
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn spawn_acceptor(listener: TcpListener, shared: Arc<Shared>, websocket: bool) {
    thread::spawn(move || {
        for stream in listener.incoming() {
            if shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let _ = stream.set_nodelay(true);
            let shared = shared.clone();
            thread::spawn(move || {
                let result = if websocket { serve_ws(stream, shared) } else { serve_tcp(stream, shared) };
                if let Err(e) = result {
                    log::debug!("client ended: {e}");
                }
            });
        }
    });
}

fn register(shared: &Shared, stream: &TcpStream) -> io::Result<(ClientId, Receiver<String>, Arc<AtomicBool>)> {
    let id = shared.next_id.fetch_add(1, Ordering::SeqCst);
    let (tx, rx) = bounded(shared.buffer);
    let alive = Arc::new(AtomicBool::new(true));
    shared.clients.lock().unwrap().push(Client { id, tx, alive: alive.clone(), stream: stream.try_clone()? });
    log::info!("client {id} connected from {:?}", stream.peer_addr().ok());
    Ok((id, rx, alive))
}

fn reply_route(shared: &Shared, id: ClientId) -> Option<(Sender<String>, Arc<AtomicBool>, TcpStream)> {
    let clients = shared.clients.lock().unwrap();
    let c = clients.iter().find(|c| c.id == id)?;
    Some((c.tx.clone(), c.alive.clone(), c.stream.try_clone().ok()?))
}

fn enqueue(shared: &Shared, id: ClientId, text: &str) {
    let text = text.trim();
    if text.is_empty() {
        return;
    }
    let Some((reply, alive, stream)) = reply_route(shared, id) else { return };
    let _ = shared.commands.send(Pending { client: id, command: decode_command(text), reply, alive, stream });
}

fn serve_tcp(stream: TcpStream, shared: Arc<Shared>) -> io::Result<()> {
    let (id, rx, alive) = register(&shared, &stream)?;
    let mut writer = stream.try_clone()?;
    let writer_alive = alive.clone();
    thread::spawn(move || {
        for line in rx.iter() {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
        writer_alive.store(false, Ordering::SeqCst);
        let _ = writer.shutdown(Shutdown::Both);
    });
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        if !alive.load(Ordering::SeqCst) {
            break;
        }
        match line {
            Ok(l) => enqueue(&shared, id, &l),
            Err(e) if e.kind() == ErrorKind::InvalidData => enqueue(&shared, id, "\u{0}"),
            Err(_) => break,
        }
    }
    alive.store(false, Ordering::SeqCst);
    log::info!("client {id} disconnected");
    Ok(())
}

fn serve_ws(stream: TcpStream, shared: Arc<Shared>) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream.try_clone()?).map_err(|e| io::Error::other(e.to_string()))?;
    stream.set_read_timeout(Some(Duration::from_millis(5)))?;
    let (id, rx, alive) = register(&shared, &stream)?;
    while alive.load(Ordering::SeqCst) {
        while let Ok(line) = rx.try_recv() {
            if ws.send(Message::text(line)).is_err() {
                alive.store(false, Ordering::SeqCst);
                break;
            }
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                for l in t.lines() {
                    enqueue(&shared, id, l);
                }
            }
            Ok(Message::Binary(b)) => enqueue(&shared, id, &String::from_utf8_lossy(&b)),
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {}
            Err(_) => break,
        }
    }
    alive.store(false, Ordering::SeqCst);
    log::info!("client {id} disconnected");
    Ok(())
}
