//! Socket bindings for [`Hub`]: newline-delimited JSON over TCP, and the
//! same envelopes as WebSocket text frames (one envelope per frame).

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tungstenite::Message;

use crate::envelope::SyncEnvelope;
use crate::hub::{ConnId, Hub, Liveness};

pub const DEFAULT_HEARTBEAT: Duration = Duration::from_secs(5);
const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: String,
    /// Optional WebSocket listener for browser clients.
    pub ws_listen: Option<String>,
    pub heartbeat: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7070".into(),
            ws_listen: None,
            heartbeat: DEFAULT_HEARTBEAT,
        }
    }
}

type Sockets = Arc<Mutex<HashMap<ConnId, TcpStream>>>;

pub struct ServerHandle {
    local_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    sockets: Sockets,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Blocks until [`ServerHandle::shutdown`] is called from elsewhere or
    /// the process ends.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Stops accepting, closes every connection and joins the listeners.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for (_, s) in self.sockets.lock().unwrap().drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Binds the listeners and starts serving on background threads.
pub fn serve(hub: Arc<Hub>, config: &ServerConfig) -> io::Result<ServerHandle> {
    let tcp = TcpListener::bind(&config.listen)?;
    let ws = config.ws_listen.as_deref().map(TcpListener::bind).transpose()?;
    let stop = Arc::new(AtomicBool::new(false));
    let sockets: Sockets = Arc::default();
    let mut handle = ServerHandle {
        local_addr: tcp.local_addr()?,
        ws_addr: ws.as_ref().map(TcpListener::local_addr).transpose()?,
        stop: stop.clone(),
        sockets: sockets.clone(),
        threads: Vec::new(),
    };

    handle
        .threads
        .push(accept_loop(tcp, hub.clone(), stop.clone(), sockets.clone(), serve_tcp)?);
    if let Some(ws) = ws {
        handle
            .threads
            .push(accept_loop(ws, hub.clone(), stop.clone(), sockets.clone(), serve_ws)?);
    }

    let heartbeat = config.heartbeat;
    handle.threads.push(thread::spawn(move || {
        let mut waited = Duration::ZERO;
        while !stop.load(Ordering::SeqCst) {
            thread::sleep(POLL);
            waited += POLL;
            if waited < heartbeat {
                continue;
            }
            waited = Duration::ZERO;
            let ids: Vec<ConnId> = sockets.lock().unwrap().keys().copied().collect();
            for id in ids {
                if hub.heartbeat(id) == Liveness::Dead {
                    log::info!("conn {id}: no heartbeat answer, dropping");
                    if let Some(s) = sockets.lock().unwrap().remove(&id) {
                        let _ = s.shutdown(Shutdown::Both);
                    }
                    hub.disconnect(id);
                }
            }
        }
    }));
    Ok(handle)
}

type ConnFn = fn(TcpStream, Arc<Hub>, ConnId, Receiver<SyncEnvelope>) -> io::Result<()>;

fn accept_loop(
    listener: TcpListener,
    hub: Arc<Hub>,
    stop: Arc<AtomicBool>,
    sockets: Sockets,
    serve_conn: ConnFn,
) -> io::Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(thread::spawn(move || {
        while !stop.load(Ordering::SeqCst) {
            let stream = match listener.accept() {
                Ok((stream, _)) => stream,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    thread::sleep(POLL);
                    continue;
                }
                Err(e) => {
                    log::warn!("accept: {e}");
                    thread::sleep(POLL);
                    continue;
                }
            };
            let _ = stream.set_nonblocking(false);
            let _ = stream.set_nodelay(true);
            let (tx, rx) = mpsc::channel();
            let id = hub.connect(tx);
            if let Ok(clone) = stream.try_clone() {
                sockets.lock().unwrap().insert(id, clone);
            }
            let hub = hub.clone();
            let sockets = sockets.clone();
            thread::spawn(move || {
                if let Err(e) = serve_conn(stream, hub.clone(), id, rx) {
                    log::debug!("conn {id}: {e}");
                }
                hub.disconnect(id);
                if let Some(s) = sockets.lock().unwrap().remove(&id) {
                    let _ = s.shutdown(Shutdown::Both);
                }
            });
        }
    }))
}

fn serve_tcp(stream: TcpStream, hub: Arc<Hub>, id: ConnId, outbox: Receiver<SyncEnvelope>) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let write_half = thread::spawn(move || {
        for envelope in outbox {
            if writer.write_all(envelope.to_line().as_bytes()).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    let result = loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break Ok(()),
            Ok(_) if line.trim().is_empty() => continue,
            Ok(_) => hub.receive_line(id, &line, now_ms()),
            Err(e) => break Err(e),
        }
    };
    // Dropping the hub's sender ends the writer.
    hub.disconnect(id);
    let _ = write_half.join();
    result
}

fn serve_ws(stream: TcpStream, hub: Arc<Hub>, id: ConnId, outbox: Receiver<SyncEnvelope>) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let ws_err = |e: tungstenite::Error| io::Error::other(e.to_string());
    loop {
        loop {
            match outbox.try_recv() {
                Ok(envelope) => {
                    let mut text = envelope.to_line();
                    text.pop();
                    ws.send(Message::text(text)).map_err(ws_err)?;
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => hub.receive_line(id, &text, now_ms()),
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(ws_err(e)),
        }
    }
}
