//! Runs a [`DeviceClient`] against a hub over TCP in wall-clock time.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use teleshift_hub::SyncEnvelope;

use crate::actuation::ActuationParams;
use crate::client::{Backoff, DeviceClient, LinkState};
use crate::net::{Link, NetProfile};

pub enum Inbound {
    Envelope(SyncEnvelope),
    Closed,
}

/// Commands a controlling thread can inject.
pub enum Command {
    Override(teleshift_core::ArmId, f64),
    Stop,
}

pub struct LiveDevice {
    pub client: DeviceClient,
    pub params: ActuationParams,
    pub profile: NetProfile,
    addr: SocketAddr,
}

impl LiveDevice {
    pub fn new(client: DeviceClient, addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no address"))?;
        Ok(Self {
            client,
            params: ActuationParams::default(),
            profile: NetProfile::ideal(),
            addr,
        })
    }

    fn open(&self) -> std::io::Result<(TcpStream, Receiver<Inbound>)> {
        let stream = TcpStream::connect_timeout(&self.addr, Duration::from_secs(2))?;
        stream.set_nodelay(true)?;
        let (tx, rx) = mpsc::channel();
        let reader = BufReader::new(stream.try_clone()?);
        thread::spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if let Ok(env) = SyncEnvelope::from_line(&line) {
                    if tx.send(Inbound::Envelope(env)).is_err() {
                        return;
                    }
                }
            }
            let _ = tx.send(Inbound::Closed);
        });
        Ok((stream, rx))
    }

    /// Connects and waits until the hub has welcomed this device and the
    /// recovery fetch is done, or the hub refused it.
    pub fn join(&mut self, timeout: Duration) -> std::io::Result<Session> {
        let (stream, rx) = self.open()?;
        let start = Instant::now();
        let mut session = Session {
            stream,
            rx,
            start,
            up: Link::new(self.profile, 0),
            delayed: Vec::new(),
        };
        self.client.connect_started(0);
        while start.elapsed() < timeout {
            session.pump(&mut self.client, &self.params, Duration::from_millis(10))?;
            match self.client.link() {
                LinkState::Live | LinkState::Rejected(_) => return Ok(session),
                _ => {}
            }
        }
        Err(std::io::Error::new(std::io::ErrorKind::TimedOut, "no WELCOME from hub"))
    }

    /// Keeps the device running until `stop` is set, reconnecting with
    /// backoff when the hub goes away.
    pub fn run(mut self, mut session: Session, stop: Arc<AtomicBool>, commands: Receiver<Command>) {
        let mut backoff = Backoff::new();
        while !stop.load(Ordering::SeqCst) {
            while let Ok(cmd) = commands.try_recv() {
                match cmd {
                    Command::Override(arm, mm) => {
                        let now = session.now();
                        self.client.override_arm(arm, mm, now);
                    }
                    Command::Stop => return,
                }
            }
            match session.pump(&mut self.client, &self.params, Duration::from_millis(u64::from(self.params.tick_ms as u32))) {
                Ok(()) => backoff.reset(),
                Err(_) => {
                    self.client.connection_lost();
                    loop {
                        if stop.load(Ordering::SeqCst) {
                            return;
                        }
                        thread::sleep(Duration::from_millis(backoff.delay_ms()));
                        backoff.advance();
                        if let Ok((stream, rx)) = self.open() {
                            let now = session.now();
                            session.stream = stream;
                            session.rx = rx;
                            session.delayed.clear();
                            self.client.connect_started(now);
                            break;
                        }
                    }
                }
            }
        }
    }
}

pub struct Session {
    stream: TcpStream,
    rx: Receiver<Inbound>,
    start: Instant,
    up: Link,
    delayed: Vec<(u64, SyncEnvelope)>,
}

impl Session {
    fn now(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    /// One round: deliver inbound, run timers and actuation, flush outbound.
    fn pump(&mut self, client: &mut DeviceClient, params: &ActuationParams, wait: Duration) -> std::io::Result<()> {
        match self.rx.recv_timeout(wait) {
            Ok(Inbound::Envelope(env)) => client.handle(&env, self.now()),
            Ok(Inbound::Closed) | Err(RecvTimeoutError::Disconnected) => {
                return Err(std::io::Error::new(std::io::ErrorKind::ConnectionReset, "hub closed"))
            }
            Err(RecvTimeoutError::Timeout) => {}
        }
        while let Ok(inbound) = self.rx.try_recv() {
            match inbound {
                Inbound::Envelope(env) => client.handle(&env, self.now()),
                Inbound::Closed => {
                    return Err(std::io::Error::new(std::io::ErrorKind::ConnectionReset, "hub closed"))
                }
            }
        }
        let now = self.now();
        client.poll(now);
        client.state.tick(params);
        for env in client.take_outbox() {
            if let Some(at) = self.up.send(now) {
                self.delayed.push((at, env));
            }
        }
        let due: Vec<_> = {
            let (due, later): (Vec<_>, Vec<_>) = self.delayed.drain(..).partition(|(at, _)| *at <= now);
            self.delayed = later;
            due
        };
        for (_, env) in due {
            self.stream.write_all(env.to_line().as_bytes())?;
        }
        Ok(())
    }
}
