//! Blocking TCP client for one session member.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use teleshift_core::{Role, SessionMode, SubstructureId};

use crate::envelope::{
    DecodeError, ErrorCode, ErrorPayload, Hello, Kind, Ping, Pong, SyncEnvelope, Welcome,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("HubUnreachable: {0}")]
    Unreachable(io::Error),
    #[error("connection: {0}")]
    Io(#[from] io::Error),
    #[error("{code}: {message}")]
    Hub { code: ErrorCode, message: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("timed out waiting for {0}")]
    Timeout(Kind),
}

impl From<DecodeError> for ClientError {
    fn from(e: DecodeError) -> Self {
        ClientError::Protocol(e.to_string())
    }
}

pub struct HubClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    session: String,
    client: String,
    seq: u64,
    sent: u64,
    /// Envelopes received while waiting for a specific reply.
    pub backlog: Vec<SyncEnvelope>,
}

impl HubClient {
    pub fn connect(addr: impl ToSocketAddrs, session: &str, client: &str) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(ClientError::Unreachable)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            session: session.into(),
            client: client.into(),
            seq: 0,
            sent: 0,
            backlog: Vec::new(),
        })
    }

    pub fn client_id(&self) -> &str {
        &self.client
    }

    pub fn send(&mut self, kind: Kind, payload: impl Serialize) -> io::Result<()> {
        self.seq += 1;
        self.sent += 1;
        let mut env = SyncEnvelope::new(kind, self.session.clone(), self.client.clone(), payload);
        env.seq = self.seq;
        self.send_raw(&env.to_line())
    }

    /// Writes bytes verbatim, bypassing sequencing. For tests and tools.
    pub fn send_raw(&mut self, line: &str) -> io::Result<()> {
        self.writer.write_all(line.as_bytes())
    }

    /// Next envelope from the hub, answering heartbeats transparently.
    /// `Ok(None)` on timeout.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<SyncEnvelope>, ClientError> {
        let deadline = Instant::now() + timeout;
        let mut line = String::new();
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.reader.get_ref().set_read_timeout(Some(left))?;
            match self.reader.read_line(&mut line) {
                Ok(0) => {
                    return Err(ClientError::Io(io::Error::new(
                        ErrorKind::UnexpectedEof,
                        "hub closed the connection",
                    )))
                }
                Ok(_) if !line.ends_with('\n') => continue,
                Ok(_) => {}
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
                Err(e) => return Err(e.into()),
            }
            let env = SyncEnvelope::from_line(&line)?;
            line.clear();
            if env.kind == Kind::Ping {
                let ping: Ping = env.payload_as()?;
                let pong = Pong {
                    expect: ping.sent,
                    accepted: 0,
                    sent: self.sent,
                };
                self.send(Kind::Pong, pong)?;
                continue;
            }
            return Ok(Some(env));
        }
    }

    /// Waits for an envelope of `kind`, turning hub errors into
    /// [`ClientError::Hub`]. Other envelopes go to the backlog.
    pub fn expect(&mut self, kind: Kind, timeout: Duration) -> Result<SyncEnvelope, ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let Some(env) = self.recv(left)? else {
                return Err(ClientError::Timeout(kind));
            };
            if env.kind == kind {
                return Ok(env);
            }
            if env.kind == Kind::Error {
                let err: ErrorPayload = env.payload_as()?;
                return Err(ClientError::Hub {
                    code: err.code,
                    message: err.message,
                });
            }
            self.backlog.push(env);
        }
    }

    pub fn request<T: DeserializeOwned>(
        &mut self,
        kind: Kind,
        payload: impl Serialize,
        reply: Kind,
        timeout: Duration,
    ) -> Result<T, ClientError> {
        self.send(kind, payload)?;
        Ok(self.expect(reply, timeout)?.payload_as()?)
    }

    pub fn hello(
        &mut self,
        mode: Option<SessionMode>,
        role: Option<Role>,
        substructures: Vec<SubstructureId>,
        timeout: Duration,
    ) -> Result<Welcome, ClientError> {
        let hello = Hello {
            mode,
            role,
            substructures,
        };
        self.request(Kind::Hello, hello, Kind::Welcome, timeout)
    }
}
