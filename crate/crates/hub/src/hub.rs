//! Connection-aware front of the session engine.
//!
//! Transports hand the hub one decoded line at a time together with the
//! connection it arrived on; the hub answers by pushing envelopes into each
//! connection's outbound channel. Sequence numbers are assigned at push time
//! under the connection's lock, so a channel always carries strictly
//! increasing `seq` values. Session mutations are serialized per session.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;

use teleshift_core::{Role, RoutingDecision};

use crate::envelope::{
    DecodeError, ErrorCode, ErrorPayload, FullState, FullStateRequest, Hello, Kind, ModeSet, Ping,
    Pong, SnapshotListing, SnapshotRestore, SnapshotRestored, SnapshotSave, SnapshotSaved,
    SyncEnvelope, Updates, Welcome, HUB_SENDER,
};
use crate::persist::{PersistError, SessionStore};
use crate::session::{HubError, SessionRecord};
use crate::{ClientId, SessionId};

pub type ConnId = u64;

/// Missed heartbeat answers after which a connection is considered dead.
pub const MAX_MISSED_PONGS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Alive,
    Dead,
}

struct Conn {
    sink: Sender<SyncEnvelope>,
    last_seq: Option<u64>,
    out_seq: u64,
    accepted: u64,
    sent: u64,
    binding: Option<(SessionId, ClientId)>,
    missed_pongs: u32,
}

struct LiveSession {
    record: SessionRecord,
    online: BTreeMap<ClientId, ConnId>,
}

pub struct Hub {
    sessions: Mutex<HashMap<SessionId, Arc<Mutex<LiveSession>>>>,
    conns: Mutex<HashMap<ConnId, Arc<Mutex<Conn>>>>,
    next_conn: AtomicU64,
    store: Option<SessionStore>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Default for Hub {
    fn default() -> Self {
        Self::new()
    }
}

impl Hub {
    /// In-memory hub without persistence.
    pub fn new() -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            conns: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
            store: None,
        }
    }

    /// Hub persisting to `store`, preloaded with every readable session in
    /// it. Unreadable files are returned so the caller can report them.
    pub fn with_store(store: SessionStore) -> std::io::Result<(Self, Vec<(std::path::PathBuf, PersistError)>)> {
        let mut hub = Self::new();
        let mut failures = Vec::new();
        {
            let mut sessions = lock(&hub.sessions);
            for loaded in store.load_all()? {
                match loaded {
                    Ok(record) => {
                        sessions.insert(
                            record.id.clone(),
                            Arc::new(Mutex::new(LiveSession {
                                record,
                                online: BTreeMap::new(),
                            })),
                        );
                    }
                    Err(failure) => failures.push(failure),
                }
            }
        }
        hub.store = Some(store);
        Ok((hub, failures))
    }

    pub fn connect(&self, sink: Sender<SyncEnvelope>) -> ConnId {
        let id = self.next_conn.fetch_add(1, Ordering::Relaxed);
        let conn = Conn {
            sink,
            last_seq: None,
            out_seq: 0,
            accepted: 0,
            sent: 0,
            binding: None,
            missed_pongs: 0,
        };
        lock(&self.conns).insert(id, Arc::new(Mutex::new(conn)));
        id
    }

    /// Forgets a connection. Its member stays in the session, offline.
    pub fn disconnect(&self, conn: ConnId) {
        let Some(state) = lock(&self.conns).remove(&conn) else {
            return;
        };
        let binding = lock(&state).binding.clone();
        if let Some((session, client)) = binding {
            if let Some(live) = self.session_arc(&session) {
                let mut live = lock(&live);
                if live.online.get(&client) == Some(&conn) {
                    live.online.remove(&client);
                }
            }
        }
    }

    /// Sends a heartbeat probe, or reports the connection dead after too
    /// many unanswered ones.
    pub fn heartbeat(&self, conn: ConnId) -> Liveness {
        let Some(state) = self.conn(conn) else {
            return Liveness::Dead;
        };
        let mut c = lock(&state);
        if c.missed_pongs >= MAX_MISSED_PONGS {
            return Liveness::Dead;
        }
        c.missed_pongs += 1;
        let session = c.binding.as_ref().map(|b| b.0.to_string()).unwrap_or_default();
        let sent = c.sent + 1;
        push(&mut c, SyncEnvelope::new(Kind::Ping, session, HUB_SENDER, Ping { sent }));
        Liveness::Alive
    }

    pub fn receive_line(&self, conn: ConnId, line: &str, now_ms: u64) {
        match SyncEnvelope::from_line(line) {
            Ok(env) => self.receive(conn, env, now_ms),
            Err(err) => {
                let code = match err {
                    DecodeError::UnknownKind(_) => ErrorCode::UnknownKind,
                    DecodeError::Malformed(_) => ErrorCode::MalformedEnvelope,
                };
                let session = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("session").and_then(|s| s.as_str()).map(str::to_string))
                    .unwrap_or_default();
                self.send_error(conn, &session, HubError::new(code, err.to_string()));
            }
        }
    }

    pub fn receive(&self, conn: ConnId, env: SyncEnvelope, now_ms: u64) {
        let Some(state) = self.conn(conn) else {
            return;
        };
        {
            let mut c = lock(&state);
            if let Some(last) = c.last_seq {
                if env.seq <= last {
                    let err = HubError::new(
                        ErrorCode::StaleSeq,
                        format!("seq {} not after {last}", env.seq),
                    );
                    drop(c);
                    self.send_error(conn, &env.session, err);
                    return;
                }
            }
            c.last_seq = Some(env.seq);
            c.accepted += 1;
            match env.kind {
                Kind::Ping => {
                    let ping: Ping = env.payload_as().unwrap_or_default();
                    let pong = Pong {
                        expect: ping.sent,
                        accepted: c.accepted,
                        sent: c.sent,
                    };
                    push(&mut c, SyncEnvelope::new(Kind::Pong, env.session.clone(), HUB_SENDER, pong));
                    return;
                }
                Kind::Pong => {
                    c.missed_pongs = 0;
                    return;
                }
                _ => {}
            }
        }
        let session = env.session.clone();
        let result = if env.kind == Kind::Hello {
            self.handle_hello(conn, &state, env)
        } else {
            self.handle_member(conn, &state, env, now_ms)
        };
        if let Err(err) = result {
            self.send_error(conn, &session, err);
        }
    }

    fn handle_hello(&self, conn: ConnId, state: &Arc<Mutex<Conn>>, env: SyncEnvelope) -> Result<(), HubError> {
        let malformed = |m: String| HubError::new(ErrorCode::MalformedEnvelope, m);
        let session_id = SessionId::new(&env.session).map_err(|e| malformed(format!("session: {e}")))?;
        let client = ClientId::new(&env.sender)
            .ok()
            .filter(|c| !c.as_str().is_empty())
            .ok_or_else(|| malformed("sender must be a non-empty client id".into()))?;
        let hello: Hello = env.payload_as().map_err(|e| malformed(e.to_string()))?;

        if let Some((bound_session, bound_client)) = lock(state).binding.clone() {
            if bound_session != session_id || bound_client != client {
                return Err(malformed(format!(
                    "connection already joined {bound_session} as {bound_client}"
                )));
            }
        }

        let live = {
            let mut sessions = lock(&self.sessions);
            match sessions.get(&session_id) {
                Some(live) => live.clone(),
                None => {
                    let mode = hello.mode.ok_or_else(|| {
                        HubError::new(ErrorCode::UnknownSession, format!("no session {session_id}"))
                    })?;
                    let fresh = SessionRecord::new(session_id.clone(), mode);
                    // Admission is checked before the session becomes visible.
                    fresh.admit(&client, hello.role, false)?;
                    let live = Arc::new(Mutex::new(LiveSession {
                        record: fresh,
                        online: BTreeMap::new(),
                    }));
                    sessions.insert(session_id.clone(), live.clone());
                    live
                }
            }
        };

        let mut live = lock(&live);
        if let Some(mode) = hello.mode {
            if mode != live.record.mode {
                return Err(HubError::new(
                    ErrorCode::RoleModeMismatch,
                    format!("{session_id} is a {} session", live.record.mode),
                ));
            }
        }
        let rejoin_same_conn = live.online.get(&client) == Some(&conn);
        let presenter_online = live
            .record
            .presenter()
            .and_then(|p| live.online.get(p))
            .is_some_and(|c| *c != conn);
        let role = live.record.admit(&client, hello.role, presenter_online)?;
        if !rejoin_same_conn && live.online.contains_key(&client) {
            return Err(HubError::new(
                ErrorCode::DuplicateClientId,
                format!("{client} is already connected to {session_id}"),
            ));
        }
        live.record.register(client.clone(), role, &hello.substructures);
        live.online.insert(client.clone(), conn);
        lock(state).binding = Some((session_id.clone(), client.clone()));
        self.persist(&live.record);

        let welcome = Welcome {
            mode: live.record.mode,
            role,
            topology: live.record.topology.clone(),
            shadow: live.record.shadows.get(&client).cloned(),
        };
        self.send(conn, SyncEnvelope::new(Kind::Welcome, session_id.to_string(), HUB_SENDER, welcome));
        Ok(())
    }

    fn handle_member(
        &self,
        conn: ConnId,
        state: &Arc<Mutex<Conn>>,
        env: SyncEnvelope,
        now_ms: u64,
    ) -> Result<(), HubError> {
        let binding = lock(state).binding.clone();
        let (session_id, client) = binding
            .filter(|(s, c)| s.as_str() == env.session && c.as_str() == env.sender)
            .ok_or_else(|| {
                HubError::new(
                    ErrorCode::NotAMember,
                    format!("{} has not joined {} on this connection", env.sender, env.session),
                )
            })?;
        let live = self
            .session_arc(&session_id)
            .ok_or_else(|| HubError::new(ErrorCode::UnknownSession, format!("no session {session_id}")))?;
        let mut live = lock(&live);
        let malformed = |e: DecodeError| HubError::new(ErrorCode::MalformedEnvelope, e.to_string());
        let session_name = session_id.to_string();

        match env.kind {
            Kind::Update => {
                let payload: Updates = env.payload_as().map_err(malformed)?;
                let outcome = live.record.apply_update(&client, &payload.updates)?;
                if outcome.routing == RoutingDecision::BroadcastAllOthers && !outcome.applied.is_empty() {
                    let fanout = Updates {
                        updates: outcome.applied.clone(),
                    };
                    self.broadcast(&live, Some(&client), Kind::Update, &session_name, client.as_str(), &fanout);
                }
                if !outcome.applied.is_empty() {
                    self.persist(&live.record);
                }
                if !outcome.unknown.is_empty() {
                    let ids: Vec<String> = outcome.unknown.iter().map(ToString::to_string).collect();
                    return Err(HubError::new(
                        ErrorCode::UnknownSubstructure,
                        format!("unknown substructures: {}", ids.join(", ")),
                    ));
                }
            }
            Kind::FullStateRequest => {
                let req: FullStateRequest = env.payload_as().map_err(malformed)?;
                if req.reset && live.record.is_diverged(&client) {
                    live.record.reset_shadow(&client);
                    self.persist(&live.record);
                }
                let reply = FullState {
                    topology: live.record.topology.clone(),
                    shadow: live.record.shadows.get(&client).cloned(),
                    diverged: live.record.is_diverged(&client),
                };
                self.send(conn, SyncEnvelope::new(Kind::FullState, session_name, HUB_SENDER, reply));
            }
            Kind::SnapshotSave => {
                let req: SnapshotSave = env.payload_as().map_err(malformed)?;
                let meta = live.record.save_snapshot(&client, &req.label, now_ms)?;
                self.persist(&live.record);
                let reply = SnapshotSaved { snapshot: meta };
                self.send(conn, SyncEnvelope::new(Kind::SnapshotSave, session_name, HUB_SENDER, reply));
            }
            Kind::SnapshotList => {
                let reply = SnapshotListing {
                    snapshots: live.record.list_snapshots(),
                };
                self.send(conn, SyncEnvelope::new(Kind::SnapshotList, session_name, HUB_SENDER, reply));
            }
            Kind::SnapshotRestore => {
                let req: SnapshotRestore = env.payload_as().map_err(malformed)?;
                let outcome = live.record.restore_snapshot(&client, &req.snapshot_id)?;
                self.persist(&live.record);
                let reply = SnapshotRestored {
                    snapshot_id: req.snapshot_id,
                    updates: outcome.updates.clone(),
                };
                self.send(
                    conn,
                    SyncEnvelope::new(Kind::SnapshotRestore, session_name.clone(), HUB_SENDER, reply),
                );
                if outcome.routing == RoutingDecision::BroadcastAllOthers {
                    let fanout = Updates {
                        updates: outcome.updates,
                    };
                    self.broadcast(&live, Some(&client), Kind::Update, &session_name, client.as_str(), &fanout);
                }
            }
            Kind::ModeSet => {
                let req: ModeSet = env.payload_as().map_err(malformed)?;
                live.record.set_mode(req.mode, &req.roles)?;
                self.persist(&live.record);
                let note = ModeSet {
                    mode: live.record.mode,
                    roles: live.record.roles.clone(),
                };
                self.broadcast(&live, None, Kind::ModeSet, &session_name, client.as_str(), &note);
            }
            other => {
                return Err(HubError::new(
                    ErrorCode::MalformedEnvelope,
                    format!("{other} is not accepted from clients"),
                ));
            }
        }
        Ok(())
    }

    fn broadcast(
        &self,
        live: &LiveSession,
        except: Option<&ClientId>,
        kind: Kind,
        session: &str,
        sender: &str,
        payload: &impl Serialize,
    ) {
        let envelope = SyncEnvelope::new(kind, session, sender, payload);
        for (member, conn) in &live.online {
            if Some(member) != except {
                self.send(*conn, envelope.clone());
            }
        }
    }

    fn send(&self, conn: ConnId, envelope: SyncEnvelope) {
        if let Some(state) = self.conn(conn) {
            push(&mut lock(&state), envelope);
        }
    }

    fn send_error(&self, conn: ConnId, session: &str, err: HubError) {
        log::debug!("conn {conn}: {err}");
        let payload = ErrorPayload {
            code: err.code,
            message: err.message,
        };
        self.send(conn, SyncEnvelope::new(Kind::Error, session, HUB_SENDER, payload));
    }

    fn persist(&self, record: &SessionRecord) {
        if let Some(store) = &self.store {
            if let Err(e) = store.save(record) {
                log::error!("persisting session {}: {e}", record.id);
            }
        }
    }

    fn conn(&self, conn: ConnId) -> Option<Arc<Mutex<Conn>>> {
        lock(&self.conns).get(&conn).cloned()
    }

    fn session_arc(&self, id: &SessionId) -> Option<Arc<Mutex<LiveSession>>> {
        lock(&self.sessions).get(id).cloned()
    }

    /// Point-in-time copy of a session.
    pub fn session(&self, id: &str) -> Option<SessionRecord> {
        let id = SessionId::new(id).ok()?;
        self.session_arc(&id).map(|l| lock(&l).record.clone())
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<_> = lock(&self.sessions).keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Members with a live connection, sorted.
    pub fn online_members(&self, id: &str) -> Vec<(ClientId, Role)> {
        let Some(live) = SessionId::new(id).ok().and_then(|id| self.session_arc(&id)) else {
            return Vec::new();
        };
        let live = lock(&live);
        live.online
            .keys()
            .map(|c| (c.clone(), live.record.roles[c]))
            .collect()
    }

    /// Envelopes accepted from, and sent to, a connection so far.
    pub fn counters(&self, conn: ConnId) -> Option<(u64, u64)> {
        self.conn(conn).map(|c| {
            let c = lock(&c);
            (c.accepted, c.sent)
        })
    }

    pub fn connection_count(&self) -> usize {
        lock(&self.conns).len()
    }
}

fn push(conn: &mut Conn, mut envelope: SyncEnvelope) {
    conn.out_seq += 1;
    conn.sent += 1;
    envelope.seq = conn.out_seq;
    // A closed receiver means the transport is tearing the connection down.
    let _ = conn.sink.send(envelope);
}
