//! Hub protocol for one device, independent of transport and clock.
//!
//! The transport feeds inbound envelopes to [`DeviceClient::handle`], calls
//! [`DeviceClient::poll`] at or after [`DeviceClient::next_deadline`], and
//! ships whatever [`DeviceClient::take_outbox`] returns, in order.
//!
//! Loss repair: both ends count envelopes sent and accepted on the
//! connection. After any activity the device sends a PING carrying its sent
//! count; the hub's PONG reports what it accepted and sent. A gap in either
//! direction triggers a full-state fetch, after which hub-newer registers
//! are merged and device-newer ones are sent again.

use std::collections::BTreeMap;

use teleshift_core::{
    ArmId, ArmUpdateF64, Role, SessionMode, SubstructureId, TopologyF64,
};
use teleshift_hub::envelope::{
    ErrorPayload, FullState, FullStateRequest, Hello, ModeSet, Ping, Pong, SnapshotRestore,
    SnapshotRestored, SnapshotSave, Updates, Welcome,
};
use teleshift_hub::{ClientId, ErrorCode, Kind, SyncEnvelope};

use crate::device::{DeviceState, PendingEdit};

/// Exponential reconnect delay: 500 ms doubling up to 8 s.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    attempt: u32,
}

impl Backoff {
    pub const BASE_MS: u64 = 500;
    pub const CAP_MS: u64 = 8_000;

    pub fn new() -> Self {
        Self { attempt: 0 }
    }

    pub fn delay_ms(&self) -> u64 {
        (Self::BASE_MS << self.attempt.min(16)).min(Self::CAP_MS)
    }

    pub fn advance(&mut self) {
        self.attempt = self.attempt.saturating_add(1);
    }

    pub fn reset(&mut self) {
        self.attempt = 0;
    }

    /// The first `n` delays.
    pub fn schedule(n: usize) -> Vec<u64> {
        let mut b = Self::new();
        (0..n)
            .map(|_| {
                let d = b.delay_ms();
                b.advance();
                d
            })
            .collect()
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub id: ClientId,
    pub session: String,
    pub substructure: SubstructureId,
    /// Mode to create the session with if it does not exist.
    pub mode: Option<SessionMode>,
    pub role: Option<Role>,
    /// Quiet time after activity before checking for losses.
    pub probe_delay_ms: u64,
    /// How long to wait for a PONG before probing again.
    pub probe_timeout_ms: u64,
    /// Probe interval while nothing happens.
    pub heartbeat_ms: u64,
}

impl DeviceConfig {
    pub fn new(id: ClientId, session: impl Into<String>, substructure: SubstructureId) -> Self {
        Self {
            id,
            session: session.into(),
            substructure,
            mode: None,
            role: None,
            probe_delay_ms: 1_000,
            probe_timeout_ms: 2_000,
            heartbeat_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    Offline,
    /// HELLO sent, no WELCOME yet.
    Joining,
    /// Welcomed; waiting for the recovery fetch.
    Recovering,
    Live,
    /// Refused by the hub for a reason retrying cannot fix.
    Rejected(ErrorCode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Probe {
    sent_at: u64,
    sent_count: u64,
    /// Something happened after the PING left; the answer cannot vouch for it.
    stale: bool,
}

#[derive(Debug, Clone)]
pub struct DeviceClient {
    cfg: DeviceConfig,
    pub state: DeviceState<f64>,
    /// Last known registers of every substructure in the session.
    known: TopologyF64,
    link: LinkState,
    role: Option<Role>,
    backoff: Backoff,
    hello_deadline: Option<u64>,
    seq: u64,
    sent: u64,
    accepted: u64,
    lost_up: u64,
    lost_down: u64,
    probe_at: Option<u64>,
    probe: Option<Probe>,
    verified_hub_sent: Option<u64>,
    fetch_in_flight: bool,
    replace_on_fetch: bool,
    outbox: Vec<SyncEnvelope>,
    errors: Vec<ErrorPayload>,
    saved: Vec<teleshift_core::SnapshotMeta>,
}

fn fatal(code: ErrorCode) -> bool {
    matches!(
        code,
        ErrorCode::SecondPresenter | ErrorCode::RoleModeMismatch | ErrorCode::MalformedEnvelope
    )
}

impl DeviceClient {
    pub fn new(cfg: DeviceConfig) -> Self {
        let state = DeviceState::new(cfg.substructure.clone(), cfg.id.clone());
        Self {
            cfg,
            state,
            known: TopologyF64::new(),
            link: LinkState::Offline,
            role: None,
            backoff: Backoff::new(),
            hello_deadline: None,
            seq: 0,
            sent: 0,
            accepted: 0,
            lost_up: 0,
            lost_down: 0,
            probe_at: None,
            probe: None,
            verified_hub_sent: None,
            fetch_in_flight: false,
            replace_on_fetch: false,
            outbox: Vec::new(),
            errors: Vec::new(),
            saved: Vec::new(),
        }
    }

    pub fn id(&self) -> &ClientId {
        &self.cfg.id
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn link(&self) -> LinkState {
        self.link
    }

    pub fn role(&self) -> Option<Role> {
        self.role
    }

    pub fn errors(&self) -> &[ErrorPayload] {
        &self.errors
    }

    pub fn saved_snapshots(&self) -> &[teleshift_core::SnapshotMeta] {
        &self.saved
    }

    pub fn known(&self) -> &TopologyF64 {
        &self.known
    }

    /// Envelopes accepted from the hub on the current connection.
    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn take_outbox(&mut self) -> Vec<SyncEnvelope> {
        std::mem::take(&mut self.outbox)
    }

    fn send(&mut self, kind: Kind, payload: impl serde::Serialize) {
        self.seq += 1;
        self.sent += 1;
        let mut env = SyncEnvelope::new(kind, self.cfg.session.clone(), self.cfg.id.to_string(), payload);
        env.seq = self.seq;
        self.outbox.push(env);
    }

    fn activity(&mut self, now: u64) {
        self.verified_hub_sent = None;
        if let Some(p) = &mut self.probe {
            p.stale = true;
        }
        let due = now + self.cfg.probe_delay_ms;
        if self.probe.is_none() && self.probe_at.is_none_or(|t| t > due) {
            self.probe_at = Some(due);
        }
    }

    fn send_hello(&mut self, now: u64) {
        let hello = Hello {
            mode: self.cfg.mode,
            role: self.cfg.role,
            substructures: vec![self.cfg.substructure.clone()],
        };
        self.send(Kind::Hello, hello);
        self.hello_deadline = Some(now + self.backoff.delay_ms());
    }

    /// A new connection to the hub is open.
    pub fn connect_started(&mut self, now: u64) {
        self.seq = 0;
        self.sent = 0;
        self.accepted = 0;
        self.lost_up = 0;
        self.lost_down = 0;
        self.probe = None;
        self.probe_at = None;
        self.verified_hub_sent = None;
        self.fetch_in_flight = false;
        self.outbox.clear();
        self.link = LinkState::Joining;
        self.send_hello(now);
    }

    /// The connection is gone; edits queue until the next one.
    pub fn connection_lost(&mut self) {
        if !matches!(self.link, LinkState::Rejected(_)) {
            self.link = LinkState::Offline;
        }
        self.state.connected = false;
        self.hello_deadline = None;
        self.probe = None;
        self.probe_at = None;
        self.verified_hub_sent = None;
        self.outbox.clear();
    }

    /// Earliest time [`DeviceClient::poll`] has something to do.
    pub fn next_deadline(&self) -> Option<u64> {
        let probe_timeout = self.probe.map(|p| p.sent_at + self.cfg.probe_timeout_ms);
        [self.hello_deadline, self.probe_at, probe_timeout]
            .into_iter()
            .flatten()
            .min()
    }

    pub fn poll(&mut self, now: u64) {
        if let Some(deadline) = self.hello_deadline {
            if now >= deadline && self.link == LinkState::Joining {
                self.backoff.advance();
                self.send_hello(now);
            }
        }
        if let Some(p) = self.probe {
            if now >= p.sent_at + self.cfg.probe_timeout_ms {
                // PING or PONG went missing: that loss shows up in the counts
                // of the next probe.
                self.probe = None;
                self.probe_at = Some(now);
            }
        }
        if let Some(at) = self.probe_at {
            if now >= at && self.probe.is_none() && self.is_welcomed() {
                self.probe_at = None;
                self.send(Kind::Ping, Ping { sent: self.sent + 1 });
                self.probe = Some(Probe {
                    sent_at: now,
                    sent_count: self.sent,
                    stale: false,
                });
            }
        }
    }

    fn is_welcomed(&self) -> bool {
        matches!(self.link, LinkState::Recovering | LinkState::Live)
    }

    fn request_full_state(&mut self, now: u64, reset: bool) {
        self.fetch_in_flight = true;
        self.send(Kind::FullStateRequest, FullStateRequest { reset });
        self.activity(now);
    }

    pub fn handle(&mut self, env: &SyncEnvelope, now: u64) {
        self.accepted += 1;
        match env.kind {
            Kind::Ping => {
                let ping: Ping = env.payload_as().unwrap_or_default();
                let pong = Pong {
                    expect: ping.sent,
                    accepted: self.accepted,
                    sent: self.sent,
                };
                self.send(Kind::Pong, pong);
            }
            Kind::Pong => {
                if let Ok(pong) = env.payload_as::<Pong>() {
                    self.on_pong(pong, now);
                }
            }
            Kind::Welcome => {
                if let Ok(welcome) = env.payload_as::<Welcome>() {
                    self.on_welcome(welcome, now);
                }
            }
            Kind::FullState => {
                if let Ok(full) = env.payload_as::<FullState>() {
                    self.on_full_state(full, now);
                }
            }
            Kind::Update => {
                if let Ok(updates) = env.payload_as::<Updates>() {
                    self.apply_remote(&updates.updates);
                }
                self.activity(now);
            }
            Kind::SnapshotRestore => {
                if let Ok(restored) = env.payload_as::<SnapshotRestored>() {
                    self.apply_remote(&restored.updates);
                }
                self.activity(now);
            }
            Kind::SnapshotSave => {
                if let Ok(saved) = env.payload_as::<teleshift_hub::envelope::SnapshotSaved>() {
                    self.saved.push(saved.snapshot);
                }
                self.activity(now);
            }
            Kind::ModeSet => {
                if let Ok(note) = env.payload_as::<ModeSet>() {
                    self.on_mode_set(note, now);
                }
            }
            Kind::Error => {
                if let Ok(err) = env.payload_as::<ErrorPayload>() {
                    self.on_error(err);
                }
                self.activity(now);
            }
            _ => self.activity(now),
        }
    }

    fn apply_remote(&mut self, updates: &[ArmUpdateF64]) {
        for u in updates {
            self.known.ensure_substructure(&u.substructure);
            self.known.merge_updates(std::iter::once(u));
            // Writes for other substructures only advance the clock.
            if self.state.on_remote_update(u).is_err() {
                self.state.clock.observe(&u.stamp);
            }
        }
    }

    fn on_welcome(&mut self, welcome: Welcome, now: u64) {
        if self.link != LinkState::Joining {
            return;
        }
        self.hello_deadline = None;
        self.backoff.reset();
        self.role = Some(welcome.role);
        self.link = LinkState::Recovering;
        self.request_full_state(now, false);
    }

    fn on_full_state(&mut self, full: FullState, now: u64) {
        self.fetch_in_flight = false;
        let view = full.shadow.unwrap_or(full.topology);
        self.known = view.clone();
        self.known.ensure_substructure(&self.cfg.substructure);
        if self.link == LinkState::Recovering || self.replace_on_fetch {
            self.replace_on_fetch = false;
            self.state.resync(&view);
            let newer = self.state.reconcile(&view);
            debug_assert!(newer.is_empty());
            self.link = LinkState::Live;
            self.state.connected = true;
            self.flush_pending(now);
        } else {
            let newer = self.state.reconcile(&view);
            if !newer.is_empty() {
                self.send(Kind::Update, Updates { updates: newer });
            }
        }
        self.activity(now);
    }

    fn flush_pending(&mut self, now: u64) {
        let pending: Vec<_> = self.state.pending_overrides.drain(..).collect();
        let mut updates = Vec::new();
        for edit in pending {
            match edit {
                PendingEdit::Override(arm, mm) => updates.push(self.state.apply_manual_override(arm, mm)),
                PendingEdit::Join(arm, mate) => {
                    let target = self.known_target(&mate, arm.opposite());
                    updates.extend(self.state.join(arm, mate, target));
                }
            }
        }
        if !updates.is_empty() {
            self.send(Kind::Update, Updates { updates });
            self.activity(now);
        }
    }

    fn known_target(&self, sub: &SubstructureId, arm: ArmId) -> f64 {
        self.known.get(sub).map_or(0.0, |s| s.arm(arm).target)
    }

    fn on_pong(&mut self, pong: Pong, now: u64) {
        let Some(probe) = self.probe else {
            return;
        };
        if pong.expect != probe.sent_count {
            return;
        }
        self.probe = None;
        let lost_up = pong.expect.saturating_sub(pong.accepted);
        let lost_down = pong.sent.saturating_sub(self.accepted - 1);
        let fresh_loss = lost_up > self.lost_up || lost_down > self.lost_down;
        self.lost_up = self.lost_up.max(lost_up);
        self.lost_down = self.lost_down.max(lost_down);
        if fresh_loss {
            // During recovery this re-sends the fetch that may have been lost.
            self.request_full_state(now, false);
        } else if probe.stale || self.fetch_in_flight {
            self.activity(now);
        } else {
            // Everything either side sent is accounted for.
            self.verified_hub_sent = Some(pong.sent + 1);
            self.probe_at = Some(now + self.cfg.heartbeat_ms);
        }
    }

    fn on_mode_set(&mut self, note: ModeSet, now: u64) {
        self.role = Some(
            note.roles
                .get(&self.cfg.id)
                .copied()
                .unwrap_or_else(|| note.mode.default_role()),
        );
        // Shadows are gone on the hub; adopt its state as is.
        self.replace_on_fetch = true;
        self.request_full_state(now, false);
    }

    fn on_error(&mut self, err: ErrorPayload) {
        if self.link == LinkState::Joining && fatal(err.code) {
            self.link = LinkState::Rejected(err.code);
            self.hello_deadline = None;
        }
        self.errors.push(err);
    }

    /// A hand pushes an arm.
    pub fn override_arm(&mut self, arm: ArmId, mm: f64, now: u64) -> ArmUpdateF64 {
        let update = self.state.apply_manual_override(arm, mm);
        if self.link == LinkState::Live {
            self.send(Kind::Update, Updates { updates: vec![update.clone()] });
            self.activity(now);
        }
        update
    }

    /// Latches `arm` onto the opposite arm of `mate`.
    pub fn join(&mut self, arm: ArmId, mate: SubstructureId, now: u64) -> Vec<ArmUpdateF64> {
        let target = self.known_target(&mate, arm.opposite());
        let updates = self.state.join(arm, mate, target).to_vec();
        if self.link == LinkState::Live {
            self.known.merge_updates(&updates);
            self.send(Kind::Update, Updates { updates: updates.clone() });
            self.activity(now);
        }
        updates
    }

    /// Returns false when offline; snapshot commands are not queued.
    pub fn snapshot_save(&mut self, label: &str, now: u64) -> bool {
        if self.link != LinkState::Live {
            return false;
        }
        self.send(Kind::SnapshotSave, SnapshotSave { label: label.into() });
        self.activity(now);
        true
    }

    pub fn snapshot_restore(&mut self, snapshot_id: &str, now: u64) -> bool {
        if self.link != LinkState::Live {
            return false;
        }
        self.send(
            Kind::SnapshotRestore,
            SnapshotRestore {
                snapshot_id: snapshot_id.into(),
            },
        );
        self.activity(now);
        true
    }

    pub fn set_mode(&mut self, mode: SessionMode, roles: BTreeMap<ClientId, Role>, now: u64) -> bool {
        if self.link != LinkState::Live {
            return false;
        }
        self.send(Kind::ModeSet, ModeSet { mode, roles });
        self.activity(now);
        true
    }

    /// True once the device is live, has nothing queued, and its latest
    /// probe accounted for every envelope up to the hub having sent
    /// `hub_sent` on this connection.
    pub fn is_idle(&self, hub_sent: u64) -> bool {
        self.link == LinkState::Live
            && self.state.pending_overrides.is_empty()
            && !self.fetch_in_flight
            && self.verified_hub_sent == Some(hub_sent)
    }
}
