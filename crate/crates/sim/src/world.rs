//! Deterministic discrete-event run of a whole session.
//!
//! The real [`Hub`] runs in-process; devices reach it over seeded impaired
//! links. Events are ordered by (virtual time, insertion order), so a
//! scenario with fixed seeds always produces the same trace. Arms are
//! actuated on a fixed tick grid while any of them is moving.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::mpsc::{self, Receiver};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use teleshift_core::{state_hash, ArmId, ArmStateF64, Role, SessionMode, SubstructureF64, SubstructureId};
use teleshift_hub::{ClientId, ConnId, Hub, SessionRecord, SyncEnvelope, HUB_SENDER};

use crate::client::{DeviceClient, DeviceConfig, LinkState};
use crate::net::Link;
use crate::scenario::{Action, Event, Scenario, ScenarioError};

/// Extensions closer than this to their target count as settled.
pub const SETTLE_TOL_MM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub device: ClientId,
    pub substructure: SubstructureId,
    pub arm: ArmId,
    pub expected: ArmStateF64,
    pub actual: ArmStateF64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreRecord {
    pub at_ms: u64,
    pub device: ClientId,
    pub snapshot_id: String,
    /// The device's private differences from the presenter just before.
    pub local_diffs_before: Vec<Divergence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceError {
    pub device: ClientId,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub session: String,
    pub mode: SessionMode,
    pub converged: bool,
    /// Virtual time at which the run became quiescent.
    pub settle_ms: u64,
    /// SHA-256 of the canonical JSON of each replica: one entry per device
    /// (its substructure), `hub` for the authoritative assembly and
    /// `hub/<substructure>` for each of its substructures.
    pub final_state_hash: BTreeMap<String, String>,
    /// Replicas that disagree with the state the hub holds for them.
    pub divergences: Vec<Divergence>,
    /// Presentation mode: followers' own edits, listed but not counted.
    pub local_diffs: Vec<Divergence>,
    pub restores: Vec<RestoreRecord>,
    pub errors: Vec<DeviceError>,
    pub network: NetworkStats,
}

impl ScenarioReport {
    /// Canonical JSON (sorted keys), newline-terminated.
    pub fn to_json(&self) -> String {
        teleshift_core::canonical_json(self).expect("report serializes") + "\n"
    }
}

/// One envelope that reached its destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub at_ms: u64,
    /// Device id, or `hub`.
    pub from: String,
    pub to: String,
    pub envelope: SyncEnvelope,
}

#[derive(Debug)]
enum Step {
    Script(usize),
    ToHub { device: usize, generation: u64, envelope: SyncEnvelope },
    ToDevice { device: usize, generation: u64, envelope: SyncEnvelope },
    Tick,
    Timer(usize),
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    order: u64,
    step: Step,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.order).cmp(&(self.at, self.order))
    }
}

struct SimDevice {
    client: DeviceClient,
    conn: Option<(ConnId, Receiver<SyncEnvelope>)>,
    generation: u64,
    up: Link,
    down: Link,
    timer_at: Option<u64>,
}

pub struct World {
    scenario: Scenario,
    timeline: Vec<Event>,
    next_script: usize,
    now: u64,
    hub: Arc<Hub>,
    devices: Vec<SimDevice>,
    queue: BinaryHeap<Scheduled>,
    order: u64,
    in_flight: usize,
    tick_at: Option<u64>,
    trace: Vec<Delivery>,
    restores: Vec<RestoreRecord>,
    stats: NetworkStats,
    started: bool,
    pace: Option<Instant>,
}

impl World {
    pub fn new(scenario: Scenario) -> Self {
        Self::with_hub(scenario, Arc::new(Hub::new()))
    }

    /// Runs against a caller-supplied hub, e.g. one also served over TCP.
    pub fn with_hub(scenario: Scenario, hub: Arc<Hub>) -> Self {
        let devices = scenario
            .devices
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut cfg = DeviceConfig::new(spec.id.clone(), scenario.session.to_string(), spec.substructure.clone());
                cfg.mode = Some(scenario.mode);
                cfg.role = spec.role;
                SimDevice {
                    client: DeviceClient::new(cfg),
                    conn: None,
                    generation: 0,
                    up: Link::new(scenario.net, 2 * i as u64),
                    down: Link::new(scenario.net, 2 * i as u64 + 1),
                    timer_at: None,
                }
            })
            .collect();
        Self {
            timeline: scenario.timeline(),
            scenario,
            next_script: 0,
            now: 0,
            hub,
            devices,
            queue: BinaryHeap::new(),
            order: 0,
            in_flight: 0,
            tick_at: None,
            trace: Vec::new(),
            restores: Vec::new(),
            stats: NetworkStats::default(),
            started: false,
            pace: None,
        }
    }

    /// Maps virtual time onto the wall clock from now on.
    pub fn realtime(mut self) -> Self {
        self.pace = Some(Instant::now());
        self
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn trace(&self) -> &[Delivery] {
        &self.trace
    }

    pub fn session(&self) -> Option<SessionRecord> {
        self.hub.session(self.scenario.session.as_str())
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceClient> {
        self.devices.iter().map(|d| &d.client)
    }

    pub fn device(&self, id: &str) -> Option<&DeviceClient> {
        self.devices().find(|c| c.id().as_str() == id)
    }

    fn push(&mut self, at: u64, step: Step) {
        self.order += 1;
        self.queue.push(Scheduled {
            at,
            order: self.order,
            step,
        });
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for i in 0..self.devices.len() {
            if !self.scenario.devices[i].offline {
                self.open(i);
            }
        }
        for k in 0..self.timeline.len() {
            let at = self.timeline[k].at_ms;
            self.push(at, Step::Script(k));
        }
        self.after_step();
    }

    /// Runs until quiescence and reports.
    pub fn run(&mut self) -> Result<ScenarioReport, ScenarioError> {
        self.start();
        while !self.quiescent() {
            let Some(next) = self.queue.pop() else {
                break;
            };
            if next.at > self.scenario.limit_ms {
                return Err(ScenarioError::Timeout {
                    limit_ms: self.scenario.limit_ms,
                });
            }
            self.advance(next);
        }
        Ok(self.report())
    }

    /// Processes every event scheduled up to and including `until_ms`.
    pub fn run_until(&mut self, until_ms: u64) {
        self.start();
        while self.queue.peek().is_some_and(|n| n.at <= until_ms) {
            let next = self.queue.pop().expect("peeked");
            self.advance(next);
        }
        self.now = self.now.max(until_ms);
    }

    fn advance(&mut self, next: Scheduled) {
        self.now = next.at;
        if let Some(start) = self.pace {
            let due = start + Duration::from_millis(self.now);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        self.process(next.step);
        self.after_step();
    }

    fn process(&mut self, step: Step) {
        let now = self.now;
        match step {
            Step::Script(k) => {
                self.next_script = self.next_script.max(k + 1);
                let event = self.timeline[k].clone();
                self.script(&event);
            }
            Step::ToHub {
                device,
                generation,
                envelope,
            } => {
                self.in_flight -= 1;
                let d = &self.devices[device];
                let Some((conn, _)) = d.conn.as_ref().filter(|_| d.generation == generation) else {
                    return;
                };
                let conn = *conn;
                self.stats.delivered += 1;
                self.trace.push(Delivery {
                    at_ms: now,
                    from: d.client.id().to_string(),
                    to: HUB_SENDER.into(),
                    envelope: envelope.clone(),
                });
                self.hub.receive(conn, envelope, now);
                self.drain_hub();
            }
            Step::ToDevice {
                device,
                generation,
                envelope,
            } => {
                self.in_flight -= 1;
                let d = &mut self.devices[device];
                if d.conn.is_none() || d.generation != generation {
                    return;
                }
                self.stats.delivered += 1;
                self.trace.push(Delivery {
                    at_ms: now,
                    from: HUB_SENDER.into(),
                    to: d.client.id().to_string(),
                    envelope: envelope.clone(),
                });
                d.client.handle(&envelope, now);
            }
            Step::Tick => {
                self.tick_at = None;
                let params = self.scenario.actuation;
                for d in &mut self.devices {
                    d.client.state.tick(&params);
                }
            }
            Step::Timer(i) => {
                let d = &mut self.devices[i];
                if d.timer_at == Some(now) {
                    d.timer_at = None;
                    d.client.poll(now);
                }
            }
        }
    }

    fn script(&mut self, event: &Event) {
        let now = self.now;
        let Some(i) = self.devices.iter().position(|d| d.client.id() == &event.device) else {
            return;
        };
        match &event.action {
            Action::Override { arm, mm } => {
                self.devices[i].client.override_arm(*arm, *mm, now);
            }
            Action::Disconnect => self.close(i),
            Action::Reconnect => {
                if self.devices[i].conn.is_none() {
                    self.open(i);
                }
            }
            Action::Join { other_id, arm } => {
                self.devices[i].client.join(*arm, other_id.clone(), now);
            }
            Action::SnapshotSave { label } => {
                self.devices[i].client.snapshot_save(label, now);
            }
            Action::SnapshotRestore { id } => {
                let snapshot_id = self.resolve_snapshot(id);
                let local_diffs_before = self
                    .session()
                    .map(|r| self.local_diffs_of(&r, i))
                    .unwrap_or_default();
                self.restores.push(RestoreRecord {
                    at_ms: now,
                    device: event.device.clone(),
                    snapshot_id: snapshot_id.clone(),
                    local_diffs_before,
                });
                self.devices[i].client.snapshot_restore(&snapshot_id, now);
            }
        }
    }

    fn resolve_snapshot(&self, id_or_label: &str) -> String {
        let Some(record) = self.session() else {
            return id_or_label.into();
        };
        let metas = record.list_snapshots();
        if metas.iter().any(|m| m.snapshot_id == id_or_label) {
            return id_or_label.into();
        }
        metas
            .iter()
            .rev()
            .find(|m| m.label == id_or_label)
            .map_or_else(|| id_or_label.into(), |m| m.snapshot_id.clone())
    }

    fn open(&mut self, i: usize) {
        let (tx, rx) = mpsc::channel();
        let conn = self.hub.connect(tx);
        let d = &mut self.devices[i];
        d.generation += 1;
        d.conn = Some((conn, rx));
        d.client.connect_started(self.now);
    }

    fn close(&mut self, i: usize) {
        let d = &mut self.devices[i];
        if let Some((conn, _)) = d.conn.take() {
            self.hub.disconnect(conn);
        }
        d.generation += 1;
        d.client.connection_lost();
    }

    fn drain_hub(&mut self) {
        let now = self.now;
        let mut deliveries = Vec::new();
        for (i, d) in self.devices.iter_mut().enumerate() {
            let Some((_, rx)) = &d.conn else { continue };
            for envelope in rx.try_iter() {
                self.stats.sent += 1;
                match d.down.send(now) {
                    Some(at) => deliveries.push((at, i, d.generation, envelope)),
                    None => self.stats.dropped += 1,
                }
            }
        }
        for (at, device, generation, envelope) in deliveries {
            self.in_flight += 1;
            self.push(
                at,
                Step::ToDevice {
                    device,
                    generation,
                    envelope,
                },
            );
        }
    }

    fn after_step(&mut self) {
        let now = self.now;
        for i in 0..self.devices.len() {
            let outbox = self.devices[i].client.take_outbox();
            for envelope in outbox {
                self.stats.sent += 1;
                let d = &mut self.devices[i];
                if d.conn.is_none() {
                    self.stats.dropped += 1;
                    continue;
                }
                match d.up.send(now) {
                    Some(at) => {
                        let generation = d.generation;
                        self.in_flight += 1;
                        self.push(
                            at,
                            Step::ToHub {
                                device: i,
                                generation,
                                envelope,
                            },
                        );
                    }
                    None => self.stats.dropped += 1,
                }
            }
            if let Some(deadline) = self.devices[i].client.next_deadline() {
                let at = deadline.max(now);
                if self.devices[i].timer_at != Some(at) {
                    self.devices[i].timer_at = Some(at);
                    self.push(at, Step::Timer(i));
                }
            }
        }
        let moving = self
            .devices
            .iter()
            .any(|d| !d.client.state.is_settled(SETTLE_TOL_MM));
        if moving && self.tick_at.is_none() {
            let tick = self.scenario.actuation.tick_ms;
            let at = (now / tick + 1) * tick;
            self.tick_at = Some(at);
            self.push(at, Step::Tick);
        }
    }

    /// No script left, nothing in flight, every arm at its target and every
    /// connected device has confirmed it saw everything the hub sent it.
    pub fn quiescent(&self) -> bool {
        self.started
            && self.next_script >= self.timeline.len()
            && self.in_flight == 0
            && self.devices.iter().all(|d| {
                d.client.state.is_settled(SETTLE_TOL_MM)
                    && match (&d.conn, d.client.link()) {
                        (_, LinkState::Rejected(_)) => true,
                        (None, _) => true,
                        (Some((conn, _)), _) => self
                            .hub
                            .counters(*conn)
                            .is_some_and(|(_, sent)| d.client.is_idle(sent)),
                    }
            })
    }

    fn expected_for(&self, record: &SessionRecord, i: usize) -> SubstructureF64 {
        let client = &self.devices[i].client;
        let id = &client.config().substructure;
        record
            .view_of(client.id())
            .get(id)
            .cloned()
            .unwrap_or_else(|| SubstructureF64::new(id.clone()))
    }

    fn local_diffs_of(&self, record: &SessionRecord, i: usize) -> Vec<Divergence> {
        let client = &self.devices[i].client;
        if record.roles.get(client.id()) != Some(&Role::Follower) {
            return Vec::new();
        }
        let id = &client.config().substructure;
        let (Some(mine), Some(theirs)) = (record.view_of(client.id()).get(id), record.topology.get(id)) else {
            return Vec::new();
        };
        ArmId::ALL
            .into_iter()
            .filter(|&arm| {
                let (a, b) = (mine.arm(arm), theirs.arm(arm));
                a.target != b.target || a.jointed != b.jointed || a.mate != b.mate
            })
            .map(|arm| Divergence {
                device: client.id().clone(),
                substructure: id.clone(),
                arm,
                expected: theirs.arm(arm).clone(),
                actual: mine.arm(arm).clone(),
            })
            .collect()
    }

    pub fn report(&self) -> ScenarioReport {
        let record = self
            .session()
            .unwrap_or_else(|| SessionRecord::new(self.scenario.session.clone(), self.scenario.mode));
        let mut hashes = BTreeMap::new();
        let mut divergences = Vec::new();
        let mut local_diffs = Vec::new();
        let mut errors = Vec::new();
        for (i, d) in self.devices.iter().enumerate() {
            let actual = &d.client.state.substructure;
            hashes.insert(d.client.id().to_string(), state_hash(actual).expect("hashable"));
            let expected = self.expected_for(&record, i);
            for arm in ArmId::ALL {
                if actual.arm(arm) != expected.arm(arm) {
                    divergences.push(Divergence {
                        device: d.client.id().clone(),
                        substructure: actual.id.clone(),
                        arm,
                        expected: expected.arm(arm).clone(),
                        actual: actual.arm(arm).clone(),
                    });
                }
            }
            local_diffs.extend(self.local_diffs_of(&record, i));
            errors.extend(d.client.errors().iter().map(|e| DeviceError {
                device: d.client.id().clone(),
                code: e.code.to_string(),
                message: e.message.clone(),
            }));
        }
        hashes.insert(HUB_SENDER.into(), state_hash(&record.topology).expect("hashable"));
        for sub in record.topology.substructures() {
            hashes.insert(format!("{HUB_SENDER}/{}", sub.id), state_hash(sub).expect("hashable"));
        }
        ScenarioReport {
            scenario: self.scenario.name.clone(),
            session: self.scenario.session.to_string(),
            mode: record.mode,
            converged: divergences.is_empty(),
            settle_ms: self.now,
            final_state_hash: hashes,
            divergences,
            local_diffs,
            restores: self.restores.clone(),
            errors,
            network: self.stats,
        }
    }
}
