#![allow(dead_code)]

use std::sync::mpsc::{self, Receiver};
use std::sync::Arc;

use serde::Serialize;
use teleshift_core::{ArmId, ArmUpdateF64, LamportClock, Role, SessionMode, SubstructureId};
use teleshift_hub::envelope::{ErrorPayload, Hello, Updates, Welcome};
use teleshift_hub::{ConnId, ErrorCode, Hub, Kind, SyncEnvelope};

pub struct Member {
    pub hub: Arc<Hub>,
    pub conn: ConnId,
    pub rx: Receiver<SyncEnvelope>,
    pub session: String,
    pub client: String,
    pub seq: u64,
    pub clock: LamportClock,
    pub now: u64,
}

impl Member {
    pub fn connect(hub: &Arc<Hub>, session: &str, client: &str) -> Self {
        let (tx, rx) = mpsc::channel();
        let conn = hub.connect(tx);
        Self {
            hub: hub.clone(),
            conn,
            rx,
            session: session.into(),
            client: client.into(),
            seq: 0,
            clock: LamportClock::new(client.parse().unwrap()),
            now: 1_000,
        }
    }

    pub fn envelope(&mut self, kind: Kind, payload: impl Serialize) -> SyncEnvelope {
        self.seq += 1;
        let mut env = SyncEnvelope::new(kind, self.session.clone(), self.client.clone(), payload);
        env.seq = self.seq;
        env
    }

    pub fn send(&mut self, kind: Kind, payload: impl Serialize) {
        let env = self.envelope(kind, payload);
        self.hub.receive(self.conn, env, self.now);
    }

    pub fn drain(&self) -> Vec<SyncEnvelope> {
        self.rx.try_iter().collect()
    }

    pub fn expect(&self, kind: Kind) -> SyncEnvelope {
        let got = self.drain();
        let mut matching: Vec<_> = got.iter().filter(|e| e.kind == kind).cloned().collect();
        assert_eq!(matching.len(), 1, "expected one {kind} for {}, got {got:?}", self.client);
        matching.remove(0)
    }

    pub fn expect_error(&self, code: ErrorCode) {
        let env = self.expect(Kind::Error);
        let err: ErrorPayload = env.payload_as().unwrap();
        assert_eq!(err.code, code, "{}", err.message);
    }

    pub fn hello(&mut self, mode: Option<SessionMode>, role: Option<Role>, subs: &[&str]) {
        let hello = Hello {
            mode,
            role,
            substructures: subs.iter().map(|s| s.parse().unwrap()).collect(),
        };
        self.send(Kind::Hello, hello);
    }

    pub fn join(&mut self, mode: SessionMode, role: Option<Role>, subs: &[&str]) -> Welcome {
        self.hello(Some(mode), role, subs);
        self.expect(Kind::Welcome).payload_as().unwrap()
    }

    pub fn edit(&mut self, sub: &str, arm: ArmId, target: f64) -> ArmUpdateF64 {
        ArmUpdateF64 {
            substructure: sub.parse::<SubstructureId>().unwrap(),
            arm,
            target,
            jointed: false,
            mate: None,
            stamp: self.clock.stamp_next(),
        }
    }

    pub fn update(&mut self, updates: Vec<ArmUpdateF64>) {
        self.send(Kind::Update, Updates { updates });
    }
}
