use std::io::{BufRead, BufReader, Read};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use teleshift_core::{ArmId, ArmUpdateF64, LamportClock, Role, SessionMode};
use teleshift_hub::client::{ClientError, HubClient};
use teleshift_hub::envelope::{Updates, Welcome};
use teleshift_hub::server::{serve, ServerConfig, ServerHandle};
use teleshift_hub::{ErrorCode, Hub, Kind, SyncEnvelope};
use tungstenite::Message;

const WAIT: Duration = Duration::from_secs(5);

fn start(heartbeat: Duration) -> ServerHandle {
    let config = ServerConfig {
        listen: "127.0.0.1:0".into(),
        ws_listen: Some("127.0.0.1:0".into()),
        heartbeat,
    };
    serve(Arc::new(Hub::new()), &config).unwrap()
}

fn edit(clock: &mut LamportClock, target: f64) -> ArmUpdateF64 {
    ArmUpdateF64 {
        substructure: "S1".parse().unwrap(),
        arm: ArmId::PosX,
        target,
        jointed: false,
        mate: None,
        stamp: clock.stamp_next(),
    }
}

#[test]
fn tcp_members_exchange_updates() {
    let server = start(Duration::from_secs(5));
    let addr = server.local_addr();
    let mut a = HubClient::connect(addr, "s1", "a").unwrap();
    let mut b = HubClient::connect(addr, "s1", "b").unwrap();
    let sub = vec!["S1".parse().unwrap()];
    a.hello(Some(SessionMode::Collaboration), None, sub.clone(), WAIT).unwrap();
    b.hello(Some(SessionMode::Collaboration), None, sub, WAIT).unwrap();

    let mut clock = LamportClock::new("a".parse().unwrap());
    let update = edit(&mut clock, 35.0);
    a.send(Kind::Update, Updates { updates: vec![update.clone()] }).unwrap();
    let got: Updates = b.expect(Kind::Update, WAIT).unwrap().payload_as().unwrap();
    assert_eq!(got.updates, vec![update]);
    server.shutdown();
}

#[test]
fn tcp_second_presenter_error() {
    let server = start(Duration::from_secs(5));
    let addr = server.local_addr();
    let mut t = HubClient::connect(addr, "class", "t").unwrap();
    t.hello(Some(SessionMode::Presentation), Some(Role::Presenter), vec![], WAIT).unwrap();
    let mut u = HubClient::connect(addr, "class", "u").unwrap();
    match u.hello(Some(SessionMode::Presentation), Some(Role::Presenter), vec![], WAIT) {
        Err(ClientError::Hub { code, .. }) => assert_eq!(code, ErrorCode::SecondPresenter),
        other => panic!("expected SecondPresenter, got {other:?}"),
    }
    server.shutdown();
}

#[test]
fn websocket_carries_the_same_envelopes() {
    let server = start(Duration::from_secs(5));
    let ws_url = format!("ws://{}", server.ws_addr().unwrap());
    let (mut ws, _) = tungstenite::connect(ws_url).unwrap();
    ws.get_ref_stream().set_read_timeout(Some(WAIT)).ok();

    let hello = r#"{"kind":"HELLO","session":"s1","sender":"browser","seq":1,"payload":{"mode":"collaboration","substructures":["S1"]}}"#;
    ws.send(Message::text(hello)).unwrap();
    let reply = ws.read().unwrap();
    let env = SyncEnvelope::from_line(reply.to_text().unwrap()).unwrap();
    assert_eq!(env.kind, Kind::Welcome);
    assert!(!reply.to_text().unwrap().contains('\n'));
    let welcome: Welcome = env.payload_as().unwrap();
    assert_eq!(welcome.role, Role::Peer);

    // A TCP device sees browser edits and vice versa.
    let mut device = HubClient::connect(server.local_addr(), "s1", "device").unwrap();
    device.hello(None, None, vec!["S1".parse().unwrap()], WAIT).unwrap();
    let mut clock = LamportClock::new("browser".parse().unwrap());
    let update = SyncEnvelope {
        seq: 2,
        ..SyncEnvelope::new(Kind::Update, "s1", "browser", Updates { updates: vec![edit(&mut clock, 20.0)] })
    };
    let mut text = update.to_line();
    text.pop();
    ws.send(Message::text(text)).unwrap();
    let got = device.expect(Kind::Update, WAIT).unwrap();
    assert_eq!(got.sender, "browser");

    let mut clock = LamportClock::new("device".parse().unwrap());
    clock.observe(&update.payload_as::<Updates>().unwrap().updates[0].stamp);
    device
        .send(Kind::Update, Updates { updates: vec![edit(&mut clock, 45.0)] })
        .unwrap();
    let echoed = ws.read().unwrap();
    let env = SyncEnvelope::from_line(echoed.to_text().unwrap()).unwrap();
    assert_eq!((env.kind, env.sender.as_str()), (Kind::Update, "device"));
    server.shutdown();
}

trait StreamRef {
    fn get_ref_stream(&self) -> &TcpStream;
}

impl StreamRef for tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>> {
    fn get_ref_stream(&self) -> &TcpStream {
        match self.get_ref() {
            tungstenite::stream::MaybeTlsStream::Plain(s) => s,
            _ => unreachable!("plain TCP only"),
        }
    }
}

#[test]
fn silent_connection_is_dropped_after_missed_heartbeats() {
    let server = start(Duration::from_millis(50));
    let stream = TcpStream::connect(server.local_addr()).unwrap();
    stream.set_read_timeout(Some(WAIT)).unwrap();
    let mut reader = BufReader::new(stream);
    let started = Instant::now();
    let mut pings = 0;
    let mut line = String::new();
    while reader.read_line(&mut line).unwrap() > 0 {
        assert_eq!(SyncEnvelope::from_line(&line).unwrap().kind, Kind::Ping);
        pings += 1;
        line.clear();
    }
    assert_eq!(pings, 3);
    assert!(started.elapsed() < WAIT);
    let mut rest = Vec::new();
    assert_eq!(reader.read_to_end(&mut rest).unwrap(), 0);
    server.shutdown();
}

#[test]
fn answering_client_stays_connected() {
    let server = start(Duration::from_millis(30));
    let mut a = HubClient::connect(server.local_addr(), "s1", "a").unwrap();
    a.hello(Some(SessionMode::Collaboration), None, vec![], WAIT).unwrap();
    // recv answers PINGs; nothing else arrives.
    assert!(a.recv(Duration::from_millis(400)).unwrap().is_none());
    a.send(Kind::FullStateRequest, serde_json::json!({})).unwrap();
    a.expect(Kind::FullState, WAIT).unwrap();
    server.shutdown();
}
