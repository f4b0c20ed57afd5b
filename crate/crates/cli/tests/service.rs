use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use modir::protocol::{MessageType, WireMessage};
use modir::serve::{replay, serve, ServeOptions};
use modir_core::dataset::Normalization;
use modir_core::inference::{read_events, EngineConfig};
use modir_core::model::{Cvae, LatentSpec, ModelCheckpoint, ModelConfig};
use modir_core::sim::ScenarioConfig;
use serde_json::json;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn tiny_model() -> Arc<ModelCheckpoint> {
    let scenario = ScenarioConfig::wiping(3);
    let spec = LatentSpec::new(vec!["physical".into(), "temporal".into()], 1);
    let mut cfg = ModelConfig::desk(scenario.state_dim(), 6, spec);
    cfg.hidden_dim = 8;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 1;
    Arc::new(ModelCheckpoint {
        model: Cvae::new(cfg, 5).unwrap(),
        normalization: Normalization::identity(scenario.state_dim()),
        scenario,
        training: serde_json::Value::Null,
    })
}

fn options(log: Option<std::path::PathBuf>) -> ServeOptions {
    ServeOptions {
        addr: "127.0.0.1:0".parse().unwrap(),
        rate_hz: 30.0,
        pace: 1.0,
        log,
    }
}

fn client(url: &str) -> Client {
    let (ws, _) = connect(url).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    }
    ws
}

fn next(ws: &mut Client) -> WireMessage {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            _ => continue,
        }
    }
}

fn next_of(ws: &mut Client, kind: MessageType) -> WireMessage {
    loop {
        let m = next(ws);
        if m.kind == kind {
            return m;
        }
    }
}

fn send(ws: &mut Client, v: serde_json::Value) {
    ws.send(Message::text(v.to_string())).unwrap();
}

#[test]
fn live_session_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let engine = EngineConfig {
        duration_ticks: 1_000_000,
        ..EngineConfig::default()
    };
    let service = serve(tiny_model(), engine, options(Some(log.clone()))).unwrap();
    let mut a = client(&service.url());
    let hello = next_of(&mut a, MessageType::Hello);
    assert_eq!(hello.payload["role"], "controller");
    assert_eq!(hello.payload["latent"]["constrained"], 2);
    assert_eq!(hello.payload["latent"]["directive_names"], json!(["physical", "temporal"]));

    let mut b = client(&service.url());
    assert_eq!(next_of(&mut b, MessageType::Hello).payload["role"], "viewer");

    // state stream arrives at the throttled rate with increasing ticks
    let start = Instant::now();
    let mut ticks = Vec::new();
    while ticks.len() < 10 {
        ticks.push(next_of(&mut a, MessageType::State).tick);
    }
    assert!(ticks.windows(2).all(|w| w[0] < w[1]), "{ticks:?}");
    assert!(start.elapsed() < Duration::from_secs(2));

    let sent = Instant::now();
    send(&mut a, json!({"type": "set_latent", "tick": 0, "payload": {"dim": 1, "value": 2.0}}));
    let ack = next_of(&mut a, MessageType::LatentUpdate);
    assert!(sent.elapsed() < Duration::from_millis(250));
    assert_eq!(ack.payload["z"], json!([0.0, 2.0, 0.0]));
    assert_eq!(next_of(&mut b, MessageType::LatentUpdate).payload["version"], ack.payload["version"]);
    // the engine regenerates with the new command
    loop {
        let s = next_of(&mut a, MessageType::State);
        if s.payload["z"] == json!([0.0, 2.0, 0.0]) {
            break;
        }
    }

    send(&mut b, json!({"type": "set_latent", "payload": {"dim": 0, "value": 1.0}}));
    let refused = next_of(&mut b, MessageType::Error);
    assert!(refused.payload["message"].as_str().unwrap().contains("viewer"));

    a.send(Message::text("{not json")).unwrap();
    assert!(next_of(&mut a, MessageType::Error).payload["message"].as_str().unwrap().contains("malformed"));
    send(&mut a, json!({"type": "set_latent", "payload": {"dim": 7, "value": 1.0}}));
    next_of(&mut a, MessageType::Error);

    send(&mut a, json!({"type": "set_scheme", "payload": {"scheme": "none"}}));
    loop {
        if next_of(&mut a, MessageType::State).payload["scheme"] == "none" {
            break;
        }
    }

    send(&mut a, json!({"type": "reset"}));
    loop {
        let s = next_of(&mut a, MessageType::State);
        if s.payload["episode"] == 1 {
            assert!(s.tick < 100, "tick {} after reset", s.tick);
            break;
        }
    }

    // the lock passes to the remaining session
    a.close(None).unwrap();
    let promoted = next_of(&mut b, MessageType::Hello);
    assert_eq!(promoted.payload["role"], "controller");
    drop(b);
    service.shutdown().unwrap();

    let events = read_events(std::io::BufReader::new(std::fs::File::open(&log).unwrap())).unwrap();
    let updates: Vec<_> = events.iter().filter(|e| e.kind == modir_core::inference::EventKind::LatentUpdate).collect();
    assert_eq!(updates.len(), 1);
    assert_eq!(updates[0].payload["z"], json!([0.0, 2.0, 0.0]));
}

#[test]
fn replay_serves_every_event() {
    let model = tiny_model();
    let cfg = EngineConfig {
        duration_ticks: 400,
        ..EngineConfig::default()
    };
    let cmds = [modir_core::inference::ScheduledCommand {
        tick: 130,
        write: modir_core::inference::LatentWrite::Dim { dim: 0, value: 1.5 },
    }];
    let run = modir_core::inference::run_online(model, &cfg, &cmds).unwrap();
    let expected = run.events.len();
    let opts = ServeOptions {
        pace: 0.0,
        ..options(None)
    };
    let service = replay(run.events.clone(), cfg.control_dt, opts).unwrap();
    let mut c = client(&service.url());
    let hello = next_of(&mut c, MessageType::Hello);
    assert_eq!((hello.payload["mode"].as_str(), hello.payload["role"].as_str()), (Some("replay"), Some("viewer")));
    let mut got = Vec::new();
    loop {
        let m = next(&mut c);
        if m.kind == MessageType::Metrics {
            break;
        }
        got.push(m);
    }
    assert_eq!(got.len(), expected);
    let markers = got.iter().filter(|m| m.kind == MessageType::LatentUpdate).count();
    assert_eq!(markers, 1);
    for (m, e) in got.iter().zip(&run.events) {
        assert_eq!((m.tick, &m.payload), (e.tick, &e.payload));
    }
    drop(c);
    service.shutdown().unwrap();
}
