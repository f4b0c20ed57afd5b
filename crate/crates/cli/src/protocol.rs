//! JSON messages exchanged over the live socket. The event log uses the same
//! `{type|kind, tick, payload}` layout so a recorded log can be re-served as is.

use modir_core::inference::{Event, EventKind, WeightScheme};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Hello,
    State,
    LatentUpdate,
    Chunk,
    SetLatent,
    SetScheme,
    Metrics,
    Reset,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    /// Control tick within the current episode.
    pub tick: usize,
    #[serde(default)]
    pub payload: Value,
}

impl WireMessage {
    pub fn new(kind: MessageType, tick: usize, payload: Value) -> Self {
        Self { kind, tick, payload }
    }

    pub fn error(tick: usize, message: impl Into<String>) -> Self {
        Self::new(MessageType::Error, tick, json!({ "message": message.into() }))
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }
}

impl From<&Event> for WireMessage {
    fn from(e: &Event) -> Self {
        let kind = match e.kind {
            EventKind::State => MessageType::State,
            EventKind::LatentUpdate => MessageType::LatentUpdate,
            EventKind::Chunk => MessageType::Chunk,
        };
        Self::new(kind, e.tick, e.payload.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Controller,
    Viewer,
}

/// Requests a client may send.
#[derive(Clone, Debug, PartialEq)]
pub enum Inbound {
    SetDim { dim: usize, value: f64 },
    SetAll(Vec<f64>),
    SetScheme(WeightScheme),
    Reset,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LatentPayload {
    dim: Option<usize>,
    value: Option<f64>,
    z: Option<Vec<f64>>,
}

/// Parses a client frame; the error text goes back in an error frame.
pub fn parse_inbound(text: &str) -> Result<Inbound, String> {
    #[derive(Deserialize)]
    struct Frame {
        #[serde(rename = "type")]
        kind: MessageType,
        #[serde(default)]
        payload: Value,
    }
    let frame: Frame = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    match frame.kind {
        MessageType::SetLatent => {
            let p: LatentPayload =
                serde_json::from_value(frame.payload).map_err(|e| format!("malformed set_latent payload: {e}"))?;
            match (p.dim, p.value, p.z) {
                (Some(dim), Some(value), None) => Ok(Inbound::SetDim { dim, value }),
                (None, None, Some(z)) => Ok(Inbound::SetAll(z)),
                _ => Err("set_latent needs either {dim, value} or {z}".into()),
            }
        }
        MessageType::SetScheme => {
            let name = frame
                .payload
                .get("scheme")
                .and_then(Value::as_str)
                .ok_or("set_scheme needs a string \"scheme\"")?;
            WeightScheme::parse(name).map(Inbound::SetScheme).map_err(|e| e.to_string())
        }
        MessageType::Reset => Ok(Inbound::Reset),
        other => Err(format!("{} messages are sent by the service only", json!(other).as_str().unwrap_or("?"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_client_frames() {
        assert_eq!(
            parse_inbound(r#"{"type":"set_latent","payload":{"dim":1,"value":2.0}}"#),
            Ok(Inbound::SetDim { dim: 1, value: 2.0 })
        );
        assert_eq!(
            parse_inbound(r#"{"type":"set_latent","tick":4,"payload":{"z":[0,1,0]}}"#),
            Ok(Inbound::SetAll(vec![0.0, 1.0, 0.0]))
        );
        assert_eq!(
            parse_inbound(r#"{"type":"set_scheme","payload":{"scheme":"none"}}"#),
            Ok(Inbound::SetScheme(WeightScheme::None))
        );
        assert_eq!(parse_inbound(r#"{"type":"reset"}"#), Ok(Inbound::Reset));
    }

    #[test]
    fn rejects_bad_frames() {
        for bad in [
            "not json",
            r#"{"type":"state","payload":{}}"#,
            r#"{"type":"set_latent","payload":{"dim":1}}"#,
            r#"{"type":"set_latent","payload":{"dim":1,"value":1,"z":[1]}}"#,
            r#"{"type":"set_scheme","payload":{"scheme":"cubic"}}"#,
            r#"{"type":"teleport"}"#,
        ] {
            assert!(parse_inbound(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn event_maps_onto_wire_layout() {
        let e = Event {
            tick: 40,
            kind: EventKind::LatentUpdate,
            payload: json!({"z": [1.0, 0.0, 0.0], "version": 2}),
        };
        let text = WireMessage::from(&e).to_text();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "latent_update");
        assert_eq!(v["tick"], 40);
        assert_eq!(v["payload"]["version"], 2);
    }
}
