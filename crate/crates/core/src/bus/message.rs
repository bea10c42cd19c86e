//! Messages exchanged between nodes and the broker, carried in DATA frames.

use crate::authz::Action;
use crate::codec::{CodecError, Reader, Writer};
use crate::pki::Role;

use super::events::{EventKind, SecurityEvent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BusMessage {
    Register { subject: String, role: Role, publishes: Vec<String>, subscribes: Vec<String> },
    Ack,
    Nack { denied: Vec<(String, Action)> },
    /// Envelope wire bytes. The broker routes on the envelope's own topic.
    Publish { envelope: Vec<u8> },
    Deliver { envelope: Vec<u8> },
    Ping(u64),
    Pong(u64),
    /// A rejection observed by a node, forwarded to the broker's log.
    Report { kind: EventKind, subject: String, topic: String, detail: String },
    Event(SecurityEvent),
}

mod tag {
    pub const REGISTER: u8 = 1;
    pub const ACK: u8 = 2;
    pub const NACK: u8 = 3;
    pub const PUBLISH: u8 = 4;
    pub const DELIVER: u8 = 5;
    pub const PING: u8 = 6;
    pub const PONG: u8 = 7;
    pub const REPORT: u8 = 8;
    pub const EVENT: u8 = 9;
}

fn write_topics(w: &mut Writer, topics: &[String]) -> Result<(), CodecError> {
    w.u16(u16::try_from(topics.len()).map_err(|_| CodecError::FieldTooLong("topics"))?);
    for t in topics {
        w.str16("topic", t)?;
    }
    Ok(())
}

fn read_topics(r: &mut Reader) -> Result<Vec<String>, CodecError> {
    let n = r.u16()?;
    (0..n).map(|_| r.str16("topic")).collect()
}

fn action_code(a: Action) -> u8 {
    match a {
        Action::Publish => 0,
        Action::Subscribe => 1,
    }
}

impl BusMessage {
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        match self {
            BusMessage::Register { subject, role, publishes, subscribes } => {
                w.u8(tag::REGISTER).str16("subject", subject)?.u8(role.code());
                write_topics(&mut w, publishes)?;
                write_topics(&mut w, subscribes)?;
            }
            BusMessage::Ack => {
                w.u8(tag::ACK);
            }
            BusMessage::Nack { denied } => {
                w.u8(tag::NACK).u16(u16::try_from(denied.len()).map_err(|_| CodecError::FieldTooLong("denied"))?);
                for (topic, action) in denied {
                    w.str16("topic", topic)?.u8(action_code(*action));
                }
            }
            BusMessage::Publish { envelope } => {
                w.u8(tag::PUBLISH).bytes32("envelope", envelope)?;
            }
            BusMessage::Deliver { envelope } => {
                w.u8(tag::DELIVER).bytes32("envelope", envelope)?;
            }
            BusMessage::Ping(id) => {
                w.u8(tag::PING).u64(*id);
            }
            BusMessage::Pong(id) => {
                w.u8(tag::PONG).u64(*id);
            }
            BusMessage::Report { kind, subject, topic, detail } => {
                w.u8(tag::REPORT).u8(kind.code());
                w.str16("subject", subject)?.str16("topic", topic)?.str16("detail", detail)?;
            }
            BusMessage::Event(e) => {
                let json = serde_json::to_vec(e).expect("event serializes");
                w.u8(tag::EVENT).bytes32("event", &json)?;
            }
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            tag::REGISTER => {
                let subject = r.str16("subject")?;
                let role = Role::from_code(r.u8()?).ok_or(CodecError::Invalid("role"))?;
                let publishes = read_topics(&mut r)?;
                let subscribes = read_topics(&mut r)?;
                BusMessage::Register { subject, role, publishes, subscribes }
            }
            tag::ACK => BusMessage::Ack,
            tag::NACK => {
                let n = r.u16()?;
                let mut denied = Vec::with_capacity(usize::from(n));
                for _ in 0..n {
                    let topic = r.str16("topic")?;
                    let action = match r.u8()? {
                        0 => Action::Publish,
                        1 => Action::Subscribe,
                        _ => return Err(CodecError::Invalid("action")),
                    };
                    denied.push((topic, action));
                }
                BusMessage::Nack { denied }
            }
            tag::PUBLISH => BusMessage::Publish { envelope: r.bytes32()?.to_vec() },
            tag::DELIVER => BusMessage::Deliver { envelope: r.bytes32()?.to_vec() },
            tag::PING => BusMessage::Ping(r.u64()?),
            tag::PONG => BusMessage::Pong(r.u64()?),
            tag::REPORT => {
                let kind = EventKind::from_code(r.u8()?).ok_or(CodecError::Invalid("event kind"))?;
                BusMessage::Report {
                    kind,
                    subject: r.str16("subject")?,
                    topic: r.str16("topic")?,
                    detail: r.str16("detail")?,
                }
            }
            tag::EVENT => {
                let event = serde_json::from_slice(r.bytes32()?).map_err(|_| CodecError::Invalid("event"))?;
                BusMessage::Event(event)
            }
            _ => return Err(CodecError::Invalid("message tag")),
        };
        r.finish()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let msgs = vec![
            BusMessage::Register {
                subject: "gs".into(),
                role: Role::GroundStation,
                publishes: vec!["/command".into()],
                subscribes: vec!["/status".into(), "/security-events".into()],
            },
            BusMessage::Ack,
            BusMessage::Nack { denied: vec![("/command".into(), Action::Publish), ("/x".into(), Action::Subscribe)] },
            BusMessage::Publish { envelope: vec![1, 2, 3] },
            BusMessage::Deliver { envelope: vec![] },
            BusMessage::Ping(7),
            BusMessage::Pong(u64::MAX),
            BusMessage::Report {
                kind: EventKind::BadSignature,
                subject: "gs".into(),
                topic: "/command".into(),
                detail: "seq 4".into(),
            },
            BusMessage::Event(SecurityEvent {
                ts: 1,
                kind: EventKind::AuthzDenied,
                subject: "attacker".into(),
                topic: "/command".into(),
                detail: "publish".into(),
            }),
        ];
        for m in msgs {
            assert_eq!(BusMessage::decode(&m.encode().unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(BusMessage::decode(&[]).is_err());
        assert!(BusMessage::decode(&[99]).is_err());
        assert!(BusMessage::decode(&[tag::PING, 0, 0]).is_err());
        assert!(BusMessage::decode(&[tag::ACK, 0]).is_err());
    }
}
