//! The message proxy: a worker-role container with no execution services.
//!
//! Messages for cloud workers arrive at the proxy role's balanced input
//! endpoint. The proxy reads the internal endpoint out of the target URI and
//! forwards the message unchanged to that address. Workers reply to the
//! master directly, never back through the proxy.

use crate::message::{authenticate, Message, Outgoing, Payload, SharedKey};
use crate::uri::EndpointAddr;
use alloc::collections::VecDeque;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ProxyError {
    #[error("target uri carries no internal endpoint")]
    MissingInternalEndpoint,
    #[error("shared key mismatch")]
    AuthFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProxyAction {
    /// Direct send of the untouched message to the decoded endpoint.
    Forward { msg: Message, to: EndpointAddr },
    /// Reply to the sender.
    Nak { error: ProxyError, reply: Outgoing },
    /// Dropped and logged.
    Drop { error: ProxyError, msg: Message },
    /// Held until the channel is ready.
    Buffered,
}

#[derive(Debug, Clone, Default)]
pub struct ProxyState {
    pub ready: bool,
    pub forwarded_count: u64,
    pub nak_count: u64,
    pub dropped_count: u64,
}

#[derive(Debug, Clone)]
pub struct MessageProxy {
    state: ProxyState,
    key: SharedKey,
    buffer: VecDeque<Message>,
}

impl MessageProxy {
    pub fn new(key: SharedKey) -> Self {
        Self { state: ProxyState::default(), key, buffer: VecDeque::new() }
    }

    pub fn state(&self) -> &ProxyState {
        &self.state
    }

    pub fn is_ready(&self) -> bool {
        self.state.ready
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn on_external_message(&mut self, msg: Message) -> ProxyAction {
        if !self.state.ready {
            self.buffer.push_back(msg);
            return ProxyAction::Buffered;
        }
        self.route(msg)
    }

    fn route(&mut self, msg: Message) -> ProxyAction {
        if !authenticate(&msg, &self.key) {
            self.state.dropped_count += 1;
            return ProxyAction::Drop { error: ProxyError::AuthFailure, msg };
        }
        match msg.target.internal_endpoint.clone() {
            Some(to) => {
                self.state.forwarded_count += 1;
                ProxyAction::Forward { msg, to }
            }
            None => {
                self.state.nak_count += 1;
                ProxyAction::Nak {
                    error: ProxyError::MissingInternalEndpoint,
                    reply: Outgoing::new(msg.source.clone(), Payload::ProxyNak { rejected: msg.id }),
                }
            }
        }
    }

    /// Opens the channel and releases anything buffered, in arrival order.
    pub fn mark_ready(&mut self) -> Vec<ProxyAction> {
        self.state.ready = true;
        let pending: Vec<_> = self.buffer.drain(..).collect();
        pending.into_iter().map(|m| self.route(m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Ack, AckEvent, MessageId};
    use crate::uri::NodeUri;

    fn key() -> SharedKey {
        SharedKey::new("k")
    }

    fn msg(id: u64, target: &str, k: &str) -> Message {
        Message {
            id: MessageId(id),
            source: NodeUri::direct("localhost", 3333),
            target: NodeUri::parse(target).unwrap(),
            shared_key: SharedKey::new(k),
            payload: Payload::ControlAck(Ack { unit: None, event: AckEvent::Ping }),
            sent_at: 0,
        }
    }

    #[test]
    fn forwards_to_decoded_endpoint() {
        let mut p = MessageProxy::new(key());
        assert!(p.mark_ready().is_empty());
        let m = msg(1, "tcp://proxy:9090/Aneka?ie=10.0.0.7:20005", "k");
        match p.on_external_message(m.clone()) {
            ProxyAction::Forward { msg, to } => {
                assert_eq!(to, EndpointAddr::new("10.0.0.7", 20005));
                assert_eq!(msg, m);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p.state().forwarded_count, 1);
    }

    #[test]
    fn naks_without_internal_endpoint() {
        let mut p = MessageProxy::new(key());
        p.mark_ready();
        match p.on_external_message(msg(9, "tcp://proxy:9090/Aneka", "k")) {
            ProxyAction::Nak { error, reply } => {
                assert_eq!(error, ProxyError::MissingInternalEndpoint);
                assert_eq!(reply.target, NodeUri::direct("localhost", 3333));
                assert_eq!(reply.payload, Payload::ProxyNak { rejected: MessageId(9) });
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p.state().nak_count, 1);
    }

    #[test]
    fn drops_bad_key() {
        let mut p = MessageProxy::new(key());
        p.mark_ready();
        let a = p.on_external_message(msg(1, "tcp://proxy:9090/Aneka?ie=10.0.0.7:20005", "wrong"));
        assert!(matches!(a, ProxyAction::Drop { error: ProxyError::AuthFailure, .. }));
        assert_eq!(p.state().forwarded_count, 0);
    }

    #[test]
    fn buffers_until_ready() {
        let mut p = MessageProxy::new(key());
        assert_eq!(p.on_external_message(msg(1, "tcp://p:1/Aneka?ie=10.0.0.5:20000", "k")), ProxyAction::Buffered);
        assert_eq!(p.on_external_message(msg(2, "tcp://p:1/Aneka?ie=10.0.0.6:20000", "k")), ProxyAction::Buffered);
        assert_eq!(p.state().forwarded_count, 0);
        let released = p.mark_ready();
        let ids: Vec<_> = released
            .iter()
            .map(|a| match a {
                ProxyAction::Forward { msg, .. } => msg.id.0,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(ids, [1, 2]);
        assert_eq!(p.buffered(), 0);
        assert!(matches!(
            p.on_external_message(msg(3, "tcp://p:1/Aneka?ie=10.0.0.5:20000", "k")),
            ProxyAction::Forward { .. }
        ));
    }
}
