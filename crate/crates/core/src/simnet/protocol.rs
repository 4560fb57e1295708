//! Pairwise trust establishment as a message-driven state machine over a
//! virtual-time network.
//!
//! Message flow (A initiates):
//!
//! ```text
//! A -> B  hello{nonce_a}
//! B -> A  hello{nonce_b}; B -> A salt_confirm{H(salt)}
//! A -> B  salt_confirm{H(salt)}
//! both    tokens{...} once the peer's confirmation matches
//! ```
//!
//! The session salt is `H(session ‖ nonce_a ‖ nonce_b)`. Each side intersects
//! the token sets and scores the mutual contacts on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::population::Device;
use super::SimError;
use crate::psi::{establish_trust, ContactToken, HashedSetIntersection, MutualContactDiscovery, TokenIndex, TrustCombination, TrustEstimate};
use crate::trustmetric::Predictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    Timeout,
    SaltMismatch,
    MalformedMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolState {
    Idle,
    HelloSent,
    SaltAgreed,
    TokensSent,
    Intersected,
    Scored,
    Done,
    Failed(FailureReason),
}

impl ProtocolState {
    fn rank(self) -> Option<u8> {
        Some(match self {
            ProtocolState::Idle => 0,
            ProtocolState::HelloSent => 1,
            ProtocolState::SaltAgreed => 2,
            ProtocolState::TokensSent => 3,
            ProtocolState::Intersected => 4,
            ProtocolState::Scored => 5,
            ProtocolState::Done => 6,
            ProtocolState::Failed(_) => return None,
        })
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ProtocolState::Done | ProtocolState::Failed(_))
    }

    /// Legal moves: one step forward along the happy path, or into `Failed`
    /// from any non-terminal state.
    pub fn can_transition_to(self, next: ProtocolState) -> bool {
        if self.is_terminal() {
            return false;
        }
        match (self.rank(), next.rank()) {
            (Some(a), Some(b)) => b == a + 1,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

impl fmt::Display for ProtocolState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Hello,
    SaltConfirm,
    Tokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloPayload {
    pub device: String,
    /// 16 random bytes, hex.
    pub nonce: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaltConfirmPayload {
    /// Hex SHA-256 of the derived session salt.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokensPayload {
    pub tokens: Vec<ContactToken>,
}

/// Wire envelope: `{type, session, payload}`, sent as a 4-byte big-endian
/// length followed by the JSON body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: MessageKind,
    pub session: String,
    pub payload: serde_json::Value,
}

impl Envelope {
    pub fn new<P: Serialize>(kind: MessageKind, session: &str, payload: &P) -> Self {
        Envelope {
            kind,
            session: session.to_string(),
            payload: serde_json::to_value(payload).expect("payload types serialize to JSON"),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let body = serde_json::to_vec(self).expect("envelope serializes");
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    /// Decodes one frame; returns the envelope and the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Envelope, usize), SimError> {
        let header: [u8; 4] = buf
            .get(..4)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| SimError::Malformed("truncated length prefix".into()))?;
        let len = u32::from_be_bytes(header) as usize;
        let body = buf.get(4..4 + len).ok_or_else(|| SimError::Malformed("truncated body".into()))?;
        let env = serde_json::from_slice(body).map_err(|e| SimError::Malformed(e.to_string()))?;
        Ok((env, 4 + len))
    }

    pub fn payload<P: for<'de> Deserialize<'de>>(&self) -> Result<P, SimError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| SimError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceKind {
    Sent { message: MessageKind, bytes: usize, attempt: u32 },
    Dropped { message: MessageKind, attempt: u32 },
    Delivered { message: MessageKind, bytes: usize },
    Transition { from: ProtocolState, to: ProtocolState },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolEvent {
    /// Virtual time in microseconds.
    pub time_us: u64,
    pub side: Side,
    pub kind: TraceKind,
}

/// Test hooks for the failure paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// The given side derives a wrong salt.
    CorruptSalt(Side),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Per-transmission drop probability.
    pub loss: f64,
    /// Retransmissions after the first attempt.
    pub max_retries: u32,
    pub latency_us: u64,
    pub retry_timeout_us: u64,
    pub fault: Option<Fault>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { loss: 0.0, max_retries: 3, latency_us: 5_000, retry_timeout_us: 50_000, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseRun {
    pub trace: Vec<ProtocolEvent>,
    pub estimate_a: TrustEstimate,
    pub estimate_b: TrustEstimate,
}

struct Peer<'a> {
    side: Side,
    device: &'a Device,
    state: ProtocolState,
    nonce: [u8; 16],
    peer_nonce: Option<[u8; 16]>,
    salt: Option<Vec<u8>>,
    index: Option<TokenIndex>,
    peer_tokens: Option<BTreeSet<ContactToken>>,
    /// Messages that arrived before this side could act on them.
    pending: Vec<Envelope>,
    estimate: Option<TrustEstimate>,
}

enum Event {
    Transmit { from: Side, kind: MessageKind, frame: Vec<u8>, attempt: u32 },
    Deliver { to: Side, frame: Vec<u8> },
}

struct Simulation<'a> {
    now: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Event>,
    trace: Vec<ProtocolEvent>,
    /// Undelivered messages per side; a side is done only once this drains.
    outstanding: [u32; 2],
    rng: ChaCha8Rng,
    net: &'a NetConfig,
    session: String,
    predictor: &'a Predictor,
    combination: &'a TrustCombination,
}

impl<'a> Simulation<'a> {
    fn schedule(&mut self, at: u64, event: Event) {
        self.queue.insert((at, self.seq), event);
        self.seq += 1;
    }

    fn send<P: Serialize>(&mut self, from: Side, kind: MessageKind, payload: &P) {
        let frame = Envelope::new(kind, &self.session, payload).encode();
        self.outstanding[from as usize] += 1;
        self.schedule(self.now, Event::Transmit { from, kind, frame, attempt: 0 });
    }

    fn transition(&mut self, peer: &mut Peer<'_>, to: ProtocolState) {
        debug_assert!(peer.state.can_transition_to(to), "{} -> {to}", peer.state);
        self.trace.push(ProtocolEvent {
            time_us: self.now,
            side: peer.side,
            kind: TraceKind::Transition { from: peer.state, to },
        });
        peer.state = to;
    }

    fn derive_salt(&self, initiator_nonce: &[u8; 16], responder_nonce: &[u8; 16], side: Side) -> Vec<u8> {
        let mut salt: Vec<u8> = Sha256::new()
            .chain_update(self.session.as_bytes())
            .chain_update(initiator_nonce)
            .chain_update(responder_nonce)
            .finalize()
            .to_vec();
        if self.net.fault == Some(Fault::CorruptSalt(side)) {
            salt[0] ^= 0xff;
        }
        salt
    }

    /// Handles one message, or parks it if the peer is not ready yet.
    /// Returns whether the message was consumed.
    fn handle(&mut self, me: &mut Peer<'_>, env: &Envelope) -> Result<bool, SimError> {
        if me.state.is_terminal() {
            return Ok(true);
        }
        match env.kind {
            MessageKind::Hello => {
                let hello: HelloPayload = env.payload()?;
                let mut nonce = [0u8; 16];
                hex::decode_to_slice(&hello.nonce, &mut nonce).map_err(|e| SimError::Malformed(e.to_string()))?;
                me.peer_nonce = Some(nonce);
                if me.side == Side::B {
                    self.send(me.side, MessageKind::Hello, &HelloPayload {
                        device: me.device.profile.device_id.clone(),
                        nonce: hex::encode(me.nonce),
                    });
                    self.transition(me, ProtocolState::HelloSent);
                }
                let (init, resp) = match me.side {
                    Side::A => (me.nonce, nonce),
                    Side::B => (nonce, me.nonce),
                };
                let salt = self.derive_salt(&init, &resp, me.side);
                let digest = hex::encode(Sha256::digest(&salt));
                me.salt = Some(salt);
                self.send(me.side, MessageKind::SaltConfirm, &SaltConfirmPayload { digest });
                Ok(true)
            }
            MessageKind::SaltConfirm => {
                let Some(salt) = me.salt.clone() else { return Ok(false) };
                let confirm: SaltConfirmPayload = env.payload()?;
                if confirm.digest != hex::encode(Sha256::digest(&salt)) {
                    self.transition(me, ProtocolState::Failed(FailureReason::SaltMismatch));
                    return Err(SimError::SaltMismatch);
                }
                self.transition(me, ProtocolState::SaltAgreed);
                let index = TokenIndex::build(&me.device.profile.contacts, &salt)?;
                let tokens: Vec<ContactToken> = index.tokens().into_iter().collect();
                me.index = Some(index);
                self.send(me.side, MessageKind::Tokens, &TokensPayload { tokens });
                self.transition(me, ProtocolState::TokensSent);
                self.try_finish(me);
                Ok(true)
            }
            MessageKind::Tokens => {
                let payload: TokensPayload = env.payload()?;
                me.peer_tokens = Some(payload.tokens.into_iter().collect());
                self.try_finish(me);
                Ok(true)
            }
        }
    }

    fn try_finish(&mut self, me: &mut Peer<'_>) {
        if me.state != ProtocolState::TokensSent {
            return;
        }
        let (Some(index), Some(theirs)) = (me.index.as_ref(), me.peer_tokens.as_ref()) else { return };
        let mutual = HashedSetIntersection.intersect(&index.tokens(), theirs);
        let estimate = establish_trust(&me.device.log, index, &mutual, self.predictor, self.combination);
        self.transition(me, ProtocolState::Intersected);
        me.estimate = Some(estimate);
        self.transition(me, ProtocolState::Scored);
        self.maybe_done(me);
    }

    fn maybe_done(&mut self, me: &mut Peer<'_>) {
        if me.state == ProtocolState::Scored && self.outstanding[me.side as usize] == 0 {
            self.transition(me, ProtocolState::Done);
        }
    }
}

fn peer_mut<'p, 'a>(a: &'p mut Peer<'a>, b: &'p mut Peer<'a>, side: Side) -> &'p mut Peer<'a> {
    match side {
        Side::A => a,
        Side::B => b,
    }
}

/// Runs the handshake between two devices in virtual time. A device may be
/// paired with itself.
pub fn run_pairwise(
    a: &Device,
    b: &Device,
    predictor: &Predictor,
    combination: &TrustCombination,
    net: &NetConfig,
    seed: u64,
) -> Result<PairwiseRun, SimError> {
    if !(0.0..=1.0).contains(&net.loss) {
        return Err(SimError::InvalidConfig(format!("loss {} outside [0, 1]", net.loss)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut new_peer = |side, device| {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        Peer {
            side,
            device,
            state: ProtocolState::Idle,
            nonce,
            peer_nonce: None,
            salt: None,
            index: None,
            peer_tokens: None,
            pending: Vec::new(),
            estimate: None,
        }
    };
    let mut peer_a = new_peer(Side::A, a);
    let mut peer_b = new_peer(Side::B, b);
    let session = format!("{:016x}", rng.next_u64());
    let mut sim = Simulation {
        now: 0,
        seq: 0,
        queue: BTreeMap::new(),
        trace: Vec::new(),
        outstanding: [0; 2],
        rng,
        net,
        session,
        predictor,
        combination,
    };

    sim.send(Side::A, MessageKind::Hello, &HelloPayload {
        device: a.profile.device_id.clone(),
        nonce: hex::encode(peer_a.nonce),
    });
    sim.transition(&mut peer_a, ProtocolState::HelloSent);

    while let Some(((time, _), event)) = sim.queue.pop_first() {
        sim.now = time;
        match event {
            Event::Transmit { from, kind, frame, attempt } => {
                sim.trace.push(ProtocolEvent {
                    time_us: time,
                    side: from,
                    kind: TraceKind::Sent { message: kind, bytes: frame.len(), attempt },
                });
                let dropped = net.loss > 0.0 && sim.rng.random_bool(net.loss);
                if !dropped {
                    sim.schedule(time + net.latency_us, Event::Deliver { to: from.other(), frame });
                    continue;
                }
                sim.trace.push(ProtocolEvent { time_us: time, side: from, kind: TraceKind::Dropped { message: kind, attempt } });
                if attempt < net.max_retries {
                    sim.schedule(time + net.retry_timeout_us, Event::Transmit { from, kind, frame, attempt: attempt + 1 });
                } else {
                    let peer = peer_mut(&mut peer_a, &mut peer_b, from);
                    sim.transition(peer, ProtocolState::Failed(FailureReason::Timeout));
                    return Err(SimError::ProtocolTimeout { side: from, message: kind });
                }
            }
            Event::Deliver { to, frame } => {
                let (env, _) = Envelope::decode(&frame)?;
                sim.trace.push(ProtocolEvent {
                    time_us: time,
                    side: to,
                    kind: TraceKind::Delivered { message: env.kind, bytes: frame.len() },
                });
                sim.outstanding[to.other() as usize] -= 1;
                sim.maybe_done(peer_mut(&mut peer_a, &mut peer_b, to.other()));
                let me = peer_mut(&mut peer_a, &mut peer_b, to);
                if env.session != sim.session {
                    sim.transition(me, ProtocolState::Failed(FailureReason::MalformedMessage));
                    return Err(SimError::Malformed(format!("unexpected session {}", env.session)));
                }
                me.pending.push(env);
                // drain everything that became actionable
                loop {
                    let mut progressed = false;
                    let pending = std::mem::take(&mut me.pending);
                    for env in pending {
                        if sim.handle(me, &env)? {
                            progressed = true;
                        } else {
                            me.pending.push(env);
                        }
                    }
                    if !progressed || me.pending.is_empty() {
                        break;
                    }
                }
            }
        }
    }

    match (peer_a.estimate, peer_b.estimate) {
        (Some(estimate_a), Some(estimate_b)) => Ok(PairwiseRun { trace: sim.trace, estimate_a, estimate_b }),
        _ => Err(SimError::Stalled),
    }
}

/// Checks that each side's transitions follow the state order and that
/// nothing happens on a side after it terminated.
pub fn trace_is_well_ordered(trace: &[ProtocolEvent]) -> bool {
    let mut state = [ProtocolState::Idle, ProtocolState::Idle];
    let idx = |s: Side| s as usize;
    let mut last_time = 0;
    for ev in trace {
        if ev.time_us < last_time {
            return false;
        }
        last_time = ev.time_us;
        let current = state[idx(ev.side)];
        match ev.kind {
            TraceKind::Transition { from, to } => {
                if from != current || !current.can_transition_to(to) {
                    return false;
                }
                state[idx(ev.side)] = to;
            }
            _ if current.is_terminal() => return false,
            _ => {}
        }
    }
    true
}
