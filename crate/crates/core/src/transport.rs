//! MTU-bounded framing, reassembly and a deterministic lossy link.
//!
//! Frame header, 8 bytes, big-endian:
//!
//! ```text
//! 0      1      2..4         4..6         6..8
//! magic  flags  message_id   frag_index   frag_count
//! 0xD1   b0=ACK b1=LAST
//! ```
//!
//! ACK frames carry a 2-byte payload holding the acknowledged `frag_index`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_LEN: usize = 8;
pub const MAGIC: u8 = 0xD1;
pub const FLAG_ACK: u8 = 0b0000_0001;
pub const FLAG_LAST: u8 = 0b0000_0010;
const ACK_FRAME_LEN: usize = HEADER_LEN + 2;

pub const LORA_MTU: usize = 222;
pub const BLE_MTU: usize = 244;
pub const LOSSLESS_MTU: usize = 65_535;

/// Retransmissions allowed per fragment before giving up.
pub const MAX_RETRIES: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("mtu {0} leaves no room for payload after the {HEADER_LEN}-byte header")]
    MtuTooSmall(usize),
    #[error("cannot send an empty message")]
    EmptyMessage,
    #[error("message needs {0} fragments, more than a u16 can index")]
    TooManyFragments(usize),
    #[error("frame shorter than header ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("unknown flag bits {0:#04x}")]
    BadFlags(u8),
    #[error("fragment index {index} out of range for count {count}")]
    BadIndex { index: u16, count: u16 },
    #[error("malformed ack frame")]
    BadAck,
    #[error("message {message_id}: fragment count changed from {expected} to {got}")]
    InconsistentCount { message_id: u16, expected: u16, got: u16 },
    #[error("frames belong to more than one message")]
    MixedMessages,
    #[error("frame of {len} bytes exceeds link mtu {mtu}")]
    FrameTooLarge { len: usize, mtu: usize },
    #[error("unknown link profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid link profile: {0}")]
    InvalidProfile(String),
    #[error("retry budget exhausted on message {message_id} fragment {frag_index} after {retries} retries")]
    RetryBudgetExhausted { message_id: u16, frag_index: u16, retries: u32 },
    #[error("codec failure: {0}")]
    Codec(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub ack: bool,
    pub last: bool,
    pub message_id: u16,
    pub frag_index: u16,
    pub frag_count: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn ack_for(message_id: u16, frag_index: u16, frag_count: u16) -> Frame {
        Frame {
            ack: true,
            last: false,
            message_id,
            frag_index,
            frag_count,
            payload: frag_index.to_be_bytes().to_vec(),
        }
    }

    pub fn flags(&self) -> u8 {
        (if self.ack { FLAG_ACK } else { 0 }) | (if self.last { FLAG_LAST } else { 0 })
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(MAGIC);
        out.push(self.flags());
        out.extend_from_slice(&self.message_id.to_be_bytes());
        out.extend_from_slice(&self.frag_index.to_be_bytes());
        out.extend_from_slice(&self.frag_count.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, TransportError> {
        if bytes.len() < HEADER_LEN {
            return Err(TransportError::Truncated(bytes.len()));
        }
        if bytes[0] != MAGIC {
            return Err(TransportError::BadMagic(bytes[0]));
        }
        let flags = bytes[1];
        if flags & !(FLAG_ACK | FLAG_LAST) != 0 {
            return Err(TransportError::BadFlags(flags));
        }
        let u16_at = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let frame = Frame {
            ack: flags & FLAG_ACK != 0,
            last: flags & FLAG_LAST != 0,
            message_id: u16_at(2),
            frag_index: u16_at(4),
            frag_count: u16_at(6),
            payload: bytes[HEADER_LEN..].to_vec(),
        };
        if frame.frag_index >= frame.frag_count {
            return Err(TransportError::BadIndex {
                index: frame.frag_index,
                count: frame.frag_count,
            });
        }
        if frame.ack {
            if frame.last || frame.payload != frame.frag_index.to_be_bytes() {
                return Err(TransportError::BadAck);
            }
        } else if frame.last != (frame.frag_index + 1 == frame.frag_count) {
            return Err(TransportError::BadFlags(flags));
        }
        Ok(frame)
    }
}

/// Payload bytes available per frame at `mtu`.
pub fn payload_capacity(mtu: usize) -> Result<usize, TransportError> {
    if mtu <= HEADER_LEN {
        return Err(TransportError::MtuTooSmall(mtu));
    }
    Ok(mtu - HEADER_LEN)
}

/// Number of frames `fragment` produces: `ceil(len / (mtu - 8))`.
pub fn fragment_count(len: usize, mtu: usize) -> Result<usize, TransportError> {
    Ok(len.div_ceil(payload_capacity(mtu)?))
}

pub fn fragment(message: &[u8], mtu: usize, message_id: u16) -> Result<Vec<Frame>, TransportError> {
    let capacity = payload_capacity(mtu)?;
    if message.is_empty() {
        return Err(TransportError::EmptyMessage);
    }
    let count = message.len().div_ceil(capacity);
    let count_u16 = u16::try_from(count).map_err(|_| TransportError::TooManyFragments(count))?;
    Ok(message
        .chunks(capacity)
        .enumerate()
        .map(|(i, chunk)| Frame {
            ack: false,
            last: i + 1 == count,
            message_id,
            frag_index: i as u16,
            frag_count: count_u16,
            payload: chunk.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reassembly {
    Complete(Vec<u8>),
    Incomplete { missing: Vec<u16> },
}

/// Reassembles the frames of a single message, in any order.
pub fn reassemble(frames: &[Frame]) -> Result<Reassembly, TransportError> {
    let Some(first) = frames.first() else {
        return Ok(Reassembly::Incomplete { missing: Vec::new() });
    };
    let mut partial = Partial::new(first.frag_count);
    for f in frames {
        if f.message_id != first.message_id {
            return Err(TransportError::MixedMessages);
        }
        partial.insert(f)?;
    }
    Ok(match partial.finish() {
        Ok(message) => Reassembly::Complete(message),
        Err(missing) => Reassembly::Incomplete { missing },
    })
}

#[derive(Debug)]
struct Partial {
    count: u16,
    fragments: Vec<Option<Vec<u8>>>,
    received: usize,
}

impl Partial {
    fn new(count: u16) -> Self {
        Partial {
            count,
            fragments: vec![None; count as usize],
            received: 0,
        }
    }

    fn insert(&mut self, f: &Frame) -> Result<(), TransportError> {
        if f.frag_count != self.count {
            return Err(TransportError::InconsistentCount {
                message_id: f.message_id,
                expected: self.count,
                got: f.frag_count,
            });
        }
        if f.frag_index >= self.count {
            return Err(TransportError::BadIndex {
                index: f.frag_index,
                count: f.frag_count,
            });
        }
        let slot = &mut self.fragments[f.frag_index as usize];
        if slot.is_none() {
            *slot = Some(f.payload.clone());
            self.received += 1;
        }
        Ok(())
    }

    fn is_complete(&self) -> bool {
        self.received == self.count as usize
    }

    fn finish(self) -> Result<Vec<u8>, Vec<u16>> {
        if !self.is_complete() {
            return Err(self
                .fragments
                .iter()
                .enumerate()
                .filter(|(_, f)| f.is_none())
                .map(|(i, _)| i as u16)
                .collect());
        }
        Ok(self.fragments.into_iter().flatten().flatten().collect())
    }
}

/// Incremental receiver-side reassembly across many messages.
#[derive(Debug, Default)]
pub struct Reassembler {
    partial: HashMap<u16, Partial>,
    completed: VecDeque<u16>,
}

impl Reassembler {
    const REMEMBERED: usize = 1024;

    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one data frame; returns the message once all fragments arrived.
    /// Duplicates, including late copies of finished messages, are ignored.
    pub fn push(&mut self, frame: &Frame) -> Result<Option<Vec<u8>>, TransportError> {
        if self.completed.contains(&frame.message_id) {
            return Ok(None);
        }
        let partial = self
            .partial
            .entry(frame.message_id)
            .or_insert_with(|| Partial::new(frame.frag_count));
        partial.insert(frame)?;
        if !partial.is_complete() {
            return Ok(None);
        }
        let partial = self.partial.remove(&frame.message_id).expect("present");
        if self.completed.len() == Self::REMEMBERED {
            self.completed.pop_front();
        }
        self.completed.push_back(frame.message_id);
        Ok(Some(partial.finish().expect("complete")))
    }
}

/// Whole-message transform applied before fragmentation.
pub trait Codec: Send + Sync {
    fn name(&self) -> &str;
    fn encode(&self, message: &[u8]) -> Vec<u8>;
    fn decode(&self, message: &[u8]) -> Result<Vec<u8>, TransportError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn name(&self) -> &str {
        "identity"
    }

    fn encode(&self, message: &[u8]) -> Vec<u8> {
        message.to_vec()
    }

    fn decode(&self, message: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(message.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub name: String,
    pub mtu: usize,
    pub loss_probability: f64,
    pub reorder_probability: f64,
    pub seed: u64,
}

impl LinkProfile {
    pub const BUILTIN: [&'static str; 3] = ["lora", "ble", "lossless"];

    pub fn builtin(name: &str) -> Result<LinkProfile, TransportError> {
        let mtu = match name {
            "lora" => LORA_MTU,
            "ble" => BLE_MTU,
            "lossless" => LOSSLESS_MTU,
            other => return Err(TransportError::UnknownProfile(other.to_string())),
        };
        Ok(LinkProfile {
            name: name.to_string(),
            mtu,
            loss_probability: 0.0,
            reorder_probability: 0.0,
            seed: 0,
        })
    }

    pub fn with_loss(mut self, p: f64) -> Self {
        self.loss_probability = p;
        self
    }

    pub fn with_reorder(mut self, p: f64) -> Self {
        self.reorder_probability = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        // ACK frames must fit as well as one payload byte.
        if self.mtu < ACK_FRAME_LEN {
            return Err(TransportError::InvalidProfile(format!(
                "mtu {} is below the {ACK_FRAME_LEN}-byte ack frame",
                self.mtu
            )));
        }
        for (what, p) in [("loss", self.loss_probability), ("reorder", self.reorder_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TransportError::InvalidProfile(format!("{what} probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Tunables of the stop-and-wait sender, in simulated ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArqConfig {
    pub latency_ticks: u64,
    pub timeout_ticks: u64,
    pub max_retries: u32,
}

impl Default for ArqConfig {
    fn default() -> Self {
        ArqConfig {
            latency_ticks: 1,
            timeout_ticks: 4,
            max_retries: MAX_RETRIES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Data,
    Ack,
}

/// One frame put on the link, whether or not it arrived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub from: String,
    pub to: String,
    pub kind: FrameKind,
    pub message_id: u16,
    pub frag_index: u16,
    pub frag_count: u16,
    pub len: usize,
    pub dropped: bool,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} dir={}→{} type={} id={} idx={}/{} len={} dropped={}",
            self.tick,
            self.from,
            self.to,
            match self.kind {
                FrameKind::Data => "data",
                FrameKind::Ack => "ack",
            },
            self.message_id,
            self.frag_index,
            self.frag_count,
            self.len,
            self.dropped
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReport {
    #[serde(skip)]
    pub delivered: Vec<u8>,
    pub message_id: u16,
    pub message_len: usize,
    pub fragments: usize,
    /// Data and ack frames put on the link, lost ones included.
    pub frames_sent: usize,
    pub bytes_sent: usize,
    pub retransmissions: u32,
    /// Send-and-wait cycles: one per data transmission.
    pub round_trips: u32,
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    DataArrive { index: u16, bytes: Vec<u8> },
    AckArrive { bytes: Vec<u8> },
    Timeout { index: u16, attempt: u32 },
}

/// A simulated point-to-point link driven by simulated time.
pub struct SimLink {
    profile: LinkProfile,
    arq: ArqConfig,
    rng: ChaCha8Rng,
    clock: u64,
    next_message_id: u16,
    trace: Vec<TraceEvent>,
    codec: Box<dyn Codec>,
}

impl fmt::Debug for SimLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimLink")
            .field("profile", &self.profile)
            .field("clock", &self.clock)
            .field("codec", &self.codec.name())
            .finish_non_exhaustive()
    }
}

pub fn make_link(profile: LinkProfile) -> Result<SimLink, TransportError> {
    SimLink::new(profile, ArqConfig::default())
}

impl SimLink {
    pub fn new(profile: LinkProfile, arq: ArqConfig) -> Result<SimLink, TransportError> {
        profile.validate()?;
        Ok(SimLink {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            profile,
            arq,
            clock: 0,
            next_message_id: 0,
            trace: Vec::new(),
            codec: Box::new(IdentityCodec),
        })
    }

    pub fn with_codec(mut self, codec: Box<dyn Codec>) -> Self {
        self.codec = codec;
        self
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    fn put_on_wire(&mut self, from: &str, to: &str, frame: &Frame) -> Result<Option<Vec<u8>>, TransportError> {
        let bytes = frame.encode();
        if bytes.len() > self.profile.mtu {
            return Err(TransportError::FrameTooLarge {
                len: bytes.len(),
                mtu: self.profile.mtu,
            });
        }
        let dropped = self.rng.gen_bool(self.profile.loss_probability);
        self.trace.push(TraceEvent {
            tick: self.clock,
            from: from.to_string(),
            to: to.to_string(),
            kind: if frame.ack { FrameKind::Ack } else { FrameKind::Data },
            message_id: frame.message_id,
            frag_index: frame.frag_index,
            frag_count: frame.frag_count,
            len: bytes.len(),
            dropped,
        });
        Ok((!dropped).then_some(bytes))
    }

    fn arrival_delay(&mut self) -> u64 {
        let late = self.rng.gen_bool(self.profile.reorder_probability);
        self.arq.latency_ticks + if late { self.arq.timeout_ticks } else { 0 }
    }

    /// Sends `message` from `from` to `to`, one fragment at a time, each
    /// acknowledged before the next is sent. Returns the bytes the receiver
    /// reassembled.
    pub fn send_reliable(&mut self, from: &str, to: &str, message: &[u8]) -> Result<DeliveryReport, TransportError> {
        let encoded = self.codec.encode(message);
        let message_id = self.next_message_id;
        self.next_message_id = self.next_message_id.wrapping_add(1);
        let frames = fragment(&encoded, self.profile.mtu, message_id)?;
        let frag_count = frames.len() as u16;
        let trace_start = self.trace.len();
        let started_at = self.clock;

        let mut queue: BinaryHeap<Reverse<(u64, u64, Event)>> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut schedule = |queue: &mut BinaryHeap<_>, at: u64, event: Event| {
            queue.push(Reverse((at, seq, event)));
            seq += 1;
        };

        let mut receiver = Reassembler::new();
        let mut delivered: Option<Vec<u8>> = None;
        let mut current: u16 = 0;
        let mut attempt: u32 = 0;
        let mut retransmissions = 0u32;
        let mut transmissions = 0u32;

        // First transmission of fragment 0.
        if let Some(bytes) = self.put_on_wire(from, to, &frames[0])? {
            let at = self.clock + self.arrival_delay();
            schedule(&mut queue, at, Event::DataArrive { index: 0, bytes });
        }
        transmissions += 1;
        schedule(&mut queue, self.clock + self.arq.timeout_ticks, Event::Timeout { index: 0, attempt: 0 });

        while let Some(Reverse((at, _, event))) = queue.pop() {
            self.clock = at;
            match event {
                Event::DataArrive { index, bytes } => {
                    let frame = Frame::decode(&bytes)?;
                    debug_assert_eq!(frame.frag_index, index);
                    if let Some(message) = receiver.push(&frame)? {
                        delivered = Some(message);
                    }
                    let ack = Frame::ack_for(frame.message_id, frame.frag_index, frame.frag_count);
                    if let Some(bytes) = self.put_on_wire(to, from, &ack)? {
                        let at = self.clock + self.arrival_delay();
                        schedule(&mut queue, at, Event::AckArrive { bytes });
                    }
                }
                Event::AckArrive { bytes } => {
                    let ack = Frame::decode(&bytes)?;
                    if !ack.ack || ack.message_id != message_id || ack.frag_index != current {
                        continue;
                    }
                    current += 1;
                    attempt = 0;
                    if current == frag_count {
                        break;
                    }
                    let frame = &frames[current as usize];
                    if let Some(bytes) = self.put_on_wire(from, to, frame)? {
                        let at = self.clock + self.arrival_delay();
                        schedule(&mut queue, at, Event::DataArrive { index: current, bytes });
                    }
                    transmissions += 1;
                    schedule(
                        &mut queue,
                        self.clock + self.arq.timeout_ticks,
                        Event::Timeout { index: current, attempt: 0 },
                    );
                }
                Event::Timeout { index, attempt: a } => {
                    if index != current || a != attempt {
                        continue;
                    }
                    if attempt == self.arq.max_retries {
                        return Err(TransportError::RetryBudgetExhausted {
                            message_id,
                            frag_index: current,
                            retries: attempt,
                        });
                    }
                    attempt += 1;
                    retransmissions += 1;
                    let frame = &frames[current as usize];
                    if let Some(bytes) = self.put_on_wire(from, to, frame)? {
                        let at = self.clock + self.arrival_delay();
                        schedule(&mut queue, at, Event::DataArrive { index: current, bytes });
                    }
                    transmissions += 1;
                    schedule(
                        &mut queue,
                        self.clock + self.arq.timeout_ticks,
                        Event::Timeout { index: current, attempt },
                    );
                }
            }
        }

        let delivered = delivered.expect("every fragment was acknowledged, so the receiver holds the message");
        let delivered = self.codec.decode(&delivered)?;
        let sent = &self.trace[trace_start..];
        Ok(DeliveryReport {
            delivered,
            message_id,
            message_len: message.len(),
            fragments: frames.len(),
            frames_sent: sent.len(),
            bytes_sent: sent.iter().map(|e| e.len).sum(),
            retransmissions,
            round_trips: transmissions,
            started_at,
            finished_at: self.clock,
        })
    }
}
