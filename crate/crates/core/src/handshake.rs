//! Layered device authentication.
//!
//! Layer 1 builds a mutually authenticated channel from DID Documents:
//!
//! ```text
//! I -> R  HELLO       {did, document if peer DID, ephemeral, nonce}
//! R -> I  HELLO_ACK   same shape
//! I -> R  AUTH        initiator signature over the transcript digest
//! R -> I  AUTH_ACK    responder signature over the transcript digest
//! ```
//!
//! Both sides then run X25519 on the ephemerals and derive directional
//! session keys salted with the transcript digest. Layer 2 runs inside the
//! channel: each side requests the claims its trust policy needs, answers
//! the peer's request with selective-disclosure presentations and reports
//! its verdict.
//!
//! Every message is a one-byte type tag followed by a body. Layer 1 bodies
//! are canonical text. Layer 2 bodies are `counter (8 bytes, BE) ||
//! ChaCha20-Poly1305(canonical text)` with the tag and counter as AAD.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::credentials::{present, verify_presentation, InvalidReason, Presentation, RevocationCheck, Verdict};
use crate::crypto::{
    agree, counter_nonce, derive_session_at, hex_bytes, keygen_with_rng, open, seal, sign, verify, CryptoError,
    KeyPair, KeyPurpose, PublicKey, RecvCounter, Role, SendCounter, SessionKeys, Signature,
    DEFAULT_SESSION_LIFETIME, TAG_LEN,
};
use crate::encoding::{from_canonical, to_canonical};
use crate::identity::{Did, DidDocument};
use crate::resolver::{Resolve, Resolver};
use crate::wallet::Wallet;

pub const NONCE_BYTES: usize = 16;
const COUNTER_LEN: usize = 8;
const OWNER_CLAIM: &str = "owner";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    HelloAck = 0x02,
    Auth = 0x03,
    AuthAck = 0x04,
    CredRequest = 0x05,
    CredPresent = 0x06,
    TrustResult = 0x07,
    /// Application data sent with [`HandshakeSession::secure_send`].
    AppData = 0x10,
    Error = 0x7F,
}

impl MessageType {
    pub fn from_tag(tag: u8) -> Option<MessageType> {
        Some(match tag {
            0x01 => MessageType::Hello,
            0x02 => MessageType::HelloAck,
            0x03 => MessageType::Auth,
            0x04 => MessageType::AuthAck,
            0x05 => MessageType::CredRequest,
            0x06 => MessageType::CredPresent,
            0x07 => MessageType::TrustResult,
            0x10 => MessageType::AppData,
            0x7F => MessageType::Error,
            _ => return None,
        })
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Hello => "HELLO",
            MessageType::HelloAck => "HELLO_ACK",
            MessageType::Auth => "AUTH",
            MessageType::AuthAck => "AUTH_ACK",
            MessageType::CredRequest => "CRED_REQUEST",
            MessageType::CredPresent => "CRED_PRESENT",
            MessageType::TrustResult => "TRUST_RESULT",
            MessageType::AppData => "APP_DATA",
            MessageType::Error => "ERROR",
        }
    }

    fn is_encrypted(self) -> bool {
        matches!(
            self,
            MessageType::CredRequest | MessageType::CredPresent | MessageType::TrustResult | MessageType::AppData
        )
    }
}

/// Type of an encoded message, if its tag is known.
pub fn message_type(bytes: &[u8]) -> Option<MessageType> {
    bytes.first().copied().and_then(MessageType::from_tag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub did: Did,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document: Option<DidDocument>,
    pub ephemeral: PublicKey,
    #[serde(with = "hex_bytes")]
    pub nonce: [u8; NONCE_BYTES],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Auth {
    pub key_id: String,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredRequest {
    pub claims: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredPresent {
    pub presentations: Vec<Presentation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustResult {
    pub verdict: TrustVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub reason: String,
}

pub fn encode_message<T: Serialize>(kind: MessageType, body: &T) -> Vec<u8> {
    let mut out = vec![kind.tag()];
    out.extend_from_slice(&to_canonical(body));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TrustPolicy {
    /// Trust peers holding an `owner` credential issued by `my_owner` whose
    /// value is `my_owner` itself.
    OwnerMatch { my_owner: Did },
    AlwaysTrust,
    RequireClaim { name: String, value: String },
}

impl TrustPolicy {
    pub fn requested_claims(&self) -> Vec<String> {
        match self {
            TrustPolicy::OwnerMatch { .. } => vec![OWNER_CLAIM.to_string()],
            TrustPolicy::AlwaysTrust => Vec::new(),
            TrustPolicy::RequireClaim { name, .. } => vec![name.clone()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum UntrustedReason {
    NoCredential,
    MissingClaim(String),
    OwnerMismatch,
    Issuer,
    ClaimMismatch(String),
    SubjectMismatch,
    InvalidPresentation(InvalidReason),
}

impl UntrustedReason {
    pub fn code(&self) -> &'static str {
        match self {
            UntrustedReason::NoCredential => "no_credential",
            UntrustedReason::MissingClaim(_) => "missing_claim",
            UntrustedReason::OwnerMismatch => "owner_mismatch",
            UntrustedReason::Issuer => "issuer",
            UntrustedReason::ClaimMismatch(_) => "claim_mismatch",
            UntrustedReason::SubjectMismatch => "subject_mismatch",
            UntrustedReason::InvalidPresentation(_) => "invalid_presentation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum TrustVerdict {
    Trusted,
    Untrusted(UntrustedReason),
}

impl TrustVerdict {
    pub fn is_trusted(&self) -> bool {
        matches!(self, TrustVerdict::Trusted)
    }
}

impl fmt::Display for TrustVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrustVerdict::Trusted => f.write_str("trusted"),
            TrustVerdict::Untrusted(r) => write!(f, "untrusted({})", r.code()),
        }
    }
}

/// Applies `policy` to presentations that already verified.
pub fn decide_trust(policy: &TrustPolicy, presented: &[Presentation]) -> TrustVerdict {
    let judge = |p: &Presentation| -> Result<(), UntrustedReason> {
        match policy {
            TrustPolicy::AlwaysTrust => Ok(()),
            TrustPolicy::OwnerMatch { my_owner } => {
                let value = p
                    .disclosed_value(OWNER_CLAIM)
                    .ok_or_else(|| UntrustedReason::MissingClaim(OWNER_CLAIM.into()))?;
                if value != my_owner.to_string() {
                    return Err(UntrustedReason::OwnerMismatch);
                }
                if &p.credential.issuer != my_owner {
                    return Err(UntrustedReason::Issuer);
                }
                Ok(())
            }
            TrustPolicy::RequireClaim { name, value } => {
                let got = p
                    .disclosed_value(name)
                    .ok_or_else(|| UntrustedReason::MissingClaim(name.clone()))?;
                if got != value {
                    return Err(UntrustedReason::ClaimMismatch(name.clone()));
                }
                Ok(())
            }
        }
    };
    if matches!(policy, TrustPolicy::AlwaysTrust) {
        return TrustVerdict::Trusted;
    }
    let mut first_reason = None;
    for p in presented {
        match judge(p) {
            Ok(()) => return TrustVerdict::Trusted,
            Err(reason) => {
                first_reason.get_or_insert(reason);
            }
        }
    }
    TrustVerdict::Untrusted(first_reason.unwrap_or(UntrustedReason::NoCredential))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FailReason {
    Protocol(String),
    Auth(String),
    Channel(String),
    Peer(String),
}

impl FailReason {
    pub fn code(&self) -> &'static str {
        match self {
            FailReason::Protocol(_) => "protocol",
            FailReason::Auth(_) => "auth",
            FailReason::Channel(_) => "channel",
            FailReason::Peer(_) => "peer",
        }
    }
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailReason::Protocol(d) | FailReason::Auth(d) | FailReason::Channel(d) | FailReason::Peer(d) => {
                write!(f, "{}: {d}", self.code())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionState {
    Init,
    HelloSent,
    HelloReceived,
    AuthPending,
    Secure,
    CredentialsExchanged,
    Trusted,
    Untrusted(UntrustedReason),
    Failed(FailReason),
}

impl SessionState {
    /// Position in the forward order of the state machine.
    pub fn rank(&self) -> u8 {
        match self {
            SessionState::Init => 0,
            SessionState::HelloSent | SessionState::HelloReceived => 1,
            SessionState::AuthPending => 2,
            SessionState::Secure => 3,
            SessionState::CredentialsExchanged => 4,
            SessionState::Trusted | SessionState::Untrusted(_) => 5,
            SessionState::Failed(_) => 6,
        }
    }

    pub fn is_secure(&self) -> bool {
        (3..=5).contains(&self.rank())
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            SessionState::Trusted | SessionState::Untrusted(_) | SessionState::Failed(_)
        )
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, SessionState::Failed(_))
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionState::Init => f.write_str("init"),
            SessionState::HelloSent => f.write_str("hello_sent"),
            SessionState::HelloReceived => f.write_str("hello_received"),
            SessionState::AuthPending => f.write_str("auth_pending"),
            SessionState::Secure => f.write_str("secure"),
            SessionState::CredentialsExchanged => f.write_str("credentials_exchanged"),
            SessionState::Trusted => f.write_str("trusted"),
            SessionState::Untrusted(r) => write!(f, "untrusted({})", r.code()),
            SessionState::Failed(r) => write!(f, "failed({})", r.code()),
        }
    }
}

#[derive(Debug, Error)]
pub enum HandshakeError {
    #[error("wallet has no {0} key for its current document")]
    MissingKey(KeyPurpose),
    #[error("peer document has no id")]
    PeerWithoutId,
    #[error("peer document rejected: {0}")]
    PeerDocument(String),
    #[error("session is not secure (state {0})")]
    NotSecure(String),
    #[error("malformed channel record")]
    Malformed,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// What the initiator knows about the responder up front.
#[derive(Debug, Clone)]
pub enum PeerHint {
    Did(Did),
    Document(DidDocument),
}

pub struct HandshakeConfig {
    pub wallet: Arc<Wallet>,
    pub resolver: Arc<Resolver>,
    pub revocations: Arc<dyn RevocationCheck + Send + Sync>,
    pub policy: TrustPolicy,
    /// Ask the peer for credentials. When false this side decides trust on
    /// an empty presentation set as soon as the channel is up.
    pub request_credentials: bool,
    pub session_lifetime: Duration,
}

impl HandshakeConfig {
    pub fn new(
        wallet: Arc<Wallet>,
        resolver: Arc<Resolver>,
        revocations: Arc<dyn RevocationCheck + Send + Sync>,
        policy: TrustPolicy,
    ) -> Self {
        HandshakeConfig {
            wallet,
            resolver,
            revocations,
            policy,
            request_credentials: true,
            session_lifetime: DEFAULT_SESSION_LIFETIME,
        }
    }
}

impl fmt::Debug for HandshakeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HandshakeConfig")
            .field("did", self.wallet.owner_did())
            .field("policy", &self.policy)
            .field("request_credentials", &self.request_credentials)
            .finish_non_exhaustive()
    }
}

/// Running digest over every layer-1 message, in order.
#[derive(Clone, Default)]
pub struct Transcript {
    hasher: Sha256,
    messages: usize,
}

impl Transcript {
    pub fn append(&mut self, message: &[u8]) {
        self.hasher.update((message.len() as u32).to_be_bytes());
        self.hasher.update(message);
        self.messages += 1;
    }

    pub fn digest(&self) -> [u8; 32] {
        self.hasher.clone().finalize().into()
    }

    pub fn len(&self) -> usize {
        self.messages
    }

    pub fn is_empty(&self) -> bool {
        self.messages == 0
    }
}

impl fmt::Debug for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Transcript({} messages, {})", self.messages, hex::encode(self.digest()))
    }
}

fn auth_input(signer: Role, transcript: &[u8; 32]) -> Vec<u8> {
    let label: &[u8] = match signer {
        Role::Initiator => b"ssi-handshake auth initiator",
        Role::Responder => b"ssi-handshake auth responder",
    };
    let mut input = label.to_vec();
    input.extend_from_slice(transcript);
    input
}

/// One side of a handshake. Driven by [`HandshakeSession::step`].
pub struct HandshakeSession {
    config: Arc<HandshakeConfig>,
    role: Role,
    state: SessionState,
    history: Vec<SessionState>,
    my_did: Did,
    peer_did: Option<Did>,
    expected_peer: Option<Did>,
    peer_document: Option<DidDocument>,
    my_nonce: [u8; NONCE_BYTES],
    peer_nonce: Option<[u8; NONCE_BYTES]>,
    ephemeral: KeyPair,
    peer_ephemeral: Option<PublicKey>,
    transcript: Transcript,
    session_keys: Option<SessionKeys>,
    send_counter: SendCounter,
    recv_counter: RecvCounter,
    presented: Vec<Presentation>,
    rejected: Vec<UntrustedReason>,
    trust: Option<TrustVerdict>,
    peer_verdict: Option<TrustVerdict>,
}

impl fmt::Debug for HandshakeSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HandshakeSession")
            .field("role", &self.role)
            .field("state", &self.state)
            .field("my_did", &self.my_did)
            .field("peer_did", &self.peer_did)
            .field("transcript", &self.transcript)
            .finish_non_exhaustive()
    }
}

impl HandshakeSession {
    fn new<R: RngCore + CryptoRng>(config: Arc<HandshakeConfig>, role: Role, rng: &mut R) -> Result<Self, HandshakeError> {
        let wallet = &config.wallet;
        wallet.current_key(KeyPurpose::Sign).ok_or(HandshakeError::MissingKey(KeyPurpose::Sign))?;
        let my_did = wallet.owner_did().clone();
        let mut my_nonce = [0u8; NONCE_BYTES];
        rng.fill_bytes(&mut my_nonce);
        let ephemeral = keygen_with_rng(KeyPurpose::Agree, rng).with_key_id("ephemeral");
        Ok(HandshakeSession {
            config,
            role,
            state: SessionState::Init,
            history: vec![SessionState::Init],
            my_did,
            peer_did: None,
            expected_peer: None,
            peer_document: None,
            my_nonce,
            peer_nonce: None,
            ephemeral,
            peer_ephemeral: None,
            transcript: Transcript::default(),
            session_keys: None,
            send_counter: SendCounter::default(),
            recv_counter: RecvCounter::default(),
            presented: Vec::new(),
            rejected: Vec::new(),
            trust: None,
            peer_verdict: None,
        })
    }

    /// Starts a handshake as initiator and returns the HELLO message.
    pub fn initiate<R: RngCore + CryptoRng>(
        config: Arc<HandshakeConfig>,
        peer_hint: Option<PeerHint>,
        rng: &mut R,
    ) -> Result<(Self, Vec<u8>), HandshakeError> {
        let mut session = Self::new(config, Role::Initiator, rng)?;
        match peer_hint {
            Some(PeerHint::Did(did)) => session.expected_peer = Some(did),
            Some(PeerHint::Document(doc)) => {
                let did = doc.id.clone().ok_or(HandshakeError::PeerWithoutId)?;
                if did.is_peer() {
                    session
                        .config
                        .resolver
                        .store_peer(&did, &doc)
                        .map_err(|e| HandshakeError::PeerDocument(e.to_string()))?;
                }
                session.expected_peer = Some(did);
            }
            None => {}
        }
        let hello = session.hello(MessageType::Hello);
        session.transcript.append(&hello);
        session.set_state(SessionState::HelloSent);
        Ok((session, hello))
    }

    /// Prepares a responder waiting for HELLO.
    pub fn respond<R: RngCore + CryptoRng>(config: Arc<HandshakeConfig>, rng: &mut R) -> Result<Self, HandshakeError> {
        Self::new(config, Role::Responder, rng)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    /// Every state this session has been in, oldest first.
    pub fn history(&self) -> &[SessionState] {
        &self.history
    }

    pub fn my_did(&self) -> &Did {
        &self.my_did
    }

    pub fn peer_did(&self) -> Option<&Did> {
        self.peer_did.as_ref()
    }

    pub fn my_nonce(&self) -> &[u8; NONCE_BYTES] {
        &self.my_nonce
    }

    pub fn peer_nonce(&self) -> Option<&[u8; NONCE_BYTES]> {
        self.peer_nonce.as_ref()
    }

    pub fn ephemeral_public(&self) -> &PublicKey {
        &self.ephemeral.public
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn session_keys(&self) -> Option<&SessionKeys> {
        self.session_keys.as_ref()
    }

    /// Peer presentations that verified.
    pub fn presented(&self) -> &[Presentation] {
        &self.presented
    }

    pub fn trust(&self) -> Option<&TrustVerdict> {
        self.trust.as_ref()
    }

    pub fn peer_verdict(&self) -> Option<&TrustVerdict> {
        self.peer_verdict.as_ref()
    }

    pub fn needs_rekey(&self, now: u64) -> bool {
        self.session_keys.as_ref().is_some_and(|k| k.is_expired(now))
    }

    fn set_state(&mut self, state: SessionState) {
        debug_assert!(
            state.rank() >= self.state.rank(),
            "state machine moved backwards: {} -> {}",
            self.state,
            state
        );
        self.state = state.clone();
        self.history.push(state);
    }

    fn fail(&mut self, reason: FailReason) -> Vec<Vec<u8>> {
        let body = ErrorBody {
            reason: reason.code().to_string(),
        };
        self.set_state(SessionState::Failed(reason));
        vec![encode_message(MessageType::Error, &body)]
    }

    fn hello(&self, kind: MessageType) -> Vec<u8> {
        let document = self
            .my_did
            .is_peer()
            .then(|| self.config.wallet.document().clone());
        encode_message(
            kind,
            &Hello {
                did: self.my_did.clone(),
                document,
                ephemeral: self.ephemeral.public,
                nonce: self.my_nonce,
            },
        )
    }

    /// Feeds one incoming message and returns the messages to send back.
    ///
    /// Any message that is not legal in the current state moves the session
    /// to `Failed`. A failed session ignores further input.
    pub fn step(&mut self, message: &[u8], now: u64) -> Vec<Vec<u8>> {
        if self.state.is_failed() {
            return Vec::new();
        }
        let Some(kind) = message_type(message) else {
            return self.fail(FailReason::Protocol("unknown message type".into()));
        };
        let result = match (self.role, &self.state, kind) {
            (_, _, MessageType::Error) => {
                let reason = from_canonical::<ErrorBody>(&message[1..])
                    .map(|b| b.reason)
                    .unwrap_or_else(|_| "unreadable".into());
                self.set_state(SessionState::Failed(FailReason::Peer(reason)));
                return Vec::new();
            }
            (Role::Responder, SessionState::Init, MessageType::Hello) => self.on_hello(message, now),
            (Role::Initiator, SessionState::HelloSent, MessageType::HelloAck) => self.on_hello_ack(message, now),
            (Role::Responder, SessionState::HelloReceived, MessageType::Auth) => self.on_auth(message, now),
            (Role::Initiator, SessionState::AuthPending, MessageType::AuthAck) => self.on_auth_ack(message, now),
            (_, s, MessageType::CredRequest) if s.is_secure() => self.on_cred_request(message),
            (_, SessionState::Secure, MessageType::CredPresent) if self.config.request_credentials => {
                self.on_cred_present(message, now)
            }
            (_, s, MessageType::TrustResult) if s.is_secure() => self.on_trust_result(message),
            (_, state, kind) => Err(FailReason::Protocol(format!(
                "{} not allowed in state {state} as {:?}",
                kind.name(),
                self.role
            ))),
        };
        match result {
            Ok(out) => out,
            Err(reason) => self.fail(reason),
        }
    }

    fn accept_hello(&mut self, message: &[u8], now: u64) -> Result<(), FailReason> {
        let hello: Hello =
            from_canonical(&message[1..]).map_err(|e| FailReason::Protocol(format!("bad hello: {e}")))?;
        if let Some(expected) = &self.expected_peer {
            if expected != &hello.did {
                return Err(FailReason::Auth(format!("expected {expected}, peer claims {}", hello.did)));
            }
        }
        if hello.did == self.my_did {
            return Err(FailReason::Auth("peer claims our own identifier".into()));
        }
        match (&hello.document, hello.did.is_peer()) {
            (Some(doc), true) => self
                .config
                .resolver
                .store_peer(&hello.did, doc)
                .map_err(|e| FailReason::Auth(e.to_string()))?,
            (None, true) => return Err(FailReason::Protocol("peer DID without document".into())),
            (Some(_), false) => return Err(FailReason::Protocol("document sent for a resolvable DID".into())),
            (None, false) => {}
        }
        let doc = self
            .config
            .resolver
            .resolve(&hello.did, now)
            .map_err(|e| FailReason::Auth(format!("cannot resolve peer: {e}")))?;
        self.peer_did = Some(hello.did);
        self.peer_document = Some(doc);
        self.peer_nonce = Some(hello.nonce);
        self.peer_ephemeral = Some(hello.ephemeral);
        self.transcript.append(message);
        Ok(())
    }

    fn on_hello(&mut self, message: &[u8], now: u64) -> Result<Vec<Vec<u8>>, FailReason> {
        self.accept_hello(message, now)?;
        self.set_state(SessionState::HelloReceived);
        let ack = self.hello(MessageType::HelloAck);
        self.transcript.append(&ack);
        Ok(vec![ack])
    }

    fn on_hello_ack(&mut self, message: &[u8], now: u64) -> Result<Vec<Vec<u8>>, FailReason> {
        self.accept_hello(message, now)?;
        let auth = self.make_auth(MessageType::Auth)?;
        self.transcript.append(&auth);
        self.set_state(SessionState::AuthPending);
        Ok(vec![auth])
    }

    fn make_auth(&self, kind: MessageType) -> Result<Vec<u8>, FailReason> {
        let key = self
            .config
            .wallet
            .current_key(KeyPurpose::Sign)
            .ok_or_else(|| FailReason::Auth("no signing key".into()))?;
        let signature = sign(key, &auth_input(self.role, &self.transcript.digest()))
            .map_err(|e| FailReason::Auth(e.to_string()))?;
        Ok(encode_message(
            kind,
            &Auth {
                key_id: key.key_id.clone(),
                signature,
            },
        ))
    }

    fn check_auth(&self, message: &[u8]) -> Result<(), FailReason> {
        let auth: Auth =
            from_canonical(&message[1..]).map_err(|e| FailReason::Protocol(format!("bad auth: {e}")))?;
        let doc = self.peer_document.as_ref().expect("set by hello");
        let key = doc
            .current_key(&auth.key_id)
            .filter(|k| k.purpose == KeyPurpose::Sign)
            .ok_or_else(|| FailReason::Auth(format!("key {} is not a signing key of the peer", auth.key_id)))?;
        if !verify(&key.public_key, &auth_input(self.role.peer(), &self.transcript.digest()), &auth.signature) {
            return Err(FailReason::Auth("transcript signature does not verify".into()));
        }
        Ok(())
    }

    fn establish(&mut self, now: u64) -> Result<(), FailReason> {
        let peer = self.peer_ephemeral.expect("set by hello");
        let shared = agree(&self.ephemeral, &peer).map_err(|e| FailReason::Auth(e.to_string()))?;
        self.session_keys = Some(derive_session_at(
            &shared,
            &self.transcript.digest(),
            self.role,
            now,
            self.config.session_lifetime,
        ));
        self.set_state(SessionState::Secure);
        Ok(())
    }

    fn on_auth(&mut self, message: &[u8], now: u64) -> Result<Vec<Vec<u8>>, FailReason> {
        self.check_auth(message)?;
        self.transcript.append(message);
        let ack = self.make_auth(MessageType::AuthAck)?;
        self.transcript.append(&ack);
        self.establish(now)?;
        let mut out = vec![ack];
        out.extend(self.open_layer_two(now)?);
        Ok(out)
    }

    fn on_auth_ack(&mut self, message: &[u8], now: u64) -> Result<Vec<Vec<u8>>, FailReason> {
        self.check_auth(message)?;
        self.transcript.append(message);
        self.establish(now)?;
        self.open_layer_two(now)
    }

    /// First layer-2 flight: a credential request, or an immediate verdict
    /// when this side does not ask for credentials.
    fn open_layer_two(&mut self, now: u64) -> Result<Vec<Vec<u8>>, FailReason> {
        if self.config.request_credentials {
            let body = CredRequest {
                claims: self.config.policy.requested_claims(),
            };
            Ok(vec![self.seal_message(MessageType::CredRequest, &body)?])
        } else {
            self.conclude(now)
        }
    }

    fn on_cred_request(&mut self, message: &[u8]) -> Result<Vec<Vec<u8>>, FailReason> {
        let request: CredRequest = self.open_message(MessageType::CredRequest, message)?;
        let presentations = self.select_presentations(&request.claims);
        Ok(vec![self.seal_message(
            MessageType::CredPresent,
            &CredPresent { presentations },
        )?])
    }

    fn select_presentations(&self, claims: &[String]) -> Vec<Presentation> {
        if claims.is_empty() {
            return Vec::new();
        }
        self.config
            .wallet
            .credentials()
            .iter()
            .filter(|h| h.credential.subject == self.my_did)
            .filter(|h| claims.iter().all(|c| h.credential.commitment(c).is_some()))
            .filter_map(|h| present(&h.credential, &h.openings, claims.iter().map(String::as_str)).ok())
            .collect()
    }

    fn on_cred_present(&mut self, message: &[u8], now: u64) -> Result<Vec<Vec<u8>>, FailReason> {
        let body: CredPresent = self.open_message(MessageType::CredPresent, message)?;
        let peer = self.peer_did.clone().expect("secure implies peer");
        for p in body.presentations {
            if p.credential.subject != peer {
                self.rejected.push(UntrustedReason::SubjectMismatch);
                continue;
            }
            match verify_presentation(&p, &self.config.resolver, &self.config.revocations, now) {
                Verdict::Valid => self.presented.push(p),
                Verdict::Invalid(reason) => self.rejected.push(UntrustedReason::InvalidPresentation(reason)),
            }
        }
        self.conclude(now)
    }

    fn conclude(&mut self, _now: u64) -> Result<Vec<Vec<u8>>, FailReason> {
        self.set_state(SessionState::CredentialsExchanged);
        let mut verdict = decide_trust(&self.config.policy, &self.presented);
        if let TrustVerdict::Untrusted(UntrustedReason::NoCredential) = &verdict {
            if let Some(reason) = self.rejected.first() {
                verdict = TrustVerdict::Untrusted(reason.clone());
            }
        }
        self.set_state(match &verdict {
            TrustVerdict::Trusted => SessionState::Trusted,
            TrustVerdict::Untrusted(r) => SessionState::Untrusted(r.clone()),
        });
        self.trust = Some(verdict.clone());
        Ok(vec![self.seal_message(MessageType::TrustResult, &TrustResult { verdict })?])
    }

    fn on_trust_result(&mut self, message: &[u8]) -> Result<Vec<Vec<u8>>, FailReason> {
        let body: TrustResult = self.open_message(MessageType::TrustResult, message)?;
        self.peer_verdict = Some(body.verdict);
        Ok(Vec::new())
    }

    fn seal_record(&mut self, kind: MessageType, plaintext: &[u8]) -> Result<Vec<u8>, HandshakeError> {
        let keys = self
            .session_keys
            .as_ref()
            .ok_or_else(|| HandshakeError::NotSecure(self.state.to_string()))?;
        let counter = self.send_counter.take()?;
        let mut out = Vec::with_capacity(1 + COUNTER_LEN + plaintext.len() + TAG_LEN);
        out.push(kind.tag());
        out.extend_from_slice(&counter.to_be_bytes());
        let ciphertext = seal(&keys.send_key, &counter_nonce(self.role, counter), plaintext, &out);
        out.extend_from_slice(&ciphertext);
        Ok(out)
    }

    fn open_record(&mut self, kind: MessageType, message: &[u8]) -> Result<Vec<u8>, HandshakeError> {
        let keys = self
            .session_keys
            .as_ref()
            .ok_or_else(|| HandshakeError::NotSecure(self.state.to_string()))?;
        if message.len() < 1 + COUNTER_LEN + TAG_LEN || message[0] != kind.tag() {
            return Err(HandshakeError::Malformed);
        }
        let (header, ciphertext) = message.split_at(1 + COUNTER_LEN);
        let counter = u64::from_be_bytes(header[1..].try_into().expect("8 bytes"));
        self.recv_counter.check(counter)?;
        let plaintext = open(&keys.recv_key, &counter_nonce(self.role.peer(), counter), ciphertext, header)?;
        self.recv_counter.commit(counter);
        Ok(plaintext)
    }

    fn seal_message<T: Serialize>(&mut self, kind: MessageType, body: &T) -> Result<Vec<u8>, FailReason> {
        debug_assert!(kind.is_encrypted());
        self.seal_record(kind, &to_canonical(body))
            .map_err(|e| FailReason::Channel(e.to_string()))
    }

    fn open_message<T: serde::de::DeserializeOwned + Serialize>(
        &mut self,
        kind: MessageType,
        message: &[u8],
    ) -> Result<T, FailReason> {
        let plaintext = self
            .open_record(kind, message)
            .map_err(|e| FailReason::Channel(e.to_string()))?;
        from_canonical(&plaintext).map_err(|e| FailReason::Protocol(format!("bad {} body: {e}", kind.name())))
    }

    /// Encrypts application data under the session keys.
    pub fn secure_send(&mut self, plaintext: &[u8]) -> Result<Vec<u8>, HandshakeError> {
        if !self.state.is_secure() {
            return Err(HandshakeError::NotSecure(self.state.to_string()));
        }
        self.seal_record(MessageType::AppData, plaintext)
    }

    /// Decrypts application data. Replayed or altered records are rejected
    /// without affecting the session.
    pub fn secure_recv(&mut self, message: &[u8]) -> Result<Vec<u8>, HandshakeError> {
        if !self.state.is_secure() {
            return Err(HandshakeError::NotSecure(self.state.to_string()));
        }
        self.open_record(MessageType::AppData, message)
    }
}

/// One batch of messages sent in the same direction.
#[derive(Debug, Clone)]
pub struct Flight {
    pub from: Role,
    pub messages: Vec<Vec<u8>>,
}

/// Outcome of driving two sessions against each other.
#[derive(Debug)]
pub struct Exchange {
    pub flights: Vec<Flight>,
    /// Round trip (1-based) by the end of which both sides were secure.
    pub secure_round_trip: Option<usize>,
    /// Round trip by the end of which both sides had a trust verdict.
    pub decided_round_trip: Option<usize>,
}

impl Exchange {
    pub fn message_count(&self) -> usize {
        self.flights.iter().map(|f| f.messages.len()).sum()
    }
}

/// Delivers messages between two sessions over a perfect in-memory channel.
///
/// `tamper` may rewrite any message in flight; it receives the flight index
/// (0-based), the message index within the flight and the message bytes.
pub fn exchange(
    initiator: &mut HandshakeSession,
    responder: &mut HandshakeSession,
    hello: Vec<u8>,
    now: u64,
    mut tamper: impl FnMut(usize, usize, &mut Vec<u8>),
) -> Exchange {
    let mut flights = Vec::new();
    let mut pending = Flight {
        from: Role::Initiator,
        messages: vec![hello],
    };
    let mut secure_round_trip = None;
    let mut decided_round_trip = None;
    let decided = |s: &HandshakeSession| matches!(s.state(), SessionState::Trusted | SessionState::Untrusted(_));
    // Bounded: an honest run needs 7 flights.
    for index in 0..32 {
        if pending.messages.is_empty() {
            break;
        }
        for (i, m) in pending.messages.iter_mut().enumerate() {
            tamper(index, i, m);
        }
        let receiver = match pending.from {
            Role::Initiator => &mut *responder,
            Role::Responder => &mut *initiator,
        };
        let mut replies = Vec::new();
        for m in &pending.messages {
            replies.extend(receiver.step(m, now));
        }
        let round_trip = index / 2 + 1;
        if secure_round_trip.is_none() && initiator.state().is_secure() && responder.state().is_secure() {
            secure_round_trip = Some(round_trip);
        }
        if decided_round_trip.is_none() && decided(initiator) && decided(responder) {
            decided_round_trip = Some(round_trip);
        }
        let next_from = pending.from.peer();
        flights.push(std::mem::replace(
            &mut pending,
            Flight {
                from: next_from,
                messages: replies,
            },
        ));
    }
    Exchange {
        flights,
        secure_round_trip,
        decided_round_trip,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credentials::{issue, Claim, NoRevocations};
    use crate::identity::{PEER_METHOD, REGISTRY_METHOD};
    use crate::resolver::Registry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const NOW: u64 = 1_700_000_000;

    struct World {
        registry: Arc<Registry>,
        rng: ChaCha20Rng,
    }

    impl World {
        fn new(seed: u64) -> Self {
            World {
                registry: Arc::new(Registry::new()),
                rng: ChaCha20Rng::seed_from_u64(seed),
            }
        }

        fn identity(&mut self, method: &str) -> Wallet {
            let w = Wallet::create_identity(method, vec![], &mut self.rng).unwrap();
            if method == REGISTRY_METHOD {
                self.registry.register(w.document(), w.signing_key().unwrap()).unwrap();
            }
            w
        }

        fn grant(&mut self, owner: &Wallet, device: &mut Wallet, claims: &[Claim]) {
            let (vc, openings) = issue(
                owner.signing_key().unwrap(),
                owner.document(),
                device.owner_did(),
                claims,
                Duration::from_secs(30 * 86_400),
                NOW - 10,
                &mut self.rng,
            )
            .unwrap();
            device.put_credential(vc, openings).unwrap();
        }

        fn config(&self, wallet: Wallet, policy: TrustPolicy, known: &[&Wallet]) -> Arc<HandshakeConfig> {
            let resolver = Arc::new(Resolver::new(self.registry.clone()));
            for w in known {
                if w.owner_did().is_peer() {
                    resolver.store_peer(w.owner_did(), w.document()).unwrap();
                }
            }
            Arc::new(HandshakeConfig::new(
                Arc::new(wallet),
                resolver,
                Arc::new(NoRevocations),
                policy,
            ))
        }
    }

    fn owner_claim(owner: &Wallet) -> Claim {
        Claim::new("owner", owner.owner_did().to_string())
    }

    /// Alice owns a camera and a lock, both provisioned with owner=Alice.
    fn alice_pair(seed: u64, method: &str) -> (World, Arc<HandshakeConfig>, Arc<HandshakeConfig>) {
        let mut world = World::new(seed);
        let alice = world.identity(method);
        let mut camera = world.identity(method);
        let mut lock = world.identity(method);
        world.grant(&alice, &mut camera, &[owner_claim(&alice), Claim::new("type", "Camera")]);
        world.grant(&alice, &mut lock, &[owner_claim(&alice), Claim::new("type", "SmartLock")]);
        let policy = TrustPolicy::OwnerMatch {
            my_owner: alice.owner_did().clone(),
        };
        let cam = world.config(camera, policy.clone(), &[&alice]);
        let lck = world.config(lock, policy, &[&alice]);
        (world, cam, lck)
    }

    fn run(
        world: &mut World,
        a: Arc<HandshakeConfig>,
        b: Arc<HandshakeConfig>,
    ) -> (HandshakeSession, HandshakeSession, Exchange) {
        let (mut i, hello) = HandshakeSession::initiate(a, None, &mut world.rng).unwrap();
        let mut r = HandshakeSession::respond(b, &mut world.rng).unwrap();
        let ex = exchange(&mut i, &mut r, hello, NOW, |_, _, _| {});
        (i, r, ex)
    }

    #[test]
    fn owner_centric_run_reaches_trusted() {
        let (mut world, cam, lck) = alice_pair(1, PEER_METHOD);
        let (i, r, ex) = run(&mut world, cam, lck);
        assert_eq!(i.state(), &SessionState::Trusted);
        assert_eq!(r.state(), &SessionState::Trusted);
        assert_eq!(ex.secure_round_trip, Some(2));
        assert_eq!(ex.decided_round_trip, Some(3));
        let (ik, rk) = (i.session_keys().unwrap(), r.session_keys().unwrap());
        assert_eq!(ik.send_key, rk.recv_key);
        assert_eq!(ik.recv_key, rk.send_key);
        assert_eq!(i.peer_verdict(), Some(&TrustVerdict::Trusted));
        assert_eq!(r.peer_verdict(), Some(&TrustVerdict::Trusted));
        assert_eq!(i.presented().len(), 1);
        // Only the requested claim is disclosed.
        assert_eq!(i.presented()[0].disclosed.len(), 1);
        let kinds: Vec<Vec<&str>> = ex
            .flights
            .iter()
            .map(|f| f.messages.iter().map(|m| message_type(m).unwrap().name()).collect())
            .collect();
        assert_eq!(
            kinds,
            vec![
                vec!["HELLO"],
                vec!["HELLO_ACK"],
                vec!["AUTH"],
                vec!["AUTH_ACK", "CRED_REQUEST"],
                vec!["CRED_REQUEST", "CRED_PRESENT"],
                vec!["CRED_PRESENT", "TRUST_RESULT"],
                vec!["TRUST_RESULT"],
            ]
        );
        for s in [&i, &r] {
            assert!(s.history().windows(2).all(|w| w[0].rank() <= w[1].rank()));
        }
    }

    #[test]
    fn registry_dids_send_no_document() {
        let (mut world, cam, lck) = alice_pair(2, REGISTRY_METHOD);
        let (mut i, hello) = HandshakeSession::initiate(cam, None, &mut world.rng).unwrap();
        let parsed: Hello = from_canonical(&hello[1..]).unwrap();
        assert!(parsed.document.is_none());
        let mut r = HandshakeSession::respond(lck, &mut world.rng).unwrap();
        exchange(&mut i, &mut r, hello, NOW, |_, _, _| {});
        assert_eq!(i.state(), &SessionState::Trusted);
        assert_eq!(r.state(), &SessionState::Trusted);
    }

    #[test]
    fn peer_hello_embeds_document_and_is_fresh() {
        let (mut world, cam, _) = alice_pair(3, PEER_METHOD);
        let (s1, h1) = HandshakeSession::initiate(cam.clone(), None, &mut world.rng).unwrap();
        let (s2, h2) = HandshakeSession::initiate(cam.clone(), None, &mut world.rng).unwrap();
        let parsed: Hello = from_canonical(&h1[1..]).unwrap();
        assert_eq!(parsed.document.as_ref(), Some(cam.wallet.document()));
        assert_ne!(s1.my_nonce(), s2.my_nonce());
        assert_ne!(s1.ephemeral_public(), s2.ephemeral_public());
        assert_ne!(h1, h2);
        assert_eq!(s1.state(), &SessionState::HelloSent);
    }

    #[test]
    fn different_owner_is_untrusted() {
        let mut world = World::new(4);
        let alice = world.identity(PEER_METHOD);
        let bob = world.identity(PEER_METHOD);
        let mut camera = world.identity(PEER_METHOD);
        let mut lock = world.identity(PEER_METHOD);
        world.grant(&alice, &mut camera, &[owner_claim(&alice)]);
        world.grant(&bob, &mut lock, &[owner_claim(&bob)]);
        let cam = world.config(camera, TrustPolicy::OwnerMatch { my_owner: alice.owner_did().clone() }, &[&alice, &bob]);
        let lck = world.config(lock, TrustPolicy::OwnerMatch { my_owner: bob.owner_did().clone() }, &[&alice, &bob]);
        let (i, r, _) = run(&mut world, cam, lck);
        assert_eq!(i.state(), &SessionState::Untrusted(UntrustedReason::OwnerMismatch));
        assert_eq!(r.state(), &SessionState::Untrusted(UntrustedReason::OwnerMismatch));
    }

    #[test]
    fn foreign_issuer_is_untrusted() {
        let mut world = World::new(5);
        let alice = world.identity(PEER_METHOD);
        let mallory = world.identity(PEER_METHOD);
        let mut camera = world.identity(PEER_METHOD);
        let mut lock = world.identity(PEER_METHOD);
        world.grant(&alice, &mut camera, &[owner_claim(&alice)]);
        // Mallory asserts Alice's ownership of the lock.
        world.grant(&mallory, &mut lock, &[owner_claim(&alice)]);
        let policy = TrustPolicy::OwnerMatch { my_owner: alice.owner_did().clone() };
        let cam = world.config(camera, policy.clone(), &[&alice, &mallory]);
        let lck = world.config(lock, policy, &[&alice, &mallory]);
        let (i, r, _) = run(&mut world, cam, lck);
        assert_eq!(i.state(), &SessionState::Untrusted(UntrustedReason::Issuer));
        assert_eq!(r.state(), &SessionState::Trusted);
    }

    #[test]
    fn unknown_issuer_presentation_rejected() {
        let mut world = World::new(6);
        let alice = world.identity(PEER_METHOD);
        let mut camera = world.identity(PEER_METHOD);
        let mut lock = world.identity(PEER_METHOD);
        world.grant(&alice, &mut camera, &[owner_claim(&alice)]);
        world.grant(&alice, &mut lock, &[owner_claim(&alice)]);
        let policy = TrustPolicy::OwnerMatch { my_owner: alice.owner_did().clone() };
        // The camera never learned Alice's document.
        let cam = world.config(camera, policy.clone(), &[]);
        let lck = world.config(lock, policy, &[&alice]);
        let (i, _, _) = run(&mut world, cam, lck);
        assert!(matches!(
            i.state(),
            SessionState::Untrusted(UntrustedReason::InvalidPresentation(InvalidReason::IssuerUnresolvable(_)))
        ));
    }

    #[test]
    fn decide_trust_rules() {
        let mut world = World::new(7);
        let alice = world.identity(PEER_METHOD);
        let mut dev = world.identity(PEER_METHOD);
        world.grant(&alice, &mut dev, &[owner_claim(&alice), Claim::new("type", "Camera")]);
        let held = &dev.credentials()[0];
        let p = present(&held.credential, &held.openings, ["owner", "type"]).unwrap();
        let p_type = present(&held.credential, &held.openings, ["type"]).unwrap();

        let owner = TrustPolicy::OwnerMatch { my_owner: alice.owner_did().clone() };
        assert_eq!(decide_trust(&owner, std::slice::from_ref(&p)), TrustVerdict::Trusted);
        assert_eq!(decide_trust(&owner, &[]), TrustVerdict::Untrusted(UntrustedReason::NoCredential));
        assert_eq!(
            decide_trust(&owner, std::slice::from_ref(&p_type)),
            TrustVerdict::Untrusted(UntrustedReason::MissingClaim("owner".into()))
        );
        assert_eq!(decide_trust(&owner, &[p_type.clone(), p.clone()]), TrustVerdict::Trusted);
        assert_eq!(decide_trust(&TrustPolicy::AlwaysTrust, &[]), TrustVerdict::Trusted);
        let camera = TrustPolicy::RequireClaim { name: "type".into(), value: "Camera".into() };
        assert_eq!(decide_trust(&camera, std::slice::from_ref(&p_type)), TrustVerdict::Trusted);
        let lock = TrustPolicy::RequireClaim { name: "type".into(), value: "SmartLock".into() };
        assert_eq!(
            decide_trust(&lock, &[p_type]),
            TrustVerdict::Untrusted(UntrustedReason::ClaimMismatch("type".into()))
        );
    }

    #[test]
    fn foreign_auth_key_fails() {
        let (mut world, cam, lck) = alice_pair(8, PEER_METHOD);
        let intruder = keygen_with_rng(KeyPurpose::Sign, &mut world.rng);
        let (mut i, hello) = HandshakeSession::initiate(cam, None, &mut world.rng).unwrap();
        let mut r = HandshakeSession::respond(lck, &mut world.rng).unwrap();
        exchange(&mut i, &mut r, hello, NOW, |flight, idx, m| {
            if flight == 3 && idx == 0 {
                // Replace AUTH_ACK with one signed by a key absent from the responder's document.
                let forged = Auth {
                    key_id: intruder.key_id.clone(),
                    signature: sign(&intruder, b"whatever").unwrap(),
                };
                *m = encode_message(MessageType::AuthAck, &forged);
            }
        });
        assert!(matches!(i.state(), SessionState::Failed(FailReason::Auth(_))));
        assert!(matches!(r.state(), SessionState::Failed(FailReason::Peer(_))));
    }

    #[test]
    fn out_of_order_is_protocol_failure() {
        let (mut world, cam, lck) = alice_pair(9, PEER_METHOD);
        let (mut i, hello) = HandshakeSession::initiate(cam, None, &mut world.rng).unwrap();
        let mut r = HandshakeSession::respond(lck, &mut world.rng).unwrap();
        // Initiator receiving its own HELLO back.
        let out = i.step(&hello, NOW);
        assert!(matches!(i.state(), SessionState::Failed(FailReason::Protocol(_))));
        assert_eq!(message_type(&out[0]), Some(MessageType::Error));
        // A failed session ignores input.
        assert!(i.step(&hello, NOW).is_empty());

        let ack = r.step(&hello, NOW);
        assert_eq!(r.state(), &SessionState::HelloReceived);
        let replay = r.step(&hello, NOW);
        assert!(matches!(r.state(), SessionState::Failed(FailReason::Protocol(_))));
        assert_eq!(replay.len(), 1);
        assert_eq!(message_type(&ack[0]), Some(MessageType::HelloAck));

        let mut fresh = HandshakeSession::respond(i.config.clone(), &mut world.rng).unwrap();
        fresh.step(&[0x42, 1, 2], NOW);
        assert!(matches!(fresh.state(), SessionState::Failed(FailReason::Protocol(_))));
    }

    #[test]
    fn secure_channel_send_recv() {
        let (mut world, cam, lck) = alice_pair(10, PEER_METHOD);
        let (mut i, mut r, _) = run(&mut world, cam.clone(), lck.clone());
        let c1 = i.secure_send(b"unlock front door").unwrap();
        assert_eq!(r.secure_recv(&c1).unwrap(), b"unlock front door");
        assert!(matches!(
            r.secure_recv(&c1),
            Err(HandshakeError::Crypto(CryptoError::Replay { .. }))
        ));
        let c2 = r.secure_send(b"ok").unwrap();
        let mut bad = c2.clone();
        let n = bad.len() - 1;
        bad[n] ^= 1;
        assert!(matches!(
            i.secure_recv(&bad),
            Err(HandshakeError::Crypto(CryptoError::AuthenticationFailed))
        ));
        assert_eq!(i.secure_recv(&c2).unwrap(), b"ok");

        // A record from another session does not open here.
        let (mut i2, _, _) = run(&mut world, cam, lck);
        let foreign = i2.secure_send(b"unlock front door").unwrap();
        assert!(r.secure_recv(&foreign).is_err());

        let (mut pending, _) = HandshakeSession::initiate(i.config.clone(), None, &mut world.rng).unwrap();
        assert!(matches!(pending.secure_send(b"x"), Err(HandshakeError::NotSecure(_))));
    }

    #[test]
    fn one_sided_exchange() {
        let (mut world, cam, lck) = alice_pair(11, PEER_METHOD);
        let lck = Arc::new(HandshakeConfig {
            wallet: lck.wallet.clone(),
            resolver: lck.resolver.clone(),
            revocations: lck.revocations.clone(),
            policy: TrustPolicy::AlwaysTrust,
            request_credentials: false,
            session_lifetime: lck.session_lifetime,
        });
        let (i, r, ex) = run(&mut world, cam, lck);
        assert_eq!(i.state(), &SessionState::Trusted);
        assert_eq!(r.state(), &SessionState::Trusted);
        assert_eq!(ex.decided_round_trip, Some(3));
        assert!(r.presented().is_empty());
    }

    #[test]
    fn expected_peer_mismatch() {
        let (mut world, cam, lck) = alice_pair(12, PEER_METHOD);
        let other = world.identity(PEER_METHOD);
        let (mut i, hello) =
            HandshakeSession::initiate(cam, Some(PeerHint::Did(other.owner_did().clone())), &mut world.rng).unwrap();
        let mut r = HandshakeSession::respond(lck, &mut world.rng).unwrap();
        exchange(&mut i, &mut r, hello, NOW, |_, _, _| {});
        assert!(matches!(i.state(), SessionState::Failed(FailReason::Auth(_))));
    }

    #[test]
    fn layer_two_tamper_is_channel_failure() {
        let (mut world, cam, lck) = alice_pair(13, PEER_METHOD);
        let (mut i, hello) = HandshakeSession::initiate(cam, None, &mut world.rng).unwrap();
        let mut r = HandshakeSession::respond(lck, &mut world.rng).unwrap();
        exchange(&mut i, &mut r, hello, NOW, |flight, idx, m| {
            if flight == 4 && idx == 1 {
                let n = m.len() / 2;
                m[n] ^= 0x20;
            }
        });
        assert!(matches!(r.state(), SessionState::Failed(FailReason::Channel(_))));
    }

    #[test]
    fn ciphertext_hides_claim_values() {
        let (mut world, cam, lck) = alice_pair(14, PEER_METHOD);
        let (mut i, hello) = HandshakeSession::initiate(cam.clone(), None, &mut world.rng).unwrap();
        let mut r = HandshakeSession::respond(lck, &mut world.rng).unwrap();
        let ex = exchange(&mut i, &mut r, hello, NOW, |_, _, _| {});
        let owner = cam.wallet.credentials()[0].openings["owner"].value.clone();
        for f in &ex.flights {
            for m in f.messages.iter().filter(|m| message_type(m) == Some(MessageType::CredPresent)) {
                assert!(!m.windows(8).any(|w| owner.as_bytes().windows(8).any(|v| v == w)));
            }
        }
    }
}
