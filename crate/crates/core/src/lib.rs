//! Self-sovereign identity for constrained machine-to-machine devices.
//!
//! Devices carry self-certifying DIDs, receive verifiable credentials from
//! their owner and authenticate each other with a two-layer handshake: a
//! DID-authenticated key exchange, then a credential exchange inside the
//! resulting channel. Links are simulated with small MTUs, loss and
//! reordering.

pub mod credentials;
pub mod crypto;
pub mod encoding;
pub mod handshake;
pub mod harness;
pub mod identity;
pub mod resolver;
pub mod transport;
pub mod wallet;

pub use credentials::{
    issue, present, verify_credential, verify_presentation, Claim, ClaimOpenings, InvalidReason, NoRevocations,
    Presentation, RevocationCheck, Verdict, VerifiableCredential,
};
pub use crypto::{KeyPair, KeyPurpose, PublicKey, Role, SessionKeys, Signature};
pub use handshake::{
    decide_trust, FailReason, HandshakeConfig, HandshakeSession, PeerHint, SessionState, TrustPolicy, TrustVerdict,
    UntrustedReason,
};
pub use harness::{run_scenario, MetricsReport, Scenario, Simulation};
pub use identity::{Did, DidDocument, ServiceEndpoint, VerificationKey};
pub use resolver::{Registry, Resolve, Resolver};
pub use transport::{LinkProfile, SimLink};
pub use wallet::{KdfParams, Wallet};
