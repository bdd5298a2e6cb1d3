//! Verifiable credentials with selective disclosure.
//!
//! Claims are never stored in the credential itself. Each claim is bound by
//! a salted SHA-256 commitment; the holder keeps the openings (value and
//! salt) and reveals only the ones a verifier asks for. This stands in for
//! a zero-knowledge disclosure scheme: subsets can be revealed, predicates
//! over hidden values cannot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{hex_bytes, sign, verify, KeyPair, KeyPurpose, Signature};
use crate::encoding::{from_canonical, to_canonical, EncodingError};
use crate::identity::{self_certifying_id, Did, DidDocument};
use crate::resolver::Resolve;

pub const SALT_LEN: usize = 16;
pub const CREDENTIAL_EXTENSION: &str = "vc";
pub const PRESENTATION_EXTENSION: &str = "vp";

pub type Salt = [u8; SALT_LEN];

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("a credential needs at least one claim")]
    NoClaims,
    #[error("claim names must be non-empty")]
    EmptyClaimName,
    #[error("duplicate claim `{0}`")]
    DuplicateClaim(String),
    #[error("issuer document has no id")]
    IssuerWithoutId,
    #[error("signing key {0} is not a current signing key of the issuer")]
    KeyNotInDocument(String),
    #[error("validity must be positive")]
    ZeroValidity,
    #[error("claim `{0}` is not part of the credential")]
    UnknownClaim(String),
    #[error("no opening held for claim `{0}`")]
    MissingOpening(String),
    #[error("nothing to disclose")]
    EmptyDisclosure,
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RevocationError {
    #[error("only {owner} may revoke in this registry")]
    NotOwner { owner: Did },
    #[error("caller key is not a current signing key of {0}")]
    NotIssuerKey(Did),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub value: String,
}

impl Claim {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Claim {
            name: name.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimCommitment {
    pub claim_name: String,
    #[serde(with = "hex_bytes")]
    pub commitment: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialProof {
    pub verification_key_id: String,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiableCredential {
    pub vc_id: String,
    pub issuer: Did,
    pub subject: Did,
    pub commitments: Vec<ClaimCommitment>,
    pub issued_at: u64,
    pub expires_at: u64,
    pub proof: CredentialProof,
}

/// Everything the signature covers.
#[derive(Serialize)]
struct SignedPart<'a> {
    vc_id: &'a str,
    issuer: &'a Did,
    subject: &'a Did,
    commitments: &'a [ClaimCommitment],
    issued_at: u64,
    expires_at: u64,
    verification_key_id: &'a str,
}

impl VerifiableCredential {
    fn signing_bytes(&self) -> Vec<u8> {
        to_canonical(&SignedPart {
            vc_id: &self.vc_id,
            issuer: &self.issuer,
            subject: &self.subject,
            commitments: &self.commitments,
            issued_at: self.issued_at,
            expires_at: self.expires_at,
            verification_key_id: &self.proof.verification_key_id,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_canonical(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CredentialError> {
        Ok(from_canonical(bytes)?)
    }

    pub fn commitment(&self, name: &str) -> Option<&[u8; 32]> {
        self.commitments
            .iter()
            .find(|c| c.claim_name == name)
            .map(|c| &c.commitment)
    }

    pub fn claim_names(&self) -> impl Iterator<Item = &str> {
        self.commitments.iter().map(|c| c.claim_name.as_str())
    }
}

/// Value and salt of one committed claim. Held privately by the subject.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opening {
    pub value: String,
    #[serde(with = "hex_bytes")]
    pub salt: Salt,
}

impl fmt::Debug for Opening {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Opening").finish_non_exhaustive()
    }
}

/// Openings for every claim of one credential, keyed by claim name.
pub type ClaimOpenings = BTreeMap<String, Opening>;

/// Commitment to one claim: SHA-256 over the length-prefixed name, the
/// length-prefixed value and the salt.
pub fn commit_claim(name: &str, value: &str, salt: &Salt) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((name.len() as u32).to_be_bytes());
    h.update(name.as_bytes());
    h.update((value.len() as u32).to_be_bytes());
    h.update(value.as_bytes());
    h.update(salt);
    h.finalize().into()
}

/// Issues a credential over `claims` for `subject`.
///
/// Returns the credential and the per-claim openings; the openings go to
/// the holder only.
#[allow(clippy::too_many_arguments)]
pub fn issue<R: RngCore + CryptoRng>(
    issuer_kp: &KeyPair,
    issuer_doc: &DidDocument,
    subject: &Did,
    claims: &[Claim],
    validity: Duration,
    now: u64,
    rng: &mut R,
) -> Result<(VerifiableCredential, ClaimOpenings), CredentialError> {
    let issuer = issuer_doc.id.clone().ok_or(CredentialError::IssuerWithoutId)?;
    if claims.is_empty() {
        return Err(CredentialError::NoClaims);
    }
    if validity.as_secs() == 0 {
        return Err(CredentialError::ZeroValidity);
    }
    let key = issuer_doc
        .current_key(&issuer_kp.key_id)
        .filter(|k| k.purpose == KeyPurpose::Sign && k.public_key == issuer_kp.public)
        .ok_or_else(|| CredentialError::KeyNotInDocument(issuer_kp.key_id.clone()))?;

    let mut seen = BTreeSet::new();
    let mut commitments = Vec::with_capacity(claims.len());
    let mut openings = ClaimOpenings::new();
    for claim in claims {
        if claim.name.is_empty() {
            return Err(CredentialError::EmptyClaimName);
        }
        if !seen.insert(claim.name.as_str()) {
            return Err(CredentialError::DuplicateClaim(claim.name.clone()));
        }
        let mut salt = [0u8; SALT_LEN];
        rng.fill_bytes(&mut salt);
        commitments.push(ClaimCommitment {
            claim_name: claim.name.clone(),
            commitment: commit_claim(&claim.name, &claim.value, &salt),
        });
        openings.insert(
            claim.name.clone(),
            Opening {
                value: claim.value.clone(),
                salt,
            },
        );
    }

    let mut id_bytes = [0u8; 16];
    rng.fill_bytes(&mut id_bytes);
    let mut vc = VerifiableCredential {
        vc_id: format!("urn:vc:{}", bs58::encode(id_bytes).into_string()),
        issuer,
        subject: subject.clone(),
        commitments,
        issued_at: now,
        expires_at: now.saturating_add(validity.as_secs()),
        proof: CredentialProof {
            verification_key_id: key.key_id.clone(),
            signature: Signature([0u8; 64]),
        },
    };
    vc.proof.signature = sign(issuer_kp, &vc.signing_bytes())
        .map_err(|_| CredentialError::KeyNotInDocument(issuer_kp.key_id.clone()))?;
    Ok((vc, openings))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum InvalidReason {
    Malformed(String),
    IssuerUnresolvable(String),
    UnknownKey(String),
    WrongKeyPurpose(String),
    /// Signed with a key retired before the credential was issued.
    KeyRetired(String),
    Signature,
    NotYetValid,
    Expired,
    Revoked,
    CommitmentMismatch(String),
    UnknownClaim(String),
    DuplicateDisclosure(String),
    NothingDisclosed,
}

impl InvalidReason {
    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            InvalidReason::Malformed(_) => "malformed",
            InvalidReason::IssuerUnresolvable(_) => "issuer_unresolvable",
            InvalidReason::UnknownKey(_) => "unknown_key",
            InvalidReason::WrongKeyPurpose(_) => "wrong_key_purpose",
            InvalidReason::KeyRetired(_) => "key_retired",
            InvalidReason::Signature => "signature",
            InvalidReason::NotYetValid => "not_yet_valid",
            InvalidReason::Expired => "expired",
            InvalidReason::Revoked => "revoked",
            InvalidReason::CommitmentMismatch(_) => "commitment_mismatch",
            InvalidReason::UnknownClaim(_) => "unknown_claim",
            InvalidReason::DuplicateDisclosure(_) => "duplicate_disclosure",
            InvalidReason::NothingDisclosed => "nothing_disclosed",
        }
    }
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::Malformed(d)
            | InvalidReason::IssuerUnresolvable(d)
            | InvalidReason::UnknownKey(d)
            | InvalidReason::WrongKeyPurpose(d)
            | InvalidReason::KeyRetired(d)
            | InvalidReason::CommitmentMismatch(d)
            | InvalidReason::UnknownClaim(d)
            | InvalidReason::DuplicateDisclosure(d) => write!(f, "{}: {d}", self.code()),
            _ => f.write_str(self.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid(InvalidReason),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Valid => f.write_str("valid"),
            Verdict::Invalid(reason) => write!(f, "invalid({reason})"),
        }
    }
}

pub trait RevocationCheck {
    fn is_revoked(&self, issuer: &Did, vc_id: &str) -> bool;
}

impl<T: RevocationCheck + ?Sized> RevocationCheck for &T {
    fn is_revoked(&self, issuer: &Did, vc_id: &str) -> bool {
        (**self).is_revoked(issuer, vc_id)
    }
}

impl<T: RevocationCheck + ?Sized> RevocationCheck for std::sync::Arc<T> {
    fn is_revoked(&self, issuer: &Did, vc_id: &str) -> bool {
        (**self).is_revoked(issuer, vc_id)
    }
}

/// No revocation source; nothing is ever revoked.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRevocations;

impl RevocationCheck for NoRevocations {
    fn is_revoked(&self, _issuer: &Did, _vc_id: &str) -> bool {
        false
    }
}

/// Append-only set of revoked credential ids for one issuer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationRegistry {
    owner: Did,
    revoked: BTreeSet<String>,
}

impl RevocationRegistry {
    pub fn new(owner: Did) -> Self {
        RevocationRegistry {
            owner,
            revoked: BTreeSet::new(),
        }
    }

    pub fn owner(&self) -> &Did {
        &self.owner
    }

    pub fn revoked(&self) -> impl Iterator<Item = &str> {
        self.revoked.iter().map(String::as_str)
    }

    /// Revokes `vc_id`. The caller proves ownership with a current signing
    /// key of the owner's document. Returns whether the id was newly added.
    pub fn revoke(&mut self, owner_doc: &DidDocument, issuer_kp: &KeyPair, vc_id: &str) -> Result<bool, RevocationError> {
        if owner_doc.id.as_ref() != Some(&self.owner) {
            return Err(RevocationError::NotOwner {
                owner: self.owner.clone(),
            });
        }
        if !owner_doc.has_current_key(KeyPurpose::Sign, &issuer_kp.public) {
            return Err(RevocationError::NotIssuerKey(self.owner.clone()));
        }
        Ok(self.revoked.insert(vc_id.to_string()))
    }
}

impl RevocationCheck for RevocationRegistry {
    fn is_revoked(&self, issuer: &Did, vc_id: &str) -> bool {
        issuer == &self.owner && self.revoked.contains(vc_id)
    }
}

/// Checks issuer resolution, key lookup (current or retired), signature,
/// validity window and revocation, in that order.
pub fn verify_credential(
    vc: &VerifiableCredential,
    resolver: &impl Resolve,
    revocations: &impl RevocationCheck,
    now: u64,
) -> Verdict {
    match check_credential(vc, resolver, revocations, now) {
        Ok(()) => Verdict::Valid,
        Err(reason) => Verdict::Invalid(reason),
    }
}

fn check_credential(
    vc: &VerifiableCredential,
    resolver: &impl Resolve,
    revocations: &impl RevocationCheck,
    now: u64,
) -> Result<(), InvalidReason> {
    if vc.commitments.is_empty() {
        return Err(InvalidReason::Malformed("no commitments".into()));
    }
    if vc.expires_at <= vc.issued_at {
        return Err(InvalidReason::Malformed("empty validity window".into()));
    }
    let issuer_doc = resolver
        .resolve(&vc.issuer, now)
        .map_err(|e| InvalidReason::IssuerUnresolvable(e.to_string()))?;
    if issuer_doc.id.as_ref() != Some(&vc.issuer) {
        return Err(InvalidReason::IssuerUnresolvable("resolved document has a different id".into()));
    }
    let key_id = &vc.proof.verification_key_id;
    let (purpose, public) = issuer_doc
        .any_key(key_id)
        .ok_or_else(|| InvalidReason::UnknownKey(key_id.clone()))?;
    if purpose != KeyPurpose::Sign {
        return Err(InvalidReason::WrongKeyPurpose(key_id.clone()));
    }
    let retired = issuer_doc.previous_keys.iter().find(|k| &k.key_id == key_id);
    if retired.is_some_and(|k| vc.issued_at > k.retired_at) {
        return Err(InvalidReason::KeyRetired(key_id.clone()));
    }
    if !verify(&public, &vc.signing_bytes(), &vc.proof.signature) {
        return Err(InvalidReason::Signature);
    }
    if now < vc.issued_at {
        return Err(InvalidReason::NotYetValid);
    }
    if now >= vc.expires_at {
        return Err(InvalidReason::Expired);
    }
    if revocations.is_revoked(&vc.issuer, &vc.vc_id) {
        return Err(InvalidReason::Revoked);
    }
    Ok(())
}

/// Verifies credential bytes; anything that does not decode is invalid.
pub fn verify_credential_bytes(
    bytes: &[u8],
    resolver: &impl Resolve,
    revocations: &impl RevocationCheck,
    now: u64,
) -> Verdict {
    match VerifiableCredential::from_bytes(bytes) {
        Ok(vc) => verify_credential(&vc, resolver, revocations, now),
        Err(e) => Verdict::Invalid(InvalidReason::Malformed(e.to_string())),
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disclosure {
    pub claim_name: String,
    pub value: String,
    #[serde(with = "hex_bytes")]
    pub salt: Salt,
}

impl fmt::Debug for Disclosure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Disclosure")
            .field("claim_name", &self.claim_name)
            .field("value", &self.value)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    pub credential: VerifiableCredential,
    pub disclosed: Vec<Disclosure>,
}

impl Presentation {
    pub fn to_bytes(&self) -> Vec<u8> {
        to_canonical(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CredentialError> {
        Ok(from_canonical(bytes)?)
    }

    pub fn disclosed_value(&self, name: &str) -> Option<&str> {
        self.disclosed
            .iter()
            .find(|d| d.claim_name == name)
            .map(|d| d.value.as_str())
    }
}

/// Builds a presentation revealing exactly the claims in `subset`.
pub fn present<'a>(
    vc: &VerifiableCredential,
    openings: &ClaimOpenings,
    subset: impl IntoIterator<Item = &'a str>,
) -> Result<Presentation, CredentialError> {
    let names: BTreeSet<&str> = subset.into_iter().collect();
    if names.is_empty() {
        return Err(CredentialError::EmptyDisclosure);
    }
    for name in &names {
        if vc.commitment(name).is_none() {
            return Err(CredentialError::UnknownClaim(name.to_string()));
        }
    }
    // Follow the credential's commitment order.
    let disclosed = vc
        .claim_names()
        .filter(|n| names.contains(n))
        .map(|name| {
            let opening = openings
                .get(name)
                .ok_or_else(|| CredentialError::MissingOpening(name.to_string()))?;
            Ok(Disclosure {
                claim_name: name.to_string(),
                value: opening.value.clone(),
                salt: opening.salt,
            })
        })
        .collect::<Result<Vec<_>, CredentialError>>()?;
    Ok(Presentation {
        credential: vc.clone(),
        disclosed,
    })
}

pub fn verify_presentation(
    p: &Presentation,
    resolver: &impl Resolve,
    revocations: &impl RevocationCheck,
    now: u64,
) -> Verdict {
    if let Verdict::Invalid(reason) = verify_credential(&p.credential, resolver, revocations, now) {
        return Verdict::Invalid(reason);
    }
    if p.disclosed.is_empty() {
        return Verdict::Invalid(InvalidReason::NothingDisclosed);
    }
    let mut seen = BTreeSet::new();
    for d in &p.disclosed {
        if !seen.insert(d.claim_name.as_str()) {
            return Verdict::Invalid(InvalidReason::DuplicateDisclosure(d.claim_name.clone()));
        }
        let Some(expected) = p.credential.commitment(&d.claim_name) else {
            return Verdict::Invalid(InvalidReason::UnknownClaim(d.claim_name.clone()));
        };
        if &commit_claim(&d.claim_name, &d.value, &d.salt) != expected {
            return Verdict::Invalid(InvalidReason::CommitmentMismatch(d.claim_name.clone()));
        }
    }
    Verdict::Valid
}

/// A resolver over a fixed set of documents. Peer documents must
/// self-certify; registry documents are taken as given.
#[derive(Debug, Default, Clone)]
pub struct StaticResolver {
    documents: BTreeMap<Did, DidDocument>,
}

impl StaticResolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: DidDocument) {
        if let Some(did) = doc.id.clone() {
            self.documents.insert(did, doc);
        }
    }
}

impl Resolve for StaticResolver {
    fn resolve(&self, did: &Did, _now: u64) -> Result<DidDocument, crate::resolver::ResolveError> {
        let doc = self
            .documents
            .get(did)
            .ok_or_else(|| crate::resolver::ResolveError::NotFound(did.clone()))?;
        if did.is_peer() && self_certifying_id(doc) != did.id() {
            return Err(crate::resolver::ResolveError::Integrity(did.clone()));
        }
        Ok(doc.clone())
    }
}
