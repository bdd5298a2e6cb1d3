//! Decentralized identifiers and DID Documents.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{digest, KeyPair, KeyPurpose, PublicKey};
use crate::encoding::{from_canonical, to_canonical, EncodingError};

pub const PEER_METHOD: &str = "peer";
pub const REGISTRY_METHOD: &str = "reg";

/// File extension for canonical DID Document files.
pub const DOCUMENT_EXTENSION: &str = "ddoc";

const BASE58_ALPHABET: &str = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DidError {
    #[error("identifier must start with `did:`")]
    MissingPrefix,
    #[error("empty DID method")]
    EmptyMethod,
    #[error("empty method-specific id")]
    EmptyId,
    #[error("illegal character {0:?} in DID")]
    IllegalCharacter(char),
}

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("a DID Document needs at least one public key")]
    NoKeys,
    #[error("unknown key id `{0}`")]
    UnknownKey(String),
    #[error("key id `{0}` already in use")]
    DuplicateKeyId(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

/// A parsed `did:<method>:<id>` identifier.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Did {
    method: String,
    id: String,
}

impl Did {
    pub fn new(method: impl Into<String>, id: impl Into<String>) -> Result<Self, DidError> {
        let method = method.into();
        let id = id.into();
        if method.is_empty() {
            return Err(DidError::EmptyMethod);
        }
        if id.is_empty() {
            return Err(DidError::EmptyId);
        }
        if let Some(c) = method
            .chars()
            .find(|c| !(c.is_ascii_lowercase() || c.is_ascii_digit()))
        {
            return Err(DidError::IllegalCharacter(c));
        }
        if let Some(c) = id.chars().find(|c| !BASE58_ALPHABET.contains(*c)) {
            return Err(DidError::IllegalCharacter(c));
        }
        Ok(Did { method, id })
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn is_peer(&self) -> bool {
        self.method == PEER_METHOD
    }
}

pub fn parse_did(text: &str) -> Result<Did, DidError> {
    let rest = text.strip_prefix("did:").ok_or(DidError::MissingPrefix)?;
    let (method, id) = rest.split_once(':').ok_or(if rest.is_empty() {
        DidError::EmptyMethod
    } else {
        DidError::EmptyId
    })?;
    Did::new(method, id)
}

pub fn format_did(did: &Did) -> String {
    did.to_string()
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method, self.id)
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Did({self})")
    }
}

impl FromStr for Did {
    type Err = DidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_did(s)
    }
}

impl Serialize for Did {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        parse_did(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationKey {
    pub key_id: String,
    pub purpose: KeyPurpose,
    pub public_key: PublicKey,
}

impl From<&KeyPair> for VerificationKey {
    fn from(kp: &KeyPair) -> Self {
        VerificationKey {
            key_id: kp.key_id.clone(),
            purpose: kp.purpose,
            public_key: kp.public,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub endpoint_id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub address: String,
}

/// A key that was rotated out. Kept so that older proofs stay checkable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetiredKey {
    pub key_id: String,
    pub purpose: KeyPurpose,
    pub public_key: PublicKey,
    pub retired_at: u64,
}

/// A DID Document: public keys and service endpoints, nothing personal.
///
/// `id` is absent only in the genesis form used to derive self-certifying
/// identifiers. Unrecognised top-level members are preserved in
/// `extensions` so that [`validate_document`] can report them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidDocument {
    #[serde(rename = "@context")]
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Did>,
    pub public_keys: Vec<VerificationKey>,
    pub service_endpoints: Vec<ServiceEndpoint>,
    pub version: u64,
    pub previous_keys: Vec<RetiredKey>,
    #[serde(flatten)]
    pub extensions: BTreeMap<String, serde_json::Value>,
}

pub const DID_CONTEXT: &str = "https://www.w3.org/ns/did/v1";

impl DidDocument {
    /// Starts a genesis document (no id, version 1).
    pub fn genesis(public_keys: Vec<VerificationKey>, service_endpoints: Vec<ServiceEndpoint>) -> Self {
        DidDocument {
            context: DID_CONTEXT.to_string(),
            id: None,
            public_keys,
            service_endpoints,
            version: 1,
            previous_keys: Vec::new(),
            extensions: BTreeMap::new(),
        }
    }

    pub fn did(&self) -> Option<&Did> {
        self.id.as_ref()
    }

    pub fn genesis_form(&self) -> DidDocument {
        DidDocument {
            id: None,
            ..self.clone()
        }
    }

    pub fn current_key(&self, key_id: &str) -> Option<&VerificationKey> {
        self.public_keys.iter().find(|k| k.key_id == key_id)
    }

    /// Looks a key up among current and retired keys.
    pub fn any_key(&self, key_id: &str) -> Option<(KeyPurpose, PublicKey)> {
        self.current_key(key_id)
            .map(|k| (k.purpose, k.public_key))
            .or_else(|| {
                self.previous_keys
                    .iter()
                    .find(|k| k.key_id == key_id)
                    .map(|k| (k.purpose, k.public_key))
            })
    }

    pub fn first_key(&self, purpose: KeyPurpose) -> Option<&VerificationKey> {
        self.public_keys.iter().find(|k| k.purpose == purpose)
    }

    pub fn has_current_key(&self, purpose: KeyPurpose, public: &PublicKey) -> bool {
        self.public_keys
            .iter()
            .any(|k| k.purpose == purpose && &k.public_key == public)
    }

    fn key_ids(&self) -> impl Iterator<Item = &str> {
        self.public_keys
            .iter()
            .map(|k| k.key_id.as_str())
            .chain(self.previous_keys.iter().map(|k| k.key_id.as_str()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_serialize(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DocumentError> {
        Ok(from_canonical(bytes)?)
    }

    /// Returns a new version with an extra service endpoint.
    pub fn add_service_endpoint(&self, endpoint: ServiceEndpoint) -> DidDocument {
        let mut next = self.clone();
        next.service_endpoints.push(endpoint);
        next.version += 1;
        next
    }
}

pub fn canonical_serialize(doc: &DidDocument) -> Vec<u8> {
    to_canonical(doc)
}

/// Base58 digest of the canonical genesis form of `doc`.
pub fn self_certifying_id(doc: &DidDocument) -> String {
    bs58::encode(digest(&canonical_serialize(&doc.genesis_form()))).into_string()
}

/// Derives a DID for `method` from the genesis document and inserts it.
pub fn generate_did(method: &str, genesis: &DidDocument) -> Result<(Did, DidDocument), DocumentError> {
    if genesis.public_keys.is_empty() {
        return Err(DocumentError::NoKeys);
    }
    let did = Did::new(method, self_certifying_id(genesis))
        .expect("base58 digests are valid method-specific ids");
    let mut doc = genesis.genesis_form();
    doc.id = Some(did.clone());
    Ok((did, doc))
}

pub fn generate_peer_did(genesis: &DidDocument) -> Result<(Did, DidDocument), DocumentError> {
    generate_did(PEER_METHOD, genesis)
}

/// Replaces `old_key_id` with `new_key`, keeping the old key as retired.
///
/// Nothing is signed: documents carry no self-signature, so rotation never
/// invalidates proofs made by other parties.
pub fn rotate_key(
    doc: &DidDocument,
    old_key_id: &str,
    new_key: VerificationKey,
    now: u64,
) -> Result<DidDocument, DocumentError> {
    let pos = doc
        .public_keys
        .iter()
        .position(|k| k.key_id == old_key_id)
        .ok_or_else(|| DocumentError::UnknownKey(old_key_id.to_string()))?;
    if doc.key_ids().any(|id| id == new_key.key_id) {
        return Err(DocumentError::DuplicateKeyId(new_key.key_id));
    }
    let mut next = doc.clone();
    let old = next.public_keys.remove(pos);
    next.previous_keys.push(RetiredKey {
        key_id: old.key_id,
        purpose: old.purpose,
        public_key: old.public_key,
        retired_at: now,
    });
    next.public_keys.push(new_key);
    next.version += 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoPublicKeys,
    DuplicateKeyId(String),
    DuplicateEndpointId(String),
    /// A member that is not part of the document model, e.g. a personal
    /// attribute such as `owner`.
    AttributeField(String),
    ZeroVersion,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoPublicKeys => f.write_str("document has no public keys"),
            Violation::DuplicateKeyId(id) => write!(f, "duplicate key id `{id}`"),
            Violation::DuplicateEndpointId(id) => write!(f, "duplicate endpoint id `{id}`"),
            Violation::AttributeField(name) => {
                write!(f, "pseudonymity: document carries attribute field `{name}`")
            }
            Violation::ZeroVersion => f.write_str("version must be at least 1"),
        }
    }
}

pub fn validate_document(doc: &DidDocument) -> Vec<Violation> {
    let mut violations = Vec::new();
    if doc.public_keys.is_empty() {
        violations.push(Violation::NoPublicKeys);
    }
    let mut seen = BTreeSet::new();
    for id in doc.key_ids() {
        if !seen.insert(id) {
            violations.push(Violation::DuplicateKeyId(id.to_string()));
        }
    }
    let mut endpoints = BTreeSet::new();
    for ep in &doc.service_endpoints {
        if !endpoints.insert(ep.endpoint_id.as_str()) {
            violations.push(Violation::DuplicateEndpointId(ep.endpoint_id.clone()));
        }
    }
    for name in doc.extensions.keys() {
        violations.push(Violation::AttributeField(name.clone()));
    }
    if doc.version == 0 {
        violations.push(Violation::ZeroVersion);
    }
    violations
}
