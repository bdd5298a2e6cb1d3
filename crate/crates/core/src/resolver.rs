//! DID resolution.
//!
//! [`Registry`] is an in-process stand-in for a verifiable data registry:
//! every write is signed by a key of the previous document version.
//! [`Resolver`] is the device-side view: a TTL cache in front of the
//! registry plus a store of self-certifying peer documents.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credentials::{RevocationCheck, RevocationError, RevocationRegistry};
use crate::crypto::{sign, verify, KeyPair, KeyPurpose, Signature};
use crate::identity::{
    self_certifying_id, validate_document, Did, DidDocument, DocumentError, Violation,
    REGISTRY_METHOD,
};

pub const DEFAULT_TTL: Duration = Duration::from_secs(300);

/// File extension for registry snapshots.
pub const SNAPSHOT_EXTENSION: &str = "reg";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("document has no id")]
    MissingId,
    #[error("invalid document: {0:?}")]
    InvalidDocument(Vec<Violation>),
    #[error("version conflict for {did}: expected {expected}, got {got}")]
    VersionConflict { did: Did, expected: u64, got: u64 },
    #[error("controller key is not a signing key of the current version of {0}")]
    Unauthorized(Did),
    #[error("identifier {0} does not match its genesis document")]
    IdMismatch(Did),
    #[error("{0} is not registered")]
    NotRegistered(Did),
    #[error("snapshot rejected: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Revocation(#[from] RevocationError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("unknown DID {0}")]
    NotFound(Did),
    #[error("unsupported DID method `{0}`")]
    UnsupportedMethod(String),
    #[error("stored document for {0} does not match its identifier")]
    Integrity(Did),
    #[error("{0} is not a peer DID")]
    NotPeer(Did),
    #[error("stored document is malformed: {0}")]
    Malformed(String),
}

/// Anything that maps a DID to its current document.
pub trait Resolve {
    fn resolve(&self, did: &Did, now: u64) -> Result<DidDocument, ResolveError>;
}

impl<T: Resolve + ?Sized> Resolve for &T {
    fn resolve(&self, did: &Did, now: u64) -> Result<DidDocument, ResolveError> {
        (**self).resolve(did, now)
    }
}

impl<T: Resolve + ?Sized> Resolve for Arc<T> {
    fn resolve(&self, did: &Did, now: u64) -> Result<DidDocument, ResolveError> {
        (**self).resolve(did, now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub document: Vec<u8>,
    pub version: u64,
    pub signer_key_id: String,
    pub signature: Signature,
}

#[derive(Debug, Default)]
struct RegistryState {
    entries: BTreeMap<Did, Vec<RegistryEntry>>,
    revocations: BTreeMap<Did, RevocationRegistry>,
}

#[derive(Debug, Default)]
pub struct Registry {
    state: RwLock<RegistryState>,
    write_count: AtomicU64,
    read_count: AtomicU64,
    generation: AtomicU64,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_count(&self) -> u64 {
        self.write_count.load(Ordering::SeqCst)
    }

    pub fn read_count(&self) -> u64 {
        self.read_count.load(Ordering::SeqCst)
    }

    /// Incremented on every write; lets caches detect that they are stale
    /// without fetching a document.
    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::SeqCst)
    }

    /// Stores a new document version signed by `controller`.
    ///
    /// A genesis write must be signed by one of the document's own signing
    /// keys; later writes by a signing key of the immediately preceding
    /// version.
    pub fn register(&self, doc: &DidDocument, controller: &KeyPair) -> Result<u64, RegistryError> {
        let did = doc.id.clone().ok_or(RegistryError::MissingId)?;
        let violations = validate_document(doc);
        if !violations.is_empty() {
            return Err(RegistryError::InvalidDocument(violations));
        }
        let mut state = self.state.write().expect("registry lock poisoned");
        let history = state.entries.get(&did);
        let expected = history.and_then(|h| h.last()).map_or(1, |e| e.version + 1);
        if doc.version != expected {
            return Err(RegistryError::VersionConflict {
                did,
                expected,
                got: doc.version,
            });
        }
        let authority = match history.and_then(|h| h.last()) {
            None => {
                if did.method() == REGISTRY_METHOD && self_certifying_id(doc) != did.id() {
                    return Err(RegistryError::IdMismatch(did));
                }
                doc.clone()
            }
            Some(prev) => decode(&prev.document).map_err(|e| RegistryError::Snapshot(e.to_string()))?,
        };
        if !authority.has_current_key(KeyPurpose::Sign, &controller.public) {
            return Err(RegistryError::Unauthorized(did));
        }
        let document = doc.to_bytes();
        let signature = sign(controller, &document).map_err(|_| RegistryError::Unauthorized(did.clone()))?;
        state.entries.entry(did).or_default().push(RegistryEntry {
            document,
            version: doc.version,
            signer_key_id: controller.key_id.clone(),
            signature,
        });
        self.write_count.fetch_add(1, Ordering::SeqCst);
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(doc.version)
    }

    /// Latest registered version. Counts as one registry read.
    pub fn read(&self, did: &Did) -> Result<DidDocument, ResolveError> {
        self.read_count.fetch_add(1, Ordering::SeqCst);
        let state = self.state.read().expect("registry lock poisoned");
        let entry = state
            .entries
            .get(did)
            .and_then(|h| h.last())
            .ok_or_else(|| ResolveError::NotFound(did.clone()))?;
        decode(&entry.document).map_err(|e| ResolveError::Malformed(e.to_string()))
    }

    pub fn history(&self, did: &Did) -> Vec<RegistryEntry> {
        let state = self.state.read().expect("registry lock poisoned");
        state.entries.get(did).cloned().unwrap_or_default()
    }

    pub fn dids(&self) -> Vec<Did> {
        let state = self.state.read().expect("registry lock poisoned");
        state.entries.keys().cloned().collect()
    }

    /// Records a revocation by the issuer of `vc_id`.
    ///
    /// For registry-method issuers `issuer_doc` must be the latest registered
    /// version; peer issuers must present a self-certifying document.
    pub fn revoke(&self, issuer_doc: &DidDocument, issuer_kp: &KeyPair, vc_id: &str) -> Result<bool, RegistryError> {
        let did = issuer_doc.id.clone().ok_or(RegistryError::MissingId)?;
        if did.is_peer() {
            if self_certifying_id(issuer_doc) != did.id() {
                return Err(RegistryError::IdMismatch(did));
            }
        } else {
            let current = self.read_uncounted(&did).ok_or_else(|| RegistryError::NotRegistered(did.clone()))?;
            if &current != issuer_doc {
                return Err(RegistryError::Unauthorized(did));
            }
        }
        let mut state = self.state.write().expect("registry lock poisoned");
        let registry = state
            .revocations
            .entry(did.clone())
            .or_insert_with(|| RevocationRegistry::new(did));
        let fresh = registry.revoke(issuer_doc, issuer_kp, vc_id)?;
        if fresh {
            self.write_count.fetch_add(1, Ordering::SeqCst);
            self.generation.fetch_add(1, Ordering::SeqCst);
        }
        Ok(fresh)
    }

    fn read_uncounted(&self, did: &Did) -> Option<DidDocument> {
        let state = self.state.read().expect("registry lock poisoned");
        state
            .entries
            .get(did)
            .and_then(|h| h.last())
            .and_then(|e| decode(&e.document).ok())
    }

    /// Serializes all entries and revocations as a structured-text snapshot.
    pub fn export(&self) -> Vec<u8> {
        let state = self.state.read().expect("registry lock poisoned");
        let snapshot = Snapshot {
            entries: state
                .entries
                .iter()
                .map(|(did, history)| SnapshotDid {
                    did: did.clone(),
                    versions: history
                        .iter()
                        .map(|e| SnapshotEntry {
                            document: String::from_utf8(e.document.clone()).expect("canonical documents are UTF-8"),
                            version: e.version,
                            signer_key_id: e.signer_key_id.clone(),
                            signature: e.signature,
                        })
                        .collect(),
                })
                .collect(),
            revocations: state.revocations.values().cloned().collect(),
        };
        let mut out = serde_json::to_vec_pretty(&snapshot).expect("snapshot serializes");
        out.push(b'\n');
        out
    }

    /// Rebuilds a registry from a snapshot, re-checking every signature.
    pub fn import(bytes: &[u8]) -> Result<Registry, RegistryError> {
        let snapshot: Snapshot =
            serde_json::from_slice(bytes).map_err(|e| RegistryError::Snapshot(e.to_string()))?;
        let mut state = RegistryState::default();
        for item in snapshot.entries {
            let mut previous: Option<DidDocument> = None;
            let mut history = Vec::new();
            for v in item.versions {
                let bytes = v.document.into_bytes();
                let doc = decode(&bytes).map_err(|e| RegistryError::Snapshot(e.to_string()))?;
                if doc.id.as_ref() != Some(&item.did) || doc.version != v.version {
                    return Err(RegistryError::Snapshot(format!("entry mismatch for {}", item.did)));
                }
                let authority = previous.as_ref().unwrap_or(&doc);
                let key = authority
                    .current_key(&v.signer_key_id)
                    .filter(|k| k.purpose == KeyPurpose::Sign)
                    .ok_or_else(|| RegistryError::Unauthorized(item.did.clone()))?;
                if !verify(&key.public_key, &bytes, &v.signature) {
                    return Err(RegistryError::Snapshot(format!("bad signature for {} v{}", item.did, v.version)));
                }
                if let Some(prev) = &previous {
                    if doc.version != prev.version + 1 {
                        return Err(RegistryError::Snapshot(format!("version gap for {}", item.did)));
                    }
                }
                history.push(RegistryEntry {
                    document: bytes,
                    version: v.version,
                    signer_key_id: v.signer_key_id,
                    signature: v.signature,
                });
                previous = Some(doc);
            }
            state.entries.insert(item.did, history);
        }
        for r in snapshot.revocations {
            state.revocations.insert(r.owner().clone(), r);
        }
        Ok(Registry {
            state: RwLock::new(state),
            ..Registry::default()
        })
    }
}

impl Resolve for Registry {
    /// Direct, uncached lookup of registry-method DIDs.
    fn resolve(&self, did: &Did, _now: u64) -> Result<DidDocument, ResolveError> {
        if did.method() != REGISTRY_METHOD {
            return Err(ResolveError::UnsupportedMethod(did.method().to_string()));
        }
        self.read(did)
    }
}

impl RevocationCheck for Registry {
    fn is_revoked(&self, issuer: &Did, vc_id: &str) -> bool {
        let state = self.state.read().expect("registry lock poisoned");
        state
            .revocations
            .get(issuer)
            .is_some_and(|r| r.is_revoked(issuer, vc_id))
    }
}

fn decode(bytes: &[u8]) -> Result<DidDocument, DocumentError> {
    DidDocument::from_bytes(bytes)
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    entries: Vec<SnapshotDid>,
    revocations: Vec<RevocationRegistry>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotDid {
    did: Did,
    versions: Vec<SnapshotEntry>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotEntry {
    document: String,
    version: u64,
    signer_key_id: String,
    signature: Signature,
}

#[derive(Debug, Clone)]
struct CachedDocument {
    document: DidDocument,
    fetched_at: u64,
    generation: u64,
}

#[derive(Debug, Default)]
struct CacheState {
    documents: HashMap<Did, CachedDocument>,
    peers: HashMap<Did, DidDocument>,
}

/// Device-local resolver: TTL cache over a shared registry plus peer store.
#[derive(Debug)]
pub struct Resolver {
    registry: Arc<Registry>,
    ttl: Duration,
    cache: Mutex<CacheState>,
    hit_count: AtomicU64,
    miss_count: AtomicU64,
}

impl Resolver {
    pub fn new(registry: Arc<Registry>) -> Self {
        Self::with_ttl(registry, DEFAULT_TTL)
    }

    pub fn with_ttl(registry: Arc<Registry>, ttl: Duration) -> Self {
        Resolver {
            registry,
            ttl,
            cache: Mutex::new(CacheState::default()),
            hit_count: AtomicU64::new(0),
            miss_count: AtomicU64::new(0),
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn hit_count(&self) -> u64 {
        self.hit_count.load(Ordering::SeqCst)
    }

    pub fn miss_count(&self) -> u64 {
        self.miss_count.load(Ordering::SeqCst)
    }

    /// Accepts a peer document only if its genesis digest is the DID's id.
    pub fn store_peer(&self, did: &Did, doc: &DidDocument) -> Result<(), ResolveError> {
        if !did.is_peer() {
            return Err(ResolveError::NotPeer(did.clone()));
        }
        if doc.id.as_ref() != Some(did) || self_certifying_id(doc) != did.id() {
            return Err(ResolveError::Integrity(did.clone()));
        }
        let mut cache = self.cache.lock().expect("resolver lock poisoned");
        cache.peers.insert(did.clone(), doc.clone());
        Ok(())
    }

    pub fn known_peers(&self) -> Vec<Did> {
        let cache = self.cache.lock().expect("resolver lock poisoned");
        let mut peers: Vec<_> = cache.peers.keys().cloned().collect();
        peers.sort();
        peers
    }

    #[cfg(test)]
    fn insert_peer_unchecked(&self, did: Did, doc: DidDocument) {
        self.cache.lock().unwrap().peers.insert(did, doc);
    }
}

impl Resolve for Resolver {
    fn resolve(&self, did: &Did, now: u64) -> Result<DidDocument, ResolveError> {
        if did.is_peer() {
            let cache = self.cache.lock().expect("resolver lock poisoned");
            let doc = cache
                .peers
                .get(did)
                .ok_or_else(|| ResolveError::NotFound(did.clone()))?;
            if self_certifying_id(doc) != did.id() {
                return Err(ResolveError::Integrity(did.clone()));
            }
            return Ok(doc.clone());
        }
        if did.method() != REGISTRY_METHOD {
            return Err(ResolveError::UnsupportedMethod(did.method().to_string()));
        }
        let mut cache = self.cache.lock().expect("resolver lock poisoned");
        let generation = self.registry.generation();
        if let Some(hit) = cache.documents.get(did) {
            let fresh = now < hit.fetched_at.saturating_add(self.ttl.as_secs()) && now >= hit.fetched_at;
            if fresh && hit.generation == generation {
                self.hit_count.fetch_add(1, Ordering::SeqCst);
                return Ok(hit.document.clone());
            }
        }
        self.miss_count.fetch_add(1, Ordering::SeqCst);
        let document = self.registry.read(did)?;
        cache.documents.insert(
            did.clone(),
            CachedDocument {
                document: document.clone(),
                fetched_at: now,
                generation,
            },
        );
        Ok(document)
    }
}
