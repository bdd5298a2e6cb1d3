//! Encrypted single-file wallet.
//!
//! File layout (big-endian):
//!
//! | offset | len | field                                   |
//! |--------|-----|-----------------------------------------|
//! | 0      | 4   | magic `SSIW`                            |
//! | 4      | 2   | format version (1)                      |
//! | 6      | 1   | KDF id (1 = Argon2id)                   |
//! | 7      | 4   | memory cost, KiB                        |
//! | 11     | 4   | time cost                               |
//! | 15     | 4   | parallelism                             |
//! | 19     | 16  | KDF salt                                |
//! | 35     | 16  | passphrase check value                  |
//! | 51     | 12  | AEAD nonce                              |
//! | 63     | ..  | ChaCha20-Poly1305 ciphertext, header AAD |
//!
//! The check value lets a wrong passphrase be told apart from a damaged
//! file; it reveals nothing the ciphertext does not.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use argon2::{Algorithm, Argon2, Params, Version};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::credentials::{ClaimOpenings, VerifiableCredential};
use crate::crypto::{keygen_with_rng, open, seal, KeyPair, KeyPurpose, NONCE_LEN};
use crate::encoding::{from_canonical, to_canonical, EncodingError};
use crate::identity::{generate_did, rotate_key, Did, DidDocument, DocumentError, ServiceEndpoint};

pub const MAGIC: &[u8; 4] = b"SSIW";
pub const FORMAT_VERSION: u16 = 1;
pub const KDF_ARGON2ID: u8 = 1;
pub const HEADER_LEN: usize = 63;
pub const WALLET_EXTENSION: &str = "wallet";

const KDF_SALT_LEN: usize = 16;
const CHECK_LEN: usize = 16;
const MAX_MEMORY_KIB: u32 = 1 << 22;

#[derive(Debug, Error)]
pub enum WalletError {
    #[error("not a wallet file")]
    BadMagic,
    #[error("unsupported wallet format {0}")]
    UnsupportedFormat(u16),
    #[error("unsupported key derivation {0}")]
    UnsupportedKdf(u8),
    #[error("invalid key derivation parameters: {0}")]
    BadKdfParams(String),
    #[error("wallet file is truncated")]
    Truncated,
    #[error("wrong passphrase")]
    WrongPassphrase,
    #[error("wallet file failed its integrity check")]
    Integrity,
    #[error("wallet already exists at {0}")]
    AlreadyExists(String),
    #[error("duplicate key id `{0}`")]
    DuplicateKey(String),
    #[error("no credential `{0}`")]
    UnknownCredential(String),
    #[error("no document for {0} in this wallet")]
    UnknownDocument(String),
    #[error("openings do not match the commitments of credential `{0}`")]
    OpeningsMismatch(String),
    #[error("wallet has no signing key")]
    NoSigningKey,
    #[error("wallet invariant violated: {0}")]
    Invariant(String),
    #[error("document update rejected: {0}")]
    Document(#[from] DocumentError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Argon2id cost parameters, stored in the file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfParams {
    pub memory_kib: u32,
    pub time_cost: u32,
    pub parallelism: u32,
}

impl Default for KdfParams {
    fn default() -> Self {
        KdfParams {
            memory_kib: 19 * 1024,
            time_cost: 2,
            parallelism: 1,
        }
    }
}

impl KdfParams {
    /// Cheap parameters for tests and simulations. Not for real wallets.
    pub const fn insecure_fast() -> Self {
        KdfParams {
            memory_kib: 64,
            time_cost: 1,
            parallelism: 1,
        }
    }

    fn argon2(&self) -> Result<Argon2<'static>, WalletError> {
        if self.memory_kib > MAX_MEMORY_KIB {
            return Err(WalletError::BadKdfParams(format!("memory {} KiB too large", self.memory_kib)));
        }
        let params = Params::new(self.memory_kib, self.time_cost, self.parallelism, Some(32))
            .map_err(|e| WalletError::BadKdfParams(e.to_string()))?;
        Ok(Argon2::new(Algorithm::Argon2id, Version::V0x13, params))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldCredential {
    pub credential: VerifiableCredential,
    pub openings: ClaimOpenings,
}

/// In-memory wallet contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Wallet {
    owner_did: Did,
    keys: Vec<KeyPair>,
    documents: Vec<DidDocument>,
    credentials: Vec<HeldCredential>,
    known_peers: Vec<DidDocument>,
    version: u16,
}

impl Wallet {
    /// Creates a fresh identity: one signing key, one agreement key and a
    /// genesis document whose DID is derived with `method`.
    pub fn create_identity<R: RngCore + CryptoRng>(
        method: &str,
        endpoints: Vec<ServiceEndpoint>,
        rng: &mut R,
    ) -> Result<Wallet, WalletError> {
        let sign = keygen_with_rng(KeyPurpose::Sign, rng);
        let agree = keygen_with_rng(KeyPurpose::Agree, rng);
        let genesis = DidDocument::genesis(vec![(&sign).into(), (&agree).into()], endpoints);
        let (did, doc) = generate_did(method, &genesis)?;
        Ok(Wallet {
            owner_did: did,
            keys: vec![sign, agree],
            documents: vec![doc],
            credentials: Vec::new(),
            known_peers: Vec::new(),
            version: FORMAT_VERSION,
        })
    }

    /// Wraps existing keys and document.
    pub fn from_parts(doc: DidDocument, keys: Vec<KeyPair>) -> Result<Wallet, WalletError> {
        let owner_did = doc.id.clone().ok_or_else(|| WalletError::Invariant("document has no id".into()))?;
        let wallet = Wallet {
            owner_did,
            keys,
            documents: vec![doc],
            credentials: Vec::new(),
            known_peers: Vec::new(),
            version: FORMAT_VERSION,
        };
        wallet.check()?;
        Ok(wallet)
    }

    pub fn owner_did(&self) -> &Did {
        &self.owner_did
    }

    pub fn document(&self) -> &DidDocument {
        self.documents.last().expect("a wallet always holds its genesis document")
    }

    pub fn document_history(&self) -> &[DidDocument] {
        &self.documents
    }

    pub fn keys(&self) -> &[KeyPair] {
        &self.keys
    }

    pub fn key(&self, key_id: &str) -> Option<&KeyPair> {
        self.keys.iter().find(|k| k.key_id == key_id)
    }

    /// Key pair behind the first current key of `purpose` in the latest document.
    pub fn current_key(&self, purpose: KeyPurpose) -> Option<&KeyPair> {
        self.document()
            .public_keys
            .iter()
            .filter(|k| k.purpose == purpose)
            .find_map(|k| self.keys.iter().find(|kp| kp.public == k.public_key))
    }

    pub fn signing_key(&self) -> Result<&KeyPair, WalletError> {
        self.current_key(KeyPurpose::Sign).ok_or(WalletError::NoSigningKey)
    }

    pub fn put_key(&mut self, kp: KeyPair) -> Result<(), WalletError> {
        if self.key(&kp.key_id).is_some() {
            return Err(WalletError::DuplicateKey(kp.key_id.clone()));
        }
        self.keys.push(kp);
        Ok(())
    }

    /// Appends a newer version of the owned document.
    pub fn push_document(&mut self, doc: DidDocument) -> Result<(), WalletError> {
        if doc.id.as_ref() != Some(&self.owner_did) {
            return Err(WalletError::Invariant("document belongs to another DID".into()));
        }
        if doc.version <= self.document().version {
            return Err(WalletError::Invariant(format!(
                "version {} does not follow {}",
                doc.version,
                self.document().version
            )));
        }
        self.documents.push(doc);
        Ok(())
    }

    /// Generates a new signing key and rotates the current one out.
    ///
    /// Returns the new document and the retired key pair, which is still
    /// needed to authorize the update in a registry.
    pub fn rotate_signing_key<R: RngCore + CryptoRng>(
        &mut self,
        now: u64,
        rng: &mut R,
    ) -> Result<(DidDocument, KeyPair), WalletError> {
        let old = self.signing_key()?.clone();
        let fresh = keygen_with_rng(KeyPurpose::Sign, rng);
        let next = rotate_key(self.document(), &old.key_id, (&fresh).into(), now)?;
        self.put_key(fresh)?;
        self.push_document(next.clone())?;
        Ok((next, old))
    }

    pub fn put_credential(&mut self, credential: VerifiableCredential, openings: ClaimOpenings) -> Result<(), WalletError> {
        let names: Vec<&str> = credential.claim_names().collect();
        let matches = names.len() == openings.len()
            && credential.commitments.iter().all(|c| {
                openings.get(&c.claim_name).is_some_and(|o| {
                    crate::credentials::commit_claim(&c.claim_name, &o.value, &o.salt) == c.commitment
                })
            });
        if !matches {
            return Err(WalletError::OpeningsMismatch(credential.vc_id.clone()));
        }
        self.credentials.retain(|h| h.credential.vc_id != credential.vc_id);
        self.credentials.push(HeldCredential { credential, openings });
        Ok(())
    }

    pub fn get_credential(&self, vc_id: &str) -> Result<&HeldCredential, WalletError> {
        self.credentials
            .iter()
            .find(|h| h.credential.vc_id == vc_id)
            .ok_or_else(|| WalletError::UnknownCredential(vc_id.to_string()))
    }

    pub fn credentials(&self) -> &[HeldCredential] {
        &self.credentials
    }

    pub fn list(&self) -> Vec<&str> {
        self.credentials.iter().map(|h| h.credential.vc_id.as_str()).collect()
    }

    pub fn remember_peer(&mut self, doc: DidDocument) {
        self.known_peers.retain(|d| d.id != doc.id);
        self.known_peers.push(doc);
    }

    pub fn known_peers(&self) -> &[DidDocument] {
        &self.known_peers
    }

    /// Canonical bytes of the latest document for `did`, own or known peer.
    pub fn export_public(&self, did: &Did) -> Result<Vec<u8>, WalletError> {
        if did == &self.owner_did {
            return Ok(self.document().to_bytes());
        }
        self.known_peers
            .iter()
            .find(|d| d.id.as_ref() == Some(did))
            .map(DidDocument::to_bytes)
            .ok_or_else(|| WalletError::UnknownDocument(did.to_string()))
    }

    /// Every secret key must belong to a public key of some owned version.
    pub fn check(&self) -> Result<(), WalletError> {
        if self.documents.is_empty() {
            return Err(WalletError::Invariant("no document".into()));
        }
        for kp in &self.keys {
            let known = self.documents.iter().any(|d| {
                d.public_keys.iter().any(|k| k.public_key == kp.public)
                    || d.previous_keys.iter().any(|k| k.public_key == kp.public)
            });
            if !known {
                return Err(WalletError::Invariant(format!("key {} is not in any owned document", kp.key_id)));
            }
        }
        Ok(())
    }
}

fn derive_keys(passphrase: &[u8], params: &KdfParams, salt: &[u8; KDF_SALT_LEN]) -> Result<(Zeroizing<[u8; 32]>, [u8; CHECK_LEN]), WalletError> {
    let mut master = Zeroizing::new([0u8; 32]);
    params
        .argon2()?
        .hash_password_into(passphrase, salt, master.as_mut())
        .map_err(|e| WalletError::BadKdfParams(e.to_string()))?;
    let hk = Hkdf::<Sha256>::new(None, master.as_ref());
    let mut enc = Zeroizing::new([0u8; 32]);
    let mut check = [0u8; CHECK_LEN];
    hk.expand(b"ssiw encryption", enc.as_mut()).expect("valid length");
    hk.expand(b"ssiw passphrase check", &mut check).expect("valid length");
    Ok((enc, check))
}

/// Encrypts a wallet into file bytes.
pub fn seal_wallet<R: RngCore + CryptoRng>(
    wallet: &Wallet,
    passphrase: &str,
    params: KdfParams,
    rng: &mut R,
) -> Result<Vec<u8>, WalletError> {
    wallet.check()?;
    let mut salt = [0u8; KDF_SALT_LEN];
    rng.fill_bytes(&mut salt);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let (key, check) = derive_keys(passphrase.as_bytes(), &params, &salt)?;

    let mut out = Vec::with_capacity(HEADER_LEN + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
    out.push(KDF_ARGON2ID);
    out.extend_from_slice(&params.memory_kib.to_be_bytes());
    out.extend_from_slice(&params.time_cost.to_be_bytes());
    out.extend_from_slice(&params.parallelism.to_be_bytes());
    out.extend_from_slice(&salt);
    out.extend_from_slice(&check);
    out.extend_from_slice(&nonce);
    debug_assert_eq!(out.len(), HEADER_LEN);

    let plaintext = Zeroizing::new(to_canonical(wallet));
    let ciphertext = seal(&key, &nonce, &plaintext, &out);
    out.extend_from_slice(&ciphertext);
    Ok(out)
}

/// Decrypts wallet file bytes.
pub fn open_wallet(bytes: &[u8], passphrase: &str) -> Result<Wallet, WalletError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(WalletError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(WalletError::Truncated);
    }
    let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let format = u16::from_be_bytes([bytes[4], bytes[5]]);
    if format != FORMAT_VERSION {
        return Err(WalletError::UnsupportedFormat(format));
    }
    if bytes[6] != KDF_ARGON2ID {
        return Err(WalletError::UnsupportedKdf(bytes[6]));
    }
    let params = KdfParams {
        memory_kib: u32_at(7),
        time_cost: u32_at(11),
        parallelism: u32_at(15),
    };
    let salt: [u8; KDF_SALT_LEN] = bytes[19..35].try_into().expect("16 bytes");
    let stored_check = &bytes[35..51];
    let nonce: [u8; NONCE_LEN] = bytes[51..63].try_into().expect("12 bytes");

    let (key, check) = derive_keys(passphrase.as_bytes(), &params, &salt)?;
    if !bool::from(check.ct_eq(stored_check)) {
        return Err(WalletError::WrongPassphrase);
    }
    let plaintext = Zeroizing::new(
        open(&key, &nonce, &bytes[HEADER_LEN..], &bytes[..HEADER_LEN]).map_err(|_| WalletError::Integrity)?,
    );
    let wallet: Wallet = from_canonical(&plaintext)?;
    if wallet.version != FORMAT_VERSION {
        return Err(WalletError::UnsupportedFormat(wallet.version));
    }
    wallet.check()?;
    Ok(wallet)
}

/// Writes a new wallet file; refuses to overwrite.
pub fn create<R: RngCore + CryptoRng>(
    path: &Path,
    passphrase: &str,
    wallet: &Wallet,
    params: KdfParams,
    rng: &mut R,
) -> Result<(), WalletError> {
    let bytes = seal_wallet(wallet, passphrase, params, rng)?;
    let mut file = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => WalletError::AlreadyExists(path.display().to_string()),
            _ => WalletError::Io(e),
        })?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Re-encrypts and replaces an existing wallet file.
pub fn save<R: RngCore + CryptoRng>(
    path: &Path,
    passphrase: &str,
    wallet: &Wallet,
    params: KdfParams,
    rng: &mut R,
) -> Result<(), WalletError> {
    let bytes = seal_wallet(wallet, passphrase, params, rng)?;
    let tmp = path.with_extension("wallet.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn unlock(path: &Path, passphrase: &str) -> Result<Wallet, WalletError> {
    open_wallet(&fs::read(path)?, passphrase)
}

/// KDF parameters recorded in a wallet file, without decrypting it.
pub fn read_params(bytes: &[u8]) -> Result<KdfParams, WalletError> {
    if bytes.len() < HEADER_LEN {
        return Err(WalletError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(WalletError::BadMagic);
    }
    let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    Ok(KdfParams {
        memory_kib: u32_at(7),
        time_cost: u32_at(11),
        parallelism: u32_at(15),
    })
}
