//! Cryptographic suite shared by every other module.
//!
//! The suite is fixed: Ed25519 signatures, X25519 key agreement, SHA-256
//! digests, HKDF-SHA256 session derivation and ChaCha20-Poly1305 for
//! authenticated encryption. All keys are 32 bytes so that documents stay
//! small enough for constrained links.

use std::fmt;
use std::time::Duration;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroize;

pub const KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// Default lifetime of derived session keys: one day.
pub const DEFAULT_SESSION_LIFETIME: Duration = Duration::from_secs(24 * 60 * 60);

const SESSION_INFO: &[u8] = b"ssi-iot session v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("seed must be {KEY_LEN} bytes, got {0}")]
    SeedLength(usize),
    #[error("key {key_id} has purpose {actual}, expected {expected}")]
    WrongPurpose {
        key_id: String,
        expected: KeyPurpose,
        actual: KeyPurpose,
    },
    #[error("peer public key is degenerate or of low order")]
    DegeneratePeerKey,
    #[error("malformed input: {0}")]
    Malformed(&'static str),
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("nonce counter {counter} already used (expected > {last})")]
    Replay { counter: u64, last: u64 },
    #[error("nonce counter exhausted")]
    CounterExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyPurpose {
    Sign,
    Agree,
}

impl fmt::Display for KeyPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyPurpose::Sign => f.write_str("sign"),
            KeyPurpose::Agree => f.write_str("agree"),
        }
    }
}

impl std::str::FromStr for KeyPurpose {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sign" => Ok(KeyPurpose::Sign),
            "agree" => Ok(KeyPurpose::Agree),
            other => Err(format!("unknown key purpose `{other}`")),
        }
    }
}

/// A 32-byte public key, hex encoded in every serialized form.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; KEY_LEN]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        hex_bytes::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        hex_bytes::deserialize(d).map(PublicKey)
    }
}

/// A 64-byte Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(self.0))
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        hex_bytes::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        hex_bytes::deserialize(d).map(Signature)
    }
}

/// Lowercase-hex serde adapter for fixed-size byte arrays.
///
/// Decoding rejects uppercase digits so that every value has exactly one
/// textual encoding.
pub mod hex_bytes {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        if text.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(D::Error::custom("hex must be lowercase"));
        }
        let mut out = [0u8; N];
        hex::decode_to_slice(text.as_bytes(), &mut out).map_err(D::Error::custom)?;
        Ok(out)
    }
}

/// A signing or agreement key pair.
#[derive(Clone, Serialize, Deserialize)]
pub struct KeyPair {
    pub key_id: String,
    pub purpose: KeyPurpose,
    pub public: PublicKey,
    #[serde(with = "hex_bytes")]
    secret: [u8; KEY_LEN],
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("key_id", &self.key_id)
            .field("purpose", &self.purpose)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl Drop for KeyPair {
    fn drop(&mut self) {
        self.secret.zeroize();
    }
}

impl KeyPair {
    /// Rebuilds a key pair from its secret, recomputing the public half.
    pub fn from_secret(purpose: KeyPurpose, secret: [u8; KEY_LEN]) -> Self {
        let public = match purpose {
            KeyPurpose::Sign => SigningKey::from_bytes(&secret).verifying_key().to_bytes(),
            KeyPurpose::Agree => {
                x25519_dalek::PublicKey::from(&x25519_dalek::StaticSecret::from(secret)).to_bytes()
            }
        };
        let public = PublicKey(public);
        KeyPair {
            key_id: default_key_id(purpose, &public),
            purpose,
            public,
            secret,
        }
    }

    pub fn with_key_id(mut self, key_id: impl Into<String>) -> Self {
        self.key_id = key_id.into();
        self
    }

    pub fn secret_bytes(&self) -> &[u8; KEY_LEN] {
        &self.secret
    }

    fn expect_purpose(&self, expected: KeyPurpose) -> Result<(), CryptoError> {
        if self.purpose != expected {
            return Err(CryptoError::WrongPurpose {
                key_id: self.key_id.clone(),
                expected,
                actual: self.purpose,
            });
        }
        Ok(())
    }
}

/// Short key identifier derived from the public key, e.g. `sign-1a2b3c4d`.
pub fn default_key_id(purpose: KeyPurpose, public: &PublicKey) -> String {
    format!("{purpose}-{}", hex::encode(&digest(&public.0)[..4]))
}

/// Generates a key pair. A fixed seed gives a fixed key pair; without a seed
/// the secret comes from the operating system RNG.
pub fn keygen(purpose: KeyPurpose, seed: Option<&[u8]>) -> Result<KeyPair, CryptoError> {
    match seed {
        Some(seed) => {
            let secret: [u8; KEY_LEN] = seed
                .try_into()
                .map_err(|_| CryptoError::SeedLength(seed.len()))?;
            Ok(KeyPair::from_secret(purpose, secret))
        }
        None => Ok(keygen_with_rng(purpose, &mut OsRng)),
    }
}

pub fn keygen_with_rng<R: RngCore + CryptoRng>(purpose: KeyPurpose, rng: &mut R) -> KeyPair {
    let mut secret = [0u8; KEY_LEN];
    rng.fill_bytes(&mut secret);
    let kp = KeyPair::from_secret(purpose, secret);
    secret.zeroize();
    kp
}

pub fn sign(kp: &KeyPair, message: &[u8]) -> Result<Signature, CryptoError> {
    kp.expect_purpose(KeyPurpose::Sign)?;
    let key = SigningKey::from_bytes(&kp.secret);
    Ok(Signature(key.sign(message).to_bytes()))
}

/// Strict Ed25519 verification. Malformed public keys simply fail.
pub fn verify(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify_strict(message, &sig).is_ok()
}

/// X25519 agreement. Rejects peer keys that yield an all-zero shared secret.
pub fn agree(mine: &KeyPair, peer_public: &PublicKey) -> Result<[u8; KEY_LEN], CryptoError> {
    mine.expect_purpose(KeyPurpose::Agree)?;
    let secret = x25519_dalek::StaticSecret::from(mine.secret);
    let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(peer_public.0));
    if !shared.was_contributory() {
        return Err(CryptoError::DegeneratePeerKey);
    }
    Ok(shared.to_bytes())
}

pub fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Initiator,
    Responder,
}

impl Role {
    pub fn peer(self) -> Role {
        match self {
            Role::Initiator => Role::Responder,
            Role::Responder => Role::Initiator,
        }
    }

    /// Prefix byte for nonces of messages sent by this role.
    pub fn nonce_prefix(self) -> u8 {
        match self {
            Role::Initiator => 0x49,
            Role::Responder => 0x52,
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub send_key: [u8; KEY_LEN],
    pub recv_key: [u8; KEY_LEN],
    /// Seconds since the Unix epoch.
    pub established_at: u64,
    pub lifetime: Duration,
}

impl fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionKeys")
            .field("established_at", &self.established_at)
            .field("lifetime", &self.lifetime)
            .finish_non_exhaustive()
    }
}

impl Drop for SessionKeys {
    fn drop(&mut self) {
        self.send_key.zeroize();
        self.recv_key.zeroize();
    }
}

impl SessionKeys {
    pub fn expires_at(&self) -> u64 {
        self.established_at.saturating_add(self.lifetime.as_secs())
    }

    pub fn is_expired(&self, now: u64) -> bool {
        now >= self.expires_at()
    }
}

/// Expands a shared secret into a pair of directional keys.
///
/// The transcript hash is the HKDF salt. The first 32 output bytes key the
/// initiator-to-responder direction, the next 32 the reverse.
pub fn derive_session(shared: &[u8; KEY_LEN], transcript_hash: &[u8; 32], role: Role) -> SessionKeys {
    derive_session_at(shared, transcript_hash, role, 0, DEFAULT_SESSION_LIFETIME)
}

pub fn derive_session_at(
    shared: &[u8; KEY_LEN],
    transcript_hash: &[u8; 32],
    role: Role,
    established_at: u64,
    lifetime: Duration,
) -> SessionKeys {
    let hk = Hkdf::<Sha256>::new(Some(transcript_hash), shared);
    let mut okm = [0u8; 2 * KEY_LEN];
    hk.expand(SESSION_INFO, &mut okm)
        .expect("64 bytes is a valid HKDF-SHA256 output length");
    let mut i2r = [0u8; KEY_LEN];
    let mut r2i = [0u8; KEY_LEN];
    i2r.copy_from_slice(&okm[..KEY_LEN]);
    r2i.copy_from_slice(&okm[KEY_LEN..]);
    okm.zeroize();
    let (send_key, recv_key) = match role {
        Role::Initiator => (i2r, r2i),
        Role::Responder => (r2i, i2r),
    };
    SessionKeys {
        send_key,
        recv_key,
        established_at,
        lifetime,
    }
}

pub fn seal(key: &[u8; KEY_LEN], nonce: &[u8; NONCE_LEN], plaintext: &[u8], aad: &[u8]) -> Vec<u8> {
    ChaCha20Poly1305::new(key.into())
        .encrypt(nonce.into(), Payload { msg: plaintext, aad })
        .expect("ChaCha20-Poly1305 encryption cannot fail for in-memory buffers")
}

pub fn open(
    key: &[u8; KEY_LEN],
    nonce: &[u8; NONCE_LEN],
    ciphertext: &[u8],
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < TAG_LEN {
        return Err(CryptoError::Malformed("ciphertext shorter than tag"));
    }
    ChaCha20Poly1305::new(key.into())
        .decrypt(nonce.into(), Payload { msg: ciphertext, aad })
        .map_err(|_| CryptoError::AuthenticationFailed)
}

/// Builds a 12-byte nonce: role prefix, three zero bytes, big-endian counter.
pub fn counter_nonce(role: Role, counter: u64) -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[0] = role.nonce_prefix();
    nonce[4..].copy_from_slice(&counter.to_be_bytes());
    nonce
}

/// Outbound counter for one direction.
#[derive(Debug, Clone, Default)]
pub struct SendCounter {
    next: u64,
}

impl SendCounter {
    pub fn take(&mut self) -> Result<u64, CryptoError> {
        let value = self.next;
        self.next = self.next.checked_add(1).ok_or(CryptoError::CounterExhausted)?;
        Ok(value)
    }
}

/// Inbound counter for one direction. Accepts strictly increasing values only.
#[derive(Debug, Clone, Default)]
pub struct RecvCounter {
    last: Option<u64>,
}

impl RecvCounter {
    pub fn check(&self, counter: u64) -> Result<(), CryptoError> {
        match self.last {
            Some(last) if counter <= last => Err(CryptoError::Replay { counter, last }),
            _ => Ok(()),
        }
    }

    pub fn commit(&mut self, counter: u64) {
        self.last = Some(counter);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn h<const N: usize>(s: &str) -> [u8; N] {
        let mut out = [0u8; N];
        hex::decode_to_slice(s, &mut out).unwrap();
        out
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let a = keygen(KeyPurpose::Sign, Some(&[0u8; 32])).unwrap();
        let b = keygen(KeyPurpose::Sign, Some(&[0u8; 32])).unwrap();
        assert_eq!(a.public, b.public);
        assert_eq!(a.key_id, b.key_id);
    }

    #[test]
    fn random_keys_differ() {
        let a = keygen(KeyPurpose::Sign, None).unwrap();
        let b = keygen(KeyPurpose::Sign, None).unwrap();
        assert_ne!(a.public, b.public);
    }

    #[test]
    fn bad_seed_length() {
        assert_eq!(
            keygen(KeyPurpose::Agree, Some(&[1u8; 31])).unwrap_err(),
            CryptoError::SeedLength(31)
        );
    }

    // RFC 7748 section 6.1.
    #[test]
    fn x25519_rfc7748_vector() {
        let alice = keygen(
            KeyPurpose::Agree,
            Some(&h::<32>("77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a")),
        )
        .unwrap();
        let bob = keygen(
            KeyPurpose::Agree,
            Some(&h::<32>("5dab087e624a8a4b79e17f8b83800ee66f3bb1292618b6fd1c2f8b27ff88e0eb")),
        )
        .unwrap();
        assert_eq!(
            alice.public.0,
            h("8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a")
        );
        assert_eq!(
            bob.public.0,
            h("de9edb7d7b7dc1b4d35b61c2ece435373f8343c85b78674dadfc7e146f882b4f")
        );
        let expected = h::<32>("4a5d9d5ba4ce2de1728e3bf480350f25e07e21c947d19e3376f09b3c1e161742");
        assert_eq!(agree(&alice, &bob.public).unwrap(), expected);
        assert_eq!(agree(&bob, &alice.public).unwrap(), expected);
    }

    // RFC 8032 section 7.1, test 1 (empty message).
    #[test]
    fn ed25519_rfc8032_vector() {
        let kp = keygen(
            KeyPurpose::Sign,
            Some(&h::<32>("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")),
        )
        .unwrap();
        assert_eq!(
            kp.public.0,
            h("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
        );
        let expected = Signature(h(
            "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
        ));
        assert_eq!(sign(&kp, b"").unwrap(), expected);
        assert!(verify(&kp.public, b"", &expected));
    }

    // RFC 8439 section 2.8.2.
    #[test]
    fn chacha20poly1305_rfc8439_vector() {
        let key = h::<32>("808182838485868788898a8b8c8d8e8f909192939495969798999a9b9c9d9e9f");
        let nonce = h::<12>("070000004041424344454647");
        let aad = hex::decode("50515253c0c1c2c3c4c5c6c7").unwrap();
        let plaintext = b"Ladies and Gentlemen of the class of '99: If I could offer you only one tip for the future, sunscreen would be it.";
        let expected = hex::decode(concat!(
            "d31a8d34648e60db7b86afbc53ef7ec2a4aded51296e08fea9e2b5a736ee62d6",
            "3dbea45e8ca9671282fafb69da92728b1a71de0a9e060b2905d6a5b67ecd3b36",
            "92ddbd7f2d778b8c9803aee328091b58fab324e4fad675945585808b4831d7bc",
            "3ff4def08e4b7a9de576d26586cec64b6116",
            "1ae10b594f09e26a7e902ecbd0600691"
        ))
        .unwrap();
        let sealed = seal(&key, &nonce, plaintext, &aad);
        assert_eq!(sealed, expected);
        assert_eq!(open(&key, &nonce, &sealed, &aad).unwrap(), plaintext);
    }

    // FIPS 180-2 / NIST empty-string and "abc" digests.
    #[test]
    fn sha256_known_digests() {
        assert_eq!(
            digest(b""),
            h("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
        );
        assert_eq!(
            digest(b"abc"),
            h("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")
        );
        assert_ne!(digest(b"abd"), digest(b"abc"));
    }

    #[test]
    fn tamper_fails_verification() {
        let kp = keygen(KeyPurpose::Sign, None).unwrap();
        let msg = b"device telemetry".to_vec();
        let sig = sign(&kp, &msg).unwrap();
        assert!(verify(&kp.public, &msg, &sig));
        let mut bad = msg.clone();
        bad[0] ^= 1;
        assert!(!verify(&kp.public, &bad, &sig));
        let mut bad_sig = sig;
        bad_sig.0[10] ^= 0x80;
        assert!(!verify(&kp.public, &msg, &bad_sig));
    }

    #[test]
    fn purpose_enforced() {
        let agree_kp = keygen(KeyPurpose::Agree, None).unwrap();
        assert!(matches!(sign(&agree_kp, b"x"), Err(CryptoError::WrongPurpose { .. })));
        let sign_kp = keygen(KeyPurpose::Sign, None).unwrap();
        assert!(matches!(
            agree(&sign_kp, &agree_kp.public),
            Err(CryptoError::WrongPurpose { .. })
        ));
    }

    #[test]
    fn zero_peer_key_rejected() {
        let kp = keygen(KeyPurpose::Agree, None).unwrap();
        assert_eq!(
            agree(&kp, &PublicKey([0u8; 32])).unwrap_err(),
            CryptoError::DegeneratePeerKey
        );
    }

    #[test]
    fn session_keys_mirror() {
        let shared = [7u8; 32];
        let transcript = digest(b"transcript");
        let i = derive_session(&shared, &transcript, Role::Initiator);
        let r = derive_session(&shared, &transcript, Role::Responder);
        assert_eq!(i.send_key, r.recv_key);
        assert_eq!(i.recv_key, r.send_key);
        assert_ne!(i.send_key, i.recv_key);

        let mut other = transcript;
        other[31] ^= 1;
        let j = derive_session(&shared, &other, Role::Initiator);
        assert_ne!(i.send_key, j.send_key);
        assert_ne!(i.recv_key, j.recv_key);
        assert_eq!(i.lifetime, DEFAULT_SESSION_LIFETIME);
    }

    #[test]
    fn aead_failures() {
        let key = [3u8; 32];
        let nonce = counter_nonce(Role::Initiator, 0);
        let sealed = seal(&key, &nonce, b"", b"hdr");
        assert_eq!(open(&key, &nonce, &sealed, b"hdr").unwrap(), b"");
        assert_eq!(
            open(&key, &nonce, &sealed, b"hds").unwrap_err(),
            CryptoError::AuthenticationFailed
        );
        let other_nonce = counter_nonce(Role::Responder, 0);
        assert_eq!(
            open(&key, &other_nonce, &sealed, b"hdr").unwrap_err(),
            CryptoError::AuthenticationFailed
        );
        assert!(matches!(
            open(&key, &nonce, &sealed[..5], b"hdr"),
            Err(CryptoError::Malformed(_))
        ));
    }

    #[test]
    fn recv_counter_rejects_replay() {
        let mut rc = RecvCounter::default();
        rc.check(0).unwrap();
        rc.commit(0);
        assert!(matches!(rc.check(0), Err(CryptoError::Replay { .. })));
        rc.check(1).unwrap();
    }

    #[test]
    fn bulk_sign_agree_seal() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for i in 0..1000usize {
            let kp = keygen_with_rng(KeyPurpose::Sign, &mut rng);
            let mut msg = vec![0u8; i % 97];
            rng.fill_bytes(&mut msg);
            let sig = sign(&kp, &msg).unwrap();
            assert!(verify(&kp.public, &msg, &sig));
            if !msg.is_empty() {
                let bit = (rng.next_u32() as usize) % (msg.len() * 8);
                msg[bit / 8] ^= 1 << (bit % 8);
                assert!(!verify(&kp.public, &msg, &sig));
            }

            let a = keygen_with_rng(KeyPurpose::Agree, &mut rng);
            let b = keygen_with_rng(KeyPurpose::Agree, &mut rng);
            assert_eq!(agree(&a, &b.public).unwrap(), agree(&b, &a.public).unwrap());
        }
        for len in (0..=4096).step_by(61) {
            let mut key = [0u8; 32];
            rng.fill_bytes(&mut key);
            let mut pt = vec![0u8; len];
            rng.fill_bytes(&mut pt);
            let nonce = counter_nonce(Role::Responder, len as u64);
            let ct = seal(&key, &nonce, &pt, b"aad");
            assert_eq!(ct.len(), len + TAG_LEN);
            assert_eq!(open(&key, &nonce, &ct, b"aad").unwrap(), pt);
        }
    }
}
