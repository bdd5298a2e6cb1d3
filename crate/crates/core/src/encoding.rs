//! Canonical structured-text encoding.
//!
//! Values are encoded as compact JSON with object keys sorted
//! lexicographically and arrays kept in insertion order. Decoding re-encodes
//! the parsed value and rejects input that is not byte-identical, so each
//! value has exactly one accepted encoding.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("malformed encoding: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("input is not in canonical form")]
    NonCanonical,
}

pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    // serde_json::Value keeps object members in a BTreeMap, which sorts them.
    let value = serde_json::to_value(value).expect("canonical types serialize to JSON");
    serde_json::to_vec(&value).expect("a JSON value always encodes")
}

pub fn from_canonical<T: DeserializeOwned + Serialize>(bytes: &[u8]) -> Result<T, EncodingError> {
    let value: T = serde_json::from_slice(bytes)?;
    if to_canonical(&value) != bytes {
        return Err(EncodingError::NonCanonical);
    }
    Ok(value)
}

/// Parses without the canonical-form check. Used for human-edited inputs.
pub fn from_lenient<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, EncodingError> {
    Ok(serde_json::from_slice(bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Sample {
        zeta: u32,
        alpha: Vec<String>,
    }

    #[test]
    fn keys_sorted_no_whitespace() {
        let s = Sample {
            zeta: 3,
            alpha: vec!["b".into(), "a".into()],
        };
        assert_eq!(to_canonical(&s), br#"{"alpha":["b","a"],"zeta":3}"#);
    }

    #[test]
    fn rejects_non_canonical() {
        let ok: Sample = from_canonical(br#"{"alpha":[],"zeta":1}"#).unwrap();
        assert_eq!(ok.zeta, 1);
        assert!(matches!(
            from_canonical::<Sample>(br#"{"zeta":1,"alpha":[]}"#),
            Err(EncodingError::NonCanonical)
        ));
        assert!(matches!(
            from_canonical::<Sample>(br#"{"alpha": [],"zeta":1}"#),
            Err(EncodingError::NonCanonical)
        ));
        assert!(from_lenient::<Sample>(br#"{ "zeta": 1, "alpha": [] }"#).is_ok());
    }
}
