//! Serde adapters that render byte fields as lowercase hex strings.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, Visitor};
use serde::{Deserializer, Serializer};

pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
    struct HexVisitor<const N: usize>;

    impl<const N: usize> Visitor<'_> for HexVisitor<N> {
        type Value = [u8; N];

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            write!(f, "{} lowercase hex characters", 2 * N)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
            decode_array(v).ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
        }
    }

    d.deserialize_str(HexVisitor::<N>)
}

/// Strict fixed-width hex decode: exact length, lowercase only.
pub fn decode_array<const N: usize>(v: &str) -> Option<[u8; N]> {
    if v.len() != 2 * N || !is_lower_hex(v) {
        return None;
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(v, &mut out).ok()?;
    Some(out)
}

pub fn is_lower_hex(v: &str) -> bool {
    v.bytes()
        .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Hex for a list of fixed-width values.
pub mod list {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer, const N: usize>(
        items: &[[u8; N]],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(items.len()))?;
        for item in items {
            seq.serialize_element(&hex::encode(item))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<Vec<[u8; N]>, D::Error> {
        let raw: Vec<String> = serde::Deserialize::deserialize(d)?;
        raw.iter()
            .map(|v| decode_array::<N>(v).ok_or_else(|| de::Error::custom("bad hex digest")))
            .collect()
    }
}
