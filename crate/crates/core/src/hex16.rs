//! Serde adapter: 16-byte identifiers as lowercase hex strings.

use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

use crate::keys::IdBytes;

pub fn serialize<S: Serializer>(bytes: &IdBytes, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<IdBytes, D::Error> {
    let text = String::deserialize(d)?;
    parse(&text).map_err(D::Error::custom)
}

pub fn parse(text: &str) -> Result<IdBytes, String> {
    let raw = hex::decode(text.trim()).map_err(|e| format!("bad hex: {e}"))?;
    raw.try_into().map_err(|v: Vec<u8>| format!("expected 16 bytes, got {}", v.len()))
}
