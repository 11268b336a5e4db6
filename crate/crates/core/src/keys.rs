//! Day keys, rolling proximity identifiers and cross-hashed contact
//! identifiers.
//!
//! The schedule:
//!
//! - a [`TemporaryExposureKey`] is 16 random bytes bound to a day;
//! - the RPI for interval `i` of day `d` is
//!   `SHA-256(tek || le32(d * intervals_per_day + i))[..16]`;
//! - the CCI for the pair `(i_{n-k}, i_n)` is
//!   `HKDF-SHA256(ikm = i_{n-k} || i_n, salt = "", info = "CCIv1")[..16]`.
//!
//! Holding a CCI therefore requires having seen the same device at two
//! rotation steps `k` apart, which is what ties a match to a minimum
//! contact duration.

use std::fmt;

use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{check_prefix_bits, ProtocolParams};

pub const ID_LEN: usize = 16;
pub const CCI_INFO: &[u8] = b"CCIv1";

/// Raw 16-byte identifier (TEK, RPI or CCI payload).
pub type IdBytes = [u8; ID_LEN];

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemporaryExposureKey {
    #[serde(with = "crate::hex16")]
    key: IdBytes,
    day: u32,
}

impl fmt::Debug for TemporaryExposureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TemporaryExposureKey").field("day", &self.day).finish_non_exhaustive()
    }
}

impl TemporaryExposureKey {
    pub fn from_bytes(key: IdBytes, day: u32) -> Self {
        TemporaryExposureKey { key, day }
    }

    pub fn from_slice(key: &[u8], day: u32) -> Result<Self> {
        let key: IdBytes = key
            .try_into()
            .map_err(|_| Error::Validation(format!("key must be {ID_LEN} bytes, got {}", key.len())))?;
        Ok(Self::from_bytes(key, day))
    }

    pub fn bytes(&self) -> &IdBytes {
        &self.key
    }

    pub fn day(&self) -> u32 {
        self.day
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RollingProximityIdentifier {
    bytes: IdBytes,
    day: u32,
    interval: u32,
}

impl RollingProximityIdentifier {
    /// Wraps bytes observed on the air. `interval` is the index within `day`.
    pub fn observed(bytes: IdBytes, day: u32, interval: u32) -> Self {
        RollingProximityIdentifier { bytes, day, interval }
    }

    pub fn bytes(&self) -> &IdBytes {
        &self.bytes
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn interval(&self) -> u32 {
        self.interval
    }

    pub fn absolute_interval(&self, params: &ProtocolParams) -> u64 {
        self.day as u64 * params.intervals_per_day() as u64 + self.interval as u64
    }
}

/// Cross-hash of two RPIs; `interval` is that of the later RPI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConsistentContactIdentifier {
    bytes: IdBytes,
    day: u32,
    interval: u32,
}

impl ConsistentContactIdentifier {
    pub fn from_parts(bytes: IdBytes, day: u32, interval: u32) -> Self {
        ConsistentContactIdentifier { bytes, day, interval }
    }

    pub fn bytes(&self) -> &IdBytes {
        &self.bytes
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn interval(&self) -> u32 {
        self.interval
    }

    pub fn absolute_interval(&self, params: &ProtocolParams) -> u64 {
        self.day as u64 * params.intervals_per_day() as u64 + self.interval as u64
    }
}

/// The leading `prefix_bits` bits of an identifier, big-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketId {
    prefix_value: u64,
    prefix_bits: u8,
}

impl BucketId {
    pub fn new(prefix_value: u64, prefix_bits: u8) -> Result<Self> {
        check_prefix_bits(prefix_bits as u32)?;
        if prefix_bits < 64 && prefix_value >> prefix_bits != 0 {
            return Err(Error::Validation(format!(
                "prefix value {prefix_value:#x} does not fit in {prefix_bits} bits"
            )));
        }
        Ok(BucketId { prefix_value, prefix_bits })
    }

    pub fn of_bytes(bytes: &IdBytes, prefix_bits: u8) -> Result<Self> {
        check_prefix_bits(prefix_bits as u32)?;
        let head = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
        Ok(BucketId { prefix_value: head >> (64 - prefix_bits as u32), prefix_bits })
    }

    pub fn prefix_value(&self) -> u64 {
        self.prefix_value
    }

    pub fn prefix_bits(&self) -> u8 {
        self.prefix_bits
    }
}

pub fn generate_tek<R: RngCore + CryptoRng>(rng: &mut R, day: u32) -> Result<TemporaryExposureKey> {
    let mut key = [0u8; ID_LEN];
    rng.try_fill_bytes(&mut key)?;
    Ok(TemporaryExposureKey::from_bytes(key, day))
}

pub(crate) fn absolute_interval_u32(day: u32, interval: u32, params: &ProtocolParams) -> Result<u32> {
    day.checked_mul(params.intervals_per_day())
        .and_then(|base| base.checked_add(interval))
        .ok_or(Error::IntervalOverflow { day, index: interval })
}

pub fn derive_rpi(
    tek: &TemporaryExposureKey,
    interval: u32,
    params: &ProtocolParams,
) -> Result<RollingProximityIdentifier> {
    let per_day = params.intervals_per_day();
    if interval >= per_day {
        return Err(Error::IntervalOutOfRange { index: interval, per_day });
    }
    let absolute = absolute_interval_u32(tek.day, interval, params)?;
    let digest = Sha256::new().chain_update(tek.key).chain_update(absolute.to_le_bytes()).finalize();
    let mut bytes = [0u8; ID_LEN];
    bytes.copy_from_slice(&digest[..ID_LEN]);
    Ok(RollingProximityIdentifier { bytes, day: tek.day, interval })
}

/// All RPIs a key broadcasts over its day, in interval order.
pub fn derive_day_rpis(tek: &TemporaryExposureKey, params: &ProtocolParams) -> Result<Vec<RollingProximityIdentifier>> {
    (0..params.intervals_per_day()).map(|i| derive_rpi(tek, i, params)).collect()
}

/// The bare HKDF cross-hash, without any interval bookkeeping.
pub fn cross_hash(older: &IdBytes, newer: &IdBytes) -> IdBytes {
    let mut ikm = [0u8; 2 * ID_LEN];
    ikm[..ID_LEN].copy_from_slice(older);
    ikm[ID_LEN..].copy_from_slice(newer);
    let mut out = [0u8; ID_LEN];
    Hkdf::<Sha256>::new(None, &ikm)
        .expand(CCI_INFO, &mut out)
        .expect("16 bytes is a valid HKDF-SHA256 output length");
    out
}

pub fn derive_cci(
    older: &RollingProximityIdentifier,
    newer: &RollingProximityIdentifier,
    params: &ProtocolParams,
) -> Result<ConsistentContactIdentifier> {
    let gap = newer.absolute_interval(params) as i64 - older.absolute_interval(params) as i64;
    if gap != params.k_steps() as i64 {
        return Err(Error::StepMismatch { gap, expected: params.k_steps() });
    }
    Ok(ConsistentContactIdentifier {
        bytes: cross_hash(&older.bytes, &newer.bytes),
        day: newer.day,
        interval: newer.interval,
    })
}

/// Every CCI derivable from one day key: `intervals_per_day - k_steps` of
/// them, none spanning into a neighbouring day.
pub fn derive_tek_ccis(tek: &TemporaryExposureKey, params: &ProtocolParams) -> Result<Vec<ConsistentContactIdentifier>> {
    let rpis = derive_day_rpis(tek, params)?;
    let k = params.k_steps() as usize;
    rpis.iter()
        .zip(rpis.iter().skip(k))
        .map(|(older, newer)| derive_cci(older, newer, params))
        .collect()
}

pub fn bucket_prefix(cci: &ConsistentContactIdentifier, params: &ProtocolParams) -> Result<BucketId> {
    BucketId::of_bytes(&cci.bytes, params.prefix_bits())
}
