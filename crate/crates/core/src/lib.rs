//! Cross-hashed contact tracing.
//!
//! Devices broadcast rolling proximity identifiers (RPIs) derived from a
//! daily key. Instead of publishing those daily keys after a diagnosis, the
//! server publishes consistent contact identifiers (CCIs): HKDF cross-hashes
//! of two RPIs `k` rotations apart. A CCI can only be reconstructed by
//! someone who heard the device at both ends of that span, so exposure
//! matches imply a minimum contact duration and a passive scanner cannot
//! follow a diagnosed person across the day.
//!
//! Lookups go through k-anonymous prefix buckets answered with a padded
//! Diffie-Hellman private set intersection.

pub mod bucket;
pub mod client;
pub mod error;
pub mod hex16;
pub mod keys;
pub mod params;
pub mod psi;
pub mod service;
pub mod sim;
pub mod wire;

pub use error::{Error, Result};
pub use keys::{
    bucket_prefix, cross_hash, derive_cci, derive_day_rpis, derive_rpi, derive_tek_ccis, generate_tek, BucketId,
    ConsistentContactIdentifier, IdBytes, RollingProximityIdentifier, TemporaryExposureKey,
};
pub use params::ProtocolParams;
