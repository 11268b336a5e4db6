use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: u32 = 1440;
pub const MIN_PREFIX_BITS: u8 = 4;
pub const MAX_PREFIX_BITS: u8 = 64;

/// Key-schedule and bucketing parameters shared by server, client and
/// simulator.
///
/// `rotation_minutes * k_steps` is the minimum contact duration that a
/// single CCI certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ProtocolParams {
    rotation_minutes: u32,
    k_steps: u32,
    prefix_bits: u8,
    retention_days: u32,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    rotation_minutes: u32,
    k_steps: u32,
    prefix_bits: u8,
    retention_days: u32,
}

impl TryFrom<RawParams> for ProtocolParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ProtocolParams::new(raw.rotation_minutes, raw.k_steps, raw.prefix_bits, raw.retention_days)
    }
}

impl From<ProtocolParams> for RawParams {
    fn from(p: ProtocolParams) -> Self {
        RawParams {
            rotation_minutes: p.rotation_minutes,
            k_steps: p.k_steps,
            prefix_bits: p.prefix_bits,
            retention_days: p.retention_days,
        }
    }
}

impl Default for ProtocolParams {
    /// 10-minute rotation, k = 1, 16-bit buckets, 14-day retention.
    fn default() -> Self {
        ProtocolParams { rotation_minutes: 10, k_steps: 1, prefix_bits: 16, retention_days: 14 }
    }
}

impl ProtocolParams {
    pub fn new(rotation_minutes: u32, k_steps: u32, prefix_bits: u8, retention_days: u32) -> Result<Self> {
        if rotation_minutes == 0 || MINUTES_PER_DAY % rotation_minutes != 0 {
            return Err(Error::InvalidParams(format!(
                "rotation of {rotation_minutes} minutes does not evenly divide a day"
            )));
        }
        let per_day = MINUTES_PER_DAY / rotation_minutes;
        if k_steps == 0 || k_steps >= per_day {
            return Err(Error::InvalidParams(format!(
                "k_steps must be in 1..{per_day}, got {k_steps}"
            )));
        }
        check_prefix_bits(prefix_bits as u32)?;
        if retention_days == 0 {
            return Err(Error::InvalidParams("retention_days must be positive".into()));
        }
        Ok(ProtocolParams { rotation_minutes, k_steps, prefix_bits, retention_days })
    }

    pub fn with_rotation(self, rotation_minutes: u32) -> Result<Self> {
        Self::new(rotation_minutes, self.k_steps, self.prefix_bits, self.retention_days)
    }

    pub fn with_k_steps(self, k_steps: u32) -> Result<Self> {
        Self::new(self.rotation_minutes, k_steps, self.prefix_bits, self.retention_days)
    }

    pub fn with_prefix_bits(self, prefix_bits: u8) -> Result<Self> {
        Self::new(self.rotation_minutes, self.k_steps, prefix_bits, self.retention_days)
    }

    pub fn with_retention_days(self, retention_days: u32) -> Result<Self> {
        Self::new(self.rotation_minutes, self.k_steps, self.prefix_bits, retention_days)
    }

    pub fn rotation_minutes(&self) -> u32 {
        self.rotation_minutes
    }

    pub fn k_steps(&self) -> u32 {
        self.k_steps
    }

    pub fn prefix_bits(&self) -> u8 {
        self.prefix_bits
    }

    pub fn retention_days(&self) -> u32 {
        self.retention_days
    }

    pub fn intervals_per_day(&self) -> u32 {
        MINUTES_PER_DAY / self.rotation_minutes
    }

    /// CCIs derivable from a single day key.
    pub fn ccis_per_day(&self) -> u32 {
        self.intervals_per_day() - self.k_steps
    }

    pub fn min_contact_minutes(&self) -> u32 {
        self.rotation_minutes * self.k_steps
    }

    pub fn retention_intervals(&self) -> u64 {
        self.retention_days as u64 * self.intervals_per_day() as u64
    }
}

pub(crate) fn check_prefix_bits(bits: u32) -> Result<()> {
    if (MIN_PREFIX_BITS as u32..=MAX_PREFIX_BITS as u32).contains(&bits) {
        Ok(())
    } else {
        Err(Error::PrefixBits(bits))
    }
}
