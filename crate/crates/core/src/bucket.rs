//! Prefix-partitioned storage of disclosed CCIs.
//!
//! Each partition holds the CCIs whose leading `prefix_bits` bits equal the
//! partition key. A store may be backed by an append-only log:
//!
//! ```text
//! header: u16 BE prefix_bits
//! frame:  u64 BE prefix_value || 16-byte cci || u32 BE day_number
//! ```
//!
//! Inserts append one frame per newly stored CCI before the in-memory state
//! changes. Expiry rewrites the log with only the surviving frames. A torn
//! trailing frame (partial write) is dropped on open.

use std::collections::{btree_map::Entry, BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::keys::{BucketId, ConsistentContactIdentifier, IdBytes, ID_LEN};
use crate::params::ProtocolParams;

pub const LOG_HEADER_LEN: usize = 2;
pub const LOG_FRAME_LEN: usize = 8 + ID_LEN + 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BucketAudit {
    pub min_bucket_size: usize,
    pub median_bucket_size: usize,
    pub occupied_buckets: usize,
    pub empty_prefix_fraction: f64,
}

#[derive(Debug)]
pub struct BucketStore {
    params: ProtocolParams,
    partitions: BTreeMap<u64, BTreeMap<IdBytes, u32>>,
    total_count: usize,
    log: Option<StoreLog>,
}

#[derive(Debug)]
struct StoreLog {
    path: PathBuf,
    file: File,
}

impl PartialEq for BucketStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.total_count == other.total_count && self.partitions == other.partitions
    }
}

impl BucketStore {
    pub fn new(params: ProtocolParams) -> Self {
        BucketStore { params, partitions: BTreeMap::new(), total_count: 0, log: None }
    }

    /// Opens (or creates) a log-backed store and replays its frames.
    pub fn open(path: impl AsRef<Path>, params: ProtocolParams) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = BucketStore::new(params);

        if path.exists() {
            let mut raw = Vec::new();
            File::open(&path)?.read_to_end(&mut raw)?;
            if raw.len() < LOG_HEADER_LEN {
                return Err(Error::CorruptLog("missing header".into()));
            }
            let bits = u16::from_be_bytes([raw[0], raw[1]]);
            if bits != params.prefix_bits() as u16 {
                return Err(Error::CorruptLog(format!(
                    "log written with {bits} prefix bits, params say {}",
                    params.prefix_bits()
                )));
            }
            let body = &raw[LOG_HEADER_LEN..];
            let whole = body.len() / LOG_FRAME_LEN * LOG_FRAME_LEN;
            for frame in body[..whole].chunks_exact(LOG_FRAME_LEN) {
                let (bucket, cci, day) = decode_frame(frame, params.prefix_bits())?;
                store.apply(bucket.prefix_value(), cci, day);
            }
            let file = OpenOptions::new().write(true).open(&path)?;
            if whole != body.len() {
                file.set_len((LOG_HEADER_LEN + whole) as u64)?;
                file.sync_all()?;
            }
            drop(file);
        } else {
            write_log_file(&path, params.prefix_bits(), std::iter::empty())?;
        }

        let file = OpenOptions::new().append(true).open(&path)?;
        store.log = Some(StoreLog { path, file });
        Ok(store)
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn total_count(&self) -> usize {
        self.total_count
    }

    pub fn is_empty(&self) -> bool {
        self.total_count == 0
    }

    pub fn contains(&self, cci: &IdBytes) -> bool {
        BucketId::of_bytes(cci, self.params.prefix_bits())
            .map(|b| self.partitions.get(&b.prefix_value()).is_some_and(|p| p.contains_key(cci)))
            .unwrap_or(false)
    }

    /// Inserts a batch; returns how many were not already present.
    pub fn insert_ccis(&mut self, ccis: &[ConsistentContactIdentifier]) -> Result<usize> {
        let bits = self.params.prefix_bits();
        let entries = ccis
            .iter()
            .map(|c| Ok((BucketId::of_bytes(c.bytes(), bits)?, *c.bytes(), c.day())))
            .collect::<Result<Vec<_>>>()?;
        self.insert_entries(&entries)
    }

    /// Inserts pre-bucketed entries, checking each claimed bucket.
    pub fn insert_entries(&mut self, entries: &[(BucketId, IdBytes, u32)]) -> Result<usize> {
        let bits = self.params.prefix_bits();
        let mut fresh: Vec<(u64, IdBytes, u32)> = Vec::new();
        let mut seen = BTreeSet::new();
        for (bucket, cci, day) in entries {
            if bucket.prefix_bits() != bits {
                return Err(Error::PrefixMismatch { got: bucket.prefix_bits(), expected: bits });
            }
            let actual = BucketId::of_bytes(cci, bits)?;
            if actual != *bucket {
                return Err(Error::MisfiledIdentifier { stored: bucket.prefix_value(), actual: actual.prefix_value() });
            }
            let present = self.partitions.get(&bucket.prefix_value()).is_some_and(|p| p.contains_key(cci));
            if !present && seen.insert(*cci) {
                fresh.push((bucket.prefix_value(), *cci, *day));
            }
        }

        if let Some(log) = self.log.as_mut() {
            let mut buf = Vec::with_capacity(fresh.len() * LOG_FRAME_LEN);
            for (prefix, cci, day) in &fresh {
                encode_frame(&mut buf, *prefix, cci, *day);
            }
            log.file.write_all(&buf)?;
            log.file.sync_data()?;
        }

        for (prefix, cci, day) in &fresh {
            self.apply(*prefix, *cci, *day);
        }
        Ok(fresh.len())
    }

    fn apply(&mut self, prefix: u64, cci: IdBytes, day: u32) -> bool {
        match self.partitions.entry(prefix).or_default().entry(cci) {
            Entry::Occupied(_) => false,
            Entry::Vacant(slot) => {
                slot.insert(day);
                self.total_count += 1;
                true
            }
        }
    }

    pub fn query_bucket(&self, bucket: &BucketId) -> Result<BTreeSet<IdBytes>> {
        if bucket.prefix_bits() != self.params.prefix_bits() {
            return Err(Error::PrefixMismatch { got: bucket.prefix_bits(), expected: self.params.prefix_bits() });
        }
        Ok(self
            .partitions
            .get(&bucket.prefix_value())
            .map(|p| p.keys().copied().collect())
            .unwrap_or_default())
    }

    pub fn bucket_len(&self, bucket: &BucketId) -> usize {
        self.partitions.get(&bucket.prefix_value()).map_or(0, BTreeMap::len)
    }

    pub fn occupied_buckets(&self) -> impl Iterator<Item = BucketId> + '_ {
        let bits = self.params.prefix_bits();
        self.partitions
            .iter()
            .filter(|(_, p)| !p.is_empty())
            .map(move |(prefix, _)| BucketId::new(*prefix, bits).expect("stored prefixes fit"))
    }

    /// Every stored CCI with its day number.
    pub fn iter(&self) -> impl Iterator<Item = (&IdBytes, u32)> + '_ {
        self.partitions.values().flat_map(|p| p.iter().map(|(c, d)| (c, *d)))
    }

    pub fn largest_bucket(&self) -> usize {
        self.partitions.values().map(BTreeMap::len).max().unwrap_or(0)
    }

    pub fn audit_k(&self) -> BucketAudit {
        let mut sizes: Vec<usize> = self.partitions.values().map(BTreeMap::len).filter(|&n| n > 0).collect();
        sizes.sort_unstable();
        let space = 2f64.powi(self.params.prefix_bits() as i32);
        BucketAudit {
            min_bucket_size: sizes.first().copied().unwrap_or(0),
            median_bucket_size: if sizes.is_empty() { 0 } else { sizes[(sizes.len() - 1) / 2] },
            occupied_buckets: sizes.len(),
            empty_prefix_fraction: 1.0 - sizes.len() as f64 / space,
        }
    }

    /// Drops CCIs older than the retention window relative to `today` and
    /// compacts the log. Returns the number removed.
    pub fn expire(&mut self, today: u32) -> Result<usize> {
        let retention = self.params.retention_days();
        let before = self.total_count;
        for partition in self.partitions.values_mut() {
            partition.retain(|_, day| day.saturating_add(retention) > today);
        }
        self.partitions.retain(|_, p| !p.is_empty());
        self.total_count = self.partitions.values().map(BTreeMap::len).sum();
        self.compact()?;
        Ok(before - self.total_count)
    }

    /// Rewrites the log to exactly the current contents.
    pub fn compact(&mut self) -> Result<()> {
        let Some(log) = self.log.take() else { return Ok(()) };
        let tmp = log.path.with_extension("compact");
        let frames = self
            .partitions
            .iter()
            .flat_map(|(prefix, p)| p.iter().map(move |(cci, day)| (*prefix, *cci, *day)));
        write_log_file(&tmp, self.params.prefix_bits(), frames)?;
        drop(log.file);
        fs::rename(&tmp, &log.path)?;
        let file = OpenOptions::new().append(true).open(&log.path)?;
        self.log = Some(StoreLog { path: log.path, file });
        Ok(())
    }
}

fn encode_frame(buf: &mut Vec<u8>, prefix: u64, cci: &IdBytes, day: u32) {
    buf.extend_from_slice(&prefix.to_be_bytes());
    buf.extend_from_slice(cci);
    buf.extend_from_slice(&day.to_be_bytes());
}

fn decode_frame(frame: &[u8], bits: u8) -> Result<(BucketId, IdBytes, u32)> {
    let prefix = u64::from_be_bytes(frame[..8].try_into().expect("frame"));
    let cci: IdBytes = frame[8..8 + ID_LEN].try_into().expect("frame");
    let day = u32::from_be_bytes(frame[8 + ID_LEN..].try_into().expect("frame"));
    let actual = BucketId::of_bytes(&cci, bits)?;
    if actual.prefix_value() != prefix {
        return Err(Error::MisfiledIdentifier { stored: prefix, actual: actual.prefix_value() });
    }
    Ok((actual, cci, day))
}

fn write_log_file(path: &Path, bits: u8, frames: impl Iterator<Item = (u64, IdBytes, u32)>) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(&(bits as u16).to_be_bytes())?;
    let mut buf = Vec::with_capacity(LOG_FRAME_LEN);
    for (prefix, cci, day) in frames {
        buf.clear();
        encode_frame(&mut buf, prefix, &cci, day);
        out.write_all(&buf)?;
    }
    let file = out.into_inner().map_err(|e| e.into_error())?;
    file.sync_all()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::{derive_tek_ccis, TemporaryExposureKey};

    fn cci(bytes: IdBytes, day: u32) -> ConsistentContactIdentifier {
        ConsistentContactIdentifier::from_parts(bytes, day, 1)
    }

    #[test]
    fn insert_is_idempotent() {
        let params = ProtocolParams::default();
        let mut store = BucketStore::new(params);
        let ccis = derive_tek_ccis(&TemporaryExposureKey::from_bytes([5; 16], 0), &params).unwrap();
        assert_eq!(store.insert_ccis(&ccis).unwrap(), 143);
        assert_eq!(store.insert_ccis(&ccis).unwrap(), 0);
        assert_eq!(store.total_count(), 143);
        for c in &ccis {
            let b = BucketId::of_bytes(c.bytes(), 16).unwrap();
            assert!(store.query_bucket(&b).unwrap().contains(c.bytes()));
        }
    }

    #[test]
    fn duplicates_within_one_batch() {
        let mut store = BucketStore::new(ProtocolParams::default());
        let c = cci([1; 16], 0);
        assert_eq!(store.insert_ccis(&[c, c, c]).unwrap(), 1);
    }

    #[test]
    fn query_semantics() {
        let mut store = BucketStore::new(ProtocolParams::default());
        let c = cci([0xab; 16], 0);
        store.insert_ccis(&[c]).unwrap();
        let hit = store.query_bucket(&BucketId::new(0xabab, 16).unwrap()).unwrap();
        assert_eq!(hit.len(), 1);
        assert!(store.query_bucket(&BucketId::new(0x1234, 16).unwrap()).unwrap().is_empty());
        assert!(matches!(
            store.query_bucket(&BucketId::new(0xa, 8).unwrap()),
            Err(Error::PrefixMismatch { got: 8, expected: 16 })
        ));
    }

    #[test]
    fn misfiled_entry_rejected() {
        let mut store = BucketStore::new(ProtocolParams::default());
        let wrong = BucketId::new(0x0000, 16).unwrap();
        assert!(matches!(
            store.insert_entries(&[(wrong, [0xff; 16], 0)]),
            Err(Error::MisfiledIdentifier { .. })
        ));
        let other_bits = BucketId::new(0xff, 8).unwrap();
        assert!(matches!(store.insert_entries(&[(other_bits, [0xff; 16], 0)]), Err(Error::PrefixMismatch { .. })));
        assert!(store.is_empty());
    }

    #[test]
    fn audit_edge_cases() {
        let store = BucketStore::new(ProtocolParams::default());
        let a = store.audit_k();
        assert_eq!((a.min_bucket_size, a.median_bucket_size), (0, 0));
        assert_eq!(a.empty_prefix_fraction, 1.0);

        let mut store = BucketStore::new(ProtocolParams::default());
        let ccis: Vec<_> = (0..5u8).map(|i| {
            let mut b = [0x77; 16];
            b[15] = i;
            cci(b, 0)
        }).collect();
        store.insert_ccis(&ccis).unwrap();
        let a = store.audit_k();
        assert_eq!((a.min_bucket_size, a.median_bucket_size, a.occupied_buckets), (5, 5, 1));
        assert_eq!(a.empty_prefix_fraction, 1.0 - 1.0 / 65536.0);
    }

    #[test]
    fn expiry_respects_retention() {
        let params = ProtocolParams::default();
        let mut store = BucketStore::new(params);
        store.insert_ccis(&[cci([1; 16], 0), cci([2; 16], 5), cci([3; 16], 13)]).unwrap();
        assert_eq!(store.expire(13).unwrap(), 0);
        assert_eq!(store.expire(14).unwrap(), 1);
        assert!(!store.contains(&[1; 16]));
        assert_eq!(store.expire(19).unwrap(), 1);
        assert_eq!(store.total_count(), 1);
    }

    #[test]
    fn log_roundtrip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ccis.log");
        let params = ProtocolParams::default();
        let ccis = derive_tek_ccis(&TemporaryExposureKey::from_bytes([8; 16], 2), &params).unwrap();
        {
            let mut store = BucketStore::open(&path, params).unwrap();
            store.insert_ccis(&ccis).unwrap();
        }
        let len = fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, LOG_HEADER_LEN + 143 * LOG_FRAME_LEN);

        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0xde, 0xad, 0xbe]).unwrap();
        drop(f);

        let reopened = BucketStore::open(&path, params).unwrap();
        assert_eq!(reopened.total_count(), 143);
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, len);

        let mut memory = BucketStore::new(params);
        memory.insert_ccis(&ccis).unwrap();
        assert_eq!(reopened, memory);
    }

    #[test]
    fn log_prefix_bits_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ccis.log");
        BucketStore::open(&path, ProtocolParams::default()).unwrap();
        let other = ProtocolParams::default().with_prefix_bits(12).unwrap();
        assert!(matches!(BucketStore::open(&path, other), Err(Error::CorruptLog(_))));
    }
}
