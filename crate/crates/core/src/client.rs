//! Device side: the observation log, candidate CCI reconstruction and the
//! padded bucket/PSI exposure check.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keys::{cross_hash, BucketId, ConsistentContactIdentifier, IdBytes, ID_LEN};
use crate::params::ProtocolParams;
use crate::psi::client_blind;
use crate::psi::client_match;
use crate::service::ExposureService;
use crate::wire::{QueryRequest, QueryResponse};

pub const LOG_FRAME_LEN: usize = 8 + ID_LEN;
pub const DEFAULT_PAIRING_CAP: usize = 64;

/// RPIs heard over the retention window, keyed by absolute interval.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObservationLog {
    records: BTreeSet<(u64, IdBytes)>,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = (u64, &IdBytes)> {
        self.records.iter().map(|(i, r)| (*i, r))
    }

    /// Stores one sighting and prunes everything that fell out of the
    /// retention window relative to the newest interval seen.
    pub fn record_observation(&mut self, interval: u64, rpi: &[u8], params: &ProtocolParams) -> Result<()> {
        let rpi: IdBytes = rpi
            .try_into()
            .map_err(|_| Error::Validation(format!("rpi must be {ID_LEN} bytes, got {}", rpi.len())))?;
        self.records.insert((interval, rpi));
        let now = self.records.last().map(|(i, _)| *i).unwrap_or(interval);
        let window = params.retention_intervals();
        if let Some(cutoff) = now.checked_sub(window) {
            self.records = self.records.split_off(&(cutoff + 1, [0u8; ID_LEN]));
        }
        Ok(())
    }

    /// `[u64 BE interval || 16-byte rpi]*`
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * LOG_FRAME_LEN);
        for (interval, rpi) in &self.records {
            out.extend_from_slice(&interval.to_be_bytes());
            out.extend_from_slice(rpi);
        }
        out
    }

    pub fn decode(raw: &[u8], params: &ProtocolParams) -> Result<Self> {
        if raw.len() % LOG_FRAME_LEN != 0 {
            return Err(Error::Wire(format!("observation log of {} bytes is not whole frames", raw.len())));
        }
        let mut log = ObservationLog::new();
        for frame in raw.chunks_exact(LOG_FRAME_LEN) {
            let interval = u64::from_be_bytes(frame[..8].try_into().expect("8"));
            log.record_observation(interval, &frame[8..], params)?;
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingOptions {
    /// Accept gaps of `k_steps ± tolerance` (0 or 1).
    pub tolerance: u32,
    /// Upper bound on pairs formed for any one newer interval.
    pub max_pairs_per_interval: usize,
}

impl Default for PairingOptions {
    fn default() -> Self {
        PairingOptions { tolerance: 0, max_pairs_per_interval: DEFAULT_PAIRING_CAP }
    }
}

/// Cross-hashes every interval-aligned pair in the log. The client cannot
/// tell which RPIs came from the same device, so pairs between different
/// devices are formed too; they never match anything on the server.
/// Pairs straddling a day boundary are skipped because the server never
/// derives them.
pub fn candidate_ccis(
    log: &ObservationLog,
    params: &ProtocolParams,
    opts: &PairingOptions,
) -> Vec<ConsistentContactIdentifier> {
    let per_day = params.intervals_per_day() as u64;
    let k = params.k_steps() as u64;
    let tol = opts.tolerance.min(1) as u64;
    let gaps: Vec<u64> = (k.saturating_sub(tol).max(1)..=k + tol).collect();

    let mut by_interval: BTreeMap<u64, Vec<&IdBytes>> = BTreeMap::new();
    for (interval, rpi) in log.records() {
        by_interval.entry(interval).or_default().push(rpi);
    }

    let mut out = Vec::new();
    for (&newer_at, newer) in &by_interval {
        let day = newer_at / per_day;
        let mut formed = 0usize;
        'gaps: for &gap in &gaps {
            let Some(older_at) = newer_at.checked_sub(gap) else { continue };
            if older_at / per_day != day {
                continue;
            }
            let Some(older) = by_interval.get(&older_at) else { continue };
            for a in older {
                for b in newer {
                    if formed == opts.max_pairs_per_interval {
                        break 'gaps;
                    }
                    out.push(ConsistentContactIdentifier::from_parts(
                        cross_hash(a, b),
                        day as u32,
                        (newer_at % per_day) as u32,
                    ));
                    formed += 1;
                }
            }
        }
    }
    out
}

/// Something that can carry a `/v1/query` body to the exposure service.
pub trait QueryTransport {
    fn post_query(&self, body: &[u8]) -> Result<Vec<u8>>;
}

impl<T: QueryTransport + ?Sized> QueryTransport for &T {
    fn post_query(&self, body: &[u8]) -> Result<Vec<u8>> {
        (**self).post_query(body)
    }
}

/// Direct calls into an in-process service; the server randomness is a
/// seeded stream so simulations replay exactly.
pub struct LocalTransport<'a> {
    service: &'a ExposureService,
    rng: Mutex<ChaCha20Rng>,
}

impl<'a> LocalTransport<'a> {
    pub fn new(service: &'a ExposureService, seed: u64) -> Self {
        LocalTransport { service, rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)) }
    }
}

impl QueryTransport for LocalTransport<'_> {
    fn post_query(&self, body: &[u8]) -> Result<Vec<u8>> {
        let mut rng = self.rng.lock().expect("rng lock");
        self.service.query_endpoint(body, &mut *rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub query_pad: usize,
    /// Requests are issued in multiples of this count.
    pub request_pad: usize,
    pub match_threshold: usize,
    pub pairing: PairingOptions,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { query_pad: 8, request_pad: 16, match_threshold: 1, pairing: PairingOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExposureResult {
    pub matched_cci_count: usize,
    pub matched_intervals: BTreeSet<u64>,
    pub exposed: bool,
    pub requests_sent: usize,
}

impl ExposureResult {
    pub fn from_matches(matched_cci_count: usize, matched_intervals: BTreeSet<u64>, threshold: usize) -> Self {
        ExposureResult { matched_cci_count, matched_intervals, exposed: matched_cci_count >= threshold, requests_sent: 0 }
    }
}

pub fn check_exposure<T, R>(
    log: &ObservationLog,
    transport: &T,
    params: &ProtocolParams,
    config: &CheckConfig,
    rng: &mut R,
) -> Result<ExposureResult>
where
    T: QueryTransport + ?Sized,
    R: RngCore + CryptoRng,
{
    if config.query_pad == 0 || config.request_pad == 0 {
        return Err(Error::Validation("query_pad and request_pad must be positive".into()));
    }
    let bits = params.prefix_bits();
    let candidates = candidate_ccis(log, params, &config.pairing);

    let mut intervals_of: BTreeMap<IdBytes, BTreeSet<u64>> = BTreeMap::new();
    let mut by_bucket: BTreeMap<BucketId, BTreeSet<IdBytes>> = BTreeMap::new();
    for c in &candidates {
        intervals_of.entry(*c.bytes()).or_default().insert(c.absolute_interval(params));
        by_bucket.entry(BucketId::of_bytes(c.bytes(), bits)?).or_default().insert(*c.bytes());
    }

    let mut requests: Vec<(BucketId, Vec<IdBytes>)> = Vec::new();
    for (bucket, ccis) in by_bucket {
        let ccis: Vec<IdBytes> = ccis.into_iter().collect();
        for chunk in ccis.chunks(config.query_pad) {
            requests.push((bucket, chunk.to_vec()));
        }
    }
    let target = requests.len().max(1).div_ceil(config.request_pad) * config.request_pad;
    while requests.len() < target {
        let value = if bits == 64 { rng.gen::<u64>() } else { rng.gen_range(0..1u64 << bits) };
        requests.push((BucketId::new(value, bits)?, Vec::new()));
    }
    requests.shuffle(rng);

    let mut matched = BTreeSet::new();
    for (bucket, ccis) in &requests {
        let (states, query) = client_blind(ccis, config.query_pad, rng)?;
        let body = QueryRequest { bucket: *bucket, query }.encode()?;
        let reply = QueryResponse::decode(&transport.post_query(&body)?)?;
        if reply.bucket != *bucket || reply.response.double_blinded_points.len() != config.query_pad {
            return Err(Error::Protocol("response does not mirror the query".into()));
        }
        matched.extend(client_match(&states, &reply.response)?);
    }

    let matched_intervals = matched.iter().flat_map(|c| intervals_of[c].iter().copied()).collect();
    let mut result = ExposureResult::from_matches(matched.len(), matched_intervals, config.match_threshold);
    result.requests_sent = requests.len();
    Ok(result)
}
