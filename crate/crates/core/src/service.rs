//! Transport-independent exposure service: diagnosis intake, bucket
//! storage and PSI query answering.
//!
//! The HTTP front end in `crosshash-server` is a thin shell around
//! [`ExposureService`]; the simulator drives it in-process.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{CryptoRng, RngCore};

use crate::bucket::{BucketAudit, BucketStore};
use crate::error::{Error, Result};
use crate::keys::{derive_tek_ccis, BucketId, IdBytes};
use crate::params::ProtocolParams;
use crate::psi::{server_respond, PsiQuery, PsiResponse};
use crate::wire::{encode_export, encode_inserted, DiagnosisUpload, QueryRequest, QueryResponse, WIRE_VERSION};

pub const ENV_PREFIX: &str = "CROSSHASH_";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub params: ProtocolParams,
    pub query_pad: usize,
    pub response_pad: usize,
    pub listen: String,
    pub store_path: Option<PathBuf>,
    /// Bearer token required on uploads. `None` accepts any upload.
    pub upload_token: Option<String>,
    pub export_enabled: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            params: ProtocolParams::default(),
            query_pad: 8,
            response_pad: 64,
            listen: DEFAULT_LISTEN.to_string(),
            store_path: None,
            upload_token: None,
            export_enabled: false,
        }
    }
}

impl ServerConfig {
    /// Parses `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("config line {}: expected key=value", lineno + 1)))?;
            pairs.insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
        }
        let mut config = ServerConfig::default();
        config.apply(&pairs)?;
        Ok(config)
    }

    /// Applies `CROSSHASH_<KEY>` overrides from an environment listing.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let pairs: BTreeMap<String, String> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        self.apply(&pairs)
    }

    fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Validation(format!("config {key}: cannot parse {v:?}")))
        }
        let mut p = self.params;
        for (key, v) in pairs {
            match key.as_str() {
                "rotation_minutes" => p = p.with_rotation(num(key, v)?)?,
                "k_steps" => p = p.with_k_steps(num(key, v)?)?,
                "prefix_bits" => p = p.with_prefix_bits(num(key, v)?)?,
                "retention_days" => p = p.with_retention_days(num(key, v)?)?,
                "query_pad" => self.query_pad = num(key, v)?,
                "response_pad" => self.response_pad = num(key, v)?,
                "listen" | "listen_address" => self.listen = v.clone(),
                "store_path" => self.store_path = Some(PathBuf::from(v)),
                "upload_token" => self.upload_token = Some(v.clone()),
                "export_enabled" => self.export_enabled = num(key, v)?,
                // Keys read by other tools (e.g. the client's request pad).
                "request_pad" | "pairing_cap" | "match_threshold" => {}
                other => return Err(Error::Validation(format!("unknown config key {other:?}"))),
            }
        }
        self.params = p;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.query_pad == 0 || self.query_pad > u16::MAX as usize {
            return Err(Error::Validation("query_pad must be in 1..=65535".into()));
        }
        if self.response_pad == 0 || self.response_pad > u16::MAX as usize {
            return Err(Error::Validation("response_pad must be in 1..=65535".into()));
        }
        Ok(())
    }
}

/// Source of the current day number (days since the Unix epoch, UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayClock {
    System,
    Fixed(u32),
}

impl DayClock {
    pub fn today(&self) -> u32 {
        match self {
            DayClock::System => {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                (secs / 86_400) as u32
            }
            DayClock::Fixed(day) => *day,
        }
    }
}

#[derive(Debug)]
pub struct ExposureService {
    config: ServerConfig,
    store: RwLock<BucketStore>,
    clock: DayClock,
}

impl ExposureService {
    pub fn new(config: ServerConfig, clock: DayClock) -> Result<Self> {
        config.validate()?;
        let store = match &config.store_path {
            Some(path) => BucketStore::open(path, config.params)?,
            None => BucketStore::new(config.params),
        };
        Ok(ExposureService { config, store: RwLock::new(store), clock })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.config.params
    }

    pub fn total_count(&self) -> usize {
        self.store.read().expect("store lock").total_count()
    }

    pub fn audit(&self) -> BucketAudit {
        self.store.read().expect("store lock").audit_k()
    }

    pub fn upload_diagnosis(&self, upload: &DiagnosisUpload) -> Result<usize> {
        let params = self.config.params;
        if upload.params_version != WIRE_VERSION {
            return Err(Error::Validation(format!("unsupported params version {}", upload.params_version)));
        }
        if upload.entries.len() > params.retention_days() as usize {
            return Err(Error::Validation(format!(
                "{} keys exceeds retention of {} days",
                upload.entries.len(),
                params.retention_days()
            )));
        }
        if upload.entries.windows(2).any(|w| w[0].day() >= w[1].day()) {
            return Err(Error::Validation("day numbers must be strictly increasing".into()));
        }
        let today = self.clock.today();
        let oldest = today.saturating_sub(params.retention_days() - 1);
        if let Some(tek) = upload.entries.iter().find(|t| t.day() < oldest || t.day() > today) {
            return Err(Error::Validation(format!(
                "day {} outside retention window {oldest}..={today}",
                tek.day()
            )));
        }

        let mut ccis = Vec::with_capacity(upload.entries.len() * params.ccis_per_day() as usize);
        for tek in &upload.entries {
            ccis.extend(derive_tek_ccis(tek, &params)?);
        }
        // One write lock per upload: queries see all of it or none of it.
        self.store.write().expect("store lock").insert_ccis(&ccis)
    }

    pub fn handle_bucket_query<R: RngCore + CryptoRng>(
        &self,
        bucket: &BucketId,
        query: &PsiQuery,
        rng: &mut R,
    ) -> Result<PsiResponse> {
        let bits = self.config.params.prefix_bits();
        if bucket.prefix_bits() != bits {
            return Err(Error::Protocol(format!("bucket has {} prefix bits, server uses {bits}", bucket.prefix_bits())));
        }
        if query.blinded_points.len() != self.config.query_pad {
            return Err(Error::Protocol(format!(
                "query carries {} points, server expects {}",
                query.blinded_points.len(),
                self.config.query_pad
            )));
        }
        let members = self.store.read().expect("store lock").query_bucket(bucket)?;
        server_respond(&members, query, self.config.response_pad, rng)
    }

    pub fn expire(&self) -> Result<usize> {
        let today = self.clock.today();
        self.store.write().expect("store lock").expire(today)
    }

    /// Body handler for `POST /v1/diagnosis`.
    pub fn diagnosis_endpoint(&self, bearer: Option<&str>, body: &[u8]) -> Result<Vec<u8>> {
        if let Some(expected) = &self.config.upload_token {
            if bearer != Some(expected.as_str()) {
                return Err(Error::Unauthorized);
            }
        }
        let upload = DiagnosisUpload::decode(body)?;
        let inserted = self.upload_diagnosis(&upload)?;
        Ok(encode_inserted(inserted as u32).to_vec())
    }

    /// Body handler for `POST /v1/query`.
    pub fn query_endpoint<R: RngCore + CryptoRng>(&self, body: &[u8], rng: &mut R) -> Result<Vec<u8>> {
        let request = QueryRequest::decode(body).map_err(|e| match e {
            Error::Wire(m) => Error::Protocol(m),
            other => other,
        })?;
        let response = self.handle_bucket_query(&request.bucket, &request.query, rng)?;
        QueryResponse { bucket: request.bucket, response }.encode()
    }

    /// Body for `GET /v1/export`: every CCI inside the retention window.
    pub fn export_endpoint(&self) -> Result<Vec<u8>> {
        if !self.config.export_enabled {
            return Err(Error::Disabled("export"));
        }
        let today = self.clock.today();
        let retention = self.config.params.retention_days();
        let store = self.store.read().expect("store lock");
        let live: Vec<&IdBytes> =
            store.iter().filter(|(_, day)| day.saturating_add(retention) > today).map(|(c, _)| c).collect();
        Ok(encode_export(live))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::TemporaryExposureKey;
    use crate::psi::{client_blind, client_match};
    use crate::wire::decode_export;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn service(config: ServerConfig) -> ExposureService {
        ExposureService::new(config, DayClock::Fixed(100)).unwrap()
    }

    fn tek(b: u8, day: u32) -> TemporaryExposureKey {
        TemporaryExposureKey::from_bytes([b; 16], day)
    }

    #[test]
    fn config_parsing() {
        let cfg = ServerConfig::from_kv(
            "# comment\nrotation_minutes = 5\nk_steps=3\nprefix_bits=12\nquery_pad=4\nresponse_pad=32\n\
             store_path=/tmp/x.log\nlisten=0.0.0.0:9000\nexport_enabled=true\n",
        )
        .unwrap();
        assert_eq!(cfg.params.intervals_per_day(), 288);
        assert_eq!(cfg.params.k_steps(), 3);
        assert_eq!(cfg.query_pad, 4);
        assert!(cfg.export_enabled);
        assert!(ServerConfig::from_kv("bogus=1").is_err());
        assert!(ServerConfig::from_kv("rotation_minutes").is_err());
        assert!(ServerConfig::from_kv("query_pad=0").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut cfg = ServerConfig::from_kv("prefix_bits=12").unwrap();
        cfg.apply_env([
            ("CROSSHASH_PREFIX_BITS".to_string(), "20".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.params.prefix_bits(), 20);
    }

    #[test]
    fn upload_counts_and_idempotence() {
        let svc = service(ServerConfig::default());
        let one = DiagnosisUpload::new(vec![tek(1, 100)]);
        assert_eq!(svc.upload_diagnosis(&one).unwrap(), 143);
        assert_eq!(svc.upload_diagnosis(&one).unwrap(), 0);

        let fourteen = DiagnosisUpload::new((87..=100).map(|d| tek(2, d)).collect());
        assert_eq!(svc.upload_diagnosis(&fourteen).unwrap(), 14 * 143);
    }

    #[test]
    fn upload_validation() {
        let svc = service(ServerConfig::default());
        let stale = DiagnosisUpload::new(vec![tek(1, 86)]);
        assert!(matches!(svc.upload_diagnosis(&stale), Err(Error::Validation(_))));
        let future = DiagnosisUpload::new(vec![tek(1, 101)]);
        assert!(svc.upload_diagnosis(&future).is_err());
        let unordered = DiagnosisUpload::new(vec![tek(1, 99), tek(2, 98)]);
        assert!(svc.upload_diagnosis(&unordered).is_err());
        let too_many = DiagnosisUpload::new((80..=100).map(|d| tek(1, d)).collect());
        assert!(svc.upload_diagnosis(&too_many).is_err());
        let mut bad_version = DiagnosisUpload::new(vec![tek(1, 100)]);
        bad_version.params_version = 7;
        assert!(svc.upload_diagnosis(&bad_version).is_err());
        assert_eq!(svc.total_count(), 0);
    }

    #[test]
    fn bearer_token() {
        let svc = service(ServerConfig { upload_token: Some("s3cret".into()), ..Default::default() });
        let body = DiagnosisUpload::new(vec![tek(1, 100)]).encode().unwrap();
        assert!(matches!(svc.diagnosis_endpoint(None, &body), Err(Error::Unauthorized)));
        assert!(matches!(svc.diagnosis_endpoint(Some("nope"), &body), Err(Error::Unauthorized)));
        assert_eq!(svc.diagnosis_endpoint(Some("s3cret"), &body).unwrap(), vec![0, 0, 0, 143]);
    }

    #[test]
    fn query_finds_uploaded_cci() {
        let svc = service(ServerConfig::default());
        let t = tek(3, 100);
        svc.upload_diagnosis(&DiagnosisUpload::new(vec![t])).unwrap();
        let target = derive_tek_ccis(&t, svc.params()).unwrap()[40];
        let bucket = BucketId::of_bytes(target.bytes(), 16).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (states, q) = client_blind(&[*target.bytes()], 8, &mut rng).unwrap();
        let resp = svc.handle_bucket_query(&bucket, &q, &mut rng).unwrap();
        assert!(client_match(&states, &resp).unwrap().contains(target.bytes()));
    }

    #[test]
    fn query_shape_checks() {
        let svc = service(ServerConfig::default());
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (_, short) = client_blind(&[], 2, &mut rng).unwrap();
        let bucket = BucketId::new(1, 16).unwrap();
        assert!(matches!(svc.handle_bucket_query(&bucket, &short, &mut rng), Err(Error::Protocol(_))));
        let (_, q) = client_blind(&[], 8, &mut rng).unwrap();
        let wrong_bits = BucketId::new(1, 8).unwrap();
        assert!(matches!(svc.handle_bucket_query(&wrong_bits, &q, &mut rng), Err(Error::Protocol(_))));
    }

    #[test]
    fn bucket_overflow_is_capacity_error() {
        let cfg = ServerConfig { params: ProtocolParams::default().with_prefix_bits(4).unwrap(), response_pad: 4, ..Default::default() };
        let svc = service(cfg);
        svc.upload_diagnosis(&DiagnosisUpload::new(vec![tek(9, 100)])).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (_, q) = client_blind(&[], 8, &mut rng).unwrap();
        let bucket = BucketId::new(0, 4).unwrap();
        assert!(matches!(svc.handle_bucket_query(&bucket, &q, &mut rng), Err(Error::Capacity { .. })));
    }

    #[test]
    fn export_is_gated() {
        let svc = service(ServerConfig::default());
        assert!(matches!(svc.export_endpoint(), Err(Error::Disabled(_))));
        let svc = service(ServerConfig { export_enabled: true, ..Default::default() });
        svc.upload_diagnosis(&DiagnosisUpload::new(vec![tek(1, 100)])).unwrap();
        assert_eq!(decode_export(&svc.export_endpoint().unwrap()).unwrap().len(), 143);
    }
}
