use std::collections::BTreeSet;

use crosshash_core::client::{check_exposure, CheckConfig, LocalTransport, ObservationLog, QueryTransport};
use crosshash_core::psi::client_blind;
use crosshash_core::service::{DayClock, ExposureService, ServerConfig};
use crosshash_core::wire::{DiagnosisUpload, QueryRequest, QueryResponse};
use crosshash_core::{derive_day_rpis, derive_tek_ccis, BucketId, IdBytes, ProtocolParams, TemporaryExposureKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TODAY: u32 = 500;

fn service(params: ProtocolParams) -> ExposureService {
    let config = ServerConfig { params, ..Default::default() };
    ExposureService::new(config, DayClock::Fixed(TODAY)).unwrap()
}

fn contact_log(tek: &TemporaryExposureKey, params: &ProtocolParams, start: usize, len: usize) -> ObservationLog {
    let mut log = ObservationLog::new();
    for r in &derive_day_rpis(tek, params).unwrap()[start..start + len] {
        log.record_observation(r.absolute_interval(params), r.bytes(), params).unwrap();
    }
    log
}

#[test]
fn every_published_identifier_is_found() {
    let params = ProtocolParams::default();
    let svc = service(params);
    let tek = TemporaryExposureKey::from_bytes([9; 16], TODAY);
    svc.upload_diagnosis(&DiagnosisUpload::new(vec![tek])).unwrap();
    let transport = LocalTransport::new(&svc, 1);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let log = contact_log(&tek, &params, 0, 144);
    let result = check_exposure(&log, &transport, &params, &CheckConfig::default(), &mut rng).unwrap();
    assert_eq!(result.matched_cci_count, 143);
    assert!(result.exposed);
}

#[test]
fn random_probes_never_match() {
    let params = ProtocolParams::default().with_prefix_bits(8).unwrap();
    let svc = service(params);
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let teks: Vec<_> = (0..10).map(|_| TemporaryExposureKey::from_bytes(rng.gen(), TODAY)).collect();
    for t in &teks {
        svc.upload_diagnosis(&DiagnosisUpload::new(vec![*t])).unwrap();
    }
    let published: BTreeSet<IdBytes> =
        teks.iter().flat_map(|t| derive_tek_ccis(t, &params).unwrap()).map(|c| *c.bytes()).collect();

    let transport = LocalTransport::new(&svc, 2);
    let mut probes: Vec<IdBytes> = (0..10_000).map(|_| rng.gen()).collect();
    probes.retain(|p| !published.contains(p));
    probes.sort_by_key(|p| p[0]);
    let mut found = 0;
    for group in probes.chunk_by(|a, b| a[0] == b[0]) {
        for chunk in group.chunks(8) {
            let bucket = BucketId::of_bytes(&chunk[0], 8).unwrap();
            let (states, query) = client_blind(chunk, 8, &mut rng).unwrap();
            let body = QueryRequest { bucket, query }.encode().unwrap();
            let reply = QueryResponse::decode(&transport.post_query(&body).unwrap()).unwrap();
            found += crosshash_core::psi::client_match(&states, &reply.response).unwrap().len();
        }
    }
    assert_eq!(found, 0);
}

#[test]
fn contact_length_sets_match_count() {
    let params = ProtocolParams::default();
    let svc = service(params);
    let tek = TemporaryExposureKey::from_bytes([3; 16], TODAY);
    svc.upload_diagnosis(&DiagnosisUpload::new(vec![tek])).unwrap();
    let transport = LocalTransport::new(&svc, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(3);

    let five = check_exposure(&contact_log(&tek, &params, 40, 5), &transport, &params, &CheckConfig::default(), &mut rng).unwrap();
    assert_eq!(five.matched_cci_count, 4);
    assert_eq!(five.matched_intervals.len(), 4);
    let one = check_exposure(&contact_log(&tek, &params, 40, 1), &transport, &params, &CheckConfig::default(), &mut rng).unwrap();
    assert_eq!(one.matched_cci_count, 0);
    assert!(!one.exposed);
}

/// Requests a tap saw, recorded as (count, body lengths).
struct Counting<'a> {
    inner: LocalTransport<'a>,
    lengths: std::sync::Mutex<Vec<(usize, usize)>>,
}

impl QueryTransport for Counting<'_> {
    fn post_query(&self, body: &[u8]) -> crosshash_core::Result<Vec<u8>> {
        let reply = self.inner.post_query(body)?;
        self.lengths.lock().unwrap().push((body.len(), reply.len()));
        Ok(reply)
    }
}

#[test]
fn request_shape_hides_log_size() {
    let params = ProtocolParams::default();
    let svc = service(params);
    let tek = TemporaryExposureKey::from_bytes([4; 16], TODAY);
    svc.upload_diagnosis(&DiagnosisUpload::new(vec![tek])).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let config = CheckConfig::default();
    let mut seen = BTreeSet::new();
    for len in [0, 1, 2, 5, 9] {
        let counting = Counting { inner: LocalTransport::new(&svc, len as u64), lengths: Default::default() };
        let log = contact_log(&tek, &params, 10, len);
        let result = check_exposure(&log, &counting, &params, &config, &mut rng).unwrap();
        assert_eq!(result.requests_sent, config.request_pad);
        let lengths = counting.lengths.into_inner().unwrap();
        assert_eq!(lengths.len(), config.request_pad);
        seen.extend(lengths);
    }
    assert_eq!(seen, BTreeSet::from([(QueryRequest::encoded_len(8), QueryResponse::encoded_len(8, 64))]));
}

#[test]
fn chaff_does_not_change_the_result() {
    let params = ProtocolParams::default();
    let svc = service(params);
    let tek = TemporaryExposureKey::from_bytes([5; 16], TODAY);
    svc.upload_diagnosis(&DiagnosisUpload::new(vec![tek])).unwrap();
    let transport = LocalTransport::new(&svc, 5);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut log = contact_log(&tek, &params, 70, 6);
    let base = check_exposure(&log, &transport, &params, &CheckConfig::default(), &mut rng).unwrap();
    let origin = TODAY as u64 * 144;
    for i in 0..144 {
        for _ in 0..3 {
            log.record_observation(origin + i, &rng.gen::<IdBytes>(), &params).unwrap();
        }
    }
    let noisy = check_exposure(&log, &transport, &params, &CheckConfig::default(), &mut rng).unwrap();
    assert_eq!(base.matched_cci_count, 5);
    assert_eq!(noisy.matched_cci_count, base.matched_cci_count);
    assert_eq!(noisy.matched_intervals, base.matched_intervals);
}
