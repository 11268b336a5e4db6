//! Deterministic encounter simulation, the passive-scanner adversary, and
//! the download-overhead arithmetic.
//!
//! One scenario covers a single day on the rotation grid. Devices meet in
//! scripted encounters; passive sensors record every RPI broadcast inside
//! their sighting windows. Diagnosed devices then disclose either their day
//! key (the baseline) or the CCIs derived from it, and we measure both what
//! honest devices learn and what the sensor operator can link.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::client::{check_exposure, CheckConfig, ExposureResult, LocalTransport, ObservationLog};
use crate::error::{Error, Result};
use crate::keys::{cross_hash, derive_day_rpis, generate_tek, IdBytes, TemporaryExposureKey, ID_LEN};
use crate::params::ProtocolParams;
use crate::service::{DayClock, ExposureService, ServerConfig};
use crate::wire::{decode_export, DiagnosisUpload};

const LOG_STREAM: u64 = 0x6c6f_6773;
const SENSOR_STREAM: u64 = 0x7365_6e73;
const PSI_STREAM: u64 = 0x7073_6921;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    TekDisclosure,
    CciDisclosure,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::TekDisclosure => "TEK_DISCLOSURE",
            Scheme::CciDisclosure => "CCI_DISCLOSURE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: u32,
    pub tek: TemporaryExposureKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encounter {
    pub device_a: u32,
    pub device_b: u32,
    pub start_interval: u32,
    pub duration_intervals: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sighting {
    pub device: u32,
    pub start_interval: u32,
    pub duration_intervals: u32,
}

impl Sighting {
    pub fn intervals(&self) -> std::ops::Range<u32> {
        self.start_interval..self.start_interval + self.duration_intervals
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sensor {
    pub sensor_id: u32,
    pub location: String,
    pub observed: Vec<Sighting>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub day: u32,
    pub intervals_per_day: u32,
    pub devices: Vec<Device>,
    pub encounters: Vec<Encounter>,
    pub sensors: Vec<Sensor>,
    pub diagnosed: BTreeSet<u32>,
}

impl Scenario {
    pub fn validate(&self, params: &ProtocolParams) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.intervals_per_day != params.intervals_per_day() {
            return bad(format!(
                "scenario grid has {} intervals, params give {}",
                self.intervals_per_day,
                params.intervals_per_day()
            ));
        }
        let ids: BTreeSet<u32> = self.devices.iter().map(|d| d.id).collect();
        if ids.len() != self.devices.len() {
            return bad("duplicate device id".into());
        }
        if let Some(d) = self.devices.iter().find(|d| d.tek.day() != self.day) {
            return bad(format!("device {} key is for day {}, scenario day is {}", d.id, d.tek.day(), self.day));
        }
        let in_day = |start: u32, dur: u32| dur >= 1 && start.checked_add(dur).is_some_and(|e| e <= self.intervals_per_day);
        for e in &self.encounters {
            if !ids.contains(&e.device_a) || !ids.contains(&e.device_b) || e.device_a == e.device_b {
                return bad(format!("encounter between unknown or identical devices {e:?}"));
            }
            if !in_day(e.start_interval, e.duration_intervals) {
                return bad(format!("encounter outside the day: {e:?}"));
            }
        }
        for s in &self.sensors {
            for o in &s.observed {
                if !ids.contains(&o.device) || !in_day(o.start_interval, o.duration_intervals) {
                    return bad(format!("sensor {} has an invalid sighting {o:?}", s.sensor_id));
                }
            }
        }
        if !self.diagnosed.is_subset(&ids) {
            return bad("diagnosed devices must be part of the scenario".into());
        }
        Ok(())
    }

    pub fn device(&self, id: u32) -> Option<&Device> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str, params: &ProtocolParams) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate(params)?;
        Ok(scenario)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_devices: u32,
    pub n_encounters: u32,
    pub n_sensors: u32,
    pub diagnosis_rate: f64,
    pub day: u32,
    pub max_encounter_intervals: u32,
    pub max_dwell_intervals: u32,
    pub sightings_per_sensor: u32,
}

impl ScenarioSpec {
    pub fn new(seed: u64, n_devices: u32, n_encounters: u32, n_sensors: u32, diagnosis_rate: f64) -> Self {
        ScenarioSpec {
            seed,
            n_devices,
            n_encounters,
            n_sensors,
            diagnosis_rate,
            day: 0,
            max_encounter_intervals: 12,
            max_dwell_intervals: 6,
            sightings_per_sensor: 4,
        }
    }
}

/// Draws a scenario from `spec.seed`. A device is never seen by two
/// sensors in the same interval, and each sensor sees a given device
/// during at most one contiguous dwell.
pub fn generate_scenario(spec: &ScenarioSpec, params: &ProtocolParams) -> Result<Scenario> {
    if !(0.0..=1.0).contains(&spec.diagnosis_rate) {
        return Err(Error::Validation(format!("diagnosis rate {} outside [0, 1]", spec.diagnosis_rate)));
    }
    let per_day = params.intervals_per_day();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let devices = (0..spec.n_devices)
        .map(|id| Ok(Device { id, tek: generate_tek(&mut rng, spec.day)? }))
        .collect::<Result<Vec<_>>>()?;

    let mut encounters = Vec::new();
    if spec.n_devices >= 2 {
        for _ in 0..spec.n_encounters {
            let device_a = rng.gen_range(0..spec.n_devices);
            let mut device_b = rng.gen_range(0..spec.n_devices - 1);
            if device_b >= device_a {
                device_b += 1;
            }
            let duration_intervals = rng.gen_range(1..=spec.max_encounter_intervals.clamp(1, per_day));
            let start_interval = rng.gen_range(0..=per_day - duration_intervals);
            encounters.push(Encounter { device_a, device_b, start_interval, duration_intervals });
        }
    }

    let mut busy: HashMap<u32, Vec<std::ops::Range<u32>>> = HashMap::new();
    let mut sensors = Vec::new();
    for sensor_id in 0..spec.n_sensors {
        let mut observed = Vec::new();
        let mut seen = BTreeSet::new();
        if spec.n_devices > 0 {
            let wanted = rng.gen_range(1..=spec.sightings_per_sensor.max(1));
            for _ in 0..wanted {
                let device = rng.gen_range(0..spec.n_devices);
                if !seen.insert(device) {
                    continue;
                }
                for _attempt in 0..16 {
                    let duration_intervals = rng.gen_range(1..=spec.max_dwell_intervals.clamp(1, per_day));
                    let start_interval = rng.gen_range(0..=per_day - duration_intervals);
                    let span = start_interval..start_interval + duration_intervals;
                    let slots = busy.entry(device).or_default();
                    if slots.iter().all(|r| r.end <= span.start || span.end <= r.start) {
                        slots.push(span);
                        observed.push(Sighting { device, start_interval, duration_intervals });
                        break;
                    }
                }
            }
        }
        sensors.push(Sensor { sensor_id, location: format!("site-{sensor_id}"), observed });
    }

    let diagnosed = devices
        .iter()
        .filter(|_| spec.diagnosis_rate >= 1.0 || (spec.diagnosis_rate > 0.0 && rng.gen_bool(spec.diagnosis_rate)))
        .map(|d| d.id)
        .collect();

    let scenario = Scenario { seed: spec.seed, day: spec.day, intervals_per_day: per_day, devices, encounters, sensors, diagnosed };
    scenario.validate(params)?;
    Ok(scenario)
}

/// One infected device walking past `sensors` scanners, each observing it
/// for `dwell` consecutive intervals, with gaps of `dwell + k_steps + 1`
/// between scanners. Two bystanders wander through the same sites.
pub fn tracking_scenario(seed: u64, sensors: u32, dwell: u32, params: &ProtocolParams) -> Result<Scenario> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let per_day = params.intervals_per_day();
    let stride = dwell + params.k_steps() + 1;
    if dwell == 0 || sensors.saturating_mul(stride) > per_day {
        return Err(Error::Validation(format!("{sensors} dwells of {dwell} do not fit in {per_day} intervals")));
    }
    let devices = (0..3).map(|id| Ok(Device { id, tek: generate_tek(&mut rng, 0)? })).collect::<Result<Vec<_>>>()?;
    let sensors = (0..sensors)
        .map(|i| {
            let start = i * stride;
            Sensor {
                sensor_id: i,
                location: format!("site-{i}"),
                observed: vec![
                    Sighting { device: 0, start_interval: start, duration_intervals: dwell },
                    Sighting { device: 1 + i % 2, start_interval: start, duration_intervals: 1 },
                ],
            }
        })
        .collect();
    let scenario = Scenario {
        seed,
        day: 0,
        intervals_per_day: per_day,
        devices,
        encounters: Vec::new(),
        sensors,
        diagnosed: BTreeSet::from([0]),
    };
    scenario.validate(params)?;
    Ok(scenario)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Probability that any single broadcast is missed by a receiver.
    pub drop_probability: f64,
    pub check: CheckConfig,
    pub response_pad: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { drop_probability: 0.0, check: CheckConfig::default(), response_pad: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "snake_case")]
pub enum Published {
    Teks(Vec<TemporaryExposureKey>),
    Ccis(#[serde(with = "hex_list")] Vec<IdBytes>),
}

impl Published {
    pub fn scheme(&self) -> Scheme {
        match self {
            Published::Teks(_) => Scheme::TekDisclosure,
            Published::Ccis(_) => Scheme::CciDisclosure,
        }
    }

    pub fn download_bytes(&self) -> usize {
        match self {
            Published::Teks(t) => t.len() * ID_LEN,
            Published::Ccis(c) => c.len() * ID_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub scheme: Scheme,
    /// Under TEK disclosure `matched_cci_count` counts matched RPIs.
    pub results: BTreeMap<u32, ExposureResult>,
    pub published: Published,
}

struct Broadcasts<'a> {
    scenario: &'a Scenario,
    rpis: HashMap<u32, Vec<IdBytes>>,
    params: ProtocolParams,
}

impl<'a> Broadcasts<'a> {
    fn new(scenario: &'a Scenario, params: &ProtocolParams) -> Result<Self> {
        let mut rpis = HashMap::new();
        for d in &scenario.devices {
            rpis.insert(d.id, derive_day_rpis(&d.tek, params)?.iter().map(|r| *r.bytes()).collect());
        }
        Ok(Broadcasts { scenario, rpis, params: *params })
    }

    fn rpi(&self, device: u32, interval: u32) -> &IdBytes {
        &self.rpis[&device][interval as usize]
    }

    fn absolute(&self, interval: u32) -> u64 {
        self.scenario.day as u64 * self.params.intervals_per_day() as u64 + interval as u64
    }
}

fn heard(rng: &mut ChaCha20Rng, drop: f64) -> bool {
    drop <= 0.0 || !rng.gen_bool(drop.min(1.0))
}

/// Every device's observation log after the day's encounters.
pub fn observation_logs(
    scenario: &Scenario,
    params: &ProtocolParams,
    opts: &SimOptions,
) -> Result<BTreeMap<u32, ObservationLog>> {
    let air = Broadcasts::new(scenario, params)?;
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed ^ LOG_STREAM);
    let mut logs: BTreeMap<u32, ObservationLog> = scenario.devices.iter().map(|d| (d.id, ObservationLog::new())).collect();
    for e in &scenario.encounters {
        for t in e.start_interval..e.start_interval + e.duration_intervals {
            for (listener, speaker) in [(e.device_a, e.device_b), (e.device_b, e.device_a)] {
                if heard(&mut rng, opts.drop_probability) {
                    let log = logs.get_mut(&listener).expect("validated device");
                    log.record_observation(air.absolute(t), air.rpi(speaker, t), params)?;
                }
            }
        }
    }
    Ok(logs)
}

/// What the diagnosed devices disclose under `scheme`.
pub fn publish(scenario: &Scenario, params: &ProtocolParams, scheme: Scheme) -> Result<Published> {
    let teks: Vec<TemporaryExposureKey> =
        scenario.devices.iter().filter(|d| scenario.diagnosed.contains(&d.id)).map(|d| d.tek).collect();
    match scheme {
        Scheme::TekDisclosure => Ok(Published::Teks(teks)),
        Scheme::CciDisclosure => {
            let service = simulation_service(scenario, params, &SimOptions::default())?;
            upload_all(&service, &teks)?;
            Ok(Published::Ccis(decode_export(&service.export_endpoint()?)?))
        }
    }
}

fn simulation_service(scenario: &Scenario, params: &ProtocolParams, opts: &SimOptions) -> Result<ExposureService> {
    let config = ServerConfig {
        params: *params,
        query_pad: opts.check.query_pad,
        response_pad: opts.response_pad,
        export_enabled: true,
        ..ServerConfig::default()
    };
    ExposureService::new(config, DayClock::Fixed(scenario.day))
}

fn upload_all(service: &ExposureService, teks: &[TemporaryExposureKey]) -> Result<usize> {
    teks.iter().map(|t| service.upload_diagnosis(&DiagnosisUpload::new(vec![*t]))).sum()
}

/// Runs disclosure and every device's exposure check.
pub fn run_protocol(scenario: &Scenario, params: &ProtocolParams, scheme: Scheme, opts: &SimOptions) -> Result<ProtocolRun> {
    scenario.validate(params)?;
    let logs = observation_logs(scenario, params, opts)?;
    let threshold = opts.check.match_threshold;

    match scheme {
        Scheme::TekDisclosure => {
            let published = publish(scenario, params, scheme)?;
            let Published::Teks(teks) = &published else { unreachable!() };
            let mut exposed_rpis = HashSet::new();
            for tek in teks {
                exposed_rpis.extend(derive_day_rpis(tek, params)?.iter().map(|r| *r.bytes()));
            }
            let results = logs
                .iter()
                .map(|(id, log)| {
                    let hits: BTreeSet<u64> =
                        log.records().filter(|(_, rpi)| exposed_rpis.contains(*rpi)).map(|(i, _)| i).collect();
                    let count = log.records().filter(|(_, rpi)| exposed_rpis.contains(*rpi)).count();
                    (*id, ExposureResult::from_matches(count, hits, threshold))
                })
                .collect();
            Ok(ProtocolRun { scheme, results, published })
        }
        Scheme::CciDisclosure => {
            let service = simulation_service(scenario, params, opts)?;
            let teks: Vec<_> =
                scenario.devices.iter().filter(|d| scenario.diagnosed.contains(&d.id)).map(|d| d.tek).collect();
            upload_all(&service, &teks)?;
            let published = Published::Ccis(decode_export(&service.export_endpoint()?)?);

            let transport = LocalTransport::new(&service, scenario.seed ^ PSI_STREAM);
            let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed ^ PSI_STREAM.rotate_left(17));
            let mut results = BTreeMap::new();
            for (id, log) in &logs {
                results.insert(*id, check_exposure(log, &transport, params, &opts.check, &mut rng)?);
            }
            Ok(ProtocolRun { scheme, results, published })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SightingRef {
    pub sensor_id: u32,
    pub interval: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedChain {
    /// Ground-truth owner of the linked sightings (not known to the adversary).
    pub device: u32,
    pub sightings: Vec<SightingRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InfectedLinkage {
    pub identified: bool,
    pub linked_sightings: Vec<SightingRef>,
    pub largest_linked_chain: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkabilityReport {
    pub scheme: Scheme,
    pub per_infected: BTreeMap<u32, InfectedLinkage>,
    pub chains: Vec<LinkedChain>,
}

#[derive(Debug, Clone)]
struct Capture {
    sensor_id: u32,
    interval: u32,
    rpi: IdBytes,
    device: u32,
}

/// Everything each sensor captured, in (sensor, interval) order.
fn sensor_captures(scenario: &Scenario, air: &Broadcasts<'_>, opts: &SimOptions) -> Vec<Vec<Capture>> {
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed ^ SENSOR_STREAM);
    scenario
        .sensors
        .iter()
        .map(|s| {
            let mut caps = Vec::new();
            for o in &s.observed {
                for t in o.intervals() {
                    if heard(&mut rng, opts.drop_probability) {
                        caps.push(Capture { sensor_id: s.sensor_id, interval: t, rpi: *air.rpi(o.device, t), device: o.device });
                    }
                }
            }
            caps.sort_by_key(|c| (c.interval, c.rpi));
            caps
        })
        .collect()
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// The passive sensor operator's view after disclosure.
///
/// With day keys the operator regenerates every RPI of every diagnosed
/// device and links all of its sightings. With CCIs it can only cross-hash
/// pairs captured by one sensor `k_steps` apart and look them up, so links
/// never leave a single dwell.
pub fn adversary_analyze(
    scenario: &Scenario,
    published: &Published,
    params: &ProtocolParams,
    opts: &SimOptions,
) -> Result<LinkabilityReport> {
    scenario.validate(params)?;
    let air = Broadcasts::new(scenario, params)?;
    let captures = sensor_captures(scenario, &air, opts);
    let mut chains: Vec<LinkedChain> = Vec::new();

    match published {
        Published::Teks(teks) => {
            let owner_of: HashMap<TemporaryExposureKey, u32> = scenario.devices.iter().map(|d| (d.tek, d.id)).collect();
            let mut identity_of_rpi: HashMap<IdBytes, usize> = HashMap::new();
            for (idx, tek) in teks.iter().enumerate() {
                for r in derive_day_rpis(tek, params)? {
                    identity_of_rpi.insert(*r.bytes(), idx);
                }
            }
            let mut linked: BTreeMap<usize, Vec<SightingRef>> = BTreeMap::new();
            for c in captures.iter().flatten() {
                if let Some(&idx) = identity_of_rpi.get(&c.rpi) {
                    linked.entry(idx).or_default().push(SightingRef { sensor_id: c.sensor_id, interval: c.interval });
                }
            }
            for (idx, mut sightings) in linked {
                let Some(&device) = owner_of.get(&teks[idx]) else { continue };
                sightings.sort();
                chains.push(LinkedChain { device, sightings });
            }
        }
        Published::Ccis(ccis) => {
            let lookup: HashSet<&IdBytes> = ccis.iter().collect();
            let k = params.k_steps();
            for caps in &captures {
                let mut at: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
                for (i, c) in caps.iter().enumerate() {
                    at.entry(c.interval).or_default().push(i);
                }
                let mut sets = DisjointSets::new(caps.len());
                let mut linked = vec![false; caps.len()];
                for (i, newer) in caps.iter().enumerate() {
                    let Some(older_at) = newer.interval.checked_sub(k) else { continue };
                    for &j in at.get(&older_at).into_iter().flatten() {
                        if lookup.contains(&cross_hash(&caps[j].rpi, &newer.rpi)) {
                            sets.union(i, j);
                            linked[i] = true;
                            linked[j] = true;
                        }
                    }
                }
                let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for i in (0..caps.len()).filter(|&i| linked[i]) {
                    groups.entry(sets.find(i)).or_default().push(i);
                }
                for members in groups.into_values() {
                    let device = caps[members[0]].device;
                    let mut sightings: Vec<SightingRef> = members
                        .iter()
                        .map(|&i| SightingRef { sensor_id: caps[i].sensor_id, interval: caps[i].interval })
                        .collect();
                    sightings.sort();
                    sightings.dedup();
                    chains.push(LinkedChain { device, sightings });
                }
            }
        }
    }

    let mut per_infected: BTreeMap<u32, InfectedLinkage> =
        scenario.diagnosed.iter().map(|d| (*d, InfectedLinkage::default())).collect();
    for chain in &chains {
        let entry = per_infected.entry(chain.device).or_default();
        entry.identified = true;
        entry.linked_sightings.extend(chain.sightings.iter().copied());
        entry.largest_linked_chain = entry.largest_linked_chain.max(chain.sightings.len());
    }
    for entry in per_infected.values_mut() {
        entry.linked_sightings.sort();
        entry.linked_sightings.dedup();
    }
    Ok(LinkabilityReport { scheme: published.scheme(), per_infected, chains })
}

/// Ground truth: every (sensor, interval) at which `device` was in range.
pub fn actual_sightings(scenario: &Scenario, device: u32) -> BTreeSet<SightingRef> {
    scenario
        .sensors
        .iter()
        .flat_map(|s| {
            s.observed
                .iter()
                .filter(move |o| o.device == device)
                .flat_map(move |o| o.intervals().map(move |interval| SightingRef { sensor_id: s.sensor_id, interval }))
        })
        .collect()
}

impl LinkabilityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per infected device:
    /// `scheme,device,identified,linked_sightings,largest_linked_chain,chains`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scheme", "device", "identified", "linked_sightings", "largest_linked_chain", "chains"])
            .map_err(csv_err)?;
        for (device, link) in &self.per_infected {
            let n_chains = self.chains.iter().filter(|c| c.device == *device).count();
            w.write_record([
                self.scheme.label().to_string(),
                device.to_string(),
                link.identified.to_string(),
                link.linked_sightings.len().to_string(),
                link.largest_linked_chain.to_string(),
                n_chains.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub positive_users: u64,
    pub scheme: Scheme,
    pub rotation_minutes: u32,
    pub bytes_total: u64,
}

/// Download bytes one positive user adds over the retention window.
pub fn bytes_per_user(scheme: Scheme, params: &ProtocolParams) -> u64 {
    let per_day = match scheme {
        Scheme::TekDisclosure => 1,
        Scheme::CciDisclosure => params.ccis_per_day() as u64,
    };
    params.retention_days() as u64 * per_day * ID_LEN as u64
}

pub fn overhead_table(user_counts: &[u64], params: &ProtocolParams) -> Vec<OverheadRow> {
    user_counts
        .iter()
        .flat_map(|&n| {
            [Scheme::TekDisclosure, Scheme::CciDisclosure].map(|scheme| OverheadRow {
                positive_users: n,
                scheme,
                rotation_minutes: params.rotation_minutes(),
                bytes_total: n * bytes_per_user(scheme, params),
            })
        })
        .collect()
}

/// Smallest user count whose download reaches `threshold_bytes`.
pub fn users_to_reach(threshold_bytes: u64, scheme: Scheme, params: &ProtocolParams) -> u64 {
    threshold_bytes.div_ceil(bytes_per_user(scheme, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlowupRatios {
    pub rotation_minutes: u32,
    pub k_steps: u32,
    /// Identifiers per TEK per day; the headline ratio.
    pub rpis_per_day: u32,
    pub ccis_per_day: u32,
    /// `rpis_per_day - ccis_per_day`, the pairs lost at the start of each day.
    pub pair_deficit: u32,
}

pub fn blowup_ratios(params: &ProtocolParams) -> BlowupRatios {
    BlowupRatios {
        rotation_minutes: params.rotation_minutes(),
        k_steps: params.k_steps(),
        rpis_per_day: params.intervals_per_day(),
        ccis_per_day: params.ccis_per_day(),
        pair_deficit: params.k_steps(),
    }
}

mod hex_list {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::keys::IdBytes;

    pub fn serialize<S: Serializer>(items: &[IdBytes], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(items.iter().map(hex::encode))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<IdBytes>, D::Error> {
        Vec::<String>::deserialize(d)?.iter().map(|t| crate::hex16::parse(t).map_err(D::Error::custom)).collect()
    }
}
