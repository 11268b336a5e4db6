//! `crosshash`: key derivation, the exposure server, client checks,
//! simulation and overhead numbers from one binary.
//!
//! Settings resolve in order: built-in defaults, `--config` file
//! (`key=value` lines), `CROSSHASH_<KEY>` environment variables, then flags.
//! Exit status is 0 on success, 2 on usage errors (bad flags, unreadable
//! files, malformed hex) and 1 on runtime failures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use crosshash_core::client::{check_exposure, CheckConfig, ObservationLog};
use crosshash_core::service::{DayClock, ExposureService, ServerConfig, ENV_PREFIX};
use crosshash_core::sim::{
    adversary_analyze, blowup_ratios, bytes_per_user, generate_scenario, overhead_table, run_protocol,
    tracking_scenario, users_to_reach, Scenario, ScenarioSpec, Scheme, SimOptions,
};
use crosshash_core::wire::DiagnosisUpload;
use crosshash_core::{
    derive_day_rpis, derive_tek_ccis, generate_tek, IdBytes, ProtocolParams, TemporaryExposureKey,
};
use crosshash_server::{serve_forever, HttpClient};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "crosshash", version, about = "Cross-hashed contact identifiers: derive, serve, check, simulate")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// `key=value` settings file
    #[arg(long, global = true, env = "CROSSHASH_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every random choice; omit for OS entropy
    #[arg(long, global = true, env = "CROSSHASH_SEED")]
    seed: Option<u64>,
    /// Rotation period in minutes
    #[arg(long, global = true, env = "CROSSHASH_ROTATION")]
    rotation: Option<u32>,
    /// Rotation steps between the two RPIs of a CCI
    #[arg(long, global = true, env = "CROSSHASH_K")]
    k: Option<u32>,
    #[arg(long, global = true, env = "CROSSHASH_PREFIX_BITS")]
    prefix_bits: Option<u8>,
    /// Blinded points per PSI query
    #[arg(long, global = true, env = "CROSSHASH_PAD_QUERIES")]
    pad_queries: Option<usize>,
    /// Server points per PSI response
    #[arg(long, global = true, env = "CROSSHASH_PAD_RESPONSE")]
    pad_response: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print a fresh temporary exposure key
    Keygen {
        #[arg(long)]
        day: Option<u32>,
        /// Print `day hex` instead of bare hex
        #[arg(long)]
        with_day: bool,
    },
    /// Print the RPIs (or CCIs) of one key, one per line
    Derive {
        #[arg(long, value_parser = parse_id)]
        tek: IdBytes,
        #[arg(long, default_value_t = 0)]
        day: u32,
        /// Print cross-hashed identifiers instead of RPIs
        #[arg(long)]
        ccis: bool,
        /// Also write an observation log of this key's RPIs
        #[arg(long)]
        emit_log: Option<PathBuf>,
        /// First interval recorded in the emitted log
        #[arg(long, default_value_t = 0, requires = "emit_log")]
        from: u32,
        /// Number of intervals recorded in the emitted log
        #[arg(long, requires = "emit_log")]
        count: Option<u32>,
    },
    /// Run the exposure server until Ctrl-C
    Serve {
        #[arg(long)]
        listen: Option<String>,
        /// Append-only store log; in-memory when absent
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, env = "CROSSHASH_UPLOAD_TOKEN")]
        token: Option<String>,
        /// Serve the full identifier list at /v1/export
        #[arg(long)]
        export: bool,
    },
    /// Post a diagnosis file (`day hex` per line) to a server
    Upload {
        #[arg(long)]
        server: String,
        #[arg(long)]
        file: PathBuf,
        #[arg(long, env = "CROSSHASH_UPLOAD_TOKEN")]
        token: Option<String>,
    },
    /// Check an observation log against a server
    Check {
        #[arg(long)]
        server: String,
        /// Binary log: frames of u64 BE interval then 16-byte RPI
        #[arg(long)]
        log: PathBuf,
        /// Pad the request count to a multiple of this
        #[arg(long)]
        request_pad: Option<usize>,
        #[arg(long)]
        threshold: Option<usize>,
        /// Accepted deviation from the exact k-step gap
        #[arg(long)]
        tolerance: Option<u32>,
        #[arg(long)]
        pairing_cap: Option<usize>,
    },
    /// Run a scenario under both disclosure schemes and write reports
    Simulate(SimulateArgs),
    /// Download size of the disclosed identifiers
    BenchOverhead {
        /// Positive user counts (comma separated or repeated)
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        users: Vec<u64>,
        #[arg(long, value_enum, default_value_t = SchemeArg::Both)]
        scheme: SchemeArg,
        /// Also report the smallest user count reaching this many bytes
        #[arg(long)]
        threshold: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Write the golden vectors from the reference implementation
    Vectors {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON; generated from the counts below when absent
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    devices: u32,
    #[arg(long, default_value_t = 200)]
    encounters: u32,
    #[arg(long, default_value_t = 10)]
    sensors: u32,
    #[arg(long, default_value_t = 0.1)]
    diagnosis_rate: f64,
    /// One infected walker past `--sensors` scanners, `--dwell` intervals each
    #[arg(long, conflicts_with = "scenario")]
    tracking: bool,
    #[arg(long, default_value_t = 2)]
    dwell: u32,
    #[arg(long, value_enum, default_value_t = SchemeArg::Both)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 0.0)]
    drop_probability: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Write every device's observation log here
    #[arg(long)]
    export_logs: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Tek,
    Cci,
    Both,
}

impl SchemeArg {
    fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeArg::Tek => vec![Scheme::TekDisclosure],
            SchemeArg::Cci => vec![Scheme::CciDisclosure],
            SchemeArg::Both => vec![Scheme::TekDisclosure, Scheme::CciDisclosure],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// A failure caused by the invocation rather than the run.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn parse_id(s: &str) -> Result<IdBytes, String> {
    crosshash_core::hex16::parse(s).map_err(|e| e.to_string())
}

fn read_file(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

/// Settings the server config file may carry for the client side.
struct ClientSettings {
    request_pad: Option<usize>,
    match_threshold: Option<usize>,
    pairing_cap: Option<usize>,
}

/// Environment keys owned by clap flags; everything else with the prefix
/// is a config key.
const FLAG_ENV: &[&str] =
    &["CONFIG", "SEED", "ROTATION", "K", "PREFIX_BITS", "PAD_QUERIES", "PAD_RESPONSE", "UPLOAD_TOKEN", "LOG"];

fn resolve(global: &Global) -> anyhow::Result<(ServerConfig, ClientSettings)> {
    let text = match &global.config {
        Some(path) => String::from_utf8(read_file(path)?).map_err(|_| usage("config file is not utf-8"))?,
        None => String::new(),
    };
    let mut config = ServerConfig::from_kv(&text).map_err(|e| usage(e.to_string()))?;
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.starts_with('#')) {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let env: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.strip_prefix(ENV_PREFIX).is_some_and(|rest| !FLAG_ENV.contains(&rest)))
        .collect();
    for (k, v) in &env {
        kv.insert(k[ENV_PREFIX.len()..].to_ascii_lowercase(), v.clone());
    }
    config.apply_env(env).map_err(|e| usage(e.to_string()))?;

    let bad = |e: crosshash_core::Error| usage(e.to_string());
    let mut p = config.params;
    if let Some(r) = global.rotation {
        p = p.with_rotation(r).map_err(bad)?;
    }
    if let Some(k) = global.k {
        p = p.with_k_steps(k).map_err(bad)?;
    }
    if let Some(b) = global.prefix_bits {
        p = p.with_prefix_bits(b).map_err(bad)?;
    }
    config.params = p;
    config.query_pad = global.pad_queries.unwrap_or(config.query_pad);
    config.response_pad = global.pad_response.unwrap_or(config.response_pad);
    config.validate().map_err(bad)?;

    let num = |key: &str| -> anyhow::Result<Option<usize>> {
        kv.get(key).map(|v| v.parse().map_err(|_| usage(format!("config {key}: cannot parse {v:?}")))).transpose()
    };
    let client = ClientSettings {
        request_pad: num("request_pad")?,
        match_threshold: num("match_threshold")?,
        pairing_cap: num("pairing_cap")?,
    };
    Ok((config, client))
}

fn rng_for(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn print_lines<I: IntoIterator<Item = String>>(lines: I) {
    let mut out = String::new();
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    print!("{out}");
}

fn parse_diagnosis_file(text: &str) -> anyhow::Result<Vec<TemporaryExposureKey>> {
    let mut teks = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(day), Some(key), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(usage(format!("diagnosis line {}: expected `day hex`", n + 1)));
        };
        let day: u32 = day.parse().map_err(|_| usage(format!("diagnosis line {}: bad day {day:?}", n + 1)))?;
        let key = parse_id(key).map_err(|e| usage(format!("diagnosis line {}: {e}", n + 1)))?;
        teks.push(TemporaryExposureKey::from_bytes(key, day));
    }
    teks.sort_by_key(|t| t.day());
    Ok(teks)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (config, client_settings) = resolve(&cli.global)?;
    let params = config.params;
    let seed = cli.global.seed;

    match cli.command {
        Command::Keygen { day, with_day } => {
            let day = day.unwrap_or_else(|| DayClock::System.today());
            let tek = generate_tek(&mut rng_for(seed), day)?;
            let hex = hex::encode(tek.bytes());
            println!("{}", if with_day { format!("{day} {hex}") } else { hex });
        }
        Command::Derive { tek, day, ccis, emit_log, from, count } => {
            let tek = TemporaryExposureKey::from_bytes(tek, day);
            let rpis = derive_day_rpis(&tek, &params)?;
            if ccis {
                print_lines(derive_tek_ccis(&tek, &params)?.iter().map(|c| hex::encode(c.bytes())));
            } else {
                print_lines(rpis.iter().map(|r| hex::encode(r.bytes())));
            }
            if let Some(path) = emit_log {
                let start = from as usize;
                let end = count.map_or(rpis.len(), |c| start + c as usize);
                if start >= end || end > rpis.len() {
                    return Err(usage(format!("log range {start}..{end} outside 0..{}", rpis.len())));
                }
                let mut log = ObservationLog::new();
                for r in &rpis[start..end] {
                    log.record_observation(r.absolute_interval(&params), r.bytes(), &params)?;
                }
                write_file(&path, log.encode())?;
            }
        }
        Command::Serve { listen, store, token, export } => {
            let mut config = config;
            if let Some(l) = listen {
                config.listen = l;
            }
            config.store_path = store.or(config.store_path);
            config.upload_token = token.or(config.upload_token);
            config.export_enabled |= export;
            let listen = config.listen.clone();
            let service = ExposureService::new(config, DayClock::System)?;
            serve_forever(Arc::new(service), &listen)?;
        }
        Command::Upload { server, file, token } => {
            let text = String::from_utf8(read_file(&file)?).map_err(|_| usage("diagnosis file is not utf-8"))?;
            let teks = parse_diagnosis_file(&text)?;
            if teks.is_empty() {
                return Err(usage("diagnosis file holds no keys"));
            }
            let inserted = HttpClient::new(&server).upload(&DiagnosisUpload::new(teks), token.as_deref())?;
            println!("{inserted}");
        }
        Command::Check { server, log, request_pad, threshold, tolerance, pairing_cap } => {
            let log = ObservationLog::decode(&read_file(&log)?, &params).map_err(|e| usage(e.to_string()))?;
            let mut check = CheckConfig { query_pad: config.query_pad, ..CheckConfig::default() };
            if let Some(n) = request_pad.or(client_settings.request_pad) {
                check.request_pad = n;
            }
            if let Some(n) = threshold.or(client_settings.match_threshold) {
                check.match_threshold = n;
            }
            if let Some(n) = pairing_cap.or(client_settings.pairing_cap) {
                check.pairing.max_pairs_per_interval = n;
            }
            if let Some(t) = tolerance {
                check.pairing.tolerance = t;
            }
            let transport = HttpClient::new(&server);
            let result = check_exposure(&log, &transport, &params, &check, &mut rng_for(seed))?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Simulate(args) => simulate(args, &config, seed)?,
        Command::BenchOverhead { users, scheme, threshold, format } => {
            bench_overhead(&params, users, scheme, threshold, format)?;
        }
        Command::Vectors { out } => {
            let text = serde_json::to_string_pretty(&crosshash_oracle::golden_vectors())? + "\n";
            match out {
                Some(path) => write_file(&path, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn simulate(args: SimulateArgs, config: &ServerConfig, seed: Option<u64>) -> anyhow::Result<()> {
    let params = config.params;
    let seed = seed.unwrap_or(0);
    let scenario = if let Some(path) = &args.scenario {
        let text = String::from_utf8(read_file(path)?).map_err(|_| usage("scenario is not utf-8"))?;
        Scenario::from_json(&text, &params).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else if args.tracking {
        tracking_scenario(seed, args.sensors, args.dwell, &params).map_err(|e| usage(e.to_string()))?
    } else {
        let spec = ScenarioSpec::new(seed, args.devices, args.encounters, args.sensors, args.diagnosis_rate);
        generate_scenario(&spec, &params).map_err(|e| usage(e.to_string()))?
    };
    if !(0.0..=1.0).contains(&args.drop_probability) {
        return Err(usage("--drop-probability must be in [0, 1]"));
    }
    let opts = SimOptions {
        drop_probability: args.drop_probability,
        check: CheckConfig { query_pad: config.query_pad, ..CheckConfig::default() },
        response_pad: config.response_pad,
    };

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out.join("scenario.json"), scenario.to_json()? + "\n")?;
    let mut csv_rows = Vec::new();
    for scheme in args.scheme.schemes() {
        let label = scheme.label().to_ascii_lowercase();
        let run = run_protocol(&scenario, &params, scheme, &opts)?;
        let report = adversary_analyze(&scenario, &run.published, &params, &opts)?;
        write_file(&args.out.join(format!("run_{label}.json")), serde_json::to_string_pretty(&run)? + "\n")?;
        write_file(&args.out.join(format!("report_{label}.json")), report.to_json()? + "\n")?;
        let csv = report.to_csv()?;
        write_file(&args.out.join(format!("report_{label}.csv")), &csv)?;
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default().to_string();
        if csv_rows.is_empty() {
            csv_rows.push(header);
        }
        csv_rows.extend(lines.map(str::to_string));
        let exposed = run.results.values().filter(|r| r.exposed).count();
        eprintln!("{}: {exposed} of {} devices flagged", scheme.label(), run.results.len());
    }
    print_lines(csv_rows);

    if let Some(dir) = &args.export_logs {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let logs = crosshash_core::sim::observation_logs(&scenario, &params, &opts)?;
        for (device, log) in logs {
            write_file(&dir.join(format!("device_{device}.log")), log.encode())?;
        }
    }
    Ok(())
}

fn bench_overhead(
    params: &ProtocolParams,
    users: Vec<u64>,
    scheme: SchemeArg,
    threshold: Option<u64>,
    format: Format,
) -> anyhow::Result<()> {
    let users = if users.is_empty() { vec![1, 1_000, 100_000, 446_429] } else { users };
    let wanted = scheme.schemes();
    let rows: Vec<_> = overhead_table(&users, params).into_iter().filter(|r| wanted.contains(&r.scheme)).collect();
    let reach: Vec<_> = threshold
        .map(|t| {
            wanted
                .iter()
                .map(|&s| {
                    let n = users_to_reach(t, s, params);
                    (s, t, n, n * bytes_per_user(s, params))
                })
                .collect()
        })
        .unwrap_or_default();

    match format {
        Format::Csv => {
            let mut lines = vec!["positive_users,scheme,rotation_minutes,bytes_total".to_string()];
            lines.extend(rows.iter().map(|r| {
                format!("{},{},{},{}", r.positive_users, r.scheme.label(), r.rotation_minutes, r.bytes_total)
            }));
            print_lines(lines);
            for (s, t, n, total) in &reach {
                eprintln!("{}: {n} users reach {t} bytes ({total} bytes)", s.label());
            }
        }
        Format::Json => {
            let b = blowup_ratios(params);
            let doc = json!({
                "rows": rows,
                "bytes_per_user": wanted.iter().map(|&s| (s.label(), bytes_per_user(s, params))).collect::<BTreeMap<_, _>>(),
                "blowup": b,
                "threshold": reach.iter().map(|(s, t, n, total)| json!({
                    "scheme": s, "threshold_bytes": t, "users": n, "bytes_total": total,
                })).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CROSSHASH_LOG").unwrap_or_else(|_| "info".into()),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("crosshash: {err:#}");
            if err.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

