use std::io::{BufRead, BufReader};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

const ZERO_TEK: &str = "00000000000000000000000000000000";

fn crosshash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crosshash"))
        .args(args)
        .env_remove("CROSSHASH_SEED")
        .output()
        .expect("run crosshash")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn derive_prints_one_rpi_per_interval() {
    let text = stdout(&crosshash(&["derive", "--tek", ZERO_TEK, "--rotation", "10"]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 144);
    assert_eq!(lines[0], "de47c9b27eb8d300dbb5f2c353e632c3");
    assert!(lines.iter().all(|l| l.len() == 32 && l.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase())));

    assert_eq!(stdout(&crosshash(&["derive", "--tek", ZERO_TEK, "--rotation", "5"])).lines().count(), 288);
    assert_eq!(stdout(&crosshash(&["derive", "--tek", ZERO_TEK, "--ccis", "--k", "3"])).lines().count(), 141);
}

#[test]
fn keygen_is_sixteen_bytes_and_seeded() {
    let a = stdout(&crosshash(&["keygen"]));
    assert_eq!(a.trim().len(), 32);
    let s1 = stdout(&crosshash(&["keygen", "--seed", "9", "--day", "5", "--with-day"]));
    let s2 = stdout(&crosshash(&["keygen", "--seed", "9", "--day", "5", "--with-day"]));
    assert_eq!(s1, s2);
    assert!(s1.starts_with("5 "));
}

#[test]
fn bench_overhead_reports_exact_bytes() {
    let text = stdout(&crosshash(&["bench-overhead", "--users", "446429", "--scheme", "tek"]));
    assert_eq!(text, "positive_users,scheme,rotation_minutes,bytes_total\n446429,TEK_DISCLOSURE,10,100000096\n");
    let text = stdout(&crosshash(&["bench-overhead", "--users", "1,2", "--format", "json"]));
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["bytes_per_user"]["TEK_DISCLOSURE"], 224);
    assert_eq!(doc["bytes_per_user"]["CCI_DISCLOSURE"], 14 * 143 * 16);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn vectors_reproduce_the_checked_in_file() {
    let text = stdout(&crosshash(&["vectors"]));
    assert_eq!(text, include_str!("../../core/tests/data/golden_vectors.json"));
}

#[test]
fn usage_and_runtime_errors_differ() {
    assert_eq!(crosshash(&["derive", "--tek", "xyz"]).status.code(), Some(2));
    assert_eq!(crosshash(&["derive", "--tek", ZERO_TEK, "--rotation", "7"]).status.code(), Some(2));
    assert_eq!(crosshash(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(crosshash(&["check", "--server", "http://127.0.0.1:9", "--log", "/no/such/file"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "3 nothex\n").unwrap();
    let bad = bad.to_str().unwrap();
    assert_eq!(crosshash(&["upload", "--server", "http://127.0.0.1:9", "--file", bad]).status.code(), Some(2));

    let good = dir.path().join("good.txt");
    std::fs::write(&good, format!("3 {ZERO_TEK}\n")).unwrap();
    let out = crosshash(&["upload", "--server", "http://127.0.0.1:9", "--file", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_file_and_environment_feed_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("crosshash.conf");
    std::fs::write(&cfg, "# five minute rotation\nrotation_minutes = 5\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(stdout(&crosshash(&["--config", cfg, "derive", "--tek", ZERO_TEK])).lines().count(), 288);
    assert_eq!(stdout(&crosshash(&["--config", cfg, "derive", "--tek", ZERO_TEK, "--rotation", "10"])).lines().count(), 144);

    let out = Command::new(env!("CARGO_BIN_EXE_crosshash"))
        .args(["derive", "--tek", ZERO_TEK, "--ccis"])
        .env("CROSSHASH_K", "4")
        .output()
        .unwrap();
    assert_eq!(stdout(&out).lines().count(), 140);
    std::fs::write(dir.path().join("bad.conf"), "nonsense_key = 1\n").unwrap();
    let bad = dir.path().join("bad.conf");
    assert_eq!(crosshash(&["--config", bad.to_str().unwrap(), "keygen"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let logs = dir.path().join("logs");
    let out = crosshash(&[
        "simulate", "--tracking", "--sensors", "10", "--dwell", "2", "--seed", "4",
        "--out", out_dir.to_str().unwrap(), "--export-logs", logs.to_str().unwrap(),
    ]);
    let csv = stdout(&out);
    assert_eq!(
        csv,
        "scheme,device,identified,linked_sightings,largest_linked_chain,chains\n\
         TEK_DISCLOSURE,0,true,20,20,1\n\
         CCI_DISCLOSURE,0,true,20,2,10\n"
    );
    for f in ["scenario.json", "report_tek_disclosure.json", "report_cci_disclosure.csv", "run_cci_disclosure.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_dir(&logs).unwrap().count(), 3);

    // Re-running the written scenario reproduces the same reports.
    let again = dir.path().join("again");
    let scenario = out_dir.join("scenario.json");
    let out = crosshash(&["simulate", "--scenario", scenario.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(stdout(&out), csv);
    for f in ["report_tek_disclosure.json", "report_cci_disclosure.json", "report_cci_disclosure.csv"] {
        assert_eq!(std::fs::read(out_dir.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(store: &Path) -> (Server, String) {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_crosshash"))
        .args(["serve", "--listen", &addr, "--store", store.to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    std::thread::spawn(move || for _ in BufReader::new(stderr).lines() {});
    let deadline = Instant::now() + Duration::from_secs(20);
    while TcpStream::connect(&addr).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    (Server(child), format!("http://{addr}"))
}

#[test]
fn serve_upload_check_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_server, url) = start_server(&dir.path().join("store.log"));

    let line = stdout(&crosshash(&["keygen", "--seed", "77", "--with-day"]));
    let (day, tek) = line.trim().split_once(' ').unwrap();
    let diagnosis = dir.path().join("diagnosis.txt");
    std::fs::write(&diagnosis, &line).unwrap();
    assert_eq!(stdout(&crosshash(&["upload", "--server", &url, "--file", diagnosis.to_str().unwrap()])), "143\n");

    let check = |from: &str, count: &str| -> serde_json::Value {
        let log = dir.path().join(format!("obs_{from}_{count}.log"));
        let log = log.to_str().unwrap();
        stdout(&crosshash(&["derive", "--tek", tek, "--day", day, "--emit-log", log, "--from", from, "--count", count]));
        let text = stdout(&crosshash(&["check", "--server", &url, "--log", log, "--seed", "1"]));
        serde_json::from_str(&text).unwrap()
    };
    let long = check("30", "5");
    assert_eq!(long["matched_cci_count"], 4);
    assert_eq!(long["exposed"], true);
    let short = check("30", "1");
    assert_eq!(short["matched_cci_count"], 0);
    assert_eq!(short["exposed"], false);
    assert_eq!(short["requests_sent"], long["requests_sent"]);
}
