use std::fs;
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread::sleep;
use std::time::Duration;

fn hcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcap")).args(args).output().unwrap()
}

fn asset(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel).display().to_string()
}

#[test]
fn bundled_scenarios_pass() {
    for s in ["door_chain", "workflow", "replay_after_gc", "baton"] {
        let out = hcap(&["client", "--script", &asset(&format!("scenarios/{s}.json"))]);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert_eq!(out.status.code(), Some(0), "{s}:\n{stdout}");
        assert!(stdout.contains("ok:"), "{s}: {stdout}");
    }
}

#[test]
fn failed_expectation_exits_3_with_diff() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(asset("scenarios/door_chain.json")).unwrap();
    let mut script: serde_json::Value = serde_json::from_str(&text.replacen("denied:stale_serial", "granted:cap", 1)).unwrap();
    script["policy_path"] = asset("policies/core.json").into();
    let path = write_json(dir.path(), "broken.json", script);
    let out = hcap(&["client", "--script", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAILED"));
}

#[test]
fn model_check_exit_codes() {
    let m2 = asset("automata/m2.json");
    let out = hcap(&["model-check", "--sa", &m2, "--depth", "6"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["violations"], serde_json::json!([]));

    let out = hcap(&["model-check", "--sa", &m2, "--depth", "6", "--mutate", "skip-reqt-append", "--no-liveness"]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!report["violations"].as_array().unwrap().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"states\": 3").unwrap();
    assert_eq!(hcap(&["model-check", "--sa", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(hcap(&["model-check", "--sa", "/nonexistent.json"]).status.code(), Some(1));
}

/// Columns other than those measuring wall time.
fn stable_columns(csv: &str) -> Vec<Vec<String>> {
    let mut rows = csv.lines().map(|l| l.split(',').map(String::from).collect::<Vec<_>>());
    let header = rows.next().unwrap();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !header[i].ends_with("_us")).collect();
    std::iter::once(header.clone())
        .chain(rows)
        .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
        .collect()
}

#[test]
fn bench_writes_csv_and_is_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = hcap(&[
            "bench", "exp1", "--p", "0,50,100", "--trials", "3", "--min-trials", "3", "--out", d.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &tempfile::TempDir, f: &str| fs::read_to_string(d.path().join(f)).unwrap();
    let trials = read(&dirs[0], "exp1_trials.csv");
    assert!(trials.starts_with("experiment,variant,x,trial,requests,transitioning,as_round_trips,latency_us\n"));
    assert_eq!(trials.lines().count(), 1 + 3 * 3);
    let summary = read(&dirs[0], "exp1_summary.csv");
    assert!(summary.starts_with("experiment,variant,x,metric,trials,mean,stderr,ci95_lo,ci95_hi,min,max\n"));
    assert!(summary.contains("exp1,minimal,50,as_round_trips,3,50,0,50,50,50,50\n"));
    assert_eq!(stable_columns(&trials), stable_columns(&read(&dirs[1], "exp1_trials.csv")));
    assert_eq!(read(&dirs[0], "exp1_config.json"), read(&dirs[1], "exp1_config.json"));
}

#[test]
fn bench_rejects_too_few_trials() {
    let out = hcap(&["bench", "exp1", "--p", "10", "--trials", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = hcap(&["bench", "exp4", "--configs", "sometimes"]);
    assert_eq!(out.status.code(), Some(1));
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn write_json(dir: &Path, name: &str, v: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

#[test]
fn remote_servers_over_udp() {
    let dir = tempfile::tempdir().unwrap();
    let (auth, rs) = (format!("127.0.0.1:{}", free_port()), format!("127.0.0.1:{}", free_port()));
    let policy = asset("policies/core.json");
    let transport = |bind: &str| serde_json::json!({"kind": "udp", "mtu": 1024, "bind": bind});
    let auth_cfg = write_json(dir.path(), "auth.json", serde_json::json!({
        "mode": "core", "policy_path": policy, "transport": transport(&auth),
    }));
    let rs_cfg = write_json(dir.path(), "rs.json", serde_json::json!({
        "mode": "core", "policy_path": policy, "rsid": "rs", "auth_addr": auth, "transport": transport(&rs),
    }));
    let spawn = |cmd: &str, cfg: &Path| {
        Killed(
            Command::new(env!("CARGO_BIN_EXE_hcap"))
                .args([cmd, "--config", cfg.to_str().unwrap()])
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .unwrap(),
        )
    };
    let _servers = [spawn("serve-auth", &auth_cfg), spawn("serve-rs", &rs_cfg)];

    let mut script: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(asset("scenarios/remote_door_chain.json")).unwrap()).unwrap();
    script["remote"] = serde_json::json!({"auth": auth, "servers": {"rs": rs}});
    let script = write_json(dir.path(), "script.json", script);
    let mut last = None;
    for _ in 0..50 {
        let out = hcap(&["client", "--script", script.to_str().unwrap()]);
        if out.status.code() == Some(0) {
            return;
        }
        last = Some(out);
        sleep(Duration::from_millis(100));
    }
    let out = last.unwrap();
    panic!("{}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}
