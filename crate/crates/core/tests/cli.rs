mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use common::*;

fn yamlsmith() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_yamlsmith"));
    cmd.env_remove("YAMLSMITH_CONFIG").env_remove("YAMLSMITH_ENDPOINT");
    cmd
}

fn run(args: &[&str]) -> Output {
    yamlsmith().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn generate_replays_tir2_and_reports_the_syntax_error() {
    let dir = tempfile::tempdir().unwrap();
    let prompt = write(dir.path(), "prompt.txt", &entry("annexe4.tir2").prompt);
    let out = dir.path().join("play.yml");
    let fixtures = fixture_path().display().to_string();
    let o = run(&[
        "generate", "--prompt-file", &prompt, "--profile", "llama2_chat", "--model", "llama-2-13b-chat",
        "--replay", &fixtures, "--attempt", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let playbook = std::fs::read_to_string(&out).unwrap();
    assert!(playbook.contains("- name: Role: anssi_linux"));
    let err = stderr(&o);
    assert!(err.contains(":2:13: error YAML_SYNTAX"), "{err}");
    assert!(err.contains("warning: block 1 repeats prompt example"), "{err}");
}

#[test]
fn generate_without_attempt_replays_the_first_tir() {
    let dir = tempfile::tempdir().unwrap();
    let prompt = write(dir.path(), "prompt.txt", &entry("annexe4.tir1").prompt);
    let fixtures = fixture_path().display().to_string();
    let o = run(&["generate", "--prompt-file", &prompt, "--model", "llama-2-13b-chat", "--replay", &fixtures]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).starts_with("---\n- name: Configure unsecure packages"));
    assert!(stderr(&o).contains("INVALID_CHOICE"));
}

#[test]
fn generate_needs_a_description() {
    assert_eq!(run(&["generate", "   "]).status.code(), Some(64));
    assert_eq!(run(&["generate"]).status.code(), Some(64));
}

#[test]
fn generate_stops_on_budget_overflow() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "config.yml",
        "profiles:\n  - name: tiny\n    template_kind: alpaca\n    context_window: 512\n    default_reserve_output: 256\n",
    );
    let prompt = write(dir.path(), "prompt.txt", &entry("annexe3.tir2").prompt);
    let o = yamlsmith()
        .env("YAMLSMITH_CONFIG", &config)
        .args(["generate", "--prompt-file", &prompt, "--profile", "tiny", "--endpoint", "http://127.0.0.1:9"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("window is 512"), "{}", stdout(&o));

    let o = run(&["generate", "Install nginx.", "--reserve", "5000", "--format", "json"]);
    assert_eq!(o.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["fits"], false);
}

#[test]
fn generate_talks_to_the_endpoint_from_the_environment() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let server = thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut length = 0;
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let reply = serde_json::json!({
            "content": "Here you go:\n```yaml\n- name: Install nginx\n  ansible.builtin.package:\n    name: nginx\n    state: present\n```\n",
            "stopped_eos": true,
        })
        .to_string();
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{reply}", reply.len()).unwrap();
        (request_line, String::from_utf8(body).unwrap())
    });
    let o = yamlsmith().env("YAMLSMITH_ENDPOINT", &endpoint).args(["generate", "Install nginx."]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "- name: Install nginx\n  ansible.builtin.package:\n    name: nginx\n    state: present\n");
    let (line, body) = server.join().unwrap();
    assert!(line.starts_with("POST /completion "));
    let body: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert!(body["prompt"].as_str().unwrap().starts_with("[INST]"));
}

#[test]
fn generate_reports_an_unreachable_backend() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let o = run(&["generate", "Install nginx.", "--endpoint", &format!("http://127.0.0.1:{port}")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn lint_flags_the_restart_choice() {
    let dir = tempfile::tempdir().unwrap();
    let block = block_containing("annexe5.tir1", "Restart auditd");
    let path = write(dir.path(), "restart.yml", &block.content);
    let o = run(&["lint", &path]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert_eq!(text.matches("INVALID_CHOICE").count(), 1, "{text}");
    assert!(text.contains("restart"));

    let json = run(&["lint", &path, "--format", "json"]);
    let report: serde_json::Value = serde_json::from_str(stdout(&json).trim()).unwrap();
    assert_eq!(report["findings"][0]["code"], "INVALID_CHOICE");
}

#[test]
fn lint_accepts_a_clean_playbook_and_rejects_a_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "site.yml",
        "- hosts: all\n  tasks:\n    - name: sshd runs\n      ansible.builtin.service:\n        name: sshd\n        state: started\n",
    );
    assert_eq!(run(&["lint", &path]).status.code(), Some(0));
    assert_eq!(run(&["lint", dir.path().join("nope.yml").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn lint_uses_an_extra_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "t.yml", "- acme.tools.frob:\n    level: 3\n");
    assert_eq!(run(&["lint", &path]).status.code(), Some(2));
    let catalog = write(
        dir.path(),
        "extra.yml",
        "catalog_version: \"x\"\nmodules:\n  - fqcn: acme.tools.frob\n    params:\n      - name: level\n        value_kind: integer\n",
    );
    let o = run(&["lint", &path, "--catalog", &catalog]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn eval_scores_the_bundled_corpus() {
    let o = run(&["eval"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for id in ["annexe1.tir1", "annexe2.tir1", "annexe3.tir1", "annexe3.tir2", "annexe4.tir1", "annexe4.tir2", "annexe4.tir3", "annexe5.tir1"] {
        assert!(text.contains(id), "{id} missing from\n{text}");
    }
    assert!(text.contains("catalog 2024.1"));
}

#[test]
fn eval_json_is_the_same_serial_or_parallel() {
    let fixtures = fixture_path().display().to_string();
    let parallel = run(&["eval", &fixtures, "--format", "json"]);
    let serial = run(&["eval", &fixtures, "--format", "json", "--serial"]);
    assert_eq!(parallel.status.code(), Some(0));
    assert_eq!(parallel.stdout, serial.stdout);
    let table: serde_json::Value = serde_json::from_slice(&parallel.stdout).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 8);
}

#[test]
fn eval_order_assertions() {
    assert_eq!(run(&["eval", "--assert-order", "annexe1<annexe4.tir2"]).status.code(), Some(0));
    let o = run(&["eval", "--assert-order", "annexe4.tir2<annexe1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).is_empty());
    assert_eq!(run(&["eval", "--assert-order", "annexe9<annexe1"]).status.code(), Some(64));
}

#[test]
fn eval_rejects_an_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "empty.jsonl", "");
    assert_eq!(run(&["eval", &path]).status.code(), Some(1));
}

#[test]
fn quant_bench_orders_bit_widths() {
    let o = run(&["quant-bench", "--size", "64", "--seed", "7", "--bits", "4,8", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let per_bits = report["per_bits"].as_array().unwrap();
    let err = |bits: u64| per_bits.iter().find(|e| e["bits"] == bits).unwrap()["rel_frobenius"].as_f64().unwrap();
    assert!(err(8) < err(4));

    let text = stdout(&run(&["quant-bench", "--size", "64", "--seed", "7"]));
    assert!(text.starts_with("quantization error (dynamic mode, 64x64)"), "{text}");
}

#[test]
fn quant_bench_arguments() {
    assert_eq!(run(&["quant-bench", "--bits", "16"]).status.code(), Some(64));
    assert_eq!(run(&["quant-bench", "--size", "0"]).status.code(), Some(64));
    let o = run(&["quant-bench", "--size", "1", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    for e in report["per_bits"].as_array().unwrap() {
        assert_eq!(e["max_abs"], 0.0);
    }
    assert_eq!(run(&["quant-bench", "--range=-2,2", "--size", "8"]).status.code(), Some(0));
}

#[test]
fn config_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.yml", "no_such_setting: 1\n");
    let o = yamlsmith().env("YAMLSMITH_CONFIG", &bad).arg("eval").output().unwrap();
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("invalid config"));

    let weights = write(dir.path(), "w.yml", "composite_weights: [1.0, 0.0, 0.0, 0.0]\n");
    let o = yamlsmith().env("YAMLSMITH_CONFIG", &weights).args(["eval", "--format", "json"]).output().unwrap();
    let table: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let a32 = table["rows"].as_array().unwrap().iter().find(|r| r["fixture"] == "annexe3.tir2").unwrap();
    assert_eq!(a32["card"]["composite"], 1.0);
}
