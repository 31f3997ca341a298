#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::time::Duration;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_microfarm"));
    c.env("RUST_LOG", "info");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn microfarm")
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn heights_csv() -> PathBuf {
    workspace_root().join("data/mustard_heights.csv")
}

pub fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("microfarm.conf");
    let text = format!(
        "store.dir = {}\nnet.node_listen = 127.0.0.1:0\nnet.api_listen = 127.0.0.1:0\n{extra}",
        dir.join("data").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// A background `microfarm` process with its listening addresses.
pub struct Running {
    pub child: Child,
    pub node_addr: String,
    pub api_addr: String,
    pub stderr: mpsc::Receiver<String>,
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let start = line.find(&format!("{key}="))? + key.len() + 1;
    line[start..].split_whitespace().next()
}

/// Starts `microfarm <args>` and waits for its startup line.
pub fn spawn(args: &[&str]) -> Running {
    let mut child = bin()
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn microfarm");
    let stderr = child.stderr.take().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stderr).lines().map_while(Result::ok) {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    loop {
        let line = rx.recv_timeout(Duration::from_secs(20)).expect("startup line");
        if line.contains("running") {
            let node_addr = field(&line, "node").unwrap_or_default().to_string();
            let api_addr = field(&line, "api").unwrap_or_default().to_string();
            return Running {
                child,
                node_addr,
                api_addr,
                stderr: rx,
            };
        }
    }
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.api_addr, path)
    }

    pub fn terminate(&mut self) -> std::process::ExitStatus {
        let status = Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .unwrap();
        assert!(status.success());
        self.wait(Duration::from_secs(20))
    }

    pub fn wait(&mut self, limit: Duration) -> std::process::ExitStatus {
        let end = std::time::Instant::now() + limit;
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                return status;
            }
            assert!(std::time::Instant::now() < end, "process did not exit");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Readings CSV text for a synthetic stream, one row per 5 s from `ts0`.
pub fn readings_csv(rows: &[(f64, u16, u32)], ts0: u64) -> String {
    let mut s = String::from("ts_ms,node_id,seq,temp_c,moisture_adc,lux\n");
    for (i, (t, m, l)) in rows.iter().enumerate() {
        let ts = ts0 + 5000 * (i as u64 + 1);
        s.push_str(&format!("{ts},node-1,{},{t:.1},{m},{l}\n", ts / 5000));
    }
    s
}

pub fn blocking_json(url: &str) -> serde_json::Value {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async { reqwest::get(url).await.unwrap().json().await.unwrap() })
}
