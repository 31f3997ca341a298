#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use microfarm::clock::VirtualClock;
use microfarm::config::Config;
use microfarm::stack::{start_gateway, GatewayHandle};
use microfarm::store::Store;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio_util::sync::CancellationToken;

pub fn config(dir: &Path, extra: &str) -> Config {
    let text = format!(
        "store.dir = {}\nnet.node_listen = 127.0.0.1:0\nnet.api_listen = 127.0.0.1:0\n{extra}",
        dir.display()
    );
    Config::parse(&text).expect("test config")
}

pub struct TestGateway {
    pub handle: GatewayHandle,
    pub shutdown: CancellationToken,
    pub base: String,
}

impl TestGateway {
    pub async fn start(dir: &Path, time_scale: f64, extra: &str) -> TestGateway {
        let cfg = config(dir, extra);
        let store = Arc::new(Store::open(&cfg.store.dir, cfg.store.mem_window_h).unwrap());
        let clock = VirtualClock::new(0, time_scale);
        let shutdown = CancellationToken::new();
        let handle = start_gateway(&cfg, store, clock, shutdown.clone()).await.unwrap();
        let base = format!("http://{}", handle.addrs.api);
        TestGateway { handle, shutdown, base }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn connect(&self) -> FakeNode {
        FakeNode::connect(&self.handle.addrs.node.to_string()).await
    }

    pub async fn stop(self) {
        self.shutdown.cancel();
        let _ = tokio::time::timeout(Duration::from_secs(5), self.handle.task).await;
    }
}

/// A scripted node speaking the line protocol by hand.
pub struct FakeNode {
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
}

impl FakeNode {
    pub async fn connect(addr: &str) -> FakeNode {
        let stream = TcpStream::connect(addr).await.unwrap();
        let (r, w) = stream.into_split();
        FakeNode {
            reader: BufReader::new(r),
            writer: w,
        }
    }

    pub async fn send(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).await.unwrap();
        self.writer.write_all(b"\n").await.unwrap();
        self.writer.flush().await.unwrap();
    }

    /// Next line, `None` on close or after two seconds of silence.
    pub async fn recv(&mut self) -> Option<String> {
        let mut line = String::new();
        match tokio::time::timeout(Duration::from_secs(2), self.reader.read_line(&mut line)).await {
            Ok(Ok(0)) | Ok(Err(_)) | Err(_) => None,
            Ok(Ok(_)) => Some(line.trim_end().to_string()),
        }
    }

    /// Next line that is not a `CMD` or `PING`.
    pub async fn recv_reply(&mut self) -> Option<String> {
        loop {
            let line = self.recv().await?;
            if !line.starts_with("CMD ") && line != "PING" {
                return Some(line);
            }
        }
    }

    /// Sends HELLO, returns the session id and drains the three resync CMDs.
    pub async fn hello(&mut self, node_id: &str) -> String {
        self.send(&format!("HELLO {node_id} 1")).await;
        let welcome = self.recv().await.expect("WELCOME");
        let session = welcome.strip_prefix("WELCOME ").expect("WELCOME line").to_string();
        for _ in 0..3 {
            let cmd = self.recv().await.expect("resync CMD");
            assert!(cmd.starts_with("CMD "), "{cmd}");
            let id = cmd.split(' ').nth(1).unwrap().to_string();
            self.send(&format!("ACK {id}")).await;
        }
        session
    }
}

/// Polls `f` until it returns true or `limit` elapses.
pub async fn eventually<F: FnMut() -> bool>(limit: Duration, mut f: F) -> bool {
    let end = tokio::time::Instant::now() + limit;
    while tokio::time::Instant::now() < end {
        if f() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    f()
}
