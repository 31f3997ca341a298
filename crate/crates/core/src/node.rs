//! The sensor node: samples the chamber every cadence tick, frames readings
//! for the gateway and applies relay commands.
//!
//! The node only ever dials out. [`SensorNode`] holds the protocol state
//! and is driven either by [`run_loop`] over a real link or directly by tests.

use std::future::Future;
use std::io;
use std::sync::{Arc, Mutex};

use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;
use tokio_util::sync::CancellationToken;

use crate::clock::VirtualClock;
use crate::model::{round_tenth, ActuatorFlags, RelayCommand};
use crate::sim::Chamber;
use crate::wire::{parse_gateway_line, GatewayMessage, LineReader, NodeMessage, RawLine, SensorFrame, PROTOCOL_VERSION};

pub const DEFAULT_NODE_ID: &str = "node-1";
pub const DEFAULT_CADENCE_MS: u64 = 5_000;

const BACKOFF_INITIAL_MS: u64 = 1_000;
const BACKOFF_MAX_MS: u64 = 30_000;

/// Applies a relay command. Only the target's flag can change, and applying
/// the same command twice equals applying it once.
pub fn apply_command(cmd: &RelayCommand, flags: ActuatorFlags) -> ActuatorFlags {
    flags.with(cmd.target, cmd.action.is_on())
}

/// Protocol state of one node.
#[derive(Debug, Clone)]
pub struct SensorNode {
    node_id: String,
    cadence_ms: u64,
    next_seq: u64,
    flags: ActuatorFlags,
}

impl SensorNode {
    /// A node whose first tick is the first cadence boundary after
    /// `start_ms`. Tick `k` happens at `k · cadence_ms` and carries seq `k`,
    /// so sequence numbers stay unique across node restarts on one timeline.
    pub fn new(node_id: impl Into<String>, cadence_ms: u64, start_ms: u64) -> Self {
        assert!(cadence_ms > 0, "cadence must be positive");
        SensorNode {
            node_id: node_id.into(),
            cadence_ms,
            next_seq: start_ms / cadence_ms + 1,
            flags: ActuatorFlags::ALL_OFF,
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn cadence_ms(&self) -> u64 {
        self.cadence_ms
    }

    pub fn flags(&self) -> ActuatorFlags {
        self.flags
    }

    pub fn hello(&self) -> NodeMessage {
        NodeMessage::Hello {
            node_id: self.node_id.clone(),
            version: PROTOCOL_VERSION,
        }
    }

    pub fn next_tick_ms(&self) -> u64 {
        self.next_seq * self.cadence_ms
    }

    /// Takes the sample due at [`Self::next_tick_ms`]. The seq advances
    /// whether or not the frame reaches the gateway.
    pub fn tick(&mut self, chamber: &mut Chamber) -> SensorFrame {
        let at = self.next_tick_ms();
        let state = chamber.advance_to(at);
        let frame = SensorFrame {
            seq: self.next_seq,
            timestamp_ms: at,
            temp_c: round_tenth(state.temp_c),
            moisture_adc: state.moisture_adc(),
            lux: state.lux,
        };
        self.next_seq += 1;
        frame
    }

    /// Reacts to one line from the gateway received at virtual time `now_ms`.
    pub fn handle_line(&mut self, line: &str, chamber: &mut Chamber, now_ms: u64) -> Vec<NodeMessage> {
        match parse_gateway_line(line) {
            Ok(GatewayMessage::Cmd(cmd)) => {
                let mut out = vec![NodeMessage::Ack { cmd_id: cmd.cmd_id }];
                let next = apply_command(&cmd, self.flags);
                if next != self.flags {
                    self.flags = next;
                    chamber.set_flags(next, now_ms);
                    out.push(NodeMessage::State {
                        timestamp_ms: now_ms,
                        flags: next,
                    });
                }
                out
            }
            Ok(GatewayMessage::Ping) => vec![NodeMessage::Pong],
            Ok(GatewayMessage::Welcome { .. }) | Ok(GatewayMessage::Err { .. }) => Vec::new(),
            Err(e) => vec![NodeMessage::Err { reason: e.to_string() }],
        }
    }
}

/// Opens the node's single outbound link.
pub trait Connector: Send {
    type Stream: AsyncRead + AsyncWrite + Unpin + Send + 'static;

    fn connect(&mut self) -> impl Future<Output = io::Result<Self::Stream>> + Send;
}

#[derive(Debug, Clone)]
pub struct TcpConnector {
    pub addr: String,
}

impl Connector for TcpConnector {
    type Stream = TcpStream;

    async fn connect(&mut self) -> io::Result<TcpStream> {
        let stream = TcpStream::connect(&self.addr).await?;
        stream.set_nodelay(true)?;
        Ok(stream)
    }
}

/// Counters reported when [`run_loop`] stops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub commands_applied: u64,
    pub connects: u64,
}

type Reader<S> = LineReader<BufReader<tokio::io::ReadHalf<S>>>;

struct Link<S> {
    reader: Reader<S>,
    writer: tokio::io::WriteHalf<S>,
    welcomed: bool,
}

async fn send<W: AsyncWrite + Unpin>(writer: &mut W, msg: &NodeMessage) -> io::Result<()> {
    let mut line = msg.to_string();
    line.push('\n');
    writer.write_all(line.as_bytes()).await?;
    writer.flush().await
}

async fn next_line<S: AsyncRead + Unpin>(link: &mut Option<Link<S>>) -> io::Result<Option<RawLine>> {
    match link {
        Some(l) => l.reader.next_line().await,
        None => std::future::pending().await,
    }
}

/// Runs the node until `shutdown` fires: one SENSOR frame per cadence tick,
/// commands applied between ticks, reconnect with exponential backoff
/// (1 s doubling to 30 s, virtual time) after link loss. Frames due while the
/// link is down are dropped.
pub async fn run_loop<C: Connector>(
    node: &mut SensorNode,
    chamber: Arc<Mutex<Chamber>>,
    clock: VirtualClock,
    mut connector: C,
    shutdown: CancellationToken,
) -> NodeStats {
    let mut stats = NodeStats::default();
    let mut link: Option<Link<C::Stream>> = None;
    let mut backoff = BACKOFF_INITIAL_MS;
    let mut retry_at = clock.now_ms();

    loop {
        let tick_at = node.next_tick_ms();
        let down = link.is_none();
        tokio::select! {
            biased;
            _ = shutdown.cancelled() => break,
            _ = clock.sleep_until(tick_at) => {
                let frame = node.tick(&mut chamber.lock().unwrap());
                match link.as_mut() {
                    Some(l) if l.welcomed => {
                        if send(&mut l.writer, &NodeMessage::Sensor(frame)).await.is_ok() {
                            stats.frames_sent += 1;
                        } else {
                            stats.frames_dropped += 1;
                            link = None;
                            retry_at = clock.now_ms() + backoff;
                        }
                    }
                    _ => stats.frames_dropped += 1,
                }
            }
            _ = clock.sleep_until(retry_at), if down => {
                let scheduled = retry_at;
                let attempt = tokio::time::timeout(std::time::Duration::from_secs(2), connector.connect()).await;
                match attempt {
                    Ok(Ok(stream)) => {
                        let (r, mut w) = tokio::io::split(stream);
                        if send(&mut w, &node.hello()).await.is_ok() {
                            stats.connects += 1;
                            link = Some(Link { reader: LineReader::new(BufReader::new(r)), writer: w, welcomed: false });
                        } else {
                            retry_at = scheduled + backoff;
                            backoff = (backoff * 2).min(BACKOFF_MAX_MS);
                        }
                    }
                    _ => {
                        tracing::debug!(backoff_ms = backoff, "gateway unreachable");
                        retry_at = scheduled + backoff;
                        backoff = (backoff * 2).min(BACKOFF_MAX_MS);
                    }
                }
            }
            line = next_line(&mut link) => {
                let Some(l) = link.as_mut() else { continue };
                let text = match line {
                    Ok(Some(RawLine::Text(text))) => text,
                    Ok(Some(RawLine::TooLong)) => {
                        let _ = send(&mut l.writer, &NodeMessage::Err { reason: "line too long".into() }).await;
                        continue;
                    }
                    Ok(None) | Err(_) => {
                        tracing::info!("gateway link lost");
                        link = None;
                        retry_at = clock.now_ms() + backoff;
                        continue;
                    }
                };
                if !l.welcomed {
                    if let Ok(GatewayMessage::Welcome { session_id }) = parse_gateway_line(&text) {
                        tracing::info!(%session_id, "connected to gateway");
                        l.welcomed = true;
                        backoff = BACKOFF_INITIAL_MS;
                        continue;
                    }
                }
                let now = clock.now_ms();
                let is_cmd = text.starts_with("CMD ");
                let replies = node.handle_line(&text, &mut chamber.lock().unwrap(), now);
                if is_cmd && matches!(replies.first(), Some(NodeMessage::Ack { .. })) {
                    stats.commands_applied += 1;
                }
                for reply in &replies {
                    if send(&mut l.writer, reply).await.is_err() {
                        link = None;
                        retry_at = clock.now_ms() + backoff;
                        break;
                    }
                }
            }
        }
    }
    stats
}
