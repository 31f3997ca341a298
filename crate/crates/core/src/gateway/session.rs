//! Per-connection node session handling.

use std::collections::HashSet;
use std::sync::Arc;

use tokio::io::{AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio_util::sync::CancellationToken;

use super::{Gateway, Ingest};
use crate::model::SensorReading;
use crate::wire::{parse_node_line, GatewayMessage, LineReader, NodeMessage, ProtocolError, RawLine, PROTOCOL_VERSION};

/// What one inbound line amounts to.
#[derive(Debug, Clone, PartialEq)]
pub enum LineOutcome {
    /// A valid message for the gateway to act on.
    Message(NodeMessage),
    /// A `SENSOR` frame with `seq` at or below the last one seen; dropped.
    Duplicate { seq: u64 },
    /// Answered with `ERR <reason>`; `close` ends the session.
    Error { reason: String, close: bool },
    /// A node `ERR` line. Never answered.
    Ignored,
}

/// Protocol state of one node connection.
#[derive(Debug, Clone, Default)]
pub struct NodeSession {
    pub session_id: String,
    pub node_id: Option<String>,
    pub connected_at_ms: u64,
    pub last_seq: Option<u64>,
    pub pending_acks: HashSet<u64>,
}

impl NodeSession {
    pub fn new(connected_at_ms: u64) -> Self {
        NodeSession {
            connected_at_ms,
            ..NodeSession::default()
        }
    }

    pub fn is_open(&self) -> bool {
        self.node_id.is_some()
    }

    /// Classifies one `\n`-stripped line and updates the session state.
    pub fn handle_line(&mut self, line: &str) -> LineOutcome {
        let msg = match parse_node_line(line) {
            Ok(msg) => msg,
            Err(e) => {
                let close = !self.is_open() && ProtocolError::is_fatal_hello(line);
                return LineOutcome::Error {
                    reason: e.to_string(),
                    close,
                };
            }
        };
        match msg {
            NodeMessage::Err { .. } => LineOutcome::Ignored,
            NodeMessage::Hello { node_id, version } => {
                if self.is_open() {
                    return LineOutcome::Error {
                        reason: "unexpected HELLO".into(),
                        close: false,
                    };
                }
                if version != PROTOCOL_VERSION {
                    return LineOutcome::Error {
                        reason: format!("unsupported version {version}"),
                        close: true,
                    };
                }
                self.node_id = Some(node_id.clone());
                LineOutcome::Message(NodeMessage::Hello { node_id, version })
            }
            _ if !self.is_open() => LineOutcome::Error {
                reason: "expected HELLO".into(),
                close: false,
            },
            NodeMessage::Sensor(frame) => {
                if self.last_seq.is_some_and(|last| frame.seq <= last) {
                    return LineOutcome::Duplicate { seq: frame.seq };
                }
                self.last_seq = Some(frame.seq);
                LineOutcome::Message(NodeMessage::Sensor(frame))
            }
            NodeMessage::Ack { cmd_id } => {
                self.pending_acks.remove(&cmd_id);
                LineOutcome::Message(NodeMessage::Ack { cmd_id })
            }
            other => LineOutcome::Message(other),
        }
    }

    /// The reading carried by a `SENSOR` frame.
    pub fn reading(&self, frame: &crate::wire::SensorFrame) -> Option<SensorReading> {
        Some(SensorReading {
            node_id: self.node_id.clone()?,
            seq: frame.seq,
            timestamp_ms: frame.timestamp_ms,
            temp_c: frame.temp_c,
            moisture_adc: frame.moisture_adc,
            lux: frame.lux,
        })
    }
}

async fn write_msg<W: AsyncWrite + Unpin>(w: &mut W, msg: &GatewayMessage) -> std::io::Result<()> {
    let mut line = msg.to_string();
    line.push('\n');
    w.write_all(line.as_bytes()).await?;
    w.flush().await
}

/// Accepts node connections until `shutdown` fires.
pub async fn accept_loop(gateway: Arc<Gateway>, listener: TcpListener, shutdown: CancellationToken) {
    let mut tasks = tokio::task::JoinSet::new();
    loop {
        tokio::select! {
            _ = shutdown.cancelled() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    tracing::debug!(%peer, "node connection");
                    let _ = stream.set_nodelay(true);
                    tasks.spawn(handle_connection(gateway.clone(), stream, shutdown.clone()));
                }
                Err(e) => tracing::warn!(error = %e, "accept failed"),
            },
            Some(_) = tasks.join_next(), if !tasks.is_empty() => {}
        }
    }
    while tasks.join_next().await.is_some() {}
}

/// Runs one node connection to completion.
pub async fn handle_connection(gateway: Arc<Gateway>, stream: TcpStream, shutdown: CancellationToken) {
    let (r, mut w) = stream.into_split();
    let mut reader = LineReader::new(BufReader::new(r));
    let clock = gateway.clock().clone();
    let cadence = gateway.cadence_ms();
    let mut session = NodeSession::new(clock.now_ms());
    let mut outbound: Option<tokio::sync::mpsc::UnboundedReceiver<crate::model::RelayCommand>> = None;
    let mut replaced = CancellationToken::new();
    let mut last_heard = clock.now_ms();
    let mut pinged = false;

    loop {
        let ping_at = last_heard + 2 * cadence;
        let close_at = last_heard + 6 * cadence;
        let heartbeat_at = if pinged { close_at } else { ping_at };
        tokio::select! {
            biased;
            _ = shutdown.cancelled() => break,
            _ = replaced.cancelled() => {
                tracing::info!(session = %session.session_id, "superseded by a newer session");
                break;
            }
            Some(cmd) = async {
                match outbound.as_mut() {
                    Some(rx) => rx.recv().await,
                    None => std::future::pending().await,
                }
            } => {
                session.pending_acks.insert(cmd.cmd_id);
                let msg = GatewayMessage::Cmd(cmd);
                if write_msg(&mut w, &msg).await.is_err() {
                    break;
                }
            }
            _ = clock.sleep_until(heartbeat_at), if session.is_open() => {
                if pinged {
                    tracing::info!(session = %session.session_id, "node silent, closing");
                    break;
                }
                pinged = true;
                if write_msg(&mut w, &GatewayMessage::Ping).await.is_err() {
                    break;
                }
            }
            line = reader.next_line() => {
                let text = match line {
                    Ok(Some(RawLine::Text(t))) => t,
                    Ok(Some(RawLine::TooLong)) => {
                        let err = GatewayMessage::Err { reason: ProtocolError::TooLong.to_string() };
                        if write_msg(&mut w, &err).await.is_err() {
                            break;
                        }
                        continue;
                    }
                    Ok(None) | Err(_) => break,
                };
                last_heard = clock.now_ms();
                pinged = false;
                match session.handle_line(&text) {
                    LineOutcome::Ignored => {}
                    LineOutcome::Duplicate { seq } => tracing::debug!(seq, "duplicate frame dropped"),
                    LineOutcome::Error { reason, close } => {
                        let sent = write_msg(&mut w, &GatewayMessage::Err { reason }).await;
                        if close || sent.is_err() {
                            break;
                        }
                    }
                    LineOutcome::Message(NodeMessage::Hello { node_id, .. }) => {
                        let (session_id, rx, token) = gateway.register_session(&node_id);
                        tracing::info!(%node_id, %session_id, "node session opened");
                        session.session_id = session_id.clone();
                        outbound = Some(rx);
                        replaced = token;
                        if write_msg(&mut w, &GatewayMessage::Welcome { session_id }).await.is_err() {
                            break;
                        }
                        gateway.resync_node();
                    }
                    LineOutcome::Message(NodeMessage::Sensor(frame)) => {
                        let Some(reading) = session.reading(&frame) else { continue };
                        if let Err(reason) = reading.check_ranges() {
                            if write_msg(&mut w, &GatewayMessage::Err { reason }).await.is_err() {
                                break;
                            }
                            continue;
                        }
                        if gateway.ingest(reading) == Ingest::Duplicate {
                            tracing::debug!(seq = frame.seq, "duplicate reading dropped");
                        }
                    }
                    LineOutcome::Message(NodeMessage::Ack { cmd_id }) => {
                        gateway.ack(cmd_id);
                    }
                    LineOutcome::Message(NodeMessage::State { flags, .. }) => {
                        let commanded = gateway.flags();
                        if flags != commanded {
                            tracing::debug!(?flags, ?commanded, "node relay state differs from commanded");
                        }
                    }
                    LineOutcome::Message(_) => {}
                }
            }
        }
    }
    if let Some(node_id) = &session.node_id {
        gateway.unregister_session(node_id, &session.session_id);
        tracing::info!(%node_id, session = %session.session_id, "node session closed");
    }
}
