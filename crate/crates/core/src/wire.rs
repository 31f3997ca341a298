//! Node ↔ gateway line protocol.
//!
//! One ASCII message per `\n`-terminated line. Node to gateway:
//!
//! ```text
//! HELLO <node_id> 1
//! SENSOR <seq> <timestamp_ms> T=<temp_c:%.1f> M=<moisture_adc> L=<lux>
//! ACK <cmd_id>
//! STATE <timestamp_ms> PUMP=<0|1> COOLER=<0|1> LIGHT=<0|1>
//! PONG
//! ```
//!
//! Gateway to node:
//!
//! ```text
//! WELCOME <session_id>
//! CMD <cmd_id> <PUMP|COOLER|LIGHT> <ON|OFF>
//! PING
//! ```
//!
//! Either side answers an unparseable line with `ERR <reason>`. `ERR` lines
//! are themselves never answered.

use std::fmt;

use tokio::io::{AsyncBufRead, AsyncBufReadExt};

use crate::model::{
    round_tenth, Action, Actuator, ActuatorFlags, RelayCommand, LUX_MAX, LUX_MIN, MOISTURE_MAX_ADC, TEMP_MAX_C,
    TEMP_MIN_C,
};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_LINE_LEN: usize = 512;

/// Payload of a `SENSOR` line. The node id comes from the session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub temp_c: f64,
    pub moisture_adc: u16,
    pub lux: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeMessage {
    Hello { node_id: String, version: u32 },
    Sensor(SensorFrame),
    Ack { cmd_id: u64 },
    State { timestamp_ms: u64, flags: ActuatorFlags },
    Pong,
    Err { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GatewayMessage {
    Welcome { session_id: String },
    Cmd(RelayCommand),
    Ping,
    Err { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("empty line")]
    Empty,
    #[error("non-ascii byte in line")]
    NonAscii,
    #[error("line longer than {MAX_LINE_LEN} bytes")]
    TooLong,
    #[error("unknown message {0}")]
    UnknownMessage(String),
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("bad field {field}: {token}")]
    BadField { field: &'static str, token: String },
    #[error("unexpected token {0}")]
    TrailingToken(String),
}

impl ProtocolError {
    /// Whether this error on a `HELLO` line must close the connection.
    pub fn is_fatal_hello(line: &str) -> bool {
        line.split_ascii_whitespace().next() == Some("HELLO")
    }
}

fn bit(on: bool) -> u8 {
    u8::from(on)
}

impl fmt::Display for NodeMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeMessage::Hello { node_id, version } => write!(f, "HELLO {node_id} {version}"),
            NodeMessage::Sensor(s) => write!(
                f,
                "SENSOR {} {} T={:.1} M={} L={}",
                s.seq, s.timestamp_ms, s.temp_c, s.moisture_adc, s.lux
            ),
            NodeMessage::Ack { cmd_id } => write!(f, "ACK {cmd_id}"),
            NodeMessage::State { timestamp_ms, flags } => write!(
                f,
                "STATE {timestamp_ms} PUMP={} COOLER={} LIGHT={}",
                bit(flags.pump),
                bit(flags.cooler),
                bit(flags.light)
            ),
            NodeMessage::Pong => f.write_str("PONG"),
            NodeMessage::Err { reason } => write!(f, "ERR {reason}"),
        }
    }
}

impl fmt::Display for GatewayMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GatewayMessage::Welcome { session_id } => write!(f, "WELCOME {session_id}"),
            GatewayMessage::Cmd(c) => write!(f, "CMD {} {} {}", c.cmd_id, c.target, c.action),
            GatewayMessage::Ping => f.write_str("PING"),
            GatewayMessage::Err { reason } => write!(f, "ERR {reason}"),
        }
    }
}

/// Token cursor over one line.
struct Tokens<'a> {
    inner: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn new(line: &'a str) -> Self {
        Tokens {
            inner: line.split_ascii_whitespace(),
        }
    }

    fn next(&mut self, field: &'static str) -> Result<&'a str, ProtocolError> {
        self.inner.next().ok_or(ProtocolError::MissingField(field))
    }

    fn number<T: std::str::FromStr>(&mut self, field: &'static str) -> Result<T, ProtocolError> {
        let token = self.next(field)?;
        parse_number(field, token)
    }

    /// A `KEY=value` token whose key must be `field`.
    fn keyed(&mut self, field: &'static str) -> Result<&'a str, ProtocolError> {
        let token = self.next(field)?;
        match token.split_once('=') {
            Some((key, value)) if key == field => Ok(value),
            _ => Err(ProtocolError::BadField {
                field,
                token: token.to_string(),
            }),
        }
    }

    fn finish(mut self) -> Result<(), ProtocolError> {
        match self.inner.next() {
            None => Ok(()),
            Some(extra) => Err(ProtocolError::TrailingToken(extra.to_string())),
        }
    }
}

fn parse_number<T: std::str::FromStr>(field: &'static str, token: &str) -> Result<T, ProtocolError> {
    // Rust's integer parsers accept a leading '+'; the wire format does not.
    if !token.starts_with(|c: char| c.is_ascii_digit()) {
        return Err(ProtocolError::BadField {
            field,
            token: token.to_string(),
        });
    }
    token.parse().map_err(|_| ProtocolError::BadField {
        field,
        token: token.to_string(),
    })
}

fn parse_flag(field: &'static str, token: &str) -> Result<bool, ProtocolError> {
    match token {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(ProtocolError::BadField {
            field,
            token: token.to_string(),
        }),
    }
}

fn check_line(line: &str) -> Result<(), ProtocolError> {
    if line.len() > MAX_LINE_LEN {
        return Err(ProtocolError::TooLong);
    }
    if !line.is_ascii() {
        return Err(ProtocolError::NonAscii);
    }
    if line.trim().is_empty() {
        return Err(ProtocolError::Empty);
    }
    Ok(())
}

fn valid_node_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_graphic())
}

fn parse_sensor(tokens: &mut Tokens<'_>) -> Result<SensorFrame, ProtocolError> {
    let seq = tokens.number("seq")?;
    let timestamp_ms = tokens.number("timestamp_ms")?;
    let t = tokens.keyed("T")?;
    let temp_c: f64 = parse_number("T", t)?;
    if !(TEMP_MIN_C..=TEMP_MAX_C).contains(&temp_c) {
        return Err(ProtocolError::BadField {
            field: "T",
            token: t.to_string(),
        });
    }
    let m = tokens.keyed("M")?;
    let moisture_adc: u16 = parse_number("M", m)?;
    if moisture_adc > MOISTURE_MAX_ADC {
        return Err(ProtocolError::BadField {
            field: "M",
            token: m.to_string(),
        });
    }
    let l = tokens.keyed("L")?;
    let lux: u32 = parse_number("L", l)?;
    if !(LUX_MIN..=LUX_MAX).contains(&lux) {
        return Err(ProtocolError::BadField {
            field: "L",
            token: l.to_string(),
        });
    }
    Ok(SensorFrame {
        seq,
        timestamp_ms,
        temp_c: round_tenth(temp_c),
        moisture_adc,
        lux,
    })
}

/// Parses one node → gateway line (without its `\n`).
pub fn parse_node_line(line: &str) -> Result<NodeMessage, ProtocolError> {
    check_line(line)?;
    let mut tokens = Tokens::new(line);
    let kind = tokens.next("message")?;
    let msg = match kind {
        "HELLO" => {
            let node_id = tokens.next("node_id")?;
            if !valid_node_id(node_id) {
                return Err(ProtocolError::BadField {
                    field: "node_id",
                    token: node_id.to_string(),
                });
            }
            let version: u32 = tokens.number("version")?;
            if version != PROTOCOL_VERSION {
                return Err(ProtocolError::BadField {
                    field: "version",
                    token: version.to_string(),
                });
            }
            NodeMessage::Hello {
                node_id: node_id.to_string(),
                version,
            }
        }
        "SENSOR" => NodeMessage::Sensor(parse_sensor(&mut tokens)?),
        "ACK" => NodeMessage::Ack {
            cmd_id: tokens.number("cmd_id")?,
        },
        "STATE" => {
            let timestamp_ms = tokens.number("timestamp_ms")?;
            let pump = parse_flag("PUMP", tokens.keyed("PUMP")?)?;
            let cooler = parse_flag("COOLER", tokens.keyed("COOLER")?)?;
            let light = parse_flag("LIGHT", tokens.keyed("LIGHT")?)?;
            NodeMessage::State {
                timestamp_ms,
                flags: ActuatorFlags { pump, cooler, light },
            }
        }
        "PONG" => NodeMessage::Pong,
        "ERR" => {
            let reason = line.trim_start()[3..].trim().to_string();
            return Ok(NodeMessage::Err { reason });
        }
        other => return Err(ProtocolError::UnknownMessage(other.to_string())),
    };
    tokens.finish()?;
    Ok(msg)
}

/// Parses one gateway → node line (without its `\n`).
pub fn parse_gateway_line(line: &str) -> Result<GatewayMessage, ProtocolError> {
    check_line(line)?;
    let mut tokens = Tokens::new(line);
    let kind = tokens.next("message")?;
    let msg = match kind {
        "WELCOME" => GatewayMessage::Welcome {
            session_id: tokens.next("session_id")?.to_string(),
        },
        "CMD" => {
            let cmd_id = tokens.number("cmd_id")?;
            let t = tokens.next("target")?;
            let target: Actuator = t.parse().map_err(|_| ProtocolError::BadField {
                field: "target",
                token: t.to_string(),
            })?;
            let a = tokens.next("action")?;
            let action: Action = a.parse().map_err(|_| ProtocolError::BadField {
                field: "action",
                token: a.to_string(),
            })?;
            GatewayMessage::Cmd(RelayCommand { cmd_id, target, action })
        }
        "PING" => GatewayMessage::Ping,
        "ERR" => {
            let reason = line.trim_start()[3..].trim().to_string();
            return Ok(GatewayMessage::Err { reason });
        }
        other => return Err(ProtocolError::UnknownMessage(other.to_string())),
    };
    tokens.finish()?;
    Ok(msg)
}

/// A line read off the link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawLine {
    Text(String),
    /// The line exceeded [`MAX_LINE_LEN`] and was discarded.
    TooLong,
}

/// Bounded line reader. Cancel-safe: partial lines survive a dropped
/// `next_line` future.
#[derive(Debug)]
pub struct LineReader<R> {
    inner: R,
    buf: Vec<u8>,
    overflow: bool,
}

impl<R: AsyncBufRead + Unpin> LineReader<R> {
    pub fn new(inner: R) -> Self {
        LineReader {
            inner,
            buf: Vec::with_capacity(128),
            overflow: false,
        }
    }

    /// Next line without its terminator, `None` at end of stream. A final
    /// unterminated fragment is dropped.
    pub async fn next_line(&mut self) -> std::io::Result<Option<RawLine>> {
        loop {
            let available = self.inner.fill_buf().await?;
            if available.is_empty() {
                return Ok(None);
            }
            let (chunk, found) = match available.iter().position(|&b| b == b'\n') {
                Some(i) => (&available[..i], Some(i + 1)),
                None => (available, None),
            };
            if !self.overflow {
                if self.buf.len() + chunk.len() > MAX_LINE_LEN {
                    self.overflow = true;
                    self.buf.clear();
                } else {
                    self.buf.extend_from_slice(chunk);
                }
            }
            let consumed = found.unwrap_or(available.len());
            self.inner.consume(consumed);
            if found.is_some() {
                if std::mem::take(&mut self.overflow) {
                    return Ok(Some(RawLine::TooLong));
                }
                let mut bytes = std::mem::take(&mut self.buf);
                if bytes.last() == Some(&b'\r') {
                    bytes.pop();
                }
                let text = String::from_utf8(bytes)
                    .unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned());
                return Ok(Some(RawLine::Text(text)));
            }
        }
    }
}
