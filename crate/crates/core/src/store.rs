//! Append-only CSV persistence with in-memory windowed queries.
//!
//! Four files live under the data directory:
//!
//! | file          | header                                              |
//! |---------------|-----------------------------------------------------|
//! | `readings.csv`| `ts_ms,node_id,seq,temp_c,moisture_adc,lux`          |
//! | `events.csv`  | `ts_ms,actuator,action,source,cause_seq,cause_value` |
//! | `modes.csv`   | `ts_ms,mode,changed_by`                              |
//! | `visits.csv`  | `user,ts_ms,temp_c,moisture_adc,lux`                 |
//!
//! Every append is written to its file with a single `write` before the call
//! returns, so a killed process never loses an acknowledged row. A trailing
//! partial line left by a crash is cut off when the store is reopened.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::model::{round_tenth, ActuationEvent, Actuator, ControlMode, Mode, Param, SensorReading};

pub const READINGS_FILE: &str = "readings.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const MODES_FILE: &str = "modes.csv";
pub const VISITS_FILE: &str = "visits.csv";

pub const READINGS_HEADER: &str = "ts_ms,node_id,seq,temp_c,moisture_adc,lux";
pub const EVENTS_HEADER: &str = "ts_ms,actuator,action,source,cause_seq,cause_value";
pub const MODES_HEADER: &str = "ts_ms,mode,changed_by";
pub const VISITS_HEADER: &str = "user,ts_ms,temp_c,moisture_adc,lux";

pub const DEFAULT_MEM_WINDOW_H: u64 = 48;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: expected header {expected:?}")]
    Header { path: PathBuf, expected: &'static str },
}

#[derive(Debug, thiserror::Error)]
pub enum AppendError {
    #[error("duplicate reading ({node_id}, {seq})")]
    Duplicate { node_id: String, seq: u64 },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("window_s must be > 0")]
    EmptyWindow,
}

/// One point of a channel series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub ts_ms: u64,
    pub value: f64,
}

/// Channel values captured with a visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitSnapshot {
    pub temp_c: f64,
    pub moisture_adc: u16,
    pub lux: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub user: String,
    pub ts_ms: u64,
    pub snapshot: VisitSnapshot,
}

fn csv_line(fields: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn format_reading(r: &SensorReading) -> String {
    csv_line(&[
        &r.timestamp_ms.to_string(),
        &r.node_id,
        &r.seq.to_string(),
        &format!("{:.1}", r.temp_c),
        &r.moisture_adc.to_string(),
        &r.lux.to_string(),
    ])
}

pub fn format_event(e: &ActuationEvent) -> String {
    let cause_seq = e.cause_reading_seq.map(|s| s.to_string()).unwrap_or_default();
    let cause_value = e
        .cause_param_value
        .map(|v| e.actuator.param().format_value(v))
        .unwrap_or_default();
    csv_line(&[
        &e.ts_ms.to_string(),
        e.actuator.as_str(),
        e.action.as_str(),
        e.source.as_str(),
        &cause_seq,
        &cause_value,
    ])
}

fn format_mode(m: &ControlMode) -> String {
    csv_line(&[&m.changed_at_ms.to_string(), m.mode.as_str(), &m.changed_by])
}

fn format_visit(v: &VisitRecord) -> String {
    csv_line(&[
        &v.user,
        &v.ts_ms.to_string(),
        &format!("{:.1}", v.snapshot.temp_c),
        &v.snapshot.moisture_adc.to_string(),
        &v.snapshot.lux.to_string(),
    ])
}

/// Renders a whole events file, header included.
pub fn events_csv(events: &[ActuationEvent]) -> String {
    let mut out = format!("{EVENTS_HEADER}\n");
    for e in events {
        out.push_str(&format_event(e));
    }
    out
}

/// Renders a whole readings file, header included.
pub fn readings_csv(readings: &[SensorReading]) -> String {
    let mut out = format!("{READINGS_HEADER}\n");
    for r in readings {
        out.push_str(&format_reading(r));
    }
    out
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing column {name}"))?;
    raw.parse().map_err(|_| format!("bad {name}: {raw:?}"))
}

fn opt_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<Option<T>, String> {
    match rec.get(i) {
        None | Some("") => Ok(None),
        Some(_) => field(rec, i, name).map(Some),
    }
}

fn check_width(rec: &csv::StringRecord, width: usize) -> Result<(), String> {
    if rec.len() == width {
        Ok(())
    } else {
        Err(format!("expected {width} columns, found {}", rec.len()))
    }
}

pub fn parse_reading(rec: &csv::StringRecord) -> Result<SensorReading, String> {
    check_width(rec, 6)?;
    let r = SensorReading {
        timestamp_ms: field(rec, 0, "ts_ms")?,
        node_id: field(rec, 1, "node_id")?,
        seq: field(rec, 2, "seq")?,
        temp_c: field(rec, 3, "temp_c")?,
        moisture_adc: field(rec, 4, "moisture_adc")?,
        lux: field(rec, 5, "lux")?,
    };
    r.check_ranges()?;
    Ok(r)
}

pub fn parse_event(rec: &csv::StringRecord) -> Result<ActuationEvent, String> {
    check_width(rec, 6)?;
    Ok(ActuationEvent {
        ts_ms: field(rec, 0, "ts_ms")?,
        actuator: field::<Actuator>(rec, 1, "actuator")?,
        action: field(rec, 2, "action")?,
        source: field::<Mode>(rec, 3, "source")?,
        cause_reading_seq: opt_field(rec, 4, "cause_seq")?,
        cause_param_value: opt_field(rec, 5, "cause_value")?,
    })
}

fn parse_mode(rec: &csv::StringRecord) -> Result<ControlMode, String> {
    check_width(rec, 3)?;
    Ok(ControlMode {
        changed_at_ms: field(rec, 0, "ts_ms")?,
        mode: field(rec, 1, "mode")?,
        changed_by: field(rec, 2, "changed_by")?,
    })
}

fn parse_visit(rec: &csv::StringRecord) -> Result<VisitRecord, String> {
    check_width(rec, 5)?;
    Ok(VisitRecord {
        user: field(rec, 0, "user")?,
        ts_ms: field(rec, 1, "ts_ms")?,
        snapshot: VisitSnapshot {
            temp_c: field(rec, 2, "temp_c")?,
            moisture_adc: field(rec, 3, "moisture_adc")?,
            lux: field(rec, 4, "lux")?,
        },
    })
}

/// Parses CSV text with the given header, reporting errors with 1-based line
/// numbers (the header is line 1).
pub fn parse_csv<T>(
    text: &str,
    header: &'static str,
    path: &Path,
    parse: impl Fn(&csv::StringRecord) -> Result<T, String>,
) -> Result<Vec<T>, StoreError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end_matches('\r') == header => {}
        _ => {
            return Err(StoreError::Header {
                path: path.to_path_buf(),
                expected: header,
            })
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(parse(&rec).map_err(|message| StoreError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })?);
    }
    Ok(out)
}

/// An open append-only file. Opening cuts any torn final line and writes the
/// header into a new or empty file.
struct LogFile {
    path: PathBuf,
    file: File,
}

impl LogFile {
    fn open(path: PathBuf, header: &'static str) -> Result<(LogFile, String), StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io_err)?;
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            tracing::warn!(path = %path.display(), dropped = text.len() - keep, "truncating torn tail");
            text.truncate(keep);
            file.set_len(keep as u64).map_err(io_err)?;
            file.seek(SeekFrom::End(0)).map_err(io_err)?;
        }
        if text.is_empty() {
            text = format!("{header}\n");
            file.write_all(text.as_bytes()).map_err(io_err)?;
        }
        Ok((LogFile { path, file }, text))
    }

    fn append(&mut self, line: &str) -> Result<(), StoreError> {
        self.file.write_all(line.as_bytes()).map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

struct Readings {
    log: LogFile,
    rows: VecDeque<SensorReading>,
    seen: HashSet<(String, u64)>,
    total: u64,
}

struct Stream<T> {
    log: LogFile,
    rows: Vec<T>,
}

struct Visits {
    log: LogFile,
    current: HashMap<String, VisitRecord>,
}

/// The datastore. Each operation is atomic; all methods take `&self`.
pub struct Store {
    dir: PathBuf,
    mem_window_ms: u64,
    readings: Mutex<Readings>,
    events: Mutex<Stream<ActuationEvent>>,
    modes: Mutex<Stream<ControlMode>>,
    visits: Mutex<Visits>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl Store {
    /// Opens (or creates) the store under `dir`, reloading existing files.
    pub fn open(dir: impl AsRef<Path>, mem_window_h: u64) -> Result<Store, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;

        let (log, text) = LogFile::open(dir.join(READINGS_FILE), READINGS_HEADER)?;
        let mut rows = parse_csv(&text, READINGS_HEADER, &log.path, parse_reading)?;
        let seen = rows.iter().map(|r| (r.node_id.clone(), r.seq)).collect();
        let total = rows.len() as u64;
        rows.sort_by_key(|r| r.timestamp_ms);
        let mem_window_ms = mem_window_h.saturating_mul(3_600_000);
        let mut readings = Readings {
            log,
            rows: rows.into(),
            seen,
            total,
        };
        trim_window(&mut readings.rows, mem_window_ms);

        let (log, text) = LogFile::open(dir.join(EVENTS_FILE), EVENTS_HEADER)?;
        let rows = parse_csv(&text, EVENTS_HEADER, &log.path, parse_event)?;
        let events = Stream { log, rows };

        let (log, text) = LogFile::open(dir.join(MODES_FILE), MODES_HEADER)?;
        let rows = parse_csv(&text, MODES_HEADER, &log.path, parse_mode)?;
        let modes = Stream { log, rows };

        let (log, text) = LogFile::open(dir.join(VISITS_FILE), VISITS_HEADER)?;
        let current = parse_csv(&text, VISITS_HEADER, &log.path, parse_visit)?
            .into_iter()
            .map(|v| (v.user.clone(), v))
            .collect();
        let visits = Visits { log, current };

        Ok(Store {
            dir,
            mem_window_ms,
            readings: Mutex::new(readings),
            events: Mutex::new(events),
            modes: Mutex::new(modes),
            visits: Mutex::new(visits),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends a reading and returns its row id (1-based, counting every row
    /// ever written to the file).
    pub fn append_reading(&self, r: &SensorReading) -> Result<u64, AppendError> {
        let r = &SensorReading {
            temp_c: round_tenth(r.temp_c),
            ..r.clone()
        };
        let mut g = self.readings.lock().unwrap();
        let key = (r.node_id.clone(), r.seq);
        if g.seen.contains(&key) {
            return Err(AppendError::Duplicate {
                node_id: r.node_id.clone(),
                seq: r.seq,
            });
        }
        g.log.append(&format_reading(r))?;
        g.seen.insert(key);
        g.total += 1;
        // Keep rows sorted by timestamp; nodes deliver in order, so the
        // insertion point is almost always the end.
        let at = g.rows.partition_point(|x| x.timestamp_ms <= r.timestamp_ms);
        g.rows.insert(at, r.clone());
        let window = self.mem_window_ms;
        trim_window(&mut g.rows, window);
        Ok(g.total)
    }

    /// Readings with `now_ms − window_s·1000 ≤ ts_ms ≤ now_ms`, ascending,
    /// projected onto `param`.
    pub fn query_window(&self, param: Param, now_ms: u64, window_s: u64) -> Result<Vec<Point>, QueryError> {
        if window_s == 0 {
            return Err(QueryError::EmptyWindow);
        }
        let from = now_ms.saturating_sub(window_s.saturating_mul(1000));
        let g = self.readings.lock().unwrap();
        let start = g.rows.partition_point(|r| r.timestamp_ms < from);
        let end = g.rows.partition_point(|r| r.timestamp_ms <= now_ms);
        Ok(g.rows
            .range(start..end.max(start))
            .map(|r| Point {
                ts_ms: r.timestamp_ms,
                value: param.value_of(r),
            })
            .collect())
    }

    /// In-memory readings, ascending by timestamp.
    pub fn readings(&self) -> Vec<SensorReading> {
        self.readings.lock().unwrap().rows.iter().cloned().collect()
    }

    pub fn reading_count(&self) -> u64 {
        self.readings.lock().unwrap().total
    }

    pub fn latest_reading(&self) -> Option<SensorReading> {
        self.readings.lock().unwrap().rows.back().cloned()
    }

    pub fn append_event(&self, e: &ActuationEvent) -> Result<(), StoreError> {
        let mut g = self.events.lock().unwrap();
        g.log.append(&format_event(e))?;
        g.rows.push(e.clone());
        Ok(())
    }

    pub fn events(&self) -> Vec<ActuationEvent> {
        self.events.lock().unwrap().rows.clone()
    }

    pub fn append_mode(&self, m: &ControlMode) -> Result<(), StoreError> {
        let mut g = self.modes.lock().unwrap();
        g.log.append(&format_mode(m))?;
        g.rows.push(m.clone());
        Ok(())
    }

    pub fn modes(&self) -> Vec<ControlMode> {
        self.modes.lock().unwrap().rows.clone()
    }

    pub fn last_mode(&self) -> Option<ControlMode> {
        self.modes.lock().unwrap().rows.last().cloned()
    }

    /// Replaces `user`'s visit record.
    pub fn record_visit(&self, user: &str, now_ms: u64, snapshot: VisitSnapshot) -> Result<(), StoreError> {
        let record = VisitRecord {
            user: user.to_string(),
            ts_ms: now_ms,
            snapshot: VisitSnapshot {
                temp_c: round_tenth(snapshot.temp_c),
                ..snapshot
            },
        };
        let mut g = self.visits.lock().unwrap();
        g.log.append(&format_visit(&record))?;
        g.current.insert(user.to_string(), record);
        Ok(())
    }

    pub fn last_visit(&self, user: &str) -> Option<VisitRecord> {
        self.visits.lock().unwrap().current.get(user).cloned()
    }

    pub fn visits(&self) -> Vec<VisitRecord> {
        let mut v: Vec<_> = self.visits.lock().unwrap().current.values().cloned().collect();
        v.sort_by(|a, b| a.user.cmp(&b.user));
        v
    }
}

fn trim_window(rows: &mut VecDeque<SensorReading>, window_ms: u64) {
    let Some(cutoff) = rows.back().map(|last| last.timestamp_ms.saturating_sub(window_ms)) else {
        return;
    };
    while rows.front().is_some_and(|r| r.timestamp_ms < cutoff) {
        rows.pop_front();
    }
}

/// Reads a readings CSV file in datastore format.
pub fn load_readings(path: &Path) -> Result<Vec<SensorReading>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, READINGS_HEADER, path, parse_reading)
}

/// Reads an events CSV file in datastore format.
pub fn load_events(path: &Path) -> Result<Vec<ActuationEvent>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, EVENTS_HEADER, path, parse_event)
}
