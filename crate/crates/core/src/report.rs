//! Plot-ready per-channel series: sensor values alongside the on-intervals of
//! the channel's regulator.

use std::path::{Path, PathBuf};

use crate::model::{Action, ActuationEvent, Actuator, Param, SensorReading};

pub const DAY_MS: u64 = 86_400_000;

/// Half-open virtual time range `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Window {
    pub const ALL: Window = Window {
        start_ms: 0,
        end_ms: u64::MAX,
    };

    /// Virtual day `index`, counted from time zero.
    pub fn day(index: u64) -> Window {
        Window {
            start_ms: index * DAY_MS,
            end_ms: (index + 1) * DAY_MS,
        }
    }

    pub fn contains(&self, ts_ms: u64) -> bool {
        (self.start_ms..self.end_ms).contains(&ts_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub param: Param,
    pub actuator: Actuator,
    pub values: Vec<(u64, f64)>,
    pub on_intervals: Vec<(u64, u64)>,
}

/// On-intervals of `actuator` inside `window`. A regulator already on at the
/// window start opens an interval there; one still on at the end is closed
/// at `close_ms`.
pub fn on_intervals(events: &[ActuationEvent], actuator: Actuator, window: Window, close_ms: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut open: Option<u64> = None;
    for e in events.iter().filter(|e| e.actuator == actuator) {
        if e.ts_ms >= window.end_ms {
            break;
        }
        let ts = e.ts_ms.max(window.start_ms);
        match (e.action, open) {
            (Action::On, None) => open = Some(ts),
            (Action::Off, Some(start)) => {
                if e.ts_ms >= window.start_ms {
                    out.push((start, ts));
                }
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        out.push((start, close_ms.max(start)));
    }
    out
}

/// Builds the three channel reports for `window`.
pub fn build(readings: &[SensorReading], events: &[ActuationEvent], window: Window) -> Vec<ChannelReport> {
    let in_window: Vec<&SensorReading> = readings.iter().filter(|r| window.contains(r.timestamp_ms)).collect();
    let close_ms = if window.end_ms == u64::MAX {
        let last_reading = in_window.last().map_or(0, |r| r.timestamp_ms);
        let last_event = events.last().map_or(0, |e| e.ts_ms);
        last_reading.max(last_event)
    } else {
        window.end_ms
    };
    Param::ALL
        .iter()
        .map(|&param| ChannelReport {
            param,
            actuator: param.regulator(),
            values: in_window.iter().map(|r| (r.timestamp_ms, param.value_of(r))).collect(),
            on_intervals: on_intervals(events, param.regulator(), window, close_ms),
        })
        .collect()
}

impl ChannelReport {
    pub fn values_file(&self) -> String {
        format!("{}_values.csv", self.param)
    }

    pub fn intervals_file(&self) -> String {
        format!("{}_{}_on.csv", self.param, self.actuator.as_str().to_ascii_lowercase())
    }

    pub fn values_csv(&self) -> String {
        let mut s = String::from("ts_ms,value\n");
        for (ts, v) in &self.values {
            s.push_str(&format!("{ts},{}\n", self.param.format_value(*v)));
        }
        s
    }

    pub fn intervals_csv(&self) -> String {
        let mut s = String::from("start_ms,end_ms\n");
        for (a, b) in &self.on_intervals {
            s.push_str(&format!("{a},{b}\n"));
        }
        s
    }
}

/// Writes every report as a pair of CSV files under `dir`.
pub fn write(reports: &[ChannelReport], dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for r in reports {
        for (name, body) in [(r.values_file(), r.values_csv()), (r.intervals_file(), r.intervals_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
    }
    Ok(written)
}
