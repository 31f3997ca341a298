//! Threshold automation with hysteresis and the auto/manual interlock.
//!
//! Each regulator is one-sided: the cooler corrects high temperature, the
//! pump corrects low moisture, the grow light corrects low light. A channel
//! is out of range on the strict side of its threshold; once a regulator is
//! on it stays on until the channel is back past the threshold by the
//! hysteresis band.

use serde::{Deserialize, Serialize};

use crate::model::{
    Action, ActuationEvent, Actuator, ActuatorFlags, ControlMode, Mode, Param, RelayCommand, SensorReading,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid thresholds: {0}")]
pub struct ThresholdError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub temp_max_c: f64,
    pub temp_hyst_c: f64,
    pub moisture_min_adc: u16,
    pub moisture_hyst_adc: u16,
    pub lux_min: u32,
    pub lux_hyst: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            temp_max_c: 30.0,
            temp_hyst_c: 1.0,
            moisture_min_adc: 300,
            moisture_hyst_adc: 30,
            lux_min: 5000,
            lux_hyst: 250,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        if !(self.temp_hyst_c >= 0.0) {
            return Err(ThresholdError("temp_hyst_c must be >= 0".into()));
        }
        if !(self.temp_max_c > 0.0 && self.temp_max_c < 50.0) {
            return Err(ThresholdError("temp_max_c must be in (0, 50)".into()));
        }
        if self.moisture_min_adc > 1023 {
            return Err(ThresholdError("moisture_min_adc must be in [0, 1023]".into()));
        }
        if !(1..=65535).contains(&self.lux_min) {
            return Err(ThresholdError("lux_min must be in [1, 65535]".into()));
        }
        Ok(())
    }

    /// Required regulator state for `param` at `value`, given whether the
    /// regulator is currently on. Inside the hysteresis band the current
    /// state is kept.
    pub fn required(&self, param: Param, value: f64, currently_on: bool) -> bool {
        match param {
            Param::Temp => {
                if value > self.temp_max_c {
                    true
                } else if value <= self.temp_max_c - self.temp_hyst_c {
                    false
                } else {
                    currently_on
                }
            }
            Param::Moisture => {
                let min = f64::from(self.moisture_min_adc);
                if value < min {
                    true
                } else if value >= min + f64::from(self.moisture_hyst_adc) {
                    false
                } else {
                    currently_on
                }
            }
            Param::Light => {
                let min = f64::from(self.lux_min);
                if value < min {
                    true
                } else if value >= min + f64::from(self.lux_hyst) {
                    false
                } else {
                    currently_on
                }
            }
        }
    }

    /// Whether `value` lies on the violating side of the bare threshold.
    pub fn out_of_range(&self, param: Param, value: f64) -> bool {
        match param {
            Param::Temp => value > self.temp_max_c,
            Param::Moisture => value < f64::from(self.moisture_min_adc),
            Param::Light => value < f64::from(self.lux_min),
        }
    }
}

/// A regulator change requested by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Switch {
    pub target: Actuator,
    pub action: Action,
}

/// Regulator changes `reading` calls for. Empty in manual mode; never
/// repeats a state the regulator already has.
pub fn evaluate(reading: &SensorReading, th: &Thresholds, flags: ActuatorFlags, mode: Mode) -> Vec<Switch> {
    if mode == Mode::Manual {
        return Vec::new();
    }
    // Command order: cooler, pump, light.
    [Actuator::Cooler, Actuator::Pump, Actuator::Light]
        .into_iter()
        .filter_map(|target| {
            let param = target.param();
            let on = flags.get(target);
            let want = th.required(param, param.value_of(reading), on);
            (want != on).then_some(Switch {
                target,
                action: Action::from_bool(want),
            })
        })
        .collect()
}

/// A command to send together with the event that records it.
#[derive(Debug, Clone, PartialEq)]
pub struct Actuation {
    pub command: RelayCommand,
    pub event: ActuationEvent,
}

/// Manual commands are refused while automation is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("manual control is disabled in AUTO mode")]
pub struct ManualRejected;

/// Result of [`ControlEngine::set_mode`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOutcome {
    /// The new mode record, `None` when the mode was already in effect.
    pub changed: Option<ControlMode>,
    /// Commands issued by the re-evaluation on entering AUTO.
    pub actuations: Vec<Actuation>,
}

/// The automation engine. All decisions go through one value, so callers
/// sharing it wrap it in a single lock.
///
/// `flags` is the commanded regulator state: every change is recorded as an
/// [`ActuationEvent`] at the moment it is decided, so the event log and the
/// flags never disagree. Event and mode timestamps are kept non-decreasing
/// and a mode change always lands strictly after the previous event, which
/// keeps every event inside the interval of the mode that produced it.
#[derive(Debug, Clone)]
pub struct ControlEngine {
    thresholds: Thresholds,
    flags: ActuatorFlags,
    mode: ControlMode,
    latest: Option<SensorReading>,
    next_cmd_id: u64,
    last_event_ts: Option<u64>,
}

impl ControlEngine {
    pub fn new(thresholds: Thresholds, mode: ControlMode) -> Self {
        ControlEngine {
            thresholds,
            flags: ActuatorFlags::ALL_OFF,
            mode,
            latest: None,
            next_cmd_id: 1,
            last_event_ts: None,
        }
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn flags(&self) -> ActuatorFlags {
        self.flags
    }

    pub fn mode(&self) -> &ControlMode {
        &self.mode
    }

    pub fn latest(&self) -> Option<&SensorReading> {
        self.latest.as_ref()
    }

    /// Resumes from a persisted state: the commanded flags and the timestamp
    /// of the last logged event.
    pub fn restore(&mut self, flags: ActuatorFlags, last_event_ts: Option<u64>) {
        self.flags = flags;
        self.last_event_ts = last_event_ts;
    }

    /// Sets the latest reading without evaluating it.
    pub fn remember(&mut self, reading: SensorReading) {
        self.latest = Some(reading);
    }

    /// Starts the command id counter past ids used by an earlier run.
    pub fn set_next_cmd_id(&mut self, next: u64) {
        self.next_cmd_id = self.next_cmd_id.max(next);
    }

    /// Allocates a command id outside the event log, e.g. for resending the
    /// commanded state to a reconnected node.
    pub fn allocate_cmd_id(&mut self) -> u64 {
        let id = self.next_cmd_id;
        self.next_cmd_id += 1;
        id
    }

    fn actuate(&mut self, target: Actuator, action: Action, ts_ms: u64, cause: Option<&SensorReading>) -> Actuation {
        let ts_ms = ts_ms.max(self.last_event_ts.unwrap_or(0));
        self.last_event_ts = Some(ts_ms);
        self.flags.set(target, action.is_on());
        let command = RelayCommand {
            cmd_id: self.allocate_cmd_id(),
            target,
            action,
        };
        let event = ActuationEvent {
            ts_ms,
            actuator: target,
            action,
            source: self.mode.mode,
            cause_reading_seq: cause.map(|r| r.seq),
            cause_param_value: cause.map(|r| target.param().value_of(r)),
        };
        Actuation { command, event }
    }

    fn run_evaluation(&mut self, reading: &SensorReading) -> Vec<Actuation> {
        let ts = reading.timestamp_ms.max(self.mode.changed_at_ms);
        evaluate(reading, &self.thresholds, self.flags, self.mode.mode)
            .into_iter()
            .map(|s| self.actuate(s.target, s.action, ts, Some(reading)))
            .collect()
    }

    /// Takes a new reading: remembers it as the latest and, in AUTO mode,
    /// issues whatever commands it calls for.
    pub fn on_reading(&mut self, reading: &SensorReading) -> Vec<Actuation> {
        let newer = self
            .latest
            .as_ref()
            .is_none_or(|l| reading.timestamp_ms >= l.timestamp_ms);
        if newer {
            self.latest = Some(reading.clone());
        }
        self.run_evaluation(reading)
    }

    /// Switches mode. Entering AUTO re-evaluates the latest reading at once;
    /// entering MANUAL leaves the regulators as they are. Re-selecting the
    /// current mode changes nothing and records nothing.
    pub fn set_mode(&mut self, mode: Mode, by: &str, now_ms: u64) -> ModeOutcome {
        if mode == self.mode.mode {
            return ModeOutcome {
                changed: None,
                actuations: Vec::new(),
            };
        }
        let floor = self.mode.changed_at_ms.max(self.last_event_ts.map_or(0, |t| t + 1));
        self.mode = ControlMode {
            mode,
            changed_at_ms: now_ms.max(floor),
            changed_by: by.to_string(),
        };
        let actuations = match (mode, self.latest.clone()) {
            (Mode::Auto, Some(latest)) => self.run_evaluation(&latest),
            _ => Vec::new(),
        };
        ModeOutcome {
            changed: Some(self.mode.clone()),
            actuations,
        }
    }

    /// An operator's on/off request. Refused in AUTO mode; `Ok(None)` when the
    /// regulator is already in the requested state.
    pub fn manual_command(
        &mut self,
        target: Actuator,
        action: Action,
        now_ms: u64,
    ) -> Result<Option<Actuation>, ManualRejected> {
        if self.mode.mode == Mode::Auto {
            return Err(ManualRejected);
        }
        if self.flags.get(target) == action.is_on() {
            return Ok(None);
        }
        let ts = now_ms.max(self.mode.changed_at_ms);
        Ok(Some(self.actuate(target, action, ts, None)))
    }
}

/// Feeds `readings` through a fresh AUTO-mode engine and returns the
/// resulting events in decision order.
pub fn replay(readings: &[SensorReading], thresholds: Thresholds) -> Vec<ActuationEvent> {
    let mut engine = ControlEngine::new(
        thresholds,
        ControlMode {
            mode: Mode::Auto,
            changed_at_ms: 0,
            changed_by: "system".into(),
        },
    );
    readings
        .iter()
        .flat_map(|r| engine.on_reading(r))
        .map(|a| a.event)
        .collect()
}
