//! Domain types shared by the node, the gateway and the control engine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the three parameter regulators wired to the node's relay module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Actuator {
    Pump,
    Cooler,
    Light,
}

impl Actuator {
    pub const ALL: [Actuator; 3] = [Actuator::Pump, Actuator::Cooler, Actuator::Light];

    pub fn as_str(self) -> &'static str {
        match self {
            Actuator::Pump => "PUMP",
            Actuator::Cooler => "COOLER",
            Actuator::Light => "LIGHT",
        }
    }

    /// The sensed channel this regulator corrects.
    pub fn param(self) -> Param {
        match self {
            Actuator::Pump => Param::Moisture,
            Actuator::Cooler => Param::Temp,
            Actuator::Light => Param::Light,
        }
    }
}

impl fmt::Display for Actuator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Actuator {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PUMP" => Ok(Actuator::Pump),
            "COOLER" => Ok(Actuator::Cooler),
            "LIGHT" => Ok(Actuator::Light),
            _ => Err(UnknownName(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    On,
    Off,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::On => "ON",
            Action::Off => "OFF",
        }
    }

    pub fn from_bool(on: bool) -> Self {
        if on {
            Action::On
        } else {
            Action::Off
        }
    }

    pub fn is_on(self) -> bool {
        self == Action::On
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ON" => Ok(Action::On),
            "OFF" => Ok(Action::Off),
            _ => Err(UnknownName(s.to_string())),
        }
    }
}

/// Sensed channel, named as the history endpoint names it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Temp,
    Moisture,
    Light,
}

impl Param {
    pub const ALL: [Param; 3] = [Param::Temp, Param::Moisture, Param::Light];

    pub fn as_str(self) -> &'static str {
        match self {
            Param::Temp => "temp",
            Param::Moisture => "moisture",
            Param::Light => "light",
        }
    }

    pub fn regulator(self) -> Actuator {
        match self {
            Param::Temp => Actuator::Cooler,
            Param::Moisture => Actuator::Pump,
            Param::Light => Actuator::Light,
        }
    }

    pub fn value_of(self, reading: &SensorReading) -> f64 {
        match self {
            Param::Temp => reading.temp_c,
            Param::Moisture => f64::from(reading.moisture_adc),
            Param::Light => f64::from(reading.lux),
        }
    }

    /// Renders a channel value the way the CSV files do: temperature with one
    /// decimal, the integer channels without.
    pub fn format_value(self, value: f64) -> String {
        match self {
            Param::Temp => format!("{value:.1}"),
            Param::Moisture | Param::Light => format!("{}", value.round() as i64),
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Param {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temp" => Ok(Param::Temp),
            "moisture" => Ok(Param::Moisture),
            "light" => Ok(Param::Light),
            _ => Err(UnknownName(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown name {0:?}")]
pub struct UnknownName(pub String);

/// On/off state of the three regulators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActuatorFlags {
    pub pump: bool,
    pub cooler: bool,
    pub light: bool,
}

impl ActuatorFlags {
    pub const ALL_OFF: ActuatorFlags = ActuatorFlags {
        pump: false,
        cooler: false,
        light: false,
    };

    pub fn get(&self, actuator: Actuator) -> bool {
        match actuator {
            Actuator::Pump => self.pump,
            Actuator::Cooler => self.cooler,
            Actuator::Light => self.light,
        }
    }

    pub fn set(&mut self, actuator: Actuator, on: bool) {
        match actuator {
            Actuator::Pump => self.pump = on,
            Actuator::Cooler => self.cooler = on,
            Actuator::Light => self.light = on,
        }
    }

    pub fn with(mut self, actuator: Actuator, on: bool) -> Self {
        self.set(actuator, on);
        self
    }
}

/// A relay on/off instruction travelling gateway → node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelayCommand {
    pub cmd_id: u64,
    pub target: Actuator,
    pub action: Action,
}

/// Automation mode. In `Auto` the engine drives the regulators and manual
/// commands are refused; in `Manual` the engine stays silent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Auto,
    Manual,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Auto => "AUTO",
            Mode::Manual => "MANUAL",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AUTO" => Ok(Mode::Auto),
            "MANUAL" => Ok(Mode::Manual),
            _ => Err(UnknownName(s.to_string())),
        }
    }
}

/// One timestamped sample of the three channels, as sent by a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub node_id: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub temp_c: f64,
    pub moisture_adc: u16,
    pub lux: u32,
}

pub const TEMP_MIN_C: f64 = 0.0;
pub const TEMP_MAX_C: f64 = 50.0;
pub const MOISTURE_MAX_ADC: u16 = 1023;
pub const LUX_MIN: u32 = 1;
pub const LUX_MAX: u32 = 65535;

/// Rounds a temperature to the 0.1 °C resolution carried on the wire.
pub fn round_tenth(value: f64) -> f64 {
    (value * 10.0).round() / 10.0
}

impl SensorReading {
    /// Checks the channel ranges a reading must satisfy.
    pub fn check_ranges(&self) -> Result<(), String> {
        if !(TEMP_MIN_C..=TEMP_MAX_C).contains(&self.temp_c) {
            return Err(format!("temp_c {} outside [0, 50]", self.temp_c));
        }
        if self.moisture_adc > MOISTURE_MAX_ADC {
            return Err(format!("moisture_adc {} above 1023", self.moisture_adc));
        }
        if !(LUX_MIN..=LUX_MAX).contains(&self.lux) {
            return Err(format!("lux {} outside [1, 65535]", self.lux));
        }
        Ok(())
    }
}

/// A logged regulator transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationEvent {
    pub ts_ms: u64,
    pub actuator: Actuator,
    pub action: Action,
    pub source: Mode,
    pub cause_reading_seq: Option<u64>,
    pub cause_param_value: Option<f64>,
}

/// The current control mode and who set it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlMode {
    pub mode: Mode,
    pub changed_at_ms: u64,
    pub changed_by: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Actuator::ALL {
            assert_eq!(a.as_str().parse::<Actuator>().unwrap(), a);
            assert_eq!(a.param().regulator(), a);
        }
        for p in Param::ALL {
            assert_eq!(p.as_str().parse::<Param>().unwrap(), p);
        }
        assert!("pump".parse::<Actuator>().is_err());
        assert!("humidity".parse::<Param>().is_err());
        assert_eq!("MANUAL".parse::<Mode>().unwrap(), Mode::Manual);
    }

    #[test]
    fn flags_set_only_touches_target() {
        let f = ActuatorFlags::ALL_OFF.with(Actuator::Cooler, true);
        assert_eq!(
            f,
            ActuatorFlags {
                pump: false,
                cooler: true,
                light: false
            }
        );
    }

    #[test]
    fn format_value_per_channel() {
        assert_eq!(Param::Temp.format_value(31.49), "31.5");
        assert_eq!(Param::Moisture.format_value(290.0), "290");
        assert_eq!(Param::Light.format_value(4800.0), "4800");
    }
}
