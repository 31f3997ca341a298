//! Flat `key=value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! one of [`KNOWN_KEYS`]; anything else is rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::control::Thresholds;
use crate::model::Mode;
use crate::node::{DEFAULT_CADENCE_MS, DEFAULT_NODE_ID};
use crate::sim::{ActuatorEffects, AmbientProfile, EnvState};
use crate::store::DEFAULT_MEM_WINDOW_H;

pub const KNOWN_KEYS: &[&str] = &[
    "sim.temp_mean_c",
    "sim.temp_amplitude_c",
    "sim.lux_peak",
    "sim.lux_night",
    "sim.day_length_ms",
    "sim.moisture_decay_per_s",
    "sim.cooler_delta_c_per_s",
    "sim.pump_delta_adc_per_s",
    "sim.growlight_lux",
    "sim.ambient_coupling_per_s",
    "sim.initial_temp_c",
    "sim.initial_moisture_adc",
    "control.temp_max_c",
    "control.temp_hyst_c",
    "control.moisture_min_adc",
    "control.moisture_hyst_adc",
    "control.lux_min",
    "control.lux_hyst",
    "control.initial_mode",
    "store.dir",
    "store.mem_window_h",
    "net.node_listen",
    "net.api_listen",
    "net.gateway_addr",
    "net.time_scale",
    "net.ui_dir",
    "node.cadence_ms",
    "node.id",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown config key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: duplicate config key `{key}`")]
    DuplicateKey { key: String, line: usize },
    #[error("bad value for `{key}`: {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid `{section}` settings: {reason}")]
    Invalid { section: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub ambient: AmbientProfile,
    pub effects: ActuatorEffects,
    pub initial_temp_c: f64,
    pub initial_moisture_adc: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            ambient: AmbientProfile::default(),
            effects: ActuatorEffects::default(),
            initial_temp_c: 35.0,
            initial_moisture_adc: 250.0,
        }
    }
}

impl SimConfig {
    /// Initial chamber state at `sim_time_ms`; light starts at ambient.
    pub fn initial_state(&self, sim_time_ms: u64) -> EnvState {
        EnvState {
            temp_c: self.initial_temp_c,
            moisture: self.initial_moisture_adc,
            lux: crate::sim::ambient_light(sim_time_ms, &self.ambient),
            sim_time_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub thresholds: Thresholds,
    pub initial_mode: Mode,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            thresholds: Thresholds::default(),
            initial_mode: Mode::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreConfig {
    pub dir: PathBuf,
    pub mem_window_h: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            dir: PathBuf::from("data"),
            mem_window_h: DEFAULT_MEM_WINDOW_H,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub node_listen: String,
    pub api_listen: String,
    pub gateway_addr: String,
    pub time_scale: f64,
    pub ui_dir: Option<PathBuf>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            node_listen: "127.0.0.1:7070".into(),
            api_listen: "127.0.0.1:8080".into(),
            gateway_addr: "127.0.0.1:7070".into(),
            time_scale: 1.0,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub cadence_ms: u64,
    pub id: String,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            cadence_ms: DEFAULT_CADENCE_MS,
            id: DEFAULT_NODE_ID.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub sim: SimConfig,
    pub control: ControlConfig,
    pub store: StoreConfig,
    pub net: NetConfig,
    pub node: NodeConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: i + 1,
                });
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey {
                    key: key.to_string(),
                    line: i + 1,
                });
            }
        }
        Config::from_entries(&entries)
    }

    fn from_entries(entries: &BTreeMap<String, String>) -> Result<Config, ConfigError> {
        let mut c = Config::default();
        for (key, value) in entries {
            let v = value.as_str();
            let k = key.as_str();
            match k {
                "sim.temp_mean_c" => c.sim.ambient.temp_mean_c = parse_value(k, v)?,
                "sim.temp_amplitude_c" => c.sim.ambient.temp_amplitude_c = parse_value(k, v)?,
                "sim.lux_peak" => c.sim.ambient.lux_peak = parse_value(k, v)?,
                "sim.lux_night" => c.sim.ambient.lux_night = parse_value(k, v)?,
                "sim.day_length_ms" => c.sim.ambient.day_length_ms = parse_value(k, v)?,
                "sim.moisture_decay_per_s" => c.sim.ambient.moisture_decay_per_s = parse_value(k, v)?,
                "sim.cooler_delta_c_per_s" => c.sim.effects.cooler_delta_c_per_s = parse_value(k, v)?,
                "sim.pump_delta_adc_per_s" => c.sim.effects.pump_delta_adc_per_s = parse_value(k, v)?,
                "sim.growlight_lux" => c.sim.effects.growlight_lux = parse_value(k, v)?,
                "sim.ambient_coupling_per_s" => c.sim.effects.ambient_coupling_per_s = parse_value(k, v)?,
                "sim.initial_temp_c" => c.sim.initial_temp_c = parse_value(k, v)?,
                "sim.initial_moisture_adc" => c.sim.initial_moisture_adc = parse_value(k, v)?,
                "control.temp_max_c" => c.control.thresholds.temp_max_c = parse_value(k, v)?,
                "control.temp_hyst_c" => c.control.thresholds.temp_hyst_c = parse_value(k, v)?,
                "control.moisture_min_adc" => c.control.thresholds.moisture_min_adc = parse_value(k, v)?,
                "control.moisture_hyst_adc" => c.control.thresholds.moisture_hyst_adc = parse_value(k, v)?,
                "control.lux_min" => c.control.thresholds.lux_min = parse_value(k, v)?,
                "control.lux_hyst" => c.control.thresholds.lux_hyst = parse_value(k, v)?,
                "control.initial_mode" => c.control.initial_mode = parse_value(k, v)?,
                "store.dir" => c.store.dir = PathBuf::from(v),
                "store.mem_window_h" => c.store.mem_window_h = parse_value(k, v)?,
                "net.node_listen" => c.net.node_listen = v.to_string(),
                "net.api_listen" => c.net.api_listen = v.to_string(),
                "net.gateway_addr" => c.net.gateway_addr = v.to_string(),
                "net.time_scale" => c.net.time_scale = parse_value(k, v)?,
                "net.ui_dir" => c.net.ui_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
                "node.cadence_ms" => c.node.cadence_ms = parse_value(k, v)?,
                "node.id" => c.node.id = v.to_string(),
                _ => unreachable!("key list checked above"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section, reason: String| ConfigError::Invalid { section, reason };
        self.sim.ambient.validate().map_err(|e| invalid("sim", e.0))?;
        self.sim.effects.validate().map_err(|e| invalid("sim", e.0))?;
        self.sim.initial_state(0).validate().map_err(|e| invalid("sim", e.0))?;
        self.control.thresholds.validate().map_err(|e| invalid("control", e.0))?;
        if self.store.mem_window_h == 0 {
            return Err(invalid("store", "mem_window_h must be > 0".into()));
        }
        if !(self.net.time_scale > 0.0 && self.net.time_scale.is_finite()) {
            return Err(invalid("net", "time_scale must be positive".into()));
        }
        if self.node.cadence_ms == 0 {
            return Err(invalid("node", "cadence_ms must be > 0".into()));
        }
        if self.node.id.is_empty() || !self.node.id.bytes().all(|b| b.is_ascii_graphic()) {
            return Err(invalid("node", "id must be printable ASCII without spaces".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
        let c = Config::default();
        assert_eq!(c.node.cadence_ms, 5000);
        assert_eq!(c.control.thresholds.temp_max_c, 30.0);
        assert_eq!(c.control.thresholds.moisture_min_adc, 300);
        assert_eq!(c.control.thresholds.lux_min, 5000);
    }

    #[test]
    fn overrides_apply() {
        let c = Config::parse(
            "# chamber\nsim.temp_mean_c = 28.0\ncontrol.initial_mode=MANUAL\nnet.time_scale=60\nstore.dir=/tmp/x\n",
        )
        .unwrap();
        assert_eq!(c.sim.ambient.temp_mean_c, 28.0);
        assert_eq!(c.control.initial_mode, Mode::Manual);
        assert_eq!(c.net.time_scale, 60.0);
        assert_eq!(c.store.dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse("controll.temp=3\n").unwrap_err();
        assert!(err.to_string().contains("controll.temp"), "{err}");
        assert!(matches!(err, ConfigError::UnknownKey { line: 1, .. }));
    }

    #[test]
    fn values_are_validated() {
        assert!(matches!(
            Config::parse("control.temp_max_c=55").unwrap_err(),
            ConfigError::Invalid { section: "control", .. }
        ));
        assert!(matches!(
            Config::parse("node.cadence_ms=fast").unwrap_err(),
            ConfigError::BadValue { .. }
        ));
        assert!(matches!(Config::parse("net.time_scale=0").unwrap_err(), ConfigError::Invalid { .. }));
        assert!(matches!(Config::parse("just text").unwrap_err(), ConfigError::Syntax { line: 1 }));
        assert!(matches!(
            Config::parse("node.id=a\nnode.id=b").unwrap_err(),
            ConfigError::DuplicateKey { line: 2, .. }
        ));
    }
}
