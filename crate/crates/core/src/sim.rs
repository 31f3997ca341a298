//! Discrete-time model of the grow chamber.
//!
//! Temperature relaxes toward a diurnal ambient curve, the cooler pulls it
//! down at a constant rate, moisture decays at a constant rate and the pump
//! adds at a constant rate. Light is memoryless: ambient daylight plus the
//! grow light when it is on.
//!
//! The update is integrated per virtual millisecond (explicit Euler with the
//! ambient temperature sampled at the start of each millisecond), so two steps
//! of `dt` produce exactly the same state as one step of `2·dt`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::model::{ActuatorFlags, LUX_MAX, LUX_MIN, MOISTURE_MAX_ADC, TEMP_MAX_C, TEMP_MIN_C};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid simulation parameter: {0}")]
pub struct SimConfigError(pub String);

/// Chamber state. `moisture` is the continuous probe level; the sensor
/// reports it rounded to whole ADC counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub temp_c: f64,
    pub moisture: f64,
    pub lux: u32,
    pub sim_time_ms: u64,
}

impl EnvState {
    pub fn new(temp_c: f64, moisture: f64, lux: u32, sim_time_ms: u64) -> Result<Self, SimConfigError> {
        let state = EnvState {
            temp_c,
            moisture,
            lux,
            sim_time_ms,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), SimConfigError> {
        if !(TEMP_MIN_C..=TEMP_MAX_C).contains(&self.temp_c) {
            return Err(SimConfigError(format!("temp_c {} outside [0, 50]", self.temp_c)));
        }
        if !(0.0..=f64::from(MOISTURE_MAX_ADC)).contains(&self.moisture) {
            return Err(SimConfigError(format!("moisture {} outside [0, 1023]", self.moisture)));
        }
        if !(LUX_MIN..=LUX_MAX).contains(&self.lux) {
            return Err(SimConfigError(format!("lux {} outside [1, 65535]", self.lux)));
        }
        Ok(())
    }

    pub fn moisture_adc(&self) -> u16 {
        self.moisture.round() as u16
    }
}

/// Diurnal ambient conditions around the chamber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbientProfile {
    pub temp_mean_c: f64,
    pub temp_amplitude_c: f64,
    pub lux_peak: u32,
    pub lux_night: u32,
    pub day_length_ms: u64,
    /// ADC counts per second lost to drying.
    pub moisture_decay_per_s: f64,
}

impl Default for AmbientProfile {
    fn default() -> Self {
        AmbientProfile {
            temp_mean_c: 32.0,
            temp_amplitude_c: 1.5,
            lux_peak: 4500,
            lux_night: 2000,
            day_length_ms: 86_400_000,
            moisture_decay_per_s: 0.05,
        }
    }
}

impl AmbientProfile {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        if self.lux_night < LUX_MIN {
            return Err(SimConfigError("lux_night must be >= 1".into()));
        }
        if self.lux_peak > LUX_MAX {
            return Err(SimConfigError("lux_peak must be <= 65535".into()));
        }
        if self.day_length_ms == 0 {
            return Err(SimConfigError("day_length_ms must be > 0".into()));
        }
        if !(self.moisture_decay_per_s >= 0.0) {
            return Err(SimConfigError("moisture_decay_per_s must be >= 0".into()));
        }
        if !self.temp_mean_c.is_finite() || !self.temp_amplitude_c.is_finite() {
            return Err(SimConfigError("ambient temperature must be finite".into()));
        }
        Ok(())
    }

    fn phase(&self, sim_time_ms: u64) -> f64 {
        let within = sim_time_ms % self.day_length_ms;
        2.0 * PI * within as f64 / self.day_length_ms as f64
    }

    /// Ambient temperature: coolest at midnight, warmest at noon.
    pub fn ambient_temp(&self, sim_time_ms: u64) -> f64 {
        if self.temp_amplitude_c == 0.0 {
            return self.temp_mean_c;
        }
        self.temp_mean_c - self.temp_amplitude_c * self.phase(sim_time_ms).cos()
    }
}

/// Ambient daylight, a raised cosine from `lux_night` at midnight to
/// `lux_peak` at noon.
pub fn ambient_light(sim_time_ms: u64, ambient: &AmbientProfile) -> u32 {
    let night = f64::from(ambient.lux_night);
    let peak = f64::from(ambient.lux_peak);
    let shape = (1.0 - ambient.phase(sim_time_ms).cos()) / 2.0;
    let lux = (night + (peak - night) * shape).round();
    lux.clamp(f64::from(LUX_MIN), f64::from(LUX_MAX)) as u32
}

/// Strength of each regulator and of the chamber's coupling to ambient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorEffects {
    /// Magnitude of the cooler's pull, °C per second (applied downward).
    pub cooler_delta_c_per_s: f64,
    pub pump_delta_adc_per_s: f64,
    pub growlight_lux: u32,
    /// Fraction of the gap to ambient temperature closed per second.
    pub ambient_coupling_per_s: f64,
}

impl Default for ActuatorEffects {
    fn default() -> Self {
        ActuatorEffects {
            cooler_delta_c_per_s: 0.02,
            pump_delta_adc_per_s: 2.0,
            growlight_lux: 6000,
            ambient_coupling_per_s: 0.001,
        }
    }
}

impl ActuatorEffects {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        if !(self.cooler_delta_c_per_s > 0.0) {
            return Err(SimConfigError("cooler_delta_c_per_s must be > 0".into()));
        }
        if !(self.pump_delta_adc_per_s > 0.0) {
            return Err(SimConfigError("pump_delta_adc_per_s must be > 0".into()));
        }
        if !(self.ambient_coupling_per_s > 0.0 && self.ambient_coupling_per_s <= 1.0) {
            return Err(SimConfigError("ambient_coupling_per_s must be in (0, 1]".into()));
        }
        if self.growlight_lux > LUX_MAX {
            return Err(SimConfigError("growlight_lux must be <= 65535".into()));
        }
        Ok(())
    }

    /// Temperature the chamber settles at with the cooler running and a
    /// constant ambient temperature.
    pub fn cooled_equilibrium(&self, ambient_temp_c: f64) -> f64 {
        ambient_temp_c - self.cooler_delta_c_per_s / self.ambient_coupling_per_s
    }
}

/// Advances `state` by `dt_ms` virtual milliseconds under the given regulator
/// states. Pure: identical inputs give bit-identical outputs.
pub fn step(
    state: &EnvState,
    actuators: ActuatorFlags,
    ambient: &AmbientProfile,
    effects: &ActuatorEffects,
    dt_ms: u64,
) -> EnvState {
    if dt_ms == 0 {
        return *state;
    }
    let coupling = effects.ambient_coupling_per_s / 1000.0;
    let cooler = if actuators.cooler {
        effects.cooler_delta_c_per_s / 1000.0
    } else {
        0.0
    };
    let pump = if actuators.pump {
        effects.pump_delta_adc_per_s / 1000.0
    } else {
        0.0
    };
    let moisture_rate = pump - ambient.moisture_decay_per_s / 1000.0;
    let max_moisture = f64::from(MOISTURE_MAX_ADC);

    let mut temp = state.temp_c;
    let mut moisture = state.moisture;
    for ms in 0..dt_ms {
        let outside = ambient.ambient_temp(state.sim_time_ms + ms);
        temp = (temp + coupling * (outside - temp) - cooler).clamp(TEMP_MIN_C, TEMP_MAX_C);
        moisture = (moisture + moisture_rate).clamp(0.0, max_moisture);
    }

    let sim_time_ms = state.sim_time_ms + dt_ms;
    let mut lux = ambient_light(sim_time_ms, ambient);
    if actuators.light {
        lux = lux.saturating_add(effects.growlight_lux).min(LUX_MAX);
    }
    EnvState {
        temp_c: temp,
        moisture,
        lux,
        sim_time_ms,
    }
}

/// The chamber as a stateful object: current state plus the regulator states
/// the node's relays have applied. Owned by one driver at a time.
#[derive(Debug, Clone)]
pub struct Chamber {
    state: EnvState,
    flags: ActuatorFlags,
    ambient: AmbientProfile,
    effects: ActuatorEffects,
}

impl Chamber {
    pub fn new(state: EnvState, ambient: AmbientProfile, effects: ActuatorEffects) -> Result<Self, SimConfigError> {
        state.validate()?;
        ambient.validate()?;
        effects.validate()?;
        Ok(Chamber {
            state,
            flags: ActuatorFlags::ALL_OFF,
            ambient,
            effects,
        })
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn flags(&self) -> ActuatorFlags {
        self.flags
    }

    pub fn ambient(&self) -> &AmbientProfile {
        &self.ambient
    }

    pub fn effects(&self) -> &ActuatorEffects {
        &self.effects
    }

    /// Steps the chamber up to `sim_time_ms`; earlier times are ignored.
    pub fn advance_to(&mut self, sim_time_ms: u64) -> EnvState {
        if sim_time_ms > self.state.sim_time_ms {
            let dt = sim_time_ms - self.state.sim_time_ms;
            self.state = step(&self.state, self.flags, &self.ambient, &self.effects, dt);
        }
        self.state
    }

    /// Changes regulator states at `sim_time_ms`; time up to that instant is
    /// integrated with the previous states.
    pub fn set_flags(&mut self, flags: ActuatorFlags, sim_time_ms: u64) {
        self.advance_to(sim_time_ms);
        self.flags = flags;
    }
}
