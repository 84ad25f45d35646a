//! Acoustic propagation: empirical sound speed, per-link delays and the
//! ring buffer that serves delayed views of the game state.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::game::GameState;

/// Temperature (°C), salinity (psu) and pressure (decibar) of the water column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterColumn {
    pub temperature: f64,
    pub salinity: f64,
    pub pressure: f64,
}

impl WaterColumn {
    pub fn new(temperature: f64, salinity: f64, pressure: f64) -> Result<Self> {
        let w = Self {
            temperature,
            salinity,
            pressure,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-2.0..=40.0).contains(&self.temperature) {
            return Err(domain(format!("temperature {} outside [-2, 40] °C", self.temperature)));
        }
        if !(0.0..=45.0).contains(&self.salinity) {
            return Err(domain(format!("salinity {} outside [0, 45] psu", self.salinity)));
        }
        if !(self.pressure >= 0.0 && self.pressure.is_finite()) {
            return Err(domain(format!("pressure {} must be non-negative", self.pressure)));
        }
        Ok(())
    }
}

/// Empirical speed of sound in sea water, m/s.
pub fn sound_speed(water: &WaterColumn) -> Result<f64> {
    water.validate()?;
    let WaterColumn {
        temperature: t,
        salinity: s,
        pressure: p,
    } = *water;
    Ok(1450.0 + 4.21 * t - 0.037 * t * t + 1.14 * (s - 35.0) + 0.175 * p)
}

/// Time for a straight-line acoustic signal to cover `separation` metres
/// towards a receiver moving at `receiver_speed`.
pub fn one_way_delay(separation: f64, receiver_speed: f64, sound: f64) -> Result<f64> {
    if !(separation >= 0.0) {
        return Err(domain(format!("separation {separation} must be non-negative")));
    }
    if !(receiver_speed >= 0.0) {
        return Err(domain(format!("receiver speed {receiver_speed} must be non-negative")));
    }
    if !(sound > receiver_speed) {
        return Err(Error::Propagation {
            sound,
            receiver: receiver_speed,
        });
    }
    Ok(separation / (sound - receiver_speed))
}

/// Mean of the pursuer→target and target→pursuer delays over all pursuers,
/// plus a fixed per-link modem latency (seconds).
///
/// `speeds` holds one entry per pursuer followed by the target speed.
pub fn average_delay(state: &GameState, speeds: &[f64], sound: f64, latency: f64) -> Result<f64> {
    let m = state.num_pursuers();
    if m == 0 {
        return Err(domain("average delay needs at least one pursuer"));
    }
    if speeds.len() != m + 1 {
        return Err(domain(format!("expected {} speeds, got {}", m + 1, speeds.len())));
    }
    if !(latency >= 0.0) {
        return Err(domain(format!("latency {latency} must be non-negative")));
    }
    let target_speed = speeds[m];
    let mut total = 0.0;
    for (e, &own_speed) in state.relative_vectors().iter().zip(speeds) {
        let sep = e.norm();
        total += one_way_delay(sep, target_speed, sound)? + one_way_delay(sep, own_speed, sound)?;
    }
    Ok(total / (2.0 * m as f64) + latency)
}

/// Whole-slot delay, floored.
pub fn delay_slots(delay: f64) -> Result<usize> {
    if !(delay >= 0.0) || !delay.is_finite() {
        return Err(domain(format!("delay {delay} must be finite and non-negative")));
    }
    Ok(delay.floor() as usize)
}

/// Result of a delayed lookup; `truncated` is set when the requested slot
/// predates the retained history.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedView<'a> {
    pub state: &'a GameState,
    pub slot: usize,
    pub truncated: bool,
}

/// Contiguous history of game states, newest last.
#[derive(Debug, Clone)]
pub struct DelayBuffer {
    capacity: usize,
    entries: VecDeque<GameState>,
}

impl DelayBuffer {
    /// Retains the newest state plus `capacity` predecessors.
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn oldest_slot(&self) -> Option<usize> {
        self.entries.front().map(|s| s.slot)
    }

    pub fn newest(&self) -> Option<&GameState> {
        self.entries.back()
    }

    /// Appends the state for the next slot. Slots must be contiguous.
    pub fn push(&mut self, state: GameState) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if state.slot != last.slot + 1 {
                return Err(Error::State(format!(
                    "delay buffer expects slot {}, got {}",
                    last.slot + 1,
                    state.slot
                )));
            }
        }
        self.entries.push_back(state);
        while self.entries.len() > self.capacity + 1 {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// State at slot `now − ⌊delay⌋`, or the oldest retained state when the
    /// history is too short.
    pub fn delayed_view(&self, now: usize, delay: f64) -> Result<DelayedView<'_>> {
        let (Some(oldest), Some(newest)) = (self.entries.front(), self.entries.back()) else {
            return Err(Error::State("delay buffer is empty".into()));
        };
        if now < oldest.slot || now > newest.slot {
            return Err(Error::State(format!(
                "slot {now} outside buffered range [{}, {}]",
                oldest.slot, newest.slot
            )));
        }
        let lag = delay_slots(delay)?;
        let (slot, truncated) = match now.checked_sub(lag) {
            Some(s) if s >= oldest.slot => (s, false),
            _ => (oldest.slot, true),
        };
        let state = &self.entries[slot - oldest.slot];
        Ok(DelayedView {
            state,
            slot,
            truncated,
        })
    }
}
