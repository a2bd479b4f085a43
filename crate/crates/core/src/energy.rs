//! Battery accounting with state-based current draw and duty cycling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::NodeAddress;
use crate::scenario::Scenario;

const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("node battery is exhausted")]
    NodeDead,
    #[error("invalid energy model: {0}")]
    InvalidModel(&'static str),
    #[error("invalid duty cycle: {0}")]
    InvalidDutyCycle(&'static str),
}

/// Currents in mA at a fixed supply voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub voltage: f64,
    pub current_tx: f64,
    pub current_rx_idle: f64,
    pub current_sleep: f64,
    pub current_mcu_active: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { voltage: 3.3, current_tx: 45.0, current_rx_idle: 31.0, current_sleep: 0.001, current_mcu_active: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerState {
    Tx,
    RxIdle,
    Sleep,
    /// Microcontroller running; overlaps the radio states while awake.
    McuActive,
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.voltage > 0.0 && self.voltage.is_finite()) {
            return Err(EnergyError::InvalidModel("voltage must be > 0"));
        }
        let currents = [self.current_tx, self.current_rx_idle, self.current_sleep, self.current_mcu_active];
        if !currents.iter().all(|c| *c >= 0.0 && c.is_finite()) {
            return Err(EnergyError::InvalidModel("currents must be >= 0"));
        }
        Ok(())
    }

    pub fn current(&self, state: PowerState) -> f64 {
        match state {
            PowerState::Tx => self.current_tx,
            PowerState::RxIdle => self.current_rx_idle,
            PowerState::Sleep => self.current_sleep,
            PowerState::McuActive => self.current_mcu_active,
        }
    }

    pub fn joules(&self, mah: f64) -> f64 {
        mah * 3600.0 * self.voltage / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DutyMode {
    AlwaysOn,
    #[default]
    DutyCycled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DutyCycle {
    pub mode: DutyMode,
    #[serde(default)]
    pub awake_window_ms: u64,
    pub period_ms: u64,
}

impl Default for DutyCycle {
    fn default() -> Self {
        Self::duty_cycled(100, 1000)
    }
}

impl DutyCycle {
    pub fn always_on(period_ms: u64) -> Self {
        Self { mode: DutyMode::AlwaysOn, awake_window_ms: period_ms, period_ms }
    }

    pub fn duty_cycled(awake_window_ms: u64, period_ms: u64) -> Self {
        Self { mode: DutyMode::DutyCycled, awake_window_ms, period_ms }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.period_ms == 0 {
            return Err(EnergyError::InvalidDutyCycle("period must be > 0"));
        }
        if self.mode == DutyMode::DutyCycled && !(self.awake_window_ms > 0 && self.awake_window_ms <= self.period_ms) {
            return Err(EnergyError::InvalidDutyCycle("0 < awake_window <= period"));
        }
        Ok(())
    }

    /// Radio-on time per period.
    pub fn awake_ms(&self) -> u64 {
        match self.mode {
            DutyMode::AlwaysOn => self.period_ms,
            DutyMode::DutyCycled => self.awake_window_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub state: PowerState,
    pub duration_ms: f64,
}

/// Result of drawing charge over an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drain {
    Alive,
    /// The battery ran out this far into the interval.
    Died { after_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    /// `None` is an unlimited (mains) supply.
    pub capacity_mah: Option<f64>,
    pub consumed_mah: f64,
    pub history: Vec<Segment>,
}

impl BatteryState {
    pub fn new(capacity_mah: Option<f64>) -> Self {
        Self { capacity_mah, consumed_mah: 0.0, history: Vec::new() }
    }

    pub fn is_dead(&self) -> bool {
        self.capacity_mah.is_some_and(|c| self.consumed_mah >= c)
    }

    pub fn remaining_mah(&self) -> f64 {
        self.capacity_mah.map_or(f64::INFINITY, |c| (c - self.consumed_mah).max(0.0))
    }

    /// Draws `current(state) × duration` from the battery.
    pub fn account(&mut self, state: PowerState, duration_ms: f64, model: &EnergyModel) -> Result<Drain, EnergyError> {
        self.drain(&[state], duration_ms, model)
    }

    /// Draws the summed current of concurrently active `states`. If the
    /// battery empties part-way, only the portion up to exhaustion is
    /// recorded.
    pub fn drain(&mut self, states: &[PowerState], duration_ms: f64, model: &EnergyModel) -> Result<Drain, EnergyError> {
        if self.is_dead() {
            return Err(EnergyError::NodeDead);
        }
        if duration_ms <= 0.0 {
            return Ok(Drain::Alive);
        }
        let current: f64 = states.iter().map(|s| model.current(*s)).sum();
        let needed = current * duration_ms / MS_PER_HOUR;
        let remaining = self.remaining_mah();
        let (span, outcome) = if needed >= remaining {
            let after = remaining * MS_PER_HOUR / current;
            (after, Drain::Died { after_ms: after })
        } else {
            (duration_ms, Drain::Alive)
        };
        for &state in states {
            self.history.push(Segment { state, duration_ms: span });
            self.consumed_mah += model.current(state) * span / MS_PER_HOUR;
        }
        if let (Drain::Died { .. }, Some(cap)) = (outcome, self.capacity_mah) {
            self.consumed_mah = cap;
        }
        Ok(outcome)
    }

    /// Charge implied by the recorded history.
    pub fn integrated_mah(&self, model: &EnergyModel) -> f64 {
        self.history.iter().map(|s| model.current(s.state) * s.duration_ms / MS_PER_HOUR).sum()
    }
}

/// Per-node energy bookkeeping for one duty period at a time.
#[derive(Debug, Clone)]
pub struct EnergyMeter {
    pub battery: BatteryState,
    pending_tx_ms: f64,
    pub dead_at_ms: Option<f64>,
}

impl EnergyMeter {
    pub fn new(capacity_mah: Option<f64>) -> Self {
        Self { battery: BatteryState::new(capacity_mah), pending_tx_ms: 0.0, dead_at_ms: None }
    }

    pub fn add_tx(&mut self, airtime_ms: f64) {
        self.pending_tx_ms += airtime_ms;
    }

    /// Accounts the period starting at `start_ms`. The radio transmits first,
    /// then idles for the rest of the awake window (stretched if the traffic
    /// does not fit), then sleeps. Returns the death time if the battery ran
    /// out.
    pub fn close_period(&mut self, start_ms: f64, duty: &DutyCycle, model: &EnergyModel) -> Option<f64> {
        if self.dead_at_ms.is_some() {
            return None;
        }
        let period = duty.period_ms as f64;
        let tx = self.pending_tx_ms.min(period);
        self.pending_tx_ms = 0.0;
        let awake = (duty.awake_ms() as f64).max(tx).min(period);
        let slices: [(&[PowerState], f64); 3] = [
            (&[PowerState::Tx, PowerState::McuActive], tx),
            (&[PowerState::RxIdle, PowerState::McuActive], awake - tx),
            (&[PowerState::Sleep], period - awake),
        ];
        let mut offset = start_ms;
        for (states, span) in slices {
            match self.battery.drain(states, span, model) {
                Ok(Drain::Alive) => offset += span,
                Ok(Drain::Died { after_ms }) => {
                    let at = offset + after_ms;
                    self.dead_at_ms = Some(at);
                    return Some(at);
                }
                Err(_) => return None,
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEnergy {
    pub consumed_mah: f64,
    pub joules: f64,
    pub dead_at_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub nodes: BTreeMap<NodeAddress, NodeEnergy>,
    /// First-node-death time, or the run duration if every node survived.
    pub network_lifetime_ms: u64,
}

pub fn energy_report(
    meters: &BTreeMap<NodeAddress, EnergyMeter>,
    model: &EnergyModel,
    duration_ms: u64,
) -> EnergyReport {
    let nodes: BTreeMap<_, _> = meters
        .iter()
        .map(|(&addr, m)| {
            let consumed = m.battery.integrated_mah(model);
            (addr, NodeEnergy { consumed_mah: consumed, joules: model.joules(consumed), dead_at_ms: m.dead_at_ms })
        })
        .collect();
    let first_death = nodes.values().filter_map(|n| n.dead_at_ms).min_by(f64::total_cmp);
    EnergyReport { nodes, network_lifetime_ms: first_death.map_or(duration_ms, |t| t.floor() as u64) }
}

/// First-node-death time of `scenario` under the given duty cycle and
/// currents, found by simulating the full run.
pub fn lifetime(scenario: &Scenario, duty: DutyCycle, model: EnergyModel) -> u64 {
    let mut s = scenario.clone();
    s.energy.duty_cycle = duty;
    s.energy.model = model;
    crate::sim::Simulation::new(s).expect("scenario topology is valid").run_to_end().energy.network_lifetime_ms
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tx_ten_seconds() {
        let model = EnergyModel::default();
        let mut b = BatteryState::new(Some(100.0));
        b.account(PowerState::Tx, 10_000.0, &model).unwrap();
        assert!((b.consumed_mah - 0.125).abs() < 1e-12);
        assert!((model.joules(b.consumed_mah) - 1.485).abs() < 1e-12);
    }

    #[test]
    fn zero_draw_and_zero_duration() {
        let model = EnergyModel { current_sleep: 0.0, ..EnergyModel::default() };
        let mut b = BatteryState::new(Some(1.0));
        b.account(PowerState::Sleep, 1e9, &model).unwrap();
        assert_eq!(b.consumed_mah, 0.0);
        b.account(PowerState::Tx, 0.0, &model).unwrap();
        assert_eq!(b.consumed_mah, 0.0);
    }

    #[test]
    fn death_is_exact_and_final() {
        let model = EnergyModel::default();
        let mut b = BatteryState::new(Some(1.0));
        let out = b.account(PowerState::RxIdle, 1e7, &model).unwrap();
        match out {
            Drain::Died { after_ms } => assert!((after_ms - 3_600_000.0 / 31.0).abs() < 1e-6),
            Drain::Alive => panic!("should have died"),
        }
        assert!(b.is_dead());
        assert_eq!(b.consumed_mah, 1.0);
        assert_eq!(b.account(PowerState::Sleep, 1.0, &model), Err(EnergyError::NodeDead));
    }

    #[test]
    fn report_matches_account() {
        let model = EnergyModel::default();
        let mut m = EnergyMeter::new(Some(100.0));
        m.battery.account(PowerState::Tx, 10_000.0, &model).unwrap();
        let mut meters = BTreeMap::new();
        meters.insert(NodeAddress(1), m.clone());
        meters.insert(NodeAddress(2), m);
        meters.insert(NodeAddress(3), EnergyMeter::new(Some(100.0)));
        let r = energy_report(&meters, &model, 5000);
        let n1 = &r.nodes[&NodeAddress(1)];
        assert!((n1.consumed_mah - 0.125).abs() < 1e-12);
        assert!((n1.joules - 1.485).abs() < 1e-12);
        assert_eq!(r.nodes[&NodeAddress(1)], r.nodes[&NodeAddress(2)]);
        assert_eq!(r.nodes[&NodeAddress(3)].consumed_mah, 0.0);
        assert_eq!(r.nodes[&NodeAddress(3)].joules, 0.0);
        assert_eq!(r.network_lifetime_ms, 5000);
    }

    #[test]
    fn duty_cycle_validation() {
        assert!(DutyCycle::duty_cycled(0, 1000).validate().is_err());
        assert!(DutyCycle::duty_cycled(1001, 1000).validate().is_err());
        assert!(DutyCycle::duty_cycled(100, 1000).validate().is_ok());
        assert!(DutyCycle::always_on(1000).validate().is_ok());
    }

    #[test]
    fn period_slices() {
        let model = EnergyModel::default();
        let mut m = EnergyMeter::new(None);
        m.add_tx(5.0);
        m.close_period(0.0, &DutyCycle::duty_cycled(100, 1000), &model);
        // 5 ms at 55 mA, 95 ms at 41 mA, 900 ms at 0.001 mA
        let expected = (5.0 * 55.0 + 95.0 * 41.0 + 900.0 * 0.001) / MS_PER_HOUR;
        assert!((m.battery.consumed_mah - expected).abs() < 1e-15);
    }
}
