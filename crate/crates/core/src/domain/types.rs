use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// Current version of the scenario JSON schema.
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Slotted planning horizon. Slot indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub slots: usize,
    /// Hours per slot.
    pub slot_duration: f64,
    pub peak_slots: BTreeSet<usize>,
}

impl TimeGrid {
    pub fn new(
        slots: usize,
        slot_duration: f64,
        peak_slots: BTreeSet<usize>,
    ) -> Result<Self, DomainError> {
        let grid = Self {
            slots,
            slot_duration,
            peak_slots,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Hourly slots starting at `start_hour`, with peak hours 9-12 and 16-18.
    pub fn daytime(slots: usize, start_hour: usize) -> Self {
        let peak_slots = (0..slots)
            .filter(|t| {
                let hour = (start_hour + t) % 24;
                (9..12).contains(&hour) || (16..18).contains(&hour)
            })
            .collect();
        Self {
            slots,
            slot_duration: 1.0,
            peak_slots,
        }
    }

    pub fn is_peak(&self, slot: usize) -> bool {
        self.peak_slots.contains(&slot)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.slots == 0 {
            return Err(DomainError::invalid(
                "time.slots",
                "horizon must contain at least one slot",
            ));
        }
        if !(self.slot_duration > 0.0 && self.slot_duration.is_finite()) {
            return Err(DomainError::invalid(
                "time.slot_duration",
                "must be positive",
            ));
        }
        if let Some(&bad) = self.peak_slots.iter().find(|&&t| t >= self.slots) {
            return Err(DomainError::invalid(
                "time.peak_slots",
                format!("slot {bad} outside horizon of {} slots", self.slots),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApplianceKind {
    /// Needs `total_energy` kWh delivered within the first `deadline` slots.
    Deferrable {
        total_energy: f64,
        deadline: usize,
    },
    Nondeferrable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSpec {
    #[serde(flatten)]
    pub kind: ApplianceKind,
    pub per_slot_min: f64,
    pub per_slot_max: f64,
}

impl ApplianceSpec {
    pub fn deferrable(total_energy: f64, deadline: usize, per_slot_max: f64) -> Self {
        Self {
            kind: ApplianceKind::Deferrable {
                total_energy,
                deadline,
            },
            per_slot_min: 0.0,
            per_slot_max,
        }
    }

    /// Fixed per-slot profile.
    pub fn fixed(load: f64) -> Self {
        Self {
            kind: ApplianceKind::Nondeferrable,
            per_slot_min: load,
            per_slot_max: load,
        }
    }

    pub fn is_deferrable(&self) -> bool {
        matches!(self.kind, ApplianceKind::Deferrable { .. })
    }

    fn validate(&self, field: &str, slots: usize) -> Result<(), DomainError> {
        if !(self.per_slot_min >= 0.0
            && self.per_slot_min <= self.per_slot_max
            && self.per_slot_max.is_finite())
        {
            return Err(DomainError::invalid(
                field,
                "need 0 <= per_slot_min <= per_slot_max",
            ));
        }
        if let ApplianceKind::Deferrable {
            total_energy,
            deadline,
        } = self.kind
        {
            if !(total_energy >= 0.0 && total_energy.is_finite()) {
                return Err(DomainError::invalid(
                    field,
                    "total_energy must be non-negative",
                ));
            }
            if deadline > slots {
                return Err(DomainError::invalid(
                    field,
                    format!("deadline {deadline} beyond horizon {slots}"),
                ));
            }
            if total_energy > deadline as f64 * self.per_slot_max + 1e-12 {
                return Err(DomainError::invalid(
                    field,
                    format!(
                        "total_energy {total_energy} cannot be met by deadline {deadline} at {} per slot",
                        self.per_slot_max
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub capacity: f64,
    pub initial: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
    pub max_charge_rate: f64,
    pub max_discharge_rate: f64,
}

impl BatterySpec {
    /// A prosumer without storage. Harvested energy still passes through
    /// the (zero-capacity) battery node, so discharge is left unbounded
    /// enough to forward it.
    pub fn none(pass_through: f64) -> Self {
        Self {
            capacity: 0.0,
            initial: 0.0,
            charge_eff: 1.0,
            discharge_eff: 1.0,
            max_charge_rate: 0.0,
            max_discharge_rate: pass_through,
        }
    }

    fn validate(&self, field: &str) -> Result<(), DomainError> {
        if !(self.capacity >= 0.0 && self.capacity.is_finite()) {
            return Err(DomainError::invalid(field, "capacity must be non-negative"));
        }
        if !(self.initial >= 0.0 && self.initial <= self.capacity) {
            return Err(DomainError::invalid(
                field,
                "initial charge must lie in [0, capacity]",
            ));
        }
        for (name, eff) in [
            ("charge_eff", self.charge_eff),
            ("discharge_eff", self.discharge_eff),
        ] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(DomainError::invalid(
                    format!("{field}.{name}"),
                    "efficiency must lie in (0, 1]",
                ));
            }
        }
        if !(self.max_charge_rate >= 0.0 && self.max_discharge_rate >= 0.0) {
            return Err(DomainError::invalid(field, "rates must be non-negative"));
        }
        Ok(())
    }
}

/// Quadratic utility `U(d) = beta_t d - zeta d^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub beta: Vec<f64>,
    pub zeta: f64,
}

impl UtilityParams {
    pub fn value(&self, slot: usize, consumption: f64) -> f64 {
        self.beta[slot] * consumption - self.zeta * consumption * consumption
    }

    pub fn marginal(&self, slot: usize, consumption: f64) -> f64 {
        self.beta[slot] - 2.0 * self.zeta * consumption
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSpec {
    pub id: usize,
    pub appliances: Vec<ApplianceSpec>,
    pub battery: BatterySpec,
    /// Forecast harvest per slot, kWh.
    pub renewable: Vec<f64>,
    pub utility: UtilityParams,
    pub d_min: Vec<f64>,
    pub d_max: Vec<f64>,
}

impl ProsumerSpec {
    fn validate(&self, index: usize, slots: usize) -> Result<(), DomainError> {
        let field = |name: &str| format!("prosumers[{index}].{name}");
        for (name, len) in [
            ("renewable", self.renewable.len()),
            ("utility.beta", self.utility.beta.len()),
            ("d_min", self.d_min.len()),
            ("d_max", self.d_max.len()),
        ] {
            if len != slots {
                return Err(DomainError::invalid(
                    field(name),
                    format!("expected {slots} entries, got {len}"),
                ));
            }
        }
        if self.renewable.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(DomainError::invalid(
                field("renewable"),
                "harvest must be non-negative",
            ));
        }
        if self
            .utility
            .beta
            .iter()
            .any(|&b| !(b >= 0.0 && b.is_finite()))
        {
            return Err(DomainError::invalid(
                field("utility.beta"),
                "beta must be non-negative",
            ));
        }
        if !(self.utility.zeta >= 0.0 && self.utility.zeta.is_finite()) {
            return Err(DomainError::invalid(
                field("utility.zeta"),
                "zeta must be non-negative",
            ));
        }
        for (t, (&lo, &hi)) in self.d_min.iter().zip(&self.d_max).enumerate() {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(DomainError::invalid(
                    field("d_min"),
                    format!("need 0 <= d_min <= d_max at slot {t}"),
                ));
            }
        }
        let fixed: f64 = self
            .appliances
            .iter()
            .filter(|a| !a.is_deferrable())
            .map(|a| a.per_slot_min)
            .sum();
        if let Some(t) = self.d_max.iter().position(|&hi| fixed > hi + 1e-12) {
            return Err(DomainError::invalid(
                field("d_max"),
                format!("nondeferrable demand {fixed} exceeds d_max at slot {t}"),
            ));
        }
        for (j, appliance) in self.appliances.iter().enumerate() {
            appliance.validate(&field(&format!("appliances[{j}]")), slots)?;
        }
        self.battery.validate(&field("battery"))
    }
}

/// Peer-to-peer and grid transmission efficiencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionModel {
    /// `peer[i][j]`: fraction of energy bought by `i` from `j` that arrives.
    pub peer: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
}

impl TransmissionModel {
    pub fn uniform(n: usize, peer: f64, grid: f64) -> Self {
        Self {
            peer: vec![vec![peer; n]; n],
            grid: vec![grid; n],
        }
    }

    fn validate(&self, n: usize) -> Result<(), DomainError> {
        if self.peer.len() != n || self.peer.iter().any(|row| row.len() != n) {
            return Err(DomainError::invalid(
                "transmission.peer",
                format!("expected a {n}x{n} matrix"),
            ));
        }
        if self.grid.len() != n {
            return Err(DomainError::invalid(
                "transmission.grid",
                format!("expected {n} entries"),
            ));
        }
        for i in 0..n {
            let r_grid = self.grid[i];
            if !(r_grid > 0.0 && r_grid <= 1.0) {
                return Err(DomainError::invalid(
                    "transmission.grid",
                    format!("entry {i} outside (0, 1]"),
                ));
            }
            for j in (0..n).filter(|&j| j != i) {
                let r = self.peer[i][j];
                if !(r > 0.0 && r <= 1.0) {
                    return Err(DomainError::invalid(
                        "transmission.peer",
                        format!("entry ({i},{j}) outside (0, 1]"),
                    ));
                }
                if r <= r_grid {
                    return Err(DomainError::invalid(
                        "transmission.peer",
                        format!(
                            "peer efficiency ({i},{j}) = {r} must exceed grid efficiency {r_grid}"
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Grid price slope per slot: the price is `gamma_t` times total grid load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPricing {
    pub gamma: Vec<f64>,
}

/// Piecewise quadratic generation cost with breakpoint in kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationCost {
    pub a1: f64,
    pub c1: f64,
    pub a2: f64,
    pub c2: f64,
    pub breakpoint: f64,
}

impl GenerationCost {
    /// Coefficients used in the reference experiments, breakpoint 2 MW held
    /// for one slot of `slot_hours`.
    pub fn reference(slot_hours: f64) -> Self {
        Self {
            a1: 1.0,
            c1: 1.0,
            a2: 2.0,
            c2: 2.0,
            breakpoint: 2.0 * 1000.0 * slot_hours,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub time: TimeGrid,
    pub prosumers: Vec<ProsumerSpec>,
    pub transmission: TransmissionModel,
    pub grid: GridPricing,
    pub cost: GenerationCost,
}

impl ScenarioConfig {
    pub fn num_prosumers(&self) -> usize {
        self.prosumers.len()
    }

    pub fn num_slots(&self) -> usize {
        self.time.slots
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(DomainError::invalid(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCENARIO_SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        self.time.validate()?;
        let n = self.prosumers.len();
        if n == 0 {
            return Err(DomainError::invalid(
                "prosumers",
                "at least one prosumer required",
            ));
        }
        for (i, p) in self.prosumers.iter().enumerate() {
            p.validate(i, self.time.slots)?;
        }
        self.transmission.validate(n)?;
        if self.grid.gamma.len() != self.time.slots {
            return Err(DomainError::invalid(
                "grid.gamma",
                format!("expected {} entries", self.time.slots),
            ));
        }
        if self.grid.gamma.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(DomainError::invalid("grid.gamma", "gamma must be positive"));
        }
        let c = &self.cost;
        if !(c.a1 > 0.0 && c.a2 > 0.0 && c.breakpoint > 0.0) {
            return Err(DomainError::invalid(
                "cost",
                "need a1 > 0, a2 > 0 and breakpoint > 0",
            ));
        }
        Ok(())
    }
}

/// One slot of a prosumer's strategy. Per-peer vectors have one entry per
/// prosumer; the entry for the prosumer itself is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub grid: f64,
    pub consumption: f64,
    pub sold: f64,
    pub bought: f64,
    pub bought_from: Vec<f64>,
    pub sold_to: Vec<f64>,
    pub charge: f64,
    pub discharge: f64,
    pub appliance_loads: Vec<f64>,
}

impl SlotDecision {
    pub fn zero(num_prosumers: usize, num_appliances: usize) -> Self {
        Self {
            grid: 0.0,
            consumption: 0.0,
            sold: 0.0,
            bought: 0.0,
            bought_from: vec![0.0; num_prosumers],
            sold_to: vec![0.0; num_prosumers],
            charge: 0.0,
            discharge: 0.0,
            appliance_loads: vec![0.0; num_appliances],
        }
    }
}

/// A prosumer's strategy over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub slots: Vec<SlotDecision>,
}

impl Decision {
    pub fn zero(num_slots: usize, num_prosumers: usize, num_appliances: usize) -> Self {
        Self {
            slots: vec![SlotDecision::zero(num_prosumers, num_appliances); num_slots],
        }
    }

    /// Battery state `B^1..B^{T+1}` obtained by applying the storage
    /// recursion `B^{t+1} = B^t + E_t - e_t + b_t`.
    pub fn battery_trajectory(&self, spec: &ProsumerSpec) -> Vec<f64> {
        let mut level = spec.battery.initial;
        let mut out = Vec::with_capacity(self.slots.len() + 1);
        out.push(level);
        for (slot, harvest) in self.slots.iter().zip(&spec.renewable) {
            level += harvest - slot.discharge + slot.charge;
            out.push(level);
        }
        out
    }

    /// Flattened decision vector in a fixed field order; used for distances.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.slots {
            out.extend_from_slice(&s.appliance_loads);
            out.extend_from_slice(&[s.consumption, s.grid]);
            out.extend_from_slice(&s.sold_to);
            out.push(s.sold);
            out.extend_from_slice(&s.bought_from);
            out.extend_from_slice(&[s.bought, s.charge, s.discharge]);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Decision) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub decisions: Vec<Decision>,
}

impl StrategyProfile {
    pub fn zero(scenario: &ScenarioConfig) -> Self {
        let n = scenario.num_prosumers();
        let decisions = scenario
            .prosumers
            .iter()
            .map(|p| Decision::zero(scenario.num_slots(), n, p.appliances.len()))
            .collect();
        Self { decisions }
    }

    /// Total grid load per slot.
    pub fn grid_loads(&self) -> Vec<f64> {
        let slots = self.decisions.first().map_or(0, |d| d.slots.len());
        (0..slots)
            .map(|t| self.decisions.iter().map(|d| d.slots[t].grid).sum())
            .collect()
    }

    /// Total grid load per slot excluding prosumer `i`.
    pub fn others_grid_loads(&self, i: usize) -> Vec<f64> {
        let slots = self.decisions.first().map_or(0, |d| d.slots.len());
        (0..slots)
            .map(|t| {
                self.decisions
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i)
                    .map(|(_, d)| d.slots[t].grid)
                    .sum()
            })
            .collect()
    }

    /// `demand[i][t] = sum_j q_{j,i,t}`: energy other prosumers want from `i`.
    pub fn peer_demand(&self) -> Vec<Vec<f64>> {
        let n = self.decisions.len();
        let slots = self.decisions.first().map_or(0, |d| d.slots.len());
        (0..n)
            .map(|i| {
                (0..slots)
                    .map(|t| {
                        self.decisions
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, d)| d.slots[t].bought_from[i])
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// `supply[i][t] = s_{i,t}`.
    pub fn supply(&self) -> Vec<Vec<f64>> {
        self.decisions
            .iter()
            .map(|d| d.slots.iter().map(|s| s.sold).collect())
            .collect()
    }

    pub fn check_shape(&self, scenario: &ScenarioConfig) -> Result<(), DomainError> {
        let n = scenario.num_prosumers();
        if self.decisions.len() != n {
            return Err(DomainError::Shape(format!(
                "profile has {} decisions, scenario has {n} prosumers",
                self.decisions.len()
            )));
        }
        for (i, d) in self.decisions.iter().enumerate() {
            check_decision_shape(d, i, scenario)?;
        }
        Ok(())
    }
}

pub(crate) fn check_decision_shape(
    d: &Decision,
    i: usize,
    scenario: &ScenarioConfig,
) -> Result<(), DomainError> {
    let n = scenario.num_prosumers();
    let slots = scenario.num_slots();
    if d.slots.len() != slots {
        return Err(DomainError::Shape(format!(
            "decision {i} has {} slots, expected {slots}",
            d.slots.len()
        )));
    }
    let appliances = scenario.prosumers[i].appliances.len();
    for (t, s) in d.slots.iter().enumerate() {
        if s.bought_from.len() != n || s.sold_to.len() != n || s.appliance_loads.len() != appliances
        {
            return Err(DomainError::Shape(format!(
                "decision {i} slot {t} has inconsistent vector lengths"
            )));
        }
    }
    Ok(())
}

/// Exchange price `mu[i][t]` charged by seller `i` in slot `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangePrices {
    pub mu: Vec<Vec<f64>>,
}

impl ExchangePrices {
    pub fn uniform(num_prosumers: usize, num_slots: usize, value: f64) -> Self {
        Self {
            mu: vec![vec![value; num_slots]; num_prosumers],
        }
    }

    pub fn check_shape(&self, scenario: &ScenarioConfig) -> Result<(), DomainError> {
        let slots = scenario.num_slots();
        if self.mu.len() != scenario.num_prosumers() || self.mu.iter().any(|row| row.len() != slots)
        {
            return Err(DomainError::Shape(format!(
                "prices must be {}x{slots}",
                scenario.num_prosumers()
            )));
        }
        if self
            .mu
            .iter()
            .flatten()
            .any(|&m| !(m >= 0.0 && m.is_finite()))
        {
            return Err(DomainError::invalid("mu", "prices must be non-negative"));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        let count = self.mu.iter().map(Vec::len).sum::<usize>();
        if count == 0 {
            return 0.0;
        }
        self.mu.iter().flatten().sum::<f64>() / count as f64
    }

    pub fn norm(&self) -> f64 {
        self.mu.iter().flatten().map(|m| m * m).sum::<f64>().sqrt()
    }
}
