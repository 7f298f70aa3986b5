use serde::{Deserialize, Serialize};

use super::{Decision, ScenarioConfig};

/// Absolute tolerance, in kWh, below which a residual is not reported.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintId {
    /// Deferrable appliance energy delivered by its deadline.
    DeferrableEnergy,
    /// Appliance load within `[per_slot_min, per_slot_max]`.
    ApplianceBounds,
    /// Consumption equals the sum of appliance loads.
    ApplianceBalance,
    /// Consumption within `[d_min, d_max]`.
    ConsumptionBounds,
    /// Total sold equals the sum of per-peer sales.
    SalesAggregate,
    /// Total bought equals the sum of per-peer purchases.
    PurchaseAggregate,
    /// Battery level within `[0, capacity]`.
    BatteryBounds,
    /// Battery ends the horizon where it started.
    BatteryCycle,
    /// Charge and discharge within rate limits.
    BatteryRate,
    /// Consumption equals delivered energy net of sales and storage.
    EnergyBalance,
    /// Every decision variable is non-negative.
    Nonnegativity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintId,
    pub slot: Option<usize>,
    pub magnitude: f64,
}

/// Checks prosumer `i`'s decision against its own constraint set. The
/// market coupling between buyers and sellers is not a per-prosumer
/// constraint and is not checked here.
///
/// Consumption is tied to appliance loads only when the prosumer has
/// appliances; otherwise `d` is freely dispatchable within its bounds.
pub fn feasibility_check(
    scenario: &ScenarioConfig,
    i: usize,
    decision: &Decision,
) -> Vec<Violation> {
    let spec = &scenario.prosumers[i];
    let n = scenario.num_prosumers();
    let mut out = Vec::new();
    let mut report = |constraint, slot, magnitude: f64| {
        if magnitude > FEASIBILITY_TOL {
            out.push(Violation {
                constraint,
                slot,
                magnitude,
            });
        }
    };

    for (a, appliance) in spec.appliances.iter().enumerate() {
        if let super::ApplianceKind::Deferrable {
            total_energy,
            deadline,
        } = appliance.kind
        {
            let delivered: f64 = decision.slots[..deadline]
                .iter()
                .map(|s| s.appliance_loads[a])
                .sum();
            report(
                ConstraintId::DeferrableEnergy,
                None,
                total_energy - delivered,
            );
        }
    }

    let battery = &spec.battery;
    let r_grid = scenario.transmission.grid[i];
    for (t, s) in decision.slots.iter().enumerate() {
        let slot = Some(t);
        for (a, appliance) in spec.appliances.iter().enumerate() {
            let x = s.appliance_loads[a];
            report(
                ConstraintId::ApplianceBounds,
                slot,
                (appliance.per_slot_min - x).max(x - appliance.per_slot_max),
            );
        }
        if !spec.appliances.is_empty() {
            let total: f64 = s.appliance_loads.iter().sum();
            report(
                ConstraintId::ApplianceBalance,
                slot,
                (s.consumption - total).abs(),
            );
        }
        report(
            ConstraintId::ConsumptionBounds,
            slot,
            (spec.d_min[t] - s.consumption).max(s.consumption - spec.d_max[t]),
        );

        let others = || (0..n).filter(move |&j| j != i);
        let sold: f64 = others().map(|j| s.sold_to[j]).sum();
        report(ConstraintId::SalesAggregate, slot, (s.sold - sold).abs());
        let bought: f64 = others().map(|j| s.bought_from[j]).sum();
        report(
            ConstraintId::PurchaseAggregate,
            slot,
            (s.bought - bought).abs(),
        );

        report(
            ConstraintId::BatteryRate,
            slot,
            (s.charge - battery.max_charge_rate).max(s.discharge - battery.max_discharge_rate),
        );

        let delivered: f64 = others()
            .map(|j| s.bought_from[j] * scenario.transmission.peer[i][j])
            .sum();
        // Charging is scaled by the discharge efficiency and vice versa.
        let balance = delivered - s.sold + s.grid * r_grid - s.charge * battery.discharge_eff
            + s.discharge * battery.charge_eff;
        report(
            ConstraintId::EnergyBalance,
            slot,
            (s.consumption - balance).abs(),
        );

        let own_entries = [s.bought_from[i], s.sold_to[i]];
        let most_negative = [
            s.grid,
            s.consumption,
            s.sold,
            s.bought,
            s.charge,
            s.discharge,
        ]
        .into_iter()
        .chain(others().flat_map(|j| [s.bought_from[j], s.sold_to[j]]))
        .chain(s.appliance_loads.iter().copied())
        .fold(0.0_f64, |acc, v| acc.max(-v));
        report(ConstraintId::Nonnegativity, slot, most_negative);
        // Self-trade entries carry no meaning and must stay at zero.
        report(
            ConstraintId::Nonnegativity,
            slot,
            own_entries.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())),
        );
    }

    let trajectory = decision.battery_trajectory(spec);
    for (t, &level) in trajectory.iter().enumerate().skip(1) {
        report(
            ConstraintId::BatteryBounds,
            Some(t),
            (-level).max(level - battery.capacity),
        );
    }
    let end = trajectory.last().copied().unwrap_or(battery.initial);
    report(
        ConstraintId::BatteryCycle,
        None,
        (end - battery.initial).abs(),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::bare_scenario;
    use crate::domain::{ApplianceSpec, BatterySpec};

    #[test]
    fn zero_decision_is_feasible_on_empty_prosumer() {
        let mut scenario = bare_scenario(2, 3);
        scenario.prosumers[0].appliances = vec![ApplianceSpec::deferrable(0.0, 3, 2.0)];
        let decision = Decision::zero(3, 2, 1);
        assert!(feasibility_check(&scenario, 0, &decision).is_empty());
    }

    #[test]
    fn battery_overflow_is_reported() {
        let mut scenario = bare_scenario(1, 2);
        scenario.prosumers[0].battery = BatterySpec {
            capacity: 4.0,
            initial: 0.0,
            charge_eff: 1.0,
            discharge_eff: 1.0,
            max_charge_rate: 10.0,
            max_discharge_rate: 10.0,
        };
        let mut decision = Decision::zero(2, 1, 0);
        decision.slots[0].charge = 5.0;
        let violations = feasibility_check(&scenario, 0, &decision);
        let overflow = violations
            .iter()
            .find(|v| v.constraint == ConstraintId::BatteryBounds)
            .expect("overflow reported");
        assert_eq!(overflow.slot, Some(1));
        assert!((overflow.magnitude - 1.0).abs() < 1e-12);
    }

    #[test]
    fn appliance_mismatch_is_reported() {
        let mut scenario = bare_scenario(1, 1);
        scenario.prosumers[0].appliances = vec![ApplianceSpec::deferrable(0.0, 1, 5.0)];
        let mut decision = Decision::zero(1, 1, 1);
        decision.slots[0].appliance_loads[0] = 1.0;
        decision.slots[0].consumption = 1.5;
        decision.slots[0].grid = 1.5 / 0.8;
        let violations = feasibility_check(&scenario, 0, &decision);
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert_eq!(violations[0].constraint, ConstraintId::ApplianceBalance);
        assert!((violations[0].magnitude - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unmet_deadline_and_negative_values() {
        let mut scenario = bare_scenario(2, 2);
        scenario.prosumers[0].appliances = vec![ApplianceSpec::deferrable(3.0, 1, 5.0)];
        let mut decision = Decision::zero(2, 2, 1);
        decision.slots[1].sold_to[1] = -1.0;
        decision.slots[1].sold = -1.0;
        decision.slots[1].consumption = 1.0;
        let ids: Vec<_> = feasibility_check(&scenario, 0, &decision)
            .iter()
            .map(|v| v.constraint)
            .collect();
        assert!(ids.contains(&ConstraintId::DeferrableEnergy));
        assert!(ids.contains(&ConstraintId::Nonnegativity));
        assert!(ids.contains(&ConstraintId::ApplianceBalance));
    }
}
