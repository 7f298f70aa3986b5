use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    ApplianceSpec, BatterySpec, DomainError, GenerationCost, GridPricing, ProsumerSpec,
    ScenarioConfig, TimeGrid, TransmissionModel, UtilityParams, SCENARIO_SCHEMA_VERSION,
};

/// Distribution parameters for random scenarios. Powers are in kW and are
/// converted to kWh per slot with the grid's slot duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorKnobs {
    pub beta_offpeak_mean: f64,
    pub beta_peak_mean: f64,
    pub beta_std: f64,
    pub zeta: f64,
    pub renewable_mean: f64,
    pub renewable_var: f64,
    pub battery_capacity: f64,
    /// Initial charge as a fraction of capacity.
    pub initial_soc: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
    pub battery_rate: f64,
    pub r_peer: f64,
    pub r_grid: f64,
    pub gamma: f64,
    pub cost_a1: f64,
    pub cost_c1: f64,
    pub cost_a2: f64,
    pub cost_c2: f64,
    pub cost_breakpoint_mw: f64,
    /// Mean of the fixed base load; each prosumer draws uniformly within
    /// `base_load_mean +- base_load_spread`.
    pub base_load_mean: f64,
    pub base_load_spread: f64,
    /// Cap of the freely schedulable load.
    pub flexible_max: f64,
    pub ev_probability: f64,
    pub ev_energy_min: f64,
    pub ev_energy_max: f64,
    pub ev_rate: f64,
}

impl Default for GeneratorKnobs {
    fn default() -> Self {
        Self {
            beta_offpeak_mean: 0.3,
            beta_peak_mean: 0.6,
            beta_std: 0.3,
            zeta: 0.1,
            renewable_mean: 2.0,
            renewable_var: 1.0,
            battery_capacity: 10.0,
            initial_soc: 0.5,
            charge_eff: 0.95,
            discharge_eff: 0.95,
            battery_rate: 5.0,
            r_peer: 0.9,
            r_grid: 0.8,
            gamma: 0.15,
            cost_a1: 1.0,
            cost_c1: 1.0,
            cost_a2: 2.0,
            cost_c2: 2.0,
            cost_breakpoint_mw: 2.0,
            base_load_mean: 0.5,
            base_load_spread: 0.25,
            flexible_max: 4.0,
            ev_probability: 0.5,
            ev_energy_min: 4.0,
            ev_energy_max: 10.0,
            ev_rate: 3.3,
        }
    }
}

impl GeneratorKnobs {
    fn validate(&self) -> Result<(), DomainError> {
        let nonneg = [
            ("beta_offpeak_mean", self.beta_offpeak_mean),
            ("beta_peak_mean", self.beta_peak_mean),
            ("beta_std", self.beta_std),
            ("zeta", self.zeta),
            ("renewable_var", self.renewable_var),
            ("battery_capacity", self.battery_capacity),
            ("battery_rate", self.battery_rate),
            ("base_load_spread", self.base_load_spread),
            ("flexible_max", self.flexible_max),
            ("ev_energy_min", self.ev_energy_min),
            ("ev_rate", self.ev_rate),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DomainError::invalid(
                    format!("knobs.{name}"),
                    "must be non-negative",
                ));
            }
        }
        if !self.renewable_mean.is_finite() {
            return Err(DomainError::invalid(
                "knobs.renewable_mean",
                "must be finite",
            ));
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return Err(DomainError::invalid(
                "knobs.initial_soc",
                "must lie in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&self.ev_probability) {
            return Err(DomainError::invalid(
                "knobs.ev_probability",
                "must lie in [0, 1]",
            ));
        }
        if self.ev_energy_max < self.ev_energy_min {
            return Err(DomainError::invalid(
                "knobs.ev_energy_max",
                "must be at least ev_energy_min",
            ));
        }
        if self.base_load_spread > self.base_load_mean {
            return Err(DomainError::invalid(
                "knobs.base_load_spread",
                "must not exceed base_load_mean",
            ));
        }
        if !(self.gamma > 0.0) {
            return Err(DomainError::invalid("knobs.gamma", "must be positive"));
        }
        if !(self.r_grid > 0.0 && self.r_grid < self.r_peer && self.r_peer <= 1.0) {
            return Err(DomainError::invalid(
                "knobs.r_peer",
                "need 0 < r_grid < r_peer <= 1",
            ));
        }
        for (name, eff) in [
            ("charge_eff", self.charge_eff),
            ("discharge_eff", self.discharge_eff),
        ] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(DomainError::invalid(
                    format!("knobs.{name}"),
                    "must lie in (0, 1]",
                ));
            }
        }
        Ok(())
    }
}

/// Normal draw conditioned on being non-negative (rejection sampling).
fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean.max(0.0);
    }
    let normal = Normal::new(mean, std).expect("std checked non-negative");
    for _ in 0..1000 {
        let v = normal.sample(rng);
        if v >= 0.0 {
            return v;
        }
    }
    0.0
}

/// Draws a random scenario; identical `(n, time, seed, knobs)` always give
/// an identical scenario.
pub fn generate_scenario(
    n: usize,
    time: &TimeGrid,
    seed: u64,
    knobs: &GeneratorKnobs,
) -> Result<ScenarioConfig, DomainError> {
    if n == 0 {
        return Err(DomainError::invalid("n", "at least one prosumer required"));
    }
    time.validate()?;
    knobs.validate()?;
    let slots = time.slots;
    let hours = time.slot_duration;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let prosumers = (0..n)
        .map(|id| {
            let beta = (0..slots)
                .map(|t| {
                    let mean = if time.is_peak(t) {
                        knobs.beta_peak_mean
                    } else {
                        knobs.beta_offpeak_mean
                    };
                    truncated_normal(&mut rng, mean, knobs.beta_std)
                })
                .collect();
            let renewable: Vec<f64> = (0..slots)
                .map(|_| {
                    truncated_normal(&mut rng, knobs.renewable_mean, knobs.renewable_var.sqrt())
                        * hours
                })
                .collect();

            let base =
                knobs.base_load_mean + knobs.base_load_spread * (2.0 * rng.random::<f64>() - 1.0);
            let mut appliances = vec![
                ApplianceSpec::fixed(base * hours),
                ApplianceSpec::deferrable(0.0, slots, knobs.flexible_max * hours),
            ];
            if rng.random::<f64>() < knobs.ev_probability {
                let energy = knobs.ev_energy_min
                    + (knobs.ev_energy_max - knobs.ev_energy_min) * rng.random::<f64>();
                let cap = knobs.ev_rate * hours;
                // Keep the charge reachable on short horizons.
                let energy = energy.min(0.8 * cap * slots as f64);
                appliances.push(ApplianceSpec::deferrable(energy, slots, cap));
            }
            let d_min = vec![base * hours; slots];
            let d_max = vec![appliances.iter().map(|a| a.per_slot_max).sum::<f64>(); slots];

            let capacity = knobs.battery_capacity;
            let max_harvest = renewable.iter().copied().fold(0.0, f64::max);
            let battery = BatterySpec {
                capacity,
                initial: knobs.initial_soc * capacity,
                charge_eff: knobs.charge_eff,
                discharge_eff: knobs.discharge_eff,
                max_charge_rate: knobs.battery_rate * hours,
                // Harvest flows through the battery node, so discharge must at
                // least be able to forward the largest harvest.
                max_discharge_rate: (knobs.battery_rate * hours).max(max_harvest),
            };
            ProsumerSpec {
                id,
                appliances,
                battery,
                renewable,
                utility: UtilityParams {
                    beta,
                    zeta: knobs.zeta,
                },
                d_min,
                d_max,
            }
        })
        .collect();

    let scenario = ScenarioConfig {
        schema_version: SCENARIO_SCHEMA_VERSION,
        time: time.clone(),
        prosumers,
        transmission: TransmissionModel::uniform(n, knobs.r_peer, knobs.r_grid),
        grid: GridPricing {
            gamma: vec![knobs.gamma; slots],
        },
        cost: GenerationCost {
            a1: knobs.cost_a1,
            c1: knobs.cost_c1,
            a2: knobs.cost_a2,
            c2: knobs.cost_c2,
            breakpoint: knobs.cost_breakpoint_mw * 1000.0 * hours,
        },
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_in_seed() {
        let time = TimeGrid::daytime(12, 6);
        let knobs = GeneratorKnobs::default();
        let a = serde_json::to_string(&generate_scenario(4, &time, 7, &knobs).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_scenario(4, &time, 7, &knobs).unwrap()).unwrap();
        let c = serde_json::to_string(&generate_scenario(4, &time, 8, &knobs).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_renewable_is_zero() {
        let knobs = GeneratorKnobs {
            renewable_mean: 0.0,
            renewable_var: 0.0,
            ..Default::default()
        };
        let s = generate_scenario(5, &TimeGrid::daytime(6, 6), 3, &knobs).unwrap();
        assert!(s
            .prosumers
            .iter()
            .flat_map(|p| &p.renewable)
            .all(|&e| e == 0.0));
    }

    #[test]
    fn reference_parameters() {
        let s =
            generate_scenario(3, &TimeGrid::daytime(4, 6), 1, &GeneratorKnobs::default()).unwrap();
        assert_eq!(s.cost.breakpoint, 2000.0);
        assert_eq!(s.grid.gamma, vec![0.15; 4]);
        assert!(s
            .prosumers
            .iter()
            .all(|p| p.battery.capacity == 10.0 && p.utility.zeta == 0.1));
        assert_eq!(s.transmission.peer[0][1], 0.9);
        assert_eq!(s.transmission.grid[2], 0.8);
    }

    #[test]
    fn bad_knobs_rejected() {
        let time = TimeGrid::daytime(4, 6);
        assert!(generate_scenario(0, &time, 1, &GeneratorKnobs::default()).is_err());
        let knobs = GeneratorKnobs {
            beta_std: -1.0,
            ..Default::default()
        };
        assert!(generate_scenario(2, &time, 1, &knobs).is_err());
        let knobs = GeneratorKnobs {
            r_peer: 0.7,
            ..Default::default()
        };
        assert!(generate_scenario(2, &time, 1, &knobs).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn draws_are_nonnegative_and_assumption_holds(seed in any::<u64>(), n in 1usize..6, slots in 1usize..13) {
            let s = generate_scenario(n, &TimeGrid::daytime(slots, 6), seed, &GeneratorKnobs::default()).unwrap();
            for p in &s.prosumers {
                prop_assert!(p.renewable.iter().all(|&e| e >= 0.0));
                prop_assert!(p.utility.beta.iter().all(|&b| b >= 0.0));
            }
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    prop_assert!(s.transmission.peer[i][j] > s.transmission.grid[i]);
                }
            }
        }
    }
}
