//! Run-level aggregates: grid load, peak, social welfare and the
//! post-hoc buy/sell complementarity check.

use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, GenerationCost, ScenarioConfig, StrategyProfile};

/// Conventional generation cost of producing `load` kWh in one slot.
pub fn generation_cost(load: f64, cost: &GenerationCost) -> Result<f64, DomainError> {
    if !(load >= 0.0) {
        return Err(DomainError::invalid("load", "must be non-negative"));
    }
    // Discontinuous at the breakpoint; only used for scoring.
    Ok(if load <= cost.breakpoint {
        cost.a1 * load * load + cost.c1
    } else {
        cost.a2 * load * load + cost.c2
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub total_grid_load: f64,
    pub peak_grid_load: f64,
    pub social_welfare: f64,
    /// Largest `bought * sold` of any prosumer in any slot.
    pub complementarity_violation: f64,
    pub eta: Option<f64>,
}

impl RunMetrics {
    pub const CSV_HEADER: [&'static str; 5] = [
        "total_grid_load",
        "peak_grid_load",
        "social_welfare",
        "complementarity_violation",
        "eta",
    ];

    pub fn csv_record(&self) -> [String; 5] {
        [
            self.total_grid_load.to_string(),
            self.peak_grid_load.to_string(),
            self.social_welfare.to_string(),
            self.complementarity_violation.to_string(),
            self.eta.map(|e| e.to_string()).unwrap_or_default(),
        ]
    }
}

pub fn compute_metrics(
    profile: &StrategyProfile,
    scenario: &ScenarioConfig,
) -> Result<RunMetrics, DomainError> {
    profile.check_shape(scenario)?;
    let loads = profile.grid_loads();
    let mut welfare = 0.0;
    for (t, &load) in loads.iter().enumerate() {
        let utility: f64 = profile
            .decisions
            .iter()
            .zip(&scenario.prosumers)
            .map(|(d, p)| p.utility.value(t, d.slots[t].consumption))
            .sum();
        // Solver noise can leave a load a hair below zero.
        welfare += utility - generation_cost(load.max(0.0), &scenario.cost)?;
    }
    let complementarity = profile
        .decisions
        .iter()
        .flat_map(|d| &d.slots)
        .map(|s| s.bought.max(0.0) * s.sold.max(0.0))
        .fold(0.0, f64::max);
    Ok(RunMetrics {
        total_grid_load: loads.iter().sum(),
        peak_grid_load: loads.iter().copied().fold(0.0, f64::max),
        social_welfare: welfare,
        complementarity_violation: complementarity,
        eta: None,
    })
}
