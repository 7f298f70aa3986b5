//! Scenario model: typed inputs, strategies, prices, payoffs and
//! constraint checking for the prosumer exchange game.

mod feasibility;
#[cfg(test)]
pub(crate) mod fixtures;
mod generator;
mod types;

pub use feasibility::{feasibility_check, ConstraintId, Violation, FEASIBILITY_TOL};
pub use generator::{generate_scenario, GeneratorKnobs};
pub use types::*;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("prosumer index {index} out of range for {count} prosumers")]
    IndexOutOfRange { index: usize, count: usize },
}

impl DomainError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Grid price for one slot: `gamma_t` times the total grid load.
pub fn grid_price(gamma: f64, loads: &[f64]) -> Result<f64, DomainError> {
    if !(gamma > 0.0) {
        return Err(DomainError::invalid("gamma", "must be positive"));
    }
    if let Some(bad) = loads.iter().position(|&l| l < 0.0 || l.is_nan()) {
        return Err(DomainError::invalid(
            "loads",
            format!("load {bad} is negative"),
        ));
    }
    Ok(gamma * loads.iter().sum::<f64>())
}

/// Payoff of prosumer `i`: exchange revenue minus exchange purchases minus
/// its share of the grid bill plus consumption utility, summed over slots.
pub fn prosumer_payoff(
    i: usize,
    profile: &StrategyProfile,
    mu: &ExchangePrices,
    scenario: &ScenarioConfig,
) -> Result<f64, DomainError> {
    let n = scenario.num_prosumers();
    if i >= n {
        return Err(DomainError::IndexOutOfRange { index: i, count: n });
    }
    profile.check_shape(scenario)?;
    mu.check_shape(scenario)?;
    let totals = profile.grid_loads();
    Ok(payoff_unchecked(
        i,
        &profile.decisions[i],
        &totals,
        mu,
        scenario,
    ))
}

/// Payoff of `decision` for prosumer `i` given total grid loads per slot
/// (which must already include `decision`'s own grid purchase).
pub(crate) fn payoff_unchecked(
    i: usize,
    decision: &Decision,
    total_grid: &[f64],
    mu: &ExchangePrices,
    scenario: &ScenarioConfig,
) -> f64 {
    let spec = &scenario.prosumers[i];
    decision
        .slots
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let purchases: f64 = s
                .bought_from
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| mu.mu[j][t] * q)
                .sum();
            mu.mu[i][t] * s.sold - purchases - s.grid * scenario.grid.gamma[t] * total_grid[t]
                + spec.utility.value(t, s.consumption)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::bare_scenario;
    use approx::assert_relative_eq;

    #[test]
    fn grid_price_examples() {
        assert_relative_eq!(
            grid_price(0.15, &[2.0, 3.0, 5.0]).unwrap(),
            1.5,
            epsilon = 1e-12
        );
        assert_eq!(grid_price(0.15, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(grid_price(1.0, &[1.0]).unwrap(), 1.0);
        assert!(grid_price(0.15, &[1.0, -0.5]).is_err());
        assert!(grid_price(0.0, &[1.0]).is_err());
    }

    #[test]
    fn payoff_of_zero_decision_is_zero() {
        let scenario = bare_scenario(3, 4);
        let profile = StrategyProfile::zero(&scenario);
        let mu = ExchangePrices::uniform(3, 4, 0.7);
        assert_eq!(prosumer_payoff(1, &profile, &mu, &scenario).unwrap(), 0.0);
    }

    #[test]
    fn payoff_seller_hand_evaluation() {
        let mut scenario = bare_scenario(2, 1);
        scenario.prosumers[0].utility = UtilityParams {
            beta: vec![0.6],
            zeta: 0.1,
        };
        let mut profile = StrategyProfile::zero(&scenario);
        profile.decisions[0].slots[0].sold = 2.0;
        profile.decisions[0].slots[0].consumption = 3.0;
        let mu = ExchangePrices {
            mu: vec![vec![0.5], vec![0.0]],
        };
        // 0.5*2 + 0.6*3 - 0.1*9
        assert_relative_eq!(
            prosumer_payoff(0, &profile, &mu, &scenario).unwrap(),
            1.9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn payoff_buyer_hand_evaluation() {
        let mut scenario = bare_scenario(2, 1);
        scenario.grid.gamma = vec![0.1];
        // U(d) = 1.0 with beta = 0.5, zeta = 0 and d = 2.
        scenario.prosumers[0].utility = UtilityParams {
            beta: vec![0.5],
            zeta: 0.0,
        };
        let mut profile = StrategyProfile::zero(&scenario);
        let buyer = &mut profile.decisions[0].slots[0];
        buyer.bought_from[1] = 1.0;
        buyer.bought = 1.0;
        buyer.grid = 2.0;
        buyer.consumption = 2.0;
        profile.decisions[1].slots[0].grid = 2.0;
        let mu = ExchangePrices {
            mu: vec![vec![0.0], vec![0.4]],
        };
        assert_relative_eq!(
            prosumer_payoff(0, &profile, &mu, &scenario).unwrap(),
            -0.2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn payoff_rejects_bad_index() {
        let scenario = bare_scenario(2, 1);
        let profile = StrategyProfile::zero(&scenario);
        let mu = ExchangePrices::uniform(2, 1, 0.0);
        assert!(matches!(
            prosumer_payoff(2, &profile, &mu, &scenario),
            Err(DomainError::IndexOutOfRange { index: 2, count: 2 })
        ));
    }
}
