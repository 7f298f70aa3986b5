//! Distributed price discovery: prosumers best-respond to posted prices and
//! lagged grid loads, the platform raises the price of every seller whose
//! posted supply falls short of what others want to buy, and every event is
//! chained into a [`Ledger`].

mod ledger;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use ledger::{Digest32, Ledger, LedgerBlock, LedgerError};

use crate::domain::{DomainError, ExchangePrices, ScenarioConfig, StrategyProfile};
use crate::equilibrium::potential_value;
use crate::error::SolveError;
use crate::exec::{map_indexed, ExecMode};
use crate::prosumer_opt::{cold_start, solve_best_response_with, BestResponseInput};
use crate::qp::QpSettings;

/// Weight `1 / alpha_k` of the proximal term at iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "weight", rename_all = "snake_case")]
pub enum ProximalSchedule {
    /// `alpha_k = 1 / (k + 1)`: the weight grows without bound, so late
    /// iterates barely move.
    Harmonic,
    Constant(f64),
    /// Constant weight `max(0.05, gamma_max * N / 4)`, large enough for the
    /// simultaneous grid-load updates to contract.
    Auto,
}

impl ProximalSchedule {
    pub fn weight(&self, k: usize, scenario: &ScenarioConfig) -> f64 {
        match *self {
            ProximalSchedule::Harmonic => (k + 1) as f64,
            ProximalSchedule::Constant(w) => w,
            ProximalSchedule::Auto => {
                let gamma = scenario.grid.gamma.iter().copied().fold(0.0, f64::max);
                (gamma * scenario.num_prosumers() as f64 / 4.0).max(0.05)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoDistConfig {
    /// Initial price of every seller, $/kWh.
    pub mu_floor: f64,
    /// Price increment, $/kWh.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Shortfall of supply below demand tolerated at termination, kWh.
    pub supply_slack: f64,
    pub proximal: ProximalSchedule,
    /// Prices move only while the largest strategy change of the last sweep
    /// is at most this.
    pub price_gate: f64,
    /// Largest strategy change at which a cleared market counts as settled.
    pub settle_tol: f64,
    /// Also lower the price of sellers with excess supply (never below
    /// `mu_floor`).
    pub symmetric_decrease: bool,
    /// With `symmetric_decrease`, a price falls only while supply exceeds
    /// demand by more than this, kWh.
    pub decrease_band: f64,
    /// KKT tolerance of each best response.
    pub qp_tol: f64,
    pub exec: ExecMode,
}

impl Default for AlgoDistConfig {
    fn default() -> Self {
        Self {
            mu_floor: 0.0,
            epsilon: 1e-6,
            max_iters: 5000,
            supply_slack: 1e-9,
            proximal: ProximalSchedule::Auto,
            price_gate: 1e-2,
            settle_tol: 1e-6,
            symmetric_decrease: false,
            decrease_band: 1e-2,
            qp_tol: 1e-9,
            exec: ExecMode::default(),
        }
    }
}

impl AlgoDistConfig {
    fn validate(&self) -> Result<(), DomainError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(DomainError::invalid("epsilon", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(DomainError::invalid("max_iters", "must be at least 1"));
        }
        if !(self.mu_floor >= 0.0 && self.mu_floor.is_finite()) {
            return Err(DomainError::invalid("mu_floor", "must be non-negative"));
        }
        if !(self.supply_slack >= 0.0) {
            return Err(DomainError::invalid("supply_slack", "must be non-negative"));
        }
        if let ProximalSchedule::Constant(w) = self.proximal {
            if !(w > 0.0 && w.is_finite()) {
                return Err(DomainError::invalid("proximal", "weight must be positive"));
            }
        }
        if !(self.settle_tol >= 0.0 && self.price_gate >= 0.0 && self.decrease_band >= 0.0) {
            return Err(DomainError::invalid(
                "settle_tol",
                "tolerances must be non-negative",
            ));
        }
        Ok(())
    }
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<(), DomainError> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(DomainError::Shape(format!("{name} must be {rows}x{cols}")));
    }
    Ok(())
}

/// Raises `mu[i][t]` by `epsilon` wherever demand for seller `i` exceeds
/// its supply by more than `slack`.
pub fn price_update(
    mu: &ExchangePrices,
    supply: &[Vec<f64>],
    demand: &[Vec<f64>],
    epsilon: f64,
    slack: f64,
) -> Result<ExchangePrices, DomainError> {
    price_update_with(mu, supply, demand, epsilon, slack, None)
}

/// Downward moves of [`price_update_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceDecrease {
    pub floor: f64,
    pub band: f64,
}

/// As [`price_update`]; with `decrease = Some(..)` the price of a seller
/// whose supply exceeds demand by more than `band` drops by `epsilon`, but
/// not below `floor`.
pub fn price_update_with(
    mu: &ExchangePrices,
    supply: &[Vec<f64>],
    demand: &[Vec<f64>],
    epsilon: f64,
    slack: f64,
    decrease: Option<PriceDecrease>,
) -> Result<ExchangePrices, DomainError> {
    if !(epsilon > 0.0) {
        return Err(DomainError::invalid("epsilon", "must be positive"));
    }
    let rows = mu.mu.len();
    let cols = mu.mu.first().map_or(0, Vec::len);
    check_matrix("mu", &mu.mu, rows, cols)?;
    check_matrix("supply", supply, rows, cols)?;
    check_matrix("demand", demand, rows, cols)?;
    let mut next = mu.clone();
    for i in 0..rows {
        for t in 0..cols {
            let excess = demand[i][t] - supply[i][t];
            if excess > slack {
                next.mu[i][t] += epsilon;
            } else if let Some(down) = decrease {
                if -excess > down.band {
                    next.mu[i][t] = (next.mu[i][t] - epsilon).max(down.floor);
                }
            }
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub mu_norm: f64,
    pub mu_mean: f64,
    /// `excess[i][t] = sum_j q_{j,i,t} - s_{i,t}`.
    pub excess: Vec<Vec<f64>>,
    /// Total grid load per slot.
    pub grid_load: Vec<f64>,
    pub potential: f64,
    /// Largest change of any decision variable in this sweep.
    pub step: f64,
}

impl TraceRow {
    pub fn max_excess_demand(&self) -> f64 {
        self.excess
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn total_grid_load(&self) -> f64 {
        self.grid_load.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    pub const CSV_HEADER: [&'static str; 5] = [
        "iteration",
        "max_excess_demand",
        "total_grid_load",
        "potential",
        "mu_mean",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(Self::CSV_HEADER)?;
        for row in &self.rows {
            writer.write_record([
                row.iteration.to_string(),
                row.max_excess_demand().to_string(),
                row.total_grid_load().to_string(),
                row.potential.to_string(),
                row.mu_mean.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerEvent {
    Post {
        iteration: usize,
        prosumer: usize,
        grid: Vec<f64>,
        consumption: Vec<f64>,
        sold: Vec<f64>,
        /// `bought_from[t][j]`.
        bought_from: Vec<Vec<f64>>,
    },
    Prices {
        iteration: usize,
        mu: Vec<Vec<f64>>,
    },
    /// Grid bill `l_{i,t} gamma_t sum_j l_{j,t}` per slot.
    Settlement {
        iteration: usize,
        prosumer: usize,
        amount: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoDistOutcome {
    pub profile: StrategyProfile,
    pub mu: ExchangePrices,
    pub trace: ConvergenceTrace,
    pub ledger: Ledger,
    pub converged: bool,
    pub iterations: usize,
}

/// Runs the loop until supply covers demand everywhere (within
/// `supply_slack`) with strategies settled, or until `max_iters`.
pub fn run_algo_dist(
    scenario: &ScenarioConfig,
    cfg: &AlgoDistConfig,
) -> Result<AlgoDistOutcome, SolveError> {
    scenario.validate()?;
    cfg.validate()?;
    let n = scenario.num_prosumers();
    let slots = scenario.num_slots();
    let qp = QpSettings {
        tol: cfg.qp_tol,
        ..QpSettings::default()
    };

    let mut mu = ExchangePrices::uniform(n, slots, cfg.mu_floor);
    let mut profile = StrategyProfile {
        decisions: (0..n)
            .map(|i| cold_start(scenario, i, cfg.qp_tol))
            .collect::<Result<_, _>>()?,
    };
    // Nobody has observed any grid load before the first sweep.
    let mut loads_seen = vec![vec![0.0; slots]; n];
    let mut trace = ConvergenceTrace::default();
    let mut ledger = Ledger::new();
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=cfg.max_iters {
        iterations = k;
        let weight = cfg.proximal.weight(k, scenario);
        let prev = &profile;
        let responses = map_indexed(cfg.exec, n, |i| {
            let input = BestResponseInput {
                prosumer: i,
                scenario,
                mu: &mu,
                others_prev_load: &loads_seen[i],
                own_prev: &prev.decisions[i],
                alpha_k: 1.0 / weight,
                exact_mode: false,
                pin_exchange: false,
            };
            solve_best_response_with(&input, &qp)
        });
        let next = StrategyProfile {
            decisions: responses.into_iter().collect::<Result<_, _>>()?,
        };
        let step = next
            .decisions
            .iter()
            .zip(&profile.decisions)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        profile = next;
        loads_seen = (0..n).map(|i| profile.others_grid_loads(i)).collect();

        for (i, d) in profile.decisions.iter().enumerate() {
            ledger.append(
                k as u64,
                &LedgerEvent::Post {
                    iteration: k,
                    prosumer: i,
                    grid: d.slots.iter().map(|s| s.grid).collect(),
                    consumption: d.slots.iter().map(|s| s.consumption).collect(),
                    sold: d.slots.iter().map(|s| s.sold).collect(),
                    bought_from: d.slots.iter().map(|s| s.bought_from.clone()).collect(),
                },
            );
        }

        let supply = profile.supply();
        let demand = profile.peer_demand();
        let excess: Vec<Vec<f64>> = demand
            .iter()
            .zip(&supply)
            .map(|(d, s)| d.iter().zip(s).map(|(d, s)| d - s).collect())
            .collect();
        trace.rows.push(TraceRow {
            iteration: k,
            mu_norm: mu.norm(),
            mu_mean: mu.mean(),
            excess: excess.clone(),
            grid_load: profile.grid_loads(),
            potential: potential_value(&profile, &mu, scenario)?,
            step,
        });

        let cleared = excess.iter().flatten().all(|&e| e <= cfg.supply_slack);
        if cleared && step <= cfg.settle_tol {
            converged = true;
            break;
        }
        if step <= cfg.price_gate {
            let down = cfg.symmetric_decrease.then_some(PriceDecrease {
                floor: cfg.mu_floor,
                band: cfg.decrease_band,
            });
            let updated =
                price_update_with(&mu, &supply, &demand, cfg.epsilon, cfg.supply_slack, down)?;
            if updated != mu {
                mu = updated;
                ledger.append(
                    k as u64,
                    &LedgerEvent::Prices {
                        iteration: k,
                        mu: mu.mu.clone(),
                    },
                );
            }
        }
    }

    if converged {
        let totals = profile.grid_loads();
        for (i, d) in profile.decisions.iter().enumerate() {
            let amount = d
                .slots
                .iter()
                .enumerate()
                .map(|(t, s)| s.grid * scenario.grid.gamma[t] * totals[t])
                .collect();
            ledger.append(
                iterations as u64,
                &LedgerEvent::Settlement {
                    iteration: iterations,
                    prosumer: i,
                    amount,
                },
            );
        }
    }
    Ok(AlgoDistOutcome {
        profile,
        mu,
        trace,
        ledger,
        converged,
        iterations,
    })
}
