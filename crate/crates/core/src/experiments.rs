//! Sweeps over seeds and parameters. Cells are independent and fan out
//! through [`map_indexed`]; results come back in cell order.

use serde::{Deserialize, Serialize};

use crate::domain::{generate_scenario, ExchangePrices, GeneratorKnobs, ScenarioConfig, TimeGrid};
use crate::equilibrium::{efficiency, solve_gne, solve_gne_without_exchange, EfficiencyReport};
use crate::error::SolveError;
use crate::exec::{map_indexed, ExecMode};
use crate::metrics::{compute_metrics, RunMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub time: TimeGrid,
    pub knobs: GeneratorKnobs,
    pub seeds: Vec<u64>,
    pub tol: f64,
    pub exec: ExecMode,
}

impl SweepSpec {
    pub fn new(time: TimeGrid, knobs: GeneratorKnobs, seeds: Vec<u64>) -> Self {
        Self {
            time,
            knobs,
            seeds,
            tol: 1e-8,
            exec: ExecMode::default(),
        }
    }
}

/// Efficiency ratio for every `(n, renewable scale, seed)` cell, sorted by
/// that key. The renewable scale multiplies the harvest mean.
pub fn efficiency_sweep(
    spec: &SweepSpec,
    n_list: &[usize],
    renewable_scales: &[f64],
) -> Result<Vec<EfficiencyReport>, SolveError> {
    let cells: Vec<(usize, f64, u64)> = n_list
        .iter()
        .flat_map(|&n| {
            renewable_scales
                .iter()
                .flat_map(move |&r| spec.seeds.iter().map(move |&s| (n, r, s)))
        })
        .collect();
    let mut rows = map_indexed(spec.exec, cells.len(), |c| {
        let (n, scale, seed) = cells[c];
        let knobs = GeneratorKnobs {
            renewable_mean: spec.knobs.renewable_mean * scale,
            ..spec.knobs.clone()
        };
        let scenario = generate_scenario(n, &spec.time, seed, &knobs)?;
        let mu = ExchangePrices::uniform(n, spec.time.slots, 0.0);
        let mut report = efficiency(&scenario, &mu, spec.tol)?;
        report.seed = Some(seed);
        report.renewable_scale = scale;
        Ok::<_, SolveError>(report)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        (a.num_prosumers, a.renewable_scale, a.seed)
            .partial_cmp(&(b.num_prosumers, b.renewable_scale, b.seed))
            .expect("finite keys")
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeComparison {
    pub seed: Option<u64>,
    pub with_exchange: RunMetrics,
    pub without_exchange: RunMetrics,
}

impl ExchangeComparison {
    /// Relative peak reduction brought by the exchange.
    pub fn peak_reduction(&self) -> f64 {
        let base = self.without_exchange.peak_grid_load;
        if base > 0.0 {
            (base - self.with_exchange.peak_grid_load) / base
        } else {
            0.0
        }
    }

    pub fn welfare_gain(&self) -> f64 {
        self.with_exchange.social_welfare - self.without_exchange.social_welfare
    }
}

/// Equilibrium metrics of one scenario with and without the peer market.
pub fn compare_exchange(
    scenario: &ScenarioConfig,
    tol: f64,
) -> Result<ExchangeComparison, SolveError> {
    let mu = ExchangePrices::uniform(scenario.num_prosumers(), scenario.num_slots(), 0.0);
    let with = solve_gne(scenario, &mu, tol)?;
    let without = solve_gne_without_exchange(scenario, &mu, tol)?;
    Ok(ExchangeComparison {
        seed: None,
        with_exchange: compute_metrics(&with, scenario)?,
        without_exchange: compute_metrics(&without, scenario)?,
    })
}

pub fn compare_exchange_sweep(
    spec: &SweepSpec,
    n: usize,
) -> Result<Vec<ExchangeComparison>, SolveError> {
    map_indexed(spec.exec, spec.seeds.len(), |c| {
        let seed = spec.seeds[c];
        let scenario = generate_scenario(n, &spec.time, seed, &spec.knobs)?;
        let mut row = compare_exchange(&scenario, spec.tol)?;
        row.seed = Some(seed);
        Ok(row)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub metrics: RunMetrics,
}

/// Equilibrium metrics of `scenario` with the grid coefficient set to each
/// of `gammas` in every slot.
pub fn gamma_sweep(
    scenario: &ScenarioConfig,
    gammas: &[f64],
    tol: f64,
    exec: ExecMode,
) -> Result<Vec<GammaPoint>, SolveError> {
    let mu = ExchangePrices::uniform(scenario.num_prosumers(), scenario.num_slots(), 0.0);
    map_indexed(exec, gammas.len(), |c| {
        let mut scenario = scenario.clone();
        scenario.grid.gamma = vec![gammas[c]; scenario.num_slots()];
        let profile = solve_gne(&scenario, &mu, tol)?;
        Ok(GammaPoint {
            gamma: gammas[c],
            metrics: compute_metrics(&profile, &scenario)?,
        })
    })
    .into_iter()
    .collect()
}

/// Index of the largest welfare value, if it is strictly inside the sweep.
pub fn interior_welfare_peak(points: &[GammaPoint]) -> Option<usize> {
    let best = points
        .iter()
        .enumerate()
        .max_by(|a, b| {
            a.1.metrics
                .social_welfare
                .total_cmp(&b.1.metrics.social_welfare)
        })?
        .0;
    (best > 0 && best + 1 < points.len()).then_some(best)
}
