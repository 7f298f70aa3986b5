//! Centralized solves: the potential program whose maximizer is the
//! equilibrium, the social optimum, the efficiency ratio between them and
//! a unilateral-deviation check.

use serde::{Deserialize, Serialize};

use crate::domain::{
    payoff_unchecked, DomainError, ExchangePrices, ScenarioConfig, StrategyProfile,
};
use crate::error::SolveError;
use crate::exec::{map_indexed, ExecMode};
use crate::prosumer_opt::{
    add_prosumer_constraints, solve_best_response_with, BestResponseInput, VarLayout,
};
use crate::qp::{solve_qp_with, QpBuilder, QpProblem, QpSettings, QpStatus};

fn check_inputs(
    profile: &StrategyProfile,
    mu: &ExchangePrices,
    scenario: &ScenarioConfig,
) -> Result<(), DomainError> {
    profile.check_shape(scenario)?;
    mu.check_shape(scenario)
}

/// Per-prosumer terms shared by the potential and the social objective:
/// exchange revenue minus exchange payments plus utility.
fn private_terms(profile: &StrategyProfile, mu: &ExchangePrices, scenario: &ScenarioConfig) -> f64 {
    let mut total = 0.0;
    for (i, decision) in profile.decisions.iter().enumerate() {
        let utility = &scenario.prosumers[i].utility;
        for (t, s) in decision.slots.iter().enumerate() {
            let payments: f64 = (0..scenario.num_prosumers())
                .filter(|&j| j != i)
                .map(|j| mu.mu[j][t] * s.bought_from[j])
                .sum();
            total += mu.mu[i][t] * s.sold - payments + utility.value(t, s.consumption);
        }
    }
    total
}

/// Potential of the game:
/// `sum_i sum_t [mu_i s_i - sum_j mu_j q_ij + U_i(d_i)]
///  - sum_t gamma_t [sum_i l_i^2 + sum_{i<j} l_i l_j]`.
pub fn potential_value(
    profile: &StrategyProfile,
    mu: &ExchangePrices,
    scenario: &ScenarioConfig,
) -> Result<f64, DomainError> {
    check_inputs(profile, mu, scenario)?;
    let congestion: f64 = (0..scenario.num_slots())
        .map(|t| {
            let loads: Vec<f64> = profile.decisions.iter().map(|d| d.slots[t].grid).collect();
            let total: f64 = loads.iter().sum();
            let squares: f64 = loads.iter().map(|l| l * l).sum();
            // sum_{i<j} l_i l_j = ((sum l)^2 - sum l^2) / 2
            scenario.grid.gamma[t] * (squares + 0.5 * (total * total - squares))
        })
        .sum();
    Ok(private_terms(profile, mu, scenario) - congestion)
}

/// Objective of the planner's problem: total payoff of all prosumers,
/// `sum_t [sum_i (mu_i s_i - sum_j mu_j q_ij + U_i(d_i)) - gamma_t (sum_i l_i)^2]`.
pub fn social_objective(
    profile: &StrategyProfile,
    mu: &ExchangePrices,
    scenario: &ScenarioConfig,
) -> Result<f64, DomainError> {
    check_inputs(profile, mu, scenario)?;
    let grid_bill: f64 = profile
        .grid_loads()
        .iter()
        .enumerate()
        .map(|(t, total)| scenario.grid.gamma[t] * total * total)
        .sum();
    Ok(private_terms(profile, mu, scenario) - grid_bill)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CentralObjective {
    Potential,
    Social,
}

fn central_problem(
    scenario: &ScenarioConfig,
    mu: &ExchangePrices,
    objective: CentralObjective,
    allow_exchange: bool,
) -> Result<(QpProblem, Vec<VarLayout>), SolveError> {
    scenario.validate()?;
    mu.check_shape(scenario)?;
    let n = scenario.num_prosumers();
    let mut layouts = Vec::with_capacity(n);
    let mut offset = 0;
    for i in 0..n {
        let layout = VarLayout::new(scenario, i, offset);
        offset += layout.len();
        layouts.push(layout);
    }
    let mut builder = QpBuilder::new(offset);
    for layout in &layouts {
        add_prosumer_constraints(&mut builder, scenario, layout);
    }

    for t in 0..scenario.num_slots() {
        let gamma = scenario.grid.gamma[t];
        for (i, layout) in layouts.iter().enumerate() {
            let utility = &scenario.prosumers[i].utility;
            builder.add_square(layout.consumption(t), utility.zeta);
            builder.add_linear(layout.consumption(t), -utility.beta[t]);
            builder.add_linear(layout.sold(t), -mu.mu[i][t]);
            for j in layout.peers() {
                builder.add_linear(layout.bought_from(t, j), mu.mu[j][t]);
                // What j ships to i is what i buys from j.
                if j > i && allow_exchange {
                    builder.add_eq(
                        &[
                            (layouts[j].sold_to(t, i), 1.0),
                            (layout.bought_from(t, j), -1.0),
                        ],
                        0.0,
                    );
                    builder.add_eq(
                        &[
                            (layout.sold_to(t, j), 1.0),
                            (layouts[j].bought_from(t, i), -1.0),
                        ],
                        0.0,
                    );
                }
            }
            if !allow_exchange {
                builder.add_eq(&[(layout.sold(t), 1.0)], 0.0);
                builder.add_eq(&[(layout.bought(t), 1.0)], 0.0);
            }
            // Grid congestion: potential uses gamma (sum l_i^2 + sum_{i<j} l_i l_j),
            // the planner pays gamma (sum l_i)^2.
            builder.add_square(layout.grid(t), gamma);
            let cross = match objective {
                CentralObjective::Potential => gamma,
                CentralObjective::Social => 2.0 * gamma,
            };
            for other in &layouts[i + 1..] {
                builder.add_quadratic(layout.grid(t), other.grid(t), cross);
            }
        }
    }
    Ok((builder.build()?, layouts))
}

fn solve_central(
    scenario: &ScenarioConfig,
    mu: &ExchangePrices,
    objective: CentralObjective,
    allow_exchange: bool,
    settings: &QpSettings,
) -> Result<StrategyProfile, SolveError> {
    let (problem, layouts) = central_problem(scenario, mu, objective, allow_exchange)?;
    let solution = solve_qp_with(&problem, settings);
    if solution.status != QpStatus::Optimal {
        return Err(SolveError::NotOptimal {
            context: format!("{objective:?} program"),
            status: solution.status,
            residuals: solution.residuals,
            iterations: solution.iterations,
        });
    }
    Ok(StrategyProfile {
        decisions: layouts.iter().map(|l| l.read(&solution.x)).collect(),
    })
}

/// The generalized Nash equilibrium: maximizer of the potential over the
/// joint constraint set with market clearing. Payments cancel under market
/// clearing, so the result does not depend on `mu`.
pub fn solve_gne(
    scenario: &ScenarioConfig,
    mu: &ExchangePrices,
    tol: f64,
) -> Result<StrategyProfile, SolveError> {
    solve_gne_with(
        scenario,
        mu,
        &QpSettings {
            tol,
            ..QpSettings::default()
        },
    )
}

pub fn solve_gne_with(
    scenario: &ScenarioConfig,
    mu: &ExchangePrices,
    settings: &QpSettings,
) -> Result<StrategyProfile, SolveError> {
    solve_central(scenario, mu, CentralObjective::Potential, true, settings)
}

/// Equilibrium of the market with every peer trade forced to zero.
pub fn solve_gne_without_exchange(
    scenario: &ScenarioConfig,
    mu: &ExchangePrices,
    tol: f64,
) -> Result<StrategyProfile, SolveError> {
    solve_central(
        scenario,
        mu,
        CentralObjective::Potential,
        false,
        &QpSettings {
            tol,
            ..QpSettings::default()
        },
    )
}

/// The planner's optimum. With `allow_exchange = false` all peer trades are
/// forced to zero.
pub fn solve_social(
    scenario: &ScenarioConfig,
    mu: &ExchangePrices,
    allow_exchange: bool,
    tol: f64,
) -> Result<StrategyProfile, SolveError> {
    solve_central(
        scenario,
        mu,
        CentralObjective::Social,
        allow_exchange,
        &QpSettings {
            tol,
            ..QpSettings::default()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub num_prosumers: usize,
    pub seed: Option<u64>,
    pub renewable_scale: f64,
    /// Planner objective at the equilibrium.
    pub p_eq: f64,
    /// Planner optimum.
    pub p_star: f64,
    /// `p_eq / p_star`; `None` when `p_star <= 0` and the ratio is undefined.
    pub eta: Option<f64>,
}

pub fn efficiency(
    scenario: &ScenarioConfig,
    mu: &ExchangePrices,
    tol: f64,
) -> Result<EfficiencyReport, SolveError> {
    let eq = solve_gne(scenario, mu, tol)?;
    let opt = solve_social(scenario, mu, true, tol)?;
    let p_eq = social_objective(&eq, mu, scenario)?;
    let p_star = social_objective(&opt, mu, scenario)?;
    Ok(EfficiencyReport {
        num_prosumers: scenario.num_prosumers(),
        seed: None,
        renewable_scale: 1.0,
        p_eq,
        p_star,
        eta: (p_star > 0.0).then(|| p_eq / p_star),
    })
}

/// Largest payoff gain any single prosumer can obtain by deviating while
/// the others stay put. Under the market-clearing coupling a deviator's
/// trades are pinned by the other prosumers' posts, so only its
/// consumption, appliance schedule, grid purchase and battery move.
pub fn verify_equilibrium(
    profile: &StrategyProfile,
    mu: &ExchangePrices,
    scenario: &ScenarioConfig,
    tol: f64,
) -> Result<f64, SolveError> {
    verify_equilibrium_with(profile, mu, scenario, tol, ExecMode::default())
}

pub fn verify_equilibrium_with(
    profile: &StrategyProfile,
    mu: &ExchangePrices,
    scenario: &ScenarioConfig,
    tol: f64,
    mode: ExecMode,
) -> Result<f64, SolveError> {
    scenario.validate()?;
    check_inputs(profile, mu, scenario)?;
    let settings = QpSettings {
        tol: tol.min(1e-8),
        ..QpSettings::default()
    };
    let gaps = map_indexed(
        mode,
        scenario.num_prosumers(),
        |i| -> Result<f64, SolveError> {
            let others = profile.others_grid_loads(i);
            let current = &profile.decisions[i];
            let input = BestResponseInput {
                pin_exchange: true,
                ..BestResponseInput::exact(i, scenario, mu, &others, current)
            };
            let best = solve_best_response_with(&input, &settings)?;
            let payoff = |d: &crate::domain::Decision| {
                let total: Vec<f64> = others
                    .iter()
                    .zip(&d.slots)
                    .map(|(o, s)| o + s.grid)
                    .collect();
                payoff_unchecked(i, d, &total, mu, scenario)
            };
            Ok(payoff(&best) - payoff(current))
        },
    );
    gaps.into_iter()
        .try_fold(f64::NEG_INFINITY, |acc, g| Ok(acc.max(g?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::bare_scenario;
    use crate::domain::{
        feasibility_check, generate_scenario, prosumer_payoff, BatterySpec, Decision,
        GeneratorKnobs, TimeGrid,
    };
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn generated(n: usize, slots: usize, seed: u64) -> ScenarioConfig {
        generate_scenario(
            n,
            &TimeGrid::daytime(slots, 8),
            seed,
            &GeneratorKnobs::default(),
        )
        .unwrap()
    }

    fn random_profile(scenario: &ScenarioConfig, rng: &mut ChaCha8Rng) -> StrategyProfile {
        let mut profile = StrategyProfile::zero(scenario);
        for (i, d) in profile.decisions.iter_mut().enumerate() {
            randomize(d, i, rng);
        }
        profile
    }

    fn randomize(d: &mut Decision, i: usize, rng: &mut ChaCha8Rng) {
        for s in &mut d.slots {
            s.grid = rng.random_range(0.0..5.0);
            s.consumption = rng.random_range(0.0..5.0);
            for j in (0..s.sold_to.len()).filter(|&j| j != i) {
                s.sold_to[j] = rng.random_range(0.0..1.0);
                s.bought_from[j] = rng.random_range(0.0..1.0);
            }
            s.sold = s.sold_to.iter().sum();
            s.bought = s.bought_from.iter().sum();
        }
    }

    #[test]
    fn potential_of_singleton_is_its_payoff() {
        let scenario = bare_scenario(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let profile = random_profile(&scenario, &mut rng);
        let mu = ExchangePrices::uniform(1, 3, 0.3);
        assert_abs_diff_eq!(
            potential_value(&profile, &mu, &scenario).unwrap(),
            prosumer_payoff(0, &profile, &mu, &scenario).unwrap(),
            epsilon = 1e-12
        );
        let zero = StrategyProfile::zero(&scenario);
        assert_eq!(potential_value(&zero, &mu, &scenario).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn unilateral_deviation_changes_potential_by_payoff_change(seed in any::<u64>(), n in 1usize..6, slots in 1usize..8) {
            let scenario = generated(n, slots, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = ExchangePrices { mu: (0..n).map(|_| (0..slots).map(|_| rng.random_range(0.0..1.0)).collect()).collect() };
            let profile = random_profile(&scenario, &mut rng);
            let i = rng.random_range(0..n);
            let mut deviated = profile.clone();
            randomize(&mut deviated.decisions[i], i, &mut rng);
            let du = prosumer_payoff(i, &deviated, &mu, &scenario).unwrap() - prosumer_payoff(i, &profile, &mu, &scenario).unwrap();
            let phi = potential_value(&profile, &mu, &scenario).unwrap();
            let dphi = potential_value(&deviated, &mu, &scenario).unwrap() - phi;
            prop_assert!((du - dphi).abs() <= 1e-9 * phi.abs().max(1.0));
        }
    }

    #[test]
    fn singleton_equilibrium_closed_form() {
        let scenario = bare_scenario(1, 2);
        let mu = ExchangePrices::uniform(1, 2, 0.0);
        let profile = solve_gne(&scenario, &mu, 1e-9).unwrap();
        let l_star = 0.6 * 0.8 / (2.0 * (0.1 * 0.64 + 0.15));
        for s in &profile.decisions[0].slots {
            assert_abs_diff_eq!(s.grid, l_star, epsilon = 1e-7);
            assert_abs_diff_eq!(s.consumption, 0.8 * l_star, epsilon = 1e-7);
        }
        let social = solve_social(&scenario, &mu, true, 1e-9).unwrap();
        assert!(social.decisions[0].max_abs_diff(&profile.decisions[0]) < 1e-6);
        assert!(
            verify_equilibrium(&profile, &mu, &scenario, 1e-9)
                .unwrap()
                .abs()
                < 1e-8
        );
        let report = efficiency(&scenario, &mu, 1e-9).unwrap();
        assert_abs_diff_eq!(report.eta.unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn symmetric_prosumers_act_alike_and_do_not_trade() {
        let scenario = bare_scenario(2, 3);
        let mu = ExchangePrices::uniform(2, 3, 0.0);
        let profile = solve_gne(&scenario, &mu, 1e-9).unwrap();
        assert!(profile.decisions[0].max_abs_diff(&profile.decisions[1]) < 1e-6);
        for d in &profile.decisions {
            for s in &d.slots {
                assert!(s.sold < 1e-6 && s.bought < 1e-6, "{s:?}");
            }
        }
    }

    #[test]
    fn equilibrium_passes_deviation_check() {
        for seed in 0..3 {
            let scenario = generated(4, 5, seed);
            let mu = ExchangePrices::uniform(4, 5, 0.2);
            let profile = solve_gne(&scenario, &mu, 1e-9).unwrap();
            for (i, d) in profile.decisions.iter().enumerate() {
                assert!(
                    feasibility_check(&scenario, i, d).is_empty(),
                    "seed {seed} prosumer {i}"
                );
            }
            let gap = verify_equilibrium(&profile, &mu, &scenario, 1e-9).unwrap();
            assert!(gap <= 1e-6, "seed {seed}: gap {gap}");

            let mut perturbed = profile.clone();
            perturbed.decisions[1].slots[2].grid += 0.1;
            assert!(verify_equilibrium(&perturbed, &mu, &scenario, 1e-9).unwrap() > 0.0);
        }
    }

    #[test]
    fn equilibrium_is_price_independent_and_unique() {
        let scenario = generated(3, 4, 11);
        let a = solve_gne(&scenario, &ExchangePrices::uniform(3, 4, 0.0), 1e-9).unwrap();
        let b = solve_gne_with(
            &scenario,
            &ExchangePrices::uniform(3, 4, 0.7),
            &QpSettings {
                tol: 1e-9,
                reverse_order: true,
                equilibrate: false,
                ..QpSettings::default()
            },
        )
        .unwrap();
        for (x, y) in a.decisions.iter().zip(&b.decisions) {
            for (s, r) in x.slots.iter().zip(&y.slots) {
                assert_abs_diff_eq!(s.consumption, r.consumption, epsilon = 1e-5);
                assert_abs_diff_eq!(s.grid, r.grid, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn planner_dominates_equilibrium() {
        for seed in 0..3 {
            let scenario = generated(4, 4, 100 + seed);
            let mu = ExchangePrices::uniform(4, 4, 0.1);
            let eq = solve_gne(&scenario, &mu, 1e-9).unwrap();
            let opt = solve_social(&scenario, &mu, true, 1e-9).unwrap();
            let p_eq = social_objective(&eq, &mu, &scenario).unwrap();
            let p_star = social_objective(&opt, &mu, &scenario).unwrap();
            assert!(p_star >= p_eq - 1e-7, "seed {seed}: {p_star} < {p_eq}");
            let load = |p: &StrategyProfile| p.grid_loads().iter().sum::<f64>();
            assert!(load(&eq) >= load(&opt) - 1e-6);
            // Payments cancel under market clearing.
            let free = ExchangePrices::uniform(4, 4, 0.0);
            assert_abs_diff_eq!(
                p_star,
                social_objective(&opt, &free, &scenario).unwrap(),
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn exchange_lowers_grid_load_for_producer_consumer_pair() {
        let mut scenario = bare_scenario(2, 2);
        scenario.prosumers[0].renewable = vec![3.0, 3.0];
        scenario.prosumers[0].battery = BatterySpec::none(3.0);
        // Without a market the producer has to burn its surplus at low utility.
        scenario.prosumers[0].utility.beta = vec![0.1, 0.1];
        let mu = ExchangePrices::uniform(2, 2, 0.0);
        let with = solve_social(&scenario, &mu, true, 1e-9).unwrap();
        let without = solve_social(&scenario, &mu, false, 1e-9).unwrap();
        let load = |p: &StrategyProfile| p.grid_loads().iter().sum::<f64>();
        assert!(
            load(&without) > load(&with) + 1e-3,
            "{} vs {}",
            load(&without),
            load(&with)
        );
        for d in &without.decisions {
            assert!(d.slots.iter().all(|s| s.sold == 0.0 && s.bought == 0.0));
        }
    }
}
