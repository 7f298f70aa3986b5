//! One prosumer's decision problem: the proximal best response used by the
//! distributed loop and the exact best response used to verify equilibria.
//!
//! Variables are laid out slot by slot; see [`VarLayout`]. The same
//! constraint assembly is reused by the centralized solves, which stack one
//! block per prosumer.

use crate::domain::{
    check_decision_shape, feasibility_check, ApplianceKind, Decision, DomainError, ExchangePrices,
    ScenarioConfig, SlotDecision,
};
use crate::error::SolveError;
use crate::qp::{solve_qp_with, QpBuilder, QpProblem, QpSettings, QpStatus};

/// Magnitudes below this are read back from the solver as exact zeros.
pub const SNAP_TOL: f64 = 1e-9;

/// Index map from decision fields of prosumer `prosumer` to QP variables.
///
/// Per slot: appliance loads, consumption `d`, grid purchase `l`, sales to
/// each peer, total sales `s`, purchases from each peer, total purchases
/// `q`, charge `b`, discharge `e`. Per-peer blocks skip the prosumer itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub prosumer: usize,
    pub num_prosumers: usize,
    pub num_appliances: usize,
    pub num_slots: usize,
    /// Position of the first variable in the enclosing problem.
    pub offset: usize,
}

impl VarLayout {
    pub fn new(scenario: &ScenarioConfig, prosumer: usize, offset: usize) -> Self {
        Self {
            prosumer,
            num_prosumers: scenario.num_prosumers(),
            num_appliances: scenario.prosumers[prosumer].appliances.len(),
            num_slots: scenario.num_slots(),
            offset,
        }
    }

    pub fn per_slot(&self) -> usize {
        self.num_appliances + 2 * (self.num_prosumers - 1) + 6
    }

    pub fn len(&self) -> usize {
        self.num_slots * self.per_slot()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn base(&self, t: usize) -> usize {
        self.offset + t * self.per_slot()
    }

    fn peer(&self, j: usize) -> usize {
        assert!(
            j != self.prosumer && j < self.num_prosumers,
            "peer index {j} invalid"
        );
        if j < self.prosumer {
            j
        } else {
            j - 1
        }
    }

    pub fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_prosumers).filter(move |&j| j != self.prosumer)
    }

    pub fn appliance(&self, t: usize, a: usize) -> usize {
        self.base(t) + a
    }

    pub fn consumption(&self, t: usize) -> usize {
        self.base(t) + self.num_appliances
    }

    pub fn grid(&self, t: usize) -> usize {
        self.consumption(t) + 1
    }

    pub fn sold_to(&self, t: usize, j: usize) -> usize {
        self.grid(t) + 1 + self.peer(j)
    }

    pub fn sold(&self, t: usize) -> usize {
        self.grid(t) + self.num_prosumers
    }

    pub fn bought_from(&self, t: usize, j: usize) -> usize {
        self.sold(t) + 1 + self.peer(j)
    }

    pub fn bought(&self, t: usize) -> usize {
        self.sold(t) + self.num_prosumers
    }

    pub fn charge(&self, t: usize) -> usize {
        self.bought(t) + 1
    }

    pub fn discharge(&self, t: usize) -> usize {
        self.bought(t) + 2
    }

    /// Reads this prosumer's block of `x` back into a [`Decision`].
    pub fn read(&self, x: &[f64]) -> Decision {
        let snap = |v: f64| if v.abs() < SNAP_TOL { 0.0 } else { v };
        let n = self.num_prosumers;
        let slots = (0..self.num_slots)
            .map(|t| {
                let mut s = SlotDecision::zero(n, self.num_appliances);
                for a in 0..self.num_appliances {
                    s.appliance_loads[a] = snap(x[self.appliance(t, a)]);
                }
                s.consumption = snap(x[self.consumption(t)]);
                s.grid = snap(x[self.grid(t)]);
                for j in self.peers() {
                    s.sold_to[j] = snap(x[self.sold_to(t, j)]);
                    s.bought_from[j] = snap(x[self.bought_from(t, j)]);
                }
                s.sold = snap(x[self.sold(t)]);
                s.bought = snap(x[self.bought(t)]);
                s.charge = snap(x[self.charge(t)]);
                s.discharge = snap(x[self.discharge(t)]);
                s
            })
            .collect();
        Decision { slots }
    }

    /// Writes `decision` into this prosumer's block of `x`.
    pub fn write(&self, decision: &Decision, x: &mut [f64]) {
        for (t, s) in decision.slots.iter().enumerate() {
            for a in 0..self.num_appliances {
                x[self.appliance(t, a)] = s.appliance_loads[a];
            }
            x[self.consumption(t)] = s.consumption;
            x[self.grid(t)] = s.grid;
            for j in self.peers() {
                x[self.sold_to(t, j)] = s.sold_to[j];
                x[self.bought_from(t, j)] = s.bought_from[j];
            }
            x[self.sold(t)] = s.sold;
            x[self.bought(t)] = s.bought;
            x[self.charge(t)] = s.charge;
            x[self.discharge(t)] = s.discharge;
        }
    }
}

/// Adds prosumer `layout.prosumer`'s own constraint set: appliance energy
/// and bounds, consumption bounds, sales and purchase aggregates, energy
/// balance, battery bounds, rates and cycle, and non-negativity. Market
/// coupling between prosumers is left to the caller.
pub fn add_prosumer_constraints(
    builder: &mut QpBuilder,
    scenario: &ScenarioConfig,
    layout: &VarLayout,
) {
    let i = layout.prosumer;
    let spec = &scenario.prosumers[i];
    let slots = layout.num_slots;

    for (a, appliance) in spec.appliances.iter().enumerate() {
        if let ApplianceKind::Deferrable {
            total_energy,
            deadline,
        } = appliance.kind
        {
            let terms: Vec<_> = (0..deadline)
                .map(|t| (layout.appliance(t, a), -1.0))
                .collect();
            builder.add_le(&terms, -total_energy);
        }
    }

    let battery = &spec.battery;
    let r_grid = scenario.transmission.grid[i];
    for t in 0..slots {
        for (a, appliance) in spec.appliances.iter().enumerate() {
            let v = layout.appliance(t, a);
            // A pinned load as two opposing bounds would leave the pair's
            // multipliers unbounded.
            if appliance.per_slot_min == appliance.per_slot_max {
                builder.add_eq(&[(v, 1.0)], appliance.per_slot_min);
            } else {
                builder.add_lower_bound(v, appliance.per_slot_min);
                builder.add_upper_bound(v, appliance.per_slot_max);
            }
        }
        let d = layout.consumption(t);
        if !spec.appliances.is_empty() {
            let mut terms = vec![(d, 1.0)];
            terms.extend((0..layout.num_appliances).map(|a| (layout.appliance(t, a), -1.0)));
            builder.add_eq(&terms, 0.0);
        }
        if spec.d_min[t] == spec.d_max[t] {
            builder.add_eq(&[(d, 1.0)], spec.d_min[t]);
        } else {
            builder.add_lower_bound(d, spec.d_min[t]);
            builder.add_upper_bound(d, spec.d_max[t]);
        }

        let mut sales = vec![(layout.sold(t), 1.0)];
        sales.extend(layout.peers().map(|j| (layout.sold_to(t, j), -1.0)));
        builder.add_eq(&sales, 0.0);
        let mut purchases = vec![(layout.bought(t), 1.0)];
        purchases.extend(layout.peers().map(|j| (layout.bought_from(t, j), -1.0)));
        builder.add_eq(&purchases, 0.0);

        // d = sum_j r_ij q_ij - s + r_i l - eta_d b + eta_c e
        let mut balance = vec![
            (d, 1.0),
            (layout.sold(t), 1.0),
            (layout.grid(t), -r_grid),
            (layout.charge(t), battery.discharge_eff),
            (layout.discharge(t), -battery.charge_eff),
        ];
        balance.extend(
            layout
                .peers()
                .map(|j| (layout.bought_from(t, j), -scenario.transmission.peer[i][j])),
        );
        builder.add_eq(&balance, 0.0);

        builder.add_upper_bound(layout.charge(t), battery.max_charge_rate);
        builder.add_upper_bound(layout.discharge(t), battery.max_discharge_rate);
        for v in [layout.grid(t), layout.charge(t), layout.discharge(t)]
            .into_iter()
            .chain(
                layout
                    .peers()
                    .flat_map(|j| [layout.sold_to(t, j), layout.bought_from(t, j)]),
            )
        {
            builder.add_lower_bound(v, 0.0);
        }
    }

    // Battery level after slot t: B1 + sum_{tau <= t} (E - e + b). The
    // final level is pinned to B1 by the cycle constraint.
    let mut harvest = 0.0;
    let mut terms = Vec::new();
    for t in 0..slots {
        harvest += spec.renewable[t];
        terms.push((layout.charge(t), 1.0));
        terms.push((layout.discharge(t), -1.0));
        if t + 1 < slots {
            let neg: Vec<_> = terms.iter().map(|&(v, c)| (v, -c)).collect();
            builder.add_le(&neg, battery.initial + harvest);
            builder.add_le(&terms, battery.capacity - battery.initial - harvest);
        } else {
            builder.add_eq(&terms, -harvest);
        }
    }
}

/// Inputs of one prosumer's best response at iteration `k`.
#[derive(Debug, Clone, Copy)]
pub struct BestResponseInput<'a> {
    pub prosumer: usize,
    pub scenario: &'a ScenarioConfig,
    pub mu: &'a ExchangePrices,
    /// Opponents' total grid load per slot from the previous iteration.
    pub others_prev_load: &'a [f64],
    /// The prosumer's own previous decision, the proximal anchor.
    pub own_prev: &'a Decision,
    /// Proximal parameter; the penalty weight is `1 / alpha_k`.
    pub alpha_k: f64,
    /// Drop the proximal term and treat `others_prev_load` as current.
    pub exact_mode: bool,
    /// Hold every per-peer sale and purchase at its value in `own_prev`.
    /// Under the market-clearing coupling these are determined by the other
    /// prosumers' posts, so a unilateral deviation cannot change them.
    pub pin_exchange: bool,
}

impl<'a> BestResponseInput<'a> {
    /// Exact best response against fixed opponents.
    pub fn exact(
        prosumer: usize,
        scenario: &'a ScenarioConfig,
        mu: &'a ExchangePrices,
        others_load: &'a [f64],
        own_prev: &'a Decision,
    ) -> Self {
        Self {
            prosumer,
            scenario,
            mu,
            others_prev_load: others_load,
            own_prev,
            alpha_k: 1.0,
            exact_mode: true,
            pin_exchange: false,
        }
    }

    fn validate(&self) -> Result<(), DomainError> {
        let scenario = self.scenario;
        scenario.validate()?;
        let n = scenario.num_prosumers();
        if self.prosumer >= n {
            return Err(DomainError::IndexOutOfRange {
                index: self.prosumer,
                count: n,
            });
        }
        self.mu.check_shape(scenario)?;
        if !(self.alpha_k > 0.0 && self.alpha_k.is_finite()) {
            return Err(DomainError::invalid("alpha_k", "must be positive"));
        }
        if self.others_prev_load.len() != scenario.num_slots() {
            return Err(DomainError::Shape(format!(
                "others_prev_load has {} entries, expected {}",
                self.others_prev_load.len(),
                scenario.num_slots()
            )));
        }
        if self
            .others_prev_load
            .iter()
            .any(|&l| !(l >= 0.0 && l.is_finite()))
        {
            return Err(DomainError::invalid(
                "others_prev_load",
                "loads must be non-negative",
            ));
        }
        check_decision_shape(self.own_prev, self.prosumer, scenario)
    }
}

/// Builds the best-response QP (minimizing the negated objective) and the
/// variable layout used to read the solution back.
pub fn assemble_best_response(
    input: &BestResponseInput,
) -> Result<(QpProblem, VarLayout), SolveError> {
    input.validate()?;
    let scenario = input.scenario;
    let i = input.prosumer;
    let layout = VarLayout::new(scenario, i, 0);
    let mut builder = QpBuilder::new(layout.len());
    add_prosumer_constraints(&mut builder, scenario, &layout);

    let utility = &scenario.prosumers[i].utility;
    for t in 0..layout.num_slots {
        let gamma = scenario.grid.gamma[t];
        builder.add_square(layout.consumption(t), utility.zeta);
        builder.add_linear(layout.consumption(t), -utility.beta[t]);
        builder.add_square(layout.grid(t), gamma);
        builder.add_linear(layout.grid(t), gamma * input.others_prev_load[t]);
        builder.add_linear(layout.sold(t), -input.mu.mu[i][t]);
        for j in layout.peers() {
            builder.add_linear(layout.bought_from(t, j), input.mu.mu[j][t]);
        }
    }

    let mut anchor = vec![0.0; layout.len()];
    layout.write(input.own_prev, &mut anchor);
    if !input.exact_mode {
        let weight = 1.0 / input.alpha_k;
        for (v, &prev) in anchor.iter().enumerate() {
            builder.add_square(v, weight);
            builder.add_linear(v, -2.0 * weight * prev);
        }
    }
    if input.pin_exchange {
        for t in 0..layout.num_slots {
            for j in layout.peers() {
                for v in [layout.sold_to(t, j), layout.bought_from(t, j)] {
                    builder.add_eq(&[(v, 1.0)], anchor[v]);
                }
            }
        }
    }
    Ok((builder.build()?, layout))
}

pub fn solve_best_response(input: &BestResponseInput, tol: f64) -> Result<Decision, SolveError> {
    solve_best_response_with(
        input,
        &QpSettings {
            tol,
            ..QpSettings::default()
        },
    )
}

pub fn solve_best_response_with(
    input: &BestResponseInput,
    settings: &QpSettings,
) -> Result<Decision, SolveError> {
    let (problem, layout) = assemble_best_response(input)?;
    let solution = solve_qp_with(&problem, settings);
    if solution.status != QpStatus::Optimal {
        return Err(SolveError::NotOptimal {
            context: format!("best response of prosumer {}", input.prosumer),
            status: solution.status,
            residuals: solution.residuals,
            iterations: solution.iterations,
        });
    }
    Ok(layout.read(&solution.x))
}

/// Initial decision: all zeros when feasible, otherwise the minimum-norm
/// point of the prosumer's constraint set.
pub fn cold_start(scenario: &ScenarioConfig, i: usize, tol: f64) -> Result<Decision, SolveError> {
    scenario.validate()?;
    let n = scenario.num_prosumers();
    if i >= n {
        return Err(DomainError::IndexOutOfRange { index: i, count: n }.into());
    }
    let zero = Decision::zero(
        scenario.num_slots(),
        n,
        scenario.prosumers[i].appliances.len(),
    );
    if feasibility_check(scenario, i, &zero).is_empty() {
        return Ok(zero);
    }
    let layout = VarLayout::new(scenario, i, 0);
    let mut builder = QpBuilder::new(layout.len());
    add_prosumer_constraints(&mut builder, scenario, &layout);
    for v in 0..layout.len() {
        builder.add_square(v, 0.5);
    }
    let solution = solve_qp_with(
        &builder.build()?,
        &QpSettings {
            tol,
            ..QpSettings::default()
        },
    );
    if solution.status != QpStatus::Optimal {
        return Err(SolveError::NotOptimal {
            context: format!("cold start of prosumer {i}"),
            status: solution.status,
            residuals: solution.residuals,
            iterations: solution.iterations,
        });
    }
    Ok(layout.read(&solution.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::bare_scenario;
    use crate::domain::{payoff_unchecked, ApplianceSpec, BatterySpec, UtilityParams};
    use crate::qp::solve_qp;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn singleton() -> ScenarioConfig {
        let mut s = bare_scenario(1, 1);
        s.prosumers[0].utility = UtilityParams {
            beta: vec![0.6],
            zeta: 0.1,
        };
        s.transmission.grid = vec![0.8];
        s.grid.gamma = vec![0.15];
        s
    }

    #[test]
    fn singleton_closed_form() {
        let scenario = singleton();
        let mu = ExchangePrices::uniform(1, 1, 0.0);
        let prev = Decision::zero(1, 1, 0);
        let input = BestResponseInput::exact(0, &scenario, &mu, &[0.0], &prev);
        let (problem, _) = assemble_best_response(&input).unwrap();
        assert_eq!(problem.num_vars(), 6);
        let d = solve_best_response(&input, 1e-9).unwrap();
        let l_star = 0.6 * 0.8 / (2.0 * (0.1 * 0.64 + 0.15));
        assert_abs_diff_eq!(d.slots[0].grid, l_star, epsilon = 1e-7);
        assert_abs_diff_eq!(d.slots[0].consumption, 0.8 * l_star, epsilon = 1e-7);
    }

    #[test]
    fn variable_count_formula() {
        let mut scenario = bare_scenario(4, 3);
        scenario.prosumers[2].appliances = vec![
            ApplianceSpec::fixed(0.2),
            ApplianceSpec::deferrable(1.0, 3, 1.0),
        ];
        let mu = ExchangePrices::uniform(4, 3, 0.0);
        let prev = Decision::zero(3, 4, 2);
        let input = BestResponseInput::exact(2, &scenario, &mu, &[0.0; 3], &prev);
        let (problem, layout) = assemble_best_response(&input).unwrap();
        assert_eq!(problem.num_vars(), 3 * (2 + 2 * 3 + 6));
        assert_eq!(layout.discharge(2) + 1, problem.num_vars());
    }

    #[test]
    fn free_peer_energy_displaces_grid() {
        let mut scenario = bare_scenario(2, 1);
        scenario.prosumers[0].d_max = vec![2.0];
        let mu = ExchangePrices::uniform(2, 1, 0.0);
        let prev = Decision::zero(1, 2, 0);
        let input = BestResponseInput::exact(0, &scenario, &mu, &[1.0], &prev);
        let d = solve_best_response(&input, 1e-9).unwrap();
        assert_abs_diff_eq!(d.slots[0].grid, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(d.slots[0].consumption, 2.0, epsilon = 1e-7);
        // Buying beyond need and reselling is costless at zero prices, so
        // only the net inflow is determined.
        assert_abs_diff_eq!(
            0.9 * d.slots[0].bought - d.slots[0].sold,
            2.0,
            epsilon = 1e-7
        );
    }

    #[test]
    fn no_incentive_means_zero_decision() {
        let mut scenario = bare_scenario(3, 4);
        for p in &mut scenario.prosumers {
            p.utility.beta = vec![0.0; 4];
            p.appliances = vec![ApplianceSpec::deferrable(0.0, 4, 3.0)];
        }
        let mu = ExchangePrices::uniform(3, 4, 0.2);
        let prev = Decision::zero(4, 3, 1);
        let input = BestResponseInput::exact(1, &scenario, &mu, &[2.0; 4], &prev);
        let d = solve_best_response(&input, 1e-9).unwrap();
        assert!(d.max_abs_diff(&prev) < 1e-7, "{d:?}");
    }

    #[test]
    fn proximal_term_dominates_for_small_alpha() {
        let scenario = bare_scenario(2, 2);
        let mu = ExchangePrices::uniform(2, 2, 0.1);
        let prev = Decision::zero(2, 2, 0);
        let mut last = f64::INFINITY;
        for alpha in [1.0, 0.1, 0.01, 1e-4] {
            let input = BestResponseInput {
                alpha_k: alpha,
                exact_mode: false,
                ..BestResponseInput::exact(0, &scenario, &mu, &[1.0, 1.0], &prev)
            };
            let dist = solve_best_response(&input, 1e-9)
                .unwrap()
                .max_abs_diff(&prev);
            assert!(dist <= last + 1e-8, "alpha {alpha}: {dist} > {last}");
            last = dist;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn infeasible_appliance_rejected() {
        let mut scenario = bare_scenario(1, 2);
        scenario.prosumers[0].appliances = vec![ApplianceSpec::deferrable(5.0, 2, 1.0)];
        let mu = ExchangePrices::uniform(1, 2, 0.0);
        let prev = Decision::zero(2, 1, 1);
        let input = BestResponseInput::exact(0, &scenario, &mu, &[0.0; 2], &prev);
        assert!(matches!(
            assemble_best_response(&input),
            Err(SolveError::Domain(_))
        ));
    }

    #[test]
    fn cold_start_is_feasible() {
        let mut scenario = bare_scenario(2, 3);
        scenario.prosumers[0].appliances = vec![ApplianceSpec::deferrable(2.0, 2, 2.0)];
        scenario.prosumers[0].renewable = vec![1.0, 0.0, 0.5];
        scenario.prosumers[0].battery = BatterySpec::none(5.0);
        let d = cold_start(&scenario, 0, 1e-9).unwrap();
        assert!(feasibility_check(&scenario, 0, &d).is_empty());
        let d = cold_start(&scenario, 1, 1e-9).unwrap();
        assert_eq!(d, Decision::zero(3, 2, 0));
    }

    fn random_scenario(seed: u64) -> ScenarioConfig {
        let time = crate::domain::TimeGrid::daytime(3, 8);
        crate::domain::generate_scenario(3, &time, seed, &crate::domain::GeneratorKnobs::default())
            .unwrap()
    }

    /// Euclidean projection onto the prosumer's constraint set.
    fn project(scenario: &ScenarioConfig, layout: &VarLayout, point: &[f64]) -> Vec<f64> {
        let mut builder = QpBuilder::new(layout.len());
        add_prosumer_constraints(&mut builder, scenario, layout);
        for (v, &p) in point.iter().enumerate() {
            builder.add_square(v, 0.5);
            builder.add_linear(v, -p);
        }
        let sol = solve_qp(&builder.build().unwrap(), 1e-9, 20_000);
        assert_eq!(sol.status, QpStatus::Optimal);
        sol.x
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn exact_response_is_an_argmax(seed in 0u64..1000) {
            let scenario = random_scenario(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Prices within 5% of each other per slot: reselling peer energy
            // bought at a lower price is then never profitable, otherwise
            // the relaxed problem is unbounded.
            let base: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.5)).collect();
            let mu = ExchangePrices {
                mu: (0..3).map(|_| base.iter().map(|b| b * rng.random_range(1.0..1.05)).collect()).collect(),
            };
            let others = vec![rng.random_range(0.0..4.0); 3];
            let prev = cold_start(&scenario, 0, 1e-9).unwrap();
            let input = BestResponseInput::exact(0, &scenario, &mu, &others, &prev);
            let best = solve_best_response(&input, 1e-9).unwrap();
            let payoff = |d: &Decision| {
                let total: Vec<f64> = others.iter().zip(&d.slots).map(|(o, s)| o + s.grid).collect();
                payoff_unchecked(0, d, &total, &mu, &scenario)
            };
            let base = payoff(&best);
            let layout = VarLayout::new(&scenario, 0, 0);
            let mut x = vec![0.0; layout.len()];
            layout.write(&best, &mut x);
            for _ in 0..50 {
                let perturbed: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
                let candidate = layout.read(&project(&scenario, &layout, &perturbed));
                prop_assert!(base >= payoff(&candidate) - 1e-6);
            }
        }
    }
}
