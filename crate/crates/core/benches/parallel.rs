use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use prosumer_exchange::domain::{generate_scenario, ExchangePrices, GeneratorKnobs, TimeGrid};
use prosumer_exchange::equilibrium::{solve_gne, verify_equilibrium_with};
use prosumer_exchange::exec::ExecMode;
use prosumer_exchange::experiments::{compare_exchange_sweep, SweepSpec};
use prosumer_exchange::market::{run_algo_dist, AlgoDistConfig};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn best_response_sweeps(c: &mut Criterion) {
    let scenario = generate_scenario(8, &TimeGrid::daytime(6, 6), 3, &GeneratorKnobs::default()).unwrap();
    let mut group = c.benchmark_group("algo_dist_20_sweeps");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = AlgoDistConfig { epsilon: 1e-3, max_iters: 20, exec, ..AlgoDistConfig::default() };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run_algo_dist(&scenario, cfg).unwrap())
        });
    }
    group.finish();
}

fn deviation_check(c: &mut Criterion) {
    let scenario = generate_scenario(8, &TimeGrid::daytime(6, 6), 3, &GeneratorKnobs::default()).unwrap();
    let mu = ExchangePrices::uniform(8, 6, 0.0);
    let profile = solve_gne(&scenario, &mu, 1e-8).unwrap();
    let mut group = c.benchmark_group("verify_equilibrium");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| verify_equilibrium_with(&profile, &mu, &scenario, 1e-6, exec).unwrap()));
    }
    group.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("compare_exchange_8_seeds");
    group.sample_size(10);
    for (name, exec) in MODES {
        let spec = SweepSpec { exec, ..SweepSpec::new(TimeGrid::daytime(6, 6), GeneratorKnobs::default(), (0..8).collect()) };
        group.bench_function(name, |b| b.iter(|| compare_exchange_sweep(&spec, 5).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, best_response_sweeps, deviation_check, seed_sweep);
criterion_main!(benches);
