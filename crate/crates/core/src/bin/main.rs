use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prosumer_exchange::domain::{
    feasibility_check, generate_scenario, ExchangePrices, GeneratorKnobs, ScenarioConfig, TimeGrid,
};
use prosumer_exchange::equilibrium::{efficiency, solve_gne, solve_social, verify_equilibrium};
use prosumer_exchange::exec::ExecMode;
use prosumer_exchange::experiments::{
    compare_exchange, compare_exchange_sweep, efficiency_sweep, gamma_sweep, interior_welfare_peak,
    ExchangeComparison, SweepSpec,
};
use prosumer_exchange::io::{
    read_json, read_ledger, read_prices, read_profile, read_scenario, write_csv, write_json, write_ledger,
};
use prosumer_exchange::market::{run_algo_dist, AlgoDistConfig, ProximalSchedule};
use prosumer_exchange::metrics::{compute_metrics, RunMetrics};

#[derive(Parser)]
#[command(version, about = "Prosumer energy-exchange simulator")]
struct Cli {
    /// Run independent work items one at a time.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random scenario.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for the equilibrium at fixed prices.
    RunCentral {
        #[arg(long)]
        scenario: PathBuf,
        /// A price file, or a number used as the price of every seller.
        #[arg(long, default_value = "0")]
        mu: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Also compute the efficiency ratio.
        #[arg(long)]
        eta: bool,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Solve the planner's problem.
    RunSocial {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "0")]
        mu: String,
        #[arg(long)]
        no_exchange: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Run the distributed price-adjustment loop.
    RunDist {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
        #[arg(long, default_value_t = 0.0)]
        mu_floor: f64,
        /// Constant proximal weight; defaults to a scenario-derived value.
        #[arg(long)]
        proximal_weight: Option<f64>,
        /// Also lower prices of sellers with unsold supply.
        #[arg(long)]
        symmetric_decrease: bool,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the final prices.
        #[arg(long)]
        mu_out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Efficiency ratio over prosumer counts and seeds.
    EfficiencySweep {
        #[arg(long, value_delimiter = ',', default_value = "2,5,10,20")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 6)]
        t: usize,
        /// Multipliers of the renewable mean.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        renewable_scales: Vec<f64>,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Equilibrium peak load and welfare with and without the peer market.
    CompareExchange {
        #[arg(long, conflicts_with_all = ["n", "seeds"])]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 12)]
        t: usize,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Equilibrium welfare as the grid price coefficient varies.
    GammaSweep {
        /// `start:stop:step` or a comma-separated list.
        #[arg(long, default_value = "0.05:0.5:0.05")]
        gammas: String,
        #[arg(long, conflicts_with_all = ["n", "seed"])]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 12)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a profile's feasibility and equilibrium gap, and a ledger's chain.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, requires = "profile")]
        mu: Option<String>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Largest acceptable payoff gain from a unilateral deviation.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Args)]
struct GenArgs {
    /// JSON file with generator knobs; flags below override it.
    #[arg(long)]
    knobs: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    start_hour: usize,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    renewable_mean: Option<f64>,
}

impl GenArgs {
    fn knobs(&self) -> Result<GeneratorKnobs, String> {
        let mut knobs = match &self.knobs {
            Some(path) => read_json(path).map_err(|e| e.to_string())?,
            None => GeneratorKnobs::default(),
        };
        if let Some(g) = self.gamma {
            knobs.gamma = g;
        }
        if let Some(r) = self.renewable_mean {
            knobs.renewable_mean = r;
        }
        Ok(knobs)
    }
}

fn prices(arg: &str, scenario: &ScenarioConfig) -> Result<ExchangePrices, String> {
    match arg.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => {
            Ok(ExchangePrices::uniform(scenario.num_prosumers(), scenario.num_slots(), v))
        }
        Ok(_) => Err(format!("--mu: price {arg} must be non-negative")),
        Err(_) => read_prices(Path::new(arg), scenario).map_err(|e| e.to_string()),
    }
}

fn parse_gammas(arg: &str) -> Result<Vec<f64>, String> {
    let bad = || format!("--gammas: cannot parse `{arg}`");
    let parts: Vec<&str> = arg.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0 && stop >= start) {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // Rounded so that 0.05:0.5:0.05 yields 0.15, not 0.15000000000000002.
        return Ok((0..=count).map(|k| ((start + step * k as f64) * 1e12).round() / 1e12).collect());
    }
    arg.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn write_metrics(path: &Path, metrics: &RunMetrics) -> Result<(), String> {
    write_csv(path, &RunMetrics::CSV_HEADER, [metrics.csv_record()]).map_err(|e| e.to_string())
}

fn print_metrics(m: &RunMetrics) {
    println!(
        "total grid load {:.6}, peak {:.6}, welfare {:.6}, complementarity {:.3e}{}",
        m.total_grid_load,
        m.peak_grid_load,
        m.social_welfare,
        m.complementarity_violation,
        m.eta.map(|e| format!(", eta {e:.8}")).unwrap_or_default()
    );
}

fn comparison_record(c: &ExchangeComparison) -> Vec<String> {
    let mut rec = vec![c.seed.map(|s| s.to_string()).unwrap_or_default()];
    for m in [&c.with_exchange, &c.without_exchange] {
        rec.extend([m.peak_grid_load.to_string(), m.social_welfare.to_string(), m.total_grid_load.to_string()]);
    }
    rec.extend([c.peak_reduction().to_string(), c.welfare_gain().to_string()]);
    rec
}

const COMPARE_HEADER: [&str; 9] = [
    "seed",
    "peak_exchange",
    "welfare_exchange",
    "total_exchange",
    "peak_no_exchange",
    "welfare_no_exchange",
    "total_no_exchange",
    "peak_reduction",
    "welfare_gain",
];

fn run(cli: Cli) -> Result<bool, String> {
    let exec = if cli.sequential { ExecMode::Sequential } else { ExecMode::default() };
    let err = |e: &dyn std::fmt::Display| e.to_string();
    match cli.command {
        Command::Generate { n, t, seed, gen, out } => {
            let time = TimeGrid::daytime(t, gen.start_hour);
            let scenario = generate_scenario(n, &time, seed, &gen.knobs()?).map_err(|e| err(&e))?;
            write_json(&out, &scenario).map_err(|e| err(&e))?;
        }
        Command::RunCentral { scenario, mu, out, metrics, eta, tol } => {
            let scenario = read_scenario(&scenario).map_err(|e| err(&e))?;
            let mu = prices(&mu, &scenario)?;
            let profile = solve_gne(&scenario, &mu, tol).map_err(|e| err(&e))?;
            let mut m = compute_metrics(&profile, &scenario).map_err(|e| err(&e))?;
            if eta {
                m.eta = efficiency(&scenario, &mu, tol).map_err(|e| err(&e))?.eta;
            }
            print_metrics(&m);
            if let Some(path) = out {
                write_json(&path, &profile).map_err(|e| err(&e))?;
            }
            if let Some(path) = metrics {
                write_metrics(&path, &m)?;
            }
        }
        Command::RunSocial { scenario, mu, no_exchange, out, metrics, tol } => {
            let scenario = read_scenario(&scenario).map_err(|e| err(&e))?;
            let mu = prices(&mu, &scenario)?;
            let profile = solve_social(&scenario, &mu, !no_exchange, tol).map_err(|e| err(&e))?;
            let m = compute_metrics(&profile, &scenario).map_err(|e| err(&e))?;
            print_metrics(&m);
            if let Some(path) = out {
                write_json(&path, &profile).map_err(|e| err(&e))?;
            }
            if let Some(path) = metrics {
                write_metrics(&path, &m)?;
            }
        }
        Command::RunDist {
            scenario,
            epsilon,
            max_iters,
            mu_floor,
            proximal_weight,
            symmetric_decrease,
            ledger,
            trace,
            out,
            mu_out,
            metrics,
        } => {
            let scenario = read_scenario(&scenario).map_err(|e| err(&e))?;
            let cfg = AlgoDistConfig {
                epsilon,
                max_iters,
                mu_floor,
                proximal: proximal_weight.map_or(ProximalSchedule::Auto, ProximalSchedule::Constant),
                symmetric_decrease,
                exec,
                ..AlgoDistConfig::default()
            };
            let outcome = run_algo_dist(&scenario, &cfg).map_err(|e| err(&e))?;
            let m = compute_metrics(&outcome.profile, &scenario).map_err(|e| err(&e))?;
            println!(
                "{} after {} iterations, mean price {:.6}",
                if outcome.converged { "converged" } else { "not converged" },
                outcome.iterations,
                outcome.mu.mean()
            );
            print_metrics(&m);
            if let Some(path) = ledger {
                write_ledger(&path, &outcome.ledger).map_err(|e| err(&e))?;
            }
            if let Some(path) = trace {
                let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                outcome.trace.write_csv(file).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            if let Some(path) = out {
                write_json(&path, &outcome.profile).map_err(|e| err(&e))?;
            }
            if let Some(path) = mu_out {
                write_json(&path, &outcome.mu).map_err(|e| err(&e))?;
            }
            if let Some(path) = metrics {
                write_metrics(&path, &m)?;
            }
            return Ok(outcome.converged);
        }
        Command::EfficiencySweep { n_list, seeds, t, renewable_scales, gen, out } => {
            let spec = SweepSpec {
                exec,
                ..SweepSpec::new(TimeGrid::daytime(t, gen.start_hour), gen.knobs()?, (0..seeds).collect())
            };
            let rows = efficiency_sweep(&spec, &n_list, &renewable_scales).map_err(|e| err(&e))?;
            let records = rows.iter().map(|r| {
                [
                    r.num_prosumers.to_string(),
                    r.seed.map(|s| s.to_string()).unwrap_or_default(),
                    r.renewable_scale.to_string(),
                    r.p_eq.to_string(),
                    r.p_star.to_string(),
                    r.eta.map(|e| e.to_string()).unwrap_or_default(),
                ]
            });
            write_csv(&out, &["n", "seed", "renewable_scale", "p_eq", "p_star", "eta"], records)
                .map_err(|e| err(&e))?;
        }
        Command::CompareExchange { scenario, n, t, seeds, gen, out } => {
            let rows = match scenario {
                Some(path) => {
                    let scenario = read_scenario(&path).map_err(|e| err(&e))?;
                    vec![compare_exchange(&scenario, 1e-8).map_err(|e| err(&e))?]
                }
                None => {
                    let spec = SweepSpec {
                        exec,
                        ..SweepSpec::new(TimeGrid::daytime(t, gen.start_hour), gen.knobs()?, (0..seeds).collect())
                    };
                    compare_exchange_sweep(&spec, n).map_err(|e| err(&e))?
                }
            };
            for r in &rows {
                println!(
                    "seed {}: peak reduction {:.1}%, welfare gain {:.4}",
                    r.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                    100.0 * r.peak_reduction(),
                    r.welfare_gain()
                );
            }
            write_csv(&out, &COMPARE_HEADER, rows.iter().map(comparison_record)).map_err(|e| err(&e))?;
        }
        Command::GammaSweep { gammas, scenario, n, t, seed, gen, out } => {
            let gammas = parse_gammas(&gammas)?;
            let scenario = match scenario {
                Some(path) => read_scenario(&path).map_err(|e| err(&e))?,
                None => generate_scenario(n, &TimeGrid::daytime(t, gen.start_hour), seed, &gen.knobs()?)
                    .map_err(|e| err(&e))?,
            };
            let points = gamma_sweep(&scenario, &gammas, 1e-8, exec).map_err(|e| err(&e))?;
            match interior_welfare_peak(&points) {
                Some(k) => println!("welfare peaks inside the sweep at gamma {}", points[k].gamma),
                None => println!("welfare peaks at an end of the sweep"),
            }
            let records = points.iter().map(|p| {
                [
                    p.gamma.to_string(),
                    p.metrics.social_welfare.to_string(),
                    p.metrics.peak_grid_load.to_string(),
                    p.metrics.total_grid_load.to_string(),
                ]
            });
            write_csv(&out, &["gamma", "social_welfare", "peak_grid_load", "total_grid_load"], records)
                .map_err(|e| err(&e))?;
        }
        Command::Verify { scenario, mu, profile, ledger, tol } => {
            let scenario = read_scenario(&scenario).map_err(|e| err(&e))?;
            let mut ok = true;
            if let Some(path) = profile {
                let profile = read_profile(&path, &scenario).map_err(|e| err(&e))?;
                for (i, d) in profile.decisions.iter().enumerate() {
                    for v in feasibility_check(&scenario, i, d) {
                        ok = false;
                        println!("prosumer {i}: {:?} violated by {:.3e} at slot {:?}", v.constraint, v.magnitude, v.slot);
                    }
                }
                let mu = prices(mu.as_deref().unwrap_or("0"), &scenario)?;
                let gap = verify_equilibrium(&profile, &mu, &scenario, tol).map_err(|e| err(&e))?;
                println!("largest unilateral gain {gap:.3e}");
                ok &= gap <= tol;
            }
            if let Some(path) = ledger {
                let ledger = read_ledger(&path).map_err(|e| err(&e))?;
                let intact = ledger.verify();
                println!("ledger with {} blocks {}", ledger.len(), if intact { "intact" } else { "tampered" });
                ok &= intact;
            }
            println!("{}", if ok { "all checks passed" } else { "checks failed" });
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
