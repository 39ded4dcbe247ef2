use repmarket::config::Config;
use repmarket::experiments::factorial::cell_config;
use repmarket::experiments::{run_replication, run_replications, FactorialCell};
use repmarket::sim::Simulation;
use repmarket::RunConfig;

fn small() -> RunConfig {
    RunConfig { n_agents: 6, n_steps: 800, burn_in: 200, ..RunConfig::default() }
}

#[test]
fn same_seed_same_path() {
    let cfg = small();
    let run = |c: &RunConfig| {
        let mut s = Simulation::new(c, 3).unwrap();
        s.run_to_end().unwrap();
        s.into_trajectory()
    };
    assert_eq!(run(&cfg), run(&cfg));
    let other = RunConfig { seed: cfg.seed + 1, ..cfg.clone() };
    assert_ne!(run(&cfg).prices, run(&other).prices);
}

#[test]
fn records_do_not_depend_on_thread_count() {
    let cfg = small();
    let with = |n: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| run_replications(&cfg, 4).unwrap())
    };
    let a = with(1);
    let b = with(3);
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn factorial_cells_share_shock_paths() {
    let cfg = Config { run: small(), ..Config::default() };
    let paths: Vec<Vec<f64>> = [FactorialCell::new(0, 0, 0), FactorialCell::new(1, 1, 1)]
        .iter()
        .map(|&c| run_replication(&cell_config(&cfg.run, &cfg.experiment, c), 2, true).unwrap().trajectory.unwrap().shocks)
        .collect();
    assert_eq!(paths[0], paths[1]);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = Config::default();
    let text = cfg.to_toml_string();
    assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
    assert!(Config::from_toml_str("[run]\nn_agentz = 3\n").is_err());
    assert!(Config::from_toml_str("[run]\nn_agents = 0\n").and_then(|c| c.validate()).is_err());
    let partial = Config::from_toml_str("[run.pricing]\nlambda0 = 0.02\n").unwrap();
    assert_eq!(partial.run.pricing.lambda0, 0.02);
    assert_eq!(partial.run.pricing.psi0, cfg.run.pricing.psi0);
}
