//! Train two entity policies briefly and print their estimated divergence.
//!
//! `cargo run --release --example quickstart`

use caml::divergence::{pairwise_divergence, DivergenceConfig};
use caml::env::make_population;
use caml::policy::{collect_trajectory, init_params, train_step, TrainConfig, DEFAULT_LAYOUT};
use caml::rng::rng_from;

fn main() -> caml::Result<()> {
    let pop = make_population(2, 1, 0.3, 7)?;
    let cfg = TrainConfig::default();
    let mut rng = rng_from(0);
    let mut policies = Vec::new();
    let mut trajectories = Vec::new();
    for entity in &pop.entities {
        let mut params = init_params(0, &DEFAULT_LAYOUT)?;
        for _ in 0..20 {
            params = train_step(&params, entity, &cfg, &mut rng).0;
        }
        trajectories.push(collect_trajectory(&params, &cfg.env, entity, &mut rng));
        policies.push(params);
    }
    let d = pairwise_divergence(&policies, &trajectories, &DivergenceConfig::default(), &mut rng)?;
    print!("{}", d.to_csv_string());
    Ok(())
}
