//! Runs the default ensemble experiment over a range of seeds and prints
//! individual vs fused avg mAP.
//!
//! cargo run --release --example seed_sweep -- [num_seeds]

use talfuse::eval::EvalConfig;
use talfuse::fusion::FusionConfig;
use talfuse::simulator::{run_ensemble_experiment, SimConfig};

fn main() -> anyhow::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(20);
    let fusion = FusionConfig::default();
    let eval = EvalConfig::default();
    let mut wins = 0;
    let mut total_delta = 0.0;
    for seed in 0..seeds {
        let config = SimConfig {
            seed,
            ..SimConfig::default()
        };
        let r = run_ensemble_experiment(&config, &fusion, &eval)?;
        let singles: Vec<String> = r
            .models
            .iter()
            .map(|m| format!("{:.4}", m.avg_map))
            .collect();
        println!(
            "seed {seed:>3}  models [{}]  wbf {:.4}  nms {:.4}  soft-nms {:.4}  delta {:+.4}",
            singles.join(", "),
            r.wbf.avg_map,
            r.nms.avg_map,
            r.soft_nms.avg_map,
            r.wbf_delta
        );
        wins += usize::from(r.wbf_delta >= 0.0);
        total_delta += r.wbf_delta;
    }
    println!(
        "wbf >= best single in {wins}/{seeds} seeds, mean delta {:+.4}",
        total_delta / seeds as f64
    );
    Ok(())
}
