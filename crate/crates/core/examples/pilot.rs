//! Regenerates the frozen pilot fixture used by the acceptance suite.
//!
//! `cargo run --release -p guirc --example pilot > crates/core/tests/fixtures/pilot.json`

use guirc::sim::*;
use serde_json::json;

const K_VALUES: [f64; 9] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0];
const DISPERSION_VALUES: [f64; 8] = [0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0];
const ALPHA_VALUES: [f64; 8] = [2.0, 5.0, 10.0, 20.0, 30.0, 50.0, 80.0, 120.0];

fn main() -> guirc::Result<()> {
    let dominance_cfg = DominanceConfig::default();
    let dominance = rc_vs_single_experiment(&dominance_cfg, 500)?;

    let demo_cfg = DemoConfig::default();
    let curve = run_rcpo_demo(&demo_cfg)?;

    let sweep_cfg = SweepConfig::default();
    let k = ablation_sweep(SweepParam::KSamples, &K_VALUES, &sweep_cfg)?;
    let dispersion = ablation_sweep(SweepParam::Dispersion, &DISPERSION_VALUES, &sweep_cfg)?;
    let alpha = ablation_sweep(SweepParam::Alpha, &ALPHA_VALUES, &sweep_cfg)?;

    let out = json!({
        "dominance": {
            "config": dominance_cfg,
            "trials": 500,
            "min_rate": 0.95,
            "observed_rate": dominance.dominance_rate,
            "observed_consensus": dominance.consensus,
            "observed_single": dominance.single,
        },
        "rcpo": {
            "config": demo_cfg,
            "window": 20,
            "max_std_ratio": 0.5,
            "observed_initial_std": curve.initial.center_std(),
            "observed_final_std": curve.final_policy.center_std(),
            "observed_windows": curve.windowed_reward(20),
        },
        "sweeps": {
            "config": sweep_cfg,
            // Gain between the last two K values below which the curve counts as flat.
            "plateau_tol": 0.01,
            "k_samples": { "values": K_VALUES, "observed": k.accuracies() },
            "dispersion": { "values": DISPERSION_VALUES, "observed": dispersion.accuracies() },
            "alpha": { "values": ALPHA_VALUES, "observed": alpha.accuracies() },
        },
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
