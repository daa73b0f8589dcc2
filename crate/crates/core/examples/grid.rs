//! Scratch grid: runtime of the learned policy as a function of battery
//! granularity and training effort.
//!
//!     cargo run --release -p ckptsim-core --example grid -- B 5:300000 5:1200000 20:300000 ...

use ckptsim_core::qlearn::{extract_action_bits, train, TrainConfig};
use ckptsim_core::sim::{compare, PolicySpec, RunConfig, TraceSource};
use ckptsim_core::system::{ProgramSpec, SystemParams};
use ckptsim_core::trace::TransitionModel;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let param = args[0].clone();
    let dirty: u64 = std::env::var("DIRTY").ok().and_then(|v| v.parse().ok()).unwrap_or(10);
    let eval_seeds: u64 = std::env::var("SEEDS").ok().and_then(|v| v.parse().ok()).unwrap_or(10);
    let model = TransitionModel::synthetic_default()
        .rescaled_to_mean(0.6, 200_000, 1234)
        .unwrap();
    let prog = ProgramSpec::new("synthetic", 50_000, dirty).unwrap();

    for spec in &args[1..] {
        let mut it = spec.split(':');
        let v: u32 = it.next().unwrap().parse().unwrap();
        let episodes: u32 = it.next().unwrap().parse().unwrap();
        let mut sys = SystemParams::default();
        match param.as_str() {
            "B" => sys.battery_levels = v,
            "S" => sys.super_interval = v,
            _ => panic!("param must be B or S"),
        }
        let cfg = TrainConfig {
            episodes,
            seed: 42,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let out = train(&sys, &prog, &model, &cfg).unwrap();
        let bits = extract_action_bits(&out.qtable);
        let base = RunConfig::new(
            10_000,
            TraceSource::Model {
                model: model.clone(),
                sample_period_s: 0.005,
            },
            3600.0,
        );
        let cmp = compare(&prog, &sys, &[PolicySpec::Qlearn(bits)], &base, eval_seeds).unwrap();
        let rts: Vec<f64> = cmp.rows.iter().map(|r| r.normalized_runtime).collect();
        let mean = rts.iter().sum::<f64>() / rts.len() as f64;
        let var = rts.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rts.len() as f64;
        println!(
            "{param}={v:<4} episodes={episodes:<9} mean_rt={mean:.4} sd={:.4} coverage={:.2} (train {:.1?})",
            var.sqrt(),
            out.report.coverage,
            t0.elapsed()
        );
    }
}
