//! Train the checkpoint policy on the built-in synthetic environment and
//! compare it against the periodic and conservative baselines on paired
//! evaluation traces.
//!
//!     cargo run --release -p ckptsim-core --example compare_policies

use ckptsim_core::policy::PeriodicConfig;
use ckptsim_core::qlearn::{extract_action_bits, train, TrainConfig};
use ckptsim_core::sim::{compare, PolicySpec, RunConfig, TraceSource};
use ckptsim_core::system::{ProgramSpec, SystemParams};
use ckptsim_core::trace::TransitionModel;

fn main() {
    let sys = SystemParams::default();
    let prog = ProgramSpec::new("synthetic", 50_000, 10).unwrap();
    let model = TransitionModel::synthetic_default()
        .rescaled_to_mean(0.6, 200_000, 1234)
        .unwrap();

    let episodes: u32 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(60_000);
    let cfg = TrainConfig {
        episodes,
        seed: 42,
        ..TrainConfig::default()
    };

    let t0 = std::time::Instant::now();
    let out = train(&sys, &prog, &model, &cfg).unwrap();
    println!(
        "trained {} episodes in {:.1?}: coverage {:.1}%, final eps {:.2}, max recent delta {:.3}, truncated {}",
        cfg.episodes,
        t0.elapsed(),
        100.0 * out.report.coverage,
        out.report.final_epsilon,
        out.report.convergence_max_delta,
        out.report.truncated_episodes,
    );
    let bits = extract_action_bits(&out.qtable);
    let set: usize = (0..ckptsim_core::mdp::state_count(100, 20))
        .filter(|&i| bits.bit_at(i))
        .count();
    println!("action bits set: {set} / 200000");

    let specs = vec![
        PolicySpec::Qlearn(bits),
        PolicySpec::Periodic(PeriodicConfig::default()),
        PolicySpec::Conservative,
    ];
    let base = RunConfig::new(
        10_000,
        TraceSource::Model {
            model,
            sample_period_s: 0.005,
        },
        3600.0,
    );
    let cmp = compare(&prog, &sys, &specs, &base, 5).unwrap();
    println!(
        "\n{:<14} {:>6} {:>12} {:>8} {:>10} {:>12} {:>10}",
        "policy", "seed", "norm_rt", "n_cps", "n_rb", "rb_cost_s", "off_s"
    );
    for r in &cmp.rows {
        println!(
            "{:<14} {:>6} {:>12.4} {:>8} {:>10} {:>12.4} {:>10.4}",
            r.policy, r.seed, r.normalized_runtime, r.n_checkpoints, r.n_rollbacks,
            r.rollback_cost_s, r.off_time_s
        );
    }
    for p in ["qlearn", "periodic", "conservative"] {
        println!("mean {p}: {:.4}", cmp.mean_normalized_runtime(p));
    }
    println!(
        "speedup qlearn vs periodic: {:.3}",
        cmp.mean_normalized_runtime("periodic") / cmp.mean_normalized_runtime("qlearn")
    );
}
