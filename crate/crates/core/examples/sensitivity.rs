//! Diagnostics for the trained table's threshold structure and for battery
//! granularity / super-interval sweeps.
//!
//!     cargo run --release -p ckptsim-core --example sensitivity [episodes]

use ckptsim_core::mdp::MdpState;
use ckptsim_core::qlearn::{extract_action_bits, train, QTable, TrainConfig};
use ckptsim_core::sim::{compare, PolicySpec, RunConfig, TraceSource};
use ckptsim_core::system::{ProgramSpec, SystemParams};
use ckptsim_core::trace::TransitionModel;

/// Number of consecutive checkpoint-preferred levels from the affordability
/// floor up.
fn crossing(q: &QTable, p: u32, c: u32, b_dim: u32, floor: u32) -> usize {
    let mut t = 0;
    for b in floor..b_dim {
        let s = MdpState::new(p, c, b);
        let chpt = q.value_of(&s, ckptsim_core::mdp::Action::Checkpoint).unwrap();
        let proc = q.value_of(&s, ckptsim_core::mdp::Action::Proceed).unwrap();
        if chpt < proc {
            t += 1;
        } else {
            break;
        }
    }
    t
}

fn downward_closed(q: &QTable, p: u32, c: u32, b_dim: u32, floor: u32) -> bool {
    let mut seen_proc = false;
    for b in floor..b_dim {
        let s = MdpState::new(p, c, b);
        let chpt = q.value_of(&s, ckptsim_core::mdp::Action::Checkpoint).unwrap();
        let proc = q.value_of(&s, ckptsim_core::mdp::Action::Proceed).unwrap();
        let prefers_chpt = chpt < proc;
        if prefers_chpt && seen_proc {
            return false;
        }
        if !prefers_chpt {
            seen_proc = true;
        }
    }
    true
}

fn well_visited(q: &QTable, p: u32, c: u32, b_dim: u32, min_visits: u32) -> bool {
    (0..b_dim).all(|b| {
        let s = MdpState::new(p, c, b);
        let n = q.visit_count(&s, ckptsim_core::mdp::Action::Proceed).unwrap()
            + q.visit_count(&s, ckptsim_core::mdp::Action::Checkpoint).unwrap();
        n >= min_visits
    })
}

fn main() {
    let episodes: u32 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(300_000);
    let model = TransitionModel::synthetic_default()
        .rescaled_to_mean(0.6, 200_000, 1234)
        .unwrap();
    let prog = ProgramSpec::new("synthetic", 50_000, 10).unwrap();

    // --- threshold structure on the default table ---
    let sys = SystemParams::default();
    let cfg = TrainConfig {
        episodes,
        seed: 42,
        ..TrainConfig::default()
    };
    let out = train(&sys, &prog, &model, &cfg).unwrap();
    let q = &out.qtable;

    let (s_dim, b_dim) = q.dims();
    // battery levels below this cannot fund a checkpoint at all
    let cp_nj = ckptsim_core::system::checkpoint_cost(&sys, &prog).energy_nj;
    let floor = (cp_nj / sys.battery_quantum_nj()).ceil() as u32;
    println!("affordability floor: level {floor}");
    let mut pairs = 0usize;
    let mut closed = 0usize;
    for p in 1..s_dim - 1 {
        for c in 0..p {
            if well_visited(q, p, c, b_dim, 3) {
                pairs += 1;
                if downward_closed(q, p, c, b_dim, floor) {
                    closed += 1;
                }
            }
        }
    }
    println!(
        "downward-closed: {closed}/{pairs} well-visited (p,c) pairs = {:.1}%",
        100.0 * closed as f64 / pairs.max(1) as f64
    );

    let mut cmp_pairs = 0usize;
    let mut ok = 0usize;
    for p in 7..s_dim - 1 {
        let (c1, c6) = (p - 1, p - 6);
        if well_visited(q, p, c1, b_dim, 3) && well_visited(q, p, c6, b_dim, 3) {
            cmp_pairs += 1;
            if crossing(q, p, c1, b_dim, floor) <= crossing(q, p, c6, b_dim, floor) {
                ok += 1;
            }
        }
    }
    println!(
        "crossing(c=p-1) <= crossing(c=p-6): {ok}/{cmp_pairs} = {:.1}%",
        100.0 * ok as f64 / cmp_pairs.max(1) as f64
    );

    // --- hardware-dimension sweeps ---
    // training effort scales with the swept dimension: larger tables need
    // proportionally more episodes to reach comparable per-state visits
    for (param, values, default_v) in [
        ("B", vec![5u32, 20, 80], 20u32),
        ("S", vec![50u32, 200, 800], 100u32),
    ] {
        println!("\n{param} sweep:");
        let mut first = None;
        for &v in &values {
            let mut sys = SystemParams::default();
            match param {
                "B" => sys.battery_levels = v,
                _ => sys.super_interval = v,
            }
            let scaled = ((episodes as u64 * v as u64) / default_v as u64).max(1) as u32;
            let cfg = TrainConfig {
                episodes: scaled,
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
            let cmp = compare(&prog, &sys, &[PolicySpec::Qlearn(bits)], &base, 5).unwrap();
            let mean = cmp.mean_normalized_runtime("qlearn");
            let speedup = first.get_or_insert(mean).to_owned() / mean;
            println!(
                "  {param}={v:<4} mean_rt {mean:.4}  speedup_vs_first {speedup:.3}  (train {:.1?})",
                t0.elapsed()
            );
        }
    }
}
