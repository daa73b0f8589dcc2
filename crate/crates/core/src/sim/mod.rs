//! Interval-granularity execution engine: advances a program against a
//! harvested-power source under a checkpoint policy, managing battery energy,
//! checkpoint/restore costs, energy failures, rollbacks and off-time, and
//! emitting a full event log.
//!
//! The progress and checkpoint counters are absolute interval indices over
//! the whole program. Every `S - 1` committed intervals the engine performs
//! the mandatory super-interval checkpoint, so a rollback never crosses a
//! completed super-interval regardless of policy.

pub mod engine;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use self::engine::{DerivedCosts, EngineCore, IntervalOutcome, PowerSource};
use crate::error::{Error, Result};
use crate::mdp::MdpState;
use crate::policy::{
    BoundaryContext, ConservativeScheduler, PeriodicConfig, PeriodicScheduler, PolicyDecision,
    QlearnScheduler, Scheduler, ShortfallResponse,
};
use crate::qlearn::ActionBitTable;
use crate::system::{ProgramSpec, SystemParams};
use crate::trace::{PowerTrace, TransitionModel};

/// Where harvested power comes from during a run.
#[derive(Debug, Clone)]
pub enum TraceSource {
    Trace(PowerTrace),
    /// Generate samples from the chain on the fly at the given spacing.
    Model {
        model: TransitionModel,
        sample_period_s: f64,
    },
}

impl TraceSource {
    fn build(&self, seed: u64) -> PowerSource {
        match self {
            TraceSource::Trace(t) => PowerSource::from_trace(t),
            TraceSource::Model {
                model,
                sample_period_s,
            } => PowerSource::from_model(model, *sample_period_s, seed),
        }
    }
}

/// Per-run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub source: TraceSource,
    /// Watchdog limit on simulated time.
    pub max_sim_time_s: f64,
    /// Initial battery charge as a fraction of capacity.
    pub initial_battery_frac: f64,
    /// Per-interval energy adder for shadow-memory write logging, in nJ.
    pub nvm_log_energy_per_interval: f64,
}

impl RunConfig {
    pub fn new(seed: u64, source: TraceSource, max_sim_time_s: f64) -> Self {
        Self {
            seed,
            source,
            max_sim_time_s,
            initial_battery_frac: 1.0,
            nvm_log_energy_per_interval: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    IntervalDone,
    Checkpoint,
    Failure,
    Rollback,
    Restore,
    PowerOff,
    PowerOn,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::IntervalDone => "interval_done",
            EventKind::Checkpoint => "checkpoint",
            EventKind::Failure => "failure",
            EventKind::Rollback => "rollback",
            EventKind::Restore => "restore",
            EventKind::PowerOff => "power_off",
            EventKind::PowerOn => "power_on",
        }
    }
}

/// One timestamped state snapshot, taken after the event applied.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
    pub prc: u64,
    pub cc: u64,
    pub battery_nj: f64,
}

/// Telemetry of one simulated run.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub exec_time_s: f64,
    pub busy_time_s: f64,
    pub off_time_s: f64,
    pub n_checkpoints: u64,
    pub n_rollbacks: u64,
    pub n_failures: u64,
    /// Re-execution time lost to rollbacks.
    pub rollback_cost_s: f64,
    pub total_harvested_nj: f64,
    pub total_consumed_nj: f64,
    pub initial_battery_nj: f64,
    #[serde(skip)]
    pub events: Vec<Event>,
}

/// Execution time with no failures and no checkpoints.
pub fn baseline_time(prog: &ProgramSpec, sys: &SystemParams) -> f64 {
    prog.total_insts as f64 * sys.cpi / sys.clock_hz
}

struct Runner<'a> {
    eng: EngineCore,
    scheduler: &'a dyn Scheduler,
    s_dim: u32,
    si_len: u64,
    interval_insts: u64,
    quantum_nj: f64,
    deadline_s: f64,
    abs_p: u64,
    abs_c: u64,
    insts_since_cp: u64,
    n_checkpoints: u64,
    n_rollbacks: u64,
    n_failures: u64,
    rollback_cost_s: f64,
    events: Vec<Event>,
}

impl<'a> Runner<'a> {
    fn push(&mut self, kind: EventKind) {
        self.events.push(Event {
            time_s: self.eng.now_s,
            kind,
            prc: self.abs_p,
            cc: self.abs_c,
            battery_nj: self.eng.battery_nj,
        });
    }

    fn commit_checkpoint(&mut self) -> bool {
        let energy = self
            .scheduler
            .checkpoint_energy_override_nj()
            .unwrap_or(self.eng.costs.cp_energy_nj);
        if self.eng.pay_checkpoint_costing(energy) {
            self.abs_c = self.abs_p;
            self.insts_since_cp = 0;
            self.n_checkpoints += 1;
            self.push(EventKind::Checkpoint);
            true
        } else {
            false
        }
    }

    /// Failure bookkeeping shared by interval failures and aborted
    /// checkpoints: roll back, power off, recharge, restore.
    fn recover_after_failure(&mut self) -> Result<()> {
        self.push(EventKind::Failure);
        self.n_failures += 1;
        self.rollback_cost_s +=
            (self.abs_p - self.abs_c) as f64 * self.eng.costs.interval_dt_s;
        self.abs_p = self.abs_c;
        self.push(EventKind::Rollback);
        self.n_rollbacks += 1;
        self.push(EventKind::PowerOff);
        let wake = self.eng.costs.wake_energy_nj;
        self.eng.recharge_until(wake, self.deadline_s)?;
        self.restore();
        Ok(())
    }

    fn sleep_and_restore(&mut self, wake_level: u32) -> Result<()> {
        self.push(EventKind::PowerOff);
        let target = wake_level as f64 * self.quantum_nj;
        self.eng.recharge_until(target, self.deadline_s)?;
        self.restore();
        Ok(())
    }

    fn restore(&mut self) {
        let energy = self
            .scheduler
            .restore_energy_override_nj()
            .unwrap_or(self.eng.costs.rs_energy_nj);
        self.eng.pay_restore_costing(energy);
        self.insts_since_cp = 0;
        self.push(EventKind::Restore);
        self.push(EventKind::PowerOn);
    }

    fn boundary_state(&self) -> MdpState {
        let si_start = self.abs_p - (self.abs_p % self.si_len);
        debug_assert!(self.abs_c >= si_start && self.abs_c <= self.abs_p);
        MdpState::new(
            (self.abs_p - si_start) as u32,
            (self.abs_c - si_start) as u32,
            self.eng.level(),
        )
    }

    fn run(&mut self, intervals_needed: u64) -> Result<()> {
        loop {
            if self.abs_p >= intervals_needed {
                return Ok(());
            }
            if self.eng.now_s > self.deadline_s {
                return Err(Error::NoForwardProgress {
                    limit_s: self.deadline_s,
                });
            }

            // Mandatory super-interval checkpoint banks committed progress.
            if self.abs_p > 0 && self.abs_p % self.si_len == 0 && self.abs_c < self.abs_p {
                if !self.commit_checkpoint() {
                    self.eng.drain();
                    self.recover_after_failure()?;
                }
                continue;
            }

            let ctx = BoundaryContext {
                state: self.boundary_state(),
                battery_nj: self.eng.battery_nj,
                insts_since_cp: self.insts_since_cp,
                has_uncommitted_progress: self.abs_p > self.abs_c,
            };
            match self.scheduler.decide(&ctx) {
                PolicyDecision::Proceed => {}
                PolicyDecision::Checkpoint => {
                    if !self.commit_checkpoint() {
                        self.eng.drain();
                        self.recover_after_failure()?;
                        continue;
                    }
                }
                PolicyDecision::PowerOffUntil(level) => {
                    if self.abs_p > self.abs_c && !self.commit_checkpoint() {
                        self.eng.drain();
                        self.recover_after_failure()?;
                        continue;
                    }
                    self.sleep_and_restore(level)?;
                    continue;
                }
            }

            match self.eng.try_interval(self.scheduler.run_floor_nj()) {
                IntervalOutcome::Completed => {
                    self.abs_p += 1;
                    self.insts_since_cp += self.interval_insts;
                    self.push(EventKind::IntervalDone);
                }
                IntervalOutcome::Shortfall => match self.scheduler.on_shortfall() {
                    ShortfallResponse::Fail => {
                        self.eng.fail_interval();
                        self.recover_after_failure()?;
                    }
                    ShortfallResponse::PreemptiveCheckpoint { wake_level } => {
                        if self.abs_p > self.abs_c && !self.commit_checkpoint() {
                            self.eng.drain();
                            self.recover_after_failure()?;
                            continue;
                        }
                        self.sleep_and_restore(wake_level)?;
                    }
                },
            }
        }
    }
}

/// Simulate one program run under a policy. Deterministic given the seed.
pub fn run(
    prog: &ProgramSpec,
    sys: &SystemParams,
    scheduler: &dyn Scheduler,
    cfg: &RunConfig,
) -> Result<SimResult> {
    sys.validate()?;
    if prog.total_insts < 1 {
        return Err(Error::Config("total_insts: must be >= 1".into()));
    }
    if !(cfg.max_sim_time_s > 0.0) {
        return Err(Error::Config("max_sim_time_s: must be > 0".into()));
    }
    let costs = DerivedCosts::new(
        sys,
        prog,
        scheduler.uses_action_lookup(),
        cfg.nvm_log_energy_per_interval,
    );
    let initial_battery = cfg.initial_battery_frac.clamp(0.0, 1.0) * costs.capacity_nj;
    let eng = EngineCore::new(costs, cfg.source.build(cfg.seed), initial_battery);
    let mut runner = Runner {
        eng,
        scheduler,
        s_dim: sys.super_interval,
        si_len: (sys.super_interval - 1) as u64,
        interval_insts: sys.interval_insts,
        quantum_nj: sys.battery_quantum_nj(),
        deadline_s: cfg.max_sim_time_s,
        abs_p: 0,
        abs_c: 0,
        insts_since_cp: 0,
        n_checkpoints: 0,
        n_rollbacks: 0,
        n_failures: 0,
        rollback_cost_s: 0.0,
        events: Vec::new(),
    };
    let _ = runner.s_dim;
    let intervals_needed = prog.total_insts.div_ceil(sys.interval_insts);
    runner.run(intervals_needed)?;

    Ok(SimResult {
        exec_time_s: runner.eng.busy_s + runner.eng.off_s,
        busy_time_s: runner.eng.busy_s,
        off_time_s: runner.eng.off_s,
        n_checkpoints: runner.n_checkpoints,
        n_rollbacks: runner.n_rollbacks,
        n_failures: runner.n_failures,
        rollback_cost_s: runner.rollback_cost_s,
        total_harvested_nj: runner.eng.harvested_nj,
        total_consumed_nj: runner.eng.consumed_nj,
        initial_battery_nj: initial_battery,
        events: runner.events,
    })
}

/// Policy selector for paired comparisons.
pub enum PolicySpec {
    Qlearn(ActionBitTable),
    Periodic(PeriodicConfig),
    Conservative,
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Qlearn(_) => "qlearn",
            PolicySpec::Periodic(_) => "periodic",
            PolicySpec::Conservative => "conservative",
        }
    }

    pub fn build(&self, sys: &SystemParams, prog: &ProgramSpec) -> Result<Box<dyn Scheduler>> {
        Ok(match self {
            PolicySpec::Qlearn(table) => Box::new(QlearnScheduler::new(table.clone(), sys)?),
            PolicySpec::Periodic(cfg) => Box::new(PeriodicScheduler::new(*cfg)?),
            PolicySpec::Conservative => Box::new(ConservativeScheduler::from_system(sys, prog)?),
        })
    }
}

/// One row of a policy comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub policy: String,
    pub seed: u64,
    pub normalized_runtime: f64,
    pub n_checkpoints: u64,
    pub n_rollbacks: u64,
    pub n_failures: u64,
    pub rollback_cost_s: f64,
    pub off_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    pub fn rows_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a CompareRow> + 'a {
        self.rows.iter().filter(move |r| r.policy == policy)
    }

    pub fn mean_normalized_runtime(&self, policy: &str) -> f64 {
        let rows: Vec<_> = self.rows_for(policy).collect();
        if rows.is_empty() {
            return f64::NAN;
        }
        rows.iter().map(|r| r.normalized_runtime).sum::<f64>() / rows.len() as f64
    }
}

/// Run every policy on identical traces for each of `n_seeds` seeds
/// (`base.seed`, `base.seed + 1`, ...), pairing the comparison.
pub fn compare(
    prog: &ProgramSpec,
    sys: &SystemParams,
    specs: &[PolicySpec],
    base: &RunConfig,
    n_seeds: u64,
) -> Result<Comparison> {
    if n_seeds < 1 {
        return Err(Error::Config("n_seeds: must be >= 1".into()));
    }
    let baseline = baseline_time(prog, sys);
    let mut rows = Vec::new();
    for i in 0..n_seeds {
        let seed = base.seed + i;
        for spec in specs {
            let scheduler = spec.build(sys, prog)?;
            let cfg = RunConfig {
                seed,
                source: base.source.clone(),
                max_sim_time_s: base.max_sim_time_s,
                initial_battery_frac: base.initial_battery_frac,
                nvm_log_energy_per_interval: base.nvm_log_energy_per_interval,
            };
            let res = run(prog, sys, scheduler.as_ref(), &cfg)?;
            rows.push(CompareRow {
                policy: spec.name().to_string(),
                seed,
                normalized_runtime: res.exec_time_s / baseline,
                n_checkpoints: res.n_checkpoints,
                n_rollbacks: res.n_rollbacks,
                n_failures: res.n_failures,
                rollback_cost_s: res.rollback_cost_s,
                off_time_s: res.off_time_s,
            });
        }
    }
    Ok(Comparison { rows })
}

/// Write the event log as `time_s,kind,prc,cc,battery_nj` CSV, ready for
/// progress plots.
pub fn write_events_csv(events: &[Event], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "time_s,kind,prc,cc,battery_nj")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.time_s,
            e.kind.as_str(),
            e.prc,
            e.cc,
            e.battery_nj
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PeriodicConfig;
    use crate::qlearn::{extract_action_bits, QTable};
    use crate::system::CipherConfig;

    fn default_prog() -> ProgramSpec {
        ProgramSpec::new("bench", 50_000, 10).unwrap()
    }

    fn flat_trace(mw: f64) -> TraceSource {
        TraceSource::Trace(PowerTrace::new(0.005, vec![mw, mw]).unwrap())
    }

    #[test]
    fn baseline_time_examples() {
        let sys = SystemParams::default();
        assert!((baseline_time(&default_prog(), &sys) - 0.5).abs() < 1e-12);
        let one = ProgramSpec::new("one", 1, 0).unwrap();
        assert!((baseline_time(&one, &sys) - 1e-5).abs() < 1e-18);
        let mut fast = sys;
        fast.clock_hz *= 2.0;
        assert!((baseline_time(&default_prog(), &fast) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn failure_free_run_is_baseline_plus_mandatory_checkpoints() {
        // Power far above demand pins the battery at capacity; a periodic
        // threshold beyond the program length means the only checkpoint is
        // the super-interval one at interval 99.
        let sys = SystemParams::default();
        let prog = default_prog();
        let sched = PeriodicScheduler::new(PeriodicConfig {
            threshold_insts: 10_000_000,
        })
        .unwrap();
        let cfg = RunConfig::new(0, flat_trace(100.0), 60.0);
        let res = run(&prog, &sys, &sched, &cfg).unwrap();
        assert_eq!(res.n_rollbacks, 0);
        assert_eq!(res.n_failures, 0);
        assert_eq!(res.n_checkpoints, 1);
        let t_cp = 164.0 / sys.clock_hz;
        let expect = baseline_time(&prog, &sys) + t_cp;
        assert!(
            (res.exec_time_s - expect).abs() < 1e-9,
            "exec {} vs {expect}",
            res.exec_time_s
        );
        assert_eq!(res.off_time_s, 0.0);
    }

    #[test]
    fn all_zero_trace_trips_the_watchdog() {
        let sys = SystemParams::default();
        let prog = default_prog();
        let sched = ConservativeScheduler::from_system(&sys, &prog).unwrap();
        let cfg = RunConfig::new(0, flat_trace(0.0), 5.0);
        assert!(matches!(
            run(&prog, &sys, &sched, &cfg),
            Err(Error::NoForwardProgress { .. })
        ));

        let periodic = PeriodicScheduler::new(PeriodicConfig::default()).unwrap();
        assert!(matches!(
            run(&prog, &sys, &periodic, &cfg),
            Err(Error::NoForwardProgress { .. })
        ));
    }

    #[test]
    fn conservative_never_rolls_back() {
        let sys = SystemParams::default();
        let prog = default_prog();
        let sched = ConservativeScheduler::from_system(&sys, &prog).unwrap();
        for seed in 0..5u64 {
            let cfg = RunConfig::new(
                seed,
                TraceSource::Model {
                    model: TransitionModel::synthetic_default()
                        .rescaled_to_mean(0.6, 200_000, 1234)
                        .unwrap(),
                    sample_period_s: 0.005,
                },
                600.0,
            );
            let res = run(&prog, &sys, &sched, &cfg).unwrap();
            assert_eq!(res.n_rollbacks, 0, "seed {seed}");
            assert_eq!(res.n_failures, 0, "seed {seed}");
            assert!(res
                .events
                .iter()
                .all(|e| !matches!(e.kind, EventKind::Rollback | EventKind::Failure)));
        }
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let sys = SystemParams::default();
        let prog = default_prog();
        let sched = PeriodicScheduler::new(PeriodicConfig::default()).unwrap();
        let mk = || {
            RunConfig::new(
                3,
                TraceSource::Model {
                    model: TransitionModel::synthetic_default()
                        .rescaled_to_mean(0.6, 200_000, 1234)
                        .unwrap(),
                    sample_period_s: 0.005,
                },
                600.0,
            )
        };
        let a = run(&prog, &sys, &sched, &mk()).unwrap();
        let b = run(&prog, &sys, &sched, &mk()).unwrap();
        assert_eq!(a.events.len(), b.events.len());
        for (x, y) in a.events.iter().zip(&b.events) {
            assert_eq!(x.time_s.to_bits(), y.time_s.to_bits());
            assert_eq!(x.kind, y.kind);
            assert_eq!(x.prc, y.prc);
            assert_eq!(x.cc, y.cc);
            assert_eq!(x.battery_nj.to_bits(), y.battery_nj.to_bits());
        }
    }

    #[test]
    fn event_log_invariants_hold() {
        let sys = SystemParams::default();
        let prog = default_prog();
        let sched = PeriodicScheduler::new(PeriodicConfig::default()).unwrap();
        let cfg = RunConfig::new(
            7,
            TraceSource::Model {
                model: TransitionModel::synthetic_default()
                    .rescaled_to_mean(0.6, 200_000, 1234)
                    .unwrap(),
                sample_period_s: 0.005,
            },
            600.0,
        );
        let res = run(&prog, &sys, &sched, &cfg).unwrap();
        assert!(res.n_failures > 0, "want a trace that actually fails");

        // times non-decreasing, committed progress monotone, battery bounded
        let cap = sys.capacity_nj();
        let mut last_t = 0.0;
        let mut last_cc = 0;
        for e in &res.events {
            assert!(e.time_s >= last_t);
            assert!(e.cc >= last_cc);
            assert!(e.battery_nj >= -1e-9 && e.battery_nj <= cap + 1e-9);
            assert!(e.cc <= e.prc);
            last_t = e.time_s;
            last_cc = e.cc;
        }

        // exact wall-clock decomposition and energy conservation
        assert_eq!(res.exec_time_s, res.busy_time_s + res.off_time_s);
        assert!(
            res.total_consumed_nj <= res.total_harvested_nj + res.initial_battery_nj + 1e-6
        );
        assert!(res.exec_time_s >= baseline_time(&prog, &sys));
    }

    #[test]
    fn rollback_cost_bounded_with_checkpoint_every_interval() {
        // Zero-cost checkpoints taken at every boundary keep each failure's
        // lost progress to at most one interval.
        let sys = SystemParams {
            cipher: CipherConfig::none(),
            nvm_write_energy_per_word: 0.0,
            nvm_read_energy_per_word: 0.0,
            base_cp_latency_cycles: 0,
            ..SystemParams::default()
        };
        let prog = ProgramSpec::new("t", 25_000, 0).unwrap();
        let sched = PeriodicScheduler::new(PeriodicConfig { threshold_insts: 1 }).unwrap();
        let cfg = RunConfig::new(
            11,
            TraceSource::Model {
                model: TransitionModel::synthetic_default()
                    .rescaled_to_mean(0.6, 200_000, 1234)
                    .unwrap(),
                sample_period_s: 0.005,
            },
            600.0,
        );
        let res = run(&prog, &sys, &sched, &cfg).unwrap();
        assert!(res.n_failures > 0);
        let dt = 0.005;
        assert!(
            res.rollback_cost_s <= res.n_failures as f64 * dt + 1e-12,
            "rollback {} vs {} failures",
            res.rollback_cost_s,
            res.n_failures
        );
    }

    #[test]
    fn compare_pairs_policies_on_identical_traces() {
        let sys = SystemParams::default();
        let prog = default_prog();
        // A checkpoint-everywhere table: untrained all-proceed bits cannot
        // survive 99 consecutive intervals to bank a super-interval.
        let mut table = extract_action_bits(&QTable::new(100, 20));
        for i in 0..crate::mdp::state_count(100, 20) {
            table.set_bit_at(i, true);
        }
        let specs = vec![
            PolicySpec::Qlearn(table),
            PolicySpec::Periodic(PeriodicConfig::default()),
            PolicySpec::Conservative,
        ];
        let base = RunConfig::new(
            100,
            TraceSource::Model {
                model: TransitionModel::synthetic_default()
                    .rescaled_to_mean(0.6, 200_000, 1234)
                    .unwrap(),
                sample_period_s: 0.005,
            },
            600.0,
        );
        let cmp = compare(&prog, &sys, &specs, &base, 2).unwrap();
        assert_eq!(cmp.rows.len(), 6);
        for row in cmp.rows_for("conservative") {
            assert_eq!(row.n_rollbacks, 0);
        }
        for row in &cmp.rows {
            assert!(row.normalized_runtime >= 1.0, "{row:?}");
        }
    }
}
