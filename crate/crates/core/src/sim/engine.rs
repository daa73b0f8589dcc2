//! Shared battery/time stepper driving both offline training and the
//! simulator proper, so learned tables are evaluated under exactly the
//! dynamics they were trained on.
//!
//! Power is read from a zero-order-hold source: a fixed trace (cycled when
//! read past its end) or a lazily extended realization of a transition-model
//! chain. All stored energy is in nJ, all time in seconds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::system::{checkpoint_cost, interval_demand, restore_cost, ProgramSpec, SystemParams};
use crate::trace::{sample_row, PowerTrace, TransitionModel};

const NJ_PER_MW_S: f64 = 1e6;
const PJ_PER_NJ: f64 = 1e-3;

struct ChainState {
    probs: Vec<Vec<f64>>,
    levels_mw: Vec<f64>,
    rng: ChaCha8Rng,
    current_level: usize,
}

/// Zero-order-hold power lookup over a fixed trace or a chain realization.
pub struct PowerSource {
    period_s: f64,
    samples_mw: Vec<f64>,
    chain: Option<ChainState>,
}

impl PowerSource {
    /// Wrap a fixed trace; reads past the end cycle back to the start.
    pub fn from_trace(trace: &PowerTrace) -> Self {
        Self {
            period_s: trace.sample_period_s(),
            samples_mw: trace.samples_mw().to_vec(),
            chain: None,
        }
    }

    /// Sample the chain lazily at `period_s` spacing. The initial level is
    /// drawn uniformly from the seeded generator.
    pub fn from_model(model: &TransitionModel, period_s: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = model.levels().len();
        let initial = rng.gen_range(0..k);
        let chain = ChainState {
            probs: model.probs().to_vec(),
            levels_mw: model.levels().levels_mw().to_vec(),
            rng,
            current_level: initial,
        };
        let samples_mw = vec![chain.levels_mw[initial]];
        Self {
            period_s,
            samples_mw,
            chain: Some(chain),
        }
    }

    fn sample(&mut self, index: usize) -> f64 {
        match &mut self.chain {
            Some(chain) => {
                while self.samples_mw.len() <= index {
                    chain.current_level = sample_row(&chain.probs[chain.current_level], &mut chain.rng);
                    self.samples_mw.push(chain.levels_mw[chain.current_level]);
                }
                self.samples_mw[index]
            }
            None => self.samples_mw[index % self.samples_mw.len()],
        }
    }

    /// Integrate power over `[t0, t1)` and return the harvested energy in nJ.
    pub fn energy_nj_between(&mut self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let period = self.period_s;
        let mut acc = 0.0;
        let mut i = (t0 / period).floor().max(0.0) as usize;
        loop {
            let window_start = i as f64 * period;
            if window_start >= t1 {
                break;
            }
            let window_end = window_start + period;
            let overlap = window_end.min(t1) - window_start.max(t0);
            if overlap > 0.0 {
                acc += self.sample(i) * overlap * NJ_PER_MW_S;
            }
            i += 1;
        }
        acc
    }
}

/// Costs of every primitive the stepper performs, precomputed from the system
/// parameters and program.
#[derive(Debug, Clone, Copy)]
pub struct DerivedCosts {
    pub capacity_nj: f64,
    pub b_levels: u32,
    /// Interval energy including any per-interval policy overheads.
    pub interval_demand_nj: f64,
    pub interval_dt_s: f64,
    pub cp_energy_nj: f64,
    pub cp_latency_s: f64,
    pub rs_energy_nj: f64,
    pub rs_latency_s: f64,
    /// Recharge target after an energy failure: restore energy plus one
    /// interval of demand, clamped to the battery capacity.
    pub wake_energy_nj: f64,
}

impl DerivedCosts {
    pub fn new(
        sys: &SystemParams,
        prog: &ProgramSpec,
        per_interval_lookup: bool,
        extra_interval_nj: f64,
    ) -> Self {
        let demand = interval_demand(sys);
        let lookup = if per_interval_lookup {
            sys.nvm_read_energy_per_word * PJ_PER_NJ
        } else {
            0.0
        };
        let interval_demand_nj = demand.energy_nj + lookup + extra_interval_nj;
        let cp = checkpoint_cost(sys, prog);
        let rs = restore_cost(sys, prog);
        let capacity_nj = sys.capacity_nj();
        DerivedCosts {
            capacity_nj,
            b_levels: sys.battery_levels,
            interval_demand_nj,
            interval_dt_s: demand.duration_s,
            cp_energy_nj: cp.energy_nj,
            cp_latency_s: cp.latency_cycles as f64 / sys.clock_hz,
            rs_energy_nj: rs.energy_nj,
            rs_latency_s: rs.latency_cycles as f64 / sys.clock_hz,
            wake_energy_nj: (rs.energy_nj + interval_demand_nj).min(capacity_nj),
        }
    }

    pub fn level_of(&self, energy_nj: f64) -> u32 {
        let raw = (energy_nj * self.b_levels as f64 / self.capacity_nj).floor();
        (raw as i64).clamp(0, self.b_levels as i64 - 1) as u32
    }
}

/// Result of attempting one interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalOutcome {
    Completed,
    /// Stored plus harvested energy cannot keep the battery at or above the
    /// requested floor through the interval; nothing was applied.
    Shortfall,
}

/// Mutable battery/clock state plus the primitive steps every simulation is
/// built from. Busy and off time are tracked per primitive so the wall-clock
/// decomposition is exact.
pub struct EngineCore {
    pub costs: DerivedCosts,
    source: PowerSource,
    pub now_s: f64,
    pub battery_nj: f64,
    pub busy_s: f64,
    pub off_s: f64,
    pub harvested_nj: f64,
    pub consumed_nj: f64,
}

impl EngineCore {
    pub fn new(costs: DerivedCosts, source: PowerSource, initial_battery_nj: f64) -> Self {
        Self {
            costs,
            source,
            now_s: 0.0,
            battery_nj: initial_battery_nj.clamp(0.0, costs.capacity_nj),
            busy_s: 0.0,
            off_s: 0.0,
            harvested_nj: 0.0,
            consumed_nj: 0.0,
        }
    }

    /// Swap in a new power source and rewind the clock (between training
    /// episodes). Battery charge is preserved.
    pub fn replace_source(&mut self, source: PowerSource) {
        self.source = source;
        self.now_s = 0.0;
    }

    pub fn level(&self) -> u32 {
        self.costs.level_of(self.battery_nj)
    }

    fn take_energy(&mut self, dt: f64) -> f64 {
        let h = self.source.energy_nj_between(self.now_s, self.now_s + dt);
        self.harvested_nj += h;
        h
    }

    /// One powered-off interval: harvest only.
    pub fn idle_interval(&mut self) {
        let dt = self.costs.interval_dt_s;
        let h = self.take_energy(dt);
        self.battery_nj = (self.battery_nj + h).min(self.costs.capacity_nj);
        self.now_s += dt;
        self.off_s += dt;
    }

    /// Execute one interval if stored plus harvested energy keeps the ending
    /// battery at or above `floor_nj`. On shortfall nothing is consumed and
    /// no time passes.
    pub fn try_interval(&mut self, floor_nj: f64) -> IntervalOutcome {
        let dt = self.costs.interval_dt_s;
        let h = self.source.energy_nj_between(self.now_s, self.now_s + dt);
        let end = self.battery_nj + h - self.costs.interval_demand_nj;
        if end < floor_nj {
            return IntervalOutcome::Shortfall;
        }
        self.harvested_nj += h;
        self.consumed_nj += self.costs.interval_demand_nj;
        self.battery_nj = end.min(self.costs.capacity_nj);
        self.now_s += dt;
        self.busy_s += dt;
        IntervalOutcome::Completed
    }

    /// A failed interval attempt: the full interval of wall-clock passes and
    /// the brown-out drains whatever was stored or arrived.
    pub fn fail_interval(&mut self) {
        let dt = self.costs.interval_dt_s;
        let h = self.take_energy(dt);
        self.consumed_nj += self.battery_nj + h;
        self.battery_nj = 0.0;
        self.now_s += dt;
        self.busy_s += dt;
    }

    /// Drain the battery without advancing time (aborted checkpoint).
    pub fn drain(&mut self) {
        self.consumed_nj += self.battery_nj;
        self.battery_nj = 0.0;
    }

    /// Commit a checkpoint if affordable from stored energy. Harvest
    /// continues during the checkpoint latency.
    pub fn pay_checkpoint(&mut self) -> bool {
        self.pay_checkpoint_costing(self.costs.cp_energy_nj)
    }

    /// Checkpoint at a non-default energy (policies that always save the
    /// full cache).
    pub fn pay_checkpoint_costing(&mut self, energy_nj: f64) -> bool {
        if self.battery_nj < energy_nj {
            return false;
        }
        let lat = self.costs.cp_latency_s;
        let h = self.take_energy(lat);
        self.consumed_nj += energy_nj;
        self.battery_nj = (self.battery_nj - energy_nj + h).clamp(0.0, self.costs.capacity_nj);
        self.now_s += lat;
        self.busy_s += lat;
        true
    }

    /// Reload state from non-volatile memory after a wake-up.
    pub fn pay_restore(&mut self) {
        self.pay_restore_costing(self.costs.rs_energy_nj)
    }

    pub fn pay_restore_costing(&mut self, energy_nj: f64) {
        let lat = self.costs.rs_latency_s;
        let h = self.take_energy(lat);
        self.consumed_nj += energy_nj.min(self.battery_nj + h);
        self.battery_nj = (self.battery_nj - energy_nj + h).clamp(0.0, self.costs.capacity_nj);
        self.now_s += lat;
        self.busy_s += lat;
    }

    /// Stay powered off, one interval at a time, until the battery reaches
    /// `target_nj` or simulated time passes `deadline_s`.
    pub fn recharge_until(&mut self, target_nj: f64, deadline_s: f64) -> Result<()> {
        while self.battery_nj < target_nj {
            if self.now_s > deadline_s {
                return Err(Error::NoForwardProgress {
                    limit_s: deadline_s,
                });
            }
            self.idle_interval();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::CipherConfig;

    fn costs() -> DerivedCosts {
        let sys = SystemParams::default();
        let prog = ProgramSpec::new("t", 1500, 0).unwrap();
        DerivedCosts::new(&sys, &prog, false, 0.0)
    }

    fn flat_source(mw: f64) -> PowerSource {
        PowerSource::from_trace(&PowerTrace::new(0.005, vec![mw, mw]).unwrap())
    }

    #[test]
    fn zoh_integration_splits_windows() {
        let t = PowerTrace::new(0.005, vec![1.0, 2.0, 0.0]).unwrap();
        let mut src = PowerSource::from_trace(&t);
        // 1 mW over 5 ms = 5000 nJ
        assert!((src.energy_nj_between(0.0, 0.005) - 5000.0).abs() < 1e-6);
        // half of window 0 plus half of window 1
        let e = src.energy_nj_between(0.0025, 0.0075);
        assert!((e - (2500.0 + 5000.0)).abs() < 1e-6, "{e}");
        // trace cycles past its end: window 3 wraps to sample 0
        assert!((src.energy_nj_between(0.015, 0.020) - 5000.0).abs() < 1e-6);
    }

    #[test]
    fn model_source_is_deterministic() {
        let m = TransitionModel::synthetic_default();
        let mut a = PowerSource::from_model(&m, 0.005, 7);
        let mut b = PowerSource::from_model(&m, 0.005, 7);
        for i in 0..200 {
            let t0 = i as f64 * 0.005;
            assert_eq!(
                a.energy_nj_between(t0, t0 + 0.005).to_bits(),
                b.energy_nj_between(t0, t0 + 0.005).to_bits()
            );
        }
    }

    #[test]
    fn interval_accounting_balances() {
        let mut eng = EngineCore::new(costs(), flat_source(0.5), 2000.0);
        // harvest 2500, demand 3150
        assert_eq!(eng.try_interval(0.0), IntervalOutcome::Completed);
        assert!((eng.battery_nj - 1350.0).abs() < 1e-9);
        assert!((eng.now_s - 0.005).abs() < 1e-12);
        assert!((eng.busy_s - 0.005).abs() < 1e-12);

        // not affordable from 1350 + 500
        let mut low = EngineCore::new(costs(), flat_source(0.1), 1350.0);
        assert_eq!(low.try_interval(0.0), IntervalOutcome::Shortfall);
        assert_eq!(low.battery_nj, 1350.0);
        assert_eq!(low.now_s, 0.0);
        low.fail_interval();
        assert_eq!(low.battery_nj, 0.0);
        assert!((low.now_s - 0.005).abs() < 1e-12);
    }

    #[test]
    fn interval_respects_floor() {
        // ends at 1350, below a 1500 floor
        let mut eng = EngineCore::new(costs(), flat_source(0.5), 2000.0);
        assert_eq!(eng.try_interval(1500.0), IntervalOutcome::Shortfall);
        assert_eq!(eng.try_interval(1000.0), IntervalOutcome::Completed);
    }

    #[test]
    fn checkpoint_requires_stored_energy() {
        let sys = SystemParams {
            cipher: CipherConfig::none(),
            ..SystemParams::default()
        };
        let prog = ProgramSpec::new("t", 1500, 0).unwrap();
        let c = DerivedCosts::new(&sys, &prog, false, 0.0);
        let mut eng = EngineCore::new(c, flat_source(0.0), 1.0);
        assert!(!eng.pay_checkpoint());
        eng.battery_nj = 100.0;
        assert!(eng.pay_checkpoint());
        assert!((eng.battery_nj - (100.0 - c.cp_energy_nj)).abs() < 1e-9);
        assert!((eng.busy_s - c.cp_latency_s).abs() < 1e-15);
    }

    #[test]
    fn recharge_hits_target_or_times_out() {
        let mut eng = EngineCore::new(costs(), flat_source(0.2), 0.0);
        // 1000 nJ per idle interval
        eng.recharge_until(1900.0, 10.0).unwrap();
        assert!(eng.battery_nj >= 1900.0);
        assert!((eng.off_s - 0.010).abs() < 1e-12);

        let mut dead = EngineCore::new(costs(), flat_source(0.0), 0.0);
        assert!(matches!(
            dead.recharge_until(100.0, 0.05),
            Err(Error::NoForwardProgress { .. })
        ));
    }

    #[test]
    fn wake_target_is_clamped_to_capacity() {
        let c = costs();
        // restore + demand exceeds the 2000 nJ capacity at defaults
        assert_eq!(c.wake_energy_nj, c.capacity_nj);
    }
}
