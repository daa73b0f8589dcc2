//! Offline learning of the checkpoint policy and the packed one-bit-per-state
//! table consulted online.
//!
//! Training runs super-interval episodes against the same battery/failure
//! dynamics the simulator uses. Each episode starts at `(0, 0, b0)`, steps one
//! interval at a time under an epsilon-greedy choice between checkpointing and
//! proceeding, and ends when the mandatory boundary checkpoint at `p = S - 1`
//! commits. Q-values are expected total future cost in cycles, so the greedy
//! action is the minimum. The learning rate for a state-action pair is
//! `1 / n(s, a)`, the reciprocal of its visit count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{state_count, state_index, Action, MdpState};
use crate::sim::engine::{DerivedCosts, EngineCore, IntervalOutcome, PowerSource};
use crate::system::{ProgramSpec, SystemParams};
use crate::trace::TransitionModel;

/// Dense state-action value table plus visit counts.
///
/// Layout: `values[2 * state_index + action_index]`, action fastest, with
/// proceed at action index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    s_dim: u32,
    b_dim: u32,
    values: Vec<f64>,
    visits: Vec<u32>,
}

impl QTable {
    pub fn new(s_dim: u32, b_dim: u32) -> Self {
        let n = 2 * state_count(s_dim, b_dim);
        Self {
            s_dim,
            b_dim,
            values: vec![0.0; n],
            visits: vec![0; n],
        }
    }

    /// Rebuild a table from a raw value array (visit counts reset to zero),
    /// as when loading from disk.
    pub fn from_values(s_dim: u32, b_dim: u32, values: Vec<f64>) -> Result<Self> {
        let n = 2 * state_count(s_dim, b_dim);
        if values.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "value array has {} entries, expected {n}",
                values.len()
            )));
        }
        Ok(Self {
            s_dim,
            b_dim,
            values,
            visits: vec![0; n],
        })
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.s_dim, self.b_dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn visits(&self) -> &[u32] {
        &self.visits
    }

    fn entry(&self, s: &MdpState, a: Action) -> Result<usize> {
        Ok(2 * state_index(s, self.s_dim, self.b_dim)? + a.index())
    }

    pub fn value_of(&self, s: &MdpState, a: Action) -> Result<f64> {
        Ok(self.values[self.entry(s, a)?])
    }

    pub fn visit_count(&self, s: &MdpState, a: Action) -> Result<u32> {
        Ok(self.visits[self.entry(s, a)?])
    }

    /// Smallest Q-value over both actions.
    pub fn min_q(&self, s: &MdpState) -> Result<f64> {
        let i = 2 * state_index(s, self.s_dim, self.b_dim)?;
        Ok(self.values[i].min(self.values[i + 1]))
    }

    /// Greedy action; ties resolve to proceed, the cheaper action when
    /// indifferent.
    pub fn greedy_action(&self, s: &MdpState) -> Result<Action> {
        let i = 2 * state_index(s, self.s_dim, self.b_dim)?;
        if self.values[i + 1] < self.values[i] {
            Ok(Action::Checkpoint)
        } else {
            Ok(Action::Proceed)
        }
    }

    /// True if either action of the state has been visited.
    pub fn state_visited(&self, s: &MdpState) -> Result<bool> {
        let i = 2 * state_index(s, self.s_dim, self.b_dim)?;
        Ok(self.visits[i] + self.visits[i + 1] > 0)
    }
}

/// One temporal-difference update. The pair's visit count is incremented
/// first, the learning rate is `1 / n(s, a)`, and a terminal next state
/// (`None`) contributes a zero minimum. Returns the signed value change.
pub fn q_update(
    q: &mut QTable,
    s: &MdpState,
    a: Action,
    cost_cycles: f64,
    s_next: Option<&MdpState>,
    gamma: f64,
) -> Result<f64> {
    let e = q.entry(s, a)?;
    let min_next = match s_next {
        Some(n) => q.min_q(n)?,
        None => 0.0,
    };
    q.visits[e] += 1;
    let alpha = 1.0 / q.visits[e] as f64;
    let delta = alpha * (cost_cycles + gamma * min_next - q.values[e]);
    q.values[e] += delta;
    Ok(delta)
}

/// Epsilon-greedy action selection: a uniformly random action with
/// probability `epsilon`, the greedy action otherwise.
pub fn choose_action(
    q: &QTable,
    s: &MdpState,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    let u: f64 = rng.gen();
    if u < epsilon {
        Ok(if rng.gen_range(0..2u8) == 0 {
            Action::Proceed
        } else {
            Action::Checkpoint
        })
    } else {
        q.greedy_action(s)
    }
}

/// Training hyperparameters. Epsilon decays linearly per episode from
/// `epsilon_start` to `epsilon_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub episodes: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            epsilon_start: 0.9,
            epsilon_end: 0.1,
            episodes: 60_000,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            bad.push(format!("gamma: must be in (0, 1], got {}", self.gamma));
        }
        if !(self.epsilon_end > 0.0
            && self.epsilon_end <= self.epsilon_start
            && self.epsilon_start < 1.0)
        {
            bad.push(format!(
                "epsilon schedule: need 0 < epsilon_end <= epsilon_start < 1, got {} -> {}",
                self.epsilon_start, self.epsilon_end
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    fn epsilon_for(&self, episode: u32) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_start;
        }
        let t = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// One environment transition observed by the learner.
#[derive(Debug, Clone, Copy)]
pub struct EnvStep {
    pub cost_cycles: f64,
    /// `None` when the mandatory boundary checkpoint committed and the
    /// episode is over.
    pub next: Option<MdpState>,
}

/// Anything the learner can be trained against: the interval-granular
/// environment below, or an exactly enumerable test environment.
pub trait TrainEnv {
    /// `(S, B)` dimensions of the state space.
    fn dims(&self) -> (u32, u32);
    /// Start a new episode and return its initial state.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<MdpState>;
    /// Apply an action and observe cost and successor.
    fn step(&mut self, a: Action, rng: &mut ChaCha8Rng) -> Result<EnvStep>;
}

/// Training telemetry.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub episodes: u32,
    pub final_epsilon: f64,
    /// Fraction of reachable states (c <= p) visited at least once.
    pub coverage: f64,
    /// Largest absolute Q change applied during the last 5% of episodes.
    pub convergence_max_delta: f64,
    pub truncated_episodes: u32,
    pub mean_episode_cost_recent: f64,
}

pub struct TrainOutput {
    pub qtable: QTable,
    pub report: TrainReport,
}

/// Run the learner against an arbitrary environment.
pub fn train_with_env<E: TrainEnv>(env: &mut E, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let (s_dim, b_dim) = env.dims();
    let mut q = QTable::new(s_dim, b_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_steps = 100usize * s_dim as usize;
    let recent_start = cfg.episodes.saturating_sub((cfg.episodes / 20).max(1));

    let mut max_delta_recent = 0.0f64;
    let mut truncated = 0u32;
    let mut recent_cost_sum = 0.0f64;
    let mut recent_cost_n = 0u64;
    let mut final_epsilon = cfg.epsilon_start;

    for episode in 0..cfg.episodes {
        let epsilon = cfg.epsilon_for(episode);
        final_epsilon = epsilon;
        let mut s = env.reset(&mut rng)?;
        let mut episode_cost = 0.0;
        let mut finished = false;
        for _ in 0..max_steps {
            let a = if s.p == s_dim - 1 {
                Action::Checkpoint // mandatory boundary checkpoint
            } else {
                choose_action(&q, &s, epsilon, &mut rng)?
            };
            let out = env.step(a, &mut rng)?;
            let delta = q_update(&mut q, &s, a, out.cost_cycles, out.next.as_ref(), cfg.gamma)?;
            if episode >= recent_start {
                max_delta_recent = max_delta_recent.max(delta.abs());
            }
            episode_cost += out.cost_cycles;
            match out.next {
                Some(n) => s = n,
                None => {
                    finished = true;
                    break;
                }
            }
        }
        if !finished {
            truncated += 1;
        }
        if episode >= recent_start {
            recent_cost_sum += episode_cost;
            recent_cost_n += 1;
        }
    }

    let mut visited = 0usize;
    let mut reachable = 0usize;
    for p in 0..s_dim {
        for c in 0..=p {
            for b in 0..b_dim {
                reachable += 1;
                if q.state_visited(&MdpState::new(p, c, b))? {
                    visited += 1;
                }
            }
        }
    }

    let report = TrainReport {
        episodes: cfg.episodes,
        final_epsilon,
        coverage: if reachable == 0 {
            0.0
        } else {
            visited as f64 / reachable as f64
        },
        convergence_max_delta: max_delta_recent,
        truncated_episodes: truncated,
        mean_episode_cost_recent: if recent_cost_n == 0 {
            0.0
        } else {
            recent_cost_sum / recent_cost_n as f64
        },
    };
    Ok(TrainOutput { qtable: q, report })
}

/// Train against the interval-granular environment driven by a harvested
/// power chain. Deterministic for a fixed seed.
pub fn train(
    sys: &SystemParams,
    prog: &ProgramSpec,
    model: &TransitionModel,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    sys.validate()?;
    let mut env = IntervalTrainEnv::new(sys, prog, model, cfg.seed)?;
    train_with_env(&mut env, cfg)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Super-interval episodes over the simulator's battery/failure dynamics.
///
/// Battery charge persists from one episode to the next; each episode draws a
/// fresh power-chain realization and starts after a short random idle warm-up,
/// so initial battery levels follow the run-in distribution rather than always
/// being full.
pub struct IntervalTrainEnv {
    engine: EngineCore,
    model: TransitionModel,
    sample_period_s: f64,
    s_dim: u32,
    base_seed: u64,
    episode: u64,
    cp_latency_cycles: u64,
    interval_insts: u64,
    cpi: f64,
    p: u32,
    c: u32,
}

impl IntervalTrainEnv {
    pub fn new(
        sys: &SystemParams,
        prog: &ProgramSpec,
        model: &TransitionModel,
        base_seed: u64,
    ) -> Result<Self> {
        sys.validate()?;
        let costs = DerivedCosts::new(sys, prog, true, 0.0);
        let period = costs.interval_dt_s;
        let source = PowerSource::from_model(model, period, splitmix64(base_seed));
        let cp_latency_cycles = crate::system::checkpoint_cost(sys, prog).latency_cycles;
        Ok(Self {
            engine: EngineCore::new(costs, source, 0.0),
            model: model.clone(),
            sample_period_s: period,
            s_dim: sys.super_interval,
            base_seed,
            episode: 0,
            cp_latency_cycles,
            interval_insts: sys.interval_insts,
            cpi: sys.cpi,
            p: 0,
            c: 0,
        })
    }

    fn state(&self) -> MdpState {
        MdpState::new(self.p, self.c, self.engine.level())
    }

    fn recharge_deadline(&self) -> f64 {
        self.engine.now_s + 100_000.0 * self.engine.costs.interval_dt_s
    }

    fn recover_from_failure(&mut self) -> Result<()> {
        let wake = self.engine.costs.wake_energy_nj;
        let deadline = self.recharge_deadline();
        self.engine.recharge_until(wake, deadline)?;
        self.engine.pay_restore();
        Ok(())
    }

    fn rollback_cost_cycles(&self) -> f64 {
        (self.p - self.c) as f64 * self.interval_insts as f64 * self.cpi
    }
}

impl TrainEnv for IntervalTrainEnv {
    fn dims(&self) -> (u32, u32) {
        (self.s_dim, self.engine.costs.b_levels)
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<MdpState> {
        self.episode += 1;
        let seed = splitmix64(self.base_seed ^ self.episode.wrapping_mul(0x9E37_79B9));
        let source = PowerSource::from_model(&self.model, self.sample_period_s, seed);
        self.engine.replace_source(source);
        let warmup = rng.gen_range(0..=8u32);
        for _ in 0..warmup {
            self.engine.idle_interval();
        }
        self.p = 0;
        self.c = 0;
        Ok(self.state())
    }

    fn step(&mut self, a: Action, _rng: &mut ChaCha8Rng) -> Result<EnvStep> {
        match a {
            Action::Checkpoint => {
                if !self.engine.pay_checkpoint() {
                    // Aborted checkpoint: acts as an energy failure with a
                    // rollback to the previous commit point.
                    self.engine.drain();
                    let cost = self.rollback_cost_cycles();
                    self.recover_from_failure()?;
                    self.p = self.c;
                    return Ok(EnvStep {
                        cost_cycles: cost,
                        next: Some(self.state()),
                    });
                }
                self.c = self.p;
                let cost = self.cp_latency_cycles as f64;
                if self.p == self.s_dim - 1 {
                    // Mandatory boundary checkpoint commits: episode over.
                    return Ok(EnvStep {
                        cost_cycles: cost,
                        next: None,
                    });
                }
                match self.engine.try_interval(0.0) {
                    IntervalOutcome::Completed => self.p += 1,
                    IntervalOutcome::Shortfall => {
                        self.engine.fail_interval();
                        self.recover_from_failure()?;
                        // roll back to the checkpoint just taken: p unchanged
                    }
                }
                Ok(EnvStep {
                    cost_cycles: cost,
                    next: Some(self.state()),
                })
            }
            Action::Proceed => match self.engine.try_interval(0.0) {
                IntervalOutcome::Completed => {
                    self.p += 1;
                    Ok(EnvStep {
                        cost_cycles: 0.0,
                        next: Some(self.state()),
                    })
                }
                IntervalOutcome::Shortfall => {
                    self.engine.fail_interval();
                    let cost = self.rollback_cost_cycles();
                    self.recover_from_failure()?;
                    self.p = self.c;
                    Ok(EnvStep {
                        cost_cycles: cost,
                        next: Some(self.state()),
                    })
                }
            },
        }
    }
}

// --- action-bit table ------------------------------------------------------

/// One bit per state: 1 means the greedy action is checkpoint. Packed
/// LSB-first in state-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBitTable {
    s_dim: u32,
    b_dim: u32,
    bits: Vec<u8>,
}

impl ActionBitTable {
    pub fn new(s_dim: u32, b_dim: u32) -> Self {
        Self {
            s_dim,
            b_dim,
            bits: vec![0u8; state_count(s_dim, b_dim).div_ceil(8)],
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.s_dim, self.b_dim)
    }

    /// Packed payload size in bytes.
    pub fn payload_len(&self) -> usize {
        self.bits.len()
    }

    pub fn payload(&self) -> &[u8] {
        &self.bits
    }

    pub fn bit_at(&self, index: usize) -> bool {
        (self.bits[index / 8] >> (index % 8)) & 1 == 1
    }

    pub fn set_bit_at(&mut self, index: usize, value: bool) {
        let byte = index / 8;
        let mask = 1u8 << (index % 8);
        if value {
            self.bits[byte] |= mask;
        } else {
            self.bits[byte] &= !mask;
        }
    }

    pub fn get(&self, s: &MdpState) -> Result<bool> {
        Ok(self.bit_at(state_index(s, self.s_dim, self.b_dim)?))
    }
}

/// Extract the greedy policy as an action-bit table: bit set when the
/// checkpoint Q-value is strictly smaller. Unvisited states keep bit 0.
pub fn extract_action_bits(q: &QTable) -> ActionBitTable {
    let (s_dim, b_dim) = q.dims();
    let mut t = ActionBitTable::new(s_dim, b_dim);
    for i in 0..state_count(s_dim, b_dim) {
        if q.values()[2 * i + 1] < q.values()[2 * i] {
            t.set_bit_at(i, true);
        }
    }
    t
}

// --- files -----------------------------------------------------------------

const ABT_MAGIC: &[u8; 4] = b"ABT1";

/// Write the bit-exact action-bit file: a 16-byte header (magic `ABT1`,
/// `S` and `B` as 32-bit little-endian, 4 reserved zero bytes), then the
/// packed payload in state-index order, LSB-first within each byte.
pub fn write_action_bits(table: &ActionBitTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ABT_MAGIC)?;
    w.write_all(&table.s_dim.to_le_bytes())?;
    w.write_all(&table.b_dim.to_le_bytes())?;
    w.write_all(&[0u8; 4])?;
    w.write_all(&table.bits)?;
    w.flush()?;
    Ok(())
}

pub fn read_action_bits(path: &Path) -> Result<ActionBitTable> {
    let display = path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::FileFormat {
        path: display.clone(),
        message: "truncated header".into(),
    })?;
    if &header[0..4] != ABT_MAGIC {
        return Err(Error::FileFormat {
            path: display,
            message: "bad magic, expected ABT1".into(),
        });
    }
    let s_dim = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let b_dim = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if s_dim < 2 || b_dim < 2 {
        return Err(Error::FileFormat {
            path: display,
            message: format!("implausible dimensions S={s_dim}, B={b_dim}"),
        });
    }
    let expect = state_count(s_dim, b_dim).div_ceil(8);
    let mut bits = Vec::with_capacity(expect);
    r.read_to_end(&mut bits)?;
    if bits.len() != expect {
        return Err(Error::FileFormat {
            path: display,
            message: format!("payload is {} bytes, expected {expect}", bits.len()),
        });
    }
    Ok(ActionBitTable { s_dim, b_dim, bits })
}

/// Metadata stored in a value-table JSON header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableMeta {
    #[serde(rename = "S")]
    pub s_dim: u32,
    #[serde(rename = "B")]
    pub b_dim: u32,
    pub episodes: u32,
    pub seed: u64,
    pub gamma: f64,
    pub values_file: String,
}

/// Write a value table as a JSON header plus a binary sidecar of 64-bit
/// little-endian values in (state, action) order, action fastest with
/// proceed first.
pub fn write_qtable(
    q: &QTable,
    cfg: &TrainConfig,
    json_path: &Path,
    values_path: &Path,
) -> Result<()> {
    let meta = QTableMeta {
        s_dim: q.s_dim,
        b_dim: q.b_dim,
        episodes: cfg.episodes,
        seed: cfg.seed,
        gamma: cfg.gamma,
        values_file: values_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| values_path.display().to_string()),
    };
    let mut jw = BufWriter::new(File::create(json_path)?);
    serde_json::to_writer_pretty(&mut jw, &meta)?;
    writeln!(jw)?;
    jw.flush()?;

    let mut vw = BufWriter::new(File::create(values_path)?);
    for v in q.values() {
        vw.write_all(&v.to_le_bytes())?;
    }
    vw.flush()?;
    Ok(())
}

/// Read a value table back; the sidecar is located next to the JSON header.
pub fn read_qtable(json_path: &Path) -> Result<(QTable, QTableMeta)> {
    let meta: QTableMeta = serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
    let values_path = json_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&meta.values_file);
    let mut bytes = Vec::new();
    File::open(&values_path)?.read_to_end(&mut bytes)?;
    let expect = 2 * state_count(meta.s_dim, meta.b_dim) * 8;
    if bytes.len() != expect {
        return Err(Error::FileFormat {
            path: values_path.display().to_string(),
            message: format!("sidecar is {} bytes, expected {expect}", bytes.len()),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((QTable::from_values(meta.s_dim, meta.b_dim, values)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(p: u32, c: u32, b: u32) -> MdpState {
        MdpState::new(p, c, b)
    }

    #[test]
    fn update_of_zero_table_with_zero_cost_is_fixed_point() {
        let mut q = QTable::new(4, 4);
        let d = q_update(&mut q, &s(1, 0, 2), Action::Proceed, 0.0, Some(&s(2, 0, 2)), 1.0)
            .unwrap();
        assert_eq!(d, 0.0);
        assert!(q.values().iter().all(|&v| v == 0.0));
        assert_eq!(q.visit_count(&s(1, 0, 2), Action::Proceed).unwrap(), 1);
    }

    #[test]
    fn update_matches_hand_arithmetic() {
        // first visit: alpha = 1, Q <- 10 + 1 * (2 + 6 - 10) = 8
        let mut q = QTable::new(4, 4);
        let target = s(1, 0, 1);
        let next = s(2, 1, 1);
        // seed values: Q(s, proc) = 10, min over next = 6
        let e = q.entry(&target, Action::Proceed).unwrap();
        q.values[e] = 10.0;
        let ne = q.entry(&next, Action::Proceed).unwrap();
        q.values[ne] = 6.0;
        q.values[ne + 1] = 7.0;
        q_update(&mut q, &target, Action::Proceed, 2.0, Some(&next), 1.0).unwrap();
        assert!((q.values[e] - 8.0).abs() < 1e-12);

        // second visit: alpha = 1/2, starting again from 10 -> 9
        q.values[e] = 10.0;
        q_update(&mut q, &target, Action::Proceed, 2.0, Some(&next), 1.0).unwrap();
        assert!((q.values[e] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn update_converges_to_running_mean_of_terminal_costs() {
        let mut q = QTable::new(4, 4);
        let st = s(3, 2, 0);
        for _ in 0..10 {
            q_update(&mut q, &st, Action::Checkpoint, 164.0, None, 1.0).unwrap();
            assert_eq!(q.value_of(&st, Action::Checkpoint).unwrap(), 164.0);
        }
    }

    #[test]
    fn greedy_and_tie_break() {
        let mut q = QTable::new(4, 4);
        let st = s(1, 1, 0);
        let e = q.entry(&st, Action::Proceed).unwrap();
        q.values[e] = 7.0;
        q.values[e + 1] = 5.0;
        assert_eq!(q.greedy_action(&st).unwrap(), Action::Checkpoint);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            choose_action(&q, &st, 0.0, &mut rng).unwrap(),
            Action::Checkpoint
        );

        q.values[e + 1] = 7.0; // tie
        assert_eq!(q.greedy_action(&st).unwrap(), Action::Proceed);
    }

    #[test]
    fn full_exploration_is_a_fair_coin() {
        let q = QTable::new(4, 4);
        let st = s(0, 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let chpt = (0..n)
            .filter(|_| choose_action(&q, &st, 1.0, &mut rng).unwrap() == Action::Checkpoint)
            .count();
        let freq = chpt as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn extract_bits_rules() {
        let mut q = QTable::new(4, 4);
        let prefer_cp = s(1, 0, 0);
        let e = q.entry(&prefer_cp, Action::Proceed).unwrap();
        q.values[e] = 9.0;
        q.values[e + 1] = 3.0;
        let bits = extract_action_bits(&q);
        assert!(bits.get(&prefer_cp).unwrap());
        // unvisited states (both zero) default to proceed
        assert!(!bits.get(&s(2, 0, 0)).unwrap());
    }

    #[test]
    fn default_dims_pack_into_25_kb() {
        let t = ActionBitTable::new(100, 20);
        assert_eq!(t.payload_len(), 25_000);
    }

    #[test]
    fn action_bit_file_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.abt");
        let mut t = ActionBitTable::new(2, 2);
        t.set_bit_at(0, true);
        t.set_bit_at(3, true); // byte 0 = 0b0000_1001
        write_action_bits(&t, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(
            bytes,
            vec![
                b'A', b'B', b'T', b'1', 2, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0b0000_1001
            ]
        );
        let back = read_action_bits(&p).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn qtable_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = QTable::new(3, 2);
        let st = s(1, 0, 1);
        q_update(&mut q, &st, Action::Checkpoint, 42.5, None, 1.0).unwrap();
        let cfg = TrainConfig {
            episodes: 7,
            seed: 3,
            ..TrainConfig::default()
        };
        let jp = dir.path().join("q.json");
        let vp = dir.path().join("q.qvals");
        write_qtable(&q, &cfg, &jp, &vp).unwrap();
        let (back, meta) = read_qtable(&jp).unwrap();
        assert_eq!(back.values(), q.values());
        assert_eq!(meta.episodes, 7);
        assert_eq!(meta.s_dim, 3);
        // little-endian f64 layout, proceed entry first
        let raw = std::fs::read(&vp).unwrap();
        let idx = 2 * state_index(&st, 3, 2).unwrap() + 1;
        let got = f64::from_le_bytes(raw[8 * idx..8 * idx + 8].try_into().unwrap());
        assert_eq!(got, 42.5);
    }

    #[test]
    fn zero_episodes_leaves_table_untouched() {
        let sys = small_sys();
        let prog = ProgramSpec::new("t", 10_000, 2).unwrap();
        let model = TransitionModel::synthetic_default()
            .rescaled_to_mean(0.6, 50_000, 7)
            .unwrap();
        let cfg = TrainConfig {
            episodes: 0,
            ..TrainConfig::default()
        };
        let out = train(&sys, &prog, &model, &cfg).unwrap();
        assert!(out.qtable.values().iter().all(|&v| v == 0.0));
        assert_eq!(out.report.coverage, 0.0);
    }

    fn small_sys() -> SystemParams {
        SystemParams {
            super_interval: 10,
            battery_levels: 5,
            ..SystemParams::default()
        }
    }

    #[test]
    fn training_is_reproducible_bitwise() {
        let sys = small_sys();
        let prog = ProgramSpec::new("t", 10_000, 2).unwrap();
        let model = TransitionModel::synthetic_default()
            .rescaled_to_mean(0.6, 50_000, 7)
            .unwrap();
        let cfg = TrainConfig {
            episodes: 200,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&sys, &prog, &model, &cfg).unwrap();
        let b = train(&sys, &prog, &model, &cfg).unwrap();
        assert_eq!(a.qtable.values(), b.qtable.values());
        assert_eq!(a.qtable.visits(), b.qtable.visits());
    }

    #[test]
    fn failure_free_environment_learns_to_never_checkpoint() {
        // Harvest far above demand: the battery pins at capacity and no
        // interval can fail, so any checkpoint is pure cost.
        let sys = SystemParams {
            super_interval: 5,
            battery_levels: 3,
            ..SystemParams::default()
        };
        let prog = ProgramSpec::new("t", 10_000, 2).unwrap();
        let levels = crate::trace::PowerLevelSet::new(vec![50.0, 60.0]).unwrap();
        let model =
            TransitionModel::from_counts(levels, vec![vec![1, 1], vec![1, 1]]).unwrap();
        let cfg = TrainConfig {
            episodes: 2_000,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&sys, &prog, &model, &cfg).unwrap();
        let bits = extract_action_bits(&out.qtable);
        for i in 0..state_count(5, 3) {
            assert!(!bits.bit_at(i), "state {i} should prefer proceed");
        }
        assert_eq!(out.report.truncated_episodes, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_update_touches_exactly_one_entry(
            p in 0u32..4, dc in 0u32..4, b in 0u32..4,
            chpt in proptest::bool::ANY, cost in 0.0f64..1000.0) {
            let c = dc.min(p);
            let mut q = QTable::new(4, 4);
            // random-ish prior so changes are visible
            for (i, v) in q.values.iter_mut().enumerate() {
                *v = (i % 17) as f64;
            }
            let before = q.values.clone();
            let st = s(p, c, b);
            let a = if chpt { Action::Checkpoint } else { Action::Proceed };
            q_update(&mut q, &st, a, cost, None, 1.0).unwrap();
            let e = q.entry(&st, a).unwrap();
            for (i, (x, y)) in before.iter().zip(q.values()).enumerate() {
                if i == e {
                    continue;
                }
                prop_assert_eq!(x.to_bits(), y.to_bits(), "entry {} changed", i);
            }
        }
    }
}
