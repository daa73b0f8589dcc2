//! Online decision policies: learned action-bit lookup, periodic
//! checkpointing, and the conservative dual-threshold scheme.
//!
//! Every policy is consulted at interval boundaries through the same
//! [`Scheduler`] interface. Policies themselves are immutable; run-scoped
//! counters (the periodic policy's instruction counter) live in the
//! simulator's run state and arrive via [`BoundaryContext`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::MdpState;
use crate::qlearn::ActionBitTable;
use crate::system::{checkpoint_cost, restore_cost, ProgramSpec, SystemParams};

/// Data cache assumed for the conservative policy's worst-case checkpoint.
pub const WORST_CASE_DCACHE_BYTES: u64 = 8192;

/// What a policy wants done at an interval boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyDecision {
    /// Take a checkpoint, then run the next interval.
    Checkpoint,
    /// Run the next interval without checkpointing.
    Proceed,
    /// Commit any uncheckpointed progress, then power off until the battery
    /// reaches the given level.
    PowerOffUntil(u32),
}

/// Periodic policy: checkpoint whenever the instruction counter since the
/// last commit reaches the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicConfig {
    pub threshold_insts: u64,
}

impl Default for PeriodicConfig {
    fn default() -> Self {
        Self { threshold_insts: 1000 }
    }
}

impl PeriodicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_insts < 1 {
            return Err(Error::Config("threshold_insts: must be >= 1".into()));
        }
        Ok(())
    }
}

/// Conservative policy thresholds, in nJ: checkpoint-and-sleep below `low`,
/// wake once the battery covers `high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservativeConfig {
    /// Energy of a worst-case (full data cache) checkpoint.
    pub low_threshold_nj: f64,
    /// Restore energy plus `low`: enough to resume and still checkpoint.
    pub high_threshold_nj: f64,
}

impl ConservativeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_threshold_nj > 0.0 && self.high_threshold_nj >= self.low_threshold_nj) {
            return Err(Error::Config(format!(
                "conservative thresholds: need high >= low > 0, got low={}, high={}",
                self.low_threshold_nj, self.high_threshold_nj
            )));
        }
        Ok(())
    }
}

/// Derive the conservative thresholds: `low` is the checkpoint energy with
/// every data-cache line dirty; `high` adds the restore energy of the
/// program's actual checkpoint.
pub fn conservative_thresholds(sys: &SystemParams, prog: &ProgramSpec) -> ConservativeConfig {
    let worst = ProgramSpec {
        dirty_lines_per_cp: WORST_CASE_DCACHE_BYTES / sys.cache_line_bytes,
        ..prog.clone()
    };
    let low = checkpoint_cost(sys, &worst).energy_nj;
    ConservativeConfig {
        low_threshold_nj: low,
        high_threshold_nj: low + restore_cost(sys, prog).energy_nj,
    }
}

/// Learned-policy decision: the boundary state's action bit, except that the
/// last interval of every super-interval always checkpoints.
pub fn q_decide(table: &ActionBitTable, s: &MdpState) -> Result<PolicyDecision> {
    let (s_dim, b_dim) = table.dims();
    s.check(s_dim, b_dim).map_err(|e| {
        Error::DimensionMismatch(format!("state does not fit the action table: {e}"))
    })?;
    if s.p == s_dim - 1 {
        return Ok(PolicyDecision::Checkpoint);
    }
    Ok(if table.get(s)? {
        PolicyDecision::Checkpoint
    } else {
        PolicyDecision::Proceed
    })
}

/// Periodic-policy decision. The caller resets the counter when a checkpoint
/// commits.
pub fn periodic_decide(insts_since_cp: u64, cfg: &PeriodicConfig) -> PolicyDecision {
    if insts_since_cp >= cfg.threshold_insts {
        PolicyDecision::Checkpoint
    } else {
        PolicyDecision::Proceed
    }
}

fn level_for_energy(energy_nj: f64, b_levels: u32, capacity_nj: f64) -> u32 {
    let raw = (energy_nj * b_levels as f64 / capacity_nj).ceil();
    (raw as i64).clamp(0, b_levels as i64 - 1) as u32
}

/// Conservative-policy decision. While running, drop below `low` and the
/// policy checkpoints and powers off; while off, the processor resumes once
/// the battery covers `high` (boundary inclusive) and otherwise stays off.
pub fn conservative_decide(
    battery_nj: f64,
    running: bool,
    cfg: &ConservativeConfig,
    b_levels: u32,
    capacity_nj: f64,
) -> PolicyDecision {
    let wake = level_for_energy(cfg.high_threshold_nj, b_levels, capacity_nj);
    if running {
        if battery_nj < cfg.low_threshold_nj {
            PolicyDecision::PowerOffUntil(wake)
        } else {
            PolicyDecision::Proceed
        }
    } else if battery_nj >= cfg.high_threshold_nj {
        PolicyDecision::Proceed
    } else {
        PolicyDecision::PowerOffUntil(wake)
    }
}

/// Everything a policy may look at when deciding at an interval boundary.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryContext {
    /// Within-super-interval scheduler state.
    pub state: MdpState,
    pub battery_nj: f64,
    /// Instructions executed since the last committed checkpoint.
    pub insts_since_cp: u64,
    /// True when progress exists that a checkpoint would protect.
    pub has_uncommitted_progress: bool,
}

/// How a policy reacts when the next interval cannot meet its energy floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortfallResponse {
    /// Attempt the interval anyway and take the energy failure.
    Fail,
    /// Checkpoint at the boundary and sleep until the wake level; models a
    /// policy that monitors the battery continuously and never lets an
    /// interval brown out.
    PreemptiveCheckpoint { wake_level: u32 },
}

/// Uniform online-decision interface implemented by the three schedulers.
pub trait Scheduler {
    fn name(&self) -> &'static str;

    fn decide(&self, ctx: &BoundaryContext) -> PolicyDecision;

    /// Minimum battery the policy requires at the end of an interval for the
    /// interval to be started at all.
    fn run_floor_nj(&self) -> f64 {
        0.0
    }

    fn on_shortfall(&self) -> ShortfallResponse {
        ShortfallResponse::Fail
    }

    /// Whether the policy performs a one-word action-bit read every interval.
    fn uses_action_lookup(&self) -> bool {
        false
    }

    /// Per-checkpoint energy override in nJ. Policies without dirty-line
    /// tracking save the full cache every time, not just the lines the
    /// program actually dirtied.
    fn checkpoint_energy_override_nj(&self) -> Option<f64> {
        None
    }

    /// Per-restore energy override in nJ, for policies whose checkpoint
    /// image is larger than the program's own.
    fn restore_energy_override_nj(&self) -> Option<f64> {
        None
    }
}

/// Learned policy: action-bit lookup plus the mandatory boundary checkpoint.
pub struct QlearnScheduler {
    table: ActionBitTable,
}

impl QlearnScheduler {
    pub fn new(table: ActionBitTable, sys: &SystemParams) -> Result<Self> {
        let (s_dim, b_dim) = table.dims();
        if s_dim != sys.super_interval || b_dim != sys.battery_levels {
            return Err(Error::DimensionMismatch(format!(
                "action table is {s_dim}x{b_dim}, system expects {}x{}",
                sys.super_interval, sys.battery_levels
            )));
        }
        Ok(Self { table })
    }

    pub fn table(&self) -> &ActionBitTable {
        &self.table
    }
}

impl Scheduler for QlearnScheduler {
    fn name(&self) -> &'static str {
        "qlearn"
    }

    fn decide(&self, ctx: &BoundaryContext) -> PolicyDecision {
        q_decide(&self.table, &ctx.state).expect("state validated against table dimensions")
    }

    fn uses_action_lookup(&self) -> bool {
        true
    }
}

pub struct PeriodicScheduler {
    cfg: PeriodicConfig,
}

impl PeriodicScheduler {
    pub fn new(cfg: PeriodicConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl Scheduler for PeriodicScheduler {
    fn name(&self) -> &'static str {
        "periodic"
    }

    fn decide(&self, ctx: &BoundaryContext) -> PolicyDecision {
        periodic_decide(ctx.insts_since_cp, &self.cfg)
    }
}

pub struct ConservativeScheduler {
    cfg: ConservativeConfig,
    b_levels: u32,
    capacity_nj: f64,
    wake_level: u32,
    worst_restore_nj: f64,
}

impl ConservativeScheduler {
    pub fn new(cfg: ConservativeConfig, sys: &SystemParams) -> Result<Self> {
        cfg.validate()?;
        let worst = ProgramSpec {
            name: String::new(),
            total_insts: 1,
            dirty_lines_per_cp: WORST_CASE_DCACHE_BYTES / sys.cache_line_bytes,
        };
        Ok(Self {
            cfg,
            b_levels: sys.battery_levels,
            capacity_nj: sys.capacity_nj(),
            wake_level: level_for_energy(
                cfg.high_threshold_nj,
                sys.battery_levels,
                sys.capacity_nj(),
            ),
            worst_restore_nj: restore_cost(sys, &worst).energy_nj,
        })
    }

    /// Thresholds derived from the system and program.
    pub fn from_system(sys: &SystemParams, prog: &ProgramSpec) -> Result<Self> {
        Self::new(conservative_thresholds(sys, prog), sys)
    }

    pub fn config(&self) -> &ConservativeConfig {
        &self.cfg
    }
}

impl Scheduler for ConservativeScheduler {
    fn name(&self) -> &'static str {
        "conservative"
    }

    fn decide(&self, ctx: &BoundaryContext) -> PolicyDecision {
        conservative_decide(ctx.battery_nj, true, &self.cfg, self.b_levels, self.capacity_nj)
    }

    fn run_floor_nj(&self) -> f64 {
        self.cfg.low_threshold_nj
    }

    fn on_shortfall(&self) -> ShortfallResponse {
        ShortfallResponse::PreemptiveCheckpoint {
            wake_level: self.wake_level,
        }
    }

    fn checkpoint_energy_override_nj(&self) -> Option<f64> {
        // No dirty-line tracking: every checkpoint writes the full data
        // cache, which is what the low threshold was sized for.
        Some(self.cfg.low_threshold_nj)
    }

    fn restore_energy_override_nj(&self) -> Option<f64> {
        // The saved image is the full cache, so that is what a wake-up
        // reads back and decrypts.
        Some(self.worst_restore_nj)
    }
}
