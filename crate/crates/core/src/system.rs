//! Platform constants and derived checkpoint/restore/interval costs.
//!
//! All energies are handled in nanojoules internally. Config fields keep the
//! units they are usually quoted in: processor and cipher energies in nJ,
//! non-volatile memory energies in pJ per 4-byte word, battery capacity in µJ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PJ_PER_NJ: f64 = 1e-3;
const NJ_PER_UJ: f64 = 1e3;

/// Block cipher used to encrypt checkpoints before they reach non-volatile
/// memory. `None` models plaintext checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CipherKind {
    None,
    Prince,
    Aes,
}

impl CipherKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CipherKind::None => "none",
            CipherKind::Prince => "prince",
            CipherKind::Aes => "aes",
        }
    }
}

/// Per-cipher checkpoint overheads: encryption energy per 8-byte block and
/// extra latency on top of the base checkpoint latency. Decryption is charged
/// at the same per-block energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CipherConfigFile")]
pub struct CipherConfig {
    pub name: CipherKind,
    /// nJ per 8-byte block.
    pub encrypt_energy_per_block: f64,
    /// Cycles added to every checkpoint and restore.
    pub extra_latency_cycles: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CipherConfigFile {
    name: CipherKind,
    encrypt_energy_per_block: Option<f64>,
    extra_latency_cycles: Option<u64>,
}

impl TryFrom<CipherConfigFile> for CipherConfig {
    type Error = Error;

    fn try_from(f: CipherConfigFile) -> Result<Self> {
        let base = match f.name {
            CipherKind::None => CipherConfig::none(),
            CipherKind::Prince => CipherConfig::prince(),
            CipherKind::Aes => CipherConfig::aes(),
        };
        let cfg = CipherConfig {
            name: f.name,
            encrypt_energy_per_block: f.encrypt_energy_per_block.unwrap_or(base.encrypt_energy_per_block),
            extra_latency_cycles: f.extra_latency_cycles.unwrap_or(base.extra_latency_cycles),
        };
        if !(cfg.encrypt_energy_per_block >= 0.0) {
            return Err(Error::Config(
                "cipher.encrypt_energy_per_block: must be >= 0".into(),
            ));
        }
        Ok(cfg)
    }
}

impl CipherConfig {
    pub fn none() -> Self {
        Self {
            name: CipherKind::None,
            encrypt_energy_per_block: 0.0,
            extra_latency_cycles: 0,
        }
    }

    pub fn prince() -> Self {
        Self {
            name: CipherKind::Prince,
            encrypt_energy_per_block: 1.6,
            extra_latency_cycles: 82,
        }
    }

    /// AES per-block energy is a calibration constant: only relative runtime
    /// outcomes are known for it, and 9.8 nJ/8B reproduces the expected
    /// none < prince < aes runtime ordering with a wide margin.
    pub fn aes() -> Self {
        Self {
            name: CipherKind::Aes,
            encrypt_energy_per_block: 9.8,
            extra_latency_cycles: 82,
        }
    }

    pub fn for_kind(kind: CipherKind) -> Self {
        match kind {
            CipherKind::None => Self::none(),
            CipherKind::Prince => Self::prince(),
            CipherKind::Aes => Self::aes(),
        }
    }
}

/// Every physical constant of the modeled platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    /// nJ consumed per executed instruction.
    pub proc_energy_per_inst: f64,
    /// pJ per 4-byte word read from non-volatile memory.
    pub nvm_read_energy_per_word: f64,
    /// pJ per 4-byte word written to non-volatile memory.
    pub nvm_write_energy_per_word: f64,
    /// Battery capacity in µJ.
    pub battery_capacity: f64,
    /// Number of discrete battery levels B.
    pub battery_levels: u32,
    /// Processor clock in Hz.
    pub clock_hz: f64,
    /// Cycles per instruction.
    pub cpi: f64,
    /// Instructions per scheduler interval N.
    pub interval_insts: u64,
    /// Intervals per super-interval S.
    pub super_interval: u32,
    /// Register file bytes captured by a checkpoint.
    pub rf_bytes: u64,
    /// Program counter bytes captured by a checkpoint.
    pub pc_bytes: u64,
    /// Bytes per cache line.
    pub cache_line_bytes: u64,
    /// Checkpoint latency in cycles before cipher overhead.
    pub base_cp_latency_cycles: u64,
    pub cipher: CipherConfig,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            proc_energy_per_inst: 6.3,
            nvm_read_energy_per_word: 65.16,
            nvm_write_energy_per_word: 71.78,
            battery_capacity: 2.0,
            battery_levels: 20,
            clock_hz: 1e5,
            cpi: 1.0,
            interval_insts: 500,
            super_interval: 100,
            rf_bytes: 128,
            pc_bytes: 4,
            cache_line_bytes: 32,
            base_cp_latency_cycles: 82,
            cipher: CipherConfig::prince(),
        }
    }
}

impl SystemParams {
    /// Validate every field, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.proc_energy_per_inst > 0.0) {
            bad.push("proc_energy_per_inst: must be > 0".to_string());
        }
        if !(self.nvm_read_energy_per_word >= 0.0) {
            bad.push("nvm_read_energy_per_word: must be >= 0".to_string());
        }
        if !(self.nvm_write_energy_per_word >= 0.0) {
            bad.push("nvm_write_energy_per_word: must be >= 0".to_string());
        }
        if !(self.battery_capacity > 0.0) {
            bad.push("battery_capacity: must be > 0".to_string());
        }
        if self.battery_levels < 2 {
            bad.push(format!(
                "battery_levels: must be >= 2, got {}",
                self.battery_levels
            ));
        }
        if !(self.clock_hz > 0.0) {
            bad.push("clock_hz: must be > 0".to_string());
        }
        if !(self.cpi > 0.0) {
            bad.push("cpi: must be > 0".to_string());
        }
        if self.interval_insts < 1 {
            bad.push("interval_insts: must be >= 1".to_string());
        }
        if self.super_interval < 2 {
            bad.push(format!(
                "super_interval: must be >= 2, got {}",
                self.super_interval
            ));
        }
        if self.rf_bytes < 1 {
            bad.push("rf_bytes: must be >= 1".to_string());
        }
        if self.pc_bytes < 1 {
            bad.push("pc_bytes: must be >= 1".to_string());
        }
        if self.cache_line_bytes < 1 {
            bad.push("cache_line_bytes: must be >= 1".to_string());
        }
        if !(self.cipher.encrypt_energy_per_block >= 0.0) {
            bad.push("cipher.encrypt_energy_per_block: must be >= 0".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn capacity_nj(&self) -> f64 {
        self.battery_capacity * NJ_PER_UJ
    }

    /// Energy per battery level. Level boundaries are always computed from
    /// the (capacity, levels) pair directly so `quantum * B == capacity`
    /// holds exactly.
    pub fn battery_quantum_nj(&self) -> f64 {
        self.capacity_nj() / self.battery_levels as f64
    }

    /// Discrete level index for a stored energy, clamped to `B - 1`.
    pub fn battery_level_of(&self, energy_nj: f64) -> u32 {
        let raw = (energy_nj * self.battery_levels as f64 / self.capacity_nj()).floor();
        (raw as i64).clamp(0, self.battery_levels as i64 - 1) as u32
    }
}

/// A benchmark stand-in: dynamic instruction count plus the average number of
/// dirty cache lines captured at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSpec {
    pub name: String,
    pub total_insts: u64,
    pub dirty_lines_per_cp: u64,
}

impl ProgramSpec {
    pub fn new(name: impl Into<String>, total_insts: u64, dirty_lines_per_cp: u64) -> Result<Self> {
        if total_insts < 1 {
            return Err(Error::Config("total_insts: must be >= 1".into()));
        }
        Ok(Self {
            name: name.into(),
            total_insts,
            dirty_lines_per_cp,
        })
    }
}

/// Energy plus latency of a single checkpoint or restore.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub energy_nj: f64,
    pub latency_cycles: u64,
}

/// Energy and wall-clock duration of one scheduler interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalDemand {
    pub energy_nj: f64,
    pub duration_s: f64,
}

/// Checkpointed state size: program counter, register file, dirty cache lines.
pub fn checkpoint_bytes(sys: &SystemParams, prog: &ProgramSpec) -> u64 {
    sys.pc_bytes + sys.rf_bytes + prog.dirty_lines_per_cp * sys.cache_line_bytes
}

fn bytes_cost(sys: &SystemParams, bytes: u64, nvm_energy_per_word_pj: f64) -> f64 {
    let blocks = bytes.div_ceil(8);
    let words = bytes.div_ceil(4);
    blocks as f64 * sys.cipher.encrypt_energy_per_block
        + words as f64 * nvm_energy_per_word_pj * PJ_PER_NJ
}

/// Encrypt-and-write cost of one checkpoint.
pub fn checkpoint_cost(sys: &SystemParams, prog: &ProgramSpec) -> CostEstimate {
    let bytes = checkpoint_bytes(sys, prog);
    CostEstimate {
        energy_nj: bytes_cost(sys, bytes, sys.nvm_write_energy_per_word),
        latency_cycles: sys.base_cp_latency_cycles + sys.cipher.extra_latency_cycles,
    }
}

/// Read-and-decrypt cost of restoring a checkpoint. Decryption is charged at
/// the encryption energy; latency mirrors the checkpoint latency.
pub fn restore_cost(sys: &SystemParams, prog: &ProgramSpec) -> CostEstimate {
    let bytes = checkpoint_bytes(sys, prog);
    CostEstimate {
        energy_nj: bytes_cost(sys, bytes, sys.nvm_read_energy_per_word),
        latency_cycles: sys.base_cp_latency_cycles + sys.cipher.extra_latency_cycles,
    }
}

/// Processor demand of one interval of N instructions.
pub fn interval_demand(sys: &SystemParams) -> IntervalDemand {
    IntervalDemand {
        energy_nj: sys.interval_insts as f64 * sys.proc_energy_per_inst,
        duration_s: sys.interval_insts as f64 * sys.cpi / sys.clock_hz,
    }
}

/// Energy of the one-word action-bit read performed each interval, summed
/// over a super-interval.
pub fn lookup_energy_per_superinterval(sys: &SystemParams) -> f64 {
    sys.super_interval as f64 * sys.nvm_read_energy_per_word * PJ_PER_NJ
}

/// Read system parameters from a JSON file. Unknown keys are rejected and the
/// result is validated.
pub fn read_params_json(path: &std::path::Path) -> Result<SystemParams> {
    let text = std::fs::read_to_string(path)?;
    let params: SystemParams = serde_json::from_str(&text).map_err(|e| Error::FileFormat {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    params.validate()?;
    Ok(params)
}

pub fn write_params_json(params: &SystemParams, path: &std::path::Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(params)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
