//! Harvested-power traces and the first-order Markov chain fitted from them.
//!
//! Measured harvesting traces tend to be short, while training and evaluation
//! need long ones. The workflow here: quantize a measured trace onto a small
//! ordered set of power levels, count adjacent level-to-level transitions,
//! row-normalize the counts into a transition matrix, and sample arbitrarily
//! long synthetic traces from the resulting chain. `scale_trace` (and
//! [`TransitionModel::rescaled_to_mean`]) adjust the power scale so one trace
//! shape can drive platforms with different energy budgets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniformly sampled harvested-power sequence, in milliwatts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    sample_period_s: f64,
    samples_mw: Vec<f64>,
}

impl PowerTrace {
    pub fn new(sample_period_s: f64, samples_mw: Vec<f64>) -> Result<Self> {
        if !sample_period_s.is_finite() || sample_period_s <= 0.0 {
            return Err(Error::Config(format!(
                "sample period must be positive, got {sample_period_s}"
            )));
        }
        if samples_mw.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if let Some((i, &v)) = samples_mw
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Config(format!(
                "sample {i} must be a non-negative finite power, got {v}"
            )));
        }
        Ok(Self {
            sample_period_s,
            samples_mw,
        })
    }

    pub fn sample_period_s(&self) -> f64 {
        self.sample_period_s
    }

    pub fn samples_mw(&self) -> &[f64] {
        &self.samples_mw
    }

    pub fn len(&self) -> usize {
        self.samples_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples_mw.is_empty()
    }

    pub fn mean_mw(&self) -> f64 {
        self.samples_mw.iter().sum::<f64>() / self.samples_mw.len() as f64
    }
}

/// Strictly increasing set of quantization levels, in milliwatts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLevelSet {
    levels_mw: Vec<f64>,
}

impl PowerLevelSet {
    pub fn new(levels_mw: Vec<f64>) -> Result<Self> {
        if levels_mw.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 power levels, got {}",
                levels_mw.len()
            )));
        }
        if levels_mw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "power levels must be non-negative finite values".into(),
            ));
        }
        if levels_mw.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "power levels must be strictly increasing".into(),
            ));
        }
        Ok(Self { levels_mw })
    }

    /// The six-level set used for radio-frequency harvesting sources.
    pub fn default_six() -> Self {
        Self::new(vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0]).unwrap()
    }

    pub fn levels_mw(&self) -> &[f64] {
        &self.levels_mw
    }

    pub fn len(&self) -> usize {
        self.levels_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the level nearest to `value`; equidistant values resolve to
    /// the lower level.
    pub fn nearest_index(&self, value: f64) -> usize {
        let mut best = 0usize;
        let mut best_dist = (value - self.levels_mw[0]).abs();
        for (i, &l) in self.levels_mw.iter().enumerate().skip(1) {
            let d = (value - l).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }

    /// Index of a sample that must already be a member of the set
    /// (bit-exact comparison, as produced by [`quantize_trace`]).
    pub fn exact_index(&self, value: f64) -> Option<usize> {
        self.levels_mw.iter().position(|&l| l == value)
    }
}

/// Fitted first-order Markov chain over a power level set: raw transition
/// counts plus the row-stochastic probability matrix derived from them.
///
/// Rows whose count total is zero get a self-loop probability row so that
/// generation never stalls on an unobserved level.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    levels: PowerLevelSet,
    counts: Vec<Vec<u64>>,
    probs: Vec<Vec<f64>>,
}

impl TransitionModel {
    pub fn from_counts(levels: PowerLevelSet, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = levels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!(
                "count matrix must be {k}x{k} to match the level set"
            )));
        }
        let probs = counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: u64 = row.iter().sum();
                if total == 0 {
                    let mut p = vec![0.0; k];
                    p[i] = 1.0;
                    p
                } else {
                    row.iter().map(|&c| c as f64 / total as f64).collect()
                }
            })
            .collect();
        Ok(Self {
            levels,
            counts,
            probs,
        })
    }

    pub fn levels(&self) -> &PowerLevelSet {
        &self.levels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// Built-in bursty six-level chain for desk experiments where no measured
    /// trace is available. Strong self-transitions give multi-sample dwells,
    /// with most of the stationary mass in the mid levels and excursions to
    /// the outage and burst extremes.
    pub fn synthetic_default() -> Self {
        let levels = PowerLevelSet::default_six();
        let counts: Vec<Vec<u64>> = vec![
            vec![75, 15, 6, 2, 1, 1],
            vec![10, 72, 12, 4, 1, 1],
            vec![4, 10, 72, 10, 3, 1],
            vec![2, 6, 14, 68, 8, 2],
            vec![2, 4, 10, 20, 58, 6],
            vec![2, 3, 7, 18, 25, 45],
        ];
        Self::from_counts(levels, counts).unwrap()
    }

    /// Rescale the level values so a probe trace generated from the chain has
    /// the given mean power. Transition structure is unchanged, so generating
    /// from the rescaled model is equivalent to scaling every generated trace
    /// by the same factor.
    pub fn rescaled_to_mean(
        &self,
        target_mean_mw: f64,
        probe_len: usize,
        probe_seed: u64,
    ) -> Result<Self> {
        if !(target_mean_mw > 0.0) {
            return Err(Error::Config(format!(
                "target mean power must be positive, got {target_mean_mw}"
            )));
        }
        let probe = generate_trace(self, probe_len, 1.0, probe_seed, 0)?;
        let mean = probe.mean_mw();
        if mean <= 0.0 {
            return Err(Error::ZeroTrace);
        }
        let factor = target_mean_mw / mean;
        let levels = PowerLevelSet::new(
            self.levels
                .levels_mw()
                .iter()
                .map(|&l| l * factor)
                .collect(),
        )?;
        Self::from_counts(levels, self.counts.clone())
    }
}

/// Snap every sample to the nearest level (ties toward the lower level).
/// Quantization is idempotent and preserves the sample period.
pub fn quantize_trace(trace: &PowerTrace, levels: &PowerLevelSet) -> Result<PowerTrace> {
    let samples = trace
        .samples_mw()
        .iter()
        .map(|&v| levels.levels_mw()[levels.nearest_index(v)])
        .collect();
    PowerTrace::new(trace.sample_period_s(), samples)
}

/// Count adjacent level transitions in a quantized trace and derive the
/// row-stochastic matrix. Every sample must already be a member of `levels`.
pub fn fit_transitions(quantized: &PowerTrace, levels: &PowerLevelSet) -> Result<TransitionModel> {
    if quantized.len() < 2 {
        return Err(Error::TraceTooShort {
            need: 2,
            got: quantized.len(),
        });
    }
    let k = levels.len();
    let indices: Vec<usize> = quantized
        .samples_mw()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            levels
                .exact_index(v)
                .ok_or(Error::UnquantizedSample { index: i, value: v })
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![vec![0u64; k]; k];
    for w in indices.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    TransitionModel::from_counts(levels.clone(), counts)
}

/// Sample a synthetic trace of `n_samples` values from the chain, starting at
/// `levels[initial_level_index]`. Identical inputs produce identical traces.
pub fn generate_trace(
    model: &TransitionModel,
    n_samples: usize,
    sample_period_s: f64,
    seed: u64,
    initial_level_index: usize,
) -> Result<PowerTrace> {
    if n_samples == 0 {
        return Err(Error::EmptyTrace);
    }
    let k = model.levels.len();
    if initial_level_index >= k {
        return Err(Error::Config(format!(
            "initial level index {initial_level_index} out of range for {k} levels"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = initial_level_index;
    let mut samples = Vec::with_capacity(n_samples);
    samples.push(model.levels.levels_mw()[idx]);
    for _ in 1..n_samples {
        idx = sample_row(&model.probs[idx], &mut rng);
        samples.push(model.levels.levels_mw()[idx]);
    }
    PowerTrace::new(sample_period_s, samples)
}

pub(crate) fn sample_row(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}

/// Multiply every sample so the trace mean becomes `target_mean_mw`.
pub fn scale_trace(trace: &PowerTrace, target_mean_mw: f64) -> Result<PowerTrace> {
    if !(target_mean_mw > 0.0) {
        return Err(Error::Config(format!(
            "target mean power must be positive, got {target_mean_mw}"
        )));
    }
    let mean = trace.mean_mw();
    if mean <= 0.0 {
        return Err(Error::ZeroTrace);
    }
    let factor = target_mean_mw / mean;
    let samples = trace.samples_mw().iter().map(|&v| v * factor).collect();
    PowerTrace::new(trace.sample_period_s(), samples)
}

// --- file formats ---------------------------------------------------------

const TRACE_CSV_HEADER: &str = "time_s,power_mw";

/// Write a trace as `time_s,power_mw` CSV with uniform spacing.
pub fn write_trace_csv(trace: &PowerTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for (i, &p) in trace.samples_mw().iter().enumerate() {
        writeln!(w, "{:.9},{}", i as f64 * trace.sample_period_s(), p)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a `time_s,power_mw` CSV. The time column must be uniformly spaced
/// within 1% of the median step; the median step becomes the sample period.
pub fn read_trace_csv(path: &Path) -> Result<PowerTrace> {
    let display = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut times = Vec::new();
    let mut powers = Vec::new();
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::FileFormat {
                path: display,
                message: "missing header row".into(),
            })
        }
    };
    if header.trim() != TRACE_CSV_HEADER {
        return Err(Error::FileFormat {
            path: display,
            message: format!("expected header `{TRACE_CSV_HEADER}`, got `{}`", header.trim()),
        });
    }

    for (lineno, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let t = parse_csv_field(parts.next(), &display, lineno + 1, "time_s")?;
        let p = parse_csv_field(parts.next(), &display, lineno + 1, "power_mw")?;
        if parts.next().is_some() {
            return Err(Error::CsvParse {
                path: display,
                line: lineno + 1,
                field: "row".into(),
                message: "expected exactly 2 fields".into(),
            });
        }
        if p < 0.0 {
            return Err(Error::CsvParse {
                path: display,
                line: lineno + 1,
                field: "power_mw".into(),
                message: format!("negative power {p}"),
            });
        }
        times.push(t);
        powers.push(p);
    }

    if powers.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if powers.len() < 2 {
        return Err(Error::FileFormat {
            path: display,
            message: "need at least 2 data rows to infer the sample period".into(),
        });
    }

    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(|a, b| a.total_cmp(b));
    let median = steps[steps.len() / 2];
    if median <= 0.0 {
        return Err(Error::FileFormat {
            path: display,
            message: "time column must be strictly increasing".into(),
        });
    }
    if let Some(i) = steps
        .iter()
        .position(|&s| (s - median).abs() > 0.01 * median)
    {
        return Err(Error::FileFormat {
            path: display,
            message: format!(
                "non-uniform sample spacing: step {} deviates more than 1% from the median {median}",
                steps[i]
            ),
        });
    }
    PowerTrace::new(median, powers)
}

fn parse_csv_field(
    field: Option<&str>,
    path: &str,
    line: usize,
    name: &str,
) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::CsvParse {
        path: path.to_string(),
        line,
        field: name.to_string(),
        message: "missing field".into(),
    })?;
    raw.trim().parse::<f64>().map_err(|e| Error::CsvParse {
        path: path.to_string(),
        line,
        field: name.to_string(),
        message: format!("{e}: `{}`", raw.trim()),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    levels_mw: Vec<f64>,
    counts: Vec<Vec<u64>>,
    probs: Vec<Vec<f64>>,
}

/// Write a transition model as JSON (`levels_mw`, `counts`, `probs`).
pub fn write_model_json(model: &TransitionModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        levels_mw: model.levels.levels_mw().to_vec(),
        counts: model.counts.clone(),
        probs: model.probs.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &file)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Read a transition model from JSON, validating that `probs` matches the
/// row-normalized counts within 1e-9.
pub fn read_model_json(path: &Path) -> Result<TransitionModel> {
    let display = path.display().to_string();
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let levels = PowerLevelSet::new(file.levels_mw)?;
    let model = TransitionModel::from_counts(levels, file.counts)?;
    let k = model.levels.len();
    if file.probs.len() != k || file.probs.iter().any(|r| r.len() != k) {
        return Err(Error::FileFormat {
            path: display,
            message: format!("probs matrix must be {k}x{k}"),
        });
    }
    for (i, row) in file.probs.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if (p - model.probs[i][j]).abs() > 1e-9 {
                return Err(Error::FileFormat {
                    path: display,
                    message: format!(
                        "probs[{i}][{j}] = {p} is inconsistent with the normalized counts"
                    ),
                });
            }
        }
    }
    Ok(model)
}
