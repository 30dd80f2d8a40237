//! Piece-wise linear performance models for the prompt phase, the token
//! phase, and KV-cache memory.

mod fit;
mod io;
mod presets;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use fit::{fit_piecewise_linear, fit_profiles, fit_with_holdout, FitReport};
pub use io::{parse_model_file, parse_profile_csv, write_model_file, write_profile_csv, PROFILE_HEADER};
pub use presets::{LlmPreset, DEFAULT_HCAP_PROMPT_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MachineType {
    A100,
    H100,
    /// DGX-H100 with GPUs power capped to half their rating.
    H100Cap,
}

impl MachineType {
    pub const ALL: [MachineType; 3] = [MachineType::A100, MachineType::H100, MachineType::H100Cap];

    pub fn as_str(self) -> &'static str {
        match self {
            MachineType::A100 => "A100",
            MachineType::H100 => "H100",
            MachineType::H100Cap => "H100cap",
        }
    }

    /// Whether links attached to this machine are A100-class (lower bandwidth).
    pub fn is_a100_class(self) -> bool {
        matches!(self, MachineType::A100)
    }
}

impl fmt::Display for MachineType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MachineType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a100" => Ok(MachineType::A100),
            "h100" => Ok(MachineType::H100),
            "h100cap" | "hcap" => Ok(MachineType::H100Cap),
            _ => Err(Error::config(format!("unknown machine type `{s}`"))),
        }
    }
}

/// Hardware description of one simulated server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineSpec {
    pub machine_type: MachineType,
    /// Provisioned power, normalized so a DGX-A100 is 1.0.
    pub power_rating: f64,
    /// Cost, normalized so a DGX-A100 is 1.0.
    pub cost_rate: f64,
    /// Inter-machine link bandwidth in bits per second.
    pub interconnect_bandwidth: f64,
    pub memory_capacity: u64,
}

pub const DGX_MEMORY_BYTES: u64 = 640_000_000_000;

impl MachineSpec {
    pub fn standard(machine_type: MachineType) -> Self {
        let (cost, power, bw) = match machine_type {
            MachineType::A100 => (1.0, 1.0, 200e9),
            MachineType::H100 => (2.35, 1.75, 400e9),
            MachineType::H100Cap => (2.5, 1.23, 400e9),
        };
        Self {
            machine_type,
            power_rating: power,
            cost_rate: cost,
            interconnect_bandwidth: bw,
            memory_capacity: DGX_MEMORY_BYTES,
        }
    }
}

/// One profiling measurement. Prompt-phase samples carry a positive
/// `batch_prompt_tokens`, token-phase samples a positive `batch_token_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSample {
    pub machine_type: MachineType,
    pub llm: String,
    pub batch_prompt_tokens: u32,
    pub batch_token_count: u32,
    pub measured_time_ms: f64,
    pub measured_memory: u64,
}

impl ProfileSample {
    pub fn is_prompt(&self) -> bool {
        self.batch_prompt_tokens > 0
    }

    pub fn abscissa(&self) -> u32 {
        if self.is_prompt() {
            self.batch_prompt_tokens
        } else {
            self.batch_token_count
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.batch_prompt_tokens > 0) == (self.batch_token_count > 0) {
            return Err(Error::validation(
                "profile sample must have exactly one of prompt tokens / batch size positive",
            ));
        }
        if !(self.measured_time_ms > 0.0) || !self.measured_time_ms.is_finite() {
            return Err(Error::validation("profile sample time must be positive"));
        }
        Ok(())
    }
}

/// Continuous piece-wise linear function through sorted knots.
///
/// Beyond the last knot the final segment's slope is extended; below the
/// first knot the first knot's value is held.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Fit("need at least two knots".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Internal("knot abscissas must be strictly increasing".into()));
            }
        }
        if knots.iter().any(|&(_, y)| !(y > 0.0) || !y.is_finite()) {
            return Err(Error::Fit("knot values must be positive".into()));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        // index of first knot with abscissa >= x
        let i = k.partition_point(|&(kx, _)| kx < x).min(k.len() - 1);
        let (x0, y0) = k[i - 1];
        let (x1, y1) = k[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.knots.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            knots: self.knots.iter().map(|&(x, y)| (x, y * factor)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfModel {
    pub machine_type: MachineType,
    pub llm: String,
    /// Batch prompt tokens -> milliseconds.
    pub prompt: PiecewiseLinear,
    /// Token batch size -> milliseconds per iteration.
    pub token: PiecewiseLinear,
    pub kv_bytes_per_token: u64,
    pub weight_memory: u64,
    pub memory_capacity: u64,
    pub max_token_batch: u32,
}

impl PerfModel {
    pub fn prompt_time(&self, total_prompt_tokens: u32) -> Result<f64> {
        if total_prompt_tokens == 0 {
            return Err(Error::validation("prompt_time needs at least one token"));
        }
        Ok(self.prompt.eval(total_prompt_tokens as f64))
    }

    pub fn token_iter_time(&self, batch_size: u32) -> Result<f64> {
        if batch_size == 0 {
            return Err(Error::validation("token batch must be non-empty"));
        }
        if batch_size > self.max_token_batch {
            return Err(Error::Capacity {
                requested: batch_size,
                max: self.max_token_batch,
            });
        }
        Ok(self.token.eval(batch_size as f64))
    }

    pub fn kv_cache_bytes(&self, context_tokens: u64) -> u64 {
        context_tokens * self.kv_bytes_per_token
    }

    /// Weights plus the KV cache of every active context. May exceed
    /// `memory_capacity`; callers enforce the limit.
    pub fn memory_in_use(&self, active_contexts: &[u32]) -> u64 {
        self.weight_memory
            + active_contexts
                .iter()
                .map(|&c| self.kv_cache_bytes(c as u64))
                .sum::<u64>()
    }

    pub fn kv_capacity_bytes(&self) -> u64 {
        self.memory_capacity.saturating_sub(self.weight_memory)
    }
}

/// Performance models for one LLM across machine types.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfModelSet {
    pub llm: String,
    pub models: BTreeMap<MachineType, PerfModel>,
}

impl PerfModelSet {
    pub fn get(&self, machine_type: MachineType) -> Result<&PerfModel> {
        self.models.get(&machine_type).ok_or_else(|| {
            Error::config(format!(
                "no performance model for machine type {machine_type} (llm {})",
                self.llm
            ))
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        LlmPreset::by_name(name).map(|p| p.model_set(DEFAULT_HCAP_PROMPT_FACTOR))
    }
}
