//! Calibrated model presets anchored to measured unbatched medians on
//! DGX-A100 and DGX-H100 (Llama2-70B: TTFT 185/95 ms at 1500 prompt tokens,
//! TBT 52/31 ms). BLOOM-176B is scaled so a 1500-token prompt costs about
//! as much as six token iterations.

use std::collections::BTreeMap;

use super::{MachineType, PerfModel, PerfModelSet, PiecewiseLinear, DGX_MEMORY_BYTES};
use crate::error::{Error, Result};

/// Prompt-phase slowdown applied to power-capped H100 machines.
pub const DEFAULT_HCAP_PROMPT_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LlmPreset {
    pub name: &'static str,
    pub num_layers: u32,
    pub hidden_size: u32,
    pub weight_memory: u64,
    /// Per-sequence context used to size `max_token_batch` from memory.
    pub calibration_context: u32,
    pub max_token_batch: u32,
    prompt_a100: &'static [(f64, f64)],
    prompt_h100: &'static [(f64, f64)],
    token_a100: &'static [(f64, f64)],
    token_h100: &'static [(f64, f64)],
}

const LLAMA_PROMPT_A100: &[(f64, f64)] = &[
    (1.0, 91.3),
    (1020.0, 155.0),
    (1500.0, 185.0),
    (2048.0, 219.3),
    (4096.0, 420.0),
    (8192.0, 850.0),
];
const LLAMA_PROMPT_H100: &[(f64, f64)] = &[
    (1.0, 61.0),
    (1020.0, 84.0),
    (1500.0, 95.0),
    (2048.0, 107.6),
    (4096.0, 210.0),
    (8192.0, 435.0),
];
const LLAMA_TOKEN_A100: &[(f64, f64)] = &[(1.0, 52.0), (8.0, 53.5), (16.0, 56.0), (32.0, 65.0), (64.0, 104.0)];
const LLAMA_TOKEN_H100: &[(f64, f64)] = &[(1.0, 31.0), (8.0, 32.0), (16.0, 33.5), (32.0, 39.0), (64.0, 62.0)];

const BLOOM_PROMPT_A100: &[(f64, f64)] = &[
    (1.0, 190.0),
    (1020.0, 300.0),
    (1500.0, 350.0),
    (2048.0, 405.0),
    (4096.0, 790.0),
    (8192.0, 1600.0),
];
const BLOOM_PROMPT_H100: &[(f64, f64)] = &[
    (1.0, 110.0),
    (1020.0, 160.0),
    (1500.0, 180.0),
    (2048.0, 205.0),
    (4096.0, 400.0),
    (8192.0, 820.0),
];
const BLOOM_TOKEN_A100: &[(f64, f64)] = &[(1.0, 58.0), (8.0, 60.0), (16.0, 63.0), (32.0, 75.0)];
const BLOOM_TOKEN_H100: &[(f64, f64)] = &[(1.0, 30.0), (8.0, 31.5), (16.0, 33.0), (32.0, 40.0)];

impl LlmPreset {
    pub fn llama2_70b() -> Self {
        Self {
            name: "llama2-70b",
            num_layers: 80,
            hidden_size: 8192,
            weight_memory: 140_000_000_000,
            calibration_context: 2950,
            max_token_batch: 64,
            prompt_a100: LLAMA_PROMPT_A100,
            prompt_h100: LLAMA_PROMPT_H100,
            token_a100: LLAMA_TOKEN_A100,
            token_h100: LLAMA_TOKEN_H100,
        }
    }

    pub fn bloom_176b() -> Self {
        Self {
            name: "bloom-176b",
            num_layers: 70,
            hidden_size: 14336,
            weight_memory: 352_000_000_000,
            calibration_context: 2200,
            max_token_batch: 32,
            prompt_a100: BLOOM_PROMPT_A100,
            prompt_h100: BLOOM_PROMPT_H100,
            token_a100: BLOOM_TOKEN_A100,
            token_h100: BLOOM_TOKEN_H100,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "llama2-70b" | "llama-70b" => Ok(Self::llama2_70b()),
            "bloom-176b" => Ok(Self::bloom_176b()),
            other => Err(Error::config(format!(
                "unknown model preset `{other}` (expected llama2-70b or bloom-176b)"
            ))),
        }
    }

    /// K and V per layer, fp16: `2 * layers * hidden * 2` bytes per token.
    pub fn kv_bytes_per_token(&self) -> u64 {
        2 * self.num_layers as u64 * self.hidden_size as u64 * 2
    }

    pub fn model(&self, machine_type: MachineType, hcap_prompt_factor: f64) -> PerfModel {
        let curve = |k: &[(f64, f64)]| PiecewiseLinear::new(k.to_vec()).expect("preset knots are valid");
        let (prompt, token) = match machine_type {
            MachineType::A100 => (curve(self.prompt_a100), curve(self.token_a100)),
            MachineType::H100 => (curve(self.prompt_h100), curve(self.token_h100)),
            MachineType::H100Cap => (
                curve(self.prompt_h100).scaled(hcap_prompt_factor),
                curve(self.token_h100),
            ),
        };
        PerfModel {
            machine_type,
            llm: self.name.to_string(),
            prompt,
            token,
            kv_bytes_per_token: self.kv_bytes_per_token(),
            weight_memory: self.weight_memory,
            memory_capacity: DGX_MEMORY_BYTES,
            max_token_batch: self.max_token_batch,
        }
    }

    pub fn model_set(&self, hcap_prompt_factor: f64) -> PerfModelSet {
        let models: BTreeMap<_, _> = MachineType::ALL
            .iter()
            .map(|&t| (t, self.model(t, hcap_prompt_factor)))
            .collect();
        PerfModelSet {
            llm: self.name.to_string(),
            models,
        }
    }
}
