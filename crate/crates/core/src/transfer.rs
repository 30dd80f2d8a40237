//! KV-cache handoff from a prompt machine to a token machine.

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::perfmodel::MachineType;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    /// Ship the whole cache after the prompt phase finishes.
    Serialized,
    /// Ship each layer's cache while later layers are still computing.
    Layerwise,
}

impl TransferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::Serialized => "serialized",
            TransferMode::Layerwise => "layerwise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    /// Link bandwidth in bits per second.
    pub bandwidth: f64,
    /// Prompts with fewer tokens than this use serialized transfer.
    pub mode_threshold_tokens: u32,
    /// Non-overlapped synchronization floor of a layer-wise transfer.
    pub layerwise_constant_ms: f64,
    pub num_layers: u32,
}

impl TransferConfig {
    pub fn h100_class(num_layers: u32) -> Self {
        Self {
            bandwidth: 400e9,
            mode_threshold_tokens: 512,
            layerwise_constant_ms: 5.0,
            num_layers,
        }
    }

    pub fn a100_class(num_layers: u32) -> Self {
        Self {
            bandwidth: 200e9,
            mode_threshold_tokens: 1024,
            layerwise_constant_ms: 8.0,
            num_layers,
        }
    }

    /// A pair is as fast as its slower end.
    pub fn for_pair(prompt: MachineType, token: MachineType, num_layers: u32) -> Self {
        if prompt.is_a100_class() || token.is_a100_class() {
            Self::a100_class(num_layers)
        } else {
            Self::h100_class(num_layers)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::validation("transfer bandwidth must be positive"));
        }
        if !(self.layerwise_constant_ms >= 0.0) {
            return Err(Error::validation("layer-wise constant must be >= 0"));
        }
        if self.num_layers == 0 {
            return Err(Error::validation("num_layers must be positive"));
        }
        Ok(())
    }

    /// Apply `transfer.bandwidth_gbps`, `transfer.threshold_tokens`,
    /// `transfer.layerwise_constant_ms`, `transfer.num_layers` overrides.
    pub fn apply_overrides(&mut self, o: &TransferOverrides) {
        if let Some(g) = o.bandwidth_gbps {
            self.bandwidth = g * 1e9;
        }
        if let Some(t) = o.threshold_tokens {
            self.mode_threshold_tokens = t;
        }
        if let Some(c) = o.layerwise_constant_ms {
            self.layerwise_constant_ms = c;
        }
        if let Some(n) = o.num_layers {
            self.num_layers = n;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TransferOverrides {
    pub bandwidth_gbps: Option<f64>,
    pub threshold_tokens: Option<u32>,
    pub layerwise_constant_ms: Option<f64>,
    pub num_layers: Option<u32>,
}

impl TransferOverrides {
    pub fn from_config(cfg: &FlatConfig) -> Result<Self> {
        Ok(Self {
            bandwidth_gbps: cfg.get("transfer.bandwidth_gbps")?,
            threshold_tokens: cfg.get("transfer.threshold_tokens")?,
            layerwise_constant_ms: cfg.get("transfer.layerwise_constant_ms")?,
            num_layers: cfg.get("transfer.num_layers")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferPlan {
    pub mode: TransferMode,
    pub raw_time_ms: f64,
    /// Latency that lands between the first and second token.
    pub visible_latency_ms: f64,
    pub overlap_hidden_ms: f64,
}

/// Milliseconds to move `kv_bytes` over the link: `8000 * bytes / bps`.
pub fn raw_transfer_time(kv_bytes: u64, config: &TransferConfig) -> f64 {
    8000.0 * kv_bytes as f64 / config.bandwidth
}

pub fn select_mode(prompt_tokens: u32, config: &TransferConfig) -> TransferMode {
    if prompt_tokens < config.mode_threshold_tokens {
        TransferMode::Serialized
    } else {
        TransferMode::Layerwise
    }
}

/// Plan in an explicit mode. Layer-wise transfer can hide at most the
/// prompt compute of every layer but the last, and never drops below the
/// per-layer synchronization floor.
pub fn plan_with_mode(
    mode: TransferMode,
    kv_bytes: u64,
    prompt_compute_ms: f64,
    config: &TransferConfig,
) -> TransferPlan {
    let raw = raw_transfer_time(kv_bytes, config);
    let visible = match mode {
        TransferMode::Serialized => raw,
        TransferMode::Layerwise => {
            let window = prompt_compute_ms.max(0.0) * (1.0 - 1.0 / config.num_layers as f64);
            config.layerwise_constant_ms.max(raw - window)
        }
    };
    TransferPlan {
        mode,
        raw_time_ms: raw,
        visible_latency_ms: visible,
        overlap_hidden_ms: (raw - visible).max(0.0),
    }
}

pub fn plan_transfer(
    prompt_tokens: u32,
    kv_bytes: u64,
    prompt_compute_ms: f64,
    config: &TransferConfig,
) -> TransferPlan {
    plan_with_mode(select_mode(prompt_tokens, config), kv_bytes, prompt_compute_ms, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KV_1500: u64 = 3_932_160_000;

    #[test]
    fn raw_time_examples() {
        let h = TransferConfig::h100_class(80);
        assert_eq!(raw_transfer_time(0, &h), 0.0);
        // 8 * 3.93216e9 bits / 4e11 bit/s = 0.0786432 s
        assert!((raw_transfer_time(KV_1500, &h) - 78.6432).abs() < 1e-9);
        let mut half = h;
        half.bandwidth /= 2.0;
        assert!((raw_transfer_time(KV_1500, &half) - 2.0 * raw_transfer_time(KV_1500, &h)).abs() < 1e-9);
    }

    #[test]
    fn mode_threshold_boundary() {
        let h = TransferConfig::h100_class(80);
        assert_eq!(select_mode(511, &h), TransferMode::Serialized);
        assert_eq!(select_mode(512, &h), TransferMode::Layerwise);
        let zero = TransferConfig {
            mode_threshold_tokens: 0,
            ..h
        };
        assert_eq!(select_mode(1, &zero), TransferMode::Layerwise);
    }

    #[test]
    fn layerwise_hides_behind_prompt_compute() {
        let h = TransferConfig::h100_class(80);
        let p = plan_transfer(1500, KV_1500, 95.0, &h);
        assert_eq!(p.mode, TransferMode::Layerwise);
        // max(5, 78.6432 - 95 * 79/80) = 5
        assert_eq!(p.visible_latency_ms, 5.0);
        assert!((p.overlap_hidden_ms - (78.6432 - 5.0)).abs() < 1e-9);
    }

    #[test]
    fn serialized_is_fully_visible() {
        let h = TransferConfig::h100_class(80);
        // 20 ms worth of bytes at 400 Gb/s
        let bytes = 1_000_000_000;
        let p = plan_with_mode(TransferMode::Serialized, bytes, 50.0, &h);
        assert!((p.visible_latency_ms - 20.0).abs() < 1e-12);
        assert_eq!(p.overlap_hidden_ms, 0.0);
    }

    #[test]
    fn slow_link_layerwise_still_beats_serialized() {
        let slow = TransferConfig {
            bandwidth: 10e9,
            ..TransferConfig::h100_class(80)
        };
        let p = plan_with_mode(TransferMode::Layerwise, KV_1500, 95.0, &slow);
        assert!(p.visible_latency_ms < p.raw_time_ms);
        let expected = p.raw_time_ms - 95.0 * 79.0 / 80.0;
        assert!((p.visible_latency_ms - expected).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn plan_invariants(
            bytes in 0u64..50_000_000_000,
            compute in 0.0f64..2000.0,
            constant in 0.0f64..20.0,
            layers in 1u32..120,
            gbps in 1.0f64..800.0,
        ) {
            let cfg = TransferConfig { bandwidth: gbps * 1e9, mode_threshold_tokens: 512, layerwise_constant_ms: constant, num_layers: layers };
            let lw = plan_with_mode(TransferMode::Layerwise, bytes, compute, &cfg);
            let se = plan_with_mode(TransferMode::Serialized, bytes, compute, &cfg);
            prop_assert!(lw.visible_latency_ms >= constant);
            prop_assert_eq!(se.visible_latency_ms, se.raw_time_ms);
            prop_assert!(lw.overlap_hidden_ms >= 0.0);
            if lw.visible_latency_ms <= lw.raw_time_ms {
                prop_assert!((lw.overlap_hidden_ms - (lw.raw_time_ms - lw.visible_latency_ms)).abs() < 1e-9);
            }
            // layer-wise never worse unless the floor dominates a tiny transfer
            if constant <= se.raw_time_ms {
                prop_assert!(lw.visible_latency_ms <= se.visible_latency_ms);
            }
            let more = plan_with_mode(TransferMode::Layerwise, bytes + 1_000_000, compute, &cfg);
            prop_assert!(more.visible_latency_ms >= lw.visible_latency_ms);
        }
    }
}
