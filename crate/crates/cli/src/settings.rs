//! Config file loading, flag overrides and shared resolution helpers.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use splitsim_core::perfmodel::{parse_model_file, LlmPreset, PerfModelSet, DEFAULT_HCAP_PROMPT_FACTOR};
use splitsim_core::trace::Workload;
use splitsim_core::FlatConfig;

pub const SEED_ENV: &str = "SPLITSIM_SEED";

const KNOWN_KEYS: &[&str] = &[
    "cluster.design",
    "cluster.prompt_machines",
    "cluster.token_machines",
    "cluster.prompt_type",
    "cluster.token_type",
    "cls.queue_threshold_tokens",
    "cls.repurpose_window_s",
    "cls.repurpose_fraction",
    "cls.staleness_s",
    "mls.prompt_token_cap",
    "mls.max_preemptions",
    "mls.aging_rate",
    "mls.mixing_rule",
    "transfer.bandwidth_gbps",
    "transfer.threshold_tokens",
    "transfer.layerwise_constant_ms",
    "transfer.num_layers",
    "sim.horizon_extra_s",
    "sim.trim_s",
    "metrics.tbt_mode",
    "model.preset",
    "model.file",
    "model.hcap_prompt_factor",
    "trace.path",
    "trace.workload",
    "trace.rate",
    "trace.duration_s",
    "trace.seed",
    "provision.objective",
    "provision.power_budget",
    "provision.cost_budget",
    "provision.throughput",
    "provision.prompt_min",
    "provision.prompt_max",
    "provision.token_min",
    "provision.token_max",
    "provision.max_count",
    "provision.stride",
    "provision.trace_duration_s",
    "provision.seeds",
    "fit.profile",
    "fit.knots",
    "output.dir",
];

const DIST_KEYS: &[&str] = &[
    "kind", "mu", "median", "sigma", "weight2", "mu2", "median2", "sigma2", "value", "min", "max",
];

/// Keys that name files which must already exist.
const PATH_KEYS: &[&str] = &["trace.path", "model.file", "fit.profile"];

fn is_known(key: &str) -> bool {
    if KNOWN_KEYS.contains(&key) {
        return true;
    }
    if let Some((section, field)) = key.split_once('.') {
        match section {
            "prompt_dist" | "output_dist" => return DIST_KEYS.contains(&field),
            "slo" => {
                if let Some((metric, pct)) = field.split_once('_') {
                    return ["ttft", "tbt", "e2e"].contains(&metric) && ["p50", "p90", "p99"].contains(&pct);
                }
            }
            _ => {}
        }
    }
    false
}

/// A parsed config document plus the keys it was given.
pub struct Settings {
    pub cfg: FlatConfig,
    keys: Vec<String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let (cfg, keys) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let cfg = FlatConfig::parse(&text).with_context(|| format!("in config {}", p.display()))?;
                let keys = text
                    .lines()
                    .filter_map(|l| l.split('#').next())
                    .filter_map(|l| l.split_once('='))
                    .map(|(k, _)| k.trim().to_string())
                    .collect();
                (cfg, keys)
            }
            None => (FlatConfig::new(), Vec::new()),
        };
        let s = Self { cfg, keys };
        s.check_keys()?;
        Ok(s)
    }

    fn check_keys(&self) -> Result<()> {
        let unknown: Vec<&str> = self.keys.iter().map(String::as_str).filter(|k| !is_known(k)).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        Ok(())
    }

    /// Apply a flag value over the file; flags win.
    pub fn set<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.keys.push(key.to_string());
            self.cfg.set(key, v.to_string());
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.cfg.raw(key).map(PathBuf::from)
    }

    /// Called once all overrides are in: every referenced input path must exist.
    pub fn check_paths(&self) -> Result<()> {
        for key in PATH_KEYS {
            if let Some(p) = self.path(key) {
                if !p.exists() {
                    bail!("`{key}` points to {}, which does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    /// Flag, then config, then `SPLITSIM_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>, key: &str) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(s) = self.cfg.get::<u64>(key)? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got `{v}`")),
            Err(_) => Ok(0),
        }
    }

    pub fn perf_models(&self) -> Result<PerfModelSet> {
        if let Some(path) = self.path("model.file") {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading model {}", path.display()))?;
            return parse_model_file(&text).with_context(|| format!("in model file {}", path.display()));
        }
        let name = self.cfg.raw("model.preset").unwrap_or("llama2-70b");
        let factor = self
            .cfg
            .get_or("model.hcap_prompt_factor", DEFAULT_HCAP_PROMPT_FACTOR)?;
        Ok(LlmPreset::by_name(name)?.model_set(factor))
    }

    pub fn workload(&self, key: &str) -> Result<Workload> {
        let mut w = Workload::preset(self.cfg.raw(key).unwrap_or("coding"))?;
        w.apply_config(&self.cfg)?;
        Ok(w)
    }
}
