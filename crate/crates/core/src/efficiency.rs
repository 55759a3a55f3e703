//! Prefill FLOPs and KV-cache footprint of the language model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::budgeting::BudgetAllocation;
use crate::error::{Error, Result};

const MIB: f64 = (1u64 << 20) as f64;

fn default_kv_bytes() -> u64 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmProfile {
    pub name: String,
    /// Hidden dimension.
    pub d: u64,
    /// MLP intermediate dimension.
    pub m: u64,
    pub num_layers: u64,
    #[serde(default = "default_kv_bytes")]
    pub kv_bytes_per_element: u64,
}

impl LlmProfile {
    pub fn vicuna_7b() -> Self {
        Self {
            name: "vicuna-7b".into(),
            d: 4096,
            m: 11008,
            num_layers: 32,
            kv_bytes_per_element: 2,
        }
    }

    pub fn vicuna_13b() -> Self {
        Self {
            name: "vicuna-13b".into(),
            d: 5120,
            m: 13824,
            num_layers: 40,
            kv_bytes_per_element: 2,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "vicuna-7b" => Some(Self::vicuna_7b()),
            "vicuna-13b" => Some(Self::vicuna_13b()),
            _ => None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::InvalidProfile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// A built-in name, or else a path to a JSON profile.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::InvalidProfile(format!(
                "`{name_or_path}` is neither a built-in profile nor a file"
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{name_or_path}: {e}")))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.num_layers == 0 || self.kv_bytes_per_element == 0 {
            return Err(Error::InvalidProfile(format!("`{}` has a zero dimension", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub n_visual: u64,
    pub n_text: u64,
    pub tflops: f64,
    pub kv_cache_mib: f64,
    pub per_layer_flops: f64,
    pub profile: String,
}

/// Exact per-layer prefill FLOPs `8 T d^2 + 4 T^2 d + 6 T d m`.
pub fn per_layer_flops(tokens: u64, profile: &LlmProfile) -> u128 {
    let (t, d, m) = (u128::from(tokens), u128::from(profile.d), u128::from(profile.m));
    8 * t * d * d + 4 * t * t * d + 6 * t * d * m
}

/// Key and value caches across all layers, in bytes.
pub fn kv_cache_bytes(tokens: u64, profile: &LlmProfile) -> u128 {
    2 * u128::from(profile.num_layers)
        * u128::from(tokens)
        * u128::from(profile.d)
        * u128::from(profile.kv_bytes_per_element)
}

pub fn prefill_flops(n_visual: u64, n_text: u64, profile: &LlmProfile) -> EfficiencyReport {
    let tokens = n_visual + n_text;
    let layer = per_layer_flops(tokens, profile);
    EfficiencyReport {
        n_visual,
        n_text,
        tflops: (layer * u128::from(profile.num_layers)) as f64 / 1e12,
        kv_cache_mib: kv_cache_bytes(tokens, profile) as f64 / MIB,
        per_layer_flops: layer as f64,
        profile: profile.name.clone(),
    }
}

/// Cost after pruning; the visual count is the tokens the allocation
/// actually keeps (equal to `N_total` unless strict flooring stranded some).
pub fn pruned_flops(alloc: &BudgetAllocation, n_text: u64, profile: &LlmProfile) -> EfficiencyReport {
    prefill_flops(alloc.retained() as u64, n_text, profile)
}
