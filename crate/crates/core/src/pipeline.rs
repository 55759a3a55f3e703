//! Per-trace prune pass: score → allocate → select → cost.

use serde::{Deserialize, Serialize};

use crate::budgeting::{allocate, effective_ratio, BudgetAllocation, RemainderPolicy};
use crate::efficiency::{prefill_flops, pruned_flops, EfficiencyReport, LlmProfile};
use crate::error::Result;
use crate::scoring::{score_tiles, TileScores, DEFAULT_ALPHA};
use crate::selection::{select_all, LayerSet, RetentionMask};
use crate::trace::ImageTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSettings {
    pub ratio: f64,
    pub alpha: f64,
    pub layers_low: LayerSet,
    pub layers_high: LayerSet,
    pub policy: RemainderPolicy,
    pub text_tokens: u64,
    pub profile: LlmProfile,
}

impl PruneSettings {
    pub fn new(ratio: f64) -> Self {
        Self {
            ratio,
            alpha: DEFAULT_ALPHA,
            layers_low: LayerSet::default_low(),
            layers_high: LayerSet::default_high(),
            policy: RemainderPolicy::Redistribute,
            text_tokens: 0,
            profile: LlmProfile::vicuna_7b(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    /// `tile/{i}` or `global`.
    pub region: String,
    pub quota: usize,
    pub kept_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPair {
    pub full: EfficiencyReport,
    pub pruned: EfficiencyReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub image_id: String,
    pub scores: TileScores,
    pub allocation: BudgetAllocation,
    pub masks: Vec<RetentionMask>,
    pub efficiency: EfficiencyPair,
}

impl PruneResult {
    pub fn effective_ratio(&self) -> f64 {
        effective_ratio(&self.allocation)
    }

    pub fn region_masks(&self) -> Vec<RegionMask> {
        let k = self.allocation.num_tiles;
        self.masks
            .iter()
            .enumerate()
            .map(|(i, m)| RegionMask {
                region: if i < k { format!("tile/{i}") } else { "global".into() },
                quota: m.num_kept(),
                kept_indices: m.kept_indices.clone(),
            })
            .collect()
    }

    /// Packed per-region bitmaps, tiles first then the thumbnail, each
    /// `ceil(N / 8)` bytes.
    pub fn mask_bitmaps(&self) -> Vec<u8> {
        self.masks.iter().flat_map(RetentionMask::to_bitmap).collect()
    }
}

pub fn prune_trace(trace: &ImageTrace, settings: &PruneSettings) -> Result<PruneResult> {
    let scores = score_tiles(trace, settings.alpha)?;
    let allocation = allocate(
        trace.num_tiles(),
        trace.num_patches(),
        settings.ratio,
        &scores.s,
        settings.policy,
    )?;
    let masks = select_all(trace, &allocation, &settings.layers_low, &settings.layers_high)?;
    let full = prefill_flops(trace.total_visual_tokens() as u64, settings.text_tokens, &settings.profile);
    let pruned = pruned_flops(&allocation, settings.text_tokens, &settings.profile);
    Ok(PruneResult {
        image_id: trace.image_id().to_string(),
        scores,
        allocation,
        masks,
        efficiency: EfficiencyPair { full, pruned },
    })
}
