//! Retention ratio → global and per-tile token quotas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accepted deviation of the tile scores from the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-4;

/// What happens to tokens stranded by flooring the per-tile shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemainderPolicy {
    /// Hand stranded tokens out by largest fractional share.
    #[default]
    Redistribute,
    /// Plain floors; up to `K - 1` tokens of the local budget go unused.
    StrictFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    #[serde(rename = "R")]
    pub ratio: f64,
    #[serde(rename = "N")]
    pub n_patches: usize,
    #[serde(rename = "K")]
    pub num_tiles: usize,
    #[serde(rename = "N_total")]
    pub n_total: usize,
    #[serde(rename = "N_global")]
    pub n_global: usize,
    #[serde(rename = "N_local")]
    pub n_local: usize,
    pub per_tile: Vec<usize>,
    pub policy: RemainderPolicy,
}

impl BudgetAllocation {
    /// Tokens actually kept: thumbnail quota plus all tile quotas.
    pub fn retained(&self) -> usize {
        self.n_global + self.per_tile.iter().sum::<usize>()
    }
}

/// `floor(x)` that treats values within 1e-9 below an integer as that
/// integer, so ratios like 0.3 do not lose a token to binary rounding.
fn floor_tokens(x: f64) -> usize {
    (x + 1e-9).floor() as usize
}

pub fn total_budget(num_tiles: usize, n_patches: usize, ratio: f64) -> usize {
    floor_tokens((num_tiles + 1) as f64 * n_patches as f64 * ratio)
}

pub fn global_budget(n_patches: usize, ratio: f64) -> usize {
    floor_tokens(n_patches as f64 * ratio)
}

/// Split the budget `floor((K+1) N R)`: `floor(N R)` to the thumbnail, the rest
/// across tiles as `floor(N_local * s_i)`.
///
/// With [`RemainderPolicy::Redistribute`] the floor remainder goes one token
/// at a time to tiles in decreasing order of fractional share (ties to the
/// lower index). Quotas are capped at `N`; capped overflow fills the
/// remaining tiles in decreasing score order.
pub fn allocate(
    num_tiles: usize,
    n_patches: usize,
    ratio: f64,
    scores: &[f64],
    policy: RemainderPolicy,
) -> Result<BudgetAllocation> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::RatioOutOfRange(ratio));
    }
    if num_tiles == 0 || n_patches == 0 {
        return Err(Error::EmptyInput);
    }
    if scores.len() != num_tiles {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {num_tiles} tiles",
            scores.len()
        )));
    }
    let sum: f64 = scores.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOLERANCE || scores.iter().any(|&s| s < 0.0) {
        return Err(Error::ScoresNotNormalized(sum));
    }

    let n_total = total_budget(num_tiles, n_patches, ratio);
    let n_global = global_budget(n_patches, ratio).min(n_patches);
    let n_local = n_total - n_global;

    let shares: Vec<f64> = scores.iter().map(|s| n_local as f64 * s / sum).collect();
    let mut per_tile: Vec<usize> = shares.iter().map(|x| x.floor() as usize).collect();
    let floored: usize = per_tile.iter().sum();
    let mut remainder = n_local.saturating_sub(floored);

    let mut overflow = 0usize;
    for q in per_tile.iter_mut() {
        if *q > n_patches {
            overflow += *q - n_patches;
            *q = n_patches;
        }
    }

    if policy == RemainderPolicy::Redistribute {
        let mut by_fraction: Vec<usize> = (0..num_tiles).collect();
        by_fraction.sort_by(|&a, &b| {
            let fa = shares[a] - shares[a].floor();
            let fb = shares[b] - shares[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in &by_fraction {
            if remainder == 0 {
                break;
            }
            if per_tile[i] < n_patches {
                per_tile[i] += 1;
                remainder -= 1;
            }
        }
        overflow += remainder;
    }

    // Capacity K * N always covers N_local, so overflow is fully placed.
    if overflow > 0 {
        let mut by_score: Vec<usize> = (0..num_tiles).collect();
        by_score.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for &i in &by_score {
            let take = (n_patches - per_tile[i]).min(overflow);
            per_tile[i] += take;
            overflow -= take;
            if overflow == 0 {
                break;
            }
        }
    }

    Ok(BudgetAllocation {
        ratio,
        n_patches,
        num_tiles,
        n_total,
        n_global,
        n_local,
        per_tile,
        policy,
    })
}

/// `N_total / ((K + 1) N)`.
pub fn effective_ratio(alloc: &BudgetAllocation) -> f64 {
    alloc.n_total as f64 / ((alloc.num_tiles + 1) * alloc.n_patches) as f64
}
