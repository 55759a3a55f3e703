//! Per-region token retention from layer-averaged CLS attention.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::budgeting::BudgetAllocation;
use crate::error::{Error, Result};
use crate::trace::{ImageTrace, RegionTrace};

/// Nonempty, strictly ascending set of 1-based encoder layer indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerSet(Vec<usize>);

impl LayerSet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidLayerSet("empty".into()));
        }
        if indices.contains(&0) {
            return Err(Error::InvalidLayerSet("layers are 1-based".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidLayerSet(format!("duplicate layer in {indices:?}")));
        }
        Ok(Self(indices))
    }

    /// Inclusive range `first..=last`.
    pub fn range(first: usize, last: usize) -> Result<Self> {
        if first > last {
            return Err(Error::InvalidLayerSet(format!("{first}..{last} is empty")));
        }
        Self::new((first..=last).collect())
    }

    /// Low-to-middle layers used for local tiles.
    pub fn default_low() -> Self {
        Self((6..=10).collect())
    }

    /// Middle-to-high layers used for the thumbnail.
    pub fn default_high() -> Self {
        Self(vec![22])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn check(&self, num_layers: usize) -> Result<()> {
        match self.0.iter().find(|&&l| l > num_layers) {
            Some(&layer) => Err(Error::LayerOutOfRange { layer, num_layers }),
            None => Ok(()),
        }
    }
}

/// Parses `a..b` (inclusive), `a,b,c`, or a mix such as `1..3,7`.
impl FromStr for LayerSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidLayerSet(format!("cannot parse `{s}`"));
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if let Some((a, b)) = part.split_once("..") {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            } else {
                out.push(part.parse().map_err(|_| bad())?);
            }
        }
        Self::new(out)
    }
}

impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl Serialize for LayerSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LayerSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            List(Vec<usize>),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::List(v) => LayerSet::new(v),
            Repr::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionMask {
    pub keep: Vec<bool>,
    pub kept_indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RetentionMask {
    pub fn num_kept(&self) -> usize {
        self.kept_indices.len()
    }

    /// Packed bitmap, LSB-first within each byte, `ceil(N / 8)` bytes.
    pub fn to_bitmap(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.keep.len().div_ceil(8)];
        for &i in &self.kept_indices {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_bitmap(bits: &[u8], n: usize) -> Vec<bool> {
        (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect()
    }
}

/// Mean CLS attention over the given 1-based layers, accumulated in `f64`.
pub fn aggregate_attention(region: &RegionTrace, layers: &LayerSet) -> Result<Vec<f64>> {
    layers.check(region.num_layers())?;
    let mut acc = vec![0.0f64; region.num_patches()];
    for &l in layers.indices() {
        for (a, &v) in acc.iter_mut().zip(region.layer_row(l)?) {
            *a += f64::from(v);
        }
    }
    let count = layers.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(acc)
}

/// Keep the `quota` highest scores, ties to the lower index; indices come
/// back in ascending (spatial) order.
pub fn select_topk(scores: &[f64], quota: usize) -> Result<RetentionMask> {
    let n = scores.len();
    if quota > n {
        return Err(Error::QuotaExceedsN { quota, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if quota < n {
        let by_rank = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
        if quota > 0 {
            order.select_nth_unstable_by(quota - 1, by_rank);
        }
        order.truncate(quota);
    }
    order.sort_unstable();
    let mut keep = vec![false; n];
    for &i in &order {
        keep[i] = true;
    }
    Ok(RetentionMask {
        keep,
        kept_indices: order,
        scores: scores.to_vec(),
    })
}

/// Masks for every tile (aggregated over `low`, quota `per_tile[i]`) followed
/// by the thumbnail (aggregated over `high`, quota `N_global`).
pub fn select_all(
    trace: &ImageTrace,
    alloc: &BudgetAllocation,
    low: &LayerSet,
    high: &LayerSet,
) -> Result<Vec<RetentionMask>> {
    if alloc.num_tiles != trace.num_tiles() || alloc.n_patches != trace.num_patches() {
        return Err(Error::DimensionMismatch(format!(
            "allocation is for K={}, N={} but trace has K={}, N={}",
            alloc.num_tiles,
            alloc.n_patches,
            trace.num_tiles(),
            trace.num_patches()
        )));
    }
    low.check(trace.num_layers())?;
    high.check(trace.num_layers())?;
    let mut masks = Vec::with_capacity(trace.num_tiles() + 1);
    for (tile, &quota) in trace.tiles().iter().zip(&alloc.per_tile) {
        masks.push(select_topk(&aggregate_attention(tile, low)?, quota)?);
    }
    let global = aggregate_attention(trace.thumbnail(), high)?;
    masks.push(select_topk(&global, alloc.n_global)?);
    Ok(masks)
}
