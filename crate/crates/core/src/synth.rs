//! Seeded synthetic traces with planted two-stage attention structure, plus
//! an exhaustive top-k oracle.
//!
//! Randomness comes from SplitMix64, a counter-based 64-bit generator whose
//! output is fully specified by integer arithmetic, so traces reproduce
//! bit-for-bit across platforms. Float construction sticks to `+ - * /` and
//! `sqrt`, all correctly rounded under IEEE-754.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trace::{ImageTrace, RegionTrace};

/// Share of each row's mass (after the CLS self-attention slice) that lands
/// on the planted set.
pub const PLANTED_SHARE: f64 = 0.9;
/// Total patch mass per row; the rest is implicitly CLS self-attention.
pub const ROW_MASS: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }
}

fn default_d_vision() -> usize {
    64
}

fn default_d_clip() -> usize {
    32
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(rename = "K")]
    pub num_tiles: usize,
    #[serde(rename = "N")]
    pub n_patches: usize,
    pub num_layers: usize,
    /// Last layer (1-based) of the first attention stage.
    pub stage_boundary: usize,
    /// Planted primary patches, one set per tile, or a single set shared by all.
    pub planted_primary: Vec<Vec<usize>>,
    /// Planted shortcut patches, attended by every region in late layers.
    pub planted_shortcut: Vec<usize>,
    #[serde(default)]
    pub noise_scale: f64,
    /// Grid rows; defaults to a single row of `K` tiles.
    #[serde(default)]
    pub grid_rows: Option<usize>,
    #[serde(default = "default_d_vision")]
    pub d_vision: usize,
    #[serde(default = "default_d_clip")]
    pub d_clip: usize,
    /// Emit joint-space tile embeddings and an instruction embedding.
    #[serde(default = "default_true")]
    pub with_text: bool,
}

impl SynthSpec {
    pub fn new(
        seed: u64,
        num_tiles: usize,
        n_patches: usize,
        num_layers: usize,
        stage_boundary: usize,
        planted_primary: Vec<Vec<usize>>,
        planted_shortcut: Vec<usize>,
    ) -> Self {
        Self {
            seed,
            num_tiles,
            n_patches,
            num_layers,
            stage_boundary,
            planted_primary,
            planted_shortcut,
            noise_scale: 0.0,
            grid_rows: None,
            d_vision: default_d_vision(),
            d_clip: default_d_clip(),
            with_text: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_tiles == 0 || self.n_patches == 0 || self.d_vision == 0 || self.d_clip == 0 {
            return bad("K, N and embedding widths must be positive".into());
        }
        if self.num_layers < 2 {
            return bad(format!("need at least 2 layers, got {}", self.num_layers));
        }
        if self.stage_boundary == 0 || self.stage_boundary >= self.num_layers {
            return bad(format!(
                "stage boundary {} outside [1, {}]",
                self.stage_boundary,
                self.num_layers - 1
            ));
        }
        let rows = self.grid_rows.unwrap_or(1);
        if rows == 0 || !self.num_tiles.is_multiple_of(rows) {
            return bad(format!("{} tiles do not fill {rows} grid rows", self.num_tiles));
        }
        if self.planted_primary.len() != 1 && self.planted_primary.len() != self.num_tiles {
            return bad(format!(
                "planted_primary has {} sets for {} tiles",
                self.planted_primary.len(),
                self.num_tiles
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale {} must be finite and >= 0", self.noise_scale));
        }
        for set in self.planted_primary.iter().chain([&self.planted_shortcut]) {
            self.check_set(set)?;
        }
        Ok(())
    }

    fn check_set(&self, set: &[usize]) -> Result<()> {
        if set.is_empty() {
            return Err(Error::InvalidSpec("planted sets must be nonempty".into()));
        }
        if let Some(&bad) = set.iter().find(|&&i| i >= self.n_patches) {
            return Err(Error::InvalidSpec(format!(
                "planted index {bad} outside [0, {})",
                self.n_patches
            )));
        }
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSpec(format!("duplicate planted index in {set:?}")));
        }
        // planted entries must strictly outweigh the background
        let p = set.len() as f64;
        let rest = (self.n_patches - set.len()) as f64;
        if rest > 0.0 && PLANTED_SHARE / p <= (1.0 - PLANTED_SHARE) / rest {
            return Err(Error::InvalidSpec(format!(
                "planted set of {} patches is too large for N={}",
                set.len(),
                self.n_patches
            )));
        }
        Ok(())
    }

    pub fn primary_for(&self, tile: usize) -> &[usize] {
        if self.planted_primary.len() == 1 {
            &self.planted_primary[0]
        } else {
            &self.planted_primary[tile]
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// One attention row: `ROW_MASS * PLANTED_SHARE` spread over `planted`, the
/// rest over the background, each entry perturbed by up to `noise_scale`
/// (relative) before the two groups are renormalized to their shares.
fn attention_row(n: usize, planted: &[usize], noise: f64, rng: &mut SplitMix64) -> Vec<f32> {
    let mut in_set = vec![false; n];
    for &i in planted {
        in_set[i] = true;
    }
    let weights: Vec<f64> = (0..n)
        .map(|_| if noise > 0.0 { 1.0 + noise * rng.next_f64() } else { 1.0 })
        .collect();
    let (mut planted_sum, mut rest_sum) = (0.0, 0.0);
    for (w, &p) in weights.iter().zip(&in_set) {
        if p {
            planted_sum += w;
        } else {
            rest_sum += w;
        }
    }
    let planted_mass = ROW_MASS * PLANTED_SHARE;
    let rest_mass = ROW_MASS - planted_mass;
    weights
        .iter()
        .zip(&in_set)
        .map(|(w, &p)| {
            let v = if p {
                planted_mass * w / planted_sum
            } else {
                rest_mass * w / rest_sum
            };
            v as f32
        })
        .collect()
}

fn unit_vector(d: usize, rng: &mut SplitMix64) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

fn region(spec: &SynthSpec, primary: &[usize], with_clip: bool, rng: &mut SplitMix64) -> Result<RegionTrace> {
    let mut attn = Vec::with_capacity(spec.num_layers * spec.n_patches);
    for layer in 1..=spec.num_layers {
        let planted = if layer <= spec.stage_boundary {
            primary
        } else {
            &spec.planted_shortcut
        };
        attn.extend(attention_row(spec.n_patches, planted, spec.noise_scale, rng));
    }
    let cls_attn = Tensor::matrix(spec.num_layers, spec.n_patches, attn)?;
    let cls_embed = Tensor::vector(unit_vector(spec.d_vision, rng))?;
    let clip_embed = if with_clip {
        Some(Tensor::vector(unit_vector(spec.d_clip, rng))?)
    } else {
        None
    };
    Ok(RegionTrace::new(cls_attn, cls_embed, clip_embed))
}

/// Deterministic trace for `spec`. Early layers (up to the boundary) put
/// 81% of patch mass on each tile's primary set; later layers put it on the
/// shortcut set. The thumbnail uses tile 0's primary set.
pub fn generate(spec: &SynthSpec) -> Result<ImageTrace> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let tiles = (0..spec.num_tiles)
        .map(|i| region(spec, spec.primary_for(i), spec.with_text, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let thumbnail = region(spec, spec.primary_for(0), false, &mut rng)?;
    let text = if spec.with_text {
        Some(Tensor::vector(unit_vector(spec.d_clip, &mut rng))?)
    } else {
        None
    };
    let rows = spec.grid_rows.unwrap_or(1);
    ImageTrace::new(
        format!("synth-{}", spec.seed),
        rows,
        spec.num_tiles / rows,
        tiles,
        thumbnail,
        text,
    )
}

/// Exhaustive top-k: the max-sum subset of size `quota`, lexicographically
/// smallest among ties. Limited to 16 elements.
pub fn oracle_topk(scores: &[f64], quota: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    if n > 16 {
        return Err(Error::TooLarge(n));
    }
    if quota > n {
        return Err(Error::QuotaExceedsN { quota, n });
    }
    // Combinations are visited in lexicographic order, so a strict `>` keeps
    // the smallest maximizer.
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut combo: Vec<usize> = (0..quota).collect();
    loop {
        let sum: f64 = combo.iter().map(|&i| scores[i]).sum();
        if best.as_ref().is_none_or(|(b, _)| sum > *b) {
            best = Some((sum, combo.clone()));
        }
        // advance to the next combination
        let mut i = quota;
        loop {
            if i == 0 {
                return Ok(best.map(|(_, c)| c).unwrap_or_default());
            }
            i -= 1;
            if combo[i] < n - quota + i {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..quota {
            combo[j] = combo[j - 1] + 1;
        }
    }
}
