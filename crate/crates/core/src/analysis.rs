//! Attention-dynamics studies: layerwise CLS-attention similarity, two-stage
//! boundary detection, and top-k attention vs. salient-object IoU.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::cosine_similarity;
use crate::selection::select_topk;
use crate::tiling::{map_thumbnail_patch, TilingPlan, PATCHES_PER_REGION};
use crate::trace::{ImageTrace, RegionTrace};

/// Which regions of each trace feed the similarity study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RegionSelector {
    #[default]
    Thumbnail,
    Tiles,
    All,
}

impl RegionSelector {
    fn regions<'a>(&self, trace: &'a ImageTrace) -> Vec<&'a RegionTrace> {
        match self {
            Self::Thumbnail => vec![trace.thumbnail()],
            Self::Tiles => trace.tiles().iter().collect(),
            Self::All => trace.tiles().iter().chain([trace.thumbnail()]).collect(),
        }
    }
}

/// Mean pairwise cosine similarity of CLS attention rows, `num_layers` square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSimilarityMatrix {
    pub num_layers: usize,
    /// Row-major entries; `(p, q)` is at `p * num_layers + q` (0-based).
    pub sims: Vec<f64>,
    pub num_regions: usize,
}

impl LayerSimilarityMatrix {
    /// Build from row-major entries.
    pub fn from_rows(num_layers: usize, sims: Vec<f64>) -> Result<Self> {
        if sims.len() != num_layers * num_layers {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {num_layers}x{num_layers} matrix",
                sims.len()
            )));
        }
        Ok(Self {
            num_layers,
            sims,
            num_regions: 0,
        })
    }

    /// Entry for 0-based layers `p`, `q`.
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.sims[p * self.num_layers + q]
    }

    /// `layer_p,layer_q,value` rows with 1-based layers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_p,layer_q,value\n");
        for p in 0..self.num_layers {
            for q in 0..self.num_layers {
                let _ = writeln!(out, "{},{},{:.6}", p + 1, q + 1, self.get(p, q));
            }
        }
        out
    }
}

pub fn layer_similarity(traces: &[ImageTrace], selector: RegionSelector) -> Result<LayerSimilarityMatrix> {
    let first = traces.first().ok_or(Error::EmptyCorpus)?;
    let layers = first.num_layers();
    if let Some(t) = traces.iter().find(|t| t.num_layers() != layers) {
        return Err(Error::DimensionMismatch(format!(
            "`{}` has {} layers, corpus has {layers}",
            t.image_id(),
            t.num_layers()
        )));
    }
    let mut sums = vec![0.0f64; layers * layers];
    let mut count = 0usize;
    for trace in traces {
        for region in selector.regions(trace) {
            for p in 0..layers {
                let row_p = region.cls_attn.row(p);
                for q in p..layers {
                    let c = cosine_similarity(row_p, region.cls_attn.row(q))?;
                    sums[p * layers + q] += c;
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut sims = vec![0.0f64; layers * layers];
    for p in 0..layers {
        for q in p..layers {
            let v = sums[p * layers + q] / count as f64;
            sims[p * layers + q] = v;
            sims[q * layers + p] = v;
        }
    }
    Ok(LayerSimilarityMatrix {
        num_layers: layers,
        sims,
        num_regions: count,
    })
}

/// Score of splitting into layers `1..=b` and `b+1..=L`: mean same-block
/// similarity minus mean cross-block similarity. Same-block pairs exclude the
/// diagonal unless no off-diagonal pair exists.
pub fn split_score(matrix: &LayerSimilarityMatrix, b: usize) -> f64 {
    let n = matrix.num_layers;
    let (mut within, mut n_within, mut cross, mut n_cross) = (0.0, 0usize, 0.0, 0usize);
    for p in 0..n {
        for q in 0..n {
            if p == q {
                continue;
            }
            if (p < b) == (q < b) {
                within += matrix.get(p, q);
                n_within += 1;
            } else {
                cross += matrix.get(p, q);
                n_cross += 1;
            }
        }
    }
    let within = if n_within == 0 {
        (0..n).map(|p| matrix.get(p, p)).sum::<f64>() / n as f64
    } else {
        within / n_within as f64
    };
    within - cross / n_cross as f64
}

/// Last layer (1-based) of the first stage: the `b` in `[1, L-1]` with the
/// highest [`split_score`], smallest `b` on ties.
pub fn detect_stages(matrix: &LayerSimilarityMatrix) -> usize {
    let n = matrix.num_layers;
    if n < 2 {
        return 1;
    }
    let mut best = 1;
    let mut best_score = split_score(matrix, 1);
    for b in 2..n {
        let s = split_score(matrix, b);
        if s > best_score {
            best = b;
            best_score = s;
        }
    }
    best
}

/// Binary salient-object mask over the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    /// Row-major, `true` = salient.
    pub bitmap: Vec<bool>,
}

impl SaliencyMask {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32, bitmap: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bitmap.len() != (width as usize) * (height as usize) {
            return Err(Error::InvalidMask(format!(
                "{width}x{height} mask with {} pixels",
                bitmap.len()
            )));
        }
        Ok(Self {
            image_id: image_id.into(),
            width,
            height,
            bitmap,
        })
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bitmap[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Parse an 8-bit PGM (`P5` binary or `P2` plain); nonzero is salient.
    pub fn from_pgm(image_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidMask(m.to_string());
        let mut pos = 0usize;
        let mut token = || -> Option<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token().ok_or_else(|| bad("empty file"))?;
        let mut num = |what: &str| -> Result<u32> {
            token()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad(&format!("bad {what}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit PGM is supported"));
        }
        let count = (width as usize) * (height as usize);
        let bitmap = match magic.as_str() {
            "P5" => {
                let data = &bytes[(pos + 1).min(bytes.len())..];
                if data.len() < count {
                    return Err(bad("truncated raster"));
                }
                data[..count].iter().map(|&v| v != 0).collect()
            }
            "P2" => (0..count)
                .map(|_| num("pixel").map(|v| v != 0))
                .collect::<Result<Vec<_>>>()?,
            other => return Err(bad(&format!("unsupported magic `{other}`"))),
        };
        Self::new(image_id, width, height, bitmap)
    }

    pub fn from_pgm_file(image_id: impl Into<String>, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_pgm(image_id, &bytes)
    }

    /// Binary `P5` encoding, 255 for salient pixels.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bitmap.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }
}

/// Fraction of source pixels (by pixel center) inside `mask` for a patch's
/// source rectangle. Patches smaller than a pixel sample their center.
fn salient_fraction(mask: &SaliencyMask, r: &crate::tiling::Rect) -> f64 {
    let x_lo = (r.x0 - 0.5).ceil().max(0.0) as u32;
    let x_hi = ((r.x1 - 0.5).ceil().max(0.0) as u32).min(mask.width);
    let y_lo = (r.y0 - 0.5).ceil().max(0.0) as u32;
    let y_hi = ((r.y1 - 0.5).ceil().max(0.0) as u32).min(mask.height);
    if x_lo >= x_hi || y_lo >= y_hi {
        let cx = (((r.x0 + r.x1) / 2.0) as u32).min(mask.width - 1);
        let cy = (((r.y0 + r.y1) / 2.0) as u32).min(mask.height - 1);
        return if mask.get(cx, cy) { 1.0 } else { 0.0 };
    }
    let mut hits = 0usize;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            hits += usize::from(mask.get(x, y));
        }
    }
    hits as f64 / ((x_hi - x_lo) as f64 * (y_hi - y_lo) as f64)
}

/// Thumbnail patches with more than half of their source pixels salient.
pub fn salient_patches(plan: &TilingPlan, mask: &SaliencyMask) -> Result<BTreeSet<usize>> {
    if (plan.image_w, plan.image_h) != (mask.width, mask.height) {
        return Err(Error::DimensionMismatch(format!(
            "plan is for {}x{}, mask is {}x{}",
            plan.image_w, plan.image_h, mask.width, mask.height
        )));
    }
    let mut out = BTreeSet::new();
    for p in 0..PATCHES_PER_REGION {
        if salient_fraction(mask, &map_thumbnail_patch(plan, p)?) > 0.5 {
            out.insert(p);
        }
    }
    Ok(out)
}

/// `|A ∩ B| / |A ∪ B|`; two empty sets count as identical.
pub fn iou(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// IoU between the top-`k` thumbnail patches at 1-based `layer` and the
/// salient patch set derived from `mask`.
pub fn saliency_iou(
    trace: &ImageTrace,
    plan: &TilingPlan,
    mask: &SaliencyMask,
    layer: usize,
    k: usize,
) -> Result<f64> {
    if trace.num_patches() != PATCHES_PER_REGION {
        return Err(Error::DimensionMismatch(format!(
            "thumbnail has {} patches, geometry expects {PATCHES_PER_REGION}",
            trace.num_patches()
        )));
    }
    let salient = salient_patches(plan, mask)?;
    let row: Vec<f64> = trace
        .thumbnail()
        .layer_row(layer)?
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let top: BTreeSet<usize> = select_topk(&row, k)?.kept_indices.into_iter().collect();
    Ok(iou(&top, &salient))
}

/// Mean IoU per layer over a corpus of `(trace, plan, mask)` triples.
pub fn iou_curve(
    items: &[(&ImageTrace, TilingPlan, SaliencyMask)],
    layers: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    layers
        .iter()
        .map(|&layer| {
            let total = items
                .iter()
                .map(|(t, plan, mask)| saliency_iou(t, plan, mask, layer, k))
                .sum::<Result<f64>>()?;
            Ok((layer, total / items.len() as f64))
        })
        .collect()
}

pub fn iou_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("layer,mean_iou\n");
    for (layer, v) in curve {
        let _ = writeln!(out, "{layer},{v:.6}");
    }
    out
}
