//! Tile importance from visual saliency and textual relevance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{cosine_similarity, softmax};
use crate::trace::ImageTrace;

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileScores {
    /// Raw cosine between each tile's CLS embedding and the thumbnail's.
    pub cls_sim: Vec<f64>,
    /// Raw joint-space cosine between each tile and the instruction.
    pub clip_score: Option<Vec<f64>>,
    pub s_v: Vec<f64>,
    pub s_t: Option<Vec<f64>>,
    pub s: Vec<f64>,
    /// Weight actually applied to `s_v`.
    pub alpha: f64,
    /// Weight that was requested, before any fallback.
    pub requested_alpha: f64,
    /// True when textual relevance was unavailable and `alpha` fell back to 1.
    pub alpha_fallback: bool,
}

/// Raw per-tile CLS similarity against the thumbnail.
pub fn cls_similarities(trace: &ImageTrace) -> Result<Vec<f64>> {
    let global = trace.thumbnail().cls_embed.data();
    trace
        .tiles()
        .iter()
        .map(|t| cosine_similarity(t.cls_embed.data(), global))
        .collect()
}

/// Raw per-tile joint-space similarity against the instruction embedding.
pub fn clip_scores(trace: &ImageTrace) -> Result<Vec<f64>> {
    let text = trace.text_embed().ok_or(Error::MissingTextEmbedding)?;
    trace
        .tiles()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let clip = t.clip_embed.as_ref().ok_or(Error::MissingClipEmbedding(i))?;
            cosine_similarity(clip.data(), text.data())
        })
        .collect()
}

/// `s_v`: softmax over tiles of CLS similarity to the thumbnail.
pub fn visual_saliency(trace: &ImageTrace) -> Result<Vec<f64>> {
    softmax(&cls_similarities(trace)?)
}

/// `s_t`: softmax over tiles of joint-space similarity to the instruction.
pub fn textual_relevance(trace: &ImageTrace) -> Result<Vec<f64>> {
    softmax(&clip_scores(trace)?)
}

/// Convex combination `alpha * s_v + (1 - alpha) * s_t`; without `s_t` the
/// result is `s_v`.
pub fn combine(s_v: &[f64], s_t: Option<&[f64]>, alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    match s_t {
        None => Ok(s_v.to_vec()),
        Some(s_t) if s_t.len() != s_v.len() => Err(Error::DimensionMismatch(format!(
            "s_v has {} tiles, s_t has {}",
            s_v.len(),
            s_t.len()
        ))),
        Some(s_t) => Ok(s_v
            .iter()
            .zip(s_t)
            .map(|(v, t)| alpha * v + (1.0 - alpha) * t)
            .collect()),
    }
}

/// Full scoring pass. Falls back to pure visual saliency when the trace has
/// no instruction embedding.
pub fn score_tiles(trace: &ImageTrace, alpha: f64) -> Result<TileScores> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let cls_sim = cls_similarities(trace)?;
    let s_v = softmax(&cls_sim)?;
    let textual = trace.text_embed().is_some() && trace.has_clip_embeddings();
    let (clip_score, s_t) = if textual {
        let raw = clip_scores(trace)?;
        let s_t = softmax(&raw)?;
        (Some(raw), Some(s_t))
    } else {
        (None, None)
    };
    let applied = if s_t.is_some() { alpha } else { 1.0 };
    let s = combine(&s_v, s_t.as_deref(), applied)?;
    Ok(TileScores {
        cls_sim,
        clip_score,
        s_v,
        s_t,
        s,
        alpha: applied,
        requested_alpha: alpha,
        alpha_fallback: !textual && alpha < 1.0,
    })
}
