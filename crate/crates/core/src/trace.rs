//! Encoder-derived data for one image: per-region CLS attention and embeddings.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Slack allowed on CLS→patch row mass (CLS also attends to itself).
pub const ROW_SUM_SLACK: f64 = 1e-4;
/// Slack allowed on the norm of joint-space embeddings.
pub const UNIT_NORM_SLACK: f64 = 1e-3;

/// One encoded region (a local tile or the global thumbnail).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTrace {
    /// `[num_layers, N]` head-averaged CLS attention over patches.
    pub cls_attn: Tensor,
    /// `[D_v]` encoder CLS embedding.
    pub cls_embed: Tensor,
    /// `[D_clip]` unit-norm image embedding in the joint image–text space.
    pub clip_embed: Option<Tensor>,
}

impl RegionTrace {
    pub fn new(cls_attn: Tensor, cls_embed: Tensor, clip_embed: Option<Tensor>) -> Self {
        Self {
            cls_attn,
            cls_embed,
            clip_embed,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.cls_attn.dims()[0]
    }

    pub fn num_patches(&self) -> usize {
        self.cls_attn.dims()[1]
    }

    /// CLS attention row for a 1-based layer index.
    pub fn layer_row(&self, layer: usize) -> Result<&[f32]> {
        if layer == 0 || layer > self.num_layers() {
            return Err(Error::LayerOutOfRange {
                layer,
                num_layers: self.num_layers(),
            });
        }
        Ok(self.cls_attn.row(layer - 1))
    }

    fn validate(&self, prefix: &str, layers: usize, n: usize, d_v: usize) -> Result<()> {
        let attn_name = format!("{prefix}/cls_attn");
        if self.cls_attn.dims() != [layers, n] {
            return Err(Error::ShapeMismatch {
                tensor: attn_name,
                detail: format!("expected [{layers}, {n}], got {:?}", self.cls_attn.dims()),
            });
        }
        check_finite(&self.cls_attn, &attn_name)?;
        for (l, row) in self.cls_attn.rows().enumerate() {
            if let Some(j) = row.iter().position(|&v| v < 0.0) {
                return Err(Error::InvariantViolation {
                    tensor: attn_name,
                    detail: format!("negative attention at layer {}, patch {j}", l + 1),
                });
            }
            let mass: f64 = row.iter().map(|&v| f64::from(v)).sum();
            if mass > 1.0 + ROW_SUM_SLACK {
                return Err(Error::InvariantViolation {
                    tensor: attn_name,
                    detail: format!("layer {} row sums to {mass}", l + 1),
                });
            }
        }

        let embed_name = format!("{prefix}/cls_embed");
        if self.cls_embed.dims() != [d_v] {
            return Err(Error::ShapeMismatch {
                tensor: embed_name,
                detail: format!("expected [{d_v}], got {:?}", self.cls_embed.dims()),
            });
        }
        check_finite(&self.cls_embed, &embed_name)?;

        if let Some(clip) = &self.clip_embed {
            let clip_name = format!("{prefix}/clip_embed");
            if clip.dims().len() != 1 {
                return Err(Error::ShapeMismatch {
                    tensor: clip_name,
                    detail: format!("expected rank 1, got {:?}", clip.dims()),
                });
            }
            check_finite(clip, &clip_name)?;
            check_unit_norm(clip, &clip_name)?;
        }
        Ok(())
    }
}

/// All encoder outputs for one image: `K = grid_rows * grid_cols` tiles plus
/// the thumbnail, and optionally the instruction's text embedding.
///
/// Construction validates every invariant, so a value of this type is always
/// safe to feed to scoring and selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTrace {
    image_id: String,
    grid_rows: usize,
    grid_cols: usize,
    tiles: Vec<RegionTrace>,
    thumbnail: RegionTrace,
    text_embed: Option<Tensor>,
}

impl ImageTrace {
    pub fn new(
        image_id: impl Into<String>,
        grid_rows: usize,
        grid_cols: usize,
        tiles: Vec<RegionTrace>,
        thumbnail: RegionTrace,
        text_embed: Option<Tensor>,
    ) -> Result<Self> {
        let trace = Self {
            image_id: image_id.into(),
            grid_rows,
            grid_cols,
            tiles,
            thumbnail,
            text_embed,
        };
        trace.validate()?;
        Ok(trace)
    }

    fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::ShapeMismatch {
                tensor: "grid".into(),
                detail: format!("grid {}x{} is empty", self.grid_rows, self.grid_cols),
            });
        }
        if self.tiles.len() != self.grid_rows * self.grid_cols {
            return Err(Error::ShapeMismatch {
                tensor: "tile".into(),
                detail: format!(
                    "grid {}x{} needs {} tiles, got {}",
                    self.grid_rows,
                    self.grid_cols,
                    self.grid_rows * self.grid_cols,
                    self.tiles.len()
                ),
            });
        }
        if self.thumbnail.cls_attn.dims().len() != 2 {
            return Err(Error::ShapeMismatch {
                tensor: "global/cls_attn".into(),
                detail: format!("expected rank 2, got {:?}", self.thumbnail.cls_attn.dims()),
            });
        }
        let (layers, n) = (self.thumbnail.num_layers(), self.thumbnail.num_patches());
        let d_v = self.thumbnail.cls_embed.len();
        self.thumbnail.validate("global", layers, n, d_v)?;
        if self.thumbnail.clip_embed.is_some() {
            return Err(Error::InvariantViolation {
                tensor: "global/clip_embed".into(),
                detail: "the thumbnail carries no joint-space embedding".into(),
            });
        }
        for (i, tile) in self.tiles.iter().enumerate() {
            tile.validate(&format!("tile/{i}"), layers, n, d_v)?;
        }

        let with_clip = self.tiles.iter().filter(|t| t.clip_embed.is_some()).count();
        if with_clip != 0 && with_clip != self.tiles.len() {
            let missing = self.tiles.iter().position(|t| t.clip_embed.is_none()).unwrap();
            return Err(Error::InvariantViolation {
                tensor: format!("tile/{missing}/clip_embed"),
                detail: "either all tiles or none carry a joint-space embedding".into(),
            });
        }
        let clip_dim = self.tiles[0].clip_embed.as_ref().map(Tensor::len);
        if let Some(d) = clip_dim {
            for (i, tile) in self.tiles.iter().enumerate() {
                let got = tile.clip_embed.as_ref().map(Tensor::len).unwrap();
                if got != d {
                    return Err(Error::ShapeMismatch {
                        tensor: format!("tile/{i}/clip_embed"),
                        detail: format!("expected [{d}], got [{got}]"),
                    });
                }
            }
        }
        if let Some(text) = &self.text_embed {
            let name = "text/clip_embed";
            if text.dims().len() != 1 {
                return Err(Error::ShapeMismatch {
                    tensor: name.into(),
                    detail: format!("expected rank 1, got {:?}", text.dims()),
                });
            }
            if let Some(d) = clip_dim {
                if text.len() != d {
                    return Err(Error::ShapeMismatch {
                        tensor: name.into(),
                        detail: format!("expected [{d}], got [{}]", text.len()),
                    });
                }
            }
            check_finite(text, name)?;
            check_unit_norm(text, name)?;
        }
        Ok(())
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    /// Number of local tiles, `K`.
    pub fn num_tiles(&self) -> usize {
        self.tiles.len()
    }

    /// Patches per region, `N`.
    pub fn num_patches(&self) -> usize {
        self.thumbnail.num_patches()
    }

    pub fn num_layers(&self) -> usize {
        self.thumbnail.num_layers()
    }

    pub fn tiles(&self) -> &[RegionTrace] {
        &self.tiles
    }

    pub fn thumbnail(&self) -> &RegionTrace {
        &self.thumbnail
    }

    pub fn text_embed(&self) -> Option<&Tensor> {
        self.text_embed.as_ref()
    }

    pub fn has_clip_embeddings(&self) -> bool {
        self.tiles.iter().all(|t| t.clip_embed.is_some())
    }

    /// Total visual tokens before pruning, `(K + 1) * N`.
    pub fn total_visual_tokens(&self) -> usize {
        (self.num_tiles() + 1) * self.num_patches()
    }

    /// Copy with the text embedding replaced.
    pub fn with_text_embed(&self, text_embed: Option<Tensor>) -> Result<Self> {
        Self::new(
            self.image_id.clone(),
            self.grid_rows,
            self.grid_cols,
            self.tiles.clone(),
            self.thumbnail.clone(),
            text_embed,
        )
    }

    pub fn into_parts(self) -> (String, usize, usize, Vec<RegionTrace>, RegionTrace, Option<Tensor>) {
        (
            self.image_id,
            self.grid_rows,
            self.grid_cols,
            self.tiles,
            self.thumbnail,
            self.text_embed,
        )
    }
}

fn check_finite(t: &Tensor, name: &str) -> Result<()> {
    match t.first_non_finite() {
        Some(index) => Err(Error::NonFiniteValue {
            tensor: name.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

fn check_unit_norm(t: &Tensor, name: &str) -> Result<()> {
    let norm = t.l2_norm();
    if (norm - 1.0).abs() > UNIT_NORM_SLACK {
        return Err(Error::InvariantViolation {
            tensor: name.to_string(),
            detail: format!("expected unit norm, got {norm}"),
        });
    }
    Ok(())
}
