//! Anyres tiling geometry: target resolution choice, pad/resize plan, tile grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder input side in pixels.
pub const TILE_SIZE: u32 = 336;
/// Patch side in pixels (24 x 24 = 576 patches per region).
pub const PATCH_SIZE: u32 = 14;
pub const PATCHES_PER_SIDE: u32 = TILE_SIZE / PATCH_SIZE;
pub const PATCHES_PER_REGION: usize = (PATCHES_PER_SIDE * PATCHES_PER_SIDE) as usize;

/// Candidate target resolutions as (width, height), paired with their grids
/// as (cols, rows). Order is also the tie-break precedence.
pub const TARGETS: [((u32, u32), (u32, u32)); 5] = [
    ((336, 672), (1, 2)),
    ((672, 336), (2, 1)),
    ((672, 672), (2, 2)),
    ((1008, 336), (3, 1)),
    ((336, 1008), (1, 3)),
];

/// Axis-aligned rectangle, half-open: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const EMPTY: Rect = Rect {
        x0: 0.0,
        y0: 0.0,
        x1: 0.0,
        y1: 0.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0.0 || self.height() == 0.0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn clip(&self, w: f64, h: f64) -> Rect {
        let r = Rect::new(self.x0.max(0.0), self.y0.max(0.0), self.x1.min(w), self.y1.min(h));
        if r.is_empty() {
            Rect::EMPTY
        } else {
            r
        }
    }
}

/// Integer pixel rectangle in target space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub image_w: u32,
    pub image_h: u32,
    pub target_w: u32,
    pub target_h: u32,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub pad_left: u32,
    pub pad_right: u32,
    pub pad_top: u32,
    pub pad_bottom: u32,
    pub scale_x: f64,
    pub scale_y: f64,
    pub tile_size: u32,
    pub tile_rects: Vec<TileRect>,
}

impl TilingPlan {
    pub fn num_tiles(&self) -> usize {
        self.tile_rects.len()
    }

    pub fn padded_w(&self) -> u32 {
        self.image_w + self.pad_left + self.pad_right
    }

    pub fn padded_h(&self) -> u32 {
        self.image_h + self.pad_top + self.pad_bottom
    }
}

/// Choose the target resolution closest in log-aspect to the image, then
/// derive padding, resize factors and the row-major tile grid.
pub fn plan_tiling(image_w: u32, image_h: u32) -> TilingPlan {
    let image_w = image_w.max(1);
    let image_h = image_h.max(1);
    let log_aspect = (f64::from(image_w) / f64::from(image_h)).ln();
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, ((tw, th), _)) in TARGETS.iter().enumerate() {
        let dist = (log_aspect - (f64::from(*tw) / f64::from(*th)).ln()).abs();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    let ((target_w, target_h), (grid_cols, grid_rows)) = TARGETS[best];

    // Pad the relatively short axis so padded_w / padded_h == target_w / target_h
    // (rounded up to whole pixels).
    let (iw, ih) = (u64::from(image_w), u64::from(image_h));
    let (tw, th) = (u64::from(target_w), u64::from(target_h));
    let (mut pad_w, mut pad_h) = (0u32, 0u32);
    if iw * th > ih * tw {
        let padded_h = (iw * th).div_ceil(tw);
        pad_h = (padded_h - ih) as u32;
    } else if iw * th < ih * tw {
        let padded_w = (ih * tw).div_ceil(th);
        pad_w = (padded_w - iw) as u32;
    }
    let (pad_left, pad_right) = (pad_w / 2, pad_w - pad_w / 2);
    let (pad_top, pad_bottom) = (pad_h / 2, pad_h - pad_h / 2);

    let scale_x = f64::from(target_w) / f64::from(image_w + pad_w);
    let scale_y = f64::from(target_h) / f64::from(image_h + pad_h);

    let tile_rects = (0..grid_rows)
        .flat_map(|r| {
            (0..grid_cols).map(move |c| TileRect {
                x: c * TILE_SIZE,
                y: r * TILE_SIZE,
                w: TILE_SIZE,
                h: TILE_SIZE,
            })
        })
        .collect();

    TilingPlan {
        image_w,
        image_h,
        target_w,
        target_h,
        grid_cols,
        grid_rows,
        pad_left,
        pad_right,
        pad_top,
        pad_bottom,
        scale_x,
        scale_y,
        tile_size: TILE_SIZE,
        tile_rects,
    }
}

fn patch_offset(patch_index: usize) -> Result<(f64, f64)> {
    if patch_index >= PATCHES_PER_REGION {
        return Err(Error::IndexOutOfRange {
            index: patch_index,
            limit: PATCHES_PER_REGION,
        });
    }
    let side = PATCHES_PER_SIDE as usize;
    let (row, col) = (patch_index / side, patch_index % side);
    Ok(((col as u32 * PATCH_SIZE) as f64, (row as u32 * PATCH_SIZE) as f64))
}

/// Source-image rectangle covered by `patch_index` of tile `tile_index`.
///
/// Undoes the resize and the padding; patches in the padding band map to
/// [`Rect::EMPTY`].
pub fn map_patch_to_image(plan: &TilingPlan, tile_index: usize, patch_index: usize) -> Result<Rect> {
    let tile = plan.tile_rects.get(tile_index).ok_or(Error::IndexOutOfRange {
        index: tile_index,
        limit: plan.tile_rects.len(),
    })?;
    let (px, py) = patch_offset(patch_index)?;
    let tx0 = f64::from(tile.x) + px;
    let ty0 = f64::from(tile.y) + py;
    let p = f64::from(PATCH_SIZE);
    let to_src_x = |x: f64| x / plan.scale_x - f64::from(plan.pad_left);
    let to_src_y = |y: f64| y / plan.scale_y - f64::from(plan.pad_top);
    let r = Rect::new(to_src_x(tx0), to_src_y(ty0), to_src_x(tx0 + p), to_src_y(ty0 + p));
    Ok(r.clip(f64::from(plan.image_w), f64::from(plan.image_h)))
}

/// Source-image rectangle covered by a thumbnail patch. The thumbnail is the
/// whole image resized (without padding) to the encoder resolution.
pub fn map_thumbnail_patch(plan: &TilingPlan, patch_index: usize) -> Result<Rect> {
    let (px, py) = patch_offset(patch_index)?;
    let sx = f64::from(plan.image_w) / f64::from(TILE_SIZE);
    let sy = f64::from(plan.image_h) / f64::from(TILE_SIZE);
    let p = f64::from(PATCH_SIZE);
    Ok(Rect::new(px * sx, py * sy, (px + p) * sx, (py + p) * sy))
}
