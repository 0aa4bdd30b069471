//! Multi-crop tiling of an image into overlapping square crops.
//!
//! An image is scaled into a grid of `crop_size_px` squares that overlap by
//! `overlap_margin_patches` patches. Each crop is encoded separately, then the
//! overlapping patch features are trimmed so the kept patches of all crops
//! tile the grid exactly. After pooling, the kept lattice is emitted
//! row-major with row-end markers, preceded by a low-resolution overview
//! crop of the whole image.
//!
//! All geometry here is exact integer/rational arithmetic; nothing touches
//! pixel data.

use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("invalid layout config: {0}")]
    Config(String),
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("layout invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, LayoutError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub crop_size_px: u32,
    pub patch_size_px: u32,
    pub overlap_margin_patches: u32,
    pub pool_window: u32,
    pub max_crops: u32,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            crop_size_px: 336,
            patch_size_px: 14,
            overlap_margin_patches: 4,
            pool_window: 2,
            max_crops: 12,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(LayoutError::Config(msg));
        if self.crop_size_px == 0 {
            return err("crop_size_px must be positive".into());
        }
        if self.patch_size_px == 0 {
            return err("patch_size_px must be positive".into());
        }
        if self.pool_window == 0 {
            return err("pool_window must be positive".into());
        }
        if self.max_crops == 0 {
            return err("max_crops must be positive".into());
        }
        if self.crop_size_px % self.patch_size_px != 0 {
            return err(format!(
                "crop_size_px ({}) must be divisible by patch_size_px ({})",
                self.crop_size_px, self.patch_size_px
            ));
        }
        let pps = self.patches_per_side();
        if pps % self.pool_window != 0 {
            return err(format!(
                "patches per side ({pps}) must be divisible by pool_window ({})",
                self.pool_window
            ));
        }
        if self.overlap_margin_patches % 2 != 0 {
            return err(format!(
                "overlap_margin_patches ({}) must be even",
                self.overlap_margin_patches
            ));
        }
        if self.overlap_margin_patches >= pps {
            return err(format!(
                "overlap_margin_patches ({}) must be smaller than patches per side ({pps})",
                self.overlap_margin_patches
            ));
        }
        // Each neighbour trims half the margin; that half must keep kept windows poolable.
        if (self.overlap_margin_patches / 2) % self.pool_window != 0 {
            return err(format!(
                "half the overlap margin ({}) must be divisible by pool_window ({})",
                self.overlap_margin_patches / 2,
                self.pool_window
            ));
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> u32 {
        self.crop_size_px / self.patch_size_px
    }

    pub fn overlap_px(&self) -> u32 {
        self.overlap_margin_patches * self.patch_size_px
    }

    /// Distance in pixels between the origins of adjacent crops.
    pub fn crop_stride_px(&self) -> u32 {
        self.crop_size_px - self.overlap_px()
    }

    /// Pooled tokens produced by one crop before overlap trimming.
    pub fn pooled_tokens_per_crop(&self) -> u32 {
        let side = self.patches_per_side() / self.pool_window;
        side * side
    }

    /// Pixel extent of `n` crops laid side by side with overlap.
    pub fn grid_extent_px(&self, n: u32) -> u32 {
        n * self.crop_size_px - (n - 1) * self.overlap_px()
    }
}

/// Exact non-negative rational, used for resize factors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "zero denominator");
        Self { num, den }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_at_least_one(self) -> bool {
        self.num >= self.den
    }

    /// `round(value * self)`, half away from zero.
    pub fn scale_round(self, value: u64) -> u64 {
        let n = value as u128 * self.num as u128;
        let d = self.den as u128;
        ((2 * n + d) / (2 * d)) as u64
    }

    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ratio {}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridChoice {
    pub rows: u32,
    pub cols: u32,
    pub scale: Ratio,
}

impl GridChoice {
    pub fn crops(&self) -> u32 {
        self.rows * self.cols
    }
}

/// Picks the crop grid for an image.
///
/// Among grids with `rows * cols <= max_crops`, prefers the one needing the
/// least up-scaling; if no grid can hold the image without down-scaling,
/// the one needing the least down-scaling. Ties go to fewer crops, then the
/// smaller grid area, then fewer rows.
pub fn select_grid(image_w: u32, image_h: u32, config: &LayoutConfig) -> Result<GridChoice> {
    config.validate()?;
    if image_w == 0 || image_h == 0 {
        return Err(LayoutError::EmptyImage {
            width: image_w,
            height: image_h,
        });
    }

    let mut best: Option<(GridChoice, u64)> = None;
    for rows in 1..=config.max_crops {
        for cols in 1..=config.max_crops / rows {
            let grid_w = config.grid_extent_px(cols) as u64;
            let grid_h = config.grid_extent_px(rows) as u64;
            let scale =
                Ratio::new(grid_w, image_w as u64).min(Ratio::new(grid_h, image_h as u64));
            let candidate = (GridChoice { rows, cols, scale }, grid_w * grid_h);
            best = match best {
                None => Some(candidate),
                Some(current) if prefer(&candidate, &current) => Some(candidate),
                keep => keep,
            };
        }
    }
    Ok(best.expect("max_crops >= 1 yields at least one grid").0)
}

fn prefer(a: &(GridChoice, u64), b: &(GridChoice, u64)) -> bool {
    let (ga, area_a) = a;
    let (gb, area_b) = b;
    let scale_order = match (ga.scale.is_at_least_one(), gb.scale.is_at_least_one()) {
        (true, false) => return true,
        (false, true) => return false,
        (true, true) => ga.scale.cmp(&gb.scale),
        (false, false) => gb.scale.cmp(&ga.scale),
    };
    scale_order
        .then(ga.crops().cmp(&gb.crops()))
        .then(area_a.cmp(area_b))
        .then(ga.rows.cmp(&gb.rows))
        == Ordering::Less
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingClass {
    /// Patch lies entirely inside the scaled image.
    Image,
    /// Patch straddles the image border.
    Partial,
    /// Patch is all padding.
    Padding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRange {
    pub start: u32,
    pub end: u32,
}

impl PatchRange {
    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn as_range(&self) -> Range<u32> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub index: u32,
    pub grid_row: u32,
    pub grid_col: u32,
    /// Pixel offset of the crop's top-left corner in the padded grid.
    pub origin_x: u32,
    pub origin_y: u32,
    /// Patch rows/cols of this crop retained after overlap trimming (crop-local).
    pub kept_rows: PatchRange,
    pub kept_cols: PatchRange,
    /// Offset of this crop's patch (0, 0) in the global patch lattice.
    pub global_patch_row: u32,
    pub global_patch_col: u32,
    /// Row-major, `patches_per_side`² entries.
    pub padding_class: Vec<PaddingClass>,
}

impl Crop {
    pub fn class_at(&self, patches_per_side: u32, row: u32, col: u32) -> PaddingClass {
        self.padding_class[(row * patches_per_side + col) as usize]
    }
}

/// Resize-and-pad plan for the single low-resolution overview crop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowResLayout {
    pub scale: Ratio,
    pub scaled_w: u32,
    pub scaled_h: u32,
    pub pad_left: u32,
    pub pad_top: u32,
    pub pad_right: u32,
    pub pad_bottom: u32,
    pub padding_class: Vec<PaddingClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropLayout {
    pub image_w: u32,
    pub image_h: u32,
    pub config: LayoutConfig,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub scale: f64,
    pub scale_exact: Ratio,
    pub grid_w: u32,
    pub grid_h: u32,
    pub scaled_w: u32,
    pub scaled_h: u32,
    pub pad_left: u32,
    pub pad_top: u32,
    pub pad_right: u32,
    pub pad_bottom: u32,
    /// Crops in row-major grid order.
    pub crops: Vec<Crop>,
    pub low_res: LowResLayout,
}

impl CropLayout {
    /// Rows and columns of the global patch lattice covered by kept windows.
    pub fn global_patch_dims(&self) -> (u32, u32) {
        let pps = self.config.patches_per_side();
        let m = self.config.overlap_margin_patches;
        (
            self.grid_rows * pps - (self.grid_rows - 1) * m,
            self.grid_cols * pps - (self.grid_cols - 1) * m,
        )
    }

    pub fn crop(&self, grid_row: u32, grid_col: u32) -> &Crop {
        &self.crops[(grid_row * self.grid_cols + grid_col) as usize]
    }
}

/// Split `total` into (low, high) halves, low getting the smaller half.
fn split_padding(total: u32) -> (u32, u32) {
    (total / 2, total - total / 2)
}

fn classify_patches(
    origin: (u32, u32),
    pps: u32,
    patch: u32,
    image_rect: (u32, u32, u32, u32),
) -> Vec<PaddingClass> {
    let (ix0, iy0, ix1, iy1) = image_rect;
    let mut classes = Vec::with_capacity((pps * pps) as usize);
    for row in 0..pps {
        let y0 = origin.1 + row * patch;
        let y1 = y0 + patch;
        let overlap_h = y1.min(iy1).saturating_sub(y0.max(iy0));
        for col in 0..pps {
            let x0 = origin.0 + col * patch;
            let x1 = x0 + patch;
            let overlap_w = x1.min(ix1).saturating_sub(x0.max(ix0));
            let area = overlap_w as u64 * overlap_h as u64;
            classes.push(if area == 0 {
                PaddingClass::Padding
            } else if area == patch as u64 * patch as u64 {
                PaddingClass::Image
            } else {
                PaddingClass::Partial
            });
        }
    }
    classes
}

fn low_res_layout(image_w: u32, image_h: u32, config: &LayoutConfig) -> LowResLayout {
    let crop = config.crop_size_px as u64;
    let scale = Ratio::new(crop, image_w as u64).min(Ratio::new(crop, image_h as u64));
    let scaled_w = (scale.scale_round(image_w as u64) as u32).clamp(1, config.crop_size_px);
    let scaled_h = (scale.scale_round(image_h as u64) as u32).clamp(1, config.crop_size_px);
    let (pad_left, pad_right) = split_padding(config.crop_size_px - scaled_w);
    let (pad_top, pad_bottom) = split_padding(config.crop_size_px - scaled_h);
    let padding_class = classify_patches(
        (0, 0),
        config.patches_per_side(),
        config.patch_size_px,
        (pad_left, pad_top, pad_left + scaled_w, pad_top + scaled_h),
    );
    LowResLayout {
        scale,
        scaled_w,
        scaled_h,
        pad_left,
        pad_top,
        pad_right,
        pad_bottom,
        padding_class,
    }
}

/// Kept patch range along one axis for the crop at `index` of `count`.
fn kept_range(index: u32, count: u32, pps: u32, half_margin: u32) -> PatchRange {
    PatchRange {
        start: if index > 0 { half_margin } else { 0 },
        end: if index + 1 < count { pps - half_margin } else { pps },
    }
}

pub fn build_crop_layout(image_w: u32, image_h: u32, config: &LayoutConfig) -> Result<CropLayout> {
    let choice = select_grid(image_w, image_h, config)?;
    let grid_w = config.grid_extent_px(choice.cols);
    let grid_h = config.grid_extent_px(choice.rows);
    let scaled_w = (choice.scale.scale_round(image_w as u64) as u32).clamp(1, grid_w);
    let scaled_h = (choice.scale.scale_round(image_h as u64) as u32).clamp(1, grid_h);
    let (pad_left, pad_right) = split_padding(grid_w - scaled_w);
    let (pad_top, pad_bottom) = split_padding(grid_h - scaled_h);
    let image_rect = (pad_left, pad_top, pad_left + scaled_w, pad_top + scaled_h);

    let pps = config.patches_per_side();
    let half_margin = config.overlap_margin_patches / 2;
    let patch_stride = pps - config.overlap_margin_patches;
    let stride_px = config.crop_stride_px();

    let mut crops = Vec::with_capacity(choice.crops() as usize);
    for grid_row in 0..choice.rows {
        for grid_col in 0..choice.cols {
            let origin = (grid_col * stride_px, grid_row * stride_px);
            crops.push(Crop {
                index: grid_row * choice.cols + grid_col,
                grid_row,
                grid_col,
                origin_x: origin.0,
                origin_y: origin.1,
                kept_rows: kept_range(grid_row, choice.rows, pps, half_margin),
                kept_cols: kept_range(grid_col, choice.cols, pps, half_margin),
                global_patch_row: grid_row * patch_stride,
                global_patch_col: grid_col * patch_stride,
                padding_class: classify_patches(origin, pps, config.patch_size_px, image_rect),
            });
        }
    }

    Ok(CropLayout {
        image_w,
        image_h,
        config: *config,
        grid_rows: choice.rows,
        grid_cols: choice.cols,
        scale: choice.scale.to_f64(),
        scale_exact: choice.scale,
        grid_w,
        grid_h,
        scaled_w,
        scaled_h,
        pad_left,
        pad_top,
        pad_right,
        pad_bottom,
        crops,
        low_res: low_res_layout(image_w, image_h, config),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisionToken {
    ImgStart,
    ImgEnd,
    RowEnd,
    LowResPatch { row: u32, col: u32 },
    /// `row`/`col` are pooled coordinates local to the crop.
    HighResPatch { crop: u32, row: u32, col: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenCounts {
    /// Every token in the sequence, special tokens included.
    pub total: u32,
    pub low_res_pooled: u32,
    pub high_res_pooled: u32,
    pub low_res_row_ends: u32,
    pub high_res_row_ends: u32,
    pub high_res_pooled_rows: u32,
    pub high_res_pooled_cols: u32,
    /// Pooled tokens from a crop before overlap trimming.
    pub pooled_per_untrimmed_crop: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub tokens: Vec<VisionToken>,
    pub counts: TokenCounts,
    /// Pooled tokens each crop contributes after trimming, crop-major.
    pub pooled_per_crop_kept: Vec<u32>,
}

pub fn build_token_layout(layout: &CropLayout) -> Result<TokenLayout> {
    let config = &layout.config;
    let pool = config.pool_window;
    let pps = config.patches_per_side();
    let low_side = pps / pool;
    let mut tokens = Vec::new();
    let mut counts = TokenCounts {
        pooled_per_untrimmed_crop: config.pooled_tokens_per_crop(),
        ..Default::default()
    };

    for crop in &layout.crops {
        for range in [&crop.kept_rows, &crop.kept_cols] {
            if range.start % pool != 0 || range.len() % pool != 0 {
                return Err(LayoutError::Invariant(format!(
                    "crop {} kept window {}..{} is not divisible by pool_window {pool}",
                    crop.index, range.start, range.end
                )));
            }
        }
    }

    tokens.push(VisionToken::ImgStart);
    for row in 0..low_side {
        for col in 0..low_side {
            tokens.push(VisionToken::LowResPatch { row, col });
        }
        tokens.push(VisionToken::RowEnd);
    }
    tokens.push(VisionToken::ImgEnd);
    counts.low_res_pooled = low_side * low_side;
    counts.low_res_row_ends = low_side;

    let (global_rows, global_cols) = layout.global_patch_dims();
    if global_rows % pool != 0 || global_cols % pool != 0 {
        return Err(LayoutError::Invariant(format!(
            "global patch lattice {global_rows}x{global_cols} is not divisible by pool_window {pool}"
        )));
    }
    let pooled_rows = global_rows / pool;
    let pooled_cols = global_cols / pool;

    let row_owner = ownership(layout, pooled_rows, pool, layout.grid_rows, |c| {
        (c.grid_row, c.global_patch_row, &c.kept_rows)
    })?;
    let col_owner = ownership(layout, pooled_cols, pool, layout.grid_cols, |c| {
        (c.grid_col, c.global_patch_col, &c.kept_cols)
    })?;

    tokens.push(VisionToken::ImgStart);
    for &(grid_row, local_row) in &row_owner {
        for &(grid_col, local_col) in &col_owner {
            let crop = layout.crop(grid_row, grid_col);
            tokens.push(VisionToken::HighResPatch {
                crop: crop.index,
                row: local_row,
                col: local_col,
            });
        }
        tokens.push(VisionToken::RowEnd);
    }
    tokens.push(VisionToken::ImgEnd);

    counts.high_res_pooled = pooled_rows * pooled_cols;
    counts.high_res_row_ends = pooled_rows;
    counts.high_res_pooled_rows = pooled_rows;
    counts.high_res_pooled_cols = pooled_cols;
    counts.total = tokens.len() as u32;

    let pooled_per_crop_kept = layout
        .crops
        .iter()
        .map(|c| (c.kept_rows.len() / pool) * (c.kept_cols.len() / pool))
        .collect();

    Ok(TokenLayout {
        tokens,
        counts,
        pooled_per_crop_kept,
    })
}

/// For each pooled index along one axis, the owning grid index and the
/// pooled coordinate local to that crop.
fn ownership<'a, F>(
    layout: &'a CropLayout,
    pooled_len: u32,
    pool: u32,
    grid_len: u32,
    axis: F,
) -> Result<Vec<(u32, u32)>>
where
    F: Fn(&'a Crop) -> (u32, u32, &'a PatchRange),
{
    let mut owners = Vec::with_capacity(pooled_len as usize);
    // Crops along the first row/col suffice: ranges are identical across the other axis.
    let line: Vec<(u32, u32, &PatchRange)> = layout
        .crops
        .iter()
        .map(&axis)
        .fold(Vec::new(), |mut acc, entry| {
            if !acc.iter().any(|(g, _, _)| *g == entry.0) {
                acc.push(entry);
            }
            acc
        });
    debug_assert_eq!(line.len() as u32, grid_len);
    for pooled in 0..pooled_len {
        let patch = pooled * pool;
        let owner = line.iter().find(|(_, offset, kept)| {
            patch >= offset + kept.start && patch < offset + kept.end
        });
        match owner {
            Some((grid, offset, _)) => owners.push((*grid, (patch - offset) / pool)),
            None => {
                return Err(LayoutError::Invariant(format!(
                    "global patch {patch} is not covered by any kept window"
                )))
            }
        }
    }
    Ok(owners)
}
