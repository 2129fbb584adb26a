//! Sliding-window search for the target location whose box border best
//! matches the colour of the source lesion's box border.

use crate::error::{Error, Result};
use crate::image::{BBox, ImageBuffer};

pub const DEFAULT_STRIDE: usize = 8;
pub const DEFAULT_MARGIN: usize = 1;

/// Boolean raster marking where windows may be placed.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidMask {
    width: usize,
    height: usize,
    // Summed-area table with a zero first row and column.
    integral: Vec<u32>,
}

impl ValidMask {
    pub fn new(width: usize, height: usize, valid: &[bool]) -> Result<Self> {
        if valid.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} mask needs {} entries, got {}",
                width * height,
                valid.len()
            )));
        }
        let stride = width + 1;
        let mut integral = vec![0u32; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0u32;
            for x in 0..width {
                row += valid[y * width + x] as u32;
                integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
            }
        }
        Ok(ValidMask {
            width,
            height,
            integral,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// True when every pixel of `[x0, x1) x [y0, y1)` is valid.
    fn all_valid(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> bool {
        let s = self.width + 1;
        let sum = self.integral[y1 * s + x1] + self.integral[y0 * s + x0]
            - self.integral[y0 * s + x1]
            - self.integral[y1 * s + x0];
        sum as usize == (x1 - x0) * (y1 - y0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiSearchConfig {
    pub stride: usize,
    /// Pixels that must remain between a window and the image edge.
    pub margin: usize,
    /// Origin of the candidate grid, added to the first feasible offset.
    pub grid_offset: (usize, usize),
    pub valid_mask: Option<ValidMask>,
}

impl Default for RoiSearchConfig {
    fn default() -> Self {
        RoiSearchConfig {
            stride: DEFAULT_STRIDE,
            margin: DEFAULT_MARGIN,
            grid_offset: (0, 0),
            valid_mask: None,
        }
    }
}

impl RoiSearchConfig {
    pub fn with_stride(stride: usize) -> Self {
        RoiSearchConfig {
            stride,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiResult {
    pub bbox: BBox,
    pub score: f64,
    pub candidates_evaluated: usize,
}

/// Perimeter of `b`, clockwise from the top-left corner: top row left to
/// right, right column downward, bottom row right to left, left column upward.
pub fn border_pixels(b: &BBox) -> Result<Vec<(usize, usize)>> {
    if b.w < 2 || b.h < 2 {
        return Err(Error::InvalidBBox {
            bbox: *b,
            reason: "border needs at least a 2x2 box".into(),
        });
    }
    let (x0, y0, x1, y1) = (b.x, b.y, b.x + b.w - 1, b.y + b.h - 1);
    let mut out = Vec::with_capacity(2 * b.w + 2 * b.h - 4);
    out.extend((x0..=x1).map(|x| (x, y0)));
    out.extend((y0 + 1..=y1).map(|y| (x1, y)));
    out.extend((x0..x1).rev().map(|x| (x, y1)));
    out.extend((y0 + 1..y1).rev().map(|y| (x0, y)));
    Ok(out)
}

/// Mean Euclidean RGB distance between corresponding border pixels of
/// `src_bbox` in `source` and `cand` in `target`.
pub fn roi_score(
    source: &ImageBuffer,
    src_bbox: &BBox,
    target: &ImageBuffer,
    cand: &BBox,
) -> Result<f64> {
    if !src_bbox.same_size(cand) {
        return Err(Error::DimensionMismatch(format!(
            "source box {}x{} vs candidate {}x{}",
            src_bbox.w, src_bbox.h, cand.w, cand.h
        )));
    }
    for (b, img) in [(src_bbox, source), (cand, target)] {
        if !b.fits(img.width(), img.height()) {
            return Err(Error::InvalidBBox {
                bbox: *b,
                reason: format!("outside the {}x{} image", img.width(), img.height()),
            });
        }
    }
    let src_border = border_pixels(src_bbox)?;
    Ok(border_score(
        source,
        &src_border,
        target,
        cand.x as isize - src_bbox.x as isize,
        cand.y as isize - src_bbox.y as isize,
    ))
}

/// Score with the candidate border expressed as a translation of the source border.
fn border_score(
    source: &ImageBuffer,
    src_border: &[(usize, usize)],
    target: &ImageBuffer,
    dx: isize,
    dy: isize,
) -> f64 {
    let mut total = 0.0;
    for &(x, y) in src_border {
        let p = source.pixel(x, y);
        let q = target.pixel((x as isize + dx) as usize, (y as isize + dy) as usize);
        let d2: f64 = (0..3).map(|c| (p[c] - q[c]) * (p[c] - q[c])).sum();
        total += d2.sqrt();
    }
    total / src_border.len() as f64
}

/// Candidate offsets along one axis: `lo + offset, lo + offset + stride, ...`
/// up to `hi`, plus `hi` itself so the far edge is always reachable.
pub fn axis_positions(lo: usize, hi: usize, stride: usize, offset: usize) -> Vec<usize> {
    if lo > hi {
        return Vec::new();
    }
    let start = lo + offset.min(hi - lo);
    let mut out: Vec<usize> = (start..=hi).step_by(stride.max(1)).collect();
    if out.last() != Some(&hi) {
        out.push(hi);
    }
    out
}

/// Every candidate window of `w x h` for a `width x height` target under `cfg`,
/// in raster order, before mask filtering.
pub fn candidate_grid(
    width: usize,
    height: usize,
    w: usize,
    h: usize,
    cfg: &RoiSearchConfig,
) -> Vec<BBox> {
    let m = cfg.margin;
    if width < w + 2 * m || height < h + 2 * m {
        return Vec::new();
    }
    let xs = axis_positions(m, width - m - w, cfg.stride, cfg.grid_offset.0);
    let ys = axis_positions(m, height - m - h, cfg.stride, cfg.grid_offset.1);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| BBox::new(x, y, w, h)))
        .collect()
}

fn mask_allows(mask: &ValidMask, b: &BBox, margin: usize) -> bool {
    let x0 = b.x - margin;
    let y0 = b.y - margin;
    let x1 = b.right() + margin;
    let y1 = b.bottom() + margin;
    x1 <= mask.width && y1 <= mask.height && mask.all_valid(x0, y0, x1, y1)
}

/// Scans the candidate grid and returns the window with the lowest border
/// score. Ties go to the earliest window in raster order.
pub fn select_roi(
    source: &ImageBuffer,
    src_bbox: &BBox,
    target: &ImageBuffer,
    cfg: &RoiSearchConfig,
) -> Result<RoiResult> {
    if cfg.stride == 0 {
        return Err(Error::Config("roi stride must be >= 1".into()));
    }
    if let Some(mask) = &cfg.valid_mask {
        if mask.width != target.width() || mask.height != target.height() {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{} but target is {}x{}",
                mask.width,
                mask.height,
                target.width(),
                target.height()
            )));
        }
    }
    if !src_bbox.fits(source.width(), source.height()) {
        return Err(Error::InvalidBBox {
            bbox: *src_bbox,
            reason: format!("outside the {}x{} source", source.width(), source.height()),
        });
    }
    let src_border = border_pixels(src_bbox)?;
    let mut best: Option<(f64, BBox)> = None;
    let mut evaluated = 0;
    for cand in candidate_grid(target.width(), target.height(), src_bbox.w, src_bbox.h, cfg) {
        if let Some(mask) = &cfg.valid_mask {
            if !mask_allows(mask, &cand, cfg.margin) {
                continue;
            }
        }
        evaluated += 1;
        let dx = cand.x as isize - src_bbox.x as isize;
        let dy = cand.y as isize - src_bbox.y as isize;
        let score = border_score(source, &src_border, target, dx, dy);
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, cand));
        }
    }
    match best {
        Some((score, bbox)) => Ok(RoiResult {
            bbox,
            score,
            candidates_evaluated: evaluated,
        }),
        None => Err(Error::NoFeasibleRoi {
            w: src_bbox.w,
            h: src_bbox.h,
            width: target.width(),
            height: target.height(),
        }),
    }
}
