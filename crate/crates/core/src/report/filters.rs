//! Convolution kernel visualisation as tiled PNG grids.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Screen pixels per kernel weight.
pub const PIXEL_SCALE: u32 = 8;
/// Separator width between tiles and around the border.
pub const GAP: u32 = 2;
pub const BACKGROUND: [u8; 3] = [255, 255, 255];
/// Value used for every pixel of a filter whose weights are all equal.
pub const FLAT_GRAY: u8 = 128;

/// Row-major placement of `tiles` equally sized tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub tiles: usize,
    pub cols: usize,
    pub rows: usize,
    pub tile_w: u32,
    pub tile_h: u32,
}

impl GridLayout {
    /// Top-left pixel of tile `index`, which sits at `(index / cols, index % cols)`.
    pub fn origin(&self, index: usize) -> (u32, u32) {
        let (row, col) = ((index / self.cols) as u32, (index % self.cols) as u32);
        (GAP + col * (self.tile_w + GAP), GAP + row * (self.tile_h + GAP))
    }

    pub fn image_size(&self) -> (u32, u32) {
        (
            GAP + self.cols as u32 * (self.tile_w + GAP),
            GAP + self.rows as u32 * (self.tile_h + GAP),
        )
    }
}

/// `cols = ceil(sqrt(tiles))`, `rows = ceil(tiles / cols)`.
pub fn grid_layout(tiles: usize, tile_w: u32, tile_h: u32) -> GridLayout {
    let cols = ((tiles as f64).sqrt().ceil() as usize).max(1);
    GridLayout {
        tiles,
        cols,
        rows: tiles.div_ceil(cols).max(1),
        tile_w,
        tile_h,
    }
}

/// Maps every weight of one filter to 0..=255 with that filter's own min and max.
fn normalize(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![FLAT_GRAY; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Renders `[kh, kw, in_c, filters]` kernels. Three-channel kernels become RGB tiles;
/// any other depth becomes a grayscale mosaic of the per-input-channel slices, laid out
/// with the same row-major rule as the outer grid.
pub fn filter_grid(weights: &Tensor) -> Result<(RgbImage, GridLayout)> {
    let &[kh, kw, in_c, filters] = weights.shape() else {
        return Err(Error::InvalidShape {
            shape: weights.shape().to_vec(),
            reason: "conv kernels must be [kh, kw, in_c, filters]".into(),
        });
    };
    if filters == 0 || in_c == 0 {
        return Err(Error::invalid("kernel tensor has no filters"));
    }
    let rgb = in_c == 3;
    let inner = if rgb {
        grid_layout(1, kw as u32, kh as u32)
    } else {
        grid_layout(in_c, kw as u32 * PIXEL_SCALE, kh as u32 * PIXEL_SCALE)
    };
    let (tile_w, tile_h) = if rgb {
        (kw as u32 * PIXEL_SCALE, kh as u32 * PIXEL_SCALE)
    } else {
        inner.image_size()
    };
    let layout = grid_layout(filters, tile_w, tile_h);
    let (w, h) = layout.image_size();
    let mut img = RgbImage::from_pixel(w, h, Rgb(BACKGROUND));
    let wd = weights.data();

    for f in 0..filters {
        // weights of filter f in (y, x, channel) order
        let vals: Vec<f32> = (0..kh * kw * in_c).map(|i| wd[i * filters + f]).collect();
        let px = normalize(&vals);
        let (ox, oy) = layout.origin(f);
        for y in 0..kh {
            for x in 0..kw {
                let at = |ch: usize| px[(y * kw + x) * in_c + ch];
                for ch in 0..if rgb { 1 } else { in_c } {
                    let color = if rgb {
                        Rgb([at(0), at(1), at(2)])
                    } else {
                        Rgb([at(ch); 3])
                    };
                    let (sx, sy) = if rgb {
                        (ox, oy)
                    } else {
                        let (ix, iy) = inner.origin(ch);
                        (ox + ix, oy + iy)
                    };
                    for dy in 0..PIXEL_SCALE {
                        for dx in 0..PIXEL_SCALE {
                            img.put_pixel(
                                sx + x as u32 * PIXEL_SCALE + dx,
                                sy + y as u32 * PIXEL_SCALE + dy,
                                color,
                            );
                        }
                    }
                }
            }
        }
    }
    Ok((img, layout))
}

/// Writes `filters_conv{k}.png` for every conv layer, `k` counting from 1.
pub fn export_filters(model: &Model, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let kernels = model.conv_weights();
    if kernels.is_empty() {
        return Err(Error::invalid("model has no convolution layers"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    kernels
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let (img, _) = filter_grid(w)?;
            let path = out_dir.join(format!("filters_conv{}.png", i + 1));
            img.save(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major() {
        let g = grid_layout(32, 24, 24);
        assert_eq!((g.cols, g.rows), (6, 6));
        let g = grid_layout(64, 10, 10);
        assert_eq!((g.cols, g.rows), (8, 8));
        assert_eq!(g.origin(0), (GAP, GAP));
        let (x, y) = g.origin(8 * 2 + 3);
        assert_eq!((x, y), (GAP + 3 * 12, GAP + 2 * 12));
        assert_eq!(grid_layout(1, 3, 3).image_size(), (3 + 2 * GAP, 3 + 2 * GAP));
    }

    #[test]
    fn constant_filter_is_gray() {
        let w = Tensor::fill([3, 3, 3, 2], 0.7f32).unwrap();
        let (img, layout) = filter_grid(&w).unwrap();
        for f in 0..2 {
            let (ox, oy) = layout.origin(f);
            for y in 0..layout.tile_h {
                for x in 0..layout.tile_w {
                    assert_eq!(img.get_pixel(ox + x, oy + y).0, [FLAT_GRAY; 3]);
                }
            }
        }
    }

    #[test]
    fn per_filter_normalization_and_order() {
        // filter f holds f + (position index); every filter spans the full range
        let (kh, kw, c, n) = (2, 2, 3, 5);
        let mut data = vec![0.0f32; kh * kw * c * n];
        for i in 0..kh * kw * c {
            for f in 0..n {
                data[i * n + f] = (f * 100 + i) as f32;
            }
        }
        let (img, layout) = filter_grid(&Tensor::from_vec([kh, kw, c, n], data).unwrap()).unwrap();
        for f in 0..n {
            let (ox, oy) = layout.origin(f);
            assert_eq!(img.get_pixel(ox, oy).0, [0, 23, 46]);
            let last = img.get_pixel(ox + layout.tile_w - 1, oy + layout.tile_h - 1).0;
            assert_eq!(last, [209, 232, 255]);
        }
    }

    #[test]
    fn grayscale_mosaic_for_deep_layers() {
        let (kh, kw, c, n) = (3, 3, 4, 6);
        let data = (0..kh * kw * c * n).map(|i| (i % 7) as f32).collect();
        let (img, layout) = filter_grid(&Tensor::from_vec([kh, kw, c, n], data).unwrap()).unwrap();
        assert_eq!(layout.tiles, 6);
        assert!(img.pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
        assert!(filter_grid(&Tensor::zeros([3, 3, 3]).unwrap()).is_err());
    }
}
