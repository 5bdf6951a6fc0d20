//! Binary portable graymap (P5) image grids.

use std::path::Path;

use crate::error::{Error, Result};

/// Separator width between tiles, in pixels.
pub const SEPARATOR: usize = 2;
const SEPARATOR_SHADE: u8 = 128;

/// A `rows × cols` grid of `tile_h × tile_w` tiles with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    tiles: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, tile_h: usize, tile_w: usize) -> Self {
        Grid {
            rows,
            cols,
            tile_h,
            tile_w,
            tiles: vec![vec![0.0; tile_h * tile_w]; rows * cols],
        }
    }

    pub fn set(&mut self, row: usize, col: usize, pixels: &[f64]) {
        assert_eq!(pixels.len(), self.tile_h * self.tile_w, "tile size");
        self.tiles[row * self.cols + col].copy_from_slice(pixels);
    }

    pub fn width(&self) -> usize {
        self.cols * self.tile_w + (self.cols.saturating_sub(1)) * SEPARATOR
    }

    pub fn height(&self) -> usize {
        self.rows * self.tile_h + (self.rows.saturating_sub(1)) * SEPARATOR
    }

    /// 8-bit raster, row-major.
    pub fn raster(&self) -> Vec<u8> {
        let (w, h) = (self.width(), self.height());
        let mut out = vec![SEPARATOR_SHADE; w * h];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let tile = &self.tiles[r * self.cols + c];
                let (y0, x0) = (r * (self.tile_h + SEPARATOR), c * (self.tile_w + SEPARATOR));
                for y in 0..self.tile_h {
                    for x in 0..self.tile_w {
                        let v = tile[y * self.tile_w + x].clamp(0.0, 1.0);
                        out[(y0 + y) * w + x0 + x] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
        out
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend(self.raster());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(Error::io(path))
    }
}
