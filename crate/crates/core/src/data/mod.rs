//! Factor-labeled synthetic scenes, their file format, quantization,
//! batching and image export.

mod batch;
mod file;
mod render;

pub use batch::{holdout_split, Batch, BatchSampler};
pub use file::{generation_digest, Dataset, DATASET_MAGIC, DATASET_VERSION};
pub use render::{render, Factor, FactorSpec, Rendered, Shape, FACTOR_NAMES};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// 8-bit intensity to a `bits`-bit bin.
pub fn quantize(pixel: u8, bits: u32) -> u16 {
    (pixel as u16) >> (8 - bits.min(8))
}

/// Bin to the 8-bit intensity at its center.
pub fn dequantize(bin: u16, bits: u32) -> u8 {
    let step = 1u16 << (8 - bits.min(8));
    (bin * step + step / 2).min(255) as u8
}

/// Tiles bin images `[N, C, H, W]` (C = 1 or 3) into a binary PPM with
/// `rows x cols` cells and a one-pixel gap. Missing cells stay black.
pub fn grid_ppm(images: &Tensor, bits: u32, rows: usize, cols: usize, comment: &str) -> Result<Vec<u8>> {
    let [n, c, h, w] = images.dims4()?;
    if c != 1 && c != 3 {
        return Err(Error::invalid(format!("PPM export needs 1 or 3 channels, got {}", c)));
    }
    if rows * cols < n {
        return Err(Error::invalid(format!("{} images do not fit a {}x{} grid", n, rows, cols)));
    }
    let (gw, gh) = (cols * (w + 1) - 1, rows * (h + 1) - 1);
    let mut px = vec![0u8; gw * gh * 3];
    for k in 0..n {
        let (r0, c0) = ((k / cols) * (h + 1), (k % cols) * (w + 1));
        for i in 0..h {
            for j in 0..w {
                for ch in 0..3 {
                    let v = images.at4(k, if c == 1 { 0 } else { ch }, i, j);
                    px[((r0 + i) * gw + c0 + j) * 3 + ch] = dequantize(v as u16, bits);
                }
            }
        }
    }
    let mut out = format!("P6\n# {}\n{} {}\n255\n", comment, gw, gh).into_bytes();
    out.extend(px);
    Ok(out)
}
