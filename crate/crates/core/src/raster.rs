//! Pixel-level helpers shared by frame normalization, cropping and the toy
//! embedder.

use image::{Rgb, RgbImage};

/// Column (or row) coverage table for area resampling.
///
/// Destination pixel `i` spans `[i*src, (i+1)*src)` and source pixel `k`
/// spans `[k*dst, (k+1)*dst)` on a common integer grid, so every weight is an
/// exact integer and the weights of one destination pixel sum to `src`.
fn coverage(src: u32, dst: u32) -> Vec<Vec<(u32, u64)>> {
    let (src, dst) = (src as u64, dst as u64);
    (0..dst)
        .map(|i| {
            let lo = i * src;
            let hi = lo + src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .filter_map(|k| {
                    let s = (k * dst).max(lo);
                    let e = ((k + 1) * dst).min(hi);
                    (e > s).then_some((k as u32, e - s))
                })
                .collect()
        })
        .collect()
}

/// Integer division rounding half to even.
fn div_round_half_even(num: u64, den: u64) -> u64 {
    let q = num / den;
    let r2 = (num % den) * 2;
    if r2 > den || (r2 == den && q % 2 == 1) {
        q + 1
    } else {
        q
    }
}

/// Area-averaging (box) resample of an RGB image.
///
/// Each output pixel is the exact area-weighted mean of the source pixels it
/// covers, rounded half to even. Works for both shrinking and enlarging.
pub fn area_resize(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    assert!(width > 0 && height > 0, "target size must be non-empty");
    let (sw, sh) = img.dimensions();
    if (sw, sh) == (width, height) {
        return img.clone();
    }
    let cols = coverage(sw, width);
    let rows = coverage(sh, height);
    let den = sw as u64 * sh as u64;
    let mut out = RgbImage::new(width, height);
    for (oy, row_w) in rows.iter().enumerate() {
        for (ox, col_w) in cols.iter().enumerate() {
            let mut acc = [0u64; 3];
            for &(sy, wy) in row_w {
                for &(sx, wx) in col_w {
                    let p = img.get_pixel(sx, sy);
                    let w = wy * wx;
                    for c in 0..3 {
                        acc[c] += w * p[c] as u64;
                    }
                }
            }
            let px = acc.map(|a| div_round_half_even(a, den) as u8);
            out.put_pixel(ox as u32, oy as u32, Rgb(px));
        }
    }
    out
}

/// Area-averaging resample of a single-channel `f64` plane (row-major).
pub fn area_resize_plane(src: &[f64], sw: u32, sh: u32, dw: u32, dh: u32) -> Vec<f64> {
    assert_eq!(src.len(), sw as usize * sh as usize);
    let cols = coverage(sw, dw);
    let rows = coverage(sh, dh);
    let den = sw as f64 * sh as f64;
    let mut out = Vec::with_capacity(dw as usize * dh as usize);
    for row_w in &rows {
        for col_w in &cols {
            let mut acc = 0.0;
            for &(sy, wy) in row_w {
                for &(sx, wx) in col_w {
                    acc += (wy * wx) as f64 * src[sy as usize * sw as usize + sx as usize];
                }
            }
            out.push(acc / den);
        }
    }
    out
}

/// Luma plane with weights 0.299 / 0.587 / 0.114, unquantized.
pub fn luma_plane(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| (299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32) as f64 / 1000.0)
        .collect()
}

/// Copies the `width × height` window at `(x0, y0)`; out-of-frame pixels are black.
pub fn crop_padded(img: &RgbImage, x0: i64, y0: i64, width: u32, height: u32) -> RgbImage {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    let mut out = RgbImage::new(width, height);
    for oy in 0..height {
        let sy = y0 + oy as i64;
        if sy < 0 || sy >= ih {
            continue;
        }
        for ox in 0..width {
            let sx = x0 + ox as i64;
            if sx < 0 || sx >= iw {
                continue;
            }
            out.put_pixel(ox, oy, *img.get_pixel(sx as u32, sy as u32));
        }
    }
    out
}
