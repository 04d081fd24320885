//! Five-point similarity alignment and bbox fallback cropping.

use image::{Rgb, RgbImage};

use crate::raster::{area_resize, crop_padded};

/// `x' = a·x − b·y + tx`, `y' = b·x + a·y + ty` (rotation, uniform scale,
/// translation; no reflection).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub fn apply(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        [self.a * x - self.b * y + self.tx, self.b * x + self.a * y + self.ty]
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    /// Rotation in radians, in `(-π, π]`.
    pub fn angle(&self) -> f64 {
        self.b.atan2(self.a)
    }

    fn invert(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        let det = self.a * self.a + self.b * self.b;
        let (dx, dy) = (x - self.tx, y - self.ty);
        [(self.a * dx + self.b * dy) / det, (-self.b * dx + self.a * dy) / det]
    }
}

/// Least-squares similarity mapping `src` onto `dst`, or `None` when the
/// source points are degenerate.
pub fn estimate_similarity(src: &[[f64; 2]; 5], dst: &[[f64; 2]; 5]) -> Option<Similarity> {
    let centroid = |pts: &[[f64; 2]; 5]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / 5.0, sy / 5.0]
    };
    let (cs, cd) = (centroid(src), centroid(dst));
    let (mut spread, mut num_a, mut num_b) = (0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p[0] - cs[0], p[1] - cs[1]);
        let (qx, qy) = (q[0] - cd[0], q[1] - cd[1]);
        spread += px * px + py * py;
        num_a += px * qx + py * qy;
        num_b += px * qy - py * qx;
    }
    if spread.is_nan() || spread <= 1e-9 {
        return None;
    }
    let (a, b) = (num_a / spread, num_b / spread);
    if !(a.is_finite() && b.is_finite()) || a.hypot(b) < 1e-9 {
        return None;
    }
    Some(Similarity {
        a,
        b,
        tx: cd[0] - (a * cs[0] - b * cs[1]),
        ty: cd[1] - (b * cs[0] + a * cs[1]),
    })
}

/// Landmarks that cannot anchor an alignment: non-finite values or eyes
/// closer than one pixel.
pub fn landmarks_degenerate(landmarks: &[[f32; 2]; 5]) -> bool {
    if landmarks.iter().flatten().any(|v| !v.is_finite()) {
        return true;
    }
    let [l, r] = [landmarks[0], landmarks[1]];
    ((l[0] - r[0]) as f64).hypot((l[1] - r[1]) as f64) < 1.0
}

/// Renders the `width × height` output whose pixel `(x, y)` samples the
/// frame at `t⁻¹(x, y)` with bilinear interpolation; outside is black.
pub fn warp(frame: &RgbImage, t: &Similarity, width: u32, height: u32) -> RgbImage {
    let (fw, fh) = (frame.width() as i64, frame.height() as i64);
    let sample = |x: i64, y: i64| -> [f64; 3] {
        if x < 0 || y < 0 || x >= fw || y >= fh {
            [0.0; 3]
        } else {
            let p = frame.get_pixel(x as u32, y as u32);
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    };
    RgbImage::from_fn(width, height, |ox, oy| {
        let [sx, sy] = t.invert([ox as f64, oy as f64]);
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let (p00, p10, p01, p11) = (
            sample(x0, y0),
            sample(x0 + 1, y0),
            sample(x0, y0 + 1),
            sample(x0 + 1, y0 + 1),
        );
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = p00[c] * (1.0 - fx) * (1.0 - fy)
                + p10[c] * fx * (1.0 - fy)
                + p01[c] * (1.0 - fx) * fy
                + p11[c] * fx * fy;
            out[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// Square window around a bbox expanded by `margin · max(w, h)`, as
/// `(x0, y0, side)`.
pub fn expanded_square(x: u32, y: u32, w: u32, h: u32, margin: f32) -> (i64, i64, u32) {
    let long = w.max(h) as f64;
    let side = (long * (1.0 + margin as f64)).round().max(1.0);
    let cx = x as f64 + w as f64 / 2.0;
    let cy = y as f64 + h as f64 / 2.0;
    (
        (cx - side / 2.0).round() as i64,
        (cy - side / 2.0).round() as i64,
        side as u32,
    )
}

/// Margin-expanded, square-padded bbox crop resized to `width × height`.
pub fn bbox_crop(frame: &RgbImage, bbox: (u32, u32, u32, u32), margin: f32, width: u32, height: u32) -> RgbImage {
    let (x0, y0, side) = expanded_square(bbox.0, bbox.1, bbox.2, bbox.3, margin);
    let square = crop_padded(frame, x0, y0, side, side);
    area_resize(&square, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEMPLATE: [[f64; 2]; 5] = [
        [38.2946, 51.6963],
        [73.5318, 51.5014],
        [56.0252, 71.7366],
        [41.5493, 92.3655],
        [70.7299, 92.2041],
    ];

    #[test]
    fn identity_on_template() {
        let t = estimate_similarity(&TEMPLATE, &TEMPLATE).unwrap();
        assert!((t.a - 1.0).abs() < 1e-12 && t.b.abs() < 1e-12);
        assert!(t.tx.abs() < 1e-9 && t.ty.abs() < 1e-9);
    }

    #[test]
    fn recovers_known_transform() {
        let truth = Similarity {
            a: 0.8 * 0.3f64.cos(),
            b: 0.8 * 0.3f64.sin(),
            tx: 12.0,
            ty: -4.0,
        };
        let src = TEMPLATE.map(|p| truth.apply(p));
        let t = estimate_similarity(&TEMPLATE, &src).unwrap();
        assert!((t.scale() - 0.8).abs() < 1e-12);
        assert!((t.angle() - 0.3).abs() < 1e-12);
        for p in TEMPLATE {
            let q = t.apply(p);
            let r = truth.apply(p);
            assert!((q[0] - r[0]).abs() < 1e-9 && (q[1] - r[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let same = [[10.0, 10.0]; 5];
        assert!(estimate_similarity(&same, &TEMPLATE).is_none());
        assert!(landmarks_degenerate(&[[5.0, 5.0]; 5]));
        assert!(landmarks_degenerate(&[
            [f32::NAN, 0.0],
            [9.0, 0.0],
            [0.0; 2],
            [0.0; 2],
            [0.0; 2]
        ]));
    }

    #[test]
    fn expanded_square_geometry() {
        assert_eq!(expanded_square(10, 10, 50, 50, 0.2), (5, 5, 60));
        assert_eq!(expanded_square(0, 0, 40, 60, 0.2), (-16, -6, 72));
    }

    #[test]
    fn identity_warp_copies_pixels() {
        let frame = RgbImage::from_fn(20, 10, |x, y| Rgb([x as u8 * 9, y as u8 * 20, 7]));
        let id = Similarity {
            a: 1.0,
            b: 0.0,
            tx: 0.0,
            ty: 0.0,
        };
        let out = warp(&frame, &id, 5, 5);
        for (x, y, p) in out.enumerate_pixels() {
            assert_eq!(p, frame.get_pixel(x, y));
        }
    }
}
