use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{rotate_point, GeometryError, Point2};
use crate::labelio::PixelBox;

/// White, the capture background.
pub const DEFAULT_FILL: Rgb<u8> = Rgb([255, 255, 255]);

/// Target canvas size and pad color for [`crop_and_pad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    pub target: u32,
    pub pad: Rgb<u8>,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            target: 224,
            pad: DEFAULT_FILL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchProvenance {
    pub image_id: String,
    pub source: PixelBox,
}

/// A square, letterboxed crop of one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: RgbImage,
    pub provenance: PatchProvenance,
}

impl Patch {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

/// Bilinear sample at continuous pixel-index coordinates. Neighbors outside
/// the image contribute `outside` if given, otherwise the nearest edge pixel.
fn sample(img: &RgbImage, x: f64, y: f64, outside: Option<Rgb<u8>>) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let fetch = |xi: i64, yi: i64| -> [f64; 3] {
        let px = if xi < 0 || yi < 0 || xi >= w || yi >= h {
            match outside {
                Some(c) => c,
                None => *img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32),
            }
        } else {
            *img.get_pixel(xi as u32, yi as u32)
        };
        [px[0] as f64, px[1] as f64, px[2] as f64]
    };
    let p00 = fetch(x0, y0);
    let p10 = fetch(x0 + 1, y0);
    let p01 = fetch(x0, y0 + 1);
    let p11 = fetch(x0 + 1, y0 + 1);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

fn round_half_up(v: f64) -> u32 {
    (v + 0.5).floor().max(1.0) as u32
}

/// Crops `bbox` (clipped to the image), scales it so the longer side equals
/// the target, and centers it on a padded square canvas. Odd padding puts the
/// smaller half on the top/left.
pub fn crop_and_pad(
    image: &RgbImage,
    image_id: &str,
    bbox: &PixelBox,
    spec: CropSpec,
) -> Result<Patch, GeometryError> {
    if spec.target == 0 {
        return Err(GeometryError::InvalidSpec("target size must be >= 1".into()));
    }
    let (iw, ih) = (image.width() as f64, image.height() as f64);
    let x0 = bbox.x_min.max(0.0);
    let y0 = bbox.y_min.max(0.0);
    let x1 = bbox.x_max.min(iw);
    let y1 = bbox.y_max.min(ih);
    let (cw, ch) = (x1 - x0, y1 - y0);
    if !(cw > 0.0 && ch > 0.0) {
        return Err(GeometryError::EmptyCrop);
    }

    let target = spec.target;
    let scale = target as f64 / cw.max(ch);
    let nw = round_half_up(cw * scale).min(target);
    let nh = round_half_up(ch * scale).min(target);
    let left = (target - nw) / 2;
    let top = (target - nh) / 2;

    let mut canvas = RgbImage::from_pixel(target, target, spec.pad);
    let (sx, sy) = (cw / nw as f64, ch / nh as f64);
    // Edge-clamped bilinear sampling, separable: precompute the two source
    // indices and the weight for every output column and row.
    let taps = |n: u32, origin: f64, step: f64, limit: u32| -> Vec<(usize, usize, f64)> {
        (0..n)
            .map(|i| {
                let src = origin + (i as f64 + 0.5) * step - 0.5;
                let f = src.floor();
                let clamp = |v: i64| v.clamp(0, limit as i64 - 1) as usize;
                (clamp(f as i64), clamp(f as i64 + 1), src - f)
            })
            .collect()
    };
    let cols = taps(nw, x0, sx, image.width());
    let rows = taps(nh, y0, sy, image.height());
    let src = image.as_raw();
    let stride = image.width() as usize * 3;
    let out_stride = target as usize * 3;
    let out = canvas.as_mut();
    for (j, &(ya, yb, fy)) in rows.iter().enumerate() {
        let (ra, rb) = (&src[ya * stride..(ya + 1) * stride], &src[yb * stride..(yb + 1) * stride]);
        let base = (top as usize + j) * out_stride + left as usize * 3;
        let line = &mut out[base..base + nw as usize * 3];
        for (px, &(xa, xb, fx)) in line.chunks_exact_mut(3).zip(&cols) {
            for c in 0..3 {
                let p00 = ra[xa * 3 + c] as f64;
                let p10 = ra[xb * 3 + c] as f64;
                let p01 = rb[xa * 3 + c] as f64;
                let p11 = rb[xb * 3 + c] as f64;
                let top = p00 * (1.0 - fx) + p10 * fx;
                let bottom = p01 * (1.0 - fx) + p11 * fx;
                px[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(Patch {
        pixels: canvas,
        provenance: PatchProvenance {
            image_id: image_id.to_string(),
            source: PixelBox::new(x0, y0, x1, y1),
        },
    })
}

/// Rotates an image about its center on a canvas of unchanged size; pixels
/// that map outside the source take `fill`.
pub fn rotate_image(image: &RgbImage, angle_deg: f64, fill: Rgb<u8>) -> RgbImage {
    let angle = angle_deg.rem_euclid(360.0);
    if angle == 0.0 || angle == 360.0 {
        return image.clone();
    }
    let (w, h) = image.dimensions();
    let center = Point2::new(w as f64 / 2.0, h as f64 / 2.0);
    let mut out = RgbImage::new(w, h);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let q = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
        let src = rotate_point(q, center, -angle);
        let (sx, sy) = (src.x - 0.5, src.y - 0.5);
        *px = if sx <= -1.0 || sy <= -1.0 || sx >= w as f64 || sy >= h as f64 {
            fill
        } else {
            sample(image, sx, sy, Some(fill))
        };
    }
    out
}
