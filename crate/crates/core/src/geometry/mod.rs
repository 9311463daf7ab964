//! Box geometry: rotation-aware tight box adjustment, IoU, and the raster
//! operations that keep pixels and labels consistent.
//!
//! Rotation convention: an angle `a` in degrees maps a point `p` to
//! `R(θ)(p - c) + c` with `θ = -a·π/180` and `c` the image center, in image
//! coordinates (y pointing down). [`rotate_image`] uses the inverse of the
//! same transform, so a box adjusted with [`rotate_tight_box`] encloses the
//! rotated pixels.

mod raster;

pub use raster::{crop_and_pad, rotate_image, CropSpec, Patch, PatchProvenance, DEFAULT_FILL};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelio::{to_normalized, to_pixels, LabelError, NormalizedBox, PixelBox};

/// Default shrink applied to the enclosing box of a rotated rectangle.
pub const DEFAULT_TIGHTNESS: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid rotation spec: {0}")]
    InvalidSpec(String),
    #[error("crop box lies entirely outside the image")]
    EmptyCrop,
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Rotation angle (canonical, in `[0, 360)`) and tightness factor in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    angle_deg: f64,
    tightness: f64,
}

impl RotationSpec {
    pub fn new(angle_deg: f64, tightness: f64) -> Result<Self, GeometryError> {
        if !angle_deg.is_finite() {
            return Err(GeometryError::InvalidSpec(format!(
                "angle {angle_deg} is not finite"
            )));
        }
        if !(tightness > 0.0 && tightness <= 1.0) {
            return Err(GeometryError::InvalidSpec(format!(
                "tightness {tightness} outside (0, 1]"
            )));
        }
        let mut angle = angle_deg.rem_euclid(360.0);
        // rem_euclid can round tiny negative inputs up to exactly 360.
        if angle >= 360.0 {
            angle = 0.0;
        }
        Ok(Self {
            angle_deg: angle,
            tightness,
        })
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }

    pub fn tightness(&self) -> f64 {
        self.tightness
    }
}

pub fn rotate_point(p: Point2, center: Point2, angle_deg: f64) -> Point2 {
    let theta = -angle_deg * std::f64::consts::PI / 180.0;
    let (sin, cos) = theta.sin_cos();
    let (dx, dy) = (p.x - center.x, p.y - center.y);
    Point2 {
        x: dx * cos - dy * sin + center.x,
        y: dx * sin + dy * cos + center.y,
    }
}

/// Rotates a normalized box with its image and returns the tightened,
/// clipped enclosing box, or `None` when clipping leaves nothing.
///
/// Steps: pixels, four corners, rotate about the image center, enclosing
/// AABB, scale width/height by `t` about the AABB center, clip to the image,
/// renormalize.
pub fn rotate_tight_box(
    b: &NormalizedBox,
    img_w: f64,
    img_h: f64,
    spec: &RotationSpec,
) -> Result<Option<NormalizedBox>, GeometryError> {
    let px = to_pixels(b, img_w, img_h)?;
    let center = Point2::new(img_w / 2.0, img_h / 2.0);
    let corners = [
        Point2::new(px.x_min, px.y_min),
        Point2::new(px.x_max, px.y_min),
        Point2::new(px.x_max, px.y_max),
        Point2::new(px.x_min, px.y_max),
    ]
    .map(|p| rotate_point(p, center, spec.angle_deg));

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &corners {
        x_min = x_min.min(p.x);
        x_max = x_max.max(p.x);
        y_min = y_min.min(p.y);
        y_max = y_max.max(p.y);
    }
    let (xr, yr) = ((x_min + x_max) / 2.0, (y_min + y_max) / 2.0);
    let wt = spec.tightness * (x_max - x_min);
    let ht = spec.tightness * (y_max - y_min);

    let clipped = PixelBox {
        x_min: (xr - wt / 2.0).max(0.0),
        y_min: (yr - ht / 2.0).max(0.0),
        x_max: (xr + wt / 2.0).min(img_w),
        y_max: (yr + ht / 2.0).min(img_h),
    };
    if clipped.width() <= 0.0 || clipped.height() <= 0.0 {
        return Ok(None);
    }
    let mut out = to_normalized(&clipped, b.class_id, img_w, img_h)?;
    // Keep the clipping guarantee exact despite rounding in the division.
    out.x_c = out.x_c.clamp(0.0, 1.0);
    out.y_c = out.y_c.clamp(0.0, 1.0);
    out.w = out.w.min(1.0);
    out.h = out.h.min(1.0);
    Ok(Some(out))
}

pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
