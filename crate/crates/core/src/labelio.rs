//! Five-field normalized box annotations (`class x_c y_c w h`).
//!
//! One box per line, whitespace separated, coordinates as fractions of the
//! image size. Lines starting with `#` are comments. Output uses a single
//! space and six decimal places.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("line {line}: malformed annotation: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: {field} = {value} is out of range")]
    RangeViolation {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("image size must be positive, got {width}x{height}")]
    NonPositiveImageSize { width: f64, height: f64 },
}

/// A bounding box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedBox {
    pub class_id: u32,
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
}

/// Axis-aligned box in pixel coordinates, `min` inclusive and `max` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// All boxes of one image, paired with its file stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub image_id: String,
    pub boxes: Vec<NormalizedBox>,
}

impl NormalizedBox {
    pub fn new(class_id: u32, x_c: f64, y_c: f64, w: f64, h: f64) -> Result<Self, LabelError> {
        let b = Self {
            class_id,
            x_c,
            y_c,
            w,
            h,
        };
        b.check().map_err(|(field, value)| {
            LabelError::InvalidBox(format!("{field} = {value} is out of range"))
        })?;
        Ok(b)
    }

    /// Returns the first field that violates the coordinate ranges.
    fn check(&self) -> Result<(), (&'static str, f64)> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let size = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.x_c) {
            return Err(("x_c", self.x_c));
        }
        if !unit(self.y_c) {
            return Err(("y_c", self.y_c));
        }
        if !size(self.w) {
            return Err(("w", self.w));
        }
        if !size(self.h) {
            return Err(("h", self.h));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }
}

impl PixelBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }
}

impl AnnotationSet {
    pub fn parse(image_id: impl Into<String>, text: &str) -> Result<Self, LabelError> {
        Ok(Self {
            image_id: image_id.into(),
            boxes: parse_annotation(text)?,
        })
    }

    pub fn to_text(&self) -> Result<String, LabelError> {
        serialize_annotation(&self.boxes)
    }
}

/// Parses every non-blank, non-comment line, yielding one result per line.
///
/// Unlike [`parse_annotation`] this does not stop at the first bad line, so
/// validators can report every defect of a file.
pub fn parse_lines(text: &str) -> impl Iterator<Item = Result<NormalizedBox, LabelError>> + '_ {
    text.lines().enumerate().filter_map(|(idx, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        Some(parse_line(line, idx + 1))
    })
}

fn parse_line(line: &str, line_no: usize) -> Result<NormalizedBox, LabelError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 5 {
        return Err(LabelError::MalformedLine {
            line: line_no,
            reason: format!("expected 5 fields, found {}", tokens.len()),
        });
    }
    let class_id: u32 = tokens[0].parse().map_err(|_| LabelError::MalformedLine {
        line: line_no,
        reason: format!("class id '{}' is not a non-negative integer", tokens[0]),
    })?;
    let mut coords = [0.0f64; 4];
    for (slot, tok) in coords.iter_mut().zip(&tokens[1..]) {
        *slot = tok.parse().map_err(|_| LabelError::MalformedLine {
            line: line_no,
            reason: format!("'{tok}' is not a number"),
        })?;
    }
    let b = NormalizedBox {
        class_id,
        x_c: coords[0],
        y_c: coords[1],
        w: coords[2],
        h: coords[3],
    };
    b.check()
        .map_err(|(field, value)| LabelError::RangeViolation {
            line: line_no,
            field,
            value,
        })?;
    Ok(b)
}

/// Smallest width/height that survives six-decimal output; anything below
/// would print as 0.000000 and not parse back.
pub const MIN_SERIALIZED_SIZE: f64 = 5e-7;

/// Parses a whole annotation file, failing on the first rejected line.
pub fn parse_annotation(text: &str) -> Result<Vec<NormalizedBox>, LabelError> {
    parse_lines(text).collect()
}

/// Serializes boxes as newline-terminated `class x_c y_c w h` lines.
pub fn serialize_annotation(boxes: &[NormalizedBox]) -> Result<String, LabelError> {
    let mut out = String::with_capacity(boxes.len() * 40);
    for b in boxes {
        if let Err((field, value)) = b.check() {
            return Err(LabelError::InvalidBox(format!(
                "{field} = {value} is out of range"
            )));
        }
        if b.w < MIN_SERIALIZED_SIZE || b.h < MIN_SERIALIZED_SIZE {
            return Err(LabelError::InvalidBox(format!(
                "size {}x{} is below output precision",
                b.w, b.h
            )));
        }
        writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6}",
            b.class_id, b.x_c, b.y_c, b.w, b.h
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

fn check_size(img_w: f64, img_h: f64) -> Result<(), LabelError> {
    if img_w > 0.0 && img_h > 0.0 && img_w.is_finite() && img_h.is_finite() {
        Ok(())
    } else {
        Err(LabelError::NonPositiveImageSize {
            width: img_w,
            height: img_h,
        })
    }
}

pub fn to_pixels(b: &NormalizedBox, img_w: f64, img_h: f64) -> Result<PixelBox, LabelError> {
    check_size(img_w, img_h)?;
    let (x, y) = (b.x_c * img_w, b.y_c * img_h);
    let (w, h) = (b.w * img_w, b.h * img_h);
    Ok(PixelBox {
        x_min: x - w / 2.0,
        y_min: y - h / 2.0,
        x_max: x + w / 2.0,
        y_max: y + h / 2.0,
    })
}

/// Inverse of [`to_pixels`]. The result is not range-checked; pixel boxes
/// hanging outside the image produce out-of-range fields.
pub fn to_normalized(
    b: &PixelBox,
    class_id: u32,
    img_w: f64,
    img_h: f64,
) -> Result<NormalizedBox, LabelError> {
    check_size(img_w, img_h)?;
    Ok(NormalizedBox {
        class_id,
        x_c: (b.x_min + b.x_max) / (2.0 * img_w),
        y_c: (b.y_min + b.y_max) / (2.0 * img_h),
        w: (b.x_max - b.x_min) / img_w,
        h: (b.y_max - b.y_min) / img_h,
    })
}
