//! Normalized axis-aligned box arithmetic.
//!
//! Every box lives in the unit square: coordinates are fractions of the image
//! width and height. Boxes with zero width or height cannot be constructed.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box [{x1}, {y1}, {x2}, {y2}] is not a valid normalized box: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },
    #[error("pixel box [{x1}, {y1}, {x2}, {y2}] invalid for {width}x{height} image: {reason}")]
    InvalidPixelBox {
        x1: u32,
        y1: u32,
        x2: u32,
        y2: u32,
        width: u32,
        height: u32,
        reason: &'static str,
    },
    #[error("image dimensions must be positive, got {width}x{height}")]
    InvalidDims { width: u32, height: u32 },
}

/// Axis-aligned box in normalized image coordinates.
///
/// Serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let invalid = |reason| GeometryError::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if ![x1, y1, x2, y2].iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(invalid("coordinate outside [0, 1]"));
        }
        if x1 >= x2 {
            return Err(invalid("zero or negative width"));
        }
        if y1 >= y2 {
            return Err(invalid("zero or negative height"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Converts a pixel-space box `[x1, y1, x2, y2]` into normalized coordinates.
    pub fn from_pixels(px: [u32; 4], dims: ImageDims) -> Result<Self, GeometryError> {
        let [x1, y1, x2, y2] = px;
        let invalid = |reason| GeometryError::InvalidPixelBox {
            x1,
            y1,
            x2,
            y2,
            width: dims.width_px,
            height: dims.height_px,
            reason,
        };
        if x1 >= x2 {
            return Err(invalid("zero width"));
        }
        if y1 >= y2 {
            return Err(invalid("zero height"));
        }
        if x2 > dims.width_px || y2 > dims.height_px {
            return Err(invalid("box exceeds image bounds"));
        }
        let w = f64::from(dims.width_px);
        let h = f64::from(dims.height_px);
        Self::new(
            f64::from(x1) / w,
            f64::from(y1) / h,
            f64::from(x2) / w,
            f64::from(y2) / h,
        )
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    /// Fraction of the image covered by the box, in `(0, 1]`.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Overlap rectangle, or `None` when the boxes share no positive area.
    /// Boxes touching along an edge or at a corner do not intersect.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        if x1 < x2 && y1 < y2 {
            Some(BBox { x1, y1, x2, y2 })
        } else {
            None
        }
    }

    /// Area of the overlap rectangle, `0.0` when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        self.intersect(other).map_or(0.0, |b| b.area())
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &BBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Pixel dimensions of the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width_px: u32,
    pub height_px: u32,
}

impl ImageDims {
    pub fn new(width_px: u32, height_px: u32) -> Result<Self, GeometryError> {
        if width_px == 0 || height_px == 0 {
            return Err(GeometryError::InvalidDims {
                width: width_px,
                height: height_px,
            });
        }
        Ok(Self {
            width_px,
            height_px,
        })
    }
}
