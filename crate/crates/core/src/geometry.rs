use serde::{Deserialize, Serialize};

use crate::error::{AtlError, Result};

/// Axis-aligned box `[x1, y1, x2, y2]` in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x2 > self.x1 && self.y2 > self.y1) || self.to_array().iter().any(|v| !v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(AtlError::DegenerateBox(self.to_array()))
        } else {
            Ok(())
        }
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }
}

/// Intersection over union; 0 when either box has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let unit = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&unit, &unit), 1.0);
        assert_eq!(iou(&unit, &BBox::new(2.0, 2.0, 3.0, 3.0)), 0.0);
        assert_eq!(iou(&unit, &BBox::new(0.5, 0.0, 1.0, 1.0)), 0.5);
        // touching edges
        assert_eq!(iou(&unit, &BBox::new(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).validate().is_err());
        assert!(BBox::new(0.5, 0.0, 0.2, 1.0).validate().is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).validate().is_err());
        assert!(BBox::new(0.0, 0.0, 0.1, 0.1).validate().is_ok());
    }

    #[test]
    fn serializes_as_array() {
        let b = BBox::new(0.1, 0.2, 0.3, 0.4);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[0.1,0.2,0.3,0.4]");
        assert_eq!(serde_json::from_str::<BBox>(&s).unwrap(), b);
    }
}
