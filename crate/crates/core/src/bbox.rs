use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `[x_min, x_max) × [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::Geometry(format!(
                "box ({x_min}, {y_min}, {x_max}, {y_max}) has non-positive size"
            )));
        }
        Ok(BBox { x_min, y_min, x_max, y_max })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Clips to `[0, size) × [0, size)`; `None` when nothing remains.
    pub fn clip(&self, size: f64) -> Option<BBox> {
        BBox::new(
            self.x_min.clamp(0.0, size),
            self.y_min.clamp(0.0, size),
            self.x_max.clamp(0.0, size),
            self.y_max.clamp(0.0, size),
        )
        .ok()
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as f64, y as f64);
        self.x_min <= x && x + 1.0 <= self.x_max && self.y_min <= y && y + 1.0 <= self.y_max
    }
}

/// Intersection over union of two boxes, by area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
