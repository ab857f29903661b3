use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Axis-aligned box in pixels, top-left convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x, self.y, self.x + self.w, self.y + self.h]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w >= 0.0 && self.h >= 0.0
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        let w = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let h = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            (inter / union).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }

    /// Clips the box to `[0, width] × [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let [x0, y0, x1, y1] = self.corners();
        let x0 = x0.clamp(0.0, width);
        let y0 = y0.clamp(0.0, height);
        let x1 = x1.clamp(x0, width);
        let y1 = y1.clamp(y0, height);
        BBox::from_corners(x0, y0, x1, y1)
    }
}

impl fmt::Display for BBox {
    /// `x,y,w,h`. Integral values print without a fractional part.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vals = [self.x, self.y, self.w, self.h];
        let parts: Vec<String> = vals
            .iter()
            .map(|v| {
                if v.fract() == 0.0 && v.abs() < 1e15 {
                    format!("{}", *v as i64)
                } else {
                    format!("{v:.4}")
                }
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for BBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .trim()
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad box `{s}`: {e}")))?;
        match vals.as_slice() {
            &[x, y, w, h] => Ok(BBox::new(x, y, w, h)),
            _ => Err(Error::invalid(format!("bad box `{s}`: expected x,y,w,h"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = BBox::new(3.0, 4.0, 5.0, 6.0);
        assert_eq!(b.iou(&b), 1.0);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        let b = BBox::new(2.0, 0.0, 1.0, 1.0);
        assert_eq!(a.iou(&b), 0.0);
    }

    #[test]
    fn display_and_parse_roundtrip() {
        let b = BBox::new(1.0, 2.0, 30.0, 4.0);
        assert_eq!(b.to_string(), "1,2,30,4");
        assert_eq!("1,2,30,4".parse::<BBox>().unwrap(), b);
        let c = BBox::new(1.25, 2.5, 3.0, 4.125);
        assert_eq!(c.to_string(), "1.2500,2.5000,3,4.1250");
        assert_eq!(c.to_string().parse::<BBox>().unwrap(), c);
        assert!("1,2,3".parse::<BBox>().is_err());
    }

    #[test]
    fn clip_keeps_box_inside_frame() {
        let b = BBox::new(-5.0, 60.0, 20.0, 20.0).clip(64.0, 64.0);
        assert_eq!(b, BBox::new(0.0, 60.0, 15.0, 4.0));
    }
}
