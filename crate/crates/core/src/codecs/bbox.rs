//! Bounding boxes as four positional tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates, top-left / bottom-right corners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.coords();
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("box coordinates must lie in [0,1]: {c:?}")));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::invalid(format!("box corners out of order: {c:?}")));
        }
        Ok(())
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    /// Rectangle IoU. When the union has zero area (both boxes degenerate),
    /// identical boxes score 1 and distinct ones 0.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            return if self == other { 1.0 } else { 0.0 };
        }
        inter / union
    }
}

/// Bins every coordinate as `min(floor(c·B), B−1)`, order x1, y1, x2, y2.
pub fn box_encode(b: &BBox, bins: usize) -> Result<[u32; 4]> {
    if bins == 0 {
        return Err(Error::config("bin count must be positive"));
    }
    b.validate()?;
    Ok(b.coords().map(|c| ((c * bins as f64).floor() as usize).min(bins - 1) as u32))
}

/// Decodes bin ids to bin centers. The flag is set when the corners came
/// out of order and had to be swapped.
pub fn box_decode(ids: [u32; 4], bins: usize) -> Result<(BBox, bool)> {
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= bins) {
        return Err(Error::invalid(format!("positional id {bad} outside {bins} bins")));
    }
    let c = ids.map(|i| (i as f64 + 0.5) / bins as f64);
    let (x1, x2) = (c[0].min(c[2]), c[0].max(c[2]));
    let (y1, y2) = (c[1].min(c[3]), c[1].max(c[3]));
    let swapped = c[0] > c[2] || c[1] > c[3];
    Ok((BBox { x1, y1, x2, y2 }, swapped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(box_encode(&BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 100).unwrap(), [0, 0, 99, 99]);
        assert_eq!(box_encode(&BBox::new(0.237, 0.5, 0.9, 0.9).unwrap(), 100).unwrap()[0], 23);
        let outside = BBox { x1: -0.1, y1: 0.0, x2: 0.5, y2: 0.5 };
        assert!(box_encode(&outside, 100).is_err());
    }

    #[test]
    fn decode_examples() {
        let (b, swapped) = box_decode([0, 0, 99, 99], 100).unwrap();
        assert!(!swapped);
        for (got, want) in b.coords().iter().zip([0.005, 0.005, 0.995, 0.995]) {
            assert!((got - want).abs() < 1e-12);
        }
        let (b, _) = box_decode([50, 50, 50, 50], 100).unwrap();
        assert_eq!(b.area(), 0.0);
        assert!((b.x1 - 0.505).abs() < 1e-12);
        assert!(box_decode([0, 0, 100, 5], 100).is_err());
    }

    #[test]
    fn decode_swaps_reversed_corners() {
        let (b, swapped) = box_decode([60, 10, 20, 30], 100).unwrap();
        assert!(swapped);
        assert!(b.x1 < b.x2);
        assert!(b.validate().is_ok());
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let c = BBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        assert!((a.iou(&c) - 0.25).abs() < 1e-12);
        let z = BBox::new(0.3, 0.3, 0.3, 0.3).unwrap();
        assert_eq!(z.iou(&z), 1.0);
    }

    proptest! {
        #[test]
        fn ids_survive_decode_then_encode(ids in prop::array::uniform4(0u32..100)) {
            let sorted = [ids[0].min(ids[2]), ids[1].min(ids[3]), ids[0].max(ids[2]), ids[1].max(ids[3])];
            let (b, _) = box_decode(sorted, 100).unwrap();
            prop_assert_eq!(box_encode(&b, 100).unwrap(), sorted);
        }

        #[test]
        fn decode_of_encode_within_half_bin(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0, d in 0.0f64..=1.0) {
            let bx = BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap();
            let (back, _) = box_decode(box_encode(&bx, 100).unwrap(), 100).unwrap();
            for (x, y) in back.coords().iter().zip(bx.coords()) {
                prop_assert!((x - y).abs() <= 0.005 + 1e-12);
            }
        }
    }
}
