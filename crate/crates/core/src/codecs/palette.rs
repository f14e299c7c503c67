//! Class-color palette and label map codec.

use serde::{Deserialize, Serialize};

use super::image::ColorImage;
use crate::error::{Error, Result};

pub const MAX_CLASSES: usize = 4096;

/// Distinct RGB colors spread on a regular grid over the RGB cube.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

impl Palette {
    /// Lexicographic enumeration of an `s`×`s`×`s` level grid, with `s` the
    /// smallest integer whose cube covers `k`. The first `k` colors are kept.
    pub fn for_classes(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_CLASSES {
            return Err(Error::config(format!("class count must be in 1..={MAX_CLASSES}, got {k}")));
        }
        let mut s = 1usize;
        while s * s * s < k {
            s += 1;
        }
        let levels: Vec<u8> = if s == 1 {
            vec![0]
        } else {
            (0..s).map(|i| ((i * 255) as f64 / (s - 1) as f64).round() as u8).collect()
        };
        let mut colors = Vec::with_capacity(k);
        'outer: for &r in &levels {
            for &g in &levels {
                for &b in &levels {
                    if colors.len() == k {
                        break 'outer;
                    }
                    colors.push([r, g, b]);
                }
            }
        }
        Ok(Palette { colors })
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn class_count(&self) -> usize {
        self.colors.len()
    }

    /// Nearest palette entry by squared RGB distance; ties go to the lower index.
    pub fn nearest(&self, c: [u8; 3]) -> usize {
        nearest_color(&self.colors, c)
    }
}

/// Index of the color in `colors` nearest to `c`, lowest index on ties.
pub fn nearest_color(colors: &[[u8; 3]], c: [u8; 3]) -> usize {
    let mut best = 0;
    let mut best_d = u32::MAX;
    for (i, p) in colors.iter().enumerate() {
        let d: u32 = (0..3)
            .map(|ch| {
                let diff = c[ch] as i32 - p[ch] as i32;
                (diff * diff) as u32
            })
            .sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Per-pixel semantic class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "label buffer of {} does not match {width}x{height}",
                labels.len()
            )));
        }
        Ok(LabelMap { width, height, labels })
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }
}

pub fn encode_labels(map: &LabelMap, palette: &Palette) -> Result<ColorImage> {
    let k = palette.class_count();
    let rgb = map
        .labels
        .iter()
        .map(|&l| {
            palette
                .colors
                .get(l as usize)
                .copied()
                .ok_or_else(|| Error::invalid(format!("label {l} outside palette of {k} classes")))
        })
        .collect::<Result<Vec<_>>>()?;
    ColorImage::from_pixels(map.width, map.height, rgb)
}

pub fn decode_labels(img: &ColorImage, palette: &Palette) -> LabelMap {
    LabelMap {
        width: img.width(),
        height: img.height(),
        labels: img.pixels().iter().map(|&c| palette.nearest(c) as u16).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_palettes() {
        assert_eq!(Palette::for_classes(1).unwrap().colors(), &[[0, 0, 0]]);
        assert_eq!(
            Palette::for_classes(4).unwrap().colors(),
            &[[0, 0, 0], [0, 0, 255], [0, 255, 0], [0, 255, 255]]
        );
        let eight = Palette::for_classes(8).unwrap();
        for c in eight.colors() {
            assert!(c.iter().all(|&v| v == 0 || v == 255));
        }
        assert_eq!(eight.colors().len(), 8);
    }

    #[test]
    fn three_level_grid_uses_midpoint_128() {
        let p = Palette::for_classes(27).unwrap();
        assert_eq!(p.colors()[1], [0, 0, 128]);
        assert_eq!(p.colors()[26], [255, 255, 255]);
    }

    #[test]
    fn out_of_range_class_count() {
        assert!(Palette::for_classes(0).is_err());
        assert!(Palette::for_classes(4097).is_err());
        assert!(Palette::for_classes(4096).is_ok());
    }

    #[test]
    fn palettes_distinct_and_deterministic_up_to_64() {
        for k in 1..=64 {
            let p = Palette::for_classes(k).unwrap();
            assert_eq!(p, Palette::for_classes(k).unwrap());
            let mut c = p.colors().to_vec();
            c.sort();
            c.dedup();
            assert_eq!(c.len(), k);
        }
    }

    #[test]
    fn encode_and_decode_examples() {
        let m = LabelMap::new(1, 1, vec![0]).unwrap();
        let img = encode_labels(&m, &Palette::for_classes(2).unwrap()).unwrap();
        assert_eq!(img.pixels(), &[[0, 0, 0]]);

        let m = LabelMap::new(2, 1, vec![0, 1]).unwrap();
        let img = encode_labels(&m, &Palette::for_classes(4).unwrap()).unwrap();
        assert_eq!(img.pixels(), &[[0, 0, 0], [0, 0, 255]]);

        let bad = LabelMap::new(1, 1, vec![4]).unwrap();
        assert!(encode_labels(&bad, &Palette::for_classes(4).unwrap()).is_err());
    }

    #[test]
    fn nearest_color_arithmetic() {
        let bw = [[0, 0, 0], [255, 255, 255]];
        // 10²+250²+3² = 62609 against 245²+5²+252² = 123554
        assert_eq!(nearest_color(&bw, [10, 250, 3]), 0);
    }

    #[test]
    fn equidistant_pixel_goes_to_lower_index() {
        // both colors sit at squared distance 50 from the pixel
        let colors = [[10, 0, 0], [0, 10, 0]];
        let px = [5, 5, 0];
        let d: Vec<i32> = colors
            .iter()
            .map(|c| (0..3).map(|i| (c[i] as i32 - px[i] as i32).pow(2)).sum())
            .collect();
        assert_eq!(d[0], d[1]);
        assert_eq!(nearest_color(&colors, px), 0);
        let swapped = [colors[1], colors[0]];
        assert_eq!(nearest_color(&swapped, px), 0);
    }

    proptest! {
        #[test]
        fn label_roundtrip(k in 1usize..40, w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            let p = Palette::for_classes(k).unwrap();
            let labels = (0..w * h)
                .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 33) % k as u64) as u16)
                .collect();
            let m = LabelMap::new(w, h, labels).unwrap();
            let img = encode_labels(&m, &p).unwrap();
            prop_assert_eq!(decode_labels(&img, &p), m);
        }

        #[test]
        fn nearest_matches_brute_force(k in 1usize..70, r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
            let p = Palette::for_classes(k).unwrap();
            let dist = |c: &[u8; 3]| -> i64 {
                (c[0] as i64 - r as i64).pow(2) + (c[1] as i64 - g as i64).pow(2) + (c[2] as i64 - b as i64).pow(2)
            };
            let min = p.colors().iter().map(dist).min().unwrap();
            let expect = p.colors().iter().position(|c| dist(c) == min).unwrap();
            prop_assert_eq!(p.nearest([r, g, b]), expect);
        }
    }
}
