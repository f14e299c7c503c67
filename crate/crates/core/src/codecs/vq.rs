//! Patch vector quantizer.
//!
//! Dense target images are cut into non-overlapping p×p patches; each patch
//! is replaced by the index of its nearest codebook entry. The codebook is
//! fitted with k-means (k-means++ seeding, Lloyd iterations).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::ColorImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PatchCodebook {
    patch_size: usize,
    entries: Vec<f32>,
    fitted: bool,
}

/// Grid of local visual ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<u32>,
}

/// Objective (mean squared patch-to-centroid distance) after every assignment step.
#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub objectives: Vec<f64>,
    pub distinct_patches: usize,
}

impl PatchCodebook {
    /// A codebook whose entries are given directly (flattened, `V × 3p²`).
    pub fn from_entries(patch_size: usize, entries: Vec<f32>) -> Result<Self> {
        let dim = 3 * patch_size * patch_size;
        if patch_size == 0 || entries.is_empty() || entries.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "codebook buffer of {} is not a multiple of patch dim {dim}",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook entry".into()));
        }
        Ok(PatchCodebook { patch_size, entries, fitted: true })
    }

    /// Placeholder codebook that refuses to encode until replaced by a fitted one.
    pub fn unfitted(len: usize, patch_size: usize) -> Self {
        PatchCodebook { patch_size, entries: vec![0.0; len * 3 * patch_size * patch_size], fitted: false }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.entries[i * d..(i + 1) * d]
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    /// Nearest entry by squared distance, lowest index on ties.
    pub fn nearest(&self, patch: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.len() {
            let d = sq_dist(patch, self.entry(i));
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

fn sq_dist(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y as f64) * (x - y as f64)).sum()
}

fn check_divisible(img: &ColorImage, p: usize) -> Result<()> {
    if p == 0 || img.width() % p != 0 || img.height() % p != 0 {
        return Err(Error::invalid(format!(
            "image {}x{} is not divisible into {p}x{p} patches",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Raw bytes of the patch at grid cell (gx, gy): pixel rows, then channels.
fn patch_bytes(img: &ColorImage, p: usize, gx: usize, gy: usize, out: &mut Vec<u8>) {
    out.clear();
    for y in gy * p..(gy + 1) * p {
        for x in gx * p..(gx + 1) * p {
            out.extend_from_slice(&img.get(x, y));
        }
    }
}

/// All patches of `img` as normalized vectors, row-major over the grid.
pub fn image_patches(img: &ColorImage, p: usize) -> Result<Vec<Vec<f64>>> {
    check_divisible(img, p)?;
    let mut bytes = Vec::with_capacity(3 * p * p);
    let mut out = Vec::new();
    for gy in 0..img.height() / p {
        for gx in 0..img.width() / p {
            patch_bytes(img, p, gx, gy, &mut bytes);
            out.push(bytes.iter().map(|&b| b as f64 / 255.0).collect());
        }
    }
    Ok(out)
}

pub fn fit_patch_codebook(
    images: &[ColorImage],
    entries: usize,
    patch_size: usize,
    iters: usize,
    seed: u64,
) -> Result<(PatchCodebook, FitReport)> {
    if entries == 0 {
        return Err(Error::config("codebook must have at least one entry"));
    }
    let dim = 3 * patch_size * patch_size;

    // Identical patches are common (flat regions); cluster the distinct ones
    // with multiplicity weights, which is the same objective as clustering all.
    let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut bytes = Vec::with_capacity(dim);
    for img in images {
        check_divisible(img, patch_size)?;
        for gy in 0..img.height() / patch_size {
            for gx in 0..img.width() / patch_size {
                patch_bytes(img, patch_size, gx, gy, &mut bytes);
                match index.get(&bytes) {
                    Some(&i) => weights[i] += 1.0,
                    None => {
                        index.insert(bytes.clone(), points.len());
                        points.push(bytes.iter().map(|&b| b as f64 / 255.0).collect());
                        weights.push(1.0);
                    }
                }
            }
        }
    }
    if points.len() < entries {
        return Err(Error::invalid(format!(
            "need at least {entries} distinct patches, found {}",
            points.len()
        )));
    }
    let total_weight: f64 = weights.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(&points, &weights, entries, &mut rng);

    let mut assign = vec![0usize; points.len()];
    let mut dists = vec![0.0f64; points.len()];
    let mut report = FitReport { objectives: Vec::with_capacity(iters + 1), distinct_patches: points.len() };

    for _ in 0..iters {
        let obj = assign_points(&points, &weights, &centroids, &mut assign, &mut dists) / total_weight;
        report.objectives.push(obj);
        update_centroids(&points, &weights, &assign, &dists, &mut centroids);
    }
    let obj = assign_points(&points, &weights, &centroids, &mut assign, &mut dists) / total_weight;
    report.objectives.push(obj);

    let flat: Vec<f32> = centroids.iter().flatten().map(|&v| v as f32).collect();
    Ok((PatchCodebook::from_entries(patch_size, flat)?, report))
}

fn init_plus_plus(points: &[Vec<f64>], weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let pick = |rng: &mut ChaCha8Rng, w: &[f64]| -> usize {
        let total: f64 = w.iter().sum();
        let mut r = rng.gen::<f64>() * total;
        for (i, &wi) in w.iter().enumerate() {
            if wi > 0.0 {
                if r < wi {
                    return i;
                }
                r -= wi;
            }
        }
        w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
    };

    let first = pick(rng, weights);
    let mut centroids = vec![points[first].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist_f64(p, &points[first])).collect();
    while centroids.len() < k {
        let w: Vec<f64> = nearest.iter().zip(weights).map(|(d, w)| d * w).collect();
        let next = pick(rng, &w);
        let c = points[next].clone();
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist_f64(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn sq_dist_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Assigns every point to its nearest centroid; returns the weighted squared-distance sum.
fn assign_points(
    points: &[Vec<f64>],
    weights: &[f64],
    centroids: &[Vec<f64>],
    assign: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist_f64(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        assign[i] = best;
        dists[i] = best_d;
        total += best_d * weights[i];
    }
    total
}

fn update_centroids(
    points: &[Vec<f64>],
    weights: &[f64],
    assign: &[usize],
    dists: &[f64],
    centroids: &mut [Vec<f64>],
) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut mass = vec![0.0; centroids.len()];
    for ((p, &a), &w) in points.iter().zip(assign).zip(weights) {
        mass[a] += w;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += w * v;
        }
    }

    // farthest points first, stable on index for ties
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    let mut donors = order.into_iter();

    for (j, c) in centroids.iter_mut().enumerate() {
        if mass[j] > 0.0 {
            for (cv, s) in c.iter_mut().zip(&sums[j]) {
                *cv = s / mass[j];
            }
        } else if let Some(d) = donors.next() {
            c.clone_from(&points[d]);
        }
    }
}

pub fn vq_encode(img: &ColorImage, cb: &PatchCodebook) -> Result<TokenGrid> {
    if !cb.is_fitted() {
        return Err(Error::Prerequisite("patch codebook has not been fitted".into()));
    }
    let p = cb.patch_size();
    let patches = image_patches(img, p)?;
    Ok(TokenGrid {
        rows: img.height() / p,
        cols: img.width() / p,
        ids: patches.iter().map(|patch| cb.nearest(patch) as u32).collect(),
    })
}

pub fn vq_decode(grid: &TokenGrid, cb: &PatchCodebook) -> Result<ColorImage> {
    if grid.ids.len() != grid.rows * grid.cols || grid.rows == 0 || grid.cols == 0 {
        return Err(Error::invalid("token grid shape does not match its id count"));
    }
    let p = cb.patch_size();
    let mut img = ColorImage::new(grid.cols * p, grid.rows * p, [0, 0, 0])?;
    for (cell, &id) in grid.ids.iter().enumerate() {
        if id as usize >= cb.len() {
            return Err(Error::invalid(format!("visual id {id} outside codebook of {}", cb.len())));
        }
        let entry = cb.entry(id as usize);
        let (gy, gx) = (cell / grid.cols, cell % grid.cols);
        for py in 0..p {
            for px in 0..p {
                let o = (py * p + px) * 3;
                let c = [0, 1, 2].map(|ch| (entry[o + ch] * 255.0).round().clamp(0.0, 255.0) as u8);
                img.set(gx * p + px, gy * p + py, c);
            }
        }
    }
    Ok(img)
}
