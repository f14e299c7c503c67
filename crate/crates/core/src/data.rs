//! Synthetic "shapes world" scenes, target construction, task sampling and
//! the JSON-lines manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codecs::{
    box_decode, box_encode, encode_labels, vq_encode, BBox, Codecs, ColorImage, LabelMap, Mask,
};
use crate::error::{Error, Result};
use crate::instructions::{render, Corpus, NamedColor, SplitFilter, COLOR, OBJECT};
use crate::task::Task;
use crate::vocab::{TokenKind, VocabLayout, BOS, EOS};

/// Semantic classes of the label map: background plus one per shape.
pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn class(self) -> u16 {
        match self {
            Shape::Circle => 1,
            Shape::Square => 2,
            Shape::Triangle => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    /// Whether the pixel center (px, py) falls inside the shape.
    fn contains(self, cx: f64, cy: f64, h: f64, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - cx, py - cy);
        match self {
            Shape::Square => dx.abs() <= h && dy.abs() <= h,
            Shape::Circle => dx * dx + dy * dy <= h * h,
            Shape::Triangle => dy >= -h && dy <= h && dx.abs() <= (dy + h) / 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

impl Size {
    pub fn name(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub canvas: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Half-extent in pixels of small and large objects.
    pub small_extent: f64,
    pub large_extent: f64,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { canvas: 32, min_objects: 1, max_objects: 3, small_extent: 3.0, large_extent: 5.5, max_attempts: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: NamedColor,
    pub size: Size,
    pub center: (i32, i32),
    /// Article-free referring expression unique within the scene.
    pub expression: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub background: [u8; 3],
    pub objects: Vec<SceneObject>,
    pub image: ColorImage,
    pub labels: LabelMap,
    pub masks: Vec<Mask>,
    pub boxes: Vec<BBox>,
    pub caption: String,
}

/// Per-index seed so scenes can be generated independently and in any order.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rasterize(shape: Shape, center: (i32, i32), h: f64, canvas: usize) -> Mask {
    let mut m = Mask::empty(canvas, canvas);
    for y in 0..canvas {
        for x in 0..canvas {
            m.data[y * canvas + x] =
                shape.contains(center.0 as f64, center.1 as f64, h, x as f64 + 0.5, y as f64 + 0.5);
        }
    }
    m
}

/// Tight normalized bounds of a non-empty mask.
pub fn mask_bounds(m: &Mask) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..m.height {
        for x in 0..m.width {
            if m.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| BBox {
        x1: x0 as f64 / m.width as f64,
        y1: y0 as f64 / m.height as f64,
        x2: (x1 + 1) as f64 / m.width as f64,
        y2: (y1 + 1) as f64 / m.height as f64,
    })
}

fn too_close(a: &Mask, b: &Mask) -> bool {
    let (w, h) = (a.width as i64, a.height as i64);
    for y in 0..h {
        for x in 0..w {
            if !a.data[(y * w + x) as usize] {
                continue;
            }
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h && b.data[(ny * w + nx) as usize] {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Shortest article-free expressions that single out each object: color and
/// shape, then a size qualifier, then a left-to-right position qualifier.
/// Returns `None` when positions cannot disambiguate.
fn referring_expressions(objects: &[(Shape, NamedColor, Size, (i32, i32))]) -> Option<Vec<String>> {
    let mut out = Vec::with_capacity(objects.len());
    for &(shape, color, size, center) in objects {
        let base = format!("{} {}", color.name(), shape.name());
        let group: Vec<usize> =
            (0..objects.len()).filter(|&j| objects[j].0 == shape && objects[j].1 == color).collect();
        if group.len() == 1 {
            out.push(base);
            continue;
        }
        if group.iter().filter(|&&j| objects[j].2 == size).count() == 1 {
            out.push(format!("{} {base}", size.name()));
            continue;
        }
        let mut xs: Vec<i32> = group.iter().map(|&j| objects[j].3 .0).collect();
        xs.sort();
        if xs.windows(2).any(|w| w[1] - w[0] < 2) {
            return None;
        }
        let rank = xs.iter().position(|&x| x == center.0)?;
        let pos = match (group.len(), rank) {
            (_, 0) => "on the left",
            (n, r) if r + 1 == n => "on the right",
            _ => "in the middle",
        };
        out.push(format!("{base} {pos}"));
    }
    Some(out)
}

pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    if cfg.min_objects == 0 || cfg.min_objects > cfg.max_objects {
        return Err(Error::config("scene object count range is empty"));
    }
    let canvas = cfg.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let background = {
        let g = rng.gen_range(20u8..=70);
        [g, g.saturating_add(rng.gen_range(0..=20)), g.saturating_add(rng.gen_range(0..=20))]
    };

    for _ in 0..cfg.max_attempts {
        let mut placed: Vec<(Shape, NamedColor, Size, (i32, i32))> = Vec::new();
        let mut masks: Vec<Mask> = Vec::new();
        let mut ok = true;
        for _ in 0..count {
            let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
            let color = NamedColor::ALL[rng.gen_range(0..NamedColor::ALL.len())];
            let size = if rng.gen_bool(0.5) { Size::Small } else { Size::Large };
            let h = match size {
                Size::Small => cfg.small_extent,
                Size::Large => cfg.large_extent,
            };
            let margin = h.ceil() as i32 + 1;
            if 2 * margin > canvas as i32 {
                return Err(Error::config("objects do not fit on the canvas"));
            }
            let center = (rng.gen_range(margin..=canvas as i32 - margin), rng.gen_range(margin..=canvas as i32 - margin));
            let mask = rasterize(shape, center, h, canvas);
            if mask.area() == 0 || masks.iter().any(|m| too_close(&mask, m)) {
                ok = false;
                break;
            }
            placed.push((shape, color, size, center));
            masks.push(mask);
        }
        if !ok {
            continue;
        }
        let Some(expressions) = referring_expressions(&placed) else { continue };

        // left-to-right order for captions and stable object indices
        let mut order: Vec<usize> = (0..placed.len()).collect();
        order.sort_by_key(|&i| (placed[i].3 .0, placed[i].3 .1));

        let mut image = ColorImage::new(canvas, canvas, background)?;
        let mut labels = vec![0u16; canvas * canvas];
        let mut objects = Vec::with_capacity(order.len());
        let mut sorted_masks = Vec::with_capacity(order.len());
        let mut boxes = Vec::with_capacity(order.len());
        for &i in &order {
            let (shape, color, size, center) = placed[i];
            for (p, &inside) in masks[i].data.iter().enumerate() {
                if inside {
                    image.set(p % canvas, p / canvas, color.rgb());
                    labels[p] = shape.class();
                }
            }
            boxes.push(mask_bounds(&masks[i]).expect("non-empty mask"));
            sorted_masks.push(masks[i].clone());
            objects.push(SceneObject { shape, color, size, center, expression: expressions[i].clone() });
        }
        let caption = objects
            .iter()
            .map(|o| format!("a {} {}", o.color.name(), o.shape.name()))
            .collect::<Vec<_>>()
            .join(" and ");
        return Ok(Scene {
            seed,
            background,
            objects,
            image,
            labels: LabelMap::new(canvas, canvas, labels)?,
            masks: sorted_masks,
            boxes,
            caption,
        });
    }
    Err(Error::config(format!("scene placement failed after {} attempts", cfg.max_attempts)))
}

/// Scenes `0..count` derived from `base_seed`, generated in parallel.
pub fn generate_scenes(base_seed: u64, count: usize, cfg: &SceneConfig) -> Result<Vec<Scene>> {
    use rayon::prelude::*;
    (0..count as u64).into_par_iter().map(|i| generate_scene(derive_seed(base_seed, i), cfg)).collect()
}

/// Two-color RES target: the object mask in `color` on black.
pub fn res_target_image(mask: &Mask, color: NamedColor) -> Result<ColorImage> {
    let px = mask.data.iter().map(|&b| if b { color.rgb() } else { [0, 0, 0] }).collect();
    ColorImage::from_pixels(mask.width, mask.height, px)
}

/// Ground truth attached to a sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Truth {
    Labels(LabelMap),
    Mask { mask: Mask, color: NamedColor },
    Box(BBox),
    Caption(String),
    /// Pre-tokenized external record without decodable ground truth.
    Tokens,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ColorImage,
    pub task: Task,
    pub instruction: String,
    /// Global ids framed `BOS … EOS`.
    pub target: Vec<u32>,
    pub truth: Truth,
}

fn frame(layout: &VocabLayout, kind: TokenKind, local: &[u32]) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(local.len() + 2);
    out.push(BOS);
    for &id in local {
        out.push(layout.to_global(kind, id)?);
    }
    out.push(EOS);
    Ok(out)
}

/// Local token ids for a ground truth under the given codecs.
pub fn tokenize_truth(task: Task, truth: &Truth, codecs: &Codecs) -> Result<Vec<u32>> {
    match (task, truth) {
        (Task::Semseg, Truth::Labels(map)) => Ok(vq_encode(&encode_labels(map, &codecs.palette)?, &codecs.codebook)?.ids),
        (Task::Res, Truth::Mask { mask, color }) => Ok(vq_encode(&res_target_image(mask, *color)?, &codecs.codebook)?.ids),
        (Task::Rec, Truth::Box(b)) => Ok(box_encode(b, codecs.bins())?.to_vec()),
        (Task::Caption, Truth::Caption(c)) => Ok(codecs.bpe.encode(c)),
        (t, _) => Err(Error::invalid(format!("ground truth does not match task {t}"))),
    }
}

/// Builds one sample for `task` from a scene without tokenizing its target
/// (`target` is empty). RES/REC pick a referred object (and RES a color)
/// from `rng`; the instruction is drawn from the corpus under `filter`.
pub fn build_sample<R: Rng + ?Sized>(
    task: Task,
    scene: &Scene,
    corpus: &Corpus,
    filter: SplitFilter,
    rng: &mut R,
) -> Result<Sample> {
    let template = corpus.sample_instruction(task, rng, filter)?;
    let (instruction, truth) = match task {
        Task::Semseg | Task::Caption => {
            let truth = if task == Task::Semseg {
                Truth::Labels(scene.labels.clone())
            } else {
                Truth::Caption(scene.caption.clone())
            };
            (render(template, &BTreeMap::new())?, truth)
        }
        Task::Res => {
            let i = rng.gen_range(0..scene.objects.len());
            let color = NamedColor::ALL[rng.gen_range(0..NamedColor::ALL.len())];
            let bindings = BTreeMap::from([(OBJECT, scene.objects[i].expression.as_str()), (COLOR, color.name())]);
            (render(template, &bindings)?, Truth::Mask { mask: scene.masks[i].clone(), color })
        }
        Task::Rec => {
            let i = rng.gen_range(0..scene.objects.len());
            let bindings = BTreeMap::from([(OBJECT, scene.objects[i].expression.as_str())]);
            (render(template, &bindings)?, Truth::Box(scene.boxes[i]))
        }
    };
    Ok(Sample {
        id: format!("{:016x}-{task}", scene.seed),
        image: scene.image.clone(),
        task,
        instruction,
        target: Vec::new(),
        truth,
    })
}

/// Fills in the framed target of a sample built by [`build_sample`].
pub fn tokenize_sample(sample: &mut Sample, codecs: &Codecs) -> Result<()> {
    if !codecs.codebook.is_fitted() {
        return Err(Error::Prerequisite("patch codebook has not been fitted".into()));
    }
    let local = tokenize_truth(sample.task, &sample.truth, codecs)?;
    sample.target = frame(&codecs.layout, sample.task.output_kind(), &local)?;
    Ok(())
}

/// [`build_sample`] followed by [`tokenize_sample`].
pub fn build_target<R: Rng + ?Sized>(
    task: Task,
    scene: &Scene,
    codecs: &Codecs,
    corpus: &Corpus,
    filter: SplitFilter,
    rng: &mut R,
) -> Result<Sample> {
    if !codecs.codebook.is_fitted() {
        return Err(Error::Prerequisite("patch codebook has not been fitted".into()));
    }
    let mut s = build_sample(task, scene, corpus, filter, rng)?;
    tokenize_sample(&mut s, codecs)?;
    Ok(s)
}

/// Task sampling weights in `Task::ALL` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRatios {
    pub semseg: f64,
    pub res: f64,
    pub rec: f64,
    pub caption: f64,
}

impl Default for TaskRatios {
    fn default() -> Self {
        TaskRatios { semseg: 0.45, res: 0.25, rec: 0.15, caption: 0.15 }
    }
}

impl TaskRatios {
    pub fn weights(&self) -> [f64; 4] {
        [self.semseg, self.res, self.rec, self.caption]
    }

    pub fn only(task: Task) -> Self {
        let mut w = [0.0; 4];
        w[task.index()] = 1.0;
        TaskRatios { semseg: w[0], res: w[1], rec: w[2], caption: w[3] }
    }

    /// Weights rescaled to sum to one.
    pub fn normalized(&self) -> Result<[f64; 4]> {
        let w = self.weights();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config(format!("task ratios must be non-negative, got {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::config("task ratios are all zero"));
        }
        Ok(w.map(|v| v / sum))
    }

    /// The same ratios with REC and captioning removed (image-output-only training).
    pub fn image_only(&self) -> Self {
        TaskRatios { rec: 0.0, caption: 0.0, ..*self }
    }
}

pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, ratios: &TaskRatios) -> Result<Task> {
    let w = ratios.normalized()?;
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (task, p) in Task::ALL.into_iter().zip(w) {
        acc += p;
        if r < acc && p > 0.0 {
            return Ok(task);
        }
    }
    // floating-point slack: fall back to the last task with weight
    Ok(Task::ALL.into_iter().zip(w).filter(|(_, p)| *p > 0.0).last().expect("non-zero weight").0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub patch_size: usize,
    pub kmeans_iters: usize,
    /// Scenes used to build the BPE corpus (captions use all scenes).
    pub bpe_scenes: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { patch_size: 4, kmeans_iters: 20, bpe_scenes: 64 }
    }
}

/// Fits the patch codebook on every dense target the scenes can produce
/// (semantic maps and RES masks in each named color) and the BPE model on
/// captions plus rendered instructions.
pub fn fit_codecs(
    scenes: &[Scene],
    layout: VocabLayout,
    cfg: &CodecConfig,
    corpus: &Corpus,
    seed: u64,
) -> Result<(Codecs, crate::codecs::FitReport)> {
    let palette = crate::codecs::Palette::for_classes(NUM_CLASSES)?;
    let mut images = Vec::new();
    for s in scenes {
        images.push(encode_labels(&s.labels, &palette)?);
        for m in &s.masks {
            for c in NamedColor::ALL {
                images.push(res_target_image(m, c)?);
            }
        }
    }
    let (codebook, report) =
        crate::codecs::fit_patch_codebook(&images, layout.counts().n_visual, cfg.patch_size, cfg.kmeans_iters, seed)?;

    let mut texts: Vec<String> = scenes.iter().map(|s| s.caption.clone()).collect();
    for (k, s) in scenes.iter().take(cfg.bpe_scenes).enumerate() {
        for (j, v) in corpus.variants.iter().enumerate() {
            let o = &s.objects[j % s.objects.len()];
            let color = NamedColor::ALL[(k + j) % NamedColor::ALL.len()];
            let text = v.text.replace("{object}", &o.expression).replace("{color}", color.name());
            texts.push(text);
        }
    }
    let bpe = crate::codecs::BpeModel::train(&texts, layout.counts().n_text)?;
    Ok((Codecs::new(layout, palette, codebook, bpe)?, report))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum TargetRecord {
    /// Path of a palette-encoded label image.
    Labels(String),
    Mask { path: String, color: NamedColor },
    Box([f64; 4]),
    Caption(String),
    Visual(Vec<u32>),
    Positional(Vec<u32>),
    Text(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub image: String,
    pub task: Task,
    pub instruction: String,
    pub target: TargetRecord,
}

/// Writes samples as JSON lines plus the referenced image files under `dir`.
/// Record order follows `samples`.
pub fn write_manifest(samples: &[Sample], palette: &crate::codecs::Palette, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("truth"))?;
    let mut out = BufWriter::new(File::create(path)?);
    for s in samples {
        let image = format!("images/{}.ppm", s.id);
        s.image.save(dir.join(&image))?;
        let target = match &s.truth {
            Truth::Labels(map) => {
                let p = format!("truth/{}.ppm", s.id);
                encode_labels(map, palette)?.save(dir.join(&p))?;
                TargetRecord::Labels(p)
            }
            Truth::Mask { mask, color } => {
                let p = format!("truth/{}.pgm", s.id);
                mask.to_gray().save(dir.join(&p))?;
                TargetRecord::Mask { path: p, color: *color }
            }
            Truth::Box(b) => TargetRecord::Box(b.coords()),
            Truth::Caption(c) => TargetRecord::Caption(c.clone()),
            Truth::Tokens => {
                let local: Vec<u32> = s.target[1..s.target.len().saturating_sub(1)].to_vec();
                match s.task.output_kind() {
                    TokenKind::Visual => TargetRecord::Visual(local),
                    TokenKind::Positional => TargetRecord::Positional(local),
                    _ => TargetRecord::Text(local),
                }
            }
        };
        let rec = ManifestRecord { id: s.id.clone(), image, task: s.task, instruction: s.instruction.clone(), target };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a manifest, loading images and validating every record. Raw
/// ground truth is tokenized with `codecs`; pre-tokenized records are
/// checked against the vocabulary layout.
pub fn read_manifest(path: impl AsRef<Path>, codecs: &Codecs) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let dir: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Manifest { path: path.to_path_buf(), line: i + 1, msg };
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let sample = load_record(&rec, &dir, codecs).map_err(|e| err(e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

fn load_record(rec: &ManifestRecord, dir: &Path, codecs: &Codecs) -> Result<Sample> {
    let layout = &codecs.layout;
    let image = ColorImage::load(dir.join(&rec.image))?;
    let pre_tokenized = |kind: TokenKind, ids: &[u32]| -> Result<Vec<u32>> {
        if kind != rec.task.output_kind() {
            return Err(Error::invalid(format!("{kind} tokens are not legal for task {}", rec.task)));
        }
        frame(layout, kind, ids)
    };
    let (truth, target) = match &rec.target {
        TargetRecord::Visual(ids) => (Truth::Tokens, pre_tokenized(TokenKind::Visual, ids)?),
        TargetRecord::Positional(ids) => {
            let target = pre_tokenized(TokenKind::Positional, ids)?;
            let truth = match <[u32; 4]>::try_from(ids.as_slice()) {
                Ok(four) => Truth::Box(box_decode(four, codecs.bins())?.0),
                Err(_) => return Err(Error::invalid("positional target must have exactly 4 ids")),
            };
            (truth, target)
        }
        TargetRecord::Text(ids) => {
            let target = pre_tokenized(TokenKind::Text, ids)?;
            (Truth::Caption(codecs.bpe.decode(ids)?), target)
        }
        raw => {
            let truth = match raw {
                TargetRecord::Labels(p) => {
                    let img = ColorImage::load(dir.join(p))?;
                    Truth::Labels(crate::codecs::decode_labels(&img, &codecs.palette))
                }
                TargetRecord::Mask { path, color } => {
                    let g = crate::codecs::GrayImage::read_pgm(File::open(dir.join(path))?)?;
                    let mask = Mask { width: g.width, height: g.height, data: g.data.iter().map(|&v| v >= 128).collect() };
                    Truth::Mask { mask, color: *color }
                }
                TargetRecord::Box(c) => Truth::Box(BBox::new(c[0], c[1], c[2], c[3])?),
                TargetRecord::Caption(c) => Truth::Caption(c.clone()),
                _ => unreachable!("pre-tokenized records handled above"),
            };
            let local = tokenize_truth(rec.task, &truth, codecs)?;
            (truth, frame(layout, rec.task.output_kind(), &local)?)
        }
    };
    Ok(Sample { id: rec.id.clone(), image, task: rec.task, instruction: rec.instruction.clone(), target, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(17, &cfg).unwrap();
        let b = generate_scene(17, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(generate_scene(18, &cfg).unwrap().image, a.image);
    }

    #[test]
    fn scene_invariants_hold() {
        let cfg = SceneConfig::default();
        for s in generate_scenes(3, 200, &cfg).unwrap() {
            assert!((1..=3).contains(&s.objects.len()));
            let mut exprs: Vec<_> = s.objects.iter().map(|o| o.expression.as_str()).collect();
            exprs.sort();
            exprs.dedup();
            assert_eq!(exprs.len(), s.objects.len(), "{:?}", s.objects);
            for (i, m) in s.masks.iter().enumerate() {
                assert_eq!(mask_bounds(m).unwrap(), s.boxes[i]);
                for (j, n) in s.masks.iter().enumerate() {
                    if i != j {
                        assert_eq!(m.overlap(n).unwrap().0, 0);
                    }
                }
                // label map agrees with masks
                for (p, &inside) in m.data.iter().enumerate() {
                    if inside {
                        assert_eq!(s.labels.labels[p], s.objects[i].shape.class());
                    }
                }
            }
            assert!(!s.expressions_use_articles());
        }
    }

    impl Scene {
        fn expressions_use_articles(&self) -> bool {
            self.objects.iter().any(|o| o.expression.starts_with("a ") || o.expression.starts_with("the "))
        }
    }

    #[test]
    fn large_square_box_is_exact() {
        let m = rasterize(Shape::Square, (10, 12), 5.5, 32);
        // pixel centers within ±5.5 of the center: columns 4..=15, rows 6..=17
        let b = mask_bounds(&m).unwrap();
        assert_eq!(b, BBox { x1: 4.0 / 32.0, y1: 6.0 / 32.0, x2: 16.0 / 32.0, y2: 18.0 / 32.0 });
        assert_eq!(m.area(), 12 * 12);
    }

    #[test]
    fn single_object_caption() {
        let cfg = SceneConfig { min_objects: 1, max_objects: 1, ..Default::default() };
        for seed in 0..50 {
            let s = generate_scene(seed, &cfg).unwrap();
            let o = &s.objects[0];
            assert_eq!(s.caption, format!("a {} {}", o.color.name(), o.shape.name()));
            assert_eq!(o.expression, format!("{} {}", o.color.name(), o.shape.name()));
        }
    }

    #[test]
    fn expressions_disambiguate_duplicates() {
        let objs = [
            (Shape::Circle, NamedColor::Red, Size::Small, (5, 5)),
            (Shape::Circle, NamedColor::Red, Size::Large, (20, 20)),
            (Shape::Square, NamedColor::Blue, Size::Small, (9, 25)),
            (Shape::Square, NamedColor::Blue, Size::Small, (25, 8)),
        ];
        let e = referring_expressions(&objs).unwrap();
        assert_eq!(e, ["small red circle", "large red circle", "blue square on the left", "blue square on the right"]);
        let same_x = [
            (Shape::Circle, NamedColor::Red, Size::Small, (5, 5)),
            (Shape::Circle, NamedColor::Red, Size::Small, (5, 20)),
        ];
        assert!(referring_expressions(&same_x).is_none());
    }

    #[test]
    fn unsatisfiable_config_errors() {
        let cfg = SceneConfig { min_objects: 3, max_objects: 3, large_extent: 14.0, small_extent: 14.0, ..Default::default() };
        assert!(generate_scene(1, &cfg).is_err());
    }

    #[test]
    fn ratio_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(sample_task(&mut rng, &TaskRatios::only(Task::Semseg)).unwrap(), Task::Semseg);
        }
        let zero = TaskRatios { semseg: 0.0, res: 0.0, rec: 0.0, caption: 0.0 };
        assert!(sample_task(&mut rng, &zero).is_err());

        let n = 100_000;
        let mut counts = [0usize; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..n {
            counts[sample_task(&mut rng, &TaskRatios::default()).unwrap().index()] += 1;
        }
        for (c, p) in counts.iter().zip(TaskRatios::default().weights()) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() <= 5.0 * sigma, "{counts:?}");
        }

        let a: Vec<Task> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..20).map(|_| sample_task(&mut r, &TaskRatios::default()).unwrap()).collect()
        };
        let b: Vec<Task> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..20).map(|_| sample_task(&mut r, &TaskRatios::default()).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn normalization() {
        let r = TaskRatios { semseg: 2.0, res: 1.0, rec: 1.0, caption: 0.0 };
        let n = r.normalized().unwrap();
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(n[0], 0.5);
        assert_eq!(r.image_only().normalized().unwrap(), [2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
    }
}
