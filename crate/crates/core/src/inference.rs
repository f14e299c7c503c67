//! Decoding, sample aggregation and confidence maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::palette::nearest_color;
use crate::codecs::{box_decode, decode_labels, vq_decode, BBox, Codecs, ColorImage, GrayImage, LabelMap, Mask, TokenGrid};
use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::instructions::NamedColor;
use crate::model::{ops, Model};
use crate::task::Task;
use crate::vocab::{TokenKind, VocabLayout, BOS, EOS, PAD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub num_samples: usize,
    /// Caption length cap, EOS included.
    pub max_caption_len: usize,
    pub beam_size: usize,
    /// Restrict sampling to the task's token kind.
    pub vocab_mask: bool,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { temperature: 0.9, num_samples: 10, max_caption_len: 24, beam_size: 6, vocab_mask: false, seed: 0 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature <= 2.0) {
            return Err(Error::config(format!("temperature {} outside (0, 2]", self.temperature)));
        }
        if self.num_samples == 0 || self.beam_size == 0 || self.max_caption_len == 0 {
            return Err(Error::config("num_samples, beam_size and max_caption_len must be at least 1"));
        }
        Ok(())
    }
}

/// How the next token is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Argmax, ties to the lowest id. The zero-temperature limit.
    Greedy,
    Temperature(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Emitted global ids, BOS excluded.
    pub tokens: Vec<u32>,
    /// Probability of each emitted token under the distribution it was drawn from.
    pub probs: Vec<f64>,
    /// Grid shape for dense tasks.
    pub grid: Option<(usize, usize)>,
}

/// Number of tokens a task decodes, or `None` when EOS-terminated.
pub fn fixed_length(task: Task, grid: usize) -> Option<usize> {
    match task {
        Task::Semseg | Task::Res => Some(grid * grid),
        Task::Rec => Some(4),
        Task::Caption => None,
    }
}

/// Additive logit mask: PAD and BOS always banned; EOS banned for
/// fixed-length tasks; with `vocab_mask`, every kind other than the task's.
pub fn token_mask(layout: &VocabLayout, task: Task, vocab_mask: bool) -> Vec<bool> {
    let total = layout.total();
    let mut allowed = vec![true; total];
    allowed[PAD as usize] = false;
    allowed[BOS as usize] = false;
    let fixed = task != Task::Caption;
    if fixed {
        allowed[EOS as usize] = false;
    }
    if vocab_mask {
        let r = layout.range(task.output_kind());
        for (id, a) in allowed.iter_mut().enumerate() {
            let special_ok = !fixed && id as u32 == EOS;
            if !r.contains(&(id as u32)) && !special_ok {
                *a = false;
            }
        }
    }
    allowed
}

/// Softmax of `logits / t` over the allowed ids (others get probability 0).
pub fn masked_softmax(logits: &[f32], allowed: &[bool], t: f64) -> Vec<f64> {
    let mut row: Vec<f64> =
        logits.iter().zip(allowed).map(|(&l, &a)| if a { l as f64 / t } else { f64::NEG_INFINITY }).collect();
    ops::softmax_row(&mut row);
    row
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last = i;
            if r < acc {
                return i;
            }
        }
    }
    last
}

/// Autoregressive decoding from a prefix.
pub fn sample_sequence<R: Rng>(
    model: &Model<f32>,
    layout: &VocabLayout,
    prefix: &[f32],
    task: Task,
    sampling: Sampling,
    vocab_mask: bool,
    max_caption_len: usize,
    rng: &mut R,
) -> Result<DecodeResult> {
    let grid = model.config.image_size / model.config.patch_size;
    let fixed = fixed_length(task, grid);
    let cap = fixed.unwrap_or(max_caption_len).min(model.config.max_output_len);
    let allowed = token_mask(layout, task, vocab_mask);
    let mut st = model.start_decoding(prefix)?;
    let mut tok = BOS;
    let (mut tokens, mut probs) = (Vec::with_capacity(cap), Vec::with_capacity(cap));
    while tokens.len() < cap {
        let logits = model.decode_step(&mut st, tok)?;
        let (p, next) = match sampling {
            Sampling::Greedy => {
                let p = masked_softmax(&logits, &allowed, 1.0);
                let i = argmax(&p);
                (p[i], i)
            }
            Sampling::Temperature(t) => {
                let p = masked_softmax(&logits, &allowed, t);
                let i = draw(&p, rng);
                (p[i], i)
            }
        };
        tok = next as u32;
        tokens.push(tok);
        probs.push(p);
        if fixed.is_none() && tok == EOS {
            break;
        }
    }
    Ok(DecodeResult { tokens, probs, grid: task.is_dense().then_some((grid, grid)) })
}

/// Length-normalized beam search over text tokens and EOS. Returns the best
/// sequence (EOS included when emitted) and its mean log-probability.
pub fn beam_search(
    model: &Model<f32>,
    layout: &VocabLayout,
    prefix: &[f32],
    beam: usize,
    max_len: usize,
) -> Result<(Vec<u32>, f64)> {
    if beam == 0 {
        return Err(Error::config("beam size must be at least 1"));
    }
    let max_len = max_len.min(model.config.max_output_len);
    let allowed = token_mask(layout, Task::Caption, true);
    let candidates: Vec<u32> = (0..allowed.len() as u32).filter(|&i| allowed[i as usize]).collect();
    struct Hyp {
        tokens: Vec<u32>,
        logp: f64,
        state: crate::model::DecoderState<f32>,
    }
    let start = model.start_decoding(prefix)?;
    let mut alive = vec![Hyp { tokens: Vec::new(), logp: 0.0, state: start }];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    let norm = |t: &[u32], lp: f64| if t.is_empty() { f64::NEG_INFINITY } else { lp / t.len() as f64 };
    for _ in 0..max_len {
        let mut expansions: Vec<(f64, usize, u32)> = Vec::new();
        let mut states = Vec::with_capacity(alive.len());
        for (bi, h) in alive.iter_mut().enumerate() {
            let last = h.tokens.last().copied().unwrap_or(BOS);
            let logits = model.decode_step(&mut h.state, last)?;
            let lp = log_softmax(&logits);
            for &c in &candidates {
                expansions.push((h.logp + lp[c as usize], bi, c));
            }
            states.push(h.state.clone());
        }
        // best first; ties to the lower token id, then the earlier beam
        expansions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        let mut next = Vec::with_capacity(beam);
        for (lp, bi, c) in expansions {
            if next.len() >= beam {
                break;
            }
            let mut tokens = alive[bi].tokens.clone();
            tokens.push(c);
            if c == EOS || tokens.len() == max_len {
                finished.push((tokens, lp));
            } else {
                next.push(Hyp { tokens, logp: lp, state: states[bi].clone() });
            }
        }
        alive = next;
        if alive.is_empty() || finished.len() >= beam {
            break;
        }
    }
    finished.extend(alive.into_iter().map(|h| (h.tokens, h.logp)));
    // the greedy path is always a candidate, so widening the beam never
    // lowers the normalized score
    let greedy = sample_sequence(model, layout, prefix, Task::Caption, Sampling::Greedy, true, max_len, &mut ChaCha8Rng::seed_from_u64(0))?;
    let glp: f64 = greedy.probs.iter().map(|p| p.ln()).sum();
    finished.push((greedy.tokens, glp));
    let mut best = 0;
    for (i, (t, l)) in finished.iter().enumerate() {
        let (bt, bl) = &finished[best];
        let (s, bs) = (norm(t, *l), norm(bt, *bl));
        if s > bs || (s == bs && t < bt) {
            best = i;
        }
    }
    let (t, l) = finished.swap_remove(best);
    let score = norm(&t, l);
    Ok((t, score))
}

fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v as f64 - lse).collect()
}

/// Visual-token grid of a dense result; fails on any non-visual token.
pub fn visual_grid(result: &DecodeResult, layout: &VocabLayout) -> Result<TokenGrid> {
    let (rows, cols) = result.grid.ok_or_else(|| Error::invalid("result is not dense"))?;
    if result.tokens.len() != rows * cols {
        return Err(Error::invalid(format!("dense result has {} tokens for a {rows}x{cols} grid", result.tokens.len())));
    }
    let mut ids = Vec::with_capacity(rows * cols);
    for &t in &result.tokens {
        match layout.to_local(t)? {
            (TokenKind::Visual, l) => ids.push(l),
            (k, _) => return Err(Error::invalid(format!("token {t} is {k}, expected visual"))),
        }
    }
    Ok(TokenGrid { rows, cols, ids })
}

/// Per-pixel majority vote over label maps; ties go to the lowest class.
pub fn vote_labels(maps: &[LabelMap], classes: usize) -> Result<LabelMap> {
    let first = maps.first().ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    if maps.iter().any(|m| m.width != first.width || m.height != first.height) {
        return Err(Error::invalid("label maps differ in shape"));
    }
    let mut votes = vec![0u32; classes.max(1)];
    let mut out = Vec::with_capacity(first.labels.len());
    for i in 0..first.labels.len() {
        votes.iter_mut().for_each(|v| *v = 0);
        for m in maps {
            let l = m.labels[i] as usize;
            if l >= votes.len() {
                votes.resize(l + 1, 0);
            }
            votes[l] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        out.push(best as u16);
    }
    LabelMap::new(first.width, first.height, out)
}

pub fn aggregate_segmentation(results: &[DecodeResult], codecs: &Codecs) -> Result<LabelMap> {
    let maps = results
        .iter()
        .map(|r| Ok(decode_labels(&vq_decode(&visual_grid(r, &codecs.layout)?, &codecs.codebook)?, &codecs.palette)))
        .collect::<Result<Vec<_>>>()?;
    vote_labels(&maps, codecs.palette.class_count())
}

/// Index maximizing the mean pairwise score against the others; ties to
/// the lowest index.
fn mutual_argmax<T>(items: &[T], score: impl Fn(&T, &T) -> f64) -> Option<usize> {
    let n = items.len();
    if n == 0 {
        return None;
    }
    if n == 1 {
        return Some(0);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..n {
        let s = (0..n).filter(|&j| j != i).map(|j| score(&items[i], &items[j])).sum::<f64>() / (n - 1) as f64;
        if s > best.1 {
            best = (i, s);
        }
    }
    Some(best.0)
}

/// Mask with the highest mean IoU against the other masks.
pub fn select_mask(masks: &[Mask]) -> Option<usize> {
    mutual_argmax(masks, |a, b| a.iou(b).unwrap_or(0.0))
}

pub fn select_box(boxes: &[BBox]) -> Option<usize> {
    mutual_argmax(boxes, |a, b| a.iou(b))
}

/// Binary mask from a decoded RES image: pixels nearer to `color` than to black.
pub fn res_mask(img: &ColorImage, color: NamedColor) -> Mask {
    let palette = [color.rgb(), [0, 0, 0]];
    Mask {
        width: img.width(),
        height: img.height(),
        data: img.pixels().iter().map(|&c| nearest_color(&palette, c) == 0).collect(),
    }
}

/// Named colors mentioned in an instruction, in order of appearance.
pub fn mentioned_colors(instruction: &str) -> Vec<NamedColor> {
    let mut found: Vec<(usize, NamedColor)> = Vec::new();
    let lower = instruction.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    for (i, w) in words.iter().enumerate() {
        if let Some(c) = NamedColor::from_name(w) {
            if !found.iter().any(|(_, f)| *f == c) {
                found.push((i, c));
            }
        }
    }
    found.into_iter().map(|(_, c)| c).collect()
}

/// The fill color of a RES output: among `candidates` (all named colors when
/// empty), the one that claims the most decoded pixels; ties to the earlier.
pub fn infer_fill_color(imgs: &[ColorImage], candidates: &[NamedColor]) -> NamedColor {
    let cands: Vec<NamedColor> = if candidates.is_empty() { NamedColor::ALL.to_vec() } else { candidates.to_vec() };
    let mut palette: Vec<[u8; 3]> = cands.iter().map(|c| c.rgb()).collect();
    palette.push([0, 0, 0]);
    let mut counts = vec![0usize; cands.len()];
    for img in imgs {
        for &p in img.pixels() {
            let i = nearest_color(&palette, p);
            if i < cands.len() {
                counts[i] += 1;
            }
        }
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    cands[best]
}

/// Per-pixel confidence in (0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        }
    }
}

/// Token probabilities arranged on the grid and upsampled by `upscale`
/// with nearest-neighbor.
pub fn confidence_map(result: &DecodeResult, upscale: usize) -> Result<ConfidenceMap> {
    let (rows, cols) = result.grid.ok_or_else(|| Error::invalid("confidence maps need a dense result"))?;
    if result.probs.len() != rows * cols {
        return Err(Error::invalid(format!("{} probabilities for a {rows}x{cols} grid", result.probs.len())));
    }
    let (w, h) = (cols * upscale, rows * upscale);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            values.push(result.probs[(y / upscale) * cols + x / upscale]);
        }
    }
    Ok(ConfidenceMap { width: w, height: h, values })
}

/// Final prediction of one task.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskOutput {
    Labels(LabelMap),
    Mask { mask: Mask, color: NamedColor },
    Box(BBox),
    Caption(String),
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub output: TaskOutput,
    pub confidence: Option<ConfidenceMap>,
    /// Samples dropped because they contained tokens of the wrong kind.
    pub skipped: usize,
    pub samples: Vec<DecodeResult>,
}

/// `num_samples` independent draws, computed in parallel and returned in
/// sample order.
pub fn sample_many(
    model: &Model<f32>,
    layout: &VocabLayout,
    prefix: &[f32],
    task: Task,
    cfg: &DecodeConfig,
    n: usize,
) -> Result<Vec<DecodeResult>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
            sample_sequence(
                model,
                layout,
                prefix,
                task,
                Sampling::Temperature(cfg.temperature),
                cfg.vocab_mask,
                cfg.max_caption_len,
                &mut rng,
            )
        })
        .collect()
}

fn rec_box(r: &DecodeResult, codecs: &Codecs) -> Result<BBox> {
    if r.tokens.len() != 4 {
        return Err(Error::invalid("box needs 4 tokens"));
    }
    let mut ids = [0u32; 4];
    for (o, &t) in ids.iter_mut().zip(&r.tokens) {
        match codecs.layout.to_local(t)? {
            (TokenKind::Positional, l) => *o = l,
            (k, _) => return Err(Error::invalid(format!("token {t} is {k}, expected positional"))),
        }
    }
    Ok(box_decode(ids, codecs.bins())?.0)
}

/// Runs one task end to end on an image and a free-form instruction.
pub fn run_task(
    model: &Model<f32>,
    codecs: &Codecs,
    image: &ColorImage,
    instruction: &str,
    task: Task,
    color: Option<NamedColor>,
    cfg: &DecodeConfig,
) -> Result<Prediction> {
    cfg.validate()?;
    let ids = codecs.bpe.encode(instruction);
    let prefix = model.prefix(image, &ids)?;
    if task == Task::Caption {
        let (tokens, _) = beam_search(model, &codecs.layout, &prefix, cfg.beam_size, cfg.max_caption_len)?;
        let text = caption_text(&tokens, codecs)?;
        return Ok(Prediction { output: TaskOutput::Caption(text), confidence: None, skipped: 0, samples: Vec::new() });
    }
    let samples = sample_many(model, &codecs.layout, &prefix, task, cfg, cfg.num_samples)?;
    let up = model.config.patch_size;
    let mut skipped = 0;
    let output;
    let mut confidence = None;
    match task {
        Task::Semseg => {
            let mut maps = Vec::new();
            for r in &samples {
                match visual_grid(r, &codecs.layout).and_then(|g| vq_decode(&g, &codecs.codebook)) {
                    Ok(img) => {
                        if confidence.is_none() {
                            confidence = Some(confidence_map(r, up)?);
                        }
                        maps.push(decode_labels(&img, &codecs.palette));
                    }
                    Err(_) => skipped += 1,
                }
            }
            let labels = if maps.is_empty() {
                let s = model.config.image_size;
                LabelMap::new(s, s, vec![0; s * s])?
            } else {
                vote_labels(&maps, codecs.palette.class_count())?
            };
            output = TaskOutput::Labels(labels);
        }
        Task::Res => {
            let mut imgs = Vec::new();
            let mut kept = Vec::new();
            for (i, r) in samples.iter().enumerate() {
                match visual_grid(r, &codecs.layout).and_then(|g| vq_decode(&g, &codecs.codebook)) {
                    Ok(img) => {
                        imgs.push(img);
                        kept.push(i);
                    }
                    Err(_) => skipped += 1,
                }
            }
            let color = color.unwrap_or_else(|| infer_fill_color(&imgs, &mentioned_colors(instruction)));
            let masks: Vec<Mask> = imgs.iter().map(|img| res_mask(img, color)).collect();
            let s = model.config.image_size;
            let mask = match select_mask(&masks) {
                Some(i) => {
                    confidence = Some(confidence_map(&samples[kept[i]], up)?);
                    masks[i].clone()
                }
                None => Mask::empty(s, s),
            };
            output = TaskOutput::Mask { mask, color };
        }
        Task::Rec => {
            let mut boxes = Vec::new();
            for r in &samples {
                match rec_box(r, codecs) {
                    Ok(b) => boxes.push(b),
                    Err(_) => skipped += 1,
                }
            }
            let b = select_box(&boxes).map(|i| boxes[i]).unwrap_or(BBox { x1: 0.0, y1: 0.0, x2: 0.0, y2: 0.0 });
            output = TaskOutput::Box(b);
        }
        Task::Caption => unreachable!(),
    }
    // token probabilities are meaningful even when no sample decoded cleanly
    if confidence.is_none() && task.is_dense() {
        if let Some(r) = samples.first() {
            confidence = Some(confidence_map(r, up)?);
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} of {} {task} samples contained tokens of the wrong kind", samples.len());
    }
    Ok(Prediction { output, confidence, skipped, samples })
}

/// Caption string from emitted tokens: text tokens up to EOS; other kinds are dropped.
pub fn caption_text(tokens: &[u32], codecs: &Codecs) -> Result<String> {
    let mut local = Vec::new();
    for &t in tokens {
        if t == EOS {
            break;
        }
        if let (TokenKind::Text, l) = codecs.layout.to_local(t)? {
            local.push(l);
        }
    }
    codecs.bpe.decode(&local)
}
