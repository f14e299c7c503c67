//! Metrics, evaluation drivers and reports.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::{decode_labels, vq_decode, BBox, Codecs, LabelMap, Mask};
use crate::data::{build_target, derive_seed, Sample, Scene, Truth};
use crate::error::{Error, Result};
use crate::inference::{self, run_task, sample_many, visual_grid, DecodeConfig, DecodeResult, TaskOutput};
use crate::instructions::{render, Corpus, SplitFilter, COLOR, OBJECT};
use crate::model::Model;
use crate::task::Task;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{a} predictions for {b} ground truths")));
    }
    Ok(())
}

/// Mean IoU over classes, with intersections and unions accumulated over
/// the whole dataset. Classes absent from both sides are skipped.
pub fn mean_iou(preds: &[LabelMap], gts: &[LabelMap], classes: usize) -> Result<f64> {
    check_lengths(preds.len(), gts.len())?;
    let mut inter = vec![0u64; classes];
    let mut union = vec![0u64; classes];
    for (p, g) in preds.iter().zip(gts) {
        if p.labels.len() != g.labels.len() {
            return Err(Error::invalid("label maps differ in size"));
        }
        for (&a, &b) in p.labels.iter().zip(&g.labels) {
            let (a, b) = (a as usize, b as usize);
            if a >= classes || b >= classes {
                return Err(Error::invalid(format!("label {} outside {classes} classes", a.max(b))));
            }
            if a == b {
                inter[a] += 1;
                union[a] += 1;
            } else {
                union[a] += 1;
                union[b] += 1;
            }
        }
    }
    let present: Vec<f64> = (0..classes).filter(|&c| union[c] > 0).map(|c| inter[c] as f64 / union[c] as f64).collect();
    if present.is_empty() {
        return Err(Error::invalid("no class present in predictions or ground truth"));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Fraction of pixels labeled correctly.
pub fn pixel_accuracy(preds: &[LabelMap], gts: &[LabelMap]) -> Result<f64> {
    check_lengths(preds.len(), gts.len())?;
    let (mut hit, mut total) = (0u64, 0u64);
    for (p, g) in preds.iter().zip(gts) {
        if p.labels.len() != g.labels.len() {
            return Err(Error::invalid("label maps differ in size"));
        }
        hit += p.labels.iter().zip(&g.labels).filter(|(a, b)| a == b).count() as u64;
        total += g.labels.len() as u64;
    }
    if total == 0 {
        return Err(Error::invalid("no pixels to score"));
    }
    Ok(hit as f64 / total as f64)
}

/// Summed intersections over summed unions.
pub fn overall_iou(preds: &[Mask], gts: &[Mask]) -> Result<f64> {
    check_lengths(preds.len(), gts.len())?;
    let (mut i, mut u) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        let (a, b) = p.overlap(g)?;
        i += a;
        u += b;
    }
    if u == 0 {
        return Err(Error::invalid("all unions are empty"));
    }
    Ok(i as f64 / u as f64)
}

/// Fraction of boxes with IoU ≥ 0.5 against their ground truth.
pub fn ap50(preds: &[BBox], gts: &[BBox]) -> Result<f64> {
    check_lengths(preds.len(), gts.len())?;
    if preds.is_empty() {
        return Err(Error::invalid("no boxes to score"));
    }
    let hits = preds.iter().zip(gts).filter(|(p, g)| p.iou(g) >= 0.5).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn ngrams<'a>(words: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 with uniform weights and a brevity penalty. An order with
/// no clipped matches scores (0 + 1) / (candidate n-grams + 1).
pub fn bleu4<S: AsRef<str>, T: AsRef<str>>(candidates: &[S], references: &[T]) -> Result<f64> {
    check_lengths(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates"));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let cw: Vec<&str> = c.as_ref().split_whitespace().collect();
        let rw: Vec<&str> = r.as_ref().split_whitespace().collect();
        c_len += cw.len();
        r_len += rw.len();
        for n in 1..=4 {
            let cn = ngrams(&cw, n);
            let rn = ngrams(&rw, n);
            for (g, &k) in &cn {
                matches[n - 1] += k.min(rn.get(g).copied().unwrap_or(0));
                totals[n - 1] += k;
            }
        }
    }
    if c_len == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let p = if matches[n] == 0 { 1.0 / (totals[n] + 1) as f64 } else { matches[n] as f64 / totals[n] as f64 };
        log_p += 0.25 * p.ln();
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    Ok(bp * log_p.exp())
}

/// Majority label of each patch (ties to the lowest class).
fn patch_classes(map: &LabelMap, p: usize, classes: usize) -> Vec<u16> {
    let (gw, gh) = (map.width / p, map.height / p);
    let mut out = Vec::with_capacity(gw * gh);
    let mut votes = vec![0usize; classes.max(1)];
    for gy in 0..gh {
        for gx in 0..gw {
            votes.iter_mut().for_each(|v| *v = 0);
            for y in 0..p {
                for x in 0..p {
                    let l = map.get(gx * p + x, gy * p + y) as usize;
                    if l < votes.len() {
                        votes[l] += 1;
                    }
                }
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = c;
                }
            }
            out.push(best as u16);
        }
    }
    out
}

/// Token probabilities split by whether the decoded patch class matches
/// the ground-truth patch class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Calibration {
    pub correct_sum: f64,
    pub correct_cells: usize,
    pub wrong_sum: f64,
    pub wrong_cells: usize,
}

impl Calibration {
    pub fn add(&mut self, o: &Calibration) {
        self.correct_sum += o.correct_sum;
        self.correct_cells += o.correct_cells;
        self.wrong_sum += o.wrong_sum;
        self.wrong_cells += o.wrong_cells;
    }

    pub fn mean_correct(&self) -> Option<f64> {
        (self.correct_cells > 0).then(|| self.correct_sum / self.correct_cells as f64)
    }

    pub fn mean_wrong(&self) -> Option<f64> {
        (self.wrong_cells > 0).then(|| self.wrong_sum / self.wrong_cells as f64)
    }
}

pub fn calibration(result: &DecodeResult, truth: &LabelMap, codecs: &Codecs) -> Result<Calibration> {
    let img = vq_decode(&visual_grid(result, &codecs.layout)?, &codecs.codebook)?;
    let p = codecs.codebook.patch_size();
    let k = codecs.palette.class_count();
    let pred = patch_classes(&decode_labels(&img, &codecs.palette), p, k);
    let gt = patch_classes(truth, p, k);
    let mut c = Calibration::default();
    for ((a, b), &pr) in pred.iter().zip(&gt).zip(&result.probs) {
        if a == b {
            c.correct_sum += pr;
            c.correct_cells += 1;
        } else {
            c.wrong_sum += pr;
            c.wrong_cells += 1;
        }
    }
    Ok(c)
}

/// Metric summary of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    pub config_digest: String,
    pub num_samples: usize,
    pub instruction_split: String,
    pub skipped_samples: usize,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,count\n");
        for (k, v) in &self.metrics {
            let task = k.split('_').next().unwrap_or("");
            let n = self.counts.get(task).copied().unwrap_or(0);
            s.push_str(&format!("{k},{v:.6},{n}\n"));
        }
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}

/// FNV-1a digest of a serializable configuration.
pub fn config_digest<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

/// Predictions for one record, kept for diagnostics.
#[derive(Clone, Debug)]
pub struct RecordResult {
    pub id: String,
    pub task: Task,
    pub output: TaskOutput,
    pub confidence: Option<crate::inference::ConfidenceMap>,
    pub skipped: usize,
}

/// Runs every sample through `run_task` and scores it against its ground truth.
/// Records without decodable truth are skipped.
pub fn evaluate(
    model: &Model<f32>,
    codecs: &Codecs,
    samples: &[Sample],
    cfg: &DecodeConfig,
    split: &str,
) -> Result<(EvalReport, Vec<RecordResult>)> {
    cfg.validate()?;
    let records: Vec<Result<Option<RecordResult>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if s.truth == Truth::Tokens {
                return Ok(None);
            }
            let color = match &s.truth {
                Truth::Mask { color, .. } => Some(*color),
                _ => None,
            };
            let rc = DecodeConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.clone() };
            let p = run_task(model, codecs, &s.image, &s.instruction, s.task, color, &rc)?;
            Ok(Some(RecordResult { id: s.id.clone(), task: s.task, output: p.output, confidence: p.confidence, skipped: p.skipped }))
        })
        .collect();
    let mut out = Vec::new();
    let mut truths = Vec::new();
    for (r, s) in records.into_iter().zip(samples) {
        if let Some(r) = r? {
            out.push(r);
            truths.push(&s.truth);
        }
    }
    let mut sem = (Vec::new(), Vec::new());
    let mut res = (Vec::new(), Vec::new());
    let mut rec = (Vec::new(), Vec::new());
    let mut cap = (Vec::new(), Vec::new());
    for (r, truth) in out.iter().zip(truths) {
        match (&r.output, truth) {
            (TaskOutput::Labels(p), Truth::Labels(g)) => {
                sem.0.push(p.clone());
                sem.1.push(g.clone());
            }
            (TaskOutput::Mask { mask, .. }, Truth::Mask { mask: g, .. }) => {
                res.0.push(mask.clone());
                res.1.push(g.clone());
            }
            (TaskOutput::Box(b), Truth::Box(g)) => {
                rec.0.push(*b);
                rec.1.push(*g);
            }
            (TaskOutput::Caption(c), Truth::Caption(g)) => {
                cap.0.push(c.clone());
                cap.1.push(g.clone());
            }
            _ => return Err(Error::invalid(format!("record {} output does not match its truth", r.id))),
        }
    }
    let mut metrics = BTreeMap::new();
    let mut counts = BTreeMap::new();
    if !sem.0.is_empty() {
        metrics.insert("semseg_miou".into(), mean_iou(&sem.0, &sem.1, codecs.palette.class_count())?);
        metrics.insert("semseg_pixel_acc".into(), pixel_accuracy(&sem.0, &sem.1)?);
        counts.insert("semseg".into(), sem.0.len());
    }
    if !res.0.is_empty() {
        metrics.insert("res_oiou".into(), overall_iou(&res.0, &res.1)?);
        counts.insert("res".into(), res.0.len());
    }
    if !rec.0.is_empty() {
        metrics.insert("rec_ap50".into(), ap50(&rec.0, &rec.1)?);
        counts.insert("rec".into(), rec.0.len());
    }
    if !cap.0.is_empty() {
        metrics.insert("caption_bleu4".into(), bleu4(&cap.0, &cap.1)?);
        counts.insert("caption".into(), cap.0.len());
    }
    let report = EvalReport {
        metrics,
        counts,
        config_digest: config_digest(&(&model.config, cfg))?,
        num_samples: cfg.num_samples,
        instruction_split: split.to_string(),
        skipped_samples: out.iter().map(|r| r.skipped).sum(),
    };
    Ok((report, out))
}

/// Builds evaluation samples for `task` from scenes, one per scene.
pub fn eval_samples(
    scenes: &[Scene],
    task: Task,
    codecs: &Codecs,
    corpus: &Corpus,
    filter: SplitFilter,
    seed: u64,
) -> Result<Vec<Sample>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| build_target(task, s, codecs, corpus, filter, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64))))
        .collect()
}

/// One row of an N-sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub semseg_pixel_acc: f64,
    pub rec_ap50: f64,
}

/// Semseg pixel accuracy and REC AP50 as functions of the number of
/// aggregated samples. Each decode seed draws `max(ns)` samples per record;
/// smaller N use the leading samples. Values are means over the seeds.
pub fn n_sweep(
    model: &Model<f32>,
    codecs: &Codecs,
    semseg: &[Sample],
    rec: &[Sample],
    ns: &[usize],
    seeds: &[u64],
    cfg: &DecodeConfig,
) -> Result<Vec<SweepRow>> {
    let n_max = ns.iter().copied().max().ok_or_else(|| Error::config("empty N list"))?;
    if ns.contains(&0) || seeds.is_empty() {
        return Err(Error::config("N values must be positive and at least one seed is needed"));
    }
    let mut acc = vec![(0.0, 0.0); ns.len()];
    for &seed in seeds {
        let sem_draws = draws(model, codecs, semseg, Task::Semseg, n_max, seed, cfg)?;
        let rec_draws = draws(model, codecs, rec, Task::Rec, n_max, seed ^ 0x4ec, cfg)?;
        for (k, &n) in ns.iter().enumerate() {
            let mut preds = Vec::new();
            let mut gts = Vec::new();
            for (s, d) in semseg.iter().zip(&sem_draws) {
                let Truth::Labels(g) = &s.truth else { return Err(Error::invalid("semseg sample without labels")) };
                let valid: Vec<DecodeResult> =
                    d[..n].iter().filter(|r| visual_grid(r, &codecs.layout).is_ok()).cloned().collect();
                let pred = if valid.is_empty() {
                    LabelMap::new(g.width, g.height, vec![0; g.labels.len()])?
                } else {
                    inference::aggregate_segmentation(&valid, codecs)?
                };
                preds.push(pred);
                gts.push(g.clone());
            }
            let mut boxes = Vec::new();
            let mut gboxes = Vec::new();
            for (s, d) in rec.iter().zip(&rec_draws) {
                let Truth::Box(g) = &s.truth else { return Err(Error::invalid("rec sample without a box")) };
                let cands: Vec<BBox> = d[..n].iter().filter_map(|r| rec_box(r, codecs)).collect();
                let b = inference::select_box(&cands).map(|i| cands[i]).unwrap_or(BBox { x1: 0.0, y1: 0.0, x2: 0.0, y2: 0.0 });
                boxes.push(b);
                gboxes.push(*g);
            }
            if !preds.is_empty() {
                acc[k].0 += pixel_accuracy(&preds, &gts)?;
            }
            if !boxes.is_empty() {
                acc[k].1 += ap50(&boxes, &gboxes)?;
            }
        }
    }
    let s = seeds.len() as f64;
    Ok(ns.iter().zip(acc).map(|(&n, (a, b))| SweepRow { n, semseg_pixel_acc: a / s, rec_ap50: b / s }).collect())
}

fn rec_box(r: &DecodeResult, codecs: &Codecs) -> Option<BBox> {
    if r.tokens.len() != 4 {
        return None;
    }
    let mut ids = [0u32; 4];
    for (o, &t) in ids.iter_mut().zip(&r.tokens) {
        match codecs.layout.to_local(t).ok()? {
            (crate::vocab::TokenKind::Positional, l) => *o = l,
            _ => return None,
        }
    }
    crate::codecs::box_decode(ids, codecs.bins()).ok().map(|(b, _)| b)
}

/// `n` samples per record, seeded per record.
pub fn draws(
    model: &Model<f32>,
    codecs: &Codecs,
    samples: &[Sample],
    task: Task,
    n: usize,
    seed: u64,
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<DecodeResult>>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let prefix = model.prefix(&s.image, &codecs.bpe.encode(&s.instruction))?;
            let rc = DecodeConfig { seed: derive_seed(seed, i as u64), ..cfg.clone() };
            sample_many(model, &codecs.layout, &prefix, task, &rc, n)
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("n,semseg_pixel_acc,rec_ap50\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.n, r.semseg_pixel_acc, r.rec_ap50));
    }
    s
}

/// Spearman rank correlation (average ranks for ties). `None` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// RES oIoU of two models on seen and held-out phrasings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseReport {
    pub full_seen: f64,
    pub full_heldout: f64,
    pub template_seen: f64,
    pub template_heldout: f64,
    /// seen − held-out for each model.
    pub full_delta: f64,
    pub template_delta: f64,
    pub records: usize,
}

impl ParaphraseReport {
    pub fn to_csv(&self) -> String {
        format!(
            "model,seen_oiou,heldout_oiou,delta\nfull,{:.6},{:.6},{:.6}\ntemplate,{:.6},{:.6},{:.6}\n",
            self.full_seen, self.full_heldout, self.full_delta, self.template_seen, self.template_heldout, self.template_delta
        )
    }
}

/// Pairs each scene with one RES query (object and color) rendered once
/// with the canonical template and once with a held-out paraphrase.
pub fn paraphrase_sets(scenes: &[Scene], codecs: &Codecs, corpus: &Corpus, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let texts = corpus.candidates(Task::Res, SplitFilter::Heldout);
    if texts.is_empty() {
        return Err(Error::invalid("the instruction corpus has no held-out RES paraphrases"));
    }
    let mut seen = Vec::with_capacity(scenes.len());
    let mut heldout = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let a = build_target(Task::Res, s, codecs, corpus, SplitFilter::Template, &mut rng)?;
        let Truth::Mask { mask, color } = &a.truth else { unreachable!("RES truth is a mask") };
        let obj = s.masks.iter().position(|m| m == mask).expect("mask comes from the scene");
        let text = texts[rng.gen_range(0..texts.len())];
        let bindings = BTreeMap::from([(OBJECT, s.objects[obj].expression.as_str()), (COLOR, color.name())]);
        let b = Sample { instruction: render(text, &bindings)?, ..a.clone() };
        seen.push(a);
        heldout.push(b);
    }
    Ok((seen, heldout))
}

pub fn res_oiou(model: &Model<f32>, codecs: &Codecs, samples: &[Sample], cfg: &DecodeConfig) -> Result<f64> {
    let (r, _) = evaluate(model, codecs, samples, cfg, "")?;
    r.metrics.get("res_oiou").copied().ok_or_else(|| Error::invalid("no RES records"))
}

pub fn paraphrase_generalization(
    full: &Model<f32>,
    template: &Model<f32>,
    codecs: &Codecs,
    scenes: &[Scene],
    corpus: &Corpus,
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<ParaphraseReport> {
    let (seen, heldout) = paraphrase_sets(scenes, codecs, corpus, seed)?;
    let full_seen = res_oiou(full, codecs, &seen, cfg)?;
    let full_heldout = res_oiou(full, codecs, &heldout, cfg)?;
    let template_seen = res_oiou(template, codecs, &seen, cfg)?;
    let template_heldout = res_oiou(template, codecs, &heldout, cfg)?;
    Ok(ParaphraseReport {
        full_seen,
        full_heldout,
        template_seen,
        template_heldout,
        full_delta: full_seen - full_heldout,
        template_delta: template_seen - template_heldout,
        records: seen.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miou_hand_case() {
        let p = LabelMap::new(4, 1, vec![0, 1, 1, 1]).unwrap();
        let g = LabelMap::new(4, 1, vec![0, 0, 1, 1]).unwrap();
        let v = mean_iou(&[p], &[g], 2).unwrap();
        assert!((v - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn oiou_hand_case() {
        let m = |bits: &[bool]| Mask { width: bits.len(), height: 1, data: bits.to_vec() };
        let p = [m(&[true, true]), m(&[true, false])];
        let g = [m(&[true, false]), m(&[false, true])];
        assert!((overall_iou(&p, &g).unwrap() - 0.25).abs() < 1e-12);
        assert!(overall_iou(&[m(&[false])], &[m(&[false])]).is_err());
    }

    #[test]
    fn ap50_threshold() {
        let a = BBox { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 };
        let c = BBox { x1: 0.5, y1: 0.5, x2: 1.0, y2: 1.0 };
        assert_eq!(ap50(&[a], &[c]).unwrap(), 0.0);
        let half = BBox { x1: 0.0, y1: 0.0, x2: 0.5, y2: 1.0 };
        assert_eq!(ap50(&[half], &[a]).unwrap(), 1.0);
    }

    #[test]
    fn bleu_hand_case() {
        let v = bleu4(&["a red circle"], &["a red circle and a blue square"]).unwrap();
        // all 1..3-gram orders match fully; the empty 4-gram order is smoothed to 1
        assert!((v - (1.0f64 - 7.0 / 3.0).exp()).abs() < 1e-12);
        assert_eq!(bleu4(&["x y z"], &["x y z"]).unwrap(), 1.0 * 1.0);
        // no matches at all: every order is smoothed to 1 / (count + 1)
        let none = bleu4(&["q w e r"], &["a b c d"]).unwrap();
        assert!((none - (1.0f64 / 120.0).powf(0.25)).abs() < 1e-12);
        assert!(bleu4::<&str, &str>(&[], &[]).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.3, 0.2, 0.1]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]), None);
    }
}
