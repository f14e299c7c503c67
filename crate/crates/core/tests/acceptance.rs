//! End-to-end acceptance suite. Runs every criterion in order and prints one
//! PASS/FAIL line per criterion; exits non-zero when any fails.
//!
//! Criteria can be selected by number: `cargo test --test acceptance -- 1 7`.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use instructseq::codecs::{
    box_decode, box_encode, decode_labels, encode_labels, vq_encode, BBox, BpeModel, ColorImage, LabelMap, Mask,
    Palette, PatchCodebook,
};
use instructseq::data::{build_target, fit_codecs, generate_scenes, CodecConfig, Sample, SceneConfig, TaskRatios, Truth};
use instructseq::eval::{self, Calibration};
use instructseq::inference::{fixed_length, sample_sequence, DecodeConfig, Sampling};
use instructseq::instructions::{Corpus, SplitFilter};
use instructseq::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig};
use instructseq::trainer::{evaluate_loss, train_loop, DataSource, TrainConfig, TrainOutputs};
use instructseq::vocab::{VocabCounts, VocabLayout, EOS};
use instructseq::{Error, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(t: Instant, budget: Duration) -> Result<(), String> {
    ensure(t.elapsed() <= budget, format!("took {:.1?}, budget {budget:?}", t.elapsed()))
}

// codecs

fn codec_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    for i in 0..1000 {
        let k = rng.gen_range(1..=300);
        let (w, h) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
        let palette = Palette::for_classes(k).map_err(|e| e.to_string())?;
        let labels: Vec<u16> = (0..w * h).map(|_| rng.gen_range(0..k) as u16).collect();
        let map = LabelMap::new(w, h, labels).map_err(|e| e.to_string())?;
        let img = encode_labels(&map, &palette).map_err(|e| e.to_string())?;
        ensure(decode_labels(&img, &palette) == map, format!("label map {i} ({k} classes) did not roundtrip"))?;
    }

    let bins = 100;
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let (c, d): (f64, f64) = (rng.gen(), rng.gen());
        let bx = BBox { x1: a.min(b), y1: c.min(d), x2: a.max(b), y2: c.max(d) };
        let ids = box_encode(&bx, bins).map_err(|e| e.to_string())?;
        let (back, _) = box_decode(ids, bins).map_err(|e| e.to_string())?;
        for (u, v) in bx.coords().iter().zip(back.coords()) {
            worst = worst.max((u - v).abs());
        }
    }
    ensure(worst <= 0.5 / bins as f64 + 1e-12, format!("box error {worst} exceeds half a bin"))?;

    let corpus: Vec<String> = Corpus::bundled().all_texts().iter().map(|s| s.to_string()).collect();
    let bpe = BpeModel::train(&corpus, 512).map_err(|e| e.to_string())?;
    let ranges = [(0x20u32, 0x7e), (0xa0, 0x24f), (0x391, 0x3c9), (0x4e00, 0x4fff), (0x1f300, 0x1f5ff)];
    for i in 0..1000 {
        let len = rng.gen_range(0..40);
        let s: String = (0..len)
            .map(|_| {
                let (lo, hi) = ranges[rng.gen_range(0..ranges.len())];
                char::from_u32(rng.gen_range(lo..=hi)).unwrap_or('?')
            })
            .collect();
        let back = bpe.decode(&bpe.encode(&s)).map_err(|e| e.to_string())?;
        ensure(back == s, format!("BPE string {i} did not roundtrip"))?;
    }

    let entries: Vec<f32> = (0..128 * 48).map(|_| rng.gen()).collect();
    let cb = PatchCodebook::from_entries(4, entries.clone()).map_err(|e| e.to_string())?;
    for i in 0..1000 {
        let px: Vec<[u8; 3]> = (0..16).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let img = ColorImage::from_pixels(4, 4, px.clone()).map_err(|e| e.to_string())?;
        let got = vq_encode(&img, &cb).map_err(|e| e.to_string())?.ids[0] as usize;
        let v: Vec<f64> = px.iter().flat_map(|p| p.iter().map(|&c| c as f64 / 255.0)).collect();
        let dist = |e: usize| -> f64 { (0..48).map(|j| (v[j] - entries[e * 48 + j] as f64).powi(2)).sum() };
        let best = (0..128).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
        ensure(got == best, format!("patch {i}: vq_encode chose {got}, nearest is {best}"))?;
    }
    within(t, Duration::from_secs(30))?;
    Ok(format!("1000 label maps, 10000 boxes (max error {worst:.4}), 1000 strings, 1000 patches in {:.1?}", t.elapsed()))
}

// gradients

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig { embed_dim: 16, layers: 1, heads: 2, instruction_layers: 1, ..Default::default() };
    let report = common::gradient_check(cfg, 5, 1e-3, 2.0);
    let (name, worst, _) = report.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned().unwrap();
    ensure(worst <= 1e-4, format!("{name}: relative error {worst:e}"))?;
    within(t, Duration::from_secs(120))?;
    Ok(format!("{} tensors, worst {name} at {worst:.2e}, in {:.1?}", report.len(), t.elapsed()))
}

// overfit

fn overfit() -> Outcome {
    let t = Instant::now();
    let scenes = generate_scenes(31, 200, &SceneConfig::default()).map_err(|e| e.to_string())?;
    let corpus = Corpus::bundled();
    let (codecs, _) =
        fit_codecs(&scenes, VocabLayout::default(), &CodecConfig::default(), &corpus, 31).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let samples: Vec<Sample> = (0..8)
        .map(|i| build_target(Task::ALL[i % 4], &scenes[i], &codecs, &corpus, SplitFilter::Train, &mut rng))
        .collect::<instructseq::Result<_>>()
        .map_err(|e| e.to_string())?;

    let model = Model::<f32>::new(ModelConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(33)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { steps: OVERFIT_STEPS, batch_size: 8, lr: 3e-3, warmup_steps: 50, weight_decay: 0.0, ..Default::default() };
    let out = train_loop(model, &codecs, DataSource::Fixed(&samples), &[], &cfg, &TrainOutputs { dir: None, quiet: true })
        .map_err(|e| e.to_string())?;
    let loss = evaluate_loss(&out.model, &samples, &codecs).map_err(|e| e.to_string())?;
    ensure(loss < 0.05, format!("mean loss {loss:.4} after {OVERFIT_STEPS} steps"))?;

    let grid = out.model.config.image_size / out.model.config.patch_size;
    for s in &samples {
        let prefix = out.model.prefix(&s.image, &codecs.bpe.encode(&s.instruction)).map_err(|e| e.to_string())?;
        let r = sample_sequence(&out.model, &codecs.layout, &prefix, s.task, Sampling::Greedy, false, 24, &mut rng)
            .map_err(|e| e.to_string())?;
        let mut want = &s.target[1..];
        if fixed_length(s.task, grid).is_some() {
            want = want.strip_suffix(&[EOS]).unwrap_or(want);
        }
        ensure(r.tokens == want, format!("{} ({}) was not reproduced by greedy decoding", s.id, s.task))?;
    }
    within(t, Duration::from_secs(600))?;
    Ok(format!("mean loss {loss:.4} after {OVERFIT_STEPS} steps, 8/8 exact, in {:.1?}", t.elapsed()))
}

const OVERFIT_STEPS: usize = 1500;

// aggregation and calibration

struct Trained {
    model: Model<f32>,
    codecs: instructseq::codecs::Codecs,
    eval_scenes: Vec<instructseq::data::Scene>,
    corpus: Corpus,
}

const SWEEP_STEPS: usize = 5000;

fn train_sweep_model() -> Result<Trained, String> {
    let scenes = generate_scenes(41, 2000, &SceneConfig::default()).map_err(|e| e.to_string())?;
    let corpus = Corpus::bundled();
    let (codecs, _) =
        fit_codecs(&scenes, VocabLayout::default(), &CodecConfig::default(), &corpus, 41).map_err(|e| e.to_string())?;
    let model = Model::<f32>::new(ModelConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(42)).map_err(|e| e.to_string())?;
    // only the two measured tasks, so box grounding gets half of the steps
    let ratios = TaskRatios { semseg: 0.5, res: 0.0, rec: 0.5, caption: 0.0 };
    let cfg = TrainConfig { steps: SWEEP_STEPS, batch_size: 16, lr: 2e-3, warmup_steps: 100, seed: 43, ratios, ..Default::default() };
    let out = train_loop(model, &codecs, DataSource::Generator { scenes: &scenes, corpus: &corpus }, &[], &cfg, &TrainOutputs { dir: None, quiet: true })
        .map_err(|e| e.to_string())?;
    let eval_scenes = generate_scenes(4242, 100, &SceneConfig::default()).map_err(|e| e.to_string())?;
    Ok(Trained { model: out.model, codecs, eval_scenes, corpus })
}

fn aggregation(tr: &Trained, started: Instant) -> Outcome {
    let sem = eval::eval_samples(&tr.eval_scenes, Task::Semseg, &tr.codecs, &tr.corpus, SplitFilter::Train, 1)
        .map_err(|e| e.to_string())?;
    let rec = eval::eval_samples(&tr.eval_scenes, Task::Rec, &tr.codecs, &tr.corpus, SplitFilter::Train, 2)
        .map_err(|e| e.to_string())?;
    let ns = [1, 4, 10];
    let rows = eval::n_sweep(&tr.model, &tr.codecs, &sem, &rec, &ns, &[1, 2, 3], &DecodeConfig::default())
        .map_err(|e| e.to_string())?;
    let n: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r.semseg_pixel_acc).collect();
    let ap: Vec<f64> = rows.iter().map(|r| r.rec_ap50).collect();
    let detail = format!("pixel acc {acc:.4?}, AP50 {ap:.4?} at N={ns:?}");
    ensure(acc[2] >= acc[0] - 0.005, format!("pixel accuracy fell with N: {detail}"))?;
    ensure(ap[2] >= ap[0] - 0.005, format!("AP50 fell with N: {detail}"))?;
    // a constant column has no rank order; it is flat, not decreasing
    for (name, col) in [("pixel accuracy", &acc), ("AP50", &ap)] {
        let rho = eval::spearman(&n, col).unwrap_or(0.0);
        ensure(rho >= 0.0, format!("{name} Spearman {rho:.3} < 0: {detail}"))?;
    }
    within(started, Duration::from_secs(3600))?;
    Ok(format!("{detail}, in {:.1?}", started.elapsed()))
}

fn calibration(tr: &Trained) -> Outcome {
    let sem = eval::eval_samples(&tr.eval_scenes, Task::Semseg, &tr.codecs, &tr.corpus, SplitFilter::Train, 5)
        .map_err(|e| e.to_string())?;
    ensure(sem.len() >= 20, "fewer than 20 evaluation scenes")?;
    let draws = eval::draws(&tr.model, &tr.codecs, &sem, Task::Semseg, 1, 9, &DecodeConfig::default())
        .map_err(|e| e.to_string())?;
    let mut c = Calibration::default();
    for (s, d) in sem.iter().zip(&draws) {
        let Truth::Labels(g) = &s.truth else { return Err("semseg sample without labels".into()) };
        if let Ok(x) = eval::calibration(&d[0], g, &tr.codecs) {
            c.add(&x);
        }
    }
    let (right, wrong) = match (c.mean_correct(), c.mean_wrong()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(format!("need both correct and wrong cells: {} correct, {} wrong", c.correct_cells, c.wrong_cells)),
    };
    let detail = format!(
        "mean probability {right:.4} on {} correct cells, {wrong:.4} on {} wrong cells over {} scenes",
        c.correct_cells,
        c.wrong_cells,
        sem.len()
    );
    ensure(wrong < right, detail.clone())?;
    Ok(detail)
}

// paraphrases

const PARAPHRASE_STEPS: usize = 5000;

fn paraphrase() -> Outcome {
    let t = Instant::now();
    let scenes = generate_scenes(51, 2000, &SceneConfig::default()).map_err(|e| e.to_string())?;
    let corpus = Corpus::bundled();
    let (codecs, _) =
        fit_codecs(&scenes, VocabLayout::default(), &CodecConfig::default(), &corpus, 51).map_err(|e| e.to_string())?;
    let base = TrainConfig {
        steps: PARAPHRASE_STEPS,
        batch_size: 16,
        lr: 2e-3,
        warmup_steps: 100,
        seed: 52,
        // semantic maps teach where objects are; RES alone rarely starts painting
        ratios: TaskRatios { semseg: 0.5, res: 0.5, rec: 0.0, caption: 0.0 },
        ..Default::default()
    };
    let mut models = Vec::new();
    for filter in [SplitFilter::Train, SplitFilter::Template] {
        let model = Model::<f32>::new(ModelConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(53)).map_err(|e| e.to_string())?;
        let cfg = TrainConfig { instructions: filter, ..base.clone() };
        let out = train_loop(model, &codecs, DataSource::Generator { scenes: &scenes, corpus: &corpus }, &[], &cfg, &TrainOutputs { dir: None, quiet: true })
            .map_err(|e| e.to_string())?;
        models.push(out.model);
    }
    let eval_scenes = generate_scenes(5353, 60, &SceneConfig::default()).map_err(|e| e.to_string())?;
    let dc = DecodeConfig { num_samples: 4, ..Default::default() };
    let r = eval::paraphrase_generalization(&models[0], &models[1], &codecs, &eval_scenes, &corpus, &dc, 54)
        .map_err(|e| e.to_string())?;
    let detail = format!(
        "full {:.4} -> {:.4} (delta {:.4}), template {:.4} -> {:.4} (delta {:.4})",
        r.full_seen, r.full_heldout, r.full_delta, r.template_seen, r.template_heldout, r.template_delta
    );
    ensure(r.template_delta > r.full_delta, detail.clone())?;
    within(t, Duration::from_secs(5400))?;
    Ok(format!("{detail}, in {:.1?}", t.elapsed()))
}

// metric oracles

fn oracle_miou(p: &[LabelMap], g: &[LabelMap], k: usize) -> f64 {
    let mut scores = Vec::new();
    for c in 0..k as u16 {
        let (mut i, mut u) = (0usize, 0usize);
        for (a, b) in p.iter().zip(g) {
            for y in 0..a.height {
                for x in 0..a.width {
                    let (pa, gb) = (a.get(x, y) == c, b.get(x, y) == c);
                    i += (pa && gb) as usize;
                    u += (pa || gb) as usize;
                }
            }
        }
        if u > 0 {
            scores.push(i as f64 / u as f64);
        }
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

fn oracle_oiou(p: &[Mask], g: &[Mask]) -> f64 {
    let (mut i, mut u) = (0usize, 0usize);
    for (a, b) in p.iter().zip(g) {
        for (x, y) in a.data.iter().zip(&b.data) {
            i += (*x && *y) as usize;
            u += (*x || *y) as usize;
        }
    }
    i as f64 / u as f64
}

fn oracle_ap50(p: &[BBox], g: &[BBox]) -> f64 {
    let iou = |a: &BBox, b: &BBox| {
        let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
        let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
        let inter = w * h;
        let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
        if union <= 0.0 { 0.0 } else { inter / union }
    };
    p.iter().zip(g).filter(|(a, b)| iou(a, b) >= 0.5).count() as f64 / p.len() as f64
}

fn oracle_bleu(c: &[String], r: &[String]) -> f64 {
    let grams = |s: &str, n: usize| -> BTreeMap<String, usize> {
        let w: Vec<&str> = s.split_whitespace().collect();
        let mut m = BTreeMap::new();
        for i in 0..(w.len() + 1).saturating_sub(n) {
            *m.entry(w[i..i + n].join(" ")).or_insert(0) += 1;
        }
        m
    };
    let cl: usize = c.iter().map(|s| s.split_whitespace().count()).sum();
    let rl: usize = r.iter().map(|s| s.split_whitespace().count()).sum();
    if cl == 0 {
        return 0.0;
    }
    let mut score = 0.0;
    for n in 1..=4 {
        let (mut m, mut tot) = (0usize, 0usize);
        for (a, b) in c.iter().zip(r) {
            let rg = grams(b, n);
            for (g, k) in grams(a, n) {
                tot += k;
                m += k.min(*rg.get(&g).unwrap_or(&0));
            }
        }
        let p = if m > 0 { m as f64 / tot as f64 } else { 1.0 / (tot as f64 + 1.0) };
        score += p.ln() / 4.0;
    }
    let bp = if cl > rl { 1.0 } else { (1.0 - rl as f64 / cl as f64).exp() };
    bp * score.exp()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut worst = 0.0f64;
    let mut check = |a: instructseq::Result<f64>, b: f64, what: &str, i: usize| -> Result<(), String> {
        let a = a.map_err(|e| format!("{what} {i}: {e}"))?;
        worst = worst.max((a - b).abs());
        ensure((a - b).abs() <= 1e-9, format!("{what} instance {i}: {a} vs oracle {b}"))
    };
    for i in 0..200 {
        let k = rng.gen_range(2..7);
        let n = rng.gen_range(1..5);
        let (w, h) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let mut map = || LabelMap::new(w, h, (0..w * h).map(|_| rng.gen_range(0..k) as u16).collect()).unwrap();
        let (p, g): (Vec<_>, Vec<_>) = (0..n).map(|_| (map(), map())).unzip();
        check(eval::mean_iou(&p, &g, k), oracle_miou(&p, &g, k), "mIoU", i)?;
    }
    for i in 0..200 {
        let n = rng.gen_range(1..5);
        let (w, h) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let density = rng.gen_range(0.1..0.9);
        let mut mask = || Mask { width: w, height: h, data: (0..w * h).map(|_| rng.gen_bool(density)).collect() };
        let (mut p, mut g): (Vec<_>, Vec<_>) = (0..n).map(|_| (mask(), mask())).unzip();
        if p.iter().chain(&g).all(|m| m.area() == 0) {
            p[0].data[0] = true;
            g[0].data[0] = true;
        }
        check(eval::overall_iou(&p, &g), oracle_oiou(&p, &g), "oIoU", i)?;
    }
    for i in 0..200 {
        let n = rng.gen_range(1..8);
        let mut bx = || {
            let (x, y): (f64, f64) = (rng.gen_range(0.0..0.8), rng.gen_range(0.0..0.8));
            BBox { x1: x, y1: y, x2: x + rng.gen_range(0.01..0.2), y2: y + rng.gen_range(0.01..0.2) }
        };
        let g: Vec<BBox> = (0..n).map(|_| bx()).collect();
        // perturbed copies so the hit rate varies
        let p: Vec<BBox> = g
            .iter()
            .map(|b| {
                let s = rng.gen_range(0.0..0.1);
                BBox { x1: b.x1 + s, y1: b.y1, x2: b.x2 + s, y2: b.y2 }
            })
            .collect();
        check(eval::ap50(&p, &g), oracle_ap50(&p, &g), "AP50", i)?;
    }
    let words = ["a", "red", "circle", "left", "of", "the", "blue", "square"];
    for i in 0..200 {
        let n = rng.gen_range(1..4);
        let mut sentence = |lo: usize| -> String {
            let len = rng.gen_range(lo..10);
            (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        };
        let (c, r): (Vec<String>, Vec<String>) = (0..n).map(|_| (sentence(0), sentence(1))).unzip();
        check(eval::bleu4(&c, &r), oracle_bleu(&c, &r), "BLEU", i)?;
    }
    Ok(format!("200 instances each of mIoU, oIoU, AP50, BLEU; max deviation {worst:.1e}"))
}

// determinism

fn determinism() -> Outcome {
    use common::{cli, snapshot};
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = common::small_run_config(dir.path());
    let c = cfg.to_str().unwrap();
    let path = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let steps: [&[&str]; 3] = [
        &["--quiet", "--config", c, "--out", &path("data"), "gen-data"],
        &["--quiet", "--config", c, "--out", &path("run"), "train", "--steps", "100"],
        &["--quiet", "--config", c, "--out", &path("eval"), "evaluate"],
    ];
    let dirs = ["data", "run", "eval"];
    let mut files = 0;
    for (i, args) in steps.iter().enumerate() {
        ensure(cli(args) == 0, format!("{} failed", dirs[i]))?;
        let first = snapshot(&dir.path().join(dirs[i]));
        ensure(cli(args) == 0, format!("{} rerun failed", dirs[i]))?;
        let second = snapshot(&dir.path().join(dirs[i]));
        for (name, bytes) in &first {
            ensure(second.get(name) == Some(bytes), format!("{}/{name} differs between runs", dirs[i]))?;
        }
        ensure(first.len() == second.len(), format!("{} produced different file sets", dirs[i]))?;
        files += first.len();
        if i == 0 {
            ensure(cli(&["--quiet", "--config", c, "fit-codecs"]) == 0, "fit-codecs failed")?;
        }
    }
    Ok(format!("gen-data, train (100 steps) and evaluate reproduced {files} files byte for byte"))
}

// checkpoints

fn checkpoint_integrity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = Model::<f32>::new(ModelConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(91)).map_err(|e| e.to_string())?;
    let ck = Checkpoint::new(model, common::stub_codecs(VocabCounts::default())).map_err(|e| e.to_string())?;
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ck, &path).map_err(|e| e.to_string())?;
    let back = load_checkpoint(&path, Some(VocabCounts::default())).map_err(|e| e.to_string())?;
    ensure(back.model.config == ck.model.config && back.codecs == ck.codecs, "config or codecs changed")?;
    for ((name, a), (_, b)) in ck.model.params.named().into_iter().zip(back.model.params.named()) {
        let same = a.shape == b.shape && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, format!("{name} not bit-exact"))?;
    }

    let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    bytes[0] ^= 0xff;
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes).map_err(|e| e.to_string())?;
    let magic = load_checkpoint(&bad, None);
    ensure(matches!(magic, Err(Error::BadMagic)), format!("corrupted magic gave {:?}", magic.err()))?;

    let other = VocabCounts { n_visual: 64, ..VocabCounts::default() };
    let layout = load_checkpoint(&path, Some(other));
    ensure(matches!(layout, Err(Error::LayoutMismatch { .. })), format!("layout mismatch gave {:?}", layout.err()))?;
    Ok(format!("{} tensors bit-exact; bad magic and layout mismatch rejected distinctly", ck.model.params.named().len()))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match outcome {
            Ok(d) => println!("criterion {n} ({name}): PASS: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {d}");
            }
        }
    };
    if run(1) {
        report(1, "codec suite", codec_suite());
    }
    if run(2) {
        report(2, "gradient check", gradient_check());
    }
    if run(3) {
        report(3, "overfit", overfit());
    }
    if run(4) || run(5) {
        let t = Instant::now();
        match train_sweep_model() {
            Ok(tr) => {
                if run(4) {
                    report(4, "aggregation trend", aggregation(&tr, t));
                }
                if run(5) {
                    report(5, "confidence calibration", calibration(&tr));
                }
            }
            Err(e) => {
                for (n, name) in [(4, "aggregation trend"), (5, "confidence calibration")] {
                    if run(n) {
                        report(n, name, Err(format!("training failed: {e}")));
                    }
                }
            }
        }
    }
    if run(6) {
        report(6, "paraphrase generalization", paraphrase());
    }
    if run(7) {
        report(7, "metric oracles", metric_oracles());
    }
    if run(8) {
        report(8, "determinism", determinism());
    }
    if run(9) {
        report(9, "checkpoint integrity", checkpoint_integrity());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
