#![allow(dead_code)]

use instructseq::codecs::ColorImage;
use instructseq::model::{Example, Model, ModelConfig, Trainable};
use instructseq::vocab::{BOS, EOS, PAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(seed: u64) -> ColorImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..32 * 32).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    ColorImage::from_pixels(32, 32, px).unwrap()
}

/// Per-tensor relative error between analytic gradients and central finite
/// differences of the summed loss, in f64.
pub fn gradient_check(cfg: ModelConfig, seed: u64, eps: f64, weight_scale: f64) -> Vec<(String, f64, usize)> {
    let mut model: Model<f64> = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    // larger weights than the training init so every tensor, including the
    // deep instruction path, carries a gradient well above rounding noise;
    // norms and biases move off their identity values
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    model.params.for_each_mut(|_, t| {
        t.data.iter_mut().for_each(|v| *v = *v * weight_scale + rng.gen_range(-0.02..0.02) * weight_scale);
    });
    let imgs = [random_image(seed + 1), random_image(seed + 2)];
    let t1 = [BOS, 5, 40, 77, 120, EOS];
    let t2 = [BOS, 140, 150, PAD, 160, EOS];
    let examples = [
        Example { image: &imgs[0], instruction: &[3, 17, 250, 9], target: &t1 },
        Example { image: &imgs[1], instruction: &[100, 4], target: &t2 },
    ];
    let all = Trainable { visual: true, instruction: true };
    let mut grads = model.params.zeros_like();
    for ex in &examples {
        let tr = model.forward_traced::<ChaCha8Rng>(ex, None).unwrap();
        model.backward(ex, &tr, 1.0, &mut grads, all);
    }
    let total = |m: &Model<f64>| examples.iter().map(|ex| m.example_loss(ex).unwrap().0).sum::<f64>();

    let names: Vec<String> = grads.named().into_iter().map(|(n, _)| n).collect();
    let mut report = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let analytic = grads.named()[ti].1.data.clone();
        let n = analytic.len();
        let mut numeric = vec![0.0; n];
        // rows of the instruction embedding that no example references cannot
        // influence the loss; their analytic gradient must be exactly zero
        let d = model.config.embed_dim;
        let used: Vec<bool> = (0..n)
            .map(|i| name != "instr.emb" || examples.iter().any(|ex| ex.instruction.contains(&((i / d) as u32))))
            .collect();
        for i in 0..n {
            if !used[i] {
                assert_eq!(analytic[i], 0.0, "{name}[{i}] has gradient but is unreferenced");
                continue;
            }
            let orig = model.params.named()[ti].1.data[i];
            let set = |m: &mut Model<f64>, v: f64| m.params.named_mut()[ti].1.data[i] = v;
            set(&mut model, orig + eps);
            let lp = total(&model);
            set(&mut model, orig - eps);
            let lm = total(&model);
            set(&mut model, orig);
            numeric[i] = (lp - lm) / (2.0 * eps);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if na.max(nn) == 0.0 { 0.0 } else { diff / na.max(nn) };
        report.push((name.clone(), rel, n));
    }
    report
}

/// Writes a small but complete run configuration whose paths all live under `root`.
pub fn small_run_config(root: &std::path::Path) -> std::path::PathBuf {
    let data = root.join("data");
    let cfg = serde_json::json!({
        "seed": 11,
        "data": { "scenes": 24, "eval_scenes": 4 },
        "codec": { "kmeans_iters": 4, "bpe_scenes": 12 },
        "model": { "embed_dim": 32, "layers": 1, "heads": 2, "instruction_layers": 1 },
        "train": { "steps": 6, "batch_size": 4, "warmup_steps": 2 },
        "decode": { "num_samples": 2, "max_caption_len": 8, "beam_size": 2 },
        "eval": { "ablation_scenes": 3, "sweep_seeds": 2 },
        "paths": {
            "data": data,
            "codecs": data.join("codecs.json"),
            "checkpoint": root.join("run").join("final.ckpt"),
        },
    });
    let path = root.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["instructseq"];
    argv.extend_from_slice(args);
    instructseq::cli::main_with_args(argv)
}

/// Every file under `dir` with its contents, keyed by relative path.
pub fn snapshot(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(base: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Codecs with an arbitrary fitted codebook, enough for checkpoint tests.
pub fn stub_codecs(counts: instructseq::vocab::VocabCounts) -> instructseq::codecs::Codecs {
    use instructseq::codecs::{BpeModel, Codecs, Palette, PatchCodebook};
    let layout = instructseq::vocab::VocabLayout::new(counts).unwrap();
    let cb = PatchCodebook::from_entries(4, (0..counts.n_visual * 48).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
    let bpe = BpeModel::train(&["a red circle", "a blue square"], 300).unwrap();
    Codecs::new(layout, Palette::for_classes(4).unwrap(), cb, bpe).unwrap()
}
