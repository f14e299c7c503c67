use instructseq::codecs::{palette::nearest_color, vq_decode, TokenGrid};
use instructseq::data::{build_target, fit_codecs, generate_scenes, CodecConfig, SceneConfig, Truth};
use instructseq::instructions::{Corpus, SplitFilter};
use instructseq::vocab::{TokenKind, VocabLayout};
use instructseq::Task;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn res_targets_survive_quantization() {
    let scenes = generate_scenes(1, 400, &SceneConfig::default()).unwrap();
    let corpus = Corpus::bundled();
    let t = std::time::Instant::now();
    let (codecs, report) = fit_codecs(&scenes, VocabLayout::default(), &CodecConfig::default(), &corpus, 5).unwrap();
    eprintln!("fit in {:?}, distinct {} objective {:?}", t.elapsed(), report.distinct_patches, report.objectives.last());

    let eval = generate_scenes(999, 200, &SceneConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut inter, mut union, mut worst) = (0usize, 0usize, 1.0f64);
    let mut semseg_correct = 0usize;
    for s in &eval {
        let sample = build_target(Task::Res, s, &codecs, &corpus, SplitFilter::Train, &mut rng).unwrap();
        assert_eq!(sample.target.len(), 66);
        let ids: Vec<u32> = sample.target[1..65]
            .iter()
            .map(|&g| {
                let (k, l) = codecs.layout.to_local(g).unwrap();
                assert_eq!(k, TokenKind::Visual);
                l
            })
            .collect();
        let img = vq_decode(&TokenGrid { rows: 8, cols: 8, ids }, &codecs.codebook).unwrap();
        let Truth::Mask { mask, color } = &sample.truth else { panic!() };
        let pred: Vec<bool> = img.pixels().iter().map(|&c| nearest_color(&[color.rgb(), [0, 0, 0]], c) == 0).collect();
        let (i, u) = mask.data.iter().zip(&pred).fold((0, 0), |(i, u), (&a, &b)| (i + (a && b) as usize, u + (a || b) as usize));
        inter += i;
        union += u;
        worst = worst.min(i as f64 / u as f64);

        let sem = build_target(Task::Semseg, s, &codecs, &corpus, SplitFilter::Train, &mut rng).unwrap();
        let ids: Vec<u32> = sem.target[1..65].iter().map(|&g| codecs.layout.to_local(g).unwrap().1).collect();
        let img = vq_decode(&TokenGrid { rows: 8, cols: 8, ids }, &codecs.codebook).unwrap();
        let labels = instructseq::codecs::decode_labels(&img, &codecs.palette);
        semseg_correct += labels.labels.iter().zip(&s.labels.labels).filter(|(a, b)| a == b).count();
    }
    let oiou = inter as f64 / union as f64;
    eprintln!("res oIoU {oiou:.4} worst {worst:.4} semseg acc {:.4}", semseg_correct as f64 / (200.0 * 1024.0));
    assert!(oiou >= 0.8);
}
