//! Multi-task optimization loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::Codecs;
use crate::data::{build_target, derive_seed, sample_task, Sample, Scene, TaskRatios};
use crate::error::{Error, Result};
use crate::instructions::{Corpus, SplitFilter};
use crate::model::{save_checkpoint, Checkpoint, Dropout, Example, Group, Model, Params, Trainable};
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    All,
    ImageOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of `lr`.
    pub min_lr_ratio: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub ratios: TaskRatios,
    pub freeze_instruction: bool,
    pub freeze_visual: bool,
    /// 0 disables periodic validation.
    pub eval_every: usize,
    /// 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub mode: OutputMode,
    /// Instruction variants used for training targets.
    pub instructions: SplitFilter,
    /// One task per batch; mixed batches otherwise.
    pub homogeneous_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            lr: 1e-3,
            warmup_steps: 100,
            min_lr_ratio: 0.1,
            weight_decay: 0.01,
            clip_norm: 1.0,
            seed: 0,
            ratios: TaskRatios::default(),
            freeze_instruction: true,
            freeze_visual: false,
            eval_every: 0,
            checkpoint_every: 0,
            mode: OutputMode::All,
            instructions: SplitFilter::Train,
            homogeneous_batches: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) || self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return Err(Error::config("min_lr_ratio, weight_decay and clip_norm out of range"));
        }
        self.effective_ratios().normalized()?;
        Ok(())
    }

    pub fn effective_ratios(&self) -> TaskRatios {
        match self.mode {
            OutputMode::All => self.ratios,
            OutputMode::ImageOnly => self.ratios.image_only(),
        }
    }

    pub fn trainable(&self) -> Trainable {
        Trainable { visual: !self.freeze_visual, instruction: !self.freeze_instruction }
    }

    /// Learning rate at `step` (0-based): linear warmup, then cosine decay
    /// to `lr * min_lr_ratio` at the final step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let floor = self.lr * self.min_lr_ratio;
        floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// AdamW with decoupled weight decay on matrices.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Params<f32>,
    v: Params<f32>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &Params<f32>, weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.98, eps: 1e-8, weight_decay, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update; tensors in frozen groups are left untouched.
    pub fn update(&mut self, params: &mut Params<f32>, grads: &Params<f32>, lr: f64, trainable: Trainable) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let wd = self.weight_decay;
        let eps = self.eps;
        let gs = grads.named();
        let ms = self.m.named_mut();
        let vs = self.v.named_mut();
        for (((name, p), (_, g)), ((_, m), (_, v))) in params.named_mut().into_iter().zip(gs).zip(ms.into_iter().zip(vs)) {
            if !group_trainable(Group::of(&name), trainable) {
                continue;
            }
            let decay = if p.shape.len() >= 2 { wd } else { 0.0 };
            for i in 0..p.data.len() {
                let gi = g.data[i] as f64;
                let mi = b1 * m.data[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v.data[i] as f64 + (1.0 - b2) * gi * gi;
                m.data[i] = mi as f32;
                v.data[i] = vi as f32;
                let pi = p.data[i] as f64;
                let step = (mi / c1) / ((vi / c2).sqrt() + eps) + decay * pi;
                p.data[i] = (pi - lr * step) as f32;
            }
        }
    }
}

pub fn group_trainable(g: Group, t: Trainable) -> bool {
    match g {
        Group::Visual => t.visual,
        Group::Instruction => t.instruction,
        Group::Adapter | Group::Decoder => true,
    }
}

/// Global L2 norm over the trainable gradient tensors.
pub fn grad_norm(grads: &Params<f32>, trainable: Trainable) -> f64 {
    grads
        .named()
        .iter()
        .filter(|(n, _)| group_trainable(Group::of(n), trainable))
        .flat_map(|(_, t)| t.data.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients so their global norm is at most `max_norm` (0 disables).
/// Returns the norm after clipping.
pub fn clip_gradients(grads: &mut Params<f32>, max_norm: f64, trainable: Trainable) -> f64 {
    let norm = grad_norm(grads, trainable);
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.for_each_mut(|_, t| t.data.iter_mut().for_each(|v| *v *= s));
        return norm * s as f64;
    }
    norm
}

/// Per-step statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    /// Mean token loss per task in `Task::ALL` order; `None` when absent.
    pub task_loss: [Option<f64>; 4],
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub lr: f64,
}

/// One training sample already converted to model inputs.
#[derive(Clone, Debug)]
pub struct Prepared<'a> {
    pub sample: &'a Sample,
    pub instruction: Vec<u32>,
}

pub fn prepare<'a>(samples: &'a [Sample], codecs: &Codecs) -> Vec<Prepared<'a>> {
    samples.iter().map(|s| Prepared { sample: s, instruction: codecs.bpe.encode(&s.instruction) }).collect()
}

/// Gradients of the batch mean token loss, computed per sample and summed
/// in sample order so results do not depend on the thread count.
pub fn batch_gradients(
    model: &Model<f32>,
    batch: &[Prepared<'_>],
    trainable: Trainable,
    dropout: f64,
    seed: u64,
) -> Result<(Params<f32>, f64, [(f64, usize); 4])> {
    let tokens: usize = batch
        .iter()
        .map(|p| p.sample.target[1..].iter().filter(|&&t| t != crate::vocab::PAD).count())
        .sum();
    if tokens == 0 {
        return Err(Error::invalid("batch has no scored target tokens"));
    }
    let scale = 1.0 / tokens as f32;
    let per: Vec<Result<(Params<f32>, f64, usize)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let ex = Example { image: &p.sample.image, instruction: &p.instruction, target: &p.sample.target };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut drop = Dropout { rate: dropout, rng: &mut rng };
            let tr = model.forward_traced(&ex, (dropout > 0.0).then_some(&mut drop))?;
            let mut g = model.params.zeros_like();
            let (l, n) = model.backward(&ex, &tr, scale, &mut g, trainable);
            Ok((g, l, n))
        })
        .collect();
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    let mut by_task = [(0.0, 0usize); 4];
    for (p, r) in batch.iter().zip(per) {
        let (g, l, n) = r?;
        for ((_, acc), (_, gi)) in total.named_mut().into_iter().zip(g.named()) {
            acc.data.iter_mut().zip(&gi.data).for_each(|(a, &b)| *a += b);
        }
        loss += l;
        let slot = &mut by_task[p.sample.task.index()];
        slot.0 += l;
        slot.1 += n;
    }
    Ok((total, loss / tokens as f64, by_task))
}

/// One forward/backward/update.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut AdamW,
    batch: &[Prepared<'_>],
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepStats> {
    let trainable = cfg.trainable();
    let step_seed = derive_seed(cfg.seed ^ 0x5eed, step as u64);
    let (mut grads, loss, by_task) = batch_gradients(model, batch, trainable, model.config.dropout, step_seed)?;
    let tasks = || batch.iter().map(|p| p.sample.task.name()).collect::<Vec<_>>().join(",");
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {step} (tasks {})", tasks())));
    }
    let norm = grad_norm(&grads, trainable);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step {step} (tasks {})", tasks())));
    }
    let clipped = clip_gradients(&mut grads, cfg.clip_norm, trainable);
    let lr = cfg.lr_at(step);
    opt.update(&mut model.params, &grads, lr, trainable);
    let task_loss = by_task.map(|(s, n)| (n > 0).then(|| s / n as f64));
    Ok(StepStats { step, loss, task_loss, grad_norm: norm, clipped_norm: clipped, lr })
}

/// Where training samples come from.
pub enum DataSource<'a> {
    /// Targets are built on the fly from a fixed scene pool.
    Generator { scenes: &'a [Scene], corpus: &'a Corpus },
    /// A manifest consumed without replacement.
    Manifest(&'a [Sample]),
    /// The same samples every step (all of them form one batch).
    Fixed(&'a [Sample]),
}

struct ManifestQueues<'a> {
    queues: [Vec<&'a Sample>; 4],
}

impl<'a> ManifestQueues<'a> {
    fn new(samples: &'a [Sample], seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut queues: [Vec<&Sample>; 4] = Default::default();
        for s in samples {
            queues[s.task.index()].push(s);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for q in queues.iter_mut() {
            q.shuffle(&mut rng);
        }
        ManifestQueues { queues }
    }

    fn take(&mut self, task: Task) -> Result<&'a Sample> {
        self.queues[task.index()].pop().ok_or_else(|| {
            Error::invalid(format!("manifest exhausted: no {task} samples left; use generator mode for longer runs"))
        })
    }
}

/// Assembles the batch for `step`.
fn assemble<'a>(
    source: &DataSource<'a>,
    queues: &mut Option<ManifestQueues<'a>>,
    codecs: &Codecs,
    cfg: &TrainConfig,
    step: usize,
    owned: &mut Vec<Sample>,
) -> Result<Vec<&'a Sample>> {
    let ratios = cfg.effective_ratios();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, step as u64));
    let mut tasks = Vec::with_capacity(cfg.batch_size);
    let first = sample_task(&mut rng, &ratios)?;
    for i in 0..cfg.batch_size {
        tasks.push(if cfg.homogeneous_batches || i == 0 { first } else { sample_task(&mut rng, &ratios)? });
    }
    match source {
        DataSource::Fixed(s) => Ok(s.iter().collect()),
        DataSource::Manifest(_) => {
            let q = queues.as_mut().expect("queues for manifest source");
            tasks.into_iter().map(|t| q.take(t)).collect()
        }
        DataSource::Generator { scenes, corpus } => {
            owned.clear();
            for t in tasks {
                let scene = &scenes[rng.gen_range(0..scenes.len())];
                owned.push(build_target(t, scene, codecs, corpus, cfg.instructions, &mut rng)?);
            }
            Ok(Vec::new())
        }
    }
}

/// Outputs of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: Vec<StepStats>,
    /// (step, mean validation loss) pairs.
    pub validation: Vec<(usize, f64)>,
    pub task_counts: [usize; 4],
}

pub const LOG_HEADER: &str = "step,total_loss,semseg_loss,res_loss,rec_loss,caption_loss";

pub fn log_line(s: &StepStats) -> String {
    let mut line = format!("{},{:.6}", s.step, s.loss);
    for l in s.task_loss {
        match l {
            Some(v) => line.push_str(&format!(",{v:.6}")),
            None => line.push(','),
        }
    }
    line
}

/// Options for files written while training.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
    pub quiet: bool,
}

/// Mean teacher-forced token loss over `samples`.
pub fn evaluate_loss(model: &Model<f32>, samples: &[Sample], codecs: &Codecs) -> Result<f64> {
    let prepared = prepare(samples, codecs);
    let parts: Vec<Result<(f64, usize)>> = prepared
        .par_iter()
        .map(|p| model.example_loss(&Example { image: &p.sample.image, instruction: &p.instruction, target: &p.sample.target }))
        .collect();
    let (mut s, mut n) = (0.0, 0);
    for r in parts {
        let (a, b) = r?;
        s += a;
        n += b;
    }
    if n == 0 {
        return Err(Error::invalid("no scored tokens in validation set"));
    }
    Ok(s / n as f64)
}

/// Runs the full loop. Writes `metrics.csv`, periodic and final checkpoints
/// to `outputs.dir` when set.
pub fn train_loop(
    mut model: Model<f32>,
    codecs: &Codecs,
    source: DataSource<'_>,
    validation: &[Sample],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !codecs.codebook.is_fitted() {
        return Err(Error::Prerequisite("codecs must be fitted before training (run fit-codecs)".into()));
    }
    if model.config.vocab != codecs.layout.counts() {
        return Err(Error::LayoutMismatch {
            found: format!("{:?}", model.config.vocab),
            expected: format!("{:?}", codecs.layout.counts()),
        });
    }
    match &source {
        DataSource::Generator { scenes, .. } if scenes.is_empty() => return Err(Error::config("no scenes to train on")),
        DataSource::Fixed(s) | DataSource::Manifest(s) if s.is_empty() => return Err(Error::config("no samples to train on")),
        _ => {}
    }
    let mut log = match &outputs.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.csv"))?);
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut queues = match &source {
        DataSource::Manifest(s) => Some(ManifestQueues::new(s, cfg.seed)),
        _ => None,
    };
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut val = Vec::new();
    let mut task_counts = [0; 4];
    let mut owned = Vec::new();
    for step in 0..cfg.steps {
        let borrowed = assemble(&source, &mut queues, codecs, cfg, step, &mut owned)?;
        let batch: Vec<Prepared<'_>> = if borrowed.is_empty() {
            owned.iter().map(|s| Prepared { sample: s, instruction: codecs.bpe.encode(&s.instruction) }).collect()
        } else {
            borrowed.iter().map(|&s| Prepared { sample: s, instruction: codecs.bpe.encode(&s.instruction) }).collect()
        };
        for p in &batch {
            task_counts[p.sample.task.index()] += 1;
        }
        let stats = train_step(&mut model, &mut opt, &batch, cfg, step)?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", log_line(&stats))?;
        }
        if !outputs.quiet && (step % 100 == 0 || step + 1 == cfg.steps) {
            log::info!("step {step} loss {:.4} lr {:.2e} |g| {:.3}", stats.loss, stats.lr, stats.grad_norm);
        }
        history.push(stats);
        let done = step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && !validation.is_empty() {
            let v = evaluate_loss(&model, validation, codecs)?;
            if !outputs.quiet {
                log::info!("step {done} validation loss {v:.4}");
            }
            val.push((done, v));
        }
        if let Some(dir) = &outputs.dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
                write_checkpoint(&model, codecs, cfg, done, &dir.join(format!("step-{done:06}.ckpt")))?;
            }
        }
    }
    if let Some(mut f) = log {
        f.flush()?;
    }
    if let Some(dir) = &outputs.dir {
        write_checkpoint(&model, codecs, cfg, cfg.steps, &dir.join("final.ckpt"))?;
        if !val.is_empty() {
            let mut s = String::from("step,validation_loss\n");
            for (st, v) in &val {
                s.push_str(&format!("{st},{v:.6}\n"));
            }
            std::fs::write(dir.join("validation.csv"), s)?;
        }
    }
    Ok(TrainOutcome { model, history, validation: val, task_counts })
}

fn write_checkpoint(model: &Model<f32>, codecs: &Codecs, cfg: &TrainConfig, step: usize, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new(model.clone(), codecs.clone())?;
    ck.meta = serde_json::json!({ "step": step, "seed": cfg.seed, "train": cfg });
    save_checkpoint(&ck, path)
}
