//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codecs::{encode_labels, Codecs, ColorImage};
use crate::data::{
    build_sample, derive_seed, fit_codecs, generate_scenes, read_manifest, sample_task, tokenize_sample, write_manifest,
    CodecConfig, Sample, Scene, SceneConfig, TaskRatios,
};
use crate::error::{Error, Result};
use crate::eval::{self, config_digest, EvalReport, RecordResult};
use crate::inference::{run_task, DecodeConfig, TaskOutput};
use crate::instructions::{expand_paraphrases, Corpus, ExpansionConfig, NamedColor, SplitFilter};
use crate::model::{load_checkpoint, Checkpoint, Model, ModelConfig};
use crate::task::Task;
use crate::trainer::{train_loop, DataSource, OutputMode, TrainConfig, TrainOutputs};
use crate::vocab::{VocabCounts, VocabLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scenes: usize,
    pub eval_scenes: usize,
    pub scene: SceneConfig,
    /// Task mix of the written training manifest.
    pub ratios: TaskRatios,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { scenes: 2000, eval_scenes: 100, scene: SceneConfig::default(), ratios: TaskRatios::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tasks: Vec<Task>,
    pub n_values: Vec<usize>,
    pub sweep_seeds: usize,
    /// Scenes used by the ablations.
    pub ablation_scenes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { tasks: Task::ALL.to_vec(), n_values: vec![1, 4, 6, 8, 10], sweep_seeds: 3, ablation_scenes: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub codecs: PathBuf,
    pub checkpoint: PathBuf,
    /// Instruction corpus; the bundled one when unset.
    pub instructions: Option<PathBuf>,
    pub expansion: ExpansionConfig,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: "data".into(),
            codecs: "data/codecs.json".into(),
            checkpoint: "run/final.ckpt".into(),
            instructions: None,
            expansion: ExpansionConfig::default(),
        }
    }
}

/// Every setting of a run in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vocab: VocabCounts,
    pub codec: CodecConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            vocab: VocabCounts::default(),
            codec: CodecConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        VocabLayout::new(self.vocab)?;
        if self.model.vocab != self.vocab {
            return Err(Error::config("model.vocab must equal the vocab section"));
        }
        self.model.validate()?;
        if self.codec.patch_size != self.model.patch_size {
            return Err(Error::config("codec.patch_size must equal model.patch_size"));
        }
        if self.data.scene.canvas != self.model.image_size {
            return Err(Error::config("data.scene.canvas must equal model.image_size"));
        }
        if self.data.scenes == 0 {
            return Err(Error::config("data.scenes must be positive"));
        }
        self.data.ratios.normalized()?;
        self.train.validate()?;
        self.decode.validate()?;
        if self.eval.n_values.is_empty() || self.eval.n_values.contains(&0) {
            return Err(Error::config("eval.n_values must be non-empty and positive"));
        }
        Ok(())
    }

    fn corpus(&self) -> Result<Corpus> {
        match &self.paths.instructions {
            Some(p) => Corpus::load(p),
            None => Ok(Corpus::bundled()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "instructseq", version, about = "Instruction-conditioned sequence model for dense, box and caption outputs")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic scenes with training and evaluation manifests.
    GenData,
    /// Fit the patch codebook and BPE model on the generated scenes.
    FitCodecs,
    /// Extend the instruction corpus through the paraphrase endpoint.
    ExpandInstructions(ExpandArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Run one task on one image.
    Infer(InferArgs),
    /// Evaluate a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Ablation studies.
    Ablate(AblateArgs),
    /// Print a checkpoint summary.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    #[arg(long)]
    pub template: String,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Endpoint URL (overrides the configured one).
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub offline: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Train from a manifest instead of the scene generator.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub instruction: String,
    #[arg(long)]
    pub task: Task,
    /// Fill color of a RES output; inferred from the instruction when omitted.
    #[arg(long)]
    pub color: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to the evaluation manifest under the data directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub num_samples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(subcommand)]
    pub study: Study,
}

#[derive(Subcommand, Debug)]
pub enum Study {
    /// Full paraphrase corpus versus a single fixed template, on held-out phrasings.
    Paraphrase,
    /// Metrics as a function of the number of aggregated samples.
    NSweep {
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// All tasks versus image-output tasks only.
    ImageOnly,
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 success, 1 usage or validation error, 2 runtime error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    cfg.decode.seed = cfg.seed;
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads must be positive"));
        }
        // a second initialization (tests running commands in one process) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = cli.out.clone();
    match cli.command {
        Command::GenData => gen_data(&cfg, &out.unwrap_or_else(|| cfg.paths.data.clone())),
        Command::FitCodecs => fit(&cfg, out.as_deref()),
        Command::ExpandInstructions(a) => expand(&cfg, a, &out.unwrap_or_else(|| ".".into())),
        Command::Train(a) => train(&cfg, a, &out.unwrap_or_else(|| "run".into()), cli.quiet),
        Command::Infer(a) => infer(&cfg, a, &out.unwrap_or_else(|| "infer".into())),
        Command::Evaluate(a) => evaluate(&cfg, a, &out.unwrap_or_else(|| "eval".into())),
        Command::Ablate(a) => ablate(&cfg, a.study, &out.unwrap_or_else(|| "ablate".into()), cli.quiet),
        Command::InspectCheckpoint { path } => inspect(&path),
    }
}

/// Description of a generated scene pool, enough to regenerate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePool {
    pub seed: u64,
    pub count: usize,
    pub eval_seed: u64,
    pub eval_count: usize,
    pub scene: SceneConfig,
}

impl ScenePool {
    pub fn from_config(cfg: &RunConfig) -> Self {
        ScenePool {
            seed: cfg.seed,
            count: cfg.data.scenes,
            eval_seed: derive_seed(cfg.seed, u64::MAX),
            eval_count: cfg.data.eval_scenes,
            scene: cfg.data.scene.clone(),
        }
    }

    pub fn train_scenes(&self) -> Result<Vec<Scene>> {
        generate_scenes(self.seed, self.count, &self.scene)
    }

    pub fn eval_scenes(&self) -> Result<Vec<Scene>> {
        generate_scenes(self.eval_seed, self.eval_count, &self.scene)
    }

    pub fn load(data_dir: &Path) -> Result<Self> {
        let p = data_dir.join("scenes.json");
        let text = std::fs::read_to_string(&p)
            .map_err(|e| Error::Prerequisite(format!("cannot read {}: {e} (run gen-data first)", p.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Untokenized samples: for training, one per scene with a task drawn from
/// the ratios; for evaluation, one per scene and task.
fn manifest_samples(scenes: &[Scene], corpus: &Corpus, ratios: &TaskRatios, seed: u64, every_task: bool) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let tasks = if every_task { Task::ALL.to_vec() } else { vec![sample_task(&mut rng, ratios)?] };
        for t in tasks {
            out.push(build_sample(t, s, corpus, SplitFilter::Train, &mut rng)?);
        }
    }
    Ok(out)
}

fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let corpus = cfg.corpus()?;
    corpus.validate()?;
    let pool = ScenePool::from_config(cfg);
    let train = pool.train_scenes()?;
    let evals = pool.eval_scenes()?;
    let palette = crate::codecs::Palette::for_classes(crate::data::NUM_CLASSES)?;
    let train_samples = manifest_samples(&train, &corpus, &cfg.data.ratios, derive_seed(cfg.seed, 1), false)?;
    let eval_samples = manifest_samples(&evals, &corpus, &cfg.data.ratios, derive_seed(cfg.seed, 2), true)?;
    std::fs::create_dir_all(dir)?;
    write_manifest(&train_samples, &palette, dir.join("train").join("manifest.jsonl"))?;
    write_manifest(&eval_samples, &palette, dir.join("eval").join("manifest.jsonl"))?;
    std::fs::write(dir.join("scenes.json"), serde_json::to_string_pretty(&pool)? + "\n")?;
    log::info!("wrote {} training and {} evaluation records to {}", train_samples.len(), eval_samples.len(), dir.display());
    Ok(())
}

fn fit(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let pool = ScenePool::load(&cfg.paths.data)?;
    let scenes = pool.train_scenes()?;
    let corpus = cfg.corpus()?;
    let (codecs, report) = fit_codecs(&scenes, VocabLayout::new(cfg.vocab)?, &cfg.codec, &corpus, cfg.seed)?;
    let path = match out {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            d.join("codecs.json")
        }
        None => cfg.paths.codecs.clone(),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    codecs.save(&path)?;
    let objectives: Vec<String> = report.objectives.iter().map(|o| format!("{o:.6}")).collect();
    std::fs::write(path.with_extension("kmeans.csv"), format!("iteration,objective\n{}\n", objectives
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{i},{o}"))
        .collect::<Vec<_>>()
        .join("\n")))?;
    log::info!(
        "codebook fit on {} distinct patches, objective {}; BPE vocab {}",
        report.distinct_patches,
        objectives.last().map(String::as_str).unwrap_or("-"),
        codecs.bpe.vocab_size()
    );
    Ok(())
}

fn expand(cfg: &RunConfig, a: ExpandArgs, out: &Path) -> Result<()> {
    let mut corpus = cfg.corpus()?;
    let mut ec = cfg.paths.expansion.clone();
    if a.url.is_some() {
        ec.url = a.url;
    }
    ec.offline |= a.offline;
    let added = expand_paraphrases(&ec, &mut corpus, &a.template, a.n)?;
    corpus.validate()?;
    std::fs::create_dir_all(out)?;
    corpus.save(out.join("instructions.json"))?;
    log::info!("added {} paraphrases to {}", added.len(), a.template);
    Ok(())
}

fn load_codecs(cfg: &RunConfig) -> Result<Codecs> {
    let c = Codecs::load(&cfg.paths.codecs)?;
    if c.layout.counts() != cfg.vocab {
        return Err(Error::LayoutMismatch { found: format!("{:?}", c.layout.counts()), expected: format!("{:?}", cfg.vocab) });
    }
    Ok(c)
}

fn train(cfg: &RunConfig, a: TrainArgs, out: &Path, quiet: bool) -> Result<()> {
    let mut tc = cfg.train.clone();
    if let Some(s) = a.steps {
        tc.steps = s;
    }
    tc.validate()?;
    let codecs = load_codecs(cfg)?;
    let corpus = cfg.corpus()?;
    let model = Model::<f32>::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 7)))?;
    let outputs = TrainOutputs { dir: Some(out.to_path_buf()), quiet };
    let outcome = match a.manifest {
        Some(m) => {
            let samples = read_manifest(&m, &codecs)?;
            train_loop(model, &codecs, DataSource::Manifest(&samples), &[], &tc, &outputs)?
        }
        None => {
            let pool = ScenePool::load(&cfg.paths.data)?;
            let scenes = pool.train_scenes()?;
            let val = validation_samples(&pool, &codecs, &corpus, cfg.seed)?;
            train_loop(model, &codecs, DataSource::Generator { scenes: &scenes, corpus: &corpus }, &val, &tc, &outputs)?
        }
    };
    if let Some(last) = outcome.history.last() {
        log::info!("finished {} steps, final loss {:.4}", tc.steps, last.loss);
    }
    Ok(())
}

fn validation_samples(pool: &ScenePool, codecs: &Codecs, corpus: &Corpus, seed: u64) -> Result<Vec<Sample>> {
    let scenes = pool.eval_scenes()?;
    let mut out = Vec::new();
    for (i, s) in scenes.iter().take(16).enumerate() {
        let task = Task::ALL[i % 4];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x7a1, i as u64));
        let mut sample = build_sample(task, s, corpus, SplitFilter::Train, &mut rng)?;
        tokenize_sample(&mut sample, codecs)?;
        out.push(sample);
    }
    Ok(out)
}

fn load_model(cfg: &RunConfig, path: Option<PathBuf>) -> Result<Checkpoint> {
    load_checkpoint(path.unwrap_or_else(|| cfg.paths.checkpoint.clone()), Some(cfg.vocab))
}

fn write_output(dir: &Path, stem: &str, output: &TaskOutput, codecs: &Codecs) -> Result<serde_json::Value> {
    Ok(match output {
        TaskOutput::Labels(map) => {
            let f = format!("{stem}.labels.ppm");
            encode_labels(map, &codecs.palette)?.save(dir.join(&f))?;
            serde_json::json!({ "labels": f })
        }
        TaskOutput::Mask { mask, color } => {
            let f = format!("{stem}.mask.pgm");
            mask.to_gray().save(dir.join(&f))?;
            serde_json::json!({ "mask": f, "color": color })
        }
        TaskOutput::Box(b) => serde_json::json!({ "box": b.coords() }),
        TaskOutput::Caption(c) => serde_json::json!({ "caption": c }),
    })
}

fn infer(cfg: &RunConfig, a: InferArgs, out: &Path) -> Result<()> {
    let color = match &a.color {
        Some(c) => Some(NamedColor::from_name(c).ok_or_else(|| Error::config(format!("unknown color {c:?}")))?),
        None => None,
    };
    let ck = load_model(cfg, a.checkpoint)?;
    let image = ColorImage::load(&a.image)?;
    let p = run_task(&ck.model, &ck.codecs, &image, &a.instruction, a.task, color, &cfg.decode)?;
    std::fs::create_dir_all(out)?;
    let mut entry = write_output(out, "output", &p.output, &ck.codecs)?;
    if let Some(c) = &p.confidence {
        c.to_gray().save(out.join("confidence.pgm"))?;
        entry["confidence"] = "confidence.pgm".into();
    }
    entry["task"] = serde_json::to_value(a.task)?;
    entry["instruction"] = a.instruction.clone().into();
    entry["skipped_samples"] = p.skipped.into();
    std::fs::write(out.join("index.json"), serde_json::to_string_pretty(&entry)? + "\n")?;
    Ok(())
}

fn write_records(dir: &Path, records: &[RecordResult], codecs: &Codecs) -> Result<()> {
    let pred = dir.join("predictions");
    std::fs::create_dir_all(&pred)?;
    let mut index = Vec::new();
    for r in records {
        let mut e = write_output(&pred, &r.id, &r.output, codecs)?;
        if let Some(c) = &r.confidence {
            let f = format!("{}.confidence.pgm", r.id);
            c.to_gray().save(pred.join(&f))?;
            e["confidence"] = f.into();
        }
        e["id"] = r.id.clone().into();
        e["task"] = serde_json::to_value(r.task)?;
        index.push(e);
    }
    std::fs::write(pred.join("index.json"), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(())
}

fn evaluate(cfg: &RunConfig, a: EvaluateArgs, out: &Path) -> Result<()> {
    let mut dc = cfg.decode.clone();
    if let Some(n) = a.num_samples {
        dc.num_samples = n;
    }
    dc.validate()?;
    let ck = load_model(cfg, a.checkpoint)?;
    let manifest = a.manifest.unwrap_or_else(|| cfg.paths.data.join("eval").join("manifest.jsonl"));
    let samples: Vec<Sample> =
        read_manifest(&manifest, &ck.codecs)?.into_iter().filter(|s| cfg.eval.tasks.contains(&s.task)).collect();
    if samples.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let (report, records) = eval::evaluate(&ck.model, &ck.codecs, &samples, &dc, "train")?;
    report.write(out)?;
    write_records(out, &records, &ck.codecs)?;
    for (k, v) in &report.metrics {
        log::info!("{k} = {v:.4}");
    }
    Ok(())
}

fn train_variant(cfg: &RunConfig, codecs: &Codecs, corpus: &Corpus, scenes: &[Scene], tc: &TrainConfig, quiet: bool) -> Result<Model<f32>> {
    let model = Model::<f32>::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 7)))?;
    let outputs = TrainOutputs { dir: None, quiet };
    Ok(train_loop(model, codecs, DataSource::Generator { scenes, corpus }, &[], tc, &outputs)?.model)
}

fn ablate(cfg: &RunConfig, study: Study, out: &Path, quiet: bool) -> Result<()> {
    match study {
        Study::NSweep { n, checkpoint } => {
            let ns = n.unwrap_or_else(|| cfg.eval.n_values.clone());
            if ns.is_empty() || ns.contains(&0) {
                return Err(Error::config("--n needs positive values"));
            }
            let ck = load_model(cfg, checkpoint)?;
            let corpus = cfg.corpus()?;
            let pool = ScenePool::load(&cfg.paths.data)?;
            let scenes: Vec<Scene> = pool.eval_scenes()?.into_iter().take(cfg.eval.ablation_scenes).collect();
            let sem = eval::eval_samples(&scenes, Task::Semseg, &ck.codecs, &corpus, SplitFilter::Train, cfg.seed)?;
            let rec = eval::eval_samples(&scenes, Task::Rec, &ck.codecs, &corpus, SplitFilter::Train, cfg.seed ^ 1)?;
            let seeds: Vec<u64> = (0..cfg.eval.sweep_seeds as u64).map(|s| derive_seed(cfg.seed, s)).collect();
            let rows = eval::n_sweep(&ck.model, &ck.codecs, &sem, &rec, &ns, &seeds, &cfg.decode)?;
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("n_sweep.csv"), eval::sweep_csv(&rows))?;
        }
        Study::Paraphrase => {
            let codecs = load_codecs(cfg)?;
            let corpus = cfg.corpus()?;
            let pool = ScenePool::load(&cfg.paths.data)?;
            let scenes = pool.train_scenes()?;
            // semantic maps teach localization; RES alone learns it too slowly
            let ratios = TaskRatios { semseg: 0.5, res: 0.5, rec: 0.0, caption: 0.0 };
            let full_cfg = TrainConfig { ratios, instructions: SplitFilter::Train, ..cfg.train.clone() };
            let tmpl_cfg = TrainConfig { instructions: SplitFilter::Template, ..full_cfg.clone() };
            let full = train_variant(cfg, &codecs, &corpus, &scenes, &full_cfg, quiet)?;
            let tmpl = train_variant(cfg, &codecs, &corpus, &scenes, &tmpl_cfg, quiet)?;
            let evals: Vec<Scene> = pool.eval_scenes()?.into_iter().take(cfg.eval.ablation_scenes).collect();
            let report = eval::paraphrase_generalization(&full, &tmpl, &codecs, &evals, &corpus, &cfg.decode, cfg.seed)?;
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("paraphrase.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            std::fs::write(out.join("paraphrase.csv"), report.to_csv())?;
        }
        Study::ImageOnly => {
            let codecs = load_codecs(cfg)?;
            let corpus = cfg.corpus()?;
            let pool = ScenePool::load(&cfg.paths.data)?;
            let scenes = pool.train_scenes()?;
            let evals: Vec<Scene> = pool.eval_scenes()?.into_iter().take(cfg.eval.ablation_scenes).collect();
            let mut samples = eval::eval_samples(&evals, Task::Semseg, &codecs, &corpus, SplitFilter::Train, cfg.seed)?;
            samples.extend(eval::eval_samples(&evals, Task::Res, &codecs, &corpus, SplitFilter::Train, cfg.seed ^ 1)?);
            let mut rows = BTreeMap::new();
            for mode in [OutputMode::All, OutputMode::ImageOnly] {
                let tc = TrainConfig { mode, ..cfg.train.clone() };
                let model = train_variant(cfg, &codecs, &corpus, &scenes, &tc, quiet)?;
                let (r, _) = eval::evaluate(&model, &codecs, &samples, &cfg.decode, "train")?;
                rows.insert(if mode == OutputMode::All { "all" } else { "image-only" }, r);
            }
            std::fs::create_dir_all(out)?;
            let mut csv = String::from("mode,semseg_miou,res_oiou\n");
            for (mode, r) in &rows {
                let g = |k: &str| r.metrics.get(k).copied().unwrap_or(f64::NAN);
                csv.push_str(&format!("{mode},{:.6},{:.6}\n", g("semseg_miou"), g("res_oiou")));
            }
            std::fs::write(out.join("image_only.csv"), csv)?;
            let reports: BTreeMap<&str, &EvalReport> = rows.iter().map(|(k, v)| (*k, v)).collect();
            std::fs::write(out.join("image_only.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
        }
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ck = load_checkpoint(path, None)?;
    let tensors: Vec<serde_json::Value> = ck
        .model
        .params
        .named()
        .into_iter()
        .map(|(n, t)| serde_json::json!({ "name": n, "shape": t.shape }))
        .collect();
    let summary = serde_json::json!({
        "config": ck.model.config,
        "config_digest": config_digest(&ck.model.config)?,
        "parameters": ck.model.params.num_params(),
        "codebook_entries": ck.codecs.codebook.len(),
        "bpe_vocab": ck.codecs.bpe.vocab_size(),
        "classes": ck.codecs.palette.class_count(),
        "meta": ck.meta,
        "tensors": tensors,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
