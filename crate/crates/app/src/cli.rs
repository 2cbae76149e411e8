//! Command-line interface. Every command prints a one-line JSON summary on
//! stdout; failures surface as a JSON error line from `main`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sketchxai_core::analysis::primitives::{
    primitive_replace_accuracy, shape_inversion, PrimitiveCodebook, ShapeInversionConfig,
};
use sketchxai_core::analysis::transfer::transfer_map;
use sketchxai_core::analysis::{attention_export, collect_shape_embeddings, order_similarity, save_matrix_csv};
use sketchxai_core::dataset::{Dataset, SplitSizes};
use sketchxai_core::model::train::{evaluate, train, TrainConfig};
use sketchxai_core::model::{Ablation, ModelConfig};
use sketchxai_core::rdp::DEFAULT_EPSILON;
use sketchxai_core::render::{self, FrameFormat, Style};
use sketchxai_core::sli::InitStrategy;
use sketchxai_core::{synth, Checkpoint, Sketch, SliConfig, TaskKind, Trajectory};

use crate::data;
use crate::service::{self, AppState, SampleSource};
use crate::wire::{ClassRef, WireSketch};

#[derive(Parser, Debug)]
#[command(name = "sketchxai", version, about = "Stroke-level explanations for sketch classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Normalize and simplify QuickDraw NDJSON into a dataset cache.
    Ingest(IngestArgs),
    /// Write a procedurally generated corpus in QuickDraw NDJSON form.
    Synth(SynthArgs),
    /// Export one sketch from a dataset as wire JSON.
    Sample(SampleArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Top-1 accuracy of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Run stroke location inversion on one sketch.
    Sli(SliArgs),
    #[command(subcommand)]
    Analyze(Analyze),
    /// Render a sketch to SVG or a trajectory to frames.
    Render(RenderArgs),
    /// Serve the JSON API for the workbench.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// QuickDraw NDJSON directory or dataset cache file.
    #[arg(long, env = "SKETCHXAI_DATA_DIR")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub valid_per_class: usize,
    #[arg(long, default_value_t = 500)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// RDP tolerance in normalized units.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

impl DataArgs {
    fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train_per_class,
            valid: self.valid_per_class,
            test: self.test_per_class,
        }
    }

    fn split(&self, categories: &[String]) -> Result<sketchxai_core::dataset::Split> {
        data::load_split(&self.data, categories, self.sizes(), self.split_seed, self.epsilon)
            .with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long, env = "SKETCHXAI_DATA_DIR")]
    pub data: PathBuf,
    /// Comma-separated category names.
    #[arg(long)]
    pub classes: String,
    #[arg(long, default_value_t = usize::MAX, hide_default_value = true)]
    pub per_class: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated categories; defaults to every generator category.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long, env = "SKETCHXAI_DATA_DIR")]
    pub data: PathBuf,
    #[arg(long)]
    pub category: String,
    /// Position within the category, in file order.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AblationArg {
    Full,
    NoShape,
    NoLocation,
    NoOrder,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoShape => Ablation::NoShape,
            AblationArg::NoLocation => Ablation::NoLocation,
            AblationArg::NoOrder => Ablation::NoOrder,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated category names; labels follow this order.
    #[arg(long)]
    pub classes: String,
    /// Model preset: micro, tiny or base.
    #[arg(long, default_value = "micro")]
    pub config: String,
    #[arg(long, value_enum, default_value = "full")]
    pub ablation: AblationArg,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Recovery,
    Transfer,
    Counterfactual,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Recovery => TaskKind::Recovery,
            TaskArg::Transfer => TaskKind::Transfer,
            TaskArg::Counterfactual => TaskKind::Counterfactual,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SliOpts {
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = SliConfig::default().lr_max)]
    pub lr_max: f64,
    #[arg(long, default_value_t = SliConfig::default().lr_min)]
    pub lr_min: f64,
    /// Per-axis cap on one step's displacement.
    #[arg(long, default_value_t = SliConfig::default().max_move)]
    pub max_move: f64,
    /// Recovery initial layout: standard deviation of the random locations.
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f64,
    /// Start recovery from the canvas centre instead of random locations.
    #[arg(long)]
    pub centre_init: bool,
    #[arg(long, default_value_t = SliConfig::default().lambda)]
    pub lambda: f64,
}

impl SliOpts {
    fn config(&self, task: TaskKind, target: Option<usize>, seed: u64) -> SliConfig {
        SliConfig {
            task,
            target,
            steps: self.steps,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            max_move: self.max_move,
            init: if self.centre_init {
                InitStrategy::Centre
            } else {
                InitStrategy::RandomNormal { sigma: self.sigma }
            },
            lambda: self.lambda,
            seed,
            stop_at_confidence: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct SliArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Sketch in wire JSON.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "recovery")]
    pub task: TaskArg,
    /// Target class by name or index.
    #[arg(long)]
    pub target: Option<ClassRef>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub opts: SliOpts,
    /// Round frame values to this many decimals for reproducible exports.
    #[arg(long)]
    pub precision: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Analyze {
    /// Mean final target probability for every (source, target) pair.
    TransferMap(TransferMapArgs),
    /// Cluster shape embeddings into a primitive codebook.
    Primitives(PrimitivesArgs),
    /// Cosine similarity between order embeddings.
    OrderSim(OrderSimArgs),
    /// Attention maps for one sketch.
    Attention(AttentionArgs),
    /// Optimize shape embeddings toward a class, snapping to primitives.
    ShapeInversion(ShapeInversionArgs),
}

#[derive(Args, Debug)]
pub struct TransferMapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Either a count K (the checkpoint's first K classes) or a
    /// comma-separated list of names.
    #[arg(long)]
    pub classes: String,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub opts: SliOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PrimitivesArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Training sketches whose strokes are clustered.
    #[arg(long, default_value_t = 200)]
    pub sketches_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Also report replacement accuracy on the test split.
    #[arg(long)]
    pub evaluate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OrderSimArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Number of order positions compared.
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AttentionArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub per_head: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ShapeInversionArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target: ClassRef,
    #[arg(long, default_value_t = ShapeInversionConfig::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = ShapeInversionConfig::default().lr)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    SvgFrames,
    Gif,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Sketch wire JSON (`.json`) or trajectory (`.ndjson`).
    #[arg(long)]
    pub input: PathBuf,
    /// SVG file for a sketch; output directory for a trajectory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "svg-frames")]
    pub format: FormatArg,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 256)]
    pub size: u32,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Sample source for `/samples`; synthetic sketches when absent.
    #[arg(long, env = "SKETCHXAI_DATA_DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub samples_per_class: usize,
    /// Idle seconds before an SLI session is dropped.
    #[arg(long, default_value_t = 900)]
    pub session_ttl: u64,
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn read_sketch(path: &Path, categories: &[String]) -> Result<Sketch> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let wire: WireSketch = serde_json::from_str(&text).map_err(sketchxai_core::Error::from)?;
    Ok(wire.to_sketch(categories, "sketch")?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Short stable fingerprint of a checkpoint file (FNV-1a).
pub fn checkpoint_id(bytes: &[u8]) -> String {
    let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    format!("{h:016x}")
}

fn resolve_classes(spec: &str, categories: &[String]) -> Result<Vec<usize>> {
    if let Ok(k) = spec.trim().parse::<usize>() {
        if k == 0 || k > categories.len() {
            bail!(sketchxai_core::Error::invalid(
                "classes",
                format!("need 1..={} classes, got {k}", categories.len())
            ));
        }
        return Ok((0..k).collect());
    }
    data::parse_list(spec)
        .iter()
        .map(|n| ClassRef::Name(n.clone()).resolve(categories, "classes").map_err(Into::into))
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth_corpus(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sli(a) => sli_cmd(a),
        Command::Analyze(a) => match a {
            Analyze::TransferMap(a) => transfer_map_cmd(a),
            Analyze::Primitives(a) => primitives_cmd(a),
            Analyze::OrderSim(a) => order_sim_cmd(a),
            Analyze::Attention(a) => attention_cmd(a),
            Analyze::ShapeInversion(a) => shape_inversion_cmd(a),
        },
        Command::Render(a) => render_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let categories = data::parse_list(&a.classes);
    let loaded = sketchxai_core::quickdraw::load_quickdraw(&a.data, &categories, a.per_class)?;
    let ds = loaded.dataset.preprocess(a.epsilon)?;
    ds.save(&a.out)?;
    emit(json!({
        "out": a.out,
        "categories": ds.categories,
        "samples": ds.samples.len(),
        "skipped": loaded.skipped,
    }));
    Ok(())
}

fn synth_corpus(a: SynthArgs) -> Result<()> {
    let owned = a.classes.as_deref().map(data::parse_list);
    let cats: Vec<&str> = match &owned {
        Some(list) => list.iter().map(String::as_str).collect(),
        None => synth::SYNTH_CATEGORIES.to_vec(),
    };
    synth::write_corpus(&a.out, &cats, a.per_class, a.seed)?;
    emit(json!({ "out": a.out, "categories": cats, "per_class": a.per_class }));
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let ds = data::load(&a.data, std::slice::from_ref(&a.category), a.index + 1, a.epsilon)?;
    let s = ds.samples.get(a.index).ok_or_else(|| {
        sketchxai_core::Error::InsufficientSamples {
            class: a.category.clone(),
            available: ds.samples.len(),
            requested: a.index + 1,
        }
    })?;
    let wire = WireSketch {
        strokes: s.sketch.strokes.clone(),
        label: Some(ClassRef::Name(a.category.clone())),
    };
    write_json(&a.out, &wire)?;
    emit(json!({ "out": a.out, "strokes": wire.strokes.len() }));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let categories = data::parse_list(&a.classes);
    let split = a.data.split(&categories)?;
    let model_config = ModelConfig::named(&a.config, categories.len())?.with_ablation(a.ablation.into());
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (model, logs) = train(&split.train, &split.valid, model_config, &cfg, |_| {})?;
    model.save(&a.out)?;
    let test_accuracy = if split.test.is_empty() {
        None
    } else {
        Some(evaluate(&model, &split.test)?)
    };
    emit(json!({
        "out": a.out,
        "ablation": Ablation::from(a.ablation).name(),
        "epochs": logs.len(),
        "final_train_loss": logs.last().map(|l| l.train_loss),
        "test_accuracy": test_accuracy,
    }));
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = load_ckpt(&a.ckpt)?;
    let split = a.data.split(&model.categories)?;
    let acc = evaluate(&model, &split.test)?;
    emit(json!({ "accuracy": acc, "samples": split.test.samples.len() }));
    Ok(())
}

fn sli_cmd(a: SliArgs) -> Result<()> {
    let model = load_ckpt(&a.ckpt)?;
    let sketch = read_sketch(&a.input, &model.categories)?;
    let target = a
        .target
        .as_ref()
        .map(|t| t.resolve(&model.categories, "target"))
        .transpose()?;
    let config = a.opts.config(a.task.into(), target, a.seed);
    let mut traj = sketchxai_core::run_sli(&model, &sketch, &config)?;
    if let Some(d) = a.precision {
        traj = traj.rounded(d);
    }
    std::fs::write(&a.out, traj.to_ndjson()?).with_context(|| format!("writing {}", a.out.display()))?;
    let last = traj.frames.last().expect("at least one frame");
    emit(json!({
        "out": a.out,
        "frames": traj.frames.len(),
        "original": model.categories[traj.header.original_label],
        "target": model.categories[traj.header.target_label],
        "p_target_initial": traj.frames[0].p_target,
        "p_target_final": last.p_target,
    }));
    Ok(())
}

fn transfer_map_cmd(a: TransferMapArgs) -> Result<()> {
    let model = load_ckpt(&a.ckpt)?;
    let classes = resolve_classes(&a.classes, &model.categories)?;
    let split = a.data.split(&model.categories)?;
    let config = a.opts.config(TaskKind::Transfer, None, a.seed);
    let map = transfer_map(&model, &split.test.samples, &classes, a.per_class, &config, a.seed)?;
    map.save(&a.out)?;
    emit(json!({
        "out": a.out,
        "sidecar": sketchxai_core::analysis::transfer::TransferMap::sidecar_path(&a.out),
        "classes": map.categories,
        "diagonal": (0..classes.len()).map(|i| map.matrix[i][i]).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn sub_sample(ds: &Dataset, per_class: usize) -> Vec<sketchxai_core::dataset::Sample> {
    data::by_class(&ds.samples, ds.categories.len())
        .into_iter()
        .flat_map(|v| v.into_iter().take(per_class))
        .collect()
}

fn primitives_cmd(a: PrimitivesArgs) -> Result<()> {
    let model = load_ckpt(&a.ckpt)?;
    let split = a.data.split(&model.categories)?;
    let picked = sub_sample(&split.train, a.sketches_per_class);
    let emb = collect_shape_embeddings(&model, &picked)?;
    let (book, km) = PrimitiveCodebook::build(&emb, a.k, a.seed, a.max_iters)?;
    book.save(&a.out)?;
    let accuracy = if a.evaluate {
        Some(primitive_replace_accuracy(&model, &split.test.samples, &book)?)
    } else {
        None
    };
    emit(json!({
        "out": a.out,
        "k": book.k(),
        "strokes": emb.index.len(),
        "inertia": km.inertia(),
        "iterations": km.inertia_history.len(),
        "replacement_accuracy": accuracy,
    }));
    Ok(())
}

fn order_sim_cmd(a: OrderSimArgs) -> Result<()> {
    let model = load_ckpt(&a.ckpt)?;
    let m = order_similarity(&model, a.m)?;
    let names: Vec<String> = (0..m.nrows()).map(|i| i.to_string()).collect();
    save_matrix_csv(&a.out, "order", &names, &names, &m)?;
    emit(json!({ "out": a.out, "size": m.nrows() }));
    Ok(())
}

fn attention_cmd(a: AttentionArgs) -> Result<()> {
    let model = load_ckpt(&a.ckpt)?;
    let sketch = read_sketch(&a.input, &model.categories)?;
    let export = attention_export(&model, &sketch, a.per_head)?;
    write_json(&a.out, &export)?;
    emit(json!({ "out": a.out, "tokens": export.tokens.len(), "layers": export.layers.len() }));
    Ok(())
}

fn shape_inversion_cmd(a: ShapeInversionArgs) -> Result<()> {
    let model = load_ckpt(&a.ckpt)?;
    let book = PrimitiveCodebook::load(&a.codebook)?;
    let sketch = read_sketch(&a.input, &model.categories)?;
    let target = a.target.resolve(&model.categories, "target")?;
    let cfg = ShapeInversionConfig {
        steps: a.steps,
        lr: a.lr,
    };
    let inv = shape_inversion(&model, &sketch, target, &book, &cfg)?;
    write_json(&a.out, &inv)?;
    emit(json!({
        "out": a.out,
        "p_target_initial": inv.steps.first().map(|s| s.p_target),
        "p_target_final": inv.steps.last().map(|s| s.p_target),
    }));
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if a.input.extension().is_some_and(|e| e == "ndjson") {
        let traj = Trajectory::read_ndjson(&text)?;
        let format = match a.format {
            FormatArg::SvgFrames => FrameFormat::SvgFrames,
            FormatArg::Gif => "gif".parse()?,
        };
        std::fs::create_dir_all(&a.out)?;
        let files = render::render_trajectory(&traj, format, a.stride, &a.out)?;
        emit(json!({ "out": a.out, "files": files.len() }));
    } else {
        let wire: WireSketch = serde_json::from_str(&text).map_err(sketchxai_core::Error::from)?;
        // labels are not needed to draw, so names are left unresolved; an
        // empty sketch renders as an empty canvas
        let sketch = Sketch::new(wire.strokes, None);
        if !sketch.strokes.is_empty() {
            sketch.validate(None)?;
        }
        let style = Style {
            size_px: a.size,
            ..Style::default()
        };
        std::fs::write(&a.out, render::render_svg_with(&sketch, &style))?;
        emit(json!({ "out": a.out, "strokes": sketch.strokes.len() }));
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let bytes = std::fs::read(&a.ckpt).with_context(|| format!("reading {}", a.ckpt.display()))?;
    let model = Checkpoint::from_bytes(&bytes)?;
    let source = match &a.data {
        Some(path) => {
            let ds = data::load(path, &model.categories, a.samples_per_class, DEFAULT_EPSILON)?;
            SampleSource::Dataset(data::by_class(&ds.samples, model.categories.len()))
        }
        None => SampleSource::Synthetic,
    };
    let state = AppState::new(model, checkpoint_id(&bytes), source)
        .with_idle_timeout(Duration::from_secs(a.session_ttl));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        let addr = listener.local_addr()?;
        log::info!("listening on http://{addr}");
        emit(json!({ "listening": addr.to_string(), "checkpoint_id": state.checkpoint_id }));
        service::spawn_reaper(&state);
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
