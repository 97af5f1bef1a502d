use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nvc_core::bitstream::{read_nvc1, write_nvc1};
use nvc_core::coder::vectors::{verify_backend, VectorSuite};
use nvc_core::coder::ReferenceCoder;
use nvc_core::config::{ArchKind, ModelConfig, SweepAxis};
use nvc_core::data::synthetic::write_toy_dataset;
use nvc_core::data::{pad_to_multiple, write_png, write_yuv420, DatasetManifest, SequenceEntry, SequenceFormat, VideoSequence};
use nvc_core::metrics::{bd_rate_by_sequence, channel_bitrate_ratio, channel_plot_svg, read_rd_csv, ChannelKind, QualityMetric};
use nvc_core::motion::{flow_to_rgb, FeatureMap};
use nvc_core::nn::checkpoint::{load_checkpoint, read_meta};
use nvc_core::nn::codec::NeuralCodec;
use nvc_core::nn::eval::{eval_model, run_eval, EvalOptions};
use nvc_core::nn::job::{run_train_job, TrainJob};
use nvc_core::nn::model::{count_parameters, build_model, frame_to_tensor};
use nvc_core::nn::sweep::{run_sweep, write_sweep, SweepRun};
use nvc_core::nn::training::{DistortionTarget, TrainOptions};
use nvc_core::train::{read_schedule, reference_schedule, DeskScale};
use nvc_core::NvcError;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] NvcError),
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

/// Conditional neural video codec: training, coding and evaluation.
#[derive(Parser)]
#[command(name = "nvc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect, check and sweep model configs.
    #[command(subcommand)]
    Config(ConfigCmd),
    /// Write a synthetic toy dataset.
    Dataset(DatasetArgs),
    /// Train one model for one λ with the staged schedule.
    Train(TrainArgs),
    /// Encode a sequence into an .nvc1 file.
    Encode(EncodeArgs),
    /// Decode an .nvc1 file to PNG frames or a .yuv file.
    Decode(DecodeArgs),
    /// Code a dataset with one checkpoint per λ and write RD reports.
    Eval(EvalArgs),
    /// Train and evaluate every point of a sweep directory.
    Sweep(SweepArgs),
    /// Per-channel bitrate ratios of the contextual and motion latents.
    AnalyzeChannels(ChannelArgs),
    /// BD-rate of a test RD table against an anchor table.
    Bdrate(BdrateArgs),
    /// Check the reference range coder against the frozen vectors.
    Vectors {
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum ConfigCmd {
    /// Validate a config file.
    Validate { file: PathBuf },
    /// Print a preset as JSON, with its parameter counts.
    Show {
        #[arg(long, default_value = "toy")]
        preset: String,
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        count: bool,
    },
    /// Emit one config per multiplier plus a sweep manifest.
    Sweep {
        /// Config file or preset name.
        #[arg(long, default_value = "toy")]
        base: String,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',')]
        scales: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Build each model to count parameters.
        #[arg(long)]
        count: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Cnn,
    Mixed,
    Transformer,
}

impl From<Arch> for ArchKind {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Cnn => ArchKind::Cnn,
            Arch::Mixed => ArchKind::MixedCnnTransformer,
            Arch::Transformer => ArchKind::Transformer,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Rgb,
    Yuv,
}

impl From<Metric> for QualityMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Rgb => QualityMetric::Rgb,
            Metric::Yuv => QualityMetric::Yuv,
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 9)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainSettings {
    /// Training dataset directory (or manifest file).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Schedule CSV; the built-in six-stage-group schedule when absent.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    steps_per_epoch: f64,
    #[arg(long, default_value_t = 10.0)]
    lr_scale: f64,
    #[arg(long, default_value_t = 6)]
    max_frames: usize,
    #[arg(long, default_value_t = 100)]
    clips: usize,
    #[arg(long, default_value_t = 7)]
    clip_len: usize,
    #[arg(long, default_value_t = 64)]
    patch: usize,
    /// Weight distortion 6:1:1 over Y, Cb, Cr instead of RGB MSE.
    #[arg(long)]
    yuv_target: bool,
    #[arg(long, default_value_t = 60)]
    flow_pretrain_steps: usize,
    #[arg(long, default_value_t = 600)]
    intra_pretrain_steps: usize,
}

#[derive(Args)]
struct ModelSource {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelSource,
    #[command(flatten)]
    settings: TrainSettings,
    #[arg(long)]
    lambda_index: usize,
    /// Checkpoint path; an existing checkpoint resumes at its stage cursor.
    #[arg(long)]
    out: PathBuf,
    /// Per-step CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct Checkpoint {
    /// A checkpoint file, or a directory holding `lambda<i>.safetensors`.
    #[arg(long)]
    model: PathBuf,
    /// Must match the config stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda_index: Option<usize>,
}

#[derive(Args)]
struct SequenceInput {
    /// A .yuv file, a directory of PNG frames, or a dataset directory.
    #[arg(long)]
    input: PathBuf,
    /// Sequence name when the input is a dataset.
    #[arg(long)]
    sequence: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value_t = 96)]
    frames: usize,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    ckpt: Checkpoint,
    #[command(flatten)]
    src: SequenceInput,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 32)]
    intra_period: usize,
    /// Write the encoder's reconstructions here as PNGs.
    #[arg(long)]
    recon: Option<PathBuf>,
    /// Write color-wheel PNGs of the flow between consecutive source frames.
    #[arg(long)]
    dump_flow: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    ckpt: Checkpoint,
    #[arg(long)]
    input: PathBuf,
    /// A directory for PNG frames, or a path ending in .yuv.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalSettings {
    #[arg(long, default_value_t = 32)]
    intra_period: usize,
    #[arg(long, default_value_t = 96)]
    frames: usize,
    #[arg(long, value_enum, default_value = "rgb")]
    metric: Metric,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint files, or one directory of `lambda<i>.safetensors`.
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    anchor: Option<PathBuf>,
    #[arg(long, default_value = "nvc")]
    label: String,
    #[command(flatten)]
    eval: EvalSettings,
}

#[derive(Args)]
struct SweepArgs {
    /// Directory written by `nvc config sweep`.
    #[arg(long)]
    dir: PathBuf,
    #[command(flatten)]
    settings: TrainSettings,
    /// Dataset the trained points are evaluated on.
    #[arg(long)]
    eval_dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    lambda_indices: Vec<usize>,
    #[command(flatten)]
    eval: EvalSettings,
}

#[derive(Args)]
struct ChannelArgs {
    #[command(flatten)]
    ckpt: Checkpoint,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    top: usize,
    #[arg(long, default_value_t = 32)]
    intra_period: usize,
    #[arg(long, default_value_t = 96)]
    frames: usize,
}

#[derive(Args)]
struct BdrateArgs {
    anchor: PathBuf,
    test: PathBuf,
    #[arg(long, value_enum, default_value = "rgb")]
    metric: Metric,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Config(c) => config(c),
        Cmd::Dataset(a) => {
            let m = write_toy_dataset(&a.out, a.count, a.width, a.height, a.frames, a.seed)?;
            println!("wrote {} sequences to {}", m.sequences.len(), a.out.display());
            Ok(())
        }
        Cmd::Train(a) => train(a),
        Cmd::Encode(a) => encode(a),
        Cmd::Decode(a) => decode(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::AnalyzeChannels(a) => channels(a),
        Cmd::Bdrate(a) => {
            let s = bd_rate_by_sequence(&read_rd_csv(&a.anchor)?, &read_rd_csv(&a.test)?, a.metric.into())?;
            for (seq, v) in &s.per_sequence {
                println!("{seq}\t{v:.4}%");
            }
            println!("mean\t{:.4}%", s.mean);
            Ok(())
        }
        Cmd::Vectors { file } => {
            let suite = VectorSuite::load(&file)?;
            let passed = verify_backend(&ReferenceCoder, &suite)?;
            println!("{} vectors match (format version {})", passed.len(), suite.format_version);
            Ok(())
        }
    }
}

fn config(c: ConfigCmd) -> Result<()> {
    match c {
        ConfigCmd::Validate { file } => {
            let cfg = ModelConfig::load(&file)?;
            cfg.validate()?;
            println!("{}: ok", file.display());
        }
        ConfigCmd::Show { preset, arch, count } => {
            let mut cfg = ModelConfig::preset(&preset)?;
            if let Some(a) = arch {
                cfg = cfg.with_arch(a.into());
            }
            println!("{}", cfg.to_json()?);
            if count {
                let r = count_parameters(&build_model(&cfg, 0)?);
                for (m, n) in r.rows() {
                    println!("{m:<20} {n:>12}");
                }
                println!("{:<20} {:>12}", "total", r.total);
            }
        }
        ConfigCmd::Sweep { base, axis, scales, out, count } => {
            let base = load_config(Some(Path::new(&base)).filter(|p| p.exists()), Some(&base))?;
            let axis: SweepAxis = axis.parse()?;
            let m = write_sweep(&base, axis, &scales, &out, count)?;
            for p in &m.points {
                let total = p.parameters.as_ref().map_or("-".to_string(), |r| r.total.to_string());
                println!("x{:<6} {:<16} {total}", p.scale, p.config.display());
            }
        }
    }
    Ok(())
}

fn load_config(file: Option<&Path>, preset: Option<&str>) -> Result<ModelConfig> {
    match (file, preset) {
        (Some(f), _) => Ok(ModelConfig::load(f)?),
        (None, Some(p)) => Ok(ModelConfig::preset(p)?),
        (None, None) => Ok(ModelConfig::toy()),
    }
}

fn training_sequences(root: &Path) -> Result<Vec<VideoSequence>> {
    let (m, dir) = DatasetManifest::load(root)?;
    Ok(m.sequences.iter().map(|e| e.load_rgb(&dir, None)).collect::<nvc_core::Result<_>>()?)
}

fn schedule_and_options(s: &TrainSettings, log: Option<PathBuf>) -> Result<(Vec<nvc_core::train::TrainingStage>, DeskScale, TrainOptions)> {
    let schedule = match &s.schedule {
        Some(p) => read_schedule(p)?,
        None => reference_schedule(),
    };
    let scale = DeskScale { steps_per_epoch: s.steps_per_epoch, lr_scale: s.lr_scale, max_frames: s.max_frames };
    let options = TrainOptions {
        seed: s.seed,
        target: if s.yuv_target { DistortionTarget::Yuv } else { DistortionTarget::Rgb },
        flow_pretrain_steps: s.flow_pretrain_steps,
        intra_pretrain_steps: s.intra_pretrain_steps,
        log_path: log,
        ..Default::default()
    };
    Ok((schedule, scale, options))
}

fn train(a: TrainArgs) -> Result<()> {
    let config = load_config(a.model.config.as_deref(), a.model.preset.as_deref())?;
    let (schedule, scale, options) = schedule_and_options(&a.settings, a.log)?;
    let job = TrainJob {
        config,
        lambda_index: a.lambda_index,
        schedule,
        scale,
        clips: a.settings.clips,
        clip_len: a.settings.clip_len,
        patch: a.settings.patch,
        options,
        checkpoint: a.out,
    };
    let (_, report) = run_train_job(&job, training_sequences(&a.settings.dataset)?)?;
    println!("L_all {:.5} -> {:.5} ({} stages run)", report.l_all_start, report.l_all_end, report.stages.len());
    for s in &report.stages {
        if !s.frozen_violations.is_empty() {
            return Err(CliError::Usage(format!("stage {} changed frozen parts {:?}", s.index + 1, s.frozen_violations)));
        }
    }
    println!("saved {}", job.checkpoint.display());
    Ok(())
}

fn checkpoint_path(c: &Checkpoint) -> Result<PathBuf> {
    let path = if c.model.is_dir() {
        let l = c.lambda_index.ok_or_else(|| CliError::Usage("--lambda-index is required when --model is a directory".into()))?;
        c.model.join(format!("lambda{l}.safetensors"))
    } else {
        c.model.clone()
    };
    let meta = read_meta(&path)?;
    if let Some(l) = c.lambda_index.filter(|&l| l != meta.lambda_index) {
        return Err(CliError::Usage(format!("{} was trained for lambda index {}, not {l}", path.display(), meta.lambda_index)));
    }
    if let Some(f) = &c.config {
        if ModelConfig::load(f)? != meta.config {
            return Err(CliError::Usage(format!("{} does not match the config stored in {}", f.display(), path.display())));
        }
    }
    Ok(path)
}

fn read_input(s: &SequenceInput) -> Result<VideoSequence> {
    let path = &s.input;
    let entry = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("yuv")) {
        let (Some(width), Some(height)) = (s.width, s.height) else {
            return Err(CliError::Usage("--width and --height are required for .yuv input".into()));
        };
        let frames = std::fs::metadata(path).map_err(NvcError::from)?.len() as usize / (width * height * 3 / 2);
        SequenceEntry { name: stem(path), path: path.clone(), format: SequenceFormat::Yuv420, width, height, frames, fps: 30.0 }
    } else if path.join(nvc_core::data::MANIFEST_FILE).exists() {
        let (m, root) = DatasetManifest::load(path)?;
        let name = s.sequence.as_deref().ok_or_else(|| CliError::Usage("--sequence is required for dataset input".into()))?;
        let mut e = m.sequences.into_iter().find(|e| e.name == name).ok_or_else(|| CliError::Usage(format!("no sequence `{name}`")))?;
        e.path = root.join(e.path);
        e
    } else {
        let frames = std::fs::read_dir(path).map_err(NvcError::from)?.filter(|e| e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == "png"))).count();
        SequenceEntry { name: stem(path), path: path.clone(), format: SequenceFormat::Png, width: 0, height: 0, frames, fps: 30.0 }
    };
    Ok(entry.load_rgb(Path::new(""), Some(s.frames))?)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or("sequence".into(), |s| s.to_string_lossy().into_owned())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&checkpoint_path(&a.ckpt)?)?;
    let seq = read_input(&a.src)?;
    let codec = NeuralCodec::new(&model, &ReferenceCoder, meta.lambda_index)?;
    let coded = codec.encode_sequence(seq.frames(), a.intra_period)?;
    write_nvc1(&a.output, &coded.units)?;
    let bytes: usize = coded.units.iter().map(|u| u.byte_len()).sum();
    let (w, h) = seq.dims();
    println!("{} frames, {bytes} bytes, {:.5} bpp", seq.len(), 8.0 * bytes as f64 / (w * h * seq.len()) as f64);
    if let Some(dir) = &a.recon {
        write_frames(dir, &coded.recon)?;
    }
    if let Some(dir) = &a.dump_flow {
        std::fs::create_dir_all(dir).map_err(NvcError::from)?;
        let dev = model.device();
        for (t, pair) in seq.frames().windows(2).enumerate() {
            let cur = frame_to_tensor(&pad_to_multiple(&pair[1], 64).0, dev)?;
            let prev = frame_to_tensor(&pad_to_multiple(&pair[0], 64).0, dev)?;
            let (vs, vd) = model.flow.estimate(&cur, &prev)?;
            let flow = (vs + vd).map_err(NvcError::from)?;
            let (_, _, fh, fw) = flow.dims4().map_err(NvcError::from)?;
            let data = flow.flatten_all().and_then(|f| f.to_vec1::<f32>()).map_err(NvcError::from)?;
            let map = FeatureMap { channels: 2, height: fh, width: fw, data };
            write_png(dir.join(format!("flow_{:04}.png", t + 1)), &flow_to_rgb(&map, None))?;
        }
    }
    Ok(())
}

fn write_frames(dir: &Path, frames: &[nvc_core::data::Frame]) -> Result<()> {
    if dir.extension().is_some_and(|e| e.eq_ignore_ascii_case("yuv")) {
        return Ok(write_yuv420(dir, frames)?);
    }
    std::fs::create_dir_all(dir).map_err(NvcError::from)?;
    for (i, f) in frames.iter().enumerate() {
        write_png(dir.join(format!("frame_{i:04}.png")), f)?;
    }
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let units = read_nvc1(&a.input)?;
    let lambda = units.first().map(|u| u.lambda_index as usize);
    let ckpt = Checkpoint { lambda_index: a.ckpt.lambda_index.or(lambda), ..a.ckpt };
    let (model, meta) = load_checkpoint(&checkpoint_path(&ckpt)?)?;
    let codec = NeuralCodec::new(&model, &ReferenceCoder, meta.lambda_index)?;
    let frames = codec.decode_sequence(&units)?;
    write_frames(&a.output, &frames)?;
    println!("decoded {} frames to {}", frames.len(), a.output.display());
    Ok(())
}

fn eval_options(out: PathBuf, e: &EvalSettings) -> EvalOptions {
    EvalOptions { intra_period: e.intra_period, frames: e.frames, metric: e.metric.into(), workers: e.workers, ..EvalOptions::new(out) }
}

fn expand_models(models: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if let [dir] = models {
        if dir.is_dir() {
            let mut v: Vec<PathBuf> = (0..nvc_core::LAMBDAS.len()).map(|l| dir.join(format!("lambda{l}.safetensors"))).filter(|p| p.exists()).collect();
            v.sort();
            if v.is_empty() {
                return Err(NvcError::MissingCheckpoint(dir.join("lambda<i>.safetensors")).into());
            }
            return Ok(v);
        }
    }
    Ok(models.to_vec())
}

fn eval(a: EvalArgs) -> Result<()> {
    let opts = EvalOptions { anchor: a.anchor, label: a.label, ..eval_options(a.out, &a.eval) };
    let report = run_eval(&expand_models(&a.models)?, &a.dataset, &ReferenceCoder, &opts)?;
    println!("sequence\tlambda_index\tbpp\tpsnr_rgb\tpsnr_yuv");
    for r in &report.rows {
        println!("{}\t{}\t{:.5}\t{:.3}\t{:.3}", r.sequence, r.lambda_index, r.bpp, r.psnr_rgb, r.psnr_yuv);
    }
    if let Some(bd) = &report.bd_rate {
        println!("BD-rate vs anchor: {:.3}%", bd.mean);
    }
    println!("reports in {}", opts.out_dir.display());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (schedule, scale, options) = schedule_and_options(&a.settings, None)?;
    let run = SweepRun {
        lambda_indices: a.lambda_indices,
        schedule,
        scale,
        clips: a.settings.clips,
        clip_len: a.settings.clip_len,
        patch: a.settings.patch,
        options,
        eval: eval_options(PathBuf::new(), &a.eval),
    };
    let m = run_sweep(&a.dir, &training_sequences(&a.settings.dataset)?, &a.eval_dataset, &run, &ReferenceCoder)?;
    for p in &m.points {
        let bd = p.result.as_ref().and_then(|r| r.bd_rate_vs_first).map_or("-".to_string(), |v| format!("{v:.3}%"));
        println!("x{:<6} BD-rate vs first point: {bd}", p.scale);
    }
    Ok(())
}

fn channels(a: ChannelArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&checkpoint_path(&a.ckpt)?)?;
    let codec = NeuralCodec::new(&model, &ReferenceCoder, meta.lambda_index)?;
    let (manifest, root) = DatasetManifest::load(&a.dataset)?;
    let opts = EvalOptions { intra_period: a.intra_period, frames: a.frames, verify_decode: false, ..EvalOptions::new(&a.out) };
    let res = eval_model(&codec, meta.lambda_index, &manifest.sequences, &root, &opts)?;
    for (kind, name) in [(ChannelKind::Contextual, "contextual"), (ChannelKind::Motion, "motion")] {
        let bits: Vec<Vec<f64>> = res
            .iter()
            .flat_map(|r| match kind {
                ChannelKind::Contextual => r.context_bits.clone(),
                ChannelKind::Motion => r.motion_bits.clone(),
            })
            .collect();
        if bits.is_empty() {
            return Err(CliError::Usage("no P-frames were coded; raise --frames or --intra-period".into()));
        }
        let rep = channel_bitrate_ratio(&bits, kind)?;
        std::fs::write(a.out.join(format!("channels_{name}.csv")), rep.to_csv()).map_err(NvcError::from)?;
        std::fs::write(a.out.join(format!("channels_{name}.svg")), channel_plot_svg(&rep, a.top)).map_err(NvcError::from)?;
        let head: Vec<String> = rep.top(5).iter().map(|(c, r)| format!("{c}:{r:.4}")).collect();
        println!("{name}: {} channels, top {}", rep.ratios.len(), head.join(" "));
    }
    Ok(())
}
