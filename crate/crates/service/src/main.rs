use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gesture_core::affect::{AffectTable, EmotionLexicon};
use gesture_core::bvh::export_bvh;
use gesture_core::model::{AttentionScale, Model, ModelConfig};
use gesture_core::motion::write_canonical;
use gesture_core::skeleton::Skeleton;
use gesture_core::text::{EmbeddingStore, DEFAULT_DIM};
use gesture_core::train::{
    export_trajectories, generate_for, mean_affective_error, mean_jerk, mean_pose_error, metrics_csv, prepare,
    read_corpus, split, synthesize_fixture_corpus, train, write_corpus, DecayMode, JointReduction, LossContext,
    LossSwitches, TrainConfig, METRICS_HEADER, TRAJECTORY_JOINTS,
};

use gesture_service::engine::{AssetPaths, Engine};
use gesture_service::protocol::{latency_stats, to_line, Emotion, GenerationRequest, DEFAULT_FPS_OUT};
use gesture_service::server::Server;

type CliResult<T> = std::result::Result<T, Box<dyn StdError>>;

/// Text-to-gesture synthesis: generate, train, evaluate and serve.
#[derive(Parser)]
#[command(name = "gesture", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one gesture sequence from a sentence.
    Generate(GenerateArgs),
    /// Train a model on a corpus manifest.
    Train(TrainArgs),
    /// Mean pose error, jerk and affective error of predictions.
    Eval(EvalArgs),
    /// Write a synthetic corpus with a manifest.
    Fixture(FixtureArgs),
    /// Serve streaming generation over TCP (NDJSON or WebSocket).
    Serve(ServeArgs),
    /// Measure per-frame decode latency.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct AssetArgs {
    /// Skeleton file; the canonical skeleton when absent.
    #[arg(long, env = "T2G_SKELETON")]
    skeleton: Option<PathBuf>,
    /// Emotion lexicon (term, v, a, d per line); the built-in one when absent.
    #[arg(long, env = "T2G_LEXICON")]
    lexicon: Option<PathBuf>,
    /// Word embeddings in text format; hashed vectors only when absent.
    #[arg(long, env = "T2G_EMBEDDINGS")]
    embeddings: Option<PathBuf>,
}

impl AssetArgs {
    fn skeleton(&self) -> CliResult<Skeleton> {
        Ok(match &self.skeleton {
            Some(p) => Skeleton::load(p)?,
            None => Skeleton::canonical(),
        })
    }

    fn lexicon(&self) -> CliResult<EmotionLexicon> {
        Ok(match &self.lexicon {
            Some(p) => EmotionLexicon::load(p)?,
            None => EmotionLexicon::builtin(),
        })
    }

    fn store(&self, dim: usize) -> CliResult<EmbeddingStore> {
        Ok(match &self.embeddings {
            Some(p) => EmbeddingStore::load(p, dim)?,
            None => EmbeddingStore::empty(dim)?,
        })
    }

    fn paths(&self, checkpoint: PathBuf) -> AssetPaths {
        AssetPaths {
            checkpoint,
            skeleton: self.skeleton.clone(),
            lexicon: self.lexicon.clone(),
            embeddings: self.embeddings.clone(),
        }
    }
}

#[derive(Args)]
struct RequestArgs {
    #[arg(long)]
    sentence: String,
    /// narration or conversation.
    #[arg(long, default_value = "narration")]
    task: String,
    /// Lexicon term or "v,a,d" in [0, 1].
    #[arg(long, default_value = "0.5,0.5,0.5")]
    emotion: String,
    #[arg(long, default_value = "female")]
    gender: String,
    #[arg(long, default_value = "right")]
    handedness: String,
    #[arg(long, default_value_t = DEFAULT_FPS_OUT)]
    fps_out: f64,
    /// Request id carried by streamed frame messages.
    #[arg(long, default_value = "cli")]
    id: String,
}

impl RequestArgs {
    fn request(&self) -> GenerationRequest {
        GenerationRequest {
            id: self.id.clone(),
            sentence: self.sentence.clone(),
            task: self.task.clone(),
            emotion: Emotion::Term(self.emotion.clone()),
            gender: self.gender.clone(),
            handedness: self.handedness.clone(),
            fps_out: self.fps_out,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, env = "T2G_CHECKPOINT")]
    checkpoint: PathBuf,
    #[command(flatten)]
    assets: AssetArgs,
    #[command(flatten)]
    request: RequestArgs,
    /// Output gesture file.
    #[arg(long)]
    out: PathBuf,
    /// Also export BVH.
    #[arg(long)]
    bvh: Option<PathBuf>,
    /// Also export head and wrist trajectories as CSV.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Also write the frame messages a streaming client would receive.
    #[arg(long)]
    stream_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecayArg {
    Lr,
    Shrink,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus manifest.
    #[arg(long)]
    corpus: PathBuf,
    /// Where the best checkpoint is written.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Metrics CSV; next to the checkpoint when absent.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    assets: AssetArgs,
    #[arg(long, default_value_t = 600)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.999)]
    decay: f64,
    #[arg(long, value_enum, default_value = "lr")]
    decay_mode: DecayArg,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the train/validation/test split (corpora of 10 or more items).
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    no_angle: bool,
    #[arg(long)]
    no_pose: bool,
    #[arg(long)]
    no_affective: bool,
    #[arg(long, default_value_t = 200)]
    d_model: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    d_word: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 20)]
    window: usize,
    #[arg(long, default_value_t = 32)]
    t_sen: usize,
    /// Maximum sequence length; the longest corpus item when absent.
    #[arg(long)]
    t_ges: Option<usize>,
    /// Attention score divisor: k or sqrt_k.
    #[arg(long, default_value = "k")]
    scale: String,
    #[arg(long)]
    layer_norm: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth corpus manifest.
    #[arg(long)]
    gt: PathBuf,
    /// Predicted corpus manifest, paired with --gt line by line.
    #[arg(long, conflicts_with = "checkpoint")]
    pred: Option<PathBuf>,
    /// Checkpoints to generate predictions from; one report line each.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    #[command(flatten)]
    assets: AssetArgs,
    /// Combine joint distances by sum or mean.
    #[arg(long, default_value = "sum")]
    reduction: String,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    assets: AssetArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    #[arg(long, env = "T2G_CHECKPOINT")]
    checkpoint: PathBuf,
    #[command(flatten)]
    assets: AssetArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint to time; a freshly initialized model when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    assets: AssetArgs,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 200)]
    d_model: usize,
    #[arg(long, default_value = "the agent tells a short story")]
    sentence: String,
    /// Fail when the mean per-frame latency exceeds this many milliseconds.
    #[arg(long, default_value_t = 250.0)]
    max_mean_ms: f64,
}

/// Latency reference: the original GPU implementation reports 3.2 ms per frame.
const REFERENCE_GPU_MS: f64 = 3.2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => eval(a),
        Command::Fixture(a) => fixture(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn generate(a: GenerateArgs) -> CliResult<()> {
    let engine = Engine::load(&a.assets.paths(a.checkpoint.clone()))?;
    let mut stream = String::new();
    let outcome = engine.run(&a.request.request(), |frame| {
        stream.push_str(&to_line(&frame));
        Ok(())
    })?;
    write_canonical(&outcome.sequence, &a.out)?;
    if let Some(p) = &a.bvh {
        export_bvh(&outcome.sequence, p)?;
    }
    if let Some(p) = &a.trajectories {
        write_file(p, &export_trajectories(&outcome.sequence, &TRAJECTORY_JOINTS)?)?;
    }
    if let Some(p) = &a.stream_out {
        write_file(p, &stream)?;
    }
    let s = &outcome.summary;
    println!(
        "frames {} mean {:.3} ms p95 {:.3} ms stopped_at_eos {}",
        s.frames, s.mean_latency_ms, s.p95_latency_ms, s.stopped_at_eos
    );
    if outcome.degenerate {
        eprintln!("warning: near-zero quaternion outputs were replaced by identity");
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> CliResult<()> {
    let skeleton = Arc::new(a.assets.skeleton()?);
    let seqs = read_corpus(&a.corpus, skeleton.clone())?;
    if seqs.is_empty() {
        return Err("empty corpus".into());
    }
    let t_ges = a.t_ges.unwrap_or_else(|| seqs.iter().map(|s| s.len()).max().unwrap_or(1));
    let config = ModelConfig {
        blocks: a.blocks,
        heads: a.heads,
        d_model: a.d_model,
        d_word: a.d_word,
        t_sen: a.t_sen,
        t_ges,
        window: a.window,
        joints: skeleton.len(),
        scale: a.scale.parse::<AttentionScale>()?,
        layer_norm: a.layer_norm,
        lambda: a.lambda,
        ..ModelConfig::default()
    };
    let mut model = Model::for_skeleton(config, a.seed, &skeleton)?;
    let table = AffectTable::for_skeleton(&skeleton);
    let ctx = LossContext::new(&skeleton, &table)?;
    let store = a.assets.store(a.d_word)?;
    let (train_idx, val_idx) = if seqs.len() >= 10 {
        let s = split(seqs.len(), a.split_seed)?;
        println!("split train {} val {} test {}", s.train.len(), s.val.len(), s.test.len());
        (s.train, s.val)
    } else {
        println!("corpus of {} items: training on all, no validation", seqs.len());
        ((0..seqs.len()).collect(), Vec::new())
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| seqs[i].clone()).collect::<Vec<_>>();
    let train_set = prepare(&pick(&train_idx), &store, &model, &ctx)?;
    let val_set = prepare(&pick(&val_idx), &store, &model, &ctx)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        decay: a.decay,
        decay_mode: match a.decay_mode {
            DecayArg::Lr => DecayMode::LearningRate,
            DecayArg::Shrink => DecayMode::ParamShrink,
        },
        batch_size: a.batch_size,
        epochs: a.epochs,
        lambda: a.lambda,
        switches: LossSwitches {
            angle: !a.no_angle,
            pose: !a.no_pose,
            affective: !a.no_affective,
        },
        seed: a.seed,
        ..TrainConfig::default()
    };
    println!("{METRICS_HEADER}");
    let report = train(&mut model, &train_set, &val_set, &skeleton, &table, &cfg, |m| {
        println!("{}", m.csv_row());
    })?;
    model.params = report.best_params;
    model.save(&a.checkpoint)?;
    let metrics = a.metrics.unwrap_or_else(|| a.checkpoint.with_extension("metrics.csv"));
    write_file(&metrics, &metrics_csv(&report.metrics))?;
    println!("best epoch {} saved to {}", report.best_epoch, a.checkpoint.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let reduction = match a.reduction.as_str() {
        "sum" => JointReduction::Sum,
        "mean" => JointReduction::Mean,
        other => return Err(format!("unknown reduction {other:?} (expected sum or mean)").into()),
    };
    let skeleton = Arc::new(a.assets.skeleton()?);
    let table = AffectTable::for_skeleton(&skeleton);
    let gt = read_corpus(&a.gt, skeleton.clone())?;
    let report = |label: &str, pred: &[gesture_core::motion::GestureSequence]| -> CliResult<()> {
        let err = mean_pose_error(&gt, pred, reduction)?;
        let jerk = pred.iter().map(mean_jerk).sum::<gesture_core::Result<f64>>()? / pred.len().max(1) as f64;
        let aff = mean_affective_error(&gt, pred, &table)?;
        println!("{label}\tmean_pose_error {err:.6}\tmean_jerk {jerk:.6}\taffective_error {aff:.6}");
        Ok(())
    };
    if let Some(p) = &a.pred {
        let pred = read_corpus(p, skeleton.clone())?;
        return report(&p.display().to_string(), &pred);
    }
    if a.checkpoint.is_empty() {
        return Err("eval needs --pred or at least one --checkpoint".into());
    }
    for ck in &a.checkpoint {
        let model = Model::load(ck)?;
        let ctx = LossContext::new(&skeleton, &table)?;
        let store = a.assets.store(model.config.d_word)?;
        let data = prepare(&gt, &store, &model, &ctx)?;
        let pred = generate_for(&model, &data, &skeleton)?;
        report(&ck.display().to_string(), &pred)?;
    }
    Ok(())
}

fn fixture(a: FixtureArgs) -> CliResult<()> {
    let skeleton = Arc::new(a.assets.skeleton()?);
    let seqs = synthesize_fixture_corpus(a.n, a.seed, skeleton, &a.assets.lexicon()?)?;
    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let manifest = write_corpus(&a.out, &seqs)?;
    println!("{} sequences, manifest {}", seqs.len(), manifest.display());
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let engine = Arc::new(Engine::load(&a.assets.paths(a.checkpoint.clone()))?);
    let server = Server::bind(&a.bind, engine)?;
    eprintln!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult<()> {
    let engine = match &a.checkpoint {
        Some(ck) => Engine::load(&a.assets.paths(ck.clone()))?,
        None => {
            let skeleton = a.assets.skeleton()?;
            let config = ModelConfig {
                d_model: a.d_model,
                joints: skeleton.len(),
                ..ModelConfig::default()
            };
            let model = Model::new(config, 0)?;
            let store = a.assets.store(model.config.d_word)?;
            Engine::new(model, Arc::new(skeleton), a.assets.lexicon()?, store)?
        }
    };
    let c = &engine.model.config;
    let request = GenerationRequest {
        id: "bench".into(),
        sentence: a.sentence.clone(),
        task: "narration".into(),
        emotion: Emotion::Vad([0.5, 0.5, 0.5]),
        gender: "female".into(),
        handedness: "right".into(),
        fps_out: DEFAULT_FPS_OUT,
    };
    let outcome = engine.run_limited(&request, a.frames, |_| Ok(()))?;
    let latencies = outcome.latencies_ms;
    let (mean, p95) = latency_stats(&latencies);
    println!(
        "d_model {} blocks {} heads {} frames {} mean {:.3} ms/frame p95 {:.3} ms/frame (reference GPU figure {REFERENCE_GPU_MS} ms/frame)",
        c.d_model,
        c.blocks,
        c.heads,
        latencies.len(),
        mean,
        p95
    );
    if mean > a.max_mean_ms {
        return Err(format!("mean latency {mean:.3} ms/frame exceeds {} ms", a.max_mean_ms).into());
    }
    Ok(())
}
