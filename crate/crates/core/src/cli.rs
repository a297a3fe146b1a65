//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::Config;
use crate::ensemble::VideoScore;
use crate::error::{Error, ErrorKind, Result};
use crate::manifest::{Manifest, Split};
use crate::metrics::auc;
use crate::pipeline::train;
use crate::store;
use crate::synth::{write_dataset, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "defakehop", version, about = "Lightweight deepfake detector on face-region patches")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on the train split of a manifest.
    Train(TrainArgs),
    /// Write per-video (and optionally per-frame) scores.
    Predict(PredictArgs),
    /// Score a split and report frame- and video-level AUC.
    Eval(EvalArgs),
    /// Print the parameter count table.
    Params(ParamsArgs),
    /// Generate a synthetic dataset.
    GenSynth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output scores file (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one line per frame after each video line.
    #[arg(long)]
    pub per_frame: bool,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Metrics JSON destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Report the counts of a trained model.
    #[arg(long, conflicts_with = "paper_upper_bound")]
    pub model: Option<PathBuf>,
    /// Report the upper bound implied by the config caps.
    #[arg(long)]
    pub paper_upper_bound: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives `manifest.jsonl` and `patches/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training videos.
    #[arg(long, default_value_t = 200)]
    pub videos: usize,
    #[arg(long, default_value_t = 50)]
    pub test_videos: usize,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Metrics {
    pub frame_auc: f64,
    pub video_auc: f64,
    pub n_videos: usize,
    pub n_frames: usize,
}

#[derive(Serialize)]
struct VideoLine<'a> {
    video_id: &'a str,
    video_prob: f64,
    frame_count: usize,
    label: u8,
}

#[derive(Serialize)]
struct FrameLine<'a> {
    video_id: &'a str,
    frame_index: u32,
    frame_prob: f64,
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Input => 2,
        ErrorKind::Data => 3,
        ErrorKind::Model => 4,
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Scores JSON Lines: one line per video, sorted by `video_id`, each
/// optionally followed by its frame lines.
pub fn format_scores(scores: &[VideoScore], per_frame: bool) -> String {
    let mut out = String::new();
    for s in scores {
        let line = VideoLine {
            video_id: &s.video_id,
            video_prob: s.video_prob,
            frame_count: s.frame_probs.len(),
            label: s.label as u8,
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
        if per_frame {
            for (&frame_index, &frame_prob) in s.frame_indices.iter().zip(&s.frame_probs) {
                let line = FrameLine {
                    video_id: &s.video_id,
                    frame_index,
                    frame_prob,
                };
                out.push_str(&serde_json::to_string(&line).expect("serializable"));
                out.push('\n');
            }
        }
    }
    out
}

pub fn compute_metrics(scores: &[VideoScore]) -> Result<Metrics> {
    let frame_scores: Vec<f64> = scores.iter().flat_map(|s| s.frame_probs.iter().copied()).collect();
    let frame_labels: Vec<bool> = scores
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.label, s.frame_probs.len()))
        .collect();
    let video_scores: Vec<f64> = scores.iter().map(|s| s.video_prob).collect();
    let video_labels: Vec<bool> = scores.iter().map(|s| s.label).collect();
    Ok(Metrics {
        frame_auc: auc(&frame_scores, &frame_labels)?,
        video_auc: auc(&video_scores, &video_labels)?,
        n_videos: scores.len(),
        n_frames: frame_scores.len(),
    })
}

fn score_split(model_path: &Path, manifest_path: &Path, split: Split) -> Result<Vec<VideoScore>> {
    let t = Instant::now();
    let model = store::load(model_path)?;
    let manifest = Manifest::read(manifest_path)?;
    let samples = manifest.load(split)?;
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!("manifest has no {split:?} patches").to_lowercase()));
    }
    eprintln!("loaded model and {} patches in {:.2}s", samples.len(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let scores = model.score(&samples)?;
    eprintln!("scored {} videos in {:.2}s", scores.len(), t.elapsed().as_secs_f64());
    Ok(scores)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref(), &a.overrides)?;
            let t = Instant::now();
            let manifest = Manifest::read(&a.manifest)?;
            let samples = manifest.load(Split::Train)?;
            let load_time = t.elapsed();
            let (model, summary) = train(&samples, &cfg)?;
            store::save(&model, &a.out)?;
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "time {:<22} {:>8.2}s", "load patches", load_time.as_secs_f64());
            let _ = write!(stdout, "{summary}");
            let _ = writeln!(stdout, "model written to {}", a.out.display());
        }
        Command::Predict(a) => {
            let scores = score_split(&a.model, &a.manifest, a.split.into())?;
            write_file(&a.out, format_scores(&scores, a.per_frame).as_bytes())?;
        }
        Command::Eval(a) => {
            let scores = score_split(&a.model, &a.manifest, a.split.into())?;
            let metrics = compute_metrics(&scores)?;
            let json = serde_json::to_string_pretty(&metrics).expect("serializable") + "\n";
            match &a.out {
                Some(p) => write_file(p, json.as_bytes())?,
                None => print!("{json}"),
            }
        }
        Command::Params(a) => {
            let report = match &a.model {
                Some(p) => store::model_report(&store::load(p)?),
                None => {
                    if !a.paper_upper_bound {
                        eprintln!("no --model given; reporting the upper bound");
                    }
                    store::upper_bound_report(&load_config(a.config.as_deref(), &[])?)?
                }
            };
            print!("{report}");
        }
        Command::GenSynth(a) => {
            let cfg = SynthConfig {
                n_videos: a.videos,
                n_test_videos: a.test_videos,
                frames_per_video: a.frames,
                artifact_amplitude: a.amplitude,
                noise_sigma: a.noise,
                seed: a.seed,
            };
            let t = Instant::now();
            let manifest = write_dataset(&cfg, &a.out)?;
            eprintln!("wrote {} in {:.2}s", manifest.display(), t.elapsed().as_secs_f64());
        }
    }
    Ok(())
}

/// Parses arguments, runs on a pool of the requested size and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return 2;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}
