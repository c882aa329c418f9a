//! `magicface`: forge a synthetic dataset, train the two denoisers, render
//! and edit a head-motion clip, post-process it and score identity
//! consistency.
//!
//! Every subcommand starts from one `RunConfig` (defaults, or `--config`)
//! and applies its flags on top. `--dump-config` prints the resolved config
//! instead of running. Exit codes: 0 ok, 1 runtime error, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use magicface::config::RunConfig;
use magicface::dataset::{forge, load_manifest, MANIFEST_FILE};
use magicface::diffusion::{
    load_image_model, load_text_model, measure_latent_stats, save_image_model, save_text_model, train_image_model,
    train_text_model, LossTrace,
};
use magicface::imaging::{frame_strip, load_video, save_png, save_video, Video};
use magicface::metrics::consistency_report;
use magicface::pipeline::source_clip;
use magicface::sampler::edit_video;
use magicface::synthface::LandmarkSet;
use magicface::temporal::{postprocess, Ablation, PostStep};

const THREADS_ENV: &str = "MAGICFACE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "magicface", version, about = "Identity-consistent facial video editing")]
struct Cli {
    /// Run configuration JSON; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render source/edited/caption triplets into a dataset directory.
    Forge(ForgeArgs),
    /// Train the prompt-conditioned and/or source-conditioned model.
    Train(TrainArgs),
    /// Render the synthetic head-motion clip with a landmark sidecar.
    Video(VideoArgs),
    /// Edit every frame of a video and post-process the result.
    Edit(EditArgs),
    /// Apply stabilization and temporal low-pass filtering.
    Postprocess(PostArgs),
    /// Score an edit against its source and print the ablation table.
    Eval(EvalArgs),
    /// Print the resolved configuration.
    DumpConfig,
}

#[derive(Debug, clap::Args)]
struct ForgeArgs {
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    poses: Option<usize>,
    /// Comma-separated built-in keys or effect manifest paths.
    #[arg(long, value_delimiter = ',')]
    effects: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    Text,
    Image,
    Both,
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    which: Which,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Records per effect for the prompt-conditioned model.
    #[arg(long)]
    subset_size: Option<usize>,
    /// Output directory for `text.ck`, `image.ck` and loss CSVs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct VideoArgs {
    /// Dataset identity to animate.
    #[arg(long)]
    identity: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Dataset seed the identity is drawn from.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write a PNG strip of every k-th frame.
    #[arg(long, value_name = "PNG")]
    strip: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct EditArgs {
    #[arg(long, value_name = "CKPT")]
    text: PathBuf,
    #[arg(long, value_name = "CKPT")]
    image: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    prompt: Option<String>,
    /// Denoising steps.
    #[arg(long = "T")]
    t: Option<usize>,
    /// Final steps run by the source-conditioned model alone.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Weight of the prompt-conditioned model while both run.
    #[arg(long)]
    v: Option<f64>,
    /// Image guidance scale.
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_name = "PNG")]
    strip: Option<PathBuf>,
    /// Write the raw edit without temporal post-processing.
    #[arg(long)]
    no_postprocess: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Only {
    Lowpass,
    Flow,
}

#[derive(Debug, clap::Args)]
struct PostArgs {
    #[arg(long)]
    input: PathBuf,
    /// The unedited video, used as the motion reference.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run a single stage instead of the configured order.
    #[arg(long, value_enum)]
    only: Option<Only>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    passes: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    #[arg(long)]
    source: PathBuf,
    /// Raw (not post-processed) edit of `source`.
    #[arg(long)]
    edited: PathBuf,
    /// Landmark JSON; defaults to the sidecar next to `source`.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, &cli.command);
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    if cli.dump_config || matches!(cli.command, Command::DumpConfig) {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    match &cli.command {
        Command::Forge(a) => cmd_forge(&cfg, a),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Video(a) => cmd_video(&cfg, a),
        Command::Edit(a) => cmd_edit(&cfg, a),
        Command::Postprocess(a) => cmd_postprocess(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::DumpConfig => unreachable!("handled above"),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a thread count, got `{raw}`"))?;
    // 0 leaves rayon's automatic sizing in place
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, cmd: &Command) {
    fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
        if let Some(v) = src {
            *dst = v.clone();
        }
    }
    match cmd {
        Command::Forge(a) => {
            set(&mut cfg.dataset.identities, &a.identities);
            set(&mut cfg.dataset.poses, &a.poses);
            set(&mut cfg.dataset.effects, &a.effects);
            set(&mut cfg.dataset.seed, &a.seed);
        }
        Command::Train(a) => {
            let targets = match a.which {
                Which::Text => vec![&mut cfg.text],
                Which::Image => vec![&mut cfg.image],
                Which::Both => vec![&mut cfg.text, &mut cfg.image],
            };
            for t in targets {
                set(&mut t.steps, &a.steps);
                set(&mut t.lr, &a.lr);
                set(&mut t.seed, &a.seed);
            }
            set(&mut cfg.text.subset_size, &a.subset_size);
        }
        Command::Video(a) => {
            set(&mut cfg.video.identity, &a.identity);
            set(&mut cfg.video.motion.n_frames, &a.frames);
            set(&mut cfg.dataset.seed, &a.seed);
        }
        Command::Edit(a) => {
            let g = &mut cfg.guidance;
            set(&mut g.steps, &a.t);
            set(&mut g.k, &a.k);
            set(&mut g.v, &a.v);
            set(&mut g.s, &a.s);
            set(&mut g.seed, &a.seed);
            if a.prompt.is_some() {
                cfg.video.prompt = a.prompt.clone();
            }
        }
        Command::Postprocess(a) => {
            set(&mut cfg.post.window, &a.window);
            set(&mut cfg.post.passes, &a.passes);
            match a.only {
                Some(Only::Lowpass) => cfg.post.order = vec![PostStep::Lowpass],
                Some(Only::Flow) => cfg.post.order = vec![PostStep::Stabilize],
                None => {}
            }
        }
        Command::Eval(_) | Command::DumpConfig => {}
    }
}

fn cmd_forge(cfg: &RunConfig, a: &ForgeArgs) -> Result<()> {
    let d = &cfg.dataset;
    let manifest = forge(d.identities, &d.resolve_effects()?, d.poses, d.seed, &a.out, d.canvas)?;
    println!("{} records written to {}", manifest.len(), a.out.display());
    Ok(())
}

fn write_trace(trace: &LossTrace, path: &Path) -> Result<()> {
    let mut csv = String::from("step,loss\n");
    for (i, l) in trace.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let manifest_path = if a.data.is_dir() {
        a.data.join(MANIFEST_FILE)
    } else {
        a.data.clone()
    };
    let triplets = load_manifest(&manifest_path)?.load_triplets()?;
    let stats = measure_latent_stats(&triplets)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if matches!(a.which, Which::Text | Which::Both) {
        let (model, trace) = train_text_model(&triplets, &stats, &cfg.text)?;
        save_text_model(&model, a.out.join("text.ck"))?;
        write_trace(&trace, &a.out.join("text_loss.csv"))?;
        println!(
            "text model: {} steps, final loss {:.5}",
            trace.losses.len(),
            last(&trace)
        );
    }
    if matches!(a.which, Which::Image | Which::Both) {
        let (model, trace) = train_image_model(&triplets, &stats, &cfg.image)?;
        save_image_model(&model, a.out.join("image.ck"))?;
        write_trace(&trace, &a.out.join("image_loss.csv"))?;
        println!(
            "image model: {} steps, final loss {:.5}",
            trace.losses.len(),
            last(&trace)
        );
    }
    Ok(())
}

fn last(trace: &LossTrace) -> f64 {
    trace.losses.last().copied().unwrap_or(f64::NAN)
}

/// `clip.mfv` -> `clip.landmarks.json`.
fn landmark_sidecar(video: &Path) -> PathBuf {
    video.with_extension("landmarks.json")
}

fn write_strip(v: &Video, stride: usize, path: &Path) -> Result<()> {
    save_png(&frame_strip(v, stride)?, path)?;
    Ok(())
}

fn cmd_video(cfg: &RunConfig, a: &VideoArgs) -> Result<()> {
    let clip = source_clip(cfg)?;
    save_video(&clip.video, &a.out)?;
    let sidecar = landmark_sidecar(&a.out);
    let json = serde_json::to_string_pretty(&clip.landmarks)?;
    fs::write(&sidecar, json).with_context(|| format!("writing {}", sidecar.display()))?;
    if let Some(p) = &a.strip {
        write_strip(&clip.video, cfg.metrics.strip_stride, p)?;
    }
    println!("{} frames written to {}", clip.video.len(), a.out.display());
    println!("default prompt: {}", clip.prompt);
    Ok(())
}

fn cmd_edit(cfg: &RunConfig, a: &EditArgs) -> Result<()> {
    let Some(prompt) = cfg.video.prompt.as_deref() else {
        bail!("no prompt given: pass --prompt or set video.prompt in the config");
    };
    let text = load_text_model(&a.text)?;
    let image = load_image_model(&a.image)?;
    let source = load_video(&a.input)?;
    let edited = edit_video(&source, prompt, &text, &image, &cfg.guidance)?;
    let out = if a.no_postprocess {
        edited
    } else {
        postprocess(&edited, &source, &cfg.post)?
    };
    save_video(&out, &a.out)?;
    if let Some(p) = &a.strip {
        write_strip(&out, cfg.metrics.strip_stride, p)?;
    }
    println!("{} frames written to {}", out.len(), a.out.display());
    Ok(())
}

fn cmd_postprocess(cfg: &RunConfig, a: &PostArgs) -> Result<()> {
    let edited = load_video(&a.input)?;
    let source = load_video(&a.source)?;
    let out = postprocess(&edited, &source, &cfg.post)?;
    save_video(&out, &a.out)?;
    println!("{} frames written to {}", out.len(), a.out.display());
    Ok(())
}

fn load_landmarks(path: &Path) -> Result<Vec<LandmarkSet>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing landmarks in {}", path.display()))
}

fn cmd_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<()> {
    let source = load_video(&a.source)?;
    let edited = load_video(&a.edited)?;
    let lms_path = a.landmarks.clone().unwrap_or_else(|| landmark_sidecar(&a.source));
    let lms = load_landmarks(&lms_path)?;
    let floor = cfg.metrics.sim_floor;

    let report = consistency_report(&source, &edited, &lms, floor)?;
    println!("tl_id {:.6}  tg_id {:.6}", report.tl_id, report.tg_id);

    let mut rows = Vec::new();
    println!("{:<14} {:>8} {:>8}", "optimization", "TL-ID", "TG-ID");
    for ab in Ablation::ALL {
        let processed = postprocess(&edited, &source, &cfg.post.with_order(ab.steps()))?;
        let r = consistency_report(&source, &processed, &lms, floor)?;
        println!("{:<14} {:>8.4} {:>8.4}", ab.label(), r.tl_id, r.tg_id);
        rows.push(serde_json::json!({ "variant": ab.label(), "tl_id": r.tl_id, "tg_id": r.tg_id }));
    }

    if let Some(out) = &a.out {
        let doc = serde_json::json!({ "report": report, "ablation": rows });
        fs::write(out, serde_json::to_string_pretty(&doc)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
