use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use facepulse::config::PipelineConfig;
use facepulse::dataset::{manifest_maps, read_manifest, video_to_maps, Split, VideoMaps};
use facepulse::decide::{video_verdict, MapPrediction};
use facepulse::ingest::fseq::{write_fseq, FSEQ_VERSION};
use facepulse::ingest::{load_frames, load_landmarks};
use facepulse::magnify::magnify_set;
use facepulse::patchseq::map_to_patches;
use facepulse::selftest::run_selftest;
use facepulse::stmap::mems::{map_file_name, read_map_dir, write_map, MEMS_VERSION};
use facepulse::stmap::{Label, MemstMap};
use facepulse::train::{predict_samples, train_loop_with, Sample};
use facepulse::vit::weights::{read_weights_for, write_weights, VITW_VERSION};

#[derive(Parser, Debug)]
#[command(name = "facepulse", about = "Color magnification, facial spatio-temporal maps and a ViT forgery classifier", disable_version_flag = true)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Single-threaded, bit-exact execution.
    #[arg(long, global = true)]
    strict: bool,
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` configuration overrides, e.g. `--set train.seed=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print build and file-format versions.
    #[arg(long, short = 'V')]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Default)]
struct MapFlags {
    /// Pass band as `low:high` in Hz.
    #[arg(long)]
    band: Option<String>,
    /// Per-octave gains, comma separated.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    /// Window stride in seconds.
    #[arg(long)]
    stride: Option<f64>,
    /// Frame rate, overriding fps.txt or the container header.
    #[arg(long)]
    fps: Option<f64>,
}

#[derive(Args, Debug)]
struct VideoInput {
    /// Frame directory (PNG/PPM plus fps.txt) or FSEQ file.
    #[arg(long)]
    frames: PathBuf,
    /// Landmark file, one JSON record per frame.
    #[arg(long)]
    landmarks: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one magnified FSEQ per pyramid octave.
    Magnify {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        map: MapFlags,
    },
    /// Build MEMSTmaps from a video and its landmarks.
    Stmap {
        #[command(flatten)]
        input: VideoInput,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "unlabeled", value_parser = parse_label)]
        label: Label,
        /// Also write each map as an 8-bit PNG.
        #[arg(long)]
        export_png: bool,
        #[command(flatten)]
        map: MapFlags,
    },
    /// Train the classifier on a JSON-lines manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output weights (VITW).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch metrics, JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        map: MapFlags,
    },
    /// Classify one video, or a directory of maps, and print a verdict.
    Predict {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, requires = "landmarks", conflicts_with = "maps")]
        frames: Option<PathBuf>,
        #[arg(long, requires = "frames")]
        landmarks: Option<PathBuf>,
        /// Directory of MEMS files.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[command(flatten)]
        map: MapFlags,
    },
    /// Per-split accuracy and confusion counts for a manifest.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        map: MapFlags,
    },
    /// Run the built-in oracle checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metrics log, JSON lines (stdout when absent).
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn parse_label(s: &str) -> std::result::Result<Label, String> {
    match s {
        "real" => Ok(Label::Real),
        "fake" => Ok(Label::Fake),
        "unlabeled" => Ok(Label::Unlabeled),
        _ => Err(format!("expected real, fake or unlabeled, got {s:?}")),
    }
}

impl MapFlags {
    fn overrides(&self, out: &mut Vec<(String, String)>) -> Result<()> {
        if let Some(band) = &self.band {
            let (lo, hi) = band.split_once(':').with_context(|| format!("--band expects low:high, got {band:?}"))?;
            out.push(("band.low".into(), lo.trim().into()));
            out.push(("band.high".into(), hi.trim().into()));
        }
        if let Some(alphas) = &self.alphas {
            out.push(("alphas".into(), format!("[{alphas}]")));
        }
        if let Some(levels) = self.levels {
            out.push(("levels".into(), levels.to_string()));
        }
        if let Some(stride) = self.stride {
            out.push(("window.stride_s".into(), format!("{stride:?}")));
        }
        Ok(())
    }
}

fn base_overrides(cli: &Cli) -> Result<Vec<(String, String)>> {
    cli.set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("--set expects key=value, got {kv:?}"))
        })
        .collect()
}

fn resolve(cli: &Cli, map: Option<&MapFlags>, extra: &[(&str, Option<String>)]) -> Result<PipelineConfig> {
    let mut overrides = base_overrides(cli)?;
    if let Some(map) = map {
        map.overrides(&mut overrides)?;
    }
    overrides.extend(extra.iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))));
    Ok(PipelineConfig::resolve(cli.config.as_deref(), &overrides)?)
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| from_config.clone()) {
        Some(p) => Ok(p),
        None => bail!(facepulse::Error::InvalidArgument(format!("--{name} is required (or paths.{name} in the config)"))),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn magnify(cli: &Cli, frames: &Path, out: &Path, map: &MapFlags) -> Result<()> {
    let cfg = resolve(cli, Some(map), &[])?;
    let video = load_frames(frames, map.fps)?;
    let set = magnify_set(&video, &cfg.map_settings().band, cfg.alphas)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for (i, seq) in set.magnified.iter().enumerate() {
        let path = out.join(format!("octave{}.fseq", i + 1));
        write_fseq(seq, &path)?;
        written.push(path.display().to_string());
    }
    print_json(&json!({"frames": video.len(), "fps": video.fps(), "alphas": cfg.alphas, "outputs": written}));
    Ok(())
}

fn load_video_maps(input: &VideoInput, label: Label, cfg: &PipelineConfig, fps: Option<f64>) -> Result<VideoMaps> {
    let frames = load_frames(&input.frames, fps)?;
    let track = load_landmarks(&input.landmarks, frames.len())?;
    Ok(video_to_maps(&frames, &track, &stem(&input.frames), label, &cfg.map_settings())?)
}

fn stmap(cli: &Cli, input: &VideoInput, out: &Path, label: Label, export_png: bool, map: &MapFlags) -> Result<()> {
    let cfg = resolve(cli, Some(map), &[])?;
    let result = load_video_maps(input, label, &cfg, map.fps)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report = match &result {
        VideoMaps::Discarded { invalid_frames } => {
            json!({"maps": 0, "discarded": true, "invalid_frames": invalid_frames})
        }
        VideoMaps::Maps { maps, filled_frames, warning } => {
            let mut files = Vec::new();
            for m in maps {
                let path = out.join(map_file_name(m));
                write_map(m, &path)?;
                if export_png {
                    let png = path.with_extension("png");
                    m.to_image().save(&png).with_context(|| format!("writing {}", png.display()))?;
                }
                files.push(path.display().to_string());
            }
            if let Some(w) = warning {
                log::warn!("{w}");
            }
            json!({"maps": maps.len(), "files": files, "filled_frames": filled_frames, "warning": warning})
        }
    };
    print_json(&report);
    Ok(())
}

fn samples_of(maps: &[MemstMap]) -> Result<Vec<Sample>> {
    Ok(maps.iter().map(Sample::from_map).collect::<facepulse::Result<_>>()?)
}

#[allow(clippy::too_many_arguments)]
fn train(
    cli: &Cli,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    log_path: Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    map: &MapFlags,
) -> Result<()> {
    let cfg = resolve(
        cli,
        Some(map),
        &[
            ("train.epochs", epochs.map(|v| v.to_string())),
            ("train.learning_rate", lr.map(|v| format!("{v:?}"))),
            ("train.batch_size", batch_size.map(|v| v.to_string())),
            ("train.seed", seed.map(|v| v.to_string())),
        ],
    )?;
    let manifest = required(manifest, &cfg.paths.manifest, "manifest")?;
    let out = required(out, &cfg.paths.weights, "weights")?;
    let log_path = log_path.or_else(|| cfg.paths.log.clone());

    let maps = manifest_maps(&read_manifest(&manifest)?, &cfg.map_settings(), map.fps)?;
    let train_set = samples_of(&maps.train)?;
    let val_set = samples_of(&maps.val)?;
    log::info!("training on {} maps, validating on {}", train_set.len(), val_set.len());

    let mut log_file = match &log_path {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut log_error = None;
    let outcome = train_loop_with(&train_set, &val_set, cfg.model_config(), &cfg.train, |m| {
        log::info!("epoch {} loss {:.4}", m.epoch, m.train_loss);
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{}", serde_json::to_string(m).expect("metrics serialize")) {
                log_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e).context("writing training log");
    }
    if let Some(mut f) = log_file {
        f.flush().context("writing training log")?;
    }
    write_weights(&outcome.params, &out)?;
    print_json(&json!({
        "weights": out.display().to_string(),
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.metrics.len(),
        "train_maps": train_set.len(),
        "val_maps": val_set.len(),
        "last": outcome.metrics.last(),
    }));
    Ok(())
}

fn predict_maps(maps: &[MemstMap], cfg: &PipelineConfig, weights: &Path) -> Result<Vec<MapPrediction>> {
    let params = read_weights_for(weights, &cfg.model_config())?;
    // Labels are irrelevant for inference.
    let samples: Vec<Sample> = maps
        .iter()
        .map(|m| Sample { patches: map_to_patches(m).patches, label: 0 })
        .collect();
    let probs = predict_samples(&samples, &params)?;
    Ok(maps.iter().zip(probs).map(|(m, p)| MapPrediction::new(m.id(), p)).collect())
}

fn predict(
    cli: &Cli,
    weights: Option<PathBuf>,
    frames: Option<PathBuf>,
    landmarks: Option<PathBuf>,
    maps_dir: Option<PathBuf>,
    map: &MapFlags,
) -> Result<()> {
    let cfg = resolve(cli, Some(map), &[])?;
    let weights = required(weights, &cfg.paths.weights, "weights")?;
    let (video, maps) = match (frames, landmarks, maps_dir) {
        (Some(frames), Some(landmarks), None) => {
            let input = VideoInput { frames, landmarks };
            let maps = load_video_maps(&input, Label::Unlabeled, &cfg, map.fps)?;
            if let VideoMaps::Discarded { invalid_frames } = maps {
                bail!(facepulse::Error::InvalidArgument(format!(
                    "video discarded: {invalid_frames} frames without landmarks"
                )));
            }
            (stem(&input.frames), maps.into_maps())
        }
        (None, None, Some(dir)) => (stem(&dir), read_map_dir(&dir)?),
        _ => bail!(facepulse::Error::InvalidArgument("give either --frames with --landmarks, or --maps".into())),
    };
    let preds = predict_maps(&maps, &cfg, &weights)?;
    let verdict = video_verdict(video, &preds)?;
    let mut report = serde_json::to_value(&verdict)?;
    report["per_map"] = serde_json::to_value(&preds)?;
    print_json(&report);
    Ok(())
}

#[derive(Default)]
struct Confusion {
    // [truth][predicted], real = 0
    counts: [[usize; 2]; 2],
    videos: BTreeMap<String, (Label, Vec<MapPrediction>)>,
}

fn eval(cli: &Cli, manifest: Option<PathBuf>, weights: Option<PathBuf>, out: Option<PathBuf>, map: &MapFlags) -> Result<()> {
    let cfg = resolve(cli, Some(map), &[])?;
    let manifest = required(manifest, &cfg.paths.manifest, "manifest")?;
    let weights = required(weights, &cfg.paths.weights, "weights")?;
    let maps = manifest_maps(&read_manifest(&manifest)?, &cfg.map_settings(), map.fps)?;
    let mut report = serde_json::Map::new();
    for split in Split::ALL {
        let split_maps = maps.get(split);
        if split_maps.is_empty() {
            continue;
        }
        let preds = predict_maps(split_maps, &cfg, &weights)?;
        let mut c = Confusion::default();
        for (m, p) in split_maps.iter().zip(preds) {
            let truth = m.label.class().context("manifest maps are labeled")?;
            let guess = p.predicted.class().expect("predictions are real or fake");
            c.counts[truth][guess] += 1;
            c.videos.entry(m.source_video.clone()).or_insert_with(|| (m.label, Vec::new())).1.push(p);
        }
        let total: usize = c.counts.iter().flatten().sum();
        let mut video_correct = 0;
        for (name, (label, preds)) in &c.videos {
            video_correct += usize::from(video_verdict(name.clone(), preds)?.verdict == *label);
        }
        report.insert(
            split.name().into(),
            json!({
                "maps": total,
                "map_accuracy": (c.counts[0][0] + c.counts[1][1]) as f64 / total as f64,
                "confusion": {
                    "real_as_real": c.counts[0][0],
                    "real_as_fake": c.counts[0][1],
                    "fake_as_real": c.counts[1][0],
                    "fake_as_fake": c.counts[1][1],
                },
                "videos": c.videos.len(),
                "video_accuracy": video_correct as f64 / c.videos.len() as f64,
            }),
        );
    }
    let report = serde_json::Value::Object(report);
    if let Some(path) = out {
        fs::write(&path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&report);
    Ok(())
}

fn selftest(seed: u64, log_path: Option<PathBuf>) -> Result<bool> {
    let report = run_selftest(seed)?;
    match log_path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
            report.write_jsonl(&mut f)?;
            f.flush()?;
            for c in &report.checks {
                println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.check);
            }
        }
        None => report.write_jsonl(std::io::stdout().lock())?,
    }
    Ok(report.passed())
}

fn version_text() -> String {
    format!(
        "facepulse {} ({} build)\nformats: FSEQ v{FSEQ_VERSION}, MEMS v{MEMS_VERSION}, VITW v{VITW_VERSION}",
        env!("CARGO_PKG_VERSION"),
        if cfg!(debug_assertions) { "debug" } else { "release" },
    )
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = if cli.strict { Some(1) } else { cli.jobs };
    if let Some(n) = threads {
        if n == 0 {
            bail!(facepulse::Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
    }
    if cli.version {
        println!("{}", version_text());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = &cli.command else {
        bail!(facepulse::Error::InvalidArgument("a subcommand is required; see --help".into()));
    };
    match command {
        Command::Magnify { frames, out, map } => magnify(&cli, frames, out, map)?,
        Command::Stmap { input, out, label, export_png, map } => stmap(&cli, input, out, *label, *export_png, map)?,
        Command::Train { manifest, out, log, epochs, lr, batch_size, seed, map } => train(
            &cli,
            manifest.clone(),
            out.clone(),
            log.clone(),
            *epochs,
            *lr,
            *batch_size,
            *seed,
            map,
        )?,
        Command::Predict { weights, frames, landmarks, maps, map } => {
            predict(&cli, weights.clone(), frames.clone(), landmarks.clone(), maps.clone(), map)?
        }
        Command::Eval { manifest, weights, out, map } => eval(&cli, manifest.clone(), weights.clone(), out.clone(), map)?,
        Command::Selftest { seed, log } => {
            if !selftest(*seed, log.clone())? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({"error": kind, "message": message}));
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn chain_message(e: &anyhow::Error) -> String {
    let mut message = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !message.contains(&text) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&text);
        }
    }
    message
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let kind = e.chain().find_map(|c| c.downcast_ref::<facepulse::Error>()).map_or("runtime", |fe| fe.kind());
            report_error(kind, &chain_message(&e));
            ExitCode::from(1)
        }
    }
}
