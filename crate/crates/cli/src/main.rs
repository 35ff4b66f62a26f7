//! Command-line driver for the RGBT tracker: offline training, online
//! tracking, evaluation, synthetic data generation and the ablation
//! harness. Run `dmcnet <command> --help` for per-command flags.

mod manifest;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dmcnet_core::data::{self, DatasetLayout, GtModality, RgbtSequence};
use dmcnet_core::dmc::GateMode;
use dmcnet_core::eval;
use dmcnet_core::geometry::crop_patch;
use dmcnet_core::model::{build_network, ModelConfig, Network};
use dmcnet_core::synth::{self, SynthSpec};
use dmcnet_core::tracker::{self, TrackerConfig};
use dmcnet_core::trainer::{self, TrainConfig};
use manifest::{ComponentFlags, RunManifest};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Run configuration file (JSON): any subset of the three sections may be
/// given; omitted fields take their defaults.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    model: ModelConfig,
    trainer: TrainConfig,
    tracker: TrackerConfig,
}

impl RunConfig {
    fn desk() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            trainer: TrainConfig::desk(),
            tracker: TrackerConfig::desk(),
        }
    }
}

#[derive(Parser)]
#[command(name = "dmcnet", version, about = "RGB-thermal tracking with duality-gated mutual conditioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonOpts {
    /// Run configuration file (JSON; sections: model, trainer, tracker).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale presets instead of the full-scale defaults.
    #[arg(long)]
    desk: bool,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-sequence parallelism (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl CommonOpts {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = if self.desk {
            RunConfig::desk()
        } else {
            RunConfig::default()
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
        }
        if let Some(seed) = self.seed {
            cfg.model.init_seed = seed;
            cfg.trainer.seed = seed;
            cfg.tracker.seed = seed;
        }
        if let Some(workers) = self.workers {
            // Ignore failure if a pool already exists (e.g. tests).
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build_global();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic RGBT sequences with exact ground truth.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Output root directory.
        #[arg(long)]
        out: PathBuf,
        /// Built-in benchmark preset: `benchmark` (all three subsets),
        /// `camera-motion`, `degradation` or `training`.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// JSON file holding a single sequence specification.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Offline multi-domain training.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Directory of training sequence directories.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "rgbt234")]
        layout: String,
        /// Output checkpoint path (a `<out>.json` model-config sidecar and
        /// a `<out>.log.csv` training log are written next to it).
        #[arg(long)]
        out: PathBuf,
        /// Build the architecture without mutual-condition blocks.
        #[arg(long)]
        no_dmc: bool,
        /// Override the number of training cycles.
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Track sequences with a trained model.
    Track {
        #[command(flatten)]
        common: CommonOpts,
        /// Model checkpoint (expects the `<model>.json` config sidecar).
        #[arg(long)]
        model: PathBuf,
        /// One sequence directory...
        #[arg(long, conflicts_with = "dataset")]
        seq: Option<PathBuf>,
        /// ...or a dataset root of sequence directories.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "rgbt234")]
        layout: String,
        #[arg(long, default_value = "visible")]
        gt_modality: String,
        /// Output directory for result and metadata files.
        #[arg(long)]
        out: PathBuf,
        /// Enable the mutual-condition blocks (default: model config).
        #[arg(long, overrides_with = "no_dmc")]
        dmc: bool,
        #[arg(long)]
        no_dmc: bool,
        /// Enable camera-motion re-sampling (default: on).
        #[arg(long, overrides_with = "no_rs")]
        rs: bool,
        #[arg(long)]
        no_rs: bool,
        /// Gate mode: `literal` or `gated_residual`.
        #[arg(long)]
        gate_mode: Option<String>,
        /// Camera-motion threshold in pixels.
        #[arg(long)]
        u: Option<f64>,
        /// Dump first-frame gate response maps into this directory.
        #[arg(long)]
        dump_gates: Option<PathBuf>,
    },
    /// Evaluate result files against dataset ground truth.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Directory of result files produced by `track`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "rgbt234")]
        layout: String,
        #[arg(long, default_value = "visible")]
        gt_modality: String,
        /// Report output directory (default: the results directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accept result files not covered by a run manifest.
        #[arg(long)]
        force: bool,
        /// Also print the per-sequence mean aggregate.
        #[arg(long)]
        per_sequence_mean: bool,
    },
    /// Component ablation: four tracker variants, optional u-threshold sweep.
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "rgbt234")]
        layout: String,
        /// Checkpoint trained with mutual-condition blocks.
        #[arg(long)]
        model_dmc: PathBuf,
        /// Checkpoint trained without them.
        #[arg(long)]
        model_plain: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also sweep the camera-motion threshold over {0,5,10,15,20,25,30}.
        #[arg(long)]
        u_sweep: bool,
    },
}

fn parse_layout(s: &str) -> Result<DatasetLayout> {
    DatasetLayout::parse(s).ok_or_else(|| anyhow!("unknown layout {s:?} (rgbt234 or gtot)"))
}

fn parse_gt_modality(s: &str) -> Result<GtModality> {
    match s {
        "visible" => Ok(GtModality::Visible),
        "infrared" => Ok(GtModality::Infrared),
        other => bail!("unknown gt modality {other:?} (visible or infrared)"),
    }
}

/// Load a checkpoint plus its model-config sidecar.
fn load_model(ckpt: &Path) -> Result<(Network<f32>, ModelConfig)> {
    let sidecar = PathBuf::from(format!("{}.json", ckpt.display()));
    let text = std::fs::read_to_string(&sidecar)
        .with_context(|| format!("missing model config sidecar {}", sidecar.display()))?;
    let config: ModelConfig = serde_json::from_str(&text)?;
    let mut net: Network<f32> = build_network(&config, 1)?;
    net.load_checkpoint(ckpt, true)?;
    Ok((net, config))
}

fn flags_of(cfg: &TrackerConfig, gate_mode: GateMode) -> ComponentFlags {
    ComponentFlags {
        dmc: cfg.use_dmc,
        rs: cfg.use_resample,
        gate_mode: gate_mode.name().to_string(),
        u: cfg.u_threshold,
    }
}

fn cmd_synth(
    common: &CommonOpts,
    out: &Path,
    preset: Option<&str>,
    spec: Option<&Path>,
) -> Result<()> {
    let cfg = common.load()?;
    let seed = common.seed.unwrap_or(42);
    let mut outputs = Vec::new();
    match (preset, spec) {
        (Some(name), None) => {
            let specs = synth::benchmark_specs(seed);
            let mut write_subset = |sub: &str, specs: &[SynthSpec]| -> Result<()> {
                let root = out.join(sub);
                synth::materialize(&root, specs)?;
                for s in specs {
                    outputs.push(format!("{sub}/{}", s.name));
                }
                Ok(())
            };
            match name {
                "benchmark" => {
                    write_subset("camera_motion", &specs.camera_motion)?;
                    write_subset("degradation", &specs.degradation)?;
                    write_subset("training", &specs.training)?;
                }
                "camera-motion" => write_subset("camera_motion", &specs.camera_motion)?,
                "degradation" => write_subset("degradation", &specs.degradation)?,
                "training" => write_subset("training", &specs.training)?,
                other => bail!("unknown preset {other:?}"),
            }
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let spec: SynthSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing spec {}", path.display()))?;
            let seq = synth::synth_generate(&spec)?;
            synth::write_sequence(&out.join(&spec.name), &seq)?;
            outputs.push(spec.name.clone());
        }
        _ => bail!("give exactly one of --preset or --spec"),
    }
    manifest::write_atomic(
        out,
        &RunManifest {
            command: "synth".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            flags: flags_of(&cfg.tracker, cfg.model.gate_mode),
            inputs: vec![],
            outputs,
            config: serde_json::to_value(&cfg)?,
            timestamp_unix: manifest::now_unix(),
        },
    )?;
    println!("synth: wrote sequences under {}", out.display());
    Ok(())
}

fn cmd_train(
    common: &CommonOpts,
    dataset: &Path,
    layout: &str,
    out: &Path,
    no_dmc: bool,
    cycles: Option<usize>,
) -> Result<()> {
    let mut cfg = common.load()?;
    if no_dmc {
        cfg.model.dmc_enabled = false;
    }
    if let Some(c) = cycles {
        cfg.trainer.cycles = c;
    }
    let layout = parse_layout(layout)?;
    let sequences = data::load_dataset(dataset, layout, GtModality::Visible)?;
    eprintln!(
        "train: {} sequences, {} cycles, dmc={}",
        sequences.len(),
        cfg.trainer.cycles,
        cfg.model.dmc_enabled
    );
    let (net, log) = trainer::train::<f32>(&sequences, &cfg.model, &cfg.trainer)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    net.save_checkpoint(out, false)?;
    std::fs::write(
        format!("{}.json", out.display()),
        serde_json::to_string_pretty(&cfg.model)?,
    )?;
    let log_path = PathBuf::from(format!("{}.log.csv", out.display()));
    trainer::write_log_csv(&log_path, &log)?;
    let dir = out.parent().unwrap_or(Path::new("."));
    manifest::write_atomic(
        dir,
        &RunManifest {
            command: "train".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.trainer.seed,
            flags: flags_of(&cfg.tracker, cfg.model.gate_mode),
            inputs: vec![dataset.display().to_string()],
            outputs: vec![
                out.file_name().unwrap().to_string_lossy().into_owned(),
                format!("{}.json", out.file_name().unwrap().to_string_lossy()),
                format!("{}.log.csv", out.file_name().unwrap().to_string_lossy()),
            ],
            config: serde_json::to_value(&cfg)?,
            timestamp_unix: manifest::now_unix(),
        },
    )?;
    let last = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "train: {} iterations, final loss {:.4}, model at {}",
        log.len(),
        last,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_track(
    common: &CommonOpts,
    model: &Path,
    seq: Option<&Path>,
    dataset: Option<&Path>,
    layout: &str,
    gt_modality: &str,
    out: &Path,
    dmc: bool,
    no_dmc: bool,
    rs: bool,
    no_rs: bool,
    gate_mode: Option<&str>,
    u: Option<f64>,
    dump_gates: Option<&Path>,
) -> Result<()> {
    let cfg = common.load()?;
    let layout = parse_layout(layout)?;
    let gt_modality = parse_gt_modality(gt_modality)?;
    let (mut net, _model_cfg) = load_model(model)?;
    let mut tracker_cfg = cfg.tracker.clone();
    if no_dmc {
        tracker_cfg.use_dmc = false;
    } else if dmc {
        tracker_cfg.use_dmc = true;
    }
    if no_rs {
        tracker_cfg.use_resample = false;
    } else if rs {
        tracker_cfg.use_resample = true;
    }
    if let Some(g) = gate_mode {
        net.config.gate_mode = GateMode::parse(g)
            .ok_or_else(|| anyhow!("unknown gate mode {g:?} (literal or gated_residual)"))?;
    }
    if let Some(u) = u {
        tracker_cfg.u_threshold = u;
    }
    let sequences: Vec<RgbtSequence> = match (seq, dataset) {
        (Some(dir), None) => vec![data::load_sequence(dir, layout, gt_modality)?],
        (None, Some(root)) => data::load_dataset(root, layout, gt_modality)?,
        _ => bail!("give exactly one of --seq or --dataset"),
    };
    std::fs::create_dir_all(out)?;

    if let Some(dir) = dump_gates {
        dump_gate_maps(&net, &sequences[0], dir)?;
    }

    let runs: Vec<Result<tracker::TrackRun, dmcnet_core::Error>> = sequences
        .par_iter()
        .map(|s| tracker::track_sequence(&net, s, &tracker_cfg))
        .collect();
    let mut outputs = Vec::new();
    for (s, run) in sequences.iter().zip(runs) {
        let run = run.with_context(|| format!("tracking {}", s.name))?;
        let result_path = out.join(format!("{}.txt", s.name));
        tracker::write_result_file(&result_path, &run.boxes)?;
        let meta_path = out.join(format!("{}_meta.csv", s.name));
        tracker::write_metadata_file(&meta_path, &run.steps)?;
        outputs.push(format!("{}.txt", s.name));
        outputs.push(format!("{}_meta.csv", s.name));
        eprintln!(
            "track: {} ({} frames, {} resample events, {} short updates)",
            s.name,
            run.boxes.len(),
            run.stats.resample_events,
            run.stats.short_updates
        );
    }
    manifest::write_atomic(
        out,
        &RunManifest {
            command: "track".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: tracker_cfg.seed,
            flags: flags_of(&tracker_cfg, net.config.gate_mode),
            inputs: vec![model.display().to_string()],
            outputs,
            config: serde_json::to_value(&tracker_cfg)?,
            timestamp_unix: manifest::now_unix(),
        },
    )?;
    println!("track: {} sequences -> {}", sequences.len(), out.display());
    Ok(())
}

/// Write the first-frame gate response maps as grayscale PNGs.
fn dump_gate_maps(net: &Network<f32>, seq: &RgbtSequence, dir: &Path) -> Result<()> {
    if net.dmc.is_empty() {
        bail!("--dump-gates needs a model with mutual-condition blocks");
    }
    let frame = &seq.frames[0];
    let gt = frame
        .gt
        .ok_or_else(|| anyhow!("{}: first frame unannotated", seq.name))?;
    let size = net.config.input_size;
    let rgb = crop_patch::<f32>(&frame.rgb, &gt, size, 0.0)?;
    let t = crop_patch::<f32>(&frame.thermal, &gt, size, 0.0)?;
    let rgb = dmcnet_core::Tensor::stack(&[rgb]);
    let t = dmcnet_core::Tensor::stack(&[t]);
    std::fs::create_dir_all(dir)?;
    for (name, width, map) in net.gate_responses(&rgb, &t) {
        let (lo, hi) = map
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = (hi - lo).max(1e-12);
        let bytes: Vec<u8> = map
            .iter()
            .map(|&v| ((v - lo) / span * 255.0).round() as u8)
            .collect();
        let height = map.len() / width;
        data::save_png_gray(&dir.join(format!("{name}.png")), width, height, &bytes)?;
    }
    eprintln!("track: gate response maps in {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    common: &CommonOpts,
    results: &Path,
    dataset: &Path,
    layout: &str,
    gt_modality: &str,
    out: Option<&Path>,
    force: bool,
    per_sequence_mean: bool,
) -> Result<()> {
    let cfg = common.load()?;
    let layout = parse_layout(layout)?;
    let gt_modality = parse_gt_modality(gt_modality)?;
    let gtot_mode = layout == DatasetLayout::Gtot;
    if !force {
        manifest::check_results_consistent(results)?;
    }
    let sequences = data::load_dataset(dataset, layout, gt_modality)?;
    let mut results_vec = Vec::new();
    for seq in &sequences {
        let path = results.join(format!("{}.txt", seq.name));
        if !path.exists() {
            bail!("no result file for sequence {} at {}", seq.name, path.display());
        }
        let pred = tracker::read_result_file(&path)?;
        if pred.len() != seq.len() {
            bail!(
                "{}: {} result lines for {} frames",
                seq.name,
                pred.len(),
                seq.len()
            );
        }
        results_vec.push(eval::SequenceResult {
            name: seq.name.clone(),
            pred,
            gt: seq.gt_boxes(),
            attributes: seq.attributes.clone(),
        });
    }
    let report = eval::evaluate(&results_vec, gtot_mode);
    let out_dir = out.unwrap_or(results);
    std::fs::create_dir_all(out_dir)?;
    eval::write_report_csv(&out_dir.join("report.csv"), &report)?;
    eval::write_curve_csv(&out_dir.join("pr_curve.csv"), "threshold_px,precision", &report.pr_curve)?;
    eval::write_curve_csv(&out_dir.join("sr_curve.csv"), "overlap,success", &report.sr_curve)?;
    eval::write_svg_plot(
        &out_dir.join("pr_curve.svg"),
        "Precision vs center-error threshold",
        &[("PR".to_string(), report.pr_curve.clone())],
    )?;
    eval::write_svg_plot(
        &out_dir.join("sr_curve.svg"),
        "Success vs overlap threshold",
        &[("SR".to_string(), report.sr_curve.clone())],
    )?;
    manifest::write_atomic(
        out_dir,
        &RunManifest {
            command: "eval".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.tracker.seed,
            flags: flags_of(&cfg.tracker, cfg.model.gate_mode),
            inputs: vec![results.display().to_string(), dataset.display().to_string()],
            outputs: vec![
                "report.csv".into(),
                "pr_curve.csv".into(),
                "sr_curve.csv".into(),
                "pr_curve.svg".into(),
                "sr_curve.svg".into(),
            ],
            config: serde_json::to_value(&cfg)?,
            timestamp_unix: manifest::now_unix(),
        },
    )?;
    println!("PR={:.3} SR={:.3}", report.pr_at, report.sr_auc);
    if per_sequence_mean {
        let (pr, sr) = eval::evaluate_sequence_mean(&results_vec, gtot_mode);
        println!("per-sequence mean: PR={pr:.3} SR={sr:.3}");
    }
    for (tag, (pr, sr)) in &report.per_attribute {
        println!("  {tag}: PR={pr:.3} SR={sr:.3}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    common: &CommonOpts,
    dataset: &Path,
    layout: &str,
    model_dmc: &Path,
    model_plain: &Path,
    out: &Path,
    u_sweep: bool,
) -> Result<()> {
    let cfg = common.load()?;
    let layout = parse_layout(layout)?;
    let gtot_mode = layout == DatasetLayout::Gtot;
    let sequences = data::load_dataset(dataset, layout, GtModality::Visible)?;
    let (net_dmc, _) = load_model(model_dmc)?;
    let (net_plain, _) = load_model(model_plain)?;
    std::fs::create_dir_all(out)?;
    let rows = eval::ablation_run(&sequences, &net_dmc, &net_plain, &cfg.tracker, gtot_mode)?;
    eval::write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    let pr_pts: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (i as f64, r.pr)).collect();
    let sr_pts: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (i as f64, r.sr)).collect();
    eval::write_svg_plot(
        &out.join("ablation.svg"),
        "PR/SR per variant (v1, v2, v3, full)",
        &[("PR".to_string(), pr_pts), ("SR".to_string(), sr_pts)],
    )?;
    for r in &rows {
        println!("{:5}  dmc={} rs={}  PR={:.3} SR={:.3}", r.variant, r.dmc, r.resample, r.pr, r.sr);
    }
    let mut outputs = vec!["ablation.csv".to_string(), "ablation.svg".to_string()];
    if u_sweep {
        let rows = eval::u_sweep(&sequences, &net_dmc, &cfg.tracker, &eval::U_SWEEP, gtot_mode)?;
        eval::write_u_sweep_csv(&out.join("u_sweep.csv"), &rows)?;
        let pr_pts: Vec<(f64, f64)> = rows.iter().map(|(u, pr, _)| (*u, *pr)).collect();
        let sr_pts: Vec<(f64, f64)> = rows.iter().map(|(u, _, sr)| (*u, *sr)).collect();
        eval::write_svg_plot(
            &out.join("u_sweep.svg"),
            "PR/SR vs camera-motion threshold u",
            &[("PR".to_string(), pr_pts), ("SR".to_string(), sr_pts)],
        )?;
        outputs.push("u_sweep.csv".into());
        outputs.push("u_sweep.svg".into());
        for (u, pr, sr) in &rows {
            println!("u={u:<4} PR={pr:.3} SR={sr:.3}");
        }
    }
    manifest::write_atomic(
        out,
        &RunManifest {
            command: "ablate".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.tracker.seed,
            flags: flags_of(&cfg.tracker, cfg.model.gate_mode),
            inputs: vec![
                dataset.display().to_string(),
                model_dmc.display().to_string(),
                model_plain.display().to_string(),
            ],
            outputs,
            config: serde_json::to_value(&cfg)?,
            timestamp_unix: manifest::now_unix(),
        },
    )?;
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth {
            common,
            out,
            preset,
            spec,
        } => cmd_synth(common, out, preset.as_deref(), spec.as_deref()),
        Command::Train {
            common,
            dataset,
            layout,
            out,
            no_dmc,
            cycles,
        } => cmd_train(common, dataset, layout, out, *no_dmc, *cycles),
        Command::Track {
            common,
            model,
            seq,
            dataset,
            layout,
            gt_modality,
            out,
            dmc,
            no_dmc,
            rs,
            no_rs,
            gate_mode,
            u,
            dump_gates,
        } => cmd_track(
            common,
            model,
            seq.as_deref(),
            dataset.as_deref(),
            layout,
            gt_modality,
            out,
            *dmc,
            *no_dmc,
            *rs,
            *no_rs,
            gate_mode.as_deref(),
            *u,
            dump_gates.as_deref(),
        ),
        Command::Eval {
            common,
            results,
            dataset,
            layout,
            gt_modality,
            out,
            force,
            per_sequence_mean,
        } => cmd_eval(
            common,
            results,
            dataset,
            layout,
            gt_modality,
            out.as_deref(),
            *force,
            *per_sequence_mean,
        ),
        Command::Ablate {
            common,
            dataset,
            layout,
            model_dmc,
            model_plain,
            out,
            u_sweep,
        } => cmd_ablate(common, dataset, layout, model_dmc, model_plain, out, *u_sweep),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dmcnet: {e:#}");
            ExitCode::FAILURE
        }
    }
}
