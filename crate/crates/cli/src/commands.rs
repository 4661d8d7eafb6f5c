use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mist_core::dataio::{
    read_ground_truth, read_manifest, read_score_file_for, synth_dataset, write_score_file, GroundTruthMap,
    Manifest, ScoreSeries, Split, SynthSpec,
};
use mist_core::encoder::{
    attention_maps, encoder_score_video, finetune, load_encoder, save_encoder, write_attention_maps, Ablation,
    EncoderMeta, FinetuneOptions,
};
use mist_core::evaluation::{evaluate, EvalOptions, EvalReport};
use mist_core::milgen::{load_generator, save_generator, score_video, train_generator, GeneratorMeta, GeneratorTrainOptions};
use mist_core::pseudolabel::{generate_pseudo_labels, load_stage2_labels, write_pseudo_labels};
use mist_core::sampling::SamplingMode;
use mist_core::{load_config, HyperParams, MistError, Result};
use serde::Serialize;

use crate::args::*;
use crate::plot::render_score_plot;

/// Resolves hyperparameters from `base`, the config file, `--set` overrides
/// and the seed flag (or `MIST_SEED`), in that order.
pub fn resolve_config(args: &ConfigArgs, base: Option<HyperParams>) -> Result<HyperParams> {
    let mut hp = match &args.config {
        Some(path) => load_config(path)?,
        None => base.unwrap_or_default(),
    };
    hp = hp.with_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        hp.seed = seed;
    }
    hp.validate()?;
    Ok(hp)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(&text, path)
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| MistError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| MistError::io(path, e))
}

fn default_gt(manifest: &Path, gt: Option<&PathBuf>) -> PathBuf {
    match gt {
        Some(p) => p.clone(),
        None => manifest.parent().unwrap_or(Path::new(".")).join("gt.json"),
    }
}

/// Checkpoint id recorded in pseudo-label provenance: the file name, so runs
/// in different directories produce identical sidecars.
fn checkpoint_id(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(MistError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} file does not exist")),
        ))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| MistError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| MistError::json(path, e))?
        }
        None => SynthSpec::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { spec.$field = v; })*};
    }
    apply!(num_normal, num_abnormal, test_normal, test_abnormal, feature_dim, anomaly_shift, anomaly_min_len);
    if args.no_pixels {
        spec.emit_pixels = false;
    }
    let out = synth_dataset(&spec, args.seed, &args.out)?;
    log::info!("wrote {} videos to {}", out.records.len(), args.out.display());
    Ok(out.manifest_path)
}

#[derive(Serialize)]
struct LossLog<'a> {
    losses: &'a [f64],
}

pub fn cmd_train_gen(args: &TrainGenArgs) -> Result<()> {
    let hp = resolve_config(&args.config, None)?;
    let manifest = read_manifest(&args.manifest)?;
    train_gen(&manifest, &hp, args.sampling.into(), &args.out, args.log.as_deref())
}

fn train_gen(manifest: &Manifest, hp: &HyperParams, sampling: SamplingMode, out: &Path, log_path: Option<&Path>) -> Result<()> {
    let opts = GeneratorTrainOptions { sampling, seed: hp.seed };
    let (params, log) = train_generator(manifest, hp, opts)?;
    log::info!(
        "generator: loss {:.4} -> {:.4} over {} iterations",
        log.losses.first().copied().unwrap_or(f64::NAN),
        log.losses.last().copied().unwrap_or(f64::NAN),
        log.losses.len()
    );
    let meta = GeneratorMeta {
        feature_dim: params.feature_dim(),
        hp: hp.clone(),
        seed: hp.seed,
        iterations: hp.gen_iters,
        sampling,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| MistError::io(parent, e))?;
    }
    save_generator(&params, &meta, out)?;
    if let Some(path) = log_path {
        write_json(&LossLog { losses: &log.losses }, path)?;
    }
    Ok(())
}

pub fn cmd_pseudo(args: &PseudoArgs) -> Result<()> {
    require_file(&args.generator, "generator")?;
    let manifest = read_manifest(&args.manifest)?;
    let (params, meta) = load_generator(&args.generator)?;
    let hp = resolve_config(&args.config, Some(meta.hp))?;
    let set = generate_pseudo_labels(&params, &manifest, &hp, &checkpoint_id(&args.generator))?;
    write_pseudo_labels(&set, &args.out)?;
    log::info!("wrote pseudo labels for {} videos", set.abnormal.len());
    Ok(())
}

pub fn cmd_finetune(args: &FinetuneArgs) -> Result<()> {
    let hp = resolve_config(&args.config, None)?;
    let manifest = read_manifest(&args.manifest)?;
    let ablation = Ablation {
        disable_sga: args.disable_sga,
        disable_hg: args.disable_hg,
    };
    finetune_stage(&manifest, &args.labels, &hp, ablation, &args.out, args.log.as_deref())
}

#[derive(Serialize)]
struct FinetuneLogFile<'a> {
    losses: &'a [f64],
    learning_rates: &'a [f64],
    epoch_losses: &'a [f64],
}

fn finetune_stage(
    manifest: &Manifest,
    labels_dir: &Path,
    hp: &HyperParams,
    ablation: Ablation,
    out: &Path,
    log_path: Option<&Path>,
) -> Result<()> {
    let labels = load_stage2_labels(manifest, labels_dir)?;
    let opts = FinetuneOptions {
        ablation,
        seed: hp.seed,
        backbone: None,
    };
    let (enc, log) = finetune(manifest, &labels, hp, &opts)?;
    log::info!(
        "encoder: epoch loss {:.4} -> {:.4}",
        log.epoch_losses.first().copied().unwrap_or(f64::NAN),
        log.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let meta = EncoderMeta {
        backbone: enc.backbone.config.clone(),
        hp: hp.clone(),
        seed: hp.seed,
        epochs: hp.ft_epochs,
        ablation,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| MistError::io(parent, e))?;
    }
    save_encoder(&enc, &meta, out)?;
    if let Some(path) = log_path {
        write_json(
            &FinetuneLogFile {
                losses: &log.losses,
                learning_rates: &log.learning_rates,
                epoch_losses: &log.epoch_losses,
            },
            path,
        )?;
    }
    Ok(())
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let manifest = read_manifest(&args.manifest)?;
    let split: Split = args.split.into();
    match (&args.encoder, &args.generator) {
        (Some(enc), _) => score_with_encoder(&manifest, split, enc, &args.out, args.attention.as_deref()),
        (None, Some(generator)) => {
            require_file(generator, "generator")?;
            let (params, _) = load_generator(generator)?;
            fs::create_dir_all(&args.out).map_err(|e| MistError::io(&args.out, e))?;
            for rec in manifest.select(split, None) {
                let series = score_video(&params, &manifest.load_features(rec)?)?;
                write_score_file(&series, args.out.join(format!("{}.scor", rec.video_id)))?;
            }
            Ok(())
        }
        (None, None) => Err(MistError::validation("score", "pass --encoder or --generator")),
    }
}

fn score_with_encoder(manifest: &Manifest, split: Split, ckpt: &Path, out: &Path, attention: Option<&Path>) -> Result<()> {
    require_file(ckpt, "encoder")?;
    let (enc, _) = load_encoder(ckpt)?;
    fs::create_dir_all(out).map_err(|e| MistError::io(out, e))?;
    for rec in manifest.select(split, None) {
        let clips = manifest.load_clips(rec)?;
        let series = encoder_score_video(&enc, &clips)?;
        write_score_file(&series, out.join(format!("{}.scor", rec.video_id)))?;
        if let Some(dir) = attention {
            write_attention_maps(&attention_maps(&enc, &clips)?, dir)?;
        }
    }
    Ok(())
}

fn load_scores(manifest: &Manifest, split: Split, dir: &Path) -> Result<BTreeMap<String, ScoreSeries>> {
    let mut scores = BTreeMap::new();
    for rec in manifest.select(split, None) {
        let path = dir.join(format!("{}.scor", rec.video_id));
        require_file(&path, "scores")?;
        scores.insert(rec.video_id.clone(), read_score_file_for(rec, &path)?);
    }
    Ok(scores)
}

fn load_gt(manifest_path: &Path, gt: Option<&PathBuf>) -> Result<GroundTruthMap> {
    let path = default_gt(manifest_path, gt);
    require_file(&path, "gt")?;
    read_ground_truth(path)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let manifest = read_manifest(&args.manifest)?;
    let gt = load_gt(&args.manifest, args.gt.as_ref())?;
    let hp = resolve_config(&args.config, None)?;
    let split: Split = args.split.into();
    let scores = load_scores(&manifest, split, &args.scores)?;
    let opts = EvalOptions {
        threshold: args.threshold.unwrap_or(hp.far_threshold),
        far_subset: args.far_subset.into(),
        split,
    };
    let report = evaluate(&manifest, &scores, &gt, &opts)?;
    match &args.out {
        Some(path) => write_text(&report.to_json(), path)?,
        None => crate::emit(&report.to_json()),
    }
    Ok(report)
}

pub fn cmd_plot(args: &PlotArgs) -> Result<Vec<PathBuf>> {
    let manifest = read_manifest(&args.manifest)?;
    let gt = load_gt(&args.manifest, args.gt.as_ref())?;
    let split: Split = args.split.into();
    let scores = load_scores(&manifest, split, &args.scores)?;
    let ids: Vec<String> = if args.videos.is_empty() {
        scores.keys().cloned().collect()
    } else {
        args.videos.clone()
    };
    plot_videos(&manifest, &scores, &gt, &ids, &args.out)
}

fn plot_videos(
    manifest: &Manifest,
    scores: &BTreeMap<String, ScoreSeries>,
    gt: &GroundTruthMap,
    ids: &[String],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| MistError::io(out, e))?;
    let mut written = Vec::new();
    for id in ids {
        let rec = manifest
            .get(id)
            .ok_or_else(|| MistError::validation("video", format!("{id}: not in the manifest")))?;
        let series = scores
            .get(id)
            .ok_or_else(|| MistError::validation("video", format!("{id}: no scores in the selected split")))?;
        let truth = gt
            .get(id)
            .ok_or_else(|| MistError::validation("gt", format!("{id}: no ground truth")))?;
        let path = out.join(format!("{id}.png"));
        render_score_plot(series, truth, rec.frames_per_clip, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifacts {
    pub generator: PathBuf,
    pub generator_log: PathBuf,
    pub pseudo_labels: PathBuf,
    pub encoder: PathBuf,
    pub finetune_log: PathBuf,
    pub scores: PathBuf,
    pub report: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// What a pipeline run produced and how long each stage took.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineRunRecord {
    pub run_id: String,
    pub config: HyperParams,
    pub seed: u64,
    pub sampling: SamplingMode,
    pub ablation: Ablation,
    pub stage_seconds: BTreeMap<String, f64>,
    pub artifacts: Artifacts,
}

pub struct PipelineOutcome {
    pub record: PipelineRunRecord,
    pub report: EvalReport,
}

pub fn cmd_pipeline(args: &PipelineArgs) -> Result<PipelineOutcome> {
    let hp = resolve_config(&args.config, None)?;
    let manifest = read_manifest(&args.manifest)?;
    let gt = load_gt(&args.manifest, args.gt.as_ref())?;
    let sampling: SamplingMode = args.sampling.into();
    let ablation = Ablation {
        disable_sga: args.disable_sga,
        disable_hg: args.disable_hg,
    };
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| MistError::io(out, e))?;
    let artifacts = Artifacts {
        generator: out.join("generator.bin"),
        generator_log: out.join("generator_log.json"),
        pseudo_labels: out.join("pseudo_labels"),
        encoder: out.join("encoder.bin"),
        finetune_log: out.join("finetune_log.json"),
        scores: out.join("scores"),
        report: out.join("report.json"),
        plots: Vec::new(),
    };
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    train_gen(&manifest, &hp, sampling, &artifacts.generator, Some(&artifacts.generator_log))?;
    lap("train_gen", &mut timings);

    let (params, _) = load_generator(&artifacts.generator)?;
    let set = generate_pseudo_labels(&params, &manifest, &hp, &checkpoint_id(&artifacts.generator))?;
    write_pseudo_labels(&set, &artifacts.pseudo_labels)?;
    lap("pseudo", &mut timings);

    finetune_stage(&manifest, &artifacts.pseudo_labels, &hp, ablation, &artifacts.encoder, Some(&artifacts.finetune_log))?;
    lap("finetune", &mut timings);

    score_with_encoder(&manifest, Split::Test, &artifacts.encoder, &artifacts.scores, None)?;
    lap("score", &mut timings);

    let scores = load_scores(&manifest, Split::Test, &artifacts.scores)?;
    let opts = EvalOptions {
        threshold: hp.far_threshold,
        ..EvalOptions::default()
    };
    let report = evaluate(&manifest, &scores, &gt, &opts)?;
    write_text(&report.to_json(), &artifacts.report)?;
    lap("eval", &mut timings);

    let mut artifacts = artifacts;
    if !args.no_plots {
        let ids: Vec<String> = scores.keys().cloned().collect();
        artifacts.plots = plot_videos(&manifest, &scores, &gt, &ids, &out.join("plots"))?;
        lap("plot", &mut timings);
    }

    let run_name = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let record = PipelineRunRecord {
        run_id: format!("{run_name}-seed{}", hp.seed),
        config: hp.clone(),
        seed: hp.seed,
        sampling,
        ablation,
        stage_seconds: timings,
        artifacts,
    };
    write_json(&record, &out.join("run_record.json"))?;
    log::info!(
        "frame AUC {:.4}, FAR {:.4}, score gap {:.4}",
        report.frame_auc,
        report.far,
        report.score_gap
    );
    Ok(PipelineOutcome { record, report })
}
