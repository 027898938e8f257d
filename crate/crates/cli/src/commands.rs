use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use mdbnet_core::autodiff::{read_checkpoint, write_checkpoint, AutodiffError};
use mdbnet_core::blocks::{BlockVariant, BlocksError, FusionStrategy, MdbNet};
use mdbnet_core::config::{ConfigError, RunConfig};
use mdbnet_core::data::{
    generate_dataset, kfold_split, load_sample, read_manifest, save_sample, write_manifest, DataError, Sample,
    SamplePaths, SyntheticSceneSpec,
};
use mdbnet_core::geometry::GeometryError;
use mdbnet_core::gradsuite::run_gradient_suite;
use mdbnet_core::losses::{LossError, WeightingMode};
use mdbnet_core::metrics::{
    aggregate_folds, format_ablation_table, format_results_table, read_reports_csv, write_reports_csv, EvalReport,
    MetricsError,
};
use mdbnet_core::train::{
    evaluate, prepare_samples, run_cross_validation, training_weights, PreparedSample, TrainError,
};

use crate::{Block, Cli, Command, Fusion, GlobalArgs, ModelArgs, Tier, Weighting};

/// Largest relative error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

/// Missing or unreadable inputs are the caller's problem; other I/O failures are ours.
fn io_error(e: &std::io::Error) -> CliError {
    match e.kind() {
        std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::InvalidData => {
            CliError::Validation(e.to_string())
        }
        _ => CliError::Internal(e.to_string()),
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match &e {
            ConfigError::Io(io) => io_error(io),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match &e {
            GeometryError::Io(io) => io_error(io),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match &e {
            DataError::Io(io) | DataError::Geometry(GeometryError::Io(io)) => io_error(io),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match &e {
            MetricsError::Io(io) => io_error(io),
            MetricsError::FormatViolation(_) | MetricsError::TooFewFolds(_) => CliError::Validation(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        match &e {
            AutodiffError::Io(io) => io_error(io),
            AutodiffError::FormatViolation(_) => CliError::Validation(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<BlocksError> for CliError {
    fn from(e: BlocksError) -> Self {
        match e {
            BlocksError::Autodiff(a) => a.into(),
            BlocksError::Geometry(g) => g.into(),
            BlocksError::InvalidConfig(_) | BlocksError::MissingParameter(_) | BlocksError::ProviderFileMissing(_) => {
                CliError::Validation(e.to_string())
            }
            BlocksError::ShapeMismatch(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Io(io) => io_error(&io),
            LossError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Geometry(g) => g.into(),
            TrainError::Blocks(b) => b.into(),
            TrainError::Loss(l) => l.into(),
            TrainError::Metrics(m) => m.into(),
            TrainError::Autodiff(a) => a.into(),
            TrainError::Diverged(..) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        io_error(&e)
    }
}

/// Worker threads for fold training, from `MDBNET_THREADS` (default 1).
fn thread_count() -> Result<usize, CliError> {
    match std::env::var("MDBNET_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Validation(format!("MDBNET_THREADS must be a positive integer, got `{v}`"))),
    }
}

/// Config file, then `--set` overrides, then dedicated flags.
fn resolve(global: &GlobalArgs, extra: Vec<String>) -> Result<RunConfig, CliError> {
    let base = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&global.overrides)?.with_overrides(&extra)?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &global.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn model_overrides(m: &ModelArgs) -> Vec<String> {
    let mut v = Vec::new();
    if let Some(f) = m.fusion {
        let f = match f {
            Fusion::Early => FusionStrategy::Early,
            Fusion::Mid => FusionStrategy::Mid,
            Fusion::Late => FusionStrategy::Late,
        };
        v.push(format!("model.fusion=\"{f}\""));
    }
    if let Some(b) = m.block {
        let b = match b {
            Block::Preact => BlockVariant::PreAct,
            Block::Itrm => BlockVariant::Itrm,
        };
        v.push(format!("model.block=\"{b}\""));
    }
    if let Some(w) = m.weighting {
        let w = match w {
            Weighting::Kmeans => WeightingMode::KMeansReweight,
            Weighting::Resample => WeightingMode::Resample,
        };
        v.push(format!("loss.weighting_mode=\"{w}\""));
    }
    if let Some(l) = m.lambda {
        v.push(format!("loss.lambda={l:?}"));
    }
    v
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    Ok(std::path::absolute(p)?)
}

fn manifest_path(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.data
        .manifest
        .clone()
        .ok_or_else(|| CliError::Validation("no manifest: pass --manifest or set data.manifest".into()))
}

fn load_manifest(path: &Path) -> Result<(Vec<SamplePaths>, Vec<Sample>), CliError> {
    let manifest = read_manifest(path)?;
    if manifest.entries.is_empty() {
        return Err(CliError::Validation(format!(
            "manifest {} lists no samples",
            path.display()
        )));
    }
    let samples = manifest
        .entries
        .iter()
        .map(load_sample)
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest.entries, samples))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Gen { scenes, tier } => {
            let mut extra = Vec::new();
            if let Some(n) = scenes {
                extra.push(format!("data.scenes={n}"));
            }
            let mut cfg = resolve(g, extra)?;
            if let Some(t) = tier {
                let preset = match t {
                    Tier::Easy => SyntheticSceneSpec::easy(),
                    Tier::Skewed => SyntheticSceneSpec::skewed(),
                };
                // The preset replaces the scene table; `--set data.scene.*` still wins.
                let scene_sets: Vec<String> = g
                    .overrides
                    .iter()
                    .filter(|o| o.trim_start().starts_with("data.scene."))
                    .cloned()
                    .collect();
                cfg.data.scene = preset;
                cfg = cfg.with_overrides(&scene_sets)?;
                cfg.validate()?;
            }
            gen(&mut cfg)
        }
        Command::Voxelize { manifest } => {
            let mut cfg = resolve(g, Vec::new())?;
            if let Some(m) = manifest {
                cfg.data.manifest = Some(m);
            }
            voxelize(&cfg)
        }
        Command::Weights { manifest, model } => {
            let mut cfg = resolve(g, model_overrides(&model))?;
            if let Some(m) = manifest {
                cfg.data.manifest = Some(m);
            }
            weights(&cfg)
        }
        Command::Train {
            manifest,
            folds,
            epochs,
            max_steps,
            model,
        } => {
            let mut extra = model_overrides(&model);
            if let Some(k) = folds {
                extra.push(format!("data.folds={k}"));
            }
            if let Some(e) = epochs {
                extra.push(format!("train.max_epochs={e}"));
            }
            if let Some(s) = max_steps {
                extra.push(format!("train.max_steps={s}"));
            }
            let mut cfg = resolve(g, extra)?;
            if let Some(m) = manifest {
                cfg.data.manifest = Some(m);
            }
            train(&mut cfg)
        }
        Command::Eval { run } => eval(&run),
        Command::Gradcheck => gradcheck(g.seed.unwrap_or(0)),
        Command::Report { run, label, ablation } => report(&run, &label, ablation.as_deref()),
    }
}

fn gen(cfg: &mut RunConfig) -> Result<(), CliError> {
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let scenes = generate_dataset(&cfg.data.scene, cfg.data.scenes, cfg.seed)?;
    let mut entries = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let paths = SamplePaths::in_dir(&out, &s.sample.id);
        save_sample(&s.sample, &paths)?;
        entries.push(paths);
    }
    let manifest = out.join("manifest.txt");
    write_manifest(&manifest, &entries)?;
    cfg.data.manifest = Some(absolute(&manifest)?);
    cfg.echo(&out)?;
    println!("wrote {} scenes and {}", scenes.len(), manifest.display());
    Ok(())
}

fn voxelize(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = manifest_path(cfg)?;
    let (entries, samples) = load_manifest(&manifest)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    for (paths, sample) in entries.iter().zip(&samples) {
        sample
            .ftsdf
            .write_file(&cfg.output_dir.join(format!("{}_ftsdf.vxg", paths.id())))?;
    }
    println!("wrote {} F-TSDF grids to {}", samples.len(), cfg.output_dir.display());
    Ok(())
}

fn weights(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = manifest_path(cfg)?;
    let (_, samples) = load_manifest(&manifest)?;
    let prepared = prepare_samples(&samples, cfg.model.scale_factor)?;
    let refs: Vec<&PreparedSample> = prepared.iter().collect();
    let w = training_weights(&refs, &cfg.loss, cfg.seed)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("class_weights.txt");
    w.write_file(&path)?;
    print!("{}", w.to_text());
    Ok(())
}

fn fold_dir(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold{fold}"))
}

fn train(cfg: &mut RunConfig) -> Result<(), CliError> {
    let manifest = absolute(&manifest_path(cfg)?)?;
    cfg.data.manifest = Some(manifest.clone());
    let (_, samples) = load_manifest(&manifest)?;
    let prepared = prepare_samples(&samples, cfg.model.scale_factor)?;
    let out = cfg.output_dir.clone();
    cfg.echo(&out)?;
    let result = run_cross_validation(
        &prepared,
        cfg.data.folds,
        &cfg.model,
        &cfg.loss,
        &cfg.train_config(),
        thread_count()?,
    )?;
    for f in &result.folds {
        let dir = fold_dir(&out, f.fold_id);
        std::fs::create_dir_all(&dir)?;
        write_checkpoint(BufWriter::new(File::create(dir.join("checkpoint.mdb"))?), &f.checkpoint)?;
        std::fs::write(dir.join("log.csv"), f.log_text())?;
        f.weights.write_file(&dir.join("class_weights.txt"))?;
        println!(
            "fold {}: {} steps, best epoch {}, SC IoU {:.1}, SSC mIoU {:.1}",
            f.fold_id,
            f.step_losses.len(),
            f.state.best_epoch.map_or("-".to_string(), |e| e.to_string()),
            f.report.sc_iou,
            f.report.ssc_miou
        );
    }
    write_reports_csv(&out.join("reports.csv"), &result.reports())?;
    println!("SSC mIoU {}  SC IoU {}", result.summary.ssc_miou, result.summary.sc_iou);
    Ok(())
}

fn eval(run: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(&run.join("config.toml"))?;
    cfg.validate()?;
    let manifest = manifest_path(&cfg)?;
    let (_, samples) = load_manifest(&manifest)?;
    let prepared = prepare_samples(&samples, cfg.model.scale_factor)?;
    let train_cfg = cfg.train_config();
    let splits = kfold_split(prepared.len(), cfg.data.folds, train_cfg.seed)?;
    let mut reports: Vec<EvalReport> = Vec::with_capacity(splits.len());
    for (fold, (_, val)) in splits.iter().enumerate() {
        let ckpt = read_checkpoint(BufReader::new(File::open(fold_dir(run, fold).join("checkpoint.mdb"))?))?;
        let model = MdbNet::new(cfg.model.clone(), 0)?;
        model.load_state(&ckpt.params)?;
        let val: Vec<&PreparedSample> = val.iter().map(|&i| &prepared[i]).collect();
        let r = evaluate(&model, &val, fold, train_cfg.batch_size)?;
        println!("fold {fold}: SC IoU {:.1}, SSC mIoU {:.1}", r.sc_iou, r.ssc_miou);
        reports.push(r);
    }
    write_reports_csv(&run.join("reports.csv"), &reports)?;
    Ok(())
}

fn gradcheck(seed: u64) -> Result<(), CliError> {
    let results = run_gradient_suite(seed).map_err(|e| CliError::Internal(e.to_string()))?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for r in &results {
        let ok = r.max_relative_error < GRADCHECK_TOLERANCE;
        failed += usize::from(!ok);
        println!(
            "{:width$}  {:.3e}  {}",
            r.name,
            r.max_relative_error,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed > 0 {
        return Err(CliError::Validation(format!(
            "{failed} of {} checks exceed {GRADCHECK_TOLERANCE:e}",
            results.len()
        )));
    }
    Ok(())
}

fn report(runs: &[PathBuf], labels: &[String], ablation: Option<&str>) -> Result<(), CliError> {
    if !labels.is_empty() && labels.len() != runs.len() {
        return Err(CliError::Validation(format!(
            "{} labels for {} runs",
            labels.len(),
            runs.len()
        )));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let reports = read_reports_csv(&run.join("reports.csv"))?;
        let name = labels.get(i).cloned().unwrap_or_else(|| {
            run.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| run.display().to_string())
        });
        rows.push((name, aggregate_folds(&reports)?));
    }
    let table = match ablation {
        Some(col) => format_ablation_table(col, &rows),
        None => format_results_table(&rows),
    };
    print!("{table}");
    Ok(())
}
