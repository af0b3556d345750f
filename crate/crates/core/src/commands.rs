//! Command-line subcommands. Every subcommand reads JSON/CSV inputs, writes
//! JSON/CSV outputs, and returns an [`Error`] whose
//! [`is_usage`](Error::is_usage) decides the exit code.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data_io::{
    compute_band_means, generate_classification, generate_regression, generate_shared_shapes, generate_synthetic,
    load_class_labels, load_cube, load_patch_split, load_patches, load_pixel_split, load_targets, random_partition,
    write_class_labels, write_cube, write_patch_split, write_patches, write_pixel_split, write_rows, write_targets,
    BandMeans, PatchSplit, PixelSplit, SpectralCube,
};
use crate::encoder::{load_checkpoint, save_checkpoint, CheckpointManifest};
use crate::error::{Error, Result};
use crate::experiment::{
    config_hash, evaluate_classification, evaluate_regression, small_data_sweep, LabeledFeatures, PatchRegression,
};
use crate::metrics::hyperview_score;
use crate::model::{SpectralModel, Variant};
use crate::predictor::{all_pixels, average_per_patch, extract_latents, write_latents_csv, ForestParams};
use crate::renderer::{index_coords, render, render_components};
use crate::trainer::{TrainConfig, Trainer};

/// Environment variable that fixes the worker thread count.
pub const THREADS_ENV: &str = "SKEWMIX_THREADS";
pub const DEFAULT_SYNTHETIC_BANDS: usize = 32;

#[derive(Debug, Parser)]
#[command(name = "skewmix", version, about = "Skew-normal spectral autoencoder toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the autoencoder on a cube or a synthetic dataset.
    Train(TrainArgs),
    /// Classification with forests on the latent, repeated over seeds.
    EvalCls(ClsArgs),
    /// Patch-averaged latent regression scored against mean baselines.
    EvalReg(RegArgs),
    /// Classification on stratified subsets of the training split.
    SweepSmallData(SweepArgs),
    /// Per-component curves, reconstructions and band means for chosen pixels.
    DumpComponents(DumpArgs),
    /// Latent features as CSV, optionally averaged per patch.
    ExportLatents(ExportArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

/// `key=value` pairs, e.g. `pixels=5000 k=3 seed=1`.
fn parse_pairs(items: &[String]) -> Result<BTreeMap<String, String>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("expected key=value, got {s}")))
        })
        .collect()
}

fn take<T: std::str::FromStr>(pairs: &mut BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match pairs.remove(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("cannot parse {key}={v}"))),
    }
}

fn no_leftovers(pairs: &BTreeMap<String, String>) -> Result<()> {
    match pairs.keys().next() {
        Some(k) => Err(Error::Config(format!("unknown key {k}"))),
        None => Ok(()),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} entry {p}")))
        })
        .collect()
}

/// Per-pixel synthetic data drawn from the documented parameter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub pixels: usize,
    pub bands: usize,
    pub k: usize,
    pub seed: u64,
    pub noise: f64,
    /// Share μ, σ, α across pixels (only the scales vary).
    #[serde(default)]
    pub shared_shapes: bool,
}

impl SyntheticSpec {
    pub fn parse(items: &[String]) -> Result<Self> {
        let mut p = parse_pairs(items)?;
        let spec = SyntheticSpec {
            pixels: take(&mut p, "pixels", 5000)?,
            bands: take(&mut p, "bands", DEFAULT_SYNTHETIC_BANDS)?,
            k: take(&mut p, "k", 3)?,
            seed: take(&mut p, "seed", 0)?,
            noise: take(&mut p, "noise", 0.0)?,
            shared_shapes: take(&mut p, "shared", false)?,
        };
        no_leftovers(&p)?;
        Ok(spec)
    }

    pub fn generate(&self) -> Result<SpectralCube> {
        let gen = if self.shared_shapes {
            generate_shared_shapes
        } else {
            generate_synthetic
        };
        gen(self.seed, self.pixels, self.bands, self.k, self.noise)
            .map(|(cube, _)| cube)
            .map_err(|e| match e {
                Error::InvalidParameter(m) => Error::Config(m),
                other => other,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Cube(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    /// Pixel split CSV; training and band means then use its train pixels.
    #[serde(default)]
    pub split: Option<PathBuf>,
    pub k: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

/// Partial [`RunConfig`] as read from `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    data: Option<DataSource>,
    split: Option<PathBuf>,
    k: Option<usize>,
    #[serde(default)]
    train: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cube header (JSON).
    #[arg(long, conflicts_with = "synthetic")]
    pub cube: Option<PathBuf>,
    /// Synthetic data as key=value pairs: pixels, bands, k, seed, noise, shared.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    pub synthetic: Option<Vec<String>>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Number of components (defaults to the synthetic k).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden widths, e.g. `512,1024,512,256`.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Checkpoint directory or manifest to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let file: RunConfigFile = match &self.config {
            Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => RunConfigFile::default(),
        };
        let mut train: TrainConfig = serde_json::from_value(serde_json::Value::Object(file.train))
            .map_err(|e| Error::Config(format!("train section: {e}")))?;
        let data = match (&self.cube, &self.synthetic) {
            (Some(c), _) => DataSource::Cube(c.clone()),
            (None, Some(items)) => DataSource::Synthetic(SyntheticSpec::parse(items)?),
            (None, None) => file
                .data
                .ok_or_else(|| Error::Config("give --cube, --synthetic, or data in --config".into()))?,
        };
        let k = match (self.k, file.k, &data) {
            (Some(k), _, _) | (None, Some(k), _) => k,
            (None, None, DataSource::Synthetic(s)) => s.k,
            (None, None, DataSource::Cube(_)) => return Err(Error::Config("--k is required for cube input".into())),
        };
        if let Some(v) = self.variant {
            train.variant = v;
        }
        if let Some(v) = self.epochs {
            train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            train.patience = v;
        }
        if let Some(v) = self.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = self.lr {
            train.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            train.weight_decay = v;
        }
        if let Some(v) = self.val_fraction {
            train.validation_fraction = v;
        }
        if let Some(v) = self.seed {
            train.seed = v;
        }
        if let Some(h) = &self.hidden {
            let w: Vec<usize> = parse_list(h, "hidden width")?;
            train.hidden = w
                .try_into()
                .map_err(|_| Error::Config("--hidden needs exactly four widths".into()))?;
        }
        train.validate()?;
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(RunConfig {
            data,
            split: self.split.clone().or(file.split),
            k,
            train,
            resume: self.resume.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub parameter_count: usize,
    pub config_hash: String,
}

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const BAND_MEANS_FILE: &str = "band_means.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
/// Synthetic training data is saved next to the run under this name.
pub const SYNTHETIC_CUBE_FILE: &str = "cube.json";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let cube = match &config.data {
        DataSource::Cube(p) => load_cube(p)?,
        DataSource::Synthetic(s) => s.generate()?,
    };
    let train_pixels: Option<Vec<usize>> = match &config.split {
        Some(p) => Some(load_pixel_split(p, cube.height(), cube.width())?.train),
        None => None,
    };
    let mask = match &train_pixels {
        Some(px) => PixelSplit::new(px.clone(), vec![])?.train_mask(cube.pixels()),
        None => vec![true; cube.pixels()],
    };
    let means = compute_band_means(&cube, &mask)?;
    let resume = match &config.resume {
        Some(p) => {
            let (model, manifest) = load_checkpoint(p)?;
            Some((model, manifest.epoch))
        }
        None => None,
    };

    let mut trainer = Trainer::new(config.train.clone(), config.k);
    if let Some(px) = &train_pixels {
        trainer = trainer.pixels(px);
    }
    if let Some((model, epoch)) = resume {
        trainer = trainer.resume(model, epoch);
    }
    let outcome = trainer.run(&cube, &means)?;

    create_dir(out)?;
    let hash = config_hash(config)?;
    save_checkpoint(&outcome.model, config.train.seed, outcome.log.best_epoch, out.join(CHECKPOINT_DIR))?;
    write_json(&out.join(BAND_MEANS_FILE), &means)?;
    outcome.log.write_csv(out.join(TRAIN_LOG_FILE))?;
    write_json(&out.join(CONFIG_FILE), config)?;
    if matches!(config.data, DataSource::Synthetic(_)) {
        write_cube(&cube, out.join(SYNTHETIC_CUBE_FILE))?;
    }
    let summary = TrainSummary {
        best_epoch: outcome.log.best_epoch,
        best_val_loss: outcome.log.best_val_loss,
        epochs_run: outcome.log.records.last().map_or(0, |r| r.epoch),
        stopped_early: outcome.log.stopped_early,
        parameter_count: outcome.model.parameter_count(),
        config_hash: hash,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Where to find a trained model and its band means.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Output directory of `train`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint directory or manifest (overrides the run's).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Band means JSON (overrides the run's).
    #[arg(long)]
    pub means: Option<PathBuf>,
}

impl ModelArgs {
    pub fn load(&self) -> Result<(SpectralModel<f32>, CheckpointManifest, BandMeans)> {
        let ckpt = self
            .checkpoint
            .clone()
            .or_else(|| self.run.as_ref().map(|r| r.join(CHECKPOINT_DIR)))
            .ok_or_else(|| Error::Config("give --run or --checkpoint".into()))?;
        let means_path = self
            .means
            .clone()
            .or_else(|| self.run.as_ref().map(|r| r.join(BAND_MEANS_FILE)))
            .ok_or_else(|| Error::Config("give --run or --means".into()))?;
        let (model, manifest) = load_checkpoint(&ckpt)?;
        let means: BandMeans = serde_json::from_str(&read_text(&means_path)?)?;
        if means.len() != model.bands() {
            return Err(Error::Shape(format!(
                "band means have {} entries, model expects {} bands",
                means.len(),
                model.bands()
            )));
        }
        Ok((model, manifest, means))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 200)]
    pub trees: usize,
    #[arg(long, default_value_t = 16)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 2)]
    pub min_leaf: usize,
}

impl ForestArgs {
    pub fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.trees,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_leaf,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ClsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub cube: PathBuf,
    /// `row,col,class` CSV.
    #[arg(long)]
    pub labels: PathBuf,
    /// `row,col,split` CSV.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "1,2,3,4,5")]
    pub seeds: String,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cls: ClsArgs,
    #[arg(long, default_value = "0.5,0.1,0.05,0.01")]
    pub fractions: String,
}

fn labeled_features(args: &ClsArgs) -> Result<(LabeledFeatures, String)> {
    let (model, _, means) = args.model.load()?;
    let cube = load_cube(&args.cube)?;
    let labels = load_class_labels(&args.labels, cube.height(), cube.width())?;
    let split = load_pixel_split(&args.split, cube.height(), cube.width())?;
    let features = extract_latents(&model, &cube, &means, &all_pixels(cube.height(), cube.width()))?;
    let data = LabeledFeatures::from_split(&features, &labels, &split.train, &split.test)?;
    #[derive(Serialize)]
    struct Key<'a> {
        cube: &'a Path,
        labels: &'a Path,
        split: &'a Path,
        forest: &'a ForestArgs,
    }
    let hash = config_hash(&Key {
        cube: &args.cube,
        labels: &args.labels,
        split: &args.split,
        forest: &args.forest,
    })?;
    Ok((data, hash))
}

pub fn cmd_eval_classification(args: &ClsArgs) -> Result<crate::experiment::ExperimentManifest> {
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let (data, hash) = labeled_features(args)?;
    let (manifest, reports) = evaluate_classification(&data, &args.forest.params(), &seeds, &hash)?;
    create_dir(&args.out)?;
    write_json(&args.out.join("manifest.json"), &manifest)?;
    write_json(&args.out.join("reports.json"), &reports)?;
    let mut text = manifest.table();
    if let Some(last) = reports.last() {
        text.push_str("\nlast seed:\n");
        text.push_str(&last.table());
    }
    fs::write(args.out.join("report.txt"), &text).map_err(|e| Error::io(&args.out, e))?;
    print!("{text}");
    Ok(manifest)
}

pub fn cmd_small_data_sweep(args: &SweepArgs) -> Result<crate::experiment::ExperimentManifest> {
    let seeds: Vec<u64> = parse_list(&args.cls.seeds, "seed")?;
    let fractions: Vec<f64> = parse_list(&args.fractions, "fraction")?;
    let (data, hash) = labeled_features(&args.cls)?;
    let manifest = small_data_sweep(&data, &args.cls.forest.params(), &seeds, &fractions, &hash)?;
    create_dir(&args.cls.out)?;
    write_json(&args.cls.out.join("manifest.json"), &manifest)?;
    print!("{}", manifest.table());
    Ok(manifest)
}

#[derive(Debug, Args)]
pub struct RegArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub cube: PathBuf,
    /// `patch_id,row,col` CSV.
    #[arg(long)]
    pub patches: PathBuf,
    /// `patch_id,<target>...` CSV.
    #[arg(long)]
    pub targets: PathBuf,
    /// `patch_id,split` CSV.
    #[arg(long)]
    pub split: PathBuf,
    /// Fixed baseline MSE per target, comma separated, in target order.
    /// Defaults to the training-mean predictor.
    #[arg(long)]
    pub baselines: Option<String>,
    #[arg(long, default_value = "1,2,3,4,5")]
    pub seeds: String,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval_regression(args: &RegArgs) -> Result<crate::experiment::ExperimentManifest> {
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let (model, _, means) = args.model.load()?;
    let cube = load_cube(&args.cube)?;
    let patches = load_patches(&args.patches, cube.height(), cube.width())?;
    let targets = load_targets(&args.targets)?;
    let split = load_patch_split(&args.split)?;
    let pixels: Vec<(usize, usize)> = patches
        .patches
        .iter()
        .flat_map(|(_, px)| px.iter().map(|&p| cube.pixel_coords(p)))
        .collect();
    let features = extract_latents(&model, &cube, &means, &pixels)?;
    let patch_rows = average_per_patch(&features, &patches, cube.width())?;
    let data = PatchRegression::new(patch_rows, &targets, &split.train, &split.test)?;
    #[derive(Serialize)]
    struct Key<'a> {
        cube: &'a Path,
        patches: &'a Path,
        targets: &'a Path,
        split: &'a Path,
        baselines: &'a Option<String>,
        forest: &'a ForestArgs,
    }
    let hash = config_hash(&Key {
        cube: &args.cube,
        patches: &args.patches,
        targets: &args.targets,
        split: &args.split,
        baselines: &args.baselines,
        forest: &args.forest,
    })?;
    let (mut manifest, mut reports) = evaluate_regression(&data, &args.forest.params(), &seeds, &hash)?;
    if let Some(b) = &args.baselines {
        let base: Vec<f64> = parse_list(b, "baseline")?;
        if base.len() != targets.names.len() {
            return Err(Error::Config(format!(
                "{} baselines for {} targets",
                base.len(),
                targets.names.len()
            )));
        }
        for (run, rep) in manifest.runs.iter_mut().zip(reports.iter_mut()) {
            rep.baseline_mse = base.clone();
            rep.baseline = "supplied".into();
            rep.score = hyperview_score(&rep.mse, &base)?;
            run.metrics.insert("score".into(), rep.score);
        }
        manifest = crate::experiment::ExperimentManifest::new("eval-reg", manifest.runs)?;
    }
    create_dir(&args.out)?;
    write_json(&args.out.join("manifest.json"), &manifest)?;
    write_json(&args.out.join("reports.json"), &reports)?;
    print!("{}", manifest.table());
    Ok(manifest)
}

/// Pixels as `row,col;row,col` or from a CSV with `row,col` columns; all
/// pixels when neither is given.
#[derive(Debug, Args)]
pub struct PixelArgs {
    #[arg(long, conflicts_with = "pixels_file")]
    pub pixels: Option<String>,
    #[arg(long)]
    pub pixels_file: Option<PathBuf>,
}

impl PixelArgs {
    pub fn resolve(&self, cube: &SpectralCube) -> Result<Vec<(usize, usize)>> {
        let list = if let Some(s) = &self.pixels {
            s.split(';')
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    let v: Vec<usize> = parse_list(p, "pixel coordinate")?;
                    match v[..] {
                        [r, c] => Ok((r, c)),
                        _ => Err(Error::Config(format!("pixel {p} must be row,col"))),
                    }
                })
                .collect::<Result<Vec<_>>>()?
        } else if let Some(path) = &self.pixels_file {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
            let mut out = Vec::new();
            for rec in r.deserialize::<(usize, usize)>() {
                out.push(rec?);
            }
            out
        } else {
            all_pixels(cube.height(), cube.width())
        };
        for &(r, c) in &list {
            cube.pixel_index(r, c)?;
        }
        Ok(list)
    }
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub cube: PathBuf,
    #[command(flatten)]
    pub pixels: PixelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `components.csv`, `reconstruction.csv` and `band_means.csv`.
/// Values are signed and centred; add the band means for absolute curves.
pub fn cmd_dump_components(args: &DumpArgs) -> Result<usize> {
    let (model, _, means) = args.model.load()?;
    let cube = load_cube(&args.cube)?;
    if args.pixels.pixels.is_none() && args.pixels.pixels_file.is_none() {
        return Err(Error::Config("give --pixels or --pixels-file".into()));
    }
    let pixels = args.pixels.resolve(&cube)?;
    let coords = index_coords(cube.bands());
    let features = extract_latents(&model, &cube, &means, &pixels)?;
    let mut comp_rows = Vec::new();
    let mut recon_rows = Vec::new();
    for (i, &(r, c)) in pixels.iter().enumerate() {
        let params = crate::renderer::ComponentParams::from_flat(features.row(i))?;
        for (j, curve) in render_components(&params, &coords)?.iter().enumerate() {
            for (b, v) in curve.values.iter().enumerate() {
                comp_rows.push(vec![r.to_string(), c.to_string(), j.to_string(), coords[b].to_string(), v.to_string()]);
            }
        }
        for (b, v) in render(&params, &coords)?.values.iter().enumerate() {
            recon_rows.push(vec![r.to_string(), c.to_string(), coords[b].to_string(), v.to_string()]);
        }
    }
    create_dir(&args.out)?;
    write_rows(
        args.out.join("components.csv"),
        &["pixel_row", "pixel_col", "component_index", "band_coord", "value"],
        &comp_rows,
    )?;
    write_rows(
        args.out.join("reconstruction.csv"),
        &["pixel_row", "pixel_col", "band_coord", "value"],
        &recon_rows,
    )?;
    let mean_rows: Vec<Vec<String>> = coords
        .iter()
        .zip(&means.means)
        .map(|(b, m)| vec![b.to_string(), m.to_string()])
        .collect();
    write_rows(args.out.join("band_means.csv"), &["band_coord", "mean"], &mean_rows)?;
    Ok(comp_rows.len())
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub cube: PathBuf,
    #[command(flatten)]
    pub pixels: PixelArgs,
    /// Average rows per patch (`patch_id,row,col` CSV).
    #[arg(long, conflicts_with_all = ["pixels", "pixels_file"])]
    pub patches: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export_latents(args: &ExportArgs) -> Result<usize> {
    let (model, _, means) = args.model.load()?;
    let cube = load_cube(&args.cube)?;
    let features = match &args.patches {
        Some(p) => {
            let patches = load_patches(p, cube.height(), cube.width())?;
            let pixels: Vec<(usize, usize)> = patches
                .patches
                .iter()
                .flat_map(|(_, px)| px.iter().map(|&q| cube.pixel_coords(q)))
                .collect();
            let f = extract_latents(&model, &cube, &means, &pixels)?;
            average_per_patch(&f, &patches, cube.width())?
        }
        None => extract_latents(&model, &cube, &means, &args.pixels.resolve(&cube)?)?,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_latents_csv(&features, &args.out)?;
    Ok(features.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    /// Independent parameters per pixel.
    Plain,
    /// Shared μ, σ, α; per-pixel scales.
    Shared,
    /// Class prototypes with per-pixel jitter; labels and a pixel split.
    Classification,
    /// Patch prototypes with jitter; patches, targets and a patch split.
    Regression,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "plain")]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings: pixels, bands, k, seed, noise, classes,
    /// per_class, patches, per_patch, jitter, train_fraction.
    #[arg(value_name = "KEY=VALUE")]
    pub params: Vec<String>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut p = parse_pairs(&args.params)?;
    let bands = take(&mut p, "bands", DEFAULT_SYNTHETIC_BANDS)?;
    let k = take(&mut p, "k", 3usize)?;
    let seed = take(&mut p, "seed", 0u64)?;
    let noise = take(&mut p, "noise", 0.0f64)?;
    create_dir(&args.out)?;
    let header = args.out.join("cube.json");
    let config_err = |e: Error| match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    };
    match args.kind {
        SynthKind::Plain | SynthKind::Shared => {
            let pixels = take(&mut p, "pixels", 5000usize)?;
            no_leftovers(&p)?;
            let spec = SyntheticSpec {
                pixels,
                bands,
                k,
                seed,
                noise,
                shared_shapes: args.kind == SynthKind::Shared,
            };
            write_cube(&spec.generate()?, &header)?;
        }
        SynthKind::Classification => {
            let classes = take(&mut p, "classes", 3usize)?;
            let per_class = take(&mut p, "per_class", 200usize)?;
            let jitter = take(&mut p, "jitter", 0.05f64)?;
            let frac = take(&mut p, "train_fraction", 0.5f64)?;
            no_leftovers(&p)?;
            let data = generate_classification(seed, classes, per_class, bands, k, jitter, noise).map_err(config_err)?;
            write_cube(&data.cube, &header)?;
            write_class_labels(&data.labels, args.out.join("labels.csv"))?;
            let (train, test) = random_partition(data.cube.pixels(), frac, seed ^ 0x5917);
            write_pixel_split(&PixelSplit::new(train, test)?, data.cube.width(), args.out.join("split.csv"))?;
        }
        SynthKind::Regression => {
            let patches = take(&mut p, "patches", 60usize)?;
            let per_patch = take(&mut p, "per_patch", 20usize)?;
            let jitter = take(&mut p, "jitter", 0.05f64)?;
            let frac = take(&mut p, "train_fraction", 0.7f64)?;
            no_leftovers(&p)?;
            let data = generate_regression(seed, patches, per_patch, bands, k, jitter, noise).map_err(config_err)?;
            write_cube(&data.cube, &header)?;
            write_patches(&data.patches, data.cube.width(), args.out.join("patches.csv"))?;
            write_targets(&data.targets, args.out.join("targets.csv"))?;
            let ids: Vec<String> = data.patches.patches.iter().map(|(id, _)| id.clone()).collect();
            let (train, test) = random_partition(ids.len(), frac, seed ^ 0x5917);
            let split = PatchSplit {
                train: train.iter().map(|&i| ids[i].clone()).collect(),
                test: test.iter().map(|&i| ids[i].clone()).collect(),
            };
            write_patch_split(&split, args.out.join("patch_split.csv"))?;
        }
    }
    Ok(())
}

/// Sizes the global worker pool from [`THREADS_ENV`] if set.
pub fn configure_threads() -> Result<()> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v} is not a positive integer")))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))
        }
        Err(_) => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let s = cmd_train(&config, &args.out)?;
            println!(
                "best val loss {:.6e} at epoch {} ({} epochs, {} parameters) -> {}",
                s.best_val_loss,
                s.best_epoch,
                s.epochs_run,
                s.parameter_count,
                args.out.display()
            );
        }
        Command::EvalCls(args) => {
            cmd_eval_classification(&args)?;
        }
        Command::EvalReg(args) => {
            cmd_eval_regression(&args)?;
        }
        Command::SweepSmallData(args) => {
            cmd_small_data_sweep(&args)?;
        }
        Command::DumpComponents(args) => {
            let n = cmd_dump_components(&args)?;
            println!("{n} component rows -> {}", args.out.display());
        }
        Command::ExportLatents(args) => {
            let n = cmd_export_latents(&args)?;
            println!("{n} rows -> {}", args.out.display());
        }
        Command::Synth(args) => {
            cmd_synth(&args)?;
            println!("wrote {}", args.out.display());
        }
    }
    Ok(())
}
