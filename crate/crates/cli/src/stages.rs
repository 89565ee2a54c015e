//! The pipeline stages. Each reads upstream manifests, refuses missing or
//! stale inputs, and writes its outputs followed by its own manifest.

use std::fs;
use std::path::{Path, PathBuf};

use geoprior_core::geodesic::SeedPolicies;
use geoprior_core::io::{load_volume, save_volume};
use geoprior_core::metrics::{score_labels, summarize, write_csv, ImageScores};
use geoprior_core::noise::{synthesize_noisy, NoiseLevel, NoiseSpec};
use geoprior_core::synth::{label_file_name, make_dataset, DatasetEntry, DatasetManifest, PhantomSpec, Split};
use geoprior_core::{LabelMap, MultiChannelMap, Volume};
use geoprior_nn::{Gae, GaeConfig, Real, Segmentor, SegmentorConfig};
use geoprior_train::data::{prior_maps, EvalExample, PriorExample, SegExample};
use geoprior_train::eval::predict_labels;
use geoprior_train::gae::GaeEpoch;
use geoprior_train::logs::{write_gae_log, write_segmentor_log};
use geoprior_train::segment::SegEpoch;
use geoprior_train::{derive_seed, train_gae, train_segmentor, Control, LabelSource, PriorMode, TrainConfig};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::manifest::{load_dataset, load_stage, require_same, Input, StageManifest, MANIFEST};
use crate::pool::map_ordered;
use crate::scores::write_scores;
use crate::svg::{line_chart, Series};

pub const CHECKPOINTS: &str = "checkpoints";
pub const LOG: &str = "log.csv";
pub const UPPER_BOUNDARY: &str = "upper_boundary.csv";
pub const UPPER_BOUNDARY_SCORES: &str = "upper_boundary_scores.csv";
pub const SCORES: &str = "scores.csv";
pub const SUMMARY: &str = "summary.csv";
pub const UPPER_BOUNDARY_METHOD: &str = "Upper boundary";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Two dense blocks of two layers, growth 4.
    Toy,
    /// Four dense blocks of four layers, growth 16.
    Full,
}

impl Arch {
    pub fn segmentor(self, input: [usize; 3]) -> SegmentorConfig {
        match self {
            Arch::Toy => SegmentorConfig { input, ..SegmentorConfig::toy() },
            Arch::Full => SegmentorConfig::full(input),
        }
    }

    pub fn gae(self, input: [usize; 3]) -> GaeConfig {
        let seg = self.segmentor(input);
        GaeConfig {
            input,
            blocks: seg.blocks,
            dense: seg.dense,
            ..GaeConfig::toy()
        }
    }
}

fn input_shape(ds: &DatasetManifest) -> [usize; 3] {
    let d = ds.spec.dims;
    [d.nz, d.ny, d.nx]
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // An interrupted rerun must not leave the old manifest vouching for
    // half-written files.
    let m = dir.join(MANIFEST);
    if m.exists() {
        fs::remove_file(&m).map_err(|e| Error::io(&m, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_value<S: Serialize>(v: &S) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn from_value<D: for<'de> Deserialize<'de>>(v: &Value, what: &Path) -> Result<D> {
    serde_json::from_value(v.clone()).map_err(|e| Error::json(what.join(MANIFEST), e))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub n: usize,
    pub split: [usize; 3],
    pub seed: u64,
    pub out: PathBuf,
}

pub fn synth(a: &SynthArgs) -> Result<DatasetManifest> {
    if a.split.iter().sum::<usize>() != a.n {
        return Err(Error::Config(format!("split {:?} does not sum to --n {}", a.split, a.n)));
    }
    if a.split.iter().any(|&s| s == 0) {
        return Err(Error::Config("every split needs at least one image".into()));
    }
    let spec = PhantomSpec { seed: a.seed, ..PhantomSpec::default() };
    let m = make_dataset(&spec, a.n, a.split, &a.out)?;
    info!("synth: {} phantoms in {}", a.n, a.out.display());
    Ok(m)
}

// ---------------------------------------------------------------- labels

/// Training labels: the clean dataset labels or a `corrupt` output.
#[derive(Debug, Clone)]
pub struct Labels {
    pub source: LabelSource,
    data: PathBuf,
    corrupt: Option<PathBuf>,
    pub input: Input,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptConfig {
    pub level: NoiseLevel,
    pub noise: NoiseSpec,
}

impl Labels {
    pub fn resolve(data: &Path, dataset: &Input, corrupt: Option<&Path>) -> Result<Labels> {
        match corrupt {
            None => Ok(Labels {
                source: LabelSource::Clean,
                data: data.to_path_buf(),
                corrupt: None,
                input: dataset.clone(),
            }),
            Some(dir) => {
                let m = load_stage(dir, "corrupt")?;
                require_same(m.input("synth"), dataset, &format!("noisy labels in {}", dir.display()))?;
                let cfg: CorruptConfig = from_value(&m.config, dir)?;
                let source = match cfg.level {
                    NoiseLevel::L1 => LabelSource::L1,
                    NoiseLevel::L2 => LabelSource::L2,
                };
                Ok(Labels {
                    source,
                    data: data.to_path_buf(),
                    corrupt: Some(dir.to_path_buf()),
                    input: m.as_input(dir),
                })
            }
        }
    }

    /// The labels a prior-map or autoencoder stage was built from.
    fn recorded(data: &Path, dataset: &Input, m: &StageManifest, what: &Path) -> Result<Labels> {
        let labels = Labels::resolve(data, dataset, m.input("corrupt").map(|i| Path::new(&i.path)))?;
        require_same(m.input(&labels.input.stage), &labels.input, &format!("{}", what.display()))?;
        Ok(labels)
    }

    pub fn load(&self, e: &DatasetEntry) -> Result<LabelMap> {
        Ok(match &self.corrupt {
            Some(dir) => load_volume(dir.join(label_file_name(e.index)))?,
            None => load_volume(self.data.join(&e.label_path))?,
        })
    }
}

fn load_image(data: &Path, e: &DatasetEntry) -> Result<Volume> {
    Ok(load_volume(data.join(&e.image_path))?)
}

fn load_clean(data: &Path, e: &DatasetEntry) -> Result<LabelMap> {
    Ok(load_volume(data.join(&e.label_path))?)
}

fn entries(ds: &DatasetManifest, split: Split) -> Vec<DatasetEntry> {
    ds.entries(split).cloned().collect()
}

// ---------------------------------------------------------------- corrupt

#[derive(Debug, Clone)]
pub struct CorruptArgs {
    pub data: PathBuf,
    pub level: NoiseLevel,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn corrupt(a: &CorruptArgs) -> Result<StageManifest> {
    let (ds, ds_in) = load_dataset(&a.data)?;
    let noise = NoiseSpec {
        rng_seed: derive_seed(a.seed, &format!("corrupt-{}", a.level.name()), 0),
        ..NoiseSpec::for_level(a.level)
    };
    let cfg = CorruptConfig { level: a.level, noise };
    let manifest = StageManifest::new("corrupt", Some(a.seed), to_value(&cfg), vec![ds_in]);
    create_dir(&a.out)?;
    let results = map_ordered(&ds.entries, |e| {
        let clean = load_clean(&a.data, e)?;
        let noisy = synthesize_noisy(&clean, &noise.for_image(e.index))?;
        save_volume(&noisy, a.out.join(label_file_name(e.index)))?;
        let score = match e.split {
            Split::Test => Some(score_labels(&noisy, &clean)?),
            _ => None,
        };
        Ok((e.index, score))
    })?;
    let test: Vec<(u64, ImageScores)> = results.iter().filter_map(|&(i, s)| s.map(|s| (i, s))).collect();
    let rows = summarize(UPPER_BOUNDARY_METHOD, a.level.name(), &test.iter().map(|t| t.1).collect::<Vec<_>>())?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    write_file(&a.out.join(UPPER_BOUNDARY), buf)?;
    write_scores(&a.out.join(UPPER_BOUNDARY_SCORES), &test)?;
    let mut files: Vec<String> = ds.entries.iter().map(|e| label_file_name(e.index)).collect();
    files.extend([UPPER_BOUNDARY.to_string(), UPPER_BOUNDARY_SCORES.to_string()]);
    info!("corrupt: {} labels at {} in {}, test DI vs clean {:.4}", files.len() - 2, a.level.name(), a.out.display(), rows[3].di_mean);
    manifest.write(&a.out, files)
}

// ---------------------------------------------------------------- geodesic

pub fn map_file_name(index: u64) -> String {
    format!("maps_{index:04}.gpv")
}

#[derive(Debug, Clone)]
pub struct GeodesicArgs {
    pub data: PathBuf,
    /// A `corrupt` output; clean dataset labels if absent.
    pub labels: Option<PathBuf>,
    pub prior: PriorMode,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapsConfig {
    pub prior: PriorMode,
    pub policies: SeedPolicies,
}

/// Prior maps for the training and validation images.
pub fn geodesic(a: &GeodesicArgs) -> Result<StageManifest> {
    if !a.prior.uses_gae() {
        return Err(Error::Config("prior maps need --prior binary or geodesic".into()));
    }
    let (ds, ds_in) = load_dataset(&a.data)?;
    let labels = Labels::resolve(&a.data, &ds_in, a.labels.as_deref())?;
    let cfg = MapsConfig {
        prior: a.prior,
        policies: SeedPolicies::default(),
    };
    let mut inputs = vec![ds_in];
    if labels.corrupt.is_some() {
        inputs.push(labels.input.clone());
    }
    let manifest = StageManifest::new("geodesic", None, to_value(&cfg), inputs);
    create_dir(&a.out)?;
    let todo: Vec<DatasetEntry> = ds.entries.iter().filter(|e| e.split != Split::Test).cloned().collect();
    let files = map_ordered(&todo, |e| {
        let l = labels.load(e)?;
        let maps = prior_maps(&l, a.prior, &cfg.policies)?.expect("prior mode has maps");
        let name = map_file_name(e.index);
        save_volume(&maps, a.out.join(&name))?;
        Ok(name)
    })?;
    info!("geodesic: {} {} maps from {} labels in {}", files.len(), a.prior, labels.source.name(), a.out.display());
    // Channel roles live in a sidecar next to each volume.
    let files = files.into_iter().flat_map(|f| [format!("{f}.json"), f]).collect();
    manifest.write(&a.out, files)
}

/// A `geodesic` output with the labels it was computed from.
struct Maps {
    dir: PathBuf,
    cfg: MapsConfig,
    labels: Labels,
    input: Input,
}

impl Maps {
    fn resolve(dir: &Path, data: &Path, ds_in: &Input) -> Result<Maps> {
        let m = load_stage(dir, "geodesic")?;
        require_same(m.input("synth"), ds_in, &format!("prior maps in {}", dir.display()))?;
        let labels = Labels::recorded(data, ds_in, &m, dir)?;
        Ok(Maps {
            dir: dir.to_path_buf(),
            cfg: from_value(&m.config, dir)?,
            labels,
            input: m.as_input(dir),
        })
    }

    fn load(&self, e: &DatasetEntry) -> Result<MultiChannelMap> {
        Ok(load_volume(self.dir.join(map_file_name(e.index)))?)
    }
}

// ---------------------------------------------------------------- training

/// Optimizer and schedule flags shared by both training stages.
#[derive(Debug, Clone)]
pub struct TrainOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub lambda_gae: f64,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub arch: Arch,
    pub dtype: Dtype,
    /// Retrain even if an identical run is already on disk.
    pub force: bool,
}

impl Default for TrainOpts {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainOpts {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            patience: t.patience,
            lambda_gae: t.lambda_gae,
            max_steps: t.max_steps,
            seed: t.seed,
            arch: Arch::Toy,
            dtype: Dtype::F64,
            force: false,
        }
    }
}

impl TrainOpts {
    fn config(&self, prior: PriorMode, labels: LabelSource) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lambda_gae: self.lambda_gae,
            patience: self.patience,
            seed: self.seed,
            prior,
            labels,
            max_steps: self.max_steps,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaeRunConfig {
    pub train: TrainConfig,
    pub arch: GaeConfig,
    pub dtype: Dtype,
}

/// Everything a segmentor run directory was produced from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: String,
    pub noise_level: String,
    pub train: TrainConfig,
    pub arch: SegmentorConfig,
    pub dtype: Dtype,
}

#[derive(Debug, Clone)]
pub struct GaeArgs {
    pub data: PathBuf,
    pub maps: PathBuf,
    pub train: TrainOpts,
    pub out: PathBuf,
}

pub fn train_gae_stage(a: &GaeArgs) -> Result<StageManifest> {
    let (ds, ds_in) = load_dataset(&a.data)?;
    let maps = Maps::resolve(&a.maps, &a.data, &ds_in)?;
    let cfg = GaeRunConfig {
        train: a.train.config(maps.cfg.prior, maps.labels.source)?,
        arch: a.train.arch.gae(input_shape(&ds)),
        dtype: a.train.dtype,
    };
    cfg.arch.validate().map_err(|e| Error::Config(e.to_string()))?;
    let mut inputs = vec![ds_in, maps.input.clone()];
    if maps.labels.corrupt.is_some() {
        inputs.push(maps.labels.input.clone());
    }
    let manifest = StageManifest::new("train-gae", Some(cfg.train.seed), to_value(&cfg), inputs);
    if !a.train.force && manifest.is_cached(&a.out) {
        info!("train-gae: {} is up to date", a.out.display());
        return load_stage(&a.out, "train-gae");
    }
    let load = |split| -> Result<Vec<PriorExample>> {
        entries(&ds, split)
            .iter()
            .map(|e| Ok(PriorExample { maps: maps.load(e)?, labels: maps.labels.load(e)? }))
            .collect()
    };
    let (train, val) = (load(Split::Train)?, load(Split::Val)?);
    create_dir(&a.out)?;
    match cfg.dtype {
        Dtype::F32 => run_gae::<f32>(&train, &val, &cfg, &a.out)?,
        Dtype::F64 => run_gae::<f64>(&train, &val, &cfg, &a.out)?,
    }
    manifest.write(&a.out, trained_files())
}

fn trained_files() -> Vec<String> {
    use geoprior_nn::checkpoint::{MANIFEST_FILE, PARAMS_FILE};
    vec![
        format!("{CHECKPOINTS}/{MANIFEST_FILE}"),
        format!("{CHECKPOINTS}/{PARAMS_FILE}"),
        LOG.to_string(),
        "curve.svg".to_string(),
    ]
}

fn run_gae<T: Real>(train: &[PriorExample], val: &[PriorExample], cfg: &GaeRunConfig, out: &Path) -> Result<()> {
    let mut log_epoch = |_: &mut Gae<T>, e: &GaeEpoch| {
        info!("train-gae: epoch {} train L_recon {:.4} val L_recon {:.4}", e.epoch, e.train_l_recon, e.val_l_recon);
        Ok(Control::Continue)
    };
    let trained = train_gae::<T>(train, val, cfg.arch, &cfg.train, &mut log_epoch)?;
    trained.model.save(&out.join(CHECKPOINTS))?;
    let mut buf = Vec::new();
    write_gae_log(&trained.steps, &trained.epochs, &mut buf)?;
    write_file(&out.join(LOG), buf)?;
    let series = [
        Series {
            name: "train".into(),
            points: trained.epochs.iter().map(|e| (e.epoch as f64, e.train_l_recon)).collect(),
        },
        Series {
            name: "validation".into(),
            points: trained.epochs.iter().map(|e| (e.epoch as f64, e.val_l_recon)).collect(),
        },
    ];
    write_file(&out.join("curve.svg"), line_chart("Autoencoder reconstruction", "epoch", "L_recon", &series))?;
    info!("train-gae: best epoch {} of {}", trained.best_epoch, trained.epochs.len());
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SegArgs {
    pub data: PathBuf,
    /// A `corrupt` output; clean dataset labels if absent. In prior modes the
    /// labels come from the autoencoder's inputs and this must agree.
    pub labels: Option<PathBuf>,
    pub prior: PriorMode,
    pub gae: Option<PathBuf>,
    pub train: TrainOpts,
    pub out: PathBuf,
}

/// A `train-gae` output with everything upstream of it.
struct Prior {
    dir: PathBuf,
    maps: Maps,
    input: Input,
}

fn resolve_prior(a: &SegArgs, ds_in: &Input) -> Result<Option<Prior>> {
    let dir = match (a.prior.uses_gae(), &a.gae) {
        (false, None) => return Ok(None),
        (false, Some(_)) => return Err(Error::Config("--gae is only used with --prior binary or geodesic".into())),
        (true, None) => {
            return Err(Error::MissingStage {
                stage: "train-gae",
                detail: format!("--prior {} needs an autoencoder checkpoint; run `geoprior train-gae` and pass --gae DIR", a.prior),
            })
        }
        (true, Some(dir)) => dir,
    };
    let m = load_stage(dir, "train-gae")?;
    require_same(m.input("synth"), ds_in, &format!("autoencoder in {}", dir.display()))?;
    let maps_in = m.input("geodesic").ok_or_else(|| Error::Config(format!("{} records no prior maps", dir.display())))?;
    let maps = Maps::resolve(Path::new(&maps_in.path), &a.data, ds_in)?;
    require_same(Some(maps_in), &maps.input, &format!("autoencoder in {}", dir.display()))?;
    let gcfg: GaeRunConfig = from_value(&m.config, dir)?;
    if gcfg.train.prior != a.prior {
        return Err(Error::Config(format!("autoencoder in {} was trained on {} maps, not {}", dir.display(), gcfg.train.prior, a.prior)));
    }
    if gcfg.dtype != a.train.dtype {
        return Err(Error::Config(format!("autoencoder in {} is {:?}, segmentor is {:?}", dir.display(), gcfg.dtype, a.train.dtype)));
    }
    Ok(Some(Prior {
        dir: dir.clone(),
        maps,
        input: m.as_input(dir),
    }))
}

pub fn train_seg(a: &SegArgs) -> Result<StageManifest> {
    let (ds, ds_in) = load_dataset(&a.data)?;
    let prior = resolve_prior(a, &ds_in)?;
    let labels = match &prior {
        None => Labels::resolve(&a.data, &ds_in, a.labels.as_deref())?,
        Some(p) => {
            if let Some(dir) = &a.labels {
                let given = Labels::resolve(&a.data, &ds_in, Some(dir))?;
                if given.input != p.maps.labels.input {
                    return Err(Error::Config(format!(
                        "--labels {} differs from the labels the autoencoder's maps were built from ({})",
                        dir.display(),
                        p.maps.labels.input.path
                    )));
                }
            }
            p.maps.labels.clone()
        }
    };
    let train = a.train.config(a.prior, labels.source)?;
    let cfg = RunConfig {
        method: a.prior.method().to_string(),
        noise_level: labels.source.name().to_string(),
        train,
        arch: a.train.arch.segmentor(input_shape(&ds)),
        dtype: a.train.dtype,
    };
    cfg.arch.validate().map_err(|e| Error::Config(e.to_string()))?;
    let mut inputs = vec![ds_in];
    if labels.corrupt.is_some() {
        inputs.push(labels.input.clone());
    }
    if let Some(p) = &prior {
        inputs.push(p.maps.input.clone());
        inputs.push(p.input.clone());
    }
    let manifest = StageManifest::new("train-seg", Some(cfg.train.seed), to_value(&cfg), inputs);
    if !a.train.force && manifest.is_cached(&a.out) {
        info!("train-seg: {} is up to date", a.out.display());
        return load_stage(&a.out, "train-seg");
    }
    let train_set = entries(&ds, Split::Train)
        .iter()
        .map(|e| {
            Ok(SegExample {
                image: load_image(&a.data, e)?,
                labels: labels.load(e)?,
                prior: prior.as_ref().map(|p| p.maps.load(e)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let val = eval_examples(&a.data, &ds, Split::Val)?;
    create_dir(&a.out)?;
    let gae_dir = prior.as_ref().map(|p| p.dir.join(CHECKPOINTS));
    match cfg.dtype {
        Dtype::F32 => run_seg::<f32>(&train_set, &val, &cfg, gae_dir.as_deref(), &a.out)?,
        Dtype::F64 => run_seg::<f64>(&train_set, &val, &cfg, gae_dir.as_deref(), &a.out)?,
    }
    let mut files = trained_files();
    files.pop();
    files.extend(["loss.svg".to_string(), "val_dice.svg".to_string()]);
    manifest.write(&a.out, files)
}

fn eval_examples(data: &Path, ds: &DatasetManifest, split: Split) -> Result<Vec<EvalExample>> {
    entries(ds, split)
        .iter()
        .map(|e| Ok(EvalExample { image: load_image(data, e)?, clean: load_clean(data, e)? }))
        .collect()
}

fn run_seg<T: Real>(train: &[SegExample], val: &[EvalExample], cfg: &RunConfig, gae_dir: Option<&Path>, out: &Path) -> Result<()> {
    let mut gae = match gae_dir {
        Some(dir) => {
            let mut g = Gae::<T>::load(dir)?;
            g.store.freeze();
            Some(g)
        }
        None => None,
    };
    let mut log_epoch = |_: &mut Segmentor<T>, e: &SegEpoch| {
        info!("train-seg: epoch {} train L_tot {:.4} val DI {:.4}", e.epoch, e.train_l_tot, e.val_mean());
        Ok(Control::Continue)
    };
    let trained = train_segmentor::<T>(train, val, cfg.arch, &cfg.train, gae.as_mut(), &mut log_epoch)?;
    trained.model.save(&out.join(CHECKPOINTS))?;
    let mut buf = Vec::new();
    write_segmentor_log(&trained.steps, &trained.epochs, &mut buf)?;
    write_file(&out.join(LOG), buf)?;
    let loss = [Series {
        name: "L_tot".into(),
        points: trained.epochs.iter().map(|e| (e.epoch as f64, e.train_l_tot)).collect(),
    }];
    write_file(&out.join("loss.svg"), line_chart("Training loss", "epoch", "mean L_tot", &loss))?;
    let names = ["LV", "RV", "MYO"];
    let mut dice: Vec<Series> = (0..3)
        .map(|k| Series {
            name: names[k].into(),
            points: trained.epochs.iter().map(|e| (e.epoch as f64, e.val_dice[k])).collect(),
        })
        .collect();
    dice.push(Series {
        name: "mean".into(),
        points: trained.epochs.iter().map(|e| (e.epoch as f64, e.val_mean())).collect(),
    });
    write_file(&out.join("val_dice.svg"), line_chart("Validation Dice", "epoch", "DI", &dice))?;
    info!("train-seg: best epoch {} of {}", trained.best_epoch, trained.epochs.len());
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub run: PathBuf,
    /// Defaults to `<run>/eval`.
    pub out: Option<PathBuf>,
    pub batch: usize,
}

impl EvalArgs {
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.run.join("eval"))
    }
}

pub fn eval(a: &EvalArgs) -> Result<StageManifest> {
    if a.batch == 0 {
        return Err(Error::Config("--batch must be positive".into()));
    }
    let run = load_stage(&a.run, "train-seg")?;
    let cfg: RunConfig = from_value(&run.config, &a.run)?;
    let recorded = run.input("synth").ok_or_else(|| Error::Config(format!("{} records no dataset", a.run.display())))?;
    let data = PathBuf::from(&recorded.path);
    let (ds, ds_in) = load_dataset(&data)?;
    require_same(Some(recorded), &ds_in, &format!("run {}", a.run.display()))?;
    let out = a.out_dir();
    let manifest = StageManifest::new("eval", None, to_value(&serde_json::json!({ "batch": a.batch })), vec![ds_in, run.as_input(&a.run)]);
    let test = eval_examples(&data, &ds, Split::Test)?;
    let indices: Vec<u64> = ds.entries(Split::Test).map(|e| e.index).collect();
    let ckpt = a.run.join(CHECKPOINTS);
    let preds = match cfg.dtype {
        Dtype::F32 => predict_labels(&mut Segmentor::<f32>::load(&ckpt)?, &test, a.batch)?,
        Dtype::F64 => predict_labels(&mut Segmentor::<f64>::load(&ckpt)?, &test, a.batch)?,
    };
    let pairs: Vec<(&LabelMap, &EvalExample)> = preds.iter().zip(&test).collect();
    let scores = map_ordered(&pairs, |(p, t)| Ok(score_labels(p, &t.clean)?))?;
    create_dir(&out)?;
    let rows = summarize(&cfg.method, &cfg.noise_level, &scores)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    write_file(&out.join(SUMMARY), buf)?;
    let scored: Vec<(u64, ImageScores)> = indices.into_iter().zip(scores).collect();
    write_scores(&out.join(SCORES), &scored)?;
    info!("eval: {} / {} test DI {:.4}", cfg.method, cfg.noise_level, rows[3].di_mean);
    manifest.write(&out, vec![SCORES.into(), SUMMARY.into()])
}
