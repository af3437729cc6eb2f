//! Batch command-line front end.
//!
//! Every command resolves its settings from built-in defaults, then the
//! command's `[section]` of an optional `--config` file (root-level keys
//! such as `seed` apply to all commands), then explicit flags. The resolved
//! settings are hashed into the provenance line written at the top of every
//! CSV the command produces.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::evalkit::{patient_folds, preamble, split_by_fold, EvalReport, PredictionRecord};
use crate::fvpool::{FvOptions, FvPipeline, GmmOptions};
use crate::holistic::{slice_targets, truth_labels, HolisticConfig, HolisticModel};
use crate::nn::LossHead;
use crate::patchbase::{benchmark, build_patch_dataset, Method, PatchConfig, PatchModel};
use crate::preprocess::{AttenuationWindow, ChannelStats, WindowSet};
use crate::synthdata::{
    generate_dataset, read_dataset, write_dataset, GeneratorSpec, LabelMapping, LabeledSlice, TextureParams, CLASS_NAMES,
    MANIFEST_FILE, NATIVE_GRID,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "ildnet", version, about = "Holistic multi-label lung-pattern recognition")]
pub struct Cli {
    /// Sectioned key = value settings; flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a holistic network on all folds but one.
    Train(TrainArgs),
    /// Train the sliding-window patch classifier.
    TrainPatch(TrainPatchArgs),
    /// Fit Fisher-vector pooling and a linear regressor on a trained network.
    Fv(FvArgs),
    /// Evaluate models on the held-out fold.
    Eval(EvalArgs),
    /// Time holistic against sliding-window inference.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Four comma-separated per-class probabilities.
    #[arg(long)]
    pub prevalence: Option<String>,
    #[arg(long)]
    pub noise_hu: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Patient-level cross-validation split shared by all training commands.
#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Held-out fold, in `0..folds`.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed of the patient-to-fold assignment.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SgdArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// `true` or `false`.
    #[arg(long)]
    pub hflip: Option<bool>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output model file; the loss history goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// mlc | l2 | sl1
    #[arg(long)]
    pub head: Option<String>,
    /// identity | step:T | piecewise:T1,T2, in pixels of a 512×512 slice.
    #[arg(long)]
    pub mapping: Option<String>,
    /// Presence count (512×512 pixels) used when the mapping has none.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    pub balance: bool,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
}

#[derive(Debug, Args)]
pub struct TrainPatchArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
}

#[derive(Debug, Args)]
pub struct FvArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trained holistic model supplying the descriptor network.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub layer: Option<String>,
    /// Number of Gaussian components.
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub pca_dim: Option<usize>,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Defaults to the fold the network was trained for.
    #[arg(long)]
    pub fold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Holistic or Fisher-vector model files; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Defaults to the fold the first model was trained for.
    #[arg(long)]
    pub fold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub holistic: Option<PathBuf>,
    #[arg(long)]
    pub patch: Option<PathBuf>,
    /// Number of slices to time, taken in dataset order.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (including the program name), run the command and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let file = cli.config.as_deref().map(Config::read).transpose()?;
    let file = file.as_ref();
    match &cli.command {
        Command::Synth(a) => synth(a, file),
        Command::Train(a) => train_holistic(a, file),
        Command::TrainPatch(a) => train_patch(a, file),
        Command::Fv(a) => fv(a, file),
        Command::Eval(a) => eval(a, file),
        Command::Bench(a) => bench(a, file),
    }
}

// ---------------------------------------------------------------------------
// Settings resolution
// ---------------------------------------------------------------------------

/// Settings that only name input or output files.
const IO_KEYS: [&str; 5] = ["data", "out", "model", "holistic", "patch"];

/// Effective settings of one command.
struct Settings {
    command: &'static str,
    values: Config,
}

impl Settings {
    /// Layer defaults, file values and flags, in that order. File keys under
    /// the command's section must be known; root keys are picked up only for
    /// known names.
    fn resolve(
        command: &'static str,
        defaults: &[(&'static str, Option<String>)],
        file: Option<&Config>,
        flags: Vec<(&'static str, Option<String>)>,
    ) -> Result<Self> {
        let mut values = Config::default();
        for (k, v) in defaults {
            if let Some(v) = v {
                values.set(*k, v);
            }
        }
        if let Some(file) = file {
            let prefix = format!("{command}.");
            for (key, _) in file.iter() {
                if let Some(k) = key.strip_prefix(&prefix) {
                    if !defaults.iter().any(|(d, _)| *d == k) {
                        return Err(Error::Usage(format!("unknown config key `{key}`")));
                    }
                }
            }
            for (k, _) in defaults {
                let v = file.get_str(&format!("{command}.{k}")).or_else(|| file.get_str(k));
                if let Some(v) = v {
                    values.set(*k, v);
                }
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.set(k, v);
            }
        }
        Ok(Self { command, values })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.values
            .get(key)?
            .ok_or_else(|| Error::Usage(format!("{}: missing required setting `{key}`", self.command)))
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values.get(key)
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.get::<String>(key).map(PathBuf::from)
    }

    /// Seed, version and a hash of every setting except file locations, so
    /// the same experiment run into another directory gets the same line.
    fn provenance(&self) -> String {
        let seed = self.values.get_str("seed").unwrap_or("none");
        let mut hashed = self.values.clone();
        for key in IO_KEYS {
            hashed.remove(key);
        }
        format!("ildnet {VERSION} command={} seed={seed} config={}", self.command, hashed.hash())
    }
}

fn s<T: ToString>(v: T) -> Option<String> {
    Some(v.to_string())
}

fn flag<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn path_flag(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn split_flags(a: &SplitArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("fold", flag(&a.fold)),
        ("folds", flag(&a.folds)),
        ("split_seed", flag(&a.split_seed)),
    ]
}

fn sgd_flags(a: &SgdArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("epochs", flag(&a.epochs)),
        ("lr", flag(&a.lr)),
        ("momentum", flag(&a.momentum)),
        ("weight_decay", flag(&a.weight_decay)),
        ("batch", flag(&a.batch)),
        ("lr_decay", flag(&a.lr_decay)),
        ("hflip", flag(&a.hflip)),
    ]
}

fn sgd_defaults(o: &crate::nn::SgdOptions) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("epochs", s(o.epochs)),
        ("lr", s(o.learning_rate)),
        ("momentum", s(o.momentum)),
        ("weight_decay", s(o.weight_decay)),
        ("batch", s(o.batch_size)),
        ("lr_decay", s(o.lr_decay)),
        ("hflip", s(o.hflip)),
    ]
}

fn read_sgd(st: &Settings, seed: u64) -> Result<crate::nn::SgdOptions> {
    Ok(crate::nn::SgdOptions {
        learning_rate: st.get("lr")?,
        momentum: st.get("momentum")?,
        weight_decay: st.get("weight_decay")?,
        batch_size: st.get("batch")?,
        epochs: st.get("epochs")?,
        lr_decay: st.get("lr_decay")?,
        hflip: st.get("hflip")?,
        seed,
    })
}

fn format_windows(w: &WindowSet) -> String {
    w.0.iter()
        .map(|a| format!("{}:{}", a.hu_low, a.hu_high))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parse `lo:hi,lo:hi,lo:hi`.
pub fn parse_windows(text: &str) -> Result<WindowSet> {
    let bad = || Error::Usage(format!("bad windows `{text}`; expected lo:hi,lo:hi,lo:hi in HU"));
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [AttenuationWindow::LOW; 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        let (lo, hi) = part.split_once(':').ok_or_else(bad)?;
        let lo: i32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: i32 = hi.trim().parse().map_err(|_| bad())?;
        *slot = AttenuationWindow::new(lo, hi).map_err(|e| Error::Usage(e.to_string()))?;
    }
    Ok(WindowSet(out))
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Patient-level split recorded with every trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub folds: usize,
    pub fold: usize,
    pub split_seed: u64,
}

impl Split {
    fn from_settings(st: &Settings) -> Result<Self> {
        let split = Self {
            folds: st.get("folds")?,
            fold: st.get("fold")?,
            split_seed: st.get("split_seed")?,
        };
        split.validate()?;
        Ok(split)
    }

    fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Usage(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.fold >= self.folds {
            return Err(Error::Usage(format!("fold {} out of range 0..{}", self.fold, self.folds)));
        }
        Ok(())
    }

    /// Training and held-out slices.
    pub fn apply(&self, slices: &[LabeledSlice]) -> Result<(Vec<LabeledSlice>, Vec<LabeledSlice>)> {
        let patients: Vec<&str> = slices.iter().map(|s| s.patient_id.as_str()).collect();
        let folds = patient_folds(&patients, self.folds, self.split_seed)?;
        let (train, test) = split_by_fold(&patients, &folds, self.fold)?;
        let pick = |idx: Vec<usize>| idx.into_iter().map(|i| slices[i].clone()).collect();
        Ok((pick(train), pick(test)))
    }
}

fn split_defaults() -> Vec<(&'static str, Option<String>)> {
    vec![("fold", s(0)), ("folds", s(5)), ("split_seed", s(0))]
}

/// Ratio of the dataset's slice area to the 512×512 reference.
fn area_scale(slices: &[LabeledSlice]) -> f64 {
    let s = &slices[0];
    (s.height * s.width) as f64 / (NATIVE_GRID * NATIVE_GRID) as f64
}

fn load(dir: &Path) -> Result<Vec<LabeledSlice>> {
    let (_, slices) = read_dataset(dir)?;
    if slices.is_empty() {
        return Err(Error::Data(format!("{} lists no slices", dir.display())));
    }
    Ok(slices)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_model(path: &Path, mut c: Container, split: &Split, provenance: &str) -> Result<()> {
    c.header["split"] = serde_json::to_value(split).expect("split serializes");
    c.header["provenance"] = serde_json::Value::String(provenance.to_string());
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    c.write(path)
}

/// `model.bin` → `model.history.csv`.
pub fn history_path(model: &Path) -> PathBuf {
    model.with_extension("history.csv")
}

fn history_csv(history: &[f64], provenance: &str) -> String {
    let mut out = preamble(provenance, "epoch,loss");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{l:.9}\n", i + 1));
    }
    out
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn synth(a: &SynthArgs, file: Option<&Config>) -> Result<()> {
    let d = GeneratorSpec::default();
    let prevalence = d.prevalence.map(|p| p.to_string()).join(",");
    let st = Settings::resolve(
        "synth",
        &[
            ("out", None),
            ("seed", s(0)),
            ("patients", s(d.num_patients)),
            ("slices", s(d.slices_per_patient)),
            ("grid", s(d.grid_size)),
            ("prevalence", Some(prevalence)),
            ("noise_hu", s(d.texture.noise_hu)),
            ("lesion_min", s(d.texture.lesion_fraction.0)),
            ("lesion_max", s(d.texture.lesion_fraction.1)),
            ("vessel_density", s(d.texture.vessel_density)),
        ],
        file,
        vec![
            ("out", path_flag(&a.out)),
            ("seed", flag(&a.seed)),
            ("patients", flag(&a.patients)),
            ("slices", flag(&a.slices)),
            ("grid", flag(&a.grid)),
            ("prevalence", a.prevalence.clone()),
            ("noise_hu", flag(&a.noise_hu)),
        ],
    )?;
    let text: String = st.get("prevalence")?;
    let parsed: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Usage(format!("bad prevalence `{text}`"))))
        .collect::<Result<_>>()?;
    let prevalence: [f64; 4] = parsed
        .try_into()
        .map_err(|_| Error::Usage(format!("prevalence needs 4 values, got `{text}`")))?;
    let spec = GeneratorSpec {
        num_patients: st.get("patients")?,
        slices_per_patient: st.get("slices")?,
        grid_size: st.get("grid")?,
        prevalence,
        texture: TextureParams {
            noise_hu: st.get("noise_hu")?,
            lesion_fraction: (st.get("lesion_min")?, st.get("lesion_max")?),
            vessel_density: st.get("vessel_density")?,
        },
    };
    spec.validate()?;
    let out = st.path("out")?;
    if out.exists() {
        let non_empty = fs::read_dir(&out)
            .map_err(|e| Error::io(&out, e))?
            .next()
            .is_some();
        if non_empty && !a.force {
            return Err(Error::Usage(format!("{} is not empty; pass --force to overwrite", out.display())));
        }
        let manifest = out.join(MANIFEST_FILE);
        if manifest.exists() {
            fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
        }
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let seed: u64 = st.get("seed")?;
    let slices = generate_dataset(&spec, seed)?;
    write_text(&out.join("PROVENANCE"), &format!("# {}\n", st.provenance()))?;
    write_dataset(&out, &slices, Some(seed), Some(&spec))?;
    eprintln!("wrote {} slices to {}", slices.len(), out.display());
    Ok(())
}

fn train_holistic(a: &TrainArgs, file: Option<&Config>) -> Result<()> {
    let base = HolisticConfig::new(LossHead::MultilabelLogistic, 1.0)?;
    let mut defaults = vec![
        ("data", None),
        ("out", None),
        ("seed", s(0)),
        ("head", s("mlc")),
        ("mapping", s("step:6000")),
        ("threshold", s(6000)),
        ("balance", s(false)),
        ("input_size", s(base.input_size)),
        ("windows", Some(format_windows(&base.windows))),
    ];
    defaults.extend(split_defaults());
    defaults.extend(sgd_defaults(&base.sgd));
    // Filled in from the head once it is known.
    defaults.retain(|(k, _)| *k != "lr");
    defaults.push(("lr", None));
    let mut flags = vec![
        ("data", path_flag(&a.data)),
        ("out", path_flag(&a.out)),
        ("seed", flag(&a.seed)),
        ("head", a.head.clone()),
        ("mapping", a.mapping.clone()),
        ("threshold", flag(&a.threshold)),
        ("balance", a.balance.then(|| "true".to_string())),
        ("input_size", flag(&a.input_size)),
    ];
    flags.extend(split_flags(&a.split));
    flags.extend(sgd_flags(&a.sgd));
    let mut st = Settings::resolve("train", &defaults, file, flags)?;

    let head = LossHead::parse(&st.get::<String>("head")?)?;
    if st.opt::<f64>("lr")?.is_none() {
        st.values.set("lr", HolisticConfig::default_learning_rate(head).to_string());
    }
    let mapping = LabelMapping::parse(&st.get::<String>("mapping")?)?;
    let threshold: f64 = st.get("threshold")?;
    let split = Split::from_settings(&st)?;
    let seed: u64 = st.get("seed")?;
    let out = st.path("out")?;
    let slices = load(&st.path("data")?)?;
    let scale = area_scale(&slices);
    let mapping = mapping.scaled(scale);
    let presence = mapping.presence_threshold().unwrap_or(threshold * scale);
    let mut config = HolisticConfig::new(head, presence)?;
    config.mapping = mapping;
    config.balance = st.get("balance")?;
    config.input_size = st.get("input_size")?;
    if config.input_size < 8 || config.input_size % 8 != 0 {
        return Err(Error::Usage(format!("input_size must be a positive multiple of 8, got {}", config.input_size)));
    }
    config.windows = parse_windows(&st.get::<String>("windows")?)?;
    config.sgd = read_sgd(&st, seed)?;
    config.validate()?;

    let (train, _) = split.apply(&slices)?;
    eprintln!("training {} head on {} slices (fold {} held out)", head.short_name(), train.len(), split.fold);
    let (model, history) = HolisticModel::fit(&train, &config)?;
    let provenance = st.provenance();
    write_model(&out, model.to_container(), &split, &provenance)?;
    write_text(&history_path(&out), &history_csv(&history, &provenance))?;
    eprintln!("loss {:.5} -> {:.5}; wrote {}", history[0], history[history.len() - 1], out.display());
    Ok(())
}

fn train_patch(a: &TrainPatchArgs, file: Option<&Config>) -> Result<()> {
    let base = PatchConfig::default();
    let sgd = crate::nn::SgdOptions {
        learning_rate: 0.003,
        epochs: 3,
        ..base.sgd
    };
    let mut defaults = vec![
        ("data", None),
        ("out", None),
        ("seed", s(0)),
        ("stride", s(base.stride)),
        ("label_fraction", s(base.label_fraction)),
        ("min_lung_fraction", s(base.min_lung_fraction)),
        ("windows", Some(format_windows(&base.windows))),
    ];
    defaults.extend(split_defaults());
    defaults.extend(sgd_defaults(&sgd));
    let mut flags = vec![
        ("data", path_flag(&a.data)),
        ("out", path_flag(&a.out)),
        ("seed", flag(&a.seed)),
        ("stride", flag(&a.stride)),
        ("label_fraction", flag(&a.label_fraction)),
    ];
    flags.extend(split_flags(&a.split));
    flags.extend(sgd_flags(&a.sgd));
    let st = Settings::resolve("train-patch", &defaults, file, flags)?;

    let split = Split::from_settings(&st)?;
    let seed: u64 = st.get("seed")?;
    let config = PatchConfig {
        stride: st.get("stride")?,
        label_fraction: st.get("label_fraction")?,
        min_lung_fraction: st.get("min_lung_fraction")?,
        windows: parse_windows(&st.get::<String>("windows")?)?,
        sgd: read_sgd(&st, seed)?,
        ..base
    };
    let out = st.path("out")?;
    let slices = load(&st.path("data")?)?;
    let (train, _) = split.apply(&slices)?;
    let data = build_patch_dataset(&train, &config)?;
    eprintln!("training patch classifier on {} patches", data.images.len());
    let (model, history) = PatchModel::fit(&data, &config)?;
    let provenance = st.provenance();
    write_model(&out, model.to_container(), &split, &provenance)?;
    write_text(&history_path(&out), &history_csv(&history, &provenance))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Input side of a Fisher-vector model: how slices become network inputs and
/// how its outputs are thresholded.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FvInput {
    holistic: HolisticConfig,
    stats: ChannelStats,
}

fn fv(a: &FvArgs, file: Option<&Config>) -> Result<()> {
    let d = FvOptions::default();
    let g = GmmOptions::default();
    let st = Settings::resolve(
        "fv",
        &[
            ("data", None),
            ("model", None),
            ("out", None),
            ("fold", None),
            ("seed", s(0)),
            ("layer", s(&d.layer)),
            ("components", s(g.components)),
            ("pca_dim", s(d.pca_dim)),
            ("ridge", s(d.ridge)),
            ("improved", s(d.improved)),
            ("max_iters", s(g.max_iters)),
            ("subsample", s(g.subsample_cap)),
        ],
        file,
        vec![
            ("data", path_flag(&a.data)),
            ("model", path_flag(&a.model)),
            ("out", path_flag(&a.out)),
            ("fold", flag(&a.fold)),
            ("seed", flag(&a.seed)),
            ("layer", a.layer.clone()),
            ("components", flag(&a.components)),
            ("pca_dim", flag(&a.pca_dim)),
            ("ridge", flag(&a.ridge)),
        ],
    )?;
    let model_path = st.path("model")?;
    let container = Container::read(&model_path)?;
    let holistic = HolisticModel::from_container(&container)?;
    let mut split: Split = container.field("split")?;
    if let Some(fold) = st.opt("fold")? {
        split.fold = fold;
        split.validate()?;
    }
    let slices = load(&st.path("data")?)?;
    let (train, _) = split.apply(&slices)?;

    let layer: String = st.get("layer")?;
    let components: usize = st.get("components")?;
    let index = crate::fvpool::descriptor_layer(holistic.network.spec(), &layer)?;
    let descriptor_dim = holistic.network.shapes()[index + 1].channels;
    let requested: usize = st.get("pca_dim")?;
    let cap = (train.len().saturating_sub(1)).min(2 * components * descriptor_dim);
    if requested > cap {
        eprintln!("warning: pca_dim {requested} exceeds {cap} (training slices - 1 or 2MD); using {cap}");
    }
    let opts = FvOptions {
        layer,
        gmm: GmmOptions {
            components,
            max_iters: st.get("max_iters")?,
            subsample_cap: st.get("subsample")?,
            seed: st.get("seed")?,
            ..g
        },
        pca_dim: requested.min(cap),
        improved: st.get("improved")?,
        ridge: st.get("ridge")?,
    };
    let targets: Vec<Vec<f64>> = train.iter().map(|s| slice_targets(s, &holistic.config.mapping)).collect();
    let inputs = holistic.inputs(&train)?;
    eprintln!("fitting FV pipeline on {} slices, layer {}", train.len(), opts.layer);
    let (pipeline, fit) = FvPipeline::fit(holistic.network.clone(), &inputs, &targets, &opts)?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    let mut c = pipeline.to_container();
    c.header["input"] = serde_json::to_value(FvInput {
        holistic: holistic.config.clone(),
        stats: holistic.stats.clone(),
    })
    .expect("input serializes");
    let out = st.path("out")?;
    let provenance = st.provenance();
    write_model(&out, c, &split, &provenance)?;
    let mut ll = preamble(&provenance, "iteration,log_likelihood");
    for (i, v) in fit.log_likelihood.iter().enumerate() {
        ll.push_str(&format!("{},{v:.9}\n", i + 1));
    }
    write_text(&history_path(&out), &ll)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// A stored model that turns slices into per-class scores.
enum Scorer {
    Holistic(HolisticModel),
    Fv { pipeline: FvPipeline, input: FvInput },
}

impl Scorer {
    fn load(path: &Path) -> Result<(Self, Split)> {
        let c = Container::read(path)?;
        let split: Split = c.field("split")?;
        let scorer = match c.kind() {
            "holistic-model" => Scorer::Holistic(HolisticModel::from_container(&c)?),
            "fv-pipeline" => Scorer::Fv {
                pipeline: FvPipeline::from_container(&c)?,
                input: c.field("input")?,
            },
            other => {
                return Err(Error::Usage(format!(
                    "{}: cannot evaluate a `{other}` model; use a holistic or fv model",
                    path.display()
                )))
            }
        };
        Ok((scorer, split))
    }

    fn config(&self) -> &HolisticConfig {
        match self {
            Scorer::Holistic(m) => &m.config,
            Scorer::Fv { input, .. } => &input.holistic,
        }
    }

    fn scores(&self, slices: &[LabeledSlice]) -> Result<Vec<Vec<f64>>> {
        match self {
            Scorer::Holistic(m) => m.score(slices),
            Scorer::Fv { pipeline, input } => {
                let cfg = &input.holistic;
                let inputs = crate::holistic::prepare_inputs(slices, &cfg.windows, cfg.input_size, &input.stats)?;
                pipeline.predict(&inputs)
            }
        }
    }

    fn thresholds(&self) -> Vec<f64> {
        match self {
            Scorer::Holistic(m) => m.default_thresholds(),
            Scorer::Fv { input, .. } => {
                let cfg = &input.holistic;
                vec![0.5 * cfg.mapping.apply(cfg.presence); CLASS_NAMES.len()]
            }
        }
    }
}

fn eval(a: &EvalArgs, file: Option<&Config>) -> Result<()> {
    let models = (!a.model.is_empty()).then(|| {
        a.model
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(",")
    });
    let st = Settings::resolve(
        "eval",
        &[("data", None), ("model", None), ("out", None), ("fold", None)],
        file,
        vec![
            ("data", path_flag(&a.data)),
            ("model", models),
            ("out", path_flag(&a.out)),
            ("fold", flag(&a.fold)),
        ],
    )?;
    let paths: Vec<PathBuf> = st
        .get::<String>("model")?
        .split(',')
        .map(|p| PathBuf::from(p.trim()))
        .collect();
    let out = st.path("out")?;
    let slices = load(&st.path("data")?)?;
    let fold: Option<usize> = st.opt("fold")?;
    let provenance = st.provenance();
    for path in &paths {
        let (scorer, mut split) = Scorer::load(path)?;
        if let Some(fold) = fold {
            split.fold = fold;
            split.validate()?;
        }
        let (_, test) = split.apply(&slices)?;
        let presence = scorer.config().presence;
        let scores = scorer.scores(&test)?;
        let records = test
            .iter()
            .zip(scores)
            .map(|(s, sc)| PredictionRecord::new(&s.slice_id, &s.patient_id, sc, truth_labels(s, presence)))
            .collect::<Result<Vec<_>>>()?;
        let report = EvalReport::build(&records, &scorer.thresholds(), &CLASS_NAMES)?;
        let dir = if paths.len() == 1 {
            out.clone()
        } else {
            out.join(path.file_stem().unwrap_or_default())
        };
        report.write(&dir, &provenance)?;
        eprintln!(
            "{}: {} slices, mean AUC {}, F1 {:.4}; wrote {}",
            path.display(),
            test.len(),
            report.mean_auc().map_or("NA".into(), |v| format!("{v:.4}")),
            report.overall.f1,
            dir.display()
        );
    }
    Ok(())
}

pub const BENCH_HEADER: &str = "method,n_slices,min_s,max_s,mean_s,threads,speedup";

fn bench(a: &BenchArgs, file: Option<&Config>) -> Result<()> {
    let st = Settings::resolve(
        "bench",
        &[
            ("data", None),
            ("holistic", None),
            ("patch", None),
            ("out", None),
            ("n", s(10)),
            ("threads", s(1)),
            ("repetitions", s(1)),
            ("stride", s(PatchConfig::default().stride)),
        ],
        file,
        vec![
            ("data", path_flag(&a.data)),
            ("holistic", path_flag(&a.holistic)),
            ("patch", path_flag(&a.patch)),
            ("out", path_flag(&a.out)),
            ("n", flag(&a.n)),
            ("threads", flag(&a.threads)),
            ("repetitions", flag(&a.repetitions)),
            ("stride", flag(&a.stride)),
        ],
    )?;
    let n: usize = st.get("n")?;
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    let stride: usize = st.get("stride")?;
    let holistic = HolisticModel::from_container(&Container::read(&st.path("holistic")?)?)?;
    let patch = PatchModel::from_container(&Container::read(&st.path("patch")?)?)?;
    let mut slices = load(&st.path("data")?)?;
    slices.truncate(n);
    let methods: Vec<Method> = vec![
        ("holistic", Box::new(|s| holistic.score(std::slice::from_ref(s)).map(|_| ()))),
        ("patch", Box::new(|s| patch.slide_predict(s, stride).map(|_| ()))),
    ];
    let timings = benchmark(&methods, &slices, st.get("repetitions")?, st.get("threads")?)?;
    let speedup = timings[1].mean_s / timings[0].mean_s;
    let mut csv = preamble(&st.provenance(), BENCH_HEADER);
    for t in &timings {
        csv.push_str(&format!("{},{speedup:.3}\n", t.csv_row()));
    }
    match st.opt::<String>("out")? {
        Some(p) => write_text(Path::new(&p), &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("patch / holistic mean time: {speedup:.1}x");
    Ok(())
}
