//! Experiment orchestration: configuration files, the two-stage pipeline with
//! on-disk artifacts, Stage I evaluation, openness sweeps, ablation matrices and
//! offline re-scoring of exported files.
//!
//! Every run writes to `<output_dir>/<config-hash>/<seed>/`:
//!
//! | file | content |
//! |------|---------|
//! | `checkpoints/stage1.ckpt`, `checkpoints/stage2.ckpt` | network weights |
//! | `scores.csv` | normality scores and the assigned partition |
//! | `separation.json` | threshold and the known/unknown id lists |
//! | `predictions.csv` | final `(|C_s|+1)`-way predictions |
//! | `metrics.json` | [`MetricsReport`] of the run |
//! | `log.txt` | per-epoch losses as JSON lines |

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    apply_split, generate_pool, load_folder_pools, ClassSplit, Dataset, DomainPool, FolderSpec, ShiftParams,
    SyntheticSpec,
};
use crate::error::{Result, RosError};
use crate::losses::{LossWeights, Reduction};
use crate::metrics::{aggregate_runs, auc_roc, MetricsReport};
use crate::network::{
    load_checkpoint, save_checkpoint, transfer_stage1_to_stage2, EncoderConfig, NetworkBundle, TransferOptions,
};
use crate::optim::{InverseDecay, SgdConfig};
use crate::stage1::{
    compute_normality_scores, scores_to_csv, separate_target, train_stage1, NormalityRecord, ScoreMode,
    SeparationResult, Stage1Config, TrainingLog,
};
use crate::stage2::{predict, predictions_to_csv, train_stage2, PredictionRecord, Stage2Config};

const TRANSFER_SALT: u64 = 0x5452_414E_5346_4552;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Folder,
}

/// Flat experiment description, read from and written to TOML.
///
/// Unset keys take their defaults, which follow the published training recipe
/// (80 + 80 epochs, base learning rate 3e-4, three seeds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label; not part of the hash.
    pub name: String,

    pub dataset: DatasetKind,
    /// Known classes. For folder data with a class list, `0` means every listed class.
    pub n_known: usize,
    /// Known classes are `classes[start..end]` instead of the first `n_known`.
    pub known_window: Option<[usize; 2]>,

    // synthetic data
    pub n_unknown: usize,
    pub image_size: usize,
    pub samples_per_class: usize,
    pub color_shift: f64,
    pub noise: f64,
    pub data_seed: u64,

    // folder data
    pub root: Option<PathBuf>,
    pub source_domain: String,
    pub target_domain: String,
    pub class_list: Option<PathBuf>,

    pub backbone: String,
    pub widths: Vec<usize>,
    pub frozen_blocks: usize,

    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_gamma: f64,
    pub lr_power: f64,
    pub momentum: f32,
    pub weight_decay: f32,
    pub encoder_lr_mult: f32,
    pub head_lr_mult: f32,
    pub unknown_lr_mult: f32,
    pub centroid_alpha: f64,
    pub reduction: Reduction,

    pub lambda_1_1: f64,
    pub lambda_1_2: f64,
    pub lambda_2_1: f64,
    pub lambda_2_2: f64,

    pub seeds: Vec<u64>,

    pub no_anchor_s1: bool,
    pub no_anchor_s2: bool,
    pub no_center_loss: bool,
    pub no_rot_score: bool,
    pub no_ent_score: bool,
    pub no_entropy_s2: bool,
    pub stage2_transfer: bool,
    /// Baseline: Stage II on the source alone with both target losses switched off.
    pub source_only: bool,

    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let schedule = InverseDecay::default();
        let sgd = SgdConfig::default();
        let weights = LossWeights::default();
        Self {
            name: "ros".into(),
            dataset: DatasetKind::Synthetic,
            n_known: synth.n_known,
            known_window: None,
            n_unknown: synth.n_unknown,
            image_size: synth.image_size,
            samples_per_class: synth.samples_per_class,
            color_shift: synth.shift.color_shift,
            noise: synth.shift.noise,
            data_seed: synth.seed,
            root: None,
            source_domain: "source".into(),
            target_domain: "target".into(),
            class_list: None,
            backbone: "small_conv".into(),
            widths: vec![16, 32, 64, 128],
            frozen_blocks: 0,
            epochs_stage1: 80,
            epochs_stage2: 80,
            batch_size: 32,
            base_lr: schedule.base_lr,
            lr_gamma: schedule.gamma,
            lr_power: schedule.power,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            encoder_lr_mult: 10.0,
            head_lr_mult: 10.0,
            unknown_lr_mult: 2.0,
            centroid_alpha: 0.5,
            reduction: Reduction::Mean,
            lambda_1_1: weights.lambda_1_1,
            lambda_1_2: weights.lambda_1_2,
            lambda_2_1: weights.lambda_2_1,
            lambda_2_2: weights.lambda_2_2,
            seeds: vec![0, 1, 2],
            no_anchor_s1: false,
            no_anchor_s2: false,
            no_center_loss: false,
            no_rot_score: false,
            no_ent_score: false,
            no_entropy_s2: false,
            stage2_transfer: true,
            source_only: false,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// The ablation switches with their labels.
pub const ABLATION_SWITCHES: [&str; 7] = [
    "no_anchor_s1",
    "no_anchor_s2",
    "no_center_loss",
    "no_rot_score",
    "no_ent_score",
    "no_entropy_s2",
    "no_stage2_transfer",
];

impl ExperimentConfig {
    /// Desk-scale setting for the 12-class synthetic benchmark: three epochs per stage.
    pub fn synthetic_preset() -> Self {
        Self {
            name: "synthetic".into(),
            epochs_stage1: 3,
            epochs_stage2: 3,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(e, text, origin))
    }

    /// Reads `text` with unset keys taken from `self` instead of the defaults.
    pub fn layered(&self, text: &str, origin: &Path) -> Result<Self> {
        Self::from_toml_str(text, origin)?;
        let user: toml::Table = toml::from_str(text).map_err(|e| toml_error(e, text, origin))?;
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()).expect("config round-trips");
        table.extend(user);
        Self::from_toml_str(&toml::to_string(&table).expect("table serializes"), origin)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RosError::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Applies `key=value` overrides; values use TOML syntax, bare words are strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()).expect("config round-trips");
        let known = Self::default_keys();
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| RosError::validation(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            if !known.iter().any(|k| k == key) {
                return Err(RosError::validation(format!("unknown config key `{key}`")));
            }
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
            table.insert(key.to_owned(), value);
        }
        let text = toml::to_string(&table).expect("table serializes");
        Self::from_toml_str(&text, Path::new("<overrides>"))
    }

    fn default_keys() -> Vec<String> {
        let mut keys: Vec<String> = match toml::Value::try_from(Self::default()) {
            Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
            _ => Vec::new(),
        };
        keys.extend(["known_window", "root", "class_list"].map(String::from));
        keys
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(RosError::validation(msg));
        if self.no_rot_score && self.no_ent_score {
            return fail("no_rot_score and no_ent_score together leave no normality score".into());
        }
        if self.backbone != "small_conv" {
            return fail(format!("unknown backbone `{}` (supported: small_conv)", self.backbone));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return fail("encoder widths must be positive".into());
        }
        if self.frozen_blocks > self.widths.len() {
            return fail("frozen_blocks exceeds the number of encoder blocks".into());
        }
        for (name, v) in [
            ("epochs_stage1", self.epochs_stage1),
            ("epochs_stage2", self.epochs_stage2),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.batch_size.is_multiple_of(4) {
            return fail("batch_size must be a multiple of 4 (anchors × rotations)".into());
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("lr_gamma", self.lr_gamma + f64::MIN_POSITIVE),
            ("lr_power", self.lr_power + f64::MIN_POSITIVE),
            ("centroid_alpha", self.centroid_alpha),
            ("encoder_lr_mult", self.encoder_lr_mult as f64 + f64::MIN_POSITIVE),
            ("head_lr_mult", self.head_lr_mult as f64),
            ("unknown_lr_mult", self.unknown_lr_mult as f64),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.centroid_alpha > 1.0 {
            return fail("centroid_alpha must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return fail("momentum must lie in [0, 1) and weight_decay be nonnegative".into());
        }
        self.loss_weights().validate()?;
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        if let Some([start, end]) = self.known_window {
            if start >= end {
                return fail(format!("known_window [{start}, {end}] is empty"));
            }
            if self.n_known != 0 && end - start != self.n_known {
                return fail(format!(
                    "known_window [{start}, {end}] does not hold n_known={} classes",
                    self.n_known
                ));
            }
        }
        match self.dataset {
            DatasetKind::Synthetic => {
                self.synthetic_spec().validate()?;
                if let Some([_, end]) = self.known_window {
                    if end > self.n_known + self.n_unknown {
                        return fail(format!(
                            "known_window ends at {end} past the {} classes",
                            self.n_known + self.n_unknown
                        ));
                    }
                }
            }
            DatasetKind::Folder => {
                if self.root.is_none() {
                    return fail("folder datasets need `root`".into());
                }
                if self.n_known == 0 && self.class_list.is_none() {
                    return fail("folder datasets need n_known or a class_list".into());
                }
                if self.image_size == 0 {
                    return fail("image_size must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of every field that influences results (seeds, name and
    /// output directory excluded).
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.name.clear();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Short label naming the active ablation switches, `ros` when none is set.
    pub fn ablation_label(&self) -> String {
        let flags = [
            self.no_anchor_s1,
            self.no_anchor_s2,
            self.no_center_loss,
            self.no_rot_score,
            self.no_ent_score,
            self.no_entropy_s2,
            !self.stage2_transfer,
        ];
        let mut active: Vec<&str> = ABLATION_SWITCHES
            .iter()
            .zip(flags)
            .filter(|(_, on)| *on)
            .map(|(name, _)| *name)
            .collect();
        if self.source_only {
            active.insert(0, "source_only");
        }
        if active.is_empty() {
            "ros".into()
        } else {
            active.join("+")
        }
    }

    /// Copy with one named switch turned on.
    pub fn with_switch(&self, switch: &str) -> Result<Self> {
        let mut c = self.clone();
        match switch {
            "no_anchor_s1" => c.no_anchor_s1 = true,
            "no_anchor_s2" => c.no_anchor_s2 = true,
            "no_center_loss" => c.no_center_loss = true,
            "no_rot_score" => c.no_rot_score = true,
            "no_ent_score" => c.no_ent_score = true,
            "no_entropy_s2" => c.no_entropy_s2 = true,
            "no_stage2_transfer" => c.stage2_transfer = false,
            "source_only" => c.source_only = true,
            other => return Err(RosError::validation(format!("unknown ablation switch `{other}`"))),
        }
        Ok(c)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_known: self.n_known,
            n_unknown: self.n_unknown,
            image_size: self.image_size,
            samples_per_class: self.samples_per_class,
            shift: ShiftParams {
                color_shift: self.color_shift,
                noise: self.noise,
            },
            seed: self.data_seed,
        }
    }

    pub fn folder_spec(&self) -> Result<FolderSpec> {
        Ok(FolderSpec {
            root: self
                .root
                .clone()
                .ok_or_else(|| RosError::validation("folder datasets need `root`"))?,
            source_domain: self.source_domain.clone(),
            target_domain: self.target_domain.clone(),
            n_known: (self.n_known > 0).then_some(self.n_known),
            class_list: self.class_list.clone(),
            image_size: self.image_size,
        })
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_1_1: self.lambda_1_1,
            lambda_1_2: if self.no_center_loss { 0.0 } else { self.lambda_1_2 },
            lambda_2_1: if self.no_entropy_s2 || self.source_only {
                0.0
            } else {
                self.lambda_2_1
            },
            lambda_2_2: if self.source_only { 0.0 } else { self.lambda_2_2 },
        }
    }

    pub fn encoder_config(&self, in_channels: usize) -> EncoderConfig {
        EncoderConfig::SmallConv {
            in_channels,
            widths: self.widths.clone(),
            frozen_blocks: self.frozen_blocks,
        }
    }

    fn schedule(&self) -> InverseDecay {
        InverseDecay {
            base_lr: self.base_lr,
            gamma: self.lr_gamma,
            power: self.lr_power,
        }
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn stage1_config(&self, seed: u64) -> Stage1Config {
        Stage1Config {
            epochs: self.epochs_stage1,
            batch_size: self.batch_size,
            schedule: self.schedule(),
            sgd: self.sgd(),
            encoder_lr_mult: self.encoder_lr_mult,
            head_lr_mult: self.head_lr_mult,
            weights: self.loss_weights(),
            reduction: self.reduction,
            centroid_alpha: self.centroid_alpha,
            use_anchor: !self.no_anchor_s1,
            seed,
        }
    }

    pub fn stage2_config(&self, seed: u64) -> Stage2Config {
        Stage2Config {
            epochs: self.epochs_stage2,
            batch_size: self.batch_size,
            schedule: self.schedule(),
            sgd: self.sgd(),
            encoder_lr_mult: self.encoder_lr_mult,
            head_lr_mult: self.head_lr_mult,
            unknown_lr_mult: self.unknown_lr_mult,
            weights: self.loss_weights(),
            reduction: self.reduction,
            use_anchor: !self.no_anchor_s2,
            seed,
        }
    }

    pub fn score_mode(&self) -> ScoreMode {
        match (self.no_rot_score, self.no_ent_score) {
            (true, _) => ScoreMode::EntropyOnly,
            (_, true) => ScoreMode::RotationOnly,
            _ => ScoreMode::Full,
        }
    }

    /// All classes of both domains, in split order.
    pub fn load_pools(&self) -> Result<(DomainPool, DomainPool)> {
        match self.dataset {
            DatasetKind::Synthetic => generate_pool(&self.synthetic_spec()),
            DatasetKind::Folder => load_folder_pools(&self.folder_spec()?),
        }
    }

    pub fn class_split(&self, classes: &[String]) -> Result<ClassSplit> {
        match (self.known_window, self.dataset) {
            (Some([start, end]), _) => ClassSplit::from_window(classes, start..end),
            (None, DatasetKind::Synthetic) => ClassSplit::from_ordered(classes, self.n_known),
            (None, DatasetKind::Folder) => match &self.class_list {
                Some(_) if self.n_known == 0 => {
                    let listed = crate::dataset::read_class_list(self.class_list.as_deref().expect("checked"))?;
                    ClassSplit::from_ordered(classes, listed.len())
                }
                _ => ClassSplit::from_ordered(classes, self.n_known),
            },
        }
    }

    pub fn load_data(&self) -> Result<ExperimentData> {
        self.validate()?;
        let (source_pool, target_pool) = self.load_pools()?;
        let split = self.class_split(&target_pool.classes)?;
        let (source, target) = apply_split(&source_pool, &target_pool, &split)?;
        Ok(ExperimentData { source, target, split })
    }
}

fn toml_error(e: toml::de::Error, text: &str, origin: &Path) -> RosError {
    RosError::Parse {
        path: origin.to_path_buf(),
        line: e.span().map_or(0, |span| text[..span.start].matches('\n').count() + 1),
        reason: e.message().to_owned(),
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub source: Dataset,
    pub target: Dataset,
    pub split: ClassSplit,
}

/// Paths of one `(config hash, seed)` run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(output_dir: &Path, config_hash: &str, seed: u64) -> Self {
        Self {
            dir: output_dir.join(config_hash).join(seed.to_string()),
        }
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }
    pub fn stage1_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("stage1.ckpt")
    }
    pub fn stage2_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("stage2.ckpt")
    }
    pub fn scores(&self) -> PathBuf {
        self.dir.join("scores.csv")
    }
    pub fn separation(&self) -> PathBuf {
        self.dir.join("separation.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.dir.join("predictions.csv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("log.txt")
    }

    pub fn create(&self) -> Result<()> {
        let dir = self.checkpoints();
        fs::create_dir_all(&dir).map_err(|e| RosError::io(&dir, e))
    }

    fn append_log(&self, text: &str) -> Result<()> {
        use std::io::Write;
        let path = self.log();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| RosError::io(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| RosError::io(&path, e))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RosError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| RosError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text)
}

fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| RosError::Stage {
        stage,
        source: Box::new(e),
    })
}

/// On-disk form of a [`SeparationResult`]; scores live in `scores.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationFile {
    pub threshold: Option<f64>,
    pub known_ids: Vec<usize>,
    pub unknown_ids: Vec<usize>,
}

pub fn write_separation(path: &Path, separation: &SeparationResult) -> Result<()> {
    write_json(
        path,
        &SeparationFile {
            threshold: separation.threshold.is_finite().then_some(separation.threshold),
            known_ids: separation.known_ids.clone(),
            unknown_ids: separation.unknown_ids.clone(),
        },
    )
}

pub fn read_separation(path: &Path) -> Result<SeparationResult> {
    let text = fs::read_to_string(path).map_err(|e| RosError::io(path, e))?;
    let file: SeparationFile = serde_json::from_str(&text).map_err(|e| RosError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    Ok(SeparationResult {
        threshold: file.threshold.unwrap_or(f64::NAN),
        known_ids: file.known_ids,
        unknown_ids: file.unknown_ids,
        records: Vec::new(),
    })
}

/// A score as stored in `scores.csv`.
pub fn persisted_score(value: f64) -> f64 {
    format!("{value:.6}").parse().expect("formatted float parses")
}

/// AUC-ROC of the normality scores as persisted (six decimals) against target
/// ground truth, known = positive. Using the stored values lets `score_files`
/// reproduce the run report exactly.
pub fn normality_auc(records: &[NormalityRecord], target: &Dataset, n_known: usize) -> Result<f64> {
    let by_id = target.by_id();
    let mut scores = Vec::with_capacity(records.len());
    let mut known = Vec::with_capacity(records.len());
    for r in records {
        let sample = by_id
            .get(&r.sample_id)
            .ok_or_else(|| RosError::validation(format!("score for unknown sample id {}", r.sample_id)))?;
        scores.push(persisted_score(r.normality));
        known.push(sample.class_label < n_known);
    }
    auc_roc(&scores, &known)
}

/// Trains Stage I and stores its checkpoint.
pub fn run_stage1(
    config: &ExperimentConfig,
    data: &ExperimentData,
    seed: u64,
    paths: &RunPaths,
) -> Result<NetworkBundle> {
    paths.create()?;
    let channels = data.source.channels().unwrap_or(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bundle = NetworkBundle::stage1(&config.encoder_config(channels), data.split.n_known(), &mut rng)?;
    let log = train_stage1(&mut bundle, &data.source, &config.stage1_config(seed))?;
    paths.append_log(&log.to_lines())?;
    save_checkpoint(&bundle, &config.config_hash(), &paths.stage1_checkpoint())?;
    Ok(bundle)
}

/// Scores the target with a Stage I bundle, writes `scores.csv` and
/// `separation.json`, and returns the split with the AUC-ROC of the scores.
pub fn run_separation(
    config: &ExperimentConfig,
    bundle: &mut NetworkBundle,
    data: &ExperimentData,
    paths: &RunPaths,
) -> Result<(SeparationResult, Option<f64>)> {
    let records = compute_normality_scores(bundle, &data.target, !config.no_anchor_s1, config.score_mode())?;
    let separation = separate_target(&records)?;
    write_file(&paths.scores(), scores_to_csv(&separation))?;
    write_separation(&paths.separation(), &separation)?;
    let auc = match normality_auc(&records, &data.target, data.split.n_known()) {
        Ok(a) => Some(a),
        Err(RosError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    paths.append_log(&format!(
        "{}\n",
        serde_json::json!({
            "stage": "separation",
            "threshold": separation.threshold,
            "known": separation.known_ids.len(),
            "unknown": separation.unknown_ids.len(),
            "auc_roc": auc,
        })
    ))?;
    Ok((separation, auc))
}

/// Builds the Stage II bundle from a Stage I one, trains it and writes the predictions.
pub fn run_stage2(
    config: &ExperimentConfig,
    stage1: &NetworkBundle,
    data: &ExperimentData,
    separation: &SeparationResult,
    seed: u64,
    paths: &RunPaths,
) -> Result<(NetworkBundle, Vec<PredictionRecord>, TrainingLog)> {
    let options = TransferOptions {
        enabled: config.stage2_transfer,
        unknown_lr_mult: config.unknown_lr_mult,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRANSFER_SALT);
    let mut bundle = transfer_stage1_to_stage2(stage1, &options, &mut rng)?;
    let used = if config.source_only {
        SeparationResult::empty()
    } else {
        separation.clone()
    };
    let log = train_stage2(
        &mut bundle,
        &data.source,
        &data.target,
        &used,
        &config.stage2_config(seed),
    )?;
    paths.append_log(&log.to_lines())?;
    save_checkpoint(&bundle, &config.config_hash(), &paths.stage2_checkpoint())?;
    let predictions = predict(&mut bundle, &data.target)?;
    write_file(&paths.predictions(), predictions_to_csv(&predictions))?;
    Ok((bundle, predictions, log))
}

pub fn run_metrics(
    config: &ExperimentConfig,
    data: &ExperimentData,
    predictions: &[PredictionRecord],
    auc: Option<f64>,
    paths: &RunPaths,
) -> Result<MetricsReport> {
    let report = MetricsReport::from_predictions(
        predictions,
        data.split.n_known(),
        data.split.n_total(),
        auc,
        &config.config_hash(),
    )?;
    write_json(&paths.metrics(), &report)?;
    Ok(report)
}

/// One seed of the full pipeline; failures carry the name of the failing stage.
pub fn run_seed(config: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<MetricsReport> {
    let hash = config.config_hash();
    let paths = RunPaths::new(&config.output_dir, &hash, seed);
    if paths.log().exists() {
        fs::remove_file(paths.log()).map_err(|e| RosError::io(paths.log(), e))?;
    }
    in_stage("setup", paths.create())?;
    in_stage(
        "setup",
        paths.append_log(&format!(
            "{}\n",
            serde_json::json!({ "config_hash": hash, "seed": seed, "label": config.ablation_label() })
        )),
    )?;
    log::info!("[{hash}/{seed}] stage 1");
    let mut stage1 = in_stage("stage1", run_stage1(config, data, seed, &paths))?;
    let (separation, auc) = in_stage("separate", run_separation(config, &mut stage1, data, &paths))?;
    log::info!("[{hash}/{seed}] stage 2 (auc {auc:?})");
    let (_, predictions, _) = in_stage("stage2", run_stage2(config, &stage1, data, &separation, seed, &paths))?;
    in_stage("metrics", run_metrics(config, data, &predictions, auc, &paths))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub label: String,
    pub config_hash: String,
    pub runs: Vec<SeedReport>,
    pub aggregate: MetricsReport,
}

fn persist_config(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = config.output_dir.join(config.config_hash());
    write_file(&dir.join("config.toml"), config.to_toml_string())?;
    Ok(dir)
}

/// Full pipeline over every seed, aggregated into `summary.json`.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineReport> {
    config.validate()?;
    let data = config.load_data()?;
    run_pipeline_on(config, &data)
}

/// As [`run_pipeline`] with already loaded data.
pub fn run_pipeline_on(config: &ExperimentConfig, data: &ExperimentData) -> Result<PipelineReport> {
    config.validate()?;
    let dir = persist_config(config)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        runs.push(SeedReport {
            seed,
            report: run_seed(config, data, seed)?,
        });
    }
    let aggregate = aggregate_runs(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    let report = PipelineReport {
        label: config.ablation_label(),
        config_hash: config.config_hash(),
        runs,
        aggregate,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub label: String,
    pub config_hash: String,
    pub auc_per_seed: Vec<(u64, f64)>,
    pub auc_mean: f64,
    pub auc_std: f64,
}

/// Trains Stage I per seed and reports the AUC-ROC of the normality scores.
pub fn evaluate_stage1_only(config: &ExperimentConfig) -> Result<Stage1Report> {
    let data = config.load_data()?;
    evaluate_stage1_only_on(config, &data)
}

pub fn evaluate_stage1_only_on(config: &ExperimentConfig, data: &ExperimentData) -> Result<Stage1Report> {
    config.validate()?;
    let dir = persist_config(config)?;
    let hash = config.config_hash();
    let mut aucs = Vec::new();
    for &seed in &config.seeds {
        let paths = RunPaths::new(&config.output_dir, &hash, seed);
        let mut bundle = in_stage("stage1", run_stage1(config, data, seed, &paths))?;
        let (_, auc) = in_stage("separate", run_separation(config, &mut bundle, data, &paths))?;
        let auc =
            auc.ok_or_else(|| RosError::UndefinedMetric("AUC-ROC needs known and unknown target samples".into()))?;
        aucs.push((seed, auc));
    }
    let values: Vec<f64> = aucs.iter().map(|a| a.1).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let report = Stage1Report {
        label: config.ablation_label(),
        config_hash: hash,
        auc_per_seed: aucs,
        auc_mean: mean,
        auc_std: std,
    };
    write_json(&dir.join("stage1.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub config_hash: String,
    pub auc_roc: Option<f64>,
    pub report: MetricsReport,
}

/// Base configuration followed by one variant per switch in [`ABLATION_SWITCHES`].
pub fn ablation_matrix(base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let mut out = vec![base.clone()];
    for switch in ABLATION_SWITCHES {
        out.push(base.with_switch(switch)?);
    }
    Ok(out)
}

/// Runs every configuration of [`ablation_matrix`] and writes `ablations.csv`.
pub fn run_ablations(base: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let data = base.load_data()?;
    let mut rows = Vec::new();
    for config in ablation_matrix(base)? {
        let report = run_pipeline_on(&config, &data)?;
        rows.push(AblationRow {
            label: report.label,
            config_hash: report.config_hash,
            auc_roc: report.aggregate.auc_roc,
            report: report.aggregate,
        });
    }
    let mut csv = String::from("label,config_hash,auc_roc,os_star,unk,os,hos\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.config_hash,
            r.auc_roc.map(|a| a.to_string()).unwrap_or_default(),
            r.report.os_star,
            r.report.unk,
            r.report.os,
            r.report.hos
        ));
    }
    write_file(&base.output_dir.join("ablations.csv"), csv)?;
    Ok(rows)
}

/// Known-class windows grouped by their size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpennessSweepSpec {
    pub configurations: Vec<OpennessConfiguration>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpennessConfiguration {
    pub n_known: usize,
    /// Half-open index ranges into the ordered class list.
    pub windows: Vec<Range<usize>>,
}

impl OpennessSweepSpec {
    /// The 65-class Office-Home setting: 25, 10 and 5 known classes, three windows each.
    pub fn office_home() -> Self {
        Self {
            configurations: vec![
                OpennessConfiguration {
                    n_known: 25,
                    windows: vec![0..25, 25..50, 40..65],
                },
                OpennessConfiguration {
                    n_known: 10,
                    windows: vec![0..10, 10..20, 20..30],
                },
                OpennessConfiguration {
                    n_known: 5,
                    windows: vec![0..5, 5..10, 10..15],
                },
            ],
        }
    }

    /// For each size, `count` consecutive windows starting at 0 (wrapping to the
    /// last window that still fits).
    pub fn consecutive(n_classes: usize, sizes: &[usize], count: usize) -> Result<Self> {
        let mut configurations = Vec::new();
        for &k in sizes {
            if k == 0 || k > n_classes {
                return Err(RosError::validation(format!(
                    "window size {k} invalid for {n_classes} classes"
                )));
            }
            let windows = (0..count)
                .map(|w| {
                    let start = (w * k).min(n_classes - k);
                    start..start + k
                })
                .collect();
            configurations.push(OpennessConfiguration { n_known: k, windows });
        }
        Ok(Self { configurations })
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.configurations.is_empty() {
            return Err(RosError::validation("openness sweep has no configurations"));
        }
        for c in &self.configurations {
            if c.windows.is_empty() {
                return Err(RosError::validation(format!(
                    "no windows for {} known classes",
                    c.n_known
                )));
            }
            for w in &c.windows {
                if w.len() != c.n_known || w.end > n_classes {
                    return Err(RosError::validation(format!(
                        "window {}..{} invalid for {} known of {n_classes} classes",
                        w.start, w.end, c.n_known
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_known: usize,
    pub openness: f64,
    pub os_star: f64,
    pub unk: f64,
    pub hos: f64,
    pub windows: Vec<PipelineReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub series_path: PathBuf,
    pub plot_path: PathBuf,
}

/// Runs every window, averages the windows of each configuration and writes
/// `sweep/series.csv` and `sweep/plot.png` under the output directory.
pub fn run_openness_sweep(config: &ExperimentConfig, sweep: &OpennessSweepSpec) -> Result<SweepReport> {
    let (source_pool, target_pool) = config.load_pools()?;
    sweep.validate(target_pool.classes.len())?;
    let mut points = Vec::new();
    for c in &sweep.configurations {
        let mut windows = Vec::new();
        for w in &c.windows {
            let mut cfg = config.clone();
            cfg.n_known = c.n_known;
            cfg.known_window = Some([w.start, w.end]);
            if cfg.dataset == DatasetKind::Synthetic {
                cfg.n_unknown = target_pool.classes.len() - c.n_known;
            }
            let split = cfg.class_split(&target_pool.classes)?;
            let (source, target) = apply_split(&source_pool, &target_pool, &split)?;
            windows.push(run_pipeline_on(&cfg, &ExperimentData { source, target, split })?);
        }
        let n = windows.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| windows.iter().map(|w| f(&w.aggregate)).sum::<f64>() / n;
        points.push(SweepPoint {
            n_known: c.n_known,
            openness: crate::metrics::openness(c.n_known, target_pool.classes.len())?,
            os_star: mean(|r| r.os_star),
            unk: mean(|r| r.unk),
            hos: mean(|r| r.hos),
            windows,
        });
    }
    let dir = config.output_dir.join("sweep");
    let series_path = dir.join("series.csv");
    let mut csv = String::from("n_known,openness,os_star,unk,hos\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p.n_known, p.openness, p.os_star, p.unk, p.hos
        ));
    }
    write_file(&series_path, csv)?;
    let plot_path = dir.join("plot.png");
    write_plot(&plot_path, &points)?;
    let report = SweepReport {
        points,
        series_path,
        plot_path,
    };
    write_json(&dir.join("sweep.json"), &report)?;
    Ok(report)
}

const PLOT_W: u32 = 480;
const PLOT_H: u32 = 320;
const MARGIN: u32 = 30;

fn draw_line(img: &mut image::RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: image::Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// OS* (red), UNK (green) and HOS (blue) against openness; y spans 0..100.
fn write_plot(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut img = image::RgbImage::from_pixel(PLOT_W, PLOT_H, image::Rgb([255, 255, 255]));
    let (x_lo, x_hi) = (MARGIN as i64, (PLOT_W - MARGIN) as i64);
    let (y_lo, y_hi) = (MARGIN as i64, (PLOT_H - MARGIN) as i64);
    let grey = image::Rgb([200, 200, 200]);
    for q in 0..=4 {
        let y = y_hi - (y_hi - y_lo) * q / 4;
        draw_line(&mut img, (x_lo, y), (x_hi, y), grey);
    }
    draw_line(&mut img, (x_lo, y_lo), (x_lo, y_hi), image::Rgb([0, 0, 0]));
    draw_line(&mut img, (x_lo, y_hi), (x_hi, y_hi), image::Rgb([0, 0, 0]));

    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.openness.total_cmp(&b.openness));
    let (o_min, o_max) = match (sorted.first(), sorted.last()) {
        (Some(a), Some(b)) => (a.openness, b.openness),
        _ => (0.0, 1.0),
    };
    let span = if o_max > o_min { o_max - o_min } else { 1.0 };
    let to_px = |o: f64, v: f64| {
        let x = if sorted.len() > 1 {
            x_lo + ((o - o_min) / span * (x_hi - x_lo) as f64).round() as i64
        } else {
            (x_lo + x_hi) / 2
        };
        (
            x,
            y_hi - (v.clamp(0.0, 100.0) / 100.0 * (y_hi - y_lo) as f64).round() as i64,
        )
    };
    let series: [(fn(&SweepPoint) -> f64, [u8; 3]); 3] = [
        (|p| p.os_star, [220, 40, 40]),
        (|p| p.unk, [40, 160, 40]),
        (|p| p.hos, [40, 60, 220]),
    ];
    for (value, rgb) in series {
        let color = image::Rgb(rgb);
        let pts: Vec<(i64, i64)> = sorted.iter().map(|p| to_px(p.openness, value(p))).collect();
        for pair in pts.windows(2) {
            draw_line(&mut img, pair[0], pair[1], color);
        }
        for &(x, y) in &pts {
            for dx in -3..=3 {
                draw_line(&mut img, (x + dx, y - 3), (x + dx, y + 3), color);
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RosError::io(parent, e))?;
    }
    img.save(path).map_err(|e| RosError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn parse_error(path: &Path, line: u64, reason: impl Into<String>) -> RosError {
    RosError::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        reason: reason.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| RosError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| parse_error(path, 1, format!("missing column `{name}`")))
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str, path: &Path) -> Result<T> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record
        .get(idx)
        .ok_or_else(|| parse_error(path, line, format!("missing field `{name}`")))?;
    raw.parse()
        .map_err(|_| parse_error(path, line, format!("invalid `{name}` value `{raw}`")))
}

/// Reads `predictions.csv` as `(sample_id, predicted_label, ground_truth)` triples.
pub fn read_predictions(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    let id = column(&headers, "sample_id", path)?;
    let pred = column(&headers, "predicted_label", path)?;
    let truth = column(&headers, "ground_truth", path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        out.push((
            field(&record, id, "sample_id", path)?,
            field(&record, pred, "predicted_label", path)?,
            field(&record, truth, "ground_truth", path)?,
        ));
    }
    Ok(out)
}

/// Reads `scores.csv` as `(sample_id, normality)` pairs.
pub fn read_scores(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    let id = column(&headers, "sample_id", path)?;
    let n = column(&headers, "normality", path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        out.push((
            field(&record, id, "sample_id", path)?,
            field(&record, n, "normality", path)?,
        ));
    }
    Ok(out)
}

/// Recomputes a [`MetricsReport`] from exported files alone. The class count is
/// taken from the largest ground-truth label; AUC-ROC needs the scores file.
pub fn score_files(
    predictions_path: &Path,
    scores_path: Option<&Path>,
    n_known: usize,
    config_hash: &str,
) -> Result<MetricsReport> {
    let rows = read_predictions(predictions_path)?;
    let pairs: Vec<(usize, usize)> = rows.iter().map(|&(_, p, t)| (p, t)).collect();
    let n_total = rows.iter().map(|r| r.2 + 1).max().unwrap_or(0).max(n_known + 1);
    let auc = match scores_path {
        Some(path) => {
            let truth: std::collections::HashMap<usize, usize> = rows.iter().map(|&(id, _, t)| (id, t)).collect();
            let scores = read_scores(path)?;
            let mut values = Vec::with_capacity(scores.len());
            let mut known = Vec::with_capacity(scores.len());
            for (id, s) in scores {
                let t = truth.get(&id).ok_or_else(|| {
                    RosError::validation(format!("sample {id} of {} has no prediction row", path.display()))
                })?;
                values.push(s);
                known.push(*t < n_known);
            }
            Some(auc_roc(&values, &known)?)
        }
        None => None,
    };
    MetricsReport::from_predictions(&pairs, n_known, n_total, auc, config_hash)
}

/// Loads a checkpoint written by [`run_stage1`] or [`run_stage2`] after checking its hash.
pub fn load_run_checkpoint(path: &Path, config_hash: &str) -> Result<NetworkBundle> {
    let (bundle, header) = load_checkpoint(path)?;
    if header.config_hash != config_hash {
        return Err(RosError::validation(format!(
            "checkpoint {} belongs to configuration {}, not {config_hash}",
            path.display(),
            header.config_hash
        )));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            n_known: 2,
            n_unknown: 2,
            image_size: 16,
            samples_per_class: 6,
            widths: vec![4, 8],
            epochs_stage1: 1,
            epochs_stage2: 1,
            batch_size: 8,
            seeds: vec![3],
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::synthetic_preset()
        }
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = ExperimentConfig::synthetic_preset();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        let o = c
            .with_overrides(&["epochs_stage1=7", "no_center_loss=true", "name=abc", "seeds=[4, 5]"])
            .unwrap();
        assert_eq!(o.epochs_stage1, 7);
        assert!(o.no_center_loss);
        assert_eq!(o.name, "abc");
        assert_eq!(o.seeds, vec![4, 5]);
        assert!(c.with_overrides(&["bogus=1"]).is_err());
        let partial = ExperimentConfig::from_toml_str("epochs_stage1 = 2\n", Path::new("x")).unwrap();
        assert_eq!(partial.epochs_stage2, 80);
        let layered = c.layered("epochs_stage1 = 2\n", Path::new("x")).unwrap();
        assert_eq!((layered.epochs_stage1, layered.epochs_stage2), (2, 3));
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = ExperimentConfig::from_toml_str("name = \"a\"\nepochs_stage1 = \"many\"\n", Path::new("c.toml"));
        match err {
            Err(RosError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_ignores_seeds_and_output() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seeds = vec![9];
        b.output_dir = "elsewhere".into();
        b.name = "other".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.lambda_1_2 = 0.2;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn validation_rules() {
        let ok = ExperimentConfig::default();
        ok.validate().unwrap();
        let both = ExperimentConfig {
            no_rot_score: true,
            no_ent_score: true,
            ..ok.clone()
        };
        assert!(matches!(both.validate(), Err(RosError::Validation(_))));
        for bad in [
            ExperimentConfig {
                epochs_stage1: 0,
                ..ok.clone()
            },
            ExperimentConfig {
                batch_size: 30,
                ..ok.clone()
            },
            ExperimentConfig {
                base_lr: 0.0,
                ..ok.clone()
            },
            ExperimentConfig {
                seeds: vec![],
                ..ok.clone()
            },
            ExperimentConfig {
                seeds: vec![1, 1],
                ..ok.clone()
            },
            ExperimentConfig {
                lambda_2_2: -1.0,
                ..ok.clone()
            },
            ExperimentConfig {
                backbone: "resnet50".into(),
                ..ok.clone()
            },
            ExperimentConfig {
                known_window: Some([0, 3]),
                ..ok.clone()
            },
            ExperimentConfig {
                dataset: DatasetKind::Folder,
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(RosError::Validation(_))), "{bad:?}");
        }
    }

    #[test]
    fn labels_and_switches() {
        let base = ExperimentConfig::default();
        assert_eq!(base.ablation_label(), "ros");
        let m = ablation_matrix(&base).unwrap();
        assert_eq!(m.len(), 1 + ABLATION_SWITCHES.len());
        for (cfg, name) in m[1..].iter().zip(ABLATION_SWITCHES) {
            assert_eq!(cfg.ablation_label(), name);
        }
        let labels: std::collections::BTreeSet<_> = m.iter().map(|c| c.config_hash()).collect();
        assert_eq!(labels.len(), m.len());
        assert_eq!(
            base.with_switch("no_center_loss").unwrap().loss_weights().lambda_1_2,
            0.0
        );
        let so = base.with_switch("source_only").unwrap().loss_weights();
        assert_eq!((so.lambda_2_1, so.lambda_2_2), (0.0, 0.0));
        assert!(base.with_switch("nope").is_err());
    }

    #[test]
    fn sweep_windows() {
        let oh = OpennessSweepSpec::office_home();
        oh.validate(65).unwrap();
        assert!(oh.validate(30).is_err());
        let s = OpennessSweepSpec::consecutive(12, &[6, 4], 3).unwrap();
        assert_eq!(s.configurations[0].windows, vec![0..6, 6..12, 6..12]);
        assert_eq!(s.configurations[1].windows, vec![0..4, 4..8, 8..12]);
    }

    #[test]
    fn tiny_pipeline_writes_tree_and_rescores() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let report = run_pipeline(&cfg).unwrap();
        let paths = RunPaths::new(dir.path(), &cfg.config_hash(), 3);
        for p in [
            paths.stage1_checkpoint(),
            paths.stage2_checkpoint(),
            paths.scores(),
            paths.separation(),
            paths.predictions(),
            paths.metrics(),
            paths.log(),
        ] {
            assert!(p.exists(), "{}", p.display());
        }
        assert!(dir.path().join(cfg.config_hash()).join("summary.json").exists());
        let again = score_files(&paths.predictions(), Some(&paths.scores()), 2, &cfg.config_hash()).unwrap();
        assert_eq!(again, report.runs[0].report);
        let sep = read_separation(&paths.separation()).unwrap();
        assert_eq!(sep.known_ids.len() + sep.unknown_ids.len(), 2 * 6 + 2 * 6);
        load_run_checkpoint(&paths.stage1_checkpoint(), &cfg.config_hash()).unwrap();
        assert!(load_run_checkpoint(&paths.stage1_checkpoint(), "other").is_err());
    }

    #[test]
    fn score_files_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        fs::write(&p, "sample_id,predicted_label\n0,1\n").unwrap();
        assert!(matches!(
            score_files(&p, None, 2, "h"),
            Err(RosError::Parse { line: 1, .. })
        ));
        fs::write(&p, "sample_id,predicted_label,ground_truth\n0,1,1\n1,x,2\n").unwrap();
        assert!(matches!(
            score_files(&p, None, 2, "h"),
            Err(RosError::Parse { line: 3, .. })
        ));
    }
}
