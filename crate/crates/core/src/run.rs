//! Experiment drivers behind the `windkd` binary: run configuration, the
//! loss-weight grid searches, the six-model comparison over turbines and
//! horizons, and report emission.
//!
//! Everything here is deterministic given the master seed: each cell of the
//! comparison derives its own seed from a label hash, so adding or removing
//! roster models never shifts any other cell's results.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    format_float, make_windows, read_raw_csv, split_train_test, AugmentSpec, ChannelSet, RawFrame,
    SeriesFrame, WindowSpec,
};
use crate::distill::{KdConfig, KdEpochLog};
use crate::error::{Error, Result, StageExt};
use crate::evaluate::{friedman, qr, rate_stats, rmse, step_rates, MetricRow};
use crate::nn::NetParams;
use crate::pipeline::{
    attach_correction, build_turbine_bundle, fit_error_relation, predict_test,
    train_park_teachers, BundleConfig, CorrectionConfig, ErrorRelation, StudentArch,
    TeacherConfig, TeacherModels,
};
use crate::recurrent::TrainSpec;
use crate::synth::{self, subseed, SynthConfig, PARK_TURBINE_COUNT};
use crate::transfer::{RegWeights, TlConfig, TlTrainSpec};

pub const ENV_SEED: &str = "WINDKD_SEED";
pub const ENV_OUT_DIR: &str = "WINDKD_OUT_DIR";

// ---------------------------------------------------------------------------
// model roster

/// The six comparison models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "BiLSTM")]
    BiLstm,
    #[serde(rename = "EDLSTM")]
    EdLstm,
    #[serde(rename = "KD")]
    Kd,
    #[serde(rename = "EDED-TL")]
    EdedTl,
    #[serde(rename = "EDBi-TL")]
    EdbiTl,
    #[serde(rename = "KD-TL")]
    KdTl,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::BiLstm,
        ModelKind::EdLstm,
        ModelKind::Kd,
        ModelKind::EdedTl,
        ModelKind::EdbiTl,
        ModelKind::KdTl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::BiLstm => "BiLSTM",
            ModelKind::EdLstm => "EDLSTM",
            ModelKind::Kd => "KD",
            ModelKind::EdedTl => "EDED-TL",
            ModelKind::EdbiTl => "EDBi-TL",
            ModelKind::KdTl => "KD-TL",
        }
    }

    /// Wiring row for this model: family, stages, and exactly which
    /// physical channels its whole path may touch.
    pub fn spec(self) -> AblationModel {
        let turbine = ChannelSet::TURBINE_POWER.union(ChannelSet::TURBINE_SPEED);
        let park = ChannelSet::PARK_POWER.union(ChannelSet::PARK_SPEED);
        let all = turbine.union(park).union(ChannelSet::PARK_NWP);
        match self {
            // baselines read the park forecast as a raw extra input
            ModelKind::BiLstm => AblationModel {
                name: self.name(),
                family: StudentArch::BiLstm,
                uses_kd: false,
                uses_tl_correction: false,
                inputs: turbine.union(ChannelSet::PARK_NWP),
            },
            ModelKind::EdLstm => AblationModel {
                name: self.name(),
                family: StudentArch::EdLstm,
                uses_kd: false,
                uses_tl_correction: false,
                inputs: turbine.union(ChannelSet::PARK_NWP),
            },
            // distilled student: park knowledge arrives through the teacher,
            // never through the forecast channel
            ModelKind::Kd => AblationModel {
                name: self.name(),
                family: StudentArch::BiLstm,
                uses_kd: true,
                uses_tl_correction: false,
                inputs: turbine.union(park),
            },
            ModelKind::EdedTl => AblationModel {
                name: self.name(),
                family: StudentArch::EdLstm,
                uses_kd: false,
                uses_tl_correction: true,
                inputs: all,
            },
            ModelKind::EdbiTl => AblationModel {
                name: self.name(),
                family: StudentArch::BiLstm,
                uses_kd: false,
                uses_tl_correction: true,
                inputs: all,
            },
            ModelKind::KdTl => AblationModel {
                name: self.name(),
                family: StudentArch::BiLstm,
                uses_kd: true,
                uses_tl_correction: true,
                inputs: all,
            },
        }
    }

    /// Baselines take the forecast speed as a third input feature; every
    /// other model reaches it, if at all, through the park error stage.
    pub fn student_takes_nwp(self) -> bool {
        matches!(self, ModelKind::BiLstm | ModelKind::EdLstm)
    }

    /// Whether the cell needs the shared park stage (teacher networks and
    /// the fitted error relation).
    pub fn needs_park(self) -> bool {
        let s = self.spec();
        s.uses_kd || s.uses_tl_correction
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model '{s}'; expected one of {}",
                    ModelKind::ALL.map(|m| m.name()).join(", ")
                ))
            })
    }
}

/// One comparison row, fully describing how a model is assembled.
#[derive(Clone, Debug, Serialize)]
pub struct AblationModel {
    pub name: &'static str,
    pub family: StudentArch,
    pub uses_kd: bool,
    pub uses_tl_correction: bool,
    /// Every channel the model's path is allowed to touch.
    pub inputs: ChannelSet,
}

// ---------------------------------------------------------------------------
// configuration

fn default_seed() -> u64 {
    42
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_duration_days() -> u32 {
    365
}
fn default_lag_count() -> usize {
    24
}
fn default_horizons() -> Vec<usize> {
    (6..=12).collect()
}
fn default_split() -> f64 {
    0.65
}
fn default_grid() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}
fn default_alpha() -> f64 {
    0.8
}
fn default_gamma() -> f64 {
    0.6
}
fn default_roster() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

/// Noise augmentation of the student training windows. `factor == 1`
/// disables it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub factor: usize,
    pub noise_std_fraction: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            factor: 5,
            noise_std_fraction: 0.05,
        }
    }
}

/// Epoch and batch budgets for every training stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCosts {
    /// Park networks, per fold and for the final replay.
    pub teacher_epochs: usize,
    pub teacher_folds: usize,
    /// Turbine network pretraining (and the whole budget for undistilled
    /// models).
    pub student_epochs: usize,
    /// Distillation phase after pretraining.
    pub distill_epochs: usize,
    /// Park error-relation fit.
    pub relation_epochs: usize,
    /// Turbine adaptation of the relation and the test-time corrector.
    pub correction_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Chronological tail of the training windows held out for early
    /// stopping.
    pub val_fraction: f64,
}

impl Default for TrainCosts {
    fn default() -> Self {
        TrainCosts {
            teacher_epochs: 120,
            teacher_folds: 10,
            student_epochs: 120,
            distill_epochs: 40,
            relation_epochs: 150,
            correction_epochs: 100,
            patience: 10,
            batch_size: 32,
            val_fraction: 0.1,
        }
    }
}

/// Everything a run needs. Parses from TOML where every field is optional;
/// unknown keys are rejected so typos surface instead of silently applying
/// defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Read park CSVs (written by the dataset generator) from this
    /// directory instead of regenerating in memory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_duration_days")]
    pub duration_days: u32,
    #[serde(default = "default_lag_count")]
    pub lag_count: usize,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default = "default_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_grid")]
    pub gamma_grid: Vec<f64>,
    /// Distillation weight applied in the comparison run.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Alignment weight applied in the comparison run.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_roster")]
    pub roster: Vec<ModelKind>,
    #[serde(default)]
    pub train: TrainCosts,
    /// Shrinks epochs and data volume; the full profile is the default.
    #[serde(default)]
    pub fast: bool,
    /// Worker threads for the comparison grid; 0 uses the global pool.
    #[serde(default)]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses to defaults")
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Apply the environment overrides for the master seed and output
    /// directory.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(
            std::env::var(ENV_SEED).ok().as_deref(),
            std::env::var(ENV_OUT_DIR).ok().as_deref(),
        )
    }

    fn apply_overrides(&mut self, seed: Option<&str>, out_dir: Option<&str>) -> Result<()> {
        if let Some(s) = seed {
            self.seed = s
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_SEED}='{s}' is not a valid seed")))?;
        }
        if let Some(d) = out_dir {
            self.out_dir = PathBuf::from(d);
        }
        Ok(())
    }

    /// Cap every budget for a quick run. No-op unless `fast` is set.
    pub fn apply_fast(&mut self) {
        if !self.fast {
            return;
        }
        self.duration_days = self.duration_days.min(60);
        self.augment.factor = self.augment.factor.min(2);
        let t = &mut self.train;
        t.teacher_epochs = t.teacher_epochs.min(20);
        t.teacher_folds = t.teacher_folds.min(3);
        t.student_epochs = t.student_epochs.min(25);
        t.distill_epochs = t.distill_epochs.min(10);
        t.relation_epochs = t.relation_epochs.min(50);
        t.correction_epochs = t.correction_epochs.min(30);
        t.patience = t.patience.min(5);
    }

    pub fn validate(&self) -> Result<()> {
        if self.roster.is_empty() {
            return Err(Error::Config("model roster is empty".into()));
        }
        for (i, m) in self.roster.iter().enumerate() {
            if self.roster[..i].contains(m) {
                return Err(Error::Config(format!("duplicate roster entry {m}")));
            }
        }
        for (name, grid) in [("alpha_grid", &self.alpha_grid), ("gamma_grid", &self.gamma_grid)] {
            if grid.is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
            for &v in grid {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("{name} value {v} outside [0, 1]")));
                }
            }
        }
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::BadSplitFraction(self.split_fraction));
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("horizons list is empty".into()));
        }
        for &h in &self.horizons {
            WindowSpec::new(self.lag_count, h)?;
        }
        if self.augment.factor == 0 {
            return Err(Error::BadAugmentFactor(0));
        }
        let t = &self.train;
        if t.teacher_epochs == 0
            || t.student_epochs == 0
            || t.relation_epochs == 0
            || t.correction_epochs == 0
            || t.batch_size == 0
        {
            return Err(Error::Config("every epoch and batch budget must be >= 1".into()));
        }
        if t.teacher_folds < 2 {
            return Err(Error::Config(format!(
                "teacher fold rotation needs at least 2 folds, got {}",
                t.teacher_folds
            )));
        }
        if !(0.0..1.0).contains(&t.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction {} outside [0, 1)",
                t.val_fraction
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialized form; two configs share a
    /// digest exactly when every field matches.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Expand a `start:end:step` sweep (or a single number) into grid values.
/// Values are rounded to 9 decimals so accumulated float steps stay clean.
pub fn parse_grid_spec(text: &str) -> Result<Vec<f64>> {
    let bad = |t: &str| Error::Config(format!("grid spec '{t}' is not start:end:step or a number"));
    let parts: Vec<&str> = text.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad(text)))
        .collect::<Result<_>>()?;
    match nums.as_slice() {
        [v] => Ok(vec![*v]),
        [start, end, step] => {
            if *step <= 0.0 || end < start {
                return Err(bad(text));
            }
            let mut out = Vec::new();
            let mut i = 0u32;
            loop {
                let v = ((start + f64::from(i) * step) * 1e9).round() / 1e9;
                if v > *end + 1e-9 {
                    break;
                }
                out.push(v);
                i += 1;
            }
            Ok(out)
        }
        _ => Err(bad(text)),
    }
}

// ---------------------------------------------------------------------------
// seeds

/// Label-derived sub-seed, folded to the `u64` the training specs take.
pub fn seed_u64(master: u64, label: &str) -> u64 {
    let bytes = subseed(master, label);
    u64::from_le_bytes(bytes[..8].try_into().expect("subseed has 32 bytes"))
}

// ---------------------------------------------------------------------------
// data assembly

/// One turbine's split, with and without the park forecast channel
/// attached. The forecast variant feeds the baselines; everything else
/// reads the plain variant.
pub struct TurbineData {
    pub name: String,
    pub capacity_kw: f64,
    pub train: SeriesFrame,
    pub test: SeriesFrame,
    pub train_nwp: SeriesFrame,
    pub test_nwp: SeriesFrame,
}

pub struct PreparedData {
    pub park_train: SeriesFrame,
    pub park_test: SeriesFrame,
    pub turbines: Vec<TurbineData>,
}

/// Read a dataset directory written by the generator: `manifest.json`
/// names the CSV files and records the park capacity.
pub fn load_dataset_dir(dir: &Path) -> Result<(RawFrame, Vec<RawFrame>)> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: serde_json::Value = serde_json::from_str(&text)?;
    let park_capacity = manifest["park_capacity_kw"]
        .as_f64()
        .ok_or_else(|| Error::Config("manifest lacks park_capacity_kw".into()))?;
    let files = manifest["files"]
        .as_array()
        .ok_or_else(|| Error::Config("manifest lacks a files list".into()))?;
    let turbine_capacity = park_capacity / PARK_TURBINE_COUNT as f64;

    let mut park = None;
    let mut turbines = Vec::new();
    for f in files {
        let fname = f
            .as_str()
            .ok_or_else(|| Error::Config("manifest files must be strings".into()))?;
        let stem = fname.trim_end_matches(".csv");
        let path = dir.join(fname);
        if stem == "park" {
            park = Some(read_raw_csv(&path, "park", park_capacity, true)?);
        } else {
            turbines.push(read_raw_csv(&path, stem, turbine_capacity, false)?);
        }
    }
    let park = park.ok_or_else(|| {
        Error::Config(format!("{} lists no park.csv", manifest_path.display()))
    })?;
    if turbines.is_empty() {
        return Err(Error::Config(format!(
            "{} lists no turbine files",
            manifest_path.display()
        )));
    }
    Ok((park, turbines))
}

/// Obtain raw frames (from disk or the generator), hourly-average them and
/// split chronologically.
pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    let (park_raw, turbine_raws) = match &config.data_dir {
        Some(dir) => load_dataset_dir(dir).stage("data")?,
        None => {
            let ds = synth::gen_with(SynthConfig {
                seed: config.seed,
                duration_days: config.duration_days,
                ..SynthConfig::default()
            })
            .stage("data")?;
            (ds.park, ds.turbines)
        }
    };
    let park_hourly = park_raw.to_hourly().stage("data")?;
    let (park_train, park_test) =
        split_train_test(&park_hourly, config.split_fraction).stage("data")?;
    let mut turbines = Vec::with_capacity(turbine_raws.len());
    for raw in &turbine_raws {
        let hourly = raw.to_hourly().stage("data")?;
        let with_nwp = hourly.with_park_nwp(&park_hourly).stage("data")?;
        let (train, test) = split_train_test(&hourly, config.split_fraction).stage("data")?;
        let (train_nwp, test_nwp) =
            split_train_test(&with_nwp, config.split_fraction).stage("data")?;
        turbines.push(TurbineData {
            name: hourly.name.clone(),
            capacity_kw: hourly.capacity_kw,
            train,
            test,
            train_nwp,
            test_nwp,
        });
    }
    Ok(PreparedData {
        park_train,
        park_test,
        turbines,
    })
}

// ---------------------------------------------------------------------------
// shared park stage

/// The read-only park artifacts every cell at one horizon shares: both
/// teacher networks and the relation between their error sequences.
pub struct SharedPark {
    pub horizon: usize,
    pub teacher: TeacherModels,
    pub relation: ErrorRelation,
}

pub fn train_shared_park(
    config: &RunConfig,
    park_train: &SeriesFrame,
    horizon: usize,
) -> Result<SharedPark> {
    let window = WindowSpec::new(config.lag_count, horizon)?;
    let costs = &config.train;
    let tcfg = TeacherConfig {
        train: TrainSpec {
            max_epochs: costs.teacher_epochs,
            patience: costs.patience,
            batch_size: costs.batch_size,
            seed: seed_u64(config.seed, &format!("teacher:h{horizon}")),
            ..TrainSpec::default()
        },
        folds: costs.teacher_folds,
        ..TeacherConfig::default()
    };
    let teacher = train_park_teachers(park_train, window, &tcfg)?;
    let rel_spec = TlTrainSpec {
        max_epochs: costs.relation_epochs,
        patience: costs.patience,
        batch_size: costs.batch_size,
        seed: seed_u64(config.seed, &format!("relation:h{horizon}")),
        ..TlTrainSpec::default()
    };
    let relation =
        fit_error_relation(&teacher.error_i, &teacher.error_ii, &RegWeights::default(), &rel_spec)?;
    Ok(SharedPark {
        horizon,
        teacher,
        relation,
    })
}

// ---------------------------------------------------------------------------
// comparison cells

/// Metrics of one successful cell. `infer_seconds` is per prediction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellMetrics {
    /// Test RMSE, standardized units.
    pub rmse: f64,
    /// Qualified rate at q=0.9, physical units against capacity.
    pub qr90: f64,
    /// Trainable scalars of the turbine network only.
    pub param_count: usize,
    pub train_seconds: f64,
    pub infer_seconds: f64,
    /// Audited channels the full path touched; always equals the grant.
    pub channels: ChannelSet,
    /// Per-epoch distillation log, present for distilled cells.
    pub kd_log: Option<Vec<KdEpochLog>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellOutcome {
    pub model: String,
    pub turbine: String,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default)]
    pub metrics: Option<CellMetrics>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Everything a comparison run produced, in replayable form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForecastReport {
    pub master_seed: u64,
    pub config_digest: String,
    pub horizons: Vec<usize>,
    pub roster: Vec<String>,
    pub turbines: Vec<String>,
    pub cells: Vec<CellOutcome>,
}

impl ForecastReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn cell(&self, model: &str, turbine: &str, horizon: usize) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.turbine == turbine && c.horizon == horizon)
            .and_then(|c| c.metrics.as_ref())
    }
}

/// Channels a cell's whole path reads: the student's own windows plus
/// whatever park-side window sets its stages consumed.
fn audited_channels(kind: ModelKind, student: ChannelSet, teacher: Option<&TeacherModels>) -> ChannelSet {
    let spec = kind.spec();
    let mut c = student;
    if let Some(t) = teacher {
        if spec.uses_kd {
            // relative-error targets come from the first park network
            c = c.union(t.channels_i);
        }
        if spec.uses_tl_correction {
            // correction consumes both park error series
            c = c.union(t.channels_i).union(t.channels_ii);
        }
    }
    c
}

/// Train and evaluate one (model, turbine, horizon) cell.
pub fn run_cell(
    kind: ModelKind,
    data: &TurbineData,
    horizon: usize,
    shared: Option<&SharedPark>,
    config: &RunConfig,
    cell_seed: u64,
) -> Result<CellMetrics> {
    let spec = kind.spec();
    let costs = &config.train;
    let window = WindowSpec::new(config.lag_count, horizon)?;
    let (train_frame, test_frame) = if kind.student_takes_nwp() {
        (&data.train_nwp, &data.test_nwp)
    } else {
        (&data.train, &data.test)
    };
    let shared = match (kind.needs_park(), shared) {
        (true, Some(s)) => Some(s),
        (true, None) => {
            return Err(
                Error::Config(format!("model {kind} needs the park stage")).at_stage("cell")
            )
        }
        (false, _) => None,
    };

    let cfg = BundleConfig {
        arch: spec.family,
        window,
        with_nwp: kind.student_takes_nwp(),
        distill: spec.uses_kd.then(|| KdConfig {
            alpha: config.alpha,
            ..KdConfig::default()
        }),
        correct: spec.uses_tl_correction.then(|| CorrectionConfig {
            tl: TlConfig {
                gamma: config.gamma,
                ..TlConfig::default()
            },
            train: TlTrainSpec {
                max_epochs: costs.correction_epochs,
                patience: costs.patience,
                batch_size: costs.batch_size,
                seed: cell_seed.wrapping_add(3),
                ..TlTrainSpec::default()
            },
        }),
        pretrain: TrainSpec {
            max_epochs: costs.student_epochs,
            patience: costs.patience,
            batch_size: costs.batch_size,
            seed: cell_seed.wrapping_add(1),
            ..TrainSpec::default()
        },
        finetune: TrainSpec {
            max_epochs: costs.distill_epochs,
            patience: costs.patience,
            batch_size: costs.batch_size,
            seed: cell_seed.wrapping_add(2),
            ..TrainSpec::default()
        },
        val_fraction: costs.val_fraction,
        augment: (config.augment.factor > 1).then(|| AugmentSpec {
            factor: config.augment.factor,
            noise_std_fraction: config.augment.noise_std_fraction,
            seed: cell_seed.wrapping_add(4),
        }),
        dropout: 0.0,
        seed: cell_seed,
    };

    let started = Instant::now();
    let (bundle, report) = build_turbine_bundle(
        shared.map(|s| &s.teacher),
        shared.map(|s| &s.relation),
        train_frame,
        &cfg,
    )?;
    let train_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let pred = predict_test(&bundle, test_frame)?;
    let n = pred.corrected_std.len();
    let infer_seconds = started.elapsed().as_secs_f64() / n.max(1) as f64;

    let touched = audited_channels(kind, report.channels, shared.map(|s| &s.teacher));
    if touched != spec.inputs {
        return Err(Error::Config(format!(
            "channel audit mismatch for {kind}: granted {}, touched {touched}",
            spec.inputs
        ))
        .at_stage("audit"));
    }

    let rmse_std = rmse(&pred.measured_std, &pred.corrected_std).stage("evaluate")?;
    let qr90 = qr(&pred.measured_kw, &pred.corrected_kw, data.capacity_kw, 0.9)
        .stage("evaluate")?;
    Ok(CellMetrics {
        rmse: rmse_std,
        qr90,
        param_count: bundle.student.param_count(),
        train_seconds,
        infer_seconds,
        channels: touched,
        kd_log: report.kd.map(|k| k.logs),
    })
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Train and evaluate every roster model on every turbine and horizon.
/// Cell failures are recorded and the run continues; the shared park stage
/// is trained once per horizon and then only read.
pub fn run_ablation(config: &RunConfig) -> Result<ForecastReport> {
    config.validate().stage("config")?;
    let data = prepare_data(config)?;

    let mut horizons = config.horizons.clone();
    horizons.sort_unstable();
    horizons.dedup();

    let mut shared: BTreeMap<usize, SharedPark> = BTreeMap::new();
    if config.roster.iter().any(|m| m.needs_park()) {
        let built = with_pool(config.workers, || {
            horizons
                .par_iter()
                .map(|&h| train_shared_park(config, &data.park_train, h))
                .collect::<Result<Vec<_>>>()
        })??;
        for s in built {
            shared.insert(s.horizon, s);
        }
    }

    let mut keys = Vec::new();
    for &kind in &config.roster {
        for (ti, t) in data.turbines.iter().enumerate() {
            for &h in &horizons {
                let label = format!("cell:{}:{}:h{h}", kind.name(), t.name);
                keys.push((kind, ti, h, seed_u64(config.seed, &label)));
            }
        }
    }

    let cells: Vec<CellOutcome> = with_pool(config.workers, || {
        keys.par_iter()
            .map(|&(kind, ti, h, cell_seed)| {
                let t = &data.turbines[ti];
                let result = run_cell(kind, t, h, shared.get(&h), config, cell_seed);
                let (metrics, error) = match result {
                    Ok(m) => (Some(m), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                CellOutcome {
                    model: kind.name().to_string(),
                    turbine: t.name.clone(),
                    horizon: h,
                    seed: cell_seed,
                    metrics,
                    error,
                }
            })
            .collect()
    })?;

    Ok(ForecastReport {
        master_seed: config.seed,
        config_digest: config.digest(),
        horizons,
        roster: config.roster.iter().map(|m| m.name().to_string()).collect(),
        turbines: data.turbines.iter().map(|t| t.name.clone()).collect(),
        cells,
    })
}

// ---------------------------------------------------------------------------
// grid search

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridParam {
    Alpha,
    Gamma,
}

impl fmt::Display for GridParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridParam::Alpha => "alpha",
            GridParam::Gamma => "gamma",
        })
    }
}

impl FromStr for GridParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(GridParam::Alpha),
            "gamma" => Ok(GridParam::Gamma),
            other => Err(Error::Config(format!(
                "unknown grid parameter '{other}'; expected alpha or gamma"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridCurve {
    pub turbine: String,
    /// RMSE per grid value, parallel to the report's `values`.
    pub rmse: Vec<f64>,
    pub argmin_value: f64,
    pub argmin_rmse: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridReport {
    pub parameter: GridParam,
    pub horizon: usize,
    pub values: Vec<f64>,
    pub curves: Vec<GridCurve>,
    /// Optima reported for the Arctic field study this generator imitates;
    /// synthetic runs need not reproduce them.
    pub reference: BTreeMap<String, f64>,
    pub master_seed: u64,
    pub config_digest: String,
}

fn reference_optima(param: GridParam) -> BTreeMap<String, f64> {
    let pairs: [(&str, f64); 5] = match param {
        GridParam::Alpha => [("T1", 0.8), ("T2", 0.8), ("T3", 0.6), ("T4", 0.8), ("T5", 1.0)],
        GridParam::Gamma => [("T1", 0.6), ("T2", 0.4), ("T3", 0.8), ("T4", 0.6), ("T5", 0.8)],
    };
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Smallest value attaining the minimum; `values` must be ascending.
fn argmin_of(values: &[f64], rmse: &[f64]) -> (f64, f64) {
    let mut best = 0;
    for i in 1..rmse.len() {
        if rmse[i] < rmse[best] {
            best = i;
        }
    }
    (values[best], rmse[best])
}

/// Sweep one loss weight over its grid, per turbine, at the first
/// configured horizon. The distillation weight is swept with the
/// correction stage disabled; the alignment weight is swept on top of a
/// single student trained at the configured distillation weight.
pub fn run_grid_search(config: &RunConfig, param: GridParam) -> Result<GridReport> {
    config.validate().stage("config")?;
    let mut values = match param {
        GridParam::Alpha => config.alpha_grid.clone(),
        GridParam::Gamma => config.gamma_grid.clone(),
    };
    values.sort_by(f64::total_cmp);
    values.dedup();

    let data = prepare_data(config)?;
    let horizon = config.horizons[0];
    let shared = train_shared_park(config, &data.park_train, horizon)?;
    let window = WindowSpec::new(config.lag_count, horizon)?;
    let costs = config.train;

    let student_cfg = |seed: u64, alpha: f64, window: WindowSpec| BundleConfig {
        arch: StudentArch::BiLstm,
        window,
        with_nwp: false,
        distill: Some(KdConfig {
            alpha,
            ..KdConfig::default()
        }),
        correct: None,
        pretrain: TrainSpec {
            max_epochs: costs.student_epochs,
            patience: costs.patience,
            batch_size: costs.batch_size,
            seed: seed.wrapping_add(1),
            ..TrainSpec::default()
        },
        finetune: TrainSpec {
            max_epochs: costs.distill_epochs,
            patience: costs.patience,
            batch_size: costs.batch_size,
            seed: seed.wrapping_add(2),
            ..TrainSpec::default()
        },
        val_fraction: costs.val_fraction,
        augment: (config.augment.factor > 1).then(|| AugmentSpec {
            factor: config.augment.factor,
            noise_std_fraction: config.augment.noise_std_fraction,
            seed: seed.wrapping_add(4),
        }),
        dropout: 0.0,
        seed,
    };

    let curves: Vec<GridCurve> = with_pool(config.workers, || {
        data.turbines
            .par_iter()
            .map(|t| -> Result<GridCurve> {
                let mut curve = Vec::with_capacity(values.len());
                match param {
                    GridParam::Alpha => {
                        for (i, &a) in values.iter().enumerate() {
                            let seed =
                                seed_u64(config.seed, &format!("grid:alpha:{i}:{}", t.name));
                            let cfg = student_cfg(seed, a, window);
                            let (bundle, _) = build_turbine_bundle(
                                Some(&shared.teacher),
                                None,
                                &t.train,
                                &cfg,
                            )?;
                            let pred = predict_test(&bundle, &t.test)?;
                            curve.push(
                                rmse(&pred.measured_std, &pred.corrected_std)
                                    .stage("evaluate")?,
                            );
                        }
                    }
                    GridParam::Gamma => {
                        // one student per turbine; each gamma refits only the
                        // correction stage on a clone
                        let base_seed =
                            seed_u64(config.seed, &format!("grid:gamma:base:{}", t.name));
                        let cfg = student_cfg(base_seed, config.alpha, window);
                        let (bundle0, report0) = build_turbine_bundle(
                            Some(&shared.teacher),
                            Some(&shared.relation),
                            &t.train,
                            &cfg,
                        )?;
                        let scaled = bundle0.scalers.apply(&t.train);
                        let full_set =
                            make_windows(&scaled, window, false, &bundle0.scalers)
                                .stage("correction")?;
                        for (i, &g) in values.iter().enumerate() {
                            let seed =
                                seed_u64(config.seed, &format!("grid:gamma:{i}:{}", t.name));
                            let mut bundle = bundle0.clone();
                            let mut report = report0.clone();
                            let ccfg = CorrectionConfig {
                                tl: TlConfig {
                                    gamma: g,
                                    ..TlConfig::default()
                                },
                                train: TlTrainSpec {
                                    max_epochs: costs.correction_epochs,
                                    patience: costs.patience,
                                    batch_size: costs.batch_size,
                                    seed: seed.wrapping_add(3),
                                    ..TlTrainSpec::default()
                                },
                            };
                            attach_correction(
                                &mut bundle,
                                &mut report,
                                &shared.teacher,
                                &shared.relation,
                                &full_set,
                                &ccfg,
                                seed,
                            )?;
                            let pred = predict_test(&bundle, &t.test)?;
                            curve.push(
                                rmse(&pred.measured_std, &pred.corrected_std)
                                    .stage("evaluate")?,
                            );
                        }
                    }
                }
                let (argmin_value, argmin_rmse) = argmin_of(&values, &curve);
                Ok(GridCurve {
                    turbine: t.name.clone(),
                    rmse: curve,
                    argmin_value,
                    argmin_rmse,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    Ok(GridReport {
        parameter: param,
        horizon,
        values,
        curves,
        reference: reference_optima(param),
        master_seed: config.seed,
        config_digest: config.digest(),
    })
}

// ---------------------------------------------------------------------------
// report emission

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(Error::Csv)
}

/// Canonical cell order for emitted tables: roster order of the model,
/// then turbine name, then horizon.
fn model_rank(name: &str) -> usize {
    ModelKind::ALL
        .iter()
        .position(|m| m.name() == name)
        .unwrap_or(ModelKind::ALL.len())
}

fn sorted_cells(report: &ForecastReport) -> Vec<&CellOutcome> {
    let mut cells: Vec<&CellOutcome> = report.cells.iter().collect();
    cells.sort_by(|a, b| {
        (model_rank(&a.model), &a.model, &a.turbine, a.horizon).cmp(&(
            model_rank(&b.model),
            &b.model,
            &b.turbine,
            b.horizon,
        ))
    });
    cells
}

/// Flatten the successful cells into metric rows, canonically ordered.
pub fn metric_rows(report: &ForecastReport) -> Vec<MetricRow> {
    sorted_cells(report)
        .into_iter()
        .filter_map(|c| {
            c.metrics.as_ref().map(|m| MetricRow {
                model: c.model.clone(),
                turbine: c.turbine.clone(),
                horizon: c.horizon,
                rmse: m.rmse,
                qr90: m.qr90,
                param_count: m.param_count,
                train_seconds: m.train_seconds,
                infer_seconds: m.infer_seconds,
            })
        })
        .collect()
}

fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["model", "turbine", "horizon", "rmse", "qr90", "param_count"])?;
    for r in rows {
        w.write_record([
            r.model.as_str(),
            r.turbine.as_str(),
            &r.horizon.to_string(),
            &format_float(r.rmse),
            &format_float(r.qr90),
            &r.param_count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_timings_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["model", "turbine", "horizon", "train_seconds", "infer_seconds"])?;
    for r in rows {
        w.write_record([
            r.model.as_str(),
            r.turbine.as_str(),
            &r.horizon.to_string(),
            &format_float(r.train_seconds),
            &format_float(r.infer_seconds),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_multistep_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["model", "turbine", "horizon", "rmse"])?;
    for r in rows {
        w.write_record([
            r.model.as_str(),
            r.turbine.as_str(),
            &r.horizon.to_string(),
            &format_float(r.rmse),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Geometric mean and population std of strictly positive values.
fn geo_stats(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() || values.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let n = values.len() as f64;
    let gm = (values.iter().map(|v| v.ln()).sum::<f64>() / n).exp();
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((gm, var.sqrt()))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GeoLine {
    pub geomean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FriedmanLine {
    pub statistic: f64,
    pub p_value: f64,
    pub columns: Vec<String>,
    pub rows: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateTable {
    pub stats: BTreeMap<String, GeoLine>,
    /// Significance of the column differences; absent when too few
    /// complete curves exist.
    pub friedman: Option<FriedmanLine>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelAuditLine {
    pub granted: ChannelSet,
    pub observed: Option<ChannelSet>,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Complexity {
    pub param_count: BTreeMap<String, usize>,
    pub edlstm_over_bilstm_params: Option<f64>,
    pub eded_tl_over_kd_tl_params: Option<f64>,
    pub eded_tl_over_kd_tl_infer_time: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureLine {
    pub model: String,
    pub turbine: String,
    pub horizon: usize,
    pub error: String,
}

/// The aggregate view written to `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct ReportSummary {
    pub master_seed: u64,
    pub config_digest: String,
    pub cells_total: usize,
    pub cells_failed: usize,
    pub failures: Vec<FailureLine>,
    pub channel_audit: BTreeMap<String, ChannelAuditLine>,
    /// Geometric mean RMSE pooled over turbines and horizons, per model.
    pub overall_rmse_by_model: BTreeMap<String, GeoLine>,
    /// Same pooling per turbine.
    pub overall_rmse_by_turbine: BTreeMap<String, GeoLine>,
    pub rising_rates_by_turbine: RateTable,
    pub rising_rates_by_model: RateTable,
    /// Relative qualified-rate gain of the full framework over each
    /// competitor, pooled over turbines and horizons.
    pub qr90_increase_vs: BTreeMap<String, GeoLine>,
    pub complexity: Complexity,
}

/// Inter-step rate curves keyed by (model, turbine), only for cells whose
/// whole horizon curve succeeded.
fn rate_curves(report: &ForecastReport) -> BTreeMap<(String, String), Vec<f64>> {
    let mut out = BTreeMap::new();
    for model in &report.roster {
        for turbine in &report.turbines {
            let curve: Vec<f64> = report
                .horizons
                .iter()
                .filter_map(|&h| report.cell(model, turbine, h).map(|m| m.rmse))
                .collect();
            if curve.len() != report.horizons.len() {
                continue;
            }
            if let Ok(rates) = step_rates(&curve) {
                out.insert((model.clone(), turbine.clone()), rates);
            }
        }
    }
    out
}

fn rate_table_over<'a>(
    curves: &BTreeMap<(String, String), Vec<f64>>,
    columns: &[String],
    // picks the column key and the pooled-over key out of a curve key
    split: impl Fn(&'a (String, String)) -> (&'a String, &'a String),
    curve_keys: impl Iterator<Item = &'a (String, String)>,
) -> RateTable {
    let mut pooled: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut by_row: BTreeMap<String, BTreeMap<String, &Vec<f64>>> = BTreeMap::new();
    for key in curve_keys {
        let (col, row) = split(key);
        if !columns.contains(col) {
            continue;
        }
        let rates = &curves[key];
        pooled.entry(col.clone()).or_default().extend_from_slice(rates);
        by_row.entry(row.clone()).or_default().insert(col.clone(), rates);
    }

    let stats = pooled
        .iter()
        .filter_map(|(col, rates)| {
            rate_stats(rates).ok().map(|(g, s)| (col.clone(), GeoLine { geomean: g, std: s }))
        })
        .collect();

    // the rank test needs complete rows: one row per (pooled key, step)
    // with a rate in every column
    let mut table: Vec<Vec<f64>> = Vec::new();
    for per_col in by_row.values() {
        if columns.iter().any(|c| !per_col.contains_key(c)) {
            continue;
        }
        let steps = per_col[&columns[0]].len();
        for s in 0..steps {
            table.push(columns.iter().map(|c| per_col[c][s]).collect());
        }
    }
    let friedman = friedman(&table).ok().map(|f| FriedmanLine {
        statistic: f.statistic,
        p_value: f.p_value,
        columns: columns.to_vec(),
        rows: table.len(),
    });
    RateTable { stats, friedman }
}

fn build_summary(report: &ForecastReport) -> ReportSummary {
    let failures = sorted_cells(report)
        .into_iter()
        .filter_map(|c| {
            c.error.as_ref().map(|e| FailureLine {
                model: c.model.clone(),
                turbine: c.turbine.clone(),
                horizon: c.horizon,
                error: e.clone(),
            })
        })
        .collect::<Vec<_>>();

    let mut channel_audit = BTreeMap::new();
    for name in &report.roster {
        let Ok(kind) = name.parse::<ModelKind>() else { continue };
        let granted = kind.spec().inputs;
        let observed = report
            .cells
            .iter()
            .filter(|c| &c.model == name)
            .find_map(|c| c.metrics.as_ref().map(|m| m.channels));
        channel_audit.insert(
            name.clone(),
            ChannelAuditLine {
                granted,
                observed,
                ok: observed.is_none_or(|o| o == granted),
            },
        );
    }

    let pool_rmse = |pred: &dyn Fn(&CellOutcome) -> bool| -> Vec<f64> {
        report
            .cells
            .iter()
            .filter(|c| pred(c))
            .filter_map(|c| c.metrics.as_ref().map(|m| m.rmse))
            .collect()
    };
    let mut overall_rmse_by_model = BTreeMap::new();
    for model in &report.roster {
        if let Some((g, s)) = geo_stats(&pool_rmse(&|c: &CellOutcome| &c.model == model)) {
            overall_rmse_by_model.insert(model.clone(), GeoLine { geomean: g, std: s });
        }
    }
    let mut overall_rmse_by_turbine = BTreeMap::new();
    for turbine in &report.turbines {
        if let Some((g, s)) = geo_stats(&pool_rmse(&|c: &CellOutcome| &c.turbine == turbine)) {
            overall_rmse_by_turbine.insert(turbine.clone(), GeoLine { geomean: g, std: s });
        }
    }

    let curves = rate_curves(report);
    let rising_rates_by_turbine = rate_table_over(
        &curves,
        &report.turbines,
        |(model, turbine)| (turbine, model),
        curves.keys(),
    );
    let rising_rates_by_model = rate_table_over(
        &curves,
        &report.roster,
        |(model, turbine)| (model, turbine),
        curves.keys(),
    );

    let kd_tl = ModelKind::KdTl.name();
    let mut qr90_increase_vs = BTreeMap::new();
    if report.roster.iter().any(|m| m == kd_tl) {
        for other in report.roster.iter().filter(|m| *m != kd_tl) {
            let mut rates = Vec::new();
            for turbine in &report.turbines {
                for &h in &report.horizons {
                    let (Some(ours), Some(theirs)) =
                        (report.cell(kd_tl, turbine, h), report.cell(other, turbine, h))
                    else {
                        continue;
                    };
                    if theirs.qr90 > 0.0 {
                        rates.push(ours.qr90 / theirs.qr90 - 1.0);
                    }
                }
            }
            if let Ok((g, s)) = rate_stats(&rates) {
                qr90_increase_vs.insert(other.clone(), GeoLine { geomean: g, std: s });
            }
        }
    }

    let mut param_count = BTreeMap::new();
    let mut infer_means = BTreeMap::new();
    for model in &report.roster {
        let cells: Vec<&CellMetrics> = report
            .cells
            .iter()
            .filter(|c| &c.model == model)
            .filter_map(|c| c.metrics.as_ref())
            .collect();
        if let Some(first) = cells.first() {
            param_count.insert(model.clone(), first.param_count);
        }
        if !cells.is_empty() {
            let mean =
                cells.iter().map(|m| m.infer_seconds).sum::<f64>() / cells.len() as f64;
            infer_means.insert(model.clone(), mean);
        }
    }
    let ratio = |map: &BTreeMap<String, usize>, a: ModelKind, b: ModelKind| {
        match (map.get(a.name()), map.get(b.name())) {
            (Some(&x), Some(&y)) if y > 0 => Some(x as f64 / y as f64),
            _ => None,
        }
    };
    let time_ratio = match (
        infer_means.get(ModelKind::EdedTl.name()),
        infer_means.get(ModelKind::KdTl.name()),
    ) {
        (Some(&x), Some(&y)) if y > 0.0 => Some(x / y),
        _ => None,
    };
    let complexity = Complexity {
        edlstm_over_bilstm_params: ratio(&param_count, ModelKind::EdLstm, ModelKind::BiLstm),
        eded_tl_over_kd_tl_params: ratio(&param_count, ModelKind::EdedTl, ModelKind::KdTl),
        eded_tl_over_kd_tl_infer_time: time_ratio,
        param_count,
    };

    ReportSummary {
        master_seed: report.master_seed,
        config_digest: report.config_digest.clone(),
        cells_total: report.cells.len(),
        cells_failed: failures.len(),
        failures,
        channel_audit,
        overall_rmse_by_model,
        overall_rmse_by_turbine,
        rising_rates_by_turbine,
        rising_rates_by_model,
        qr90_increase_vs,
        complexity,
    }
}

fn write_geo_csv(
    header: [&str; 3],
    lines: &BTreeMap<String, GeoLine>,
    order: &[String],
    path: &Path,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for name in order {
        if let Some(line) = lines.get(name) {
            w.write_record([
                name.as_str(),
                &format_float(line.geomean),
                &format_float(line.std),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_overall_csv(summary: &ReportSummary, report: &ForecastReport, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["perspective", "name", "geomean_rmse", "std"])?;
    for model in &report.roster {
        if let Some(line) = summary.overall_rmse_by_model.get(model) {
            w.write_record([
                "model",
                model.as_str(),
                &format_float(line.geomean),
                &format_float(line.std),
            ])?;
        }
    }
    for turbine in &report.turbines {
        if let Some(line) = summary.overall_rmse_by_turbine.get(turbine) {
            w.write_record([
                "turbine",
                turbine.as_str(),
                &format_float(line.geomean),
                &format_float(line.std),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_kd_logs(report: &ForecastReport, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let logged: Vec<&CellOutcome> = sorted_cells(report)
        .into_iter()
        .filter(|c| c.metrics.as_ref().is_some_and(|m| m.kd_log.is_some()))
        .collect();
    if logged.is_empty() {
        return Ok(());
    }
    let sub = dir.join("kd_logs");
    create_out_dir(&sub)?;
    for cell in logged {
        let log = cell.metrics.as_ref().unwrap().kd_log.as_ref().unwrap();
        let name = format!("kd_logs/{}_{}_h{}.csv", cell.model, cell.turbine, cell.horizon);
        let path = dir.join(&name);
        let mut w = csv_writer(&path)?;
        w.write_record(["epoch", "hard_term", "compare_term", "total", "gate_open_fraction"])?;
        for row in log {
            w.write_record([
                &row.epoch.to_string(),
                &format_float(row.hard_term),
                &format_float(row.compare_term),
                &format_float(row.total),
                &format_float(row.gate_open_fraction),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        files.push(name);
    }
    Ok(())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    master_seed: u64,
    config_digest: &'a str,
    tool_version: &'static str,
    files: Vec<String>,
}

/// Write every artifact of a comparison run: the deterministic metric
/// table, timings, plot CSVs, the aggregate summary, per-cell distillation
/// logs, the replayable report, and a manifest naming them all.
pub fn emit_report(report: &ForecastReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_out_dir(out_dir)?;
    let rows = metric_rows(report);
    let summary = build_summary(report);
    let mut files: Vec<String> = Vec::new();

    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = out_dir.join(name);
        f(&path)?;
        files.push(name.to_string());
        Ok(())
    };

    emit("metrics.csv", &|p| write_metrics_csv(&rows, p))?;
    emit("timings.csv", &|p| write_timings_csv(&rows, p))?;
    emit("multistep_rmse.csv", &|p| write_multistep_csv(&rows, p))?;
    emit("overall_rmse.csv", &|p| write_overall_csv(&summary, report, p))?;
    emit("rising_rates_by_turbine.csv", &|p| {
        write_geo_csv(
            ["turbine", "geomean_rate", "std"],
            &summary.rising_rates_by_turbine.stats,
            &report.turbines,
            p,
        )
    })?;
    emit("rising_rates_by_model.csv", &|p| {
        write_geo_csv(
            ["model", "geomean_rate", "std"],
            &summary.rising_rates_by_model.stats,
            &report.roster,
            p,
        )
    })?;
    emit("qr90_increase.csv", &|p| {
        write_geo_csv(
            ["versus", "geomean_increase", "std"],
            &summary.qr90_increase_vs,
            &report.roster,
            p,
        )
    })?;
    emit("summary.json", &|p| {
        let text = serde_json::to_string_pretty(&summary)?;
        std::fs::write(p, text).map_err(|e| Error::io(p.display().to_string(), e))
    })?;
    emit("report.json", &|p| report.save(p))?;
    write_kd_logs(report, out_dir, &mut files)?;

    files.sort();
    let manifest = RunManifest {
        master_seed: report.master_seed,
        config_digest: &report.config_digest,
        tool_version: env!("CARGO_PKG_VERSION"),
        files: files.clone(),
    };
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, text)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    files.push("manifest.json".to_string());

    Ok(files.into_iter().map(|f| out_dir.join(f)).collect())
}

/// Write the sweep curves next to the comparison artifacts:
/// `grid_<parameter>.csv` plus a JSON twin with argmins and the reference
/// optima.
pub fn emit_grid_report(report: &GridReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_out_dir(out_dir)?;
    let csv_path = out_dir.join(format!("grid_{}.csv", report.parameter));
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["turbine", "value", "rmse", "is_argmin"])?;
    for curve in &report.curves {
        for (v, r) in report.values.iter().zip(&curve.rmse) {
            w.write_record([
                curve.turbine.as_str(),
                &format_float(*v),
                &format_float(*r),
                if *v == curve.argmin_value { "true" } else { "false" },
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    let json_path = out_dir.join(format!("grid_{}.json", report.parameter));
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(&json_path, text)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    Ok(vec![csv_path, json_path])
}
