//! The park-to-turbine forecasting pipeline: two park teacher networks and
//! the relation between their error sequences, distilled turbine students,
//! transfer-adapted error correction of training predictions, and a
//! train-fitted corrector that stands in for the correction at test time,
//! where true errors are unknowable.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    augment_white_noise, make_windows, AugmentSpec, ChannelSet, FrameScalers, SeriesFrame,
    SupervisedSet, WindowSpec,
};
use crate::distill::{rel_error, train_student_kd, KdConfig, KdReport, TeacherErrors};
use crate::error::{Error, Result, StageExt};
use crate::nn::ModelContainer;
use crate::recurrent::{
    predict_set, train_network, BiLstmNet, EdLstmNet, TrainReport, TrainSpec, TurbineNet,
};
use crate::transfer::{self, RegWeights, TlConfig, TlFitReport, TlNet, TlTrainSpec};

/// Width of the error-relation windows, fixed by the univariate net shape.
pub const RELATION_WINDOW: usize = 7;
/// Minimum number of stride-1 windows the relation fit demands.
pub const MIN_RELATION_WINDOWS: usize = 100;

// ---------------------------------------------------------------------------
// error series

/// Standardized residuals `measured - predicted` with their target hours.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub times: Vec<DateTime<Utc>>,
    pub residuals: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(times: Vec<DateTime<Utc>>, residuals: Vec<f64>) -> Result<Self> {
        if times.len() != residuals.len() {
            return Err(Error::LengthMismatch(times.len(), residuals.len()));
        }
        Ok(ErrorSeries { times, residuals })
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.residuals.iter().sum::<f64>() / self.len() as f64
    }

    fn from_predictions(net: &TurbineNet, set: &SupervisedSet) -> ErrorSeries {
        let preds = predict_set(net, set);
        let residuals = set
            .targets
            .iter()
            .zip(&preds)
            .map(|(t, p)| t - p)
            .collect();
        ErrorSeries {
            times: set.target_times.clone(),
            residuals,
        }
    }
}

/// Stride-1 windows of a series; returns nothing if the series is shorter
/// than the window.
fn series_windows(values: &[f64], width: usize) -> Vec<Vec<f64>> {
    if values.len() < width {
        return Vec::new();
    }
    values.windows(width).map(|w| w.to_vec()).collect()
}

// ---------------------------------------------------------------------------
// park teachers

#[derive(Clone, Debug)]
pub struct TeacherConfig {
    pub train: TrainSpec,
    /// Rotating cross-validation folds used to pick the final epoch count.
    pub folds: usize,
    /// Relative-error denominator floor, fraction of capacity.
    pub denom_floor: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            train: TrainSpec::default(),
            folds: 10,
            denom_floor: 0.01,
        }
    }
}

/// Both park networks plus everything the turbine stage reads from them:
/// training-split error series and the frozen per-hour relative errors.
#[derive(Clone, Debug)]
pub struct TeacherModels {
    /// Trained on power and speed lags only.
    pub f_i: TurbineNet,
    /// Same inputs plus the forecast speed at the target hour.
    pub f_ii: TurbineNet,
    pub error_i: ErrorSeries,
    pub error_ii: ErrorSeries,
    pub rel_errors: TeacherErrors,
    pub scalers: FrameScalers,
    pub window: WindowSpec,
    pub capacity_kw: f64,
    /// Fold-selected epoch counts for the two networks.
    pub epochs: (usize, usize),
    /// Channels the first network's training windows touched.
    pub channels_i: ChannelSet,
    /// Same for the second network (adds the forecast channel).
    pub channels_ii: ChannelSet,
}

pub fn train_park_teachers(
    park_train: &SeriesFrame,
    window: WindowSpec,
    cfg: &TeacherConfig,
) -> Result<TeacherModels> {
    if park_train.nwp.is_none() {
        return Err(Error::Config(format!(
            "park frame '{}' lacks the forecast channel the second teacher needs",
            park_train.name
        ))
        .at_stage("teacher"));
    }
    let scalers = FrameScalers::fit(park_train).stage("teacher")?;
    let scaled = scalers.apply(park_train);
    let set_i = make_windows(&scaled, window, false, &scalers).stage("teacher")?;
    let set_ii = make_windows(&scaled, window, true, &scalers).stage("teacher")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let net_i = TurbineNet::Ed(EdLstmNet::new(set_i.seq_dim(), 0.0, &mut rng));
    let net_ii = TurbineNet::Ed(EdLstmNet::new(set_ii.seq_dim(), 0.0, &mut rng));

    let (f_i, epochs_i) = train_with_folds(net_i, &set_i, cfg).stage("teacher")?;
    let (f_ii, epochs_ii) = train_with_folds(net_ii, &set_ii, cfg).stage("teacher")?;

    let error_i = ErrorSeries::from_predictions(&f_i, &set_i);
    let error_ii = ErrorSeries::from_predictions(&f_ii, &set_ii);
    debug_assert_eq!(error_i.times, error_ii.times);

    let rel: Vec<f64> = {
        let preds = predict_set(&f_i, &set_i);
        let power = set_i.scalers.power;
        preds
            .iter()
            .zip(&set_i.targets)
            .map(|(p, t)| {
                rel_error(
                    power.invert(*t),
                    power.invert(*p),
                    set_i.capacity_kw,
                    cfg.denom_floor,
                )
            })
            .collect()
    };
    let rel_errors = TeacherErrors::new(&set_i.target_times, &rel).stage("teacher")?;

    Ok(TeacherModels {
        f_i,
        f_ii,
        error_i,
        error_ii,
        rel_errors,
        scalers,
        window,
        capacity_kw: park_train.capacity_kw,
        epochs: (epochs_i, epochs_ii),
        channels_i: set_i.channels,
        channels_ii: set_ii.channels,
    })
}

fn fold_ranges(n: usize, folds: usize) -> Vec<Range<usize>> {
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let len = base + usize::from(k < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

fn concat_sets(a: &SupervisedSet, b: &SupervisedSet) -> SupervisedSet {
    let mut out = a.clone();
    out.power_lags.extend_from_slice(&b.power_lags);
    out.speed_lags.extend_from_slice(&b.speed_lags);
    out.nwp_at_target.extend_from_slice(&b.nwp_at_target);
    out.targets.extend_from_slice(&b.targets);
    out.target_times.extend_from_slice(&b.target_times);
    out.base_len = out.targets.len();
    out
}

/// Rotate chronological folds to pick an epoch count, then retrain the
/// initial network on the whole set for exactly that many epochs.
fn train_with_folds(
    net: TurbineNet,
    set: &SupervisedSet,
    cfg: &TeacherConfig,
) -> Result<(TurbineNet, usize)> {
    if cfg.folds < 2 {
        return Err(Error::Config(format!(
            "fold rotation needs at least 2 folds, got {}",
            cfg.folds
        )));
    }
    if set.len() < cfg.folds {
        return Err(Error::Config(format!(
            "{} windows cannot be split into {} folds",
            set.len(),
            cfg.folds
        )));
    }
    let mut best_epochs = Vec::with_capacity(cfg.folds);
    for range in fold_ranges(set.len(), cfg.folds) {
        let val = set.slice(range.clone());
        let head = set.slice(0..range.start);
        let tail = set.slice(range.end..set.len());
        let train = if head.is_empty() {
            tail
        } else if tail.is_empty() {
            head
        } else {
            concat_sets(&head, &tail)
        };
        let mut fold_net = net.clone();
        let report = train_network(&mut fold_net, &train, Some(&val), &cfg.train)?;
        best_epochs.push(report.best_epoch + 1);
    }
    best_epochs.sort_unstable();
    let selected = best_epochs[best_epochs.len() / 2];

    let mut final_net = net;
    let replay = TrainSpec {
        max_epochs: selected,
        ..cfg.train.clone()
    };
    train_network(&mut final_net, set, None, &replay)?;
    Ok((final_net, selected))
}

// ---------------------------------------------------------------------------
// error relation

/// The park-level map from one error sequence to the other, fitted on
/// width-7 stride-1 windows.
#[derive(Clone, Debug)]
pub struct ErrorRelation {
    pub g: TlNet,
    pub train_mse: f64,
    pub report: TlFitReport,
}

pub fn fit_error_relation(
    error_i: &ErrorSeries,
    error_ii: &ErrorSeries,
    reg: &RegWeights,
    spec: &TlTrainSpec,
) -> Result<ErrorRelation> {
    if error_i.len() != error_ii.len() {
        return Err(Error::LengthMismatch(error_i.len(), error_ii.len()).at_stage("relation"));
    }
    if error_i.times != error_ii.times {
        return Err(Error::NoOverlap.at_stage("relation"));
    }
    let xs = series_windows(&error_i.residuals, RELATION_WINDOW);
    let ys = series_windows(&error_ii.residuals, RELATION_WINDOW);
    if xs.len() < MIN_RELATION_WINDOWS {
        return Err(Error::TooFewWindows {
            got: xs.len(),
            need: MIN_RELATION_WINDOWS,
        }
        .at_stage("relation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut g = TlNet::new(&mut rng);
    let report = transfer::fit(&mut g, &xs, &ys, reg, spec).stage("relation")?;
    let train_mse = mean_window_mse(&g, &xs, &ys);
    Ok(ErrorRelation { g, train_mse, report })
}

fn mean_window_mse(g: &TlNet, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let out = g.predict(x);
        sum += out
            .iter()
            .zip(y)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / y.len() as f64;
    }
    sum / xs.len() as f64
}

/// Run the relation over a series causally: window ending at each position,
/// last output taken as that position's value. The first six positions
/// reuse the edge value as left padding; the count of such padded positions
/// is returned alongside.
pub fn apply_relation(g: &TlNet, series: &[f64]) -> (Vec<f64>, usize) {
    let n = series.len();
    if n == 0 {
        return (Vec::new(), 0);
    }
    let mut out = Vec::with_capacity(n);
    let mut window = vec![0.0; RELATION_WINDOW];
    for i in 0..n {
        for (k, slot) in window.iter_mut().enumerate() {
            let idx = (i + k).saturating_sub(RELATION_WINDOW - 1);
            *slot = series[idx.min(n - 1)];
        }
        out.push(g.predict(&window)[RELATION_WINDOW - 1]);
    }
    (out, n.min(RELATION_WINDOW - 1))
}

// ---------------------------------------------------------------------------
// turbine bundles

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudentArch {
    BiLstm,
    EdLstm,
}

/// Transfer-correction stage settings: the adaptation config carries gamma.
#[derive(Clone, Debug)]
pub struct CorrectionConfig {
    pub tl: TlConfig,
    pub train: TlTrainSpec,
}

#[derive(Clone, Debug)]
pub struct BundleConfig {
    pub arch: StudentArch,
    pub window: WindowSpec,
    /// Feed the forecast speed at the target hour as a third input channel.
    pub with_nwp: bool,
    /// Teacher-guided training when set; plain regression otherwise.
    pub distill: Option<KdConfig>,
    /// Error-correction transfer when set.
    pub correct: Option<CorrectionConfig>,
    pub pretrain: TrainSpec,
    pub finetune: TrainSpec,
    pub val_fraction: f64,
    pub augment: Option<AugmentSpec>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            arch: StudentArch::BiLstm,
            window: WindowSpec {
                lag_count: 7,
                horizon: 6,
            },
            with_nwp: false,
            distill: None,
            correct: None,
            pretrain: TrainSpec::default(),
            finetune: TrainSpec::default(),
            val_fraction: 0.1,
            augment: None,
            dropout: 0.0,
            seed: 0,
        }
    }
}

/// Everything needed to predict one turbine at one horizon.
#[derive(Clone, Debug)]
pub struct TurbineBundle {
    pub student: TurbineNet,
    /// Turbine-adapted error relation, when correction is on.
    pub relation: Option<TlNet>,
    /// Maps windows of raw predictions to corrected ones at test time.
    pub corrector: Option<TlNet>,
    pub scalers: FrameScalers,
    pub window: WindowSpec,
    pub with_nwp: bool,
    pub capacity_kw: f64,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
}

/// Diagnostics from bundle construction.
#[derive(Clone, Debug)]
pub struct BundleReport {
    pub student: Option<TrainReport>,
    pub kd: Option<KdReport>,
    pub relation: Option<TlFitReport>,
    pub corrector: Option<TlFitReport>,
    /// Train-split RMSE before and after correction, standardized units.
    pub train_rmse_raw: f64,
    pub train_rmse_corrected: f64,
    /// Channels the student's own training windows touched.
    pub channels: ChannelSet,
}

pub fn build_turbine_bundle(
    teacher: Option<&TeacherModels>,
    relation: Option<&ErrorRelation>,
    turbine_train: &SeriesFrame,
    cfg: &BundleConfig,
) -> Result<(TurbineBundle, BundleReport)> {
    if let Some(t) = teacher {
        if t.window != cfg.window {
            return Err(Error::Config(format!(
                "park stage was trained at lag {} horizon {} but the bundle asks for lag {} horizon {}",
                t.window.lag_count, t.window.horizon, cfg.window.lag_count, cfg.window.horizon
            ))
            .at_stage("student"));
        }
    }
    let scalers = FrameScalers::fit(turbine_train).stage("student")?;
    let scaled = scalers.apply(turbine_train);
    let full_set = make_windows(&scaled, cfg.window, cfg.with_nwp, &scalers).stage("student")?;
    let (fit_set, val_set) = full_set.split_tail(cfg.val_fraction).stage("student")?;
    let train_set = match &cfg.augment {
        Some(spec) => augment_white_noise(&fit_set, spec).stage("student")?,
        None => fit_set,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut student = match cfg.arch {
        StudentArch::BiLstm => {
            TurbineNet::Bi(BiLstmNet::new(train_set.seq_dim(), cfg.dropout, &mut rng))
        }
        StudentArch::EdLstm => {
            TurbineNet::Ed(EdLstmNet::new(train_set.seq_dim(), cfg.dropout, &mut rng))
        }
    };

    let mut student_report = None;
    let mut kd_report = None;
    let mut alpha = None;
    match &cfg.distill {
        Some(kd) => {
            let teacher = teacher.ok_or_else(|| {
                Error::Config("distillation requested but no park teacher was provided".into())
                    .at_stage("distill")
            })?;
            let report = train_student_kd(
                &mut student,
                &train_set,
                &val_set,
                &teacher.rel_errors,
                kd,
                &cfg.pretrain,
                &cfg.finetune,
            )
            .stage("distill")?;
            alpha = Some(kd.alpha);
            kd_report = Some(report);
        }
        None => {
            let report =
                train_network(&mut student, &train_set, Some(&val_set), &cfg.pretrain)
                    .stage("student")?;
            student_report = Some(report);
        }
    }

    // correction works off the clean chronological windows of the whole
    // training split, not the augmented copies
    let preds = predict_set(&student, &full_set);
    let train_rmse_raw = rmse_of(&full_set.targets, &preds);

    let mut bundle = TurbineBundle {
        student,
        relation: None,
        corrector: None,
        scalers,
        window: cfg.window,
        with_nwp: cfg.with_nwp,
        capacity_kw: turbine_train.capacity_kw,
        alpha,
        gamma: None,
    };
    let mut report = BundleReport {
        student: student_report,
        kd: kd_report,
        relation: None,
        corrector: None,
        train_rmse_raw,
        train_rmse_corrected: train_rmse_raw,
        channels: full_set.channels,
    };

    let Some(correct) = &cfg.correct else {
        return Ok((bundle, report));
    };
    let teacher = teacher.ok_or_else(|| {
        Error::Config("correction requested but no park teacher was provided".into())
            .at_stage("correction")
    })?;
    let relation = relation.ok_or_else(|| {
        Error::Config("correction requested but no park error relation was provided".into())
            .at_stage("correction")
    })?;
    attach_correction(&mut bundle, &mut report, teacher, relation, &full_set, correct, cfg.seed)?;
    Ok((bundle, report))
}

/// Fit the correction stage onto an already trained bundle: adapt the park
/// error relation to this turbine and learn the test-time corrector.
/// Separate from bundle construction so a gamma sweep can reuse one student.
/// `full_set` must be the clean training-split windows the bundle was built
/// from (no augmented copies).
pub fn attach_correction(
    bundle: &mut TurbineBundle,
    report: &mut BundleReport,
    teacher: &TeacherModels,
    relation: &ErrorRelation,
    full_set: &SupervisedSet,
    correct: &CorrectionConfig,
    seed: u64,
) -> Result<()> {
    let preds = predict_set(&bundle.student, full_set);

    // turbine error sequence on the training split, true labels allowed here
    let residuals: Vec<f64> = full_set
        .targets
        .iter()
        .zip(&preds)
        .map(|(t, p)| t - p)
        .collect();

    // supervision comes from the park's second error series at the same
    // hours; windows missing any hour are dropped
    let park_ii: HashMap<DateTime<Utc>, f64> = teacher
        .error_ii
        .times
        .iter()
        .copied()
        .zip(teacher.error_ii.residuals.iter().copied())
        .collect();
    let mut target_xs = Vec::new();
    let mut target_ys = Vec::new();
    if residuals.len() >= RELATION_WINDOW {
        for start in 0..=residuals.len() - RELATION_WINDOW {
            let times = &full_set.target_times[start..start + RELATION_WINDOW];
            let ys: Option<Vec<f64>> = times.iter().map(|t| park_ii.get(t).copied()).collect();
            if let Some(ys) = ys {
                target_xs.push(residuals[start..start + RELATION_WINDOW].to_vec());
                target_ys.push(ys);
            }
        }
    }
    if target_xs.len() < MIN_RELATION_WINDOWS {
        return Err(Error::TooFewWindows {
            got: target_xs.len(),
            need: MIN_RELATION_WINDOWS,
        }
        .at_stage("correction"));
    }
    let source_xs = series_windows(&teacher.error_i.residuals, RELATION_WINDOW);
    let (adapted, relation_report) = transfer::fine_tune(
        &relation.g,
        &target_xs,
        &target_ys,
        &source_xs,
        &correct.tl,
        &correct.train,
    )
    .stage("correction")?;

    // corrected training predictions: raw plus the estimated second error
    let (estimated, _) = apply_relation(&adapted, &residuals);
    let corrected: Vec<f64> = preds.iter().zip(&estimated).map(|(p, e)| p + e).collect();
    report.train_rmse_corrected = rmse_of(&full_set.targets, &corrected);

    // the test-time stand-in: learn raw-window -> corrected-window on the
    // training pairs, no labels involved
    let corrector_xs = series_windows(&preds, RELATION_WINDOW);
    let corrector_ys = series_windows(&corrected, RELATION_WINDOW);
    let mut corrector_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut corrector = TlNet::new(&mut corrector_rng);
    let corrector_report = transfer::fit(
        &mut corrector,
        &corrector_xs,
        &corrector_ys,
        &correct.tl.reg,
        &correct.train,
    )
    .stage("corrector")?;

    bundle.relation = Some(adapted);
    bundle.corrector = Some(corrector);
    bundle.gamma = Some(correct.tl.gamma);
    report.relation = Some(relation_report);
    report.corrector = Some(corrector_report);
    Ok(())
}

fn rmse_of(targets: &[f64], preds: &[f64]) -> f64 {
    let n = targets.len().max(1) as f64;
    (targets
        .iter()
        .zip(preds)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / n)
        .sqrt()
}

// ---------------------------------------------------------------------------
// test-time prediction

/// Final forecasts for a held-out set. `raw` is the student's own output,
/// `corrected` the corrector's version of it; both standardized. Physical
/// predictions and the measured series ride along for metric computation.
#[derive(Clone, Debug)]
pub struct TestPrediction {
    pub times: Vec<DateTime<Utc>>,
    pub raw_std: Vec<f64>,
    pub corrected_std: Vec<f64>,
    pub corrected_kw: Vec<f64>,
    pub measured_std: Vec<f64>,
    pub measured_kw: Vec<f64>,
    /// Leading positions whose correction window was left-edge padded.
    pub padded_prefix: usize,
}

/// Predict a prepared window set. The path from inputs to predictions never
/// reads `set.targets`; they are only copied into the output for metrics.
pub fn predict_test_set(bundle: &TurbineBundle, set: &SupervisedSet) -> TestPrediction {
    let raw = predict_set(&bundle.student, set);
    let (corrected, padded_prefix) = match &bundle.corrector {
        Some(corrector) => {
            let n = raw.len();
            let mut out = Vec::with_capacity(n);
            let mut window = vec![0.0; RELATION_WINDOW];
            for i in 0..n {
                for (k, slot) in window.iter_mut().enumerate() {
                    let idx = (i + k).saturating_sub(RELATION_WINDOW - 1);
                    *slot = raw[idx.min(n - 1)];
                }
                out.push(corrector.predict(&window)[RELATION_WINDOW - 1]);
            }
            (out, n.min(RELATION_WINDOW - 1))
        }
        None => (raw.clone(), 0),
    };
    let power = bundle.scalers.power;
    TestPrediction {
        times: set.target_times.clone(),
        corrected_kw: corrected.iter().map(|v| power.invert(*v)).collect(),
        measured_std: set.targets.clone(),
        measured_kw: set.targets.iter().map(|v| power.invert(*v)).collect(),
        raw_std: raw,
        corrected_std: corrected,
        padded_prefix,
    }
}

/// Standardize a raw test frame with the bundle's training-split scalers,
/// window it, and predict.
pub fn predict_test(bundle: &TurbineBundle, test_frame: &SeriesFrame) -> Result<TestPrediction> {
    let scaled = bundle.scalers.apply(test_frame);
    let set =
        make_windows(&scaled, bundle.window, bundle.with_nwp, &bundle.scalers).stage("predict")?;
    Ok(predict_test_set(bundle, &set))
}

// ---------------------------------------------------------------------------
// persistence

#[derive(Serialize, Deserialize)]
struct BundleFile {
    format_version: u32,
    student: ModelContainer,
    relation: Option<ModelContainer>,
    corrector: Option<ModelContainer>,
    scalers: FrameScalers,
    window: WindowSpec,
    #[serde(default)]
    with_nwp: bool,
    capacity_kw: f64,
    alpha: Option<f64>,
    gamma: Option<f64>,
}

const BUNDLE_FORMAT_VERSION: u32 = 1;

impl TurbineBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = BundleFile {
            format_version: BUNDLE_FORMAT_VERSION,
            student: self.student.to_container(),
            relation: self.relation.as_ref().map(|g| g.to_container()),
            corrector: self.corrector.as_ref().map(|c| c.to_container()),
            scalers: self.scalers.clone(),
            window: self.window,
            with_nwp: self.with_nwp,
            capacity_kw: self.capacity_kw,
            alpha: self.alpha,
            gamma: self.gamma,
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: BundleFile = serde_json::from_str(&text)?;
        if file.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::BadFormatVersion {
                found: file.format_version,
                expected: BUNDLE_FORMAT_VERSION,
            });
        }
        Ok(TurbineBundle {
            student: TurbineNet::from_container(&file.student)?,
            relation: file.relation.as_ref().map(TlNet::from_container).transpose()?,
            corrector: file.corrector.as_ref().map(TlNet::from_container).transpose()?,
            scalers: file.scalers,
            window: file.window,
            with_nwp: file.with_nwp,
            capacity_kw: file.capacity_kw,
            alpha: file.alpha,
            gamma: file.gamma,
        })
    }
}
