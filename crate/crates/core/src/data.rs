//! Data preparation: 10-minute SCADA-style ingestion, hourly averaging,
//! standardization, supervised windowing and white-noise augmentation.
//!
//! Conventions fixed here and relied on everywhere else:
//! * raw series live on a strict 10-minute UTC grid (gaps allowed),
//! * hourly aggregation keeps an hour when at least 3 of its 6 slots are
//!   present, and drops it otherwise,
//! * standardization uses the population divisor `n`,
//! * chronological splits floor the train length, and scalers are fitted on
//!   the training part only.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, DurationRound, TimeZone, Timelike, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RAW_STEP_MINUTES: i64 = 10;
pub const SAMPLES_PER_HOUR: usize = 6;
/// Minimum raw samples for an hourly mean to count.
pub const MIN_SAMPLES_PER_HOUR: usize = 3;

// ---------------------------------------------------------------------------
// channel provenance

/// Which physical channels a piece of data was derived from. Used to audit
/// that each comparison model touches exactly the inputs its row in the
/// roster grants it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const EMPTY: ChannelSet = ChannelSet(0);
    pub const PARK_POWER: ChannelSet = ChannelSet(1);
    pub const PARK_SPEED: ChannelSet = ChannelSet(1 << 1);
    pub const PARK_NWP: ChannelSet = ChannelSet(1 << 2);
    pub const TURBINE_POWER: ChannelSet = ChannelSet(1 << 3);
    pub const TURBINE_SPEED: ChannelSet = ChannelSet(1 << 4);

    const ALL: [(ChannelSet, &'static str); 5] = [
        (ChannelSet::PARK_POWER, "park_power"),
        (ChannelSet::PARK_SPEED, "park_speed"),
        (ChannelSet::PARK_NWP, "park_nwp"),
        (ChannelSet::TURBINE_POWER, "turbine_power"),
        (ChannelSet::TURBINE_SPEED, "turbine_speed"),
    ];

    pub fn union(self, other: ChannelSet) -> ChannelSet {
        ChannelSet(self.0 | other.0)
    }

    pub fn contains(self, other: ChannelSet) -> bool {
        self.0 & other.0 == other.0
    }

    /// Channels consumed by a lag window over one entity's frame.
    pub fn for_window(is_park: bool, with_nwp: bool) -> ChannelSet {
        let mut set = if is_park {
            ChannelSet::PARK_POWER.union(ChannelSet::PARK_SPEED)
        } else {
            ChannelSet::TURBINE_POWER.union(ChannelSet::TURBINE_SPEED)
        };
        if with_nwp {
            // The forecast-speed channel always originates at park scale.
            set = set.union(ChannelSet::PARK_NWP);
        }
        set
    }

    pub fn names(self) -> Vec<&'static str> {
        Self::ALL
            .iter()
            .filter(|(flag, _)| self.contains(*flag))
            .map(|(_, name)| *name)
            .collect()
    }

    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> ChannelSet {
        let mut set = ChannelSet::EMPTY;
        for n in names {
            for (flag, name) in Self::ALL {
                if n == name {
                    set = set.union(flag);
                }
            }
        }
        set
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.names().join("+"))
    }
}

impl Serialize for ChannelSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChannelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        Ok(ChannelSet::from_names(names.iter().map(|s| s.as_str())))
    }
}

// ---------------------------------------------------------------------------
// raw series

/// One channel of 10-minute samples. Timestamps are strictly increasing and
/// on the 10-minute grid; missing intervals are simply absent.
#[derive(Clone, Debug)]
pub struct RawSeries {
    pub times: Vec<DateTime<Utc>>,
    pub values: Vec<f64>,
}

impl RawSeries {
    pub fn new(times: Vec<DateTime<Utc>>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptySeries);
        }
        if times.len() != values.len() {
            return Err(Error::ChannelLengthMismatch(times.len(), values.len()));
        }
        for (i, t) in times.iter().enumerate() {
            if t.minute() as i64 % RAW_STEP_MINUTES != 0 || t.second() != 0 || t.nanosecond() != 0 {
                return Err(Error::OffGrid {
                    index: i,
                    step_minutes: RAW_STEP_MINUTES,
                });
            }
            if i > 0 && times[i - 1] >= *t {
                return Err(Error::NonMonotonicTimestamps(i));
            }
        }
        Ok(RawSeries { times, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Hourly channel, one value per surviving hour. Timestamps mark the start
/// of the hour. May contain gaps where hours were dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlySeries {
    pub times: Vec<DateTime<Utc>>,
    pub values: Vec<f64>,
}

impl HourlySeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Arithmetic hourly mean. An hour survives with at least
/// [`MIN_SAMPLES_PER_HOUR`] of its 6 slots; incomplete trailing hours fall
/// out naturally under the same rule.
pub fn hourly_average(raw: &RawSeries) -> HourlySeries {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let hour_start = raw.times[i]
            .duration_trunc(chrono::Duration::hours(1))
            .expect("hour truncation is total for on-grid timestamps");
        let hour_end = hour_start + chrono::Duration::hours(1);
        let mut sum = 0.0;
        let mut count = 0usize;
        while i < raw.len() && raw.times[i] < hour_end {
            sum += raw.values[i];
            count += 1;
            i += 1;
        }
        if count >= MIN_SAMPLES_PER_HOUR {
            times.push(hour_start);
            values.push(sum / count as f64);
        }
    }
    HourlySeries { times, values }
}

// ---------------------------------------------------------------------------
// standardization

/// Zero-mean unit-variance scaler with the population divisor `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: f64,
    pub std: f64,
}

impl StandardScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < f64::EPSILON * mean.abs().max(1.0) {
            return Err(Error::ConstantSeries {
                n: values.len(),
                value: values[0],
            });
        }
        Ok(StandardScaler { mean, std })
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn apply_slice(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| self.apply(*v)).collect()
    }

    pub fn invert_slice(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| self.invert(*v)).collect()
    }
}

// ---------------------------------------------------------------------------
// frames

/// Hourly, time-aligned channels for one entity (the park or one turbine).
/// `nwp` holds the park-scale forecast-speed proxy where present; turbines
/// receive it by injection from the park frame, never from their own file.
#[derive(Clone, Debug)]
pub struct SeriesFrame {
    pub name: String,
    pub capacity_kw: f64,
    pub is_park: bool,
    pub times: Vec<DateTime<Utc>>,
    pub power: Vec<f64>,
    pub speed: Vec<f64>,
    pub nwp: Option<Vec<f64>>,
}

impl SeriesFrame {
    /// Align hourly channels on their common timestamps.
    pub fn from_channels(
        name: impl Into<String>,
        capacity_kw: f64,
        is_park: bool,
        power: &HourlySeries,
        speed: &HourlySeries,
        nwp: Option<&HourlySeries>,
    ) -> Result<Self> {
        if capacity_kw <= 0.0 {
            return Err(Error::BadCapacity(capacity_kw));
        }
        let mut times = Vec::new();
        let mut p = Vec::new();
        let mut s = Vec::new();
        let mut w = nwp.map(|_| Vec::new());
        let mut si = 0usize;
        let mut wi = 0usize;
        for (i, t) in power.times.iter().enumerate() {
            while si < speed.len() && speed.times[si] < *t {
                si += 1;
            }
            if si >= speed.len() || speed.times[si] != *t {
                continue;
            }
            if let Some(n) = nwp {
                while wi < n.len() && n.times[wi] < *t {
                    wi += 1;
                }
                if wi >= n.len() || n.times[wi] != *t {
                    continue;
                }
                w.as_mut().unwrap().push(n.values[wi]);
            }
            times.push(*t);
            p.push(power.values[i]);
            s.push(speed.values[si]);
        }
        if times.is_empty() {
            return Err(Error::NoOverlap);
        }
        Ok(SeriesFrame {
            name: name.into(),
            capacity_kw,
            is_park,
            times,
            power: p,
            speed: s,
            nwp: w,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Maximal index ranges over which timestamps advance in exact 1-hour
    /// steps. Windows never cross run boundaries.
    pub fn contiguous_runs(&self) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        if self.is_empty() {
            return runs;
        }
        let hour = chrono::Duration::hours(1);
        let mut start = 0usize;
        for i in 1..self.len() {
            if self.times[i] - self.times[i - 1] != hour {
                runs.push(start..i);
                start = i;
            }
        }
        runs.push(start..self.len());
        runs
    }

    /// Copy the park's forecast-speed channel onto this frame, keeping only
    /// timestamps present in both.
    pub fn with_park_nwp(&self, park: &SeriesFrame) -> Result<SeriesFrame> {
        let park_nwp = park
            .nwp
            .as_ref()
            .ok_or_else(|| Error::Config("park frame has no forecast-speed channel".into()))?;
        let mut times = Vec::new();
        let mut power = Vec::new();
        let mut speed = Vec::new();
        let mut nwp = Vec::new();
        let mut pi = 0usize;
        for (i, t) in self.times.iter().enumerate() {
            while pi < park.len() && park.times[pi] < *t {
                pi += 1;
            }
            if pi >= park.len() || park.times[pi] != *t {
                continue;
            }
            times.push(*t);
            power.push(self.power[i]);
            speed.push(self.speed[i]);
            nwp.push(park_nwp[pi]);
        }
        if times.is_empty() {
            return Err(Error::NoOverlap);
        }
        Ok(SeriesFrame {
            name: self.name.clone(),
            capacity_kw: self.capacity_kw,
            is_park: self.is_park,
            times,
            power,
            speed,
            nwp: Some(nwp),
        })
    }

    fn slice(&self, range: Range<usize>) -> SeriesFrame {
        SeriesFrame {
            name: self.name.clone(),
            capacity_kw: self.capacity_kw,
            is_park: self.is_park,
            times: self.times[range.clone()].to_vec(),
            power: self.power[range.clone()].to_vec(),
            speed: self.speed[range.clone()].to_vec(),
            nwp: self.nwp.as_ref().map(|n| n[range].to_vec()),
        }
    }
}

/// Chronological split; the train length is `floor(len * fraction)`.
pub fn split_train_test(frame: &SeriesFrame, fraction: f64) -> Result<(SeriesFrame, SeriesFrame)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::BadSplitFraction(fraction));
    }
    let train_len = (frame.len() as f64 * fraction).floor() as usize;
    if train_len == 0 || train_len >= frame.len() {
        return Err(Error::TooShort {
            len: frame.len(),
            lags: 0,
            horizon: 0,
        });
    }
    Ok((frame.slice(0..train_len), frame.slice(train_len..frame.len())))
}

/// Scalers fitted on a training frame, applied to train and test alike.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameScalers {
    pub power: StandardScaler,
    pub speed: StandardScaler,
    pub nwp: Option<StandardScaler>,
}

impl FrameScalers {
    pub fn fit(train: &SeriesFrame) -> Result<Self> {
        Ok(FrameScalers {
            power: StandardScaler::fit(&train.power)?,
            speed: StandardScaler::fit(&train.speed)?,
            nwp: match &train.nwp {
                Some(n) => Some(StandardScaler::fit(n)?),
                None => None,
            },
        })
    }

    pub fn apply(&self, frame: &SeriesFrame) -> SeriesFrame {
        SeriesFrame {
            name: frame.name.clone(),
            capacity_kw: frame.capacity_kw,
            is_park: frame.is_park,
            times: frame.times.clone(),
            power: self.power.apply_slice(&frame.power),
            speed: self.speed.apply_slice(&frame.speed),
            nwp: frame.nwp.as_ref().map(|n| {
                let sc = self.nwp.as_ref().expect("nwp scaler fitted on train");
                sc.apply_slice(n)
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// windows

/// Lag-window geometry. Horizons below 6 or above 24 hours are outside the
/// operating range this pipeline targets and are rejected up front.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lag_count: usize,
    pub horizon: usize,
}

impl WindowSpec {
    pub const MIN_HORIZON: usize = 6;
    pub const MAX_HORIZON: usize = 24;

    pub fn new(lag_count: usize, horizon: usize) -> Result<Self> {
        if lag_count == 0 {
            return Err(Error::BadLagCount(lag_count));
        }
        if !(Self::MIN_HORIZON..=Self::MAX_HORIZON).contains(&horizon) {
            return Err(Error::BadHorizon(horizon));
        }
        Ok(WindowSpec { lag_count, horizon })
    }
}

/// Supervised lag-window set in standardized units. Row-major columnar
/// storage; lags run oldest to newest. `base_len` is the pre-augmentation
/// record count, so record `i` of an augmented set is a noisy copy of base
/// record `i % base_len` (copy 0 is pristine).
#[derive(Clone, Debug)]
pub struct SupervisedSet {
    pub spec: WindowSpec,
    pub with_nwp: bool,
    pub power_lags: Vec<f64>,
    pub speed_lags: Vec<f64>,
    pub nwp_at_target: Vec<f64>,
    pub targets: Vec<f64>,
    pub target_times: Vec<DateTime<Utc>>,
    pub scalers: FrameScalers,
    pub capacity_kw: f64,
    pub base_len: usize,
    pub channels: ChannelSet,
}

impl SupervisedSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Features per time step when viewed as a sequence.
    pub fn seq_dim(&self) -> usize {
        if self.with_nwp {
            3
        } else {
            2
        }
    }

    pub fn seq_len(&self) -> usize {
        self.spec.lag_count
    }

    /// Flat record width (all lags plus the optional forecast value).
    pub fn record_width(&self) -> usize {
        2 * self.spec.lag_count + usize::from(self.with_nwp)
    }

    /// Write record `i` as a `[seq_len x seq_dim]` row-major sequence:
    /// per step `[power, speed]`, plus the target-hour forecast speed
    /// broadcast as a third feature when present.
    pub fn write_seq(&self, i: usize, out: &mut [f64]) {
        let lags = self.spec.lag_count;
        let dim = self.seq_dim();
        debug_assert_eq!(out.len(), lags * dim);
        for t in 0..lags {
            out[t * dim] = self.power_lags[i * lags + t];
            out[t * dim + 1] = self.speed_lags[i * lags + t];
            if self.with_nwp {
                out[t * dim + 2] = self.nwp_at_target[i];
            }
        }
    }

    /// Flat debug view of record `i` (7+7 lags, then the forecast value).
    pub fn flat_record(&self, i: usize) -> Vec<f64> {
        let lags = self.spec.lag_count;
        let mut rec = Vec::with_capacity(self.record_width());
        rec.extend_from_slice(&self.power_lags[i * lags..(i + 1) * lags]);
        rec.extend_from_slice(&self.speed_lags[i * lags..(i + 1) * lags]);
        if self.with_nwp {
            rec.push(self.nwp_at_target[i]);
        }
        rec
    }

    pub fn slice(&self, range: Range<usize>) -> SupervisedSet {
        let lags = self.spec.lag_count;
        SupervisedSet {
            spec: self.spec,
            with_nwp: self.with_nwp,
            power_lags: self.power_lags[range.start * lags..range.end * lags].to_vec(),
            speed_lags: self.speed_lags[range.start * lags..range.end * lags].to_vec(),
            nwp_at_target: if self.with_nwp {
                self.nwp_at_target[range.clone()].to_vec()
            } else {
                Vec::new()
            },
            targets: self.targets[range.clone()].to_vec(),
            target_times: self.target_times[range.clone()].to_vec(),
            scalers: self.scalers.clone(),
            capacity_kw: self.capacity_kw,
            base_len: range.len(),
            channels: self.channels,
        }
    }

    /// Chronological validation carve-out: the final `fraction` of records
    /// becomes the holdout. Call before augmentation so the holdout stays
    /// noise-free.
    pub fn split_tail(&self, fraction: f64) -> Result<(SupervisedSet, SupervisedSet)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::BadSplitFraction(fraction));
        }
        let head = self.len() - ((self.len() as f64 * fraction).ceil() as usize).max(1);
        if head == 0 {
            return Err(Error::TooShort {
                len: self.len(),
                lags: self.spec.lag_count,
                horizon: self.spec.horizon,
            });
        }
        Ok((self.slice(0..head), self.slice(head..self.len())))
    }
}

/// Build supervised windows from a standardized frame. Windows are formed
/// inside contiguous hourly runs only; `with_nwp` appends the forecast
/// speed at the target hour.
pub fn make_windows(
    frame: &SeriesFrame,
    spec: WindowSpec,
    with_nwp: bool,
    scalers: &FrameScalers,
) -> Result<SupervisedSet> {
    if with_nwp && frame.nwp.is_none() {
        return Err(Error::Config(format!(
            "frame '{}' has no forecast-speed channel but with_nwp was requested",
            frame.name
        )));
    }
    let lags = spec.lag_count;
    let horizon = spec.horizon;
    let mut set = SupervisedSet {
        spec,
        with_nwp,
        power_lags: Vec::new(),
        speed_lags: Vec::new(),
        nwp_at_target: Vec::new(),
        targets: Vec::new(),
        target_times: Vec::new(),
        scalers: scalers.clone(),
        capacity_kw: frame.capacity_kw,
        base_len: 0,
        channels: ChannelSet::for_window(frame.is_park, with_nwp),
    };
    for run in frame.contiguous_runs() {
        let n = run.len();
        if n < lags + horizon {
            continue;
        }
        // t indexes the newest lag; target sits `horizon` steps later.
        for t in (run.start + lags - 1)..(run.end - horizon) {
            set.power_lags
                .extend_from_slice(&frame.power[t + 1 - lags..=t]);
            set.speed_lags
                .extend_from_slice(&frame.speed[t + 1 - lags..=t]);
            if with_nwp {
                set.nwp_at_target
                    .push(frame.nwp.as_ref().unwrap()[t + horizon]);
            }
            set.targets.push(frame.power[t + horizon]);
            set.target_times.push(frame.times[t + horizon]);
        }
    }
    if set.is_empty() {
        return Err(Error::TooShort {
            len: frame.len(),
            lags,
            horizon,
        });
    }
    set.base_len = set.len();
    Ok(set)
}

// ---------------------------------------------------------------------------
// augmentation

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Output size multiplier; 1 keeps the set unchanged.
    pub factor: usize,
    /// Noise standard deviation as a fraction of each channel's std.
    pub noise_std_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            factor: 5,
            noise_std_fraction: 0.05,
            seed: 0,
        }
    }
}

fn channel_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Replicate the set `factor` times, adding zero-mean Gaussian noise to the
/// inputs and targets of every copy except the first. Noise scale follows
/// each channel's empirical std within the set, so the fraction keeps its
/// meaning in standardized space.
pub fn augment_white_noise(set: &SupervisedSet, spec: &AugmentSpec) -> Result<SupervisedSet> {
    if spec.factor == 0 {
        return Err(Error::BadAugmentFactor(spec.factor));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Power lags and targets are the same physical channel; pool them.
    let mut power_all = set.power_lags.clone();
    power_all.extend_from_slice(&set.targets);
    let sd_power = channel_std(&power_all) * spec.noise_std_fraction;
    let sd_speed = channel_std(&set.speed_lags) * spec.noise_std_fraction;
    let sd_nwp = channel_std(&set.nwp_at_target) * spec.noise_std_fraction;

    let mut out = set.clone();
    out.base_len = set.len();
    for _copy in 1..spec.factor {
        let jitter = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
            if sd > 0.0 {
                Normal::new(0.0, sd).expect("finite std").sample(rng)
            } else {
                0.0
            }
        };
        for v in &set.power_lags {
            out.power_lags.push(v + jitter(&mut rng, sd_power));
        }
        for v in &set.speed_lags {
            out.speed_lags.push(v + jitter(&mut rng, sd_speed));
        }
        for v in &set.nwp_at_target {
            out.nwp_at_target.push(v + jitter(&mut rng, sd_nwp));
        }
        for v in &set.targets {
            out.targets.push(v + jitter(&mut rng, sd_power));
        }
        out.target_times.extend_from_slice(&set.target_times);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV io

/// Raw 10-minute channels for one entity, as ingested from or emitted to a
/// CSV file with columns `timestamp,power_kw,wind_speed_ms[,nwp_speed_ms]`.
#[derive(Clone, Debug)]
pub struct RawFrame {
    pub name: String,
    pub capacity_kw: f64,
    pub is_park: bool,
    pub power: RawSeries,
    pub speed: RawSeries,
    pub nwp: Option<RawSeries>,
}

impl RawFrame {
    /// Hourly-average every channel and align them into a frame.
    pub fn to_hourly(&self) -> Result<SeriesFrame> {
        let power = hourly_average(&self.power);
        let speed = hourly_average(&self.speed);
        let nwp = self.nwp.as_ref().map(hourly_average);
        SeriesFrame::from_channels(
            self.name.clone(),
            self.capacity_kw,
            self.is_park,
            &power,
            &speed,
            nwp.as_ref(),
        )
    }
}

pub fn read_raw_csv(
    path: &Path,
    name: impl Into<String>,
    capacity_kw: f64,
    is_park: bool,
) -> Result<RawFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(Error::Csv)?;
    let headers = reader.headers()?.clone();
    let has_nwp = headers.iter().any(|h| h == "nwp_speed_ms");
    let mut times = Vec::new();
    let mut power = Vec::new();
    let mut speed = Vec::new();
    let mut nwp = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let ts_text = record.get(0).unwrap_or("");
        let ts = DateTime::parse_from_rfc3339(ts_text)
            .map_err(|_| Error::BadTimestamp {
                line: line + 2,
                value: ts_text.to_string(),
            })?
            .with_timezone(&Utc);
        times.push(ts);
        power.push(parse_field(&record, 1, line)?);
        speed.push(parse_field(&record, 2, line)?);
        if has_nwp {
            nwp.push(parse_field(&record, 3, line)?);
        }
    }
    Ok(RawFrame {
        name: name.into(),
        capacity_kw,
        is_park,
        power: RawSeries::new(times.clone(), power)?,
        speed: RawSeries::new(times.clone(), speed)?,
        nwp: if has_nwp {
            Some(RawSeries::new(times, nwp)?)
        } else {
            None
        },
    })
}

fn parse_field(record: &csv::StringRecord, idx: usize, line: usize) -> Result<f64> {
    let text = record.get(idx).unwrap_or("");
    text.parse::<f64>().map_err(|_| Error::BadTimestamp {
        line: line + 2,
        value: format!("column {idx}: '{text}'"),
    })
}

pub fn write_raw_csv(frame: &RawFrame, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::Csv)?;
    if frame.nwp.is_some() {
        writer.write_record(["timestamp", "power_kw", "wind_speed_ms", "nwp_speed_ms"])?;
    } else {
        writer.write_record(["timestamp", "power_kw", "wind_speed_ms"])?;
    }
    for i in 0..frame.power.len() {
        let ts = frame.power.times[i].to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let mut row = vec![
            ts,
            format_float(frame.power.values[i]),
            format_float(frame.speed.values[i]),
        ];
        if let Some(n) = &frame.nwp {
            row.push(format_float(n.values[i]));
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Shortest round-trippable decimal form, shared by every CSV emitter so
/// identical runs produce identical bytes.
pub fn format_float(v: f64) -> String {
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // `{}` on f64 already prints the shortest representation that parses
    // back exactly; keep this wrapper as the single formatting choke point.
    format!("{v}")
}

/// Convenience for tests and the generator: a gap-free 10-minute timestamp
/// grid of `n` points starting at `start`.
pub fn ten_minute_grid(start: DateTime<Utc>, n: usize) -> Vec<DateTime<Utc>> {
    (0..n)
        .map(|i| start + chrono::Duration::minutes(RAW_STEP_MINUTES * i as i64))
        .collect()
}

pub fn utc(y: i32, mo: u32, d: u32, h: u32, mi: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, mo, d, h, mi, 0).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Vec<DateTime<Utc>> {
        ten_minute_grid(utc(2020, 1, 1, 0, 0), n)
    }

    #[test]
    fn raw_series_rejects_off_grid_and_disorder() {
        let mut times = grid(3);
        times[1] = times[1] + chrono::Duration::minutes(5);
        assert!(matches!(
            RawSeries::new(times, vec![0.0; 3]),
            Err(Error::OffGrid { index: 1, .. })
        ));

        let times = vec![utc(2020, 1, 1, 0, 10), utc(2020, 1, 1, 0, 0)];
        assert!(matches!(
            RawSeries::new(times, vec![0.0; 2]),
            Err(Error::NonMonotonicTimestamps(1))
        ));
    }

    #[test]
    fn hourly_average_of_13_samples_gives_two_values() {
        let raw = RawSeries::new(grid(13), (1..=13).map(|v| v as f64).collect()).unwrap();
        let hourly = hourly_average(&raw);
        assert_eq!(hourly.len(), 2);
        assert_abs_diff_eq!(hourly.values[0], 3.5); // mean of 1..6
        assert_abs_diff_eq!(hourly.values[1], 9.5); // mean of 7..12
    }

    #[test]
    fn hour_with_three_samples_survives_with_fewer_drops() {
        // Hour 0 keeps slots 0,10,20 (3 samples -> mean), hour 1 has 2 -> dropped,
        // hour 2 is complete.
        let mut times = vec![
            utc(2020, 1, 1, 0, 0),
            utc(2020, 1, 1, 0, 10),
            utc(2020, 1, 1, 0, 20),
            utc(2020, 1, 1, 1, 0),
            utc(2020, 1, 1, 1, 50),
        ];
        times.extend(ten_minute_grid(utc(2020, 1, 1, 2, 0), 6));
        let values: Vec<f64> = (0..times.len()).map(|v| v as f64).collect();
        let hourly = hourly_average(&RawSeries::new(times, values).unwrap());
        assert_eq!(hourly.len(), 2);
        assert_eq!(hourly.times[0], utc(2020, 1, 1, 0, 0));
        assert_eq!(hourly.times[1], utc(2020, 1, 1, 2, 0));
        assert_abs_diff_eq!(hourly.values[0], 1.0);
    }

    #[test]
    fn hourly_average_preserves_sums_over_complete_hours() {
        let n = 6 * 48;
        let values: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 * 0.37).collect();
        let raw = RawSeries::new(grid(n), values.clone()).unwrap();
        let hourly = hourly_average(&raw);
        assert_eq!(hourly.len(), 48);
        let lhs = 6.0 * hourly.values.iter().sum::<f64>();
        let rhs = values.iter().sum::<f64>();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-9);
    }

    #[test]
    fn scaler_two_points_map_to_plus_minus_one() {
        let sc = StandardScaler::fit(&[1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(sc.apply(1.0), -1.0);
        assert_abs_diff_eq!(sc.apply(3.0), 1.0);
    }

    #[test]
    fn scaler_rejects_constant_series() {
        assert!(matches!(
            StandardScaler::fit(&[5.0; 10]),
            Err(Error::ConstantSeries { n: 10, .. })
        ));
    }

    #[test]
    fn scaler_output_is_centered_and_unit_variance() {
        let values: Vec<f64> = (0..200).map(|i| (i as f64 * 0.7).sin() * 12.0 + 5.0).collect();
        let sc = StandardScaler::fit(&values).unwrap();
        let z = sc.apply_slice(&values);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-10);
    }

    fn hourly_ramp(n: usize) -> HourlySeries {
        HourlySeries {
            times: (0..n)
                .map(|i| utc(2020, 1, 1, 0, 0) + chrono::Duration::hours(i as i64))
                .collect(),
            values: (0..n).map(|i| i as f64).collect(),
        }
    }

    fn test_frame(n: usize) -> SeriesFrame {
        let power = hourly_ramp(n);
        let speed = HourlySeries {
            times: power.times.clone(),
            values: power.values.iter().map(|v| v * 0.5 + 4.0).collect(),
        };
        SeriesFrame::from_channels("t1", 3000.0, false, &power, &speed, None).unwrap()
    }

    #[test]
    fn split_floors_train_length() {
        let frame = test_frame(3);
        let (train, test) = split_train_test(&frame, 0.5).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 2);

        let frame = test_frame(1000);
        let (train, test) = split_train_test(&frame, 0.65).unwrap();
        assert_eq!(train.len(), 650);
        assert_eq!(test.len(), 350);
    }

    #[test]
    fn window_count_matches_closed_form() {
        let frame = test_frame(14);
        let scalers = FrameScalers::fit(&frame).unwrap();
        let std = scalers.apply(&frame);
        let spec = WindowSpec::new(7, 6).unwrap();
        let set = make_windows(&std, spec, false, &scalers).unwrap();
        assert_eq!(set.len(), 14 - 7 - 6 + 1);
        assert_eq!(set.record_width(), 14);
    }

    #[test]
    fn window_lags_are_ordered_oldest_to_newest() {
        let frame = test_frame(20);
        let scalers = FrameScalers::fit(&frame).unwrap();
        let spec = WindowSpec::new(7, 6).unwrap();
        // Use the unstandardized frame directly: values are the ramp 0..20.
        let set = make_windows(&frame, spec, false, &scalers).unwrap();
        let rec = set.flat_record(0);
        assert_eq!(&rec[0..7], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_abs_diff_eq!(set.targets[0], 12.0);
        assert_eq!(set.target_times[0], utc(2020, 1, 1, 12, 0));
    }

    #[test]
    fn windows_never_cross_gaps() {
        let mut power = hourly_ramp(30);
        // Remove hour 15 to split the frame into two runs.
        power.times.remove(15);
        power.values.remove(15);
        let speed = HourlySeries {
            times: power.times.clone(),
            values: power.values.iter().map(|v| v * 0.5).collect(),
        };
        let frame = SeriesFrame::from_channels("t", 3000.0, false, &power, &speed, None).unwrap();
        assert_eq!(frame.contiguous_runs().len(), 2);
        let scalers = FrameScalers::fit(&frame).unwrap();
        let spec = WindowSpec::new(7, 6).unwrap();
        let set = make_windows(&frame, spec, false, &scalers).unwrap();
        // Runs of length 15 and 14 give (15-12) + (14-12) windows.
        assert_eq!(set.len(), 5);
    }

    #[test]
    fn horizon_bounds_enforced() {
        assert!(matches!(WindowSpec::new(7, 25), Err(Error::BadHorizon(25))));
        assert!(matches!(WindowSpec::new(7, 5), Err(Error::BadHorizon(5))));
        assert!(WindowSpec::new(7, 24).is_ok());
    }

    #[test]
    fn nwp_window_takes_value_at_target_hour() {
        let power = hourly_ramp(20);
        let speed = HourlySeries {
            times: power.times.clone(),
            values: (0..20).map(|i| 8.0 + i as f64 * 0.1).collect(),
        };
        let nwp = HourlySeries {
            times: power.times.clone(),
            values: (0..20).map(|i| 100.0 + i as f64).collect(),
        };
        let frame =
            SeriesFrame::from_channels("park", 54000.0, true, &power, &speed, Some(&nwp)).unwrap();
        let scalers = FrameScalers::fit(&frame).unwrap();
        let spec = WindowSpec::new(7, 6).unwrap();
        let set = make_windows(&frame, spec, true, &scalers).unwrap();
        assert_eq!(set.record_width(), 15);
        // First window: newest lag at index 6, target at 12, nwp = 112.
        assert_abs_diff_eq!(set.nwp_at_target[0], 112.0);
        assert!(set.channels.contains(ChannelSet::PARK_NWP));
    }

    #[test]
    fn augmentation_preserves_first_copy_and_size() {
        let frame = test_frame(40);
        let scalers = FrameScalers::fit(&frame).unwrap();
        let std = scalers.apply(&frame);
        let spec = WindowSpec::new(7, 6).unwrap();
        let set = make_windows(&std, spec, false, &scalers).unwrap();
        let aug = augment_white_noise(
            &set,
            &AugmentSpec {
                factor: 5,
                noise_std_fraction: 0.05,
                seed: 42,
            },
        )
        .unwrap();
        assert_eq!(aug.len(), 5 * set.len());
        assert_eq!(aug.base_len, set.len());
        assert_eq!(aug.targets[..set.len()], set.targets[..]);
        assert_eq!(aug.power_lags[..set.power_lags.len()], set.power_lags[..]);
        // Copies differ from the original.
        assert_ne!(aug.targets[set.len()..2 * set.len()], set.targets[..]);

        let aug2 = augment_white_noise(
            &set,
            &AugmentSpec {
                factor: 5,
                noise_std_fraction: 0.05,
                seed: 42,
            },
        )
        .unwrap();
        assert_eq!(aug.targets, aug2.targets);
        assert_eq!(aug.power_lags, aug2.power_lags);
    }

    #[test]
    fn augment_factor_one_is_identity() {
        let frame = test_frame(40);
        let scalers = FrameScalers::fit(&frame).unwrap();
        let set = make_windows(&frame, WindowSpec::new(7, 6).unwrap(), false, &scalers).unwrap();
        let aug = augment_white_noise(
            &set,
            &AugmentSpec {
                factor: 1,
                noise_std_fraction: 0.05,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(aug.len(), set.len());
        assert_eq!(aug.targets, set.targets);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("park.csv");
        let times = grid(12);
        let frame = RawFrame {
            name: "park".into(),
            capacity_kw: 54000.0,
            is_park: true,
            power: RawSeries::new(times.clone(), (0..12).map(|i| i as f64 * 7.5).collect())
                .unwrap(),
            speed: RawSeries::new(times.clone(), (0..12).map(|i| 4.0 + i as f64 * 0.25).collect())
                .unwrap(),
            nwp: Some(RawSeries::new(times, vec![8.25; 12]).unwrap()),
        };
        write_raw_csv(&frame, &path).unwrap();
        let back = read_raw_csv(&path, "park", 54000.0, true).unwrap();
        assert_eq!(back.power.values, frame.power.values);
        assert_eq!(back.speed.values, frame.speed.values);
        assert_eq!(back.nwp.unwrap().values, frame.nwp.unwrap().values);
        assert_eq!(back.power.times, frame.power.times);
    }

    #[test]
    fn csv_rejects_malformed_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "timestamp,power_kw,wind_speed_ms\nnot-a-time,1.0,2.0\n",
        )
        .unwrap();
        assert!(matches!(
            read_raw_csv(&path, "x", 1.0, false),
            Err(Error::BadTimestamp { line: 2, .. })
        ));
    }

    #[test]
    fn channel_set_round_trips_through_serde() {
        let set = ChannelSet::for_window(false, true);
        let json = serde_json::to_string(&set).unwrap();
        assert!(json.contains("turbine_power"));
        assert!(json.contains("park_nwp"));
        let back: ChannelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn split_tail_keeps_holdout_clean_sizes() {
        let frame = test_frame(120);
        let scalers = FrameScalers::fit(&frame).unwrap();
        let set = make_windows(&frame, WindowSpec::new(7, 6).unwrap(), false, &scalers).unwrap();
        let (head, tail) = set.split_tail(0.1).unwrap();
        assert_eq!(head.len() + tail.len(), set.len());
        assert!(tail.len() >= set.len() / 10);
        assert_eq!(tail.targets[..], set.targets[head.len()..]);
    }
}
