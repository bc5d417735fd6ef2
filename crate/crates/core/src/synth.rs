//! Synthetic wind park generator: one shared autoregressive weather driver,
//! terrain-flavored per-turbine speeds, a cubic power curve with cut-in,
//! rated and cut-out behavior, and a deliberately coarse, biased forecast
//! proxy channel. Everything is reproducible from a single master seed via
//! hashed sub-seeds, so per-turbine generation order never matters.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{self, RawFrame, RawSeries};
use crate::error::{Error, Result};

pub const MIN_DURATION_DAYS: u32 = 30;
/// Simulated park size; five turbines are profiled, the rest are generic.
pub const PARK_TURBINE_COUNT: usize = 18;

const STEPS_PER_DAY: usize = 144;
const STEPS_PER_HOUR: usize = 6;

// ---------------------------------------------------------------------------
// turbine physics

#[derive(Clone, Debug, Serialize)]
pub struct TurbineSpec {
    pub rotor_radius_m: f64,
    pub capacity_kw: f64,
    pub air_density: f64,
    pub cp_max: f64,
    pub cut_in_ms: f64,
    pub rated_ms: f64,
    pub cut_out_ms: f64,
}

impl Default for TurbineSpec {
    fn default() -> Self {
        TurbineSpec {
            rotor_radius_m: 45.0,
            capacity_kw: 3000.0,
            air_density: 1.27,
            cp_max: 0.45,
            cut_in_ms: 4.0,
            rated_ms: 12.0,
            cut_out_ms: 25.0,
        }
    }
}

/// Betz limit, the hard ceiling on rotor efficiency.
const CP_LIMIT: f64 = 0.593;

impl TurbineSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.cut_in_ms && self.cut_in_ms < self.rated_ms && self.rated_ms < self.cut_out_ms) {
            return Err(Error::BadTurbineSpec(format!(
                "need 0 < cut_in < rated < cut_out, got {} / {} / {}",
                self.cut_in_ms, self.rated_ms, self.cut_out_ms
            )));
        }
        if !(0.0 < self.cp_max && self.cp_max < CP_LIMIT) {
            return Err(Error::BadTurbineSpec(format!(
                "cp_max {} outside (0, {CP_LIMIT})",
                self.cp_max
            )));
        }
        if self.rotor_radius_m <= 0.0 || self.capacity_kw <= 0.0 || self.air_density <= 0.0 {
            return Err(Error::BadTurbineSpec(
                "rotor radius, capacity and air density must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Power output in kW for wind speed `v` m/s: zero outside the operating
/// band, exactly capacity at and above rated, otherwise the swept-area
/// cubic capped at capacity.
pub fn power_curve(v: f64, spec: &TurbineSpec) -> f64 {
    debug_assert!(v >= 0.0);
    if v < spec.cut_in_ms || v >= spec.cut_out_ms {
        return 0.0;
    }
    if v >= spec.rated_ms {
        return spec.capacity_kw;
    }
    let swept = std::f64::consts::PI * spec.rotor_radius_m * spec.rotor_radius_m;
    let watts = 0.5 * spec.air_density * swept * spec.cp_max * v * v * v;
    (watts / 1000.0).min(spec.capacity_kw)
}

// ---------------------------------------------------------------------------
// terrain

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TerrainKind {
    Plateau,
    Valley,
    Lakeside,
    Hilltop,
    Seaside,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 5] = [
        TerrainKind::Plateau,
        TerrainKind::Valley,
        TerrainKind::Lakeside,
        TerrainKind::Hilltop,
        TerrainKind::Seaside,
    ];
}

#[derive(Clone, Debug, Serialize)]
pub struct TerrainProfile {
    pub kind: TerrainKind,
    /// Multiplier on the park-wide driver speed.
    pub speed_scale: f64,
    /// Std of white site noise added to each 10-minute speed sample, m/s.
    pub turbulence_std: f64,
    /// Fractional power loss from shadowing, applied after the power curve.
    pub wake_loss: f64,
}

impl TerrainProfile {
    pub fn new(kind: TerrainKind, speed_scale: f64, turbulence_std: f64, wake_loss: f64) -> Result<Self> {
        if speed_scale <= 0.0 {
            return Err(Error::BadTurbineSpec(format!(
                "{kind:?}: speed scale must be positive, got {speed_scale}"
            )));
        }
        if turbulence_std < 0.0 {
            return Err(Error::BadTurbineSpec(format!(
                "{kind:?}: turbulence std must be >= 0, got {turbulence_std}"
            )));
        }
        if !(0.0..0.3).contains(&wake_loss) {
            return Err(Error::BadTurbineSpec(format!(
                "{kind:?}: wake loss {wake_loss} outside [0, 0.3)"
            )));
        }
        Ok(TerrainProfile { kind, speed_scale, turbulence_std, wake_loss })
    }

    /// The five profiled sites. Valley, Hilltop and Seaside are tuned to be
    /// the harder ones: weaker or gustier wind and more shadowing.
    pub fn defaults() -> Vec<TerrainProfile> {
        [
            (TerrainKind::Plateau, 1.0, 0.14, 0.02),
            (TerrainKind::Valley, 0.85, 0.36, 0.10),
            (TerrainKind::Lakeside, 1.0, 0.18, 0.03),
            (TerrainKind::Hilltop, 1.15, 0.32, 0.05),
            (TerrainKind::Seaside, 1.05, 0.27, 0.08),
        ]
        .into_iter()
        .map(|(k, s, t, w)| TerrainProfile::new(k, s, t, w).expect("defaults are valid"))
        .collect()
    }

    /// Unprofiled turbines filling the park out to its full size.
    pub fn generic() -> TerrainProfile {
        TerrainProfile::new(TerrainKind::Plateau, 1.0, 0.2, 0.04).expect("valid")
    }
}

// ---------------------------------------------------------------------------
// weather driver

#[derive(Clone, Debug, Serialize)]
pub struct WeatherProcess {
    /// Autoregressive coefficients at 10-minute resolution, lag 1 first.
    pub ar: Vec<f64>,
    /// Innovation std of the AR component, m/s.
    pub noise_std: f64,
    pub base_speed: f64,
    pub diurnal_amp: f64,
    pub diurnal_period_h: f64,
    pub synoptic_amp: f64,
    pub synoptic_period_h: f64,
}

impl Default for WeatherProcess {
    fn default() -> Self {
        // near-unit-root AR gives a slowly wandering level (stationary std
        // ~0.8 m/s) on top of daily and multi-day cycles; the cycles carry
        // most of the variance so a day of lag context pins them down
        WeatherProcess {
            ar: vec![0.9998],
            noise_std: 0.016,
            base_speed: 8.8,
            diurnal_amp: 2.6,
            diurnal_period_h: 24.0,
            synoptic_amp: 5.0,
            synoptic_period_h: 288.0,
        }
    }
}

impl WeatherProcess {
    /// Stationarity gate: exact triangle conditions for order 1 and 2,
    /// the sufficient sum-of-moduli bound for higher orders.
    pub fn validate(&self) -> Result<()> {
        match self.ar.as_slice() {
            [] => {}
            [p1] => {
                if p1.abs() >= 1.0 {
                    return Err(Error::NonStationary(format!("|phi1| = {} >= 1", p1.abs())));
                }
            }
            [p1, p2] => {
                if p2.abs() >= 1.0 || p1 + p2 >= 1.0 || p2 - p1 >= 1.0 {
                    return Err(Error::NonStationary(format!(
                        "AR(2) triangle violated: phi1={p1}, phi2={p2}"
                    )));
                }
            }
            coeffs => {
                let sum: f64 = coeffs.iter().map(|c| c.abs()).sum();
                if sum >= 1.0 {
                    return Err(Error::NonStationary(format!(
                        "sum of |phi| = {sum} >= 1 for order {}",
                        coeffs.len()
                    )));
                }
            }
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config(format!(
                "weather noise std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Park-wide driver speed per 10-minute step, clamped at zero.
    fn generate(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
        let draw = |rng: &mut ChaCha8Rng| {
            if self.noise_std == 0.0 { 0.0 } else { normal.sample(rng) }
        };
        // phases vary with the seed so runs differ in more than noise
        let two_pi = std::f64::consts::TAU;
        let phase_d = rand::Rng::gen_range(rng, 0.0..two_pi);
        let phase_s = rand::Rng::gen_range(rng, 0.0..two_pi);

        let p = self.ar.len();
        let mut state = vec![0.0; p.max(1)];
        // burn-in long enough for the near-unit-root default to forget the
        // zero start
        let warmup = 30_000;
        let ar_at = |state: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
            let x: f64 = self.ar.iter().zip(state.iter()).map(|(c, s)| c * s).sum::<f64>()
                + draw(rng);
            state.rotate_right(1);
            state[0] = x;
            x
        };
        for _ in 0..warmup {
            ar_at(&mut state, rng);
        }

        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let hours = t as f64 / STEPS_PER_HOUR as f64;
            let diurnal = self.diurnal_amp * (two_pi * hours / self.diurnal_period_h + phase_d).sin();
            let synoptic =
                self.synoptic_amp * (two_pi * hours / self.synoptic_period_h + phase_s).sin();
            let v = self.base_speed + diurnal + synoptic + ar_at(&mut state, rng);
            out.push(v.max(0.0));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// sub-seeding

/// Hash a master seed and a label into an independent 256-bit RNG seed.
pub fn subseed(master: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

pub fn subseeded_rng(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(subseed(master, label))
}

// ---------------------------------------------------------------------------
// dataset generation

#[derive(Clone, Debug, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub duration_days: u32,
    #[serde(skip)]
    pub start: DateTime<Utc>,
    pub turbine: TurbineSpec,
    pub weather: WeatherProcess,
    pub terrains: Vec<TerrainProfile>,
    /// The forecast proxy: hourly driver speed, low-pass filtered over this
    /// many hours, shifted by a bias and blurred with noise.
    pub nwp_window_h: usize,
    pub nwp_bias_ms: f64,
    pub nwp_noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            duration_days: 365,
            start: data::utc(2021, 1, 1, 0, 0),
            turbine: TurbineSpec::default(),
            weather: WeatherProcess::default(),
            terrains: TerrainProfile::defaults(),
            nwp_window_h: 24,
            nwp_bias_ms: 0.5,
            nwp_noise_std: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_days < MIN_DURATION_DAYS {
            return Err(Error::TooShortDuration {
                got: self.duration_days,
                min: MIN_DURATION_DAYS,
            });
        }
        self.turbine.validate()?;
        self.weather.validate()?;
        if self.terrains.is_empty() || self.terrains.len() > PARK_TURBINE_COUNT {
            return Err(Error::Config(format!(
                "need between 1 and {PARK_TURBINE_COUNT} terrain profiles, got {}",
                self.terrains.len()
            )));
        }
        for t in &self.terrains {
            TerrainProfile::new(t.kind, t.speed_scale, t.turbulence_std, t.wake_loss)?;
        }
        if self.nwp_window_h == 0 {
            return Err(Error::Config("forecast smoothing window must be >= 1 hour".into()));
        }
        Ok(())
    }
}

/// The generated park: one park-level frame carrying the forecast channel,
/// plus one frame per profiled turbine.
#[derive(Clone, Debug)]
pub struct ParkDataset {
    pub park: RawFrame,
    pub turbines: Vec<RawFrame>,
    pub config: SynthConfig,
}

pub fn gen_park_dataset(seed: u64, duration_days: u32) -> Result<ParkDataset> {
    gen_with(SynthConfig {
        seed,
        duration_days,
        ..SynthConfig::default()
    })
}

pub fn gen_with(config: SynthConfig) -> Result<ParkDataset> {
    config.validate()?;
    let n = config.duration_days as usize * STEPS_PER_DAY;
    let times = data::ten_minute_grid(config.start, n);

    let mut driver_rng = subseeded_rng(config.seed, "weather-driver");
    let driver = config.weather.generate(n, &mut driver_rng);

    // profiled turbines keep their series; generics only feed the park sum
    let mut park_power = vec![0.0; n];
    let mut turbines = Vec::with_capacity(config.terrains.len());
    for (i, terrain) in config.terrains.iter().enumerate() {
        let label = format!("turbine-T{}", i + 1);
        let (speed, power) = simulate_site(&driver, terrain, &config, &label);
        for (acc, p) in park_power.iter_mut().zip(&power) {
            *acc += p;
        }
        turbines.push(RawFrame {
            name: format!("T{}", i + 1),
            capacity_kw: config.turbine.capacity_kw,
            is_park: false,
            power: RawSeries::new(times.clone(), power)?,
            speed: RawSeries::new(times.clone(), speed)?,
            nwp: None,
        });
    }
    let generic = TerrainProfile::generic();
    for g in config.terrains.len()..PARK_TURBINE_COUNT {
        let label = format!("turbine-G{}", g + 1);
        let (_, power) = simulate_site(&driver, &generic, &config, &label);
        for (acc, p) in park_power.iter_mut().zip(&power) {
            *acc += p;
        }
    }

    let nwp = forecast_proxy(&driver, &config);
    let park = RawFrame {
        name: "park".into(),
        capacity_kw: config.turbine.capacity_kw * PARK_TURBINE_COUNT as f64,
        is_park: true,
        power: RawSeries::new(times.clone(), park_power)?,
        speed: RawSeries::new(times.clone(), driver)?,
        nwp: Some(RawSeries::new(times, nwp)?),
    };
    Ok(ParkDataset { park, turbines, config })
}

fn simulate_site(
    driver: &[f64],
    terrain: &TerrainProfile,
    config: &SynthConfig,
    label: &str,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = subseeded_rng(config.seed, label);
    let normal = Normal::new(0.0, terrain.turbulence_std.max(f64::MIN_POSITIVE)).expect("finite");
    let mut speed = Vec::with_capacity(driver.len());
    let mut power = Vec::with_capacity(driver.len());
    for &d in driver {
        let gust = if terrain.turbulence_std == 0.0 {
            0.0
        } else {
            normal.sample(&mut rng)
        };
        let v = (d * terrain.speed_scale + gust).max(0.0);
        speed.push(v);
        power.push(power_curve(v, &config.turbine) * (1.0 - terrain.wake_loss));
    }
    (speed, power)
}

/// Coarse forecast channel: hourly means of the driver, smoothed with a
/// centered moving average, then biased and noised. Each hourly value is
/// repeated across its six 10-minute rows. The centered window looks into
/// the future on purpose; that is what gives the channel forecast skill.
fn forecast_proxy(driver: &[f64], config: &SynthConfig) -> Vec<f64> {
    let hours = driver.len() / STEPS_PER_HOUR;
    let hourly: Vec<f64> = (0..hours)
        .map(|h| {
            driver[h * STEPS_PER_HOUR..(h + 1) * STEPS_PER_HOUR].iter().sum::<f64>()
                / STEPS_PER_HOUR as f64
        })
        .collect();
    let half = config.nwp_window_h / 2;
    let mut rng = subseeded_rng(config.seed, "forecast-proxy");
    let normal = Normal::new(0.0, config.nwp_noise_std.max(f64::MIN_POSITIVE)).expect("finite");
    let mut out = Vec::with_capacity(driver.len());
    for h in 0..hours {
        let lo = h.saturating_sub(half);
        let hi = (h + config.nwp_window_h - half).min(hours);
        let ma = hourly[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        let noise = if config.nwp_noise_std == 0.0 {
            0.0
        } else {
            normal.sample(&mut rng)
        };
        let v = (ma + config.nwp_bias_ms + noise).max(0.0);
        out.extend(std::iter::repeat(v).take(STEPS_PER_HOUR));
    }
    out
}

// ---------------------------------------------------------------------------
// emission

/// Everything needed to regenerate or audit the dataset.
#[derive(Serialize)]
struct DatasetManifest<'a> {
    config: &'a SynthConfig,
    files: Vec<String>,
    park_capacity_kw: f64,
}

/// Write one CSV per frame plus a JSON manifest; returns the CSV paths.
pub fn write_park_csvs(dataset: &ParkDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut paths = Vec::new();
    let mut names = Vec::new();
    for frame in std::iter::once(&dataset.park).chain(&dataset.turbines) {
        let path = dir.join(format!("{}.csv", frame.name));
        data::write_raw_csv(frame, &path)?;
        names.push(format!("{}.csv", frame.name));
        paths.push(path);
    }
    let manifest = DatasetManifest {
        config: &dataset.config,
        files: names,
        park_capacity_kw: dataset.park.capacity_kw,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(paths)
}
