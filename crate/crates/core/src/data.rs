//! Community datasets: a synthetic heterogeneous generator, a CSV loader and
//! per-client min-max normalization.
//!
//! Feature order everywhere is [`FEATURE_NAMES`]; the target is community PV
//! output in kW.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::Sample;
use crate::seed::{rng_for, stream, SimRng};
use crate::{Error, Result};

pub const FEATURE_NAMES: [&str; 5] = [
    "net_load",
    "irradiance",
    "temperature",
    "humidity",
    "wind_speed",
];
pub const NUM_FEATURES: usize = FEATURE_NAMES.len();
pub const CSV_HEADER: [&str; 7] = [
    "timestamp",
    "net_load",
    "irradiance",
    "temperature",
    "humidity",
    "wind_speed",
    "pv",
];

/// Irradiance at which a panel reaches nameplate output (W/m^2).
pub const IRRADIANCE_REF: f64 = 1000.0;
/// Cell temperature above which output is derated (degC).
pub const DERATING_ONSET: f64 = 25.0;
pub const STEPS_PER_DAY: usize = 48;
pub const MIN_SYNTHETIC_SAMPLES: usize = 20;

/// Numerator/denominator of the time-ordered train fraction.
const TRAIN_NUM: usize = 7;
const TRAIN_DEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityProfile {
    pub community_id: usize,
    /// Installed capacity, kW.
    pub pv_capacity: f64,
    /// Fractional output loss per degC above [`DERATING_ONSET`].
    pub temp_coefficient: f64,
    /// Multiplier on clear-sky irradiance, in (0, 2].
    pub irradiance_scale: f64,
    /// Peak-ish household load, kW.
    pub load_scale: f64,
    /// Std of additive Gaussian PV measurement noise, kW.
    pub noise_std: f64,
}

impl CommunityProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.pv_capacity > 0.0) {
            return Err(Error::invalid("pv_capacity", "must be > 0"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std", "must be >= 0"));
        }
        if !(self.irradiance_scale > 0.0 && self.irradiance_scale <= 2.0) {
            return Err(Error::invalid("irradiance_scale", "must lie in (0, 2]"));
        }
        Ok(())
    }
}

/// Site weather parameters. Kept separate from [`CommunityProfile`], which
/// describes the installation.
#[derive(Debug, Clone, PartialEq)]
pub struct Climate {
    pub base_temperature: f64,
    pub daily_temperature_swing: f64,
    pub base_humidity: f64,
    pub mean_wind: f64,
    /// Weight of the regional cloud field in the site's gridded cloud cover.
    pub regional_share: f64,
    /// Std of half-hourly cloud cover the grid cell does not resolve.
    pub local_cloud_noise: f64,
}

/// Day-level weather shared by every community in one synthetic region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalWeather {
    /// Mean cloud attenuation per day, in [0, 0.8).
    pub cloud: Vec<f64>,
    /// degC added to every site's temperature per day.
    pub temperature_anomaly: Vec<f64>,
}

impl RegionalWeather {
    pub fn draw(days: usize, rng: &mut SimRng) -> Self {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut cloud = Vec::with_capacity(days);
        let mut temperature_anomaly = Vec::with_capacity(days);
        for _ in 0..days {
            cloud.push(rng.gen_range(0.0..0.8));
            temperature_anomaly.push(4.0 * unit.sample(rng));
        }
        Self {
            cloud,
            temperature_anomaly,
        }
    }

    pub fn days(&self) -> usize {
        self.cloud.len()
    }
}

/// One half-hourly raw reading, before it is turned into a [`Sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub timestamp: String,
    pub load: f64,
    pub pv: f64,
    pub net_load: f64,
    pub irradiance: f64,
    pub temperature: f64,
    pub humidity: f64,
    pub wind_speed: f64,
}

impl Reading {
    pub fn to_sample(&self) -> Sample {
        Sample::new(
            vec![
                self.net_load,
                self.irradiance,
                self.temperature,
                self.humidity,
                self.wind_speed,
            ],
            self.pv,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    pub fn is_constant(&self) -> bool {
        !(self.max > self.min)
    }

    pub fn scale(&self, x: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub community_id: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub train_timestamps: Vec<String>,
    pub test_timestamps: Vec<String>,
    /// Per-feature ranges of the training features as currently stored.
    pub normalization: Vec<FeatureRange>,
    pub profile: Option<CommunityProfile>,
}

impl ClientDataset {
    /// Time-ordered 70/30 split of `samples`.
    pub fn from_series(
        community_id: usize,
        samples: Vec<Sample>,
        timestamps: Vec<String>,
    ) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid(
                "samples",
                format!("need at least 2 rows to split, got {}", samples.len()),
            ));
        }
        let cut = split_point(samples.len());
        let mut train = samples;
        let test = train.split_off(cut);
        let mut train_ts = timestamps;
        let test_ts = if train_ts.len() > cut {
            train_ts.split_off(cut)
        } else {
            Vec::new()
        };
        let normalization = feature_ranges(&train);
        Ok(Self {
            community_id,
            train,
            test,
            train_timestamps: train_ts,
            test_timestamps: test_ts,
            normalization,
            profile: None,
        })
    }

    pub fn num_train(&self) -> usize {
        self.train.len()
    }
}

fn split_point(n: usize) -> usize {
    (n * TRAIN_NUM / TRAIN_DEN).clamp(1, n - 1)
}

fn feature_ranges(samples: &[Sample]) -> Vec<FeatureRange> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    (0..dim)
        .map(|k| {
            samples.iter().fold(
                FeatureRange {
                    min: f64::INFINITY,
                    max: f64::NEG_INFINITY,
                },
                |r, s| FeatureRange {
                    min: r.min.min(s.features[k]),
                    max: r.max.max(s.features[k]),
                },
            )
        })
        .collect()
}

/// Min-max scaling fitted on the training features and applied to both
/// splits. Constant training columns map to 0; test values outside the
/// training range extrapolate linearly. Targets are left in kW.
pub fn normalize(ds: &ClientDataset) -> ClientDataset {
    let ranges = feature_ranges(&ds.train);
    let apply = |samples: &[Sample]| -> Vec<Sample> {
        samples
            .iter()
            .map(|s| {
                let features = s
                    .features
                    .iter()
                    .zip(&ranges)
                    .map(|(&x, r)| r.scale(x))
                    .collect();
                Sample::new(features, s.target)
            })
            .collect()
    };
    let train = apply(&ds.train);
    let normalization = feature_ranges(&train);
    ClientDataset {
        train,
        test: apply(&ds.test),
        normalization,
        ..ds.clone()
    }
}

pub fn draw_profile(community_id: usize, rng: &mut SimRng) -> CommunityProfile {
    let pv_capacity = rng.gen_range(2.0..8.0);
    CommunityProfile {
        community_id,
        pv_capacity,
        temp_coefficient: rng.gen_range(0.003..0.006),
        irradiance_scale: rng.gen_range(0.8..1.2),
        load_scale: rng.gen_range(1.0..4.0),
        noise_std: pv_capacity * rng.gen_range(0.01..0.04),
    }
}

pub fn draw_climate(rng: &mut SimRng) -> Climate {
    Climate {
        base_temperature: rng.gen_range(18.0..26.0),
        daily_temperature_swing: rng.gen_range(4.0..8.0),
        base_humidity: rng.gen_range(50.0..75.0),
        mean_wind: rng.gen_range(2.0..5.0),
        regional_share: 0.8,
        local_cloud_noise: 0.1,
    }
}

fn timestamp(step: usize) -> String {
    // Half-hourly series starting 2023-01-01T00:00; day count kept simple by
    // rolling months of fixed length 28 days.
    let day = step / STEPS_PER_DAY;
    let minutes = (step % STEPS_PER_DAY) * 30;
    let month = day / 28;
    let year = 2023 + month / 12;
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:00",
        year,
        month % 12 + 1,
        day % 28 + 1,
        minutes / 60,
        minutes % 60
    )
}

/// Synthesizes `n` half-hourly readings for one community.
///
/// The `irradiance` column is the gridded value for the site's cell, as a
/// satellite product would report it. PV is driven by the irradiance that
/// actually reaches the panels: the site's own cloud cover and its
/// `irradiance_scale` (orientation, shading) are invisible in the features.
///
/// # Panics
///
/// If `weather` covers fewer than `n.div_ceil(STEPS_PER_DAY)` days.
pub fn synthesize_series(
    profile: &CommunityProfile,
    climate: &Climate,
    weather: &RegionalWeather,
    n: usize,
    rng: &mut SimRng,
) -> Vec<Reading> {
    assert!(
        weather.days() * STEPS_PER_DAY >= n,
        "regional weather too short"
    );
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut readings = Vec::with_capacity(n);
    let mut site_day = 0.0;
    for step in 0..n {
        let day = step / STEPS_PER_DAY;
        let hour = (step % STEPS_PER_DAY) as f64 / 2.0;
        if step % STEPS_PER_DAY == 0 {
            site_day = rng.gen_range(-0.15..0.15);
        }
        let grid_cloud = (climate.regional_share * weather.cloud[day]
            + (1.0 - climate.regional_share) * rng.gen_range(0.0..0.8))
        .clamp(0.0, 0.95);
        let site_cloud =
            (grid_cloud + site_day + climate.local_cloud_noise * unit.sample(rng)).clamp(0.0, 0.95);
        let clear_sky = if (6.0..=18.0).contains(&hour) {
            IRRADIANCE_REF * (PI * (hour - 6.0) / 12.0).sin().max(0.0)
        } else {
            0.0
        };
        let irradiance = clear_sky * (1.0 - grid_cloud);
        let site_irradiance = clear_sky * profile.irradiance_scale * (1.0 - site_cloud);

        let diurnal = (2.0 * PI * (hour - 15.0) / 24.0).cos();
        let temperature = climate.base_temperature
            + weather.temperature_anomaly[day]
            + climate.daily_temperature_swing * diurnal
            - 3.0 * grid_cloud
            + 0.5 * unit.sample(rng);
        let humidity =
            (climate.base_humidity - 12.0 * diurnal + 25.0 * grid_cloud + 2.0 * unit.sample(rng))
                .clamp(5.0, 100.0);
        let wind_speed =
            (climate.mean_wind * (1.0 + 0.3 * diurnal) + 0.6 * unit.sample(rng)).max(0.0);

        let derate = 1.0 - profile.temp_coefficient * (temperature - DERATING_ONSET).max(0.0);
        let pv = profile.pv_capacity * (site_irradiance / IRRADIANCE_REF).clamp(0.0, 1.0) * derate
            + profile.noise_std * unit.sample(rng);

        let morning = (-(hour - 7.5).powi(2) / 2.0).exp();
        let evening = (-(hour - 19.0).powi(2) / 4.0).exp();
        let cooling = 0.03 * (temperature - 24.0).max(0.0);
        let load = (profile.load_scale
            * (0.35 + 0.35 * morning + 0.65 * evening + cooling)
            * (1.0 + 0.1 * unit.sample(rng)))
        .max(0.05 * profile.load_scale);

        readings.push(Reading {
            timestamp: timestamp(step),
            load,
            pv,
            net_load: load - pv,
            irradiance,
            temperature,
            humidity,
            wind_speed,
        });
    }
    readings
}

/// One dataset per community, each from its own sub-seed of `seed`, all
/// sharing one draw of regional weather.
pub fn generate_synthetic(
    num_communities: usize,
    samples_per_community: usize,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if num_communities == 0 {
        return Err(Error::invalid("num_communities", "must be at least 1"));
    }
    if samples_per_community < MIN_SYNTHETIC_SAMPLES {
        return Err(Error::invalid(
            "samples_per_community",
            format!("must be at least {MIN_SYNTHETIC_SAMPLES}, got {samples_per_community}"),
        ));
    }
    let days = samples_per_community.div_ceil(STEPS_PER_DAY);
    let weather = RegionalWeather::draw(days, &mut rng_for(seed, &[stream::WEATHER]));
    (0..num_communities)
        .map(|id| {
            let mut rng = rng_for(seed, &[stream::DATA, id as u64]);
            let profile = draw_profile(id, &mut rng);
            let climate = draw_climate(&mut rng);
            let readings = synthesize_series(
                &profile,
                &climate,
                &weather,
                samples_per_community,
                &mut rng,
            );
            let (samples, stamps) = readings
                .into_iter()
                .map(|r| (r.to_sample(), r.timestamp))
                .unzip();
            let mut ds = ClientDataset::from_series(id, samples, stamps)?;
            ds.profile = Some(profile);
            Ok(ds)
        })
        .collect()
}

/// Reads `timestamp,net_load,irradiance,temperature,humidity,wind_speed,pv`
/// (header required, any column order).
pub fn load_csv(path: impl AsRef<Path>, community_id: usize) -> Result<ClientDataset> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let columns: Vec<usize> = CSV_HEADER
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: (*name).to_string(),
                })
        })
        .collect::<Result<_>>()?;

    let mut samples = Vec::new();
    let mut stamps = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(csv_err)?;
        let field = |col: usize| record.get(columns[col]).unwrap_or("");
        let number = |col: usize| -> Result<f64> {
            let raw = field(col);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: CSV_HEADER[col].to_string(),
                    value: raw.to_string(),
                })
        };
        let features = (1..=NUM_FEATURES).map(number).collect::<Result<Vec<_>>>()?;
        let pv = number(6)?;
        stamps.push(field(0).to_string());
        samples.push(Sample::new(features, pv));
    }
    if samples.is_empty() {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            reason: "no data rows".into(),
        });
    }
    ClientDataset::from_series(community_id, samples, stamps).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes readings in the CSV schema accepted by [`load_csv`].
pub fn write_csv(path: impl AsRef<Path>, readings: &[Reading]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in readings {
        w.write_record([
            r.timestamp.clone(),
            r.net_load.to_string(),
            r.irradiance.to_string(),
            r.temperature.to_string(),
            r.humidity.to_string(),
            r.wind_speed.to_string(),
            r.pv.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
