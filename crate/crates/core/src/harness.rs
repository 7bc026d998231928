//! Experiment plumbing: synthetic demand, config files, ETA and policy runs, reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agents::{
    run_episode, train_dqn, train_tabular, ConstantPolicy, DqnAgent, DqnConfig, DqnPolicy,
    EpsilonSchedule, FixedPolicy, LearningCurve, Policy, QTable, TablePolicy, DEFAULT_GAMMA,
};
use crate::error::{Error, Result};
use crate::eta::{
    evaluate, train_lrt, train_stnn, train_timenn, ConstantSpeedEta, EtaMetrics, StnnArch,
    StnnModel, TravelTimeEstimator,
};
use crate::geo_time::{haversine_miles, BBox, DayType, GeoPoint, GridSpec, DEFAULT_CELL_DEG};
use crate::nn::{Activation, TrainConfig};
use crate::simulator::{Action, CarpoolEnv, EnvConfig};
use crate::trips::{
    ingest_csv, write_csv, IngestReport, OutlierRules, SchemaMapping, TripRecord, TripStore,
};

/// An origin-demand bump, placed in region-relative coordinates (`0..1` on each axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub lat_frac: f64,
    pub lon_frac: f64,
    /// Gaussian radius as a fraction of the region's larger side.
    pub radius_frac: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDemandSpec {
    pub region: BBox,
    pub cell_deg: f64,
    /// Mean trips per hour over the whole region.
    pub trips_per_hour: f64,
    /// Uniform share of origin weight on top of the hotspots.
    pub background: f64,
    pub hotspots: Vec<Hotspot>,
    /// 24 hourly demand multipliers; rescaled to mean 1.
    pub diurnal: Vec<f64>,
    pub speed_mph: f64,
    /// 24 hourly speed multipliers applied to `speed_mph`.
    pub speed_profile: Vec<f64>,
    /// Road distance over great-circle distance.
    pub detour_factor: f64,
    /// Log-normal spread of recorded durations around the speed model.
    pub duration_noise: f64,
    pub min_trip_miles: f64,
    pub max_passengers: u32,
    pub day: DayType,
    /// Days are the first `days` dates of `day`'s type on or after this.
    pub start_date: NaiveDate,
    pub days: usize,
    /// Share of trips corrupted with a rejectable defect.
    pub outlier_fraction: f64,
}

const NYC_DIURNAL: [f64; 24] = [
    0.7, 0.5, 0.35, 0.25, 0.2, 0.25, 0.5, 0.9, 1.2, 1.2, 1.1, 1.1, 1.15, 1.15, 1.15, 1.1, 1.1, 1.3,
    1.5, 1.5, 1.4, 1.3, 1.15, 0.9,
];

const NYC_SPEED: [f64; 24] = [
    1.35, 1.4, 1.45, 1.45, 1.4, 1.3, 1.1, 0.8, 0.7, 0.75, 0.85, 0.85, 0.85, 0.85, 0.8, 0.75, 0.7,
    0.65, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2,
];

impl Default for SyntheticDemandSpec {
    fn default() -> Self {
        Preset::Dense.demand()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// About 60 trips an hour over a 10 x 10 cell patch of downtown.
    Dense,
    /// About 8 trips an hour over a 10 x 10 cell patch of uptown.
    Sparse,
}

/// A box exactly `n_lat x n_lon` default cells wide anchored at `corner`.
pub fn cell_patch(corner: GeoPoint, n_lat: u32, n_lon: u32) -> BBox {
    // Stop just short of the next cell boundary so the grid has exactly n cells.
    let span = |n: u32| DEFAULT_CELL_DEG * n as f64 - DEFAULT_CELL_DEG * 0.05;
    BBox {
        lat_min: corner.lat,
        lat_max: corner.lat + span(n_lat),
        lon_min: corner.lon,
        lon_max: corner.lon + span(n_lon),
    }
}

impl Preset {
    pub fn region(self) -> BBox {
        match self {
            Preset::Dense => cell_patch(BBox::downtown().lower_left(), 10, 10),
            Preset::Sparse => cell_patch(BBox::uptown().lower_left(), 10, 10),
        }
    }

    pub fn demand(self) -> SyntheticDemandSpec {
        let base = SyntheticDemandSpec {
            region: self.region(),
            cell_deg: DEFAULT_CELL_DEG,
            trips_per_hour: 60.0,
            background: 0.4,
            hotspots: vec![
                Hotspot {
                    lat_frac: 0.7,
                    lon_frac: 0.3,
                    radius_frac: 0.15,
                    weight: 0.4,
                },
                Hotspot {
                    lat_frac: 0.2,
                    lon_frac: 0.8,
                    radius_frac: 0.15,
                    weight: 0.2,
                },
            ],
            diurnal: NYC_DIURNAL.to_vec(),
            speed_mph: 11.0,
            speed_profile: NYC_SPEED.to_vec(),
            detour_factor: 1.3,
            duration_noise: 0.2,
            min_trip_miles: 0.25,
            max_passengers: 4,
            day: DayType::Weekday,
            start_date: NaiveDate::from_ymd_opt(2013, 3, 4).expect("valid date"),
            days: 1,
            outlier_fraction: 0.0,
        };
        match self {
            Preset::Dense => base,
            Preset::Sparse => SyntheticDemandSpec {
                trips_per_hour: 8.0,
                background: 0.3,
                hotspots: vec![Hotspot {
                    lat_frac: 0.5,
                    lon_frac: 0.5,
                    radius_frac: 0.2,
                    weight: 0.7,
                }],
                speed_mph: 14.0,
                ..base
            },
        }
    }

    pub fn experiment(self) -> ExperimentConfig {
        let region = self.region();
        ExperimentConfig {
            region,
            data: DataSource::Synthetic {
                spec: self.demand(),
                history_days: 20,
            },
            ..ExperimentConfig::base()
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Preset::Dense),
            "sparse" => Ok(Preset::Sparse),
            _ => Err(Error::Config(format!(
                "unknown preset `{s}` (dense|sparse)"
            ))),
        }
    }
}

impl SyntheticDemandSpec {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        let bad = |what: &str| Err(Error::Config(format!("synthetic demand: {what}")));
        if !(self.trips_per_hour >= 0.0) || !(self.background >= 0.0) {
            return bad("intensities must be >= 0");
        }
        if self
            .hotspots
            .iter()
            .any(|h| !(h.weight >= 0.0) || !(h.radius_frac > 0.0))
        {
            return bad("hotspot weights must be >= 0 and radii > 0");
        }
        if self.diurnal.len() != 24 || self.diurnal.iter().any(|v| !(*v >= 0.0)) {
            return bad("diurnal profile needs 24 non-negative values");
        }
        if self.speed_profile.len() != 24 || self.speed_profile.iter().any(|v| !(*v > 0.0)) {
            return bad("speed profile needs 24 positive values");
        }
        if !(self.speed_mph > 0.0 && self.detour_factor >= 1.0 && self.cell_deg > 0.0) {
            return bad("speed must be > 0, detour >= 1, cell size > 0");
        }
        if !(self.duration_noise >= 0.0) || !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad("noise must be >= 0 and the outlier share in [0, 1]");
        }
        if self.max_passengers == 0 {
            return bad("max passengers must be positive");
        }
        Ok(())
    }

    /// The first `days` dates matching `day`.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut out = Vec::with_capacity(self.days);
        let mut d = self.start_date;
        while out.len() < self.days {
            if DayType::from_date(d) == self.day {
                out.push(d);
            }
            d = d.succ_opt().expect("date in range");
        }
        out
    }

    /// Normalized origin weight of each grid cell, row-major.
    fn cell_weights(&self, grid: &GridSpec) -> Vec<f64> {
        let r = &self.region;
        let side = (r.lat_max - r.lat_min).max(r.lon_max - r.lon_min);
        let mut w = Vec::with_capacity(grid.cell_count());
        for i in 0..grid.lat_cells {
            for j in 0..grid.lon_cells {
                let c = grid.cell_corner(i, j);
                let lat = (c.lat + grid.cell_lat / 2.0).min(r.lat_max);
                let lon = (c.lon + grid.cell_lon / 2.0).min(r.lon_max);
                let mut v = self.background;
                for h in &self.hotspots {
                    let dy = lat - (r.lat_min + h.lat_frac * (r.lat_max - r.lat_min));
                    let dx = lon - (r.lon_min + h.lon_frac * (r.lon_max - r.lon_min));
                    let rad = h.radius_frac * side;
                    v += h.weight * (-(dx * dx + dy * dy) / (2.0 * rad * rad)).exp();
                }
                w.push(v);
            }
        }
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|v| *v /= total);
        }
        w
    }

    pub fn expected_trips(&self) -> f64 {
        self.trips_per_hour * 24.0 * self.days as f64
    }
}

fn point_in_cell<R: Rng>(grid: &GridSpec, region: &BBox, cell: usize, rng: &mut R) -> GeoPoint {
    let i = (cell / grid.lon_cells as usize) as u32;
    let j = (cell % grid.lon_cells as usize) as u32;
    let c = grid.cell_corner(i, j);
    let lat_hi = (c.lat + grid.cell_lat).min(region.lat_max);
    let lon_hi = (c.lon + grid.cell_lon).min(region.lon_max);
    GeoPoint {
        lat: c.lat + rng.random::<f64>() * (lat_hi - c.lat),
        lon: c.lon + rng.random::<f64>() * (lon_hi - c.lon),
    }
}

/// Trips for every configured day, sorted by pickup time.
pub fn generate_trips(spec: &SyntheticDemandSpec, seed: u64) -> Result<Vec<TripRecord>> {
    spec.validate()?;
    let grid = GridSpec::covering(&spec.region, spec.cell_deg, spec.cell_deg)?;
    let weights = spec.cell_weights(&grid);
    let diurnal_mean = spec.diurnal.iter().sum::<f64>() / 24.0;
    let mut trips = Vec::new();
    if spec.trips_per_hour == 0.0 || diurnal_mean == 0.0 || weights.iter().all(|&w| w == 0.0) {
        return Ok(trips);
    }
    let dest =
        WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("cell weights: {e}")))?;
    for (k, date) in spec.dates().into_iter().enumerate() {
        // Seed each day on its own so day 0 is the same however many days are generated.
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(k as u64),
        );
        let midnight = date.and_hms_opt(0, 0, 0).expect("valid time");
        for hour in 0..24 {
            let lam_hour = spec.trips_per_hour * spec.diurnal[hour] / diurnal_mean;
            let speed = spec.speed_mph * spec.speed_profile[hour];
            for (cell, &w) in weights.iter().enumerate() {
                let lam = lam_hour * w;
                if lam <= 0.0 {
                    continue;
                }
                let n = Poisson::new(lam)
                    .map_err(|e| Error::Config(format!("poisson: {e}")))?
                    .sample(&mut rng) as usize;
                for _ in 0..n {
                    let origin = point_in_cell(&grid, &spec.region, cell, &mut rng);
                    let mut destination = origin;
                    for _ in 0..8 {
                        destination =
                            point_in_cell(&grid, &spec.region, dest.sample(&mut rng), &mut rng);
                        if haversine_miles(origin, destination) * spec.detour_factor
                            >= spec.min_trip_miles
                        {
                            break;
                        }
                    }
                    let miles = (haversine_miles(origin, destination) * spec.detour_factor)
                        .max(spec.min_trip_miles);
                    // Recorded distances carry two decimals; keep the duration consistent with that.
                    let miles = (miles * 100.0).round() / 100.0;
                    let z: f64 = rng.sample(StandardNormal);
                    let s = spec.duration_noise;
                    let secs = (miles / speed * 3600.0 * (s * z - 0.5 * s * s).exp())
                        .round()
                        .clamp(60.0, 7200.0);
                    let pickup_dt = midnight
                        + Duration::seconds(hour as i64 * 3600 + rng.random_range(0..3600));
                    trips.push(TripRecord {
                        origin,
                        destination,
                        pickup_dt,
                        dropoff_dt: pickup_dt + Duration::seconds(secs as i64),
                        distance: miles,
                        duration: secs,
                        passengers: rng.random_range(1..=spec.max_passengers),
                    });
                }
            }
        }
    }
    trips.sort_by_key(|t| t.pickup_dt);
    if spec.outlier_fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0071_1e55);
        inject_outliers(&mut trips, spec.outlier_fraction, &mut rng);
    }
    Ok(trips)
}

/// Defects the default outlier rules reject: bad passenger counts, missing GPS,
/// zero time with non-zero distance, zero distance with non-zero time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierKind {
    Passengers,
    MissingGps,
    ZeroTime,
    ZeroDistance,
}

/// Corrupts about `fraction` of the trips in place and returns the indices hit.
pub fn inject_outliers<R: Rng>(
    trips: &mut [TripRecord],
    fraction: f64,
    rng: &mut R,
) -> Vec<(usize, OutlierKind)> {
    let kinds = [
        OutlierKind::Passengers,
        OutlierKind::MissingGps,
        OutlierKind::ZeroTime,
        OutlierKind::ZeroDistance,
    ];
    let mut hit = Vec::new();
    for (i, t) in trips.iter_mut().enumerate() {
        if rng.random::<f64>() >= fraction {
            continue;
        }
        let kind = kinds[rng.random_range(0..kinds.len())];
        match kind {
            OutlierKind::Passengers => {
                t.passengers = if rng.random::<bool>() {
                    0
                } else {
                    rng.random_range(8..=9)
                }
            }
            OutlierKind::MissingGps => {
                let zero = GeoPoint { lat: 0.0, lon: 0.0 };
                if rng.random::<bool>() {
                    t.origin = zero;
                } else {
                    t.destination = zero;
                }
            }
            OutlierKind::ZeroTime => {
                t.duration = 0.0;
                t.dropoff_dt = t.pickup_dt;
            }
            OutlierKind::ZeroDistance => t.distance = 0.0,
        }
        hit.push((i, kind));
    }
    hit
}

/// Writes the synthetic trips as CSV in the canonical schema; returns the row count.
pub fn generate_synthetic<W: Write>(spec: &SyntheticDemandSpec, seed: u64, w: W) -> Result<usize> {
    let trips = generate_trips(spec, seed)?;
    write_csv(w, &trips)?;
    Ok(trips.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated demand; ETA models train on `history_days` days and the
    /// simulator replays the first of them.
    Synthetic {
        spec: SyntheticDemandSpec,
        history_days: usize,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: SchemaMapping,
        #[serde(default)]
        rules: OutlierRules,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            spec: SyntheticDemandSpec::default(),
            history_days: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatorEta {
    Stnn,
    ConstantSpeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtaExperimentConfig {
    pub train_ratio: f64,
    pub stnn: TrainConfig,
    pub stnn_arch: StnnArch,
    pub timenn: TrainConfig,
    pub timenn_hidden: Vec<usize>,
    /// Leg-time source inside the simulator.
    pub simulator: SimulatorEta,
    pub constant_speed_mph: f64,
    pub constant_detour: f64,
}

impl Default for EtaExperimentConfig {
    fn default() -> Self {
        let net = TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 15,
            momentum: 0.9,
            ..TrainConfig::default()
        };
        EtaExperimentConfig {
            train_ratio: 0.8,
            stnn: net.clone(),
            stnn_arch: StnnArch::default(),
            timenn: net,
            timenn_hidden: vec![64, 64],
            simulator: SimulatorEta::Stnn,
            constant_speed_mph: 11.0,
            constant_detour: 1.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub visit_decay: bool,
    pub epsilon: EpsilonSchedule,
}

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig {
            alpha: 0.1,
            gamma: DEFAULT_GAMMA,
            visit_decay: false,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Study region; wins over the region fields of `env` and synthetic `data`.
    pub region: BBox,
    pub cell_deg: f64,
    pub data: DataSource,
    pub env: EnvConfig,
    pub eta: EtaExperimentConfig,
    pub dqn: DqnConfig,
    pub tabular: TabularConfig,
    pub dqn_episodes: usize,
    pub tabular_episodes: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub days: Vec<DayType>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Preset::Dense.experiment()
    }
}

fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn toml_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("config file: {e}"))
}

impl ExperimentConfig {
    fn base() -> Self {
        let region = Preset::Dense.region();
        ExperimentConfig {
            region,
            cell_deg: DEFAULT_CELL_DEG,
            data: DataSource::Synthetic {
                spec: Preset::Dense.demand(),
                history_days: 20,
            },
            env: EnvConfig {
                region,
                ..EnvConfig::default()
            },
            eta: EtaExperimentConfig::default(),
            dqn: DqnConfig {
                learning_rate: 0.01,
                reward_scale: 0.1,
                ..DqnConfig::default()
            },
            tabular: TabularConfig::default(),
            dqn_episodes: 300,
            tabular_episodes: 300,
            eval_episodes: 20,
            seeds: vec![0, 1, 2],
            days: vec![DayType::Weekday],
            out_dir: None,
        }
    }

    /// Parses a TOML config. A top-level `preset = "dense" | "sparse"` selects the
    /// base values; every other key overrides them.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let over: toml::Value = toml::from_str(s).map_err(toml_err)?;
        let preset = match over.get("preset") {
            None => Preset::Dense,
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::Config("`preset` must be a string".into()))?
                .parse()?,
        };
        let base = preset.experiment();
        let mut merged = toml::Value::try_from(&base).map_err(toml_err)?;
        let mut over = over;
        if let toml::Value::Table(t) = &mut over {
            t.remove("preset");
        }
        merge_toml(&mut merged, over);
        let mut cfg: ExperimentConfig = merged.try_into().map_err(toml_err)?;
        // A region override without a data override moves the synthetic demand along with it.
        if let DataSource::Synthetic { spec, .. } = &mut cfg.data {
            spec.region = cfg.region;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(toml_err)
    }

    pub fn set_region(&mut self, region: BBox) {
        self.region = region;
        if let DataSource::Synthetic { spec, .. } = &mut self.data {
            spec.region = region;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        self.env_config(DayType::Weekday).validate()?;
        self.dqn.validate()?;
        self.tabular.epsilon.validate()?;
        QTable::new(self.tabular.alpha, self.tabular.gamma)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.days.is_empty() {
            return Err(Error::Config("at least one day type is required".into()));
        }
        if !(self.eta.train_ratio > 0.0 && self.eta.train_ratio < 1.0) {
            return Err(Error::Config("ETA train ratio must lie in (0, 1)".into()));
        }
        match &self.data {
            DataSource::Synthetic { spec, history_days } => {
                spec.validate()?;
                if *history_days == 0 {
                    return Err(Error::Config("history_days must be positive".into()));
                }
            }
            DataSource::Csv { path, rules, .. } => {
                rules.validate()?;
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "data file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::covering(&self.region, self.cell_deg, self.cell_deg)
    }

    pub fn env_config(&self, day: DayType) -> EnvConfig {
        EnvConfig {
            region: self.region,
            day,
            cell_lat: self.cell_deg,
            cell_lon: self.cell_deg,
            ..self.env.clone()
        }
    }
}

/// Trips for one day type: `history` feeds the ETA models, `replay` the simulator.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub history: TripStore,
    pub replay: TripStore,
    pub ingest: Option<IngestReport>,
}

pub fn load_dataset(cfg: &ExperimentConfig, day: DayType, seed: u64) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic { spec, history_days } => {
            let spec = SyntheticDemandSpec {
                region: cfg.region,
                day,
                days: *history_days,
                ..spec.clone()
            };
            let history = generate_trips(&spec, seed)?;
            let first = spec.dates()[0];
            let replay: Vec<TripRecord> = history
                .iter()
                .filter(|t| t.pickup_dt.date() == first)
                .cloned()
                .collect();
            let history = TripStore::new(history).mask_region(cfg.region);
            Ok(Dataset {
                history,
                replay: TripStore::new(replay).mask_region(cfg.region),
                ingest: None,
            })
        }
        DataSource::Csv {
            path,
            schema,
            rules,
        } => {
            let (store, report) = ingest_csv(path, schema, rules)?;
            let store = store.mask_region(cfg.region);
            if store.is_empty() {
                return Err(Error::EmptyRegion);
            }
            Ok(Dataset {
                history: store.clone(),
                replay: store,
                ingest: Some(report),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRow {
    pub method: String,
    #[serde(flatten)]
    pub metrics: EtaMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EtaTable {
    pub rows: Vec<EtaRow>,
}

impl EtaTable {
    pub fn get(&self, method: &str) -> Option<&EtaMetrics> {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .map(|r| &r.metrics)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "mae", "mre", "medae", "medre", "r2", "n"])?;
        for r in &self.rows {
            let m = &r.metrics;
            out.write_record([
                r.method.clone(),
                m.mae.to_string(),
                m.mre.to_string(),
                m.medae.to_string(),
                m.medre.to_string(),
                m.r2.to_string(),
                m.n.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<eta table>", e))?;
        Ok(())
    }
}

pub fn train_stnn_for(cfg: &ExperimentConfig, train: &TripStore, seed: u64) -> Result<StnnModel> {
    let tc = TrainConfig {
        seed,
        ..cfg.eta.stnn.clone()
    };
    Ok(train_stnn(train, &cfg.grid()?, &tc, &cfg.eta.stnn_arch)?.0)
}

/// Trains LRT, TimeNN and ST-NN on one split of the history and scores them on the rest.
pub fn run_eta_experiment(cfg: &ExperimentConfig, day: DayType, seed: u64) -> Result<EtaTable> {
    let data = load_dataset(cfg, day, seed)?;
    let (train, test) = data.history.train_test_split(cfg.eta.train_ratio, seed)?;
    let test: Vec<TripRecord> = test.iter().cloned().collect();
    eta_table(cfg, &train, &test, seed)
}

pub fn eta_table(
    cfg: &ExperimentConfig,
    train: &TripStore,
    test: &[TripRecord],
    seed: u64,
) -> Result<EtaTable> {
    let grid = cfg.grid()?;
    let lrt = train_lrt(train)?;
    let tn_cfg = TrainConfig {
        seed,
        ..cfg.eta.timenn.clone()
    };
    let (timenn, _) = train_timenn(
        train,
        &grid,
        &tn_cfg,
        &cfg.eta.timenn_hidden,
        Activation::Relu,
    )?;
    let stnn = train_stnn_for(cfg, train, seed)?;
    let rows = vec![
        EtaRow {
            method: "LRT".into(),
            metrics: evaluate(|q| Ok(lrt.predict(q)), test)?,
        },
        EtaRow {
            method: "TimeNN".into(),
            metrics: evaluate(|q| timenn.predict(q), test)?,
        },
        EtaRow {
            method: "ST-NN".into(),
            metrics: evaluate(|q| Ok(stnn.predict(q)?.travel_time), test)?,
        },
    ];
    Ok(EtaTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub policy: String,
    pub day: DayType,
    /// Mean over seeds of the per-seed mean cumulative reward, miles.
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub region: BBox,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub dqn_episodes: usize,
    pub tabular_episodes: usize,
    pub scores: Vec<PolicyScore>,
    /// Held-out accuracy of the simulator's leg-time model, per day type.
    pub eta: Vec<(DayType, EtaMetrics)>,
    pub curves: Vec<String>,
}

impl EvalReport {
    pub fn score(&self, policy: &str, day: DayType) -> Option<&PolicyScore> {
        self.scores
            .iter()
            .find(|s| s.policy == policy && s.day == day)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Plain-text table, one row per policy and day type.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:<8} {:>10} {:>8}\n",
            "policy", "day", "mean_mi", "std"
        );
        for p in &self.scores {
            s.push_str(&format!(
                "{:<10} {:<8} {:>10.3} {:>8.3}\n",
                p.policy,
                p.day.as_str(),
                p.mean,
                p.std
            ));
        }
        s
    }
}

/// Learning curves of one training seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedCurves {
    pub day: DayType,
    pub seed: u64,
    pub dqn: LearningCurve,
    pub tabular: LearningCurve,
}

#[derive(Debug, Clone)]
pub struct PolicyOutcome {
    pub report: EvalReport,
    pub curves: Vec<SeedCurves>,
}

/// Reset seed of evaluation episode `i` for training seed `seed`.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003)
        .wrapping_add(7_777_777 + i as u64)
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Coefficient of variation (population std over |mean|) of the last `fraction` of `curve`.
pub fn tail_cv(curve: &[f64], fraction: f64) -> f64 {
    let k = ((curve.len() as f64 * fraction).ceil() as usize).clamp(1, curve.len().max(1));
    let tail = &curve[curve.len().saturating_sub(k)..];
    let n = tail.len() as f64;
    let m = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    var.sqrt() / m.abs()
}

/// Mean cumulative reward of `policy` over the seed's evaluation episodes.
pub fn evaluate_policy(
    env: &mut CarpoolEnv,
    policy: &mut dyn Policy,
    seed: u64,
    episodes: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..episodes {
        total += run_episode(env, policy, eval_seed(seed, i), false)?.cumulative_reward;
    }
    Ok(total / episodes.max(1) as f64)
}

pub const POLICIES: [&str; 4] = ["wait", "fixed", "tabular", "dqn"];

struct SeedRun {
    scores: [f64; 4],
    curves: SeedCurves,
    dqn: DqnAgent,
    table: QTable,
}

fn run_seed(
    cfg: &ExperimentConfig,
    day: DayType,
    store: Arc<TripStore>,
    eta: Arc<dyn TravelTimeEstimator>,
    seed: u64,
) -> Result<SeedRun> {
    let mut env = CarpoolEnv::new(cfg.env_config(day), store, eta)?;
    let mut table = QTable::new(cfg.tabular.alpha, cfg.tabular.gamma)?;
    table.visit_decay = cfg.tabular.visit_decay;
    let tab_curve = train_tabular(
        &mut env,
        &mut table,
        cfg.tabular_episodes,
        cfg.tabular.epsilon,
        seed,
    )?;
    let mut agent = DqnAgent::new(
        DqnConfig {
            seed,
            ..cfg.dqn.clone()
        },
        cfg.region,
    )?;
    let dqn_curve = train_dqn(&mut env, &mut agent, cfg.dqn_episodes, seed)?;
    let n = cfg.eval_episodes;
    let scores = [
        evaluate_policy(&mut env, &mut ConstantPolicy(Action::Wait), seed, n)?,
        evaluate_policy(&mut env, &mut FixedPolicy, seed, n)?,
        evaluate_policy(
            &mut env,
            &mut TablePolicy {
                table: &table,
                epsilon: 0.0,
            },
            seed,
            n,
        )?,
        evaluate_policy(
            &mut env,
            &mut DqnPolicy {
                agent: &agent,
                epsilon: 0.0,
            },
            seed,
            n,
        )?,
    ];
    Ok(SeedRun {
        scores,
        curves: SeedCurves {
            day,
            seed,
            dqn: dqn_curve,
            tabular: tab_curve,
        },
        dqn: agent,
        table,
    })
}

/// Leg-time model for the simulator plus its held-out metrics when learned.
pub fn simulator_eta(
    cfg: &ExperimentConfig,
    history: &TripStore,
    seed: u64,
) -> Result<(Arc<dyn TravelTimeEstimator>, Option<EtaMetrics>)> {
    match cfg.eta.simulator {
        SimulatorEta::ConstantSpeed => Ok((
            Arc::new(ConstantSpeedEta {
                speed_mph: cfg.eta.constant_speed_mph,
                detour_factor: cfg.eta.constant_detour,
            }),
            None,
        )),
        SimulatorEta::Stnn => {
            let (train, test) = history.train_test_split(cfg.eta.train_ratio, seed)?;
            let model = train_stnn_for(cfg, &train, seed)?;
            let test: Vec<TripRecord> = test.iter().cloned().collect();
            let m = evaluate(|q| Ok(model.predict(q)?.travel_time), &test)?;
            Ok((Arc::new(model), Some(m)))
        }
    }
}

/// Trains tabular Q and DQN per seed (seeds run in parallel threads), then
/// scores wait-only, fixed, tabular and DQN greedily on seeded evaluation days.
pub fn run_policy_experiment(cfg: &ExperimentConfig) -> Result<PolicyOutcome> {
    cfg.validate()?;
    let data_seed = cfg.seeds[0];
    let mut scores = Vec::new();
    let mut curves = Vec::new();
    let mut eta_rows = Vec::new();
    let mut artifacts = Vec::new();
    for &day in &cfg.days {
        let data = load_dataset(cfg, day, data_seed)?;
        let (eta, m) = simulator_eta(cfg, &data.history, data_seed)?;
        if let Some(m) = m {
            eta_rows.push((day, m));
        }
        let store = Arc::new(data.replay);
        let runs: Vec<Result<SeedRun>> = std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let (store, eta) = (store.clone(), eta.clone());
                    scope.spawn(move || run_seed(cfg, day, store, eta, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect()
        });
        let runs: Vec<SeedRun> = runs.into_iter().collect::<Result<_>>()?;
        for (k, name) in POLICIES.iter().enumerate() {
            let per_seed: Vec<f64> = runs.iter().map(|r| r.scores[k]).collect();
            let (mean, std) = mean_std(&per_seed);
            scores.push(PolicyScore {
                policy: (*name).to_string(),
                day,
                mean,
                std,
                per_seed,
            });
        }
        if let Some(dir) = &cfg.out_dir {
            for r in &runs {
                artifacts.extend(write_seed_artifacts(dir, r)?);
            }
        }
        curves.extend(runs.into_iter().map(|r| r.curves));
    }
    let report = EvalReport {
        region: cfg.region,
        seeds: cfg.seeds.clone(),
        eval_episodes: cfg.eval_episodes,
        dqn_episodes: cfg.dqn_episodes,
        tabular_episodes: cfg.tabular_episodes,
        scores,
        eta: eta_rows,
        curves: artifacts,
    };
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join("report.json");
        report.save(&path)?;
        validate_outputs(dir, &report)?;
    }
    Ok(PolicyOutcome { report, curves })
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(std::io::BufWriter::new(
        fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_seed_artifacts(dir: &Path, r: &SeedRun) -> Result<Vec<String>> {
    let tag = format!("{}_seed{}", r.curves.day.as_str(), r.curves.seed);
    let names = emit_curves(dir, &tag, &r.curves.dqn, &r.curves.tabular)?;
    let models = dir.join("models");
    fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
    r.dqn.online.save(models.join(format!("dqn_{tag}.json")))?;
    r.table.save(models.join(format!("qtable_{tag}.csv")))?;
    Ok(names)
}

/// Writes `curves/dqn_mean_q_<tag>.csv` (step, mean_q), `curves/dqn_<tag>.csv` and
/// `curves/tabular_<tag>.csv` (episode, mean_q, loss, cumulative_reward). Returns paths relative to `dir`.
pub fn emit_curves(
    dir: &Path,
    tag: &str,
    dqn: &LearningCurve,
    tabular: &LearningCurve,
) -> Result<Vec<String>> {
    let names = [
        format!("curves/dqn_mean_q_{tag}.csv"),
        format!("curves/dqn_{tag}.csv"),
        format!("curves/tabular_{tag}.csv"),
    ];
    dqn.write_mean_q_csv(create(&dir.join(&names[0]))?)?;
    dqn.write_csv(create(&dir.join(&names[1]))?)?;
    tabular.write_csv(create(&dir.join(&names[2]))?)?;
    Ok(names.to_vec())
}

/// Re-reads every file the report points at and checks its columns.
pub fn validate_outputs(dir: &Path, report: &EvalReport) -> Result<()> {
    let back = EvalReport::load(dir.join("report.json"))?;
    if back.scores.len() != report.scores.len() {
        return Err(Error::Config("report.json does not match the run".into()));
    }
    for name in &report.curves {
        let path = dir.join(name);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(file);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let want: &[&str] = if name.contains("mean_q") {
            &["step", "mean_q"]
        } else {
            &["episode", "mean_q", "loss", "cumulative_reward"]
        };
        if header != want {
            return Err(Error::Config(format!(
                "{name}: unexpected columns {header:?}"
            )));
        }
        for row in rdr.records() {
            let row = row?;
            if row.len() != want.len() || row.iter().any(|v| v.parse::<f64>().is_err()) {
                return Err(Error::Config(format!("{name}: malformed row {row:?}")));
            }
        }
    }
    Ok(())
}
