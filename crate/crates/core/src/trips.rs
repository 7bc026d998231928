//! Historical trip ingestion, outlier rejection and pickup-time queries.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_time::{BBox, DayType, GeoPoint};

pub const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// One recorded taxi trip. Distances are in miles, durations in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub pickup_dt: NaiveDateTime,
    pub dropoff_dt: NaiveDateTime,
    pub distance: f64,
    pub duration: f64,
    pub passengers: u32,
}

impl TripRecord {
    pub fn pickup_seconds(&self) -> f64 {
        self.pickup_dt.num_seconds_from_midnight() as f64
    }

    /// Dropoff time on the pickup day's clock; can exceed 86400 for trips
    /// that run past midnight.
    pub fn dropoff_seconds(&self) -> f64 {
        self.pickup_seconds() + self.duration
    }

    pub fn day_type(&self) -> DayType {
        DayType::from_date(self.pickup_dt.date())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierRules {
    pub min_passengers: u32,
    pub max_passengers: u32,
    /// Inclusive duration range, seconds.
    pub min_duration: f64,
    pub max_duration: f64,
    /// Distance must be strictly greater than `min_distance` and at most `max_distance` (miles).
    pub min_distance: f64,
    pub max_distance: f64,
    pub bbox: BBox,
    /// Largest tolerated gap between the recorded trip time and dropoff - pickup.
    pub max_duration_mismatch: f64,
}

impl Default for OutlierRules {
    fn default() -> Self {
        OutlierRules {
            min_passengers: 1,
            max_passengers: 7,
            min_duration: 60.0,
            max_duration: 7200.0,
            min_distance: 0.0,
            max_distance: 50.0,
            bbox: BBox::greater_nyc(),
            max_duration_mismatch: 60.0,
        }
    }
}

impl OutlierRules {
    /// Accepts every parseable row.
    pub fn permissive() -> Self {
        OutlierRules {
            min_passengers: 0,
            max_passengers: u32::MAX,
            min_duration: f64::NEG_INFINITY,
            max_duration: f64::INFINITY,
            min_distance: f64::NEG_INFINITY,
            max_distance: f64::INFINITY,
            bbox: BBox {
                lat_min: -90.0,
                lat_max: 90.0,
                lon_min: -180.0,
                lon_max: 180.0,
            },
            max_duration_mismatch: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_passengers > self.max_passengers
            || !(self.min_duration < self.max_duration)
            || !(self.min_distance < self.max_distance)
        {
            return Err(Error::Config(format!(
                "inconsistent outlier rules {self:?}"
            )));
        }
        self.bbox.validate()
    }

    /// First rule the trip violates, in a fixed order.
    pub fn check(&self, trip: &TripRecord, recorded_span: f64) -> Option<RejectReason> {
        if !(self.min_passengers..=self.max_passengers).contains(&trip.passengers) {
            return Some(RejectReason::Passengers);
        }
        if !self.bbox.contains(trip.origin) || !self.bbox.contains(trip.destination) {
            return Some(RejectReason::Coordinates);
        }
        if !(trip.duration >= self.min_duration && trip.duration <= self.max_duration) {
            return Some(RejectReason::Duration);
        }
        if !(trip.distance > self.min_distance && trip.distance <= self.max_distance) {
            return Some(RejectReason::Distance);
        }
        if (trip.duration - recorded_span).abs() > self.max_duration_mismatch {
            return Some(RejectReason::DurationMismatch);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Unparsable,
    Passengers,
    Coordinates,
    Duration,
    Distance,
    DurationMismatch,
}

/// Column names for each field the ingester needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaMapping {
    pub pickup_datetime: String,
    pub dropoff_datetime: String,
    pub pickup_longitude: String,
    pub pickup_latitude: String,
    pub dropoff_longitude: String,
    pub dropoff_latitude: String,
    pub trip_distance: String,
    /// Optional; when the column is absent duration falls back to dropoff - pickup.
    pub trip_time_in_secs: String,
    pub passenger_count: String,
}

impl Default for SchemaMapping {
    fn default() -> Self {
        SchemaMapping {
            pickup_datetime: "pickup_datetime".into(),
            dropoff_datetime: "dropoff_datetime".into(),
            pickup_longitude: "pickup_longitude".into(),
            pickup_latitude: "pickup_latitude".into(),
            dropoff_longitude: "dropoff_longitude".into(),
            dropoff_latitude: "dropoff_latitude".into(),
            trip_distance: "trip_distance".into(),
            trip_time_in_secs: "trip_time_in_secs".into(),
            passenger_count: "passenger_count".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub tally: BTreeMap<RejectReason, usize>,
}

#[derive(Debug, Clone, Default)]
struct Partition {
    trips: Vec<TripRecord>,
    pickup: Vec<f64>,
}

impl Partition {
    fn from_unsorted(mut trips: Vec<TripRecord>) -> Self {
        // Stable: equal pickup times keep input order.
        trips.sort_by(|a, b| a.pickup_seconds().total_cmp(&b.pickup_seconds()));
        let pickup = trips.iter().map(TripRecord::pickup_seconds).collect();
        Partition { trips, pickup }
    }
}

/// Immutable trip collection, partitioned by day type and sorted by pickup
/// seconds-of-day within each partition.
#[derive(Debug, Clone, Default)]
pub struct TripStore {
    weekday: Partition,
    weekend: Partition,
    region: Option<BBox>,
}

impl TripStore {
    pub fn new(records: impl IntoIterator<Item = TripRecord>) -> Self {
        let (weekend, weekday): (Vec<_>, Vec<_>) =
            records.into_iter().partition(|t| t.day_type().is_weekend());
        TripStore {
            weekday: Partition::from_unsorted(weekday),
            weekend: Partition::from_unsorted(weekend),
            region: None,
        }
    }

    fn partition(&self, day: DayType) -> &Partition {
        match day {
            DayType::Weekday => &self.weekday,
            DayType::Weekend => &self.weekend,
        }
    }

    pub fn len(&self) -> usize {
        self.weekday.trips.len() + self.weekend.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn region(&self) -> Option<BBox> {
        self.region
    }

    pub fn trips(&self, day: DayType) -> &[TripRecord] {
        &self.partition(day).trips
    }

    /// All records, weekday partition first.
    pub fn iter(&self) -> impl Iterator<Item = &TripRecord> {
        self.weekday.trips.iter().chain(self.weekend.trips.iter())
    }

    /// Trips whose origin and destination both lie inside `bbox`.
    pub fn mask_region(&self, bbox: BBox) -> TripStore {
        let keep = |p: &Partition| Partition {
            trips: p
                .trips
                .iter()
                .filter(|t| bbox.contains(t.origin) && bbox.contains(t.destination))
                .cloned()
                .collect(),
            pickup: Vec::new(),
        };
        let fix = |mut p: Partition| {
            p.pickup = p.trips.iter().map(TripRecord::pickup_seconds).collect();
            p
        };
        TripStore {
            weekday: fix(keep(&self.weekday)),
            weekend: fix(keep(&self.weekend)),
            region: Some(bbox),
        }
    }

    /// Trips with pickup seconds-of-day in `[t0, t1]`, ascending by pickup.
    pub fn query_window(&self, t0: f64, t1: f64, day: DayType) -> &[TripRecord] {
        if !(t0 <= t1) {
            return &[];
        }
        let p = self.partition(day);
        let lo = p.pickup.partition_point(|&s| s < t0);
        let hi = p.pickup.partition_point(|&s| s <= t1);
        &p.trips[lo..hi.max(lo)]
    }

    /// Deterministic shuffle-and-cut split; `ratio` is the training share.
    pub fn train_test_split(&self, ratio: f64, seed: u64) -> Result<(TripStore, TripStore)> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Domain(format!(
                "split ratio {ratio} must lie in (0, 1)"
            )));
        }
        let all: Vec<&TripRecord> = self.iter().collect();
        let mut idx: Vec<usize> = (0..all.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (all.len() as f64 * ratio).round() as usize;
        let pick = |ids: &[usize]| {
            let mut s = TripStore::new(ids.iter().map(|&i| all[i].clone()));
            s.region = self.region;
            s
        };
        Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
    }
}

struct Columns {
    pickup_dt: usize,
    dropoff_dt: usize,
    pickup_lon: usize,
    pickup_lat: usize,
    dropoff_lon: usize,
    dropoff_lat: usize,
    distance: usize,
    trip_time: Option<usize>,
    passengers: usize,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, schema: &SchemaMapping) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
        Ok(Columns {
            pickup_dt: need(&schema.pickup_datetime)?,
            dropoff_dt: need(&schema.dropoff_datetime)?,
            pickup_lon: need(&schema.pickup_longitude)?,
            pickup_lat: need(&schema.pickup_latitude)?,
            dropoff_lon: need(&schema.dropoff_longitude)?,
            dropoff_lat: need(&schema.dropoff_latitude)?,
            distance: need(&schema.trip_distance)?,
            trip_time: find(&schema.trip_time_in_secs),
            passengers: need(&schema.passenger_count)?,
        })
    }

    /// Parsed trip plus the dropoff - pickup span, for the mismatch rule.
    fn parse(&self, row: &csv::StringRecord) -> Option<(TripRecord, f64)> {
        let field = |i: usize| row.get(i).map(str::trim);
        let num = |i: usize| field(i)?.parse::<f64>().ok().filter(|v| v.is_finite());
        let dt = |i: usize| NaiveDateTime::parse_from_str(field(i)?, DATETIME_FORMAT).ok();

        let pickup_dt = dt(self.pickup_dt)?;
        let dropoff_dt = dt(self.dropoff_dt)?;
        let span = (dropoff_dt - pickup_dt).num_seconds() as f64;
        let duration = match self.trip_time {
            Some(i) => num(i)?,
            None => span,
        };
        let passengers = field(self.passengers)?.parse::<u32>().ok()?;
        let trip = TripRecord {
            origin: GeoPoint {
                lat: num(self.pickup_lat)?,
                lon: num(self.pickup_lon)?,
            },
            destination: GeoPoint {
                lat: num(self.dropoff_lat)?,
                lon: num(self.dropoff_lon)?,
            },
            pickup_dt,
            dropoff_dt,
            distance: num(self.distance)?,
            duration,
            passengers,
        };
        Some((trip, span))
    }
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    schema: &SchemaMapping,
    rules: &OutlierRules,
) -> Result<(TripStore, IngestReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema, rules)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    schema: &SchemaMapping,
    rules: &OutlierRules,
) -> Result<(TripStore, IngestReport)> {
    rules.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let cols = Columns::resolve(rdr.headers()?, schema)?;

    let mut report = IngestReport::default();
    let mut kept = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                report.reject(RejectReason::Unparsable);
                continue;
            }
        }
        match cols.parse(&row) {
            None => report.reject(RejectReason::Unparsable),
            Some((trip, span)) => match rules.check(&trip, span) {
                Some(reason) => report.reject(reason),
                None => kept.push(trip),
            },
        }
    }
    report.accepted = kept.len();
    Ok((TripStore::new(kept), report))
}

impl IngestReport {
    fn reject(&mut self, reason: RejectReason) {
        self.rejected += 1;
        *self.tally.entry(reason).or_default() += 1;
    }
}

pub const CANONICAL_HEADER: [&str; 9] = [
    "pickup_datetime",
    "dropoff_datetime",
    "pickup_longitude",
    "pickup_latitude",
    "dropoff_longitude",
    "dropoff_latitude",
    "trip_distance",
    "trip_time_in_secs",
    "passenger_count",
];

/// Writes trips in the canonical schema. Coordinates keep 6 decimals,
/// distances 2, durations whole seconds.
pub fn write_csv<'a, W: std::io::Write>(
    writer: W,
    trips: impl IntoIterator<Item = &'a TripRecord>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CANONICAL_HEADER)?;
    for t in trips {
        w.write_record([
            t.pickup_dt.format(DATETIME_FORMAT).to_string(),
            t.dropoff_dt.format(DATETIME_FORMAT).to_string(),
            format!("{:.6}", t.origin.lon),
            format!("{:.6}", t.origin.lat),
            format!("{:.6}", t.destination.lon),
            format!("{:.6}", t.destination.lat),
            format!("{:.2}", t.distance),
            format!("{}", t.duration.round() as i64),
            t.passengers.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
