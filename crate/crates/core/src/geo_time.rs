//! Spatial and temporal discretization.
//!
//! Locations are mapped onto a regular lat/lon grid whose cells are represented
//! by their lower-left corner. Time-of-day is mapped onto fixed-width time cells;
//! weekend times are shifted by a full day so weekday and weekend cells never
//! collide (600 s cells give 144 + 144 = 288 cells).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Binning slack, in cells. Keeps corner points (and float noise around them)
/// in the cell they name.
const BIN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::Domain(format!("invalid coordinate ({lat}, {lon})")))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub fn from_date(date: chrono::NaiveDate) -> Self {
        use chrono::{Datelike, Weekday};
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => DayType::Weekend,
            _ => DayType::Weekday,
        }
    }

    pub fn is_weekend(self) -> bool {
        self == DayType::Weekend
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
        }
    }
}

impl std::str::FromStr for DayType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weekday" => Ok(DayType::Weekday),
            "weekend" => Ok(DayType::Weekend),
            other => Err(Error::Config(format!("unknown day type `{other}`"))),
        }
    }
}

/// Axis-aligned lat/lon box, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let b = BBox {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(Error::Config(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }

    /// Northern Manhattan study region.
    pub fn uptown() -> Self {
        BBox {
            lat_min: 40.805,
            lat_max: 40.8438,
            lon_min: -73.9694,
            lon_max: -73.9274,
        }
    }

    /// Downtown Manhattan study region.
    pub fn downtown() -> Self {
        BBox {
            lat_min: 40.715,
            lat_max: 40.7438,
            lon_min: -74.0094,
            lon_max: -73.9774,
        }
    }

    /// Loose greater-NYC box used by the default outlier rules.
    pub fn greater_nyc() -> Self {
        BBox {
            lat_min: 40.40,
            lat_max: 41.00,
            lon_min: -74.30,
            lon_max: -73.60,
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat)
            && (self.lon_min..=self.lon_max).contains(&p.lon)
    }

    pub fn lower_left(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat_min,
            lon: self.lon_min,
        }
    }
}

/// Grid geometry for location and time binning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_corner: GeoPoint,
    /// Degrees of latitude per cell.
    pub cell_lat: f64,
    /// Degrees of longitude per cell.
    pub cell_lon: f64,
    /// Number of cells along each axis; points beyond are out of grid.
    pub lat_cells: u32,
    pub lon_cells: u32,
    /// Seconds per time cell.
    pub time_bin: f64,
    pub weekend_offset: f64,
}

pub const DEFAULT_CELL_DEG: f64 = 0.002;
pub const DEFAULT_TIME_BIN: f64 = 600.0;

impl GridSpec {
    /// Grid anchored at the lower-left of `bbox` with just enough cells to cover it.
    pub fn covering(bbox: &BBox, cell_lat: f64, cell_lon: f64) -> Result<Self> {
        bbox.validate()?;
        if !(cell_lat > 0.0 && cell_lon > 0.0) {
            return Err(Error::Config("cell sizes must be positive".into()));
        }
        let lat_cells = (((bbox.lat_max - bbox.lat_min) / cell_lat) + BIN_EPS).floor() as u32 + 1;
        let lon_cells = (((bbox.lon_max - bbox.lon_min) / cell_lon) + BIN_EPS).floor() as u32 + 1;
        Ok(GridSpec {
            origin_corner: bbox.lower_left(),
            cell_lat,
            cell_lon,
            lat_cells,
            lon_cells,
            time_bin: DEFAULT_TIME_BIN,
            weekend_offset: SECONDS_PER_DAY,
        })
    }

    pub fn with_default_cells(bbox: &BBox) -> Result<Self> {
        Self::covering(bbox, DEFAULT_CELL_DEG, DEFAULT_CELL_DEG)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_lat > 0.0 && self.cell_lon > 0.0 && self.time_bin > 0.0) {
            return Err(Error::Config("grid cell sizes must be positive".into()));
        }
        if self.lat_cells == 0 || self.lon_cells == 0 {
            return Err(Error::EmptyRegion);
        }
        if !(self.weekend_offset >= 0.0) {
            return Err(Error::Config("weekend offset must be non-negative".into()));
        }
        Ok(())
    }

    pub fn total_time_bins(&self) -> u32 {
        ((SECONDS_PER_DAY + self.weekend_offset) / self.time_bin).ceil() as u32
    }

    pub fn cell_count(&self) -> usize {
        self.lat_cells as usize * self.lon_cells as usize
    }

    /// Lower-left corner of a cell.
    pub fn cell_corner(&self, lat_bin: u32, lon_bin: u32) -> GeoPoint {
        GeoPoint {
            lat: self.origin_corner.lat + lat_bin as f64 * self.cell_lat,
            lon: self.origin_corner.lon + lon_bin as f64 * self.cell_lon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpaceTimeCell {
    pub lat_bin: u32,
    pub lon_bin: u32,
    pub time_bin: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinnedLocation {
    pub lat_bin: u32,
    pub lon_bin: u32,
    pub representative: GeoPoint,
}

pub fn bin_location(p: GeoPoint, spec: &GridSpec) -> Result<BinnedLocation> {
    let out = || Error::OutOfGrid {
        lat: p.lat,
        lon: p.lon,
    };
    if !p.is_valid() {
        return Err(out());
    }
    let lat_f = ((p.lat - spec.origin_corner.lat) / spec.cell_lat + BIN_EPS).floor();
    let lon_f = ((p.lon - spec.origin_corner.lon) / spec.cell_lon + BIN_EPS).floor();
    if lat_f < 0.0
        || lon_f < 0.0
        || lat_f >= spec.lat_cells as f64
        || lon_f >= spec.lon_cells as f64
    {
        return Err(out());
    }
    let (lat_bin, lon_bin) = (lat_f as u32, lon_f as u32);
    Ok(BinnedLocation {
        lat_bin,
        lon_bin,
        representative: spec.cell_corner(lat_bin, lon_bin),
    })
}

pub fn bin_time(seconds_of_day: f64, day: DayType, spec: &GridSpec) -> Result<u32> {
    if !(0.0..SECONDS_PER_DAY).contains(&seconds_of_day) {
        return Err(Error::Domain(format!(
            "seconds of day {seconds_of_day} outside [0, 86400)"
        )));
    }
    let offset = if day.is_weekend() {
        spec.weekend_offset
    } else {
        0.0
    };
    Ok(((seconds_of_day + offset) / spec.time_bin).floor() as u32)
}

pub fn bin_cell(
    p: GeoPoint,
    seconds_of_day: f64,
    day: DayType,
    spec: &GridSpec,
) -> Result<SpaceTimeCell> {
    let loc = bin_location(p, spec)?;
    Ok(SpaceTimeCell {
        lat_bin: loc.lat_bin,
        lon_bin: loc.lon_bin,
        time_bin: bin_time(seconds_of_day, day, spec)?,
    })
}

/// Great-circle distance on a 6371 km sphere.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub const KM_PER_MILE: f64 = 1.609_344;

pub fn haversine_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    haversine_km(a, b) / KM_PER_MILE
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec {
            origin_corner: GeoPoint {
                lat: 40.700,
                lon: -74.020,
            },
            cell_lat: 0.002,
            cell_lon: 0.002,
            lat_cells: 100,
            lon_cells: 100,
            time_bin: 600.0,
            weekend_offset: 86_400.0,
        }
    }

    #[test]
    fn origin_maps_to_first_cell() {
        let s = spec();
        let b = bin_location(s.origin_corner, &s).unwrap();
        assert_eq!((b.lat_bin, b.lon_bin), (0, 0));
        assert_eq!(b.representative, s.origin_corner);
    }

    #[test]
    fn worked_binning_examples() {
        let s = spec();
        let b = bin_location(
            GeoPoint {
                lat: 40.7011,
                lon: -74.0189,
            },
            &s,
        )
        .unwrap();
        assert_eq!((b.lat_bin, b.lon_bin), (0, 0));
        assert!((b.representative.lat - 40.700).abs() < 1e-12);
        assert!((b.representative.lon + 74.020).abs() < 1e-12);

        let b = bin_location(
            GeoPoint {
                lat: 40.7040,
                lon: -74.0155,
            },
            &s,
        )
        .unwrap();
        assert_eq!((b.lat_bin, b.lon_bin), (2, 2));
        assert!((b.representative.lat - 40.704).abs() < 1e-12);
        assert!((b.representative.lon + 74.016).abs() < 1e-12);
    }

    #[test]
    fn below_or_left_of_origin_is_out_of_grid() {
        let s = spec();
        assert!(matches!(
            bin_location(
                GeoPoint {
                    lat: 40.699,
                    lon: -74.0
                },
                &s
            ),
            Err(Error::OutOfGrid { .. })
        ));
        assert!(matches!(
            bin_location(
                GeoPoint {
                    lat: 40.71,
                    lon: -74.03
                },
                &s
            ),
            Err(Error::OutOfGrid { .. })
        ));
    }

    #[test]
    fn time_binning_examples() {
        let s = spec();
        assert_eq!(bin_time(0.0, DayType::Weekday, &s).unwrap(), 0);
        assert_eq!(bin_time(3599.0, DayType::Weekday, &s).unwrap(), 5);
        assert_eq!(bin_time(3600.0, DayType::Weekend, &s).unwrap(), 150);
        assert!(bin_time(86_400.0, DayType::Weekday, &s).is_err());
        assert!(bin_time(-1.0, DayType::Weekday, &s).is_err());
        assert_eq!(s.total_time_bins(), 288);
    }

    #[test]
    fn time_bins_cover_exactly_288_cells() {
        let s = spec();
        let mut seen = std::collections::BTreeSet::new();
        for day in [DayType::Weekday, DayType::Weekend] {
            for sec in (0..86_400).step_by(60) {
                seen.insert(bin_time(sec as f64, day, &s).unwrap());
            }
        }
        assert_eq!(seen.len(), 288);
        assert_eq!(*seen.iter().next().unwrap(), 0);
        assert_eq!(*seen.iter().last().unwrap(), 287);
    }

    #[test]
    fn covering_grid_includes_far_corner() {
        let bbox = BBox::uptown();
        let g = GridSpec::with_default_cells(&bbox).unwrap();
        let far = GeoPoint {
            lat: bbox.lat_max,
            lon: bbox.lon_max,
        };
        assert!(bin_location(far, &g).is_ok());
        // The east edge is an exact cell multiple, so it opens a 22nd column.
        assert_eq!((g.lat_cells, g.lon_cells), (20, 22));
    }

    fn haversine_oracle(a: (f64, f64), b: (f64, f64)) -> f64 {
        // Spherical law of cosines route, computed independently.
        let (p1, p2) = (
            a.0 * std::f64::consts::PI / 180.0,
            b.0 * std::f64::consts::PI / 180.0,
        );
        let dl = (b.1 - a.1) * std::f64::consts::PI / 180.0;
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
        6371.0 * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn haversine_matches_oracle() {
        let a = GeoPoint {
            lat: 40.7128,
            lon: -74.0060,
        };
        let b = GeoPoint {
            lat: 40.7614,
            lon: -73.9776,
        };
        let got = haversine_km(a, b);
        let want = haversine_oracle((a.lat, a.lon), (b.lat, b.lon));
        assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        assert_eq!(haversine_km(a, a), 0.0);
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-80.0..80.0f64, -179.0..179.0f64).prop_map(|(lat, lon)| GeoPoint { lat, lon })
    }

    proptest! {
        #[test]
        fn haversine_symmetric_and_triangle(a in point(), b in point(), c in point()) {
            let ab = haversine_km(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - haversine_km(b, a)).abs() < 1e-9);
            prop_assert!(ab <= haversine_km(a, c) + haversine_km(c, b) + 1e-9);
        }

        #[test]
        fn binning_idempotent_through_representative(dlat in 0.0..0.19f64, dlon in 0.0..0.19f64) {
            let s = spec();
            let p = GeoPoint { lat: 40.7 + dlat, lon: -74.02 + dlon };
            let b = bin_location(p, &s).unwrap();
            let again = bin_location(b.representative, &s).unwrap();
            prop_assert_eq!((b.lat_bin, b.lon_bin), (again.lat_bin, again.lon_bin));
        }

        #[test]
        fn time_binning_monotone(t1 in 0.0..86_399.0f64, dt in 0.0..1000.0f64, weekend in any::<bool>()) {
            let s = spec();
            let day = if weekend { DayType::Weekend } else { DayType::Weekday };
            let t2 = (t1 + dt).min(86_399.999);
            prop_assert!(bin_time(t1, day, &s).unwrap() <= bin_time(t2, day, &s).unwrap());
        }
    }
}
