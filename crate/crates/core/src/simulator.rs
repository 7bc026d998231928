//! Single-taxi carpool MDP.
//!
//! State is `(location, seconds since midnight)`. Actions:
//!
//! * `Wait` stays put for `t_d` seconds.
//! * `TakeOne` assigns the earliest trip picked up within `[t0, t0 + T]` that the
//!   taxi can reach in time, and ends at its dropoff.
//! * `TakeTwo` assigns a first trip the same way, then a second trip picked up
//!   within `[t_O1, t_O1 + T_c * t(O1, D1)]` reachable from `O1`, choosing the
//!   candidate with the smallest combined extra travel time and routing along
//!   whichever dropoff order costs the passengers less.
//!
//! A failed assignment at either stage leaves the taxi in place and advances
//! the clock by `t_d` with zero reward.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eta::TravelTimeEstimator;
use crate::geo_time::{BBox, DayType, GeoPoint, GridSpec, SECONDS_PER_DAY};
use crate::trips::{TripRecord, TripStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "W")]
    Wait,
    #[serde(rename = "TK1")]
    TakeOne,
    #[serde(rename = "TK2")]
    TakeTwo,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Wait, Action::TakeOne, Action::TakeTwo];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Wait => "W",
            Action::TakeOne => "TK1",
            Action::TakeTwo => "TK2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverState {
    pub location: GeoPoint,
    /// Seconds since midnight of the episode day; may pass 86400 on the final transition.
    pub time: f64,
    pub day: DayType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoutePath {
    /// O1 -> O2 -> D1 -> D2: first passenger dropped first.
    I,
    /// O1 -> O2 -> D2 -> D1: second passenger dropped first.
    II,
}

/// The six legs that price a two-passenger carpool, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarpoolLegs {
    pub o1_o2: f64,
    pub o2_d1: f64,
    /// Recorded solo duration of trip 1.
    pub o1_d1: f64,
    pub d1_d2: f64,
    /// Recorded solo duration of trip 2.
    pub o2_d2: f64,
    pub d2_d1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtraTravelTimes {
    /// Per passenger `[p1, p2]` when path I is driven.
    pub path_i: [f64; 2],
    /// Per passenger `[p1, p2]` when path II is driven.
    pub path_ii: [f64; 2],
    pub total_i: f64,
    pub total_ii: f64,
    pub chosen: RoutePath,
}

impl ExtraTravelTimes {
    pub fn combined(&self) -> f64 {
        self.total_i + self.total_ii
    }
}

/// Extra ride time each passenger suffers on either dropoff order.
///
/// Path II's last leg is `D2 -> D1`, the leg that path actually drives. Ties go to path II.
pub fn extra_travel_times(legs: &CarpoolLegs) -> ExtraTravelTimes {
    let i_p1 = legs.o1_o2 + legs.o2_d1 - legs.o1_d1;
    let i_p2 = legs.o2_d1 + legs.d1_d2 - legs.o2_d2;
    let ii_p1 = legs.o1_o2 + legs.o2_d2 + legs.d2_d1 - legs.o1_d1;
    let ii_p2 = 0.0;
    let total_i = i_p1 + i_p2;
    let total_ii = ii_p1 + ii_p2;
    ExtraTravelTimes {
        path_i: [i_p1, i_p2],
        path_ii: [ii_p1, ii_p2],
        total_i,
        total_ii,
        chosen: if total_i < total_ii {
            RoutePath::I
        } else {
            RoutePath::II
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// First-trip pickup search window `T`, seconds.
    pub search_window: f64,
    /// `T_c`: fraction of the first trip's duration spent searching for a second.
    pub carpool_fraction: f64,
    /// `t_d`: clock advance on wait or failed assignment, seconds.
    pub wait_delay: f64,
    pub episode_end: f64,
    pub region: BBox,
    pub day: DayType,
    pub cell_lat: f64,
    pub cell_lon: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            search_window: 600.0,
            carpool_fraction: 0.5,
            wait_delay: 600.0,
            episode_end: SECONDS_PER_DAY,
            region: BBox::downtown(),
            day: DayType::Weekday,
            cell_lat: crate::geo_time::DEFAULT_CELL_DEG,
            cell_lon: crate::geo_time::DEFAULT_CELL_DEG,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.carpool_fraction > 0.0 && self.carpool_fraction < 1.0) {
            return Err(Error::Config(format!(
                "carpool fraction {} must lie in (0, 1)",
                self.carpool_fraction
            )));
        }
        if !(self.wait_delay > 0.0 && self.search_window > 0.0 && self.episode_end > 0.0) {
            return Err(Error::Config(
                "wait delay, search window and episode end must be positive".into(),
            ));
        }
        self.region.validate()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::covering(&self.region, self.cell_lat, self.cell_lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionInfo {
    pub trips: Vec<TripRecord>,
    pub path: Option<RoutePath>,
    pub extra: Option<ExtraTravelTimes>,
}

impl TransitionInfo {
    fn none() -> Self {
        TransitionInfo {
            trips: Vec::new(),
            path: None,
            extra: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: DriverState,
    pub action: Action,
    /// Effective distance, miles.
    pub reward: f64,
    pub next_state: DriverState,
    pub done: bool,
    pub info: TransitionInfo,
}

/// Floor for estimated leg times along a driven route, seconds.
pub const MIN_LEG_SECONDS: f64 = 1.0;

pub struct CarpoolEnv {
    cfg: EnvConfig,
    grid: GridSpec,
    store: Arc<TripStore>,
    eta: Arc<dyn TravelTimeEstimator>,
    current: Option<DriverState>,
}

struct SecondAssignment<'a> {
    trip: &'a TripRecord,
    extra: ExtraTravelTimes,
    legs: CarpoolLegs,
}

impl CarpoolEnv {
    pub fn new(
        cfg: EnvConfig,
        store: Arc<TripStore>,
        eta: Arc<dyn TravelTimeEstimator>,
    ) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        grid.validate()?;
        Ok(CarpoolEnv {
            cfg,
            grid,
            store,
            eta,
            current: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn store(&self) -> &TripStore {
        &self.store
    }

    pub fn state(&self) -> Option<DriverState> {
        self.current
    }

    /// Starts an episode at midnight in a uniformly drawn region cell.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<DriverState> {
        let cells = self.grid.cell_count();
        if cells == 0 {
            return Err(Error::EmptyRegion);
        }
        let c = rng.random_range(0..cells);
        let lat_bin = (c / self.grid.lon_cells as usize) as u32;
        let lon_bin = (c % self.grid.lon_cells as usize) as u32;
        let s = DriverState {
            location: self.grid.cell_corner(lat_bin, lon_bin),
            time: 0.0,
            day: self.cfg.day,
        };
        self.current = Some(s);
        Ok(s)
    }

    pub fn reset_seeded(&mut self, seed: u64) -> Result<DriverState> {
        self.reset(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, s: DriverState) {
        self.current = Some(s);
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        let s = self.current.ok_or(Error::EpisodeDone(f64::NAN))?;
        let tr = self.transition(&s, action)?;
        self.current = if tr.done { None } else { Some(tr.next_state) };
        Ok(tr)
    }

    /// Pure transition function from an arbitrary state.
    pub fn transition(&self, s: &DriverState, action: Action) -> Result<Transition> {
        if !(s.time < self.cfg.episode_end) {
            return Err(Error::EpisodeDone(s.time));
        }
        match action {
            Action::Wait => Ok(self.wait(s)),
            Action::TakeOne => self.take_one(s),
            Action::TakeTwo => self.take_two(s),
        }
    }

    fn finish(
        &self,
        s: &DriverState,
        action: Action,
        reward: f64,
        next: DriverState,
        info: TransitionInfo,
    ) -> Transition {
        Transition {
            state: *s,
            action,
            reward,
            next_state: next,
            done: next.time >= self.cfg.episode_end,
            info,
        }
    }

    fn idle(&self, s: &DriverState, action: Action) -> Transition {
        let next = DriverState {
            time: s.time + self.cfg.wait_delay,
            ..*s
        };
        self.finish(s, action, 0.0, next, TransitionInfo::none())
    }

    pub fn wait(&self, s: &DriverState) -> Transition {
        self.idle(s, Action::Wait)
    }

    fn eta(&self, from: GeoPoint, to: GeoPoint, t: f64, day: DayType) -> Result<f64> {
        self.eta
            .travel_time(from, to, t.rem_euclid(SECONDS_PER_DAY), day)
    }

    /// Earliest trip in `[t0, t1]` reachable from `from` (leaving at `t0`) by its pickup time.
    fn earliest_reachable(
        &self,
        from: GeoPoint,
        t0: f64,
        t1: f64,
        day: DayType,
        exclude: Option<&TripRecord>,
    ) -> Result<Option<&TripRecord>> {
        for trip in self.store.query_window(t0, t1, day) {
            if exclude.is_some_and(|x| std::ptr::eq(x, trip)) {
                continue;
            }
            if self.eta(from, trip.origin, t0, day)? <= trip.pickup_seconds() - t0 {
                return Ok(Some(trip));
            }
        }
        Ok(None)
    }

    fn first_assignment(&self, s: &DriverState) -> Result<Option<&TripRecord>> {
        self.earliest_reachable(
            s.location,
            s.time,
            s.time + self.cfg.search_window,
            s.day,
            None,
        )
    }

    fn legs(&self, first: &TripRecord, second: &TripRecord, day: DayType) -> Result<CarpoolLegs> {
        let t_o1 = first.pickup_seconds();
        let t_o2 = second.pickup_seconds();
        let est = |a, b, t| self.eta(a, b, t, day).map(|v| v.max(MIN_LEG_SECONDS));
        let o2_d1 = est(second.origin, first.destination, t_o2)?;
        Ok(CarpoolLegs {
            o1_o2: est(first.origin, second.origin, t_o1)?,
            o2_d1,
            o1_d1: first.duration,
            d1_d2: est(first.destination, second.destination, t_o2 + o2_d1)?,
            o2_d2: second.duration,
            d2_d1: est(
                second.destination,
                first.destination,
                t_o2 + second.duration,
            )?,
        })
    }

    fn second_assignment<'a>(
        &'a self,
        first: &'a TripRecord,
        day: DayType,
    ) -> Result<Option<SecondAssignment<'a>>> {
        let t_o1 = first.pickup_seconds();
        let t1 = t_o1 + self.cfg.carpool_fraction * first.duration;
        let mut best: Option<SecondAssignment<'a>> = None;
        for trip in self.store.query_window(t_o1, t1, day) {
            if std::ptr::eq(trip, first) {
                continue;
            }
            if self.eta(first.origin, trip.origin, t_o1, day)? > trip.pickup_seconds() - t_o1 {
                continue;
            }
            let legs = self.legs(first, trip, day)?;
            let extra = extra_travel_times(&legs);
            if best
                .as_ref()
                .is_none_or(|b| extra.combined() < b.extra.combined())
            {
                best = Some(SecondAssignment { trip, extra, legs });
            }
        }
        Ok(best)
    }

    pub fn take_one(&self, s: &DriverState) -> Result<Transition> {
        let Some(trip) = self.first_assignment(s)? else {
            return Ok(self.idle(s, Action::TakeOne));
        };
        let next = DriverState {
            location: trip.destination,
            time: trip.dropoff_seconds(),
            day: s.day,
        };
        let info = TransitionInfo {
            trips: vec![trip.clone()],
            path: None,
            extra: None,
        };
        Ok(self.finish(s, Action::TakeOne, trip.distance, next, info))
    }

    pub fn take_two(&self, s: &DriverState) -> Result<Transition> {
        let Some(first) = self.first_assignment(s)? else {
            return Ok(self.idle(s, Action::TakeTwo));
        };
        let Some(second) = self.second_assignment(first, s.day)? else {
            return Ok(self.idle(s, Action::TakeTwo));
        };
        let legs = second.legs;
        // The taxi cannot leave O2 before the second passenger's pickup time.
        let at_o2 = (first.pickup_seconds() + legs.o1_o2).max(second.trip.pickup_seconds());
        let (location, time) = match second.extra.chosen {
            RoutePath::I => (second.trip.destination, at_o2 + legs.o2_d1 + legs.d1_d2),
            RoutePath::II => (first.destination, at_o2 + legs.o2_d2 + legs.d2_d1),
        };
        let next = DriverState {
            location,
            time,
            day: s.day,
        };
        let info = TransitionInfo {
            trips: vec![first.clone(), second.trip.clone()],
            path: Some(second.extra.chosen),
            extra: Some(second.extra),
        };
        Ok(self.finish(
            s,
            Action::TakeTwo,
            first.distance + second.trip.distance,
            next,
            info,
        ))
    }

    pub fn can_take_one(&self, s: &DriverState) -> Result<bool> {
        Ok(self.first_assignment(s)?.is_some())
    }

    pub fn can_take_two(&self, s: &DriverState) -> Result<bool> {
        match self.first_assignment(s)? {
            None => Ok(false),
            Some(first) => Ok(self.second_assignment(first, s.day)?.is_some()),
        }
    }
}

/// Writes one JSON object per transition.
pub fn write_trace_jsonl<'a, W: Write>(
    mut w: W,
    trace: impl IntoIterator<Item = &'a Transition>,
) -> Result<()> {
    for tr in trace {
        serde_json::to_writer(&mut w, tr)?;
        w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}
