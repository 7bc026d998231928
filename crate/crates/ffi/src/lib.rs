//! C ABI over the carpool simulator and travel-time models.
//!
//! Handles are opaque and owned by the caller; every `*_new`/`*_load` has a
//! matching `*_free`. Functions return a [`CarpoolStatus`]; on failure the
//! message is available from [`carpool_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use carpool::eta::{ConstantSpeedEta, StnnModel, TravelTimeEstimator};
use carpool::geo_time::{BBox, DayType, GeoPoint};
use carpool::harness::{generate_trips, Preset};
use carpool::simulator::{Action, CarpoolEnv as Env, DriverState, EnvConfig, RoutePath};
use carpool::trips::{ingest_csv, OutlierRules, SchemaMapping, TripStore};
use carpool::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarpoolStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfGrid = 3,
    Domain = 4,
    Config = 5,
    Io = 6,
    Format = 7,
    EpisodeDone = 8,
    Training = 9,
    Panic = 10,
}

impl From<&Error> for CarpoolStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::OutOfGrid { .. } => CarpoolStatus::OutOfGrid,
            Error::Domain(_) | Error::Shape { .. } => CarpoolStatus::Domain,
            Error::Config(_) | Error::EmptyRegion | Error::MissingColumn(_) => {
                CarpoolStatus::Config
            }
            Error::Io { .. } => CarpoolStatus::Io,
            Error::FormatVersion { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Architecture(_) => CarpoolStatus::Format,
            Error::EpisodeDone(_) => CarpoolStatus::EpisodeDone,
            Error::NonFinite(_) => CarpoolStatus::Training,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let msg =
        CString::new(msg).unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

enum Failure {
    Status(CarpoolStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CarpoolStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CarpoolStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            CarpoolStatus::from(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside carpool");
            CarpoolStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(CarpoolStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(CarpoolStatus::InvalidArgument, msg.into())
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn day(weekend: c_int) -> DayType {
    if weekend != 0 {
        DayType::Weekend
    } else {
        DayType::Weekday
    }
}

/// Opaque travel-time model.
pub struct CarpoolEta {
    inner: Arc<dyn TravelTimeEstimator>,
}

/// Opaque single-taxi environment.
pub struct CarpoolEnv {
    inner: Env,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CarpoolRegion {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CarpoolEnvConfig {
    /// Pickup search window for the first trip, seconds.
    pub search_window: f64,
    /// Share of the first trip's duration spent looking for a second, in (0, 1).
    pub carpool_fraction: f64,
    /// Clock advance on wait or failed assignment, seconds.
    pub wait_delay: f64,
    pub region: CarpoolRegion,
    /// Non-zero for weekend episodes.
    pub weekend: c_int,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CarpoolState {
    pub lat: f64,
    pub lon: f64,
    /// Seconds since midnight.
    pub time: f64,
    pub weekend: c_int,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CarpoolStep {
    pub next: CarpoolState,
    /// Effective distance, miles.
    pub reward: f64,
    pub done: c_int,
    /// Trips assigned in this step (0, 1 or 2).
    pub trips: c_int,
    /// 0 when no carpool happened, 1 for path I, 2 for path II.
    pub path: c_int,
}

fn to_c_state(s: &DriverState) -> CarpoolState {
    CarpoolState {
        lat: s.location.lat,
        lon: s.location.lon,
        time: s.time,
        weekend: s.day.is_weekend() as c_int,
    }
}

fn from_c_state(s: &CarpoolState) -> DriverState {
    DriverState {
        location: GeoPoint {
            lat: s.lat,
            lon: s.lon,
        },
        time: s.time,
        day: day(s.weekend),
    }
}

fn env_config(c: &CarpoolEnvConfig) -> Result<EnvConfig, Failure> {
    let r = &c.region;
    Ok(EnvConfig {
        search_window: c.search_window,
        carpool_fraction: c.carpool_fraction,
        wait_delay: c.wait_delay,
        region: BBox::new(r.lat_min, r.lat_max, r.lon_min, r.lon_max)?,
        day: day(c.weekend),
        ..EnvConfig::default()
    })
}

fn region_of(b: &BBox) -> CarpoolRegion {
    CarpoolRegion {
        lat_min: b.lat_min,
        lat_max: b.lat_max,
        lon_min: b.lon_min,
        lon_max: b.lon_max,
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn carpool_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn carpool_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Defaults: 600 s window, 0.5 carpool fraction, 600 s wait, downtown region, weekday.
#[no_mangle]
pub extern "C" fn carpool_env_config_default() -> CarpoolEnvConfig {
    let d = EnvConfig::default();
    CarpoolEnvConfig {
        search_window: d.search_window,
        carpool_fraction: d.carpool_fraction,
        wait_delay: d.wait_delay,
        region: region_of(&d.region),
        weekend: 0,
    }
}

/// Region of a synthetic preset: 0 dense, 1 sparse.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn carpool_preset_region(
    preset: c_int,
    out: *mut CarpoolRegion,
) -> CarpoolStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        *out = region_of(&preset_of(preset)?.region());
        Ok(())
    })
}

fn preset_of(p: c_int) -> Result<Preset, Failure> {
    match p {
        0 => Ok(Preset::Dense),
        1 => Ok(Preset::Sparse),
        _ => Err(invalid(format!("unknown preset {p}"))),
    }
}

/// Constant-speed estimator: great-circle miles times `detour`, driven at `speed_mph`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn carpool_eta_constant(
    speed_mph: f64,
    detour: f64,
    out: *mut *mut CarpoolEta,
) -> CarpoolStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        if !(speed_mph > 0.0 && detour > 0.0) {
            return Err(invalid("speed and detour must be positive"));
        }
        let eta = CarpoolEta {
            inner: Arc::new(ConstantSpeedEta {
                speed_mph,
                detour_factor: detour,
            }),
        };
        *out = Box::into_raw(Box::new(eta));
        Ok(())
    })
}

/// Loads an ST-NN model directory written by `carpool eta train`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn carpool_eta_load(
    dir: *const c_char,
    out: *mut *mut CarpoolEta,
) -> CarpoolStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let model = StnnModel::load(as_str(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(CarpoolEta {
            inner: Arc::new(model),
        }));
        Ok(())
    })
}

/// Travel time in seconds between two points.
///
/// # Safety
/// `eta` must come from this library and `seconds` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn carpool_eta_travel_time(
    eta: *const CarpoolEta,
    from_lat: f64,
    from_lon: f64,
    to_lat: f64,
    to_lon: f64,
    time_of_day: f64,
    weekend: c_int,
    seconds: *mut f64,
) -> CarpoolStatus {
    guard(|| {
        let eta = as_ref(eta, "eta")?;
        let seconds = as_mut(seconds, "seconds")?;
        *seconds = eta.inner.travel_time(
            GeoPoint {
                lat: from_lat,
                lon: from_lon,
            },
            GeoPoint {
                lat: to_lat,
                lon: to_lon,
            },
            time_of_day,
            day(weekend),
        )?;
        Ok(())
    })
}

/// # Safety
/// `eta` must come from this library or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn carpool_eta_free(eta: *mut CarpoolEta) {
    if !eta.is_null() {
        drop(Box::from_raw(eta));
    }
}

fn new_env(
    cfg: EnvConfig,
    store: TripStore,
    eta: &CarpoolEta,
    out: &mut *mut CarpoolEnv,
) -> Result<(), Failure> {
    let store = store.mask_region(cfg.region);
    let env = Env::new(cfg, Arc::new(store), eta.inner.clone())?;
    *out = Box::into_raw(Box::new(CarpoolEnv { inner: env }));
    Ok(())
}

/// Environment over trips read from a CSV in the canonical schema, filtered by the default outlier rules.
/// The environment keeps its own reference to `eta`.
///
/// # Safety
/// Pointers must be valid; `csv_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn carpool_env_from_csv(
    csv_path: *const c_char,
    config: *const CarpoolEnvConfig,
    eta: *const CarpoolEta,
    out: *mut *mut CarpoolEnv,
) -> CarpoolStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let cfg = env_config(as_ref(config, "config")?)?;
        let eta = as_ref(eta, "eta")?;
        let (store, _) = ingest_csv(
            as_str(csv_path, "csv_path")?,
            &SchemaMapping::default(),
            &OutlierRules::default(),
        )?;
        new_env(cfg, store, eta, out)
    })
}

/// Environment over one synthetic day of a preset (0 dense, 1 sparse) inside `config`'s region.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn carpool_env_synthetic(
    preset: c_int,
    seed: u64,
    config: *const CarpoolEnvConfig,
    eta: *const CarpoolEta,
    out: *mut *mut CarpoolEnv,
) -> CarpoolStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let cfg = env_config(as_ref(config, "config")?)?;
        let eta = as_ref(eta, "eta")?;
        let spec = carpool::harness::SyntheticDemandSpec {
            region: cfg.region,
            day: cfg.day,
            days: 1,
            ..preset_of(preset)?.demand()
        };
        new_env(cfg, TripStore::new(generate_trips(&spec, seed)?), eta, out)
    })
}

/// # Safety
/// `env` must come from this library or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn carpool_env_free(env: *mut CarpoolEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts an episode at midnight in a random region cell chosen by `seed`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn carpool_env_reset(
    env: *mut CarpoolEnv,
    seed: u64,
    state: *mut CarpoolState,
) -> CarpoolStatus {
    guard(|| {
        let env = as_mut(env, "env")?;
        let state = as_mut(state, "state")?;
        *state = to_c_state(&env.inner.reset_seeded(seed)?);
        Ok(())
    })
}

/// Applies `action` (0 wait, 1 take one, 2 take two) to the current state.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn carpool_env_step(
    env: *mut CarpoolEnv,
    action: c_int,
    step: *mut CarpoolStep,
) -> CarpoolStatus {
    guard(|| {
        let env = as_mut(env, "env")?;
        let step = as_mut(step, "step")?;
        let a = usize::try_from(action)
            .ok()
            .and_then(Action::from_index)
            .ok_or_else(|| invalid(format!("unknown action {action}")))?;
        let tr = env.inner.step(a)?;
        *step = CarpoolStep {
            next: to_c_state(&tr.next_state),
            reward: tr.reward,
            done: tr.done as c_int,
            trips: tr.info.trips.len() as c_int,
            path: match tr.info.path {
                None => 0,
                Some(RoutePath::I) => 1,
                Some(RoutePath::II) => 2,
            },
        };
        Ok(())
    })
}

/// Whether single and carpool assignments would succeed from `state`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn carpool_env_feasible(
    env: *const CarpoolEnv,
    state: *const CarpoolState,
    take_one: *mut c_int,
    take_two: *mut c_int,
) -> CarpoolStatus {
    guard(|| {
        let env = as_ref(env, "env")?;
        let s = from_c_state(as_ref(state, "state")?);
        let one = as_mut(take_one, "take_one")?;
        let two = as_mut(take_two, "take_two")?;
        *one = env.inner.can_take_one(&s)? as c_int;
        *two = env.inner.can_take_two(&s)? as c_int;
        Ok(())
    })
}

/// Fixed-policy action at `state`: carpool if feasible, else one trip, else wait.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn carpool_fixed_policy_action(
    env: *const CarpoolEnv,
    state: *const CarpoolState,
    action: *mut c_int,
) -> CarpoolStatus {
    guard(|| {
        let env = as_ref(env, "env")?;
        let s = from_c_state(as_ref(state, "state")?);
        *as_mut(action, "action")? =
            carpool::agents::fixed_policy_action(&env.inner, &s)?.index() as c_int;
        Ok(())
    })
}

/// Number of trips the environment can assign.
///
/// # Safety
/// `env` must be valid or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn carpool_env_trip_count(env: *const CarpoolEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.store().len())
}
