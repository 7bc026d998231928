//! Travel time and distance estimation.
//!
//! [`StnnModel`] stacks two MLPs: a distance network that sees only the binned
//! origin/destination, and a time network fed with the distance network's last
//! hidden layer plus the time-of-day cell. Both heads are trained end to end on
//! the sum of their half mean squared errors. [`TimeNnModel`] is the time
//! network alone on raw bins; [`LrtModel`] is ordinary least squares on raw
//! coordinates; [`HistoricalMeanIndex`] averages same-cell trips.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_time::{bin_location, bin_time, haversine_miles, DayType, GeoPoint, GridSpec};
use crate::nn::{check_finite, Activation, Gradients, Mlp, Sgd, TrainConfig};
use crate::trips::{TripRecord, TripStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaQuery {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    /// Seconds of day, before the weekend offset.
    pub time_of_day: f64,
    pub day: DayType,
}

impl EtaQuery {
    pub fn for_trip(t: &TripRecord) -> Self {
        EtaQuery {
            origin: t.origin,
            destination: t.destination,
            time_of_day: t.pickup_seconds(),
            day: t.day_type(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    /// Seconds.
    pub travel_time: f64,
    /// Miles.
    pub travel_distance: f64,
}

/// Anything that can price a leg for the simulator.
pub trait TravelTimeEstimator: Send + Sync {
    /// Travel time in seconds from `from` to `to` departing at `time_of_day`.
    fn travel_time(
        &self,
        from: GeoPoint,
        to: GeoPoint,
        time_of_day: f64,
        day: DayType,
    ) -> Result<f64>;
}

/// Haversine distance times a detour factor, driven at constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantSpeedEta {
    pub speed_mph: f64,
    pub detour_factor: f64,
}

impl TravelTimeEstimator for ConstantSpeedEta {
    fn travel_time(&self, from: GeoPoint, to: GeoPoint, _t: f64, _d: DayType) -> Result<f64> {
        Ok(haversine_miles(from, to) * self.detour_factor / self.speed_mph * 3600.0)
    }
}

/// Binned query features: origin lat/lon bin, destination lat/lon bin, time cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryFeatures {
    pub location: [f64; 4],
    pub time: f64,
}

pub fn query_features(q: &EtaQuery, grid: &GridSpec) -> Result<QueryFeatures> {
    let o = bin_location(q.origin, grid)?;
    let d = bin_location(q.destination, grid)?;
    let t = bin_time(
        q.time_of_day.rem_euclid(crate::geo_time::SECONDS_PER_DAY),
        q.day,
        grid,
    )?;
    Ok(QueryFeatures {
        location: [
            o.lat_bin as f64,
            o.lon_bin as f64,
            d.lat_bin as f64,
            d.lon_bin as f64,
        ],
        time: t as f64,
    })
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            var.iter_mut()
                .zip(r.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        let std = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StnnArch {
    /// Hidden widths of the distance network; its last hidden layer feeds the time network.
    pub dist_hidden: Vec<usize>,
    pub time_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for StnnArch {
    fn default() -> Self {
        StnnArch {
            dist_hidden: vec![64, 64, 32],
            time_hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StnnStats {
    pub location: Standardizer,
    pub time: Standardizer,
    pub distance: Standardizer,
    pub duration: Standardizer,
}

#[derive(Debug, Clone)]
pub struct StnnModel {
    pub dist_net: Mlp,
    pub time_net: Mlp,
    pub grid: GridSpec,
    pub stats: StnnStats,
}

/// Per-epoch mean training loss, in standardized units.
pub type LossCurve = Vec<f64>;

struct Sample {
    location: Vec<f64>,
    time: f64,
    distance: f64,
    duration: f64,
}

fn samples(train: &TripStore, grid: &GridSpec) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut loc = Vec::new();
    let mut time = Vec::new();
    let mut dist = Vec::new();
    let mut dur = Vec::new();
    for t in train.iter() {
        // Trips outside the grid cannot be queried and carry no training signal.
        if let Ok(f) = query_features(&EtaQuery::for_trip(t), grid) {
            loc.push(f.location.to_vec());
            time.push(f.time);
            dist.push(t.distance);
            dur.push(t.duration);
        }
    }
    (loc, time, dist, dur)
}

fn fit_scalar(v: &[f64]) -> Standardizer {
    Standardizer::fit(&v.iter().map(|&x| vec![x]).collect::<Vec<_>>())
}

impl StnnModel {
    fn hidden_tap(&self) -> usize {
        self.dist_net.layers().len() - 1
    }

    pub fn predict(&self, q: &EtaQuery) -> Result<EtaEstimate> {
        let f = query_features(q, &self.grid)?;
        let (d, t) = self.predict_features(&f)?;
        Ok(EtaEstimate {
            travel_time: t.max(0.0),
            travel_distance: d.max(0.0),
        })
    }

    /// Unclamped (distance, duration) in original units.
    fn predict_features(&self, f: &QueryFeatures) -> Result<(f64, f64)> {
        let x = self.stats.location.apply(&f.location);
        let dc = self.dist_net.forward(&x)?;
        let mut tin = dc.hidden(self.hidden_tap()).to_vec();
        tin.push(self.stats.time.apply(&[f.time])[0]);
        let t = self.time_net.predict(&tin)?[0];
        let d = dc.output()[0];
        Ok((
            self.stats.distance.invert(&[d])[0],
            self.stats.duration.invert(&[t])[0],
        ))
    }
}

impl TravelTimeEstimator for StnnModel {
    fn travel_time(
        &self,
        from: GeoPoint,
        to: GeoPoint,
        time_of_day: f64,
        day: DayType,
    ) -> Result<f64> {
        Ok(self
            .predict(&EtaQuery {
                origin: from,
                destination: to,
                time_of_day,
                day,
            })?
            .travel_time)
    }
}

pub fn train_stnn(
    train: &TripStore,
    grid: &GridSpec,
    cfg: &TrainConfig,
    arch: &StnnArch,
) -> Result<(StnnModel, LossCurve)> {
    cfg.validate()?;
    grid.validate()?;
    let (loc, time, dist, dur) = samples(train, grid);
    if loc.is_empty() {
        return Err(Error::Domain(
            "ST-NN needs a non-empty training set inside the grid".into(),
        ));
    }
    let stats = StnnStats {
        location: Standardizer::fit(&loc),
        time: fit_scalar(&time),
        distance: fit_scalar(&dist),
        duration: fit_scalar(&dur),
    };
    let data: Vec<Sample> = (0..loc.len())
        .map(|i| Sample {
            location: stats.location.apply(&loc[i]),
            time: stats.time.apply(&[time[i]])[0],
            distance: stats.distance.apply(&[dist[i]])[0],
            duration: stats.duration.apply(&[dur[i]])[0],
        })
        .collect();

    let hidden_width = *arch
        .dist_hidden
        .last()
        .ok_or_else(|| Error::Architecture("distance network needs a hidden layer".into()))?;
    let dist_sizes: Vec<usize> = std::iter::once(4)
        .chain(arch.dist_hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let time_sizes: Vec<usize> = std::iter::once(hidden_width + 1)
        .chain(arch.time_hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let mut model = StnnModel {
        dist_net: Mlp::random(
            &dist_sizes,
            arch.activation,
            cfg.weight_init_scale,
            cfg.seed,
        )?,
        time_net: Mlp::random(
            &time_sizes,
            arch.activation,
            cfg.weight_init_scale,
            cfg.seed.wrapping_add(1),
        )?,
        grid: *grid,
        stats,
    };
    let tap = model.hidden_tap();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut gd = Gradients::zeros_like(&model.dist_net);
    let mut gt = Gradients::zeros_like(&model.time_net);
    let mut opt_d = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut opt_t = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            gd.clear();
            gt.clear();
            let mut loss = 0.0;
            for &i in batch {
                let s = &data[i];
                let dc = model.dist_net.forward(&s.location)?;
                let mut tin = dc.hidden(tap).to_vec();
                tin.push(s.time);
                let tc = model.time_net.forward(&tin)?;
                let e_t = tc.output()[0] - s.duration;
                let e_d = dc.output()[0] - s.distance;
                loss += 0.5 * (e_t * e_t + e_d * e_d);
                let d_tin = model.time_net.backward(&tc, &[e_t], &[], &mut gt)?;
                model
                    .dist_net
                    .backward(&dc, &[e_d], &[(tap, &d_tin[..hidden_width])], &mut gd)?;
            }
            let n = batch.len() as f64;
            gd.scale(1.0 / n);
            gt.scale(1.0 / n);
            loss /= n;
            check_finite(loss, &gd)
                .and_then(|_| check_finite(loss, &gt))
                .map_err(|e| Error::NonFinite(format!("ST-NN epoch {epoch}: {e}")))?;
            opt_d.step(&mut model.dist_net, &gd);
            opt_t.step(&mut model.time_net, &gt);
            epoch_loss += loss * n;
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    Ok((model, curve))
}

/// The time network alone: binned origin, destination and time cell to travel time.
#[derive(Debug, Clone)]
pub struct TimeNnModel {
    pub net: Mlp,
    pub grid: GridSpec,
    pub inputs: Standardizer,
    pub duration: Standardizer,
}

impl TimeNnModel {
    pub fn predict(&self, q: &EtaQuery) -> Result<f64> {
        let f = query_features(q, &self.grid)?;
        let mut x = f.location.to_vec();
        x.push(f.time);
        let y = self.net.predict(&self.inputs.apply(&x))?[0];
        Ok(self.duration.invert(&[y])[0].max(0.0))
    }
}

impl TravelTimeEstimator for TimeNnModel {
    fn travel_time(
        &self,
        from: GeoPoint,
        to: GeoPoint,
        time_of_day: f64,
        day: DayType,
    ) -> Result<f64> {
        self.predict(&EtaQuery {
            origin: from,
            destination: to,
            time_of_day,
            day,
        })
    }
}

pub fn train_timenn(
    train: &TripStore,
    grid: &GridSpec,
    cfg: &TrainConfig,
    hidden: &[usize],
    activation: Activation,
) -> Result<(TimeNnModel, LossCurve)> {
    cfg.validate()?;
    let (loc, time, _, dur) = samples(train, grid);
    if loc.is_empty() {
        return Err(Error::Domain(
            "TimeNN needs a non-empty training set inside the grid".into(),
        ));
    }
    let raw: Vec<Vec<f64>> = loc
        .iter()
        .zip(&time)
        .map(|(l, &t)| l.iter().copied().chain(std::iter::once(t)).collect())
        .collect();
    let inputs = Standardizer::fit(&raw);
    let duration = fit_scalar(&dur);
    let xs: Vec<Vec<f64>> = raw.iter().map(|r| inputs.apply(r)).collect();
    let ys: Vec<Vec<f64>> = dur.iter().map(|&d| duration.apply(&[d])).collect();

    let sizes: Vec<usize> = std::iter::once(5)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let mut net = Mlp::random(&sizes, activation, cfg.weight_init_scale, cfg.seed)?;
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut grads = Gradients::zeros_like(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut bx = Vec::with_capacity(cfg.batch_size);
    let mut by = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(batch.iter().map(|&i| xs[i].clone()));
            by.extend(batch.iter().map(|&i| ys[i].clone()));
            let loss = net
                .batch_gradients(&bx, &by, &mut grads)
                .map_err(|e| Error::NonFinite(format!("TimeNN epoch {epoch}: {e}")))?;
            opt.step(&mut net, &grads);
            total += loss * batch.len() as f64;
        }
        curve.push(total / xs.len() as f64);
    }
    Ok((
        TimeNnModel {
            net,
            grid: *grid,
            inputs,
            duration,
        },
        curve,
    ))
}

/// Least-squares travel time from raw `(o_lat, o_lon, d_lat, d_lon, seconds)`.
///
/// Columns are centred and scaled before the normal equations are solved;
/// this is an exact reparameterization of the same OLS fit that keeps the
/// Gram matrix well conditioned for raw GPS coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Set when the Gram matrix was singular and a ridge term was added.
    pub ridge: f64,
}

/// Ridge strength, relative to the Gram matrix trace, used when OLS is singular.
pub const LRT_RIDGE_FALLBACK: f64 = 1e-9;

pub fn lrt_features(q: &EtaQuery) -> [f64; 5] {
    let offset = if q.day.is_weekend() {
        crate::geo_time::SECONDS_PER_DAY
    } else {
        0.0
    };
    [
        q.origin.lat,
        q.origin.lon,
        q.destination.lat,
        q.destination.lon,
        q.time_of_day + offset,
    ]
}

pub fn train_lrt(train: &TripStore) -> Result<LrtModel> {
    let rows: Vec<(Vec<f64>, f64)> = train
        .iter()
        .map(|t| (lrt_features(&EtaQuery::for_trip(t)).to_vec(), t.duration))
        .collect();
    fit_linear(&rows)
}

pub(crate) fn fit_linear(rows: &[(Vec<f64>, f64)]) -> Result<LrtModel> {
    if rows.is_empty() {
        return Err(Error::Domain("linear regression needs data".into()));
    }
    let p = rows[0].0.len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; p];
    let mut y_mean = 0.0;
    for (x, y) in rows {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        y_mean += y / n;
    }
    let mut scale = vec![0.0; p];
    for (x, _) in rows {
        scale
            .iter_mut()
            .zip(x.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    scale
        .iter_mut()
        .for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });

    // Gram matrix and moment vector of the centred, scaled design.
    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for (x, y) in rows {
        let z: Vec<f64> = (0..p).map(|j| (x[j] - mean[j]) / scale[j]).collect();
        let yc = y - y_mean;
        for i in 0..p {
            rhs[i] += z[i] * yc;
            for j in 0..p {
                gram[i][j] += z[i] * z[j];
            }
        }
    }
    let (beta, ridge) = match solve(&gram, &rhs) {
        Some(b) => (b, 0.0),
        None => {
            let trace: f64 = (0..p).map(|i| gram[i][i]).sum::<f64>().max(1.0);
            let lambda = LRT_RIDGE_FALLBACK * trace;
            let mut g = gram.clone();
            (0..p).for_each(|i| g[i][i] += lambda);
            let b = solve(&g, &rhs).ok_or_else(|| Error::NonFinite("ridge solve failed".into()))?;
            (b, lambda)
        }
    };
    Ok(LrtModel {
        intercept: y_mean,
        coefficients: beta,
        feature_mean: mean,
        feature_scale: scale,
        ridge,
    })
}

/// Gaussian elimination with partial pivoting; `None` when numerically singular.
fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &v)| r.iter().copied().chain([v]).collect())
        .collect();
    let max_diag = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * max_diag.max(1e-300);
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() <= tol {
            return None;
        }
        m.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                if f != 0.0 {
                    for k in c..=n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

impl LrtModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept
            + x.iter()
                .zip(&self.feature_mean)
                .zip(&self.feature_scale)
                .zip(&self.coefficients)
                .map(|(((v, m), s), b)| (v - m) / s * b)
                .sum::<f64>()
    }

    pub fn predict(&self, q: &EtaQuery) -> f64 {
        self.predict_row(&lrt_features(q))
    }
}

/// Mean duration and distance of training trips sharing origin cell,
/// destination cell and time cell.
#[derive(Debug, Clone)]
pub struct HistoricalMeanIndex {
    grid: GridSpec,
    cells: HashMap<[u32; 5], (f64, f64, usize)>,
}

impl HistoricalMeanIndex {
    pub fn build(store: &TripStore, grid: &GridSpec) -> Self {
        let mut cells: HashMap<[u32; 5], (f64, f64, usize)> = HashMap::new();
        for t in store.iter() {
            if let Ok(key) = Self::key(&EtaQuery::for_trip(t), grid) {
                let e = cells.entry(key).or_default();
                e.0 += t.duration;
                e.1 += t.distance;
                e.2 += 1;
            }
        }
        HistoricalMeanIndex { grid: *grid, cells }
    }

    fn key(q: &EtaQuery, grid: &GridSpec) -> Result<[u32; 5]> {
        let f = query_features(q, grid)?;
        Ok([
            f.location[0] as u32,
            f.location[1] as u32,
            f.location[2] as u32,
            f.location[3] as u32,
            f.time as u32,
        ])
    }

    pub fn lookup(&self, q: &EtaQuery) -> Option<EtaEstimate> {
        let key = Self::key(q, &self.grid).ok()?;
        self.cells.get(&key).map(|&(t, d, n)| EtaEstimate {
            travel_time: t / n as f64,
            travel_distance: d / n as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaMetrics {
    pub mae: f64,
    pub mre: f64,
    pub medae: f64,
    pub medre: f64,
    pub r2: f64,
    pub n: usize,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Metrics of predictions `pred` against ground truth `truth`.
///
/// Samples with zero ground truth are left out of the relative metrics.
pub fn metrics(truth: &[f64], pred: &[f64]) -> Result<EtaMetrics> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::Shape {
            expected: truth.len().max(1),
            got: pred.len(),
        });
    }
    let n = truth.len() as f64;
    let mut abs: Vec<f64> = truth.iter().zip(pred).map(|(y, f)| (y - f).abs()).collect();
    let mae = abs.iter().sum::<f64>() / n;
    let mut rel = Vec::with_capacity(truth.len());
    let (mut abs_nz, mut y_nz) = (0.0, 0.0);
    for (y, f) in truth.iter().zip(pred) {
        if *y != 0.0 {
            rel.push((y - f).abs() / y.abs());
            abs_nz += (y - f).abs();
            y_nz += y;
        }
    }
    if rel.len() < truth.len() {
        log::warn!(
            "{} zero-valued ground-truth samples excluded from relative metrics",
            truth.len() - rel.len()
        );
    }
    let y_bar = truth.iter().sum::<f64>() / n;
    let ss_res: f64 = truth.iter().zip(pred).map(|(y, f)| (y - f) * (y - f)).sum();
    let ss_tot: f64 = truth.iter().map(|y| (y - y_bar) * (y - y_bar)).sum();
    Ok(EtaMetrics {
        mae,
        mre: abs_nz / y_nz,
        medae: median(&mut abs),
        medre: median(&mut rel),
        r2: 1.0 - ss_res / ss_tot,
        n: truth.len(),
    })
}

/// Evaluates a travel-time predictor over test trips. Trips the predictor
/// cannot price (for example outside the grid) are skipped.
pub fn evaluate<F>(predict: F, test: &[TripRecord]) -> Result<EtaMetrics>
where
    F: Fn(&EtaQuery) -> Result<f64>,
{
    let mut truth = Vec::with_capacity(test.len());
    let mut pred = Vec::with_capacity(test.len());
    let mut skipped = 0usize;
    for t in test {
        match predict(&EtaQuery::for_trip(t)) {
            Ok(f) => {
                truth.push(t.duration);
                pred.push(f);
            }
            Err(Error::OutOfGrid { .. }) | Err(Error::Domain(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} test trips could not be queried and were skipped");
    }
    metrics(&truth, &pred)
}

pub const STNN_FORMAT: &str = "carpool-stnn";
pub const STNN_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StnnSidecar {
    format: String,
    version: u32,
    grid: GridSpec,
    stats: StnnStats,
    dist_net: String,
    time_net: String,
}

impl StnnModel {
    /// Writes `dist_net.json`, `time_net.json` and the `stnn.json` sidecar into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dist_net.save(dir.join("dist_net.json"))?;
        self.time_net.save(dir.join("time_net.json"))?;
        let side = StnnSidecar {
            format: STNN_FORMAT.into(),
            version: STNN_FORMAT_VERSION,
            grid: self.grid,
            stats: self.stats.clone(),
            dist_net: "dist_net.json".into(),
            time_net: "time_net.json".into(),
        };
        let path = dir.join("stnn.json");
        std::fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("stnn.json");
        let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: StnnSidecar = serde_json::from_str(&s)?;
        if side.format != STNN_FORMAT {
            return Err(Error::Config(format!(
                "not an ST-NN sidecar (format `{}`)",
                side.format
            )));
        }
        if side.version != STNN_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: side.version,
                expected: STNN_FORMAT_VERSION,
            });
        }
        let model = StnnModel {
            dist_net: Mlp::load(dir.join(&side.dist_net))?,
            time_net: Mlp::load(dir.join(&side.time_net))?,
            grid: side.grid,
            stats: side.stats,
        };
        let hidden = model.dist_net.layer_sizes()[model.dist_net.layers().len() - 1];
        if model.time_net.input_dim() != hidden + 1 || model.dist_net.input_dim() != 4 {
            return Err(Error::Architecture(
                "ST-NN networks do not fit together".into(),
            ));
        }
        Ok(model)
    }
}
