//! Dispatch policies: tabular Q-learning, Double-DQN, and the always-carpool baseline.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_time::{bin_cell, BBox, GeoPoint, GridSpec, SpaceTimeCell, SECONDS_PER_DAY};
use crate::nn::{check_finite, Activation, Gradients, Mlp, Sgd};
use crate::simulator::{Action, CarpoolEnv, DriverState, Transition};

pub const DEFAULT_GAMMA: f64 = 0.95;

/// Greedy action; ties go to the earliest action in `W < TK1 < TK2` order.
pub fn argmax_action(q: &[f64; 3]) -> Action {
    let mut best = 0;
    for i in 1..3 {
        if q[i] > q[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

pub fn select_action<R: Rng + ?Sized>(q: &[f64; 3], epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Action::ALL[rng.random_range(0..Action::COUNT)]
    } else {
        argmax_action(q)
    }
}

/// Linear exploration decay from `start` to `end` over the first `decay_fraction` of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    /// `progress` is the completed share of training in `[0, 1]`.
    pub fn at(&self, progress: f64) -> f64 {
        if self.decay_fraction <= 0.0 {
            return self.end;
        }
        let f = (progress / self.decay_fraction).clamp(0.0, 1.0);
        self.start + (self.end - self.start) * f
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |e: f64| (0.0..=1.0).contains(&e);
        if !(ok(self.start) && ok(self.end) && ok(self.decay_fraction)) {
            return Err(Error::Config(
                "epsilon schedule values must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Bins a driver state, clamping locations on the grid edge back inside.
pub fn state_cell(s: &DriverState, grid: &GridSpec) -> Result<SpaceTimeCell> {
    let eps = 1e-9;
    let lat_hi = grid.origin_corner.lat + grid.cell_lat * grid.lat_cells as f64 - eps;
    let lon_hi = grid.origin_corner.lon + grid.cell_lon * grid.lon_cells as f64 - eps;
    let p = GeoPoint {
        lat: s.location.lat.clamp(grid.origin_corner.lat, lat_hi),
        lon: s.location.lon.clamp(grid.origin_corner.lon, lon_hi),
    };
    bin_cell(p, s.time, s.day, grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: HashMap<(SpaceTimeCell, Action), f64>,
    visits: HashMap<(SpaceTimeCell, Action), u32>,
    pub alpha: f64,
    pub gamma: f64,
    /// Use `1 / visits` as the step size instead of `alpha`.
    pub visit_decay: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct QRow {
    lat_bin: u32,
    lon_bin: u32,
    time_bin: u32,
    action: Action,
    value: f64,
}

impl QTable {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!(
                "step size {alpha} must lie in (0, 1]"
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!(
                "discount {gamma} must lie in [0, 1)"
            )));
        }
        Ok(QTable {
            values: HashMap::new(),
            visits: HashMap::new(),
            alpha,
            gamma,
            visit_decay: false,
        })
    }

    pub fn get(&self, cell: SpaceTimeCell, a: Action) -> f64 {
        self.values.get(&(cell, a)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, cell: SpaceTimeCell, a: Action, v: f64) {
        self.values.insert((cell, a), v);
    }

    pub fn values_at(&self, cell: SpaceTimeCell) -> [f64; 3] {
        Action::ALL.map(|a| self.get(cell, a))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One Q-learning backup on binned cells; returns the new value.
    pub fn update_cell(
        &mut self,
        cell: SpaceTimeCell,
        a: Action,
        reward: f64,
        next: Option<SpaceTimeCell>,
    ) -> f64 {
        let bootstrap = next.map_or(0.0, |n| {
            self.values_at(n)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        });
        let n = self.visits.entry((cell, a)).or_insert(0);
        *n += 1;
        let step = if self.visit_decay {
            1.0 / *n as f64
        } else {
            self.alpha
        };
        let q = self.get(cell, a);
        let v = q + step * (reward + self.gamma * bootstrap - q);
        self.set(cell, a, v);
        v
    }

    pub fn update(&mut self, tr: &Transition, grid: &GridSpec) -> Result<f64> {
        let cell = state_cell(&tr.state, grid)?;
        let next = if tr.done {
            None
        } else {
            Some(state_cell(&tr.next_state, grid)?)
        };
        Ok(self.update_cell(cell, tr.action, tr.reward, next))
    }

    /// Rows sorted by cell then action: `lat_bin,lon_bin,time_bin,action,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows: Vec<QRow> = self
            .values
            .iter()
            .map(|(&(c, a), &value)| QRow {
                lat_bin: c.lat_bin,
                lon_bin: c.lon_bin,
                time_bin: c.time_bin,
                action: a,
                value,
            })
            .collect();
        rows.sort_by_key(|r| (r.lat_bin, r.lon_bin, r.time_bin, r.action));
        let mut out = csv::Writer::from_writer(w);
        for r in rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("<qtable>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, alpha: f64, gamma: f64) -> Result<Self> {
        let mut table = QTable::new(alpha, gamma)?;
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: QRow = row?;
            let cell = SpaceTimeCell {
                lat_bin: row.lat_bin,
                lon_bin: row.lon_bin,
                time_bin: row.time_bin,
            };
            table.set(cell, row.action, row.value);
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>, alpha: f64, gamma: f64) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), alpha, gamma)
    }
}

/// The replay memory's compact view of a transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: DriverState,
    pub action: Action,
    pub reward: f64,
    pub next_state: DriverState,
    pub done: bool,
}

impl From<&Transition> for Experience {
    fn from(tr: &Transition) -> Self {
        Experience {
            state: tr.state,
            action: tr.action,
            reward: tr.reward,
            next_state: tr.next_state,
            done: tr.done,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buf: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            buf: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(e);
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.buf.get(i)
    }

    /// Uniform sample with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.buf.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| rng.random_range(0..self.buf.len()))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Experience> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| self.buf[i])
            .collect()
    }
}

/// Maps a state to `[0, 1]` network inputs using the region box and the day span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateScaler {
    pub region: BBox,
}

impl StateScaler {
    pub fn apply(&self, s: &DriverState) -> [f64; 3] {
        let b = &self.region;
        [
            (s.location.lat - b.lat_min) / (b.lat_max - b.lat_min),
            (s.location.lon - b.lon_min) / (b.lon_max - b.lon_min),
            s.time / SECONDS_PER_DAY,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub sync_period: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_init_scale: f64,
    /// Rewards are multiplied by this before entering targets.
    pub reward_scale: f64,
    /// Environment steps collected before training starts; at least `batch_size`.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            gamma: DEFAULT_GAMMA,
            epsilon: EpsilonSchedule::default(),
            replay_capacity: 100_000,
            batch_size: 32,
            sync_period: 1000,
            learning_rate: 1e-3,
            momentum: 0.0,
            weight_init_scale: 1.0,
            reward_scale: 1.0,
            warmup: 32,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        self.epsilon.validate()?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "discount {} must lie in [0, 1)",
                self.gamma
            )));
        }
        if self.batch_size == 0 || self.sync_period == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config(
                "batch size and sync period must be positive and fit in the replay memory".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.reward_scale > 0.0) {
            return Err(Error::Config(
                "learning rate must be >= 0 and reward scale > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub online: Mlp,
    pub target: Mlp,
    pub replay: ReplayMemory,
    pub scaler: StateScaler,
    pub cfg: DqnConfig,
    opt: Sgd,
    grads: Gradients,
    train_steps: usize,
    since_sync: usize,
}

/// Bootstrap target with the online net choosing and the target net evaluating.
pub fn double_dqn_target(
    online: &Mlp,
    target: &Mlp,
    e: &Experience,
    gamma: f64,
    scaler: &StateScaler,
    reward_scale: f64,
) -> Result<f64> {
    let r = e.reward * reward_scale;
    if e.done {
        return Ok(r);
    }
    let x = scaler.apply(&e.next_state);
    let qo = online.predict(&x)?;
    let a = argmax_action(&[qo[0], qo[1], qo[2]]).index();
    Ok(r + gamma * target.predict(&x)?[a])
}

/// `r + gamma * max_a Q_target(s', a)`.
pub fn vanilla_dqn_target(
    target: &Mlp,
    e: &Experience,
    gamma: f64,
    scaler: &StateScaler,
    reward_scale: f64,
) -> Result<f64> {
    let r = e.reward * reward_scale;
    if e.done {
        return Ok(r);
    }
    let q = target.predict(&scaler.apply(&e.next_state))?;
    Ok(r + gamma * q.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Statistics of one minibatch update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Mean over the batch of `max_a Q(s, a)` before the update.
    pub mean_q: f64,
}

impl DqnAgent {
    pub fn new(cfg: DqnConfig, region: BBox) -> Result<Self> {
        cfg.validate()?;
        region.validate()?;
        let sizes: Vec<usize> = std::iter::once(3)
            .chain(cfg.hidden.iter().copied())
            .chain(std::iter::once(Action::COUNT))
            .collect();
        let online = Mlp::random(&sizes, cfg.activation, cfg.weight_init_scale, cfg.seed)?;
        let target = online.clone();
        Ok(DqnAgent {
            grads: Gradients::zeros_like(&online),
            opt: Sgd::new(cfg.learning_rate, cfg.momentum),
            replay: ReplayMemory::new(cfg.replay_capacity),
            scaler: StateScaler { region },
            online,
            target,
            cfg,
            train_steps: 0,
            since_sync: 0,
        })
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    pub fn q_values(&self, s: &DriverState) -> Result<[f64; 3]> {
        let q = self.online.predict(&self.scaler.apply(s))?;
        Ok([q[0], q[1], q[2]])
    }

    pub fn target_q_values(&self, s: &DriverState) -> Result<[f64; 3]> {
        let q = self.target.predict(&self.scaler.apply(s))?;
        Ok([q[0], q[1], q[2]])
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_weights_from(&self.online)?;
        self.since_sync = 0;
        Ok(())
    }

    pub fn target_for(&self, e: &Experience) -> Result<f64> {
        double_dqn_target(
            &self.online,
            &self.target,
            e,
            self.cfg.gamma,
            &self.scaler,
            self.cfg.reward_scale,
        )
    }

    /// One SGD step on the squared TD error; syncs the target every `sync_period` steps.
    pub fn train_step(&mut self, batch: &[Experience]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::Domain("empty minibatch".into()));
        }
        let targets: Vec<f64> = batch
            .iter()
            .map(|e| self.target_for(e))
            .collect::<Result<_>>()?;
        self.grads.clear();
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        for (e, y) in batch.iter().zip(&targets) {
            let cache = self.online.forward(&self.scaler.apply(&e.state))?;
            let q = cache.output();
            mean_q += q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let a = e.action.index();
            let err = q[a] - y;
            loss += 0.5 * err * err;
            let mut d = [0.0; 3];
            d[a] = err;
            self.online.backward(&cache, &d, &[], &mut self.grads)?;
        }
        let n = batch.len() as f64;
        loss /= n;
        self.grads.scale(1.0 / n);
        check_finite(loss, &self.grads)?;
        self.opt.step(&mut self.online, &self.grads);
        self.train_steps += 1;
        self.since_sync += 1;
        if self.since_sync >= self.cfg.sync_period {
            self.sync_target()?;
        }
        Ok(StepStats {
            loss,
            mean_q: mean_q / n,
        })
    }

    pub fn steps_since_sync(&self) -> usize {
        self.since_sync
    }
}

/// Anything that picks actions in the environment.
pub trait Policy {
    fn act(&mut self, env: &CarpoolEnv, s: &DriverState, rng: &mut ChaCha8Rng) -> Result<Action>;

    fn name(&self) -> &str;
}

/// Carpool when both assignments would succeed, else take one trip, else wait.
pub fn fixed_policy_action(env: &CarpoolEnv, s: &DriverState) -> Result<Action> {
    if !env.can_take_one(s)? {
        Ok(Action::Wait)
    } else if env.can_take_two(s)? {
        Ok(Action::TakeTwo)
    } else {
        Ok(Action::TakeOne)
    }
}

pub struct FixedPolicy;

impl Policy for FixedPolicy {
    fn act(&mut self, env: &CarpoolEnv, s: &DriverState, _rng: &mut ChaCha8Rng) -> Result<Action> {
        fixed_policy_action(env, s)
    }

    fn name(&self) -> &str {
        "fixed"
    }
}

/// Always the same action; `Wait` gives the zero-reward control.
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn act(
        &mut self,
        _env: &CarpoolEnv,
        _s: &DriverState,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Action> {
        Ok(self.0)
    }

    fn name(&self) -> &str {
        match self.0 {
            Action::Wait => "wait",
            Action::TakeOne => "take_one",
            Action::TakeTwo => "take_two",
        }
    }
}

pub struct TablePolicy<'a> {
    pub table: &'a QTable,
    pub epsilon: f64,
}

impl Policy for TablePolicy<'_> {
    fn act(&mut self, env: &CarpoolEnv, s: &DriverState, rng: &mut ChaCha8Rng) -> Result<Action> {
        let q = self.table.values_at(state_cell(s, env.grid())?);
        Ok(select_action(&q, self.epsilon, rng))
    }

    fn name(&self) -> &str {
        "tabular"
    }
}

pub struct DqnPolicy<'a> {
    pub agent: &'a DqnAgent,
    pub epsilon: f64,
}

impl Policy for DqnPolicy<'_> {
    fn act(&mut self, _env: &CarpoolEnv, s: &DriverState, rng: &mut ChaCha8Rng) -> Result<Action> {
        Ok(select_action(&self.agent.q_values(s)?, self.epsilon, rng))
    }

    fn name(&self) -> &str {
        "dqn"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Miles.
    pub cumulative_reward: f64,
    pub step_count: usize,
    /// Counts indexed by `Action::index`.
    pub actions: [usize; 3],
    pub trace: Option<Vec<Transition>>,
}

/// Runs one day from a seeded reset until the clock passes the episode end.
pub fn run_episode(
    env: &mut CarpoolEnv,
    policy: &mut dyn Policy,
    seed: u64,
    keep_trace: bool,
) -> Result<EpisodeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.reset(&mut rng)?;
    let mut res = EpisodeResult {
        cumulative_reward: 0.0,
        step_count: 0,
        actions: [0; 3],
        trace: keep_trace.then(Vec::new),
    };
    loop {
        let a = policy.act(env, &s, &mut rng)?;
        let tr = env.step(a)?;
        res.cumulative_reward += tr.reward;
        res.step_count += 1;
        res.actions[a.index()] += 1;
        let done = tr.done;
        s = tr.next_state;
        if let Some(t) = res.trace.as_mut() {
            t.push(tr);
        }
        if done {
            return Ok(res);
        }
    }
}

/// One point per training episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub episode: Vec<usize>,
    /// Training steps completed at the end of the episode.
    pub step: Vec<usize>,
    pub mean_q: Vec<f64>,
    pub loss: Vec<f64>,
    pub cumulative_reward: Vec<f64>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.episode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episode.is_empty()
    }

    fn push(&mut self, episode: usize, step: usize, mean_q: f64, loss: f64, reward: f64) {
        self.episode.push(episode);
        self.step.push(step);
        self.mean_q.push(mean_q);
        self.loss.push(loss);
        self.cumulative_reward.push(reward);
    }

    /// `# columns: episode, mean_q, loss, cumulative_reward` then one row per episode.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<curve>", e);
        writeln!(w, "# columns: episode, mean_q (max-Q over training minibatches), loss, cumulative_reward (miles)").map_err(io)?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["episode", "mean_q", "loss", "cumulative_reward"])?;
        for i in 0..self.len() {
            out.write_record([
                self.episode[i].to_string(),
                self.mean_q[i].to_string(),
                self.loss[i].to_string(),
                self.cumulative_reward[i].to_string(),
            ])?;
        }
        out.flush().map_err(io)?;
        Ok(())
    }

    /// `# columns: step, mean_q` then one row per recorded point.
    pub fn write_mean_q_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<curve>", e);
        writeln!(w, "# columns: step (training steps so far), mean_q").map_err(io)?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "mean_q"])?;
        for i in 0..self.len() {
            out.write_record([self.step[i].to_string(), self.mean_q[i].to_string()])?;
        }
        out.flush().map_err(io)?;
        Ok(())
    }
}

fn progress(ep: usize, episodes: usize) -> f64 {
    if episodes <= 1 {
        1.0
    } else {
        ep as f64 / (episodes - 1) as f64
    }
}

/// Collects epsilon-greedy episodes into replay and trains after every environment step.
///
/// Episode `i` starts from `reset` seeded by `seed + i`; exploration decays over episodes.
pub fn train_dqn(
    env: &mut CarpoolEnv,
    agent: &mut DqnAgent,
    episodes: usize,
    seed: u64,
) -> Result<LearningCurve> {
    let mut curve = LearningCurve::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d011);
    let warmup = agent.cfg.warmup.max(agent.cfg.batch_size);
    for ep in 0..episodes {
        let eps = agent.cfg.epsilon.at(progress(ep, episodes));
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(ep as u64)))?;
        let (mut q_sum, mut loss_sum, mut n_train, mut reward) = (0.0, 0.0, 0usize, 0.0);
        loop {
            let a = select_action(&agent.q_values(&s)?, eps, &mut rng);
            let tr = env.step(a)?;
            reward += tr.reward;
            agent.replay.push(Experience::from(&tr));
            if agent.replay.len() >= warmup {
                let batch = agent.replay.sample(agent.cfg.batch_size, &mut rng);
                let st = agent.train_step(&batch)?;
                q_sum += st.mean_q;
                loss_sum += st.loss;
                n_train += 1;
            }
            s = tr.next_state;
            if tr.done {
                break;
            }
        }
        let n = n_train.max(1) as f64;
        curve.push(ep, agent.train_steps(), q_sum / n, loss_sum / n, reward);
    }
    Ok(curve)
}

/// Epsilon-greedy tabular Q-learning, one backup per environment step.
pub fn train_tabular(
    env: &mut CarpoolEnv,
    table: &mut QTable,
    episodes: usize,
    epsilon: EpsilonSchedule,
    seed: u64,
) -> Result<LearningCurve> {
    epsilon.validate()?;
    let grid = *env.grid();
    let mut curve = LearningCurve::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ab1e);
    let mut steps = 0;
    for ep in 0..episodes {
        let eps = epsilon.at(progress(ep, episodes));
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(ep as u64)))?;
        let (mut q_sum, mut reward, mut n) = (0.0, 0.0, 0usize);
        loop {
            let q = table.values_at(state_cell(&s, &grid)?);
            let a = select_action(&q, eps, &mut rng);
            let tr = env.step(a)?;
            q_sum += table.update(&tr, &grid)?;
            reward += tr.reward;
            n += 1;
            steps += 1;
            s = tr.next_state;
            if tr.done {
                break;
            }
        }
        curve.push(ep, steps, q_sum / n as f64, 0.0, reward);
    }
    Ok(curve)
}
