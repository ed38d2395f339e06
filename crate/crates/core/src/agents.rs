//! Reference learners that generate behavior and ground-truth signal traces.
//!
//! - [`QTable`] / [`QLearner`]: tabular Q-learning whose TD error is averaged
//!   over a replay window of the most recent transitions.
//! - [`SrMatrix`]: successor representation learned with a vector TD error.
//! - [`TransitionModel`]: counting model of one-step transitions, with the
//!   per-successor [`TransitionModel::surprise`] signal.
//! - [`RepetitionModel`]: choice probabilities from smoothed action counts.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{walk_states, Environment, EnvError};
use crate::rng;
use crate::store::{StepRecord, TrajectoryLog};

/// Number of most recent transitions used for each TD update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Window {
    Last(usize),
    All(AllTag),
}

/// Serialized form of [`Window::All`] (the string `"all"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllTag {
    All,
}

impl Window {
    pub const ALL: Window = Window::All(AllTag::All);

    /// The suffix of `history` this window covers.
    pub fn slice<'a, T>(&self, history: &'a [T]) -> &'a [T] {
        match *self {
            Window::Last(k) => &history[history.len().saturating_sub(k.max(1))..],
            Window::All(_) => history,
        }
    }
}

impl Default for Window {
    fn default() -> Self {
        Window::Last(1)
    }
}

/// One observed transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

impl Experience {
    /// Reads a log step; a missing reward is an error for value learning.
    pub fn from_step(step: &StepRecord) -> Option<Self> {
        Some(Experience {
            state: step.state,
            action: step.action?,
            reward: step.reward?,
            next_state: step.next_state,
            terminal: step.terminal,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("step {0} has no action or reward; value learning needs both")]
    MissingReward(usize),
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
}

/// Tabular action values; never-updated pairs read as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Array2<f64>,
    pub gamma: f64,
    pub alpha: f64,
    pub window: Window,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, alpha: f64, gamma: f64, window: Window) -> Self {
        QTable {
            values: Array2::zeros((n_states, n_actions)),
            gamma,
            alpha,
            window,
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[[s, a]]
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.values
            .row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy_action(&self, s: usize) -> usize {
        let row = self.values.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }
}

/// `r + gamma * max_a Q(s', a) - Q(s, a)`, with no bootstrap on terminal steps.
pub fn td_error_q(q: &QTable, s: usize, a: usize, r: f64, s_next: usize, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { q.gamma * q.max_value(s_next) };
    r + bootstrap - q.get(s, a)
}

/// Mean TD error of one `(s, a)` pair over its occurrences in a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDelta {
    pub state: usize,
    pub action: usize,
    pub mean: f64,
    pub count: usize,
}

/// One windowed Q update.
///
/// Every TD error is computed against the pre-update table. Each `(s, a)`
/// occurring in `window` moves by `alpha` times the mean TD error of its
/// occurrences. Returns the per-pair means in order of first occurrence.
pub fn q_update_windowed(q: &mut QTable, window: &[Experience]) -> Vec<PairDelta> {
    let n_actions = q.values.ncols();
    let mut slot = vec![usize::MAX; q.values.len()];
    let mut acc: Vec<PairDelta> = Vec::new();
    for e in window {
        let delta = td_error_q(q, e.state, e.action, e.reward, e.next_state, e.terminal);
        let key = e.state * n_actions + e.action;
        if slot[key] == usize::MAX {
            slot[key] = acc.len();
            acc.push(PairDelta {
                state: e.state,
                action: e.action,
                mean: 0.0,
                count: 0,
            });
        }
        let entry = &mut acc[slot[key]];
        entry.mean += delta;
        entry.count += 1;
    }
    for p in &mut acc {
        p.mean /= p.count as f64;
        q.values[[p.state, p.action]] += q.alpha * p.mean;
    }
    acc
}

/// Q-table plus its experience history.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub q: QTable,
    history: Vec<Experience>,
}

/// Per-step readout of a learner before and during its update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSignal {
    /// `Q(s, a)` before the update.
    pub value: f64,
    /// TD error averaged over every transition in the window.
    pub td_error: f64,
    /// Window-averaged TD error of the current pair alone.
    pub pair_td_error: f64,
}

impl QLearner {
    pub fn new(q: QTable) -> Self {
        QLearner {
            q,
            history: Vec::new(),
        }
    }

    pub fn history(&self) -> &[Experience] {
        &self.history
    }

    pub fn observe(&mut self, e: Experience) -> StepSignal {
        let value = self.q.get(e.state, e.action);
        self.history.push(e);
        let window = self.q.window.slice(&self.history);
        let n = window.len() as f64;
        let deltas = q_update_windowed(&mut self.q, window);
        let td_error = deltas.iter().map(|p| p.mean * p.count as f64).sum::<f64>() / n;
        let pair_td_error = deltas
            .iter()
            .find(|p| (p.state, p.action) == (e.state, e.action))
            .map(|p| p.mean)
            .expect("current pair is inside its own window");
        StepSignal {
            value,
            td_error,
            pair_td_error,
        }
    }
}

/// Softmax over `values * beta`, computed stably.
pub fn softmax(values: &[f64], beta: f64) -> Vec<f64> {
    let max = values
        .iter()
        .map(|v| v * beta)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v * beta - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Log-probabilities of a softmax over `values * beta`.
pub fn log_softmax(values: &[f64], beta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = values.iter().map(|v| v * beta).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|v| v - lse).collect()
}

fn sample(probs: &[f64], rng: &mut rng::Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Action-selection rule of a simulated agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Exploration {
    /// `epsilon` falls linearly from `epsilon0` at episode 0 to 0 at
    /// `decay_episodes` and stays there; greedy ties are broken at random.
    EpsilonGreedy { epsilon0: f64, decay_episodes: u64 },
    /// Softmax with inverse temperature `beta`.
    Softmax { beta: f64 },
    /// Uniform random actions for the first episodes, then `then`.
    RandomThen {
        random_episodes: u64,
        then: Box<Exploration>,
    },
}

impl Exploration {
    /// The grid-world schedule: epsilon from 1 to 0 over 15 episodes.
    pub fn grid_default() -> Self {
        Exploration::EpsilonGreedy {
            epsilon0: 1.0,
            decay_episodes: 15,
        }
    }

    /// Seven random episodes, then softmax sampling at temperature 1.
    pub fn two_step_default() -> Self {
        Exploration::RandomThen {
            random_episodes: 7,
            then: Box::new(Exploration::Softmax { beta: 1.0 }),
        }
    }

    pub fn epsilon(&self, episode: u64) -> Option<f64> {
        match self {
            Exploration::EpsilonGreedy {
                epsilon0,
                decay_episodes,
            } => {
                if *decay_episodes == 0 || episode >= *decay_episodes {
                    Some(0.0)
                } else {
                    Some(epsilon0 * (1.0 - episode as f64 / *decay_episodes as f64))
                }
            }
            Exploration::RandomThen {
                random_episodes,
                then,
            } => {
                if episode < *random_episodes {
                    Some(1.0)
                } else {
                    then.epsilon(episode)
                }
            }
            Exploration::Softmax { .. } => None,
        }
    }

    pub fn choose(&self, q: &QTable, s: usize, episode: u64, rng: &mut rng::Rng) -> usize {
        let n_actions = q.values.ncols();
        match self {
            Exploration::EpsilonGreedy { .. } => {
                let eps = self.epsilon(episode).unwrap_or(0.0);
                if rng.random::<f64>() < eps {
                    rng.random_range(0..n_actions)
                } else {
                    let best = q.max_value(s);
                    let ties: Vec<usize> = (0..n_actions).filter(|&a| q.get(s, a) == best).collect();
                    ties[rng.random_range(0..ties.len())]
                }
            }
            Exploration::Softmax { beta } => {
                let row: Vec<f64> = q.values.row(s).to_vec();
                sample(&softmax(&row, *beta), rng)
            }
            Exploration::RandomThen {
                random_episodes,
                then,
            } => {
                if episode < *random_episodes {
                    rng.random_range(0..n_actions)
                } else {
                    then.choose(q, s, episode, rng)
                }
            }
        }
    }
}

/// Per-step scalar or vector signal aligned to a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub name: String,
    pub run_id: String,
    /// `n_steps x width`.
    pub values: Array2<f64>,
    /// `(episode, t)` of each row.
    pub alignment: Vec<(u64, u64)>,
}

impl SignalTrace {
    pub fn scalar(name: &str, run_id: &str, values: Vec<f64>, alignment: Vec<(u64, u64)>) -> Self {
        let n = values.len();
        SignalTrace {
            name: name.to_string(),
            run_id: run_id.to_string(),
            values: Array2::from_shape_vec((n, 1), values).expect("column vector"),
            alignment,
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    /// First column as a vector (the whole signal for scalar traces).
    pub fn column(&self, j: usize) -> Array1<f64> {
        self.values.column(j).to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAgentConfig {
    pub episodes: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub window: Window,
    pub exploration: Exploration,
    pub seed: u64,
}

impl QAgentConfig {
    /// Grid-world settings: full-history window, epsilon decayed over 15 episodes.
    pub fn grid_default() -> Self {
        QAgentConfig {
            episodes: 50,
            alpha: 0.1,
            gamma: 0.99,
            window: Window::ALL,
            exploration: Exploration::grid_default(),
            seed: 0,
        }
    }

    /// Two-step settings: window of 4 transitions, 30 episodes.
    pub fn two_step_default() -> Self {
        QAgentConfig {
            episodes: 30,
            alpha: 0.1,
            gamma: 0.99,
            window: Window::Last(4),
            exploration: Exploration::two_step_default(),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), AgentError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(AgentError::Hyperparameter(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(AgentError::Hyperparameter(format!("gamma {} not in [0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Output of [`run_q_agent`].
#[derive(Debug, Clone)]
pub struct QRun {
    pub log: TrajectoryLog,
    pub q_values: SignalTrace,
    pub td_errors: SignalTrace,
    pub myopic_values: SignalTrace,
    pub myopic_errors: SignalTrace,
    pub q: QTable,
    pub myopic: QTable,
}

impl QRun {
    pub fn traces(&self) -> [&SignalTrace; 4] {
        [
            &self.q_values,
            &self.td_errors,
            &self.myopic_values,
            &self.myopic_errors,
        ]
    }
}

/// Runs a Q-learning agent and a parallel gamma = 0 learner on the same
/// experience. Actions are chosen from the Q-learner.
pub fn run_q_agent<E: Environment>(
    env: &E,
    cfg: &QAgentConfig,
    run_id: &str,
) -> Result<QRun, AgentError> {
    cfg.validate()?;
    let mut rng = rng::seeded(cfg.seed);
    let (ns, na) = (env.n_states(), env.n_actions());
    let mut learner = QLearner::new(QTable::new(ns, na, cfg.alpha, cfg.gamma, cfg.window));
    let mut myopic = QLearner::new(QTable::new(ns, na, cfg.alpha, 0.0, cfg.window));
    let mut log = TrajectoryLog::new(run_id, env.task());
    log.meta.insert("seed".into(), cfg.seed.to_string());
    let mut sig = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut alignment = Vec::new();
    for episode in 0..cfg.episodes {
        let mut state = env.reset(episode, &mut rng);
        let limit = env.max_steps().unwrap_or(usize::MAX);
        for t in 0..limit {
            let action = cfg.exploration.choose(&learner.q, state, episode, &mut rng);
            let tr = env.step(state, action, episode)?;
            let e = Experience {
                state,
                action,
                reward: tr.reward,
                next_state: tr.next_state,
                terminal: tr.done,
            };
            let q_sig = learner.observe(e);
            let m_sig = myopic.observe(e);
            sig[0].push(q_sig.value);
            sig[1].push(q_sig.td_error);
            sig[2].push(m_sig.value);
            sig[3].push(m_sig.td_error);
            alignment.push((episode, t as u64));
            log.steps.push(StepRecord {
                episode,
                t: t as u64,
                state,
                action: Some(action),
                reward: Some(tr.reward),
                next_state: tr.next_state,
                terminal: tr.done,
            });
            state = tr.next_state;
            if tr.done {
                break;
            }
        }
    }
    let [qv, td, mv, me] = sig;
    Ok(QRun {
        q_values: SignalTrace::scalar("q_values", run_id, qv, alignment.clone()),
        td_errors: SignalTrace::scalar("td_errors", run_id, td, alignment.clone()),
        myopic_values: SignalTrace::scalar("myopic_values", run_id, mv, alignment.clone()),
        myopic_errors: SignalTrace::scalar("myopic_errors", run_id, me, alignment),
        q: learner.q,
        myopic: myopic.q,
        log,
    })
}

/// Replays a logged trajectory through a fresh learner and returns its
/// `(values, td_errors)` traces.
pub fn replay_q(
    log: &TrajectoryLog,
    n_states: usize,
    n_actions: usize,
    alpha: f64,
    gamma: f64,
    window: Window,
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    let mut learner = QLearner::new(QTable::new(n_states, n_actions, alpha, gamma, window));
    let mut values = Vec::with_capacity(log.len());
    let mut errors = Vec::with_capacity(log.len());
    for (i, step) in log.steps.iter().enumerate() {
        let e = Experience::from_step(step).ok_or(AgentError::MissingReward(i))?;
        let s = learner.observe(e);
        values.push(s.value);
        errors.push(s.td_error);
    }
    Ok((values, errors))
}

// ---------------------------------------------------------------------------
// Graph learners
// ---------------------------------------------------------------------------

/// Successor representation, initialised to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SrMatrix {
    pub m: Array2<f64>,
    pub gamma: f64,
    pub alpha: f64,
}

impl SrMatrix {
    pub fn new(n_states: usize, gamma: f64, alpha: f64) -> Self {
        SrMatrix {
            m: Array2::eye(n_states),
            gamma,
            alpha,
        }
    }

    /// `delta = 1_s + gamma * M(s', :) - M(s, :)`.
    pub fn td_error(&self, s: usize, s_next: usize) -> Array1<f64> {
        let mut delta = &self.m.row(s_next) * self.gamma - &self.m.row(s);
        delta[s] += 1.0;
        delta
    }

    /// Computes the vector TD error and moves row `s` by `alpha * delta`.
    pub fn sr_td_step(&mut self, s: usize, s_next: usize) -> Array1<f64> {
        let delta = self.td_error(s, s_next);
        self.m.row_mut(s).scaled_add(self.alpha, &delta);
        delta
    }
}

/// Closed-form successor representation `(I - gamma T)^-1` by Gauss-Jordan
/// elimination with partial pivoting. Returns `None` if the system is singular.
pub fn analytic_sr(t: &Array2<f64>, gamma: f64) -> Option<Array2<f64>> {
    let n = t.nrows();
    let mut a = Array2::<f64>::eye(n) - t * gamma;
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .expect("non-empty range");
        if a[[pivot, col]].abs() < 1e-14 {
            return None;
        }
        for k in 0..n {
            a.swap([col, k], [pivot, k]);
            inv.swap([col, k], [pivot, k]);
        }
        let d = a[[col, col]];
        a.row_mut(col).mapv_inplace(|v| v / d);
        inv.row_mut(col).mapv_inplace(|v| v / d);
        for r in (0..n).filter(|&r| r != col) {
            let f = a[[r, col]];
            if f != 0.0 {
                let (pa, pi) = (a.row(col).to_owned(), inv.row(col).to_owned());
                a.row_mut(r).scaled_add(-f, &pa);
                inv.row_mut(r).scaled_add(-f, &pi);
            }
        }
    }
    Some(inv)
}

/// Probability clamp applied before taking logs in [`TransitionModel::surprise`].
pub const SURPRISE_PROB_FLOOR: f64 = 1e-6;

/// Counts of observed one-step transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub counts: Array2<u64>,
}

impl TransitionModel {
    pub fn new(n_states: usize) -> Self {
        TransitionModel {
            counts: Array2::zeros((n_states, n_states)),
        }
    }

    pub fn n_states(&self) -> usize {
        self.counts.nrows()
    }

    pub fn transition_update(&mut self, s: usize, s_next: usize) {
        self.counts[[s, s_next]] += 1;
    }

    /// Row `s` of the estimated transition matrix; unvisited rows are uniform.
    pub fn row(&self, s: usize) -> Array1<f64> {
        let total: u64 = self.counts.row(s).sum();
        if total == 0 {
            Array1::from_elem(self.n_states(), 1.0 / self.n_states() as f64)
        } else {
            self.counts.row(s).mapv(|c| c as f64 / total as f64)
        }
    }

    pub fn probabilities(&self) -> Array2<f64> {
        let n = self.n_states();
        let mut t = Array2::zeros((n, n));
        for s in 0..n {
            t.row_mut(s).assign(&self.row(s));
        }
        t
    }

    /// Most probable successor of `s` (lowest index on ties).
    pub fn predict_next(&self, s: usize) -> usize {
        let row = self.counts.row(s);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        best
    }

    /// `-ln T(s, s')` for the observed successor, `-ln(1 - T(s, s'))` for all
    /// others, with probabilities clamped to `[1e-6, 1 - 1e-6]`.
    pub fn surprise(&self, s: usize, observed: usize) -> Array1<f64> {
        let row = self.row(s);
        Array1::from_iter(row.iter().enumerate().map(|(j, &p)| {
            let p = p.clamp(SURPRISE_PROB_FLOOR, 1.0 - SURPRISE_PROB_FLOOR);
            if j == observed {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphLearnerConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for GraphLearnerConfig {
    fn default() -> Self {
        GraphLearnerConfig {
            gamma: 0.99,
            alpha: 0.05,
        }
    }
}

/// Signals of the graph learners, one row per transition of the walk.
#[derive(Debug, Clone)]
pub struct GraphSignals {
    /// `M(s_t, :)` before the update.
    pub sr_rows: SignalTrace,
    /// Vector SR TD error.
    pub sr_td: SignalTrace,
    /// `T(s_t, :)` before the update.
    pub transition_rows: SignalTrace,
    /// Surprise vector of the transition under the pre-update model.
    pub surprise: SignalTrace,
    /// Argmax next-state prediction made before observing each transition.
    pub predictions: Vec<usize>,
    pub states: Vec<usize>,
    pub sr: SrMatrix,
    pub transitions: TransitionModel,
}

impl GraphSignals {
    pub fn prediction_accuracy(&self) -> f64 {
        if self.predictions.is_empty() {
            return 0.0;
        }
        let hits = self
            .predictions
            .iter()
            .zip(self.states.iter().skip(1))
            .filter(|(p, s)| p == s)
            .count();
        hits as f64 / self.predictions.len() as f64
    }
}

/// Runs the SR learner and the transition counter over a random-walk log.
pub fn run_graph_learners(
    walk: &TrajectoryLog,
    n_states: usize,
    cfg: GraphLearnerConfig,
) -> GraphSignals {
    let states = walk_states(walk);
    let n = walk.steps.len();
    let mut sr = SrMatrix::new(n_states, cfg.gamma, cfg.alpha);
    let mut tm = TransitionModel::new(n_states);
    let mut sr_rows = Array2::zeros((n, n_states));
    let mut sr_td = Array2::zeros((n, n_states));
    let mut t_rows = Array2::zeros((n, n_states));
    let mut surprise = Array2::zeros((n, n_states));
    let mut predictions = Vec::with_capacity(n);
    for (i, step) in walk.steps.iter().enumerate() {
        let (s, s_next) = (step.state, step.next_state);
        sr_rows.row_mut(i).assign(&sr.m.row(s));
        t_rows.row_mut(i).assign(&tm.row(s));
        surprise.row_mut(i).assign(&tm.surprise(s, s_next));
        predictions.push(tm.predict_next(s));
        let delta = sr.sr_td_step(s, s_next);
        sr_td.row_mut(i).assign(&delta);
        tm.transition_update(s, s_next);
    }
    let alignment: Vec<(u64, u64)> = walk.steps.iter().map(|s| s.key()).collect();
    let trace = |name: &str, values| SignalTrace {
        name: name.to_string(),
        run_id: walk.run_id.clone(),
        values,
        alignment: alignment.clone(),
    };
    GraphSignals {
        sr_rows: trace("sr", sr_rows),
        sr_td: trace("sr_td", sr_td),
        transition_rows: trace("transition", t_rows),
        surprise: trace("surprise", surprise),
        predictions,
        states,
        sr,
        transitions: tm,
    }
}

// ---------------------------------------------------------------------------
// Repetition model
// ---------------------------------------------------------------------------

/// `p(a | s) = (count(s, a) + c) / (sum_a' count(s, a') + c * |A|)`.
pub fn repetition_probs(
    history: &[(usize, usize)],
    s: usize,
    n_actions: usize,
    smoothing: f64,
) -> Vec<f64> {
    let mut counts = vec![0.0; n_actions];
    for &(hs, ha) in history {
        if hs == s {
            counts[ha] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum::<f64>() + smoothing * n_actions as f64;
    counts.into_iter().map(|c| (c + smoothing) / total).collect()
}

/// Incremental form of [`repetition_probs`].
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionModel {
    pub counts: Array2<f64>,
    pub smoothing: f64,
}

impl RepetitionModel {
    pub fn new(n_states: usize, n_actions: usize, smoothing: f64) -> Self {
        RepetitionModel {
            counts: Array2::zeros((n_states, n_actions)),
            smoothing,
        }
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = self.counts.row(s);
        let total = row.sum() + self.smoothing * row.len() as f64;
        row.iter().map(|c| (c + self.smoothing) / total).collect()
    }

    pub fn observe(&mut self, s: usize, a: usize) {
        self.counts[[s, a]] += 1.0;
    }
}
