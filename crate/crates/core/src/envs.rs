//! Deterministic task environments: the two-step task, a 5x5 grid world and a
//! three-community graph explored by random walk.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::store::{StepRecord, TaskKind, TrajectoryLog};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("no action is available in terminal state")]
    TerminalState,
    #[error("state {0} is not a valid state")]
    InvalidState(usize),
    #[error("action {0} is not a valid action")]
    InvalidAction(usize),
    #[error("cell ({0}, {1}) lies outside the grid")]
    OutsideGrid(i32, i32),
    #[error("trajectory is not a grid-world log")]
    NotGridWorld,
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// Outcome of a single environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next_state: usize,
    pub reward: f64,
    pub done: bool,
}

/// Episodic tabular environment with integer states and actions.
pub trait Environment {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn task(&self) -> TaskKind;
    /// Initial state of `episode`.
    fn reset(&self, episode: u64, rng: &mut rng::Rng) -> usize;
    fn step(&self, state: usize, action: usize, episode: u64) -> Result<Transition>;
    /// Episode cut-off; `None` means episodes always terminate on their own.
    fn max_steps(&self) -> Option<usize> {
        None
    }
}

// ---------------------------------------------------------------------------
// Two-step task
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TwoStepState {
    Start = 0,
    Apple = 1,
    Orange = 2,
    Terminal = 3,
}

impl TwoStepState {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(TwoStepState::Start),
            1 => Ok(TwoStepState::Apple),
            2 => Ok(TwoStepState::Orange),
            3 => Ok(TwoStepState::Terminal),
            _ => Err(EnvError::InvalidState(i)),
        }
    }
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Rewards of the four second-stage (state, action) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub apple_left: f64,
    pub apple_right: f64,
    pub orange_left: f64,
    pub orange_right: f64,
}

impl RewardTable {
    pub fn get(&self, state: TwoStepState, action: usize) -> Option<f64> {
        match (state, action) {
            (TwoStepState::Apple, LEFT) => Some(self.apple_left),
            (TwoStepState::Apple, RIGHT) => Some(self.apple_right),
            (TwoStepState::Orange, LEFT) => Some(self.orange_left),
            (TwoStepState::Orange, RIGHT) => Some(self.orange_right),
            _ => None,
        }
    }

    pub fn max(&self) -> f64 {
        [
            self.apple_left,
            self.apple_right,
            self.orange_left,
            self.orange_right,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Post-change table of the reward-change variant: the best option moves
    /// from Apple to Orange and the optimum drops from 9 to 8.
    pub fn reversed_default() -> Self {
        RewardTable {
            apple_left: 3.0,
            apple_right: 1.0,
            orange_left: 8.0,
            orange_right: 5.0,
        }
    }
}

impl Default for RewardTable {
    fn default() -> Self {
        RewardTable {
            apple_left: 2.0,
            apple_right: 9.0,
            orange_left: 6.0,
            orange_right: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TwoStepVariant {
    Stationary,
    RewardChange { at_episode: u64, table: RewardTable },
    TransitionChange { at_episode: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStepEnv {
    pub reward_table: RewardTable,
    /// `true`: Left leads to Apple and Right to Orange.
    pub left_to_apple: bool,
    pub variant: TwoStepVariant,
}

impl Default for TwoStepEnv {
    fn default() -> Self {
        TwoStepEnv {
            reward_table: RewardTable::default(),
            left_to_apple: true,
            variant: TwoStepVariant::Stationary,
        }
    }
}

impl TwoStepEnv {
    pub fn with_variant(variant: TwoStepVariant) -> Self {
        TwoStepEnv {
            variant,
            ..Default::default()
        }
    }

    pub fn table_at(&self, episode: u64) -> RewardTable {
        match self.variant {
            TwoStepVariant::RewardChange { at_episode, table } if episode >= at_episode => table,
            _ => self.reward_table,
        }
    }

    fn left_to_apple_at(&self, episode: u64) -> bool {
        match self.variant {
            TwoStepVariant::TransitionChange { at_episode } if episode >= at_episode => {
                !self.left_to_apple
            }
            _ => self.left_to_apple,
        }
    }

    /// Second-stage state reached from Start; the mapping is a bijection.
    pub fn first_stage_target(&self, action: usize, episode: u64) -> TwoStepState {
        let to_apple = (action == LEFT) == self.left_to_apple_at(episode);
        if to_apple {
            TwoStepState::Apple
        } else {
            TwoStepState::Orange
        }
    }

    pub fn optimal_return(&self, episode: u64) -> f64 {
        self.table_at(episode).max()
    }

    pub fn transition(
        &self,
        state: TwoStepState,
        action: usize,
        episode: u64,
    ) -> Result<(TwoStepState, f64, bool)> {
        if action > RIGHT {
            return Err(EnvError::InvalidAction(action));
        }
        match state {
            TwoStepState::Start => Ok((self.first_stage_target(action, episode), 0.0, false)),
            TwoStepState::Apple | TwoStepState::Orange => {
                let reward = self
                    .table_at(episode)
                    .get(state, action)
                    .expect("second-stage entry");
                Ok((TwoStepState::Terminal, reward, true))
            }
            TwoStepState::Terminal => Err(EnvError::TerminalState),
        }
    }
}

impl Environment for TwoStepEnv {
    fn n_states(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn task(&self) -> TaskKind {
        TaskKind::TwoStep
    }

    fn reset(&self, _episode: u64, _rng: &mut rng::Rng) -> usize {
        TwoStepState::Start as usize
    }

    fn step(&self, state: usize, action: usize, episode: u64) -> Result<Transition> {
        let (next, reward, done) = self.transition(TwoStepState::from_index(state)?, action, episode)?;
        Ok(Transition {
            next_state: next as usize,
            reward,
            done,
        })
    }
}

// ---------------------------------------------------------------------------
// Grid world
// ---------------------------------------------------------------------------

/// Grid actions; UP increases `y`, RIGHT increases `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
    ];

    pub fn from_index(i: usize) -> Result<Self> {
        GridAction::ALL
            .get(i)
            .copied()
            .ok_or(EnvError::InvalidAction(i))
    }

    fn delta(self) -> (i32, i32) {
        match self {
            GridAction::Up => (0, 1),
            GridAction::Down => (0, -1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
        }
    }
}

pub type Cell = (i32, i32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridWorldEnv {
    pub width: i32,
    pub height: i32,
    pub start: Cell,
    pub goal: Cell,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub max_steps_per_episode: usize,
    /// Draw each episode's start uniformly from the non-goal cells.
    pub randomize_start: bool,
}

impl Default for GridWorldEnv {
    fn default() -> Self {
        GridWorldEnv {
            width: 5,
            height: 5,
            start: (0, 0),
            goal: (4, 4),
            step_reward: -1.0,
            goal_reward: 1.0,
            max_steps_per_episode: 200,
            randomize_start: false,
        }
    }
}

impl GridWorldEnv {
    pub fn contains(&self, cell: Cell) -> bool {
        (0..self.width).contains(&cell.0) && (0..self.height).contains(&cell.1)
    }

    pub fn index(&self, cell: Cell) -> usize {
        (cell.1 * self.width + cell.0) as usize
    }

    pub fn cell(&self, index: usize) -> Cell {
        let i = index as i32;
        (i % self.width, i / self.width)
    }

    pub fn goal_index(&self) -> usize {
        self.index(self.goal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(EnvError::Config("grid must be at least 1x1".into()));
        }
        if !self.contains(self.start) || !self.contains(self.goal) {
            return Err(EnvError::Config("start and goal must lie inside the grid".into()));
        }
        if self.start == self.goal && !self.randomize_start {
            return Err(EnvError::Config("start equals goal".into()));
        }
        Ok(())
    }

    /// Moves off the grid leave the agent in place and still cost `step_reward`.
    pub fn grid_step(&self, cell: Cell, action: GridAction) -> Result<(Cell, f64, bool)> {
        if !self.contains(cell) {
            return Err(EnvError::OutsideGrid(cell.0, cell.1));
        }
        if cell == self.goal {
            return Err(EnvError::TerminalState);
        }
        let (dx, dy) = action.delta();
        let moved = (cell.0 + dx, cell.1 + dy);
        let next = if self.contains(moved) { moved } else { cell };
        if next == self.goal {
            Ok((next, self.goal_reward, true))
        } else {
            Ok((next, self.step_reward, false))
        }
    }

    /// Number of moves on a shortest path from `cell` to the goal.
    pub fn shortest_path_len(&self, cell: Cell) -> usize {
        ((cell.0 - self.goal.0).abs() + (cell.1 - self.goal.1).abs()) as usize
    }
}

impl Environment for GridWorldEnv {
    fn n_states(&self) -> usize {
        (self.width * self.height) as usize
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn task(&self) -> TaskKind {
        TaskKind::GridWorld
    }

    fn reset(&self, _episode: u64, rng: &mut rng::Rng) -> usize {
        if self.randomize_start {
            let goal = self.goal_index();
            loop {
                let s = rng.random_range(0..self.n_states());
                if s != goal {
                    return s;
                }
            }
        } else {
            self.index(self.start)
        }
    }

    fn step(&self, state: usize, action: usize, _episode: u64) -> Result<Transition> {
        if state >= self.n_states() {
            return Err(EnvError::InvalidState(state));
        }
        let (next, reward, done) = self.grid_step(self.cell(state), GridAction::from_index(action)?)?;
        Ok(Transition {
            next_state: self.index(next),
            reward,
            done,
        })
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.max_steps_per_episode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardRandomization {
    /// Independent uniform +1/-1 rewards.
    ShuffleSign,
    /// `r -> -r`.
    SwapSign,
    /// Remove rewards altogether.
    Strip,
}

/// Replaces the rewards of a grid-world log; states and actions are untouched.
pub fn randomize_rewards(
    traj: &TrajectoryLog,
    mode: RewardRandomization,
    seed: u64,
) -> Result<TrajectoryLog> {
    if traj.task != Some(TaskKind::GridWorld) {
        return Err(EnvError::NotGridWorld);
    }
    let mut rng = rng::seeded(seed);
    let mut out = traj.clone();
    for step in &mut out.steps {
        step.reward = match mode {
            RewardRandomization::ShuffleSign => Some(if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
            RewardRandomization::SwapSign => step.reward.map(|r| -r),
            RewardRandomization::Strip => None,
        };
    }
    out.meta
        .insert("reward_randomization".into(), format!("{mode:?}"));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Community graph
// ---------------------------------------------------------------------------

pub const N_COMMUNITIES: usize = 3;
pub const NODES_PER_COMMUNITY: usize = 5;
pub const N_NODES: usize = N_COMMUNITIES * NODES_PER_COMMUNITY;

const LABEL_POOL: [&str; 24] = [
    "anchor", "basket", "candle", "drum", "easel", "feather", "guitar", "hammer", "igloo",
    "jacket", "kettle", "ladder", "magnet", "needle", "oar", "pillow", "quilt", "rocket",
    "saddle", "teapot", "umbrella", "violin", "wagon", "yoyo",
];

/// Three five-node communities joined in a ring through bottleneck nodes.
///
/// Node `5c + i` belongs to community `c`. Local slots 0 and 4 are the
/// bottlenecks: they connect to the three interior nodes of their community
/// and, through one cross edge each, to a bottleneck of a neighbouring
/// community. Every node has degree 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityGraph {
    pub adjacency: Vec<Vec<bool>>,
    pub bottleneck: Vec<bool>,
    pub community: Vec<usize>,
    /// Per-run display labels; they never influence dynamics.
    pub node_names: Vec<String>,
    neighbors: Vec<Vec<usize>>,
}

impl CommunityGraph {
    pub fn build(seed: u64) -> Self {
        let n = N_NODES;
        let mut adjacency = vec![vec![false; n]; n];
        let mut bottleneck = vec![false; n];
        let community: Vec<usize> = (0..n).map(|i| i / NODES_PER_COMMUNITY).collect();
        let mut connect = |a: usize, b: usize| {
            adjacency[a][b] = true;
            adjacency[b][a] = true;
        };
        for c in 0..N_COMMUNITIES {
            let base = c * NODES_PER_COMMUNITY;
            let entry = base;
            let exit = base + NODES_PER_COMMUNITY - 1;
            for i in 0..NODES_PER_COMMUNITY {
                for j in (i + 1)..NODES_PER_COMMUNITY {
                    let (a, b) = (base + i, base + j);
                    if !(a == entry && b == exit) {
                        connect(a, b);
                    }
                }
            }
            let next_entry = ((c + 1) % N_COMMUNITIES) * NODES_PER_COMMUNITY;
            connect(exit, next_entry);
            bottleneck[entry] = true;
            bottleneck[exit] = true;
        }
        let neighbors = adjacency
            .iter()
            .map(|row| (0..n).filter(|&j| row[j]).collect())
            .collect();
        let mut rng = rng::seeded(seed);
        let mut pool: Vec<&str> = LABEL_POOL.to_vec();
        pool.shuffle(&mut rng);
        let node_names = pool[..n].iter().map(|s| (*s).to_string()).collect();
        CommunityGraph {
            adjacency,
            bottleneck,
            community,
            node_names,
            neighbors,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn is_cross_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b] && self.community[a] != self.community[b]
    }

    /// Row-stochastic transition matrix of the uniform random walk.
    pub fn walk_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_nodes())
            .map(|i| {
                let deg = self.degree(i) as f64;
                (0..self.n_nodes())
                    .map(|j| if self.adjacency[i][j] { 1.0 / deg } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

/// Uniform random walk of `n_steps` observations (`n_steps - 1` transitions).
///
/// The first observation is stored in `meta["start_state"]` so that a
/// single-observation walk is still recoverable via [`walk_states`].
pub fn random_walk(graph: &CommunityGraph, n_steps: usize, seed: u64) -> TrajectoryLog {
    let mut rng = rng::seeded(seed);
    let mut log = TrajectoryLog::new(format!("walk-{seed}"), TaskKind::Graph);
    let mut state = rng.random_range(0..graph.n_nodes());
    log.meta = BTreeMap::from([
        ("start_state".to_string(), state.to_string()),
        ("n_observations".to_string(), n_steps.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    for t in 1..n_steps {
        let next = *graph
            .neighbors(state)
            .choose(&mut rng)
            .expect("every node has neighbours");
        log.steps.push(StepRecord {
            episode: 0,
            t: (t - 1) as u64,
            state,
            action: None,
            reward: None,
            next_state: next,
            terminal: false,
        });
        state = next;
    }
    log
}

/// Sequence of observed states of a walk (transitions plus the start state).
pub fn walk_states(log: &TrajectoryLog) -> Vec<usize> {
    match log.steps.first() {
        Some(first) => std::iter::once(first.state)
            .chain(log.steps.iter().map(|s| s.next_state))
            .collect(),
        None => log
            .meta
            .get("start_state")
            .and_then(|s| s.parse().ok())
            .into_iter()
            .collect(),
    }
}
