//! Maximum-likelihood fitting of behavioral models to logged action
//! sequences, with exhaustive grid search over their free parameters.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{log_softmax, Experience, QLearner, QTable, RepetitionModel, Window};
use crate::envs::Environment;
use crate::rng;
use crate::store::{ColumnKind, ReportTable, StepRecord, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    QLearning,
    Myopic,
    Repetition,
    Chance,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::QLearning,
        ModelKind::Myopic,
        ModelKind::Repetition,
        ModelKind::Chance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::QLearning => "q_learning",
            ModelKind::Myopic => "myopic",
            ModelKind::Repetition => "repetition",
            ModelKind::Chance => "chance",
        }
    }

    fn gamma(self) -> Option<f64> {
        match self {
            ModelKind::QLearning => Some(0.99),
            ModelKind::Myopic => Some(0.0),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("trajectory has no scored decisions")]
    Empty,
    #[error("step {0} has no action")]
    MissingAction(usize),
    #[error("step {0} has no reward")]
    MissingReward(usize),
    #[error("step {step}: state/action out of range ({state}, {action})")]
    OutOfRange { step: usize, state: usize, action: usize },
    #[error("invalid fit options: {0}")]
    Options(String),
}

pub type Result<T> = std::result::Result<T, FitError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub params: BTreeMap<String, f64>,
    pub nll: f64,
    pub n_choices: usize,
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitGrid {
    pub alphas: Vec<f64>,
    /// Softmax inverse temperatures.
    pub taus: Vec<f64>,
    /// Pseudo-counts of the repetition model.
    pub smoothings: Vec<f64>,
}

impl Default for FitGrid {
    fn default() -> Self {
        FitGrid {
            alphas: logspace(0.01, 1.0, 25),
            taus: logspace(0.1, 20.0, 25),
            smoothings: logspace(0.01, 10.0, 25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub n_states: usize,
    pub n_actions: usize,
    /// Update window of the value models.
    #[serde(default = "default_window")]
    pub window: Window,
    /// Decisions in episodes before this one update the models but are not
    /// scored (e.g. forced random exploration).
    #[serde(default)]
    pub skip_episodes: u64,
    #[serde(default)]
    pub grid: FitGrid,
}

fn default_window() -> Window {
    Window::Last(1)
}

impl FitOptions {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        FitOptions {
            n_states,
            n_actions,
            window: default_window(),
            skip_episodes: 0,
            grid: FitGrid::default(),
        }
    }

    pub fn for_env<E: Environment>(env: &E) -> Self {
        Self::new(env.n_states(), env.n_actions())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions < 2 {
            return Err(FitError::Options("need at least one state and two actions".into()));
        }
        let g = &self.grid;
        for (name, v) in [("alphas", &g.alphas), ("taus", &g.taus), ("smoothings", &g.smoothings)] {
            if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(FitError::Options(format!("{name} must be non-empty and positive")));
            }
        }
        if g.alphas.iter().any(|&a| a > 1.0) {
            return Err(FitError::Options("alphas must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Parameters of one model evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub alpha: f64,
    pub tau: f64,
    pub smoothing: f64,
}

impl ModelParams {
    fn to_map(self, model: ModelKind) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match model {
            ModelKind::QLearning | ModelKind::Myopic => {
                m.insert("alpha".into(), self.alpha);
                m.insert("tau".into(), self.tau);
                m.insert("gamma".into(), model.gamma().expect("value model"));
            }
            ModelKind::Repetition => {
                m.insert("smoothing".into(), self.smoothing);
                m.insert("tau".into(), self.tau);
            }
            ModelKind::Chance => {}
        }
        m
    }
}

fn decisions<'a>(log: &'a TrajectoryLog, opts: &FitOptions) -> Result<Vec<(&'a StepRecord, usize, bool)>> {
    let mut out = Vec::with_capacity(log.len());
    for (i, step) in log.steps.iter().enumerate() {
        let a = step.action.ok_or(FitError::MissingAction(i))?;
        if step.state >= opts.n_states || step.next_state >= opts.n_states || a >= opts.n_actions {
            return Err(FitError::OutOfRange {
                step: i,
                state: step.state,
                action: a,
            });
        }
        out.push((step, a, step.episode >= opts.skip_episodes));
    }
    if !out.iter().any(|d| d.2) {
        return Err(FitError::Empty);
    }
    Ok(out)
}

/// Negative log-likelihood of the logged actions under `model` with fixed
/// parameters, and the number of scored decisions.
///
/// Models are updated sequentially with the observed actions and outcomes.
/// Value models choose by a softmax over Q-values with inverse temperature
/// `tau`; the repetition model by a softmax over smoothed choice frequencies
/// of the current state.
pub fn evaluate(model: ModelKind, params: ModelParams, logs: &[&TrajectoryLog], opts: &FitOptions) -> Result<(f64, usize)> {
    let mut nll = 0.0;
    let mut n = 0;
    for log in logs {
        let steps = decisions(log, opts)?;
        let scored = steps.iter().filter(|d| d.2).count();
        n += scored;
        match model {
            ModelKind::Chance => {}
            ModelKind::Repetition => {
                let mut rep = RepetitionModel::new(opts.n_states, opts.n_actions, params.smoothing);
                for &(step, a, score) in &steps {
                    if score {
                        nll -= log_softmax(&rep.probs(step.state), params.tau)[a];
                    }
                    rep.observe(step.state, a);
                }
            }
            ModelKind::QLearning | ModelKind::Myopic => {
                let gamma = model.gamma().expect("value model");
                let mut learner = QLearner::new(QTable::new(opts.n_states, opts.n_actions, params.alpha, gamma, opts.window));
                for (i, &(step, a, score)) in steps.iter().enumerate() {
                    if score {
                        let row = learner.q.values.row(step.state).to_vec();
                        nll -= log_softmax(&row, params.tau)[a];
                    }
                    let e = Experience::from_step(step).ok_or(FitError::MissingReward(i))?;
                    learner.observe(e);
                }
            }
        }
    }
    if n == 0 {
        return Err(FitError::Empty);
    }
    if model == ModelKind::Chance {
        nll = n as f64 * (opts.n_actions as f64).ln();
    }
    Ok((nll, n))
}

/// Fits `model` to one or more logs with shared parameters by exhaustive grid
/// search. Ties go to the lexicographically smallest `(alpha, tau)` (or
/// smoothing).
pub fn fit_pooled(model: ModelKind, logs: &[&TrajectoryLog], opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let g = &opts.grid;
    let cells: Vec<ModelParams> = match model {
        ModelKind::QLearning | ModelKind::Myopic => g
            .alphas
            .iter()
            .flat_map(|&alpha| g.taus.iter().map(move |&tau| ModelParams { alpha, tau, smoothing: 0.0 }))
            .collect(),
        ModelKind::Repetition => g
            .smoothings
            .iter()
            .flat_map(|&smoothing| g.taus.iter().map(move |&tau| ModelParams { alpha: 0.0, tau, smoothing }))
            .collect(),
        ModelKind::Chance => vec![ModelParams { alpha: 0.0, tau: 0.0, smoothing: 0.0 }],
    };
    let scores: Vec<(f64, usize)> = cells
        .par_iter()
        .map(|&p| evaluate(model, p, logs, opts))
        .collect::<Result<_>>()?;
    let key = |p: &ModelParams| (p.alpha, p.tau, p.smoothing);
    let best = (0..cells.len())
        .min_by(|&i, &j| {
            scores[i].0.total_cmp(&scores[j].0).then_with(|| {
                let (a, b) = (key(&cells[i]), key(&cells[j]));
                a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
            })
        })
        .expect("grid is non-empty");
    Ok(FitResult {
        model,
        params: cells[best].to_map(model),
        nll: scores[best].0,
        n_choices: scores[best].1,
    })
}

pub fn fit(model: ModelKind, log: &TrajectoryLog, opts: &FitOptions) -> Result<FitResult> {
    fit_pooled(model, &[log], opts)
}

fn params_of(r: &FitResult) -> ModelParams {
    let get = |k: &str| r.params.get(k).copied().unwrap_or(0.0);
    ModelParams {
        alpha: get("alpha"),
        tau: get("tau"),
        smoothing: get("smoothing"),
    }
}

fn format_params(params: &BTreeMap<String, f64>) -> String {
    params
        .iter()
        .map(|(k, v)| format!("{k}={v:.6}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Fits every model to the pooled logs; rows sorted by ascending NLL.
pub fn compare(logs: &[&TrajectoryLog], models: &[ModelKind], opts: &FitOptions) -> Result<(Vec<FitResult>, ReportTable)> {
    if models.len() < 2 {
        return Err(FitError::Options("compare needs at least two models".into()));
    }
    let mut fits = models
        .iter()
        .map(|&m| fit_pooled(m, logs, opts))
        .collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| a.nll.total_cmp(&b.nll).then(a.model.cmp(&b.model)));
    let mut table = ReportTable::new(
        "behavior_fit",
        &[
            ("model", ColumnKind::String),
            ("nll", ColumnKind::Real),
            ("n_choices", ColumnKind::Int),
            ("params", ColumnKind::String),
        ],
    );
    for f in &fits {
        table
            .push_row(vec![
                f.model.name().into(),
                f.nll.into(),
                f.n_choices.into(),
                format_params(&f.params).into(),
            ])
            .expect("row matches schema");
    }
    Ok((fits, table))
}

/// Fits on `train`, then scores the fitted parameters on `test`.
pub fn compare_held_out(
    train: &[&TrajectoryLog],
    test: &[&TrajectoryLog],
    models: &[ModelKind],
    opts: &FitOptions,
) -> Result<ReportTable> {
    let (fits, _) = compare(train, models, opts)?;
    let mut table = ReportTable::new(
        "behavior_fit_held_out",
        &[
            ("model", ColumnKind::String),
            ("train_nll", ColumnKind::Real),
            ("test_nll", ColumnKind::Real),
            ("n_train", ColumnKind::Int),
            ("n_test", ColumnKind::Int),
            ("params", ColumnKind::String),
        ],
    );
    for f in &fits {
        let (test_nll, n_test) = evaluate(f.model, params_of(f), test, opts)?;
        table
            .push_row(vec![
                f.model.name().into(),
                f.nll.into(),
                test_nll.into(),
                f.n_choices.into(),
                n_test.into(),
                format_params(&f.params).into(),
            ])
            .expect("row matches schema");
    }
    Ok(table)
}

/// Simulates an agent that acts randomly for `random_episodes` episodes and
/// afterwards repeats the action it has chosen most often in the current
/// state (ties broken at random).
pub fn simulate_repeater<E: Environment>(
    env: &E,
    episodes: u64,
    random_episodes: u64,
    seed: u64,
    run_id: &str,
) -> std::result::Result<TrajectoryLog, crate::envs::EnvError> {
    let mut rng = rng::seeded(seed);
    let na = env.n_actions();
    let mut counts = Array2::<u64>::zeros((env.n_states(), na));
    let mut log = TrajectoryLog::new(run_id, env.task());
    log.meta.insert("seed".into(), seed.to_string());
    for episode in 0..episodes {
        let mut state = env.reset(episode, &mut rng);
        for t in 0..env.max_steps().unwrap_or(usize::MAX) {
            let action = if episode < random_episodes {
                rng.random_range(0..na)
            } else {
                let row = counts.row(state);
                let top = row.iter().copied().max().unwrap_or(0);
                let ties: Vec<usize> = (0..na).filter(|&a| row[a] == top).collect();
                ties[rng.random_range(0..ties.len())]
            };
            counts[[state, action]] += 1;
            let tr = env.step(state, action, episode)?;
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
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{run_q_agent, softmax, Exploration, QAgentConfig};
    use crate::envs::TwoStepEnv;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn softmax_q_run(seed: u64) -> TrajectoryLog {
        let cfg = QAgentConfig {
            episodes: 30,
            alpha: 0.1,
            gamma: 0.99,
            window: Window::Last(1),
            exploration: Exploration::RandomThen {
                random_episodes: 7,
                then: Box::new(Exploration::Softmax { beta: 5.0 }),
            },
            seed,
        };
        run_q_agent(&TwoStepEnv::default(), &cfg, "sim").unwrap().log
    }

    fn random_run(seed: u64) -> TrajectoryLog {
        simulate_repeater(&TwoStepEnv::default(), 30, 30, seed, "random").unwrap()
    }

    #[test]
    fn logspace_endpoints() {
        let v = logspace(0.1, 20.0, 25);
        assert_eq!(v.len(), 25);
        assert_abs_diff_eq!(v[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(v[24], 20.0, epsilon = 1e-12);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn chance_is_exact() {
        let log = random_run(1);
        let opts = FitOptions::for_env(&TwoStepEnv::default());
        let r = fit(ModelKind::Chance, &log, &opts).unwrap();
        assert_eq!(r.n_choices, 60);
        assert_eq!(r.nll, 60.0 * 2f64.ln());
        assert_abs_diff_eq!(r.nll, 41.5888, epsilon = 1e-4);
    }

    #[test]
    fn random_choices_are_not_fit_much_below_chance() {
        // Fitted gain over chance on random data behaves like half a
        // chi-square with two degrees of freedom; its 95% point is ln 20.
        let opts = FitOptions::for_env(&TwoStepEnv::default());
        let chance = 60.0 * 2f64.ln();
        for m in ModelKind::ALL {
            let big = (0..40)
                .filter(|&seed| chance - fit(m, &random_run(seed), &opts).unwrap().nll > 20f64.ln())
                .count();
            assert!(big <= 4, "{m:?}: {big} of 40 runs fit far below chance");
        }
    }

    #[test]
    fn skipped_episodes_are_not_scored() {
        let log = softmax_q_run(3);
        let mut opts = FitOptions::for_env(&TwoStepEnv::default());
        opts.skip_episodes = 7;
        let r = fit(ModelKind::Chance, &log, &opts).unwrap();
        assert_eq!(r.n_choices, 46);
        opts.skip_episodes = 30;
        assert!(matches!(fit(ModelKind::Chance, &log, &opts), Err(FitError::Empty)));
    }

    #[test]
    fn q_model_wins_on_q_data_and_repetition_on_repeater_data() {
        let env = TwoStepEnv::default();
        let mut opts = FitOptions::for_env(&env);
        opts.skip_episodes = 7;
        let q = softmax_q_run(11);
        let (fits, table) = compare(&[&q], &[ModelKind::Repetition, ModelKind::Myopic, ModelKind::QLearning], &opts).unwrap();
        assert_eq!(fits[0].model, ModelKind::QLearning);
        assert_eq!(table.rows.len(), 3);
        let nlls: Vec<f64> = table.rows.iter().map(|r| r[1].as_f64().unwrap()).collect();
        assert!(nlls.windows(2).all(|w| w[0] <= w[1]));

        let reps: Vec<TrajectoryLog> = (0..10).map(|s| simulate_repeater(&env, 30, 7, s, "rep").unwrap()).collect();
        let refs: Vec<&TrajectoryLog> = reps.iter().collect();
        let (fits, _) = compare(&refs, &ModelKind::ALL, &opts).unwrap();
        assert_eq!(fits[0].model, ModelKind::Repetition);
        assert!(fits[0].nll < fits[1].nll);
    }

    #[test]
    fn fitting_is_deterministic() {
        let log = softmax_q_run(5);
        let opts = FitOptions::for_env(&TwoStepEnv::default());
        let a = fit(ModelKind::QLearning, &log, &opts).unwrap();
        let b = fit(ModelKind::QLearning, &log, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.nll >= 0.0);
    }

    #[test]
    fn held_out_table_has_both_columns() {
        let opts = FitOptions::for_env(&TwoStepEnv::default());
        let (a, b) = (softmax_q_run(1), softmax_q_run(2));
        let t = compare_held_out(&[&a], &[&b], &[ModelKind::QLearning, ModelKind::Chance], &opts).unwrap();
        assert!(t.column_index("train_nll").is_some());
        assert!(t.column_index("test_nll").is_some());
        assert_eq!(t.rows.len(), 2);
    }

    #[test]
    fn input_errors() {
        let opts = FitOptions::for_env(&TwoStepEnv::default());
        let empty = TrajectoryLog::default();
        assert!(matches!(fit(ModelKind::QLearning, &empty, &opts), Err(FitError::Empty)));
        let mut log = random_run(0);
        log.steps[3].action = None;
        assert!(matches!(fit(ModelKind::Chance, &log, &opts), Err(FitError::MissingAction(3))));
        assert!(compare(&[&random_run(0)], &[ModelKind::Chance], &opts).is_err());
    }

    proptest! {
        #[test]
        fn softmax_normalizes(values in prop::collection::vec(-50.0f64..50.0, 2..6), tau in 0.1f64..20.0) {
            let p = softmax(&values, tau);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(values in prop::collection::vec(-50.0f64..50.0, 2..6), tau in 0.1f64..20.0, c in -100.0f64..100.0) {
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let (p, q) = (softmax(&values, tau), softmax(&shifted, tau));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
