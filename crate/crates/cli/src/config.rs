//! JSON configuration files. Unknown keys are rejected at parse time and
//! every config is range-checked by `validate` before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tdprobe_core::agents::{Exploration, GraphLearnerConfig, QAgentConfig, Window};
use tdprobe_core::analysis::CorrSign;
use tdprobe_core::behavior_fit::{FitGrid, ModelKind};
use tdprobe_core::interventions::{EffectMetric, InterventionPlan};
use tdprobe_core::synth::{Nonlinearity, PlantSpec};
use tdprobe_core::TaskKind;

use crate::error::{CliError, Result};

/// The published schema; kept in sync with these structs by a test.
pub const SCHEMA: &str = include_str!("../schema/tdprobe.schema.json");

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|msg| CliError::Config(format!("{}:{msg}", path.display())))
}

/// Parses JSON into `T`, reporting `line:column: message` on failure.
pub fn parse<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    serde_json::from_str(text).map_err(|e| format!("{}:{}: {e}", e.line(), e.column()))
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn check_unit(name: &str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = v.is_finite() && v <= 1.0 && if allow_zero { v >= 0.0 } else { v > 0.0 };
    check(ok, || format!("{name} = {v} out of range"))
}

// ---------------------------------------------------------------------------
// run-agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunAgentConfig {
    pub task: TaskKind,
    /// Number of independent runs; run `i` uses seed `seed + i`.
    #[serde(default)]
    pub runs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub episodes: Option<u64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default)]
    pub exploration: Option<Exploration>,
    /// Observations per walk (graph task).
    #[serde(default)]
    pub steps: Option<usize>,
    /// Signal traces keep only this many leading observations.
    #[serde(default)]
    pub analysis_window: Option<usize>,
}

/// Fully defaulted settings for one task.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentPlan {
    Q {
        task: TaskKind,
        runs: usize,
        cfg: QAgentConfig,
        analysis_window: Option<usize>,
    },
    Graph {
        runs: usize,
        seed: u64,
        steps: usize,
        cfg: GraphLearnerConfig,
        analysis_window: Option<usize>,
    },
}

impl RunAgentConfig {
    pub fn for_task(task: TaskKind) -> Self {
        RunAgentConfig {
            task,
            runs: None,
            seed: 0,
            episodes: None,
            alpha: None,
            gamma: None,
            window: None,
            exploration: None,
            steps: None,
            analysis_window: None,
        }
    }

    pub fn resolve(&self) -> Result<AgentPlan> {
        let plan = match self.task {
            TaskKind::Graph => {
                for (field, set) in [
                    ("episodes", self.episodes.is_some()),
                    ("window", self.window.is_some()),
                    ("exploration", self.exploration.is_some()),
                ] {
                    check(!set, || format!("{field} does not apply to the graph task"))?;
                }
                let d = GraphLearnerConfig::default();
                AgentPlan::Graph {
                    runs: self.runs.unwrap_or(20),
                    seed: self.seed,
                    steps: self.steps.unwrap_or(401),
                    cfg: GraphLearnerConfig {
                        gamma: self.gamma.unwrap_or(d.gamma),
                        alpha: self.alpha.unwrap_or(d.alpha),
                    },
                    analysis_window: self.analysis_window,
                }
            }
            task => {
                check(self.steps.is_none(), || "steps only applies to the graph task".into())?;
                let (runs, base, window) = match task {
                    TaskKind::TwoStep => (100, QAgentConfig::two_step_default(), None),
                    _ => (50, QAgentConfig::grid_default(), Some(320)),
                };
                AgentPlan::Q {
                    task,
                    runs: self.runs.unwrap_or(runs),
                    cfg: QAgentConfig {
                        episodes: self.episodes.unwrap_or(base.episodes),
                        alpha: self.alpha.unwrap_or(base.alpha),
                        gamma: self.gamma.unwrap_or(base.gamma),
                        window: self.window.unwrap_or(base.window),
                        exploration: self.exploration.clone().unwrap_or(base.exploration),
                        seed: self.seed,
                    },
                    analysis_window: self.analysis_window.or(window),
                }
            }
        };
        self.validate_plan(&plan)?;
        Ok(plan)
    }

    fn validate_plan(&self, plan: &AgentPlan) -> Result<()> {
        match plan {
            AgentPlan::Q {
                runs,
                cfg,
                analysis_window,
                ..
            } => {
                check(*runs >= 1, || "runs must be at least 1".into())?;
                check(cfg.episodes >= 1, || "episodes must be at least 1".into())?;
                check_unit("alpha", cfg.alpha, false)?;
                check_unit("gamma", cfg.gamma, true)?;
                check(cfg.window != Window::Last(0), || "window must be at least 1".into())?;
                validate_exploration(&cfg.exploration)?;
                check(analysis_window.is_none_or(|w| w >= 1), || "analysis_window must be at least 1".into())
            }
            AgentPlan::Graph {
                runs,
                steps,
                cfg,
                analysis_window,
                ..
            } => {
                check(*runs >= 1, || "runs must be at least 1".into())?;
                check(*steps >= 2, || "steps must be at least 2".into())?;
                check_unit("alpha", cfg.alpha, false)?;
                check(cfg.gamma.is_finite() && (0.0..1.0).contains(&cfg.gamma), || {
                    format!("gamma = {} must lie in [0, 1)", cfg.gamma)
                })?;
                check(analysis_window.is_none_or(|w| w >= 1), || "analysis_window must be at least 1".into())
            }
        }
    }
}

fn validate_exploration(e: &Exploration) -> Result<()> {
    match e {
        Exploration::EpsilonGreedy { epsilon0, .. } => check_unit("epsilon0", *epsilon0, true),
        Exploration::Softmax { beta } => check(beta.is_finite() && *beta >= 0.0, || format!("beta = {beta} must be >= 0")),
        Exploration::RandomThen { then, .. } => validate_exploration(then),
    }
}

// ---------------------------------------------------------------------------
// gen-synth
// ---------------------------------------------------------------------------

/// Signal built by concatenating the first column of each listed trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSource {
    pub name: String,
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_synth_name")]
    pub name: String,
    #[serde(default)]
    pub spec: PlantSpec,
    #[serde(default)]
    pub signals: Vec<SignalSource>,
    /// Required when no signals are planted; otherwise must match them.
    #[serde(default)]
    pub n_steps: Option<usize>,
}

fn default_synth_name() -> String {
    "planted".into()
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    check(ok, || format!("name {name:?} must be non-empty and use only [A-Za-z0-9_-]"))
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        self.spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        check(!self.signals.is_empty() || self.n_steps.is_some_and(|n| n > 0), || {
            "n_steps is required when no signals are planted".into()
        })?;
        for s in &self.signals {
            check_name(&s.name)?;
            check(!s.paths.is_empty(), || format!("signal {} lists no paths", s.name))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// intervene
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionConfig {
    /// Path of an `n x 1` signal container.
    pub signal: String,
    pub block: usize,
    /// Injected along the unit axis `e_axis`.
    #[serde(default)]
    pub axis: usize,
    #[serde(default = "one")]
    pub gain: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Seeded random stack fed with recorded inputs.
    Stack {
        inputs: String,
        n_blocks: usize,
        #[serde(default = "default_n_out")]
        n_out: usize,
        #[serde(default = "default_mixing")]
        mixing: f64,
        #[serde(default = "default_nonlinearity")]
        nonlinearity: Nonlinearity,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        injections: Vec<InjectionConfig>,
    },
    /// Recorded activations, one container per block.
    Replay { blocks: Vec<String> },
}

fn default_n_out() -> usize {
    2
}

fn default_mixing() -> f64 {
    0.3
}

fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::Tanh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterveneConfig {
    #[serde(default = "default_intervention_name")]
    pub name: String,
    pub source: SourceConfig,
    /// SAE file per block index.
    pub saes: BTreeMap<usize, String>,
    pub plan: InterventionPlan,
    #[serde(default)]
    pub metrics: Vec<EffectMetric>,
    /// Signal correlated with downstream latents (`downstream_max_corr`).
    #[serde(default)]
    pub corr_signal: Option<String>,
    #[serde(default = "default_sign")]
    pub corr_sign: CorrSign,
    #[serde(default = "default_n_perm")]
    pub n_perm: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_intervention_name() -> String {
    "intervention".into()
}

fn default_sign() -> CorrSign {
    CorrSign::Absolute
}

fn default_n_perm() -> usize {
    1000
}

impl InterveneConfig {
    pub fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        let n_blocks = match &self.source {
            SourceConfig::Stack {
                n_blocks,
                n_out,
                mixing,
                injections,
                ..
            } => {
                check(*n_blocks >= 1, || "n_blocks must be at least 1".into())?;
                check(*n_out >= 1, || "n_out must be at least 1".into())?;
                check(mixing.is_finite(), || "mixing must be finite".into())?;
                for inj in injections {
                    check(inj.block < *n_blocks, || format!("injection block {} >= n_blocks", inj.block))?;
                    check(inj.gain.is_finite(), || "injection gain must be finite".into())?;
                }
                *n_blocks
            }
            SourceConfig::Replay { blocks } => {
                check(!blocks.is_empty(), || "replay source lists no blocks".into())?;
                blocks.len()
            }
        };
        self.plan.validate(Some(n_blocks)).map_err(|e| CliError::Config(e.to_string()))?;
        for b in self.plan.blocks() {
            check(self.saes.contains_key(&b), || format!("plan edits block {b} but saes has no entry for it"))?;
        }
        for &b in self.saes.keys() {
            check(b < n_blocks, || format!("sae block {b} >= n_blocks {n_blocks}"))?;
        }
        if self.metrics.contains(&EffectMetric::DownstreamMaxCorr) {
            check(self.corr_signal.is_some(), || "downstream_max_corr needs corr_signal".into())?;
        }
        check(self.n_perm >= 1, || "n_perm must be at least 1".into())
    }
}

// ---------------------------------------------------------------------------
// fit-behavior
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorConfig {
    #[serde(default = "default_behavior_name")]
    pub name: String,
    #[serde(default = "default_behavior_task")]
    pub task: TaskKind,
    /// Trajectory files or directories of `*.jsonl` logs.
    pub runs: Vec<String>,
    /// Held-out logs; when present, parameters fitted on `runs` are scored here.
    #[serde(default)]
    pub test_runs: Vec<String>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub skip_episodes: u64,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub grid: FitGrid,
    /// Also fit each run separately and count wins per model.
    #[serde(default)]
    pub per_run: bool,
}

fn default_behavior_name() -> String {
    "behavior".into()
}

fn default_behavior_task() -> TaskKind {
    TaskKind::TwoStep
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        check(self.task != TaskKind::Graph, || "behavior fits need a task with actions".into())?;
        check(!self.runs.is_empty(), || "runs is empty".into())?;
        check(self.models.len() >= 2, || "compare at least two models".into())?;
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        check(seen.len() == self.models.len(), || "models contains duplicates".into())
    }
}
