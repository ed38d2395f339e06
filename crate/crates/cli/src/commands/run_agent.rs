use std::path::Path;

use ndarray::s;
use rayon::prelude::*;
use tdprobe_core::agents::{run_graph_learners, run_q_agent, QAgentConfig, SignalTrace};
use tdprobe_core::envs::{random_walk, CommunityGraph, Environment, GridWorldEnv, TwoStepEnv, N_NODES};
use tdprobe_core::store::{self, ColumnKind, ReportTable, TrajectoryLog};
use tdprobe_core::TaskKind;

use crate::config::{self, AgentPlan, RunAgentConfig};
use crate::error::{CliError, Result};
use crate::io::{write_actv, write_table};
use crate::manifest::Workspace;

pub fn task_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::TwoStep => "two_step",
        TaskKind::GridWorld => "grid_world",
        TaskKind::Graph => "graph",
    }
}

struct RunOutput {
    run_id: String,
    seed: u64,
    log: TrajectoryLog,
    traces: Vec<SignalTrace>,
    metric: f64,
}

fn last_episode_return(log: &TrajectoryLog) -> f64 {
    let last = log.steps.last().map_or(0, |s| s.episode);
    log.steps
        .iter()
        .filter(|s| s.episode == last)
        .filter_map(|s| s.reward)
        .sum()
}

fn q_run<E: Environment + Sync>(env: &E, task: TaskKind, cfg: &QAgentConfig, seed: u64) -> Result<RunOutput> {
    let run_id = format!("{}-{seed:03}", task_name(task));
    let cfg = QAgentConfig { seed, ..cfg.clone() };
    let run = run_q_agent(env, &cfg, &run_id).map_err(|e| CliError::Config(e.to_string()))?;
    let metric = last_episode_return(&run.log);
    let traces = run.traces().into_iter().cloned().collect();
    Ok(RunOutput {
        run_id,
        seed,
        log: run.log,
        traces,
        metric,
    })
}

pub fn run(out: &Path, config: Option<&Path>, task: Option<TaskKind>, runs: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut cfg = match (config, task) {
        (Some(path), _) => config::load::<RunAgentConfig>(path)?,
        (None, Some(task)) => RunAgentConfig::for_task(task),
        (None, None) => return Err(CliError::Config("either --config or --task is required".into())),
    };
    if runs.is_some() {
        cfg.runs = runs;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let plan = cfg.resolve()?;
    let mut ws = Workspace::open(out, "run-agent")?;

    let (task, window, outputs, metric_name) = match &plan {
        AgentPlan::Q {
            task,
            runs,
            cfg,
            analysis_window,
        } => {
            let seeds: Vec<u64> = (0..*runs as u64).map(|i| cfg.seed + i).collect();
            let outputs: Result<Vec<RunOutput>> = match task {
                TaskKind::TwoStep => {
                    let env = TwoStepEnv::default();
                    seeds.par_iter().map(|&s| q_run(&env, *task, cfg, s)).collect()
                }
                _ => {
                    let env = GridWorldEnv::default();
                    seeds.par_iter().map(|&s| q_run(&env, *task, cfg, s)).collect()
                }
            };
            (*task, *analysis_window, outputs?, "final_return")
        }
        AgentPlan::Graph {
            runs,
            seed,
            steps,
            cfg,
            analysis_window,
        } => {
            let outputs = (0..*runs as u64)
                .into_par_iter()
                .map(|i| {
                    let s = seed + i;
                    let run_id = format!("graph-{s:03}");
                    let graph = CommunityGraph::build(s);
                    let mut log = random_walk(&graph, *steps, s);
                    log.run_id = run_id.clone();
                    let signals = run_graph_learners(&log, N_NODES, *cfg);
                    let metric = signals.prediction_accuracy();
                    let traces = [signals.sr_rows, signals.sr_td, signals.transition_rows, signals.surprise]
                        .into_iter()
                        .map(|mut t| {
                            t.run_id = run_id.clone();
                            t
                        })
                        .collect();
                    RunOutput {
                        run_id,
                        seed: s,
                        log,
                        traces,
                        metric,
                    }
                })
                .collect();
            (TaskKind::Graph, *analysis_window, outputs, "prediction_accuracy")
        }
    };

    let mut summary = ReportTable::new(
        "runs",
        &[
            ("run_id", ColumnKind::String),
            ("seed", ColumnKind::Int),
            ("n_steps", ColumnKind::Int),
            ("n_episodes", ColumnKind::Int),
            (metric_name, ColumnKind::Real),
        ],
    );
    let tn = task_name(task);
    for o in &outputs {
        let rel = format!("runs/{tn}/{}.jsonl", o.run_id);
        store::write_trajectory(ws.prepare(&rel)?, &o.log)?;
        ws.record(&rel)?;
        for trace in &o.traces {
            let n = window.map_or(trace.len(), |w| w.min(trace.len()));
            let rel = format!("signals/{tn}/{}/{}.actv", o.run_id, trace.name);
            let values = trace.values.slice(s![..n, ..]);
            write_actv(&mut ws, &rel, &values, &o.run_id, 0, &trace.name, o.seed)?;
        }
        summary
            .push_row(vec![
                o.run_id.clone().into(),
                (o.seed as i64).into(),
                (o.log.len() as i64).into(),
                (o.log.n_episodes() as i64).into(),
                o.metric.into(),
            ])
            .expect("row matches schema");
    }
    write_table(&mut ws, &format!("runs/{tn}/summary.csv"), &summary)?;
    ws.save()?;
    println!("wrote {} {tn} runs to {}", outputs.len(), out.display());
    Ok(())
}
