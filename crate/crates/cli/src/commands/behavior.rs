use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use tdprobe_core::behavior_fit::{compare, compare_held_out, FitOptions};
use tdprobe_core::envs::{GridWorldEnv, TwoStepEnv};
use tdprobe_core::store::{ColumnKind, ReportTable, TrajectoryLog};
use tdprobe_core::TaskKind;

use crate::config::{self, BehaviorConfig};
use crate::error::{CliError, Result};
use crate::io::{read_trajectory, write_table};
use crate::manifest::Workspace;

/// Loads every listed log; directories contribute their `*.jsonl` files in
/// name order.
fn load_logs(ws: &mut Workspace, specs: &[String], task: TaskKind) -> Result<Vec<TrajectoryLog>> {
    let mut paths = Vec::new();
    for spec in specs {
        let p = ws.resolve(spec);
        if p.is_dir() {
            let entries = std::fs::read_dir(&p).map_err(|e| CliError::io(&p, e))?;
            let mut found: Vec<String> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .map(|f| f.to_string_lossy().into_owned())
                .collect();
            if found.is_empty() {
                return Err(CliError::Dependency(format!("{spec} contains no .jsonl logs")));
            }
            found.sort();
            paths.extend(found);
        } else {
            paths.push(spec.clone());
        }
    }
    paths
        .iter()
        .map(|p| {
            let log = read_trajectory(ws, p)?;
            match log.task {
                Some(t) if t != task => Err(CliError::Dependency(format!("{p} is a {t:?} log, expected {task:?}"))),
                _ => Ok(log),
            }
        })
        .collect()
}

pub fn run(out: &Path, config_path: &Path) -> Result<()> {
    let cfg: BehaviorConfig = config::load(config_path)?;
    cfg.validate()?;
    let mut ws = Workspace::open(out, "fit-behavior")?;
    let train = load_logs(&mut ws, &cfg.runs, cfg.task)?;
    let test = load_logs(&mut ws, &cfg.test_runs, cfg.task)?;

    let base = match cfg.task {
        TaskKind::GridWorld => FitOptions::for_env(&GridWorldEnv::default()),
        _ => FitOptions::for_env(&TwoStepEnv::default()),
    };
    let opts = FitOptions {
        window: cfg.window,
        skip_episodes: cfg.skip_episodes,
        grid: cfg.grid.clone(),
        ..base
    };
    opts.validate()?;

    let refs: Vec<&TrajectoryLog> = train.iter().collect();
    let (fits, table) = compare(&refs, &cfg.models, &opts)?;
    write_table(&mut ws, &format!("behavior/{}.csv", cfg.name), &table)?;
    println!("{}", table.to_markdown());

    if !test.is_empty() {
        let test_refs: Vec<&TrajectoryLog> = test.iter().collect();
        let held_out = compare_held_out(&refs, &test_refs, &cfg.models, &opts)?;
        write_table(&mut ws, &format!("behavior/{}_held_out.csv", cfg.name), &held_out)?;
        println!("{}", held_out.to_markdown());
    }

    if cfg.per_run {
        let winners = train
            .par_iter()
            .map(|log| compare(&[log], &cfg.models, &opts).map(|(f, _)| f[0].model))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut wins: BTreeMap<_, i64> = cfg.models.iter().map(|&m| (m, 0)).collect();
        for w in winners {
            *wins.entry(w).or_default() += 1;
        }
        let mut per_run = ReportTable::new(
            "behavior_per_run",
            &[("model", ColumnKind::String), ("wins", ColumnKind::Int), ("runs", ColumnKind::Int)],
        );
        for (m, w) in wins {
            per_run
                .push_row(vec![m.name().into(), w.into(), (train.len() as i64).into()])
                .expect("row matches schema");
        }
        write_table(&mut ws, &format!("behavior/{}_per_run.csv", cfg.name), &per_run)?;
        println!("{}", per_run.to_markdown());
    }
    ws.save()?;
    println!("best pooled model: {}", fits[0].model.name());
    Ok(())
}
