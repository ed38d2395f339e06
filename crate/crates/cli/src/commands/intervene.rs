use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use tdprobe_core::interventions::{
    downstream_corr_effect, effect_table, measure_effect, run_with_plan, EffectMetric, InterventionPlan, OutcomeLog,
    RepresentationSource, ReplaySource, SourceOutput, StackSource,
};
use tdprobe_core::sae::SaeModel;
use tdprobe_core::synth::{Injection, SyntheticStack};

use crate::config::{self, InterveneConfig, SourceConfig};
use crate::error::{CliError, Result};
use crate::io::{as_signal, read_actv, read_sae, write_actv, write_table};
use crate::manifest::Workspace;

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0
        })
        .collect()
}

fn execute(
    source: &dyn RepresentationSource,
    plan: &InterventionPlan,
    models: &BTreeMap<usize, SaeModel>,
) -> Result<(SourceOutput, SourceOutput)> {
    let baseline = run_with_plan(source, &InterventionPlan::default(), models)?;
    let edited = run_with_plan(source, plan, models)?;
    Ok((baseline, edited))
}

pub fn run(out: &Path, config_path: &Path) -> Result<()> {
    let cfg: InterveneConfig = config::load(config_path)?;
    cfg.validate()?;
    let mut ws = Workspace::open(out, "intervene")?;
    let models = cfg
        .saes
        .iter()
        .map(|(&b, p)| Ok((b, read_sae(&mut ws, p)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;

    let (baseline, edited) = match &cfg.source {
        SourceConfig::Stack {
            inputs,
            n_blocks,
            n_out,
            mixing,
            nonlinearity,
            seed,
            injections,
        } => {
            let inputs = read_actv(&mut ws, inputs)?;
            let (n, d) = (inputs.n_steps(), inputs.dim());
            let mut stack = SyntheticStack::random(d, *n_blocks, *n_out, *mixing, *nonlinearity, *seed);
            let mut paths: Vec<&str> = Vec::new();
            let mut columns: Vec<Array1<f64>> = Vec::new();
            for inj in injections {
                if inj.axis >= d {
                    return Err(CliError::Config(format!("injection axis {} >= input dim {d}", inj.axis)));
                }
                let k = match paths.iter().position(|p| *p == inj.signal) {
                    Some(k) => k,
                    None => {
                        let m = read_actv(&mut ws, &inj.signal)?;
                        if m.n_steps() != n {
                            return Err(CliError::Dependency(format!(
                                "{} has {} rows, inputs have {n}",
                                inj.signal,
                                m.n_steps()
                            )));
                        }
                        columns.push(m.values.column(0).to_owned());
                        paths.push(&inj.signal);
                        paths.len() - 1
                    }
                };
                let mut direction = Array1::zeros(d);
                direction[inj.axis] = 1.0;
                stack.injections.push(Injection {
                    block: inj.block,
                    signal: k,
                    direction,
                    gain: inj.gain,
                });
            }
            let signals = if columns.is_empty() {
                Array2::zeros((n, 0))
            } else {
                let views: Vec<_> = columns.iter().map(|c| c.view()).collect();
                tdprobe_core::synth::stack_signals(&views)
            };
            let source = StackSource {
                stack: &stack,
                inputs: inputs.values.view(),
                signals: signals.view(),
            };
            execute(&source, &cfg.plan, &models)?
        }
        SourceConfig::Replay { blocks } => {
            let mats = blocks
                .iter()
                .map(|p| read_actv(&mut ws, p).map(|m| m.values))
                .collect::<Result<Vec<_>>>()?;
            if let Some(m) = mats.iter().find(|m| m.dim() != mats[0].dim()) {
                return Err(CliError::Dependency(format!(
                    "replay blocks differ in shape: {:?} vs {:?}",
                    m.dim(),
                    mats[0].dim()
                )));
            }
            execute(&ReplaySource { blocks: mats }, &cfg.plan, &models)?
        }
    };

    let outcome_metrics: Vec<EffectMetric> =
        cfg.metrics.iter().copied().filter(|m| *m != EffectMetric::DownstreamMaxCorr).collect();
    let mut table = match (&baseline.logits, &edited.logits) {
        (Some(lb), Some(le)) => {
            // Targets are the unedited readout's choices.
            let targets = argmax_rows(lb);
            let b = OutcomeLog::new(lb.clone(), targets.clone())?;
            let e = OutcomeLog::new(le.clone(), targets)?;
            measure_effect(&b, &e, &outcome_metrics, cfg.n_perm, cfg.seed)?
        }
        _ if !outcome_metrics.is_empty() => {
            return Err(CliError::Config(format!(
                "metric {} needs a readout; replay sources have none",
                outcome_metrics[0].name()
            )))
        }
        _ => effect_table(),
    };
    let first_edit = cfg.plan.blocks().into_iter().next().unwrap_or(0);
    if cfg.metrics.contains(&EffectMetric::DownstreamMaxCorr) {
        let path = cfg.corr_signal.as_deref().expect("validated");
        let m = read_actv(&mut ws, path)?;
        let signal = as_signal(&m, path)?;
        let downstream: BTreeMap<usize, SaeModel> =
            models.iter().filter(|(&b, _)| b > first_edit).map(|(&b, m)| (b, m.clone())).collect();
        if downstream.is_empty() {
            return Err(CliError::Config(format!("downstream_max_corr needs an SAE for a block after {first_edit}")));
        }
        let t = downstream_corr_effect(&baseline, &edited, &signal.view(), &downstream, cfg.corr_sign, cfg.n_perm, cfg.seed)?;
        table.rows.extend(t.rows);
    }

    let dir = format!("interventions/{}", cfg.name);
    write_table(&mut ws, &format!("{dir}/effects.csv"), &table)?;
    for (b, h) in edited.blocks.iter().enumerate().skip(first_edit) {
        write_actv(&mut ws, &format!("{dir}/block_{b}.actv"), &h.view(), &cfg.name, b as u32, "intervened", cfg.seed)?;
    }
    ws.save()?;
    println!("{}", table.to_markdown());
    Ok(())
}
