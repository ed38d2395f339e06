use std::path::Path;

use ndarray::{Array2, Axis};
use tdprobe_core::analysis::plot::{line_plot, scatter_plot, Series};
use tdprobe_core::analysis::{
    cka as linear_cka, cosine_dissimilarity, decode_bottleneck, last_encounter, mds as smacof, CorrelationReport,
    DecodeConfig, DecodeSample, MdsConfig,
};
use tdprobe_core::envs::CommunityGraph;
use tdprobe_core::rng;
use tdprobe_core::sae::l0_profile;
use tdprobe_core::store::{ColumnKind, ReportTable};
use tdprobe_core::TaskKind;

use crate::error::{CliError, Result};
use crate::io::{as_signal, read_actv, read_sae, read_trajectory, split_arg, write_table};
use crate::manifest::Workspace;
use crate::{CkaArgs, CorrArgs, DecodeArgs, L0Args, MdsArgs};

fn check_rows(what: &str, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(CliError::Dependency(format!("{what} has {found} rows, expected {expected}")))
    }
}

pub fn corr(out: &Path, a: &CorrArgs) -> Result<()> {
    if !(a.smooth_sigma > 0.0 && a.smooth_sigma.is_finite()) {
        return Err(CliError::Config(format!("--smooth-sigma {} must be positive", a.smooth_sigma)));
    }
    let layers = a
        .layers
        .iter()
        .map(|l| {
            let parts = split_arg(l, ':', 3, "BLOCK:SAE:ACTIVATIONS")?;
            let block: usize = parts[0]
                .parse()
                .map_err(|_| CliError::Config(format!("block {:?} is not an integer", parts[0])))?;
            Ok((block, parts[1], parts[2]))
        })
        .collect::<Result<Vec<_>>>()?;
    let signal_specs = a
        .signals
        .iter()
        .map(|s| split_arg(s, '=', 2, "NAME=PATH"))
        .collect::<Result<Vec<_>>>()?;
    let mut ws = Workspace::open(out, "analyze corr")?;
    let mut signals: Vec<(String, Array2<f64>)> = Vec::new();
    for parts in &signal_specs {
        let m = read_actv(&mut ws, parts[1])?;
        signals.push((parts[0].to_string(), as_signal(&m, parts[1])?));
    }
    let mut report = CorrelationReport::new(a.smooth_sigma, a.sign.into());
    for (block, sae, acts) in layers {
        let model = read_sae(&mut ws, sae)?;
        let acts = read_actv(&mut ws, acts)?;
        let latents = model.encode_raw(&acts.values.view())?;
        for (name, sig) in &signals {
            check_rows(&format!("signal {name}"), sig.nrows(), latents.nrows())?;
        }
        let views: Vec<(&str, _)> = signals.iter().map(|(n, s)| (n.as_str(), s.view())).collect();
        report.add_block(block, &latents.view(), &views, a.n_perm, a.seed)?;
    }
    let table = report.to_table();
    crate::io::write_table(&mut ws, &format!("analysis/corr/{}.csv", a.name), &table)?;
    let mut series = Vec::new();
    for name in report.signals() {
        let raw = report.curve(&name).into_iter().map(|(b, r)| (b as f64, r)).collect();
        let smooth = report.smoothed_curve(&name).into_iter().map(|(b, r)| (b as f64, r)).collect();
        series.push(Series::new(name.clone(), raw));
        series.push(Series::new(format!("{name} (smoothed)"), smooth));
    }
    let svg = line_plot("Max correlation by block", "block", "r", &series);
    ws.write(&format!("analysis/corr/{}.svg", a.name), svg.as_bytes())?;
    ws.save()?;
    println!("{}", table.to_markdown());
    Ok(())
}

pub fn cka(out: &Path, a: &CkaArgs) -> Result<()> {
    if a.inputs.len() < 2 {
        return Err(CliError::Config("cka needs at least two --input containers".into()));
    }
    let mut ws = Workspace::open(out, "analyze cka")?;
    let mats = a
        .inputs
        .iter()
        .map(|p| read_actv(&mut ws, p))
        .collect::<Result<Vec<_>>>()?;
    let mut table = ReportTable::new(
        "cka",
        &[("a", ColumnKind::String), ("b", ColumnKind::String), ("cka", ColumnKind::Real)],
    );
    for i in 0..mats.len() {
        for j in (i + 1)..mats.len() {
            check_rows(&a.inputs[j], mats[j].n_steps(), mats[i].n_steps())?;
            let v = linear_cka(&mats[i].values.view(), &mats[j].values.view(), a.no_center)?;
            table
                .push_row(vec![a.inputs[i].clone().into(), a.inputs[j].clone().into(), v.into()])
                .expect("row matches schema");
        }
    }
    write_table(&mut ws, &format!("analysis/cka/{}.csv", a.name), &table)?;
    ws.save()?;
    println!("{}", table.to_markdown());
    Ok(())
}

pub fn mds(out: &Path, a: &MdsArgs) -> Result<()> {
    if a.dims == 0 {
        return Err(CliError::Config("--dims must be positive".into()));
    }
    let mut ws = Workspace::open(out, "analyze mds")?;
    let acts = read_actv(&mut ws, &a.input)?;
    let (rows, labels, groups): (Array2<f64>, Vec<String>, Vec<usize>) = match &a.states {
        Some(p) => {
            let log = read_trajectory(&mut ws, p)?;
            check_rows(&a.input, acts.n_steps(), log.len())?;
            let states: Vec<usize> = log.steps.iter().map(|s| s.state).collect();
            let n_states = states.iter().max().map_or(0, |m| m + 1);
            let last = last_encounter(&states, &acts.values.view(), n_states)?;
            let visited: Vec<(usize, ndarray::Array1<f64>)> =
                last.into_iter().enumerate().filter_map(|(s, r)| r.map(|r| (s, r))).collect();
            let views: Vec<_> = visited.iter().map(|(_, r)| r.view()).collect();
            let rows = ndarray::stack(Axis(0), &views).map_err(|e| CliError::Other(e.to_string()))?;
            let graph = (log.task == Some(TaskKind::Graph)).then(|| CommunityGraph::build(0));
            let groups = visited
                .iter()
                .map(|(s, _)| graph.as_ref().map_or(0, |g| g.community[*s]))
                .collect();
            (rows, visited.iter().map(|(s, _)| format!("s{s}")).collect(), groups)
        }
        None => {
            let n = acts.n_steps();
            (acts.values.clone(), (0..n).map(|i| i.to_string()).collect(), vec![0; n])
        }
    };
    let delta = cosine_dissimilarity(&rows.view())?;
    let cfg = MdsConfig {
        dims: a.dims,
        seed: a.seed,
        classical_init: a.classical_init,
        ..MdsConfig::default()
    };
    let emb = smacof(&delta.view(), &cfg)?;

    let mut cols: Vec<(String, ColumnKind)> = vec![("label".into(), ColumnKind::String), ("group".into(), ColumnKind::Int)];
    cols.extend((0..a.dims).map(|k| (format!("x{k}"), ColumnKind::Real)));
    let col_refs: Vec<(&str, ColumnKind)> = cols.iter().map(|(n, k)| (n.as_str(), *k)).collect();
    let mut coords = ReportTable::new("mds", &col_refs);
    for (i, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone().into(), (groups[i] as i64).into()];
        row.extend(emb.coords.row(i).iter().map(|&v| v.into()));
        coords.push_row(row).expect("row matches schema");
    }
    write_table(&mut ws, &format!("analysis/mds/{}.csv", a.name), &coords)?;
    let mut stress = ReportTable::new("stress", &[("iteration", ColumnKind::Int), ("stress", ColumnKind::Real)]);
    for (i, s) in emb.stress_history.iter().enumerate() {
        stress.push_row(vec![(i as i64).into(), (*s).into()]).expect("row matches schema");
    }
    write_table(&mut ws, &format!("analysis/mds/{}_stress.csv", a.name), &stress)?;
    if a.dims >= 2 {
        let n_groups = groups.iter().max().map_or(1, |g| g + 1);
        let series: Vec<Series> = (0..n_groups)
            .map(|g| {
                let pts = (0..labels.len())
                    .filter(|&i| groups[i] == g)
                    .map(|i| (emb.coords[[i, 0]], emb.coords[[i, 1]]))
                    .collect();
                Series::new(format!("group {g}"), pts)
            })
            .collect();
        let first: Vec<String> = (0..labels.len()).filter(|&i| groups[i] == 0).map(|i| labels[i].clone()).collect();
        let svg = scatter_plot("MDS embedding", &series, Some(&first));
        ws.write(&format!("analysis/mds/{}.svg", a.name), svg.as_bytes())?;
    }
    ws.save()?;
    println!("mds: {} points, stress {:.6} after {} iterations", labels.len(), emb.stress, emb.n_iterations);
    Ok(())
}

pub fn decode(out: &Path, a: &DecodeArgs) -> Result<()> {
    let mut ws = Workspace::open(out, "analyze decode")?;
    let graph = CommunityGraph::build(0);
    let mut samples = Vec::new();
    for (run, spec) in a.runs.iter().enumerate() {
        let parts = split_arg(spec, ':', 2, "TRAJECTORY:FEATURES")?;
        let log = read_trajectory(&mut ws, parts[0])?;
        if log.task != Some(TaskKind::Graph) {
            return Err(CliError::Config(format!("{} is not a graph walk", parts[0])));
        }
        let feats = read_actv(&mut ws, parts[1])?;
        // Features may cover only a leading window of the walk.
        if feats.n_steps() > log.len() {
            check_rows(parts[1], feats.n_steps(), log.len())?;
        }
        for (i, step) in log.steps.iter().take(feats.n_steps()).enumerate() {
            samples.push(DecodeSample {
                run,
                features: feats.values.row(i).to_owned(),
                label: graph.bottleneck[step.state],
            });
        }
    }
    let cfg = DecodeConfig::default();
    let mut conditions = vec![("observed", decode_bottleneck(&samples, &cfg)?)];
    if let Some(seed) = a.shuffle_seed {
        use rand::seq::SliceRandom;
        let mut rng = rng::seeded(seed);
        let mut shuffled = samples.clone();
        for run in 0..a.runs.len() {
            let idx: Vec<usize> = (0..shuffled.len()).filter(|&i| shuffled[i].run == run).collect();
            let mut labels: Vec<bool> = idx.iter().map(|&i| shuffled[i].label).collect();
            labels.shuffle(&mut rng);
            for (&i, l) in idx.iter().zip(labels) {
                shuffled[i].label = l;
            }
        }
        conditions.push(("shuffled", decode_bottleneck(&shuffled, &cfg)?));
    }
    let mut table = ReportTable::new(
        "decode",
        &[
            ("condition", ColumnKind::String),
            ("held_out_run", ColumnKind::Int),
            ("accuracy", ColumnKind::Real),
            ("n", ColumnKind::Int),
        ],
    );
    for (name, res) in &conditions {
        for &(run, acc, n) in &res.per_fold {
            table
                .push_row(vec![(*name).into(), (run as i64).into(), acc.into(), (n as i64).into()])
                .expect("row matches schema");
        }
        table
            .push_row(vec![(*name).into(), (-1i64).into(), res.mean_accuracy.into(), (samples.len() as i64).into()])
            .expect("row matches schema");
    }
    write_table(&mut ws, &format!("analysis/decode/{}.csv", a.name), &table)?;
    ws.save()?;
    for (name, res) in &conditions {
        println!("{name}: mean leave-one-run-out accuracy {:.4}", res.mean_accuracy);
    }
    Ok(())
}

pub fn l0(out: &Path, a: &L0Args) -> Result<()> {
    let mut ws = Workspace::open(out, "analyze l0")?;
    let model = read_sae(&mut ws, &a.sae)?;
    let mut table = ReportTable::new(
        "l0",
        &[("input", ColumnKind::String), ("m", ColumnKind::Int), ("l0", ColumnKind::Int)],
    );
    for p in &a.inputs {
        let acts = read_actv(&mut ws, p)?;
        let l0 = l0_profile(&model, &acts.values.view())?;
        table
            .push_row(vec![p.clone().into(), (model.m() as i64).into(), (l0 as i64).into()])
            .expect("row matches schema");
    }
    write_table(&mut ws, &format!("analysis/l0/{}.csv", a.name), &table)?;
    ws.save()?;
    println!("{}", table.to_markdown());
    Ok(())
}
