use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use tdprobe_core::agents::{replay_q, run_graph_learners, run_q_agent, GraphLearnerConfig, QAgentConfig};
use tdprobe_core::analysis::{cka, CorrSign, CorrelationReport};
use tdprobe_core::envs::{random_walk, CommunityGraph, GridWorldEnv, N_NODES};
use tdprobe_core::interventions::{
    measure_effect, run_with_plan, EffectMetric, InterventionPlan, OutcomeLog, ReplaySource, StackSource,
};
use tdprobe_core::sae::{train, SaeModel, SaeTrainConfig};
use tdprobe_core::store::{
    load_trajectory, read_activations, write_activations, write_trajectory, ActivationHeader, Dtype,
};
use tdprobe_core::synth::{generate, stack_signals, PlantSpec, SyntheticStack};

fn small_sae(epochs: usize) -> SaeTrainConfig {
    SaeTrainConfig {
        lr: 1e-3,
        epochs,
        batch: 64,
        latent_dim: Some(32),
        ..SaeTrainConfig::default()
    }
}

fn planted_run(seed: u64) -> (Array2<f64>, Array1<f64>) {
    let env = GridWorldEnv::default();
    let run = run_q_agent(&env, &QAgentConfig { seed, ..QAgentConfig::grid_default() }, "g").unwrap();
    let td = run.td_errors.column(0);
    let spec = PlantSpec { d: 16, n_atoms: 32, n_distractors: 8, distractor_sparsity: 2.0, ..PlantSpec::default() };
    (generate(&spec, &[("td", td.view())], td.len()).unwrap().activations, td)
}

#[test]
fn agent_to_report_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let env = GridWorldEnv::default();
    let run = run_q_agent(&env, &QAgentConfig::grid_default(), "grid-0").unwrap();
    let log_path = dir.path().join("grid-0.jsonl");
    write_trajectory(&log_path, &run.log).unwrap();
    let log = load_trajectory(&log_path).unwrap();
    let cfg = QAgentConfig::grid_default();
    let (values, td) = replay_q(&log, 25, 4, cfg.alpha, cfg.gamma, cfg.window).unwrap();
    assert_eq!(values, run.q_values.column(0).to_vec());
    assert_eq!(td, run.td_errors.column(0).to_vec());

    let (acts, td) = planted_run(0);
    let path = dir.path().join("b0.actv");
    let mut header = ActivationHeader::for_matrix(&acts.view(), Dtype::F64);
    header.run_id = "grid-0".into();
    write_activations(&path, &acts.view(), &header).unwrap();
    let back = read_activations(&path).unwrap();
    assert_eq!(back.values, acts);

    let model = train(&back.values.view(), &small_sae(40)).unwrap().model;
    let lat = model.encode_raw(&back.values.view()).unwrap();
    let signal = stack_signals(&[td.view()]);
    let mut report = CorrelationReport::new(0.5, CorrSign::Absolute);
    report.add_block(0, &lat.view(), &[("td", signal.view())], 100, 3).unwrap();
    let entry = &report.entries[0];
    assert!(entry.r > entry.null_q95.unwrap(), "r {} null {:?}", entry.r, entry.null_q95);
    let table = report.to_table();
    assert_eq!(table.rows.len(), 1);
    assert!(table.to_markdown().contains("td"));
}

#[test]
fn pipeline_is_deterministic() {
    let once = || {
        let (acts, _) = planted_run(4);
        train(&acts.view(), &small_sae(5)).unwrap().model
    };
    assert_eq!(once(), once());
}

#[test]
fn saved_sae_reproduces_interventions() {
    let dir = tempfile::tempdir().unwrap();
    let d = 8;
    let inputs = generate(
        &PlantSpec { d, n_atoms: 16, n_distractors: 6, distractor_sparsity: 2.0, ..PlantSpec::default() },
        &[],
        300,
    )
    .unwrap()
    .activations;
    let signals = Array2::zeros((300, 0));
    let stack = SyntheticStack::random(d, 3, 2, 0.2, tdprobe_core::synth::Nonlinearity::Tanh, 1);
    let src = StackSource { stack: &stack, inputs: inputs.view(), signals: signals.view() };
    let base = run_with_plan(&src, &InterventionPlan::default(), &BTreeMap::new()).unwrap();
    let model = train(&base.blocks[1].view(), &small_sae(10)).unwrap().model;
    let path = dir.path().join("sae.bin");
    model.save(&path).unwrap();
    let loaded = SaeModel::load(&path).unwrap();
    assert_eq!(loaded, model);

    let plan = InterventionPlan::lesion(1, 0);
    let a = run_with_plan(&src, &plan, &BTreeMap::from([(1, model)])).unwrap();
    let b = run_with_plan(&src, &plan, &BTreeMap::from([(1, loaded)])).unwrap();
    assert_eq!(a.blocks, b.blocks);
    assert_eq!(a.blocks[0], base.blocks[0]);

    let logits = a.logits.clone().unwrap();
    let targets: Vec<usize> = base
        .logits
        .as_ref()
        .unwrap()
        .rows()
        .into_iter()
        .map(|r| if r[0] >= r[1] { 0 } else { 1 })
        .collect();
    let before = OutcomeLog::new(base.logits.clone().unwrap(), targets.clone()).unwrap();
    let after = OutcomeLog::new(logits, targets).unwrap();
    let table = measure_effect(&before, &after, &[EffectMetric::ActionAccuracy], 200, 0).unwrap();
    assert_eq!(table.rows.len(), 1);

    // Replayed activations accept edits at the final block only.
    let replay = ReplaySource { blocks: base.blocks.clone() };
    let upstream = InterventionPlan::lesion(0, 0);
    let models = BTreeMap::from([(0, train(&base.blocks[0].view(), &small_sae(2)).unwrap().model)]);
    assert!(run_with_plan(&replay, &upstream, &models).is_err());
}

#[test]
fn graph_signals_are_comparable_by_cka() {
    let g = CommunityGraph::build(2);
    let walk = random_walk(&g, 401, 9);
    let s = run_graph_learners(&walk, N_NODES, GraphLearnerConfig::default());
    assert_eq!(s.sr_rows.len(), 400);
    let sr = s.sr_rows.values.clone();
    let tr = s.transition_rows.values.clone();
    let v = cka(&sr.view(), &tr.view(), false).unwrap();
    assert!((0.0..=1.0).contains(&v));
    assert!((cka(&sr.view(), &sr.view(), false).unwrap() - 1.0).abs() < 1e-10);
}
