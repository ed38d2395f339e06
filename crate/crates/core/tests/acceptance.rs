//! Acceptance suite. Prints one verdict line per criterion and exits non-zero
//! if any criterion fails or exceeds its runtime budget.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 3 5`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use tdprobe_core::agents::{
    run_graph_learners, run_q_agent, Experience, Exploration, GraphLearnerConfig, QAgentConfig, QLearner, QTable,
    SrMatrix, Window,
};
use tdprobe_core::analysis::{
    cka, cosine_dissimilarity, decode_bottleneck, max_corr, mds, permutation_null_familywise,
    CorrSign, DecodeConfig, DecodeSample, MdsConfig,
};
use tdprobe_core::behavior_fit::{compare, fit, simulate_repeater, FitOptions, ModelKind};
use tdprobe_core::envs::{random_walk, walk_states, CommunityGraph, Environment, GridWorldEnv, TwoStepEnv, N_NODES};
use tdprobe_core::interventions::{
    apply_edit, downstream_corr_effect, effect_row, run_with_plan, select_control_latent, select_signal_latent,
    EditAction, InterventionPlan, StackSource,
};
use tdprobe_core::rng;
use tdprobe_core::sae::{loss_and_grad, train, SaeModel, SaeTrainConfig, ScalingTransform};
use tdprobe_core::store::{
    decode_activations, encode_activations, load_trajectory, write_trajectory, ActivationHeader, Dtype, StepRecord,
    TaskKind, TrajectoryLog,
};
use tdprobe_core::synth::{generate, stack_signals, standardize, Injection, Nonlinearity, PlantSpec, SyntheticStack};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

type Criterion = (u32, &'static str, Duration, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "q-learning oracle equivalence", Duration::from_secs(10), q_learning_oracle),
        (2, "sr fixed point", Duration::from_secs(30), sr_fixed_point),
        (3, "sae gradient check", Duration::from_secs(5), sae_gradient_check),
        (4, "planted-feature recovery", Duration::from_secs(300), planted_recovery),
        (5, "intervention linearity", Duration::from_secs(1), intervention_linearity),
        (6, "causal propagation on stack", Duration::from_secs(120), causal_propagation),
        (7, "behavioral identifiability", Duration::from_secs(120), behavioral_identifiability),
        (8, "graph prediction ceiling", Duration::from_secs(10), graph_ceiling),
        (9, "cka properties", Duration::from_secs(5), cka_properties),
        (10, "mds community structure", Duration::from_secs(30), mds_communities),
        (11, "bottleneck decoding", Duration::from_secs(30), bottleneck_decoding),
        (12, "format round-trips", Duration::from_secs(10), round_trips),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let ok = v.pass && in_time;
        if !ok {
            failures += 1;
        }
        let timing = if in_time {
            format!("{:.2}s", elapsed.as_secs_f64())
        } else {
            format!("{:.2}s, over budget {}s", elapsed.as_secs_f64(), budget.as_secs())
        };
        println!(
            "[{}] {id:>2} {name}: {} ({timing})",
            if ok { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn gaussian(rows: usize, cols: usize, rng: &mut rng::Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

// 1 ------------------------------------------------------------------------

/// Bellman optimality backup iterated to convergence.
fn value_iteration(env: &GridWorldEnv, gamma: f64) -> Array2<f64> {
    let (ns, na) = (env.n_states(), env.n_actions());
    let goal = env.goal_index();
    let mut q = Array2::<f64>::zeros((ns, na));
    loop {
        let mut change = 0.0f64;
        let prev = q.clone();
        for s in (0..ns).filter(|&s| s != goal) {
            for a in 0..na {
                let tr = env.step(s, a, 0).unwrap();
                let next_best = if tr.done {
                    0.0
                } else {
                    prev.row(tr.next_state).fold(f64::NEG_INFINITY, |m, &v| m.max(v))
                };
                q[[s, a]] = tr.reward + gamma * next_best;
                change = change.max((q[[s, a]] - prev[[s, a]]).abs());
            }
        }
        if change < 1e-14 {
            return q;
        }
    }
}

fn greedy_episode(env: &GridWorldEnv, q: &QTable) -> Option<(usize, f64)> {
    let mut s = env.index(env.start);
    let mut ret = 0.0;
    for n in 1..=100 {
        let tr = env.step(s, q.greedy_action(s), 0).unwrap();
        ret += tr.reward;
        s = tr.next_state;
        if tr.done {
            return Some((n, ret));
        }
    }
    None
}

fn q_learning_oracle() -> Verdict {
    let env = GridWorldEnv::default();
    let mut bad_paths = Vec::new();
    for seed in 0..5 {
        let run = run_q_agent(&env, &QAgentConfig { seed, ..QAgentConfig::grid_default() }, "acc").unwrap();
        let path = greedy_episode(&env, &run.q);
        if path != Some((8, -6.0)) {
            bad_paths.push((seed, path));
        }
    }

    // Uniform exploration with alpha = n(s, a)^-0.7.
    let oracle = value_iteration(&env, 0.99);
    let (ns, na) = (env.n_states(), env.n_actions());
    let mut learner = QLearner::new(QTable::new(ns, na, 1.0, 0.99, Window::Last(1)));
    let mut visits = Array2::<f64>::zeros((ns, na));
    let mut rng = rng::seeded(11);
    let mut episode = 0;
    let mut s = env.reset(episode, &mut rng);
    for _ in 0..200_000 {
        let a = rng.random_range(0..na);
        let tr = env.step(s, a, episode).unwrap();
        visits[[s, a]] += 1.0;
        learner.q.alpha = visits[[s, a]].powf(-0.7);
        learner.observe(Experience {
            state: s,
            action: a,
            reward: tr.reward,
            next_state: tr.next_state,
            terminal: tr.done,
        });
        s = tr.next_state;
        if tr.done {
            episode += 1;
            s = env.reset(episode, &mut rng);
        }
    }
    let err = max_abs_diff(&learner.q.values, &oracle);
    verdict(
        bad_paths.is_empty() && err < 1e-3,
        format!("greedy path 8 steps / return -6 on 5/5 seeds: {}; max |Q - Q*| = {err:.2e}", bad_paths.is_empty()),
    )
}

// 2 ------------------------------------------------------------------------

/// `(I - gamma T)^-1` as the truncated Neumann series `sum_k (gamma T)^k`.
fn neumann_sr(t: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let n = t.nrows();
    let mut term = Array2::<f64>::eye(n);
    let mut total = term.clone();
    for _ in 0..2000 {
        term = term.dot(t) * gamma;
        total += &term;
        if frobenius(&term) < 1e-16 {
            break;
        }
    }
    total
}

fn walk_matrix(g: &CommunityGraph) -> Array2<f64> {
    let rows = g.walk_matrix();
    Array2::from_shape_fn((N_NODES, N_NODES), |(i, j)| rows[i][j])
}

fn sr_fixed_point() -> Verdict {
    let g = CommunityGraph::build(0);
    let oracle = neumann_sr(&walk_matrix(&g), 0.9);
    let walk = random_walk(&g, 200_001, 21);
    let mut sr = SrMatrix::new(N_NODES, 0.9, 1.0);
    let mut visits = [0.0f64; N_NODES];
    for step in &walk.steps {
        visits[step.state] += 1.0;
        sr.alpha = visits[step.state].powf(-0.7);
        sr.sr_td_step(step.state, step.next_state);
    }
    let err = frobenius(&(&sr.m - &oracle)) / frobenius(&oracle);
    verdict(err <= 0.05, format!("relative Frobenius error {err:.4} (bound 0.05)"))
}

// 3 ------------------------------------------------------------------------

/// Sample-by-sample loss with explicit loops.
fn loop_loss(model: &SaeModel, h: &Array2<f64>, beta: f64) -> f64 {
    let (m, d) = model.w_enc.dim();
    let mut total = 0.0;
    for x in h.rows() {
        let mut act = vec![0.0; m];
        for (j, a) in act.iter_mut().enumerate() {
            let mut z = model.b_enc[j];
            for i in 0..d {
                z += model.w_enc[[j, i]] * x[i];
            }
            *a = z.max(0.0);
        }
        let mut sq = 0.0;
        for i in 0..d {
            let mut y = model.b_dec[i];
            for (j, a) in act.iter().enumerate() {
                y += model.w_dec[[i, j]] * a;
            }
            sq += (y - x[i]).powi(2);
        }
        let l1: f64 = act.iter().sum();
        total += sq + beta * l1 * l1;
    }
    total / h.nrows() as f64
}

fn relative_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn sae_gradient_check() -> Verdict {
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let mut rng = rng::seeded(1000 + case);
        let d = rng.random_range(2..=8);
        let m = rng.random_range(2..=8);
        let n = rng.random_range(2..=6);
        let model = SaeModel {
            w_enc: gaussian(m, d, &mut rng),
            b_enc: Array1::from_shape_fn(m, |_| rng.random_range(-0.5..0.5)),
            w_dec: gaussian(d, m, &mut rng),
            b_dec: Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5)),
            scale: ScalingTransform::identity(d),
        };
        let h = gaussian(n, d, &mut rng);
        let beta = rng.random_range(0.0..1.0);
        let (_, g) = loss_and_grad(&model, &h.view(), beta, false);
        let eps = 1e-5;
        let central = |f: &dyn Fn(&mut SaeModel, f64)| {
            let mut plus = model.clone();
            f(&mut plus, eps);
            let mut minus = model.clone();
            f(&mut minus, -eps);
            (loop_loss(&plus, &h, beta) - loop_loss(&minus, &h, beta)) / (2.0 * eps)
        };
        let mut fd = Vec::new();
        for j in 0..m {
            for i in 0..d {
                fd.push(central(&|p: &mut SaeModel, e| p.w_enc[[j, i]] += e));
            }
        }
        worst = worst.max(relative_gap(&g.w_enc.iter().copied().collect::<Vec<_>>(), &fd));
        let fd: Vec<f64> = (0..m).map(|j| central(&|p: &mut SaeModel, e| p.b_enc[j] += e)).collect();
        worst = worst.max(relative_gap(&g.b_enc.to_vec(), &fd));
        let mut fd = Vec::new();
        for i in 0..d {
            for j in 0..m {
                fd.push(central(&|p: &mut SaeModel, e| p.w_dec[[i, j]] += e));
            }
        }
        worst = worst.max(relative_gap(&g.w_dec.iter().copied().collect::<Vec<_>>(), &fd));
        let fd: Vec<f64> = (0..d).map(|i| central(&|p: &mut SaeModel, e| p.b_dec[i] += e)).collect();
        worst = worst.max(relative_gap(&g.b_dec.to_vec(), &fd));
    }
    verdict(worst <= 1e-5, format!("worst per-tensor relative error {worst:.2e} over 20 instances"))
}

// 4 ------------------------------------------------------------------------

fn planted_recovery() -> Verdict {
    let env = GridWorldEnv::default();
    let (mut td, mut q, mut my) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..10 {
        let run = run_q_agent(&env, &QAgentConfig { seed, ..QAgentConfig::grid_default() }, "acc").unwrap();
        td.extend(run.td_errors.column(0));
        q.extend(run.q_values.column(0));
        my.extend(run.myopic_values.column(0));
    }
    let (td, q, my) = (Array1::from(td), Array1::from(q), Array1::from(my));
    let n = td.len();
    let spec = PlantSpec::default();
    let data = generate(&spec, &[("td", td.view()), ("q", q.view()), ("myopic", my.view())], n).unwrap();
    let cfg = SaeTrainConfig {
        lr: 1e-3,
        epochs: 30,
        batch: 256,
        beta: 1e-5,
        ..SaeTrainConfig::for_task(TaskKind::GridWorld, spec.d)
    };
    let signals = stack_signals(&[td.view(), q.view(), my.view()]);
    let model = train(&data.activations.view(), &cfg).unwrap().model;
    let lat = model.encode_raw(&data.activations.view()).unwrap();
    let rec = max_corr(&lat.view(), &signals.view(), CorrSign::Absolute).unwrap();
    let rs: Vec<f64> = rec.per_column.iter().map(|c| c.map_or(0.0, |(_, r)| r.abs())).collect();

    let control = generate(&PlantSpec { seed: spec.seed + 1, ..spec }, &[], n).unwrap();
    let cmodel = train(&control.activations.view(), &cfg).unwrap().model;
    let clat = cmodel.encode_raw(&control.activations.view()).unwrap();
    let observed = max_corr(&clat.view(), &signals.view(), CorrSign::Absolute)
        .unwrap()
        .per_column
        .iter()
        .map(|c| c.map_or(0.0, |(_, r)| r.abs()))
        .fold(0.0, f64::max);
    let bound = permutation_null_familywise(&clat.view(), &signals.view(), CorrSign::Absolute, 1000, 7)
        .unwrap()
        .q95();
    verdict(
        rs.iter().all(|&r| r >= 0.8) && observed <= bound,
        format!(
            "|r| td {:.3} q {:.3} myopic {:.3} (>= 0.8); control {observed:.4} vs null q95 {bound:.4} ({n} steps)",
            rs[0], rs[1], rs[2]
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn intervention_linearity() -> Verdict {
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = rng::seeded(5000 + case);
        let d = rng.random_range(2..=16);
        let m = rng.random_range(2..=32);
        let n = rng.random_range(1..=8);
        let h = gaussian(n, d, &mut rng) * rng.random_range(0.1..10.0);
        let scale = ScalingTransform::fit(&h.view()).unwrap();
        let model = SaeModel {
            w_enc: gaussian(m, d, &mut rng),
            b_enc: Array1::from_shape_fn(m, |_| rng.random_range(-0.5..0.5)),
            w_dec: gaussian(d, m, &mut rng),
            b_dec: Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5)),
            scale,
        };
        let j = rng.random_range(0..m);
        let factor = (d as f64).sqrt() / scale.mean_row_norm;

        // Closed forms written against raw parameters.
        let hs = &h * factor;
        let a = (hs.dot(&model.w_enc.t()) + &model.b_enc).mapv(|v| v.max(0.0));
        let recon = (a.dot(&model.w_dec.t()) + &model.b_dec) / factor;
        let col = model.w_dec.column(j);
        let mut lesion = recon.clone();
        let mut clamp = recon.clone();
        for r in 0..n {
            for i in 0..d {
                lesion[[r, i]] -= a[[r, j]] * col[i] / factor;
                clamp[[r, i]] += (-10.0 - a[[r, j]]) * col[i] / factor;
            }
        }
        for (action, expected) in [(EditAction::Lesion, lesion), (EditAction::Clamp { value: -10.0 }, clamp)] {
            let got = apply_edit(&model, &h.view(), (j, action), true).unwrap();
            let rel = frobenius(&(&got - &expected)) / frobenius(&expected).max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
    }
    verdict(worst <= 1e-9, format!("worst relative deviation {worst:.2e} over 100 cases x 2 edits"))
}

// 6 ------------------------------------------------------------------------

fn causal_propagation() -> Verdict {
    let env = GridWorldEnv::default();
    let mut td = Vec::new();
    for seed in 0..2 {
        let run = run_q_agent(&env, &QAgentConfig { seed, ..QAgentConfig::grid_default() }, "acc").unwrap();
        td.extend(run.td_errors.column(0));
    }
    let td = standardize("td", &Array1::from(td).view()).unwrap();
    let n = td.len();
    let d = 32;
    let spec = PlantSpec {
        d,
        n_atoms: 2 * d,
        n_distractors: 20,
        distractor_sparsity: 3.0,
        noise_std: 0.05,
        ..PlantSpec::default()
    };
    let inputs = generate(&spec, &[], n).unwrap().activations;
    let signals = stack_signals(&[td.view()]);
    let mut notes = Vec::new();
    let mut pass = true;
    for seed in 0..3 {
        let mut stack = SyntheticStack::random(d, 4, 2, 0.3, Nonlinearity::Tanh, seed);
        let mut direction = Array1::zeros(d);
        direction[0] = 1.0;
        stack.injections.push(Injection { block: 1, signal: 0, direction, gain: 1.0 });
        let src = StackSource { stack: &stack, inputs: inputs.view(), signals: signals.view() };
        let base = run_with_plan(&src, &InterventionPlan::default(), &BTreeMap::new()).unwrap();
        let cfg = SaeTrainConfig {
            lr: 1e-3,
            epochs: 800,
            batch: 256,
            beta: 10.0,
            latent_dim: Some(2 * d),
            seed,
            ..SaeTrainConfig::default()
        };
        let models: BTreeMap<usize, SaeModel> =
            (1..4).map(|b| (b, train(&base.blocks[b].view(), &cfg).unwrap().model)).collect();
        let downstream: BTreeMap<usize, SaeModel> =
            models.iter().filter(|(b, _)| **b > 1).map(|(b, m)| (*b, m.clone())).collect();
        let lat = models[&1].encode_raw(&base.blocks[1].view()).unwrap();
        let Some((best, r_best)) = select_signal_latent(&lat.view(), &signals.view(), 0.75).unwrap() else {
            pass = false;
            notes.push(format!("seed {seed}: no latent with |r| >= 0.75"));
            continue;
        };
        let (control, _) = select_control_latent(&lat.view(), &signals.view()).unwrap();
        let rel = |latent: usize| -> Vec<f64> {
            let out = run_with_plan(&src, &InterventionPlan::lesion(1, latent), &models).unwrap();
            let table =
                downstream_corr_effect(&base, &out, &signals.view(), &downstream, CorrSign::Absolute, 200, seed)
                    .unwrap();
            [2i64, 3]
                .iter()
                .map(|&b| {
                    let (before, after, _, _) = effect_row(&table, "downstream_max_corr", b).unwrap();
                    (after - before) / before
                })
                .collect()
        };
        let best_rel = rel(best);
        let ctrl_rel = rel(control);
        let ok = best_rel.iter().all(|&v| v <= -0.5) && ctrl_rel.iter().all(|&v| v.abs() < 0.1);
        pass &= ok;
        notes.push(format!(
            "seed {seed}: |r| {:.2}, lesion {:+.2}/{:+.2}, control {:+.3}/{:+.3}",
            r_best.abs(),
            best_rel[0],
            best_rel[1],
            ctrl_rel[0],
            ctrl_rel[1]
        ));
    }
    verdict(pass, format!("relative change at blocks 2/3; {}", notes.join("; ")))
}

// 7 ------------------------------------------------------------------------

fn behavioral_identifiability() -> Verdict {
    let env = TwoStepEnv::default();
    let mut opts = FitOptions::for_env(&env);
    opts.skip_episodes = 7;
    let cfg = |seed| QAgentConfig {
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
    let mut wins = 0;
    for seed in 0..100 {
        let log = run_q_agent(&env, &cfg(seed), "q").unwrap().log;
        let nll = |m| fit(m, &log, &opts).unwrap().nll;
        let q = nll(ModelKind::QLearning);
        if q < nll(ModelKind::Myopic) && q < nll(ModelKind::Repetition) {
            wins += 1;
        }
    }
    let repeaters: Vec<TrajectoryLog> = (0..100).map(|s| simulate_repeater(&env, 30, 7, s, "rep").unwrap()).collect();
    let refs: Vec<&TrajectoryLog> = repeaters.iter().collect();
    let (results, _) = compare(&refs, &[ModelKind::QLearning, ModelKind::Myopic, ModelKind::Repetition], &opts).unwrap();
    let pooled = |m| results.iter().find(|r| r.model == m).unwrap().nll;
    let (rep, q, my) = (pooled(ModelKind::Repetition), pooled(ModelKind::QLearning), pooled(ModelKind::Myopic));
    verdict(
        wins >= 95 && rep < q && rep < my,
        format!("Q wins {wins}/100 (>= 95); repeater data pooled NLL repetition {rep:.1} < Q {q:.1}, myopic {my:.1}"),
    )
}

// 8 ------------------------------------------------------------------------

fn graph_ceiling() -> Verdict {
    let g = CommunityGraph::build(0);
    let (mut hits, mut total) = (0.0, 0.0);
    for seed in 0..20 {
        let walk = random_walk(&g, 401, 100 + seed);
        let signals = run_graph_learners(&walk, N_NODES, GraphLearnerConfig::default());
        hits += signals.prediction_accuracy() * signals.predictions.len() as f64;
        total += signals.predictions.len() as f64;
    }
    let acc = hits / total;
    verdict((0.22..=0.28).contains(&acc), format!("accuracy {acc:.4} over {total} predictions"))
}

// 9 ------------------------------------------------------------------------

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn random_orthogonal(n: usize, rng: &mut rng::Rng) -> Array2<f64> {
    let mut q = gaussian(n, n, rng);
    for j in 0..n {
        for k in 0..j {
            let proj = q.column(j).dot(&q.column(k));
            let qk = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &qk);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

fn cka_properties() -> Verdict {
    let mut rng = rng::seeded(9);
    let (mut self_err, mut inv_err) = (0.0f64, 0.0f64);
    let mut out_of_range = 0;
    for _ in 0..100 {
        let n = rng.random_range(5..40);
        let (p, r) = (rng.random_range(1..12), rng.random_range(1..12));
        let x = gaussian(n, p, &mut rng);
        let y = gaussian(n, r, &mut rng);
        self_err = self_err.max((cka(&x.view(), &x.view(), false).unwrap() - 1.0).abs());
        let base = cka(&x.view(), &y.view(), false).unwrap();
        if !(0.0..=1.0).contains(&base) {
            out_of_range += 1;
        }
        let rotated = x.dot(&random_orthogonal(p, &mut rng));
        let mut c = rng.random_range(0.01..100.0);
        if rng.random_bool(0.5) {
            c = -c;
        }
        let scaled = &y * c;
        inv_err = inv_err.max((cka(&rotated.view(), &scaled.view(), false).unwrap() - base).abs());
    }
    verdict(
        self_err <= 1e-10 && inv_err <= 1e-9 && out_of_range == 0,
        format!("self {self_err:.1e}, invariance {inv_err:.1e}, out of [0,1] {out_of_range}/100"),
    )
}

// 10 -----------------------------------------------------------------------

fn mds_communities() -> Verdict {
    let g = CommunityGraph::build(0);
    let sr = neumann_sr(&walk_matrix(&g), 0.9);
    let delta = cosine_dissimilarity(&sr.view()).unwrap();
    let mut separated = 0;
    let mut monotone = true;
    for seed in 0..20 {
        let e = mds(&delta.view(), &MdsConfig { seed, ..MdsConfig::default() }).unwrap();
        monotone &= e.stress_history.windows(2).all(|w| w[1] <= w[0]);
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 0..N_NODES {
            for j in (i + 1)..N_NODES {
                let diff = &e.coords.row(i) - &e.coords.row(j);
                let dist = diff.dot(&diff).sqrt();
                if g.community[i] == g.community[j] {
                    intra.push(dist);
                } else {
                    inter.push(dist);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        if mean(&intra) < mean(&inter) {
            separated += 1;
        }
    }
    // Monotonicity on unstructured inputs as well.
    let mut rng = rng::seeded(10);
    for seed in 0..20 {
        let pts = gaussian(12, 5, &mut rng);
        let d = Array2::from_shape_fn((12, 12), |(i, j)| {
            let diff = &pts.row(i) - &pts.row(j);
            diff.dot(&diff).sqrt()
        });
        let e = mds(&d.view(), &MdsConfig { seed, ..MdsConfig::default() }).unwrap();
        monotone &= e.stress_history.windows(2).all(|w| w[1] <= w[0]);
    }
    verdict(
        monotone && separated == 20,
        format!("stress non-increasing: {monotone}; intra < inter in {separated}/20 runs"),
    )
}

// 11 -----------------------------------------------------------------------

fn bottleneck_decoding() -> Verdict {
    let g = CommunityGraph::build(0);
    let sr = neumann_sr(&walk_matrix(&g), 0.99);
    let mut samples = Vec::new();
    for run in 0..20 {
        let walk = random_walk(&g, 401, 300 + run as u64);
        for s in walk_states(&walk) {
            samples.push(DecodeSample { run, features: sr.row(s).to_owned(), label: g.bottleneck[s] });
        }
    }
    let cfg = DecodeConfig::default();
    let real = decode_bottleneck(&samples, &cfg).unwrap().mean_accuracy;

    let mut rng = rng::seeded(11);
    let mut shuffled = samples.clone();
    for run in 0..20 {
        let idx: Vec<usize> = (0..shuffled.len()).filter(|&i| shuffled[i].run == run).collect();
        let mut labels: Vec<bool> = idx.iter().map(|&i| shuffled[i].label).collect();
        labels.shuffle(&mut rng);
        for (&i, l) in idx.iter().zip(labels) {
            shuffled[i].label = l;
        }
    }
    let control = decode_bottleneck(&shuffled, &cfg).unwrap().mean_accuracy;
    // Chance: the better of the two constant guesses, +/- 3 binomial s.e.
    let n = samples.len() as f64;
    let base = samples.iter().filter(|s| s.label).count() as f64 / n;
    let majority = base.max(1.0 - base);
    let se = (majority * (1.0 - majority) / n).sqrt();
    let (lo, hi) = (1.0 - majority - 3.0 * se, majority + 3.0 * se);
    verdict(
        real >= 0.9 && (lo..=hi).contains(&control),
        format!("accuracy {real:.3} (>= 0.9); shuffled {control:.3} in chance band [{lo:.3}, {hi:.3}]"),
    )
}

// 12 -----------------------------------------------------------------------

/// Arbitrary finite bit patterns; for `f32` containers, values representable in `f32`.
fn random_matrix_bits(rng: &mut rng::Rng, dtype: Dtype) -> Array2<f64> {
    let (r, c) = (rng.random_range(1..20), rng.random_range(1..20));
    Array2::from_shape_fn((r, c), |_| loop {
        let v = match dtype {
            Dtype::F64 => f64::from_bits(rng.random()),
            Dtype::F32 => f32::from_bits(rng.random()) as f64,
        };
        if v.is_finite() {
            break v;
        }
    })
}

fn random_log(rng: &mut rng::Rng, id: usize) -> TrajectoryLog {
    let task = [TaskKind::TwoStep, TaskKind::GridWorld, TaskKind::Graph][rng.random_range(0..3)];
    let mut log = TrajectoryLog::new(format!("run-{id}"), task);
    for k in 0..rng.random_range(0..4) {
        log.meta.insert(format!("k{k}"), format!("v{}", rng.random::<u32>()));
    }
    let mut episode = 0;
    let mut t = 0;
    for _ in 0..rng.random_range(0..30) {
        let terminal = task != TaskKind::Graph && rng.random_bool(0.2);
        let reward = loop {
            let v = f64::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        };
        log.steps.push(StepRecord {
            episode,
            t,
            state: rng.random_range(0..25),
            action: task.has_actions().then(|| rng.random_range(0..4)),
            reward: task.has_rewards().then_some(reward),
            next_state: rng.random_range(0..25),
            terminal,
        });
        t += 1;
        if terminal {
            episode += 1;
            t = 0;
        }
    }
    log
}

fn round_trips() -> Verdict {
    let mut rng = rng::seeded(12);
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for i in 0..1000 {
        let dtype = if rng.random_bool(0.5) { Dtype::F64 } else { Dtype::F32 };
        let values = random_matrix_bits(&mut rng, dtype);
        let mut header = ActivationHeader::for_matrix(&values.view(), dtype);
        header.run_id = format!("run-{i}");
        header.block = rng.random_range(0..40);
        header.seed = rng.random();
        let ok = match encode_activations(&values.view(), &header).and_then(|b| decode_activations(&b)) {
            Ok(back) => {
                back.header == header
                    && back.values.dim() == values.dim()
                    && back.values.iter().zip(values.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
            }
            Err(_) => false,
        };
        if !ok {
            failures.push(format!("actv #{i}"));
        }

        let log = random_log(&mut rng, i);
        let path = dir.path().join(format!("log-{i}.jsonl"));
        write_trajectory(&path, &log).unwrap();
        let back = load_trajectory(&path).unwrap();
        if back != log || !bit_equal_rewards(&log, &back) {
            failures.push(format!("trajectory #{i}"));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "1000 activation containers and 1000 trajectory logs bit-exact".to_string()
        } else {
            format!("mismatches: {}", failures.join(", "))
        },
    )
}

fn bit_equal_rewards(a: &TrajectoryLog, b: &TrajectoryLog) -> bool {
    a.steps
        .iter()
        .zip(&b.steps)
        .all(|(x, y)| x.reward.map(f64::to_bits) == y.reward.map(f64::to_bits))
}
