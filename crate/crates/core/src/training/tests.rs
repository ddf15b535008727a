use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{finite_diff_check, Graph, Tensor};
use crate::tokenizers::{ActionDim, Codebook, Role, Special, TokenSample, VocabLayout};
use crate::worldsim::Action;

const N_IMG: usize = 16;
const TOK: usize = 4;

fn layout() -> VocabLayout {
    VocabLayout::new(64, N_IMG)
}

fn codebook(seed: u64) -> Codebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..N_IMG * 12).map(|_| rng.random_range(0..=255u32) as f32 / 255.0).collect();
    Codebook { n: N_IMG, patch_h: 2, patch_w: 2, entries }
}

fn small_model(layout: &VocabLayout) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        context_len: 128,
        vocab_size: layout.vocab_size(),
        save_layer_count: 2,
        ..Default::default()
    }
}

fn fake_data(n_traj: usize, seed: u64) -> Vec<EncodedTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_traj)
        .map(|id| {
            let steps = rng.random_range(3..6);
            let code = |rng: &mut ChaCha8Rng| (0..TOK).map(|_| rng.random_range(0..N_IMG as u32)).collect::<Vec<_>>();
            EncodedTrajectory {
                id,
                pose: [13 + rng.random_range(0..64), 13 + 64 + rng.random_range(0..64), 13 + 128],
                start: code(&mut rng),
                goal: code(&mut rng),
                frames: (0..steps).map(|_| code(&mut rng)).collect(),
                actions: (0..steps)
                    .map(|_| Action::Move {
                        dx: rng.random_range(0.0..0.99),
                        dy: rng.random_range(-0.3..0.3),
                        dyaw: rng.random_range(-0.9..0.9),
                    })
                    .collect(),
            }
        })
        .collect()
}

fn spec(plan: PlanLoss, world: WorldLoss, gate: f64) -> LossSpec {
    LossSpec { plan, world, eps: 0.1, stop_gate_weight: gate }
}

fn eval_loss(
    build: impl FnOnce(&mut Graph<f64>, crate::numerics::Var) -> Result<crate::numerics::Var, TrainError>,
    rows: usize,
    vocab: usize,
    logits: Vec<f64>,
) -> f64 {
    let mut g = Graph::<f64>::new();
    let l = g.leaf(Tensor::new(vec![rows, vocab], logits).unwrap());
    let out = build(&mut g, l).unwrap();
    g.value(out).data[0]
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    z.iter().map(|v| v - lse).collect()
}

fn action_targets(l: &VocabLayout) -> Vec<u32> {
    vec![
        l.action_token(ActionDim::X, false, 42),
        l.action_token(ActionDim::Y, true, 3),
        l.action_token(ActionDim::Yaw, false, 0),
    ]
}

#[test]
fn plan_loss_zero_at_point_mass() {
    let l = layout();
    let v = l.vocab_size();
    let tg = action_targets(&l);
    let mut z = vec![0.0; 3 * v];
    for (i, &t) in tg.iter().enumerate() {
        z[i * v + t as usize] = 60.0;
    }
    let loss = eval_loss(|g, x| loss_plan(g, x, &tg, &l), 3, v, z);
    assert!(loss.abs() < 1e-6, "{loss}");
}

#[test]
fn plan_loss_uniform_is_ln_200() {
    let l = layout();
    let v = l.vocab_size();
    let tg = action_targets(&l);
    let loss = eval_loss(|g, x| loss_plan(g, x, &tg, &l), 3, v, vec![0.25; 3 * v]);
    assert!((loss - 200f64.ln()).abs() < 1e-4, "{loss}");
    assert!((200f64.ln() - 5.298).abs() < 1e-3);
}

#[test]
fn plan_loss_ignores_other_dimension_sets() {
    let l = layout();
    let v = l.vocab_size();
    let tg = action_targets(&l);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut z: Vec<f64> = (0..3 * v).map(|_| rng.random_range(-2.0..2.0)).collect();
    // huge mass on the y set in the x row and on STOP everywhere
    let ry = l.action_range(ActionDim::Y);
    for t in ry.clone() {
        z[t as usize] = 30.0;
    }
    for i in 0..3 {
        z[i * v + Special::Stop.id() as usize] = 40.0;
    }
    let mut brute = 0.0;
    for (i, dim) in ActionDim::ALL.iter().enumerate() {
        let r = l.action_range(*dim);
        let sub: Vec<f64> = (r.start..r.end).map(|t| z[i * v + t as usize]).collect();
        brute -= log_softmax(&sub)[(tg[i] - r.start) as usize];
    }
    brute /= 3.0;
    let loss = eval_loss(|g, x| loss_plan(g, x, &tg, &l), 3, v, z);
    assert!((loss - brute).abs() < 1e-10, "{loss} vs {brute}");
}

#[test]
fn plan_loss_stop_is_full_cross_entropy() {
    let l = layout();
    let v = l.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z: Vec<f64> = (0..v).map(|_| rng.random_range(-3.0..3.0)).collect();
    let stop = Special::Stop.id();
    let expect = -log_softmax(&z)[stop as usize];
    let loss = eval_loss(|g, x| loss_plan(g, x, &[stop], &l), 1, v, z);
    assert!((loss - expect).abs() < 1e-10);
}

#[test]
fn plan_loss_rejects_misplaced_targets() {
    let l = layout();
    let v = l.vocab_size();
    let mut tg = action_targets(&l);
    tg.swap(0, 1);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new(vec![3, v], vec![0.0; 3 * v]).unwrap());
    assert!(matches!(loss_plan(&mut g, x, &tg, &l), Err(TrainError::Target(_))));
    let img = l.image_token(0);
    assert!(matches!(loss_plan(&mut g, x, &[img, img, img], &l), Err(TrainError::Target(_))));
}

#[test]
fn stop_gate_matches_brute_force() {
    let l = layout();
    let v = l.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z: Vec<f64> = (0..v).map(|_| rng.random_range(-3.0..3.0)).collect();
    let tx = l.action_token(ActionDim::X, false, 17);
    let rx = l.action_range(ActionDim::X);
    let mut union = vec![z[Special::Stop.id() as usize]];
    union.extend((rx.start..rx.end).map(|t| z[t as usize]));
    let p_x: f64 = log_softmax(&union)[1..].iter().map(|v| v.exp()).sum();
    let loss = eval_loss(|g, x| loss_stop_gate(g, x, tx, &l), 1, v, z);
    assert!((loss + p_x.ln()).abs() < 1e-10, "{loss} vs {}", -p_x.ln());
    assert!(loss >= 0.0);
}

#[test]
fn world_loss_zero_at_point_mass() {
    let l = layout();
    let v = l.vocab_size();
    let cb = codebook(1);
    let dist = cb.distance_table();
    let codes = [3u32, 0, 15, 3];
    let tg: Vec<u32> = codes.iter().map(|&c| l.image_token(c)).collect();
    let mut z = vec![0.0; 4 * v];
    for (i, &t) in tg.iter().enumerate() {
        z[i * v + t as usize] = 60.0;
    }
    let loss = eval_loss(|g, x| loss_world(g, x, &tg, &dist, &l), 4, v, z);
    assert!(loss.abs() < 1e-6, "{loss}");
}

#[test]
fn world_loss_uniform_is_mean_distance() {
    let l = layout();
    let v = l.vocab_size();
    let cb = codebook(2);
    let dist = cb.distance_table();
    for code in 0..N_IMG as u32 {
        let t = l.image_token(code);
        // brute-force mean squared distance straight from the entries
        let e = cb.entry(code as usize);
        let mean: f64 = (0..N_IMG)
            .map(|j| {
                cb.entry(j)
                    .iter()
                    .zip(e)
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / N_IMG as f64;
        let loss = eval_loss(|g, x| loss_world(g, x, &[t], &dist, &l), 1, v, vec![0.7; v]);
        assert!((loss - mean).abs() < 1e-6, "code {code}: {loss} vs {mean}");
    }
}

#[test]
fn world_loss_rejects_non_image_targets() {
    let l = layout();
    let v = l.vocab_size();
    let dist = codebook(1).distance_table();
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new(vec![1, v], vec![0.0; v]).unwrap());
    assert!(matches!(loss_world(&mut g, x, &[Special::Stop.id()], &dist, &l), Err(TrainError::Target(_))));
}

#[test]
fn label_smoothing_closed_forms() {
    let v = 37;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z: Vec<f64> = (0..2 * v).map(|_| rng.random_range(-2.0..2.0)).collect();
    let tg = [5u32, 30];
    // ε = 0 is plain cross-entropy
    let ce = (0..2).map(|i| -log_softmax(&z[i * v..(i + 1) * v])[tg[i] as usize]).sum::<f64>() / 2.0;
    let loss = eval_loss(|g, x| loss_label_smoothing(g, x, &tg, 0.0, v), 2, v, z);
    assert!((loss - ce).abs() < 1e-10);

    // uniform logits give ln V for any ε
    for eps in [0.0, 0.1, 0.5] {
        let loss = eval_loss(|g, x| loss_label_smoothing(g, x, &tg, eps, v), 2, v, vec![1.5; 2 * v]);
        assert!((loss - (v as f64).ln()).abs() < 1e-10);
    }

    // margin M on the target: lp_t = M - ln(e^M + V - 1), lp_o = -ln(e^M + V - 1)
    let (m, eps) = (8.0f64, 0.1);
    let mut z = vec![0.0; v];
    z[5] = m;
    let lse = (m.exp() + (v - 1) as f64).ln();
    let vf = v as f64;
    let closed = -((1.0 - eps + eps / vf) * (m - lse) + (vf - 1.0) * eps / vf * (-lse));
    let loss = eval_loss(|g, x| loss_label_smoothing(g, x, &[5], eps, v), 1, v, z);
    assert!((loss - closed).abs() < 1e-10);
}

fn flatten(p: &ModelParams<f64>) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
}

fn unflatten(p: &mut ModelParams<f64>, x: &[f64]) {
    let mut o = 0;
    for t in p.tensors_mut() {
        let n = t.numel();
        t.data.copy_from_slice(&x[o..o + n]);
        o += n;
    }
}

fn grad_check(sample: &TokenSample, sp: &LossSpec, seed: u64) -> f64 {
    let l = layout();
    let cfg = small_model(&l);
    let dist = codebook(seed).distance_table();
    let params = ModelParams::<f32>::init(&cfg, seed).unwrap().cast::<f64>();
    let sg = sample_gradients(&params, &cfg, sample, sp, &dist, &l).unwrap();
    let analytic: Vec<f64> = sg.grads.iter().flatten().copied().collect();
    let x0 = flatten(&params);
    let mut work = params.clone();
    finite_diff_check(
        |x| {
            unflatten(&mut work, x);
            sample_gradients(&work, &cfg, sample, sp, &dist, &l).unwrap().loss
        },
        &x0,
        &analytic,
        1e-5,
        48,
        seed,
    )
}

#[test]
fn loss_gradients_match_finite_differences() {
    let l = layout();
    let data = fake_data(20, 11);
    let bin = spec(PlanLoss::BinToken, WorldLoss::Reconstruction, 0.0);
    for seed in 0..20u64 {
        let tr = &data[seed as usize];
        let t = seed as usize % tr.actions.len();
        let plan = build_sample(&data, &SampleRef { traj: seed as usize, t, role: Role::Planner }, &l, 1, 128).unwrap();
        let world =
            build_sample(&data, &SampleRef { traj: seed as usize, t, role: Role::WorldModel }, &l, 1, 128).unwrap();
        let e = grad_check(&plan, &bin, seed);
        assert!(e < 1e-4, "plan seed {seed}: {e}");
        let e = grad_check(&world, &bin, seed);
        assert!(e < 1e-4, "world seed {seed}: {e}");
    }
}

#[test]
fn auxiliary_objective_gradients() {
    let l = layout();
    let data = fake_data(3, 12);
    let mk = |traj, t, role| build_sample(&data, &SampleRef { traj, t, role }, &l, 2, 128).unwrap();
    let cases = [
        (mk(0, 1, Role::Planner), spec(PlanLoss::BinToken, WorldLoss::Reconstruction, 1.0)),
        (mk(0, data[0].actions.len(), Role::Planner), spec(PlanLoss::BinToken, WorldLoss::Reconstruction, 1.0)),
        (mk(1, 0, Role::Planner), spec(PlanLoss::LabelSmoothing, WorldLoss::LabelSmoothing, 0.0)),
        (mk(1, 2, Role::WorldModel), spec(PlanLoss::LabelSmoothing, WorldLoss::LabelSmoothing, 0.0)),
        (mk(2, 1, Role::Both), spec(PlanLoss::BinToken, WorldLoss::Reconstruction, 1.0)),
    ];
    for (i, (s, sp)) in cases.iter().enumerate() {
        let e = grad_check(s, sp, 100 + i as u64);
        assert!(e < 1e-4, "case {i}: {e}");
    }
}

#[test]
fn non_target_logits_get_zero_gradient() {
    let l = layout();
    let cfg = small_model(&l);
    let data = fake_data(1, 13);
    let s = build_sample(&data, &SampleRef { traj: 0, t: 1, role: Role::WorldModel }, &l, 1, 128).unwrap();
    let params = ModelParams::<f32>::init(&cfg, 1).unwrap().cast::<f64>();
    let mut g = Graph::<f64>::new();
    let traced = crate::model::trace_forward(&mut g, &params, &cfg, &s.tokens, 0..s.tokens.len()).unwrap();
    // re-root the full logit matrix as a leaf so its gradient is observable
    let mut h = Graph::<f64>::new();
    let full = h.leaf(g.value(traced.logits).clone().with_grad());
    let rows = logit_rows(&s).unwrap();
    let lg = h.slice(full, 0, rows.start, rows.end).unwrap();
    let sp = spec(PlanLoss::BinToken, WorldLoss::Reconstruction, 1.0);
    let loss = sample_loss(&mut h, lg, &s, &sp, &codebook(1).distance_table(), &l).unwrap();
    h.backward(loss.total).unwrap();
    let grad = h.grad(full).unwrap();
    let v = l.vocab_size();
    for r in 0..s.tokens.len() {
        let nz = grad[r * v..(r + 1) * v].iter().any(|&x| x != 0.0);
        assert_eq!(nz, rows.contains(&r), "row {r}");
    }
}

fn trainer_setup(cfg: TrainConfig, data: &[EncodedTrajectory]) -> (Trainer<'_>, TrainState) {
    let l = layout();
    let m = small_model(&l);
    let params = ModelParams::<f32>::init(&m, 5).unwrap();
    let t = Trainer::new(m, l, cfg, data, codebook(9).distance_table()).unwrap();
    (t, TrainState::new(params))
}

#[test]
fn zero_learning_rate_keeps_params() {
    let data = fake_data(4, 20);
    let cfg = TrainConfig { lr: 0.0, epochs: 1, batch_size: 4, ..Default::default() };
    let (t, mut st) = trainer_setup(cfg, &data);
    let before = st.params.clone();
    let mut log = Vec::new();
    let sum = t.run(&mut st, &mut log).unwrap();
    assert_eq!(st.params, before);
    assert_eq!(sum.epochs.len(), 1);
    assert!(st.step > 0 && st.adam.step == st.step);
}

#[test]
fn world_loss_decreases_on_smoke_run() {
    let data = fake_data(6, 21);
    let cfg = TrainConfig { lr: 3e-3, epochs: 100, batch_size: 4, max_steps: Some(120), ..Default::default() };
    let (t, mut st) = trainer_setup(cfg, &data);
    let mut log = Vec::new();
    let sum = t.run(&mut st, &mut log).unwrap();
    assert!(sum.truncated);
    assert_eq!(st.step, 120);
    let world: Vec<f64> = log.iter().filter(|r| r.role == "world_model").map(|r| r.loss).collect();
    let first = world[..20].iter().sum::<f64>() / 20.0;
    let last = world[world.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn resume_reproduces_loss_curve() {
    let data = fake_data(5, 22);
    let cfg = TrainConfig { lr: 1e-3, epochs: 3, batch_size: 3, grad_accum: 2, ..Default::default() };
    let (t, mut full) = trainer_setup(cfg.clone(), &data);
    let mut full_log = Vec::new();
    t.run(&mut full, &mut full_log).unwrap();

    let (_, mut st) = trainer_setup(cfg.clone(), &data);
    let stop_at = full_log[full_log.len() / 2].step;
    let t1 = Trainer::new(t.model.clone(), t.layout, TrainConfig { max_steps: Some(stop_at), ..cfg }, &data, codebook(9).distance_table()).unwrap();
    let mut first = Vec::new();
    t1.run(&mut st, &mut first).unwrap();
    // round trip through a checkpoint file
    let ck = crate::model::Checkpoint {
        config: t.model.clone(),
        vocab: t.layout,
        step: st.step,
        epoch: st.epoch,
        params: st.params.clone(),
        adam: Some(st.adam.clone()),
        codebook: None,
        meta: serde_json::json!({ "batch": st.batch }),
    };
    let back = crate::model::Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    let mut resumed = TrainState {
        params: back.params,
        adam: back.adam.unwrap(),
        step: back.step,
        epoch: back.epoch,
        batch: back.meta["batch"].as_u64().unwrap() as usize,
    };
    let mut rest = Vec::new();
    t.run(&mut resumed, &mut rest).unwrap();
    first.extend(rest);
    let key = |r: &StepRecord| (r.step, r.epoch, r.role.clone(), r.loss.to_bits());
    assert_eq!(first.iter().map(key).collect::<Vec<_>>(), full_log.iter().map(key).collect::<Vec<_>>());
    assert_eq!(resumed.params, full.params);
}

#[test]
fn non_finite_loss_aborts_with_position() {
    let data = fake_data(2, 23);
    let (t, mut st) = trainer_setup(TrainConfig { epochs: 1, batch_size: 2, ..Default::default() }, &data);
    st.params.final_norm.data[0] = f32::NAN;
    let err = t.run(&mut st, &mut Vec::new()).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { step: 1, epoch: 0, batch: 0 }), "{err}");
}

#[test]
fn loss_ablation_names() {
    let mut c = TrainConfig::default();
    c.apply_loss_ablation("ls-ls").unwrap();
    assert_eq!((c.plan_loss, c.world_loss), (PlanLoss::LabelSmoothing, WorldLoss::LabelSmoothing));
    c.apply_loss_ablation("bin-rec").unwrap();
    assert_eq!((c.plan_loss, c.world_loss), (PlanLoss::BinToken, WorldLoss::Reconstruction));
    assert!(c.apply_loss_ablation("bin-mse").is_err());
    assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
}
