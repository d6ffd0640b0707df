mod common;

use common::{count_params, naive_conv, rand_tensor, random_window_set, rng, ScalarLstm};
use rand::Rng;
use srcn::lstm::{run_stacked, LstmCellParams};
use srcn::model::optim::RmsProp;
use srcn::model::train::{fit_steps, predict_windows, train};
use srcn::model::{forward, mse_loss, SrcnConfig, SrcnParams};
use srcn::tensor::{Exec, Mode, Tape, Tensor};

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn scalar_oracle(cell: &LstmCellParams) -> ScalarLstm {
    let gates = [&cell.input, &cell.forget, &cell.output, &cell.candidate];
    ScalarLstm {
        w: gates.map(|g| to_rows(&g.input_weight)),
        u: gates.map(|g| to_rows(&g.hidden_weight)),
        b: gates.map(|g| g.bias.data().to_vec()),
    }
}

fn run_cell(cell: &LstmCellParams, xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let vars = cell.bind(&mut tape);
    let seq: Vec<_> = xs.iter().map(|x| tape.constant(Tensor::vector(x.clone()))).collect();
    let run = run_stacked(&mut tape, &[(cell, vars)], &seq).unwrap();
    let top = run.top();
    (tape.value(top.h).data().to_vec(), tape.value(top.c).data().to_vec())
}

#[test]
fn lstm_matches_scalar_oracle_at_two_units() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let cell = LstmCellParams::init(3, 2, &mut r);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let oracle = scalar_oracle(&cell);
        let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
        for x in &xs {
            (h, c) = oracle.step(x, &h, &c);
        }
        let (h_got, c_got) = run_cell(&cell, &xs);
        for (a, b) in h_got.iter().zip(&h).chain(c_got.iter().zip(&c)) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn lstm_with_zero_parameters_stays_at_zero() {
    // Gates all sit at 1/2 and the candidate at tanh(0) = 0, so c and h never leave 0.
    let cell = LstmCellParams::zeros(3, 2);
    let xs = vec![vec![5.0, -3.0, 1.0]; 6];
    let (h, c) = run_cell(&cell, &xs);
    assert_eq!(h, vec![0.0, 0.0]);
    assert_eq!(c, vec![0.0, 0.0]);
}

#[test]
fn lstm_zero_weights_with_unit_candidate_bias_accumulates_halves() {
    // i = f = o = 1/2 and g = tanh(1): c_t = c_{t-1}/2 + tanh(1)/2.
    let mut cell = LstmCellParams::zeros(1, 2);
    cell.candidate.bias = Tensor::full(&[2], 1.0);
    let (h, c) = run_cell(&cell, &[vec![0.0], vec![0.0]]);
    let g = 1f64.tanh();
    let c2 = (g / 2.0) / 2.0 + g / 2.0;
    for j in 0..2 {
        assert!((c[j] - c2).abs() < 1e-15);
        assert!((h[j] - 0.5 * c2.tanh()).abs() < 1e-15);
    }
}

#[test]
fn conv_matches_naive_oracle_for_both_paddings() {
    for (seed, same) in [(1u64, true), (2, false), (3, true), (4, false)] {
        let mut r = rng(seed);
        let input = rand_tensor(&[2, 3, 7, 6], -1.0, 1.0, &mut r);
        let kernels = rand_tensor(&[4, 3, 3, 3], -1.0, 1.0, &mut r);
        let bias: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let expected = naive_conv(&input, &kernels, &bias, if same { 1 } else { 0 });
        for exec in [Exec::Sequential, Exec::Parallel] {
            let mut tape = Tape::with_exec(exec);
            let x = tape.constant(input.clone());
            let k = tape.constant(kernels.clone());
            let b = tape.constant(Tensor::vector(bias.clone()));
            let y = tape.conv2d(x, k, b, same).unwrap();
            let got = tape.value(y);
            assert_eq!(got.shape(), expected.shape());
            for (a, e) in got.data().iter().zip(expected.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn full_size_network_has_reference_shapes_and_parameter_count() {
    let config = SrcnConfig { seq_len: 2, ..SrcnConfig::default() };
    let params = SrcnParams::init(&config, &mut rng(3)).unwrap();
    let expected_params = count_params(&[16, 32, 64, 64, 128], 3, 46080, 278, 800, 2, 278, 3);
    assert_eq!(params.param_count(), expected_params);

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let x = tape.constant(rand_tensor(&[2, 1, 163, 148], 0.0, 1.0, &mut rng(4)));
    let pass = forward(&params, &mut tape, &vars, x, 1, Mode::Infer, 0.2, &mut rng(5)).unwrap();
    let expected: Vec<Vec<usize>> = vec![
        vec![16, 81, 74],
        vec![32, 40, 37],
        vec![64, 40, 37],
        vec![64, 40, 37],
        vec![128, 20, 18],
        vec![46080],
        vec![278],
        vec![800],
        vec![800],
        vec![278],
        vec![278],
        vec![278],
    ];
    assert_eq!(pass.trace, expected);
}

#[test]
fn mse_loss_matches_direct_average() {
    let mut r = rng(9);
    let preds: Vec<Tensor> = (0..3).map(|_| rand_tensor(&[4, 5], 0.0, 1.0, &mut r)).collect();
    let targets: Vec<Tensor> = (0..3).map(|_| rand_tensor(&[4, 5], 0.0, 1.0, &mut r)).collect();
    let mut expected = 0.0;
    for (p, t) in preds.iter().zip(&targets) {
        for (a, b) in p.data().iter().zip(t.data()) {
            expected += (a - b) * (a - b);
        }
    }
    expected /= 60.0;
    let mut tape = Tape::new();
    let pv: Vec<_> = preds.into_iter().map(|t| tape.constant(t)).collect();
    let tv: Vec<_> = targets.into_iter().map(|t| tape.constant(t)).collect();
    let loss = mse_loss(&mut tape, &pv, &tv).unwrap();
    assert!((tape.value(loss).data()[0] - expected).abs() < 1e-15);
}

#[test]
fn rmsprop_three_step_trajectory() {
    let (lr, rho, eps) = (0.003, 0.9, 1e-8);
    let grads = [[0.5, -2.0], [0.1, 1.0], [-0.3, 0.0]];
    let mut w = Tensor::vector(vec![1.0, -1.0]);
    let mut opt = RmsProp::new(lr, rho);

    let mut expect = [1.0f64, -1.0];
    let mut acc = [0.0f64; 2];
    for g in grads {
        opt.step_with(&mut [&mut w], &[&g]).unwrap();
        for j in 0..2 {
            acc[j] = rho * acc[j] + (1.0 - rho) * g[j] * g[j];
            expect[j] -= lr * g[j] / (acc[j] + eps).sqrt();
        }
        for j in 0..2 {
            assert!((w.data()[j] - expect[j]).abs() < 1e-15);
            assert!((opt.accumulators()[0][j] - acc[j]).abs() < 1e-15);
        }
    }
    // First step with a nonzero gradient moves by lr/sqrt(1 - rho) in the gradient's sign.
    let first = 1.0 - lr * 0.5 / (0.1f64 * 0.25 + eps).sqrt();
    assert!((first - (1.0 - lr / 0.1f64.sqrt())).abs() < 1e-6);
}

#[test]
fn two_sample_set_is_memorized() {
    let config = SrcnConfig { dropout: 0.0, batch_size: 2, learning_rate: 2e-4, decay: 0.999, ..SrcnConfig::desk() };
    let data = random_window_set(&config, 2, 11);
    let mut params = SrcnParams::init(&config, &mut rng(12)).unwrap();
    let losses = fit_steps(&mut params, &config, &data, &data.windows, 2000, 13).unwrap();
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < 1e-6, "best training loss {best:.3e} after 2000 steps");
    assert!(losses[losses.len() - 1] < losses[0] * 1e-3);
}

fn small_config() -> SrcnConfig {
    SrcnConfig {
        conv_channels: vec![2, 4],
        feature_dim: 8,
        lstm_hidden: 8,
        lstm_layers: 1,
        seq_len: 3,
        batch_size: 8,
        max_epochs: 25,
        ..SrcnConfig::desk()
    }
}

#[test]
fn patience_zero_stops_at_first_non_improving_epoch() {
    let config = SrcnConfig { patience: 0, ..small_config() };
    let data = random_window_set(&config, 60, 21);
    let outcome = train(&config, &data, 5, Exec::default(), |_| Ok(())).unwrap();
    let mut best = f64::INFINITY;
    let mut expected_len = outcome.log.len();
    for rec in &outcome.log {
        if rec.val_mse < best - config.min_delta {
            best = rec.val_mse;
        } else {
            expected_len = rec.epoch;
            break;
        }
    }
    assert_eq!(outcome.log.len(), expected_len);
    assert_eq!(outcome.stopped_early, expected_len < config.max_epochs);
    assert_eq!(outcome.best_val_mse, best);
    assert_eq!(outcome.best_epoch, expected_len - usize::from(outcome.stopped_early));
}

#[test]
fn training_is_deterministic_and_thread_independent() {
    let config = SrcnConfig { max_epochs: 3, ..small_config() };
    let data = random_window_set(&config, 40, 31);
    let run = |exec| train(&config, &data, 9, exec, |_| Ok(())).unwrap();
    let a = run(Exec::Sequential);
    let b = run(Exec::Sequential);
    let c = run(Exec::Parallel);
    assert_eq!(a.params, b.params);
    assert_eq!(a.params, c.params);
    let mses = |o: &srcn::model::train::TrainOutcome| o.log.iter().map(|r| (r.train_mse, r.val_mse)).collect::<Vec<_>>();
    assert_eq!(mses(&a), mses(&b));
    assert_eq!(mses(&a), mses(&c));
}

#[test]
fn heads_are_independent() {
    let config = small_config();
    let data = random_window_set(&config, 8, 41);
    let params = SrcnParams::init(&config, &mut rng(42)).unwrap();
    let before = predict_windows(&params, &config, &data, &data.windows, Exec::default()).unwrap();
    let mut changed = params.clone();
    for v in changed.heads[1].weight.data_mut() {
        *v += 0.5;
    }
    let after = predict_windows(&changed, &config, &data, &data.windows, Exec::default()).unwrap();
    assert_eq!(before[0], after[0]);
    assert_eq!(before[2], after[2]);
    assert_ne!(before[1], after[1]);

    // A loss on one head sends no gradient into the others.
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let windows: Vec<_> = data.windows.iter().map(|w| data.inputs(w)).collect();
    let x = tape.constant(srcn::model::stack_frames(&windows).unwrap());
    let pass = forward(&params, &mut tape, &vars, x, windows.len(), Mode::Train, 0.0, &mut rng(0)).unwrap();
    let loss = tape.sum(pass.outputs[0]).unwrap();
    tape.backward(loss).unwrap();
    for h in &vars.heads[1..] {
        for v in [h.weight, h.bias] {
            assert!(tape.grad(v).map_or(true, |g| g.iter().all(|&x| x == 0.0)));
        }
    }
}
