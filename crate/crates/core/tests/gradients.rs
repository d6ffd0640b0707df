mod common;

use common::{grad_check, project, rand_away_from_zero, rand_distinct, rand_tensor, rng, GRAD_TOL};
use rand::Rng;
use srcn::model::{forward, mse_loss, stack_frames, SrcnConfig, SrcnParams};
use srcn::tensor::{Mode, Tape, Tensor, Var};

const INSTANCES: u64 = 10;

fn check_instances(name: &str, per_input: usize, mut case: impl FnMut(u64) -> (Vec<Tensor>, Box<common::LossFn<'static>>)) {
    for seed in 0..INSTANCES {
        let (inputs, f) = case(seed);
        let worst = grad_check(&inputs, f.as_ref(), per_input, &mut rng(1000 + seed));
        assert!(worst < GRAD_TOL, "{name} instance {seed}: max relative error {worst:.3e}");
    }
}

#[test]
fn matmul_gradients() {
    check_instances("matmul", 64, |seed| {
        let mut r = rng(seed);
        let (p, q, s) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..6));
        let inputs = vec![rand_tensor(&[p, q], -1.0, 1.0, &mut r), rand_tensor(&[q, s], -1.0, 1.0, &mut r)];
        (inputs, Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, seed)
        }))
    });
}

#[test]
fn linear_gradients() {
    check_instances("linear", 64, |seed| {
        let mut r = rng(seed);
        let (rows, inp, out) = (r.gen_range(1..5), r.gen_range(1..7), r.gen_range(1..7));
        let inputs = vec![
            rand_tensor(&[rows, inp], -1.0, 1.0, &mut r),
            rand_tensor(&[out, inp], -1.0, 1.0, &mut r),
            rand_tensor(&[out], -1.0, 1.0, &mut r),
        ];
        (inputs, Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, seed)
        }))
    });
}

#[test]
fn conv2d_gradients_both_paddings() {
    for same in [true, false] {
        check_instances(if same { "conv2d same" } else { "conv2d valid" }, 40, |seed| {
            let mut r = rng(seed + 50);
            let (n, c, o) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..4));
            let (h, w) = (r.gen_range(3..7), r.gen_range(3..7));
            let inputs = vec![
                rand_tensor(&[n, c, h, w], -1.0, 1.0, &mut r),
                rand_tensor(&[o, c, 3, 3], -0.5, 0.5, &mut r),
                rand_tensor(&[o], -0.5, 0.5, &mut r),
            ];
            (inputs, Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.conv2d(v[0], v[1], v[2], same)?;
                project(t, y, seed)
            }))
        });
    }
}

#[test]
fn max_pool_gradients() {
    check_instances("max_pool2d", 64, |seed| {
        let mut r = rng(seed + 100);
        let shape = [r.gen_range(1..3), r.gen_range(1..3), r.gen_range(2..7), r.gen_range(2..7)];
        (vec![rand_distinct(&shape, &mut r)], Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = t.max_pool2d(v[0])?;
            project(t, y, seed)
        }))
    });
}

#[test]
fn batch_norm_train_gradients() {
    check_instances("batch_norm_train", 64, |seed| {
        let mut r = rng(seed + 150);
        let (n, c, h, w) = (r.gen_range(2..4), r.gen_range(1..4), r.gen_range(1..4), r.gen_range(2..4));
        let inputs = vec![
            rand_tensor(&[n, c, h, w], -2.0, 2.0, &mut r),
            rand_tensor(&[c], 0.5, 1.5, &mut r),
            rand_tensor(&[c], -0.5, 0.5, &mut r),
        ];
        (inputs, Box::new(move |t: &mut Tape, v: &[Var]| {
            let (y, _) = t.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            project(t, y, seed)
        }))
    });
}

#[test]
fn batch_norm_infer_gradients() {
    check_instances("batch_norm_infer", 64, |seed| {
        let mut r = rng(seed + 200);
        let (n, c, hw) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..5));
        let mean: Vec<f64> = (0..c).map(|_| r.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..c).map(|_| r.gen_range(0.2..2.0)).collect();
        let inputs = vec![
            rand_tensor(&[n, c, hw, hw], -2.0, 2.0, &mut r),
            rand_tensor(&[c], 0.5, 1.5, &mut r),
            rand_tensor(&[c], -0.5, 0.5, &mut r),
        ];
        (inputs, Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = t.batch_norm_infer(v[0], v[1], v[2], &mean, &var, 1e-5)?;
            project(t, y, seed)
        }))
    });
}

#[test]
fn elementwise_unary_gradients() {
    type Unary = fn(&mut Tape, Var) -> srcn::Result<Var>;
    let ops: [(&str, Unary); 4] = [
        ("relu", |t, a| t.relu(a)),
        ("sigmoid", |t, a| t.sigmoid(a)),
        ("tanh", |t, a| t.tanh(a)),
        ("scale", |t, a| t.scale(a, -1.7)),
    ];
    for (name, op) in ops {
        check_instances(name, 64, |seed| {
            let mut r = rng(seed + 250);
            let shape = [r.gen_range(1..5), r.gen_range(1..5)];
            // Away from zero so relu's kink is never straddled.
            (vec![rand_away_from_zero(&shape, &mut r)], Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = op(t, v[0])?;
                project(t, y, seed)
            }))
        });
    }
}

#[test]
fn elementwise_binary_gradients() {
    type Binary = fn(&mut Tape, Var, Var) -> srcn::Result<Var>;
    let ops: [(&str, Binary); 3] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
    ];
    for (name, op) in ops {
        check_instances(name, 64, |seed| {
            let mut r = rng(seed + 300);
            let shape = [r.gen_range(1..5), r.gen_range(1..5)];
            let inputs = vec![rand_tensor(&shape, -1.0, 1.0, &mut r), rand_tensor(&shape, -1.0, 1.0, &mut r)];
            (inputs, Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = op(t, v[0], v[1])?;
                project(t, y, seed)
            }))
        });
    }
}

#[test]
fn shape_and_reduction_gradients() {
    check_instances("reshape/flatten/slice/mean", 64, |seed| {
        let mut r = rng(seed + 350);
        let (n, c, h) = (r.gen_range(2..5), r.gen_range(1..3), r.gen_range(1..4));
        let start = r.gen_range(0..n - 1);
        let end = r.gen_range(start + 1..=n);
        (vec![rand_tensor(&[n, c, h], -1.0, 1.0, &mut r)], Box::new(move |t: &mut Tape, v: &[Var]| {
            let flat = t.flatten_rows(v[0])?;
            let rows = t.slice_rows(flat, start, end)?;
            let squared = t.mul(rows, rows)?;
            let back = t.reshape(squared, vec![(end - start) * c * h])?;
            let m = t.mean(back)?;
            let s = project(t, rows, seed)?;
            t.add(m, s)
        }))
    });
}

#[test]
fn dropout_mask_gradients() {
    check_instances("dropout", 64, |seed| {
        let mut r = rng(seed + 400);
        let shape = [r.gen_range(1..5), r.gen_range(2..6)];
        let mask: Vec<f64> = (0..shape[0] * shape[1]).map(|_| if r.gen::<bool>() { 0.0 } else { 2.0 }).collect();
        (vec![rand_tensor(&shape, -1.0, 1.0, &mut r)], Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = t.apply_mask(v[0], mask.clone())?;
            project(t, y, seed)
        }))
    });
}

#[test]
fn mse_loss_gradients() {
    check_instances("mse_loss", 64, |seed| {
        let mut r = rng(seed + 450);
        let (b, n) = (r.gen_range(1..4), r.gen_range(1..6));
        let targets: Vec<Tensor> = (0..2).map(|_| rand_tensor(&[b, n], 0.0, 1.0, &mut r)).collect();
        let inputs = (0..2).map(|_| rand_tensor(&[b, n], 0.0, 1.0, &mut r)).collect();
        (inputs, Box::new(move |t: &mut Tape, v: &[Var]| {
            let tv: Vec<Var> = targets.iter().map(|x| t.constant(x.clone())).collect();
            mse_loss(t, v, &tv)
        }))
    });
}

#[test]
fn lstm_step_gradients() {
    use srcn::lstm::{cell_step, LstmCellParams, LstmState};
    check_instances("lstm cell", 16, |seed| {
        let mut r = rng(seed + 500);
        let (p, q, rows) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..3));
        let cell = LstmCellParams::init(p, q, &mut r);
        let mut inputs: Vec<Tensor> = cell.tensors().into_iter().cloned().collect();
        inputs.push(rand_tensor(&[rows, p], -1.0, 1.0, &mut r));
        inputs.push(rand_tensor(&[rows, p], -1.0, 1.0, &mut r));
        inputs.push(rand_tensor(&[rows, q], -1.0, 1.0, &mut r));
        (inputs, Box::new(move |t: &mut Tape, v: &[Var]| {
            let vars = bind_from(&v[..12]);
            let zero = t.constant(Tensor::zeros(&[rows, q]));
            let s0 = LstmState { h: v[14], c: zero };
            let s1 = cell_step(t, &vars, v[12], &s0)?;
            let s2 = cell_step(t, &vars, v[13], &s1)?;
            let a = project(t, s2.h, seed)?;
            let b = project(t, s2.c, seed + 1)?;
            t.add(a, b)
        }))
    });
}

fn bind_from(v: &[Var]) -> srcn::lstm::LstmVars {
    use srcn::lstm::{GateVars, LstmVars};
    let g = |k: usize| GateVars { input_weight: v[3 * k], hidden_weight: v[3 * k + 1], bias: v[3 * k + 2] };
    LstmVars { input: g(0), forget: g(1), output: g(2), candidate: g(3) }
}

#[test]
fn full_network_gradients_on_sampled_parameters() {
    let config = SrcnConfig { dropout: 0.0, batch_size: 3, ..SrcnConfig::desk() };
    let mut r = rng(77);
    let params = SrcnParams::init(&config, &mut r).unwrap();
    let frames: Vec<_> = (0..3)
        .map(|_| {
            (0..config.seq_len)
                .map(|t| srcn::grid_codec::GridFrame {
                    height: 24,
                    width: 24,
                    values: rand_tensor(&[576], 0.0, 1.0, &mut r).into_data(),
                    timestamp: t,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let refs: Vec<&[_]> = frames.iter().map(|w| w.as_slice()).collect();
    let stacked = stack_frames(&refs).unwrap();
    let targets: Vec<Tensor> = config.horizons.iter().map(|_| rand_tensor(&[3, 20], 0.2, 0.9, &mut r)).collect();

    let loss_of = |t: &mut Tape, p: &SrcnParams| -> (Var, Vec<Var>) {
        let vars = p.bind(t);
        let x = t.constant(stacked.clone());
        let pass = forward(p, t, &vars, x, 3, Mode::Train, 0.0, &mut rng(0)).unwrap();
        let tv: Vec<Var> = targets.iter().map(|x| t.constant(x.clone())).collect();
        (mse_loss(t, &pass.outputs, &tv).unwrap(), vars.all())
    };

    let mut tape = Tape::new();
    let (loss, vars) = loss_of(&mut tape, &params);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let n_tensors = params.tensors().len();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = r.gen_range(0..n_tensors);
        let i = r.gen_range(0..params.tensors()[k].len());
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.tensors_mut()[k].data_mut()[i] += delta;
            let mut t = Tape::new();
            let (l, _) = loss_of(&mut t, &p);
            t.value(l).data()[0]
        };
        let numeric = (eval(common::FD_STEP) - eval(-common::FD_STEP)) / (2.0 * common::FD_STEP);
        worst = worst.max(common::rel_err(analytic[k][i], numeric));
    }
    assert!(worst < GRAD_TOL, "full network max relative error {worst:.3e}");
}
