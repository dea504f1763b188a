//! Every backward rule against central differences.

use numgrad::{GradCheck, Matrix, ParamSample, Tape, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn all_samples(params: &[Matrix]) -> Vec<ParamSample> {
    params
        .iter()
        .enumerate()
        .flat_map(|(t, m)| (0..m.data().len()).map(move |index| ParamSample { tensor: t, index }))
        .collect()
}

/// Builds `graph` on a fresh tape with `params` as leaves and reduces the
/// output with a fixed random weighting so every output entry matters.
fn check_graph(
    params: Vec<Matrix>,
    weight_seed: u64,
    graph: impl Fn(&mut Tape, &[Var]) -> Var,
) -> numgrad::CheckReport {
    let eval = |ps: &[Matrix], want_grad: bool| -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = graph(&mut tape, &vars);
        let shape = tape.value(out).shape();
        let mut wrng = ChaCha8Rng::seed_from_u64(weight_seed);
        let weighted = tape.mask_mul(out, random(&mut wrng, shape.0, shape.1, 1.0)).unwrap();
        let loss = tape.sum(weighted).unwrap();
        let value = tape.value(loss).data()[0];
        if !want_grad {
            return (value, vec![]);
        }
        let mut g = tape.backward(loss).unwrap();
        let grads = vars
            .iter()
            .zip(ps)
            .map(|(v, p)| g.take_or_zeros(*v, p))
            .collect();
        (value, grads)
    };
    let (_, analytic) = eval(&params, true);
    let mut params = params;
    let samples = all_samples(&params);
    GradCheck::new(1e-5, 1e-6).run(&mut params, &analytic, &samples, |p| eval(p, false).0)
}

#[test]
fn matmul_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = vec![random(&mut rng, 3, 4, 1.0), random(&mut rng, 4, 2, 1.0)];
    let r = check_graph(params, 11, |t, v| t.matmul(v[0], v[1]).unwrap());
    assert!(r.passed, "max rel {}", r.max_rel_error);
}

#[test]
fn sum_of_product_gradient_wrt_lhs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, 3, 3, 1.0);
    let b = random(&mut rng, 3, 2, 1.0);
    let mut tape = Tape::new();
    let av = tape.leaf(a.clone());
    let bv = tape.leaf(b.clone());
    let c = tape.matmul(av, bv).unwrap();
    let s = tape.sum(c).unwrap();
    let g = tape.backward(s).unwrap();
    let mut params = vec![a, b.clone()];
    let analytic = vec![g.get(av).unwrap().clone(), g.get(bv).unwrap().clone()];
    let samples: Vec<_> = (0..9).map(|index| ParamSample { tensor: 0, index }).collect();
    let r = GradCheck::new(1e-5, 1e-6).run(&mut params, &analytic, &samples, |p| {
        p[0].matmul(&p[1]).unwrap().sum()
    });
    assert!(r.passed, "max rel {}", r.max_rel_error);
}

#[test]
fn matmul_t_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = vec![random(&mut rng, 3, 4, 1.0), random(&mut rng, 5, 4, 1.0)];
    let r = check_graph(params, 12, |t, v| t.matmul_t(v[0], v[1]).unwrap());
    assert!(r.passed, "max rel {}", r.max_rel_error);
}

#[test]
fn softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = vec![random(&mut rng, 3, 5, 2.0)];
    let r = check_graph(params, 13, |t, v| t.softmax_rows(v[0]).unwrap());
    assert!(r.passed, "max rel {}", r.max_rel_error);
}

#[test]
fn masked_softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = vec![random(&mut rng, 4, 4, 2.0)];
    let mut mask = Matrix::zeros(4, 4);
    for r in 0..4 {
        for c in r + 1..4 {
            mask.set(r, c, -1e9);
        }
    }
    let r = check_graph(params, 14, move |t, v| {
        let m = t.add_const(v[0], &mask).unwrap();
        t.softmax_rows(m).unwrap()
    });
    assert!(r.passed, "max rel {}", r.max_rel_error);
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = vec![
        random(&mut rng, 3, 6, 2.0),
        random(&mut rng, 1, 6, 1.5),
        random(&mut rng, 1, 6, 1.0),
    ];
    let r = check_graph(params, 15, |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap());
    assert!(r.passed, "max rel {}", r.max_rel_error);
}

#[test]
fn shaping_and_elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = vec![
        random(&mut rng, 3, 4, 1.0),
        random(&mut rng, 3, 2, 1.0),
        random(&mut rng, 1, 6, 1.0),
    ];
    let r = check_graph(params, 16, |t, v| {
        let c = t.concat_cols(&[v[0], v[1]]).unwrap();
        let b = t.add_row(c, v[2]).unwrap();
        let s = t.scale(b, 1.7).unwrap();
        let top = t.select_rows(s, 0, 2).unwrap();
        let bottom = t.select_rows(s, 1, 2).unwrap();
        let sum = t.add(top, bottom).unwrap();
        let rows = t.concat_rows(&[sum, top]).unwrap();
        let tr = t.transpose(rows).unwrap();
        let sel = t.select_cols(tr, 1, 3).unwrap();
        t.relu(sel).unwrap()
    });
    assert!(r.passed, "max rel {}", r.max_rel_error);
}

#[test]
fn mse_gradient_is_scaled_residual() {
    let pred = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
    let target = Matrix::from_rows(&[vec![0.0, 2.5], vec![0.5, 1.0]]).unwrap();
    let mut tape = Tape::new();
    let p = tape.leaf(pred.clone());
    let t = tape.leaf(target.clone());
    let l = tape.mse(p, t).unwrap();
    let g = tape.backward(l).unwrap();
    let expected = pred.zip_map(&target, "x", |a, b| 2.0 * (a - b) / 4.0).unwrap();
    assert_eq!(g.get(p).unwrap(), &expected);
}

#[test]
fn gradient_is_associativity_compatible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(&mut rng, 3, 4, 1.0);
    let b = random(&mut rng, 4, 5, 1.0);
    let c = random(&mut rng, 5, 2, 1.0);
    let grad_a = |left: bool| {
        let mut t = Tape::new();
        let (av, bv, cv) = (t.leaf(a.clone()), t.leaf(b.clone()), t.leaf(c.clone()));
        let out = if left {
            let ab = t.matmul(av, bv).unwrap();
            t.matmul(ab, cv).unwrap()
        } else {
            let bc = t.matmul(bv, cv).unwrap();
            t.matmul(av, bc).unwrap()
        };
        let s = t.sum(out).unwrap();
        t.backward(s).unwrap().get(av).unwrap().clone()
    };
    assert!(grad_a(true).max_abs_diff(&grad_a(false)) <= 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_shapes_pass_finite_difference(
        rows in 1usize..5, inner in 1usize..5, cols in 1usize..5, seed in 0u64..1000
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = vec![
            random(&mut rng, rows, inner, 1.0),
            random(&mut rng, inner, cols, 1.0),
            Matrix::filled(1, cols, 1.0),
            Matrix::zeros(1, cols),
        ];
        let r = check_graph(params, seed + 1, |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let s = t.softmax_rows(h).unwrap();
            if cols > 1 {
                t.layer_norm(s, v[2], v[3], 1e-3).unwrap()
            } else {
                s
            }
        });
        prop_assert!(r.max_rel_error <= 1e-5, "max rel {}", r.max_rel_error);
    }

    #[test]
    fn bounded_inputs_stay_finite(values in proptest::collection::vec(-1e6f64..1e6, 12)) {
        let x = Matrix::new(3, 4, values).unwrap();
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let g = t.leaf(Matrix::filled(1, 4, 1.0));
        let b = t.leaf(Matrix::zeros(1, 4));
        let s = t.softmax_rows(xv).unwrap();
        let n = t.layer_norm(xv, g, b, 1e-5).unwrap();
        let r = t.relu(xv).unwrap();
        prop_assert!(t.value(s).is_finite() && t.value(n).is_finite() && t.value(r).is_finite());
    }
}
