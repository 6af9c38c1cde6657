use samc_tensor::{Adam, BatchNormStats, Tape, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn matmul_identity() {
    let mut t = Tape::new();
    let i = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = t.constant(Tensor::matrix(2, 2, vec![3.0, -1.5, 2.25, 7.0]).unwrap());
    let p = t.matmul(i, m).unwrap();
    assert_eq!(t.data(p), t.data(m));
}

#[test]
fn matmul_rectangular() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let b = t.constant(Tensor::matrix(3, 1, vec![1., 0., -1.]).unwrap());
    let p = t.matmul(a, b).unwrap();
    assert_eq!(t.shape(p), &[2, 1]);
    assert_eq!(t.data(p), &[-2.0, -2.0]);
}

#[test]
fn softmax_uniform_logits() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap());
    let s = t.softmax(x, 0).unwrap();
    for v in t.data(s) {
        assert!(close(*v, 1.0 / 3.0, 1e-15));
    }
}

#[test]
fn leaky_relu_negative_side() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(vec![-1.0, 2.0]).unwrap());
    let y = t.leaky_relu(x, 0.2).unwrap();
    assert!(close(t.data(y)[0], -0.2, 1e-15));
    assert_eq!(t.data(y)[1], 2.0);
}

#[test]
fn backward_square() {
    let mut t = Tape::new();
    let x = t.param(&Tensor::scalar(3.0));
    let y = t.mul(x, x).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[6.0]);
}

#[test]
fn backward_mean() {
    let mut t = Tape::new();
    let x = t.param(&Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]).unwrap());
    let m = t.mean(x, 0).unwrap();
    t.backward(m).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[0.25; 4]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.param(&Tensor::vector(vec![1.0, 2.0]).unwrap());
    let y = t.scale(x, 2.0).unwrap();
    assert!(matches!(t.backward(y), Err(TensorError::Contract(_))));
}

#[test]
fn backward_rejects_empty_tape() {
    let mut t = Tape::new();
    let mut other = Tape::new();
    let v = other.constant(Tensor::scalar(1.0));
    assert!(t.backward(v).is_err());
}

#[test]
fn shape_mismatch_is_reported() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    let b = t.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    assert!(matches!(t.matmul(a, b), Err(TensorError::Shape { op: "matmul", .. })));
    let c = t.constant(Tensor::vector(vec![0.0; 6]).unwrap());
    assert!(matches!(t.add(a, c), Err(TensorError::Shape { op: "add", .. })));
    assert!(matches!(t.index_select(a, &[0, 2]), Err(TensorError::Shape { op: "index_select", .. })));
    assert!(t.softmax(a, 2).is_err());
}

#[test]
fn non_finite_output_names_op() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(vec![1.0]).unwrap());
    assert_eq!(
        t.scale(x, f64::INFINITY).unwrap_err(),
        TensorError::NonFinite { op: "scale" }
    );
}

#[test]
fn cross_entropy_values() {
    let mut t = Tape::new();
    let uniform = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
    let l = t.cross_entropy(uniform, &[1]).unwrap();
    assert!(close(t.data(l)[0], std::f64::consts::LN_2, 1e-15));

    let logits = t.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let l = t.cross_entropy(logits, &[0]).unwrap();
    let e = std::f64::consts::E;
    assert!(close(t.data(l)[0], -(e / (e + 1.0)).ln(), 1e-15));
    assert!(close(t.data(l)[0], 0.3133, 1e-4));

    let peaked = t.constant(Tensor::matrix(1, 2, vec![60.0, -60.0]).unwrap());
    let l = t.cross_entropy(peaked, &[0]).unwrap();
    assert!(t.data(l)[0] < 1e-40);

    assert!(matches!(t.cross_entropy(logits, &[2]), Err(TensorError::Contract(_))));
}

#[test]
fn concat_index_select_reshape() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
    let b = t.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
    let c = t.concat(&[a, b], 1).unwrap();
    assert_eq!(t.data(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let r = t.concat(&[b, b], 0).unwrap();
    assert_eq!(t.shape(r), &[4, 2]);
    let s = t.index_select(c, &[1, 1, 0]).unwrap();
    assert_eq!(t.data(s), &[2.0, 5.0, 6.0, 2.0, 5.0, 6.0, 1.0, 3.0, 4.0]);
    let flat = t.reshape(s, &[9]).unwrap();
    assert_eq!(t.shape(flat), &[9]);
    assert!(t.reshape(s, &[4, 2]).is_err());
}

#[test]
fn reductions_over_middle_axis() {
    let mut t = Tape::new();
    let data: Vec<f64> = (0..12).map(f64::from).collect();
    let x = t.constant(Tensor::new(&[2, 3, 2], data).unwrap());
    let s = t.sum(x, 1).unwrap();
    assert_eq!(t.shape(s), &[2, 2]);
    assert_eq!(t.data(s), &[6.0, 9.0, 24.0, 27.0]);
    let m = t.max(x, 1).unwrap();
    assert_eq!(t.data(m), &[4.0, 5.0, 10.0, 11.0]);
    let mean = t.mean(x, 2).unwrap();
    assert_eq!(t.data(mean), &[0.5, 2.5, 4.5, 6.5, 8.5, 10.5]);
}

#[test]
fn eval_mode_dropout_and_batch_norm_are_deterministic() {
    let x = Tensor::matrix(4, 3, (0..12).map(|v| f64::from(v).sin()).collect()).unwrap();
    let run = |stats: &mut BatchNormStats| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let g = t.param(&Tensor::full(&[3], 1.5));
        let b = t.param(&Tensor::full(&[3], -0.25));
        let y = t.batch_norm(xv, g, b, stats, false).unwrap();
        let d = t.dropout(y, 0.5, false, &mut rng).unwrap();
        assert_eq!(d, y);
        t.data(d).to_vec()
    };
    let mut stats = BatchNormStats::new(3);
    stats.running_mean = vec![0.1, -0.2, 0.3];
    stats.running_var = vec![0.5, 2.0, 1.0];
    let before = stats.clone();
    let a = run(&mut stats);
    let b = run(&mut stats);
    assert_eq!(a, b);
    assert_eq!(stats, before, "eval mode must not touch running statistics");
}

#[test]
fn training_batch_norm_normalizes_and_tracks() {
    let mut stats = BatchNormStats::new(1);
    let mut t = Tape::new();
    let x = t.constant(Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let g = t.constant(Tensor::full(&[1], 1.0));
    let b = t.constant(Tensor::full(&[1], 0.0));
    let y = t.batch_norm(x, g, b, &mut stats, true).unwrap();
    let mean: f64 = t.data(y).iter().sum::<f64>() / 4.0;
    let var: f64 = t.data(y).iter().map(|v| v * v).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12);
    assert!(close(var, 1.25 / (1.25 + 1e-5), 1e-12));
    assert!(close(stats.running_mean[0], 0.25, 1e-12));
    // unbiased variance of 1..4 is 5/3
    assert!(close(stats.running_var[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12));
}

#[test]
fn training_dropout_zeroes_and_rescales() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Tape::new();
    let x = t.constant(Tensor::full(&[10_000], 1.0));
    let y = t.dropout(x, 0.5, true, &mut rng).unwrap();
    let zeros = t.data(y).iter().filter(|v| **v == 0.0).count();
    assert!(t.data(y).iter().all(|v| *v == 0.0 || *v == 2.0));
    assert!((4_700..5_300).contains(&zeros));
}

#[test]
fn adam_zero_gradient_is_fixed_point() {
    let mut p = Tensor::vector(vec![0.3, -1.2, 4.0]).unwrap().with_grad();
    let before = p.data().to_vec();
    let mut adam = Adam::new(1e-3);
    for _ in 0..10 {
        p.set_grad(vec![0.0; 3]).unwrap();
        adam.step(&mut [&mut p]).unwrap();
    }
    assert_eq!(p.data(), before.as_slice());
    assert_eq!(adam.step_count(), 10);
}

#[test]
fn adam_first_step_moves_by_lr() {
    // m̂ = g and v̂ = g² after one bias-corrected step, so Δ = −lr·g/(|g| + ε).
    for g in [3.0, -0.02] {
        let mut p = Tensor::scalar(1.0).with_grad();
        p.set_grad(vec![g]).unwrap();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut [&mut p]).unwrap();
        let expected = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
        assert!(close(p.data()[0], expected, 1e-15));
        assert!(close(p.data()[0], 1.0 - 1e-3 * g.signum(), 1e-9));
    }
}

#[test]
fn adam_missing_grad_is_rejected() {
    let mut p = Tensor::scalar(1.0).with_grad();
    let mut adam = Adam::new(1e-3);
    assert!(matches!(adam.step(&mut [&mut p]), Err(TensorError::Contract(_))));
}

#[test]
fn adam_converges_on_quadratic_bowl() {
    let mut p = Tensor::scalar(1.0).with_grad();
    let mut adam = Adam::new(1e-2);
    for _ in 0..500 {
        let mut t = Tape::new();
        let x = t.param(&p);
        let loss = t.mul(x, x).unwrap();
        t.backward(loss).unwrap();
        p.set_grad(t.grad(x).unwrap().to_vec()).unwrap();
        adam.step(&mut [&mut p]).unwrap();
    }
    assert!(p.data()[0].abs() < 1e-2, "x = {}", p.data()[0]);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_a_distribution(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-30.0..30.0)).collect();
            let mut t = Tape::new();
            let x = t.constant(Tensor::matrix(rows, cols, data).unwrap());
            let s = t.softmax(x, 1).unwrap();
            for row in t.data(s).chunks(cols) {
                prop_assert!(row.iter().all(|v| *v > 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
