use cavenet::rng::seeded;
use cavenet::tensor::{PoolKind, Tape, Tensor};
use proptest::prelude::*;

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Loss and every input gradient of a small conv stack.
fn conv_stack(seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = seeded(seed);
    let tape = Tape::new();
    let x = tape.leaf(Tensor::randn(&[3, 8, 8], 1.0, &mut rng));
    let w1 = tape.leaf(Tensor::randn(&[4, 3, 3, 3], 0.3, &mut rng));
    let w2 = tape.leaf(Tensor::randn(&[4, 2, 4, 4], 0.3, &mut rng));
    let h = tape.relu(tape.conv2d(x, w1, 1, 1).unwrap()).unwrap();
    let h = tape.pool(h, PoolKind::Max, 2, 2).unwrap();
    let h = tape.conv2d_transpose(h, w2, 2, 1).unwrap();
    let g = tape.global_pool(h, PoolKind::Avg).unwrap();
    let p = tape.softmax(tape.reshape(g, &[1, 2]).unwrap(), 1).unwrap();
    let loss = tape.cross_entropy(p, &[1]).unwrap();
    let grads = tape.backward(loss).unwrap();
    let out = tape.value(loss).data().to_vec();
    let gs = [x, w1, w2]
        .iter()
        .map(|&v| grads.get(v).unwrap().data().to_vec())
        .collect();
    (out, gs)
}

#[test]
fn forward_and_backward_are_bitwise_repeatable() {
    for seed in 0..3 {
        let a = conv_stack(seed);
        let b = conv_stack(seed);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        logits in proptest::collection::vec(-800.0f64..800.0, 6),
        shift in -1e3f64..1e3,
    ) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], logits.clone()).unwrap());
        let y = tape.value(tape.softmax(x, 1).unwrap()).clone();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let xs = tape.constant(Tensor::new(vec![2, 3], shifted).unwrap());
        let ys = tape.value(tape.softmax(xs, 1).unwrap()).clone();
        for r in 0..2 {
            prop_assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        for (a, b) in y.data().iter().zip(ys.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn conv_and_transpose_are_adjoint(
        seed in any::<u64>(),
        c_in in 1usize..4,
        c_out in 1usize..4,
        (kernel, stride, pad) in prop::sample::select(vec![(3usize, 1usize, 1usize), (4, 2, 1), (2, 2, 0), (1, 1, 0), (3, 1, 0)]),
    ) {
        let mut rng = seeded(seed);
        let side = 8;
        let w = Tensor::randn(&[c_out, c_in, kernel, kernel], 1.0, &mut rng);
        let x = Tensor::randn(&[c_in, side, side], 1.0, &mut rng);
        let tape = Tape::new();
        let cx = tape.value(tape.conv2d(tape.constant(x.clone()), tape.constant(w.clone()), stride, pad).unwrap()).clone();
        let y = Tensor::randn(cx.shape(), 1.0, &mut rng);
        let ty = tape.value(tape.conv2d_transpose(tape.constant(y.clone()), tape.constant(w), stride, pad).unwrap()).clone();
        prop_assert_eq!(ty.shape(), x.shape());
        let (lhs, rhs) = (dot(&cx, &y), dot(&x, &ty));
        prop_assert!((lhs - rhs).abs() <= 1e-5 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }
}
