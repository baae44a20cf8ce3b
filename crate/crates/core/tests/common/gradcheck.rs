//! Central finite-difference gradient checking.
//!
//! The scalar probed is `L = Σ wᵢ yᵢ` for a fixed random weighting `w` of the
//! op's output, accumulated in f64 here rather than through the tape. The
//! step actually taken is recomputed from the perturbed f64 values, so f64
//! rounding of `x ± h` does not bias the quotient.

use cavenet::cbam::{AttentionOrder, Cbam};
use cavenet::nn::{Bound, ParamStore};
use cavenet::rng::{seeded, Rng, RngExt};
use cavenet::tensor::{Tape, Tensor, Var};
use cavenet::Result;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

pub type OpFn<'a> = dyn Fn(&Tape, &[Var]) -> Result<Var> + 'a;

/// Worst relative error over all inputs of one instance. Relative error of an
/// input is `‖g_analytic − g_numeric‖₂ / max(‖g_analytic‖₂, ‖g_numeric‖₂)`.
pub fn relative_error(inputs: &[Tensor], f: &OpFn<'_>, weight_seed: u64) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&tape, &vars).expect("forward");
    let shape = tape.shape(y);
    let mut rng = seeded(weight_seed);
    let w = Tensor::uniform(&shape, -1.0, 1.0, &mut rng);
    let grads = tape.backward_with(y, w.clone()).expect("backward");

    let probe = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = f(&tape, &vars).expect("forward");
        let out = tape.value(y);
        out.data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum()
    };

    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; x.len()]);
        let mut numeric = Vec::with_capacity(x.len());
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            minus[i].data_mut()[j] -= STEP;
            let h = plus[i].data()[j] - minus[i].data()[j];
            numeric.push((probe(&plus) - probe(&minus)) / h);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|&a| a.powi(2)).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let err = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(err);
    }
    worst
}

/// Values spaced at least `gap` apart, shuffled, centered on zero. Keeps max
/// selections and ReLU kinks farther than a finite-difference step away.
pub fn spaced(shape: &[usize], gap: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n)
        .map(|k| (k as f64 - n as f64 / 2.0 + 0.5) * gap + rng.random_range(-0.2..0.2) * gap)
        .collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

pub fn normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Runs `instances` seeded random instances and returns the worst error.
pub fn worst_over(instances: usize, seed: u64, make: impl Fn(&mut Rng) -> Vec<Tensor>, f: &OpFn<'_>) -> f64 {
    (0..instances)
        .map(|k| {
            let mut rng = seeded(seed.wrapping_mul(1000) + k as u64);
            let inputs = make(&mut rng);
            relative_error(&inputs, f, seed ^ (k as u64 + 17))
        })
        .fold(0.0, f64::max)
}

pub type MakeInputs = Box<dyn Fn(&mut Rng) -> Vec<Tensor>>;

pub struct Case {
    pub name: &'static str,
    pub make: MakeInputs,
    pub op: Box<OpFn<'static>>,
}

fn case(
    name: &'static str,
    make: impl Fn(&mut Rng) -> Vec<Tensor> + 'static,
    op: impl Fn(&Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        name,
        make: Box::new(make),
        op: Box::new(op),
    }
}

/// The composed attention refinement on a `[2,4,4]` map, differentiated
/// with respect to the map and every attention parameter.
pub fn cbam_refine_case() -> Case {
    let mut probe_store = ParamStore::new();
    let module = Cbam::new(&mut probe_store, "cbam", 2, 2, &mut seeded(0));
    case(
        "cbam_refine",
        |r| {
            let mut store = ParamStore::new();
            Cbam::new(&mut store, "cbam", 2, 2, r);
            let mut inputs = vec![spaced(&[2, 4, 4], 0.05, r)];
            inputs.extend(store.tensors().iter().cloned());
            inputs
        },
        move |t, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            module.refine_var(t, &p, v[0], AttentionOrder::SpatialFirst)
        },
    )
}

/// Every differentiable tensor op, each on a small random instance generator.
pub fn tensor_cases() -> Vec<Case> {
    use cavenet::tensor::PoolKind::{Avg, Max};
    vec![
        case(
            "matmul",
            |r| vec![normal(&[3, 4], r), normal(&[4, 2], r)],
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "add_broadcast",
            |r| vec![normal(&[2, 3, 4], r), normal(&[2, 1, 4], r)],
            |t, v| t.add(v[0], v[1]),
        ),
        case(
            "mul_spatial",
            |r| vec![normal(&[3, 4, 4], r), normal(&[1, 4, 4], r)],
            |t, v| t.mul(v[0], v[1]),
        ),
        case(
            "mul_channel",
            |r| vec![normal(&[3, 4, 4], r), normal(&[3, 1, 1], r)],
            |t, v| t.mul(v[0], v[1]),
        ),
        case("scale", |r| vec![normal(&[2, 3], r)], |t, v| t.scale(v[0], -1.7)),
        case("sum", |r| vec![normal(&[2, 3], r)], |t, v| t.sum(v[0])),
        case("reshape", |r| vec![normal(&[2, 6], r)], |t, v| t.reshape(v[0], &[3, 4])),
        case(
            "concat",
            |r| vec![normal(&[1, 3, 3], r), normal(&[2, 3, 3], r)],
            |t, v| t.concat(&[v[0], v[1]], 0),
        ),
        case(
            "conv2d",
            |r| vec![normal(&[2, 5, 5], r), normal(&[3, 2, 3, 3], r)],
            |t, v| t.conv2d(v[0], v[1], 1, 1),
        ),
        case(
            "conv2d_stride2",
            |r| vec![normal(&[2, 6, 6], r), normal(&[2, 2, 4, 4], r)],
            |t, v| t.conv2d(v[0], v[1], 2, 1),
        ),
        case(
            "conv2d_transpose",
            |r| vec![normal(&[2, 3, 3], r), normal(&[2, 3, 4, 4], r)],
            |t, v| t.conv2d_transpose(v[0], v[1], 2, 1),
        ),
        case(
            "avg_pool",
            |r| vec![normal(&[2, 4, 4], r)],
            |t, v| t.pool(v[0], Avg, 2, 2),
        ),
        case(
            "max_pool",
            |r| vec![spaced(&[2, 4, 4], 0.05, r)],
            |t, v| t.pool(v[0], Max, 2, 2),
        ),
        case(
            "global_avg_pool",
            |r| vec![normal(&[3, 3, 3], r)],
            |t, v| t.global_pool(v[0], Avg),
        ),
        case(
            "global_max_pool",
            |r| vec![spaced(&[3, 3, 3], 0.05, r)],
            |t, v| t.global_pool(v[0], Max),
        ),
        case(
            "channel_avg_pool",
            |r| vec![normal(&[3, 3, 3], r)],
            |t, v| t.channel_pool(v[0], Avg),
        ),
        case(
            "channel_max_pool",
            |r| vec![spaced(&[3, 3, 3], 0.05, r)],
            |t, v| t.channel_pool(v[0], Max),
        ),
        case("relu", |r| vec![spaced(&[3, 4], 0.1, r)], |t, v| t.relu(v[0])),
        case("sigmoid", |r| vec![normal(&[3, 4], r)], |t, v| t.sigmoid(v[0])),
        case("softmax_rows", |r| vec![normal(&[3, 5], r)], |t, v| t.softmax(v[0], 1)),
        case("softmax_axis0", |r| vec![normal(&[4, 3], r)], |t, v| t.softmax(v[0], 0)),
        case(
            "mse_loss",
            |r| vec![normal(&[2, 3, 3], r), normal(&[2, 3, 3], r)],
            |t, v| t.mse_loss(v[0], v[1]),
        ),
        case(
            "cross_entropy",
            |r| vec![Tensor::uniform(&[4, 5], 0.1, 1.0, r)],
            |t, v| t.cross_entropy(v[0], &[0, 3, 4, 1]),
        ),
        case(
            "dropout",
            |r| vec![normal(&[4, 5], r)],
            |t, v| {
                let mut rng = seeded(99);
                t.dropout(v[0], 0.3, true, &mut rng)
            },
        ),
    ]
}
