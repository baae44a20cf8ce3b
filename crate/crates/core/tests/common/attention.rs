//! A hand-parameterized attention module whose two composition orders give
//! visibly different outputs, with both orders computed independently.

use cavenet::cbam::{AttentionOrder, CbamModule, SPATIAL_KERNEL};
use cavenet::tensor::Tensor;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Two channels. The spatial gate is `σ(avg_c F)` through the center tap of
/// the average branch; the channel gate is `(σ(h), σ(−h))` with
/// `h = relu(mean of channel 0)`.
pub fn crafted_module() -> CbamModule {
    let mut m = CbamModule::new(2, 2, 0).unwrap();
    let c = &m.cbam;
    let (spatial_w, spatial_b, fc1_w, fc1_b, fc2_w, fc2_b) =
        (c.spatial.w, c.spatial.b, c.fc1.w, c.fc1.b, c.fc2.w, c.fc2.b);
    let k = SPATIAL_KERNEL;
    let w = m.params.get_mut(spatial_w);
    w.data_mut().fill(0.0);
    // Weight layout [1, 2, k, k]; input channel 1 is the average map.
    w.data_mut()[k * k + (k / 2) * k + k / 2] = 1.0;
    m.params.get_mut(spatial_b).data_mut().fill(0.0);
    m.params.get_mut(fc1_w).data_mut().copy_from_slice(&[1.0, 0.0]);
    m.params.get_mut(fc1_b).data_mut().fill(0.0);
    m.params.get_mut(fc2_w).data_mut().copy_from_slice(&[1.0, -1.0]);
    m.params.get_mut(fc2_b).data_mut().fill(0.0);
    m
}

/// `[2,1,2]` map: a dim channel-0 pixel next to a bright channel-1 pixel.
pub fn crafted_input() -> Tensor {
    Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 3.0]).unwrap()
}

fn spatial(f: &[f64]) -> Vec<f64> {
    let gate: Vec<f64> = (0..2).map(|p| sigmoid((f[p] + f[2 + p]) / 2.0)).collect();
    (0..4).map(|i| f[i] * gate[i % 2]).collect()
}

fn channel(f: &[f64]) -> Vec<f64> {
    let h = ((f[0] + f[1]) / 2.0).max(0.0);
    let gate = [sigmoid(h), sigmoid(-h)];
    (0..4).map(|i| f[i] * gate[i / 2]).collect()
}

pub fn oracle(order: AttentionOrder) -> Vec<f64> {
    let f = crafted_input().into_data();
    match order {
        AttentionOrder::SpatialFirst => channel(&spatial(&f)),
        AttentionOrder::ChannelFirst => spatial(&channel(&f)),
    }
}

/// Largest gap between the two oracle orders, and the largest deviation of
/// the implementation's default refinement from each oracle.
pub fn ordering_report() -> (f64, f64, f64) {
    let m = crafted_module();
    let out = m.refine(&crafted_input()).unwrap().into_data();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let sf = oracle(AttentionOrder::SpatialFirst);
    let cf = oracle(AttentionOrder::ChannelFirst);
    (dist(&sf, &cf), dist(&out, &sf), dist(&out, &cf))
}
