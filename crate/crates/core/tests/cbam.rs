mod common;

use cavenet::cbam::*;
use cavenet::data::{generate_synthetic, stratified_split};
use cavenet::rng::seeded;
use cavenet::tensor::Tensor;
use common::attention::{crafted_input, crafted_module, oracle, ordering_report};
use proptest::prelude::*;

#[test]
fn refinement_applies_spatial_attention_first() {
    let (gap, to_spatial_first, to_channel_first) = ordering_report();
    assert!(gap > 0.05, "crafted input does not separate the orders: {gap}");
    assert!(to_spatial_first < 1e-12, "{to_spatial_first}");
    assert!(to_channel_first > 0.05);
    let other = crafted_module()
        .refine_with(&crafted_input(), AttentionOrder::ChannelFirst)
        .unwrap();
    for (a, b) in other.data().iter().zip(oracle(AttentionOrder::ChannelFirst)) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn small_config() -> CbamConfig {
    CbamConfig {
        side: 16,
        widths: vec![4, 8],
        blocks_per_stage: 1,
        epochs: 2,
        batch_size: 8,
        ..CbamConfig::default()
    }
}

#[test]
fn untrained_rows_are_distributions() {
    let m = CbamBackbone::new(small_config(), 4, 1).unwrap();
    let mut rng = seeded(2);
    let imgs: Vec<Tensor> = (0..5)
        .map(|_| Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng))
        .collect();
    let refs: Vec<&Tensor> = imgs.iter().collect();
    let p = m.predict_proba(&refs).unwrap();
    assert_eq!(p.shape(), &[5, 4]);
    for r in 0..5 {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    let map = m.attention_map(&imgs[0]).unwrap().unwrap();
    assert_eq!(map.shape(), &[1, 4, 4]);
    assert!(m.predict_proba(&[]).is_err());
    assert!(m.predict_one(&Tensor::zeros(&[3, 8, 8])).is_err());
}

#[test]
fn attention_ablation_trains_and_checkpoints_round_trip() {
    let ds = generate_synthetic(3, 8, 16, 4).unwrap();
    let (train, val) = stratified_split(&ds, 0.25, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for attention in [true, false] {
        let config = CbamConfig {
            attention,
            ..small_config()
        };
        let m = train_cbam(&config, &train, &val, 3).unwrap();
        assert!(!m.history().is_empty());
        assert!(m.history().iter().all(|h| h.train_loss.is_finite()));
        assert_eq!(m.attention_map(val.records()[0].pixels()).unwrap().is_some(), attention);
        let path = dir.path().join(format!("cbam_{attention}.ckpt"));
        m.save(&path).unwrap();
        let back = CbamBackbone::load(&path).unwrap();
        let imgs = val.images();
        assert_eq!(back.predict_proba(&imgs).unwrap(), m.predict_proba(&imgs).unwrap());
        assert_eq!(back.best_epoch(), m.best_epoch());
    }
}

#[test]
fn attention_maps_export_as_pgm_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let map = Tensor::new(vec![1, 2, 3], vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
    let (pgm, csv) = (dir.path().join("a.pgm"), dir.path().join("a.csv"));
    write_attention_pgm(&map, &pgm).unwrap();
    write_attention_csv(&map, &csv).unwrap();
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
    assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 64, 191, 26]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let back: Vec<f64> = text
        .lines()
        .flat_map(|l| l.split(','))
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(back, map.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_lie_strictly_inside_unit_interval(seed in any::<u64>(), c in 1usize..6, h in 1usize..6, r in 1usize..4) {
        let m = CbamModule::new(c, r, seed).unwrap();
        let f = Tensor::randn(&[c, h, h], 1.0, &mut seeded(seed ^ 1));
        let s = m.spatial_map(&f).unwrap();
        prop_assert_eq!(s.shape(), &[1, h, h]);
        prop_assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let g = m.channel_attention(&f).unwrap();
        prop_assert_eq!(g.len(), c);
        prop_assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
        let out = m.refine(&f).unwrap();
        prop_assert_eq!(out.shape(), f.shape());
        prop_assert!(out.data().iter().zip(f.data()).all(|(a, b)| a.abs() <= b.abs()));
    }
}
