use spinereport_core::checkpoint;
use spinereport_core::init::xavier_init;
use spinereport_core::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use spinereport_core::params::ParamStore;
use spinereport_core::tensor::Tensor;
use spinereport_core::CoreError;

fn store_with(name: &str, value: f64, grad: Option<f64>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    let mut t = Tensor::full(&[1], value);
    if let Some(g) = grad {
        t.set_grad(vec![g]).unwrap();
    }
    s.add(name, t).unwrap();
    s
}

#[test]
fn defaults_follow_published_settings() {
    let r = OptimizerConfig::rmsprop();
    assert_eq!(r.learning_rate, 0.01);
    assert_eq!(r.epsilon, 1e-10);
    assert_eq!(r.kind, OptimizerKind::RmsProp { decay: 0.9, momentum: 0.9 });
    let a = OptimizerConfig::adam();
    assert_eq!(a.learning_rate, 0.001);
    assert_eq!(a.epsilon, 1e-8);
    assert_eq!(a.kind, OptimizerKind::Adam { beta1: 0.9, beta2: 0.999 });
}

#[test]
fn single_adam_step_moves_by_learning_rate() {
    let mut s = store_with("p", 1.0, Some(1.0));
    let mut opt = Optimizer::new(OptimizerConfig::adam()).unwrap();
    opt.step(&mut s).unwrap();
    // m = 0.1, v = 0.001; bias-corrected m/sqrt(v) = 1
    let want = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
    assert!((s.get("p").unwrap().item() - want).abs() < 1e-15);
    assert_eq!(opt.steps(), 1);
    assert_eq!(s.get("p").unwrap().grad(), Some(&[1.0][..]), "gradient left for the caller");
}

#[test]
fn rmsprop_matches_hand_recurrence() {
    let mut s = store_with("p", 0.5, Some(2.0));
    let mut opt = Optimizer::new(OptimizerConfig::rmsprop()).unwrap();
    let (mut ms, mut mom, mut p) = (1.0f64, 0.0f64, 0.5f64);
    for _ in 0..3 {
        opt.step(&mut s).unwrap();
        ms = 0.9 * ms + 0.1 * 4.0;
        mom = 0.9 * mom + 0.01 * 2.0 / (ms + 1e-10).sqrt();
        p -= mom;
    }
    assert!((s.get("p").unwrap().item() - p).abs() < 1e-14);
    assert_eq!(opt.steps(), 3);
}

#[test]
fn zero_gradient_leaves_parameters() {
    for cfg in [OptimizerConfig::adam(), OptimizerConfig::rmsprop()] {
        let mut s = store_with("p", 0.25, Some(0.0));
        let mut opt = Optimizer::new(cfg).unwrap();
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("p").unwrap().item(), 0.25);
    }
}

#[test]
fn missing_gradient_names_the_parameter() {
    let mut s = store_with("enc.conv1.w", 0.0, None);
    let mut opt = Optimizer::<f64>::new(OptimizerConfig::adam()).unwrap();
    match opt.step(&mut s) {
        Err(CoreError::MissingGradient(name)) => assert_eq!(name, "enc.conv1.w"),
        other => panic!("expected missing-gradient fault, got {other:?}"),
    }
    assert_eq!(opt.steps(), 0);
}

#[test]
fn accumulators_are_lazy_and_shaped_like_parameters() {
    let mut s = ParamStore::<f32>::new();
    let mut w = Tensor::zeros(&[2, 3]);
    w.set_grad(vec![1.0; 6]).unwrap();
    s.add("w", w).unwrap();
    s.add_buffer("running", Tensor::zeros(&[4])).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::rmsprop()).unwrap();
    assert!(opt.slot("w").is_none());
    opt.step(&mut s).unwrap();
    let (ms, mom) = opt.slot("w").unwrap();
    assert_eq!((ms.len(), mom.len()), (6, 6));
    assert!(opt.slot("running").is_none(), "buffers are not optimized");
}

#[test]
fn xavier_is_deterministic_and_has_glorot_variance() {
    let a: Tensor<f64> = xavier_init(&[100, 100], 42).unwrap();
    let b: Tensor<f64> = xavier_init(&[100, 100], 42).unwrap();
    assert_eq!(a, b);
    let c: Tensor<f64> = xavier_init(&[100, 100], 43).unwrap();
    assert_ne!(a, c);

    let n = a.len() as f64;
    let mean = a.data().iter().sum::<f64>() / n;
    let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let target = 2.0 / 200.0;
    assert!((var - target).abs() <= 0.2 * target, "variance {var}");
    let stderr = (var / n).sqrt();
    assert!(mean.abs() <= 3.0 * stderr, "mean {mean}");
}

#[test]
fn xavier_rejects_degenerate_shapes() {
    assert!(xavier_init::<f64>(&[10], 1).is_err());
    assert!(xavier_init::<f64>(&[0, 3], 1).is_err());
    let k: Tensor<f32> = xavier_init(&[8, 4, 3, 3], 7).unwrap();
    let bound = (6.0f32 / ((4 * 9 + 8 * 9) as f32)).sqrt();
    assert!(k.data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut s = ParamStore::<f64>::new();
    s.add("enc.w", xavier_init(&[4, 2, 3, 3], 1).unwrap()).unwrap();
    s.add("enc.b", Tensor::from_f64(&[4], &[f64::MIN_POSITIVE, -0.0, 1e300, -1.0 / 3.0]).unwrap()).unwrap();
    s.add_buffer("bn.mean", Tensor::from_f64(&[2], &[0.1, 0.2]).unwrap()).unwrap();
    let bytes = checkpoint::encode(&s);
    assert_eq!(&bytes[..4], b"SPNT");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), checkpoint::VERSION);
    let back: ParamStore<f64> = checkpoint::decode(&bytes).unwrap();
    assert_eq!(back.len(), 3);
    for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.shape(), t2.shape());
        assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(s.is_trainable(n1).unwrap(), back.is_trainable(n2).unwrap());
    }
    assert_eq!(s.checksum(), back.checksum());
    assert_eq!(checkpoint::encode(&back), bytes);
}

#[test]
fn f32_checkpoint_round_trips_through_f64_records() {
    let mut s = ParamStore::<f32>::new();
    s.add("w", xavier_init(&[3, 5], 9).unwrap()).unwrap();
    let back: ParamStore<f32> = checkpoint::decode(&checkpoint::encode(&s)).unwrap();
    assert_eq!(back.get("w").unwrap().data(), s.get("w").unwrap().data());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut s = ParamStore::<f64>::new();
    s.add("w", Tensor::full(&[2, 2], 1.0)).unwrap();
    let bytes = checkpoint::encode(&s);
    assert!(checkpoint::decode::<f64>(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode::<f64>(&bad).is_err());
    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(checkpoint::decode::<f64>(&nan).is_err());
}
