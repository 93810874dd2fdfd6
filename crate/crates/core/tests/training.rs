use vlm_par::config::{Ablation, AttributeSpec, EncoderConfig, LossConfig, ModelConfig, OptimizerKind, TrainConfig};
use vlm_par::model::{FeatureSet, TrainableParams};
use vlm_par::pipeline::{gradcheck_model, random_features};
use vlm_par::training::{forward_backward, train, GradientSet};
use vlm_par::Error;

fn tiny() -> ModelConfig {
    ModelConfig::new(
        EncoderConfig {
            d_model: 8,
            num_layers: 1,
            num_heads: 2,
            mlp_hidden: 16,
            patch_size: 8,
            image_hw: 16,
            max_tokens: 3,
            vocab_size: 32,
        },
        2,
        vec![
            AttributeSpec { name: "hat".into(), prompt: "a hat".into(), num_classes: 2 },
            AttributeSpec { name: "color".into(), prompt: "the color".into(), num_classes: 3 },
        ],
    )
    .unwrap()
}

fn max_diff(a: &GradientSet, b: &GradientSet) -> f64 {
    a.named_tensors()
        .iter()
        .zip(b.named_tensors())
        .flat_map(|((_, x), (_, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_finite_differences_across_loss_settings() {
    let cfg = tiny();
    let losses = [
        LossConfig::default(),
        LossConfig { smoothing: 0.0, ..LossConfig::default() },
        LossConfig { focal_gamma: 0.0, ..LossConfig::default() },
        LossConfig { lambda_ce: 0.0, ..LossConfig::default() },
        LossConfig { lambda_focal: 0.0, smoothing: 0.3, ..LossConfig::default() },
    ];
    for (i, loss) in losses.iter().enumerate() {
        for ablation in [Ablation::Full, Ablation::NoCrossAttention] {
            let r = gradcheck_model(&cfg, loss, 100 + i as u64, ablation, false).unwrap();
            assert!(r.passes(1e-4), "loss {i} {ablation:?}: {:?}", r.groups);
        }
    }
}

#[test]
fn ablated_gradients_cover_heads_only() {
    let cfg = tiny();
    let r = gradcheck_model(&cfg, &LossConfig::default(), 1, Ablation::NoCrossAttention, false).unwrap();
    assert_eq!(r.groups.iter().map(|g| g.name.as_str()).collect::<Vec<_>>(), ["head.0.w", "head.0.b", "head.1.w", "head.1.b"]);
}

#[test]
fn corrupted_gradient_is_caught() {
    let r = gradcheck_model(&tiny(), &LossConfig::default(), 3, Ablation::Full, true).unwrap();
    assert!(!r.passes(1e-4));
}

#[test]
fn attribute_blocks_are_isolated() {
    let two = tiny();
    let one = ModelConfig { attributes: two.attributes[..1].to_vec(), ..two.clone() };
    let data = random_features(&two, 4, 9);
    let sub = FeatureSet { text: data.text[..1].to_vec(), labels: data.labels.iter().map(|l| l[..1].to_vec()).collect(), ..data.clone() };
    let p2 = TrainableParams::init(&two, 5);
    let p1 = TrainableParams { fusion: p2.fusion[..1].to_vec(), heads: p2.heads[..1].to_vec() };
    let batch = [0, 1, 2, 3];
    let loss = LossConfig::default();
    let (_, g2) = forward_backward(&p2, &data, &batch, &two, &loss, Ablation::Full).unwrap();
    let (_, g1) = forward_backward(&p1, &sub, &batch, &one, &loss, Ablation::Full).unwrap();
    // Attribute 0's block sees half the weight in the two-attribute mean.
    let f2 = &g2.fusion.as_ref().unwrap()[0];
    let f1 = &g1.fusion.as_ref().unwrap()[0];
    for ((n, a), (_, b)) in f2.tensors().iter().zip(f1.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() < 1e-12, "{n}");
        }
    }
    assert_eq!(g2.heads[0].w.data().iter().map(|x| 2.0 * x).collect::<Vec<_>>(), g1.heads[0].w.data());
}

#[test]
fn duplicated_batch_keeps_mean() {
    let cfg = tiny();
    let data = random_features(&cfg, 3, 2);
    let p = TrainableParams::init(&cfg, 4);
    let loss = LossConfig::default();
    let (l1, g1) = forward_backward(&p, &data, &[0, 1, 2], &cfg, &loss, Ablation::Full).unwrap();
    let (l2, g2) = forward_backward(&p, &data, &[0, 1, 2, 0, 1, 2], &cfg, &loss, Ablation::Full).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    assert!(max_diff(&g1, &g2) < 1e-12);
}

#[test]
fn thread_count_does_not_change_gradients() {
    let cfg = tiny();
    let data = random_features(&cfg, 16, 6);
    let p = TrainableParams::init(&cfg, 7);
    let batch: Vec<usize> = (0..16).collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| forward_backward(&p, &data, &batch, &cfg, &LossConfig::default(), Ablation::Full).unwrap())
    };
    let (l1, g1) = run(1);
    let (l4, g4) = run(4);
    assert_eq!(l1, l4);
    assert_eq!(max_diff(&g1, &g4), 0.0);
}

#[test]
fn zero_epochs_leave_parameters() {
    let cfg = tiny();
    let data = random_features(&cfg, 4, 1);
    let mut p = TrainableParams::init(&cfg, 2);
    let before = p.clone();
    let h = train(&mut p, &data, &cfg, &TrainConfig { epochs: 0, ..TrainConfig::default() }, &LossConfig::default()).unwrap();
    assert!(h.is_empty());
    assert_eq!(p, before);
}

#[test]
fn training_is_deterministic_and_moves_parameters() {
    let cfg = tiny();
    let data = random_features(&cfg, 10, 3);
    let tc = TrainConfig { epochs: 4, batch_size: 3, learning_rate: 1e-2, seed: 8, ..TrainConfig::default() };
    let run = || {
        let mut p = TrainableParams::init(&cfg, 2);
        let h = train(&mut p, &data, &cfg, &tc, &LossConfig::default()).unwrap();
        (p, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_ne!(a, TrainableParams::init(&cfg, 2));
    assert_eq!(ha.len(), 4);
}

#[test]
fn sgd_lowers_loss_on_a_fixed_batch() {
    let cfg = tiny();
    let data = random_features(&cfg, 6, 11);
    let tc = TrainConfig { epochs: 30, batch_size: 6, learning_rate: 0.05, optimizer: OptimizerKind::Sgd, ..TrainConfig::default() };
    let mut p = TrainableParams::init(&cfg, 2);
    let h = train(&mut p, &data, &cfg, &tc, &LossConfig::default()).unwrap();
    assert!(h.last().unwrap().loss < h[0].loss);
}

#[test]
fn non_finite_features_name_the_sample() {
    let cfg = tiny();
    let mut data = random_features(&cfg, 2, 1);
    data.samples[1].f_img.data_mut()[0] = f64::NAN;
    let p = TrainableParams::init(&cfg, 2);
    let err = forward_backward(&p, &data, &[0, 1], &cfg, &LossConfig::default(), Ablation::Full).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert!(err.to_string().contains("g1"), "{err}");
}

#[test]
fn empty_batch_rejected() {
    let cfg = tiny();
    let data = random_features(&cfg, 2, 1);
    let p = TrainableParams::init(&cfg, 2);
    assert!(forward_backward(&p, &data, &[], &cfg, &LossConfig::default(), Ablation::Full).is_err());
}
