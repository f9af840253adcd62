use curvglyph::nn::gradcheck::check_gradients;
use curvglyph::nn::layers::softmax_cross_entropy;
use curvglyph::nn::{Architecture, HiddenSpec, Mlp};
use curvglyph::rng;
use ndarray::Array2;
use rand::Rng;

fn random_case(seed: u64) -> (Mlp<f64>, Array2<f64>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let input_dim = r.random_range(2..=7);
    let depth = r.random_range(1..=3);
    let hidden = (0..depth)
        .map(|_| HiddenSpec {
            units: r.random_range(2..=6),
            dropout: 0.5,
        })
        .collect();
    let num_classes = r.random_range(2..=5);
    let batch = r.random_range(2..=6);
    let arch = Architecture {
        input_dim,
        hidden,
        num_classes,
    };
    let mut model = Mlp::<f64>::new(arch, seed);
    // Move BN away from identity so gamma and beta are exercised.
    for block in &mut model.blocks {
        block.norm.gamma.mapv_inplace(|_| r.random_range(0.5..1.5));
        block.norm.beta.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((batch, input_dim), |_| r.random_range(-1.0..1.0));
    let labels = (0..batch).map(|_| r.random_range(0..num_classes)).collect();
    (model, x, labels)
}

// Dense biases ahead of BatchNorm have a true gradient of exactly zero; their
// difference quotient is pure roundoff near eps·L/h ≈ 1e-11.
const FLOOR: f64 = 1e-6;

#[test]
fn backprop_matches_central_differences() {
    for seed in 0..24 {
        let (model, x, labels) = random_case(seed);
        let check = check_gradients(&model, x.view(), &labels, 1e-5, FLOOR).unwrap();
        assert!(
            check.max_rel_err < 1e-4,
            "seed {seed}: rel err {} at {:?}",
            check.max_rel_err,
            check.worst_at
        );
    }
}

#[test]
fn reference_shape_6_5_4_3() {
    let arch = Architecture {
        input_dim: 6,
        hidden: vec![
            HiddenSpec { units: 5, dropout: 0.0 },
            HiddenSpec { units: 4, dropout: 0.0 },
        ],
        num_classes: 3,
    };
    let model = Mlp::<f64>::new(arch, 7);
    let mut r = rng::seeded(99);
    let x = Array2::from_shape_fn((4, 6), |_| r.random_range(-2.0..2.0));
    let check = check_gradients(&model, x.view(), &[0, 2, 1, 2], 1e-5, FLOOR).unwrap();
    assert_eq!(check.checked, 6 * 5 + 5 + 10 + 5 * 4 + 4 + 8 + 4 * 3 + 3);
    assert!(check.max_rel_err < 1e-4, "{check:?}");
}

#[test]
fn duplicating_the_batch_leaves_the_mean_gradient_unchanged() {
    let (mut model, x, labels) = random_case(3);
    for block in &mut model.blocks {
        block.dropout = 0.0;
    }
    let grads = |x: &Array2<f64>, labels: &[usize]| {
        let mut m = model.clone();
        let (logits, cache) = m.forward_train(x.view(), &mut rng::seeded(0)).unwrap();
        let (loss, d) = softmax_cross_entropy(logits.view(), labels).unwrap();
        let g = m.backward(&cache, d.view()).unwrap();
        (loss, g.slices().iter().map(|s| s.to_vec()).collect::<Vec<_>>())
    };
    let doubled = ndarray::concatenate![ndarray::Axis(0), x, x];
    let labels2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
    let (l1, g1) = grads(&x, &labels);
    let (l2, g2) = grads(&doubled, &labels2);
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
        assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
    }
}
