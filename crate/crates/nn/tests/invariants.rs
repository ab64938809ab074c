use proptest::prelude::*;
use qdarray_nn::io::{decode_weights, encode_weights};
use qdarray_nn::{
    charge_accuracy, gradient_check, LayerSpec, LossKind, Network, NetworkSpec, Shape,
};

fn small_cnn() -> NetworkSpec {
    NetworkSpec::new(
        Shape::image(1, 8, 8),
        vec![
            LayerSpec::Conv { features: 2, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..1000, x in proptest::collection::vec(-5.0f64..5.0, 128)) {
        let net = Network::new(small_cnn(), seed).unwrap();
        let out = net.forward(&x, 2).unwrap();
        for row in out.chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn predict_is_independent_of_chunking(seed in 0u64..1000, chunk in 1usize..7, x in proptest::collection::vec(-1.0f64..1.0, 6 * 64)) {
        let net = Network::new(small_cnn(), seed).unwrap();
        let whole = net.forward(&x, 6).unwrap();
        let chunked = net.predict(&x, chunk).unwrap();
        for (a, b) in whole.iter().zip(&chunked) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_round_trip_bit_exact(seed in any::<u64>(), hidden in proptest::collection::vec(1usize..20, 0..3)) {
        let net = Network::new(NetworkSpec::mlp(7, &hidden, 4), seed).unwrap();
        let back = decode_weights(&encode_weights(&net).unwrap()).unwrap();
        prop_assert_eq!(back.spec(), net.spec());
        let x: Vec<f64> = (0..14).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, b) = (net.forward(&x, 2).unwrap(), back.forward(&x, 2).unwrap());
        prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn charge_accuracy_follows_rounding(labels in proptest::collection::vec(0u32..12, 1..50), off in -0.49f64..0.49) {
        let pred: Vec<f64> = labels.iter().map(|&l| l as f64 + off).collect();
        prop_assert_eq!(charge_accuracy(&pred, &labels).unwrap(), 1.0);
        let far: Vec<f64> = labels.iter().map(|&l| l as f64 + 0.6).collect();
        prop_assert_eq!(charge_accuracy(&far, &labels).unwrap(), 0.0);
    }
}

#[test]
fn gradients_of_the_sub_map_classifier_match_finite_differences() {
    let net = Network::new(small_cnn(), 3).unwrap();
    let x: Vec<f64> = (0..128).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect();
    let t = [0.2, 0.5, 0.3, 1.0, 0.0, 0.0];
    let err = gradient_check(&net, &x, &t, 2, LossKind::CrossEntropy, 1e-6).unwrap();
    assert!(err < 1e-4, "{err}");
}
