use bst_kernel::{softmax_tau, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shift(
        logits in prop::collection::vec(-50.0f64..50.0, 1..20),
        shift in -100.0f64..100.0,
        tau in 1e-3f64..10.0,
    ) {
        let p = softmax_tau(&Tensor::row(&logits).unwrap(), tau).unwrap();
        let total: f64 = p.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|x| x.is_finite() && *x >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let q = softmax_tau(&Tensor::row(&shifted).unwrap(), tau).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxation_sharpens_as_temperature_falls(
        logits in prop::collection::vec(-5.0f64..5.0, 2..10),
    ) {
        let t = Tensor::row(&logits).unwrap();
        let best = t.argmax_rows()[0];
        let l1 = |tau: f64| {
            let p = softmax_tau(&t, tau).unwrap();
            p.data().iter().enumerate().map(|(i, x)| if i == best { 1.0 - x } else { *x }).sum::<f64>()
        };
        let mut prev = f64::INFINITY;
        for tau in [1.0, 0.5, 0.1, 0.05, 0.01, 1e-3] {
            let d = l1(tau);
            prop_assert!(d <= prev + 1e-12);
            prev = d;
        }
    }
}

#[test]
fn seeded_init_and_forward_are_bit_identical() {
    let run = || {
        let mut rng = rand::rngs::StdRng::seed_from_u64(77);
        let mut store = ParamStore::new();
        let w = store.uniform("w", &[4, 3], 0.1, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 4, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap());
        let wv = g.param(&store, w);
        let y = g.matmul(x, wv).unwrap();
        let y = g.tanh(y).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
