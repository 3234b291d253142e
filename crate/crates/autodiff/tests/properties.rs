use autodiff::{gradcheck, AdamW, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        rng_seed: RngSeed::Fixed(0x5eed),
        ..ProptestConfig::default()
    })]

    #[test]
    fn detach_preserves_bits(v in vals(7)) {
        let tape = Tape::new();
        let x = Tensor::leaf(&tape, vec![7], v.clone()).unwrap();
        let d = x.detach().detach();
        prop_assert_eq!(d.data(), v.as_slice());
        prop_assert!(!d.requires_grad());
    }

    #[test]
    fn linear_gradient_is_coefficient(a in vals(6), x in vals(6)) {
        let tape = Tape::new();
        let xt = Tensor::leaf(&tape, vec![6], x).unwrap();
        let at = Tensor::constant(vec![6], a.clone()).unwrap();
        let g = at.mul(&xt).unwrap().sum().unwrap().backward().unwrap();
        prop_assert_eq!(g.get(&xt).unwrap(), a.as_slice());
    }

    #[test]
    fn mlp_block_gradcheck(x in vals(12), w in vals(12), b in vals(4)) {
        let weights = Tensor::constant(vec![4, 4], (0..16).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let f = |t: &[Tensor]| {
            t[0].matmul(&t[1])?.add_bias(&t[2])?.swish()?.instance_norm(1, 1e-5)?.mul(&weights)?.sum()
        };
        let inputs = vec![(vec![4, 3], x), (vec![3, 4], w), (vec![4], b)];
        let report = gradcheck(&f, &inputs, 1e-5).unwrap();
        prop_assert!(report.max_rel_err < 1e-5, "{:?}", report);
    }

    #[test]
    fn adamw_moments_keep_shape(g in vals(5), steps in 1usize..6) {
        let mut store = ParamStore::new();
        store.insert("p", vec![5], vec![0.0; 5]).unwrap();
        let mut opt = AdamW::new(1e-3, 1e-8);
        for _ in 0..steps {
            opt.step(&mut store, &[g.clone()]).unwrap();
        }
        prop_assert_eq!(opt.state.step, steps as u64);
        prop_assert_eq!(opt.state.m[0].len(), 5);
        prop_assert_eq!(opt.state.v[0].len(), 5);
        for (p, gi) in store.get("p").unwrap().data.iter().zip(&g) {
            // steps never exceed lr in magnitude and oppose the gradient
            prop_assert!(p.abs() <= 1e-3 * steps as f64 + 1e-12);
            if gi.abs() > 1e-6 { prop_assert!(p * gi <= 0.0); }
        }
    }
}
