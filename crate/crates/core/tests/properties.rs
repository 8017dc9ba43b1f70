//! Property tests over randomized shapes and values: structural inverses
//! and metric identities that must hold for any input, not just fixtures.

use proptest::prelude::*;

use bplf_core::data::quantize::{to_image, to_model_input};
use bplf_core::reshape::{concat_channels, split_channels, squeeze, unsqueeze};
use bplf_core::train::bits_per_dim;
use bplf_core::Tensor;

proptest! {
    #[test]
    fn squeeze_unsqueeze_is_identity(
        c in 1usize..4,
        half_h in 1usize..5,
        half_w in 1usize..5,
        seed in any::<u64>(),
    ) {
        let (h, w) = (2 * half_h, 2 * half_w);
        let n = c * h * w;
        let data: Vec<f64> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 500.0 - 1.0).collect();
        let x = Tensor::new(vec![c, h, w], data).unwrap();
        let s = squeeze(&x).unwrap();
        prop_assert_eq!(s.shape(), &[4 * c, h / 2, w / 2]);
        let back = unsqueeze(&s).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn split_concat_is_identity(
        half_c in 1usize..4,
        h in 1usize..5,
        w in 1usize..5,
        fill in -10.0f64..10.0,
    ) {
        let c = 2 * half_c;
        let x = Tensor::new(
            vec![c, h, w],
            (0..c * h * w).map(|i| fill + i as f64).collect(),
        ).unwrap();
        let (a, b) = split_channels(&x).unwrap();
        prop_assert_eq!(concat_channels(&a, &b).unwrap(), x);
    }

    #[test]
    fn quantization_maps_into_valid_pixels(v in -2.0f32..2.0) {
        let x = Tensor::new(vec![1, 1, 1], vec![v]).unwrap();
        let p = to_image(&x).unwrap().data()[0];
        prop_assert!((0.0..=255.0).contains(&p));
        prop_assert_eq!(p, p.round());
    }

    #[test]
    fn quantization_round_trips_all_bytes(p in 0u8..=255) {
        let t = Tensor::new(vec![1, 1, 1], vec![p as f32]).unwrap();
        let mut rng = rand::rng();
        let x = to_model_input(&t, false, &mut rng);
        prop_assert!((-1.0..1.0).contains(&x.data()[0]));
        prop_assert_eq!(to_image(&x).unwrap().data()[0], p as f32);
    }

    #[test]
    fn bits_per_dim_is_affine_in_nats(ll in -1e4f64..1e4, d in 1usize..4096) {
        // one extra nat of likelihood per dim removes 1/ln2 bits
        let base = bits_per_dim(ll, d);
        let shifted = bits_per_dim(ll + d as f64 * std::f64::consts::LN_2, d);
        prop_assert!((base - shifted - 1.0).abs() < 1e-9);
    }
}
