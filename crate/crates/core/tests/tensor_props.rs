use proptest::prelude::*;
use qapseg::tensor::{avg_pool2d, conv2d, dilate_kernel, max_pool2d, qat, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

#[test]
fn dilated_conv_equals_zero_inserted_kernel() {
    for d in [1, 2, 3, 4, 9] {
        for seed in 0..5 {
            let x = rand_t([2, 3, 25, 23], seed);
            let k = rand_t([4, 3, 3, 3], seed + 100);
            let a = conv2d(&x, &k, None, 1, d, d).unwrap();
            let b = conv2d(&x, &dilate_kernel(&k, d).unwrap(), None, 1, d, 1).unwrap();
            assert_eq!(a.shape(), b.shape());
            assert!(a.max_abs_diff(&b) < 1e-5, "d={d}: {}", a.max_abs_diff(&b));
        }
    }
}

proptest! {
    #[test]
    fn avg_pool_partitions_preserve_sum(seed in 0u64..10_000, w in 1usize..5, bh in 1usize..5, bw in 1usize..5) {
        let x = rand_t([1, 2, w * bh, w * bw], seed);
        let y = avg_pool2d(&x, w, w).unwrap();
        prop_assert!((y.sum() * (w * w) as f64 - x.sum()).abs() < 1e-4);
        let m = max_pool2d(&x, w, w).unwrap();
        prop_assert!(m.data().iter().zip(y.data()).all(|(a, b)| a >= b));
    }

    #[test]
    fn softmax_is_a_distribution(seed in 0u64..10_000, c in 1usize..7) {
        let mut x = rand_t([2, c, 3, 4], seed);
        x.data_mut().iter_mut().for_each(|v| *v *= 40.0);
        let mut g = Graph::new();
        let v = g.leaf(x);
        let y = g.softmax_channels(v);
        let y = g.value(y);
        for n in 0..2 {
            for p in 0..12 {
                let s: f64 = (0..c).map(|ch| y.data()[(n * c + ch) * 12 + p] as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
        prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn qat_round_trip_is_bitwise(seed in 0u64..10_000, n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6) {
        let mut t = rand_t([n, c, h, w], seed);
        t.data_mut()[0] = f32::from_bits(0x7fc0_0001);
        t.data_mut()[(n * c * h * w) - 1] = -0.0;
        let mut buf = vec![];
        qat::encode(&t, &mut buf);
        prop_assert_eq!(buf.len(), qat::encoded_len(t.shape()));
        let (back, used) = qat::decode(&buf).unwrap();
        prop_assert_eq!(used, buf.len());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
        prop_assert_eq!(back.shape(), t.shape());
        for cut in [0, 3, 10, buf.len() - 1] {
            prop_assert!(qat::decode(&buf[..cut]).is_err());
        }
    }
}
