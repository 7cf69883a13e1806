use proptest::prelude::*;
use weakaudio_tensor::{Graph, Padding, Tensor, Window};

fn padding() -> impl Strategy<Value = Padding> {
    prop_oneof![Just(Padding::Same), Just(Padding::Valid)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_extent(h in 1usize..12, w in 1usize..12, k in 1usize..5, s in 1usize..4, p in padding(), cout in 1usize..5) {
        prop_assume!(p == Padding::Same || k <= h.min(w));
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(&[2, h, w, 3], 0.5));
        let kernel = g.input(Tensor::full(&[k, k, 3, cout], 0.1));
        let y = g.conv2d(x, kernel, (s, s), p).unwrap();
        let extent = |n: usize| match p {
            Padding::Same => n.div_ceil(s),
            Padding::Valid => (n - k) / s + 1,
        };
        prop_assert_eq!(g.value(y).shape(), &[2, extent(h), extent(w), cout][..]);
    }

    #[test]
    fn max_pool_of_constant_is_constant(h in 1usize..10, w in 1usize..10, k in 1usize..4, s in 1usize..3, v in -5f32..5.0) {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(&[1, h, w, 2], v));
        let y = g.max_pool(x, Window::new((k, k), (s, s), Padding::Same)).unwrap();
        prop_assert!(g.value(y).data().iter().all(|&o| o == v));
    }

    #[test]
    fn avg_pool_preserves_constants(h in 1usize..10, w in 1usize..10, k in 1usize..4, s in 1usize..3, v in -5f64..5.0) {
        // Padded taps are excluded from the average.
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[1, h, w, 1], v));
        let y = g.avg_pool(x, Window::new((k, k), (s, s), Padding::Same)).unwrap();
        prop_assert!(g.value(y).data().iter().all(|&o| (o - v).abs() < 1e-12));
    }

    #[test]
    fn concat_and_flatten_keep_every_element(c1 in 1usize..4, c2 in 1usize..4, h in 1usize..4) {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::from_fn(&[2, h, 3, c1], |i| i as f32));
        let b = g.input(Tensor::from_fn(&[2, h, 3, c2], |i| -(i as f32) - 1.0));
        let cat = g.concat(&[a, b]).unwrap();
        let flat = g.flatten(cat).unwrap();
        prop_assert_eq!(g.value(flat).shape(), &[2, h * 3 * (c1 + c2)][..]);
        let sum: f32 = g.value(flat).data().iter().sum();
        let expected: f32 = g.value(a).data().iter().chain(g.value(b).data()).sum();
        prop_assert_eq!(sum, expected);
    }
}
