use proptest::prelude::*;
use weakaudio::architectures::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fully_connected_cost_is_closed_form(layers in 1usize..5, units in 1usize..600, labels in 1usize..4000) {
        let cost = count_costs(&build_fully_connected(layers, units, labels).unwrap()).unwrap();
        let input = 96 * 64;
        let expected = (input * units + (layers - 1) * units * units + units * labels) as u64;
        prop_assert_eq!(cost.total_weights, expected);
        prop_assert_eq!(cost.total_multiplies, expected);
    }

    #[test]
    fn bottleneck_leaves_the_trunk_alone(kind in prop::sample::select(ArchitectureKind::ALL.to_vec()), labels in 2usize..5000, units in 1usize..300) {
        let spec = kind.build(labels).unwrap();
        let plain = count_costs(&spec).unwrap();
        let wide = count_costs(&with_bottleneck(&spec, units).unwrap()).unwrap();
        let trunk = spec.head_index().unwrap();
        prop_assert_eq!(&plain.layers[..trunk], &wide.layers[..trunk]);
        let d = spec.embedding_dim().unwrap() as u64;
        prop_assert_eq!(plain.output_head_weights(), d * labels as u64);
        prop_assert_eq!(wide.output_head_weights(), d * units as u64 + units as u64 * labels as u64);
    }

    #[test]
    fn head_scales_linearly_with_labels(kind in prop::sample::select(ArchitectureKind::ALL.to_vec()), labels in 2usize..5000) {
        let a = count_costs(&kind.build(labels).unwrap()).unwrap();
        let b = count_costs(&kind.build(labels + 1).unwrap()).unwrap();
        let d = kind.build(labels).unwrap().embedding_dim().unwrap() as u64;
        prop_assert_eq!(b.total_weights - a.total_weights, d);
        prop_assert_eq!(b.total_multiplies - a.total_multiplies, d);
    }
}

#[test]
fn json_round_trip_preserves_costs() {
    for kind in ArchitectureKind::ALL {
        for spec in [kind.build(527).unwrap(), shrink(&kind.build(8).unwrap(), 0.125).unwrap()] {
            let back = ArchitectureSpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(back.digest(), spec.digest());
            assert_eq!(count_costs(&back).unwrap(), count_costs(&spec).unwrap());
        }
    }
}

#[test]
fn shrinking_keeps_the_output_width() {
    for kind in ArchitectureKind::ALL {
        let small = shrink(&kind.build(8).unwrap(), 0.125).unwrap();
        assert_eq!(small.output_shape().unwrap().numel(), 8);
        let full = count_costs(&kind.build(8).unwrap()).unwrap();
        assert!(count_costs(&small).unwrap().total_weights < full.total_weights / 8, "{kind:?}");
    }
}

#[test]
fn bottleneck_cannot_be_stacked() {
    let spec = with_bottleneck(&build_resnet50(16).unwrap(), 64).unwrap();
    assert!(with_bottleneck(&spec, 64).is_err());
    assert!(with_bottleneck(&build_vgg(16).unwrap(), 0).is_err());
}
