use proptest::prelude::*;
use weakaudio::frontend::*;

fn tone(hz: f64, seconds: f64) -> Vec<f32> {
    let n = (seconds * SAMPLE_RATE_HZ as f64) as usize;
    (0..n).map(|i| (0.5 * (std::f64::consts::TAU * hz * i as f64 / SAMPLE_RATE_HZ as f64).sin()) as f32).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn patch_count_follows_frame_count(samples in 0usize..80_000) {
        let frontend = Frontend::new(FrontendConfig::default()).unwrap();
        let clip = WaveformClip::new("c", vec![0.01; samples], SAMPLE_RATE_HZ, Default::default()).unwrap();
        let patches = frontend.extract_patches(&clip).unwrap();
        prop_assert_eq!(patches.len(), frame_count(samples) / PATCH_FRAMES);
        for (i, p) in patches.iter().enumerate() {
            prop_assert_eq!(p.patch_index, i);
            prop_assert!((p.start_time_s - i as f64 * PATCH_SECONDS).abs() < 1e-12);
        }
    }
}

#[test]
fn tone_energy_lands_near_its_band() {
    let frontend = Frontend::new(FrontendConfig::default()).unwrap();
    let fb = frontend.filterbank();
    for hz in [250.0, 700.0, 1500.0, 3000.0, 5500.0] {
        let spec = frontend.stft_samples(&tone(hz, 0.3)).unwrap();
        let energy: Vec<f64> = fb.apply(spec.row(spec.rows() / 2)).iter().map(|a| a * a).collect();
        let peak = (0..NUM_BANDS).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        let target = hz_to_mel(hz);
        let nearest = (0..NUM_BANDS)
            .min_by(|&a, &b| (hz_to_mel(fb.center_hz(a)) - target).abs().total_cmp(&(hz_to_mel(fb.center_hz(b)) - target).abs()))
            .unwrap();
        assert!(peak.abs_diff(nearest) <= 1, "{hz} Hz peaks in band {peak}, nearest centre is band {nearest}");
    }
}

#[test]
fn patches_inherit_clip_labels() {
    let frontend = Frontend::new(FrontendConfig::default()).unwrap();
    let labels = [LabelId(3), LabelId(9)].into_iter().collect();
    let clip = WaveformClip::new("x", tone(440.0, 3.0), SAMPLE_RATE_HZ, labels).unwrap();
    let patches = frontend.extract_patches(&clip).unwrap();
    assert_eq!(patches.len(), 3);
    assert!(patches.iter().all(|p| p.labels == *clip.labels() && p.clip_id == "x"));
    assert!(patches.iter().flat_map(|p| &p.values).all(|v| v.is_finite()));
}

#[test]
fn rejects_other_sample_rates_and_clipping() {
    assert!(WaveformClip::new("a", vec![0.0; 100], 44_100, Default::default()).is_err());
    assert!(WaveformClip::new("b", vec![1.5; 100], SAMPLE_RATE_HZ, Default::default()).is_err());
    assert!(WaveformClip::new("c", vec![f32::NAN], SAMPLE_RATE_HZ, Default::default()).is_err());
}
