use mmfuse::data::features::{decode_features, encode_features, HEADER_LEN};
use mmfuse::data::{
    augment, read_features, uniform_subsample, window_starts, write_features, FeatureSequence,
    Modality,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sequence(max_t: usize, max_d: usize) -> impl Strategy<Value = FeatureSequence> {
    (1..=max_t, 1..=max_d).prop_flat_map(|(t, d)| {
        prop::collection::vec(
            prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL,
            t * d,
        )
        .prop_map(move |data| FeatureSequence::new(Modality::Image, t, d, data).unwrap())
    })
}

fn bits(s: &FeatureSequence) -> Vec<u32> {
    s.data().iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn feature_bytes_roundtrip(seq in sequence(64, 512)) {
        let bytes = encode_features(&seq).unwrap();
        prop_assert_eq!(bytes.len(), HEADER_LEN + seq.steps() * seq.dim() * 4);
        let back = decode_features(&bytes, Modality::Image).unwrap();
        prop_assert_eq!((back.steps(), back.dim()), (seq.steps(), seq.dim()));
        prop_assert_eq!(bits(&back), bits(&seq));
    }

    #[test]
    fn augment_with_zero_noise_and_mask_is_identity(seq in sequence(32, 16), seed in any::<u64>()) {
        let out = augment(&seq, 0.0, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(bits(&out), bits(&seq));
    }

    #[test]
    fn full_mask_zeroes_everything(seq in sequence(32, 16), seed in any::<u64>(), sigma in 0.0f64..2.0) {
        let out = augment(&seq, sigma, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn window_starts_cover_the_clip(n in 1usize..2000, stride in 1usize..80) {
        let starts = window_starts(n, 64, stride).unwrap();
        if n < 64 {
            prop_assert_eq!(starts, vec![0]);
        } else {
            prop_assert_eq!(starts[0], 0);
            prop_assert!(starts.windows(2).all(|w| w[1] == w[0] + stride));
            let last = *starts.last().unwrap();
            prop_assert!(last + 64 <= n && last + stride + 64 > n);
        }
    }
}

#[test]
fn feature_files_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (i, (t, d)) in [(1, 1), (16, 3), (64, 512), (7, 100)]
        .into_iter()
        .enumerate()
    {
        let data: Vec<f32> = (0..t * d)
            .map(|_| rand::Rng::gen_range(&mut rng, -1e3f32..1e3))
            .collect();
        let seq = FeatureSequence::new(Modality::Text, t, d, data).unwrap();
        let path = dir.path().join(format!("s{i}.mmfb"));
        write_features(&path, &seq).unwrap();
        let back = read_features(&path, Modality::Text).unwrap();
        assert_eq!(bits(&back), bits(&seq));
        assert_eq!(
            std::fs::metadata(&path).unwrap().len() as usize,
            HEADER_LEN + t * d * 4
        );
    }
}

#[test]
fn mask_fraction_converges() {
    let t = 10_000;
    let seq = FeatureSequence::new(Modality::Video, t, 2, vec![1.0; t * 2]).unwrap();
    for (seed, p) in [(0u64, 0.1), (1, 0.5), (2, 0.9)] {
        let out = augment(&seq, 0.0, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let zeroed = (0..t)
            .filter(|&r| out.row(r).iter().all(|&x| x == 0.0))
            .count();
        let frac = zeroed as f64 / t as f64;
        assert!(
            (frac - p).abs() <= 0.02,
            "mask_p {p}: zeroed fraction {frac}"
        );
    }
}

#[test]
fn augment_is_deterministic_per_seed() {
    let seq =
        FeatureSequence::new(Modality::Video, 16, 4, (0..64).map(|i| i as f32).collect()).unwrap();
    let a = augment(&seq, 0.3, 0.2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = augment(&seq, 0.3, 0.2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn uniform_subsample_exhaustive() {
    for window in 1..=4096usize {
        for k in 1..=window {
            let idx = uniform_subsample(window, k).unwrap();
            assert_eq!(idx.len(), k);
            assert_eq!(idx[0], 0);
            assert!(idx[k - 1] < window, "window {window}, k {k}");
            assert!(
                idx.windows(2).all(|w| w[0] < w[1]),
                "window {window}, k {k}"
            );
        }
        assert!(uniform_subsample(window, window + 1).is_err());
    }
}
