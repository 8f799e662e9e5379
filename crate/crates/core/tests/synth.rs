use ganprint::synth::{
    fingerprint_pattern, gen_base_images, make_source, pattern_correlation, sample_dataset, sample_split,
    seed_sources, Pool, SourceSpec,
};
use std::collections::HashSet;

fn spec(seed: u64, amplitude: f64, filter: f64) -> SourceSpec {
    SourceSpec {
        seed,
        pattern_amplitude: amplitude,
        filter_strength: filter,
        label: format!("s{seed}"),
    }
}

#[test]
fn base_images_are_deterministic_and_in_range() {
    let a = gen_base_images(5, 8, 32).unwrap();
    let b = gen_base_images(5, 8, 32).unwrap();
    assert_eq!(a, b);
    for img in &a {
        assert_eq!(img.dims(), (32, 32, 3));
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn base_image_means_stay_mid_range() {
    let imgs = gen_base_images(11, 1000, 16).unwrap();
    let inside = imgs.iter().filter(|i| (0.2..=0.8).contains(&i.mean())).count();
    assert!(inside >= 990, "only {inside} of 1000 means in [0.2, 0.8]");
}

#[test]
fn different_seeds_give_different_images() {
    let a = gen_base_images(1, 20, 32).unwrap();
    let b = gen_base_images(2, 20, 32).unwrap();
    let mad: f64 = a.iter().zip(&b).map(|(x, y)| x.mean_abs_diff(y)).sum::<f64>() / 20.0;
    assert!(mad > 0.05, "mean abs difference {mad}");
}

#[test]
fn zero_amplitude_zero_filter_is_identity() {
    let t = make_source(&spec(3, 0.0, 0.0), 32, 32, 3).unwrap();
    for img in gen_base_images(4, 5, 32).unwrap() {
        assert_eq!(t.apply(&img).unwrap(), img);
    }
}

#[test]
fn transform_is_deterministic() {
    let img = gen_base_images(9, 1, 32).unwrap().remove(0);
    let a = make_source(&spec(7, 0.02, 0.5), 32, 32, 3).unwrap().apply(&img).unwrap();
    let b = make_source(&spec(7, 0.02, 0.5), 32, 32, 3).unwrap().apply(&img).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, img);
}

#[test]
fn patterns_are_zero_mean_unit_variance() {
    let p = fingerprint_pattern(42, 32, 32, 3);
    let n = p.len() as f64;
    let mean = p.mean();
    let var = p.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-6, "mean {mean}");
    assert!((var - 1.0).abs() < 1e-4, "variance {var}");
}

#[test]
fn patterns_of_different_seeds_are_nearly_orthogonal() {
    let sources = seed_sources(16, 123, 0.02);
    let patterns: Vec<_> = sources.iter().map(|s| fingerprint_pattern(s.seed, 32, 32, 3)).collect();
    for i in 0..patterns.len() {
        for j in i + 1..patterns.len() {
            let c = pattern_correlation(&patterns[i], &patterns[j]);
            assert!(c.abs() < 0.1, "sources {i},{j}: corr {c}");
        }
    }
}

#[test]
fn real_plus_one_source_is_balanced() {
    let sampled = sample_dataset(&[spec(1, 0.02, 0.0)], 0, 7, 16, true, Pool::Train).unwrap();
    let d = sampled.dataset;
    assert_eq!(d.classes(), ["real".to_string(), "s1".to_string()]);
    assert_eq!(d.class_counts(), vec![7, 7]);
}

#[test]
fn train_and_test_pools_share_no_base_image() {
    let sources = seed_sources(3, 9, 0.02);
    let (train, test) = sample_split(&sources, 9, 20, 10, 16, true).unwrap();
    let train_ids: HashSet<_> = train.base_ids.iter().collect();
    assert!(test.base_ids.iter().all(|id| !train_ids.contains(id)));
    // and the underlying images differ too
    let real_train: Vec<_> = train.dataset.records().iter().filter(|r| r.label == 0).collect();
    let real_test: Vec<_> = test.dataset.records().iter().filter(|r| r.label == 0).collect();
    for a in &real_test {
        assert!(real_train.iter().all(|b| b.image != a.image));
    }
}

#[test]
fn sampling_rejects_bad_arguments() {
    let sources = seed_sources(2, 0, 0.02);
    assert!(sample_dataset(&sources, 0, 0, 32, true, Pool::Train).is_err());
    assert!(sample_dataset(&sources, 0, 1, 24, true, Pool::Train).is_err());
    assert!(sample_dataset(&sources[..1], 0, 1, 32, false, Pool::Train).is_err());
    let mut dup = sources.clone();
    dup[1].label = dup[0].label.clone();
    assert!(sample_dataset(&dup, 0, 1, 32, false, Pool::Train).is_err());
    assert!(spec(1, 0.2, 0.0).validate().is_err());
}

#[test]
fn sampled_dataset_bytes_are_reproducible() {
    let sources = seed_sources(2, 4, 0.02);
    let a = sample_dataset(&sources, 4, 5, 16, true, Pool::Test).unwrap();
    let b = sample_dataset(&sources, 4, 5, 16, true, Pool::Test).unwrap();
    assert_eq!(a.dataset.to_gfpd_bytes().unwrap(), b.dataset.to_gfpd_bytes().unwrap());
    let back = ganprint::LabeledDataset::read_gfpd(&a.dataset.to_gfpd_bytes().unwrap()[..]).unwrap();
    assert_eq!(back.classes(), a.dataset.classes());
    assert_eq!(back.labels(), a.dataset.labels());
}
