use ganprint::baselines::{eigenface_fit, knn_classify, prnu_fit, Denoiser};
use ganprint::synth::{fingerprint_pattern, sample_split, seed_sources};
use ganprint::vis::corr;
use ganprint::{Image, LabeledDataset, Record};
use nalgebra::DVector;

fn dataset(classes: usize, records: Vec<Record>) -> LabeledDataset {
    LabeledDataset::new((0..classes).map(|c| format!("c{c}")).collect(), records).unwrap()
}

fn noisy_set(n: usize, seed: u64) -> LabeledDataset {
    let sources = seed_sources(2, seed, 0.02);
    let (train, _) = sample_split(&sources, seed, n, 1, 16, true).unwrap();
    train.dataset
}

#[test]
fn knn_returns_label_of_identical_training_image() {
    let data = noisy_set(5, 1);
    for r in data.records() {
        assert_eq!(knn_classify(&data, &r.image, 1).unwrap(), r.label);
    }
}

#[test]
fn knn_full_k_on_balanced_set_uses_the_tie_rules() {
    // Every class gets the same number of votes; the class whose images are
    // closer on average wins, and an exact tie falls to class 0.
    let rec = |v: f32, label| Record {
        image: Image::filled(2, 2, 1, v),
        label,
    };
    let data = dataset(2, vec![rec(0.2, 0), rec(0.4, 0), rec(0.6, 1), rec(0.8, 1)]);
    assert_eq!(knn_classify(&data, &Image::filled(2, 2, 1, 0.45), 4).unwrap(), 0);
    assert_eq!(knn_classify(&data, &Image::filled(2, 2, 1, 0.55), 4).unwrap(), 1);
    assert_eq!(knn_classify(&data, &Image::filled(2, 2, 1, 0.5), 4).unwrap(), 0);
}

fn gray_ramp(h: usize, w: usize, offset: f32) -> Image {
    Image::from_fn(h, w, 1, |y, x, _| 0.2 + offset + 0.01 * (y * w + x) as f32 / (h * w) as f32)
}

#[test]
fn eigen_basis_is_orthonormal_and_complete() {
    let data = noisy_set(6, 2);
    let model = eigenface_fit(&data, 1000).unwrap();
    let k = model.components();
    assert!(k < data.len());
    let gram = model.basis.tr_mul(&model.basis);
    for i in 0..k {
        for j in 0..k {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - want).abs() < 1e-8, "gram[{i},{j}] = {}", gram[(i, j)]);
        }
    }
    // a full-rank basis rebuilds every training image
    for r in data.records() {
        let gray = r.image.grayscale();
        let back = model.reconstruct(&model.project(&r.image).unwrap());
        let rms = (gray.data().iter().zip(back.iter()).map(|(&a, &b)| (a as f64 - b).powi(2)).sum::<f64>()
            / back.len() as f64)
            .sqrt();
        assert!(rms < 1e-4, "rms {rms}");
    }
}

#[test]
fn reconstruction_error_does_not_grow_with_k() {
    let data = noisy_set(6, 3);
    let img = &data.records()[3].image;
    let gray = DVector::from_iterator(256, img.grayscale().data().iter().map(|&v| v as f64));
    let mut last = f64::INFINITY;
    for k in [1, 2, 4, 8, 11] {
        let m = eigenface_fit(&data, k).unwrap();
        let err = (&gray - m.reconstruct(&m.project(img).unwrap())).norm();
        assert!(err <= last + 1e-9, "k={k}: {err} > {last}");
        last = err;
    }
}

#[test]
fn mean_image_projects_to_zero() {
    let data = noisy_set(4, 4);
    let m = eigenface_fit(&data, 5).unwrap();
    let mean = Image::new(16, 16, 1, m.mean.iter().map(|&v| v as f32).collect()).unwrap();
    let p = m.project(&mean).unwrap();
    assert!(p.amax() < 1e-5, "{p}");
}

#[test]
fn one_component_separates_a_single_pattern() {
    let pattern = fingerprint_pattern(5, 8, 8, 1);
    let mut records = Vec::new();
    for i in 0..6 {
        let offset = 0.01 * i as f32;
        records.push(Record {
            image: gray_ramp(8, 8, offset),
            label: 0,
        });
        records.push(Record {
            image: gray_ramp(8, 8, offset).zip_map(&pattern, |a, p| a + 0.05 * p),
            label: 1,
        });
    }
    let data = dataset(2, records);
    let m = eigenface_fit(&data, 1).unwrap();
    for r in data.records() {
        assert_eq!(m.classify(&r.image).unwrap(), r.label);
    }
}

#[test]
fn single_image_class_fingerprint_is_its_residual() {
    let pattern = fingerprint_pattern(1, 8, 8, 3);
    let image = Image::filled(8, 8, 3, 0.5).zip_map(&pattern, |a, p| a + 0.02 * p);
    let other = Image::filled(8, 8, 3, 0.4).zip_map(&fingerprint_pattern(2, 8, 8, 3), |a, p| a + 0.02 * p);
    let data = dataset(
        2,
        vec![
            Record { image: image.clone(), label: 0 },
            Record { image: other, label: 1 },
        ],
    );
    let den = Denoiser::default();
    let m = prnu_fit(&data, den).unwrap();
    let want = den.residual(&image);
    assert!(m.fingerprints[0].max_abs_diff(&want) < 1e-7);
}

#[test]
fn prnu_fingerprints_scale_linearly_and_decisions_hold() {
    let data = noisy_set(8, 5);
    let a = 0.5f32;
    let scaled = data.map_images(|_, img| Ok(img.map(|v| v * a))).unwrap();
    let m = prnu_fit(&data, Denoiser::default()).unwrap();
    let ms = prnu_fit(&scaled, Denoiser::default()).unwrap();
    for (f, fs) in m.fingerprints.iter().zip(&ms.fingerprints) {
        assert!(f.map(|v| v * a).max_abs_diff(fs) < 1e-6);
    }
    for r in data.records() {
        assert_eq!(m.classify(&r.image).unwrap(), ms.classify(&r.image.map(|v| v * a)).unwrap());
    }
}

#[test]
fn prnu_beats_chance_on_fingerprinted_sources() {
    let sources = seed_sources(3, 6, 0.02);
    let (train, test) = sample_split(&sources, 6, 60, 30, 32, true).unwrap();
    let m = prnu_fit(&train.dataset, Denoiser::default()).unwrap();
    let correct = test
        .dataset
        .records()
        .iter()
        .filter(|r| m.classify(&r.image).unwrap() == r.label)
        .count();
    let acc = correct as f64 / test.dataset.len() as f64;
    assert!(acc > 0.25 + 0.15, "accuracy {acc}");
}

#[test]
fn prnu_finds_nothing_without_fingerprints() {
    let sources = seed_sources(3, 7, 0.0);
    let (train, test) = sample_split(&sources, 7, 100, 50, 32, true).unwrap();
    let m = prnu_fit(&train.dataset, Denoiser::default()).unwrap();
    for i in 1..4 {
        for j in i + 1..4 {
            let c = corr(&m.fingerprints[i], &m.fingerprints[j]).unwrap();
            assert!(c.abs() < 0.2, "classes {i},{j}: corr {c}");
        }
    }
    let correct = test
        .dataset
        .records()
        .iter()
        .filter(|r| m.classify(&r.image).unwrap() == r.label)
        .count();
    let acc = correct as f64 / test.dataset.len() as f64;
    assert!((acc - 0.25).abs() < 0.1, "accuracy {acc}");
}

#[test]
fn baselines_reject_empty_classes() {
    let data = dataset(
        3,
        vec![
            Record { image: Image::filled(2, 2, 1, 0.1), label: 0 },
            Record { image: Image::filled(2, 2, 1, 0.9), label: 1 },
        ],
    );
    assert!(prnu_fit(&data, Denoiser::default()).is_err());
}
