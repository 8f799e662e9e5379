use ganprint::metrics::{
    fd_ratio, frechet_distance, gaussian_fit, write_confusion_csv, write_per_class_csv, write_summary_csv,
    ConfusionMatrix, FeatureSet, GaussianStats, MethodResult,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn stats_1d(mean: f64, var: f64) -> GaussianStats {
    GaussianStats {
        mean: DVector::from_element(1, mean),
        covariance: DMatrix::from_element(1, 1, var),
        n: 100,
    }
}

#[test]
fn fit_of_two_copies_is_epsilon_only() {
    let v = vec![0.5, -1.0, 2.0];
    let s = gaussian_fit(&[v.clone(), v.clone()]).unwrap();
    assert_eq!(s.mean.as_slice(), v.as_slice());
    for i in 0..3 {
        for j in 0..3 {
            let c = s.covariance[(i, j)];
            if i == j {
                assert!(c > 0.0 && c <= 1e-9, "diagonal {c}");
            } else {
                assert_eq!(c, 0.0);
            }
        }
    }
}

#[test]
fn fit_is_unbiased_and_order_free() {
    let s = gaussian_fit(&[vec![0.0], vec![2.0]]).unwrap();
    assert_eq!(s.mean[0], 1.0);
    // unbiased variance 2, plus the 1e-6 * trace / d regularizer
    assert!((s.covariance[(0, 0)] - 2.0).abs() < 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
    let a = gaussian_fit(&rows).unwrap();
    rows.reverse();
    let b = gaussian_fit(&rows).unwrap();
    assert!((a.mean - b.mean).amax() < 1e-12);
    assert!((a.covariance - b.covariance).amax() < 1e-12);
    assert!(gaussian_fit(&[vec![1.0]]).is_err());
}

#[test]
fn frechet_one_dimensional_examples() {
    assert!((frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-9);
    assert!((frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-9);
    assert!(frechet_distance(&stats_1d(3.0, 2.0), &stats_1d(3.0, 2.0)).unwrap() <= 1e-9);
}

#[test]
fn frechet_rejects_dimension_mismatch() {
    let b = GaussianStats {
        mean: DVector::zeros(2),
        covariance: DMatrix::identity(2, 2),
        n: 2,
    };
    assert!(frechet_distance(&stats_1d(0.0, 1.0), &b).is_err());
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn random_stats(d: usize, rng: &mut ChaCha8Rng) -> GaussianStats {
    GaussianStats {
        mean: DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)),
        covariance: random_spd(d, rng),
        n: 10,
    }
}

proptest! {
    #[test]
    fn frechet_is_symmetric_and_non_negative(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_stats(d, &mut rng);
        let b = random_stats(d, &mut rng);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab.abs()));
        prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-9 * (1.0 + a.covariance.trace()));
    }

    #[test]
    fn frechet_of_diagonal_stats_is_sum_of_1d_closed_forms(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut total, mut ma, mut mb, mut va, mut vb) = (0.0, vec![], vec![], vec![], vec![]);
        for _ in 0..d {
            let (m1, m2): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (s1, s2): (f64, f64) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
            total += (m1 - m2).powi(2) + (s1 - s2).powi(2);
            ma.push(m1); mb.push(m2); va.push(s1 * s1); vb.push(s2 * s2);
        }
        let a = GaussianStats { mean: DVector::from_vec(ma), covariance: DMatrix::from_diagonal(&DVector::from_vec(va)), n: 2 };
        let b = GaussianStats { mean: DVector::from_vec(mb), covariance: DMatrix::from_diagonal(&DVector::from_vec(vb)), n: 2 };
        prop_assert!((frechet_distance(&a, &b).unwrap() - total).abs() < 1e-9);
    }
}

fn gaussian_class(n: usize, d: usize, shift: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

#[test]
fn fd_ratio_of_one_distribution_is_near_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let set = FeatureSet {
        classes: (0..3).map(|_| gaussian_class(200, 8, 0.0, &mut rng)).collect(),
    };
    let r = fd_ratio(&set, 0).unwrap();
    assert!((0.5..=1.5).contains(&r.ratio), "ratio {}", r.ratio);
}

#[test]
fn fd_ratio_of_separated_classes_is_large() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let set = FeatureSet {
        classes: vec![gaussian_class(2000, 1, -10.0, &mut rng), gaussian_class(2000, 1, 10.0, &mut rng)],
    };
    let r = fd_ratio(&set, 0).unwrap();
    assert!(r.ratio > 1000.0, "ratio {}", r.ratio);
}

#[test]
fn fd_ratio_is_affine_invariant_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let classes: Vec<_> = (0..3).map(|c| gaussian_class(50, 1, c as f64, &mut rng)).collect();
    let mapped: Vec<_> = classes
        .iter()
        .map(|c| c.iter().map(|v| vec![-3.5 * v[0] + 12.0]).collect())
        .collect();
    let a = fd_ratio(&FeatureSet { classes }, 4).unwrap();
    let b = fd_ratio(&FeatureSet { classes: mapped }, 4).unwrap();
    assert!((a.ratio - b.ratio).abs() < 1e-6 * a.ratio, "{} vs {}", a.ratio, b.ratio);
}

#[test]
fn fd_ratio_is_deterministic_and_checks_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let set = FeatureSet {
        classes: (0..2).map(|_| gaussian_class(20, 3, 0.0, &mut rng)).collect(),
    };
    assert_eq!(fd_ratio(&set, 3).unwrap(), fd_ratio(&set, 3).unwrap());
    let small = FeatureSet {
        classes: vec![gaussian_class(3, 2, 0.0, &mut rng), gaussian_class(10, 2, 0.0, &mut rng)],
    };
    assert!(fd_ratio(&small, 0).is_err());
}

#[test]
fn identical_halves_give_infinite_ratio() {
    let set = FeatureSet {
        classes: vec![vec![vec![0.0]; 4], vec![vec![1.0]; 4]],
    };
    assert!(fd_ratio(&set, 0).unwrap().ratio.is_infinite());
}

fn methods() -> (Vec<MethodResult>, Vec<String>) {
    let truth = [0, 0, 1, 1, 2, 2];
    let classes = vec!["real".to_string(), "a".into(), "b".into()];
    let results = [
        ("knn", [0, 1, 1, 0, 2, 1]),
        ("eigenface", [0, 0, 1, 2, 2, 1]),
        ("prnu", [0, 0, 1, 1, 2, 1]),
        ("ours", [0, 0, 1, 1, 2, 2]),
    ]
    .into_iter()
    .map(|(m, pred)| MethodResult {
        method: m.into(),
        confusion: ConfusionMatrix::from_predictions(3, &truth, &pred).unwrap(),
        fd_ratio: (m == "ours").then_some(12.5),
    })
    .collect();
    (results, classes)
}

#[test]
fn accuracy_is_trace_over_total() {
    let (results, _) = methods();
    for r in &results {
        let c = &r.confusion;
        assert_eq!(c.accuracy(), c.trace() as f64 / c.total() as f64);
        assert_eq!(c.row_sums(), vec![2, 2, 2]);
    }
}

#[test]
fn report_has_one_row_per_method_and_is_reproducible() {
    let (results, classes) = methods();
    let mut a = Vec::new();
    write_summary_csv(&results, &mut a).unwrap();
    let mut b = Vec::new();
    write_summary_csv(&results, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "method,accuracy,fd_ratio");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["knn", "eigenface", "prnu", "ours"]);
    assert_eq!(rows[4], "ours,1.000000,12.500000");

    let mut per_class = Vec::new();
    write_per_class_csv(&results, &classes, &mut per_class).unwrap();
    assert_eq!(String::from_utf8(per_class).unwrap().lines().count(), 1 + 4 * 3);
    let mut conf = Vec::new();
    write_confusion_csv(&results[0].confusion, &classes, &mut conf).unwrap();
    let conf = String::from_utf8(conf).unwrap();
    assert_eq!(conf.lines().next().unwrap(), "true\\predicted,real,a,b");
    assert_eq!(conf.lines().nth(1).unwrap(), "real,1,1,0");
}
