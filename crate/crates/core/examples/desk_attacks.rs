//! Attack and defense sweep on the 6-class desk dataset, plus the
//! hand-crafted baselines and FD ratios for comparison.
//!
//! Usage: `cargo run --release -p ganprint --example desk_attacks`

use std::time::Instant;

use ganprint::attacks::{immunize, AttackSpec};
use ganprint::attribution::{evaluate, train, ArchConfig, Classifier, TrainConfig};
use ganprint::baselines::{eigenface_fit, knn_predict, prnu_fit, Denoiser, DEFAULT_EIGEN_COMPONENTS};
use ganprint::image::Image;
use ganprint::metrics::{fd_ratio, FeatureSet};
use ganprint::synth::{sample_split, seed_sources};

fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

fn main() -> ganprint::Result<()> {
    let sources = seed_sources(5, 1, 0.02);
    let (train_set, test_set) = sample_split(&sources, 1, 500, 100, 32, true)?;
    let (train_set, test_set) = (train_set.dataset, test_set.dataset);
    let labels = test_set.labels();
    let test_images: Vec<&Image> = test_set.images().collect();

    let t = Instant::now();
    let knn = knn_predict(&train_set, &test_images, 1)?;
    println!("knn {:.3} ({:.1?})", accuracy(&knn, &labels), t.elapsed());
    let t = Instant::now();
    let eig = eigenface_fit(&train_set, DEFAULT_EIGEN_COMPONENTS)?;
    let pred = test_images.iter().map(|i| eig.classify(i)).collect::<ganprint::Result<Vec<_>>>()?;
    println!("eigenface {:.3} ({:.1?})", accuracy(&pred, &labels), t.elapsed());
    let t = Instant::now();
    let prnu = prnu_fit(&train_set, Denoiser::default())?;
    let pred = test_images.iter().map(|i| prnu.classify(i)).collect::<ganprint::Result<Vec<_>>>()?;
    println!("prnu {:.3} ({:.1?})", accuracy(&pred, &labels), t.elapsed());

    let mut net = Classifier::new(ArchConfig::desk(6), 7)?;
    let hyper = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    train(&mut net, &train_set, &hyper)?;
    println!("clean {:.3}", evaluate(&net, &test_set)?.accuracy);

    let feats: Vec<Vec<f64>> = net
        .extract_features(&test_images)?
        .into_iter()
        .map(|f| f.values.iter().map(|&v| v as f64).collect())
        .collect();
    let r = fd_ratio(&FeatureSet::from_labeled(6, feats, &labels)?, 5)?;
    println!("fd ratio net {r:?}");
    let raw: Vec<Vec<f64>> = test_images
        .iter()
        .map(|i| i.grayscale().data().iter().map(|&v| v as f64).collect())
        .collect();
    let t = Instant::now();
    let r = fd_ratio(&FeatureSet::from_labeled(6, raw, &labels)?, 5)?;
    println!("fd ratio raw gray {r:?} ({:.1?})", t.elapsed());

    for text in ["noise:seed=7", "blur:seed=7", "crop:seed=7", "jpeg:seed=7", "relight:seed=7", "combo:seed=7"] {
        let spec: AttackSpec = text.parse()?;
        let attacked = spec.apply_dataset(&test_set, 0)?;
        println!("{text}: {:.3}", evaluate(&net, &attacked)?.accuracy);
    }
    let spec: AttackSpec = "noise:seed=7".parse()?;
    let mut immune = net.clone();
    let t = Instant::now();
    immunize(&mut immune, &train_set, &spec, &hyper)?;
    let attacked = spec.apply_dataset(&test_set, 0)?;
    println!(
        "immunized noise: attacked {:.3}, clean {:.3} ({:.1?})",
        evaluate(&immune, &attacked)?.accuracy,
        evaluate(&immune, &test_set)?.accuracy,
        t.elapsed()
    );
    Ok(())
}
