//! Trains and evaluates an attribution net on the 6-class desk dataset.
//!
//! Usage: `cargo run --release -p ganprint --example desk_attribution [epochs] [amplitude] [arch]`

use std::time::Instant;

use ganprint::attribution::{evaluate, train, ArchConfig, Classifier, TrainConfig, Variant};
use ganprint::synth::{sample_split, seed_sources};

fn main() -> ganprint::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(Ok(6), |s| s.parse()).expect("epochs");
    let amplitude = args.get(2).map_or(Ok(0.02), |s| s.parse()).expect("amplitude");
    let variant: Variant = args.get(3).map_or(Ok(Variant::Full), |s| s.parse())?;

    let t = Instant::now();
    let sources = seed_sources(5, 1, amplitude);
    let (train_set, test_set) = sample_split(&sources, 1, 500, 100, 32, true)?;
    println!("generated in {:.1?}", t.elapsed());

    let config = ArchConfig::desk(6).with_variant(variant);
    let mut net = Classifier::new(config, 7)?;
    let hyper = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    for stats in train(&mut net, &train_set.dataset, &hyper)? {
        println!(
            "epoch {} loss {:.4} train acc {:.3} ({:.1?})",
            stats.epoch,
            stats.loss,
            stats.train_accuracy,
            t.elapsed()
        );
    }
    let eval = evaluate(&net, &test_set.dataset)?;
    println!("test accuracy {:.3}", eval.accuracy);
    Ok(())
}
