//! Trains the fingerprint visualization net on the 6-class desk dataset.
//!
//! Usage: `cargo run --release -p ganprint --example desk_vis [epochs]`

use std::time::Instant;

use ganprint::image::Image;
use ganprint::synth::{sample_split, seed_sources};
use ganprint::vis::{response_matrix, train_vis, VisConfig, VisHyper, VisNets};

fn main() -> ganprint::Result<()> {
    let epochs = std::env::args().nth(1).map_or(6, |s| s.parse().expect("epochs"));
    let sources = seed_sources(5, 1, 0.02);
    let (train_set, test_set) = sample_split(&sources, 1, 500, 100, 32, true)?;
    let mut nets = VisNets::<f32>::new(VisConfig::desk(6), 3)?;
    let t = Instant::now();
    let hyper = VisHyper {
        epochs,
        ..VisHyper::default()
    };
    for s in train_vis(&mut nets, &train_set.dataset, &hyper)? {
        println!("{s:?}");
    }
    println!("trained in {:.1?}", t.elapsed());
    let images: Vec<&Image> = test_set.dataset.images().collect();
    let predicted = nets.attribute(&images)?;
    let labels = test_set.dataset.labels();
    let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
    println!("test accuracy {:.3}", correct as f64 / labels.len() as f64);
    for row in response_matrix(&nets, &test_set.dataset)? {
        println!("{}", row.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
