use ganprint::synth::{sample_dataset, seed_sources, Pool};
use ganprint::tensor::{Graph, ParamSet, Tensor};
use ganprint::vis::{
    cls_loss, corr, fingerprint_report, gradient_penalty_of, pix_loss, train_vis, LossWeights, VisConfig, VisHyper,
    VisNets,
};
use ganprint::{Error, Image, LabeledDataset};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn img(h: usize, w: usize, data: &[f32]) -> Image {
    Image::new(h, w, 1, data.to_vec()).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.random_range(0.0f32..1.0))
}

#[test]
fn corr_examples() {
    let a = img(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    let b = img(2, 2, &[0.0, 0.0, 1.0, 1.0]);
    // zero-mean: a = (-1,-1,-1,3)/4, b = (-1,-1,1,1)/2
    let want = 0.5 / 0.75f64.sqrt();
    assert!((corr(&a, &b).unwrap() - want).abs() < 1e-6);
    assert!((corr(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!((corr(&a, &a.map(|v| -v)).unwrap() + 1.0).abs() < 1e-12);
    assert!(matches!(corr(&a, &Image::filled(2, 2, 1, 0.3)), Err(Error::DegenerateNorm(_))));
    assert!(corr(&a, &Image::filled(1, 4, 1, 0.3)).is_err());
}

proptest! {
    #[test]
    fn corr_is_symmetric_bounded_and_affine_invariant(seed in any::<u64>(), scale in -4.0f32..4.0, shift in -1.0f32..1.0) {
        prop_assume!(scale.abs() > 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 4, 5, 2);
        let b = random_image(&mut rng, 4, 5, 2);
        let ab = corr(&a, &b).unwrap();
        prop_assert!((ab - corr(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ab.abs() <= 1.0 + 1e-6);
        let t = corr(&a.map(|v| scale * v + shift), &b).unwrap();
        prop_assert!((t - scale.signum() as f64 * ab).abs() < 1e-4, "{t} vs {ab}");
    }
}

#[test]
fn pix_loss_examples() {
    let a = img(2, 2, &[0.1, 0.2, 0.3, 0.4]);
    assert_eq!(pix_loss(&a, &a).unwrap(), 0.0);
    assert!((pix_loss(&a, &a.map(|v| v + 0.5)).unwrap() - 0.5).abs() < 1e-6);
    let mut b = a.clone();
    b.set(1, 0, 0, 1.3);
    assert!((pix_loss(&a, &b).unwrap() - 0.25).abs() < 1e-6);
}

#[test]
fn cls_loss_examples() {
    let f = img(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    let neg = f.map(|v| -v);
    let loss = cls_loss(&f, &[f.clone(), neg.clone()], 0).unwrap();
    assert!((loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-9);
    assert!((loss - 0.1269).abs() < 1e-4);
    let same = cls_loss(&f, &[f.clone(), f.clone(), f.clone()], 1).unwrap();
    assert!((same - 3.0f64.ln()).abs() < 1e-9);
    let shifted = cls_loss(&f.map(|v| v + 0.7), &[f.clone(), neg], 0).unwrap();
    assert!((shifted - loss).abs() < 1e-6);
    assert!(cls_loss(&f, &[f.clone()], 1).is_err());
}

#[test]
fn total_objective_uses_the_fixed_weights() {
    let w = LossWeights::default();
    assert!((w.total(1.0, 1.0, 1.0) - 21.1).abs() < 1e-12);
    let no_adv = LossWeights { adv: 0.0, ..w };
    assert_eq!(no_adv.total(0.3, 5.0, 0.7), 20.0 * 0.3 + 0.7);
}

fn tiny_config(critic: Vec<usize>) -> VisConfig {
    VisConfig {
        height: 8,
        width: 8,
        channels: 1,
        num_classes: 2,
        encoder_channels: vec![3, 4],
        critic_channels: critic,
        ..VisConfig::desk(2)
    }
}

fn batch(rng: &mut ChaCha8Rng, n: usize, c: &VisConfig) -> Tensor<f64> {
    Tensor::from_fn(&[n, c.height, c.width, c.channels], |_| rng.random_range(0.0..1.0))
}

#[test]
fn identical_reconstruction_gives_zero_critic_gap() {
    let nets: VisNets<f64> = VisNets::new(tiny_config(vec![2, 3]), 0).unwrap();
    let x = batch(&mut ChaCha8Rng::seed_from_u64(0), 3, nets.config());
    let a = nets.critic_scores(&x).unwrap();
    let b = nets.critic_scores(&x.clone()).unwrap();
    assert!(a.iter().zip(&b).all(|(p, q)| p - q == 0.0));
}

#[test]
fn constant_critic_penalty_is_the_weight() {
    let mut nets: VisNets<f64> = VisNets::new(tiny_config(vec![2, 3]), 1).unwrap();
    let names: Vec<String> = nets.critic.names().map(String::from).collect();
    for n in names {
        nets.critic.value_mut(&n).unwrap().data_mut().fill(0.0);
    }
    let x = batch(&mut ChaCha8Rng::seed_from_u64(1), 4, nets.config());
    assert!((nets.gradient_penalty(&x).unwrap() - 10.0).abs() < 1e-12);
    assert_eq!(gradient_penalty_of(&[0.0; 5], 10.0), 10.0);
}

#[test]
fn unit_linear_critic_has_no_penalty() {
    // without convolutions the critic is D(x) = <w, x> + b
    let mut nets: VisNets<f64> = VisNets::new(tiny_config(vec![]), 2).unwrap();
    let w = nets.critic.value_mut("critic.fc.weight").unwrap();
    let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in w.data_mut() {
        *v /= norm;
    }
    let x = batch(&mut ChaCha8Rng::seed_from_u64(2), 3, nets.config());
    assert!(nets.gradient_penalty(&x).unwrap() < 1e-20);
    assert!(gradient_penalty_of(&[0.6, 0.8], 10.0) < 1e-20);
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn penalty_parameter_gradient_matches_finite_differences() {
    let mut nets: VisNets<f64> = VisNets::new(tiny_config(vec![2, 3]), 3).unwrap();
    let x = batch(&mut ChaCha8Rng::seed_from_u64(3), 3, nets.config());
    nets.critic.zero_grad();
    let gp = nets.accumulate_gradient_penalty(&x).unwrap();
    assert!((gp - nets.gradient_penalty(&x).unwrap()).abs() < 1e-12);
    let names: Vec<String> = nets.critic.names().map(String::from).collect();
    let h = 1e-6;
    let mut checked = 0;
    for name in names {
        let analytic = nets.critic.grad(&name).unwrap().clone();
        for i in 0..analytic.len() {
            let mut plus = nets.clone();
            plus.critic.value_mut(&name).unwrap().data_mut()[i] += h;
            let mut minus = nets.clone();
            minus.critic.value_mut(&name).unwrap().data_mut()[i] -= h;
            let fd = (plus.gradient_penalty(&x).unwrap() - minus.gradient_penalty(&x).unwrap()) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(rel_err(a, fd) <= 1e-3, "{name}[{i}]: analytic {a}, numeric {fd}");
            checked += 1;
        }
    }
    assert!(checked > 50);
}

/// Generator-side objective terms for parameter `set`, as recorded in training.
fn objective_terms(nets: &VisNets<f64>, x: &Tensor<f64>, labels: &[usize], w: (f64, f64, f64)) -> (Vec<f64>, f64) {
    let mut g = Graph::new();
    let xv = g.input(x.clone()).unwrap();
    let r = nets.reconstruct(&mut g, xv).unwrap();
    let diff = g.sub(r, xv).unwrap();
    let pix = g.mean_abs(diff).unwrap();
    let (scores, _) = nets.critic_forward(&mut g, r).unwrap();
    let mean_score = g.mean(scores).unwrap();
    let adv = g.scale(mean_score, -1.0).unwrap();
    let (cls, _) = nets.cls_loss_graph(&mut g, diff, labels).unwrap();
    let a = g.scale(pix, w.0).unwrap();
    let b = g.scale(adv, w.1).unwrap();
    let c = g.scale(cls, w.2).unwrap();
    let ab = g.add(a, b).unwrap();
    let total = g.add(ab, c).unwrap();
    let grads = g.backward(total).unwrap();
    let mut params = nets.reconstructor.clone();
    params.zero_grad();
    grads.accumulate_owned(&g, &mut params).unwrap();
    let mut bank = nets.bank.clone();
    bank.zero_grad();
    grads.accumulate_owned(&g, &mut bank).unwrap();
    (flatten_grads(&params).into_iter().chain(flatten_grads(&bank)).collect(), g.scalar(total))
}

fn flatten_grads(p: &ParamSet<f64>) -> Vec<f64> {
    p.iter().flat_map(|(_, v)| v.grad.data().to_vec()).collect()
}

#[test]
fn objective_gradient_is_the_weighted_sum_of_term_gradients() {
    let nets: VisNets<f64> = VisNets::new(tiny_config(vec![2, 3]), 4).unwrap();
    let x = batch(&mut ChaCha8Rng::seed_from_u64(4), 2, nets.config());
    let labels = [0, 1];
    let (w1, w2, w3) = (20.0, 0.1, 1.0);
    let (total, _) = objective_terms(&nets, &x, &labels, (w1, w2, w3));
    let (gp, _) = objective_terms(&nets, &x, &labels, (1.0, 0.0, 0.0));
    let (ga, _) = objective_terms(&nets, &x, &labels, (0.0, 1.0, 0.0));
    let (gc, _) = objective_terms(&nets, &x, &labels, (0.0, 0.0, 1.0));
    for i in 0..total.len() {
        let combo = w1 * gp[i] + w2 * ga[i] + w3 * gc[i];
        assert!((total[i] - combo).abs() <= 1e-9 * (1.0 + combo.abs()), "{i}");
    }

    // and the total gradient agrees with central differences
    let names: Vec<String> = nets.reconstructor.names().map(String::from).collect();
    let mut offset = 0;
    let h = 1e-6;
    for name in names {
        let len = nets.reconstructor.value(&name).unwrap().len();
        for i in (0..len).step_by(7) {
            let eval = |delta: f64| {
                let mut n = nets.clone();
                n.reconstructor.value_mut(&name).unwrap().data_mut()[i] += delta;
                objective_terms(&n, &x, &labels, (w1, w2, w3)).1
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = total[offset + i];
            assert!(rel_err(a, fd) <= 1e-3, "{name}[{i}]: analytic {a}, numeric {fd}");
        }
        offset += len;
    }
}

fn tiny_data(per_class: usize, pool: Pool) -> LabeledDataset {
    sample_dataset(&seed_sources(2, 5, 0.05), 5, per_class, 16, true, pool).unwrap().dataset
}

fn data_config() -> VisConfig {
    VisConfig {
        height: 16,
        width: 16,
        encoder_channels: vec![4, 8],
        critic_channels: vec![4, 8],
        ..VisConfig::desk(3)
    }
}

fn hyper(epochs: usize) -> VisHyper {
    VisHyper {
        epochs,
        batch_size: 8,
        seed: 3,
        ..VisHyper::default()
    }
}

#[test]
fn bank_is_frozen_without_the_classification_term() {
    let data = tiny_data(6, Pool::Train);
    let mut cfg = data_config();
    cfg.weights.cls = 0.0;
    let mut nets = VisNets::new(cfg, 0).unwrap();
    let bank = nets.bank.clone();
    let recon = nets.reconstructor.clone();
    train_vis(&mut nets, &data, &hyper(2)).unwrap();
    assert_eq!(nets.bank.value("bank"), bank.value("bank"));
    assert_ne!(nets.reconstructor, recon);

    let mut nets = VisNets::new(data_config(), 0).unwrap();
    train_vis(&mut nets, &data, &hyper(1)).unwrap();
    assert_ne!(nets.bank.value("bank"), bank.value("bank"));
}

#[test]
fn vis_training_is_reproducible_and_checkpoints_round_trip() {
    let data = tiny_data(4, Pool::Train);
    let run = || {
        let mut nets = VisNets::new(data_config(), 9).unwrap();
        let hist = train_vis(&mut nets, &data, &hyper(2)).unwrap();
        (nets, hist)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert!(ha.iter().all(|s| s.pix.is_finite() && s.critic.is_finite() && s.gp >= 0.0));
    let back = VisNets::from_param_set(data_config(), a.to_param_set()).unwrap();
    assert_eq!(back.to_param_set(), a.to_param_set());
    let mut missing = ParamSet::new();
    for (n, v) in a.to_param_set().iter().filter(|(n, _)| *n != "bank") {
        missing.insert(n, v.value.clone());
    }
    assert!(VisNets::from_param_set(data_config(), missing).is_err());
}

#[test]
fn report_writes_images_and_a_bounded_reproducible_matrix() {
    let data = tiny_data(4, Pool::Train);
    let mut nets = VisNets::new(data_config(), 1).unwrap();
    train_vis(&mut nets, &data, &hyper(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = fingerprint_report(&nets, &data, dir.path()).unwrap();
    assert_eq!(m.len(), 3);
    assert!(m.iter().flatten().all(|v| v.abs() <= 1.0 + 1e-9));
    for class in data.classes() {
        for kind in ["model", "image"] {
            let bytes = std::fs::read(dir.path().join(format!("{kind}_{class}.ppm"))).unwrap();
            assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
            assert_eq!(bytes.len(), 13 + 16 * 16 * 3);
        }
    }
    let first = std::fs::read(dir.path().join("responses.csv")).unwrap();
    fingerprint_report(&nets, &data, dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("responses.csv")).unwrap(), first);
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("fingerprints.json")).unwrap()).unwrap();
    assert!(sidecar.to_string().contains("mapping"));
}

#[test]
fn train_vis_rejects_empty_data() {
    let empty = LabeledDataset::new(vec!["a".into(), "b".into(), "c".into()], vec![]).unwrap();
    let mut nets = VisNets::new(data_config(), 0).unwrap();
    assert!(train_vis(&mut nets, &empty, &hyper(1)).is_err());
}
