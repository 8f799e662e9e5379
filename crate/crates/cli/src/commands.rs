use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ganprint::attacks::{immunize, Attack, AttackSpec};
use ganprint::attribution::{evaluate, train, ArchConfig, Classifier, EpochStats, TrainConfig, Variant};
use ganprint::baselines::{eigenface_fit, knn_predict, prnu_fit, Denoiser};
use ganprint::io::{json_bytes, write_atomic};
use ganprint::metrics::{
    fd_ratio, write_confusion_csv, write_per_class_csv, write_summary_csv, ConfusionMatrix, FdRatio, FeatureSet,
    MethodResult,
};
use ganprint::synth::{sample_dataset, seed_sources, Pool, SourceSpec};
use ganprint::tensor::{checkpoint_bytes, read_checkpoint};
use ganprint::vis::{fingerprint_report, train_vis, VisConfig, VisEpochStats, VisHyper, VisNets};
use ganprint::{Error, Image, LabeledDataset, Result};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::provenance::Provenance;
use crate::{
    AttackArgs, AttackSelect, Cli, Command, EvalArgs, FdRatioArgs, FeatureKind, GenArgs, ImmunizeArgs, PoolArg,
    TrainArgs, VisualizeArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    if cli.deterministic {
        // All numerics are single-threaded with a fixed reduction order, so
        // the flag only needs recording.
        info!("deterministic mode");
    }
    let prov = Provenance::new(cli.deterministic);
    match &cli.command {
        Command::Gen(a) => gen(a, prov),
        Command::Train(a) => train_cmd(a, prov),
        Command::Eval(a) => eval(a, prov),
        Command::Attack(a) => attack(a, prov),
        Command::Immunize(a) => immunize_cmd(a, prov),
        Command::Visualize(a) => visualize(a, prov),
        Command::Fdratio(a) => fdratio(a, prov),
    }
}

/// Metadata stored next to a classifier checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    pub arch: ArchConfig,
    pub classes: Vec<String>,
    pub train: TrainConfig,
    pub history: Vec<EpochStats>,
    /// Attack used for finetuning, if the model was immunized.
    #[serde(default)]
    pub immunized_against: Option<AttackSpec>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    kind: String,
    classes: Vec<String>,
    records: usize,
    size: usize,
    base_seed: u64,
    per_class: usize,
    include_real: bool,
    pool: Pool,
    sources: Vec<SourceSpec>,
    provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AttackManifest {
    kind: String,
    attack: AttackSpec,
    /// Canonical spec string, accepted by `--spec`.
    spec: String,
    classes: Vec<String>,
    records: usize,
    provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VisMeta {
    kind: String,
    config: VisConfig,
    hyper: VisHyper,
    classes: Vec<String>,
    history: Vec<VisEpochStats>,
    test_accuracy: f64,
    provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReportMeta {
    kind: String,
    methods: Vec<(String, f64)>,
    fd_ratio: Option<(f64, f64, f64)>,
    provenance: Provenance,
}

fn with_path(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_input(path: &Path, prov: &mut Provenance) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| with_path(path, e))?;
    prov.input(path, &bytes);
    Ok(bytes)
}

fn load_dataset(path: &Path, prov: &mut Provenance) -> Result<LabeledDataset> {
    let bytes = read_input(path, prov)?;
    LabeledDataset::read_gfpd(&bytes[..]).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn load_json<T: DeserializeOwned>(path: &Path, prov: &mut Provenance) -> Result<T> {
    let bytes = read_input(path, prov)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Makes sure an output file can be created before any work starts.
fn prepare_out_file(path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() || path.is_dir() {
        return Err(Error::InvalidArgument(format!("`{}` is not a file path", path.display())));
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| with_path(p, e)),
        _ => Ok(()),
    }
}

fn prepare_out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| with_path(path, e))
}

fn load_model(path: &Path, prov: &mut Provenance) -> Result<(Classifier, ModelMeta)> {
    let meta: ModelMeta = load_json(&sidecar_path(path), prov)?;
    let bytes = read_input(path, prov)?;
    let params = read_checkpoint(&bytes[..])?;
    Ok((Classifier::from_params(meta.arch.clone(), params)?, meta))
}

fn check_classes(model: &[String], data: &[String], data_path: &Path) -> Result<()> {
    if model == data {
        return Ok(());
    }
    eprintln!("model classes:   {}", model.join(", "));
    eprintln!("dataset classes: {} ({})", data.join(", "), data_path.display());
    Err(Error::Format(format!(
        "class table of {} does not match the model",
        data_path.display()
    )))
}

fn attack_spec(sel: &AttackSelect) -> Result<AttackSpec> {
    match (&sel.spec, &sel.kind) {
        (Some(spec), _) => spec.parse(),
        (None, Some(kind)) => {
            let mut attack = Attack::default_for(kind)?;
            if sel.variance {
                match &mut attack {
                    Attack::Noise(p) => p.variance = true,
                    Attack::Combination(p) => p.noise.variance = true,
                    _ => return Err(Error::InvalidArgument("--variance applies to noise and combo".into())),
                }
            }
            attack.validate()?;
            Ok(AttackSpec { attack, seed: sel.seed })
        }
        (None, None) => Err(Error::InvalidArgument("one of --spec or --kind is required".into())),
    }
}

fn gen(a: &GenArgs, prov: Provenance) -> Result<()> {
    prepare_out_file(&a.out)?;
    let n_sources = a.classes.saturating_sub(usize::from(!a.no_real));
    let mut sources = seed_sources(n_sources, a.seed, a.amplitude);
    for s in &mut sources {
        s.filter_strength = a.filter_strength;
        s.validate()?;
    }
    let pool = match a.pool {
        PoolArg::Train => Pool::Train,
        PoolArg::Test => Pool::Test,
    };
    let sampled = sample_dataset(&sources, a.seed, a.per_class, a.size, !a.no_real, pool)?;
    let data = sampled.dataset;
    let manifest = DatasetManifest {
        kind: "dataset".into(),
        classes: data.classes().to_vec(),
        records: data.len(),
        size: a.size,
        base_seed: a.seed,
        per_class: a.per_class,
        include_real: !a.no_real,
        pool,
        sources,
        provenance: prov.seed("base", a.seed),
    };
    write_atomic(&a.out, &data.to_gfpd_bytes()?)?;
    write_atomic(&sidecar_path(&a.out), &json_bytes(&manifest)?)?;
    info!("wrote {} records in {} classes to {}", data.len(), data.num_classes(), a.out.display());
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverride {
    arch: Option<ArchConfig>,
    train: Option<TrainConfig>,
}

fn train_cmd(a: &TrainArgs, mut prov: Provenance) -> Result<()> {
    prepare_out_file(&a.out)?;
    let variant: Variant = a.arch.parse()?;
    let over: TrainOverride = match &a.config {
        Some(p) => load_json(p, &mut prov)?,
        None => TrainOverride::default(),
    };
    let data = load_dataset(&a.data, &mut prov)?;
    let Some((h, w, c)) = data.image_dims() else {
        return Err(Error::InvalidArgument(format!("{} is empty", a.data.display())));
    };
    if h != w {
        return Err(Error::InvalidArgument(format!("images must be square, got {h}x{w}")));
    }
    let arch = over.arch.unwrap_or(ArchConfig {
        input_size: h,
        in_channels: c,
        base_channels: a.base_channels,
        max_channels: a.max_channels,
        variant,
        num_classes: data.num_classes(),
    });
    if arch.num_classes != data.num_classes() || arch.input_size != h || arch.in_channels != c {
        return Err(Error::InvalidArgument(format!(
            "config expects {} classes of {}x{}x{}, dataset has {} of {h}x{w}x{c}",
            arch.num_classes,
            arch.input_size,
            arch.input_size,
            arch.in_channels,
            data.num_classes()
        )));
    }
    let cfg = over.train.unwrap_or(TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
    });
    info!("training {} on {} images for {} epochs", arch.variant, data.len(), cfg.epochs);
    let mut net = Classifier::new(arch.clone(), cfg.seed)?;
    let history = train(&mut net, &data, &cfg)?;
    let meta = ModelMeta {
        kind: "classifier".into(),
        arch,
        classes: data.classes().to_vec(),
        train: cfg.clone(),
        history,
        immunized_against: None,
        provenance: prov.seed("init_and_shuffle", cfg.seed),
    };
    write_atomic(&a.out, &net.checkpoint_bytes())?;
    write_atomic(&sidecar_path(&a.out), &json_bytes(&meta)?)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

fn model_fd_ratio(net: &Classifier, data: &LabeledDataset, split_seed: u64) -> Result<FdRatio> {
    let images: Vec<&Image> = data.images().collect();
    let features = net
        .extract_features(&images)?
        .into_iter()
        .map(|f| to_f64(&f.values))
        .collect();
    fd_ratio(&FeatureSet::from_labeled(data.num_classes(), features, &data.labels())?, split_seed)
}

fn raw_fd_ratio(data: &LabeledDataset, split_seed: u64) -> Result<FdRatio> {
    let features = data.images().map(|img| to_f64(img.grayscale().data())).collect();
    fd_ratio(&FeatureSet::from_labeled(data.num_classes(), features, &data.labels())?, split_seed)
}

fn eval(a: &EvalArgs, mut prov: Provenance) -> Result<()> {
    let (net, meta) = load_model(&a.model, &mut prov)?;
    let data = load_dataset(&a.data, &mut prov)?;
    check_classes(&meta.classes, data.classes(), &a.data)?;
    let baseline_train = match &a.baselines {
        Some(p) => {
            let t = load_dataset(p, &mut prov)?;
            check_classes(&meta.classes, t.classes(), p)?;
            Some(t)
        }
        None => None,
    };
    prepare_out_dir(&a.out_dir)?;

    let k = data.num_classes();
    let truth = data.labels();
    let ours = evaluate(&net, &data)?;
    let fd = if data.class_counts().iter().all(|&n| n >= 4) {
        Some(model_fd_ratio(&net, &data, a.split_seed)?)
    } else {
        warn!("skipping FD ratio: some class has fewer than 4 images");
        None
    };
    info!("ours: accuracy {:.4}", ours.accuracy);
    let mut results = Vec::new();

    if let Some(train_set) = &baseline_train {
        let images: Vec<&Image> = data.images().collect();
        let knn = knn_predict(train_set, &images, a.knn_k)?;
        let eigen = eigenface_fit(train_set, a.eigen_components)?;
        let eigen_pred = images.iter().map(|i| eigen.classify(i)).collect::<Result<Vec<_>>>()?;
        let prnu = prnu_fit(train_set, Denoiser::default())?;
        let prnu_pred = images.iter().map(|i| prnu.classify(i)).collect::<Result<Vec<_>>>()?;
        for (method, pred) in [("knn", knn), ("eigenface", eigen_pred), ("prnu", prnu_pred)] {
            let confusion = ConfusionMatrix::from_predictions(k, &truth, &pred)?;
            info!("{method}: accuracy {:.4}", confusion.accuracy());
            results.push(MethodResult {
                method: method.into(),
                confusion,
                fd_ratio: None,
            });
        }
    }
    results.push(MethodResult {
        method: "ours".into(),
        confusion: ours.confusion,
        fd_ratio: fd.as_ref().map(|f| f.ratio),
    });

    let mut summary = Vec::new();
    write_summary_csv(&results, &mut summary)?;
    let mut per_class = Vec::new();
    write_per_class_csv(&results, data.classes(), &mut per_class)?;
    let mut confusions = Vec::new();
    for r in &results {
        let mut buf = Vec::new();
        write_confusion_csv(&r.confusion, data.classes(), &mut buf)?;
        confusions.push((format!("confusion_{}.csv", r.method), buf));
    }
    let report = ReportMeta {
        kind: "evaluation".into(),
        methods: results.iter().map(|r| (r.method.clone(), r.confusion.accuracy())).collect(),
        fd_ratio: fd.map(|f| (f.inter, f.intra, f.ratio)),
        provenance: prov.seed("split", a.split_seed),
    };
    write_atomic(&a.out_dir.join("summary.csv"), &summary)?;
    write_atomic(&a.out_dir.join("per_class.csv"), &per_class)?;
    for (name, buf) in confusions {
        write_atomic(&a.out_dir.join(name), &buf)?;
    }
    write_atomic(&a.out_dir.join("provenance.json"), &json_bytes(&report)?)?;
    Ok(())
}

fn attack(a: &AttackArgs, mut prov: Provenance) -> Result<()> {
    prepare_out_file(&a.out)?;
    let spec = attack_spec(&a.attack)?;
    let data = load_dataset(&a.data, &mut prov)?;
    let attacked = spec.apply_dataset(&data, 0)?;
    let manifest = AttackManifest {
        kind: "attacked_dataset".into(),
        spec: spec.to_string(),
        attack: spec.clone(),
        classes: attacked.classes().to_vec(),
        records: attacked.len(),
        provenance: prov.seed("attack", spec.seed),
    };
    write_atomic(&a.out, &attacked.to_gfpd_bytes()?)?;
    write_atomic(&sidecar_path(&a.out), &json_bytes(&manifest)?)?;
    info!("wrote {} attacked records to {}", attacked.len(), a.out.display());
    Ok(())
}

fn immunize_cmd(a: &ImmunizeArgs, mut prov: Provenance) -> Result<()> {
    prepare_out_file(&a.out)?;
    let spec = attack_spec(&a.attack)?;
    let (mut net, meta) = load_model(&a.model, &mut prov)?;
    let data = load_dataset(&a.data, &mut prov)?;
    check_classes(&meta.classes, data.classes(), &a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.train_seed,
    };
    info!("immunizing against {spec} for {} epochs", cfg.epochs);
    let history = immunize(&mut net, &data, &spec, &cfg)?;
    let out_meta = ModelMeta {
        kind: "classifier".into(),
        arch: meta.arch,
        classes: meta.classes,
        train: cfg,
        history,
        immunized_against: Some(spec.clone()),
        provenance: prov.seed("attack", spec.seed).seed("shuffle", a.train_seed),
    };
    write_atomic(&a.out, &net.checkpoint_bytes())?;
    write_atomic(&sidecar_path(&a.out), &json_bytes(&out_meta)?)?;
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisOverride {
    vis: Option<VisConfig>,
    hyper: Option<VisHyper>,
}

fn visualize(a: &VisualizeArgs, mut prov: Provenance) -> Result<()> {
    let over: VisOverride = match &a.config {
        Some(p) => load_json(p, &mut prov)?,
        None => VisOverride::default(),
    };
    let data = load_dataset(&a.data, &mut prov)?;
    let test = match &a.test {
        Some(p) => {
            let t = load_dataset(p, &mut prov)?;
            check_classes(data.classes(), t.classes(), p)?;
            t
        }
        None => data.clone(),
    };
    prepare_out_dir(&a.out_dir)?;
    let Some((h, w, c)) = data.image_dims() else {
        return Err(Error::InvalidArgument(format!("{} is empty", a.data.display())));
    };
    let config = over.vis.unwrap_or_else(|| VisConfig {
        height: h,
        width: w,
        channels: c,
        ..VisConfig::desk(data.num_classes())
    });
    let hyper = over.hyper.unwrap_or(VisHyper {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..VisHyper::default()
    });
    let mut nets = VisNets::new(config.clone(), hyper.seed)?;
    let history = train_vis(&mut nets, &data, &hyper)?;

    let images: Vec<&Image> = test.images().collect();
    let pred = nets.attribute(&images)?;
    let confusion = ConfusionMatrix::from_predictions(test.num_classes(), &test.labels(), &pred)?;
    info!("visualization net attribution accuracy {:.4}", confusion.accuracy());
    let result = [MethodResult {
        method: "visnet".into(),
        confusion: confusion.clone(),
        fd_ratio: None,
    }];
    let mut summary = Vec::new();
    write_summary_csv(&result, &mut summary)?;
    let mut conf = Vec::new();
    write_confusion_csv(&confusion, test.classes(), &mut conf)?;
    let meta = VisMeta {
        kind: "visnet".into(),
        config,
        hyper: hyper.clone(),
        classes: data.classes().to_vec(),
        history,
        test_accuracy: confusion.accuracy(),
        provenance: prov.seed("init_and_shuffle", hyper.seed),
    };

    fingerprint_report(&nets, &test, &a.out_dir)?;
    write_atomic(&a.out_dir.join("summary.csv"), &summary)?;
    write_atomic(&a.out_dir.join("confusion_visnet.csv"), &conf)?;
    let ckpt = a.out_dir.join("visnet.gfpc");
    write_atomic(&ckpt, &checkpoint_bytes(&nets.to_param_set()))?;
    write_atomic(&sidecar_path(&ckpt), &json_bytes(&meta)?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FdMeta {
    kind: String,
    features: String,
    inter: f64,
    intra: f64,
    ratio: f64,
    provenance: Provenance,
}

fn fdratio(a: &FdRatioArgs, mut prov: Provenance) -> Result<()> {
    prepare_out_file(&a.out)?;
    let data = load_dataset(&a.data, &mut prov)?;
    let (name, fd) = match a.features {
        FeatureKind::Raw => ("raw_gray", raw_fd_ratio(&data, a.split_seed)?),
        FeatureKind::Model => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--model is required for model features".into()))?;
            let (net, meta) = load_model(path, &mut prov)?;
            check_classes(&meta.classes, data.classes(), &a.data)?;
            ("model", model_fd_ratio(&net, &data, a.split_seed)?)
        }
    };
    info!("{name}: inter {:.6} intra {:.6} ratio {:.6}", fd.inter, fd.intra, fd.ratio);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["features", "inter", "intra", "ratio"])?;
    let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.6}") };
    w.write_record([name.to_string(), fmt(fd.inter), fmt(fd.intra), fmt(fd.ratio)])?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let meta = FdMeta {
        kind: "fd_ratio".into(),
        features: name.into(),
        inter: fd.inter,
        intra: fd.intra,
        ratio: fd.ratio,
        provenance: prov.seed("split", a.split_seed),
    };
    write_atomic(&a.out, &bytes)?;
    write_atomic(&sidecar_path(&a.out), &json_bytes(&meta)?)?;
    Ok(())
}
