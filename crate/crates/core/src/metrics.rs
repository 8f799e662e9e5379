//! Accuracy bookkeeping and the Fréchet-distance class-separability ratio.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::seed::rng_for;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_predictions(num_classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return invalid(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            ));
        }
        let mut m = Self::new(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return invalid(format!("class index out of range for {num_classes} classes"));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Precision of `class`; 0 when the class is never predicted.
    pub fn precision(&self, class: usize) -> f64 {
        let predicted: usize = self.counts.iter().map(|r| r[class]).sum();
        ratio(self.counts[class][class], predicted)
    }

    /// Recall of `class`; 0 when the class has no samples.
    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.counts[class].iter().sum())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance plus `eps * I`, where
/// `eps = 1e-6 * trace / d` (floored at 1e-12 so all-equal samples stay
/// positive definite).
pub fn gaussian_fit(vectors: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = vectors.len();
    if n < 2 {
        return invalid(format!("need at least 2 vectors for a Gaussian fit, got {n}"));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return invalid("vectors must share one positive dimension");
    }
    let mut mean = DVector::zeros(d);
    for v in vectors {
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut centered = DMatrix::zeros(d, n);
    for (j, v) in vectors.iter().enumerate() {
        for i in 0..d {
            centered[(i, j)] = v[i] - mean[i];
        }
    }
    let mut cov = &centered * centered.transpose() / (n - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    let eps = (1e-6 * cov.trace() / d as f64).max(1e-12);
    for i in 0..d {
        cov[(i, i)] += eps;
    }
    Ok(GaussianStats {
        mean,
        covariance: cov,
        n,
    })
}

/// Symmetric PSD square root; negative eigenvalues are clipped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`, clamped at 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    frechet_with_root(a, &sqrt_psd(&a.covariance), b)
}

/// [`frechet_distance`] with `S_a^1/2` precomputed. The trace of a PSD
/// square root is the sum of clipped eigenvalue roots, so the inner root
/// needs eigenvalues only.
fn frechet_with_root(a: &GaussianStats, root_a: &DMatrix<f64>, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim()));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let inner = root_a * &b.covariance * root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = inner.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).sum();
    let fd = diff + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    if !fd.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(fd.max(0.0))
}

/// Features grouped by class, all of one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub classes: Vec<Vec<Vec<f64>>>,
}

impl FeatureSet {
    /// Groups `(feature, label)` pairs into `num_classes` buckets.
    pub fn from_labeled(num_classes: usize, features: Vec<Vec<f64>>, labels: &[usize]) -> Result<Self> {
        if features.len() != labels.len() {
            return invalid("one label per feature required");
        }
        let mut classes = vec![Vec::new(); num_classes];
        for (f, &l) in features.into_iter().zip(labels) {
            if l >= num_classes {
                return invalid(format!("label {l} out of range"));
            }
            classes[l].push(f);
        }
        Ok(Self { classes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdRatio {
    pub inter: f64,
    pub intra: f64,
    /// `inter / intra`; `f64::INFINITY` when `intra` is 0.
    pub ratio: f64,
}

/// Mean FD over unordered class pairs divided by the mean FD between two
/// seeded random halves of each class.
pub fn fd_ratio(features: &FeatureSet, split_seed: u64) -> Result<FdRatio> {
    let k = features.classes.len();
    if k < 2 {
        return invalid("FD ratio needs at least 2 classes");
    }
    if let Some(c) = features.classes.iter().position(|c| c.len() < 4) {
        return invalid(format!("class {c} has fewer than 4 samples"));
    }
    let fits = features
        .classes
        .iter()
        .map(|c| gaussian_fit(c))
        .collect::<Result<Vec<_>>>()?;
    let roots: Vec<DMatrix<f64>> = fits.iter().map(|f| sqrt_psd(&f.covariance)).collect();
    let mut inter = 0.0;
    let mut pairs = 0;
    for i in 0..k {
        for j in i + 1..k {
            inter += frechet_with_root(&fits[i], &roots[i], &fits[j])?;
            pairs += 1;
        }
    }
    inter /= pairs as f64;

    let mut intra = 0.0;
    for (c, samples) in features.classes.iter().enumerate() {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng_for(split_seed, &[c as u64]));
        let half = samples.len() / 2;
        let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        let a = gaussian_fit(&pick(&order[..half]))?;
        let b = gaussian_fit(&pick(&order[half..2 * half]))?;
        intra += frechet_distance(&a, &b)?;
    }
    intra /= k as f64;
    let ratio = if intra == 0.0 {
        warn!("intra-class FD is zero; reporting an infinite ratio");
        f64::INFINITY
    } else {
        inter / intra
    };
    Ok(FdRatio { inter, intra, ratio })
}

/// One method's evaluation for the CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: String,
    pub confusion: ConfusionMatrix,
    pub fd_ratio: Option<f64>,
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Writes `method,accuracy,fd_ratio` rows.
pub fn write_summary_csv<W: Write>(results: &[MethodResult], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["method", "accuracy", "fd_ratio"])?;
    for r in results {
        let fd = r.fd_ratio.map(fmt_f64).unwrap_or_default();
        csv.write_record([r.method.as_str(), &fmt_f64(r.confusion.accuracy()), &fd])?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes `method,class,precision,recall,support` rows.
pub fn write_per_class_csv<W: Write>(results: &[MethodResult], classes: &[String], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["method", "class", "precision", "recall", "support"])?;
    for r in results {
        let support = r.confusion.row_sums();
        for (c, name) in classes.iter().enumerate() {
            csv.write_record([
                r.method.as_str(),
                name,
                &fmt_f64(r.confusion.precision(c)),
                &fmt_f64(r.confusion.recall(c)),
                &support[c].to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Writes the confusion matrix with a header of class names; the first
/// column holds the true class.
pub fn write_confusion_csv<W: Write>(m: &ConfusionMatrix, classes: &[String], w: W) -> Result<()> {
    if classes.len() != m.num_classes() {
        return invalid("class table does not match the confusion matrix");
    }
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(classes.iter().cloned());
    csv.write_record(&header)?;
    for (name, row) in classes.iter().zip(m.counts()) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|c| c.to_string()));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes a square real-valued matrix with a header row of class names.
pub fn write_matrix_csv<W: Write>(m: &[Vec<f64>], classes: &[String], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["class".to_string()];
    header.extend(classes.iter().cloned());
    csv.write_record(&header)?;
    for (name, row) in classes.iter().zip(m) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}
