//! Hand-crafted attribution baselines: kNN on raw pixels, Eigenface and a
//! PRNU-style mean-residual fingerprint.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::filters::gaussian_blur;
use crate::image::Image;
use crate::vis::corr;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Majority vote over the `k` nearest training images (Euclidean on raw
/// pixels). Vote ties go to the class with the smaller mean distance among
/// its voters, then to the smaller class index.
pub fn knn_classify(train: &LabeledDataset, image: &Image, k: usize) -> Result<usize> {
    if train.is_empty() {
        return invalid("kNN needs a non-empty training set");
    }
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if train.image_dims() != Some(image.dims()) {
        return invalid(format!("query {:?} does not match training images", image.dims()));
    }
    let mut dists: Vec<(f64, usize)> = train
        .records()
        .iter()
        .map(|r| (sq_dist(r.image.data(), image.data()), r.label))
        .collect();
    let k = k.min(dists.len());
    dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes = vec![(0usize, 0.0f64); train.num_classes()];
    for &(d, label) in &dists[..k] {
        votes[label].0 += 1;
        votes[label].1 += d.sqrt();
    }
    let mut best = 0;
    for c in 1..votes.len() {
        let (n, s) = votes[c];
        let (bn, bs) = votes[best];
        // means compared as s/n < bs/bn without dividing
        if n > bn || (n == bn && n > 0 && s * (bn as f64) < bs * (n as f64)) {
            best = c;
        }
    }
    Ok(best)
}

pub fn knn_predict(train: &LabeledDataset, images: &[&Image], k: usize) -> Result<Vec<usize>> {
    images.iter().map(|img| knn_classify(train, img, k)).collect()
}

/// PCA of grayscale images plus per-class centroids in component space.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenModel {
    pub height: usize,
    pub width: usize,
    pub mean: DVector<f64>,
    /// `d x k`, orthonormal columns ordered by decreasing variance.
    pub basis: DMatrix<f64>,
    pub centroids: Vec<DVector<f64>>,
}

pub const DEFAULT_EIGEN_COMPONENTS: usize = 64;

fn gray_vector(image: &Image) -> DVector<f64> {
    DVector::from_iterator(image.height() * image.width(), image.grayscale().data().iter().map(|&v| v as f64))
}

/// Fits `k` principal components (truncated to the numerical rank of the
/// centered data, with a warning).
pub fn eigenface_fit(train: &LabeledDataset, k: usize) -> Result<EigenModel> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    let Some((height, width, _)) = train.image_dims() else {
        return invalid("Eigenface needs a non-empty training set");
    };
    let d = height * width;
    let n = train.len();
    let mut x = DMatrix::zeros(d, n);
    for (j, img) in train.images().enumerate() {
        x.set_column(j, &gray_vector(img));
    }
    let mean = x.column_mean();
    for mut col in x.column_iter_mut() {
        col -= &mean;
    }

    // Eigenvectors of the smaller of X X^T (d x d) and X^T X (n x n).
    let (values, vectors) = if n < d {
        let eig = SymmetricEigen::new(x.transpose() * &x);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let eig = SymmetricEigen::new(&x * x.transpose());
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let top = values[order[0]].max(0.0);
    let tol = top * 1e-10 * (n.max(d) as f64);
    let rank = order.iter().take_while(|&&i| values[i] > tol).count();
    if rank == 0 {
        return Err(Error::Numerical("training images have no variance".into()));
    }
    let k = if k > rank {
        warn!("requested {k} components but the data has rank {rank}; using {rank}");
        rank
    } else {
        k
    };

    let mut basis = DMatrix::zeros(d, k);
    for (c, &i) in order[..k].iter().enumerate() {
        let col = if n < d {
            // X v / |X v| maps a Gram eigenvector to a pixel-space one.
            let u = &x * vectors.column(i);
            let norm = u.norm();
            u / norm
        } else {
            vectors.column(i).into_owned()
        };
        basis.set_column(c, &col);
    }

    let mut model = EigenModel {
        height,
        width,
        mean,
        basis,
        centroids: Vec::new(),
    };
    let mut sums = vec![DVector::zeros(k); train.num_classes()];
    let mut counts = vec![0usize; train.num_classes()];
    for r in train.records() {
        sums[r.label] += model.project(&r.image)?;
        counts[r.label] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return invalid(format!("class {c} has no training images"));
    }
    model.centroids = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect();
    Ok(model)
}

impl EigenModel {
    pub fn components(&self) -> usize {
        self.basis.ncols()
    }

    /// Component coefficients of the centered grayscale image.
    pub fn project(&self, image: &Image) -> Result<DVector<f64>> {
        if (image.height(), image.width()) != (self.height, self.width) {
            return invalid(format!(
                "image is {}x{}, model is {}x{}",
                image.height(),
                image.width(),
                self.height,
                self.width
            ));
        }
        Ok(self.basis.tr_mul(&(gray_vector(image) - &self.mean)))
    }

    /// Grayscale pixels rebuilt from coefficients.
    pub fn reconstruct(&self, coefficients: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.basis * coefficients
    }

    /// Nearest class centroid; ties go to the smaller class index.
    pub fn classify(&self, image: &Image) -> Result<usize> {
        let p = self.project(image)?;
        let mut best = (f64::INFINITY, 0);
        for (c, centroid) in self.centroids.iter().enumerate() {
            let d = (&p - centroid).norm_squared();
            if d < best.0 {
                best = (d, c);
            }
        }
        Ok(best.1)
    }
}

pub fn eigenface_classify(model: &EigenModel, image: &Image) -> Result<usize> {
    model.classify(image)
}

/// Gaussian-blur denoiser; the residual is `I - blur(I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub size: usize,
    pub sigma: f64,
}

impl Default for Denoiser {
    fn default() -> Self {
        Self { size: 3, sigma: 0.8 }
    }
}

impl Denoiser {
    pub fn residual(&self, image: &Image) -> Image {
        image.zip_map(&gaussian_blur(image, self.size, self.sigma), |a, b| a - b)
    }
}

/// Mean noise residual per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrnuModel {
    pub fingerprints: Vec<Image>,
    pub denoiser: Denoiser,
}

pub fn prnu_fit(train: &LabeledDataset, denoiser: Denoiser) -> Result<PrnuModel> {
    let Some((h, w, c)) = train.image_dims() else {
        return invalid("PRNU needs a non-empty training set");
    };
    let mut sums = vec![vec![0.0f64; h * w * c]; train.num_classes()];
    let mut counts = vec![0usize; train.num_classes()];
    for r in train.records() {
        for (s, &v) in sums[r.label].iter_mut().zip(denoiser.residual(&r.image).data()) {
            *s += v as f64;
        }
        counts[r.label] += 1;
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return invalid(format!("class {class} has no training images"));
    }
    let fingerprints = sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| Image::new(h, w, c, s.into_iter().map(|v| (v / n as f64) as f32).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrnuModel {
        fingerprints,
        denoiser,
    })
}

impl PrnuModel {
    /// Correlation of the image's residual with every class fingerprint.
    pub fn responses(&self, image: &Image) -> Result<Vec<f64>> {
        let residual = self.denoiser.residual(image);
        self.fingerprints.iter().map(|f| corr(&residual, f)).collect()
    }

    /// `argmax_y corr(W(I), fingerprint_y)`, ties to the smaller index.
    pub fn classify(&self, image: &Image) -> Result<usize> {
        let r = self.responses(image)?;
        let mut best = 0;
        for (i, &v) in r.iter().enumerate() {
            if v > r[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

pub fn prnu_classify(model: &PrnuModel, image: &Image) -> Result<usize> {
    model.classify(image)
}
