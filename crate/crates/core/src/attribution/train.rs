use ganprint_tensor::{AdamConfig, AdamState, Graph};
use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::dataset::{LabeledDataset, Record};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::metrics::ConfusionMatrix;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the pre-update predictions over the epoch.
    pub train_accuracy: f64,
}

/// Trains on a fixed dataset; batches are reshuffled every epoch.
pub fn train(net: &mut Classifier, data: &LabeledDataset, config: &TrainConfig) -> Result<Vec<EpochStats>> {
    train_on(net, data.num_classes(), config, |_| Ok(data.records().to_vec()))
}

/// Trains with records supplied per epoch, e.g. freshly attacked copies.
pub fn train_on(
    net: &mut Classifier,
    num_classes: usize,
    config: &TrainConfig,
    mut epoch_records: impl FnMut(usize) -> Result<Vec<Record>>,
) -> Result<Vec<EpochStats>> {
    if config.batch_size == 0 {
        return invalid("batch size must be positive");
    }
    if num_classes != net.config().num_classes {
        return invalid(format!(
            "dataset has {num_classes} classes, network has {}",
            net.config().num_classes
        ));
    }
    let mut adam = AdamState::new(AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let records = epoch_records(epoch)?;
        if records.is_empty() {
            return invalid("no training records");
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &[epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let images: Vec<&Image> = batch.iter().map(|&i| &records[i].image).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| records[i].label).collect();
            let mut g = Graph::new();
            let x = g.input(net.input_tensor(images)?)?;
            let out = net.forward(&mut g, x)?;
            let loss = g.softmax_cross_entropy(out.logits, &labels)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Numerical(format!("loss became {value} in epoch {epoch}")));
            }
            loss_sum += value * batch.len() as f64;
            let logits = g.value(out.logits);
            correct += logits
                .data()
                .chunks(num_classes)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            let grads = g.backward(loss)?;
            let params = net.params_mut();
            params.zero_grad();
            grads.accumulate_into(&g, params)?;
            adam.step(params);
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / records.len() as f64,
            train_accuracy: correct as f64 / records.len() as f64,
        };
        info!(
            "epoch {epoch}: loss {:.4}, train accuracy {:.3}",
            stats.loss, stats.train_accuracy
        );
        history.push(stats);
    }
    Ok(history)
}

/// Index of the largest value; ties go to the smallest index.
pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of every image.
pub fn predict(net: &Classifier, images: &[&Image]) -> Result<Vec<usize>> {
    let k = net.config().num_classes;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(128) {
        let (_, logits) = net.run(chunk)?;
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

pub fn classify(net: &Classifier, image: &Image) -> Result<usize> {
    Ok(predict(net, &[image])?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

pub fn evaluate(net: &Classifier, data: &LabeledDataset) -> Result<Evaluation> {
    if data.num_classes() != net.config().num_classes {
        return invalid(format!(
            "dataset has {} classes, network has {}",
            data.num_classes(),
            net.config().num_classes
        ));
    }
    let images: Vec<&Image> = data.images().collect();
    let predictions = predict(net, &images)?;
    let confusion = ConfusionMatrix::from_predictions(data.num_classes(), &data.labels(), &predictions)?;
    debug!("confusion matrix: {:?}", confusion.counts());
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        confusion,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5]), 1);
    }
}
