//! Shared-weight twin embedding, Euclidean pair distance, contrastive loss,
//! and the SGD training loop.
//!
//! Both branches of the Siamese network are the same [`Network`]: there is
//! one parameter store, so "mirrored parameter updating" holds by
//! construction rather than by synchronization.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::Architecture;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::seeding;
use crate::tensor::Tensor;

/// Distances below this are treated as zero when forming the negative-pair
/// gradient, whose closed form carries a 1/d factor.
pub const DISTANCE_EPSILON: f64 = 1e-12;

/// Pair label: positive means both images are real, negative means exactly
/// one of them is a spoof.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
}

impl PairLabel {
    /// The label's numeric value in the loss: 1 for positive, 0 for negative.
    pub fn y(self) -> f64 {
        match self {
            PairLabel::Positive => 1.0,
            PairLabel::Negative => 0.0,
        }
    }
}

/// Two preprocessed same-client images plus their pair label.
#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub a: Tensor,
    pub b: Tensor,
    pub label: PairLabel,
    pub client_id: String,
}

/// Training hyperparameters. The margin is the pre-set distance beyond which
/// negative pairs stop contributing loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 16,
            seed: 42,
        }
    }
}

/// Euclidean distance between two equal-length feature vectors.
pub fn pair_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.numel() != b.numel() {
        return Err(Error::ShapeMismatch {
            op: "pair_distance",
            detail: format!("lengths differ: {} vs {}", a.numel(), b.numel()),
        });
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Contrastive loss over a batch:
/// `L = 1/(2N) * sum(y * d^2 + (1 - y) * max(margin - d, 0)^2)`.
pub fn contrastive_loss(distances: &[f64], labels: &[PairLabel], margin: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if distances.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "contrastive_loss",
            detail: format!(
                "{} distances but {} labels",
                distances.len(),
                labels.len()
            ),
        });
    }
    let sum: f64 = distances
        .iter()
        .zip(labels)
        .map(|(&d, &label)| pair_term(d, label, margin))
        .sum();
    Ok(sum / (2.0 * distances.len() as f64))
}

/// One pair's unnormalized loss term.
fn pair_term(d: f64, label: PairLabel, margin: f64) -> f64 {
    match label {
        PairLabel::Positive => d * d,
        PairLabel::Negative => {
            let hinge = (margin - d).max(0.0);
            hinge * hinge
        }
    }
}

/// Gradient of the batch loss with respect to the two embeddings of one pair.
///
/// For positive pairs the term is `d^2 = ||a-b||^2`, giving `(a-b)/N`.
/// For negative pairs inside the margin it is `-(margin-d)/d * (a-b)/N`;
/// outside the margin (and at d ~ 0) the contribution is zero.
pub(crate) fn embedding_grads(
    a: &Tensor,
    b: &Tensor,
    d: f64,
    label: PairLabel,
    margin: f64,
    batch_size: usize,
) -> (Tensor, Tensor) {
    let n = batch_size as f64;
    let scale = match label {
        PairLabel::Positive => 1.0 / n,
        PairLabel::Negative => {
            if d >= margin || d < DISTANCE_EPSILON {
                0.0
            } else {
                -(margin - d) / (d * n)
            }
        }
    };
    let ga: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| scale * (x - y))
        .collect();
    let gb: Vec<f64> = ga.iter().map(|g| -g).collect();
    (
        Tensor::new(a.shape().to_vec(), ga).expect("shape preserved"),
        Tensor::new(b.shape().to_vec(), gb).expect("shape preserved"),
    )
}

/// The Siamese model: one network, used as both branches.
#[derive(Debug, Clone)]
pub struct SiameseModel {
    net: Network,
}

impl SiameseModel {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        Ok(SiameseModel {
            net: Network::new(arch, seed)?,
        })
    }

    pub fn from_network(net: Network) -> Self {
        SiameseModel { net }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn arch(&self) -> &Architecture {
        self.net.arch()
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.embedding_dim()
    }

    /// Embeds one image; deterministic for fixed parameters.
    pub fn embed(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.net.forward(image)?.flattened())
    }

    /// One forward + backward + SGD update over a batch. Returns the batch
    /// loss evaluated before the update.
    pub fn train_step(&mut self, batch: &[LabeledPair], config: &TrainConfig) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        self.net.zero_grads();
        let n = batch.len();
        let mut term_sum = 0.0;
        for pair in batch {
            let trace_a = self.net.forward_traced(&pair.a)?;
            let trace_b = self.net.forward_traced(&pair.b)?;
            let ea = trace_a.output().clone().flattened();
            let eb = trace_b.output().clone().flattened();
            let d = pair_distance(&ea, &eb)?;
            term_sum += pair_term(d, pair.label, config.margin);

            let (ga, gb) = embedding_grads(&ea, &eb, d, pair.label, config.margin, n);
            let ga = Tensor::new(trace_a.output().shape().to_vec(), ga.into_values())?;
            let gb = Tensor::new(trace_b.output().shape().to_vec(), gb.into_values())?;
            self.net.backward(&trace_a, &ga)?;
            self.net.backward(&trace_b, &gb)?;
        }
        let loss = term_sum / (2.0 * n as f64);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                detail: format!(
                    "{} pairs, first client {}",
                    n,
                    batch.first().map(|p| p.client_id.as_str()).unwrap_or("?")
                ),
            });
        }
        self.net.sgd_step(config.learning_rate)?;
        Ok(loss)
    }

    /// Epoch loop: shuffles pairs with the seeded generator, runs
    /// `train_step` over batches, and returns the mean batch loss per epoch.
    pub fn fit(&mut self, pairs: &[LabeledPair], config: &TrainConfig) -> Result<Vec<f64>> {
        self.fit_with(pairs, config, |_, _| {})
    }

    /// Like [`SiameseModel::fit`], reporting each epoch's mean batch loss to
    /// the observer as it completes.
    pub fn fit_with(
        &mut self,
        pairs: &[LabeledPair],
        config: &TrainConfig,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        if config.epochs == 0 {
            return Ok(Vec::new());
        }
        if pairs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let positives = pairs.iter().filter(|p| p.label == PairLabel::Positive).count();
        if positives == 0 || positives == pairs.len() {
            warn!(
                "training set has only {} pairs; both labels are recommended",
                if positives == 0 { "negative" } else { "positive" }
            );
        }
        let batch_size = config.batch_size.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(config.seed, seeding::SHUFFLE));
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut history = Vec::with_capacity(config.epochs);
        let mut batch = Vec::with_capacity(batch_size);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| pairs[i].clone()));
                epoch_sum += self.train_step(&batch, config)?;
                batches += 1;
            }
            let mean = epoch_sum / batches as f64;
            on_epoch(epoch, mean);
            history.push(mean);
        }
        Ok(history)
    }
}
