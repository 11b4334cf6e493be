//! Trainable objectives and their data plumbing.
//!
//! A task owns a training [`Dataset`] and evaluates loss and exact partial
//! derivatives with respect to the shared and local parameter blocks of a
//! [`PartitionedModel`](crate::optimizer::PartitionedModel). Data is
//! sharded round-robin by node id (disjoint shards covering the dataset)
//! and reshuffled per epoch from the node's own stream.

mod mlp;
mod mnist;

pub use mlp::{softmax, MlpSpec, MlpTask};
pub use mnist::load_mnist_idx;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::protocol::{network_mean, NodeState};
use crate::seed::{derive, derive_epoch, Purpose};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("loss became non-finite ({loss}); the run has diverged")]
    NonFiniteLoss { loss: f64 },
    #[error("batch index {index} out of range for {len} examples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("label {label} out of range for {n_classes} classes (example {example})")]
    LabelOutOfRange {
        label: usize,
        n_classes: usize,
        example: usize,
    },
    #[error("layer {index} input dim {got} does not chain with previous output dim {expected}")]
    BadLayerChain {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("synthetic data needs n_classes >= 2 and n_features >= n_classes, got {n_features} features / {n_classes} classes")]
    BadSyntheticShape {
        n_features: usize,
        n_classes: usize,
    },
    #[error("{path}: bad magic number, expected {expected:#010x}, got {got:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        got: u32,
    },
    #[error("{path}: truncated file, expected {expected} bytes, got {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// A fixed classification dataset: row-major inputs and one integer class
/// label per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    n_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self, TaskError> {
        if inputs.len() != labels.len() * n_features {
            return Err(TaskError::DimensionMismatch {
                what: "input matrix",
                expected: labels.len() * n_features,
                got: inputs.len(),
            });
        }
        for (example, &label) in labels.iter().enumerate() {
            if label >= n_classes {
                return Err(TaskError::LabelOutOfRange {
                    label,
                    n_classes,
                    example,
                });
            }
        }
        Ok(Dataset {
            n_features,
            n_classes,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input(&self, index: usize) -> &[f64] {
        &self.inputs[index * self.n_features..(index + 1) * self.n_features]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }
}

/// Gaussian class clusters with means at distance `separation` from the
/// origin along mutually orthogonal random directions, unit covariance.
/// Deterministic in `seed`.
pub fn make_synthetic_dataset(
    n_examples: usize,
    n_features: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, TaskError> {
    if n_classes < 2 || n_features < n_classes {
        return Err(TaskError::BadSyntheticShape {
            n_features,
            n_classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Orthonormal class directions by Gram-Schmidt on Gaussian vectors.
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while directions.len() < n_classes {
        let mut v: Vec<f64> = (0..n_features)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for u in &directions {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue; // essentially impossible, but redraw rather than divide by ~0
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        directions.push(v);
    }

    let mut inputs = Vec::with_capacity(n_examples * n_features);
    let mut labels = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        let label = rng.random_range(0..n_classes);
        labels.push(label);
        for &direction in &directions[label] {
            let noise: f64 = rng.sample(StandardNormal);
            inputs.push(separation * direction + noise);
        }
    }
    Dataset::new(inputs, labels, n_features, n_classes)
}

/// One node's view of the dataset: the round-robin shard `{i : i mod N ==
/// node_id}` with a per-epoch permutation drawn from the node's stream.
#[derive(Debug, Clone)]
pub struct NodeSampler {
    node_id: usize,
    master_seed: u64,
    shard: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    batch_size: usize,
}

impl NodeSampler {
    pub fn new(
        dataset_len: usize,
        n_nodes: usize,
        node_id: usize,
        batch_size: usize,
        master_seed: u64,
    ) -> Self {
        let shard: Vec<usize> = (node_id..dataset_len).step_by(n_nodes).collect();
        let mut sampler = NodeSampler {
            node_id,
            master_seed,
            shard,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            batch_size,
        };
        sampler.reshuffle();
        sampler
    }

    pub fn shard(&self) -> &[usize] {
        &self.shard
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Rounds per epoch for this shard.
    pub fn rounds_per_epoch(&self) -> usize {
        self.shard.len().div_ceil(self.batch_size)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_epoch(
            self.master_seed,
            self.node_id as u64,
            Purpose::DataShuffle,
            self.epoch,
        ));
        self.order = self.shard.clone();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    /// The next (possibly final, shorter) batch of this epoch; rolls over
    /// into a freshly shuffled epoch when the shard is exhausted.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.shard.is_empty() {
            return Vec::new();
        }
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Loss and exact partial derivatives of one task at one parameter point.
#[derive(Debug, Clone)]
pub struct GradEval {
    pub loss: f64,
    pub grad_shared: Vec<f64>,
    pub grad_local: Vec<f64>,
}

/// A trainable objective over a partitioned parameter vector. Additional
/// model families implement this without touching protocol or optimizer.
pub trait Objective {
    fn shared_dim(&self) -> usize;
    fn local_dim(&self) -> usize;
    /// Mean loss and partial derivatives over `batch` (indices into the
    /// task's training set).
    fn loss_and_grads(
        &self,
        shared: &[f64],
        local: &[f64],
        batch: &[usize],
    ) -> Result<GradEval, TaskError>;
    /// Classification accuracy of `(shared, local)` on an arbitrary dataset.
    fn accuracy(&self, shared: &[f64], local: &[f64], data: &Dataset) -> f64;
}

/// Collect the network's average shared vector, evaluate `(s_bar, l_i)` per
/// node on the whole test set, and average the per-node accuracies.
pub fn evaluate_network<T: Objective>(
    states: &[NodeState],
    task: &T,
    test_set: &Dataset,
) -> (Vec<f64>, f64) {
    let s_bar = network_mean(states);
    let per_node: Vec<f64> = states
        .iter()
        .map(|state| task.accuracy(&s_bar, &state.local, test_set))
        .collect();
    let final_acc = per_node.iter().sum::<f64>() / per_node.len() as f64;
    (per_node, final_acc)
}

/// Weight-initialization stream for a node; all nodes draw from the same
/// stream when `identical` is set.
pub fn init_stream(master_seed: u64, node_id: usize, identical: bool) -> ChaCha8Rng {
    let id = if identical { 0 } else { node_id as u64 };
    ChaCha8Rng::seed_from_u64(derive(master_seed, id, Purpose::WeightInit))
}
