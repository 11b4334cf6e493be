//! Bias-free multi-layer perceptron with Tanh activations and softmax
//! cross-entropy, differentiated by hand in reverse mode.
//!
//! Layers are weight-only (`out x in`, row-major), so a 784x10 layer has
//! exactly 7840 parameters. Each layer is one parameter block; the
//! shared/local split is whatever the supplied partition says.

use rand::Rng;

use crate::optimizer::PartitionedModel;
use crate::tasks::{Dataset, GradEval, Objective, TaskError};

/// Layer shapes of a bias-free MLP; consecutive dims must chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layer_dims: Vec<(usize, usize)>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<(usize, usize)>) -> Result<Self, TaskError> {
        assert!(!layer_dims.is_empty(), "an MLP needs at least one layer");
        for i in 1..layer_dims.len() {
            if layer_dims[i].0 != layer_dims[i - 1].1 {
                return Err(TaskError::BadLayerChain {
                    index: i,
                    expected: layer_dims[i - 1].1,
                    got: layer_dims[i].0,
                });
            }
        }
        Ok(MlpSpec { layer_dims })
    }

    /// The 784x10, 10x784, 784x10 stack (7840 parameters per layer).
    pub fn mnist_default() -> Self {
        MlpSpec {
            layer_dims: vec![(784, 10), (10, 784), (784, 10)],
        }
    }

    /// The same three-layer sandwich shape at arbitrary scale:
    /// `(F x C), (C x F), (F x C)` — all blocks have `F * C` parameters.
    pub fn sandwich(n_features: usize, n_classes: usize) -> Self {
        MlpSpec {
            layer_dims: vec![
                (n_features, n_classes),
                (n_classes, n_features),
                (n_features, n_classes),
            ],
        }
    }

    pub fn layer_dims(&self) -> &[(usize, usize)] {
        &self.layer_dims
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_dims[0].0
    }

    pub fn n_outputs(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1].1
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims.iter().map(|(i, o)| i * o).sum()
    }

    /// One named block per layer, in order.
    pub fn param_blocks(&self) -> Vec<(String, usize)> {
        self.layer_dims
            .iter()
            .enumerate()
            .map(|(i, (inp, out))| (format!("layer{}", i + 1), inp * out))
            .collect()
    }

    /// Symmetric uniform initialization scaled by `1/sqrt(fan_in)` per layer.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.n_params());
        for &(inp, out) in &self.layer_dims {
            let bound = 1.0 / (inp as f64).sqrt();
            for _ in 0..inp * out {
                params.push((rng.random::<f64>() * 2.0 - 1.0) * bound);
            }
        }
        params
    }
}

/// An MLP objective bound to a training set and a parameter partition.
#[derive(Debug, Clone)]
pub struct MlpTask {
    spec: MlpSpec,
    partition: PartitionedModel,
    train: Dataset,
}

impl MlpTask {
    pub fn new(
        spec: MlpSpec,
        partition: PartitionedModel,
        train: Dataset,
    ) -> Result<Self, TaskError> {
        if partition.total_dim() != spec.n_params() {
            return Err(TaskError::DimensionMismatch {
                what: "partition size",
                expected: spec.n_params(),
                got: partition.total_dim(),
            });
        }
        if train.n_features() != spec.n_inputs() {
            return Err(TaskError::DimensionMismatch {
                what: "input features",
                expected: spec.n_inputs(),
                got: train.n_features(),
            });
        }
        if train.n_classes() != spec.n_outputs() {
            return Err(TaskError::DimensionMismatch {
                what: "output classes",
                expected: spec.n_outputs(),
                got: train.n_classes(),
            });
        }
        Ok(MlpTask {
            spec,
            partition,
            train,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn partition(&self) -> &PartitionedModel {
        &self.partition
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.spec.n_layers() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &(inp, out) in self.spec.layer_dims() {
            acc += inp * out;
            offsets.push(acc);
        }
        offsets
    }

    /// Forward pass: activations per layer boundary (`acts[0]` is the input,
    /// `acts[L]` the logits).
    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let offsets = self.layer_offsets();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.spec.n_layers() + 1);
        acts.push(x.to_vec());
        for (l, &(inp, out)) in self.spec.layer_dims().iter().enumerate() {
            let weights = &params[offsets[l]..offsets[l + 1]];
            let prev = &acts[l];
            let mut z = vec![0.0; out];
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &weights[r * inp..(r + 1) * inp];
                *zr = row.iter().zip(prev).map(|(w, a)| w * a).sum();
            }
            if l + 1 < self.spec.n_layers() {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, full_params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(full_params, x)
            .pop()
            .expect("forward always returns the logits")
    }
}

/// Numerically stable softmax of `logits`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl Objective for MlpTask {
    fn shared_dim(&self) -> usize {
        self.partition.shared_dim()
    }

    fn local_dim(&self) -> usize {
        self.partition.local_dim()
    }

    fn loss_and_grads(
        &self,
        shared: &[f64],
        local: &[f64],
        batch: &[usize],
    ) -> Result<GradEval, TaskError> {
        if batch.is_empty() {
            return Err(TaskError::EmptyBatch);
        }
        for &index in batch {
            if index >= self.train.len() {
                return Err(TaskError::IndexOutOfRange {
                    index,
                    len: self.train.len(),
                });
            }
        }
        let params = self
            .partition
            .assemble(shared, local)
            .map_err(|_| TaskError::DimensionMismatch {
                what: "parameter vectors",
                expected: self.partition.total_dim(),
                got: shared.len() + local.len(),
            })?;
        let offsets = self.layer_offsets();
        let n_layers = self.spec.n_layers();
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;

        for &index in batch {
            let x = self.train.input(index);
            let y = self.train.label(index);
            let acts = self.forward(&params, x);
            let logits = &acts[n_layers];

            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            loss += lse - logits[y];

            // delta = softmax(z) - onehot(y), then backpropagate.
            let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
            delta[y] -= 1.0;
            for l in (0..n_layers).rev() {
                let (inp, out) = self.spec.layer_dims()[l];
                let weights = &params[offsets[l]..offsets[l + 1]];
                let grad_block = &mut grad[offsets[l]..offsets[l + 1]];
                let a_prev = &acts[l];
                for r in 0..out {
                    let d = delta[r];
                    let row = &mut grad_block[r * inp..(r + 1) * inp];
                    for (g, a) in row.iter_mut().zip(a_prev) {
                        *g += d * a;
                    }
                }
                if l > 0 {
                    let mut prev_delta = vec![0.0; inp];
                    for (r, &d) in delta.iter().enumerate() {
                        let row = &weights[r * inp..(r + 1) * inp];
                        for (pd, w) in prev_delta.iter_mut().zip(row) {
                            *pd += w * d;
                        }
                    }
                    // a_prev = tanh(z_{l-1}), so tanh' = 1 - a_prev^2.
                    for (pd, a) in prev_delta.iter_mut().zip(a_prev) {
                        *pd *= 1.0 - a * a;
                    }
                    delta = prev_delta;
                }
            }
        }

        let scale = 1.0 / batch.len() as f64;
        loss *= scale;
        for g in grad.iter_mut() {
            *g *= scale;
        }
        if !loss.is_finite() {
            return Err(TaskError::NonFiniteLoss { loss });
        }
        let (grad_shared, grad_local) = self
            .partition
            .split(&grad)
            .expect("gradient has the full parameter length");
        Ok(GradEval {
            loss,
            grad_shared,
            grad_local,
        })
    }

    fn accuracy(&self, shared: &[f64], local: &[f64], data: &Dataset) -> f64 {
        let params = self
            .partition
            .assemble(shared, local)
            .expect("parameter vectors match the partition");
        let mut correct = 0usize;
        for i in 0..data.len() {
            let logits = self.logits(&params, data.input(i));
            let mut best = 0usize;
            for (c, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = c;
                }
            }
            if best == data.label(i) {
                correct += 1;
            }
        }
        correct as f64 / data.len() as f64
    }
}
