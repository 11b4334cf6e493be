//! PartPSP: partial-communication push-sum SGD with differential privacy.
//!
//! Each round, every node samples a batch, takes an unclipped local SGD
//! step, computes the shared-parameter gradient at the corrected point
//! `(y, l_new)`, clips it in L1, and feeds the perturbation
//! `eps_i = -gamma_s * g_{i,s}` into the DPPS protocol. Local parameters
//! are never clipped and never noised.

use rand::Rng;
use thiserror::Error;

use crate::privacy::PrivacyBudget;
use crate::protocol::{
    dpps_round, network_mean, synchronize, NodeState, ProtocolError, SyncResetMode,
};
use crate::tasks::{NodeSampler, Objective, TaskError};
use crate::topology::WeightMatrix;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("partition leaves no shared parameters (d_s = 0)")]
    EmptyShared,
    #[error("share_first_k(k={k}) out of range for {blocks} blocks")]
    KOutOfRange { k: usize, blocks: usize },
    #[error("custom partition has {tags} tags for {blocks} blocks")]
    TagCountMismatch { tags: usize, blocks: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("node {node} round {round}: non-finite {what}; aborting run")]
    NonFinite {
        node: usize,
        round: u64,
        what: &'static str,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// One named contiguous slice of the full parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub len: usize,
    pub shared: bool,
}

/// How blocks are tagged shared vs local.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionScheme {
    /// The first `k` blocks are shared, the rest local.
    ShareFirstK(usize),
    /// Every block is shared (`d_l = 0`), the full-communication case.
    ShareAll,
    /// Explicit per-block tags, `true` = shared.
    Custom(Vec<bool>),
}

/// The shared/local split of a model's parameters and the mapping between
/// `(shared, local)` and the full parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionedModel {
    blocks: Vec<ParamBlock>,
    shared_dim: usize,
    local_dim: usize,
}

/// Tag the ordered blocks according to `scheme`. Schemes that leave no
/// shared block are rejected: the protocol needs a unified shared vector.
pub fn partition_model(
    block_shapes: &[(String, usize)],
    scheme: &PartitionScheme,
) -> Result<PartitionedModel, OptimizerError> {
    let n = block_shapes.len();
    let tags: Vec<bool> = match scheme {
        PartitionScheme::ShareFirstK(k) => {
            if *k == 0 || *k > n {
                return Err(OptimizerError::KOutOfRange { k: *k, blocks: n });
            }
            (0..n).map(|i| i < *k).collect()
        }
        PartitionScheme::ShareAll => vec![true; n],
        PartitionScheme::Custom(tags) => {
            if tags.len() != n {
                return Err(OptimizerError::TagCountMismatch {
                    tags: tags.len(),
                    blocks: n,
                });
            }
            tags.clone()
        }
    };
    let blocks: Vec<ParamBlock> = block_shapes
        .iter()
        .zip(&tags)
        .map(|((name, len), &shared)| ParamBlock {
            name: name.clone(),
            len: *len,
            shared,
        })
        .collect();
    let shared_dim = blocks.iter().filter(|b| b.shared).map(|b| b.len).sum();
    let local_dim = blocks.iter().filter(|b| !b.shared).map(|b| b.len).sum();
    if shared_dim == 0 {
        return Err(OptimizerError::EmptyShared);
    }
    Ok(PartitionedModel {
        blocks,
        shared_dim,
        local_dim,
    })
}

impl PartitionedModel {
    pub fn shared_dim(&self) -> usize {
        self.shared_dim
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn total_dim(&self) -> usize {
        self.shared_dim + self.local_dim
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    /// Interleave `(shared, local)` back into the full block-ordered
    /// parameter vector.
    pub fn assemble(&self, shared: &[f64], local: &[f64]) -> Result<Vec<f64>, OptimizerError> {
        if shared.len() != self.shared_dim {
            return Err(OptimizerError::DimensionMismatch {
                what: "shared vector",
                expected: self.shared_dim,
                got: shared.len(),
            });
        }
        if local.len() != self.local_dim {
            return Err(OptimizerError::DimensionMismatch {
                what: "local vector",
                expected: self.local_dim,
                got: local.len(),
            });
        }
        let mut full = Vec::with_capacity(self.total_dim());
        let mut s = 0usize;
        let mut l = 0usize;
        for block in &self.blocks {
            if block.shared {
                full.extend_from_slice(&shared[s..s + block.len]);
                s += block.len;
            } else {
                full.extend_from_slice(&local[l..l + block.len]);
                l += block.len;
            }
        }
        Ok(full)
    }

    /// Split a full parameter vector into its `(shared, local)` parts.
    pub fn split(&self, full: &[f64]) -> Result<(Vec<f64>, Vec<f64>), OptimizerError> {
        if full.len() != self.total_dim() {
            return Err(OptimizerError::DimensionMismatch {
                what: "full parameter vector",
                expected: self.total_dim(),
                got: full.len(),
            });
        }
        let mut shared = Vec::with_capacity(self.shared_dim);
        let mut local = Vec::with_capacity(self.local_dim);
        let mut offset = 0usize;
        for block in &self.blocks {
            let slice = &full[offset..offset + block.len];
            if block.shared {
                shared.extend_from_slice(slice);
            } else {
                local.extend_from_slice(slice);
            }
            offset += block.len;
        }
        Ok((shared, local))
    }
}

/// Scale `g` down to L1 norm `clip_threshold` when it exceeds it:
/// `g / max(1, ||g||_1 / c)`. Direction is preserved exactly.
pub fn clip_gradient_l1(g: &[f64], clip_threshold: f64) -> Vec<f64> {
    let l1: f64 = g.iter().map(|x| x.abs()).sum();
    let divisor = (l1 / clip_threshold).max(1.0);
    if divisor == 1.0 {
        g.to_vec()
    } else {
        g.iter().map(|x| x / divisor).collect()
    }
}

/// Unclipped local SGD step `local - gamma_l * g_l`.
pub fn local_step(local: &[f64], g_l: &[f64], gamma_l: f64) -> Result<Vec<f64>, OptimizerError> {
    if local.len() != g_l.len() {
        return Err(OptimizerError::DimensionMismatch {
            what: "local gradient",
            expected: local.len(),
            got: g_l.len(),
        });
    }
    Ok(local
        .iter()
        .zip(g_l)
        .map(|(x, g)| x - gamma_l * g)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub gamma_l: f64,
    pub gamma_s: f64,
    pub gamma_n: f64,
    pub clip_threshold: f64,
    pub rounds: u64,
    pub sync_interval: u64,
}

/// Per-round log record produced by [`partpsp_round`].
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: u64,
    /// Mean over nodes of the batch loss at `(y_i, l_i)` before the step.
    pub loss_mean: f64,
    pub esti_sensitivity: f64,
    pub real_sensitivity: f64,
    pub eps_l1: Vec<f64>,
    pub noise_l1: Vec<f64>,
    /// Coordinate-wise sums over nodes, for mean-dynamics checks.
    pub eps_sum: Vec<f64>,
    pub noise_sum: Vec<f64>,
    /// Mean squared L2 norm of the local gradients at `(y_i, l_i)`,
    /// computed on the evaluation batches when requested.
    pub delta_l: Option<f64>,
    /// Squared L2 norm of the average shared gradient at `(s_bar, l_i')`.
    pub delta_sbar: Option<f64>,
    /// `max_i 2 ||y_i(post-mix) - s_bar(pre-round)||_1`, measured before any
    /// synchronization; the quantity the estimate constants are fitted to.
    pub deviation_max: f64,
    pub synced: bool,
}

/// Execute one PartPSP round over all nodes. When `eval_batches` is given,
/// the optimality metrics are computed on those fixed per-node index sets
/// before any state changes hit the network.
#[allow(clippy::too_many_arguments)]
pub fn partpsp_round<T: Objective, R: Rng>(
    states: Vec<NodeState>,
    task: &T,
    samplers: &mut [NodeSampler],
    w: &WeightMatrix,
    cfg: &OptimizerConfig,
    noise: Option<&PrivacyBudget>,
    rng_streams: &mut [R],
    round: u64,
    sync_mode: SyncResetMode,
    eval_batches: Option<&[Vec<usize>]>,
) -> Result<(Vec<NodeState>, RoundRecord), OptimizerError> {
    let n = states.len();
    if samplers.len() != n {
        return Err(OptimizerError::DimensionMismatch {
            what: "samplers",
            expected: n,
            got: samplers.len(),
        });
    }
    let dim = states.first().map_or(0, NodeState::shared_dim);

    let mut states = states;
    let entry_mean = network_mean(&states);
    let mut loss_sum = 0.0;
    let mut perturbations: Vec<Vec<f64>> = Vec::with_capacity(n);

    // The local-optimality metric uses the pre-step point (y_i, l_i).
    let mut delta_l = None;
    if let Some(batches) = eval_batches {
        let mut acc = 0.0;
        for (state, eval) in states.iter().zip(batches) {
            let e = task.loss_and_grads(&state.corrected, &state.local, eval)?;
            acc += e.grad_local.iter().map(|g| g * g).sum::<f64>();
        }
        delta_l = Some(acc / n as f64);
    }

    // Local gradient at (y, l), local step, then shared gradient at the
    // updated local point.
    for (i, state) in states.iter_mut().enumerate() {
        let batch = samplers[i].next_batch();
        let eval = task.loss_and_grads(&state.corrected, &state.local, &batch)?;
        if !eval.loss.is_finite() {
            return Err(OptimizerError::NonFinite {
                node: state.node_id,
                round,
                what: "loss",
            });
        }
        if eval.grad_local.iter().any(|g| !g.is_finite())
            || eval.grad_shared.iter().any(|g| !g.is_finite())
        {
            return Err(OptimizerError::NonFinite {
                node: state.node_id,
                round,
                what: "gradient",
            });
        }
        loss_sum += eval.loss;
        state.local = local_step(&state.local, &eval.grad_local, cfg.gamma_l)?;

        let at_new_local = task.loss_and_grads(&state.corrected, &state.local, &batch)?;
        if at_new_local.grad_shared.iter().any(|g| !g.is_finite()) {
            return Err(OptimizerError::NonFinite {
                node: state.node_id,
                round,
                what: "shared gradient",
            });
        }
        let clipped = clip_gradient_l1(&at_new_local.grad_shared, cfg.clip_threshold);
        perturbations.push(clipped.iter().map(|g| -cfg.gamma_s * g).collect());
    }

    // Shared-optimality metric at the pre-round network mean and the
    // already-updated local parameters.
    let delta_sbar = match eval_batches {
        Some(batches) => {
            let mut mean_grad = vec![0.0; dim];
            for (state, eval) in states.iter().zip(batches) {
                let e = task.loss_and_grads(&entry_mean, &state.local, eval)?;
                for (m, g) in mean_grad.iter_mut().zip(&e.grad_shared) {
                    *m += g / n as f64;
                }
            }
            Some(mean_grad.iter().map(|g| g * g).sum::<f64>())
        }
        None => None,
    };

    let outcome = dpps_round(states, w, &perturbations, noise, rng_streams)?;

    let deviation_max = outcome
        .states
        .iter()
        .map(|state| {
            2.0 * state
                .corrected
                .iter()
                .zip(&entry_mean)
                .map(|(y, m)| (y - m).abs())
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max);

    let mut eps_sum = vec![0.0; dim];
    for eps in &perturbations {
        for (acc, e) in eps_sum.iter_mut().zip(eps) {
            *acc += e;
        }
    }
    let mut noise_sum = vec![0.0; dim];
    for draw in &outcome.noise_draws {
        for (acc, v) in noise_sum.iter_mut().zip(&draw.vector) {
            *acc += v;
        }
    }
    let noise_l1: Vec<f64> = outcome.noise_draws.iter().map(|d| d.l1_norm).collect();

    let sync_now = cfg.sync_interval > 0 && (round + 1).is_multiple_of(cfg.sync_interval);
    let states = if sync_now {
        synchronize(outcome.states, sync_mode)
    } else {
        outcome.states
    };

    let record = RoundRecord {
        round,
        loss_mean: loss_sum / n as f64,
        esti_sensitivity: outcome.sensitivity_used,
        real_sensitivity: outcome.real_sensitivity,
        eps_l1: outcome.eps_l1,
        noise_l1,
        eps_sum,
        noise_sum,
        delta_l,
        delta_sbar,
        deviation_max,
        synced: sync_now,
    };
    Ok((states, record))
}
