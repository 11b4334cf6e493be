//! One round of the differentially private perturbed push-sum protocol.
//!
//! A round runs in five phases, with a barrier between phases: (1) each
//! node adds its perturbation to its shared vector; (2) each node advances
//! its sensitivity estimate and the network takes the max; (3) each node
//! draws Laplace noise at scale `S/b` and adds `gamma_n * n`; (4) each node
//! aggregates the noised vectors of its in-neighbors with its row of the
//! weight matrix; (5) each node re-normalizes `y = s / a`. Phase 4 reads a
//! snapshot of the completed phase-3 values, so the reference execution is
//! observationally equivalent to any node-parallel one.
//!
//! Noise is skipped exactly (a zero draw, no RNG consumption) when noise is
//! disabled or the round's sensitivity is zero; the estimator still runs so
//! that noiseless baselines log the same quantities.

use rand::Rng;
use thiserror::Error;

use crate::privacy::{
    real_sensitivity, sample_laplace, NoiseDraw, PrivacyBudget, PrivacyError, SensitivityEstimator,
};
use crate::topology::WeightMatrix;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("node {node}: expected vector of dim {expected}, got {got}")]
    DimensionMismatch {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("weight matrix is {got}x{got} but there are {expected} nodes")]
    WrongMatrixSize { expected: usize, got: usize },
    #[error("expected {expected} {what}, got {got}")]
    WrongCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("node {node}: normalizing scalar became {value}; state is corrupted")]
    InvalidNormScalar { node: usize, value: f64 },
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
}

/// How the sensitivity estimator is re-seeded by a synchronization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncResetMode {
    /// Re-initialize with `s0_l1 = 0`: all nodes are identical after the
    /// sync, so the worst-case deviation from the sync point starts at zero.
    Zeroed,
    /// Re-initialize with `s0_l1 = ||synced vector||_1`, the literal `t = 0`
    /// case of the recursion.
    Conservative,
}

/// One node's protocol state.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: usize,
    /// Shared vector `s_i`.
    pub shared: Vec<f64>,
    /// Corrected vector `y_i = s_i / a_i`.
    pub corrected: Vec<f64>,
    /// Normalizing scalar `a_i`; stays 1 under doubly stochastic weights.
    pub norm_scalar: f64,
    /// Local vector `l_i`, never transmitted.
    pub local: Vec<f64>,
    pub estimator: SensitivityEstimator,
}

impl NodeState {
    pub fn new(
        node_id: usize,
        shared: Vec<f64>,
        local: Vec<f64>,
        c_prime: f64,
        lambda: f64,
    ) -> Result<Self, PrivacyError> {
        let s0_l1 = shared.iter().map(|x| x.abs()).sum();
        Ok(NodeState {
            node_id,
            corrected: shared.clone(),
            shared,
            norm_scalar: 1.0,
            local,
            estimator: SensitivityEstimator::pending(s0_l1, c_prime, lambda)?,
        })
    }

    pub fn shared_dim(&self) -> usize {
        self.shared.len()
    }
}

/// Everything produced by one protocol round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// Post-round node states.
    pub states: Vec<NodeState>,
    /// The sensitivity `S^(t)` the noise was calibrated to.
    pub sensitivity_used: f64,
    /// Brute-force max pairwise L1 distance of the transmitted vectors.
    pub real_sensitivity: f64,
    /// Per-node noise draws (exact zeros when noise was skipped).
    pub noise_draws: Vec<NoiseDraw>,
    /// Per-node `||eps_i||_1`.
    pub eps_l1: Vec<f64>,
}

/// Execute one DPPS round. `noise` carries `(b, gamma_n)` when the privacy
/// mechanism is on; `None` runs the noiseless baseline (estimator included).
pub fn dpps_round<R: Rng>(
    states: Vec<NodeState>,
    w: &WeightMatrix,
    perturbations: &[Vec<f64>],
    noise: Option<&PrivacyBudget>,
    rng_streams: &mut [R],
) -> Result<RoundOutcome, ProtocolError> {
    let n = states.len();
    if w.n() != n {
        return Err(ProtocolError::WrongMatrixSize {
            expected: n,
            got: w.n(),
        });
    }
    if perturbations.len() != n {
        return Err(ProtocolError::WrongCount {
            what: "perturbations",
            expected: n,
            got: perturbations.len(),
        });
    }
    if rng_streams.len() != n {
        return Err(ProtocolError::WrongCount {
            what: "rng streams",
            expected: n,
            got: rng_streams.len(),
        });
    }
    let dim = states.first().map_or(0, NodeState::shared_dim);
    for (state, eps) in states.iter().zip(perturbations) {
        if state.shared.len() != dim {
            return Err(ProtocolError::DimensionMismatch {
                node: state.node_id,
                expected: dim,
                got: state.shared.len(),
            });
        }
        if eps.len() != dim {
            return Err(ProtocolError::DimensionMismatch {
                node: state.node_id,
                expected: dim,
                got: eps.len(),
            });
        }
    }

    let mut states = states;
    let gamma_n = noise.map_or(0.0, |b| b.gamma_n);

    // Phase 1: s_i <- s_i + eps_i.
    for (state, eps) in states.iter_mut().zip(perturbations) {
        for (s, e) in state.shared.iter_mut().zip(eps) {
            *s += e;
        }
    }

    // Phase 2: advance every estimate, then take the global max.
    let eps_l1: Vec<f64> = perturbations
        .iter()
        .map(|e| e.iter().map(|x| x.abs()).sum())
        .collect();
    let mut sensitivity = 0.0f64;
    for (state, &e_l1) in states.iter_mut().zip(&eps_l1) {
        sensitivity = sensitivity.max(state.estimator.observe(e_l1, gamma_n));
    }

    let transmitted: Vec<Vec<f64>> = states.iter().map(|s| s.shared.clone()).collect();
    let real = real_sensitivity(&transmitted)?;

    // Phase 3: draw noise and build the snapshot phase 4 aggregates from.
    let add_noise = noise.is_some() && sensitivity > 0.0;
    let mut noise_draws = Vec::with_capacity(n);
    let mut noised = transmitted;
    if add_noise {
        let budget = noise.expect("checked above");
        let scale = sensitivity / budget.b;
        for (i, state) in states.iter_mut().enumerate() {
            let draw = sample_laplace(scale, dim, &mut rng_streams[i])?;
            for (s, nv) in noised[i].iter_mut().zip(&draw.vector) {
                *s += gamma_n * nv;
            }
            state.estimator.record_noise(draw.l1_norm);
            noise_draws.push(draw);
        }
    } else {
        for state in states.iter_mut() {
            state.estimator.record_noise(0.0);
            noise_draws.push(NoiseDraw::zero(dim));
        }
    }

    // Phase 4: aggregate the completed snapshot; phase 5: correct.
    let scalars: Vec<f64> = states.iter().map(|s| s.norm_scalar).collect();
    for (i, state) in states.iter_mut().enumerate() {
        let mut agg = vec![0.0; dim];
        let mut a = 0.0;
        for (j, (vec_j, &a_j)) in noised.iter().zip(&scalars).enumerate() {
            let weight = w.get(i, j);
            if weight != 0.0 {
                for (acc, v) in agg.iter_mut().zip(vec_j) {
                    *acc += weight * v;
                }
                a += weight * a_j;
            }
        }
        if a <= 0.0 || !a.is_finite() {
            return Err(ProtocolError::InvalidNormScalar {
                node: state.node_id,
                value: a,
            });
        }
        state.corrected = agg.iter().map(|v| v / a).collect();
        state.shared = agg;
        state.norm_scalar = a;
    }

    Ok(RoundOutcome {
        states,
        sensitivity_used: sensitivity,
        real_sensitivity: real,
        eps_l1,
        noise_draws,
    })
}

/// Average shared vector over the network.
pub fn network_mean(states: &[NodeState]) -> Vec<f64> {
    let n = states.len();
    let dim = states.first().map_or(0, NodeState::shared_dim);
    let mut mean = vec![0.0; dim];
    for state in states {
        for (m, s) in mean.iter_mut().zip(&state.shared) {
            *m += s;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    mean
}

/// Unify all shared vectors at the exact network mean, reset the
/// normalizing scalars, and re-seed the sensitivity estimators.
pub fn synchronize(states: Vec<NodeState>, reset_mode: SyncResetMode) -> Vec<NodeState> {
    let mean = network_mean(&states);
    let mean_l1: f64 = mean.iter().map(|x| x.abs()).sum();
    let mut states = states;
    for state in states.iter_mut() {
        state.shared = mean.clone();
        state.corrected = mean.clone();
        state.norm_scalar = 1.0;
        let s0_l1 = match reset_mode {
            SyncResetMode::Zeroed => 0.0,
            SyncResetMode::Conservative => mean_l1,
        };
        state.estimator = SensitivityEstimator::pending(
            s0_l1,
            state.estimator.c_prime(),
            state.estimator.lambda(),
        )
        .expect("constants were validated when the node was created");
    }
    states
}
