//! Laplace noise, the per-node sensitivity-estimate recursion, the
//! brute-force real-sensitivity oracle, and the per-round privacy budget.
//!
//! The estimate kept by each node evolves as a scalar recursion over the L1
//! norms of its own perturbations and previously drawn noise:
//!
//! ```text
//! S_i(0) = 2 C' (||s_i(0)||_1 + ||eps_i(0)||_1)
//! S_i(t) = lambda S_i(t-1) + 2 C' (||eps_i(t)||_1 + lambda gamma_n ||n_i(t-1)||_1)
//! ```
//!
//! with `C' > 0` and `lambda` in `(0, 1)`. The network sensitivity for a
//! round is the maximum of the per-node values, and the Laplace scale used
//! for that round is `S / b`. The protocol as a whole then satisfies
//! `b / gamma_n`-differential privacy per round.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("lambda must lie strictly inside (0, 1), got {0}")]
    LambdaOutOfRange(f64),
    #[error("c_prime must be positive, got {0}")]
    NonPositiveCPrime(f64),
    #[error("laplace scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("privacy budget b must be positive, got {0}")]
    NonPositiveBudget(f64),
    #[error("noise rate gamma_n must be positive, got {0}")]
    NonPositiveNoiseRate(f64),
    #[error("shared vectors have mismatched dimensions: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// One node's sensitivity-estimate state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityEstimate {
    /// Current value `S_i(t)`.
    pub value: f64,
    /// Scaling constant `C'`.
    pub c_prime: f64,
    /// Decay constant `lambda` in (0, 1).
    pub lambda: f64,
    /// L1 norm of the noise drawn in the round this estimate was produced,
    /// carried into the next update.
    pub last_noise_l1: f64,
    /// Rounds observed so far (0 right after initialization).
    pub round: u64,
}

/// Initialize the recursion at `t = 0`:
/// `value = 2 C' s0_l1 + 2 C' eps0_l1`.
pub fn init_estimate(
    s0_l1: f64,
    eps0_l1: f64,
    c_prime: f64,
    lambda: f64,
) -> Result<SensitivityEstimate, PrivacyError> {
    if lambda.is_nan() || lambda <= 0.0 || lambda >= 1.0 {
        return Err(PrivacyError::LambdaOutOfRange(lambda));
    }
    if c_prime.is_nan() || c_prime <= 0.0 {
        return Err(PrivacyError::NonPositiveCPrime(c_prime));
    }
    Ok(SensitivityEstimate {
        value: 2.0 * c_prime * s0_l1 + 2.0 * c_prime * eps0_l1,
        c_prime,
        lambda,
        last_noise_l1: 0.0,
        round: 0,
    })
}

/// Advance the recursion one round:
/// `value <- lambda value + 2 C' (eps_l1 + lambda gamma_n prev_noise_l1)`.
///
/// `prev_noise_l1` is the L1 norm of the noise drawn in the previous round;
/// the returned state has `last_noise_l1 = 0` until the current round's
/// noise is recorded.
pub fn update_estimate(
    est: &SensitivityEstimate,
    eps_l1: f64,
    prev_noise_l1: f64,
    gamma_n: f64,
) -> SensitivityEstimate {
    let value = est.lambda * est.value
        + 2.0 * est.c_prime * (eps_l1 + est.lambda * gamma_n * prev_noise_l1);
    SensitivityEstimate {
        value,
        c_prime: est.c_prime,
        lambda: est.lambda,
        last_noise_l1: 0.0,
        round: est.round + 1,
    }
}

/// Per-node estimator slot. A node starts (and restarts after each
/// synchronization) in `Pending` carrying the `||s(0)||_1` baseline; the
/// first perturbation it observes runs the `t = 0` case of the recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum SensitivityEstimator {
    Pending {
        s0_l1: f64,
        c_prime: f64,
        lambda: f64,
    },
    Active(SensitivityEstimate),
}

impl SensitivityEstimator {
    pub fn pending(s0_l1: f64, c_prime: f64, lambda: f64) -> Result<Self, PrivacyError> {
        if lambda.is_nan() || lambda <= 0.0 || lambda >= 1.0 {
            return Err(PrivacyError::LambdaOutOfRange(lambda));
        }
        if c_prime.is_nan() || c_prime <= 0.0 {
            return Err(PrivacyError::NonPositiveCPrime(c_prime));
        }
        Ok(SensitivityEstimator::Pending {
            s0_l1,
            c_prime,
            lambda,
        })
    }

    pub fn c_prime(&self) -> f64 {
        match self {
            SensitivityEstimator::Pending { c_prime, .. } => *c_prime,
            SensitivityEstimator::Active(est) => est.c_prime,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            SensitivityEstimator::Pending { lambda, .. } => *lambda,
            SensitivityEstimator::Active(est) => est.lambda,
        }
    }

    /// True before the first post-(re)initialization perturbation.
    pub fn is_pending(&self) -> bool {
        matches!(self, SensitivityEstimator::Pending { .. })
    }

    /// Baseline `||s(0)||_1` when pending.
    pub fn pending_s0_l1(&self) -> Option<f64> {
        match self {
            SensitivityEstimator::Pending { s0_l1, .. } => Some(*s0_l1),
            SensitivityEstimator::Active(_) => None,
        }
    }

    /// Feed this round's perturbation norm and return the updated value.
    pub fn observe(&mut self, eps_l1: f64, gamma_n: f64) -> f64 {
        let next = match self {
            SensitivityEstimator::Pending {
                s0_l1,
                c_prime,
                lambda,
            } => init_estimate(*s0_l1, eps_l1, *c_prime, *lambda)
                .expect("constants validated at construction"),
            SensitivityEstimator::Active(est) => {
                update_estimate(est, eps_l1, est.last_noise_l1, gamma_n)
            }
        };
        let value = next.value;
        *self = SensitivityEstimator::Active(next);
        value
    }

    /// Record the L1 norm of the noise drawn this round, used by the next
    /// update. A no-op while pending (no noise precedes the first round).
    pub fn record_noise(&mut self, noise_l1: f64) {
        if let SensitivityEstimator::Active(est) = self {
            est.last_noise_l1 = noise_l1;
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            SensitivityEstimator::Pending { .. } => None,
            SensitivityEstimator::Active(est) => Some(est.value),
        }
    }
}

/// A sampled noise vector with its Laplace scale and cached L1 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub vector: Vec<f64>,
    pub scale: f64,
    pub l1_norm: f64,
}

impl NoiseDraw {
    /// The exact zero draw used on zero-sensitivity or noiseless rounds.
    pub fn zero(dim: usize) -> Self {
        NoiseDraw {
            vector: vec![0.0; dim],
            scale: 0.0,
            l1_norm: 0.0,
        }
    }
}

/// Draw `dim` i.i.d. samples from `Lap(0, scale)` by inverse CDF: for `u`
/// uniform on `(-1/2, 1/2)`, `x = -scale * sgn(u) * ln(1 - 2|u|)`. The
/// uniform draw excludes the endpoint exactly so `ln` never sees 0.
pub fn sample_laplace<R: Rng + ?Sized>(
    scale: f64,
    dim: usize,
    rng: &mut R,
) -> Result<NoiseDraw, PrivacyError> {
    if scale <= 0.0 || !scale.is_finite() {
        return Err(PrivacyError::BadScale(scale));
    }
    let mut vector = Vec::with_capacity(dim);
    let mut l1 = 0.0;
    for _ in 0..dim {
        let mut u: f64 = rng.random();
        while u == 0.0 {
            u = rng.random();
        }
        let centered = u - 0.5; // in (-1/2, 1/2)
        let x = if centered > 0.0 {
            -scale * (1.0 - 2.0 * centered).ln()
        } else if centered < 0.0 {
            scale * (1.0 + 2.0 * centered).ln()
        } else {
            0.0
        };
        l1 += x.abs();
        vector.push(x);
    }
    Ok(NoiseDraw {
        vector,
        scale,
        l1_norm: l1,
    })
}

/// Ground-truth sensitivity oracle: the maximum pairwise L1 distance over
/// all node pairs. Brute force, `O(N^2 d)`.
pub fn real_sensitivity(shared_vectors: &[Vec<f64>]) -> Result<f64, PrivacyError> {
    let Some(first) = shared_vectors.first() else {
        return Ok(0.0);
    };
    let dim = first.len();
    for v in shared_vectors {
        if v.len() != dim {
            return Err(PrivacyError::DimensionMismatch(dim, v.len()));
        }
    }
    let mut max = 0.0f64;
    for i in 0..shared_vectors.len() {
        for j in (i + 1)..shared_vectors.len() {
            let d: f64 = shared_vectors[i]
                .iter()
                .zip(&shared_vectors[j])
                .map(|(a, b)| (a - b).abs())
                .sum();
            max = max.max(d);
        }
    }
    Ok(max)
}

/// The network sensitivity for a round: the exact global maximum of the
/// per-node estimates (the simulator's realization of the scalar broadcast).
pub fn network_sensitivity(estimates: &[SensitivityEstimate]) -> f64 {
    estimates.iter().fold(0.0f64, |m, e| m.max(e.value))
}

/// Per-round privacy budget: `epsilon = b / gamma_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub b: f64,
    pub gamma_n: f64,
    pub epsilon_per_round: f64,
}

pub fn privacy_budget(b: f64, gamma_n: f64) -> Result<PrivacyBudget, PrivacyError> {
    if b.is_nan() || b <= 0.0 {
        return Err(PrivacyError::NonPositiveBudget(b));
    }
    if gamma_n.is_nan() || gamma_n <= 0.0 {
        return Err(PrivacyError::NonPositiveNoiseRate(gamma_n));
    }
    Ok(PrivacyBudget {
        b,
        gamma_n,
        epsilon_per_round: b / gamma_n,
    })
}

/// Evaluate the closed-form triple sum for a full input trace; this is the
/// independent oracle for the recursion. `eps_l1[k]` covers `k = 0..=t`,
/// `noise_l1[k]` covers `k = 0..t` (noise drawn before round `t`).
pub fn closed_form_estimate(
    s0_l1: f64,
    eps_l1: &[f64],
    noise_l1: &[f64],
    c_prime: f64,
    lambda: f64,
    gamma_n: f64,
) -> f64 {
    let t = eps_l1.len() - 1;
    let mut total = 2.0 * c_prime * lambda.powi(t as i32) * s0_l1;
    for (k, &e) in eps_l1.iter().enumerate() {
        total += 2.0 * c_prime * lambda.powi((t - k) as i32) * e;
    }
    for (k, &n) in noise_l1.iter().enumerate().take(t) {
        total += 2.0 * gamma_n * c_prime * lambda.powi((t - k) as i32) * n;
    }
    total
}
