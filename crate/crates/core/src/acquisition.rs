//! Acquisition functions and the GP-Hedge portfolio over them.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::Result;
use crate::gp::{GpModel, Posterior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    /// Probability of improvement.
    Pi,
    /// Expected improvement.
    Ei,
    /// Upper confidence bound.
    Ucb,
}

impl Acquisition {
    pub const ALL: [Acquisition; 3] = [Acquisition::Pi, Acquisition::Ei, Acquisition::Ucb];

    pub fn index(self) -> usize {
        match self {
            Acquisition::Pi => 0,
            Acquisition::Ei => 1,
            Acquisition::Ucb => 2,
        }
    }

    /// Scores a posterior against incumbent `tau`; `lambda` is used by UCB only.
    pub fn score(self, post: &Posterior, tau: f64, lambda: f64) -> f64 {
        match self {
            Acquisition::Pi => probability_of_improvement(post, tau),
            Acquisition::Ei => expected_improvement(post, tau),
            Acquisition::Ucb => ucb(post, lambda),
        }
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(f(x) > τ)`.
pub fn probability_of_improvement(post: &Posterior, tau: f64) -> f64 {
    if post.std <= 0.0 {
        return if post.mean > tau { 1.0 } else { 0.0 };
    }
    normal_cdf((post.mean - tau) / post.std)
}

/// `E[(f(x) − τ)·1{f(x) > τ}]`.
pub fn expected_improvement(post: &Posterior, tau: f64) -> f64 {
    if post.std <= 0.0 {
        return (post.mean - tau).max(0.0);
    }
    let z = (post.mean - tau) / post.std;
    (post.std * (z * normal_cdf(z) + normal_pdf(z))).max(0.0)
}

pub fn ucb(post: &Posterior, lambda: f64) -> f64 {
    post.mean + lambda * post.std
}

/// Cumulative gains of the three acquisition functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeState {
    /// PI, EI, UCB order.
    pub gains: [f64; 3],
    pub eta: f64,
}

impl HedgeState {
    pub fn new(eta: f64) -> Self {
        HedgeState {
            gains: [0.0; 3],
            eta,
        }
    }

    /// `softmax(eta · gains)`, shifted by the max gain for stability.
    pub fn probabilities(&self) -> [f64; 3] {
        let scaled = self.gains.map(|g| self.eta * g);
        let top = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights = scaled.map(|s| (s - top).exp());
        let total: f64 = weights.iter().sum();
        weights.map(|w| w / total)
    }
}

/// Draws an acquisition with probability proportional to `exp(eta · gain)`.
pub fn hedge_select<R: Rng + ?Sized>(state: &HedgeState, rng: &mut R) -> Acquisition {
    let probs = state.probabilities();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (acq, p) in Acquisition::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *acq;
        }
    }
    Acquisition::Ucb
}

/// Credits each acquisition with the posterior mean at its own nominee.
pub fn hedge_update(state: &mut HedgeState, proposals: &[Vec<f64>; 3], model: &GpModel) -> Result<()> {
    for (gain, point) in state.gains.iter_mut().zip(proposals) {
        *gain += model.posterior_at(point)?.mean;
    }
    Ok(())
}
