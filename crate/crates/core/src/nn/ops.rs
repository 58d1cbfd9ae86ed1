use alloc::vec::Vec;

use crate::fmath;
use crate::rng::{derive_seed, rng_from};

use super::NnError;
use rand::Rng as _;

/// Probabilities are clipped into [PROB_EPS, 1 - PROB_EPS] before any log.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
fn clip(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn relu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Two-class softmax, stable via max subtraction.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = fmath::exp(logits[0] - m);
    let e1 = fmath::exp(logits[1] - m);
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Backward through [`softmax2`]: given probabilities `p` and dL/dp, return dL/dlogits.
pub fn softmax2_backward(p: [f64; 2], dp: [f64; 2]) -> [f64; 2] {
    let dot = dp[0] * p[0] + dp[1] * p[1];
    [p[0] * (dp[0] - dot), p[1] * (dp[1] - dot)]
}

/// Cross-entropy -sum target * log(clip(pred)); supports soft targets.
pub fn cross_entropy(target: [f64; 2], pred: [f64; 2]) -> f64 {
    -(target[0] * fmath::ln(clip(pred[0])) + target[1] * fmath::ln(clip(pred[1])))
}

/// dL/dpred of [`cross_entropy`]; zero where the clip is active.
pub fn cross_entropy_grad(target: [f64; 2], pred: [f64; 2]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for i in 0..2 {
        if pred[i] > PROB_EPS && pred[i] < 1.0 - PROB_EPS {
            g[i] = -target[i] / pred[i];
        }
    }
    g
}

/// KL(p || q) with both arguments clipped.
pub fn kl_divergence(p: [f64; 2], q: [f64; 2]) -> f64 {
    let mut s = 0.0;
    for i in 0..2 {
        let pi = clip(p[i]);
        let qi = clip(q[i]);
        s += pi * fmath::ln(pi / qi);
    }
    s.max(0.0)
}

/// dKL/dp of KL(p || q); zero where the clip is active.
pub fn kl_divergence_grad_p(p: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for i in 0..2 {
        if p[i] > PROB_EPS && p[i] < 1.0 - PROB_EPS {
            g[i] = fmath::ln(p[i] / clip(q[i])) + 1.0;
        }
    }
    g
}

/// dKL/dq of KL(p || q); zero where the clip is active.
pub fn kl_divergence_grad_q(p: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for i in 0..2 {
        if q[i] > PROB_EPS && q[i] < 1.0 - PROB_EPS {
            g[i] = -clip(p[i]) / q[i];
        }
    }
    g
}

/// Deterministic inverted-dropout mask: entries are 0 with probability `rate`,
/// otherwise 1/(1-rate). `rate == 0` yields an all-ones mask.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Result<Vec<f64>, NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidDropoutRate(rate));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = rng_from(derive_seed(seed, "dropout", 0));
    Ok((0..len)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect())
}

/// Apply dropout to a vector; identity when `rate == 0`.
pub fn dropout(input: &[f64], rate: f64, seed: u64) -> Result<Vec<f64>, NnError> {
    let mask = dropout_mask(input.len(), rate, seed)?;
    Ok(input.iter().zip(&mask).map(|(x, m)| x * m).collect())
}

/// Gradient-reversal forward pass: identity.
pub fn gradient_reversal_forward(input: &[f64]) -> Vec<f64> {
    input.to_vec()
}

/// Gradient-reversal backward pass: multiply the incoming gradient by -scale.
pub fn gradient_reversal_backward(grad: &[f64], scale: f64) -> Vec<f64> {
    debug_assert!(scale >= 0.0);
    grad.iter().map(|g| -scale * g).collect()
}
