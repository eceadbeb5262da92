use crate::dmap::BinVector;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHeadOutput {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianHeadOutput {
    /// Read `(μ, softplus(raw σ))` off a two-unit output layer.
    pub fn from_raw(out: &[f64]) -> Self {
        GaussianHeadOutput {
            mu: out[0],
            sigma: softplus(out[1]),
        }
    }

    pub fn z_score(&self, g: f64) -> f64 {
        (g - self.mu) / self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalHeadOutput {
    pub probs: Vec<f64>,
}

impl CategoricalHeadOutput {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = exps.iter().sum();
        CategoricalHeadOutput {
            probs: exps.into_iter().map(|e| e / s).collect(),
        }
    }
}

/// `½ ln(2πσ²) + (g − μ)² / (2σ²)`, i.e. `−ln N(g; μ, σ)`.
pub fn gaussian_nll(out: &GaussianHeadOutput, g: f64) -> f64 {
    let r = (g - out.mu) / out.sigma;
    HALF_LN_2PI + out.sigma.ln() + 0.5 * r * r
}

/// `−Σ_b target_b ln pred_b`.
pub fn soft_cross_entropy(pred: &CategoricalHeadOutput, target: &BinVector) -> f64 {
    pred.probs
        .iter()
        .zip(&target.q)
        .filter(|(_, &t)| t != 0.0)
        .map(|(p, t)| -t * p.ln())
        .sum()
}

/// Gaussian NLL and its gradient with respect to the raw `(μ, σ_raw)` outputs.
pub(crate) fn gaussian_loss_grad(out: &[f64], y: f64, d_out: &mut [f64]) -> f64 {
    let head = GaussianHeadOutput::from_raw(out);
    let s = head.sigma;
    let r = (y - head.mu) / s;
    d_out[0] = -r / s;
    // dL/dσ = 1/σ − r²/σ, dσ/draw = sigmoid(raw)
    d_out[1] = (1.0 - r * r) / s * sigmoid(out[1]);
    HALF_LN_2PI + s.ln() + 0.5 * r * r
}

/// Soft cross-entropy of `softmax(logits)` and its logit gradient.
pub(crate) fn categorical_loss_grad(logits: &[f64], target: &[f64], d_out: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let t_sum: f64 = target.iter().sum();
    let mut loss = 0.0;
    for ((d, &l), &t) in d_out.iter_mut().zip(logits).zip(target) {
        let logp = l - lse;
        *d = logp.exp() * t_sum - t;
        if t != 0.0 {
            loss -= t * logp;
        }
    }
    loss
}
