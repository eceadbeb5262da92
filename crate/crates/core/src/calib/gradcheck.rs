use super::mlp::MlpParams;
use super::train::{batch_loss_grad, HeadKind};

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so parameters whose gradient is
/// essentially zero are compared on an absolute scale.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest `|a − n| / max(|a|, |n|, floor)` over all parameters.
    pub max_rel_error: f64,
}

/// Compare backprop with central differences of the mean batch loss
/// (dropout off).
pub fn gradcheck(mlp: &MlpParams, head: HeadKind, rows: &[(&[f64], &[f64])]) -> GradCheck {
    let mut analytic = vec![0.0; mlp.n_params()];
    batch_loss_grad(mlp, head, rows, None, &mut analytic);
    let mut probe = mlp.clone();
    let mut scratch = vec![0.0; mlp.n_params()];
    let mut numeric = Vec::with_capacity(mlp.n_params());
    for i in 0..mlp.n_params() {
        let orig = probe.theta()[i];
        probe.theta_mut()[i] = orig + GRADCHECK_STEP;
        let up = batch_loss_grad(&probe, head, rows, None, &mut scratch);
        probe.theta_mut()[i] = orig - GRADCHECK_STEP;
        let down = batch_loss_grad(&probe, head, rows, None, &mut scratch);
        probe.theta_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * GRADCHECK_STEP));
    }
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_FLOOR))
        .fold(0.0, f64::max);
    GradCheck {
        analytic,
        numeric,
        max_rel_error,
    }
}
