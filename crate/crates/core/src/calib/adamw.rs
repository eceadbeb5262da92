use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimisation recipe for one calibration predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 4096,
            dropout: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hidden: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return bad("epochs, batch_size and hidden must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate and eps must be positive, weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One AdamW update at step `t ≥ 1` with bias correction and decoupled
/// weight decay: `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
    t: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Dimension {
            what: "optimizer state",
            expected: params.len(),
            found: grads.len(),
        });
    }
    if t == 0 {
        return Err(Error::invalid("optimizer step index starts at 1"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let lr = cfg.learning_rate;
    let decay = lr * cfg.weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps) + decay * *p;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![1.5, -2.0];
        let mut s = AdamState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut s, &cfg, 1).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    // Scalar trace computed by hand from the update equations before the build.
    #[test]
    fn scalar_trace() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adamw_step(&mut p, &[1.0], &mut s, &cfg, 1).unwrap();
        assert_abs_diff_eq!(p[0], 0.99899990001, epsilon = 1e-12);
        adamw_step(&mut p, &[1.0], &mut s, &cfg, 2).unwrap();
        assert_abs_diff_eq!(p[0], 0.9979998001200101, epsilon = 1e-12);
    }

    #[test]
    fn no_decay_reduces_to_adam() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adamw_step(&mut p, &[1.0], &mut s, &cfg, 1).unwrap();
        assert_abs_diff_eq!(p[0], 0.99900000001, epsilon = 1e-12);
        adamw_step(&mut p, &[1.0], &mut s, &cfg, 2).unwrap();
        assert_abs_diff_eq!(p[0], 0.99800000002, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        assert!(matches!(
            adamw_step(&mut p, &[f64::NAN], &mut s, &cfg, 1),
            Err(Error::Numeric(_))
        ));
        assert!(adamw_step(&mut p, &[1.0], &mut s, &cfg, 0).is_err());
        assert!(adamw_step(&mut p, &[1.0, 2.0], &mut s, &cfg, 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
