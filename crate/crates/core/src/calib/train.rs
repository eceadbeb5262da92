use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamState, TrainConfig};
use super::loss::{
    categorical_loss_grad, gaussian_loss_grad, gaussian_nll, soft_cross_entropy,
    CategoricalHeadOutput, GaussianHeadOutput,
};
use super::mlp::{mlp_eval, Activations, MlpParams};
use crate::dmap::BinVector;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Samples per gradient chunk. Chunks are reduced in index order, so results
/// do not depend on the thread count.
const GRAD_CHUNK: usize = 256;

/// Output head of a calibration predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// `(μ, σ)` for a scalar token score.
    Gaussian,
    /// Softmax over DMAP bins.
    Categorical { bins: usize },
}

impl HeadKind {
    pub fn output_dim(self) -> usize {
        match self {
            HeadKind::Gaussian => 2,
            HeadKind::Categorical { bins } => bins,
        }
    }

    fn target_dim(self) -> usize {
        match self {
            HeadKind::Gaussian => 1,
            HeadKind::Categorical { bins } => bins,
        }
    }
}

/// What a predictor is asked to explain for one token.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Scalar(f64),
    Bins(BinVector),
}

/// Flat feature matrix and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    target_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, head: HeadKind) -> Self {
        Dataset {
            dim,
            target_dim: head.target_dim(),
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn from_pairs(pairs: &[(FeatureVector, Observation)], head: HeadKind) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::invalid("empty training set"))?;
        let mut ds = Dataset::new(first.0.z.len(), head);
        for (z, obs) in pairs {
            ds.push(&z.z, obs)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, z: &[f64], obs: &Observation) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::Dimension {
                what: "feature vector",
                expected: self.dim,
                found: z.len(),
            });
        }
        match obs {
            Observation::Scalar(g) if self.target_dim == 1 => self.y.push(*g),
            Observation::Bins(b) if b.len() == self.target_dim && self.target_dim > 1 => {
                self.y.extend_from_slice(&b.q)
            }
            _ => return Err(Error::invalid("observation does not match the head type")),
        }
        self.x.extend_from_slice(z);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len() / self.target_dim
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> (&[f64], &[f64]) {
        (
            &self.x[i * self.dim..(i + 1) * self.dim],
            &self.y[i * self.target_dim..(i + 1) * self.target_dim],
        )
    }
}

/// Per-sample loss and gradient for one head.
pub(crate) fn sample_loss_grad(head: HeadKind, out: &[f64], y: &[f64], d_out: &mut [f64]) -> f64 {
    match head {
        HeadKind::Gaussian => gaussian_loss_grad(out, y[0], d_out),
        HeadKind::Categorical { .. } => categorical_loss_grad(out, y, d_out),
    }
}

/// Mean loss over `idx` and its gradient (written into `grad`). `masks`
/// holds one dropout mask per batch position, `hidden` values each.
pub(crate) fn batch_loss_grad(
    mlp: &MlpParams,
    head: HeadKind,
    rows: &[(&[f64], &[f64])],
    masks: Option<&[f64]>,
    grad: &mut [f64],
) -> f64 {
    let h = mlp.hidden_dim();
    let n_out = head.output_dim();
    let partials: Vec<(f64, Vec<f64>)> = rows
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = vec![0.0; mlp.n_params()];
            let mut acts = Activations::default();
            let mut d_out = vec![0.0; n_out];
            let mut scratch = Vec::new();
            let mut loss = 0.0;
            for (i, (x, y)) in chunk.iter().enumerate() {
                let pos = c * GRAD_CHUNK + i;
                let mask = masks.map(|m| &m[pos * h..(pos + 1) * h]);
                mlp.forward_into(x, mask, &mut acts);
                loss += sample_loss_grad(head, &acts.out, y, &mut d_out);
                mlp.backward_into(x, mask, &acts, &d_out, &mut g, &mut scratch);
            }
            (loss, g)
        })
        .collect();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    loss / n
}

fn column_stats(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = ds.len() as f64;
    let mut mean = vec![0.0; ds.dim];
    for i in 0..ds.len() {
        for (m, v) in mean.iter_mut().zip(ds.row(i).0) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; ds.dim];
    for i in 0..ds.len() {
        for ((s, v), m) in var.iter_mut().zip(ds.row(i).0).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// A trained local density model `P(observation | Z, source)`.
///
/// Inputs are standardised with the training feature moments; Gaussian
/// targets are standardised too, and densities are mapped back to the
/// original units (including the Jacobian term).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub head: HeadKind,
    pub mlp: MlpParams,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_shift: f64,
    pub target_scale: f64,
}

impl Predictor {
    /// Untrained predictor with identity scaling (useful as a baseline).
    pub fn untrained(input: usize, head: HeadKind, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Predictor {
            head,
            mlp: MlpParams::init(input, cfg.hidden, head.output_dim(), cfg.dropout, &mut rng),
            input_shift: vec![0.0; input],
            input_scale: vec![1.0; input],
            target_shift: 0.0,
            target_scale: 1.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn standardise(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_shift.len() {
            return Err(Error::Dimension {
                what: "feature vector",
                expected: self.input_shift.len(),
                found: z.len(),
            });
        }
        Ok(z.iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    /// Predicted Gaussian in the score's own units.
    pub fn gaussian(&self, z: &[f64]) -> Result<GaussianHeadOutput> {
        if self.head != HeadKind::Gaussian {
            return Err(Error::invalid("predictor does not have a Gaussian head"));
        }
        let out = mlp_eval(&self.mlp, &self.standardise(z)?)?;
        let std = GaussianHeadOutput::from_raw(&out);
        Ok(GaussianHeadOutput {
            mu: self.target_shift + self.target_scale * std.mu,
            sigma: self.target_scale * std.sigma,
        })
    }

    pub fn categorical(&self, z: &[f64]) -> Result<CategoricalHeadOutput> {
        if !matches!(self.head, HeadKind::Categorical { .. }) {
            return Err(Error::invalid("predictor does not have a categorical head"));
        }
        let out = mlp_eval(&self.mlp, &self.standardise(z)?)?;
        Ok(CategoricalHeadOutput::from_logits(&out))
    }

    /// `log P(observation | z)`: negative Gaussian NLL, or negative soft
    /// cross-entropy of the observed bin vector.
    pub fn log_density(&self, z: &[f64], obs: &Observation) -> Result<f64> {
        match (self.head, obs) {
            (HeadKind::Gaussian, Observation::Scalar(g)) => Ok(-gaussian_nll(&self.gaussian(z)?, *g)),
            (HeadKind::Categorical { bins }, Observation::Bins(q)) => {
                if q.len() != bins {
                    return Err(Error::Dimension {
                        what: "bin vector",
                        expected: bins,
                        found: q.len(),
                    });
                }
                Ok(-soft_cross_entropy(&self.categorical(z)?, q))
            }
            _ => Err(Error::invalid("observation type does not match predictor head")),
        }
    }
}

pub fn predict_logdensity(p: &Predictor, z: &FeatureVector, obs: &Observation) -> Result<f64> {
    p.log_density(&z.z, obs)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch (standardised units for Gaussian heads).
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

pub fn train_predictor(
    dataset: &[(FeatureVector, Observation)],
    head: HeadKind,
    cfg: &TrainConfig,
) -> Result<(Predictor, TrainReport)> {
    train_dataset(&Dataset::from_pairs(dataset, head)?, head, cfg)
}

/// Fit a predictor with AdamW on mean batch loss.
///
/// One seeded stream drives initialisation, per-epoch shuffling and dropout
/// masks, so identical `(cfg, data)` give bitwise-identical parameters.
pub fn train_dataset(ds: &Dataset, head: HeadKind, cfg: &TrainConfig) -> Result<(Predictor, TrainReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if ds.target_dim != head.target_dim() {
        return Err(Error::invalid("dataset targets do not match the head type"));
    }
    if let HeadKind::Categorical { bins } = head {
        if bins < 2 {
            return Err(Error::config("categorical head needs at least two bins"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mlp = MlpParams::init(ds.dim, cfg.hidden, head.output_dim(), cfg.dropout, &mut rng);
    let (input_shift, input_scale) = column_stats(ds);
    let (target_shift, target_scale) = match head {
        HeadKind::Gaussian => {
            let n = ds.len() as f64;
            let m = ds.y.iter().sum::<f64>() / n;
            let sd = (ds.y.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n).sqrt();
            (m, if sd > 1e-12 { sd } else { 1.0 })
        }
        HeadKind::Categorical { .. } => (0.0, 1.0),
    };

    let xs: Vec<f64> = (0..ds.len())
        .flat_map(|i| {
            ds.row(i)
                .0
                .iter()
                .zip(&input_shift)
                .zip(&input_scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect::<Vec<_>>()
        })
        .collect();
    let ys: Vec<f64> = match head {
        HeadKind::Gaussian => ds.y.iter().map(|y| (y - target_shift) / target_scale).collect(),
        HeadKind::Categorical { .. } => ds.y.clone(),
    };
    let td = ds.target_dim;
    let row = |i: usize| (&xs[i * ds.dim..(i + 1) * ds.dim], &ys[i * td..(i + 1) * td]);

    let mut state = AdamState::new(mlp.n_params());
    let mut grad = vec![0.0; mlp.n_params()];
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut report = TrainReport::default();
    let mut masks = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<(&[f64], &[f64])> = batch.iter().map(|&i| row(i)).collect();
            let mask = if cfg.dropout > 0.0 {
                masks.clear();
                for _ in 0..batch.len() {
                    masks.extend(mlp.dropout_mask(&mut rng));
                }
                Some(masks.as_slice())
            } else {
                None
            };
            let loss = batch_loss_grad(&mlp, head, &rows, mask, &mut grad);
            report.steps += 1;
            adamw_step(mlp.theta_mut(), &grad, &mut state, cfg, report.steps)?;
            epoch_loss += loss * batch.len() as f64;
        }
        let mean = epoch_loss / ds.len() as f64;
        log::debug!("epoch {:>3}: loss {mean:.6}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    if mlp.theta().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("training diverged".into()));
    }
    Ok((
        Predictor {
            head,
            mlp,
            input_shift,
            input_scale,
            target_shift,
            target_scale,
        },
        report,
    ))
}
