use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::erf;

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / SQRT_2))
}

/// `d/dx x Φ(x) = Φ(x) + x φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Two-layer perceptron `W2 · dropout(GELU(W1 z + b1)) + b2`.
///
/// Parameters live in one flat buffer laid out as `W1 | b1 | W2 | b2`
/// (row-major matrices) so the optimizer can treat them as a single vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpFile", into = "MlpFile")]
pub struct MlpParams {
    input: usize,
    hidden: usize,
    output: usize,
    pub dropout: f64,
    theta: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input: usize, hidden: usize, output: usize, dropout: f64) -> Self {
        let n = hidden * input + hidden + output * hidden + output;
        MlpParams {
            input,
            hidden,
            output,
            dropout,
            theta: vec![0.0; n],
        }
    }

    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn init<R: Rng>(input: usize, hidden: usize, output: usize, dropout: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden, output, dropout);
        let b1 = 1.0 / (input as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let (l1, l2) = (hidden * input + hidden, p.theta.len());
        for (i, v) in p.theta.iter_mut().enumerate() {
            let bound = if i < l1 { b1 } else { b2 };
            debug_assert!(i < l2);
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.theta[o[0]..o[1]]
    }
    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.theta[o[1]..o[2]]
    }
    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.theta[o[2]..o[3]]
    }
    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.theta[o[3]..]
    }

    pub fn b2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.theta[o[3]..]
    }

    /// Draw an inverted-dropout mask (entries `0` or `1/(1-rate)`).
    pub fn dropout_mask<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.dropout);
        (0..self.hidden)
            .map(|_| if rng.random::<f64>() < self.dropout { 0.0 } else { keep })
            .collect()
    }

    /// Forward pass into reusable buffers. `mask` multiplies the hidden
    /// activation (train mode); `None` is the eval path.
    pub fn forward_into(&self, x: &[f64], mask: Option<&[f64]>, acts: &mut Activations) {
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        acts.pre.resize(self.hidden, 0.0);
        acts.cdf.resize(self.hidden, 0.0);
        acts.post.resize(self.hidden, 0.0);
        acts.out.resize(self.output, 0.0);
        for j in 0..self.hidden {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let a = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            acts.pre[j] = a;
            let cdf = 0.5 * (1.0 + erf(a / SQRT_2));
            acts.cdf[j] = cdf;
            let h = a * cdf;
            acts.post[j] = match mask {
                Some(m) => h * m[j],
                None => h,
            };
        }
        for o in 0..self.output {
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            acts.out[o] = b2[o] + row.iter().zip(&acts.post).map(|(w, h)| w * h).sum::<f64>();
        }
    }

    /// Accumulate `∂loss/∂θ` into `grad` given `∂loss/∂out` for one sample
    /// whose forward pass filled `acts`.
    pub fn backward_into(
        &self,
        x: &[f64],
        mask: Option<&[f64]>,
        acts: &Activations,
        d_out: &[f64],
        grad: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        let o = self.offsets();
        let w2 = self.w2();
        let (g_w1, rest) = grad.split_at_mut(o[1]);
        let (g_b1, rest) = rest.split_at_mut(o[2] - o[1]);
        let (g_w2, g_b2) = rest.split_at_mut(o[3] - o[2]);

        scratch.clear();
        scratch.resize(self.hidden, 0.0);
        for (k, &d) in d_out.iter().enumerate() {
            g_b2[k] += d;
            let gw = &mut g_w2[k * self.hidden..(k + 1) * self.hidden];
            let w = &w2[k * self.hidden..(k + 1) * self.hidden];
            for j in 0..self.hidden {
                gw[j] += d * acts.post[j];
                scratch[j] += d * w[j];
            }
        }
        for j in 0..self.hidden {
            let a = acts.pre[j];
            let mut d = scratch[j] * (acts.cdf[j] + a * INV_SQRT_2PI * (-0.5 * a * a).exp());
            if let Some(m) = mask {
                d *= m[j];
            }
            if d == 0.0 {
                continue;
            }
            g_b1[j] += d;
            let gw = &mut g_w1[j * self.input..(j + 1) * self.input];
            for (g, v) in gw.iter_mut().zip(x) {
                *g += d * v;
            }
        }
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.input {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input,
                found: z.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Activations {
    pub pre: Vec<f64>,
    /// `Φ(pre)`, kept for the backward pass.
    pub cdf: Vec<f64>,
    pub post: Vec<f64>,
    pub out: Vec<f64>,
}

/// Network output for one input. Train mode draws a dropout mask from `rng`.
pub fn mlp_forward<R: Rng>(p: &MlpParams, z: &[f64], mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
    p.check_input(z)?;
    let mask = match mode {
        Mode::Train if p.dropout > 0.0 => Some(p.dropout_mask(rng)),
        _ => None,
    };
    let mut acts = Activations::default();
    p.forward_into(z, mask.as_deref(), &mut acts);
    Ok(acts.out)
}

/// Eval-mode forward pass.
pub fn mlp_eval(p: &MlpParams, z: &[f64]) -> Result<Vec<f64>> {
    p.check_input(z)?;
    let mut acts = Activations::default();
    p.forward_into(z, None, &mut acts);
    Ok(acts.out)
}

// On-disk form: named tensors with explicit shapes.

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    activation: String,
    dropout: f64,
    tensors: Vec<Tensor>,
}

impl From<MlpParams> for MlpFile {
    fn from(p: MlpParams) -> Self {
        let shapes = [
            ("w1", vec![p.hidden, p.input]),
            ("b1", vec![p.hidden]),
            ("w2", vec![p.output, p.hidden]),
            ("b2", vec![p.output]),
        ];
        let o = p.offsets();
        let ends = [o[1], o[2], o[3], p.theta.len()];
        let tensors = shapes
            .into_iter()
            .zip(o.iter().zip(ends))
            .map(|((name, shape), (&s, e))| Tensor {
                name: name.into(),
                shape,
                data: p.theta[s..e].to_vec(),
            })
            .collect();
        MlpFile {
            activation: "gelu".into(),
            dropout: p.dropout,
            tensors,
        }
    }
}

impl TryFrom<MlpFile> for MlpParams {
    type Error = Error;
    fn try_from(f: MlpFile) -> Result<Self> {
        if f.activation != "gelu" {
            return Err(Error::invalid(format!("unsupported activation '{}'", f.activation)));
        }
        let names = ["w1", "b1", "w2", "b2"];
        if f.tensors.len() != 4 || f.tensors.iter().zip(names).any(|(t, n)| t.name != n) {
            return Err(Error::invalid("expected tensors w1, b1, w2, b2"));
        }
        let t = &f.tensors;
        let (hidden, input) = match t[0].shape.as_slice() {
            [h, i] => (*h, *i),
            _ => return Err(Error::invalid("w1 must be two-dimensional")),
        };
        let output = match t[2].shape.as_slice() {
            [o, h] if *h == hidden => *o,
            _ => return Err(Error::invalid("w2 shape inconsistent with w1")),
        };
        if t[1].shape != [hidden] || t[3].shape != [output] {
            return Err(Error::invalid("bias shapes inconsistent"));
        }
        let mut p = MlpParams::zeros(input, hidden, output, f.dropout);
        let mut theta = Vec::with_capacity(p.theta.len());
        for tensor in t {
            let expect: usize = tensor.shape.iter().product();
            if tensor.data.len() != expect {
                return Err(Error::invalid(format!(
                    "tensor {} holds {} values, shape needs {expect}",
                    tensor.name,
                    tensor.data.len()
                )));
            }
            theta.extend_from_slice(&tensor.data);
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        p.theta = theta;
        Ok(p)
    }
}
