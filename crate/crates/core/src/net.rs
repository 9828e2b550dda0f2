//! Fully connected feedforward networks and forward propagation.
//!
//! Layers are numbered as in the usual `A[N_0, ..., N_L]` notation: layer 0
//! is the input, layer `L` the output. Internally the per-layer vectors are
//! zero-based, so `weights[h - 1]` is the `N_h x N_{h-1}` matrix feeding
//! layer `h`.
//!
//! All propagation is batched: a batch is a matrix with one example per row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, sample_gaussian, Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Logistic,
    Tanh,
    Relu,
    Softmax,
    /// `s ↦ s^mu`, defined for non-negative pre-activations.
    Power(f64),
}

impl ActivationKind {
    fn apply(self, s: f64) -> Result<f64> {
        Ok(match self {
            ActivationKind::Identity => s,
            ActivationKind::Logistic => logistic(s),
            ActivationKind::Tanh => s.tanh(),
            ActivationKind::Relu => s.max(0.0),
            ActivationKind::Power(mu) => {
                if s < 0.0 {
                    return Err(Error::Domain(format!(
                        "power activation (mu={mu}) received negative pre-activation {s}"
                    )));
                }
                s.powf(mu)
            }
            ActivationKind::Softmax => unreachable!("softmax is applied row-wise"),
        })
    }
}

fn logistic(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

pub fn activation_derivative(kind: ActivationKind, s: f64) -> Result<f64> {
    Ok(match kind {
        ActivationKind::Identity => 1.0,
        ActivationKind::Logistic => {
            let y = logistic(s);
            y * (1.0 - y)
        }
        ActivationKind::Tanh => {
            let y = s.tanh();
            1.0 - y * y
        }
        // s == 0 maps to 0
        ActivationKind::Relu => {
            if s > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::Power(mu) => mu * s.powf(mu - 1.0),
        ActivationKind::Softmax => {
            return Err(Error::InvalidArgument(
                "softmax has no elementwise derivative; pair it with cross-entropy".into(),
            ))
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
    /// One entry per non-input layer.
    pub activations: Vec<ActivationKind>,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

fn default_true() -> bool {
    true
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<ActivationKind>, use_bias: bool) -> Result<Self> {
        let arch = Architecture {
            layer_sizes,
            activations,
            use_bias,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Hidden layers share `hidden`; the output layer uses `output`.
    pub fn uniform(layer_sizes: Vec<usize>, hidden: ActivationKind, output: ActivationKind, use_bias: bool) -> Result<Self> {
        let depth = layer_sizes.len().saturating_sub(1);
        let mut activations = vec![hidden; depth.saturating_sub(1)];
        activations.push(output);
        Self::new(layer_sizes, activations, use_bias)
    }

    /// Parses `"784,100,10"`.
    pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad layer size {s:?} in {spec:?}")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument("architecture needs at least one weight layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        if self.activations.len() != self.depth() {
            return Err(Error::InvalidArgument(format!(
                "{} activations given for {} non-input layers",
                self.activations.len(),
                self.depth()
            )));
        }
        for (i, a) in self.activations.iter().enumerate() {
            match a {
                ActivationKind::Softmax if i + 1 != self.depth() => {
                    return Err(Error::InvalidArgument("softmax is only allowed in the output layer".into()))
                }
                ActivationKind::Power(mu) if *mu == 0.0 || !mu.is_finite() => {
                    return Err(Error::InvalidArgument("power activation needs a finite nonzero exponent".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        self.layer_sizes[self.depth()]
    }

    pub fn output_activation(&self) -> ActivationKind {
        self.activations[self.depth() - 1]
    }
}

/// Operations needed to send error signals with BP:
/// `W = sum_{k=0}^{L-1} N_k N_{k+1}`.
pub fn count_bp_ops(arch: &Architecture) -> u64 {
    arch.layer_sizes
        .windows(2)
        .map(|w| w[0] as u64 * w[1] as u64)
        .sum()
}

/// Operations needed by skipped RBP: `W' = N_L * sum_{k=1}^{L-1} N_k`.
pub fn count_srbp_ops(arch: &Architecture) -> u64 {
    let l = arch.depth();
    let hidden: u64 = arch.layer_sizes[1..l].iter().map(|&n| n as u64).sum();
    arch.layer_sizes[l] as u64 * hidden
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardNet {
    pub arch: Architecture,
    /// `weights[h-1]` has shape `N_h x N_{h-1}`.
    pub weights: Vec<Matrix>,
    /// Empty when the architecture has no biases.
    pub biases: Vec<Vec<f64>>,
}

/// Everything a learning channel needs from one forward pass over a batch.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `O^0`, the batch of inputs.
    pub input: Matrix,
    /// `S^h` for `h = 1..=L` (index `h-1`).
    pub pre: Vec<Matrix>,
    /// `O^h` for `h = 1..=L` (index `h-1`).
    pub post: Vec<Matrix>,
    /// `f'(S^h)`; `None` for a softmax output layer.
    pub deriv: Vec<Option<Matrix>>,
}

impl ForwardTrace {
    /// Activity of layer `h` (`h = 0` is the input).
    pub fn activity(&self, h: usize) -> &Matrix {
        if h == 0 {
            &self.input
        } else {
            &self.post[h - 1]
        }
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().expect("trace has at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

impl ForwardNet {
    pub fn init(arch: &Architecture, rng: &mut SeededRng) -> Result<Self> {
        init_weights(arch, rng)
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        forward(self, input)
    }

    pub fn forward_batch(&self, inputs: &Matrix) -> Result<ForwardTrace> {
        forward_batch(self, inputs)
    }

    /// Output-layer activity only, for evaluation.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut trace = forward_batch(self, inputs)?;
        Ok(trace.post.pop().expect("non-empty"))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.biases.iter().flatten().all(|b| b.is_finite())
    }
}

pub fn init_weights(arch: &Architecture, rng: &mut SeededRng) -> Result<ForwardNet> {
    arch.validate()?;
    let mut weights = Vec::with_capacity(arch.depth());
    for w in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(sample_gaussian(rng, fan_out, fan_in, std)?);
    }
    let biases = if arch.use_bias {
        arch.layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect()
    } else {
        Vec::new()
    };
    Ok(ForwardNet {
        arch: arch.clone(),
        weights,
        biases,
    })
}

pub fn forward(net: &ForwardNet, input: &[f64]) -> Result<ForwardTrace> {
    forward_batch(net, &Matrix::row_vector(input))
}

pub fn forward_batch(net: &ForwardNet, inputs: &Matrix) -> Result<ForwardTrace> {
    if inputs.cols() != net.arch.input_size() {
        return Err(Error::InvalidArgument(format!(
            "input width {} does not match architecture input size {}",
            inputs.cols(),
            net.arch.input_size()
        )));
    }
    let batch = inputs.rows();
    let depth = net.depth();
    let mut pre = Vec::with_capacity(depth);
    let mut post: Vec<Matrix> = Vec::with_capacity(depth);
    let mut deriv = Vec::with_capacity(depth);
    for h in 0..depth {
        let w = &net.weights[h];
        let below = if h == 0 { inputs } else { &post[h - 1] };
        let mut s = Matrix::zeros(batch, w.rows());
        gemm(1.0, below, false, w, true, 0.0, &mut s)?;
        if let Some(b) = net.biases.get(h) {
            for r in 0..batch {
                for (x, bias) in s.row_mut(r).iter_mut().zip(b) {
                    *x += bias;
                }
            }
        }
        let kind = net.arch.activations[h];
        let (o, d) = match kind {
            ActivationKind::Softmax => (softmax_rows(&s), None),
            ActivationKind::Tanh => {
                let o = s.map(f64::tanh);
                let d = o.map(|y| 1.0 - y * y);
                (o, Some(d))
            }
            ActivationKind::Logistic => {
                let o = s.map(logistic);
                let d = o.map(|y| y * (1.0 - y));
                (o, Some(d))
            }
            _ => {
                let mut o = Matrix::zeros(batch, s.cols());
                let mut d = Matrix::zeros(batch, s.cols());
                for ((ov, dv), &sv) in o
                    .as_mut_slice()
                    .iter_mut()
                    .zip(d.as_mut_slice().iter_mut())
                    .zip(s.as_slice())
                {
                    *ov = kind.apply(sv)?;
                    *dv = activation_derivative(kind, sv)?;
                }
                (o, Some(d))
            }
        };
        pre.push(s);
        post.push(o);
        deriv.push(d);
    }
    Ok(ForwardTrace {
        input: inputs.clone(),
        pre,
        post,
        deriv,
    })
}

fn softmax_rows(s: &Matrix) -> Matrix {
    let mut out = s.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}
