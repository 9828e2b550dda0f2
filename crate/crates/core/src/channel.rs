//! Learning channels: how the output error `T - O` reaches the deep layers.
//!
//! A channel turns a [`ForwardTrace`] and a batch of targets into per-layer
//! error signals ([`backward_signals`]) and then into weight updates of the
//! form `Δw_ij = η R_i O_j` ([`weight_updates`]). The algorithms differ only
//! in how the hidden-layer signals `R^h` are produced:
//!
//! | algorithm        | hidden-layer signal                                    |
//! |------------------|--------------------------------------------------------|
//! | BP               | `f'(S^h) ⊙ (R^{h+1} W^{h+1})`                          |
//! | SBP              | `f'(S^h) ⊙ ((T-O) W^L ... W^{h+1})`                    |
//! | RBP / ARBP       | `f'(S^h) ⊙ (R^{h+1} C^{h+1}ᵗ)`, `C^{h+1}` random       |
//! | SRBP / ASRBP     | `f'(S^h) ⊙ ((T-O) C^hᵗ)`, `C^h` random `N_h x N_L`     |
//! | top layer only   | zero                                                   |
//!
//! (Signals are stored batch-major, so the row-vector products above are the
//! transposes of the usual column-vector recurrences.)
//!
//! The top layer always receives `R^L = T - O^L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, sample_bernoulli, sample_gaussian, Matrix, SeededRng};
use crate::net::{Architecture, ForwardNet, ForwardTrace};

/// Default scale for quantized error signals.
pub const ERROR_QUANT_ALPHA: f64 = 0.125;
/// Default scale for quantized weight updates.
pub const UPDATE_QUANT_ALPHA: f64 = 1.0 / 64.0;
/// Learning-rate factor applied to adaptive backward matrices.
pub const ADAPT_RATE_FACTOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelAlgorithm {
    #[serde(alias = "BP")]
    Bp,
    #[serde(alias = "SBP")]
    Sbp,
    #[serde(alias = "RBP")]
    Rbp,
    #[serde(alias = "SRBP")]
    Srbp,
    #[serde(alias = "ARBP")]
    Arbp,
    #[serde(alias = "ASRBP")]
    Asrbp,
    TopLayerOnly,
    /// Exact gradient; numerically identical to BP.
    GradientOracle,
}

impl ChannelAlgorithm {
    pub fn uses_random_matrices(self) -> bool {
        matches!(self, Self::Rbp | Self::Srbp | Self::Arbp | Self::Asrbp)
    }

    /// Backward matrices connect the output layer directly to each hidden layer.
    pub fn is_skipped(self) -> bool {
        matches!(self, Self::Srbp | Self::Asrbp)
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Self::Arbp | Self::Asrbp)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Bp => "BP",
            Self::Sbp => "SBP",
            Self::Rbp => "RBP",
            Self::Srbp => "SRBP",
            Self::Arbp => "ARBP",
            Self::Asrbp => "ASRBP",
            Self::TopLayerOnly => "TopLayerOnly",
            Self::GradientOracle => "GradientOracle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sparsity {
    /// Expected number of nonzero backward connections per sending unit.
    pub n: f64,
    /// Divide entries by `sqrt(n)`.
    #[serde(default)]
    pub rescale: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantization {
    pub bits: u32,
    /// Scale factor; falls back to the per-use default when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModifiers {
    pub use_fprime: bool,
    pub sparse: Option<Sparsity>,
    pub resample_each_batch: bool,
    pub sign_concordant: bool,
    pub sign_only_update: bool,
    pub abs_only_update: bool,
    pub per_weight_random: bool,
    pub error_quant: Option<Quantization>,
    pub update_quant: Option<Quantization>,
    pub lc_dropout: f64,
    pub nonzero_mean: Option<f64>,
}

impl Default for ChannelModifiers {
    fn default() -> Self {
        ChannelModifiers {
            use_fprime: true,
            sparse: None,
            resample_each_batch: false,
            sign_concordant: false,
            sign_only_update: false,
            abs_only_update: false,
            per_weight_random: false,
            error_quant: None,
            update_quant: None,
            lc_dropout: 0.0,
            nonzero_mean: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub algorithm: ChannelAlgorithm,
    #[serde(default)]
    pub modifiers: ChannelModifiers,
}

impl ChannelSpec {
    pub fn new(algorithm: ChannelAlgorithm) -> Self {
        ChannelSpec {
            algorithm,
            modifiers: ChannelModifiers::default(),
        }
    }

    pub fn with(algorithm: ChannelAlgorithm, modifiers: ChannelModifiers) -> Self {
        ChannelSpec { algorithm, modifiers }
    }

    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let m = &self.modifiers;
        let alg = self.algorithm;
        let bad = |msg: String| Err(Error::Channel(msg));
        if m.sign_only_update && m.abs_only_update {
            return bad("sign_only_update and abs_only_update are mutually exclusive".into());
        }
        let needs_random = [
            ("sparse", m.sparse.is_some()),
            ("resample_each_batch", m.resample_each_batch),
            ("sign_concordant", m.sign_concordant),
            ("per_weight_random", m.per_weight_random),
            ("nonzero_mean", m.nonzero_mean.is_some()),
        ];
        for (name, set) in needs_random {
            if set && !alg.uses_random_matrices() {
                return bad(format!("{name} requires a random-matrix channel, not {}", alg.label()));
            }
        }
        if m.sign_concordant && alg.is_skipped() {
            return bad("sign_concordant needs layer-to-layer backward matrices (RBP/ARBP)".into());
        }
        if m.per_weight_random {
            if alg != ChannelAlgorithm::Srbp {
                return bad("per_weight_random is defined for SRBP only".into());
            }
            if m.sign_only_update || m.abs_only_update || m.update_quant.is_some() || m.sparse.is_some() {
                return bad("per_weight_random cannot be combined with sign/abs/quantized updates or sparsity".into());
            }
        }
        if alg.is_adaptive() && (m.resample_each_batch || m.sign_concordant) {
            return bad("adaptive channels cannot be resampled or sign-conformed".into());
        }
        if !(0.0..1.0).contains(&m.lc_dropout) {
            return bad(format!("lc_dropout must lie in [0,1), got {}", m.lc_dropout));
        }
        for (name, q) in [("error_quant", m.error_quant), ("update_quant", m.update_quant)] {
            if let Some(q) = q {
                if q.bits == 0 || q.alpha.is_some_and(|a| !(a > 0.0)) {
                    return bad(format!("{name} needs bits >= 1 and alpha > 0"));
                }
            }
        }
        if let Some(s) = m.sparse {
            if !(s.n >= 0.0) {
                return bad("sparsity n must be non-negative".into());
            }
            for (rows, _) in backward_shapes(arch, alg) {
                if s.n > rows as f64 {
                    return bad(format!("sparsity n={} exceeds receiving layer width {rows}", s.n));
                }
            }
        }
        Ok(())
    }
}

/// Shapes of the backward matrices feeding hidden layers `1..L`.
fn backward_shapes(arch: &Architecture, alg: ChannelAlgorithm) -> Vec<(usize, usize)> {
    let sizes = &arch.layer_sizes;
    let l = arch.depth();
    (1..l)
        .map(|h| if alg.is_skipped() { (sizes[h], sizes[l]) } else { (sizes[h], sizes[h + 1]) })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ChannelState {
    pub spec: ChannelSpec,
    /// `backward[h-1]` feeds hidden layer `h`: `C^{h+1}` (`N_h x N_{h+1}`) for
    /// layered channels, `C^h` (`N_h x N_L`) for skipped ones. Sign-concordant
    /// channels store magnitudes here; see [`ChannelState::effective_backward`].
    pub backward: Vec<Matrix>,
    /// Per-weight feedback for hidden layer `h`: `per_weight[h-1][k]` has the
    /// shape of `W^h` and carries output component `k`.
    pub per_weight: Vec<Vec<Matrix>>,
    /// Bias counterpart of `per_weight`, `N_h x N_L`.
    pub per_weight_bias: Vec<Matrix>,
    shapes: Vec<(usize, usize)>,
    fan_in: Vec<usize>,
    rng: SeededRng,
}

pub fn init_channel(arch: &Architecture, spec: &ChannelSpec, rng: SeededRng) -> Result<ChannelState> {
    arch.validate()?;
    spec.validate(arch)?;
    let shapes = if spec.algorithm.uses_random_matrices() {
        backward_shapes(arch, spec.algorithm)
    } else {
        Vec::new()
    };
    let mut state = ChannelState {
        spec: spec.clone(),
        backward: Vec::new(),
        per_weight: Vec::new(),
        per_weight_bias: Vec::new(),
        shapes,
        fan_in: arch.layer_sizes.clone(),
        rng,
    };
    state.sample_matrices()?;
    Ok(state)
}

impl ChannelState {
    pub fn algorithm(&self) -> ChannelAlgorithm {
        self.spec.algorithm
    }

    pub fn modifiers(&self) -> &ChannelModifiers {
        &self.spec.modifiers
    }

    fn sample_matrices(&mut self) -> Result<()> {
        let m = self.spec.modifiers.clone();
        let mut backward = Vec::with_capacity(self.shapes.len());
        for &(rows, cols) in &self.shapes {
            let c = if let Some(s) = m.sparse {
                let mut c = sample_bernoulli(&mut self.rng, rows, cols, s.n / rows as f64)?;
                if s.rescale && s.n > 0.0 {
                    c.map_inplace(|x| x / s.n.sqrt());
                }
                c
            } else {
                let std = (2.0 / (rows + cols) as f64).sqrt();
                let mut c = sample_gaussian(&mut self.rng, rows, cols, std)?;
                if let Some(mu) = m.nonzero_mean {
                    c.map_inplace(|x| x + mu);
                }
                if m.sign_concordant {
                    c.map_inplace(f64::abs);
                }
                c
            };
            backward.push(c);
        }
        self.backward = backward;
        if m.per_weight_random {
            let sizes = &self.fan_in;
            let l = sizes.len() - 1;
            self.per_weight.clear();
            self.per_weight_bias.clear();
            for h in 1..l {
                let std = (2.0 / (sizes[h] + sizes[l]) as f64).sqrt();
                let mut per_k = Vec::with_capacity(sizes[l]);
                for _ in 0..sizes[l] {
                    per_k.push(sample_gaussian(&mut self.rng, sizes[h], sizes[h - 1], std)?);
                }
                self.per_weight.push(per_k);
                self.per_weight_bias.push(sample_gaussian(&mut self.rng, sizes[h], sizes[l], std)?);
            }
        }
        Ok(())
    }

    /// The backward matrix actually used for hidden layer `h` (1-based).
    /// Sign-concordant channels take the stored magnitudes with the signs of
    /// the corresponding (transposed) forward weights `W^{h+1}`.
    pub fn effective_backward(&self, net: &ForwardNet, h: usize) -> Matrix {
        let stored = &self.backward[h - 1];
        if !self.spec.modifiers.sign_concordant {
            return stored.clone();
        }
        let w = &net.weights[h];
        let mut c = stored.clone();
        for r in 0..c.rows() {
            for s in 0..c.cols() {
                let sign = w[(s, r)].signum();
                c[(r, s)] = stored[(r, s)].abs() * if w[(s, r)] == 0.0 { 0.0 } else { sign };
            }
        }
        c
    }
}

#[derive(Clone, Debug)]
pub struct ErrorSignals {
    /// `R^h` for `h = 1..=L` (index `h-1`), each `batch x N_h`. With
    /// per-weight feedback the hidden entries hold the per-neuron gain
    /// (`f'` or 1) instead, and the error itself is in the last entry.
    pub layers: Vec<Matrix>,
    /// Pre-quantization received signal `J^h` when error quantization is on.
    pub raw: Vec<Option<Matrix>>,
    pub per_weight: bool,
}

impl ErrorSignals {
    pub fn boundary(&self) -> &Matrix {
        self.layers.last().expect("at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Updates {
    /// Same shapes as the network's weights; already scaled by the learning rate.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Updates {
    pub fn zeros_like(net: &ForwardNet) -> Self {
        Updates {
            weights: net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// `α·sign(x)·2^round(clip(log2|x/α|, 1-bits, 0))`, with `quantize(0) = 0`.
pub fn quantize(x: f64, alpha: f64, bits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { 0.0 } else { alpha * x.signum() * f64::from(x != 0.0) };
    }
    let e = (x / alpha).abs().log2().clamp(1.0 - bits as f64, 0.0).round();
    alpha * x.signum() * e.exp2()
}

fn quantize_matrix(m: &Matrix, alpha: f64, bits: u32) -> Matrix {
    m.map(|x| quantize(x, alpha, bits))
}

pub fn backward_signals(
    state: &ChannelState,
    net: &ForwardNet,
    trace: &ForwardTrace,
    target: &Matrix,
    rng: &mut SeededRng,
) -> Result<ErrorSignals> {
    let depth = net.depth();
    let out = trace.output();
    if target.shape() != out.shape() {
        return Err(Error::shape("backward_signals target", target.shape(), out.shape()));
    }
    let batch = out.rows();
    let sizes = &net.arch.layer_sizes;
    let m = &state.spec.modifiers;
    let error = target.sub(out)?;

    let mut layers: Vec<Matrix> = sizes[1..].iter().map(|&n| Matrix::zeros(batch, n)).collect();
    let mut raw: Vec<Option<Matrix>> = vec![None; depth];
    layers[depth - 1] = error.clone();

    // Received signal J^h -> quantize -> f' -> dropout.
    let mut finish = |received: Matrix, h: usize, raw: &mut Vec<Option<Matrix>>| -> Result<Matrix> {
        let mut r = match m.error_quant {
            Some(q) => {
                let quantized = quantize_matrix(&received, q.alpha.unwrap_or(ERROR_QUANT_ALPHA), q.bits);
                raw[h - 1] = Some(received);
                quantized
            }
            None => received,
        };
        if m.use_fprime {
            let d = trace.deriv[h - 1]
                .as_ref()
                .ok_or_else(|| Error::Channel("hidden layer without an elementwise derivative".into()))?;
            r.hadamard_inplace(d)?;
        }
        if m.lc_dropout > 0.0 {
            let keep = 1.0 - m.lc_dropout;
            for x in r.as_mut_slice() {
                *x = if rng.bernoulli(m.lc_dropout) { 0.0 } else { *x / keep };
            }
        }
        Ok(r)
    };

    match state.spec.algorithm {
        ChannelAlgorithm::TopLayerOnly => {}
        ChannelAlgorithm::Bp | ChannelAlgorithm::GradientOracle => {
            for h in (1..depth).rev() {
                let mut j = Matrix::zeros(batch, sizes[h]);
                gemm(1.0, &layers[h], false, &net.weights[h], false, 0.0, &mut j)?;
                layers[h - 1] = finish(j, h, &mut raw)?;
            }
        }
        ChannelAlgorithm::Rbp | ChannelAlgorithm::Arbp => {
            for h in (1..depth).rev() {
                let c = state.effective_backward(net, h);
                let mut j = Matrix::zeros(batch, sizes[h]);
                gemm(1.0, &layers[h], false, &c, true, 0.0, &mut j)?;
                layers[h - 1] = finish(j, h, &mut raw)?;
            }
        }
        ChannelAlgorithm::Srbp | ChannelAlgorithm::Asrbp => {
            for h in 1..depth {
                if m.per_weight_random {
                    layers[h - 1] = match (&trace.deriv[h - 1], m.use_fprime) {
                        (Some(d), true) => d.clone(),
                        _ => Matrix::filled(batch, sizes[h], 1.0),
                    };
                    continue;
                }
                let mut j = Matrix::zeros(batch, sizes[h]);
                gemm(1.0, &error, false, &state.backward[h - 1], true, 0.0, &mut j)?;
                layers[h - 1] = finish(j, h, &mut raw)?;
            }
        }
        ChannelAlgorithm::Sbp => {
            let mut carried = error.clone();
            for h in (1..depth).rev() {
                let mut next = Matrix::zeros(batch, sizes[h]);
                gemm(1.0, &carried, false, &net.weights[h], false, 0.0, &mut next)?;
                layers[h - 1] = finish(next.clone(), h, &mut raw)?;
                carried = next;
            }
        }
    }
    Ok(ErrorSignals {
        layers,
        raw,
        per_weight: m.per_weight_random,
    })
}

pub fn weight_updates(state: &ChannelState, signals: &ErrorSignals, trace: &ForwardTrace, lr: f64) -> Result<Updates> {
    let depth = signals.layers.len();
    let batch = trace.batch_size();
    let scale = lr / batch as f64;
    let m = &state.spec.modifiers;
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for h in 1..=depth {
        let below = trace.activity(h - 1);
        let hidden = h < depth;
        if hidden && signals.per_weight {
            let (dw, db) = per_weight_update(state, signals, below, h, scale)?;
            weights.push(dw);
            biases.push(db);
            continue;
        }
        let signal = &signals.layers[h - 1];
        if signal.rows() != batch || below.rows() != batch {
            return Err(Error::shape("weight_updates", signal.shape(), below.shape()));
        }
        let shaped = if hidden && m.sign_only_update {
            signal.map(sign)
        } else if hidden && m.abs_only_update {
            signal.map(f64::abs)
        } else {
            signal.clone()
        };
        let (dw, db) = match m.update_quant {
            Some(q) => quantized_outer(&shaped, below, q.alpha.unwrap_or(UPDATE_QUANT_ALPHA), q.bits, scale),
            None => {
                let mut dw = Matrix::zeros(shaped.cols(), below.cols());
                gemm(scale, &shaped, true, below, false, 0.0, &mut dw)?;
                let db = shaped.column_means().iter().map(|x| x * lr).collect();
                (dw, db)
            }
        };
        weights.push(dw);
        biases.push(db);
    }
    Ok(Updates { weights, biases })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `scale * sum_b Q(R_bi O_bj)`, quantizing every per-example product before
/// the batch sum. Uses `log2|r o / α| = log2|r| + log2|o| - log2 α`.
fn quantized_outer(signal: &Matrix, below: &Matrix, alpha: f64, bits: u32, scale: f64) -> (Matrix, Vec<f64>) {
    let (batch, n_out) = signal.shape();
    let n_in = below.cols();
    let lo = 1.0 - bits as f64;
    let powers: Vec<f64> = (0..bits).map(|k| alpha * (-(k as f64)).exp2()).collect();
    let level = |e: f64| powers[(-e.clamp(lo, 0.0).round()) as usize];
    let log_alpha = alpha.log2();
    let mut dw = Matrix::zeros(n_out, n_in);
    let mut db = vec![0.0; n_out];
    let mut nz: Vec<(usize, f64, f64)> = Vec::with_capacity(n_in);
    for b in 0..batch {
        nz.clear();
        nz.extend(
            below
                .row(b)
                .iter()
                .enumerate()
                .filter(|(_, &o)| o != 0.0)
                .map(|(j, &o)| (j, o.abs().log2(), sign(o))),
        );
        for (i, &r) in signal.row(b).iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let lr = r.abs().log2() - log_alpha;
            let sr = sign(r);
            db[i] += sr * level(lr);
            let row = dw.row_mut(i);
            for &(j, lo_j, so) in &nz {
                row[j] += sr * so * level(lr + lo_j);
            }
        }
    }
    dw.map_inplace(|x| x * scale);
    db.iter_mut().for_each(|x| *x *= scale);
    (dw, db)
}

fn per_weight_update(state: &ChannelState, signals: &ErrorSignals, below: &Matrix, h: usize, scale: f64) -> Result<(Matrix, Vec<f64>)> {
    let gains = &signals.layers[h - 1];
    let error = signals.boundary();
    let (batch, n_h) = gains.shape();
    let mut dw = Matrix::zeros(n_h, below.cols());
    let mut mk = Matrix::zeros(n_h, below.cols());
    for (k, rho) in state.per_weight[h - 1].iter().enumerate() {
        let mut gk = gains.clone();
        for b in 0..batch {
            let e = error[(b, k)];
            gk.row_mut(b).iter_mut().for_each(|x| *x *= e);
        }
        gemm(scale, &gk, true, below, false, 0.0, &mut mk)?;
        mk.hadamard_inplace(rho)?;
        dw.axpy(1.0, &mk)?;
    }
    let rho_b = &state.per_weight_bias[h - 1];
    let mut db = vec![0.0; n_h];
    for b in 0..batch {
        for (i, d) in db.iter_mut().enumerate() {
            let mixed: f64 = (0..error.cols()).map(|k| rho_b[(i, k)] * error[(b, k)]).sum();
            *d += scale * gains[(b, i)] * mixed;
        }
    }
    Ok((dw, db))
}

/// Moves adaptive backward matrices along the product of forward activity and
/// backward signal, at `ADAPT_RATE_FACTOR * lr`.
pub fn adapt_channel(state: &mut ChannelState, signals: &ErrorSignals, trace: &ForwardTrace, lr: f64) -> Result<()> {
    let alg = state.spec.algorithm;
    if !alg.is_adaptive() {
        return Err(Error::Channel(format!("{} has a fixed channel and cannot adapt", alg.label())));
    }
    let scale = ADAPT_RATE_FACTOR * lr / trace.batch_size() as f64;
    let depth = signals.layers.len();
    for h in 1..depth {
        let forward = trace.activity(h);
        let backward = if alg.is_skipped() { signals.boundary() } else { &signals.layers[h] };
        gemm(scale, forward, true, backward, false, 1.0, &mut state.backward[h - 1])?;
    }
    Ok(())
}

/// Draws fresh backward matrices (same distribution as at construction).
pub fn resample_channel(state: &mut ChannelState) -> Result<()> {
    if !state.spec.modifiers.resample_each_batch {
        return Err(Error::Channel("resample_channel requires resample_each_batch".into()));
    }
    state.sample_matrices()
}
