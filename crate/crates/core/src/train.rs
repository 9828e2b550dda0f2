//! Minibatch SGD over a network and a learning channel.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{adapt_channel, backward_signals, init_channel, resample_channel, weight_updates, ChannelSpec, ChannelState, Updates};
use crate::data::{argmax, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};
use crate::net::{init_weights, ActivationKind, Architecture, ForwardNet};
use crate::par;

/// Rows evaluated per forward pass when scoring a dataset.
const EVAL_CHUNK: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Cross-entropy on a softmax output.
    SoftmaxXent,
    /// Half squared error on an identity output.
    Mse,
}

impl Loss {
    pub fn expected_output(self) -> ActivationKind {
        match self {
            Loss::SoftmaxXent => ActivationKind::Softmax,
            Loss::Mse => ActivationKind::Identity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: Loss,
    pub seed: u64,
    pub repeats: usize,
    /// 1-based layer indices excluded from updates.
    pub frozen_layers: Vec<usize>,
    /// Also score the training set after each epoch.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            decay: 1e-6,
            momentum: 0.0,
            batch_size: 100,
            epochs: 20,
            loss: Loss::SoftmaxXent,
            seed: 0,
            repeats: 1,
            frozen_layers: Vec::new(),
            eval_train: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr0 > 0.0) && self.lr0 != 0.0 {
            return bad(format!("lr0 must be non-negative, got {}", self.lr0));
        }
        if !(self.decay >= 0.0) {
            return bad("decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0,1)".into());
        }
        if self.batch_size == 0 || self.epochs == 0 || self.repeats == 0 {
            return bad("batch_size, epochs and repeats must be positive".into());
        }
        if let Some(&h) = self.frozen_layers.iter().find(|&&h| h == 0 || h > arch.depth()) {
            return bad(format!("frozen layer {h} outside 1..={}", arch.depth()));
        }
        if arch.output_activation() != self.loss.expected_output() {
            return bad(format!("{:?} loss needs a {:?} output layer", self.loss, self.loss.expected_output()));
        }
        Ok(())
    }

    /// `lr0 / (1 + decay·t)` after `t` updates.
    pub fn effective_lr(&self, step: u64) -> f64 {
        self.lr0 / (1.0 + self.decay * step as f64)
    }
}

/// Loss of one example and the boundary error `T - O`.
pub fn loss_and_boundary(loss: Loss, output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if output.len() != target.len() {
        return Err(Error::shape("loss_and_boundary", (1, output.len()), (1, target.len())));
    }
    let value = example_loss(loss, output, target)?;
    Ok((value, target.iter().zip(output).map(|(t, o)| t - o).collect()))
}

fn example_loss(loss: Loss, output: &[f64], target: &[f64]) -> Result<f64> {
    match loss {
        Loss::Mse => Ok(0.5 * output.iter().zip(target).map(|(o, t)| (t - o) * (t - o)).sum::<f64>()),
        Loss::SoftmaxXent => {
            if target.iter().any(|&t| t != 0.0 && t != 1.0) || target.iter().filter(|&&t| t == 1.0).count() != 1 {
                return Err(Error::InvalidArgument("cross-entropy needs a one-hot target".into()));
            }
            let sum: f64 = output.iter().sum();
            if output.iter().any(|&o| o < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument("cross-entropy needs a softmax output".into()));
            }
            let k = argmax(target);
            Ok(-output[k].max(f64::MIN_POSITIVE).ln())
        }
    }
}

/// Mean loss over the rows of a batch. Non-finite outputs give `NaN`.
pub fn batch_loss(loss: Loss, output: &Matrix, target: &Matrix) -> Result<f64> {
    if output.shape() != target.shape() {
        return Err(Error::shape("batch_loss", output.shape(), target.shape()));
    }
    if !output.is_finite() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for r in 0..output.rows() {
        total += example_loss(loss, output.row(r), target.row(r))?;
    }
    Ok(total / output.rows().max(1) as f64)
}

/// Fraction of rows where `argmax(O) == argmax(T)`.
pub fn evaluate(net: &ForwardNet, ds: &Dataset) -> Result<f64> {
    Ok(evaluate_with_loss(net, ds, None)?.0)
}

/// Accuracy and, when a loss is given, mean loss.
pub fn evaluate_with_loss(net: &ForwardNet, ds: &Dataset, loss: Option<Loss>) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let mut start = 0;
    while start < ds.len() {
        let end = (start + EVAL_CHUNK).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let chunk = ds.subset(&idx);
        let out = net.predict(&chunk.inputs)?;
        for r in 0..out.rows() {
            if argmax(out.row(r)) == argmax(chunk.targets.row(r)) {
                correct += 1;
            }
        }
        if let Some(l) = loss {
            loss_sum += batch_loss(l, &out, &chunk.targets)? * (end - start) as f64;
        }
        start = end;
    }
    Ok((correct as f64 / ds.len() as f64, loss_sum / ds.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Mean minibatch loss seen during the epoch.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub wall_seconds: f64,
    pub effective_lr: f64,
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: ForwardNet,
    pub channel: ChannelState,
    pub velocity: Option<Updates>,
    /// Global update count.
    pub step: u64,
}

impl TrainState {
    pub fn new(arch: &Architecture, channel: &ChannelSpec, rng: &SeededRng) -> Result<Self> {
        let net = init_weights(arch, &mut rng.fork(1))?;
        let channel = init_channel(arch, channel, rng.fork(2))?;
        Ok(TrainState {
            net,
            channel,
            velocity: None,
            step: 0,
        })
    }
}

fn zero_frozen(updates: &mut Updates, frozen: &[usize]) {
    for &h in frozen {
        updates.weights[h - 1].map_inplace(|_| 0.0);
        updates.biases[h - 1].iter_mut().for_each(|b| *b = 0.0);
    }
}

fn apply(net: &mut ForwardNet, updates: &Updates) -> Result<()> {
    for (w, dw) in net.weights.iter_mut().zip(&updates.weights) {
        w.axpy(1.0, dw)?;
    }
    for (b, db) in net.biases.iter_mut().zip(&updates.biases) {
        b.iter_mut().zip(db).for_each(|(x, d)| *x += d);
    }
    Ok(())
}

/// One minibatch step on the given rows. Returns the batch loss before the update.
pub fn sgd_step(state: &mut TrainState, config: &TrainConfig, inputs: &Matrix, targets: &Matrix, rng: &mut SeededRng) -> Result<f64> {
    let trace = state.net.forward_batch(inputs)?;
    let loss = batch_loss(config.loss, trace.output(), targets)?;
    if state.channel.modifiers().resample_each_batch {
        resample_channel(&mut state.channel)?;
    }
    let signals = backward_signals(&state.channel, &state.net, &trace, targets, rng)?;
    let lr = config.effective_lr(state.step);
    let mut updates = weight_updates(&state.channel, &signals, &trace, lr)?;
    zero_frozen(&mut updates, &config.frozen_layers);
    if config.momentum > 0.0 {
        let v = state.velocity.get_or_insert_with(|| Updates::zeros_like(&state.net));
        for (vw, dw) in v.weights.iter_mut().zip(&updates.weights) {
            vw.map_inplace(|x| x * config.momentum);
            vw.axpy(1.0, dw)?;
        }
        for (vb, db) in v.biases.iter_mut().zip(&updates.biases) {
            vb.iter_mut().zip(db).for_each(|(x, d)| *x = config.momentum * *x + d);
        }
        apply(&mut state.net, v)?;
    } else {
        apply(&mut state.net, &updates)?;
    }
    if state.channel.algorithm().is_adaptive() {
        adapt_channel(&mut state.channel, &signals, &trace, lr)?;
    }
    state.step += 1;
    Ok(loss)
}

/// Shuffles once, then runs every minibatch. Accuracy fields are left empty.
pub fn sgd_epoch(state: &mut TrainState, config: &TrainConfig, ds: &Dataset, rng: &mut SeededRng) -> Result<MetricsRow> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    rng.shuffle(&mut order);
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let x = ds.inputs.select_rows(chunk);
        let t = ds.targets.select_rows(chunk);
        loss_sum += sgd_step(state, config, &x, &t, rng)?;
        batches += 1;
    }
    Ok(MetricsRow {
        epoch: 0,
        train_accuracy: None,
        test_accuracy: None,
        train_loss: loss_sum / batches as f64,
        test_loss: None,
        wall_seconds: started.elapsed().as_secs_f64(),
        effective_lr: config.effective_lr(state.step),
    })
}

/// A complete training setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub arch: Architecture,
    pub channel: ChannelSpec,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.channel.validate(&self.arch)?;
        self.train.validate(&self.arch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub final_test_accuracy: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    /// Some weight became non-finite.
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (`n - 1`); zero for a single run.
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Aggregate { mean, std, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub rng_algorithm: String,
    pub runs: Vec<RunResult>,
    pub final_test_accuracy: Option<Aggregate>,
    pub final_train_accuracy: Option<Aggregate>,
}

/// Trains one seed for `spec.train.epochs` epochs, scoring `test` (and
/// `train` when `eval_train` is set) after each epoch.
pub fn run_single(spec: &ExperimentSpec, train: &Dataset, test: Option<&Dataset>, seed: u64) -> Result<RunResult> {
    spec.validate()?;
    check_data(&spec.arch, train)?;
    if let Some(t) = test {
        check_data(&spec.arch, t)?;
    }
    let root = SeededRng::new(seed);
    let mut state = TrainState::new(&spec.arch, &spec.channel, &root)?;
    let mut rng = root.fork(3);
    let mut rows = Vec::with_capacity(spec.train.epochs);
    let classification = matches!(train.kind, DatasetKind::Classification { .. });
    let loss = Some(spec.train.loss);
    for epoch in 1..=spec.train.epochs {
        let mut row = sgd_epoch(&mut state, &spec.train, train, &mut rng)?;
        row.epoch = epoch;
        if classification {
            if let Some(t) = test {
                let (acc, l) = evaluate_with_loss(&state.net, t, loss)?;
                row.test_accuracy = Some(acc);
                row.test_loss = Some(l);
            }
            if spec.train.eval_train {
                row.train_accuracy = Some(evaluate(&state.net, train)?);
            }
        }
        rows.push(row);
    }
    let last = rows.last();
    Ok(RunResult {
        seed,
        final_test_accuracy: last.and_then(|r| r.test_accuracy),
        final_train_accuracy: last.and_then(|r| r.train_accuracy),
        diverged: !state.net.is_finite(),
        rows,
    })
}

fn check_data(arch: &Architecture, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.input_dim() != arch.input_size() || ds.output_dim() != arch.output_size() {
        return Err(Error::InvalidArgument(format!(
            "dataset is {}->{} but the architecture is {}->{}",
            ds.input_dim(),
            ds.output_dim(),
            arch.input_size(),
            arch.output_size()
        )));
    }
    Ok(())
}

/// Runs seeds `seed, seed+1, …, seed+repeats-1` concurrently.
pub fn run_experiment(spec: &ExperimentSpec, train: &Dataset, test: Option<&Dataset>) -> Result<ExperimentResult> {
    spec.validate()?;
    let seeds: Vec<u64> = (0..spec.train.repeats as u64).map(|r| spec.train.seed + r).collect();
    let runs = par::map(&seeds, |&s| run_single(spec, train, test, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(spec, runs))
}

pub fn summarize(spec: &ExperimentSpec, runs: Vec<RunResult>) -> ExperimentResult {
    let test: Vec<f64> = runs.iter().filter_map(|r| r.final_test_accuracy).collect();
    let train: Vec<f64> = runs.iter().filter_map(|r| r.final_train_accuracy).collect();
    ExperimentResult {
        spec: spec.clone(),
        rng_algorithm: SeededRng::new(0).algorithm_id().to_string(),
        final_test_accuracy: Aggregate::of(&test),
        final_train_accuracy: Aggregate::of(&train),
        runs,
    }
}

pub const METRICS_HEADER: [&str; 7] = ["epoch", "split", "accuracy", "loss", "seed", "wall_seconds", "effective_lr"];

/// Writes per-epoch metrics. `preamble` lines are emitted first as `# ` comments.
pub fn write_metrics_csv(result: &ExperimentResult, path: &std::path::Path, preamble: &[String]) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for line in preamble {
        writeln!(file, "# {line}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(METRICS_HEADER)?;
    let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for run in &result.runs {
        for row in &run.rows {
            let mut emit = |split: &str, acc: Option<f64>, loss: Option<f64>| {
                w.write_record([
                    row.epoch.to_string(),
                    split.to_string(),
                    fmt(acc),
                    fmt(loss),
                    run.seed.to_string(),
                    row.wall_seconds.to_string(),
                    row.effective_lr.to_string(),
                ])
            };
            emit("train", row.train_accuracy, Some(row.train_loss))?;
            if row.test_accuracy.is_some() {
                emit("test", row.test_accuracy, row.test_loss)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
