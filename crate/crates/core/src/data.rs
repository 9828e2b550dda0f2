//! Datasets: MNIST in IDX format and synthetic sets with exact moments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sample_gaussian, Matrix, SeededRng};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
pub const MNIST_CLASSES: usize = 10;

/// Noise level of the target component orthogonal to the inputs.
const SYNTHETIC_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Classification { classes: usize },
    Regression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// One example per row.
    pub inputs: Matrix,
    pub targets: Matrix,
    pub kind: DatasetKind,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix, kind: DatasetKind) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::CountMismatch {
                images: inputs.rows(),
                labels: targets.rows(),
            });
        }
        if let DatasetKind::Classification { classes } = kind {
            if targets.cols() != classes {
                return Err(Error::InvalidArgument(format!(
                    "{} target columns for {classes} classes",
                    targets.cols()
                )));
            }
            for r in 0..targets.rows() {
                let row = targets.row(r);
                let ones = row.iter().filter(|&&x| x == 1.0).count();
                if ones != 1 || row.iter().any(|&x| x != 0.0 && x != 1.0) {
                    return Err(Error::InvalidArgument(format!("target row {r} is not one-hot")));
                }
            }
        }
        Ok(Dataset { inputs, targets, kind })
    }

    pub fn from_labels(inputs: Matrix, labels: &[usize], classes: usize) -> Result<Self> {
        let mut targets = Matrix::zeros(labels.len(), classes);
        for (r, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::InvalidArgument(format!("label {l} out of range for {classes} classes")));
            }
            targets[(r, l)] = 1.0;
        }
        Dataset::new(inputs, targets, DatasetKind::Classification { classes })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    /// Argmax of each target row.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|r| argmax(self.targets.row(r))).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select_rows(indices),
            kind: self.kind,
        }
    }

    /// The first `n` examples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Empirical `(Σ_II, Σ_TI)` = `(E[I Iᵗ], E[T Iᵗ])`.
    pub fn second_moments(&self) -> Result<(Matrix, Matrix)> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let m = self.len() as f64;
        let sii = self.inputs.transpose().matmul(&self.inputs)?.scale(1.0 / m);
        let sti = self.targets.transpose().matmul(&self.inputs)?.scale(1.0 / m);
        Ok((sii, sti))
    }

    /// Writes `i0,i1,...,t0,t1,...` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.input_dim()).map(|j| format!("i{j}")).collect();
        header.extend((0..self.output_dim()).map(|j| format!("t{j}")));
        w.write_record(&header)?;
        for r in 0..self.len() {
            let record: Vec<String> = self
                .inputs
                .row(r)
                .iter()
                .chain(self.targets.row(r))
                .map(|x| format!("{x:e}"))
                .collect();
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Index of the largest entry; NaN entries never win.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in row.iter().enumerate() {
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    best
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_header(path: &Path, bytes: &[u8], header: usize, magic: u32) -> Result<()> {
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    Ok(())
}

/// Reads an IDX image file into a `count x (rows*cols)` matrix scaled to [0,1].
pub fn read_idx_images(path: &Path) -> Result<Matrix> {
    let bytes = read_file(path)?;
    check_header(path, &bytes, 16, IMAGE_MAGIC)?;
    let count = be_u32(&bytes, 4) as usize;
    let width = be_u32(&bytes, 8) as usize * be_u32(&bytes, 12) as usize;
    let expected = 16 + count * width;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(count, width, data)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    check_header(path, &bytes, 8, LABEL_MAGIC)?;
    let count = be_u32(&bytes, 4) as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let inputs = read_idx_images(images)?;
    let raw = read_idx_labels(labels)?;
    if inputs.rows() != raw.len() {
        return Err(Error::CountMismatch {
            images: inputs.rows(),
            labels: raw.len(),
        });
    }
    if inputs.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut targets = Matrix::zeros(raw.len(), MNIST_CLASSES);
    for (i, &l) in raw.iter().enumerate() {
        if l as usize >= MNIST_CLASSES {
            return Err(Error::BadLabel {
                path: labels.to_path_buf(),
                index: i,
                label: l,
            });
        }
        targets[(i, l as usize)] = 1.0;
    }
    Dataset::new(inputs, targets, DatasetKind::Classification { classes: MNIST_CLASSES })
}

/// Writes a classification dataset in IDX format. Pixels are stored as
/// `round(255 x)`, so data read by [`load_idx`] round-trips exactly. Square
/// widths become `n x n` images, anything else a single row.
pub fn write_idx(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let DatasetKind::Classification { classes } = ds.kind else {
        return Err(Error::InvalidArgument("IDX export needs a classification dataset".into()));
    };
    if classes > 256 {
        return Err(Error::InvalidArgument("IDX labels are single bytes".into()));
    }
    let width = ds.input_dim();
    let side = (width as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == width { (side, side) } else { (1, width) };
    let mut img = Vec::with_capacity(16 + ds.len() * width);
    for v in [IMAGE_MAGIC, ds.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.inputs.as_slice().iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    for v in [LABEL_MAGIC, ds.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(ds.labels().into_iter().map(|l| l as u8));
    fs::write(images, img).map_err(|e| Error::io(images, e))?;
    fs::write(labels, lab).map_err(|e| Error::io(labels, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        MnistFiles {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels]
            .iter()
            .all(|p| p.is_file())
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            load_idx(&self.train_images, &self.train_labels)?,
            load_idx(&self.test_images, &self.test_labels)?,
        ))
    }
}

/// Moments of a scalar input/target distribution.
///
/// For the linear systems `alpha = E(IT)` and `beta = E(I²)`. The power-unit
/// system additionally uses `gamma = E(TI)` and `delta = E(I^{mu+1})`, with
/// `alpha = E(T I^mu)` and `beta = E(I^{2mu})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpec {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
}

impl MomentSpec {
    pub fn linear(alpha: f64, beta: f64) -> Self {
        MomentSpec {
            alpha,
            beta,
            gamma: None,
            delta: None,
            mu: None,
        }
    }
}

/// Scalar pairs with `mean(I²) = beta` and `mean(IT) = alpha` exactly (up to
/// rounding). The target is `(alpha/beta) I` plus noise orthogonal to `I`.
pub fn synthetic_scalar(spec: &MomentSpec, m: usize, rng: &mut SeededRng) -> Result<Dataset> {
    if !(spec.beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {}", spec.beta)));
    }
    if m < 2 {
        return Err(Error::InvalidArgument("synthetic_scalar needs at least 2 examples".into()));
    }
    let mut input: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
    let ss: f64 = input.iter().map(|x| x * x).sum::<f64>() / m as f64;
    let k = (spec.beta / ss).sqrt();
    input.iter_mut().for_each(|x| *x *= k);
    let mut noise: Vec<f64> = (0..m).map(|_| SYNTHETIC_NOISE * rng.standard_normal()).collect();
    let proj = dot(&noise, &input) / dot(&input, &input);
    noise.iter_mut().zip(&input).for_each(|(z, i)| *z -= proj * i);
    let slope = spec.alpha / spec.beta;
    let target: Vec<f64> = input.iter().zip(&noise).map(|(i, z)| slope * i + z).collect();
    Dataset::new(Matrix::column_vector(&input), Matrix::column_vector(&target), DatasetKind::Regression)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inputs with `IᵗI/m = Σ_II` and targets with `TᵗI/m = Σ_TI`, both exact.
/// `sigma_ti` is `N_out x N_in`.
pub fn synthetic_multivariate(sigma_ii: &Matrix, sigma_ti: &Matrix, m: usize, rng: &mut SeededRng) -> Result<Dataset> {
    multivariate(sigma_ii, sigma_ti, m, rng, SYNTHETIC_NOISE)
}

fn multivariate(sigma_ii: &Matrix, sigma_ti: &Matrix, m: usize, rng: &mut SeededRng, noise: f64) -> Result<Dataset> {
    let n = sigma_ii.rows();
    if sigma_ti.cols() != n {
        return Err(Error::shape("synthetic_multivariate", sigma_ti.shape(), sigma_ii.shape()));
    }
    if m < n {
        return Err(Error::InvalidArgument(format!("cannot whiten {n} dimensions with {m} examples")));
    }
    let target_chol = sigma_ii.cholesky()?;
    let raw = sample_gaussian(rng, m, n, 1.0)?;
    let raw_moment = raw.transpose().matmul(&raw)?.scale(1.0 / m as f64);
    let raw_chol = raw_moment.cholesky().map_err(|_| {
        Error::InvalidArgument("sampled inputs are rank deficient; increase the example count".into())
    })?;
    // I = raw L_raw^{-t} L^t, so IᵗI/m = L L^t.
    let mix = raw_chol.inverse()?.transpose().matmul(&target_chol.transpose())?;
    let inputs = raw.matmul(&mix)?;
    let sii_inv = sigma_ii.inverse()?;
    let mut targets = inputs.matmul(&sii_inv)?.matmul(&sigma_ti.transpose())?;
    if noise > 0.0 && m > n {
        let z = sample_gaussian(rng, m, sigma_ti.rows(), noise)?;
        // Remove the component of z in the column span of I.
        let coef = sii_inv.matmul(&inputs.transpose().matmul(&z)?.scale(1.0 / m as f64))?;
        let resid = z.sub(&inputs.matmul(&coef)?)?;
        targets = targets.add(&resid)?;
    }
    Dataset::new(inputs, targets, DatasetKind::Regression)
}

/// `T = I` with `IᵗI/m = Id`.
pub fn autoencoder_identity(n_dims: usize, m: usize, rng: &mut SeededRng) -> Result<Dataset> {
    let id = Matrix::identity(n_dims);
    let ds = multivariate(&id, &id, m, rng, 0.0)?;
    Dataset::new(ds.inputs.clone(), ds.inputs, DatasetKind::Regression)
}

/// Positive scalar inputs and targets `T = slope·I^mu + noise` for the
/// power-unit system. Returns the realized moments.
pub fn synthetic_power(mu: f64, slope: f64, m: usize, rng: &mut SeededRng) -> Result<(Dataset, MomentSpec)> {
    if m < 2 || !(mu > 0.0) {
        return Err(Error::InvalidArgument("synthetic_power needs m >= 2 and mu > 0".into()));
    }
    let input: Vec<f64> = (0..m).map(|_| 0.5 + rng.uniform()).collect();
    let target: Vec<f64> = input
        .iter()
        .map(|i| slope * i.powf(mu) + SYNTHETIC_NOISE * rng.standard_normal())
        .collect();
    let ds = Dataset::new(Matrix::column_vector(&input), Matrix::column_vector(&target), DatasetKind::Regression)?;
    let moments = power_moments(&ds, mu)?;
    Ok((ds, moments))
}

/// Realized `alpha = E(T I^mu)`, `beta = E(I^{2mu})`, `gamma = E(TI)`,
/// `delta = E(I^{mu+1})` of a scalar dataset.
pub fn power_moments(ds: &Dataset, mu: f64) -> Result<MomentSpec> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.input_dim() != 1 || ds.output_dim() != 1 {
        return Err(Error::InvalidArgument("power moments need a scalar dataset".into()));
    }
    let m = ds.len() as f64;
    let pairs = || ds.inputs.as_slice().iter().zip(ds.targets.as_slice());
    let mean = |f: &dyn Fn(f64, f64) -> f64| pairs().map(|(&i, &t)| f(i, t)).sum::<f64>() / m;
    Ok(MomentSpec {
        alpha: mean(&|i, t| t * i.powf(mu)),
        beta: mean(&|i, _| i.powf(2.0 * mu)),
        gamma: Some(mean(&|i, t| t * i)),
        delta: Some(mean(&|i, _| i.powf(mu + 1.0))),
        mu: Some(mu),
    })
}
