use std::path::{Path, PathBuf};
use std::time::Instant;

use rbp_core::channel::{ChannelAlgorithm, Quantization, Sparsity};
use rbp_core::dynamics::{integrate, predict, vector_field, FixedPointReport, IntegrateOptions, Monitor, Status, Variant};
use rbp_core::net::{count_bp_ops, count_srbp_ops, ActivationKind, Architecture};
use rbp_core::par;
use rbp_core::train::{run_experiment, run_single, summarize, write_metrics_csv, Aggregate, ExperimentResult, RunResult};
use serde::Serialize;

use crate::config::{self, DynamicsFile, FieldFile, TrainFile};
use crate::error::CliError;
use crate::output::{atomically, ensure_dir, preamble, write_json};

/// Flags shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Globals {
    fn out_dir(&self, configured: &Option<PathBuf>) -> PathBuf {
        self.out.clone().or_else(|| configured.clone()).unwrap_or_else(|| "out".into())
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Serialize)]
struct RunLine {
    seed: u64,
    final_test_accuracy: Option<f64>,
    final_train_accuracy: Option<f64>,
    final_train_loss: Option<f64>,
    diverged: bool,
}

fn run_lines(runs: &[RunResult]) -> Vec<RunLine> {
    runs.iter()
        .map(|r| RunLine {
            seed: r.seed,
            final_test_accuracy: r.final_test_accuracy,
            final_train_accuracy: r.final_train_accuracy,
            final_train_loss: r.rows.last().map(|x| x.train_loss),
            diverged: r.diverged,
        })
        .collect()
}

fn final_loss(result: &ExperimentResult) -> Option<Aggregate> {
    let losses: Vec<f64> = result.runs.iter().filter_map(|r| r.rows.last().map(|x| x.train_loss)).collect();
    Aggregate::of(&losses)
}

fn prepare_train(path: &Path, g: &Globals) -> Result<(TrainFile, PathBuf), CliError> {
    let mut cfg: TrainFile = config::load(path)?;
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    cfg.resolve_paths(&base_dir(path));
    let out = g.out_dir(&cfg.output);
    cfg.output = Some(out.clone());
    cfg.validate()?;
    Ok((cfg, out))
}

pub fn train(path: &Path, g: &Globals) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a TrainFile,
        seed: u64,
        rng_algorithm: &'a str,
        final_test_acc: Option<Aggregate>,
        final_train_acc: Option<Aggregate>,
        final_train_loss: Option<Aggregate>,
        runs: Vec<RunLine>,
        wall_seconds: f64,
    }

    let (cfg, out) = prepare_train(path, g)?;
    let (train, test) = cfg.load_data()?;
    let start = Instant::now();
    let result = run_experiment(&cfg.spec(), &train, test.as_ref())?;
    ensure_dir(&out)?;
    let pre = preamble(&cfg, Some(cfg.train.seed));
    atomically(&out.join("metrics.csv"), |p| write_metrics_csv(&result, p, &pre))?;
    let summary = Summary {
        config: &cfg,
        seed: cfg.train.seed,
        rng_algorithm: &result.rng_algorithm,
        final_test_acc: result.final_test_accuracy.clone(),
        final_train_acc: result.final_train_accuracy.clone(),
        final_train_loss: final_loss(&result),
        runs: run_lines(&result.runs),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    let acc = |a: &Option<Aggregate>| a.as_ref().map(|a| format!("{:.4} ± {:.4} (n={})", a.mean, a.std, a.n)).unwrap_or_else(|| "-".into());
    println!("final test accuracy {}, final train loss {}", acc(&summary.final_test_acc), acc(&summary.final_train_loss));
    println!("wrote {}", out.display());
    Ok(())
}

/// `name=v1,v2,…` on one modifier or training field.
#[derive(Clone, Debug, Serialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<String>,
}

pub const AXES: [&str; 8] = ["algorithm", "sparsity", "error_bits", "update_bits", "dropout", "nonzero_mean", "lr0", "batch_size"];

impl Axis {
    pub fn parse(s: &str) -> Result<Axis, CliError> {
        let (name, values) = s.split_once('=').ok_or_else(|| CliError::Config(format!("axis {s:?} must look like name=v1,v2")))?;
        let name = name.trim();
        if !AXES.contains(&name) {
            return Err(CliError::Config(format!("unknown axis {name:?}; expected one of {}", AXES.join(", "))));
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(CliError::Config(format!("axis {name:?} has no values")));
        }
        Ok(Axis { name: name.to_string(), values })
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(&self, cfg: &TrainFile, value: &str) -> Result<TrainFile, CliError> {
        let bad = || CliError::Config(format!("bad value {value:?} for axis {}", self.name));
        let num = || value.parse::<f64>().map_err(|_| bad());
        let mut c = cfg.clone();
        let m = &mut c.channel.modifiers;
        match self.name.as_str() {
            "algorithm" => c.channel.algorithm = serde_json::from_value::<ChannelAlgorithm>(value.into()).map_err(|_| bad())?,
            "sparsity" => m.sparse = Some(Sparsity { n: num()?, rescale: m.sparse.is_some_and(|s| s.rescale) }),
            "error_bits" => {
                let alpha = m.error_quant.and_then(|q| q.alpha);
                m.error_quant = Some(Quantization { bits: value.parse().map_err(|_| bad())?, alpha });
            }
            "update_bits" => {
                let alpha = m.update_quant.and_then(|q| q.alpha);
                m.update_quant = Some(Quantization { bits: value.parse().map_err(|_| bad())?, alpha });
            }
            "dropout" => m.lc_dropout = num()?,
            "nonzero_mean" => m.nonzero_mean = Some(num()?),
            "lr0" => c.train.lr0 = num()?,
            "batch_size" => c.train.batch_size = value.parse().map_err(|_| bad())?,
            _ => unreachable!("checked in parse"),
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn sweep(path: &Path, axis: &Axis, g: &Globals) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Row {
        label: String,
        value: String,
        final_test_acc: Option<Aggregate>,
        final_train_acc: Option<Aggregate>,
        final_train_loss: Option<Aggregate>,
        runs: Vec<RunLine>,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a TrainFile,
        axis: &'a Axis,
        seed: u64,
        rows: Vec<Row>,
        wall_seconds: f64,
    }

    let (cfg, out) = prepare_train(path, g)?;
    let points: Vec<TrainFile> = axis.values.iter().map(|v| axis.apply(&cfg, v)).collect::<Result<_, _>>()?;
    let (train, test) = cfg.load_data()?;
    let start = Instant::now();
    // Every (point, seed) pair is an independent job.
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|i| (0..cfg.train.repeats as u64).map(move |r| (i, cfg.train.seed + r))).collect();
    let runs = par::map(&jobs, |&(i, seed)| run_single(&points[i].spec(), &train, test.as_ref(), seed));
    let mut grouped: Vec<Vec<RunResult>> = vec![Vec::new(); points.len()];
    for (&(i, _), r) in jobs.iter().zip(runs) {
        grouped[i].push(r?);
    }
    ensure_dir(&out)?;
    let mut rows = Vec::new();
    let mut table = vec![vec!["label".to_string(), "axis".into(), "value".into(), "mean_test_acc".into(), "std_test_acc".into(), "mean_train_loss".into(), "n".into()]];
    for ((point, value), runs) in points.iter().zip(&axis.values).zip(grouped) {
        let result = summarize(&point.spec(), runs);
        let name = format!("metrics_{}_{}.csv", axis.name, value.replace(['/', '\\'], "_"));
        atomically(&out.join(name), |p| write_metrics_csv(&result, p, &preamble(point, Some(point.train.seed))))?;
        let label = format!("{} {}={}", point.channel.algorithm.label(), axis.name, value);
        let loss = final_loss(&result);
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        table.push(vec![
            label.clone(),
            axis.name.clone(),
            value.clone(),
            fmt(result.final_test_accuracy.as_ref().map(|a| a.mean)),
            fmt(result.final_test_accuracy.as_ref().map(|a| a.std)),
            fmt(loss.as_ref().map(|a| a.mean)),
            result.runs.len().to_string(),
        ]);
        rows.push(Row {
            label,
            value: value.clone(),
            final_test_acc: result.final_test_accuracy.clone(),
            final_train_acc: result.final_train_accuracy.clone(),
            final_train_loss: loss,
            runs: run_lines(&result.runs),
        });
    }
    let pre = preamble(&cfg, Some(cfg.train.seed));
    atomically(&out.join("sweep.csv"), |p| -> Result<(), String> {
        let mut text: String = pre.iter().map(|l| format!("# {l}\n")).collect();
        for row in &table {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()))
    })?;
    for r in &rows {
        match &r.final_test_acc {
            Some(a) => println!("{:<28} {:6.2} ({:.2})", r.label, 100.0 * a.mean, 100.0 * a.std),
            None => println!("{:<28} loss {}", r.label, r.final_train_loss.as_ref().map_or(f64::NAN, |a| a.mean)),
        }
    }
    let summary = Summary { config: &cfg, axis, seed: cfg.train.seed, rows, wall_seconds: start.elapsed().as_secs_f64() };
    write_json(&out.join("summary.json"), &summary)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Final `|a1|` below which a power-unit run is reported as collapsing.
const NEAR_ZERO: f64 = 1e-6;

pub fn dynamics(path: &Path, g: &Globals) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Rk4 {
        final_state: Vec<f64>,
        final_time: f64,
        steps: usize,
        status: Status,
        max_conserved_drift: Option<f64>,
        notes: Vec<String>,
    }
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a DynamicsFile,
        prediction: Option<FixedPointReport>,
        prediction_note: Option<String>,
        rk4: Rk4,
        max_gap: Option<f64>,
        agree: Option<bool>,
        verdict: String,
    }

    let mut cfg: DynamicsFile = config::load(path)?;
    let out = g.out_dir(&cfg.output);
    cfg.output = Some(out.clone());
    cfg.validate()?;
    let sec = &cfg.integrate;
    let mut opts = IntegrateOptions::new(sec.dt, sec.t_max).records(sec.records).monitors(&sec.monitors);
    opts.stop_on_convergence = sec.stop_on_convergence;
    let traj = integrate(&cfg.system, &cfg.initial_state, &opts)?;
    let (prediction, note) = match predict(&cfg.system, &cfg.initial_state) {
        Ok(rep) => (Some(rep), None),
        Err(rbp_core::Error::InvalidArgument(m)) => (None, Some(m)),
        Err(e) => return Err(e.into()),
    };
    let end = traj.final_state();
    let (gap, agree, verdict) = match &prediction {
        Some(rep) if rep.classification.converges() => {
            let gap = rep.predicted_limit.iter().zip(end).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let ok = traj.status != Status::Diverged && gap <= cfg.tolerance;
            let v = if ok { format!("agree: RK4 endpoint within {gap:.3e} of the prediction") } else { format!("disagree: gap {gap:.3e}, RK4 {:?}", traj.status) };
            (Some(gap), Some(ok), v)
        }
        Some(_) => {
            let ok = traj.status == Status::Diverged;
            (None, Some(ok), if ok { "agree: both diverge".into() } else { format!("disagree: divergence predicted, RK4 {:?}", traj.status) })
        }
        None => (None, None, "no closed-form prediction; RK4 only".into()),
    };
    let mut notes = Vec::new();
    // Convergence to 0 from a positive start is not excluded by the theory; report it.
    if let Variant::PowerA111 { .. } = cfg.system.variant {
        if cfg.initial_state[0] > 0.0 && traj.status != Status::Diverged && end[0].abs() < NEAR_ZERO {
            notes.push(format!("a1 approaches 0 (final {:.3e})", end[0]));
        }
    }
    ensure_dir(&out)?;
    atomically(&out.join("trajectory.csv"), |p| traj.write_csv(p, &preamble(&cfg, None)))?;
    let predicted_convergence = prediction.as_ref().is_some_and(|r| r.classification.converges());
    let report = Report {
        config: &cfg,
        prediction,
        prediction_note: note,
        rk4: Rk4 {
            final_state: end.to_vec(),
            final_time: traj.final_time(),
            steps: traj.steps,
            status: traj.status,
            max_conserved_drift: traj.max_drift(Monitor::Conserved),
            notes,
        },
        max_gap: gap,
        agree,
        verdict: verdict.clone(),
    };
    write_json(&out.join("report.json"), &report)?;
    println!("{verdict}");
    println!("wrote {}", out.display());
    if predicted_convergence && traj.status == Status::Diverged {
        return Err(CliError::Divergence(format!("RK4 diverged at t={} although the prediction converges", traj.final_time())));
    }
    Ok(())
}

pub fn field(path: &Path, g: &Globals) -> Result<(), CliError> {
    let mut cfg: FieldFile = config::load(path)?;
    let out = g.out_dir(&cfg.output);
    cfg.output = Some(out.clone());
    cfg.validate()?;
    let table = vector_field(&cfg.system, &cfg.grid)?;
    ensure_dir(&out)?;
    atomically(&out.join("field.csv"), |p| table.write_csv(p, &preamble(&cfg, None)))?;
    println!(
        "{} nodes, {} hyperbola and {} parabola points; wrote {}",
        table.nodes.len(),
        table.hyperbola.len(),
        table.parabola.len(),
        out.join("field.csv").display()
    );
    Ok(())
}

pub fn complexity(arch: &str) -> Result<(), CliError> {
    let sizes = Architecture::parse_sizes(arch)?;
    let arch = Architecture::uniform(sizes, ActivationKind::Tanh, ActivationKind::Identity, false)?;
    println!("W={} W'={}", count_bp_ops(&arch), count_srbp_ops(&arch));
    Ok(())
}
