//! Vector field of the `A[1,1,1]` system on a grid, for phase portraits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::systems::{OdeSystem, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a1_min: f64,
    pub a1_max: f64,
    pub a2_min: f64,
    pub a2_max: f64,
    pub n_a1: usize,
    pub n_a2: usize,
    /// Points per overlay curve.
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
}

fn default_curve_points() -> usize {
    200
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            a1_min: -3.0,
            a1_max: 3.0,
            a2_min: -3.0,
            a2_max: 3.0,
            n_a1: 25,
            n_a2: 25,
            curve_points: default_curve_points(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldNode {
    pub a1: f64,
    pub a2: f64,
    pub da1: f64,
    pub da2: f64,
    /// Sign of `dP/dt` (-1, 0 or 1).
    pub dp_sign: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldTable {
    pub nodes: Vec<FieldNode>,
    /// `a2 = α/(β a1)`, both branches, clipped to the grid.
    pub hyperbola: Vec<(f64, f64)>,
    /// `a2 = -a1²/c1`, where `dP/dt` changes sign.
    pub parabola: Vec<(f64, f64)>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn vector_field(system: &OdeSystem, grid: &GridSpec) -> Result<FieldTable> {
    let Variant::A111 { c1, alpha, beta } = system.variant else {
        return Err(Error::InvalidArgument("vector_field is defined for the A[1,1,1] system".into()));
    };
    system.validate()?;
    if !(grid.a1_min < grid.a1_max && grid.a2_min < grid.a2_max) || grid.n_a1 == 0 || grid.n_a2 == 0 {
        return Err(Error::InvalidArgument("grid needs min < max and positive point counts".into()));
    }
    let mut nodes = Vec::with_capacity(grid.n_a1 * grid.n_a2);
    for &a1 in &linspace(grid.a1_min, grid.a1_max, grid.n_a1) {
        for &a2 in &linspace(grid.a2_min, grid.a2_max, grid.n_a2) {
            let d = system.rhs(&[a1, a2])?;
            let dp = system.dp_dt(&[a1, a2])?.unwrap_or(0.0);
            nodes.push(FieldNode {
                a1,
                a2,
                da1: d[0],
                da2: d[1],
                dp_sign: if dp == 0.0 { 0.0 } else { dp.signum() },
            });
        }
    }
    let inside = |a2: f64| (grid.a2_min..=grid.a2_max).contains(&a2);
    let xs = linspace(grid.a1_min, grid.a1_max, grid.curve_points);
    let hyperbola = xs
        .iter()
        .filter(|&&a1| a1 != 0.0)
        .map(|&a1| (a1, alpha / (beta * a1)))
        .filter(|&(_, a2)| inside(a2))
        .collect();
    let parabola = if c1 == 0.0 {
        Vec::new()
    } else {
        xs.iter().map(|&a1| (a1, -a1 * a1 / c1)).filter(|&(_, a2)| inside(a2)).collect()
    };
    Ok(FieldTable { nodes, hyperbola, parabola })
}

impl FieldTable {
    /// Columns `kind,a1,a2,da1,da2,dp_sign`; curve rows leave the derivative
    /// columns empty.
    pub fn write_csv(&self, path: &Path, preamble: &[String]) -> Result<()> {
        use std::io::Write;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for line in preamble {
            writeln!(file, "# {line}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["kind", "a1", "a2", "da1", "da2", "dp_sign"])?;
        for n in &self.nodes {
            w.write_record([
                "node".to_string(),
                n.a1.to_string(),
                n.a2.to_string(),
                n.da1.to_string(),
                n.da2.to_string(),
                n.dp_sign.to_string(),
            ])?;
        }
        for (kind, curve) in [("hyperbola", &self.hyperbola), ("parabola", &self.parabola)] {
            for (a1, a2) in curve {
                w.write_record([kind.to_string(), a1.to_string(), a2.to_string(), String::new(), String::new(), String::new()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
