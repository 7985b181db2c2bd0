use std::time::Instant;

use rayon::prelude::*;

use super::{gram, Kernel, Problem, SvrParams};
use crate::error::{param_err, shape_err, Result};
use crate::metrics::ccc;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_C_GRID: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2];
pub const DEFAULT_EPSILON_GRID: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub c: f64,
    pub epsilon: f64,
    pub dev_ccc: f64,
    pub seconds: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchReport {
    /// Cells in (C, ε) ascending order.
    pub cells: Vec<GridCell>,
    pub chosen: usize,
}

impl GridSearchReport {
    pub const CSV_HEADER: &'static str = "C,epsilon,dev_ccc,seconds";

    pub fn chosen(&self) -> &GridCell {
        &self.cells[self.chosen]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.9},{:.3}\n",
                c.c, c.epsilon, c.dev_ccc, c.seconds
            ));
        }
        out
    }
}

fn sorted_unique(v: &[f64], what: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(param_err!("empty {what} grid"));
    }
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    v.dedup();
    Ok(v)
}

/// Fits one model per (C, ε) cell and picks the best dev CCC. Ties go to
/// the smaller C, then the smaller ε.
#[allow(clippy::too_many_arguments)]
pub fn grid_search<T: Scalar>(
    train_x: &Tensor<T>,
    train_y: &[T],
    dev_x: &Tensor<T>,
    dev_y: &[T],
    c_grid: &[f64],
    eps_grid: &[f64],
    kernel: Kernel,
    tol: f64,
    max_iter: usize,
) -> Result<GridSearchReport> {
    let cs = sorted_unique(c_grid, "C")?;
    let es = sorted_unique(eps_grid, "epsilon")?;
    if dev_x.batch() != dev_y.len() {
        return Err(shape_err!(
            "{} dev rows but {} dev targets",
            dev_x.batch(),
            dev_y.len()
        ));
    }
    let problem = Problem::new(train_x, train_y, kernel)?;
    let dev = problem.scaler.transform(dev_x)?;
    let dev_gram = gram(kernel, &dev, &problem.x, problem.kept);
    let n = problem.n;

    let grid: Vec<(f64, f64)> = cs
        .iter()
        .flat_map(|&c| es.iter().map(move |&e| (c, e)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(c, epsilon)| -> Result<GridCell> {
            let start = Instant::now();
            let params = SvrParams {
                c,
                epsilon,
                kernel,
                tol,
                max_iter,
            };
            let (sol, bias) = problem.solve(&params)?;
            let pred: Vec<T> = (0..dev_y.len())
                .map(|i| {
                    (0..n)
                        .map(|j| sol.theta[j] * dev_gram[i * n + j])
                        .sum::<T>()
                        + bias
                })
                .collect();
            let score = ccc(dev_y, &pred)?.as_f64();
            Ok(GridCell {
                c,
                epsilon,
                dev_ccc: score,
                seconds: start.elapsed().as_secs_f64(),
                converged: sol.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut chosen = 0;
    for (i, cell) in cells.iter().enumerate() {
        if cell.dev_ccc > cells[chosen].dev_ccc {
            chosen = i;
        }
    }
    Ok(GridSearchReport { cells, chosen })
}
