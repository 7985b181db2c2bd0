//! Epsilon-insensitive support vector regression and (C, ε) grid search.

mod grid;
mod smo;

pub use grid::{grid_search, GridCell, GridSearchReport, DEFAULT_C_GRID, DEFAULT_EPSILON_GRID};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::container::Container;
use crate::error::{param_err, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SVR_TAG: &[u8; 4] = b"SVRM";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    fn eval<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(&x, &y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
                (-T::lit(gamma) * d).exp()
            }
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Linear => f.write_str("linear"),
            Kernel::Rbf { gamma } => write!(f, "rbf:{gamma}"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "linear" {
            return Ok(Kernel::Linear);
        }
        if let Some(g) = s.strip_prefix("rbf:") {
            let gamma: f64 = g
                .parse()
                .map_err(|_| Error::Parse(format!("bad rbf gamma `{g}`")))?;
            if gamma > 0.0 && gamma.is_finite() {
                return Ok(Kernel::Rbf { gamma });
            }
        }
        Err(Error::Parse(format!(
            "unknown kernel `{s}` (expected linear or rbf:<gamma>)"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            kernel: Kernel::Linear,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(param_err!("C must be positive, got {}", self.c));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(param_err!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            ));
        }
        if !(self.tol > 0.0) {
            return Err(param_err!("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Per-column z-scoring fitted on training data. Columns with zero variance
/// are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    /// Population standard deviation; 0 marks a dropped column.
    pub std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(features: &Tensor<T>) -> Result<Self> {
        let (n, d) = features.dims2()?;
        if n == 0 {
            return Err(shape_err!("no rows to standardize"));
        }
        let nf = T::lit(n as f64);
        let mut mean = vec![T::zero(); d];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![T::zero(); d];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<T> = var.into_iter().map(|v| (v / nf).sqrt()).collect();
        let dropped: Vec<usize> = (0..d).filter(|&j| std[j] == T::zero()).collect();
        if !dropped.is_empty() {
            log::warn!(
                "dropping {} zero-variance feature column(s): {:?}",
                dropped.len(),
                dropped
            );
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn kept(&self) -> usize {
        self.std.iter().filter(|&&s| s != T::zero()).count()
    }

    /// Standardized kept columns, row-major `[n, kept]`.
    pub fn transform(&self, features: &Tensor<T>) -> Result<Vec<T>> {
        let (n, d) = features.dims2()?;
        if d != self.dim() {
            return Err(shape_err!(
                "expected {} feature columns, got {}",
                self.dim(),
                d
            ));
        }
        let mut out = Vec::with_capacity(n * self.kept());
        for r in 0..n {
            for ((&v, &m), &s) in features.row(r).iter().zip(&self.mean).zip(&self.std) {
                if s != T::zero() {
                    out.push((v - m) / s);
                }
            }
        }
        Ok(out)
    }
}

/// Gram matrix between the rows of `a` (`[na, d]`) and `b` (`[nb, d]`).
pub(crate) fn gram<T: Scalar>(kernel: Kernel, a: &[T], b: &[T], d: usize) -> Vec<T> {
    let (na, nb) = if d == 0 {
        (a.len(), b.len())
    } else {
        (a.len() / d, b.len() / d)
    };
    if d == 0 {
        return vec![T::zero(); na * nb];
    }
    let mut out = Vec::with_capacity(na * nb);
    for i in 0..na {
        for j in 0..nb {
            out.push(kernel.eval(&a[i * d..(i + 1) * d], &b[j * d..(j + 1) * d]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel<T> {
    pub params: SvrParams,
    pub scaler: Standardizer<T>,
    /// Standardized support vectors, row-major `[m, kept]`.
    pub support_vectors: Vec<T>,
    /// `alpha - alpha^*` of each support vector.
    pub coef: Vec<T>,
    pub bias: T,
    pub converged: bool,
    pub iterations: usize,
}

/// Precomputed training problem shared by the cells of a grid search.
pub(crate) struct Problem<T> {
    pub scaler: Standardizer<T>,
    pub x: Vec<T>,
    pub kept: usize,
    pub n: usize,
    pub gram: Vec<T>,
    pub targets: Vec<T>,
}

impl<T: Scalar> Problem<T> {
    pub fn new(features: &Tensor<T>, targets: &[T], kernel: Kernel) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if n != targets.len() {
            return Err(shape_err!(
                "{} feature rows but {} targets",
                n,
                targets.len()
            ));
        }
        if n < 2 {
            return Err(shape_err!("need at least 2 training rows, got {n}"));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("svr targets"));
        }
        let scaler = Standardizer::fit(features)?;
        let x = scaler.transform(features)?;
        let kept = scaler.kept();
        let gram = gram(kernel, &x, &x, kept);
        Ok(Self {
            scaler,
            x,
            kept,
            n,
            gram,
            targets: targets.to_vec(),
        })
    }

    /// Dual solution and bias, indexed by training row.
    pub fn solve(&self, params: &SvrParams) -> Result<(smo::Solution<T>, T)> {
        params.validate()?;
        let (c, eps) = (T::lit(params.c), T::lit(params.epsilon));
        let sol = smo::solve(
            &self.gram,
            self.n,
            &self.targets,
            c,
            eps,
            T::lit(params.tol),
            params.max_iter,
        );
        if !sol.converged {
            log::warn!(
                "svr did not converge within {} iterations (C={}, epsilon={})",
                params.max_iter,
                params.c,
                params.epsilon
            );
        }
        let residuals: Vec<T> = (0..self.n)
            .map(|i| {
                let f: T = (0..self.n)
                    .map(|j| sol.theta[j] * self.gram[i * self.n + j])
                    .sum();
                self.targets[i] - f
            })
            .collect();
        let bias = smo::midpoint_bias(&residuals, eps);
        Ok((sol, bias))
    }

    pub fn fit(&self, params: &SvrParams) -> Result<SvrModel<T>> {
        let (sol, bias) = self.solve(params)?;
        let support: Vec<usize> = (0..self.n).filter(|&i| sol.theta[i] != T::zero()).collect();
        let mut sv = Vec::with_capacity(support.len() * self.kept);
        for &i in &support {
            sv.extend_from_slice(&self.x[i * self.kept..(i + 1) * self.kept]);
        }
        Ok(SvrModel {
            params: params.clone(),
            scaler: self.scaler.clone(),
            support_vectors: sv,
            coef: support.iter().map(|&i| sol.theta[i]).collect(),
            bias,
            converged: sol.converged,
            iterations: sol.iterations,
        })
    }
}

/// Trains an epsilon-SVR on z-scored features.
pub fn fit_svr<T: Scalar>(
    features: &Tensor<T>,
    targets: &[T],
    params: &SvrParams,
) -> Result<SvrModel<T>> {
    params.validate()?;
    Problem::new(features, targets, params.kernel)?.fit(params)
}

impl<T: Scalar> SvrModel<T> {
    pub fn predict(&self, features: &Tensor<T>) -> Result<Vec<T>> {
        let x = self.scaler.transform(features)?;
        let kept = self.scaler.kept();
        let n = features.batch();
        let m = self.coef.len();
        let k = gram(self.params.kernel, &x, &self.support_vectors, kept);
        Ok((0..n)
            .map(|i| (0..m).map(|j| self.coef[j] * k[i * m + j]).sum::<T>() + self.bias)
            .collect())
    }

    /// Dual objective of this solution on its own training data (minimization form).
    pub fn dual_objective(
        features: &Tensor<T>,
        targets: &[T],
        theta: &[T],
        params: &SvrParams,
    ) -> Result<T> {
        let p = Problem::new(features, targets, params.kernel)?;
        Ok(smo::dual_objective(
            &p.gram,
            p.n,
            targets,
            theta,
            T::lit(params.epsilon),
        ))
    }

    pub fn to_container(&self) -> Container {
        let text = format!(
            "svr v1\nkernel {}\nc {}\nepsilon {}\ntol {}\nmax_iter {}\nbias {}\nconverged {}\niterations {}\n",
            self.params.kernel,
            self.params.c,
            self.params.epsilon,
            self.params.tol,
            self.params.max_iter,
            self.bias.as_f64(),
            self.converged,
            self.iterations
        );
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let mut c = Container::new(SVR_TAG, text);
        c.push("feature_mean", &[self.scaler.dim()], f(&self.scaler.mean));
        c.push("feature_std", &[self.scaler.dim()], f(&self.scaler.std));
        c.push(
            "support_vectors",
            &[self.coef.len(), self.scaler.kept()],
            f(&self.support_vectors),
        );
        c.push("coef", &[self.coef.len()], f(&self.coef));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = c.text.lines();
        if lines.next() != Some("svr v1") {
            return Err(bad("missing `svr v1` header".into()));
        }
        let mut fields = std::collections::HashMap::new();
        for line in lines {
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("bad line `{line}`")))?;
            fields.insert(k, v);
        }
        fn get<V: FromStr>(f: &std::collections::HashMap<&str, &str>, k: &str) -> Result<V> {
            f.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad field `{k}`")))
        }
        let params = SvrParams {
            kernel: get(&fields, "kernel")?,
            c: get(&fields, "c")?,
            epsilon: get(&fields, "epsilon")?,
            tol: get(&fields, "tol")?,
            max_iter: get(&fields, "max_iter")?,
        };
        let lit = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let scaler = Standardizer {
            mean: lit(&c.blob("feature_mean")?.data),
            std: lit(&c.blob("feature_std")?.data),
        };
        let sv = c.blob("support_vectors")?;
        let coef = lit(&c.blob("coef")?.data);
        if scaler.mean.len() != scaler.std.len()
            || sv.shape.len() != 2
            || sv.shape[0] != coef.len()
            || sv.shape[1] != scaler.kept()
        {
            return Err(bad("inconsistent svr blob shapes".into()));
        }
        Ok(Self {
            params,
            scaler,
            support_vectors: lit(&sv.data),
            coef,
            bias: T::lit(get::<f64>(&fields, "bias")?),
            converged: get(&fields, "converged")?,
            iterations: get(&fields, "iterations")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path, SVR_TAG)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn two_point_interpolation() {
        let p = SvrParams {
            c: 1e3,
            epsilon: 0.0,
            ..Default::default()
        };
        let m = fit_svr(&col(&[0.0, 1.0]), &[0.0, 1.0], &p).unwrap();
        let y = m.predict(&col(&[0.5, 0.0, 1.0])).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-3);
        assert!(y[1].abs() < 1e-3 && (y[2] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_targets_give_constant_model() {
        let x = Tensor::from_fn(&[5, 2], |i| (i as f64 * 1.7).sin());
        let m = fit_svr(&x, &[0.4; 5], &SvrParams::default()).unwrap();
        assert!(m.coef.is_empty());
        assert_eq!(m.bias, 0.4);
        assert!(m.predict(&x).unwrap().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn wide_tube_is_flat_within_epsilon() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let y = [0.1, 0.3, 0.2, 0.25];
        let m = fit_svr(
            &x,
            &y,
            &SvrParams {
                epsilon: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.coef.is_empty());
        assert!(y.iter().all(|&t| (t - m.bias).abs() <= 0.5));
    }

    #[test]
    fn zero_variance_column_dropped() {
        let x = Tensor::new(vec![3, 2], vec![0.0, 7.0, 1.0, 7.0, 2.0, 7.0]).unwrap();
        let m = fit_svr(
            &x,
            &[0.0, 1.0, 2.0],
            &SvrParams {
                c: 100.0,
                epsilon: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.scaler.kept(), 1);
        assert!(m.predict(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn rescaled_feature_same_prediction() {
        let x = Tensor::from_fn(&[8, 2], |i| ((i * 37) % 11) as f64 / 3.0);
        let y: Vec<f64> = (0..8).map(|i| x.row(i)[0] - 0.5 * x.row(i)[1]).collect();
        let p = SvrParams {
            c: 10.0,
            epsilon: 0.01,
            tol: 1e-8,
            ..Default::default()
        };
        let a = fit_svr(&x, &y, &p).unwrap().predict(&x).unwrap();
        let xs = x
            .zip_map(
                &Tensor::from_fn(&[8, 2], |i| if i % 2 == 0 { 1.0 } else { 0.0 }),
                |v, m| if m == 1.0 { 3.0 * v - 4.0 } else { v },
            )
            .unwrap();
        let b = fit_svr(&xs, &y, &p).unwrap().predict(&xs).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_equals_rowwise() {
        let x = Tensor::from_fn(&[6, 3], |i| (i as f64 * 0.9).cos());
        let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.2).collect();
        let m = fit_svr(
            &x,
            &y,
            &SvrParams {
                kernel: Kernel::Rbf { gamma: 0.5 },
                ..Default::default()
            },
        )
        .unwrap();
        let all = m.predict(&x).unwrap();
        for (i, &v) in all.iter().enumerate() {
            assert_eq!(m.predict(&x.select_rows(&[i])).unwrap()[0], v);
        }
    }

    #[test]
    fn container_round_trip() {
        let x = Tensor::from_fn(&[6, 2], |i| (i as f64 * 0.4).sin());
        let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let m = fit_svr(
            &x,
            &y,
            &SvrParams {
                c: 3.0,
                epsilon: 0.01,
                ..Default::default()
            },
        )
        .unwrap();
        let c = Container::from_bytes(&m.to_container().to_bytes()).unwrap();
        assert_eq!(SvrModel::<f64>::from_container(&c).unwrap(), m);
        let flat = fit_svr(&x, &[1.0; 6], &SvrParams::default()).unwrap();
        let c = Container::from_bytes(&flat.to_container().to_bytes()).unwrap();
        assert_eq!(SvrModel::<f64>::from_container(&c).unwrap(), flat);
    }

    #[test]
    fn kernel_names() {
        for k in [Kernel::Linear, Kernel::Rbf { gamma: 0.25 }] {
            assert_eq!(k.to_string().parse::<Kernel>().unwrap(), k);
        }
        assert!("rbf:-1".parse::<Kernel>().is_err());
    }

    #[test]
    fn invalid_params() {
        let x = col(&[0.0, 1.0]);
        assert!(fit_svr(
            &x,
            &[0.0, 1.0],
            &SvrParams {
                c: 0.0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_svr(
            &x,
            &[0.0, 1.0],
            &SvrParams {
                epsilon: -1.0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_svr(&col(&[0.0]), &[0.0], &SvrParams::default()).is_err());
    }
}
