//! Prediction cleanup: median filtering, centering, scaling and time
//! shifting, plus annotation delay compensation.

mod chain;

pub use chain::{optimize_chain, AcceptedStep, CandidateLog, ChainGrid, PostprocessChain, Step};

use std::fmt;
use std::str::FromStr;

use crate::error::{param_err, shape_err, Error, Result};
use crate::scalar::Scalar;

/// Largest shift accepted by [`time_shift`] (10 s at 40 ms per frame).
pub const MAX_SHIFT: usize = 250;

/// Centered sliding median with edge replication.
pub fn median_filter<T: Scalar>(pred: &[T], window: usize) -> Result<Vec<T>> {
    if window % 2 == 0 {
        return Err(param_err!("median window must be odd, got {window}"));
    }
    if window > pred.len() {
        return Err(param_err!(
            "median window {} longer than series of {}",
            window,
            pred.len()
        ));
    }
    if window == 1 {
        return Ok(pred.to_vec());
    }
    let n = pred.len();
    let half = window / 2;
    let at = |i: isize| pred[i.clamp(0, n as isize - 1) as usize];
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("finite series");
    let mut sorted: Vec<T> = (-(half as isize)..=half as isize).map(at).collect();
    sorted.sort_by(cmp);
    let mut out = Vec::with_capacity(n);
    out.push(sorted[half]);
    for t in 1..n as isize {
        let leaving = at(t - 1 - half as isize);
        let entering = at(t + half as isize);
        let pos = sorted
            .binary_search_by(|v| cmp(v, &leaving))
            .expect("value in window");
        sorted.remove(pos);
        let ins = sorted.partition_point(|v| cmp(v, &entering).is_lt());
        sorted.insert(ins, entering);
        out.push(sorted[half]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterMode {
    /// `y + (mean_gold - mean_pred)`.
    Bias,
    /// `y - mean_gold`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// `beta = std_gold / std_pred`.
    Std,
    /// `beta = mean_gold / mean_pred`.
    LiteralRatio,
}

macro_rules! named_enum {
    ($ty:ident { $($var:ident => $name:literal),* }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $name),* })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$var),)*
                    _ => Err(Error::Parse(format!("unknown {} `{}`", stringify!($ty), s))),
                }
            }
        }
    };
}

named_enum!(CenterMode { Bias => "bias", Literal => "literal" });
named_enum!(ScaleMode { Std => "std", LiteralRatio => "literal-ratio" });

fn mean<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.as_f64()).sum::<f64>() / x.len() as f64
}

fn std<T: Scalar>(x: &[T]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Training means `(gold, pred)`.
pub fn fit_center<T: Scalar>(gold: &[T], pred: &[T]) -> Result<(f64, f64)> {
    if gold.is_empty() || pred.is_empty() {
        return Err(shape_err!("centering needs non-empty training series"));
    }
    Ok((mean(gold), mean(pred)))
}

pub fn apply_center<T: Scalar>(
    pred: &[T],
    gold_mean: f64,
    pred_mean: f64,
    mode: CenterMode,
) -> Vec<T> {
    let offset = T::lit(match mode {
        CenterMode::Bias => gold_mean - pred_mean,
        CenterMode::Literal => -gold_mean,
    });
    pred.iter().map(|&v| v + offset).collect()
}

/// Scale factor fitted on training series; `None` (with a warning) when the
/// prediction statistic it divides by vanishes.
pub fn fit_scale<T: Scalar>(gold: &[T], pred: &[T], mode: ScaleMode) -> Result<Option<f64>> {
    if gold.is_empty() || pred.is_empty() {
        return Err(shape_err!("scaling needs non-empty training series"));
    }
    let (num, den) = match mode {
        ScaleMode::Std => (std(gold), std(pred)),
        ScaleMode::LiteralRatio => (mean(gold), mean(pred)),
    };
    if den.abs() < 1e-12 {
        log::warn!(
            "scaling skipped: training prediction {} is zero",
            if mode == ScaleMode::Std {
                "std"
            } else {
                "mean"
            }
        );
        return Ok(None);
    }
    Ok(Some(num / den))
}

pub fn apply_scale<T: Scalar>(pred: &[T], beta: f64) -> Vec<T> {
    let b = T::lit(beta);
    pred.iter().map(|&v| v * b).collect()
}

/// Delays the series by `k` frames, holding `pred[0]` over the first `k`.
pub fn time_shift<T: Scalar>(pred: &[T], k: usize) -> Result<Vec<T>> {
    if k > MAX_SHIFT {
        return Err(param_err!("shift {k} exceeds {MAX_SHIFT} frames"));
    }
    let n = pred.len();
    let Some(&first) = pred.first() else {
        return Ok(Vec::new());
    };
    let k = k.min(n);
    let mut out = vec![first; k];
    out.extend_from_slice(&pred[..n - k]);
    Ok(out)
}

/// Pairs `frames[t]` with `labels[t + n]`, dropping the unmatched ends.
pub fn delay_compensate<'a, F, L>(
    frames: &'a [F],
    labels: &'a [L],
    n: usize,
) -> Result<(&'a [F], &'a [L])> {
    if frames.len() != labels.len() {
        return Err(shape_err!(
            "{} frames but {} labels",
            frames.len(),
            labels.len()
        ));
    }
    if n >= frames.len() {
        return Err(param_err!(
            "delay {} not shorter than series of {}",
            n,
            frames.len()
        ));
    }
    Ok((&frames[..frames.len() - n], &labels[n..]))
}
