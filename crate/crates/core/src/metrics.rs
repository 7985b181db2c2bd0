//! Agreement and error scores. Every moment uses the population (1/N)
//! normalization.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Affect dimension a series belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    Valence,
    Arousal,
}

impl Dimension {
    pub const ALL: [Dimension; 2] = [Dimension::Valence, Dimension::Arousal];
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Valence => "valence",
            Dimension::Arousal => "arousal",
        })
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valence" => Ok(Dimension::Valence),
            "arousal" => Ok(Dimension::Arousal),
            _ => Err(Error::Parse(format!("unknown dimension `{s}`"))),
        }
    }
}

struct Moments<T> {
    mean_x: T,
    mean_y: T,
    var_x: T,
    var_y: T,
    cov: T,
}

fn moments<T: Scalar>(x: &[T], y: &[T]) -> Result<Moments<T>> {
    if x.len() != y.len() {
        return Err(shape_err!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        ));
    }
    if x.len() < 2 {
        return Err(shape_err!("need at least 2 samples, got {}", x.len()));
    }
    let n = T::lit(x.len() as f64);
    let mean_x = x.iter().copied().sum::<T>() / n;
    let mean_y = y.iter().copied().sum::<T>() / n;
    let (mut var_x, mut var_y, mut cov) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mean_x, b - mean_y);
        var_x += da * da;
        var_y += db * db;
        cov += da * db;
    }
    Ok(Moments {
        mean_x,
        mean_y,
        var_x: var_x / n,
        var_y: var_y / n,
        cov: cov / n,
    })
}

/// Pearson correlation; an error if either series is constant.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let m = moments(x, y)?;
    if m.var_x == T::zero() || m.var_y == T::zero() {
        return Err(Error::Degenerate("constant series".into()));
    }
    let r = m.cov / (m.var_x * m.var_y).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Concordance correlation coefficient
/// `2 cov / (var_gold + var_pred + (mean_gold - mean_pred)^2)`.
///
/// A constant prediction scores 0; a constant gold series is an error.
pub fn ccc<T: Scalar>(gold: &[T], pred: &[T]) -> Result<T> {
    let m = moments(gold, pred)?;
    if m.var_x == T::zero() {
        return Err(Error::Degenerate("constant gold series".into()));
    }
    if m.var_y == T::zero() {
        return Ok(T::zero());
    }
    let gap = m.mean_x - m.mean_y;
    Ok(T::lit(2.0) * m.cov / (m.var_x + m.var_y + gap * gap))
}

pub fn rmse<T: Scalar>(gold: &[T], pred: &[T]) -> Result<T> {
    if gold.len() != pred.len() || gold.is_empty() {
        return Err(shape_err!(
            "rmse needs equal non-empty series, got {} and {}",
            gold.len(),
            pred.len()
        ));
    }
    let s: T = gold
        .iter()
        .zip(pred)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok((s / T::lit(gold.len() as f64)).sqrt())
}

/// Fraction of positions where the labels agree.
pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return Err(shape_err!("accuracy needs equal non-empty label vectors"));
    }
    let hits = predicted.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub dimension: Dimension,
    pub partition: String,
    /// `raw` or `postprocessed`.
    pub stage: String,
    pub n: usize,
    pub ccc: f64,
    /// `None` when the prediction is constant.
    pub pearson: Option<f64>,
    pub rmse: f64,
}

impl ScoreReport {
    pub const CSV_HEADER: &'static str = "dimension,partition,stage,n,ccc,pearson,rmse";

    pub fn compute<T: Scalar>(
        dimension: Dimension,
        partition: &str,
        stage: &str,
        gold: &[T],
        pred: &[T],
    ) -> Result<Self> {
        Ok(Self {
            dimension,
            partition: partition.to_string(),
            stage: stage.to_string(),
            n: gold.len(),
            ccc: ccc(gold, pred)?.as_f64(),
            pearson: pearson(gold, pred).ok().map(Scalar::as_f64),
            rmse: rmse(gold, pred)?.as_f64(),
        })
    }

    pub fn csv_row(&self) -> String {
        let p = self.pearson.map(|v| format!("{v:.9}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.9},{},{:.9}",
            self.dimension, self.partition, self.stage, self.n, self.ccc, p, self.rmse
        )
    }

    pub fn to_csv(reports: &[ScoreReport]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}
