use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use super::{
    apply_center, apply_scale, fit_center, fit_scale, median_filter, time_shift, CenterMode,
    ScaleMode,
};
use crate::error::{shape_err, Error, Result};
use crate::metrics::ccc;
use crate::scalar::Scalar;

/// Slack for the training-fit check applied to every candidate step.
const TRAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Median {
        window: usize,
    },
    Center {
        mode: CenterMode,
        gold_mean: f64,
        pred_mean: f64,
    },
    Scale {
        mode: ScaleMode,
        beta: f64,
    },
    Shift {
        k: usize,
    },
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Median { .. } => "median",
            Step::Center { .. } => "center",
            Step::Scale { .. } => "scale",
            Step::Shift { .. } => "shift",
        }
    }

    pub fn apply<T: Scalar>(&self, pred: &[T]) -> Result<Vec<T>> {
        match *self {
            Step::Median { window } => median_filter(pred, window),
            Step::Center {
                mode,
                gold_mean,
                pred_mean,
            } => Ok(apply_center(pred, gold_mean, pred_mean, mode)),
            Step::Scale { beta, .. } => Ok(apply_scale(pred, beta)),
            Step::Shift { k } => time_shift(pred, k),
        }
    }

    fn params(&self) -> String {
        match self {
            Step::Median { window } => format!("window={window}"),
            Step::Center {
                mode,
                gold_mean,
                pred_mean,
            } => format!("mode={mode} gold_mean={gold_mean} pred_mean={pred_mean}"),
            Step::Scale { mode, beta } => format!("mode={mode} beta={beta}"),
            Step::Shift { k } => format!("k={k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedStep {
    pub step: Step,
    /// Dev CCC after applying the chain up to and including this step.
    pub dev_ccc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLog {
    pub step: Step,
    pub train_before: f64,
    pub train_after: f64,
    pub dev_before: f64,
    pub dev_after: f64,
    pub accepted: bool,
}

/// Search space and modes for [`optimize_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGrid {
    pub median_windows: Vec<usize>,
    pub shifts: Vec<usize>,
    pub center_mode: CenterMode,
    pub scale_mode: ScaleMode,
}

impl Default for ChainGrid {
    fn default() -> Self {
        Self {
            median_windows: log_spaced_odd(1, 501, 20),
            shifts: (0..=25).chain((30..=250).step_by(10)).collect(),
            center_mode: CenterMode::Bias,
            scale_mode: ScaleMode::Std,
        }
    }
}

/// `count` log-spaced values from `lo` to `hi`, rounded to odd and deduplicated.
pub(crate) fn log_spaced_odd(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..count)
        .map(|i| {
            let v = (a + (b - a) * i as f64 / (count - 1) as f64).exp();
            (((v - 1.0) / 2.0).round() as usize) * 2 + 1
        })
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessChain {
    pub raw_dev_ccc: f64,
    pub steps: Vec<AcceptedStep>,
    pub log: Vec<CandidateLog>,
}

impl PostprocessChain {
    pub fn dev_ccc(&self) -> f64 {
        self.steps.last().map_or(self.raw_dev_ccc, |s| s.dev_ccc)
    }

    pub fn apply<T: Scalar>(&self, pred: &[T]) -> Result<Vec<T>> {
        let mut out = pred.to_vec();
        for s in &self.steps {
            out = s.step.apply(&out)?;
        }
        Ok(out)
    }
}

fn eval<T: Scalar>(gold: &[T], pred: &[T]) -> Result<f64> {
    Ok(ccc(gold, pred)?.as_f64())
}

/// Picks the grid value with the best dev CCC (first wins ties).
fn best_of<T: Scalar>(
    values: &[usize],
    gold_dev: &[T],
    pred_dev: &[T],
    make: impl Fn(usize) -> Step + Sync,
) -> Result<Option<Step>> {
    let scores: Vec<(usize, f64)> = values
        .par_iter()
        .map(|&v| Ok((v, eval(gold_dev, &make(v).apply(pred_dev)?)?)))
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (v, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((v, s));
        }
    }
    Ok(best.map(|(v, _)| make(v)))
}

/// Greedy chain search in the fixed order median, center, scale, shift.
///
/// Median window and shift are chosen by dev CCC over the grid; centering and
/// scaling statistics come from the training series. A candidate is kept only
/// if dev CCC strictly improves and training CCC does not drop.
pub fn optimize_chain<T: Scalar>(
    gold_train: &[T],
    pred_train: &[T],
    gold_dev: &[T],
    pred_dev: &[T],
    grid: &ChainGrid,
) -> Result<PostprocessChain> {
    if gold_train.len() != pred_train.len() || gold_dev.len() != pred_dev.len() {
        return Err(shape_err!("gold and prediction series must be aligned"));
    }
    if gold_train.is_empty() || gold_dev.is_empty() {
        return Err(shape_err!("chain search needs non-empty series"));
    }
    let mut train = pred_train.to_vec();
    let mut dev = pred_dev.to_vec();
    let raw_dev_ccc = eval(gold_dev, &dev)?;
    let mut chain = PostprocessChain {
        raw_dev_ccc,
        steps: Vec::new(),
        log: Vec::new(),
    };
    let max_window = gold_train.len().min(gold_dev.len());
    let windows: Vec<usize> = grid
        .median_windows
        .iter()
        .copied()
        .filter(|&w| w % 2 == 1 && w <= max_window)
        .collect();
    let shifts: Vec<usize> = grid
        .shifts
        .iter()
        .copied()
        .filter(|&k| k <= super::MAX_SHIFT)
        .collect();

    for stage in 0..4 {
        let candidate = match stage {
            0 => best_of(&windows, gold_dev, &dev, |w| Step::Median { window: w })?,
            1 => {
                let (gold_mean, pred_mean) = fit_center(gold_train, &train)?;
                Some(Step::Center {
                    mode: grid.center_mode,
                    gold_mean,
                    pred_mean,
                })
            }
            2 => fit_scale(gold_train, &train, grid.scale_mode)?.map(|beta| Step::Scale {
                mode: grid.scale_mode,
                beta,
            }),
            _ => best_of(&shifts, gold_dev, &dev, |k| Step::Shift { k })?,
        };
        let Some(step) = candidate else { continue };
        let new_train = step.apply(&train)?;
        let new_dev = step.apply(&dev)?;
        let log = CandidateLog {
            train_before: eval(gold_train, &train)?,
            train_after: eval(gold_train, &new_train)?,
            dev_before: chain.dev_ccc(),
            dev_after: eval(gold_dev, &new_dev)?,
            accepted: false,
            step,
        };
        let accepted =
            log.dev_after > log.dev_before && log.train_after >= log.train_before - TRAIN_SLACK;
        if accepted {
            chain.steps.push(AcceptedStep {
                step: log.step.clone(),
                dev_ccc: log.dev_after,
            });
            train = new_train;
            dev = new_dev;
        }
        chain.log.push(CandidateLog { accepted, ..log });
    }
    Ok(chain)
}

impl fmt::Display for PostprocessChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::from("chain v1\n");
        writeln!(s, "raw_dev_ccc {}", self.raw_dev_ccc)?;
        for a in &self.steps {
            writeln!(
                s,
                "step {} {} dev_ccc={}",
                a.step.name(),
                a.step.params(),
                a.dev_ccc
            )?;
        }
        for c in &self.log {
            writeln!(
                s,
                "candidate {} {} train_before={} train_after={} dev_before={} dev_after={} accepted={}",
                c.step.name(),
                c.step.params(),
                c.train_before,
                c.train_after,
                c.dev_before,
                c.dev_after,
                c.accepted
            )?;
        }
        f.write_str(&s)
    }
}

fn parse_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Parse(format!("chain line {line}: {msg}"))
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn get<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| parse_err(self.line, format!("missing `{key}`")))?;
        raw.parse()
            .map_err(|_| parse_err(self.line, format!("bad value `{raw}` for `{key}`")))
    }
}

fn parse_step(name: &str, f: &Fields<'_>) -> Result<Step> {
    Ok(match name {
        "median" => Step::Median {
            window: f.get("window")?,
        },
        "center" => Step::Center {
            mode: f.get("mode")?,
            gold_mean: f.get("gold_mean")?,
            pred_mean: f.get("pred_mean")?,
        },
        "scale" => Step::Scale {
            mode: f.get("mode")?,
            beta: f.get("beta")?,
        },
        "shift" => Step::Shift { k: f.get("k")? },
        other => return Err(parse_err(f.line, format!("unknown step `{other}`"))),
    })
}

impl FromStr for PostprocessChain {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, "chain v1")) => {}
            _ => return Err(parse_err(1, "expected `chain v1` header")),
        }
        let mut raw = None;
        let mut steps = Vec::new();
        let mut log = Vec::new();
        for (n, line) in lines {
            let mut words = line.split_whitespace();
            let kind = words.next().unwrap_or_default();
            if kind == "raw_dev_ccc" {
                let v = words.next().ok_or_else(|| parse_err(n, "missing value"))?;
                raw = Some(v.parse::<f64>().map_err(|_| parse_err(n, "bad number"))?);
                continue;
            }
            let name = words
                .next()
                .ok_or_else(|| parse_err(n, "missing step name"))?;
            let pairs = words
                .map(|w| {
                    w.split_once('=')
                        .ok_or_else(|| parse_err(n, format!("expected key=value, got `{w}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let fields = Fields { line: n, pairs };
            let step = parse_step(name, &fields)?;
            match kind {
                "step" => steps.push(AcceptedStep {
                    step,
                    dev_ccc: fields.get("dev_ccc")?,
                }),
                "candidate" => log.push(CandidateLog {
                    step,
                    train_before: fields.get("train_before")?,
                    train_after: fields.get("train_after")?,
                    dev_before: fields.get("dev_before")?,
                    dev_after: fields.get("dev_after")?,
                    accepted: fields.get("accepted")?,
                }),
                other => return Err(parse_err(n, format!("unknown record `{other}`"))),
            }
        }
        let raw_dev_ccc = raw.ok_or_else(|| Error::Parse("chain: missing raw_dev_ccc".into()))?;
        Ok(Self {
            raw_dev_ccc,
            steps,
            log,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(n: usize) -> Vec<f64> {
        (0..n).map(|t| (t as f64 * 0.05).sin() * 0.6).collect()
    }

    #[test]
    fn default_grids() {
        let g = ChainGrid::default();
        assert_eq!(g.median_windows.first(), Some(&1));
        assert_eq!(g.median_windows.last(), Some(&501));
        assert!(g.median_windows.iter().all(|w| w % 2 == 1));
        assert_eq!(g.shifts.len(), 26 + 23);
        assert_eq!(g.shifts.last(), Some(&250));
    }

    #[test]
    fn perfect_prediction_accepts_nothing() {
        let g = wave(300);
        let c = optimize_chain(&g, &g, &g, &g, &ChainGrid::default()).unwrap();
        assert!(c.steps.is_empty());
        assert_eq!(c.dev_ccc(), 1.0);
    }

    #[test]
    fn noisy_prediction_gets_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = wave(400);
        let noisy = |rng: &mut ChaCha8Rng| {
            g.iter()
                .map(|v| v + rng.gen_range(-0.4..0.4))
                .collect::<Vec<f64>>()
        };
        let (pt, pd) = (noisy(&mut rng), noisy(&mut rng));
        let c = optimize_chain(&g, &pt, &g, &pd, &ChainGrid::default()).unwrap();
        assert!(matches!(c.steps[0].step, Step::Median { window } if window > 1));
        assert!(c.dev_ccc() > c.raw_dev_ccc);
    }

    #[test]
    fn half_amplitude_gets_scaled() {
        let g = wave(400);
        let p: Vec<f64> = g.iter().map(|v| 0.5 * v).collect();
        let grid = ChainGrid {
            median_windows: vec![1],
            shifts: vec![0],
            ..ChainGrid::default()
        };
        let c = optimize_chain(&g, &p, &g, &p, &grid).unwrap();
        let beta = c.steps.iter().find_map(|s| match s.step {
            Step::Scale { beta, .. } => Some(beta),
            _ => None,
        });
        assert!((beta.unwrap() - 2.0).abs() < 1e-9);
        assert!(c.dev_ccc() > 0.999);
    }

    #[test]
    fn lag_recovered_by_shift() {
        let base = wave(400);
        let gold = time_shift(&base, 12).unwrap();
        let grid = ChainGrid {
            median_windows: vec![1],
            ..ChainGrid::default()
        };
        let c = optimize_chain(&gold, &base, &gold, &base, &grid).unwrap();
        assert_eq!(c.steps.last().unwrap().step, Step::Shift { k: 12 });
    }

    #[test]
    fn text_round_trip_and_replay() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = wave(300);
        let p: Vec<f64> = g
            .iter()
            .map(|v| 0.7 * v + 0.2 + rng.gen_range(-0.3..0.3))
            .collect();
        let c = optimize_chain(&g, &p, &g, &p, &ChainGrid::default()).unwrap();
        let text = c.to_string();
        let back: PostprocessChain = text.parse().unwrap();
        assert_eq!(back, c);
        assert_eq!(back.apply(&p).unwrap(), c.apply(&p).unwrap());
        assert!((eval(&g, &c.apply(&p).unwrap()).unwrap() - c.dev_ccc()).abs() < 1e-15);
        assert!("chain v2\n".parse::<PostprocessChain>().is_err());
    }
}
