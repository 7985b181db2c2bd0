//! Labeled image sets, per-subject frame sequences with affect annotations,
//! and a seeded synthetic generator.

mod fer;
mod pgm;
mod recola;
mod synth;

pub use fer::{export_fer_csv, load_fer_csv, parse_fer_csv, LabeledImageSet, CLASSES};
pub use pgm::{read_pgm, write_pgm};
pub use recola::{export_recola_layout, load_recola_layout};
pub use synth::{synth_blob_classes, synth_dataset};

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Frame side in pixels.
pub const SIDE: usize = 48;
pub const PIXELS: usize = SIDE * SIDE;
/// Frame period in milliseconds.
pub const FRAME_MS: u64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        })
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "Training" => Ok(Partition::Train),
            "val" | "dev" | "PublicTest" => Ok(Partition::Val),
            "test" | "PrivateTest" => Ok(Partition::Test),
            _ => Err(Error::Parse(format!("unknown partition `{s}`"))),
        }
    }
}

/// One subject's frames at a constant 40 ms step. `None` marks a missing frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub subject: String,
    pub partition: Partition,
    pub timestamps_ms: Vec<u64>,
    /// 8-bit grayscale, row-major `SIDE x SIDE`.
    pub frames: Vec<Option<Vec<u8>>>,
}

impl FrameSequence {
    pub fn new(
        subject: &str,
        partition: Partition,
        timestamps_ms: Vec<u64>,
        frames: Vec<Option<Vec<u8>>>,
    ) -> Result<Self> {
        let s = Self {
            subject: subject.to_string(),
            partition,
            timestamps_ms,
            frames,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps_ms.len() != self.frames.len() {
            return Err(shape_err!(
                "{} timestamps for {} frames",
                self.timestamps_ms.len(),
                self.frames.len()
            ));
        }
        check_timestamps(&self.subject, &self.timestamps_ms)?;
        if let Some(i) = self
            .frames
            .iter()
            .position(|f| f.as_ref().is_some_and(|p| p.len() != PIXELS))
        {
            return Err(Error::Data(format!(
                "subject {}: frame {} is not {SIDE}x{SIDE}",
                self.subject, i
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn missing(&self) -> usize {
        self.frames.iter().filter(|f| f.is_none()).count()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.timestamps_ms
            .iter()
            .map(|&ms| ms as f64 / 1000.0)
            .collect()
    }

    /// Frames as `[n, SIDE, SIDE, 1]` in [0, 1]. Missing frames are an error.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(self.len() * PIXELS);
        for (i, f) in self.frames.iter().enumerate() {
            let f = f.as_ref().ok_or_else(|| {
                Error::Data(format!("subject {}: frame {} is missing", self.subject, i))
            })?;
            data.extend(f.iter().map(|&p| T::lit(p as f64 / 255.0)));
        }
        Tensor::new(vec![self.len(), SIDE, SIDE, 1], data)
    }
}

pub(crate) fn check_timestamps(subject: &str, ts: &[u64]) -> Result<()> {
    if let Some(i) = ts.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Data(format!(
            "subject {subject}: non-monotone timestamps at row {}",
            i + 2
        )));
    }
    for (i, w) in ts.windows(2).enumerate() {
        if w[1] - w[0] != FRAME_MS {
            return Err(Error::Data(format!(
                "subject {subject}: timestamp step {} ms at row {} (expected {FRAME_MS})",
                w[1] - w[0],
                i + 2
            )));
        }
    }
    Ok(())
}

/// Per-frame gold standard in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTrack {
    pub subject: String,
    pub valence: Vec<f64>,
    pub arousal: Vec<f64>,
}

impl AnnotationTrack {
    pub fn new(subject: &str, valence: Vec<f64>, arousal: Vec<f64>) -> Result<Self> {
        let a = Self {
            subject: subject.to_string(),
            valence,
            arousal,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.valence.len() != self.arousal.len() {
            return Err(shape_err!(
                "subject {}: {} valence vs {} arousal values",
                self.subject,
                self.valence.len(),
                self.arousal.len()
            ));
        }
        for (name, v) in [("valence", &self.valence), ("arousal", &self.arousal)] {
            if let Some(i) = v.iter().position(|x| !(-1.0..=1.0).contains(x)) {
                return Err(Error::Data(format!(
                    "subject {}: {name} value {} at row {} outside [-1, 1]",
                    self.subject,
                    v[i],
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }

    pub fn dimension(&self, dim: crate::metrics::Dimension) -> &[f64] {
        match dim {
            crate::metrics::Dimension::Valence => &self.valence,
            crate::metrics::Dimension::Arousal => &self.arousal,
        }
    }
}

/// Replaces each missing frame by the nearest preceding valid frame; a
/// leading gap takes the first valid frame.
pub fn substitute_missing_frames(seq: &FrameSequence) -> Result<FrameSequence> {
    let first =
        seq.frames.iter().flatten().next().ok_or_else(|| {
            Error::Data(format!("subject {}: every frame is missing", seq.subject))
        })?;
    let mut last = first;
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            if let Some(f) = f {
                last = f;
            }
            Some(last.clone())
        })
        .collect();
    Ok(FrameSequence {
        frames,
        ..seq.clone()
    })
}

/// Stacks the frames of training-partition sequences for unsupervised
/// learning. Any other partition is refused.
pub fn training_frames<T: Scalar>(seqs: &[&FrameSequence]) -> Result<Tensor<T>> {
    if let Some(s) = seqs.iter().find(|s| s.partition != Partition::Train) {
        return Err(Error::Data(format!(
            "subject {} belongs to the {} partition, not train",
            s.subject, s.partition
        )));
    }
    let parts = seqs
        .iter()
        .map(|s| s.to_tensor())
        .collect::<Result<Vec<Tensor<T>>>>()?;
    Tensor::concat(&parts.iter().collect::<Vec<_>>())
}
