use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Partition, PIXELS, SIDE};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CLASSES: usize = 7;

/// Images `[n, 48, 48, 1]` in [0, 1] with class labels `0..7`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub partition: Partition,
}

impl<T: Scalar> LabeledImageSet<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, partition: Partition) -> Result<Self> {
        let (n, h, w, c) = images.dims4()?;
        if n == 0 || n != labels.len() {
            return Err(shape_err!("{} images for {} labels", n, labels.len()));
        }
        if (h, w, c) != (SIDE, SIDE, 1) {
            return Err(shape_err!(
                "images must be {SIDE}x{SIDE}x1, got {h}x{w}x{c}"
            ));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= CLASSES) {
            return Err(Error::Data(format!("label {l} outside 0..{}", CLASSES - 1)));
        }
        if images
            .data()
            .iter()
            .any(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            partition,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One-hot label matrix `[n, 7]`.
    pub fn one_hot(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(&[self.len(), CLASSES]);
        for (i, &l) in self.labels.iter().enumerate() {
            t.data_mut()[i * CLASSES + l] = T::one();
        }
        t
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Parse(format!("missing `{name}` column")))
}

/// Parses `emotion,pixels,usage` rows into one set per partition, in
/// partition order.
pub fn parse_fer_csv<T: Scalar>(text: &str) -> Result<Vec<LabeledImageSet<T>>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let (ce, cp, cu) = (
        column(&headers, "emotion")?,
        column(&headers, "pixels")?,
        column(&headers, "usage")?,
    );
    let mut parts: BTreeMap<Partition, (Vec<T>, Vec<usize>)> = BTreeMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let k = r + 1;
        let rec = rec.map_err(|e| Error::Parse(format!("row {k}: {e}")))?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let label: usize = field(ce)
            .parse()
            .map_err(|_| Error::Parse(format!("row {k}: bad emotion `{}`", field(ce))))?;
        if label >= CLASSES {
            return Err(Error::Parse(format!(
                "row {k}: emotion {label} outside 0..{}",
                CLASSES - 1
            )));
        }
        let pixels: Vec<&str> = field(cp).split_ascii_whitespace().collect();
        if pixels.len() != PIXELS {
            return Err(Error::Parse(format!(
                "row {k}: expected {PIXELS} values, got {}",
                pixels.len()
            )));
        }
        let partition: Partition = field(cu)
            .parse()
            .map_err(|_| Error::Parse(format!("row {k}: unknown usage `{}`", field(cu))))?;
        let entry = parts.entry(partition).or_default();
        for p in pixels {
            let v: u8 = p
                .parse()
                .map_err(|_| Error::Parse(format!("row {k}: bad pixel `{p}`")))?;
            entry.0.push(T::lit(v as f64 / 255.0));
        }
        entry.1.push(label);
    }
    if parts.is_empty() {
        return Err(Error::Data("FER file has no rows".into()));
    }
    let mut sets = Vec::new();
    for (partition, (data, labels)) in parts {
        let images = Tensor::new(vec![labels.len(), SIDE, SIDE, 1], data)?;
        log::info!("FER {partition}: {} images", labels.len());
        sets.push(LabeledImageSet::new(images, labels, partition)?);
    }
    Ok(sets)
}

pub fn load_fer_csv<T: Scalar>(path: &Path) -> Result<Vec<LabeledImageSet<T>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fer_csv(&text)
}

/// Writes sets back as `emotion,pixels,Usage` with pixels rounded to 8 bits.
pub fn export_fer_csv<T: Scalar>(path: &Path, sets: &[LabeledImageSet<T>]) -> Result<()> {
    let mut out = String::from("emotion,pixels,Usage\n");
    for set in sets {
        let usage = match set.partition {
            Partition::Train => "Training",
            Partition::Val => "PublicTest",
            Partition::Test => "PrivateTest",
        };
        for (i, &label) in set.labels.iter().enumerate() {
            let px: Vec<String> = set
                .images
                .row(i)
                .iter()
                .map(|v| ((v.as_f64() * 255.0).round() as u8).to_string())
                .collect();
            out.push_str(&format!("{label},{},{usage}\n", px.join(" ")));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
