use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Encoder activations, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures<T> {
    /// Frame timestamps in seconds.
    pub timestamps: Vec<f64>,
    /// `[frames, d]`.
    pub features: Tensor<T>,
}

impl<T: Scalar> EncodedFeatures<T> {
    pub fn new(timestamps: Vec<f64>, features: Tensor<T>) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if n != timestamps.len() {
            return Err(shape_err!(
                "{} feature rows for {} timestamps",
                n,
                timestamps.len()
            ));
        }
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoded features"));
        }
        Ok(Self {
            timestamps,
            features,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.row_len()
    }

    /// CSV `timestamp,f0..f{d-1}`; features with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from("timestamp");
        for j in 0..d {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for (i, t) in self.timestamps.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in self.features.row(i) {
                out.push_str(&format!(",{:.8e}", v.as_f64()));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .clone();
        if headers.get(0) != Some("timestamp") {
            return Err(Error::Parse(
                "feature CSV must start with a timestamp column".into(),
            ));
        }
        let d = headers.len() - 1;
        let mut timestamps = Vec::new();
        let mut data = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("row {}: {e}", r + 1)))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: bad number `{s}`", r + 1)))
            };
            timestamps.push(num(&rec[0])?);
            for s in rec.iter().skip(1) {
                data.push(T::lit(num(s)?));
            }
        }
        let features = Tensor::new(vec![timestamps.len(), d], data)?;
        Self::new(timestamps, features)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
