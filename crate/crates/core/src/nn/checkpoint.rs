use std::path::Path;

use super::spec::{LayerKind, NetworkSpec};
use super::weights::{LayerParams, ModelWeights};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NETWORK_TAG: &[u8; 4] = b"NETW";
const BUFFER_NAMES: [&str; 2] = ["running_mean", "running_var"];

pub fn to_container<T: Scalar>(spec: &NetworkSpec, weights: &ModelWeights<T>) -> Container {
    let mut c = Container::new(NETWORK_TAG, spec.to_text());
    for (i, layer) in spec.layers().iter().enumerate() {
        let lp = weights.layer(i);
        for (name, p) in spec.param_names(i).iter().zip(&lp.params) {
            c.push(
                format!("{}/{}", layer.name, name),
                p.shape(),
                p.data().iter().map(|v| v.as_f64()).collect(),
            );
        }
        for (name, b) in BUFFER_NAMES.iter().zip(&lp.buffers) {
            c.push(
                format!("{}/{}", layer.name, name),
                b.shape(),
                b.data().iter().map(|v| v.as_f64()).collect(),
            );
        }
    }
    c
}

pub fn from_container<T: Scalar>(c: &Container) -> Result<(NetworkSpec, ModelWeights<T>)> {
    let spec: NetworkSpec = c.text.parse()?;
    let tensor = |name: String| -> Result<Tensor<T>> {
        let b = c.blob(&name)?;
        Tensor::new(b.shape.clone(), b.data.iter().map(|&v| T::lit(v)).collect())
            .map_err(|e| Error::Checkpoint(format!("blob `{name}`: {e}")))
    };
    let mut layers = Vec::with_capacity(spec.layers().len());
    for (i, layer) in spec.layers().iter().enumerate() {
        let params = spec
            .param_names(i)
            .iter()
            .map(|n| tensor(format!("{}/{}", layer.name, n)))
            .collect::<Result<Vec<_>>>()?;
        let buffers = if matches!(layer.kind, LayerKind::BatchNorm { .. }) {
            BUFFER_NAMES
                .iter()
                .map(|n| tensor(format!("{}/{}", layer.name, n)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        layers.push(LayerParams {
            params,
            buffers,
            frozen: false,
        });
    }
    let expected: usize = layers
        .iter()
        .map(|l| l.params.len() + l.buffers.len())
        .sum();
    if expected != c.blobs.len() {
        return Err(Error::Checkpoint(format!(
            "{} blobs, expected {}",
            c.blobs.len(),
            expected
        )));
    }
    let weights = ModelWeights::from_layers(layers);
    weights
        .validate(&spec)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((spec, weights))
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
) -> Result<()> {
    to_container(spec, weights).write(path)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(NetworkSpec, ModelWeights<T>)> {
    from_container(&Container::read(path, NETWORK_TAG)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::LayerSpec;
    use crate::tensor::Activation;

    fn spec() -> NetworkSpec {
        NetworkSpec::new(
            [2, 2, 1],
            vec![
                LayerSpec::new(
                    "c",
                    LayerKind::Conv2d {
                        filters: 2,
                        kernel: (2, 2),
                        activation: Activation::Relu,
                    },
                ),
                LayerSpec::new(
                    "bn",
                    LayerKind::BatchNorm {
                        momentum: 0.9,
                        epsilon: 1e-3,
                    },
                ),
                LayerSpec::new("f", LayerKind::Flatten),
                LayerSpec::new(
                    "d",
                    LayerKind::Dense {
                        units: 3,
                        activation: Activation::Softmax,
                    },
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let s = spec();
        let w = ModelWeights::<f64>::init(&s, 11);
        let c = to_container(&s, &w);
        let (s2, w2) =
            from_container::<f64>(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(s2, s);
        assert_eq!(w2.layers(), w.layers());
        assert!(c.blob("bn/running_var").is_ok());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = spec();
        let mut c = to_container(&s, &ModelWeights::<f64>::init(&s, 0));
        c.blobs[0].shape = vec![2, 2, 1, 1];
        c.blobs[0].data.truncate(4);
        assert!(from_container::<f64>(&c).is_err());
    }

    #[test]
    fn missing_blob_rejected() {
        let s = spec();
        let mut c = to_container(&s, &ModelWeights::<f64>::init(&s, 0));
        c.blobs.pop();
        assert!(from_container::<f64>(&c).is_err());
    }
}
