use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerKind, NetworkSpec};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameters of one layer. `params` follow [`NetworkSpec::param_names`];
/// `buffers` hold batch-norm running mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub params: Vec<Tensor<T>>,
    pub buffers: Vec<Tensor<T>>,
    pub frozen: bool,
}

impl<T: Scalar> LayerParams<T> {
    pub fn is_trainable(&self) -> bool {
        !self.frozen && !self.params.is_empty()
    }
}

/// Learned state of a network plus per-layer freeze flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    layers: Vec<LayerParams<T>>,
    /// Bumped whenever trainable parameters change; tapes record it.
    version: u64,
    /// When set, frozen batch-norm layers normalize with running statistics
    /// and never update them.
    pub freeze_bn_stats: bool,
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> ModelWeights<T> {
    /// Glorot-uniform kernels and dense weights, zero biases, unit gamma,
    /// zero beta, running mean 0 and variance 1. Each layer draws from its own
    /// seeded stream.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let layers = spec
            .layers()
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let shapes = spec.param_shapes(i);
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
                match &layer.kind {
                    LayerKind::Conv2d { .. } | LayerKind::Dense { .. } => {
                        let ws = &shapes[0];
                        let (fan_in, fan_out) = if ws.len() == 4 {
                            let rf = ws[0] * ws[1];
                            (rf * ws[2], rf * ws[3])
                        } else {
                            (ws[0], ws[1])
                        };
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let w = Tensor::from_fn(ws, |_| T::lit(rng.gen_range(-limit..limit)));
                        LayerParams {
                            params: vec![w, Tensor::zeros(&shapes[1])],
                            buffers: vec![],
                            frozen: false,
                        }
                    }
                    LayerKind::BatchNorm { .. } => {
                        let c = &shapes[0];
                        LayerParams {
                            params: vec![Tensor::full(c, T::one()), Tensor::zeros(c)],
                            buffers: vec![Tensor::zeros(c), Tensor::full(c, T::one())],
                            frozen: false,
                        }
                    }
                    _ => LayerParams {
                        params: vec![],
                        buffers: vec![],
                        frozen: false,
                    },
                }
            })
            .collect();
        Self {
            layers,
            version: 0,
            freeze_bn_stats: true,
        }
    }

    /// Checks every tensor shape against `spec`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers().len() {
            return Err(shape_err!(
                "weights have {} layers, spec has {}",
                self.layers.len(),
                spec.layers().len()
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let expected = spec.param_shapes(i);
            let name = &spec.layers()[i].name;
            if l.params.len() != expected.len() {
                return Err(shape_err!(
                    "layer {name}: {} parameter tensors, expected {}",
                    l.params.len(),
                    expected.len()
                ));
            }
            for (p, s) in l.params.iter().zip(&expected) {
                if p.shape() != &s[..] {
                    return Err(shape_err!(
                        "layer {name}: parameter shape {:?}, expected {:?}",
                        p.shape(),
                        s
                    ));
                }
            }
            let expected_buffers =
                usize::from(matches!(spec.layers()[i].kind, LayerKind::BatchNorm { .. })) * 2;
            if l.buffers.len() != expected_buffers {
                return Err(shape_err!(
                    "layer {name}: {} buffers, expected {}",
                    l.buffers.len(),
                    expected_buffers
                ));
            }
            for b in &l.buffers {
                if b.shape() != &expected[0][..] {
                    return Err(shape_err!("layer {name}: buffer shape {:?}", b.shape()));
                }
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerParams<T> {
        &self.layers[i]
    }

    /// Mutable access; bumps the version so older tapes become stale.
    pub fn layer_mut(&mut self, i: usize) -> &mut LayerParams<T> {
        self.version += 1;
        &mut self.layers[i]
    }

    /// Running statistics are not parameters, so updating them keeps the
    /// version.
    pub(crate) fn buffers_mut(&mut self, i: usize) -> &mut Vec<Tensor<T>> {
        &mut self.layers[i].buffers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn set_frozen(&mut self, i: usize, frozen: bool) {
        self.layers[i].frozen = frozen;
    }

    pub fn frozen_flags(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.frozen).collect()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !l.frozen)
            .flat_map(|l| &l.params)
            .map(Tensor::len)
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .map(Tensor::len)
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    params: l.params.iter().map(Tensor::cast).collect(),
                    buffers: l.buffers.iter().map(Tensor::cast).collect(),
                    frozen: l.frozen,
                })
                .collect(),
            version: self.version,
            freeze_bn_stats: self.freeze_bn_stats,
        }
    }

    pub(crate) fn from_layers(layers: Vec<LayerParams<T>>) -> Self {
        Self {
            layers,
            version: 0,
            freeze_bn_stats: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::LayerSpec;
    use crate::tensor::Activation;

    fn spec() -> NetworkSpec {
        NetworkSpec::new(
            [4, 4, 2],
            vec![
                LayerSpec::new(
                    "c",
                    LayerKind::Conv2d {
                        filters: 3,
                        kernel: (3, 3),
                        activation: Activation::Tanh,
                    },
                ),
                LayerSpec::new(
                    "bn",
                    LayerKind::BatchNorm {
                        momentum: 0.99,
                        epsilon: 1e-5,
                    },
                ),
                LayerSpec::new("f", LayerKind::Flatten),
                LayerSpec::new(
                    "d",
                    LayerKind::Dense {
                        units: 2,
                        activation: Activation::Linear,
                    },
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn init_is_seeded_and_valid() {
        let s = spec();
        let a = ModelWeights::<f64>::init(&s, 3);
        let b = ModelWeights::<f64>::init(&s, 3);
        let c = ModelWeights::<f64>::init(&s, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate(&s).unwrap();
        assert_eq!(a.param_count(), s.param_count());
        // glorot bound for the conv kernel: sqrt(6 / (18 + 27))
        let lim = (6.0f64 / 45.0).sqrt();
        assert!(a.layer(0).params[0].data().iter().all(|v| v.abs() < lim));
        assert_eq!(a.layer(1).params[0].data(), &[1.0; 3]);
    }

    #[test]
    fn mutation_bumps_version() {
        let mut w = ModelWeights::<f64>::init(&spec(), 0);
        let v = w.version();
        w.layer_mut(0);
        assert!(w.version() > v);
    }

    #[test]
    fn validate_catches_shape_drift() {
        let s = spec();
        let mut w = ModelWeights::<f64>::init(&s, 0);
        w.layer_mut(3).params[1] = Tensor::zeros(&[5]);
        assert!(w.validate(&s).is_err());
    }
}
