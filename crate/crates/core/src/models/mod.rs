//! The pre-training CNN, the convolutional autoencoder, weight transfer,
//! freezing and encoder feature extraction.

mod features;

pub use features::EncodedFeatures;

use crate::error::{param_err, Error, Result};
use crate::nn::{predict_to, LayerKind, LayerSpec, ModelWeights, NetworkSpec};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Tensor};

/// Layers shared by both networks, in transfer order.
pub const SHARED_LAYERS: [&str; 5] = ["conv1", "bn1", "conv2", "bn2", "conv3"];
/// Conv layers counted by [`set_frozen`], each with the batch norm of its block.
const FREEZE_GROUPS: [&[&str]; 3] = [&["conv1", "bn1"], &["conv2", "bn2"], &["conv3"]];
pub const ENCODER_LAYER: &str = "encoder";

/// Widths and hyperparameters of both architectures. The default is the
/// full-size network on 48x48 grayscale input.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// Square input side; must be divisible by 4.
    pub input_size: usize,
    pub channels: usize,
    pub conv_widths: [usize; 3],
    pub decoder_widths: [usize; 3],
    /// Hidden dense layers of the CNN head.
    pub dense_units: [usize; 3],
    pub classes: usize,
    pub cnn_dropout: f64,
    pub cae_dropout: f64,
    /// Literal max-pool + upsample pair after the first decoder conv.
    pub decoder_pool: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_size: 48,
            channels: 1,
            conv_widths: [64, 64, 128],
            decoder_widths: [128, 64, 64],
            dense_units: [100, 50, 10],
            classes: 7,
            cnn_dropout: 0.5,
            cae_dropout: 0.25,
            decoder_pool: true,
            bn_momentum: 0.99,
            bn_epsilon: 1e-5,
        }
    }
}

impl ArchConfig {
    /// Same layout with every conv `width` kernels wide.
    pub fn reduced(input_size: usize, width: usize) -> Self {
        Self {
            input_size,
            conv_widths: [width; 3],
            decoder_widths: [width; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 4 != 0 {
            return Err(param_err!(
                "input size must be a positive multiple of 4, got {}",
                self.input_size
            ));
        }
        if self.decoder_pool && self.input_size % 8 != 0 {
            return Err(param_err!(
                "decoder pooling needs an input size divisible by 8, got {}",
                self.input_size
            ));
        }
        if self.channels == 0 || self.classes == 0 {
            return Err(param_err!("channels and classes must be positive"));
        }
        Ok(())
    }

    fn conv(&self, name: &str, filters: usize, k: usize, activation: Activation) -> LayerSpec {
        LayerSpec::new(
            name,
            LayerKind::Conv2d {
                filters,
                kernel: (k, k),
                activation,
            },
        )
    }

    fn bn(&self, name: &str) -> LayerSpec {
        LayerSpec::new(
            name,
            LayerKind::BatchNorm {
                momentum: self.bn_momentum,
                epsilon: self.bn_epsilon,
            },
        )
    }

    fn input(&self) -> [usize; 3] {
        [self.input_size, self.input_size, self.channels]
    }
}

fn pool(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::MaxPool2)
}

fn up(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Upsample2)
}

fn drop(name: &str, rate: f64) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Dropout { rate })
}

fn fc(name: &str, units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Dense { units, activation })
}

pub fn pretrain_cnn_spec(arch: &ArchConfig) -> Result<NetworkSpec> {
    arch.validate()?;
    let [w1, w2, w3] = arch.conv_widths;
    let [h1, h2, h3] = arch.dense_units;
    NetworkSpec::new(
        arch.input(),
        vec![
            arch.conv("conv1", w1, 3, Activation::Relu),
            arch.bn("bn1"),
            arch.conv("conv2", w2, 3, Activation::Tanh),
            pool("pool1"),
            arch.bn("bn2"),
            arch.conv("conv3", w3, 2, Activation::Relu),
            pool("pool2"),
            LayerSpec::new("flatten", LayerKind::Flatten),
            fc("fc1", h1, Activation::Tanh),
            drop("dropout", arch.cnn_dropout),
            fc("fc2", h2, Activation::Relu),
            fc("fc3", h3, Activation::Tanh),
            fc("fc4", arch.classes, Activation::Softmax),
        ],
    )
}

pub fn build_pretrain_cnn<T: Scalar>(
    arch: &ArchConfig,
    seed: u64,
) -> Result<(NetworkSpec, ModelWeights<T>)> {
    let spec = pretrain_cnn_spec(arch)?;
    let w = ModelWeights::init(&spec, seed);
    Ok((spec, w))
}

pub fn cae_spec(arch: &ArchConfig, encoder_size: usize) -> Result<NetworkSpec> {
    arch.validate()?;
    if encoder_size == 0 {
        return Err(param_err!("encoder size must be at least 1"));
    }
    let [w1, w2, w3] = arch.conv_widths;
    let [d1, d2, d3] = arch.decoder_widths;
    let p = arch.cae_dropout;
    let side = arch.input_size / 4;
    let mut layers = vec![
        arch.conv("conv1", w1, 3, Activation::Relu),
        arch.bn("bn1"),
        drop("drop1", p),
        arch.conv("conv2", w2, 3, Activation::Tanh),
        pool("pool1"),
        arch.bn("bn2"),
        drop("drop2", p),
        arch.conv("conv3", w3, 2, Activation::Relu),
        pool("pool2"),
        drop("drop3", p),
        LayerSpec::new("flatten", LayerKind::Flatten),
        fc(ENCODER_LAYER, encoder_size, Activation::Tanh),
        drop("drop4", p),
        fc("bridge", side * side * w3, Activation::Relu),
        LayerSpec::new(
            "reshape",
            LayerKind::Reshape {
                shape: [side, side, w3],
            },
        ),
        arch.conv("dconv1", d1, 2, Activation::Relu),
    ];
    if arch.decoder_pool {
        layers.push(pool("dpool"));
        layers.push(up("dup"));
    }
    layers.extend([
        up("up1"),
        arch.conv("dconv2", d2, 3, Activation::Tanh),
        up("up2"),
        arch.conv("dconv3", d3, 3, Activation::Relu),
        arch.conv("head", arch.channels, 3, Activation::Linear),
    ]);
    NetworkSpec::new(arch.input(), layers)
}

pub fn build_cae<T: Scalar>(
    arch: &ArchConfig,
    encoder_size: usize,
    seed: u64,
) -> Result<(NetworkSpec, ModelWeights<T>)> {
    let spec = cae_spec(arch, encoder_size)?;
    let w = ModelWeights::init(&spec, seed);
    Ok((spec, w))
}

/// Copies the shared conv/batch-norm layers (parameters and running
/// statistics) from `source` into a copy of `target`.
pub fn transfer_weights<T: Scalar>(
    source_spec: &NetworkSpec,
    source: &ModelWeights<T>,
    target_spec: &NetworkSpec,
    target: &ModelWeights<T>,
) -> Result<ModelWeights<T>> {
    let mut out = target.clone();
    for name in SHARED_LAYERS {
        let missing =
            |which: &str| Error::Transfer(format!("layer {name} missing from {which} network"));
        let si = source_spec
            .index_of(name)
            .ok_or_else(|| missing("source"))?;
        let ti = target_spec
            .index_of(name)
            .ok_or_else(|| missing("target"))?;
        let (s, t) = (source.layer(si), target.layer(ti));
        let same_kind = std::mem::discriminant(&source_spec.layers()[si].kind)
            == std::mem::discriminant(&target_spec.layers()[ti].kind);
        let shapes_match = s.params.len() == t.params.len()
            && s.params
                .iter()
                .zip(&t.params)
                .all(|(a, b)| a.shape() == b.shape())
            && s.buffers.len() == t.buffers.len();
        if !same_kind || !shapes_match {
            return Err(Error::Transfer(format!("layer {name} shape mismatch")));
        }
        let dst = out.layer_mut(ti);
        dst.params = s.params.clone();
        dst.buffers = s.buffers.clone();
    }
    Ok(out)
}

/// Freezes the first `n` encoder conv layers counted from the input (each
/// with its block's batch norm) and unfreezes everything else.
pub fn set_frozen<T: Scalar>(
    spec: &NetworkSpec,
    weights: &mut ModelWeights<T>,
    n: usize,
) -> Result<()> {
    if n > FREEZE_GROUPS.len() {
        return Err(param_err!("frozen conv count must be in 0..=3, got {n}"));
    }
    for i in 0..spec.layers().len() {
        weights.set_frozen(i, false);
    }
    for name in FREEZE_GROUPS[..n].iter().flat_map(|g| g.iter()) {
        let i = spec
            .index_of(name)
            .ok_or_else(|| param_err!("network has no layer {name}"))?;
        weights.set_frozen(i, true);
    }
    Ok(())
}

/// Eval-mode encoder activations for `frames` (`[n, h, w, c]`).
pub fn encode<T: Scalar>(
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
    frames: &Tensor<T>,
) -> Result<Tensor<T>> {
    let stop = spec
        .index_of(ENCODER_LAYER)
        .ok_or_else(|| param_err!("network has no encoder layer"))?;
    predict_to(spec, weights, frames, stop)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn_matches_reference_layout() {
        let spec = pretrain_cnn_spec(&ArchConfig::default()).unwrap();
        let convs = spec
            .layers()
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv2d { .. }))
            .count();
        let fcs = spec
            .layers()
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Dense { .. }))
            .count();
        assert_eq!((convs, fcs), (3, 4));
        assert_eq!(spec.output_shape(), &[7]);
        assert_eq!(
            spec.output_shape_of(spec.index_of("pool2").unwrap()),
            &[12, 12, 128]
        );
        // conv 640 + 36928 + 32896, bn 128 + 128, fc 1843300 + 5050 + 510 + 77
        assert_eq!(spec.param_count(), 1_919_657);
    }

    #[test]
    fn cae_shapes() {
        let spec = cae_spec(&ArchConfig::default(), 900).unwrap();
        assert_eq!(spec.output_shape(), &[48, 48, 1]);
        assert_eq!(
            spec.output_shape_of(spec.index_of(ENCODER_LAYER).unwrap()),
            &[900]
        );
        let no_pool = ArchConfig {
            decoder_pool: false,
            ..ArchConfig::default()
        };
        assert_eq!(cae_spec(&no_pool, 1).unwrap().output_shape(), &[48, 48, 1]);
        assert!(cae_spec(&ArchConfig::default(), 0).is_err());
    }

    #[test]
    fn shared_layers_compatible() {
        let arch = ArchConfig::reduced(8, 4);
        let (cs, cw) = build_pretrain_cnn::<f64>(&arch, 1).unwrap();
        let (ae, aw) = build_cae::<f64>(&arch, 5, 2).unwrap();
        let t = transfer_weights(&cs, &cw, &ae, &aw).unwrap();
        for name in SHARED_LAYERS {
            assert_eq!(
                t.layer(ae.index_of(name).unwrap()),
                cw.layer(cs.index_of(name).unwrap())
            );
        }
        let e = ae.index_of(ENCODER_LAYER).unwrap();
        assert_eq!(t.layer(e), aw.layer(e));
        assert_eq!(
            transfer_weights(&cs, &cw, &ae, &t).unwrap().layers(),
            t.layers()
        );
    }

    #[test]
    fn transfer_names_mismatched_layer() {
        let (cs, cw) = build_pretrain_cnn::<f64>(
            &ArchConfig {
                conv_widths: [32, 64, 128],
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let (ae, aw) = build_cae::<f64>(&ArchConfig::default(), 4, 2).unwrap();
        let err = transfer_weights(&cs, &cw, &ae, &aw).unwrap_err();
        assert_eq!(err.to_string(), "layer conv1 shape mismatch");
    }

    #[test]
    fn freeze_counts() {
        let (spec, mut w) = build_cae::<f64>(&ArchConfig::reduced(8, 2), 3, 0).unwrap();
        set_frozen(&spec, &mut w, 0).unwrap();
        assert!(w.frozen_flags().iter().all(|f| !f));
        set_frozen(&spec, &mut w, 2).unwrap();
        let frozen: Vec<&str> = spec
            .layers()
            .iter()
            .zip(w.frozen_flags())
            .filter(|(_, f)| *f)
            .map(|(l, _)| l.name.as_str())
            .collect();
        assert_eq!(frozen, ["conv1", "bn1", "conv2", "bn2"]);
        assert!(set_frozen(&spec, &mut w, 4).is_err());
    }
}
