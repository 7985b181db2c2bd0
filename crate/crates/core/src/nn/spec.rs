use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{param_err, shape_err, Error, Result};
use crate::tensor::Activation;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// Stride-1 `same`-padded convolution followed by an activation.
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        activation: Activation,
    },
    BatchNorm {
        momentum: f64,
        epsilon: f64,
    },
    MaxPool2,
    Upsample2,
    Flatten,
    Reshape {
        shape: [usize; 3],
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d { .. } | LayerKind::Dense { .. } | LayerKind::BatchNorm { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Ordered layer stack with its input shape. Construction validates that
/// consecutive shapes compose; the last layer is the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input: [usize; 3],
    layers: Vec<LayerSpec>,
    /// Per-sample output shape of every layer.
    shapes: Vec<Vec<usize>>,
}

impl NetworkSpec {
    /// `input` is `[height, width, channels]`.
    pub fn new(input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(param_err!("network needs at least one layer"));
        }
        if input.contains(&0) {
            return Err(shape_err!("zero extent in input shape {:?}", input));
        }
        let mut names = HashSet::new();
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input.to_vec();
        for layer in &layers {
            if layer.name.is_empty()
                || layer.name.contains(char::is_whitespace)
                || layer.name.contains('/')
            {
                return Err(param_err!("invalid layer name `{}`", layer.name));
            }
            if !names.insert(layer.name.as_str()) {
                return Err(param_err!("duplicate layer name `{}`", layer.name));
            }
            cur = next_shape(&layer.name, &layer.kind, &cur)?;
            shapes.push(cur.clone());
        }
        Ok(Self {
            input,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Per-sample output shape of layer `i`.
    pub fn output_shape_of(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty network")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Per-sample input shape of layer `i`.
    pub fn input_shape_of(&self, i: usize) -> Vec<usize> {
        if i == 0 {
            self.input.to_vec()
        } else {
            self.shapes[i - 1].clone()
        }
    }

    /// Shapes of the trainable tensors of layer `i`, in storage order.
    pub fn param_shapes(&self, i: usize) -> Vec<Vec<usize>> {
        let input = self.input_shape_of(i);
        match &self.layers[i].kind {
            LayerKind::Conv2d {
                filters, kernel, ..
            } => {
                let cin = input[2];
                vec![vec![kernel.0, kernel.1, cin, *filters], vec![*filters]]
            }
            LayerKind::Dense { units, .. } => vec![vec![input[0], *units], vec![*units]],
            LayerKind::BatchNorm { .. } => {
                let c = *input.last().expect("non-empty shape");
                vec![vec![c], vec![c]]
            }
            _ => Vec::new(),
        }
    }

    /// Names of the trainable tensors of layer `i`, matching [`Self::param_shapes`].
    pub fn param_names(&self, i: usize) -> &'static [&'static str] {
        match &self.layers[i].kind {
            LayerKind::Conv2d { .. } => &["kernels", "bias"],
            LayerKind::Dense { .. } => &["weights", "bias"],
            LayerKind::BatchNorm { .. } => &["gamma", "beta"],
            _ => &[],
        }
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers.len())
            .flat_map(|i| self.param_shapes(i))
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Canonical text form; parsed back by [`FromStr`].
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

fn next_shape(name: &str, kind: &LayerKind, cur: &[usize]) -> Result<Vec<usize>> {
    let spatial = |what: &str| -> Result<[usize; 3]> {
        match *cur {
            [h, w, c] => Ok([h, w, c]),
            _ => Err(shape_err!(
                "layer {name}: {what} needs a HxWxC input, got {:?}",
                cur
            )),
        }
    };
    Ok(match kind {
        LayerKind::Conv2d {
            filters, kernel, ..
        } => {
            let [h, w, _] = spatial("conv2d")?;
            if *filters == 0 || kernel.0 == 0 || kernel.1 == 0 {
                return Err(param_err!("layer {name}: zero filters or kernel size"));
            }
            vec![h, w, *filters]
        }
        LayerKind::BatchNorm { momentum, epsilon } => {
            if !(0.0..=1.0).contains(momentum) || *epsilon <= 0.0 {
                return Err(param_err!(
                    "layer {name}: invalid batchnorm momentum/epsilon"
                ));
            }
            cur.to_vec()
        }
        LayerKind::MaxPool2 => {
            let [h, w, c] = spatial("maxpool")?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(shape_err!(
                    "layer {name}: maxpool needs even dims, got {h}x{w}"
                ));
            }
            vec![h / 2, w / 2, c]
        }
        LayerKind::Upsample2 => {
            let [h, w, c] = spatial("upsample")?;
            vec![2 * h, 2 * w, c]
        }
        LayerKind::Flatten => vec![cur.iter().product()],
        LayerKind::Reshape { shape } => {
            let n: usize = cur.iter().product();
            if shape.iter().product::<usize>() != n {
                return Err(shape_err!(
                    "layer {name}: cannot reshape {:?} into {:?}",
                    cur,
                    shape
                ));
            }
            shape.to_vec()
        }
        LayerKind::Dense { units, .. } => {
            if cur.len() != 1 {
                return Err(shape_err!(
                    "layer {name}: dense needs a flat input, got {:?}",
                    cur
                ));
            }
            if *units == 0 {
                return Err(param_err!("layer {name}: zero units"));
            }
            vec![*units]
        }
        LayerKind::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return Err(param_err!(
                    "layer {name}: dropout rate {rate} outside [0, 1)"
                ));
            }
            cur.to_vec()
        }
    })
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [h, w, c] = self.input;
        writeln!(f, "network v1")?;
        writeln!(f, "input {h} {w} {c}")?;
        for l in &self.layers {
            let mut line = String::new();
            match &l.kind {
                LayerKind::Conv2d {
                    filters,
                    kernel,
                    activation,
                } => write!(
                    line,
                    "conv2d {} filters={} kernel={}x{} activation={}",
                    l.name, filters, kernel.0, kernel.1, activation
                )?,
                LayerKind::BatchNorm { momentum, epsilon } => write!(
                    line,
                    "batchnorm {} momentum={} epsilon={}",
                    l.name, momentum, epsilon
                )?,
                LayerKind::MaxPool2 => write!(line, "maxpool2 {}", l.name)?,
                LayerKind::Upsample2 => write!(line, "upsample2 {}", l.name)?,
                LayerKind::Flatten => write!(line, "flatten {}", l.name)?,
                LayerKind::Reshape { shape } => write!(
                    line,
                    "reshape {} shape={}x{}x{}",
                    l.name, shape[0], shape[1], shape[2]
                )?,
                LayerKind::Dense { units, activation } => write!(
                    line,
                    "dense {} units={} activation={}",
                    l.name, units, activation
                )?,
                LayerKind::Dropout { rate } => write!(line, "dropout {} rate={}", l.name, rate)?,
            }
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

fn parse_num<N: FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse()
        .map_err(|_| Error::Parse(format!("bad value `{v}` for `{key}`")))
}

fn parse_dims(v: &str) -> Result<Vec<usize>> {
    v.split('x').map(|d| parse_num("dims", d)).collect()
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("network v1") {
            return Err(Error::Parse("missing `network v1` header".into()));
        }
        let input_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing input line".into()))?;
        let dims: Vec<&str> = input_line.split_whitespace().collect();
        let input = match dims[..] {
            ["input", h, w, c] => [
                parse_num("input", h)?,
                parse_num("input", w)?,
                parse_num("input", c)?,
            ],
            _ => return Err(Error::Parse(format!("bad input line `{input_line}`"))),
        };
        let mut layers = Vec::new();
        for line in lines {
            let mut toks = line.split_whitespace();
            let kind = toks.next().unwrap_or_default();
            let name = toks
                .next()
                .ok_or_else(|| Error::Parse(format!("missing layer name in `{line}`")))?;
            let mut kv = std::collections::BTreeMap::new();
            for t in toks {
                let (k, v) = t
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("bad token `{t}`")))?;
                kv.insert(k, v);
            }
            let get = |k: &str| -> Result<&str> {
                kv.get(k)
                    .copied()
                    .ok_or_else(|| Error::Parse(format!("layer {name}: missing `{k}`")))
            };
            let kind = match kind {
                "conv2d" => {
                    let k = parse_dims(get("kernel")?)?;
                    if k.len() != 2 {
                        return Err(Error::Parse(format!("layer {name}: kernel must be HxW")));
                    }
                    LayerKind::Conv2d {
                        filters: parse_num("filters", get("filters")?)?,
                        kernel: (k[0], k[1]),
                        activation: get("activation")?.parse()?,
                    }
                }
                "batchnorm" => LayerKind::BatchNorm {
                    momentum: parse_num("momentum", get("momentum")?)?,
                    epsilon: parse_num("epsilon", get("epsilon")?)?,
                },
                "maxpool2" => LayerKind::MaxPool2,
                "upsample2" => LayerKind::Upsample2,
                "flatten" => LayerKind::Flatten,
                "reshape" => {
                    let d = parse_dims(get("shape")?)?;
                    let shape: [usize; 3] = d
                        .try_into()
                        .map_err(|_| Error::Parse(format!("layer {name}: reshape needs HxWxC")))?;
                    LayerKind::Reshape { shape }
                }
                "dense" => LayerKind::Dense {
                    units: parse_num("units", get("units")?)?,
                    activation: get("activation")?.parse()?,
                },
                "dropout" => LayerKind::Dropout {
                    rate: parse_num("rate", get("rate")?)?,
                },
                other => return Err(Error::Parse(format!("unknown layer kind `{other}`"))),
            };
            layers.push(LayerSpec::new(name, kind));
        }
        NetworkSpec::new(input, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkSpec {
        NetworkSpec::new(
            [8, 8, 1],
            vec![
                LayerSpec::new(
                    "c1",
                    LayerKind::Conv2d {
                        filters: 4,
                        kernel: (3, 3),
                        activation: Activation::Relu,
                    },
                ),
                LayerSpec::new(
                    "bn",
                    LayerKind::BatchNorm {
                        momentum: 0.99,
                        epsilon: 1e-5,
                    },
                ),
                LayerSpec::new("p", LayerKind::MaxPool2),
                LayerSpec::new("f", LayerKind::Flatten),
                LayerSpec::new("d", LayerKind::Dropout { rate: 0.25 }),
                LayerSpec::new(
                    "fc",
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
    fn shapes_compose() {
        let s = small();
        assert_eq!(s.output_shape_of(2), &[4, 4, 4]);
        assert_eq!(s.output_shape(), &[3]);
        assert_eq!(s.param_shapes(0), vec![vec![3, 3, 1, 4], vec![4]]);
        assert_eq!(s.param_shapes(5), vec![vec![64, 3], vec![3]]);
        assert_eq!(s.param_count(), 40 + 8 + 195);
    }

    #[test]
    fn text_round_trip() {
        let s = small();
        let parsed: NetworkSpec = s.to_text().parse().unwrap();
        assert_eq!(parsed, s);
        assert_eq!(parsed.to_text(), s.to_text());
    }

    #[test]
    fn rejects_bad_compositions() {
        let dense_on_image = vec![LayerSpec::new(
            "d",
            LayerKind::Dense {
                units: 2,
                activation: Activation::Linear,
            },
        )];
        assert!(NetworkSpec::new([4, 4, 1], dense_on_image).is_err());
        let odd_pool = vec![LayerSpec::new("p", LayerKind::MaxPool2)];
        assert!(NetworkSpec::new([5, 4, 1], odd_pool).is_err());
        let dup = vec![
            LayerSpec::new("a", LayerKind::Flatten),
            LayerSpec::new("a", LayerKind::Flatten),
        ];
        assert!(NetworkSpec::new([2, 2, 1], dup).is_err());
        assert!(NetworkSpec::new([2, 2, 1], vec![]).is_err());
        let reshape = vec![
            LayerSpec::new("f", LayerKind::Flatten),
            LayerSpec::new("r", LayerKind::Reshape { shape: [3, 1, 1] }),
        ];
        assert!(NetworkSpec::new([2, 2, 1], reshape).is_err());
    }

    #[test]
    fn parse_errors() {
        assert!("nope".parse::<NetworkSpec>().is_err());
        assert!("network v1\ninput 4 4 1\nwhat x\n"
            .parse::<NetworkSpec>()
            .is_err());
        assert!("network v1\ninput 4 4 1\nconv2d c filters=2\n"
            .parse::<NetworkSpec>()
            .is_err());
    }
}
