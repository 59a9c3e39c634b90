use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{conv_output_dim, Activation, ConvGeometry};

/// One backbone layer in the compact text form used by configs and
/// checkpoints: `conv:OUT:K:STRIDE:PAD`, `dense:N`, `bn`, `flatten`, `center`
/// or an activation name. `center` maps pixels from `[0, 1]` to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out: usize, kernel: usize, geom: ConvGeometry },
    Dense { out: usize },
    BatchNorm,
    Act(Activation),
    Flatten,
    Center,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out, kernel, geom } => {
                write!(f, "conv:{out}:{kernel}:{}:{}", geom.stride, geom.padding)
            }
            LayerSpec::Dense { out } => write!(f, "dense:{out}"),
            LayerSpec::BatchNorm => f.write_str("bn"),
            LayerSpec::Act(a) => write!(f, "{a}"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Center => f.write_str("center"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .filter(|&v: &usize| v > 0 || i == 4)
                .ok_or_else(|| Error::Config(format!("bad layer spec `{s}`")))
        };
        match parts[0] {
            "conv" if parts.len() == 5 => Ok(LayerSpec::Conv {
                out: num(1)?,
                kernel: num(2)?,
                geom: ConvGeometry { stride: num(3)?, padding: num(4)? },
            }),
            "dense" if parts.len() == 2 => Ok(LayerSpec::Dense { out: num(1)? }),
            "bn" if parts.len() == 1 => Ok(LayerSpec::BatchNorm),
            "flatten" if parts.len() == 1 => Ok(LayerSpec::Flatten),
            "center" if parts.len() == 1 => Ok(LayerSpec::Center),
            name if parts.len() == 1 => name.parse().map(LayerSpec::Act),
            _ => Err(Error::Config(format!("bad layer spec `{s}`"))),
        }
    }
}

/// Backbone architecture: per-sample input shape `[C, H, W]` plus layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl BackboneSpec {
    /// conv(1→8, 5×5) → sigmoid → conv(8→16, 5×5) → sigmoid → flatten →
    /// dense → BN, producing a 32-d embedding from 28×28 digits.
    pub fn mnist_attack() -> Self {
        "1x28x28 conv:8:5:2:2,sigmoid,conv:16:5:2:2,sigmoid,flatten,dense:32,bn"
            .parse()
            .expect("valid builtin spec")
    }

    /// Pixels mapped to [-1, 1], then a dense stack with one batch norm, for
    /// 16×16 synthetic identities.
    pub fn synthetic_default() -> Self {
        "1x16x16 center,flatten,dense:64,bn,tanh,dense:32"
            .parse()
            .expect("valid builtin spec")
    }

    pub fn arch_string(&self) -> String {
        self.layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
    }

    pub fn input_string(&self) -> String {
        format!("{}x{}x{}", self.input[0], self.input[1], self.input[2])
    }

    pub fn from_parts(input: &str, arch: &str) -> Result<Self> {
        let dims: Vec<usize> = input
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad input shape `{input}`, expected CxHxW")))?;
        let input: [usize; 3] = dims
            .try_into()
            .map_err(|_| Error::Config(format!("bad input shape `{input}`, expected CxHxW")))?;
        if input.contains(&0) {
            return Err(Error::Config(format!("input shape {input:?} has a zero extent")));
        }
        let layers = arch
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<LayerSpec>>>()?;
        let spec = BackboneSpec { input, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Per-sample activation shape after every layer; validates the stack.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut cur = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv { out, kernel, geom } => {
                    if cur.len() != 3 {
                        return Err(Error::Config(format!("layer {i}: conv needs a CxHxW input, got {cur:?}")));
                    }
                    let oh = conv_output_dim(cur[1], kernel, geom);
                    let ow = conv_output_dim(cur[2], kernel, geom);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => vec![out, oh, ow],
                        _ => return Err(Error::Config(format!("layer {i}: kernel {kernel} does not fit {cur:?}"))),
                    }
                }
                LayerSpec::Dense { out } => {
                    if cur.len() != 1 {
                        return Err(Error::Config(format!("layer {i}: dense needs a flat input, got {cur:?}")));
                    }
                    vec![out]
                }
                LayerSpec::BatchNorm => {
                    if cur.len() != 1 {
                        return Err(Error::Config(format!("layer {i}: bn needs a flat input, got {cur:?}")));
                    }
                    cur
                }
                LayerSpec::Act(_) | LayerSpec::Center => cur,
                LayerSpec::Flatten => vec![cur.iter().product()],
            };
            out.push(cur.clone());
        }
        if cur.len() != 1 {
            return Err(Error::Config(format!("backbone must end in a flat embedding, got {cur:?}")));
        }
        Ok(out)
    }

    pub fn embedding_dim(&self) -> usize {
        self.shapes().ok().and_then(|s| s.last().map(|l| l[0])).unwrap_or(self.input.iter().product())
    }
}

impl fmt::Display for BackboneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.input_string(), self.arch_string())
    }
}

impl FromStr for BackboneSpec {
    type Err = Error;

    /// `"CxHxW layer,layer,..."`
    fn from_str(s: &str) -> Result<Self> {
        let (input, arch) = s
            .trim()
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::Config(format!("bad backbone spec `{s}`")))?;
        BackboneSpec::from_parts(input, arch.trim())
    }
}
