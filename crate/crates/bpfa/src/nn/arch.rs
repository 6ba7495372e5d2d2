//! The four-architecture toy model zoo. All architectures consume pixel
//! images in [0, 255] (the first layer rescales to [0, 1]) and emit an
//! unnormalized embedding vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerOp, Padding};
use crate::nn::network::SegmentedNetwork;
use crate::tensor::Tensor;

pub const PIXEL_SCALE: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchId {
    /// Shallow wide MLP.
    A,
    /// Deep narrow MLP.
    B,
    /// Small conv net.
    C,
    /// Deeper conv net with batchnorm.
    D,
}

impl ArchId {
    pub const ALL: [ArchId; 4] = [ArchId::A, ArchId::B, ArchId::C, ArchId::D];

    pub fn name(&self) -> &'static str {
        match self {
            ArchId::A => "A",
            ArchId::B => "B",
            ArchId::C => "C",
            ArchId::D => "D",
        }
    }
}

impl std::str::FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(ArchId::A),
            "B" | "b" => Ok(ArchId::B),
            "C" | "c" => Ok(ArchId::C),
            "D" | "d" => Ok(ArchId::D),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture {other:?} (expected A, B, C, or D)"
            ))),
        }
    }
}

fn xavier(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("finite init")
}

fn dense(rng: &mut ChaCha8Rng, name: &str, inp: usize, out: usize) -> Layer {
    Layer {
        name: name.into(),
        op: LayerOp::Dense {
            weight: xavier(rng, vec![out, inp], inp, out),
            bias: Tensor::zeros(vec![out]),
        },
    }
}

fn conv(rng: &mut ChaCha8Rng, name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Layer {
    let k = 3;
    Layer {
        name: name.into(),
        op: LayerOp::Conv2d {
            stride,
            padding: Padding::Same,
            weight: xavier(
                rng,
                vec![out_ch, in_ch, k, k],
                in_ch * k * k,
                out_ch * k * k,
            ),
            bias: Tensor::zeros(vec![out_ch]),
        },
    }
}

fn batchnorm(name: &str, channels: usize) -> Layer {
    Layer {
        name: name.into(),
        op: LayerOp::BatchNorm {
            gamma: Tensor::filled(vec![channels], 1.0),
            beta: Tensor::zeros(vec![channels]),
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::filled(vec![channels], 1.0),
            eps: 1e-5,
        },
    }
}

fn scale() -> Layer {
    Layer {
        name: "rescale".into(),
        op: LayerOp::Scale { factor: PIXEL_SCALE },
    }
}

/// Mean-image centering slot. Starts at zero; the trainer fills it with the
/// negated training-set mean (in rescaled units).
fn center(shape: &[usize]) -> Layer {
    Layer {
        name: "center".into(),
        op: LayerOp::Shift {
            offset: Tensor::zeros(shape.to_vec()),
        },
    }
}

fn relu(name: &str) -> Layer {
    Layer {
        name: name.into(),
        op: LayerOp::Relu,
    }
}

fn flatten() -> Layer {
    Layer {
        name: "flatten".into(),
        op: LayerOp::Flatten,
    }
}

fn avgpool(name: &str) -> Layer {
    Layer {
        name: name.into(),
        op: LayerOp::AvgPool { size: 2 },
    }
}

/// Build an untrained network of the given architecture for `input_shape`
/// (C, H, W) images, with seeded weight initialization.
pub fn build(
    arch: ArchId,
    input_shape: &[usize],
    embedding_dim: usize,
    seed: u64,
) -> Result<SegmentedNetwork> {
    let [c, h, w] = input_shape else {
        return Err(Error::InvalidArgument(format!(
            "input shape must be CxHxW, got {input_shape:?}"
        )));
    };
    let (c, h, w) = (*c, *h, *w);
    let flat = c * h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = match arch {
        ArchId::A => vec![
            scale(),
            center(input_shape),
            flatten(),
            dense(&mut rng, "fc1", flat, 96),
            batchnorm("bn1", 96),
            relu("relu1"),
            dense(&mut rng, "fc2", 96, embedding_dim),
        ],
        ArchId::B => vec![
            scale(),
            center(input_shape),
            flatten(),
            dense(&mut rng, "fc1", flat, 48),
            batchnorm("bn1", 48),
            relu("relu1"),
            dense(&mut rng, "fc2", 48, 48),
            batchnorm("bn2", 48),
            relu("relu2"),
            dense(&mut rng, "fc3", 48, embedding_dim),
        ],
        ArchId::C => vec![
            scale(),
            center(input_shape),
            conv(&mut rng, "conv1", c, 6, 1),
            batchnorm("bn1", 6),
            relu("relu1"),
            avgpool("pool1"),
            flatten(),
            dense(&mut rng, "fc1", 6 * (h / 2) * (w / 2), 128),
            relu("relu2"),
            dense(&mut rng, "fc2", 128, embedding_dim),
        ],
        ArchId::D => vec![
            scale(),
            center(input_shape),
            conv(&mut rng, "conv1", c, 4, 1),
            batchnorm("bn1", 4),
            relu("relu1"),
            avgpool("pool1"),
            conv(&mut rng, "conv2", 4, 8, 1),
            batchnorm("bn2", 8),
            relu("relu2"),
            avgpool("pool2"),
            flatten(),
            dense(&mut rng, "fc1", 8 * (h / 4) * (w / 4), 256),
            relu("relu3"),
            dense(&mut rng, "fc2", 256, embedding_dim),
        ],
    };
    SegmentedNetwork::new(layers, input_shape.to_vec())
}
