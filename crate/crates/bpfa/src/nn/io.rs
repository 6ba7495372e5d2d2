//! Model persistence and feature-perturbation export.
//!
//! Models are stored as a versioned container: magic + version byte, a JSON
//! layer manifest, then the raw little-endian f64 weight blob in manifest
//! order. Round-trips are bitwise lossless; a manifest that disagrees with
//! the blob length is rejected at load time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerOp, Padding};
use crate::nn::network::{GradientBank, SegmentedNetwork};
use crate::tensor::Tensor;

const MODEL_MAGIC: &[u8; 8] = b"BPFANET\x01";

#[derive(Serialize, Deserialize)]
struct StoredLayer {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    size: Option<usize>,
    tensor_shapes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    input_shape: Vec<usize>,
    layers: Vec<StoredLayer>,
}

/// All stored tensors of a layer (trainable parameters plus frozen
/// batchnorm statistics), in a fixed order.
fn layer_tensors(layer: &Layer) -> Vec<&Tensor> {
    match &layer.op {
        LayerOp::Conv2d { weight, bias, .. } | LayerOp::Dense { weight, bias } => {
            vec![weight, bias]
        }
        LayerOp::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            ..
        } => vec![gamma, beta, mean, var],
        LayerOp::Shift { offset } => vec![offset],
        _ => vec![],
    }
}

fn describe_layer(layer: &Layer) -> StoredLayer {
    let mut stored = StoredLayer {
        name: layer.name.clone(),
        kind: layer.kind_name().to_string(),
        stride: None,
        padding: None,
        eps: None,
        factor: None,
        size: None,
        tensor_shapes: layer_tensors(layer)
            .iter()
            .map(|t| t.shape().to_vec())
            .collect(),
    };
    match &layer.op {
        LayerOp::Conv2d { stride, padding, .. } => {
            stored.stride = Some(*stride);
            stored.padding = Some(
                match padding {
                    Padding::Same => "same",
                    Padding::Valid => "valid",
                }
                .to_string(),
            );
        }
        LayerOp::BatchNorm { eps, .. } => stored.eps = Some(*eps),
        LayerOp::Scale { factor } => stored.factor = Some(*factor),
        LayerOp::AvgPool { size } => stored.size = Some(*size),
        _ => {}
    }
    stored
}

fn rebuild_layer(stored: &StoredLayer, mut tensors: Vec<Tensor>) -> Result<Layer> {
    let missing = |what: &str| {
        Error::ModelFormat(format!(
            "layer {}: manifest missing {what} for kind {}",
            stored.name, stored.kind
        ))
    };
    let mut take2 = || -> Result<(Tensor, Tensor)> {
        if tensors.len() != 2 {
            return Err(Error::ModelFormat(format!(
                "layer {}: expected 2 tensors, manifest lists {}",
                stored.name,
                tensors.len()
            )));
        }
        let b = tensors.pop().unwrap();
        let a = tensors.pop().unwrap();
        Ok((a, b))
    };
    let op = match stored.kind.as_str() {
        "scale" => LayerOp::Scale {
            factor: stored.factor.ok_or_else(|| missing("factor"))?,
        },
        "relu" => LayerOp::Relu,
        "shift" => {
            if tensors.len() != 1 {
                return Err(Error::ModelFormat(format!(
                    "layer {}: shift expects 1 tensor, manifest lists {}",
                    stored.name,
                    tensors.len()
                )));
            }
            LayerOp::Shift {
                offset: tensors.pop().unwrap(),
            }
        }
        "flatten" => LayerOp::Flatten,
        "avgpool" => LayerOp::AvgPool {
            size: stored.size.ok_or_else(|| missing("size"))?,
        },
        "dense" => {
            let (weight, bias) = take2()?;
            LayerOp::Dense { weight, bias }
        }
        "conv2d" => {
            let (weight, bias) = take2()?;
            let padding = match stored.padding.as_deref() {
                Some("same") => Padding::Same,
                Some("valid") => Padding::Valid,
                other => {
                    return Err(Error::ModelFormat(format!(
                        "layer {}: bad padding {other:?}",
                        stored.name
                    )))
                }
            };
            LayerOp::Conv2d {
                stride: stored.stride.ok_or_else(|| missing("stride"))?,
                padding,
                weight,
                bias,
            }
        }
        "batchnorm" => {
            if tensors.len() != 4 {
                return Err(Error::ModelFormat(format!(
                    "layer {}: batchnorm expects 4 tensors, manifest lists {}",
                    stored.name,
                    tensors.len()
                )));
            }
            let var = tensors.pop().unwrap();
            let mean = tensors.pop().unwrap();
            let beta = tensors.pop().unwrap();
            let gamma = tensors.pop().unwrap();
            LayerOp::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps: stored.eps.ok_or_else(|| missing("eps"))?,
            }
        }
        other => {
            return Err(Error::ModelFormat(format!(
                "unknown layer kind {other:?}"
            )))
        }
    };
    Ok(Layer {
        name: stored.name.clone(),
        op,
    })
}

pub fn save_model<P: AsRef<Path>>(net: &SegmentedNetwork, path: P) -> Result<()> {
    let manifest = Manifest {
        input_shape: net.input_shape().to_vec(),
        layers: net.layers().iter().map(describe_layer).collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for layer in net.layers() {
        for tensor in layer_tensors(layer) {
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<SegmentedNetwork> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::ModelFormat("file too short for header".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic or unsupported version".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::ModelFormat("truncated manifest length".into()))?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)
        .map_err(|_| Error::ModelFormat("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::ModelFormat(format!("manifest parse: {e}")))?;

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for stored in &manifest.layers {
        let mut tensors = Vec::with_capacity(stored.tensor_shapes.len());
        for shape in &stored.tensor_shapes {
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0f64; numel];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf).map_err(|_| {
                    Error::ModelFormat(format!(
                        "weight blob shorter than manifest declares (layer {})",
                        stored.name
                    ))
                })?;
                *v = f64::from_le_bytes(buf);
            }
            tensors.push(Tensor::new(shape.clone(), data).map_err(|e| {
                Error::ModelFormat(format!("layer {}: {e}", stored.name))
            })?);
        }
        layers.push(rebuild_layer(stored, tensors)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes beyond manifest-declared weights",
            rest.len()
        )));
    }
    SegmentedNetwork::new(layers, manifest.input_shape)
        .map_err(|e| Error::ModelFormat(format!("manifest inconsistent: {e}")))
}

/// Export `eta * sign(recorded gradient)` at one hooked index as a long-form
/// CSV grid (channel, row, col, value) for offline inspection. Values are
/// confined to {-eta, 0, +eta}.
pub fn dump_feature_perturbation<P: AsRef<Path>>(
    bank: &GradientBank,
    index: usize,
    eta: f64,
    path: P,
) -> Result<()> {
    let grad = bank.get(index).ok_or(Error::MissingHook(index))?;
    let perturbation = grad.sign().scale(eta)?;
    let (c, h, w) = match perturbation.shape() {
        [c, h, w] => (*c, *h, *w),
        [d] => (1, 1, *d),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unsupported feature-map rank {other:?}"
            )))
        }
    };
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["channel", "row", "col", "value"])?;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = perturbation.data()[(ch * h + y) * w + x];
                writer.write_record([
                    ch.to_string(),
                    y.to_string(),
                    x.to_string(),
                    format!("{v}"),
                ])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn dump_has_at_most_three_values() {
        let mut bank = GradientBank::empty();
        bank.insert(
            2,
            Tensor::new(vec![1, 2, 2], vec![0.3, -4.0, 0.0, 7.0]).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        dump_feature_perturbation(&bank, 2, 0.25, &path).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let mut seen = HashSet::new();
        for rec in rdr.records() {
            let rec = rec.unwrap();
            seen.insert(rec[3].to_string());
        }
        assert!(seen.len() <= 3);
        assert!(seen.contains("0.25"));
        assert!(seen.contains("-0.25"));
        assert!(seen.contains("0"));
    }

    #[test]
    fn dump_missing_index_errors() {
        let bank = GradientBank::empty();
        let dir = tempfile::tempdir().unwrap();
        assert!(dump_feature_perturbation(&bank, 0, 0.1, dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn zero_gradient_dumps_all_zero() {
        let mut bank = GradientBank::empty();
        bank.insert(0, Tensor::zeros(vec![1, 2, 2]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.csv");
        dump_feature_perturbation(&bank, 0, 0.5, &path).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        for rec in rdr.records() {
            assert_eq!(&rec.unwrap()[3], "0");
        }
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        std::fs::write(&path, b"").unwrap();
        assert!(load_model(&path).is_err());
        std::fs::write(&path, b"NOTMAGIC________").unwrap();
        assert!(load_model(&path).is_err());
    }
}
