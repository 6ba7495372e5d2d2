//! The fixed layer vocabulary: conv2d, dense, batchnorm, relu, avgpool,
//! flatten, plus a fixed input rescale. Each layer knows its forward map,
//! its output shape, and its backward map (input gradient + parameter
//! gradients with a cached forward input).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LayerOp {
    /// Fixed elementwise rescale (pixel [0,255] -> [0,1] at the network input).
    Scale { factor: f64 },
    /// Fixed elementwise offset, used for mean-image centering at the input.
    /// The offset is data-derived, set by the trainer, and not trainable.
    Shift { offset: Tensor },
    /// 3x3 convolution. Weight shape [out_ch, in_ch, k, k], bias [out_ch].
    Conv2d {
        stride: usize,
        padding: Padding,
        weight: Tensor,
        bias: Tensor,
    },
    /// Fully connected. Weight shape [out, in], bias [out].
    Dense { weight: Tensor, bias: Tensor },
    /// Per-channel affine normalization with frozen statistics.
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        mean: Tensor,
        var: Tensor,
        eps: f64,
    },
    Relu,
    AvgPool { size: usize },
    Flatten,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
}

fn idx3(c: usize, y: usize, x: usize, h: usize, w: usize) -> usize {
    (c * h + y) * w + x
}

fn conv_geometry(
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> (usize, usize, usize, usize) {
    match padding {
        Padding::Same => {
            let out_h = (h + stride - 1) / stride;
            let out_w = (w + stride - 1) / stride;
            let pad_h = ((out_h - 1) * stride + k).saturating_sub(h);
            let pad_w = ((out_w - 1) * stride + k).saturating_sub(w);
            (out_h, out_w, pad_h / 2, pad_w / 2)
        }
        Padding::Valid => ((h - k) / stride + 1, (w - k) / stride + 1, 0, 0),
    }
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match &self.op {
            LayerOp::Scale { .. } => "scale",
            LayerOp::Shift { .. } => "shift",
            LayerOp::Conv2d { .. } => "conv2d",
            LayerOp::Dense { .. } => "dense",
            LayerOp::BatchNorm { .. } => "batchnorm",
            LayerOp::Relu => "relu",
            LayerOp::AvgPool { .. } => "avgpool",
            LayerOp::Flatten => "flatten",
        }
    }

    /// Layer kinds whose output feature maps may receive injected
    /// perturbations: convolution, batchnorm, and activation outputs.
    pub fn hook_eligible(&self) -> bool {
        matches!(
            self.op,
            LayerOp::Conv2d { .. } | LayerOp::BatchNorm { .. } | LayerOp::Relu
        )
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.op, LayerOp::Conv2d { .. })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match &self.op {
            LayerOp::Scale { .. } | LayerOp::Relu => Ok(input.to_vec()),
            LayerOp::Shift { offset } => {
                if offset.shape() != input {
                    return bad(format!(
                        "shift {}: offset shape {:?} does not match input {input:?}",
                        self.name,
                        offset.shape()
                    ));
                }
                Ok(input.to_vec())
            }
            LayerOp::Conv2d {
                stride,
                padding,
                weight,
                ..
            } => {
                let [out_ch, in_ch, k, _] = weight.shape() else {
                    return bad(format!("conv weight must be 4-d, got {:?}", weight.shape()));
                };
                let [c, h, w] = input else {
                    return bad(format!("conv input must be CxHxW, got {input:?}"));
                };
                if c != in_ch {
                    return bad(format!("conv {}: {c} input channels, weight expects {in_ch}", self.name));
                }
                if *h < *k || *w < *k {
                    return bad(format!("conv {}: input {h}x{w} smaller than kernel {k}", self.name));
                }
                let (oh, ow, _, _) = conv_geometry(*h, *w, *k, *stride, *padding);
                Ok(vec![*out_ch, oh, ow])
            }
            LayerOp::Dense { weight, .. } => {
                let [out, inp] = weight.shape() else {
                    return bad(format!("dense weight must be 2-d, got {:?}", weight.shape()));
                };
                if input != [*inp] {
                    return bad(format!("dense {}: input {input:?}, weight expects [{inp}]", self.name));
                }
                Ok(vec![*out])
            }
            LayerOp::BatchNorm { gamma, .. } => {
                let [c, ..] = input else {
                    return bad(format!("batchnorm input must be channel-major, got {input:?}"));
                };
                if gamma.shape() != [*c] {
                    return bad(format!("batchnorm {}: {c} channels, gamma has {:?}", self.name, gamma.shape()));
                }
                Ok(input.to_vec())
            }
            LayerOp::AvgPool { size } => {
                let [c, h, w] = input else {
                    return bad(format!("avgpool input must be CxHxW, got {input:?}"));
                };
                if h % size != 0 || w % size != 0 {
                    return bad(format!("avgpool {}: {h}x{w} not divisible by {size}", self.name));
                }
                Ok(vec![*c, h / size, w / size])
            }
            LayerOp::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        match &self.op {
            LayerOp::Scale { factor } => input.scale(*factor),
            LayerOp::Shift { offset } => input.add(offset),
            LayerOp::Relu => input.map(|v| v.max(0.0)),
            LayerOp::Flatten => input.reshape(out_shape),
            LayerOp::Dense { weight, bias } => {
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                let mut y = vec![0.0; out];
                let w = weight.data();
                let x = input.data();
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w[o * inp..(o + 1) * inp];
                    *yo = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias.data()[o];
                }
                Tensor::new(out_shape, y)
            }
            LayerOp::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let c = input.shape()[0];
                let per = input.numel() / c;
                let mut y = vec![0.0; input.numel()];
                for ch in 0..c {
                    let inv = 1.0 / (var.data()[ch] + eps).sqrt();
                    let g = gamma.data()[ch];
                    let b = beta.data()[ch];
                    let m = mean.data()[ch];
                    for j in 0..per {
                        y[ch * per + j] = g * (input.data()[ch * per + j] - m) * inv + b;
                    }
                }
                Tensor::new(out_shape, y)
            }
            LayerOp::AvgPool { size } => {
                let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
                let (oh, ow) = (h / size, w / size);
                let mut y = vec![0.0; c * oh * ow];
                let inv = 1.0 / ((size * size) as f64);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = 0.0;
                            for dy in 0..*size {
                                for dx in 0..*size {
                                    s += input.data()[idx3(ch, oy * size + dy, ox * size + dx, h, w)];
                                }
                            }
                            y[idx3(ch, oy, ox, oh, ow)] = s * inv;
                        }
                    }
                }
                Tensor::new(out_shape, y)
            }
            LayerOp::Conv2d {
                stride,
                padding,
                weight,
                bias,
            } => {
                let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
                let k = weight.shape()[2];
                let out_ch = weight.shape()[0];
                let (oh, ow, pad_y, pad_x) = conv_geometry(h, w, k, *stride, *padding);
                let mut y = vec![0.0; out_ch * oh * ow];
                let wd = weight.data();
                let xd = input.data();
                for oc in 0..out_ch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = bias.data()[oc];
                            for ic in 0..c {
                                for ky in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad_y as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx) as isize - pad_x as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        s += wd[((oc * c + ic) * k + ky) * k + kx]
                                            * xd[idx3(ic, iy as usize, ix as usize, h, w)];
                                    }
                                }
                            }
                            y[idx3(oc, oy, ox, oh, ow)] = s;
                        }
                    }
                }
                Tensor::new(out_shape, y)
            }
        }
    }

    /// Backward map. `input` is the cached forward input of this layer.
    /// Returns the gradient wrt the input and the gradients wrt this
    /// layer's trainable parameters (in `params()` order).
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        match &self.op {
            LayerOp::Scale { factor } => Ok((grad_out.scale(*factor)?, vec![])),
            LayerOp::Shift { .. } => Ok((grad_out.clone(), vec![])),
            LayerOp::Relu => {
                let mut g = grad_out.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                Ok((g, vec![]))
            }
            LayerOp::Flatten => Ok((grad_out.reshape(input.shape().to_vec())?, vec![])),
            LayerOp::Dense { weight, .. } => {
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                let w = weight.data();
                let g = grad_out.data();
                let x = input.data();
                let mut gin = vec![0.0; inp];
                let mut gw = vec![0.0; out * inp];
                for o in 0..out {
                    let go = g[o];
                    for i in 0..inp {
                        gin[i] += w[o * inp + i] * go;
                        gw[o * inp + i] = go * x[i];
                    }
                }
                Ok((
                    Tensor::new(vec![inp], gin)?,
                    vec![
                        Tensor::new(vec![out, inp], gw)?,
                        Tensor::new(vec![out], g.to_vec())?,
                    ],
                ))
            }
            LayerOp::BatchNorm {
                gamma, var, mean, eps, ..
            } => {
                let c = input.shape()[0];
                let per = input.numel() / c;
                let mut gin = vec![0.0; input.numel()];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for ch in 0..c {
                    let inv = 1.0 / (var.data()[ch] + eps).sqrt();
                    let gm = gamma.data()[ch];
                    let m = mean.data()[ch];
                    for j in 0..per {
                        let go = grad_out.data()[ch * per + j];
                        gin[ch * per + j] = go * gm * inv;
                        ggamma[ch] += go * (input.data()[ch * per + j] - m) * inv;
                        gbeta[ch] += go;
                    }
                }
                Ok((
                    Tensor::new(input.shape().to_vec(), gin)?,
                    vec![Tensor::new(vec![c], ggamma)?, Tensor::new(vec![c], gbeta)?],
                ))
            }
            LayerOp::AvgPool { size } => {
                let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
                let (oh, ow) = (h / size, w / size);
                let inv = 1.0 / ((size * size) as f64);
                let mut gin = vec![0.0; input.numel()];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = grad_out.data()[idx3(ch, oy, ox, oh, ow)] * inv;
                            for dy in 0..*size {
                                for dx in 0..*size {
                                    gin[idx3(ch, oy * size + dy, ox * size + dx, h, w)] += go;
                                }
                            }
                        }
                    }
                }
                Ok((Tensor::new(input.shape().to_vec(), gin)?, vec![]))
            }
            LayerOp::Conv2d {
                stride,
                padding,
                weight,
                ..
            } => {
                let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
                let k = weight.shape()[2];
                let out_ch = weight.shape()[0];
                let (oh, ow, pad_y, pad_x) = conv_geometry(h, w, k, *stride, *padding);
                let wd = weight.data();
                let xd = input.data();
                let mut gin = vec![0.0; input.numel()];
                let mut gw = vec![0.0; weight.numel()];
                let mut gb = vec![0.0; out_ch];
                for oc in 0..out_ch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = grad_out.data()[idx3(oc, oy, ox, oh, ow)];
                            gb[oc] += go;
                            for ic in 0..c {
                                for ky in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad_y as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx) as isize - pad_x as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let wi = ((oc * c + ic) * k + ky) * k + kx;
                                        let xi = idx3(ic, iy as usize, ix as usize, h, w);
                                        gin[xi] += wd[wi] * go;
                                        gw[wi] += xd[xi] * go;
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((
                    Tensor::new(input.shape().to_vec(), gin)?,
                    vec![
                        Tensor::new(weight.shape().to_vec(), gw)?,
                        Tensor::new(vec![out_ch], gb)?,
                    ],
                ))
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match &self.op {
            LayerOp::Conv2d { weight, bias, .. } | LayerOp::Dense { weight, bias } => {
                vec![weight, bias]
            }
            LayerOp::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.op {
            LayerOp::Conv2d { weight, bias, .. } | LayerOp::Dense { weight, bias } => {
                vec![weight, bias]
            }
            LayerOp::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    /// The centering offset is updated out of band by the trainer.
    pub fn set_shift_offset(&mut self, new_offset: Tensor) -> Result<()> {
        match &mut self.op {
            LayerOp::Shift { offset } => {
                if new_offset.shape() != offset.shape() {
                    return Err(Error::ShapeMismatch {
                        context: "set_shift_offset",
                        left: offset.shape().to_vec(),
                        right: new_offset.shape().to_vec(),
                    });
                }
                *offset = new_offset;
                Ok(())
            }
            _ => Err(Error::InvalidArgument(format!(
                "layer {} is not shift",
                self.name
            ))),
        }
    }

    /// Frozen batchnorm statistics are updated out of band by the trainer.
    pub fn set_bn_stats(&mut self, new_mean: Tensor, new_var: Tensor) -> Result<()> {
        match &mut self.op {
            LayerOp::BatchNorm { mean, var, .. } => {
                if new_mean.shape() != mean.shape() || new_var.shape() != var.shape() {
                    return Err(Error::ShapeMismatch {
                        context: "set_bn_stats",
                        left: mean.shape().to_vec(),
                        right: new_mean.shape().to_vec(),
                    });
                }
                *mean = new_mean;
                *var = new_var;
                Ok(())
            }
            _ => Err(Error::InvalidArgument(format!(
                "layer {} is not batchnorm",
                self.name
            ))),
        }
    }
}
