//! Layer-sequential embedding networks with forward injection hooks and
//! backward gradient recording.
//!
//! A network is the composition of its layers. During an attack, hooked
//! feature maps may be shifted by `eta * sign(recorded gradient)` before the
//! following segment runs, and a single backward pass yields both the input
//! gradient and a fresh gradient bank for the next iteration.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::Layer;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentedNetwork {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    embedding_dim: usize,
    /// Per-layer output shapes, precomputed at construction.
    layer_shapes: Vec<Vec<usize>>,
}

/// Ordered set of layer indices eligible for feature-map injection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookSet {
    indices: Vec<usize>,
}

impl HookSet {
    pub fn empty() -> Self {
        Self { indices: vec![] }
    }

    pub fn new(net: &SegmentedNetwork, indices: Vec<usize>) -> Result<Self> {
        for pair in indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidArgument(format!(
                    "hook indices must be strictly increasing, got {indices:?}"
                )));
            }
        }
        for &i in &indices {
            let layer = net.layers.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("hook index {i} out of range (n={})", net.layers.len()))
            })?;
            if !layer.hook_eligible() {
                return Err(Error::InvalidArgument(format!(
                    "layer {} ({}) is not hook-eligible",
                    i,
                    layer.kind_name()
                )));
            }
        }
        Ok(Self { indices })
    }

    /// All hook-eligible layers of one kind ("conv2d", "batchnorm", "relu").
    pub fn all_of_kind(net: &SegmentedNetwork, kind: &str) -> Self {
        Self::of_kinds(net, &[kind])
    }

    /// All hook-eligible layers whose kind appears in `kinds`.
    pub fn of_kinds(net: &SegmentedNetwork, kinds: &[&str]) -> Self {
        let indices = net
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.hook_eligible() && kinds.contains(&l.kind_name()))
            .map(|(i, _)| i)
            .collect();
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Feature-map gradients recorded during the previous backward pass.
#[derive(Debug, Clone, Default)]
pub struct GradientBank {
    grads: BTreeMap<usize, Tensor>,
    pub iteration_tag: u64,
}

impl GradientBank {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Tensor> {
        self.grads.get(&index)
    }

    pub fn insert(&mut self, index: usize, grad: Tensor) {
        self.grads.insert(index, grad);
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.grads.keys().copied()
    }

    /// Exact storage footprint of the recorded gradients, in bytes.
    pub fn byte_len(&self) -> usize {
        self.grads.values().map(|t| t.byte_len()).sum()
    }
}

/// Stochastic feature-map dropout applied at conv outputs during attack
/// forward passes.
pub struct DropoutSpec<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Elementwise zeroing with probability `rate`, survivors scaled by
/// 1/(1-rate) so the expected mean is preserved. Returns the masked
/// tensor and the mask itself (needed again on the backward pass).
pub fn feature_dropout(t: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok((t.clone(), Tensor::filled(t.shape().to_vec(), 1.0)));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..t.numel())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
        .collect();
    let mask = Tensor::new(t.shape().to_vec(), mask)?;
    let masked: Vec<f64> = t.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
    Ok((Tensor::new(t.shape().to_vec(), masked)?, mask))
}

/// Per-forward record: post-injection activations at hooked indices, the
/// final embedding, and the caches backward needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: BTreeMap<usize, Tensor>,
    pub embedding: Tensor,
    pub(crate) layer_inputs: Vec<Tensor>,
    pub(crate) dropout_masks: BTreeMap<usize, Tensor>,
}

impl SegmentedNetwork {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        let mut names = std::collections::HashSet::new();
        for layer in &layers {
            if !names.insert(layer.name.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate layer name {}",
                    layer.name
                )));
            }
        }
        let mut layer_shapes = Vec::with_capacity(layers.len());
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
            layer_shapes.push(shape.clone());
        }
        let embedding_dim = match shape.as_slice() {
            [d] => *d,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "network must end in a vector embedding, got {other:?}"
                )))
            }
        };
        Ok(Self {
            layers,
            input_shape,
            embedding_dim,
            layer_shapes,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Output shape of layer `i`.
    pub fn feature_shape(&self, i: usize) -> &[usize] {
        &self.layer_shapes[i]
    }

    pub fn weight_bytes(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.params().iter().map(|p| p.byte_len()).sum::<usize>())
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::ShapeMismatch {
                context: "network input",
                left: self.input_shape.clone(),
                right: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward_plain(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Forward with optional feature-map injection from a gradient bank.
    /// With `eta == 0` or an empty bank this is bitwise identical to
    /// `forward_plain` (injection is skipped entirely, not applied as a
    /// zero step).
    pub fn forward_injected(
        &self,
        x: &Tensor,
        hooks: &HookSet,
        bank: &GradientBank,
        eta: f64,
    ) -> Result<ForwardTrace> {
        self.forward_attack(x, hooks, bank, eta, None)
    }

    pub fn forward_attack(
        &self,
        x: &Tensor,
        hooks: &HookSet,
        bank: &GradientBank,
        eta: f64,
        mut dropout: Option<DropoutSpec<'_>>,
    ) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut activations = BTreeMap::new();
        let mut dropout_masks = BTreeMap::new();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            layer_inputs.push(cur.clone());
            cur = layer.forward(&cur)?;
            if let Some(spec) = dropout.as_mut() {
                if layer.is_conv() && spec.rate > 0.0 {
                    let (masked, mask) = feature_dropout(&cur, spec.rate, spec.rng)?;
                    cur = masked;
                    dropout_masks.insert(i, mask);
                }
            }
            if hooks.contains(i) {
                if eta != 0.0 {
                    if let Some(grad) = bank.get(i) {
                        if grad.shape() != cur.shape() {
                            return Err(Error::ShapeMismatch {
                                context: "bank injection",
                                left: cur.shape().to_vec(),
                                right: grad.shape().to_vec(),
                            });
                        }
                        cur = cur.axpy_sign_step(grad, eta)?;
                    }
                }
                activations.insert(i, cur.clone());
            }
        }
        Ok(ForwardTrace {
            activations,
            embedding: cur,
            layer_inputs,
            dropout_masks,
        })
    }

    /// Single backward pass: input gradient plus a new bank holding the
    /// gradients at every hooked (post-injection) feature map.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        loss_grad_wrt_embedding: &Tensor,
        hooks: &HookSet,
    ) -> Result<(Tensor, GradientBank)> {
        let (input_grad, bank, _) =
            self.backward_full(trace, loss_grad_wrt_embedding, hooks, false)?;
        Ok((input_grad, bank))
    }

    /// Backward with optional parameter gradients (used by the trainer).
    /// Parameter gradients come back as one `Vec<Tensor>` per layer, in
    /// `Layer::params()` order.
    pub fn backward_full(
        &self,
        trace: &ForwardTrace,
        loss_grad_wrt_embedding: &Tensor,
        hooks: &HookSet,
        want_params: bool,
    ) -> Result<(Tensor, GradientBank, Vec<Vec<Tensor>>)> {
        if trace.layer_inputs.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "trace does not belong to this network".into(),
            ));
        }
        if loss_grad_wrt_embedding.shape() != [self.embedding_dim] {
            return Err(Error::ShapeMismatch {
                context: "loss gradient",
                left: vec![self.embedding_dim],
                right: loss_grad_wrt_embedding.shape().to_vec(),
            });
        }
        let mut grad = loss_grad_wrt_embedding.clone();
        let mut bank = GradientBank::empty();
        let mut param_grads = vec![Vec::new(); self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            // Gradient wrt the post-injection activation: the additive
            // injection passes gradients through unchanged.
            if hooks.contains(i) {
                bank.insert(i, grad.clone());
            }
            if let Some(mask) = trace.dropout_masks.get(&i) {
                let masked: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(g, m)| g * m)
                    .collect();
                grad = Tensor::new(grad.shape().to_vec(), masked)?;
            }
            let input = &trace.layer_inputs[i];
            if input.shape() != self.expected_input_shape(i) {
                return Err(Error::InvalidArgument(
                    "trace shapes do not match this network".into(),
                ));
            }
            let (gin, pgrads) = layer.backward(input, &grad)?;
            if want_params {
                param_grads[i] = pgrads;
            }
            grad = gin;
        }
        Ok((grad, bank, param_grads))
    }

    fn expected_input_shape(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.layer_shapes[i - 1]
        }
    }
}
