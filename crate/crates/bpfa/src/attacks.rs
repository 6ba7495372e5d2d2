//! The attack engine: embedding-level losses, the iterative sign-gradient
//! update with box projection, the momentum / input-diversity / feature-
//! dropout baseline augmentations, and the feature-augmentation wrapper
//! that injects recorded gradients back into hooked feature maps.
//!
//! With `eta = 0` and all augmentations off, `run_attack` is the plain
//! iterative sign-gradient embedding attack; each augmentation is a
//! strictly orthogonal toggle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DropoutSpec, GradientBank, HookSet, SegmentedNetwork};
use crate::rng::substream;
use crate::synth::{FacePair, IdentityDataset, Polarity};
use crate::tensor::Tensor;

pub use crate::nn::network::feature_dropout as dfanet_dropout;

/// Squared Euclidean distance between the L2-normalized embeddings.
pub fn normalized_sq_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let an = a.l2_normalize()?;
    let bn = b.l2_normalize()?;
    Ok(an.sub(&bn)?.data().iter().map(|v| v * v).sum())
}

/// Impersonation loss: distance between the (normalized) network output and
/// the fixed reference embedding, with the analytic gradient through the
/// normalization.
pub fn loss_impersonation(net_out: &Tensor, target_emb: &Tensor) -> Result<(f64, Tensor)> {
    if net_out.shape() != target_emb.shape() {
        return Err(Error::ShapeMismatch {
            context: "loss embeddings",
            left: net_out.shape().to_vec(),
            right: target_emb.shape().to_vec(),
        });
    }
    let norm = net_out.l2_norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let phi = net_out.scale(1.0 / norm)?;
    let u = target_emb.l2_normalize()?;
    let value = phi.sub(&u)?.data().iter().map(|v| v * v).sum();
    // d/de ||phi(e) - u||^2 = (2/||e||) (phi (phi.u) - u)
    let cos = phi.dot(&u)?;
    let grad = phi.scale(cos)?.sub(&u)?.scale(2.0 / norm)?;
    Ok((value, grad))
}

/// Dodging loss: negated distance to the source embedding.
pub fn loss_dodging(net_out: &Tensor, source_emb: &Tensor) -> Result<(f64, Tensor)> {
    let (value, grad) = loss_impersonation(net_out, source_emb)?;
    Ok((-value, grad.scale(-1.0)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Impersonation,
    Dodging,
}

impl AttackMode {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMode::Impersonation => "impersonation",
            AttackMode::Dodging => "dodging",
        }
    }
}

/// Which layers receive injected feature perturbations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HookSpec {
    None,
    /// All hook-eligible layers of one kind: "conv2d", "batchnorm", "relu".
    Kind(String),
    Indices(Vec<usize>),
}

impl HookSpec {
    pub fn resolve(&self, net: &SegmentedNetwork) -> Result<HookSet> {
        match self {
            HookSpec::None => Ok(HookSet::empty()),
            HookSpec::Kind(kind) => {
                let kinds: Vec<&str> = kind.split('+').collect();
                for k in &kinds {
                    if !["conv2d", "batchnorm", "relu"].contains(k) {
                        return Err(Error::InvalidArgument(format!(
                            "hook kind must be conv2d, batchnorm, or relu \
                             (optionally joined with '+'), got {k:?}"
                        )));
                    }
                }
                Ok(HookSet::of_kinds(net, &kinds))
            }
            HookSpec::Indices(idx) => HookSet::new(net, idx.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub name: String,
    /// L-inf budget in pixel units.
    pub epsilon: f64,
    /// Input step size in pixel units.
    pub beta: f64,
    pub n_max: usize,
    pub mode: AttackMode,
    /// Feature step size: > 0 injects loss-increasing perturbations,
    /// < 0 loss-decreasing ones, 0 disables injection.
    pub eta: f64,
    pub hooks: HookSpec,
    /// Momentum decay, when momentum accumulation is enabled.
    pub momentum_decay: Option<f64>,
    /// Input-diversity transform probability, when enabled.
    pub di_prob: Option<f64>,
    /// Feature-dropout rate at conv outputs, when enabled.
    pub dropout_rate: Option<f64>,
    pub seed: u64,
}

/// Default feature step size for desk-scale impersonation runs (paired
/// with the convolution + normalization hook set, see
/// [`AttackConfig::with_bpfa`]).
pub const DEFAULT_ETA: f64 = 0.05;

/// Default feature step size for dodging runs against the robust twin
/// zoo. Dodging gradients at the hooked layers are far smaller than
/// impersonation gradients at this scale (the loss starts at its exact
/// minimum), so the dodging recipe takes a much larger feature step.
pub const DEFAULT_DODGING_ETA: f64 = 3.0;

/// Momentum decay for the desk-scale transfer combination. The full-decay
/// convention (1.0) smooths the input gradient so aggressively at this
/// image size that it averages away the per-iteration feature injections;
/// a light decay keeps the momentum benefit without the cancellation.
pub const DEFAULT_TRANSFER_MOMENTUM: f64 = 0.2;

/// Coarse feature-step grid used by the eta sweep and the loss-increase
/// property suite.
pub const DEFAULT_ETA_GRID: [f64; 8] = [0.0, 0.05, 0.1, 0.15, 0.25, 0.4, 0.6, 0.8];

impl AttackConfig {
    pub fn fim(name: &str, mode: AttackMode, seed: u64) -> Self {
        Self {
            name: name.into(),
            epsilon: 10.0,
            // Half-unit step: at 16x16 a full-unit step oscillates around
            // the box boundary instead of converging.
            beta: 0.5,
            n_max: 100,
            mode,
            eta: 0.0,
            hooks: HookSpec::None,
            momentum_decay: None,
            di_prob: None,
            dropout_rate: None,
            seed,
        }
    }

    /// Default hook placement depends on the attack mode: impersonation
    /// transfers best when both convolution and normalization outputs are
    /// hooked (every architecture normalizes, so the set is never empty),
    /// while dodging (whose hooked gradients are much smaller and flatter)
    /// benefits most from injecting at the normalization outputs alone.
    pub fn with_bpfa(mut self, eta: f64) -> Self {
        self.eta = eta;
        self.hooks = HookSpec::Kind(
            match self.mode {
                AttackMode::Impersonation => "conv2d+batchnorm",
                AttackMode::Dodging => "batchnorm",
            }
            .into(),
        );
        self
    }

    pub fn with_momentum(mut self, decay: f64) -> Self {
        self.momentum_decay = Some(decay);
        self
    }

    pub fn with_di(mut self, prob: f64) -> Self {
        self.di_prob = Some(prob);
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = Some(rate);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        if self.beta <= 0.0 {
            return Err(Error::InvalidArgument("beta must be > 0".into()));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidArgument("n_max must be >= 1".into()));
        }
        if let Some(r) = self.dropout_rate {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidArgument("dropout rate must be in [0, 1)".into()));
            }
        }
        if let Some(p) = self.di_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument("DI probability must be in [0, 1]".into()));
            }
        }
        if let Some(mu) = self.momentum_decay {
            if mu < 0.0 {
                return Err(Error::InvalidArgument("momentum decay must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Random resize-then-pad that keeps the output shape equal to the input
/// shape, so downstream feature-map shapes stay stable for the bank.
pub fn di_transform(x: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if p <= 0.0 || rng.gen::<f64>() >= p {
        return Ok(x.clone());
    }
    let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let min_h = ((h as f64) * 0.75).ceil() as usize;
    let rh = rng.gen_range(min_h..=h);
    let min_w = ((w as f64) * 0.75).ceil() as usize;
    let rw = rng.gen_range(min_w..=w);
    let pad_top = rng.gen_range(0..=(h - rh));
    let pad_left = rng.gen_range(0..=(w - rw));
    if rh == h && rw == w {
        return Ok(x.clone());
    }
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..rh {
            for xx in 0..rw {
                // bilinear sample from the original grid
                let fy = if rh > 1 {
                    y as f64 / (rh - 1) as f64 * (h - 1) as f64
                } else {
                    0.0
                };
                let fx = if rw > 1 {
                    xx as f64 / (rw - 1) as f64 * (w - 1) as f64
                } else {
                    0.0
                };
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
                let at = |yy: usize, xc: usize| x.data()[(ch * h + yy) * w + xc];
                let v = at(y0, x0) * (1.0 - dy) * (1.0 - dx)
                    + at(y0, x1) * (1.0 - dy) * dx
                    + at(y1, x0) * dy * (1.0 - dx)
                    + at(y1, x1) * dy * dx;
                out[(ch * h + y + pad_top) * w + xx + pad_left] = v;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[derive(Debug, Clone)]
pub struct AttackState {
    pub x_adv: Tensor,
    pub bank: GradientBank,
    pub momentum: Tensor,
    pub t: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub loss: f64,
    pub bank_bytes: usize,
    /// Loss of the un-injected network at the same input; recorded only
    /// when instrumentation is requested.
    pub plain_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub x_adv: Tensor,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Closed-form bank size for a hook set: sum of hooked feature-map element
/// counts times 8 bytes.
pub fn bank_bytes(hooks: &HookSet, net: &SegmentedNetwork) -> usize {
    hooks
        .indices()
        .iter()
        .map(|&i| net.feature_shape(i).iter().product::<usize>() * 8)
        .sum()
}

pub struct AttackContext<'a> {
    net: &'a SegmentedNetwork,
    cfg: &'a AttackConfig,
    hooks: HookSet,
    x_src: Tensor,
    ref_emb: Tensor,
    lo: Tensor,
    hi: Tensor,
}

impl<'a> AttackContext<'a> {
    /// The reference embedding is computed once on the clean, un-hooked
    /// surrogate: the target image for impersonation, the source image for
    /// dodging.
    pub fn new(
        net: &'a SegmentedNetwork,
        cfg: &'a AttackConfig,
        x_src: &Tensor,
        x_target: Option<&Tensor>,
    ) -> Result<Self> {
        cfg.validate()?;
        let hooks = cfg.hooks.resolve(net)?;
        let ref_emb = match cfg.mode {
            AttackMode::Impersonation => {
                let target = x_target.ok_or_else(|| {
                    Error::InvalidArgument("impersonation needs a target image".into())
                })?;
                net.forward_plain(target)?
            }
            AttackMode::Dodging => net.forward_plain(x_src)?,
        };
        let lo = x_src
            .map(|v| (v - cfg.epsilon).max(0.0))?;
        let hi = x_src
            .map(|v| (v + cfg.epsilon).min(255.0))?;
        Ok(Self {
            net,
            cfg,
            hooks,
            x_src: x_src.clone(),
            ref_emb,
            lo,
            hi,
        })
    }

    pub fn initial_state(&self) -> AttackState {
        AttackState {
            x_adv: self.x_src.clone(),
            bank: GradientBank::empty(),
            momentum: Tensor::zeros(self.x_src.shape().to_vec()),
            t: 0,
        }
    }

    pub fn hooks(&self) -> &HookSet {
        &self.hooks
    }

    pub fn loss_of_embedding(&self, emb: &Tensor) -> Result<f64> {
        Ok(match self.cfg.mode {
            AttackMode::Impersonation => loss_impersonation(emb, &self.ref_emb)?.0,
            AttackMode::Dodging => loss_dodging(emb, &self.ref_emb)?.0,
        })
    }

    /// One iteration of the minimax loop: diversity transform, injected
    /// forward, loss, single backward (input gradient + new bank), optional
    /// momentum, signed step, box projection.
    pub fn step(
        &self,
        state: &AttackState,
        rng: &mut ChaCha8Rng,
        record_plain_loss: bool,
    ) -> Result<(AttackState, TrajectoryRow)> {
        let t = state.t + 1;
        let x_input = match self.cfg.di_prob {
            Some(p) => di_transform(&state.x_adv, p, rng)?,
            None => state.x_adv.clone(),
        };
        let trace = match self.cfg.dropout_rate {
            Some(rate) => self.net.forward_attack(
                &x_input,
                &self.hooks,
                &state.bank,
                self.cfg.eta,
                Some(DropoutSpec { rate, rng }),
            )?,
            None => self
                .net
                .forward_injected(&x_input, &self.hooks, &state.bank, self.cfg.eta)?,
        };
        let (loss, loss_grad) = match self.cfg.mode {
            AttackMode::Impersonation => loss_impersonation(&trace.embedding, &self.ref_emb)?,
            AttackMode::Dodging => loss_dodging(&trace.embedding, &self.ref_emb)?,
        };
        let (input_grad, new_bank) = self.net.backward(&trace, &loss_grad, &self.hooks)?;
        let direction = match self.cfg.momentum_decay {
            Some(mu) => {
                let l1 = input_grad.l1_norm();
                let normalized = if l1 > 0.0 {
                    input_grad.scale(1.0 / l1)?
                } else {
                    input_grad.clone()
                };
                state.momentum.scale(mu)?.add(&normalized)?
            }
            None => input_grad,
        };
        let x_next = state
            .x_adv
            .axpy_sign_step(&direction, -self.cfg.beta)?
            .clip_box(&self.lo, &self.hi)?;
        let plain_loss = if record_plain_loss {
            Some(self.loss_of_embedding(&self.net.forward_plain(&x_input)?)?)
        } else {
            None
        };
        let row = TrajectoryRow {
            t,
            loss,
            bank_bytes: new_bank.byte_len(),
            plain_loss,
        };
        let momentum = if self.cfg.momentum_decay.is_some() {
            direction
        } else {
            state.momentum.clone()
        };
        let mut bank = new_bank;
        bank.iteration_tag = t as u64;
        Ok((
            AttackState {
                x_adv: x_next,
                bank,
                momentum,
                t,
            },
            row,
        ))
    }
}

/// Run a full attack on a face pair. Impersonation mode requires a
/// negative pair; dodging ignores the target image.
pub fn run_attack(
    net: &SegmentedNetwork,
    ds: &IdentityDataset,
    pair: &FacePair,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    run_attack_instrumented(net, ds, pair, cfg, false)
}

pub fn run_attack_instrumented(
    net: &SegmentedNetwork,
    ds: &IdentityDataset,
    pair: &FacePair,
    cfg: &AttackConfig,
    record_plain_loss: bool,
) -> Result<AttackOutcome> {
    if cfg.mode == AttackMode::Impersonation && pair.polarity != Polarity::Negative {
        return Err(Error::InvalidArgument(
            "impersonation attacks require a negative pair".into(),
        ));
    }
    let (x_src, x_target) = ds.pair_images(pair);
    let ctx = AttackContext::new(net, cfg, x_src, Some(x_target))?;
    let mut rng = substream(cfg.seed, "attack", 0);
    let mut state = ctx.initial_state();
    let mut trajectory = Vec::with_capacity(cfg.n_max);
    for _ in 0..cfg.n_max {
        let (next, row) = ctx.step(&state, &mut rng, record_plain_loss)?;
        state = next;
        trajectory.push(row);
    }
    Ok(AttackOutcome {
        x_adv: state.x_adv,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::feature_dropout;
    use crate::nn::{build, ArchId};
    use crate::rng::substream;
    use crate::synth::{generate, sample_pairs, DatasetParams};

    fn unit(v: &[f64]) -> Tensor {
        Tensor::from_slice(v).l2_normalize().unwrap()
    }

    #[test]
    fn impersonation_loss_values() {
        let e = unit(&[1.0, 0.0]);
        assert!(loss_impersonation(&e, &e).unwrap().0.abs() < 1e-15);
        let o = unit(&[0.0, 1.0]);
        assert!((loss_impersonation(&e, &o).unwrap().0 - 2.0).abs() < 1e-12);
        let a = unit(&[-1.0, 0.0]);
        assert!((loss_impersonation(&e, &a).unwrap().0 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn dodging_negates_impersonation() {
        let e = Tensor::from_slice(&[0.3, -0.8, 0.2]);
        let r = Tensor::from_slice(&[1.0, 0.5, -0.1]);
        let (li, gi) = loss_impersonation(&e, &r).unwrap();
        let (ld, gd) = loss_dodging(&e, &r).unwrap();
        assert_eq!(ld, -li);
        for (a, b) in gi.data().iter().zip(gd.data()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn impersonation_grad_matches_finite_differences() {
        let e = Tensor::from_slice(&[0.4, -1.2, 0.7, 0.1]);
        let r = Tensor::from_slice(&[-0.3, 0.9, 0.5, -0.6]);
        let (_, grad) = loss_impersonation(&e, &r).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut up = e.data().to_vec();
            up[i] += h;
            let mut dn = e.data().to_vec();
            dn[i] -= h;
            let lu = loss_impersonation(&Tensor::from_slice(&up), &r).unwrap().0;
            let ld = loss_impersonation(&Tensor::from_slice(&dn), &r).unwrap().0;
            let fd = (lu - ld) / (2.0 * h);
            assert!(
                (fd - grad.data()[i]).abs() < 1e-6,
                "coord {i}: fd {fd} vs analytic {}",
                grad.data()[i]
            );
        }
    }

    #[test]
    fn zero_norm_embedding_errors() {
        let z = Tensor::zeros(vec![3]);
        let r = Tensor::from_slice(&[1.0, 0.0, 0.0]);
        assert!(loss_impersonation(&z, &r).is_err());
        assert!(loss_impersonation(&r, &z).is_err());
    }

    #[test]
    fn di_transform_contract() {
        let x = Tensor::new(vec![1, 8, 8], (0..64).map(|v| v as f64).collect()).unwrap();
        let mut rng = substream(1, "di", 0);
        // p = 0 -> identity always
        for _ in 0..10 {
            assert_eq!(di_transform(&x, 0.0, &mut rng).unwrap().data(), x.data());
        }
        // shape stability over many draws
        for _ in 0..1000 {
            let y = di_transform(&x, 1.0, &mut rng).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
        // determinism under a fixed seed
        let mut r1 = substream(5, "di", 0);
        let mut r2 = substream(5, "di", 0);
        assert_eq!(
            di_transform(&x, 1.0, &mut r1).unwrap().data(),
            di_transform(&x, 1.0, &mut r2).unwrap().data()
        );
    }

    #[test]
    fn dropout_preserves_mean() {
        let x = Tensor::filled(vec![400], 2.0);
        let mut rng = substream(3, "drop", 0);
        let mut total = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let (masked, _) = feature_dropout(&x, 0.3, &mut rng).unwrap();
            total += masked.data().iter().sum::<f64>() / masked.numel() as f64;
        }
        let mean = total / n as f64;
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
        // rate 0 -> identity
        let (same, _) = feature_dropout(&x, 0.0, &mut rng).unwrap();
        assert_eq!(same.data(), x.data());
        // fixed seed -> identical mask
        let mut r1 = substream(4, "drop", 0);
        let mut r2 = substream(4, "drop", 0);
        assert_eq!(
            feature_dropout(&x, 0.5, &mut r1).unwrap().1.data(),
            feature_dropout(&x, 0.5, &mut r2).unwrap().1.data()
        );
    }

    fn toy_setup() -> (crate::synth::IdentityDataset, SegmentedNetwork) {
        let ds = generate(&DatasetParams {
            num_identities: 4,
            images_per_identity: 3,
            image_shape: vec![1, 8, 8],
            seed: 11,
            generator: Default::default(),
        })
        .unwrap();
        let net = build(ArchId::C, &[1, 8, 8], 8, 21).unwrap();
        (ds, net)
    }

    #[test]
    fn impersonation_rejects_positive_pair() {
        let (ds, net) = toy_setup();
        let pair = sample_pairs(&ds, 1, Polarity::Positive, 2).unwrap()[0];
        let cfg = AttackConfig::fim("fim", AttackMode::Impersonation, 1);
        assert!(run_attack(&net, &ds, &pair, &cfg).is_err());
    }

    #[test]
    fn box_invariant_and_single_step() {
        let (ds, net) = toy_setup();
        let pair = sample_pairs(&ds, 1, Polarity::Negative, 2).unwrap()[0];
        let mut cfg = AttackConfig::fim("fim", AttackMode::Impersonation, 1).with_bpfa(0.1);
        cfg.n_max = 1;
        let out = run_attack(&net, &ds, &pair, &cfg).unwrap();
        assert_eq!(out.trajectory.len(), 1);
        let (x_src, _) = ds.pair_images(&pair);
        let diff = out.x_adv.sub(x_src).unwrap();
        assert!(diff.linf_norm() <= 10.0 + 1e-12);
        for &v in out.x_adv.data() {
            assert!((0.0..=255.0).contains(&v));
        }
    }

    #[test]
    fn first_iteration_ignores_eta() {
        let (ds, net) = toy_setup();
        let pair = sample_pairs(&ds, 1, Polarity::Negative, 3).unwrap()[0];
        let mut with_eta = AttackConfig::fim("bpfa", AttackMode::Impersonation, 7).with_bpfa(0.5);
        with_eta.n_max = 1;
        let mut without = with_eta.clone();
        without.eta = 0.0;
        let a = run_attack(&net, &ds, &pair, &with_eta).unwrap();
        let b = run_attack(&net, &ds, &pair, &without).unwrap();
        assert_eq!(a.x_adv.data(), b.x_adv.data());
    }

    #[test]
    fn eta_zero_bitwise_equals_baseline() {
        let (ds, net) = toy_setup();
        let pair = sample_pairs(&ds, 1, Polarity::Negative, 5).unwrap()[0];
        for base in [
            AttackConfig::fim("fim", AttackMode::Impersonation, 9),
            AttackConfig::fim("mi", AttackMode::Impersonation, 9).with_momentum(1.0),
            AttackConfig::fim("di", AttackMode::Impersonation, 9).with_di(0.5),
            AttackConfig::fim("dfanet", AttackMode::Impersonation, 9).with_dropout(0.1),
        ] {
            let mut base = base;
            base.n_max = 5;
            let mut wrapped = base.clone().with_bpfa(0.3);
            wrapped.eta = 0.0;
            let a = run_attack(&net, &ds, &pair, &base).unwrap();
            let b = run_attack(&net, &ds, &pair, &wrapped).unwrap();
            assert_eq!(a.x_adv.data(), b.x_adv.data(), "attack {}", base.name);
        }
    }

    #[test]
    fn bank_bytes_closed_form_matches_observed() {
        let (ds, net) = toy_setup();
        let pair = sample_pairs(&ds, 1, Polarity::Negative, 8).unwrap()[0];
        let mut cfg = AttackConfig::fim("bpfa", AttackMode::Impersonation, 4).with_bpfa(0.2);
        cfg.n_max = 2;
        let hooks = cfg.hooks.resolve(&net).unwrap();
        let expected = bank_bytes(&hooks, &net);
        // two hooks, each on a 6x8x8 feature map (convolution and
        // normalization outputs)
        assert_eq!(expected, 2 * 6 * 8 * 8 * 8);
        let out = run_attack(&net, &ds, &pair, &cfg).unwrap();
        assert_eq!(out.trajectory[0].bank_bytes, expected);
        assert_eq!(bank_bytes(&HookSet::empty(), &net), 0);
    }

    #[test]
    fn injected_loss_exceeds_plain_after_first_iteration() {
        let (ds, net) = toy_setup();
        let pairs = sample_pairs(&ds, 10, Polarity::Negative, 13).unwrap();
        let mut hits = 0;
        let mut total = 0;
        for pair in &pairs {
            let mut cfg =
                AttackConfig::fim("bpfa", AttackMode::Impersonation, 17).with_bpfa(0.1);
            cfg.n_max = 10;
            let out = run_attack_instrumented(&net, &ds, pair, &cfg, true).unwrap();
            for row in out.trajectory.iter().filter(|r| r.t >= 2) {
                total += 1;
                if row.loss > row.plain_loss.unwrap() {
                    hits += 1;
                }
            }
        }
        assert!(
            hits as f64 >= 0.8 * total as f64,
            "injected loss exceeded plain in {hits}/{total}"
        );
    }
}
