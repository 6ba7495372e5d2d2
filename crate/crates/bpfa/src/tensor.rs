//! Dense row-major f64 tensors and the small kernel set the attack and
//! training code is built on.
//!
//! Tensors are immutable values: every operation allocates a new tensor.
//! Any operation that could produce a NaN/Inf reports it as a hard error
//! instead of letting it propagate into a `sign` call.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Self {
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Bytes occupied by the element storage.
    pub fn byte_len(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                left: self.shape.clone(),
                right: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    fn check_same_shape(&self, other: &Tensor, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn finite_checked(self, context: &'static str) -> Result<Tensor> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(context))
        }
    }

    /// Elementwise -1/0/+1.
    pub fn sign(&self) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Elementwise min(max(t, lo), hi).
    pub fn clip_box(&self, lo: &Tensor, hi: &Tensor) -> Result<Tensor> {
        self.check_same_shape(lo, "clip_box lo")?;
        self.check_same_shape(hi, "clip_box hi")?;
        let data = self
            .data
            .iter()
            .zip(lo.data.iter().zip(hi.data.iter()))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
        .finite_checked("clip_box")
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Unit-L2 rescale. Zero-norm input is a degenerate embedding and an error.
    pub fn l2_normalize(&self) -> Result<Tensor> {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        self.scale(1.0 / norm)?.finite_checked("l2_normalize")
    }

    /// x + step * sign(g). With step = +eta this adds a loss-increasing
    /// perturbation; with step = -eta a loss-decreasing one.
    pub fn axpy_sign_step(&self, g: &Tensor, step: f64) -> Result<Tensor> {
        self.check_same_shape(g, "axpy_sign_step")?;
        let data = self
            .data
            .iter()
            .zip(g.data.iter())
            .map(|(&x, &gv)| {
                let s = if gv > 0.0 {
                    1.0
                } else if gv < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                x + step * s
            })
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
        .finite_checked("axpy_sign_step")
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
        .finite_checked("add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
        .finite_checked("sub")
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v * factor).collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
        .finite_checked("scale")
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Tensor> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
        .finite_checked("map")
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_basic() {
        let t = Tensor::from_slice(&[3.2, -0.5, 0.0]);
        assert_eq!(t.sign().data(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn sign_all_zero() {
        let t = Tensor::zeros(vec![4]);
        assert_eq!(t.sign().data(), &[0.0; 4]);
    }

    #[test]
    fn clip_box_clamps() {
        let t = Tensor::from_slice(&[111.0]);
        let lo = Tensor::from_slice(&[90.0]);
        let hi = Tensor::from_slice(&[110.0]);
        assert_eq!(t.clip_box(&lo, &hi).unwrap().data(), &[110.0]);
        let t = Tensor::from_slice(&[85.0]);
        assert_eq!(t.clip_box(&lo, &hi).unwrap().data(), &[90.0]);
        let t = Tensor::from_slice(&[100.0]);
        assert_eq!(t.clip_box(&lo, &hi).unwrap().data(), &[100.0]);
    }

    #[test]
    fn clip_box_shape_mismatch() {
        let t = Tensor::from_slice(&[1.0, 2.0]);
        let lo = Tensor::from_slice(&[0.0]);
        let hi = Tensor::from_slice(&[1.0]);
        assert!(t.clip_box(&lo, &hi).is_err());
    }

    #[test]
    fn l2_normalize_cases() {
        let t = Tensor::from_slice(&[2.0, 0.0]);
        assert_eq!(t.l2_normalize().unwrap().data(), &[1.0, 0.0]);
        let t = Tensor::from_slice(&[3.0, 4.0]);
        let n = t.l2_normalize().unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15);
        assert!((n.data()[1] - 0.8).abs() < 1e-15);
        assert!(Tensor::zeros(vec![3]).l2_normalize().is_err());
    }

    #[test]
    fn axpy_sign_step_cases() {
        let x = Tensor::from_slice(&[0.5, -1.0]);
        let g = Tensor::from_slice(&[0.2, 0.0]);
        let out = x.axpy_sign_step(&g, 0.1).unwrap();
        assert_eq!(out.data(), &[0.6, -1.0]);
        let out = x.axpy_sign_step(&g, 0.0).unwrap();
        assert_eq!(out.data(), x.data());
        let x = Tensor::from_slice(&[0.5]);
        let g = Tensor::from_slice(&[0.2]);
        assert_eq!(x.axpy_sign_step(&g, -0.1).unwrap().data(), &[0.4]);
    }

    #[test]
    fn new_rejects_nan() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn sign_is_odd(v in proptest::collection::vec(-100.0f64..100.0, 1..32)) {
            let t = Tensor::from_slice(&v);
            let neg = t.scale(-1.0).unwrap();
            let lhs = neg.sign();
            let rhs = t.sign().scale(-1.0).unwrap().sign();
            prop_assert_eq!(lhs.data(), rhs.data());
        }

        #[test]
        fn sign_idempotent_on_signs(v in proptest::collection::vec(-10.0f64..10.0, 1..32)) {
            let s = Tensor::from_slice(&v).sign();
            let ss = s.sign();
            prop_assert_eq!(ss.data(), s.data());
        }

        #[test]
        fn clip_box_in_bounds_and_idempotent(
            v in proptest::collection::vec(-300.0f64..300.0, 1..32),
        ) {
            let t = Tensor::from_slice(&v);
            let lo = Tensor::filled(vec![v.len()], -50.0);
            let hi = Tensor::filled(vec![v.len()], 75.0);
            let c = t.clip_box(&lo, &hi).unwrap();
            for &x in c.data() {
                prop_assert!((-50.0..=75.0).contains(&x));
            }
            let again = c.clip_box(&lo, &hi).unwrap();
            prop_assert_eq!(again.data(), c.data());
        }

        #[test]
        fn l2_normalize_unit(v in proptest::collection::vec(-100.0f64..100.0, 1..32)) {
            let t = Tensor::from_slice(&v);
            prop_assume!(t.l2_norm() > 1e-6);
            let n = t.l2_normalize().unwrap();
            prop_assert!((n.l2_norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn axpy_step_linf(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..32),
        ) {
            let (v, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let x = Tensor::from_slice(&v);
            let grad = Tensor::from_slice(&g);
            let eta = 0.25;
            let stepped = x.axpy_sign_step(&grad, eta).unwrap();
            let diff = stepped.sub(&x).unwrap();
            for (d, gv) in diff.data().iter().zip(g.iter()) {
                if *gv != 0.0 {
                    prop_assert!((d.abs() - eta).abs() < 1e-15);
                } else {
                    prop_assert_eq!(*d, 0.0);
                }
            }
        }
    }
}
