//! Parameterised building blocks shared by both layer kinds.

use dispatcher_tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

pub(crate) const INIT_STD: f64 = 0.02;
pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) fn normal_param<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("non-empty shape")
}

/// Affine map `x · W + b`, `W` stored `[inputs, outputs]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: normal_param(&[inputs, outputs], INIT_STD, rng),
            bias: Tensor::param(&[outputs], vec![0.0; outputs]).expect("non-empty shape"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.affine(&self.weight, &self.bias)?)
    }

    pub fn outputs(&self) -> usize {
        self.bias.numel()
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gain: Tensor::param(&[width], vec![1.0; width]).expect("non-empty shape"),
            bias: Tensor::param(&[width], vec![0.0; width]).expect("non-empty shape"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.layer_norm(&self.gain, &self.bias, NORM_EPS)?)
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Two-layer position-wise network with a GELU in between.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(width: usize, inner: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(width, inner, rng),
            down: Linear::new(inner, width, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu())
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.up.collect(&format!("{prefix}.up"), out);
        self.down.collect(&format!("{prefix}.down"), out);
    }
}
