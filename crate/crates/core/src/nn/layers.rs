use ndarray::IxDyn;
use rand::Rng;

use super::graph::{Graph, Tensor, Var};
use super::params::{ParamId, ParamStore};

pub const LEAKY_SLOPE: f32 = 0.01;
const NORM_EPS: f32 = 1e-5;

fn uniform(shape: &[usize], bound: f32, rng: &mut impl Rng) -> Tensor {
    Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..bound))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / (cin * kernel * kernel) as f32).sqrt();
        Self::with_bound(store, name, cin, cout, kernel, stride, pad, bound, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_bound(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bound: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&[cout, cin, kernel, kernel], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(IxDyn(&[cout])));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2x2 {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose2x2 {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        // each output pixel sees exactly one tap per input channel
        let bound = (6.0 / cin as f32).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(&[cin, cout, 2, 2], bound, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(IxDyn(&[cout])));
        ConvTranspose2x2 { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose2x2(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(IxDyn(&[channels])));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(IxDyn(&[channels])));
        InstanceNorm { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.instance_norm(x, gamma, beta, NORM_EPS)
    }
}

/// Convolution, instance normalization, leaky ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: InstanceNorm,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, kernel, stride, pad, rng),
            norm: InstanceNorm::new(store, &format!("{name}.norm"), cout),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let y = self.conv.forward(g, store, x);
        let y = self.norm.forward(g, store, y);
        g.leaky_relu(y, LEAKY_SLOPE)
    }
}
