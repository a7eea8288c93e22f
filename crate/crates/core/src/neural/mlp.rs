//! Fully connected network with leaky-ReLU hidden layers and a linear head,
//! evaluated a batch at a time. Weights live in a caller-owned flat slice so
//! the optimizer, the moving average and checkpoints all see one vector.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub output: usize,
    pub leaky_slope: f32,
}

impl MlpConfig {
    pub fn new(input: usize, output: usize) -> Self {
        Self {
            input,
            hidden: 32,
            hidden_layers: 3,
            output,
            leaky_slope: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    layers: Vec<Layer>,
    param_count: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `acts[0]` is the input; `acts[i]` the output of hidden layer `i`.
    acts: Vec<Array2<f32>>,
}

impl Mlp {
    pub fn new(config: MlpConfig) -> Self {
        let mut dims = vec![config.input];
        dims.extend(std::iter::repeat_n(config.hidden, config.hidden_layers));
        dims.push(config.output);
        let mut layers = Vec::new();
        let mut offset = 0;
        for w in dims.windows(2) {
            let weight = offset;
            let bias = weight + w[0] * w[1];
            offset = bias + w[1];
            layers.push(Layer {
                fan_in: w[0],
                fan_out: w[1],
                weight,
                bias,
            });
        }
        Self {
            config,
            layers,
            param_count: offset,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Uniform He-style initialization, zero biases.
    pub fn init_params(&self, params: &mut [f32], rng: &mut RngStream) {
        for l in &self.layers {
            let bound = (6.0 / l.fan_in as f32).sqrt();
            for p in &mut params[l.weight..l.bias] {
                *p = (rng.next_f32() * 2.0 - 1.0) * bound;
            }
            params[l.bias..l.bias + l.fan_out].fill(0.0);
        }
    }

    /// Scale the output layer's weights and set its biases to `bias`.
    pub fn init_output(&self, params: &mut [f32], weight_scale: f32, bias: f32) {
        let l = self.layers.last().expect("at least one layer");
        params[l.weight..l.bias].iter_mut().for_each(|w| *w *= weight_scale);
        params[l.bias..l.bias + l.fan_out].fill(bias);
    }

    /// Signs of every hidden pre-activation for a batch, used to detect
    /// finite-difference steps that cross a kink.
    pub fn activation_pattern(&self, params: &[f32], input: Array2<f32>) -> Vec<bool> {
        let (_, cache) = self.forward(params, input, true);
        let cache = cache.expect("kept");
        cache.acts[1..].iter().flat_map(|a| a.iter().map(|&v| v > 0.0).collect::<Vec<_>>()).collect()
    }

    fn weight<'a>(&self, params: &'a [f32], l: &Layer) -> ArrayView2<'a, f32> {
        ArrayView2::from_shape((l.fan_in, l.fan_out), &params[l.weight..l.bias]).expect("layer shape")
    }

    fn bias<'a>(&self, params: &'a [f32], l: &Layer) -> ArrayView1<'a, f32> {
        ArrayView1::from(&params[l.bias..l.bias + l.fan_out])
    }

    /// Evaluate a batch (`n x input`). Returns the raw head output
    /// (`n x output`) and, when asked, the activations for `backward`.
    pub fn forward(&self, params: &[f32], input: Array2<f32>, keep: bool) -> (Array2<f32>, Option<MlpCache>) {
        debug_assert_eq!(input.ncols(), self.config.input);
        let slope = self.config.leaky_slope;
        let mut acts = Vec::new();
        let mut x = input;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = x.dot(&self.weight(params, l));
            z += &self.bias(params, l);
            if i < last {
                z.mapv_inplace(|v| if v > 0.0 { v } else { v * slope });
            }
            if keep {
                acts.push(x);
            }
            x = z;
        }
        (x, keep.then_some(MlpCache { acts }))
    }

    /// Accumulate parameter gradients into `grad` given `d_out`
    /// (`n x output`); returns the gradient with respect to the input.
    pub fn backward(&self, params: &[f32], cache: &MlpCache, d_out: Array2<f32>, grad: &mut [f32]) -> Array2<f32> {
        let slope = self.config.leaky_slope;
        let mut delta = d_out;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &cache.acts[i];
            {
                let (w_part, b_part) = grad[l.weight..l.bias + l.fan_out].split_at_mut(l.fan_in * l.fan_out);
                let mut gw = ArrayViewMut2::from_shape((l.fan_in, l.fan_out), w_part).expect("layer shape");
                ndarray::linalg::general_mat_mul(1.0, &x.t(), &delta, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(b_part);
                gb += &delta.sum_axis(Axis(0));
            }
            let mut dx = delta.dot(&self.weight(params, l).t());
            if i > 0 {
                // x is the leaky-ReLU output of the previous layer; its sign
                // matches the pre-activation's
                ndarray::Zip::from(&mut dx).and(x).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d *= slope;
                    }
                });
            }
            delta = dx;
        }
        delta
    }
}
