use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, Tensor};

/// Hands out contiguous parameter ranges and records their initial values.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    values: Vec<f64>,
}

impl ParamAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform He initialisation, `U(±√(6/fan_in))`.
    pub fn uniform(&mut self, len: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Range<usize> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let start = self.values.len();
        self.values.extend((0..len).map(|_| rng.random_range(-bound..bound)));
        start..self.values.len()
    }

    /// Uniform `U(±scale)`.
    pub fn scaled(&mut self, len: usize, scale: f64, rng: &mut ChaCha8Rng) -> Range<usize> {
        let start = self.values.len();
        self.values.extend((0..len).map(|_| rng.random_range(-scale..scale)));
        start..self.values.len()
    }

    pub fn zeros(&mut self, len: usize) -> Range<usize> {
        let start = self.values.len();
        self.values.resize(start + len, 0.0);
        start..self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn finish(self) -> Vec<f64> {
        self.values
    }
}

/// `k×k` convolution, stride 1, zero padding `k/2` (same size output).
/// Weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl Conv2d {
    pub fn new(
        alloc: &mut ParamAllocator,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let fan_in = in_channels * kernel * kernel;
        let weight = alloc.uniform(out_channels * fan_in, fan_in, rng);
        let bias = alloc.zeros(out_channels);
        Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias,
        }
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, cols: &mut [f64]) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        for c in 0..self.in_channels {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        let out = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        for (x, o) in out.iter_mut().enumerate() {
                            let sx = x as isize + dx;
                            *o = if sx < 0 || sx >= w as isize {
                                0.0
                            } else {
                                src[sx as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, dx: &mut [f64]) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                    let oy = ky as isize - pad;
                    let ox = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + oy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        for (x, &v) in row[y * w..(y + 1) * w].iter().enumerate() {
                            let sx = x as isize + ox;
                            if sx >= 0 && sx < w as isize {
                                dst[sx as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channels");
        let hw = h * w;
        let kk = self.in_channels * self.kernel * self.kernel;
        let wt = &p[self.weight.clone()];
        let b = &p[self.bias.clone()];
        let mut out = Tensor::zeros([n, self.out_channels, h, w]);
        let mut cols = vec![0.0; kk * hw];
        for i in 0..n {
            self.im2col(x.sample(i), h, w, &mut cols);
            let dst = &mut out.data_mut()[i * self.out_channels * hw..(i + 1) * self.out_channels * hw];
            for (o, chunk) in dst.chunks_exact_mut(hw).enumerate() {
                chunk.fill(b[o]);
            }
            gemm(self.out_channels, kk, hw, wt, false, &cols, false, 1.0, dst);
        }
        out
    }

    pub fn backward(&self, p: &[f64], x: &Tensor, dy: &Tensor, g: &mut [f64]) -> Tensor {
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let kk = self.in_channels * self.kernel * self.kernel;
        let wt = &p[self.weight.clone()];
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![0.0; kk * hw];
        let mut dcols = vec![0.0; kk * hw];
        for i in 0..n {
            let dyi = dy.sample(i);
            {
                let gb = &mut g[self.bias.clone()];
                for (o, chunk) in dyi.chunks_exact(hw).enumerate() {
                    gb[o] += chunk.iter().sum::<f64>();
                }
            }
            self.im2col(x.sample(i), h, w, &mut cols);
            // dW += dY · colsᵀ
            gemm(
                self.out_channels,
                hw,
                kk,
                dyi,
                false,
                &cols,
                true,
                1.0,
                &mut g[self.weight.clone()],
            );
            // dcols = Wᵀ · dY
            gemm(kk, self.out_channels, hw, wt, true, dyi, false, 0.0, &mut dcols);
            let len = self.in_channels * hw;
            self.col2im(&dcols, h, w, &mut dx.data_mut()[i * len..(i + 1) * len]);
        }
        dx
    }
}

/// Fully connected layer over `N×D×1×1` tensors; weights `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl Linear {
    pub fn new(alloc: &mut ParamAllocator, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = alloc.uniform(inputs * outputs, inputs, rng);
        let bias = alloc.zeros(outputs);
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(x.sample_len(), self.inputs, "linear input width");
        let b = &p[self.bias.clone()];
        let mut out = Tensor::zeros([n, self.outputs, 1, 1]);
        for row in out.data_mut().chunks_exact_mut(self.outputs) {
            row.copy_from_slice(b);
        }
        gemm(
            n,
            self.inputs,
            self.outputs,
            x.data(),
            false,
            &p[self.weight.clone()],
            true,
            1.0,
            out.data_mut(),
        );
        out
    }

    pub fn backward(&self, p: &[f64], x: &Tensor, dy: &Tensor, g: &mut [f64]) -> Tensor {
        let n = x.batch();
        {
            let gb = &mut g[self.bias.clone()];
            for row in dy.data().chunks_exact(self.outputs) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        gemm(
            self.outputs,
            n,
            self.inputs,
            dy.data(),
            true,
            x.data(),
            false,
            1.0,
            &mut g[self.weight.clone()],
        );
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            n,
            self.outputs,
            self.inputs,
            dy.data(),
            false,
            &p[self.weight.clone()],
            false,
            0.0,
            dx.data_mut(),
        );
        dx
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(v: f64) -> f64 {
    v * sigmoid(v)
}

/// d/dv of `silu(v)`.
pub fn silu_grad(v: f64) -> f64 {
    let s = sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv(Conv2d),
    Linear(Linear),
    Silu,
    Sigmoid,
    /// 2×2 average pooling; odd trailing rows/columns are dropped.
    AvgPool2,
    /// 2× nearest-neighbour upsampling.
    Upsample2,
    GlobalAvgPool,
    Flatten,
}

impl Layer {
    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(c) => c.forward(p, x),
            Layer::Linear(l) => l.forward(p, x),
            Layer::Silu => Tensor::new(x.shape(), x.data().iter().map(|&v| silu(v)).collect()),
            Layer::Sigmoid => Tensor::new(x.shape(), x.data().iter().map(|&v| sigmoid(v)).collect()),
            Layer::AvgPool2 => avg_pool2(x),
            Layer::Upsample2 => upsample2(x),
            Layer::GlobalAvgPool => {
                let [n, c, h, w] = x.shape();
                let hw = (h * w) as f64;
                let data = x
                    .data()
                    .chunks_exact(h * w)
                    .map(|p| p.iter().sum::<f64>() / hw)
                    .collect();
                Tensor::new([n, c, 1, 1], data)
            }
            Layer::Flatten => {
                let n = x.batch();
                let d = x.sample_len();
                x.clone().reshape([n, d, 1, 1])
            }
        }
    }

    /// Gradient with respect to the input. `y` is this layer's forward output.
    pub fn backward(&self, p: &[f64], x: &Tensor, y: &Tensor, dy: &Tensor, g: &mut [f64]) -> Tensor {
        match self {
            Layer::Conv(c) => c.backward(p, x, dy, g),
            Layer::Linear(l) => l.backward(p, x, dy, g),
            Layer::Silu => Tensor::new(
                x.shape(),
                x.data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &d)| d * silu_grad(v))
                    .collect(),
            ),
            Layer::Sigmoid => Tensor::new(
                x.shape(),
                y.data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&s, &d)| d * s * (1.0 - s))
                    .collect(),
            ),
            Layer::AvgPool2 => avg_pool2_backward(x.shape(), dy),
            Layer::Upsample2 => upsample2_backward(x.shape(), dy),
            Layer::GlobalAvgPool => {
                let [_, _, h, w] = x.shape();
                let hw = h * w;
                let data = dy
                    .data()
                    .iter()
                    .flat_map(|&d| std::iter::repeat_n(d / hw as f64, hw))
                    .collect();
                Tensor::new(x.shape(), data)
            }
            Layer::Flatten => dy.clone().reshape(x.shape()),
        }
    }
}

pub(crate) fn avg_pool2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let src = x.data();
    for (plane, dst) in out.data_mut().chunks_exact_mut(oh * ow).enumerate() {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i = base + 2 * y * w + 2 * xx;
                dst[y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(in_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let [_, _, h, w] = in_shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(in_shape);
    let dxd = dx.data_mut();
    for (plane, src) in dy.data().chunks_exact(oh * ow).enumerate() {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * src[y * ow + xx];
                let i = base + 2 * y * w + 2 * xx;
                dxd[i] += g;
                dxd[i + 1] += g;
                dxd[i + w] += g;
                dxd[i + w + 1] += g;
            }
        }
    }
    dx
}

pub(crate) fn upsample2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for (src, dst) in x
        .data()
        .chunks_exact(h * w)
        .zip(out.data_mut().chunks_exact_mut(oh * ow))
    {
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(in_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let [_, _, h, w] = in_shape;
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = Tensor::zeros(in_shape);
    for (src, dst) in dy
        .data()
        .chunks_exact(oh * ow)
        .zip(dx.data_mut().chunks_exact_mut(h * w))
    {
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
            }
        }
    }
    dx
}

/// A chain of layers sharing one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(p, &cur);
        }
        cur
    }

    /// Forward pass keeping every activation; `tape[0]` is the input and
    /// `tape.last()` the output.
    pub fn forward_tape(&self, p: &[f64], x: &Tensor) -> Vec<Tensor> {
        let mut tape = Vec::with_capacity(self.layers.len() + 1);
        tape.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(p, tape.last().expect("non-empty tape"));
            tape.push(next);
        }
        tape
    }

    /// Backpropagate `dy` through a recorded tape, accumulating parameter
    /// gradients into `g`. Returns the gradient with respect to the input.
    pub fn backward(&self, p: &[f64], tape: &[Tensor], dy: Tensor, g: &mut [f64]) -> Tensor {
        let mut grad = dy;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward(p, &tape[i], &tape[i + 1], &grad, g);
        }
        grad
    }
}
