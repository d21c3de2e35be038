//! Layers with explicit forward caches and backward passes.
//!
//! Activations are feature-major: a conv activation is `[channels, N·H·W]`
//! (sample-major columns, row-major pixels within a sample), a dense
//! activation is `[features, N]`. Every sample is one column (or one block
//! of `H·W` columns), so batch norm always reduces along rows.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor with its gradient and SGD momentum buffer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Array2<f32>,
    pub grad: Array2<f32>,
    pub velocity: Array2<f32>,
    /// Multiplier on the base learning rate for the whole tensor.
    pub lr_mult: f32,
    /// Optional extra multiplier per output row (used for the unknown-class row).
    pub row_lr: Option<Vec<f32>>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f32>) -> Self {
        let shape = value.raw_dim();
        Self {
            name: name.into(),
            value,
            grad: Array2::zeros(shape),
            velocity: Array2::zeros(shape),
            lr_mult: 1.0,
            row_lr: None,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

fn kaiming_normal<R: Rng + ?Sized>(rows: usize, fan_in: usize, rng: &mut R) -> Array2<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, fan_in), || normal.sample(rng) as f32)
}

fn uniform_fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Spatial extent of a conv activation batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Spatial {
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl Spatial {
    pub fn columns(&self) -> usize {
        self.n * self.h * self.w
    }
}

/// 3×3 convolution, stride 1, zero padding 1, no bias.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: Param,
    in_channels: usize,
    cols: Option<Array2<f32>>,
    spatial: Option<Spatial>,
}

impl Conv3x3 {
    pub fn new<R: Rng + ?Sized>(name: &str, in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                kaiming_normal(out_channels, in_channels * 9, rng),
            ),
            in_channels,
            cols: None,
            spatial: None,
        }
    }

    fn im2col(&self, x: &Array2<f32>, sp: Spatial) -> Array2<f32> {
        let (h, w) = (sp.h, sp.w);
        let hw = h * w;
        let mut cols = Array2::<f32>::zeros((self.in_channels * 9, sp.columns()));
        for c in 0..self.in_channels {
            let src = x.row(c);
            let src = src.as_slice().expect("contiguous activation row");
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut row = cols.row_mut(c * 9 + ky * 3 + kx);
                    let dst = row.as_slice_mut().expect("contiguous column row");
                    for n in 0..sp.n {
                        let base = n * hw;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let (x0, x1) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                            let d = base + y * w;
                            let s = base + sy as usize * w;
                            for xx in x0..x1 {
                                dst[d + xx] = src[s + xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f32>, sp: Spatial) -> Array2<f32> {
        let (h, w) = (sp.h, sp.w);
        let hw = h * w;
        let mut dx = Array2::<f32>::zeros((self.in_channels, sp.columns()));
        for c in 0..self.in_channels {
            let mut out = dx.row_mut(c);
            let out = out.as_slice_mut().expect("contiguous gradient row");
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = dcols.row(c * 9 + ky * 3 + kx);
                    let src = row.as_slice().expect("contiguous column row");
                    for n in 0..sp.n {
                        let base = n * hw;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let (x0, x1) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                            let d = base + y * w;
                            let s = base + sy as usize * w;
                            for xx in x0..x1 {
                                out[s + xx + kx - 1] += src[d + xx];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: &Array2<f32>, sp: Spatial, mode: Mode) -> Array2<f32> {
        let cols = self.im2col(x, sp);
        let out = self.weight.value.dot(&cols);
        if mode == Mode::Train {
            self.cols = Some(cols);
            self.spatial = Some(sp);
        }
        out
    }

    /// Accumulates the weight gradient; returns the input gradient when `need_input_grad`.
    pub fn backward(&mut self, dout: &Array2<f32>, need_input_grad: bool) -> Option<Array2<f32>> {
        let cols = self.cols.take().expect("conv backward without a training forward");
        let sp = self.spatial.expect("conv spatial cached");
        if self.weight.trainable {
            ndarray::linalg::general_mat_mul(1.0, dout, &cols.t(), 1.0, &mut self.weight.grad);
        }
        if need_input_grad {
            let dcols = self.weight.value.t().dot(dout);
            Some(self.col2im(&dcols, sp))
        } else {
            None
        }
    }
}

/// Batch normalization over the columns of each row.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array2<f32>,
    pub running_var: Array2<f32>,
    momentum: f32,
    eps: f32,
    xhat: Option<Array2<f32>>,
    inv_std: Option<Vec<f32>>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Array2::ones((channels, 1))),
            beta: Param::new(format!("{name}.beta"), Array2::zeros((channels, 1))),
            running_mean: Array2::zeros((channels, 1)),
            running_var: Array2::ones((channels, 1)),
            momentum: 0.1,
            eps: 1e-5,
            xhat: None,
            inv_std: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, mode: Mode) -> Array2<f32> {
        let m = x.ncols();
        let mut out = x.clone();
        match mode {
            Mode::Eval => {
                for (c, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                    let inv = 1.0 / (self.running_var[[c, 0]] + self.eps).sqrt();
                    let (mean, g, b) = (
                        self.running_mean[[c, 0]],
                        self.gamma.value[[c, 0]],
                        self.beta.value[[c, 0]],
                    );
                    row.mapv_inplace(|v| (v - mean) * inv * g + b);
                }
            }
            Mode::Train => {
                let mut inv_std = Vec::with_capacity(x.nrows());
                let mut xhat = x.clone();
                for (c, (mut row, mut hat)) in out.axis_iter_mut(Axis(0)).zip(xhat.axis_iter_mut(Axis(0))).enumerate() {
                    let mean = hat.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
                    let var = hat.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m as f64;
                    let inv = 1.0 / (var as f32 + self.eps).sqrt();
                    let (g, b) = (self.gamma.value[[c, 0]], self.beta.value[[c, 0]]);
                    let mean = mean as f32;
                    Zip::from(&mut row).and(&mut hat).for_each(|o, h| {
                        *h = (*h - mean) * inv;
                        *o = *h * g + b;
                    });
                    inv_std.push(inv);
                    let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
                    let rm = &mut self.running_mean[[c, 0]];
                    *rm = (1.0 - self.momentum) * *rm + self.momentum * mean;
                    let rv = &mut self.running_var[[c, 0]];
                    *rv = (1.0 - self.momentum) * *rv + self.momentum * unbiased as f32;
                }
                self.xhat = Some(xhat);
                self.inv_std = Some(inv_std);
            }
        }
        out
    }

    pub fn backward(&mut self, dout: &Array2<f32>) -> Array2<f32> {
        let xhat = self
            .xhat
            .take()
            .expect("batch norm backward without a training forward");
        let inv_std = self.inv_std.take().expect("batch norm cache");
        let m = dout.ncols() as f32;
        let mut dx = Array2::<f32>::zeros(dout.raw_dim());
        for c in 0..dout.nrows() {
            let dy = dout.row(c);
            let hat = xhat.row(c);
            let mut sum_dy = 0.0f64;
            let mut sum_dy_hat = 0.0f64;
            Zip::from(&dy).and(&hat).for_each(|&d, &h| {
                sum_dy += d as f64;
                sum_dy_hat += (d * h) as f64;
            });
            if self.gamma.trainable {
                self.gamma.grad[[c, 0]] += sum_dy_hat as f32;
                self.beta.grad[[c, 0]] += sum_dy as f32;
            }
            let g = self.gamma.value[[c, 0]];
            let k = g * inv_std[c] / m;
            let (sdy, sdyh) = (sum_dy as f32, sum_dy_hat as f32);
            Zip::from(dx.row_mut(c))
                .and(&dy)
                .and(&hat)
                .for_each(|o, &d, &h| *o = k * (m * d - sdy - h * sdyh));
        }
        dx
    }
}

/// Elementwise `max(x, slope·x)`; `slope = 0` is a plain rectifier.
#[derive(Clone, Debug)]
pub struct LeakyRelu {
    slope: f32,
    input: Option<Array2<f32>>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self { slope, input: None }
    }

    pub fn forward(&mut self, x: Array2<f32>, mode: Mode) -> Array2<f32> {
        let slope = self.slope;
        let out = x.mapv(|v| if v > 0.0 { v } else { slope * v });
        if mode == Mode::Train {
            self.input = Some(x);
        }
        out
    }

    pub fn backward(&mut self, mut dout: Array2<f32>) -> Array2<f32> {
        let x = self
            .input
            .take()
            .expect("activation backward without a training forward");
        let slope = self.slope;
        Zip::from(&mut dout).and(&x).for_each(|d, &v| {
            if v <= 0.0 {
                *d *= slope;
            }
        });
        dout
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    argmax: Option<Vec<u32>>,
    input_cols: usize,
}

impl MaxPool2 {
    pub fn output(sp: Spatial) -> Spatial {
        Spatial {
            n: sp.n,
            h: sp.h / 2,
            w: sp.w / 2,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, sp: Spatial, mode: Mode) -> Array2<f32> {
        let op = Self::output(sp);
        let mut out = Array2::<f32>::zeros((x.nrows(), op.columns()));
        let mut argmax = vec![0u32; x.nrows() * op.columns()];
        for c in 0..x.nrows() {
            let src = x.row(c);
            let src = src.as_slice().expect("contiguous activation row");
            let mut dst = out.row_mut(c);
            let dst = dst.as_slice_mut().expect("contiguous output row");
            for n in 0..sp.n {
                for y in 0..op.h {
                    for xx in 0..op.w {
                        let o = n * op.h * op.w + y * op.w + xx;
                        let i0 = n * sp.h * sp.w + 2 * y * sp.w + 2 * xx;
                        let mut best = i0;
                        for cand in [i0 + 1, i0 + sp.w, i0 + sp.w + 1] {
                            if src[cand] > src[best] {
                                best = cand;
                            }
                        }
                        dst[o] = src[best];
                        argmax[c * op.columns() + o] = best as u32;
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.argmax = Some(argmax);
            self.input_cols = sp.columns();
        }
        out
    }

    pub fn backward(&mut self, dout: &Array2<f32>) -> Array2<f32> {
        let argmax = self.argmax.take().expect("pool backward without a training forward");
        let cols = dout.ncols();
        let mut dx = Array2::<f32>::zeros((dout.nrows(), self.input_cols));
        for c in 0..dout.nrows() {
            let mut row = dx.row_mut(c);
            for (o, &g) in dout.row(c).iter().enumerate() {
                row[argmax[c * cols + o] as usize] += g;
            }
        }
        dx
    }
}

/// Averages each sample's `H·W` block: `[C, N·H·W] -> [C, N]`.
pub fn global_avg_pool(x: &Array2<f32>, sp: Spatial) -> Array2<f32> {
    let hw = sp.h * sp.w;
    Array2::from_shape_fn((x.nrows(), sp.n), |(c, n)| {
        x.row(c).slice(ndarray::s![n * hw..(n + 1) * hw]).sum() / hw as f32
    })
}

pub fn global_avg_pool_backward(dout: &Array2<f32>, sp: Spatial) -> Array2<f32> {
    let hw = sp.h * sp.w;
    Array2::from_shape_fn((dout.nrows(), sp.columns()), |(c, col)| dout[[c, col / hw]] / hw as f32)
}

/// Affine layer `y = W x + b` over feature-major columns.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Array2<f32>>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), uniform_fan_in(outputs, inputs, inputs, rng)),
            bias: Param::new(format!("{name}.bias"), uniform_fan_in(outputs, 1, inputs, rng)),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&mut self, x: &Array2<f32>, mode: Mode) -> Array2<f32> {
        let mut out = self.weight.value.dot(x);
        out += &self.bias.value;
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, dout: &Array2<f32>) -> Array2<f32> {
        let x = self.input.take().expect("linear backward without a training forward");
        if self.weight.trainable {
            ndarray::linalg::general_mat_mul(1.0, dout, &x.t(), 1.0, &mut self.weight.grad);
            self.bias.grad += &dout.sum_axis(Axis(1)).insert_axis(Axis(1));
        }
        self.weight.value.t().dot(dout)
    }
}
