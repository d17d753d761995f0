//! Layers with explicit forward and backward passes.
//!
//! Forward passes borrow the layer immutably; everything the backward pass
//! needs is returned as a cache or is the caller's stored input. Backward
//! passes accumulate into the parameters' gradient buffers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{col2im, im2col, matmul, Geometry, Scalar, Tensor};

/// Standard deviation of the initial convolution weights.
pub const INIT_STDDEV: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.99;

/// A named array with its gradient. Running statistics are stored as
/// non-trainable parameters without a gradient buffer. Equality ignores
/// the gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

impl<T: PartialEq> PartialEq for Param<T> {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.value == other.value
            && self.trainable == other.trainable
    }
}

impl<T: Scalar> Param<T> {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Param {
            name,
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: String, shape: Vec<usize>, value: Vec<T>) -> Self {
        Param {
            name,
            shape,
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn filled(name: String, len: usize, v: T) -> Self {
        Self::new(name, vec![len], vec![v; len])
    }

    pub fn normal(name: String, shape: Vec<usize>, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, INIT_STDDEV).unwrap();
        let value = (0..n).map(|_| T::of(dist.sample(rng))).collect();
        Self::new(name, shape, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }
}

/// 2D convolution; weight is `cout x (cin k k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub geometry: Geometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, geometry: Geometry, rng: &mut impl Rng) -> Self {
        let k = geometry.kernel;
        Conv2d {
            cin,
            cout,
            geometry,
            weight: Param::normal(format!("{name}.weight"), vec![cout, cin, k, k], rng),
            bias: Param::filled(format!("{name}.bias"), cout, T::zero()),
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.geometry.kernel * self.geometry.kernel
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: input channels", self.weight.name);
        let g = self.geometry;
        let (ho, wo) = (g.out_size(x.h), g.out_size(x.w));
        let mut y = Tensor::zeros(x.n, self.cout, ho, wo);
        let mut cols = vec![T::zero(); self.rows() * ho * wo];
        for i in 0..x.n {
            im2col(x.sample(i), x.c, x.h, x.w, g, &mut cols);
            let out = y.sample_mut(i);
            for (o, b) in self.bias.value.iter().enumerate() {
                out[o * ho * wo..(o + 1) * ho * wo].fill(*b);
            }
            matmul(
                &self.weight.value,
                false,
                &cols,
                false,
                out,
                self.cout,
                self.rows(),
                ho * wo,
                true,
            );
        }
        y
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let g = self.geometry;
        let hw = dy.h * dy.w;
        let rows = self.rows();
        let mut cols = vec![T::zero(); rows * hw];
        let mut dcols = vec![T::zero(); rows * hw];
        let mut dx = need_dx.then(|| x.zeros_like());
        for i in 0..x.n {
            let d = dy.sample(i);
            for o in 0..self.cout {
                self.bias.grad[o] += d[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
            im2col(x.sample(i), x.c, x.h, x.w, g, &mut cols);
            matmul(d, false, &cols, true, &mut self.weight.grad, self.cout, hw, rows, true);
            if let Some(dx) = dx.as_mut() {
                matmul(
                    &self.weight.value,
                    true,
                    d,
                    false,
                    &mut dcols,
                    rows,
                    self.cout,
                    hw,
                    false,
                );
                col2im(&dcols, x.c, x.h, x.w, g, dx.sample_mut(i));
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Transposed convolution, the adjoint of [`Conv2d`] with the same
/// geometry; weight is `cin x (cout k k)`. Kernel 4, stride 2, padding 1
/// exactly doubles the spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub geometry: Geometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, geometry: Geometry, rng: &mut impl Rng) -> Self {
        let k = geometry.kernel;
        ConvTranspose2d {
            cin,
            cout,
            geometry,
            weight: Param::normal(format!("{name}.weight"), vec![cin, cout, k, k], rng),
            bias: Param::filled(format!("{name}.bias"), cout, T::zero()),
        }
    }

    pub fn out_size(&self, input: usize) -> usize {
        let g = self.geometry;
        (input - 1) * g.stride + g.kernel - 2 * g.pad
    }

    fn rows(&self) -> usize {
        self.cout * self.geometry.kernel * self.geometry.kernel
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: input channels", self.weight.name);
        let (ho, wo) = (self.out_size(x.h), self.out_size(x.w));
        let hw = x.h * x.w;
        let mut y = Tensor::zeros(x.n, self.cout, ho, wo);
        let mut cols = vec![T::zero(); self.rows() * hw];
        for i in 0..x.n {
            matmul(
                &self.weight.value,
                true,
                x.sample(i),
                false,
                &mut cols,
                self.rows(),
                self.cin,
                hw,
                false,
            );
            let out = y.sample_mut(i);
            for (o, b) in self.bias.value.iter().enumerate() {
                out[o * ho * wo..(o + 1) * ho * wo].fill(*b);
            }
            col2im(&cols, self.cout, ho, wo, self.geometry, out);
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let hw = x.h * x.w;
        let ohw = dy.h * dy.w;
        let rows = self.rows();
        let mut dcols = vec![T::zero(); rows * hw];
        let mut dx = need_dx.then(|| x.zeros_like());
        for i in 0..x.n {
            let d = dy.sample(i);
            for o in 0..self.cout {
                self.bias.grad[o] += d[o * ohw..(o + 1) * ohw].iter().copied().sum::<T>();
            }
            im2col(d, self.cout, dy.h, dy.w, self.geometry, &mut dcols);
            matmul(
                x.sample(i),
                false,
                &dcols,
                true,
                &mut self.weight.grad,
                self.cin,
                hw,
                rows,
                true,
            );
            if let Some(dx) = dx.as_mut() {
                matmul(
                    &self.weight.value,
                    false,
                    &dcols,
                    false,
                    dx.sample_mut(i),
                    self.cin,
                    rows,
                    hw,
                    false,
                );
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Per-channel batch normalization over batch and space.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), channels, T::one()),
            beta: Param::filled(format!("{name}.beta"), channels, T::zero()),
            running_mean: Param::buffer(
                format!("{name}.running_mean"),
                vec![channels],
                vec![T::zero(); channels],
            ),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], vec![T::one(); channels]),
        }
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let (c, p) = (x.c, x.plane());
        let count = x.n * p;
        let inv_count = T::of(1.0 / count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for i in 0..x.n {
            let s = x.sample(i);
            for ch in 0..c {
                mean[ch] += s[ch * p..(ch + 1) * p].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_count);
        for i in 0..x.n {
            let s = x.sample(i);
            for ch in 0..c {
                var[ch] += s[ch * p..(ch + 1) * p]
                    .iter()
                    .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v *= inv_count);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(BN_EPS)).sqrt()).collect();
        let mut xhat = x.zeros_like();
        let mut y = x.zeros_like();
        for i in 0..x.n {
            let (s, xh, out) = (
                x.sample(i),
                &mut xhat.data[i * c * p..(i + 1) * c * p],
                &mut y.data[i * c * p..(i + 1) * c * p],
            );
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for k in ch * p..(ch + 1) * p {
                    let h = (s[k] - mean[ch]) * inv_std[ch];
                    xh[k] = h;
                    out[k] = g * h + b;
                }
            }
        }
        (
            y,
            BnCache {
                xhat,
                inv_std,
                mean,
                var,
                count,
            },
        )
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let (c, p) = (x.c, x.plane());
        let mut y = x.zeros_like();
        for ch in 0..c {
            let inv = T::one() / (self.running_var.value[ch] + T::of(BN_EPS)).sqrt();
            let (g, b, m) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean.value[ch]);
            for i in 0..x.n {
                let base = (i * c + ch) * p;
                for k in base..base + p {
                    y.data[k] = g * (x.data[k] - m) * inv + b;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (c, p) = (dy.c, dy.plane());
        let m = T::of(cache.count as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for i in 0..dy.n {
            for ch in 0..c {
                let base = (i * c + ch) * p;
                for k in base..base + p {
                    sum_dy[ch] += dy.data[k];
                    sum_dy_xhat[ch] += dy.data[k] * cache.xhat.data[k];
                }
            }
        }
        let mut dx = dy.zeros_like();
        for ch in 0..c {
            self.beta.grad[ch] += sum_dy[ch];
            self.gamma.grad[ch] += sum_dy_xhat[ch];
            let scale = self.gamma.value[ch] * cache.inv_std[ch] / m;
            for i in 0..dy.n {
                let base = (i * c + ch) * p;
                for k in base..base + p {
                    dx.data[k] = scale * (m * dy.data[k] - sum_dy[ch] - cache.xhat.data[k] * sum_dy_xhat[ch]);
                }
            }
        }
        dx
    }

    /// Folds a training batch's statistics into the running estimates
    /// (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let mom = T::of(BN_MOMENTUM);
        let unbias = if cache.count > 1 {
            T::of(cache.count as f64 / (cache.count - 1) as f64)
        } else {
            T::one()
        };
        for ch in 0..self.channels {
            let rm = &mut self.running_mean.value[ch];
            *rm = mom * *rm + (T::one() - mom) * cache.mean[ch];
            let rv = &mut self.running_var.value[ch];
            *rv = mom * *rv + (T::one() - mom) * cache.var[ch] * unbias;
        }
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of(slope);
    x.map(|v| if v > T::zero() { v } else { v * s })
}

/// Backward through leaky ReLU given its output (sign is preserved for a
/// positive slope).
pub fn leaky_relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of(slope);
    Tensor {
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&y, &d)| if y > T::zero() { d } else { d * s })
            .collect(),
        ..*dy
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&y, &d)| if y > T::zero() { d } else { T::zero() })
            .collect(),
        ..*dy
    }
}

/// Hyperbolic tangent clamped to the floats strictly inside (-1, 1);
/// plain `tanh` rounds to ±1 in single precision for |x| > 9.
pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let top = T::one() - T::epsilon() / T::of(2.0);
    x.map(|v| v.tanh().max(-top).min(top))
}

pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&y, &d)| d * (T::one() - y * y))
            .collect(),
        ..*dy
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&y, &d)| d * y * (T::one() - y))
            .collect(),
        ..*dy
    }
}

/// Inverted-dropout mask: kept entries are scaled by `1 / (1 - p)`.
pub fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut impl Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    Tensor {
        data: x.data.iter().zip(mask).map(|(&v, &m)| v * m).collect(),
        ..*x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deconv_doubles_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Geometry {
            kernel: 4,
            stride: 2,
            pad: 1,
        };
        let d = ConvTranspose2d::<f64>::new("d", 2, 3, g, &mut rng);
        let x = Tensor::zeros(1, 2, 5, 7);
        assert_eq!(d.forward(&x).shape(), [1, 3, 10, 14]);
        let c = Conv2d::<f64>::new("c", 3, 2, g, &mut rng);
        assert_eq!(c.forward(&d.forward(&x)).shape(), [1, 2, 5, 7]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Geometry {
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let c = Conv2d::<f64>::new("c", 2, 2, g, &mut rng);
        let x = Tensor::from_vec(1, 2, 3, 3, (0..18).map(|v| v as f64 * 0.1).collect()).unwrap();
        let y = c.forward(&x);
        for o in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut s = c.bias.value[o];
                    for i in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = (oy as isize + ky as isize - 1, ox as isize + kx as isize - 1);
                                if (0..3).contains(&iy) && (0..3).contains(&ix) {
                                    s += c.weight.value[((o * 2 + i) * 3 + ky) * 3 + kx]
                                        * x.data[(i * 3 + iy as usize) * 3 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data[(o * 3 + oy) * 3 + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn init_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Param::<f64>::normal("w".into(), vec![100_000], &mut rng);
        let n = p.value.len() as f64;
        let mean = p.value.iter().sum::<f64>() / n;
        let sd = (p.value.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.01);
        assert!((sd - 0.2).abs() < 0.01);
    }

    #[test]
    fn batchnorm_normalizes() {
        let bn = BatchNorm::<f64>::new("bn", 2);
        let x = Tensor::from_vec(2, 2, 1, 2, vec![1.0, 2.0, 10.0, 10.0, 3.0, 4.0, 20.0, 40.0]).unwrap();
        let (y, cache) = bn.forward_train(&x);
        assert_eq!(cache.mean, vec![2.5, 20.0]);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2).flat_map(|i| y.sample(i)[ch * 2..ch * 2 + 2].to_vec()).collect();
            let m: f64 = vals.iter().sum::<f64>() / 4.0;
            let v: f64 = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn sigmoid_is_stable_and_open() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![-800.0f64, 0.0, 800.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.data[1], 0.5);
        assert!(y.data.iter().all(|v| v.is_finite()));
    }
}
