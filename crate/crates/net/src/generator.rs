//! Encoder-decoder rendering-to-video generator with skip connections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::{
    apply_mask, dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward, BatchNorm,
    BnCache, Conv2d, ConvTranspose2d, Module, Param,
};
use crate::tensor::{Geometry, Scalar, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DOWN_CHANNELS: [usize; 8] = [64, 128, 256, 512, 512, 512, 512, 512];
pub const UP_CHANNELS: [usize; 8] = [512, 512, 512, 512, 256, 128, 64, 3];
pub const UP_DROPOUT: [f64; 8] = [0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0];

const DOWN_GEOMETRY: Geometry = Geometry {
    kernel: 4,
    stride: 2,
    pad: 1,
};
const REFINE_GEOMETRY: Geometry = Geometry {
    kernel: 3,
    stride: 1,
    pad: 1,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub input_size: usize,
    pub input_channels: usize,
    /// Output channels of each encoder module.
    pub down_channels: Vec<usize>,
    /// Output channels of each decoder module; the last one is the image.
    pub up_channels: Vec<usize>,
    pub dropout: Vec<f64>,
    /// Whether decoder module `j` (for `j >= 1`) receives the encoder skip.
    pub skips: Vec<bool>,
}

impl GeneratorConfig {
    /// The full-width architecture truncated to `log2(size)` levels, with
    /// every width except the image channels divided by `width_divisor`.
    pub fn for_size(input_size: usize, input_channels: usize, width_divisor: usize) -> Result<Self> {
        let depth = depth_for(input_size)?;
        if width_divisor == 0 {
            return Err(NetError::Config("width divisor must be positive".into()));
        }
        let extra = depth.saturating_sub(8);
        let down: Vec<usize> = DOWN_CHANNELS
            .iter()
            .copied()
            .chain(std::iter::repeat_n(512, extra))
            .take(depth)
            .map(|c| (c / width_divisor).max(1))
            .collect();
        let up_full: Vec<usize> = std::iter::repeat_n(512, extra).chain(UP_CHANNELS).collect();
        let drop_full: Vec<f64> = std::iter::repeat_n(0.5, extra).chain(UP_DROPOUT).collect();
        let start = up_full.len() - depth;
        let mut up: Vec<usize> = up_full[start..].iter().map(|c| (c / width_divisor).max(1)).collect();
        *up.last_mut().unwrap() = 3;
        let cfg = GeneratorConfig {
            input_size,
            input_channels,
            down_channels: down,
            up_channels: up,
            dropout: drop_full[start..].to_vec(),
            skips: vec![true; depth],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn depth(&self) -> usize {
        self.down_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let depth = depth_for(self.input_size)?;
        let bad = |m: String| Err(NetError::Config(m));
        if self.down_channels.len() != depth || self.up_channels.len() != depth {
            return bad(format!(
                "input size {} needs {depth} encoder and decoder modules",
                self.input_size
            ));
        }
        if self.dropout.len() != depth || self.skips.len() != depth {
            return bad("dropout and skip lists must have one entry per decoder module".into());
        }
        if depth < 2 {
            return bad("generator needs at least two levels".into());
        }
        if self.input_channels == 0 || self.down_channels.iter().chain(&self.up_channels).any(|&c| c == 0) {
            return bad("channel counts must be positive".into());
        }
        if *self.up_channels.last().unwrap() != 3 {
            return bad("the generator must output 3 channels".into());
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("dropout rates must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn up_input_channels(&self, j: usize) -> usize {
        let d = self.depth();
        if j == 0 {
            self.down_channels[d - 1]
        } else if self.skips[j] {
            self.up_channels[j - 1] + self.down_channels[d - 1 - j]
        } else {
            self.up_channels[j - 1]
        }
    }
}

fn depth_for(size: usize) -> Result<usize> {
    if size < 4 || !size.is_power_of_two() {
        return Err(NetError::Config(format!(
            "input size {size} must be a power of two >= 4"
        )));
    }
    Ok(size.trailing_zeros() as usize)
}

/// Strided convolution, optional batch norm, leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DownModule<T> {
    pub conv: Conv2d<T>,
    pub bn: Option<BatchNorm<T>>,
}

#[derive(Clone, Debug)]
pub struct DownCache<T> {
    pub bn: Option<BnCache<T>>,
    pub out: Tensor<T>,
}

impl<T: Scalar> DownModule<T> {
    pub fn new(name: &str, cin: usize, cout: usize, bn: bool, rng: &mut ChaCha8Rng) -> Self {
        DownModule {
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, DOWN_GEOMETRY, rng),
            bn: bn.then(|| BatchNorm::new(&format!("{name}.bn"), cout)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> DownCache<T> {
        let a = self.conv.forward(x);
        let (b, bn) = match (&self.bn, train) {
            (Some(bn), true) => {
                let (b, c) = bn.forward_train(&a);
                (b, Some(c))
            }
            (Some(bn), false) => (bn.forward_infer(&a), None),
            (None, _) => (a, None),
        };
        DownCache {
            out: leaky_relu(&b, LEAKY_SLOPE),
            bn,
        }
    }

    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        cache: &DownCache<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let mut d = leaky_relu_backward(&cache.out, dy, LEAKY_SLOPE);
        if let (Some(bn), Some(c)) = (self.bn.as_mut(), cache.bn.as_ref()) {
            d = bn.backward(c, &d);
        }
        self.conv.backward(x, &d, need_dx)
    }

    pub fn update_running(&mut self, cache: &DownCache<T>) {
        if let (Some(bn), Some(c)) = (self.bn.as_mut(), cache.bn.as_ref()) {
            bn.update_running(c);
        }
    }
}

impl<T: Scalar> Module<T> for DownModule<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        if let Some(bn) = &self.bn {
            bn.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(f);
        }
    }
}

/// Upsampling convolution, optional batch norm, dropout, ReLU, then two
/// stride-1 refinement convolutions. The last module ends in tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct UpModule<T> {
    pub deconv: ConvTranspose2d<T>,
    pub bn: Option<BatchNorm<T>>,
    pub dropout: f64,
    pub refine: [Conv2d<T>; 2],
    /// Normalizes the first refinement convolution.
    pub refine_bn: BatchNorm<T>,
    pub last: bool,
}

#[derive(Clone, Debug)]
pub struct UpCache<T> {
    pub input: Tensor<T>,
    pub bn: Option<BnCache<T>>,
    pub mask: Option<Vec<T>>,
    pub refine_bn: Option<BnCache<T>>,
    pub h1: Tensor<T>,
    pub h2: Tensor<T>,
    pub out: Tensor<T>,
}

impl<T: Scalar> UpModule<T> {
    pub fn forward(&self, input: Tensor<T>, train: bool, rng: &mut ChaCha8Rng) -> UpCache<T> {
        let a = self.deconv.forward(&input);
        let (b, bn) = match (&self.bn, train) {
            (Some(bn), true) => {
                let (b, c) = bn.forward_train(&a);
                (b, Some(c))
            }
            (Some(bn), false) => (bn.forward_infer(&a), None),
            (None, _) => (a, None),
        };
        let (c, mask) = if train && self.dropout > 0.0 {
            let m = dropout_mask(b.data.len(), self.dropout, rng);
            (apply_mask(&b, &m), Some(m))
        } else {
            (b, None)
        };
        let h1 = relu(&c);
        let r0 = self.refine[0].forward(&h1);
        let (r0, refine_bn) = if train {
            let (y, c) = self.refine_bn.forward_train(&r0);
            (y, Some(c))
        } else {
            (self.refine_bn.forward_infer(&r0), None)
        };
        let h2 = relu(&r0);
        let r = self.refine[1].forward(&h2);
        let out = if self.last { tanh(&r) } else { relu(&r) };
        UpCache {
            input,
            bn,
            mask,
            refine_bn,
            h1,
            h2,
            out,
        }
    }

    pub fn backward(&mut self, cache: &UpCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let d = if self.last {
            tanh_backward(&cache.out, dy)
        } else {
            relu_backward(&cache.out, dy)
        };
        let d = self.refine[1].backward(&cache.h2, &d, true).unwrap();
        let mut d = relu_backward(&cache.h2, &d);
        if let Some(c) = &cache.refine_bn {
            d = self.refine_bn.backward(c, &d);
        }
        let d = self.refine[0].backward(&cache.h1, &d, true).unwrap();
        let mut d = relu_backward(&cache.h1, &d);
        if let Some(m) = &cache.mask {
            d = apply_mask(&d, m);
        }
        if let (Some(bn), Some(c)) = (self.bn.as_mut(), cache.bn.as_ref()) {
            d = bn.backward(c, &d);
        }
        self.deconv.backward(&cache.input, &d, true).unwrap()
    }
}

impl<T: Scalar> Module<T> for UpModule<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.deconv.visit(f);
        if let Some(bn) = &self.bn {
            bn.visit(f);
        }
        self.refine[0].visit(f);
        self.refine_bn.visit(f);
        self.refine[1].visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.deconv.visit_mut(f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(f);
        }
        self.refine[0].visit_mut(f);
        self.refine_bn.visit_mut(f);
        self.refine[1].visit_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub down: Vec<DownModule<T>>,
    pub up: Vec<UpModule<T>>,
}

#[derive(Clone, Debug)]
pub struct GeneratorCache<T> {
    pub input: Tensor<T>,
    pub down: Vec<DownCache<T>>,
    pub up: Vec<UpCache<T>>,
}

impl<T: Scalar> GeneratorCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.up.last().unwrap().out
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.depth();
        let mut down = Vec::with_capacity(d);
        let mut cin = config.input_channels;
        for (i, &c) in config.down_channels.iter().enumerate() {
            down.push(DownModule::new(&format!("gen.down{i}"), cin, c, i > 0, &mut rng));
            cin = c;
        }
        let mut up = Vec::with_capacity(d);
        for j in 0..d {
            let name = format!("gen.up{j}");
            let cin = config.up_input_channels(j);
            let last = j == d - 1;
            // the last module upsamples at the previous width and only
            // reduces to the image channels in its final refinement
            let width = if last {
                config.up_channels[d - 2]
            } else {
                config.up_channels[j]
            };
            let out = config.up_channels[j];
            up.push(UpModule {
                deconv: ConvTranspose2d::new(&format!("{name}.deconv"), cin, width, DOWN_GEOMETRY, &mut rng),
                bn: (!last).then(|| BatchNorm::new(&format!("{name}.bn"), width)),
                dropout: config.dropout[j],
                refine: [
                    Conv2d::new(&format!("{name}.refine0"), width, width, REFINE_GEOMETRY, &mut rng),
                    Conv2d::new(&format!("{name}.refine1"), width, out, REFINE_GEOMETRY, &mut rng),
                ],
                refine_bn: BatchNorm::new(&format!("{name}.refine0.bn"), width),
                last,
            });
        }
        Ok(Generator { config, down, up })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        if x.c != c.input_channels || x.h != c.input_size || x.w != c.input_size || x.n == 0 {
            return Err(NetError::Shape(format!(
                "generator expects Nx{}x{}x{}, got {:?}",
                c.input_channels,
                c.input_size,
                c.input_size,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, train: bool, dropout_seed: u64) -> Result<GeneratorCache<T>> {
        self.check_input(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let d = self.config.depth();
        let mut down: Vec<DownCache<T>> = Vec::with_capacity(d);
        for (i, m) in self.down.iter().enumerate() {
            let cache = m.forward(if i == 0 { x } else { &down[i - 1].out }, train);
            down.push(cache);
        }
        let mut up: Vec<UpCache<T>> = Vec::with_capacity(d);
        for (j, m) in self.up.iter().enumerate() {
            let input = if j == 0 {
                down[d - 1].out.clone()
            } else if self.config.skips[j] {
                Tensor::concat(&up[j - 1].out, &down[d - 1 - j].out)?
            } else {
                up[j - 1].out.clone()
            };
            up.push(m.forward(input, train, &mut rng));
        }
        Ok(GeneratorCache {
            input: x.clone(),
            down,
            up,
        })
    }

    /// Training-mode forward pass: batch statistics and dropout drawn from
    /// `dropout_seed`.
    pub fn forward_train(&self, x: &Tensor<T>, dropout_seed: u64) -> Result<GeneratorCache<T>> {
        self.run(x, true, dropout_seed)
    }

    /// Inference: running statistics, no dropout.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cache = self.run(x, false, 0)?;
        Ok(cache.up.pop().unwrap().out)
    }

    /// Accumulates parameter gradients for `dy` at the output.
    pub fn backward(&mut self, cache: &GeneratorCache<T>, dy: &Tensor<T>) {
        let d = self.config.depth();
        let mut d_down: Vec<Option<Tensor<T>>> = vec![None; d];
        let mut d_up = dy.clone();
        for j in (0..d).rev() {
            let dx = self.up[j].backward(&cache.up[j], &d_up);
            let (prev, skip) = if j == 0 {
                (None, Some((d - 1, dx)))
            } else if self.config.skips[j] {
                let (a, b) = dx.split(self.config.up_channels[j - 1]);
                (Some(a), Some((d - 1 - j, b)))
            } else {
                (Some(dx), None)
            };
            if let Some((k, g)) = skip {
                accumulate(&mut d_down[k], g);
            }
            if let Some(p) = prev {
                d_up = p;
            }
        }
        for i in (0..d).rev() {
            let Some(g) = d_down[i].take() else { continue };
            let x = if i == 0 { &cache.input } else { &cache.down[i - 1].out };
            if let Some(dx) = self.down[i].backward(x, &cache.down[i], &g, i > 0) {
                accumulate(&mut d_down[i - 1], dx);
            }
        }
    }

    pub fn update_running(&mut self, cache: &GeneratorCache<T>) {
        for (m, c) in self.down.iter_mut().zip(&cache.down) {
            m.update_running(c);
        }
        for (m, c) in self.up.iter_mut().zip(&cache.up) {
            if let (Some(bn), Some(bc)) = (m.bn.as_mut(), c.bn.as_ref()) {
                bn.update_running(bc);
            }
            if let Some(bc) = &c.refine_bn {
                m.refine_bn.update_running(bc);
            }
        }
    }

    /// Weight shape of the first convolution, `[cout, cin, k, k]`.
    pub fn first_layer_shape(&self) -> &[usize] {
        &self.down[0].conv.weight.shape
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.down.iter().for_each(|m| m.visit(f));
        self.up.iter().for_each(|m| m.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.down.iter_mut().for_each(|m| m.visit_mut(f));
        self.up.iter_mut().for_each(|m| m.visit_mut(f));
    }
}

pub(crate) fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}
