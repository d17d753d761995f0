//! Conditional patch discriminator over (conditioning, image) pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::generator::{DownCache, DownModule};
use crate::layers::{sigmoid, sigmoid_backward, Conv2d, Module, Param};
use crate::tensor::{Geometry, Scalar, Tensor};

pub const DISC_CHANNELS: [usize; 4] = [64, 128, 256, 512];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    /// Conditioning channels plus the 3 image channels.
    pub input_channels: usize,
    pub channels: Vec<usize>,
}

impl DiscriminatorConfig {
    pub fn new(input_size: usize, conditioning_channels: usize, width_divisor: usize) -> Result<Self> {
        if width_divisor == 0 {
            return Err(NetError::Config("width divisor must be positive".into()));
        }
        let cfg = DiscriminatorConfig {
            input_size,
            input_channels: conditioning_channels + 3,
            channels: DISC_CHANNELS.iter().map(|c| (c / width_divisor).max(1)).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.channels.len();
        if blocks == 0 || self.channels.contains(&0) || self.input_channels == 0 {
            return Err(NetError::Config("discriminator needs positive channel counts".into()));
        }
        let scale = 1usize << blocks;
        if self.input_size < scale || !self.input_size.is_multiple_of(scale) {
            return Err(NetError::Config(format!(
                "input size {} is not divisible by {scale}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        self.input_size >> self.channels.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub blocks: Vec<DownModule<T>>,
    pub head: Conv2d<T>,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorCache<T> {
    pub input: Tensor<T>,
    pub blocks: Vec<DownCache<T>>,
    /// Per-patch probabilities of being real.
    pub scores: Tensor<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = config.input_channels;
        let mut blocks = Vec::new();
        for (i, &c) in config.channels.iter().enumerate() {
            blocks.push(DownModule::new(&format!("disc.block{i}"), cin, c, i > 0, &mut rng));
            cin = c;
        }
        let head = Conv2d::new(
            "disc.head",
            cin,
            1,
            Geometry {
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            &mut rng,
        );
        Ok(Discriminator { config, blocks, head })
    }

    /// Concatenates the conditioning and the image along channels.
    pub fn pair(conditioning: &Tensor<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        Tensor::concat(conditioning, image)
    }

    fn run(&self, x: &Tensor<T>, train: bool) -> Result<DiscriminatorCache<T>> {
        let c = &self.config;
        if x.c != c.input_channels || x.h != c.input_size || x.w != c.input_size {
            return Err(NetError::Shape(format!(
                "discriminator expects Nx{}x{}x{}, got {:?}",
                c.input_channels,
                c.input_size,
                c.input_size,
                x.shape()
            )));
        }
        let mut blocks: Vec<DownCache<T>> = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let cache = b.forward(if i == 0 { x } else { &blocks[i - 1].out }, train);
            blocks.push(cache);
        }
        let scores = sigmoid(&self.head.forward(&blocks.last().unwrap().out));
        Ok(DiscriminatorCache {
            input: x.clone(),
            blocks,
            scores,
        })
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<DiscriminatorCache<T>> {
        self.run(x, true)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false)?.scores)
    }

    /// Accumulates parameter gradients for `d_scores`; returns the input
    /// gradient when `need_dx`.
    pub fn backward(
        &mut self,
        cache: &DiscriminatorCache<T>,
        d_scores: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let d = sigmoid_backward(&cache.scores, d_scores);
        let mut d = self.head.backward(&cache.blocks.last().unwrap().out, &d, true).unwrap();
        for i in (0..self.blocks.len()).rev() {
            let x = if i == 0 { &cache.input } else { &cache.blocks[i - 1].out };
            d = self.blocks[i].backward(x, &cache.blocks[i], &d, i > 0 || need_dx)?;
        }
        Some(d)
    }

    pub fn update_running(&mut self, cache: &DiscriminatorCache<T>) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.update_running(c);
        }
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.blocks.iter().for_each(|b| b.visit(f));
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.head.visit_mut(f);
    }
}
