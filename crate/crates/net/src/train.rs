//! Alternating adversarial training.

use std::path::Path;

use log::{debug, warn};
use portrait_core::conditioning::{Corpus, TrainingPair};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::error::{NetError, Result};
use crate::layers::Module;
use crate::loss;
use crate::network::Network;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA_L1: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_l1: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub first_momentum: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_l1: DEFAULT_LAMBDA_L1,
            batch_size: 4,
            iterations: 1000,
            learning_rate: 2e-4,
            first_momentum: 0.5,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.lambda_l1 > 0.0 && self.learning_rate > 0.0 && self.batch_size > 0;
        if !positive || !(0.0..1.0).contains(&self.first_momentum) {
            return Err(NetError::Config(
                "lambda, learning rate and batch size must be positive, momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.first_momentum,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub gen_adv: f64,
    pub gen_l1: f64,
    pub disc: f64,
}

/// Random access to training pairs.
pub trait PairSource {
    fn len(&self) -> usize;
    fn pair(&self, i: usize) -> Result<TrainingPair>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PairSource for [TrainingPair] {
    fn len(&self) -> usize {
        <[TrainingPair]>::len(self)
    }

    fn pair(&self, i: usize) -> Result<TrainingPair> {
        Ok(self[i].clone())
    }
}

impl PairSource for Vec<TrainingPair> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn pair(&self, i: usize) -> Result<TrainingPair> {
        Ok(self[i].clone())
    }
}

impl PairSource for Corpus<'_> {
    fn len(&self) -> usize {
        Corpus::len(self)
    }

    fn pair(&self, i: usize) -> Result<TrainingPair> {
        Ok(Corpus::pair(self, i)?)
    }
}

/// Stacks pairs into a conditioning batch and a ground-truth batch.
pub fn batch(pairs: &[TrainingPair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = pairs.first().ok_or_else(|| NetError::Shape("empty batch".into()))?;
    let (w, h, c) = (first.window.width, first.window.height, first.window.channels());
    let mut x = Vec::with_capacity(pairs.len() * c * w * h);
    let mut y = Vec::with_capacity(pairs.len() * 3 * w * h);
    for p in pairs {
        if p.window.width != w || p.window.height != h || p.window.channels() != c {
            return Err(NetError::Shape("batch pairs differ in size".into()));
        }
        x.extend_from_slice(&p.window.data);
        y.extend_from_slice(&p.ground_truth);
    }
    Ok((
        Tensor::from_vec(pairs.len(), c, h, w, x)?,
        Tensor::from_vec(pairs.len(), 3, h, w, y)?,
    ))
}

/// Owns the network and both optimizers; one [`Trainer::step`] is one
/// discriminator update followed by one generator update.
pub struct Trainer {
    pub network: Network<f32>,
    pub config: TrainConfig,
    pub history: Vec<LossRecord>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    order: Vec<usize>,
    cursor: usize,
    shuffle: ChaCha8Rng,
}

impl Trainer {
    pub fn new(network: Network<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            opt_g: Adam::new(config.adam()),
            opt_d: Adam::new(config.adam()),
            shuffle: ChaCha8Rng::seed_from_u64(config.shuffle_seed),
            network,
            config,
            history: Vec::new(),
            order: Vec::new(),
            cursor: 0,
        })
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let b = self.config.batch_size.min(n);
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.shuffle);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    fn dropout_seed(&self) -> u64 {
        self.network.seed.rotate_left(17) ^ (self.history.len() as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    /// One training iteration. On a non-finite loss the network is left as
    /// it was before the call.
    pub fn step(&mut self, corpus: &(impl PairSource + ?Sized)) -> Result<LossRecord> {
        if corpus.is_empty() {
            return Err(NetError::Config("training corpus is empty".into()));
        }
        let iteration = self.history.len();
        let idx = self.next_indices(corpus.len());
        let pairs = idx.iter().map(|&i| corpus.pair(i)).collect::<Result<Vec<_>>>()?;
        let (x, y) = batch(&pairs)?;
        let lambda = self.config.lambda_l1 as f32;

        let gcache = self.network.generator.forward_train(&x, self.dropout_seed())?;
        let fake = gcache.output().clone();

        // discriminator step
        let saved_d = (self.network.discriminator.clone(), self.opt_d.clone());
        let d = &mut self.network.discriminator;
        d.zero_grad();
        let real_c = d.forward_train(&Discriminator::pair(&x, &y)?)?;
        let fake_c = d.forward_train(&Discriminator::pair(&x, &fake)?)?;
        let (disc, g_real, g_fake) = loss::discriminator_loss(&real_c.scores, &fake_c.scores);
        if !disc.is_finite() {
            return Err(NetError::NonFinite(iteration));
        }
        d.backward(&real_c, &g_real, false);
        d.backward(&fake_c, &g_fake, false);
        self.opt_d.step(d);
        d.update_running(&real_c);
        d.update_running(&fake_c);

        // generator step through the updated discriminator
        let fake_c = d.forward_train(&Discriminator::pair(&x, &fake)?)?;
        let (gen_adv, g_adv) = loss::generator_adversarial(&fake_c.scores);
        let (gen_l1, g_l1) = loss::l1(&fake, &y)?;
        if !(gen_adv.is_finite() && gen_l1.is_finite()) {
            (self.network.discriminator, self.opt_d) = saved_d;
            return Err(NetError::NonFinite(iteration));
        }
        let dx = d.backward(&fake_c, &g_adv, true).expect("input gradient requested");
        let (_, mut dy) = dx.split(x.c);
        for (a, b) in dy.data.iter_mut().zip(&g_l1.data) {
            *a += lambda * b;
        }
        let g = &mut self.network.generator;
        g.zero_grad();
        g.backward(&gcache, &dy);
        self.opt_g.step(g);
        g.update_running(&gcache);

        let record = LossRecord {
            iteration,
            gen_adv: gen_adv as f64,
            gen_l1: gen_l1 as f64,
            disc: disc as f64,
        };
        debug!(
            "iter {iteration}: gen_adv {:.4} gen_l1 {:.4} disc {:.4}",
            record.gen_adv, record.gen_l1, record.disc
        );
        self.history.push(record);
        Ok(record)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub history: Vec<LossRecord>,
    /// Iteration whose loss was non-finite, if training stopped early. The
    /// network then holds the weights from before that iteration.
    pub stopped_at: Option<usize>,
}

/// Trains `network` for `config.iterations` steps.
pub fn train(corpus: &(impl PairSource + ?Sized), network: Network<f32>, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(network, config.clone())?;
    let mut stopped_at = None;
    for _ in 0..config.iterations {
        match trainer.step(corpus) {
            Ok(_) => {}
            Err(NetError::NonFinite(it)) => {
                warn!("non-finite loss at iteration {it}; keeping the previous weights");
                stopped_at = Some(it);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome {
        network: trainer.network,
        history: trainer.history,
        stopped_at,
    })
}

pub fn write_history(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
