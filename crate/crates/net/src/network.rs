use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{NetError, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::layers::Module;
use crate::tensor::Scalar;

const DISC_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl NetworkConfig {
    /// Generator and discriminator for `size`-pixel windows of
    /// `window_size` frames.
    pub fn for_window(size: usize, window_size: usize, width_divisor: usize) -> Result<Self> {
        let channels = portrait_core::conditioning::CHANNELS_PER_FRAME * window_size;
        Ok(NetworkConfig {
            generator: GeneratorConfig::for_size(size, channels, width_divisor)?,
            discriminator: DiscriminatorConfig::new(size, channels, width_divisor)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        let g = &self.generator;
        let d = &self.discriminator;
        if d.input_size != g.input_size || d.input_channels != g.input_channels + 3 {
            return Err(NetError::Config(
                "discriminator must see the generator's conditioning plus 3 image channels".into(),
            ));
        }
        Ok(())
    }
}

/// Generator and discriminator weights with the seed they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub seed: u64,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Network {
            seed,
            generator: Generator::new(config.generator, seed)?,
            discriminator: Discriminator::new(config.discriminator, seed ^ DISC_SEED_SALT)?,
        })
    }

    pub fn config(&self) -> NetworkConfig {
        NetworkConfig {
            generator: self.generator.config.clone(),
            discriminator: self.discriminator.config.clone(),
        }
    }

    pub fn window_size(&self) -> usize {
        self.generator.config.input_channels / portrait_core::conditioning::CHANNELS_PER_FRAME
    }
}

impl<T: Scalar> Module<T> for Network<T> {
    fn visit(&self, f: &mut dyn FnMut(&crate::layers::Param<T>)) {
        self.generator.visit(f);
        self.discriminator.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut crate::layers::Param<T>)) {
        self.generator.visit_mut(f);
        self.discriminator.visit_mut(f);
    }
}
