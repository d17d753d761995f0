//! Deterministic inference over conditioning windows.

use portrait_core::conditioning::{planes_to_image, ConditioningWindow};
use portrait_core::image_formation::RasterImage;

use crate::error::{NetError, Result};
use crate::generator::Generator;
use crate::tensor::Tensor;

pub fn window_tensor(window: &ConditioningWindow) -> Result<Tensor<f32>> {
    Tensor::from_vec(1, window.channels(), window.height, window.width, window.data.clone())
}

/// Normalized generator output for one window.
pub fn infer_window(generator: &Generator<f32>, window: &ConditioningWindow) -> Result<RasterImage> {
    let y = generator.infer(&window_tensor(window)?)?;
    Ok(planes_to_image(window.width, window.height, &y.data)?)
}

/// One 8-bit frame per window.
pub fn infer_sequence<I>(generator: &Generator<f32>, windows: I) -> Result<Vec<RasterImage>>
where
    I: IntoIterator<Item = portrait_core::Result<ConditioningWindow>>,
{
    windows
        .into_iter()
        .map(|w| {
            let w = w.map_err(NetError::Core)?;
            Ok(infer_window(generator, &w)?.denormalized()?)
        })
        .collect()
}
