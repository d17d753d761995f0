//! Adversarial and ℓ1 objectives with their gradients.

use crate::error::{NetError, Result};
use crate::tensor::{Scalar, Tensor};

pub const LOG_CLAMP: f64 = 1e-12;

fn clamped_log<T: Scalar>(v: T) -> T {
    v.max(T::of(LOG_CLAMP)).ln()
}

fn clamped_inv<T: Scalar>(v: T) -> T {
    T::one() / v.max(T::of(LOG_CLAMP))
}

/// Non-saturating generator loss `-mean log D(fake)` and its gradient with
/// respect to the scores.
pub fn generator_adversarial<T: Scalar>(fake: &Tensor<T>) -> (T, Tensor<T>) {
    let n = T::of(fake.data.len() as f64);
    let loss = -fake.data.iter().map(|&d| clamped_log(d)).sum::<T>() / n;
    (loss, fake.map(|d| -clamped_inv(d) / n))
}

/// `-mean log D(real) - mean log(1 - D(fake))` and the gradients with
/// respect to both score maps.
pub fn discriminator_loss<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> (T, Tensor<T>, Tensor<T>) {
    let nr = T::of(real.data.len() as f64);
    let nf = T::of(fake.data.len() as f64);
    let lr = -real.data.iter().map(|&d| clamped_log(d)).sum::<T>() / nr;
    let lf = -fake.data.iter().map(|&d| clamped_log(T::one() - d)).sum::<T>() / nf;
    (
        lr + lf,
        real.map(|d| -clamped_inv(d) / nr),
        fake.map(|d| clamped_inv(T::one() - d) / nf),
    )
}

/// Both adversarial losses from one pair of score maps.
pub fn adversarial<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> (T, T) {
    (generator_adversarial(fake).0, discriminator_loss(real, fake).0)
}

/// Mean absolute error and its subgradient (`sign(0) = 0`).
pub fn l1<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != truth.shape() {
        return Err(NetError::Shape(format!(
            "l1 between {:?} and {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = T::of(pred.data.len() as f64);
    let loss = pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(&p, &t)| (p - t).abs())
        .sum::<T>()
        / n;
    let grad = Tensor {
        data: pred
            .data
            .iter()
            .zip(&truth.data)
            .map(|(&p, &t)| {
                if p > t {
                    T::one() / n
                } else if p < t {
                    -T::one() / n
                } else {
                    T::zero()
                }
            })
            .collect(),
        ..*pred
    };
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::from_vec(1, 1, 1, n, v).unwrap()
    }

    #[test]
    fn closed_forms() {
        let (g, _) = generator_adversarial(&t(vec![0.5; 4]));
        assert!((g - std::f64::consts::LN_2).abs() < 1e-15);
        let (d, ..) = discriminator_loss(&t(vec![1.0 - 1e-12; 3]), &t(vec![1e-12; 3]));
        assert!(d.abs() < 1e-11);
        let (l, grad) = l1(&t(vec![1.1, 0.1]), &t(vec![1.0, 0.0])).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
        assert_eq!(grad.data, vec![0.5, 0.5]);
    }

    #[test]
    fn clamping_keeps_losses_finite() {
        let (g, grad) = generator_adversarial(&t(vec![0.0, 1.0]));
        assert!(g.is_finite() && grad.data.iter().all(|v| v.is_finite()));
        let (d, gr, gf) = discriminator_loss(&t(vec![0.0]), &t(vec![1.0]));
        assert!(d.is_finite() && gr.data[0].is_finite() && gf.data[0].is_finite());
    }
}
