use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

/// Inverted dropout. In training mode each element is zeroed with
/// probability `p` and survivors are scaled by `1 / (1 - p)`; the mask is a
/// pure function of `seed`. Returns the output and, in training mode, the
/// per-element multiplier needed by the backward pass.
pub fn dropout<T: Real>(
    input: &Tensor<T>,
    p: f64,
    seed: u64,
    training: bool,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    ensure!(
        (0.0..1.0).contains(&p),
        Error::Config(format!("dropout probability must be in [0, 1), got {p}"))
    );
    if !training || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let mask = dropout_mask::<T>(input.len(), p, seed);
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_mask<T: Real>(len: usize, p: f64, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, grad: &mut [T]) {
    if let Some(mask) = mask {
        for (g, &m) in grad.iter_mut().zip(mask) {
            *g *= m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_and_eval_are_identity() {
        let x = Tensor::<f64>::from_fn(&[3, 4, 4], |i| i as f64);
        assert_eq!(dropout(&x, 0.0, 1, true).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, 1, false).unwrap().0, x);
    }

    #[test]
    fn rejects_p_of_one() {
        assert!(dropout(&Tensor::<f64>::zeros(&[2]), 1.0, 0, true).is_err());
    }

    #[test]
    fn survivor_fraction_near_expectation() {
        let n = 1_000_000;
        let mask = dropout_mask::<f64>(n, 0.05, 42);
        let kept = mask.iter().filter(|&&m| m != 0.0).count() as f64 / n as f64;
        // binomial sd is ~2.2e-4, so 0.002 is about nine sigma
        assert!((kept - 0.95).abs() < 0.002, "kept {kept}");
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.95).abs() < 1e-15));
    }

    #[test]
    fn mask_is_pure_in_seed() {
        let a = dropout_mask::<f32>(1000, 0.3, 9);
        let b = dropout_mask::<f32>(1000, 0.3, 9);
        let c = dropout_mask::<f32>(1000, 0.3, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
