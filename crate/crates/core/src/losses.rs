//! Reconstruction and classification losses.
//!
//! Every loss returns its value together with the gradient with respect to
//! its prediction argument. Batch averaging is left to the caller.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Center-weighting layout for the reconstruction loss: a `d x d` matrix
/// whose centered `c x c` window is `w` and whose border is 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrixSpec {
    pub d: usize,
    pub c: usize,
    pub w: f64,
}

impl WeightMatrixSpec {
    pub fn new(d: usize, c: usize, w: f64) -> Result<Self> {
        let spec = WeightMatrixSpec { d, c, w };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform weighting (plain summed squared error).
    pub fn uniform(d: usize) -> Self {
        WeightMatrixSpec { d, c: d, w: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.c > 0 && self.c <= self.d,
            Error::Config(format!(
                "center window c={} must satisfy 0 < c <= d={}",
                self.c, self.d
            ))
        );
        ensure!(
            self.w.is_finite() && self.w >= 1.0,
            Error::Config(format!("center weight w={} must be >= 1", self.w))
        );
        ensure!(
            (self.d - self.c) % 2 == 0,
            Error::Config(format!(
                "d - c must be even for a centered window (d={}, c={})",
                self.d, self.c
            ))
        );
        Ok(())
    }

    /// Half-open index range `[d/2 - c/2, d/2 + c/2)` of the weighted window.
    pub fn window(&self) -> std::ops::Range<usize> {
        let lo = (self.d - self.c) / 2;
        lo..lo + self.c
    }
}

pub fn weight_matrix<T: Real>(spec: &WeightMatrixSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let win = spec.window();
    let (w, one) = (T::of(spec.w), T::one());
    Ok(Tensor::from_fn(&[spec.d, spec.d], |i| {
        if win.contains(&(i / spec.d)) && win.contains(&(i % spec.d)) {
            w
        } else {
            one
        }
    }))
}

#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Tensor<T>,
}

/// Center-weighted squared error summed over every channel and pixel of one
/// image. The same weight matrix applies to each channel. Gradient is with
/// respect to the reconstruction `r`.
pub fn wmse<T: Real>(x: &Tensor<T>, r: &Tensor<T>, spec: &WeightMatrixSpec) -> Result<LossGrad<T>> {
    ensure!(
        x.shape() == r.shape(),
        Error::shape(
            "wmse",
            format!("input {:?} vs reconstruction {:?}", x.shape(), r.shape())
        )
    );
    let (c, h, w) = x.chw("wmse")?;
    ensure!(
        h == spec.d && w == spec.d,
        Error::shape(
            "wmse",
            format!("image is {h}x{w} but weight matrix is {0}x{0}", spec.d)
        )
    );
    let weights = weight_matrix::<T>(spec)?;
    let wm = weights.data();
    let plane = h * w;
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let xs = &x.data()[ch * plane..(ch + 1) * plane];
        let rs = &r.data()[ch * plane..(ch + 1) * plane];
        for ((&xv, &rv), &wv) in xs.iter().zip(rs).zip(wm) {
            let diff = rv - xv;
            loss += wv * (diff * diff);
            grad.push(two * wv * diff);
        }
    }
    Ok(LossGrad {
        loss,
        grad: Tensor::new(x.shape(), grad)?,
    })
}

fn clamp_prob<T: Real>(p: T) -> (T, bool) {
    let (lo, hi) = (T::of(PROB_EPS), T::of(1.0 - PROB_EPS));
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Multi-label log-likelihood summed over labels. Gradient is with respect
/// to the probabilities (zero where the clamp is active).
pub fn bce_multilabel<T: Real>(probs: &[T], targets: &[T]) -> Result<LossGrad<T>> {
    ensure!(
        probs.len() == targets.len(),
        Error::shape(
            "bce_multilabel",
            format!("{} probabilities vs {} targets", probs.len(), targets.len())
        )
    );
    ensure!(
        targets.iter().all(|&y| y == T::zero() || y == T::one()),
        Error::Data("bce_multilabel targets must be 0 or 1".into())
    );
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(targets) {
        let (pc, clamped) = clamp_prob(p);
        let one = T::one();
        loss -= y * pc.ln() + (one - y) * (one - pc).ln();
        grad.push(if clamped {
            T::zero()
        } else {
            -y / pc + (one - y) / (one - pc)
        });
    }
    Ok(LossGrad {
        loss,
        grad: Tensor::vector(grad),
    })
}

/// Single-label log-likelihood `-ln p[target]`. Gradient is with respect to
/// the probabilities.
pub fn ce_singlelabel<T: Real>(probs: &[T], target: usize) -> Result<LossGrad<T>> {
    ensure!(
        target < probs.len(),
        Error::Data(format!(
            "target class {target} out of range for {} classes",
            probs.len()
        ))
    );
    let (pc, clamped) = clamp_prob(probs[target]);
    let mut grad = vec![T::zero(); probs.len()];
    if !clamped {
        grad[target] = -T::one() / pc;
    }
    Ok(LossGrad {
        loss: -pc.ln(),
        grad: Tensor::vector(grad),
    })
}

/// Gradient of summed binary cross-entropy with respect to sigmoid logits.
pub fn bce_logit_grad<T: Real>(probs: &[T], targets: &[T]) -> Vec<T> {
    probs.iter().zip(targets).map(|(&p, &y)| p - y).collect()
}

/// Gradient of categorical cross-entropy with respect to softmax logits.
pub fn ce_logit_grad<T: Real>(probs: &[T], target: usize) -> Vec<T> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == target { p - T::one() } else { p })
        .collect()
}

/// Weighted sum of the attribute (multi-label) and shape (single-label)
/// branch losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskLoss {
    pub l_ml: f64,
    pub l_sl: f64,
    pub m: f64,
    pub total: f64,
}

impl MultiTaskLoss {
    /// Scale applied to the attribute branch gradient.
    pub fn attr_scale(&self) -> f64 {
        self.m
    }

    /// Scale applied to the shape branch gradient.
    pub fn shape_scale(&self) -> f64 {
        1.0 - self.m
    }
}

pub fn combined_loss(l_ml: f64, l_sl: f64, m: f64) -> Result<MultiTaskLoss> {
    ensure!(
        (0.0..=1.0).contains(&m),
        Error::Config(format!("mixing weight m={m} must lie in [0, 1]"))
    );
    Ok(MultiTaskLoss {
        l_ml,
        l_sl,
        m,
        total: m * l_ml + (1.0 - m) * l_sl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Literal double loop over pixel coordinates, independent of `window()`.
    fn oracle_weights(d: usize, c: usize, w: f64) -> Vec<f64> {
        let mut out = vec![1.0; d * d];
        let lo = d as f64 / 2.0 - c as f64 / 2.0;
        let hi = d as f64 / 2.0 + c as f64 / 2.0;
        for i in 0..d {
            for j in 0..d {
                let (fi, fj) = (i as f64, j as f64);
                if fi >= lo && fi < hi && fj >= lo && fj < hi {
                    out[i * d + j] = w;
                }
            }
        }
        out
    }

    #[test]
    fn default_setting_weights_rows_6_to_25() {
        let spec = WeightMatrixSpec::new(32, 20, 5.0).unwrap();
        let m = weight_matrix::<f64>(&spec).unwrap();
        assert_eq!(spec.window(), 6..26);
        assert_eq!(m.data().iter().filter(|&&v| v == 5.0).count(), 400);
        assert_eq!(m.data().iter().filter(|&&v| v == 1.0).count(), 624);
        assert_eq!(m.data(), &oracle_weights(32, 20, 5.0)[..]);
    }

    #[test]
    fn full_window_is_all_w() {
        let m = weight_matrix::<f64>(&WeightMatrixSpec::new(8, 8, 3.0).unwrap()).unwrap();
        assert!(m.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn small_window() {
        let m = weight_matrix::<f64>(&WeightMatrixSpec::new(4, 2, 5.0).unwrap()).unwrap();
        assert_eq!(m.data(), &oracle_weights(4, 2, 5.0)[..]);
        assert_eq!(m.data().iter().filter(|&&v| v == 5.0).count(), 4);
        assert_eq!(m.data()[5], 5.0);
        assert_eq!(m.data()[10], 5.0);
    }

    #[test]
    fn odd_margin_is_rejected() {
        let err = WeightMatrixSpec::new(32, 19, 5.0).unwrap_err();
        assert!(err.to_string().contains("even"));
        assert!(WeightMatrixSpec::new(4, 5, 5.0).is_err());
        assert!(WeightMatrixSpec::new(4, 2, 0.5).is_err());
    }

    #[test]
    fn wmse_hand_value() {
        let spec = WeightMatrixSpec::new(4, 2, 5.0).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        let r = Tensor::filled(&[1, 4, 4], 1.0);
        assert_eq!(wmse(&x, &r, &spec).unwrap().loss, 32.0);
    }

    #[test]
    fn wmse_of_identical_images_is_zero() {
        let x = Tensor::<f64>::from_fn(&[3, 6, 6], |i| (i as f64).sin());
        let lg = wmse(&x, &x, &WeightMatrixSpec::new(6, 2, 5.0).unwrap()).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn wmse_shape_mismatch() {
        let spec = WeightMatrixSpec::uniform(4);
        assert!(wmse(&Tensor::<f64>::zeros(&[1, 4, 4]), &Tensor::zeros(&[2, 4, 4]), &spec).is_err());
    }

    #[test]
    fn bce_values() {
        let lg = bce_multilabel(&[0.5f64], &[1.0]).unwrap();
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
        let lg = bce_multilabel(&[0.9f64, 0.2], &[1.0, 0.0]).unwrap();
        assert!((lg.loss - 0.328504066972036).abs() < 1e-12);
        let lg = bce_multilabel(&[1.0f64, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!(lg.loss <= 3.0 * (1.0f64 / (1.0 - 1e-7)).ln() + 1e-15);
    }

    #[test]
    fn bce_rejects_soft_targets() {
        assert!(bce_multilabel(&[0.5f64], &[0.3]).is_err());
    }

    #[test]
    fn ce_values() {
        let lg = ce_singlelabel(&[1.0 / 6.0f64; 6], 2).unwrap();
        assert!((lg.loss - 6f64.ln()).abs() < 1e-12);
        let lg = ce_singlelabel(&[0.7f64, 0.2, 0.1], 1).unwrap();
        assert!((lg.loss - 1.6094379124341003).abs() < 1e-12);
        assert!(ce_singlelabel(&[1.0f64, 0.0], 0).unwrap().loss < 1e-6);
        assert!(ce_singlelabel(&[0.5f64, 0.5], 2).is_err());
    }

    #[test]
    fn softmax_composed_ce_gradient_is_p_minus_onehot() {
        let probs = crate::layers::softmax(&[0.3f64, -1.2, 2.0, 0.1]);
        let lg = ce_singlelabel(&probs, 2).unwrap();
        let composed = crate::layers::activation::softmax_backward(&probs, lg.grad.data());
        for (a, b) in composed.iter().zip(ce_logit_grad(&probs, 2)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn combined_endpoints() {
        assert_eq!(combined_loss(2.0, 1.0, 1.0).unwrap().total, 2.0);
        assert_eq!(combined_loss(2.0, 1.0, 0.0).unwrap().total, 1.0);
        assert!((combined_loss(2.0, 1.0, 0.6).unwrap().total - 1.6).abs() < 1e-15);
        assert!(combined_loss(2.0, 1.0, 1.1).is_err());
        assert!(combined_loss(2.0, 1.0, -0.1).is_err());
    }

    fn img(d: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::new(&[1, d, d], vals.to_vec()).unwrap()
    }

    proptest! {
        #[test]
        fn wmse_symmetry_and_center_scaling(
            half in 1usize..7,
            chalf in 0usize..7,
            k in 1.0f64..10.0,
            seed in prop::collection::vec(-1.0f64..1.0, 2 * 14 * 14),
        ) {
            let d = 2 * half;
            let c = (2 * chalf).clamp(2, d);
            let x = img(d, &seed[..d * d]);
            let r = img(d, &seed[d * d..2 * d * d]);
            let spec = WeightMatrixSpec::new(d, c, k).unwrap();
            let a = wmse(&x, &r, &spec).unwrap();
            let b = wmse(&r, &x, &spec).unwrap();
            prop_assert!(a.loss >= 0.0);
            prop_assert!((a.loss - b.loss).abs() < 1e-12);
            for (ga, gb) in a.grad.data().iter().zip(b.grad.data()) {
                prop_assert!((ga + gb).abs() < 1e-12);
            }
            let base = wmse(&x, &r, &WeightMatrixSpec::new(d, c, 1.0).unwrap()).unwrap().loss;
            let win = spec.window();
            let mut center = 0.0;
            for i in win.clone() {
                for j in win.clone() {
                    let e = r.data()[i * d + j] - x.data()[i * d + j];
                    center += e * e;
                }
            }
            prop_assert!((a.loss - base - (k - 1.0) * center).abs() < 1e-10);
        }
    }
}
