use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

/// Fully-connected layer, `out = weight * input + bias` with weight `[out, in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs }
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        [self.outputs, self.inputs]
    }

    pub fn forward<T: Real>(&self, input: &[T], weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Vec<T>> {
        ensure!(
            input.len() == self.inputs,
            Error::shape(
                "dense",
                format!("input has {} values, layer expects {}", input.len(), self.inputs)
            )
        );
        ensure!(
            weight.shape() == self.weight_shape() && bias.shape() == [self.outputs],
            Error::shape(
                "dense",
                format!(
                    "parameters {:?}/{:?} do not match {}->{}",
                    weight.shape(),
                    bias.shape(),
                    self.inputs,
                    self.outputs
                )
            )
        );
        let w = weight.data();
        Ok(bias
            .data()
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                b + row.iter().zip(input).map(|(&a, &x)| a * x).sum::<T>()
            })
            .collect())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Real>(
        &self,
        input: &[T],
        weight: &Tensor<T>,
        grad_out: &[T],
        grad_weight: &mut Tensor<T>,
        grad_bias: &mut Tensor<T>,
    ) -> Vec<T> {
        debug_assert_eq!(grad_out.len(), self.outputs);
        let gw = grad_weight.data_mut();
        let w = weight.data();
        let mut dx = vec![T::zero(); self.inputs];
        for (o, &g) in grad_out.iter().enumerate() {
            grad_bias.data_mut()[o] += g;
            if g == T::zero() {
                continue;
            }
            let row = o * self.inputs..(o + 1) * self.inputs;
            for ((gw, &x), (d, &wv)) in gw[row.clone()]
                .iter_mut()
                .zip(input)
                .zip(dx.iter_mut().zip(&w[row]))
            {
                *gw += g * x;
                *d += g * wv;
            }
        }
        dx
    }
}

/// `weight * input + bias` on a flattened input.
pub fn dense_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, n] = match weight.shape() {
        &[m, n] => [m, n],
        other => {
            return Err(Error::shape(
                "dense",
                format!("weight must be [out, in], got {other:?}"),
            ))
        }
    };
    Ok(Tensor::vector(Dense::new(n, m).forward(input.data(), weight, bias)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_matrix_multiply() {
        let w = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = dense_forward(&Tensor::vector(vec![1.0, 1.0]), &w, &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[4.0, 8.0]);
    }

    #[test]
    fn identity_weight_passes_input() {
        let n = 5;
        let w = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
        let x = Tensor::vector(vec![0.5, -1.0, 2.0, 3.5, 0.0]);
        assert_eq!(dense_forward(&x, &w, &Tensor::zeros(&[n])).unwrap(), x);
    }

    #[test]
    fn flattened_pool_output_feeds_fc400() {
        let layer = Dense::new(140 * 3 * 3, 400);
        let out = layer
            .forward(&vec![0.0f32; 1260], &Tensor::zeros(&[400, 1260]), &Tensor::zeros(&[400]))
            .unwrap();
        assert_eq!(out.len(), 400);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = Dense::new(3, 2)
            .forward(&[1.0f64; 4], &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2]))
            .unwrap_err();
        assert!(err.to_string().contains("4 values"));
    }
}
