//! Sequences of convolution, pooling and upsampling shared by the
//! classifier and the autoencoder.

use crate::error::{Error, Result};
use crate::layers::activation::{relu_backward, relu_in_place};
use crate::layers::pool::{maxpool2_backward, upsample2_backward};
use crate::layers::{maxpool2, upsample2, Conv2d, ConvCache, Dense, PoolCache};
use crate::tensor::{Real, Tensor};

use super::params::{Initializer, ParamStore};

#[derive(Clone, Debug)]
pub(crate) enum StackOp {
    Conv {
        layer: Conv2d,
        /// Index of the kernel; the bias follows it.
        param: usize,
        relu: bool,
    },
    Pool,
    Upsample {
        h: usize,
        w: usize,
    },
}

pub(crate) enum OpTape<T> {
    Conv {
        cache: ConvCache<T>,
        /// Post-ReLU output, kept only for rectified layers.
        activated: Option<Tensor<T>>,
    },
    Pool(PoolCache),
    Upsample {
        in_h: usize,
        in_w: usize,
    },
}

/// Kernel initialization scheme for [`ConvStack::push_conv`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ConvInit {
    Glorot,
    /// `sqrt(6 / fan_in)` for rectified layers, `sqrt(3 / fan_in)` otherwise.
    FanIn,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct ConvStack {
    pub ops: Vec<StackOp>,
}

impl ConvStack {
    pub fn push_conv<T: Real>(
        &mut self,
        params: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        layer: Conv2d,
        relu: bool,
        scheme: ConvInit,
    ) {
        let k2 = layer.kernel * layer.kernel;
        let shape = layer.kernel_shape();
        let kernel = match scheme {
            ConvInit::Glorot => init.glorot(&shape, layer.in_channels * k2, layer.out_channels * k2),
            ConvInit::FanIn => init.fan_in(&shape, layer.in_channels * k2, if relu { 6.0 } else { 3.0 }),
        };
        let param = params.push(format!("{name}.kernel"), kernel);
        params.push(format!("{name}.bias"), Tensor::zeros(&[layer.out_channels]));
        self.ops.push(StackOp::Conv { layer, param, relu });
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        mut x: Tensor<T>,
        keep_tape: bool,
    ) -> Result<(Tensor<T>, Vec<OpTape<T>>)> {
        let mut tapes = Vec::with_capacity(if keep_tape { self.ops.len() } else { 0 });
        for op in &self.ops {
            match op {
                StackOp::Conv { layer, param, relu } => {
                    let (mut y, cache) =
                        layer.forward(&x, params.get(*param), params.get(param + 1))?;
                    if *relu {
                        relu_in_place(y.data_mut());
                    }
                    if keep_tape {
                        tapes.push(OpTape::Conv {
                            cache,
                            activated: relu.then(|| y.clone()),
                        });
                    }
                    x = y;
                }
                StackOp::Pool => {
                    let (y, cache) = maxpool2(&x)?;
                    if keep_tape {
                        tapes.push(OpTape::Pool(cache));
                    }
                    x = y;
                }
                StackOp::Upsample { h, w } => {
                    let (_, in_h, in_w) = x.chw("upsample2")?;
                    let y = upsample2(&x, *h, *w)?;
                    if keep_tape {
                        tapes.push(OpTape::Upsample { in_h, in_w });
                    }
                    x = y;
                }
            }
        }
        Ok((x, tapes))
    }

    /// Accumulates parameter gradients into `grads`; returns the gradient
    /// with respect to the stack input when requested.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        tapes: &[OpTape<T>],
        mut grad: Tensor<T>,
        grads: &mut [Tensor<T>],
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        if tapes.len() != self.ops.len() {
            return Err(Error::Config("backward called without a forward tape".into()));
        }
        for (i, (op, tape)) in self.ops.iter().zip(tapes).enumerate().rev() {
            let needs_dx = want_input_grad || i > 0;
            grad = match (op, tape) {
                (StackOp::Conv { layer, param, .. }, OpTape::Conv { cache, activated }) => {
                    if let Some(out) = activated {
                        relu_backward(out.data(), grad.data_mut());
                    }
                    let (gk, gb) = pair_mut(grads, *param);
                    match layer.backward(cache, params.get(*param), &grad, gk, gb, needs_dx)? {
                        Some(dx) => dx,
                        None => return Ok(None),
                    }
                }
                (StackOp::Pool, OpTape::Pool(cache)) => maxpool2_backward(cache, &grad)?,
                (StackOp::Upsample { .. }, OpTape::Upsample { in_h, in_w }) => {
                    upsample2_backward(&grad, *in_h, *in_w)?
                }
                _ => unreachable!("tape recorded by a different stack"),
            };
        }
        Ok(Some(grad))
    }
}

/// Two adjacent gradient buffers (weight, bias).
pub(crate) fn pair_mut<T>(grads: &mut [Tensor<T>], idx: usize) -> (&mut Tensor<T>, &mut Tensor<T>) {
    let (a, b) = grads[idx..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

/// A dense layer bound to its parameter slot.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DenseRef {
    pub layer: Dense,
    pub param: usize,
}

pub(crate) struct DenseTape<T> {
    pub input: Vec<T>,
    /// Post-ReLU output for rectified layers, raw output otherwise.
    pub output: Vec<T>,
}

impl DenseRef {
    pub fn build<T: Real>(
        params: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let layer = Dense::new(inputs, outputs);
        let param = params.push(
            format!("{name}.weight"),
            init.glorot(&layer.weight_shape(), inputs, outputs),
        );
        params.push(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        DenseRef { layer, param }
    }

    pub fn forward<T: Real>(&self, params: &ParamStore<T>, input: Vec<T>, relu: bool) -> Result<DenseTape<T>> {
        let mut output = self
            .layer
            .forward(&input, params.get(self.param), params.get(self.param + 1))?;
        if relu {
            relu_in_place(&mut output);
        }
        Ok(DenseTape { input, output })
    }

    /// `grad` is with respect to the post-activation output.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        tape: &DenseTape<T>,
        mut grad: Vec<T>,
        relu: bool,
        grads: &mut [Tensor<T>],
    ) -> Vec<T> {
        if relu {
            relu_backward(&tape.output, &mut grad);
        }
        let (gw, gb) = pair_mut(grads, self.param);
        self.layer
            .backward(&tape.input, params.get(self.param), &grad, gw, gb)
    }
}
