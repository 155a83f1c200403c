//! The supervised classifier: conv stack, fully-connected trunk,
//! concatenation of feedback and injected features, and either a flat
//! sigmoid head or separate sigmoid/softmax heads.

use crate::error::{ensure, Error, Result};
use crate::layers::activation::{sigmoid, softmax};
use crate::layers::concat::{concat, split};
use crate::layers::dropout::{dropout, dropout_backward};
use crate::tensor::{Real, Tensor};

use super::params::{Initializer, ParamStore};
use super::spec::ModelSpec;
use super::stack::{ConvInit, ConvStack, DenseRef, DenseTape, OpTape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active with a mask drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput<T> {
    /// Sigmoid probabilities over every label.
    Flat(Vec<T>),
    /// Attribute sigmoid probabilities and shape softmax simplex.
    Split { attr: Vec<T>, shape: Vec<T> },
}

impl<T: Real> HeadOutput<T> {
    /// Outputs laid out as the feedback slot expects them.
    pub fn to_feedback(&self) -> Vec<T> {
        match self {
            HeadOutput::Flat(p) => p.clone(),
            HeadOutput::Split { attr, shape } => concat(&[attr, shape]),
        }
    }
}

/// Gradients with respect to the pre-activation outputs of each head.
#[derive(Clone, Debug)]
pub enum HeadGrad<T> {
    Flat(Vec<T>),
    Split { attr: Vec<T>, shape: Vec<T> },
}

#[derive(Clone, Debug)]
pub struct InputGrads<T> {
    pub image: Option<Tensor<T>>,
    pub feedback: Vec<T>,
    pub injected: Vec<T>,
}

#[derive(Clone, Debug)]
enum Heads {
    Flat(DenseRef),
    Split {
        attr_hidden: DenseRef,
        attr_out: DenseRef,
        shape_hidden: DenseRef,
        shape_out: DenseRef,
    },
}

enum HeadTape<T> {
    Flat(DenseTape<T>),
    Split {
        attr_hidden: DenseTape<T>,
        attr_out: DenseTape<T>,
        shape_hidden: DenseTape<T>,
        shape_out: DenseTape<T>,
    },
}

pub struct CnnTape<T> {
    dropout_mask: Option<Vec<T>>,
    stack: Vec<OpTape<T>>,
    conv_shape: [usize; 3],
    trunk: Vec<DenseTape<T>>,
    concat_sizes: [usize; 3],
    inject: Option<DenseTape<T>>,
    post: DenseTape<T>,
    heads: HeadTape<T>,
}

#[derive(Clone, Debug)]
pub struct Cnn<T> {
    spec: ModelSpec,
    params: ParamStore<T>,
    stack: ConvStack,
    trunk: Vec<DenseRef>,
    inject: Option<DenseRef>,
    post: DenseRef,
    heads: Heads,
}

impl<T: Real> Cnn<T> {
    /// Builds the network with freshly initialized parameters.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Initializer::new(seed);
        let mut params = ParamStore::default();
        let mut stack = ConvStack::default();
        for (i, layer) in spec.conv_layers().into_iter().enumerate() {
            stack.push_conv(&mut params, &mut init, &format!("conv{}", i + 1), layer, true, ConvInit::Glorot);
            if spec.pools_after.contains(&i) {
                stack.ops.push(super::stack::StackOp::Pool);
            }
        }
        let [c, h, w] = spec.conv_output_shape()?;
        let mut width = c * h * w;
        let mut trunk = Vec::new();
        for (i, &t) in spec.trunk.iter().enumerate() {
            trunk.push(DenseRef::build(&mut params, &mut init, &format!("fc{}", i + 1), width, t));
            width = t;
        }
        width = spec.concat_width();
        let inject = (spec.inject_width > 0).then(|| {
            let d = DenseRef::build(&mut params, &mut init, "fc_inject", width, spec.inject_width);
            width = spec.inject_width;
            d
        });
        let post = DenseRef::build(&mut params, &mut init, "fc_post", width, spec.post_concat);
        let heads = if spec.variant.split_heads() {
            let hh = spec.head_hidden;
            Heads::Split {
                attr_hidden: DenseRef::build(&mut params, &mut init, "attr_hidden", spec.post_concat, hh),
                attr_out: DenseRef::build(&mut params, &mut init, "attr_out", hh, spec.n_attr),
                shape_hidden: DenseRef::build(&mut params, &mut init, "shape_hidden", spec.post_concat, hh),
                shape_out: DenseRef::build(&mut params, &mut init, "shape_out", hh, spec.n_shape),
            }
        } else {
            Heads::Flat(DenseRef::build(&mut params, &mut init, "out", spec.post_concat, spec.n_attr))
        };
        Ok(Cnn {
            spec: spec.clone(),
            params,
            stack,
            trunk,
            inject,
            post,
            heads,
        })
    }

    /// Rebuilds the layer graph for `spec` and installs `params` (matched by
    /// name, shapes checked).
    pub fn from_params(spec: &ModelSpec, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::build(spec, 0)?;
        ensure!(
            params.len() == net.params.len(),
            Error::Data(format!(
                "expected {} parameter tensors, found {}",
                net.params.len(),
                params.len()
            ))
        );
        for (name, t) in params.iter() {
            net.params.set(name, t.clone()).map_err(|e| Error::Data(e.to_string()))?;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Activation of the conv stack (post ReLU/pool) for one image.
    pub fn conv_features(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.stack.forward(&self.params, image.clone(), false)?.0)
    }

    pub fn forward(
        &self,
        image: &Tensor<T>,
        feedback: &[T],
        injected: Option<&[T]>,
        mode: Mode,
    ) -> Result<(HeadOutput<T>, CnnTape<T>)> {
        let spec = &self.spec;
        ensure!(
            image.shape() == spec.input_shape,
            Error::shape(
                "cnn input",
                format!("image is {:?}, network expects {:?}", image.shape(), spec.input_shape)
            )
        );
        ensure!(
            feedback.len() == spec.feedback_dim,
            Error::shape(
                "cnn feedback",
                format!("{} values, network expects {}", feedback.len(), spec.feedback_dim)
            )
        );
        let injected: &[T] = match (injected, spec.injected_dim) {
            (None, 0) => &[],
            (Some(v), d) if v.len() == d => v,
            (None, d) => {
                return Err(Error::Config(format!(
                    "variant {} needs a {d}-dim injected feature vector",
                    spec.variant
                )))
            }
            (Some(v), d) => {
                return Err(Error::shape(
                    "cnn injected",
                    format!("{} values, network expects {d}", v.len()),
                ))
            }
        };

        let (x, dropout_mask) = match mode {
            Mode::Train { dropout_seed } => dropout(image, spec.input_dropout, dropout_seed, true)?,
            Mode::Eval => (image.clone(), None),
        };
        let (conv_out, stack) = self.stack.forward(&self.params, x, true)?;
        let conv_shape = [conv_out.shape()[0], conv_out.shape()[1], conv_out.shape()[2]];

        let mut v = conv_out.into_data();
        let mut trunk = Vec::with_capacity(self.trunk.len());
        for d in &self.trunk {
            let t = d.forward(&self.params, v, true)?;
            v = t.output.clone();
            trunk.push(t);
        }
        let concat_sizes = [v.len(), feedback.len(), injected.len()];
        let mut v = concat(&[&v, feedback, injected]);
        let inject = match &self.inject {
            Some(d) => {
                let t = d.forward(&self.params, v, true)?;
                v = t.output.clone();
                Some(t)
            }
            None => None,
        };
        let post = self.post.forward(&self.params, v, true)?;

        let (out, heads) = match &self.heads {
            Heads::Flat(d) => {
                let t = d.forward(&self.params, post.output.clone(), false)?;
                (HeadOutput::Flat(sigmoid(&t.output)), HeadTape::Flat(t))
            }
            Heads::Split {
                attr_hidden,
                attr_out,
                shape_hidden,
                shape_out,
            } => {
                let ah = attr_hidden.forward(&self.params, post.output.clone(), true)?;
                let ao = attr_out.forward(&self.params, ah.output.clone(), false)?;
                let sh = shape_hidden.forward(&self.params, post.output.clone(), true)?;
                let so = shape_out.forward(&self.params, sh.output.clone(), false)?;
                (
                    HeadOutput::Split {
                        attr: sigmoid(&ao.output),
                        shape: softmax(&so.output),
                    },
                    HeadTape::Split {
                        attr_hidden: ah,
                        attr_out: ao,
                        shape_hidden: sh,
                        shape_out: so,
                    },
                )
            }
        };
        Ok((
            out,
            CnnTape {
                dropout_mask,
                stack,
                conv_shape,
                trunk,
                concat_sizes,
                inject,
                post,
                heads,
            },
        ))
    }

    /// Eval-mode forward pass.
    pub fn infer(&self, image: &Tensor<T>, feedback: &[T], injected: Option<&[T]>) -> Result<HeadOutput<T>> {
        Ok(self.forward(image, feedback, injected, Mode::Eval)?.0)
    }

    /// Back-propagates head logit gradients, accumulating parameter
    /// gradients into `grads` (aligned with `params()`).
    pub fn backward(
        &self,
        tape: &CnnTape<T>,
        grad: &HeadGrad<T>,
        grads: &mut [Tensor<T>],
        want_input_grads: bool,
    ) -> Result<InputGrads<T>> {
        ensure!(
            grads.len() == self.params.len(),
            Error::Config("gradient buffer does not match parameters".into())
        );
        let p = &self.params;
        let d_post: Vec<T> = match (&self.heads, &tape.heads, grad) {
            (Heads::Flat(d), HeadTape::Flat(t), HeadGrad::Flat(g)) => {
                ensure!(
                    g.len() == self.spec.n_attr,
                    Error::shape("cnn backward", format!("{} logit gradients", g.len()))
                );
                d.backward(p, t, g.clone(), false, grads)
            }
            (
                Heads::Split {
                    attr_hidden,
                    attr_out,
                    shape_hidden,
                    shape_out,
                },
                HeadTape::Split {
                    attr_hidden: tah,
                    attr_out: tao,
                    shape_hidden: tsh,
                    shape_out: tso,
                },
                HeadGrad::Split { attr, shape },
            ) => {
                ensure!(
                    attr.len() == self.spec.n_attr && shape.len() == self.spec.n_shape,
                    Error::shape("cnn backward", "head gradient arity".to_string())
                );
                let da = attr_out.backward(p, tao, attr.clone(), false, grads);
                let da = attr_hidden.backward(p, tah, da, true, grads);
                let ds = shape_out.backward(p, tso, shape.clone(), false, grads);
                let ds = shape_hidden.backward(p, tsh, ds, true, grads);
                da.into_iter().zip(ds).map(|(a, b)| a + b).collect()
            }
            _ => return Err(Error::Config("head gradient does not match head layout".into())),
        };
        let mut g = self.post.backward(p, &tape.post, d_post, true, grads);
        if let (Some(d), Some(t)) = (&self.inject, &tape.inject) {
            g = d.backward(p, t, g, true, grads);
        }
        let parts = split(&g, &tape.concat_sizes);
        let (feedback, injected) = (parts[1].to_vec(), parts[2].to_vec());
        let mut g = parts[0].to_vec();
        for (d, t) in self.trunk.iter().zip(&tape.trunk).rev() {
            g = d.backward(p, t, g, true, grads);
        }
        let g = Tensor::new(&tape.conv_shape, g)?;
        let image = self
            .stack
            .backward(p, &tape.stack, g, grads, want_input_grads)?
            .map(|mut dx| {
                dropout_backward(tape.dropout_mask.as_deref(), dx.data_mut());
                dx
            });
        Ok(InputGrads {
            image,
            feedback,
            injected,
        })
    }

    pub fn cast<U: Real>(&self) -> Cnn<U> {
        Cnn {
            spec: self.spec.clone(),
            params: self.params.cast(),
            stack: self.stack.clone(),
            trunk: self.trunk.clone(),
            inject: self.inject,
            post: self.post,
            heads: self.heads.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::Variant;

    fn image(spec: &ModelSpec, salt: u64) -> Tensor<f64> {
        Tensor::from_fn(&spec.input_shape, |i| ((i as u64 * 7919 + salt) % 97) as f64 / 97.0)
    }

    #[test]
    fn wfm_outputs_attribute_probs_and_shape_simplex() {
        let spec = ModelSpec::full(Variant::Wfm, 12).with_width_divisor(10);
        let net = Cnn::<f64>::build(&spec, 3).unwrap();
        let fb = vec![0.0; spec.feedback_dim];
        let inj = vec![0.5; 12];
        match net.infer(&image(&spec, 1), &fb, Some(&inj)).unwrap() {
            HeadOutput::Split { attr, shape } => {
                assert_eq!(attr.len(), 10);
                assert_eq!(shape.len(), 6);
                assert!((shape.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(attr.iter().all(|&p| p > 0.0 && p < 1.0));
            }
            _ => panic!("expected split heads"),
        }
    }

    #[test]
    fn missing_injected_vector_is_rejected() {
        let spec = ModelSpec::compact(Variant::Wf, 4);
        let net = Cnn::<f64>::build(&spec, 0).unwrap();
        let err = net
            .infer(&image(&spec, 0), &vec![0.0; spec.feedback_dim], None)
            .unwrap_err();
        assert!(err.to_string().contains("injected"));
    }

    #[test]
    fn zero_feedback_leaves_fan_in_weights_unused() {
        let spec = ModelSpec::compact(Variant::Default, 0);
        let mut net = Cnn::<f64>::build(&spec, 5).unwrap();
        let img = image(&spec, 2);
        let fb = vec![0.0; spec.feedback_dim];
        let before = net.infer(&img, &fb, None).unwrap();
        // Scramble the columns of fc_post that read the feedback slot.
        let idx = net.params().index_of("fc_post.weight").unwrap();
        let start = spec.trunk_width();
        let cols = spec.concat_width();
        let w = &mut net.params_mut().tensors_mut()[idx];
        for r in 0..spec.post_concat {
            for c in start..start + spec.feedback_dim {
                w.data_mut()[r * cols + c] = 123.0;
            }
        }
        assert_eq!(net.infer(&img, &fb, None).unwrap(), before);
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = ModelSpec::compact(Variant::Wfm, 5);
        let net = Cnn::<f32>::build(&spec, 9).unwrap();
        let img = image(&spec, 4).cast::<f32>();
        let fb = vec![0.1f32; spec.feedback_dim];
        let inj = vec![0.2f32; 5];
        let mode = Mode::Train { dropout_seed: 17 };
        let a = net.forward(&img, &fb, Some(&inj), mode).unwrap().0;
        let b = net.forward(&img, &fb, Some(&inj), mode).unwrap().0;
        assert_eq!(a, b);
    }
}
