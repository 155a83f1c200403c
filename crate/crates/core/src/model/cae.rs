//! Convolutional autoencoder whose encoder is the classifier's conv stack.
//!
//! The decoder mirrors the encoder in reverse: each max pool becomes a
//! nearest-neighbour upsampling back to the pooled extent and each valid
//! convolution becomes a convolution with `kernel - 1` zero padding on every
//! side, which grows the plane by exactly what the valid convolution took
//! away. The final layer is linear and reproduces the input channels.

use crate::error::{ensure, Error, Result};
use crate::layers::Conv2d;
use crate::tensor::{Real, Tensor};

use super::params::{Initializer, ParamStore};
use super::spec::ModelSpec;
use super::stack::{ConvInit, ConvStack, OpTape, StackOp};

pub struct CaeTape<T> {
    encoder: Vec<OpTape<T>>,
    decoder: Vec<OpTape<T>>,
}

#[derive(Clone, Debug)]
pub struct Cae<T> {
    spec: ModelSpec,
    params: ParamStore<T>,
    encoder: ConvStack,
    decoder: ConvStack,
}

impl<T: Real> Cae<T> {
    /// Bias of the final, linear reconstruction layer.
    pub const OUTPUT_BIAS: &'static str = "deconv1.bias";
    pub const OUTPUT_KERNEL: &'static str = "deconv1.kernel";

    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Initializer::new(seed);
        let mut params = ParamStore::default();
        let mut encoder = ConvStack::default();
        let layers = spec.conv_layers();
        let [_, mut h, mut w] = spec.input_shape;
        // Plane extent entering each pool, needed to undo floor semantics.
        let mut pooled_from = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            encoder.push_conv(&mut params, &mut init, &format!("conv{}", i + 1), *layer, true, ConvInit::FanIn);
            (h, w) = layer.output_hw(h, w)?;
            if spec.pools_after.contains(&i) {
                encoder.ops.push(StackOp::Pool);
                pooled_from.push((h, w));
                (h, w) = (h / 2, w / 2);
            }
        }
        let mut decoder = ConvStack::default();
        for (i, layer) in layers.iter().enumerate().rev() {
            if spec.pools_after.contains(&i) {
                let (th, tw) = pooled_from.pop().expect("one extent per pool");
                decoder.ops.push(StackOp::Upsample { h: th, w: tw });
            }
            let mirror = Conv2d {
                in_channels: layer.out_channels,
                out_channels: layer.in_channels,
                kernel: layer.kernel,
                padding: layer.kernel - 1,
            };
            decoder.push_conv(&mut params, &mut init, &format!("deconv{}", i + 1), mirror, i > 0, ConvInit::FanIn);
        }
        let cae = Cae {
            spec: spec.clone(),
            params,
            encoder,
            decoder,
        };
        let probe = Tensor::<T>::zeros(&spec.input_shape);
        let (recon, _) = cae.forward_inner(&probe, false)?;
        ensure!(
            recon.shape() == spec.input_shape,
            Error::Config(format!(
                "autoencoder reconstructs {:?} from {:?}",
                recon.shape(),
                spec.input_shape
            ))
        );
        Ok(cae)
    }

    pub fn from_params(spec: &ModelSpec, params: ParamStore<T>) -> Result<Self> {
        let mut cae = Self::build(spec, 0)?;
        ensure!(
            params.len() == cae.params.len(),
            Error::Data(format!(
                "expected {} autoencoder tensors, found {}",
                cae.params.len(),
                params.len()
            ))
        );
        for (name, t) in params.iter() {
            cae.params.set(name, t.clone()).map_err(|e| Error::Data(e.to_string()))?;
        }
        Ok(cae)
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

    fn forward_inner(&self, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, CaeTape<T>)> {
        let (code, encoder) = self.encoder.forward(&self.params, x.clone(), keep)?;
        let (recon, decoder) = self.decoder.forward(&self.params, code, keep)?;
        Ok((recon, CaeTape { encoder, decoder }))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, CaeTape<T>)> {
        ensure!(
            x.shape() == self.spec.input_shape,
            Error::shape(
                "cae input",
                format!("image is {:?}, expected {:?}", x.shape(), self.spec.input_shape)
            )
        );
        self.forward_inner(x, true)
    }

    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    /// Encoder activation (the last pooled feature map).
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.encoder.forward(&self.params, x.clone(), false)?.0)
    }

    pub fn backward(
        &self,
        tape: &CaeTape<T>,
        grad_recon: Tensor<T>,
        grads: &mut [Tensor<T>],
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = self
            .decoder
            .backward(&self.params, &tape.decoder, grad_recon, grads, true)?
            .expect("decoder input gradient requested");
        self.encoder
            .backward(&self.params, &tape.encoder, g, grads, want_input_grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::Variant;

    #[test]
    fn reconstruction_shape_round_trips() {
        let spec = ModelSpec::full(Variant::W, 0).with_width_divisor(10);
        let cae = Cae::<f32>::build(&spec, 1).unwrap();
        let x = Tensor::filled(&[3, 32, 32], 0.5f32);
        assert_eq!(cae.reconstruct(&x).unwrap().shape(), &[3, 32, 32]);
        assert_eq!(cae.encode(&x).unwrap().shape(), &[14, 3, 3]);
    }

    #[test]
    fn full_size_encoder_ends_at_140x3x3() {
        let spec = ModelSpec::full(Variant::W, 0);
        let cae = Cae::<f32>::build(&spec, 1).unwrap();
        let x = Tensor::zeros(&[3, 32, 32]);
        assert_eq!(cae.encode(&x).unwrap().shape(), &[140, 3, 3]);
        assert_eq!(cae.reconstruct(&x).unwrap().shape(), &[3, 32, 32]);
    }

    #[test]
    fn compact_round_trips() {
        let spec = ModelSpec::compact(Variant::Default, 0);
        let cae = Cae::<f64>::build(&spec, 1).unwrap();
        assert_eq!(cae.reconstruct(&Tensor::zeros(&[3, 8, 8])).unwrap().shape(), &[3, 8, 8]);
    }
}
