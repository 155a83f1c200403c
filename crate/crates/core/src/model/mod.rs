//! Network builders, weight transfer, checkpoints and the two-cycle model.

pub mod cae;
pub mod checkpoint;
pub mod cnn;
pub mod params;
pub mod prediction;
pub mod spec;
mod stack;

pub use cae::Cae;
pub use checkpoint::{Checkpoint, ModelKind, TrainingMeta};
pub use cnn::{Cnn, HeadGrad, HeadOutput, InputGrads, Mode};
pub use params::ParamStore;
pub use prediction::{combine_predictions, predict, PredictionVector};
pub use spec::{ConvSpec, ModelSpec, Variant};

use crate::data::features::Standardizer;
use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

/// Prefix under which cycle-1 parameters are stored in a checkpoint.
pub const CYCLE1_PREFIX: &str = "cycle1/";
const STATS_MEAN: &str = "stats/inject_mean";
const STATS_STD: &str = "stats/inject_std";

/// Copies every conv kernel and bias from `source` into `cnn`; all other
/// CNN parameters are left as initialized.
pub fn transfer_params<T: Real>(source: &ParamStore<T>, cnn: &mut Cnn<T>) -> Result<()> {
    let names: Vec<String> = cnn
        .params()
        .names()
        .iter()
        .filter(|n| n.starts_with("conv"))
        .cloned()
        .collect();
    for name in names {
        let src = source
            .by_name(&name)
            .ok_or_else(|| Error::Config(format!("autoencoder has no parameter {name}")))?;
        let dst = cnn.params().by_name(&name).expect("name taken from the store");
        ensure!(
            src.shape() == dst.shape(),
            Error::Config(format!(
                "layer {name}: autoencoder shape {:?} does not match classifier shape {:?}",
                src.shape(),
                dst.shape()
            ))
        );
        cnn.params_mut().set(&name, src.clone())?;
    }
    Ok(())
}

/// Initializes the conv layers of `cnn` from an autoencoder checkpoint.
pub fn transfer_weights<T: Real>(cae: &Checkpoint, cnn: &mut Cnn<T>) -> Result<()> {
    ensure!(
        cae.kind == ModelKind::Cae,
        Error::Config("weight transfer needs an autoencoder checkpoint".into())
    );
    transfer_params(&cae.params::<T>(""), cnn)
}

/// Rounds statistics to f32 so a reloaded model standardizes identically.
pub fn quantize_standardizer(s: Standardizer) -> Standardizer {
    let q = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect();
    Standardizer {
        mean: q(s.mean),
        std: q(s.std),
    }
}

/// A classifier trained in two cycles: the first sees zero feedback, the
/// second sees the first cycle's eval-mode outputs.
#[derive(Clone, Debug)]
pub struct TwoCycleModel<T> {
    pub cycle1: Cnn<T>,
    pub cycle2: Cnn<T>,
    /// Injected-feature statistics from the training split.
    pub standardizer: Option<Standardizer>,
}

impl<T: Real> TwoCycleModel<T> {
    pub fn spec(&self) -> &ModelSpec {
        self.cycle2.spec()
    }

    /// Standardized injected vector, or `None` for variants without one.
    pub fn prepare_injected(&self, raw: Option<&[f32]>) -> Result<Option<Vec<T>>> {
        match (&self.standardizer, raw) {
            (None, _) if self.spec().injected_dim == 0 => Ok(None),
            (Some(s), Some(row)) => Ok(Some(s.apply(row)?)),
            _ => Err(Error::Config(format!(
                "variant {} needs injected features and their statistics",
                self.spec().variant
            ))),
        }
    }

    /// Cycle-1 and cycle-2 outputs for one image.
    pub fn infer(&self, image: &Tensor<T>, raw_injected: Option<&[f32]>) -> Result<(HeadOutput<T>, HeadOutput<T>)> {
        let injected = self.prepare_injected(raw_injected)?;
        let zeros = vec![T::zero(); self.spec().feedback_dim];
        let first = self.cycle1.infer(image, &zeros, injected.as_deref())?;
        let second = self.cycle2.infer(image, &first.to_feedback(), injected.as_deref())?;
        Ok((first, second))
    }

    pub fn predict(&self, image: &Tensor<T>, raw_injected: Option<&[f32]>) -> Result<PredictionVector> {
        PredictionVector::from_head(&self.infer(image, raw_injected)?.1)
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Checkpoint {
        let mut ck = Checkpoint::new(ModelKind::Cnn, self.spec().clone(), meta);
        ck.add_params("", self.cycle2.params());
        ck.add_params(CYCLE1_PREFIX, self.cycle1.params());
        if let Some(s) = &self.standardizer {
            let f = |v: &[f64]| Tensor::vector(v.iter().map(|&x| x as f32).collect());
            ck.add_tensor(STATS_MEAN, f(&s.mean));
            ck.add_tensor(STATS_STD, f(&s.std));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ensure!(
            ck.kind == ModelKind::Cnn,
            Error::Data("expected a classifier checkpoint".into())
        );
        let cycle2 = Cnn::from_params(&ck.spec, ck.params(""))?;
        let cycle1 = Cnn::from_params(&ck.spec, ck.params(CYCLE1_PREFIX))?;
        let standardizer = match (ck.tensor(STATS_MEAN), ck.tensor(STATS_STD)) {
            (Some(m), Some(s)) => Some(Standardizer {
                mean: m.data().iter().map(|&v| v as f64).collect(),
                std: s.data().iter().map(|&v| v as f64).collect(),
            }),
            (None, None) => None,
            _ => return Err(Error::Data("checkpoint has partial feature statistics".into())),
        };
        ensure!(
            standardizer.as_ref().map_or(0, |s| s.dim()) == ck.spec.injected_dim,
            Error::Data(format!(
                "checkpoint feature statistics do not match injected_dim {}",
                ck.spec.injected_dim
            ))
        );
        Ok(TwoCycleModel {
            cycle1,
            cycle2,
            standardizer,
        })
    }
}
