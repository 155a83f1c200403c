//! Optimizer, learning-rate schedule, dataset splitting, autoencoder
//! pretraining and two-cycle supervised training.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::features::{FeatureMatrix, Standardizer};
use crate::data::labels::LabelVector;
use crate::data::manifest::DatasetManifest;
use crate::data::image::load_image;
use crate::error::{ensure, Error, Result};
use crate::losses::{bce_logit_grad, bce_multilabel, ce_logit_grad, ce_singlelabel, combined_loss, wmse, WeightMatrixSpec};
use crate::model::{
    quantize_standardizer, transfer_params, Cae, Cnn, HeadGrad, HeadOutput, Mode, ModelSpec, ParamStore, PredictionVector,
    TwoCycleModel, Variant,
};
use crate::parallel::{batch_gradients, Executor};
use crate::seed::{derive_seed, rng_for, stream};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub default: f64,
    pub w: f64,
    pub wf: f64,
    pub wfm: f64,
    pub cae: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            default: 0.0005,
            w: 0.0005,
            wf: 0.0001,
            wfm: 0.0001,
            cae: 2e-6,
        }
    }
}

impl LearningRates {
    pub fn for_variant(&self, v: Variant) -> f64 {
        match v {
            Variant::Default => self.default,
            Variant::W => self.w,
            Variant::Wf => self.wf,
            Variant::Wfm => self.wfm,
        }
    }
}

/// Step decay `rate = base * factor^floor(epoch / every)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub every: usize,
    /// Variants the decay applies to.
    pub variants: Vec<Variant>,
}

impl Default for LrDecay {
    fn default() -> Self {
        LrDecay {
            factor: 0.1,
            every: 50,
            variants: vec![Variant::Wfm],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Fraction of images held out for testing in each round.
    pub split_fraction: f64,
    pub rounds: usize,
    pub cae_epochs: usize,
    /// Epochs in each of the two supervised cycles.
    pub cycle_epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub learning_rates: LearningRates,
    pub lr_decay: LrDecay,
    /// Center weight of the reconstruction loss.
    pub w: f64,
    /// Side of the center-weighted window, in pixels.
    pub c: usize,
    /// Share of the attribute branch in the multi-task loss.
    pub m: f64,
    /// Side of the center crop fed to every network.
    pub crop: usize,
    /// Divides every filter count and hidden width.
    pub width_divisor: usize,
    /// Initialize conv layers from an autoencoder.
    pub pretrain_cae: bool,
    pub precision: Precision,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            split_fraction: 400.0 / 2078.0,
            rounds: 5,
            cae_epochs: 30,
            cycle_epochs: 50,
            batch_size: 32,
            momentum: 0.975,
            learning_rates: LearningRates::default(),
            lr_decay: LrDecay::default(),
            w: 5.0,
            c: 20,
            m: 0.6,
            crop: 32,
            width_divisor: 1,
            pretrain_cae: true,
            precision: Precision::F32,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let r = &self.learning_rates;
        if [r.default, r.w, r.wf, r.wfm, r.cae].iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return bad("learning rates must be positive".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction {} outside (0, 1)", self.split_fraction));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.rounds == 0 || self.batch_size == 0 || self.width_divisor == 0 {
            return bad("rounds, batch_size and width_divisor must be positive".into());
        }
        if !(self.lr_decay.factor > 0.0 && self.lr_decay.factor <= 1.0) || self.lr_decay.every == 0 {
            return bad("lr_decay needs factor in (0, 1] and every > 0".into());
        }
        combined_loss(0.0, 0.0, self.m)?;
        WeightMatrixSpec::new(self.crop, self.c, self.w)?;
        Ok(())
    }

    /// Learning rate of `variant` at global epoch `epoch` (counted across
    /// both cycles).
    pub fn learning_rate(&self, variant: Variant, epoch: usize) -> f64 {
        let decay = self.lr_decay.variants.contains(&variant).then_some(&self.lr_decay);
        lr_schedule(epoch, self.learning_rates.for_variant(variant), decay)
    }

    /// Architecture used for `variant` under this config.
    pub fn model_spec(&self, variant: Variant, injected_dim: usize) -> ModelSpec {
        let mut spec = ModelSpec::full(variant, injected_dim).with_width_divisor(self.width_divisor);
        spec.input_shape = [3, self.crop, self.crop];
        spec
    }

    /// Reconstruction loss weights: center-weighted variants use `w`/`c`,
    /// the default variant plain squared error.
    pub fn wmse_spec(&self, variant: Variant) -> Result<WeightMatrixSpec> {
        if variant.center_weighted() {
            WeightMatrixSpec::new(self.crop, self.c, self.w)
        } else {
            Ok(WeightMatrixSpec::uniform(self.crop))
        }
    }
}

pub fn lr_schedule(epoch: usize, base: f64, decay: Option<&LrDecay>) -> f64 {
    match decay {
        Some(d) => base * d.factor.powi((epoch / d.every) as i32),
        None => base,
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Tensor<T>>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, learning_rate: f64, momentum: f64) -> Result<Self> {
        ensure!(
            learning_rate > 0.0 && (0.0..1.0).contains(&momentum),
            Error::Config(format!("invalid optimizer settings lr={learning_rate} momentum={momentum}"))
        );
        Ok(OptimizerState {
            velocity: params.zeros_like(),
            learning_rate,
            momentum,
        })
    }
}

/// Classical momentum: `v <- mu v - lr g; p <- p + v`.
pub fn sgd_momentum_step<T: Real>(params: &mut ParamStore<T>, grads: &[Tensor<T>], state: &mut OptimizerState<T>) -> Result<()> {
    ensure!(
        grads.len() == params.len() && state.velocity.len() == params.len(),
        Error::Config("optimizer buffers do not match parameters".into())
    );
    for (i, g) in grads.iter().enumerate() {
        ensure!(
            g.shape() == params.get(i).shape(),
            Error::shape("sgd", format!("gradient for {} has shape {:?}", params.names()[i], g.shape()))
        );
        if !g.all_finite() {
            return Err(Error::Numerical(format!("non-finite gradient for {}", params.names()[i])));
        }
    }
    let mu = T::of(state.momentum);
    let lr = T::of(state.learning_rate);
    for ((p, v), g) in params.tensors_mut().iter_mut().zip(&mut state.velocity).zip(grads) {
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

/// Deterministic train/test split for one round. The last
/// `ceil(fraction * n)` positions of a seeded permutation form the test set.
pub fn split_dataset(n: usize, seed: u64, fraction: f64, round: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    ensure!(n >= 2, Error::Data(format!("cannot split {n} images")));
    ensure!(
        fraction > 0.0 && fraction < 1.0,
        Error::Config(format!("split fraction {fraction} outside (0, 1)"))
    );
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, &[stream::SPLIT, round as u64]));
    // the tolerance keeps 400/2078 * 2078 from rounding up to 401
    let n_test = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let test = perm.split_off(n - n_test);
    Ok((perm, test))
}

/// Images (center-cropped), labels and optional raw injected features.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<LabelVector>,
    pub features: Option<FeatureMatrix>,
}

impl<T: Real> Dataset<T> {
    pub fn load(manifest: &DatasetManifest, crop: usize, features: Option<FeatureMatrix>) -> Result<Self> {
        ensure!(!manifest.is_empty(), Error::Data("manifest has no records".into()));
        if let Some(f) = &features {
            ensure!(
                f.count() == manifest.len(),
                Error::Data(format!(
                    "feature file has {} rows but the manifest has {}",
                    f.count(),
                    manifest.len()
                ))
            );
        }
        let images = (0..manifest.len())
            .map(|i| load_image::<T>(&manifest.image_path(i))?.center_crop(crop))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            images,
            labels: manifest.records.iter().map(|r| r.labels).collect(),
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn raw_features(&self, i: usize) -> Option<&[f32]> {
        self.features.as_ref().map(|f| f.row(i))
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Global epoch, counted across cycles.
    pub epoch: usize,
    /// 0 for autoencoder pretraining, then 1 and 2.
    pub cycle: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch\tcycle\tlr\ttrain_loss\tval_loss";

    pub fn to_line(&self) -> String {
        let val = self.val_loss.map(|v| format!("{v:.9e}")).unwrap_or_default();
        format!("{}\t{}\t{:e}\t{:.9e}\t{}", self.epoch, self.cycle, self.lr, self.train_loss, val)
    }
}

/// Callback receiving each epoch's record as soon as it is complete.
pub type EpochSink<'a> = &'a mut dyn FnMut(&EpochRecord) -> Result<()>;

fn minibatches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size)
}

fn epoch_order(train: &[usize], seed: u64, round: usize, cycle: u32, epoch: usize) -> Vec<usize> {
    let mut order = train.to_vec();
    order.shuffle(&mut rng_for(seed, &[stream::SHUFFLE, round as u64, cycle as u64, epoch as u64]));
    order
}

fn apply_batch<T: Real>(
    params: &mut ParamStore<T>,
    mut grads: Vec<Tensor<T>>,
    batch_len: usize,
    opt: &mut OptimizerState<T>,
    context: impl Fn() -> String,
) -> Result<()> {
    let inv = T::of(1.0 / batch_len as f64);
    grads.iter_mut().for_each(|g| g.scale(inv));
    sgd_momentum_step(params, &grads, opt).map_err(|e| match e {
        Error::Numerical(m) => Error::Numerical(format!("{} ({m})", context())),
        other => other,
    })
}

/// Reconstruction loss of one image, adding its gradients into `grads`.
pub fn cae_sample<T: Real>(cae: &Cae<T>, x: &Tensor<T>, wspec: &WeightMatrixSpec, grads: &mut [Tensor<T>]) -> Result<f64> {
    let (r, tape) = cae.forward(x)?;
    let lg = wmse(x, &r, wspec)?;
    cae.backward(&tape, lg.grad, grads, false)?;
    Ok(lg.loss.as_f64())
}

/// Minimizes the weighted reconstruction loss over `indices`.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_cae<T: Real>(
    mut cae: Cae<T>,
    images: &[Tensor<T>],
    indices: &[usize],
    wspec: &WeightMatrixSpec,
    cfg: &ExperimentConfig,
    round: usize,
    exec: &Executor,
    sink: EpochSink,
) -> Result<Cae<T>> {
    ensure!(!indices.is_empty(), Error::Data("no images to pretrain on".into()));
    let lr = cfg.learning_rates.cae;
    let mut opt = OptimizerState::new(cae.params(), lr, cfg.momentum)?;
    for epoch in 0..cfg.cae_epochs {
        let order = epoch_order(indices, cfg.seed, round, 0, epoch);
        let mut total = 0.0;
        for (b, batch) in minibatches(&order, cfg.batch_size).enumerate() {
            let bg = batch_gradients(
                exec,
                batch,
                || cae.params().zeros_like(),
                |i, g| cae_sample(&cae, &images[i], wspec, g),
            )?;
            total += bg.loss;
            apply_batch(cae.params_mut(), bg.grads, batch.len(), &mut opt, || {
                format!("autoencoder epoch {epoch} batch {b}")
            })?;
        }
        let train_loss = total / order.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numerical(format!("autoencoder loss diverged at epoch {epoch}")));
        }
        sink(&EpochRecord {
            epoch,
            cycle: 0,
            lr,
            train_loss,
            val_loss: None,
        })?;
    }
    Ok(cae)
}

/// Supervised loss of one image, adding its gradients into `grads`. Flat
/// heads use summed binary cross-entropy over the 15 labels; split heads
/// mix attribute cross-entropy and shape log-likelihood with weight `m`.
#[allow(clippy::too_many_arguments)]
pub fn cnn_sample<T: Real>(
    net: &Cnn<T>,
    image: &Tensor<T>,
    feedback: &[T],
    injected: Option<&[T]>,
    label: &LabelVector,
    mode: Mode,
    m: f64,
    grads: &mut [Tensor<T>],
) -> Result<f64> {
    let (out, tape) = net.forward(image, feedback, injected, mode)?;
    let (loss, grad) = match &out {
        HeadOutput::Flat(p) => {
            let y: Vec<T> = label.flat_targets().iter().map(|&v| T::of(v)).collect();
            ensure!(
                p.len() == y.len(),
                Error::Config(format!(
                    "flat head has {} outputs but the label set has {}",
                    p.len(),
                    y.len()
                ))
            );
            let l = bce_multilabel(p, &y)?.loss.as_f64();
            (l, HeadGrad::Flat(bce_logit_grad(p, &y)))
        }
        HeadOutput::Split { attr, shape } => {
            let y: Vec<T> = label.attribute_targets().iter().map(|&v| T::of(v)).collect();
            ensure!(
                attr.len() == y.len(),
                Error::Config(format!("attribute head has {} outputs, expected {}", attr.len(), y.len()))
            );
            let target = label.shape.index();
            let mt = combined_loss(
                bce_multilabel(attr, &y)?.loss.as_f64(),
                ce_singlelabel(shape, target)?.loss.as_f64(),
                m,
            )?;
            let (sa, ss) = (T::of(mt.attr_scale()), T::of(mt.shape_scale()));
            (
                mt.total,
                HeadGrad::Split {
                    attr: bce_logit_grad(attr, &y).into_iter().map(|g| g * sa).collect(),
                    shape: ce_logit_grad(shape, target).into_iter().map(|g| g * ss).collect(),
                },
            )
        }
    };
    net.backward(&tape, &grad, grads, false)?;
    Ok(loss)
}

/// Standardized injected vectors for every image, or `None` for variants
/// without injection.
pub fn standardized_features<T: Real>(
    standardizer: Option<&Standardizer>,
    data: &Dataset<T>,
) -> Result<Option<Vec<Vec<T>>>> {
    match standardizer {
        None => Ok(None),
        Some(s) => (0..data.len())
            .map(|i| {
                let row = data
                    .raw_features(i)
                    .ok_or_else(|| Error::Config("injected features requested without a feature file".into()))?;
                s.apply(row)
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
    }
}

struct CycleInputs<'a, T> {
    data: &'a Dataset<T>,
    injected: Option<&'a [Vec<T>]>,
    /// Per-image feedback indexed by dataset position; `None` means zeros.
    feedback: Option<&'a [Vec<T>]>,
}

#[allow(clippy::too_many_arguments)]
fn train_cycle<T: Real>(
    net: &mut Cnn<T>,
    inputs: &CycleInputs<T>,
    train: &[usize],
    cycle: u32,
    cfg: &ExperimentConfig,
    round: usize,
    exec: &Executor,
    sink: EpochSink,
) -> Result<f64> {
    let variant = net.spec().variant;
    let zeros = vec![T::zero(); net.spec().feedback_dim];
    let mut opt = OptimizerState::new(net.params(), cfg.learning_rates.for_variant(variant), cfg.momentum)?;
    let mut last = f64::NAN;
    for e in 0..cfg.cycle_epochs {
        let epoch = (cycle as usize - 1) * cfg.cycle_epochs + e;
        opt.learning_rate = cfg.learning_rate(variant, epoch);
        let order = epoch_order(train, cfg.seed, round, cycle, e);
        let mut total = 0.0;
        for (b, batch) in minibatches(&order, cfg.batch_size).enumerate() {
            let net_ref = &*net;
            let bg = batch_gradients(
                exec,
                batch,
                || net_ref.params().zeros_like(),
                |i, g| {
                    let dropout_seed = derive_seed(
                        cfg.seed,
                        &[stream::DROPOUT, round as u64, cycle as u64, e as u64, i as u64],
                    );
                    cnn_sample(
                        net_ref,
                        &inputs.data.images[i],
                        inputs.feedback.map_or(&zeros[..], |f| &f[i][..]),
                        inputs.injected.map(|v| &v[i][..]),
                        &inputs.data.labels[i],
                        Mode::Train { dropout_seed },
                        cfg.m,
                        g,
                    )
                },
            )?;
            total += bg.loss;
            apply_batch(net.params_mut(), bg.grads, batch.len(), &mut opt, || {
                format!("cycle {cycle} epoch {epoch} batch {b}")
            })?;
        }
        last = total / order.len() as f64;
        if !last.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged in cycle {cycle} epoch {epoch}")));
        }
        sink(&EpochRecord {
            epoch,
            cycle,
            lr: opt.learning_rate,
            train_loss: last,
            val_loss: None,
        })?;
    }
    Ok(last)
}

/// Eval-mode cycle-1 outputs for every index in `indices`, laid out by
/// dataset position (other positions stay empty).
fn frozen_feedback<T: Real>(
    net: &Cnn<T>,
    data: &Dataset<T>,
    injected: Option<&[Vec<T>]>,
    indices: &[usize],
    exec: &Executor,
) -> Result<Vec<Vec<T>>> {
    let zeros = vec![T::zero(); net.spec().feedback_dim];
    let outs = exec.map(indices.len(), |k| {
        let i = indices[k];
        net.infer(&data.images[i], &zeros, injected.map(|v| &v[i][..]))
            .map(|o| o.to_feedback())
    });
    let mut feedback = vec![Vec::new(); data.len()];
    for (&i, o) in indices.iter().zip(outs) {
        feedback[i] = o?;
    }
    Ok(feedback)
}

/// Final training losses of both cycles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleLosses {
    pub cycle1: f64,
    pub cycle2: f64,
}

/// Trains `cnn` in two cycles on `train` and returns the resulting model.
/// Cycle 1 sees zero feedback; cycle 2 continues from the cycle-1 weights
/// with feedback frozen to cycle-1 eval-mode outputs.
#[allow(clippy::too_many_arguments)]
pub fn train_two_cycle<T: Real>(
    cnn: Cnn<T>,
    data: &Dataset<T>,
    standardizer: Option<Standardizer>,
    train: &[usize],
    cfg: &ExperimentConfig,
    round: usize,
    exec: &Executor,
    sink: EpochSink,
) -> Result<(TwoCycleModel<T>, CycleLosses)> {
    ensure!(!train.is_empty(), Error::Data("empty training split".into()));
    let spec = cnn.spec().clone();
    ensure!(
        spec.feedback_dim == spec.output_arity(),
        Error::Config(format!(
            "feedback_dim {} must equal the output arity {}",
            spec.feedback_dim,
            spec.output_arity()
        ))
    );
    let standardizer = standardizer.map(quantize_standardizer);
    ensure!(
        standardizer.as_ref().map_or(0, |s| s.dim()) == spec.injected_dim,
        Error::Config(format!(
            "injected features have dimension {} but the model expects {}",
            standardizer.as_ref().map_or(0, |s| s.dim()),
            spec.injected_dim
        ))
    );
    let injected = standardized_features(standardizer.as_ref(), data)?;
    let mut net = cnn;
    let inputs = CycleInputs {
        data,
        injected: injected.as_deref(),
        feedback: None,
    };
    let l1 = train_cycle(&mut net, &inputs, train, 1, cfg, round, exec, sink)?;
    let cycle1 = net.clone();
    let feedback = frozen_feedback(&cycle1, data, injected.as_deref(), train, exec)?;
    let inputs = CycleInputs {
        feedback: Some(&feedback),
        ..inputs
    };
    let l2 = train_cycle(&mut net, &inputs, train, 2, cfg, round, exec, sink)?;
    Ok((
        TwoCycleModel {
            cycle1,
            cycle2: net,
            standardizer,
        },
        CycleLosses { cycle1: l1, cycle2: l2 },
    ))
}

/// Builds, optionally initializes from an autoencoder, and trains one
/// variant for one round.
#[allow(clippy::too_many_arguments)]
pub fn train_variant_round<T: Real>(
    variant: Variant,
    data: &Dataset<T>,
    train: &[usize],
    cae: Option<&ParamStore<T>>,
    cfg: &ExperimentConfig,
    round: usize,
    exec: &Executor,
    sink: EpochSink,
) -> Result<(TwoCycleModel<T>, CycleLosses)> {
    let (injected_dim, standardizer) = if variant.injects_features() {
        let f = data
            .features
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {variant} needs a feature file")))?;
        (f.dim, Some(Standardizer::fit(f, train)?))
    } else {
        (0, None)
    };
    let spec = cfg.model_spec(variant, injected_dim);
    let mut cnn = Cnn::build(&spec, derive_seed(cfg.seed, &[stream::CNN_INIT, round as u64]))?;
    if let Some(p) = cae {
        transfer_params(p, &mut cnn)?;
    }
    train_two_cycle(cnn, data, standardizer, train, cfg, round, exec, sink)
}

/// Builds and pretrains the autoencoder for one round.
pub fn pretrain_round<T: Real>(
    variant: Variant,
    data: &Dataset<T>,
    train: &[usize],
    cfg: &ExperimentConfig,
    round: usize,
    exec: &Executor,
    sink: EpochSink,
) -> Result<Cae<T>> {
    // Only the conv stack matters; pick a variant that needs no features.
    let arch = if variant.center_weighted() { Variant::W } else { Variant::Default };
    let spec = cfg.model_spec(arch, 0);
    let mut cae = Cae::build(&spec, derive_seed(cfg.seed, &[stream::CAE_INIT, round as u64]))?;
    cae.params_mut()
        .set(Cae::<T>::OUTPUT_BIAS, channel_means(&data.images, train)?)?;
    let k = cae.params().by_name(Cae::<T>::OUTPUT_KERNEL).expect("output kernel").shape().to_vec();
    cae.params_mut().set(Cae::<T>::OUTPUT_KERNEL, Tensor::zeros(&k))?;
    pretrain_cae(cae, &data.images, train, &cfg.wmse_spec(variant)?, cfg, round, exec, sink)
}

/// Per-channel mean intensity over the given `[C, H, W]` images.
pub fn channel_means<T: Real>(images: &[Tensor<T>], indices: &[usize]) -> Result<Tensor<T>> {
    ensure!(!indices.is_empty(), Error::Data("no images to average".into()));
    let (c, h, w) = images[indices[0]].chw("channel_means")?;
    let mut sums = vec![0.0f64; c];
    for &i in indices {
        for (s, plane) in sums.iter_mut().zip(images[i].data().chunks_exact(h * w)) {
            *s += plane.iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    let n = (indices.len() * h * w) as f64;
    Ok(Tensor::vector(sums.into_iter().map(|s| T::of(s / n)).collect()))
}

/// Predictions of a two-cycle model on the given images.
pub fn predict_indices<T: Real>(
    model: &TwoCycleModel<T>,
    data: &Dataset<T>,
    indices: &[usize],
    exec: &Executor,
) -> Result<Vec<PredictionVector>> {
    exec.map(indices.len(), |k| {
        let i = indices[k];
        model.predict(&data.images[i], data.raw_features(i))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_unrolls() {
        let mut p = ParamStore::default();
        p.push("x", Tensor::vector(vec![1.0f64]));
        let g = vec![Tensor::vector(vec![2.0])];
        let mut st = OptimizerState::new(&p, 0.1, 0.5).unwrap();
        sgd_momentum_step(&mut p, &g, &mut st).unwrap();
        assert!((p.get(0).data()[0] - (1.0 - 0.2)).abs() < 1e-15);
        sgd_momentum_step(&mut p, &g, &mut st).unwrap();
        // total update -lr g (2 + mu)
        assert!((p.get(0).data()[0] - (1.0 - 0.1 * 2.0 * 2.5)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_numerical() {
        let mut p = ParamStore::default();
        p.push("x", Tensor::vector(vec![1.0f32]));
        let mut st = OptimizerState::new(&p, 0.1, 0.9).unwrap();
        let err = sgd_momentum_step(&mut p, &[Tensor::vector(vec![f32::NAN])], &mut st).unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Numerical);
    }

    #[test]
    fn schedule_steps() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.learning_rate(Variant::Wfm, 0), 0.0001);
        assert!((cfg.learning_rate(Variant::Wfm, 50) - 0.00001).abs() < 1e-18);
        assert!((cfg.learning_rate(Variant::Wfm, 120) - 0.000001).abs() < 1e-18);
        assert_eq!(cfg.learning_rate(Variant::Default, 120), 0.0005);
    }

    #[test]
    fn reference_split_sizes() {
        let (train, test) = split_dataset(2078, 3, 400.0 / 2078.0, 0).unwrap();
        assert_eq!((train.len(), test.len()), (1678, 400));
        assert!(split_dataset(1, 3, 0.5, 0).is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"sed": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sed"));
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(cfg.momentum, 0.975);
    }
}
