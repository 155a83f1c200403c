//! The standard battery of gradient checks: every layer, every loss, every
//! classifier variant and the autoencoder at compact sizes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::labels::{LabelVector, ShapeClass, N_ATTRIBUTES};
use crate::error::Result;
use crate::layers::activation::{relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward};
use crate::layers::concat::{concat, split};
use crate::layers::dropout::{dropout, dropout_backward};
use crate::layers::pool::{maxpool2_backward, upsample2_backward};
use crate::layers::{maxpool2, upsample2, Conv2d, Dense};
use crate::losses::{
    bce_logit_grad, bce_multilabel, ce_logit_grad, ce_singlelabel, combined_loss, wmse, WeightMatrixSpec,
};
use crate::model::{Cae, Cnn, HeadGrad, HeadOutput, Mode, ModelSpec, Variant};
use crate::seed::rng_for;
use crate::tensor::Tensor;

use super::{finite_diff_check, FnObjective, GradCheckReport, Objective, DEFAULT_EPSILON};

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(obj: &mut dyn Objective) -> Result<GradCheckReport> {
    finite_diff_check(obj, DEFAULT_EPSILON)
}

/// Moves a freshly built network to a generic point: zero-initialized
/// biases put units fed only by padding or dead inputs exactly on the ReLU
/// kink, where central differences are one-sided. The gain lifts gradients
/// of early layers in the narrow compact stack above roundoff.
fn generic_point(params: &mut crate::model::ParamStore<f64>, gain: f64, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().to_vec();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(0.02..0.2));
        } else {
            t.scale(gain);
        }
    }
}

/// Loss `<f(x), r>` for a random projection `r`, so every output element
/// contributes with a distinct weight.
fn projected<F, B>(vars: Vec<(&str, Tensor<f64>)>, proj: Vec<f64>, forward: F, backward: B) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Vec<f64>>,
    B: Fn(&[Tensor<f64>], &[f64]) -> Result<Vec<Tensor<f64>>>,
{
    let p1 = proj.clone();
    let mut obj = FnObjective::new(
        vars,
        |v| Ok(Tensor::scalar(dot(&forward(v)?, &p1))),
        |v| backward(v, &proj),
    );
    check(&mut obj)
}

fn conv_check(rng: &mut ChaCha8Rng, padding: usize) -> Result<GradCheckReport> {
    let layer = Conv2d {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        padding,
    };
    let (oh, ow) = layer.output_hw(5, 5)?;
    let proj = random(rng, &[3 * oh * ow], 1.0).into_data();
    projected(
        vec![
            ("input", random(rng, &[2, 5, 5], 1.0)),
            ("kernel", random(rng, &layer.kernel_shape(), 0.5)),
            ("bias", random(rng, &[3], 0.5)),
        ],
        proj,
        |v| Ok(layer.forward(&v[0], &v[1], &v[2])?.0.into_data()),
        |v, r| {
            let (out, cache) = layer.forward(&v[0], &v[1], &v[2])?;
            let g = Tensor::new(out.shape(), r.to_vec())?;
            let mut gk = Tensor::zeros(v[1].shape());
            let mut gb = Tensor::zeros(v[2].shape());
            let gx = layer.backward(&cache, &v[1], &g, &mut gk, &mut gb, true)?.expect("requested");
            Ok(vec![gx, gk, gb])
        },
    )
}

fn layer_checks(rng: &mut ChaCha8Rng) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    out.push(("layer/conv2d".to_string(), conv_check(rng, 0)?));
    out.push(("layer/conv2d_padded".to_string(), conv_check(rng, 2)?));

    // Well-separated values keep every 2x2 argmax stable under +-epsilon.
    let mut order: Vec<usize> = (0..50).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], rng);
    let pool_in = Tensor::new(&[2, 5, 5], order.iter().map(|&k| k as f64 * 0.1).collect())?;
    let proj = random(rng, &[2 * 2 * 2], 1.0).into_data();
    out.push((
        "layer/maxpool2".to_string(),
        projected(
            vec![("input", pool_in)],
            proj,
            |v| Ok(maxpool2(&v[0])?.0.into_data()),
            |v, r| {
                let (o, cache) = maxpool2(&v[0])?;
                Ok(vec![maxpool2_backward(&cache, &Tensor::new(o.shape(), r.to_vec())?)?])
            },
        )?,
    ));

    let proj = random(rng, &[2 * 7 * 7], 1.0).into_data();
    out.push((
        "layer/upsample2".to_string(),
        projected(
            vec![("input", random(rng, &[2, 3, 3], 1.0))],
            proj,
            |v| Ok(upsample2(&v[0], 7, 7)?.into_data()),
            |_, r| Ok(vec![upsample2_backward(&Tensor::new(&[2, 7, 7], r.to_vec())?, 3, 3)?]),
        )?,
    ));

    let dense = Dense::new(5, 3);
    let proj = random(rng, &[3], 1.0).into_data();
    out.push((
        "layer/dense".to_string(),
        projected(
            vec![
                ("input", random(rng, &[5], 1.0)),
                ("weight", random(rng, &[3, 5], 1.0)),
                ("bias", random(rng, &[3], 1.0)),
            ],
            proj,
            |v| dense.forward(v[0].data(), &v[1], &v[2]),
            |v, r| {
                let mut gw = Tensor::zeros(&[3, 5]);
                let mut gb = Tensor::zeros(&[3]);
                let gx = dense.backward(v[0].data(), &v[1], r, &mut gw, &mut gb);
                Ok(vec![Tensor::vector(gx), gw, gb])
            },
        )?,
    ));

    // Inputs kept away from the kink at zero.
    let relu_in = Tensor::from_fn(&[12], |i| {
        let m = 0.1 + rng.random_range(0.0..1.0);
        if i % 2 == 0 {
            m
        } else {
            -m
        }
    });
    let proj = random(rng, &[12], 1.0).into_data();
    out.push((
        "layer/relu".to_string(),
        projected(
            vec![("input", relu_in)],
            proj,
            |v| Ok(relu(v[0].data())),
            |v, r| {
                let y = relu(v[0].data());
                let mut g = r.to_vec();
                relu_backward(&y, &mut g);
                Ok(vec![Tensor::vector(g)])
            },
        )?,
    ));

    let proj = random(rng, &[7], 1.0).into_data();
    out.push((
        "layer/sigmoid".to_string(),
        projected(
            vec![("input", random(rng, &[7], 3.0))],
            proj,
            |v| Ok(sigmoid(v[0].data())),
            |v, r| Ok(vec![Tensor::vector(sigmoid_backward(&sigmoid(v[0].data()), r))]),
        )?,
    ));

    let proj = random(rng, &[6], 1.0).into_data();
    out.push((
        "layer/softmax".to_string(),
        projected(
            vec![("input", random(rng, &[6], 2.0))],
            proj,
            |v| Ok(softmax(v[0].data())),
            |v, r| Ok(vec![Tensor::vector(softmax_backward(&softmax(v[0].data()), r))]),
        )?,
    ));

    let proj = random(rng, &[3 * 4 * 4], 1.0).into_data();
    out.push((
        "layer/dropout".to_string(),
        projected(
            vec![("input", random(rng, &[3, 4, 4], 1.0))],
            proj,
            |v| Ok(dropout(&v[0], 0.3, 17, true)?.0.into_data()),
            |v, r| {
                let (_, mask) = dropout(&v[0], 0.3, 17, true)?;
                let mut g = r.to_vec();
                dropout_backward(mask.as_deref(), &mut g);
                Ok(vec![Tensor::new(v[0].shape(), g)?])
            },
        )?,
    ));

    let proj = random(rng, &[9], 1.0).into_data();
    out.push((
        "layer/concat".to_string(),
        projected(
            vec![
                ("a", random(rng, &[2], 1.0)),
                ("b", random(rng, &[3], 1.0)),
                ("c", random(rng, &[4], 1.0)),
            ],
            proj,
            |v| Ok(concat(&[v[0].data(), v[1].data(), v[2].data()])),
            |_, r| Ok(split(r, &[2, 3, 4]).into_iter().map(|s| Tensor::vector(s.to_vec())).collect()),
        )?,
    ));

    // Small dense + sigmoid + binary cross-entropy network.
    let targets = vec![1.0, 0.0, 1.0];
    let mut obj = FnObjective::new(
        vec![
            ("input", random(rng, &[5], 1.0)),
            ("weight", random(rng, &[3, 5], 1.0)),
            ("bias", random(rng, &[3], 1.0)),
        ],
        |v| {
            let p = sigmoid(&dense.forward(v[0].data(), &v[1], &v[2])?);
            Ok(Tensor::scalar(bce_multilabel(&p, &targets)?.loss))
        },
        |v| {
            let p = sigmoid(&dense.forward(v[0].data(), &v[1], &v[2])?);
            let mut gw = Tensor::zeros(&[3, 5]);
            let mut gb = Tensor::zeros(&[3]);
            let gx = dense.backward(v[0].data(), &v[1], &bce_logit_grad(&p, &targets), &mut gw, &mut gb);
            Ok(vec![Tensor::vector(gx), gw, gb])
        },
    );
    out.push(("layer/dense_sigmoid_bce".to_string(), check(&mut obj)?));
    Ok(out)
}

fn loss_checks(rng: &mut ChaCha8Rng) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    let spec = WeightMatrixSpec::new(8, 4, 5.0)?;
    let mut obj = FnObjective::new(
        vec![("x", random(rng, &[3, 8, 8], 1.0)), ("r", random(rng, &[3, 8, 8], 1.0))],
        |v| Ok(Tensor::scalar(wmse(&v[0], &v[1], &spec)?.loss)),
        |v| {
            let g = wmse(&v[0], &v[1], &spec)?.grad;
            Ok(vec![g.map(|x| -x), g])
        },
    );
    out.push(("loss/wmse".to_string(), check(&mut obj)?));

    let targets = vec![1.0, 0.0, 0.0, 1.0, 1.0];
    let probs = Tensor::from_fn(&[5], |_| rng.random_range(0.05..0.95));
    let mut obj = FnObjective::new(
        vec![("probs", probs)],
        |v| Ok(Tensor::scalar(bce_multilabel(v[0].data(), &targets)?.loss)),
        |v| Ok(vec![bce_multilabel(v[0].data(), &targets)?.grad]),
    );
    out.push(("loss/bce".to_string(), check(&mut obj)?));

    let probs = Tensor::from_fn(&[6], |_| rng.random_range(0.05..0.95));
    let mut obj = FnObjective::new(
        vec![("probs", probs)],
        |v| Ok(Tensor::scalar(ce_singlelabel(v[0].data(), 2)?.loss)),
        |v| Ok(vec![ce_singlelabel(v[0].data(), 2)?.grad]),
    );
    out.push(("loss/ce".to_string(), check(&mut obj)?));

    // Merged loss through both output activations.
    let y = vec![0.0, 1.0, 1.0, 0.0];
    let target = 1;
    let m = 0.6;
    let mut obj = FnObjective::new(
        vec![("attr_logits", random(rng, &[4], 2.0)), ("shape_logits", random(rng, &[3], 2.0))],
        |v| {
            let l_ml = bce_multilabel(&sigmoid(v[0].data()), &y)?.loss;
            let l_sl = ce_singlelabel(&softmax(v[1].data()), target)?.loss;
            Ok(Tensor::scalar(combined_loss(l_ml, l_sl, m)?.total))
        },
        |v| {
            let ga = bce_logit_grad(&sigmoid(v[0].data()), &y);
            let gs = ce_logit_grad(&softmax(v[1].data()), target);
            Ok(vec![
                Tensor::vector(ga.into_iter().map(|g| g * m).collect()),
                Tensor::vector(gs.into_iter().map(|g| g * (1.0 - m)).collect()),
            ])
        },
    );
    out.push(("loss/combined".to_string(), check(&mut obj)?));
    Ok(out)
}

/// Full classifier loss with respect to every parameter and every input.
struct CnnObjective {
    net: Cnn<f64>,
    image: Tensor<f64>,
    feedback: Tensor<f64>,
    injected: Option<Tensor<f64>>,
    label: LabelVector,
    m: f64,
    dropout_seed: u64,
}

impl CnnObjective {
    fn run(&self, grads: Option<&mut Vec<Tensor<f64>>>) -> Result<f64> {
        let (out, tape) = self.net.forward(
            &self.image,
            self.feedback.data(),
            self.injected.as_ref().map(|t| t.data()),
            Mode::Train {
                dropout_seed: self.dropout_seed,
            },
        )?;
        let (loss, grad) = match &out {
            HeadOutput::Flat(p) => {
                let y: Vec<f64> = self.label.flat_targets().to_vec();
                (bce_multilabel(p, &y)?.loss, HeadGrad::Flat(bce_logit_grad(p, &y)))
            }
            HeadOutput::Split { attr, shape } => {
                let y = self.label.attribute_targets().to_vec();
                let t = self.label.shape.index();
                let mt = combined_loss(bce_multilabel(attr, &y)?.loss, ce_singlelabel(shape, t)?.loss, self.m)?;
                (
                    mt.total,
                    HeadGrad::Split {
                        attr: bce_logit_grad(attr, &y).into_iter().map(|g| g * self.m).collect(),
                        shape: ce_logit_grad(shape, t).into_iter().map(|g| g * (1.0 - self.m)).collect(),
                    },
                )
            }
        };
        if let Some(out) = grads {
            let mut pg = self.net.params().zeros_like();
            let ig = self.net.backward(&tape, &grad, &mut pg, true)?;
            out.clear();
            out.extend(pg);
            out.push(ig.image.expect("requested"));
            out.push(Tensor::vector(ig.feedback));
            if self.injected.is_some() {
                out.push(Tensor::vector(ig.injected));
            }
        }
        Ok(loss)
    }
}

impl Objective for CnnObjective {
    fn loss(&mut self) -> Result<Tensor<f64>> {
        Ok(Tensor::scalar(self.run(None)?))
    }

    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        let mut g = Vec::new();
        self.run(Some(&mut g))?;
        Ok(g)
    }

    fn variables_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        let names: Vec<String> = self.net.params().names().to_vec();
        let mut vars: Vec<(String, &mut Tensor<f64>)> =
            names.into_iter().zip(self.net.params_mut().tensors_mut().iter_mut()).collect();
        vars.push(("image".into(), &mut self.image));
        vars.push(("feedback".into(), &mut self.feedback));
        if let Some(t) = self.injected.as_mut() {
            vars.push(("injected".into(), t));
        }
        vars
    }
}

const COMPACT_INJECTED: usize = 6;

fn variant_check(variant: Variant, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let spec = ModelSpec::compact(variant, COMPACT_INJECTED);
    let mut net = Cnn::<f64>::build(&spec, rng.random())?;
    generic_point(net.params_mut(), 1.5, rng);
    let mut attributes = [false; N_ATTRIBUTES];
    attributes[0] = true;
    attributes[4] = true;
    let mut obj = CnnObjective {
        image: Tensor::from_fn(&spec.input_shape, |_| rng.random_range(0.0..1.0)),
        feedback: Tensor::from_fn(&[spec.feedback_dim], |_| rng.random_range(0.0..1.0)),
        injected: (spec.injected_dim > 0).then(|| random(rng, &[spec.injected_dim], 1.0)),
        label: LabelVector {
            attributes,
            shape: ShapeClass::Oval,
        },
        m: 0.6,
        dropout_seed: rng.random(),
        net,
    };
    check(&mut obj)
}

struct CaeObjective {
    cae: Cae<f64>,
    image: Tensor<f64>,
    spec: WeightMatrixSpec,
}

impl Objective for CaeObjective {
    fn loss(&mut self) -> Result<Tensor<f64>> {
        let r = self.cae.reconstruct(&self.image)?;
        Ok(Tensor::scalar(wmse(&self.image, &r, &self.spec)?.loss))
    }

    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        let (r, tape) = self.cae.forward(&self.image)?;
        let lg = wmse(&self.image, &r, &self.spec)?;
        let mut grads = self.cae.params().zeros_like();
        let mut gx = self
            .cae
            .backward(&tape, lg.grad.clone(), &mut grads, true)?
            .expect("requested");
        // the input also enters the loss directly as the target
        gx.add_assign(&lg.grad.map(|g| -g));
        grads.push(gx);
        Ok(grads)
    }

    fn variables_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        let names: Vec<String> = self.cae.params().names().to_vec();
        let mut vars: Vec<(String, &mut Tensor<f64>)> =
            names.into_iter().zip(self.cae.params_mut().tensors_mut().iter_mut()).collect();
        vars.push(("image".into(), &mut self.image));
        vars
    }
}

fn model_checks(rng: &mut ChaCha8Rng) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for v in Variant::ALL {
        out.push((format!("model/{}", v.name()), variant_check(v, rng)?));
    }
    let spec = ModelSpec::compact(Variant::W, 0);
    let mut cae = Cae::build(&spec, rng.random())?;
    generic_point(cae.params_mut(), 1.2, rng);
    let mut obj = CaeObjective {
        cae,
        image: Tensor::from_fn(&spec.input_shape, |_| rng.random_range(0.0..1.0)),
        spec: WeightMatrixSpec::new(8, 4, 5.0)?,
    };
    out.push(("model/cae".to_string(), check(&mut obj)?));
    Ok(out)
}

/// Which part of the battery to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Layers,
    Losses,
    Models,
}

/// Runs the selected groups; each entry is `(check name, report)`.
pub fn run_checks(groups: &[Group], seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for (k, g) in groups.iter().enumerate() {
        let mut rng = rng_for(seed, &[k as u64]);
        out.extend(match g {
            Group::Layers => layer_checks(&mut rng)?,
            Group::Losses => loss_checks(&mut rng)?,
            Group::Models => model_checks(&mut rng)?,
        });
    }
    Ok(out)
}
