use serde::{Deserialize, Serialize};

use crate::data::labels::{N_ATTRIBUTES, N_CLASSES, N_SHAPES, NO_NUCLEUS_ATTR};
use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

use super::cnn::{Cnn, HeadOutput};
use super::spec::{FLAT_LABELS, SPLIT_ATTRS, SPLIT_SHAPES};

/// Per-image scores over the label universe: ten attribute probabilities
/// and six shape scores (Oval .. Irregular, No Nucleus).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub attributes: Vec<f64>,
    pub shapes: Vec<f64>,
}

impl PredictionVector {
    /// Maps a head output onto the label universe. Flat outputs hold the 15
    /// distinct labels; their shape block reuses the shared "no nucleus"
    /// sigmoid.
    pub fn from_head<T: Real>(out: &HeadOutput<T>) -> Result<Self> {
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        match out {
            HeadOutput::Flat(p) => {
                ensure!(
                    p.len() == FLAT_LABELS,
                    Error::Config(format!(
                        "flat head has {} outputs; the label universe needs {FLAT_LABELS}",
                        p.len()
                    ))
                );
                let p = f(p);
                let mut shapes = p[N_ATTRIBUTES..].to_vec();
                shapes.push(p[NO_NUCLEUS_ATTR]);
                Ok(PredictionVector {
                    attributes: p[..N_ATTRIBUTES].to_vec(),
                    shapes,
                })
            }
            HeadOutput::Split { attr, shape } => {
                ensure!(
                    attr.len() == SPLIT_ATTRS && shape.len() == SPLIT_SHAPES,
                    Error::Config(format!(
                        "split heads have {}+{} outputs; expected {SPLIT_ATTRS}+{SPLIT_SHAPES}",
                        attr.len(),
                        shape.len()
                    ))
                );
                Ok(PredictionVector {
                    attributes: f(attr),
                    shapes: f(shape),
                })
            }
        }
    }

    /// Scores for the 15 distinct classes in report order.
    pub fn class_scores(&self) -> [f64; N_CLASSES] {
        let mut out = [0.0; N_CLASSES];
        out[..N_ATTRIBUTES].copy_from_slice(&self.attributes);
        out[N_ATTRIBUTES..].copy_from_slice(&self.shapes[..N_SHAPES - 1]);
        out
    }

    /// Index of the highest shape score; ties go to the lowest index.
    pub fn predicted_shape(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.shapes.iter().enumerate() {
            if s > self.shapes[best] {
                best = i;
            }
        }
        best
    }
}

/// Eval-mode prediction for one image.
pub fn predict<T: Real>(
    net: &Cnn<T>,
    image: &Tensor<T>,
    injected: Option<&[T]>,
    feedback: &[T],
) -> Result<PredictionVector> {
    PredictionVector::from_head(&net.infer(image, feedback, injected)?)
}

/// Attribute scores from the flat multi-label model, shape scores from the
/// split-head model.
pub fn combine_predictions(wf_out: &PredictionVector, wfm_out: &PredictionVector) -> Result<PredictionVector> {
    ensure!(
        wf_out.attributes.len() == wfm_out.attributes.len()
            && wf_out.shapes.len() == wfm_out.shapes.len(),
        Error::Data(format!(
            "label universes differ: {}+{} vs {}+{}",
            wf_out.attributes.len(),
            wf_out.shapes.len(),
            wfm_out.attributes.len(),
            wfm_out.shapes.len()
        ))
    );
    Ok(PredictionVector {
        attributes: wf_out.attributes.clone(),
        shapes: wfm_out.shapes.clone(),
    })
}
